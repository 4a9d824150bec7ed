//! (λ, μ)-smoothness certificates for finite mechanisms.
//!
//! A mechanism is (λ, μ)-smooth on a set of valuation profiles when, for every
//! profile `v`, there are independent randomized deviations `a*_i(v)` such
//! that for every action profile `a`
//!
//! ```text
//! Σ_i E[U_i(a*_i(v), a_{-i}; v_i)]  ≥  λ·Opt(v) − μ·R(a).
//! ```
//!
//! Everything here is checked by exhaustive enumeration of `(a, v)` with exact
//! expectations over the (finite) deviation distributions.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mechanism::{Mechanism, Odometer};

/// Absolute slack below which an inequality is considered violated.
pub const SLACK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessParams {
    pub lambda: f64,
    pub mu: f64,
}

impl SmoothnessParams {
    pub fn new(lambda: f64, mu: f64) -> Result<Self> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if !ok(lambda) || !ok(mu) {
            return Err(invalid(format!(
                "smoothness parameters must be finite and non-negative, got ({lambda}, {mu})"
            )));
        }
        Ok(Self { lambda, mu })
    }

    /// Price-of-anarchy bound `max{1, μ} / λ` (infinite when λ = 0).
    pub fn poa_bound(&self) -> f64 {
        self.mu.max(1.0) / self.lambda
    }

    /// Welfare guarantee factor `λ / max{1, μ}`.
    pub fn welfare_factor(&self) -> f64 {
        self.lambda / self.mu.max(1.0)
    }
}

/// Finite distribution over one player's action indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionDist {
    entries: Vec<(usize, f64)>,
}

impl ActionDist {
    pub fn point(action: usize) -> Self {
        Self {
            entries: vec![(action, 1.0)],
        }
    }

    /// Builds a distribution from `(action, mass)` pairs. Zero masses are
    /// dropped, repeated actions merged, and the total must be 1 ± 1e-9.
    pub fn from_masses(masses: impl IntoIterator<Item = (usize, f64)>) -> Result<Self> {
        let mut entries: Vec<(usize, f64)> = Vec::new();
        for (a, p) in masses {
            if !(p.is_finite() && p >= 0.0) {
                return Err(invalid(format!(
                    "mass {p} on action {a} is not a probability"
                )));
            }
            if p == 0.0 {
                continue;
            }
            match entries.iter_mut().find(|(b, _)| *b == a) {
                Some(e) => e.1 += p,
                None => entries.push((a, p)),
            }
        }
        entries.sort_by_key(|e| e.0);
        let total: f64 = entries.iter().map(|e| e.1).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("distribution sums to {total}, not 1")));
        }
        Ok(Self { entries })
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries.iter().copied()
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|e| e.0)
    }

    pub fn mass_of(&self, action: usize) -> f64 {
        self.entries
            .iter()
            .find(|e| e.0 == action)
            .map_or(0.0, |e| e.1)
    }

    pub fn total_mass(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    pub fn is_pure(&self) -> bool {
        self.entries.len() == 1
    }

    fn check_support(&self, grid_len: usize, player: usize) -> Result<()> {
        match self.entries.iter().find(|e| e.0 >= grid_len) {
            Some(e) => Err(invalid(format!(
                "deviation of player {player} puts mass on action {} outside its grid of {grid_len} bids",
                e.0
            ))),
            None => Ok(()),
        }
    }
}

/// A deviation `a*(v)`: for each player and full valuation profile, a
/// distribution over that player's grid.
pub trait DeviationRule: Sync {
    fn deviation(&self, mechanism: &Mechanism, player: usize, values: &[f64])
        -> Result<ActionDist>;

    fn describe(&self) -> String;
}

/// Pure deviation to the largest grid bid not above `fraction · v_i`.
#[derive(Debug, Clone, Copy)]
pub struct BidFraction {
    pub fraction: f64,
}

impl DeviationRule for BidFraction {
    fn deviation(&self, m: &Mechanism, player: usize, values: &[f64]) -> Result<ActionDist> {
        let target = self.fraction * values[player];
        Ok(ActionDist::point(m.actions().floor_index(player, target)))
    }

    fn describe(&self) -> String {
        format!("pure bid {} x value (rounded down to grid)", self.fraction)
    }
}

/// Every player bids zero.
#[derive(Debug, Clone, Copy)]
pub struct ZeroBid;

impl DeviationRule for ZeroBid {
    fn deviation(&self, _: &Mechanism, _: usize, _: &[f64]) -> Result<ActionDist> {
        Ok(ActionDist::point(0))
    }

    fn describe(&self) -> String {
        "pure bid zero".into()
    }
}

/// The randomized first-price deviation with CDF `ln(v/(v−b))` on
/// `[0, (1−1/e)v]`, discretized per player via [`fpa_log_deviation`].
#[derive(Debug, Clone, Copy)]
pub struct FpaLog;

impl DeviationRule for FpaLog {
    fn deviation(&self, m: &Mechanism, player: usize, values: &[f64]) -> Result<ActionDist> {
        fpa_log_deviation(values[player], m.actions().grid(player))
    }

    fn describe(&self) -> String {
        "randomized log deviation, CDF ln(v/(v-b)) on [0, (1-1/e)v]".into()
    }
}

/// Index of the highest-value player (lowest index among ties).
fn top_player(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// The highest-value player bids uniformly over the grid points in `[0, v)`;
/// everyone else bids zero. Discretization of the usual all-pay deviation.
#[derive(Debug, Clone, Copy)]
pub struct AllPayUniform;

impl DeviationRule for AllPayUniform {
    fn deviation(&self, m: &Mechanism, player: usize, values: &[f64]) -> Result<ActionDist> {
        let v = values[player];
        if player != top_player(values) || v <= 0.0 {
            return Ok(ActionDist::point(0));
        }
        let grid = m.actions().grid(player);
        let count = grid.partition_point(|&b| b < v - 1e-12).max(1);
        let p = 1.0 / count as f64;
        ActionDist::from_masses((0..count).map(|a| (a, p)))
    }

    fn describe(&self) -> String {
        "top-value player bids uniformly on grid points in [0, v); others bid zero".into()
    }
}

/// The highest-value player bids half its value (rounded down to the grid);
/// everyone else bids zero.
#[derive(Debug, Clone, Copy)]
pub struct TopHalf;

impl DeviationRule for TopHalf {
    fn deviation(&self, m: &Mechanism, player: usize, values: &[f64]) -> Result<ActionDist> {
        if player != top_player(values) {
            return Ok(ActionDist::point(0));
        }
        Ok(ActionDist::point(
            m.actions().floor_index(player, values[player] / 2.0),
        ))
    }

    fn describe(&self) -> String {
        "top-value player bids half its value; others bid zero".into()
    }
}

fn profile_key(values: &[f64]) -> Vec<u64> {
    values.iter().map(|v| v.to_bits()).collect()
}

/// Explicit deviation table keyed by the exact valuation profile.
#[derive(Debug, Clone, Default)]
pub struct TableRule {
    entries: HashMap<Vec<u64>, Vec<ActionDist>>,
}

impl TableRule {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, values: &[f64], per_player: Vec<ActionDist>) {
        self.entries.insert(profile_key(values), per_player);
    }

    pub fn get(&self, values: &[f64]) -> Option<&[ActionDist]> {
        self.entries.get(&profile_key(values)).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl DeviationRule for TableRule {
    fn deviation(&self, _: &Mechanism, player: usize, values: &[f64]) -> Result<ActionDist> {
        self.get(values)
            .and_then(|d| d.get(player))
            .cloned()
            .ok_or_else(|| {
                invalid(format!(
                    "deviation table has no entry for profile {values:?}"
                ))
            })
    }

    fn describe(&self) -> String {
        format!(
            "explicit deviation table over {} profiles",
            self.entries.len()
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub actions: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessReport {
    pub lambda: f64,
    pub mu: f64,
    pub holds: bool,
    /// Minimum over `(a, v)` of `LHS − λ·Opt(v) + μ·R(a)`.
    pub worst_slack: f64,
    pub witness: Option<Witness>,
    pub checked_pairs: u64,
}

/// Discretized log deviation for first-price auctions.
///
/// Bid cell `[g_j, g_{j+1})` carries mass `F(g_{j+1}) − F(g_j)` with
/// `F(b) = ln(v/(v−b))`, placed on its lower end. The top support point is the
/// largest grid bid `≤ (1−1/e)v` and absorbs the remaining tail mass.
pub fn fpa_log_deviation(value: f64, grid: &[f64]) -> Result<ActionDist> {
    if grid.is_empty() || grid[0] != 0.0 {
        return Err(invalid("bid grid must be non-empty and start at 0"));
    }
    if !(value.is_finite() && value >= 0.0) {
        return Err(invalid(format!(
            "value must be finite and non-negative, got {value}"
        )));
    }
    if value == 0.0 {
        return Ok(ActionDist::point(0));
    }
    let upper = (1.0 - (-1.0f64).exp()) * value;
    let top = grid.partition_point(|&b| b <= upper + 1e-12) - 1;
    let cdf = |b: f64| (value / (value - b)).ln();
    let mut masses: Vec<(usize, f64)> = (0..top)
        .map(|j| (j, cdf(grid[j + 1]) - cdf(grid[j])))
        .collect();
    let below: f64 = masses.iter().map(|m| m.1).sum();
    masses.push((top, 1.0 - below));
    ActionDist::from_masses(masses)
}

struct ProfileData {
    values: Vec<f64>,
    opt: f64,
    deviations: Vec<ActionDist>,
}

fn prepare(
    mechanism: &Mechanism,
    rule: &dyn DeviationRule,
    value_space: &[Vec<f64>],
) -> Result<Vec<ProfileData>> {
    if value_space.is_empty() {
        return Err(invalid("value space is empty"));
    }
    value_space
        .iter()
        .map(|v| {
            mechanism.validate_values(v)?;
            let deviations = (0..mechanism.n_players())
                .map(|i| {
                    let d = rule.deviation(mechanism, i, v)?;
                    d.check_support(mechanism.actions().len(i), i)?;
                    Ok(d)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ProfileData {
                values: v.clone(),
                opt: mechanism.optimal_welfare_unchecked(v),
                deviations,
            })
        })
        .collect()
}

/// `Σ_i E[U_i(a*_i, a_{-i}; v_i)]` at the bid profile `bids`.
fn deviation_utility(
    mechanism: &Mechanism,
    deviations: &[ActionDist],
    bids: &[f64],
    values: &[f64],
    scratch: &mut Vec<f64>,
) -> f64 {
    let mut total = 0.0;
    for (i, dist) in deviations.iter().enumerate() {
        scratch.clear();
        scratch.extend_from_slice(bids);
        for (b, p) in dist.iter() {
            scratch[i] = mechanism.actions().bid(i, b);
            total += p * mechanism.utility(i, scratch, values);
        }
    }
    total
}

fn profile_radices(mechanism: &Mechanism) -> Vec<usize> {
    (0..mechanism.n_players())
        .map(|i| mechanism.actions().len(i))
        .collect()
}

/// Exhaustively checks the smoothness inequality for `rule` over every action
/// profile and every valuation profile in `value_space`.
pub fn check_deviation_smoothness(
    mechanism: &Mechanism,
    rule: &dyn DeviationRule,
    params: SmoothnessParams,
    value_space: &[Vec<f64>],
) -> Result<SmoothnessReport> {
    let profiles = prepare(mechanism, rule, value_space)?;
    let mut worst = f64::INFINITY;
    let mut witness = None;
    let mut checked = 0u64;
    let mut scratch = Vec::new();
    for prof in &profiles {
        let mut odo = Odometer::new(profile_radices(mechanism));
        while let Some(a) = odo.get() {
            let bids = mechanism.bids_of(a);
            let lhs = deviation_utility(
                mechanism,
                &prof.deviations,
                &bids,
                &prof.values,
                &mut scratch,
            );
            let slack = lhs - params.lambda * prof.opt + params.mu * mechanism.revenue(&bids);
            if slack < worst {
                worst = slack;
                witness = Some(Witness {
                    actions: bids,
                    values: prof.values.clone(),
                });
            }
            checked += 1;
            odo.advance();
        }
    }
    Ok(SmoothnessReport {
        lambda: params.lambda,
        mu: params.mu,
        holds: worst >= -SLACK_TOL,
        worst_slack: worst,
        witness,
        checked_pairs: checked,
    })
}

/// Largest λ certified by `rule` at this μ: the minimum of
/// `(LHS + μ·R(a)) / Opt(v)` over `(a, v)` with `Opt(v) > 0`.
pub fn certified_lambda(
    mechanism: &Mechanism,
    rule: &dyn DeviationRule,
    mu: f64,
    value_space: &[Vec<f64>],
) -> Result<f64> {
    let profiles = prepare(mechanism, rule, value_space)?;
    let mut best = f64::INFINITY;
    let mut scratch = Vec::new();
    for prof in profiles.iter().filter(|p| p.opt > 0.0) {
        let mut odo = Odometer::new(profile_radices(mechanism));
        while let Some(a) = odo.get() {
            let bids = mechanism.bids_of(a);
            let lhs = deviation_utility(
                mechanism,
                &prof.deviations,
                &bids,
                &prof.values,
                &mut scratch,
            );
            best = best.min((lhs + mu * mechanism.revenue(&bids)) / prof.opt);
            odo.advance();
        }
    }
    if best.is_infinite() {
        return Err(Error::Undefined(
            "every valuation profile has Opt(v) = 0".into(),
        ));
    }
    Ok(best)
}

#[derive(Debug, Clone)]
pub struct PureLambda {
    pub lambda: f64,
    /// Maximin pure deviation for each valuation profile.
    pub rule: TableRule,
}

/// Best λ achievable with deterministic deviations chosen independently per
/// valuation profile: `min_v max_{b} min_a (Σ_i U_i(b_i, a_{-i}; v_i) + μR(a)) / Opt(v)`.
///
/// Profiles with `Opt(v) = 0` do not constrain λ; their table entry maximizes
/// the worst-case slack `min_a (Σ_i U_i + μR)` instead.
pub fn best_pure_lambda(
    mechanism: &Mechanism,
    mu: f64,
    value_space: &[Vec<f64>],
) -> Result<PureLambda> {
    if !(mu.is_finite() && mu >= 0.0) {
        return Err(invalid(format!(
            "mu must be finite and non-negative, got {mu}"
        )));
    }
    if value_space.is_empty() {
        return Err(invalid("value space is empty"));
    }
    let n = mechanism.n_players();
    let radices = profile_radices(mechanism);
    let profile_count: usize = radices.iter().product();

    let mut all_bids = Vec::with_capacity(profile_count);
    let mut revenue = Vec::with_capacity(profile_count);
    let mut odo = Odometer::new(radices.clone());
    while let Some(a) = odo.get() {
        let bids = mechanism.bids_of(a);
        revenue.push(mu * mechanism.revenue(&bids));
        all_bids.push(bids);
        odo.advance();
    }

    let mut rule = TableRule::new();
    let mut lambda = f64::INFINITY;
    let mut scratch = Vec::with_capacity(n);
    for v in value_space {
        mechanism.validate_values(v)?;
        let opt = mechanism.optimal_welfare_unchecked(v);
        // utils[i][b][a] = U_i(b, a_{-i}; v_i)
        let utils: Vec<Vec<Vec<f64>>> = (0..n)
            .map(|i| {
                (0..radices[i])
                    .map(|b| {
                        all_bids
                            .iter()
                            .map(|bids| {
                                scratch.clear();
                                scratch.extend_from_slice(bids);
                                scratch[i] = mechanism.actions().bid(i, b);
                                mechanism.utility(i, &scratch, v)
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();

        let mut best_score = f64::NEG_INFINITY;
        let mut best_choice = vec![0; n];
        let mut choices = Odometer::new(radices.clone());
        while let Some(b) = choices.get() {
            let worst = (0..profile_count)
                .map(|a| (0..n).map(|i| utils[i][b[i]][a]).sum::<f64>() + revenue[a])
                .fold(f64::INFINITY, f64::min);
            let score = if opt > 0.0 { worst / opt } else { worst };
            if score > best_score {
                best_score = score;
                best_choice = b.to_vec();
            }
            choices.advance();
        }
        rule.insert(v, best_choice.into_iter().map(ActionDist::point).collect());
        if opt > 0.0 {
            lambda = lambda.min(best_score);
        }
    }
    if lambda.is_infinite() {
        return Err(Error::Undefined(
            "every valuation profile has Opt(v) = 0".into(),
        ));
    }
    Ok(PureLambda { lambda, rule })
}

/// Cartesian product of per-player value sets, in lexicographic order.
pub fn product_value_space(per_player: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut odo = Odometer::new(per_player.iter().map(Vec::len).collect());
    let mut out = Vec::new();
    while let Some(idx) = odo.get() {
        out.push(
            idx.iter()
                .enumerate()
                .map(|(i, &j)| per_player[i][j])
                .collect(),
        );
        odo.advance();
    }
    out
}
