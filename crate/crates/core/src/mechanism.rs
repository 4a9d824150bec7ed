//! Finite-action pay-your-bid auctions.
//!
//! Every mechanism here allocates `units` identical items to the highest
//! bids. They differ only in who pays: in a first-price (or multi-unit
//! first-price) auction each winner pays its bid, in an all-pay auction every
//! bidder pays its bid. Social welfare is the sum of player utilities plus the
//! principal's revenue, which always collapses to the total value of the
//! allocated units.
//!
//! Bids live on a finite grid per player. The default grid is the uniform
//! grid `{0, H/m, 2H/m, ..., H}`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Absolute tolerance used when matching a bid against a grid point.
const GRID_MATCH_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanismKind {
    FirstPrice,
    AllPay,
    MultiUnitFirstPrice,
}

impl MechanismKind {
    pub fn name(self) -> &'static str {
        match self {
            MechanismKind::FirstPrice => "first_price",
            MechanismKind::AllPay => "all_pay",
            MechanismKind::MultiUnitFirstPrice => "multi_unit_first_price",
        }
    }
}

/// How equal bids competing for the last unit are resolved.
///
/// `Uniform` is evaluated in expectation: tied bidders each receive an equal
/// fraction of the remaining units, so outcomes stay deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    LowestIndex,
    Uniform,
}

/// Per-player sorted bid grids sharing a common value scale `H`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSpace {
    grids: Vec<Vec<f64>>,
    scale: f64,
}

impl ActionSpace {
    /// Uniform grid `{0, step, ..., H}` for each of `n` players. `H / step`
    /// must be (numerically) an integer.
    pub fn uniform(n: usize, step: f64, scale: f64) -> Result<Self> {
        if !(step.is_finite() && step > 0.0) {
            return Err(invalid(format!("grid step must be positive, got {step}")));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(invalid(format!("scale H must be positive, got {scale}")));
        }
        let cells = (scale / step).round();
        if cells < 1.0 || ((cells * step) - scale).abs() > 1e-9 * scale {
            return Err(invalid(format!(
                "grid step {step} does not divide H = {scale} into a whole number of cells"
            )));
        }
        if cells > u16::MAX as f64 - 1.0 {
            return Err(invalid(format!("grid with {cells} cells is too fine")));
        }
        let m = cells as usize;
        // i * H / m is the correctly rounded grid point, unlike i * step.
        let grid: Vec<f64> = (0..=m).map(|i| i as f64 * scale / m as f64).collect();
        Self::from_grids(vec![grid; n], scale)
    }

    pub fn from_grids(grids: Vec<Vec<f64>>, scale: f64) -> Result<Self> {
        if grids.is_empty() {
            return Err(invalid("action space needs at least one player"));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(invalid(format!("scale H must be positive, got {scale}")));
        }
        for (i, grid) in grids.iter().enumerate() {
            if grid.is_empty() {
                return Err(invalid(format!("player {i} has an empty bid grid")));
            }
            if grid.len() > u16::MAX as usize {
                return Err(invalid(format!("player {i} has too many actions")));
            }
            if grid.iter().any(|b| !b.is_finite()) {
                return Err(invalid(format!("player {i} grid has a non-finite bid")));
            }
            if grid.windows(2).any(|w| w[0] >= w[1]) {
                return Err(invalid(format!(
                    "player {i} grid is not strictly increasing"
                )));
            }
            if grid[0] != 0.0 {
                return Err(invalid(format!("player {i} grid must start at 0")));
            }
            if *grid.last().unwrap() > scale + GRID_MATCH_TOL {
                return Err(invalid(format!("player {i} grid exceeds H = {scale}")));
            }
        }
        Ok(Self { grids, scale })
    }

    pub fn n_players(&self) -> usize {
        self.grids.len()
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn grid(&self, player: usize) -> &[f64] {
        &self.grids[player]
    }

    pub fn len(&self, player: usize) -> usize {
        self.grids[player].len()
    }

    pub fn is_empty(&self, player: usize) -> bool {
        self.grids[player].is_empty()
    }

    pub fn bid(&self, player: usize, action: usize) -> f64 {
        self.grids[player][action]
    }

    /// Index of `bid` on the player's grid, if it is a grid point.
    pub fn index_of(&self, player: usize, bid: f64) -> Option<usize> {
        let grid = self.grids.get(player)?;
        let pos = grid.partition_point(|&b| b < bid - GRID_MATCH_TOL);
        grid.get(pos)
            .filter(|&&b| (b - bid).abs() <= GRID_MATCH_TOL)
            .map(|_| pos)
    }

    /// Largest grid index whose bid does not exceed `x`.
    pub fn floor_index(&self, player: usize, x: f64) -> usize {
        let grid = &self.grids[player];
        grid.partition_point(|&b| b <= x + GRID_MATCH_TOL)
            .saturating_sub(1)
    }

    /// Number of pure action profiles, saturating at `u128::MAX`.
    pub fn profile_count(&self) -> u128 {
        self.grids
            .iter()
            .fold(1u128, |acc, g| acc.saturating_mul(g.len() as u128))
    }
}

/// Serializable mechanism description, as it appears in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanismDescriptor {
    pub kind: MechanismKind,
    pub n: usize,
    #[serde(default = "default_units")]
    pub k: usize,
    pub grid_step: f64,
    #[serde(rename = "H", default = "default_scale")]
    pub h: f64,
    #[serde(default)]
    pub tie_break: TieBreak,
}

fn default_units() -> usize {
    1
}

fn default_scale() -> f64 {
    1.0
}

impl MechanismDescriptor {
    pub fn build(&self) -> Result<Mechanism> {
        Mechanism::from_descriptor(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub utilities: Vec<f64>,
    pub revenue: f64,
    /// Units received by each player (0 or 1 under lowest-index ties; a
    /// fraction when uniform ties are evaluated in expectation).
    pub allocation: Vec<f64>,
    /// `Σ_i allocation_i · v_i`.
    pub welfare: f64,
}

impl Outcome {
    pub fn winners(&self) -> Vec<usize> {
        self.allocation
            .iter()
            .enumerate()
            .filter(|(_, &x)| x > 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    /// Welfare of the realized allocation. Payments cancel, so this equals
    /// `Σ utilities + revenue` up to rounding.
    pub fn social_welfare(&self) -> f64 {
        self.welfare
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mechanism {
    kind: MechanismKind,
    units: usize,
    actions: ActionSpace,
    tie_break: TieBreak,
    grid_step: Option<f64>,
}

impl Mechanism {
    pub fn new(
        kind: MechanismKind,
        units: usize,
        actions: ActionSpace,
        tie_break: TieBreak,
    ) -> Result<Self> {
        let n = actions.n_players();
        if units == 0 || units > n {
            return Err(invalid(format!(
                "units k = {units} must satisfy 1 <= k <= n = {n}"
            )));
        }
        if units != 1 && kind != MechanismKind::MultiUnitFirstPrice {
            return Err(invalid(format!(
                "{} sells a single item; got k = {units}",
                kind.name()
            )));
        }
        Ok(Self {
            kind,
            units,
            actions,
            tie_break,
            grid_step: None,
        })
    }

    pub fn first_price(n: usize, step: f64, scale: f64) -> Result<Self> {
        Self::uniform(MechanismKind::FirstPrice, n, 1, step, scale)
    }

    pub fn all_pay(n: usize, step: f64, scale: f64) -> Result<Self> {
        Self::uniform(MechanismKind::AllPay, n, 1, step, scale)
    }

    pub fn multi_unit(n: usize, units: usize, step: f64, scale: f64) -> Result<Self> {
        Self::uniform(MechanismKind::MultiUnitFirstPrice, n, units, step, scale)
    }

    pub fn uniform(
        kind: MechanismKind,
        n: usize,
        units: usize,
        step: f64,
        scale: f64,
    ) -> Result<Self> {
        if n == 0 {
            return Err(invalid("a mechanism needs at least one player"));
        }
        let mut m = Self::new(
            kind,
            units,
            ActionSpace::uniform(n, step, scale)?,
            TieBreak::LowestIndex,
        )?;
        m.grid_step = Some(step);
        Ok(m)
    }

    pub fn from_descriptor(d: &MechanismDescriptor) -> Result<Self> {
        let m = Self::uniform(d.kind, d.n, d.k, d.grid_step, d.h)?;
        Ok(m.with_tie_break(d.tie_break))
    }

    /// Descriptor for mechanisms built on a uniform grid.
    pub fn descriptor(&self) -> Option<MechanismDescriptor> {
        self.grid_step.map(|step| MechanismDescriptor {
            kind: self.kind,
            n: self.n_players(),
            k: self.units,
            grid_step: step,
            h: self.actions.scale(),
            tie_break: self.tie_break,
        })
    }

    pub fn with_tie_break(mut self, tie_break: TieBreak) -> Self {
        self.tie_break = tie_break;
        self
    }

    /// Same mechanism with bids, grid and `H` multiplied by `c > 0`.
    pub fn rescaled(&self, c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(invalid(format!("scale factor must be positive, got {c}")));
        }
        let grids = (0..self.n_players())
            .map(|i| self.actions.grid(i).iter().map(|b| b * c).collect())
            .collect();
        let mut m = Self::new(
            self.kind,
            self.units,
            ActionSpace::from_grids(grids, self.actions.scale() * c)?,
            self.tie_break,
        )?;
        m.grid_step = self.grid_step.map(|s| s * c);
        Ok(m)
    }

    pub fn kind(&self) -> MechanismKind {
        self.kind
    }

    pub fn units(&self) -> usize {
        self.units
    }

    pub fn n_players(&self) -> usize {
        self.actions.n_players()
    }

    pub fn actions(&self) -> &ActionSpace {
        &self.actions
    }

    pub fn tie_break(&self) -> TieBreak {
        self.tie_break
    }

    pub fn scale(&self) -> f64 {
        self.actions.scale()
    }

    pub fn validate_values(&self, values: &[f64]) -> Result<()> {
        let n = self.n_players();
        if values.len() != n {
            return Err(invalid(format!(
                "valuation profile has {} entries, mechanism has {n} players",
                values.len()
            )));
        }
        let h = self.scale();
        for (i, &v) in values.iter().enumerate() {
            if !(v.is_finite() && v >= 0.0 && v <= h + GRID_MATCH_TOL) {
                return Err(invalid(format!(
                    "value of player {i} is {v}, outside [0, {h}]"
                )));
            }
        }
        Ok(())
    }

    /// Maps bids to grid indices, rejecting off-grid bids.
    pub fn action_indices(&self, bids: &[f64]) -> Result<Vec<usize>> {
        let n = self.n_players();
        if bids.len() != n {
            return Err(invalid(format!(
                "action profile has {} entries, mechanism has {n} players",
                bids.len()
            )));
        }
        bids.iter()
            .enumerate()
            .map(|(i, &b)| {
                self.actions
                    .index_of(i, b)
                    .ok_or_else(|| invalid(format!("bid {b} of player {i} is not on its grid")))
            })
            .collect()
    }

    pub fn bids_of(&self, actions: &[usize]) -> Vec<f64> {
        actions
            .iter()
            .enumerate()
            .map(|(i, &a)| self.actions.bid(i, a))
            .collect()
    }

    pub fn play(&self, bids: &[f64], values: &[f64]) -> Result<Outcome> {
        self.action_indices(bids)?;
        self.validate_values(values)?;
        Ok(self.play_unchecked(bids, values))
    }

    /// `play` without grid or range validation; callers guarantee the inputs
    /// came from this mechanism's action space.
    pub fn play_unchecked(&self, bids: &[f64], values: &[f64]) -> Outcome {
        let n = bids.len();
        let allocation: Vec<f64> = (0..n).map(|i| self.allocation_of(i, bids)).collect();
        let mut utilities = Vec::with_capacity(n);
        let mut revenue = 0.0;
        for i in 0..n {
            let (u, pay) = self.settle(allocation[i], bids[i], values[i]);
            utilities.push(u);
            revenue += pay;
        }
        let welfare = allocation.iter().zip(values).map(|(x, v)| x * v).sum();
        Outcome {
            utilities,
            revenue,
            allocation,
            welfare,
        }
    }

    pub fn social_welfare(&self, bids: &[f64], values: &[f64]) -> Result<f64> {
        Ok(self.play(bids, values)?.social_welfare())
    }

    /// Ex-post optimal welfare: the `k` largest values.
    pub fn optimal_welfare(&self, values: &[f64]) -> Result<f64> {
        self.validate_values(values)?;
        Ok(self.optimal_welfare_unchecked(values))
    }

    pub fn optimal_welfare_unchecked(&self, values: &[f64]) -> f64 {
        if self.units == 1 {
            return values.iter().copied().fold(0.0, f64::max);
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        sorted.iter().take(self.units).sum()
    }

    /// Utility of `player` at the bid profile, without building an `Outcome`.
    #[inline]
    pub fn utility(&self, player: usize, bids: &[f64], values: &[f64]) -> f64 {
        let x = self.allocation_of(player, bids);
        self.settle(x, bids[player], values[player]).0
    }

    /// Principal revenue at the bid profile.
    pub fn revenue(&self, bids: &[f64]) -> f64 {
        match self.kind {
            MechanismKind::AllPay => bids.iter().sum(),
            _ => (0..bids.len())
                .map(|i| self.allocation_of(i, bids) * bids[i])
                .sum(),
        }
    }

    #[inline]
    fn settle(&self, allocation: f64, bid: f64, value: f64) -> (f64, f64) {
        match self.kind {
            MechanismKind::AllPay => (allocation * value - bid, bid),
            MechanismKind::FirstPrice | MechanismKind::MultiUnitFirstPrice => {
                let pay = allocation * bid;
                (allocation * value - pay, pay)
            }
        }
    }

    /// Units won by `player`: the top `k` bids win, ties resolved per the
    /// tie-break rule.
    #[inline]
    fn allocation_of(&self, player: usize, bids: &[f64]) -> f64 {
        let b = bids[player];
        let mut higher = 0usize;
        let mut equal_before = 0usize;
        let mut equal = 0usize;
        for (j, &other) in bids.iter().enumerate() {
            if other > b {
                higher += 1;
            } else if other == b {
                equal += 1;
                if j < player {
                    equal_before += 1;
                }
            }
        }
        let k = self.units;
        match self.tie_break {
            TieBreak::LowestIndex => {
                if higher + equal_before < k {
                    1.0
                } else {
                    0.0
                }
            }
            TieBreak::Uniform => {
                if higher >= k {
                    0.0
                } else if higher + equal <= k {
                    1.0
                } else {
                    (k - higher) as f64 / equal as f64
                }
            }
        }
    }
}

impl TryFrom<&MechanismDescriptor> for Mechanism {
    type Error = Error;

    fn try_from(d: &MechanismDescriptor) -> Result<Self> {
        Mechanism::from_descriptor(d)
    }
}

/// Iterates all index profiles of a mixed-radix space in lexicographic order
/// (last coordinate fastest).
pub(crate) struct Odometer {
    radices: Vec<usize>,
    current: Vec<usize>,
    done: bool,
}

impl Odometer {
    pub(crate) fn new(radices: Vec<usize>) -> Self {
        let done = radices.contains(&0);
        let current = vec![0; radices.len()];
        Self {
            radices,
            current,
            done,
        }
    }

    /// Current profile, or `None` once exhausted.
    pub(crate) fn get(&self) -> Option<&[usize]> {
        (!self.done).then_some(self.current.as_slice())
    }

    pub(crate) fn advance(&mut self) {
        for pos in (0..self.radices.len()).rev() {
            self.current[pos] += 1;
            if self.current[pos] < self.radices[pos] {
                return;
            }
            self.current[pos] = 0;
        }
        self.done = true;
    }
}
