//! Statistics of a finished trace: empirical Bayes-CCE violation, the
//! conditional-independence gap of the empirical joint, welfare ratios and
//! the finite-time welfare inequality.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mechanism::{Mechanism, Odometer};
use crate::simulator::{Population, Trace};
use crate::smoothness::SmoothnessParams;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProfileCounts {
    pub count: u64,
    /// Counts of drawn type-index profiles under this strategy profile.
    pub values: BTreeMap<Vec<u16>, u64>,
}

/// Empirical distribution of (strategy profile, type profile) pairs over the
/// recorded rounds of a window. Profiles are keyed by their full action table.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalJoint {
    pub profiles: BTreeMap<Vec<u16>, ProfileCounts>,
    pub total: u64,
}

impl EmpiricalJoint {
    pub fn p_strategy(&self, s: &[u16]) -> f64 {
        self.profiles
            .get(s)
            .map_or(0.0, |c| c.count as f64 / self.total as f64)
    }

    pub fn p_values_given(&self, s: &[u16], v: &[u16]) -> f64 {
        self.profiles.get(s).map_or(0.0, |c| {
            c.values.get(v).copied().unwrap_or(0) as f64 / c.count as f64
        })
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }
}

/// Counts the recorded rounds whose index falls in `window` (0-based).
pub fn empirical_joint(trace: &Trace, window: Range<usize>) -> Result<EmpiricalJoint> {
    if window.start >= window.end || window.end > trace.len() {
        return Err(invalid(format!(
            "window {window:?} is empty or exceeds the {} recorded rounds",
            trace.len()
        )));
    }
    let mut profiles: BTreeMap<Vec<u16>, ProfileCounts> = BTreeMap::new();
    let mut total = 0;
    for k in 0..trace.recorded_rounds() {
        let t = trace.recorded_round(k);
        if !window.contains(&t) {
            continue;
        }
        let entry = profiles.entry(trace.strategy_row(k).to_vec()).or_default();
        entry.count += 1;
        *entry.values.entry(trace.types_at(t).to_vec()).or_insert(0) += 1;
        total += 1;
    }
    if total == 0 {
        return Err(invalid(format!(
            "window {window:?} contains no recorded strategy profile"
        )));
    }
    Ok(EmpiricalJoint { profiles, total })
}

/// Largest total-variation distance between `p(·|s)` and the uniform product
/// of the populations' type sets, over profiles with `p(s) ≥ ζ`.
pub fn conditional_independence_gap(
    joint: &EmpiricalJoint,
    populations: &[Population],
    zeta: f64,
) -> f64 {
    let q = 1.0
        / populations
            .iter()
            .map(|p| p.types.len() as f64)
            .product::<f64>();
    let mut gap: f64 = 0.0;
    for counts in joint.profiles.values() {
        if (counts.count as f64 / joint.total as f64) < zeta {
            continue;
        }
        let mut l1 = 0.0;
        for &c in counts.values.values() {
            l1 += (c as f64 / counts.count as f64 - q).abs();
        }
        l1 += (1.0 - counts.values.len() as f64 * q).max(0.0);
        gap = gap.max(0.5 * l1);
    }
    gap
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentEpsilon {
    pub population: usize,
    pub type_index: usize,
    pub value: f64,
    /// Fixed deviation with the largest gain (lowest index among ties).
    pub best_action: usize,
    pub best_bid: f64,
    /// Average gain of that deviation over the horizon; may be negative.
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonReport {
    pub horizon: u64,
    /// Largest violation over all agents, floored at 0.
    pub epsilon: f64,
    pub breakdown: Vec<AgentEpsilon>,
}

/// Empirical Bayes-CCE violation after each round count in `checkpoints`
/// (ascending, each in `1..=T`), computed in one pass.
pub fn epsilon_series(
    trace: &Trace,
    mechanism: &Mechanism,
    checkpoints: &[usize],
) -> Result<Vec<EpsilonReport>> {
    if checkpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("checkpoints must be strictly increasing"));
    }
    if let Some(&c) = checkpoints.iter().find(|&&c| c == 0 || c > trace.len()) {
        return Err(invalid(format!(
            "checkpoint {c} lies outside 1..={}",
            trace.len()
        )));
    }
    let n = trace.n_populations();
    let agents: Vec<_> = trace.layout.agents().collect();
    let mut cf: Vec<Vec<f64>> = agents
        .iter()
        .map(|id| vec![0.0; mechanism.actions().len(id.population)])
        .collect();
    let mut realized = vec![0.0; agents.len()];
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut next = checkpoints.iter().peekable();
    let mut bids = vec![0.0; n];
    for t in 0..trace.len() {
        let types = trace.types_at(t);
        let values = trace.values_at(t);
        let acts = trace.actions_at(t);
        for i in 0..n {
            bids[i] = mechanism.actions().bid(i, acts[i] as usize);
        }
        for i in 0..n {
            let k = trace.layout.flat(crate::simulator::AgentId {
                population: i,
                type_index: types[i] as usize,
            });
            let own = bids[i];
            for (a, &b) in mechanism.actions().grid(i).iter().enumerate() {
                bids[i] = b;
                let u = mechanism.utility(i, &bids, &values);
                cf[k][a] += u;
                if a == acts[i] as usize {
                    realized[k] += u;
                }
            }
            bids[i] = own;
        }
        if next.peek() == Some(&&(t + 1)) {
            next.next();
            out.push(epsilon_snapshot(trace, mechanism, &cf, &realized, t + 1));
        }
    }
    Ok(out)
}

fn epsilon_snapshot(
    trace: &Trace,
    mechanism: &Mechanism,
    cf: &[Vec<f64>],
    realized: &[f64],
    horizon: usize,
) -> EpsilonReport {
    let breakdown: Vec<AgentEpsilon> = trace
        .layout
        .agents()
        .enumerate()
        .map(|(k, id)| {
            let mut best = 0;
            let mut best_gain = f64::NEG_INFINITY;
            for (a, c) in cf[k].iter().enumerate() {
                let gain = c - realized[k];
                if gain > best_gain {
                    best_gain = gain;
                    best = a;
                }
            }
            AgentEpsilon {
                population: id.population,
                type_index: id.type_index,
                value: trace.populations[id.population].types[id.type_index],
                best_action: best,
                best_bid: mechanism.actions().bid(id.population, best),
                violation: best_gain / horizon as f64,
            }
        })
        .collect();
    let epsilon = breakdown.iter().map(|b| b.violation).fold(0.0f64, f64::max);
    EpsilonReport {
        horizon: horizon as u64,
        epsilon,
        breakdown,
    }
}

/// Empirical Bayes-CCE violation over the whole trace.
pub fn bayes_cce_epsilon(trace: &Trace, mechanism: &Mechanism) -> Result<EpsilonReport> {
    if trace.is_empty() {
        return Err(invalid("trace is empty"));
    }
    Ok(epsilon_series(trace, mechanism, &[trace.len()])?.remove(0))
}

/// `n` times the largest per-agent external regret, floored at 0.
pub fn measured_epsilon(trace: &Trace) -> f64 {
    let worst = trace
        .ledgers
        .iter()
        .map(|l| l.external_regret())
        .fold(0.0f64, f64::max);
    trace.n_populations() as f64 * worst
}

/// Exact `E[Opt(v)]` under the uniform product of the populations' types.
pub fn expected_optimum(mechanism: &Mechanism, populations: &[Population]) -> f64 {
    let mut odo = Odometer::new(populations.iter().map(|p| p.types.len()).collect());
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut values = vec![0.0; populations.len()];
    while let Some(idx) = odo.get() {
        for (i, &j) in idx.iter().enumerate() {
            values[i] = populations[i].types[j];
        }
        sum += mechanism.optimal_welfare_unchecked(&values);
        count += 1;
        odo.advance();
    }
    sum / count as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelfareSummary {
    pub avg_sw: f64,
    pub avg_opt: f64,
    pub expected_opt: f64,
    /// `Σ Opt / Σ SW`; `None` when welfare is zero but the optimum is not.
    pub ratio: Option<f64>,
    pub infinite: bool,
    pub bound: f64,
    pub within_bound: bool,
}

pub fn welfare_ratio(
    trace: &Trace,
    mechanism: &Mechanism,
    params: SmoothnessParams,
    tolerance: f64,
) -> Result<WelfareSummary> {
    welfare_ratio_upto(trace, mechanism, params, tolerance, trace.len())
}

fn welfare_ratio_upto(
    trace: &Trace,
    mechanism: &Mechanism,
    params: SmoothnessParams,
    tolerance: f64,
    upto: usize,
) -> Result<WelfareSummary> {
    if upto == 0 || upto > trace.len() {
        return Err(invalid(
            "welfare ratio needs a non-empty prefix of the trace",
        ));
    }
    let sw: f64 = trace.welfare[..upto].iter().sum();
    let opt: f64 = trace.optimum[..upto].iter().sum();
    let bound = params.poa_bound();
    let (ratio, infinite) = if sw > 0.0 {
        (Some(opt / sw), false)
    } else if opt > 0.0 {
        (None, true)
    } else {
        return Err(Error::Undefined("welfare and optimum are both zero".into()));
    };
    Ok(WelfareSummary {
        avg_sw: sw / upto as f64,
        avg_opt: opt / upto as f64,
        expected_opt: expected_optimum(mechanism, &trace.populations),
        ratio,
        infinite,
        bound,
        within_bound: ratio.is_some_and(|r| r <= bound + tolerance),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteTimeReport {
    pub avg_sw: f64,
    pub avg_opt: f64,
    pub rhs: f64,
    pub slack: f64,
    pub holds: bool,
}

/// Checks `avg SW ≥ λ/max{1,μ}·avg Opt − δ − μ·ε` on the trace.
pub fn finite_time_check(
    trace: &Trace,
    params: SmoothnessParams,
    delta: f64,
    measured_epsilon: f64,
) -> Result<FiniteTimeReport> {
    if trace.is_empty() {
        return Err(invalid("trace is empty"));
    }
    if !(delta.is_finite() && delta >= 0.0)
        || !(measured_epsilon.is_finite() && measured_epsilon >= 0.0)
    {
        return Err(invalid("delta and epsilon must be finite and non-negative"));
    }
    let t = trace.len() as f64;
    let avg_sw = trace.welfare.iter().sum::<f64>() / t;
    let avg_opt = trace.optimum.iter().sum::<f64>() / t;
    let rhs = params.welfare_factor() * avg_opt - delta - params.mu * measured_epsilon;
    let slack = avg_sw - rhs;
    Ok(FiniteTimeReport {
        avg_sw,
        avg_opt,
        rhs,
        slack,
        holds: slack >= 0.0,
    })
}

/// `54·n³·|Σ|·|𝒱|²·H³/δ³ · ln(2/ρ)`.
pub fn t_star(delta: f64, rho: f64, n: f64, sigma_size: f64, v_size: f64, h: f64) -> Result<f64> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(invalid(format!("delta must lie in (0, 1], got {delta}")));
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(invalid(format!("rho must lie in (0, 1], got {rho}")));
    }
    for (name, x) in [("n", n), ("|Sigma|", sigma_size), ("|V|", v_size), ("H", h)] {
        if !(x.is_finite() && x > 0.0) {
            return Err(invalid(format!("{name} must be positive, got {x}")));
        }
    }
    Ok(
        54.0 * n.powi(3) * sigma_size * v_size.powi(2) * h.powi(3) / delta.powi(3)
            * (2.0 / rho).ln(),
    )
}

/// `|Σ| = ∏_i |A_i|^{|𝒱_i|}` as a float (it overflows integers quickly).
pub fn strategy_space_size(mechanism: &Mechanism, populations: &[Population]) -> f64 {
    populations
        .iter()
        .enumerate()
        .map(|(i, p)| (mechanism.actions().len(i) as f64).powi(p.types.len() as i32))
        .product()
}

pub fn type_space_size(populations: &[Population]) -> f64 {
    populations.iter().map(|p| p.types.len() as f64).product()
}

/// `ζ = δ / (2|Σ|H)`.
pub fn default_zeta(delta: f64, sigma_size: f64, h: f64) -> f64 {
    delta / (2.0 * sigma_size * h)
}

/// Powers of two up to the horizon, always ending at the horizon itself.
pub fn default_checkpoints(horizon: usize) -> Vec<usize> {
    let mut out: Vec<usize> = std::iter::successors(Some(1usize), |&c| c.checked_mul(2))
        .take_while(|&c| c < horizon)
        .collect();
    out.push(horizon);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSettings {
    pub delta: f64,
    pub rho: f64,
    #[serde(default)]
    pub zeta: Option<f64>,
    #[serde(default)]
    pub checkpoints: Option<Vec<usize>>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_tolerance() -> f64 {
    0.05
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self {
            delta: 0.05,
            rho: 0.05,
            zeta: None,
            checkpoints: None,
            tolerance: default_tolerance(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRow {
    pub t: u64,
    pub epsilon: f64,
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub epsilon: f64,
    pub epsilon_breakdown: Vec<AgentEpsilon>,
    pub independence_gap: f64,
    pub zeta: f64,
    pub welfare: WelfareSummary,
    pub ratio: Option<f64>,
    pub bound: f64,
    pub measured_epsilon: f64,
    pub finite_time: FiniteTimeReport,
    pub finite_time_slack: f64,
    pub t_star: f64,
    pub checkpoints: Vec<CheckpointRow>,
}

/// Runs every trace statistic with the given smoothness parameters.
pub fn analyze(
    trace: &Trace,
    mechanism: &Mechanism,
    params: SmoothnessParams,
    settings: &AnalysisSettings,
) -> Result<AnalysisReport> {
    let sigma = strategy_space_size(mechanism, &trace.populations);
    let zeta = settings
        .zeta
        .unwrap_or_else(|| default_zeta(settings.delta, sigma, mechanism.scale()));
    let mut checkpoints = settings
        .checkpoints
        .clone()
        .unwrap_or_else(|| default_checkpoints(trace.len()));
    checkpoints.retain(|&c| c >= 1 && c <= trace.len());
    checkpoints.sort_unstable();
    checkpoints.dedup();
    if checkpoints.last() != Some(&trace.len()) {
        checkpoints.push(trace.len());
    }
    let series = epsilon_series(trace, mechanism, &checkpoints)?;
    let rows = series
        .iter()
        .map(|r| {
            let w = welfare_ratio_upto(
                trace,
                mechanism,
                params,
                settings.tolerance,
                r.horizon as usize,
            );
            Ok(CheckpointRow {
                t: r.horizon,
                epsilon: r.epsilon,
                ratio: w?.ratio,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let last = series
        .last()
        .expect("checkpoint list ends at the horizon")
        .clone();
    let joint = empirical_joint(trace, 0..trace.len())?;
    let gap = conditional_independence_gap(&joint, &trace.populations, zeta);
    let welfare = welfare_ratio(trace, mechanism, params, settings.tolerance)?;
    let eps = measured_epsilon(trace);
    let finite_time = finite_time_check(trace, params, settings.delta, eps)?;
    let t_star = t_star(
        settings.delta,
        settings.rho,
        trace.n_populations() as f64,
        sigma,
        type_space_size(&trace.populations),
        mechanism.scale(),
    )?;
    Ok(AnalysisReport {
        epsilon: last.epsilon,
        epsilon_breakdown: last.breakdown,
        independence_gap: gap,
        zeta,
        ratio: welfare.ratio,
        bound: welfare.bound,
        welfare,
        measured_epsilon: eps,
        finite_time_slack: finite_time.slack,
        finite_time,
        t_star,
        checkpoints: rows,
    })
}
