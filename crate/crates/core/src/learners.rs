//! Hedge and Exp3 learners plus exact external-regret bookkeeping.
//!
//! Weights are stored in the log domain. `weights()` exponentiates on demand,
//! and the stored logs are shifted down whenever the largest weight would
//! exceed `1e100`, which leaves every ratio (and so every probability) intact.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::SimRng;

const RENORMALIZE_LOG: f64 = 230.258_509_299_404_57; // ln(1e100)

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    #[default]
    Hedge,
    Bandit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerState {
    kind: LearnerKind,
    log_weights: Vec<f64>,
    selected_rounds: u64,
    gamma: f64,
}

impl LearnerState {
    pub fn hedge(actions: usize) -> Result<Self> {
        Self::new(LearnerKind::Hedge, actions, 0.0)
    }

    pub fn bandit(actions: usize, gamma: f64) -> Result<Self> {
        Self::new(LearnerKind::Bandit, actions, gamma)
    }

    pub fn new(kind: LearnerKind, actions: usize, gamma: f64) -> Result<Self> {
        if actions == 0 {
            return Err(invalid("a learner needs at least one action"));
        }
        if kind == LearnerKind::Bandit && !(gamma > 0.0 && gamma <= 1.0) {
            return Err(invalid(format!(
                "bandit exploration gamma must lie in (0, 1], got {gamma}"
            )));
        }
        Ok(Self {
            kind,
            log_weights: vec![0.0; actions],
            selected_rounds: 0,
            gamma: if kind == LearnerKind::Bandit {
                gamma
            } else {
                0.0
            },
        })
    }

    /// Starts from explicit positive weights.
    pub fn with_weights(mut self, weights: &[f64]) -> Result<Self> {
        if weights.len() != self.log_weights.len() {
            return Err(invalid("weight vector has the wrong length"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(invalid("weights must be finite and positive"));
        }
        self.log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(self)
    }

    pub fn kind(&self) -> LearnerKind {
        self.kind
    }

    pub fn n_actions(&self) -> usize {
        self.log_weights.len()
    }

    pub fn selected_rounds(&self) -> u64 {
        self.selected_rounds
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|l| l.exp()).collect()
    }

    /// Distribution proportional to the weights.
    pub fn weight_probabilities(&self) -> Vec<f64> {
        let max = self
            .log_weights
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let mut p: Vec<f64> = self.log_weights.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= total);
        p
    }

    /// Sampling distribution: weight-proportional for Hedge, mixed with
    /// `γ`-uniform exploration for the bandit learner.
    pub fn probabilities(&self) -> Vec<f64> {
        let mut p = self.weight_probabilities();
        if self.kind == LearnerKind::Bandit {
            let k = p.len() as f64;
            p.iter_mut()
                .for_each(|x| *x = (1.0 - self.gamma) * *x + self.gamma / k);
        }
        p
    }

    pub fn sample(&self, rng: &mut SimRng) -> usize {
        rng.discrete(&self.probabilities())
    }

    /// `w[a] ← w[a]·exp(η·u[a])` for every action.
    pub fn hedge_update(&mut self, utilities: &[f64], eta: f64) -> Result<()> {
        if utilities.len() != self.log_weights.len() {
            return Err(invalid(format!(
                "utility vector has {} entries, learner has {} actions",
                utilities.len(),
                self.log_weights.len()
            )));
        }
        if utilities.iter().any(|u| !u.is_finite()) {
            return Err(invalid("utility vector contains a non-finite entry"));
        }
        check_eta(eta)?;
        for (l, u) in self.log_weights.iter_mut().zip(utilities) {
            *l += eta * u;
        }
        self.selected_rounds += 1;
        self.renormalize();
        Ok(())
    }

    /// Exp3 step: only the chosen action moves, by the importance-weighted
    /// estimate `u / p(chosen)` under the current sampling distribution.
    pub fn bandit_update(&mut self, chosen: usize, utility: f64, eta: f64) -> Result<()> {
        if chosen >= self.log_weights.len() {
            return Err(invalid(format!("chosen action {chosen} out of range")));
        }
        if !utility.is_finite() {
            return Err(invalid("realized utility is not finite"));
        }
        check_eta(eta)?;
        let p = self.probabilities()[chosen];
        assert!(p > 0.0, "chosen action has zero sampling probability");
        self.log_weights[chosen] += eta * utility / p;
        self.selected_rounds += 1;
        self.renormalize();
        Ok(())
    }

    /// Replaces the weights with `exp(η·S)` for cumulative scores `S`.
    pub(crate) fn set_from_scores(&mut self, scores: &[f64], eta: f64) {
        for (l, s) in self.log_weights.iter_mut().zip(scores) {
            *l = eta * s;
        }
        self.renormalize();
    }

    fn renormalize(&mut self) {
        let max = self
            .log_weights
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        if max > RENORMALIZE_LOG {
            self.log_weights.iter_mut().for_each(|l| *l -= max);
        }
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if eta.is_finite() && eta > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!(
            "step size must be finite and positive, got {eta}"
        )))
    }
}

/// Per-action counterfactual sums against the realized sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretLedger {
    pub counterfactual: Vec<f64>,
    pub realized: f64,
    pub selected_rounds: u64,
    pub horizon: u64,
}

impl RegretLedger {
    pub fn new(actions: usize) -> Self {
        Self {
            counterfactual: vec![0.0; actions],
            realized: 0.0,
            selected_rounds: 0,
            horizon: 0,
        }
    }

    /// A round in which the agent played `chosen` and would have earned
    /// `utilities[a]` with each fixed action `a`.
    pub fn record(&mut self, utilities: &[f64], chosen: usize) {
        debug_assert_eq!(utilities.len(), self.counterfactual.len());
        for (c, u) in self.counterfactual.iter_mut().zip(utilities) {
            *c += u;
        }
        self.realized += utilities[chosen];
        self.selected_rounds += 1;
        self.horizon += 1;
    }

    /// A round in which the agent was not matched: both sides gain zero.
    pub fn record_unselected(&mut self) {
        self.horizon += 1;
    }

    /// `max_a Σ_t u_t(a) − Σ_t u_t(chosen_t)`, not time-averaged.
    pub fn regret_sum(&self) -> f64 {
        self.counterfactual
            .iter()
            .map(|c| c - self.realized)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Regret over the full horizon divided by that horizon.
    pub fn external_regret(&self) -> f64 {
        if self.selected_rounds == 0 {
            return 0.0;
        }
        self.regret_sum() / self.horizon as f64
    }

    /// Regret divided by the number of rounds the agent actually played.
    pub fn selected_regret(&self) -> f64 {
        if self.selected_rounds == 0 {
            return 0.0;
        }
        self.regret_sum() / self.selected_rounds as f64
    }

    pub fn best_action(&self) -> usize {
        let mut best = 0;
        for (a, &c) in self.counterfactual.iter().enumerate() {
            if c > self.counterfactual[best] {
                best = a;
            }
        }
        best
    }
}

/// Step-size schedule for a population agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", content = "eta")]
pub enum StepSize {
    /// `η_t = sqrt(ln K / t)` where `t` counts the agent's own rounds.
    #[default]
    Anytime,
    Fixed(f64),
}

/// A learner wired for the simulator: utilities arrive in `[−H, H]` and are
/// mapped to `[0, 1]` before they reach the update rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    state: LearnerState,
    scores: Vec<f64>,
    step: StepSize,
    scale: f64,
}

impl Agent {
    pub fn hedge(actions: usize, step: StepSize, scale: f64) -> Result<Self> {
        Self::new(LearnerState::hedge(actions)?, step, scale)
    }

    /// Exp3 agent. Without an explicit step the rate defaults to `γ / K`.
    pub fn bandit(actions: usize, gamma: f64, eta: Option<f64>, scale: f64) -> Result<Self> {
        let state = LearnerState::bandit(actions, gamma)?;
        let eta = eta.unwrap_or(gamma / actions as f64);
        Self::new(state, StepSize::Fixed(eta), scale)
    }

    fn new(state: LearnerState, step: StepSize, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(invalid(format!(
                "utility scale must be positive, got {scale}"
            )));
        }
        if let StepSize::Fixed(eta) = step {
            check_eta(eta)?;
        }
        if state.kind == LearnerKind::Bandit && step == StepSize::Anytime {
            return Err(invalid("the bandit learner needs a fixed step size"));
        }
        let scores = vec![0.0; state.n_actions()];
        Ok(Self {
            state,
            scores,
            step,
            scale,
        })
    }

    pub fn state(&self) -> &LearnerState {
        &self.state
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.state.probabilities()
    }

    pub fn sample(&self, rng: &mut SimRng) -> usize {
        self.state.sample(rng)
    }

    fn to_unit(&self, u: f64) -> f64 {
        (u + self.scale) / (2.0 * self.scale)
    }

    fn current_eta(&self) -> f64 {
        match self.step {
            StepSize::Fixed(eta) => eta,
            StepSize::Anytime => {
                let k = self.state.n_actions() as f64;
                (k.ln() / (self.state.selected_rounds + 1) as f64).sqrt()
            }
        }
    }

    /// Full-information update with the raw counterfactual utility vector.
    pub fn observe_vector(&mut self, utilities: &[f64]) -> Result<()> {
        if self.state.kind != LearnerKind::Hedge {
            return Err(Error::Contract(
                "bandit agents only observe their realized utility".into(),
            ));
        }
        if utilities.len() != self.scores.len() {
            return Err(invalid("utility vector has the wrong length"));
        }
        if utilities.iter().any(|u| !u.is_finite()) {
            return Err(invalid("utility vector contains a non-finite entry"));
        }
        for (s, &u) in self.scores.iter_mut().zip(utilities) {
            *s += (u + self.scale) / (2.0 * self.scale);
        }
        self.state.selected_rounds += 1;
        let eta = self.current_eta();
        self.state.set_from_scores(&self.scores, eta);
        Ok(())
    }

    /// Bandit update with the raw realized utility of the chosen action.
    pub fn observe_realized(&mut self, chosen: usize, utility: f64) -> Result<()> {
        if self.state.kind != LearnerKind::Bandit {
            return Err(Error::Contract(
                "hedge agents need the full utility vector".into(),
            ));
        }
        let eta = self.current_eta();
        self.state.bandit_update(chosen, self.to_unit(utility), eta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn hedge_doubles_weight() {
        let mut s = LearnerState::hedge(2).unwrap();
        s.hedge_update(&[1.0, 0.0], 2f64.ln()).unwrap();
        let w = s.weights();
        assert!(close(w[0], 2.0, 1e-12) && close(w[1], 1.0, 1e-12));
        let p = s.probabilities();
        assert!(close(p[0], 2.0 / 3.0, 1e-12) && close(p[1], 1.0 / 3.0, 1e-12));
    }

    #[test]
    fn hedge_equal_utilities_leave_probabilities() {
        let mut s = LearnerState::hedge(3)
            .unwrap()
            .with_weights(&[1.0, 2.0, 5.0])
            .unwrap();
        let before = s.probabilities();
        s.hedge_update(&[0.3, 0.3, 0.3], 0.7).unwrap();
        for (a, b) in before.iter().zip(s.probabilities()) {
            assert!(close(*a, b, 1e-12));
        }
    }

    #[test]
    fn hedge_concentrates_after_fifty_rounds() {
        let mut s = LearnerState::hedge(3).unwrap();
        for _ in 0..50 {
            s.hedge_update(&[0.0, 0.0, 1.0], 1.0).unwrap();
        }
        let p3 = s.probabilities()[2];
        let e50 = 50f64.exp();
        assert!(close(p3, e50 / (2.0 + e50), 1e-12));
        assert!(p3 >= 0.99);
    }

    #[test]
    fn hedge_rejects_non_finite() {
        let mut s = LearnerState::hedge(2).unwrap();
        assert!(s.hedge_update(&[f64::NAN, 0.0], 1.0).is_err());
        assert!(s.hedge_update(&[1.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn renormalization_keeps_ratios() {
        let mut s = LearnerState::hedge(2).unwrap();
        for _ in 0..1000 {
            s.hedge_update(&[1.0, 0.5], 1.0).unwrap();
        }
        assert!(s.log_weights().iter().all(|l| *l <= RENORMALIZE_LOG));
        let lw = s.log_weights();
        assert!(close(lw[0] - lw[1], 500.0, 1e-9));
        assert_eq!(
            s.weight_probabilities().iter().cloned().fold(0.0, f64::max),
            s.probabilities()[0]
        );
    }

    #[test]
    fn bandit_full_exploration_is_uniform() {
        let s = LearnerState::bandit(4, 1.0)
            .unwrap()
            .with_weights(&[1.0, 10.0, 100.0, 1000.0])
            .unwrap();
        for p in s.probabilities() {
            assert!(close(p, 0.25, 1e-15));
        }
    }

    #[test]
    fn bandit_importance_weighted_step() {
        let mut s = LearnerState::bandit(2, 0.1).unwrap();
        s.bandit_update(0, 1.0, 0.1).unwrap();
        let w = s.weights();
        assert!(close(w[0], 0.2f64.exp(), 1e-12));
        assert_eq!(w[1], 1.0);
    }

    #[test]
    fn bandit_gamma_validation() {
        assert!(LearnerState::bandit(2, 0.0).is_err());
        assert!(LearnerState::bandit(2, 1.5).is_err());
    }

    #[test]
    fn ledger_regret_examples() {
        let mut l = RegretLedger::new(2);
        l.record(&[1.0, 0.0], 1);
        l.record(&[1.0, 0.0], 1);
        assert_eq!(l.external_regret(), 1.0);

        let mut l = RegretLedger::new(3);
        let rounds: [[f64; 3]; 3] = [[0.2, 0.9, 0.1], [0.5, 0.4, 0.0], [0.0, 0.1, 0.7]];
        for u in rounds {
            let best = (0..3).max_by(|&a, &b| u[a].total_cmp(&u[b])).unwrap();
            l.record(&u, best);
        }
        assert!(l.external_regret() <= 0.0);
    }

    #[test]
    fn ledger_without_selection_is_zero() {
        let mut l = RegretLedger::new(2);
        l.record_unselected();
        assert_eq!(l.external_regret(), 0.0);
    }

    #[test]
    fn anytime_hedge_adversarial_regret() {
        // Alternating blocks of doubling length punish any learner that
        // commits early.
        let k = 3;
        let t_total = 10_000;
        let mut agent = Agent::hedge(k, StepSize::Anytime, 1.0).unwrap();
        let mut ledger = RegretLedger::new(k);
        let mut rng = SimRng::seed_from_u64(5);
        let mut block = 1;
        let mut good = 0;
        let mut until = block;
        for t in 0..t_total {
            if t == until {
                good = (good + 1) % k;
                block *= 2;
                until += block;
            }
            let mut u = vec![0.0; k];
            u[good] = 1.0;
            let chosen = agent.sample(&mut rng);
            ledger.record(&u, chosen);
            // The learner sees raw utilities in [0, 1]; map them so the
            // internal [−H, H] → [0, 1] transform is the identity.
            let raw: Vec<f64> = u.iter().map(|x| 2.0 * x - 1.0).collect();
            agent.observe_vector(&raw).unwrap();
        }
        let bound = 2.0 * ((k as f64).ln() / t_total as f64).sqrt() + 0.01;
        assert!(
            ledger.external_regret() <= bound,
            "{} > {bound}",
            ledger.external_regret()
        );
    }

    #[test]
    fn anytime_hedge_survives_late_switch() {
        // Action 0 pays for the first quarter, action 1 afterwards.
        let t_total = 20_000;
        let mut agent = Agent::hedge(2, StepSize::Anytime, 1.0).unwrap();
        let mut ledger = RegretLedger::new(2);
        let mut expected = 0.0;
        for t in 0..t_total {
            let u = if t < t_total / 4 {
                [1.0, 0.0]
            } else {
                [0.0, 1.0]
            };
            let p = agent.probabilities();
            expected += p[0] * u[0] + p[1] * u[1];
            ledger.counterfactual[0] += u[0];
            ledger.counterfactual[1] += u[1];
            agent
                .observe_vector(&[2.0 * u[0] - 1.0, 2.0 * u[1] - 1.0])
                .unwrap();
        }
        let regret = (ledger.counterfactual[1] - expected) / t_total as f64;
        assert!(
            regret <= 2.0 * (2f64.ln() / t_total as f64).sqrt() + 0.01,
            "{regret}"
        );
    }

    #[test]
    fn exp3_two_arm_stochastic() {
        let means = [0.25, 0.75];
        let t_total = 100_000;
        let mut agent = Agent::bandit(2, 0.05, None, 1.0).unwrap();
        let mut rng = SimRng::seed_from_u64(42);
        let mut total = 0.0;
        for _ in 0..t_total {
            let a = agent.sample(&mut rng);
            let r = if rng.bernoulli(means[a]) { 1.0 } else { 0.0 };
            total += r;
            agent.observe_realized(a, 2.0 * r - 1.0).unwrap();
        }
        let regret = means[1] - total / t_total as f64;
        assert!(regret < 0.05, "{regret}");
    }

    #[test]
    fn agent_rejects_mismatched_feedback() {
        let mut h = Agent::hedge(2, StepSize::Anytime, 1.0).unwrap();
        assert!(matches!(
            h.observe_realized(0, 0.5),
            Err(Error::Contract(_))
        ));
        let mut b = Agent::bandit(2, 0.1, None, 1.0).unwrap();
        assert!(matches!(
            b.observe_vector(&[0.0, 0.0]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn single_action_agent_is_trivial() {
        let mut h = Agent::hedge(1, StepSize::Anytime, 1.0).unwrap();
        h.observe_vector(&[0.5]).unwrap();
        assert_eq!(h.probabilities(), vec![1.0]);
    }
}
