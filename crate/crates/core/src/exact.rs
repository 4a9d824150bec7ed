//! Ground truth on tiny instances: the agent normal form, the smoothness lift
//! to it, and the worst coarse correlated equilibrium by linear programming.
//!
//! In the agent game every (population, type) pair is a player choosing one
//! bid. Nature draws one type per population uniformly, so agent `(i, v_i)`
//! earns `E_v[U_i(s(v); v_i)·1{v_i drawn}]`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lp::{LinearProgram, Relation};
use crate::mechanism::{Mechanism, Odometer};
use crate::simulator::{AgentId, AgentLayout, Population};
use crate::smoothness::{
    product_value_space, DeviationRule, SmoothnessParams, SmoothnessReport, Witness, SLACK_TOL,
};

pub const DEFAULT_TENSOR_CAP: u128 = 1_000_000;
pub const DEFAULT_LP_CAP: u128 = 4096;

/// Dense payoff tables of the agent normal form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentGame {
    pub populations: Vec<Population>,
    pub layout: AgentLayout,
    pub agents: Vec<AgentId>,
    /// Actions available to each agent (its population's grid size).
    pub radices: Vec<usize>,
    /// Mixed-radix strides; the last agent varies fastest.
    pub strides: Vec<usize>,
    /// Row-major `[profile][agent]`.
    pub utilities: Vec<f64>,
    pub revenue: Vec<f64>,
    pub expected_opt: f64,
}

impl AgentGame {
    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn n_profiles(&self) -> usize {
        self.revenue.len()
    }

    pub fn utility(&self, profile: usize, agent: usize) -> f64 {
        self.utilities[profile * self.n_agents() + agent]
    }

    pub fn action_of(&self, profile: usize, agent: usize) -> usize {
        (profile / self.strides[agent]) % self.radices[agent]
    }

    /// Profile index after `agent` switches to `action`.
    pub fn deviate(&self, profile: usize, agent: usize, action: usize) -> usize {
        let current = self.action_of(profile, agent);
        profile + action * self.strides[agent] - current * self.strides[agent]
    }

    pub fn profile_actions(&self, profile: usize) -> Vec<usize> {
        (0..self.n_agents())
            .map(|k| self.action_of(profile, k))
            .collect()
    }

    /// `Σ_agents U^AG + R^AG`, which equals `E_v[SW(s(v), v)]`.
    pub fn welfare(&self, profile: usize) -> f64 {
        let k = self.n_agents();
        self.utilities[profile * k..(profile + 1) * k]
            .iter()
            .sum::<f64>()
            + self.revenue[profile]
    }

    pub fn agent_value(&self, agent: usize) -> f64 {
        let id = self.agents[agent];
        self.populations[id.population].types[id.type_index]
    }
}

/// `∏_i |A_i|^{|𝒱_i|}`, saturating.
pub fn agent_profile_count(mechanism: &Mechanism, populations: &[Population]) -> u128 {
    let mut total: u128 = 1;
    for (i, p) in populations.iter().enumerate() {
        for _ in 0..p.types.len() {
            total = total.saturating_mul(mechanism.actions().len(i) as u128);
        }
    }
    total
}

pub fn build_agent_game(mechanism: &Mechanism, populations: &[Population]) -> Result<AgentGame> {
    build_agent_game_capped(mechanism, populations, DEFAULT_TENSOR_CAP)
}

pub fn build_agent_game_capped(
    mechanism: &Mechanism,
    populations: &[Population],
    cap: u128,
) -> Result<AgentGame> {
    let n = mechanism.n_players();
    if populations.len() != n {
        return Err(invalid(format!(
            "{} populations given for a {n}-player mechanism",
            populations.len()
        )));
    }
    if populations.iter().any(|p| p.types.is_empty()) {
        return Err(invalid("every population needs at least one type"));
    }
    let size = agent_profile_count(mechanism, populations);
    if size > cap {
        return Err(Error::CapExceeded {
            what: "agent game strategy space",
            size,
            cap,
        });
    }
    let type_space = product_value_space(
        &populations
            .iter()
            .map(|p| p.types.clone())
            .collect::<Vec<_>>(),
    );
    for v in &type_space {
        mechanism.validate_values(v)?;
    }
    let type_indices = {
        let mut odo = Odometer::new(populations.iter().map(|p| p.types.len()).collect());
        let mut out = Vec::new();
        while let Some(idx) = odo.get() {
            out.push(idx.to_vec());
            odo.advance();
        }
        out
    };
    let layout = AgentLayout::new(populations);
    let agents: Vec<AgentId> = layout.agents().collect();
    let radices: Vec<usize> = agents
        .iter()
        .map(|id| mechanism.actions().len(id.population))
        .collect();
    let mut strides = vec![1; agents.len()];
    for k in (0..agents.len().saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * radices[k + 1];
    }
    let n_profiles = size as usize;
    let n_agents = agents.len();
    let weight = 1.0 / type_space.len() as f64;

    let mut utilities = vec![0.0; n_profiles * n_agents];
    let mut revenue = vec![0.0; n_profiles];
    let mut bids = vec![0.0; n];
    let mut odo = Odometer::new(radices.clone());
    let mut s = 0;
    while let Some(actions) = odo.get() {
        let row = &mut utilities[s * n_agents..(s + 1) * n_agents];
        for (v, idx) in type_space.iter().zip(&type_indices) {
            for i in 0..n {
                let k = layout.flat(AgentId {
                    population: i,
                    type_index: idx[i],
                });
                bids[i] = mechanism.actions().bid(i, actions[k]);
            }
            for i in 0..n {
                let k = layout.flat(AgentId {
                    population: i,
                    type_index: idx[i],
                });
                row[k] += weight * mechanism.utility(i, &bids, v);
            }
            revenue[s] += weight * mechanism.revenue(&bids);
        }
        s += 1;
        odo.advance();
    }
    let expected_opt = type_space
        .iter()
        .map(|v| mechanism.optimal_welfare_unchecked(v))
        .sum::<f64>()
        * weight;
    Ok(AgentGame {
        populations: populations.to_vec(),
        layout,
        agents,
        radices,
        strides,
        utilities,
        revenue,
        expected_opt,
    })
}

/// The resampling deviation of agent `(i, v_i)`: draw `w` from the type
/// distribution and play `a*_i(v_i, w_{−i})`, as an exact mixture.
pub fn lifted_deviation(
    mechanism: &Mechanism,
    game: &AgentGame,
    rule: &dyn DeviationRule,
    agent: usize,
) -> Result<Vec<f64>> {
    let id = game.agents[agent];
    let i = id.population;
    let mut others: Vec<Vec<f64>> = game.populations.iter().map(|p| p.types.clone()).collect();
    others[i] = vec![game.agent_value(agent)];
    let profiles = product_value_space(&others);
    let w = 1.0 / profiles.len() as f64;
    let mut mix = vec![0.0; game.radices[agent]];
    for v in &profiles {
        let d = rule.deviation(mechanism, i, v)?;
        for (a, p) in d.iter() {
            if a >= mix.len() {
                return Err(invalid(format!(
                    "deviation of player {i} puts mass on action {a} outside its grid"
                )));
            }
            mix[a] += w * p;
        }
    }
    Ok(mix)
}

/// Checks `Σ_agents E[U^AG(dev, s_{−agent})] ≥ λ·E[Opt] − μ·R^AG(s)` for every
/// agent-game profile `s`.
pub fn lift_smoothness_check(
    mechanism: &Mechanism,
    game: &AgentGame,
    rule: &dyn DeviationRule,
    params: SmoothnessParams,
) -> Result<SmoothnessReport> {
    let deviations: Vec<Vec<f64>> = (0..game.n_agents())
        .map(|k| lifted_deviation(mechanism, game, rule, k))
        .collect::<Result<_>>()?;
    let target = params.lambda * game.expected_opt;
    let mut worst = f64::INFINITY;
    let mut worst_profile = 0;
    for s in 0..game.n_profiles() {
        let mut lhs = 0.0;
        for (k, dev) in deviations.iter().enumerate() {
            for (a, &p) in dev.iter().enumerate() {
                if p > 0.0 {
                    lhs += p * game.utility(game.deviate(s, k, a), k);
                }
            }
        }
        let slack = lhs - target + params.mu * game.revenue[s];
        if slack < worst {
            worst = slack;
            worst_profile = s;
        }
    }
    let actions = game
        .profile_actions(worst_profile)
        .iter()
        .enumerate()
        .map(|(k, &a)| mechanism.actions().bid(game.agents[k].population, a))
        .collect();
    let values = (0..game.n_agents()).map(|k| game.agent_value(k)).collect();
    Ok(SmoothnessReport {
        lambda: params.lambda,
        mu: params.mu,
        holds: worst >= -SLACK_TOL,
        worst_slack: worst,
        witness: Some(Witness { actions, values }),
        checked_pairs: game.n_profiles() as u64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CceLpSolution {
    /// Probability of every agent-game profile, in profile order.
    pub distribution: Vec<f64>,
    /// Expected welfare under the distribution.
    pub objective: f64,
    /// One slack per (agent, fixed deviation), agent-major.
    pub slacks: Vec<f64>,
    pub iterations: usize,
}

impl CceLpSolution {
    /// Profiles with positive mass.
    pub fn support(&self) -> Vec<(usize, f64)> {
        self.distribution
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(s, &p)| (s, p))
            .collect()
    }
}

/// Coarse-equilibrium constraint rows: for agent `k` and fixed action `a`,
/// the coefficient of profile `s` is `U_k(s) − U_k(a, s_{−k})`.
pub fn cce_constraint_rows(game: &AgentGame) -> Vec<Vec<f64>> {
    let mut rows = Vec::new();
    for k in 0..game.n_agents() {
        for a in 0..game.radices[k] {
            rows.push(
                (0..game.n_profiles())
                    .map(|s| game.utility(s, k) - game.utility(game.deviate(s, k, a), k))
                    .collect(),
            );
        }
    }
    rows
}

/// Slacks of every coarse-equilibrium constraint under `distribution`,
/// evaluated from the payoff tables.
pub fn cce_slacks(game: &AgentGame, distribution: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    for k in 0..game.n_agents() {
        for a in 0..game.radices[k] {
            let mut played = 0.0;
            let mut deviated = 0.0;
            for (s, &p) in distribution.iter().enumerate() {
                if p != 0.0 {
                    played += p * game.utility(s, k);
                    deviated += p * game.utility(game.deviate(s, k, a), k);
                }
            }
            out.push(played - deviated);
        }
    }
    out
}

pub fn expected_welfare(game: &AgentGame, distribution: &[f64]) -> f64 {
    distribution
        .iter()
        .enumerate()
        .map(|(s, &p)| p * game.welfare(s))
        .sum()
}

pub fn worst_cce_welfare(game: &AgentGame) -> Result<CceLpSolution> {
    worst_cce_welfare_capped(game, DEFAULT_LP_CAP)
}

/// Minimum expected welfare over coarse correlated equilibria of the agent
/// game.
pub fn worst_cce_welfare_capped(game: &AgentGame, cap: u128) -> Result<CceLpSolution> {
    let size = game.n_profiles() as u128;
    if size > cap {
        return Err(Error::CapExceeded {
            what: "CCE linear program variable count",
            size,
            cap,
        });
    }
    let objective: Vec<f64> = (0..game.n_profiles()).map(|s| game.welfare(s)).collect();
    let mut lp = LinearProgram::new(objective);
    for row in cce_constraint_rows(game) {
        lp.add(row, Relation::Ge, 0.0);
    }
    lp.add(vec![1.0; game.n_profiles()], Relation::Eq, 1.0);
    let sol = lp.solve()?;
    let total: f64 = sol.x.iter().sum();
    let distribution: Vec<f64> = sol.x.iter().map(|x| x / total).collect();
    let slacks = cce_slacks(game, &distribution);
    Ok(CceLpSolution {
        objective: expected_welfare(game, &distribution),
        distribution,
        slacks,
        iterations: sol.iterations,
    })
}

/// Round-robin best-response dynamics from the all-zero profile. Returns a
/// pure Nash equilibrium profile if one is reached within `max_sweeps`.
pub fn best_response_nash(game: &AgentGame, max_sweeps: usize) -> Option<usize> {
    let mut s = 0;
    for _ in 0..max_sweeps {
        let mut changed = false;
        for k in 0..game.n_agents() {
            let current = game.utility(s, k);
            let mut best = (game.action_of(s, k), current);
            for a in 0..game.radices[k] {
                let u = game.utility(game.deviate(s, k, a), k);
                if u > best.1 + 1e-12 {
                    best = (a, u);
                }
            }
            if best.0 != game.action_of(s, k) {
                s = game.deviate(s, k, best.0);
                changed = true;
            }
        }
        if !changed {
            return Some(s);
        }
    }
    None
}
