//! The repeated Bayesian population game.
//!
//! Each population holds one learner per type. In every round all agents
//! sample an action, one type per population is drawn uniformly, and the
//! mechanism is played among the drawn agents. Only drawn agents receive
//! feedback; everyone else sits the round out.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::learners::{Agent, LearnerKind, RegretLedger, StepSize};
use crate::mechanism::Mechanism;
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Feedback {
    /// The drawn agent sees its utility for every action against the
    /// realized opponent bids.
    #[default]
    Full,
    /// The drawn agent sees only its realized utility.
    Bandit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Population {
    pub types: Vec<f64>,
}

impl Population {
    pub fn new(types: Vec<f64>) -> Self {
        Self { types }
    }
}

fn default_gamma() -> f64 {
    0.05
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerConfig {
    #[serde(default)]
    pub kind: LearnerKind,
    /// Hedge step size. Ignored by the bandit learner, which uses `eta`.
    #[serde(default)]
    pub step: StepSize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Bandit step size; `γ / K` when absent.
    #[serde(default)]
    pub eta: Option<f64>,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            kind: LearnerKind::Hedge,
            step: StepSize::Anytime,
            gamma: default_gamma(),
            eta: None,
        }
    }
}

impl LearnerConfig {
    fn build(&self, actions: usize, scale: f64) -> Result<Agent> {
        match self.kind {
            LearnerKind::Hedge => Agent::hedge(actions, self.step, scale),
            LearnerKind::Bandit => Agent::bandit(actions, self.gamma, self.eta, scale),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub mechanism: Mechanism,
    pub populations: Vec<Population>,
    pub horizon: u64,
    pub feedback: Feedback,
    pub seed: u64,
    /// One entry per population, or a single entry shared by all.
    pub learners: Vec<LearnerConfig>,
    /// Keep the full strategy table every `record_every` rounds.
    pub record_every: u64,
    /// Matchings per round. Only single matching is implemented.
    pub matchings: u32,
}

impl SimConfig {
    pub fn new(
        mechanism: Mechanism,
        populations: Vec<Population>,
        horizon: u64,
        seed: u64,
    ) -> Self {
        Self {
            mechanism,
            populations,
            horizon,
            feedback: Feedback::Full,
            seed,
            learners: vec![LearnerConfig::default()],
            record_every: 1,
            matchings: 1,
        }
    }

    pub fn learner_for(&self, population: usize) -> &LearnerConfig {
        if self.learners.len() == 1 {
            &self.learners[0]
        } else {
            &self.learners[population]
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.mechanism;
        if self.horizon == 0 {
            return Err(invalid("horizon T must be at least 1"));
        }
        if self.record_every == 0 {
            return Err(invalid("record_every must be at least 1"));
        }
        if self.matchings != 1 {
            return Err(invalid(format!(
                "{} matchings per round requested; only single matching is supported",
                self.matchings
            )));
        }
        if self.populations.len() != m.n_players() {
            return Err(invalid(format!(
                "{} populations given for a {}-player mechanism",
                self.populations.len(),
                m.n_players()
            )));
        }
        for (i, p) in self.populations.iter().enumerate() {
            if p.types.is_empty() {
                return Err(invalid(format!("population {i} has no types")));
            }
            if p.types.len() > u16::MAX as usize {
                return Err(invalid(format!("population {i} has too many types")));
            }
            for (j, &v) in p.types.iter().enumerate() {
                if !(v.is_finite() && (0.0..=m.scale()).contains(&v)) {
                    return Err(invalid(format!(
                        "population {i} type {v} lies outside [0, H = {}]",
                        m.scale()
                    )));
                }
                if p.types[..j].contains(&v) {
                    return Err(invalid(format!("population {i} lists type {v} twice")));
                }
            }
        }
        if self.learners.is_empty()
            || (self.learners.len() != 1 && self.learners.len() != self.populations.len())
        {
            return Err(invalid(
                "learner settings must be a single entry or one entry per population",
            ));
        }
        for i in 0..self.populations.len() {
            let l = self.learner_for(i);
            if l.kind == LearnerKind::Hedge && self.feedback == Feedback::Bandit {
                return Err(invalid(format!(
                    "population {i} uses hedge, which needs full feedback"
                )));
            }
            l.build(m.actions().len(i), m.scale())?;
        }
        Ok(())
    }
}

/// Identifies an agent: a type of a population.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgentId {
    pub population: usize,
    pub type_index: usize,
}

/// Flat indexing of all agents, population by population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentLayout {
    offsets: Vec<usize>,
}

impl AgentLayout {
    pub fn new(populations: &[Population]) -> Self {
        let mut offsets = vec![0];
        for p in populations {
            offsets.push(offsets.last().unwrap() + p.types.len());
        }
        Self { offsets }
    }

    pub fn n_populations(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_agents(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn n_types(&self, population: usize) -> usize {
        self.offsets[population + 1] - self.offsets[population]
    }

    pub fn flat(&self, id: AgentId) -> usize {
        self.offsets[id.population] + id.type_index
    }

    pub fn agents(&self) -> impl Iterator<Item = AgentId> + '_ {
        (0..self.n_populations()).flat_map(move |p| {
            (0..self.n_types(p)).map(move |t| AgentId {
                population: p,
                type_index: t,
            })
        })
    }
}

/// What a round looked like from the outside: drawn types and realized bids.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundContext {
    pub type_indices: Vec<usize>,
    pub values: Vec<f64>,
    pub bids: Vec<f64>,
}

/// Counterfactual utility of every action of `agent` against the realized
/// opponent bids.
pub fn utility_vector_feedback(
    mechanism: &Mechanism,
    round: &RoundContext,
    agent: AgentId,
) -> Result<Vec<f64>> {
    let i = agent.population;
    if i >= mechanism.n_players() || round.type_indices.len() != mechanism.n_players() {
        return Err(invalid("round context does not match the mechanism"));
    }
    if round.type_indices[i] != agent.type_index {
        return Err(Error::Contract(format!(
            "agent {} of population {i} was not selected this round",
            agent.type_index
        )));
    }
    let mut bids = round.bids.clone();
    let grid = mechanism.actions().grid(i);
    Ok(grid
        .iter()
        .map(|&b| {
            bids[i] = b;
            mechanism.utility(i, &bids, &round.values)
        })
        .collect())
}

/// Everything that happened in a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub seed: u64,
    pub populations: Vec<Population>,
    pub layout: AgentLayout,
    pub horizon: u64,
    pub record_every: u64,
    /// Row-major `[round][agent]` action indices, kept for rounds
    /// `t ≡ 0 (mod record_every)` (0-based).
    pub strategies: Vec<u16>,
    /// Row-major `[round][population]` drawn type indices.
    pub type_indices: Vec<u16>,
    /// Row-major `[round][population]` realized action indices.
    pub actions: Vec<u16>,
    pub welfare: Vec<f64>,
    pub optimum: Vec<f64>,
    /// Final regret ledgers, one per agent in layout order.
    pub ledgers: Vec<RegretLedger>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.welfare.len()
    }

    pub fn is_empty(&self) -> bool {
        self.welfare.is_empty()
    }

    pub fn n_populations(&self) -> usize {
        self.populations.len()
    }

    pub fn types_at(&self, t: usize) -> &[u16] {
        let n = self.n_populations();
        &self.type_indices[t * n..(t + 1) * n]
    }

    pub fn actions_at(&self, t: usize) -> &[u16] {
        let n = self.n_populations();
        &self.actions[t * n..(t + 1) * n]
    }

    pub fn values_at(&self, t: usize) -> Vec<f64> {
        self.types_at(t)
            .iter()
            .enumerate()
            .map(|(i, &j)| self.populations[i].types[j as usize])
            .collect()
    }

    /// Number of rounds with a stored strategy table.
    pub fn recorded_rounds(&self) -> usize {
        self.strategies.len() / self.layout.n_agents().max(1)
    }

    /// Round index of the `k`-th stored strategy table.
    pub fn recorded_round(&self, k: usize) -> usize {
        k * self.record_every as usize
    }

    pub fn strategy_row(&self, k: usize) -> &[u16] {
        let a = self.layout.n_agents();
        &self.strategies[k * a..(k + 1) * a]
    }

    /// The full strategy table at round `t`, if it was recorded.
    pub fn strategy_at(&self, t: usize) -> Option<&[u16]> {
        if !t.is_multiple_of(self.record_every as usize) {
            return None;
        }
        let k = t / self.record_every as usize;
        (k < self.recorded_rounds()).then(|| self.strategy_row(k))
    }

    /// Per-round summary CSV: `t, v_idx_1..n, action_1..n, sw, opt` with
    /// 1-based rounds, 0-based type indices and actions as bid values.
    pub fn write_csv<W: Write>(&self, mechanism: &Mechanism, out: W) -> Result<()> {
        let n = self.n_populations();
        let mut w = std::io::BufWriter::new(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("v_idx_{i}")));
        header.extend((1..=n).map(|i| format!("action_{i}")));
        header.push("sw".into());
        header.push("opt".into());
        let io = |e: std::io::Error| invalid(format!("failed to write trace: {e}"));
        writeln!(w, "{}", header.join(",")).map_err(io)?;
        let mut line = String::new();
        for t in 0..self.len() {
            use std::fmt::Write as _;
            line.clear();
            let _ = write!(line, "{}", t + 1);
            for &j in self.types_at(t) {
                let _ = write!(line, ",{j}");
            }
            for (i, &a) in self.actions_at(t).iter().enumerate() {
                let _ = write!(line, ",{}", mechanism.actions().bid(i, a as usize));
            }
            let _ = write!(line, ",{},{}", self.welfare[t], self.optimum[t]);
            writeln!(w, "{line}").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// Strategy sidecar: run metadata and the recorded strategy tables.
    pub fn sidecar(&self) -> StrategySidecar {
        let a = self.layout.n_agents();
        StrategySidecar {
            seed: self.seed,
            horizon: self.horizon,
            record_every: self.record_every,
            populations: self.populations.clone(),
            rounds: (0..self.recorded_rounds())
                .map(|k| StrategyRow {
                    t: self.recorded_round(k) as u64 + 1,
                    s: self.strategies[k * a..(k + 1) * a].to_vec(),
                })
                .collect(),
        }
    }

    /// Rebuilds a trace from its CSV summary and strategy sidecar. Ledgers
    /// are recomputed by replaying the realized rounds.
    pub fn from_parts<R: BufRead>(
        mechanism: &Mechanism,
        csv: R,
        sidecar: StrategySidecar,
    ) -> Result<Self> {
        let n = sidecar.populations.len();
        if n != mechanism.n_players() {
            return Err(invalid(
                "sidecar population count does not match the mechanism",
            ));
        }
        let layout = AgentLayout::new(&sidecar.populations);
        let mut type_indices = Vec::new();
        let mut actions = Vec::new();
        let mut welfare = Vec::new();
        let mut optimum = Vec::new();
        for (lineno, line) in csv.lines().enumerate() {
            let line = line.map_err(|e| invalid(format!("failed to read trace: {e}")))?;
            if lineno == 0 {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 2 * n + 3 {
                return Err(invalid(format!(
                    "trace line {}: expected {} fields, found {}",
                    lineno + 1,
                    2 * n + 3,
                    fields.len()
                )));
            }
            let bad = |what: &str| invalid(format!("trace line {}: bad {what}", lineno + 1));
            for i in 0..n {
                let j: u16 = fields[1 + i].parse().map_err(|_| bad("type index"))?;
                if j as usize >= sidecar.populations[i].types.len() {
                    return Err(bad("type index"));
                }
                type_indices.push(j);
            }
            for i in 0..n {
                let b: f64 = fields[1 + n + i].parse().map_err(|_| bad("action"))?;
                let a = mechanism
                    .actions()
                    .index_of(i, b)
                    .ok_or_else(|| bad("action"))?;
                actions.push(a as u16);
            }
            welfare.push(fields[1 + 2 * n].parse().map_err(|_| bad("sw"))?);
            optimum.push(fields[2 + 2 * n].parse().map_err(|_| bad("opt"))?);
        }
        if welfare.len() as u64 != sidecar.horizon {
            return Err(invalid(format!(
                "trace has {} rounds but the sidecar declares {}",
                welfare.len(),
                sidecar.horizon
            )));
        }
        let mut strategies = Vec::with_capacity(sidecar.rounds.len() * layout.n_agents());
        for row in &sidecar.rounds {
            if row.s.len() != layout.n_agents() {
                return Err(invalid(format!(
                    "strategy row at t = {} has the wrong width",
                    row.t
                )));
            }
            strategies.extend_from_slice(&row.s);
        }
        let mut trace = Trace {
            seed: sidecar.seed,
            populations: sidecar.populations,
            layout,
            horizon: sidecar.horizon,
            record_every: sidecar.record_every.max(1),
            strategies,
            type_indices,
            actions,
            welfare,
            optimum,
            ledgers: Vec::new(),
        };
        trace.ledgers = replay_ledgers(mechanism, &trace, trace.len());
        Ok(trace)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub t: u64,
    pub s: Vec<u16>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySidecar {
    pub seed: u64,
    pub horizon: u64,
    pub record_every: u64,
    pub populations: Vec<Population>,
    pub rounds: Vec<StrategyRow>,
}

/// Ledgers for every agent over the first `upto` rounds of a trace.
pub fn replay_ledgers(mechanism: &Mechanism, trace: &Trace, upto: usize) -> Vec<RegretLedger> {
    let n = trace.n_populations();
    let mut ledgers: Vec<RegretLedger> = trace
        .layout
        .agents()
        .map(|id| RegretLedger::new(mechanism.actions().len(id.population)))
        .collect();
    let mut utilities = Vec::new();
    for t in 0..upto {
        let types = trace.types_at(t);
        let values = trace.values_at(t);
        let mut bids: Vec<f64> = (0..n)
            .map(|i| mechanism.actions().bid(i, trace.actions_at(t)[i] as usize))
            .collect();
        for id in trace.layout.agents() {
            let l = &mut ledgers[trace.layout.flat(id)];
            if types[id.population] as usize != id.type_index {
                l.record_unselected();
                continue;
            }
            let i = id.population;
            let own = bids[i];
            utilities.clear();
            for &b in mechanism.actions().grid(i) {
                bids[i] = b;
                utilities.push(mechanism.utility(i, &bids, &values));
            }
            bids[i] = own;
            l.record(&utilities, trace.actions_at(t)[i] as usize);
        }
    }
    ledgers
}

/// Runs the repeated game for `config.horizon` rounds.
pub fn run_repeated_game(config: &SimConfig) -> Result<Trace> {
    config.validate()?;
    let m = &config.mechanism;
    let n = m.n_players();
    let layout = AgentLayout::new(&config.populations);
    let n_agents = layout.n_agents();
    let horizon = config.horizon as usize;
    let mut rng = SimRng::seed_from_u64(config.seed);

    let mut agents: Vec<Agent> = layout
        .agents()
        .map(|id| {
            config
                .learner_for(id.population)
                .build(m.actions().len(id.population), m.scale())
        })
        .collect::<Result<_>>()?;
    let mut ledgers: Vec<RegretLedger> = layout
        .agents()
        .map(|id| RegretLedger::new(m.actions().len(id.population)))
        .collect();

    let recorded = horizon.div_ceil(config.record_every as usize);
    let mut trace = Trace {
        seed: config.seed,
        populations: config.populations.clone(),
        layout: layout.clone(),
        horizon: config.horizon,
        record_every: config.record_every,
        strategies: Vec::with_capacity(recorded * n_agents),
        type_indices: Vec::with_capacity(horizon * n),
        actions: Vec::with_capacity(horizon * n),
        welfare: Vec::with_capacity(horizon),
        optimum: Vec::with_capacity(horizon),
        ledgers: Vec::new(),
    };

    let mut sampled = vec![0usize; n_agents];
    let mut round = RoundContext {
        type_indices: vec![0; n],
        values: vec![0.0; n],
        bids: vec![0.0; n],
    };
    for t in 0..horizon {
        for (s, agent) in sampled.iter_mut().zip(&agents) {
            *s = agent.sample(&mut rng);
        }
        if t % config.record_every as usize == 0 {
            trace.strategies.extend(sampled.iter().map(|&a| a as u16));
        }
        for i in 0..n {
            let j = rng.below(layout.n_types(i));
            round.type_indices[i] = j;
            round.values[i] = config.populations[i].types[j];
        }
        let mut chosen = vec![0usize; n];
        for i in 0..n {
            let id = AgentId {
                population: i,
                type_index: round.type_indices[i],
            };
            chosen[i] = sampled[layout.flat(id)];
            round.bids[i] = m.actions().bid(i, chosen[i]);
        }
        let outcome = m.play_unchecked(&round.bids, &round.values);
        trace
            .type_indices
            .extend(round.type_indices.iter().map(|&j| j as u16));
        trace.actions.extend(chosen.iter().map(|&a| a as u16));
        trace.welfare.push(outcome.social_welfare());
        trace
            .optimum
            .push(m.optimal_welfare_unchecked(&round.values));

        for id in layout.agents() {
            let k = layout.flat(id);
            if round.type_indices[id.population] != id.type_index {
                ledgers[k].record_unselected();
                continue;
            }
            let i = id.population;
            let utilities = utility_vector_feedback(m, &round, id)?;
            ledgers[k].record(&utilities, chosen[i]);
            match config.feedback {
                Feedback::Full if agents[k].state().kind() == LearnerKind::Hedge => {
                    agents[k].observe_vector(&utilities)?
                }
                _ => agents[k].observe_realized(chosen[i], outcome.utilities[i])?,
            }
        }
    }

    for (id, l) in layout.agents().zip(&ledgers) {
        let k = m.actions().len(id.population) as f64;
        let bound = 2.0 * m.scale() * (k.ln() / l.selected_rounds.max(1) as f64).sqrt();
        let r = l.selected_regret();
        if config.feedback == Feedback::Full && r > bound + 0.01 {
            log::warn!(
                "agent {}/{} regret {r:.5} exceeds 2H*sqrt(ln K / t_sel) = {bound:.5}",
                id.population,
                id.type_index
            );
        }
    }
    trace.ledgers = ledgers;
    Ok(trace)
}
