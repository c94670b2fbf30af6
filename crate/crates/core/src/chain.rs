//! Construction of the finite job-state Markov chain.
//!
//! A state records the supply phase of the job, whether the job missed its
//! deadline, and the backlog carried past the end of its period that will
//! still be served (work discarded at dismiss points is already removed).
//! Successor states depend only on that backlog and the next job's phase,
//! so identical `(phase, missed, rem)` triples are merged and the chain
//! stays finite.

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::TaskSpec;
use crate::supply::{SupplyMode, SupplyModel};
use crate::Rat;

pub const DEFAULT_MAX_STATES: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct ChainState {
    /// `(job index - 1) mod Q`
    pub phase: usize,
    pub missed: bool,
    pub rem: Rat,
}

impl ChainState {
    pub fn new(phase: usize, missed: bool, rem: Rat) -> Self {
        ChainState { phase, missed, rem }
    }

    pub fn label(&self) -> String {
        format!(
            "({}, {}, {})",
            self.phase,
            if self.missed { "↯" } else { "✓" },
            self.rem
        )
    }
}

/// Order in which unexpanded states are visited. Every order yields the same
/// chain once states are put in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExpansionOrder {
    /// Drain all pending states of one phase, then move to the next phase.
    #[default]
    RoundRobin,
    Fifo,
    Lifo,
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub max_states: usize,
    /// In bounds mode, subtract the lower curve's period supply from the
    /// backlog of a job that meets its deadline too (instead of the upper
    /// curve's). Has no effect in exact mode.
    pub conservative_backlog: bool,
    pub order: ExpansionOrder,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            max_states: DEFAULT_MAX_STATES,
            conservative_backlog: false,
            order: ExpansionOrder::RoundRobin,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainKind {
    Exact,
    Bounds,
    /// Assembled by hand rather than built from a task.
    Custom,
}

/// Service quantities a job of one phase sees. They depend only on the
/// phase, so they are computed once per build.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhaseService {
    /// Service available by the deadline; the job hits iff backlog plus its
    /// own work fits in it.
    pub by_deadline: Rat,
    /// Service available by the dismiss point.
    pub by_dismiss: Rat,
    /// Period supply subtracted from the backlog after a hit.
    pub hit_period: Rat,
    /// Period supply subtracted from the backlog after a miss.
    pub miss_period: Rat,
}

impl PhaseService {
    /// Outcome of a job with execution time `exec` arriving behind `rem`
    /// units of backlog.
    pub fn step(&self, rem: &Rat, exec: &Rat) -> (bool, Rat) {
        let demand = rem + exec;
        if demand <= self.by_deadline {
            let carry = (&demand - &self.hit_period).max(Rat::zero());
            (false, carry)
        } else {
            let kept = demand.min(self.by_dismiss.clone());
            let carry = (kept - &self.miss_period).max(Rat::zero());
            (true, carry)
        }
    }
}

pub fn phase_services(
    task: &TaskSpec,
    supply: &SupplyModel,
    conservative_backlog: bool,
) -> Result<Vec<PhaseService>> {
    supply.check_period(&task.period)?;
    let q = supply.repeat_q();
    let horizon = task.dismiss_horizon();
    (0..q)
        .map(|phase| {
            let job = phase as u64 + 1;
            match supply.mode() {
                SupplyMode::Exact(curves) => {
                    let total = curves[phase].total().clone();
                    Ok(PhaseService {
                        by_deadline: supply.service(job, &task.deadline)?,
                        by_dismiss: supply.service(job, &horizon)?,
                        hit_period: total.clone(),
                        miss_period: total,
                    })
                }
                SupplyMode::Bounds(pairs) => {
                    let pair = &pairs[phase];
                    let hit_period = if conservative_backlog {
                        pair.lower.total().clone()
                    } else {
                        pair.upper.total().clone()
                    };
                    Ok(PhaseService {
                        by_deadline: supply.service_l(job, &task.deadline)?,
                        by_dismiss: supply.service_u(job, &horizon)?,
                        hit_period,
                        miss_period: pair.lower.total().clone(),
                    })
                }
            }
        })
        .collect()
}

/// Outcomes of one job for every execution time, merged by `(missed, rem)`
/// in first-seen order.
fn successors(
    task: &TaskSpec,
    svc: &PhaseService,
    phase: usize,
    rem: &Rat,
) -> Vec<(ChainState, Rat)> {
    let mut out: Vec<(ChainState, Rat)> = Vec::with_capacity(task.exec.len());
    for outcome in task.exec.entries() {
        let (missed, carry) = svc.step(rem, &outcome.value);
        let next = ChainState::new(phase, missed, carry);
        match out.iter_mut().find(|(s, _)| *s == next) {
            Some((_, p)) => *p += &outcome.prob,
            None => out.push((next, outcome.prob.clone())),
        }
    }
    out
}

/// Phase-0 states of the first job (no prior backlog) and their initial
/// probabilities.
pub fn init_states(
    task: &TaskSpec,
    supply: &SupplyModel,
    options: &BuildOptions,
) -> Result<Vec<(ChainState, Rat)>> {
    let svc = phase_services(task, supply, options.conservative_backlog)?;
    Ok(successors(task, &svc[0], 0, &Rat::zero()))
}

/// Successors of `state`: the states of the next job (phase advanced by one
/// mod `Q`) with their transition probabilities.
pub fn expand_state(
    state: &ChainState,
    task: &TaskSpec,
    supply: &SupplyModel,
    options: &BuildOptions,
) -> Result<Vec<(ChainState, Rat)>> {
    let svc = phase_services(task, supply, options.conservative_backlog)?;
    let next = (state.phase + 1) % svc.len();
    Ok(successors(task, &svc[next], next, &state.rem))
}

/// Chain states visited by jobs `1..=n` for one realization of execution
/// times, starting from an empty backlog.
pub fn realization_path(
    task: &TaskSpec,
    supply: &SupplyModel,
    options: &BuildOptions,
    realization: &[Rat],
) -> Result<Vec<ChainState>> {
    let svc = phase_services(task, supply, options.conservative_backlog)?;
    let mut rem = Rat::zero();
    let mut path = Vec::with_capacity(realization.len());
    for (j, exec) in realization.iter().enumerate() {
        let phase = j % svc.len();
        let (missed, carry) = svc[phase].step(&rem, exec);
        path.push(ChainState::new(phase, missed, carry.clone()));
        rem = carry;
    }
    Ok(path)
}

/// Finite Markov chain over job states.
///
/// `P[r][s]` is the probability of moving from state `s` to state `r`; it is
/// stored sparsely as the outgoing list of each source state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkovChain {
    states: Vec<ChainState>,
    outgoing: Vec<Vec<(usize, Rat)>>,
    lambda: Vec<Rat>,
    miss_states: Vec<usize>,
    repeat_q: usize,
    kind: ChainKind,
}

impl MarkovChain {
    /// Assembles a chain from explicit parts, checking that every column of
    /// `P` and `lambda` are probability vectors.
    pub fn from_parts(
        states: Vec<ChainState>,
        outgoing: Vec<Vec<(usize, Rat)>>,
        lambda: Vec<Rat>,
    ) -> Result<Self> {
        let n = states.len();
        if outgoing.len() != n || lambda.len() != n {
            return Err(Error::InvalidSupply(
                "states, transitions and initial distribution differ in length".into(),
            ));
        }
        for (s, out) in outgoing.iter().enumerate() {
            let total: Rat = out.iter().map(|(_, p)| p).sum();
            if total != Rat::one() || out.iter().any(|(r, p)| *r >= n || p.is_negative()) {
                return Err(Error::InvalidSupply(format!(
                    "column {s} is not a probability vector (sums to {total})"
                )));
            }
        }
        let total: Rat = lambda.iter().sum();
        if total != Rat::one() || lambda.iter().any(Rat::is_negative) {
            return Err(Error::InvalidSupply(
                "initial distribution is not a probability vector".into(),
            ));
        }
        let repeat_q = states.iter().map(|s| s.phase + 1).max().unwrap_or(1);
        Ok(Self::assemble(states, outgoing, lambda, repeat_q, ChainKind::Custom))
    }

    fn assemble(
        states: Vec<ChainState>,
        outgoing: Vec<Vec<(usize, Rat)>>,
        lambda: Vec<Rat>,
        repeat_q: usize,
        kind: ChainKind,
    ) -> Self {
        let miss_states = states
            .iter()
            .enumerate()
            .filter(|(_, s)| s.missed)
            .map(|(i, _)| i)
            .collect();
        MarkovChain {
            states,
            outgoing,
            lambda,
            miss_states,
            repeat_q,
            kind,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[ChainState] {
        &self.states
    }

    pub fn lambda(&self) -> &[Rat] {
        &self.lambda
    }

    pub fn miss_states(&self) -> &[usize] {
        &self.miss_states
    }

    pub fn repeat_q(&self) -> usize {
        self.repeat_q
    }

    pub fn kind(&self) -> ChainKind {
        self.kind
    }

    /// Outgoing transitions of state `s`: column `s` of `P`.
    pub fn outgoing(&self, s: usize) -> &[(usize, Rat)] {
        &self.outgoing[s]
    }

    pub fn transition_count(&self) -> usize {
        self.outgoing.iter().map(Vec::len).sum()
    }

    pub fn index_of(&self, state: &ChainState) -> Option<usize> {
        self.states.binary_search(state).ok().or_else(|| {
            // custom chains are not necessarily sorted
            self.states.iter().position(|s| s == state)
        })
    }

    /// `P[r][s]`, probability of moving from `s` to `r`.
    pub fn prob(&self, r: usize, s: usize) -> Rat {
        self.outgoing[s]
            .iter()
            .find(|(t, _)| *t == r)
            .map(|(_, p)| p.clone())
            .unwrap_or_else(Rat::zero)
    }

    pub fn dense_matrix(&self) -> Vec<Vec<Rat>> {
        let n = self.len();
        let mut m = vec![vec![Rat::zero(); n]; n];
        for (s, out) in self.outgoing.iter().enumerate() {
            for (r, p) in out {
                m[*r][s] = p.clone();
            }
        }
        m
    }

    /// Graph of nonzero transitions as adjacency lists.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        self.outgoing
            .iter()
            .map(|out| out.iter().filter(|(_, p)| !p.is_zero()).map(|(r, _)| *r).collect())
            .collect()
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph chain {\n  rankdir=LR;\n");
        for (i, s) in self.states.iter().enumerate() {
            let shape = if s.missed { "doubleoctagon" } else { "ellipse" };
            let _ = writeln!(out, "  s{i} [label=\"{}\", shape={shape}];", s.label());
        }
        for (s, edges) in self.outgoing.iter().enumerate() {
            for (r, p) in edges {
                let _ = writeln!(out, "  s{s} -> s{r} [label=\"{p}\"];");
            }
        }
        out.push_str("}\n");
        out
    }

    pub fn to_dump(&self) -> ChainDump {
        ChainDump {
            schema: crate::io::SCHEMA,
            kind: self.kind,
            repeat_q: self.repeat_q,
            states: self
                .states
                .iter()
                .enumerate()
                .map(|(index, s)| DumpState {
                    index,
                    phase: s.phase,
                    missed: s.missed,
                    rem: s.rem.clone(),
                })
                .collect(),
            lambda: self.lambda.clone(),
            transitions: self
                .outgoing
                .iter()
                .enumerate()
                .flat_map(|(from, edges)| {
                    edges.iter().map(move |(to, prob)| DumpTransition {
                        from,
                        to: *to,
                        prob: prob.clone(),
                    })
                })
                .collect(),
            miss_states: self.miss_states.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainDump {
    pub schema: &'static str,
    pub kind: ChainKind,
    pub repeat_q: usize,
    pub states: Vec<DumpState>,
    pub lambda: Vec<Rat>,
    pub transitions: Vec<DumpTransition>,
    pub miss_states: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DumpState {
    pub index: usize,
    pub phase: usize,
    pub missed: bool,
    pub rem: Rat,
}

#[derive(Debug, Clone, Serialize)]
pub struct DumpTransition {
    pub from: usize,
    pub to: usize,
    pub prob: Rat,
}

struct Builder {
    index: HashMap<ChainState, usize>,
    states: Vec<ChainState>,
    outgoing: Vec<Option<Vec<(usize, Rat)>>>,
    max_states: usize,
    backlog_cap: Rat,
}

impl Builder {
    fn intern(&mut self, state: ChainState) -> Result<(usize, bool)> {
        if let Some(&i) = self.index.get(&state) {
            return Ok((i, false));
        }
        if self.states.len() >= self.max_states {
            return Err(Error::StateBudgetExceeded {
                limit: self.max_states,
            });
        }
        assert!(
            !state.rem.is_negative() && state.rem <= self.backlog_cap,
            "backlog {} outside [0, {}]",
            state.rem,
            self.backlog_cap
        );
        let i = self.states.len();
        self.index.insert(state.clone(), i);
        self.states.push(state);
        self.outgoing.push(None);
        Ok((i, true))
    }
}

/// Builds the chain by expanding every state without outgoing transitions
/// until none is left, reusing existing states whenever `(phase, missed,
/// rem)` matches. States are returned in canonical `(phase, missed, rem)`
/// order.
pub fn build_chain(
    task: &TaskSpec,
    supply: &SupplyModel,
    options: &BuildOptions,
) -> Result<MarkovChain> {
    if options.max_states == 0 {
        return Err(Error::StateBudgetExceeded { limit: 0 });
    }
    let report = crate::model::validate_task(task);
    if !report.is_valid() {
        return Err(Error::InvalidTask(report));
    }
    let svc = phase_services(task, supply, options.conservative_backlog)?;
    let q = svc.len();
    let backlog_cap = svc
        .iter()
        .map(|s| s.by_dismiss.clone())
        .max()
        .unwrap_or_else(Rat::zero);

    let mut b = Builder {
        index: HashMap::new(),
        states: Vec::new(),
        outgoing: Vec::new(),
        max_states: options.max_states,
        backlog_cap,
    };

    let mut lambda_sparse: Vec<(usize, Rat)> = Vec::new();
    let mut pending_by_phase: Vec<VecDeque<usize>> = vec![VecDeque::new(); q];
    let mut pending: VecDeque<usize> = VecDeque::new();
    let round_robin = options.order == ExpansionOrder::RoundRobin;

    for (state, p) in successors(task, &svc[0], 0, &Rat::zero()) {
        let (i, fresh) = b.intern(state)?;
        lambda_sparse.push((i, p));
        if fresh {
            if round_robin {
                pending_by_phase[0].push_back(i);
            } else {
                pending.push_back(i);
            }
        }
    }

    let mut cursor = 0usize;
    let mut idle_phases = 0usize;
    loop {
        let next = if round_robin {
            match pending_by_phase[cursor].pop_front() {
                Some(i) => {
                    idle_phases = 0;
                    Some(i)
                }
                None => {
                    idle_phases += 1;
                    if idle_phases > q {
                        None
                    } else {
                        cursor = (cursor + 1) % q;
                        continue;
                    }
                }
            }
        } else if options.order == ExpansionOrder::Fifo {
            pending.pop_front()
        } else {
            pending.pop_back()
        };
        let Some(s) = next else { break };

        let state = b.states[s].clone();
        let next_phase = (state.phase + 1) % q;
        let mut edges = Vec::new();
        for (succ, p) in successors(task, &svc[next_phase], next_phase, &state.rem) {
            let (r, fresh) = b.intern(succ)?;
            if fresh {
                if round_robin {
                    pending_by_phase[next_phase].push_back(r);
                } else {
                    pending.push_back(r);
                }
            }
            edges.push((r, p));
        }
        b.outgoing[s] = Some(edges);
    }

    // canonical order
    let n = b.states.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| b.states[x].cmp(&b.states[y]));
    let mut new_index = vec![0usize; n];
    for (new, &old) in order.iter().enumerate() {
        new_index[old] = new;
    }
    let states: Vec<ChainState> = order.iter().map(|&old| b.states[old].clone()).collect();
    let outgoing: Vec<Vec<(usize, Rat)>> = order
        .iter()
        .map(|&old| {
            let mut edges: Vec<(usize, Rat)> = b.outgoing[old]
                .take()
                .expect("every state is expanded before construction ends")
                .into_iter()
                .map(|(r, p)| (new_index[r], p))
                .collect();
            edges.sort_by_key(|(r, _)| *r);
            edges
        })
        .collect();
    let mut lambda = vec![Rat::zero(); n];
    for (i, p) in lambda_sparse {
        lambda[new_index[i]] += p;
    }

    let kind = if supply.is_exact() {
        ChainKind::Exact
    } else {
        ChainKind::Bounds
    };
    Ok(MarkovChain::assemble(states, outgoing, lambda, q, kind))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ExecDistribution;
    use crate::rat;
    use crate::supply::{tdma, SupplyCurve};

    fn two_point(deadline: i64, dismiss: i64) -> TaskSpec {
        TaskSpec::new(
            ExecDistribution::from_pairs([(rat!(2), rat!(1, 2)), (rat!(3), rat!(1, 2))]),
            rat!(4),
            rat!(deadline),
            rat!(dismiss),
        )
        .unwrap()
    }

    fn supply() -> SupplyModel {
        tdma(&rat!(4), &rat!(3), &rat!(1), &rat!(2)).unwrap()
    }

    fn st(phase: usize, missed: bool, rem: i64) -> ChainState {
        ChainState::new(phase, missed, rat!(rem))
    }

    #[test]
    fn initial_states_of_two_point_task() {
        let init = init_states(&two_point(4, 1), &supply(), &BuildOptions::default()).unwrap();
        assert_eq!(
            init,
            vec![(st(0, false, 0), rat!(1, 2)), (st(0, true, 1), rat!(1, 2))]
        );
    }

    #[test]
    fn always_fitting_job_has_single_initial_state() {
        let task = TaskSpec::new(
            ExecDistribution::from_pairs([(rat!(1), rat!(1))]),
            rat!(4),
            rat!(4),
            rat!(0),
        )
        .unwrap();
        let full = SupplyModel::single(SupplyCurve::dedicated(rat!(4)));
        let init = init_states(&task, &full, &BuildOptions::default()).unwrap();
        assert_eq!(init, vec![(st(0, false, 0), rat!(1))]);
    }

    #[test]
    fn longer_deadline_initial_states() {
        let init = init_states(&two_point(6, 0), &supply(), &BuildOptions::default()).unwrap();
        assert_eq!(
            init,
            vec![(st(0, false, 0), rat!(1, 2)), (st(0, false, 1), rat!(1, 2))]
        );
    }

    #[test]
    fn expansions_with_longer_deadline() {
        let task = two_point(6, 0);
        let opts = BuildOptions::default();
        let from_last = expand_state(&st(2, false, 1), &task, &supply(), &opts).unwrap();
        assert!(from_last.contains(&(st(0, false, 2), rat!(1, 2))));
        let from_first = expand_state(&st(0, false, 2), &task, &supply(), &opts).unwrap();
        assert!(from_first.contains(&(st(1, true, 1), rat!(1, 2))));
        assert!(from_first.contains(&(st(1, false, 1), rat!(1, 2))));
    }

    #[test]
    fn deterministic_cycle() {
        let task = TaskSpec::new(
            ExecDistribution::from_pairs([(rat!(1), rat!(1))]),
            rat!(4),
            rat!(4),
            rat!(0),
        )
        .unwrap();
        let chain = build_chain(&task, &supply(), &BuildOptions::default()).unwrap();
        assert_eq!(chain.len(), 3);
        for s in 0..3 {
            assert_eq!(chain.outgoing(s), &[((s + 1) % 3, rat!(1))]);
        }
        assert!(chain.miss_states().is_empty());
    }

    #[test]
    fn budget_is_enforced() {
        let opts = BuildOptions {
            max_states: 5,
            ..BuildOptions::default()
        };
        let err = build_chain(&two_point(4, 1), &supply(), &opts).unwrap_err();
        assert!(matches!(err, Error::StateBudgetExceeded { limit: 5 }));
        let zero = BuildOptions {
            max_states: 0,
            ..BuildOptions::default()
        };
        assert!(build_chain(&two_point(4, 1), &supply(), &zero).is_err());
    }

    #[test]
    fn period_mismatch_rejected() {
        let other = tdma(&rat!(3), &rat!(3), &rat!(1), &rat!(2)).unwrap();
        assert!(matches!(
            build_chain(&two_point(4, 1), &other, &BuildOptions::default()),
            Err(Error::InvalidSupply(_))
        ));
    }

    #[test]
    fn tie_at_deadline_is_a_hit() {
        let svc = PhaseService {
            by_deadline: rat!(3),
            by_dismiss: rat!(4),
            hit_period: rat!(3),
            miss_period: rat!(3),
        };
        assert_eq!(svc.step(&rat!(1), &rat!(2)), (false, rat!(0)));
        assert_eq!(svc.step(&rat!(1), &rat!(5, 2)), (true, rat!(1, 2)));
        assert_eq!(svc.step(&rat!(1), &rat!(9)), (true, rat!(1)));
    }

    #[test]
    fn dot_and_dump_exports() {
        let chain = build_chain(&two_point(4, 1), &supply(), &BuildOptions::default()).unwrap();
        let dot = chain.to_dot();
        assert!(dot.contains("(0, ↯, 1)"));
        assert!(dot.contains("label=\"1/2\""));
        let dump = serde_json::to_value(chain.to_dump()).unwrap();
        assert_eq!(dump["states"].as_array().unwrap().len(), 6);
        assert_eq!(dump["transitions"].as_array().unwrap().len(), 10);
        assert_eq!(dump["miss_states"].as_array().unwrap().len(), 3);
        assert_eq!(dump["lambda"][0], "1/2");
    }

    #[test]
    fn custom_chain_must_be_stochastic() {
        let states = vec![st(0, false, 0), st(0, true, 0)];
        let bad = MarkovChain::from_parts(
            states.clone(),
            vec![vec![(1, rat!(1, 2))], vec![(0, rat!(1))]],
            vec![rat!(1), rat!(0)],
        );
        assert!(bad.is_err());
        let good = MarkovChain::from_parts(
            states,
            vec![vec![(1, rat!(1))], vec![(0, rat!(1))]],
            vec![rat!(1), rat!(0)],
        )
        .unwrap();
        assert_eq!(good.miss_states(), &[1]);
        assert_eq!(good.prob(1, 0), rat!(1));
        assert_eq!(good.prob(0, 0), rat!(0));
    }
}
