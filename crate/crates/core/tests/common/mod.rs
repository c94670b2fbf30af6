#![allow(dead_code)]

use std::collections::VecDeque;
use std::path::PathBuf;

use dmr_kit::analysis::{check_irreducible, stationary_distribution, tarjan_scc};
use dmr_kit::chain::{build_chain, BuildOptions, ChainState, ExpansionOrder, MarkovChain};
use dmr_kit::model::{ExecDistribution, TaskSpec};
use dmr_kit::supply::{tdma, BoundPair, SupplyCurve, SupplyModel};
use dmr_kit::{rat, Rat};
use proptest::prelude::*;

pub fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

pub fn two_point_task(deadline: i64, dismiss: i64) -> TaskSpec {
    TaskSpec::new(
        ExecDistribution::from_pairs([(rat!(2), rat!(1, 2)), (rat!(3), rat!(1, 2))]),
        rat!(4),
        rat!(deadline),
        rat!(dismiss),
    )
    .unwrap()
}

/// T = D = 4, δ = 1, execution time 2 or 3 with probability 1/2 each.
pub fn example_task() -> TaskSpec {
    two_point_task(4, 1)
}

fn curve(points: &[(i64, i64)]) -> SupplyCurve {
    SupplyCurve::new(points.iter().map(|&(t, v)| (rat!(t), rat!(v))).collect()).unwrap()
}

/// Supply left over by a higher-priority task of period 3 and execution
/// time 1, seen in periods of length 4.
pub fn interference_supply() -> SupplyModel {
    SupplyModel::exact(vec![
        curve(&[(0, 0), (1, 0), (3, 2), (4, 2)]),
        curve(&[(0, 0), (2, 2), (3, 2), (4, 3)]),
        curve(&[(0, 0), (1, 1), (2, 1), (4, 3)]),
    ])
    .unwrap()
}

pub fn interference_tdma() -> SupplyModel {
    tdma(&rat!(4), &rat!(3), &rat!(1), &rat!(2)).unwrap()
}

/// Upper and lower supply bounds around [`interference_supply`].
pub fn interference_bounds() -> SupplyModel {
    let first = BoundPair {
        upper: curve(&[(0, 0), (2, 2), (4, 2)]),
        lower: curve(&[(0, 0), (2, 0), (4, 2)]),
    };
    let other = BoundPair {
        upper: curve(&[(0, 0), (3, 3), (4, 3)]),
        lower: curve(&[(0, 0), (1, 0), (4, 3)]),
    };
    SupplyModel::bounds(vec![first, other.clone(), other]).unwrap()
}

pub fn options() -> BuildOptions {
    BuildOptions::default()
}

pub fn state(phase: usize, missed: bool, rem: i64) -> ChainState {
    ChainState::new(phase, missed, rat!(rem))
}

/// Every sequence of `n` execution times with its probability.
pub fn realizations(task: &TaskSpec, n: usize) -> Vec<(Vec<Rat>, Rat)> {
    let mut out = vec![(Vec::new(), Rat::one())];
    for _ in 0..n {
        let mut next = Vec::with_capacity(out.len() * task.exec.len());
        for (seq, p) in &out {
            for e in task.exec.entries() {
                let mut s = seq.clone();
                s.push(e.value.clone());
                next.push((s, p * &e.prob));
            }
        }
        out = next;
    }
    out
}

/// A randomly generated valid scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub task: TaskSpec,
    pub supply: SupplyModel,
}

/// Increments of 0 or 1 per unit step give integer-breakpoint curves with
/// slopes in {0, 1}.
fn steps_curve(steps: &[bool]) -> SupplyCurve {
    let mut points = vec![(Rat::zero(), Rat::zero())];
    let mut v = 0i64;
    for (i, &up) in steps.iter().enumerate() {
        v += i64::from(up);
        points.push((rat!(i as i64 + 1), rat!(v)));
    }
    SupplyCurve::simplified(points).unwrap()
}

fn halved(steps: &[bool], upper: bool) -> SupplyCurve {
    let mut points = vec![(Rat::zero(), Rat::zero())];
    let mut v = Rat::zero();
    for (i, &up) in steps.iter().enumerate() {
        let inc = if upper {
            (rat!(i64::from(up)) + Rat::one()) / rat!(2)
        } else {
            rat!(i64::from(up), 2)
        };
        v += &inc;
        points.push((rat!(i as i64 + 1), v.clone()));
    }
    SupplyCurve::simplified(points).unwrap()
}

/// Concrete curves and bounds `c / 2 <= c <= (c + t) / 2` around them.
pub fn sandwiched(curves: &[Vec<bool>]) -> (SupplyModel, SupplyModel) {
    let concrete = SupplyModel::exact(curves.iter().map(|c| steps_curve(c)).collect()).unwrap();
    let bounds = SupplyModel::bounds(
        curves
            .iter()
            .map(|c| BoundPair {
                upper: halved(c, true),
                lower: halved(c, false),
            })
            .collect(),
    )
    .unwrap();
    (concrete, bounds)
}

pub fn arb_exec(max_len: usize) -> impl Strategy<Value = ExecDistribution> {
    (
        proptest::collection::btree_set(0i64..10, 1..=max_len),
        proptest::collection::vec(1i64..5, max_len),
        1i64..3,
    )
        .prop_map(|(values, weights, den)| {
            let weights = &weights[..values.len()];
            let total: i64 = weights.iter().sum();
            ExecDistribution::from_pairs(
                values
                    .into_iter()
                    .zip(weights)
                    .map(|(v, w)| (rat!(v, den), rat!(*w, total))),
            )
        })
}

fn arb_curve_steps(period: usize) -> impl Strategy<Value = Vec<bool>> {
    proptest::collection::vec(any::<bool>(), period)
}

/// Exact, TDMA or bounds supply for a small random task.
pub fn arb_scenario() -> impl Strategy<Value = Scenario> {
    (2usize..6, 1usize..4)
        .prop_flat_map(|(period, q)| {
            (
                Just(period),
                arb_exec(3),
                1i64..9,
                0i64..6,
                proptest::collection::vec(arb_curve_steps(period), q),
                0u8..3,
                (1i64..4, 0i64..3, 1i64..3),
            )
        })
        .prop_map(|(period, exec, deadline, dismiss, curves, kind, (cycle, start, len))| {
            let period = rat!(period as i64);
            let task = TaskSpec::new(exec, period.clone(), rat!(deadline), rat!(dismiss)).unwrap();
            let supply = match kind {
                0 => sandwiched(&curves).0,
                1 => sandwiched(&curves).1,
                _ => {
                    let cycle = rat!(cycle + 1);
                    let start = rat!(start).min(&cycle - Rat::one());
                    let len = rat!(len).min(&cycle - &start);
                    tdma(&period, &cycle, &start, &len).unwrap()
                }
            };
            Scenario { task, supply }
        })
}

/// Mutual reachability by breadth-first search from every state.
pub fn reachability(chain: &MarkovChain) -> Vec<Vec<bool>> {
    let adj = chain.adjacency();
    (0..chain.len())
        .map(|s| {
            let mut seen = vec![false; chain.len()];
            seen[s] = true;
            let mut queue = VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                for &v in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
            seen
        })
        .collect()
}

/// Chain invariants checked on every generated scenario.
pub fn check_chain_properties(sc: &Scenario) -> Result<(), String> {
    let opts = BuildOptions {
        max_states: 20_000,
        ..BuildOptions::default()
    };
    let chain = build_chain(&sc.task, &sc.supply, &opts).map_err(|e| e.to_string())?;
    let n = chain.len();
    let q = chain.repeat_q();

    for s in 0..n {
        let total: Rat = chain.outgoing(s).iter().map(|(_, p)| p).sum();
        if total != Rat::one() {
            return Err(format!("column {s} sums to {total}"));
        }
        let phase = chain.states()[s].phase;
        for (r, _) in chain.outgoing(s) {
            if chain.states()[*r].phase != (phase + 1) % q {
                return Err(format!("edge {s} -> {r} breaks the phase cycle"));
            }
        }
    }
    let lambda_total: Rat = chain.lambda().iter().sum();
    if lambda_total != Rat::one() {
        return Err(format!("initial distribution sums to {lambda_total}"));
    }
    for (s, l) in chain.lambda().iter().enumerate() {
        if !l.is_zero() && chain.states()[s].phase != 0 {
            return Err(format!("initial state {s} is not in phase 0"));
        }
    }

    let reach = reachability(&chain);
    let comps = tarjan_scc(&chain.adjacency());
    let mut comp_of = vec![usize::MAX; n];
    for (c, members) in comps.iter().enumerate() {
        for &s in members {
            comp_of[s] = c;
        }
    }
    for a in 0..n {
        for b in 0..n {
            let mutual = reach[a][b] && reach[b][a];
            if mutual != (comp_of[a] == comp_of[b]) {
                return Err(format!("components disagree with reachability for {a}, {b}"));
            }
        }
    }
    let (irreducible, _) = check_irreducible(&chain);
    if irreducible != reach.iter().all(|row| row.iter().all(|&x| x)) {
        return Err("irreducibility verdict disagrees with reachability".into());
    }

    if irreducible {
        let pi = stationary_distribution(&chain).map_err(|e| e.to_string())?;
        let mut image = vec![Rat::zero(); n];
        for (s, ps) in pi.iter().enumerate() {
            for (r, p) in chain.outgoing(s) {
                image[*r] += p * ps;
            }
        }
        if image != pi {
            return Err("P pi differs from pi".into());
        }
        let total: Rat = pi.iter().sum();
        if total != Rat::one() {
            return Err(format!("pi sums to {total}"));
        }
    }

    let again = build_chain(&sc.task, &sc.supply, &opts).map_err(|e| e.to_string())?;
    if again != chain {
        return Err("rebuilding gave a different chain".into());
    }
    for order in [ExpansionOrder::Fifo, ExpansionOrder::Lifo] {
        let other = build_chain(
            &sc.task,
            &sc.supply,
            &BuildOptions {
                order,
                ..opts.clone()
            },
        )
        .map_err(|e| e.to_string())?;
        if other != chain {
            return Err(format!("{order:?} expansion gave a different chain"));
        }
    }
    Ok(())
}

/// Replays every realization of the first `n` jobs through the tracer and
/// along the chain; returns `(realizations, mismatches)`. A mismatch is a
/// differing hit/miss or backlog, or a path step the chain does not have.
pub fn trace_path_mismatches(task: &TaskSpec, supply: &SupplyModel, n: usize) -> (usize, usize) {
    use dmr_kit::chain::realization_path;
    use dmr_kit::sim::trace_jobs;
    let chain = build_chain(task, supply, &options()).unwrap();
    let all = realizations(task, n);
    let mut mismatches = 0;
    for (seq, _) in &all {
        let trace = trace_jobs(task, supply, seq).unwrap();
        let path = realization_path(task, supply, &options(), seq).unwrap();
        let same_outcomes = trace
            .iter()
            .zip(&path)
            .all(|(job, st)| job.missed == st.missed && job.backlog == st.rem);
        let idx: Vec<Option<usize>> = path.iter().map(|s| chain.index_of(s)).collect();
        let in_chain = idx.iter().all(Option::is_some)
            && !chain.lambda()[idx[0].unwrap()].is_zero()
            && idx
                .windows(2)
                .all(|w| !chain.prob(w[1].unwrap(), w[0].unwrap()).is_zero());
        if trace.len() != path.len() || !same_outcomes || !in_chain {
            mismatches += 1;
        }
    }
    (all.len(), mismatches)
}

/// Exact scenarios with at most three execution times.
pub fn lemma_scenarios() -> Vec<(&'static str, TaskSpec, SupplyModel)> {
    let three_point = TaskSpec::new(
        ExecDistribution::from_pairs([
            (rat!(1), rat!(1, 3)),
            (rat!(5, 2), rat!(1, 2)),
            (rat!(4), rat!(1, 6)),
        ]),
        rat!(4),
        rat!(5),
        rat!(2),
    )
    .unwrap();
    let dedicated = TaskSpec::new(
        ExecDistribution::from_pairs([(rat!(1, 2), rat!(1, 4)), (rat!(7, 4), rat!(3, 4))]),
        rat!(3, 2),
        rat!(2),
        rat!(1, 2),
    )
    .unwrap();
    vec![
        ("interference, D = 4, δ = 1", example_task(), interference_supply()),
        ("interference, D = 6, δ = 0", two_point_task(6, 0), interference_supply()),
        ("tdma, three execution times", three_point, interference_tdma()),
        (
            "dedicated half-rate processor",
            dedicated,
            SupplyModel::single(
                SupplyCurve::new(vec![(rat!(0), rat!(0)), (rat!(3, 2), rat!(3, 4))]).unwrap(),
            ),
        ),
    ]
}

/// Most misses among realizations sharing a chain path prefix never exceed
/// the misses on that path. Returns the number of violating prefixes.
pub fn bound_prefix_violations(
    task: &TaskSpec,
    bounds: &SupplyModel,
    concrete: &SupplyModel,
    n: usize,
    opts: &BuildOptions,
) -> usize {
    use dmr_kit::chain::realization_path;
    use dmr_kit::sim::trace_jobs;
    let mut violations = 0;
    for (seq, _) in realizations(task, n) {
        let trace = trace_jobs(task, concrete, &seq).unwrap();
        let path = realization_path(task, bounds, opts, &seq).unwrap();
        let (mut real, mut bound) = (0, 0);
        for (job, st) in trace.iter().zip(&path) {
            real += usize::from(job.missed);
            bound += usize::from(st.missed);
            if real > bound {
                violations += 1;
                break;
            }
        }
    }
    violations
}
