//! Independent oracles for the chain analysis.
//!
//! [`GpcTracer`] replays a concrete execution-time realization against an
//! exact supply pattern event by event: work is served first-come
//! first-served at the rate given by the current supply segment, supply is
//! wasted while the queue is empty, and whatever is left of a job at its
//! dismiss point is dropped. It does not use the chain's backlog formulas.

use std::collections::VecDeque;

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::compute_dmr;
use crate::chain::{build_chain, BuildOptions};
use crate::error::{Error, Result};
use crate::model::TaskSpec;
use crate::supply::{SupplyCurve, SupplyModel};
use crate::Rat;

#[derive(Debug, Clone)]
struct Pending {
    job: u64,
    remaining: Rat,
    deadline: Rat,
    dismiss: Rat,
}

/// Result of one job in a trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct JobOutcome {
    pub missed: bool,
    /// Work released up to and including this job that is still pending at
    /// the end of its period and is served later (dropped work excluded).
    pub backlog: Rat,
}

/// Event-driven replay of the greedy processing component.
#[derive(Debug, Clone)]
pub struct GpcTracer<'a> {
    task: &'a TaskSpec,
    curves: &'a [SupplyCurve],
    now: Rat,
    released: u64,
    queue: VecDeque<Pending>,
    /// `Some(missed)` once the job completed or was dismissed.
    outcomes: Vec<Option<bool>>,
    dropped: Vec<Rat>,
    /// Pending `(job, remaining)` at each period end, if tracked.
    snapshots: Option<Vec<Vec<(u64, Rat)>>>,
    misses: u64,
    miss_by_phase: Vec<u64>,
}

impl<'a> GpcTracer<'a> {
    pub fn new(task: &'a TaskSpec, supply: &'a SupplyModel, track_backlog: bool) -> Result<Self> {
        supply.check_period(&task.period)?;
        let curves = match supply.mode() {
            crate::supply::SupplyMode::Exact(c) => c.as_slice(),
            crate::supply::SupplyMode::Bounds(_) => {
                return Err(Error::ModeMismatch { expected: "exact" })
            }
        };
        Ok(GpcTracer {
            task,
            curves,
            now: Rat::zero(),
            released: 0,
            queue: VecDeque::new(),
            outcomes: Vec::new(),
            dropped: Vec::new(),
            snapshots: track_backlog.then(Vec::new),
            misses: 0,
            miss_by_phase: vec![0; curves.len()],
        })
    }

    /// Releases the next job with the given execution time, first serving
    /// the queue up to its release instant.
    pub fn release(&mut self, exec: Rat) {
        let job = self.released + 1;
        let at = self.task.release(job);
        self.advance(&at);
        if job > 1 {
            if let Some(snaps) = self.snapshots.as_mut() {
                snaps.push(
                    self.queue
                        .iter()
                        .map(|p| (p.job, p.remaining.clone()))
                        .collect(),
                );
            }
        }
        self.queue.push_back(Pending {
            job,
            remaining: exec,
            deadline: self.task.absolute_deadline(job),
            dismiss: self.task.absolute_dismiss(job),
        });
        self.released = job;
        self.outcomes.push(None);
        self.dropped.push(Rat::zero());
    }

    /// Runs until every released job has completed or been dismissed.
    pub fn finish(&mut self) {
        let end = self.task.release(self.released + 1);
        self.advance(&end);
        if let Some(snaps) = self.snapshots.as_mut() {
            snaps.push(
                self.queue
                    .iter()
                    .map(|p| (p.job, p.remaining.clone()))
                    .collect(),
            );
        }
        if let Some(last) = self.queue.back() {
            let horizon = last.dismiss.clone();
            self.advance(&horizon);
        }
        debug_assert!(self.queue.is_empty());
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }

    pub fn miss_by_phase(&self) -> &[u64] {
        &self.miss_by_phase
    }

    fn settle(&mut self, job: u64, missed: bool) {
        self.outcomes[(job - 1) as usize] = Some(missed);
        if missed {
            self.misses += 1;
            self.miss_by_phase[((job - 1) % self.curves.len() as u64) as usize] += 1;
        }
    }

    fn advance(&mut self, target: &Rat) {
        let period = &self.task.period;
        loop {
            // instantaneous events at `now`
            let now = &self.now;
            if let Some(head) = self
                .queue
                .pop_front_if(|h| h.remaining.is_zero() || &h.dismiss <= now)
            {
                if head.remaining.is_zero() {
                    let missed = self.now > head.deadline;
                    self.settle(head.job, missed);
                } else {
                    self.dropped[(head.job - 1) as usize] = head.remaining;
                    self.settle(head.job, true);
                }
                continue;
            }
            if &self.now >= target {
                break;
            }

            let window = (&self.now / period).floor();
            let window_start = &window * period;
            let local = &self.now - &window_start;
            let phase = window
                .floor_i64()
                .map(|w| (w as u64 % self.curves.len() as u64) as usize)
                .expect("time fits in i64 periods");
            let curve = self.curves[phase].breakpoints();
            let seg = curve.partition_point(|(t, _)| t <= &local);
            let (t0, v0) = &curve[seg - 1];
            let (t1, v1) = &curve[seg];
            let seg_end = &window_start + t1;
            let boundary = if &seg_end < target { seg_end } else { target.clone() };

            let Some(head) = self.queue.front_mut() else {
                self.now = boundary;
                continue;
            };
            let limit = if head.dismiss < boundary {
                head.dismiss.clone()
            } else {
                boundary
            };
            let rate = (v1 - v0) / (t1 - t0);
            if rate.is_zero() {
                self.now = limit;
                continue;
            }
            let finish = &self.now + &(&head.remaining / &rate);
            if finish <= limit {
                head.remaining = Rat::zero();
                self.now = finish;
            } else {
                head.remaining -= &(&rate * &(&limit - &self.now));
                self.now = limit;
            }
        }
    }

    fn into_outcomes(self) -> Vec<JobOutcome> {
        let snaps = self.snapshots.unwrap_or_default();
        self.outcomes
            .iter()
            .enumerate()
            .map(|(i, o)| {
                let backlog = snaps
                    .get(i)
                    .map(|snap| {
                        snap.iter()
                            .map(|(job, rem)| rem - &self.dropped[(*job - 1) as usize])
                            .sum()
                    })
                    .unwrap_or_else(Rat::zero);
                JobOutcome {
                    missed: o.expect("finished trace settles every job"),
                    backlog,
                }
            })
            .collect()
    }
}

/// Replays one realization of execution times and reports each job's
/// hit/miss and carried backlog.
pub fn trace_jobs(task: &TaskSpec, supply: &SupplyModel, realization: &[Rat]) -> Result<Vec<JobOutcome>> {
    let mut tracer = GpcTracer::new(task, supply, true)?;
    for e in realization {
        tracer.release(e.clone());
    }
    tracer.finish();
    Ok(tracer.into_outcomes())
}

/// Exact distribution of the fraction of deadline misses among the first
/// `n` jobs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DmrNDistribution {
    pub n: u64,
    /// `(value, probability)` with distinct increasing values.
    pub points: Vec<(Rat, Rat)>,
}

impl DmrNDistribution {
    fn from_counts(n: u64, counts: Vec<Rat>) -> Self {
        let points = counts
            .into_iter()
            .enumerate()
            .filter(|(_, p)| !p.is_zero())
            .map(|(m, p)| (Rat::new(m as i64, n as i64), p))
            .collect();
        DmrNDistribution { n, points }
    }

    pub fn mean(&self) -> Rat {
        self.points.iter().map(|(v, p)| v * p).sum()
    }

    pub fn prob_of(&self, value: &Rat) -> Rat {
        self.points
            .iter()
            .find(|(v, _)| v == value)
            .map(|(_, p)| p.clone())
            .unwrap_or_else(Rat::zero)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["value", "prob", "value_float", "prob_float"])?;
        for (v, p) in &self.points {
            w.write_record([
                v.to_string(),
                p.to_string(),
                v.to_f64().to_string(),
                p.to_f64().to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::Io {
            path: "<csv>".into(),
            source: e,
        })?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EnumerationMode {
    /// Direct enumeration when it fits the budget and the supply is exact,
    /// chain dynamic programming otherwise.
    #[default]
    Auto,
    /// Every realization through the tracer; fails over budget.
    Direct,
    /// Dynamic programming over `(state, misses)` on the constructed chain.
    ChainDp,
}

pub const DEFAULT_ENUMERATION_BUDGET: u64 = 1_000_000;

pub fn enumerate_dmr_n(
    task: &TaskSpec,
    supply: &SupplyModel,
    n: u64,
    mode: EnumerationMode,
    budget: u64,
    options: &BuildOptions,
) -> Result<DmrNDistribution> {
    if n == 0 {
        return Err(Error::InvalidSweep("enumeration needs n >= 1".into()));
    }
    let h = task.exec.len() as u64;
    let fits = (h as f64).powf(n as f64) <= budget as f64;
    let direct = match mode {
        EnumerationMode::Direct => {
            if !fits {
                return Err(Error::EnumerationBudget {
                    realizations: format!("{h}^{n}"),
                    budget,
                });
            }
            true
        }
        EnumerationMode::ChainDp => false,
        EnumerationMode::Auto => fits && supply.is_exact(),
    };
    if direct {
        enumerate_direct(task, supply, n)
    } else {
        enumerate_dp(task, supply, n, options)
    }
}

fn enumerate_direct(task: &TaskSpec, supply: &SupplyModel, n: u64) -> Result<DmrNDistribution> {
    let mut counts = vec![Rat::zero(); n as usize + 1];
    let root = GpcTracer::new(task, supply, false)?;
    // depth-first over realization prefixes, sharing the tracer state
    let mut stack: Vec<(GpcTracer, Rat, u64)> = vec![(root, Rat::one(), 0)];
    while let Some((tracer, prob, depth)) = stack.pop() {
        if depth == n {
            let mut t = tracer;
            t.finish();
            counts[t.misses() as usize] += prob;
            continue;
        }
        for outcome in task.exec.entries() {
            let mut next = tracer.clone();
            next.release(outcome.value.clone());
            stack.push((next, &prob * &outcome.prob, depth + 1));
        }
    }
    Ok(DmrNDistribution::from_counts(n, counts))
}

fn enumerate_dp(
    task: &TaskSpec,
    supply: &SupplyModel,
    n: u64,
    options: &BuildOptions,
) -> Result<DmrNDistribution> {
    let chain = build_chain(task, supply, options)?;
    let len = chain.len();
    let width = n as usize + 1;
    let mut dist = vec![Rat::zero(); len * width];
    for (s, p) in chain.lambda().iter().enumerate() {
        if !p.is_zero() {
            let m = chain.states()[s].missed as usize;
            dist[s * width + m] += p;
        }
    }
    for _ in 1..n {
        let mut next = vec![Rat::zero(); len * width];
        for s in 0..len {
            for m in 0..width {
                let mass = &dist[s * width + m];
                if mass.is_zero() {
                    continue;
                }
                for (r, p) in chain.outgoing(s) {
                    let m2 = m + chain.states()[*r].missed as usize;
                    next[r * width + m2] += mass * p;
                }
            }
        }
        dist = next;
    }
    let mut counts = vec![Rat::zero(); width];
    for s in 0..len {
        for m in 0..width {
            counts[m] += &dist[s * width + m];
        }
    }
    Ok(DmrNDistribution::from_counts(n, counts))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub schema: &'static str,
    /// Stream cipher RNG used for sampling.
    pub rng: &'static str,
    pub n_jobs: u64,
    pub misses: u64,
    pub empirical_dmr: f64,
    pub seed: u64,
    pub replications: u32,
    pub per_phase_misses: Vec<u64>,
}

pub const RNG_NAME: &str = "ChaCha8 (rand_chacha 0.3), stream = replication index";

/// Simulates `n_jobs` consecutive jobs with execution times drawn iid from
/// the task's distribution. The same seed gives the same report.
pub fn monte_carlo(task: &TaskSpec, supply: &SupplyModel, n_jobs: u64, seed: u64) -> Result<SimReport> {
    monte_carlo_replicated(task, supply, n_jobs, seed, 1)
}

/// Splits `n_jobs` over independent replications (each starting from an
/// idle system) run in parallel on their own RNG streams.
pub fn monte_carlo_replicated(
    task: &TaskSpec,
    supply: &SupplyModel,
    n_jobs: u64,
    seed: u64,
    replications: u32,
) -> Result<SimReport> {
    if n_jobs == 0 || replications == 0 {
        return Err(Error::InvalidSweep(
            "simulation needs at least one job and one replication".into(),
        ));
    }
    // validate once before spawning
    GpcTracer::new(task, supply, false)?;
    let weights: Vec<f64> = task.exec.entries().iter().map(|e| e.prob.to_f64()).collect();
    let sampler = WeightedIndex::new(&weights)
        .map_err(|e| Error::InvalidSweep(format!("execution distribution: {e}")))?;
    let reps = replications as u64;
    let results: Vec<(u64, Vec<u64>)> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let jobs = n_jobs / reps + u64::from(r < n_jobs % reps);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r);
            let mut tracer = GpcTracer::new(task, supply, false).expect("validated above");
            for _ in 0..jobs {
                let k = sampler.sample(&mut rng);
                tracer.release(task.exec.entries()[k].value.clone());
            }
            tracer.finish();
            (tracer.misses(), tracer.miss_by_phase().to_vec())
        })
        .collect();
    let misses: u64 = results.iter().map(|(m, _)| m).sum();
    let mut per_phase = vec![0u64; supply.repeat_q()];
    for (_, phases) in &results {
        for (acc, m) in per_phase.iter_mut().zip(phases) {
            *acc += m;
        }
    }
    Ok(SimReport {
        schema: crate::io::SCHEMA,
        rng: RNG_NAME,
        n_jobs,
        misses,
        empirical_dmr: misses as f64 / n_jobs as f64,
        seed,
        replications,
        per_phase_misses: per_phase,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichReport {
    pub bound_dmr: Option<Rat>,
    pub empirical_dmr: f64,
    /// `sqrt(b (1 - b) / n)` for the bound `b`.
    pub sigma: f64,
    pub ok: bool,
}

/// Simulates a concrete supply lying between the bounds and checks that
/// its empirical miss rate stays below the bound-mode DMR plus `4σ`.
pub fn sandwich_check(
    task: &TaskSpec,
    bounds: &SupplyModel,
    concrete: &SupplyModel,
    n_jobs: u64,
    seed: u64,
    options: &BuildOptions,
) -> Result<SandwichReport> {
    bounds.check_sandwich(concrete)?;
    let chain = build_chain(task, bounds, options)?;
    let analysis = compute_dmr(&chain)?;
    let report = monte_carlo(task, concrete, n_jobs, seed)?;
    let (sigma, ok) = match &analysis.dmr {
        Some(b) => {
            let b = b.to_f64();
            let sigma = (b * (1.0 - b) / n_jobs as f64).sqrt();
            (sigma, report.empirical_dmr <= b + 4.0 * sigma)
        }
        None => (0.0, false),
    };
    Ok(SandwichReport {
        bound_dmr: analysis.dmr,
        empirical_dmr: report.empirical_dmr,
        sigma,
        ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ExecDistribution;
    use crate::rat;
    use crate::supply::tdma;

    fn task() -> TaskSpec {
        TaskSpec::new(
            ExecDistribution::from_pairs([(rat!(2), rat!(1, 2)), (rat!(3), rat!(1, 2))]),
            rat!(4),
            rat!(4),
            rat!(1),
        )
        .unwrap()
    }

    fn supply() -> SupplyModel {
        tdma(&rat!(4), &rat!(3), &rat!(1), &rat!(2)).unwrap()
    }

    #[test]
    fn all_long_jobs_miss_and_last_backlog_is_dropped() {
        let out = trace_jobs(&task(), &supply(), &[rat!(3), rat!(3), rat!(3)]).unwrap();
        assert!(out.iter().all(|o| o.missed));
        assert_eq!(out[0].backlog, rat!(1));
        assert_eq!(out[1].backlog, rat!(1));
        assert_eq!(out[2].backlog, rat!(0));
    }

    #[test]
    fn short_first_job_hits() {
        for second in [rat!(2), rat!(3)] {
            for third in [rat!(2), rat!(3)] {
                let out = trace_jobs(&task(), &supply(), &[rat!(2), second.clone(), third]).unwrap();
                assert!(!out[0].missed);
            }
        }
    }

    #[test]
    fn always_fitting_task_never_misses() {
        let t = task().with_exec(ExecDistribution::from_pairs([(rat!(1), rat!(1))]));
        let out = trace_jobs(&t, &supply(), &vec![rat!(1); 10]).unwrap();
        assert!(out.iter().all(|o| !o.missed && o.backlog.is_zero()));
        let report = monte_carlo(&t, &supply(), 1, 3).unwrap();
        assert_eq!(report.empirical_dmr, 0.0);
    }

    #[test]
    fn zero_work_job_waits_for_predecessor() {
        let t = task().with_exec(ExecDistribution::from_pairs([
            (rat!(0), rat!(1, 2)),
            (rat!(3), rat!(1, 2)),
        ]));
        // job 1 leaves 1 unit served in [4, 5); job 2 has no work of its own
        let out = trace_jobs(&t, &supply(), &[rat!(3), rat!(0)]).unwrap();
        assert!(out[0].missed);
        assert!(!out[1].missed);
    }

    #[test]
    fn bounds_supply_cannot_be_traced() {
        let b = crate::supply::cbs(&rat!(4), &rat!(1, 2), &rat!(1)).unwrap();
        assert!(matches!(
            trace_jobs(&task(), &b, &[rat!(1)]),
            Err(Error::ModeMismatch { .. })
        ));
    }

    #[test]
    fn first_job_distribution() {
        let d = enumerate_dmr_n(&task(), &supply(), 1, EnumerationMode::Direct, 10, &BuildOptions::default())
            .unwrap();
        assert_eq!(d.points, vec![(rat!(0), rat!(1, 2)), (rat!(1), rat!(1, 2))]);
    }

    #[test]
    fn direct_enumeration_respects_budget() {
        let err = enumerate_dmr_n(&task(), &supply(), 20, EnumerationMode::Direct, 1000, &BuildOptions::default())
            .unwrap_err();
        assert!(matches!(err, Error::EnumerationBudget { .. }));
    }

    #[test]
    fn seeded_runs_repeat() {
        let a = monte_carlo(&task(), &supply(), 5000, 42).unwrap();
        let b = monte_carlo(&task(), &supply(), 5000, 42).unwrap();
        assert_eq!(a, b);
        let c = monte_carlo_replicated(&task(), &supply(), 5000, 42, 4).unwrap();
        let d = monte_carlo_replicated(&task(), &supply(), 5000, 42, 4).unwrap();
        assert_eq!(c, d);
        assert_eq!(c.per_phase_misses.iter().sum::<u64>(), c.misses);
    }

    #[test]
    fn csv_export() {
        let d = enumerate_dmr_n(&task(), &supply(), 3, EnumerationMode::Auto, 1000, &BuildOptions::default())
            .unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("value,prob,value_float,prob_float\n0,1/2,0,0.5\n"));
    }
}
