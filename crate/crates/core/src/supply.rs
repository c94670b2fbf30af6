//! Supply curves of a greedy processing component.
//!
//! A [`SupplyCurve`] gives the cumulative service available to the task
//! during one period, measured from the job's release. A [`SupplyModel`]
//! holds `Q` such curves (or `Q` upper/lower pairs); job `j` uses entry
//! `(j - 1) mod Q`, so the pattern repeats every `Q` jobs.

use crate::error::{Error, Result};
use crate::Rat;

/// Continuous, non-decreasing, 1-Lipschitz piecewise-linear curve on
/// `[0, horizon]` starting at `(0, 0)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SupplyCurve {
    points: Vec<(Rat, Rat)>,
}

impl SupplyCurve {
    pub fn new(points: Vec<(Rat, Rat)>) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidCurve(msg));
        match points.first() {
            None => return bad("no breakpoints".into()),
            Some((t, v)) if !t.is_zero() || !v.is_zero() => {
                return bad(format!("first breakpoint is ({t}, {v}), expected (0, 0)"))
            }
            _ => {}
        }
        if points.len() < 2 {
            return bad("a curve needs at least two breakpoints".into());
        }
        for w in points.windows(2) {
            let (t0, v0) = &w[0];
            let (t1, v1) = &w[1];
            if t1 <= t0 {
                return bad(format!("breakpoint times not increasing at t = {t1}"));
            }
            if v1 < v0 {
                return bad(format!("supply decreases between t = {t0} and t = {t1}"));
            }
            if v1 - v0 > t1 - t0 {
                return bad(format!(
                    "supply grows faster than time between t = {t0} and t = {t1}"
                ));
            }
        }
        Ok(SupplyCurve { points })
    }

    /// Builds a curve from breakpoints, dropping interior points that lie on
    /// the line through their neighbours.
    pub fn simplified(points: Vec<(Rat, Rat)>) -> Result<Self> {
        let mut out: Vec<(Rat, Rat)> = Vec::with_capacity(points.len());
        for p in points {
            if let Some(last) = out.last() {
                if last.0 == p.0 {
                    continue;
                }
            }
            if out.len() >= 2 {
                let (t0, v0) = &out[out.len() - 2];
                let (t1, v1) = &out[out.len() - 1];
                let collinear = (v1 - v0) * (&p.0 - t1) == (&p.1 - v1) * (t1 - t0);
                if collinear {
                    out.pop();
                }
            }
            out.push(p);
        }
        SupplyCurve::new(out)
    }

    /// Full-rate supply `β(t) = t` on `[0, horizon]`.
    pub fn dedicated(horizon: Rat) -> Self {
        SupplyCurve {
            points: vec![(Rat::zero(), Rat::zero()), (horizon.clone(), horizon)],
        }
    }

    pub fn breakpoints(&self) -> &[(Rat, Rat)] {
        &self.points
    }

    pub fn horizon(&self) -> &Rat {
        &self.points[self.points.len() - 1].0
    }

    /// Supply over the whole period, `β(T)`.
    pub fn total(&self) -> &Rat {
        &self.points[self.points.len() - 1].1
    }

    pub fn eval(&self, t: &Rat) -> Result<Rat> {
        if t.is_negative() || t > self.horizon() {
            return Err(Error::Domain {
                t: Box::new(t.clone()),
                horizon: Box::new(self.horizon().clone()),
            });
        }
        Ok(self.eval_unchecked(t))
    }

    pub(crate) fn eval_unchecked(&self, t: &Rat) -> Rat {
        // index of the first breakpoint with time > t
        let idx = self.points.partition_point(|(bt, _)| bt <= t);
        if idx == 0 {
            return Rat::zero();
        }
        if idx == self.points.len() {
            return self.total().clone();
        }
        let (t0, v0) = &self.points[idx - 1];
        let (t1, v1) = &self.points[idx];
        if t == t0 {
            return v0.clone();
        }
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }

    /// `self(t) <= other(t)` on the whole domain. Both curves are linear
    /// between the union of their breakpoints, so checking those suffices.
    pub fn dominated_by(&self, other: &SupplyCurve) -> bool {
        self.first_exceeding(other).is_none()
    }

    pub(crate) fn first_exceeding(&self, other: &SupplyCurve) -> Option<Rat> {
        let mut ts: Vec<&Rat> = self
            .points
            .iter()
            .chain(other.points.iter())
            .map(|(t, _)| t)
            .collect();
        ts.sort();
        ts.dedup();
        ts.into_iter()
            .find(|t| self.eval_unchecked(t) > other.eval_unchecked(t))
            .cloned()
    }
}

/// Free-function form of [`SupplyCurve::eval`].
pub fn eval_curve(curve: &SupplyCurve, t: &Rat) -> Result<Rat> {
    curve.eval(t)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BoundPair {
    pub upper: SupplyCurve,
    pub lower: SupplyCurve,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SupplyMode {
    Exact(Vec<SupplyCurve>),
    Bounds(Vec<BoundPair>),
}

/// `Q`-periodic supply description, either exact or as upper/lower bounds.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SupplyModel {
    mode: SupplyMode,
    period: Rat,
}

impl SupplyModel {
    pub fn exact(curves: Vec<SupplyCurve>) -> Result<Self> {
        let period = common_horizon(curves.iter())?;
        Ok(SupplyModel {
            mode: SupplyMode::Exact(curves),
            period,
        })
    }

    pub fn bounds(pairs: Vec<BoundPair>) -> Result<Self> {
        let period = common_horizon(pairs.iter().flat_map(|p| [&p.upper, &p.lower]))?;
        for (q, pair) in pairs.iter().enumerate() {
            if let Some(t) = pair.lower.first_exceeding(&pair.upper) {
                return Err(Error::InvalidSupply(format!(
                    "lower curve exceeds upper curve of entry {q} at t = {t}"
                )));
            }
        }
        Ok(SupplyModel {
            mode: SupplyMode::Bounds(pairs),
            period,
        })
    }

    /// Same curve for every job.
    pub fn single(curve: SupplyCurve) -> Self {
        let period = curve.horizon().clone();
        SupplyModel {
            mode: SupplyMode::Exact(vec![curve]),
            period,
        }
    }

    pub fn mode(&self) -> &SupplyMode {
        &self.mode
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.mode, SupplyMode::Exact(_))
    }

    /// Number of jobs after which the pattern repeats.
    pub fn repeat_q(&self) -> usize {
        match &self.mode {
            SupplyMode::Exact(c) => c.len(),
            SupplyMode::Bounds(p) => p.len(),
        }
    }

    /// Length of every curve's domain; must equal the task period.
    pub fn period(&self) -> &Rat {
        &self.period
    }

    pub fn check_period(&self, task_period: &Rat) -> Result<()> {
        if &self.period != task_period {
            return Err(Error::InvalidSupply(format!(
                "supply curves span [0, {}] but the task period is {task_period}",
                self.period
            )));
        }
        Ok(())
    }

    pub fn phase_of_job(&self, job: u64) -> usize {
        assert!(job >= 1, "job indices start at 1");
        ((job - 1) % self.repeat_q() as u64) as usize
    }

    pub fn exact_curve(&self, phase: usize) -> Result<&SupplyCurve> {
        match &self.mode {
            SupplyMode::Exact(c) => Ok(&c[phase % c.len()]),
            SupplyMode::Bounds(_) => Err(Error::ModeMismatch { expected: "exact" }),
        }
    }

    pub fn bound_pair(&self, phase: usize) -> Result<&BoundPair> {
        match &self.mode {
            SupplyMode::Bounds(p) => Ok(&p[phase % p.len()]),
            SupplyMode::Exact(_) => Err(Error::ModeMismatch { expected: "bounds" }),
        }
    }

    /// Cumulative service from the release of `job` (1-based) over `t` time
    /// units, spanning as many later periods as needed.
    pub fn service(&self, job: u64, t: &Rat) -> Result<Rat> {
        match &self.mode {
            SupplyMode::Exact(c) => accumulate(c.len(), |q| &c[q], &self.period, phase(job, c.len()), t),
            SupplyMode::Bounds(_) => Err(Error::ModeMismatch { expected: "exact" }),
        }
    }

    /// Upper cumulative service; bounds mode only.
    pub fn service_u(&self, job: u64, t: &Rat) -> Result<Rat> {
        match &self.mode {
            SupplyMode::Bounds(p) => accumulate(p.len(), |q| &p[q].upper, &self.period, phase(job, p.len()), t),
            SupplyMode::Exact(_) => Err(Error::ModeMismatch { expected: "bounds" }),
        }
    }

    /// Lower cumulative service; bounds mode only.
    pub fn service_l(&self, job: u64, t: &Rat) -> Result<Rat> {
        match &self.mode {
            SupplyMode::Bounds(p) => accumulate(p.len(), |q| &p[q].lower, &self.period, phase(job, p.len()), t),
            SupplyMode::Exact(_) => Err(Error::ModeMismatch { expected: "bounds" }),
        }
    }

    /// Checks `lower <= concrete <= upper` for every job, where `self` is the
    /// bounds model and `concrete` an exact model. The two patterns may have
    /// different lengths; all `lcm(Q_bounds, Q_concrete)` combinations are
    /// checked.
    pub fn check_sandwich(&self, concrete: &SupplyModel) -> Result<()> {
        let pairs = match &self.mode {
            SupplyMode::Bounds(p) => p,
            SupplyMode::Exact(_) => return Err(Error::ModeMismatch { expected: "bounds" }),
        };
        let curves = match &concrete.mode {
            SupplyMode::Exact(c) => c,
            SupplyMode::Bounds(_) => return Err(Error::ModeMismatch { expected: "exact" }),
        };
        if self.period != concrete.period {
            return Err(Error::SandwichViolation(format!(
                "bound curves span [0, {}] but concrete curves span [0, {}]",
                self.period, concrete.period
            )));
        }
        let n = num_integer::lcm(pairs.len(), curves.len());
        for k in 0..n {
            let pair = &pairs[k % pairs.len()];
            let c = &curves[k % curves.len()];
            if let Some(t) = pair.lower.first_exceeding(c) {
                return Err(Error::SandwichViolation(format!(
                    "job phase {k}: lower bound exceeds concrete supply at t = {t}"
                )));
            }
            if let Some(t) = c.first_exceeding(&pair.upper) {
                return Err(Error::SandwichViolation(format!(
                    "job phase {k}: concrete supply exceeds upper bound at t = {t}"
                )));
            }
        }
        Ok(())
    }
}

fn phase(job: u64, q: usize) -> usize {
    assert!(job >= 1, "job indices start at 1");
    ((job - 1) % q as u64) as usize
}

fn common_horizon<'a>(mut curves: impl Iterator<Item = &'a SupplyCurve>) -> Result<Rat> {
    let first = curves
        .next()
        .ok_or_else(|| Error::InvalidSupply("a supply model needs at least one curve".into()))?;
    let horizon = first.horizon().clone();
    for c in curves {
        if c.horizon() != &horizon {
            return Err(Error::InvalidSupply(format!(
                "curves disagree on the period: {} vs {}",
                horizon,
                c.horizon()
            )));
        }
    }
    Ok(horizon)
}

/// `Σ_{ℓ=j}^{j+k-1} β_ℓ(T) + β_{j+k}(t - kT)` with `k = ⌊t/T⌋`, indices taken
/// mod `q`, starting from the 0-based phase of job `j`.
pub(crate) fn accumulate<'a, F>(q: usize, curve: F, period: &Rat, start: usize, t: &Rat) -> Result<Rat>
where
    F: Fn(usize) -> &'a SupplyCurve,
{
    if t.is_negative() {
        return Err(Error::Domain {
            t: Box::new(t.clone()),
            horizon: Box::new(period.clone()),
        });
    }
    let k = (t / period).floor();
    let whole = k
        .floor_i64()
        .ok_or_else(|| Error::InvalidSupply(format!("horizon {t} too large")))? as u64;
    let q64 = q as u64;
    let mut acc = Rat::zero();
    let cycles = whole / q64;
    if cycles > 0 {
        let per_cycle: Rat = (0..q).map(|i| curve(i).total()).sum();
        acc += per_cycle * Rat::from_int(cycles as i64);
    }
    for i in 0..(whole % q64) {
        acc += curve(((start as u64 + i) % q64) as usize).total();
    }
    let last = ((start as u64 + whole) % q64) as usize;
    let offset = t - &(k * period);
    acc += curve(last).eval_unchecked(&offset);
    Ok(acc)
}

/// Exact supply of a TDMA slot `[slot_start, slot_start + slot_length)`
/// repeating every `cycle` time units, seen by a task with period `period`
/// released in phase with the TDMA cycle.
///
/// The pattern repeats after `Q = b` jobs where `period / cycle = a / b` in
/// lowest terms.
pub fn tdma(period: &Rat, cycle: &Rat, slot_start: &Rat, slot_length: &Rat) -> Result<SupplyModel> {
    if !period.is_positive() || !cycle.is_positive() {
        return Err(Error::InvalidSupply("TDMA cycle and task period must be > 0".into()));
    }
    if slot_start.is_negative() || slot_length.is_negative() || slot_start + slot_length > *cycle {
        return Err(Error::InvalidSupply(format!(
            "TDMA slot [{slot_start}, {}) does not fit in a cycle of {cycle}",
            slot_start + slot_length
        )));
    }
    let ratio = period / cycle;
    let q = ratio
        .denom()
        .try_into()
        .ok()
        .filter(|&q: &usize| q <= 1_000_000)
        .ok_or_else(|| Error::InvalidSupply("TDMA pattern too long".into()))?;

    // cumulative slot time in [0, x)
    let served = |x: &Rat| -> Rat {
        let k = (x / cycle).floor();
        let into = x - &(&k * cycle);
        let in_slot = (into - slot_start).max(Rat::zero()).min(slot_length.clone());
        k * slot_length + in_slot
    };

    let mut curves = Vec::with_capacity(q);
    for phase in 0..q {
        let start = period * Rat::from_int(phase as i64);
        let end = &start + period;
        let mut ts = vec![start.clone(), end.clone()];
        let mut k = (&start / cycle).floor();
        loop {
            let base = &k * cycle;
            if base > end {
                break;
            }
            for x in [&base + slot_start, &base + slot_start + slot_length] {
                if x > start && x < end {
                    ts.push(x);
                }
            }
            k += Rat::one();
        }
        ts.sort();
        ts.dedup();
        let origin = served(&start);
        let points = ts
            .iter()
            .map(|x| (x - &start, served(x) - &origin))
            .collect();
        curves.push(SupplyCurve::simplified(points)?);
    }
    SupplyModel::exact(curves)
}

/// Upper and lower supply of a hard constant bandwidth server with the given
/// budget and server period, for a task of period `period` (pattern length 1):
///
/// upper(t) = budget·⌊t/P⌋ + min(t − P⌊t/P⌋, budget),
/// lower(t) = budget·⌊t/P⌋ + max(t − P⌊t/P⌋ − (P − budget), 0).
pub fn cbs(period: &Rat, budget: &Rat, server_period: &Rat) -> Result<SupplyModel> {
    if !period.is_positive() || !server_period.is_positive() || budget.is_negative() || budget > server_period {
        return Err(Error::InvalidSupply(format!(
            "CBS needs 0 <= budget <= server period and a positive task period (got budget {budget}, server period {server_period})"
        )));
    }
    let upper = |t: &Rat| {
        let k = (t / server_period).floor();
        let frac = t - &(&k * server_period);
        k * budget + frac.min(budget.clone())
    };
    let gap = server_period - budget;
    let lower = |t: &Rat| {
        let k = (t / server_period).floor();
        let frac = t - &(&k * server_period);
        k * budget + (frac - &gap).max(Rat::zero())
    };
    let mut ts = vec![Rat::zero(), period.clone()];
    let mut base = Rat::zero();
    while &base < period {
        for x in [base.clone(), &base + budget, &base + &gap] {
            if x.is_positive() && &x < period {
                ts.push(x);
            }
        }
        base += server_period;
    }
    ts.sort();
    ts.dedup();
    let up = SupplyCurve::simplified(ts.iter().map(|t| (t.clone(), upper(t))).collect())?;
    let lo = SupplyCurve::simplified(ts.iter().map(|t| (t.clone(), lower(t))).collect())?;
    SupplyModel::bounds(vec![BoundPair { upper: up, lower: lo }])
}
