//! Stationary distributions.
//!
//! The exact route first shrinks the system using the chain's structure: a
//! state's successors depend only on its phase and backlog (not on whether
//! it missed), and phases advance cyclically, so `π` follows from the
//! stationary vector of the `Q`-step chain on phase-0 backlogs. The
//! remaining linear system is solved either by fraction-free elimination
//! (small systems) or by p-adic lifting with an exact check of the result.
//! The float route runs power iteration on the lazy chain `(P + I) / 2`,
//! which has the same stationary vector and is aperiodic.

use std::collections::{BTreeSet, HashMap};

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Zero};

use super::modular;
use crate::chain::MarkovChain;
use crate::error::{Error, Result};
use crate::Rat;

type Row = Vec<(usize, BigInt)>;

/// Column-stochastic system: `cols[s]` lists `(r, P[r][s])`.
pub type Columns = Vec<Vec<(usize, Rat)>>;

/// Systems up to this size use fraction-free elimination.
pub const FRACTION_FREE_LIMIT: usize = 64;

/// Solves `Pπ = π`, `Σπ = 1` exactly.
pub fn exact_stationary(chain: &MarkovChain) -> Result<Vec<Rat>> {
    if let Some(reduced) = PhaseReduction::new(chain) {
        return reduced.solve();
    }
    let n = chain.len();
    // Variables ordered by (rem, phase, missed): transitions change the
    // backlog by a bounded amount, so this ordering keeps fill-in local.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let (sa, sb) = (&chain.states()[a], &chain.states()[b]);
        (&sa.rem, sa.phase, sa.missed).cmp(&(&sb.rem, sb.phase, sb.missed))
    });
    let mut pos = vec![0usize; n];
    for (p, &s) in order.iter().enumerate() {
        pos[s] = p;
    }
    let cols: Columns = order
        .iter()
        .map(|&s| {
            chain
                .outgoing(s)
                .iter()
                .map(|(r, p)| (pos[*r], p.clone()))
                .collect()
        })
        .collect();
    let x = stationary_of_columns(&cols)?;
    Ok((0..n).map(|s| x[pos[s]].clone()).collect())
}

/// Groups of states with identical successors, and the phase structure
/// needed to solve on phase-0 groups only.
struct PhaseReduction<'a> {
    chain: &'a MarkovChain,
    q: usize,
    group_of: Vec<usize>,
    /// Representative state of each group.
    reps: Vec<usize>,
    /// Groups of phase 0, ordered by backlog.
    phase0: Vec<usize>,
}

impl<'a> PhaseReduction<'a> {
    /// `None` unless every edge advances the phase by one (mod `Q`) and
    /// states sharing `(phase, rem)` have identical successors.
    fn new(chain: &'a MarkovChain) -> Option<Self> {
        let q = chain.repeat_q();
        let states = chain.states();
        if q == 0 || states.is_empty() {
            return None;
        }
        for (s, st) in states.iter().enumerate() {
            if st.phase >= q {
                return None;
            }
            if chain
                .outgoing(s)
                .iter()
                .any(|(r, _)| states[*r].phase != (st.phase + 1) % q)
            {
                return None;
            }
        }
        let mut index: HashMap<(usize, &Rat), usize> = HashMap::new();
        let mut group_of = vec![0usize; states.len()];
        let mut reps = Vec::new();
        for (s, st) in states.iter().enumerate() {
            let g = *index.entry((st.phase, &st.rem)).or_insert_with(|| {
                reps.push(s);
                reps.len() - 1
            });
            if chain.outgoing(s) != chain.outgoing(reps[g]) {
                return None;
            }
            group_of[s] = g;
        }
        if reps.len() == states.len() && q == 1 {
            // nothing to gain
            return None;
        }
        let mut phase0: Vec<usize> = (0..reps.len())
            .filter(|&g| states[reps[g]].phase == 0)
            .collect();
        phase0.sort_by(|&a, &b| states[reps[a]].rem.cmp(&states[reps[b]].rem));
        Some(PhaseReduction {
            chain,
            q,
            group_of,
            reps,
            phase0,
        })
    }

    /// One step of group mass: `(state mass, next group mass)`.
    fn push(&self, mass: &HashMap<usize, Rat>) -> (Vec<(usize, Rat)>, HashMap<usize, Rat>) {
        let mut states = Vec::new();
        let mut next: HashMap<usize, Rat> = HashMap::new();
        for (&g, w) in mass {
            for (r, p) in self.chain.outgoing(self.reps[g]) {
                let m = w * p;
                *next.entry(self.group_of[*r]).or_insert_with(Rat::zero) += &m;
                states.push((*r, m));
            }
        }
        (states, next)
    }

    fn solve(&self) -> Result<Vec<Rat>> {
        let m = self.phase0.len();
        if m == 0 {
            return Err(Error::SingularSystem { nullity: 0 });
        }
        let mut local = vec![usize::MAX; self.reps.len()];
        for (i, &g) in self.phase0.iter().enumerate() {
            local[g] = i;
        }
        // Q-step transitions between phase-0 groups
        let mut cols: Columns = Vec::with_capacity(m);
        for &g in &self.phase0 {
            let mut mass: HashMap<usize, Rat> = HashMap::from([(g, Rat::one())]);
            for _ in 0..self.q {
                mass = self.push(&mass).1;
            }
            let mut col: Vec<(usize, Rat)> = mass
                .into_iter()
                .map(|(h, p)| {
                    let i = local[h];
                    debug_assert!(i != usize::MAX, "Q steps return to phase 0");
                    (i, p)
                })
                .collect();
            col.sort_by_key(|(i, _)| *i);
            cols.push(col);
        }
        let nu = stationary_of_columns(&cols)?;

        // spread over all phases; each phase carries mass 1/Q. Masses are
        // integers over a shared denominator so only the final values are
        // reduced.
        let mut den = BigInt::one();
        for w in &nu {
            den = den.lcm(&w.denom());
        }
        let mut mass: HashMap<usize, BigInt> = self
            .phase0
            .iter()
            .zip(&nu)
            .filter(|(_, w)| !w.is_zero())
            .map(|(&g, w)| (g, w.numer() * (&den / w.denom())))
            .collect();
        let mut pi = vec![Rat::zero(); self.chain.len()];
        let q = BigInt::from(self.q);
        for _ in 0..self.q {
            let mut step = BigInt::one();
            for &g in mass.keys() {
                for (_, p) in self.chain.outgoing(self.reps[g]) {
                    step = step.lcm(&p.denom());
                }
            }
            den *= &step;
            let total = &den * &q;
            let mut next: HashMap<usize, BigInt> = HashMap::new();
            let mut states: HashMap<usize, BigInt> = HashMap::new();
            for (&g, w) in &mass {
                for (r, p) in self.chain.outgoing(self.reps[g]) {
                    let m = w * (p.numer() * (&step / p.denom()));
                    *next.entry(self.group_of[*r]).or_insert_with(BigInt::zero) += &m;
                    *states.entry(*r).or_insert_with(BigInt::zero) += m;
                }
            }
            for (r, m) in states {
                pi[r] = Rat::from(BigRational::new(m, total.clone()));
            }
            mass = next;
        }
        Ok(pi)
    }
}

/// Stationary vector of a column-stochastic system.
pub fn stationary_of_columns(cols: &Columns) -> Result<Vec<Rat>> {
    if cols.len() <= FRACTION_FREE_LIMIT {
        return fraction_free_stationary(cols);
    }
    match modular_stationary(cols) {
        Some(x) => Ok(x),
        // exact nullity for the diagnostic
        None => fraction_free_stationary(cols),
    }
}

/// p-adic lifting on `(P - I)` with its last equation replaced by `Σx = 1`.
/// `None` if that system is singular.
pub fn modular_stationary(cols: &Columns) -> Option<Vec<Rat>> {
    let n = cols.len();
    if n == 0 {
        return None;
    }
    let mut rational_rows: Vec<Vec<(usize, BigRational)>> = vec![Vec::new(); n];
    for (s, col) in cols.iter().enumerate() {
        for (r, p) in col {
            rational_rows[*r].push((s, p.to_big()));
        }
    }
    let mut rows: Vec<Row> = rational_rows
        .into_iter()
        .enumerate()
        .map(|(r, mut entries)| {
            entries.push((r, -BigRational::one()));
            integer_row(entries)
        })
        .collect();
    rows[n - 1] = (0..n).map(|c| (c, BigInt::one())).collect();
    let mut rhs = vec![BigInt::zero(); n];
    rhs[n - 1] = BigInt::one();
    let x = modular::solve(&rows, &rhs)?;
    Some(x.into_iter().map(Rat::from).collect())
}

/// Fraction-free elimination on `(P - I)`: rows are kept as primitive
/// integer vectors, the single free variable is set to 1, and the result is
/// normalised. Fails with the nullity if the solution is not unique.
pub fn fraction_free_stationary(cols: &Columns) -> Result<Vec<Rat>> {
    let n = cols.len();
    if n == 0 {
        return Err(Error::SingularSystem { nullity: 0 });
    }

    // Row r: Σ_s P[r][s] x_s − x_r = 0.
    let mut rational_rows: Vec<Vec<(usize, BigRational)>> = vec![Vec::new(); n];
    for (s, col) in cols.iter().enumerate() {
        for (r, p) in col {
            rational_rows[*r].push((s, p.to_big()));
        }
    }
    let mut rows: Vec<Row> = rational_rows
        .into_iter()
        .enumerate()
        .map(|(r, mut entries)| {
            entries.push((r, -BigRational::one()));
            integer_row(entries)
        })
        .collect();
    let mut col_rows: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for (r, row) in rows.iter().enumerate() {
        for (c, _) in row {
            col_rows[*c].insert(r);
        }
    }

    let mut active = vec![true; n];
    let mut pivots: Vec<(usize, usize)> = Vec::with_capacity(n);
    let mut free: Vec<usize> = Vec::new();

    for k in 0..n {
        let candidates: Vec<usize> = col_rows[k].iter().copied().filter(|&r| active[r]).collect();
        if candidates.is_empty() {
            free.push(k);
            continue;
        }
        let p = if candidates.contains(&k) {
            k
        } else {
            *candidates
                .iter()
                .min_by_key(|&&r| (rows[r].len(), r))
                .expect("candidates is non-empty")
        };
        active[p] = false;
        let pivot_row = std::mem::take(&mut rows[p]);
        let a_pk = coeff(&pivot_row, k).expect("pivot row holds its column").clone();
        for &i in candidates.iter().filter(|&&i| i != p) {
            let a_ik = match coeff(&rows[i], k) {
                Some(a) => a.clone(),
                None => continue,
            };
            let g = a_pk.gcd(&a_ik);
            let (mul_i, mul_p) = (&a_pk / &g, &a_ik / &g);
            let old = std::mem::take(&mut rows[i]);
            let old_cols: Vec<usize> = old.iter().map(|(c, _)| *c).collect();
            let updated = combine(&old, &mul_i, &pivot_row, &mul_p);
            for c in old_cols {
                col_rows[c].remove(&i);
            }
            for (c, _) in &updated {
                col_rows[*c].insert(i);
            }
            rows[i] = updated;
        }
        for (c, _) in &pivot_row {
            col_rows[*c].remove(&p);
        }
        rows[p] = pivot_row;
        pivots.push((k, p));
    }

    if free.len() != 1 {
        return Err(Error::SingularSystem {
            nullity: free.len(),
        });
    }

    let mut x: Vec<Option<BigRational>> = vec![None; n];
    x[free[0]] = Some(BigRational::one());
    for &(k, p) in pivots.iter().rev() {
        let row = &rows[p];
        let mut acc = BigRational::zero();
        let mut diag = BigInt::zero();
        for (c, a) in row {
            if *c == k {
                diag = a.clone();
            } else {
                let xc = x[*c].as_ref().expect("later variables are solved first");
                acc += xc * BigRational::from_integer(a.clone());
            }
        }
        x[k] = Some(-acc / BigRational::from_integer(diag));
    }

    let x: Vec<BigRational> = x.into_iter().map(|v| v.expect("all variables solved")).collect();
    let total: BigRational = x.iter().fold(BigRational::zero(), |acc, v| acc + v);
    if total.is_zero() {
        return Err(Error::SingularSystem { nullity: 1 });
    }
    Ok(x.iter().map(|v| Rat::from(v / &total)).collect())
}

fn coeff(row: &Row, col: usize) -> Option<&BigInt> {
    row.binary_search_by_key(&col, |(c, _)| *c)
        .ok()
        .map(|i| &row[i].1)
}

/// Merges duplicate columns, clears denominators, and divides out the
/// content so the row is a primitive integer vector.
fn integer_row(mut entries: Vec<(usize, BigRational)>) -> Row {
    entries.sort_by_key(|(c, _)| *c);
    let mut merged: Vec<(usize, BigRational)> = Vec::with_capacity(entries.len());
    for (c, v) in entries {
        match merged.last_mut() {
            Some((lc, lv)) if *lc == c => *lv += v,
            _ => merged.push((c, v)),
        }
    }
    merged.retain(|(_, v)| !v.is_zero());
    let lcm = merged
        .iter()
        .fold(BigInt::one(), |acc, (_, v)| acc.lcm(v.denom()));
    let row: Row = merged
        .into_iter()
        .map(|(c, v)| (c, v.numer() * (&lcm / v.denom())))
        .collect();
    primitive(row)
}

fn primitive(mut row: Row) -> Row {
    let g = row
        .iter()
        .fold(BigInt::zero(), |acc, (_, v)| acc.gcd(v));
    if !g.is_zero() && !g.is_one() {
        for (_, v) in row.iter_mut() {
            *v = &*v / &g;
        }
    }
    row
}

/// `mul_a · a − mul_b · b`, dropping zeros, made primitive.
fn combine(a: &Row, mul_a: &BigInt, b: &Row, mul_b: &BigInt) -> Row {
    let mut out: Row = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let take_a = j >= b.len() || (i < a.len() && a[i].0 < b[j].0);
        let take_b = i >= a.len() || (j < b.len() && b[j].0 < a[i].0);
        let (c, v) = if take_a {
            let r = (a[i].0, &a[i].1 * mul_a);
            i += 1;
            r
        } else if take_b {
            let r = (b[j].0, -(&b[j].1 * mul_b));
            j += 1;
            r
        } else {
            let r = (a[i].0, &a[i].1 * mul_a - &b[j].1 * mul_b);
            i += 1;
            j += 1;
            r
        };
        if !v.is_zero() {
            out.push((c, v));
        }
    }
    primitive(out)
}

pub const POWER_TOLERANCE: f64 = 1e-12;
pub const POWER_MAX_ITERATIONS: usize = 1_000_000;

/// Approximate stationary vector and the number of iterations used.
/// Returns `None` if the L1 residual did not drop below the tolerance.
pub fn power_iteration(chain: &MarkovChain) -> Option<(Vec<f64>, usize)> {
    let n = chain.len();
    if n == 0 {
        return None;
    }
    let edges: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|s| chain.outgoing(s).iter().map(|(r, p)| (*r, p.to_f64())).collect())
        .collect();
    let mut x = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    for iter in 1..=POWER_MAX_ITERATIONS {
        next.iter_mut().for_each(|v| *v = 0.0);
        for (s, out) in edges.iter().enumerate() {
            for &(r, p) in out {
                next[r] += p * x[s];
            }
        }
        let residual: f64 = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum();
        for (xi, ni) in x.iter_mut().zip(&next) {
            *xi = 0.5 * (*xi + *ni);
        }
        let total: f64 = x.iter().sum();
        x.iter_mut().for_each(|v| *v /= total);
        if residual < POWER_TOLERANCE {
            return Some((x, iter));
        }
    }
    None
}
