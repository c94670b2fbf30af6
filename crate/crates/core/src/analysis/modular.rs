//! Exact solution of a nonsingular sparse integer system `A x = b` by p-adic
//! lifting.
//!
//! `A` is factored once modulo a 62-bit prime. Each lifting step solves for
//! the next p-adic digit of `x` and divides the residual by `p` exactly.
//! Every so often the digits are turned back into rationals by rational
//! reconstruction, and the candidate is accepted only if `A x = b` holds
//! exactly.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

pub(crate) type IntRow = Vec<(usize, BigInt)>;

fn mul_mod(a: u64, b: u64, p: u64) -> u64 {
    ((a as u128 * b as u128) % p as u128) as u64
}

fn pow_mod(mut base: u64, mut exp: u64, p: u64) -> u64 {
    let mut acc = 1u64;
    base %= p;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, p);
        }
        base = mul_mod(base, base, p);
        exp >>= 1;
    }
    acc
}

fn inv_mod(a: u64, p: u64) -> u64 {
    pow_mod(a, p - 2, p)
}

/// Deterministic Miller-Rabin for 64-bit integers.
fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for &b in &BASES {
        if n.is_multiple_of(b) {
            return n == b;
        }
    }
    let (mut d, mut s) = (n - 1, 0);
    while d % 2 == 0 {
        d /= 2;
        s += 1;
    }
    'outer: for &a in &BASES {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'outer;
            }
        }
        return false;
    }
    true
}

/// The largest primes below 2^62, in decreasing order.
fn primes() -> impl Iterator<Item = u64> {
    (0..(1u64 << 62)).rev().filter(|&n| n % 2 == 1 && is_prime(n))
}

fn big_mod(v: &BigInt, p: u64) -> u64 {
    let r = v.mod_floor(&BigInt::from(p));
    r.to_u64().expect("residue fits u64")
}

/// Sparse LU factors of `A mod p`, stored as the list of row operations and
/// the resulting echelon rows.
struct Factor {
    p: u64,
    /// `row[target] -= factor * row[source]`, in application order.
    ops: Vec<(usize, usize, u64)>,
    /// `(column, pivot row, inverse of the pivot)` in elimination order.
    pivots: Vec<(usize, usize, u64)>,
    rows: Vec<Vec<(usize, u64)>>,
}

fn axpy_mod(a: &[(usize, u64)], f: u64, b: &[(usize, u64)], p: u64) -> Vec<(usize, u64)> {
    // a - f * b
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let take_a = j >= b.len() || (i < a.len() && a[i].0 < b[j].0);
        let take_b = i >= a.len() || (j < b.len() && b[j].0 < a[i].0);
        let (c, v) = if take_a {
            i += 1;
            a[i - 1]
        } else if take_b {
            j += 1;
            (b[j - 1].0, (p - mul_mod(f, b[j - 1].1, p)) % p)
        } else {
            i += 1;
            j += 1;
            let sub = mul_mod(f, b[j - 1].1, p);
            (a[i - 1].0, (a[i - 1].1 + p - sub) % p)
        };
        if v != 0 {
            out.push((c, v));
        }
    }
    out
}

impl Factor {
    /// `None` if `A` is singular modulo `p`.
    fn new(a: &[IntRow], p: u64) -> Option<Factor> {
        let n = a.len();
        let mut rows: Vec<Vec<(usize, u64)>> = a
            .iter()
            .map(|row| {
                row.iter()
                    .map(|(c, v)| (*c, big_mod(v, p)))
                    .filter(|(_, v)| *v != 0)
                    .collect()
            })
            .collect();
        // rows that may hold each column; stale entries are filtered when
        // the column is eliminated
        let mut col_rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (r, row) in rows.iter().enumerate() {
            for (c, _) in row {
                col_rows[*c].push(r);
            }
        }
        let mut active = vec![true; n];
        let mut seen = vec![usize::MAX; n];
        let mut ops = Vec::new();
        let mut pivots = Vec::with_capacity(n);
        for k in 0..n {
            let mut candidates: Vec<usize> = Vec::new();
            for &r in &col_rows[k] {
                if active[r]
                    && seen[r] != k
                    && rows[r].binary_search_by_key(&k, |(c, _)| *c).is_ok()
                {
                    seen[r] = k;
                    candidates.push(r);
                }
            }
            col_rows[k] = Vec::new();
            if candidates.is_empty() {
                return None;
            }
            let piv = if candidates.contains(&k) {
                k
            } else {
                *candidates
                    .iter()
                    .min_by_key(|&&r| (rows[r].len(), r))
                    .expect("candidates is non-empty")
            };
            active[piv] = false;
            let pivot_row = std::mem::take(&mut rows[piv]);
            let lead = pivot_row[pivot_row
                .binary_search_by_key(&k, |(c, _)| *c)
                .expect("pivot row holds its column")]
            .1;
            let inv = inv_mod(lead, p);
            for &i in candidates.iter().filter(|&&i| i != piv) {
                let old = std::mem::take(&mut rows[i]);
                let a_ik = old[old
                    .binary_search_by_key(&k, |(c, _)| *c)
                    .expect("candidate holds the column")]
                .1;
                let f = mul_mod(a_ik, inv, p);
                let updated = axpy_mod(&old, f, &pivot_row, p);
                // register fill-in
                for (c, _) in &pivot_row {
                    if *c > k && old.binary_search_by_key(c, |(oc, _)| *oc).is_err() {
                        col_rows[*c].push(i);
                    }
                }
                rows[i] = updated;
                ops.push((i, piv, f));
            }
            rows[piv] = pivot_row;
            pivots.push((k, piv, inv));
        }
        Some(Factor {
            p,
            ops,
            pivots,
            rows,
        })
    }

    fn solve(&self, rhs: &mut [u64]) -> Vec<u64> {
        let p = self.p;
        for &(t, s, f) in &self.ops {
            rhs[t] = (rhs[t] + p - mul_mod(f, rhs[s], p)) % p;
        }
        let mut x = vec![0u64; rhs.len()];
        for &(k, r, inv) in self.pivots.iter().rev() {
            let mut acc = rhs[r];
            for &(c, v) in &self.rows[r] {
                if c != k {
                    acc = (acc + p - mul_mod(v, x[c], p)) % p;
                }
            }
            x[k] = mul_mod(acc, inv, p);
        }
        x
    }
}

/// `a / b` with `|a|, b < bound` and `a ≡ b t (mod m)`, if one exists.
fn rational_reconstruction(t: &BigInt, m: &BigInt, bound: &BigInt) -> Option<(BigInt, BigInt)> {
    let (mut r0, mut r1) = (m.clone(), t.mod_floor(m));
    let (mut s0, mut s1) = (BigInt::zero(), BigInt::one());
    while &r1 >= bound {
        let q = &r0 / &r1;
        let r2 = &r0 - &q * &r1;
        let s2 = &s0 - &q * &s1;
        r0 = std::mem::replace(&mut r1, r2);
        s0 = std::mem::replace(&mut s1, s2);
    }
    let (mut a, mut b) = (r1, s1);
    if b.is_negative() {
        a = -a;
        b = -b;
    }
    if b.is_zero() || &b >= bound || !a.gcd(&b).is_one() {
        return None;
    }
    Some((a, b))
}

fn reconstruct(digits_value: &[BigInt], modulus: &BigInt) -> Option<(Vec<BigInt>, BigInt)> {
    let bound = (modulus / BigInt::from(2)).sqrt();
    let half = modulus / BigInt::from(2);
    let mut den = BigInt::one();
    let mut nums: Vec<(BigInt, BigInt)> = Vec::with_capacity(digits_value.len());
    for x in digits_value {
        let mut t = (&den * x).mod_floor(modulus);
        if t > half {
            t -= modulus;
        }
        if t.abs() < bound {
            nums.push((t, den.clone()));
            continue;
        }
        let (a, b) = rational_reconstruction(&t, modulus, &bound)?;
        den *= b;
        if den >= bound {
            return None;
        }
        nums.push((a, den.clone()));
    }
    // bring everything over the final common denominator
    let y = nums
        .into_iter()
        .map(|(num, d)| num * (&den / d))
        .collect();
    Some((y, den))
}

fn verifies(a: &[IntRow], b: &[BigInt], y: &[BigInt], den: &BigInt) -> bool {
    a.iter().zip(b).all(|(row, rhs)| {
        let lhs = row
            .iter()
            .fold(BigInt::zero(), |acc, (c, v)| acc + v * &y[*c]);
        lhs == rhs * den
    })
}

fn log2_big(v: &BigInt) -> f64 {
    let bits = v.bits();
    if bits <= 60 {
        return v.to_f64().map(|f| f.abs().log2()).unwrap_or(0.0);
    }
    let shifted: BigInt = v.abs() >> (bits - 53) as usize;
    shifted.to_f64().map(f64::log2).unwrap_or(0.0) + (bits - 53) as f64
}

/// Solves `A x = b` exactly. Returns `None` if `A` looks singular (singular
/// modulo several independent primes).
pub(crate) fn solve(a: &[IntRow], b: &[BigInt]) -> Option<Vec<BigRational>> {
    let n = a.len();
    assert_eq!(b.len(), n);
    if n == 0 {
        return Some(Vec::new());
    }
    let factor = primes().take(3).find_map(|p| Factor::new(a, p))?;
    let p = factor.p;
    let p_big = BigInt::from(p);

    // Hadamard bound on numerators and denominators of the solution.
    let log_h: f64 = a
        .iter()
        .zip(b)
        .map(|(row, rhs)| {
            let norm: BigInt = row.iter().map(|(_, v)| v * v).sum::<BigInt>() + rhs * rhs;
            0.5 * log2_big(&norm)
        })
        .sum();
    let max_steps = ((2.0 * log_h + 4.0) / (p as f64).log2()).ceil() as usize + 2;

    let mut residual: Vec<BigInt> = b.to_vec();
    let mut value = vec![BigInt::zero(); n];
    let mut power = BigInt::one();
    let mut next_check = 2usize;
    for step in 1..=max_steps {
        let mut rhs: Vec<u64> = residual.iter().map(|r| big_mod(r, p)).collect();
        let digit = factor.solve(&mut rhs);
        for (v, &d) in value.iter_mut().zip(&digit) {
            if d != 0 {
                *v += &power * d;
            }
        }
        power *= &p_big;
        for (r, row) in residual.iter_mut().zip(a) {
            let mut acc = std::mem::take(r);
            for (c, v) in row {
                if digit[*c] != 0 {
                    acc -= v * digit[*c];
                }
            }
            let (q, rem) = acc.div_rem(&p_big);
            debug_assert!(rem.is_zero(), "lifting residual must be divisible by p");
            *r = q;
        }
        if step == next_check || step == max_steps || residual.iter().all(Zero::is_zero) {
            next_check = (next_check * 3 / 2).max(next_check + 1);
            if let Some((y, den)) = reconstruct(&value, &power) {
                if verifies(a, b, &y, &den) {
                    return Some(
                        y.into_iter()
                            .map(|num| BigRational::new(num, den.clone()))
                            .collect(),
                    );
                }
            }
        }
    }
    None
}
