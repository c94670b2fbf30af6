//! Irreducibility, stationary distribution and deadline miss rate of a
//! constructed chain.
//!
//! A finite irreducible chain has a unique stationary distribution `π`, and
//! the fraction of jobs that miss their deadline converges almost surely to
//! the stationary mass of the miss states. If the chain is not irreducible
//! no rate is reported.

pub mod scc;
mod modular;
pub mod solver;

use serde::Serialize;

use crate::chain::{ChainKind, MarkovChain};
use crate::error::Result;
use crate::Rat;

pub use scc::tarjan_scc;

/// Chains above this size default to the floating-point solver.
pub const EXACT_STATE_LIMIT: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolverChoice {
    /// Exact up to [`EXACT_STATE_LIMIT`] states, power iteration above.
    #[default]
    Auto,
    Exact,
    Float,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnalysisResult {
    pub irreducible: bool,
    pub pi: Option<Vec<Rat>>,
    pub dmr: Option<Rat>,
    pub scc_count: usize,
    pub n_states: usize,
    pub kind: ChainKind,
    /// `false` when `pi` and `dmr` come from power iteration.
    pub exact: bool,
    pub diagnostics: Vec<String>,
}

impl AnalysisResult {
    /// The DMR is an upper bound when the chain was built from supply bounds.
    pub fn is_upper_bound(&self) -> bool {
        self.kind == ChainKind::Bounds
    }

    /// One-line human summary, e.g. `DMR = 7/24 (~0.29167)`.
    pub fn summary(&self) -> String {
        match &self.dmr {
            None => "DMR = None (not irreducible)".to_string(),
            Some(d) if self.is_upper_bound() => {
                format!("DMR ≤ {d} (upper bound, supply-bound mode)")
            }
            Some(d) if !self.exact => format!("DMR ≈ {:.5} (approximate)", d.to_f64()),
            Some(d) => format!("DMR = {d} (~{:.5})", d.to_f64()),
        }
    }

    pub fn to_json(&self) -> AnalysisJson {
        AnalysisJson {
            schema: crate::io::SCHEMA,
            irreducible: self.irreducible,
            dmr: self.dmr.clone(),
            dmr_float: self.dmr.as_ref().map(Rat::to_f64),
            upper_bound: self.is_upper_bound(),
            exact: self.exact,
            n_states: self.n_states,
            scc_count: self.scc_count,
            pi: self.pi.clone(),
            diagnostics: self.diagnostics.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisJson {
    pub schema: &'static str,
    pub irreducible: bool,
    pub dmr: Option<Rat>,
    pub dmr_float: Option<f64>,
    pub upper_bound: bool,
    pub exact: bool,
    pub n_states: usize,
    pub scc_count: usize,
    pub pi: Option<Vec<Rat>>,
    pub diagnostics: Vec<String>,
}

/// Whether every state can reach every other through positive-probability
/// transitions, and the number of strongly connected components.
pub fn check_irreducible(chain: &MarkovChain) -> (bool, usize) {
    let comps = tarjan_scc(&chain.adjacency());
    (comps.len() == 1, comps.len())
}

/// Exact solution of `Pπ = π` with `Σπ = 1`. Fails with
/// [`crate::Error::SingularSystem`] unless the solution is unique.
pub fn stationary_distribution(chain: &MarkovChain) -> Result<Vec<Rat>> {
    solver::exact_stationary(chain)
}

pub fn compute_dmr(chain: &MarkovChain) -> Result<AnalysisResult> {
    compute_dmr_with(chain, SolverChoice::Auto)
}

pub fn compute_dmr_with(chain: &MarkovChain, solver: SolverChoice) -> Result<AnalysisResult> {
    let comps = tarjan_scc(&chain.adjacency());
    let scc_count = comps.len();
    let mut result = AnalysisResult {
        irreducible: scc_count == 1,
        pi: None,
        dmr: None,
        scc_count,
        n_states: chain.len(),
        kind: chain.kind(),
        exact: true,
        diagnostics: Vec::new(),
    };

    if !result.irreducible {
        result.diagnostics.push(format!(
            "chain has {scc_count} strongly connected components; no deadline miss rate"
        ));
        const SHOWN: usize = 20;
        for (i, comp) in comps.iter().rev().take(SHOWN).enumerate() {
            let labels: Vec<String> = comp
                .iter()
                .take(10)
                .map(|&s| chain.states()[s].label())
                .collect();
            let more = if comp.len() > 10 {
                format!(" … (+{})", comp.len() - 10)
            } else {
                String::new()
            };
            result
                .diagnostics
                .push(format!("component {i}: {}{more}", labels.join(" ")));
        }
        if scc_count > SHOWN {
            result
                .diagnostics
                .push(format!("… {} more components", scc_count - SHOWN));
        }
        return Ok(result);
    }

    let use_float = match solver {
        SolverChoice::Exact => false,
        SolverChoice::Float => true,
        SolverChoice::Auto => chain.len() > EXACT_STATE_LIMIT,
    };

    let pi = if use_float {
        result.exact = false;
        match solver::power_iteration(chain) {
            Some((pi, iters)) => {
                result.diagnostics.push(format!(
                    "approximate: power iteration converged after {iters} iterations (L1 residual < {:e})",
                    solver::POWER_TOLERANCE
                ));
                pi.into_iter()
                    .map(|v| Rat::from_f64(v).unwrap_or_else(Rat::zero))
                    .collect()
            }
            None => {
                result.diagnostics.push(format!(
                    "approximate: power iteration did not converge within {} iterations",
                    solver::POWER_MAX_ITERATIONS
                ));
                return Ok(result);
            }
        }
    } else {
        stationary_distribution(chain)?
    };

    let dmr: Rat = chain.miss_states().iter().map(|&s| &pi[s]).sum();
    result.dmr = Some(dmr);
    result.pi = Some(pi);
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::ChainState;
    use crate::rat;

    fn two_cycles() -> MarkovChain {
        let states = (0..4)
            .map(|i| ChainState::new(0, i % 2 == 1, rat!(i)))
            .collect();
        MarkovChain::from_parts(
            states,
            vec![
                vec![(1, rat!(1))],
                vec![(0, rat!(1))],
                vec![(3, rat!(1))],
                vec![(2, rat!(1))],
            ],
            vec![rat!(1, 2), rat!(0), rat!(1, 2), rat!(0)],
        )
        .unwrap()
    }

    #[test]
    fn disjoint_cycles_are_reducible() {
        let c = two_cycles();
        assert_eq!(check_irreducible(&c), (false, 2));
        let r = compute_dmr(&c).unwrap();
        assert!(!r.irreducible);
        assert!(r.pi.is_none() && r.dmr.is_none());
        assert_eq!(r.summary(), "DMR = None (not irreducible)");
        assert!(r.diagnostics.iter().any(|d| d.starts_with("component 0")));
    }

    #[test]
    fn float_solver_agrees_on_small_chain() {
        let states = (0..2).map(|i| ChainState::new(0, i == 1, rat!(i))).collect();
        let c = MarkovChain::from_parts(
            states,
            vec![
                vec![(0, rat!(3, 4)), (1, rat!(1, 4))],
                vec![(0, rat!(1, 2)), (1, rat!(1, 2))],
            ],
            vec![rat!(1), rat!(0)],
        )
        .unwrap();
        let exact = compute_dmr_with(&c, SolverChoice::Exact).unwrap();
        assert_eq!(exact.dmr, Some(rat!(1, 3)));
        assert_eq!(exact.summary(), "DMR = 1/3 (~0.33333)");
        let approx = compute_dmr_with(&c, SolverChoice::Float).unwrap();
        assert!(!approx.exact);
        assert!((approx.dmr.unwrap().to_f64() - 1.0 / 3.0).abs() < 1e-9);
    }
}
