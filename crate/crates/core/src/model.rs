//! Task model: a periodic task with iid discrete execution times, a relative
//! deadline, and a dismiss offset after the deadline.

use std::fmt;

use serde::Serialize;

use crate::error::Error;
use crate::Rat;

/// One possible execution time and its probability.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ExecOutcome {
    pub value: Rat,
    pub prob: Rat,
}

/// Discrete execution-time distribution, ordered by strictly increasing value.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ExecDistribution {
    entries: Vec<ExecOutcome>,
}

impl ExecDistribution {
    /// Builds a distribution without checking it. Use [`validate_task`] or
    /// [`TaskSpec::new`] to enforce the invariants.
    pub fn from_pairs<I>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (Rat, Rat)>,
    {
        ExecDistribution {
            entries: pairs
                .into_iter()
                .map(|(value, prob)| ExecOutcome { value, prob })
                .collect(),
        }
    }

    pub fn entries(&self) -> &[ExecOutcome] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_value(&self) -> Option<&Rat> {
        self.entries.iter().map(|e| &e.value).max()
    }

    pub fn mean(&self) -> Rat {
        self.entries.iter().map(|e| &e.value * &e.prob).sum()
    }
}

/// A periodic soft real-time task `(C, D, δ, T)`.
///
/// Job `j` (1-based) is released at `(j-1)T`, has its deadline at
/// `(j-1)T + D`, and any of its work still pending at `(j-1)T + D + δ` is
/// discarded.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TaskSpec {
    pub exec: ExecDistribution,
    pub period: Rat,
    pub deadline: Rat,
    pub dismiss_offset: Rat,
}

impl TaskSpec {
    /// Builds a task and rejects it unless [`validate_task`] reports no
    /// violations.
    pub fn new(
        exec: ExecDistribution,
        period: Rat,
        deadline: Rat,
        dismiss_offset: Rat,
    ) -> Result<Self, Error> {
        let task = TaskSpec {
            exec,
            period,
            deadline,
            dismiss_offset,
        };
        let report = validate_task(&task);
        if report.is_valid() {
            Ok(task)
        } else {
            Err(Error::InvalidTask(report))
        }
    }

    /// `D + δ`, the dismiss point relative to the release.
    pub fn dismiss_horizon(&self) -> Rat {
        &self.deadline + &self.dismiss_offset
    }

    pub fn release(&self, job: u64) -> Rat {
        &self.period * Rat::from_int(job as i64 - 1)
    }

    pub fn absolute_deadline(&self, job: u64) -> Rat {
        self.release(job) + &self.deadline
    }

    pub fn absolute_dismiss(&self, job: u64) -> Rat {
        self.release(job) + self.dismiss_horizon()
    }

    /// Same task with a different execution-time distribution.
    pub fn with_exec(&self, exec: ExecDistribution) -> Self {
        TaskSpec {
            exec,
            ..self.clone()
        }
    }
}

/// A single broken invariant of a [`TaskSpec`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    NonPositivePeriod { period: Rat },
    NonPositiveDeadline { deadline: Rat },
    NegativeDismissOffset { dismiss_offset: Rat },
    EmptyDistribution,
    NegativeValue { index: usize, value: Rat },
    NonPositiveProbability { index: usize, prob: Rat },
    NotStrictlyIncreasing { index: usize },
    ProbabilitySum { sum: Rat },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonPositivePeriod { period } => write!(f, "period {period} is not > 0"),
            Violation::NonPositiveDeadline { deadline } => {
                write!(f, "deadline {deadline} is not > 0")
            }
            Violation::NegativeDismissOffset { dismiss_offset } => {
                write!(f, "dismiss offset {dismiss_offset} is negative")
            }
            Violation::EmptyDistribution => write!(f, "execution distribution is empty"),
            Violation::NegativeValue { index, value } => {
                write!(f, "execution value #{index} ({value}) is negative")
            }
            Violation::NonPositiveProbability { index, prob } => {
                write!(f, "probability #{index} ({prob}) is not > 0")
            }
            Violation::NotStrictlyIncreasing { index } => write!(
                f,
                "values not strictly increasing (entry #{index} does not exceed its predecessor)"
            ),
            Violation::ProbabilitySum { sum } => write!(f, "probabilities sum to {sum} ≠ 1"),
        }
    }
}

/// Every invariant a task breaks; empty iff the task is well-formed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        let msgs: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", msgs.join("; "))
    }
}

pub fn validate_task(task: &TaskSpec) -> ValidationReport {
    let mut violations = Vec::new();
    if !task.period.is_positive() {
        violations.push(Violation::NonPositivePeriod {
            period: task.period.clone(),
        });
    }
    if !task.deadline.is_positive() {
        violations.push(Violation::NonPositiveDeadline {
            deadline: task.deadline.clone(),
        });
    }
    if task.dismiss_offset.is_negative() {
        violations.push(Violation::NegativeDismissOffset {
            dismiss_offset: task.dismiss_offset.clone(),
        });
    }

    let entries = task.exec.entries();
    if entries.is_empty() {
        violations.push(Violation::EmptyDistribution);
    }
    for (index, e) in entries.iter().enumerate() {
        if e.value.is_negative() {
            violations.push(Violation::NegativeValue {
                index,
                value: e.value.clone(),
            });
        }
        if !e.prob.is_positive() {
            violations.push(Violation::NonPositiveProbability {
                index,
                prob: e.prob.clone(),
            });
        }
    }
    for (index, pair) in entries.windows(2).enumerate() {
        if pair[1].value <= pair[0].value {
            violations.push(Violation::NotStrictlyIncreasing { index: index + 1 });
        }
    }
    if !entries.is_empty() {
        let sum: Rat = entries.iter().map(|e| &e.prob).sum();
        if sum != Rat::one() {
            violations.push(Violation::ProbabilitySum { sum });
        }
    }
    ValidationReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rat;

    fn task(exec: &[(Rat, Rat)]) -> TaskSpec {
        TaskSpec {
            exec: ExecDistribution::from_pairs(exec.iter().cloned()),
            period: rat!(4),
            deadline: rat!(4),
            dismiss_offset: rat!(1),
        }
    }

    #[test]
    fn two_point_task_is_valid() {
        let t = task(&[(rat!(2), rat!(1, 2)), (rat!(3), rat!(1, 2))]);
        assert!(validate_task(&t).is_valid());
        assert_eq!(t.absolute_dismiss(2), rat!(9));
    }

    #[test]
    fn probability_sum_below_one() {
        let t = task(&[(rat!(2), rat!(1, 2)), (rat!(3), rat!(2, 5))]);
        let report = validate_task(&t);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(
            report.violations[0].to_string(),
            "probabilities sum to 9/10 ≠ 1"
        );
    }

    #[test]
    fn unordered_values() {
        let t = task(&[(rat!(3), rat!(1, 2)), (rat!(2), rat!(1, 2))]);
        let report = validate_task(&t);
        assert_eq!(
            report.violations,
            vec![Violation::NotStrictlyIncreasing { index: 1 }]
        );
        assert!(report.to_string().starts_with("values not strictly increasing"));
    }

    #[test]
    fn zero_execution_allowed_negative_rejected() {
        let ok = task(&[(rat!(0), rat!(1, 2)), (rat!(3), rat!(1, 2))]);
        assert!(validate_task(&ok).is_valid());
        let bad = task(&[(rat!(-1), rat!(1, 2)), (rat!(3), rat!(1, 2))]);
        assert!(matches!(
            validate_task(&bad).violations[0],
            Violation::NegativeValue { index: 0, .. }
        ));
    }

    #[test]
    fn every_violation_is_listed() {
        let t = TaskSpec {
            exec: ExecDistribution::from_pairs([(rat!(1), rat!(0))]),
            period: rat!(0),
            deadline: rat!(-1),
            dismiss_offset: rat!(-1),
        };
        let report = validate_task(&t);
        assert_eq!(report.violations.len(), 5);
        assert!(TaskSpec::new(t.exec, t.period, t.deadline, t.dismiss_offset).is_err());
    }

    #[test]
    fn empty_distribution() {
        let t = task(&[]);
        assert_eq!(
            validate_task(&t).violations,
            vec![Violation::EmptyDistribution]
        );
    }
}
