//! JSON documents for tasks and supply models.
//!
//! All rationals are strings (`"3"`, `"1/2"`, `"0.25"`). Every document the
//! tool writes carries `"schema": "dmr-kit/1"`; on input the field is
//! optional but must match when present.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ExecDistribution, TaskSpec};
use crate::supply::{self, BoundPair, SupplyCurve, SupplyModel};
use crate::Rat;

pub const SCHEMA: &str = "dmr-kit/1";

fn check_schema(schema: &Option<String>) -> Result<()> {
    match schema {
        Some(s) if s != SCHEMA => Err(Error::Schema(s.clone())),
        _ => Ok(()),
    }
}

pub fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecEntryDoc {
    pub value: Rat,
    pub prob: Rat,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<String>,
    pub period: Rat,
    pub deadline: Rat,
    /// A rational, or `"inf"` (rejected: unbounded dismiss points are not
    /// supported).
    pub dismiss_offset: String,
    pub execution: Vec<ExecEntryDoc>,
}

impl TaskDoc {
    /// Task exactly as written, without validating the invariants.
    pub fn to_task_unchecked(&self) -> Result<TaskSpec> {
        check_schema(&self.schema)?;
        let raw = self.dismiss_offset.trim();
        if matches!(raw.to_ascii_lowercase().as_str(), "inf" | "infinity" | "∞") {
            return Err(Error::UnboundedDismiss);
        }
        let dismiss_offset: Rat = raw.parse().map_err(|e: crate::rat::ParseRatError| {
            Error::Json(serde::de::Error::custom(e))
        })?;
        Ok(TaskSpec {
            exec: ExecDistribution::from_pairs(
                self.execution.iter().map(|e| (e.value.clone(), e.prob.clone())),
            ),
            period: self.period.clone(),
            deadline: self.deadline.clone(),
            dismiss_offset,
        })
    }

    pub fn to_task(&self) -> Result<TaskSpec> {
        let t = self.to_task_unchecked()?;
        TaskSpec::new(t.exec, t.period, t.deadline, t.dismiss_offset)
    }

    pub fn from_task(task: &TaskSpec) -> Self {
        TaskDoc {
            schema: Some(SCHEMA.to_string()),
            period: task.period.clone(),
            deadline: task.deadline.clone(),
            dismiss_offset: task.dismiss_offset.to_string(),
            execution: task
                .exec
                .entries()
                .iter()
                .map(|e| ExecEntryDoc {
                    value: e.value.clone(),
                    prob: e.prob.clone(),
                })
                .collect(),
        }
    }
}

pub fn parse_task_doc(text: &str) -> Result<TaskDoc> {
    Ok(serde_json::from_str(text)?)
}

pub fn parse_task(text: &str) -> Result<TaskSpec> {
    parse_task_doc(text)?.to_task()
}

pub fn load_task(path: &Path) -> Result<TaskSpec> {
    parse_task(&read_file(path)?)
}

pub fn task_to_json(task: &TaskSpec) -> String {
    serde_json::to_string_pretty(&TaskDoc::from_task(task)).expect("task serializes")
}

pub type CurveDoc = Vec<(Rat, Rat)>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundPairDoc {
    pub upper: CurveDoc,
    pub lower: CurveDoc,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SupplyDocBody {
    Exact {
        q: usize,
        curves: Vec<CurveDoc>,
    },
    Bounds {
        q: usize,
        curves: Vec<BoundPairDoc>,
    },
    /// TDMA slot `[slot_start, slot_start + slot_length)` every `cycle`.
    Tdma {
        cycle: Rat,
        slot_start: Rat,
        slot_length: Rat,
    },
    /// Hard constant bandwidth server bounds.
    Cbs { budget: Rat, server_period: Rat },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupplyDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<String>,
    #[serde(flatten)]
    pub body: SupplyDocBody,
}

impl SupplyDoc {
    /// Builds the supply model for a task of the given period. Generated
    /// supplies use the period directly; explicit curves must span it.
    pub fn resolve(&self, period: &Rat) -> Result<SupplyModel> {
        check_schema(&self.schema)?;
        let model = match &self.body {
            SupplyDocBody::Exact { q, curves } => {
                check_q(*q, curves.len())?;
                SupplyModel::exact(
                    curves
                        .iter()
                        .map(|c| SupplyCurve::new(c.clone()))
                        .collect::<Result<_>>()?,
                )?
            }
            SupplyDocBody::Bounds { q, curves } => {
                check_q(*q, curves.len())?;
                SupplyModel::bounds(
                    curves
                        .iter()
                        .map(|p| {
                            Ok(BoundPair {
                                upper: SupplyCurve::new(p.upper.clone())?,
                                lower: SupplyCurve::new(p.lower.clone())?,
                            })
                        })
                        .collect::<Result<_>>()?,
                )?
            }
            SupplyDocBody::Tdma {
                cycle,
                slot_start,
                slot_length,
            } => supply::tdma(period, cycle, slot_start, slot_length)?,
            SupplyDocBody::Cbs {
                budget,
                server_period,
            } => supply::cbs(period, budget, server_period)?,
        };
        model.check_period(period)?;
        Ok(model)
    }

    pub fn from_model(model: &SupplyModel) -> Self {
        let body = match model.mode() {
            supply::SupplyMode::Exact(curves) => SupplyDocBody::Exact {
                q: curves.len(),
                curves: curves.iter().map(|c| c.breakpoints().to_vec()).collect(),
            },
            supply::SupplyMode::Bounds(pairs) => SupplyDocBody::Bounds {
                q: pairs.len(),
                curves: pairs
                    .iter()
                    .map(|p| BoundPairDoc {
                        upper: p.upper.breakpoints().to_vec(),
                        lower: p.lower.breakpoints().to_vec(),
                    })
                    .collect(),
            },
        };
        SupplyDoc {
            schema: Some(SCHEMA.to_string()),
            body,
        }
    }
}

fn check_q(q: usize, n: usize) -> Result<()> {
    if q != n || q == 0 {
        return Err(Error::InvalidSupply(format!(
            "q = {q} but {n} curve entries given"
        )));
    }
    Ok(())
}

pub fn parse_supply(text: &str, period: &Rat) -> Result<SupplyModel> {
    let doc: SupplyDoc = serde_json::from_str(text)?;
    doc.resolve(period)
}

pub fn load_supply(path: &Path, period: &Rat) -> Result<SupplyModel> {
    parse_supply(&read_file(path)?, period)
}

pub fn supply_to_json(model: &SupplyModel) -> String {
    serde_json::to_string_pretty(&SupplyDoc::from_model(model)).expect("supply serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rat;
    use proptest::prelude::*;

    const TASK: &str = r#"{"period": "4", "deadline": "4", "dismiss_offset": "1",
        "execution": [{"value": "2", "prob": "1/2"}, {"value": "3", "prob": "1/2"}]}"#;

    #[test]
    fn reads_task_document() {
        let t = parse_task(TASK).unwrap();
        assert_eq!(t.period, rat!(4));
        assert_eq!(t.exec.entries()[1].prob, rat!(1, 2));
    }

    #[test]
    fn infinite_dismiss_offset_has_its_own_error() {
        let text = TASK.replace("\"dismiss_offset\": \"1\"", "\"dismiss_offset\": \"inf\"");
        assert!(matches!(parse_task(&text), Err(Error::UnboundedDismiss)));
    }

    #[test]
    fn invalid_task_is_reported() {
        let text = TASK.replace("\"prob\": \"1/2\"}]", "\"prob\": \"2/5\"}]");
        match parse_task(&text) {
            Err(Error::InvalidTask(report)) => {
                assert_eq!(report.to_string(), "probabilities sum to 9/10 ≠ 1")
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_schema_rejected() {
        let text = TASK.replacen('{', "{\"schema\": \"dmr-kit/9\",", 1);
        assert!(matches!(parse_task(&text), Err(Error::Schema(_))));
    }

    #[test]
    fn supply_documents() {
        let exact = r#"{"mode": "exact", "q": 1, "curves": [[["0","0"],["1","0"],["3","2"]]]}"#;
        let m = parse_supply(exact, &rat!(3)).unwrap();
        assert_eq!(m.service(1, &rat!(3)).unwrap(), rat!(2));
        assert!(parse_supply(exact, &rat!(4)).is_err());

        let tdma = r#"{"schema": "dmr-kit/1", "mode": "tdma", "cycle": "3", "slot_start": "1", "slot_length": "2"}"#;
        let m = parse_supply(tdma, &rat!(4)).unwrap();
        assert_eq!(m.repeat_q(), 3);
        let back = parse_supply(&supply_to_json(&m), &rat!(4)).unwrap();
        assert_eq!(back, m);

        let cbs = r#"{"mode": "cbs", "budget": "1/2", "server_period": "1"}"#;
        let m = parse_supply(cbs, &rat!(4)).unwrap();
        assert!(!m.is_exact());

        let bad_q = r#"{"mode": "exact", "q": 2, "curves": [[["0","0"],["3","2"]]]}"#;
        assert!(parse_supply(bad_q, &rat!(3)).is_err());
    }

    fn arb_task() -> impl Strategy<Value = TaskSpec> {
        (
            proptest::collection::btree_set(0i64..40, 1..5),
            1i64..20,
            1i64..20,
            0i64..20,
            1i64..6,
        )
            .prop_map(|(values, period, deadline, dismiss, den)| {
                let h = values.len() as i64;
                let pairs = values.into_iter().map(|v| (rat!(v, den), rat!(1, h)));
                TaskSpec::new(
                    ExecDistribution::from_pairs(pairs),
                    rat!(period, den),
                    rat!(deadline, den),
                    rat!(dismiss, den),
                )
                .unwrap()
            })
    }

    proptest! {
        #[test]
        fn task_json_round_trips(task in arb_task()) {
            let text = task_to_json(&task);
            prop_assert_eq!(parse_task(&text).unwrap(), task);
        }
    }
}
