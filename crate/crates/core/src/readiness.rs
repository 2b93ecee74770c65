//! Modules binding a metric, a rule and a remedy, and the local loop that
//! evaluates, checks and remediates until the data complies.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::args::{self, Args};
use crate::error::{Error, Result};
use crate::metrics::{MetricKind, MetricSpec, MetricValue};
use crate::remedies::{RemedyKind, RemedySpec};
use crate::rules::{parse_rule, Rule};
use crate::table::DataTable;

pub const DEFAULT_MAX_ITERATIONS: usize = 5;
/// Threshold for the memory module when the config gives none.
pub const DEFAULT_MEMORY_LIMIT_MB: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CadreModule {
    pub id: String,
    pub metric: MetricSpec,
    pub rule: Rule,
    pub remedy: RemedySpec,
    pub max_iterations: usize,
}

impl CadreModule {
    pub fn new(
        id: impl Into<String>,
        metric: MetricSpec,
        rule: Rule,
        remedy: RemedySpec,
        max_iterations: usize,
    ) -> Result<Self> {
        if rule.metric_name != metric.name() {
            return Err(Error::MetricMismatch {
                expected: metric.name().to_string(),
                actual: rule.metric_name,
            });
        }
        if max_iterations == 0 {
            return Err(Error::config("max_iterations", "must be at least 1"));
        }
        remedy.validate()?;
        Ok(CadreModule {
            id: id.into(),
            metric,
            rule,
            remedy,
            max_iterations,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadinessStatus {
    Ready,
    Flagged,
    Degenerate,
}

impl fmt::Display for ReadinessStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReadinessStatus::Ready => "Ready",
            ReadinessStatus::Flagged => "Flagged",
            ReadinessStatus::Degenerate => "Degenerate",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppliedRemedy {
    pub kind: RemedyKind,
    pub changed: bool,
    pub empty_result: bool,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub summary: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub metric: MetricValue,
    pub violated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remedy: Option<AppliedRemedy>,
}

/// The transmissible part of a readiness outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSummary {
    pub module_id: String,
    pub client_id: String,
    pub rule: Rule,
    pub trace: Vec<TraceEntry>,
    pub final_status: ReadinessStatus,
}

impl OutcomeSummary {
    pub fn before(&self) -> f64 {
        self.trace[0].metric.value
    }

    pub fn after(&self) -> f64 {
        self.trace[self.trace.len() - 1].metric.value
    }

    pub fn remedies_applied(&self) -> usize {
        self.trace.iter().filter(|e| e.remedy.is_some()).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReadinessOutcome {
    pub summary: OutcomeSummary,
    /// Remediated data. Stays on the client.
    pub table_after: DataTable,
}

/// Runs one module's evaluate → check → remediate loop.
///
/// Stops when the rule holds (`Ready`), when the remedy reports no change
/// or the remedy budget is spent (`Flagged`), or when a remedy empties the
/// table (`Degenerate`).
pub fn run_readiness_loop(table: &DataTable, module: &CadreModule) -> Result<ReadinessOutcome> {
    module.metric.validate(table)?;
    let mut current = table.clone();
    let mut trace = Vec::new();
    let mut iteration = 1;
    let status = loop {
        let metric = module.metric.evaluate(&current)?;
        let verdict = module.rule.evaluate(&metric)?;
        if !verdict.violated {
            trace.push(TraceEntry {
                iteration,
                metric,
                violated: false,
                remedy: None,
            });
            break ReadinessStatus::Ready;
        }
        if iteration > module.max_iterations {
            trace.push(TraceEntry {
                iteration,
                metric,
                violated: true,
                remedy: None,
            });
            break ReadinessStatus::Flagged;
        }
        let result = module.remedy.apply(&current)?;
        trace.push(TraceEntry {
            iteration,
            metric,
            violated: true,
            remedy: Some(AppliedRemedy {
                kind: module.remedy.kind,
                changed: result.changed,
                empty_result: result.empty_result,
                summary: result.summary,
            }),
        });
        if result.empty_result {
            current = result.table;
            break ReadinessStatus::Degenerate;
        }
        if !result.changed {
            break ReadinessStatus::Flagged;
        }
        current = result.table;
        iteration += 1;
    };
    Ok(ReadinessOutcome {
        summary: OutcomeSummary {
            module_id: module.id.clone(),
            client_id: table.meta().client_id.clone(),
            rule: module.rule.clone(),
            trace,
            final_status: status,
        },
        table_after: current,
    })
}

/// Runs modules in order, each on the previous module's output. A module
/// that empties the table ends the pipeline.
pub fn run_all_modules(
    table: &DataTable,
    modules: &[CadreModule],
) -> Result<Vec<ReadinessOutcome>> {
    if modules.is_empty() {
        return Err(Error::EmptyPipeline);
    }
    let mut outcomes: Vec<ReadinessOutcome> = Vec::with_capacity(modules.len());
    for module in modules {
        let input = outcomes.last().map_or(table, |o| &o.table_after);
        let outcome = run_readiness_loop(input, module)?;
        let stop = outcome.summary.final_status == ReadinessStatus::Degenerate;
        outcomes.push(outcome);
        if stop {
            break;
        }
    }
    Ok(outcomes)
}

/// Arguments a module constructor receives from the configuration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModuleArgs {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rule: Option<Rule>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub metric_args: Args,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub remedy_args: Args,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
}

pub type ModuleConstructor = dyn Fn(&str, &ModuleArgs) -> Result<CadreModule> + Send + Sync;

/// Named module constructors: the built-in modules plus any registered
/// by the embedding application.
#[derive(Clone, Default)]
pub struct ModuleRegistry {
    ctors: BTreeMap<String, Arc<ModuleConstructor>>,
}

impl fmt::Debug for ModuleRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.ctors.keys()).finish()
    }
}

impl ModuleRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn register<F>(&mut self, name: impl Into<String>, ctor: F) -> Result<()>
    where
        F: Fn(&str, &ModuleArgs) -> Result<CadreModule> + Send + Sync + 'static,
    {
        let name = name.into();
        if self.ctors.contains_key(&name) {
            return Err(Error::DuplicateName(name));
        }
        self.ctors.insert(name, Arc::new(ctor));
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.ctors.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.ctors.keys().map(String::as_str)
    }

    pub fn construct(&self, name: &str, args: &ModuleArgs) -> Result<CadreModule> {
        let ctor = self
            .ctors
            .get(name)
            .ok_or_else(|| Error::UnknownModule(name.to_string()))?;
        ctor(name, args)
    }

    /// Registry holding one module per readiness issue.
    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        for b in BUILTINS {
            reg.register(b.name, move |id: &str, a: &ModuleArgs| {
                build_builtin(b, id, a)
            })
            .expect("builtin names are unique");
        }
        reg
    }
}

#[derive(Clone, Copy)]
struct Builtin {
    name: &'static str,
    metric: MetricKind,
    default_rule: &'static str,
    remedy: RemedyKind,
}

pub const NOISE_MODULE: &str = "noise_management";
pub const IMBALANCE_MODULE: &str = "class_imbalance";
pub const DUPLICATE_MODULE: &str = "duplicate_management";
pub const MEMORY_MODULE: &str = "memory_optimization";
pub const PARITY_MODULE: &str = "bias_parity";
pub const REPRESENTATION_MODULE: &str = "bias_representation";
pub const OUTLIER_MODULE: &str = "outlier_management";
pub const ANONYMITY_MODULE: &str = "k_anonymity";

const BUILTINS: [Builtin; 8] = [
    Builtin {
        name: NOISE_MODULE,
        metric: MetricKind::MeanMagnitude,
        default_rule: "mean_magnitude > 0.37",
        remedy: RemedyKind::RemoveNoisyRows,
    },
    Builtin {
        name: IMBALANCE_MODULE,
        metric: MetricKind::ImbalanceDegree,
        default_rule: "imbalance_degree > 0",
        remedy: RemedyKind::SmoteOversample,
    },
    Builtin {
        name: DUPLICATE_MODULE,
        metric: MetricKind::DuplicateProportion,
        default_rule: "duplicate_proportion > 0",
        remedy: RemedyKind::Deduplicate,
    },
    Builtin {
        name: MEMORY_MODULE,
        metric: MetricKind::MemoryUsageMb,
        default_rule: "memory_usage_mb > 1",
        remedy: RemedyKind::OptimizeMemory,
    },
    Builtin {
        name: PARITY_MODULE,
        metric: MetricKind::StatisticalParityDiff,
        default_rule: "statistical_parity_diff > 0",
        remedy: RemedyKind::StratifiedResample,
    },
    Builtin {
        name: REPRESENTATION_MODULE,
        metric: MetricKind::RepresentationRateDiff,
        default_rule: "representation_rate_diff > 0",
        remedy: RemedyKind::StratifiedResample,
    },
    Builtin {
        name: OUTLIER_MODULE,
        metric: MetricKind::OutlierProportionIqr,
        default_rule: "outlier_proportion_iqr > 0",
        remedy: RemedyKind::ClipOutliersIqr,
    },
    Builtin {
        name: ANONYMITY_MODULE,
        metric: MetricKind::KAnonymityLevel,
        default_rule: "k_anonymity_level <= 1",
        remedy: RemedyKind::SuppressLowAnonymity,
    },
];

fn build_builtin(b: Builtin, id: &str, a: &ModuleArgs) -> Result<CadreModule> {
    let rule = match &a.rule {
        Some(r) => r.clone(),
        None => parse_rule(b.default_rule)?,
    };
    let mut remedy = RemedySpec {
        kind: b.remedy,
        args: a.remedy_args.clone(),
    };
    if b.remedy == RemedyKind::RemoveNoisyRows
        && args::get_f64(&remedy.args, "row_mean_threshold")?.is_none()
    {
        remedy
            .args
            .insert("row_mean_threshold".into(), rule.threshold.into());
    }
    if b.remedy.is_stochastic() && remedy.seed()?.is_none() {
        remedy.args.insert("rng_seed".into(), 0u64.into());
    }
    // mean magnitude and outlier columns apply to both halves of the module
    if let Some(cols) = a.metric_args.get("columns") {
        remedy
            .args
            .entry("columns".into())
            .or_insert_with(|| cols.clone());
    }
    CadreModule::new(
        id,
        MetricSpec {
            kind: b.metric,
            args: a.metric_args.clone(),
        },
        rule,
        remedy,
        a.max_iterations.unwrap_or(DEFAULT_MAX_ITERATIONS),
    )
}
