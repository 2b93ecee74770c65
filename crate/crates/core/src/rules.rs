//! Threshold rules over scalar metric values.
//!
//! A rule is written `<metric> <op> <number>`, for example
//! `duplicate_proportion > 0` or `k_anonymity_level <= 1`. The rule is
//! *violated* when the comparison holds, which triggers the remedy.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricValue;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
}

impl Comparator {
    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Eq => "==",
            Comparator::Ne => "!=",
        }
    }

    pub fn holds(self, observed: f64, threshold: f64) -> bool {
        match self {
            Comparator::Gt => observed > threshold,
            Comparator::Ge => observed >= threshold,
            Comparator::Lt => observed < threshold,
            Comparator::Le => observed <= threshold,
            Comparator::Eq => observed == threshold,
            Comparator::Ne => observed != threshold,
        }
    }

    pub fn is_strict(self) -> bool {
        matches!(self, Comparator::Gt | Comparator::Lt | Comparator::Ne)
    }

    fn from_symbol(s: &str) -> Option<Comparator> {
        Some(match s {
            ">" => Comparator::Gt,
            ">=" => Comparator::Ge,
            "<" => Comparator::Lt,
            "<=" => Comparator::Le,
            "==" => Comparator::Eq,
            "!=" => Comparator::Ne,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    #[serde(rename = "metric")]
    pub metric_name: String,
    #[serde(rename = "op")]
    pub comparator: Comparator,
    pub threshold: f64,
}

impl Rule {
    pub fn new(metric: impl Into<String>, comparator: Comparator, threshold: f64) -> Self {
        Rule {
            metric_name: metric.into(),
            comparator,
            threshold,
        }
    }

    pub fn is_violated_by(&self, observed: f64) -> bool {
        self.comparator.holds(observed, self.threshold)
    }

    pub fn evaluate(&self, metric: &MetricValue) -> Result<RuleVerdict> {
        evaluate_rule(self, metric)
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {}",
            self.metric_name,
            self.comparator.symbol(),
            self.threshold
        )
    }
}

impl FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Rule> {
        parse_rule(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleVerdict {
    pub rule: Rule,
    pub observed: f64,
    pub violated: bool,
}

pub fn evaluate_rule(rule: &Rule, metric: &MetricValue) -> Result<RuleVerdict> {
    if metric.name != rule.metric_name {
        return Err(Error::MetricMismatch {
            expected: rule.metric_name.clone(),
            actual: metric.name.clone(),
        });
    }
    Ok(RuleVerdict {
        rule: rule.clone(),
        observed: metric.value,
        violated: rule.is_violated_by(metric.value),
    })
}

fn grammar() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*(>=|<=|==|!=|>|<)\s*(\S+)\s*$").unwrap()
    })
}

pub fn parse_rule(expr: &str) -> Result<Rule> {
    let err = |reason: &str| Error::RuleSyntax {
        expr: expr.to_string(),
        reason: reason.to_string(),
    };
    let caps = grammar()
        .captures(expr)
        .ok_or_else(|| err("expected `<metric> <op> <number>`"))?;
    let comparator = Comparator::from_symbol(&caps[2]).ok_or_else(|| err("unknown operator"))?;
    let threshold: f64 = caps[3]
        .parse()
        .map_err(|_| err("threshold is not a number"))?;
    if !threshold.is_finite() {
        return Err(err("threshold must be finite"));
    }
    Ok(Rule::new(&caps[1], comparator, threshold))
}
