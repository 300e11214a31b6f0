//! One-call analysis over a graph, an input box and spec branches, producing
//! the report shared by the CLI and the bindings.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::Serialize;
use serde_json::value::RawValue;

use crate::alpha::{run_alpha_crown, OptimizerConfig};
use crate::engine::{run_crown, run_ibp, CrownVariant, SpecMatrix};
use crate::error::{Error, Result};
use crate::graph::NetworkGraph;
use crate::tensor::BoundedTensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Method {
    Ibp,
    #[default]
    Crown,
    AlphaCrown,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Ibp => "ibp",
            Method::Crown => "crown",
            Method::AlphaCrown => "alpha-crown",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Case-insensitive; dashes and underscores are ignored, so `alphaCROWN`,
/// `alpha-crown` and `ALPHA_CROWN` all name the same method.
impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| *c != '-' && *c != '_').collect::<String>().to_ascii_lowercase();
        match key.as_str() {
            "ibp" => Ok(Method::Ibp),
            "crown" => Ok(Method::Crown),
            "alphacrown" => Ok(Method::AlphaCrown),
            _ => Err(Error::Config(format!("unknown method '{s}' (expected ibp, crown or alpha-crown)"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AnalysisOptions {
    pub method: Method,
    pub variant: CrownVariant,
    pub optimizer: OptimizerConfig,
    pub timeout: Option<Duration>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Verified,
    Unknown,
    Timeout,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Verified => "verified",
            Verdict::Unknown => "unknown",
            Verdict::Timeout => "timeout",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BranchReport {
    pub branch: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rhs: Vec<f64>,
    /// Every row's upper bound is at most its right-hand side.
    pub verified: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub method: Method,
    pub branches: Vec<BranchReport>,
    pub verdict: Verdict,
    pub iterations: usize,
    pub time_seconds: f64,
}

/// Lossless decimal form used by every output format.
pub fn format_bound(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

fn json_number(v: f64) -> Box<RawValue> {
    let text = if v.is_finite() { format_bound(v) } else { format!("\"{}\"", format_bound(v)) };
    RawValue::from_string(text).expect("valid json literal")
}

#[derive(Serialize)]
struct JsonRow {
    branch: usize,
    row: usize,
    lower: Box<RawValue>,
    upper: Box<RawValue>,
    rhs: Box<RawValue>,
}

#[derive(Serialize)]
struct JsonBranch {
    branch: usize,
    verified: bool,
}

#[derive(Serialize)]
struct JsonReport<'a> {
    method: &'a str,
    rows: Vec<JsonRow>,
    branches: Vec<JsonBranch>,
    verdict: Verdict,
    iterations: usize,
    time_seconds: f64,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let rows = self
            .branches
            .iter()
            .flat_map(|b| {
                (0..b.lower.len()).map(move |i| JsonRow {
                    branch: b.branch,
                    row: i,
                    lower: json_number(b.lower[i]),
                    upper: json_number(b.upper[i]),
                    rhs: json_number(b.rhs[i]),
                })
            })
            .collect();
        let report = JsonReport {
            method: self.method.as_str(),
            rows,
            branches: self.branches.iter().map(|b| JsonBranch { branch: b.branch, verified: b.verified }).collect(),
            verdict: self.verdict,
            iterations: self.iterations,
            time_seconds: self.time_seconds,
        };
        serde_json::to_string(&report).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let many = self.branches.len() > 1;
        for b in &self.branches {
            if many {
                let status = if b.verified { "verified" } else { "unknown" };
                out.push_str(&format!("branch {}: {status}\n", b.branch));
            }
            for i in 0..b.lower.len() {
                out.push_str(&format!("row {i}: [{}, {}]\n", format_bound(b.lower[i]), format_bound(b.upper[i])));
            }
        }
        out.push_str(&format!("verdict: {}\n", self.verdict));
        out.push_str(&format!("iterations: {}\n", self.iterations));
        out.push_str(&format!("time: {:.3} s\n", self.time_seconds));
        out
    }
}

fn branch_report(spec: &SpecMatrix, bounds: &BoundedTensor) -> BranchReport {
    let upper = bounds.upper().data().to_vec();
    let verified = upper.iter().zip(&spec.rhs).all(|(u, t)| u <= t);
    BranchReport { branch: spec.branch, lower: bounds.lower().data().to_vec(), upper, rhs: spec.rhs.clone(), verified }
}

/// Bound the rows of every branch with the chosen method. A timeout is not
/// an error here: the report then carries the best bounds known and the
/// `timeout` verdict.
pub fn analyze(graph: &NetworkGraph, input: &BoundedTensor, specs: &[SpecMatrix], options: &AnalysisOptions) -> Result<RunReport> {
    if specs.is_empty() {
        return Err(Error::Config("no spec branches to bound".into()));
    }
    let start = Instant::now();
    let deadline = options.timeout.map(|t| start + t);
    let result = match options.method {
        Method::Ibp => run_ibp(graph, input, specs).map(|b| (b.into_iter().map(|b| b.bounds).collect::<Vec<_>>(), 0)),
        Method::Crown => run_crown(graph, input, specs, options.variant, None, deadline)
            .map(|r| (r.branches.into_iter().map(|b| b.bounds).collect(), 0)),
        Method::AlphaCrown => run_alpha_crown(graph, input, specs, options.variant, &options.optimizer, deadline)
            .map(|r| (r.branches.into_iter().map(|b| b.bounds).collect(), r.iterations)),
    };
    let (bounds, iterations, timed_out) = match result {
        Ok((b, it)) => (b, it, false),
        Err(Error::Timeout { partial }) => (partial, 0, true),
        Err(e) => return Err(e),
    };
    let branches: Vec<BranchReport> = specs.iter().zip(&bounds).map(|(s, b)| branch_report(s, b)).collect();
    let verdict = if timed_out {
        Verdict::Timeout
    } else if branches.iter().any(|b| b.verified) {
        Verdict::Verified
    } else {
        Verdict::Unknown
    };
    log::info!("{} finished: {verdict} after {iterations} iterations", options.method);
    Ok(RunReport { method: options.method, branches, verdict, iterations, time_seconds: start.elapsed().as_secs_f64() })
}
