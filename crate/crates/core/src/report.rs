//! Named residual-vs-bound check results, shared by verifiers and the CLI.

use serde::{Deserialize, Serialize};

/// One named check: a measured residual against its bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub residual: f64,
    pub bound: f64,
    pub pass: bool,
}

impl CheckResult {
    /// Pass iff `residual <= bound`.
    pub fn le(name: impl Into<String>, residual: f64, bound: f64) -> Self {
        CheckResult {
            name: name.into(),
            residual,
            bound,
            pass: residual.is_finite() && residual <= bound,
        }
    }

    /// Pass iff `value >= bound` (signed, one-sided lower checks).
    pub fn ge(name: impl Into<String>, value: f64, bound: f64) -> Self {
        CheckResult {
            name: name.into(),
            residual: value,
            bound,
            pass: value.is_finite() && value >= bound,
        }
    }
}

/// True when every check in the slice passed.
pub fn all_pass(checks: &[CheckResult]) -> bool {
    checks.iter().all(|c| c.pass)
}
