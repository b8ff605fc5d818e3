//! Structured outcome of a numerical verification.

use serde::Serialize;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub check: String,
    pub passed: bool,
    /// Number of instances, pairs or samples examined.
    pub cases: usize,
    /// Largest observed discrepancy in the check's own units.
    pub max_error: f64,
    pub tolerance: f64,
    /// Description of the case attaining `max_error` when the check fails.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worst_case: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl VerificationReport {
    pub fn new(check: impl Into<String>, tolerance: f64) -> Self {
        Self {
            check: check.into(),
            passed: true,
            cases: 0,
            max_error: 0.0,
            tolerance,
            worst_case: None,
            notes: Vec::new(),
        }
    }

    /// Records one case; `describe` is evaluated only when the case is the new worst.
    pub fn record(&mut self, error: f64, describe: impl FnOnce() -> String) {
        self.cases += 1;
        let error = if error.is_nan() { f64::INFINITY } else { error };
        if error > self.max_error || (self.worst_case.is_none() && error > self.tolerance) {
            self.max_error = error;
            self.worst_case = Some(describe());
        }
        if error > self.tolerance {
            self.passed = false;
        }
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }

    pub fn fail(&mut self, reason: impl Into<String>) {
        self.passed = false;
        self.notes.push(reason.into());
    }

    /// Merges sub-checks into one report that passes iff every part passes.
    pub fn combine(check: impl Into<String>, parts: &[VerificationReport]) -> Self {
        let mut r = Self::new(check, f64::NAN);
        r.passed = parts.iter().all(|p| p.passed);
        r.cases = parts.iter().map(|p| p.cases).sum();
        r.max_error = f64::NAN;
        r.notes = parts.iter().map(|p| p.to_string()).collect();
        r
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: cases={} max_error={:.3e} tolerance={:.1e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.check,
            self.cases,
            self.max_error,
            self.tolerance
        )?;
        if let Some(w) = &self.worst_case {
            write!(f, " worst={w}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_tracks_worst_and_verdict() {
        let mut r = VerificationReport::new("x", 1e-3);
        r.record(1e-5, || "a".into());
        assert!(r.passed);
        r.record(1e-2, || "b".into());
        r.record(1e-4, || "c".into());
        assert!(!r.passed);
        assert_eq!(r.worst_case.as_deref(), Some("b"));
        assert_eq!(r.cases, 3);
        r.record(f64::NAN, || "nan".into());
        assert_eq!(r.worst_case.as_deref(), Some("nan"));
    }
}
