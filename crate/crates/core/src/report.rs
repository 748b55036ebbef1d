//! Pass/fail records shared by every check.

use std::collections::BTreeMap;

use serde::Serialize;

/// At most this many violations are kept verbatim; the count is always exact.
pub const MAX_STORED_VIOLATIONS: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub node: usize,
    pub location: Vec<f64>,
    pub value: f64,
    pub bound: f64,
}

/// One row of a sweep table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub param: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub name: String,
    pub params: BTreeMap<String, f64>,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_residual: Option<f64>,
    pub checked: usize,
    pub violation_count: usize,
    /// The violation with the largest excess `value - bound`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worst: Option<Violation>,
    pub violations: Vec<Violation>,
    pub table: Vec<TableRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub order: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl VerificationReport {
    /// An empty, passing report.
    pub fn new(name: impl Into<String>) -> Self {
        VerificationReport {
            name: name.into(),
            params: BTreeMap::new(),
            pass: true,
            min_residual: None,
            checked: 0,
            violation_count: 0,
            worst: None,
            violations: Vec::new(),
            table: Vec::new(),
            order: None,
            notes: Vec::new(),
        }
    }

    pub fn param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }

    /// Records `value <= bound` at a node, logging a violation when it fails.
    pub fn check(&mut self, node: usize, location: &[f64], value: f64, bound: f64) -> bool {
        self.checked += 1;
        if value <= bound {
            return true;
        }
        let v = Violation {
            node,
            location: location.to_vec(),
            value,
            bound,
        };
        let excess = value - bound;
        if self
            .worst
            .as_ref()
            .map_or(true, |w| excess > w.value - w.bound)
        {
            self.worst = Some(v.clone());
        }
        if self.violations.len() < MAX_STORED_VIOLATIONS {
            self.violations.push(v);
        }
        self.violation_count += 1;
        self.pass = false;
        false
    }

    pub fn observe_residual(&mut self, r: f64) {
        self.min_residual = Some(self.min_residual.map_or(r, |m| m.min(r)));
    }

    pub fn push_row(&mut self, param: f64, residual: f64) {
        self.table.push(TableRow { param, residual });
    }

    pub fn fail(&mut self, reason: impl Into<String>) {
        self.pass = false;
        self.notes.push(reason.into());
    }

    /// Merges `other` into `self`: counts add up, the pass flag is the
    /// conjunction, the stored violations are concatenated up to the cap.
    pub fn absorb(&mut self, other: VerificationReport) {
        self.pass &= other.pass;
        self.checked += other.checked;
        self.violation_count += other.violation_count;
        if let Some(r) = other.min_residual {
            self.observe_residual(r);
        }
        if let Some(w) = other.worst {
            if self
                .worst
                .as_ref()
                .map_or(true, |cur| w.value - w.bound > cur.value - cur.bound)
            {
                self.worst = Some(w);
            }
        }
        let room = MAX_STORED_VIOLATIONS.saturating_sub(self.violations.len());
        self.violations
            .extend(other.violations.into_iter().take(room));
        self.table.extend(other.table);
        self.notes.extend(other.notes);
    }

    /// Least-squares slope of `log residual` against `log param` over the
    /// table rows with positive entries.
    pub fn fit_order(&mut self) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .table
            .iter()
            .filter(|r| r.param > 0.0 && r.residual > 0.0)
            .map(|r| (r.param.ln(), r.residual.ln()))
            .collect();
        self.order = log_slope(&pts);
        self.order
    }
}

/// Least-squares slope through `(x, y)` pairs; `None` with fewer than two
/// distinct abscissae.
pub fn log_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_matches_list_up_to_cap() {
        let mut r = VerificationReport::new("t");
        for i in 0..40 {
            r.check(i, &[i as f64], i as f64, 4.5);
        }
        assert_eq!(r.checked, 40);
        assert_eq!(r.violation_count, 35);
        assert_eq!(r.violations.len(), MAX_STORED_VIOLATIONS);
        assert_eq!(r.worst.as_ref().unwrap().node, 39);
        assert!(!r.pass);
    }

    #[test]
    fn absorb_and_order() {
        let mut a = VerificationReport::new("a");
        a.observe_residual(0.5);
        let mut b = VerificationReport::new("b");
        b.observe_residual(-0.1);
        b.check(3, &[0.0], 2.0, 1.0);
        a.absorb(b);
        assert_eq!(a.min_residual, Some(-0.1));
        assert_eq!(a.violation_count, 1);
        assert!(!a.pass);

        let mut s = VerificationReport::new("s");
        for k in 1..5 {
            let h = 0.5f64.powi(k);
            s.push_row(h, 3.0 * h * h);
        }
        assert!((s.fit_order().unwrap() - 2.0).abs() < 1e-12);
    }
}
