use std::fmt;

use crate::LpError;

/// Sense of a constraint row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    /// `a·x = b`
    Eq,
    /// `a·x ≤ b`
    Le,
}

/// One sparse constraint row.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub kind: RowKind,
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

/// A linear program `min c·x` subject to equality rows, `≤` rows and
/// per-variable bounds. Rows keep their insertion order, which the
/// factorization uses as a fill-reducing hint for staged models.
#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    c: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    names: Vec<Option<String>>,
    rows: Vec<Row>,
}

impl LpProblem {
    pub fn new() -> Self {
        Self {
            c: Vec::new(),
            lower: Vec::new(),
            upper: Vec::new(),
            names: Vec::new(),
            rows: Vec::new(),
        }
    }

    /// Builds a problem from dense matrices.
    ///
    /// `a_eq`/`a_ub` are row-major; empty slices mean "no rows of that kind".
    pub fn from_dense(
        c: &[f64],
        a_eq: &[Vec<f64>],
        b_eq: &[f64],
        a_ub: &[Vec<f64>],
        b_ub: &[f64],
        lower: &[f64],
        upper: &[f64],
    ) -> Result<Self, LpError> {
        let n = c.len();
        if lower.len() != n || upper.len() != n {
            return Err(LpError::Dimension(format!(
                "{} objective coefficients but {} lower / {} upper bounds",
                n,
                lower.len(),
                upper.len()
            )));
        }
        if a_eq.len() != b_eq.len() || a_ub.len() != b_ub.len() {
            return Err(LpError::Dimension(
                "row count of A does not match length of b".into(),
            ));
        }
        let mut lp = Self::new();
        for j in 0..n {
            lp.add_var(c[j], lower[j], upper[j]);
        }
        for (row, &b) in a_eq.iter().zip(b_eq) {
            lp.add_dense_row(RowKind::Eq, row, b)?;
        }
        for (row, &b) in a_ub.iter().zip(b_ub) {
            lp.add_dense_row(RowKind::Le, row, b)?;
        }
        lp.validate()?;
        Ok(lp)
    }

    fn add_dense_row(&mut self, kind: RowKind, row: &[f64], rhs: f64) -> Result<(), LpError> {
        if row.len() != self.num_vars() {
            return Err(LpError::Dimension(format!(
                "row has {} entries, expected {}",
                row.len(),
                self.num_vars()
            )));
        }
        let coeffs: Vec<(usize, f64)> = row
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(j, v)| (j, *v))
            .collect();
        self.rows.push(Row { kind, coeffs, rhs });
        Ok(())
    }

    /// Adds a variable and returns its index.
    pub fn add_var(&mut self, cost: f64, lower: f64, upper: f64) -> usize {
        self.c.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.names.push(None);
        self.c.len() - 1
    }

    pub fn add_named_var(&mut self, name: impl Into<String>, cost: f64, lower: f64, upper: f64) -> usize {
        let j = self.add_var(cost, lower, upper);
        self.names[j] = Some(name.into());
        j
    }

    pub fn add_eq(&mut self, coeffs: &[(usize, f64)], rhs: f64) -> usize {
        self.push_row(RowKind::Eq, coeffs, rhs)
    }

    pub fn add_le(&mut self, coeffs: &[(usize, f64)], rhs: f64) -> usize {
        self.push_row(RowKind::Le, coeffs, rhs)
    }

    /// `a·x ≥ b`, stored as `−a·x ≤ −b`.
    pub fn add_ge(&mut self, coeffs: &[(usize, f64)], rhs: f64) -> usize {
        let negated: Vec<(usize, f64)> = coeffs.iter().map(|&(j, v)| (j, -v)).collect();
        self.push_row(RowKind::Le, &negated, -rhs)
    }

    fn push_row(&mut self, kind: RowKind, coeffs: &[(usize, f64)], rhs: f64) -> usize {
        // merge duplicate indices so every column sees one entry per row
        let mut merged: Vec<(usize, f64)> = coeffs.to_vec();
        merged.sort_by_key(|&(j, _)| j);
        merged.dedup_by(|b, a| {
            if a.0 == b.0 {
                a.1 += b.1;
                true
            } else {
                false
            }
        });
        merged.retain(|&(_, v)| v != 0.0);
        self.rows.push(Row { kind, coeffs: merged, rhs });
        self.rows.len() - 1
    }

    pub fn set_cost(&mut self, j: usize, cost: f64) {
        self.c[j] = cost;
    }

    pub fn set_bounds(&mut self, j: usize, lower: f64, upper: f64) {
        self.lower[j] = lower;
        self.upper[j] = upper;
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn cost(&self) -> &[f64] {
        &self.c
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn var_name(&self, j: usize) -> Option<&str> {
        self.names[j].as_deref()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.c.iter().zip(x).map(|(c, x)| c * x).sum()
    }

    /// Checks dimensions, bound ordering and finiteness of coefficients.
    pub fn validate(&self) -> Result<(), LpError> {
        let n = self.num_vars();
        for j in 0..n {
            if !self.c[j].is_finite() {
                return Err(LpError::NonFinite(format!("objective coefficient {j}")));
            }
            let (l, u) = (self.lower[j], self.upper[j]);
            if l.is_nan() || u.is_nan() || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return Err(LpError::InvalidBounds { var: j, lower: l, upper: u });
            }
            if l > u {
                return Err(LpError::InvalidBounds { var: j, lower: l, upper: u });
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(LpError::NonFinite(format!("right-hand side of row {i}")));
            }
            for &(j, v) in &row.coeffs {
                if j >= n {
                    return Err(LpError::Dimension(format!(
                        "row {i} references variable {j}, only {n} exist"
                    )));
                }
                if !v.is_finite() {
                    return Err(LpError::NonFinite(format!("coefficient ({i}, {j})")));
                }
            }
        }
        Ok(())
    }
}

impl Default for LpProblem {
    fn default() -> Self {
        Self::new()
    }
}

/// Largest violation of each constraint class at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibilityReport {
    pub max_eq_violation: f64,
    pub max_ub_violation: f64,
    pub max_bound_violation: f64,
}

impl FeasibilityReport {
    pub fn max_violation(&self) -> f64 {
        self.max_eq_violation
            .max(self.max_ub_violation)
            .max(self.max_bound_violation)
    }

    pub fn is_feasible(&self, tol: f64) -> bool {
        self.max_violation() <= tol
    }
}

impl fmt::Display for FeasibilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "eq {:.3e}, ub {:.3e}, bounds {:.3e}",
            self.max_eq_violation, self.max_ub_violation, self.max_bound_violation
        )
    }
}

/// Measures how far `x` is from satisfying every constraint of `problem`.
pub fn check_feasible(problem: &LpProblem, x: &[f64]) -> Result<FeasibilityReport, LpError> {
    if x.len() != problem.num_vars() {
        return Err(LpError::Dimension(format!(
            "point has {} entries, problem has {} variables",
            x.len(),
            problem.num_vars()
        )));
    }
    let mut report = FeasibilityReport {
        max_eq_violation: 0.0,
        max_ub_violation: 0.0,
        max_bound_violation: 0.0,
    };
    for row in &problem.rows {
        let lhs: f64 = row.coeffs.iter().map(|&(j, v)| v * x[j]).sum();
        match row.kind {
            RowKind::Eq => {
                report.max_eq_violation = report.max_eq_violation.max((lhs - row.rhs).abs())
            }
            RowKind::Le => {
                report.max_ub_violation = report.max_ub_violation.max(lhs - row.rhs)
            }
        }
    }
    for (j, &v) in x.iter().enumerate() {
        let below = problem.lower[j] - v;
        let above = v - problem.upper[j];
        report.max_bound_violation = report.max_bound_violation.max(below).max(above);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_indices_are_merged() {
        let mut lp = LpProblem::new();
        let x = lp.add_var(1.0, 0.0, 1.0);
        lp.add_eq(&[(x, 1.0), (x, 2.0)], 3.0);
        assert_eq!(lp.rows()[0].coeffs, vec![(x, 3.0)]);
    }

    #[test]
    fn ge_rows_are_negated() {
        let mut lp = LpProblem::new();
        let x = lp.add_var(1.0, 0.0, 5.0);
        lp.add_ge(&[(x, 1.0)], 2.0);
        let r = &lp.rows()[0];
        assert_eq!(r.kind, RowKind::Le);
        assert_eq!(r.coeffs, vec![(x, -1.0)]);
        assert_eq!(r.rhs, -2.0);
    }

    #[test]
    fn inverted_bounds_rejected() {
        let err = LpProblem::from_dense(&[1.0], &[], &[], &[], &[], &[2.0], &[1.0]).unwrap_err();
        assert!(matches!(err, LpError::InvalidBounds { var: 0, .. }));
    }

    #[test]
    fn feasible_point_has_zero_residuals() {
        let lp = LpProblem::from_dense(
            &[1.0, 1.0],
            &[vec![1.0, 1.0]],
            &[1.0],
            &[vec![1.0, -1.0]],
            &[0.5],
            &[0.0, 0.0],
            &[1.0, 1.0],
        )
        .unwrap();
        let r = check_feasible(&lp, &[0.5, 0.5]).unwrap();
        assert!(r.is_feasible(1e-12));
    }

    #[test]
    fn equality_violation_is_reported() {
        let lp = LpProblem::from_dense(
            &[0.0, 0.0],
            &[vec![1.0, 1.0]],
            &[1.0],
            &[],
            &[],
            &[0.0, 0.0],
            &[2.0, 2.0],
        )
        .unwrap();
        let r = check_feasible(&lp, &[1.0, 0.5]).unwrap();
        assert!((r.max_eq_violation - 0.5).abs() < 1e-15);
        assert_eq!(r.max_ub_violation, 0.0);
        assert_eq!(r.max_bound_violation, 0.0);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let lp = LpProblem::from_dense(&[0.0], &[], &[], &[], &[], &[0.0], &[1.0]).unwrap();
        assert!(check_feasible(&lp, &[0.0, 1.0]).is_err());
    }
}
