//! Plain-text dump in the CPLEX LP file format, for cross-checking models
//! against external solvers.

use std::io::{self, Write};

use crate::problem::{LpProblem, RowKind};

fn var_label(lp: &LpProblem, j: usize) -> String {
    match lp.var_name(j) {
        Some(name) => name
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '.' { c } else { '_' })
            .collect(),
        None => format!("x{j}"),
    }
}

fn write_terms<W: Write>(out: &mut W, lp: &LpProblem, terms: &[(usize, f64)]) -> io::Result<()> {
    if terms.is_empty() {
        return write!(out, " 0");
    }
    for (k, &(j, v)) in terms.iter().enumerate() {
        let sign = if v < 0.0 { "-" } else if k == 0 { "" } else { "+" };
        write!(out, " {} {:e} {}", sign, v.abs(), var_label(lp, j))?;
    }
    Ok(())
}

pub fn write_lp_format<W: Write>(lp: &LpProblem, out: &mut W) -> io::Result<()> {
    writeln!(out, "\\ {} variables, {} rows", lp.num_vars(), lp.num_rows())?;
    writeln!(out, "Minimize")?;
    write!(out, " obj:")?;
    let obj: Vec<(usize, f64)> = lp
        .cost()
        .iter()
        .enumerate()
        .filter(|(_, c)| **c != 0.0)
        .map(|(j, c)| (j, *c))
        .collect();
    write_terms(out, lp, &obj)?;
    writeln!(out)?;
    writeln!(out, "Subject To")?;
    for (i, row) in lp.rows().iter().enumerate() {
        write!(out, " r{i}:")?;
        write_terms(out, lp, &row.coeffs)?;
        let op = match row.kind {
            RowKind::Eq => "=",
            RowKind::Le => "<=",
        };
        writeln!(out, " {op} {:e}", row.rhs)?;
    }
    writeln!(out, "Bounds")?;
    for j in 0..lp.num_vars() {
        let (l, u) = (lp.lower()[j], lp.upper()[j]);
        let name = var_label(lp, j);
        match (l.is_finite(), u.is_finite()) {
            (false, false) => writeln!(out, " {name} free")?,
            (true, true) if l == u => writeln!(out, " {name} = {l:e}")?,
            (true, true) => writeln!(out, " {l:e} <= {name} <= {u:e}")?,
            (true, false) => writeln!(out, " {name} >= {l:e}")?,
            (false, true) => writeln!(out, " -inf <= {name} <= {u:e}")?,
        }
    }
    writeln!(out, "End")
}
