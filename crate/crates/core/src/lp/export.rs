//! CPLEX-LP and fixed-MPS writers.
//!
//! Both writers are byte-deterministic: rows are stably sorted by tag and
//! numbers use Rust's shortest round-trip formatting (fixed MPS squeezes them
//! into its 12-character fields).

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::simplex::Direction;
use crate::constraints::{Constraint, LinearProgram, Relation};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    LpText,
    Mps,
}

pub fn export_lp(lp: &LinearProgram, format: ExportFormat, direction: Direction) -> String {
    match format {
        ExportFormat::LpText => write_lp_text(lp, direction),
        ExportFormat::Mps => write_mps(lp, direction),
    }
}

fn sorted_rows(lp: &LinearProgram) -> Vec<&Constraint> {
    let mut rows: Vec<&Constraint> = lp.rows().collect();
    rows.sort_by(|a, b| a.tag.cmp(&b.tag));
    rows
}

/// LP-format row names: `[A-Za-z0-9_]`, not starting with a digit, unique,
/// at most 255 characters.
fn row_names(rows: &[&Constraint]) -> Vec<String> {
    let mut seen = HashSet::new();
    rows.iter()
        .map(|c| {
            let mut base: String = c
                .tag
                .chars()
                .map(|ch| if ch.is_ascii_alphanumeric() { ch } else { '_' })
                .collect();
            if base.is_empty() || base.starts_with(|ch: char| ch.is_ascii_digit()) {
                base.insert(0, 'r');
            }
            base.truncate(240);
            let mut name = base.clone();
            let mut k = 1;
            while !seen.insert(name.clone()) {
                name = format!("{base}_{k}");
                k += 1;
            }
            name
        })
        .collect()
}

fn fmt_num(x: f64) -> String {
    // `{}` never emits exponents; keep tiny and huge values compact.
    if x != 0.0 && (x.abs() < 1e-6 || x.abs() >= 1e15) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

fn write_terms(out: &mut String, terms: &[(usize, f64)], lp: &LinearProgram) {
    if terms.is_empty() {
        if lp.n_vars > 0 {
            let _ = write!(out, " 0 {}", lp.var_name(0));
        } else {
            out.push_str(" 0");
        }
        return;
    }
    for (k, &(j, c)) in terms.iter().enumerate() {
        // some readers cap line length
        if k > 0 && k % 8 == 0 {
            out.push_str("\n  ");
        }
        let sign = if c < 0.0 { "-" } else { "+" };
        let mag = c.abs();
        let name = lp.var_name(j);
        if k == 0 && c >= 0.0 {
            if mag == 1.0 {
                let _ = write!(out, " {name}");
            } else {
                let _ = write!(out, " {} {name}", fmt_num(mag));
            }
        } else if mag == 1.0 {
            let _ = write!(out, " {sign} {name}");
        } else {
            let _ = write!(out, " {sign} {} {name}", fmt_num(mag));
        }
    }
}

fn write_lp_text(lp: &LinearProgram, direction: Direction) -> String {
    let mut out = String::new();
    let rows = sorted_rows(lp);
    let names = row_names(&rows);
    let _ = writeln!(out, "\\ {} variables, {} rows", lp.n_vars, rows.len());
    if lp.objective.constant != 0.0 {
        let _ = writeln!(out, "\\ objective constant {}", fmt_num(lp.objective.constant));
    }
    out.push_str(match direction {
        Direction::Min => "Minimize\n",
        Direction::Max => "Maximize\n",
    });
    out.push_str(" obj:");
    write_terms(&mut out, &lp.objective.terms, lp);
    out.push('\n');
    out.push_str("Subject To\n");
    for (c, name) in rows.iter().zip(&names) {
        let _ = write!(out, " {name}:");
        write_terms(&mut out, &c.expr.terms, lp);
        let op = match c.relation {
            Relation::Eq => "=",
            Relation::Le => "<=",
        };
        let _ = writeln!(out, " {op} {}", fmt_num(-c.expr.constant + 0.0));
    }
    out.push_str("Bounds\n");
    for j in 0..lp.n_vars {
        let _ = writeln!(out, " {} >= 0", lp.var_name(j));
    }
    out.push_str("End\n");
    out
}

/// Fits a number into the 12-character fixed-MPS field.
fn fmt_mps_num(x: f64) -> String {
    let s = format!("{x}");
    if s.len() <= 12 {
        return s;
    }
    for prec in (0..=10).rev() {
        let s = format!("{x:.prec$e}");
        if s.len() <= 12 {
            return s;
        }
    }
    format!("{x:.0e}")
}

fn write_mps(lp: &LinearProgram, direction: Direction) -> String {
    let rows = sorted_rows(lp);
    let row_name = |i: usize| format!("R{:07}", i + 1);
    let long_cols = (0..lp.n_vars).any(|j| lp.var_name(j).len() > 8);
    let col_name = |j: usize| {
        if long_cols {
            format!("C{:07}", j + 1)
        } else {
            lp.var_name(j)
        }
    };

    let mut out = String::new();
    let _ = writeln!(out, "* {} variables, {} rows", lp.n_vars, rows.len());
    if lp.objective.constant != 0.0 {
        let _ = writeln!(out, "* objective constant {}", fmt_num(lp.objective.constant));
    }
    for (i, c) in rows.iter().enumerate() {
        let _ = writeln!(out, "* {} {}", row_name(i), c.tag);
    }
    if long_cols {
        for j in 0..lp.n_vars {
            let _ = writeln!(out, "* {} {}", col_name(j), lp.var_name(j));
        }
    }
    out.push_str("NAME          MARGPOLY\n");
    if direction == Direction::Max {
        out.push_str("OBJSENSE\n    MAX\n");
    }
    out.push_str("ROWS\n N  OBJ\n");
    for (i, c) in rows.iter().enumerate() {
        let kind = match c.relation {
            Relation::Eq => 'E',
            Relation::Le => 'L',
        };
        let _ = writeln!(out, " {kind}  {}", row_name(i));
    }

    let mut columns: Vec<Vec<(String, f64)>> = vec![Vec::new(); lp.n_vars];
    for &(j, c) in &lp.objective.terms {
        columns[j].push(("OBJ".into(), c));
    }
    for (i, c) in rows.iter().enumerate() {
        for &(j, a) in &c.expr.terms {
            columns[j].push((row_name(i), a));
        }
    }
    out.push_str("COLUMNS\n");
    for (j, entries) in columns.iter().enumerate() {
        let name = col_name(j);
        if entries.is_empty() {
            // keep the column declared so the variable count survives
            let _ = writeln!(out, "    {:<8}  {:<8}  {:>12}", name, "OBJ", "0");
        }
        for (row, a) in entries {
            let _ = writeln!(out, "    {:<8}  {:<8}  {:>12}", name, row, fmt_mps_num(*a));
        }
    }
    out.push_str("RHS\n");
    for (i, c) in rows.iter().enumerate() {
        let b = -c.expr.constant + 0.0;
        if b != 0.0 {
            let _ = writeln!(out, "    {:<8}  {:<8}  {:>12}", "RHS", row_name(i), fmt_mps_num(b));
        }
    }
    out.push_str("ENDATA\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::LinExpr;

    fn one_var() -> LinearProgram {
        let mut lp = LinearProgram::new(1, LinExpr::new(vec![(0, 1.0)], 0.0));
        lp.add_constraints([Constraint::le(LinExpr::new(vec![(0, 1.0)], -0.7), "cap".into())]);
        lp
    }

    #[test]
    fn one_variable_lp_text() {
        let text = export_lp(&one_var(), ExportFormat::LpText, Direction::Max);
        assert_eq!(
            text,
            "\\ 1 variables, 1 rows\nMaximize\n obj: t0_0\nSubject To\n cap: t0_0 <= 0.7\nBounds\n t0_0 >= 0\nEnd\n"
        );
    }

    #[test]
    fn one_variable_mps() {
        let text = export_lp(&one_var(), ExportFormat::Mps, Direction::Max);
        assert!(text.contains("OBJSENSE\n    MAX\n"));
        assert!(text.contains(" L  R0000001\n"));
        assert!(text.contains("    t0_0      R0000001             1\n"));
        assert!(text.contains("    RHS       R0000001           0.7\n"));
        assert!(text.ends_with("ENDATA\n"));
    }

    #[test]
    fn empty_program_is_minimal_document() {
        let lp = LinearProgram::new(0, LinExpr::default());
        let text = export_lp(&lp, ExportFormat::LpText, Direction::Min);
        assert_eq!(text, "\\ 0 variables, 0 rows\nMinimize\n obj: 0\nSubject To\nBounds\nEnd\n");
        let mps = export_lp(&lp, ExportFormat::Mps, Direction::Min);
        assert!(mps.contains("ROWS\n N  OBJ\nCOLUMNS\nRHS\nENDATA\n"));
    }

    #[test]
    fn mps_numbers_fit_fields() {
        for x in [0.30000000000000004, -1.0 / 3.0, 1e-20, 123456789.123, 0.5] {
            let s = fmt_mps_num(x);
            assert!(s.len() <= 12, "{s}");
            let back: f64 = s.parse().unwrap();
            assert!((back - x).abs() <= 1e-6 * x.abs().max(1.0), "{x} -> {s}");
        }
    }

    #[test]
    fn row_names_are_sanitized_and_unique() {
        let rows = [
            Constraint::eq(LinExpr::default(), "binding:M1:do(X2=0)#t3:v=X1=0".into()),
            Constraint::eq(LinExpr::default(), "binding:M1:do(X2=0)#t3:v=X1=0".into()),
            Constraint::eq(LinExpr::default(), "9lives".into()),
        ];
        let refs: Vec<&Constraint> = rows.iter().collect();
        let names = row_names(&refs);
        assert_eq!(names[0], "binding_M1_do_X2_0__t3_v_X1_0");
        assert_eq!(names[1], "binding_M1_do_X2_0__t3_v_X1_0_1");
        assert_eq!(names[2], "r9lives");
    }
}
