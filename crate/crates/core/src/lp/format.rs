//! CPLEX-style LP text output for cross-checking models with external solvers.
//!
//! Grammar of the emitted file:
//!
//! ```text
//! file     := "\\ " comment NL sense NL " obj: " linexpr NL
//!             "Subject To" NL { " " name ": " linexpr rel number NL }
//!             "Bounds" NL { bound NL }
//!             [ "Binaries" NL { " " var NL } ]
//!             "End" NL
//! sense    := "Maximize" | "Minimize"
//! linexpr  := term { (" + " | " - ") term }      term := number " " var
//! rel      := " <= " | " = " | " >= "
//! bound    := " " var " free" | " " lo " <= " var " <= " hi
//!           | " -inf <= " var " <= " hi | " " var " >= " lo
//! ```
//!
//! Names are sanitized to `[A-Za-z0-9_.]` and made unique with the column index.

use std::io::{self, Write};

use super::{LpProblem, Relation, Sense};

fn sanitize(name: &str, index: usize, prefix: char) -> String {
    let clean: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{prefix}{index}_{clean}")
}

fn write_expr<W: Write>(out: &mut W, terms: &[(usize, f64)], names: &[String]) -> io::Result<()> {
    if terms.is_empty() {
        return write!(
            out,
            "0 {}",
            names.first().map(String::as_str).unwrap_or("x0")
        );
    }
    for (k, &(j, v)) in terms.iter().enumerate() {
        let sep = match (k, v < 0.0) {
            (0, true) => "-",
            (0, false) => "",
            (_, true) => " - ",
            (_, false) => " + ",
        };
        write!(out, "{sep}{:e} {}", v.abs(), names[j])?;
    }
    Ok(())
}

/// Writes `problem` in LP format; `binaries` lists variables to declare binary.
pub fn write_lp_file<W: Write>(
    out: &mut W,
    problem: &LpProblem,
    binaries: &[usize],
    comment: &str,
) -> io::Result<()> {
    let names: Vec<String> = problem
        .var_names
        .iter()
        .enumerate()
        .map(|(j, n)| sanitize(n, j, 'x'))
        .collect();
    writeln!(out, "\\ {}", comment.replace('\n', " "))?;
    writeln!(
        out,
        "{}",
        match problem.sense {
            Sense::Maximize => "Maximize",
            Sense::Minimize => "Minimize",
        }
    )?;
    let obj: Vec<(usize, f64)> = problem
        .objective
        .iter()
        .enumerate()
        .filter(|(_, &c)| c != 0.0)
        .map(|(j, &c)| (j, c))
        .collect();
    write!(out, " obj: ")?;
    write_expr(out, &obj, &names)?;
    writeln!(out)?;
    writeln!(out, "Subject To")?;
    for (i, row) in problem.rows.iter().enumerate() {
        write!(out, " {}: ", sanitize(&row.name, i, 'r'))?;
        write_expr(out, &row.terms, &names)?;
        let rel = match row.relation {
            Relation::Le => "<=",
            Relation::Eq => "=",
            Relation::Ge => ">=",
        };
        writeln!(out, " {rel} {:e}", row.rhs)?;
    }
    writeln!(out, "Bounds")?;
    for (j, name) in names.iter().enumerate() {
        let (lo, hi) = (problem.lower[j], problem.upper[j]);
        match (lo.is_finite(), hi.is_finite()) {
            (false, false) => writeln!(out, " {name} free")?,
            (true, true) => writeln!(out, " {lo:e} <= {name} <= {hi:e}")?,
            (false, true) => writeln!(out, " -inf <= {name} <= {hi:e}")?,
            (true, false) => writeln!(out, " {name} >= {lo:e}")?,
        }
    }
    if !binaries.is_empty() {
        writeln!(out, "Binaries")?;
        for &j in binaries {
            writeln!(out, " {}", names[j])?;
        }
    }
    writeln!(out, "End")
}
