//! Fixed-format MPS export for debugging individual programs.
//!
//! Fixed MPS limits names to eight characters, so columns are written as
//! `C0001, C0002, ...` and rows as `R0001, ...`. The original names are listed
//! in `*` comment lines at the top of the file.

use std::fmt::Write;

use super::{LinearProgram, Relation, Sense};

fn num(v: f64) -> String {
    let s = format!("{v}");
    if s.len() <= 12 {
        return s;
    }
    for prec in (0..=6).rev() {
        let s = format!("{v:.prec$e}");
        if s.len() <= 12 {
            return s;
        }
    }
    format!("{v:.0e}")
}

fn line(out: &mut String, f1: &str, f2: &str, f3: &str, f4: &str) {
    let l = format!(" {f1:<2} {f2:<8}  {f3:<8}  {f4:>12}");
    out.push_str(l.trim_end());
    out.push('\n');
}

pub fn write_mps(lp: &LinearProgram) -> String {
    let col = |j: usize| format!("C{:04}", j + 1);
    let row = |i: usize| format!("R{:04}", i + 1);
    let mut out = String::new();
    for (j, v) in lp.variables().iter().enumerate() {
        let _ = writeln!(out, "* {} = {}", col(j), v.name);
    }
    for (i, c) in lp.constraints().iter().enumerate() {
        let _ = writeln!(out, "* {} = {}", row(i), c.name);
    }
    out.push_str("NAME          FSINDEX\n");
    out.push_str("OBJSENSE\n");
    out.push_str(match lp.sense {
        Sense::Maximize => "    MAX\n",
        Sense::Minimize => "    MIN\n",
    });
    out.push_str("ROWS\n");
    line(&mut out, "N", "OBJ", "", "");
    for (i, c) in lp.constraints().iter().enumerate() {
        let kind = match c.relation {
            Relation::Le => "L",
            Relation::Ge => "G",
            Relation::Eq => "E",
        };
        line(&mut out, kind, &row(i), "", "");
    }

    // Column-major coefficient lists.
    let n = lp.n_variables();
    let mut cols: Vec<Vec<(String, f64)>> = vec![Vec::new(); n];
    for &(v, c) in lp.objective() {
        if c != 0.0 {
            cols[v.0].push(("OBJ".to_string(), c));
        }
    }
    for (i, c) in lp.constraints().iter().enumerate() {
        for &(v, a) in &c.coefficients {
            if a != 0.0 {
                cols[v.0].push((row(i), a));
            }
        }
    }
    out.push_str("COLUMNS\n");
    for (j, entries) in cols.iter().enumerate() {
        for (r, a) in entries {
            line(&mut out, "", &col(j), r, &num(*a));
        }
    }
    out.push_str("RHS\n");
    for (i, c) in lp.constraints().iter().enumerate() {
        if c.rhs != 0.0 {
            line(&mut out, "", "RHS", &row(i), &num(c.rhs));
        }
    }
    out.push_str("BOUNDS\n");
    for (j, v) in lp.variables().iter().enumerate() {
        let name = col(j);
        match (v.lower.is_finite(), v.upper.is_finite()) {
            (false, false) => line(&mut out, "FR", "BND", &name, ""),
            (true, true) if v.lower == v.upper => {
                line(&mut out, "FX", "BND", &name, &num(v.lower))
            }
            (lo, hi) => {
                if !lo {
                    line(&mut out, "MI", "BND", &name, "");
                } else if v.lower != 0.0 {
                    line(&mut out, "LO", "BND", &name, &num(v.lower));
                }
                if hi {
                    line(&mut out, "UP", "BND", &name, &num(v.upper));
                }
            }
        }
    }
    out.push_str("ENDATA\n");
    out
}
