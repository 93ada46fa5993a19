//! Regression output: JSON per fit and stacked-column CSV tables.

use std::io::Write;

use serde_json::{json, Map, Value};

use super::{EconError, FitResult, CONSTANT};

/// `***`, `**`, `*` at the 1%, 5% and 10% levels.
pub fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}

fn finite(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

pub fn fit_json(fit: &FitResult) -> Value {
    let mut coef = Map::new();
    for name in &fit.names {
        let p = fit.p_value(name).unwrap();
        coef.insert(
            name.clone(),
            json!({
                "coef": finite(fit.coef(name).unwrap()),
                "se": finite(fit.se(name).unwrap()),
                "t": finite(fit.t_stat(name).unwrap()),
                "p": finite(p),
                "stars": stars(p),
            }),
        );
    }
    json!({
        "coef": coef,
        "n": fit.n_obs,
        "clusters": fit.n_clusters,
        "r2": finite(fit.r_squared),
    })
}

/// Columns of fits stacked the usual way: coefficient with stars on one
/// row, standard error in parentheses below, then sample rows and any extra
/// rows (diagnostics).
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub columns: Vec<(String, FitResult)>,
    pub extra: Vec<(String, Vec<String>)>,
}

impl Table {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn column(mut self, label: &str, fit: FitResult) -> Self {
        self.columns.push((label.to_string(), fit));
        self
    }

    pub fn row(mut self, label: &str, cells: Vec<String>) -> Self {
        self.extra.push((label.to_string(), cells));
        self
    }

    /// Variable order: first appearance across columns, constant last.
    fn variables(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for (_, fit) in &self.columns {
            for n in &fit.names {
                if n != CONSTANT && !out.contains(n) {
                    out.push(n.clone());
                }
            }
        }
        out.push(CONSTANT.to_string());
        out
    }
}

pub fn write_table_csv<W: Write>(table: &Table, writer: W) -> Result<(), EconError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![String::new()];
    header.extend(table.columns.iter().map(|(l, _)| l.clone()));
    w.write_record(&header)?;
    for var in table.variables() {
        let mut coef = vec![var.clone()];
        let mut se = vec![String::new()];
        for (_, fit) in &table.columns {
            match (fit.coef(&var), fit.se(&var), fit.p_value(&var)) {
                (Some(b), Some(s), Some(p)) => {
                    coef.push(format!("{b:.3}{}", stars(p)));
                    se.push(format!("({s:.3})"));
                }
                _ => {
                    coef.push(String::new());
                    se.push(String::new());
                }
            }
        }
        w.write_record(&coef)?;
        w.write_record(&se)?;
    }
    let mut n = vec!["N".to_string()];
    let mut g = vec!["Clusters".to_string()];
    let mut r2 = vec!["R2".to_string()];
    for (_, fit) in &table.columns {
        n.push(fit.n_obs.to_string());
        g.push(fit.n_clusters.to_string());
        r2.push(format!("{:.4}", fit.r_squared));
    }
    w.write_record(&n)?;
    w.write_record(&g)?;
    w.write_record(&r2)?;
    for (label, cells) in &table.extra {
        let mut row = vec![label.clone()];
        row.extend(cells.iter().cloned());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
