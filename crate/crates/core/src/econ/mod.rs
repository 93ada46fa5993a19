//! Panel regressions: two-way fixed effects with cluster-robust (CR1)
//! covariance, 2SLS and control-function IV estimators, first-stage
//! diagnostics, mechanism regressions and subsample splits.
//!
//! Fixed effects are absorbed by iterative demeaning. Every estimator works
//! on the listwise-complete sample of the columns it needs.

mod iv;
mod mechanism;
mod report;

use std::collections::HashMap;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::panel::{Panel, PanelError};

pub use iv::{
    fit_2sls, fit_control_function, iv_diagnostics, CfFit, InstrumentSet, IvDiagnostics, IvFit,
    Statistic, STOCK_YOGO_10PCT,
};
pub use mechanism::{heterogeneity_split, mechanism_two_stage, split_masks, HeterogeneityFit, MechanismFit, SplitCriterion};
pub use report::{fit_json, stars, write_table_csv, Table};

/// Name under which the recovered intercept is reported.
pub const CONSTANT: &str = "constant";

const MAX_SWEEPS: usize = 10_000;
const SWEEP_TOL: f64 = 1e-10;
const COLLINEAR_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum EconError {
    #[error("invalid design: {0}")]
    Design(String),
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error("perfect collinearity among regressors: {}", .0.join(", "))]
    Collinear(Vec<String>),
    #[error("cluster-robust covariance needs at least two clusters, sample has {0}")]
    SingleCluster(usize),
    #[error("{n} observations for {k} parameters")]
    TooFewObservations { n: usize, k: usize },
    #[error("demeaning did not converge after {0} sweeps")]
    Convergence(usize),
    #[error("instrument matrix is rank deficient: {}", .0.join(", "))]
    WeakRank(Vec<String>),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("subsample `{0}` is empty")]
    EmptySplit(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionDesign {
    pub dependent: String,
    pub explanatory: Vec<String>,
    #[serde(default)]
    pub controls: Vec<String>,
    #[serde(default = "yes")]
    pub unit_effect: bool,
    #[serde(default = "yes")]
    pub time_effect: bool,
    /// Cluster identifier column; `None` clusters on the panel unit.
    #[serde(default)]
    pub cluster: Option<String>,
}

impl RegressionDesign {
    /// Two-way fixed effects, clustered by unit.
    pub fn new(dependent: &str, explanatory: &[&str], controls: &[&str]) -> Self {
        Self {
            dependent: dependent.to_string(),
            explanatory: explanatory.iter().map(|s| s.to_string()).collect(),
            controls: controls.iter().map(|s| s.to_string()).collect(),
            unit_effect: true,
            time_effect: true,
            cluster: None,
        }
    }

    pub fn effects(mut self, unit: bool, time: bool) -> Self {
        self.unit_effect = unit;
        self.time_effect = time;
        self
    }

    pub fn clustered_by(mut self, column: &str) -> Self {
        self.cluster = Some(column.to_string());
        self
    }

    /// Explanatory columns followed by controls.
    pub fn regressors(&self) -> Vec<String> {
        self.explanatory.iter().chain(&self.controls).cloned().collect()
    }

    pub fn validate(&self) -> Result<(), EconError> {
        if self.explanatory.is_empty() {
            return Err(EconError::Design("no explanatory variable".into()));
        }
        let regs = self.regressors();
        if regs.contains(&self.dependent) {
            return Err(EconError::Design(format!(
                "dependent `{}` also appears as a regressor",
                self.dependent
            )));
        }
        for (i, r) in regs.iter().enumerate() {
            if regs[..i].contains(r) {
                return Err(EconError::Design(format!("duplicate column `{r}`")));
            }
        }
        Ok(())
    }
}

/// Listwise-complete estimation sample.
#[derive(Debug, Clone)]
pub(crate) struct Sample {
    /// Panel cell index of each row.
    pub cells: Vec<usize>,
    pub units: Vec<usize>,
    pub times: Vec<usize>,
    pub n_units: usize,
    pub n_times: usize,
    pub clusters: Vec<usize>,
    pub n_clusters: usize,
}

fn cluster_ids(values: &[f64]) -> (Vec<usize>, usize) {
    let mut map: HashMap<u64, usize> = HashMap::new();
    let ids = values
        .iter()
        .map(|v| {
            let key = if *v == 0.0 { 0 } else { v.to_bits() };
            let next = map.len();
            *map.entry(key).or_insert(next)
        })
        .collect();
    (ids, map.len())
}

/// Rows where every listed column (and the cluster column) is present and
/// `mask` is true; returns the sample and the raw column values on it.
pub(crate) fn sample(
    panel: &Panel,
    columns: &[String],
    cluster: Option<&str>,
    mask: Option<&[bool]>,
) -> Result<(Sample, Vec<Vec<f64>>), EconError> {
    let cols = columns
        .iter()
        .map(|c| panel.require(c).map(|c| &c.values))
        .collect::<Result<Vec<_>, _>>()?;
    let cl = cluster.map(|c| panel.require(c).map(|c| &c.values)).transpose()?;
    let t = panel.n_periods();
    let mut cells = Vec::new();
    for cell in 0..panel.n_cells() {
        if mask.is_some_and(|m| !m[cell]) {
            continue;
        }
        if cols.iter().all(|c| c[cell].is_some()) && cl.is_none_or(|c| c[cell].is_some()) {
            cells.push(cell);
        }
    }
    // Compact unit and time indices to those present.
    let mut unit_map = vec![usize::MAX; panel.n_units()];
    let mut time_map = vec![usize::MAX; t];
    let (mut nu, mut nt) = (0, 0);
    let mut units = Vec::with_capacity(cells.len());
    let mut times = Vec::with_capacity(cells.len());
    for &c in &cells {
        let (u, p) = (c / t, c % t);
        if unit_map[u] == usize::MAX {
            unit_map[u] = nu;
            nu += 1;
        }
        if time_map[p] == usize::MAX {
            time_map[p] = nt;
            nt += 1;
        }
        units.push(unit_map[u]);
        times.push(time_map[p]);
    }
    let (clusters, n_clusters) = match cl {
        Some(c) => cluster_ids(&cells.iter().map(|&i| c[i].unwrap()).collect::<Vec<_>>()),
        None => (units.clone(), nu),
    };
    let values = cols
        .iter()
        .map(|c| cells.iter().map(|&i| c[i].unwrap()).collect())
        .collect();
    Ok((
        Sample {
            cells,
            units,
            times,
            n_units: nu,
            n_times: nt,
            clusters,
            n_clusters,
        },
        values,
    ))
}

fn group_means(x: &[f64], groups: &[usize], n: usize) -> Vec<f64> {
    let mut sum = vec![0.0; n];
    let mut count = vec![0usize; n];
    for (v, &g) in x.iter().zip(groups) {
        sum[g] += v;
        count[g] += 1;
    }
    sum.iter()
        .zip(&count)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect()
}

/// Demean one column in place. With both effects, alternates unit-mean and
/// time-mean subtraction until a full sweep moves no cell by more than
/// 1e-10. With neither effect the grand mean is removed.
pub fn demean(
    x: &mut [f64],
    units: &[usize],
    times: &[usize],
    n_units: usize,
    n_times: usize,
    unit_effect: bool,
    time_effect: bool,
) -> Result<usize, EconError> {
    let subtract = |x: &mut [f64], groups: &[usize], n: usize| -> f64 {
        let m = group_means(x, groups, n);
        let mut worst = 0.0f64;
        for (v, &g) in x.iter_mut().zip(groups) {
            *v -= m[g];
            worst = worst.max(m[g].abs());
        }
        worst
    };
    match (unit_effect, time_effect) {
        (false, false) => {
            let zeros = vec![0; x.len()];
            subtract(x, &zeros, 1);
            Ok(1)
        }
        (true, false) => {
            subtract(x, units, n_units);
            Ok(1)
        }
        (false, true) => {
            subtract(x, times, n_times);
            Ok(1)
        }
        (true, true) => {
            for sweep in 1..=MAX_SWEEPS {
                let a = subtract(x, units, n_units);
                let b = subtract(x, times, n_times);
                if a + b < SWEEP_TOL {
                    return Ok(sweep);
                }
            }
            Err(EconError::Convergence(MAX_SWEEPS))
        }
    }
}

/// Columns after fixed-effect absorption, on the listwise-complete sample.
#[derive(Debug, Clone)]
pub struct Within {
    /// Panel cell index of each row.
    pub cells: Vec<usize>,
    pub columns: Vec<Vec<f64>>,
}

pub fn within_transform(
    panel: &Panel,
    columns: &[&str],
    unit_effect: bool,
    time_effect: bool,
) -> Result<Within, EconError> {
    let names: Vec<String> = columns.iter().map(|s| s.to_string()).collect();
    let (s, mut cols) = sample(panel, &names, None, None)?;
    if unit_effect && time_effect && (s.n_units < 2 || s.n_times < 2) {
        return Err(EconError::Design(
            "two-way demeaning needs at least two units and two periods".into(),
        ));
    }
    for c in &mut cols {
        demean(c, &s.units, &s.times, s.n_units, s.n_times, unit_effect, time_effect)?;
    }
    Ok(Within {
        cells: s.cells,
        columns: cols,
    })
}

/// Sample plus demeaned columns and their raw sample means.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    pub sample: Sample,
    pub means: Vec<f64>,
    pub dm: Vec<Vec<f64>>,
}

pub(crate) fn prepare(
    panel: &Panel,
    columns: &[String],
    design: &RegressionDesign,
    mask: Option<&[bool]>,
) -> Result<Prepared, EconError> {
    let (s, mut cols) = sample(panel, columns, design.cluster.as_deref(), mask)?;
    let means = cols
        .iter()
        .map(|c| c.iter().sum::<f64>() / c.len().max(1) as f64)
        .collect();
    for c in &mut cols {
        demean(c, &s.units, &s.times, s.n_units, s.n_times, design.unit_effect, design.time_effect)?;
    }
    Ok(Prepared {
        sample: s,
        means,
        dm: cols,
    })
}

/// Indices of columns that are (numerically) linear combinations of earlier
/// ones, found by modified Gram-Schmidt.
pub(crate) fn collinear_columns(cols: &[&[f64]]) -> Vec<usize> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut bad = Vec::new();
    for (j, c) in cols.iter().enumerate() {
        let norm0 = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut r = c.to_vec();
        for q in &basis {
            let d: f64 = r.iter().zip(q).map(|(a, b)| a * b).sum();
            for (ri, qi) in r.iter_mut().zip(q) {
                *ri -= d * qi;
            }
        }
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm0 == 0.0 || norm <= COLLINEAR_TOL * norm0 {
            bad.push(j);
        } else {
            basis.push(r.into_iter().map(|v| v / norm).collect());
        }
    }
    bad
}

pub(crate) fn check_rank(cols: &[&[f64]], names: &[String]) -> Result<(), EconError> {
    let bad = collinear_columns(cols);
    if bad.is_empty() {
        Ok(())
    } else {
        Err(EconError::Collinear(bad.into_iter().map(|j| names[j].clone()).collect()))
    }
}

/// Sum over clusters of outer products of within-cluster score sums.
pub(crate) fn cluster_meat(x: &DMatrix<f64>, e: &[f64], clusters: &[usize], g: usize) -> DMatrix<f64> {
    let k = x.ncols();
    let mut scores = DMatrix::<f64>::zeros(g, k);
    for (i, &c) in clusters.iter().enumerate() {
        for j in 0..k {
            scores[(c, j)] += x[(i, j)] * e[i];
        }
    }
    scores.transpose() * scores
}

pub(crate) fn cr1_factor(n: usize, k: usize, g: usize) -> f64 {
    (g as f64 / (g as f64 - 1.0)) * ((n as f64 - 1.0) / (n as f64 - k as f64))
}

pub(crate) fn sym_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    Cholesky::new(m.clone()).map(|c| c.inverse())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Regressors in design order, then [`CONSTANT`].
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub vcov: Vec<Vec<f64>>,
    pub n_obs: usize,
    pub n_clusters: usize,
    /// Degrees of freedom of the clustered t statistics (G - 1).
    pub df: usize,
    /// Within R squared.
    pub r_squared: f64,
    /// Residuals on the demeaned scale, one per sample row.
    pub residuals: Vec<f64>,
    /// Panel cell of each sample row.
    pub cells: Vec<usize>,
}

impl FitResult {
    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn coef(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.coefficients[i])
    }

    pub fn se(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.vcov[i][i].max(0.0).sqrt())
    }

    pub fn t_stat(&self, name: &str) -> Option<f64> {
        Some(self.coef(name)? / self.se(name)?)
    }

    /// Two-sided p-value from Student t with `df` degrees of freedom.
    pub fn p_value(&self, name: &str) -> Option<f64> {
        let t = self.t_stat(name)?;
        Some(t_pvalue(t, self.df))
    }

    /// Two-sided confidence interval at `level` (e.g. 0.95).
    pub fn ci(&self, name: &str, level: f64) -> Option<(f64, f64)> {
        let b = self.coef(name)?;
        let s = self.se(name)?;
        let q = StudentsT::new(0.0, 1.0, self.df as f64).ok()?.inverse_cdf(0.5 + level / 2.0);
        Some((b - q * s, b + q * s))
    }
}

pub(crate) fn t_pvalue(t: f64, df: usize) -> f64 {
    if !t.is_finite() {
        return if t.is_nan() { f64::NAN } else { 0.0 };
    }
    match StudentsT::new(0.0, 1.0, df as f64) {
        Ok(d) => 2.0 * (1.0 - d.cdf(t.abs())),
        Err(_) => f64::NAN,
    }
}

/// Linear (IV) fit on demeaned data with the intercept recovered from raw
/// means. `xhat`, when given, replaces `x` in the normal equations and the
/// covariance (the 2SLS second stage); residuals always use `x`.
pub(crate) struct Estimation<'a> {
    pub names: &'a [String],
    pub y: &'a [f64],
    pub y_mean: f64,
    pub x: &'a [&'a [f64]],
    pub x_means: &'a [f64],
    pub xhat: Option<&'a [&'a [f64]]>,
    pub sample: &'a Sample,
}

pub(crate) fn estimate(e: Estimation<'_>) -> Result<FitResult, EconError> {
    let n = e.y.len();
    let k = e.x.len() + 1;
    if n <= k {
        return Err(EconError::TooFewObservations { n, k });
    }
    let g = e.sample.n_clusters;
    if g < 2 {
        return Err(EconError::SingleCluster(g));
    }
    check_rank(e.x, e.names)?;
    let xh_cols = e.xhat.unwrap_or(e.x);
    if e.xhat.is_some() {
        check_rank(xh_cols, e.names).map_err(|err| match err {
            EconError::Collinear(c) => EconError::WeakRank(c),
            other => other,
        })?;
    }

    // Augmented design [x + mean(x), 1] so the intercept and its variance
    // come out of the same sandwich.
    let aug = |cols: &[&[f64]]| {
        let mut m = DMatrix::<f64>::from_element(n, k, 1.0);
        for (j, c) in cols.iter().enumerate() {
            for i in 0..n {
                m[(i, j)] = c[i] + e.x_means[j];
            }
        }
        m
    };
    let x = aug(e.x);
    let xh = aug(xh_cols);
    let y = DVector::from_iterator(n, e.y.iter().map(|v| v + e.y_mean));
    let xtx = xh.transpose() * &xh;
    let bread = sym_inverse(&xtx).ok_or_else(|| EconError::Collinear(e.names.to_vec()))?;
    let beta = &bread * (xh.transpose() * &y);
    let resid = &y - &x * &beta;
    let resid: Vec<f64> = resid.iter().copied().collect();

    let meat = cluster_meat(&xh, &resid, &e.sample.clusters, g);
    let mut v = &bread * meat * &bread * cr1_factor(n, k, g);
    v = (&v + v.transpose()) * 0.5;

    let sst: f64 = e.y.iter().map(|v| v * v).sum();
    let r2 = if sst > 0.0 {
        let fit_resid = &y - &xh * &beta;
        let ssr: f64 = fit_resid.iter().map(|v| v * v).sum();
        (1.0 - ssr / sst).clamp(0.0, 1.0)
    } else {
        0.0
    };

    let mut names = e.names.to_vec();
    names.push(CONSTANT.to_string());
    Ok(FitResult {
        names,
        coefficients: beta.iter().copied().collect(),
        vcov: (0..k).map(|i| (0..k).map(|j| v[(i, j)]).collect()).collect(),
        n_obs: n,
        n_clusters: g,
        df: g - 1,
        r_squared: r2,
        residuals: resid,
        cells: e.sample.cells.clone(),
    })
}

pub(crate) fn fit_prepared(
    prep: &Prepared,
    names: &[String],
) -> Result<FitResult, EconError> {
    let x: Vec<&[f64]> = prep.dm[1..].iter().map(|c| c.as_slice()).collect();
    estimate(Estimation {
        names,
        y: &prep.dm[0],
        y_mean: prep.means[0],
        x: &x,
        x_means: &prep.means[1..],
        xhat: None,
        sample: &prep.sample,
    })
}

/// Two-way (or one-way, per the design) fixed-effects OLS with CR1
/// cluster-robust covariance.
pub fn fit_twfe(design: &RegressionDesign, panel: &Panel) -> Result<FitResult, EconError> {
    fit_twfe_masked(design, panel, None)
}

/// As [`fit_twfe`], restricted to cells where `mask` is true.
pub fn fit_twfe_masked(
    design: &RegressionDesign,
    panel: &Panel,
    mask: Option<&[bool]>,
) -> Result<FitResult, EconError> {
    design.validate()?;
    let regs = design.regressors();
    let mut cols = vec![design.dependent.clone()];
    cols.extend(regs.iter().cloned());
    let prep = prepare(panel, &cols, design, mask)?;
    fit_prepared(&prep, &regs)
}
