//! Instrumental-variable estimators and first-stage diagnostics for a single
//! endogenous regressor.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::{
    check_rank, cluster_meat, estimate, prepare, sym_inverse, EconError, Estimation, FitResult,
    Prepared, RegressionDesign,
};
use crate::panel::{Panel, VariableRole};

/// Stock-Yogo critical value (10% maximal size) for one endogenous
/// regressor and two excluded instruments.
pub const STOCK_YOGO_10PCT: f64 = 19.93;

fn yes() -> bool {
    true
}

/// Excluded instruments: optionally the one-period lag of the endogenous
/// regressor, plus precomputed external columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentSet {
    #[serde(default = "yes")]
    pub lag_endogenous: bool,
    #[serde(default)]
    pub external: Vec<String>,
}

impl InstrumentSet {
    pub fn new(lag_endogenous: bool, external: &[&str]) -> Self {
        Self {
            lag_endogenous,
            external: external.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn lag_name(endogenous: &str) -> String {
        format!("L.{endogenous}")
    }

    pub fn names(&self, endogenous: &str) -> Vec<String> {
        let mut v = Vec::new();
        if self.lag_endogenous {
            v.push(Self::lag_name(endogenous));
        }
        v.extend(self.external.iter().cloned());
        v
    }

    pub fn len(&self) -> usize {
        self.lag_endogenous as usize + self.external.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Statistic {
    pub stat: f64,
    pub p: f64,
    pub df: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IvDiagnostics {
    pub kp_rk_lm: Statistic,
    pub cragg_donald_f: f64,
    pub kp_rk_wald_f: f64,
    pub hansen_j: Statistic,
    /// Tabulated only for one endogenous regressor and two instruments.
    pub stock_yogo_10pct: Option<f64>,
    pub n_instruments: usize,
}

impl IvDiagnostics {
    pub fn passes_weak_iv_gate(&self) -> Option<bool> {
        self.stock_yogo_10pct.map(|c| self.kp_rk_wald_f > c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IvFit {
    pub fit: FitResult,
    pub first_stage: FitResult,
    pub diagnostics: IvDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfFit {
    /// Second stage; includes the first-stage residual as `xi_hat`.
    pub fit: FitResult,
    pub first_stage: FitResult,
}

impl CfFit {
    pub const RESIDUAL: &'static str = "xi_hat";

    pub fn lambda(&self) -> f64 {
        self.fit.coef(Self::RESIDUAL).unwrap()
    }

    pub fn lambda_t(&self) -> f64 {
        self.fit.t_stat(Self::RESIDUAL).unwrap()
    }

    pub fn lambda_p(&self) -> f64 {
        self.fit.p_value(Self::RESIDUAL).unwrap()
    }
}

/// Demeaned IV data: column order y, x, controls..., instruments...
struct IvData {
    prep: Prepared,
    endogenous: String,
    controls: Vec<String>,
    instruments: Vec<String>,
}

impl IvData {
    fn y(&self) -> &[f64] {
        &self.prep.dm[0]
    }
    fn x(&self) -> &[f64] {
        &self.prep.dm[1]
    }
    fn w(&self) -> Vec<&[f64]> {
        self.prep.dm[2..2 + self.controls.len()].iter().map(|c| c.as_slice()).collect()
    }
    fn z(&self) -> Vec<&[f64]> {
        self.prep.dm[2 + self.controls.len()..].iter().map(|c| c.as_slice()).collect()
    }
    fn means(&self, from: usize, len: usize) -> &[f64] {
        &self.prep.means[from..from + len]
    }
}

fn iv_data(
    design: &RegressionDesign,
    instruments: &InstrumentSet,
    panel: &Panel,
) -> Result<IvData, EconError> {
    design.validate()?;
    if design.explanatory.len() != 1 {
        return Err(EconError::Unsupported(format!(
            "IV estimation supports one endogenous regressor, got {}",
            design.explanatory.len()
        )));
    }
    if instruments.is_empty() {
        return Err(EconError::Design("no excluded instruments".into()));
    }
    let endogenous = design.explanatory[0].clone();
    let names = instruments.names(&endogenous);
    let mut panel = panel.clone();
    if instruments.lag_endogenous {
        let lag = panel.lagged(&endogenous)?;
        panel.set_column(&InstrumentSet::lag_name(&endogenous), VariableRole::Instrument, lag)?;
    }
    for z in &names {
        if design.regressors().contains(z) || *z == design.dependent {
            return Err(EconError::Design(format!("instrument `{z}` is also in the design")));
        }
    }
    let mut cols = vec![design.dependent.clone(), endogenous.clone()];
    cols.extend(design.controls.iter().cloned());
    cols.extend(names.iter().cloned());
    let prep = prepare(&panel, &cols, design, None)?;
    Ok(IvData {
        prep,
        endogenous,
        controls: design.controls.clone(),
        instruments: names,
    })
}

/// First stage: endogenous on excluded instruments and controls.
fn first_stage(d: &IvData) -> Result<FitResult, EconError> {
    let l = d.instruments.len();
    let kw = d.controls.len();
    let mut names = d.instruments.clone();
    names.extend(d.controls.iter().cloned());
    let mut x = d.z();
    x.extend(d.w());
    let mut means = d.means(2 + kw, l).to_vec();
    means.extend_from_slice(d.means(2, kw));
    estimate(Estimation {
        names: &names,
        y: d.x(),
        y_mean: d.prep.means[1],
        x: &x,
        x_means: &means,
        xhat: None,
        sample: &d.prep.sample,
    })
    .map_err(|e| match e {
        EconError::Collinear(c) => EconError::WeakRank(c),
        other => other,
    })
}

fn second_stage_names(d: &IvData) -> Vec<String> {
    let mut names = vec![d.endogenous.clone()];
    names.extend(d.controls.iter().cloned());
    names
}

fn tsls(d: &IvData, first: &FitResult) -> Result<FitResult, EconError> {
    let xhat: Vec<f64> = d.x().iter().zip(&first.residuals).map(|(x, e)| x - e).collect();
    let names = second_stage_names(d);
    let mut x = vec![d.x()];
    x.extend(d.w());
    let mut xh = vec![xhat.as_slice()];
    xh.extend(d.w());
    estimate(Estimation {
        names: &names,
        y: d.y(),
        y_mean: d.prep.means[0],
        x: &x,
        x_means: d.means(1, 1 + d.controls.len()),
        xhat: Some(&xh),
        sample: &d.prep.sample,
    })
}

/// Two-stage least squares with fixed effects absorbed from every variable
/// first. Standard errors use the structural residual and CR1 clustering.
pub fn fit_2sls(
    design: &RegressionDesign,
    instruments: &InstrumentSet,
    panel: &Panel,
) -> Result<IvFit, EconError> {
    let d = iv_data(design, instruments, panel)?;
    let first = first_stage(&d)?;
    let fit = tsls(&d, &first)?;
    let diagnostics = diagnostics(&d, &first, &fit)?;
    Ok(IvFit {
        fit,
        first_stage: first,
        diagnostics,
    })
}

/// Control function: OLS of the outcome on the endogenous regressor,
/// controls and the first-stage residual. The residual's coefficient is the
/// endogeneity test.
pub fn fit_control_function(
    design: &RegressionDesign,
    instruments: &InstrumentSet,
    panel: &Panel,
) -> Result<CfFit, EconError> {
    let d = iv_data(design, instruments, panel)?;
    let first = first_stage(&d)?;
    let mut names = second_stage_names(&d);
    names.push(CfFit::RESIDUAL.to_string());
    let mut x = vec![d.x()];
    x.extend(d.w());
    x.push(&first.residuals);
    let mut means = d.means(1, 1 + d.controls.len()).to_vec();
    means.push(0.0);
    let fit = estimate(Estimation {
        names: &names,
        y: d.y(),
        y_mean: d.prep.means[0],
        x: &x,
        x_means: &means,
        xhat: None,
        sample: &d.prep.sample,
    })?;
    Ok(CfFit {
        fit,
        first_stage: first,
    })
}

/// First-stage strength and over-identification statistics.
pub fn iv_diagnostics(
    design: &RegressionDesign,
    instruments: &InstrumentSet,
    panel: &Panel,
) -> Result<IvDiagnostics, EconError> {
    let d = iv_data(design, instruments, panel)?;
    let first = first_stage(&d)?;
    let fit = tsls(&d, &first)?;
    diagnostics(&d, &first, &fit)
}

fn columns_matrix(cols: &[&[f64]]) -> DMatrix<f64> {
    let n = cols.first().map_or(0, |c| c.len());
    DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i])
}

/// Residuals of each column of `y` after OLS on `w` (no intercept: the data
/// are already demeaned).
fn partial_out(y: &[&[f64]], w: &[&[f64]]) -> Vec<Vec<f64>> {
    if w.is_empty() {
        return y.iter().map(|c| c.to_vec()).collect();
    }
    let wm = columns_matrix(w);
    let wtw = wm.transpose() * &wm;
    let inv = sym_inverse(&wtw).expect("controls have full rank");
    y.iter()
        .map(|c| {
            let yv = DVector::from_column_slice(c);
            let b = &inv * (wm.transpose() * &yv);
            (yv - &wm * b).iter().copied().collect()
        })
        .collect()
}

fn chi2_sf(stat: f64, df: usize) -> f64 {
    if df == 0 {
        return 1.0;
    }
    ChiSquared::new(df as f64).map_or(f64::NAN, |c| 1.0 - c.cdf(stat.max(0.0)))
}

fn diagnostics(d: &IvData, first: &FitResult, fit: &FitResult) -> Result<IvDiagnostics, EconError> {
    let l = d.instruments.len();
    let n = d.y().len();
    let s = &d.prep.sample;
    let k_first = l + d.controls.len() + 1;

    // KP rk Wald F: cluster-robust Wald test of the excluded instruments in
    // the first stage, divided by L.
    let pi = DVector::from_iterator(l, first.coefficients[..l].iter().copied());
    let v = DMatrix::from_fn(l, l, |i, j| first.vcov[i][j]);
    let wald = sym_inverse(&v).map_or(f64::NAN, |vi| (pi.transpose() * vi * &pi)[(0, 0)]);
    let kp_wald_f = wald / l as f64;

    // Cragg-Donald: homoskedastic first-stage F.
    let ssr_u: f64 = first.residuals.iter().map(|e| e * e).sum();
    let restricted = partial_out(&[d.x()], &d.w());
    let ssr_r: f64 = restricted[0].iter().map(|e| e * e).sum();
    let cd_f = ((ssr_r - ssr_u).max(0.0) / l as f64) / (ssr_u / (n - k_first) as f64);

    // KP rk LM: cluster-robust score test of the excluded instruments, with
    // the restricted (instrument-free) first-stage residual.
    let zt = partial_out(&d.z(), &d.w());
    let zt_refs: Vec<&[f64]> = zt.iter().map(|c| c.as_slice()).collect();
    let zm = columns_matrix(&zt_refs);
    let meat = cluster_meat(&zm, &restricted[0], &s.clusters, s.n_clusters);
    let score = zm.transpose() * DVector::from_column_slice(&restricted[0]);
    let lm = sym_inverse(&meat).map_or(f64::NAN, |mi| (score.transpose() * mi * &score)[(0, 0)]);

    // Hansen J: two-step efficient GMM over all instruments (excluded and
    // controls), weight from clustered moments at the 2SLS residual.
    let j = if l == 1 {
        0.0
    } else {
        let mut zc = d.z();
        zc.extend(d.w());
        let zf = columns_matrix(&zc);
        let mut xc = vec![d.x()];
        xc.extend(d.w());
        let xm = columns_matrix(&xc);
        let y = DVector::from_column_slice(d.y());
        let s0 = cluster_meat(&zf, &fit.residuals, &s.clusters, s.n_clusters);
        match sym_inverse(&s0) {
            Some(w) => {
                let zx = zf.transpose() * &xm;
                let zy = zf.transpose() * &y;
                let a = zx.transpose() * &w * &zx;
                match sym_inverse(&a) {
                    Some(ai) => {
                        let b = ai * (zx.transpose() * &w * &zy);
                        let g = zf.transpose() * (&y - &xm * b);
                        (g.transpose() * &w * &g)[(0, 0)].max(0.0)
                    }
                    None => f64::NAN,
                }
            }
            None => f64::NAN,
        }
    };
    let stock_yogo = (l == 2).then_some(STOCK_YOGO_10PCT);
    check_rank(&zt_refs, &d.instruments).map_err(|e| match e {
        EconError::Collinear(c) => EconError::WeakRank(c),
        other => other,
    })?;
    Ok(IvDiagnostics {
        kp_rk_lm: Statistic {
            stat: lm,
            p: chi2_sf(lm, l),
            df: l,
        },
        cragg_donald_f: cd_f,
        kp_rk_wald_f: kp_wald_f,
        hansen_j: Statistic {
            stat: j,
            p: chi2_sf(j, l - 1),
            df: l - 1,
        },
        stock_yogo_10pct: stock_yogo,
        n_instruments: l,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::econ::tests::panel_with;
    use crate::econ::{fit_twfe, CONSTANT};
    use crate::rng::CounterRng;
    use proptest::prelude::*;

    /// y = -0.9 x + c + FE + e, x = 0.8 z1 + 0.5 z2 + FE + v, corr(e, v) = rho.
    fn iv_panel(seed: u64, n: usize, t: usize, rho: f64) -> Panel {
        let mut rng = CounterRng::new(seed, 3);
        let mut cols: Vec<Vec<Option<f64>>> = vec![Vec::new(); 5];
        for _ in 0..n {
            let a = rng.normal();
            for p in 0..t {
                let z1 = rng.normal();
                let z2 = rng.normal();
                let c = rng.normal();
                let v = rng.normal();
                let e = rho * v + (1.0 - rho * rho).sqrt() * rng.normal();
                let x = 0.8 * z1 + 0.5 * z2 + 0.3 * c + a + 0.1 * p as f64 + v;
                let y = -0.9 * x + c + 2.0 * a + 0.2 * p as f64 + e;
                for (k, val) in [y, x, c, z1, z2].into_iter().enumerate() {
                    cols[k].push(Some(val));
                }
            }
        }
        let names = ["y", "x", "c", "z1", "z2"];
        let named: Vec<(&str, Vec<Option<f64>>)> = names.into_iter().zip(cols).collect();
        panel_with(n, t, &named)
    }

    fn design() -> RegressionDesign {
        RegressionDesign::new("y", &["x"], &["c"])
    }

    #[test]
    fn instrumenting_with_itself_gives_ols() {
        let panel = iv_panel(1, 30, 5, 0.5);
        let x = panel.require("x").unwrap().values.clone();
        let panel = panel.with_column("xz", VariableRole::Instrument, x).unwrap();
        let iv = fit_2sls(&design(), &InstrumentSet::new(false, &["xz"]), &panel).unwrap();
        let ols = fit_twfe(&design(), &panel).unwrap();
        for name in ["x", "c", CONSTANT] {
            assert!((iv.fit.coef(name).unwrap() - ols.coef(name).unwrap()).abs() < 1e-10);
        }
        assert_eq!(iv.diagnostics.hansen_j.stat, 0.0);
    }

    #[test]
    fn just_identified_has_zero_j() {
        let panel = iv_panel(2, 30, 5, 0.5);
        let d = iv_diagnostics(&design(), &InstrumentSet::new(false, &["z1"]), &panel).unwrap();
        assert_eq!(d.hansen_j.stat, 0.0);
        assert_eq!(d.hansen_j.df, 0);
        assert_eq!(d.stock_yogo_10pct, None);
    }

    #[test]
    fn overidentified_recovers_effect() {
        let panel = iv_panel(3, 200, 6, 0.6);
        let iv = fit_2sls(&design(), &InstrumentSet::new(false, &["z1", "z2"]), &panel).unwrap();
        let b = iv.fit.coef("x").unwrap();
        let se = iv.fit.se("x").unwrap();
        assert!((b + 0.9).abs() < 4.0 * se, "{b} {se}");
        let ols = fit_twfe(&design(), &panel).unwrap();
        assert!(ols.coef("x").unwrap() > -0.9 + 0.1, "OLS should be biased upward");
        let dg = &iv.diagnostics;
        assert_eq!(dg.stock_yogo_10pct, Some(19.93));
        assert!(dg.kp_rk_wald_f > 19.93 && dg.cragg_donald_f > 19.93);
        assert!(dg.kp_rk_lm.p < 0.01);
        for v in [dg.kp_rk_lm.stat, dg.cragg_donald_f, dg.kp_rk_wald_f, dg.hansen_j.stat] {
            assert!(v.is_finite() && v >= 0.0);
        }
    }

    #[test]
    fn lagged_instrument_is_generated() {
        let panel = iv_panel(4, 20, 5, 0.0);
        let iv = fit_2sls(&design(), &InstrumentSet::new(true, &["z1"]), &panel).unwrap();
        assert_eq!(iv.first_stage.names[0], "L.x");
        assert_eq!(iv.fit.n_obs, 20 * 4);
    }

    #[test]
    fn multiple_endogenous_is_out_of_scope() {
        let panel = iv_panel(5, 20, 5, 0.0);
        let d = RegressionDesign::new("y", &["x", "c"], &[]);
        assert!(matches!(
            fit_2sls(&d, &InstrumentSet::new(false, &["z1", "z2"]), &panel),
            Err(EconError::Unsupported(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn control_function_matches_2sls(seed in 0u64..10_000, rho in -0.9f64..0.9, lag in any::<bool>()) {
            let panel = iv_panel(seed, 25, 5, rho);
            let ivs = InstrumentSet::new(lag, &["z1", "z2"]);
            let iv = fit_2sls(&design(), &ivs, &panel).unwrap();
            let cf = fit_control_function(&design(), &ivs, &panel).unwrap();
            prop_assert!((iv.fit.coef("x").unwrap() - cf.fit.coef("x").unwrap()).abs() < 1e-8);
            prop_assert!((iv.fit.coef("c").unwrap() - cf.fit.coef("c").unwrap()).abs() < 1e-8);
        }

        #[test]
        fn hansen_j_invariant_to_instrument_scale(seed in 0u64..10_000, c in 0.01f64..100.0) {
            let panel = iv_panel(seed, 25, 5, 0.3);
            let z = panel.require("z2").unwrap().values.clone();
            let scaled = z.iter().map(|v| v.map(|v| v * c)).collect();
            let panel2 = panel.clone().with_column("z2", VariableRole::Instrument, scaled).unwrap();
            let ivs = InstrumentSet::new(false, &["z1", "z2"]);
            let a = iv_diagnostics(&design(), &ivs, &panel).unwrap();
            let b = iv_diagnostics(&design(), &ivs, &panel2).unwrap();
            prop_assert!((a.hansen_j.stat - b.hansen_j.stat).abs() < 1e-9 * (1.0 + a.hansen_j.stat));
            prop_assert!((a.kp_rk_wald_f - b.kp_rk_wald_f).abs() < 1e-7 * (1.0 + a.kp_rk_wald_f));
        }
    }
}
