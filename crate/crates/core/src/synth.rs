//! Seeded synthetic bank panels with known ground truth.
//!
//! Network columns: units other than the frontier unit produce each stage's
//! outputs as a Cobb-Douglas function of that stage's inputs times an
//! inefficiency factor in (0, 1]. The frontier unit (index 0) has unit
//! inputs, efficiency 1 and no noise, is held fixed over time, and has its
//! final outputs raised above every other cell so that cross-period programs
//! stay bounded. Productivity change therefore comes only from catch-up,
//! which the shock parameters control. Scores under the additive model are
//! far more sensitive to input savings than to output growth (the free
//! intercepts absorb output gaps), so the overall shock is input-saving.
//!
//! Regression columns follow a two-way fixed-effects model with a known
//! FinTech effect, optional endogeneity through a shared shock, external
//! instruments of chosen strength, and three stage channels whose loadings
//! on the outcome are positive.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::malmquist::{fsi_panel, FsiOptions, MalmquistError, PairStatus};
use crate::netdea::{DeaError, NetworkSpec};
use crate::panel::{Panel, PanelError, VariableRole};
use crate::rng::CounterRng;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error(transparent)]
    Dea(#[from] DeaError),
    #[error(transparent)]
    Malmquist(#[from] MalmquistError),
    #[error("calibration failed: {0}")]
    Calibration(String),
}

/// Name of the stage-3 external input written by the generator.
pub const STAGE3_EXTERNAL: &str = "share_capital";

pub const CONTROLS: [&str; 9] = ["GDP_g", "FDL", "LDR", "NIIR", "ROA", "DAR", "TAS", "OEX", "CAR"];

/// Mean and unit-level spread of each control, in control order.
const CONTROL_SCALE: [(f64, f64); 9] = [
    (6.0, 1.5),
    (3.0, 0.8),
    (0.75, 0.1),
    (0.2, 0.08),
    (0.7, 0.2),
    (0.92, 0.02),
    (26.0, 1.5),
    (22.0, 1.4),
    (0.13, 0.015),
];

/// Effects of the controls on the outcome, in control order.
const CONTROL_EFFECTS: [f64; 9] = [0.01, -0.02, 0.1, 0.05, 0.15, -0.3, -0.04, 0.05, 0.4];

const FTI_CENTER: f64 = 2.78;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpConfig {
    pub n_units: usize,
    pub n_periods: usize,
    pub start_period: i64,
    pub seed: u64,
    /// Cobb-Douglas returns-to-scale exponent per stage.
    pub frontier_exponents: [f64; 3],
    /// Range of the per-unit inefficiency factor.
    pub inefficiency: (f64, f64),
    /// Log-standard deviation of unit size.
    pub size_dispersion: f64,
    /// Frontier unit final outputs are at least this multiple of the largest
    /// value any other unit reaches in any period.
    pub frontier_margin: f64,
    /// Log-noise of stage outputs.
    pub sigma: f64,
    /// Period index from which the shocks apply (persistently).
    pub shock_period: usize,
    /// Input-saving productivity factor: from the shock period on, every
    /// non-frontier unit produces the same outputs from inputs divided by
    /// this factor.
    pub shock: f64,
    /// Extra multiplier on the deposit-stage intermediates.
    pub deposit_shock: f64,
    /// True FinTech effect on the outcome (total, through channels too).
    pub beta_fti: f64,
    /// Effect for units with `listed = 1`; `None` uses `beta_fti`.
    pub beta_fti_listed: Option<f64>,
    /// Outcome error standard deviation.
    pub noise: f64,
    /// Correlation between the FinTech shock and the outcome error.
    pub rho: f64,
    /// First-stage loading on IV2.
    pub pi: f64,
    /// First-stage loading on IV3.
    pub pi3: f64,
    /// AR(1) coefficient of the within-unit FinTech component.
    pub fti_persistence: f64,
    /// Channel responses to FinTech (deposit, loan, profitability).
    pub channel_effects: [f64; 3],
    /// Channel loadings on the outcome; positive by design.
    pub channel_loadings: [f64; 3],
    pub channel_noise: f64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            n_units: 104,
            n_periods: 9,
            start_period: 2015,
            seed: 20_250_101,
            frontier_exponents: [0.7, 0.8, 0.9],
            inefficiency: (0.4, 0.75),
            size_dispersion: 0.1,
            frontier_margin: 1.05,
            sigma: 0.05,
            shock_period: 5,
            shock: 1.0,
            deposit_shock: 1.0,
            beta_fti: -0.5,
            beta_fti_listed: None,
            noise: 0.2,
            rho: 0.0,
            pi: 0.15,
            pi3: 0.0,
            fti_persistence: 0.6,
            channel_effects: [-0.4, -0.5, -0.3],
            channel_loadings: [0.4, 0.3, 0.3],
            channel_noise: 0.05,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.to_string()));
        if self.n_units < 3 {
            return bad("n_units must be at least 3");
        }
        if self.n_periods < 2 {
            return bad("n_periods must be at least 2");
        }
        if !(self.sigma >= 0.0 && self.noise >= 0.0 && self.channel_noise >= 0.0) {
            return bad("noise levels must be non-negative");
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return bad("rho must lie in [-1, 1]");
        }
        let (lo, hi) = self.inefficiency;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad("inefficiency range must satisfy 0 < lo <= hi <= 1");
        }
        if !(self.frontier_margin > 1.0 && self.size_dispersion >= 0.0) {
            return bad("frontier_margin must exceed 1 and size_dispersion be non-negative");
        }
        if !(self.shock > 0.0 && self.deposit_shock > 0.0) {
            return bad("shocks must be positive");
        }
        if self.frontier_exponents.iter().any(|a| !(*a > 0.0)) {
            return bad("frontier exponents must be positive");
        }
        if !(self.fti_persistence.abs() < 1.0) {
            return bad("fti_persistence must lie in (-1, 1)");
        }
        Ok(())
    }

    pub fn periods(&self) -> Vec<i64> {
        (0..self.n_periods as i64).map(|p| self.start_period + p).collect()
    }
}

/// Parameters a test can assert against, written as the sidecar JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub config: DgpConfig,
    pub frontier_unit: String,
    pub stage3_external: String,
    /// Direct FinTech effect after netting out the channels.
    pub beta_direct: f64,
    pub control_effects: Vec<(String, f64)>,
    pub listed_units: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub panel: Panel,
    pub truth: Truth,
}

/// The default three-stage network over the generated column names.
pub fn network() -> NetworkSpec {
    NetworkSpec::bank_default(STAGE3_EXTERNAL).expect("default network")
}

// Stream identifiers keep each component's draws independent of the others.
const S_DEA: u64 = 1 << 40;
const S_EFF: u64 = 2 << 40;
const S_REG: u64 = 3 << 40;
const S_UNIT: u64 = 4 << 40;

fn geo_mean(v: &[f64]) -> f64 {
    libm::exp(v.iter().map(|&x| libm::log(x)).sum::<f64>() / v.len() as f64)
}

/// Network columns as a unit-major grid per column, frontier unit included.
fn network_columns(cfg: &DgpConfig, spec: &NetworkSpec) -> Vec<(String, VariableRole, Vec<f64>)> {
    let (n, t) = (cfg.n_units, cfg.n_periods);
    let roles: Vec<(String, VariableRole)> = spec.column_roles().collect();
    let idx = |name: &str| roles.iter().position(|(c, _)| c == name).unwrap();
    let mut grid = vec![vec![0.0; n * t]; roles.len()];
    let stages = spec.stages();

    for u in 0..n {
        let frontier = u == 0;
        let mut unit = CounterRng::new(cfg.seed, S_UNIT + u as u64);
        let size = if frontier { 1.0 } else { libm::exp(cfg.size_dispersion * unit.normal()) };
        let (lo, hi) = cfg.inefficiency;
        let base_eff: Vec<f64> = (0..stages.len())
            .map(|_| if frontier { 1.0 } else { unit.uniform_range(lo, hi) })
            .collect();
        let mut eff_rng = CounterRng::new(cfg.seed, S_EFF + u as u64);
        for p in 0..t {
            let mut rng = CounterRng::new(cfg.seed, S_DEA + (u * t + p) as u64);
            let cell = u * t + p;
            let shocked = !frontier && p >= cfg.shock_period;
            for (s, stage) in stages.iter().enumerate() {
                for c in stage.initial_inputs.iter().chain(&stage.external_inputs) {
                    grid[idx(c)][cell] = if frontier { 1.0 } else { size * libm::exp(0.1 * rng.normal()) };
                }
                let mut inputs: Vec<f64> = stage
                    .initial_inputs
                    .iter()
                    .chain(&stage.external_inputs)
                    .map(|c| grid[idx(c)][cell])
                    .collect();
                if s > 0 {
                    inputs.extend(stages[s - 1].intermediate_outputs.iter().map(|c| grid[idx(c)][cell]));
                }
                let composite = geo_mean(&inputs);
                let drift = if frontier { 1.0 } else { libm::exp(0.02 * eff_rng.normal()) };
                let eff = base_eff[s] * drift;
                for c in stage.final_outputs.iter().chain(&stage.intermediate_outputs) {
                    let noise = if frontier { 1.0 } else { libm::exp(cfg.sigma * rng.normal()) };
                    let mut v = libm::pow(composite, cfg.frontier_exponents[s]) * eff * noise;
                    if s == 0 && shocked && stage.intermediate_outputs.contains(c) {
                        v *= cfg.deposit_shock;
                    }
                    grid[idx(c)][cell] = v;
                }
                if shocked {
                    for c in stage.initial_inputs.iter().chain(&stage.external_inputs) {
                        grid[idx(c)][cell] /= cfg.shock;
                    }
                }
            }
        }
    }
    // The frontier unit's final outputs must beat every other cell so that
    // cross-period programs stay bounded.
    for (k, (_, role)) in roles.iter().enumerate() {
        if *role != VariableRole::FinalOutput {
            continue;
        }
        let top = grid[k][t..].iter().copied().fold(f64::MIN, f64::max);
        for p in 0..t {
            grid[k][p] = grid[k][p].max(cfg.frontier_margin * top);
        }
    }
    roles.into_iter().zip(grid).map(|((c, r), g)| (c, r, g)).collect()
}

fn some(v: Vec<f64>) -> Vec<Option<f64>> {
    v.into_iter().map(Some).collect()
}

pub fn generate(cfg: &DgpConfig) -> Result<Synthetic, SynthError> {
    cfg.validate()?;
    let spec = network();
    let (n, t) = (cfg.n_units, cfg.n_periods);
    let units: Vec<String> = (0..n).map(|u| format!("B{:03}", u + 1)).collect();
    let mut panel = Panel::new(units.clone(), cfg.periods())?;
    for (name, role, values) in network_columns(cfg, &spec) {
        panel.set_column(&name, role, some(values))?;
    }

    let mut rng = CounterRng::new(cfg.seed, S_REG);
    let mu: Vec<f64> = (0..t).map(|_| 0.1 * rng.normal()).collect();
    let cells = n * t;
    let mut fti = vec![0.0; cells];
    let mut iv2 = vec![0.0; cells];
    let mut iv3 = vec![0.0; cells];
    let mut fsi = vec![0.0; cells];
    let mut channels = vec![vec![0.0; cells]; 3];
    let mut controls = vec![vec![0.0; cells]; CONTROLS.len()];
    let mut listed = vec![0.0; cells];
    let mut patents = vec![0.0; cells];
    let mut listed_units = Vec::new();

    let indirect: f64 = cfg.channel_effects.iter().zip(&cfg.channel_loadings).map(|(a, b)| a * b).sum();
    let phi = cfg.fti_persistence;
    let (sd_z, sd_v) = (0.2, 0.15);
    for u in 0..n {
        let mut r = CounterRng::new(cfg.seed, S_REG + 1 + u as u64);
        let alpha = 0.3 * r.normal();
        let region = 0.3 * r.normal();
        let dist = r.normal();
        let is_listed = r.uniform() < 0.5;
        let patent = libm::exp(2.0 + r.normal()).round();
        let ch_fe: Vec<f64> = (0..3).map(|_| 0.1 * r.normal()).collect();
        let ctl_fe: Vec<f64> = CONTROL_SCALE.iter().map(|(m, s)| m + s * r.normal()).collect();
        if is_listed {
            listed_units.push(units[u].clone());
        }
        let beta = match (is_listed, cfg.beta_fti_listed) {
            (true, Some(b)) => b,
            _ => cfg.beta_fti,
        };
        let direct = beta - indirect;
        let mut z = sd_z / (1.0 - phi * phi).sqrt() * r.normal();
        for p in 0..t {
            let c = u * t + p;
            if p > 0 {
                z = phi * z + sd_z * r.normal();
            }
            iv2[c] = dist + r.normal();
            iv3[c] = r.normal();
            let v = sd_v * r.normal();
            let e = cfg.noise * (cfg.rho * v / sd_v + (1.0 - cfg.rho * cfg.rho).sqrt() * r.normal());
            fti[c] = 2.2 + region + 0.12 * p as f64 + z + cfg.pi * iv2[c] + cfg.pi3 * iv3[c] + v;
            let centered = fti[c] - FTI_CENTER;
            let mut y = 1.0 + alpha + mu[p] + direct * centered + e;
            for s in 0..3 {
                let m = 1.0 + ch_fe[s] + cfg.channel_effects[s] * centered + cfg.channel_noise * r.normal();
                channels[s][c] = m;
                y += cfg.channel_loadings[s] * (m - 1.0);
            }
            for (k, ctl) in controls.iter_mut().enumerate() {
                let x = ctl_fe[k] + 0.1 * CONTROL_SCALE[k].1.max(0.05) * r.normal();
                ctl[c] = x;
                y += CONTROL_EFFECTS[k] * (x - CONTROL_SCALE[k].0);
            }
            fsi[c] = y;
            listed[c] = is_listed as u8 as f64;
            patents[c] = patent;
        }
    }

    use VariableRole::*;
    panel.set_column("FSI", RegressionDependent, some(fsi))?;
    panel.set_column("FTI", RegressionExplanatory, some(fti))?;
    for (k, name) in CONTROLS.iter().enumerate() {
        panel.set_column(name, RegressionControl, some(controls[k].clone()))?;
    }
    panel.set_column("IV2", Instrument, some(iv2))?;
    panel.set_column("IV3", Instrument, some(iv3))?;
    for (s, name) in ["MI_d", "MI_l", "MI_p"].iter().enumerate() {
        panel.set_column(name, Attribute, some(channels[s].clone()))?;
    }
    panel.set_column("listed", Attribute, some(listed))?;
    panel.set_column("patents", Attribute, some(patents))?;

    let truth = Truth {
        config: cfg.clone(),
        frontier_unit: units[0].clone(),
        stage3_external: STAGE3_EXTERNAL.to_string(),
        beta_direct: cfg.beta_fti - indirect,
        control_effects: CONTROLS.iter().map(|c| c.to_string()).zip(CONTROL_EFFECTS).collect(),
        listed_units,
    };
    Ok(Synthetic { panel, truth })
}

/// Run `f` once per seed in parallel; results come back in seed order.
pub fn replicate<T, F>(seeds: std::ops::Range<u64>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    use rayon::prelude::*;
    seeds.collect::<Vec<_>>().into_par_iter().map(f).collect()
}

/// What the shock factor is tuned to reproduce.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationTarget {
    /// Mean overall index at the shock period, tuned through `shock`.
    MeanMi(f64),
    /// Mean deposit-stage index at the shock period, tuned through
    /// `deposit_shock`.
    MeanDepositMi(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub factor: f64,
    pub achieved: f64,
    pub evaluations: usize,
}

/// Mean index at the shock period over units whose value is defined.
pub fn shock_period_mean(cfg: &DgpConfig, target: CalibrationTarget) -> Result<f64, SynthError> {
    if cfg.shock_period == 0 || cfg.shock_period >= cfg.n_periods {
        return Err(SynthError::Config("shock_period must be an interior period".into()));
    }
    let syn = generate(cfg)?;
    let periods = cfg.periods();
    let pair = [periods[cfg.shock_period - 1], periods[cfg.shock_period]];
    let sub = syn.panel.select_periods(&pair)?;
    let res = fsi_panel(&sub, &network(), &FsiOptions::default())?;
    let vals: Vec<f64> = res
        .records
        .iter()
        .filter_map(|r| match target {
            CalibrationTarget::MeanMi(_) => r.mi,
            CalibrationTarget::MeanDepositMi(_) => {
                if matches!(r.status, PairStatus::Ok | PairStatus::StageUndefined) {
                    r.stage_mi[0]
                } else {
                    None
                }
            }
        })
        .collect();
    if vals.is_empty() {
        return Err(SynthError::Calibration("no defined index values".into()));
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Bisect the relevant shock factor until the shock-period mean is within
/// `tol` of the target.
pub fn calibrate(cfg: &DgpConfig, target: CalibrationTarget, tol: f64) -> Result<Calibration, SynthError> {
    let goal = match target {
        CalibrationTarget::MeanMi(v) | CalibrationTarget::MeanDepositMi(v) => v,
    };
    let at = |f: f64| {
        let mut c = cfg.clone();
        match target {
            CalibrationTarget::MeanMi(_) => c.shock = f,
            CalibrationTarget::MeanDepositMi(_) => c.deposit_shock = f,
        }
        shock_period_mean(&c, target)
    };
    let (mut lo, mut hi) = (0.5, 4.0);
    let (mut m_lo, mut m_hi) = (at(lo)?, at(hi)?);
    let mut evaluations = 2;
    if !(m_lo <= goal && goal <= m_hi) {
        return Err(SynthError::Calibration(format!(
            "target {goal} outside the bracket [{m_lo}, {m_hi}]"
        )));
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let m = at(mid)?;
        evaluations += 1;
        if (m - goal).abs() < tol {
            return Ok(Calibration {
                factor: mid,
                achieved: m,
                evaluations,
            });
        }
        if m < goal {
            (lo, m_lo) = (mid, m);
        } else {
            (hi, m_hi) = (mid, m);
        }
    }
    let (factor, achieved) = if (m_lo - goal).abs() < (m_hi - goal).abs() { (lo, m_lo) } else { (hi, m_hi) };
    if (achieved - goal).abs() < tol {
        Ok(Calibration {
            factor,
            achieved,
            evaluations,
        })
    } else {
        Err(SynthError::Calibration(format!("closest mean {achieved} for target {goal}")))
    }
}
