//! Multi-stage network DEA in multiplier form with additive decomposition.
//!
//! Stages form a linear chain. Stage 1 consumes the initial inputs; stage
//! `p > 1` consumes the intermediate outputs of stage `p - 1` plus its own
//! external inputs. Intermediate-output weights are shared between the stage
//! that produces a link and the stage that consumes it. Each stage carries a
//! free intercept, so the frontier is variable-returns-to-scale.
//!
//! For a target DMU the LP maximises the sum of all stage numerators subject
//! to the sum of the target's stage denominators being 1 and every frontier
//! DMU's stage ratio being at most 1. At the optimum the stage weights are the
//! denominator shares, so `theta = sum_p w_p * theta_p` holds identically.

use std::collections::BTreeSet;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{LinearProgram, LpError, LpStatus, Relation, Sense, SolveOptions, VarId};
use crate::panel::{Panel, PanelError, VariableRole};

#[derive(Debug, Error)]
pub enum DeaError {
    #[error("network specification: {0}")]
    Spec(String),
    #[error("non-positive value {value} for `{column}` of unit `{unit}`")]
    Positivity {
        unit: String,
        column: String,
        value: f64,
    },
    #[error("observation for `{unit}` has {got} values, network expects {expected}")]
    Dimension {
        unit: String,
        got: usize,
        expected: usize,
    },
    #[error("empty frontier")]
    EmptyFrontier,
    #[error("no unit is observed in both period {data_period} and period {frontier_period}")]
    EmptyIntersection { data_period: i64, frontier_period: i64 },
    #[error("unknown period {0}")]
    UnknownPeriod(i64),
    #[error("objective {objective} differs from weighted stage sum {decomposed}")]
    Inconsistent { objective: f64, decomposed: f64 },
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct StageSpec {
    /// Short label used when naming per-stage index columns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub initial_inputs: Vec<String>,
    #[serde(default)]
    pub final_outputs: Vec<String>,
    #[serde(default)]
    pub intermediate_outputs: Vec<String>,
    #[serde(default)]
    pub external_inputs: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct RawSpec {
    stages: Vec<StageSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec")]
pub struct NetworkSpec {
    stages: Vec<StageSpec>,
}

impl TryFrom<RawSpec> for NetworkSpec {
    type Error = DeaError;
    fn try_from(raw: RawSpec) -> Result<Self, DeaError> {
        NetworkSpec::new(raw.stages)
    }
}

impl NetworkSpec {
    pub fn new(stages: Vec<StageSpec>) -> Result<Self, DeaError> {
        let err = |m: String| Err(DeaError::Spec(m));
        if stages.is_empty() {
            return err("at least one stage is required".into());
        }
        let last = stages.len() - 1;
        for (p, s) in stages.iter().enumerate() {
            let n = p + 1;
            if p == 0 && s.initial_inputs.is_empty() {
                return err("stage 1 needs at least one initial input".into());
            }
            if p > 0 && !s.initial_inputs.is_empty() {
                return err(format!("stage {n}: initial inputs are only allowed in stage 1"));
            }
            if p == 0 && !s.external_inputs.is_empty() {
                return err("stage 1 takes initial inputs, not external inputs".into());
            }
            if p == last && !s.intermediate_outputs.is_empty() {
                return err(format!("stage {n} is last and cannot have intermediate outputs"));
            }
            if s.final_outputs.is_empty() && s.intermediate_outputs.is_empty() {
                return err(format!("stage {n} has no outputs"));
            }
        }
        let mut seen = BTreeSet::new();
        for s in &stages {
            for c in s
                .initial_inputs
                .iter()
                .chain(&s.final_outputs)
                .chain(&s.intermediate_outputs)
                .chain(&s.external_inputs)
            {
                if !seen.insert(c.as_str()) {
                    return err(format!("column `{c}` is used more than once"));
                }
            }
        }
        let mut labels = BTreeSet::new();
        for (p, s) in stages.iter().enumerate() {
            if !labels.insert(stage_label(s, p)) {
                return err(format!("duplicate stage label `{}`", stage_label(s, p)));
            }
        }
        Ok(Self { stages })
    }

    pub fn from_json_str(s: &str) -> Result<Self, DeaError> {
        serde_json::from_str(s).map_err(|e| DeaError::Spec(e.to_string()))
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    /// The three-stage bank network. Stage 3's external input has no
    /// canonical column and must be supplied.
    pub fn bank_default(stage3_external: &str) -> Result<Self, DeaError> {
        let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        NetworkSpec::new(vec![
            StageSpec {
                name: Some("d".into()),
                initial_inputs: v(&["salary_per_employee", "capex", "equity"]),
                final_outputs: v(&["roe"]),
                intermediate_outputs: v(&["deposits", "operating_cash"]),
                external_inputs: vec![],
            },
            StageSpec {
                name: Some("l".into()),
                initial_inputs: vec![],
                final_outputs: v(&["return_on_assets"]),
                intermediate_outputs: v(&["net_loans", "net_interest_income"]),
                external_inputs: v(&["total_assets"]),
            },
            StageSpec {
                name: Some("p".into()),
                initial_inputs: vec![],
                final_outputs: v(&["revenue_per_employee", "total_revenue", "net_profit_margin"]),
                intermediate_outputs: vec![],
                external_inputs: v(&[stage3_external]),
            },
        ])
    }

    pub fn stages(&self) -> &[StageSpec] {
        &self.stages
    }

    pub fn n_stages(&self) -> usize {
        self.stages.len()
    }

    /// Index column label of stage `p` (0-based): its name, or `p + 1`.
    pub fn stage_label(&self, p: usize) -> String {
        stage_label(&self.stages[p], p)
    }

    /// Every column the network reads, in stage order.
    pub fn columns(&self) -> Vec<String> {
        self.column_roles().map(|(c, _)| c).collect()
    }

    pub fn column_roles(&self) -> impl Iterator<Item = (String, VariableRole)> + '_ {
        self.stages.iter().flat_map(|s| {
            let tag = |cols: &Vec<String>, role: VariableRole| {
                cols.iter().map(move |c| (c.clone(), role)).collect::<Vec<_>>()
            };
            let mut v = tag(&s.initial_inputs, VariableRole::InitialInput);
            v.extend(tag(&s.external_inputs, VariableRole::ExternalInput));
            v.extend(tag(&s.final_outputs, VariableRole::FinalOutput));
            v.extend(tag(&s.intermediate_outputs, VariableRole::IntermediateOutput));
            v
        })
    }

    /// Columns of output role (final or intermediate).
    pub fn output_columns(&self) -> Vec<String> {
        self.column_roles()
            .filter(|(_, r)| r.is_output())
            .map(|(c, _)| c)
            .collect()
    }

    pub fn n_weight_variables(&self) -> usize {
        self.stages
            .iter()
            .map(|s| {
                s.initial_inputs.len()
                    + s.final_outputs.len()
                    + s.intermediate_outputs.len()
                    + s.external_inputs.len()
            })
            .sum()
    }

    fn index_of(&self, cols: &[String]) -> Vec<usize> {
        let all = self.columns();
        cols.iter()
            .map(|c| all.iter().position(|a| a == c).expect("spec column"))
            .collect()
    }
}

fn stage_label(s: &StageSpec, p: usize) -> String {
    s.name.clone().unwrap_or_else(|| (p + 1).to_string())
}

/// One DMU's values for `NetworkSpec::columns()`, in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub unit: String,
    pub values: Vec<f64>,
}

impl Observation {
    pub fn new(unit: &str, values: Vec<f64>) -> Self {
        Self {
            unit: unit.to_string(),
            values,
        }
    }

    /// `None` when any network column is missing for the cell.
    pub fn from_panel(
        spec: &NetworkSpec,
        panel: &Panel,
        unit: usize,
        period: usize,
    ) -> Result<Option<Self>, DeaError> {
        let mut values = Vec::new();
        for c in spec.columns() {
            match panel.require(&c)?.values[panel.cell(unit, period)] {
                Some(v) => values.push(v),
                None => return Ok(None),
            }
        }
        Ok(Some(Self {
            unit: panel.units()[unit].clone(),
            values,
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeaOptions {
    /// Lower bound on every u, eta and nu multiplier.
    pub floor: f64,
    /// Divide each column by its pooled mean before solving, so the floor is
    /// unit-free. Only used by the panel-level entry points.
    pub scale_columns: bool,
    pub solve: SolveOptions,
}

impl Default for DeaOptions {
    fn default() -> Self {
        Self {
            floor: 1e-6,
            scale_columns: true,
            solve: SolveOptions::default(),
        }
    }
}

/// Variable handles of an assembled program.
struct Layout {
    /// Per stage: (var, column index) for final outputs.
    u: Vec<Vec<(VarId, usize)>>,
    /// Per stage: intermediate outputs of that stage.
    eta: Vec<Vec<(VarId, usize)>>,
    /// Per stage: initial inputs (stage 1) or external inputs.
    nu: Vec<Vec<(VarId, usize)>>,
    eps: Vec<VarId>,
}

impl Layout {
    fn numerator(&self, p: usize, z: &[f64]) -> Vec<(VarId, f64)> {
        let mut out: Vec<(VarId, f64)> = self.u[p].iter().map(|&(v, c)| (v, z[c])).collect();
        out.extend(self.eta[p].iter().map(|&(v, c)| (v, z[c])));
        out.push((self.eps[p], 1.0));
        out
    }

    fn denominator(&self, p: usize, z: &[f64]) -> Vec<(VarId, f64)> {
        let mut out = Vec::new();
        if p > 0 {
            out.extend(self.eta[p - 1].iter().map(|&(v, c)| (v, z[c])));
        }
        out.extend(self.nu[p].iter().map(|&(v, c)| (v, z[c])));
        out
    }

    fn all_weights(&self) -> impl Iterator<Item = (VarId, usize)> + '_ {
        self.u
            .iter()
            .chain(&self.eta)
            .chain(&self.nu)
            .flat_map(|s| s.iter().copied())
    }
}

fn check_observation(spec_len: usize, columns: &[String], obs: &Observation) -> Result<(), DeaError> {
    if obs.values.len() != spec_len {
        return Err(DeaError::Dimension {
            unit: obs.unit.clone(),
            got: obs.values.len(),
            expected: spec_len,
        });
    }
    for (c, &v) in columns.iter().zip(&obs.values) {
        if !(v > 0.0) || !v.is_finite() {
            return Err(DeaError::Positivity {
                unit: obs.unit.clone(),
                column: c.clone(),
                value: v,
            });
        }
    }
    Ok(())
}

fn build(
    spec: &NetworkSpec,
    frontier: &[Observation],
    target: &Observation,
    floor: f64,
) -> Result<(LinearProgram, Layout), DeaError> {
    if frontier.is_empty() {
        return Err(DeaError::EmptyFrontier);
    }
    if !(floor >= 0.0) {
        return Err(DeaError::Spec(format!("positivity floor {floor} must be >= 0")));
    }
    let columns = spec.columns();
    for obs in frontier.iter().chain(std::iter::once(target)) {
        check_observation(columns.len(), &columns, obs)?;
    }

    let mut lp = LinearProgram::new(Sense::Maximize);
    let mut layout = Layout {
        u: Vec::new(),
        eta: Vec::new(),
        nu: Vec::new(),
        eps: Vec::new(),
    };
    let weights = |lp: &mut LinearProgram, prefix: String, cols: &[String]| {
        spec.index_of(cols)
            .into_iter()
            .zip(cols)
            .map(|(idx, c)| Ok((lp.add_variable(&format!("{prefix}_{c}"), floor, f64::INFINITY)?, idx)))
            .collect::<Result<Vec<_>, LpError>>()
    };
    for (p, s) in spec.stages().iter().enumerate() {
        let n = p + 1;
        layout.u.push(weights(&mut lp, format!("u{n}"), &s.final_outputs)?);
        layout
            .eta
            .push(weights(&mut lp, format!("eta{n}"), &s.intermediate_outputs)?);
        let nu_cols = if p == 0 { &s.initial_inputs } else { &s.external_inputs };
        layout.nu.push(weights(&mut lp, format!("nu{p}"), nu_cols)?);
    }
    for p in 0..spec.n_stages() {
        layout.eps.push(lp.add_variable(
            &format!("eps{}", p + 1),
            f64::NEG_INFINITY,
            f64::INFINITY,
        )?);
    }

    let z = &target.values;
    for p in 0..spec.n_stages() {
        for (v, c) in layout.numerator(p, z) {
            lp.add_objective(v, c);
        }
    }
    let norm: Vec<(VarId, f64)> = (0..spec.n_stages())
        .flat_map(|p| layout.denominator(p, z))
        .collect();
    lp.add_constraint("normalization", norm, Relation::Eq, 1.0)?;

    for p in 0..spec.n_stages() {
        for obs in frontier {
            let mut row = layout.numerator(p, &obs.values);
            row.extend(
                layout
                    .denominator(p, &obs.values)
                    .into_iter()
                    .map(|(v, c)| (v, -c)),
            );
            lp.add_constraint(&format!("stage{}[{}]", p + 1, obs.unit), row, Relation::Le, 0.0)?;
        }
    }
    Ok((lp, layout))
}

/// Assemble the multiplier program of `target` against `frontier`.
///
/// The caller decides whether the target belongs to the frontier: include it
/// for same-period scores, leave it out when scoring against another period.
pub fn assemble_lp(
    spec: &NetworkSpec,
    frontier: &[Observation],
    target: &Observation,
    floor: f64,
) -> Result<LinearProgram, DeaError> {
    build(spec, frontier, target, floor).map(|(lp, _)| lp)
}

/// Solved scores of one program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub stage_thetas: Vec<f64>,
    pub weights: Vec<f64>,
    /// Overall score. `+inf` when the program is unbounded, which happens
    /// when the target's final output exceeds everything on the frontier.
    pub theta: f64,
    /// Multiplier values keyed by LP variable name.
    pub multipliers: Vec<(String, f64)>,
    pub status: LpStatus,
    pub iterations: usize,
}

impl Evaluation {
    fn failed(spec: &NetworkSpec, status: LpStatus, iterations: usize) -> Self {
        let p = spec.n_stages();
        Self {
            stage_thetas: vec![f64::NAN; p],
            weights: vec![f64::NAN; p],
            theta: if status == LpStatus::Unbounded {
                f64::INFINITY
            } else {
                f64::NAN
            },
            multipliers: Vec::new(),
            status,
            iterations,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

/// Solve the program of `target` against `frontier` and decompose it.
pub fn evaluate(
    spec: &NetworkSpec,
    frontier: &[Observation],
    target: &Observation,
    options: &DeaOptions,
) -> Result<Evaluation, DeaError> {
    let (lp, layout) = build(spec, frontier, target, options.floor)?;
    let sol = lp.solve(&options.solve);
    if !sol.is_optimal() {
        return Ok(Evaluation::failed(spec, sol.status, sol.iterations));
    }
    let z = &target.values;
    let dot = |terms: Vec<(VarId, f64)>| terms.iter().map(|&(v, c)| c * sol.value(v)).sum::<f64>();
    let num: Vec<f64> = (0..spec.n_stages())
        .map(|p| dot(layout.numerator(p, z)))
        .collect();
    let den: Vec<f64> = (0..spec.n_stages())
        .map(|p| dot(layout.denominator(p, z)))
        .collect();
    let total: f64 = den.iter().sum();
    let weights: Vec<f64> = den.iter().map(|d| d / total).collect();
    let stage_thetas: Vec<f64> = num.iter().zip(&den).map(|(n, d)| n / d).collect();
    let decomposed: f64 = weights.iter().zip(&stage_thetas).map(|(w, t)| w * t).sum();
    if (decomposed - sol.objective).abs() > 1e-6 {
        return Err(DeaError::Inconsistent {
            objective: sol.objective,
            decomposed,
        });
    }
    let multipliers = lp
        .variables()
        .iter()
        .zip(&sol.values)
        .map(|(v, &x)| (v.name.clone(), x))
        .collect();
    Ok(Evaluation {
        stage_thetas,
        weights,
        theta: sol.objective,
        multipliers,
        status: sol.status,
        iterations: sol.iterations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyRecord {
    pub unit: String,
    pub data_period: i64,
    pub frontier_period: i64,
    #[serde(flatten)]
    pub eval: Evaluation,
}

/// Complete observations of every unit in one period.
pub fn period_observations(
    spec: &NetworkSpec,
    panel: &Panel,
    period: i64,
) -> Result<Vec<Observation>, DeaError> {
    let p = panel.period_index(period).ok_or(DeaError::UnknownPeriod(period))?;
    let mut out = Vec::new();
    for u in 0..panel.n_units() {
        if let Some(obs) = Observation::from_panel(spec, panel, u, p)? {
            out.push(obs);
        }
    }
    Ok(out)
}

/// Mean of each network column over the complete observations of `periods`.
pub fn column_scales(
    spec: &NetworkSpec,
    panel: &Panel,
    periods: &[i64],
) -> Result<Vec<f64>, DeaError> {
    let k = spec.columns().len();
    let mut sum = vec![0.0; k];
    let mut n = 0usize;
    for &period in periods {
        for obs in period_observations(spec, panel, period)? {
            for (s, v) in sum.iter_mut().zip(&obs.values) {
                *s += v;
            }
            n += 1;
        }
    }
    Ok(sum
        .into_iter()
        .map(|s| if n > 0 && s > 0.0 { s / n as f64 } else { 1.0 })
        .collect())
}

fn rescale(obs: &[Observation], scales: &[f64]) -> Vec<Observation> {
    obs.iter()
        .map(|o| Observation {
            unit: o.unit.clone(),
            values: o.values.iter().zip(scales).map(|(v, s)| v / s).collect(),
        })
        .collect()
}

/// Score every unit observed in `data_period` against the frontier of
/// `frontier_period`.
///
/// The frontier is all complete observations of `frontier_period`; one record
/// is produced for each unit complete in both periods, ordered as in the
/// panel. When the two periods differ scores above 1 are expected.
pub fn evaluate_period(
    spec: &NetworkSpec,
    panel: &Panel,
    data_period: i64,
    frontier_period: i64,
    options: &DeaOptions,
) -> Result<Vec<EfficiencyRecord>, DeaError> {
    let scale_periods = [data_period, frontier_period];
    evaluate_period_scaled(spec, panel, data_period, frontier_period, &scale_periods, options)
}

/// As [`evaluate_period`], with column scales pooled over `scale_periods`.
/// Reported multipliers are converted back to the panel's units.
pub fn evaluate_period_scaled(
    spec: &NetworkSpec,
    panel: &Panel,
    data_period: i64,
    frontier_period: i64,
    scale_periods: &[i64],
    options: &DeaOptions,
) -> Result<Vec<EfficiencyRecord>, DeaError> {
    let data = period_observations(spec, panel, data_period)?;
    let frontier = period_observations(spec, panel, frontier_period)?;
    let targets: Vec<Observation> = data
        .into_iter()
        .filter(|o| frontier.iter().any(|f| f.unit == o.unit))
        .collect();
    if targets.is_empty() {
        return Err(DeaError::EmptyIntersection {
            data_period,
            frontier_period,
        });
    }
    let scales = if options.scale_columns {
        column_scales(spec, panel, scale_periods)?
    } else {
        vec![1.0; spec.columns().len()]
    };
    let frontier = rescale(&frontier, &scales);
    let targets = rescale(&targets, &scales);
    let var_scale = multiplier_scales(spec, &scales);

    targets
        .par_iter()
        .map(|target| {
            let mut eval = evaluate(spec, &frontier, target, options)?;
            for ((_, value), s) in eval.multipliers.iter_mut().zip(&var_scale) {
                *value /= s;
            }
            Ok(EfficiencyRecord {
                unit: target.unit.clone(),
                data_period,
                frontier_period,
                eval,
            })
        })
        .collect()
}

/// Column scale of each LP variable in creation order (1 for intercepts).
fn multiplier_scales(spec: &NetworkSpec, scales: &[f64]) -> Vec<f64> {
    let dummy = Observation::new("", vec![1.0; scales.len()]);
    let (_, layout) = build(spec, std::slice::from_ref(&dummy), &dummy, 0.0).expect("layout");
    let mut out = vec![1.0; layout.all_weights().count() + layout.eps.len()];
    for (v, c) in layout.all_weights() {
        out[v.0] = scales[c];
    }
    out
}

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

/// CSV with `unit, data_period, frontier_period, theta1.., w1.., theta, status`.
pub fn write_efficiency_csv<W: Write>(
    records: &[EfficiencyRecord],
    n_stages: usize,
    writer: W,
) -> Result<(), DeaError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![
        "unit".to_string(),
        "data_period".into(),
        "frontier_period".into(),
    ];
    header.extend((1..=n_stages).map(|p| format!("theta{p}")));
    header.extend((1..=n_stages).map(|p| format!("w{p}")));
    header.push("theta".into());
    header.push("status".into());
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.unit.clone(),
            r.data_period.to_string(),
            r.frontier_period.to_string(),
        ];
        row.extend(r.eval.stage_thetas.iter().map(|&v| fmt_f64(v)));
        row.extend(r.eval.weights.iter().map(|&v| fmt_f64(v)));
        row.push(fmt_f64(r.eval.theta));
        row.push(r.eval.status.to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| DeaError::Csv(e.into()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;
    use proptest::prelude::*;

    fn one_stage(inputs: &[&str], outputs: &[&str]) -> NetworkSpec {
        NetworkSpec::new(vec![StageSpec {
            name: None,
            initial_inputs: inputs.iter().map(|s| s.to_string()).collect(),
            final_outputs: outputs.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        }])
        .unwrap()
    }

    fn bank() -> NetworkSpec {
        NetworkSpec::bank_default("operating_expense").unwrap()
    }

    fn random_obs(rng: &mut CounterRng, n: usize, k: usize) -> Vec<Observation> {
        (0..n)
            .map(|i| {
                Observation::new(
                    &format!("u{i}"),
                    (0..k).map(|_| rng.uniform_range(0.5, 2.0)).collect(),
                )
            })
            .collect()
    }

    fn opts(floor: f64) -> DeaOptions {
        DeaOptions {
            floor,
            ..Default::default()
        }
    }

    #[test]
    fn bank_program_dimensions() {
        let spec = bank();
        assert_eq!(spec.columns().len(), 14);
        let mut rng = CounterRng::new(5, 0);
        let obs = random_obs(&mut rng, 104, 14);
        let lp = assemble_lp(&spec, &obs, &obs[0], 1e-6).unwrap();
        let weights = lp.variables().iter().filter(|v| v.lower == 1e-6).count();
        let free = lp
            .variables()
            .iter()
            .filter(|v| v.lower == f64::NEG_INFINITY && v.upper == f64::INFINITY)
            .count();
        assert_eq!((weights, free), (14, 3));
        assert_eq!(lp.n_variables(), 17);
        assert_eq!(lp.n_constraints(), 1 + 3 * 104);
        let names: Vec<&str> = lp.variables().iter().map(|v| v.name.as_str()).collect();
        for n in ["u1_roe", "eta1_deposits", "nu0_capex", "nu1_total_assets", "nu2_operating_expense", "eps3"] {
            assert!(names.contains(&n), "{n}");
        }
    }

    #[test]
    fn single_dmu_program_and_score() {
        let spec = one_stage(&["x"], &["y"]);
        let obs = Observation::new("A", vec![3.0, 7.0]);
        let lp = assemble_lp(&spec, std::slice::from_ref(&obs), &obs, 1e-6).unwrap();
        assert_eq!(lp.n_variables(), 3);
        assert_eq!(lp.n_constraints(), 2);
        assert_eq!(lp.constraints()[0].relation, Relation::Eq);
        let e = evaluate(&spec, &[obs.clone()], &obs, &opts(1e-6)).unwrap();
        assert!((e.theta - 1.0).abs() < 1e-9);
        assert_eq!(e.weights, vec![1.0]);
    }

    #[test]
    fn rejects_bad_specs_and_data() {
        assert!(NetworkSpec::new(vec![]).is_err());
        let bad_last = StageSpec {
            initial_inputs: vec!["x".into()],
            intermediate_outputs: vec!["m".into()],
            ..Default::default()
        };
        assert!(NetworkSpec::new(vec![bad_last]).is_err());
        let dup = StageSpec {
            initial_inputs: vec!["x".into()],
            final_outputs: vec!["x".into()],
            ..Default::default()
        };
        assert!(NetworkSpec::new(vec![dup]).is_err());

        let spec = one_stage(&["x"], &["y"]);
        let bad = Observation::new("B", vec![1.0, -2.0]);
        match assemble_lp(&spec, &[bad.clone()], &bad, 1e-6) {
            Err(DeaError::Positivity { unit, column, .. }) => {
                assert_eq!((unit.as_str(), column.as_str()), ("B", "y"))
            }
            other => panic!("{other:?}"),
        }
        let short = Observation::new("C", vec![1.0]);
        assert!(matches!(
            assemble_lp(&spec, &[short.clone()], &short, 1e-6),
            Err(DeaError::Dimension { .. })
        ));
    }

    #[test]
    fn spec_json_round_trip_and_validation() {
        let spec = bank();
        let back = NetworkSpec::from_json_str(&spec.to_json_string()).unwrap();
        assert_eq!(spec, back);
        let minimal = r#"{"stages":[{"initial_inputs":["x"],"final_outputs":["y"]}]}"#;
        assert_eq!(NetworkSpec::from_json_str(minimal).unwrap().n_stages(), 1);
        let invalid = r#"{"stages":[{"final_outputs":["y"]}]}"#;
        assert!(NetworkSpec::from_json_str(invalid).is_err());
    }

    #[test]
    fn dominated_dmu_is_redundant() {
        let spec = one_stage(&["x1", "x2"], &["y"]);
        let base = vec![
            Observation::new("A", vec![1.0, 2.0, 1.0]),
            Observation::new("B", vec![2.0, 1.0, 1.5]),
            Observation::new("C", vec![2.0, 2.0, 1.2]),
        ];
        let mut more = base.clone();
        more.push(Observation::new("D", vec![3.0, 3.0, 0.9]));
        for t in &base {
            let a = evaluate(&spec, &base, t, &opts(1e-6)).unwrap().theta;
            let b = evaluate(&spec, &more, t, &opts(1e-6)).unwrap().theta;
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    /// Exact maximum over `u >= 0` of `min_i(a_i - u b_i)`, a concave
    /// piecewise-linear function, by checking every breakpoint.
    fn best_over_u(a: &[f64], b: &[f64]) -> f64 {
        let f = |u: f64| {
            a.iter()
                .zip(b)
                .map(|(a, b)| a - u * b)
                .fold(f64::INFINITY, f64::min)
        };
        let mut best = f(0.0);
        for i in 0..a.len() {
            for j in 0..a.len() {
                if b[i] != b[j] {
                    let u = (a[i] - a[j]) / (b[i] - b[j]);
                    if u >= 0.0 {
                        best = best.max(f(u));
                    }
                }
            }
        }
        best
    }

    #[test]
    fn matches_grid_search_oracle() {
        let spec = one_stage(&["x1", "x2"], &["y"]);
        let data = [[2.0, 4.0, 1.0], [3.0, 1.5, 1.2], [4.0, 3.0, 1.1]];
        let obs: Vec<Observation> = data
            .iter()
            .enumerate()
            .map(|(i, d)| Observation::new(&format!("D{i}"), d.to_vec()))
            .collect();
        for (o, target) in data.iter().enumerate() {
            // Input weights on the simplex direction, normalised on the target.
            let mut oracle = f64::NEG_INFINITY;
            for step in 0..=1000 {
                let l = step as f64 / 1000.0;
                let s = l * target[0] + (1.0 - l) * target[1];
                let nu = [l / s, (1.0 - l) / s];
                let a: Vec<f64> = data.iter().map(|d| nu[0] * d[0] + nu[1] * d[1]).collect();
                let b: Vec<f64> = data.iter().map(|d| d[2] - target[2]).collect();
                oracle = oracle.max(best_over_u(&a, &b));
            }
            let e = evaluate(&spec, &obs, &obs[o], &opts(1e-9)).unwrap();
            assert!((e.theta - oracle).abs() < 2e-3, "DMU {o}: {} vs {oracle}", e.theta);
            assert!(e.theta >= oracle - 1e-9);
        }
    }

    #[test]
    fn self_evaluation_bounds_and_identities() {
        let spec = bank();
        let mut rng = CounterRng::new(9, 1);
        let obs = random_obs(&mut rng, 30, 14);
        for t in &obs {
            let e = evaluate(&spec, &obs, t, &opts(1e-6)).unwrap();
            assert!(e.is_optimal());
            assert!(e.theta > 0.0 && e.theta <= 1.0 + 1e-8, "{}", e.theta);
            let wsum: f64 = e.weights.iter().sum();
            assert!((wsum - 1.0).abs() < 1e-9);
            let dec: f64 = e.weights.iter().zip(&e.stage_thetas).map(|(w, t)| w * t).sum();
            assert!((dec - e.theta).abs() < 1e-8);
            // Free intercepts can push a stage numerator below zero, so only
            // the upper bound is guaranteed per stage.
            for th in &e.stage_thetas {
                assert!(*th <= 1.0 + 1e-8, "stage {th}");
            }
            for (name, v) in &e.multipliers {
                if !name.starts_with("eps") {
                    assert!(*v >= 1e-6 - 1e-12, "{name} = {v}");
                }
            }
        }
    }

    #[test]
    fn exceeding_frontier_output_is_unbounded() {
        let spec = one_stage(&["x"], &["y"]);
        let frontier = vec![Observation::new("A", vec![1.0, 1.0]), Observation::new("B", vec![2.0, 2.0])];
        let target = Observation::new("T", vec![1.5, 3.0]);
        let e = evaluate(&spec, &frontier, &target, &opts(1e-6)).unwrap();
        assert_eq!(e.status, LpStatus::Unbounded);
        assert_eq!(e.theta, f64::INFINITY);
    }

    fn two_period_panel(spec: &NetworkSpec, first: &[Observation], second: &[Observation]) -> Panel {
        let units: Vec<String> = first.iter().map(|o| o.unit.clone()).collect();
        let mut panel = Panel::new(units, vec![2020, 2021]).unwrap();
        for ((c, role), k) in spec.column_roles().zip(0..) {
            let mut values = Vec::new();
            for (a, b) in first.iter().zip(second) {
                values.push(Some(a.values[k]));
                values.push(Some(b.values[k]));
            }
            panel.set_column(&c, role, values).unwrap();
        }
        panel
    }

    #[test]
    fn identical_periods_give_identical_cross_scores() {
        let spec = bank();
        let mut rng = CounterRng::new(3, 3);
        let obs = random_obs(&mut rng, 12, 14);
        let panel = two_period_panel(&spec, &obs, &obs);
        let same = evaluate_period(&spec, &panel, 2020, 2020, &DeaOptions::default()).unwrap();
        let cross = evaluate_period(&spec, &panel, 2021, 2020, &DeaOptions::default()).unwrap();
        for (a, b) in same.iter().zip(&cross) {
            assert_eq!(a.unit, b.unit);
            assert!((a.eval.theta - b.eval.theta).abs() < 1e-9);
            assert!(a.eval.theta <= 1.0 + 1e-8);
        }
    }

    #[test]
    fn output_growth_raises_cross_period_scores() {
        let spec = one_stage(&["x1", "x2"], &["y1", "y2"]);
        let mut rng = CounterRng::new(4, 4);
        let base = random_obs(&mut rng, 5, 4);
        let grown: Vec<Observation> = base
            .iter()
            .map(|o| {
                let mut v = o.values.clone();
                v[2] *= 1.1;
                v[3] *= 1.1;
                Observation::new(&o.unit, v)
            })
            .collect();
        let panel = two_period_panel(&spec, &base, &grown);
        let same = evaluate_period(&spec, &panel, 2020, 2020, &DeaOptions::default()).unwrap();
        let cross = evaluate_period(&spec, &panel, 2021, 2020, &DeaOptions::default()).unwrap();
        for (a, b) in same.iter().zip(&cross) {
            assert!(b.eval.theta > a.eval.theta, "{}: {} vs {}", a.unit, b.eval.theta, a.eval.theta);
        }
    }

    #[test]
    fn missing_cells_drop_units_and_csv_layout() {
        let spec = one_stage(&["x"], &["y"]);
        let mut panel = Panel::new(vec!["A".into(), "B".into(), "C".into()], vec![1, 2]).unwrap();
        panel
            .set_column("x", VariableRole::InitialInput, vec![Some(1.0), Some(1.0), Some(2.0), None, Some(1.5), Some(1.5)])
            .unwrap();
        panel
            .set_column("y", VariableRole::FinalOutput, vec![Some(1.0); 6])
            .unwrap();
        let recs = evaluate_period(&spec, &panel, 2, 1, &DeaOptions::default()).unwrap();
        let units: Vec<&str> = recs.iter().map(|r| r.unit.as_str()).collect();
        assert_eq!(units, ["A", "C"]);
        let mut buf = Vec::new();
        write_efficiency_csv(&recs, 1, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("unit,data_period,frontier_period,theta1,w1,theta,status\n"));
        assert_eq!(text.lines().count(), 3);
        assert!(matches!(
            evaluate_period(&spec, &panel, 2, 9, &DeaOptions::default()),
            Err(DeaError::UnknownPeriod(9))
        ));
    }

    #[test]
    fn reported_multipliers_are_in_panel_units() {
        let spec = one_stage(&["x"], &["y"]);
        let mut panel = Panel::new(vec!["A".into(), "B".into()], vec![1]).unwrap();
        panel
            .set_column("x", VariableRole::InitialInput, vec![Some(100.0), Some(300.0)])
            .unwrap();
        panel
            .set_column("y", VariableRole::FinalOutput, vec![Some(5.0), Some(9.0)])
            .unwrap();
        for r in evaluate_period(&spec, &panel, 1, 1, &DeaOptions::default()).unwrap() {
            let nu = r.eval.multipliers.iter().find(|(n, _)| n == "nu0_x").unwrap().1;
            let x = if r.unit == "A" { 100.0 } else { 300.0 };
            assert!((nu * x - 1.0).abs() < 1e-9);
        }
    }

    fn obs_strategy(n: usize, k: usize) -> impl Strategy<Value = Vec<Observation>> {
        prop::collection::vec(prop::collection::vec(0.5f64..2.0, k), n).prop_map(|rows| {
            rows.into_iter()
                .enumerate()
                .map(|(i, v)| Observation::new(&format!("u{i}"), v))
                .collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn adding_a_frontier_dmu_never_raises_scores(obs in obs_strategy(8, 14)) {
            let spec = bank();
            let (extra, base) = obs.split_last().unwrap();
            let mut more = base.to_vec();
            more.push(extra.clone());
            for t in base {
                let a = evaluate(&spec, base, t, &opts(1e-6)).unwrap().theta;
                let b = evaluate(&spec, &more, t, &opts(1e-6)).unwrap().theta;
                prop_assert!(b <= a + 1e-9, "{} -> {}", a, b);
            }
        }

        #[test]
        fn duplicate_dmu_changes_nothing(obs in obs_strategy(6, 14), pick in 0usize..6) {
            let spec = bank();
            let mut more = obs.clone();
            let mut dup = obs[pick].clone();
            dup.unit = "dup".into();
            more.push(dup);
            for t in &obs {
                let a = evaluate(&spec, &obs, t, &opts(1e-6)).unwrap().theta;
                let b = evaluate(&spec, &more, t, &opts(1e-6)).unwrap().theta;
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn scores_are_units_invariant(obs in obs_strategy(7, 14), col in 0usize..14, c in 0.1f64..10.0) {
            let spec = bank();
            let scaled: Vec<Observation> = obs
                .iter()
                .map(|o| {
                    let mut v = o.values.clone();
                    v[col] *= c;
                    Observation::new(&o.unit, v)
                })
                .collect();
            for (t, ts) in obs.iter().zip(&scaled) {
                let a = evaluate(&spec, &obs, t, &opts(1e-9)).unwrap().theta;
                let b = evaluate(&spec, &scaled, ts, &opts(1e-9)).unwrap().theta;
                prop_assert!((a - b).abs() < 1e-7, "{} vs {}", a, b);
            }
        }
    }
}
