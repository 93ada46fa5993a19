//! Malmquist productivity indices from network efficiency scores.
//!
//! For a unit observed in periods `t` and `t+1`, four scores enter: its
//! period-`t` data against the period-`t` and period-`t+1` frontiers, and
//! likewise for its period-`t+1` data. The index is the geometric mean of
//! the two frontier-specific ratios and splits into efficiency change (EC)
//! and technical change (TC). The same formula on stage scores gives one
//! index per stage.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::LpStatus;
use crate::netdea::{evaluate_period_scaled, DeaError, DeaOptions, EfficiencyRecord, NetworkSpec};
use crate::panel::{shift_normalize, Panel, PanelError, Provenance, VariableRole};

#[derive(Debug, Error)]
pub enum MalmquistError {
    #[error("score {name} = {value} is not strictly positive and finite")]
    Domain { name: &'static str, value: f64 },
    #[error("same-period score {name} = {value} exceeds 1")]
    AboveOne { name: &'static str, value: f64 },
    #[error("panel needs at least two periods")]
    TooFewPeriods,
    #[error(transparent)]
    Dea(#[from] DeaError),
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

const SAME_PERIOD_TOL: f64 = 1e-8;

/// Scores of one unit over a period pair. Field names read
/// `frontier_data`: `t_t1` is the period-`t+1` data against the period-`t`
/// frontier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreQuadruple {
    t_t: f64,
    t_t1: f64,
    t1_t: f64,
    t1_t1: f64,
}

impl ScoreQuadruple {
    pub fn new(t_t: f64, t_t1: f64, t1_t: f64, t1_t1: f64) -> Result<Self, MalmquistError> {
        for (name, value) in [("t_t", t_t), ("t_t1", t_t1), ("t1_t", t1_t), ("t1_t1", t1_t1)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(MalmquistError::Domain { name, value });
            }
        }
        for (name, value) in [("t_t", t_t), ("t1_t1", t1_t1)] {
            if value > 1.0 + SAME_PERIOD_TOL {
                return Err(MalmquistError::AboveOne { name, value });
            }
        }
        Ok(Self { t_t, t_t1, t1_t, t1_t1 })
    }

    pub fn t_t(&self) -> f64 {
        self.t_t
    }
    pub fn t_t1(&self) -> f64 {
        self.t_t1
    }
    pub fn t1_t(&self) -> f64 {
        self.t1_t
    }
    pub fn t1_t1(&self) -> f64 {
        self.t1_t1
    }

    /// The quadruple with the two periods relabelled.
    pub fn reversed(&self) -> Self {
        Self {
            t_t: self.t1_t1,
            t_t1: self.t1_t,
            t1_t: self.t_t1,
            t1_t1: self.t_t,
        }
    }
}

pub fn malmquist(q: &ScoreQuadruple) -> f64 {
    ((q.t_t1 / q.t_t) * (q.t1_t1 / q.t1_t)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub ec: f64,
    pub tc: f64,
}

pub fn decompose(q: &ScoreQuadruple) -> Decomposition {
    Decomposition {
        ec: q.t1_t1 / q.t_t,
        tc: ((q.t_t1 / q.t1_t1) * (q.t_t / q.t1_t)).sqrt(),
    }
}

/// One index per stage from per-stage quadruples.
pub fn stage_malmquist(stages: &[ScoreQuadruple]) -> Vec<f64> {
    stages.iter().map(malmquist).collect()
}

/// Why a unit-pair has no (or only partial) index values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "kebab-case")]
pub enum PairStatus {
    Ok,
    /// A cross-period program was unbounded: the unit produces beyond the
    /// other period's frontier in some final output.
    Unbounded,
    /// A program ended infeasible or hit the iteration limit.
    SolverFailure,
    /// Overall indices exist, but some stage score was not positive.
    StageUndefined,
    /// The unit is not DEA-complete in one of the two periods.
    Missing,
}

impl PairStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            PairStatus::Ok => "ok",
            PairStatus::Unbounded => "unbounded",
            PairStatus::SolverFailure => "solver-failure",
            PairStatus::StageUndefined => "stage-undefined",
            PairStatus::Missing => "missing",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MalmquistRecord {
    pub unit: String,
    pub period_from: i64,
    pub period_to: i64,
    pub mi: Option<f64>,
    pub ec: Option<f64>,
    pub tc: Option<f64>,
    pub stage_mi: Vec<Option<f64>>,
    pub status: PairStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FsiOptions {
    pub dea: DeaOptions,
    /// Floor ratio for the positivity shift of network columns that contain
    /// non-positive values.
    pub shift_floor: f64,
}

impl Default for FsiOptions {
    fn default() -> Self {
        Self {
            dea: DeaOptions::default(),
            shift_floor: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FsiResult {
    /// Input panel plus `FSI`, `EC`, `TC` and one `MI_<stage>` column each,
    /// valued at the later period of each pair.
    pub panel: Panel,
    pub records: Vec<MalmquistRecord>,
    pub efficiency: Vec<EfficiencyRecord>,
    /// Positivity shifts applied, one entry per (pair, column).
    pub shifts: Vec<(i64, i64, Provenance)>,
}

impl FsiResult {
    pub fn count(&self, status: PairStatus) -> usize {
        self.records.iter().filter(|r| r.status == status).count()
    }

    pub fn solver_failures(&self) -> usize {
        self.efficiency
            .iter()
            .filter(|r| matches!(r.eval.status, LpStatus::Infeasible | LpStatus::IterationLimit))
            .count()
    }
}

/// Names of the index columns written by [`fsi_panel`].
pub fn index_columns(spec: &NetworkSpec) -> Vec<String> {
    let mut cols = vec!["FSI".to_string(), "EC".into(), "TC".into()];
    cols.extend((0..spec.n_stages()).map(|p| format!("MI_{}", spec.stage_label(p))));
    cols
}

struct PairOutput {
    records: Vec<MalmquistRecord>,
    efficiency: Vec<EfficiencyRecord>,
    shifts: Vec<(i64, i64, Provenance)>,
}

fn lookup<'a>(recs: &'a [EfficiencyRecord]) -> BTreeMap<&'a str, &'a EfficiencyRecord> {
    recs.iter().map(|r| (r.unit.as_str(), r)).collect()
}

fn pair_record(
    unit: &str,
    t: i64,
    t1: i64,
    scores: [Option<&EfficiencyRecord>; 4],
    n_stages: usize,
) -> MalmquistRecord {
    let mut rec = MalmquistRecord {
        unit: unit.to_string(),
        period_from: t,
        period_to: t1,
        mi: None,
        ec: None,
        tc: None,
        stage_mi: vec![None; n_stages],
        status: PairStatus::Missing,
    };
    let [Some(tt), Some(tt1), Some(t1t), Some(t1t1)] = scores else {
        return rec;
    };
    let evals = [&tt.eval, &tt1.eval, &t1t.eval, &t1t1.eval];
    if evals.iter().any(|e| e.status == LpStatus::Unbounded) {
        rec.status = PairStatus::Unbounded;
        return rec;
    }
    if evals.iter().any(|e| !e.is_optimal()) {
        rec.status = PairStatus::SolverFailure;
        return rec;
    }
    let q = match ScoreQuadruple::new(tt.eval.theta, tt1.eval.theta, t1t.eval.theta, t1t1.eval.theta)
    {
        Ok(q) => q,
        Err(_) => {
            rec.status = PairStatus::SolverFailure;
            return rec;
        }
    };
    let d = decompose(&q);
    rec.mi = Some(malmquist(&q));
    rec.ec = Some(d.ec);
    rec.tc = Some(d.tc);
    rec.status = PairStatus::Ok;
    for p in 0..n_stages {
        let sq = ScoreQuadruple::new(
            tt.eval.stage_thetas[p],
            tt1.eval.stage_thetas[p],
            t1t.eval.stage_thetas[p],
            t1t1.eval.stage_thetas[p],
        );
        match sq {
            Ok(sq) => rec.stage_mi[p] = Some(malmquist(&sq)),
            Err(_) => rec.status = PairStatus::StageUndefined,
        }
    }
    rec
}

fn run_pair(
    panel: &Panel,
    spec: &NetworkSpec,
    t: i64,
    t1: i64,
    options: &FsiOptions,
) -> Result<PairOutput, MalmquistError> {
    let sub = panel.select_periods(&[t, t1])?;
    let mut to_shift = Vec::new();
    for c in spec.columns() {
        let col = sub.require(&c)?;
        if col.values.iter().flatten().any(|&v| v <= 0.0) {
            to_shift.push(c);
        }
    }
    let names: Vec<&str> = to_shift.iter().map(String::as_str).collect();
    let sub = shift_normalize(&sub, &names, options.shift_floor)?;
    let shifts = sub
        .provenance()
        .iter()
        .skip(panel.provenance().len())
        .map(|p| (t, t1, p.clone()))
        .collect();

    let scale = [t, t1];
    let eval = |data, frontier| match evaluate_period_scaled(spec, &sub, data, frontier, &scale, &options.dea) {
        Ok(r) => Ok(r),
        Err(DeaError::EmptyIntersection { .. }) => Ok(Vec::new()),
        Err(e) => Err(e),
    };
    let runs: Vec<Result<Vec<EfficiencyRecord>, DeaError>> = [(t, t), (t1, t), (t, t1), (t1, t1)]
        .par_iter()
        .map(|&(d, f)| eval(d, f))
        .collect();
    let mut runs = runs.into_iter().collect::<Result<Vec<_>, _>>()?;
    let t1_t1 = runs.pop().unwrap();
    let t1_t = runs.pop().unwrap();
    let t_t1 = runs.pop().unwrap();
    let t_t = runs.pop().unwrap();
    let (a, b, c, d) = (lookup(&t_t), lookup(&t_t1), lookup(&t1_t), lookup(&t1_t1));

    let records = panel
        .units()
        .iter()
        .map(|u| {
            let u = u.as_str();
            pair_record(
                u,
                t,
                t1,
                [a.get(u).copied(), b.get(u).copied(), c.get(u).copied(), d.get(u).copied()],
                spec.n_stages(),
            )
        })
        .collect();
    let mut efficiency = t_t;
    efficiency.extend(t_t1);
    efficiency.extend(t1_t);
    efficiency.extend(t1_t1);
    Ok(PairOutput {
        records,
        efficiency,
        shifts,
    })
}

/// Compute indices for every consecutive period pair and add them to the
/// panel at the later period. A panel with `T` periods yields `T - 1` index
/// years; the first period stays missing. Units not complete in both periods
/// of a pair get a `missing` record and no values.
pub fn fsi_panel(
    panel: &Panel,
    spec: &NetworkSpec,
    options: &FsiOptions,
) -> Result<FsiResult, MalmquistError> {
    if panel.n_periods() < 2 {
        return Err(MalmquistError::TooFewPeriods);
    }
    let pairs: Vec<(i64, i64)> = panel.periods().windows(2).map(|w| (w[0], w[1])).collect();
    let outputs: Vec<Result<PairOutput, MalmquistError>> = pairs
        .par_iter()
        .map(|&(t, t1)| run_pair(panel, spec, t, t1, options))
        .collect();

    let mut records = Vec::new();
    let mut efficiency = Vec::new();
    let mut shifts = Vec::new();
    for out in outputs {
        let out = out?;
        records.extend(out.records);
        efficiency.extend(out.efficiency);
        shifts.extend(out.shifts);
    }
    records.sort_by(|a, b| {
        let ua = panel.unit_index(&a.unit);
        let ub = panel.unit_index(&b.unit);
        ua.cmp(&ub).then(a.period_to.cmp(&b.period_to))
    });

    let n = panel.n_cells();
    let n_stages = spec.n_stages();
    let mut fsi = vec![None; n];
    let mut ec = vec![None; n];
    let mut tc = vec![None; n];
    let mut stage = vec![vec![None; n]; n_stages];
    for r in &records {
        let u = panel.unit_index(&r.unit).expect("unit");
        let p = panel.period_index(r.period_to).expect("period");
        let cell = panel.cell(u, p);
        fsi[cell] = r.mi;
        ec[cell] = r.ec;
        tc[cell] = r.tc;
        for (s, v) in r.stage_mi.iter().enumerate() {
            stage[s][cell] = *v;
        }
    }
    let mut out = panel.clone();
    out.set_column("FSI", VariableRole::RegressionDependent, fsi)?;
    out.set_column("EC", VariableRole::Attribute, ec)?;
    out.set_column("TC", VariableRole::Attribute, tc)?;
    for (p, values) in stage.into_iter().enumerate() {
        out.set_column(&format!("MI_{}", spec.stage_label(p)), VariableRole::Attribute, values)?;
    }
    Ok(FsiResult {
        panel: out,
        records,
        efficiency,
        shifts,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// CSV with `unit, period, FSI, EC, TC, MI_<stage>..., status`, one row per
/// unit-pair labelled at the later period.
pub fn write_fsi_csv<W: Write>(
    records: &[MalmquistRecord],
    spec: &NetworkSpec,
    writer: W,
) -> Result<(), MalmquistError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["unit".to_string(), "period".into()];
    header.extend(index_columns(spec));
    header.push("status".into());
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.unit.clone(), r.period_to.to_string(), opt(r.mi), opt(r.ec), opt(r.tc)];
        row.extend(r.stage_mi.iter().map(|v| opt(*v)));
        row.push(r.status.as_str().to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| MalmquistError::Csv(e.into()))?;
    Ok(())
}
