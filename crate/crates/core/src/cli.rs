//! Command-line orchestration: `validate`, `fsi`, `regress`, `simulate` and
//! `all`.
//!
//! Configuration is one JSON document (`--config`), every field of which can
//! be overridden by trailing `--dotted.key value` pairs. Values are parsed as
//! JSON when possible and taken as strings otherwise. Progress events go to
//! stderr as JSON lines; a short human summary goes to stdout.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::econ::{
    fit_2sls, fit_control_function, fit_json, fit_twfe, heterogeneity_split, mechanism_two_stage,
    write_table_csv, CfFit, EconError, InstrumentSet, IvDiagnostics, RegressionDesign,
    SplitCriterion, Table,
};
use crate::lp::SolveOptions;
use crate::malmquist::{fsi_panel, write_fsi_csv, FsiOptions, FsiResult, PairStatus};
use crate::netdea::{write_efficiency_csv, DeaOptions, NetworkSpec};
use crate::panel::{
    load_panel, validate_panel, write_panel, DictionaryEntry, IssueKind, Panel, PanelError,
    VariableDictionary, VariableRole, CONTROL_VARIABLES,
};
use crate::synth::{self, DgpConfig, STAGE3_EXTERNAL};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_ESTIMATION: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("validation: {0}")]
    Validation(String),
    #[error("solver failures on {failed} of {total} unit-pairs")]
    Solver { failed: usize, total: usize },
    #[error("estimation failed for: {}", .0.join(", "))]
    Estimation(Vec<String>),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Solver { .. } => EXIT_SOLVER,
            CliError::Estimation(_) => EXIT_ESTIMATION,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

impl From<PanelError> for CliError {
    fn from(e: PanelError) -> Self {
        match e {
            PanelError::Io { .. } => CliError::Config(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "fsindex", version, about = "Network DEA-Malmquist sustainability index and panel regressions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the panel against the network; writes validation.json.
    Validate(RunArgs),
    /// Solve the network programs and write the index panel.
    Fsi(RunArgs),
    /// Run the enabled regression tables (computes the index if absent).
    Regress(RunArgs),
    /// Write a synthetic panel with its ground truth.
    Simulate(RunArgs),
    /// validate, fsi and regress in sequence; simulates first when no panel
    /// path is configured.
    All(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON run configuration.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// `--dotted.key value` overrides, e.g. `--options.floor 1e-5`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub panel: Option<PathBuf>,
    pub network: Option<PathBuf>,
    pub dictionary: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            panel: None,
            network: None,
            dictionary: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Options {
    /// Lower bound on every DEA multiplier.
    pub floor: f64,
    /// Target min/max ratio of shifted non-positive DEA columns.
    pub shift_floor: f64,
    pub solver: SolveOptions,
    /// Replaces `simulate.seed` when set.
    pub seed: Option<u64>,
    /// Worker threads; 0 lets the runtime decide.
    pub threads: usize,
    /// Share of unit-pairs with solver failures above which `fsi` exits 3.
    pub max_failure_share: f64,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            floor: 1e-6,
            shift_floor: 0.1,
            solver: SolveOptions::default(),
            seed: None,
            threads: 0,
            max_failure_share: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    /// Stage-3 external input of the default network, used when no network
    /// file is given.
    pub stage3_external: String,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            stage3_external: STAGE3_EXTERNAL.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Analysis {
    pub baseline: bool,
    pub iv: bool,
    pub cf: bool,
    pub mechanism: bool,
    pub heterogeneity: bool,
}

impl Default for Analysis {
    fn default() -> Self {
        Self {
            baseline: true,
            iv: true,
            cf: true,
            mechanism: true,
            heterogeneity: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionSection {
    pub design: RegressionDesign,
    pub instruments: InstrumentSet,
    /// Channel columns for the mechanism table; empty means the network's
    /// stage index columns.
    pub channels: Vec<String>,
    pub heterogeneity: Vec<SplitCriterion>,
}

impl Default for RegressionSection {
    fn default() -> Self {
        Self {
            design: RegressionDesign::new("FSI", &["FTI"], &CONTROL_VARIABLES),
            instruments: InstrumentSet::new(true, &["IV2"]),
            channels: Vec::new(),
            heterogeneity: vec![
                SplitCriterion::AboveMedian {
                    column: "patents".into(),
                },
                SplitCriterion::Flag {
                    column: "listed".into(),
                },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub options: Options,
    pub network: NetworkSection,
    pub analysis: Analysis,
    pub regression: RegressionSection,
    pub simulate: DgpConfig,
}

impl RunConfig {
    /// Read the optional config file and apply overrides on top.
    pub fn resolve(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut doc = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| config_err(format!("cannot read `{}`: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| config_err(format!("`{}`: {e}", p.display())))?
            }
            None => json!({}),
        };
        for (key, value) in parse_overrides(overrides)? {
            set_dotted(&mut doc, &key, value)?;
        }
        serde_json::from_value(doc).map_err(config_err)
    }

    fn dea_options(&self) -> DeaOptions {
        DeaOptions {
            floor: self.options.floor,
            scale_columns: true,
            solve: self.options.solver,
        }
    }

    fn fsi_options(&self) -> FsiOptions {
        FsiOptions {
            dea: self.dea_options(),
            shift_floor: self.options.shift_floor,
        }
    }

    fn dgp(&self) -> DgpConfig {
        let mut cfg = self.simulate.clone();
        if let Some(seed) = self.options.seed {
            cfg.seed = seed;
        }
        cfg
    }
}

fn parse_overrides(args: &[String]) -> Result<Vec<(String, Value)>, CliError> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let key = arg
            .strip_prefix("--")
            .ok_or_else(|| config_err(format!("expected `--key value`, got `{arg}`")))?;
        let (key, raw) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| config_err(format!("override `--{key}` has no value")))?;
                (key.to_string(), v.clone())
            }
        };
        if key.is_empty() {
            return Err(config_err("empty override key"));
        }
        let value = serde_json::from_str(&raw).unwrap_or(Value::String(raw));
        out.push((key, value));
    }
    Ok(out)
}

fn set_dotted(doc: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = doc;
    for part in &parts[..parts.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| config_err(format!("`{key}`: `{part}` is not inside an object")))?;
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| config_err(format!("`{key}` does not name an object field")))?;
    obj.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn event(name: &str, fields: Value) {
    let mut obj = Map::new();
    obj.insert("event".into(), name.into());
    if let Value::Object(f) = fields {
        obj.extend(f);
    }
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{}", Value::Object(obj));
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| config_err(format!("cannot create `{}`: {e}", dir.display())))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| config_err(format!("cannot write `{}`: {e}", path.display())))
}

fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("json serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| config_err(format!("cannot write `{}`: {e}", path.display())))
}

fn load_network(cfg: &RunConfig) -> Result<NetworkSpec, CliError> {
    match &cfg.paths.network {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| config_err(format!("cannot read `{}`: {e}", p.display())))?;
            NetworkSpec::from_json_str(&text).map_err(config_err)
        }
        None => NetworkSpec::bank_default(&cfg.network.stage3_external).map_err(config_err),
    }
}

fn load_dictionary(cfg: &RunConfig) -> Result<VariableDictionary, CliError> {
    match &cfg.paths.dictionary {
        Some(p) => {
            if !p.exists() {
                return Err(config_err(format!("dictionary `{}` not found", p.display())));
            }
            VariableDictionary::from_json_file(p).map_err(config_err)
        }
        None => Ok(VariableDictionary::bank_default().with(
            &cfg.network.stage3_external,
            DictionaryEntry::new(VariableRole::ExternalInput, "Stage-3 external input"),
        )),
    }
}

struct Inputs {
    panel: Panel,
    spec: NetworkSpec,
}

fn load_inputs(cfg: &RunConfig) -> Result<Inputs, CliError> {
    let spec = load_network(cfg)?;
    let dict = load_dictionary(cfg)?;
    let path = cfg
        .paths
        .panel
        .as_ref()
        .ok_or_else(|| config_err("paths.panel is not set"))?;
    if !path.exists() {
        return Err(config_err(format!("panel `{}` not found", path.display())));
    }
    let panel = load_panel(path, &dict)?;
    event(
        "panel_loaded",
        json!({"path": path.display().to_string(), "units": panel.n_units(), "periods": panel.n_periods(), "columns": panel.column_names().len()}),
    );
    Ok(Inputs { panel, spec })
}

/// Write validation.json; returns whether the panel is DEA-ready and
/// whether the network columns exist with the right roles.
fn run_validation(cfg: &RunConfig, inputs: &Inputs) -> Result<(bool, bool), CliError> {
    let report = validate_panel(&inputs.panel, &inputs.spec);
    create_dir(&cfg.paths.output_dir)?;
    write_json(&cfg.paths.output_dir.join("validation.json"), &report.to_json())?;
    let counts = report.to_json()["counts"].clone();
    event("validated", json!({"dea_ready": report.is_dea_ready(), "counts": counts}));
    for issue in report.issues.iter().filter(|i| i.kind == IssueKind::NonPositiveDea).take(20) {
        event("non_positive_cell", serde_json::to_value(issue).unwrap());
    }
    Ok((report.is_dea_ready(), report.count(IssueKind::SpecColumn) == 0))
}

pub fn cmd_validate(cfg: &RunConfig) -> Result<(), CliError> {
    let inputs = load_inputs(cfg)?;
    let (ready, _) = run_validation(cfg, &inputs)?;
    println!(
        "validate: {} units x {} periods, {}",
        inputs.panel.n_units(),
        inputs.panel.n_periods(),
        if ready { "DEA-ready" } else { "NOT DEA-ready (see validation.json)" }
    );
    if ready {
        Ok(())
    } else {
        Err(CliError::Validation("panel is not DEA-ready".into()))
    }
}

fn compute_fsi(cfg: &RunConfig, inputs: &Inputs) -> Result<FsiResult, CliError> {
    let (_, columns_ok) = run_validation(cfg, inputs)?;
    if !columns_ok {
        return Err(CliError::Validation(
            "network columns missing or mis-typed (see validation.json)".into(),
        ));
    }
    let res = fsi_panel(&inputs.panel, &inputs.spec, &cfg.fsi_options()).map_err(|e| CliError::Validation(e.to_string()))?;
    let dir = &cfg.paths.output_dir;
    write_fsi_csv(&res.records, &inputs.spec, create(&dir.join("fsi.csv"))?).map_err(config_err)?;
    write_efficiency_csv(&res.efficiency, inputs.spec.n_stages(), create(&dir.join("efficiency.csv"))?)
        .map_err(config_err)?;
    write_panel(&res.panel, &dir.join("fsi_panel.csv"))?;

    let mut lp_counts = Map::new();
    for r in &res.efficiency {
        let key = r.eval.status.to_string();
        let n = lp_counts.get(&key).and_then(Value::as_u64).unwrap_or(0);
        lp_counts.insert(key, (n + 1).into());
    }
    let mut pair_counts = Map::new();
    for s in [
        PairStatus::Ok,
        PairStatus::Unbounded,
        PairStatus::SolverFailure,
        PairStatus::StageUndefined,
        PairStatus::Missing,
    ] {
        pair_counts.insert(s.as_str().into(), res.count(s).into());
    }
    for (t, t1, prov) in &res.shifts {
        event(
            "positivity_shift",
            json!({"pair": [t, t1], "column": prov.column, "shift": prov.shift, "floor": prov.floor}),
        );
    }
    event("fsi_solved", json!({"programs": res.efficiency.len(), "lp_status": lp_counts, "pair_status": pair_counts}));
    let total = res.records.len();
    let failed = res.count(PairStatus::SolverFailure);
    println!(
        "fsi: {} unit-pairs, {} ok, {} unbounded, {} stage-undefined, {} solver failures",
        total,
        res.count(PairStatus::Ok),
        res.count(PairStatus::Unbounded),
        res.count(PairStatus::StageUndefined),
        failed
    );
    if total > 0 && failed as f64 > cfg.options.max_failure_share * total as f64 {
        return Err(CliError::Solver { failed, total });
    }
    Ok(res)
}

pub fn cmd_fsi(cfg: &RunConfig) -> Result<(), CliError> {
    let inputs = load_inputs(cfg)?;
    compute_fsi(cfg, &inputs).map(|_| ())
}

fn num(v: f64, digits: usize) -> String {
    if v.is_finite() {
        format!("{v:.digits$}")
    } else {
        String::new()
    }
}

fn diagnostics_json(d: &IvDiagnostics) -> Value {
    serde_json::to_value(d).expect("diagnostics serialize")
}

fn baseline_table(panel: &Panel, design: &RegressionDesign) -> Result<(Table, Value), EconError> {
    let bare = RegressionDesign {
        controls: Vec::new(),
        ..design.clone()
    };
    let a = fit_twfe(&bare, panel)?;
    let b = fit_twfe(design, panel)?;
    let json = json!({"(1)": fit_json(&a), "(2)": fit_json(&b)});
    Ok((Table::new().column("(1)", a).column("(2)", b), json))
}

fn iv_table(panel: &Panel, design: &RegressionDesign, inst: &InstrumentSet) -> Result<(Table, Value), EconError> {
    let iv = fit_2sls(design, inst, panel)?;
    let d = &iv.diagnostics;
    let json = json!({
        "first_stage": fit_json(&iv.first_stage),
        "2sls": fit_json(&iv.fit),
        "diagnostics": diagnostics_json(d),
    });
    let sy = d.stock_yogo_10pct.map(|c| num(c, 2)).unwrap_or_default();
    let table = Table::new()
        .column("First stage", iv.first_stage)
        .column("2SLS", iv.fit)
        .row("KP rk LM", vec![String::new(), num(d.kp_rk_lm.stat, 3)])
        .row("KP rk LM p", vec![String::new(), num(d.kp_rk_lm.p, 4)])
        .row("CD Wald F", vec![String::new(), num(d.cragg_donald_f, 3)])
        .row("KP rk Wald F", vec![String::new(), num(d.kp_rk_wald_f, 3)])
        .row("Stock-Yogo 10%", vec![String::new(), sy])
        .row("Hansen J", vec![String::new(), num(d.hansen_j.stat, 3)])
        .row("Hansen J p", vec![String::new(), num(d.hansen_j.p, 4)]);
    Ok((table, json))
}

fn cf_table(panel: &Panel, design: &RegressionDesign, inst: &InstrumentSet) -> Result<(Table, Value), EconError> {
    let cf = fit_control_function(design, inst, panel)?;
    let json = json!({
        "first_stage": fit_json(&cf.first_stage),
        "cf": fit_json(&cf.fit),
        "lambda": {"coef": cf.lambda(), "t": cf.lambda_t(), "p": cf.lambda_p()},
    });
    let lambda = format!("{:.3} (t = {:.2})", cf.lambda(), cf.lambda_t());
    let table = Table::new()
        .column("First stage", cf.first_stage.clone())
        .column("CF", cf.fit.clone())
        .row(&format!("lambda ({})", CfFit::RESIDUAL), vec![String::new(), lambda]);
    Ok((table, json))
}

fn mechanism_table(panel: &Panel, design: &RegressionDesign, channels: &[String]) -> Result<(Table, Value), EconError> {
    let mut table = Table::new();
    let mut json = Map::new();
    for ch in channels {
        let m = mechanism_two_stage(panel, design, ch)?;
        json.insert(ch.clone(), json!({"first": fit_json(&m.first), "second": fit_json(&m.second)}));
        table = table
            .column(ch, m.first)
            .column(&format!("{} on {}", design.dependent, ch), m.second);
    }
    Ok((table, Value::Object(json)))
}

fn split_labels(c: &SplitCriterion) -> (String, String) {
    match c {
        SplitCriterion::AboveMedian { column } => (format!("{column} high"), format!("{column} low")),
        SplitCriterion::Flag { column } => (format!("{column}=1"), format!("{column}=0")),
    }
}

fn heterogeneity_table(
    panel: &Panel,
    design: &RegressionDesign,
    criteria: &[SplitCriterion],
) -> Result<(Table, Value), EconError> {
    let mut table = Table::new();
    let mut json = Map::new();
    for c in criteria {
        let h = heterogeneity_split(panel, design, c)?;
        let (la, lb) = split_labels(c);
        json.insert(la.clone(), fit_json(&h.a));
        json.insert(lb.clone(), fit_json(&h.b));
        table = table.column(&la, h.a).column(&lb, h.b);
    }
    Ok((table, Value::Object(json)))
}

fn has_values(panel: &Panel, column: &str) -> bool {
    panel
        .column(column)
        .is_some_and(|c| c.values.iter().any(Option::is_some))
}

fn regress_on(cfg: &RunConfig, panel: &Panel, spec: &NetworkSpec) -> Result<(), CliError> {
    let r = &cfg.regression;
    let design = &r.design;
    let channels: Vec<String> = if r.channels.is_empty() {
        (0..spec.n_stages()).map(|p| format!("MI_{}", spec.stage_label(p))).collect()
    } else {
        r.channels.clone()
    };
    type Job<'a> = (&'a str, bool, Box<dyn Fn() -> Result<(Table, Value), EconError> + 'a>);
    let jobs: Vec<Job> = vec![
        ("baseline", cfg.analysis.baseline, Box::new(|| baseline_table(panel, design))),
        ("iv", cfg.analysis.iv, Box::new(|| iv_table(panel, design, &r.instruments))),
        ("cf", cfg.analysis.cf, Box::new(|| cf_table(panel, design, &r.instruments))),
        ("mechanism", cfg.analysis.mechanism, Box::new(|| mechanism_table(panel, design, &channels))),
        (
            "heterogeneity",
            cfg.analysis.heterogeneity,
            Box::new(|| heterogeneity_table(panel, design, &r.heterogeneity)),
        ),
    ];
    let dir = &cfg.paths.output_dir;
    let mut sidecar = Map::new();
    let mut failed = Vec::new();
    for (name, enabled, job) in jobs {
        if !enabled {
            continue;
        }
        match job() {
            Ok((table, json)) => {
                let path = dir.join(format!("table_{name}.csv"));
                write_table_csv(&table, create(&path)?).map_err(config_err)?;
                sidecar.insert(name.into(), json);
                event("table_written", json!({"table": name, "path": path.display().to_string()}));
                println!("regress: {name} -> {}", path.display());
            }
            Err(e) => {
                event("table_failed", json!({"table": name, "error": e.to_string()}));
                println!("regress: {name} FAILED: {e}");
                sidecar.insert(name.into(), json!({"error": e.to_string()}));
                failed.push(name.to_string());
            }
        }
    }
    write_json(&dir.join("regress.json"), &Value::Object(sidecar))?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Estimation(failed))
    }
}

pub fn cmd_regress(cfg: &RunConfig) -> Result<(), CliError> {
    let inputs = load_inputs(cfg)?;
    create_dir(&cfg.paths.output_dir)?;
    let dependent = &cfg.regression.design.dependent;
    if has_values(&inputs.panel, dependent) {
        regress_on(cfg, &inputs.panel, &inputs.spec)
    } else {
        event("fsi_implicit", json!({"reason": format!("`{dependent}` absent")}));
        let res = compute_fsi(cfg, &inputs)?;
        regress_on(cfg, &res.panel, &inputs.spec)
    }
}

/// Write panel.csv, truth.json, dictionary.json and network.json; returns
/// the config pointed at the written files.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<RunConfig, CliError> {
    let dgp = cfg.dgp();
    let syn = synth::generate(&dgp).map_err(config_err)?;
    let dir = &cfg.paths.output_dir;
    create_dir(dir)?;
    let paths = Paths {
        panel: Some(dir.join("panel.csv")),
        network: Some(dir.join("network.json")),
        dictionary: Some(dir.join("dictionary.json")),
        output_dir: dir.clone(),
    };
    write_panel(&syn.panel, paths.panel.as_ref().unwrap())?;
    write_json(&dir.join("truth.json"), &serde_json::to_value(&syn.truth).unwrap())?;
    let dict = VariableDictionary::identity_for(&syn.panel);
    fs::write(paths.dictionary.as_ref().unwrap(), dict.to_json_string()).map_err(config_err)?;
    let mut net = synth::network().to_json_string();
    net.push('\n');
    fs::write(paths.network.as_ref().unwrap(), net).map_err(config_err)?;
    event("simulated", json!({"seed": dgp.seed, "units": dgp.n_units, "periods": dgp.n_periods}));
    println!(
        "simulate: {} units x {} periods (seed {}) -> {}",
        dgp.n_units,
        dgp.n_periods,
        dgp.seed,
        dir.display()
    );
    Ok(RunConfig { paths, ..cfg.clone() })
}

pub fn cmd_all(cfg: &RunConfig) -> Result<(), CliError> {
    let cfg = if cfg.paths.panel.is_none() {
        cmd_simulate(cfg)?
    } else {
        cfg.clone()
    };
    let inputs = load_inputs(&cfg)?;
    let res = compute_fsi(&cfg, &inputs)?;
    regress_on(&cfg, &res.panel, &inputs.spec)
}

fn set_threads(n: usize) {
    if n > 0 {
        // Fails harmlessly when a pool already exists in this process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// Parse `args` (program name first), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let (name, run_args) = match &cli.command {
        Command::Validate(a) => ("validate", a),
        Command::Fsi(a) => ("fsi", a),
        Command::Regress(a) => ("regress", a),
        Command::Simulate(a) => ("simulate", a),
        Command::All(a) => ("all", a),
    };
    let result = RunConfig::resolve(run_args.config.as_deref(), &run_args.overrides).and_then(|cfg| {
        set_threads(cfg.options.threads);
        event("start", json!({"command": name}));
        match &cli.command {
            Command::Validate(_) => cmd_validate(&cfg),
            Command::Fsi(_) => cmd_fsi(&cfg),
            Command::Regress(_) => cmd_regress(&cfg),
            Command::Simulate(_) => cmd_simulate(&cfg).map(|_| ()),
            Command::All(_) => cmd_all(&cfg),
        }
    });
    match result {
        Ok(()) => {
            event("done", json!({"command": name, "exit": EXIT_OK}));
            EXIT_OK
        }
        Err(e) => {
            let code = e.exit_code();
            event("error", json!({"command": name, "exit": code, "message": e.to_string()}));
            eprintln!("error: {e}");
            code
        }
    }
}
