//! Bank-year panel storage, CSV ingestion, validation and positivity shifts.
//!
//! A [`Panel`] is a rectangular `unit × period` grid. Each named column holds
//! one `Option<f64>` per cell; `None` is an explicitly masked missing value.
//! Nothing is ever imputed.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netdea::NetworkSpec;

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("cannot open `{path}`: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed delimited text: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed dictionary: {0}")]
    Json(#[from] serde_json::Error),
    #[error("missing mandatory column `{0}`")]
    MissingColumn(String),
    #[error("cannot parse `{value}` as a number at line {line}, column `{column}`")]
    Parse {
        line: u64,
        column: String,
        value: String,
    },
    #[error("duplicate key (unit `{unit}`, period {period}) at line {line}")]
    DuplicateKey { unit: String, period: i64, line: u64 },
    #[error("transform `{transform}` undefined for {value} (unit `{unit}`, period {period}, column `{column}`)")]
    TransformDomain {
        transform: &'static str,
        value: f64,
        unit: String,
        period: i64,
        column: String,
    },
    #[error("column `{0}` is constant over the pooled set")]
    DegenerateColumn(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("column `{0}` already exists")]
    DuplicateColumn(String),
    #[error("floor {0} must lie strictly between 0 and 1")]
    InvalidFloor(f64),
    #[error("column `{column}` has {got} cells, grid has {expected}")]
    Shape {
        column: String,
        got: usize,
        expected: usize,
    },
    #[error("non-finite value in column `{column}` (unit `{unit}`, period {period})")]
    NonFinite {
        column: String,
        unit: String,
        period: i64,
    },
    #[error("period labels must be strictly increasing")]
    UnorderedPeriods,
    #[error("unknown period {0}")]
    UnknownPeriod(i64),
}

/// What a column means to the pipeline. Every panel column has exactly one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariableRole {
    InitialInput,
    FinalOutput,
    IntermediateOutput,
    ExternalInput,
    RegressionDependent,
    RegressionExplanatory,
    RegressionControl,
    Instrument,
    Attribute,
    Identifier,
}

impl VariableRole {
    pub fn is_dea(self) -> bool {
        matches!(
            self,
            Self::InitialInput | Self::FinalOutput | Self::IntermediateOutput | Self::ExternalInput
        )
    }

    pub fn is_regression(self) -> bool {
        matches!(
            self,
            Self::RegressionDependent
                | Self::RegressionExplanatory
                | Self::RegressionControl
                | Self::Instrument
        )
    }

    pub fn is_output(self) -> bool {
        matches!(self, Self::FinalOutput | Self::IntermediateOutput)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Transform {
    #[default]
    None,
    Log,
    DivideBy100,
    Ratio {
        numerator: String,
        denominator: String,
    },
}

impl Transform {
    fn label(&self) -> &'static str {
        match self {
            Transform::None => "none",
            Transform::Log => "log",
            Transform::DivideBy100 => "divide-by-100",
            Transform::Ratio { .. } => "ratio",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictionaryEntry {
    pub role: VariableRole,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub transform: Transform,
    /// Raw CSV column to read; defaults to the entry name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    /// Optional columns may be absent from the file.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub optional: bool,
}

impl DictionaryEntry {
    pub fn new(role: VariableRole, description: &str) -> Self {
        Self {
            role,
            description: description.to_string(),
            transform: Transform::None,
            source: None,
            optional: false,
        }
    }

    pub fn with_transform(mut self, transform: Transform) -> Self {
        self.transform = transform;
        self
    }

    pub fn optional(mut self) -> Self {
        self.optional = true;
        self
    }
}

/// Ordered mapping from column name to its role and load-time transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct VariableDictionary {
    pub columns: Vec<(String, DictionaryEntry)>,
}

/// The regression variables of the baseline fixed-effects model.
pub const REGRESSION_VARIABLES: [&str; 11] = [
    "FSI", "FTI", "GDP_g", "FDL", "LDR", "NIIR", "ROA", "DAR", "TAS", "OEX", "CAR",
];

/// Control variables of the baseline model, macro first.
pub const CONTROL_VARIABLES: [&str; 9] = [
    "GDP_g", "FDL", "LDR", "NIIR", "ROA", "DAR", "TAS", "OEX", "CAR",
];

impl VariableDictionary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, entry: DictionaryEntry) {
        if let Some(slot) = self.columns.iter_mut().find(|(n, _)| n == name) {
            slot.1 = entry;
        } else {
            self.columns.push((name.to_string(), entry));
        }
    }

    pub fn with(mut self, name: &str, entry: DictionaryEntry) -> Self {
        self.insert(name, entry);
        self
    }

    pub fn get(&self, name: &str) -> Option<&DictionaryEntry> {
        self.columns.iter().find(|(n, _)| n == name).map(|(_, e)| e)
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn from_json_str(s: &str) -> Result<Self, PanelError> {
        let map: serde_json::Map<String, serde_json::Value> = serde_json::from_str(s)?;
        let mut dict = Self::new();
        for (name, value) in map {
            let entry: DictionaryEntry = serde_json::from_value(value)?;
            dict.columns.push((name, entry));
        }
        Ok(dict)
    }

    pub fn from_json_file(path: &Path) -> Result<Self, PanelError> {
        let text = std::fs::read_to_string(path).map_err(|source| PanelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    /// JSON object keyed by column name, in dictionary order.
    pub fn to_json_string(&self) -> String {
        let mut out = String::from("{\n");
        for (i, (name, entry)) in self.columns.iter().enumerate() {
            let body = serde_json::to_string(entry).expect("entry serializes");
            out.push_str(&format!(
                "  {}: {}{}\n",
                serde_json::to_string(name).expect("name serializes"),
                body,
                if i + 1 < self.columns.len() { "," } else { "" }
            ));
        }
        out.push('}');
        out.push('\n');
        out
    }

    /// Identity dictionary reproducing a panel's columns and roles.
    pub fn identity_for(panel: &Panel) -> Self {
        let mut dict = Self::new();
        for (name, col) in panel.columns() {
            dict.insert(name, DictionaryEntry::new(col.role, ""));
        }
        dict
    }

    /// The regression variables of the baseline model plus the default
    /// three-stage network columns (the stage-3 external input has no
    /// default and must be added by the caller).
    pub fn bank_default() -> Self {
        use VariableRole::*;
        let e = DictionaryEntry::new;
        Self::new()
            .with(
                "FSI",
                e(RegressionDependent, "Financial sustainability index from the network DEA-Malmquist model").optional(),
            )
            .with(
                "FTI",
                e(RegressionExplanatory, "Digital financial inclusion index divided by 100")
                    .with_transform(Transform::DivideBy100),
            )
            .with("GDP_g", e(RegressionControl, "Prefecture-level GDP growth rate"))
            .with("FDL", e(RegressionControl, "Total deposits and loans over local GDP"))
            .with("LDR", e(RegressionControl, "Total loans over total deposits"))
            .with("NIIR", e(RegressionControl, "Non-interest income over operating income"))
            .with("ROA", e(RegressionControl, "Net profit over total assets"))
            .with("DAR", e(RegressionControl, "Total liabilities over total assets"))
            .with(
                "TAS",
                e(RegressionControl, "Natural logarithm of year-end total assets")
                    .with_transform(Transform::Log),
            )
            .with(
                "OEX",
                e(RegressionControl, "Natural logarithm of year-end operating expenses")
                    .with_transform(Transform::Log),
            )
            .with("CAR", e(RegressionControl, "Eligible capital over risk-weighted assets"))
            .with("IV2", e(Instrument, "Log distance-weighted regional index spillover").optional())
            .with("salary_per_employee", e(InitialInput, "Salary per employee"))
            .with("capex", e(InitialInput, "Capital expenditures"))
            .with("equity", e(InitialInput, "Shareholders' equity"))
            .with("roe", e(FinalOutput, "Return on equity"))
            .with("deposits", e(IntermediateOutput, "Total deposits"))
            .with("operating_cash", e(IntermediateOutput, "Cash from operations"))
            .with("total_assets", e(ExternalInput, "Total assets"))
            .with("return_on_assets", e(FinalOutput, "Return on assets"))
            .with("net_loans", e(IntermediateOutput, "Net loans"))
            .with("net_interest_income", e(IntermediateOutput, "Net interest income"))
            .with("revenue_per_employee", e(FinalOutput, "Revenue per employee"))
            .with("total_revenue", e(FinalOutput, "Total revenue"))
            .with("net_profit_margin", e(FinalOutput, "Net profit margin"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub role: VariableRole,
    pub values: Vec<Option<f64>>,
}

/// Record of a value-changing operation applied after load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub operation: String,
    pub column: String,
    pub shift: f64,
    pub floor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    units: Vec<String>,
    periods: Vec<i64>,
    columns: Vec<(String, Column)>,
    provenance: Vec<Provenance>,
}

impl Panel {
    pub fn new(units: Vec<String>, periods: Vec<i64>) -> Result<Self, PanelError> {
        if periods.windows(2).any(|w| w[0] >= w[1]) {
            return Err(PanelError::UnorderedPeriods);
        }
        Ok(Self {
            units,
            periods,
            columns: Vec::new(),
            provenance: Vec::new(),
        })
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn periods(&self) -> &[i64] {
        &self.periods
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn n_periods(&self) -> usize {
        self.periods.len()
    }

    pub fn n_cells(&self) -> usize {
        self.units.len() * self.periods.len()
    }

    /// Row-major index of a grid cell: units vary slowest.
    pub fn cell(&self, unit: usize, period: usize) -> usize {
        unit * self.periods.len() + period
    }

    pub fn period_index(&self, period: i64) -> Option<usize> {
        self.periods.binary_search(&period).ok()
    }

    pub fn unit_index(&self, unit: &str) -> Option<usize> {
        self.units.iter().position(|u| u == unit)
    }

    pub fn columns(&self) -> impl Iterator<Item = (&str, &Column)> {
        self.columns.iter().map(|(n, c)| (n.as_str(), c))
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|(n, _)| n == name).map(|(_, c)| c)
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.column(name).is_some()
    }

    pub fn require(&self, name: &str) -> Result<&Column, PanelError> {
        self.column(name)
            .ok_or_else(|| PanelError::UnknownColumn(name.to_string()))
    }

    pub fn get(&self, name: &str, unit: usize, period: usize) -> Option<f64> {
        self.column(name)
            .and_then(|c| c.values[self.cell(unit, period)])
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    /// Add a column, or replace an existing one of the same name.
    pub fn set_column(
        &mut self,
        name: &str,
        role: VariableRole,
        values: Vec<Option<f64>>,
    ) -> Result<(), PanelError> {
        if values.len() != self.n_cells() {
            return Err(PanelError::Shape {
                column: name.to_string(),
                got: values.len(),
                expected: self.n_cells(),
            });
        }
        for (idx, v) in values.iter().enumerate() {
            if let Some(x) = v {
                if !x.is_finite() {
                    return Err(PanelError::NonFinite {
                        column: name.to_string(),
                        unit: self.units[idx / self.n_periods()].clone(),
                        period: self.periods[idx % self.n_periods()],
                    });
                }
            }
        }
        let col = Column { role, values };
        match self.columns.iter_mut().find(|(n, _)| n == name) {
            Some(slot) => slot.1 = col,
            None => self.columns.push((name.to_string(), col)),
        }
        Ok(())
    }

    pub fn with_column(
        mut self,
        name: &str,
        role: VariableRole,
        values: Vec<Option<f64>>,
    ) -> Result<Self, PanelError> {
        self.set_column(name, role, values)?;
        Ok(self)
    }

    /// Sub-panel restricted to the listed periods (kept in ascending order).
    pub fn select_periods(&self, periods: &[i64]) -> Result<Panel, PanelError> {
        let mut keep: Vec<i64> = periods.to_vec();
        keep.sort_unstable();
        keep.dedup();
        let idx: Vec<usize> = keep
            .iter()
            .map(|p| self.period_index(*p).ok_or(PanelError::UnknownPeriod(*p)))
            .collect::<Result<_, _>>()?;
        let mut out = Panel::new(self.units.clone(), keep)?;
        for (name, col) in &self.columns {
            let mut values = Vec::with_capacity(out.n_cells());
            for u in 0..self.n_units() {
                for &p in &idx {
                    values.push(col.values[self.cell(u, p)]);
                }
            }
            out.columns.push((
                name.clone(),
                Column {
                    role: col.role,
                    values,
                },
            ));
        }
        out.provenance = self.provenance.clone();
        Ok(out)
    }

    /// Within-unit one-period lag over the period grid; the first period is missing.
    pub fn lagged(&self, column: &str) -> Result<Vec<Option<f64>>, PanelError> {
        let col = self.require(column)?;
        let t = self.n_periods();
        let mut out = vec![None; self.n_cells()];
        for u in 0..self.n_units() {
            for p in 1..t {
                out[self.cell(u, p)] = col.values[self.cell(u, p - 1)];
            }
        }
        Ok(out)
    }

    /// Cells of a column flattened in grid order, `NaN` where missing.
    pub fn dense(&self, column: &str) -> Result<Vec<f64>, PanelError> {
        Ok(self
            .require(column)?
            .values
            .iter()
            .map(|v| v.unwrap_or(f64::NAN))
            .collect())
    }
}

fn io_err(path: &Path, source: std::io::Error) -> PanelError {
    PanelError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_cell(raw: &str) -> Option<&str> {
    let t = raw.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan") {
        None
    } else {
        Some(t)
    }
}

/// Load a comma-separated panel and apply the dictionary's transforms.
///
/// The header must contain `unit` and `period`. Columns not named by the
/// dictionary are ignored. Missing cells (empty, `NA`, `NaN`) and grid cells
/// with no row in the file are masked.
pub fn load_panel(path: &Path, dictionary: &VariableDictionary) -> Result<Panel, PanelError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    read_panel(file, dictionary)
}

pub fn read_panel<R: std::io::Read>(
    reader: R,
    dictionary: &VariableDictionary,
) -> Result<Panel, PanelError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let position = |name: &str| headers.iter().position(|h| h == name);
    let unit_col = position("unit").ok_or_else(|| PanelError::MissingColumn("unit".into()))?;
    let period_col =
        position("period").ok_or_else(|| PanelError::MissingColumn("period".into()))?;

    // Raw columns needed by the dictionary.
    let mut raw_needed: Vec<String> = Vec::new();
    let mut active: Vec<&(String, DictionaryEntry)> = Vec::new();
    for pair in &dictionary.columns {
        let (name, entry) = pair;
        let sources: Vec<String> = match &entry.transform {
            Transform::Ratio {
                numerator,
                denominator,
            } => vec![numerator.clone(), denominator.clone()],
            _ => vec![entry.source.clone().unwrap_or_else(|| name.clone())],
        };
        let missing: Vec<&String> = sources.iter().filter(|s| position(s).is_none()).collect();
        if let Some(first) = missing.first() {
            if entry.optional {
                continue;
            }
            return Err(PanelError::MissingColumn((*first).clone()));
        }
        for s in sources {
            if !raw_needed.contains(&s) {
                raw_needed.push(s);
            }
        }
        active.push(pair);
    }
    let raw_pos: Vec<usize> = raw_needed.iter().map(|s| position(s).unwrap()).collect();

    struct Row {
        unit: String,
        period: i64,
        values: Vec<Option<f64>>,
    }
    let mut rows = Vec::new();
    let mut seen: HashMap<(String, i64), u64> = HashMap::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let unit = record.get(unit_col).unwrap_or("").to_string();
        let period_raw = record.get(period_col).unwrap_or("");
        let period: i64 = period_raw.trim().parse().map_err(|_| PanelError::Parse {
            line,
            column: "period".into(),
            value: period_raw.to_string(),
        })?;
        if seen.insert((unit.clone(), period), line).is_some() {
            return Err(PanelError::DuplicateKey { unit, period, line });
        }
        let mut values = Vec::with_capacity(raw_pos.len());
        for (k, &pos) in raw_pos.iter().enumerate() {
            let raw = record.get(pos).unwrap_or("");
            let v = match parse_cell(raw) {
                None => None,
                Some(text) => {
                    let x: f64 = text.parse().map_err(|_| PanelError::Parse {
                        line,
                        column: raw_needed[k].clone(),
                        value: raw.to_string(),
                    })?;
                    if !x.is_finite() {
                        return Err(PanelError::Parse {
                            line,
                            column: raw_needed[k].clone(),
                            value: raw.to_string(),
                        });
                    }
                    Some(x)
                }
            };
            values.push(v);
        }
        rows.push(Row {
            unit,
            period,
            values,
        });
    }

    let mut units: Vec<String> = rows.iter().map(|r| r.unit.clone()).collect();
    units.sort();
    units.dedup();
    let mut periods: Vec<i64> = rows.iter().map(|r| r.period).collect();
    periods.sort_unstable();
    periods.dedup();
    let mut panel = Panel::new(units, periods)?;
    let unit_ix: HashMap<&str, usize> = panel
        .units
        .iter()
        .enumerate()
        .map(|(i, u)| (u.as_str(), i))
        .collect();

    let n_cells = panel.n_cells();
    let mut raw_grid: Vec<Vec<Option<f64>>> = vec![vec![None; n_cells]; raw_needed.len()];
    for row in &rows {
        let cell = panel.cell(unit_ix[row.unit.as_str()], panel.period_index(row.period).unwrap());
        for (k, v) in row.values.iter().enumerate() {
            raw_grid[k][cell] = *v;
        }
    }
    let raw_of = |name: &str| -> &Vec<Option<f64>> {
        &raw_grid[raw_needed.iter().position(|s| s == name).unwrap()]
    };

    for (name, entry) in active {
        let mut out = vec![None; n_cells];
        for (cell, slot) in out.iter_mut().enumerate() {
            let domain = |value: f64| PanelError::TransformDomain {
                transform: entry.transform.label(),
                value,
                unit: panel.units[cell / panel.n_periods()].clone(),
                period: panel.periods[cell % panel.n_periods()],
                column: name.clone(),
            };
            *slot = match &entry.transform {
                Transform::None => raw_of(entry.source.as_deref().unwrap_or(name))[cell],
                Transform::DivideBy100 => {
                    raw_of(entry.source.as_deref().unwrap_or(name))[cell].map(|x| x / 100.0)
                }
                Transform::Log => match raw_of(entry.source.as_deref().unwrap_or(name))[cell] {
                    None => None,
                    Some(x) if x > 0.0 => Some(x.ln()),
                    Some(x) => return Err(domain(x)),
                },
                Transform::Ratio {
                    numerator,
                    denominator,
                } => match (raw_of(numerator)[cell], raw_of(denominator)[cell]) {
                    (Some(a), Some(b)) if b != 0.0 => Some(a / b),
                    (Some(_), Some(b)) => return Err(domain(b)),
                    _ => None,
                },
            };
        }
        panel.set_column(name, entry.role, out)?;
    }
    Ok(panel)
}

fn format_value(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => String::new(),
    }
}

/// Write the full grid in the panel dialect. Numbers use the shortest
/// representation that parses back to the same `f64`.
pub fn write_panel_to<W: Write>(panel: &Panel, writer: W) -> Result<(), PanelError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["unit".to_string(), "period".to_string()];
    header.extend(panel.column_names().iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for (u, unit) in panel.units().iter().enumerate() {
        for (p, period) in panel.periods().iter().enumerate() {
            let mut rec = vec![unit.clone(), period.to_string()];
            for (_, col) in panel.columns() {
                rec.push(format_value(col.values[panel.cell(u, p)]));
            }
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| PanelError::Io {
        path: "<writer>".into(),
        source: e,
    })?;
    Ok(())
}

pub fn write_panel(panel: &Panel, path: &Path) -> Result<(), PanelError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    write_panel_to(panel, std::io::BufWriter::new(file))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "kebab-case")]
pub enum IssueKind {
    /// A column named by the network is absent or has the wrong role.
    SpecColumn,
    MissingDea,
    NonPositiveDea,
    /// Unit-period excluded from DEA evaluation because of a missing DEA cell.
    DroppedFromDea,
    MissingRegression,
}

impl IssueKind {
    pub fn is_dea_side(self) -> bool {
        !matches!(self, IssueKind::MissingRegression)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Issue {
    pub kind: IssueKind,
    pub unit: Option<String>,
    pub period: Option<i64>,
    pub column: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn count(&self, kind: IssueKind) -> usize {
        self.issues.iter().filter(|i| i.kind == kind).count()
    }

    pub fn dea_issue_count(&self) -> usize {
        self.issues.iter().filter(|i| i.kind.is_dea_side()).count()
    }

    pub fn regression_issue_count(&self) -> usize {
        self.count(IssueKind::MissingRegression)
    }

    pub fn is_dea_ready(&self) -> bool {
        self.dea_issue_count() == 0
    }

    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    /// Units excluded from DEA evaluation, keyed by period.
    pub fn dropped_by_period(&self) -> BTreeMap<i64, Vec<String>> {
        let mut out: BTreeMap<i64, Vec<String>> = BTreeMap::new();
        for issue in &self.issues {
            if issue.kind == IssueKind::DroppedFromDea {
                if let (Some(u), Some(p)) = (&issue.unit, issue.period) {
                    out.entry(p).or_default().push(u.clone());
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut counts = serde_json::Map::new();
        for kind in [
            IssueKind::SpecColumn,
            IssueKind::MissingDea,
            IssueKind::NonPositiveDea,
            IssueKind::DroppedFromDea,
            IssueKind::MissingRegression,
        ] {
            counts.insert(
                serde_json::to_value(kind).unwrap().as_str().unwrap().to_string(),
                self.count(kind).into(),
            );
        }
        serde_json::json!({
            "dea_ready": self.is_dea_ready(),
            "counts": counts,
            "issues": self.issues,
        })
    }
}

/// Report missing and non-positive DEA cells, units dropped from DEA per
/// period, and missing regression cells.
pub fn validate_panel(panel: &Panel, spec: &NetworkSpec) -> ValidationReport {
    let mut issues = Vec::new();
    let mut dea_columns: Vec<String> = Vec::new();
    for (name, role) in spec.column_roles() {
        match panel.column(&name) {
            Some(col) if col.role == role => dea_columns.push(name),
            _ => issues.push(Issue {
                kind: IssueKind::SpecColumn,
                unit: None,
                period: None,
                column: Some(name),
            }),
        }
    }
    for (name, col) in panel.columns() {
        if col.role.is_dea() && !dea_columns.iter().any(|c| c == name) {
            dea_columns.push(name.to_string());
        }
    }

    for (u, unit) in panel.units().iter().enumerate() {
        for (p, &period) in panel.periods().iter().enumerate() {
            let mut dropped = false;
            for name in &dea_columns {
                let issue = |kind| Issue {
                    kind,
                    unit: Some(unit.clone()),
                    period: Some(period),
                    column: Some(name.clone()),
                };
                match panel.get(name, u, p) {
                    None => {
                        dropped = true;
                        issues.push(issue(IssueKind::MissingDea));
                    }
                    Some(x) if x <= 0.0 => issues.push(issue(IssueKind::NonPositiveDea)),
                    Some(_) => {}
                }
            }
            if dropped {
                issues.push(Issue {
                    kind: IssueKind::DroppedFromDea,
                    unit: Some(unit.clone()),
                    period: Some(period),
                    column: None,
                });
            }
        }
    }

    for (name, col) in panel.columns() {
        if !col.role.is_regression() {
            continue;
        }
        for (u, unit) in panel.units().iter().enumerate() {
            for (p, &period) in panel.periods().iter().enumerate() {
                if col.values[panel.cell(u, p)].is_none() {
                    issues.push(Issue {
                        kind: IssueKind::MissingRegression,
                        unit: Some(unit.clone()),
                        period: Some(period),
                        column: Some(name.to_string()),
                    });
                }
            }
        }
    }
    ValidationReport { issues }
}

/// Shift that lifts a column with pooled range `[min, max]` so that
/// `min / max >= floor`; zero when the column already satisfies it.
pub fn positivity_shift(min: f64, max: f64, floor: f64) -> f64 {
    if min > 0.0 && min / max >= floor {
        0.0
    } else {
        (floor * max - min) / (1.0 - floor)
    }
}

/// Shift each listed column over all its non-missing cells so the pooled
/// minimum equals `floor` times the pooled maximum. Columns already meeting
/// the ratio are left untouched. Ordering within each column is preserved.
pub fn shift_normalize(panel: &Panel, columns: &[&str], floor: f64) -> Result<Panel, PanelError> {
    if !(floor > 0.0 && floor < 1.0) {
        return Err(PanelError::InvalidFloor(floor));
    }
    let mut out = panel.clone();
    for &name in columns {
        let col = panel.require(name)?;
        let present: Vec<f64> = col.values.iter().flatten().copied().collect();
        let min = present.iter().copied().fold(f64::INFINITY, f64::min);
        let max = present.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if present.is_empty() || max <= min {
            return Err(PanelError::DegenerateColumn(name.to_string()));
        }
        let shift = positivity_shift(min, max, floor);
        if shift == 0.0 {
            continue;
        }
        let values = col.values.iter().map(|v| v.map(|x| x + shift)).collect();
        out.set_column(name, col.role, values)?;
        out.provenance.push(Provenance {
            operation: "shift_normalize".into(),
            column: name.to_string(),
            shift,
            floor,
        });
    }
    Ok(out)
}
