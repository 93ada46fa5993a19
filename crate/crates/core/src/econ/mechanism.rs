//! Channel (mechanism) regressions and subsample heterogeneity splits.

use serde::{Deserialize, Serialize};

use super::{fit_twfe, fit_twfe_masked, EconError, FitResult, RegressionDesign};
use crate::panel::{Panel, VariableRole};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismFit {
    pub channel: String,
    /// Channel on the explanatory variable, controls and fixed effects.
    pub first: FitResult,
    /// Outcome on the predicted channel, controls and fixed effects.
    pub second: FitResult,
}

impl MechanismFit {
    pub fn predicted_name(channel: &str) -> String {
        format!("{channel}_hat")
    }
}

/// Two-step channel regression. `design` is the baseline outcome design;
/// the channel replaces the outcome in the first step and its fitted values
/// (fixed effects included) replace the explanatory variable in the second.
pub fn mechanism_two_stage(
    panel: &Panel,
    design: &RegressionDesign,
    channel: &str,
) -> Result<MechanismFit, EconError> {
    design.validate()?;
    panel.require(channel)?;
    let mut first_design = design.clone();
    first_design.dependent = channel.to_string();
    let first = fit_twfe(&first_design, panel)?;

    let raw = &panel.require(channel)?.values;
    let mut hat = vec![None; panel.n_cells()];
    for (row, &cell) in first.cells.iter().enumerate() {
        hat[cell] = raw[cell].map(|v| v - first.residuals[row]);
    }
    let name = MechanismFit::predicted_name(channel);
    let mut augmented = panel.clone();
    augmented.set_column(&name, VariableRole::RegressionExplanatory, hat)?;

    let second_design = RegressionDesign {
        explanatory: vec![name],
        ..design.clone()
    };
    let second = fit_twfe(&second_design, &augmented)?;
    Ok(MechanismFit {
        channel: channel.to_string(),
        first,
        second,
    })
}

/// How to split the sample. Group A is "above the period median" or "flag
/// set"; group B is the complement among cells where the criterion exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum SplitCriterion {
    AboveMedian { column: String },
    Flag { column: String },
}

impl SplitCriterion {
    pub fn column(&self) -> &str {
        match self {
            SplitCriterion::AboveMedian { column } | SplitCriterion::Flag { column } => column,
        }
    }
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// Cell masks for groups A and B. Medians are cross-sectional, per period.
pub fn split_masks(panel: &Panel, criterion: &SplitCriterion) -> Result<(Vec<bool>, Vec<bool>), EconError> {
    let col = &panel.require(criterion.column())?.values;
    let mut a = vec![false; panel.n_cells()];
    let mut b = vec![false; panel.n_cells()];
    match criterion {
        SplitCriterion::Flag { .. } => {
            for (i, v) in col.iter().enumerate() {
                if let Some(v) = v {
                    a[i] = *v != 0.0;
                    b[i] = *v == 0.0;
                }
            }
        }
        SplitCriterion::AboveMedian { .. } => {
            for p in 0..panel.n_periods() {
                let cells: Vec<usize> = (0..panel.n_units()).map(|u| panel.cell(u, p)).collect();
                let vals: Vec<f64> = cells.iter().filter_map(|&c| col[c]).collect();
                if let Some(m) = median(vals) {
                    for &c in &cells {
                        if let Some(v) = col[c] {
                            a[c] = v > m;
                            b[c] = v <= m;
                        }
                    }
                }
            }
        }
    }
    Ok((a, b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneityFit {
    pub criterion: SplitCriterion,
    pub a: FitResult,
    pub b: FitResult,
}

pub fn heterogeneity_split(
    panel: &Panel,
    design: &RegressionDesign,
    criterion: &SplitCriterion,
) -> Result<HeterogeneityFit, EconError> {
    let (a, b) = split_masks(panel, criterion)?;
    if !a.contains(&true) {
        return Err(EconError::EmptySplit("A".into()));
    }
    if !b.contains(&true) {
        return Err(EconError::EmptySplit("B".into()));
    }
    Ok(HeterogeneityFit {
        criterion: criterion.clone(),
        a: fit_twfe_masked(design, panel, Some(&a))?,
        b: fit_twfe_masked(design, panel, Some(&b))?,
    })
}
