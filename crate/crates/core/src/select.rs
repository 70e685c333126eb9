//! Non-protected attribute selection: rank attributes by how unevenly a
//! trained target model performs across their classes, then walk the
//! ranking greedily, keeping only attributes independent of every attribute
//! already kept.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::data::TrainingView;
use crate::error::{Error, Result};

/// Accuracy of `predictions` within grouping class 0 and class 1.
pub fn per_class_accuracy(predictions: &[u8], labels: &[u8], grouping: &[u8], attribute: &str) -> Result<(f64, f64)> {
    if predictions.len() != labels.len() || labels.len() != grouping.len() {
        return Err(Error::Dimension(format!(
            "{} predictions, {} labels, {} grouping values",
            predictions.len(),
            labels.len(),
            grouping.len()
        )));
    }
    let mut correct = [0usize; 2];
    let mut count = [0usize; 2];
    for ((&p, &y), &g) in predictions.iter().zip(labels).zip(grouping) {
        let g = g as usize;
        count[g] += 1;
        correct[g] += usize::from(p == y);
    }
    for class in 0..2 {
        if count[class] == 0 {
            return Err(Error::DegenerateGroup {
                attribute: attribute.to_string(),
                class: class as u8,
            });
        }
    }
    Ok((
        correct[0] as f64 / count[0] as f64,
        correct[1] as f64 / count[1] as f64,
    ))
}

/// Population standard deviation of the two class accuracies, i.e. half
/// their absolute difference.
pub fn disparity(accuracies: (f64, f64)) -> f64 {
    (accuracies.0 - accuracies.1).abs() / 2.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisparityEntry {
    pub attribute: String,
    pub disparity: f64,
    pub accuracy: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisparitySet {
    pub target: String,
    /// One entry per non-target attribute, in table order.
    pub entries: Vec<DisparityEntry>,
    /// Attribute names by descending disparity, ties broken by name.
    pub sorted: Vec<String>,
    pub warnings: Vec<String>,
}

impl DisparitySet {
    pub fn from_entries(target: impl Into<String>, entries: Vec<DisparityEntry>, warnings: Vec<String>) -> Self {
        let mut order: Vec<&DisparityEntry> = entries.iter().collect();
        order.sort_by(|a, b| {
            b.disparity
                .partial_cmp(&a.disparity)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.attribute.cmp(&b.attribute))
        });
        let sorted = order.iter().map(|e| e.attribute.clone()).collect();
        Self {
            target: target.into(),
            entries,
            sorted,
            warnings,
        }
    }

    pub fn disparity_of(&self, attribute: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.attribute == attribute).map(|e| e.disparity)
    }
}

/// Disparity of the target predictor across the classes of every other
/// attribute visible in `view`. Attributes with an empty class are skipped
/// with a warning.
pub fn build_disparity_set(predictions: &[u8], view: &TrainingView, target: &str) -> Result<DisparitySet> {
    let labels = view.column(target)?;
    let mut entries = Vec::new();
    let mut warnings = Vec::new();
    for name in view.attribute_names() {
        if name == target {
            continue;
        }
        match per_class_accuracy(predictions, labels, view.column(name)?, name) {
            Ok(accuracy) => entries.push(DisparityEntry {
                attribute: name.clone(),
                disparity: disparity(accuracy),
                accuracy,
            }),
            Err(e @ Error::DegenerateGroup { .. }) => warnings.push(format!("excluded: {e}")),
            Err(e) => return Err(e),
        }
    }
    Ok(DisparitySet::from_entries(target, entries, warnings))
}

/// 2×2 counts `[a][b]` of two binary columns.
pub fn contingency(a: &[u8], b: &[u8]) -> [[u64; 2]; 2] {
    let mut t = [[0u64; 2]; 2];
    for (&x, &y) in a.iter().zip(b) {
        t[x as usize][y as usize] += 1;
    }
    t
}

fn marginals(table: &[[u64; 2]; 2]) -> Result<([f64; 2], [f64; 2], f64)> {
    let rows = [
        (table[0][0] + table[0][1]) as f64,
        (table[1][0] + table[1][1]) as f64,
    ];
    let cols = [
        (table[0][0] + table[1][0]) as f64,
        (table[0][1] + table[1][1]) as f64,
    ];
    if rows.contains(&0.0) || cols.contains(&0.0) {
        return Err(Error::DegenerateTable(format!("zero marginal in {table:?}")));
    }
    Ok((rows, cols, rows[0] + rows[1]))
}

/// Pearson χ² (no continuity correction) and its p-value with one degree
/// of freedom.
pub fn chi_square_independence(table: [[u64; 2]; 2]) -> Result<(f64, f64)> {
    let (rows, cols, n) = marginals(&table)?;
    let mut stat = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let expected = rows[i] * cols[j] / n;
            let d = table[i][j] as f64 - expected;
            stat += d * d / expected;
        }
    }
    let dist = ChiSquared::new(1.0).expect("df = 1 is valid");
    Ok((stat, dist.sf(stat)))
}

/// `sqrt(χ² / (N · min(rows − 1, cols − 1)))`, which for 2×2 tables is
/// `sqrt(χ² / N)`.
pub fn cramers_v(table: [[u64; 2]; 2]) -> Result<f64> {
    let (_, _, n) = marginals(&table)?;
    let (stat, _) = chi_square_independence(table)?;
    Ok((stat / n).sqrt().min(1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionOptions {
    pub n: usize,
    pub alpha: f64,
    /// When false the χ² gate is skipped and the top `n` attributes by
    /// disparity are taken as they come.
    pub independence_gate: bool,
}

impl Default for SelectionOptions {
    fn default() -> Self {
        Self {
            n: 1,
            alpha: 0.05,
            independence_gate: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndependenceTest {
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub target: String,
    pub selected: Vec<String>,
    pub n: usize,
    pub disparities: DisparitySet,
    /// Pairwise tests among `selected`; `None` on the diagonal and for
    /// degenerate tables.
    pub independence_report: Vec<Vec<Option<IndependenceTest>>>,
    pub alpha: f64,
    pub independence_gate: bool,
    pub warnings: Vec<String>,
}

pub fn select_attributes(
    disparities: &DisparitySet,
    view: &TrainingView,
    options: SelectionOptions,
) -> Result<SelectionResult> {
    if options.n == 0 {
        return Err(Error::Config("the number of attributes to select must be at least 1".into()));
    }
    if !(options.alpha > 0.0 && options.alpha < 1.0) {
        return Err(Error::Config(format!("alpha = {} must lie in (0, 1)", options.alpha)));
    }
    let (head, rest) = disparities
        .sorted
        .split_first()
        .ok_or_else(|| Error::Selection("empty disparity set".into()))?;
    let mut warnings = disparities.warnings.clone();
    let mut selected = vec![head.clone()];
    for candidate in rest {
        if selected.len() == options.n {
            break;
        }
        if !options.independence_gate {
            selected.push(candidate.clone());
            continue;
        }
        let column = view.column(candidate)?;
        let mut independent = true;
        for chosen in &selected {
            match chi_square_independence(contingency(column, view.column(chosen)?)) {
                Ok((_, p)) if p > options.alpha => {}
                Ok(_) => {
                    independent = false;
                    break;
                }
                Err(Error::DegenerateTable(_)) => {
                    warnings.push(format!("`{candidate}` skipped: degenerate table against `{chosen}`"));
                    independent = false;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if independent {
            selected.push(candidate.clone());
        }
    }
    if selected.len() < options.n {
        warnings.push(format!(
            "selection exhausted: {} of {} requested attributes are available",
            selected.len(),
            options.n
        ));
    }

    let mut report = vec![vec![None; selected.len()]; selected.len()];
    for i in 0..selected.len() {
        for j in 0..selected.len() {
            if i != j {
                let t = contingency(view.column(&selected[i])?, view.column(&selected[j])?);
                report[i][j] = chi_square_independence(t)
                    .ok()
                    .map(|(statistic, p_value)| IndependenceTest { statistic, p_value });
            }
        }
    }
    Ok(SelectionResult {
        target: disparities.target.clone(),
        n: selected.len(),
        selected,
        disparities: disparities.clone(),
        independence_report: report,
        alpha: options.alpha,
        independence_gate: options.independence_gate,
        warnings,
    })
}
