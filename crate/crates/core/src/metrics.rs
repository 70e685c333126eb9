//! Fairness and performance metrics over per-subgroup confusion counts.
//!
//! All values are fractions internally; [`percent`] formats them the way
//! reports display them.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Confusion counts of one protected subgroup for a binary target.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubgroupConfusion {
    pub label: String,
    /// Ground-truth positives.
    pub tp: u64,
    /// Predicted true positives.
    pub tp_hat: u64,
    pub fp_hat: u64,
    pub fn_hat: u64,
    /// Ground-truth negatives.
    pub tn: u64,
    /// Predicted true negatives.
    pub tn_hat: u64,
    pub total: u64,
}

impl SubgroupConfusion {
    /// From the four cells of a 2×2 confusion matrix.
    pub fn from_cells(label: impl Into<String>, tp_hat: u64, fn_hat: u64, fp_hat: u64, tn_hat: u64) -> Self {
        Self {
            label: label.into(),
            tp: tp_hat + fn_hat,
            tp_hat,
            fp_hat,
            fn_hat,
            tn: tn_hat + fp_hat,
            tn_hat,
            total: tp_hat + fn_hat + fp_hat + tn_hat,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tp != self.tp_hat + self.fn_hat
            || self.tn != self.tn_hat + self.fp_hat
            || self.total != self.tp + self.tn
        {
            return Err(Error::Metric(format!(
                "inconsistent confusion counts for subgroup `{}`",
                self.label
            )));
        }
        Ok(())
    }

    pub fn accuracy(&self) -> Result<f64> {
        if self.total == 0 {
            return Err(Error::Metric(format!("subgroup `{}` is empty", self.label)));
        }
        Ok((self.tp_hat + self.tn_hat) as f64 / self.total as f64)
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }
}

/// Tallies confusions per subgroup. `subgroups[i]` indexes into
/// `subgroup_labels`; subgroups with no samples are kept with zero counts
/// and reported in the returned warnings.
pub fn confusion_by_subgroup(
    predictions: &[u8],
    labels: &[u8],
    subgroups: &[usize],
    subgroup_labels: &[String],
) -> Result<(Vec<SubgroupConfusion>, Vec<String>)> {
    if predictions.len() != labels.len() || labels.len() != subgroups.len() {
        return Err(Error::Dimension(format!(
            "{} predictions, {} labels, {} subgroup assignments",
            predictions.len(),
            labels.len(),
            subgroups.len()
        )));
    }
    let mut cells = vec![[0u64; 4]; subgroup_labels.len()];
    for ((&p, &y), &g) in predictions.iter().zip(labels).zip(subgroups) {
        let slot = cells.get_mut(g).ok_or_else(|| {
            Error::Index(format!("subgroup {g} outside {} labels", subgroup_labels.len()))
        })?;
        let idx = match (y, p) {
            (1, 1) => 0,
            (1, _) => 1,
            (_, 1) => 2,
            _ => 3,
        };
        slot[idx] += 1;
    }
    let mut warnings = Vec::new();
    let out = subgroup_labels
        .iter()
        .zip(cells)
        .map(|(label, [tp, fnn, fp, tn])| {
            if tp + fnn + fp + tn == 0 {
                warnings.push(format!("subgroup `{label}` has no samples"));
            }
            SubgroupConfusion::from_cells(label.clone(), tp, fnn, fp, tn)
        })
        .collect();
    Ok((out, warnings))
}

/// `(|tp − t̂p| + f̂p + f̂n + |tn − t̂n|) / (2·total)`.
pub fn overall_performance(c: &SubgroupConfusion) -> Result<f64> {
    if c.total == 0 {
        return Err(Error::Metric(format!(
            "overall performance is undefined for empty subgroup `{}`",
            c.label
        )));
    }
    let err = c.tp.abs_diff(c.tp_hat) + c.fp_hat + c.fn_hat + c.tn.abs_diff(c.tn_hat);
    Ok(err as f64 / (2 * c.total) as f64)
}

/// Overall performance equality: `|OP(a) − OP(b)|`.
pub fn ope(a: &SubgroupConfusion, b: &SubgroupConfusion) -> Result<f64> {
    Ok((overall_performance(a)? - overall_performance(b)?).abs())
}

/// Degree of bias: population standard deviation of subgroup accuracies.
pub fn dob(accuracies: &[f64]) -> Result<f64> {
    if accuracies.len() < 2 {
        return Err(Error::Metric(format!(
            "degree of bias needs at least 2 subgroups, found {}",
            accuracies.len()
        )));
    }
    Ok(population_std(accuracies))
}

pub(crate) fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

fn false_negative_rate(c: &SubgroupConfusion) -> Result<f64> {
    if c.tp == 0 {
        return Err(Error::UndefinedRate(format!(
            "false-negative rate of `{}` has no ground-truth positives",
            c.label
        )));
    }
    Ok(c.fn_hat as f64 / c.tp as f64)
}

fn positive_predictive_value(c: &SubgroupConfusion) -> Result<f64> {
    let predicted = c.tp_hat + c.fp_hat;
    if predicted == 0 {
        return Err(Error::UndefinedRate(format!(
            "positive predictive value of `{}` has no predicted positives",
            c.label
        )));
    }
    Ok(c.tp_hat as f64 / predicted as f64)
}

/// Difference in equality of opportunity: `|FNR(a) − FNR(b)|`.
pub fn deo(a: &SubgroupConfusion, b: &SubgroupConfusion) -> Result<f64> {
    Ok((false_negative_rate(a)? - false_negative_rate(b)?).abs())
}

/// Predictive parity gap: `|PPV(a) − PPV(b)|`.
pub fn ppv_parity(a: &SubgroupConfusion, b: &SubgroupConfusion) -> Result<f64> {
    Ok((positive_predictive_value(a)? - positive_predictive_value(b)?).abs())
}

/// A metric that may be undefined because of a zero denominator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MetricValue {
    Value(f64),
    Undefined,
}

impl MetricValue {
    pub fn from_result(r: Result<f64>) -> Result<Self> {
        match r {
            Ok(v) => Ok(Self::Value(v)),
            Err(Error::UndefinedRate(_) | Error::Metric(_)) => Ok(Self::Undefined),
            Err(e) => Err(e),
        }
    }

    pub fn value(&self) -> Option<f64> {
        match *self {
            Self::Value(v) => Some(v),
            Self::Undefined => None,
        }
    }
}

impl fmt::Display for MetricValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Value(v) => f.write_str(&percent(*v)),
            Self::Undefined => f.write_str("undefined"),
        }
    }
}

impl Serialize for MetricValue {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Self::Value(v) => s.serialize_f64(*v),
            Self::Undefined => s.serialize_str("undefined"),
        }
    }
}

impl<'de> Deserialize<'de> for MetricValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Self::Value(v)),
            Raw::Str(s) if s == "undefined" => Ok(Self::Undefined),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("unexpected metric `{s}`"))),
        }
    }
}

/// A fraction as a percentage with two decimals.
pub fn percent(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

/// Metrics across the two subgroups of one protected attribute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtectedReport {
    pub attribute: String,
    pub confusions: Vec<SubgroupConfusion>,
    pub subgroup_accuracy: Vec<MetricValue>,
    pub overall_accuracy: f64,
    pub dob: MetricValue,
    pub op: Vec<MetricValue>,
    pub ope: MetricValue,
    pub deo: MetricValue,
    pub ppv_parity: MetricValue,
}

impl ProtectedReport {
    pub fn from_confusions(attribute: impl Into<String>, confusions: Vec<SubgroupConfusion>) -> Result<Self> {
        for c in &confusions {
            c.validate()?;
        }
        let total: u64 = confusions.iter().map(|c| c.total).sum();
        if total == 0 {
            return Err(Error::Metric("no samples in any subgroup".into()));
        }
        let correct: u64 = confusions.iter().map(|c| c.tp_hat + c.tn_hat).sum();
        let subgroup_accuracy = confusions
            .iter()
            .map(|c| MetricValue::from_result(c.accuracy()))
            .collect::<Result<Vec<_>>>()?;
        let defined: Vec<f64> = subgroup_accuracy.iter().filter_map(MetricValue::value).collect();
        let op = confusions
            .iter()
            .map(|c| MetricValue::from_result(overall_performance(c)))
            .collect::<Result<Vec<_>>>()?;
        let pair = |f: fn(&SubgroupConfusion, &SubgroupConfusion) -> Result<f64>| match confusions.as_slice() {
            [a, b] => MetricValue::from_result(f(a, b)),
            _ => Ok(MetricValue::Undefined),
        };
        Ok(Self {
            attribute: attribute.into(),
            overall_accuracy: correct as f64 / total as f64,
            dob: MetricValue::from_result(dob(&defined))?,
            ope: pair(ope)?,
            deo: pair(deo)?,
            ppv_parity: pair(ppv_parity)?,
            subgroup_accuracy,
            op,
            confusions,
        })
    }
}

/// One cell of the intersection of two binary protected attributes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntersectionalCell {
    pub label: String,
    pub confusion: SubgroupConfusion,
    pub op: MetricValue,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntersectionalReport {
    pub attributes: [String; 2],
    pub cells: Vec<IntersectionalCell>,
    /// `|OP_a − OP_b|` for every pair of cells; undefined when either is
    /// empty.
    pub pairwise_ope: Vec<Vec<MetricValue>>,
    /// Mean of the defined unordered pairwise terms.
    pub aggregate_ope: MetricValue,
    pub warnings: Vec<String>,
}

impl IntersectionalReport {
    pub fn from_cells(attributes: [String; 2], confusions: Vec<SubgroupConfusion>) -> Result<Self> {
        let mut warnings = Vec::new();
        let cells: Vec<IntersectionalCell> = confusions
            .into_iter()
            .map(|c| {
                if c.is_empty() {
                    warnings.push(format!("cell `{}` is empty and excluded from pairs", c.label));
                }
                let op = MetricValue::from_result(overall_performance(&c))?;
                Ok(IntersectionalCell {
                    label: c.label.clone(),
                    confusion: c,
                    op,
                })
            })
            .collect::<Result<_>>()?;
        let n = cells.len();
        let mut pairwise = vec![vec![MetricValue::Undefined; n]; n];
        let mut terms = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if let (Some(a), Some(b)) = (cells[i].op.value(), cells[j].op.value()) {
                    pairwise[i][j] = MetricValue::Value((a - b).abs());
                    if i < j {
                        terms.push((a - b).abs());
                    }
                }
            }
        }
        let aggregate_ope = if terms.is_empty() {
            MetricValue::Undefined
        } else {
            MetricValue::Value(terms.iter().sum::<f64>() / terms.len() as f64)
        };
        Ok(Self {
            attributes,
            cells,
            pairwise_ope: pairwise,
            aggregate_ope,
            warnings,
        })
    }
}

/// Per-cell OP, pairwise OPE and the aggregate over the 2×2 intersection of
/// two binary protected attributes.
pub fn intersectional_report(
    predictions: &[u8],
    labels: &[u8],
    first: (&str, &[u8]),
    second: (&str, &[u8]),
) -> Result<IntersectionalReport> {
    if first.1.len() != labels.len() || second.1.len() != labels.len() {
        return Err(Error::Dimension("protected columns do not match label count".into()));
    }
    let groups: Vec<usize> = first
        .1
        .iter()
        .zip(second.1)
        .map(|(&a, &b)| 2 * a as usize + b as usize)
        .collect();
    let names: Vec<String> = [(0, 0), (0, 1), (1, 0), (1, 1)]
        .iter()
        .map(|(a, b)| format!("{}={a},{}={b}", first.0, second.0))
        .collect();
    let (confusions, _) = confusion_by_subgroup(predictions, labels, &groups, &names)?;
    IntersectionalReport::from_cells([first.0.to_string(), second.0.to_string()], confusions)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportProvenance {
    pub model_hash: String,
    pub split: String,
    #[serde(default)]
    pub variant: String,
    #[serde(default)]
    pub config_hash: String,
}

/// Everything `evaluate` reports for one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub target: String,
    pub samples: u64,
    pub overall_accuracy: f64,
    pub protected: Vec<ProtectedReport>,
    pub intersectional: Option<IntersectionalReport>,
    pub provenance: ReportProvenance,
    pub warnings: Vec<String>,
}

impl MetricsReport {
    /// Evaluates binary predictions against labels for each protected column
    /// (value 0/1), adding the intersectional section when exactly two are
    /// given.
    pub fn evaluate(
        target: &str,
        predictions: &[u8],
        labels: &[u8],
        protected: &[(&str, &[u8])],
        provenance: ReportProvenance,
    ) -> Result<Self> {
        let mut sections = Vec::new();
        let mut warnings = Vec::new();
        for &(name, column) in protected {
            let groups: Vec<usize> = column.iter().map(|&v| v as usize).collect();
            let names = vec![format!("{name}=0"), format!("{name}=1")];
            let (confusions, w) = confusion_by_subgroup(predictions, labels, &groups, &names)?;
            warnings.extend(w);
            sections.push((name.to_string(), confusions));
        }
        let intersectional = match protected {
            [a, b] => {
                let r = intersectional_report(predictions, labels, *a, *b)?;
                warnings.extend(r.warnings.iter().cloned());
                Some(r)
            }
            _ => None,
        };
        let mut report = Self::from_sections(target, sections, intersectional, provenance)?;
        report.warnings.splice(0..0, warnings);
        Ok(report)
    }

    /// Rebuilds every metric from confusion counts alone.
    pub fn from_sections(
        target: &str,
        sections: Vec<(String, Vec<SubgroupConfusion>)>,
        intersectional: Option<IntersectionalReport>,
        provenance: ReportProvenance,
    ) -> Result<Self> {
        let protected = sections
            .into_iter()
            .map(|(name, c)| ProtectedReport::from_confusions(name, c))
            .collect::<Result<Vec<_>>>()?;
        let first = protected
            .first()
            .ok_or_else(|| Error::Metric("at least one protected attribute is required".into()))?;
        let samples = first.confusions.iter().map(|c| c.total).sum();
        let overall_accuracy = first.overall_accuracy;
        let mut warnings = Vec::new();
        for p in &protected {
            for (name, v) in [("DEO", p.deo), ("PPV parity", p.ppv_parity)] {
                if v == MetricValue::Undefined {
                    warnings.push(format!("{name} across `{}` is undefined", p.attribute));
                }
            }
        }
        Ok(Self {
            target: target.to_string(),
            samples,
            overall_accuracy,
            protected,
            intersectional,
            provenance,
            warnings,
        })
    }

    /// Recomputes the report from its embedded confusion counts.
    pub fn recompute(&self) -> Result<Self> {
        let sections = self
            .protected
            .iter()
            .map(|p| (p.attribute.clone(), p.confusions.clone()))
            .collect();
        let intersectional = match &self.intersectional {
            Some(r) => Some(IntersectionalReport::from_cells(
                r.attributes.clone(),
                r.cells.iter().map(|c| c.confusion.clone()).collect(),
            )?),
            None => None,
        };
        let mut out = Self::from_sections(&self.target, sections, intersectional, self.provenance.clone())?;
        out.warnings = self.warnings.clone();
        Ok(out)
    }
}

/// Confusion matrices laid out as ground-truth rows × predicted columns,
/// two rows per algorithm:
///
/// ```text
/// algorithm,truth,<g0> pred_pos,<g0> pred_neg,<g1> pred_pos,<g1> pred_neg
/// BMT,pos,0,766,0,363
/// BMT,neg,0,4654,0,1097
/// ```
pub fn confusions_to_csv(rows: &[(String, Vec<SubgroupConfusion>)]) -> String {
    let mut out = String::from("algorithm,truth");
    if let Some((_, groups)) = rows.first() {
        for g in groups {
            out.push_str(&format!(",{0} pred_pos,{0} pred_neg", g.label));
        }
    }
    out.push('\n');
    for (name, groups) in rows {
        out.push_str(&format!("{name},pos"));
        for g in groups {
            out.push_str(&format!(",{},{}", g.tp_hat, g.fn_hat));
        }
        out.push('\n');
        out.push_str(&format!("{name},neg"));
        for g in groups {
            out.push_str(&format!(",{},{}", g.fp_hat, g.tn_hat));
        }
        out.push('\n');
    }
    out
}

/// Parses the layout written by [`confusions_to_csv`].
pub fn confusions_from_csv(text: &str) -> Result<Vec<(String, Vec<SubgroupConfusion>)>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Parse("empty confusion file".into()))?
        .split(',')
        .map(str::trim)
        .collect();
    if header.len() < 4 || (header.len() - 2) % 2 != 0 {
        return Err(Error::Parse("confusion header must have two columns per subgroup".into()));
    }
    let labels: Vec<String> = header[2..]
        .chunks(2)
        .map(|c| c[0].trim_end_matches("pred_pos").trim().to_string())
        .collect();
    let parse_row = |line: &str, lineno: usize, expect: &str| -> Result<(String, Vec<u64>)> {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != header.len() || cells[1] != expect {
            return Err(Error::Parse(format!(
                "line {lineno}: expected a `{expect}` row with {} columns",
                header.len()
            )));
        }
        let counts = cells[2..]
            .iter()
            .enumerate()
            .map(|(j, c)| {
                c.parse::<u64>()
                    .map_err(|_| Error::Parse(format!("line {lineno}, column {}: `{c}` is not a count", j + 3)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((cells[0].to_string(), counts))
    };
    let body: Vec<&str> = lines.collect();
    if body.len() % 2 != 0 {
        return Err(Error::Parse("each algorithm needs a pos and a neg row".into()));
    }
    body.chunks(2)
        .enumerate()
        .map(|(k, pair)| {
            let (name, pos) = parse_row(pair[0], 2 * k + 2, "pos")?;
            let (name2, neg) = parse_row(pair[1], 2 * k + 3, "neg")?;
            if name != name2 {
                return Err(Error::Parse(format!("rows for `{name}` and `{name2}` are interleaved")));
            }
            let groups = labels
                .iter()
                .enumerate()
                .map(|(g, label)| {
                    SubgroupConfusion::from_cells(label.clone(), pos[2 * g], pos[2 * g + 1], neg[2 * g], neg[2 * g + 1])
                })
                .collect();
            Ok((name, groups))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bmt() -> (SubgroupConfusion, SubgroupConfusion) {
        (
            SubgroupConfusion::from_cells("P_M", 0, 766, 0, 4654),
            SubgroupConfusion::from_cells("P_NM", 0, 363, 0, 1097),
        )
    }

    fn npad_two() -> (SubgroupConfusion, SubgroupConfusion) {
        (
            SubgroupConfusion::from_cells("P_M", 511, 255, 202, 4452),
            SubgroupConfusion::from_cells("P_NM", 289, 74, 48, 1049),
        )
    }

    #[test]
    fn bangs_baseline_counts() {
        let (m, _) = bmt();
        assert_eq!((m.tp, m.tp_hat, m.fn_hat, m.tn, m.tn_hat, m.fp_hat), (766, 0, 766, 4654, 4654, 0));
        assert_eq!(m.total, 5420);
    }

    #[test]
    fn overall_performance_of_baseline_rows() {
        let (m, nm) = bmt();
        assert!((overall_performance(&m).unwrap() - 1532.0 / 10840.0).abs() < 1e-15);
        assert!((overall_performance(&nm).unwrap() - 726.0 / 2920.0).abs() < 1e-15);
        let perfect = SubgroupConfusion::from_cells("g", 10, 0, 0, 7);
        assert_eq!(overall_performance(&perfect).unwrap(), 0.0);
    }

    #[test]
    fn rates_undefined_for_degenerate_predictor() {
        let (m, nm) = bmt();
        assert_eq!(deo(&m, &nm).unwrap(), 0.0);
        assert!(matches!(ppv_parity(&m, &nm), Err(Error::UndefinedRate(_))));
        let no_pos = SubgroupConfusion::from_cells("g", 0, 0, 1, 1);
        assert!(matches!(deo(&no_pos, &m), Err(Error::UndefinedRate(_))));
    }

    #[test]
    fn npad_rates() {
        let (m, nm) = npad_two();
        assert!((ppv_parity(&m, &nm).unwrap() - (289.0 / 337.0 - 511.0 / 713.0)).abs() < 1e-15);
        assert_eq!(ope(&m, &m).unwrap(), 0.0);
        assert_eq!(deo(&nm, &nm).unwrap(), 0.0);
        assert_eq!(ppv_parity(&m, &m).unwrap(), 0.0);
    }

    #[test]
    fn dob_cases() {
        assert!((dob(&[90.0, 70.0]).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(dob(&[0.8, 0.8]).unwrap(), 0.0);
        assert!(dob(&[0.5]).is_err());
    }

    #[test]
    fn empty_subgroup_warns() {
        let (c, w) = confusion_by_subgroup(&[1, 0], &[1, 1], &[0, 0], &["a".into(), "b".into()]).unwrap();
        assert_eq!(c[1].total, 0);
        assert_eq!(w.len(), 1);
        assert!(overall_performance(&c[1]).is_err());
    }

    #[test]
    fn intersectional_with_empty_cell_has_three_pairs() {
        let preds = [1, 0, 1, 1, 0, 0];
        let labels = [1, 0, 0, 1, 1, 0];
        let a = [0, 0, 0, 1, 1, 1];
        let b = [0, 0, 1, 0, 0, 0];
        let r = intersectional_report(&preds, &labels, ("a", &a), ("b", &b)).unwrap();
        assert_eq!(r.warnings.len(), 1);
        let defined = r.cells.iter().filter(|c| c.op.value().is_some()).count();
        assert_eq!(defined, 3);
        let ops: Vec<f64> = r.cells.iter().filter_map(|c| c.op.value()).collect();
        let expect = ((ops[0] - ops[1]).abs() + (ops[0] - ops[2]).abs() + (ops[1] - ops[2]).abs()) / 3.0;
        assert_eq!(r.aggregate_ope, MetricValue::Value(expect));
    }

    #[test]
    fn csv_round_trip() {
        let (a, b) = bmt();
        let (c, d) = npad_two();
        let rows = vec![("BMT".to_string(), vec![a, b]), ("NPAD (Two)".to_string(), vec![c, d])];
        let csv = confusions_to_csv(&rows);
        assert_eq!(confusions_from_csv(&csv).unwrap(), rows);
        assert!(confusions_from_csv("algorithm,truth,x pred_pos,x pred_neg\nA,pos,1,-2\nA,neg,0,0\n").is_err());
    }

    #[test]
    fn metric_value_json() {
        let v = vec![MetricValue::Value(0.25), MetricValue::Undefined];
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(s, r#"[0.25,"undefined"]"#);
        assert_eq!(serde_json::from_str::<Vec<MetricValue>>(&s).unwrap(), v);
    }
}
