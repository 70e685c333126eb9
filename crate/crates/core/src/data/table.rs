//! Binary attribute annotations with a training-time firewall around
//! protected columns.

use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

/// Per-sample binary attributes. Protected columns are reachable only
/// through [`AttributeTable::evaluation_view`].
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeTable {
    sample_ids: Vec<String>,
    attribute_names: Vec<String>,
    /// Row-major `samples × attributes`.
    values: Vec<u8>,
    protected: Vec<bool>,
}

impl AttributeTable {
    pub fn new(
        sample_ids: Vec<String>,
        attribute_names: Vec<String>,
        rows: Vec<Vec<u8>>,
        protected_names: &[&str],
    ) -> Result<Self> {
        let k = attribute_names.len();
        if rows.len() != sample_ids.len() {
            return Err(Error::Dimension(format!(
                "{} rows for {} sample ids",
                rows.len(),
                sample_ids.len()
            )));
        }
        let mut seen = HashSet::new();
        for id in &sample_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Parse(format!("duplicate sample id `{id}`")));
            }
        }
        let mut names = HashSet::new();
        for n in &attribute_names {
            if !names.insert(n.as_str()) {
                return Err(Error::Parse(format!("duplicate attribute `{n}`")));
            }
        }
        let mut values = Vec::with_capacity(rows.len() * k);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::Parse(format!("row {i} has {} values, expected {k}", row.len())));
            }
            if let Some(j) = row.iter().position(|&v| v > 1) {
                return Err(Error::Parse(format!(
                    "row {i}, attribute `{}`: value {} is not binary",
                    attribute_names[j], row[j]
                )));
            }
            values.extend_from_slice(row);
        }
        let mut protected = vec![false; k];
        for name in protected_names {
            let j = attribute_names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::Config(format!("unknown protected attribute `{name}`")))?;
            protected[j] = true;
        }
        Ok(Self {
            sample_ids,
            attribute_names,
            values,
            protected,
        })
    }

    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn attribute_names(&self) -> &[String] {
        &self.attribute_names
    }

    pub fn protected_names(&self) -> Vec<&str> {
        self.attribute_names
            .iter()
            .zip(&self.protected)
            .filter(|(_, &p)| p)
            .map(|(n, _)| n.as_str())
            .collect()
    }

    fn index(&self, name: &str) -> Result<usize> {
        self.attribute_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Config(format!("unknown attribute `{name}`")))
    }

    fn column_at(&self, j: usize) -> Vec<u8> {
        let k = self.attribute_names.len();
        (0..self.len()).map(|i| self.values[i * k + j]).collect()
    }

    /// A copy of the table with protected columns removed.
    pub fn training_view(&self) -> TrainingView {
        let mut names = Vec::new();
        let mut columns = Vec::new();
        let mut stripped = Vec::new();
        for (j, name) in self.attribute_names.iter().enumerate() {
            if self.protected[j] {
                stripped.push(name.clone());
            } else {
                names.push(name.clone());
                columns.push(self.column_at(j));
            }
        }
        TrainingView {
            sample_ids: self.sample_ids.clone(),
            names,
            columns,
            stripped,
        }
    }

    pub fn evaluation_view(&self) -> EvaluationView<'_> {
        EvaluationView { table: self }
    }

    /// The rows at `indices`, in that order.
    pub fn select_rows(&self, indices: &[usize]) -> AttributeTable {
        let k = self.attribute_names.len();
        AttributeTable {
            sample_ids: indices.iter().map(|&i| self.sample_ids[i].clone()).collect(),
            attribute_names: self.attribute_names.clone(),
            values: indices
                .iter()
                .flat_map(|&i| self.values[i * k..(i + 1) * k].iter().copied())
                .collect(),
            protected: self.protected.clone(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("id");
        for n in &self.attribute_names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        let k = self.attribute_names.len();
        for (i, id) in self.sample_ids.iter().enumerate() {
            out.push_str(id);
            for v in &self.values[i * k..(i + 1) * k] {
                out.push(',');
                out.push(if *v == 1 { '1' } else { '0' });
            }
            out.push('\n');
        }
        out
    }
}

/// Training-time access: protected columns are physically absent.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingView {
    sample_ids: Vec<String>,
    names: Vec<String>,
    columns: Vec<Vec<u8>>,
    stripped: Vec<String>,
}

impl TrainingView {
    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn attribute_names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Result<&[u8]> {
        if let Some(j) = self.names.iter().position(|n| n == name) {
            return Ok(&self.columns[j]);
        }
        if self.stripped.iter().any(|n| n == name) {
            return Err(Error::Firewall(name.to_string()));
        }
        Err(Error::Config(format!("unknown attribute `{name}`")))
    }
}

/// Evaluation-time access to every column, protected ones included.
#[derive(Clone, Copy, Debug)]
pub struct EvaluationView<'a> {
    table: &'a AttributeTable,
}

impl<'a> EvaluationView<'a> {
    pub fn column(&self, name: &str) -> Result<Vec<u8>> {
        Ok(self.table.column_at(self.table.index(name)?))
    }

    pub fn protected_names(&self) -> Vec<&'a str> {
        self.table.protected_names()
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

/// Reads a CSV attribute table: header `id,<attr>,…`, one row per sample,
/// values in {−1, 0, 1} with −1 and 0 both meaning absent.
pub fn read_attribute_table<R: Read>(input: R, protected_names: &[&str]) -> Result<AttributeTable> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = reader
        .headers()
        .map_err(|e| Error::Parse(format!("header: {e}")))?
        .clone();
    if header.len() < 2 {
        return Err(Error::Parse("header needs an id column and at least one attribute".into()));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let line = r + 2;
        let record = record.map_err(|e| Error::Parse(format!("line {line}: {e}")))?;
        if record.len() != header.len() {
            return Err(Error::Parse(format!(
                "line {line}: {} fields, expected {}",
                record.len(),
                header.len()
            )));
        }
        ids.push(record[0].to_string());
        let row = record
            .iter()
            .skip(1)
            .enumerate()
            .map(|(j, cell)| match cell {
                "1" | "+1" => Ok(1),
                "0" | "-1" => Ok(0),
                other => Err(Error::Parse(format!(
                    "line {line}, column `{}`: `{other}` is not binary",
                    names[j]
                ))),
            })
            .collect::<Result<Vec<u8>>>()?;
        rows.push(row);
    }
    AttributeTable::new(ids, names, rows, protected_names)
}

pub fn load_attribute_table(path: impl AsRef<Path>, protected_names: &[&str]) -> Result<AttributeTable> {
    let file = std::fs::File::open(path.as_ref())?;
    read_attribute_table(file, protected_names)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes_minus_one() {
        let t = read_attribute_table("id,Smiling,Male\na,1,-1\n".as_bytes(), &["Male"]).unwrap();
        let ev = t.evaluation_view();
        assert_eq!(ev.column("Smiling").unwrap(), vec![1]);
        assert_eq!(ev.column("Male").unwrap(), vec![0]);
    }

    #[test]
    fn dimensions_of_small_file() {
        let t = read_attribute_table("id,A,B\nx,1,0\ny,0,0\nz,-1,1\n".as_bytes(), &[]).unwrap();
        assert_eq!((t.len(), t.attribute_names().len()), (3, 2));
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            read_attribute_table("id,A\nx,1\nx,0\n".as_bytes(), &[]),
            Err(Error::Parse(_))
        ));
        let err = read_attribute_table("id,A,B\nx,1,2\n".as_bytes(), &[]).unwrap_err();
        assert!(err.to_string().contains("line 2") && err.to_string().contains("`B`"), "{err}");
        assert!(matches!(
            read_attribute_table("id,A\nx,1\n".as_bytes(), &["Gender"]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn training_view_strips_protected_columns() {
        let t = read_attribute_table("id,A,Male\nx,1,1\ny,0,0\n".as_bytes(), &["Male"]).unwrap();
        let view = t.training_view();
        assert_eq!(view.attribute_names(), &["A".to_string()]);
        assert!(matches!(view.column("Male"), Err(Error::Firewall(_))));
        assert!(matches!(view.column("Nope"), Err(Error::Config(_))));
        assert_eq!(t.evaluation_view().column("Male").unwrap(), vec![1, 0]);
    }

    #[test]
    fn csv_round_trip() {
        let t = read_attribute_table("id,A,B\nx,1,0\ny,0,1\n".as_bytes(), &["B"]).unwrap();
        let back = read_attribute_table(t.to_csv().as_bytes(), &["B"]).unwrap();
        assert_eq!(back, t);
    }
}
