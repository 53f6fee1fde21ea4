//! CSV ingestion, design-matrix encoding and numeric CSV output.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const INTERCEPT: &str = "(intercept)";

const MISSING: [&str; 4] = ["", "NA", "NaN", "."];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSchema {
    pub response_columns: Vec<String>,
    #[serde(default)]
    pub covariate_columns: Vec<String>,
    /// Categorical covariate name to its baseline level.
    #[serde(default)]
    pub categorical_columns: BTreeMap<String, String>,
    #[serde(default)]
    pub log_transform: Vec<String>,
    #[serde(default = "default_true")]
    pub add_intercept: bool,
}

fn default_true() -> bool {
    true
}

impl DatasetSchema {
    pub fn new(responses: &[&str], covariates: &[&str]) -> Self {
        Self {
            response_columns: responses.iter().map(|s| s.to_string()).collect(),
            covariate_columns: covariates.iter().map(|s| s.to_string()).collect(),
            categorical_columns: BTreeMap::new(),
            log_transform: Vec::new(),
            add_intercept: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.response_columns.is_empty() {
            return Err(Error::InvalidParameter("no response columns declared".into()));
        }
        let responses: BTreeSet<&String> = self.response_columns.iter().collect();
        if responses.len() != self.response_columns.len() {
            return Err(Error::InvalidParameter("duplicate response column".into()));
        }
        let covariates: BTreeSet<&String> = self.covariate_columns.iter().collect();
        if covariates.len() != self.covariate_columns.len() {
            return Err(Error::InvalidParameter("duplicate covariate column".into()));
        }
        if let Some(c) = responses.intersection(&covariates).next() {
            return Err(Error::InvalidParameter(format!("column '{c}' is both a response and a covariate")));
        }
        for name in self.categorical_columns.keys() {
            if !covariates.contains(name) {
                return Err(Error::InvalidParameter(format!("categorical column '{name}' is not a covariate")));
            }
            if self.log_transform.contains(name) {
                return Err(Error::InvalidParameter(format!("cannot log-transform categorical column '{name}'")));
            }
        }
        for name in &self.log_transform {
            if !responses.contains(name) && !covariates.contains(name) {
                return Err(Error::InvalidParameter(format!("log-transformed column '{name}' is not used")));
            }
        }
        Ok(())
    }

    fn is_categorical(&self, name: &str) -> bool {
        self.categorical_columns.contains_key(name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numeric(Vec<f64>),
    Categorical(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: DMatrix<f64>,
    pub response_names: Vec<String>,
    /// Covariates in declaration order.
    pub covariates: Vec<(String, Column)>,
    /// Rows dropped for missing values in used columns.
    pub dropped: usize,
}

fn parse_number(field: &str, column: &str, row: usize) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Data(format!("non-numeric value '{field}' in column '{column}' at row {row}")))
}

pub fn load_csv(path: impl AsRef<Path>, schema: &DatasetSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    read_csv(file, schema)
}

/// Reads a headed CSV. Rows are numbered from 1 after the header in error
/// messages.
pub fn read_csv<R: Read>(reader: R, schema: &DatasetSchema) -> Result<Dataset> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
    let locate = |name: &String| {
        index.get(name.as_str()).copied().ok_or_else(|| Error::Data(format!("missing column '{name}'")))
    };
    let resp_idx = schema.response_columns.iter().map(locate).collect::<Result<Vec<_>>>()?;
    let cov_idx = schema.covariate_columns.iter().map(locate).collect::<Result<Vec<_>>>()?;
    let used: Vec<usize> = resp_idx.iter().chain(cov_idx.iter()).copied().collect();

    let p = resp_idx.len();
    let mut y_rows: Vec<f64> = Vec::new();
    let mut cols: Vec<Column> = schema
        .covariate_columns
        .iter()
        .map(|c| if schema.is_categorical(c) { Column::Categorical(Vec::new()) } else { Column::Numeric(Vec::new()) })
        .collect();
    let mut dropped = 0;
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row = r + 1;
        if used.iter().any(|&i| MISSING.contains(&record.get(i).unwrap_or("").trim())) {
            dropped += 1;
            continue;
        }
        for (j, &i) in resp_idx.iter().enumerate() {
            let name = &schema.response_columns[j];
            let v = transform(parse_number(&record[i], name, row)?, name, row, schema)?;
            y_rows.push(v);
        }
        for (j, &i) in cov_idx.iter().enumerate() {
            let name = &schema.covariate_columns[j];
            match &mut cols[j] {
                Column::Numeric(v) => v.push(transform(parse_number(&record[i], name, row)?, name, row, schema)?),
                Column::Categorical(v) => v.push(record[i].trim().to_string()),
            }
        }
    }
    if dropped > 0 {
        log::info!("dropped {dropped} rows with missing values");
    }
    let n = y_rows.len() / p;
    if n == 0 {
        return Err(Error::Data("no complete rows".into()));
    }
    let y = DMatrix::from_row_slice(n, p, &y_rows);
    let covariates = schema.covariate_columns.iter().cloned().zip(cols).collect();
    Ok(Dataset { y, response_names: schema.response_columns.clone(), covariates, dropped })
}

fn transform(v: f64, name: &str, row: usize, schema: &DatasetSchema) -> Result<f64> {
    if !schema.log_transform.iter().any(|c| c == name) {
        return Ok(v);
    }
    if v <= 0.0 {
        return Err(Error::Data(format!("cannot take the log of {v} in column '{name}' at row {row}")));
    }
    Ok(v.ln())
}

/// Design matrix with the intercept first, numeric covariates as they are and
/// one indicator per non-baseline level (levels in lexicographic order).
pub fn encode_design(dataset: &Dataset, schema: &DatasetSchema) -> Result<(DMatrix<f64>, Vec<String>)> {
    let n = dataset.y.nrows();
    let mut names = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    if schema.add_intercept {
        names.push(INTERCEPT.to_string());
        columns.push(vec![1.0; n]);
    }
    for (name, column) in &dataset.covariates {
        match column {
            Column::Numeric(v) => {
                names.push(name.clone());
                columns.push(v.clone());
            }
            Column::Categorical(v) => {
                let baseline = schema
                    .categorical_columns
                    .get(name)
                    .ok_or_else(|| Error::InvalidParameter(format!("no baseline for '{name}'")))?;
                let levels: BTreeSet<&String> = v.iter().collect();
                if levels.len() < 2 {
                    return Err(Error::Data(format!("categorical column '{name}' has a single level")));
                }
                if !levels.contains(baseline) {
                    return Err(Error::Data(format!("baseline '{baseline}' does not occur in column '{name}'")));
                }
                for level in levels.into_iter().filter(|l| *l != baseline) {
                    names.push(format!("{name}={level}"));
                    columns.push(v.iter().map(|x| f64::from(u8::from(x == level))).collect());
                }
            }
        }
    }
    let x = DMatrix::from_fn(n, columns.len(), |i, j| columns[j][i]);
    Ok((x, names))
}

/// Fixed 17-significant-digit representation; parses back to the same value.
pub fn format_number(v: f64) -> String {
    format!("{v:.16e}")
}

/// Matrix as CSV with a header row.
pub fn write_matrix_csv<W: Write>(out: W, headers: &[String], m: &DMatrix<f64>) -> Result<()> {
    if headers.len() != m.ncols() {
        return Err(Error::Dimension("header count does not match the matrix".into()));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(headers)?;
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|v| format_number(*v)))?;
    }
    w.flush()?;
    Ok(())
}

/// Rows of already formatted fields under a header.
pub fn write_table<W: Write>(out: W, headers: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(headers)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> DatasetSchema {
        DatasetSchema::new(&["y1", "y2"], &["x"])
    }

    #[test]
    fn three_rows() {
        let d = read_csv("y1,y2,x\n1,2,3\n4,5,6\n7,8,9\n".as_bytes(), &schema()).unwrap();
        assert_eq!(d.y.shape(), (3, 2));
        assert_eq!(d.covariates.len(), 1);
        assert_eq!(d.y[(2, 1)], 8.0);
    }

    #[test]
    fn missing_column_is_named() {
        let e = read_csv("y1,x\n1,2\n".as_bytes(), &schema()).unwrap_err();
        assert!(e.to_string().contains("'y2'"), "{e}");
    }

    #[test]
    fn log_of_zero_names_row() {
        let mut s = schema();
        s.log_transform = vec!["y1".into()];
        let e = read_csv("y1,y2,x\n1,2,3\n0,5,6\n".as_bytes(), &s).unwrap_err();
        assert!(e.to_string().contains("row 2"), "{e}");
        let ok = read_csv("y1,y2,x\n1,2,3\n".as_bytes(), &s).unwrap();
        assert_eq!(ok.y[(0, 0)], 0.0);
    }

    #[test]
    fn missing_values_dropped() {
        let d = read_csv("y1,y2,x,unused\n1,2,3,\n,5,6,1\n7,NA,9,1\n1,1,1,1\n".as_bytes(), &schema()).unwrap();
        assert_eq!(d.y.nrows(), 2);
        assert_eq!(d.dropped, 2);
    }

    #[test]
    fn non_numeric_response() {
        assert!(matches!(read_csv("y1,y2,x\na,2,3\n".as_bytes(), &schema()), Err(Error::Data(_))));
    }

    #[test]
    fn overlapping_roles_rejected() {
        let s = DatasetSchema::new(&["y1"], &["y1"]);
        assert!(s.validate().is_err());
    }

    #[test]
    fn dummy_coding() {
        let mut s = DatasetSchema::new(&["y"], &["age", "area"]);
        s.categorical_columns.insert("area".into(), "north".into());
        let csv = "y,age,area\n1,30,south\n2,40,north\n3,50,centre\n4,60,south\n";
        let d = read_csv(csv.as_bytes(), &s).unwrap();
        let (x, names) = encode_design(&d, &s).unwrap();
        assert_eq!(names, vec!["(intercept)", "age", "area=centre", "area=south"]);
        assert_eq!(x.column(2).as_slice(), &[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(x.column(3).as_slice(), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(encode_design(&d, &s).unwrap().1, names);
    }

    #[test]
    fn numeric_design_width() {
        let s = DatasetSchema::new(&["y"], &["a", "b"]);
        let d = read_csv("y,a,b\n1,2,3\n4,5,6\n".as_bytes(), &s).unwrap();
        assert_eq!(encode_design(&d, &s).unwrap().0.ncols(), 3);
    }

    #[test]
    fn single_level_rejected() {
        let mut s = DatasetSchema::new(&["y"], &["g"]);
        s.categorical_columns.insert("g".into(), "a".into());
        let d = read_csv("y,g\n1,a\n2,a\n".as_bytes(), &s).unwrap();
        assert!(encode_design(&d, &s).is_err());
    }

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, -1.0 / 3.0, 1e-300, 123_456_789.123_456_78, f64::MIN_POSITIVE] {
            assert_eq!(format_number(v).parse::<f64>().unwrap(), v);
        }
        let m = DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 1.0 / 7.0, -2.5]);
        let mut buf = Vec::new();
        write_matrix_csv(&mut buf, &["y1".into(), "y2".into()], &m).unwrap();
        let d = read_csv(buf.as_slice(), &DatasetSchema::new(&["y1", "y2"], &[])).unwrap();
        assert_eq!(d.y, m);
    }
}
