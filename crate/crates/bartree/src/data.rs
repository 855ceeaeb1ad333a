//! Dataset construction: the block-design simulation study generator and
//! reproducible ingestion of the two UCI-format clinical datasets.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;
use crate::tree::{MoveDescriptor, SplitRule, Tree};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to read input file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}, column {col}: cannot parse {value:?}")]
    Parse { row: usize, col: String, value: String },
    #[error("row {row}: unknown label {value:?}")]
    UnknownLabel { row: usize, value: String },
    #[error("expected {expected} rows after cleaning, found {actual}; wrong input file?")]
    UnexpectedRowCount { expected: usize, actual: usize },
    #[error("no rows survived ingestion")]
    EmptyDataset,
    #[error("required column {0:?} is missing")]
    MissingColumn(String),
}

/// Which rows of the diabetes file to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SexFilter {
    Male,
    Female,
    All,
}

/// Record of how a dataset was produced; enough to audit every
/// preprocessing step and invert the per-column normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub steps: Vec<String>,
    /// Pre-normalization (min, max) per covariate column; columns with
    /// min == max were mapped to the constant 0.
    pub column_ranges: Vec<(f64, f64)>,
    pub dropped_rows: usize,
}

/// Immutable covariate/response bundle with covariates in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vec<f64>,
    pub names: Vec<String>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.x.n_rows()
    }

    pub fn p(&self) -> usize {
        self.x.n_cols()
    }

    pub fn is_binary(&self) -> bool {
        self.y.iter().all(|&v| v == 0.0 || v == 1.0)
    }
}

/// The three-leaf tree behind the simulation design: x1 <= 0.5 and x2 <= 0.5
/// give mean 1, x1 <= 0.5 and x2 > 0.5 give 3, x1 > 0.5 gives 5.
pub fn generating_tree() -> Tree {
    let mut tree = Tree::leaf(0.0);
    tree.apply_move_in_place(&MoveDescriptor::grow(0, SplitRule::new(0, 0.5))).unwrap();
    let (left, _) = tree.children(tree.root()).unwrap();
    tree.apply_move_in_place(&MoveDescriptor::grow(left, SplitRule::new(1, 0.5))).unwrap();
    let values: Vec<f64> = vec![1.0, 3.0, 5.0];
    tree.set_leaf_values(&values);
    tree
}

/// Simulates the block-design regression dataset: three covariates drawn
/// uniformly on blocks that route exactly a third of the rows to each leaf
/// of the generating tree, plus N(0, sigma^2) response noise.
///
/// `n` must be a positive multiple of 3 so the 2/3 : 1/3 block boundaries
/// land on whole rows; `sigma` is the noise standard deviation (0 gives the
/// noiseless responses {1, 3, 5}).
pub fn simulate_cart<R: Rng + ?Sized>(n: usize, sigma: f64, rng: &mut R) -> Dataset {
    assert!(n >= 3 && n % 3 == 0, "n must be a positive multiple of 3, got {n}");
    assert!(sigma >= 0.0, "sigma must be non-negative");
    let third = n / 3;
    let tree = generating_tree();
    let mut rows = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let x1 = if i < 2 * third { uniform(rng, 0.1, 0.4) } else { uniform(rng, 0.6, 0.9) };
        let x2 = if i < third {
            uniform(rng, 0.1, 0.4)
        } else if i < 2 * third {
            uniform(rng, 0.6, 0.9)
        } else {
            uniform(rng, 0.1, 0.9)
        };
        let x3 = if i < 2 * third { uniform(rng, 0.6, 0.9) } else { uniform(rng, 0.1, 0.4) };
        let row = vec![x1, x2, x3];
        let noise = if sigma == 0.0 { 0.0 } else { sigma * standard_normal(rng) };
        y.push(tree.evaluate(&row) + noise);
        rows.push(row);
    }
    Dataset {
        x: Matrix::from_rows(&rows),
        y,
        names: vec!["x1".into(), "x2".into(), "x3".into()],
        provenance: Provenance {
            source: format!("simulated block design, n = {n}, sigma = {sigma}"),
            steps: vec![
                "x1: U(0.1,0.4) on the first 2/3 of rows, U(0.6,0.9) after".into(),
                "x2: U(0.1,0.4) / U(0.6,0.9) / U(0.1,0.9) by thirds".into(),
                "x3: U(0.6,0.9) on the first 2/3 of rows, U(0.1,0.4) after".into(),
                "y: generating tree mean plus N(0, sigma^2) noise".into(),
            ],
            column_ranges: vec![(0.0, 1.0); 3],
            dropped_rows: 0,
        },
    }
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng)
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Min-max normalizes columns in place, returning the original ranges.
/// Constant columns map to 0.
fn normalize_columns(rows: &mut [Vec<f64>]) -> Vec<(f64, f64)> {
    if rows.is_empty() {
        return Vec::new();
    }
    let p = rows[0].len();
    let mut ranges = Vec::with_capacity(p);
    for j in 0..p {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for row in rows.iter() {
            lo = lo.min(row[j]);
            hi = hi.max(row[j]);
        }
        ranges.push((lo, hi));
        for row in rows.iter_mut() {
            row[j] = if hi > lo { (row[j] - lo) / (hi - lo) } else { 0.0 };
        }
    }
    ranges
}

const BREAST_CANCER_COLUMNS: [&str; 9] = [
    "clump_thickness",
    "uniformity_cell_size",
    "uniformity_cell_shape",
    "marginal_adhesion",
    "single_epithelial_cell_size",
    "bare_nuclei",
    "bland_chromatin",
    "normal_nucleoli",
    "mitoses",
];

const BREAST_CANCER_CLEAN_ROWS: usize = 683;

/// Loads the original-format breast-cancer file: sample id, nine predictors
/// coded 1-10, and a 2 (benign) / 4 (malignant) class column, with '?' for
/// missing values. Rows with any missing field are dropped; the cleaned file
/// must hold exactly 683 rows (anything else signals the wrong input).
/// Predictors are min-max normalized and y = 1 flags malignant.
pub fn load_breast_cancer(path: &Path) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut rows = Vec::new();
    let mut y = Vec::new();
    let mut dropped = 0usize;
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        let row_no = idx + 1;
        if record.len() != 11 {
            return Err(DataError::Parse {
                row: row_no,
                col: "record".into(),
                value: format!("{} fields, expected 11", record.len()),
            });
        }
        if record.iter().any(|f| f.trim() == "?") {
            dropped += 1;
            continue;
        }
        let mut row = Vec::with_capacity(9);
        for (j, field) in record.iter().enumerate().skip(1).take(9) {
            let v: f64 = field.trim().parse().map_err(|_| DataError::Parse {
                row: row_no,
                col: BREAST_CANCER_COLUMNS[j - 1].into(),
                value: field.into(),
            })?;
            row.push(v);
        }
        let label = record.get(10).unwrap_or("").trim();
        y.push(match label {
            "2" => 0.0,
            "4" => 1.0,
            other => return Err(DataError::UnknownLabel { row: row_no, value: other.into() }),
        });
        rows.push(row);
    }
    if rows.len() != BREAST_CANCER_CLEAN_ROWS {
        return Err(DataError::UnexpectedRowCount {
            expected: BREAST_CANCER_CLEAN_ROWS,
            actual: rows.len(),
        });
    }
    let ranges = normalize_columns(&mut rows);
    Ok(Dataset {
        x: Matrix::from_rows(&rows),
        y,
        names: BREAST_CANCER_COLUMNS.iter().map(|s| s.to_string()).collect(),
        provenance: Provenance {
            source: path.display().to_string(),
            steps: vec![
                format!("dropped {dropped} rows with missing ('?') fields"),
                "dropped the sample id column".into(),
                "min-max normalized the 9 predictors to [0,1]".into(),
                "class 4 (malignant) -> y = 1, class 2 (benign) -> y = 0".into(),
            ],
            column_ranges: ranges,
            dropped_rows: dropped,
        },
    })
}

/// Loads the hospital-readmission diabetes file. Id columns are dropped;
/// categorical variables with 10 or more categories, or with one value in
/// more than 95% of rows, are excluded (computed on the full file, before
/// the sex filter, so male and female runs share one feature space); all
/// numeric columns are kept; surviving categoricals are dummy-encoded with
/// the first sorted category as reference. Everything is min-max normalized
/// on the filtered rows and y = 1 flags readmission within 30 days.
pub fn load_diabetes(path: &Path, sex_filter: SexFilter) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let records: Vec<csv::StringRecord> = reader.records().collect::<Result<_, _>>()?;
    let find = |name: &str| -> Result<usize, DataError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.into()))
    };
    let target_col = find("readmitted")?;
    let gender_col = find("gender")?;
    let id_cols = ["encounter_id", "patient_nbr"];

    // Column typing on the full file: numeric iff every value parses.
    let candidate_cols: Vec<usize> = (0..headers.len())
        .filter(|&j| j != target_col && !id_cols.contains(&headers[j].as_str()))
        .collect();
    let mut numeric_cols = Vec::new();
    let mut categorical_cols = Vec::new();
    for &j in &candidate_cols {
        let numeric = records.iter().all(|r| r.get(j).unwrap_or("").trim().parse::<f64>().is_ok());
        if numeric {
            numeric_cols.push(j);
        } else {
            categorical_cols.push(j);
        }
    }

    // Category filters, evaluated before any row filtering.
    let mut kept_categoricals = Vec::new();
    let mut steps = Vec::new();
    for &j in &categorical_cols {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for r in &records {
            *counts.entry(r.get(j).unwrap_or("").trim()).or_default() += 1;
        }
        let distinct = counts.len();
        let top_share = counts.values().copied().max().unwrap_or(0) as f64 / records.len() as f64;
        if distinct >= 10 {
            steps.push(format!("dropped {}: {distinct} categories", headers[j]));
        } else if top_share > 0.95 {
            steps.push(format!(
                "dropped {}: dominant category share {:.4} > 0.95",
                headers[j], top_share
            ));
        } else {
            kept_categoricals.push((j, counts.keys().map(|s| s.to_string()).collect::<Vec<_>>()));
        }
    }

    // Row filter by sex, then assembly.
    let keep_row = |r: &csv::StringRecord| match sex_filter {
        SexFilter::All => true,
        SexFilter::Male => r.get(gender_col).unwrap_or("").trim() == "Male",
        SexFilter::Female => r.get(gender_col).unwrap_or("").trim() == "Female",
    };
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for (idx, r) in records.iter().enumerate() {
        if !keep_row(r) {
            continue;
        }
        let row_no = idx + 2; // header line is row 1
        let mut row = Vec::new();
        for &j in &numeric_cols {
            let field = r.get(j).unwrap_or("").trim();
            row.push(field.parse::<f64>().map_err(|_| DataError::Parse {
                row: row_no,
                col: headers[j].clone(),
                value: field.into(),
            })?);
        }
        for (j, values) in &kept_categoricals {
            let field = r.get(*j).unwrap_or("").trim();
            let pos = values.iter().position(|v| v == field).ok_or_else(|| {
                DataError::UnknownLabel { row: row_no, value: format!("{}={field}", headers[*j]) }
            })?;
            // k-1 dummies: the first sorted category is the reference.
            for k in 1..values.len() {
                row.push(if pos == k { 1.0 } else { 0.0 });
            }
        }
        let label = r.get(target_col).unwrap_or("").trim();
        y.push(match label {
            "<30" => 1.0,
            ">30" | "NO" => 0.0,
            other => return Err(DataError::UnknownLabel { row: row_no, value: other.into() }),
        });
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(DataError::EmptyDataset);
    }

    let mut names: Vec<String> = numeric_cols.iter().map(|&j| headers[j].clone()).collect();
    for (j, values) in &kept_categoricals {
        for v in &values[1..] {
            names.push(format!("{}={v}", headers[*j]));
        }
    }
    let dropped = records.len() - rows.len();
    let ranges = normalize_columns(&mut rows);
    steps.insert(0, format!("kept {} numeric columns", numeric_cols.len()));
    steps.push(format!(
        "dummy-encoded {} categorical columns (k-1, first category as reference)",
        kept_categoricals.len()
    ));
    steps.push(format!("sex filter {:?}: dropped {dropped} rows", sex_filter));
    steps.push(format!("final feature count: {}", names.len()));
    steps.push("min-max normalized all columns to [0,1]".into());
    Ok(Dataset {
        x: Matrix::from_rows(&rows),
        y,
        names,
        provenance: Provenance {
            source: path.display().to_string(),
            steps,
            column_ranges: ranges,
            dropped_rows: dropped,
        },
    })
}

/// Writes the normalized dataset as CSV (named covariate columns then `y`)
/// with a provenance JSON sidecar next to it.
pub fn save_dataset(dataset: &Dataset, csv_path: &Path) -> Result<(), DataError> {
    let mut writer = csv::Writer::from_path(csv_path)?;
    let mut header: Vec<String> = dataset.names.clone();
    header.push("y".into());
    writer.write_record(&header)?;
    for i in 0..dataset.n() {
        let mut row: Vec<String> = dataset.x.row(i).iter().map(f64::to_string).collect();
        row.push(dataset.y[i].to_string());
        writer.write_record(&row)?;
    }
    writer.flush()?;
    let sidecar = csv_path.with_extension("provenance.json");
    let json = serde_json::to_string_pretty(&dataset.provenance)
        .map_err(|e| DataError::Io(std::io::Error::other(e)))?;
    std::fs::write(sidecar, json)?;
    Ok(())
}

/// Seeded subsample without replacement, preserving row order.
pub fn subsample<R: Rng + ?Sized>(dataset: &Dataset, k: usize, rng: &mut R) -> Dataset {
    assert!(k >= 1 && k <= dataset.n(), "subsample size {k} out of range");
    // Floyd's algorithm for a uniform k-subset.
    let n = dataset.n();
    let mut chosen = std::collections::BTreeSet::new();
    for j in (n - k)..n {
        let t = rng.random_range(0..=j);
        if !chosen.insert(t) {
            chosen.insert(j);
        }
    }
    let rows: Vec<Vec<f64>> = chosen.iter().map(|&i| dataset.x.row(i).to_vec()).collect();
    let y = chosen.iter().map(|&i| dataset.y[i]).collect();
    let mut provenance = dataset.provenance.clone();
    provenance.steps.push(format!("seeded subsample of {k} of {n} rows"));
    Dataset { x: Matrix::from_rows(&rows), y, names: dataset.names.clone(), provenance }
}
