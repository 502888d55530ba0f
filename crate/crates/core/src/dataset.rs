//! Tabular dataset loading, validation, summaries, and seeded row sampling.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{rng, stats};

/// Column names of the canonical California Housing CSV, target last.
pub const CANONICAL_COLUMNS: [&str; 9] = [
    "MedInc",
    "HouseAge",
    "AveRooms",
    "AveBedrms",
    "Population",
    "AveOccup",
    "Latitude",
    "Longitude",
    "MedHouseVal",
];

pub const CANONICAL_TARGET: &str = "MedHouseVal";

/// Feature matrix plus target with named columns.
///
/// `row_ids` records, for every row, its index in the originally loaded
/// file so that splits and subsets can be audited.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<String>,
    target: String,
    x: Array2<f64>,
    y: Array1<f64>,
    row_ids: Vec<usize>,
    provenance: String,
}

impl Dataset {
    /// Builds a dataset, checking shape, names, and finiteness. Duplicate
    /// rows are only rejected by [`load_csv`] and [`Dataset::check_duplicates`],
    /// since column selection can legitimately make rows coincide.
    pub fn new(
        columns: Vec<String>,
        target: impl Into<String>,
        x: Array2<f64>,
        y: Array1<f64>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let n = x.nrows();
        let row_ids = (0..n).collect();
        Self::with_row_ids(columns, target, x, y, row_ids, provenance)
    }

    pub fn with_row_ids(
        columns: Vec<String>,
        target: impl Into<String>,
        x: Array2<f64>,
        y: Array1<f64>,
        row_ids: Vec<usize>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::EmptyDataset);
        }
        if x.ncols() == 0 || x.ncols() != columns.len() {
            return Err(Error::DimensionMismatch {
                expected: columns.len(),
                found: x.ncols(),
            });
        }
        if y.len() != x.nrows() || row_ids.len() != x.nrows() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                found: y.len().min(row_ids.len()),
            });
        }
        let mut seen = HashSet::new();
        for c in &columns {
            if !seen.insert(c.as_str()) {
                return Err(Error::DuplicateColumn(c.clone()));
            }
        }
        for ((row, col), v) in x.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::MissingValue {
                    row,
                    col: columns[col].clone(),
                });
            }
        }
        let target = target.into();
        if let Some(row) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::MissingValue { row, col: target });
        }
        Ok(Dataset {
            columns,
            target,
            x,
            y,
            row_ids,
            provenance: provenance.into(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.x.ncols()
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn target_name(&self) -> &str {
        &self.target
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn y(&self) -> &Array1<f64> {
        &self.y
    }

    pub fn row_ids(&self) -> &[usize] {
        &self.row_ids
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<ArrayView1<'_, f64>> {
        self.column_index(name).map(|j| self.x.column(j))
    }

    /// Rows in the given order; lineage follows the rows.
    pub fn select_rows(&self, rows: &[usize], note: &str) -> Dataset {
        Dataset {
            columns: self.columns.clone(),
            target: self.target.clone(),
            x: self.x.select(Axis(0), rows),
            y: self.y.select(Axis(0), rows),
            row_ids: rows.iter().map(|&r| self.row_ids[r]).collect(),
            provenance: format!("{} | {}", self.provenance, note),
        }
    }

    /// Same rows and target, different feature matrix.
    pub fn with_features(&self, columns: Vec<String>, x: Array2<f64>, note: &str) -> Result<Dataset> {
        Dataset::with_row_ids(
            columns,
            self.target.clone(),
            x,
            self.y.clone(),
            self.row_ids.clone(),
            format!("{} | {}", self.provenance, note),
        )
    }

    /// Same rows and features, different target values.
    pub fn with_target(&self, y: Array1<f64>) -> Result<Dataset> {
        Dataset::with_row_ids(
            self.columns.clone(),
            self.target.clone(),
            self.x.clone(),
            y,
            self.row_ids.clone(),
            self.provenance.clone(),
        )
    }

    /// Rejects exact (bitwise) duplicate rows over features and target.
    pub fn check_duplicates(&self) -> Result<()> {
        let mut first: HashMap<Vec<u64>, usize> = HashMap::with_capacity(self.n_rows());
        let mut dups = Vec::new();
        for (i, row) in self.x.rows().into_iter().enumerate() {
            let mut key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
            key.push(self.y[i].to_bits());
            if let Some(&j) = first.get(&key) {
                dups.push(j);
                dups.push(i);
            } else {
                first.insert(key, i);
            }
        }
        if dups.is_empty() {
            Ok(())
        } else {
            dups.sort_unstable();
            dups.dedup();
            Err(Error::DuplicateRows(dups))
        }
    }
}

/// Reads a headered numeric CSV. Every column other than `target_column`
/// becomes a feature, in file order.
pub fn load_csv(path: impl AsRef<Path>, target_column: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let ds = read_csv(file, target_column, &path.display().to_string())?;
    log::debug!("loaded {} rows x {} features from {}", ds.n_rows(), ds.n_cols(), path.display());
    Ok(ds)
}

pub fn read_csv<R: std::io::Read>(reader: R, target_column: &str, source: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::ParseError {
            row: 0,
            col: String::new(),
            detail: e.to_string(),
        })?
        .iter()
        .map(str::to_owned)
        .collect();
    let target_idx = header
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| Error::UnknownTarget(target_column.to_owned()))?;
    let feature_cols: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != target_idx)
        .map(|(_, h)| h.clone())
        .collect();

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::ParseError {
            row,
            col: String::new(),
            detail: e.to_string(),
        })?;
        if rec.len() != header.len() {
            return Err(Error::ParseError {
                row,
                col: String::new(),
                detail: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        for (j, cell) in rec.iter().enumerate() {
            let col = || header[j].clone();
            if cell.is_empty() {
                return Err(Error::MissingValue { row, col: col() });
            }
            let v: f64 = cell.parse().map_err(|e: std::num::ParseFloatError| Error::ParseError {
                row,
                col: col(),
                detail: e.to_string(),
            })?;
            if v.is_nan() {
                return Err(Error::MissingValue { row, col: col() });
            }
            if !v.is_finite() {
                return Err(Error::ParseError {
                    row,
                    col: col(),
                    detail: "non-finite value".into(),
                });
            }
            if j == target_idx {
                ys.push(v);
            } else {
                xs.push(v);
            }
        }
    }
    let n = ys.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let x = Array2::from_shape_vec((n, feature_cols.len()), xs)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let ds = Dataset::new(feature_cols, target_column, x, Array1::from(ys), source)?;
    ds.check_duplicates()?;
    Ok(ds)
}

/// Writes features then target, in column order, with round-trip float formatting.
pub fn write_csv<W: std::io::Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = ds.columns.iter().map(String::as_str).collect();
    header.push(&ds.target);
    let to_err = |e: csv::Error| Error::InvalidArgument(e.to_string());
    w.write_record(&header).map_err(to_err)?;
    for (row, y) in ds.x.rows().into_iter().zip(ds.y.iter()) {
        let rec: Vec<String> = row.iter().chain(std::iter::once(y)).map(|v| format!("{v:?}")).collect();
        w.write_record(&rec).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSummary {
    pub name: String,
    pub mean: f64,
    pub median: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub q1: f64,
    pub q3: f64,
}

impl ColumnSummary {
    pub fn of(name: &str, values: &[f64]) -> Self {
        let sorted = stats::sorted_copy(values);
        ColumnSummary {
            name: name.to_owned(),
            mean: stats::mean(values),
            median: stats::quantile_sorted(&sorted, 0.5),
            std: stats::std_dev(values),
            min: sorted[0],
            max: sorted[sorted.len() - 1],
            q1: stats::quantile_sorted(&sorted, 0.25),
            q3: stats::quantile_sorted(&sorted, 0.75),
        }
    }
}

/// One summary per feature column, then one for the target.
pub fn summary_stats(ds: &Dataset) -> Vec<ColumnSummary> {
    let mut out: Vec<ColumnSummary> = ds
        .columns
        .iter()
        .enumerate()
        .map(|(j, name)| ColumnSummary::of(name, &ds.x.column(j).to_vec()))
        .collect();
    out.push(ColumnSummary::of(&ds.target, &ds.y.to_vec()));
    out
}

/// Pearson correlation matrix over the feature columns, optionally with the
/// target appended as the last row/column. Zero-variance columns correlate 0
/// with everything else; the diagonal is always exactly 1.
pub fn correlation_matrix(ds: &Dataset, include_target: bool) -> Array2<f64> {
    let mut cols: Vec<Vec<f64>> = (0..ds.n_cols()).map(|j| ds.x.column(j).to_vec()).collect();
    if include_target {
        cols.push(ds.y.to_vec());
    }
    let d = cols.len();
    let mut r = Array2::<f64>::eye(d);
    for i in 0..d {
        for j in (i + 1)..d {
            let v = stats::pearson(&cols[i], &cols[j]);
            r[[i, j]] = v;
            r[[j, i]] = v;
        }
    }
    r
}

/// Column names matching the rows of [`correlation_matrix`].
pub fn correlation_labels(ds: &Dataset, include_target: bool) -> Vec<String> {
    let mut names = ds.columns.clone();
    if include_target {
        names.push(ds.target.clone());
    }
    names
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitPair {
    pub train: Dataset,
    pub test: Dataset,
    pub test_fraction: f64,
    pub n_bins: usize,
    pub seed: u64,
}

/// Quantile-bin index for each target value: bin b holds values in
/// (edge_b, edge_{b+1}], with the minimum falling in bin 0.
pub fn quantile_bins(y: &[f64], n_bins: usize) -> (Vec<f64>, Vec<usize>) {
    let sorted = stats::sorted_copy(y);
    let edges: Vec<f64> = (0..=n_bins)
        .map(|b| stats::quantile_sorted(&sorted, b as f64 / n_bins as f64))
        .collect();
    let interior = &edges[1..n_bins];
    let bins = y.iter().map(|&v| interior.partition_point(|&e| e < v)).collect();
    (edges, bins)
}

/// Train/test split stratified on target quantile bins.
///
/// Bin edges are quantiles of the parent target. Each bin is shuffled by one
/// seeded generator (bins visited in order) and its first `q_b` rows go to
/// test, where the `q_b` are a largest-remainder apportionment of
/// `ceil(test_fraction * n)`. Both halves keep parent row order.
pub fn stratified_split(ds: &Dataset, test_fraction: f64, n_bins: usize, seed: u64) -> Result<SplitPair> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("test_fraction {test_fraction} not in (0,1)")));
    }
    if n_bins < 2 {
        return Err(Error::InvalidArgument("n_bins must be at least 2".into()));
    }
    let y = ds.y.to_vec();
    let (_, bins) = quantile_bins(&y, n_bins);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_bins];
    for (i, &b) in bins.iter().enumerate() {
        members[b].push(i);
    }
    if let Some(b) = members.iter().position(|m| m.len() < 2) {
        return Err(Error::BinTooSmall(b));
    }

    let n = ds.n_rows();
    let n_test = ((test_fraction * n as f64) - 1e-9).ceil().max(1.0) as usize;
    let quotas: Vec<f64> = members.iter().map(|m| test_fraction * m.len() as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..n_bins).collect();
    // largest fractional remainder first, lower bin index on ties
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut assigned: usize = counts.iter().sum();
    for &b in order.iter().cycle().take(n_bins * 2) {
        if assigned >= n_test {
            break;
        }
        if counts[b] < members[b].len() {
            counts[b] += 1;
            assigned += 1;
        }
    }

    let mut rng = rng::seeded(seed);
    let mut test_rows = Vec::with_capacity(n_test);
    let mut train_rows = Vec::with_capacity(n - n_test);
    for (b, m) in members.iter_mut().enumerate() {
        m.shuffle(&mut rng);
        test_rows.extend_from_slice(&m[..counts[b]]);
        train_rows.extend_from_slice(&m[counts[b]..]);
    }
    test_rows.sort_unstable();
    train_rows.sort_unstable();

    let note = |part: &str| format!("stratified_split(test={test_fraction}, bins={n_bins}, seed={seed}):{part}");
    Ok(SplitPair {
        train: ds.select_rows(&train_rows, &note("train")),
        test: ds.select_rows(&test_rows, &note("test")),
        test_fraction,
        n_bins,
        seed,
    })
}

/// Uniform sample of `n` rows without replacement, in sampled order.
/// Hex SHA-256 of a row-id sequence, for auditing that two consumers saw
/// the same rows in the same order.
pub fn rows_digest(ids: &[usize]) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for &i in ids {
        h.update((i as u64).to_le_bytes());
    }
    hex::encode(h.finalize())
}

pub fn sample_subset(ds: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || n > ds.n_rows() {
        return Err(Error::SubsetTooLarge {
            requested: n,
            available: ds.n_rows(),
        });
    }
    let mut rng = rng::seeded(seed);
    let rows = rand::seq::index::sample(&mut rng, ds.n_rows(), n).into_vec();
    Ok(ds.select_rows(&rows, &format!("subset(n={n}, seed={seed})")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy(n: usize) -> Dataset {
        let x = Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f64);
        let y = Array1::from_shape_fn(n, |i| i as f64);
        Dataset::new(vec!["a".into(), "b".into()], "y", x, y, "toy").unwrap()
    }

    #[test]
    fn loads_minimal_csv() {
        let ds = read_csv("a,b,y\n1,2,3\n".as_bytes(), "y", "mem").unwrap();
        assert_eq!(ds.n_rows(), 1);
        assert_eq!(ds.n_cols(), 2);
        assert_eq!(ds.y().to_vec(), vec![3.0]);
        assert_eq!(ds.columns(), &["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn rejects_empty_cell() {
        let err = read_csv("a,b,y\n1,,3\n".as_bytes(), "y", "mem").unwrap_err();
        assert!(matches!(err, Error::MissingValue { row: 0, ref col } if col == "b"), "{err}");
    }

    #[test]
    fn rejects_unknown_target_and_bad_numbers() {
        assert!(matches!(
            read_csv("a,b\n1,2\n".as_bytes(), "y", "mem"),
            Err(Error::UnknownTarget(_))
        ));
        assert!(matches!(
            read_csv("a,y\n1,x\n".as_bytes(), "y", "mem"),
            Err(Error::ParseError { row: 0, .. })
        ));
        assert!(matches!(
            read_csv("a,y\nNaN,1\n".as_bytes(), "y", "mem"),
            Err(Error::MissingValue { .. })
        ));
    }

    #[test]
    fn rejects_duplicate_rows() {
        let err = read_csv("a,y\n1,2\n3,4\n1,2\n".as_bytes(), "y", "mem").unwrap_err();
        match err {
            Error::DuplicateRows(rows) => assert_eq!(rows, vec![0, 2]),
            e => panic!("{e}"),
        }
        // same features, different target: not a duplicate
        assert!(read_csv("a,y\n1,2\n1,3\n".as_bytes(), "y", "mem").is_ok());
    }

    #[test]
    fn constant_column_summary() {
        let s = ColumnSummary::of("c", &[5.0, 5.0, 5.0]);
        assert_eq!((s.mean, s.std, s.q1, s.q3, s.median), (5.0, 0.0, 5.0, 5.0, 5.0));
    }

    #[test]
    fn perfect_linear_correlation() {
        let x = array![[1.0], [2.0], [3.0]];
        let ds = Dataset::new(vec!["x".into()], "y", x, array![2.0, 4.0, 6.0], "t").unwrap();
        let r = correlation_matrix(&ds, true);
        assert!((r[[0, 1]] - 1.0).abs() < 1e-15);
        assert_eq!(r[[0, 0]], 1.0);
    }

    #[test]
    fn ten_rows_two_bins_half_split() {
        let ds = toy(10);
        let sp = stratified_split(&ds, 0.5, 2, 42).unwrap();
        assert_eq!(sp.train.n_rows(), 5);
        assert_eq!(sp.test.n_rows(), 5);
        // y 0..4 in bin 0, 5..9 in bin 1; each contributes 2 or 3
        let low = sp.test.y().iter().filter(|&&v| v <= 4.0).count();
        assert!((2..=3).contains(&low));
    }

    #[test]
    fn bin_too_small() {
        let ds = toy(3);
        assert!(matches!(stratified_split(&ds, 0.3, 3, 1), Err(Error::BinTooSmall(_))));
    }

    #[test]
    fn subset_is_deterministic_permutation() {
        let ds = toy(20);
        let a = sample_subset(&ds, 20, 9).unwrap();
        let b = sample_subset(&ds, 20, 9).unwrap();
        assert_eq!(a.row_ids(), b.row_ids());
        let mut ids = a.row_ids().to_vec();
        ids.sort_unstable();
        assert_eq!(ids, (0..20).collect::<Vec<_>>());
        assert!(matches!(sample_subset(&ds, 21, 9), Err(Error::SubsetTooLarge { .. })));
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let ds = read_csv("a,b,y\n0.1,2.5e-7,3\n-1.25,7,0.3333333333333333\n".as_bytes(), "y", "m").unwrap();
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        let back = read_csv(buf.as_slice(), "y", "m").unwrap();
        assert_eq!(back.x(), ds.x());
        assert_eq!(back.y(), ds.y());
    }
}
