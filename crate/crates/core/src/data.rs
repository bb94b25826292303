//! Dense containers, fold assignment and the Gram precomputation shared by
//! every estimator.
//!
//! Matrices are `nalgebra` column-major `DMatrix<f64>`, which gives the
//! coordinate-descent solver contiguous access to each feature column.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A response vector paired with its covariate matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl DataSet {
    /// Builds a dataset, checking that shapes conform and every entry is finite.
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::invalid(format!(
                "design has {} rows but response has length {}",
                x.nrows(),
                y.len()
            )));
        }
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::invalid("dataset must have n >= 1 and p >= 1"));
        }
        if !all_finite(x.as_slice()) || !all_finite(y.as_slice()) {
            return Err(Error::invalid("dataset contains non-finite entries"));
        }
        Ok(DataSet { x, y })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn into_parts(self) -> (DMatrix<f64>, DVector<f64>) {
        (self.x, self.y)
    }

    /// Rows selected by `rows`, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        DataSet::new(self.x.select_rows(rows), self.y.select_rows(rows))
    }

    /// Reads the `y,x1,...,xp` CSV layout.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(false)
            .from_reader(BufReader::new(file));

        let headers = reader
            .headers()
            .map_err(|e| Error::parse(path, e.to_string()))?
            .clone();
        if headers.len() < 2 {
            return Err(Error::parse(path, "expected a `y` column and at least one covariate"));
        }
        if headers.get(0).map(str::trim) != Some("y") {
            return Err(Error::parse(path, "first column must be named `y`"));
        }
        for (j, name) in headers.iter().enumerate().skip(1) {
            if name.trim() != format!("x{j}") {
                return Err(Error::parse(
                    path,
                    format!("column {} is named `{name}`, expected `x{j}`", j + 1),
                ));
            }
        }
        let p = headers.len() - 1;

        let mut ys = Vec::new();
        let mut rows = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::parse(path, e.to_string()))?;
            let mut values = record.iter().map(|field| {
                field.trim().parse::<f64>().map_err(|e| {
                    Error::parse(path, format!("record {}: `{field}`: {e}", line + 1))
                })
            });
            ys.push(values.next().expect("record has a y field")?);
            for v in values {
                rows.push(v?);
            }
        }
        if ys.is_empty() {
            return Err(Error::parse(path, "no data rows"));
        }
        let n = ys.len();
        let x = DMatrix::from_row_slice(n, p, &rows);
        DataSet::new(x, DVector::from_vec(ys)).map_err(|e| Error::parse(path, e.to_string()))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        write!(w, "y").map_err(io)?;
        for j in 1..=self.p() {
            write!(w, ",x{j}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
        for i in 0..self.n() {
            write!(w, "{:?}", self.y[i]).map_err(io)?;
            for j in 0..self.p() {
                write!(w, ",{:?}", self.x[(i, j)]).map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

fn all_finite(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite())
}

/// Fold label for every observation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    fold_index: Vec<usize>,
    folds: usize,
}

impl FoldAssignment {
    pub fn fold_of(&self, i: usize) -> usize {
        self.fold_index[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.fold_index
    }

    pub fn num_folds(&self) -> usize {
        self.folds
    }

    /// Indices belonging to `fold`, ascending.
    pub fn held_out(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_index.len())
            .filter(|&i| self.fold_index[i] == fold)
            .collect()
    }

    /// Indices not in `fold`, ascending.
    pub fn training(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_index.len())
            .filter(|&i| self.fold_index[i] != fold)
            .collect()
    }
}

/// Seeded shuffle followed by round-robin labelling, so fold sizes differ by at
/// most one.
pub fn make_folds(n: usize, folds: usize, seed: u64) -> Result<FoldAssignment> {
    if folds < 2 || folds > n {
        return Err(Error::invalid(format!(
            "fold count must satisfy 2 <= F <= n, got F = {folds}, n = {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_index = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        fold_index[i] = rank % folds;
    }
    Ok(FoldAssignment { fold_index, folds })
}

/// `XᵀX/n` and `Xᵀy/n` for a design.
#[derive(Debug, Clone, PartialEq)]
pub struct Gram {
    pub xtx: DMatrix<f64>,
    pub xty: DVector<f64>,
    pub n: usize,
}

pub fn gram_products(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<Gram> {
    if x.nrows() != y.len() {
        return Err(Error::invalid(format!(
            "design has {} rows but response has length {}",
            x.nrows(),
            y.len()
        )));
    }
    if x.nrows() == 0 {
        return Err(Error::invalid("empty design"));
    }
    if !all_finite(x.as_slice()) || !all_finite(y.as_slice()) {
        return Err(Error::invalid("non-finite entries in design or response"));
    }
    let n = x.nrows();
    let scale = 1.0 / n as f64;
    let mut xtx = x.tr_mul(x) * scale;
    symmetrize(&mut xtx);
    let xty = x.tr_mul(y) * scale;
    Ok(Gram { xtx, xty, n })
}

/// Copies the upper triangle onto the lower one.
pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let p = m.nrows();
    for j in 0..p {
        for i in (j + 1)..p {
            m[(i, j)] = m[(j, i)];
        }
    }
}

/// Column centering and scaling learned from one dataset.
///
/// Simulated designs are mean-zero and are used as-is; this is only applied
/// to real data on request.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub x_mean: DVector<f64>,
    pub x_scale: DVector<f64>,
    pub y_mean: f64,
}

impl Standardizer {
    pub fn fit(data: &DataSet) -> Self {
        let n = data.n() as f64;
        let p = data.p();
        let mut x_mean = DVector::zeros(p);
        let mut x_scale = DVector::from_element(p, 1.0);
        for j in 0..p {
            let col = data.x().column(j);
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            x_mean[j] = mean;
            if var > 0.0 {
                x_scale[j] = var.sqrt();
            }
        }
        Standardizer {
            x_mean,
            x_scale,
            y_mean: data.y().mean(),
        }
    }

    pub fn transform(&self, data: &DataSet) -> Result<DataSet> {
        DataSet::new(self.transform_x(data.x())?, data.y().add_scalar(-self.y_mean))
    }

    pub fn transform_x(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.x_mean.len() {
            return Err(Error::invalid("column count does not match the fitted standardizer"));
        }
        let mut out = x.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col.add_scalar_mut(-self.x_mean[j]);
            col /= self.x_scale[j];
        }
        Ok(out)
    }

    /// Predictions on the original response scale for coefficients fitted on
    /// standardized data.
    pub fn predict(&self, x: &DMatrix<f64>, beta: &DVector<f64>) -> Result<DVector<f64>> {
        Ok((self.transform_x(x)? * beta).add_scalar(self.y_mean))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fold_sizes(f: &FoldAssignment) -> Vec<usize> {
        let mut sizes = vec![0; f.num_folds()];
        for &k in f.as_slice() {
            sizes[k] += 1;
        }
        sizes
    }

    #[test]
    fn two_folds_of_two() {
        let f = make_folds(4, 2, 0).unwrap();
        assert_eq!(fold_sizes(&f), vec![2, 2]);
    }

    #[test]
    fn leave_one_out() {
        let f = make_folds(5, 5, 7).unwrap();
        assert_eq!(fold_sizes(&f), vec![1; 5]);
    }

    #[test]
    fn folds_are_deterministic() {
        assert_eq!(make_folds(100, 5, 1).unwrap(), make_folds(100, 5, 1).unwrap());
        assert_ne!(make_folds(100, 5, 1).unwrap(), make_folds(100, 5, 2).unwrap());
    }

    #[test]
    fn fold_count_bounds() {
        assert!(matches!(make_folds(3, 4, 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(make_folds(3, 1, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn training_and_held_out_partition() {
        let f = make_folds(23, 5, 3).unwrap();
        for k in 0..5 {
            let mut all = f.training(k);
            all.extend(f.held_out(k));
            all.sort_unstable();
            assert_eq!(all, (0..23).collect::<Vec<_>>());
        }
    }

    #[test]
    fn gram_of_identity() {
        let g = gram_products(&DMatrix::identity(2, 2), &DVector::from_vec(vec![1.0, 2.0])).unwrap();
        assert_eq!(g.xtx, DMatrix::identity(2, 2) * 0.5);
        assert_eq!(g.xty, DVector::from_vec(vec![0.5, 1.0]));
    }

    #[test]
    fn gram_of_zeros() {
        let g = gram_products(&DMatrix::zeros(3, 2), &DVector::zeros(3)).unwrap();
        assert_eq!(g.xtx, DMatrix::zeros(2, 2));
        assert_eq!(g.xty, DVector::zeros(2));
    }

    #[test]
    fn gram_matches_triple_loop() {
        #[rustfmt::skip]
        let x = DMatrix::from_row_slice(5, 3, &[
            0.3, -1.2, 2.0,
            1.1, 0.4, -0.7,
            -0.5, 0.9, 0.1,
            2.2, -0.3, 1.5,
            0.0, 1.7, -1.1,
        ]);
        let y = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0, -0.25]);
        let g = gram_products(&x, &y).unwrap();
        for a in 0..3 {
            let mut xy = 0.0;
            for i in 0..5 {
                xy += x[(i, a)] * y[i];
            }
            assert!((g.xty[a] - xy / 5.0).abs() < 1e-14);
            for b in 0..3 {
                let mut s = 0.0;
                for i in 0..5 {
                    s += x[(i, a)] * x[(i, b)];
                }
                assert!((g.xtx[(a, b)] - s / 5.0).abs() < 1e-14);
            }
        }
        assert_eq!(g.xtx, g.xtx.transpose());
    }

    #[test]
    fn gram_rejects_non_finite() {
        let mut x = DMatrix::zeros(2, 2);
        x[(0, 1)] = f64::NAN;
        assert!(gram_products(&x, &DVector::zeros(2)).is_err());
    }

    #[test]
    fn dataset_rejects_mismatch() {
        assert!(DataSet::new(DMatrix::zeros(3, 2), DVector::zeros(2)).is_err());
        assert!(DataSet::new(DMatrix::zeros(0, 2), DVector::zeros(0)).is_err());
    }

    #[test]
    fn csv_round_trip_and_ragged_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let data = DataSet::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 2.5, -3.0, 0.125]),
            DVector::from_vec(vec![0.1, -7.0]),
        )
        .unwrap();
        data.write_csv(&path).unwrap();
        assert_eq!(DataSet::read_csv(&path).unwrap(), data);

        std::fs::write(&path, "y,x1,x2\n1,2,3\n4,5\n").unwrap();
        assert!(matches!(DataSet::read_csv(&path), Err(Error::Parse { .. })));

        std::fs::write(&path, "z,x1\n1,2\n").unwrap();
        assert!(DataSet::read_csv(&path).is_err());
    }

    #[test]
    fn standardizer_centers_and_scales() {
        let data = DataSet::new(
            DMatrix::from_row_slice(3, 2, &[1.0, 5.0, 2.0, 5.0, 3.0, 5.0]),
            DVector::from_vec(vec![1.0, 2.0, 6.0]),
        )
        .unwrap();
        let s = Standardizer::fit(&data);
        let t = s.transform(&data).unwrap();
        assert!(t.x().column(0).sum().abs() < 1e-12);
        let var: f64 = t.x().column(0).iter().map(|v| v * v).sum::<f64>() / 3.0;
        assert!((var - 1.0).abs() < 1e-12);
        // constant column stays finite
        assert_eq!(t.x().column(1).sum(), 0.0);
        assert!((t.y().sum()).abs() < 1e-12);
    }
}
