/// Row-compressed sparse matrix.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseMatrix {
    ncols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    pub fn new(ncols: usize) -> Self {
        SparseMatrix {
            ncols,
            row_ptr: vec![0],
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    /// Appends a row; zero coefficients are dropped and duplicate columns summed.
    pub fn push_row(&mut self, entries: impl IntoIterator<Item = (usize, f64)>) -> usize {
        let start = self.cols.len();
        for (c, v) in entries {
            assert!(c < self.ncols, "column {c} out of range {}", self.ncols);
            if v == 0.0 {
                continue;
            }
            self.cols.push(c);
            self.vals.push(v);
        }
        // keep each row sorted by column so downstream code can rely on it
        let mut row: Vec<(usize, f64)> = self.cols[start..]
            .iter()
            .copied()
            .zip(self.vals[start..].iter().copied())
            .collect();
        row.sort_by_key(|e| e.0);
        row.dedup_by(|b, a| {
            if a.0 == b.0 {
                a.1 += b.1;
                true
            } else {
                false
            }
        });
        self.cols.truncate(start);
        self.vals.truncate(start);
        for (c, v) in row {
            if v != 0.0 {
                self.cols.push(c);
                self.vals.push(v);
            }
        }
        self.row_ptr.push(self.cols.len());
        self.row_ptr.len() - 2
    }

    pub fn nrows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[range.clone()]
            .iter()
            .copied()
            .zip(self.vals[range].iter().copied())
    }

    pub fn row_len(&self, r: usize) -> usize {
        self.row_ptr[r + 1] - self.row_ptr[r]
    }

    pub fn values(&self) -> &[f64] {
        &self.vals
    }

    /// `A v`
    pub fn mul(&self, v: &[f64]) -> Vec<f64> {
        (0..self.nrows())
            .map(|r| self.row(r).map(|(c, a)| a * v[c]).sum())
            .collect()
    }

    /// `A' w`
    pub fn mul_t(&self, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        for (r, wr) in w.iter().enumerate() {
            if *wr == 0.0 {
                continue;
            }
            for (c, a) in self.row(r) {
                out[c] += a * wr;
            }
        }
        out
    }

    /// Number of stored entries in each column.
    pub fn col_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.ncols];
        for &c in &self.cols {
            counts[c] += 1;
        }
        counts
    }
}
