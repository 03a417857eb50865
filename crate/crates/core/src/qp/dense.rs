//! Dense symmetric positive-definite factorization for the small blocks the
//! interior-point solver produces.

/// Lower Cholesky factor stored row-major in a full `n * n` buffer.
#[derive(Debug, Clone, Default)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
    /// Pivots that had to be replaced; nonzero means the input was singular
    /// up to roundoff.
    pub patched: usize,
}

// Pivots at or below this fraction of the original diagonal are treated as
// zero and replaced by a huge value, which removes that direction from the
// solve instead of amplifying roundoff.
const PIVOT_REL: f64 = 1e-15;
const HUGE: f64 = 1e128;

impl Cholesky {
    /// Factors the lower triangle of `a` (row-major, `n * n`). The upper
    /// triangle is never read. Consumes the buffer.
    pub fn factor(mut a: Vec<f64>, n: usize) -> Self {
        debug_assert_eq!(a.len(), n * n);
        let mut patched = 0;
        for j in 0..n {
            let (head, tail) = a.split_at_mut(j * n);
            let row_j = &mut tail[..n];
            // finish row j: entries k < j
            for k in 0..j {
                let row_k = &head[k * n..k * n + n];
                let dot = dot(&row_j[..k], &row_k[..k]);
                row_j[k] = (row_j[k] - dot) / row_k[k];
            }
            let diag = row_j[j];
            let d = diag - dot(&row_j[..j], &row_j[..j]);
            row_j[j] = if d > PIVOT_REL * diag.abs().max(f64::MIN_POSITIVE) && d.is_finite() {
                d.sqrt()
            } else {
                patched += 1;
                HUGE
            };
        }
        Cholesky { n, l: a, patched }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.l[i * self.n..(i + 1) * self.n]
    }

    /// Solves `L y = b` in place, assuming `b[..start]` is zero.
    pub fn forward_from(&self, b: &mut [f64], start: usize) {
        for i in start..self.n {
            let row = self.row(i);
            let s = dot(&row[start..i], &b[start..i]);
            b[i] = (b[i] - s) / row[i];
        }
    }

    pub fn forward(&self, b: &mut [f64]) {
        self.forward_from(b, 0)
    }

    /// Solves `L' x = y` in place.
    pub fn backward(&self, y: &mut [f64]) {
        for i in (0..self.n).rev() {
            let yi = y[i] / self.row(i)[i];
            y[i] = yi;
            if yi != 0.0 {
                let row = self.row(i);
                for (yk, lk) in y[..i].iter_mut().zip(&row[..i]) {
                    *yk -= lk * yi;
                }
            }
        }
    }

    pub fn solve(&self, b: &mut [f64]) {
        self.forward(b);
        self.backward(b);
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators let the compiler vectorize without reassociation flags
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}
