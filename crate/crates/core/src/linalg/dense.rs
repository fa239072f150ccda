use super::LinalgError;
use crate::flops::FlopCount;

/// Row-major dense matrix with a structural envelope.
///
/// Entries `(i, j)` with `j - i < -lower` or `j - i > upper` are structurally
/// zero. Kernels that consume a `DenseMatrix` skip those entries, which is
/// how accumulated chain products keep the band structure they inherit from
/// their factors until they fill in.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    lower: usize,
    upper: usize,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
            lower: rows.saturating_sub(1),
            upper: cols.saturating_sub(1),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m.lower = 0;
        m.upper = 0;
        m
    }

    /// Builds a full-envelope matrix from row slices. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut m = Self::zeros(r, c);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), c, "ragged row {i}");
            m.data[i * c..(i + 1) * c].copy_from_slice(row);
        }
        m
    }

    pub(crate) fn from_parts(rows: usize, cols: usize, data: Vec<f64>, lower: usize, upper: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self {
            rows,
            cols,
            data,
            lower: lower.min(rows.saturating_sub(1)),
            upper: upper.min(cols.saturating_sub(1)),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Structural (lower, upper) bandwidths.
    pub fn envelope(&self) -> (usize, usize) {
        (self.lower, self.upper)
    }

    /// Drops the structural envelope so every entry is treated as stored.
    pub fn into_full(mut self) -> Self {
        self.lower = self.rows.saturating_sub(1);
        self.upper = self.cols.saturating_sub(1);
        self
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Sets an entry, widening the envelope if a nonzero lands outside it.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
        if v != 0.0 {
            if i > j {
                self.lower = self.lower.max(i - j);
            } else {
                self.upper = self.upper.max(j - i);
            }
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Column range `[lo, hi)` of row `i` inside the envelope.
    pub fn row_span(&self, i: usize) -> (usize, usize) {
        let lo = i.saturating_sub(self.lower);
        let hi = (i + self.upper + 1).min(self.cols);
        (lo.min(hi), hi)
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = vec![0.0; self.rows * self.cols];
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        DenseMatrix::from_parts(self.cols, self.rows, t, self.upper, self.lower)
    }

    /// Plain triple-loop product, uncounted. Reference use only.
    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.rows, "inner dimensions differ");
        let mut c = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    c.data[i * other.cols + j] += a * other.data[k * other.cols + j];
                }
            }
        }
        c
    }

    /// Plain matrix-vector product, uncounted.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len());
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Partially pivoted LU factors overlaid in one array.
///
/// Row exchanges are recorded as a pivot sequence and only applied to the
/// trailing columns, so the multipliers of column `k` stay in rows
/// `k+1..=k+lower`. `U` has upper bandwidth at most `lower + upper`.
#[derive(Debug, Clone)]
pub struct DenseLu {
    n: usize,
    lu: Vec<f64>,
    /// Row swapped with row `k` at elimination step `k`.
    pivots: Vec<usize>,
    lower: usize,
    upper: usize,
}

impl DenseLu {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn pivots(&self) -> &[usize] {
        &self.pivots
    }

    /// `perm[i]` is the original row that ends up in row `i`.
    pub fn permutation(&self) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..self.n).collect();
        for (k, &p) in self.pivots.iter().enumerate() {
            perm.swap(k, p);
        }
        perm
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.lu[i * self.n + j]
    }

    /// (lower, upper) bandwidths of the `L` and `U` factors.
    pub fn bandwidths(&self) -> (usize, usize) {
        (self.lower, self.upper)
    }
}

/// Dense LU with partial pivoting over the structural envelope.
///
/// The pivot is searched among the `lower` rows below the diagonal. Column
/// `k` with `r` candidate rows below it and `c` trailing columns in the
/// widened envelope costs one reciprocal plus `r·(1 + c)` fma; columns with
/// nothing below cost nothing.
pub fn dense_lu_pivoted(a: &DenseMatrix) -> Result<(DenseLu, FlopCount), LinalgError> {
    let n = a.rows();
    if a.cols() != n {
        return Err(LinalgError::DimensionMismatch {
            expected: n,
            got: a.cols(),
        });
    }
    let (lower, upper0) = a.envelope();
    let upper = (lower + upper0).min(n.saturating_sub(1));
    let mut lu = a.data().to_vec();
    let mut pivots: Vec<usize> = (0..n).collect();
    let mut flops = FlopCount::ZERO;

    for k in 0..n {
        let last_row = (k + lower).min(n - 1);
        let last_col = (k + upper).min(n - 1);
        let (mut p, mut best) = (k, lu[k * n + k].abs());
        for i in k + 1..=last_row {
            let v = lu[i * n + k].abs();
            if v > best {
                p = i;
                best = v;
            }
        }
        if best == 0.0 || !best.is_finite() {
            return Err(LinalgError::Singular { row: k });
        }
        pivots[k] = p;
        if p != k {
            for j in k..=last_col {
                lu.swap(k * n + j, p * n + j);
            }
        }
        if last_row == k {
            continue;
        }
        let recip = 1.0 / lu[k * n + k];
        flops.div += 1;
        let (head, tail) = lu.split_at_mut((k + 1) * n);
        let pivot_row = &head[k * n + k + 1..k * n + last_col + 1];
        for row in tail.chunks_exact_mut(n).take(last_row - k) {
            let l = row[k] * recip;
            row[k] = l;
            for (dst, &u) in row[k + 1..=last_col].iter_mut().zip(pivot_row) {
                *dst -= l * u;
            }
        }
        flops.fma += ((last_row - k) * (1 + last_col - k)) as u64;
    }
    Ok((
        DenseLu {
            n,
            lu,
            pivots,
            lower,
            upper,
        },
        flops,
    ))
}

/// Solves `A·x = b` from pivoted factors: forward elimination with the
/// recorded row exchanges, then backward substitution.
pub fn dense_solve(f: &DenseLu, b: &[f64]) -> Result<(Vec<f64>, FlopCount), LinalgError> {
    let n = f.n;
    if b.len() != n {
        return Err(LinalgError::DimensionMismatch {
            expected: n,
            got: b.len(),
        });
    }
    let mut x = b.to_vec();
    let mut flops = FlopCount::ZERO;
    for k in 0..n {
        x.swap(k, f.pivots[k]);
        let last_row = (k + f.lower).min(n - 1);
        let xk = x[k];
        for i in k + 1..=last_row {
            x[i] -= f.lu[i * n + k] * xk;
        }
        flops.fma += (last_row - k) as u64;
    }
    for i in (0..n).rev() {
        let last_col = (i + f.upper).min(n - 1);
        let row = &f.lu[i * n..i * n + last_col + 1];
        let s: f64 = row[i + 1..].iter().zip(&x[i + 1..=last_col]).map(|(u, v)| u * v).sum();
        let d = row[i];
        if d == 0.0 {
            return Err(LinalgError::ZeroDiagonal { row: i });
        }
        x[i] = (x[i] - s) / d;
        flops.fma += (last_col - i) as u64;
        flops.div += 1;
    }
    Ok((x, flops))
}
