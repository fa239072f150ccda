use super::{DenseMatrix, LinalgError};
use crate::flops::FlopCount;

/// Square matrix in diagonal-offset band storage.
///
/// Band `d = j - i` (from `-ml` to `mu`) occupies the `n` slots starting at
/// `(d + ml) * n`, indexed by row. Slots whose column falls outside the
/// matrix are kept at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct BandMatrix {
    n: usize,
    ml: usize,
    mu: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, ml: usize, mu: usize) -> Result<Self, LinalgError> {
        if n == 0 || ml >= n || mu >= n {
            return Err(LinalgError::InvalidBandwidth { n, ml, mu });
        }
        Ok(Self {
            n,
            ml,
            mu,
            data: vec![0.0; (ml + mu + 1) * n],
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, 0, 0).expect("n > 0");
        m.data.fill(1.0);
        m
    }

    /// Tridiagonal matrix from its three diagonals (`sub[0]` and `sup[n-1]`
    /// are ignored).
    pub fn tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64]) -> Result<Self, LinalgError> {
        let n = diag.len();
        if sub.len() != n || sup.len() != n {
            return Err(LinalgError::DimensionMismatch {
                expected: n,
                got: sub.len().min(sup.len()),
            });
        }
        let (ml, mu) = if n > 1 { (1, 1) } else { (0, 0) };
        let mut m = Self::zeros(n, ml, mu)?;
        for i in 0..n {
            m.set(i, i, diag[i]);
            if n > 1 {
                if i > 0 {
                    m.set(i, i - 1, sub[i]);
                }
                if i + 1 < n {
                    m.set(i, i + 1, sup[i]);
                }
            }
        }
        Ok(m)
    }

    /// Copies the band `[-ml, mu]` of a dense matrix; entries outside it are
    /// discarded.
    pub fn from_dense(a: &DenseMatrix, ml: usize, mu: usize) -> Result<Self, LinalgError> {
        if a.rows() != a.cols() {
            return Err(LinalgError::DimensionMismatch {
                expected: a.rows(),
                got: a.cols(),
            });
        }
        let mut m = Self::zeros(a.rows(), ml, mu)?;
        for i in 0..m.n {
            let (lo, hi) = m.row_range(i);
            for j in lo..hi {
                m.set(i, j, a.get(i, j));
            }
        }
        Ok(m)
    }

    /// Band copy using the tightest bandwidths that hold every nonzero.
    pub fn from_dense_tight(a: &DenseMatrix) -> Result<Self, LinalgError> {
        let (mut ml, mut mu) = (0, 0);
        for i in 0..a.rows() {
            for j in 0..a.cols() {
                if a.get(i, j) != 0.0 {
                    if i > j {
                        ml = ml.max(i - j);
                    } else {
                        mu = mu.max(j - i);
                    }
                }
            }
        }
        Self::from_dense(a, ml, mu)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.ml, self.mu)
    }

    pub fn in_band(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && j + self.ml >= i && j <= i + self.mu
    }

    /// Columns `[lo, hi)` of row `i` that lie in the band.
    pub fn row_range(&self, i: usize) -> (usize, usize) {
        (i.saturating_sub(self.ml), (i + self.mu + 1).min(self.n))
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        (j + self.ml - i) * self.n + i
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.data[self.slot(i, j)]
        } else {
            0.0
        }
    }

    /// Panics when `(i, j)` lies outside the band.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(
            self.in_band(i, j),
            "({i}, {j}) outside band ml={} mu={}",
            self.ml,
            self.mu
        );
        let s = self.slot(i, j);
        self.data[s] = v;
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let n = self.n;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            let (lo, hi) = self.row_range(i);
            for j in lo..hi {
                data[i * n + j] = self.get(i, j);
            }
        }
        DenseMatrix::from_parts(n, n, data, self.ml, self.mu)
    }

    pub fn transpose(&self) -> BandMatrix {
        let mut t = BandMatrix::zeros(self.n, self.mu, self.ml).expect("same dimension");
        for i in 0..self.n {
            let (lo, hi) = self.row_range(i);
            for j in lo..hi {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    /// Same entries stored with the widest possible bands.
    pub fn widened(&self, ml: usize, mu: usize) -> Result<BandMatrix, LinalgError> {
        let mut w = BandMatrix::zeros(self.n, ml.max(self.ml), mu.max(self.mu))?;
        for i in 0..self.n {
            let (lo, hi) = self.row_range(i);
            for j in lo..hi {
                w.set(i, j, self.get(i, j));
            }
        }
        Ok(w)
    }

    pub fn norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|i| {
                let (lo, hi) = self.row_range(i);
                (lo..hi).map(|j| self.get(i, j).abs()).sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    pub fn check_finite(&self) -> Result<(), LinalgError> {
        for i in 0..self.n {
            let (lo, hi) = self.row_range(i);
            for j in lo..hi {
                if !self.get(i, j).is_finite() {
                    return Err(LinalgError::NonFinite { row: i, col: j });
                }
            }
        }
        Ok(())
    }
}

/// `1e-12 * ‖A‖∞`, the pivot tolerance used when callers pass none.
pub fn default_pivot_tol(a: &BandMatrix) -> f64 {
    1e-12 * a.norm_inf()
}

/// In-place LU factors `L - I + U` of a band matrix, without pivoting.
///
/// When the input has no upper band (`mu == 0`) the matrix already is its
/// own lower factor; it is kept as a non-unit `L` with `U = I` and the
/// diagonal is applied during forward substitution instead.
#[derive(Debug, Clone, PartialEq)]
pub struct BandLu {
    factors: BandMatrix,
    diag_in_lower: bool,
}

impl BandLu {
    pub fn dim(&self) -> usize {
        self.factors.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        self.factors.bandwidths()
    }

    /// The overlaid factor storage.
    pub fn factors(&self) -> &BandMatrix {
        &self.factors
    }

    /// True when the diagonal belongs to `L` (and `U` is the identity).
    pub fn diag_in_lower(&self) -> bool {
        self.diag_in_lower
    }

    pub fn lower_factor(&self) -> BandMatrix {
        let n = self.factors.n;
        let mut l = BandMatrix::zeros(n, self.factors.ml, 0).expect("valid");
        for i in 0..n {
            for j in i.saturating_sub(self.factors.ml)..i {
                l.set(i, j, self.factors.get(i, j));
            }
            let d = if self.diag_in_lower {
                self.factors.get(i, i)
            } else {
                1.0
            };
            l.set(i, i, d);
        }
        l
    }

    pub fn upper_factor(&self) -> BandMatrix {
        let n = self.factors.n;
        let mu = if self.diag_in_lower { 0 } else { self.factors.mu };
        let mut u = BandMatrix::zeros(n, 0, mu).expect("valid");
        for i in 0..n {
            let d = if self.diag_in_lower {
                1.0
            } else {
                self.factors.get(i, i)
            };
            u.set(i, i, d);
            for j in i + 1..(i + mu + 1).min(n) {
                u.set(i, j, self.factors.get(i, j));
            }
        }
        u
    }
}

fn check_pivot(a: &BandMatrix, k: usize, tol: f64) -> Result<f64, LinalgError> {
    let p = a.get(k, k);
    if !(p.abs() > tol) {
        return Err(LinalgError::SmallPivot { row: k, value: p, tol });
    }
    Ok(p)
}

fn lower_triangular_lu(a: &BandMatrix, pivot_tol: f64) -> Result<BandLu, LinalgError> {
    for k in 0..a.n {
        check_pivot(a, k, pivot_tol)?;
    }
    Ok(BandLu {
        factors: a.clone(),
        diag_in_lower: true,
    })
}

/// Unpivoted band LU. Cost per column with `r` rows below the pivot and `c`
/// columns right of it: one reciprocal plus `r * (1 + c)` fma.
pub fn band_lu(a: &BandMatrix, pivot_tol: f64) -> Result<(BandLu, FlopCount), LinalgError> {
    let (ml, mu) = a.bandwidths();
    if mu == 0 && ml > 0 {
        return Ok((lower_triangular_lu(a, pivot_tol)?, FlopCount::ZERO));
    }
    let n = a.n;
    let mut f = a.clone();
    let mut flops = FlopCount::ZERO;
    for k in 0..n {
        let pivot = check_pivot(&f, k, pivot_tol)?;
        let last_row = (k + ml).min(n - 1);
        if last_row == k {
            continue;
        }
        let last_col = (k + mu).min(n - 1);
        let recip = 1.0 / pivot;
        flops.div += 1;
        for i in k + 1..=last_row {
            let s = f.slot(i, k);
            let l = f.data[s] * recip;
            f.data[s] = l;
            for j in k + 1..=last_col {
                let u = f.data[f.slot(k, j)];
                let t = f.slot(i, j);
                f.data[t] -= l * u;
            }
        }
        flops.fma += ((last_row - k) * (1 + last_col - k)) as u64;
    }
    Ok((
        BandLu {
            factors: f,
            diag_in_lower: false,
        },
        flops,
    ))
}

/// Thomas algorithm: the tridiagonal specialisation of [`band_lu`].
///
/// Accepts any matrix with `ml <= 1` and `mu <= 1` and produces exactly the
/// factors and counts `band_lu` does.
pub fn thomas_factorize(a: &BandMatrix, pivot_tol: f64) -> Result<(BandLu, FlopCount), LinalgError> {
    let (ml, mu) = a.bandwidths();
    if ml > 1 || mu > 1 {
        return Err(LinalgError::InvalidBandwidth { n: a.n, ml, mu });
    }
    if mu == 0 && ml == 1 {
        return Ok((lower_triangular_lu(a, pivot_tol)?, FlopCount::ZERO));
    }
    let n = a.n;
    let mut f = a.clone();
    if ml == 0 {
        for k in 0..n {
            check_pivot(&f, k, pivot_tol)?;
        }
        return Ok((
            BandLu {
                factors: f,
                diag_in_lower: false,
            },
            FlopCount::ZERO,
        ));
    }
    // bands: sub at [0, n), diag at [n, 2n), sup at [2n, 3n)
    let (sub, rest) = f.data.split_at_mut(n);
    let (diag, sup) = rest.split_at_mut(n);
    for k in 0..n {
        let p = diag[k];
        if !(p.abs() > pivot_tol) {
            return Err(LinalgError::SmallPivot {
                row: k,
                value: p,
                tol: pivot_tol,
            });
        }
        if k + 1 == n {
            break;
        }
        let recip = 1.0 / p;
        let l = sub[k + 1] * recip;
        sub[k + 1] = l;
        diag[k + 1] -= l * sup[k];
    }
    let flops = FlopCount::new(2 * (n as u64 - 1), n as u64 - 1);
    Ok((
        BandLu {
            factors: f,
            diag_in_lower: false,
        },
        flops,
    ))
}

/// Forward substitution with the lower factor.
pub fn solve_lower_band(lu: &BandLu, b: &[f64]) -> Result<(Vec<f64>, FlopCount), LinalgError> {
    let f = &lu.factors;
    let n = f.n;
    if b.len() != n {
        return Err(LinalgError::DimensionMismatch {
            expected: n,
            got: b.len(),
        });
    }
    let mut x = b.to_vec();
    let mut flops = FlopCount::ZERO;
    for i in 0..n {
        let lo = i.saturating_sub(f.ml);
        let mut s = x[i];
        for j in lo..i {
            s -= f.data[f.slot(i, j)] * x[j];
        }
        flops.fma += (i - lo) as u64;
        if lu.diag_in_lower {
            let d = f.data[f.slot(i, i)];
            if d == 0.0 {
                return Err(LinalgError::ZeroDiagonal { row: i });
            }
            s /= d;
            flops.div += 1;
        }
        x[i] = s;
    }
    Ok((x, flops))
}

/// Backward substitution with the upper factor.
pub fn solve_upper_band(lu: &BandLu, b: &[f64]) -> Result<(Vec<f64>, FlopCount), LinalgError> {
    let f = &lu.factors;
    let n = f.n;
    if b.len() != n {
        return Err(LinalgError::DimensionMismatch {
            expected: n,
            got: b.len(),
        });
    }
    let mut x = b.to_vec();
    if lu.diag_in_lower {
        return Ok((x, FlopCount::ZERO));
    }
    let mut flops = FlopCount::ZERO;
    for i in (0..n).rev() {
        let hi = (i + f.mu + 1).min(n);
        let mut s = x[i];
        for j in i + 1..hi {
            s -= f.data[f.slot(i, j)] * x[j];
        }
        let d = f.data[f.slot(i, i)];
        if d == 0.0 {
            return Err(LinalgError::ZeroDiagonal { row: i });
        }
        x[i] = s / d;
        flops.fma += (hi - i - 1) as u64;
        flops.div += 1;
    }
    Ok((x, flops))
}

/// `y = A·x` over the stored band; one fma per band entry touched.
pub fn band_matvec(a: &BandMatrix, x: &[f64]) -> Result<(Vec<f64>, FlopCount), LinalgError> {
    if x.len() != a.n {
        return Err(LinalgError::DimensionMismatch {
            expected: a.n,
            got: x.len(),
        });
    }
    let mut flops = FlopCount::ZERO;
    let y = (0..a.n)
        .map(|i| {
            let (lo, hi) = a.row_range(i);
            flops.fma += (hi - lo) as u64;
            (lo..hi).map(|j| a.data[a.slot(i, j)] * x[j]).sum()
        })
        .collect();
    Ok((y, flops))
}

/// `C = A·B` for band `A` and enveloped dense `B`.
///
/// Only band entries of `A` and envelope entries of `B` are multiplied; the
/// result's envelope is the sum of both structures.
pub fn band_times_dense(a: &BandMatrix, b: &DenseMatrix) -> Result<(DenseMatrix, FlopCount), LinalgError> {
    let n = a.n;
    if b.rows() != n {
        return Err(LinalgError::DimensionMismatch {
            expected: n,
            got: b.rows(),
        });
    }
    let cols = b.cols();
    let (bl, bu) = b.envelope();
    let mut c = vec![0.0; n * cols];
    let mut fma = 0u64;
    for i in 0..n {
        let (lo, hi) = a.row_range(i);
        let out = &mut c[i * cols..(i + 1) * cols];
        for j in lo..hi {
            let aij = a.data[a.slot(i, j)];
            let (klo, khi) = b.row_span(j);
            let brow = &b.row(j)[klo..khi];
            for (dst, &v) in out[klo..khi].iter_mut().zip(brow) {
                *dst += aij * v;
            }
            fma += (khi - klo) as u64;
        }
    }
    Ok((
        DenseMatrix::from_parts(n, cols, c, a.ml + bl, a.mu + bu),
        FlopCount::new(fma, 0),
    ))
}
