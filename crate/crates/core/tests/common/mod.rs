//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::cell::Cell;
use std::ops::{Add, Div, Mul, Sub};

use mfnewton::dag::Dag;
use mfnewton::{BandMatrix, FlopCount};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Counting scalar

thread_local! {
    static MULS: Cell<u64> = const { Cell::new(0) };
    static DIVS: Cell<u64> = const { Cell::new(0) };
}

/// Scalar that counts every multiply and divide. Additions ride along with
/// a multiply (fused) and are free.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct C(pub f64);

impl Mul for C {
    type Output = C;
    fn mul(self, o: C) -> C {
        MULS.with(|m| m.set(m.get() + 1));
        C(self.0 * o.0)
    }
}

impl Div for C {
    type Output = C;
    fn div(self, o: C) -> C {
        DIVS.with(|d| d.set(d.get() + 1));
        C(self.0 / o.0)
    }
}

impl Add for C {
    type Output = C;
    fn add(self, o: C) -> C {
        C(self.0 + o.0)
    }
}

impl Sub for C {
    type Output = C;
    fn sub(self, o: C) -> C {
        C(self.0 - o.0)
    }
}

/// Runs `f` and returns its result with the operations it performed.
pub fn counted<T>(f: impl FnOnce() -> T) -> (T, FlopCount) {
    MULS.with(|m| m.set(0));
    DIVS.with(|d| d.set(0));
    let out = f();
    (out, FlopCount::new(MULS.with(Cell::get), DIVS.with(Cell::get)))
}

pub type Grid = Vec<Vec<C>>;

pub fn grid_of_band(a: &BandMatrix) -> Grid {
    let n = a.dim();
    (0..n).map(|i| (0..n).map(|j| C(a.get(i, j))).collect()).collect()
}

pub fn plain(g: &Grid) -> Vec<Vec<f64>> {
    g.iter().map(|r| r.iter().map(|c| c.0).collect()).collect()
}

// ---------------------------------------------------------------------------
// Shadow kernels: the same algorithms over a plain grid, counting every op.

/// Unpivoted band elimination. Returns the overlaid factors and whether the
/// diagonal sits in the lower factor.
pub fn shadow_band_lu(a: &BandMatrix) -> (Grid, bool) {
    let (ml, mu) = a.bandwidths();
    let n = a.dim();
    let mut g = grid_of_band(a);
    if mu == 0 && ml > 0 {
        return (g, true);
    }
    for k in 0..n {
        let last_row = (k + ml).min(n - 1);
        if last_row == k {
            continue;
        }
        let last_col = (k + mu).min(n - 1);
        let r = C(1.0) / g[k][k];
        for i in k + 1..=last_row {
            let l = g[i][k] * r;
            g[i][k] = l;
            for j in k + 1..=last_col {
                g[i][j] = g[i][j] - l * g[k][j];
            }
        }
    }
    (g, false)
}

pub fn shadow_lower_solve(f: &Grid, ml: usize, diag_in_lower: bool, b: &[f64]) -> Vec<f64> {
    let n = f.len();
    let mut x: Vec<C> = b.iter().map(|&v| C(v)).collect();
    for i in 0..n {
        let mut s = x[i];
        for j in i.saturating_sub(ml)..i {
            s = s - f[i][j] * x[j];
        }
        if diag_in_lower {
            s = s / f[i][i];
        }
        x[i] = s;
    }
    x.into_iter().map(|c| c.0).collect()
}

pub fn shadow_upper_solve(f: &Grid, mu: usize, diag_in_lower: bool, b: &[f64]) -> Vec<f64> {
    let n = f.len();
    if diag_in_lower {
        return b.to_vec();
    }
    let mut x: Vec<C> = b.iter().map(|&v| C(v)).collect();
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in i + 1..(i + mu + 1).min(n) {
            s = s - f[i][j] * x[j];
        }
        x[i] = s / f[i][i];
    }
    x.into_iter().map(|c| c.0).collect()
}

pub fn shadow_matvec(a: &BandMatrix, x: &[f64]) -> Vec<f64> {
    let (ml, mu) = a.bandwidths();
    let n = a.dim();
    (0..n)
        .map(|i| {
            let mut s = C(0.0);
            for j in i.saturating_sub(ml)..(i + mu + 1).min(n) {
                s = s + C(a.get(i, j)) * C(x[j]);
            }
            s.0
        })
        .collect()
}

/// `A·B` where `B` has structural bandwidths `(bl, bu)`.
pub fn shadow_band_times_dense(a: &BandMatrix, b: &[Vec<f64>], bl: usize, bu: usize) -> Vec<Vec<f64>> {
    let (ml, mu) = a.bandwidths();
    let n = a.dim();
    let cols = b[0].len();
    let mut c = vec![vec![C(0.0); cols]; n];
    for i in 0..n {
        for k in i.saturating_sub(ml)..(k_end(i, mu, n)) {
            let lo = k.saturating_sub(bl);
            let hi = (k + bu + 1).min(cols);
            for j in lo..hi {
                c[i][j] = c[i][j] + C(a.get(i, k)) * C(b[k][j]);
            }
        }
    }
    plain(&c)
}

fn k_end(i: usize, mu: usize, n: usize) -> usize {
    (i + mu + 1).min(n)
}

/// Partial pivoting restricted to the `lower` rows under the diagonal; row
/// exchanges touch only the trailing columns. Returns factors and pivots.
pub fn shadow_dense_lu(a: &[Vec<f64>], lower: usize, upper: usize) -> (Grid, Vec<usize>, usize) {
    let n = a.len();
    let up = (lower + upper).min(n - 1);
    let mut g: Grid = a.iter().map(|r| r.iter().map(|&v| C(v)).collect()).collect();
    let mut piv = vec![0; n];
    for k in 0..n {
        let last_row = (k + lower).min(n - 1);
        let last_col = (k + up).min(n - 1);
        let mut p = k;
        for i in k + 1..=last_row {
            if g[i][k].0.abs() > g[p][k].0.abs() {
                p = i;
            }
        }
        piv[k] = p;
        for j in k..=last_col {
            let t = g[k][j];
            g[k][j] = g[p][j];
            g[p][j] = t;
        }
        if last_row == k {
            continue;
        }
        let r = C(1.0) / g[k][k];
        for i in k + 1..=last_row {
            let l = g[i][k] * r;
            g[i][k] = l;
            for j in k + 1..=last_col {
                g[i][j] = g[i][j] - l * g[k][j];
            }
        }
    }
    (g, piv, up)
}

pub fn shadow_dense_solve(g: &Grid, piv: &[usize], lower: usize, up: usize, b: &[f64]) -> Vec<f64> {
    let n = g.len();
    let mut x: Vec<C> = b.iter().map(|&v| C(v)).collect();
    for k in 0..n {
        x.swap(k, piv[k]);
        for i in k + 1..=(k + lower).min(n - 1) {
            x[i] = x[i] - g[i][k] * x[k];
        }
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in i + 1..=(i + up).min(n - 1) {
            s = s - g[i][j] * x[j];
        }
        x[i] = s / g[i][i];
    }
    x.into_iter().map(|c| c.0).collect()
}

// ---------------------------------------------------------------------------
// Dense reference linear algebra on nested vectors

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(g: &mfnewton::DenseMatrix) -> Mat {
    (0..g.rows()).map(|i| g.row(i).to_vec()).collect()
}

pub fn band_to_mat(a: &BandMatrix) -> Mat {
    let n = a.dim();
    (0..n).map(|i| (0..n).map(|j| a.get(i, j)).collect()).collect()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (r, k, c) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; c]; r];
    for i in 0..r {
        for l in 0..k {
            for j in 0..c {
                out[i][j] += a[i][l] * b[l][j];
            }
        }
    }
    out
}

pub fn matvec(a: &Mat, x: &[f64]) -> Vec<f64> {
    a.iter().map(|r| r.iter().zip(x).map(|(u, v)| u * v).sum()).collect()
}

pub fn transpose(a: &Mat) -> Mat {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

/// `J = F'_q ⋯ F'_1` by plain dense products.
pub fn chain_product(factors: &[BandMatrix]) -> Mat {
    let mut p = band_to_mat(&factors[0]);
    for f in &factors[1..] {
        p = matmul(&band_to_mat(f), &p);
    }
    p
}

/// Gauss-Jordan with full row pivoting on an augmented copy. `None` if a
/// pivot vanishes.
pub fn gauss_solve(a: &Mat, b: &[f64]) -> Option<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(r, &v)| {
            let mut r = r.clone();
            r.push(v);
            r
        })
        .collect();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| m[i][k].abs().total_cmp(&m[j][k].abs()))?;
        if m[p][k] == 0.0 {
            return None;
        }
        m.swap(k, p);
        for i in 0..n {
            if i != k {
                let f = m[i][k] / m[k][k];
                for j in k..=n {
                    m[i][j] -= f * m[k][j];
                }
            }
        }
    }
    Some((0..n).map(|i| m[i][n] / m[i][i]).collect())
}

/// Inverse by solving for unit vectors.
pub fn inverse(a: &Mat) -> Option<Mat> {
    let n = a.len();
    let cols: Option<Vec<Vec<f64>>> = (0..n)
        .map(|j| {
            let e: Vec<f64> = (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect();
            gauss_solve(a, &e)
        })
        .collect();
    cols.map(|c| transpose(&c))
}

pub fn norm_inf_vec(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn norm_inf_mat(a: &Mat) -> f64 {
    a.iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn max_abs(a: &Mat) -> f64 {
    a.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let d = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let s = norm_inf_vec(b);
    if s == 0.0 {
        d
    } else {
        d / s
    }
}

/// Lower bound on the smallest singular value: `1/(√n·‖A⁻¹‖∞)`.
pub fn sigma_min_lower_bound(a: &Mat) -> f64 {
    match inverse(a) {
        Some(inv) => 1.0 / ((a.len() as f64).sqrt() * norm_inf_mat(&inv)),
        None => 0.0,
    }
}

// ---------------------------------------------------------------------------
// DAG oracles

/// Jacobian by explicit enumeration of every input-to-output path.
pub fn jacobian_by_enumeration(dag: &Dag) -> Mat {
    let n = dag.num_inputs();
    let mut j = vec![vec![0.0; n]; dag.num_outputs()];
    fn walk(dag: &Dag, v: i64, prod: f64, col: usize, j: &mut Mat) {
        let outs: Vec<_> = dag.edges().iter().filter(|e| e.src.0 == v).collect();
        if v > dag.num_intermediates() as i64 {
            let row = (v - dag.num_intermediates() as i64 - 1) as usize;
            j[row][col] += prod;
        }
        for e in outs {
            walk(dag, e.dst.0, prod * e.label, col, j);
        }
    }
    for (col, x) in (1 - n as i64..=0).enumerate() {
        walk(dag, x, 1.0, col, &mut j);
    }
    j
}

/// Explicit path enumeration count.
pub fn paths_by_enumeration(dag: &Dag) -> u64 {
    fn walk(dag: &Dag, v: i64) -> u64 {
        let here = u64::from(v > dag.num_intermediates() as i64);
        here + dag
            .edges()
            .iter()
            .filter(|e| e.src.0 == v)
            .map(|e| walk(dag, e.dst.0))
            .sum::<u64>()
    }
    (1 - dag.num_inputs() as i64..=0).map(|x| walk(dag, x)).sum()
}

pub fn jac_rel_close(a: &Mat, b: &Mat, tol: f64) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(r, s)| r.len() == s.len())
        && max_abs_diff(a, b) <= tol * max_abs(a).max(f64::MIN_POSITIVE)
}

// ---------------------------------------------------------------------------
// Random instances

/// Random band matrix with independent lower and upper bandwidths. With
/// `dominance > 1` the diagonal dominates its row.
pub fn random_band(r: &mut impl Rng, n: usize, ml: usize, mu: usize, dominance: f64) -> BandMatrix {
    let mut a = BandMatrix::zeros(n, ml, mu).expect("bandwidths below n");
    for i in 0..n {
        let mut sum = 0.0;
        for j in i.saturating_sub(ml)..(i + mu + 1).min(n) {
            if j != i {
                let v: f64 = r.gen_range(-1.0..=1.0);
                a.set(i, j, v);
                sum += v.abs();
            }
        }
        let sign = if r.gen_bool(0.5) { 1.0 } else { -1.0 };
        a.set(i, i, sign * (dominance * sum).max(0.5 + r.gen::<f64>()));
    }
    a
}

pub fn random_vec(r: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(-1.0..=1.0)).collect()
}
