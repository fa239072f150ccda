//! Reference residual chains and small sample DAGs.
//!
//! The diffusion chain runs implicit Euler backwards: the unknown is the
//! final state `u^q`, each layer recovers the previous state through the
//! explicit operator `G(u) = u - dt·ν·D₂u/dx²`, and the last layer subtracts
//! the initial condition. The root of `F = (G - u⁰) ∘ G ∘ … ∘ G` is exactly
//! the implicit Euler solution after `q` steps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dag::{Dag, Edge, VertexId};
use crate::linalg::BandMatrix;
use crate::newton::{ChainResidual, LayerFunction};

/// Diffusion coefficient. `StateDependent` holds `u ↦ (ν(u), ν'(u))`.
#[derive(Debug, Clone, Copy)]
pub enum Diffusivity {
    Constant(f64),
    StateDependent(fn(f64) -> (f64, f64)),
}

/// `ν(u) = 1 + u²`, the nonlinear test coefficient.
pub fn one_plus_square(u: f64) -> (f64, f64) {
    (1.0 + u * u, 2.0 * u)
}

#[derive(Debug, Clone)]
pub struct DiffusionSpec {
    pub n: usize,
    pub q: usize,
    pub dt: f64,
    pub dx: f64,
    pub nu: Diffusivity,
    /// Initial condition `u⁰` on the interior grid points.
    pub initial: Vec<f64>,
}

impl DiffusionSpec {
    /// Unit interval with `n` interior points, `ν = 1`, `dt = dx²/q` and
    /// `u⁰ = sin(πx)`.
    pub fn linear(n: usize, q: usize) -> Self {
        let dx = 1.0 / (n + 1) as f64;
        Self {
            n,
            q,
            dt: dx * dx / q.max(1) as f64,
            dx,
            nu: Diffusivity::Constant(1.0),
            initial: (1..=n).map(|i| (std::f64::consts::PI * i as f64 * dx).sin()).collect(),
        }
    }

    /// As [`DiffusionSpec::linear`] with `ν(u) = 1 + u²`.
    pub fn nonlinear(n: usize, q: usize) -> Self {
        Self {
            nu: Diffusivity::StateDependent(one_plus_square),
            ..Self::linear(n, q)
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.nu, Diffusivity::Constant(_))
    }
}

#[derive(Debug, Clone)]
struct DiffusionLayer {
    n: usize,
    /// `dt/dx²`
    r: f64,
    nu: Diffusivity,
    shift: Option<Vec<f64>>,
}

impl DiffusionLayer {
    fn coefficient(&self, u: f64) -> (f64, f64) {
        match self.nu {
            Diffusivity::Constant(c) => (c, 0.0),
            Diffusivity::StateDependent(f) => f(u),
        }
    }

    fn laplacian(x: &[f64], i: usize) -> f64 {
        let left = if i > 0 { x[i - 1] } else { 0.0 };
        let right = x.get(i + 1).copied().unwrap_or(0.0);
        left - 2.0 * x[i] + right
    }
}

impl LayerFunction for DiffusionLayer {
    fn dim(&self) -> usize {
        self.n
    }

    fn bandwidths(&self) -> (usize, usize) {
        if self.n > 1 {
            (1, 1)
        } else {
            (0, 0)
        }
    }

    fn evaluate(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let (nu, _) = self.coefficient(x[i]);
                let g = x[i] - self.r * nu * Self::laplacian(x, i);
                g - self.shift.as_ref().map_or(0.0, |s| s[i])
            })
            .collect()
    }

    fn local_jacobian(&self, x: &[f64]) -> BandMatrix {
        let n = self.n;
        let (ml, mu) = self.bandwidths();
        let mut a = BandMatrix::zeros(n, ml, mu).expect("n >= 1");
        for i in 0..n {
            let (nu, dnu) = self.coefficient(x[i]);
            a.set(i, i, 1.0 + 2.0 * self.r * nu - self.r * dnu * Self::laplacian(x, i));
            if i > 0 {
                a.set(i, i - 1, -self.r * nu);
            }
            if i + 1 < n {
                a.set(i, i + 1, -self.r * nu);
            }
        }
        a
    }
}

/// Chain whose root is the implicit Euler state after `q` steps.
///
/// Panics if `n` or `q` is zero, `dt`/`dx` are not positive, or `initial`
/// has the wrong length.
pub fn diffusion_chain(spec: &DiffusionSpec) -> ChainResidual {
    assert!(spec.n >= 1 && spec.q >= 1, "need n >= 1 and q >= 1");
    assert!(spec.dt > 0.0 && spec.dx > 0.0, "dt and dx must be positive");
    assert_eq!(spec.initial.len(), spec.n, "initial condition length");
    let r = spec.dt / (spec.dx * spec.dx);
    let layers = (0..spec.q)
        .map(|i| {
            Box::new(DiffusionLayer {
                n: spec.n,
                r,
                nu: spec.nu,
                shift: (i + 1 == spec.q).then(|| spec.initial.clone()),
            }) as Box<dyn LayerFunction>
        })
        .collect();
    ChainResidual::new(spec.n, layers).expect("layers share n")
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomChainSpec {
    pub n: usize,
    /// Half bandwidth: `ml = mu = m`.
    pub m: usize,
    pub q: usize,
    pub seed: u64,
    pub dominance: f64,
}

impl RandomChainSpec {
    pub fn new(n: usize, m: usize, q: usize, seed: u64) -> Self {
        Self {
            n,
            m,
            q,
            seed,
            dominance: 2.0,
        }
    }
}

/// Affine layer `x ↦ A·x + c`.
#[derive(Debug, Clone)]
pub struct AffineLayer {
    pub matrix: BandMatrix,
    pub offset: Vec<f64>,
}

impl LayerFunction for AffineLayer {
    fn dim(&self) -> usize {
        self.matrix.dim()
    }

    fn bandwidths(&self) -> (usize, usize) {
        self.matrix.bandwidths()
    }

    fn evaluate(&self, x: &[f64]) -> Vec<f64> {
        let (ml, mu) = self.matrix.bandwidths();
        let n = self.matrix.dim();
        (0..n)
            .map(|i| {
                let lo = i.saturating_sub(ml);
                let hi = (i + mu).min(n - 1);
                let s: f64 = (lo..=hi).map(|j| self.matrix.get(i, j) * x[j]).sum();
                s + self.offset[i]
            })
            .collect()
    }

    fn local_jacobian(&self, _: &[f64]) -> BandMatrix {
        self.matrix.clone()
    }
}

/// Random diagonally dominant band matrix, rows scaled to a unit diagonal.
///
/// Off-diagonal entries are drawn uniformly from `[-1, 1]` and the diagonal
/// is `dominance` times the row's off-diagonal absolute sum (1 for an empty
/// row). Each row is then divided by its diagonal.
pub fn random_band_matrix(rng: &mut impl Rng, n: usize, m: usize, dominance: f64) -> BandMatrix {
    let w = m.min(n - 1);
    let mut a = BandMatrix::zeros(n, w, w).expect("m < n");
    for i in 0..n {
        let lo = i.saturating_sub(w);
        let hi = (i + w).min(n - 1);
        let mut off: Vec<(usize, f64)> = Vec::with_capacity(2 * w);
        for j in lo..=hi {
            if j != i {
                off.push((j, rng.gen_range(-1.0..=1.0)));
            }
        }
        let sum: f64 = off.iter().map(|(_, v)| v.abs()).sum();
        let diag = if sum > 0.0 { dominance * sum } else { 1.0 };
        for (j, v) in off {
            a.set(i, j, v / diag);
        }
        a.set(i, i, 1.0);
    }
    a
}

/// `q` affine layers with random dominant band Jacobians. Deterministic in
/// the seed.
///
/// Panics unless `n ≥ 1`, `q ≥ 1`, `m < n` (or `n = 1`) and `dominance > 1`.
pub fn random_banded_chain(spec: &RandomChainSpec) -> ChainResidual {
    assert!(spec.n >= 1 && spec.q >= 1, "need n >= 1 and q >= 1");
    assert!(spec.m < spec.n || spec.n == 1, "bandwidth must be below n");
    assert!(spec.dominance > 1.0, "dominance must exceed 1");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let layers = (0..spec.q)
        .map(|_| {
            let matrix = random_band_matrix(&mut rng, spec.n, spec.m, spec.dominance);
            let offset = (0..spec.n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            Box::new(AffineLayer { matrix, offset }) as Box<dyn LayerFunction>
        })
        .collect();
    ChainResidual::new(spec.n, layers).expect("layers share n")
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomDagSpec {
    pub inputs: usize,
    pub intermediates: usize,
    pub outputs: usize,
    /// Probability of each optional edge between compatible vertices.
    pub density: f64,
    pub seed: u64,
}

/// Random valid DAG. Labels are drawn from `±[0.5, 2]`.
///
/// Every intermediate gets one mandatory predecessor and successor, every
/// output one mandatory predecessor; other forward pairs are connected with
/// probability `density`. Vertex order is the id order, so the result is
/// acyclic by construction.
pub fn random_dag(spec: &RandomDagSpec) -> Dag {
    let (n, p, m) = (spec.inputs as i64, spec.intermediates as i64, spec.outputs as i64);
    assert!(n >= 1 && m >= 1, "need at least one input and one output");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let label = |rng: &mut ChaCha8Rng| {
        let v: f64 = rng.gen_range(0.5..=2.0);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    };
    let mut pairs = std::collections::BTreeSet::new();
    // sources of vertex v: inputs and intermediates below v
    let source_range = |v: i64| (1 - n, v.min(p + 1) - 1);
    for v in 1..=p + m {
        let (lo, hi) = source_range(v);
        let mandatory = rng.gen_range(lo..=hi);
        pairs.insert((mandatory, v));
        for s in lo..=hi {
            if s != mandatory && rng.gen_bool(spec.density) {
                pairs.insert((s, v));
            }
        }
    }
    for z in 1..=p {
        if !pairs.iter().any(|&(s, _)| s == z) {
            let d = rng.gen_range(z + 1..=p + m);
            pairs.insert((z, d));
        }
    }
    let edges = pairs
        .into_iter()
        .map(|(s, d)| Edge::new(s, d, label(&mut rng)))
        .collect();
    Dag::new(spec.inputs, spec.intermediates, spec.outputs, edges)
}

/// Two inputs, two intermediates, two outputs, five paths.
///
/// `∂₁,₋₁=2, ∂₁,₀=3, ∂₂,₀=5, ∂₃,₁=7, ∂₄,₁=11, ∂₄,₂=13`.
pub fn figure1_dag() -> Dag {
    Dag::new(
        2,
        2,
        2,
        vec![
            Edge::new(-1, 1, 2.0),
            Edge::new(0, 1, 3.0),
            Edge::new(0, 2, 5.0),
            Edge::new(1, 3, 7.0),
            Edge::new(1, 4, 11.0),
            Edge::new(2, 4, 13.0),
        ],
    )
}

/// Product `A·B` of a lower and an upper triangular 2×2 factor where
/// `b₂,₂` skips the middle layer (edge `0 → 3`).
///
/// `b₁,₁=2, b₁,₂=3, b₂,₂=5, a₁,₁=7, a₂,₁=11`.
pub fn figure4_dag() -> Dag {
    Dag::new(
        2,
        1,
        2,
        vec![
            Edge::new(-1, 1, 2.0),
            Edge::new(0, 1, 3.0),
            Edge::new(0, 3, 5.0),
            Edge::new(1, 2, 7.0),
            Edge::new(1, 3, 11.0),
        ],
    )
}

/// [`figure4_dag`] after splitting `0 → 3` through dummy vertex 2; the
/// outputs become 3 and 4.
pub fn figure4b_dag() -> Dag {
    Dag::new(
        2,
        2,
        2,
        vec![
            Edge::new(-1, 1, 2.0),
            Edge::new(0, 1, 3.0),
            Edge::new(0, 2, 5.0),
            Edge::new(1, 3, 7.0),
            Edge::new(1, 4, 11.0),
            Edge::new(2, 4, 1.0),
        ],
    )
    .with_synthetic([VertexId(2)].into())
}

/// Three inputs, four intermediates, three outputs. Intermediates 1 and 2
/// only feed output 5 and form a pure component; vertex 4 feeds 6 and 7.
///
/// `∂₁,₋₂=2, ∂₃,₋₂=3, ∂₂,₋₁=5, ∂₄,₋₁=7, ∂₄,₀=11, ∂₅,₁=13, ∂₅,₂=17,
/// ∂₆,₃=19, ∂₆,₄=23, ∂₇,₄=29`.
pub fn figure5_dag() -> Dag {
    Dag::new(
        3,
        4,
        3,
        vec![
            Edge::new(-2, 1, 2.0),
            Edge::new(-2, 3, 3.0),
            Edge::new(-1, 2, 5.0),
            Edge::new(-1, 4, 7.0),
            Edge::new(0, 4, 11.0),
            Edge::new(1, 5, 13.0),
            Edge::new(2, 5, 17.0),
            Edge::new(3, 6, 19.0),
            Edge::new(4, 6, 23.0),
            Edge::new(4, 7, 29.0),
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dag::{layer_report, validate};
    use crate::newton::{evaluate_chain, local_jacobians};

    #[test]
    fn sample_dags_are_valid() {
        for d in [figure1_dag(), figure4_dag(), figure4b_dag(), figure5_dag()] {
            assert!(validate(&d).is_empty(), "{d:?}");
        }
        assert!(layer_report(&figure1_dag()).unwrap().is_uniform);
        assert!(!layer_report(&figure4_dag()).unwrap().is_layered);
        assert!(layer_report(&figure4b_dag()).unwrap().is_uniform);
    }

    #[test]
    fn random_dags_are_valid() {
        for seed in 0..200 {
            let spec = RandomDagSpec {
                inputs: 1 + seed as usize % 3,
                intermediates: seed as usize % 7,
                outputs: 1 + seed as usize % 4,
                density: 0.3,
                seed,
            };
            let d = random_dag(&spec);
            assert!(validate(&d).is_empty(), "seed {seed}: {:?}", validate(&d));
        }
    }

    #[test]
    fn zero_diffusivity_gives_identity_jacobians() {
        let spec = DiffusionSpec {
            nu: Diffusivity::Constant(0.0),
            ..DiffusionSpec::linear(5, 3)
        };
        let chain = diffusion_chain(&spec);
        let s = evaluate_chain(&chain, &spec.initial).unwrap();
        assert!(s.residual().iter().all(|&v| v == 0.0));
        for j in local_jacobians(&chain, &s).unwrap() {
            assert_eq!(j.to_dense(), BandMatrix::identity(5).widened(1, 1).unwrap().to_dense());
        }
    }

    #[test]
    fn random_chain_is_reproducible() {
        let spec = RandomChainSpec::new(4, 1, 2, 0);
        let a = random_banded_chain(&spec);
        let b = random_banded_chain(&spec);
        let x = [0.1, 0.2, 0.3, 0.4];
        let (sa, sb) = (evaluate_chain(&a, &x).unwrap(), evaluate_chain(&b, &x).unwrap());
        assert_eq!(sa, sb);
        let ja = local_jacobians(&a, &sa).unwrap();
        assert_eq!(ja.len(), 2);
        assert!(ja.iter().all(|j| j.bandwidths() == (1, 1)));
        assert_eq!(ja, local_jacobians(&b, &sb).unwrap());
    }
}
