//! Newton's method over chain-composed residuals `F = F_q ∘ … ∘ F_1`.
//!
//! Two step strategies are provided. *Factorize first* LU-factors every
//! banded local Jacobian and applies the `2q` triangular solves to the
//! residual, never forming `F'`. *Accumulate first* forms `F'` by a chain of
//! band-times-dense products and solves densely with partial pivoting.

use thiserror::Error;

use crate::dag::{extract_chain, layer_report, Dag, DagError};
use crate::flops::FlopCount;
use crate::linalg::{
    band_lu, band_matvec, band_times_dense, default_pivot_tol, dense_lu_pivoted, dense_solve, solve_lower_band,
    solve_upper_band, thomas_factorize, BandMatrix, LinalgError,
};
use crate::transform::{make_uniform, SplitPolicy};

/// One factor `x^i = F_i(x^{i-1})` of a chain residual.
///
/// `local_jacobian` must stay within the declared `bandwidths`.
pub trait LayerFunction: Send + Sync {
    fn dim(&self) -> usize;
    fn bandwidths(&self) -> (usize, usize);
    fn evaluate(&self, x: &[f64]) -> Vec<f64>;
    fn local_jacobian(&self, x: &[f64]) -> BandMatrix;
}

pub struct ChainResidual {
    n: usize,
    layers: Vec<Box<dyn LayerFunction>>,
}

impl std::fmt::Debug for ChainResidual {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChainResidual")
            .field("n", &self.n)
            .field("q", &self.layers.len())
            .finish()
    }
}

impl ChainResidual {
    pub fn new(n: usize, layers: Vec<Box<dyn LayerFunction>>) -> Result<Self, NewtonError> {
        if layers.is_empty() {
            return Err(NewtonError::EmptyChain);
        }
        if let Some(l) = layers.iter().find(|l| l.dim() != n) {
            return Err(NewtonError::DimensionMismatch {
                expected: n,
                got: l.dim(),
            });
        }
        Ok(Self { n, layers })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layers(&self) -> &[Box<dyn LayerFunction>] {
        &self.layers
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    FactorizeFirst,
    AccumulateFirst,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::FactorizeFirst => "ff",
            Strategy::AccumulateFirst => "af",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Norm {
    #[default]
    Inf,
    Two,
}

impl Norm {
    pub fn of(&self, v: &[f64]) -> f64 {
        match self {
            Norm::Inf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
            Norm::Two => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        }
    }
}

#[derive(Debug, Error)]
pub enum NewtonError {
    #[error("chain has no layers")]
    EmptyChain,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("layer {layer} produced a non-finite value")]
    NonFinite { layer: usize },
    #[error("local Jacobian of layer {layer} exceeds its declared bandwidths")]
    BandwidthViolation { layer: usize },
    #[error("local Jacobian of layer {layer} is not factorizable without pivoting: {source}")]
    SmallPivot {
        layer: usize,
        #[source]
        source: LinalgError,
    },
    #[error("accumulated Jacobian is singular: {0}")]
    Singular(#[source] LinalgError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Dag(#[from] DagError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<NewtonError>,
    },
}

impl NewtonError {
    /// True for factorization failures (small pivot or singular matrix).
    pub fn is_numerical(&self) -> bool {
        match self {
            NewtonError::SmallPivot { .. } | NewtonError::Singular(_) => true,
            NewtonError::AtIteration { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

/// States `x^0, …, x^q` of one chain evaluation; the residual is the last.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainStates {
    pub states: Vec<Vec<f64>>,
}

impl ChainStates {
    pub fn residual(&self) -> &[f64] {
        self.states.last().expect("at least x^0")
    }
}

pub fn evaluate_chain(chain: &ChainResidual, x0: &[f64]) -> Result<ChainStates, NewtonError> {
    if x0.len() != chain.n {
        return Err(NewtonError::DimensionMismatch {
            expected: chain.n,
            got: x0.len(),
        });
    }
    let mut states = Vec::with_capacity(chain.len() + 1);
    states.push(x0.to_vec());
    for (i, layer) in chain.layers.iter().enumerate() {
        let next = layer.evaluate(states.last().expect("nonempty"));
        if next.len() != chain.n {
            return Err(NewtonError::DimensionMismatch {
                expected: chain.n,
                got: next.len(),
            });
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(NewtonError::NonFinite { layer: i + 1 });
        }
        states.push(next);
    }
    Ok(ChainStates { states })
}

/// `F'_i(x^{i-1})` for every layer, at the retained linearization points.
pub fn local_jacobians(chain: &ChainResidual, states: &ChainStates) -> Result<Vec<BandMatrix>, NewtonError> {
    chain
        .layers
        .iter()
        .enumerate()
        .map(|(i, layer)| {
            let j = layer.local_jacobian(&states.states[i]);
            let (ml, mu) = j.bandwidths();
            let (dl, du) = layer.bandwidths();
            if j.dim() != chain.n {
                return Err(NewtonError::DimensionMismatch {
                    expected: chain.n,
                    got: j.dim(),
                });
            }
            if ml > dl || mu > du {
                return Err(NewtonError::BandwidthViolation { layer: i + 1 });
            }
            Ok(j)
        })
        .collect()
}

/// `(F'_q ⋯ F'_1)^{-1}·rhs` by `q` band factorizations and `2q` band
/// substitutions, last layer first.
pub fn solve_factorize_first(
    jacobians: &[BandMatrix],
    rhs: &[f64],
    pivot_tol: Option<f64>,
) -> Result<(Vec<f64>, FlopCount), NewtonError> {
    let mut w = rhs.to_vec();
    let mut flops = FlopCount::ZERO;
    for (i, a) in jacobians.iter().enumerate().rev() {
        let tol = pivot_tol.unwrap_or_else(|| default_pivot_tol(a));
        let (ml, mu) = a.bandwidths();
        let factored = if ml <= 1 && mu <= 1 {
            thomas_factorize(a, tol)
        } else {
            band_lu(a, tol)
        };
        let (lu, f) = factored.map_err(|source| match source {
            LinalgError::SmallPivot { .. } => NewtonError::SmallPivot { layer: i + 1, source },
            other => NewtonError::Linalg(other),
        })?;
        let (z, fl) = solve_lower_band(&lu, &w)?;
        let (x, fu) = solve_upper_band(&lu, &z)?;
        w = x;
        flops += f + fl + fu;
    }
    Ok((w, flops))
}

/// `(F'_q ⋯ F'_1)^{-1}·rhs` by accumulating the product left to right from
/// the dense form of `F'_1`, then a pivoted dense solve.
pub fn solve_accumulate_first(jacobians: &[BandMatrix], rhs: &[f64]) -> Result<(Vec<f64>, FlopCount), NewtonError> {
    let (first, rest) = jacobians.split_first().ok_or(NewtonError::EmptyChain)?;
    let mut acc = first.to_dense();
    let mut flops = FlopCount::ZERO;
    for a in rest {
        let (next, f) = band_times_dense(a, &acc)?;
        acc = next;
        flops += f;
    }
    let (lu, f) = dense_lu_pivoted(&acc).map_err(NewtonError::Singular)?;
    let (x, fs) = dense_solve(&lu, rhs).map_err(NewtonError::Singular)?;
    Ok((x, flops + f + fs))
}

pub fn solve_with(
    strategy: Strategy,
    jacobians: &[BandMatrix],
    rhs: &[f64],
    pivot_tol: Option<f64>,
) -> Result<(Vec<f64>, FlopCount), NewtonError> {
    match strategy {
        Strategy::FactorizeFirst => solve_factorize_first(jacobians, rhs, pivot_tol),
        Strategy::AccumulateFirst => solve_accumulate_first(jacobians, rhs),
    }
}

fn negated((v, f): (Vec<f64>, FlopCount)) -> (Vec<f64>, FlopCount) {
    (v.into_iter().map(|x| -x).collect(), f)
}

/// Newton step `Δx = -F'(x)^{-1}·F(x)` without forming `F'`.
pub fn step_factorize_first(
    chain: &ChainResidual,
    states: &ChainStates,
    pivot_tol: Option<f64>,
) -> Result<(Vec<f64>, FlopCount), NewtonError> {
    let jac = local_jacobians(chain, states)?;
    solve_factorize_first(&jac, states.residual(), pivot_tol).map(negated)
}

/// Newton step through the explicitly accumulated Jacobian.
pub fn step_accumulate_first(
    chain: &ChainResidual,
    states: &ChainStates,
) -> Result<(Vec<f64>, FlopCount), NewtonError> {
    let jac = local_jacobians(chain, states)?;
    solve_accumulate_first(&jac, states.residual()).map(negated)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonConfig {
    pub epsilon: f64,
    pub max_iterations: usize,
    pub strategy: Strategy,
    /// `None` selects `1e-12·‖F'_i‖∞` per layer.
    pub pivot_tol: Option<f64>,
    pub norm: Norm,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-10,
            max_iterations: 50,
            strategy: Strategy::FactorizeFirst,
            pivot_tol: None,
            norm: Norm::Inf,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonResult {
    pub x: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Residual norm at every visited iterate, starting with `x0`.
    pub residual_norms: Vec<f64>,
    /// Step computation cost; residual and Jacobian evaluation excluded.
    pub cost: FlopCount,
}

/// Plain Newton iteration `x := x + Δx` until `‖F(x)‖ < epsilon`.
pub fn newton_solve(chain: &ChainResidual, x0: &[f64], config: &NewtonConfig) -> Result<NewtonResult, NewtonError> {
    if !(config.epsilon > 0.0) {
        return Err(NewtonError::InvalidConfig("epsilon must be positive".into()));
    }
    if config.max_iterations == 0 {
        return Err(NewtonError::InvalidConfig("max_iterations must be at least 1".into()));
    }
    let mut x = x0.to_vec();
    let mut residual_norms = Vec::new();
    let mut cost = FlopCount::ZERO;
    let mut iterations = 0;
    loop {
        let at = |source: NewtonError| NewtonError::AtIteration {
            iteration: iterations,
            source: Box::new(source),
        };
        let states = evaluate_chain(chain, &x).map_err(at)?;
        let r = config.norm.of(states.residual());
        residual_norms.push(r);
        if r < config.epsilon || iterations == config.max_iterations {
            return Ok(NewtonResult {
                x,
                converged: r < config.epsilon,
                iterations,
                residual_norms,
                cost,
            });
        }
        let (dx, f) = match config.strategy {
            Strategy::FactorizeFirst => step_factorize_first(chain, &states, config.pivot_tol),
            Strategy::AccumulateFirst => step_accumulate_first(chain, &states),
        }
        .map_err(at)?;
        for (xi, d) in x.iter_mut().zip(&dx) {
            *xi += d;
        }
        cost += f;
        iterations += 1;
    }
}

/// Local Jacobians of a uniformly layered DAG, each stored with its
/// tightest enclosing bandwidths.
pub fn dag_local_jacobians(dag: &Dag) -> Result<Vec<BandMatrix>, NewtonError> {
    extract_chain(dag)?
        .iter()
        .map(|j| BandMatrix::from_dense_tight(&j.to_dense()).map_err(NewtonError::from))
        .collect()
}

/// `(F')^{-1}·y` for a uniformly layered invertible DAG (no minus sign).
pub fn dag_step(
    dag: &Dag,
    y: &[f64],
    strategy: Strategy,
    pivot_tol: Option<f64>,
) -> Result<(Vec<f64>, FlopCount), NewtonError> {
    if y.len() != dag.num_outputs() {
        return Err(NewtonError::DimensionMismatch {
            expected: dag.num_outputs(),
            got: y.len(),
        });
    }
    let jac = dag_local_jacobians(dag)?;
    if jac.is_empty() {
        // single layer: inputs coincide with outputs only if n = m = 0
        return Err(NewtonError::EmptyChain);
    }
    solve_with(strategy, &jac, y, pivot_tol)
}

/// The matrix-free Newton step of a uniformly layered DAG.
pub fn step_from_dag(dag: &Dag, y: &[f64]) -> Result<(Vec<f64>, FlopCount), NewtonError> {
    dag_step(dag, y, Strategy::FactorizeFirst, None)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetCheck {
    /// True iff one of the built-in strategies needs at most `K` flops.
    pub within_budget: bool,
    pub factorize_first: Option<FlopCount>,
    pub accumulate_first: Option<FlopCount>,
}

/// Checks the two built-in strategies against a flop budget.
///
/// A `false` answer only means neither strategy fits; cheaper evaluation
/// orders may exist. Non-uniform DAGs are made uniform first.
pub fn flop_budget_check(dag: &Dag, y: &[f64], budget: u64) -> Result<BudgetCheck, NewtonError> {
    let uniform;
    let dag = if layer_report(dag)?.is_uniform {
        dag
    } else {
        uniform = make_uniform(dag, SplitPolicy::default())?;
        &uniform
    };
    let ff = dag_step(dag, y, Strategy::FactorizeFirst, None);
    let af = dag_step(dag, y, Strategy::AccumulateFirst, None);
    let (ff, af) = match (ff, af) {
        (Err(e), Err(_)) => return Err(e),
        (ff, af) => (ff.ok().map(|r| r.1), af.ok().map(|r| r.1)),
    };
    let best = [ff, af].iter().flatten().map(FlopCount::total).min();
    Ok(BudgetCheck {
        within_budget: best.is_some_and(|b| b <= budget),
        factorize_first: ff,
        accumulate_first: af,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjointCosts {
    /// `(F'_q ⋯ F'_1)^T·ybar` after accumulating the product.
    pub accumulated: FlopCount,
    /// `F'_1^T·(… (F'_q^T·ybar))`, one factor at a time.
    pub propagated: FlopCount,
    pub xbar_accumulated: Vec<f64>,
    pub xbar_propagated: Vec<f64>,
}

/// Costs of the two association orders of an adjoint product over a chain.
pub fn adjoint_costs(jacobians: &[BandMatrix], ybar: &[f64]) -> Result<AdjointCosts, NewtonError> {
    let (first, rest) = jacobians.split_first().ok_or(NewtonError::EmptyChain)?;
    let mut acc = first.to_dense();
    let mut accumulated = FlopCount::ZERO;
    for a in rest {
        let (next, f) = band_times_dense(a, &acc)?;
        acc = next;
        accumulated += f;
    }
    let (lo, up) = acc.envelope();
    let jt = BandMatrix::from_dense(&acc.transpose(), up, lo)?;
    let (xbar_accumulated, f) = band_matvec(&jt, ybar)?;
    accumulated += f;

    let mut w = ybar.to_vec();
    let mut propagated = FlopCount::ZERO;
    for a in jacobians.iter().rev() {
        let (next, f) = band_matvec(&a.transpose(), &w)?;
        w = next;
        propagated += f;
    }
    Ok(AdjointCosts {
        accumulated,
        propagated,
        xbar_accumulated,
        xbar_propagated: w,
    })
}
