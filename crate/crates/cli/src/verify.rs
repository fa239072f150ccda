use std::path::PathBuf;

use clap::Args;
use mfnewton::dag::{jacobian_by_paths, layer_report, validate, Dag};
use mfnewton::format::parse_dag;
use mfnewton::linalg::{band_lu, dense_lu_pivoted, dense_solve, thomas_factorize};
use mfnewton::newton::{
    adjoint_costs, dag_local_jacobians, dag_step, evaluate_chain, flop_budget_check, local_jacobians, newton_solve,
    solve_accumulate_first, solve_factorize_first, NewtonConfig,
};
use mfnewton::problems::{
    diffusion_chain, figure1_dag, figure4_dag, figure4b_dag, figure5_dag, random_banded_chain, random_dag,
    DiffusionSpec, RandomChainSpec, RandomDagSpec,
};
use mfnewton::transform::{connected_components, make_layered, make_uniform, preaccumulate, split_edge, SplitPolicy};
use mfnewton::{BandMatrix, DenseMatrix, Strategy};

use crate::{read_file, Failure};

pub const CHECKS: [&str; 6] = [
    "sample-counts",
    "strategy-oracle",
    "invariance",
    "structure",
    "newton",
    "kernels",
];

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Run only this check.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(CHECKS))]
    pub filter: Option<String>,
    /// Also check a DAG file against the path-product oracle.
    #[arg(long)]
    pub dag: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

fn oracle_solve(j: &DenseMatrix, y: &[f64]) -> Result<Vec<f64>, String> {
    let (lu, _) = dense_lu_pivoted(&j.clone().into_full()).map_err(|e| e.to_string())?;
    Ok(dense_solve(&lu, y).map_err(|e| e.to_string())?.0)
}

fn sample_counts() -> Outcome {
    let dag = figure1_dag();
    let y = [1.0, 1.0];
    let e = |e: mfnewton::NewtonError| e.to_string();
    let (_, ff) = dag_step(&dag, &y, Strategy::FactorizeFirst, None).map_err(e)?;
    let (_, af) = dag_step(&dag, &y, Strategy::AccumulateFirst, None).map_err(e)?;
    ensure(ff.total() == 6, || {
        format!("factorize first: {} flops, expected 6", ff.total())
    })?;
    ensure(af.total() == 12, || {
        format!("accumulate first: {} flops, expected 12", af.total())
    })?;
    let factors = dag_local_jacobians(&dag).map_err(e)?;
    let full: Vec<BandMatrix> = factors.iter().map(|f| f.widened(1, 1).expect("n = 2")).collect();
    let adj = adjoint_costs(&full, &[0.0, 1.0]).map_err(e)?;
    ensure(adj.accumulated.total() == 12 && adj.propagated.total() == 8, || {
        format!(
            "adjoint orders {} vs {}, expected 12 vs 8",
            adj.accumulated.total(),
            adj.propagated.total()
        )
    })?;
    let yes = flop_budget_check(&dag, &y, 6).map_err(e)?.within_budget;
    let no = flop_budget_check(&dag, &y, 5).map_err(e)?.within_budget;
    ensure(yes && !no, || format!("budget answers K=6 {yes}, K=5 {no}"))?;
    Ok("ff 6, af 12, adjoint 12 vs 8, budget 6 yes / 5 no".into())
}

fn strategy_oracle(seed: u64) -> Outcome {
    let mut worst = 0.0f64;
    for k in 0..50u64 {
        let n = 2 + (k as usize * 7) % 31;
        let m = (1 + k as usize % 3).min(n - 1);
        let spec = RandomChainSpec::new(n, m, 1 + (k as usize * 5) % 16, seed + k);
        let chain = random_banded_chain(&spec);
        let s = evaluate_chain(&chain, &vec![0.0; n]).map_err(|e| e.to_string())?;
        let jac = local_jacobians(&chain, &s).map_err(|e| e.to_string())?;
        let mut product = jac[0].to_dense().into_full();
        for j in &jac[1..] {
            product = j.to_dense().matmul(&product);
        }
        let want = oracle_solve(&product, s.residual())?;
        let (got, _) = solve_factorize_first(&jac, s.residual(), None).map_err(|e| e.to_string())?;
        let d = rel_diff(&got, &want);
        ensure(d <= 1e-9, || format!("{spec:?}: relative difference {d:e}"))?;
        worst = worst.max(d);
    }
    Ok(format!("50 chains, worst relative difference {worst:.1e}"))
}

fn jac_close(a: &DenseMatrix, b: &DenseMatrix) -> bool {
    let scale = a.max_abs().max(1.0);
    a.rows() == b.rows() && a.cols() == b.cols() && a.max_abs_diff(b) <= 1e-13 * scale
}

fn invariance(seed: u64) -> Outcome {
    let mut checked = 0;
    for k in 0..100u64 {
        let n = 1 + k as usize % 3;
        let spec = RandomDagSpec {
            inputs: n,
            intermediates: k as usize % 8,
            outputs: n,
            density: 0.35,
            seed: seed + k,
        };
        let dag = random_dag(&spec);
        let j = jacobian_by_paths(&dag).map_err(|e| e.to_string())?;
        let mut variants: Vec<(&str, Dag)> = Vec::new();
        for p in [SplitPolicy::LabelOnLowerEdge, SplitPolicy::LabelOnUpperEdge] {
            let e = dag.edges()[0];
            variants.push((
                "split_edge",
                split_edge(&dag, e.src, e.dst, p).map_err(|e| e.to_string())?,
            ));
            variants.push(("make_layered", make_layered(&dag, p).map_err(|e| e.to_string())?));
        }
        let layered = make_layered(&dag, SplitPolicy::default()).map_err(|e| e.to_string())?;
        if layer_report(&layered).map_err(|e| e.to_string())?.depth() >= 2 {
            for c in connected_components(&layered, 2).map_err(|e| e.to_string())? {
                if let Ok(d) = preaccumulate(&layered, &c) {
                    variants.push(("preaccumulate", d));
                }
            }
        }
        if oracle_solve(&j, &vec![1.0; n]).is_ok() {
            variants.push((
                "make_uniform",
                make_uniform(&dag, SplitPolicy::default()).map_err(|e| e.to_string())?,
            ));
        }
        for (name, v) in variants {
            ensure(validate(&v).is_empty(), || {
                format!("{name} produced an invalid DAG from {spec:?}")
            })?;
            let jv = jacobian_by_paths(&v).map_err(|e| e.to_string())?;
            ensure(jac_close(&j, &jv), || {
                format!("{name} changed the Jacobian of {spec:?}")
            })?;
            checked += 1;
        }
    }
    Ok(format!("{checked} rewrites preserve the Jacobian"))
}

fn structure() -> Outcome {
    let b = make_layered(&figure4_dag(), SplitPolicy::default()).map_err(|e| e.to_string())?;
    ensure(b == figure4b_dag(), || format!("split figure 4 differs: {b:?}"))?;
    let u = make_uniform(&figure5_dag(), SplitPolicy::default()).map_err(|e| e.to_string())?;
    let r = layer_report(&u).map_err(|e| e.to_string())?;
    ensure(r.layer_sizes == vec![3, 3, 3], || {
        format!("figure 5 layers {:?}", r.layer_sizes)
    })?;
    ensure(u.num_intermediates() == 3, || {
        format!("figure 5 keeps {} intermediates", u.num_intermediates())
    })?;
    Ok("figure 4 split, figure 5 uniform [3, 3, 3]".into())
}

fn newton() -> Outcome {
    let lin = diffusion_chain(&DiffusionSpec::linear(64, 32));
    let nonlin = diffusion_chain(&DiffusionSpec::nonlinear(64, 32));
    let x0 = vec![0.0; 64];
    let mut summary = Vec::new();
    for s in [Strategy::FactorizeFirst, Strategy::AccumulateFirst] {
        let cfg = NewtonConfig {
            strategy: s,
            ..NewtonConfig::default()
        };
        let a = newton_solve(&lin, &x0, &cfg).map_err(|e| e.to_string())?;
        let last = *a.residual_norms.last().expect("nonempty");
        ensure(a.converged && a.iterations == 1 && last < 1e-11, || {
            format!(
                "{}: linear run {} iterations, residual {last:e}",
                s.name(),
                a.iterations
            )
        })?;
        let b = newton_solve(&nonlin, &x0, &cfg).map_err(|e| e.to_string())?;
        let last = *b.residual_norms.last().expect("nonempty");
        ensure(b.converged && b.iterations <= 8 && last < 1e-10, || {
            format!(
                "{}: nonlinear run {} iterations, residual {last:e}",
                s.name(),
                b.iterations
            )
        })?;
        summary.push(format!("{} {}+{} iterations", s.name(), a.iterations, b.iterations));
    }
    Ok(summary.join(", "))
}

fn kernels(seed: u64) -> Outcome {
    for k in 0..20u64 {
        let chain = random_banded_chain(&RandomChainSpec::new(16 + k as usize, 1, 1, seed + k));
        let x = vec![0.0; 16 + k as usize];
        let s = evaluate_chain(&chain, &x).map_err(|e| e.to_string())?;
        let a = &local_jacobians(&chain, &s).map_err(|e| e.to_string())?[0];
        let (t, ft) = thomas_factorize(a, 0.0).map_err(|e| e.to_string())?;
        let (b, fb) = band_lu(a, 0.0).map_err(|e| e.to_string())?;
        ensure(t == b && ft == fb, || {
            format!("thomas and band LU differ on instance {k}")
        })?;
        ensure(t.bandwidths() == a.bandwidths(), || {
            "band LU changed the bandwidths".into()
        })?;
    }
    let chain = random_banded_chain(&RandomChainSpec::new(8, 2, 3, seed));
    let s = evaluate_chain(&chain, &[0.0; 8]).map_err(|e| e.to_string())?;
    let jac = local_jacobians(&chain, &s).map_err(|e| e.to_string())?;
    let (x, _) = solve_factorize_first(&jac, s.residual(), None).map_err(|e| e.to_string())?;
    let (z, _) = solve_accumulate_first(&jac, s.residual()).map_err(|e| e.to_string())?;
    let d = rel_diff(&x, &z);
    ensure(d <= 1e-12, || format!("strategies disagree by {d:e}"))?;
    Ok("thomas matches band LU on 20 instances".into())
}

fn dag_file(path: &PathBuf) -> Outcome {
    let text = read_file(path).map_err(|f| f.message)?;
    let dag = parse_dag(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    let v = validate(&dag);
    ensure(v.is_empty(), || format!("invalid DAG: {v:?}"))?;
    let j = jacobian_by_paths(&dag).map_err(|e| e.to_string())?;
    let y: Vec<f64> = (0..dag.num_outputs()).map(|i| 1.0 + i as f64).collect();
    let want = oracle_solve(&j, &y)?;
    let uniform = make_uniform(&dag, SplitPolicy::default()).map_err(|e| e.to_string())?;
    let ju = jacobian_by_paths(&uniform).map_err(|e| e.to_string())?;
    ensure(jac_close(&j, &ju), || "make_uniform changed the Jacobian".into())?;
    let mut parts = Vec::new();
    for s in [Strategy::FactorizeFirst, Strategy::AccumulateFirst] {
        let (got, f) = dag_step(&uniform, &y, s, None).map_err(|e| format!("{}: {e}", s.name()))?;
        let d = rel_diff(&got, &want);
        ensure(d <= 1e-10, || {
            format!("{}: step differs from the oracle by {d:e}", s.name())
        })?;
        parts.push(format!("{} {} flops", s.name(), f.total()));
    }
    Ok(format!(
        "{}: step matches the path oracle ({})",
        path.display(),
        parts.join(", ")
    ))
}

pub fn run(args: &VerifyArgs) -> Result<(), Failure> {
    let mut failed = 0;
    let mut report = |name: &str, outcome: Outcome| match outcome {
        Ok(detail) => println!("PASS {name}: {detail}"),
        Err(why) => {
            failed += 1;
            println!("FAIL {name}: {why}");
        }
    };
    for name in CHECKS {
        if args.filter.as_deref().is_some_and(|f| f != name) {
            continue;
        }
        let outcome = match name {
            "sample-counts" => sample_counts(),
            "strategy-oracle" => strategy_oracle(args.seed),
            "invariance" => invariance(args.seed),
            "structure" => structure(),
            "newton" => newton(),
            "kernels" => kernels(args.seed),
            _ => unreachable!(),
        };
        report(name, outcome);
    }
    if let Some(path) = &args.dag {
        report("dag-file", dag_file(path));
    }
    if failed > 0 {
        return Err(Failure {
            code: Failure::VERIFY,
            message: format!("{failed} check(s) failed"),
        });
    }
    Ok(())
}
