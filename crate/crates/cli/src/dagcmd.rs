use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use mfnewton::dag::{layer_report, path_count, validate, Dag};
use mfnewton::format::{parse_dag, parse_vector, write_dag, write_vector};
use mfnewton::newton::{dag_step, flop_budget_check};
use mfnewton::transform::{make_layered, make_uniform, preaccumulate_greedy, SplitPolicy};
use mfnewton::{DagError, Strategy};

use crate::{read_file, write_output, Failure, StrategyArg};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    /// The first new edge keeps the label.
    Lower,
    /// The second new edge keeps the label.
    Upper,
}

impl From<PolicyArg> for SplitPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Lower => SplitPolicy::LabelOnLowerEdge,
            PolicyArg::Upper => SplitPolicy::LabelOnUpperEdge,
        }
    }
}

#[derive(Debug, Args)]
pub struct TransformArgs {
    /// Input DAG file.
    pub input: PathBuf,
    /// Comma-separated steps: split-edges, preaccumulate, make-uniform.
    /// Empty means no change.
    #[arg(long, default_value = "")]
    pub pipeline: String,
    #[arg(long, value_enum, default_value = "lower")]
    pub policy: PolicyArg,
    /// Output file; stdout if omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StepArgs {
    /// DAG file.
    pub dag: PathBuf,
    /// Right-hand side, one number per line.
    pub y: PathBuf,
    #[arg(long, value_enum, default_value = "ff")]
    pub strategy: StrategyArg,
    /// Flop budget to check.
    #[arg(long = "k")]
    pub budget: Option<u64>,
}

fn load_dag(path: &PathBuf) -> Result<Dag, Failure> {
    let dag = parse_dag(&read_file(path)?).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    let violations = validate(&dag);
    if !violations.is_empty() {
        return Err(Failure::usage(format!(
            "{}: {}",
            path.display(),
            DagError::Invalid(violations)
        )));
    }
    Ok(dag)
}

fn describe(dag: &Dag) -> Result<String, DagError> {
    let r = layer_report(dag)?;
    let paths = path_count(dag).map_or_else(|e| e.to_string(), |c| c.to_string());
    Ok(format!(
        "vertices {}+{}+{} edges {} layers {:?} layered {} uniform {} paths {}",
        dag.num_inputs(),
        dag.num_intermediates(),
        dag.num_outputs(),
        dag.edges().len(),
        r.layer_sizes,
        r.is_layered,
        r.is_uniform,
        paths
    ))
}

pub fn transform(args: &TransformArgs) -> Result<(), Failure> {
    let input = load_dag(&args.input)?;
    let policy = args.policy.into();
    let steps: Vec<&str> = args
        .pipeline
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    let mut dag = input.clone();
    let fail = |step: &str, e: DagError| Failure::usage(format!("{step}: {e}"));
    for step in &steps {
        dag = match *step {
            "split-edges" => make_layered(&dag, policy),
            "preaccumulate" => make_layered(&dag, policy).and_then(|d| preaccumulate_greedy(&d)),
            "make-uniform" => make_uniform(&dag, policy),
            other => {
                return Err(Failure::usage(format!(
                    "unknown pipeline step `{other}` (expected split-edges, preaccumulate, make-uniform)"
                )))
            }
        }
        .map_err(|e| fail(step, e))?;
    }
    let report = format!(
        "before: {}\nafter:  {}\n",
        describe(&input).map_err(|e| fail("report", e))?,
        describe(&dag).map_err(|e| fail("report", e))?
    );
    let text = if steps.is_empty() {
        read_file(&args.input)?
    } else {
        write_dag(&dag)
    };
    write_output(args.output.as_ref(), &text)?;
    if args.output.is_some() {
        print!("{report}");
    } else {
        eprint!("{report}");
    }
    Ok(())
}

pub fn step(args: &StepArgs) -> Result<(), Failure> {
    let mut dag = load_dag(&args.dag)?;
    let y = parse_vector(&read_file(&args.y)?).map_err(|e| Failure::usage(format!("{}: {e}", args.y.display())))?;
    if y.len() != dag.num_outputs() {
        return Err(Failure::usage(format!(
            "y has {} entries but the DAG has {} outputs",
            y.len(),
            dag.num_outputs()
        )));
    }
    let report = layer_report(&dag).map_err(|e| Failure::usage(e.to_string()))?;
    if !report.is_uniform {
        dag = make_uniform(&dag, SplitPolicy::default()).map_err(|e| Failure::usage(format!("make-uniform: {e}")))?;
    }
    let chosen: Strategy = args.strategy.into();
    let (delta, _) = dag_step(&dag, &y, chosen, None).map_err(|e| Failure::from_newton(chosen.name(), &e))?;

    let mut out = String::from("delta\n");
    out.push_str(&write_vector(&delta));
    for s in [Strategy::FactorizeFirst, Strategy::AccumulateFirst] {
        match dag_step(&dag, &y, s, None) {
            Ok((_, f)) => {
                let _ = writeln!(
                    out,
                    "flops {} total={} fma={} div={}",
                    s.name(),
                    f.total(),
                    f.fma,
                    f.div
                );
            }
            Err(e) => {
                let _ = writeln!(out, "flops {} failed: {e}", s.name());
            }
        }
    }
    if let Some(k) = args.budget {
        let check = flop_budget_check(&dag, &y, k).map_err(|e| Failure::from_newton("budget", &e))?;
        let _ = writeln!(out, "budget {k} {}", if check.within_budget { "yes" } else { "no" });
    }
    print!("{out}");
    Ok(())
}
