use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use mfnewton::newton::{evaluate_chain, local_jacobians, solve_with};
use mfnewton::problems::{random_banded_chain, RandomChainSpec};
use mfnewton::{BandMatrix, FlopCount, Strategy};
use rayon::prelude::*;

use crate::{Failure, OutputFormat, StrategyArg};

pub const HEADER: [&str; 9] = [
    "n",
    "q",
    "ratio",
    "strategy",
    "flops_total",
    "flops_fma",
    "flops_div",
    "wall_time_s",
    "residual_check",
];

/// Residual checks are skipped above this size.
const CHECK_LIMIT: usize = 512;
const TIMING_RUNS: usize = 5;

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// State dimensions.
    #[arg(long = "n", value_delimiter = ',', default_values_t = [64, 128, 256, 512, 1024])]
    pub n: Vec<usize>,
    /// Chain lengths as multiples of n (q = round(ratio·n), at least 1).
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 1.0, 2.0, 4.0])]
    pub ratios: Vec<f64>,
    #[arg(long, value_delimiter = ',', value_enum, default_values_t = [StrategyArg::Ff, StrategyArg::Af])]
    pub strategies: Vec<StrategyArg>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Diagonal dominance of the random factors.
    #[arg(long, default_value_t = 16.0)]
    pub dominance: f64,
    /// Also measure wall time (median of 5 sequential runs).
    #[arg(long)]
    pub time: bool,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub format: OutputFormat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    pub q: usize,
    pub ratio: f64,
    pub strategy: Strategy,
    pub flops: FlopCount,
    pub wall_time_s: Option<f64>,
    pub residual_check: Option<f64>,
}

impl BenchRow {
    fn record(&self) -> [String; 9] {
        [
            self.n.to_string(),
            self.q.to_string(),
            self.ratio.to_string(),
            self.strategy.name().to_string(),
            self.flops.total().to_string(),
            self.flops.fma.to_string(),
            self.flops.div.to_string(),
            self.wall_time_s.map_or(String::new(), |t| format!("{t:.6}")),
            self.residual_check.map_or(String::new(), |r| format!("{r:.3e}")),
        ]
    }
}

fn chain_length(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64).round() as usize).max(1)
}

fn instance_seed(seed: u64, n: usize, q: usize) -> u64 {
    seed ^ ((n as u64) << 32) ^ q as u64
}

fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

struct Case {
    n: usize,
    ratio: f64,
    q: usize,
    jacobians: Vec<BandMatrix>,
    rhs: Vec<f64>,
}

impl Case {
    fn new(n: usize, ratio: f64, args: &BenchArgs) -> Result<Self, Failure> {
        let q = chain_length(n, ratio);
        let spec = RandomChainSpec {
            dominance: args.dominance,
            ..RandomChainSpec::new(n, 1.min(n - 1), q, instance_seed(args.seed, n, q))
        };
        let chain = random_banded_chain(&spec);
        let ctx = format!("n={n} q={q}");
        let states = evaluate_chain(&chain, &vec![0.0; n]).map_err(|e| Failure::from_newton(&ctx, &e))?;
        let jacobians = local_jacobians(&chain, &states).map_err(|e| Failure::from_newton(&ctx, &e))?;
        Ok(Self {
            n,
            ratio,
            q,
            jacobians,
            rhs: states.residual().to_vec(),
        })
    }

    fn solve(&self, s: Strategy) -> Result<(Vec<f64>, FlopCount), Failure> {
        solve_with(s, &self.jacobians, &self.rhs, None)
            .map_err(|e| Failure::from_newton(&format!("{} at n={} q={}", s.name(), self.n, self.q), &e))
    }

    fn rows(&self, strategies: &[Strategy], time: bool) -> Result<Vec<BenchRow>, Failure> {
        let mut out = Vec::new();
        let mut results = Vec::new();
        for &s in strategies {
            results.push((s, self.solve(s)?));
        }
        let check = if self.n <= CHECK_LIMIT {
            let get = |s: Strategy| -> Result<Vec<f64>, Failure> {
                match results.iter().find(|(t, _)| *t == s) {
                    Some((_, (x, _))) => Ok(x.clone()),
                    None => Ok(self.solve(s)?.0),
                }
            };
            let ff = get(Strategy::FactorizeFirst)?;
            let af = get(Strategy::AccumulateFirst)?;
            Some(max_rel_diff(&ff, &af))
        } else {
            None
        };
        for (s, (_, flops)) in results {
            let wall_time_s = if time {
                let mut samples = Vec::with_capacity(TIMING_RUNS);
                for _ in 0..TIMING_RUNS {
                    let t = Instant::now();
                    self.solve(s)?;
                    samples.push(t.elapsed().as_secs_f64());
                }
                Some(median(samples))
            } else {
                None
            };
            out.push(BenchRow {
                n: self.n,
                q: self.q,
                ratio: self.ratio,
                strategy: s,
                flops,
                wall_time_s,
                residual_check: check,
            });
        }
        Ok(out)
    }
}

pub fn collect_rows(args: &BenchArgs) -> Result<Vec<BenchRow>, Failure> {
    if args.n.is_empty() || args.ratios.is_empty() || args.strategies.is_empty() {
        return Err(Failure::usage("--n, --ratios and --strategies need at least one value"));
    }
    if let Some(n) = args.n.iter().find(|&&n| n < 2) {
        return Err(Failure::usage(format!("--n values must be at least 2, got {n}")));
    }
    if let Some(r) = args.ratios.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
        return Err(Failure::usage(format!("--ratios values must be positive, got {r}")));
    }
    if !(args.dominance > 1.0) {
        return Err(Failure::usage("--dominance must exceed 1"));
    }
    let mut strategies: Vec<Strategy> = args.strategies.iter().map(|&s| s.into()).collect();
    strategies.dedup();
    let mut ns = args.n.clone();
    ns.sort_unstable();
    ns.dedup();
    let mut ratios = args.ratios.clone();
    ratios.sort_by(f64::total_cmp);
    ratios.dedup();
    let pairs: Vec<(usize, f64)> = ns.iter().flat_map(|&n| ratios.iter().map(move |&r| (n, r))).collect();
    let run = |&(n, r): &(usize, f64)| Case::new(n, r, args)?.rows(&strategies, args.time);
    let groups: Vec<Vec<BenchRow>> = if args.time {
        pairs.iter().map(run).collect::<Result<_, _>>()?
    } else {
        pairs.par_iter().map(run).collect::<Result<_, _>>()?
    };
    Ok(groups.into_iter().flatten().collect())
}

pub fn render_csv(rows: &[BenchRow]) -> Result<String, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Failure::usage(e.to_string());
    w.write_record(HEADER).map_err(io)?;
    for r in rows {
        w.write_record(r.record()).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::usage(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Failure::usage(e.to_string()))
}

pub fn run(args: &BenchArgs) -> Result<(), Failure> {
    let rows = collect_rows(args)?;
    let text = match args.format {
        OutputFormat::Csv => render_csv(&rows)?,
    };
    crate::write_output(args.output.as_ref(), &text)
}
