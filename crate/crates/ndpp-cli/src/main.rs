//! Experiment runner: streaming MAP inference, single-pass learning,
//! synthetic model generation, and log-likelihood evaluation, with
//! reproducible CSV traces.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, ValueEnum};
use nalgebra::DMatrix;
use ndpp::data::{
    generate_synthetic_model, permute_stream, read_stream_csv, write_learn_trace, write_trace,
    BasketReader, MetricRow, MetricTrace, SyntheticSpec,
};
use ndpp::{
    brute_force_map, full_log_likelihood, model_stream, offline_greedy, online_learn,
    BasketEvent, DetCounter, InferenceState, LearningConfig, NdppModel, OccurrenceCounts,
    PartitionGreedy, StreamPoint,
};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "ndpp", version, about = "Streaming MAP inference and online learning for low-rank NDPPs")]
enum Cli {
    /// Run a MAP inference algorithm over a column stream.
    Infer(InferArgs),
    /// Learn a model from a basket file in a single online pass.
    Learn(LearnArgs),
    /// Generate a synthetic model file.
    Gen(GenArgs),
    /// Evaluate the regularized log-likelihood of a model on a basket file.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Algorithm {
    Partition,
    Greedy,
    Lss,
    #[value(name = "two-neighbor")]
    TwoNeighbor,
    Offline,
    Brute,
}

impl Algorithm {
    fn name(self) -> &'static str {
        match self {
            Algorithm::Partition => "partition",
            Algorithm::Greedy => "greedy",
            Algorithm::Lss => "lss",
            Algorithm::TwoNeighbor => "two-neighbor",
            Algorithm::Offline => "offline",
            Algorithm::Brute => "brute",
        }
    }
}

#[derive(Args)]
struct InferArgs {
    #[arg(long, value_enum)]
    alg: Algorithm,
    /// Target solution size.
    #[arg(long, default_value_t = 8)]
    k: usize,
    /// Swap improvement margin; the acceptance factor is alpha = 1 + epsilon.
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Model JSON file; supplies C and, without --stream, the columns.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Column-stream CSV (records: index,v[0..d),b[0..d)); C defaults to
    /// zero when no model is given.
    #[arg(long)]
    stream: Option<PathBuf>,
    /// Declared ground-set size (partition algorithm); defaults to the
    /// stream length.
    #[arg(long)]
    n: Option<usize>,
    /// Shuffle the stream under the seed before running.
    #[arg(long)]
    permute: bool,
    /// Metric trace CSV output path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LearnArgs {
    /// Basket text file: one basket per line, whitespace-separated item ids.
    #[arg(long)]
    baskets: PathBuf,
    /// Embedding dimension (must be even).
    #[arg(long)]
    d: usize,
    /// Ground-set size; omitted means the universe grows lazily with the data.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    eta: f64,
    #[arg(long, default_value_t = 0.01)]
    reg_alpha: f64,
    #[arg(long, default_value_t = 0.01)]
    reg_beta: f64,
    /// Drop baskets larger than this size.
    #[arg(long)]
    dmax: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Learned model JSON output; the learning trace goes to the same path
    /// with a .trace.csv extension.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Model JSON output path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    baskets: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    reg_alpha: f64,
    #[arg(long, default_value_t = 0.01)]
    reg_beta: f64,
    #[arg(long)]
    dmax: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli {
        Cli::Infer(args) => run_infer(args),
        Cli::Learn(args) => run_learn(args),
        Cli::Gen(args) => run_gen(args),
        Cli::Eval(args) => run_eval(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run_infer(args: InferArgs) -> ndpp::Result<()> {
    let model = args
        .model
        .as_deref()
        .map(NdppModel::read_json_file)
        .transpose()?;

    let mut stream: Vec<StreamPoint> = match (&args.stream, &model) {
        (Some(path), _) => read_stream_csv(path)?,
        (None, Some(m)) => model_stream(m),
        (None, None) => {
            return Err(ndpp::Error::Config(
                "infer requires --model or --stream".into(),
            ))
        }
    };
    if stream.is_empty() {
        return Err(ndpp::Error::Config("the stream is empty".into()));
    }
    if args.permute {
        stream = permute_stream(stream, args.seed);
    }

    let d = stream[0].v.nrows();
    let c: DMatrix<f64> = match &model {
        Some(m) => m.c().clone(),
        None => DMatrix::zeros(d, d),
    };

    let alpha = 1.0 + args.epsilon;
    if args.epsilon < 0.0 {
        return Err(ndpp::Error::Config(format!(
            "epsilon must be >= 0, got {}",
            args.epsilon
        )));
    }
    let alg = args.alg.name().to_string();

    let mut comments = vec![
        format!("ndpp {VERSION}"),
        "subcommand = infer".to_string(),
        format!("alg = {alg}"),
        format!("k = {}", args.k),
        format!("epsilon = {}", args.epsilon),
        format!("seed = {}", args.seed),
        format!("permute = {}", args.permute),
    ];
    if let Some(p) = &args.model {
        comments.push(format!("model = {}", p.display()));
    }
    if let Some(p) = &args.stream {
        comments.push(format!("stream = {}", p.display()));
    }

    let mut trace = MetricTrace::default();
    let (solution, value) = match args.alg {
        Algorithm::Partition => {
            let n = args.n.unwrap_or(stream.len());
            let mut pg = PartitionGreedy::new(n, args.k, c)?;
            for (step, pt) in stream.into_iter().enumerate() {
                pg.step(pt)?;
                trace.rows.push(MetricRow {
                    step: step as u64,
                    algorithm: alg.clone(),
                    objective: pg.objective(),
                    det_evals: pg.counter.evaluations(),
                    swaps: 0,
                });
            }
            let (s, f, _) = pg.finish();
            (s, f)
        }
        Algorithm::Greedy | Algorithm::Lss | Algorithm::TwoNeighbor => {
            let state_alpha = if args.alg == Algorithm::Greedy { 1.0 } else { alpha };
            let mut st = InferenceState::new(args.k, state_alpha, c)?;
            for (step, pt) in stream.into_iter().enumerate() {
                match args.alg {
                    Algorithm::Greedy => st.online_greedy_step(pt)?,
                    Algorithm::Lss => st.online_lss_step(pt)?,
                    Algorithm::TwoNeighbor => st.online_two_neighbor_step(pt)?,
                    _ => unreachable!(),
                }
                trace.rows.push(MetricRow {
                    step: step as u64,
                    algorithm: alg.clone(),
                    objective: st.objective(),
                    det_evals: st.counter.evaluations(),
                    swaps: st.swap_count(),
                });
            }
            (st.solution(), st.objective())
        }
        Algorithm::Offline | Algorithm::Brute => {
            let model = model.ok_or_else(|| {
                ndpp::Error::Config(format!("--alg {alg} requires --model", alg = alg))
            })?;
            let mut counter = DetCounter::new();
            let (s, f) = if args.alg == Algorithm::Offline {
                let res = offline_greedy(&model, args.k, &mut counter)?;
                (res.subset, res.value)
            } else {
                brute_force_map(&model, args.k, &mut counter)?
            };
            trace.rows.push(MetricRow {
                step: 0,
                algorithm: alg.clone(),
                objective: f,
                det_evals: counter.evaluations(),
                swaps: 0,
            });
            (s, f)
        }
    };

    write_trace(&args.out, &comments, &trace)?;
    println!("f(S) = {value}");
    println!("S = {solution}");
    Ok(())
}

fn run_learn(args: LearnArgs) -> ndpp::Result<()> {
    let mut cfg = LearningConfig::new(args.n.unwrap_or(0), args.d)?;
    cfg.eta = args.eta;
    cfg.reg_alpha = args.reg_alpha;
    cfg.reg_beta = args.reg_beta;
    cfg.seed = args.seed;
    cfg.lazy_growth = args.n.is_none();
    cfg.check()?;

    let start = Instant::now();
    let mut reader = BasketReader::open(&args.baskets, args.n, args.dmax)?;
    let (model, trace) = online_learn(&mut reader, &cfg)?;
    let dropped = reader.dropped();
    let elapsed = start.elapsed();

    let basket_count = trace.rows.len() as u64;
    if basket_count == 0 {
        eprintln!("warning: no baskets read; writing the initialized model");
    }

    model.write_json_file(&args.out)?;
    let comments = vec![
        format!("ndpp {VERSION}"),
        "subcommand = learn".to_string(),
        format!("baskets = {}", args.baskets.display()),
        format!("d = {}", args.d),
        format!("n = {}", args.n.map_or("auto".to_string(), |n| n.to_string())),
        format!("eta = {}", cfg.eta),
        format!("reg_alpha = {}", cfg.reg_alpha),
        format!("reg_beta = {}", cfg.reg_beta),
        format!("dmax = {}", args.dmax.map_or("none".to_string(), |d| d.to_string())),
        format!("seed = {}", cfg.seed),
    ];
    write_learn_trace(&args.out.with_extension("trace.csv"), &comments, &trace)?;

    println!("baskets = {basket_count}");
    println!("skipped = {}", trace.skipped_count);
    println!("dropped = {dropped}");
    println!("wall_time_s = {:.3}", elapsed.as_secs_f64());
    Ok(())
}

fn run_gen(args: GenArgs) -> ndpp::Result<()> {
    let spec = SyntheticSpec::new(args.n, args.d, args.seed);
    let model = generate_synthetic_model(&spec)?;
    model.write_json_file(&args.out)?;
    println!("model: n = {}, d = {}, seed = {}", args.n, args.d, args.seed);
    Ok(())
}

fn run_eval(args: EvalArgs) -> ndpp::Result<()> {
    let model = NdppModel::read_json_file(&args.model)?;
    let reader = BasketReader::open(&args.baskets, args.n.or(Some(model.n())), args.dmax)?;
    let baskets: Vec<BasketEvent> = reader.collect::<ndpp::Result<_>>()?;
    let mu = OccurrenceCounts::from_baskets(model.n(), &baskets);
    let ll = full_log_likelihood(&model, &baskets, &mu, args.reg_alpha, args.reg_beta)?;
    println!("regularized = {}", ll.regularized);
    println!("unregularized = {}", ll.unregularized);
    println!("singular = {}", ll.singular_count);
    Ok(())
}
