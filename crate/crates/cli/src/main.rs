mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gcd_loop::pipeline::{infer, interpret, RunReport};
use gcd_loop::{
    bench_samplers, estimate_k, make_gcd_split, run_pipeline, BenchConfig, CacheStore, DatasetBundle, Error,
    ErrorCategory, LiveOracle, MockBehavior, MockOracle, Oracle, ProjectionHead, Result, Scalar, Strategy,
};
use toml::Value;

use config::{parse_value, MockMode, OracleMode, Precision, RunConfig};

#[derive(Parser)]
#[command(name = "gcd-loop", version, about = "Category discovery with an oracle in the loop")]
struct Cli {
    /// Repeat for more log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train, evaluate and interpret; writes a new run directory.
    Run(Common),
    /// Compare selection strategies by wrong-cluster precision.
    BenchSamplers {
        #[command(flatten)]
        common: Common,
        /// Comma-separated subset of lis,entropy,margin,confidence,random.
        #[arg(long, value_delimiter = ',')]
        strategies: Vec<Strategy>,
        #[arg(long, default_value_t = 200)]
        budget: usize,
        /// Number of seeds, counted up from the master seed.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        /// Write the full report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate the number of categories from the input embeddings.
    EstimateK {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 30)]
        k_max: usize,
        #[arg(long, default_value_t = 0.5)]
        drop_factor: f64,
    },
    /// Re-run interpretation for an existing run directory.
    Interpret {
        run_dir: PathBuf,
        /// Overrides applied on top of the run's saved config.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Write the configured synthetic dataset, split included, as JSONL.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the effective configuration as TOML.
    ShowConfig(Common),
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML run configuration.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Dotted override, e.g. `train.epochs=10`; repeatable, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// JSONL dataset instead of synthetic data.
    #[arg(long)]
    data: Option<PathBuf>,
    /// mock, live or none.
    #[arg(long)]
    oracle: Option<String>,
    /// ideal or noisy.
    #[arg(long)]
    mock: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    q_size: Option<usize>,
    #[arg(long)]
    num_clusters: Option<usize>,
    #[arg(long)]
    eval_clusters: Option<usize>,
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// f32 or f64.
    #[arg(long)]
    precision: Option<String>,
}

fn split_kv(raw: &str) -> Result<(String, Value)> {
    let (k, v) = raw
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{raw}' is not KEY=VALUE")))?;
    Ok((k.trim().to_string(), parse_value(v.trim())))
}

fn path_value(p: &Path) -> Value {
    Value::String(p.to_string_lossy().into_owned())
}

impl Common {
    fn overrides(&self) -> Result<Vec<(String, Value)>> {
        let mut o: Vec<(String, Value)> = Vec::new();
        let int = |v: usize| Value::Integer(v as i64);
        if let Some(s) = self.seed {
            let s = i64::try_from(s).map_err(|_| Error::Config("seed must fit in i64".into()))?;
            o.push(("seed".into(), Value::Integer(s)));
        }
        if let Some(p) = &self.data {
            o.push(("data.jsonl".into(), path_value(p)));
        }
        if let Some(m) = &self.oracle {
            o.push(("oracle.mode".into(), Value::String(m.clone())));
        }
        if let Some(m) = &self.mock {
            o.push(("oracle.mock".into(), Value::String(m.clone())));
        }
        if let Some(v) = self.epochs {
            o.push(("train.epochs".into(), int(v)));
        }
        if let Some(v) = self.q_size {
            o.push(("train.q_size".into(), int(v)));
        }
        if let Some(v) = self.num_clusters {
            o.push(("train.num_clusters".into(), int(v)));
        }
        if let Some(v) = self.eval_clusters {
            o.push(("eval.eval_clusters".into(), int(v)));
        }
        if let Some(p) = &self.cache {
            o.push(("cache_path".into(), path_value(p)));
        }
        if let Some(p) = &self.output_dir {
            o.push(("output_dir".into(), path_value(p)));
        }
        if let Some(p) = &self.precision {
            o.push(("precision".into(), Value::String(p.clone())));
        }
        for raw in &self.set {
            o.push(split_kv(raw)?);
        }
        Ok(o)
    }

    fn resolve(&self) -> Result<RunConfig> {
        config::resolve(self.config.as_deref(), &self.overrides()?)
    }
}

fn load_data(cfg: &RunConfig) -> Result<DatasetBundle> {
    match &cfg.data.jsonl {
        Some(path) => gcd_loop::load_jsonl(path),
        None => make_gcd_split(
            cfg.data.synthetic.generate()?,
            cfg.data.novel_ratio,
            cfg.data.labeled_ratio,
            cfg.seed,
        ),
    }
}

/// Builds the configured oracle; live mode checks the key and the texts before any work.
fn build_oracle(cfg: &RunConfig, bundle: &DatasetBundle) -> Result<Option<Box<dyn Oracle>>> {
    Ok(match cfg.oracle.mode {
        OracleMode::None => None,
        OracleMode::Mock => {
            let behavior = match cfg.oracle.mock {
                MockMode::Ideal => MockBehavior::Ideal,
                MockMode::Noisy => MockBehavior::Noisy { seed: cfg.seed },
            };
            Some(Box::new(MockOracle::new(bundle, behavior)))
        }
        OracleMode::Live => {
            let oracle = LiveOracle::from_env(cfg.oracle.live.clone())?;
            if !bundle.has_all_text() {
                return Err(Error::Config("live oracle needs a text field on every sample".into()));
            }
            Some(Box::new(oracle))
        }
    })
}

fn mode_name(cfg: &RunConfig) -> String {
    match cfg.oracle.mode {
        OracleMode::None => "none".into(),
        OracleMode::Live => "live".into(),
        OracleMode::Mock => match cfg.oracle.mock {
            MockMode::Ideal => "mock-ideal".into(),
            MockMode::Noisy => "mock-noisy".into(),
        },
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

/// Creates `output_dir/run-NNNN` with the next free number; existing runs are never touched.
fn next_run_dir(output_dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(output_dir)?;
    let mut n = fs::read_dir(output_dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str()?.strip_prefix("run-")?.parse::<u32>().ok())
        .max()
        .map_or(1, |m| m + 1);
    loop {
        let dir = output_dir.join(format!("run-{n:04}"));
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => n += 1,
            Err(e) => return Err(e.into()),
        }
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    fs::write(path, body)?;
    Ok(())
}

fn projection_csv(report: &RunReport) -> Option<String> {
    let points = report.projection.as_ref()?;
    let mut out = String::from("id,x,y,cluster,label\n");
    for p in points {
        let label = p.label.map_or(String::new(), |l| l.to_string());
        let _ = writeln!(out, "{},{},{},{},{}", p.id, p.x, p.y, p.cluster, label);
    }
    Some(out)
}

fn run_with<F: Scalar>(cfg: &RunConfig, bundle: &DatasetBundle, oracle: Option<&dyn Oracle>, cache: &CacheStore) -> Result<()> {
    let (head, report) = run_pipeline::<F>(bundle, &cfg.pipeline(), oracle, cache, &mode_name(cfg))?;
    ensure_parent(&cfg.cache_path)?;
    cache.save(&cfg.cache_path)?;
    let dir = next_run_dir(&cfg.output_dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    write_json(&dir.join("report.json"), &report)?;
    write_json(&dir.join("head.json"), &head)?;
    if let Some(csv) = projection_csv(&report) {
        fs::write(dir.join("projection.csv"), csv)?;
    }
    log::info!("wrote {}", dir.display());
    println!("run_dir={}", dir.display());
    println!("{}", report.summary_line());
    if let Some(interp) = &report.interpretation {
        for c in &interp.novel {
            println!("novel cluster {}: {}", c.cluster, c.name.as_deref().unwrap_or("-"));
        }
    }
    Ok(())
}

fn cmd_run(common: &Common) -> Result<()> {
    let cfg = common.resolve()?;
    let bundle = load_data(&cfg)?;
    let oracle = build_oracle(&cfg, &bundle)?;
    let cache = CacheStore::load(&cfg.cache_path)?;
    match cfg.precision {
        Precision::F64 => run_with::<f64>(&cfg, &bundle, oracle.as_deref(), &cache),
        Precision::F32 => run_with::<f32>(&cfg, &bundle, oracle.as_deref(), &cache),
    }
}

fn cmd_bench(common: &Common, strategies: &[Strategy], budget: usize, seeds: u64, out: Option<&Path>) -> Result<()> {
    let cfg = common.resolve()?;
    let bundle = load_data(&cfg)?;
    let bench = BenchConfig {
        strategies: if strategies.is_empty() { Strategy::ALL.to_vec() } else { strategies.to_vec() },
        budget,
        seeds: (0..seeds).map(|s| cfg.seed.wrapping_add(s)).collect(),
        k: cfg.train.k,
        alpha: cfg.train.alpha,
        num_clusters: cfg.train.num_clusters,
        kmeans_restarts: cfg.train.kmeans_restarts,
        ..BenchConfig::default()
    };
    let report = match cfg.precision {
        Precision::F64 => bench_samplers::<f64>(&bundle, &bench)?,
        Precision::F32 => bench_samplers::<f32>(&bundle, &bench)?,
    };
    println!("{:<12} {:>10}", "strategy", "wrong_rate");
    for (s, m) in &report.means {
        println!("{:<12} {:>10.4}", s.to_string(), m);
    }
    println!("{:<12} {:>10.4}", "base", report.mean_base_rate());
    if let Some(path) = out {
        ensure_parent(path)?;
        write_json(path, &report)?;
    }
    Ok(())
}

fn cmd_estimate_k(common: &Common, k_max: usize, drop_factor: f64) -> Result<()> {
    let cfg = common.resolve()?;
    let bundle = load_data(&cfg)?;
    let data = bundle.matrix::<f64>(&bundle.train_ids());
    let (est, mut sizes) = estimate_k(data.view(), k_max, drop_factor, cfg.seed)?;
    let threshold = drop_factor * data.nrows() as f64 / k_max as f64;
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    println!("estimated_k={est}");
    println!("threshold={threshold:.1}");
    let widest = sizes.first().copied().unwrap_or(0).max(1);
    for s in sizes {
        let bar = "#".repeat((s * 40).div_ceil(widest));
        let mark = if s as f64 >= threshold { ' ' } else { '-' };
        println!("{s:>6}{mark} {bar}");
    }
    Ok(())
}

fn interpret_with<F: Scalar>(dir: &Path, cfg: &RunConfig, bundle: &DatasetBundle, oracle: Option<&dyn Oracle>, cache: &CacheStore) -> Result<()> {
    let head: ProjectionHead<F> = serde_json::from_str(&fs::read_to_string(dir.join("head.json"))?)?;
    let report: RunReport = serde_json::from_str(&fs::read_to_string(dir.join("report.json"))?)?;
    let seed = gcd_loop::util::derive_seed(cfg.train.seed, 0xe7a1, 0);
    let inf = infer(bundle, &head, report.training.input_scale, report.eval_clusters, cfg.eval.eval_restarts, seed)?;
    let result = interpret(bundle, &inf, oracle, cache)?
        .ok_or_else(|| Error::Data("nothing to interpret: no labeled samples or too few clusters".into()))?;
    write_json(&dir.join("interpretation.json"), &result)?;
    for (cluster, label) in &result.known_clusters {
        println!("known cluster {cluster} -> category {label}");
    }
    for c in &result.novel {
        println!("novel cluster {}: {}", c.cluster, c.name.as_deref().unwrap_or("-"));
    }
    Ok(())
}

fn cmd_interpret(dir: &Path, set: &[String]) -> Result<()> {
    let saved = dir.join("config.toml");
    if !saved.exists() {
        return Err(Error::Config(format!("{} is not a run directory", dir.display())));
    }
    let overrides = set.iter().map(|s| split_kv(s)).collect::<Result<Vec<_>>>()?;
    let cfg = config::resolve(Some(&saved), &overrides)?;
    let bundle = load_data(&cfg)?;
    let oracle = build_oracle(&cfg, &bundle)?;
    let cache = CacheStore::load(&cfg.cache_path)?;
    match cfg.precision {
        Precision::F64 => interpret_with::<f64>(dir, &cfg, &bundle, oracle.as_deref(), &cache)?,
        Precision::F32 => interpret_with::<f32>(dir, &cfg, &bundle, oracle.as_deref(), &cache)?,
    }
    ensure_parent(&cfg.cache_path)?;
    cache.save(&cfg.cache_path)
}

fn cmd_gen_data(common: &Common, out: &Path) -> Result<()> {
    let mut cfg = common.resolve()?;
    cfg.data.jsonl = None;
    let bundle = load_data(&cfg)?;
    ensure_parent(out)?;
    bundle.write_jsonl(out)?;
    println!("wrote {} samples to {}", bundle.len(), out.display());
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        ErrorCategory::Config => 2,
        ErrorCategory::Data => 3,
        ErrorCategory::Oracle => 4,
        ErrorCategory::Numeric => 5,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::Run(c) => cmd_run(c),
        Command::BenchSamplers { common, strategies, budget, seeds, out } => {
            cmd_bench(common, strategies, *budget, *seeds, out.as_deref())
        }
        Command::EstimateK { common, k_max, drop_factor } => cmd_estimate_k(common, *k_max, *drop_factor),
        Command::Interpret { run_dir, set } => cmd_interpret(run_dir, set),
        Command::GenData { common, out } => cmd_gen_data(common, out),
        Command::ShowConfig(c) => c.resolve().and_then(|cfg| cfg.to_toml()).map(|t| print!("{t}")),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
