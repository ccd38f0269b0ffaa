use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use proxkit::config::{Overrides, RunConfig, DEFAULT_SEED};
use proxkit::fixture::{gen_fixture, SyntheticSpec};
use proxkit::pipeline::{run, Step};
use proxkit::Error;

/// Knowledge-proximity analysis between academic and industry research.
#[derive(Debug, Parser)]
#[command(name = "proxkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Year range, e.g. 2000-2022.
    #[arg(long, global = true)]
    years: Option<String>,

    /// Per-paper similarity quantile.
    #[arg(long, global = true)]
    quantile: Option<f64>,

    /// Fixed semantic threshold instead of the corpus quantile.
    #[arg(long, global = true)]
    threshold: Option<f64>,

    /// Entity class filter (all, method, tool, metric, dataset); repeatable.
    #[arg(long = "class", global = true, value_delimiter = ',')]
    classes: Vec<String>,

    /// Regression period, e.g. 2013-2017; repeatable.
    #[arg(long = "period", global = true, value_delimiter = ',')]
    periods: Vec<String>,

    /// Matching ratio for PSM; repeatable.
    #[arg(long = "ratio", global = true, value_delimiter = ',')]
    ratios: Vec<usize>,

    /// Worker threads for per-year jobs.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load and check the corpus.
    Validate,
    /// Cluster entity surface forms.
    Normalize,
    /// Entity bag-of-words similarity matrices.
    EntitySim,
    /// Embedding-based similarity proportions.
    SemanticSim,
    /// Co-occurrence network measures.
    Network,
    /// Citation proportions, HHI and ECC.
    CiteFlow,
    /// HHI regressions.
    Regress,
    /// Subsampling stability of indicators.
    Stability,
    /// Propensity score matching on compute demand.
    Psm,
    /// Every step in order.
    All,
    /// Write a synthetic corpus, ground truth and config into --out.
    GenFixture {
        /// Generator parameters (TOML); defaults when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
}

impl Command {
    fn steps(&self) -> Vec<Step> {
        match self {
            Command::Validate => vec![Step::Validate],
            Command::Normalize => vec![Step::Normalize],
            Command::EntitySim => vec![Step::EntitySim],
            Command::SemanticSim => vec![Step::SemanticSim],
            Command::Network => vec![Step::Network],
            Command::CiteFlow => vec![Step::CiteFlow],
            Command::Regress => vec![Step::Regress],
            Command::Stability => vec![Step::Stability],
            Command::Psm => vec![Step::Psm],
            Command::All => Step::ALL.to_vec(),
            Command::GenFixture { .. } => Vec::new(),
        }
    }
}

fn overrides(cli: &Cli) -> Overrides {
    let nonempty = |v: &Vec<String>| (!v.is_empty()).then(|| v.clone());
    Overrides {
        out: cli.out.clone(),
        seed: cli.seed,
        years: cli.years.clone(),
        quantile: cli.quantile,
        threshold: cli.threshold,
        classes: nonempty(&cli.classes),
        periods: nonempty(&cli.periods),
        ratios: (!cli.ratios.is_empty()).then(|| cli.ratios.clone()),
        workers: cli.workers,
    }
}

fn execute(cli: &Cli) -> proxkit::Result<()> {
    if let Command::GenFixture { spec } = &cli.command {
        let spec = match spec {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                    path: path.display().to_string(),
                    source: e,
                })?;
                toml::from_str::<SyntheticSpec>(&text).map_err(|e| Error::Config {
                    field: "spec".into(),
                    message: e.message().replace('\n', " "),
                })?
            }
            None => SyntheticSpec::default(),
        };
        let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("fixture"));
        let files = gen_fixture(&spec, cli.seed.unwrap_or(DEFAULT_SEED), &dir)?;
        println!("wrote fixture config {}", files.config.display());
        return Ok(());
    }

    let path = cli.config.as_ref().ok_or_else(|| Error::Config {
        field: "--config".into(),
        message: "a configuration file is required".into(),
    })?;
    if !path.is_file() {
        return Err(Error::Config {
            field: "--config".into(),
            message: format!("no such file: {}", path.display()),
        });
    }
    let (mut cfg, bytes) = RunConfig::load(path)?;
    cfg.apply(&overrides(cli));
    if let Some(n) = cfg.workers {
        if n == 0 {
            return Err(Error::Config {
                field: "workers".into(),
                message: "must be at least 1".into(),
            });
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Invalid(e.to_string()))?;
    }
    let manifest = run(&cfg, &bytes, &cli.command.steps())?;
    for s in &manifest.steps {
        println!(
            "{}: {} outputs in {:.2}s",
            s.step,
            s.outputs.len(),
            s.seconds
        );
    }
    println!("manifest {}", cfg.out.join("manifest.json").display());
    Ok(())
}

/// One machine-parsable line plus the exit code for an error.
fn report(err: &Error) -> (String, u8) {
    match err {
        Error::Config { field, message } => (
            format!("error kind=config field={field} message={message:?}"),
            2,
        ),
        Error::Data {
            path,
            line,
            message,
        } => (
            format!("error kind=data file={path} line={line} message={message:?}"),
            3,
        ),
        Error::Io { path, source } => (
            format!("error kind=io file={path} message={:?}", source.to_string()),
            3,
        ),
        Error::RankDeficient(cols) => (
            format!("error kind=rank-deficient columns={}", cols.join(",")),
            1,
        ),
        Error::Separation(msg) => (format!("error kind=separation message={msg:?}"), 1),
        Error::Invalid(msg) => (format!("error kind=invalid message={msg:?}"), 1),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PROXKIT_LOG", "warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (line, code) = report(&e);
            eprintln!("{line}");
            ExitCode::from(code)
        }
    }
}
