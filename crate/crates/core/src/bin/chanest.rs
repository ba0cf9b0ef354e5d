use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sparse_chanest::channel_model::ChannelRealization;
use sparse_chanest::harness::{
    compute_metrics, emit_results, evaluate_trial, run_experiment, simulate_trial, Algorithm, ExperimentSpec,
    OutputFormat,
};
use sparse_chanest::{Error, Result};

#[derive(Parser)]
#[command(name = "chanest", version, about = "Distributed sparse channel estimation experiments")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SpecArgs {
    /// TOML file whose keys override the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
}

impl SpecArgs {
    fn resolve(&self, id: u32) -> Result<ExperimentSpec> {
        let mut spec = ExperimentSpec::preset(id)?;
        if let Some(path) = &self.config {
            spec = spec.with_override_file(path)?;
        }
        if let Some(seed) = self.seed {
            spec.seed = seed;
        }
        if let Some(trials) = self.trials {
            spec.trials = trials;
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a full experiment sweep and write results.csv plus metadata.json.
    Experiment {
        /// Experiment number, 1-5.
        id: u32,
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        #[arg(long, default_value = "csv")]
        format: String,
    },
    /// Run one trial at the first sweep point and report per-algorithm metrics.
    Estimate {
        #[arg(long, default_value_t = 2)]
        experiment: u32,
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, default_value_t = 0)]
        trial: u64,
        /// Channel CSV (antenna,row,col,tap,re,im) to use instead of generating one.
        #[arg(long)]
        channels: Option<PathBuf>,
        /// Restrict to these algorithms (repeatable).
        #[arg(long = "algorithm")]
        algorithms: Vec<String>,
        /// Directory for estimates.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate one channel realization and write channels.csv and channels.json.
    GenerateChannels {
        #[arg(long, default_value_t = 2)]
        experiment: u32,
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, default_value_t = 0)]
        trial: u64,
        #[arg(long, default_value = "channels")]
        out: PathBuf,
    },
}

fn write_estimates(path: &Path, runs: &[sparse_chanest::harness::AlgorithmRun]) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["algorithm", "antenna", "tap", "re", "im"]).map_err(csv_err)?;
    for run in runs {
        for (antenna, est) in run.estimates.iter().enumerate() {
            let Some(est) = est else { continue };
            for (tap, v) in est.iter().enumerate() {
                if v.re != 0.0 || v.im != 0.0 {
                    w.serialize((run.algorithm.name(), antenna, tap, v.re, v.im))
                        .map_err(csv_err)?;
                }
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Experiment { id, spec, out, format } => {
            let format: OutputFormat = format.parse()?;
            let spec = spec.resolve(id)?;
            let rows = run_experiment(&spec)?;
            for path in emit_results(&rows, &spec, &out, format)? {
                println!("{}", path.display());
            }
        }
        Command::Estimate {
            experiment,
            spec,
            trial,
            channels,
            algorithms,
            out,
        } => {
            let mut spec = spec.resolve(experiment)?;
            if !algorithms.is_empty() {
                spec.algorithms = algorithms.iter().map(|a| a.parse()).collect::<Result<Vec<Algorithm>>>()?;
            }
            let point = spec.points()[0];
            let replay = match &channels {
                Some(path) => {
                    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
                    Some(ChannelRealization::read_csv(file, &spec.grid(), spec.channel_len)?)
                }
                None => None,
            };
            let data = simulate_trial(&spec, &point, trial, replay)?;
            let runs = evaluate_trial(&spec, &point, &data, &spec.algorithms)?;
            println!(
                "n = {}, K = {}, SNR = {} dB, D = {}, {}x{} grid",
                point.sparsity, point.pilots, point.snr_db, point.depth, spec.rows, spec.cols
            );
            println!("{:<10} {:>10} {:>10} {:>10}", "algorithm", "nmse_db", "ber", "time_s");
            for r in &runs {
                let m = compute_metrics(&[r.metrics]);
                println!(
                    "{:<10} {:>10.3} {:>10.5} {:>10.4}",
                    r.algorithm.name(),
                    m.nmse_db,
                    m.ber,
                    r.elapsed.as_secs_f64()
                );
            }
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                let path = dir.join("estimates.csv");
                write_estimates(&path, &runs)?;
                println!("{}", path.display());
            }
        }
        Command::GenerateChannels {
            experiment,
            spec,
            trial,
            out,
        } => {
            let spec = spec.resolve(experiment)?;
            let point = spec.points()[0];
            let data = simulate_trial(&spec, &point, trial, None)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let csv_path = out.join("channels.csv");
            data.channels.save_csv(&csv_path)?;
            let json_path = out.join("channels.json");
            let text = serde_json::to_string_pretty(&data.channels).map_err(|e| Error::Parse(e.to_string()))?;
            std::fs::write(&json_path, text + "\n").map_err(|e| Error::io(&json_path, e))?;
            println!("{}\n{}", csv_path.display(), json_path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
