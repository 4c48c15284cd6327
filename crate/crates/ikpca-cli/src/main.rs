//! Benchmark driver. The subcommand picks the dataset, flags pick method and
//! hyperparameters, and every unset flag falls back first to an optional TOML
//! settings file and then to the benchmark's published defaults.
//!
//! Result tables go to --out (or stdout) as CSV or JSON; progress and
//! per-row summaries go to stderr so piping stdout stays clean.

use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use ikpca::{
    default_config, emit_results, render_results, run_experiment, ExperimentConfig,
    ExperimentKind, Method, OutputFormat, Sweep, SweepParam,
};
use serde::Deserialize;

#[derive(Parser)]
#[command(
    name = "ikpca",
    version,
    about = "Denoising benchmarks for invertible kernel PCA with random features"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Noisy 3-d s-curve benchmark (synthetic, needs no data file).
    Scurve(RunArgs),
    /// Digit-image denoising benchmark (text matrix via --data, synthetic
    /// blob images otherwise).
    Usps(RunArgs),
    /// Heartbeat denoising benchmark (text record via --data, synthetic
    /// record otherwise).
    Ecg(RunArgs),
}

#[derive(Args, Default)]
struct RunArgs {
    /// TOML settings file whose keys are these long flag names; explicit
    /// flags override it.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// pca, kpca-sl, or ikpca (default ikpca).
    #[arg(long)]
    method: Option<Method>,

    /// Latent dimension d.
    #[arg(long)]
    components: Option<usize>,

    /// Gaussian kernel width gamma in exp(-gamma ||x - y||^2).
    #[arg(long)]
    gamma: Option<f64>,

    /// Ridge strength of the reconstruction step.
    #[arg(long)]
    lambda: Option<f64>,

    /// Number of random features r.
    #[arg(long)]
    features: Option<usize>,

    /// Additive noise level on train and test inputs; must stay 0 for ecg.
    #[arg(long)]
    noise_sigma: Option<f64>,

    /// Training rows (s-curve points, images, or beats).
    #[arg(long)]
    train_size: Option<usize>,

    /// Test rows.
    #[arg(long)]
    test_size: Option<usize>,

    /// Comma list of seeds; an `a..b` token expands inclusively ("1..20,100").
    #[arg(long)]
    seeds: Option<String>,

    /// Sweep one parameter over a value list, e.g. "lambda=0.1,1,10". Names:
    /// components, gamma, lambda, features, noise-sigma.
    #[arg(long, value_name = "NAME=V1,V2,...")]
    sweep: Option<String>,

    /// Dataset file (usps and ecg only).
    #[arg(long, value_name = "FILE")]
    data: Option<PathBuf>,

    /// Result file; stdout when omitted.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,

    /// csv (default) or json.
    #[arg(long)]
    format: Option<OutputFormat>,
}

/// Settings file shape. Keys mirror the long flags so a file line and a flag
/// read the same; unknown keys are rejected instead of silently ignored.
#[derive(Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct FileArgs {
    method: Option<String>,
    components: Option<usize>,
    gamma: Option<f64>,
    lambda: Option<f64>,
    features: Option<usize>,
    noise_sigma: Option<f64>,
    train_size: Option<usize>,
    test_size: Option<usize>,
    seeds: Option<SeedsSpec>,
    sweep: Option<String>,
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    format: Option<String>,
}

/// In a file, seeds are either the flag's string grammar or a plain array.
#[derive(Deserialize)]
#[serde(untagged)]
enum SeedsSpec {
    List(Vec<u64>),
    Text(String),
}

fn parse_seeds(text: &str) -> anyhow::Result<Vec<u64>> {
    let mut seeds = Vec::new();
    for token in text.split(',') {
        let token = token.trim();
        if token.is_empty() {
            bail!("empty seed token in {text:?}");
        }
        if let Some((lo, hi)) = token.split_once("..") {
            let lo: u64 = lo
                .trim()
                .parse()
                .with_context(|| format!("bad seed range start in {token:?}"))?;
            let hi: u64 = hi
                .trim()
                .parse()
                .with_context(|| format!("bad seed range end in {token:?}"))?;
            if lo > hi {
                bail!("seed range {token:?} runs backwards");
            }
            seeds.extend(lo..=hi);
        } else {
            seeds.push(
                token
                    .parse()
                    .with_context(|| format!("bad seed {token:?}"))?,
            );
        }
    }
    Ok(seeds)
}

fn parse_sweep(text: &str) -> anyhow::Result<Sweep> {
    let (name, values) = text
        .split_once('=')
        .with_context(|| format!("sweep {text:?} is not name=v1,v2,..."))?;
    let param = SweepParam::from_str(name.trim())?;
    let values = values
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .with_context(|| format!("bad sweep value {v:?}"))
        })
        .collect::<anyhow::Result<Vec<f64>>>()?;
    Ok(Sweep { param, values })
}

fn pick<T: Clone>(flag: &Option<T>, file: &Option<T>) -> Option<T> {
    flag.clone().or_else(|| file.clone())
}

/// Resolves defaults, file settings, and flags (in rising precedence) into a
/// runnable config plus the output destination and format.
fn build_config(
    kind: ExperimentKind,
    args: &RunArgs,
) -> anyhow::Result<(ExperimentConfig, Option<PathBuf>, OutputFormat)> {
    let file: FileArgs = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read config file {}", path.display()))?;
            toml::from_str(&text)
                .with_context(|| format!("bad config file {}", path.display()))?
        }
        None => FileArgs::default(),
    };

    let method = match (&args.method, &file.method) {
        (Some(m), _) => *m,
        (None, Some(text)) => Method::from_str(text)?,
        (None, None) => Method::Ikpca,
    };

    let mut cfg = default_config(kind, method);
    if let Some(v) = pick(&args.components, &file.components) {
        cfg.components = v;
    }
    if let Some(v) = pick(&args.gamma, &file.gamma) {
        cfg.gamma = v;
    }
    if let Some(v) = pick(&args.lambda, &file.lambda) {
        cfg.lambda = v;
    }
    if let Some(v) = pick(&args.features, &file.features) {
        cfg.features = v;
    }
    if let Some(v) = pick(&args.noise_sigma, &file.noise_sigma) {
        cfg.noise_sigma = v;
    }
    if let Some(v) = pick(&args.train_size, &file.train_size) {
        cfg.n_train = v;
    }
    if let Some(v) = pick(&args.test_size, &file.test_size) {
        cfg.n_test = v;
    }
    match (&args.seeds, &file.seeds) {
        (Some(text), _) => cfg.seeds = parse_seeds(text)?,
        (None, Some(SeedsSpec::Text(text))) => cfg.seeds = parse_seeds(text)?,
        (None, Some(SeedsSpec::List(list))) => cfg.seeds = list.clone(),
        (None, None) => {}
    }
    if let Some(text) = pick(&args.sweep, &file.sweep) {
        cfg.sweep = Some(parse_sweep(&text)?);
    }
    cfg.data_path = pick(&args.data, &file.data);

    let out = pick(&args.out, &file.out);
    let format = match (&args.format, &file.format) {
        (Some(f), _) => *f,
        (None, Some(text)) => OutputFormat::from_str(text)?,
        (None, None) => OutputFormat::Csv,
    };
    Ok((cfg, out, format))
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let (kind, args) = match &cli.command {
        Command::Scurve(a) => (ExperimentKind::Scurve, a),
        Command::Usps(a) => (ExperimentKind::Usps, a),
        Command::Ecg(a) => (ExperimentKind::Ecg, a),
    };
    let (cfg, out, format) = build_config(kind, args)?;
    let table = run_experiment(&cfg)?;
    match &out {
        Some(path) => {
            emit_results(&table, path, format)?;
            for row in &table.rows {
                eprintln!("{row}");
            }
        }
        None => print!("{}", render_results(&table, format)),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn seeds_accept_lists_ranges_and_mixtures() {
        assert_eq!(parse_seeds("7").unwrap(), vec![7]);
        assert_eq!(parse_seeds("1,2,9").unwrap(), vec![1, 2, 9]);
        assert_eq!(parse_seeds("3..6").unwrap(), vec![3, 4, 5, 6]);
        assert_eq!(parse_seeds(" 1..3 , 10 ").unwrap(), vec![1, 2, 3, 10]);
        assert!(parse_seeds("").is_err());
        assert!(parse_seeds("5..2").is_err());
        assert!(parse_seeds("1,,2").is_err());
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn sweep_grammar_round_trips_names_and_values() {
        let s = parse_sweep("lambda=0.1,1,10").unwrap();
        assert_eq!(s.param, SweepParam::Lambda);
        assert_eq!(s.values, vec![0.1, 1.0, 10.0]);
        let s = parse_sweep("features = 50, 100").unwrap();
        assert_eq!(s.param, SweepParam::Features);
        assert_eq!(s.values, vec![50.0, 100.0]);
        assert!(parse_sweep("lambda").is_err());
        assert!(parse_sweep("bogus=1,2").is_err());
        assert!(parse_sweep("lambda=a,b").is_err());
    }

    #[test]
    fn defaults_survive_when_nothing_is_set() {
        let (cfg, out, format) =
            build_config(ExperimentKind::Scurve, &RunArgs::default()).unwrap();
        assert_eq!(cfg, default_config(ExperimentKind::Scurve, Method::Ikpca));
        assert!(out.is_none());
        assert_eq!(format, OutputFormat::Csv);
    }

    #[test]
    fn flags_beat_file_beats_defaults() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            f,
            "method = \"pca\"\ngamma = 9.0\nseeds = [41, 42]\nformat = \"json\""
        )
        .unwrap();
        let args = RunArgs {
            config: Some(f.path().to_path_buf()),
            gamma: Some(0.25),
            ..RunArgs::default()
        };
        let (cfg, _, format) = build_config(ExperimentKind::Scurve, &args).unwrap();
        assert_eq!(cfg.method, Method::Pca);
        assert_eq!(cfg.gamma, 0.25);
        assert_eq!(cfg.seeds, vec![41, 42]);
        assert_eq!(format, OutputFormat::Json);
    }

    #[test]
    fn file_seed_string_uses_the_flag_grammar() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "seeds = \"2..4\"").unwrap();
        let args = RunArgs {
            config: Some(f.path().to_path_buf()),
            ..RunArgs::default()
        };
        let (cfg, _, _) = build_config(ExperimentKind::Usps, &args).unwrap();
        assert_eq!(cfg.seeds, vec![2, 3, 4]);
    }

    #[test]
    fn unknown_file_keys_are_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "gammma = 1.0").unwrap();
        let args = RunArgs {
            config: Some(f.path().to_path_buf()),
            ..RunArgs::default()
        };
        let err = build_config(ExperimentKind::Scurve, &args).unwrap_err();
        assert!(format!("{err:#}").contains("bad config file"));
    }
}
