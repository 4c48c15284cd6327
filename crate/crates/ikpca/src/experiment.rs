//! Experiment orchestration: seeded repetitions of (data, fit, denoise,
//! score) for the three method families over the three benchmark kinds, with
//! optional single-parameter sweeps and deterministic CSV/JSON emission.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{KpcaSlModel, LinearPcaModel};
use crate::data::{
    add_gaussian_noise, gen_blob_images, gen_scurve, load_usps, train_test_split, LabeledDataset,
};
use crate::ecg::{detect_rpeaks, extract_beats, gen_synthetic_ecg, highpass_baseline, mean_beat,
    read_ecg_text, EcgSynthesisConfig, BEAT_LEN};
use crate::error::{Error, Result};
use crate::pipeline::{IkpcaConfig, IkpcaModel};
use crate::rff::{Activation, ClampReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExperimentKind {
    Scurve,
    Usps,
    Ecg,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Scurve => "scurve",
            ExperimentKind::Usps => "usps",
            ExperimentKind::Ecg => "ecg",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Pca,
    KpcaSl,
    Ikpca,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Pca => "pca",
            Method::KpcaSl => "kpca_sl",
            Method::Ikpca => "ikpca",
        }
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Method> {
        match s {
            "pca" => Ok(Method::Pca),
            "kpca_sl" | "kpca-sl" | "kpcasl" => Ok(Method::KpcaSl),
            "ikpca" => Ok(Method::Ikpca),
            other => Err(Error::Config(format!(
                "unknown method {other:?}, expected pca, kpca_sl, or ikpca"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    Components,
    Gamma,
    Lambda,
    Features,
    NoiseSigma,
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::Components => "components",
            SweepParam::Gamma => "gamma",
            SweepParam::Lambda => "lambda",
            SweepParam::Features => "features",
            SweepParam::NoiseSigma => "noise_sigma",
        }
    }
}

impl FromStr for SweepParam {
    type Err = Error;
    fn from_str(s: &str) -> Result<SweepParam> {
        match s {
            "components" | "d" => Ok(SweepParam::Components),
            "gamma" => Ok(SweepParam::Gamma),
            "lambda" => Ok(SweepParam::Lambda),
            "features" | "r" => Ok(SweepParam::Features),
            "noise_sigma" | "noise-sigma" => Ok(SweepParam::NoiseSigma),
            other => Err(Error::Config(format!(
                "unknown sweep parameter {other:?}, expected components, gamma, lambda, features, or noise_sigma"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub method: Method,
    pub components: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub features: usize,
    pub noise_sigma: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub seeds: Vec<u64>,
    pub data_path: Option<PathBuf>,
    pub sweep: Option<Sweep>,
}

/// Published defaults: the benchmark settings each experiment/method pair was
/// tuned with. Seeds default to 1..=20 ("mean and std over 20 runs").
pub fn default_config(experiment: ExperimentKind, method: Method) -> ExperimentConfig {
    let seeds: Vec<u64> = (1..=20).collect();
    let base = ExperimentConfig {
        experiment,
        method,
        components: 2,
        gamma: 1.0,
        lambda: 1.0,
        features: 500,
        noise_sigma: 0.25,
        n_train: 2000,
        n_test: 2000,
        seeds,
        data_path: None,
        sweep: None,
    };
    match (experiment, method) {
        (ExperimentKind::Scurve, Method::Ikpca) => ExperimentConfig {
            gamma: 0.5,
            ..base
        },
        (ExperimentKind::Scurve, _) => base,
        (ExperimentKind::Usps, method) => {
            let with_usps = ExperimentConfig {
                components: 16,
                noise_sigma: 0.5,
                n_train: 1000,
                n_test: 400,
                ..base
            };
            match method {
                Method::Ikpca => ExperimentConfig {
                    gamma: 1e-4,
                    lambda: 1.3,
                    features: 5000,
                    ..with_usps
                },
                Method::KpcaSl => ExperimentConfig {
                    gamma: 5e-3,
                    lambda: 1e-2,
                    ..with_usps
                },
                Method::Pca => with_usps,
            }
        }
        (ExperimentKind::Ecg, method) => {
            let with_ecg = ExperimentConfig {
                components: 1,
                noise_sigma: 0.0,
                n_train: 49,
                n_test: 21,
                features: 512,
                ..base
            };
            match method {
                Method::Ikpca => ExperimentConfig {
                    gamma: 5e-5,
                    lambda: 10.0,
                    ..with_ecg
                },
                Method::KpcaSl => ExperimentConfig {
                    gamma: 10.0,
                    lambda: 15.0,
                    ..with_ecg
                },
                Method::Pca => with_ecg,
            }
        }
    }
}

/// Mean over all entries of the squared difference.
pub fn mse(x_hat: &Array2<f64>, x_ref: &Array2<f64>) -> Result<f64> {
    if x_hat.dim() != x_ref.dim() {
        return Err(Error::dim(
            "mse",
            format!("{:?}", x_ref.dim()),
            format!("{:?}", x_hat.dim()),
        ));
    }
    let (m, p) = x_hat.dim();
    if m == 0 || p == 0 {
        return Err(Error::InvalidParameter {
            name: "X_hat",
            reason: "mse over an empty matrix".into(),
        });
    }
    let sum: f64 = x_hat
        .iter()
        .zip(x_ref.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / (m * p) as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub method: String,
    pub sweep_param: String,
    pub sweep_value: Option<f64>,
    pub components: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub features: usize,
    pub noise_sigma: f64,
    pub train_size: usize,
    pub test_size: usize,
    pub n_seeds: usize,
    pub mse_mean: f64,
    pub mse_std: f64,
    pub baseline_mse_mean: f64,
    pub baseline_mse_std: f64,
    pub clamp_rate: f64,
    pub seed_failures: usize,
    /// Measured, so never written to result files; lives here for callers
    /// (and the stderr timing line) only.
    #[serde(skip)]
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<OutputFormat> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::Config(format!(
                "unknown format {other:?}, expected csv or json"
            ))),
        }
    }
}

/// splitmix64-style derivation of purpose-specific seeds from the run seed,
/// so data draw, noise draw, and feature-map draw never share a stream.
pub(crate) fn sub_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const SUB_DATA: u64 = 0;
const SUB_NOISE_TRAIN: u64 = 1;
const SUB_NOISE_TEST: u64 = 2;
const SUB_FEATURE_MAP: u64 = 3;

/// Fixed internal seeds: the synthetic fallback datasets behave like files
/// on disk, constant across run seeds.
const BLOB_DATASET_SEED: u64 = 0xB10B;
const SYNTH_ECG_SEED: u64 = 0x0EC9;

/// One seed's prepared data: fit on `train`, denoise `test`, score against
/// `reference`. `baseline` is mse(test, reference), the do-nothing score.
struct SeedData {
    train: Array2<f64>,
    test: Array2<f64>,
    reference: Array2<f64>,
    baseline: f64,
    /// Row subtracted from train and test before fitting and added back to
    /// reconstructions. Set for the beat benchmark, where scoring is against
    /// the train mean: centering makes every method's ridge shrink toward
    /// that reference instead of toward the zero signal.
    offset: Option<Array1<f64>>,
}

fn restore_offset(mut x: Array2<f64>, offset: &Option<Array1<f64>>) -> Array2<f64> {
    if let Some(m) = offset {
        x += m;
    }
    x
}

struct SeedOutcome {
    mse: f64,
    baseline: f64,
    clamp: Option<ClampReport>,
}

enum SharedData {
    /// S-curve draws everything per seed.
    None,
    /// A dataset split per seed (image experiments).
    Dataset(LabeledDataset),
    /// Beats split by row per seed.
    Beats(Array2<f64>),
}

fn validate(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.seeds.is_empty() {
        return Err(Error::Config("seeds must be non-empty".into()));
    }
    if cfg.components == 0 {
        return Err(Error::Config("components must be at least 1".into()));
    }
    if cfg.features == 0 {
        return Err(Error::Config("features must be at least 1".into()));
    }
    if !(cfg.gamma.is_finite() && cfg.gamma > 0.0) {
        return Err(Error::Config(format!(
            "gamma must be finite and positive, got {}",
            cfg.gamma
        )));
    }
    if !(cfg.lambda.is_finite() && cfg.lambda >= 0.0) {
        return Err(Error::Config(format!(
            "lambda must be finite and non-negative, got {}",
            cfg.lambda
        )));
    }
    if !(cfg.noise_sigma.is_finite() && cfg.noise_sigma >= 0.0) {
        return Err(Error::Config(format!(
            "noise_sigma must be finite and non-negative, got {}",
            cfg.noise_sigma
        )));
    }
    if cfg.n_train == 0 || cfg.n_test == 0 {
        return Err(Error::Config("train and test sizes must be at least 1".into()));
    }
    if cfg.experiment == ExperimentKind::Ecg && cfg.noise_sigma != 0.0 {
        return Err(Error::Config(
            "the ecg benchmark scores against the mean beat and adds no artificial noise; set noise_sigma to 0"
                .into(),
        ));
    }
    if let Some(sweep) = &cfg.sweep {
        if sweep.values.is_empty() {
            return Err(Error::Config("sweep needs at least one value".into()));
        }
        for &v in &sweep.values {
            let ok = match sweep.param {
                SweepParam::Components | SweepParam::Features => {
                    v.is_finite() && v >= 1.0 && v.fract() == 0.0
                }
                SweepParam::Gamma => v.is_finite() && v > 0.0,
                SweepParam::Lambda | SweepParam::NoiseSigma => v.is_finite() && v >= 0.0,
            };
            if !ok {
                return Err(Error::Config(format!(
                    "sweep value {v} is out of domain for {}",
                    sweep.param.name()
                )));
            }
            if sweep.param == SweepParam::NoiseSigma
                && cfg.experiment == ExperimentKind::Ecg
                && v != 0.0
            {
                return Err(Error::Config(
                    "cannot sweep noise_sigma on the ecg benchmark".into(),
                ));
            }
        }
    }
    Ok(())
}

fn with_sweep_value(cfg: &ExperimentConfig, param: SweepParam, v: f64) -> ExperimentConfig {
    let mut out = cfg.clone();
    match param {
        SweepParam::Components => out.components = v as usize,
        SweepParam::Gamma => out.gamma = v,
        SweepParam::Lambda => out.lambda = v,
        SweepParam::Features => out.features = v as usize,
        SweepParam::NoiseSigma => out.noise_sigma = v,
    }
    out
}

/// Loads or synthesizes whatever is shared across seeds.
fn prepare_shared(cfg: &ExperimentConfig) -> Result<SharedData> {
    match cfg.experiment {
        ExperimentKind::Scurve => Ok(SharedData::None),
        ExperimentKind::Usps => {
            let ds = match &cfg.data_path {
                Some(path) => load_usps(path)?,
                None => gen_blob_images(cfg.n_train + cfg.n_test, BLOB_DATASET_SEED)?,
            };
            if ds.n() < cfg.n_train + cfg.n_test {
                return Err(Error::Config(format!(
                    "dataset has {} rows, split needs {}",
                    ds.n(),
                    cfg.n_train + cfg.n_test
                )));
            }
            Ok(SharedData::Dataset(ds))
        }
        ExperimentKind::Ecg => {
            let record = match &cfg.data_path {
                Some(path) => read_ecg_text(path)?,
                None => {
                    let need = cfg.n_train + cfg.n_test;
                    let synth = EcgSynthesisConfig {
                        n_beats: need + 6,
                        seed: SYNTH_ECG_SEED,
                        ..Default::default()
                    };
                    gen_synthetic_ecg(&synth)?.0
                }
            };
            let filtered = highpass_baseline(&record)?;
            let peaks = detect_rpeaks(&filtered);
            let beats = extract_beats(&filtered, &peaks)?;
            if beats.beats.nrows() < cfg.n_train + cfg.n_test {
                return Err(Error::Config(format!(
                    "extracted {} beats, split needs {}",
                    beats.beats.nrows(),
                    cfg.n_train + cfg.n_test
                )));
            }
            Ok(SharedData::Beats(beats.beats))
        }
    }
}

/// Builds one seed's train/test/reference triple.
fn build_seed_data(cfg: &ExperimentConfig, shared: &SharedData, seed: u64) -> Result<SeedData> {
    match (cfg.experiment, shared) {
        (ExperimentKind::Scurve, SharedData::None) => {
            let (_, noisy_train) =
                gen_scurve(cfg.n_train, cfg.noise_sigma, sub_seed(seed, SUB_NOISE_TRAIN))?;
            let (clean_test, noisy_test) =
                gen_scurve(cfg.n_test, cfg.noise_sigma, sub_seed(seed, SUB_NOISE_TEST))?;
            let baseline = mse(&noisy_test.x, &clean_test.x)?;
            Ok(SeedData {
                train: noisy_train.x,
                test: noisy_test.x,
                reference: clean_test.x,
                baseline,
                offset: None,
            })
        }
        (ExperimentKind::Usps, SharedData::Dataset(ds)) => {
            let (train, test) =
                train_test_split(ds, cfg.n_train, cfg.n_test, sub_seed(seed, SUB_DATA))?;
            let noisy_train =
                add_gaussian_noise(&train.x, cfg.noise_sigma, sub_seed(seed, SUB_NOISE_TRAIN))?;
            let noisy_test =
                add_gaussian_noise(&test.x, cfg.noise_sigma, sub_seed(seed, SUB_NOISE_TEST))?;
            let baseline = mse(&noisy_test, &test.x)?;
            Ok(SeedData {
                train: noisy_train,
                test: noisy_test,
                reference: test.x,
                baseline,
                offset: None,
            })
        }
        (ExperimentKind::Ecg, SharedData::Beats(beats)) => {
            let wrapped = LabeledDataset {
                x: beats.clone(),
                labels: Array1::zeros(0),
                name: "beats".into(),
                meta: Default::default(),
            };
            let (train, test) =
                train_test_split(&wrapped, cfg.n_train, cfg.n_test, sub_seed(seed, SUB_DATA))?;
            let bm = crate::ecg::BeatMatrix {
                beats: train.x.clone(),
                r_index: crate::ecg::R_INDEX,
                source_peaks: Vec::new(),
            };
            let rows: Vec<usize> = (0..cfg.n_train).collect();
            let mean = mean_beat(&bm, &rows)?;
            let mut reference = Array2::zeros((cfg.n_test, BEAT_LEN));
            for mut row in reference.rows_mut() {
                row.assign(&mean);
            }
            let baseline = mse(&test.x, &reference)?;
            let mut train_x = train.x;
            let mut test_x = test.x;
            train_x -= &mean;
            test_x -= &mean;
            Ok(SeedData {
                train: train_x,
                test: test_x,
                reference,
                baseline,
                offset: Some(mean),
            })
        }
        _ => unreachable!("shared data always matches the experiment kind"),
    }
}

/// Fits the configured method on one seed's data and scores it.
fn run_seed(cfg: &ExperimentConfig, shared: &SharedData, seed: u64) -> Result<SeedOutcome> {
    let data = build_seed_data(cfg, shared, seed)?;
    match cfg.method {
        Method::Pca => {
            let model = LinearPcaModel::fit(&data.train, cfg.components)?;
            let denoised = restore_offset(model.denoise(&data.test)?, &data.offset);
            Ok(SeedOutcome {
                mse: mse(&denoised, &data.reference)?,
                baseline: data.baseline,
                clamp: None,
            })
        }
        Method::KpcaSl => {
            let model =
                KpcaSlModel::fit(&data.train, cfg.components, cfg.gamma, cfg.lambda, true)?;
            let denoised = restore_offset(model.denoise(&data.test)?, &data.offset);
            Ok(SeedOutcome {
                mse: mse(&denoised, &data.reference)?,
                baseline: data.baseline,
                clamp: None,
            })
        }
        Method::Ikpca => {
            let model = IkpcaModel::fit(&data.train, &ikpca_config(cfg, seed))?;
            let (denoised, report) = model.denoise(&data.test)?;
            let denoised = restore_offset(denoised, &data.offset);
            Ok(SeedOutcome {
                mse: mse(&denoised, &data.reference)?,
                baseline: data.baseline,
                clamp: Some(report.clamp),
            })
        }
    }
}

fn ikpca_config(cfg: &ExperimentConfig, seed: u64) -> IkpcaConfig {
    IkpcaConfig {
        components: cfg.components,
        gamma: cfg.gamma,
        lambda: cfg.lambda,
        features: cfg.features,
        activation: Activation::Sin,
        centered: false,
        seed: sub_seed(seed, SUB_FEATURE_MAP),
    }
}

/// One seed of an ikpca lambda sweep: the fit does not depend on lambda, so
/// fit once and re-solve the inverter per value.
fn run_seed_ikpca_lambdas(
    cfg: &ExperimentConfig,
    shared: &SharedData,
    seed: u64,
    lambdas: &[f64],
) -> Result<Vec<SeedOutcome>> {
    let data = build_seed_data(cfg, shared, seed)?;
    let model = IkpcaModel::fit(&data.train, &ikpca_config(cfg, seed))?;
    let encoded = model.encode(&data.test)?;
    let mut out = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let variant = model.with_lambda(lambda)?;
        let (denoised, report) = variant.decode(&encoded)?;
        let denoised = restore_offset(denoised, &data.offset);
        out.push(SeedOutcome {
            mse: mse(&denoised, &data.reference)?,
            baseline: data.baseline,
            clamp: Some(report.clamp),
        });
    }
    Ok(out)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn aggregate_row(
    cfg: &ExperimentConfig,
    sweep_param: &str,
    sweep_value: Option<f64>,
    outcomes: &[Result<SeedOutcome>],
    wall_time_s: f64,
) -> ResultRow {
    let mut mses = Vec::new();
    let mut baselines = Vec::new();
    let mut clamp = ClampReport {
        clamped: 0,
        total: 0,
        max_excess: 0.0,
    };
    let mut failures = 0;
    for outcome in outcomes {
        match outcome {
            Ok(o) => {
                mses.push(o.mse);
                baselines.push(o.baseline);
                if let Some(c) = &o.clamp {
                    clamp.merge(c);
                }
            }
            Err(_) => failures += 1,
        }
    }
    let (mse_mean, mse_std) = mean_std(&mses);
    let (baseline_mse_mean, baseline_mse_std) = mean_std(&baselines);
    ResultRow {
        experiment: cfg.experiment.name().into(),
        method: cfg.method.name().into(),
        sweep_param: sweep_param.into(),
        sweep_value,
        components: cfg.components,
        gamma: cfg.gamma,
        lambda: cfg.lambda,
        features: cfg.features,
        noise_sigma: cfg.noise_sigma,
        train_size: cfg.n_train,
        test_size: cfg.n_test,
        n_seeds: cfg.seeds.len(),
        mse_mean,
        mse_std,
        baseline_mse_mean,
        baseline_mse_std,
        clamp_rate: clamp.rate(),
        seed_failures: failures,
        wall_time_s,
    }
}

/// Runs the configured experiment: one row per sweep value (a single row
/// when no sweep), each aggregating every seed. Per-seed failures are
/// counted in the row instead of aborting the run. Identical configs produce
/// identical tables; timing goes to stderr only.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultTable> {
    validate(cfg)?;
    let shared = prepare_shared(cfg)?;
    let mut rows = Vec::new();

    let lambda_fast_path = cfg.method == Method::Ikpca
        && matches!(&cfg.sweep, Some(s) if s.param == SweepParam::Lambda);

    if lambda_fast_path {
        let sweep = cfg.sweep.as_ref().expect("checked above");
        let start = Instant::now();
        // per seed: Vec of outcomes indexed by lambda
        let per_seed: Vec<Result<Vec<SeedOutcome>>> = cfg
            .seeds
            .par_iter()
            .map(|&seed| run_seed_ikpca_lambdas(cfg, &shared, seed, &sweep.values))
            .collect();
        let elapsed = start.elapsed().as_secs_f64();
        let per_value_time = elapsed / sweep.values.len() as f64;
        for (vi, &value) in sweep.values.iter().enumerate() {
            let outcomes: Vec<Result<SeedOutcome>> = per_seed
                .iter()
                .map(|seed_result| match seed_result {
                    Ok(list) => {
                        let o = &list[vi];
                        Ok(SeedOutcome {
                            mse: o.mse,
                            baseline: o.baseline,
                            clamp: o.clamp.clone(),
                        })
                    }
                    Err(e) => Err(Error::Config(e.to_string())),
                })
                .collect();
            let value_cfg = with_sweep_value(cfg, SweepParam::Lambda, value);
            rows.push(aggregate_row(
                &value_cfg,
                SweepParam::Lambda.name(),
                Some(value),
                &outcomes,
                per_value_time,
            ));
        }
    } else {
        let (param_name, values): (&str, Vec<Option<f64>>) = match &cfg.sweep {
            Some(s) => (s.param.name(), s.values.iter().map(|&v| Some(v)).collect()),
            None => ("none", vec![None]),
        };
        for value in values {
            let value_cfg = match (value, &cfg.sweep) {
                (Some(v), Some(s)) => with_sweep_value(cfg, s.param, v),
                _ => cfg.clone(),
            };
            let start = Instant::now();
            let outcomes: Vec<Result<SeedOutcome>> = value_cfg
                .seeds
                .par_iter()
                .map(|&seed| run_seed(&value_cfg, &shared, seed))
                .collect();
            let elapsed = start.elapsed().as_secs_f64();
            rows.push(aggregate_row(&value_cfg, param_name, value, &outcomes, elapsed));
        }
    }

    for row in &rows {
        eprintln!(
            "[timing] {}/{} {}{} {:.2}s",
            row.experiment,
            row.method,
            row.sweep_param,
            row.sweep_value
                .map(|v| format!("={v}"))
                .unwrap_or_default(),
            row.wall_time_s
        );
    }
    Ok(ResultTable { rows })
}

/// 17 significant digits: exact f64 round trip, identical bytes every run.
fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

pub const CSV_HEADER: &str = "experiment,method,sweep_param,sweep_value,components,gamma,lambda,features,noise_sigma,train_size,test_size,n_seeds,mse_mean,mse_std,baseline_mse_mean,baseline_mse_std,clamp_rate,seed_failures";

fn csv_line(row: &ResultRow) -> String {
    let sweep_value = row.sweep_value.map(fmt_real).unwrap_or_default();
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        row.experiment,
        row.method,
        row.sweep_param,
        sweep_value,
        row.components,
        fmt_real(row.gamma),
        fmt_real(row.lambda),
        row.features,
        fmt_real(row.noise_sigma),
        row.train_size,
        row.test_size,
        row.n_seeds,
        fmt_real(row.mse_mean),
        fmt_real(row.mse_std),
        fmt_real(row.baseline_mse_mean),
        fmt_real(row.baseline_mse_std),
        fmt_real(row.clamp_rate),
        row.seed_failures,
    )
}

/// JSON mirror of the CSV schema. Non-finite statistics (an all-failed row)
/// become null.
#[derive(Serialize)]
struct JsonRow<'a> {
    experiment: &'a str,
    method: &'a str,
    sweep_param: &'a str,
    sweep_value: Option<f64>,
    components: usize,
    gamma: f64,
    lambda: f64,
    features: usize,
    noise_sigma: f64,
    train_size: usize,
    test_size: usize,
    n_seeds: usize,
    mse_mean: Option<f64>,
    mse_std: Option<f64>,
    baseline_mse_mean: Option<f64>,
    baseline_mse_std: Option<f64>,
    clamp_rate: f64,
    seed_failures: usize,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Renders the table to a string in the requested format; `emit_results`
/// writes exactly these bytes.
pub fn render_results(table: &ResultTable, format: OutputFormat) -> String {
    match format {
        OutputFormat::Csv => {
            let mut out = String::from(CSV_HEADER);
            out.push('\n');
            for row in &table.rows {
                out.push_str(&csv_line(row));
                out.push('\n');
            }
            out
        }
        OutputFormat::Json => {
            let rows: Vec<JsonRow> = table
                .rows
                .iter()
                .map(|row| JsonRow {
                    experiment: &row.experiment,
                    method: &row.method,
                    sweep_param: &row.sweep_param,
                    sweep_value: row.sweep_value,
                    components: row.components,
                    gamma: row.gamma,
                    lambda: row.lambda,
                    features: row.features,
                    noise_sigma: row.noise_sigma,
                    train_size: row.train_size,
                    test_size: row.test_size,
                    n_seeds: row.n_seeds,
                    mse_mean: finite(row.mse_mean),
                    mse_std: finite(row.mse_std),
                    baseline_mse_mean: finite(row.baseline_mse_mean),
                    baseline_mse_std: finite(row.baseline_mse_std),
                    clamp_rate: row.clamp_rate,
                    seed_failures: row.seed_failures,
                })
                .collect();
            let mut out =
                serde_json::to_string_pretty(&rows).expect("static schema always serializes");
            out.push('\n');
            out
        }
    }
}

pub fn emit_results(table: &ResultTable, path: &Path, format: OutputFormat) -> Result<()> {
    std::fs::write(path, render_results(table, format)).map_err(|e| Error::Format {
        path: path.display().to_string(),
        reason: format!("unwritable: {e}"),
    })
}

impl fmt::Display for ResultRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{} {}{}: mse {:.3e} +- {:.3e} (baseline {:.3e}, clamp rate {:.2e}, {} failed)",
            self.experiment,
            self.method,
            self.sweep_param,
            self.sweep_value
                .map(|v| format!("={v}"))
                .unwrap_or_default(),
            self.mse_mean,
            self.mse_std,
            self.baseline_mse_mean,
            self.clamp_rate,
            self.seed_failures
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny_scurve(method: Method) -> ExperimentConfig {
        ExperimentConfig {
            experiment: ExperimentKind::Scurve,
            method,
            components: 2,
            gamma: 0.5,
            lambda: 1.0,
            features: 40,
            noise_sigma: 0.25,
            n_train: 60,
            n_test: 40,
            seeds: vec![1, 2],
            data_path: None,
            sweep: None,
        }
    }

    #[test]
    fn mse_examples() {
        let a = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        let b = &a + 1.0;
        assert_eq!(mse(&b, &a).unwrap(), 1.0);
        let x = array![[1.0], [-3.0]];
        let z = Array2::zeros((2, 1));
        assert_eq!(mse(&x, &z).unwrap(), 5.0);
        assert!(mse(&a, &z).is_err());
    }

    #[test]
    fn config_validation_rejects_bad_inputs() {
        let mut cfg = tiny_scurve(Method::Ikpca);
        cfg.seeds.clear();
        assert!(run_experiment(&cfg).is_err());

        let mut cfg = tiny_scurve(Method::Ikpca);
        cfg.sweep = Some(Sweep {
            param: SweepParam::Components,
            values: vec![1.5],
        });
        assert!(run_experiment(&cfg).is_err());

        let mut cfg = default_config(ExperimentKind::Ecg, Method::Pca);
        cfg.noise_sigma = 0.1;
        assert!(run_experiment(&cfg).is_err());
    }

    #[test]
    fn scurve_run_is_deterministic_and_scores_sanely() {
        let cfg = tiny_scurve(Method::Ikpca);
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.rows.len(), 1);
        let (ra, rb) = (&a.rows[0], &b.rows[0]);
        assert_eq!(ra.mse_mean.to_bits(), rb.mse_mean.to_bits());
        assert_eq!(ra.mse_std.to_bits(), rb.mse_std.to_bits());
        assert_eq!(ra.baseline_mse_mean.to_bits(), rb.baseline_mse_mean.to_bits());
        assert_eq!(ra.seed_failures, 0);
        assert!(ra.mse_mean.is_finite() && ra.mse_mean >= 0.0);
        // sigma = 0.25 -> baseline near 0.0625
        assert!((ra.baseline_mse_mean - 0.0625).abs() < 0.01);
    }

    #[test]
    fn all_methods_produce_rows() {
        for method in [Method::Pca, Method::KpcaSl, Method::Ikpca] {
            let table = run_experiment(&tiny_scurve(method)).unwrap();
            assert_eq!(table.rows.len(), 1);
            assert_eq!(table.rows[0].method, method.name());
            assert_eq!(table.rows[0].seed_failures, 0);
        }
    }

    #[test]
    fn lambda_sweep_fast_path_matches_single_runs() {
        let lambdas = [0.1, 1.0, 10.0];
        let mut swept = tiny_scurve(Method::Ikpca);
        swept.sweep = Some(Sweep {
            param: SweepParam::Lambda,
            values: lambdas.to_vec(),
        });
        let table = run_experiment(&swept).unwrap();
        assert_eq!(table.rows.len(), 3);

        for (row, &lambda) in table.rows.iter().zip(lambdas.iter()) {
            let mut single = tiny_scurve(Method::Ikpca);
            single.lambda = lambda;
            let reference = run_experiment(&single).unwrap();
            assert_eq!(
                row.mse_mean.to_bits(),
                reference.rows[0].mse_mean.to_bits(),
                "lambda {lambda}"
            );
            assert_eq!(row.lambda, lambda);
            assert_eq!(row.sweep_value, Some(lambda));
        }
    }

    #[test]
    fn sweep_produces_ordered_rows() {
        let mut cfg = tiny_scurve(Method::Pca);
        cfg.sweep = Some(Sweep {
            param: SweepParam::Components,
            values: vec![1.0, 2.0, 3.0],
        });
        let table = run_experiment(&cfg).unwrap();
        assert_eq!(table.rows.len(), 3);
        for (row, d) in table.rows.iter().zip([1usize, 2, 3]) {
            assert_eq!(row.components, d);
            assert_eq!(row.sweep_param, "components");
        }
    }

    #[test]
    fn csv_rendering_is_stable_and_complete() {
        let empty = ResultTable::default();
        let text = render_results(&empty, OutputFormat::Csv);
        assert_eq!(text, format!("{CSV_HEADER}\n"));

        let cfg = tiny_scurve(Method::Pca);
        let table = run_experiment(&cfg).unwrap();
        let a = render_results(&table, OutputFormat::Csv);
        let b = render_results(&run_experiment(&cfg).unwrap(), OutputFormat::Csv);
        assert_eq!(a, b, "renders of identical runs must be byte-identical");
        assert_eq!(a.lines().count(), 2);
        let fields: Vec<&str> = a.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(fields.len(), CSV_HEADER.split(',').count());
        // 17-significant-digit reals
        assert!(fields[5].contains('e'), "gamma field: {}", fields[5]);
    }

    #[test]
    fn json_rendering_mirrors_schema() {
        let cfg = tiny_scurve(Method::Ikpca);
        let table = run_experiment(&cfg).unwrap();
        let text = render_results(&table, OutputFormat::Json);
        let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
        let rows = parsed.as_array().unwrap();
        assert_eq!(rows.len(), 1);
        let row = &rows[0];
        assert_eq!(row["experiment"], "scurve");
        assert_eq!(row["method"], "ikpca");
        assert!(row["mse_mean"].is_number());
        assert!(row.get("wall_time_s").is_none(), "timings must not be emitted");
        let keys = row.as_object().unwrap().len();
        assert_eq!(keys, CSV_HEADER.split(',').count());
    }

    #[test]
    fn format_roundtrip_parsers() {
        assert_eq!("csv".parse::<OutputFormat>().unwrap(), OutputFormat::Csv);
        assert_eq!("json".parse::<OutputFormat>().unwrap(), OutputFormat::Json);
        assert!("yaml".parse::<OutputFormat>().is_err());
        assert_eq!("ikpca".parse::<Method>().unwrap(), Method::Ikpca);
        assert_eq!("kpca-sl".parse::<Method>().unwrap(), Method::KpcaSl);
        assert_eq!(
            "noise-sigma".parse::<SweepParam>().unwrap(),
            SweepParam::NoiseSigma
        );
        assert!("width".parse::<SweepParam>().is_err());
    }

    #[test]
    fn ecg_synthetic_fallback_runs_end_to_end() {
        let mut cfg = default_config(ExperimentKind::Ecg, Method::Pca);
        cfg.n_train = 10;
        cfg.n_test = 5;
        cfg.seeds = vec![1];
        let table = run_experiment(&cfg).unwrap();
        assert_eq!(table.rows.len(), 1);
        assert_eq!(table.rows[0].seed_failures, 0);
        assert!(table.rows[0].mse_mean.is_finite());
    }

    #[test]
    fn usps_surrogate_runs_end_to_end() {
        let mut cfg = default_config(ExperimentKind::Usps, Method::Pca);
        cfg.n_train = 30;
        cfg.n_test = 10;
        cfg.components = 4;
        cfg.seeds = vec![1];
        let table = run_experiment(&cfg).unwrap();
        assert_eq!(table.rows[0].seed_failures, 0);
        // denoising must beat doing nothing on blob images
        assert!(table.rows[0].mse_mean < table.rows[0].baseline_mse_mean);
    }

    #[test]
    fn emit_writes_requested_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_scurve(Method::Pca);
        let table = run_experiment(&cfg).unwrap();
        let csv_path = dir.path().join("out.csv");
        emit_results(&table, &csv_path, OutputFormat::Csv).unwrap();
        let json_path = dir.path().join("out.json");
        emit_results(&table, &json_path, OutputFormat::Json).unwrap();
        assert_eq!(
            std::fs::read_to_string(&csv_path).unwrap(),
            render_results(&table, OutputFormat::Csv)
        );
        assert!(std::fs::read_to_string(&json_path)
            .unwrap()
            .starts_with('['));
    }
}
