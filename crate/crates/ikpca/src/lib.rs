//! Invertible kernel PCA with random Fourier features, plus the linear-PCA
//! and exact-kernel baselines, data generators, and the experiment harness
//! used by the command-line driver.
//!
//! The pipeline factors a Gaussian-kernel feature map into an invertible
//! elementwise activation and a linear map, so a low-rank code in feature
//! space can be pulled back to the input space in closed form instead of by
//! iterative pre-image optimization.

pub mod baselines;
pub mod container;
pub mod data;
pub mod ecg;
pub mod error;
pub mod experiment;
pub mod pipeline;
pub mod rff;
pub mod spectral;

pub use baselines::{KpcaSlModel, LinearPcaModel};
pub use container::{load_model, save_model, SavedModel, CONTAINER_VERSION};
pub use data::{
    add_gaussian_noise, gen_blob_images, gen_scurve, load_usps, save_dataset, train_test_split,
    LabeledDataset,
};
pub use ecg::{
    detect_rpeaks, extract_beats, gen_synthetic_ecg, highpass_baseline, mean_beat, read_ecg_text,
    write_beats, write_ecg_text, BeatMatrix, EcgRecord, EcgSynthesisConfig, BEAT_LEN, R_INDEX,
};
pub use experiment::{
    default_config, emit_results, mse, render_results, run_experiment, ExperimentConfig,
    ExperimentKind, Method, OutputFormat, ResultRow, ResultTable, Sweep, SweepParam,
};
pub use error::{Error, Result};
pub use pipeline::{DecodeReport, EncodedBatch, IkpcaConfig, IkpcaModel, RidgeInverter};
pub use rff::{kernel_exact, Activation, ClampReport, FeatureMap, SIN_SUBDOMAIN};
pub use spectral::{
    fit_projection_auto, fit_projection_dual, fit_projection_primal, PcaPath, Projection,
};
