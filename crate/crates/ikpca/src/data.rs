//! Dataset plumbing: the s-curve generator, delimiter-separated image
//! ingestion, a synthetic 256-dim image surrogate, Gaussian noise injection,
//! and seeded train/test splitting.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A sample matrix with optional per-row labels and free-form provenance
/// metadata. `labels` is either empty or has one entry per row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub x: Array2<f64>,
    pub labels: Array1<f64>,
    pub name: String,
    pub meta: BTreeMap<String, String>,
}

impl LabeledDataset {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }
}

/// Draws noise N(0, sigma^2) element-wise from an existing stream, row-major
/// order. The order is part of the determinism contract.
pub(crate) fn add_noise_with_rng(
    x: &Array2<f64>,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Array2<f64> {
    if sigma == 0.0 {
        return x.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma checked by callers");
    let mut out = x.clone();
    for v in out.iter_mut() {
        *v += normal.sample(rng);
    }
    out
}

/// Element-wise X + N(0, sigma^2), no clipping. Same seed gives identical
/// noise.
pub fn add_gaussian_noise(x: &Array2<f64>, sigma: f64, seed: u64) -> Result<Array2<f64>> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "sigma",
            reason: format!("noise level must be finite and non-negative, got {sigma}"),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(add_noise_with_rng(x, sigma, &mut rng))
}

/// S-curve samples: t ~ U(-3pi/2, 3pi/2), x = (sin t, U(0,2), sign(t)(cos t - 1)),
/// labels = t. Returns (clean, noisy) where noisy adds N(0, sigma^2) per
/// element with the same seed's continuation of the draw stream.
///
/// Draw order per row is t then x2, followed by the noise block; changing it
/// would silently change every seeded experiment.
pub fn gen_scurve(
    n: usize,
    sigma: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if n == 0 {
        return Err(Error::InvalidParameter {
            name: "n",
            reason: "sample count must be at least 1".into(),
        });
    }
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "sigma",
            reason: format!("noise level must be finite and non-negative, got {sigma}"),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = 1.5 * std::f64::consts::PI;
    let mut x = Array2::zeros((n, 3));
    let mut labels = Array1::zeros(n);
    for i in 0..n {
        let t: f64 = rng.random_range(-half..half);
        let x2: f64 = rng.random_range(0.0..2.0);
        // sign(0) is taken as +1; x3 is 0 there either way
        let sign = if t < 0.0 { -1.0 } else { 1.0 };
        x[[i, 0]] = t.sin();
        x[[i, 1]] = x2;
        x[[i, 2]] = sign * (t.cos() - 1.0);
        labels[i] = t;
    }
    let noisy_x = add_noise_with_rng(&x, sigma, &mut rng);

    let mut meta = BTreeMap::new();
    meta.insert("seed".into(), seed.to_string());
    meta.insert("sigma".into(), sigma.to_string());
    meta.insert("source".into(), "synthetic:scurve".into());
    let clean = LabeledDataset {
        x,
        labels: labels.clone(),
        name: "scurve".into(),
        meta: meta.clone(),
    };
    let noisy = LabeledDataset {
        x: noisy_x,
        labels,
        name: "scurve+noise".into(),
        meta,
    };
    Ok((clean, noisy))
}

/// Synthetic 16x16 grayscale surrogate: each image is a sum of 2 to 4
/// anisotropic Gaussian bumps, clipped to [0, 1]. Label = bump count. Serves
/// the same protocol as a real digit file when none is on disk.
pub fn gen_blob_images(n: usize, seed: u64) -> Result<LabeledDataset> {
    if n == 0 {
        return Err(Error::InvalidParameter {
            name: "n",
            reason: "sample count must be at least 1".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::zeros((n, 256));
    let mut labels = Array1::zeros(n);
    for i in 0..n {
        let bumps = rng.random_range(2..=4usize);
        labels[i] = bumps as f64;
        for _ in 0..bumps {
            let cx: f64 = rng.random_range(2.0..13.0);
            let cy: f64 = rng.random_range(2.0..13.0);
            let sx: f64 = rng.random_range(1.0..3.0);
            let sy: f64 = rng.random_range(1.0..3.0);
            let amp: f64 = rng.random_range(0.5..1.0);
            for row in 0..16 {
                for col in 0..16 {
                    let dx = (col as f64 - cx) / sx;
                    let dy = (row as f64 - cy) / sy;
                    x[[i, row * 16 + col]] += amp * (-0.5 * (dx * dx + dy * dy)).exp();
                }
            }
        }
        for v in x.row_mut(i).iter_mut() {
            if *v > 1.0 {
                *v = 1.0;
            }
        }
    }
    let mut meta = BTreeMap::new();
    meta.insert("seed".into(), seed.to_string());
    meta.insert("source".into(), "synthetic:blobs".into());
    Ok(LabeledDataset {
        x,
        labels,
        name: "blobs".into(),
        meta,
    })
}

/// Seed-deterministic disjoint split into (train, test) of the requested
/// sizes. Row order within each part follows the shuffled index order.
pub fn train_test_split(
    ds: &LabeledDataset,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let n = ds.n();
    if n_train + n_test > n {
        return Err(Error::InvalidParameter {
            name: "n_train+n_test",
            reason: format!("split {n_train}+{n_test} asks for more rows than the {n} available"),
        });
    }
    if n_train == 0 || n_test == 0 {
        return Err(Error::InvalidParameter {
            name: "n_train/n_test",
            reason: "both split sizes must be at least 1".into(),
        });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);

    let take = |rows: &[usize], suffix: &str| -> LabeledDataset {
        let x = ds.x.select(Axis(0), rows);
        let labels = if ds.labels.is_empty() {
            Array1::zeros(0)
        } else {
            Array1::from_iter(rows.iter().map(|&i| ds.labels[i]))
        };
        let mut meta = ds.meta.clone();
        meta.insert("split_seed".into(), seed.to_string());
        LabeledDataset {
            x,
            labels,
            name: format!("{}:{suffix}", ds.name),
            meta,
        }
    };
    Ok((take(&idx[..n_train], "train"), take(&idx[n_train..n_train + n_test], "test")))
}

/// Loads a delimiter-separated image file: one sample per line, integer label
/// 0..=9 first, then 256 pixel values. Fields split on whitespace or commas.
/// Pixels are rescaled to [0, 1] from whichever of the common source ranges
/// ([0,1], [-1,1], [0,255]) the file's extremes fit.
pub fn load_usps(path: &Path) -> Result<LabeledDataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::Format {
        path: path.display().to_string(),
        reason: format!("unreadable: {e}"),
    })?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<f64> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .collect();
        if fields.len() != 257 {
            return Err(Error::Format {
                path: path.display().to_string(),
                reason: format!(
                    "line {}: {} fields, expected 257 (label + 256 pixels)",
                    lineno + 1,
                    fields.len()
                ),
            });
        }
        let mut parsed = Vec::with_capacity(257);
        for (f_idx, f) in fields.iter().enumerate() {
            let v: f64 = f.parse().map_err(|_| Error::Format {
                path: path.display().to_string(),
                reason: format!("line {}: field {} is not a number: {f:?}", lineno + 1, f_idx + 1),
            })?;
            parsed.push(v);
        }
        let label = parsed[0];
        if label.fract().abs() > 1e-9 || !(0.0..=9.0).contains(&label) {
            return Err(Error::Format {
                path: path.display().to_string(),
                reason: format!("line {}: label {label} is not an integer in 0..=9", lineno + 1),
            });
        }
        labels.push(label.round());
        rows.push(parsed[1..].to_vec());
    }
    if rows.is_empty() {
        return Err(Error::Format {
            path: path.display().to_string(),
            reason: "no samples".into(),
        });
    }

    let n = rows.len();
    let mut x = Array2::zeros((n, 256));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            x[[i, j]] = v;
        }
    }
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = if lo >= 0.0 && hi <= 1.0 {
        "unit"
    } else if lo >= -1.0 && hi <= 1.0 {
        x.mapv_inplace(|v| (v + 1.0) / 2.0);
        "signed-unit"
    } else if lo >= 0.0 && hi <= 255.0 {
        x.mapv_inplace(|v| v / 255.0);
        "byte"
    } else {
        return Err(Error::Format {
            path: path.display().to_string(),
            reason: format!("pixel range [{lo}, {hi}] matches none of [0,1], [-1,1], [0,255]"),
        });
    };

    let mut meta = BTreeMap::new();
    meta.insert("source".into(), path.display().to_string());
    meta.insert("source_range".into(), range.into());
    Ok(LabeledDataset {
        x,
        labels: Array1::from_vec(labels),
        name: "usps".into(),
        meta,
    })
}

/// Writes a dataset back in the same loadable format: label (0 when labels
/// are empty) then pixel values, space-separated, one sample per line. Values
/// print in shortest-roundtrip form so load(save(ds)) is bit-exact.
pub fn save_dataset(ds: &LabeledDataset, path: &Path) -> Result<()> {
    let mut out = fs::File::create(path).map_err(|e| Error::Format {
        path: path.display().to_string(),
        reason: format!("unwritable: {e}"),
    })?;
    for i in 0..ds.n() {
        let label = if ds.labels.is_empty() { 0.0 } else { ds.labels[i] };
        write!(out, "{label}")?;
        for v in ds.x.row(i).iter() {
            write!(out, " {v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
