//! Versioned on-disk model container. Fitted models round-trip through JSON
//! bit-exactly: deterministic pieces (the random feature map, the ridge
//! inverter) are stored as their generating parameters and re-derived on
//! load, with a reconstruction check guarding against a drifted toolchain.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{KpcaSlModel, LinearPcaModel};
use crate::error::{Error, Result};
use crate::pipeline::{IkpcaModel, RidgeInverter};
use crate::rff::{Activation, FeatureMap};
use crate::spectral::{PcaPath, Projection};

pub const CONTAINER_VERSION: u32 = 1;

/// Any model the experiments can fit.
#[derive(Debug, Clone)]
pub enum SavedModel {
    Ikpca(IkpcaModel),
    Pca(LinearPcaModel),
    KpcaSl(KpcaSlModel),
}

impl SavedModel {
    pub fn kind(&self) -> &'static str {
        match self {
            SavedModel::Ikpca(_) => "ikpca",
            SavedModel::Pca(_) => "pca",
            SavedModel::KpcaSl(_) => "kpca_sl",
        }
    }
}

/// The feature map is fully determined by these five values, so only they
/// are stored; load re-draws the matrix bit-exactly.
#[derive(Serialize, Deserialize)]
struct FeatureMapDoc {
    input_dim: usize,
    features: usize,
    gamma: f64,
    activation: Activation,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct IkpcaDoc {
    feature_map: FeatureMapDoc,
    projection: Projection,
    lambda: f64,
    fit_path: PcaPath,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind")]
enum ModelDoc {
    #[serde(rename = "ikpca")]
    Ikpca(IkpcaDoc),
    #[serde(rename = "pca")]
    Pca(LinearPcaModel),
    #[serde(rename = "kpca_sl")]
    KpcaSl(KpcaSlModel),
}

#[derive(Serialize, Deserialize)]
struct Container {
    version: u32,
    model: ModelDoc,
}

pub fn save_model(model: &SavedModel, path: &Path) -> Result<()> {
    let doc = match model {
        SavedModel::Ikpca(m) => {
            let fm = m.feature_map();
            ModelDoc::Ikpca(IkpcaDoc {
                feature_map: FeatureMapDoc {
                    input_dim: fm.p(),
                    features: fm.r(),
                    gamma: fm.gamma(),
                    activation: fm.activation(),
                    seed: fm.seed(),
                },
                projection: m.projection().clone(),
                lambda: m.inverter().lambda(),
                fit_path: m.fit_path(),
            })
        }
        SavedModel::Pca(m) => ModelDoc::Pca(m.clone()),
        SavedModel::KpcaSl(m) => ModelDoc::KpcaSl(m.clone()),
    };
    let container = Container {
        version: CONTAINER_VERSION,
        model: doc,
    };
    let mut text =
        serde_json::to_string_pretty(&container).map_err(|e| Error::Numerical(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::Format {
        path: path.display().to_string(),
        reason: format!("unwritable: {e}"),
    })?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<SavedModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::Format {
        path: path.display().to_string(),
        reason: format!("unreadable: {e}"),
    })?;
    // version gate first so a future container fails cleanly, not with a
    // field-level parse error
    let probe: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.display().to_string(),
        reason: format!("not valid JSON: {e}"),
    })?;
    let version = probe
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Format {
            path: path.display().to_string(),
            reason: "missing container version".into(),
        })?;
    if version != CONTAINER_VERSION as u64 {
        return Err(Error::UnsupportedVersion {
            found: version as u32,
            supported: CONTAINER_VERSION,
        });
    }
    let container: Container = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.display().to_string(),
        reason: format!("malformed container: {e}"),
    })?;

    match container.model {
        ModelDoc::Pca(m) => Ok(SavedModel::Pca(m)),
        ModelDoc::KpcaSl(m) => Ok(SavedModel::KpcaSl(m)),
        ModelDoc::Ikpca(doc) => {
            let fm = FeatureMap::sample(
                doc.feature_map.input_dim,
                doc.feature_map.features,
                doc.feature_map.gamma,
                doc.feature_map.activation,
                doc.feature_map.seed,
            )?;
            if doc.projection.r() != doc.feature_map.features {
                return Err(Error::dim(
                    "model container",
                    format!("projection over {} features", doc.feature_map.features),
                    format!("{}", doc.projection.r()),
                ));
            }
            let inverter = RidgeInverter::new(&fm, doc.lambda)?;
            inverter.verify_reconstruction(&fm)?;
            Ok(SavedModel::Ikpca(IkpcaModel::from_parts(
                fm,
                doc.projection,
                inverter,
                doc.fit_path,
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::IkpcaConfig;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_x(n: usize, p: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, p), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn ikpca_roundtrip_is_bit_exact() {
        let x = random_x(25, 3, 1);
        let cfg = IkpcaConfig {
            components: 4,
            gamma: 0.5,
            lambda: 0.3,
            features: 16,
            activation: Activation::Sin,
            centered: false,
            seed: 9,
        };
        let model = IkpcaModel::fit(&x, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&SavedModel::Ikpca(model.clone()), &path).unwrap();
        let loaded = match load_model(&path).unwrap() {
            SavedModel::Ikpca(m) => m,
            other => panic!("wrong kind {}", other.kind()),
        };
        let probe = random_x(7, 3, 2);
        let (a, _) = model.denoise(&probe).unwrap();
        let (b, _) = loaded.denoise(&probe).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(loaded.fit_path(), model.fit_path());
    }

    #[test]
    fn pca_and_kpca_roundtrip_is_bit_exact() {
        let x = random_x(20, 4, 3);
        let dir = tempfile::tempdir().unwrap();

        let pca = LinearPcaModel::fit(&x, 2).unwrap();
        let path = dir.path().join("pca.json");
        save_model(&SavedModel::Pca(pca.clone()), &path).unwrap();
        let loaded = match load_model(&path).unwrap() {
            SavedModel::Pca(m) => m,
            other => panic!("wrong kind {}", other.kind()),
        };
        let probe = random_x(5, 4, 4);
        let a = pca.denoise(&probe).unwrap();
        let b = loaded.denoise(&probe).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }

        let kpca = KpcaSlModel::fit(&x, 2, 0.7, 0.1, true).unwrap();
        let path = dir.path().join("kpca.json");
        save_model(&SavedModel::KpcaSl(kpca.clone()), &path).unwrap();
        let loaded = match load_model(&path).unwrap() {
            SavedModel::KpcaSl(m) => m,
            other => panic!("wrong kind {}", other.kind()),
        };
        let a = kpca.denoise(&probe).unwrap();
        let b = loaded.denoise(&probe).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn unknown_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("future.json");
        fs::write(&path, r#"{"version": 99, "model": {"kind": "pca"}}"#).unwrap();
        match load_model(&path) {
            Err(Error::UnsupportedVersion { found, supported }) => {
                assert_eq!(found, 99);
                assert_eq!(supported, CONTAINER_VERSION);
            }
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn garbage_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        fs::write(&path, "not json at all").unwrap();
        assert!(matches!(load_model(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn tampered_feature_count_is_rejected() {
        let x = random_x(25, 3, 1);
        let cfg = IkpcaConfig {
            components: 2,
            gamma: 0.5,
            lambda: 0.3,
            features: 16,
            activation: Activation::Sin,
            centered: false,
            seed: 9,
        };
        let model = IkpcaModel::fit(&x, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&SavedModel::Ikpca(model), &path).unwrap();
        let text = fs::read_to_string(&path)
            .unwrap()
            .replace("\"features\": 16", "\"features\": 17");
        fs::write(&path, text).unwrap();
        assert!(load_model(&path).is_err());
    }
}
