//! End-to-end invertible-kernel-PCA model.
//!
//! Fit samples a random feature map, runs PCA on the activated features, and
//! precomputes the SVD of W for ridge inversion. Encode maps inputs to latent
//! codes plus per-sample bypass terms; decode runs the encoding steps
//! backwards: reconstruct features from codes, invert the activation with the
//! bypass added back, then solve a ridge problem to return to input space.
//!
//! The bypass matrix makes decoding exact when no information is lost (full
//! rank d = r, vanishing ridge), which is the property the whole construction
//! hangs on. It also means an encoded batch carries r extra values per sample
//! next to the d-dimensional code; for denoising that is irrelevant, but it is
//! not a compressed representation in the storage sense.

use ndarray::{Array1, Array2};
use ndarray_linalg::{JobSvd, SVDDC};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rff::{Activation, ClampReport, FeatureMap};
use crate::spectral::{fit_projection_auto, PcaPath, Projection};

/// Hyperparameters for one ikPCA fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IkpcaConfig {
    /// Latent dimension d.
    pub components: usize,
    /// Kernel width of k(x, y) = exp(-gamma ||x - y||^2).
    pub gamma: f64,
    /// Ridge strength for the decode-side inversion; 0 selects the
    /// minimum-norm pseudo-inverse solution.
    pub lambda: f64,
    /// Random feature count r.
    pub features: usize,
    pub activation: Activation,
    /// Subtract the feature mean before PCA. Off by default in experiments;
    /// the covariance is taken around the origin.
    pub centered: bool,
    pub seed: u64,
}

/// Precomputed SVD of W plus the offset vector, applying
/// x_hat = V diag(s / (s^2 + lambda)) U^T (a_hat - b) row-wise.
#[derive(Debug, Clone)]
pub struct RidgeInverter {
    pub(crate) u: Array2<f64>,
    pub(crate) s: Array1<f64>,
    pub(crate) vt: Array2<f64>,
    pub(crate) b: Array1<f64>,
    pub(crate) lambda: f64,
}

impl RidgeInverter {
    /// Builds the inverter by taking the thin SVD of the feature map's W.
    pub fn new(fm: &FeatureMap, lambda: f64) -> Result<RidgeInverter> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "lambda",
                reason: format!("ridge strength must be finite and non-negative, got {lambda}"),
            });
        }
        let (u, s, vt) = fm
            .weights()
            .svddc(JobSvd::Some)
            .map_err(|e| Error::Numerical(format!("SVD of W: {e}")))?;
        let u = u.ok_or_else(|| Error::Numerical("SVD returned no U".into()))?;
        let vt = vt.ok_or_else(|| Error::Numerical("SVD returned no V^T".into()))?;
        Ok(RidgeInverter {
            u,
            s,
            vt,
            b: fm.offsets().clone(),
            lambda,
        })
    }

    pub fn r(&self) -> usize {
        self.u.nrows()
    }

    pub fn p(&self) -> usize {
        self.vt.ncols()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn singular_values(&self) -> &Array1<f64> {
        &self.s
    }

    /// Same SVD, different ridge strength. The factorization is reused, so
    /// sweeping lambda costs nothing beyond the apply itself.
    pub fn with_lambda(&self, lambda: f64) -> Result<RidgeInverter> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "lambda",
                reason: format!("ridge strength must be finite and non-negative, got {lambda}"),
            });
        }
        let mut out = self.clone();
        out.lambda = lambda;
        Ok(out)
    }

    fn filter_factors(&self) -> Array1<f64> {
        let s0 = self.s.iter().cloned().fold(0.0f64, f64::max);
        self.s.mapv(|s| {
            if self.lambda == 0.0 {
                // minimum-norm pseudo-inverse: drop directions that are
                // numerically rank loss instead of dividing by ~0
                if s <= 1e-12 * s0 || s0 == 0.0 {
                    0.0
                } else {
                    1.0 / s
                }
            } else {
                s / (s * s + self.lambda)
            }
        })
    }

    /// Confirms this inverter's factorization actually reproduces the given
    /// feature map's W, guarding a re-derivation on load against toolchain
    /// drift.
    pub(crate) fn verify_reconstruction(&self, fm: &FeatureMap) -> Result<()> {
        let (r, p) = fm.weights().dim();
        if self.r() != r || self.p() != p {
            return Err(Error::dim(
                "inverter reconstruction",
                format!("{r}x{p}"),
                format!("{}x{}", self.r(), self.p()),
            ));
        }
        let mut us = self.u.clone();
        us *= &self.s;
        let rebuilt = us.dot(&self.vt);
        let diff = (&rebuilt - fm.weights()).mapv(|v| v * v).sum().sqrt();
        let scale = fm.weights().mapv(|v| v * v).sum().sqrt();
        if diff > 1e-8 * scale.max(1e-300) {
            return Err(Error::Numerical(format!(
                "re-derived SVD does not reproduce W: relative error {:e}",
                diff / scale
            )));
        }
        Ok(())
    }

    /// Ridge inversion of a pre-activation batch, row-wise.
    pub fn apply(&self, a_hat: &Array2<f64>) -> Result<Array2<f64>> {
        if a_hat.ncols() != self.r() {
            return Err(Error::dim(
                "ridge_invert",
                format!("{} columns", self.r()),
                format!("{}", a_hat.ncols()),
            ));
        }
        let y = a_hat - &self.b;
        let mut t = y.dot(&self.u);
        let f = self.filter_factors();
        t *= &f;
        Ok(t.dot(&self.vt))
    }
}

/// Latent codes plus the per-sample bypass state needed to decode them.
#[derive(Debug, Clone)]
pub struct EncodedBatch {
    pub z: Array2<f64>,
    pub a_bar: Array2<f64>,
}

/// Diagnostics accompanying a decoded batch.
#[derive(Debug, Clone, Copy, Default)]
pub struct DecodeReport {
    /// Range violations encountered when inverting the activation.
    pub clamp: ClampReport,
}

/// A fitted ikPCA model. Immutable; encode/decode are pure.
#[derive(Debug, Clone)]
pub struct IkpcaModel {
    pub(crate) feature_map: FeatureMap,
    pub(crate) projection: Projection,
    pub(crate) inverter: RidgeInverter,
    pub(crate) fit_path: PcaPath,
}

impl IkpcaModel {
    /// Samples the feature map from the config seed, activates the training
    /// data, fits the projection (dual path automatically when r > n), and
    /// precomputes the SVD of W.
    pub fn fit(x_train: &Array2<f64>, cfg: &IkpcaConfig) -> Result<IkpcaModel> {
        let (n, p) = x_train.dim();
        if n == 0 || p == 0 {
            return Err(Error::InvalidParameter {
                name: "X_train",
                reason: format!("training matrix must be non-empty, got {n} x {p}"),
            });
        }
        if cfg.components > cfg.features {
            return Err(Error::InvalidParameter {
                name: "components",
                reason: format!(
                    "d = {} must not exceed r = {}",
                    cfg.components, cfg.features
                ),
            });
        }
        let fm = FeatureMap::sample(p, cfg.features, cfg.gamma, cfg.activation, cfg.seed)?;
        let a = fm.pre_activation(x_train)?;
        let b = fm.activate(&a);
        let (projection, fit_path) = fit_projection_auto(&b, cfg.components, cfg.centered)?;
        let inverter = RidgeInverter::new(&fm, cfg.lambda)?;
        Ok(IkpcaModel {
            feature_map: fm,
            projection,
            inverter,
            fit_path,
        })
    }

    pub(crate) fn from_parts(
        feature_map: FeatureMap,
        projection: Projection,
        inverter: RidgeInverter,
        fit_path: PcaPath,
    ) -> IkpcaModel {
        IkpcaModel {
            feature_map,
            projection,
            inverter,
            fit_path,
        }
    }

    pub fn feature_map(&self) -> &FeatureMap {
        &self.feature_map
    }

    pub fn projection(&self) -> &Projection {
        &self.projection
    }

    pub fn inverter(&self) -> &RidgeInverter {
        &self.inverter
    }

    /// Which PCA path the fit used; dual is expected whenever r > n.
    pub fn fit_path(&self) -> PcaPath {
        self.fit_path
    }

    /// Same model with a different decode-side ridge strength. Fitting does
    /// not depend on lambda, so this is exact, not an approximation.
    pub fn with_lambda(&self, lambda: f64) -> Result<IkpcaModel> {
        let mut out = self.clone();
        out.inverter = self.inverter.with_lambda(lambda)?;
        Ok(out)
    }

    /// Encodes a batch: codes from the projected features, bypass terms from
    /// the pre-activations of the batch itself.
    pub fn encode(&self, x: &Array2<f64>) -> Result<EncodedBatch> {
        let a = self.feature_map.pre_activation(x)?;
        let dec = self.feature_map.bypass(&a);
        let b = self.feature_map.activate(&a);
        let z = self.projection.project(&b)?;
        Ok(EncodedBatch {
            z,
            a_bar: dec.bypass,
        })
    }

    /// Decodes a batch: feature reconstruction, activation inversion with the
    /// bypass added back, then ridge inversion to input space. Clamping never
    /// fails; it is counted in the report.
    pub fn decode(&self, enc: &EncodedBatch) -> Result<(Array2<f64>, DecodeReport)> {
        if enc.z.nrows() != enc.a_bar.nrows() {
            return Err(Error::dim(
                "decode",
                format!("{} code rows", enc.z.nrows()),
                format!("{} bypass rows", enc.a_bar.nrows()),
            ));
        }
        let b_hat = self.projection.reconstruct_features(&enc.z)?;
        let (a_hat, clamp) = self.feature_map.invert_activation(&b_hat, &enc.a_bar)?;
        let x_hat = self.inverter.apply(&a_hat)?;
        Ok((x_hat, DecodeReport { clamp }))
    }

    /// encode followed by decode.
    pub fn denoise(&self, x: &Array2<f64>) -> Result<(Array2<f64>, DecodeReport)> {
        let enc = self.encode(x)?;
        self.decode(&enc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn inverter_with(w: Array2<f64>, b: Array1<f64>, lambda: f64) -> RidgeInverter {
        let fm = FeatureMap {
            w,
            b: b.clone(),
            gamma: 0.5,
            activation: Activation::Sin,
            seed: 0,
        };
        RidgeInverter::new(&fm, lambda).unwrap()
    }

    fn random_x(n: usize, p: usize, lo: f64, hi: f64, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, p), |_| rng.random_range(lo..hi))
    }

    fn base_cfg() -> IkpcaConfig {
        IkpcaConfig {
            components: 2,
            gamma: 0.5,
            lambda: 1.0,
            features: 20,
            activation: Activation::Sin,
            centered: false,
            seed: 3,
        }
    }

    #[test]
    fn ridge_identity_inversion() {
        let inv = inverter_with(Array2::eye(2), Array1::zeros(2), 0.0);
        let out = inv.apply(&array![[4.0, -1.0]]).unwrap();
        assert_abs_diff_eq!(out[[0, 0]], 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out[[0, 1]], -1.0, epsilon = 1e-12);
    }

    #[test]
    fn ridge_closed_form_two_thirds() {
        // (W^T W + lambda)^{-1} W^T a_hat = 2 / (2 + 1) for W = [[1],[1]]
        let inv = inverter_with(array![[1.0], [1.0]], Array1::zeros(2), 1.0);
        let out = inv.apply(&array![[1.0, 1.0]]).unwrap();
        assert_abs_diff_eq!(out[[0, 0]], 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn ridge_small_lambda_matches_pseudo_inverse_oracle() {
        // tall W has full column rank, so W+ = (W^T W)^{-1} W^T exactly
        use ndarray_linalg::Solve;
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for trial in 0..10 {
            let r = 12;
            let p = 5;
            let w = Array2::from_shape_fn((r, p), |_| rng.random_range(-1.0..1.0f64));
            let b = Array1::from_shape_fn(r, |_| rng.random_range(-1.0..1.0f64));
            let a_hat = Array2::from_shape_fn((3, r), |_| rng.random_range(-2.0..2.0f64));

            let fm = FeatureMap {
                w: w.clone(),
                b: b.clone(),
                gamma: 0.5,
                activation: Activation::Sin,
                seed: 0,
            };
            let inv = RidgeInverter::new(&fm, 1e-12).unwrap();
            let got = inv.apply(&a_hat).unwrap();

            let wtw = w.t().dot(&w);
            for row in 0..3 {
                let rhs = w.t().dot(&(&a_hat.row(row) - &b));
                let want = wtw.solve(&rhs).unwrap();
                for j in 0..p {
                    assert!(
                        (got[[row, j]] - want[j]).abs() < 1e-8,
                        "trial {trial} row {row} col {j}: {} vs {}",
                        got[[row, j]],
                        want[j]
                    );
                }
            }
        }
    }

    #[test]
    fn ridge_zero_lambda_minimum_norm_on_rank_deficient_w() {
        // W = [[1,0],[0,0]]: the dead direction must be dropped, not divided by
        let inv = inverter_with(array![[1.0, 0.0], [0.0, 0.0]], Array1::zeros(2), 0.0);
        let out = inv.apply(&array![[3.0, 7.0]]).unwrap();
        assert_abs_diff_eq!(out[[0, 0]], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out[[0, 1]], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn ridge_shrinkage_monotone_in_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let w = Array2::from_shape_fn((10, 4), |_| rng.random_range(-1.0..1.0f64));
        let b = Array1::from_shape_fn(10, |_| rng.random_range(-1.0..1.0f64));
        let a_hat = Array2::from_shape_fn((5, 10), |_| rng.random_range(-2.0..2.0f64));
        let base = inverter_with(w, b, 0.0);
        let mut prev_norms: Option<Vec<f64>> = None;
        for lambda in [0.0, 1e-3, 1e-1, 1.0, 10.0, 1e3] {
            let inv = base.with_lambda(lambda).unwrap();
            let out = inv.apply(&a_hat).unwrap();
            let norms: Vec<f64> = out
                .rows()
                .into_iter()
                .map(|row| row.dot(&row).sqrt())
                .collect();
            if let Some(prev) = &prev_norms {
                for (now, before) in norms.iter().zip(prev.iter()) {
                    assert!(
                        *now <= before + 1e-12,
                        "row norm grew with lambda: {now} > {before}"
                    );
                }
            }
            prev_norms = Some(norms);
        }
    }

    #[test]
    fn fit_shapes_and_dual_path_report() {
        let x = random_x(30, 3, -1.0, 1.0, 1);
        let model = IkpcaModel::fit(&x, &base_cfg()).unwrap();
        assert_eq!(model.projection().matrix().dim(), (2, 20));
        assert_eq!(model.fit_path(), PcaPath::Primal);

        let x = random_x(10, 3, -1.0, 1.0, 2);
        let cfg = IkpcaConfig {
            features: 500,
            ..base_cfg()
        };
        let model = IkpcaModel::fit(&x, &cfg).unwrap();
        assert_eq!(model.fit_path(), PcaPath::Dual);
    }

    #[test]
    fn fit_rejects_d_above_min_n_r() {
        let x = random_x(4, 3, -1.0, 1.0, 1);
        let cfg = IkpcaConfig {
            components: 5,
            features: 20,
            ..base_cfg()
        };
        assert!(IkpcaModel::fit(&x, &cfg).is_err());
        let cfg = IkpcaConfig {
            components: 30,
            features: 20,
            ..base_cfg()
        };
        assert!(IkpcaModel::fit(&x, &cfg).is_err());
    }

    #[test]
    fn encode_shapes_and_zero_bypass_inside_subdomain() {
        let x = random_x(1, 3, -0.1, 0.1, 5);
        // tiny gamma keeps |Wx| small but offsets still span (-pi, pi], so
        // build a map with b = 0 by hand to stay inside the subdomain
        let fm = FeatureMap {
            w: Array2::eye(3),
            b: Array1::zeros(3),
            gamma: 0.5,
            activation: Activation::Sin,
            seed: 0,
        };
        let inverter = RidgeInverter::new(&fm, 0.0).unwrap();
        let a = fm.pre_activation(&x).unwrap();
        let b = fm.activate(&a);
        let (projection, fit_path) =
            fit_projection_auto(&b, 1, false).map(|(p, path)| (p, path)).unwrap();
        let model = IkpcaModel {
            feature_map: fm,
            projection,
            inverter,
            fit_path,
        };
        let enc = model.encode(&x).unwrap();
        assert_eq!(enc.z.dim(), (1, 1));
        assert_eq!(enc.a_bar.dim(), (1, 3));
        for v in enc.a_bar.iter() {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn encode_is_deterministic_across_fits() {
        let x = random_x(12, 3, -1.0, 1.0, 9);
        let cfg = base_cfg();
        let m1 = IkpcaModel::fit(&x, &cfg).unwrap();
        let m2 = IkpcaModel::fit(&x, &cfg).unwrap();
        let e1 = m1.encode(&x).unwrap();
        let e2 = m2.encode(&x).unwrap();
        assert_eq!(e1.z, e2.z);
        assert_eq!(e1.a_bar, e2.a_bar);
    }

    #[test]
    fn exact_recovery_with_full_rank_and_tiny_lambda() {
        let x = random_x(12, 2, -1.0, 1.0, 13);
        let cfg = IkpcaConfig {
            components: 8,
            features: 8,
            lambda: 1e-12,
            ..base_cfg()
        };
        let model = IkpcaModel::fit(&x, &cfg).unwrap();
        let (x_hat, report) = model.denoise(&x).unwrap();
        let num = (&x_hat - &x).mapv(|v| v * v).sum().sqrt();
        let den = x.mapv(|v| v * v).sum().sqrt();
        assert!(num / den < 1e-8, "relative error {}", num / den);
        assert_eq!(report.clamp.clamped, 0);
    }

    #[test]
    fn decode_zero_code_zero_bypass_hits_fixed_target() {
        let x = random_x(10, 3, -1.0, 1.0, 17);
        let cfg = base_cfg();
        let model = IkpcaModel::fit(&x, &cfg).unwrap();
        let enc = EncodedBatch {
            z: Array2::zeros((1, 2)),
            a_bar: Array2::zeros((1, 20)),
        };
        let (got, _) = model.decode(&enc).unwrap();
        // uncentered: B_hat = 0, A_hat = asin(0) + 0 = 0, so the ridge target
        // is plain -b
        let want = model
            .inverter()
            .apply(&Array2::zeros((1, 20)))
            .unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn decode_reports_clamps_on_inflated_codes() {
        let x = random_x(20, 3, -1.0, 1.0, 19);
        let model = IkpcaModel::fit(&x, &base_cfg()).unwrap();
        let mut enc = model.encode(&x).unwrap();
        enc.z.mapv_inplace(|v| 50.0 * v);
        let (_, report) = model.decode(&enc).unwrap();
        assert!(report.clamp.clamped > 0);
        assert!(report.clamp.max_excess > 0.0);
    }

    #[test]
    fn monotone_fidelity_in_d() {
        let x = random_x(30, 3, -1.0, 1.0, 23);
        let mut prev = f64::INFINITY;
        for d in [1usize, 2, 4, 8, 16] {
            let cfg = IkpcaConfig {
                components: d,
                features: 16,
                lambda: 1e-9,
                ..base_cfg()
            };
            let model = IkpcaModel::fit(&x, &cfg).unwrap();
            let (x_hat, _) = model.denoise(&x).unwrap();
            let mse = (&x_hat - &x).mapv(|v| v * v).mean().unwrap();
            assert!(
                mse <= prev + 1e-9,
                "training MSE grew from {prev} to {mse} at d = {d}"
            );
            prev = mse;
        }
    }

    #[test]
    fn decode_jacobian_matches_finite_differences() {
        // stay inside the clamp-free region: small inputs, no offsets
        let x = random_x(6, 2, -0.3, 0.3, 29);
        let fm = FeatureMap {
            w: random_x(6, 2, -1.0, 1.0, 30),
            b: Array1::zeros(6),
            gamma: 0.5,
            activation: Activation::Sin,
            seed: 0,
        };
        let a = fm.pre_activation(&x).unwrap();
        let bmat = fm.activate(&a);
        let (projection, fit_path) = fit_projection_auto(&bmat, 3, false).unwrap();
        let inverter = RidgeInverter::new(&fm, 0.1).unwrap();
        let model = IkpcaModel {
            feature_map: fm,
            projection,
            inverter,
            fit_path,
        };
        let enc = model.encode(&x).unwrap();
        let row = 0;
        let z0 = enc.z.row(row).to_owned();
        let a_bar0 = enc.a_bar.row(row).to_owned();

        // analytic: dX/dz_q = (P_q / sqrt(2) / sqrt(1 - (B/sqrt(2))^2)) M
        let b_hat = model
            .projection
            .reconstruct_features(&z0.clone().insert_axis(ndarray::Axis(0)))
            .unwrap();
        let s_vals = b_hat.mapv(|v| v / std::f64::consts::SQRT_2);
        for v in s_vals.iter() {
            assert!(v.abs() < 0.9, "test instance too close to clamp boundary");
        }
        let f = model.inverter.filter_factors();
        for q in 0..3 {
            let mut da = Array1::zeros(6);
            for j in 0..6 {
                let p_qj = model.projection.matrix()[[q, j]];
                da[j] = p_qj / std::f64::consts::SQRT_2 / (1.0 - s_vals[[0, j]].powi(2)).sqrt();
            }
            let mut t = da.dot(&model.inverter.u);
            t *= &f;
            let analytic = t.dot(&model.inverter.vt);

            let h = 1e-6;
            let decode_at = |zq: f64| -> Array1<f64> {
                let mut z = z0.clone();
                z[q] = zq;
                let enc1 = EncodedBatch {
                    z: z.insert_axis(ndarray::Axis(0)),
                    a_bar: a_bar0.clone().insert_axis(ndarray::Axis(0)),
                };
                let (out, _) = model.decode(&enc1).unwrap();
                out.row(0).to_owned()
            };
            let plus = decode_at(z0[q] + h);
            let minus = decode_at(z0[q] - h);
            let numeric = (&plus - &minus) / (2.0 * h);
            for j in 0..2 {
                let denom = analytic[j].abs().max(1e-6);
                assert!(
                    ((numeric[j] - analytic[j]) / denom).abs() < 1e-5,
                    "jacobian mismatch at code {q}, output {j}: {} vs {}",
                    numeric[j],
                    analytic[j]
                );
            }
        }
    }
}
