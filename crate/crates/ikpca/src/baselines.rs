//! Comparison methods: linear PCA and exact-kernel PCA with a supervised
//! pre-image stage (kernel ridge regression from latent codes back to inputs).

use ndarray::{Array1, Array2, Axis};
use ndarray_linalg::{Eigh, Factorize, Solve, UPLO};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{fit_projection_primal, fix_sign, Projection, RANK_TOLERANCE};

/// Dense Gaussian kernel matrix exp(-gamma ||a_i - b_j||^2), rows of `a`
/// against rows of `b`. Uses the expanded-square form so the inner loop is one
/// matrix product.
pub(crate) fn gaussian_gram(a: &Array2<f64>, b: &Array2<f64>, gamma: f64) -> Array2<f64> {
    let a2: Array1<f64> = a.map_axis(Axis(1), |row| row.dot(&row));
    let b2: Array1<f64> = b.map_axis(Axis(1), |row| row.dot(&row));
    let mut g = a.dot(&b.t());
    for ((i, j), v) in g.indexed_iter_mut() {
        // rounding can push the squared distance a hair below zero
        let d2 = (a2[i] + b2[j] - 2.0 * *v).max(0.0);
        *v = (-gamma * d2).exp();
    }
    g
}

/// Mean-centered linear PCA with projector-based reconstruction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearPcaModel {
    projection: Projection,
}

impl LinearPcaModel {
    /// Mean-centered covariance eigendecomposition, top-d components.
    pub fn fit(x: &Array2<f64>, d: usize) -> Result<LinearPcaModel> {
        let projection = fit_projection_primal(x, d, true)?;
        Ok(LinearPcaModel { projection })
    }

    pub fn d(&self) -> usize {
        self.projection.d()
    }

    pub fn mean(&self) -> &Array1<f64> {
        self.projection.mean()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        self.projection.matrix()
    }

    pub fn eigenvalues(&self) -> &Array1<f64> {
        self.projection.eigenvalues()
    }

    /// x_hat = mean + P^T P (x - mean), row-wise.
    pub fn denoise(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let z = self.projection.project(x)?;
        self.projection.reconstruct_features(&z)
    }
}

/// Exact-kernel PCA compressor with a supervised kernel-ridge pre-image.
///
/// Latent codes are feature-space projections computed from the (optionally
/// double-centered) Gram matrix; the pre-image map is kernel ridge regression
/// from train codes to train inputs, with a Gaussian kernel of the same width
/// on the latent space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KpcaSlModel {
    x_train: Array2<f64>,
    gamma: f64,
    lambda_sl: f64,
    centered: bool,
    /// Column means and grand mean of the raw train Gram, kept to center
    /// test kernel vectors consistently.
    k_col_means: Array1<f64>,
    k_grand: f64,
    /// Gram eigenvectors scaled by 1/sqrt(mu), one column per component.
    alphas: Array2<f64>,
    eigenvalues: Array1<f64>,
    z_train: Array2<f64>,
    dual_coefs: Array2<f64>,
}

impl KpcaSlModel {
    pub fn fit(
        x: &Array2<f64>,
        d: usize,
        gamma: f64,
        lambda_sl: f64,
        centered: bool,
    ) -> Result<KpcaSlModel> {
        let (n, _p) = x.dim();
        if n == 0 {
            return Err(Error::InvalidParameter {
                name: "X",
                reason: "training set must be non-empty".into(),
            });
        }
        if d == 0 || d > n {
            return Err(Error::InvalidParameter {
                name: "d",
                reason: format!("component count must be in 1..={n}, got {d}"),
            });
        }
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::InvalidParameter {
                name: "gamma",
                reason: format!("kernel width must be finite and positive, got {gamma}"),
            });
        }
        if !(lambda_sl.is_finite() && lambda_sl >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "lambda_sl",
                reason: format!("ridge strength must be finite and non-negative, got {lambda_sl}"),
            });
        }

        let k_raw = gaussian_gram(x, x, gamma);
        let k_col_means = k_raw
            .mean_axis(Axis(0))
            .expect("n >= 1 checked above");
        let k_grand = k_raw.mean().expect("non-empty");
        let k_used = if centered {
            let mut k = k_raw;
            for ((i, j), v) in k.indexed_iter_mut() {
                *v += k_grand - k_col_means[i] - k_col_means[j];
            }
            k
        } else {
            k_raw
        };

        let (mu, u) = k_used
            .eigh(UPLO::Lower)
            .map_err(|e| Error::Numerical(format!("gram eigendecomposition: {e}")))?;
        let mu_top = mu[n - 1];
        let cutoff = RANK_TOLERANCE * mu_top.max(0.0);
        let effective = mu.iter().filter(|&&m| m > cutoff && m > 0.0).count();
        if d > effective {
            return Err(Error::RankDeficiency {
                requested: d,
                effective,
            });
        }

        let mut alphas = Array2::zeros((n, d));
        let mut eigenvalues = Array1::zeros(d);
        for k in 0..d {
            let src = n - 1 - k;
            eigenvalues[k] = mu[src];
            let mut col = u.column(src).to_owned();
            fix_sign(col.view_mut());
            col.mapv_inplace(|v| v / mu[src].sqrt());
            alphas.column_mut(k).assign(&col);
        }

        let z_train = k_used.dot(&alphas);
        let k_z = gaussian_gram(&z_train, &z_train, gamma);
        let mut system = k_z;
        for i in 0..n {
            system[[i, i]] += lambda_sl;
        }
        let lu = system
            .factorize()
            .map_err(|e| Error::Numerical(format!("pre-image system factorization: {e}")))?;
        let p = x.ncols();
        let mut dual_coefs = Array2::zeros((n, p));
        for j in 0..p {
            let col = lu
                .solve(&x.column(j).to_owned())
                .map_err(|e| Error::Numerical(format!("pre-image solve: {e}")))?;
            dual_coefs.column_mut(j).assign(&col);
        }

        Ok(KpcaSlModel {
            x_train: x.to_owned(),
            gamma,
            lambda_sl,
            centered,
            k_col_means,
            k_grand,
            alphas,
            eigenvalues,
            z_train,
            dual_coefs,
        })
    }

    pub fn d(&self) -> usize {
        self.alphas.ncols()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn lambda_sl(&self) -> f64 {
        self.lambda_sl
    }

    pub fn eigenvalues(&self) -> &Array1<f64> {
        &self.eigenvalues
    }

    /// Latent codes for a batch: centered kernel vectors against the training
    /// set, projected through the scaled Gram eigenvectors.
    pub fn transform(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.x_train.ncols() {
            return Err(Error::dim(
                "kpca_sl transform",
                format!("{} columns", self.x_train.ncols()),
                format!("{}", x.ncols()),
            ));
        }
        let mut t = gaussian_gram(x, &self.x_train, self.gamma);
        if self.centered {
            let n = self.x_train.nrows() as f64;
            let row_means: Array1<f64> = t.map_axis(Axis(1), |row| row.sum() / n);
            for ((i, j), v) in t.indexed_iter_mut() {
                *v += self.k_grand - row_means[i] - self.k_col_means[j];
            }
        }
        Ok(t.dot(&self.alphas))
    }

    /// Denoise = transform to latent codes, then kernel-ridge pre-image.
    pub fn denoise(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let z = self.transform(x)?;
        let k_test = gaussian_gram(&z, &self.z_train, self.gamma);
        Ok(k_test.dot(&self.dual_coefs))
    }
}
