//! PCA of feature-space data via the covariance (primal) or Gram (dual) path.
//!
//! Both paths produce the same projection: top eigenvectors of the empirical
//! second-moment matrix Sigma = (1/n) B^T B, optionally after subtracting the
//! feature mean. The dual path eigendecomposes the n x n Gram matrix instead
//! and maps its eigenvectors back, which is cheaper whenever r > n.

use ndarray::{Array1, Array2, ArrayViewMut1, Axis};
use ndarray_linalg::{Eigh, UPLO};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which fit path produced a projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PcaPath {
    /// Eigendecomposition of the r x r covariance.
    Primal,
    /// Eigendecomposition of the n x n Gram matrix.
    Dual,
}

impl PcaPath {
    pub fn name(self) -> &'static str {
        match self {
            PcaPath::Primal => "primal",
            PcaPath::Dual => "dual",
        }
    }
}

/// A fitted orthonormal projection onto the top principal directions of a
/// feature batch. Rows of `p_matrix` are the eigenvectors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Projection {
    pub(crate) p_matrix: Array2<f64>,
    /// Covariance eigenvalues for the kept components, non-increasing.
    pub(crate) eigenvalues: Array1<f64>,
    pub(crate) centered: bool,
    /// Feature mean subtracted before projecting; all zeros when centered is
    /// false so project/reconstruct need no case split.
    pub(crate) mean: Array1<f64>,
}

/// Relative floor below which dual-path Gram eigenvalues count as rank loss.
pub const RANK_TOLERANCE: f64 = 1e-12;

fn validate_fit_args(b: &Array2<f64>, d: usize, context: &str) -> Result<()> {
    let (n, r) = b.dim();
    if d == 0 {
        return Err(Error::InvalidParameter {
            name: "d",
            reason: "component count must be at least 1".into(),
        });
    }
    if d > n.min(r) {
        return Err(Error::dim(
            context,
            format!("d <= min(n, r) = {}", n.min(r)),
            format!("d = {d} with n = {n}, r = {r}"),
        ));
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "B",
            reason: "feature matrix contains non-finite entries".into(),
        });
    }
    Ok(())
}

/// Flips an eigenvector so its largest-magnitude entry is positive. Ties pick
/// the first maximal entry, making the convention deterministic.
pub(crate) fn fix_sign(mut v: ArrayViewMut1<f64>) {
    let mut idx = 0;
    let mut best = f64::NEG_INFINITY;
    for (i, &x) in v.iter().enumerate() {
        if x.abs() > best {
            best = x.abs();
            idx = i;
        }
    }
    if v[idx] < 0.0 {
        v.mapv_inplace(|x| -x);
    }
}

fn center(b: &Array2<f64>, centered: bool) -> (Array2<f64>, Array1<f64>) {
    if centered {
        let mean = b.mean_axis(Axis(0)).expect("n >= 1 checked by caller");
        (b - &mean, mean)
    } else {
        (b.to_owned(), Array1::zeros(b.ncols()))
    }
}

/// Checks an eigenvalue coming out of the solver; tiny negatives (inevitable
/// at machine precision) clamp to zero, anything clearly negative is an error.
/// The guard scales with the top eigenvalue so large-magnitude data does not
/// trip it spuriously.
fn checked_eigenvalue(lambda: f64, top: f64, context: &str) -> Result<f64> {
    let floor = -1e-10 * top.abs().max(1.0);
    if lambda < floor {
        return Err(Error::Numerical(format!(
            "{context}: eigenvalue {lambda} below tolerance {floor}"
        )));
    }
    Ok(lambda.max(0.0))
}

/// Fits via eigendecomposition of the r x r covariance (1/n) B^T B.
pub fn fit_projection_primal(b: &Array2<f64>, d: usize, centered: bool) -> Result<Projection> {
    validate_fit_args(b, d, "fit_projection_primal")?;
    let (n, r) = b.dim();
    let (bc, mean) = center(b, centered);
    let cov = bc.t().dot(&bc) / n as f64;
    let (vals, vecs) = cov
        .eigh(UPLO::Lower)
        .map_err(|e| Error::Numerical(format!("covariance eigendecomposition: {e}")))?;
    // eigh returns eigenvalues ascending; walk from the top
    let top = vals[r - 1];
    let mut p_matrix = Array2::zeros((d, r));
    let mut eigenvalues = Array1::zeros(d);
    for k in 0..d {
        let src = r - 1 - k;
        eigenvalues[k] = checked_eigenvalue(vals[src], top, "fit_projection_primal")?;
        p_matrix.row_mut(k).assign(&vecs.column(src));
        fix_sign(p_matrix.row_mut(k));
    }
    Ok(Projection {
        p_matrix,
        eigenvalues,
        centered,
        mean,
    })
}

/// Fits via eigendecomposition of the n x n Gram matrix B B^T; Gram
/// eigenvalues mu relate to covariance eigenvalues by lambda = mu / n, and
/// eigenvectors map back as v = B^T u / sqrt(mu).
pub fn fit_projection_dual(b: &Array2<f64>, d: usize, centered: bool) -> Result<Projection> {
    validate_fit_args(b, d, "fit_projection_dual")?;
    let (n, r) = b.dim();
    let (bc, mean) = center(b, centered);
    let gram = bc.dot(&bc.t());
    let (vals, vecs) = gram
        .eigh(UPLO::Lower)
        .map_err(|e| Error::Numerical(format!("gram eigendecomposition: {e}")))?;
    let mu_top = vals[n - 1];
    // components below the relative floor are numerically rank loss, not signal
    let cutoff = RANK_TOLERANCE * mu_top.max(0.0);
    let effective = vals.iter().filter(|&&mu| mu > cutoff && mu > 0.0).count();
    if d > effective {
        return Err(Error::RankDeficiency {
            requested: d,
            effective,
        });
    }
    let mut p_matrix = Array2::zeros((d, r));
    let mut eigenvalues = Array1::zeros(d);
    for k in 0..d {
        let src = n - 1 - k;
        let mu = checked_eigenvalue(vals[src], mu_top, "fit_projection_dual")?;
        eigenvalues[k] = mu / n as f64;
        let v = bc.t().dot(&vecs.column(src)) / mu.sqrt();
        p_matrix.row_mut(k).assign(&v);
        fix_sign(p_matrix.row_mut(k));
    }
    Ok(Projection {
        p_matrix,
        eigenvalues,
        centered,
        mean,
    })
}

/// Fits with the cheaper path: dual when r > n, primal otherwise.
pub fn fit_projection_auto(
    b: &Array2<f64>,
    d: usize,
    centered: bool,
) -> Result<(Projection, PcaPath)> {
    let (n, r) = b.dim();
    if r > n {
        Ok((fit_projection_dual(b, d, centered)?, PcaPath::Dual))
    } else {
        Ok((fit_projection_primal(b, d, centered)?, PcaPath::Primal))
    }
}

impl Projection {
    pub fn d(&self) -> usize {
        self.p_matrix.nrows()
    }

    pub fn r(&self) -> usize {
        self.p_matrix.ncols()
    }

    pub fn centered(&self) -> bool {
        self.centered
    }

    pub fn eigenvalues(&self) -> &Array1<f64> {
        &self.eigenvalues
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.p_matrix
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    /// Z = (B - mean) P^T.
    pub fn project(&self, b: &Array2<f64>) -> Result<Array2<f64>> {
        if b.ncols() != self.r() {
            return Err(Error::dim(
                "project",
                format!("{} feature columns", self.r()),
                format!("{}", b.ncols()),
            ));
        }
        let bc = b - &self.mean;
        Ok(bc.dot(&self.p_matrix.t()))
    }

    /// B_hat = Z P + mean, the orthogonal reconstruction from codes.
    pub fn reconstruct_features(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        if z.ncols() != self.d() {
            return Err(Error::dim(
                "reconstruct_features",
                format!("{} code columns", self.d()),
                format!("{}", z.ncols()),
            ));
        }
        Ok(z.dot(&self.p_matrix) + &self.mean)
    }
}
