//! Random Fourier feature maps and activation inversion.
//!
//! The feature map is Phi(x) = sqrt(2) * sin(Wx + b) with W sampled i.i.d. from
//! N(0, 2*gamma) and b uniform on (-pi, pi], so that E[<Phi(x), Phi(y)>] / r
//! approximates the Gaussian kernel k(x, y) = exp(-gamma * ||x - y||^2).
//! Sin is not invertible globally; `bypass` splits a pre-activation into an
//! invertible part (inside the principal branch) plus a remainder that is
//! carried around the non-linearity and added back on inversion.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Element-wise non-linearity applied to pre-activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    /// sqrt(2) * sin, the random-Fourier-feature construction.
    Sin,
    /// max(0, x). No sqrt(2) scale; there is no kernel correspondence here.
    Relu,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Sin => "sin",
            Activation::Relu => "relu",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sin" => Ok(Activation::Sin),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::InvalidParameter {
                name: "activation",
                reason: format!("unknown activation `{other}` (expected sin or relu)"),
            }),
        }
    }
}

/// A sampled random feature map. Immutable after construction; the full map is
/// reproducible bit-for-bit from `(p, r, gamma, activation, seed)`.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    /// Frequency matrix, r x p, entries i.i.d. N(0, 2*gamma).
    pub(crate) w: Array2<f64>,
    /// Phase offsets in (-pi, pi].
    pub(crate) b: Array1<f64>,
    pub(crate) gamma: f64,
    pub(crate) activation: Activation,
    pub(crate) seed: u64,
}

/// Split of a pre-activation batch into an invertible part and a bypass
/// remainder. Rows are samples, matching the rest of the crate.
#[derive(Debug, Clone)]
pub struct ActivationDecomposition {
    /// Entries lie in the invertible subdomain of the activation.
    pub invertible_part: Array2<f64>,
    /// Remainder carried around the non-linearity; invertible_part + bypass
    /// reconstructs the input exactly.
    pub bypass: Array2<f64>,
}

/// Diagnostics from `invert_activation`: how often the input left the
/// activation's range and had to be clamped back.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClampReport {
    /// Number of entries clamped.
    pub clamped: usize,
    /// Total entries processed.
    pub total: usize,
    /// Largest distance past the range boundary seen before clamping.
    pub max_excess: f64,
}

impl ClampReport {
    /// Fraction of entries clamped, 0 when empty.
    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.clamped as f64 / self.total as f64
        }
    }

    pub(crate) fn merge(&mut self, other: &ClampReport) {
        self.clamped += other.clamped;
        self.total += other.total;
        self.max_excess = self.max_excess.max(other.max_excess);
    }
}

impl FeatureMap {
    /// Samples a fresh feature map. W entries are i.i.d. N(0, 2*gamma) so the
    /// inner product of sin features is an unbiased kernel estimate; offsets
    /// are uniform on (-pi, pi].
    ///
    /// The draw order is frozen: W row-major first, then b. Stored models are
    /// regenerated from the seed, so changing the order or the RNG would
    /// silently corrupt every saved model.
    pub fn sample(
        p: usize,
        r: usize,
        gamma: f64,
        activation: Activation,
        seed: u64,
    ) -> Result<FeatureMap> {
        if p == 0 {
            return Err(Error::InvalidParameter {
                name: "p",
                reason: "input dimension must be at least 1".into(),
            });
        }
        if r == 0 {
            return Err(Error::InvalidParameter {
                name: "r",
                reason: "feature count must be at least 1".into(),
            });
        }
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::InvalidParameter {
                name: "gamma",
                reason: format!("kernel width must be finite and positive, got {gamma}"),
            });
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, (2.0 * gamma).sqrt()).expect("std is finite and positive");
        let mut w = Vec::with_capacity(r * p);
        for _ in 0..r * p {
            w.push(normal.sample(&mut rng));
        }
        let w = Array2::from_shape_vec((r, p), w).expect("length is r*p by construction");
        // Uniform ranges are half-open [lo, hi); negating a draw from [-pi, pi)
        // lands exactly in (-pi, pi].
        let b = Array1::from_iter((0..r).map(|_| -rng.random_range(-PI..PI)));

        Ok(FeatureMap {
            w,
            b,
            gamma,
            activation,
            seed,
        })
    }

    pub fn p(&self) -> usize {
        self.w.ncols()
    }

    pub fn r(&self) -> usize {
        self.w.nrows()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Read-only view of the frequency matrix.
    pub fn weights(&self) -> &Array2<f64> {
        &self.w
    }

    /// Read-only view of the phase offsets.
    pub fn offsets(&self) -> &Array1<f64> {
        &self.b
    }

    /// Computes A = X W^T + b row-wise; row i is W x_i + b.
    pub fn pre_activation(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.p() {
            return Err(Error::dim(
                "pre_activation",
                format!("{} input columns", self.p()),
                format!("{}", x.ncols()),
            ));
        }
        let mut a = x.dot(&self.w.t());
        a += &self.b;
        Ok(a)
    }

    /// Applies the activation element-wise. The sqrt(2) scale belongs to the
    /// sin feature construction only; relu is plain max(0, x).
    pub fn activate(&self, a: &Array2<f64>) -> Array2<f64> {
        match self.activation {
            Activation::Sin => a.mapv(|v| SQRT_2 * v.sin()),
            Activation::Relu => a.mapv(|v| v.max(0.0)),
        }
    }

    /// Splits pre-activations into an invertible part plus a bypass remainder.
    ///
    /// Sin: the invertible part is asin(sin(a)), the principal branch; its
    /// numeric range is the closed interval [-pi/2, pi/2] (the open lower end
    /// is reachable only when sin(a) rounds to exactly -1). Relu: max/min
    /// split around zero.
    pub fn bypass(&self, a: &Array2<f64>) -> ActivationDecomposition {
        let invertible_part = match self.activation {
            Activation::Sin => a.mapv(|v| v.sin().asin()),
            Activation::Relu => a.mapv(|v| v.max(0.0)),
        };
        let bypass = a - &invertible_part;
        ActivationDecomposition {
            invertible_part,
            bypass,
        }
    }

    /// Inverts the activation on its subdomain and adds the bypass back.
    ///
    /// Sin: asin(clamp(B_hat / sqrt(2), -1, 1)) + A_bar. Relu: max(B_hat, 0)
    /// + A_bar. Out-of-range entries (possible after PCA truncation) are
    /// clamped silently and counted in the report.
    pub fn invert_activation(
        &self,
        b_hat: &Array2<f64>,
        a_bar: &Array2<f64>,
    ) -> Result<(Array2<f64>, ClampReport)> {
        if b_hat.dim() != a_bar.dim() {
            return Err(Error::dim(
                "invert_activation",
                format!("{:?}", b_hat.dim()),
                format!("{:?}", a_bar.dim()),
            ));
        }
        let mut report = ClampReport {
            total: b_hat.len(),
            ..ClampReport::default()
        };
        let inverted = match self.activation {
            Activation::Sin => b_hat.mapv(|v| {
                let s = v / SQRT_2;
                if s > 1.0 || s < -1.0 {
                    report.clamped += 1;
                    report.max_excess = report.max_excess.max(s.abs() - 1.0);
                    s.clamp(-1.0, 1.0).asin()
                } else {
                    s.asin()
                }
            }),
            Activation::Relu => b_hat.mapv(|v| {
                if v < 0.0 {
                    report.clamped += 1;
                    report.max_excess = report.max_excess.max(-v);
                    0.0
                } else {
                    v
                }
            }),
        };
        Ok((inverted + a_bar, report))
    }

    /// Monte-Carlo kernel estimate <Phi(x), Phi(y)> / r. Only defined for the
    /// sin map; relu features carry no kernel correspondence.
    pub fn kernel_approx(&self, x: &Array1<f64>, y: &Array1<f64>) -> Result<f64> {
        if self.activation != Activation::Sin {
            return Err(Error::InvalidParameter {
                name: "activation",
                reason: "kernel_approx requires the sin feature map".into(),
            });
        }
        if x.len() != self.p() || y.len() != self.p() {
            return Err(Error::dim(
                "kernel_approx",
                format!("vectors of length {}", self.p()),
                format!("{} and {}", x.len(), y.len()),
            ));
        }
        let ax = self.w.dot(x) + &self.b;
        let ay = self.w.dot(y) + &self.b;
        let mut acc = 0.0;
        for (va, vb) in ax.iter().zip(ay.iter()) {
            acc += 2.0 * va.sin() * vb.sin();
        }
        Ok(acc / self.r() as f64)
    }
}

/// The Gaussian kernel exp(-gamma * ||x - y||^2).
pub fn kernel_exact(x: &Array1<f64>, y: &Array1<f64>, gamma: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::dim(
            "kernel_exact",
            format!("equal lengths, left is {}", x.len()),
            format!("{}", y.len()),
        ));
    }
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::InvalidParameter {
            name: "gamma",
            reason: format!("kernel width must be finite and positive, got {gamma}"),
        });
    }
    let d2 = x
        .iter()
        .zip(y.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>();
    Ok((-gamma * d2).exp())
}

/// Closed numeric range of the sin invertible subdomain.
pub const SIN_SUBDOMAIN: (f64, f64) = (-FRAC_PI_2, FRAC_PI_2);
