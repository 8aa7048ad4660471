//! User-side gradient obfuscation applied before an update is shared.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Gradients;

/// One defense configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Defense {
    #[default]
    None,
    /// Gaussian noise of standard deviation `sigma` on every entry.
    Noise { sigma: f64 },
    /// Global L2 clipping to `beta` followed by Gaussian noise.
    Dp { beta: f64, sigma: f64 },
    /// Threshold sparsification that drops a fraction `theta` of entries and
    /// keeps them in a per-client residual.
    Compression {
        theta: f64,
        #[serde(default)]
        scope: ThresholdScope,
    },
}

impl Defense {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Defense::None => true,
            Defense::Noise { sigma } => sigma >= 0.0 && sigma.is_finite(),
            Defense::Dp { beta, sigma } => {
                beta > 0.0 && beta.is_finite() && sigma >= 0.0 && sigma.is_finite()
            }
            Defense::Compression { theta, .. } => (0.0..1.0).contains(&theta),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid defense {self}")))
        }
    }
}

impl fmt::Display for Defense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Defense::None => write!(f, "none"),
            Defense::Noise { sigma } => write!(f, "noise(sigma={sigma})"),
            Defense::Dp { beta, sigma } => write!(f, "dp(beta={beta};sigma={sigma})"),
            Defense::Compression {
                theta,
                scope: ThresholdScope::Global,
            } => write!(f, "compression(theta={theta})"),
            Defense::Compression {
                theta,
                scope: ThresholdScope::PerTensor,
            } => write!(f, "compression(theta={theta};per_tensor)"),
        }
    }
}

/// Adds an independent `N(0, sigma^2)` draw to every entry.
pub fn add_gaussian_noise(grads: &mut Gradients, sigma: f64, rng: &mut impl Rng) -> Result<()> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "sigma must be >= 0, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, sigma).expect("valid sigma");
    for v in grads.values_mut() {
        *v += normal.sample(rng);
    }
    Ok(())
}

/// `grad <- grad / max(1, ||grad||_2 / beta)`, then Gaussian noise.
pub fn dp_clip_and_noise(
    grads: &mut Gradients,
    beta: f64,
    sigma: f64,
    rng: &mut impl Rng,
) -> Result<()> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "beta must be > 0, got {beta}"
        )));
    }
    let factor = (grads.l2_norm() / beta).max(1.0);
    if factor > 1.0 {
        grads.scale(1.0 / factor);
    }
    add_gaussian_noise(grads, sigma, rng)
}

/// Whether the compression threshold is computed over all entries at once
/// or separately for every weight/bias tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdScope {
    #[default]
    Global,
    PerTensor,
}

/// Per-client residual carried across rounds by [`CompressionState::compress`].
#[derive(Debug, Clone, PartialEq)]
pub struct CompressionState {
    residual: Gradients,
    theta: f64,
    scope: ThresholdScope,
}

impl CompressionState {
    pub fn new(like: &Gradients, theta: f64, scope: ThresholdScope) -> Result<Self> {
        if !(0.0..1.0).contains(&theta) {
            return Err(Error::InvalidArgument(format!(
                "theta must be in [0, 1), got {theta}"
            )));
        }
        Ok(Self {
            residual: like.zeros_like(),
            theta,
            scope,
        })
    }

    pub fn residual(&self) -> &Gradients {
        &self.residual
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Accumulates `grads` into the residual and emits the entries whose
    /// magnitude exceeds the `theta`-quantile of `|residual|`. Emitted entries
    /// are cleared from the residual; everything else stays accumulated.
    pub fn compress(&mut self, grads: &Gradients) -> Result<Gradients> {
        self.residual.add_scaled(1.0, grads)?;
        if !self.residual.all_finite() {
            return Err(Error::NonFinite("compression residual"));
        }
        let mut emitted = self.residual.zeros_like();
        match self.scope {
            ThresholdScope::Global => {
                let abs: Vec<f64> = self.residual.values().map(|v| v.abs()).collect();
                let threshold = quantile_threshold(abs, self.theta);
                for (r, e) in self.residual.values_mut().zip(emitted.values_mut()) {
                    if threshold.is_none_or(|t| r.abs() > t) {
                        *e = *r;
                        *r = 0.0;
                    }
                }
            }
            ThresholdScope::PerTensor => {
                for (r, e) in self.residual.tensors_mut().zip(emitted.tensors_mut()) {
                    let abs: Vec<f64> = r.data().iter().map(|v| v.abs()).collect();
                    let threshold = quantile_threshold(abs, self.theta);
                    for (r, e) in r.data_mut().iter_mut().zip(e.data_mut()) {
                        if threshold.is_none_or(|t| r.abs() > t) {
                            *e = *r;
                            *r = 0.0;
                        }
                    }
                }
            }
        }
        Ok(emitted)
    }
}

/// The `ceil(theta * N)`-th smallest magnitude, or `None` when nothing is to
/// be suppressed. Entries strictly above it survive, so at most
/// `N - ceil(theta * N)` do.
fn quantile_threshold(mut abs: Vec<f64>, theta: f64) -> Option<f64> {
    let k = (theta * abs.len() as f64).ceil() as usize;
    if k == 0 {
        return None;
    }
    let k = k.min(abs.len());
    let (_, kth, _) = abs.select_nth_unstable_by(k - 1, f64::total_cmp);
    Some(*kth)
}

/// Applies a stateless defense in place. Compression needs a
/// [`CompressionState`] and is rejected here.
pub fn apply_stateless(defense: &Defense, grads: &mut Gradients, rng: &mut impl Rng) -> Result<()> {
    match *defense {
        Defense::None => Ok(()),
        Defense::Noise { sigma } => add_gaussian_noise(grads, sigma, rng),
        Defense::Dp { beta, sigma } => dp_clip_and_noise(grads, beta, sigma, rng),
        Defense::Compression { .. } => Err(Error::InvalidArgument(
            "compression needs per-client state".into(),
        )),
    }
}
