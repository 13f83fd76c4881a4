//! The feature transform `g(x) = w_l * s(... s(w_1 * x))` and its transpose
//! Jacobian.

use serde::{Deserialize, Serialize};

use super::activation::{sigma, sigma_prime};
use super::bank::FilterBank;
use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, Image};

/// Which transposes the backward pass uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradientMode {
    /// True transposes `w_q^T`.
    #[default]
    Exact,
    /// The bank's learned replacements `w~_q`.
    Inexact,
}

impl std::str::FromStr for GradientMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Self::Exact),
            "inexact" => Ok(Self::Inexact),
            other => Err(Error::InvalidParameter(format!("unknown gradient mode {other:?}"))),
        }
    }
}

/// Pre-activations of every hidden layer, cached by the forward pass.
#[derive(Debug, Clone)]
pub struct ActivationState {
    height: usize,
    width: usize,
    /// `pre[q]` is the output of layer `q + 1` before `s`; there are `l - 1`.
    pre: Vec<Vec<f64>>,
}

impl ActivationState {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pre_activations(&self) -> &[Vec<f64>] {
        &self.pre
    }

    /// `grad g(x)^T v` for the `x` this state was recorded at, on raw planes.
    pub fn transpose_apply_raw(&self, fb: &FilterBank, v: &[f64], mode: GradientMode) -> Result<Vec<f64>> {
        let (h, w) = (self.height, self.width);
        let plane = h * w;
        if v.len() != fb.channels() * plane {
            return Err(Error::Shape(format!(
                "feature cotangent has {} entries, expected {}x{}",
                v.len(),
                fb.channels(),
                plane
            )));
        }
        if self.pre.len() + 1 != fb.n_layers() {
            return Err(Error::Shape("activation state does not belong to this filter bank".into()));
        }
        let kernels = match mode {
            GradientMode::Exact => fb.exact_backward(),
            GradientMode::Inexact => fb.inexact_backward().ok_or(Error::MissingInexactTranspose)?,
        };
        let delta = fb.activation_delta();
        let mut grad = v.to_vec();
        for q in (0..fb.n_layers()).rev() {
            grad = kernels[q].apply(&grad, h, w);
            if q > 0 {
                for (gv, t) in grad.iter_mut().zip(&self.pre[q - 1]) {
                    *gv *= sigma_prime(*t, delta);
                }
            }
        }
        Ok(grad)
    }
}

/// Forward pass on a raw `h x w` plane.
pub fn apply_g_raw(x: &[f64], h: usize, w: usize, fb: &FilterBank) -> Result<(FeatureMap, ActivationState)> {
    if x.len() != h * w {
        return Err(Error::Shape(format!("image has {} pixels, expected {h}x{w}", x.len())));
    }
    let delta = fb.activation_delta();
    let layers = fb.layers();
    let mut pre = Vec::with_capacity(layers.len() - 1);
    let mut current = layers[0].apply(x, h, w);
    for layer in &layers[1..] {
        let activated: Vec<f64> = current.iter().map(|t| sigma(*t, delta)).collect();
        pre.push(current);
        current = layer.apply(&activated, h, w);
    }
    let features = FeatureMap::new(fb.channels(), h * w, current)?;
    Ok((features, ActivationState { height: h, width: w, pre }))
}

pub fn apply_g(x: &Image, fb: &FilterBank) -> Result<(FeatureMap, ActivationState)> {
    apply_g_raw(x.values(), x.height(), x.width(), fb)
}

/// `grad g(x)^T v`, recomputing the forward pass at `x`.
pub fn jacobian_t_apply(x: &Image, fb: &FilterBank, v: &FeatureMap, mode: GradientMode) -> Result<Image> {
    if v.locations() != x.len() || v.channels() != fb.channels() {
        return Err(Error::Shape(format!(
            "cotangent is {}x{}, expected {}x{}",
            v.channels(),
            v.locations(),
            fb.channels(),
            x.len()
        )));
    }
    let (_, state) = apply_g(x, fb)?;
    let g = state.transpose_apply_raw(fb, v.values(), mode)?;
    x.with_values(g)
}
