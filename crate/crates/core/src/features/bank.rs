//! Filter banks: layer weights, optional inexact transposes, presets and the
//! `.fb` text format.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::conv::{ConvKernel, KAREA, KSIZE};
use crate::error::{Error, Result};

pub const DEFAULT_ACTIVATION_DELTA: f64 = 0.001;
pub const DEFAULT_CHANNELS: usize = 48;
pub const DEFAULT_LAYERS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    layers: Vec<ConvKernel>,
    /// Per layer, `[in][out][ky][kx]`; replaces `w_q^T` in inexact mode.
    inexact: Option<Vec<ConvKernel>>,
    activation_delta: f64,
    // Correlation kernels used by the backward pass, derived once.
    exact_backward: Vec<ConvKernel>,
    inexact_backward: Option<Vec<ConvKernel>>,
}

/// Per-layer distance between inexact and exact transposes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransposeReport {
    pub frobenius_per_layer: Vec<f64>,
    /// `(1/N_w) * sum_q ||w~_q - w_q^T||_F^2`, `N_w` the inexact parameter count.
    pub constraint_metric: f64,
}

fn flip_taps(k: &ConvKernel) -> ConvKernel {
    let mut out = k.clone();
    for chunk in out.weights.chunks_mut(KAREA) {
        chunk.reverse();
    }
    out
}

impl FilterBank {
    pub fn new(layers: Vec<ConvKernel>, inexact: Option<Vec<ConvKernel>>, activation_delta: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::FilterBank("at least one layer is required".into()));
        }
        if layers[0].in_channels != 1 {
            return Err(Error::FilterBank(format!(
                "first layer must take 1 input channel, takes {}",
                layers[0].in_channels
            )));
        }
        for (q, pair) in layers.windows(2).enumerate() {
            if pair[0].out_channels != pair[1].in_channels {
                return Err(Error::FilterBank(format!(
                    "layer {} produces {} channels but layer {} expects {}",
                    q + 1,
                    pair[0].out_channels,
                    q + 2,
                    pair[1].in_channels
                )));
            }
        }
        for (q, k) in layers.iter().enumerate() {
            if k.weights.len() != k.out_channels * k.in_channels * KAREA {
                return Err(Error::FilterBank(format!("layer {} has a malformed weight array", q + 1)));
            }
            if k.weights.iter().any(|w| !w.is_finite()) {
                return Err(Error::FilterBank(format!("layer {} has non-finite weights", q + 1)));
            }
        }
        if !(activation_delta > 0.0 && activation_delta.is_finite()) {
            return Err(Error::FilterBank(format!(
                "activation delta must be positive, got {activation_delta}"
            )));
        }
        if let Some(inexact) = &inexact {
            if inexact.len() != layers.len() {
                return Err(Error::FilterBank(format!(
                    "{} inexact transposes for {} layers",
                    inexact.len(),
                    layers.len()
                )));
            }
            for (q, (t, k)) in inexact.iter().zip(&layers).enumerate() {
                if t.out_channels != k.in_channels
                    || t.in_channels != k.out_channels
                    || t.weights.len() != k.weights.len()
                {
                    return Err(Error::FilterBank(format!(
                        "inexact transpose {} must be {}x{}x3x3",
                        q + 1,
                        k.in_channels,
                        k.out_channels
                    )));
                }
                if t.weights.iter().any(|w| !w.is_finite()) {
                    return Err(Error::FilterBank(format!("inexact transpose {} is non-finite", q + 1)));
                }
            }
        }
        let exact_backward = layers.iter().map(ConvKernel::adjoint).collect();
        let inexact_backward = inexact.as_ref().map(|v| v.iter().map(flip_taps).collect());
        Ok(Self {
            layers,
            inexact,
            activation_delta,
            exact_backward,
            inexact_backward,
        })
    }

    pub fn layers(&self) -> &[ConvKernel] {
        &self.layers
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// A single layer has no activation, so `g` is linear.
    pub fn is_linear(&self) -> bool {
        self.layers.len() == 1
    }

    /// Feature dimension `d`.
    pub fn channels(&self) -> usize {
        self.layers.last().expect("non-empty").out_channels
    }

    pub fn activation_delta(&self) -> f64 {
        self.activation_delta
    }

    pub fn inexact(&self) -> Option<&[ConvKernel]> {
        self.inexact.as_deref()
    }

    pub fn has_inexact(&self) -> bool {
        self.inexact.is_some()
    }

    pub(crate) fn exact_backward(&self) -> &[ConvKernel] {
        &self.exact_backward
    }

    pub(crate) fn inexact_backward(&self) -> Option<&[ConvKernel]> {
        self.inexact_backward.as_deref()
    }

    /// Attaches inexact transposes (validated against the layer shapes).
    pub fn with_inexact(self, inexact: Vec<ConvKernel>) -> Result<Self> {
        Self::new(self.layers, Some(inexact), self.activation_delta)
    }

    /// Exact transposes `w_q^T` in the inexact-transpose layout.
    pub fn exact_transposes(&self) -> Vec<ConvKernel> {
        self.layers.iter().map(ConvKernel::transposed_layout).collect()
    }

    /// Multiplies every layer weight by `factor`. For a single linear layer
    /// this scales `g` and therefore the sparsity term.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let mut layers = self.layers.clone();
        for k in &mut layers {
            k.weights.iter_mut().for_each(|w| *w *= factor);
        }
        let inexact = self.inexact.clone().map(|mut v| {
            for k in &mut v {
                k.weights.iter_mut().for_each(|w| *w *= factor);
            }
            v
        });
        Self::new(layers, inexact, self.activation_delta)
    }

    pub fn transpose_report(&self) -> Option<TransposeReport> {
        let inexact = self.inexact.as_ref()?;
        let mut total_sq = 0.0;
        let mut count = 0usize;
        let frobenius_per_layer = inexact
            .iter()
            .zip(self.exact_transposes())
            .map(|(t, e)| {
                let sq: f64 = t.weights.iter().zip(&e.weights).map(|(a, b)| (a - b) * (a - b)).sum();
                total_sq += sq;
                count += t.weights.len();
                sq.sqrt()
            })
            .collect();
        Some(TransposeReport {
            frobenius_per_layer,
            constraint_metric: total_sq / count as f64,
        })
    }

    /// Operator-norm upper bounds of the layers, in order.
    pub fn layer_norm_bounds(&self) -> Vec<f64> {
        self.layers.iter().map(ConvKernel::norm_bound).collect()
    }

    // ---- presets ------------------------------------------------------

    /// Forward differences along x and y; the sparsity term becomes
    /// (isotropic) total variation scaled by `weight`.
    pub fn tv(weight: f64) -> Self {
        let mut k = ConvKernel::zeros(2, 1);
        let horizontal = k.kernel_mut(0, 0);
        horizontal[4] = -weight;
        horizontal[5] = weight;
        let vertical = k.kernel_mut(1, 0);
        vertical[4] = -weight;
        vertical[7] = weight;
        Self::new(vec![k], None, DEFAULT_ACTIVATION_DELTA).expect("tv preset is valid")
    }

    /// Single layer whose one kernel is a centered delta: `g(x) = x`.
    pub fn identity() -> Self {
        let mut k = ConvKernel::zeros(1, 1);
        k.kernel_mut(0, 0)[4] = 1.0;
        Self::new(vec![k], None, DEFAULT_ACTIVATION_DELTA).expect("identity preset is valid")
    }

    /// Single layer of all-zero kernels: the regularizer vanishes.
    pub fn zeros(channels: usize) -> Self {
        Self::new(vec![ConvKernel::zeros(channels, 1)], None, DEFAULT_ACTIVATION_DELTA)
            .expect("zero preset is valid")
    }

    /// One layer of `DEFAULT_CHANNELS` kernels: six seeded random rotations of
    /// the eight non-constant 3x3 DCT atoms, scaled so the stack is a tight
    /// frame on zero-mean patches.
    pub fn dct8(seed: u64, weight: f64) -> Self {
        let basis_1d = |u: usize, t: usize| {
            let a = if u == 0 { (1.0f64 / 3.0).sqrt() } else { (2.0f64 / 3.0).sqrt() };
            a * (std::f64::consts::PI * (2 * t + 1) as f64 * u as f64 / 6.0).cos()
        };
        let atoms: Vec<[f64; KAREA]> = (0..KAREA)
            .filter(|&a| a != 0)
            .map(|a| {
                let (u, v) = (a / KSIZE, a % KSIZE);
                let mut atom = [0.0; KAREA];
                for y in 0..KSIZE {
                    for x in 0..KSIZE {
                        atom[y * KSIZE + x] = basis_1d(u, y) * basis_1d(v, x);
                    }
                }
                atom
            })
            .collect();
        let groups = DEFAULT_CHANNELS / atoms.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut k = ConvKernel::zeros(DEFAULT_CHANNELS, 1);
        let norm = weight / (groups as f64).sqrt();
        for g in 0..groups {
            let rot = random_orthogonal(atoms.len(), &mut rng);
            for r in 0..atoms.len() {
                let dst = k.kernel_mut(g * atoms.len() + r, 0);
                for (a, atom) in atoms.iter().enumerate() {
                    for t in 0..KAREA {
                        dst[t] += norm * rot[r * atoms.len() + a] * atom[t];
                    }
                }
            }
        }
        Self::new(vec![k], None, DEFAULT_ACTIVATION_DELTA).expect("dct8 preset is valid")
    }

    /// Xavier-uniform random layers, `U(-a, a)` with
    /// `a = sqrt(6 / (fan_in + fan_out))` and fans counted over 3x3 taps.
    pub fn seeded_random(seed: u64, layers: usize, channels: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(layers);
        for q in 0..layers.max(1) {
            let in_ch = if q == 0 { 1 } else { channels };
            let bound = (6.0 / ((in_ch + channels) * KAREA) as f64).sqrt();
            let mut k = ConvKernel::zeros(channels, in_ch);
            k.weights.iter_mut().for_each(|w| *w = rng.random_range(-bound..bound));
            out.push(k);
        }
        Self::new(out, None, DEFAULT_ACTIVATION_DELTA).expect("seeded preset is valid")
    }

    /// `w_q^T + E_q` where `E_q` is random with `||E_q||_F = rel * ||w_q^T||_F`.
    pub fn perturbed_transposes(&self, rel: f64, seed: u64) -> Vec<ConvKernel> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.exact_transposes()
            .into_iter()
            .map(|mut t| {
                let base: f64 = t.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
                let noise: Vec<f64> = t.weights.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
                let nn: f64 = noise.iter().map(|w| w * w).sum::<f64>().sqrt();
                for (w, e) in t.weights.iter_mut().zip(noise) {
                    *w += rel * base * e / nn;
                }
                t
            })
            .collect()
    }

    // ---- file format --------------------------------------------------

    pub fn to_file_text(&self) -> String {
        let file = BankFile {
            format: FORMAT_TAG.into(),
            activation_delta: self.activation_delta,
            layers: self.layers.iter().map(nest).collect(),
            inexact_transposes: self.inexact.as_ref().map(|v| v.iter().map(nest).collect()),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("bank serializes");
        s.push('\n');
        s
    }

    pub fn from_file_text(text: &str) -> Result<Self> {
        let file: BankFile =
            serde_json::from_str(text).map_err(|e| Error::FilterBank(format!("parse error: {e}")))?;
        if file.format != FORMAT_TAG {
            return Err(Error::FilterBank(format!("unknown format tag {:?}", file.format)));
        }
        let layers = file.layers.iter().map(unnest).collect::<Result<Vec<_>>>()?;
        let inexact = file
            .inexact_transposes
            .as_ref()
            .map(|v| v.iter().map(unnest).collect::<Result<Vec<_>>>())
            .transpose()?;
        Self::new(layers, inexact, file.activation_delta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_file_text(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_text()).map_err(|e| Error::io(path, e))
    }
}

const FORMAT_TAG: &str = "ldct-filter-bank/1";

type Nested = Vec<Vec<[[f64; KSIZE]; KSIZE]>>;

/// On-disk schema of a `.fb` file.
///
/// `layers[q][o][i]` is the 3x3 kernel from input channel `i` to output
/// channel `o` of layer `q`; `inexact_transposes[q][i][o]` is the learned
/// replacement for the transpose of that kernel.
#[derive(Debug, Serialize, Deserialize)]
struct BankFile {
    format: String,
    activation_delta: f64,
    layers: Vec<Nested>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    inexact_transposes: Option<Vec<Nested>>,
}

fn nest(k: &ConvKernel) -> Nested {
    (0..k.out_channels)
        .map(|o| {
            (0..k.in_channels)
                .map(|i| {
                    let w = k.kernel(o, i);
                    [[w[0], w[1], w[2]], [w[3], w[4], w[5]], [w[6], w[7], w[8]]]
                })
                .collect()
        })
        .collect()
}

fn unnest(n: &Nested) -> Result<ConvKernel> {
    let out_channels = n.len();
    let in_channels = n.first().map_or(0, Vec::len);
    if out_channels == 0 || in_channels == 0 || n.iter().any(|row| row.len() != in_channels) {
        return Err(Error::FilterBank("ragged or empty kernel array".into()));
    }
    let mut k = ConvKernel::zeros(out_channels, in_channels);
    for (o, row) in n.iter().enumerate() {
        for (i, taps) in row.iter().enumerate() {
            let dst = k.kernel_mut(o, i);
            for y in 0..KSIZE {
                for x in 0..KSIZE {
                    dst[y * KSIZE + x] = taps[y][x];
                }
            }
        }
    }
    Ok(k)
}

/// Haar-random orthogonal matrix via Gram-Schmidt on uniform entries.
fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut q = vec![0.0; n * n];
    for r in 0..n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        for p in 0..r {
            let row = &q[p * n..(p + 1) * n];
            let proj: f64 = v.iter().zip(row).map(|(a, b)| a * b).sum();
            for (a, b) in v.iter_mut().zip(row) {
                *a -= proj * b;
            }
        }
        let nrm: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        for (c, a) in v.iter().enumerate() {
            q[r * n + c] = a / nrm;
        }
    }
    q
}
