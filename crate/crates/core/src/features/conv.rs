//! Multi-channel 3x3 convolution, zero padded, stride 1, same output size.
//!
//! Kernels are stored `[out][in][ky][kx]` and applied as cross-correlation:
//! `out[o][y][x] = sum_{i,ky,kx} w[o][i][ky][kx] * in[i][y+ky-1][x+kx-1]`.

use rayon::prelude::*;

pub const KSIZE: usize = 3;
pub const KAREA: usize = KSIZE * KSIZE;

/// One convolution layer: `out_channels x in_channels` kernels of size 3x3.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    pub out_channels: usize,
    pub in_channels: usize,
    /// `[out][in][ky][kx]`, row-major.
    pub weights: Vec<f64>,
}

impl ConvKernel {
    pub fn zeros(out_channels: usize, in_channels: usize) -> Self {
        Self {
            out_channels,
            in_channels,
            weights: vec![0.0; out_channels * in_channels * KAREA],
        }
    }

    pub fn kernel(&self, o: usize, i: usize) -> &[f64] {
        let start = (o * self.in_channels + i) * KAREA;
        &self.weights[start..start + KAREA]
    }

    pub fn kernel_mut(&mut self, o: usize, i: usize) -> &mut [f64] {
        let start = (o * self.in_channels + i) * KAREA;
        &mut self.weights[start..start + KAREA]
    }

    /// The kernel whose forward application is the adjoint of `self`:
    /// `t[i][o][ky][kx] = w[o][i][2-ky][2-kx]`.
    ///
    /// Flipping the taps turns the transposed convolution back into an
    /// ordinary cross-correlation, so one routine serves both directions.
    pub fn adjoint(&self) -> ConvKernel {
        let mut t = ConvKernel::zeros(self.in_channels, self.out_channels);
        for o in 0..self.out_channels {
            for i in 0..self.in_channels {
                let src = self.kernel(o, i);
                let dst = t.kernel_mut(i, o);
                for k in 0..KAREA {
                    dst[KAREA - 1 - k] = src[k];
                }
            }
        }
        t
    }

    /// Layout change only: `[out][in]` to `[in][out]`, taps untouched.
    pub fn transposed_layout(&self) -> ConvKernel {
        let mut t = ConvKernel::zeros(self.in_channels, self.out_channels);
        for o in 0..self.out_channels {
            for i in 0..self.in_channels {
                t.kernel_mut(i, o).copy_from_slice(self.kernel(o, i));
            }
        }
        t
    }

    /// Upper bound on the operator 2-norm: `sqrt(||K||_1 ||K||_inf)` with the
    /// induced norms of the channel-summed absolute taps.
    pub fn norm_bound(&self) -> f64 {
        let abs_sum = |o: usize, i: usize| self.kernel(o, i).iter().map(|w| w.abs()).sum::<f64>();
        let col = (0..self.in_channels)
            .map(|i| (0..self.out_channels).map(|o| abs_sum(o, i)).sum::<f64>())
            .fold(0.0, f64::max);
        let row = (0..self.out_channels)
            .map(|o| (0..self.in_channels).map(|i| abs_sum(o, i)).sum::<f64>())
            .fold(0.0, f64::max);
        (col * row).sqrt()
    }

    /// Applies the layer to `input` (`in_channels` planes of `h x w`).
    pub fn apply(&self, input: &[f64], h: usize, w: usize) -> Vec<f64> {
        let plane = h * w;
        debug_assert_eq!(input.len(), self.in_channels * plane);
        let mut out = vec![0.0; self.out_channels * plane];
        out.par_chunks_mut(plane).enumerate().for_each(|(o, dst)| {
            for i in 0..self.in_channels {
                let src = &input[i * plane..(i + 1) * plane];
                correlate_accumulate(self.kernel(o, i), src, dst, h, w);
            }
        });
        out
    }
}

/// `dst += k (*) src` for a single 3x3 kernel with zero padding.
fn correlate_accumulate(k: &[f64], src: &[f64], dst: &mut [f64], h: usize, w: usize) {
    for ky in 0..KSIZE {
        for kx in 0..KSIZE {
            let wk = k[ky * KSIZE + kx];
            if wk == 0.0 {
                continue;
            }
            let (y0, y1) = (1usize.saturating_sub(ky), (h + 1 - ky).min(h));
            let (x0, x1) = (1usize.saturating_sub(kx), (w + 1 - kx).min(w));
            for y in y0..y1 {
                let sy = y + ky - 1;
                let drow = &mut dst[y * w + x0..y * w + x1];
                let srow = &src[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                for (d, s) in drow.iter_mut().zip(srow) {
                    *d += wk * s;
                }
            }
        }
    }
}
