//! Forward and backward kernels for the supported layer types.
//!
//! All kernels are single-threaded with a fixed loop order, so results are
//! bitwise reproducible. Activations are NCHW (or NF) row-major.

/// Geometry of a 2-d convolution over one sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_h: usize,
    pub in_w: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn in_plane(&self) -> usize {
        self.in_h * self.in_w
    }

    pub fn out_plane(&self) -> usize {
        self.out_h() * self.out_w()
    }

    /// Output index range along one axis for which the tap at offset `k`
    /// lands inside an input of length `len`.
    fn valid(&self, k: usize, len: usize, out_len: usize) -> (usize, usize) {
        let (s, p) = (self.stride, self.padding);
        let lo = if k >= p { 0 } else { (p - k).div_ceil(s) };
        let hi = if len + p > k { ((len - 1 + p - k) / s + 1).min(out_len) } else { 0 };
        (lo, hi.max(lo))
    }

    /// Calls `f(out_start, in_start, len)` for every run of output
    /// positions of one plane that tap `(ky, kx)` reads from. Within a run,
    /// output `out_start + t` reads input `in_start + t * stride`.
    #[inline]
    pub fn for_each_tap_run(&self, ky: usize, kx: usize, mut f: impl FnMut(usize, usize, usize)) {
        let (oh, ow) = (self.out_h(), self.out_w());
        let (y0, y1) = self.valid(ky, self.in_h, oh);
        let (x0, x1) = self.valid(kx, self.in_w, ow);
        if x1 == x0 {
            return;
        }
        for oy in y0..y1 {
            let iy = oy * self.stride + ky - self.padding;
            f(oy * ow + x0, iy * self.in_w + x0 * self.stride + kx - self.padding, x1 - x0);
        }
    }

    /// Calls `f(out_index, in_index)` for every output position of one
    /// plane that tap `(ky, kx)` reads from.
    #[inline]
    pub fn for_each_tap(&self, ky: usize, kx: usize, mut f: impl FnMut(usize, usize)) {
        let s = self.stride;
        self.for_each_tap_run(ky, kx, |o, i, len| {
            for t in 0..len {
                f(o + t, i + t * s);
            }
        });
    }
}

/// `y[o + t] += w * x[i + t * stride]` for `t < len`.
#[inline]
pub(crate) fn axpy_run(y: &mut [f32], o: usize, x: &[f32], i: usize, len: usize, stride: usize, w: f32) {
    if stride == 1 {
        for (yv, xv) in y[o..o + len].iter_mut().zip(&x[i..i + len]) {
            *yv += w * xv;
        }
    } else {
        for t in 0..len {
            y[o + t] += w * x[i + t * stride];
        }
    }
}

/// Dot product with eight interleaved accumulators, in a fixed order.
#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y[n, j] = b[j] + sum_i w[j, i] x[n, i]`.
pub fn linear_forward(x: &[f32], w: &[f32], b: &[f32], batch: usize, inputs: usize, outputs: usize) -> Vec<f32> {
    let mut y = vec![0.0f32; batch * outputs];
    for n in 0..batch {
        let xr = &x[n * inputs..(n + 1) * inputs];
        let yr = &mut y[n * outputs..(n + 1) * outputs];
        for j in 0..outputs {
            yr[j] = dot(&w[j * inputs..(j + 1) * inputs], xr) + b[j];
        }
    }
    y
}

/// Accumulates weight and bias gradients and returns the input gradient.
/// Parameter gradients are summed over the batch in f64.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward(
    x: &[f32],
    w: &[f32],
    dy: &[f32],
    dw: &mut [f32],
    db: &mut [f32],
    batch: usize,
    inputs: usize,
    outputs: usize,
) -> Vec<f32> {
    let mut dx = vec![0.0f32; batch * inputs];
    let mut dw64 = vec![0.0f64; outputs * inputs];
    let mut db64 = vec![0.0f64; outputs];
    for n in 0..batch {
        let xr = &x[n * inputs..(n + 1) * inputs];
        let dxr = &mut dx[n * inputs..(n + 1) * inputs];
        for j in 0..outputs {
            let g = dy[n * outputs + j];
            if g == 0.0 {
                continue;
            }
            db64[j] += g as f64;
            let wr = &w[j * inputs..(j + 1) * inputs];
            let dwr = &mut dw64[j * inputs..(j + 1) * inputs];
            for i in 0..inputs {
                dwr[i] += g as f64 * xr[i] as f64;
                dxr[i] += g * wr[i];
            }
        }
    }
    for (d, s) in dw.iter_mut().zip(&dw64) {
        *d += *s as f32;
    }
    for (d, s) in db.iter_mut().zip(&db64) {
        *d += *s as f32;
    }
    dx
}

pub fn conv_forward(x: &[f32], w: &[f32], b: &[f32], batch: usize, g: &ConvGeometry) -> Vec<f32> {
    let (ip, op, k) = (g.in_plane(), g.out_plane(), g.kernel);
    let mut y = vec![0.0f32; batch * g.out_channels * op];
    for n in 0..batch {
        for o in 0..g.out_channels {
            let yp = &mut y[(n * g.out_channels + o) * op..][..op];
            yp.fill(b[o]);
            for c in 0..g.in_channels {
                let xp = &x[(n * g.in_channels + c) * ip..][..ip];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = w[((o * g.in_channels + c) * k + ky) * k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        g.for_each_tap_run(ky, kx, |o, i, len| axpy_run(yp, o, xp, i, len, g.stride, wv));
                    }
                }
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub fn conv_backward(
    x: &[f32],
    w: &[f32],
    dy: &[f32],
    dw: &mut [f32],
    db: &mut [f32],
    batch: usize,
    g: &ConvGeometry,
) -> Vec<f32> {
    let (ip, op, k) = (g.in_plane(), g.out_plane(), g.kernel);
    let mut dx = vec![0.0f32; x.len()];
    for n in 0..batch {
        for o in 0..g.out_channels {
            let dyp = &dy[(n * g.out_channels + o) * op..][..op];
            db[o] += dyp.iter().map(|&v| v as f64).sum::<f64>() as f32;
            for c in 0..g.in_channels {
                let xp = &x[(n * g.in_channels + c) * ip..][..ip];
                let dxp = &mut dx[(n * g.in_channels + c) * ip..][..ip];
                for ky in 0..k {
                    for kx in 0..k {
                        let wi = ((o * g.in_channels + c) * k + ky) * k + kx;
                        let wv = w[wi];
                        let mut acc = 0.0f64;
                        let s = g.stride;
                        g.for_each_tap_run(ky, kx, |o, i, len| {
                            for t in 0..len {
                                acc += dyp[o + t] as f64 * xp[i + t * s] as f64;
                            }
                            if wv != 0.0 {
                                for t in 0..len {
                                    dxp[i + t * s] += dyp[o + t] * wv;
                                }
                            }
                        });
                        dw[wi] += acc as f32;
                    }
                }
            }
        }
    }
    dx
}

/// Per-channel batch statistics over every axis but the channel axis.
pub struct NormBatch {
    pub mean: Vec<f64>,
    pub var: Vec<f32>,
}

pub const NORM_EPS: f32 = 1e-5;

pub fn channel_stats(x: &[f32], batch: usize, channels: usize, spatial: usize) -> NormBatch {
    let m = (batch * spatial) as f64;
    let mut mean = vec![0.0f64; channels];
    let mut var = vec![0.0f32; channels];
    for c in 0..channels {
        let mut s = 0.0f64;
        for n in 0..batch {
            s += x[(n * channels + c) * spatial..][..spatial].iter().map(|&v| v as f64).sum::<f64>();
        }
        let mu = s / m;
        let mut q = 0.0f64;
        for n in 0..batch {
            q += x[(n * channels + c) * spatial..][..spatial].iter().map(|&v| (v as f64 - mu).powi(2)).sum::<f64>();
        }
        mean[c] = mu;
        var[c] = (q / m) as f32;
    }
    NormBatch { mean, var }
}

/// Applies `y = gamma * (x - mean) / sqrt(var + eps) + beta` per channel and
/// returns `(y, xhat, inv_std)`.
#[allow(clippy::too_many_arguments)]
pub fn norm_apply(
    x: &[f32],
    mean: &[f32],
    var: &[f32],
    gamma: &[f32],
    beta: &[f32],
    batch: usize,
    channels: usize,
    spatial: usize,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let mean64: Vec<f64> = mean.iter().map(|&m| m as f64).collect();
    norm_apply_exact(x, &mean64, var, gamma, beta, batch, channels, spatial)
}

/// As [`norm_apply`] with the mean kept in f64, so that batch-normalized
/// values are centered to f32 precision.
#[allow(clippy::too_many_arguments)]
pub fn norm_apply_exact(
    x: &[f32],
    mean: &[f64],
    var: &[f32],
    gamma: &[f32],
    beta: &[f32],
    batch: usize,
    channels: usize,
    spatial: usize,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let inv_std: Vec<f32> = var.iter().map(|v| (1.0 / (*v as f64 + NORM_EPS as f64).sqrt()) as f32).collect();
    let mut y = vec![0.0f32; x.len()];
    let mut xhat = vec![0.0f32; x.len()];
    for n in 0..batch {
        for c in 0..channels {
            let off = (n * channels + c) * spatial;
            let (mu, is) = (mean[c], inv_std[c] as f64);
            for s in off..off + spatial {
                let h = ((x[s] as f64 - mu) * is) as f32;
                xhat[s] = h;
                y[s] = gamma[c] * h + beta[c];
            }
        }
    }
    (y, xhat, inv_std)
}

/// Backward of training-mode normalization.
#[allow(clippy::too_many_arguments)]
pub fn norm_backward(
    xhat: &[f32],
    inv_std: &[f32],
    gamma: &[f32],
    dy: &[f32],
    dgamma: &mut [f32],
    dbeta: &mut [f32],
    batch: usize,
    channels: usize,
    spatial: usize,
) -> Vec<f32> {
    let m = (batch * spatial) as f64;
    let mut dx = vec![0.0f32; dy.len()];
    for c in 0..channels {
        let mut sum_dy = 0.0f64;
        let mut sum_dy_xhat = 0.0f64;
        let mut sum_xhat = 0.0f64;
        for n in 0..batch {
            let off = (n * channels + c) * spatial;
            for s in off..off + spatial {
                sum_dy += dy[s] as f64;
                sum_dy_xhat += dy[s] as f64 * xhat[s] as f64;
                sum_xhat += xhat[s] as f64;
            }
        }
        // xhat has zero mean in exact arithmetic; removing the rounding
        // residue keeps the input gradient summing to zero per channel.
        let xhat_mean = sum_xhat / m;
        dgamma[c] += sum_dy_xhat as f32;
        dbeta[c] += sum_dy as f32;
        let scale = gamma[c] as f64 * inv_std[c] as f64 / m;
        for n in 0..batch {
            let off = (n * channels + c) * spatial;
            for s in off..off + spatial {
                let centered = xhat[s] as f64 - xhat_mean;
                dx[s] = (scale * (m * dy[s] as f64 - sum_dy - centered * sum_dy_xhat)) as f32;
            }
        }
    }
    dx
}

pub fn avgpool_forward(x: &[f32], planes: usize, h: usize, w: usize, k: usize) -> Vec<f32> {
    let (oh, ow) = (h / k, w / k);
    let scale = 1.0 / (k * k) as f32;
    let mut y = vec![0.0f32; planes * oh * ow];
    for p in 0..planes {
        let xp = &x[p * h * w..][..h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0f32;
                for dy in 0..k {
                    for dx in 0..k {
                        acc += xp[(oy * k + dy) * w + ox * k + dx];
                    }
                }
                y[(p * oh + oy) * ow + ox] = acc * scale;
            }
        }
    }
    y
}

pub fn avgpool_backward(dy: &[f32], planes: usize, h: usize, w: usize, k: usize) -> Vec<f32> {
    let (oh, ow) = (h / k, w / k);
    let scale = 1.0 / (k * k) as f32;
    let mut dx = vec![0.0f32; planes * h * w];
    for p in 0..planes {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = dy[(p * oh + oy) * ow + ox] * scale;
                for ddy in 0..k {
                    for ddx in 0..k {
                        dx[p * h * w + (oy * k + ddy) * w + ox * k + ddx] = g;
                    }
                }
            }
        }
    }
    dx
}
