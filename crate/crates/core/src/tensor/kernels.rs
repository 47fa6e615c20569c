//! Loop kernels behind the tape operations.
//!
//! All kernels work on flat row-major slices. Convolutions use
//! cross-correlation (no kernel flip); the transposed convolution is the
//! exact adjoint of [`conv2d`] for the same stride and padding.

/// `a` is `m×k`, `b` is `k×n`; returns `m×n`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for t in 0..k {
            let av = a[i * k + t];
            if av == 0.0 {
                continue;
            }
            let b_row = &b[t * n..(t + 1) * n];
            for (cv, bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// `aᵀ·b` where `a` is `m×k` and `b` is `m×n`; returns `k×n`.
pub fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for i in 0..m {
        let b_row = &b[i * n..(i + 1) * n];
        for t in 0..k {
            let av = a[i * k + t];
            if av == 0.0 {
                continue;
            }
            let c_row = &mut c[t * n..(t + 1) * n];
            for (cv, bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// `a·bᵀ` where `a` is `m×k` and `b` is `n×k`; returns `m×n`.
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] = dot(a_row, &b[j * k..(j + 1) * k]);
        }
    }
    c
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Geometry shared by a convolution and its transpose.
///
/// `small_*` is the conv2d output grid (the transposed convolution's input),
/// `big_*` is the conv2d input grid (the transposed convolution's output).
/// A kernel tap `(ki, kj)` links `small (y, x)` with
/// `big (y·stride + ki − padding, x·stride + kj − padding)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub big_channels: usize,
    pub big_h: usize,
    pub big_w: usize,
    pub small_channels: usize,
    pub small_h: usize,
    pub small_w: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub stride: usize,
    pub padding: usize,
}

/// Range of small indices whose tap `k_off` lands inside `[0, big)`.
#[inline]
fn tap_range(k_off: usize, padding: usize, stride: usize, big: usize, small: usize) -> (usize, usize) {
    let lo = if k_off >= padding {
        0
    } else {
        (padding - k_off).div_ceil(stride)
    };
    let reach = big + padding;
    if reach <= k_off {
        return (0, 0);
    }
    let hi = ((reach - 1 - k_off) / stride + 1).min(small);
    (lo.min(hi), hi)
}

impl ConvGeometry {
    /// Visits every linked `(small_offset, big_offset)` row segment for each
    /// `(big_channel, small_channel, ki, kj)` tap. The callback receives the
    /// flat kernel-independent tap description.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize, usize, usize, usize, usize, usize)) {
        let s = self.stride;
        for ki in 0..self.k_h {
            let (y_lo, y_hi) = tap_range(ki, self.padding, s, self.big_h, self.small_h);
            for kj in 0..self.k_w {
                let (x_lo, x_hi) = tap_range(kj, self.padding, s, self.big_w, self.small_w);
                if x_lo >= x_hi {
                    continue;
                }
                for y in y_lo..y_hi {
                    let by = y * s + ki - self.padding;
                    let bx0 = x_lo * s + kj - self.padding;
                    f(ki, kj, y, by, x_lo, x_hi, bx0, s);
                }
            }
        }
    }
}

/// Output extent of a convolution along one axis, or `None` when the kernel
/// does not fit the padded input.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if padded < kernel || stride == 0 {
        None
    } else {
        Some((padded - kernel) / stride + 1)
    }
}

/// Output extent of a transposed convolution along one axis.
pub fn conv_transpose_out_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Option<usize> {
    let full = (input - 1) * stride + kernel + output_padding;
    full.checked_sub(2 * padding).filter(|&n| n > 0)
}

/// conv2d forward. `kernel` is `small_channels × big_channels × k_h × k_w`.
pub fn conv2d(input: &[f64], kernel: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let (bh, bw, sh, sw) = (g.big_h, g.big_w, g.small_h, g.small_w);
    let kk = g.k_h * g.k_w;
    let mut out = vec![0.0; g.small_channels * sh * sw];
    for co in 0..g.small_channels {
        for ci in 0..g.big_channels {
            let kbase = (co * g.big_channels + ci) * kk;
            let ibase = ci * bh * bw;
            let obase = co * sh * sw;
            g.for_each_tap(|ki, kj, y, by, x_lo, x_hi, bx0, s| {
                let w = kernel[kbase + ki * g.k_w + kj];
                let orow = &mut out[obase + y * sw..obase + (y + 1) * sw];
                let irow = &input[ibase + by * bw..ibase + (by + 1) * bw];
                for (n, x) in (x_lo..x_hi).enumerate() {
                    orow[x] += w * irow[bx0 + n * s];
                }
            });
        }
    }
    out
}

/// Gradients of conv2d with respect to its input and kernel.
pub fn conv2d_backward(
    input: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
    g: &ConvGeometry,
    grad_input: Option<&mut [f64]>,
    grad_kernel: Option<&mut [f64]>,
) {
    let (bh, bw, sh, sw) = (g.big_h, g.big_w, g.small_h, g.small_w);
    let kk = g.k_h * g.k_w;
    if let Some(gi) = grad_input {
        for co in 0..g.small_channels {
            for ci in 0..g.big_channels {
                let kbase = (co * g.big_channels + ci) * kk;
                let ibase = ci * bh * bw;
                let obase = co * sh * sw;
                g.for_each_tap(|ki, kj, y, by, x_lo, x_hi, bx0, s| {
                    let w = kernel[kbase + ki * g.k_w + kj];
                    let orow = &grad_out[obase + y * sw..obase + (y + 1) * sw];
                    let irow = &mut gi[ibase + by * bw..ibase + (by + 1) * bw];
                    for (n, x) in (x_lo..x_hi).enumerate() {
                        irow[bx0 + n * s] += w * orow[x];
                    }
                });
            }
        }
    }
    if let Some(gk) = grad_kernel {
        for co in 0..g.small_channels {
            for ci in 0..g.big_channels {
                let kbase = (co * g.big_channels + ci) * kk;
                let ibase = ci * bh * bw;
                let obase = co * sh * sw;
                g.for_each_tap(|ki, kj, y, by, x_lo, x_hi, bx0, s| {
                    let orow = &grad_out[obase + y * sw..obase + (y + 1) * sw];
                    let irow = &input[ibase + by * bw..ibase + (by + 1) * bw];
                    let mut acc = 0.0;
                    for (n, x) in (x_lo..x_hi).enumerate() {
                        acc += orow[x] * irow[bx0 + n * s];
                    }
                    gk[kbase + ki * g.k_w + kj] += acc;
                });
            }
        }
    }
}

/// Transposed convolution forward. `input` lives on the small grid,
/// `kernel` is `small_channels × big_channels × k_h × k_w`, output on the big
/// grid.
pub fn conv_transpose2d(input: &[f64], kernel: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let (bh, bw, sh, sw) = (g.big_h, g.big_w, g.small_h, g.small_w);
    let kk = g.k_h * g.k_w;
    let mut out = vec![0.0; g.big_channels * bh * bw];
    for ci in 0..g.small_channels {
        for co in 0..g.big_channels {
            let kbase = (ci * g.big_channels + co) * kk;
            let ibase = ci * sh * sw;
            let obase = co * bh * bw;
            g.for_each_tap(|ki, kj, y, by, x_lo, x_hi, bx0, s| {
                let w = kernel[kbase + ki * g.k_w + kj];
                let irow = &input[ibase + y * sw..ibase + (y + 1) * sw];
                let orow = &mut out[obase + by * bw..obase + (by + 1) * bw];
                for (n, x) in (x_lo..x_hi).enumerate() {
                    orow[bx0 + n * s] += w * irow[x];
                }
            });
        }
    }
    out
}

/// Gradients of the transposed convolution.
pub fn conv_transpose2d_backward(
    input: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
    g: &ConvGeometry,
    grad_input: Option<&mut [f64]>,
    grad_kernel: Option<&mut [f64]>,
) {
    let (bh, bw, sh, sw) = (g.big_h, g.big_w, g.small_h, g.small_w);
    let kk = g.k_h * g.k_w;
    if let Some(gi) = grad_input {
        for ci in 0..g.small_channels {
            for co in 0..g.big_channels {
                let kbase = (ci * g.big_channels + co) * kk;
                let ibase = ci * sh * sw;
                let obase = co * bh * bw;
                g.for_each_tap(|ki, kj, y, by, x_lo, x_hi, bx0, s| {
                    let w = kernel[kbase + ki * g.k_w + kj];
                    let orow = &grad_out[obase + by * bw..obase + (by + 1) * bw];
                    let irow = &mut gi[ibase + y * sw..ibase + (y + 1) * sw];
                    for (n, x) in (x_lo..x_hi).enumerate() {
                        irow[x] += w * orow[bx0 + n * s];
                    }
                });
            }
        }
    }
    if let Some(gk) = grad_kernel {
        for ci in 0..g.small_channels {
            for co in 0..g.big_channels {
                let kbase = (ci * g.big_channels + co) * kk;
                let ibase = ci * sh * sw;
                let obase = co * bh * bw;
                g.for_each_tap(|ki, kj, y, by, x_lo, x_hi, bx0, s| {
                    let orow = &grad_out[obase + by * bw..obase + (by + 1) * bw];
                    let irow = &input[ibase + y * sw..ibase + (y + 1) * sw];
                    let mut acc = 0.0;
                    for (n, x) in (x_lo..x_hi).enumerate() {
                        acc += irow[x] * orow[bx0 + n * s];
                    }
                    gk[kbase + ki * g.k_w + kj] += acc;
                });
            }
        }
    }
}
