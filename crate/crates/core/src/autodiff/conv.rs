//! im2col convolution kernels backed by a blocked GEMM.

use crate::error::TensorError;

/// Stride, dilation and zero-padding of a square-kernel convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl ConvSpec {
    /// Stride-1 convolution whose padding preserves spatial extents for an odd kernel.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        Self {
            stride: 1,
            dilation,
            padding: dilation * (kernel - 1) / 2,
        }
    }

    pub fn strided(stride: usize, padding: usize) -> Self {
        Self {
            stride,
            dilation: 1,
            padding,
        }
    }
}

impl Default for ConvSpec {
    fn default() -> Self {
        Self::same(1, 1)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub spec: ConvSpec,
    pub hout: usize,
    pub wout: usize,
}

impl ConvGeom {
    pub fn new(x: &[usize], w: &[usize], b: &[usize], spec: ConvSpec) -> Result<Self, TensorError> {
        let (cin, h, wd) = match *x {
            [c, h, w] => (c, h, w),
            _ => {
                return Err(TensorError::Rank {
                    op: "conv2d input",
                    expected: 3,
                    shape: x.to_vec(),
                })
            }
        };
        let (cout, wcin, k) = match *w {
            [o, i, kh, kw] if kh == kw => (o, i, kh),
            _ => {
                return Err(TensorError::InvalidArgument {
                    op: "conv2d",
                    reason: format!("filter must be [Cout, Cin, k, k], got {w:?}"),
                })
            }
        };
        if wcin != cin {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d (input channels vs filter Cin)",
                lhs: x.to_vec(),
                rhs: w.to_vec(),
            });
        }
        if b != [cout] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d (bias vs filter Cout)",
                lhs: b.to_vec(),
                rhs: w.to_vec(),
            });
        }
        if spec.stride == 0 || spec.dilation == 0 || k == 0 {
            return Err(TensorError::InvalidArgument {
                op: "conv2d",
                reason: "stride, dilation and kernel must be positive".into(),
            });
        }
        let span = spec.dilation * (k - 1) + 1;
        let out_extent = |n: usize| -> Option<usize> {
            let padded = n + 2 * spec.padding;
            (padded >= span).then(|| (padded - span) / spec.stride + 1)
        };
        let (hout, wout) = match (out_extent(h), out_extent(wd)) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(TensorError::InvalidArgument {
                    op: "conv2d",
                    reason: format!("kernel span {span} exceeds padded input {x:?}"),
                })
            }
        };
        Ok(Self {
            cin,
            h,
            w: wd,
            cout,
            k,
            spec,
            hout,
            wout,
        })
    }

    pub fn is_pointwise(&self) -> bool {
        self.k == 1 && self.spec.stride == 1 && self.spec.padding == 0
    }

    pub fn patch_len(&self) -> usize {
        self.cin * self.k * self.k
    }

    pub fn out_len(&self) -> usize {
        self.hout * self.wout
    }
}

/// Unfolds `x` into a `(cin*k*k) x (hout*wout)` column matrix.
pub(crate) fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let n_out = g.out_len();
    let mut cols = vec![0.0; g.patch_len() * n_out];
    let ConvSpec {
        stride,
        dilation,
        padding,
    } = g.spec;
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * n_out..(row + 1) * n_out];
                for oy in 0..g.hout {
                    let iy = (oy * stride + ki * dilation) as isize - padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let out_row = &mut dst[oy * g.wout..(oy + 1) * g.wout];
                    for (ox, slot) in out_row.iter_mut().enumerate() {
                        let ix = (ox * stride + kj * dilation) as isize - padding as isize;
                        if ix >= 0 && ix < g.w as isize {
                            *slot = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Folds a column matrix back onto the input grid, accumulating into `dx`.
pub(crate) fn col2im_add(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let n_out = g.out_len();
    let ConvSpec {
        stride,
        dilation,
        padding,
    } = g.spec;
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * n_out..(row + 1) * n_out];
                for oy in 0..g.hout {
                    let iy = (oy * stride + ki * dilation) as isize - padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wout {
                        let ix = (ox * stride + kj * dilation) as isize - padding as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.wout + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `c = alpha * a * b + beta * c` over row-major slices with explicit strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers size every operand for the given extents and strides;
    // the debug assertion above and the call sites' shape checks uphold it.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn forward(x: &[f64], w: &[f64], b: &[f64], g: &ConvGeom) -> Vec<f64> {
    let n_out = g.out_len();
    let p = g.patch_len();
    let mut out = vec![0.0; g.cout * n_out];
    for (o, chunk) in out.chunks_mut(n_out).enumerate() {
        chunk.fill(b[o]);
    }
    if g.is_pointwise() {
        gemm(g.cout, p, n_out, w, (p as isize, 1), x, (n_out as isize, 1), 1.0, &mut out);
    } else {
        let cols = im2col(x, g);
        gemm(g.cout, p, n_out, w, (p as isize, 1), &cols, (n_out as isize, 1), 1.0, &mut out);
    }
    out
}

pub(crate) fn backward_bias(dy: &[f64], g: &ConvGeom, db: &mut [f64]) {
    for (o, chunk) in dy.chunks(g.out_len()).enumerate() {
        db[o] += chunk.iter().sum::<f64>();
    }
}

pub(crate) fn backward_weight(x: &[f64], dy: &[f64], g: &ConvGeom, dw: &mut [f64]) {
    let n_out = g.out_len();
    let p = g.patch_len();
    let owned;
    let cols: &[f64] = if g.is_pointwise() {
        x
    } else {
        owned = im2col(x, g);
        &owned
    };
    // dW = dY * cols^T
    gemm(g.cout, n_out, p, dy, (n_out as isize, 1), cols, (1, n_out as isize), 1.0, dw);
}

pub(crate) fn backward_input(w: &[f64], dy: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let n_out = g.out_len();
    let p = g.patch_len();
    // dcols = W^T * dY
    if g.is_pointwise() {
        gemm(p, g.cout, n_out, w, (1, p as isize), dy, (n_out as isize, 1), 1.0, dx);
    } else {
        let mut dcols = vec![0.0; p * n_out];
        gemm(p, g.cout, n_out, w, (1, p as isize), dy, (n_out as isize, 1), 0.0, &mut dcols);
        col2im_add(&dcols, g, dx);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop cross-correlation, used as an independent reference.
    fn naive(x: &[f64], w: &[f64], b: &[f64], g: &ConvGeom) -> Vec<f64> {
        let mut out = vec![0.0; g.cout * g.out_len()];
        for o in 0..g.cout {
            for oy in 0..g.hout {
                for ox in 0..g.wout {
                    let mut acc = b[o];
                    for c in 0..g.cin {
                        for ki in 0..g.k {
                            for kj in 0..g.k {
                                let iy = (oy * g.spec.stride + ki * g.spec.dilation) as isize
                                    - g.spec.padding as isize;
                                let ix = (ox * g.spec.stride + kj * g.spec.dilation) as isize
                                    - g.spec.padding as isize;
                                if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                    continue;
                                }
                                acc += w[((o * g.cin + c) * g.k + ki) * g.k + kj]
                                    * x[(c * g.h + iy as usize) * g.w + ix as usize];
                            }
                        }
                    }
                    out[(o * g.hout + oy) * g.wout + ox] = acc;
                }
            }
        }
        out
    }

    fn pseudo(n: usize, salt: u64) -> Vec<f64> {
        (0..n)
            .map(|i| {
                let v = (i as u64).wrapping_mul(2654435761).wrapping_add(salt * 97) % 1000;
                v as f64 / 500.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn gemm_path_matches_direct_loops() {
        for &(cin, cout, h, w, k, spec) in &[
            (2, 3, 5, 6, 3, ConvSpec::same(3, 1)),
            (3, 2, 7, 7, 3, ConvSpec::same(3, 2)),
            (2, 2, 8, 8, 3, ConvSpec::strided(2, 1)),
            (4, 1, 4, 5, 1, ConvSpec::same(1, 1)),
            (1, 2, 9, 9, 3, ConvSpec::same(3, 4)),
        ] {
            let g = ConvGeom::new(&[cin, h, w], &[cout, cin, k, k], &[cout], spec).unwrap();
            let x = pseudo(cin * h * w, 1);
            let wt = pseudo(cout * cin * k * k, 2);
            let b = pseudo(cout, 3);
            let fast = forward(&x, &wt, &b, &g);
            let slow = naive(&x, &wt, &b, &g);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn strided_output_extent() {
        let g = ConvGeom::new(&[4, 56, 56], &[8, 4, 3, 3], &[8], ConvSpec::strided(2, 1)).unwrap();
        assert_eq!((g.hout, g.wout), (28, 28));
    }

    #[test]
    fn channel_mismatch_names_both_shapes() {
        let err = ConvGeom::new(&[3, 4, 4], &[2, 5, 3, 3], &[2], ConvSpec::same(3, 1)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[3, 4, 4]") && msg.contains("[2, 5, 3, 3]"), "{msg}");
    }
}
