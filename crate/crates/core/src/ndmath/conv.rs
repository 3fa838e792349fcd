//! Batched 2D convolution kernels (im2col + GEMM).
//!
//! Images are processed in fixed-size chunks. Chunk boundaries depend only on
//! the layer geometry, never on the thread count, and weight-gradient partials
//! are summed in chunk order, so serial and parallel runs agree bitwise.

use crate::error::{Error, Result};
use crate::ndmath::{Array, Scalar};
use crate::par;

/// Upper bound on im2col buffer elements per chunk.
const CHUNK_ELEMS: usize = 1 << 21;

/// Output extent of a convolution along one axis, if the geometry is valid.
pub fn conv_output_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || input + 2 * pad < kernel {
        return None;
    }
    Some((input + 2 * pad - kernel) / stride + 1)
}

/// Output extent of a transposed convolution along one axis.
pub fn conv_transpose_output_len(
    input: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    output_padding: usize,
) -> Option<usize> {
    ((input.checked_sub(1)?) * stride + kernel + output_padding).checked_sub(2 * pad)
}

/// The output padding that makes a transposed convolution map `conv_out`
/// back to `target`, the input extent of the forward convolution.
pub fn output_padding_for(
    target: usize,
    conv_out: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Option<usize> {
    let base = conv_transpose_output_len(conv_out, kernel, stride, pad, 0)?;
    let op = target.checked_sub(base)?;
    (op < stride).then_some(op)
}

/// Geometry of one convolution: source `c×h×w`, kernel `k`, output `ho×wo`.
#[derive(Clone, Copy, Debug)]
struct Spatial {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    p: usize,
    ho: usize,
    wo: usize,
}

impl Spatial {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Writes the patch matrix of `src` into columns `col0..col0 + ho*wo` of
    /// `dst` (row stride `ld`).
    fn im2col<T: Scalar>(&self, src: &[T], dst: &mut [T], ld: usize, col0: usize) {
        let Spatial {
            c,
            h,
            w,
            k,
            s,
            p,
            ho,
            wo,
        } = *self;
        for ch in 0..c {
            let plane = &src[ch * h * w..(ch + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ch * k + ki) * k + kj;
                    let out = &mut dst[row * ld + col0..row * ld + col0 + ho * wo];
                    for oy in 0..ho {
                        let iy = (oy * s + ki) as isize - p as isize;
                        let line = &mut out[oy * wo..(oy + 1) * wo];
                        if iy < 0 || iy >= h as isize {
                            line.fill(T::zero());
                            continue;
                        }
                        let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = (ox * s + kj) as isize - p as isize;
                            *v = if ix < 0 || ix >= w as isize {
                                T::zero()
                            } else {
                                src_row[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatters-adds patch columns back.
    fn col2im_add<T: Scalar>(&self, cols: &[T], ld: usize, col0: usize, dst: &mut [T]) {
        let Spatial {
            c,
            h,
            w,
            k,
            s,
            p,
            ho,
            wo,
        } = *self;
        for ch in 0..c {
            let plane = &mut dst[ch * h * w..(ch + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ch * k + ki) * k + kj;
                    let src = &cols[row * ld + col0..row * ld + col0 + ho * wo];
                    for oy in 0..ho {
                        let iy = (oy * s + ki) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..wo {
                            let ix = (ox * s + kj) as isize - p as isize;
                            if ix >= 0 && ix < w as isize {
                                dst_row[ix as usize] += src[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn images_per_chunk(per_image: usize) -> usize {
    (CHUNK_ELEMS / per_image.max(1)).max(1)
}

fn check_rank4<T: Scalar>(op: &'static str, a: &Array<T>) -> Result<[usize; 4]> {
    match *a.shape() {
        [b, c, h, w] => Ok([b, c, h, w]),
        _ => Err(Error::shape(op, format!("expected rank 4, got {:?}", a.shape()))),
    }
}

/// Validated layer description shared by forward and backward passes.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvPlan {
    batch: usize,
    c_in: usize,
    c_out: usize,
    /// Geometry of the im2col source (input for conv, output for transpose).
    spatial: Spatial,
}

impl ConvPlan {
    pub(crate) fn conv(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let (&[b, c_in, h, wd], &[c_out, wc, k, k2]) = (x, w) else {
            return Err(Error::shape("conv2d", format!("input {x:?}, kernels {w:?}")));
        };
        if wc != c_in || k != k2 {
            return Err(Error::shape(
                "conv2d",
                format!("input has {c_in} channels but kernels are {w:?}"),
            ));
        }
        let (Some(ho), Some(wo)) = (
            conv_output_len(h, k, stride, pad),
            conv_output_len(wd, k, stride, pad),
        ) else {
            return Err(Error::shape("conv2d", format!("{h}x{wd} too small for kernel {k}")));
        };
        Ok(Self {
            batch: b,
            c_in,
            c_out,
            spatial: Spatial {
                c: c_in,
                h,
                w: wd,
                k,
                s: stride,
                p: pad,
                ho,
                wo,
            },
        })
    }

    pub(crate) fn transpose(
        x: &[usize],
        w: &[usize],
        stride: usize,
        pad: usize,
        output_padding: usize,
    ) -> Result<Self> {
        let (&[b, c_in, h, wd], &[wc, c_out, k, k2]) = (x, w) else {
            return Err(Error::shape(
                "conv2d_transpose",
                format!("input {x:?}, kernels {w:?}"),
            ));
        };
        if wc != c_in || k != k2 {
            return Err(Error::shape(
                "conv2d_transpose",
                format!("input has {c_in} channels but kernels are {w:?}"),
            ));
        }
        if output_padding >= stride.max(1) {
            return Err(Error::shape(
                "conv2d_transpose",
                format!("output padding {output_padding} must be below stride {stride}"),
            ));
        }
        let (Some(hy), Some(wy)) = (
            conv_transpose_output_len(h, k, stride, pad, output_padding),
            conv_transpose_output_len(wd, k, stride, pad, output_padding),
        ) else {
            return Err(Error::shape("conv2d_transpose", "degenerate geometry"));
        };
        Ok(Self {
            batch: b,
            c_in,
            c_out,
            spatial: Spatial {
                c: c_out,
                h: hy,
                w: wy,
                k,
                s: stride,
                p: pad,
                ho: h,
                wo: wd,
            },
        })
    }

    pub(crate) fn conv_output_shape(&self) -> [usize; 4] {
        [self.batch, self.c_out, self.spatial.ho, self.spatial.wo]
    }

    pub(crate) fn transpose_output_shape(&self) -> [usize; 4] {
        [self.batch, self.c_out, self.spatial.h, self.spatial.w]
    }

    fn chunks(&self) -> (usize, usize) {
        let per = images_per_chunk(self.spatial.rows() * self.spatial.cols());
        (per, self.batch.div_ceil(per))
    }
}

/// Gathers `[B, C, P]` items `b0..b0+nb` into a `[C, nb*P]` matrix.
fn gather_channels<T: Scalar>(src: &[T], c: usize, p: usize, b0: usize, nb: usize) -> Vec<T> {
    let mut out = vec![T::zero(); c * nb * p];
    for img in 0..nb {
        let base = (b0 + img) * c * p;
        for ch in 0..c {
            out[ch * nb * p + img * p..ch * nb * p + (img + 1) * p]
                .copy_from_slice(&src[base + ch * p..base + (ch + 1) * p]);
        }
    }
    out
}

/// Inverse of [`gather_channels`] for a chunk slice that starts at item `b0`.
fn scatter_channels<T: Scalar>(m: &[T], c: usize, p: usize, nb: usize, dst: &mut [T]) {
    for img in 0..nb {
        for ch in 0..c {
            dst[img * c * p + ch * p..img * c * p + (ch + 1) * p]
                .copy_from_slice(&m[ch * nb * p + img * p..ch * nb * p + (img + 1) * p]);
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(
    plan: &ConvPlan,
    x: &Array<T>,
    w: &Array<T>,
    bias: &Array<T>,
) -> Array<T> {
    let sp = plan.spatial;
    let (kdim, p, c_out) = (sp.rows(), sp.cols(), plan.c_out);
    let in_per = sp.c * sp.h * sp.w;
    let (per_chunk, _) = plan.chunks();
    let mut y = Array::zeros(&plan.conv_output_shape());
    par::for_each_chunk_mut(y.data_mut(), per_chunk * c_out * p, |ci, out| {
        let b0 = ci * per_chunk;
        let nb = out.len() / (c_out * p);
        let ld = nb * p;
        let mut cols = vec![T::zero(); kdim * ld];
        for img in 0..nb {
            let src = &x.data()[(b0 + img) * in_per..(b0 + img + 1) * in_per];
            sp.im2col(src, &mut cols, ld, img * p);
        }
        let mut prod = vec![T::zero(); c_out * ld];
        T::gemm(
            c_out,
            kdim,
            ld,
            T::one(),
            w.data(),
            kdim,
            1,
            &cols,
            ld,
            1,
            T::zero(),
            &mut prod,
            ld,
            1,
        );
        scatter_channels(&prod, c_out, p, nb, out);
        for img in 0..nb {
            for ch in 0..c_out {
                let bv = bias.data()[ch];
                for v in &mut out[img * c_out * p + ch * p..img * c_out * p + (ch + 1) * p] {
                    *v += bv;
                }
            }
        }
    });
    y
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Array<T>>,
    pub dw: Array<T>,
    pub db: Array<T>,
}

struct ChunkGrads<T> {
    dx: Vec<T>,
    dw: Vec<T>,
    db: Vec<T>,
}

fn reduce_chunks<T: Scalar>(
    parts: Vec<ChunkGrads<T>>,
    x_shape: &[usize],
    w_shape: &[usize],
    need_dx: bool,
) -> ConvGrads<T> {
    let mut dw = Array::zeros(w_shape);
    let mut db = Array::zeros(&[parts.first().map_or(0, |p| p.db.len())]);
    let mut dx_data = Vec::new();
    for part in parts {
        for (a, b) in dw.data_mut().iter_mut().zip(&part.dw) {
            *a += *b;
        }
        for (a, b) in db.data_mut().iter_mut().zip(&part.db) {
            *a += *b;
        }
        if need_dx {
            dx_data.extend(part.dx);
        }
    }
    let dx = need_dx.then(|| Array::new(x_shape, dx_data).expect("chunks cover the batch"));
    ConvGrads { dx, dw, db }
}

pub(crate) fn conv2d_backward<T: Scalar>(
    plan: &ConvPlan,
    x: &Array<T>,
    w: &Array<T>,
    dy: &Array<T>,
    need_dx: bool,
) -> ConvGrads<T> {
    let sp = plan.spatial;
    let (kdim, p, c_out) = (sp.rows(), sp.cols(), plan.c_out);
    let in_per = sp.c * sp.h * sp.w;
    let (per_chunk, n_chunks) = plan.chunks();
    let parts = par::map_indexed(n_chunks, |ci| {
        let b0 = ci * per_chunk;
        let nb = per_chunk.min(plan.batch - b0);
        let ld = nb * p;
        let mut cols = vec![T::zero(); kdim * ld];
        for img in 0..nb {
            let src = &x.data()[(b0 + img) * in_per..(b0 + img + 1) * in_per];
            sp.im2col(src, &mut cols, ld, img * p);
        }
        let dyc = gather_channels(dy.data(), c_out, p, b0, nb);
        let mut dw = vec![T::zero(); c_out * kdim];
        // dW = dY · colsᵀ
        T::gemm(
            c_out,
            ld,
            kdim,
            T::one(),
            &dyc,
            ld,
            1,
            &cols,
            1,
            ld,
            T::zero(),
            &mut dw,
            kdim,
            1,
        );
        let db = (0..c_out)
            .map(|ch| dyc[ch * ld..(ch + 1) * ld].iter().copied().sum())
            .collect();
        let mut dx = Vec::new();
        if need_dx {
            // dcols = Wᵀ · dY, reusing the patch buffer.
            T::gemm(
                kdim,
                c_out,
                ld,
                T::one(),
                w.data(),
                1,
                kdim,
                &dyc,
                ld,
                1,
                T::zero(),
                &mut cols,
                ld,
                1,
            );
            dx = vec![T::zero(); nb * in_per];
            for img in 0..nb {
                sp.col2im_add(&cols, ld, img * p, &mut dx[img * in_per..(img + 1) * in_per]);
            }
        }
        ChunkGrads { dx, dw, db }
    });
    reduce_chunks(parts, x.shape(), w.shape(), need_dx)
}

pub(crate) fn conv_transpose2d_forward<T: Scalar>(
    plan: &ConvPlan,
    x: &Array<T>,
    w: &Array<T>,
    bias: &Array<T>,
) -> Array<T> {
    let sp = plan.spatial;
    // Patch rows live in output-channel space; columns index input pixels.
    let (kdim, p, c_in, c_out) = (sp.rows(), sp.cols(), plan.c_in, plan.c_out);
    let out_per = c_out * sp.h * sp.w;
    let (per_chunk, _) = plan.chunks();
    let mut y = Array::zeros(&plan.transpose_output_shape());
    par::for_each_chunk_mut(y.data_mut(), per_chunk * out_per, |ci, out| {
        let b0 = ci * per_chunk;
        let nb = out.len() / out_per;
        let ld = nb * p;
        let xc = gather_channels(x.data(), c_in, p, b0, nb);
        let mut cols = vec![T::zero(); kdim * ld];
        // cols = Wᵀ · X with W viewed as [c_in, kdim]
        T::gemm(
            kdim,
            c_in,
            ld,
            T::one(),
            w.data(),
            1,
            kdim,
            &xc,
            ld,
            1,
            T::zero(),
            &mut cols,
            ld,
            1,
        );
        for img in 0..nb {
            let dst = &mut out[img * out_per..(img + 1) * out_per];
            sp.col2im_add(&cols, ld, img * p, dst);
            let plane = sp.h * sp.w;
            for ch in 0..c_out {
                let bv = bias.data()[ch];
                for v in &mut dst[ch * plane..(ch + 1) * plane] {
                    *v += bv;
                }
            }
        }
    });
    y
}

pub(crate) fn conv_transpose2d_backward<T: Scalar>(
    plan: &ConvPlan,
    x: &Array<T>,
    w: &Array<T>,
    dy: &Array<T>,
    need_dx: bool,
) -> ConvGrads<T> {
    let sp = plan.spatial;
    let (kdim, p, c_in, c_out) = (sp.rows(), sp.cols(), plan.c_in, plan.c_out);
    let out_per = c_out * sp.h * sp.w;
    let plane = sp.h * sp.w;
    let (per_chunk, n_chunks) = plan.chunks();
    let parts = par::map_indexed(n_chunks, |ci| {
        let b0 = ci * per_chunk;
        let nb = per_chunk.min(plan.batch - b0);
        let ld = nb * p;
        let mut cols = vec![T::zero(); kdim * ld];
        for img in 0..nb {
            let src = &dy.data()[(b0 + img) * out_per..(b0 + img + 1) * out_per];
            sp.im2col(src, &mut cols, ld, img * p);
        }
        let xc = gather_channels(x.data(), c_in, p, b0, nb);
        let mut dw = vec![T::zero(); c_in * kdim];
        // dW = X · colsᵀ
        T::gemm(
            c_in,
            ld,
            kdim,
            T::one(),
            &xc,
            ld,
            1,
            &cols,
            1,
            ld,
            T::zero(),
            &mut dw,
            kdim,
            1,
        );
        let db = (0..c_out)
            .map(|ch| {
                (0..nb)
                    .map(|img| {
                        let base = (b0 + img) * out_per + ch * plane;
                        dy.data()[base..base + plane].iter().copied().sum::<T>()
                    })
                    .sum()
            })
            .collect();
        let mut dx = Vec::new();
        if need_dx {
            let mut m = vec![T::zero(); c_in * ld];
            T::gemm(
                c_in,
                kdim,
                ld,
                T::one(),
                w.data(),
                kdim,
                1,
                &cols,
                ld,
                1,
                T::zero(),
                &mut m,
                ld,
                1,
            );
            dx = vec![T::zero(); nb * c_in * p];
            scatter_channels(&m, c_in, p, nb, &mut dx);
        }
        ChunkGrads { dx, dw, db }
    });
    reduce_chunks(parts, x.shape(), w.shape(), need_dx)
}

/// Checks `[B, C, H, W]` rank for callers outside this module.
pub(crate) fn batch_dims<T: Scalar>(op: &'static str, a: &Array<T>) -> Result<[usize; 4]> {
    check_rank4(op, a)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution, independent of im2col.
    fn naive_conv(x: &Array<f64>, w: &Array<f64>, b: &Array<f64>, s: usize, p: usize) -> Array<f64> {
        let [bn, ci, h, wd] = check_rank4("t", x).unwrap();
        let [co, _, k, _] = check_rank4("t", w).unwrap();
        let ho = conv_output_len(h, k, s, p).unwrap();
        let wo = conv_output_len(wd, k, s, p).unwrap();
        let mut y = Array::zeros(&[bn, co, ho, wo]);
        for n in 0..bn {
            for o in 0..co {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b.data()[o];
                        for c in 0..ci {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let iy = (oy * s + ki) as isize - p as isize;
                                    let ix = (ox * s + kj) as isize - p as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        acc += x.data()[((n * ci + c) * h + iy as usize) * wd + ix as usize]
                                            * w.data()[((o * ci + c) * k + ki) * k + kj];
                                    }
                                }
                            }
                        }
                        y.data_mut()[((n * co + o) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        y
    }

    fn ramp(shape: &[usize], scale: f64) -> Array<f64> {
        let n: usize = shape.iter().product();
        let v: Vec<f64> = (0..n).map(|i| ((i * 7919) % 101) as f64 * scale - 0.5).collect();
        Array::from_f64(shape, &v).unwrap()
    }

    #[test]
    fn im2col_conv_matches_nested_loops() {
        let x = ramp(&[3, 2, 7, 6], 0.01);
        let w = ramp(&[4, 2, 3, 3], 0.013);
        let b = ramp(&[4], 0.1);
        let plan = ConvPlan::conv(x.shape(), w.shape(), 2, 1).unwrap();
        let y = conv2d_forward(&plan, &x, &w, &b);
        assert_eq!(y.shape(), &[3, 4, 4, 3]);
        assert!(y.max_abs_diff(&naive_conv(&x, &w, &b, 2, 1)) < 1e-12);
    }

    #[test]
    fn transpose_is_adjoint_of_conv() {
        // <conv(x), y> == <x, convT(y)> for zero biases and op chosen to fit.
        let x = ramp(&[2, 3, 7, 7], 0.01);
        let w = ramp(&[5, 3, 3, 3], 0.017);
        let zero_c = Array::zeros(&[5]);
        let plan = ConvPlan::conv(x.shape(), w.shape(), 2, 1).unwrap();
        let cx = conv2d_forward(&plan, &x, &w, &zero_c);
        let y = ramp(cx.shape(), 0.003);
        // conv weights [co, ci, k, k] double as transpose weights [cin=co, cout=ci, k, k].
        let op = output_padding_for(7, 4, 3, 2, 1).unwrap();
        let tplan = ConvPlan::transpose(y.shape(), w.shape(), 2, 1, op).unwrap();
        let ty = conv_transpose2d_forward(&tplan, &y, &w, &Array::zeros(&[3]));
        assert_eq!(ty.shape(), x.shape());
        let lhs: f64 = cx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(ty.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn output_padding_inverts_stride_two_shapes() {
        for h in [28usize, 14, 7, 4, 50, 25, 13, 80, 40, 20, 10, 112, 56] {
            let o = conv_output_len(h, 3, 2, 1).unwrap();
            assert_eq!(o, h.div_ceil(2));
            let op = output_padding_for(h, o, 3, 2, 1).unwrap();
            assert_eq!(conv_transpose_output_len(o, 3, 2, 1, op), Some(h));
        }
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        assert!(ConvPlan::conv(&[1, 2, 8, 8], &[4, 3, 3, 3], 2, 1).is_err());
        assert!(ConvPlan::transpose(&[1, 2, 8, 8], &[3, 1, 3, 3], 2, 1, 1).is_err());
    }
}
