//! Convolution kernels: general 2-D convolution lowered to im2col + GEMM,
//! the 2x2/stride-2 transposed convolution, and 3x3 depthwise convolution.
//!
//! The convention is cross-correlation (no kernel flip). Lowered buffers are
//! processed in bounded row chunks so full-resolution inputs do not blow up
//! memory. Parallelism is over batch items writing disjoint output slices,
//! which keeps results bitwise independent of thread count.

use rayon::prelude::*;

use crate::error::{Result, UdetError};
use crate::parallel;
use crate::scalar::Scalar;
use crate::tape::{Rule, Tape, VarId};
use crate::tensor::{Shape4, Tensor4};

use super::{Conv2DSpec, ConvGeom};

/// Cap on lowered-buffer elements per chunk (~16 MB in f32).
const MAX_COL_ELEMS: usize = 1 << 22;

fn chunk_rows(k: usize, ow: usize, oh: usize) -> usize {
    (MAX_COL_ELEMS / (k * ow).max(1)).clamp(1, oh)
}

/// Weights per transposed 2x2 layer: 4*in*out + out biases.
pub fn convt2x2_param_count(in_c: usize, out_c: usize) -> usize {
    4 * in_c * out_c + out_c
}

/// Weights per 3x3 depthwise layer (bias-free): 9 per channel.
pub fn depthwise3x3_param_count(channels: usize) -> usize {
    9 * channels
}

/// Fill `col` (k x p, p = (r1-r0)*ow) with input patches for output rows
/// [r0, r1). Out-of-bounds taps are zero.
fn im2col_chunk<E: Scalar>(
    x_item: &[E],
    h: usize,
    w: usize,
    g: &ConvGeom,
    r0: usize,
    r1: usize,
    col: &mut [E],
) {
    let plane = h * w;
    let p = (r1 - r0) * g.ow;
    let mut krow = 0usize;
    for ci in 0..g.in_c {
        let xc = &x_item[ci * plane..(ci + 1) * plane];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let dst_row = &mut col[krow * p..(krow + 1) * p];
                for oy in r0..r1 {
                    let iy = (oy * g.stride + ky) as isize - g.pad_h as isize;
                    let dst = &mut dst_row[(oy - r0) * g.ow..(oy - r0 + 1) * g.ow];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(E::zero());
                        continue;
                    }
                    let row = &xc[iy as usize * w..(iy as usize + 1) * w];
                    if g.stride == 1 {
                        // contiguous copy of the in-bounds span, zeros elsewhere
                        let shift = kx as isize - g.pad_w as isize;
                        let len = dst.len();
                        let ox_lo = ((-shift).max(0) as usize).min(len);
                        let ox_hi = (((w as isize - shift).min(g.ow as isize)).max(0) as usize)
                            .clamp(ox_lo, len);
                        dst[..ox_lo].fill(E::zero());
                        if ox_hi > ox_lo {
                            let src_lo = (ox_lo as isize + shift) as usize;
                            dst[ox_lo..ox_hi]
                                .copy_from_slice(&row[src_lo..src_lo + (ox_hi - ox_lo)]);
                        }
                        dst[ox_hi..].fill(E::zero());
                    } else {
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad_w as isize;
                            *d = if ix >= 0 && ix < w as isize {
                                row[ix as usize]
                            } else {
                                E::zero()
                            };
                        }
                    }
                }
                krow += 1;
            }
        }
    }
}

/// Scatter-add `dcol` (k x p) back onto the input gradient.
fn col2im_chunk_add<E: Scalar>(
    dcol: &[E],
    h: usize,
    w: usize,
    g: &ConvGeom,
    r0: usize,
    r1: usize,
    dx_item: &mut [E],
) {
    let plane = h * w;
    let p = (r1 - r0) * g.ow;
    let mut krow = 0usize;
    for ci in 0..g.in_c {
        let dxc = &mut dx_item[ci * plane..(ci + 1) * plane];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let src_row = &dcol[krow * p..(krow + 1) * p];
                for oy in r0..r1 {
                    let iy = (oy * g.stride + ky) as isize - g.pad_h as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &src_row[(oy - r0) * g.ow..(oy - r0 + 1) * g.ow];
                    for (ox, &v) in src.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad_w as isize;
                        if ix >= 0 && ix < w as isize {
                            let at = iy as usize * w + ix as usize;
                            dxc[at] = dxc[at] + v;
                        }
                    }
                }
                krow += 1;
            }
        }
    }
}

pub(crate) fn conv2d_forward<E: Scalar>(
    x: &Tensor4<E>,
    w: &Tensor4<E>,
    bias: Option<&Tensor4<E>>,
    g: &ConvGeom,
) -> Tensor4<E> {
    let xs = x.shape();
    let k = g.in_c * g.kh * g.kw;
    let out_shape = Shape4::new(xs.n, g.out_c, g.oh, g.ow);
    let out_plane = g.oh * g.ow;
    let out_per = out_shape.per_item();
    let in_per = xs.per_item();
    let mut out = vec![E::zero(); out_shape.numel()];
    let wd = w.data();
    let is_1x1 = g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad_h == 0 && g.pad_w == 0;

    parallel::scoped(|| {
        out.par_chunks_mut(out_per).zip(x.data().par_chunks(in_per)).for_each(
            |(o_item, x_item)| {
                if is_1x1 {
                    E::gemm(
                        g.out_c, k, out_plane,
                        E::one(), wd, k, 1,
                        x_item, out_plane, 1,
                        E::zero(), o_item, out_plane, 1,
                    );
                } else {
                    let rows = chunk_rows(k, g.ow, g.oh);
                    let mut col = vec![E::zero(); k * rows * g.ow];
                    let mut r0 = 0;
                    while r0 < g.oh {
                        let r1 = (r0 + rows).min(g.oh);
                        let p = (r1 - r0) * g.ow;
                        im2col_chunk(x_item, xs.h, xs.w, g, r0, r1, &mut col[..k * p]);
                        E::gemm(
                            g.out_c, k, p,
                            E::one(), wd, k, 1,
                            &col[..k * p], p, 1,
                            E::zero(), &mut o_item[r0 * g.ow..], out_plane, 1,
                        );
                        r0 = r1;
                    }
                }
                if let Some(b) = bias {
                    let bd = b.data();
                    for co in 0..g.out_c {
                        let bv = bd[co];
                        for v in &mut o_item[co * out_plane..(co + 1) * out_plane] {
                            *v = *v + bv;
                        }
                    }
                }
            },
        );
    });
    Tensor4::new(out_shape, out).expect("conv output shape")
}

#[allow(clippy::type_complexity)]
pub(crate) fn conv2d_backward<E: Scalar>(
    x: &Tensor4<E>,
    w: &Tensor4<E>,
    g: &ConvGeom,
    gy: &[E],
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> (Option<Vec<E>>, Option<Vec<E>>, Option<Vec<E>>) {
    let xs = x.shape();
    let k = g.in_c * g.kh * g.kw;
    let out_plane = g.oh * g.ow;
    let out_per = g.out_c * out_plane;
    let in_per = xs.per_item();
    let wd = w.data();
    let is_1x1 = g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad_h == 0 && g.pad_w == 0;

    let mut dx = if need_dx { vec![E::zero(); x.numel()] } else { Vec::new() };
    let mut dx_items: Vec<&mut [E]> = if need_dx {
        dx.chunks_mut(in_per).collect()
    } else {
        (0..xs.n).map(|_| <&mut [E]>::default()).collect()
    };

    let partials: Vec<(Vec<E>, Vec<E>)> = parallel::scoped(|| {
        x.data()
            .par_chunks(in_per)
            .zip(gy.par_chunks(out_per))
            .zip(dx_items.par_iter_mut())
            .map(|((x_item, gy_item), dx_item)| {
                let mut dw_p = if need_dw { vec![E::zero(); wd.len()] } else { Vec::new() };
                let mut db_p = if need_db { vec![E::zero(); g.out_c] } else { Vec::new() };
                if need_db {
                    for co in 0..g.out_c {
                        let s: E =
                            gy_item[co * out_plane..(co + 1) * out_plane].iter().copied().sum();
                        db_p[co] = s;
                    }
                }
                if is_1x1 {
                    if need_dw {
                        // dW(cout x cin) += dY(cout x P) * X^T(P x cin)
                        E::gemm(
                            g.out_c, out_plane, k,
                            E::one(), gy_item, out_plane, 1,
                            x_item, 1, out_plane,
                            E::one(), &mut dw_p, k, 1,
                        );
                    }
                    if need_dx {
                        // dX(cin x P) = W^T(cin x cout) * dY(cout x P)
                        E::gemm(
                            k, g.out_c, out_plane,
                            E::one(), wd, 1, k,
                            gy_item, out_plane, 1,
                            E::zero(), dx_item, out_plane, 1,
                        );
                    }
                } else {
                    let rows = chunk_rows(k, g.ow, g.oh);
                    let mut col = vec![E::zero(); k * rows * g.ow];
                    let mut dcol = if need_dx { vec![E::zero(); k * rows * g.ow] } else { Vec::new() };
                    let mut r0 = 0;
                    while r0 < g.oh {
                        let r1 = (r0 + rows).min(g.oh);
                        let p = (r1 - r0) * g.ow;
                        if need_dw {
                            im2col_chunk(x_item, xs.h, xs.w, g, r0, r1, &mut col[..k * p]);
                            // dW(cout x K) += dY_chunk(cout x P) * col^T(P x K)
                            E::gemm(
                                g.out_c, p, k,
                                E::one(), &gy_item[r0 * g.ow..], out_plane, 1,
                                &col[..k * p], 1, p,
                                E::one(), &mut dw_p, k, 1,
                            );
                        }
                        if need_dx {
                            // dcol(K x P) = W^T(K x cout) * dY_chunk(cout x P)
                            E::gemm(
                                k, g.out_c, p,
                                E::one(), wd, 1, k,
                                &gy_item[r0 * g.ow..], out_plane, 1,
                                E::zero(), &mut dcol[..k * p], p, 1,
                            );
                            col2im_chunk_add(&dcol[..k * p], xs.h, xs.w, g, r0, r1, dx_item);
                        }
                        r0 = r1;
                    }
                }
                (dw_p, db_p)
            })
            .collect()
    });

    let dw = need_dw.then(|| {
        let mut acc = vec![E::zero(); wd.len()];
        for (dw_p, _) in &partials {
            for (a, &d) in acc.iter_mut().zip(dw_p) {
                *a = *a + d;
            }
        }
        acc
    });
    let db = need_db.then(|| {
        let mut acc = vec![E::zero(); g.out_c];
        for (_, db_p) in &partials {
            for (a, &d) in acc.iter_mut().zip(db_p) {
                *a = *a + d;
            }
        }
        acc
    });
    (need_dx.then_some(dx), dw, db)
}

/// Transposed convolution, kernel 2x2, stride 2: doubles (h, w). Weight
/// layout is (in_c, out_c, 2, 2); each output pixel receives exactly one tap.
pub(crate) fn convt2x2_forward<E: Scalar>(
    x: &Tensor4<E>,
    w: &Tensor4<E>,
    bias: Option<&Tensor4<E>>,
) -> Tensor4<E> {
    let xs = x.shape();
    let (in_c, out_c) = (w.shape().n, w.shape().c);
    let plane = xs.plane();
    let out_shape = Shape4::new(xs.n, out_c, 2 * xs.h, 2 * xs.w);
    let out_per = out_shape.per_item();
    let mut out = vec![E::zero(); out_shape.numel()];
    let wd = w.data();
    let m = out_c * 4;

    parallel::scoped(|| {
        out.par_chunks_mut(out_per).zip(x.data().par_chunks(xs.per_item())).for_each(
            |(o_item, x_item)| {
                // tmp[(co*4 + a*2 + b), p] = sum_ci w[ci, co, a, b] * x[ci, p]
                let mut tmp = vec![E::zero(); m * plane];
                E::gemm(
                    m, in_c, plane,
                    E::one(), wd, 1, m,
                    x_item, plane, 1,
                    E::zero(), &mut tmp, plane, 1,
                );
                let (oh2, ow2) = (2 * xs.h, 2 * xs.w);
                for co in 0..out_c {
                    let bv = bias.map(|b| b.data()[co]).unwrap_or_else(E::zero);
                    for a in 0..2 {
                        for bq in 0..2 {
                            let t = &tmp[(co * 4 + a * 2 + bq) * plane..][..plane];
                            for i in 0..xs.h {
                                let orow = &mut o_item
                                    [co * oh2 * ow2 + (2 * i + a) * ow2..][..ow2];
                                let trow = &t[i * xs.w..(i + 1) * xs.w];
                                for j in 0..xs.w {
                                    orow[2 * j + bq] = trow[j] + bv;
                                }
                            }
                        }
                    }
                }
            },
        );
    });
    Tensor4::new(out_shape, out).expect("convt output shape")
}

#[allow(clippy::type_complexity)]
pub(crate) fn convt2x2_backward<E: Scalar>(
    x: &Tensor4<E>,
    w: &Tensor4<E>,
    gy: &[E],
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> (Option<Vec<E>>, Option<Vec<E>>, Option<Vec<E>>) {
    let xs = x.shape();
    let (in_c, out_c) = (w.shape().n, w.shape().c);
    let plane = xs.plane();
    let (oh2, ow2) = (2 * xs.h, 2 * xs.w);
    let out_per = out_c * oh2 * ow2;
    let wd = w.data();
    let m = out_c * 4;

    let mut dx = if need_dx { vec![E::zero(); x.numel()] } else { Vec::new() };
    let mut dx_items: Vec<&mut [E]> = if need_dx {
        dx.chunks_mut(xs.per_item()).collect()
    } else {
        (0..xs.n).map(|_| <&mut [E]>::default()).collect()
    };

    let partials: Vec<(Vec<E>, Vec<E>)> = parallel::scoped(|| {
        x.data()
            .par_chunks(xs.per_item())
            .zip(gy.par_chunks(out_per))
            .zip(dx_items.par_iter_mut())
            .map(|((x_item, gy_item), dx_item)| {
                // regroup dY into (co*4+ab) x plane
                let mut dtmp = vec![E::zero(); m * plane];
                for co in 0..out_c {
                    for a in 0..2 {
                        for bq in 0..2 {
                            let t = &mut dtmp[(co * 4 + a * 2 + bq) * plane..][..plane];
                            for i in 0..xs.h {
                                let grow =
                                    &gy_item[co * oh2 * ow2 + (2 * i + a) * ow2..][..ow2];
                                let trow = &mut t[i * xs.w..(i + 1) * xs.w];
                                for j in 0..xs.w {
                                    trow[j] = grow[2 * j + bq];
                                }
                            }
                        }
                    }
                }
                let mut dw_p = if need_dw { vec![E::zero(); wd.len()] } else { Vec::new() };
                let mut db_p = if need_db { vec![E::zero(); out_c] } else { Vec::new() };
                if need_dw {
                    // dW(cin x m) += X(cin x P) * dtmp^T(P x m)
                    E::gemm(
                        in_c, plane, m,
                        E::one(), x_item, plane, 1,
                        &dtmp, 1, plane,
                        E::one(), &mut dw_p, m, 1,
                    );
                }
                if need_db {
                    for co in 0..out_c {
                        let s: E =
                            gy_item[co * oh2 * ow2..(co + 1) * oh2 * ow2].iter().copied().sum();
                        db_p[co] = s;
                    }
                }
                if need_dx {
                    // dX(cin x P) = W(cin x m) * dtmp(m x P)
                    E::gemm(
                        in_c, m, plane,
                        E::one(), wd, m, 1,
                        &dtmp, plane, 1,
                        E::zero(), dx_item, plane, 1,
                    );
                }
                (dw_p, db_p)
            })
            .collect()
    });

    let dw = need_dw.then(|| {
        let mut acc = vec![E::zero(); wd.len()];
        for (dw_p, _) in &partials {
            for (a, &d) in acc.iter_mut().zip(dw_p) {
                *a = *a + d;
            }
        }
        acc
    });
    let db = need_db.then(|| {
        let mut acc = vec![E::zero(); out_c];
        for (_, db_p) in &partials {
            for (a, &d) in acc.iter_mut().zip(db_p) {
                *a = *a + d;
            }
        }
        acc
    });
    (need_dx.then_some(dx), dw, db)
}

/// Depthwise 3x3 convolution, same padding, bias-free. Weight layout
/// (channels, 1, 3, 3); channels never mix.
pub(crate) fn depthwise3x3_forward<E: Scalar>(x: &Tensor4<E>, w: &Tensor4<E>) -> Tensor4<E> {
    let xs = x.shape();
    let plane = xs.plane();
    let mut out = vec![E::zero(); xs.numel()];
    let wd = w.data();

    parallel::scoped(|| {
        out.par_chunks_mut(plane)
            .zip(x.data().par_chunks(plane))
            .enumerate()
            .for_each(|(nc, (o_plane, x_plane))| {
                let c = nc % xs.c;
                let kw = &wd[c * 9..(c + 1) * 9];
                for oy in 0..xs.h {
                    for ox in 0..xs.w {
                        let mut acc = E::zero();
                        for ky in 0..3usize {
                            let iy = oy as isize + ky as isize - 1;
                            if iy < 0 || iy >= xs.h as isize {
                                continue;
                            }
                            for kx in 0..3usize {
                                let ix = ox as isize + kx as isize - 1;
                                if ix < 0 || ix >= xs.w as isize {
                                    continue;
                                }
                                acc = acc
                                    + x_plane[iy as usize * xs.w + ix as usize] * kw[ky * 3 + kx];
                            }
                        }
                        o_plane[oy * xs.w + ox] = acc;
                    }
                }
            });
    });
    Tensor4::new(xs, out).expect("depthwise output shape")
}

pub(crate) fn depthwise3x3_backward<E: Scalar>(
    x: &Tensor4<E>,
    w: &Tensor4<E>,
    gy: &[E],
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<E>>, Option<Vec<E>>) {
    let xs = x.shape();
    let plane = xs.plane();
    let wd = w.data();
    let mut dx = need_dx.then(|| vec![E::zero(); x.numel()]);
    let mut dw = need_dw.then(|| vec![E::zero(); wd.len()]);

    for n in 0..xs.n {
        for c in 0..xs.c {
            let base = (n * xs.c + c) * plane;
            let x_plane = &x.data()[base..base + plane];
            let gy_plane = &gy[base..base + plane];
            let kw = &wd[c * 9..(c + 1) * 9];
            for oy in 0..xs.h {
                for ox in 0..xs.w {
                    let d = gy_plane[oy * xs.w + ox];
                    for ky in 0..3usize {
                        let iy = oy as isize + ky as isize - 1;
                        if iy < 0 || iy >= xs.h as isize {
                            continue;
                        }
                        for kx in 0..3usize {
                            let ix = ox as isize + kx as isize - 1;
                            if ix < 0 || ix >= xs.w as isize {
                                continue;
                            }
                            let xi = iy as usize * xs.w + ix as usize;
                            if let Some(dx) = dx.as_mut() {
                                dx[base + xi] = dx[base + xi] + d * kw[ky * 3 + kx];
                            }
                            if let Some(dw) = dw.as_mut() {
                                let wi = c * 9 + ky * 3 + kx;
                                dw[wi] = dw[wi] + d * x_plane[xi];
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dw)
}

impl<E: Scalar> Tape<E> {
    pub fn conv2d(
        &mut self,
        x: VarId,
        w: VarId,
        bias: Option<VarId>,
        spec: &Conv2DSpec,
    ) -> Result<VarId> {
        self.check_owned(x, "conv2d")?;
        self.check_owned(w, "conv2d")?;
        let xs = self.shape(x);
        let ws = self.shape(w);
        if xs.c != spec.in_channels {
            return Err(UdetError::shape(
                "conv2d",
                format!("input has {} channels, spec expects {}", xs.c, spec.in_channels),
            ));
        }
        if ws != Shape4::new(spec.out_channels, spec.in_channels, spec.kernel.0, spec.kernel.1) {
            return Err(UdetError::shape(
                "conv2d",
                format!("weight shape {ws} does not match spec {spec:?}"),
            ));
        }
        if spec.bias != bias.is_some() {
            return Err(UdetError::InvalidArgument(
                "conv2d: bias presence must match spec".into(),
            ));
        }
        if let Some(b) = bias {
            self.check_owned(b, "conv2d")?;
            let bs = self.shape(b);
            if bs != Shape4::new(1, spec.out_channels, 1, 1) {
                return Err(UdetError::shape("conv2d", format!("bias shape {bs}")));
            }
        }
        let geom = spec.geometry(xs.h, xs.w)?;
        let req = self.var_requires_grad(x)
            || self.var_requires_grad(w)
            || bias.map(|b| self.var_requires_grad(b)).unwrap_or(false);
        let out = conv2d_forward(
            self.value(x),
            self.value(w),
            bias.map(|b| self.value(b)),
            &geom,
        );
        Ok(self.record(out, req, || Rule::Conv2d {
            x: x.idx,
            w: w.idx,
            bias: bias.map(|b| b.idx),
            geom,
        }))
    }

    /// 2x2 stride-2 transposed convolution; weight shape (in_c, out_c, 2, 2).
    pub fn conv_transpose2d(&mut self, x: VarId, w: VarId, bias: Option<VarId>) -> Result<VarId> {
        self.check_owned(x, "conv_transpose2d")?;
        self.check_owned(w, "conv_transpose2d")?;
        let xs = self.shape(x);
        let ws = self.shape(w);
        if ws.h != 2 || ws.w != 2 {
            return Err(UdetError::shape(
                "conv_transpose2d",
                format!("kernel must be 2x2, got {}x{}", ws.h, ws.w),
            ));
        }
        if xs.c != ws.n {
            return Err(UdetError::shape(
                "conv_transpose2d",
                format!("input has {} channels, weight expects {}", xs.c, ws.n),
            ));
        }
        if let Some(b) = bias {
            self.check_owned(b, "conv_transpose2d")?;
            if self.shape(b) != Shape4::new(1, ws.c, 1, 1) {
                return Err(UdetError::shape(
                    "conv_transpose2d",
                    format!("bias shape {}", self.shape(b)),
                ));
            }
        }
        let req = self.var_requires_grad(x)
            || self.var_requires_grad(w)
            || bias.map(|b| self.var_requires_grad(b)).unwrap_or(false);
        let out = convt2x2_forward(self.value(x), self.value(w), bias.map(|b| self.value(b)));
        Ok(self.record(out, req, || Rule::ConvTranspose2d {
            x: x.idx,
            w: w.idx,
            bias: bias.map(|b| b.idx),
        }))
    }

    /// 3x3 same-padded depthwise convolution; weight shape (c, 1, 3, 3).
    pub fn depthwise_conv2d(&mut self, x: VarId, w: VarId) -> Result<VarId> {
        self.check_owned(x, "depthwise_conv2d")?;
        self.check_owned(w, "depthwise_conv2d")?;
        let xs = self.shape(x);
        let ws = self.shape(w);
        if ws != Shape4::new(xs.c, 1, 3, 3) {
            return Err(UdetError::shape(
                "depthwise_conv2d",
                format!("weight {ws} must be ({},1,3,3) for input {xs}", xs.c),
            ));
        }
        let req = self.var_requires_grad(x) || self.var_requires_grad(w);
        let out = depthwise3x3_forward(self.value(x), self.value(w));
        Ok(self.record(out, req, || Rule::DepthwiseConv2d { x: x.idx, w: w.idx }))
    }
}
