//! 2x2 stride-2 max pooling and parameter-free 2x nearest upsampling.

use crate::error::{Result, UdetError};
use crate::scalar::Scalar;
use crate::tape::{Rule, Tape, VarId};
use crate::tensor::{Shape4, Tensor4};

/// Returns (pooled, argmax) where argmax holds the flat input index feeding
/// each output element. Ties resolve to the first maximal element in
/// row-major window order.
pub(crate) fn maxpool_forward<E: Scalar>(x: &Tensor4<E>) -> (Tensor4<E>, Vec<u32>) {
    let s = x.shape();
    let (oh, ow) = (s.h / 2, s.w / 2);
    let out_shape = Shape4::new(s.n, s.c, oh, ow);
    let mut out = vec![E::zero(); out_shape.numel()];
    let mut argmax = vec![0u32; out_shape.numel()];
    let xd = x.data();
    let mut oi = 0usize;
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * s.plane();
            for oy in 0..oh {
                for ox in 0..ow {
                    let i00 = base + (2 * oy) * s.w + 2 * ox;
                    let mut best_i = i00;
                    let mut best = xd[i00];
                    for &cand in &[i00 + 1, i00 + s.w, i00 + s.w + 1] {
                        if xd[cand] > best {
                            best = xd[cand];
                            best_i = cand;
                        }
                    }
                    out[oi] = best;
                    argmax[oi] = best_i as u32;
                    oi += 1;
                }
            }
        }
    }
    (Tensor4::new(out_shape, out).expect("maxpool output shape"), argmax)
}

pub(crate) fn maxpool_backward<E: Scalar>(argmax: &[u32], gy: &[E], gx: &mut [E]) {
    for (&src, &d) in argmax.iter().zip(gy) {
        let i = src as usize;
        gx[i] = gx[i] + d;
    }
}

pub(crate) fn upsample2x_forward<E: Scalar>(x: &Tensor4<E>) -> Tensor4<E> {
    let s = x.shape();
    let out_shape = Shape4::new(s.n, s.c, 2 * s.h, 2 * s.w);
    let mut out = vec![E::zero(); out_shape.numel()];
    let xd = x.data();
    let ow = 2 * s.w;
    for nc in 0..s.n * s.c {
        let src = &xd[nc * s.plane()..(nc + 1) * s.plane()];
        let dst = &mut out[nc * out_shape.plane()..(nc + 1) * out_shape.plane()];
        for y in 0..s.h {
            for x_ in 0..s.w {
                let v = src[y * s.w + x_];
                let o = (2 * y) * ow + 2 * x_;
                dst[o] = v;
                dst[o + 1] = v;
                dst[o + ow] = v;
                dst[o + ow + 1] = v;
            }
        }
    }
    Tensor4::new(out_shape, out).expect("upsample output shape")
}

pub(crate) fn upsample2x_backward<E: Scalar>(x_shape: Shape4, gy: &[E], gx: &mut [E]) {
    let ow = 2 * x_shape.w;
    let out_plane = 4 * x_shape.plane();
    for nc in 0..x_shape.n * x_shape.c {
        let src = &gy[nc * out_plane..(nc + 1) * out_plane];
        let dst = &mut gx[nc * x_shape.plane()..(nc + 1) * x_shape.plane()];
        for y in 0..x_shape.h {
            for x_ in 0..x_shape.w {
                let o = (2 * y) * ow + 2 * x_;
                let s = src[o] + src[o + 1] + src[o + ow] + src[o + ow + 1];
                let d = &mut dst[y * x_shape.w + x_];
                *d = *d + s;
            }
        }
    }
}

impl<E: Scalar> Tape<E> {
    /// 2x2 max pooling with stride 2; spatial dims must be even.
    pub fn maxpool2d(&mut self, x: VarId) -> Result<VarId> {
        self.check_owned(x, "maxpool2d")?;
        let s = self.shape(x);
        if s.h % 2 != 0 || s.w % 2 != 0 {
            return Err(UdetError::shape(
                "maxpool2d",
                format!("spatial dims must be even, got {}x{}", s.h, s.w),
            ));
        }
        let req = self.var_requires_grad(x);
        let (out, argmax) = maxpool_forward(self.value(x));
        Ok(self.record(out, req, || Rule::MaxPool2d { x: x.idx, argmax }))
    }

    /// Nearest-neighbor upsampling: every pixel becomes a 2x2 block.
    pub fn upsample2x(&mut self, x: VarId) -> Result<VarId> {
        self.check_owned(x, "upsample2x")?;
        let req = self.var_requires_grad(x);
        let out = upsample2x_forward(self.value(x));
        Ok(self.record(out, req, || Rule::Upsample2x { x: x.idx }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamRegistry;

    #[test]
    fn maxpool_of_2x2_block() {
        let mut tape = Tape::<f64>::new();
        let t = Tensor4::new(Shape4::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let x = tape.leaf(t);
        let y = tape.maxpool2d(x).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0]);
    }

    #[test]
    fn maxpool_rejects_odd_dims() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor4::zeros(Shape4::new(1, 1, 3, 4)));
        assert!(tape.maxpool2d(x).is_err());
    }

    #[test]
    fn maxpool_tie_routes_to_first_element() {
        let mut tape = Tape::new();
        let mut reg = ParamRegistry::new();
        let x = tape.leaf(Tensor4::full(Shape4::new(1, 1, 2, 2), 7.0f64).requires_grad());
        let y = tape.maxpool2d(x).unwrap();
        let loss = tape.sum(y).unwrap();
        tape.backward(loss, &mut reg).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn maxpool_matches_window_scan_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let s = Shape4::new(1, 3, 8, 8);
        let t = Tensor4::from_fn(s, |_| rng.random::<f64>() * 4.0 - 2.0);
        let mut tape = Tape::new();
        let x = tape.leaf(t.clone());
        let y = tape.maxpool2d(x).unwrap();
        for n in 0..1 {
            for c in 0..3 {
                for oy in 0..4 {
                    for ox in 0..4 {
                        let mut m = f64::NEG_INFINITY;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                m = m.max(t.at(n, c, 2 * oy + dy, 2 * ox + dx));
                            }
                        }
                        assert_eq!(tape.value(y).at(n, c, oy, ox), m);
                    }
                }
            }
        }
    }

    #[test]
    fn upsample_replicates_and_undoes_with_maxpool() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let t = Tensor4::from_fn(Shape4::new(2, 2, 3, 3), |_| rng.random::<f64>());
        let mut tape = Tape::new();
        let x = tape.leaf(t.clone());
        let up = tape.upsample2x(x).unwrap();
        // definition: out[..,2i+a,2j+b] == in[..,i,j]
        for n in 0..2 {
            for c in 0..2 {
                for i in 0..3 {
                    for j in 0..3 {
                        for a in 0..2 {
                            for b in 0..2 {
                                assert_eq!(
                                    tape.value(up).at(n, c, 2 * i + a, 2 * j + b),
                                    t.at(n, c, i, j)
                                );
                            }
                        }
                    }
                }
            }
        }
        let down = tape.maxpool2d(up).unwrap();
        assert_eq!(tape.value(down).data(), t.data());
    }

    #[test]
    fn single_pixel_upsample() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor4::scalar(5.0));
        let y = tape.upsample2x(x).unwrap();
        assert_eq!(tape.value(y).data(), &[5.0; 4]);
    }
}
