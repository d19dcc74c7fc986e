//! Elementwise arithmetic, reduction, and channel concatenation.

use crate::error::{Result, UdetError};
use crate::scalar::Scalar;
use crate::tape::{Rule, Tape, VarId};
use crate::tensor::{Shape4, Tensor4};

impl<E: Scalar> Tape<E> {
    fn binary_same_shape(&self, op: &'static str, a: VarId, b: VarId) -> Result<(Shape4, bool)> {
        self.check_owned(a, op)?;
        self.check_owned(b, op)?;
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa != sb {
            return Err(UdetError::shape(op, format!("{sa} vs {sb}")));
        }
        Ok((sa, self.var_requires_grad(a) || self.var_requires_grad(b)))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (shape, req) = self.binary_same_shape("add", a, b)?;
        let out = Tensor4::from_fn(shape, |i| self.value(a).data()[i] + self.value(b).data()[i]);
        Ok(self.record(out, req, || Rule::Add { a: a.idx, b: b.idx }))
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (shape, req) = self.binary_same_shape("mul", a, b)?;
        let out = Tensor4::from_fn(shape, |i| self.value(a).data()[i] * self.value(b).data()[i]);
        Ok(self.record(out, req, || Rule::Mul { a: a.idx, b: b.idx }))
    }

    pub fn scale(&mut self, a: VarId, factor: E) -> Result<VarId> {
        self.check_owned(a, "scale")?;
        let req = self.var_requires_grad(a);
        let shape = self.shape(a);
        let out = Tensor4::from_fn(shape, |i| self.value(a).data()[i] * factor);
        Ok(self.record(out, req, || Rule::Scale { a: a.idx, factor }))
    }

    /// Reduce to a (1,1,1,1) scalar by summation.
    pub fn sum(&mut self, a: VarId) -> Result<VarId> {
        self.check_owned(a, "sum")?;
        let req = self.var_requires_grad(a);
        let total: E = self.value(a).data().iter().copied().sum();
        Ok(self.record(Tensor4::scalar(total), req, || Rule::Sum { a: a.idx }))
    }

    /// Stack `a`'s channels ahead of `b`'s; batch and spatial dims must match.
    pub fn concat_channels(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.check_owned(a, "concat_channels")?;
        self.check_owned(b, "concat_channels")?;
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa.n != sb.n || sa.h != sb.h || sa.w != sb.w {
            return Err(UdetError::shape("concat_channels", format!("{sa} vs {sb}")));
        }
        let req = self.var_requires_grad(a) || self.var_requires_grad(b);
        let out_shape = Shape4::new(sa.n, sa.c + sb.c, sa.h, sa.w);
        let (pa, pb) = (sa.per_item(), sb.per_item());
        let mut data = vec![E::zero(); out_shape.numel()];
        {
            let da = self.value(a).data();
            let db = self.value(b).data();
            for n in 0..sa.n {
                let base = n * (pa + pb);
                data[base..base + pa].copy_from_slice(&da[n * pa..(n + 1) * pa]);
                data[base + pa..base + pa + pb].copy_from_slice(&db[n * pb..(n + 1) * pb]);
            }
        }
        let out = Tensor4::new(out_shape, data)?;
        Ok(self.record(out, req, || Rule::ConcatChannels { a: a.idx, b: b.idx }))
    }
}
