//! Define-by-run tape for reverse-mode differentiation.
//!
//! The tape owns every tensor it touches. Ops execute eagerly through the
//! shared [`kernels`] and record enough to replay the chain rule backwards.
//! A tape is consumed by its single `backward` call.

use super::kernels::{self, L2_NORM_GUARD, MP_SILU_DIV, RMS_NORM_EPS};
use super::{Scalar, Tensor2};
use crate::error::{GeodistError, Result};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TapeId(usize);

#[derive(Debug)]
enum Op<S> {
    MatMul { a: TapeId, b: TapeId, out: TapeId },
    MatMulNT { a: TapeId, b: TapeId, out: TapeId },
    LinComb { ca: S, a: TapeId, cb: S, b: TapeId, out: TapeId },
    Mul { a: TapeId, b: TapeId, out: TapeId },
    Scale { c: S, a: TapeId, out: TapeId },
    AddScalar { a: TapeId, out: TapeId },
    ScaleRows { a: TapeId, col: TapeId, out: TapeId },
    AddRows { a: TapeId, row: TapeId, out: TapeId },
    ScaleByScalar { a: TapeId, s: TapeId, out: TapeId },
    Silu { a: TapeId, out: TapeId },
    MpSilu { a: TapeId, out: TapeId },
    Cos { a: TapeId, out: TapeId },
    RmsNormRows { a: TapeId, out: TapeId },
    L2NormRows { a: TapeId, out: TapeId },
    SumCols { a: TapeId, out: TapeId },
    SumRows { a: TapeId, out: TapeId },
    MeanAll { a: TapeId, out: TapeId },
    ConcatCols { a: TapeId, b: TapeId, out: TapeId },
}

/// Recording tape. Single-threaded; run independent tapes on independent
/// threads for data parallelism.
pub struct Tape<S> {
    tensors: Vec<Tensor2<S>>,
    needs_grad: Vec<bool>,
    ops: Vec<Op<S>>,
    consumed: bool,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            tensors: Vec::new(),
            needs_grad: Vec::new(),
            ops: Vec::new(),
            consumed: false,
        }
    }

    fn push(&mut self, t: Tensor2<S>, needs_grad: bool) -> TapeId {
        debug_assert!(t.all_finite(), "non-finite tensor recorded on tape");
        self.tensors.push(t);
        self.needs_grad.push(needs_grad);
        TapeId(self.tensors.len() - 1)
    }

    /// Leaf that never receives a gradient (inputs, targets, schedules).
    pub fn constant(&mut self, t: Tensor2<S>) -> TapeId {
        self.push(t, false)
    }

    /// Differentiable leaf. `backward` populates its `grad`.
    pub fn param(&mut self, t: Tensor2<S>) -> TapeId {
        self.push(t, true)
    }

    pub fn value(&self, id: TapeId) -> &Tensor2<S> {
        &self.tensors[id.0]
    }

    /// Gradient of a tensor after `backward` has run.
    pub fn grad(&self, id: TapeId) -> Option<&[S]> {
        self.tensors[id.0].grad.as_deref()
    }

    fn record(&mut self, out: Tensor2<S>, inputs: &[TapeId], op: impl FnOnce(TapeId) -> Op<S>) -> TapeId {
        let needs = inputs.iter().any(|i| self.needs_grad[i.0]);
        let id = self.push(out, needs);
        if needs {
            self.ops.push(op(id));
        }
        id
    }

    pub fn matmul(&mut self, a: TapeId, b: TapeId) -> Result<TapeId> {
        let out = kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.record(out, &[a, b], |out| Op::MatMul { a, b, out }))
    }

    /// a * b^T; the orientation used by linear layers storing weights as
    /// (out_features x in_features).
    pub fn matmul_nt(&mut self, a: TapeId, b: TapeId) -> Result<TapeId> {
        let out = kernels::matmul_nt(self.value(a), self.value(b))?;
        Ok(self.record(out, &[a, b], |out| Op::MatMulNT { a, b, out }))
    }

    pub fn lincomb(&mut self, ca: S, a: TapeId, cb: S, b: TapeId) -> Result<TapeId> {
        let out = kernels::lincomb(ca, self.value(a), cb, self.value(b))?;
        Ok(self.record(out, &[a, b], |out| Op::LinComb { ca, a, cb, b, out }))
    }

    pub fn add(&mut self, a: TapeId, b: TapeId) -> Result<TapeId> {
        self.lincomb(S::one(), a, S::one(), b)
    }

    pub fn sub(&mut self, a: TapeId, b: TapeId) -> Result<TapeId> {
        self.lincomb(S::one(), a, -S::one(), b)
    }

    /// ((1-t)*a + t*b) / sqrt((1-t)^2 + t^2).
    pub fn mp_sum(&mut self, a: TapeId, b: TapeId, t_mix: f64) -> Result<TapeId> {
        let ca = 1.0 - t_mix;
        let cb = t_mix;
        let denom = (ca * ca + cb * cb).sqrt();
        self.lincomb(S::from_f64(ca / denom), a, S::from_f64(cb / denom), b)
    }

    pub fn mul(&mut self, a: TapeId, b: TapeId) -> Result<TapeId> {
        let out = kernels::mul(self.value(a), self.value(b))?;
        Ok(self.record(out, &[a, b], |out| Op::Mul { a, b, out }))
    }

    pub fn scale(&mut self, a: TapeId, c: S) -> TapeId {
        let out = kernels::scale(self.value(a), c);
        self.record(out, &[a], |out| Op::Scale { c, a, out })
    }

    pub fn add_scalar(&mut self, a: TapeId, c: S) -> TapeId {
        let out = kernels::add_scalar(self.value(a), c);
        self.record(out, &[a], |out| Op::AddScalar { a, out })
    }

    pub fn scale_rows(&mut self, a: TapeId, col: TapeId) -> Result<TapeId> {
        let out = kernels::scale_rows(self.value(a), self.value(col))?;
        Ok(self.record(out, &[a, col], |out| Op::ScaleRows { a, col, out }))
    }

    pub fn add_rows(&mut self, a: TapeId, row: TapeId) -> Result<TapeId> {
        let out = kernels::add_rows(self.value(a), self.value(row))?;
        Ok(self.record(out, &[a, row], |out| Op::AddRows { a, row, out }))
    }

    /// Multiply every entry by a 1x1 tensor (a learned gain).
    pub fn scale_by_scalar(&mut self, a: TapeId, s: TapeId) -> Result<TapeId> {
        let sv = self.value(s);
        if sv.shape() != (1, 1) {
            return Err(GeodistError::ShapeMismatch {
                op: "scale_by_scalar",
                details: format!("gain must be 1x1, got {}x{}", sv.rows(), sv.cols()),
            });
        }
        let out = kernels::scale(self.value(a), sv.get(0, 0));
        Ok(self.record(out, &[a, s], |out| Op::ScaleByScalar { a, s, out }))
    }

    pub fn silu(&mut self, a: TapeId) -> TapeId {
        let out = kernels::silu(self.value(a));
        self.record(out, &[a], |out| Op::Silu { a, out })
    }

    pub fn mp_silu(&mut self, a: TapeId) -> TapeId {
        let out = kernels::mp_silu(self.value(a));
        self.record(out, &[a], |out| Op::MpSilu { a, out })
    }

    pub fn cos(&mut self, a: TapeId) -> TapeId {
        let out = kernels::cos(self.value(a));
        self.record(out, &[a], |out| Op::Cos { a, out })
    }

    pub fn rms_norm_rows(&mut self, a: TapeId) -> TapeId {
        let out = kernels::rms_norm_rows(self.value(a));
        self.record(out, &[a], |out| Op::RmsNormRows { a, out })
    }

    pub fn l2_norm_rows(&mut self, a: TapeId) -> TapeId {
        let out = kernels::l2_norm_rows(self.value(a));
        self.record(out, &[a], |out| Op::L2NormRows { a, out })
    }

    pub fn sum_cols(&mut self, a: TapeId) -> TapeId {
        let out = kernels::sum_cols(self.value(a));
        self.record(out, &[a], |out| Op::SumCols { a, out })
    }

    pub fn sum_rows(&mut self, a: TapeId) -> TapeId {
        let out = kernels::sum_rows(self.value(a));
        self.record(out, &[a], |out| Op::SumRows { a, out })
    }

    pub fn mean_all(&mut self, a: TapeId) -> TapeId {
        let out = kernels::mean_all(self.value(a));
        self.record(out, &[a], |out| Op::MeanAll { a, out })
    }

    pub fn concat_cols(&mut self, a: TapeId, b: TapeId) -> Result<TapeId> {
        let out = kernels::concat_cols(self.value(a), self.value(b))?;
        Ok(self.record(out, &[a, b], |out| Op::ConcatCols { a, b, out }))
    }

    /// Reverse pass from a scalar loss. Populates `grad` on every recorded
    /// tensor that the loss depends on, parameters included. Consumes the
    /// tape: a second call is an error.
    pub fn backward(&mut self, loss: TapeId) -> Result<()> {
        if self.consumed {
            return Err(GeodistError::TapeConsumed);
        }
        self.consumed = true;
        let lt = &self.tensors[loss.0];
        if lt.shape() != (1, 1) {
            return Err(GeodistError::LossNotScalar {
                rows: lt.rows(),
                cols: lt.cols(),
            });
        }

        let mut grads: Vec<Option<Vec<S>>> = vec![None; self.tensors.len()];
        grads[loss.0] = Some(vec![S::one()]);

        for op in self.ops.iter().rev() {
            self.backprop_op(op, &mut grads)?;
        }

        for (t, g) in self.tensors.iter_mut().zip(grads) {
            t.grad = g;
        }
        Ok(())
    }

    fn backprop_op(&self, op: &Op<S>, grads: &mut [Option<Vec<S>>]) -> Result<()> {
        macro_rules! out_grad {
            ($out:expr) => {
                match &grads[$out.0] {
                    Some(g) => g.clone(),
                    None => return Ok(()), // output unused by the loss
                }
            };
        }

        fn accumulate<S: Scalar>(slot: &mut Option<Vec<S>>, delta: &[S]) {
            match slot {
                Some(g) => {
                    for (gi, &d) in g.iter_mut().zip(delta) {
                        *gi += d;
                    }
                }
                None => *slot = Some(delta.to_vec()),
            }
        }

        match *op {
            Op::MatMul { a, b, out } => {
                let g = out_grad!(out);
                let gt = Tensor2::from_vec(self.val(out).rows(), self.val(out).cols(), g)?;
                if self.needs_grad[a.0] {
                    let da = kernels::matmul_nt(&gt, self.val(b))?;
                    accumulate(&mut grads[a.0], da.data());
                }
                if self.needs_grad[b.0] {
                    let db = kernels::matmul_tn(self.val(a), &gt)?;
                    accumulate(&mut grads[b.0], db.data());
                }
            }
            Op::MatMulNT { a, b, out } => {
                let g = out_grad!(out);
                let gt = Tensor2::from_vec(self.val(out).rows(), self.val(out).cols(), g)?;
                if self.needs_grad[a.0] {
                    let da = kernels::matmul(&gt, self.val(b))?;
                    accumulate(&mut grads[a.0], da.data());
                }
                if self.needs_grad[b.0] {
                    let db = kernels::matmul_tn(&gt, self.val(a))?;
                    accumulate(&mut grads[b.0], db.data());
                }
            }
            Op::LinComb { ca, a, cb, b, out } => {
                let g = out_grad!(out);
                if self.needs_grad[a.0] {
                    let da: Vec<S> = g.iter().map(|&x| ca * x).collect();
                    accumulate(&mut grads[a.0], &da);
                }
                if self.needs_grad[b.0] {
                    let db: Vec<S> = g.iter().map(|&x| cb * x).collect();
                    accumulate(&mut grads[b.0], &db);
                }
            }
            Op::Mul { a, b, out } => {
                let g = out_grad!(out);
                if self.needs_grad[a.0] {
                    let da: Vec<S> = g.iter().zip(self.val(b).data()).map(|(&x, &y)| x * y).collect();
                    accumulate(&mut grads[a.0], &da);
                }
                if self.needs_grad[b.0] {
                    let db: Vec<S> = g.iter().zip(self.val(a).data()).map(|(&x, &y)| x * y).collect();
                    accumulate(&mut grads[b.0], &db);
                }
            }
            Op::Scale { c, a, out } => {
                let g = out_grad!(out);
                let da: Vec<S> = g.iter().map(|&x| c * x).collect();
                accumulate(&mut grads[a.0], &da);
            }
            Op::AddScalar { a, out } => {
                let g = out_grad!(out);
                accumulate(&mut grads[a.0], &g);
            }
            Op::ScaleRows { a, col, out } => {
                let g = out_grad!(out);
                let cols = self.val(a).cols();
                if self.needs_grad[a.0] {
                    let cv = self.val(col).data();
                    let da: Vec<S> = g
                        .iter()
                        .enumerate()
                        .map(|(idx, &x)| x * cv[idx / cols])
                        .collect();
                    accumulate(&mut grads[a.0], &da);
                }
                if self.needs_grad[col.0] {
                    let av = self.val(a).data();
                    let mut dc = vec![S::zero(); self.val(col).rows()];
                    for (idx, &x) in g.iter().enumerate() {
                        dc[idx / cols] += x * av[idx];
                    }
                    accumulate(&mut grads[col.0], &dc);
                }
            }
            Op::AddRows { a, row, out } => {
                let g = out_grad!(out);
                if self.needs_grad[a.0] {
                    accumulate(&mut grads[a.0], &g);
                }
                if self.needs_grad[row.0] {
                    let cols = self.val(a).cols();
                    let mut dr = vec![S::zero(); cols];
                    for (idx, &x) in g.iter().enumerate() {
                        dr[idx % cols] += x;
                    }
                    accumulate(&mut grads[row.0], &dr);
                }
            }
            Op::ScaleByScalar { a, s, out } => {
                let g = out_grad!(out);
                let sv = self.val(s).get(0, 0);
                if self.needs_grad[a.0] {
                    let da: Vec<S> = g.iter().map(|&x| sv * x).collect();
                    accumulate(&mut grads[a.0], &da);
                }
                if self.needs_grad[s.0] {
                    let ds: S = g.iter().zip(self.val(a).data()).map(|(&x, &y)| x * y).sum();
                    accumulate(&mut grads[s.0], &[ds]);
                }
            }
            Op::Silu { a, out } => {
                let g = out_grad!(out);
                let da: Vec<S> = g
                    .iter()
                    .zip(self.val(a).data())
                    .map(|(&x, &v)| x * kernels::silu_derivative(v))
                    .collect();
                accumulate(&mut grads[a.0], &da);
            }
            Op::MpSilu { a, out } => {
                let g = out_grad!(out);
                let inv = S::from_f64(1.0 / MP_SILU_DIV);
                let da: Vec<S> = g
                    .iter()
                    .zip(self.val(a).data())
                    .map(|(&x, &v)| x * kernels::silu_derivative(v) * inv)
                    .collect();
                accumulate(&mut grads[a.0], &da);
            }
            Op::Cos { a, out } => {
                let g = out_grad!(out);
                let da: Vec<S> = g
                    .iter()
                    .zip(self.val(a).data())
                    .map(|(&x, &v)| -x * v.sin())
                    .collect();
                accumulate(&mut grads[a.0], &da);
            }
            Op::RmsNormRows { a, out } => {
                let g = out_grad!(out);
                let av = self.val(a);
                let cols = av.cols();
                let eps = S::from_f64(RMS_NORM_EPS);
                let cn = S::from_f64(cols as f64);
                let mut da = vec![S::zero(); av.data().len()];
                for i in 0..av.rows() {
                    let row = av.row(i);
                    let grow = &g[i * cols..(i + 1) * cols];
                    let r = (row.iter().map(|&v| v * v).sum::<S>() / cn).sqrt();
                    let div = r + eps;
                    // y_j = x_j / div; dr/dx_k = x_k / (C r)
                    let dot: S = grow.iter().zip(row).map(|(&gj, &xj)| gj * xj).sum();
                    let corr = if r > S::from_f64(1e-30) {
                        dot / (cn * r * div * div)
                    } else {
                        S::zero()
                    };
                    for (k, slot) in da[i * cols..(i + 1) * cols].iter_mut().enumerate() {
                        *slot = grow[k] / div - row[k] * corr;
                    }
                }
                accumulate(&mut grads[a.0], &da);
            }
            Op::L2NormRows { a, out } => {
                let g = out_grad!(out);
                let av = self.val(a);
                let cols = av.cols();
                let guard = S::from_f64(L2_NORM_GUARD);
                let mut da = vec![S::zero(); av.data().len()];
                for i in 0..av.rows() {
                    let row = av.row(i);
                    let grow = &g[i * cols..(i + 1) * cols];
                    let n = row.iter().map(|&v| v * v).sum::<S>().sqrt();
                    let div = n + guard;
                    let dot: S = grow.iter().zip(row).map(|(&gj, &xj)| gj * xj).sum();
                    let corr = if n > S::from_f64(1e-30) {
                        dot / (n * div * div)
                    } else {
                        S::zero()
                    };
                    for (k, slot) in da[i * cols..(i + 1) * cols].iter_mut().enumerate() {
                        *slot = grow[k] / div - row[k] * corr;
                    }
                }
                accumulate(&mut grads[a.0], &da);
            }
            Op::SumCols { a, out } => {
                let g = out_grad!(out);
                let cols = self.val(a).cols();
                let da: Vec<S> = (0..self.val(a).data().len())
                    .map(|idx| g[idx / cols])
                    .collect();
                accumulate(&mut grads[a.0], &da);
            }
            Op::SumRows { a, out } => {
                let g = out_grad!(out);
                let cols = self.val(a).cols();
                let da: Vec<S> = (0..self.val(a).data().len())
                    .map(|idx| g[idx % cols])
                    .collect();
                accumulate(&mut grads[a.0], &da);
            }
            Op::MeanAll { a, out } => {
                let g = out_grad!(out);
                let n = S::from_f64(self.val(a).data().len() as f64);
                let gv = g[0] / n;
                let da = vec![gv; self.val(a).data().len()];
                accumulate(&mut grads[a.0], &da);
            }
            Op::ConcatCols { a, b, out } => {
                let g = out_grad!(out);
                let (ra, ca) = self.val(a).shape();
                let cb = self.val(b).cols();
                let w = ca + cb;
                if self.needs_grad[a.0] {
                    let mut da = Vec::with_capacity(ra * ca);
                    for i in 0..ra {
                        da.extend_from_slice(&g[i * w..i * w + ca]);
                    }
                    accumulate(&mut grads[a.0], &da);
                }
                if self.needs_grad[b.0] {
                    let mut db = Vec::with_capacity(ra * cb);
                    for i in 0..ra {
                        db.extend_from_slice(&g[i * w + ca..(i + 1) * w]);
                    }
                    accumulate(&mut grads[b.0], &db);
                }
            }
        }
        Ok(())
    }

    #[inline]
    fn val(&self, id: TapeId) -> &Tensor2<S> {
        &self.tensors[id.0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0xD1FF)
    }

    fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor2<f64> {
        Tensor2::from_fn(rows, cols, |_, _| rng.random_range(-2.0..2.0))
    }

    /// Builds `op(params...)`, contracts it to a scalar with fixed random
    /// weights, and compares tape gradients against central finite
    /// differences, at the storage precision `S`.
    fn fd_check<S: Scalar>(
        inputs: &[Tensor2<f64>],
        build: &dyn Fn(&mut Tape<S>, &[TapeId]) -> TapeId,
        tol: f64,
        h: f64,
    ) {
        let mut wrng = rng();
        let eval = |ins: &[Tensor2<f64>]| -> (f64, Vec<Vec<S>>) {
            let mut tape = Tape::<S>::new();
            let ids: Vec<TapeId> = ins.iter().map(|t| tape.param(t.cast())).collect();
            let out = build(&mut tape, &ids);
            let n = tape.value(out).data().len();
            let mut wr = rng();
            let w = Tensor2::<S>::from_fn(tape.value(out).rows(), tape.value(out).cols(), |_, _| {
                S::from_f64(wr.random_range(0.25..1.0))
            });
            let wid = tape.constant(w);
            let prod = tape.mul(out, wid).unwrap();
            let mean = tape.mean_all(prod);
            let loss = tape.scale(mean, S::from_f64(n as f64));
            tape.backward(loss).unwrap();
            let grads = ids
                .iter()
                .map(|&id| tape.grad(id).map(|g| g.to_vec()).unwrap_or_default())
                .collect();
            (tape.value(loss).get(0, 0).as_f64(), grads)
        };
        let _ = &mut wrng;

        let (_, grads) = eval(inputs);
        for (ti, t) in inputs.iter().enumerate() {
            assert!(!grads[ti].is_empty(), "input {ti} received no gradient");
            let mut err_sq = 0.0f64;
            let mut ad_sq = 0.0f64;
            let mut fd_sq = 0.0f64;
            for ei in 0..t.data().len() {
                let mut plus = inputs.to_vec();
                plus[ti].data_mut()[ei] += h;
                let mut minus = inputs.to_vec();
                minus[ti].data_mut()[ei] -= h;
                let (lp, _) = eval(&plus);
                let (lm, _) = eval(&minus);
                let fd = (lp - lm) / (2.0 * h);
                let ad = grads[ti][ei].as_f64();
                err_sq += (ad - fd) * (ad - fd);
                ad_sq += ad * ad;
                fd_sq += fd * fd;
            }
            let rel = err_sq.sqrt() / ad_sq.sqrt().max(fd_sq.sqrt()).max(1e-12);
            assert!(
                rel < tol,
                "input {ti}: gradient vector relative error {rel:.3e} >= {tol:.1e}"
            );
        }
    }

    /// Run an op through the FD harness at both storage precisions.
    fn fd_check_both(
        inputs: Vec<Tensor2<f64>>,
        build_f32: &dyn Fn(&mut Tape<f32>, &[TapeId]) -> TapeId,
        build_f64: &dyn Fn(&mut Tape<f64>, &[TapeId]) -> TapeId,
    ) {
        fd_check::<f64>(&inputs, build_f64, 1e-6, 1e-6);
        fd_check::<f32>(&inputs, build_f32, 1e-3, 5e-3);
    }

    macro_rules! fd_case {
        ($name:ident, [$($shape:expr),+], $builder:expr) => {
            #[test]
            fn $name() {
                let mut r = rng();
                let inputs: Vec<Tensor2<f64>> =
                    vec![$(random_tensor(&mut r, $shape.0, $shape.1)),+];
                fd_check_both(inputs, &$builder, &$builder);
            }
        };
    }

    fd_case!(fd_matmul, [(4, 3), (3, 5)], |t, ids| t
        .matmul(ids[0], ids[1])
        .unwrap());
    fd_case!(fd_matmul_nt, [(4, 3), (5, 3)], |t, ids| t
        .matmul_nt(ids[0], ids[1])
        .unwrap());
    fd_case!(fd_lincomb, [(3, 4), (3, 4)], |t, ids| {
        let ca = Scalar::from_f64(0.7);
        let cb = Scalar::from_f64(-1.3);
        t.lincomb(ca, ids[0], cb, ids[1]).unwrap()
    });
    fd_case!(fd_mp_sum, [(3, 4), (3, 4)], |t, ids| t
        .mp_sum(ids[0], ids[1], 0.3)
        .unwrap());
    fd_case!(fd_mul, [(3, 4), (3, 4)], |t, ids| t.mul(ids[0], ids[1]).unwrap());
    fd_case!(fd_scale, [(3, 4)], |t, ids| t
        .scale(ids[0], Scalar::from_f64(1.37)));
    fd_case!(fd_add_scalar, [(3, 4)], |t, ids| t
        .add_scalar(ids[0], Scalar::from_f64(0.41)));
    fd_case!(fd_scale_rows, [(4, 5), (4, 1)], |t, ids| t
        .scale_rows(ids[0], ids[1])
        .unwrap());
    fd_case!(fd_add_rows, [(4, 5), (1, 5)], |t, ids| t
        .add_rows(ids[0], ids[1])
        .unwrap());
    fd_case!(fd_scale_by_scalar, [(4, 5), (1, 1)], |t, ids| t
        .scale_by_scalar(ids[0], ids[1])
        .unwrap());
    fd_case!(fd_silu, [(4, 5)], |t, ids| t.silu(ids[0]));
    fd_case!(fd_mp_silu, [(4, 5)], |t, ids| t.mp_silu(ids[0]));
    fd_case!(fd_cos, [(4, 5)], |t, ids| t.cos(ids[0]));
    fd_case!(fd_rms_norm_rows, [(4, 5)], |t, ids| t.rms_norm_rows(ids[0]));
    fd_case!(fd_l2_norm_rows, [(4, 5)], |t, ids| t.l2_norm_rows(ids[0]));
    fd_case!(fd_sum_cols, [(4, 5)], |t, ids| t.sum_cols(ids[0]));
    fd_case!(fd_sum_rows, [(4, 5)], |t, ids| t.sum_rows(ids[0]));
    fd_case!(fd_mean_all, [(4, 5)], |t, ids| t.mean_all(ids[0]));
    fd_case!(fd_concat_cols, [(4, 3), (4, 2)], |t, ids| t
        .concat_cols(ids[0], ids[1])
        .unwrap());
    fd_case!(fd_composite_chain, [(4, 3), (6, 3), (1, 1)], |t, ids| {
        // mp_linear-shaped composite: silu -> normalized weights -> gain
        let act = t.mp_silu(ids[0]);
        let what = t.l2_norm_rows(ids[1]);
        let out = t.matmul_nt(act, what).unwrap();
        let gained = t.scale_by_scalar(out, ids[2]).unwrap();
        t.rms_norm_rows(gained)
    });

    #[test]
    fn loss_sum_of_params_gives_unit_grads() {
        let mut tape = Tape::<f64>::new();
        let p = tape.param(Tensor2::from_vec(2, 3, vec![0.3, -1.0, 2.0, 4.0, 0.0, 1.0]).unwrap());
        let s = tape.sum_cols(p);
        let s2 = tape.sum_rows(s);
        tape.backward(s2).unwrap();
        assert_eq!(tape.grad(p).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn quadratic_loss_matches_analytic_gradient() {
        // loss = ||W x - y||^2, dW = 2 (W x - y) x^T
        let mut tape = Tape::<f64>::new();
        let w = tape.param(Tensor2::from_vec(2, 2, vec![1.0, 2.0, -0.5, 0.3]).unwrap());
        let x = tape.constant(Tensor2::from_vec(2, 1, vec![0.7, -1.1]).unwrap());
        let y = tape.constant(Tensor2::from_vec(2, 1, vec![0.2, 0.9]).unwrap());
        let wx = tape.matmul(w, x).unwrap();
        let r = tape.sub(wx, y).unwrap();
        let sq = tape.mul(r, r).unwrap();
        let s = tape.sum_rows(sq);
        let loss = tape.sum_cols(s);
        tape.backward(loss).unwrap();

        let wx0 = [1.0 * 0.7 + 2.0 * -1.1, -0.5 * 0.7 + 0.3 * -1.1];
        let r0 = [wx0[0] - 0.2, wx0[1] - 0.9];
        let expected = [
            2.0 * r0[0] * 0.7,
            2.0 * r0[0] * -1.1,
            2.0 * r0[1] * 0.7,
            2.0 * r0[1] * -1.1,
        ];
        for (g, e) in tape.grad(w).unwrap().iter().zip(expected) {
            assert!((g - e).abs() < 1e-10, "{g} vs {e}");
        }
    }

    #[test]
    fn backward_twice_is_an_error() {
        let mut tape = Tape::<f32>::new();
        let p = tape.param(Tensor2::scalar(1.0));
        let loss = tape.scale(p, 2.0);
        tape.backward(loss).unwrap();
        assert!(matches!(
            tape.backward(loss),
            Err(GeodistError::TapeConsumed)
        ));
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut tape = Tape::<f32>::new();
        let p = tape.param(Tensor2::zeros(2, 2));
        assert!(matches!(
            tape.backward(p),
            Err(GeodistError::LossNotScalar { .. })
        ));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let c = tape.constant(Tensor2::scalar(3.0));
        let p = tape.param(Tensor2::scalar(2.0));
        let prod = tape.mul(c, p).unwrap();
        tape.backward(prod).unwrap();
        assert!(tape.grad(c).is_none());
        assert_eq!(tape.grad(p).unwrap(), &[3.0]);
    }

    #[test]
    fn silu_gradient_at_0p7_matches_fd() {
        // standalone check at x = 0.7 with h = 1e-4 in f64
        let x = 0.7f64;
        let h = 1e-4;
        let silu = |v: f64| v / (1.0 + (-v).exp());
        let fd = (silu(x + h) - silu(x - h)) / (2.0 * h);
        let ad = kernels::silu_derivative(x);
        assert!((fd - ad).abs() / fd.abs() < 1e-5);
    }
}
