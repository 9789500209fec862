//! Forward operators. Every op records enough state for its backward rule
//! in `backward.rs`.

use crate::error::{AutodiffError, Result};
use crate::real::Real;
use crate::tape::{Bcast, GruSaved, Op, Tape, Var};
use crate::tensor::Tensor;

const NORM_EPS: f64 = 1e-12;
const LN_EPS: f64 = 1e-5;

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `out[m,n] += a[m,k] * b[k,n]`
pub(crate) fn matmul_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

fn broadcast(a: &[usize], b: &[usize]) -> Option<(Vec<usize>, Bcast)> {
    if a == b {
        return Some((a.to_vec(), Bcast::Same));
    }
    if a.len() >= b.len() && a.ends_with(b) {
        return Some((a.to_vec(), Bcast::BSuffix(b.iter().product())));
    }
    if b.len() > a.len() && b.ends_with(a) {
        return Some((b.to_vec(), Bcast::ASuffix(a.iter().product())));
    }
    let rank = a.len().max(b.len());
    let pad = |s: &[usize]| {
        let mut v = vec![1; rank - s.len()];
        v.extend_from_slice(s);
        v
    };
    let (pa, pb) = (pad(a), pad(b));
    let mut out = Vec::with_capacity(rank);
    for (&x, &y) in pa.iter().zip(&pb) {
        match (x, y) {
            _ if x == y => out.push(x),
            (1, _) => out.push(y),
            (_, 1) => out.push(x),
            _ => return None,
        }
    }
    let strides = |s: &[usize]| {
        let mut st = vec![0; rank];
        let mut acc = 1;
        for d in (0..rank).rev() {
            st[d] = if s[d] == 1 { 0 } else { acc };
            acc *= s[d];
        }
        st
    };
    let (sa, sb) = (strides(&pa), strides(&pb));
    let total: usize = out.iter().product();
    let mut ia = Vec::with_capacity(total);
    let mut ib = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    for _ in 0..total {
        ia.push(idx.iter().zip(&sa).map(|(i, s)| i * s).sum());
        ib.push(idx.iter().zip(&sb).map(|(i, s)| i * s).sum());
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < out[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Some((out, Bcast::General(ia, ib)))
}

/// `(outer, axis_len, inner)` view of `shape` around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Real> Tape<T> {
    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(a).map(f);
        let rg = self.requires_grad(a);
        self.push(value, op, rg)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: impl FnOnce(Bcast) -> Op<T>,
    ) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (shape, map) = broadcast(sa, sb).ok_or_else(|| AutodiffError::shapes(name, &[sa, sb]))?;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let n: usize = shape.iter().product();
        let data = match &map {
            Bcast::Same => va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect(),
            _ => (0..n).map(|o| f(va[map.a_index(o)], vb[map.b_index(o)])).collect(),
        };
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(shape, data)?, op(map), rg))
    }

    /// Matrix product. `a` may carry extra leading axes, which are treated as
    /// rows: `[.., k] x [k, n] -> [.., n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.is_empty() || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(AutodiffError::shapes("matmul", &[sa, sb]));
        }
        let (k, n) = (sb[0], sb[1]);
        let m = self.value(a).outer_len();
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        let mut out = vec![T::zero(); m * n];
        matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul { a, b, m, k, n }, rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(AutodiffError::shapes("transpose", &[s]));
        }
        let (r, c) = (s[0], s[1]);
        let v = self.value(a).data();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = v[i * c + j];
            }
        }
        let rg = self.requires_grad(a);
        Ok(self.push(Tensor::new(vec![c, r], out)?, Op::Transpose { a }, rg))
    }

    /// Elementwise sum with numpy-style broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, |map| Op::Add { a, b, map })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, |map| Op::Sub { a, b, map })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, |map| Op::Mul { a, b, map })
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        self.unary(a, |x| x * c, Op::Scale { a, c })
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar { a })
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -T::one());
        self.add_scalar(neg, T::one())
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > T::zero() { x } else { T::zero() }, Op::Relu { a })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh { a })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid { a })
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.exp(), Op::Exp { a })
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.ln(), Op::Log { a })
    }

    /// Row-wise softmax over the last axis of `a / tau`.
    pub fn softmax(&mut self, a: Var, tau: T) -> Result<Var> {
        if !(tau > T::zero()) {
            return Err(AutodiffError::invalid("softmax", "temperature must be positive"));
        }
        let x = self.value(a);
        let w = x.last_dim();
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(w) {
            let mx = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v / tau));
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v / tau - mx).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let shape = x.shape().to_vec();
        let rg = self.requires_grad(a);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { a, tau }, rg))
    }

    /// `log sum_j exp(a[.., j])` over the last axis, restricted to entries
    /// where `mask` is true (all entries when `mask` is `None`). Every row
    /// must keep at least one entry.
    pub fn logsumexp(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let x = self.value(a);
        if let Some(m) = mask {
            if m.len() != x.numel() {
                return Err(AutodiffError::invalid(
                    "logsumexp",
                    format!("mask has {} entries for shape {:?}", m.len(), x.shape()),
                ));
            }
        }
        let w = x.last_dim();
        let rows = x.outer_len();
        let keep = |i: usize| mask.map_or(true, |m| m[i]);
        let mut out = Vec::with_capacity(rows);
        let mut probs = vec![T::zero(); x.numel()];
        for r in 0..rows {
            let row = &x.data()[r * w..(r + 1) * w];
            let mut mx = T::neg_infinity();
            for (j, &v) in row.iter().enumerate() {
                if keep(r * w + j) {
                    mx = mx.max(v);
                }
            }
            if mx == T::neg_infinity() {
                return Err(AutodiffError::invalid("logsumexp", format!("row {r} is fully masked")));
            }
            let mut s = T::zero();
            for (j, &v) in row.iter().enumerate() {
                if keep(r * w + j) {
                    let e = (v - mx).exp();
                    probs[r * w + j] = e;
                    s += e;
                }
            }
            for p in &mut probs[r * w..(r + 1) * w] {
                *p /= s;
            }
            out.push(mx + s.ln());
        }
        let shape = x.shape()[..x.rank().saturating_sub(1)].to_vec();
        let rg = self.requires_grad(a);
        Ok(self.push(Tensor::new(shape, out)?, Op::LogSumExp { a, probs }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.value(a).data().iter().copied().sum();
        let rg = self.requires_grad(a);
        self.push(Tensor::scalar(s), Op::Sum { a }, rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let s: T = x.data().iter().copied().sum();
        let m = s / T::lit(x.numel().max(1) as f64);
        let rg = self.requires_grad(a);
        self.push(Tensor::scalar(m), Op::Mean { a }, rg)
    }

    /// Sum over the last axis.
    pub fn sum_last(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let w = x.last_dim();
        let out: Vec<T> = x.data().chunks(w).map(|r| r.iter().copied().sum()).collect();
        let shape = x.shape()[..x.rank().saturating_sub(1)].to_vec();
        let rg = self.requires_grad(a);
        let t = Tensor::new(shape, out).expect("sum_last shape");
        self.push(t, Op::SumLast { a }, rg)
    }

    /// Scales every row (last axis) to unit Euclidean norm.
    pub fn l2_normalize(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let w = x.last_dim();
        let mut out = x.data().to_vec();
        let mut norms = Vec::with_capacity(x.outer_len());
        for row in out.chunks_mut(w) {
            let n = row.iter().map(|&v| v * v).sum::<T>().sqrt().max(T::lit(NORM_EPS));
            for v in row.iter_mut() {
                *v /= n;
            }
            norms.push(n);
        }
        let shape = x.shape().to_vec();
        let rg = self.requires_grad(a);
        let t = Tensor::new(shape, out).expect("l2 shape");
        self.push(t, Op::L2Normalize { a, norms }, rg)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| AutodiffError::invalid("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(AutodiffError::invalid(
                "concat",
                format!("axis {axis} out of range for {base:?}"),
            ));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let ok = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !ok {
                return Err(AutodiffError::shapes("concat", &[&base, s]));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let v = self.value(p);
                let chunk = v.shape()[axis] * inner;
                out.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = self.any_grad(parts);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Half-open range `start..end` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() || start > end || end > s[axis] {
            return Err(AutodiffError::invalid(
                "slice",
                format!("range {start}..{end} on axis {axis} of {s:?}"),
            ));
        }
        let (outer, len, inner) = split_axis(&s, axis);
        let v = self.value(a).data();
        let mut out = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            let base = o * len * inner;
            out.extend_from_slice(&v[base + start * inner..base + end * inner]);
        }
        let mut shape = s;
        shape[axis] = end - start;
        let rg = self.requires_grad(a);
        Ok(self.push(Tensor::new(shape, out)?, Op::Slice { a, axis, start }, rg))
    }

    /// Index `index` along `axis`, dropping that axis.
    pub fn select(&mut self, a: Var, axis: usize, index: usize) -> Result<Var> {
        let sl = self.slice(a, axis, index, index + 1)?;
        let mut shape = self.shape(sl).to_vec();
        shape.remove(axis);
        self.reshape(sl, shape)
    }

    /// Stacks equally shaped inputs along a new `axis`.
    pub fn stack(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| AutodiffError::invalid("stack", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis > base.len() {
            return Err(AutodiffError::invalid(
                "stack",
                format!("axis {axis} out of range for {base:?}"),
            ));
        }
        for &p in parts {
            if self.shape(p) != base.as_slice() {
                return Err(AutodiffError::shapes("stack", &[&base, self.shape(p)]));
            }
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis..].iter().product();
        let mut out = Vec::with_capacity(outer * parts.len() * inner);
        for o in 0..outer {
            for &p in parts {
                out.extend_from_slice(&self.value(p).data()[o * inner..(o + 1) * inner]);
            }
        }
        let mut shape = base;
        shape.insert(axis, parts.len());
        let rg = self.any_grad(parts);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Stack {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        let rg = self.requires_grad(a);
        Ok(self.push(t, Op::Reshape { a }, rg))
    }

    /// Rows (axis 0) of `a` at `idx`; indices may repeat.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let x = self.value(a);
        let s = x.shape();
        if s.is_empty() {
            return Err(AutodiffError::invalid("gather_rows", "scalar input"));
        }
        let rows = s[0];
        let w = if rows == 0 { 0 } else { x.numel() / rows };
        let mut out = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            if i >= rows {
                return Err(AutodiffError::invalid("gather_rows", format!("row {i} of {rows}")));
            }
            out.extend_from_slice(&x.data()[i * w..(i + 1) * w]);
        }
        let mut shape = s.to_vec();
        shape[0] = idx.len();
        let rg = self.requires_grad(a);
        Ok(self.push(Tensor::new(shape, out)?, Op::GatherRows { a, idx: idx.to_vec() }, rg))
    }

    /// `out[i] = a[i, idx[i]]` for a matrix `a`.
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let x = self.value(a);
        let s = x.shape();
        if s.len() != 2 || s[0] != idx.len() || idx.iter().any(|&j| j >= s[1]) {
            return Err(AutodiffError::invalid(
                "pick",
                format!("{} indices into {s:?}", idx.len()),
            ));
        }
        let out: Vec<T> = idx.iter().enumerate().map(|(i, &j)| x.data()[i * s[1] + j]).collect();
        let rg = self.requires_grad(a);
        Ok(self.push(Tensor::from_vec(out), Op::Pick { a, idx: idx.to_vec() }, rg))
    }

    /// Mean over axis 1 of `[B, T, d]` counting only positions where
    /// `mask[b * T + t]` is true.
    pub fn masked_mean(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 3 || mask.len() != s[0] * s[1] {
            return Err(AutodiffError::invalid(
                "masked_mean",
                format!("mask of {} for shape {s:?}", mask.len()),
            ));
        }
        let (b, t, d) = (s[0], s[1], s[2]);
        let x = self.value(a).data();
        let mut out = vec![T::zero(); b * d];
        let mut counts = vec![0usize; b];
        for i in 0..b {
            let orow = &mut out[i * d..(i + 1) * d];
            for j in 0..t {
                if mask[i * t + j] {
                    counts[i] += 1;
                    for (o, &v) in orow.iter_mut().zip(&x[(i * t + j) * d..(i * t + j + 1) * d]) {
                        *o += v;
                    }
                }
            }
            if counts[i] == 0 {
                return Err(AutodiffError::invalid(
                    "masked_mean",
                    format!("sample {i} has no valid steps"),
                ));
            }
            let c = T::lit(counts[i] as f64);
            for o in orow.iter_mut() {
                *o /= c;
            }
        }
        let rg = self.requires_grad(a);
        Ok(self.push(
            Tensor::new(vec![b, d], out)?,
            Op::MaskedMean {
                a,
                mask: mask.to_vec(),
                counts,
            },
            rg,
        ))
    }

    /// Multi-head scaled dot-product attention over `[B, T, d]` inputs.
    /// Keys where `key_mask[b * T + t]` is false receive zero weight.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, key_mask: &[bool]) -> Result<Var> {
        let s = self.shape(q).to_vec();
        if s.len() != 3 || self.shape(k) != s.as_slice() || self.shape(v) != s.as_slice() {
            return Err(AutodiffError::shapes("attention", &[&s, self.shape(k), self.shape(v)]));
        }
        let (b, t, d) = (s[0], s[1], s[2]);
        if heads == 0 || d % heads != 0 {
            return Err(AutodiffError::invalid(
                "attention",
                format!("{heads} heads do not divide width {d}"),
            ));
        }
        if key_mask.len() != b * t {
            return Err(AutodiffError::invalid("attention", "mask length"));
        }
        let dh = d / heads;
        let scale = T::lit(1.0 / (dh as f64).sqrt());
        let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![T::zero(); b * heads * t * t];
        let mut out = vec![T::zero(); b * t * d];
        let mut scores = vec![T::zero(); t];
        for bi in 0..b {
            let valid = &key_mask[bi * t..(bi + 1) * t];
            if !valid.iter().any(|&m| m) {
                return Err(AutodiffError::invalid(
                    "attention",
                    format!("sample {bi} has no valid keys"),
                ));
            }
            for h in 0..heads {
                let off = h * dh;
                for i in 0..t {
                    let qi = &qv[(bi * t + i) * d + off..(bi * t + i) * d + off + dh];
                    let mut mx = T::neg_infinity();
                    for j in 0..t {
                        if valid[j] {
                            let kj = &kv[(bi * t + j) * d + off..(bi * t + j) * d + off + dh];
                            let sc = qi.iter().zip(kj).map(|(&x, &y)| x * y).sum::<T>() * scale;
                            scores[j] = sc;
                            mx = mx.max(sc);
                        }
                    }
                    let prow = &mut probs[((bi * heads + h) * t + i) * t..((bi * heads + h) * t + i + 1) * t];
                    let mut sum = T::zero();
                    for j in 0..t {
                        if valid[j] {
                            let e = (scores[j] - mx).exp();
                            prow[j] = e;
                            sum += e;
                        }
                    }
                    let orow = &mut out[(bi * t + i) * d + off..(bi * t + i) * d + off + dh];
                    for j in 0..t {
                        if valid[j] {
                            prow[j] /= sum;
                            let p = prow[j];
                            let vj = &vv[(bi * t + j) * d + off..(bi * t + j) * d + off + dh];
                            for (o, &x) in orow.iter_mut().zip(vj) {
                                *o += p * x;
                            }
                        }
                    }
                }
            }
        }
        let rg = self.any_grad(&[q, k, v]);
        Ok(self.push(
            Tensor::new(s, out)?,
            Op::Attention {
                q,
                k,
                v,
                heads,
                mask: key_mask.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// One GRU step.
    ///
    /// `xp` is the input projection `[B, 3H]` (gate order r, z, n) with the
    /// input bias already added; `w` is the recurrent weight `[H, 3H]` and
    /// `bias` the recurrent bias `[3H]`. Rows whose `step_mask` entry is
    /// false carry `h` through unchanged.
    pub fn gru_cell(&mut self, xp: Var, h: Var, w: Var, bias: Var, step_mask: &[bool]) -> Result<Var> {
        let sh = self.shape(h).to_vec();
        if sh.len() != 2 {
            return Err(AutodiffError::shapes("gru_cell", &[&sh]));
        }
        let (b, hd) = (sh[0], sh[1]);
        let g = 3 * hd;
        if self.shape(xp) != [b, g] || self.shape(w) != [hd, g] || self.shape(bias) != [g] || step_mask.len() != b {
            return Err(AutodiffError::shapes(
                "gru_cell",
                &[self.shape(xp), &sh, self.shape(w), self.shape(bias)],
            ));
        }
        let hv = self.value(h).data();
        let mut hw = vec![T::zero(); b * g];
        for row in hw.chunks_mut(g) {
            row.copy_from_slice(self.value(bias).data());
        }
        matmul_acc(hv, self.value(w).data(), &mut hw, b, hd, g);
        let xv = self.value(xp).data();
        let mut out = hv.to_vec();
        let mut saved = GruSaved {
            r: vec![T::zero(); b * hd],
            z: vec![T::zero(); b * hd],
            n: vec![T::zero(); b * hd],
            hw_n: vec![T::zero(); b * hd],
        };
        for i in 0..b {
            if !step_mask[i] {
                continue;
            }
            for j in 0..hd {
                let r = sigmoid(xv[i * g + j] + hw[i * g + j]);
                let z = sigmoid(xv[i * g + hd + j] + hw[i * g + hd + j]);
                let hn = hw[i * g + 2 * hd + j];
                let n = (xv[i * g + 2 * hd + j] + r * hn).tanh();
                let k = i * hd + j;
                out[k] = (T::one() - z) * n + z * hv[k];
                saved.r[k] = r;
                saved.z[k] = z;
                saved.n[k] = n;
                saved.hw_n[k] = hn;
            }
        }
        let rg = self.any_grad(&[xp, h, w, bias]);
        Ok(self.push(
            Tensor::new(sh, out)?,
            Op::GruCell {
                xp,
                h,
                w,
                bias,
                mask: step_mask.to_vec(),
                saved,
            },
            rg,
        ))
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, a: Var, gamma: Var, beta: Var) -> Result<Var> {
        let x = self.value(a);
        let d = x.last_dim();
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(AutodiffError::shapes(
                "layer_norm",
                &[x.shape(), self.shape(gamma), self.shape(beta)],
            ));
        }
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let dn = T::lit(d as f64);
        let mut out = Vec::with_capacity(x.numel());
        let mut xhat = Vec::with_capacity(x.numel());
        let mut rstd = Vec::with_capacity(x.outer_len());
        for row in x.data().chunks(d) {
            let mu = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / dn;
            let rs = T::one() / (var + T::lit(LN_EPS)).sqrt();
            for (j, &v) in row.iter().enumerate() {
                let xh = (v - mu) * rs;
                xhat.push(xh);
                out.push(gv[j] * xh + bv[j]);
            }
            rstd.push(rs);
        }
        let shape = x.shape().to_vec();
        let rg = self.any_grad(&[a, gamma, beta]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                a,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Inverted dropout: entries with `keep[i] == false` are zeroed and the
    /// rest scaled by `1 / (1 - p)`.
    pub fn dropout(&mut self, a: Var, p: f64, keep: &[bool]) -> Result<Var> {
        if keep.len() != self.value(a).numel() || !(0.0..1.0).contains(&p) {
            return Err(AutodiffError::invalid("dropout", "mask length or rate"));
        }
        let s = T::lit(1.0 / (1.0 - p));
        let m = Tensor::new(
            self.shape(a).to_vec(),
            keep.iter().map(|&k| if k { s } else { T::zero() }).collect(),
        )?;
        let mv = self.constant(m);
        self.mul(a, mv)
    }
}
