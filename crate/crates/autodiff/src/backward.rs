use crate::ops::split_axis;
use crate::real::Real;
use crate::tape::{Bcast, Op, Tape, Var};

impl<T: Real> Tape<T> {
    /// Pushes the output gradient `g` of node `i` into its parents.
    pub(crate) fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n } => {
                let (av, bv) = (self.value(a).data(), self.value(b).data());
                if let Some(ga) = self.grad_buf(grads, a) {
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            ga[r * k + p] += grow.iter().zip(brow).map(|(&x, &y)| x * y).sum::<T>();
                        }
                    }
                }
                if let Some(gb) = self.grad_buf(grads, b) {
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let a_rp = av[r * k + p];
                            for (o, &x) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += a_rp * x;
                            }
                        }
                    }
                }
            }
            &Op::Transpose { a } => {
                let s = self.shape(a);
                let (r, c) = (s[0], s[1]);
                if let Some(ga) = self.grad_buf(grads, a) {
                    for x in 0..r {
                        for y in 0..c {
                            ga[x * c + y] += g[y * r + x];
                        }
                    }
                }
            }
            Op::Add { a, b, map } => {
                self.reduce_into(grads, *a, g, map, true, |x| x);
                self.reduce_into(grads, *b, g, map, false, |x| x);
            }
            Op::Sub { a, b, map } => {
                self.reduce_into(grads, *a, g, map, true, |x| x);
                self.reduce_into(grads, *b, g, map, false, |x| -x);
            }
            Op::Mul { a, b, map } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.grad_buf(grads, *a) {
                    for (o, &go) in g.iter().enumerate() {
                        ga[map.a_index(o)] += go * bv[map.b_index(o)];
                    }
                }
                if let Some(gb) = self.grad_buf(grads, *b) {
                    for (o, &go) in g.iter().enumerate() {
                        gb[map.b_index(o)] += go * av[map.a_index(o)];
                    }
                }
            }
            &Op::Scale { a, c } => self.each(grads, a, g, |_, go| go * c),
            &Op::AddScalar { a } => self.each(grads, a, g, |_, go| go),
            &Op::Relu { a } => {
                let x = self.value(a).data();
                self.each(grads, a, g, |j, go| if x[j] > T::zero() { go } else { T::zero() });
            }
            &Op::Tanh { a } => self.each(grads, a, g, |j, go| go * (T::one() - out[j] * out[j])),
            &Op::Sigmoid { a } => self.each(grads, a, g, |j, go| go * out[j] * (T::one() - out[j])),
            &Op::Exp { a } => self.each(grads, a, g, |j, go| go * out[j]),
            &Op::Log { a } => {
                let x = self.value(a).data();
                self.each(grads, a, g, |j, go| go / x[j]);
            }
            &Op::Softmax { a, tau } => {
                let w = node.value.last_dim();
                if let Some(ga) = self.grad_buf(grads, a) {
                    for r in 0..node.value.outer_len() {
                        let y = &out[r * w..(r + 1) * w];
                        let gy = &g[r * w..(r + 1) * w];
                        let dot: T = y.iter().zip(gy).map(|(&p, &q)| p * q).sum();
                        for j in 0..w {
                            ga[r * w + j] += y[j] * (gy[j] - dot) / tau;
                        }
                    }
                }
            }
            Op::LogSumExp { a, probs } => {
                let w = self.value(*a).last_dim();
                if let Some(ga) = self.grad_buf(grads, *a) {
                    for (j, gaj) in ga.iter_mut().enumerate() {
                        *gaj += g[j / w] * probs[j];
                    }
                }
            }
            &Op::Sum { a } => self.each(grads, a, g, |_, _| g[0]),
            &Op::Mean { a } => {
                let n = T::lit(self.value(a).numel().max(1) as f64);
                self.each(grads, a, g, |_, _| g[0] / n);
            }
            &Op::SumLast { a } => {
                let w = self.value(a).last_dim();
                self.each(grads, a, g, |j, _| g[j / w]);
            }
            Op::L2Normalize { a, norms } => {
                let w = node.value.last_dim();
                if let Some(ga) = self.grad_buf(grads, *a) {
                    for (r, &nr) in norms.iter().enumerate() {
                        let y = &out[r * w..(r + 1) * w];
                        let gy = &g[r * w..(r + 1) * w];
                        let dot: T = y.iter().zip(gy).map(|(&p, &q)| p * q).sum();
                        for j in 0..w {
                            ga[r * w + j] += (gy[j] - y[j] * dot) / nr;
                        }
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let shape = node.value.shape();
                let (outer, total, inner) = split_axis(shape, *axis);
                let mut offset = 0;
                for &p in parts {
                    let len = self.shape(p)[*axis];
                    if let Some(gp) = self.grad_buf(grads, p) {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                            for (d, &s) in gp[o * len * inner..(o + 1) * len * inner].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                    offset += len;
                }
            }
            &Op::Slice { a, axis, start } => {
                let (outer, len, inner) = split_axis(self.shape(a), axis);
                let w = node.value.shape()[axis];
                if let Some(ga) = self.grad_buf(grads, a) {
                    for o in 0..outer {
                        let dst = &mut ga[(o * len + start) * inner..(o * len + start + w) * inner];
                        for (d, &s) in dst.iter_mut().zip(&g[o * w * inner..(o + 1) * w * inner]) {
                            *d += s;
                        }
                    }
                }
            }
            Op::Stack { parts, axis } => {
                let base = self.shape(parts[0]);
                let inner: usize = base[*axis..].iter().product();
                let outer: usize = base[..*axis].iter().product();
                let np = parts.len();
                for (pi, &p) in parts.iter().enumerate() {
                    if let Some(gp) = self.grad_buf(grads, p) {
                        for o in 0..outer {
                            let src = &g[(o * np + pi) * inner..(o * np + pi + 1) * inner];
                            for (d, &s) in gp[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                }
            }
            &Op::Reshape { a } => self.each(grads, a, g, |j, _| g[j]),
            Op::GatherRows { a, idx } => {
                let x = self.value(*a);
                let rows = x.shape()[0];
                let w = if rows == 0 { 0 } else { x.numel() / rows };
                if let Some(ga) = self.grad_buf(grads, *a) {
                    for (o, &r) in idx.iter().enumerate() {
                        for (d, &s) in ga[r * w..(r + 1) * w].iter_mut().zip(&g[o * w..(o + 1) * w]) {
                            *d += s;
                        }
                    }
                }
            }
            Op::Pick { a, idx } => {
                let w = self.value(*a).last_dim();
                if let Some(ga) = self.grad_buf(grads, *a) {
                    for (r, &j) in idx.iter().enumerate() {
                        ga[r * w + j] += g[r];
                    }
                }
            }
            Op::MaskedMean { a, mask, counts } => {
                let s = self.shape(*a);
                let (b, t, d) = (s[0], s[1], s[2]);
                if let Some(ga) = self.grad_buf(grads, *a) {
                    for i in 0..b {
                        let c = T::lit(counts[i] as f64);
                        for j in 0..t {
                            if mask[i * t + j] {
                                let dst = &mut ga[(i * t + j) * d..(i * t + j + 1) * d];
                                for (x, &y) in dst.iter_mut().zip(&g[i * d..(i + 1) * d]) {
                                    *x += y / c;
                                }
                            }
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                mask,
                probs,
            } => {
                self.attention_backward(*q, *k, *v, *heads, mask, probs, g, grads);
            }
            Op::GruCell {
                xp,
                h,
                w,
                bias,
                mask,
                saved,
            } => {
                let s = self.shape(*h);
                let (b, hd) = (s[0], s[1]);
                let gw = 3 * hd;
                let mut dpre = vec![T::zero(); b * gw];
                let mut dh = vec![T::zero(); b * hd];
                let hv = self.value(*h).data();
                for i in 0..b {
                    for j in 0..hd {
                        let kx = i * hd + j;
                        let go = g[kx];
                        if !mask[i] {
                            dh[kx] += go;
                            continue;
                        }
                        let (r, z, n, hn) = (saved.r[kx], saved.z[kx], saved.n[kx], saved.hw_n[kx]);
                        let dn = go * (T::one() - z);
                        let dz = go * (hv[kx] - n);
                        dh[kx] += go * z;
                        let dn_pre = dn * (T::one() - n * n);
                        let dr = dn_pre * hn;
                        dpre[i * gw + j] = dr * r * (T::one() - r);
                        dpre[i * gw + hd + j] = dz * z * (T::one() - z);
                        dpre[i * gw + 2 * hd + j] = dn_pre;
                    }
                }
                // The n-gate's recurrent term enters scaled by r.
                let mut dhw = dpre.clone();
                for i in 0..b {
                    for j in 0..hd {
                        dhw[i * gw + 2 * hd + j] = dpre[i * gw + 2 * hd + j] * saved.r[i * hd + j];
                    }
                }
                if let Some(gx) = self.grad_buf(grads, *xp) {
                    for (d, &s) in gx.iter_mut().zip(&dpre) {
                        *d += s;
                    }
                }
                let wv = self.value(*w).data();
                if let Some(gwt) = self.grad_buf(grads, *w) {
                    for i in 0..b {
                        for p in 0..hd {
                            let hp = hv[i * hd + p];
                            for (d, &s) in gwt[p * gw..(p + 1) * gw].iter_mut().zip(&dhw[i * gw..(i + 1) * gw]) {
                                *d += hp * s;
                            }
                        }
                    }
                }
                if let Some(gb) = self.grad_buf(grads, *bias) {
                    for i in 0..b {
                        for (d, &s) in gb.iter_mut().zip(&dhw[i * gw..(i + 1) * gw]) {
                            *d += s;
                        }
                    }
                }
                if let Some(gh) = self.grad_buf(grads, *h) {
                    for i in 0..b {
                        let drow = &dhw[i * gw..(i + 1) * gw];
                        for p in 0..hd {
                            let wrow = &wv[p * gw..(p + 1) * gw];
                            let s: T = drow.iter().zip(wrow).map(|(&x, &y)| x * y).sum();
                            gh[i * hd + p] += dh[i * hd + p] + s;
                        }
                    }
                }
            }
            Op::LayerNorm {
                a,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = node.value.last_dim();
                let gv = self.value(*gamma).data();
                if let Some(gg) = self.grad_buf(grads, *gamma) {
                    for (j, (&go, &xh)) in g.iter().zip(xhat).enumerate() {
                        gg[j % d] += go * xh;
                    }
                }
                if let Some(gb) = self.grad_buf(grads, *beta) {
                    for (j, &go) in g.iter().enumerate() {
                        gb[j % d] += go;
                    }
                }
                if let Some(ga) = self.grad_buf(grads, *a) {
                    let dn = T::lit(d as f64);
                    for (r, &rs) in rstd.iter().enumerate() {
                        let base = r * d;
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for j in 0..d {
                            let dxh = g[base + j] * gv[j];
                            m1 += dxh;
                            m2 += dxh * xhat[base + j];
                        }
                        m1 /= dn;
                        m2 /= dn;
                        for j in 0..d {
                            let dxh = g[base + j] * gv[j];
                            ga[base + j] += rs * (dxh - m1 - xhat[base + j] * m2);
                        }
                    }
                }
            }
        }
    }

    fn each(&self, grads: &mut [Option<Vec<T>>], a: Var, g: &[T], f: impl Fn(usize, T) -> T) {
        if let Some(ga) = self.grad_buf(grads, a) {
            let n = ga.len();
            for j in 0..n {
                ga[j] += f(j, if g.len() == n { g[j] } else { g[0] });
            }
        }
    }

    /// Sums the output gradient back onto a (possibly broadcast) input.
    fn reduce_into(&self, grads: &mut [Option<Vec<T>>], v: Var, g: &[T], map: &Bcast, is_a: bool, f: impl Fn(T) -> T) {
        if let Some(gv) = self.grad_buf(grads, v) {
            for (o, &go) in g.iter().enumerate() {
                let ix = if is_a { map.a_index(o) } else { map.b_index(o) };
                gv[ix] += f(go);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        mask: &[bool],
        probs: &[T],
        g: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let s = self.shape(q);
        let (b, t, d) = (s[0], s[1], s[2]);
        let dh = d / heads;
        let scale = T::lit(1.0 / (dh as f64).sqrt());
        let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut dq = vec![T::zero(); b * t * d];
        let mut dk = vec![T::zero(); b * t * d];
        let mut dv = vec![T::zero(); b * t * d];
        let mut dp = vec![T::zero(); t];
        for bi in 0..b {
            let valid = &mask[bi * t..(bi + 1) * t];
            for h in 0..heads {
                let off = h * dh;
                let at = |row: usize| (bi * t + row) * d + off..(bi * t + row) * d + off + dh;
                for i in 0..t {
                    let prow = &probs[((bi * heads + h) * t + i) * t..((bi * heads + h) * t + i + 1) * t];
                    let gi = &g[at(i)];
                    let mut dot = T::zero();
                    for j in 0..t {
                        if valid[j] {
                            let vj = &vv[at(j)];
                            dp[j] = gi.iter().zip(vj).map(|(&x, &y)| x * y).sum();
                            dot += prow[j] * dp[j];
                        }
                    }
                    for j in 0..t {
                        if !valid[j] {
                            continue;
                        }
                        let p = prow[j];
                        for c in 0..dh {
                            dv[(bi * t + j) * d + off + c] += p * gi[c];
                        }
                        let ds = p * (dp[j] - dot) * scale;
                        for c in 0..dh {
                            dq[(bi * t + i) * d + off + c] += ds * kv[(bi * t + j) * d + off + c];
                            dk[(bi * t + j) * d + off + c] += ds * qv[(bi * t + i) * d + off + c];
                        }
                    }
                }
            }
        }
        for (var, buf) in [(q, dq), (k, dk), (v, dv)] {
            if let Some(gx) = self.grad_buf(grads, var) {
                for (x, y) in gx.iter_mut().zip(buf) {
                    *x += y;
                }
            }
        }
    }
}
