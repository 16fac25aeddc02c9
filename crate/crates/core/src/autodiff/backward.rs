//! Adjoints of every primitive, replayed in reverse record order.

use super::ops::gelu_grad;
use super::{Node, NodeId, Op};
use crate::kernels::{self, Exec};
use crate::real::Real;
use crate::tensor::Tensor;

pub(super) fn inputs<T>(op: &Op<T>) -> Vec<NodeId> {
    match op {
        Op::Leaf => vec![],
        Op::MatMul { a, b, .. }
        | Op::BatchMatMul { a, b, .. }
        | Op::Add { a, b }
        | Op::Sub { a, b }
        | Op::Mul { a, b } => vec![*a, *b],
        Op::AddBias { a, bias } => vec![*a, *bias],
        Op::Scale { a, .. }
        | Op::Relu { a }
        | Op::Gelu { a }
        | Op::Sqrt { a }
        | Op::Ln { a }
        | Op::Sum { a }
        | Op::Mean { a }
        | Op::Softmax { a, .. }
        | Op::Reindex { a, .. }
        | Op::Reshape { a } => vec![*a],
        Op::LayerNorm { x, gamma, beta, .. } | Op::BatchNorm { x, gamma, beta, .. } => {
            vec![*x, *gamma, *beta]
        }
        Op::Conv2d {
            x, kernel, bias, ..
        } => {
            let mut v = vec![*x, *kernel];
            v.extend(bias.iter().copied());
            v
        }
        Op::AvgPool { x, .. } => vec![*x],
        Op::Concat { inputs, .. } => inputs.clone(),
    }
}

struct Acc<'a, T> {
    nodes: &'a [Node<T>],
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Acc<'_, T> {
    /// Runs `f` on the gradient buffer of `id` if that node wants one.
    fn with(&mut self, id: NodeId, f: impl FnOnce(&mut [T])) {
        if !self.nodes[id].requires_grad {
            return;
        }
        let len = self.nodes[id].value.len();
        let buf = self.grads[id].get_or_insert_with(|| vec![T::zero(); len]);
        f(buf);
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id].requires_grad
    }

    fn add_scaled(&mut self, id: NodeId, g: &[T], s: T) {
        self.with(id, |buf| {
            for (b, &v) in buf.iter_mut().zip(g) {
                *b += s * v;
            }
        });
    }
}

pub(super) fn run<T: Real>(nodes: &[Node<T>], root: NodeId, exec: Exec) -> Vec<Option<Tensor<T>>> {
    let mut acc = Acc {
        nodes,
        grads: vec![None; nodes.len()],
    };
    acc.grads[root] = Some(vec![T::one()]);

    for id in (0..=root).rev() {
        let node = &nodes[id];
        if !node.requires_grad || matches!(node.op, Op::Leaf) {
            continue;
        }
        let Some(g) = acc.grads[id].take() else {
            continue;
        };
        let y = node.value.data();
        let val = |i: NodeId| nodes[i].value.data();
        match &node.op {
            Op::Leaf => unreachable!(),
            Op::MatMul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                if acc.wants(*a) {
                    let bv = val(*b);
                    acc.with(*a, |da| kernels::gemm_nt(exec, m, n, k, &g, bv, da));
                }
                if acc.wants(*b) {
                    let av = val(*a);
                    acc.with(*b, |db| kernels::gemm_tn(exec, k, m, n, av, &g, db));
                }
            }
            Op::BatchMatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                trans_b,
            } => {
                let (m, k, n, trans_b) = (*m, *k, *n, *trans_b);
                let (av, bv) = (val(*a), val(*b));
                let per = |i: usize| -> (Vec<T>, Vec<T>) {
                    let gi = &g[i * m * n..(i + 1) * m * n];
                    let ai = &av[i * m * k..(i + 1) * m * k];
                    let bi = &bv[i * k * n..(i + 1) * k * n];
                    let mut da = vec![T::zero(); m * k];
                    let mut db = vec![T::zero(); k * n];
                    if trans_b {
                        kernels::gemm_nn(Exec::Sequential, m, n, k, gi, bi, &mut da);
                        kernels::gemm_tn(Exec::Sequential, n, m, k, gi, ai, &mut db);
                    } else {
                        kernels::gemm_nt(Exec::Sequential, m, n, k, gi, bi, &mut da);
                        kernels::gemm_tn(Exec::Sequential, k, m, n, ai, gi, &mut db);
                    }
                    (da, db)
                };
                let parts = kernels::map_indices(exec, *batch, per);
                let (da, db): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
                acc.add_scaled(*a, &da.concat(), T::one());
                acc.add_scaled(*b, &db.concat(), T::one());
            }
            Op::Add { a, b } => {
                acc.add_scaled(*a, &g, T::one());
                acc.add_scaled(*b, &g, T::one());
            }
            Op::Sub { a, b } => {
                acc.add_scaled(*a, &g, T::one());
                acc.add_scaled(*b, &g, -T::one());
            }
            Op::Mul { a, b } => {
                let (av, bv) = (val(*a), val(*b));
                acc.with(*a, |da| {
                    for ((d, &gi), &v) in da.iter_mut().zip(&g).zip(bv) {
                        *d += gi * v;
                    }
                });
                acc.with(*b, |db| {
                    for ((d, &gi), &v) in db.iter_mut().zip(&g).zip(av) {
                        *d += gi * v;
                    }
                });
            }
            Op::Scale { a, s } => acc.add_scaled(*a, &g, *s),
            Op::Relu { a } => acc.with(*a, |da| {
                for ((d, &gi), &yi) in da.iter_mut().zip(&g).zip(y) {
                    if yi > T::zero() {
                        *d += gi;
                    }
                }
            }),
            Op::Gelu { a } => {
                let av = val(*a);
                acc.with(*a, |da| {
                    for ((d, &gi), &x) in da.iter_mut().zip(&g).zip(av) {
                        *d += gi * gelu_grad(x);
                    }
                });
            }
            Op::AddBias { a, bias } => {
                acc.add_scaled(*a, &g, T::one());
                let d = nodes[*bias].value.len();
                acc.with(*bias, |db| {
                    for row in g.chunks(d) {
                        for (o, &v) in db.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                });
            }
            Op::Sqrt { a } => acc.with(*a, |da| {
                for ((d, &gi), &yi) in da.iter_mut().zip(&g).zip(y) {
                    if yi > T::zero() {
                        *d += gi * T::lit(0.5) / yi;
                    }
                }
            }),
            Op::Ln { a } => {
                let av = val(*a);
                acc.with(*a, |da| {
                    for ((d, &gi), &x) in da.iter_mut().zip(&g).zip(av) {
                        *d += gi / x.max(T::min_positive_value());
                    }
                });
            }
            Op::Sum { a } => {
                let g0 = g[0];
                acc.with(*a, |da| da.iter_mut().for_each(|d| *d += g0));
            }
            Op::Mean { a } => {
                let g0 = g[0] / T::lit(nodes[*a].value.len() as f64);
                acc.with(*a, |da| da.iter_mut().for_each(|d| *d += g0));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = nodes[*gamma].value.len();
                let gam = val(*gamma);
                acc.with(*gamma, |dg| {
                    for (row_g, row_h) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            dg[j] += row_g[j] * row_h[j];
                        }
                    }
                });
                acc.with(*beta, |db| {
                    for row_g in g.chunks(d) {
                        for j in 0..d {
                            db[j] += row_g[j];
                        }
                    }
                });
                let dn = T::lit(d as f64);
                acc.with(*x, |dx| {
                    for (r, ((row_dx, row_g), row_h)) in dx
                        .chunks_mut(d)
                        .zip(g.chunks(d))
                        .zip(xhat.chunks(d))
                        .enumerate()
                    {
                        let mut mean_dh = T::zero();
                        let mut mean_dh_h = T::zero();
                        for j in 0..d {
                            let dh = row_g[j] * gam[j];
                            mean_dh += dh;
                            mean_dh_h += dh * row_h[j];
                        }
                        mean_dh /= dn;
                        mean_dh_h /= dn;
                        for j in 0..d {
                            let dh = row_g[j] * gam[j];
                            row_dx[j] += rstd[r] * (dh - mean_dh - row_h[j] * mean_dh_h);
                        }
                    }
                });
            }
            Op::Softmax {
                a,
                outer,
                len,
                inner,
            } => {
                let (outer, len, inner) = (*outer, *len, *inner);
                acc.with(*a, |da| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| o * len * inner + j * inner + i;
                            let dot: T = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
                            for j in 0..len {
                                da[at(j)] += y[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                });
            }
            Op::Conv2d {
                x,
                kernel,
                bias,
                geom,
                c_out,
                cols,
            } => {
                let (dx, dk) = kernels::conv2d_backward(
                    exec,
                    geom,
                    *c_out,
                    cols,
                    val(*kernel),
                    &g,
                    acc.wants(*x),
                    acc.wants(*kernel),
                );
                if let Some(dx) = dx {
                    acc.add_scaled(*x, &dx, T::one());
                }
                if let Some(dk) = dk {
                    acc.add_scaled(*kernel, &dk, T::one());
                }
                if let Some(b) = bias {
                    let ol = geom.out_len();
                    let c_out = *c_out;
                    acc.with(*b, |db| {
                        for (p, plane) in g.chunks(ol).enumerate() {
                            db[p % c_out] += plane.iter().copied().sum::<T>();
                        }
                    });
                }
            }
            Op::AvgPool {
                x,
                planes,
                h,
                w,
                window,
                stride,
            } => {
                let (h, w, window, stride) = (*h, *w, *window, *stride);
                let (oh, ow) = ((h - window) / stride + 1, (w - window) / stride + 1);
                let inv = T::one() / T::lit((window * window) as f64);
                acc.with(*x, |dx| {
                    for p in 0..*planes {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let gv = g[(p * oh + oy) * ow + ox] * inv;
                                for dy in 0..window {
                                    for dxx in 0..window {
                                        dx[p * h * w
                                            + (oy * stride + dy) * w
                                            + ox * stride
                                            + dxx] += gv;
                                    }
                                }
                            }
                        }
                    }
                });
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
                n,
                c,
                spatial,
                train,
            } => {
                let (n, c, spatial, train) = (*n, *c, *spatial, *train);
                let idx = |bi: usize, ch: usize, p: usize| (bi * c + ch) * spatial + p;
                let gam = val(*gamma);
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gh = vec![T::zero(); c];
                for bi in 0..n {
                    for ch in 0..c {
                        for p in 0..spatial {
                            let i = idx(bi, ch, p);
                            sum_g[ch] += g[i];
                            sum_gh[ch] += g[i] * xhat[i];
                        }
                    }
                }
                acc.with(*gamma, |dg| {
                    dg.iter_mut().zip(&sum_gh).for_each(|(d, &v)| *d += v)
                });
                acc.with(*beta, |db| {
                    db.iter_mut().zip(&sum_g).for_each(|(d, &v)| *d += v)
                });
                let cn = T::lit((n * spatial) as f64);
                acc.with(*x, |dx| {
                    for bi in 0..n {
                        for ch in 0..c {
                            let k = gam[ch] * rstd[ch];
                            for p in 0..spatial {
                                let i = idx(bi, ch, p);
                                dx[i] += if train {
                                    k * (g[i] - sum_g[ch] / cn - xhat[i] * sum_gh[ch] / cn)
                                } else {
                                    k * g[i]
                                };
                            }
                        }
                    }
                });
            }
            Op::Concat {
                inputs,
                outer,
                widths,
            } => {
                let total: usize = widths.iter().sum();
                let mut offset = 0;
                for (&inp, &w) in inputs.iter().zip(widths) {
                    acc.with(inp, |d| {
                        for o in 0..*outer {
                            let src = &g[o * total + offset..o * total + offset + w];
                            for (dv, &gv) in d[o * w..(o + 1) * w].iter_mut().zip(src) {
                                *dv += gv;
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::Reindex { a, map } => acc.with(*a, |da| {
                for (&src, &gv) in map.iter().zip(&g) {
                    da[src] += gv;
                }
            }),
            Op::Reshape { a } => acc.add_scaled(*a, &g, T::one()),
        }
        // Interior nodes release their buffers; leaves keep theirs.
    }

    acc.grads
        .into_iter()
        .zip(nodes)
        .map(|(g, n)| g.map(|g| Tensor::from_parts(n.value.shape().to_vec(), g)))
        .collect()
}
