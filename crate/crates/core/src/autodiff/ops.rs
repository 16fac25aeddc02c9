//! Forward definitions of the differentiable primitives.

use std::rc::Rc;
use std::str::FromStr;

use super::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::real::Real;
use crate::tensor::{numel, Tensor};

/// Tag for [`Tape::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Mul,
    Relu,
    Gelu,
    Scale,
}

impl FromStr for ElementwiseOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "add" => ElementwiseOp::Add,
            "mul" => ElementwiseOp::Mul,
            "relu" => ElementwiseOp::Relu,
            "gelu" => ElementwiseOp::Gelu,
            "scale" => ElementwiseOp::Scale,
            other => return Err(Error::UnknownOp(other.to_string())),
        })
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-form GELU.
pub(crate) fn gelu<T: Real>(x: T) -> T {
    let u = T::lit(GELU_C) * (x + T::lit(GELU_A) * x * x * x);
    T::lit(0.5) * x * (T::one() + u.tanh())
}

pub(crate) fn gelu_grad<T: Real>(x: T) -> T {
    let u = T::lit(GELU_C) * (x + T::lit(GELU_A) * x * x * x);
    let t = u.tanh();
    let du = T::lit(GELU_C) * (T::one() + T::lit(3.0 * GELU_A) * x * x);
    T::lit(0.5) * (T::one() + t) + T::lit(0.5) * x * (T::one() - t * t) * du
}

/// `(outer, len, inner)` strides for reducing along `axis`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    Tensor::from_parts(
        a.shape().to_vec(),
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect(),
    )
}

impl<T: Real> Tape<T> {
    /// Tagged elementwise dispatch. `Scale` reads its factor from `scalar`.
    pub fn elementwise<'t>(
        &'t self,
        op: ElementwiseOp,
        a: Var<'t, T>,
        b: Option<Var<'t, T>>,
        scalar: Option<T>,
    ) -> Result<Var<'t, T>> {
        let need_b = |b: Option<Var<'t, T>>| {
            b.ok_or_else(|| Error::invalid("elementwise", format!("{op:?} needs a second operand")))
        };
        match op {
            ElementwiseOp::Add => a.add(need_b(b)?),
            ElementwiseOp::Mul => a.mul(need_b(b)?),
            ElementwiseOp::Relu => Ok(a.relu()),
            ElementwiseOp::Gelu => Ok(a.gelu()),
            ElementwiseOp::Scale => {
                let s =
                    scalar.ok_or_else(|| Error::invalid("elementwise", "scale needs a factor"))?;
                Ok(a.scale(s))
            }
        }
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat<'t>(&'t self, parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        for p in parts {
            self.check_same(p)?;
        }
        let nodes = self.nodes();
        let base = nodes[first.id].value.shape().to_vec();
        if axis >= base.len() {
            return Err(Error::invalid(
                "concat",
                format!("axis {axis} out of range for {base:?}"),
            ));
        }
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let s = nodes[p.id].value.shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            widths.push(numel(&s[axis..]));
        }
        let outer = numel(&base[..axis]);
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&nodes[p.id].value.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = base.clone();
        shape[axis] = parts.iter().map(|p| nodes[p.id].value.shape()[axis]).sum();
        let rg = parts.iter().any(|p| nodes[p.id].requires_grad);
        drop(nodes);
        let inputs = parts.iter().map(|p| p.id).collect();
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::Concat {
                inputs,
                outer,
                widths,
            },
            rg,
        ))
    }
}

impl<'t, T: Real> Var<'t, T> {
    fn unary(self, op: Op<T>, f: impl Fn(&Tensor<T>) -> Tensor<T>) -> Var<'t, T> {
        let (value, rg) = {
            let nodes = self.tape.nodes();
            (f(&nodes[self.id].value), nodes[self.id].requires_grad)
        };
        self.tape.push(value, op, rg)
    }

    fn binary_same_shape(
        self,
        other: Var<'t, T>,
        name: &'static str,
        op: Op<T>,
        f: impl Fn(T, T) -> T,
    ) -> Result<Var<'t, T>> {
        self.tape.check_same(&other)?;
        let (value, rg) = {
            let nodes = self.tape.nodes();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            if a.value.shape() != b.value.shape() {
                return Err(Error::shape(name, a.value.shape(), b.value.shape()));
            }
            (
                zip_map(&a.value, &b.value, f),
                a.requires_grad || b.requires_grad,
            )
        };
        Ok(self.tape.push(value, op, rg))
    }

    /// Matrix product of `[m×k]` and `[k×n]`.
    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.tape.check_same(&other)?;
        let (value, rg, m, k, n) = {
            let nodes = self.tape.nodes();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            let (sa, sb) = (a.value.shape(), b.value.shape());
            if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
                return Err(Error::shape("matmul", sa, sb));
            }
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            let mut out = vec![T::zero(); m * n];
            kernels::gemm_nn(
                self.tape.exec,
                m,
                k,
                n,
                a.value.data(),
                b.value.data(),
                &mut out,
            );
            (
                Tensor::from_parts(vec![m, n], out),
                a.requires_grad || b.requires_grad,
                m,
                k,
                n,
            )
        };
        Ok(self.tape.push(
            value,
            Op::MatMul {
                a: self.id,
                b: other.id,
                m,
                k,
                n,
            },
            rg,
        ))
    }

    fn batch_matmul(self, other: Var<'t, T>, trans_b: bool) -> Result<Var<'t, T>> {
        self.tape.check_same(&other)?;
        let name = if trans_b { "bmm_nt" } else { "bmm" };
        let (value, rg, batch, m, k, n) = {
            let nodes = self.tape.nodes();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            let (sa, sb) = (a.value.shape(), b.value.shape());
            if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
                return Err(Error::shape(name, sa, sb));
            }
            let (batch, m, k) = (sa[0], sa[1], sa[2]);
            let n = if trans_b { sb[1] } else { sb[2] };
            let kb = if trans_b { sb[2] } else { sb[1] };
            if kb != k {
                return Err(Error::shape(name, sa, sb));
            }
            let (ad, bd) = (a.value.data(), b.value.data());
            let chunks = kernels::map_indices(self.tape.exec, batch, |i| {
                let ai = &ad[i * m * k..(i + 1) * m * k];
                let bi = &bd[i * k * n..(i + 1) * k * n];
                let mut out = vec![T::zero(); m * n];
                if trans_b {
                    kernels::gemm_nt(kernels::Exec::Sequential, m, k, n, ai, bi, &mut out);
                } else {
                    kernels::gemm_nn(kernels::Exec::Sequential, m, k, n, ai, bi, &mut out);
                }
                out
            });
            let data = chunks.concat();
            (
                Tensor::from_parts(vec![batch, m, n], data),
                a.requires_grad || b.requires_grad,
                batch,
                m,
                k,
                n,
            )
        };
        Ok(self.tape.push(
            value,
            Op::BatchMatMul {
                a: self.id,
                b: other.id,
                batch,
                m,
                k,
                n,
                trans_b,
            },
            rg,
        ))
    }

    /// Batched product `[B×m×k] · [B×k×n]`.
    pub fn bmm(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.batch_matmul(other, false)
    }

    /// Batched product with the second operand transposed: `[B×m×k] · [B×n×k]ᵀ`.
    pub fn bmm_nt(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.batch_matmul(other, true)
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let op = Op::Add {
            a: self.id,
            b: other.id,
        };
        self.binary_same_shape(other, "add", op, |x, y| x + y)
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let op = Op::Sub {
            a: self.id,
            b: other.id,
        };
        self.binary_same_shape(other, "sub", op, |x, y| x - y)
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let op = Op::Mul {
            a: self.id,
            b: other.id,
        };
        self.binary_same_shape(other, "mul", op, |x, y| x * y)
    }

    pub fn scale(self, s: T) -> Var<'t, T> {
        self.unary(Op::Scale { a: self.id, s }, |a| a.map(|v| v * s))
    }

    pub fn relu(self) -> Var<'t, T> {
        self.unary(Op::Relu { a: self.id }, |a| a.map(|v| v.max(T::zero())))
    }

    pub fn gelu(self) -> Var<'t, T> {
        self.unary(Op::Gelu { a: self.id }, |a| a.map(gelu))
    }

    /// Square root; the derivative at exactly zero is taken as zero.
    pub fn sqrt(self) -> Var<'t, T> {
        self.unary(Op::Sqrt { a: self.id }, |a| a.map(|v| v.sqrt()))
    }

    /// Natural log with the argument floored at the smallest positive normal.
    pub fn ln(self) -> Var<'t, T> {
        self.unary(Op::Ln { a: self.id }, |a| {
            a.map(|v| v.max(T::min_positive_value()).ln())
        })
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(self) -> Var<'t, T> {
        self.unary(Op::Sum { a: self.id }, |a| {
            Tensor::scalar(a.data().iter().copied().sum())
        })
    }

    pub fn mean(self) -> Var<'t, T> {
        self.unary(Op::Mean { a: self.id }, |a| {
            let n = T::lit(a.len() as f64);
            Tensor::scalar(a.data().iter().copied().sum::<T>() / n)
        })
    }

    /// Adds a `[d]` bias along the last axis.
    pub fn add_bias(self, bias: Var<'t, T>) -> Result<Var<'t, T>> {
        self.tape.check_same(&bias)?;
        let (value, rg) = {
            let nodes = self.tape.nodes();
            let (a, b) = (&nodes[self.id], &nodes[bias.id]);
            let d = *a.value.shape().last().unwrap_or(&1);
            if b.value.shape() != [d] {
                return Err(Error::shape("add_bias", a.value.shape(), b.value.shape()));
            }
            let mut out = a.value.data().to_vec();
            for row in out.chunks_mut(d) {
                for (o, &v) in row.iter_mut().zip(b.value.data()) {
                    *o += v;
                }
            }
            (
                Tensor::from_parts(a.value.shape().to_vec(), out),
                a.requires_grad || b.requires_grad,
            )
        };
        Ok(self.tape.push(
            value,
            Op::AddBias {
                a: self.id,
                bias: bias.id,
            },
            rg,
        ))
    }

    /// Normalizes over the last axis, then applies `gamma * x̂ + beta`.
    pub fn layer_norm(self, gamma: Var<'t, T>, beta: Var<'t, T>, eps: T) -> Result<Var<'t, T>> {
        self.tape.check_same(&gamma)?;
        self.tape.check_same(&beta)?;
        if eps <= T::zero() {
            return Err(Error::invalid("layer_norm", "eps must be positive"));
        }
        let (value, xhat, rstd, rg) = {
            let nodes = self.tape.nodes();
            let (x, g, b) = (&nodes[self.id], &nodes[gamma.id], &nodes[beta.id]);
            let d = *x.value.shape().last().unwrap_or(&1);
            if g.value.shape() != [d] || b.value.shape() != [d] {
                return Err(Error::shape("layer_norm", x.value.shape(), g.value.shape()));
            }
            let rows = x.value.len() / d;
            let mut xhat = vec![T::zero(); x.value.len()];
            let mut rstd = vec![T::zero(); rows];
            let mut out = vec![T::zero(); x.value.len()];
            let dn = T::lit(d as f64);
            for r in 0..rows {
                let row = &x.value.data()[r * d..(r + 1) * d];
                let mu = row.iter().copied().sum::<T>() / dn;
                let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / dn;
                let rs = T::one() / (var + eps).sqrt();
                rstd[r] = rs;
                for j in 0..d {
                    let h = (row[j] - mu) * rs;
                    xhat[r * d + j] = h;
                    out[r * d + j] = g.value.data()[j] * h + b.value.data()[j];
                }
            }
            let rg = x.requires_grad || g.requires_grad || b.requires_grad;
            (
                Tensor::from_parts(x.value.shape().to_vec(), out),
                xhat,
                rstd,
                rg,
            )
        };
        Ok(self.tape.push(
            value,
            Op::LayerNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(self, axis: usize) -> Result<Var<'t, T>> {
        let (value, rg, outer, len, inner) = {
            let nodes = self.tape.nodes();
            let a = &nodes[self.id];
            let shape = a.value.shape();
            if axis >= shape.len() {
                return Err(Error::invalid(
                    "softmax",
                    format!("axis {axis} out of range for {shape:?}"),
                ));
            }
            let (outer, len, inner) = axis_split(shape, axis);
            let src = a.value.data();
            let mut out = vec![T::zero(); src.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| o * len * inner + j * inner + i;
                    let mx = (0..len).map(|j| src[at(j)]).fold(T::neg_infinity(), T::max);
                    let mut total = T::zero();
                    for j in 0..len {
                        let e = (src[at(j)] - mx).exp();
                        out[at(j)] = e;
                        total += e;
                    }
                    for j in 0..len {
                        out[at(j)] /= total;
                    }
                }
            }
            (
                Tensor::from_parts(shape.to_vec(), out),
                a.requires_grad,
                outer,
                len,
                inner,
            )
        };
        Ok(self.tape.push(
            value,
            Op::Softmax {
                a: self.id,
                outer,
                len,
                inner,
            },
            rg,
        ))
    }

    /// Cross-correlation of `x[N×C×H×W]` with `kernel[C_out×C×kh×kw]`, plus
    /// an optional per-output-channel bias.
    pub fn conv2d(
        self,
        kernel: Var<'t, T>,
        bias: Option<Var<'t, T>>,
        stride: usize,
        pad: usize,
    ) -> Result<Var<'t, T>> {
        self.tape.check_same(&kernel)?;
        if let Some(b) = &bias {
            self.tape.check_same(b)?;
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be at least 1"));
        }
        let (value, rg, geom, c_out, cols) = {
            let nodes = self.tape.nodes();
            let (x, k) = (&nodes[self.id], &nodes[kernel.id]);
            let (sx, sk) = (x.value.shape(), k.value.shape());
            if sx.len() != 4 || sk.len() != 4 || sx[1] != sk[1] {
                return Err(Error::shape("conv2d", sx, sk));
            }
            let (n, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
            let (c_out, kh, kw) = (sk[0], sk[2], sk[3]);
            if kh > h + 2 * pad || kw > w + 2 * pad {
                return Err(Error::invalid(
                    "conv2d",
                    format!(
                        "kernel {kh}x{kw} larger than padded input {}x{}",
                        h + 2 * pad,
                        w + 2 * pad
                    ),
                ));
            }
            let bias_data = match &bias {
                Some(b) => {
                    let bv = &nodes[b.id].value;
                    if bv.shape() != [c_out] {
                        return Err(Error::shape("conv2d bias", sk, bv.shape()));
                    }
                    Some(bv.data())
                }
                None => None,
            };
            let geom = ConvGeom {
                channels: c,
                height: h,
                width: w,
                kh,
                kw,
                stride,
                pad,
            };
            let (out, cols) = kernels::conv2d_forward(
                self.tape.exec,
                &geom,
                n,
                c_out,
                x.value.data(),
                k.value.data(),
                bias_data,
            );
            let rg = x.requires_grad
                || k.requires_grad
                || bias.map(|b| nodes[b.id].requires_grad).unwrap_or(false);
            let shape = vec![n, c_out, geom.out_h(), geom.out_w()];
            (Tensor::from_parts(shape, out), rg, geom, c_out, cols)
        };
        // Patch matrices are only needed for the kernel gradient.
        let cols = if rg { cols } else { Vec::new() };
        Ok(self.tape.push(
            value,
            Op::Conv2d {
                x: self.id,
                kernel: kernel.id,
                bias: bias.map(|b| b.id),
                geom,
                c_out,
                cols,
            },
            rg,
        ))
    }

    /// Average pooling over square windows of `x[N×C×H×W]`.
    pub fn avg_pool2d(self, window: usize, stride: usize) -> Result<Var<'t, T>> {
        if window == 0 || stride == 0 {
            return Err(Error::invalid(
                "avg_pool2d",
                "window and stride must be positive",
            ));
        }
        let (value, rg, planes, h, w) = {
            let nodes = self.tape.nodes();
            let x = &nodes[self.id];
            let s = x.value.shape();
            if s.len() != 4 {
                return Err(Error::invalid(
                    "avg_pool2d",
                    format!("expected N×C×H×W, got {s:?}"),
                ));
            }
            let (h, w) = (s[2], s[3]);
            if window > h || window > w {
                return Err(Error::invalid(
                    "avg_pool2d",
                    format!("window {window} exceeds input {h}x{w}"),
                ));
            }
            let (oh, ow) = ((h - window) / stride + 1, (w - window) / stride + 1);
            let planes = s[0] * s[1];
            let inv = T::one() / T::lit((window * window) as f64);
            let src = x.value.data();
            let mut out = Vec::with_capacity(planes * oh * ow);
            for p in 0..planes {
                let plane = &src[p * h * w..(p + 1) * h * w];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = T::zero();
                        for dy in 0..window {
                            for dx in 0..window {
                                acc += plane[(oy * stride + dy) * w + ox * stride + dx];
                            }
                        }
                        out.push(acc * inv);
                    }
                }
            }
            (
                Tensor::from_parts(vec![s[0], s[1], oh, ow], out),
                x.requires_grad,
                planes,
                h,
                w,
            )
        };
        Ok(self.tape.push(
            value,
            Op::AvgPool {
                x: self.id,
                planes,
                h,
                w,
                window,
                stride,
            },
            rg,
        ))
    }

    /// Per-channel normalization of `x[N×C×...]`.
    ///
    /// With `running = None` the batch statistics are used (training mode)
    /// and returned as `(mean, biased variance)` for the caller to fold into
    /// its running averages. With `Some((mean, var))` those statistics are
    /// used as constants (evaluation mode).
    pub fn batch_norm(
        self,
        gamma: Var<'t, T>,
        beta: Var<'t, T>,
        running: Option<(&[T], &[T])>,
        eps: T,
    ) -> Result<(Var<'t, T>, Option<(Vec<T>, Vec<T>)>)> {
        self.tape.check_same(&gamma)?;
        self.tape.check_same(&beta)?;
        if eps <= T::zero() {
            return Err(Error::invalid("batch_norm", "eps must be positive"));
        }
        let train = running.is_none();
        let (value, xhat, rstd, stats, rg, n, c, spatial) = {
            let nodes = self.tape.nodes();
            let (x, g, b) = (&nodes[self.id], &nodes[gamma.id], &nodes[beta.id]);
            let s = x.value.shape();
            if s.len() < 2 {
                return Err(Error::invalid(
                    "batch_norm",
                    format!("expected N×C×..., got {s:?}"),
                ));
            }
            let (n, c) = (s[0], s[1]);
            let spatial = numel(&s[2..]);
            if g.value.shape() != [c] || b.value.shape() != [c] {
                return Err(Error::shape("batch_norm", s, g.value.shape()));
            }
            if let Some((m, v)) = running {
                if m.len() != c || v.len() != c {
                    return Err(Error::invalid(
                        "batch_norm",
                        "running statistics length differs from C",
                    ));
                }
            }
            let count = n * spatial;
            if train && count < 2 {
                return Err(Error::invalid(
                    "batch_norm",
                    format!("training mode needs at least 2 values per channel, got {count}"),
                ));
            }
            let src = x.value.data();
            let idx = |bi: usize, ch: usize, p: usize| (bi * c + ch) * spatial + p;
            let mut means = vec![T::zero(); c];
            let mut vars = vec![T::zero(); c];
            let cn = T::lit(count as f64);
            for ch in 0..c {
                if let Some((m, v)) = running {
                    means[ch] = m[ch];
                    vars[ch] = v[ch];
                    continue;
                }
                let mut total = T::zero();
                for bi in 0..n {
                    for p in 0..spatial {
                        total += src[idx(bi, ch, p)];
                    }
                }
                let mu = total / cn;
                let mut sq = T::zero();
                for bi in 0..n {
                    for p in 0..spatial {
                        let d = src[idx(bi, ch, p)] - mu;
                        sq += d * d;
                    }
                }
                means[ch] = mu;
                vars[ch] = sq / cn;
            }
            let rstd: Vec<T> = vars.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
            let mut xhat = vec![T::zero(); src.len()];
            let mut out = vec![T::zero(); src.len()];
            for bi in 0..n {
                for ch in 0..c {
                    let (gv, bv) = (g.value.data()[ch], b.value.data()[ch]);
                    for p in 0..spatial {
                        let i = idx(bi, ch, p);
                        let h = (src[i] - means[ch]) * rstd[ch];
                        xhat[i] = h;
                        out[i] = gv * h + bv;
                    }
                }
            }
            let rg = x.requires_grad || g.requires_grad || b.requires_grad;
            let stats = train.then_some((means, vars));
            (
                Tensor::from_parts(s.to_vec(), out),
                xhat,
                rstd,
                stats,
                rg,
                n,
                c,
                spatial,
            )
        };
        let var = self.tape.push(
            value,
            Op::BatchNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                rstd,
                n,
                c,
                spatial,
                train,
            },
            rg,
        );
        Ok((var, stats))
    }

    /// Same data viewed under a new shape.
    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let (value, rg) = {
            let nodes = self.tape.nodes();
            let a = &nodes[self.id];
            if numel(shape) != a.value.len() || shape.contains(&0) {
                return Err(Error::shape("reshape", a.value.shape(), shape));
            }
            (
                Tensor::from_parts(shape.to_vec(), a.value.data().to_vec()),
                a.requires_grad,
            )
        };
        Ok(self.tape.push(value, Op::Reshape { a: self.id }, rg))
    }

    /// Gathers `out[i] = self[map[i]]` into a tensor of `shape`. Every
    /// re-indexing primitive (permute, slice, unfold, tile, select) is a
    /// special case; the adjoint scatters gradients back through `map`.
    pub fn reindex(self, shape: &[usize], map: Rc<Vec<usize>>) -> Result<Var<'t, T>> {
        let (value, rg) = {
            let nodes = self.tape.nodes();
            let a = &nodes[self.id];
            if numel(shape) != map.len() || shape.contains(&0) {
                return Err(Error::invalid(
                    "reindex",
                    format!("map of {} entries for shape {shape:?}", map.len()),
                ));
            }
            if map.iter().any(|&i| i >= a.value.len()) {
                return Err(Error::invalid("reindex", "map entry out of range"));
            }
            let src = a.value.data();
            let data = map.iter().map(|&i| src[i]).collect();
            (Tensor::from_parts(shape.to_vec(), data), a.requires_grad)
        };
        Ok(self.tape.push(value, Op::Reindex { a: self.id, map }, rg))
    }

    /// Axis permutation: output axis `i` is input axis `axes[i]`.
    pub fn permute(self, axes: &[usize]) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let (out_shape, map) = permute_map(&shape, axes)?;
        self.reindex(&out_shape, Rc::new(map))
    }

    /// `len` entries along `axis` starting at `start`.
    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let shape = self.shape();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::invalid(
                "slice",
                format!("range {start}..{} on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, full, inner) = axis_split(&shape, axis);
        let mut map = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * full * inner + start * inner;
            map.extend(base..base + len * inner);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        self.reindex(&out_shape, Rc::new(map))
    }

    /// Repeats the whole tensor `times` along a new leading axis.
    pub fn tile(self, times: usize) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let len = numel(&shape);
        let map = (0..times * len).map(|i| i % len).collect();
        let mut out_shape = vec![times];
        out_shape.extend_from_slice(&shape);
        self.reindex(&out_shape, Rc::new(map))
    }

    /// Splits `x[N×C×H×W]` into a raster grid of `patch×patch` sentences,
    /// each split into a raster grid of `word×word` words. The result is
    /// `[N × n × m × (C·word·word)]` with `n = (H/patch)(W/patch)` and
    /// `m = (patch/word)²`; each word is flattened channel-major.
    pub fn unfold_patches(self, patch: usize, word: usize) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let (out_shape, map) = unfold_map(&shape, patch, word)?;
        self.reindex(&out_shape, Rc::new(map))
    }
}

pub(crate) fn permute_map(shape: &[usize], axes: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    let r = shape.len();
    let mut seen = vec![false; r];
    if axes.len() != r
        || axes
            .iter()
            .any(|&a| a >= r || std::mem::replace(&mut seen[a], true))
    {
        return Err(Error::invalid(
            "permute",
            format!("{axes:?} is not a permutation of rank {r}"),
        ));
    }
    let mut in_strides = vec![1; r];
    for i in (0..r.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let total = numel(shape);
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; r];
    for _ in 0..total {
        map.push(idx.iter().zip(axes).map(|(&i, &a)| i * in_strides[a]).sum());
        for d in (0..r).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok((out_shape, map))
}

pub(crate) fn unfold_map(
    shape: &[usize],
    patch: usize,
    word: usize,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if shape.len() != 4 {
        return Err(Error::invalid(
            "unfold",
            format!("expected N×C×H×W, got {shape:?}"),
        ));
    }
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    if patch == 0 || word == 0 || h % patch != 0 || w % patch != 0 || !patch.is_multiple_of(word) {
        return Err(Error::invalid(
            "unfold",
            format!("patch {patch} / word {word} grid does not divide {h}x{w} exactly"),
        ));
    }
    let (gh, gw) = (h / patch, w / patch);
    let wpr = patch / word;
    let sentences = gh * gw;
    let words = wpr * wpr;
    let wlen = c * word * word;
    let mut map = Vec::with_capacity(n * c * h * w);
    for b in 0..n {
        for s in 0..sentences {
            let (py, px) = (s / gw * patch, s % gw * patch);
            for wi in 0..words {
                let (wy, wx) = (py + wi / wpr * word, px + wi % wpr * word);
                for ch in 0..c {
                    for dy in 0..word {
                        for dx in 0..word {
                            map.push(((b * c + ch) * h + wy + dy) * w + wx + dx);
                        }
                    }
                }
            }
        }
    }
    Ok((vec![n, sentences, words, wlen], map))
}
