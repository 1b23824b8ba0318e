use std::collections::HashMap;

use crate::conv::{conv2d_backward, conv2d_forward, ConvGeom};
use crate::real::matmul;
use crate::{Real, Result, ShapeError, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Abs(Var),
    Square(Var),
    Log {
        x: Var,
        eps: T,
    },
    Exp(Var),
    Relu(Var),
    LeakyRelu {
        x: Var,
        slope: T,
    },
    Sigmoid(Var),
    ClampMin {
        x: Var,
        floor: T,
    },
    Mean(Var),
    Sum(Var),
    Reshape(Var),
    MulChannels {
        x: Var,
        s: Var,
    },
    MeanChannels(Var),
    SliceChannels {
        x: Var,
        start: usize,
    },
    ShiftDiff {
        x: Var,
        dy: usize,
        dx: isize,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    InstanceNorm {
        x: Var,
        rstd: Vec<T>,
    },
    ChannelAffine {
        x: Var,
        gamma: Var,
        beta: Var,
    },
    Upsample2(Var),
    AvgPool2(Var),
    GlobalAvgPool(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    MeanRows(Var),
    SubRow {
        x: Var,
        row: Var,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only tape of tensor operations.
///
/// Leaves created with `requires_grad = true` receive gradients from
/// [`Graph::backward`]; everything downstream of them is differentiated,
/// everything else is treated as a constant.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    slots: HashMap<usize, Var>,
}

/// Gradients produced by [`Graph::backward`], indexed by leaf.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn mismatch(op: &'static str, expected: &[usize], actual: &[usize]) -> ShapeError {
    ShapeError::Mismatch {
        op,
        expected: expected.to_vec(),
        actual: actual.to_vec(),
    }
}

fn invalid(op: &'static str, reason: impl Into<String>) -> ShapeError {
    ShapeError::Invalid {
        op,
        reason: reason.into(),
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            slots: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Copy of `v`'s value with no connection to the tape.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    /// Register a leaf under an external id (used for model parameters).
    /// Rebinding an id replaces the previous association.
    pub fn bind(&mut self, slot: usize, value: Tensor<T>, requires_grad: bool) -> Var {
        let v = self.leaf(value, requires_grad);
        self.slots.insert(slot, v);
        v
    }

    pub fn bound(&self, slot: usize) -> Option<Var> {
        self.slots.get(&slot).copied()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        // Constant subgraphs keep no backward information.
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch(op, sa, sb));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(ta.shape().to_vec(), data).expect("shape preserved")
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(x).map(f);
        self.push(value, op, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_map(a, b, |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("div", a, b)?;
        let v = self.zip_map(a, b, |x, y| x / y);
        Ok(self.push(v, Op::Div(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, k: T) -> Var {
        self.unary(x, |v| v * k, Op::Scale(x, k))
    }

    pub fn add_scalar(&mut self, x: Var, k: T) -> Var {
        self.unary(x, |v| v + k, Op::AddScalar(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.abs(), Op::Abs(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    /// `ln(x + eps)`.
    pub fn log(&mut self, x: Var, eps: T) -> Var {
        self.unary(x, |v| (v + eps).ln(), Op::Log { x, eps })
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), Op::Exp(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(T::zero()), Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        self.unary(
            x,
            |v| if v > T::zero() { v } else { v * slope },
            Op::LeakyRelu { x, slope },
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn clamp_min(&mut self, x: Var, floor: T) -> Var {
        self.unary(x, |v| v.max(floor), Op::ClampMin { x, floor })
    }

    /// Mean over all elements, as a one-element tensor.
    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let n = T::of(t.len().max(1) as f64);
        let s = t.data().iter().copied().sum::<T>() / n;
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// `x * s` where `x` is `[n, c, h, w]` and `s` is `[n, 1, h, w]`,
    /// broadcast over channels.
    pub fn mul_channels(&mut self, x: Var, s: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if self.shape(s) != [n, 1, h, w] {
            return Err(mismatch("mul_channels", &[n, 1, h, w], self.shape(s)));
        }
        let plane = h * w;
        let xs = self.value(x).data();
        let ss = self.value(s).data();
        let mut out = vec![T::zero(); xs.len()];
        for b in 0..n {
            let sp = &ss[b * plane..(b + 1) * plane];
            for ch in 0..c {
                let off = (b * c + ch) * plane;
                for i in 0..plane {
                    out[off + i] = xs[off + i] * sp[i];
                }
            }
        }
        let value = Tensor::new(vec![n, c, h, w], out)?;
        Ok(self.push(value, Op::MulChannels { x, s }, &[x, s]))
    }

    /// Mean over the channel axis: `[n, c, h, w] -> [n, 1, h, w]`.
    pub fn mean_channels(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let plane = h * w;
        let xs = self.value(x).data();
        let inv = T::one() / T::of(c as f64);
        let mut out = vec![T::zero(); n * plane];
        for b in 0..n {
            let o = &mut out[b * plane..(b + 1) * plane];
            for ch in 0..c {
                let off = (b * c + ch) * plane;
                for i in 0..plane {
                    o[i] += xs[off + i];
                }
            }
            for v in o.iter_mut() {
                *v *= inv;
            }
        }
        let value = Tensor::new(vec![n, 1, h, w], out)?;
        Ok(self.push(value, Op::MeanChannels(x), &[x]))
    }

    /// Channels `start..start + len` of an NCHW tensor.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if start + len > c || len == 0 {
            return Err(invalid(
                "slice_channels",
                format!("range {start}..{} outside {c} channels", start + len),
            ));
        }
        let plane = h * w;
        let xs = self.value(x).data();
        let mut out = Vec::with_capacity(n * len * plane);
        for b in 0..n {
            let off = (b * c + start) * plane;
            out.extend_from_slice(&xs[off..off + len * plane]);
        }
        let value = Tensor::new(vec![n, len, h, w], out)?;
        Ok(self.push(value, Op::SliceChannels { x, start }, &[x]))
    }

    /// Neighbour difference `x[y + dy, x + dx] - x[y, x]` over every position
    /// where both samples are inside the image. `dy >= 0`; `dx` may be
    /// negative. Output is `[n, c, h - dy, w - |dx|]`.
    pub fn shift_diff(&mut self, x: Var, dy: usize, dx: isize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let adx = dx.unsigned_abs();
        if dy >= h || adx >= w {
            return Err(invalid(
                "shift_diff",
                format!("offset ({dy}, {dx}) too large for {h}x{w}"),
            ));
        }
        let (ho, wo) = (h - dy, w - adx);
        let x0 = if dx < 0 { adx } else { 0 };
        let xs = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        for p in 0..n * c {
            let plane = &xs[p * h * w..(p + 1) * h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let bx = ox + x0;
                    let nx = (bx as isize + dx) as usize;
                    out.push(plane[(oy + dy) * w + nx] - plane[oy * w + bx]);
                }
            }
        }
        let value = Tensor::new(vec![n, c, ho, wo], out)?;
        Ok(self.push(value, Op::ShiftDiff { x, dy, dx }, &[x]))
    }

    /// Zero-padded 2-D convolution with a square kernel.
    /// `x: [n, c_in, h, w]`, `w: [c_out, c_in, k, k]`, `b: [c_out]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (n, c_in, h, wd) = self.value(x).dims4()?;
        let (c_out, wc, kh, kw) = self.value(w).dims4()?;
        if wc != c_in || kh != kw {
            return Err(mismatch("conv2d", &[c_out, c_in, kh, kh], self.shape(w)));
        }
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return Err(mismatch("conv2d bias", &[c_out], self.shape(b)));
            }
        }
        let geom = ConvGeom::new(c_in, h, wd, c_out, kh, stride, pad).ok_or_else(|| {
            invalid(
                "conv2d",
                format!("kernel {kh} stride {stride} pad {pad} on {h}x{wd}"),
            )
        })?;
        let out = conv2d_forward(
            &geom,
            n,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let value = Tensor::new(vec![n, c_out, geom.ho, geom.wo], out)?;
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }, &parents))
    }

    /// Dense layer `x w^T + b` with `x: [n, in]`, `w: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, d_in) = self.value(x).dims2()?;
        let (d_out, wi) = self.value(w).dims2()?;
        if wi != d_in {
            return Err(mismatch("linear", &[d_out, d_in], self.shape(w)));
        }
        let mut out = vec![T::zero(); n * d_out];
        matmul(
            n,
            d_in,
            d_out,
            self.value(x).data(),
            false,
            self.value(w).data(),
            true,
            &mut out,
            false,
        );
        if let Some(b) = b {
            if self.shape(b) != [d_out] {
                return Err(mismatch("linear bias", &[d_out], self.shape(b)));
            }
            let bs = self.value(b).data();
            for row in out.chunks_mut(d_out) {
                for (o, &bv) in row.iter_mut().zip(bs) {
                    *o += bv;
                }
            }
        }
        let value = Tensor::new(vec![n, d_out], out)?;
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push(value, Op::Linear { x, w, b }, &parents))
    }

    /// Per-sample, per-channel standardisation over spatial positions using
    /// the population variance: `(x - mean) / sqrt(var + eps)`.
    pub fn instance_norm(&mut self, x: Var, eps: T) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let plane = h * w;
        if plane == 0 {
            return Err(invalid("instance_norm", "empty spatial extent"));
        }
        let inv = T::one() / T::of(plane as f64);
        let xs = self.value(x).data();
        let mut out = vec![T::zero(); xs.len()];
        let mut rstds = Vec::with_capacity(n * c);
        for p in 0..n * c {
            let src = &xs[p * plane..(p + 1) * plane];
            let mean = src.iter().copied().sum::<T>() * inv;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv;
            let rstd = T::one() / (var + eps).sqrt();
            for (o, &v) in out[p * plane..(p + 1) * plane].iter_mut().zip(src) {
                *o = (v - mean) * rstd;
            }
            rstds.push(rstd);
        }
        let value = Tensor::new(vec![n, c, h, w], out)?;
        Ok(self.push(value, Op::InstanceNorm { x, rstd: rstds }, &[x]))
    }

    /// `x * gamma + beta` with per-sample, per-channel `gamma, beta: [n, c]`.
    pub fn channel_affine(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        for (name, v) in [
            ("channel_affine gamma", gamma),
            ("channel_affine beta", beta),
        ] {
            if self.shape(v) != [n, c] {
                return Err(mismatch(name, &[n, c], self.shape(v)));
            }
        }
        let plane = h * w;
        let xs = self.value(x).data();
        let gs = self.value(gamma).data();
        let bs = self.value(beta).data();
        let mut out = vec![T::zero(); xs.len()];
        for p in 0..n * c {
            let (g, b) = (gs[p], bs[p]);
            for (o, &v) in out[p * plane..(p + 1) * plane]
                .iter_mut()
                .zip(&xs[p * plane..(p + 1) * plane])
            {
                *o = v * g + b;
            }
        }
        let value = Tensor::new(vec![n, c, h, w], out)?;
        Ok(self.push(
            value,
            Op::ChannelAffine { x, gamma, beta },
            &[x, gamma, beta],
        ))
    }

    /// Nearest-neighbour upsampling by a factor of two.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let xs = self.value(x).data();
        let (ho, wo) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); n * c * ho * wo];
        for p in 0..n * c {
            let src = &xs[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
            for y in 0..ho {
                let srow = &src[(y / 2) * w..(y / 2 + 1) * w];
                for (xo, d) in dst[y * wo..(y + 1) * wo].iter_mut().enumerate() {
                    *d = srow[xo / 2];
                }
            }
        }
        let value = Tensor::new(vec![n, c, ho, wo], out)?;
        Ok(self.push(value, Op::Upsample2(x), &[x]))
    }

    /// 2x2 average pooling with stride 2; spatial dims must be even.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
            return Err(invalid(
                "avg_pool2",
                format!("spatial dims {h}x{w} must be even"),
            ));
        }
        let (ho, wo) = (h / 2, w / 2);
        let xs = self.value(x).data();
        let quarter = T::of(0.25);
        let mut out = vec![T::zero(); n * c * ho * wo];
        for p in 0..n * c {
            let src = &xs[p * h * w..(p + 1) * h * w];
            for y in 0..ho {
                for xo in 0..wo {
                    let i = 2 * y * w + 2 * xo;
                    out[p * ho * wo + y * wo + xo] =
                        (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]) * quarter;
                }
            }
        }
        let value = Tensor::new(vec![n, c, ho, wo], out)?;
        Ok(self.push(value, Op::AvgPool2(x), &[x]))
    }

    /// `[n, c, h, w] -> [n, c]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let plane = h * w;
        let inv = T::one() / T::of(plane.max(1) as f64);
        let xs = self.value(x).data();
        let out = (0..n * c)
            .map(|p| xs[p * plane..(p + 1) * plane].iter().copied().sum::<T>() * inv)
            .collect();
        let value = Tensor::new(vec![n, c], out)?;
        Ok(self.push(value, Op::GlobalAvgPool(x), &[x]))
    }

    /// Columns `start..start + len` of a `[n, d]` matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, d) = self.value(x).dims2()?;
        if start + len > d || len == 0 {
            return Err(invalid(
                "slice_cols",
                format!("range {start}..{} outside {d} columns", start + len),
            ));
        }
        let xs = self.value(x).data();
        let mut out = Vec::with_capacity(n * len);
        for r in 0..n {
            out.extend_from_slice(&xs[r * d + start..r * d + start + len]);
        }
        let value = Tensor::new(vec![n, len], out)?;
        Ok(self.push(value, Op::SliceCols { x, start }, &[x]))
    }

    /// Column means of a `[n, d]` matrix, shape `[d]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (n, d) = self.value(x).dims2()?;
        if n == 0 {
            return Err(invalid("mean_rows", "no rows"));
        }
        let xs = self.value(x).data();
        let inv = T::one() / T::of(n as f64);
        let mut out = vec![T::zero(); d];
        for row in xs.chunks(d) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in &mut out {
            *o *= inv;
        }
        let value = Tensor::new(vec![d], out)?;
        Ok(self.push(value, Op::MeanRows(x), &[x]))
    }

    /// `x - row` with `x: [n, d]` and `row: [d]` broadcast over rows.
    pub fn sub_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (_, d) = self.value(x).dims2()?;
        if self.shape(row) != [d] {
            return Err(mismatch("sub_row", &[d], self.shape(row)));
        }
        let rs = self.value(row).data();
        let out = self
            .value(x)
            .data()
            .chunks(d)
            .flat_map(|r| r.iter().zip(rs).map(|(&a, &b)| a - b))
            .collect();
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push(value, Op::SubRow { x, row }, &[x, row]))
    }

    /// Reverse-mode sweep from a one-element `loss`. Gradients are retained
    /// for leaves only.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(invalid(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::full(self.shape(loss).to_vec(), T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn like(&self, v: Var, data: Vec<T>) -> Tensor<T> {
        Tensor::new(self.shape(v).to_vec(), data).expect("gradient shape matches value")
    }

    fn backprop_node(
        &self,
        i: usize,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let gd = g.data();
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.requires_grad(*a) {
                    let d = gd.iter().zip(vb).map(|(&g, &y)| g * y).collect();
                    self.accumulate(grads, *a, self.like(*a, d));
                }
                if self.requires_grad(*b) {
                    let d = gd.iter().zip(va).map(|(&g, &x)| g * x).collect();
                    self.accumulate(grads, *b, self.like(*b, d));
                }
            }
            Op::Div(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.requires_grad(*a) {
                    let d = gd.iter().zip(vb).map(|(&g, &y)| g / y).collect();
                    self.accumulate(grads, *a, self.like(*a, d));
                }
                if self.requires_grad(*b) {
                    let d = gd
                        .iter()
                        .zip(va.iter().zip(vb))
                        .map(|(&g, (&x, &y))| -g * x / (y * y))
                        .collect();
                    self.accumulate(grads, *b, self.like(*b, d));
                }
            }
            Op::Scale(x, k) => self.accumulate(grads, *x, g.map(|v| v * *k)),
            Op::AddScalar(x) | Op::Reshape(x) => {
                let d = self.like(*x, gd.to_vec());
                self.accumulate(grads, *x, d)
            }
            Op::Abs(x) => {
                let d = self.pointwise(*x, gd, |x, _| {
                    if x > T::zero() {
                        T::one()
                    } else if x < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    }
                });
                self.accumulate(grads, *x, d)
            }
            Op::Square(x) => {
                let d = self.pointwise(*x, gd, |x, _| x + x);
                self.accumulate(grads, *x, d)
            }
            Op::Log { x, eps } => {
                let eps = *eps;
                let d = self.pointwise(*x, gd, |x, _| T::one() / (x + eps));
                self.accumulate(grads, *x, d)
            }
            Op::Exp(x) => {
                let d = gd.iter().zip(out.data()).map(|(&g, &y)| g * y).collect();
                self.accumulate(grads, *x, self.like(*x, d))
            }
            Op::Relu(x) => {
                let d = self.pointwise(
                    *x,
                    gd,
                    |x, _| if x > T::zero() { T::one() } else { T::zero() },
                );
                self.accumulate(grads, *x, d)
            }
            Op::LeakyRelu { x, slope } => {
                let slope = *slope;
                let d = self.pointwise(*x, gd, |x, _| if x > T::zero() { T::one() } else { slope });
                self.accumulate(grads, *x, d)
            }
            Op::Sigmoid(x) => {
                let d = gd
                    .iter()
                    .zip(out.data())
                    .map(|(&g, &y)| g * y * (T::one() - y))
                    .collect();
                self.accumulate(grads, *x, self.like(*x, d))
            }
            Op::ClampMin { x, floor } => {
                let floor = *floor;
                let d = self.pointwise(*x, gd, |x, _| if x > floor { T::one() } else { T::zero() });
                self.accumulate(grads, *x, d)
            }
            Op::Mean(x) => {
                let n = self.value(*x).len().max(1);
                let v = gd[0] / T::of(n as f64);
                let d = Tensor::full(self.shape(*x).to_vec(), v);
                self.accumulate(grads, *x, d)
            }
            Op::Sum(x) => {
                let d = Tensor::full(self.shape(*x).to_vec(), gd[0]);
                self.accumulate(grads, *x, d)
            }
            Op::MulChannels { x, s } => {
                let (n, c, h, w) = self.value(*x).dims4()?;
                let plane = h * w;
                let xs = self.value(*x).data();
                let ss = self.value(*s).data();
                if self.requires_grad(*x) {
                    let mut dx = vec![T::zero(); xs.len()];
                    for b in 0..n {
                        for ch in 0..c {
                            let off = (b * c + ch) * plane;
                            for k in 0..plane {
                                dx[off + k] = gd[off + k] * ss[b * plane + k];
                            }
                        }
                    }
                    self.accumulate(grads, *x, self.like(*x, dx));
                }
                if self.requires_grad(*s) {
                    let mut ds = vec![T::zero(); ss.len()];
                    for b in 0..n {
                        for ch in 0..c {
                            let off = (b * c + ch) * plane;
                            for k in 0..plane {
                                ds[b * plane + k] += gd[off + k] * xs[off + k];
                            }
                        }
                    }
                    self.accumulate(grads, *s, self.like(*s, ds));
                }
            }
            Op::MeanChannels(x) => {
                let (n, c, h, w) = self.value(*x).dims4()?;
                let plane = h * w;
                let inv = T::one() / T::of(c as f64);
                let mut dx = vec![T::zero(); n * c * plane];
                for b in 0..n {
                    for ch in 0..c {
                        let off = (b * c + ch) * plane;
                        for k in 0..plane {
                            dx[off + k] = gd[b * plane + k] * inv;
                        }
                    }
                }
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::SliceChannels { x, start } => {
                let (n, c, h, w) = self.value(*x).dims4()?;
                let len = out.shape()[1];
                let plane = h * w;
                let mut dx = vec![T::zero(); n * c * plane];
                for b in 0..n {
                    let dst = (b * c + start) * plane;
                    dx[dst..dst + len * plane]
                        .copy_from_slice(&gd[b * len * plane..(b + 1) * len * plane]);
                }
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::ShiftDiff { x, dy, dx } => {
                let (n, c, h, w) = self.value(*x).dims4()?;
                let adx = dx.unsigned_abs();
                let (ho, wo) = (h - dy, w - adx);
                let x0 = if *dx < 0 { adx } else { 0 };
                let mut d = vec![T::zero(); n * c * h * w];
                for p in 0..n * c {
                    let plane = &mut d[p * h * w..(p + 1) * h * w];
                    let gp = &gd[p * ho * wo..(p + 1) * ho * wo];
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let bx = ox + x0;
                            let nx = (bx as isize + dx) as usize;
                            let gv = gp[oy * wo + ox];
                            plane[(oy + dy) * w + nx] += gv;
                            plane[oy * w + bx] -= gv;
                        }
                    }
                }
                self.accumulate(grads, *x, self.like(*x, d));
            }
            Op::Conv2d { x, w, b, geom } => {
                let n = self.shape(*x)[0];
                let cg = conv2d_backward(
                    geom,
                    n,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    gd,
                    self.requires_grad(*x),
                    self.requires_grad(*w),
                    b.is_some_and(|b| self.requires_grad(b)),
                );
                if let Some(dx) = cg.dx {
                    self.accumulate(grads, *x, self.like(*x, dx));
                }
                if let Some(dw) = cg.dweight {
                    self.accumulate(grads, *w, self.like(*w, dw));
                }
                if let (Some(b), Some(db)) = (b, cg.dbias) {
                    self.accumulate(grads, *b, self.like(*b, db));
                }
            }
            Op::Linear { x, w, b } => {
                let (n, d_in) = self.value(*x).dims2()?;
                let d_out = self.shape(*w)[0];
                if self.requires_grad(*x) {
                    let mut dx = vec![T::zero(); n * d_in];
                    matmul(
                        n,
                        d_out,
                        d_in,
                        gd,
                        false,
                        self.value(*w).data(),
                        false,
                        &mut dx,
                        false,
                    );
                    self.accumulate(grads, *x, self.like(*x, dx));
                }
                if self.requires_grad(*w) {
                    let mut dw = vec![T::zero(); d_out * d_in];
                    matmul(
                        d_out,
                        n,
                        d_in,
                        gd,
                        true,
                        self.value(*x).data(),
                        false,
                        &mut dw,
                        false,
                    );
                    self.accumulate(grads, *w, self.like(*w, dw));
                }
                if let Some(b) = b {
                    if self.requires_grad(*b) {
                        let mut db = vec![T::zero(); d_out];
                        for row in gd.chunks(d_out) {
                            for (o, &v) in db.iter_mut().zip(row) {
                                *o += v;
                            }
                        }
                        self.accumulate(grads, *b, self.like(*b, db));
                    }
                }
            }
            Op::InstanceNorm { x, rstd } => {
                let (n, c, h, w) = self.value(*x).dims4()?;
                let plane = h * w;
                let inv = T::one() / T::of(plane as f64);
                let ys = out.data();
                let mut dx = vec![T::zero(); n * c * plane];
                for p in 0..n * c {
                    let gp = &gd[p * plane..(p + 1) * plane];
                    let yp = &ys[p * plane..(p + 1) * plane];
                    let mean_g = gp.iter().copied().sum::<T>() * inv;
                    let mean_gy = gp.iter().zip(yp).map(|(&a, &b)| a * b).sum::<T>() * inv;
                    for ((d, &gv), &yv) in dx[p * plane..(p + 1) * plane].iter_mut().zip(gp).zip(yp)
                    {
                        *d = rstd[p] * (gv - mean_g - yv * mean_gy);
                    }
                }
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::ChannelAffine { x, gamma, beta } => {
                let (n, c, h, w) = self.value(*x).dims4()?;
                let plane = h * w;
                let xs = self.value(*x).data();
                let gs = self.value(*gamma).data();
                if self.requires_grad(*x) {
                    let mut dx = vec![T::zero(); xs.len()];
                    for p in 0..n * c {
                        for k in p * plane..(p + 1) * plane {
                            dx[k] = gd[k] * gs[p];
                        }
                    }
                    self.accumulate(grads, *x, self.like(*x, dx));
                }
                if self.requires_grad(*gamma) {
                    let dg = (0..n * c)
                        .map(|p| {
                            (p * plane..(p + 1) * plane)
                                .map(|k| gd[k] * xs[k])
                                .sum::<T>()
                        })
                        .collect();
                    self.accumulate(grads, *gamma, self.like(*gamma, dg));
                }
                if self.requires_grad(*beta) {
                    let db = (0..n * c)
                        .map(|p| gd[p * plane..(p + 1) * plane].iter().copied().sum::<T>())
                        .collect();
                    self.accumulate(grads, *beta, self.like(*beta, db));
                }
            }
            Op::Upsample2(x) => {
                let (n, c, h, w) = self.value(*x).dims4()?;
                let wo = 2 * w;
                let mut dx = vec![T::zero(); n * c * h * w];
                for p in 0..n * c {
                    let gp = &gd[p * 4 * h * w..(p + 1) * 4 * h * w];
                    let dp = &mut dx[p * h * w..(p + 1) * h * w];
                    for y in 0..2 * h {
                        for xo in 0..wo {
                            dp[(y / 2) * w + xo / 2] += gp[y * wo + xo];
                        }
                    }
                }
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::AvgPool2(x) => {
                let (n, c, h, w) = self.value(*x).dims4()?;
                let (ho, wo) = (h / 2, w / 2);
                let quarter = T::of(0.25);
                let mut dx = vec![T::zero(); n * c * h * w];
                for p in 0..n * c {
                    let dp = &mut dx[p * h * w..(p + 1) * h * w];
                    for y in 0..ho {
                        for xo in 0..wo {
                            let v = gd[p * ho * wo + y * wo + xo] * quarter;
                            let i = 2 * y * w + 2 * xo;
                            dp[i] = v;
                            dp[i + 1] = v;
                            dp[i + w] = v;
                            dp[i + w + 1] = v;
                        }
                    }
                }
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::GlobalAvgPool(x) => {
                let (n, c, h, w) = self.value(*x).dims4()?;
                let plane = h * w;
                let inv = T::one() / T::of(plane.max(1) as f64);
                let mut dx = vec![T::zero(); n * c * plane];
                for p in 0..n * c {
                    dx[p * plane..(p + 1) * plane].fill(gd[p] * inv);
                }
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::SliceCols { x, start } => {
                let (n, d) = self.value(*x).dims2()?;
                let len = out.shape()[1];
                let mut dx = vec![T::zero(); n * d];
                for r in 0..n {
                    dx[r * d + start..r * d + start + len]
                        .copy_from_slice(&gd[r * len..(r + 1) * len]);
                }
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::MeanRows(x) => {
                let (n, d) = self.value(*x).dims2()?;
                let inv = T::one() / T::of(n as f64);
                let dx = (0..n * d).map(|k| gd[k % d] * inv).collect();
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::SubRow { x, row } => {
                self.accumulate(grads, *x, g.clone());
                if self.requires_grad(*row) {
                    let d = self.shape(*row)[0];
                    let mut dr = vec![T::zero(); d];
                    for r in gd.chunks(d) {
                        for (o, &v) in dr.iter_mut().zip(r) {
                            *o -= v;
                        }
                    }
                    self.accumulate(grads, *row, self.like(*row, dr));
                }
            }
        }
        Ok(())
    }

    /// `g * f'(x)` elementwise for unary ops.
    fn pointwise(&self, x: Var, gd: &[T], deriv: impl Fn(T, T) -> T) -> Tensor<T> {
        let xs = self.value(x).data();
        let d = xs
            .iter()
            .zip(gd)
            .map(|(&xv, &g)| g * deriv(xv, g))
            .collect();
        self.like(x, d)
    }
}

#[inline]
fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
