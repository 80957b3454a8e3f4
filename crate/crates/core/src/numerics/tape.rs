//! Reverse-mode differentiation over a dynamic operation record.
//!
//! A [`Tape`] owns every intermediate value of one forward pass. Operations
//! append a node and return a [`Var`] handle; [`Tape::backward`] walks the
//! record in reverse and accumulates adjoints for every node that depends on
//! a leaf created with `requires_grad = true`.

use super::tensor::{matmul_at_into, matmul_bt_into, matmul_into, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRowBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    MulConst(Var, Tensor),
    Relu(Var),
    Gelu(Var),
    Sigmoid(Var),
    Ln(Var, f64),
    Powf(Var, f64),
    SoftmaxRows(Var),
    LayerNormRows {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Transpose(Var),
    Reshape(Var),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    MeanRows(Var),
    Sum(Var),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    },
    Patchify(Var, usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros of `shape` when nothing flowed into it.
    pub fn get_or_zeros(&self, var: Var, shape: &[usize]) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;
const LN_EPS: f64 = 1e-5;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn dims2(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        match *self.shape(v) {
            [n, m] => Ok((n, m)),
            ref s => Err(Error::dim(format!("{what} expects a 2-D tensor, got {s:?}"))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.dims2(a, "matmul")?;
        let (k2, m) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::dim(format!("matmul inner extents {k} vs {k2}")));
        }
        let mut out = vec![0.0; n * m];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, n, k, m);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::MatMul(a, b), rg))
    }

    /// Adds a bias vector of length `m` (shape `[m]` or `[1×m]`) to every row of `[n×m]`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (n, m) = self.dims2(x, "add_row_bias")?;
        if self.value(bias).numel() != m {
            return Err(Error::dim(format!(
                "bias of {} values for {m} columns",
                self.value(bias).numel()
            )));
        }
        let b = self.value(bias).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(m) {
            for (o, bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::AddRowBias(x, bias), rg))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let av = self.value(a);
        let data = av
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(av.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.zip_map(a, b, |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.zip_map(a, b, |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.zip_map(a, b, |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let v = self.value(x).map(|t| scale * t + shift);
        let rg = self.rg(&[x]);
        self.push(v, Op::Affine(x, scale), rg)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.affine(x, s, 0.0)
    }

    /// Elementwise product with a constant tensor (dropout masks, selectors).
    pub fn mul_const(&mut self, x: Var, c: Tensor) -> Result<Var> {
        if c.shape() != self.shape(x) {
            return Err(Error::dim(format!(
                "mul_const: {:?} vs {:?}",
                self.shape(x),
                c.shape()
            )));
        }
        let xv = self.value(x);
        let data = xv.data().iter().zip(c.data()).map(|(a, b)| a * b).collect();
        let v = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(v, Op::MulConst(x, c), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|t| t.max(0.0));
        let rg = self.rg(&[x]);
        self.push(v, Op::Relu(x), rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self
            .value(x)
            .map(|t| 0.5 * t * (1.0 + (GELU_C * (t + GELU_A * t * t * t)).tanh()));
        let rg = self.rg(&[x]);
        self.push(v, Op::Gelu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(sigmoid);
        let rg = self.rg(&[x]);
        self.push(v, Op::Sigmoid(x), rg)
    }

    /// Natural log of `max(x, floor)`; the gradient is zero where the floor binds.
    pub fn ln(&mut self, x: Var, floor: f64) -> Var {
        let v = self.value(x).map(|t| t.max(floor).ln());
        let rg = self.rg(&[x]);
        self.push(v, Op::Ln(x, floor), rg)
    }

    /// `x^p` for non-negative `x`.
    pub fn powf(&mut self, x: Var, p: f64) -> Var {
        let v = self.value(x).map(|t| t.max(0.0).powf(p));
        let rg = self.rg(&[x]);
        self.push(v, Op::Powf(x, p), rg)
    }

    /// Softmax along the last axis of a 2-D tensor.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (n, m) = self.dims2(x, "softmax_rows")?;
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(m) {
            softmax_in_place(row);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::SoftmaxRows(x), rg))
    }

    /// Per-row layer normalisation with learnable `gamma` and `beta` of length `m`.
    pub fn layer_norm_rows(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (n, m) = self.dims2(x, "layer_norm_rows")?;
        if self.value(gamma).numel() != m || self.value(beta).numel() != m {
            return Err(Error::dim("layer norm affine width"));
        }
        let xv = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut normalized = vec![0.0; n * m];
        let mut inv_std = vec![0.0; n];
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let row = &xv[i * m..(i + 1) * m];
            let mean = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[i] = is;
            for j in 0..m {
                let z = (row[j] - mean) * is;
                normalized[i * m + j] = z;
                out[i * m + j] = g[j] * z + b[j];
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            Tensor::new(vec![n, m], out)?,
            Op::LayerNormRows {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            },
            rg,
        ))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.dims2(x, "transpose")?;
        let v = self.value(x).transpose();
        let rg = self.rg(&[x]);
        Ok(self.push(v, Op::Transpose(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(v, Op::Reshape(x), rg))
    }

    /// Columns `start..start+len` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, m) = self.dims2(x, "slice_cols")?;
        if len == 0 || start + len > m {
            return Err(Error::dim(format!("column slice {start}+{len} of {m}")));
        }
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(n * len);
        for i in 0..n {
            out.extend_from_slice(&xv[i * m + start..i * m + start + len]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(vec![n, len], out)?, Op::SliceCols(x, start), rg))
    }

    /// Rows `start..start+len` of a 2-D tensor.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, m) = self.dims2(x, "slice_rows")?;
        if len == 0 || start + len > n {
            return Err(Error::dim(format!("row slice {start}+{len} of {n}")));
        }
        let out = self.value(x).data()[start * m..(start + len) * m].to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(vec![len, m], out)?, Op::SliceRows(x, start), rg))
    }

    /// Horizontal concatenation of 2-D tensors with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::dim("concat of nothing"));
        }
        let n = self.dims2(parts[0], "concat_cols")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pn, pm) = self.dims2(p, "concat_cols")?;
            if pn != n {
                return Err(Error::dim(format!("concat_cols rows {pn} vs {n}")));
            }
            widths.push(pm);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::new(vec![n, total], out)?,
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    /// Vertical concatenation of 2-D tensors with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::dim("concat of nothing"));
        }
        let m = self.dims2(parts[0], "concat_rows")?.1;
        let mut out = Vec::new();
        let mut n = 0;
        for &p in parts {
            let (pn, pm) = self.dims2(p, "concat_rows")?;
            if pm != m {
                return Err(Error::dim(format!("concat_rows cols {pm} vs {m}")));
            }
            n += pn;
            out.extend_from_slice(self.value(p).data());
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::new(vec![n, m], out)?,
            Op::ConcatRows(parts.to_vec()),
            rg,
        ))
    }

    /// Column means of `[n×m]`, as `[1×m]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (n, m) = self.dims2(x, "mean_rows")?;
        let mut out = vec![0.0; m];
        for row in self.value(x).data().chunks(m) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= n as f64;
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(vec![1, m], out)?, Op::MeanRows(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// 2-D convolution on an `[H×W×Cin]` map with a `[k×k×Cin×Cout]` kernel,
    /// `[Cout]` bias, square stride and zero padding.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (h, w, cin) = match *self.shape(input) {
            [h, w, c] => (h, w, c),
            ref s => return Err(Error::dim(format!("conv2d input must be H×W×C, got {s:?}"))),
        };
        let (k, k2, wcin, cout) = match *self.shape(weight) {
            [a, b, c, d] => (a, b, c, d),
            ref s => return Err(Error::dim(format!("conv2d kernel must be k×k×Cin×Cout, got {s:?}"))),
        };
        if k != k2 || wcin != cin || self.value(bias).numel() != cout || stride == 0 {
            return Err(Error::dim(format!(
                "conv2d kernel {:?} / bias {} incompatible with input {:?}",
                self.shape(weight),
                self.value(bias).numel(),
                self.shape(input)
            )));
        }
        let (ho, wo) = conv_out_dims(h, w, k, stride, pad)
            .ok_or_else(|| Error::dim("conv2d kernel larger than padded input"))?;
        let x = self.value(input).data();
        let wt = self.value(weight).data();
        let b = self.value(bias).data();
        let mut out = vec![0.0; ho * wo * cout];
        for oy in 0..ho {
            for ox in 0..wo {
                let o = &mut out[(oy * wo + ox) * cout..(oy * wo + ox + 1) * cout];
                o.copy_from_slice(b);
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let xin = &x[(iy as usize * w + ix as usize) * cin..][..cin];
                        let wbase = (ky * k + kx) * cin * cout;
                        for (ci, &xv) in xin.iter().enumerate() {
                            if xv == 0.0 {
                                continue;
                            }
                            let wrow = &wt[wbase + ci * cout..][..cout];
                            for (ov, &wv) in o.iter_mut().zip(wrow) {
                                *ov += xv * wv;
                            }
                        }
                    }
                }
            }
        }
        let rg = self.rg(&[input, weight, bias]);
        Ok(self.push(
            Tensor::new(vec![ho, wo, cout], out)?,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            },
            rg,
        ))
    }

    /// Splits an `[S×S×C]` image into row-major `p×p` patches, one flattened
    /// `(dy, dx, c)` patch per output row: `[(S/p)² × p·p·C]`.
    pub fn patchify(&mut self, image: Var, patch: usize) -> Result<Var> {
        let (h, w, c) = match *self.shape(image) {
            [h, w, c] => (h, w, c),
            ref s => return Err(Error::dim(format!("patchify expects H×W×C, got {s:?}"))),
        };
        if patch == 0 || h % patch != 0 || w % patch != 0 {
            return Err(Error::config(format!(
                "image {h}×{w} is not divisible into {patch}-pixel patches"
            )));
        }
        let x = self.value(image).data();
        let (gy, gx) = (h / patch, w / patch);
        let width = patch * patch * c;
        let mut out = Vec::with_capacity(gy * gx * width);
        for py in 0..gy {
            for px in 0..gx {
                for dy in 0..patch {
                    let y = py * patch + dy;
                    let start = (y * w + px * patch) * c;
                    out.extend_from_slice(&x[start..start + patch * c]);
                }
            }
        }
        let rg = self.rg(&[image]);
        Ok(self.push(
            Tensor::new(vec![gy * gx, width], out)?,
            Op::Patchify(image, patch),
            rg,
        ))
    }

    /// Back-propagates from a single-element `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar output, got shape {:?}",
                self.shape(output)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![1.0]);
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads: grads
                .into_iter()
                .enumerate()
                .map(|(i, g)| {
                    g.filter(|_| self.nodes[i].requires_grad).map(|g| {
                        Tensor::new(self.nodes[i].value.shape().to_vec(), g).expect("grad shape")
                    })
                })
                .collect(),
        })
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (n, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let m = self.shape(*b)[1];
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                acc(*a, &mut |s| matmul_bt_into(g, bv, s, n, m, k));
                acc(*b, &mut |s| matmul_at_into(av, g, s, n, k, m));
            }
            Op::AddRowBias(x, b) => {
                acc(*x, &mut |s| add_into(s, g));
                let m = self.value(*b).numel();
                acc(*b, &mut |s| {
                    for row in g.chunks(m) {
                        add_into(s, row);
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| {
                    for (o, gv) in s.iter_mut().zip(g) {
                        *o -= gv;
                    }
                });
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                acc(*a, &mut |s| {
                    for ((o, gv), y) in s.iter_mut().zip(g).zip(bv) {
                        *o += gv * y;
                    }
                });
                acc(*b, &mut |s| {
                    for ((o, gv), x) in s.iter_mut().zip(g).zip(av) {
                        *o += gv * x;
                    }
                });
            }
            Op::Affine(x, scale) => acc(*x, &mut |s| {
                for (o, gv) in s.iter_mut().zip(g) {
                    *o += scale * gv;
                }
            }),
            Op::MulConst(x, c) => acc(*x, &mut |s| {
                for ((o, gv), cv) in s.iter_mut().zip(g).zip(c.data()) {
                    *o += gv * cv;
                }
            }),
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                acc(*x, &mut |s| {
                    for ((o, gv), t) in s.iter_mut().zip(g).zip(xv) {
                        if *t > 0.0 {
                            *o += gv;
                        }
                    }
                });
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                acc(*x, &mut |s| {
                    for ((o, gv), &t) in s.iter_mut().zip(g).zip(xv) {
                        let u = GELU_C * (t + GELU_A * t * t * t);
                        let th = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * GELU_A * t * t);
                        *o += gv * (0.5 * (1.0 + th) + 0.5 * t * (1.0 - th * th) * du);
                    }
                });
            }
            Op::Sigmoid(x) => {
                let yv = node.value.data();
                acc(*x, &mut |s| {
                    for ((o, gv), y) in s.iter_mut().zip(g).zip(yv) {
                        *o += gv * y * (1.0 - y);
                    }
                });
            }
            Op::Ln(x, floor) => {
                let xv = self.value(*x).data();
                acc(*x, &mut |s| {
                    for ((o, gv), &t) in s.iter_mut().zip(g).zip(xv) {
                        if t > *floor {
                            *o += gv / t;
                        }
                    }
                });
            }
            Op::Powf(x, p) => {
                let xv = self.value(*x).data();
                acc(*x, &mut |s| {
                    if *p == 0.0 {
                        return;
                    }
                    for ((o, gv), &t) in s.iter_mut().zip(g).zip(xv) {
                        let t = t.max(0.0);
                        let d = if *p == 1.0 { 1.0 } else { p * t.powf(p - 1.0) };
                        if d.is_finite() {
                            *o += gv * d;
                        }
                    }
                });
            }
            Op::SoftmaxRows(x) => {
                let m = node.value.cols();
                let yv = node.value.data();
                acc(*x, &mut |s| {
                    for ((srow, grow), yrow) in s.chunks_mut(m).zip(g.chunks(m)).zip(yv.chunks(m)) {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for ((o, gv), y) in srow.iter_mut().zip(grow).zip(yrow) {
                            *o += y * (gv - dot);
                        }
                    }
                });
            }
            Op::LayerNormRows {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let m = node.value.cols();
                let gam = self.value(*gamma).data();
                acc(*x, &mut |s| {
                    for (i, (srow, grow)) in s.chunks_mut(m).zip(g.chunks(m)).enumerate() {
                        let zrow = &normalized[i * m..(i + 1) * m];
                        let dz: Vec<f64> = grow.iter().zip(gam).map(|(a, b)| a * b).collect();
                        let mean_dz = dz.iter().sum::<f64>() / m as f64;
                        let mean_dzz =
                            dz.iter().zip(zrow).map(|(a, b)| a * b).sum::<f64>() / m as f64;
                        for j in 0..m {
                            srow[j] += inv_std[i] * (dz[j] - mean_dz - zrow[j] * mean_dzz);
                        }
                    }
                });
                acc(*gamma, &mut |s| {
                    for (grow, zrow) in g.chunks(m).zip(normalized.chunks(m)) {
                        for ((o, gv), z) in s.iter_mut().zip(grow).zip(zrow) {
                            *o += gv * z;
                        }
                    }
                });
                acc(*beta, &mut |s| {
                    for grow in g.chunks(m) {
                        add_into(s, grow);
                    }
                });
            }
            Op::Transpose(x) => {
                let (n, m) = (self.shape(*x)[0], self.shape(*x)[1]);
                acc(*x, &mut |s| {
                    for i in 0..n {
                        for j in 0..m {
                            s[i * m + j] += g[j * n + i];
                        }
                    }
                });
            }
            Op::Reshape(x) => acc(*x, &mut |s| add_into(s, g)),
            Op::SliceCols(x, start) => {
                let m = self.shape(*x)[1];
                let len = node.value.cols();
                acc(*x, &mut |s| {
                    for (i, grow) in g.chunks(len).enumerate() {
                        add_into(&mut s[i * m + start..i * m + start + len], grow);
                    }
                });
            }
            Op::SliceRows(x, start) => {
                let m = self.shape(*x)[1];
                acc(*x, &mut |s| add_into(&mut s[start * m..start * m + g.len()], g));
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    acc(p, &mut |s| {
                        for (i, srow) in s.chunks_mut(w).enumerate() {
                            add_into(srow, &g[i * total + offset..i * total + offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    acc(p, &mut |s| add_into(s, &g[offset..offset + len]));
                    offset += len;
                }
            }
            Op::MeanRows(x) => {
                let n = self.shape(*x)[0] as f64;
                let m = node.value.cols();
                acc(*x, &mut |s| {
                    for srow in s.chunks_mut(m) {
                        for (o, gv) in srow.iter_mut().zip(g) {
                            *o += gv / n;
                        }
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |s| {
                for o in s.iter_mut() {
                    *o += g[0];
                }
            }),
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            } => self.conv2d_backward(node, *input, *weight, *bias, *stride, *pad, g, &mut acc),
            Op::Patchify(image, patch) => {
                let (h, w, c) = (self.shape(*image)[0], self.shape(*image)[1], self.shape(*image)[2]);
                let _ = h;
                let p = *patch;
                let gx = w / p;
                let width = p * p * c;
                acc(*image, &mut |s| {
                    for (row, grow) in g.chunks(width).enumerate() {
                        let (py, px) = (row / gx, row % gx);
                        for dy in 0..p {
                            let y = py * p + dy;
                            let start = (y * w + px * p) * c;
                            add_into(&mut s[start..start + p * c], &grow[dy * p * c..(dy + 1) * p * c]);
                        }
                    }
                });
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv2d_backward(
        &self,
        node: &Node,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        pad: usize,
        g: &[f64],
        acc: &mut dyn FnMut(Var, &mut dyn FnMut(&mut [f64])),
    ) {
        let (h, w, cin) = (self.shape(input)[0], self.shape(input)[1], self.shape(input)[2]);
        let k = self.shape(weight)[0];
        let (ho, wo, cout) = (node.value.shape()[0], node.value.shape()[1], node.value.shape()[2]);
        let x = self.value(input).data();
        let wt = self.value(weight).data();
        let taps = |oy: usize, ox: usize, f: &mut dyn FnMut(usize, usize)| {
            for ky in 0..k {
                let iy = (oy * stride + ky) as isize - pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    f((iy as usize * w + ix as usize) * cin, (ky * k + kx) * cin * cout);
                }
            }
        };
        acc(bias, &mut |s| {
            for grow in g.chunks(cout) {
                add_into(s, grow);
            }
        });
        acc(weight, &mut |s| {
            for oy in 0..ho {
                for ox in 0..wo {
                    let go = &g[(oy * wo + ox) * cout..][..cout];
                    taps(oy, ox, &mut |xbase, wbase| {
                        for ci in 0..cin {
                            let xv = x[xbase + ci];
                            if xv == 0.0 {
                                continue;
                            }
                            let srow = &mut s[wbase + ci * cout..][..cout];
                            for (o, gv) in srow.iter_mut().zip(go) {
                                *o += xv * gv;
                            }
                        }
                    });
                }
            }
        });
        acc(input, &mut |s| {
            for oy in 0..ho {
                for ox in 0..wo {
                    let go = &g[(oy * wo + ox) * cout..][..cout];
                    taps(oy, ox, &mut |xbase, wbase| {
                        for ci in 0..cin {
                            let wrow = &wt[wbase + ci * cout..][..cout];
                            s[xbase + ci] += wrow.iter().zip(go).map(|(a, b)| a * b).sum::<f64>();
                        }
                    });
                }
            }
        });
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Output extents of a convolution, `None` when the kernel does not fit.
pub fn conv_out_dims(h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Option<(usize, usize)> {
    let oh = (h + 2 * pad).checked_sub(k)? / stride + 1;
    let ow = (w + 2 * pad).checked_sub(k)? / stride + 1;
    Some((oh, ow))
}
