//! Reverse-mode automatic differentiation over a Wengert list.
//!
//! Every operation appends a node holding its value and enough context to
//! push an upstream gradient back to its inputs. [`Tape::backward`] walks the
//! list once in reverse, summing contributions when a node feeds several
//! consumers.

use crate::error::{Error, Result};
use crate::ndmath::conv::{self, ConvPlan};
use crate::ndmath::{Array, Scalar};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Additive floor under squared distances before the square root.
pub const DISTANCE_EPS: f64 = 1e-12;

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Maximum(Var, Var),
    AddScalar(Var),
    MulScalar(Var, T),
    Exp(Var),
    Relu(Var),
    Square(Var),
    MatMul(Var, Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    RowMin { input: Var, argmin: Vec<usize> },
    PairwiseDistances(Var),
    Linear { x: Var, w: Var, b: Var },
    Conv2d { x: Var, w: Var, b: Var, plan: ConvPlan },
    ConvTranspose2d { x: Var, w: Var, b: Var, plan: ConvPlan },
    Reshape(Var),
    Crop(Var),
    Dropout { x: Var, mask: Vec<T> },
    Mse(Var, Var),
    SoftmaxCrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<T> },
    GlobalAvgPool(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Array<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

/// Gradients of one scalar output with respect to every node on the tape.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Array<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of `v`; zeros when `v` did not influence the output.
    pub fn get(&self, v: Var) -> Array<T> {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Array::zeros(&self.shapes[v.0]))
    }

    pub fn take(&mut self, v: Var) -> Array<T> {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Array::zeros(&self.shapes[v.0]))
    }
}

fn same_shape<T: Scalar>(op: &'static str, a: &Array<T>, b: &Array<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn zip_map<T: Scalar>(a: &Array<T>, b: &Array<T>, f: impl Fn(T, T) -> T) -> Array<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Array::new(a.shape(), data).expect("same shape")
}

fn rank2<T: Scalar>(op: &'static str, a: &Array<T>) -> Result<(usize, usize)> {
    match *a.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(Error::shape(op, format!("expected rank 2, got {:?}", a.shape()))),
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A trainable leaf (gradients are tracked).
    pub fn param(&mut self, value: Array<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant leaf (no gradient is propagated into it).
    pub fn constant(&mut self, value: Array<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array<T> {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> T {
        self.nodes[v.0].value.item()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("add", va, vb)?;
        let out = zip_map(va, vb, |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("sub", va, vb)?;
        let out = zip_map(va, vb, |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("mul", va, vb)?;
        let out = zip_map(va, vb, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("div", va, vb)?;
        let out = zip_map(va, vb, |x, y| x / y);
        Ok(self.push(out, Op::Div(a, b), &[a, b]))
    }

    /// Elementwise maximum; ties route the gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("maximum", va, vb)?;
        let out = zip_map(va, vb, |x, y| if x >= y { x } else { y });
        Ok(self.push(out, Op::Maximum(a, b), &[a, b]))
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|x| x + c);
        self.push(out, Op::AddScalar(a), &[a])
    }

    pub fn mul_scalar(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::MulScalar(a, c), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.exp());
        self.push(out, Op::Exp(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        self.push(out, Op::Square(a), &[a])
    }

    /// `[m, k] · [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = rank2("matmul", self.value(a))?;
        let (k2, n) = rank2("matmul", self.value(b))?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{m},{k}] x [{k2},{n}]")));
        }
        let mut out = Array::zeros(&[m, n]);
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.value(a).data(),
            k,
            1,
            self.value(b).data(),
            n,
            1,
            T::zero(),
            out.data_mut(),
            n,
            1,
        );
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Array::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let out = Array::scalar(va.sum() / T::of(va.len() as f64));
        self.push(out, Op::Mean(a), &[a])
    }

    /// Row sums of a rank-2 array: `[n, k] -> [n]`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let (n, _) = rank2("sum_rows", self.value(a))?;
        let va = self.value(a);
        let data = (0..n).map(|i| va.row(i).iter().copied().sum()).collect();
        let out = Array::new(&[n], data)?;
        Ok(self.push(out, Op::SumRows(a), &[a]))
    }

    /// Row-wise minimum over the entries whose `allowed` flag is set; ties
    /// resolve to the lowest column. Every row needs one allowed entry.
    pub fn row_min(&mut self, a: Var, allowed: &[bool]) -> Result<Var> {
        let (n, k) = rank2("row_min", self.value(a))?;
        if allowed.len() != n * k {
            return Err(Error::shape("row_min", "mask size differs from input"));
        }
        let va = self.value(a);
        let mut argmin = Vec::with_capacity(n);
        let mut data = Vec::with_capacity(n);
        for i in 0..n {
            let best = (0..k)
                .filter(|&j| allowed[i * k + j])
                .fold(None::<usize>, |best, j| match best {
                    Some(b) if va.at2(i, b) <= va.at2(i, j) => Some(b),
                    _ => Some(j),
                })
                .ok_or_else(|| Error::shape("row_min", format!("row {i} has no allowed entry")))?;
            argmin.push(best);
            data.push(va.at2(i, best));
        }
        let out = Array::new(&[n], data)?;
        Ok(self.push(out, Op::RowMin { input: a, argmin }, &[a]))
    }

    /// Euclidean distance matrix of the rows of `[n, d]`, with a zero diagonal
    /// and `sqrt(max(eps, |zi - zj|²))` off the diagonal.
    pub fn pairwise_distances(&mut self, z: Var) -> Result<Var> {
        let (n, d) = rank2("pairwise_distances", self.value(z))?;
        let out = pairwise_distance_values(self.value(z).data(), n, d);
        Ok(self.push(out, Op::PairwiseDistances(z), &[z]))
    }

    /// `x · wᵀ + b` with `x: [batch, in]`, `w: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (bn, fin) = rank2("linear", self.value(x))?;
        let (fout, win) = rank2("linear", self.value(w))?;
        if fin != win || self.value(b).shape() != [fout] {
            return Err(Error::shape(
                "linear",
                format!(
                    "x {:?}, w {:?}, b {:?}",
                    self.value(x).shape(),
                    self.value(w).shape(),
                    self.value(b).shape()
                ),
            ));
        }
        let mut out = Array::zeros(&[bn, fout]);
        {
            let bias = self.value(b).data();
            for row in out.data_mut().chunks_mut(fout) {
                row.copy_from_slice(bias);
            }
        }
        T::gemm(
            bn,
            fin,
            fout,
            T::one(),
            self.value(x).data(),
            fin,
            1,
            self.value(w).data(),
            1,
            fin,
            T::one(),
            out.data_mut(),
            fout,
            1,
        );
        Ok(self.push(out, Op::Linear { x, w, b }, &[x, w, b]))
    }

    /// Batched convolution: `x: [B, Cin, H, W]`, `w: [Cout, Cin, k, k]`, `b: [Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let plan = ConvPlan::conv(self.value(x).shape(), self.value(w).shape(), stride, pad)?;
        check_bias("conv2d", self.value(b), self.value(w).dim(0))?;
        let out = conv::conv2d_forward(&plan, self.value(x), self.value(w), self.value(b));
        Ok(self.push(out, Op::Conv2d { x, w, b, plan }, &[x, w, b]))
    }

    /// Batched transposed convolution: `x: [B, Cin, H, W]`,
    /// `w: [Cin, Cout, k, k]`, `b: [Cout]`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
        output_padding: usize,
    ) -> Result<Var> {
        let plan = ConvPlan::transpose(
            self.value(x).shape(),
            self.value(w).shape(),
            stride,
            pad,
            output_padding,
        )?;
        check_bias("conv2d_transpose", self.value(b), self.value(w).dim(1))?;
        let out = conv::conv_transpose2d_forward(&plan, self.value(x), self.value(w), self.value(b));
        Ok(self.push(out, Op::ConvTranspose2d { x, w, b, plan }, &[x, w, b]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(a), &[a]))
    }

    /// Keeps the top-left `height × width` window of every plane of
    /// `[B, C, H, W]`.
    pub fn crop2d(&mut self, a: Var, height: usize, width: usize) -> Result<Var> {
        let [bn, c, h, w] = conv::batch_dims("crop2d", self.value(a))?;
        if height > h || width > w {
            return Err(Error::shape("crop2d", format!("window {height}x{width} exceeds {h}x{w}")));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(bn * c * height * width);
        for plane in src.chunks(h * w) {
            for row in plane.chunks(w).take(height) {
                data.extend_from_slice(&row[..width]);
            }
        }
        let out = Array::new(&[bn, c, height, width], data)?;
        Ok(self.push(out, Op::Crop(a), &[a]))
    }

    /// Multiplies by a fixed mask (inverted-dropout scale already folded in).
    pub fn dropout_mask(&mut self, a: Var, mask: Vec<T>) -> Result<Var> {
        if mask.len() != self.value(a).len() {
            return Err(Error::shape("dropout", "mask size differs from input"));
        }
        let data = self.value(a).data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let out = Array::new(self.value(a).shape(), data)?;
        Ok(self.push(out, Op::Dropout { x: a, mask }, &[a]))
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("mse", va, vb)?;
        let n = T::of(va.len() as f64);
        let s: T = va.data().iter().zip(vb.data()).map(|(&x, &y)| (x - y) * (x - y)).sum();
        Ok(self.push(Array::scalar(s / n), Op::Mse(a, b), &[a, b]))
    }

    /// Mean softmax cross-entropy of `[B, C]` logits against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (bn, c) = rank2("softmax_cross_entropy", self.value(logits))?;
        if labels.len() != bn || labels.iter().any(|&l| l >= c) {
            return Err(Error::shape("softmax_cross_entropy", "labels do not fit logits"));
        }
        let v = self.value(logits);
        let mut probs = Vec::with_capacity(bn * c);
        let mut loss = T::zero();
        for (i, &label) in labels.iter().enumerate() {
            let row = v.row(i);
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let exps: Vec<T> = row.iter().map(|&x| (x - m).exp()).collect();
            let z: T = exps.iter().copied().sum();
            loss += z.ln() + m - row[label];
            probs.extend(exps.into_iter().map(|e| e / z));
        }
        let out = Array::scalar(loss / T::of(bn as f64));
        Ok(self.push(
            out,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// `[B, C, H, W] -> [B, C]` spatial mean.
    pub fn global_avg_pool(&mut self, a: Var) -> Result<Var> {
        let [bn, c, h, w] = conv::batch_dims("global_avg_pool", self.value(a))?;
        let inv = T::of(1.0 / (h * w) as f64);
        let data = self
            .value(a)
            .data()
            .chunks(h * w)
            .map(|plane| plane.iter().copied().sum::<T>() * inv)
            .collect();
        let out = Array::new(&[bn, c], data)?;
        Ok(self.push(out, Op::GlobalAvgPool(a), &[a]))
    }

    /// Gradients of the scalar node `output` with respect to all nodes.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        if self.value(output).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("output must be scalar, got {:?}", self.value(output).shape()),
            ));
        }
        let mut grads: Vec<Option<Array<T>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Array::full(self.value(output).shape(), T::one()));
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node<T>, g: &Array<T>, grads: &mut [Option<Array<T>>]) -> Result<()> {
        let mut acc = |v: Var, d: Array<T>| {
            if !self.wants(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&d),
                slot @ None => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(*a, zip_map(g, vb, |x, y| x * y));
                acc(*b, zip_map(g, va, |x, y| x * y));
            }
            Op::Div(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(*a, zip_map(g, vb, |x, y| x / y));
                let ga = zip_map(g, va, |x, y| x * y);
                acc(*b, zip_map(&ga, vb, |x, y| -x / (y * y)));
            }
            Op::Maximum(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let pick: Vec<bool> = va.data().iter().zip(vb.data()).map(|(x, y)| x >= y).collect();
                let mut ga = g.clone();
                let mut gb = g.clone();
                for (i, &p) in pick.iter().enumerate() {
                    if p {
                        gb.data_mut()[i] = T::zero();
                    } else {
                        ga.data_mut()[i] = T::zero();
                    }
                }
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::MulScalar(a, c) => {
                let c = *c;
                acc(*a, g.map(|x| x * c));
            }
            Op::Exp(a) => acc(*a, zip_map(g, &node.value, |x, y| x * y)),
            Op::Relu(a) => acc(
                *a,
                zip_map(g, self.value(*a), |x, y| if y > T::zero() { x } else { T::zero() }),
            ),
            Op::Square(a) => acc(*a, zip_map(g, self.value(*a), |x, y| T::of(2.0) * x * y)),
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = (va.dim(0), va.dim(1));
                let n = vb.dim(1);
                if self.wants(*a) {
                    let mut da = Array::zeros(&[m, k]);
                    T::gemm(m, n, k, T::one(), g.data(), n, 1, vb.data(), 1, n, T::zero(), da.data_mut(), k, 1);
                    acc(*a, da);
                }
                if self.wants(*b) {
                    let mut db = Array::zeros(&[k, n]);
                    T::gemm(k, m, n, T::one(), va.data(), 1, k, g.data(), n, 1, T::zero(), db.data_mut(), n, 1);
                    acc(*b, db);
                }
            }
            Op::Sum(a) => {
                let s = g.item();
                acc(*a, Array::full(self.value(*a).shape(), s));
            }
            Op::Mean(a) => {
                let va = self.value(*a);
                let s = g.item() / T::of(va.len() as f64);
                acc(*a, Array::full(va.shape(), s));
            }
            Op::SumRows(a) => {
                let va = self.value(*a);
                let k = va.dim(1);
                let data = g.data().iter().flat_map(|&x| std::iter::repeat_n(x, k)).collect();
                acc(*a, Array::new(va.shape(), data)?);
            }
            Op::RowMin { input, argmin } => {
                let va = self.value(*input);
                let k = va.dim(1);
                let mut d = Array::zeros(va.shape());
                for (i, &j) in argmin.iter().enumerate() {
                    d.data_mut()[i * k + j] = g.data()[i];
                }
                acc(*input, d);
            }
            Op::PairwiseDistances(z) => {
                let vz = self.value(*z);
                let (n, dim) = (vz.dim(0), vz.dim(1));
                let dist = &node.value;
                let eps = T::of(DISTANCE_EPS);
                let mut dz = Array::zeros(vz.shape());
                for i in 0..n {
                    let zi = vz.row(i);
                    for j in 0..n {
                        if i == j {
                            continue;
                        }
                        let dij = dist.at2(i, j);
                        if dij * dij <= eps {
                            continue;
                        }
                        let coef = (g.at2(i, j) + g.at2(j, i)) / dij;
                        if coef == T::zero() {
                            continue;
                        }
                        let zj = vz.row(j);
                        let row = &mut dz.data_mut()[i * dim..(i + 1) * dim];
                        for t in 0..dim {
                            row[t] += coef * (zi[t] - zj[t]);
                        }
                    }
                }
                acc(*z, dz);
            }
            Op::Linear { x, w, b } => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                let (bn, fin) = (vx.dim(0), vx.dim(1));
                let fout = vw.dim(0);
                if self.wants(*x) {
                    let mut dx = Array::zeros(&[bn, fin]);
                    T::gemm(bn, fout, fin, T::one(), g.data(), fout, 1, vw.data(), fin, 1, T::zero(), dx.data_mut(), fin, 1);
                    acc(*x, dx);
                }
                if self.wants(*w) {
                    let mut dw = Array::zeros(&[fout, fin]);
                    T::gemm(fout, bn, fin, T::one(), g.data(), 1, fout, vx.data(), fin, 1, T::zero(), dw.data_mut(), fin, 1);
                    acc(*w, dw);
                }
                if self.wants(*b) {
                    let mut db = Array::zeros(&[fout]);
                    for row in g.data().chunks(fout) {
                        for (d, &r) in db.data_mut().iter_mut().zip(row) {
                            *d += r;
                        }
                    }
                    acc(*b, db);
                }
            }
            Op::Conv2d { x, w, b, plan } => {
                let grads = conv::conv2d_backward(plan, self.value(*x), self.value(*w), g, self.wants(*x));
                if let Some(dx) = grads.dx {
                    acc(*x, dx);
                }
                acc(*w, grads.dw);
                acc(*b, grads.db);
            }
            Op::ConvTranspose2d { x, w, b, plan } => {
                let grads =
                    conv::conv_transpose2d_backward(plan, self.value(*x), self.value(*w), g, self.wants(*x));
                if let Some(dx) = grads.dx {
                    acc(*x, dx);
                }
                acc(*w, grads.dw);
                acc(*b, grads.db);
            }
            Op::Reshape(a) => acc(*a, g.clone().reshape(self.value(*a).shape())?),
            Op::Crop(a) => {
                let va = self.value(*a);
                let (h, w) = (va.dim(2), va.dim(3));
                let (ch, cw) = (g.dim(2), g.dim(3));
                let mut d = Array::zeros(va.shape());
                for (dst, src) in d.data_mut().chunks_mut(h * w).zip(g.data().chunks(ch * cw)) {
                    for (drow, srow) in dst.chunks_mut(w).zip(src.chunks(cw)) {
                        drow[..cw].copy_from_slice(srow);
                    }
                }
                acc(*a, d);
            }
            Op::Dropout { x, mask } => {
                let data = g.data().iter().zip(mask).map(|(&d, &m)| d * m).collect();
                acc(*x, Array::new(g.shape(), data)?);
            }
            Op::Mse(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let scale = g.item() * T::of(2.0 / va.len() as f64);
                let da = zip_map(va, vb, |x, y| (x - y) * scale);
                acc(*b, da.map(|x| -x));
                acc(*a, da);
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let shape = self.value(*logits).shape();
                let c = shape[1];
                let scale = g.item() / T::of(labels.len() as f64);
                let mut d = probs.clone();
                for (i, &l) in labels.iter().enumerate() {
                    d[i * c + l] -= T::one();
                }
                for v in &mut d {
                    *v *= scale;
                }
                acc(*logits, Array::new(shape, d)?);
            }
            Op::GlobalAvgPool(a) => {
                let va = self.value(*a);
                let plane = va.dim(2) * va.dim(3);
                let inv = T::of(1.0 / plane as f64);
                let data = g
                    .data()
                    .iter()
                    .flat_map(|&x| std::iter::repeat_n(x * inv, plane))
                    .collect();
                acc(*a, Array::new(va.shape(), data)?);
            }
        }
        Ok(())
    }
}

fn check_bias<T: Scalar>(op: &'static str, b: &Array<T>, channels: usize) -> Result<()> {
    if b.shape() != [channels] {
        return Err(Error::shape(op, format!("bias {:?}, expected [{channels}]", b.shape())));
    }
    Ok(())
}

/// Distance matrix of `n` row vectors of width `d` (same convention as the
/// differentiable op).
pub(crate) fn pairwise_distance_values<T: Scalar>(z: &[T], n: usize, d: usize) -> Array<T> {
    let eps = T::of(DISTANCE_EPS);
    let mut out = Array::zeros(&[n, n]);
    for i in 0..n {
        for j in (i + 1)..n {
            let sq: T = z[i * d..(i + 1) * d]
                .iter()
                .zip(&z[j * d..(j + 1) * d])
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum();
            let v = sq.max(eps).sqrt();
            out.data_mut()[i * n + j] = v;
            out.data_mut()[j * n + i] = v;
        }
    }
    out
}
