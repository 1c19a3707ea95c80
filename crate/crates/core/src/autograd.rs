//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its output
//! value and enough information to push gradients back to its parents.
//! All values are two-dimensional; vectors are `1×n` or `n×1` matrices and
//! scalars are `1×1`. Element-wise binary operations broadcast along axes of
//! length one.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis, Zip};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Minimum(Var, Var),
    Maximum(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Transpose(Var),
    Gelu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        xhat: Array2<f64>,
        inv_std: Vec<f64>,
    },
    SumAll(Var),
    MeanRows(Var),
    MeanCols(Var),
    ArgRows(Var, Vec<usize>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Reshape(Var),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<f64>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> (usize, usize) {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            x
        } else if x == 1 {
            y
        } else {
            panic!("cannot broadcast shapes {a:?} and {b:?}")
        }
    };
    (dim(a.0, b.0), dim(a.1, b.1))
}

/// Sum `g` down to `shape`, undoing broadcasting.
fn unbroadcast(g: Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    let mut g = g;
    if shape.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

fn broadcast_to(a: &Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    a.broadcast(shape)
        .unwrap_or_else(|| panic!("cannot broadcast {:?} to {shape:?}", a.dim()))
        .to_owned()
}

fn zip_with(
    a: &Array2<f64>,
    b: &Array2<f64>,
    f: impl Fn(f64, f64) -> f64,
) -> Array2<f64> {
    let shape = broadcast_shape(a.dim(), b.dim());
    let a = a.broadcast(shape).unwrap();
    let b = b.broadcast(shape).unwrap();
    let mut out = Array2::zeros(shape);
    Zip::from(&mut out)
        .and(&a)
        .and(&b)
        .for_each(|o, &x, &y| *o = f(x, y));
    out
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Row-wise softmax of a plain matrix.
pub fn softmax_rows(x: ArrayView2<f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
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

    /// A differentiable leaf (parameter or input under test).
    pub fn variable(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar_constant(&mut self, v: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), v))
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let val = &self.nodes[v.0].value;
        assert_eq!(val.dim(), (1, 1), "scalar() on non-scalar node");
        val[[0, 0]]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(
            va.ncols(),
            vb.nrows(),
            "matmul shape mismatch {:?} x {:?}",
            va.dim(),
            vb.dim()
        );
        let out = va.dot(vb);
        let rg = self.rg(&[a, b]);
        self.push(out, Op::MatMul(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = zip_with(self.value(a), self.value(b), |x, y| x + y);
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = zip_with(self.value(a), self.value(b), |x, y| x - y);
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = zip_with(self.value(a), self.value(b), |x, y| x * y);
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Mul(a, b), rg)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let out = zip_with(self.value(a), self.value(b), |x, y| x / y);
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Div(a, b), rg)
    }

    /// Element-wise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        let out = zip_with(self.value(a), self.value(b), f64::min);
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Minimum(a, b), rg)
    }

    /// Element-wise maximum; ties route the gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Var {
        let out = zip_with(self.value(a), self.value(b), f64::max);
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Maximum(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a) * k;
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, k), rg)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a) + k;
        let rg = self.rg(&[a]);
        self.push(out, Op::Shift(a), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        let rg = self.rg(&[a]);
        self.push(out, Op::Transpose(a), rg)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(gelu);
        let rg = self.rg(&[a]);
        self.push(out, Op::Gelu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        let rg = self.rg(&[a]);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(softplus);
        let rg = self.rg(&[a]);
        self.push(out, Op::Softplus(a), rg)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::ln);
        let rg = self.rg(&[a]);
        self.push(out, Op::Log(a), rg)
    }

    /// Clamp into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).mapv(|v| v.clamp(lo, hi));
        let rg = self.rg(&[a]);
        self.push(out, Op::Clamp(a, lo, hi), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a).view());
        let rg = self.rg(&[a]);
        self.push(out, Op::SoftmaxRows(a), rg)
    }

    /// Per-row normalisation to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Var {
        let v = self.value(x);
        let n = v.ncols() as f64;
        let mut xhat = v.clone();
        let mut inv_std = Vec::with_capacity(v.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / n;
            row.mapv_inplace(|a| a - mean);
            let var = row.iter().map(|a| a * a).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|a| a * inv);
            inv_std.push(inv);
        }
        let rg = self.rg(&[x]);
        let out = xhat.clone();
        self.push(out, Op::LayerNorm { x, xhat, inv_std }, rg)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = Array2::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(out, Op::SumAll(a), rg)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Mean of each row, as an `r×1` column.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let out = self
            .value(a)
            .mean_axis(Axis(1))
            .expect("mean over empty rows")
            .insert_axis(Axis(1));
        let rg = self.rg(&[a]);
        self.push(out, Op::MeanRows(a), rg)
    }

    /// Mean of each column, as a `1×c` row.
    pub fn mean_cols(&mut self, a: Var) -> Var {
        let out = self
            .value(a)
            .mean_axis(Axis(0))
            .expect("mean over empty columns")
            .insert_axis(Axis(0));
        let rg = self.rg(&[a]);
        self.push(out, Op::MeanCols(a), rg)
    }

    fn arg_rows(&mut self, a: Var, pick_min: bool) -> Var {
        let v = self.value(a);
        let mut idx = Vec::with_capacity(v.nrows());
        let mut out = Array2::zeros((v.nrows(), 1));
        for (r, row) in v.rows().into_iter().enumerate() {
            let mut best = 0;
            for (c, &x) in row.iter().enumerate() {
                let better = if pick_min { x < row[best] } else { x > row[best] };
                if better {
                    best = c;
                }
            }
            idx.push(best);
            out[[r, 0]] = row[best];
        }
        let rg = self.rg(&[a]);
        self.push(out, Op::ArgRows(a, idx), rg)
    }

    /// Minimum of each row (`r×1`); gradient goes to the first minimiser.
    pub fn min_rows(&mut self, a: Var) -> Var {
        self.arg_rows(a, true)
    }

    /// Maximum of each row (`r×1`); gradient goes to the first maximiser.
    pub fn max_rows(&mut self, a: Var) -> Var {
        self.arg_rows(a, false)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let out = self.value(a).slice(s![start..end, ..]).to_owned();
        let rg = self.rg(&[a]);
        self.push(out, Op::SliceRows(a, start), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let out = self.value(a).slice(s![.., start..end]).to_owned();
        let rg = self.rg(&[a]);
        self.push(out, Op::SliceCols(a, start), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let out = concatenate(Axis(0), &views).expect("concat_rows column mismatch");
        let rg = self.rg(parts);
        self.push(out, Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let out = concatenate(Axis(1), &views).expect("concat_cols row mismatch");
        let rg = self.rg(parts);
        self.push(out, Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let v = self.value(a);
        assert_eq!(v.len(), rows * cols, "reshape changes element count");
        let out = Array2::from_shape_vec((rows, cols), v.iter().copied().collect()).unwrap();
        let rg = self.rg(&[a]);
        self.push(out, Op::Reshape(a), rg)
    }

    /// Multiply by a fixed mask (dropout with a pre-drawn, pre-scaled mask).
    pub fn mask(&mut self, a: Var, mask: Array2<f64>) -> Var {
        let m = self.constant(mask);
        self.mul(a, m)
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward from non-scalar");
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].requires_grad {
                    self.accumulate(grads, *a, g.dot(&vb.t()));
                }
                if self.nodes[b.0].requires_grad {
                    self.accumulate(grads, *b, va.t().dot(g));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, unbroadcast(g.clone(), self.shape(*a)));
                self.accumulate(grads, *b, unbroadcast(g.clone(), self.shape(*b)));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, unbroadcast(g.clone(), self.shape(*a)));
                self.accumulate(grads, *b, unbroadcast(-g, self.shape(*b)));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].requires_grad {
                    let ga = zip_with(g, vb, |x, y| x * y);
                    self.accumulate(grads, *a, unbroadcast(ga, va.dim()));
                }
                if self.nodes[b.0].requires_grad {
                    let gb = zip_with(g, va, |x, y| x * y);
                    self.accumulate(grads, *b, unbroadcast(gb, vb.dim()));
                }
            }
            Op::Div(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].requires_grad {
                    let ga = zip_with(g, vb, |x, y| x / y);
                    self.accumulate(grads, *a, unbroadcast(ga, va.dim()));
                }
                if self.nodes[b.0].requires_grad {
                    // d(a/b)/db = -out / b
                    let t = zip_with(g, &node.value, |x, y| -x * y);
                    let gb = zip_with(&t, vb, |x, y| x / y);
                    self.accumulate(grads, *b, unbroadcast(gb, vb.dim()));
                }
            }
            Op::Minimum(a, b) | Op::Maximum(a, b) => {
                let is_min = matches!(node.op, Op::Minimum(..));
                let (va, vb) = (self.value(*a), self.value(*b));
                let shape = node.value.dim();
                let ba = broadcast_to(va, shape);
                let bb = broadcast_to(vb, shape);
                let mut ga = Array2::zeros(shape);
                let mut gb = Array2::zeros(shape);
                Zip::from(&mut ga)
                    .and(&mut gb)
                    .and(g)
                    .and(&ba)
                    .and(&bb)
                    .for_each(|ga, gb, &gv, &x, &y| {
                        let to_a = if is_min { x <= y } else { x >= y };
                        if to_a {
                            *ga = gv;
                        } else {
                            *gb = gv;
                        }
                    });
                self.accumulate(grads, *a, unbroadcast(ga, va.dim()));
                self.accumulate(grads, *b, unbroadcast(gb, vb.dim()));
            }
            Op::Scale(a, k) => self.accumulate(grads, *a, g * *k),
            Op::Shift(a) => self.accumulate(grads, *a, g.clone()),
            Op::Transpose(a) => self.accumulate(grads, *a, g.t().to_owned()),
            Op::Gelu(a) => {
                let mut ga = self.value(*a).mapv(gelu_grad);
                ga *= g;
                self.accumulate(grads, *a, ga);
            }
            Op::Sigmoid(a) => {
                let mut ga = node.value.mapv(|y| y * (1.0 - y));
                ga *= g;
                self.accumulate(grads, *a, ga);
            }
            Op::Softplus(a) => {
                let mut ga = self.value(*a).mapv(sigmoid);
                ga *= g;
                self.accumulate(grads, *a, ga);
            }
            Op::Log(a) => {
                let ga = g / self.value(*a);
                self.accumulate(grads, *a, ga);
            }
            Op::Clamp(a, lo, hi) => {
                let mut ga = g.clone();
                Zip::from(&mut ga)
                    .and(self.value(*a))
                    .for_each(|gv, &x| {
                        if x < *lo || x > *hi {
                            *gv = 0.0;
                        }
                    });
                self.accumulate(grads, *a, ga);
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut ga = g * y;
                for (mut row, yrow) in ga.rows_mut().into_iter().zip(y.rows()) {
                    let dot = row.sum();
                    Zip::from(&mut row).and(&yrow).for_each(|r, &yv| *r -= yv * dot);
                }
                self.accumulate(grads, *a, ga);
            }
            Op::LayerNorm { x, xhat, inv_std } => {
                let n = xhat.ncols() as f64;
                let mut gx = Array2::zeros(xhat.dim());
                for r in 0..xhat.nrows() {
                    let gr = g.row(r);
                    let xr = xhat.row(r);
                    let sum_g = gr.sum();
                    let sum_gx = gr.dot(&xr);
                    let inv = inv_std[r];
                    for c in 0..xhat.ncols() {
                        gx[[r, c]] = inv / n * (n * gr[c] - sum_g - xr[c] * sum_gx);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::SumAll(a) => {
                let shape = self.shape(*a);
                self.accumulate(grads, *a, Array2::from_elem(shape, g[[0, 0]]));
            }
            Op::MeanRows(a) => {
                let shape = self.shape(*a);
                let ga = broadcast_to(&(g / shape.1 as f64), shape);
                self.accumulate(grads, *a, ga);
            }
            Op::MeanCols(a) => {
                let shape = self.shape(*a);
                let ga = broadcast_to(&(g / shape.0 as f64), shape);
                self.accumulate(grads, *a, ga);
            }
            Op::ArgRows(a, idx) => {
                let mut ga = Array2::zeros(self.shape(*a));
                for (r, &c) in idx.iter().enumerate() {
                    ga[[r, c]] = g[[r, 0]];
                }
                self.accumulate(grads, *a, ga);
            }
            Op::SliceRows(a, start) => {
                let mut ga = Array2::zeros(self.shape(*a));
                ga.slice_mut(s![*start..*start + g.nrows(), ..]).assign(g);
                self.accumulate(grads, *a, ga);
            }
            Op::SliceCols(a, start) => {
                let mut ga = Array2::zeros(self.shape(*a));
                ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                self.accumulate(grads, *a, ga);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let rows = self.shape(*p).0;
                    let gp = g.slice(s![offset..offset + rows, ..]).to_owned();
                    self.accumulate(grads, *p, gp);
                    offset += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let cols = self.shape(*p).1;
                    let gp = g.slice(s![.., offset..offset + cols]).to_owned();
                    self.accumulate(grads, *p, gp);
                    offset += cols;
                }
            }
            Op::Reshape(a) => {
                let shape = self.shape(*a);
                let ga = Array2::from_shape_vec(shape, g.iter().copied().collect()).unwrap();
                self.accumulate(grads, *a, ga);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    /// Central-difference check of d(build(x))/dx for every entry of x.
    fn check_grad(x0: Array2<f64>, build: impl Fn(&mut Graph, Var) -> Var) {
        let mut g = Graph::new();
        let x = g.variable(x0.clone());
        let out = build(&mut g, x);
        let grads = g.backward(out);
        let analytic = grads.get(x).cloned().unwrap_or_else(|| Array2::zeros(x0.dim()));
        let h = 1e-6;
        for idx in 0..x0.len() {
            let eval = |delta: f64| {
                let mut xp = x0.clone();
                *xp.iter_mut().nth(idx).unwrap() += delta;
                let mut g = Graph::new();
                let x = g.variable(xp);
                let out = build(&mut g, x);
                g.scalar(out)
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let a = *analytic.iter().nth(idx).unwrap();
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            assert!(err < 1e-5, "entry {idx}: analytic {a} numeric {numeric}");
        }
    }

    #[test]
    fn broadcast_add_and_unbroadcast() {
        let mut g = Graph::new();
        let a = g.variable(array![[1.0, 2.0], [3.0, 4.0]]);
        let b = g.variable(array![[10.0, 20.0]]);
        let c = g.add(a, b);
        assert_eq!(g.value(c), &array![[11.0, 22.0], [13.0, 24.0]]);
        let s = g.sum_all(c);
        let grads = g.backward(s);
        assert_eq!(grads.get(b).unwrap(), &array![[2.0, 2.0]]);
    }

    #[test]
    fn elementwise_ops_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = random(&mut rng, 3, 4);
        let col = random(&mut rng, 3, 1).mapv(|v| v.abs() + 0.5);
        check_grad(random(&mut rng, 3, 4), move |g, x| {
            let w = g.constant(w.clone());
            let c = g.constant(col.clone());
            let a = g.mul(x, w);
            let b = g.div(a, c);
            let d = g.sub(b, x);
            let e = g.gelu(d);
            let f = g.sigmoid(e);
            let h = g.softplus(f);
            let q = g.square(h);
            g.mean_all(q)
        });
    }

    #[test]
    fn matmul_softmax_layernorm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = random(&mut rng, 4, 5);
        check_grad(random(&mut rng, 3, 4), move |g, x| {
            let w = g.constant(w.clone());
            let ln = g.layer_norm(x, 1e-5);
            let y = g.matmul(ln, w);
            let t = g.transpose(y);
            let sm = g.softmax_rows(t);
            let sl = g.slice_rows(sm, 1, 4);
            let sc = g.slice_cols(sl, 0, 2);
            let sq = g.square(sc);
            g.sum_all(sq)
        });
    }

    #[test]
    fn reductions_and_structural_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        check_grad(random(&mut rng, 3, 4), |g, x| {
            let mn = g.min_rows(x);
            let mx = g.max_rows(x);
            let span = g.sub(mx, mn);
            let mr = g.mean_rows(x);
            let mc = g.mean_cols(x);
            let cen = g.sub(x, mr);
            let n = g.div(cen, span);
            let nn = g.add(n, mc);
            let r = g.reshape(nn, 2, 6);
            let cat = g.concat_rows(&[r, r]);
            let cat2 = g.concat_cols(&[cat, cat]);
            let p = g.add_scalar(cat2, 3.0);
            let l = g.ln(p);
            let c = g.clamp(l, -10.0, 10.0);
            let z = g.scale(c, 0.5);
            g.sum_all(z)
        });
    }

    #[test]
    fn minimum_maximum_route_gradient() {
        let mut g = Graph::new();
        let a = g.variable(array![[1.0, 5.0]]);
        let b = g.variable(array![[3.0, 2.0]]);
        let mn = g.minimum(a, b);
        let mx = g.maximum(a, b);
        let mx2 = g.scale(mx, 2.0);
        let both = g.add(mn, mx2);
        let s = g.sum_all(both);
        let grads = g.backward(s);
        assert_eq!(grads.get(a).unwrap(), &array![[1.0, 2.0]]);
        assert_eq!(grads.get(b).unwrap(), &array![[2.0, 1.0]]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let m = array![[1000.0, 1001.0, 999.0], [-3.0, 0.0, 3.0]];
        let s = softmax_rows(m.view());
        for row in s.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(array![[2.0]]);
        let x = g.variable(array![[3.0]]);
        let y = g.mul(c, x);
        let grads = g.backward(y);
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap()[[0, 0]], 2.0);
    }
}
