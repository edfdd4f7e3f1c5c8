//! Dense row-major matrices and a reverse-mode tape over them.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

/// Row-major 2-D array of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data does not match shape {rows}x{cols}");
        Tensor { rows, cols, data }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::from_vec(1, 1, vec![v])
    }

    pub fn column(v: Vec<f64>) -> Self {
        Tensor::from_vec(v.len(), 1, v)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on a {}x{} tensor", self.rows, self.cols);
        self.data[0]
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_vec(self.rows, self.cols, self.data.iter().map(|&x| f(x)).collect())
    }

    fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `c = alpha * op(a) @ op(b) + beta * c`, transposes given as flags.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, c: &mut [f64], beta: f64, lda: usize, ldb: usize) {
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, lda as isize) } else { (lda as isize, 1) };
    let (rsb, csb) = if tb { (1, ldb as isize) } else { (ldb as isize, 1) };
    if k == 0 {
        for x in c.iter_mut() {
            *x *= beta;
        }
        return;
    }
    // SAFETY: slices cover the strided extents implied by the dimensions.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols, b.rows, "matmul {}x{} @ {}x{}", a.rows, a.cols, b.rows, b.cols);
    let mut c = Tensor::zeros(a.rows, b.cols);
    gemm(a.rows, a.cols, b.cols, &a.data, false, &b.data, false, &mut c.data, 0.0, a.cols, b.cols);
    c
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Min(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    Gather(Var, Rc<Vec<usize>>),
    Scatter(Var, Rc<Vec<usize>>),
    SegmentSoftmax(Var, Rc<Vec<usize>>),
    SegmentLogSoftmax(Var, Rc<Vec<usize>>),
    MulCol(Var, Var),
    Reshape(Var),
    Sum(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records a computation for reverse-mode differentiation. A tape is used
/// for one forward/backward pass and then dropped.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients with respect to every recorded value.
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn segment_count(seg: &[usize]) -> usize {
    seg.iter().max().map_or(0, |m| m + 1)
}

fn segment_log_softmax(x: &Tensor, seg: &[usize]) -> Tensor {
    assert_eq!(x.cols, 1, "segment softmax expects a column");
    let n = segment_count(seg);
    let mut max = vec![f64::NEG_INFINITY; n];
    for (v, &s) in x.data.iter().zip(seg) {
        max[s] = max[s].max(*v);
    }
    let mut sum = vec![0.0; n];
    for (v, &s) in x.data.iter().zip(seg) {
        sum[s] += (v - max[s]).exp();
    }
    let data = x
        .data
        .iter()
        .zip(seg)
        .map(|(v, &s)| v - max[s] - sum[s].ln())
        .collect();
    Tensor::from_vec(x.rows, 1, data)
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        debug_assert_eq!(value.data.len(), value.rows * value.cols);
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input; gradients flow into leaves but not past them.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let c = matmul(self.value(a), self.value(b));
        self.push(c, Op::MatMul(a, b))
    }

    /// Adds the single row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (x, r) = (self.value(a), self.value(b));
        assert_eq!((r.rows, r.cols), (1, x.cols), "add_row shape mismatch");
        let mut out = x.clone();
        for row in out.data.chunks_mut(x.cols.max(1)) {
            for (o, b) in row.iter_mut().zip(&r.data) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, b))
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "elementwise shape mismatch");
        let data = x.data.iter().zip(&y.data).map(|(&p, &q)| f(p, q)).collect();
        let t = Tensor::from_vec(x.rows, x.cols, data);
        self.push(t, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise minimum; ties send the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, f64::min, Op::Min(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a).map(|x| x * c);
        self.push(t, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a).map(|x| x + c);
        self.push(t, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x.max(0.0));
        self.push(t, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let t = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(t, Op::LeakyRelu(a, slope))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::tanh);
        self.push(t, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::exp);
        self.push(t, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::ln);
        self.push(t, Op::Log(a))
    }

    /// Clamps into `[lo, hi]`; no gradient where clamped.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let t = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(t, Op::Clamp(a, lo, hi))
    }

    /// Rows `idx[i]` of `a`.
    pub fn gather_rows(&mut self, a: Var, idx: Rc<Vec<usize>>) -> Var {
        let x = self.value(a);
        let mut data = Vec::with_capacity(idx.len() * x.cols);
        for &i in idx.iter() {
            data.extend_from_slice(x.row(i));
        }
        let t = Tensor::from_vec(idx.len(), x.cols, data);
        self.push(t, Op::Gather(a, idx))
    }

    /// `out[idx[i]] += a[i]`, producing `rows` rows.
    pub fn scatter_add_rows(&mut self, a: Var, idx: Rc<Vec<usize>>, rows: usize) -> Var {
        let x = self.value(a);
        assert_eq!(x.rows, idx.len(), "scatter index length");
        let mut out = Tensor::zeros(rows, x.cols);
        for (i, &j) in idx.iter().enumerate() {
            let src = &x.data[i * x.cols..(i + 1) * x.cols];
            for (o, s) in out.data[j * x.cols..(j + 1) * x.cols].iter_mut().zip(src) {
                *o += s;
            }
        }
        self.push(out, Op::Scatter(a, idx))
    }

    /// Softmax of a column within the segments given by `seg`.
    pub fn segment_softmax(&mut self, a: Var, seg: Rc<Vec<usize>>) -> Var {
        let t = segment_log_softmax(self.value(a), &seg).map(f64::exp);
        self.push(t, Op::SegmentSoftmax(a, seg))
    }

    pub fn segment_log_softmax(&mut self, a: Var, seg: Rc<Vec<usize>>) -> Var {
        let t = segment_log_softmax(self.value(a), &seg);
        self.push(t, Op::SegmentLogSoftmax(a, seg))
    }

    /// Multiplies every row `i` of `a` by `c[i]`, `c` a column.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Var {
        let (x, k) = (self.value(a), self.value(c));
        assert_eq!((k.rows, k.cols), (x.rows, 1), "mul_col shape mismatch");
        let mut out = x.clone();
        if x.cols > 0 {
            for (row, s) in out.data.chunks_mut(x.cols).zip(&k.data) {
                for o in row {
                    *o *= s;
                }
            }
        }
        self.push(out, Op::MulCol(a, c))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let x = self.value(a);
        let t = Tensor::from_vec(rows, cols, x.data.clone());
        self.push(t, Op::Reshape(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let t = Tensor::scalar(self.value(a).data.iter().sum());
        self.push(t, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Gradients of the scalar `loss` with respect to every recorded value.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.value(loss).len(), 1, "backward expects a scalar loss");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(t) => t.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let val = |v: Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (x, y) = (val(*a), val(*b));
                    let mut ga = Tensor::zeros(x.rows, x.cols);
                    gemm(x.rows, y.cols, x.cols, &g.data, false, &y.data, true, &mut ga.data, 0.0, g.cols, y.cols);
                    let mut gb = Tensor::zeros(y.rows, y.cols);
                    gemm(x.cols, x.rows, y.cols, &x.data, true, &g.data, false, &mut gb.data, 0.0, x.cols, g.cols);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddRow(a, b) => {
                    let mut gb = Tensor::zeros(1, g.cols);
                    if g.cols > 0 {
                        for row in g.data.chunks(g.cols) {
                            for (o, x) in gb.data.iter_mut().zip(row) {
                                *o += x;
                            }
                        }
                    }
                    acc(&mut grads, *b, gb);
                    acc(&mut grads, *a, g);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.map(|x| -x));
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (x, y) = (val(*a), val(*b));
                    let ga = Tensor::from_vec(g.rows, g.cols, g.data.iter().zip(&y.data).map(|(d, q)| d * q).collect());
                    let gb = Tensor::from_vec(g.rows, g.cols, g.data.iter().zip(&x.data).map(|(d, p)| d * p).collect());
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Min(a, b) => {
                    let (x, y) = (val(*a), val(*b));
                    let pick_a: Vec<bool> = x.data.iter().zip(&y.data).map(|(p, q)| p <= q).collect();
                    let ga = Tensor::from_vec(g.rows, g.cols, g.data.iter().zip(&pick_a).map(|(d, &s)| if s { *d } else { 0.0 }).collect());
                    let gb = Tensor::from_vec(g.rows, g.cols, g.data.iter().zip(&pick_a).map(|(d, &s)| if s { 0.0 } else { *d }).collect());
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g.map(|x| x * c)),
                Op::AddScalar(a) | Op::Reshape(a) => {
                    let x = val(*a);
                    acc(&mut grads, *a, Tensor::from_vec(x.rows, x.cols, g.data));
                }
                Op::Relu(a) => {
                    let x = val(*a);
                    let d = x.data.iter().zip(&g.data).map(|(v, d)| if *v > 0.0 { *d } else { 0.0 }).collect();
                    acc(&mut grads, *a, Tensor::from_vec(g.rows, g.cols, d));
                }
                Op::LeakyRelu(a, slope) => {
                    let x = val(*a);
                    let d = x.data.iter().zip(&g.data).map(|(v, d)| if *v > 0.0 { *d } else { slope * d }).collect();
                    acc(&mut grads, *a, Tensor::from_vec(g.rows, g.cols, d));
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let d = y.data.iter().zip(&g.data).map(|(t, d)| d * (1.0 - t * t)).collect();
                    acc(&mut grads, *a, Tensor::from_vec(g.rows, g.cols, d));
                }
                Op::Exp(a) => {
                    let y = &node.value;
                    let d = y.data.iter().zip(&g.data).map(|(e, d)| d * e).collect();
                    acc(&mut grads, *a, Tensor::from_vec(g.rows, g.cols, d));
                }
                Op::Log(a) => {
                    let x = val(*a);
                    let d = x.data.iter().zip(&g.data).map(|(v, d)| d / v).collect();
                    acc(&mut grads, *a, Tensor::from_vec(g.rows, g.cols, d));
                }
                Op::Clamp(a, lo, hi) => {
                    let x = val(*a);
                    let d = x
                        .data
                        .iter()
                        .zip(&g.data)
                        .map(|(v, d)| if v < lo || v > hi { 0.0 } else { *d })
                        .collect();
                    acc(&mut grads, *a, Tensor::from_vec(g.rows, g.cols, d));
                }
                Op::Gather(a, idx) => {
                    let x = val(*a);
                    let mut ga = Tensor::zeros(x.rows, x.cols);
                    for (r, &j) in idx.iter().enumerate() {
                        for c in 0..x.cols {
                            ga.data[j * x.cols + c] += g.data[r * x.cols + c];
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Scatter(a, idx) => {
                    let x = val(*a);
                    let mut data = Vec::with_capacity(x.len());
                    for &j in idx.iter() {
                        data.extend_from_slice(g.row(j));
                    }
                    acc(&mut grads, *a, Tensor::from_vec(x.rows, x.cols, data));
                }
                Op::SegmentSoftmax(a, seg) => {
                    // dx_i = y_i (g_i - sum_seg g_j y_j)
                    let y = &node.value;
                    let mut dot = vec![0.0; segment_count(seg)];
                    for ((gy, yy), &s) in g.data.iter().zip(&y.data).zip(seg.iter()) {
                        dot[s] += gy * yy;
                    }
                    let d = y.data.iter().zip(&g.data).zip(seg.iter()).map(|((yy, gy), &s)| yy * (gy - dot[s])).collect();
                    acc(&mut grads, *a, Tensor::from_vec(y.rows, 1, d));
                }
                Op::SegmentLogSoftmax(a, seg) => {
                    // dx_i = g_i - softmax_i * sum_seg g_j
                    let y = &node.value;
                    let mut total = vec![0.0; segment_count(seg)];
                    for (gy, &s) in g.data.iter().zip(seg.iter()) {
                        total[s] += gy;
                    }
                    let d = y.data.iter().zip(&g.data).zip(seg.iter()).map(|((ly, gy), &s)| gy - ly.exp() * total[s]).collect();
                    acc(&mut grads, *a, Tensor::from_vec(y.rows, 1, d));
                }
                Op::MulCol(a, c) => {
                    let (x, k) = (val(*a), val(*c));
                    let mut ga = g.clone();
                    let mut gc = Tensor::zeros(k.rows, 1);
                    if x.cols > 0 {
                        for (r, row) in ga.data.chunks_mut(x.cols).enumerate() {
                            let mut s = 0.0;
                            for (j, o) in row.iter_mut().enumerate() {
                                s += *o * x.data[r * x.cols + j];
                                *o *= k.data[r];
                            }
                            gc.data[r] = s;
                        }
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *c, gc);
                }
                Op::Sum(a) => {
                    let x = val(*a);
                    let s = g.item();
                    acc(&mut grads, *a, Tensor::from_vec(x.rows, x.cols, vec![s; x.len()]));
                }
            }
        }
        Grads { grads }
    }
}
