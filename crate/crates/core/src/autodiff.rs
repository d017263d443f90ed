//! Minimal tape-based reverse-mode differentiation over 2-D `f64` matrices.
//!
//! A [`Graph`] records every operation as it is evaluated; [`Graph::backward`]
//! walks the tape in reverse and accumulates adjoints. Only the handful of
//! operations needed by the velocity network, the flow losses and forward
//! kinematics are provided. Rotation helpers treat each row of a `m × 9`
//! matrix as a row-major 3×3 matrix, so a whole batch of frames moves through
//! the kinematic chain in one node per joint.
//!
//! Shape mismatches are programming errors and panic.

use ndarray::{s, Array2, Axis};

pub type Mat = Array2<f64>;

/// Handle to a node on a [`Graph`].
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
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Shift(Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    Silu(Var),
    Gelu(Var),
    Sin(Var),
    Cos(Var),
    Square(Var),
    Recip(Var),
    LayerNorm(Var, Vec<f64>),
    Softmax(Var),
    L2NormRows(Var, Vec<f64>),
    Rope(Var, Vec<f64>, Vec<f64>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    RepeatRows(Var, usize),
    Gather(Var, Vec<usize>),
    PermuteCols(Var, Vec<usize>),
    Mat3Mul(Var, Var),
    Mat3Vec(Var, Var),
    Cross3(Var, Var),
    RowDot(Var, Var),
    FrameDiff(Var, usize),
    Sum(Var),
    Mean(Var),
    MaskMul(Var, Mat),
}

struct Node {
    value: Mat,
    op: Op,
    requires_grad: bool,
}

/// The tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros of `shape` when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Mat {
        self.grads[v.0].clone().unwrap_or_else(|| Mat::zeros(shape))
    }

    pub fn take(&mut self, v: Var) -> Option<Mat> {
        self.grads[v.0].take()
    }
}

fn mat3(row: &[f64]) -> [[f64; 3]; 3] {
    [
        [row[0], row[1], row[2]],
        [row[3], row[4], row[5]],
        [row[6], row[7], row[8]],
    ]
}

fn gelu_parts(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    let u = C * (x + 0.044715 * x * x * x);
    let th = u.tanh();
    let y = 0.5 * x * (1.0 + th);
    let dy = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * C * (1.0 + 3.0 * 0.044715 * x * x);
    (y, dy)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn unary(&mut self, a: Var, value: Mat, op: Op) -> Var {
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    fn binary(&mut self, a: Var, b: Var, value: Mat, op: Op) -> Var {
        let rg = self.rg(a) || self.rg(b);
        self.push(value, op, rg)
    }

    /// Differentiable leaf (a parameter or an input we want gradients for).
    pub fn param(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.dim(), (1, 1), "scalar() on a non-scalar node");
        m[[0, 0]]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.binary(a, b, v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.binary(a, b, v, Op::MatMulBt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let v = self.value(a) + self.value(b);
        self.binary(a, b, v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub shape mismatch");
        let v = self.value(a) - self.value(b);
        self.binary(a, b, v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shape mismatch");
        let v = self.value(a) * self.value(b);
        self.binary(a, b, v, Op::Mul(a, b))
    }

    /// `a[m, n] + row[1, n]`, broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(
            self.shape(row),
            (1, self.shape(a).1),
            "add_row shape mismatch"
        );
        let v = self.value(a) + self.value(row);
        self.binary(a, row, v, Op::AddRow(a, row))
    }

    /// `a[m, n] ⊙ row[1, n]`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(
            self.shape(row),
            (1, self.shape(a).1),
            "mul_row shape mismatch"
        );
        let v = self.value(a) * self.value(row);
        self.binary(a, row, v, Op::MulRow(a, row))
    }

    /// `a[m, n] ⊙ col[m, 1]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        assert_eq!(
            self.shape(col),
            (self.shape(a).0, 1),
            "mul_col shape mismatch"
        );
        let v = self.value(a) * self.value(col);
        self.binary(a, col, v, Op::MulCol(a, col))
    }

    /// `a + k` elementwise.
    pub fn shift(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) + k;
        self.unary(a, v, Op::Shift(a))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.unary(a, v, Op::Scale(a, k))
    }

    /// `a * s` with `s` a `1 × 1` node.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        let k = self.scalar(s);
        let v = self.value(a) * k;
        self.binary(a, s, v, Op::ScaleBy(a, s))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * sigmoid(x));
        self.unary(a, v, Op::Silu(a))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| gelu_parts(x).0);
        self.unary(a, v, Op::Gelu(a))
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::sin);
        self.unary(a, v, Op::Sin(a))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::cos);
        self.unary(a, v, Op::Cos(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * x);
        self.unary(a, v, Op::Square(a))
    }

    /// Elementwise `1 / x`.
    pub fn recip(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::recip);
        self.unary(a, v, Op::Recip(a))
    }

    /// Row-wise layer normalization without affine parameters.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let n = x.ncols() as f64;
        let mut out = x.clone();
        let mut inv = Vec::with_capacity(x.nrows());
        for mut row in out.rows_mut() {
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let is = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|v| (v - mean) * is);
            inv.push(is);
        }
        self.unary(a, out, Op::LayerNorm(a, inv))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for mut row in out.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            row.mapv_inplace(|v| (v - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|v| v / sum);
        }
        self.unary(a, out, Op::Softmax(a))
    }

    /// Row-wise `x / sqrt(|x|² + eps²)`.
    pub fn l2_normalize_rows(&mut self, a: Var, eps: f64) -> Var {
        let mut out = self.value(a).clone();
        let mut norms = Vec::with_capacity(out.nrows());
        for mut row in out.rows_mut() {
            let n = (row.iter().map(|v| v * v).sum::<f64>() + eps * eps).sqrt();
            row.mapv_inplace(|v| v / n);
            norms.push(n);
        }
        self.unary(a, out, Op::L2NormRows(a, norms))
    }

    /// Rotary position embedding on column pairs `(2i, 2i + 1)`. Row `r` is
    /// position `offset + r`; pair `i` turns by `pos * base^(-2i / cols)`.
    pub fn rope(&mut self, a: Var, offset: f64, base: f64) -> Var {
        let x = self.value(a);
        let (rows, cols) = x.dim();
        assert!(cols % 2 == 0, "rope needs an even width");
        let half = cols / 2;
        let mut cos = Vec::with_capacity(rows * half);
        let mut sin = Vec::with_capacity(rows * half);
        for r in 0..rows {
            let pos = offset + r as f64;
            for i in 0..half {
                let freq = base.powf(-((2 * i) as f64) / cols as f64);
                let (s, c) = (pos * freq).sin_cos();
                cos.push(c);
                sin.push(s);
            }
        }
        let mut out = x.clone();
        for r in 0..rows {
            for i in 0..half {
                let (c, s) = (cos[r * half + i], sin[r * half + i]);
                let x0 = x[[r, 2 * i]];
                let x1 = x[[r, 2 * i + 1]];
                out[[r, 2 * i]] = x0 * c - x1 * s;
                out[[r, 2 * i + 1]] = x0 * s + x1 * c;
            }
        }
        self.unary(a, out, Op::Rope(a, cos, sin))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.unary(a, v, Op::SliceCols(a, start))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.unary(a, v, Op::SliceRows(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols shape mismatch");
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(v, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("concat_rows shape mismatch");
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(v, Op::ConcatRows(parts.to_vec()), rg)
    }

    /// Repeats every row `times` times consecutively: `[B, n] -> [B·times, n]`.
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Var {
        let x = self.value(a);
        let mut out = Mat::zeros((x.nrows() * times, x.ncols()));
        for (b, row) in x.rows().into_iter().enumerate() {
            for t in 0..times {
                out.row_mut(b * times + t).assign(&row);
            }
        }
        self.unary(a, out, Op::RepeatRows(a, times))
    }

    /// Row lookup `table[ids[i]]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut out = Mat::zeros((ids.len(), t.ncols()));
        for (i, &id) in ids.iter().enumerate() {
            out.row_mut(i).assign(&t.row(id));
        }
        self.unary(table, out, Op::Gather(table, ids.to_vec()))
    }

    /// `out[:, k] = a[:, idx[k]]`.
    pub fn permute_cols(&mut self, a: Var, idx: &[usize]) -> Var {
        let x = self.value(a);
        let mut out = Mat::zeros((x.nrows(), idx.len()));
        for (k, &i) in idx.iter().enumerate() {
            out.column_mut(k).assign(&x.column(i));
        }
        self.unary(a, out, Op::PermuteCols(a, idx.to_vec()))
    }

    /// Row-wise product of 3×3 matrices stored as `m × 9` rows.
    pub fn mat3_mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.ncols(), 9);
        assert_eq!(x.dim(), y.dim(), "mat3_mul shape mismatch");
        let mut out = Mat::zeros(x.dim());
        for r in 0..x.nrows() {
            let p = mat3(x.row(r).as_slice().expect("contiguous"));
            let q = mat3(y.row(r).as_slice().expect("contiguous"));
            for i in 0..3 {
                for j in 0..3 {
                    out[[r, 3 * i + j]] = (0..3).map(|k| p[i][k] * q[k][j]).sum();
                }
            }
        }
        self.binary(a, b, out, Op::Mat3Mul(a, b))
    }

    /// Row-wise `A v` with `A` as `m × 9` and `v` as `m × 3` or `1 × 3`.
    pub fn mat3_vec(&mut self, a: Var, v: Var) -> Var {
        let (x, y) = (self.value(a), self.value(v));
        assert_eq!(x.ncols(), 9);
        assert_eq!(y.ncols(), 3);
        assert!(y.nrows() == 1 || y.nrows() == x.nrows(), "mat3_vec rows");
        let mut out = Mat::zeros((x.nrows(), 3));
        for r in 0..x.nrows() {
            let vr = if y.nrows() == 1 { 0 } else { r };
            for i in 0..3 {
                out[[r, i]] = (0..3).map(|k| x[[r, 3 * i + k]] * y[[vr, k]]).sum();
            }
        }
        self.binary(a, v, out, Op::Mat3Vec(a, v))
    }

    /// Row-wise cross product of `m × 3` matrices.
    pub fn cross3(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.dim(), y.dim());
        assert_eq!(x.ncols(), 3);
        let mut out = Mat::zeros(x.dim());
        for r in 0..x.nrows() {
            out[[r, 0]] = x[[r, 1]] * y[[r, 2]] - x[[r, 2]] * y[[r, 1]];
            out[[r, 1]] = x[[r, 2]] * y[[r, 0]] - x[[r, 0]] * y[[r, 2]];
            out[[r, 2]] = x[[r, 0]] * y[[r, 1]] - x[[r, 1]] * y[[r, 0]];
        }
        self.binary(a, b, out, Op::Cross3(a, b))
    }

    /// Row-wise dot product, `m × 1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b));
        let prod = self.value(a) * self.value(b);
        let v = prod.sum_axis(Axis(1)).insert_axis(Axis(1));
        self.binary(a, b, v, Op::RowDot(a, b))
    }

    /// Forward differences within consecutive blocks of `seq_len` rows:
    /// `[B·T, n] -> [B·(T-1), n]`.
    pub fn frame_diff(&mut self, a: Var, seq_len: usize) -> Var {
        let x = self.value(a);
        assert!(
            seq_len >= 2 && x.nrows() % seq_len == 0,
            "frame_diff block size"
        );
        let blocks = x.nrows() / seq_len;
        let mut out = Mat::zeros((blocks * (seq_len - 1), x.ncols()));
        for b in 0..blocks {
            for k in 0..seq_len - 1 {
                let d = &x.row(b * seq_len + k + 1) - &x.row(b * seq_len + k);
                out.row_mut(b * (seq_len - 1) + k).assign(&d);
            }
        }
        self.unary(a, out, Op::FrameDiff(a, seq_len))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Mat::from_elem((1, 1), self.value(a).sum());
        self.unary(a, v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = Mat::from_elem((1, 1), x.sum() / x.len() as f64);
        self.unary(a, v, Op::Mean(a))
    }

    /// Elementwise product with a constant mask (dropout, contact masks).
    pub fn mask_mul(&mut self, a: Var, mask: Mat) -> Var {
        assert_eq!(self.shape(a), mask.dim(), "mask shape mismatch");
        let v = self.value(a) * &mask;
        self.unary(a, v, Op::MaskMul(a, mask))
    }

    /// Mean squared difference, `1 × 1`.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let sq = self.square(d);
        self.mean(sq)
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Mat::from_elem((1, 1), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Mat>], v: Var, g: Mat) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        let out = &self.nodes[idx].value;
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.dot(&self.value(*b).t()));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, self.value(*a).t().dot(g));
                }
            }
            Op::MatMulBt(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.dot(self.value(*b)));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, g.t().dot(self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.rg(*b) {
                    self.accumulate(grads, *b, -g);
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g * self.value(*b));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, g * self.value(*a));
                }
            }
            Op::AddRow(a, r) => {
                self.accumulate(grads, *a, g.clone());
                if self.rg(*r) {
                    self.accumulate(grads, *r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::MulRow(a, r) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g * self.value(*r));
                }
                if self.rg(*r) {
                    let p = g * self.value(*a);
                    self.accumulate(grads, *r, p.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::MulCol(a, c) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g * self.value(*c));
                }
                if self.rg(*c) {
                    let p = g * self.value(*a);
                    self.accumulate(grads, *c, p.sum_axis(Axis(1)).insert_axis(Axis(1)));
                }
            }
            Op::Shift(a) => self.accumulate(grads, *a, g.clone()),
            Op::Scale(a, k) => self.accumulate(grads, *a, g * *k),
            Op::ScaleBy(a, s) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g * self.scalar(*s));
                }
                if self.rg(*s) {
                    let d = (g * self.value(*a)).sum();
                    self.accumulate(grads, *s, Mat::from_elem((1, 1), d));
                }
            }
            Op::Silu(a) => {
                let mut d = self.value(*a).mapv(|x| {
                    let s = sigmoid(x);
                    s * (1.0 + x * (1.0 - s))
                });
                d *= g;
                self.accumulate(grads, *a, d);
            }
            Op::Gelu(a) => {
                let mut d = self.value(*a).mapv(|x| gelu_parts(x).1);
                d *= g;
                self.accumulate(grads, *a, d);
            }
            Op::Sin(a) => self.accumulate(grads, *a, self.value(*a).mapv(f64::cos) * g),
            Op::Cos(a) => self.accumulate(grads, *a, self.value(*a).mapv(|x| -x.sin()) * g),
            Op::Square(a) => self.accumulate(grads, *a, self.value(*a) * g * 2.0),
            Op::Recip(a) => self.accumulate(grads, *a, -(out * out) * g),
            Op::LayerNorm(a, inv) => {
                let n = out.ncols() as f64;
                let mut dx = g.clone();
                for (r, mut row) in dx.rows_mut().into_iter().enumerate() {
                    let xhat = out.row(r);
                    let mean_g = g.row(r).sum() / n;
                    let mean_gx = g.row(r).dot(&xhat) / n;
                    for c in 0..row.len() {
                        row[c] = inv[r] * (g[[r, c]] - mean_g - xhat[c] * mean_gx);
                    }
                }
                self.accumulate(grads, *a, dx);
            }
            Op::Softmax(a) => {
                let mut dx = g * out;
                for (r, mut row) in dx.rows_mut().into_iter().enumerate() {
                    let s = row.sum();
                    for c in 0..row.len() {
                        row[c] -= out[[r, c]] * s;
                    }
                }
                self.accumulate(grads, *a, dx);
            }
            Op::L2NormRows(a, norms) => {
                let mut dx = g.clone();
                for (r, mut row) in dx.rows_mut().into_iter().enumerate() {
                    let y = out.row(r);
                    let yg = y.dot(&g.row(r));
                    for c in 0..row.len() {
                        row[c] = (g[[r, c]] - y[c] * yg) / norms[r];
                    }
                }
                self.accumulate(grads, *a, dx);
            }
            Op::Rope(a, cos, sin) => {
                let (rows, cols) = g.dim();
                let half = cols / 2;
                let mut dx = Mat::zeros((rows, cols));
                for r in 0..rows {
                    for i in 0..half {
                        let (c, s) = (cos[r * half + i], sin[r * half + i]);
                        let g0 = g[[r, 2 * i]];
                        let g1 = g[[r, 2 * i + 1]];
                        dx[[r, 2 * i]] = g0 * c + g1 * s;
                        dx[[r, 2 * i + 1]] = -g0 * s + g1 * c;
                    }
                }
                self.accumulate(grads, *a, dx);
            }
            Op::SliceCols(a, start) => {
                let mut dx = Mat::zeros(self.shape(*a));
                dx.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                self.accumulate(grads, *a, dx);
            }
            Op::SliceRows(a, start) => {
                let mut dx = Mat::zeros(self.shape(*a));
                dx.slice_mut(s![*start..*start + g.nrows(), ..]).assign(g);
                self.accumulate(grads, *a, dx);
            }
            Op::ConcatCols(parts) => {
                let mut c = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    if self.rg(p) {
                        self.accumulate(grads, p, g.slice(s![.., c..c + w]).to_owned());
                    }
                    c += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut r = 0;
                for &p in parts {
                    let h = self.shape(p).0;
                    if self.rg(p) {
                        self.accumulate(grads, p, g.slice(s![r..r + h, ..]).to_owned());
                    }
                    r += h;
                }
            }
            Op::RepeatRows(a, times) => {
                let (rows, cols) = self.shape(*a);
                let mut dx = Mat::zeros((rows, cols));
                for b in 0..rows {
                    let block = g.slice(s![b * times..(b + 1) * times, ..]);
                    dx.row_mut(b).assign(&block.sum_axis(Axis(0)));
                }
                self.accumulate(grads, *a, dx);
            }
            Op::Gather(table, ids) => {
                let mut dx = Mat::zeros(self.shape(*table));
                for (i, &id) in ids.iter().enumerate() {
                    let mut row = dx.row_mut(id);
                    row += &g.row(i);
                }
                self.accumulate(grads, *table, dx);
            }
            Op::PermuteCols(a, idx) => {
                let mut dx = Mat::zeros(self.shape(*a));
                for (k, &i) in idx.iter().enumerate() {
                    let mut col = dx.column_mut(i);
                    col += &g.column(k);
                }
                self.accumulate(grads, *a, dx);
            }
            Op::Mat3Mul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let mut da = Mat::zeros(x.dim());
                let mut db = Mat::zeros(y.dim());
                for r in 0..x.nrows() {
                    let p = mat3(x.row(r).as_slice().expect("contiguous"));
                    let q = mat3(y.row(r).as_slice().expect("contiguous"));
                    let gr = mat3(g.row(r).as_slice().expect("contiguous"));
                    for i in 0..3 {
                        for j in 0..3 {
                            // dA = G Bᵀ, dB = Aᵀ G
                            da[[r, 3 * i + j]] = (0..3).map(|k| gr[i][k] * q[j][k]).sum();
                            db[[r, 3 * i + j]] = (0..3).map(|k| p[k][i] * gr[k][j]).sum();
                        }
                    }
                }
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::Mat3Vec(a, v) => {
                let (x, y) = (self.value(*a), self.value(*v));
                let mut da = Mat::zeros(x.dim());
                let mut dv = Mat::zeros(y.dim());
                for r in 0..x.nrows() {
                    let vr = if y.nrows() == 1 { 0 } else { r };
                    for i in 0..3 {
                        for k in 0..3 {
                            da[[r, 3 * i + k]] = g[[r, i]] * y[[vr, k]];
                            dv[[vr, k]] += x[[r, 3 * i + k]] * g[[r, i]];
                        }
                    }
                }
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *v, dv);
            }
            Op::Cross3(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let cross = |p: [f64; 3], q: [f64; 3]| {
                    [
                        p[1] * q[2] - p[2] * q[1],
                        p[2] * q[0] - p[0] * q[2],
                        p[0] * q[1] - p[1] * q[0],
                    ]
                };
                let mut da = Mat::zeros(x.dim());
                let mut db = Mat::zeros(y.dim());
                for r in 0..x.nrows() {
                    let gr = [g[[r, 0]], g[[r, 1]], g[[r, 2]]];
                    let xr = [x[[r, 0]], x[[r, 1]], x[[r, 2]]];
                    let yr = [y[[r, 0]], y[[r, 1]], y[[r, 2]]];
                    let ga = cross(yr, gr);
                    let gb = cross(gr, xr);
                    for k in 0..3 {
                        da[[r, k]] = ga[k];
                        db[[r, k]] = gb[k];
                    }
                }
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::RowDot(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, self.value(*b) * g);
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, self.value(*a) * g);
                }
            }
            Op::FrameDiff(a, seq_len) => {
                let (rows, cols) = self.shape(*a);
                let blocks = rows / seq_len;
                let mut dx = Mat::zeros((rows, cols));
                for b in 0..blocks {
                    for k in 0..seq_len - 1 {
                        let gr = g.row(b * (seq_len - 1) + k);
                        {
                            let mut hi = dx.row_mut(b * seq_len + k + 1);
                            hi += &gr;
                        }
                        let mut lo = dx.row_mut(b * seq_len + k);
                        lo -= &gr;
                    }
                }
                self.accumulate(grads, *a, dx);
            }
            Op::Sum(a) => {
                let d = Mat::from_elem(self.shape(*a), g[[0, 0]]);
                self.accumulate(grads, *a, d);
            }
            Op::Mean(a) => {
                let shape = self.shape(*a);
                let d = Mat::from_elem(shape, g[[0, 0]] / (shape.0 * shape.1) as f64);
                self.accumulate(grads, *a, d);
            }
            Op::MaskMul(a, mask) => self.accumulate(grads, *a, g * mask),
        }
    }
}
