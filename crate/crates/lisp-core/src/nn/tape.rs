//! Reverse-mode gradient tape over dense `f64` matrices.
//!
//! The tape records a forward expression graph built from a fixed set of
//! primitives (affine, tanh, relu, exp, log, square, softplus, elementwise
//! arithmetic, concat/slice, min, and reductions). `backward` walks the graph
//! in reverse and returns gradients for every parameter leaf.
//!
//! Shape mismatches panic; a non-finite value produced by any primitive
//! poisons the tape, and `backward`/`value` report which primitive failed.

use crate::mat::Mat;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    /// Constant input; receives no gradient.
    Constant,
    /// Parameter leaf; gradient is accumulated and returned.
    Param,
    MatMul(Var, Var),
    /// Broadcast-add a 1 x c row (bias) to every row.
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Min(Var, Var),
    ConcatCols(Var, Var),
    SliceCols(Var, usize, usize),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Softplus(Var),
    Scale(Var, f64),
    AddScalar(Var, f64),
    SumAll(Var),
    MeanAll(Var),
    SumRows(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param => "param",
            Op::MatMul(..) => "matmul",
            Op::AddRow(..) => "add_row",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Min(..) => "min",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceCols(..) => "slice_cols",
            Op::Tanh(..) => "tanh",
            Op::Relu(..) => "relu",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Square(..) => "square",
            Op::Softplus(..) => "softplus",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::SumAll(..) => "sum_all",
            Op::MeanAll(..) => "mean_all",
            Op::SumRows(..) => "sum_rows",
        }
    }
}

struct Node {
    op: Op,
    value: Mat,
}

/// Error raised when a primitive produced a non-finite value.
#[derive(Debug, Clone, thiserror::Error)]
#[error("non-finite value produced by primitive `{primitive}`")]
pub struct NonFinite {
    pub primitive: &'static str,
}

pub struct Tape {
    nodes: Vec<Node>,
    poisoned: Option<&'static str>,
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::with_capacity(64),
            poisoned: None,
        }
    }

    fn push(&mut self, op: Op, value: Mat) -> Var {
        if self.poisoned.is_none() && !value.all_finite() {
            self.poisoned = Some(op.name());
        }
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> Result<f64, NonFinite> {
        if let Some(p) = self.poisoned {
            return Err(NonFinite { primitive: p });
        }
        let m = &self.nodes[v.0].value;
        assert_eq!((m.rows(), m.cols()), (1, 1), "scalar() on non-scalar node");
        Ok(m.get(0, 0))
    }

    pub fn constant(&mut self, m: Mat) -> Var {
        self.push(Op::Constant, m)
    }

    pub fn param(&mut self, m: Mat) -> Var {
        self.push(Op::Param, m)
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        let m = &self.nodes[v.0].value;
        (m.rows(), m.cols())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a.0].value.matmul(&self.nodes[b.0].value);
        self.push(Op::MatMul(a, b), v)
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (r, c) = self.shape(a);
        let (br, bc) = self.shape(bias);
        assert_eq!((br, bc), (1, c), "add_row bias must be 1x{c}");
        let am = &self.nodes[a.0].value;
        let bm = &self.nodes[bias.0].value;
        let mut out = am.clone();
        for i in 0..r {
            let row = out.row_mut(i);
            for (x, &b) in row.iter_mut().zip(bm.as_slice()) {
                *x += b;
            }
        }
        self.push(Op::AddRow(a, bias), out)
    }

    fn binary_elementwise(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "{} shape mismatch", op.name());
        let am = &self.nodes[a.0].value;
        let bm = &self.nodes[b.0].value;
        let data: Vec<f64> = am
            .as_slice()
            .iter()
            .zip(bm.as_slice())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let v = Mat::from_vec(am.rows(), am.cols(), data);
        self.push(op, v)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary_elementwise(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary_elementwise(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary_elementwise(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise minimum; ties route the gradient to the first argument.
    pub fn min(&mut self, a: Var, b: Var) -> Var {
        self.binary_elementwise(a, b, f64::min, Op::Min(a, b))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        assert_eq!(ar, br, "concat_cols row mismatch");
        let am = &self.nodes[a.0].value;
        let bm = &self.nodes[b.0].value;
        let mut out = Mat::zeros(ar, ac + bc);
        for i in 0..ar {
            out.row_mut(i)[..ac].copy_from_slice(am.row(i));
            out.row_mut(i)[ac..].copy_from_slice(bm.row(i));
        }
        self.push(Op::ConcatCols(a, b), out)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let (r, c) = self.shape(a);
        assert!(start < end && end <= c, "slice_cols out of range");
        let am = &self.nodes[a.0].value;
        let mut out = Mat::zeros(r, end - start);
        for i in 0..r {
            out.row_mut(i).copy_from_slice(&am.row(i)[start..end]);
        }
        self.push(Op::SliceCols(a, start, end), out)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.nodes[a.0].value.map(f);
        self.push(op, v)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// Numerically stable `log(1 + exp(x))`.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0) + (-x.abs()).exp().ln_1p(), Op::Softplus(a))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x + s, Op::AddScalar(a, s))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Mat::from_vec(1, 1, vec![self.nodes[a.0].value.sum()]);
        self.push(Op::SumAll(a), v)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let m = &self.nodes[a.0].value;
        let n = m.len() as f64;
        let v = Mat::from_vec(1, 1, vec![m.sum() / n]);
        self.push(Op::MeanAll(a), v)
    }

    /// Row-wise sum: r x c -> r x 1.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let m = &self.nodes[a.0].value;
        let mut out = Mat::zeros(m.rows(), 1);
        for i in 0..m.rows() {
            let mut acc = 0.0;
            for &x in m.row(i) {
                acc += x;
            }
            out.set(i, 0, acc);
        }
        self.push(Op::SumRows(a), out)
    }

    /// A constant leaf's gradient is never read, and nothing upstream of it
    /// needs one, so gradient work into constants is skipped entirely.
    #[inline]
    fn wants_grad(&self, v: Var) -> bool {
        !matches!(self.nodes[v.0].op, Op::Constant)
    }

    /// Reverse pass from a scalar loss node. Returns one gradient slot per
    /// tape node; parameter leaves hold their accumulated gradient.
    pub fn backward(&self, loss: Var) -> Result<Vec<Option<Mat>>, NonFinite> {
        if let Some(p) = self.poisoned {
            return Err(NonFinite { primitive: p });
        }
        let lm = &self.nodes[loss.0].value;
        assert_eq!((lm.rows(), lm.cols()), (1, 1), "backward needs scalar loss");

        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::from_vec(1, 1, vec![1.0]));

        for idx in (0..self.nodes.len()).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[idx];
            match node.op {
                Op::Constant | Op::Param => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.wants_grad(a) {
                        let ga = g.matmul_nt(&self.nodes[b.0].value);
                        self.accum(&mut grads, a, ga);
                    }
                    if self.wants_grad(b) {
                        let gb = self.nodes[a.0].value.matmul_tn(&g);
                        self.accum(&mut grads, b, gb);
                    }
                }
                Op::AddRow(a, bias) => {
                    if self.wants_grad(bias) {
                        let mut gb = Mat::zeros(1, g.cols());
                        for i in 0..g.rows() {
                            for (acc, &x) in gb.row_mut(0).iter_mut().zip(g.row(i)) {
                                *acc += x;
                            }
                        }
                        self.accum(&mut grads, bias, gb);
                    }
                    if self.wants_grad(a) {
                        self.accum(&mut grads, a, g);
                    }
                }
                Op::Add(a, b) => {
                    if self.wants_grad(b) {
                        self.accum(&mut grads, b, g.clone());
                    }
                    if self.wants_grad(a) {
                        self.accum(&mut grads, a, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.wants_grad(b) {
                        let mut gn = g.clone();
                        gn.scale_assign(-1.0);
                        self.accum(&mut grads, b, gn);
                    }
                    if self.wants_grad(a) {
                        self.accum(&mut grads, a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.wants_grad(a) {
                        let ga = self.ew(&g, &self.nodes[b.0].value, |gx, y| gx * y);
                        self.accum(&mut grads, a, ga);
                    }
                    if self.wants_grad(b) {
                        let gb = self.ew(&g, &self.nodes[a.0].value, |gx, x| gx * x);
                        self.accum(&mut grads, b, gb);
                    }
                }
                Op::Min(a, b) => {
                    let am = &self.nodes[a.0].value;
                    let bm = &self.nodes[b.0].value;
                    let mut ga = g.clone();
                    let mut gb = g;
                    for k in 0..ga.len() {
                        if am.as_slice()[k] <= bm.as_slice()[k] {
                            gb.as_mut_slice()[k] = 0.0;
                        } else {
                            ga.as_mut_slice()[k] = 0.0;
                        }
                    }
                    if self.wants_grad(a) {
                        self.accum(&mut grads, a, ga);
                    }
                    if self.wants_grad(b) {
                        self.accum(&mut grads, b, gb);
                    }
                }
                Op::ConcatCols(a, b) => {
                    let (r, ac) = self.shape(a);
                    let (_, bc) = self.shape(b);
                    if self.wants_grad(a) {
                        let mut ga = Mat::zeros(r, ac);
                        for i in 0..r {
                            ga.row_mut(i).copy_from_slice(&g.row(i)[..ac]);
                        }
                        self.accum(&mut grads, a, ga);
                    }
                    if self.wants_grad(b) {
                        let mut gb = Mat::zeros(r, bc);
                        for i in 0..r {
                            gb.row_mut(i).copy_from_slice(&g.row(i)[ac..]);
                        }
                        self.accum(&mut grads, b, gb);
                    }
                }
                Op::SliceCols(a, start, _end) => {
                    if self.wants_grad(a) {
                        let (r, c) = self.shape(a);
                        let mut ga = Mat::zeros(r, c);
                        for i in 0..r {
                            let grow = g.row(i);
                            ga.row_mut(i)[start..start + grow.len()].copy_from_slice(grow);
                        }
                        self.accum(&mut grads, a, ga);
                    }
                }
                Op::Tanh(a) => {
                    if self.wants_grad(a) {
                        let ga = self.ew(&g, &node.value, |gx, y| gx * (1.0 - y * y));
                        self.accum(&mut grads, a, ga);
                    }
                }
                Op::Relu(a) => {
                    if self.wants_grad(a) {
                        let ga = self.ew(&g, &self.nodes[a.0].value, |gx, x| {
                            if x > 0.0 {
                                gx
                            } else {
                                0.0
                            }
                        });
                        self.accum(&mut grads, a, ga);
                    }
                }
                Op::Exp(a) => {
                    if self.wants_grad(a) {
                        let ga = self.ew(&g, &node.value, |gx, y| gx * y);
                        self.accum(&mut grads, a, ga);
                    }
                }
                Op::Log(a) => {
                    if self.wants_grad(a) {
                        let ga = self.ew(&g, &self.nodes[a.0].value, |gx, x| gx / x);
                        self.accum(&mut grads, a, ga);
                    }
                }
                Op::Square(a) => {
                    if self.wants_grad(a) {
                        let ga = self.ew(&g, &self.nodes[a.0].value, |gx, x| gx * 2.0 * x);
                        self.accum(&mut grads, a, ga);
                    }
                }
                Op::Softplus(a) => {
                    if self.wants_grad(a) {
                        let ga = self.ew(&g, &self.nodes[a.0].value, |gx, x| {
                            gx / (1.0 + (-x).exp())
                        });
                        self.accum(&mut grads, a, ga);
                    }
                }
                Op::Scale(a, s) => {
                    let mut ga = g;
                    ga.scale_assign(s);
                    self.accum(&mut grads, a, ga);
                }
                Op::AddScalar(a, _) => {
                    self.accum(&mut grads, a, g);
                }
                Op::SumAll(a) => {
                    let (r, c) = self.shape(a);
                    let gv = g.get(0, 0);
                    self.accum(&mut grads, a, Mat::from_fn(r, c, |_, _| gv));
                }
                Op::MeanAll(a) => {
                    let (r, c) = self.shape(a);
                    let gv = g.get(0, 0) / (r * c) as f64;
                    self.accum(&mut grads, a, Mat::from_fn(r, c, |_, _| gv));
                }
                Op::SumRows(a) => {
                    let (r, c) = self.shape(a);
                    let mut ga = Mat::zeros(r, c);
                    for i in 0..r {
                        let gv = g.get(i, 0);
                        for x in ga.row_mut(i) {
                            *x = gv;
                        }
                    }
                    self.accum(&mut grads, a, ga);
                }
            }
        }
        Ok(grads)
    }

    fn ew(&self, g: &Mat, other: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
        let data: Vec<f64> = g
            .as_slice()
            .iter()
            .zip(other.as_slice())
            .map(|(&gx, &x)| f(gx, x))
            .collect();
        Mat::from_vec(g.rows(), g.cols(), data)
    }

    fn accum(&self, grads: &mut [Option<Mat>], v: Var, g: Mat) {
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Gradient for a node, consuming the slot. Panics if the node received
    /// no gradient (i.e. it does not influence the loss).
    pub fn grad_of(&self, grads: &mut [Option<Mat>], v: Var) -> Mat {
        grads[v.0]
            .take()
            .unwrap_or_else(|| Mat::zeros(self.shape(v).0, self.shape(v).1))
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_loss_has_zero_param_grad() {
        let mut t = Tape::new();
        let w = t.param(Mat::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let c = t.constant(Mat::from_vec(1, 1, vec![5.0]));
        let loss = t.sum_all(c);
        let mut grads = t.backward(loss).unwrap();
        let gw = t.grad_of(&mut grads, w);
        assert!(gw.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn linear_sum_gradient_is_input() {
        // loss = sum(x * w), x = 1x3, w = 3x2 -> dW = x broadcast to columns
        let mut t = Tape::new();
        let x = t.constant(Mat::from_vec(1, 3, vec![0.5, -1.0, 2.0]));
        let w = t.param(Mat::zeros(3, 2));
        let y = t.matmul(x, w);
        let loss = t.sum_all(y);
        let mut grads = t.backward(loss).unwrap();
        let gw = t.grad_of(&mut grads, w);
        assert_eq!(gw.as_slice(), &[0.5, 0.5, -1.0, -1.0, 2.0, 2.0]);
    }

    #[test]
    fn poisoned_tape_names_primitive() {
        let mut t = Tape::new();
        let x = t.constant(Mat::from_vec(1, 1, vec![-1.0]));
        let y = t.log(x); // NaN
        let loss = t.sum_all(y);
        let err = t.backward(loss).unwrap_err();
        assert_eq!(err.primitive, "log");
    }

    #[test]
    fn min_routes_gradient_to_smaller() {
        let mut t = Tape::new();
        let a = t.param(Mat::from_vec(1, 2, vec![1.0, 5.0]));
        let b = t.param(Mat::from_vec(1, 2, vec![3.0, 2.0]));
        let m = t.min(a, b);
        let loss = t.sum_all(m);
        let mut grads = t.backward(loss).unwrap();
        let ga = t.grad_of(&mut grads, a);
        let gb = t.grad_of(&mut grads, b);
        assert_eq!(ga.as_slice(), &[1.0, 0.0]);
        assert_eq!(gb.as_slice(), &[0.0, 1.0]);
    }
}
