//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every primitive in evaluation order. Each node keeps its
//! forward value and the indices of its parents, so the node list is a
//! topological order by construction and [`Tape::grad`] is a single reverse
//! sweep. Methods take `&self` so calls can be nested freely.

use std::cell::RefCell;

use super::tensor::{gemm, sigmoid, softplus, Tensor};
use crate::error::{Error, Result};
use crate::special::{digamma, ln_gamma, trigamma};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Const,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    AddRow { a: Var, b: Var },
    AddCol { a: Var, b: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MulConst(Var, Tensor),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Exp(Var),
    Ln(Var),
    Softplus(Var),
    Sigmoid(Var),
    Abs(Var),
    Square(Var),
    LnGamma(Var),
    Digamma(Var),
    Sum(Var),
    SumRows(Var),
    SumCols(Var),
    LogMeanExpRows(Var),
    SliceCols { a: Var, start: usize },
    SliceRows { a: Var, start: usize },
    ConcatCols(Var, Var),
    Diag(Var),
    PairwiseSqDist(Var, Var),
    TrilInverse(Var),
    Transpose(Var),
    PackTril { a: Var, n: usize },
    ExpDiag(Var),
    Reshape(Var),
    Clamp { a: Var, lo: f64, hi: f64 },
    DiagMatrix(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Adjoints from one backward sweep, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// `∂output/∂var`; zeros when `var` does not influence the output.
    pub fn wrt(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }
}

/// Forward kernels shared by taped and untaped evaluation so both paths are bit-identical.
pub(crate) mod kernel {
    use super::*;

    pub fn add_row(a: &Tensor, b: &Tensor) -> Tensor {
        let c = a.cols();
        let mut out = a.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += b.data()[i % c];
        }
        out
    }

    pub fn relu(a: &Tensor) -> Tensor {
        a.map(|x| if x > 0.0 { x } else { 0.0 })
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var(nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes.borrow()[v.0].value.data()[0]
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    fn with<R>(&self, v: Var, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.nodes.borrow()[v.0].value)
    }

    fn with2<R>(&self, a: Var, b: Var, f: impl FnOnce(&Tensor, &Tensor) -> R) -> R {
        let nodes = self.nodes.borrow();
        f(&nodes[a.0].value, &nodes[b.0].value)
    }

    /// Records an input (parameter, data or noise). Gradients are reported for every leaf.
    pub fn var(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, Op::Const)
    }

    pub fn scalar(&self, v: f64) -> Var {
        self.var(Tensor::scalar(v))
    }

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.with(a, |t| t.map(f));
        self.push(v, op)
    }

    fn binary(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let v = self.with2(a, b, |x, y| {
            assert_eq!(
                x.len(),
                y.len(),
                "elementwise op on mismatched shapes {:?} and {:?}",
                x.shape(),
                y.shape()
            );
            let data = x
                .data()
                .iter()
                .zip(y.data())
                .map(|(&p, &q)| f(p, q))
                .collect();
            Tensor::new(x.shape().to_vec(), data).expect("shape preserved")
        });
        self.push(v, op)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        self.matmul_t(a, false, b, false)
    }

    /// `op(a) · op(b)` with optional transposes.
    pub fn matmul_t(&self, a: Var, ta: bool, b: Var, tb: bool) -> Var {
        let v = self
            .with2(a, b, |x, y| gemm(x, ta, y, tb))
            .expect("matmul shape mismatch");
        self.push(v, Op::MatMul { a, b, ta, tb })
    }

    /// Adds vector `b` (length = cols of `a`) to every row of `a`.
    pub fn add_row(&self, a: Var, b: Var) -> Var {
        let v = self.with2(a, b, |x, y| {
            assert_eq!(x.cols(), y.len(), "add_row: bias length");
            kernel::add_row(x, y)
        });
        self.push(v, Op::AddRow { a, b })
    }

    /// Adds vector `b` (length = rows of `a`) to every column of `a`.
    pub fn add_col(&self, a: Var, b: Var) -> Var {
        let v = self.with2(a, b, |x, y| {
            assert_eq!(x.rows(), y.len(), "add_col: length");
            let c = x.cols();
            let mut out = x.clone();
            for (i, v) in out.data_mut().iter_mut().enumerate() {
                *v += y.data()[i / c];
            }
            out
        });
        self.push(v, Op::AddCol { a, b })
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// Elementwise product with a constant tensor of the same length.
    pub fn mul_const(&self, a: Var, c: Tensor) -> Var {
        let v = self.with(a, |x| {
            assert_eq!(x.len(), c.len(), "mul_const length");
            let data = x.data().iter().zip(c.data()).map(|(p, q)| p * q).collect();
            Tensor::new(x.shape().to_vec(), data).expect("shape preserved")
        });
        self.push(v, Op::MulConst(a, c))
    }

    pub fn scale(&self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn neg(&self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x + s, Op::AddScalar(a))
    }

    pub fn relu(&self, a: Var) -> Var {
        let v = self.with(a, kernel::relu);
        self.push(v, Op::Relu(a))
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Ln(a))
    }

    pub fn softplus(&self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn abs(&self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    pub fn square(&self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn ln_gamma(&self, a: Var) -> Var {
        self.unary(a, ln_gamma, Op::LnGamma(a))
    }

    pub fn digamma(&self, a: Var) -> Var {
        self.unary(a, digamma, Op::Digamma(a))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&self, a: Var) -> Var {
        let v = self.with(a, |x| Tensor::scalar(x.data().iter().sum()));
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&self, a: Var) -> Var {
        let n = self.with(a, |x| x.len());
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Row sums of a matrix: `[n, m] -> [n]`.
    pub fn sum_rows(&self, a: Var) -> Var {
        let v = self.with(a, |x| {
            Tensor::vector((0..x.rows()).map(|i| x.row(i).iter().sum()).collect())
        });
        self.push(v, Op::SumRows(a))
    }

    /// Column sums of a matrix: `[n, m] -> [m]`.
    pub fn sum_cols(&self, a: Var) -> Var {
        let v = self.with(a, |x| {
            let c = x.cols();
            let mut out = vec![0.0; c];
            for i in 0..x.rows() {
                for (o, v) in out.iter_mut().zip(x.row(i)) {
                    *o += v;
                }
            }
            Tensor::vector(out)
        });
        self.push(v, Op::SumCols(a))
    }

    /// Row-wise `log(mean(exp(row)))`: `[n, m] -> [n]`.
    pub fn log_mean_exp_rows(&self, a: Var) -> Var {
        let v = self.with(a, |x| {
            Tensor::vector(
                (0..x.rows())
                    .map(|i| super::tensor::log_mean_exp(x.row(i)))
                    .collect(),
            )
        });
        self.push(v, Op::LogMeanExpRows(a))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&self, a: Var, start: usize, end: usize) -> Var {
        let v = self.with(a, |x| {
            assert!(end <= x.cols() && start <= end, "slice_cols out of range");
            let mut data = Vec::with_capacity(x.rows() * (end - start));
            for i in 0..x.rows() {
                data.extend_from_slice(&x.row(i)[start..end]);
            }
            Tensor::matrix(x.rows(), end - start, data).expect("slice shape")
        });
        self.push(v, Op::SliceCols { a, start })
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&self, a: Var, start: usize, end: usize) -> Var {
        let v = self.with(a, |x| {
            assert!(end <= x.rows() && start <= end, "slice_rows out of range");
            let c = x.cols();
            Tensor::matrix(end - start, c, x.data()[start * c..end * c].to_vec())
                .expect("slice shape")
        });
        self.push(v, Op::SliceRows { a, start })
    }

    pub fn concat_cols(&self, a: Var, b: Var) -> Var {
        let v = self.with2(a, b, |x, y| {
            assert_eq!(x.rows(), y.rows(), "concat_cols rows");
            let mut data = Vec::with_capacity(x.len() + y.len());
            for i in 0..x.rows() {
                data.extend_from_slice(x.row(i));
                data.extend_from_slice(y.row(i));
            }
            Tensor::matrix(x.rows(), x.cols() + y.cols(), data).expect("concat shape")
        });
        self.push(v, Op::ConcatCols(a, b))
    }

    /// Leading diagonal of a matrix as a vector of length `min(rows, cols)`.
    pub fn diag(&self, a: Var) -> Var {
        let v = self.with(a, |x| {
            let n = x.rows().min(x.cols());
            Tensor::vector((0..n).map(|i| x.get2(i, i)).collect())
        });
        self.push(v, Op::Diag(a))
    }

    /// `D[j,k] = ‖a_j − b_k‖²` over rows of `a` `[J, d]` and `b` `[K, d]`.
    pub fn pairwise_sq_dist(&self, a: Var, b: Var) -> Var {
        let v = self.with2(a, b, |x, y| {
            assert_eq!(x.cols(), y.cols(), "pairwise_sq_dist dims");
            let (jn, kn) = (x.rows(), y.rows());
            let mut out = vec![0.0; jn * kn];
            for j in 0..jn {
                let xr = x.row(j);
                for k in 0..kn {
                    out[j * kn + k] = xr
                        .iter()
                        .zip(y.row(k))
                        .map(|(p, q)| (p - q) * (p - q))
                        .sum();
                }
            }
            Tensor::matrix(jn, kn, out).expect("pairwise shape")
        });
        self.push(v, Op::PairwiseSqDist(a, b))
    }

    /// Inverse of a lower-triangular matrix with nonzero diagonal.
    pub fn tril_inverse(&self, a: Var) -> Var {
        let v = self.with(a, tril_inv);
        self.push(v, Op::TrilInverse(a))
    }

    pub fn transpose(&self, a: Var) -> Var {
        let v = self.with(a, Tensor::transpose);
        self.push(v, Op::Transpose(a))
    }

    /// Unpacks a row-major packed lower triangle (length n(n+1)/2) into an n×n matrix.
    pub fn pack_tril(&self, a: Var, n: usize) -> Var {
        let v = self.with(a, |x| {
            assert_eq!(x.len(), n * (n + 1) / 2, "packed triangle length");
            let mut m = Tensor::zeros(&[n, n]);
            let mut idx = 0;
            for i in 0..n {
                for j in 0..=i {
                    m.data_mut()[i * n + j] = x.data()[idx];
                    idx += 1;
                }
            }
            m
        });
        self.push(v, Op::PackTril { a, n })
    }

    /// Exponentiates the diagonal of a square matrix, leaving other entries untouched.
    pub fn exp_diag(&self, a: Var) -> Var {
        let v = self.with(a, |x| {
            let n = x.rows();
            let mut m = x.clone();
            for i in 0..n {
                m.data_mut()[i * n + i] = x.get2(i, i).exp();
            }
            m
        });
        self.push(v, Op::ExpDiag(a))
    }

    pub fn reshape(&self, a: Var, shape: Vec<usize>) -> Var {
        let v = self
            .with(a, |x| x.clone().reshape(shape))
            .expect("reshape length");
        self.push(v, Op::Reshape(a))
    }

    /// Elementwise clamp to `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp { a, lo, hi })
    }

    /// Square matrix with vector `a` on its diagonal.
    pub fn diag_matrix(&self, a: Var) -> Var {
        let v = self.with(a, |x| {
            let n = x.len();
            let mut m = Tensor::zeros(&[n, n]);
            for (i, v) in x.data().iter().enumerate() {
                m.data_mut()[i * n + i] = *v;
            }
            m
        });
        self.push(v, Op::DiagMatrix(a))
    }

    /// Broadcasts a one-element node to a vector of length `n`.
    pub fn broadcast(&self, a: Var, n: usize) -> Var {
        let ones = self.constant(Tensor::full(&[n, 1], 1.0));
        let s = self.reshape(a, vec![1, 1]);
        self.reshape(self.matmul(ones, s), vec![n])
    }

    /// Reverse sweep from a scalar node.
    pub fn grad(&self, output: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let out = &nodes[output.0].value;
        if out.len() != 1 {
            return Err(Error::NonScalarOutput(out.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[output.0] = Some(Tensor::full(out.shape(), 1.0));

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if matches!(node.op, Op::Leaf | Op::Const) {
                grads[i] = Some(g);
                continue;
            }
            let val = |v: Var| &nodes[v.0].value;
            let needs = |v: Var| !matches!(nodes[v.0].op, Op::Const);
            let mut acc = |v: Var, t: Tensor| {
                if needs(v) {
                    accumulate(&mut grads, v, t)
                }
            };
            match &node.op {
                Op::Leaf | Op::Const => {}
                Op::MatMul { a, b, ta, tb } => {
                    // C = op(A) op(B)
                    let (av, bv) = (val(*a), val(*b));
                    if needs(*a) {
                        let ga = if *ta {
                            gemm(bv, *tb, &g, true)
                        } else {
                            gemm(&g, false, bv, !*tb)
                        }
                        .expect("matmul grad");
                        acc(*a, reshape_like(ga, av));
                    }
                    if needs(*b) {
                        let gb = if *tb {
                            gemm(&g, true, av, *ta)
                        } else {
                            gemm(av, !*ta, &g, false)
                        }
                        .expect("matmul grad");
                        acc(*b, reshape_like(gb, bv));
                    }
                }
                Op::AddRow { a, b } => {
                    let c = g.cols();
                    let mut gb = vec![0.0; c];
                    for (k, v) in g.data().iter().enumerate() {
                        gb[k % c] += v;
                    }
                    acc(*b, reshape_like(Tensor::vector(gb), val(*b)));
                    acc(*a, g);
                }
                Op::AddCol { a, b } => {
                    let c = g.cols();
                    let mut gb = vec![0.0; g.rows()];
                    for (k, v) in g.data().iter().enumerate() {
                        gb[k / c] += v;
                    }
                    acc(*b, reshape_like(Tensor::vector(gb), val(*b)));
                    acc(*a, g);
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, reshape_like(g, val(*b)));
                }
                Op::Sub(a, b) => {
                    acc(*b, reshape_like(g.map(|x| -x), val(*b)));
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    acc(*a, zip_map(&g, bv, |g, y| g * y));
                    acc(*b, reshape_like(zip_map(&g, av, |g, x| g * x), bv));
                }
                Op::Div(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    acc(*a, zip_map(&g, bv, |g, y| g / y));
                    let gb: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(av.data())
                        .zip(bv.data())
                        .map(|((g, x), y)| -g * x / (y * y))
                        .collect();
                    acc(*b, Tensor::new(bv.shape().to_vec(), gb).expect("div grad"));
                }
                Op::MulConst(a, c) => acc(*a, zip_map(&g, c, |g, y| g * y)),
                Op::Scale(a, s) => acc(*a, g.map(|x| x * s)),
                Op::AddScalar(a) => acc(*a, g),
                Op::Relu(a) => acc(
                    *a,
                    zip_map(&g, val(*a), |g, x| if x > 0.0 { g } else { 0.0 }),
                ),
                Op::Exp(a) => acc(*a, zip_map(&g, &node.value, |g, y| g * y)),
                Op::Ln(a) => acc(*a, zip_map(&g, val(*a), |g, x| g / x)),
                Op::Softplus(a) => acc(*a, zip_map(&g, val(*a), |g, x| g * sigmoid(x))),
                Op::Sigmoid(a) => acc(*a, zip_map(&g, &node.value, |g, s| g * s * (1.0 - s))),
                Op::Abs(a) => acc(
                    *a,
                    zip_map(&g, val(*a), |g, x| {
                        if x > 0.0 {
                            g
                        } else if x < 0.0 {
                            -g
                        } else {
                            0.0
                        }
                    }),
                ),
                Op::Square(a) => acc(*a, zip_map(&g, val(*a), |g, x| 2.0 * g * x)),
                Op::LnGamma(a) => acc(*a, zip_map(&g, val(*a), |g, x| g * digamma(x))),
                Op::Digamma(a) => acc(*a, zip_map(&g, val(*a), |g, x| g * trigamma(x))),
                Op::Sum(a) => {
                    let s = g.data()[0];
                    acc(*a, Tensor::full(val(*a).shape(), s));
                }
                Op::SumRows(a) => {
                    let av = val(*a);
                    let c = av.cols();
                    let data = (0..av.len()).map(|k| g.data()[k / c]).collect();
                    acc(
                        *a,
                        Tensor::new(av.shape().to_vec(), data).expect("sum_rows grad"),
                    );
                }
                Op::SumCols(a) => {
                    let av = val(*a);
                    let c = av.cols();
                    let data = (0..av.len()).map(|k| g.data()[k % c]).collect();
                    acc(
                        *a,
                        Tensor::new(av.shape().to_vec(), data).expect("sum_cols grad"),
                    );
                }
                Op::LogMeanExpRows(a) => {
                    let av = val(*a);
                    let c = av.cols();
                    let mut data = vec![0.0; av.len()];
                    for i in 0..av.rows() {
                        let lme = node.value.data()[i];
                        let gi = g.data()[i];
                        for j in 0..c {
                            // softmax weight = exp(x - lme) / c
                            let w = (av.data()[i * c + j] - lme).exp() / c as f64;
                            data[i * c + j] = gi * w;
                        }
                    }
                    acc(
                        *a,
                        Tensor::new(av.shape().to_vec(), data).expect("lme grad"),
                    );
                }
                Op::SliceCols { a, start } => {
                    let av = val(*a);
                    let (c, w) = (av.cols(), g.cols());
                    let mut out = Tensor::zeros(av.shape());
                    for i in 0..av.rows() {
                        out.data_mut()[i * c + start..i * c + start + w].copy_from_slice(g.row(i));
                    }
                    acc(*a, out);
                }
                Op::SliceRows { a, start } => {
                    let av = val(*a);
                    let c = av.cols();
                    let mut out = Tensor::zeros(av.shape());
                    out.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                    acc(*a, out);
                }
                Op::ConcatCols(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let (ca, cb) = (av.cols(), bv.cols());
                    let mut ga = Vec::with_capacity(av.len());
                    let mut gb = Vec::with_capacity(bv.len());
                    for i in 0..g.rows() {
                        let r = g.row(i);
                        ga.extend_from_slice(&r[..ca]);
                        gb.extend_from_slice(&r[ca..ca + cb]);
                    }
                    acc(
                        *a,
                        Tensor::new(av.shape().to_vec(), ga).expect("concat grad"),
                    );
                    acc(
                        *b,
                        Tensor::new(bv.shape().to_vec(), gb).expect("concat grad"),
                    );
                }
                Op::Diag(a) => {
                    let av = val(*a);
                    let c = av.cols();
                    let mut out = Tensor::zeros(av.shape());
                    for (i, v) in g.data().iter().enumerate() {
                        out.data_mut()[i * c + i] = *v;
                    }
                    acc(*a, out);
                }
                Op::PairwiseSqDist(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let (jn, kn, d) = (av.rows(), bv.rows(), av.cols());
                    let mut ga = vec![0.0; av.len()];
                    let mut gb = vec![0.0; bv.len()];
                    for j in 0..jn {
                        for k in 0..kn {
                            let w = 2.0 * g.data()[j * kn + k];
                            if w == 0.0 {
                                continue;
                            }
                            for t in 0..d {
                                let diff = av.data()[j * d + t] - bv.data()[k * d + t];
                                ga[j * d + t] += w * diff;
                                gb[k * d + t] -= w * diff;
                            }
                        }
                    }
                    acc(
                        *a,
                        Tensor::new(av.shape().to_vec(), ga).expect("pairwise grad"),
                    );
                    acc(
                        *b,
                        Tensor::new(bv.shape().to_vec(), gb).expect("pairwise grad"),
                    );
                }
                Op::TrilInverse(a) => {
                    // d(L⁻¹) = −L⁻¹ dL L⁻¹  ⇒  Ḡ_L = −M⊤ Ḡ M⊤, restricted to the lower triangle
                    let m = &node.value;
                    let t = gemm(m, true, &g, false).expect("tril grad");
                    let full = gemm(&t, false, m, true).expect("tril grad");
                    let n = m.rows();
                    let mut out = full.map(|x| -x);
                    for i in 0..n {
                        for j in (i + 1)..n {
                            out.data_mut()[i * n + j] = 0.0;
                        }
                    }
                    acc(*a, out);
                }
                Op::Transpose(a) => acc(*a, reshape_like(g.transpose(), val(*a))),
                Op::PackTril { a, n } => {
                    let mut out = Vec::with_capacity(n * (n + 1) / 2);
                    for i in 0..*n {
                        for j in 0..=i {
                            out.push(g.data()[i * n + j]);
                        }
                    }
                    acc(*a, reshape_like(Tensor::vector(out), val(*a)));
                }
                Op::ExpDiag(a) => {
                    let n = g.rows();
                    let mut out = g.clone();
                    for i in 0..n {
                        out.data_mut()[i * n + i] *= node.value.get2(i, i);
                    }
                    acc(*a, out);
                }
                Op::Reshape(a) => acc(*a, reshape_like(g, val(*a))),
                Op::Clamp { a, lo, hi } => acc(
                    *a,
                    zip_map(&g, val(*a), |g, x| if x > *lo && x < *hi { g } else { 0.0 }),
                ),
                Op::DiagMatrix(a) => {
                    let n = g.rows();
                    let d = (0..n).map(|i| g.get2(i, i)).collect();
                    acc(*a, reshape_like(Tensor::vector(d), val(*a)));
                }
            }
        }
        Ok(Gradients {
            grads,
            shapes: nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, t: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(t.data()) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(t),
    }
}

fn reshape_like(t: Tensor, like: &Tensor) -> Tensor {
    if t.shape() == like.shape() {
        t
    } else {
        t.reshape(like.shape().to_vec())
            .expect("gradient length matches value")
    }
}

fn zip_map(g: &Tensor, x: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = g
        .data()
        .iter()
        .zip(x.data())
        .map(|(&a, &b)| f(a, b))
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("zip_map shape")
}

/// Inverse of a lower-triangular matrix by forward substitution.
pub fn tril_inv(l: &Tensor) -> Tensor {
    let n = l.rows();
    let mut m = Tensor::zeros(&[n, n]);
    for col in 0..n {
        for i in col..n {
            let mut s = if i == col { 1.0 } else { 0.0 };
            for k in col..i {
                s -= l.get2(i, k) * m.get2(k, col);
            }
            m.data_mut()[i * n + col] = s / l.get2(i, i);
        }
    }
    m
}
