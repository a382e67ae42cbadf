use crate::error::{Error, Result};
use crate::linalg::{assert_positive_definite, Cholesky};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::special::{digamma, lgamma};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, T),
    AddConst(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Sigmoid(Var),
    Powf(Var, T),
    Lgamma(Var),
    Abs(Var),
    ClampMin(Var, T),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    SumCols(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    Diag(Var),
    LowerSoftplusDiag(Var),
    SpdSolve { k: Var, b: Var, chol: Cholesky<T> },
    LogDetSpd { k: Var, chol: Cholesky<T> },
}

struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Define-by-run reverse-mode graph over dense matrices.
///
/// Nodes are appended in evaluation order, so the node vector is already a
/// topological order and backward is a single reverse sweep.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    jitter: T,
}

/// Gradients of a scalar root with respect to every node that requires one.
pub struct Gradients<T> {
    grads: Vec<Option<Matrix<T>>>,
    shapes: Vec<(usize, usize)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `v`, or `None` when the root does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Matrix<T>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for `v`, zeros when the root does not depend on it.
    pub fn wrt(&self, v: Var) -> Matrix<T> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> Option<(usize, usize)> {
    let dim = |x: usize, y: usize| {
        if x == y {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else if y == 1 {
            Some(x)
        } else {
            None
        }
    };
    Some((dim(a.0, b.0)?, dim(a.1, b.1)?))
}

/// Elementwise `f(a, b)` with numpy-style broadcasting of unit dimensions.
fn broadcast_zip<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, f: impl Fn(T, T) -> T) -> Matrix<T> {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let (r, c) = broadcast_shape(a.shape(), b.shape()).expect("broadcast shapes checked at build time");
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    Matrix::from_fn(r, c, |i, j| {
        let x = a[(if ar == 1 { 0 } else { i }, if ac == 1 { 0 } else { j })];
        let y = b[(if br == 1 { 0 } else { i }, if bc == 1 { 0 } else { j })];
        f(x, y)
    })
}

/// Sums a broadcast gradient back down to `shape`.
fn reduce_to<T: Scalar>(g: Matrix<T>, shape: (usize, usize)) -> Matrix<T> {
    let mut g = g;
    if shape.0 == 1 && g.rows() != 1 {
        g = g.sum_rows();
    }
    if shape.1 == 1 && g.cols() != 1 {
        g = g.sum_cols();
    }
    g
}

#[inline]
fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), jitter: T::lit(1e-6) }
    }

    /// Graph whose SPD operations factor `K + jitter·I`.
    pub fn with_jitter(jitter: T) -> Self {
        Self { nodes: Vec::new(), jitter }
    }

    pub fn jitter(&self) -> T {
        self.jitter
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Matrix<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn scalar_constant(&mut self, value: T) -> Var {
        self.constant(Matrix::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar_value(&self, v: Var) -> T {
        self.nodes[v.0].value.item()
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T, op: Op<T>) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if broadcast_shape(sa, sb).is_none() {
            panic!("{name}: incompatible shapes {sa:?} and {sb:?}");
        }
        let value = broadcast_zip(self.value(a), self.value(b), f);
        self.push(value, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    /// Adds a `1×c` row to every row of an `r×c` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row).0, 1, "add_row expects a row vector");
        self.add(a, row)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| -x);
        self.push(v, Op::Neg(a), &[a])
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a).scale(c);
        self.push(v, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddConst(a), &[a])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.exp());
        self.push(v, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.ln());
        self.push(v, Op::Log(a), &[a])
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        self.push(v, Op::Softplus(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a), &[a])
    }

    pub fn powf(&mut self, a: Var, p: T) -> Var {
        let v = self.value(a).map(|x| x.powf(p));
        self.push(v, Op::Powf(a, p), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.powf(a, T::lit(2.0))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.powf(a, T::lit(0.5))
    }

    pub fn lgamma(&mut self, a: Var) -> Var {
        let v = self.value(a).map(lgamma);
        self.push(v, Op::Lgamma(a), &[a])
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.abs());
        self.push(v, Op::Abs(a), &[a])
    }

    /// `max(a, floor)` elementwise; the gradient is cut where the floor is active.
    pub fn clamp_min(&mut self, a: Var, floor: T) -> Var {
        let v = self.value(a).map(|x| x.max(floor));
        self.push(v, Op::ClampMin(a, floor), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Matrix::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = Matrix::scalar(self.value(a).mean());
        self.push(v, Op::Mean(a), &[a])
    }

    /// Column sums as a `1×c` row.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_rows();
        self.push(v, Op::SumRows(a), &[a])
    }

    /// Row sums as an `r×1` column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_cols();
        self.push(v, Op::SumCols(a), &[a])
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice_cols(start, end);
        self.push(v, Op::SliceCols(a, start), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let mats: Vec<&Matrix<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Matrix::hcat(&mats);
        self.push(v, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Diagonal of a square matrix as an `n×1` column.
    pub fn diag(&mut self, a: Var) -> Var {
        let d = self.value(a).diag();
        self.push(Matrix::column(&d), Op::Diag(a), &[a])
    }

    /// Lower-triangular factor from an unconstrained square matrix: strict
    /// lower part copied, diagonal through softplus, upper part zero.
    pub fn lower_softplus_diag(&mut self, raw: Var) -> Var {
        let r = self.value(raw);
        assert!(r.is_square(), "lower_softplus_diag expects a square matrix");
        let n = r.rows();
        let v = Matrix::from_fn(n, n, |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Greater => r[(i, j)],
            std::cmp::Ordering::Equal => softplus(r[(i, i)]),
            std::cmp::Ordering::Less => T::zero(),
        });
        self.push(v, Op::LowerSoftplusDiag(raw), &[raw])
    }

    /// `X = K⁻¹ B` for symmetric positive-definite `K`, through a jittered Cholesky.
    pub fn spd_solve(&mut self, k: Var, b: Var) -> Result<Var> {
        let chol = assert_positive_definite(self.value(k), self.jitter)?;
        let v = chol.solve(self.value(b));
        Ok(self.push(v, Op::SpdSolve { k, b, chol }, &[k, b]))
    }

    /// `log det K` for symmetric positive-definite `K`.
    pub fn logdet_spd(&mut self, k: Var) -> Result<Var> {
        let chol = assert_positive_definite(self.value(k), self.jitter)?;
        let v = Matrix::scalar(chol.log_det());
        Ok(self.push(v, Op::LogDetSpd { k, chol }, &[k]))
    }

    /// Reverse sweep from a `1×1` root.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        if self.shape(root) != (1, 1) {
            return Err(Error::contract(format!("backward root must be scalar, got {:?}", self.shape(root))));
        }
        let n = root.0 + 1;
        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Matrix::scalar(T::one()));

        for idx in (0..n).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            let acc = |grads: &mut Vec<Option<Matrix<T>>>, v: Var, delta: Matrix<T>| {
                if !self.nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => existing.add_assign(&delta),
                    slot @ None => *slot = Some(delta),
                }
            };
            let val = |v: Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Leaf => unreachable!(),
                &Op::Add(a, b) => {
                    acc(&mut grads, a, reduce_to(g.clone(), self.shape(a)));
                    acc(&mut grads, b, reduce_to(g.clone(), self.shape(b)));
                }
                &Op::Sub(a, b) => {
                    acc(&mut grads, a, reduce_to(g.clone(), self.shape(a)));
                    acc(&mut grads, b, reduce_to(g.map(|x| -x), self.shape(b)));
                }
                &Op::Mul(a, b) => {
                    if self.nodes[a.0].requires_grad {
                        acc(&mut grads, a, reduce_to(broadcast_zip(&g, val(b), |x, y| x * y), self.shape(a)));
                    }
                    if self.nodes[b.0].requires_grad {
                        acc(&mut grads, b, reduce_to(broadcast_zip(&g, val(a), |x, y| x * y), self.shape(b)));
                    }
                }
                &Op::Div(a, b) => {
                    if self.nodes[a.0].requires_grad {
                        acc(&mut grads, a, reduce_to(broadcast_zip(&g, val(b), |x, y| x / y), self.shape(a)));
                    }
                    if self.nodes[b.0].requires_grad {
                        // d(a/b)/db = -out/b
                        let t = g.zip_map(&node.value, |x, o| -x * o);
                        acc(&mut grads, b, reduce_to(broadcast_zip(&t, val(b), |x, y| x / y), self.shape(b)));
                    }
                }
                &Op::Neg(a) => acc(&mut grads, a, g.map(|x| -x)),
                &Op::Scale(a, c) => acc(&mut grads, a, g.scale(c)),
                &Op::AddConst(a) => acc(&mut grads, a, g),
                &Op::MatMul(a, b) => {
                    if self.nodes[a.0].requires_grad {
                        acc(&mut grads, a, g.matmul_tr(val(b)));
                    }
                    if self.nodes[b.0].requires_grad {
                        acc(&mut grads, b, val(a).tr_matmul(&g));
                    }
                }
                &Op::Transpose(a) => acc(&mut grads, a, g.transpose()),
                &Op::Exp(a) => acc(&mut grads, a, g.hadamard(&node.value)),
                &Op::Log(a) => acc(&mut grads, a, g.zip_map(val(a), |x, y| x / y)),
                &Op::Softplus(a) => acc(&mut grads, a, g.zip_map(val(a), |x, y| x * sigmoid(y))),
                &Op::Sigmoid(a) => acc(&mut grads, a, g.zip_map(&node.value, |x, s| x * s * (T::one() - s))),
                &Op::Powf(a, p) => acc(&mut grads, a, g.zip_map(val(a), |x, y| x * p * y.powf(p - T::one()))),
                &Op::Lgamma(a) => acc(&mut grads, a, g.zip_map(val(a), |x, y| x * digamma(y))),
                &Op::Abs(a) => acc(
                    &mut grads,
                    a,
                    g.zip_map(val(a), |x, y| if y == T::zero() { T::zero() } else { x * y.signum() }),
                ),
                &Op::ClampMin(a, floor) => {
                    acc(&mut grads, a, g.zip_map(val(a), |x, y| if y > floor { x } else { T::zero() }))
                }
                &Op::Sum(a) => {
                    let (r, c) = self.shape(a);
                    acc(&mut grads, a, Matrix::filled(r, c, g.item()));
                }
                &Op::Mean(a) => {
                    let (r, c) = self.shape(a);
                    acc(&mut grads, a, Matrix::filled(r, c, g.item() / T::from_usize_lossy(r * c)));
                }
                &Op::SumRows(a) => {
                    let (r, c) = self.shape(a);
                    acc(&mut grads, a, Matrix::from_fn(r, c, |_, j| g[(0, j)]));
                }
                &Op::SumCols(a) => {
                    let (r, c) = self.shape(a);
                    acc(&mut grads, a, Matrix::from_fn(r, c, |i, _| g[(i, 0)]));
                }
                &Op::SliceCols(a, start) => {
                    let (r, c) = self.shape(a);
                    let w = g.cols();
                    acc(
                        &mut grads,
                        a,
                        Matrix::from_fn(
                            r,
                            c,
                            |i, j| {
                                if j >= start && j < start + w {
                                    g[(i, j - start)]
                                } else {
                                    T::zero()
                                }
                            },
                        ),
                    );
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.shape(p).1;
                        acc(&mut grads, p, g.slice_cols(offset, offset + w));
                        offset += w;
                    }
                }
                &Op::Diag(a) => acc(&mut grads, a, Matrix::diag_from(g.as_slice())),
                &Op::LowerSoftplusDiag(raw) => {
                    let r = val(raw);
                    let n = r.rows();
                    acc(
                        &mut grads,
                        raw,
                        Matrix::from_fn(n, n, |i, j| match i.cmp(&j) {
                            std::cmp::Ordering::Greater => g[(i, j)],
                            std::cmp::Ordering::Equal => g[(i, i)] * sigmoid(r[(i, i)]),
                            std::cmp::Ordering::Less => T::zero(),
                        }),
                    );
                }
                Op::SpdSolve { k, b, chol } => {
                    let gb = chol.solve(&g);
                    if self.nodes[k.0].requires_grad {
                        acc(&mut grads, *k, gb.matmul_tr(&node.value).scale(-T::one()));
                    }
                    acc(&mut grads, *b, gb);
                }
                Op::LogDetSpd { k, chol } => {
                    acc(&mut grads, *k, chol.inverse().scale(g.item()));
                }
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }
}
