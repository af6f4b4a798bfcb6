//! Reverse-mode automatic differentiation over matrix-valued nodes.
//!
//! Every node holds a [`Matrix`] value. Nodes are appended in evaluation
//! order, so the node list is already topologically sorted and the backward
//! pass is a single reverse sweep.

use super::{Matrix, NumericsError};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

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
    /// `x · wᵀ + b` with `b` broadcast over rows.
    Affine { x: Var, w: Var, b: Var },
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Matrix),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Relu(Var),
    Softplus(Var),
    LeakyTanh(Var, f64),
    Sum(Var),
    ColRange(Var, usize),
    /// `Σ log N(x_tm; mean_tm, exp(log_var_m))` for constant `x`.
    GaussianLogDensity {
        x: Matrix,
        mean: Var,
        log_var: Var,
    },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Matrix,
}

/// Recording of a computation for reverse-mode differentiation.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints of every node after a backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoints: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Adjoint of `v`, or `None` if the output does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.adjoints.get(v.0).and_then(|a| a.as_ref())
    }

    /// Adjoint of `v`, with zeros of the right shape when disconnected.
    pub fn get_or_zeros(&self, tape: &Tape, v: Var) -> Matrix {
        self.get(v).cloned().unwrap_or_else(|| {
            let (r, c) = tape.value(v).shape();
            Matrix::zeros(r, c)
        })
    }
}

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

    fn push(&mut self, op: Op, value: Matrix) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m[(0, 0)]
    }

    /// Registers a leaf (parameter or input).
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        assert_eq!(xv.cols(), wv.cols(), "affine: input width mismatch");
        assert_eq!(bv.shape(), (1, wv.rows()), "affine: bias shape mismatch");
        let mut out = xv.matmul_t(wv);
        let bias = bv.as_slice().to_vec();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(&bias) {
                *o += b;
            }
        }
        self.push(Op::Affine { x, w, b }, out)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(Op::MatMul(a, b), out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).add(self.value(b));
        self.push(Op::Add(a, b), out)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).sub(self.value(b));
        self.push(Op::Sub(a, b), out)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_with(self.value(b), |x, y| x * y);
        self.push(Op::Mul(a, b), out)
    }

    /// Elementwise product with a constant matrix.
    pub fn mul_const(&mut self, a: Var, c: Matrix) -> Var {
        let out = self.value(a).zip_with(&c, |x, y| x * y);
        self.push(Op::MulConst(a, c), out)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        self.push(Op::Scale(a, s), out)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|v| v + s);
        self.push(Op::AddScalar(a), out)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), out)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        self.push(Op::Relu(a), out)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(softplus);
        self.push(Op::Softplus(a), out)
    }

    /// `tanh(x) + slope·x`.
    pub fn leaky_tanh(&mut self, a: Var, slope: f64) -> Var {
        let out = self.value(a).map(|v| v.tanh() + slope * v);
        self.push(Op::LeakyTanh(a, slope), out)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Matrix::filled(1, 1, self.value(a).sum());
        self.push(Op::Sum(a), out)
    }

    /// Columns `[start, end)` of `a`.
    pub fn col_range(&mut self, a: Var, start: usize, end: usize) -> Var {
        let out = self.value(a).col_range(start, end);
        self.push(Op::ColRange(a, start), out)
    }

    /// Total Gaussian log-density of the rows of constant `x` under
    /// `N(mean_t, diag(exp(log_var)))`; `log_var` is a `1×M` row.
    pub fn gaussian_log_density(&mut self, x: Matrix, mean: Var, log_var: Var) -> Var {
        let (mv, lv) = (self.value(mean), self.value(log_var));
        assert_eq!(x.shape(), mv.shape(), "gaussian_log_density: shape mismatch");
        assert_eq!(lv.shape(), (1, x.cols()), "gaussian_log_density: log_var shape");
        let lvs = lv.as_slice();
        let mut total = 0.0;
        for t in 0..x.rows() {
            for ((&xv, &mu), &l) in x.row(t).iter().zip(mv.row(t)).zip(lvs) {
                let r = xv - mu;
                total += -HALF_LN_2PI - 0.5 * l - 0.5 * r * r * (-l).exp();
            }
        }
        let out = Matrix::filled(1, 1, total);
        self.push(Op::GaussianLogDensity { x, mean, log_var }, out)
    }

    /// Reverse sweep from a scalar `output`. Adjoints start at zero on every call.
    pub fn backward(&self, output: Var) -> Result<Gradients, NumericsError> {
        let shape = self.value(output).shape();
        if shape != (1, 1) {
            return Err(NumericsError::NonScalarOutput(shape));
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; output.0 + 1];
        adj[output.0] = Some(Matrix::filled(1, 1, 1.0));

        fn accumulate(adj: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut adj[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            // Leaf adjoints stay in place; interior adjoints are consumed.
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = adj[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {}
                Op::Affine { x, w, b } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    accumulate(&mut adj, *x, g.matmul(wv));
                    accumulate(&mut adj, *w, g.t_matmul(xv));
                    let mut db = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (d, v) in db.as_mut_slice().iter_mut().zip(g.row(i)) {
                            *d += v;
                        }
                    }
                    accumulate(&mut adj, *b, db);
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    accumulate(&mut adj, *a, g.matmul_t(bv));
                    accumulate(&mut adj, *b, av.t_matmul(&g));
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *b, g.scale(-1.0));
                    accumulate(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_with(self.value(*b), |x, y| x * y);
                    let gb = g.zip_with(self.value(*a), |x, y| x * y);
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::MulConst(a, c) => {
                    accumulate(&mut adj, *a, g.zip_with(c, |x, y| x * y));
                }
                Op::Scale(a, s) => accumulate(&mut adj, *a, g.scale(*s)),
                Op::AddScalar(a) => accumulate(&mut adj, *a, g),
                Op::Tanh(a) => {
                    let ga = g.zip_with(&node.value, |gi, y| gi * (1.0 - y * y));
                    accumulate(&mut adj, *a, ga);
                }
                Op::Relu(a) => {
                    let ga = g.zip_with(self.value(*a), |gi, x| if x > 0.0 { gi } else { 0.0 });
                    accumulate(&mut adj, *a, ga);
                }
                Op::Softplus(a) => {
                    let ga = g.zip_with(self.value(*a), |gi, x| gi * sigmoid(x));
                    accumulate(&mut adj, *a, ga);
                }
                Op::LeakyTanh(a, slope) => {
                    let ga = g.zip_with(self.value(*a), |gi, x| {
                        let t = x.tanh();
                        gi * (1.0 - t * t + slope)
                    });
                    accumulate(&mut adj, *a, ga);
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    accumulate(&mut adj, *a, Matrix::filled(r, c, g[(0, 0)]));
                }
                Op::ColRange(a, start) => {
                    let (r, c) = self.value(*a).shape();
                    let mut ga = Matrix::zeros(r, c);
                    ga.set_block(0, *start, &g);
                    accumulate(&mut adj, *a, ga);
                }
                Op::GaussianLogDensity { x, mean, log_var } => {
                    let s = g[(0, 0)];
                    let (mv, lv) = (self.value(*mean), self.value(*log_var));
                    let prec: Vec<f64> = lv.as_slice().iter().map(|l| (-l).exp()).collect();
                    let mut gm = Matrix::zeros(x.rows(), x.cols());
                    let mut gl = Matrix::zeros(1, x.cols());
                    for t in 0..x.rows() {
                        let (xr, mr) = (x.row(t), mv.row(t));
                        let gmr = gm.row_mut(t);
                        for m in 0..xr.len() {
                            let r = xr[m] - mr[m];
                            gmr[m] = s * r * prec[m];
                            gl.as_mut_slice()[m] += s * (-0.5 + 0.5 * r * r * prec[m]);
                        }
                    }
                    accumulate(&mut adj, *mean, gm);
                    accumulate(&mut adj, *log_var, gl);
                }
            }
        }
        Ok(Gradients { adjoints: adj })
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`softplus`] for positive arguments.
pub fn softplus_inv(y: f64) -> f64 {
    assert!(y > 0.0, "softplus_inv needs a positive argument");
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}
