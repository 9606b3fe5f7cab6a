//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Var`] wraps a tensor plus the recipe for propagating gradients to its
//! inputs. Graphs are plain DAGs built by calling ops; [`backward`] walks the
//! graph in reverse topological order and accumulates gradients.
//!
//! Conventions fixed here (and relied on by tests):
//! - binary elementwise ops broadcast scalar-with-tensor and equal-shape only;
//! - `abs` uses subgradient 0 at exactly 0;
//! - `max`/`min` route the gradient to the first attaining index;
//! - traversal and accumulation order is structural, so repeated runs of the
//!   same graph produce bit-identical gradients.

use std::cell::{Cell, RefCell};
use std::collections::HashSet;
use std::rc::Rc;

use crate::error::{GarError, Result};
use crate::tensor::{matmul_raw, Tensor};

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn fresh_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

type BackFn = Box<dyn Fn(&Tensor)>;

struct VarInner {
    id: u64,
    value: Tensor,
    grad: Option<Tensor>,
    parents: Vec<Var>,
    back: Option<BackFn>,
}

/// A node in the computation graph.
#[derive(Clone)]
pub struct Var {
    inner: Rc<RefCell<VarInner>>,
}

impl Var {
    /// A leaf node (input, parameter or constant).
    pub fn leaf(value: Tensor) -> Var {
        Var {
            inner: Rc::new(RefCell::new(VarInner {
                id: fresh_id(),
                value,
                grad: None,
                parents: Vec::new(),
                back: None,
            })),
        }
    }

    pub fn scalar(v: f64) -> Var {
        Var::leaf(Tensor::scalar(v))
    }

    /// A leaf carrying the same value, disconnected from this graph.
    pub fn detach(&self) -> Var {
        Var::leaf(self.value())
    }

    pub(crate) fn from_op(value: Tensor, parents: Vec<Var>, back: BackFn) -> Var {
        Var {
            inner: Rc::new(RefCell::new(VarInner {
                id: fresh_id(),
                value,
                grad: None,
                parents,
                back: Some(back),
            })),
        }
    }

    fn id(&self) -> u64 {
        self.inner.borrow().id
    }

    pub fn value(&self) -> Tensor {
        self.inner.borrow().value.clone()
    }

    /// Scalar value of a single-element node.
    pub fn item(&self) -> f64 {
        self.inner.borrow().value.item()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().value.shape().to_vec()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.inner.borrow().grad.clone()
    }

    pub(crate) fn accumulate_grad(&self, delta: &Tensor) {
        let mut inner = self.inner.borrow_mut();
        match &mut inner.grad {
            Some(g) => g.add_assign(delta),
            None => inner.grad = Some(delta.clone()),
        }
    }

    fn zero_grad(&self) {
        let mut inner = self.inner.borrow_mut();
        let shape = inner.value.shape().to_vec();
        inner.grad = Some(Tensor::zeros(&shape));
    }

    fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.inner.borrow().value)
    }
}

// ---------------------------------------------------------------------------
// elementwise binary ops
// ---------------------------------------------------------------------------

/// Check the scalar-or-equal-shape broadcast rule and return the output shape.
fn broadcast_shape(a: &Tensor, b: &Tensor) -> Result<Vec<usize>> {
    if a.shape() == b.shape() {
        return Ok(a.shape().to_vec());
    }
    if a.is_scalar() {
        return Ok(b.shape().to_vec());
    }
    if b.is_scalar() {
        return Ok(a.shape().to_vec());
    }
    Err(GarError::ShapeMismatch {
        expected: a.shape().to_vec(),
        got: b.shape().to_vec(),
    })
}

fn binary_forward(a: &Tensor, b: &Tensor, shape: &[usize], f: impl Fn(f64, f64) -> f64) -> Tensor {
    let n: usize = shape.iter().product();
    let (la, lb) = (a.len(), b.len());
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        let av = a.data()[if la == 1 { 0 } else { i }];
        let bv = b.data()[if lb == 1 { 0 } else { i }];
        data.push(f(av, bv));
    }
    Tensor::new(shape.to_vec(), data).expect("shape/product checked by caller")
}

/// Shared backward for elementwise binary ops: per-element partials, with
/// scalar operands receiving the summed contribution.
fn binary_backward(
    up: &Tensor,
    a_val: &Tensor,
    b_val: &Tensor,
    da: impl Fn(f64, f64) -> f64,
    db: impl Fn(f64, f64) -> f64,
) -> (Tensor, Tensor) {
    let mut ga = Tensor::zeros(a_val.shape());
    let mut gb = Tensor::zeros(b_val.shape());
    let (la, lb) = (a_val.len(), b_val.len());
    for i in 0..up.len() {
        let ai = if la == 1 { 0 } else { i };
        let bi = if lb == 1 { 0 } else { i };
        let av = a_val.data()[ai];
        let bv = b_val.data()[bi];
        let u = up.data()[i];
        ga.data_mut()[ai] += u * da(av, bv);
        gb.data_mut()[bi] += u * db(av, bv);
    }
    (ga, gb)
}

macro_rules! binary_op {
    ($name:ident, $fwd:expr, $da:expr, $db:expr) => {
        pub fn $name(&self, other: &Var) -> Result<Var> {
            let (av, bv) = (self.value(), other.value());
            let shape = broadcast_shape(&av, &bv)?;
            let out = binary_forward(&av, &bv, &shape, $fwd);
            let (pa, pb) = (self.clone(), other.clone());
            let back = Box::new(move |up: &Tensor| {
                let (ga, gb) = binary_backward(up, &av, &bv, $da, $db);
                pa.accumulate_grad(&ga);
                pb.accumulate_grad(&gb);
            });
            Ok(Var::from_op(out, vec![self.clone(), other.clone()], back))
        }
    };
}

impl Var {
    binary_op!(add, |a, b| a + b, |_, _| 1.0, |_, _| 1.0);
    binary_op!(sub, |a, b| a - b, |_, _| 1.0, |_, _| -1.0);
    binary_op!(mul, |a, b| a * b, |_, b| b, |a, _| a);

    pub fn div(&self, other: &Var) -> Result<Var> {
        if other.with_value(|t| t.data().iter().any(|&v| v == 0.0)) {
            return Err(GarError::Domain {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        let (av, bv) = (self.value(), other.value());
        let shape = broadcast_shape(&av, &bv)?;
        let out = binary_forward(&av, &bv, &shape, |a, b| a / b);
        let (pa, pb) = (self.clone(), other.clone());
        let back = Box::new(move |up: &Tensor| {
            let (ga, gb) =
                binary_backward(up, &av, &bv, |_, b| 1.0 / b, |a, b| -a / (b * b));
            pa.accumulate_grad(&ga);
            pb.accumulate_grad(&gb);
        });
        Ok(Var::from_op(out, vec![self.clone(), other.clone()], back))
    }
}

// ---------------------------------------------------------------------------
// elementwise unary ops
// ---------------------------------------------------------------------------

macro_rules! unary_op {
    ($name:ident, $fwd:expr, $dfdx:expr) => {
        pub fn $name(&self) -> Var {
            let av = self.value();
            let out = av.map($fwd);
            let parent = self.clone();
            let back = Box::new(move |up: &Tensor| {
                let mut g = Tensor::zeros(av.shape());
                for i in 0..up.len() {
                    let d: fn(f64) -> f64 = $dfdx;
                    g.data_mut()[i] = up.data()[i] * d(av.data()[i]);
                }
                parent.accumulate_grad(&g);
            });
            Var::from_op(out, vec![self.clone()], back)
        }
    };
}

impl Var {
    unary_op!(neg, |x| -x, |_| -1.0);
    unary_op!(square, |x| x * x, |x| 2.0 * x);
    unary_op!(exp, |x| x.exp(), |x| x.exp());
    // subgradient 0 at exactly 0
    unary_op!(abs, |x| x.abs(), |x| {
        if x > 0.0 {
            1.0
        } else if x < 0.0 {
            -1.0
        } else {
            0.0
        }
    });
    // x > 0: x, else exp(x) - 1; derivative at 0 is exp(0) = 1
    unary_op!(elu, |x| if x > 0.0 { x } else { x.exp() - 1.0 }, |x| {
        if x > 0.0 {
            1.0
        } else {
            x.exp()
        }
    });

    pub fn sqrt(&self) -> Result<Var> {
        if self.with_value(|t| t.data().iter().any(|&v| v < 0.0)) {
            return Err(GarError::Domain {
                op: "sqrt",
                detail: "negative input".into(),
            });
        }
        let av = self.value();
        let out = av.map(f64::sqrt);
        let parent = self.clone();
        let back = Box::new(move |up: &Tensor| {
            let mut g = Tensor::zeros(av.shape());
            for i in 0..up.len() {
                let x = av.data()[i];
                // derivative is unbounded at 0; pin to 0 so a 0 upstream
                // cannot poison the graph with NaN
                let d = if x > 0.0 { 0.5 / x.sqrt() } else { 0.0 };
                g.data_mut()[i] = up.data()[i] * d;
            }
            parent.accumulate_grad(&g);
        });
        Ok(Var::from_op(out, vec![self.clone()], back))
    }

    pub fn log(&self) -> Result<Var> {
        if self.with_value(|t| t.data().iter().any(|&v| v <= 0.0)) {
            return Err(GarError::Domain {
                op: "log",
                detail: "non-positive input".into(),
            });
        }
        let av = self.value();
        let out = av.map(f64::ln);
        let parent = self.clone();
        let back = Box::new(move |up: &Tensor| {
            let mut g = Tensor::zeros(av.shape());
            for i in 0..up.len() {
                g.data_mut()[i] = up.data()[i] / av.data()[i];
            }
            parent.accumulate_grad(&g);
        });
        Ok(Var::from_op(out, vec![self.clone()], back))
    }

    /// x^p for a constant exponent; defined for x > 0.
    pub fn powf_const(&self, p: f64) -> Result<Var> {
        if self.with_value(|t| t.data().iter().any(|&v| v <= 0.0)) {
            return Err(GarError::Domain {
                op: "powf",
                detail: "non-positive base".into(),
            });
        }
        let av = self.value();
        let out = av.map(|x| x.powf(p));
        let parent = self.clone();
        let back = Box::new(move |up: &Tensor| {
            let mut g = Tensor::zeros(av.shape());
            for i in 0..up.len() {
                g.data_mut()[i] = up.data()[i] * p * av.data()[i].powf(p - 1.0);
            }
            parent.accumulate_grad(&g);
        });
        Ok(Var::from_op(out, vec![self.clone()], back))
    }

    pub fn add_const(&self, c: f64) -> Var {
        let av = self.value();
        let out = av.map(|x| x + c);
        let parent = self.clone();
        let back = Box::new(move |up: &Tensor| {
            parent.accumulate_grad(up);
        });
        Var::from_op(out, vec![self.clone()], back)
    }

    pub fn mul_const(&self, c: f64) -> Var {
        let av = self.value();
        let out = av.map(|x| x * c);
        let parent = self.clone();
        let back = Box::new(move |up: &Tensor| {
            let g = up.map(|u| u * c);
            parent.accumulate_grad(&g);
        });
        Var::from_op(out, vec![self.clone()], back)
    }

    /// max(x, c) elementwise; gradient passes only where x > c.
    pub fn clamp_min(&self, c: f64) -> Var {
        let av = self.value();
        let out = av.map(|x| x.max(c));
        let parent = self.clone();
        let back = Box::new(move |up: &Tensor| {
            let mut g = Tensor::zeros(av.shape());
            for i in 0..up.len() {
                if av.data()[i] > c {
                    g.data_mut()[i] = up.data()[i];
                }
            }
            parent.accumulate_grad(&g);
        });
        Var::from_op(out, vec![self.clone()], back)
    }

    /// Standard Huber rule applied elementwise to an error tensor:
    /// 0.5 e^2 for |e| <= delta, else delta (|e| - 0.5 delta).
    pub fn huber_elem(&self, delta: f64) -> Result<Var> {
        if delta <= 0.0 {
            return Err(GarError::InvalidConfig(format!(
                "huber delta must be > 0, got {delta}"
            )));
        }
        let av = self.value();
        let out = av.map(|e| {
            if e.abs() <= delta {
                0.5 * e * e
            } else {
                delta * (e.abs() - 0.5 * delta)
            }
        });
        let parent = self.clone();
        let back = Box::new(move |up: &Tensor| {
            let mut g = Tensor::zeros(av.shape());
            for i in 0..up.len() {
                let e = av.data()[i];
                let d = if e.abs() <= delta {
                    e
                } else {
                    delta * e.signum()
                };
                g.data_mut()[i] = up.data()[i] * d;
            }
            parent.accumulate_grad(&g);
        });
        Ok(Var::from_op(out, vec![self.clone()], back))
    }
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

impl Var {
    pub fn sum(&self) -> Result<Var> {
        self.reduce_linear("sum", 1.0)
    }

    pub fn mean(&self) -> Result<Var> {
        let n = self.len();
        if n == 0 {
            return Err(GarError::EmptyTensor { op: "mean" });
        }
        self.reduce_linear("mean", 1.0 / n as f64)
    }

    fn reduce_linear(&self, op: &'static str, w: f64) -> Result<Var> {
        let av = self.value();
        if av.is_empty() {
            return Err(GarError::EmptyTensor { op });
        }
        let s: f64 = av.data().iter().sum::<f64>() * w;
        let shape = av.shape().to_vec();
        let parent = self.clone();
        let back = Box::new(move |up: &Tensor| {
            let u = up.item() * w;
            let g = Tensor::new(shape.clone(), vec![u; shape.iter().product()])
                .expect("constant fill matches shape");
            parent.accumulate_grad(&g);
        });
        Ok(Var::from_op(Tensor::scalar(s), vec![self.clone()], back))
    }

    pub fn max(&self) -> Result<Var> {
        self.reduce_extremum("max", |best, v| v > best)
    }

    pub fn min(&self) -> Result<Var> {
        self.reduce_extremum("min", |best, v| v < best)
    }

    fn reduce_extremum(
        &self,
        op: &'static str,
        better: impl Fn(f64, f64) -> bool,
    ) -> Result<Var> {
        let av = self.value();
        if av.is_empty() {
            return Err(GarError::EmptyTensor { op });
        }
        // strict comparison keeps the first attaining index on ties
        let mut idx = 0usize;
        let mut best = av.data()[0];
        for (i, &v) in av.data().iter().enumerate().skip(1) {
            if better(best, v) {
                best = v;
                idx = i;
            }
        }
        let shape = av.shape().to_vec();
        let parent = self.clone();
        let back = Box::new(move |up: &Tensor| {
            let mut g = Tensor::zeros(&shape);
            g.data_mut()[idx] = up.item();
            parent.accumulate_grad(&g);
        });
        Ok(Var::from_op(Tensor::scalar(best), vec![self.clone()], back))
    }
}

// ---------------------------------------------------------------------------
// matrix ops
// ---------------------------------------------------------------------------

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = a[i * cols + j];
        }
    }
    t
}

impl Var {
    /// [m x k] * [k x n] -> [m x n].
    pub fn matmul(&self, other: &Var) -> Result<Var> {
        let (av, bv) = (self.value(), other.value());
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(GarError::ShapeMismatch {
                expected: av.shape().to_vec(),
                got: bv.shape().to_vec(),
            });
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let out = Tensor::new(vec![m, n], matmul_raw(av.data(), bv.data(), m, k, n))?;
        let (pa, pb) = (self.clone(), other.clone());
        let back = Box::new(move |up: &Tensor| {
            // dA = up * B^T, dB = A^T * up
            let bt = transpose_raw(bv.data(), k, n);
            let ga = Tensor::new(vec![m, k], matmul_raw(up.data(), &bt, m, n, k))
                .expect("matmul backward shape");
            let at = transpose_raw(av.data(), m, k);
            let gb = Tensor::new(vec![k, n], matmul_raw(&at, up.data(), k, m, n))
                .expect("matmul backward shape");
            pa.accumulate_grad(&ga);
            pb.accumulate_grad(&gb);
        });
        Ok(Var::from_op(out, vec![self.clone(), other.clone()], back))
    }

    /// Add a length-`n` bias row to every row of an [m x n] matrix.
    pub fn add_bias(&self, bias: &Var) -> Result<Var> {
        let (av, bv) = (self.value(), bias.value());
        if av.shape().len() != 2 || bv.len() != av.shape()[1] {
            return Err(GarError::ShapeMismatch {
                expected: av.shape().to_vec(),
                got: bv.shape().to_vec(),
            });
        }
        let (m, n) = (av.shape()[0], av.shape()[1]);
        let mut data = av.data().to_vec();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += bv.data()[j];
            }
        }
        let out = Tensor::new(vec![m, n], data)?;
        let (pa, pb) = (self.clone(), bias.clone());
        let bshape = bv.shape().to_vec();
        let back = Box::new(move |up: &Tensor| {
            pa.accumulate_grad(up);
            let mut gb = Tensor::zeros(&bshape);
            for i in 0..m {
                for j in 0..n {
                    gb.data_mut()[j] += up.data()[i * n + j];
                }
            }
            pb.accumulate_grad(&gb);
        });
        Ok(Var::from_op(out, vec![self.clone(), bias.clone()], back))
    }

    /// Column `j` of an [n x t] matrix as a length-n vector.
    pub fn select_column(&self, j: usize) -> Result<Var> {
        let av = self.value();
        let col = av.column(j)?;
        let (n, t) = (av.shape()[0], av.shape()[1]);
        let parent = self.clone();
        let back = Box::new(move |up: &Tensor| {
            let mut g = Tensor::zeros(&[n, t]);
            for i in 0..n {
                g.data_mut()[i * t + j] = up.data()[i];
            }
            parent.accumulate_grad(&g);
        });
        Ok(Var::from_op(col, vec![self.clone()], back))
    }
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

/// Populate gradients of every node reachable from `root`.
///
/// `root` must be scalar. Gradients from any previous backward pass over the
/// same nodes are reset first.
pub fn backward(root: &Var) -> Result<()> {
    if !root.inner.borrow().value.is_scalar() {
        return Err(GarError::Domain {
            op: "backward",
            detail: format!("root must be scalar, got shape {:?}", root.shape()),
        });
    }

    // Iterative post-order DFS; reversed it yields consumers-before-inputs.
    let mut order: Vec<Var> = Vec::new();
    let mut visited: HashSet<u64> = HashSet::new();
    let mut stack: Vec<(Var, usize)> = Vec::new();
    visited.insert(root.id());
    stack.push((root.clone(), 0));
    while let Some((node, child_idx)) = stack.last_mut() {
        let next = {
            let inner = node.inner.borrow();
            if *child_idx < inner.parents.len() {
                let p = inner.parents[*child_idx].clone();
                Some(p)
            } else {
                None
            }
        };
        match next {
            Some(p) => {
                *child_idx += 1;
                if visited.insert(p.id()) {
                    stack.push((p, 0));
                }
            }
            None => {
                order.push(node.clone());
                stack.pop();
            }
        }
    }

    for node in &order {
        node.zero_grad();
    }
    root.accumulate_grad(&Tensor::scalar(1.0));

    for node in order.iter().rev() {
        let inner = node.inner.borrow();
        if let (Some(back), Some(grad)) = (&inner.back, &inner.grad) {
            back(grad);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grad_of(v: &Var) -> Vec<f64> {
        v.grad().unwrap().data().to_vec()
    }

    #[test]
    fn abs_sign_rule() {
        let x = Var::leaf(Tensor::vector(vec![-2.0, 3.0]));
        let y = x.abs();
        assert_eq!(y.value().data(), &[2.0, 3.0]);
        let s = y.sum().unwrap();
        backward(&s).unwrap();
        assert_eq!(grad_of(&x), vec![-1.0, 1.0]);
    }

    #[test]
    fn abs_zero_subgradient() {
        let x = Var::leaf(Tensor::vector(vec![0.0]));
        let s = x.abs().sum().unwrap();
        backward(&s).unwrap();
        assert_eq!(grad_of(&x), vec![0.0]);
    }

    #[test]
    fn square_gradient() {
        let x = Var::leaf(Tensor::vector(vec![3.0]));
        let s = x.square().sum().unwrap();
        backward(&s).unwrap();
        assert_eq!(s.item(), 9.0);
        assert_eq!(grad_of(&x), vec![6.0]);
    }

    #[test]
    fn log_at_one() {
        let x = Var::leaf(Tensor::vector(vec![1.0]));
        let s = x.log().unwrap().sum().unwrap();
        backward(&s).unwrap();
        assert_eq!(s.item(), 0.0);
        assert_eq!(grad_of(&x), vec![1.0]);
    }

    #[test]
    fn log_rejects_nonpositive() {
        let x = Var::leaf(Tensor::vector(vec![-1.0]));
        assert!(x.log().is_err());
        let z = Var::leaf(Tensor::vector(vec![0.0]));
        assert!(z.log().is_err());
    }

    #[test]
    fn mean_distributes() {
        let x = Var::leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let m = x.mean().unwrap();
        assert_eq!(m.item(), 2.0);
        backward(&m).unwrap();
        assert_eq!(grad_of(&x), vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn max_routes_to_first_attainer() {
        let x = Var::leaf(Tensor::vector(vec![1.0, 5.0, 5.0]));
        let m = x.max().unwrap();
        assert_eq!(m.item(), 5.0);
        backward(&m).unwrap();
        assert_eq!(grad_of(&x), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn sum_of_empty_errors() {
        let x = Var::leaf(Tensor::new(vec![0], vec![]).unwrap());
        assert!(x.sum().is_err());
    }

    #[test]
    fn matmul_small() {
        let a = Var::leaf(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let b = Var::leaf(Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap());
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.value().data(), &[11.0]);
        let s = c.sum().unwrap();
        backward(&s).unwrap();
        assert_eq!(grad_of(&a), vec![3.0, 4.0]);
        assert_eq!(grad_of(&b), vec![1.0, 2.0]);
    }

    #[test]
    fn matmul_identity() {
        let eye = Var::leaf(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let a = Var::leaf(Tensor::matrix(2, 2, vec![0.5, -1.0, 2.0, 7.25]).unwrap());
        let c = eye.matmul(&a).unwrap();
        assert_eq!(c.value().data(), a.value().data());
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Var::leaf(Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap());
        let b = Var::leaf(Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap());
        assert!(a.matmul(&b).is_err());
    }

    #[test]
    fn elu_values_and_derivative() {
        let x = Var::leaf(Tensor::vector(vec![0.0, 1.0, -1.0]));
        let y = x.elu();
        let v = y.value();
        assert_eq!(v.data()[0], 0.0);
        assert_eq!(v.data()[1], 1.0);
        assert!((v.data()[2] - ((-1.0f64).exp() - 1.0)).abs() < 1e-15);
        let s = y.sum().unwrap();
        backward(&s).unwrap();
        let g = grad_of(&x);
        assert_eq!(g[0], 1.0); // derivative at 0 defined as 1
        assert_eq!(g[1], 1.0);
        assert!((g[2] - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn backward_requires_scalar_root() {
        let x = Var::leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(backward(&x).is_err());
    }

    #[test]
    fn constant_graph_zero_grads() {
        let x = Var::leaf(Tensor::vector(vec![1.0, 2.0]));
        let c = Var::scalar(5.0);
        // root depends on x only through a detached path
        let s = x.detach().sum().unwrap().add(&c).unwrap();
        backward(&s).unwrap();
        assert!(x.grad().is_none());
    }

    #[test]
    fn mean_square_composite() {
        // root = mean(square(x)), x = [1, 2] -> grad = [1, 2]
        let x = Var::leaf(Tensor::vector(vec![1.0, 2.0]));
        let root = x.square().mean().unwrap();
        backward(&root).unwrap();
        assert_eq!(grad_of(&x), vec![1.0, 2.0]);
    }

    #[test]
    fn shared_node_accumulates() {
        // y = x + x -> dy/dx = 2
        let x = Var::scalar(3.0);
        let y = x.add(&x).unwrap();
        backward(&y).unwrap();
        assert_eq!(grad_of(&x), vec![2.0]);
    }

    #[test]
    fn broadcast_scalar_tensor() {
        let x = Var::leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let c = Var::scalar(2.0);
        let y = x.mul(&c).unwrap();
        assert_eq!(y.value().data(), &[2.0, 4.0, 6.0]);
        let s = y.sum().unwrap();
        backward(&s).unwrap();
        assert_eq!(grad_of(&x), vec![2.0, 2.0, 2.0]);
        assert_eq!(grad_of(&c), vec![6.0]); // sum of the other operand
    }

    #[test]
    fn broadcast_rejects_unequal_nonscalar() {
        let x = Var::leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let y = Var::leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(x.add(&y).is_err());
    }

    #[test]
    fn repeated_backward_resets_grads() {
        let x = Var::leaf(Tensor::vector(vec![1.0, 2.0]));
        let s = x.square().mean().unwrap();
        backward(&s).unwrap();
        let g1 = grad_of(&x);
        backward(&s).unwrap();
        let g2 = grad_of(&x);
        assert_eq!(g1, g2);
    }

    #[test]
    fn div_by_zero_rejected() {
        let x = Var::scalar(1.0);
        let z = Var::scalar(0.0);
        assert!(x.div(&z).is_err());
    }

    #[test]
    fn bit_identical_reruns() {
        let build = || {
            let x = Var::leaf(Tensor::vector(vec![0.3, -0.7, 1.9]));
            let y = Var::leaf(Tensor::vector(vec![1.1, 0.2, -0.4]));
            let d = x.sub(&y).unwrap();
            let loss = d
                .square()
                .mean()
                .unwrap()
                .add(&d.abs().mean().unwrap())
                .unwrap();
            backward(&loss).unwrap();
            (loss.item(), x.grad().unwrap().data().to_vec())
        };
        let (v1, g1) = build();
        let (v2, g2) = build();
        assert_eq!(v1.to_bits(), v2.to_bits());
        for (a, b) in g1.iter().zip(g2.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
