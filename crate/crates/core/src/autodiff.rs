//! Tape-based reverse-mode differentiation over scalars and dense vectors.
//!
//! Every operation appends one node to a [`Tape`]. A node stores its forward
//! value together with the local partial derivative towards each of its
//! inputs, so the backward pass is a single reverse sweep that accumulates
//! `adjoint[input] += adjoint[node] * partial`. Nodes can only reference
//! nodes that already exist, which rules out cycles by construction.
//!
//! ```
//! use camofs_core::autodiff::{Tape, Vector};
//!
//! let mut tape = Tape::new();
//! let x = tape.var_vec(&Vector::new(vec![1.0, 2.0]).unwrap());
//! let y = tape.dot(&x, &x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(tape.value(y), 5.0);
//! assert_eq!(grads.wrt_vec(&x), vec![2.0, 4.0]);
//! ```

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Dense, finite, non-empty real vector. This is the gradient-free value type
/// used for stored features and inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(elems: Vec<f64>) -> Result<Self> {
        if elems.is_empty() {
            return Err(Error::Empty("vector"));
        }
        if elems.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("vector"));
        }
        Ok(Vector(elems))
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        Vector::new(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Unit-length copy. Errors on the zero vector.
    pub fn normalized(&self) -> Result<Vector> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::ZeroNorm);
        }
        Ok(Vector(self.0.iter().map(|v| v / n).collect()))
    }

    pub fn scaled(&self, factor: f64) -> Result<Vector> {
        Vector::new(self.0.iter().map(|v| v * factor).collect())
    }

    /// Elementwise mean of a non-empty set of equal-length vectors.
    pub fn mean_of(vectors: &[Vector]) -> Result<Vector> {
        let first = vectors.first().ok_or(Error::Empty("vector set"))?;
        let mut acc = vec![0.0; first.dim()];
        for v in vectors {
            ensure_dim(first.dim(), v.dim())?;
            for (a, x) in acc.iter_mut().zip(&v.0) {
                *a += x;
            }
        }
        let n = vectors.len() as f64;
        Vector::new(acc.into_iter().map(|a| a / n).collect())
    }
}

impl TryFrom<Vec<f64>> for Vector {
    type Error = Error;

    fn try_from(value: Vec<f64>) -> Result<Self> {
        Vector::new(value)
    }
}

impl From<Vector> for Vec<f64> {
    fn from(v: Vector) -> Self {
        v.0
    }
}

pub(crate) fn ensure_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// Handle to a scalar node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    idx: usize,
}

/// A vector living on a tape, one node per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct VarVec(Vec<Var>);

impl VarVec {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn elems(&self) -> &[Var] {
        &self.0
    }
}

impl From<Vec<Var>> for VarVec {
    fn from(v: Vec<Var>) -> Self {
        VarVec(v)
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    value: f64,
    start: usize,
    end: usize,
}

/// Single-writer recording of a computation. Distinct tapes share nothing and
/// may live on different threads.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    edges: Vec<(usize, f64)>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            edges: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: f64, parents: impl IntoIterator<Item = (Var, f64)>) -> Var {
        let start = self.edges.len();
        for (p, w) in parents {
            debug_assert_eq!(p.tape, self.id);
            self.edges.push((p.idx, w));
        }
        let idx = self.nodes.len();
        self.nodes.push(Node {
            value,
            start,
            end: self.edges.len(),
        });
        Var { tape: self.id, idx }
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(())
    }

    fn check_all(&self, vs: &[Var]) -> Result<()> {
        vs.iter().try_for_each(|&v| self.check(v))
    }

    /// New leaf.
    pub fn var(&mut self, value: f64) -> Var {
        self.push(value, [])
    }

    pub fn constant(&mut self, value: f64) -> Var {
        self.var(value)
    }

    pub fn var_vec(&mut self, v: &Vector) -> VarVec {
        VarVec(v.as_slice().iter().map(|&x| self.var(x)).collect())
    }

    pub fn value(&self, v: Var) -> f64 {
        self.nodes[v.idx].value
    }

    /// Detached copy of a tape vector's current values.
    pub fn values(&self, v: &VarVec) -> Result<Vector> {
        self.check_all(&v.0)?;
        Vector::new(v.0.iter().map(|&x| self.value(x)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, [(a, 1.0), (b, 1.0)])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, [(a, 1.0), (b, -1.0)])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        self.push(x * y, [(a, y), (b, x)])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        self.push(x / y, [(a, 1.0 / y), (b, -x / (y * y))])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, [(a, c)])
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) + c;
        self.push(v, [(a, 1.0)])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).exp();
        self.push(v, [(a, v)])
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let x = self.value(a);
        self.push(x.ln(), [(a, 1.0 / x)])
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).sqrt();
        self.push(v, [(a, 0.5 / v)])
    }

    /// `max(a, 0)`, with derivative 0 at exactly zero.
    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        if x > 0.0 {
            self.push(x, [(a, 1.0)])
        } else {
            self.push(0.0, [(a, 0.0)])
        }
    }

    pub fn sum(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::Empty("sum"));
        }
        self.check_all(xs)?;
        let v = xs.iter().map(|&x| self.value(x)).sum();
        Ok(self.push(v, xs.iter().map(|&x| (x, 1.0))))
    }

    pub fn mean(&mut self, xs: &[Var]) -> Result<Var> {
        let s = self.sum(xs)?;
        Ok(self.scale(s, 1.0 / xs.len() as f64))
    }

    /// Σ aᵢbᵢ.
    pub fn dot(&mut self, a: &VarVec, b: &VarVec) -> Result<Var> {
        ensure_dim(a.dim(), b.dim())?;
        if a.dim() == 0 {
            return Err(Error::Empty("dot"));
        }
        self.check_all(&a.0)?;
        self.check_all(&b.0)?;
        let mut v = 0.0;
        for (&x, &y) in a.0.iter().zip(&b.0) {
            v += self.value(x) * self.value(y);
        }
        let parents: Vec<(Var, f64)> =
            a.0.iter()
                .zip(&b.0)
                .flat_map(|(&x, &y)| [(x, self.value(y)), (y, self.value(x))])
                .collect();
        Ok(self.push(v, parents))
    }

    pub fn norm(&mut self, a: &VarVec) -> Result<Var> {
        let sq = self.dot(a, a)?;
        if self.value(sq) == 0.0 {
            return Err(Error::ZeroNorm);
        }
        Ok(self.sqrt(sq))
    }

    /// `a / ‖a‖`. Errors on the zero vector.
    pub fn normalize(&mut self, a: &VarVec) -> Result<VarVec> {
        let n = self.norm(a)?;
        Ok(VarVec(a.0.iter().map(|&x| self.div(x, n)).collect()))
    }

    /// `1 − a·b / (‖a‖‖b‖)`, in [0, 2].
    pub fn cosine_distance(&mut self, a: &VarVec, b: &VarVec) -> Result<Var> {
        ensure_dim(a.dim(), b.dim())?;
        let na = self.norm(a)?;
        let nb = self.norm(b)?;
        let ab = self.dot(a, b)?;
        let denom = self.mul(na, nb);
        let cos = self.div(ab, denom);
        let neg = self.neg(cos);
        Ok(self.add_const(neg, 1.0))
    }

    /// `ln Σ exp(xᵢ)` with max-shift, so large inputs do not overflow.
    pub fn log_sum_exp(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::Empty("log_sum_exp"));
        }
        self.check_all(xs)?;
        let vals: Vec<f64> = xs.iter().map(|&x| self.value(x)).collect();
        let m = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let shifted: Vec<f64> = vals.iter().map(|v| (v - m).exp()).collect();
        let total: f64 = shifted.iter().sum();
        let v = m + total.ln();
        Ok(self.push(v, xs.iter().zip(&shifted).map(|(&x, s)| (x, s / total))))
    }

    /// Elementwise mean of equal-length tape vectors.
    pub fn vec_mean(&mut self, vs: &[VarVec]) -> Result<VarVec> {
        let first = vs.first().ok_or(Error::Empty("vector set"))?;
        let dim = first.dim();
        for v in vs {
            ensure_dim(dim, v.dim())?;
        }
        (0..dim)
            .map(|k| {
                let col: Vec<Var> = vs.iter().map(|v| v.0[k]).collect();
                self.mean(&col)
            })
            .collect::<Result<Vec<_>>>()
            .map(VarVec)
    }

    /// `W x` for a row-major `rows × x.dim()` weight matrix.
    pub fn matvec(&mut self, weights: &[Var], rows: usize, x: &VarVec) -> Result<VarVec> {
        ensure_dim(rows * x.dim(), weights.len())?;
        weights
            .chunks(x.dim())
            .map(|row| self.dot(&VarVec(row.to_vec()), x))
            .collect::<Result<Vec<_>>>()
            .map(VarVec)
    }

    /// Reverse sweep from `root`. Every node recorded before `root` gets its
    /// adjoint ∂root/∂node.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        self.check(root)?;
        let mut adj = vec![0.0; root.idx + 1];
        adj[root.idx] = 1.0;
        for i in (0..=root.idx).rev() {
            let g = adj[i];
            if g == 0.0 {
                continue;
            }
            let node = self.nodes[i];
            for &(p, w) in &self.edges[node.start..node.end] {
                adj[p] += g * w;
            }
        }
        Ok(Gradients { tape: self.id, adj })
    }
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    tape: u64,
    adj: Vec<f64>,
}

impl Gradients {
    /// ∂root/∂v; zero for nodes recorded after the root or on another tape.
    pub fn wrt(&self, v: Var) -> f64 {
        if v.tape != self.tape {
            return 0.0;
        }
        self.adj.get(v.idx).copied().unwrap_or(0.0)
    }

    pub fn wrt_vec(&self, v: &VarVec) -> Vec<f64> {
        v.0.iter().map(|&x| self.wrt(x)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vec(xs: &[f64]) -> Vector {
        Vector::new(xs.to_vec()).unwrap()
    }

    #[test]
    fn dot_trivial_cases() {
        let mut t = Tape::new();
        let a = t.var_vec(&vec(&[1.0, 0.0]));
        let d = t.dot(&a, &a).unwrap();
        assert_eq!(t.value(d), 1.0);
        let a = t.var_vec(&vec(&[1.0, 2.0]));
        let b = t.var_vec(&vec(&[3.0, 4.0]));
        let d = t.dot(&a, &b).unwrap();
        assert_eq!(t.value(d), 11.0);
    }

    #[test]
    fn dot_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut expected = 0.0;
        for i in 0..8 {
            expected += a[i] * b[i];
        }
        let mut t = Tape::new();
        let va = t.var_vec(&vec(&a));
        let vb = t.var_vec(&vec(&b));
        let d = t.dot(&va, &vb).unwrap();
        assert_abs_diff_eq!(t.value(d), expected, epsilon = 1e-12);
    }

    #[test]
    fn dot_dimension_mismatch() {
        let mut t = Tape::new();
        let a = t.var_vec(&vec(&[1.0, 0.0]));
        let b = t.var_vec(&vec(&[1.0, 0.0, 3.0]));
        assert!(matches!(
            t.dot(&a, &b),
            Err(Error::DimensionMismatch {
                expected: 2,
                actual: 3
            })
        ));
    }

    #[test]
    fn cosine_distance_trivial_cases() {
        let mut t = Tape::new();
        let e1 = t.var_vec(&vec(&[1.0, 0.0]));
        let e2 = t.var_vec(&vec(&[0.0, 1.0]));
        let m1 = t.var_vec(&vec(&[-1.0, 0.0]));
        let same = t.cosine_distance(&e1, &e1).unwrap();
        let orth = t.cosine_distance(&e1, &e2).unwrap();
        let anti = t.cosine_distance(&e1, &m1).unwrap();
        assert_eq!(t.value(same), 0.0);
        assert_eq!(t.value(orth), 1.0);
        assert_eq!(t.value(anti), 2.0);
    }

    #[test]
    fn cosine_distance_rejects_zero_norm() {
        let mut t = Tape::new();
        let z = t.var_vec(&vec(&[0.0, 0.0]));
        let e1 = t.var_vec(&vec(&[1.0, 0.0]));
        assert!(matches!(t.cosine_distance(&z, &e1), Err(Error::ZeroNorm)));
        assert!(matches!(t.cosine_distance(&e1, &z), Err(Error::ZeroNorm)));
    }

    #[test]
    fn log_sum_exp_cases() {
        let mut t = Tape::new();
        let z = t.var(0.0);
        let l = t.log_sum_exp(&[z]).unwrap();
        assert_eq!(t.value(l), 0.0);

        let a = t.var(-3.25);
        let l = t.log_sum_exp(&[a, a]).unwrap();
        assert_abs_diff_eq!(t.value(l), -3.25 + 2f64.ln(), epsilon = 1e-12);

        let big = t.var(1000.0);
        let l = t.log_sum_exp(&[big, big]).unwrap();
        assert!(t.value(l).is_finite());
        assert_abs_diff_eq!(t.value(l), 1000.0 + 2f64.ln(), epsilon = 1e-9);

        assert!(matches!(t.log_sum_exp(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn backward_quadratic_form() {
        let mut t = Tape::new();
        let x = t.var_vec(&vec(&[1.0, 2.0]));
        let y = t.dot(&x, &x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt_vec(&x), vec![2.0, 4.0]);
    }

    #[test]
    fn backward_constant_root() {
        let mut t = Tape::new();
        let x = t.var(3.0);
        let c = t.constant(5.0);
        let g = t.backward(c).unwrap();
        assert_eq!(g.wrt(x), 0.0);
        assert_eq!(g.wrt(c), 1.0);
    }

    #[test]
    fn backward_rejects_foreign_var() {
        let mut a = Tape::new();
        let b = Tape::new();
        let x = a.var(1.0);
        assert!(matches!(b.backward(x), Err(Error::ForeignVar)));
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut t = Tape::new();
        let x = t.var(0.0);
        let r = t.relu(x);
        assert_eq!(t.backward(r).unwrap().wrt(x), 0.0);
    }

    #[test]
    fn matvec_identity() {
        let mut t = Tape::new();
        let w: Vec<Var> = [1.0, 0.0, 0.0, 1.0].iter().map(|&v| t.var(v)).collect();
        let x = t.var_vec(&vec(&[3.0, -2.0]));
        let y = t.matvec(&w, 2, &x).unwrap();
        assert_eq!(t.values(&y).unwrap().as_slice(), &[3.0, -2.0]);
    }

    #[test]
    fn vector_rejects_non_finite_and_empty() {
        assert!(Vector::new(vec![]).is_err());
        assert!(Vector::new(vec![f64::NAN]).is_err());
        assert!(serde_json::from_str::<Vector>("[]").is_err());
    }
}
