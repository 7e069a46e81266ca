//! The interface between transcribed programs and the solver.
//!
//! A program is `min f(x)` subject to `c(x) = 0`, `g(x) <= 0` and simple
//! variable bounds `lower <= x <= upper` (entries may be infinite).

use crate::linalg::{BandMatrix, SparseRows};

/// Everything the solver needs at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub objective: f64,
    pub eq: Vec<f64>,
    pub ineq: Vec<f64>,
    /// Present when derivatives were requested.
    pub derivatives: Option<Derivatives>,
}

/// First derivatives of an [`Evaluation`].
#[derive(Debug, Clone, PartialEq)]
pub struct Derivatives {
    pub gradient: Vec<f64>,
    pub jac_eq: SparseRows,
    pub jac_ineq: SparseRows,
}

/// A smooth nonlinear program with analytic first derivatives.
pub trait Nlp: Sync {
    fn n_vars(&self) -> usize;
    fn n_eq(&self) -> usize;
    fn n_ineq(&self) -> usize;

    /// Lower and upper variable bounds.
    fn bounds(&self) -> (&[f64], &[f64]);

    /// Evaluates at `x`, whose length the caller guarantees to be
    /// [`Nlp::n_vars`].
    fn evaluate(&self, x: &[f64], derivatives: bool) -> Evaluation;

    /// A constant positive semidefinite model of the objective Hessian. The
    /// solver uses it to precondition its quasi-Newton steps and to choose
    /// the objective scale.
    fn objective_curvature(&self) -> Option<BandMatrix> {
        None
    }

    /// Adds a positive semidefinite approximation of
    /// `sum_k w_eq[k] * hess c_k(x)` to `out`. The solver calls it with its
    /// current multiplier estimates to sharpen the preconditioner; the
    /// default adds nothing, which suits linear constraints.
    fn add_constraint_curvature(&self, _x: &[f64], _w_eq: &[f64], _out: &mut BandMatrix) {}
}

/// A dense quadratic program `min 1/2 x^T Q x + q^T x` subject to
/// `A x = b` and `C x <= d`; used for solver tests and examples.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseQp {
    pub q_mat: Vec<Vec<f64>>,
    pub q_vec: Vec<f64>,
    pub a_eq: Vec<Vec<f64>>,
    pub b_eq: Vec<f64>,
    pub c_in: Vec<Vec<f64>>,
    pub d_in: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DenseQp {
    /// Unconstrained and unbounded problem with the given quadratic part.
    pub fn new(q_mat: Vec<Vec<f64>>, q_vec: Vec<f64>) -> Self {
        let n = q_vec.len();
        Self {
            q_mat,
            q_vec,
            a_eq: Vec::new(),
            b_eq: Vec::new(),
            c_in: Vec::new(),
            d_in: Vec::new(),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    fn rows(mat: &[Vec<f64>], n: usize) -> SparseRows {
        let mut j = SparseRows::new(n);
        for row in mat {
            let entries: Vec<(usize, f64)> = row
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(k, v)| (k, *v))
                .collect();
            j.push_row(&entries);
        }
        j
    }

    fn affine(mat: &[Vec<f64>], rhs: &[f64], x: &[f64]) -> Vec<f64> {
        mat.iter()
            .zip(rhs)
            .map(|(row, r)| row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - r)
            .collect()
    }
}

impl Nlp for DenseQp {
    fn n_vars(&self) -> usize {
        self.q_vec.len()
    }

    fn n_eq(&self) -> usize {
        self.b_eq.len()
    }

    fn n_ineq(&self) -> usize {
        self.d_in.len()
    }

    fn bounds(&self) -> (&[f64], &[f64]) {
        (&self.lower, &self.upper)
    }

    fn evaluate(&self, x: &[f64], derivatives: bool) -> Evaluation {
        let n = x.len();
        let qx: Vec<f64> = self
            .q_mat
            .iter()
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect();
        let objective = 0.5 * qx.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            + self.q_vec.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        Evaluation {
            objective,
            eq: Self::affine(&self.a_eq, &self.b_eq, x),
            ineq: Self::affine(&self.c_in, &self.d_in, x),
            derivatives: derivatives.then(|| Derivatives {
                gradient: qx.iter().zip(&self.q_vec).map(|(a, b)| a + b).collect(),
                jac_eq: Self::rows(&self.a_eq, n),
                jac_ineq: Self::rows(&self.c_in, n),
            }),
        }
    }

    fn objective_curvature(&self) -> Option<BandMatrix> {
        let n = self.n_vars();
        let mut b = BandMatrix::zeros(n, n.saturating_sub(1));
        for i in 0..n {
            for j in 0..=i {
                b.add(i, j, self.q_mat[i][j]);
            }
        }
        Some(b)
    }
}
