//! Nodal Lagrange basis of `P_k` on the reference triangle.

use faer::linalg::solvers::DenseSolveCore;
use faer::Mat;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceBasis {
    degree: usize,
    /// Principal lattice nodes `(i/k, j/k)`, `i + j <= k`.
    nodes: Vec<[f64; 2]>,
    exponents: Vec<(i32, i32)>,
    /// `coeffs[m * n + j]`: coefficient of monomial `m` in basis function `j`.
    coeffs: Vec<f64>,
}

pub fn dofs_per_element(degree: usize) -> usize {
    (degree + 1) * (degree + 2) / 2
}

impl ReferenceBasis {
    pub fn new(degree: usize) -> Result<Self> {
        if degree == 0 {
            return Err(Error::InvalidInput("polynomial degree must be >= 1".into()));
        }
        let k = degree as f64;
        let mut nodes = Vec::new();
        let mut exponents = Vec::new();
        for j in 0..=degree {
            for i in 0..=(degree - j) {
                nodes.push([i as f64 / k, j as f64 / k]);
                exponents.push((i as i32, j as i32));
            }
        }
        let n = nodes.len();
        let vandermonde = Mat::from_fn(n, n, |i, m| {
            let (a, b) = exponents[m];
            nodes[i][0].powi(a) * nodes[i][1].powi(b)
        });
        let inv = vandermonde.partial_piv_lu().inverse();
        let coeffs = (0..n * n).map(|idx| inv[(idx / n, idx % n)]).collect();
        Ok(ReferenceBasis { degree, nodes, exponents, coeffs })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn values_into(&self, p: [f64; 2], out: &mut [f64]) {
        let n = self.len();
        out[..n].fill(0.0);
        for (m, &(a, b)) in self.exponents.iter().enumerate() {
            let mono = p[0].powi(a) * p[1].powi(b);
            let row = &self.coeffs[m * n..(m + 1) * n];
            for (o, c) in out.iter_mut().zip(row) {
                *o += c * mono;
            }
        }
    }

    pub fn values(&self, p: [f64; 2]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.values_into(p, &mut out);
        out
    }

    /// Reference gradients `(∂/∂ξ, ∂/∂η)`.
    pub fn gradients_into(&self, p: [f64; 2], out: &mut [[f64; 2]]) {
        let n = self.len();
        out[..n].fill([0.0; 2]);
        for (m, &(a, b)) in self.exponents.iter().enumerate() {
            let dx = if a > 0 { a as f64 * p[0].powi(a - 1) * p[1].powi(b) } else { 0.0 };
            let dy = if b > 0 { b as f64 * p[0].powi(a) * p[1].powi(b - 1) } else { 0.0 };
            let row = &self.coeffs[m * n..(m + 1) * n];
            for (o, c) in out.iter_mut().zip(row) {
                o[0] += c * dx;
                o[1] += c * dy;
            }
        }
    }

    pub fn gradients(&self, p: [f64; 2]) -> Vec<[f64; 2]> {
        let mut out = vec![[0.0; 2]; self.len()];
        self.gradients_into(p, &mut out);
        out
    }
}
