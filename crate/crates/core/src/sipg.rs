//! Mass matrix, symmetric interior penalty stiffness, and the Ritz projection.
//!
//! All basis functions are real, so every operator here is a real matrix that
//! acts on complex fields componentwise. Entry `(i, j)` of the stiffness is
//! `a_h(φ_j, φ_i)`, so `(A u, v) = a_h(u, v)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{ComplexField, DGSpace};
use crate::mesh::Point;
use crate::sparse::{self, SparseOperator};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SipgConfig {
    /// Penalty parameter λ.
    pub penalty: f64,
}

impl SipgConfig {
    /// `λ = 10 (k + 1)²`.
    pub fn default_for_degree(k: usize) -> Self {
        SipgConfig { penalty: default_penalty(k) }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.penalty.is_finite() && self.penalty > 0.0) {
            return Err(Error::InvalidInput(format!("penalty must be positive, got {}", self.penalty)));
        }
        Ok(())
    }
}

pub fn default_penalty(k: usize) -> f64 {
    10.0 * ((k + 1) * (k + 1)) as f64
}

/// Block-diagonal mass matrix `M_ij = ∫ φ_i φ_j`.
pub fn assemble_mass(space: &DGSpace) -> SparseOperator {
    let nb = space.dofs_per_element();
    let mut triplets = Vec::with_capacity(space.mesh().num_elements() * nb * nb);
    for e in 0..space.mesh().num_elements() {
        let s = space.element_dofs(e).start;
        push_block(&mut triplets, s, s, nb, nb, &local_mass(space, e));
    }
    let mut m = SparseOperator::from_triplets(space.num_dofs(), space.num_dofs(), triplets);
    m.symmetric = true;
    m
}

/// Element-local mass matrix of element `e`, row major.
pub fn local_mass(space: &DGSpace, e: usize) -> Vec<f64> {
    let nb = space.dofs_per_element();
    let quad = space.volume_quadrature();
    let det = space.geometry(e).det;
    let mut local = vec![0.0; nb * nb];
    for (q, &w) in quad.rule.weights.iter().enumerate() {
        let phi = quad.table.values_at(q);
        for i in 0..nb {
            for j in 0..nb {
                local[i * nb + j] += w * det * phi[i] * phi[j];
            }
        }
    }
    local
}

/// Weights applied to each edge term. `jump_penalty` scales `∫[v][w]/h_E`;
/// `consistency` switches the two `{∇v}·n [w]` terms on or off.
struct EdgeWeights {
    jump_penalty: f64,
    consistency: bool,
}

fn assemble_broken(space: &DGSpace, weights: EdgeWeights) -> SparseOperator {
    let mesh = space.mesh();
    let nb = space.dofs_per_element();
    let quad = space.volume_quadrature();
    let mut triplets = Vec::with_capacity(mesh.num_elements() * nb * nb + mesh.num_edges() * 4 * nb * nb);

    let mut grads = vec![[0.0; 2]; nb];
    for e in 0..mesh.num_elements() {
        let geo = space.geometry(e);
        let mut local = vec![0.0; nb * nb];
        for (q, &w) in quad.rule.weights.iter().enumerate() {
            for (g, &gr) in grads.iter_mut().zip(quad.table.gradients_at(q)) {
                *g = geo.physical_gradient(gr);
            }
            let wq = w * geo.det;
            for i in 0..nb {
                for j in 0..nb {
                    local[i * nb + j] += wq * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]);
                }
            }
        }
        let s = space.element_dofs(e).start;
        push_block(&mut triplets, s, s, nb, nb, &local);
    }

    let eq = space.edge_quadrature();
    for edge in &mesh.edges {
        // (trace, jump sign, average weight)
        let sides: Vec<_> = match edge.right {
            Some(r) => vec![(edge.left, 1.0, 0.5), (r, -1.0, 0.5)],
            None => vec![(edge.left, 1.0, 1.0)],
        };
        let n = edge.normal;
        let h = edge.length;
        let ns = sides.len();
        let dim = ns * nb;
        let mut local = vec![0.0; dim * dim];
        let mut phi = vec![0.0; dim];
        let mut dn = vec![0.0; dim];
        let mut sigma = vec![0.0; dim];
        let mut omega = vec![0.0; dim];
        for (q, &w) in eq.rule.weights.iter().enumerate() {
            for (a, (trace, sg, om)) in sides.iter().enumerate() {
                let tab = eq.table(trace);
                let geo = space.geometry(trace.element);
                for (j, (&v, &g)) in tab.values_at(q).iter().zip(tab.gradients_at(q)).enumerate() {
                    let gp = geo.physical_gradient(g);
                    phi[a * nb + j] = v;
                    dn[a * nb + j] = gp[0] * n[0] + gp[1] * n[1];
                    sigma[a * nb + j] = *sg;
                    omega[a * nb + j] = *om;
                }
            }
            let ds = w * h;
            for i in 0..dim {
                for j in 0..dim {
                    let mut val = weights.jump_penalty / h * sigma[i] * sigma[j] * phi[i] * phi[j];
                    if weights.consistency {
                        val -= omega[j] * dn[j] * sigma[i] * phi[i] + sigma[j] * phi[j] * omega[i] * dn[i];
                    }
                    local[i * dim + j] += ds * val;
                }
            }
        }
        for (a, (ta, _, _)) in sides.iter().enumerate() {
            for (b, (tb, _, _)) in sides.iter().enumerate() {
                let block: Vec<f64> = (0..nb)
                    .flat_map(|i| (0..nb).map(move |j| (i, j)))
                    .map(|(i, j)| local[(a * nb + i) * dim + b * nb + j])
                    .collect();
                push_block(
                    &mut triplets,
                    space.element_dofs(ta.element).start,
                    space.element_dofs(tb.element).start,
                    nb,
                    nb,
                    &block,
                );
            }
        }
    }
    let mut a = SparseOperator::from_triplets(space.num_dofs(), space.num_dofs(), triplets);
    a.symmetric = true;
    a
}

/// SIPG stiffness `A` with `(A u, v) = a_h(u, v)`.
pub fn assemble_stiffness(space: &DGSpace, cfg: &SipgConfig) -> Result<SparseOperator> {
    cfg.validate()?;
    Ok(assemble_broken(space, EdgeWeights { jump_penalty: cfg.penalty, consistency: true }))
}

/// Gram matrix of the DG inner product (broken gradients plus `h_E`-weighted jumps).
pub fn assemble_dg_inner_product(space: &DGSpace) -> SparseOperator {
    assemble_broken(space, EdgeWeights { jump_penalty: 1.0, consistency: false })
}

fn push_block(t: &mut Vec<(usize, usize, f64)>, r0: usize, c0: usize, nr: usize, nc: usize, vals: &[f64]) {
    for i in 0..nr {
        for j in 0..nc {
            t.push((r0 + i, c0 + j, vals[i * nc + j]));
        }
    }
}

/// Ritz projection with a pre-assembled stiffness: `a_h(R_h u, v) = -(Δu, v)`.
pub fn ritz_project_with(
    space: &DGSpace,
    stiffness: &SparseOperator,
    laplacian: impl Fn(Point) -> Complex64,
) -> Result<ComplexField> {
    let b = space.load_vector(|p| -laplacian(p));
    if b.iter().all(|v| *v == Complex64::new(0.0, 0.0)) {
        return Ok(ComplexField::zeros(space));
    }
    let re: Vec<f64> = b.iter().map(|c| c.re).collect();
    let im: Vec<f64> = b.iter().map(|c| c.im).collect();
    let sol = sparse::solve_spd(stiffness, &[re, im])?;
    let coeffs = sol[0].iter().zip(&sol[1]).map(|(&r, &i)| Complex64::new(r, i)).collect();
    ComplexField::from_coeffs(space, coeffs)
}

pub fn ritz_project(space: &DGSpace, cfg: &SipgConfig, laplacian: impl Fn(Point) -> Complex64) -> Result<ComplexField> {
    let a = assemble_stiffness(space, cfg)?;
    ritz_project_with(space, &a, laplacian)
}

/// Extreme eigenvalues `(μ_min, μ_max)` of `A x = μ B x` with `B` the DG Gram matrix.
///
/// Dense; meant for diagnostics on small meshes.
pub fn coercivity_bounds(space: &DGSpace, stiffness: &SparseOperator) -> Result<(f64, f64)> {
    use faer::{Mat, Side};

    let gram = assemble_dg_inner_product(space);
    let n = space.num_dofs();
    let b = Mat::from_fn(n, n, |i, j| gram.get(i, j));
    let llt = b
        .llt(Side::Lower)
        .map_err(|e| Error::LinearSolveFailed(format!("DG Gram matrix not positive definite: {e:?}")))?;
    let l = llt.L();
    // C = L^{-1} A L^{-T}
    let mut c = Mat::from_fn(n, n, |i, j| stiffness.get(i, j));
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(l, c.as_mut(), faer::Par::Seq);
    let mut ct = c.transpose().to_owned();
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(l, ct.as_mut(), faer::Par::Seq);
    let sym = Mat::from_fn(n, n, |i, j| 0.5 * (ct[(i, j)] + ct[(j, i)]));
    let eig = sym
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::LinearSolveFailed(format!("eigensolve failed: {e:?}")))?;
    Ok((eig[0], eig[n - 1]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{Mesh, Rect};
    use std::sync::Arc;

    fn space(n: usize, k: usize) -> DGSpace {
        DGSpace::new(Arc::new(Mesh::build_structured(Rect::unit_square(), n).unwrap()), k).unwrap()
    }

    fn ones(s: &DGSpace) -> ComplexField {
        s.interpolate(|_| Complex64::new(1.0, 0.0))
    }

    #[test]
    fn mass_of_constant_is_area() {
        let s = space(3, 2);
        let m = assemble_mass(&s);
        let one = ones(&s);
        assert!((m.form(&one.coeffs, &one.coeffs).re - 1.0).abs() < 1e-13);
    }

    #[test]
    fn p1_local_mass_matches_closed_form() {
        let s = space(1, 1);
        let area = 0.5;
        let local = local_mass(&s, 0);
        for i in 0..3 {
            for j in 0..3 {
                let expect = area / 12.0 * if i == j { 2.0 } else { 1.0 };
                assert!((local[i * 3 + j] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn constant_energy_is_four_lambda() {
        for k in 1..=3 {
            let s = space(1, k);
            let cfg = SipgConfig { penalty: 7.5 };
            let a = assemble_stiffness(&s, &cfg).unwrap();
            let one = ones(&s);
            let val = a.form(&one.coeffs, &one.coeffs);
            assert!((val.re - 30.0).abs() < 1e-11, "k={k}: {val}");
            assert!(val.im.abs() < 1e-14);
        }
    }

    #[test]
    fn stiffness_symmetric() {
        let s = space(4, 3);
        let a = assemble_stiffness(&s, &SipgConfig::default_for_degree(3)).unwrap();
        assert!(a.max_asymmetry() <= 1e-12);
    }

    #[test]
    fn rejects_nonpositive_penalty() {
        let s = space(1, 1);
        assert!(assemble_stiffness(&s, &SipgConfig { penalty: 0.0 }).is_err());
        assert!(assemble_stiffness(&s, &SipgConfig { penalty: f64::NAN }).is_err());
    }

    #[test]
    fn ritz_of_zero_is_zero() {
        let s = space(2, 1);
        let r = ritz_project(&s, &SipgConfig::default_for_degree(1), |_| Complex64::new(0.0, 0.0)).unwrap();
        assert!(r.coeffs.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn tiny_penalty_is_indefinite() {
        let s = space(2, 2);
        let a = assemble_stiffness(&s, &SipgConfig { penalty: 0.01 }).unwrap();
        let (lo, _) = coercivity_bounds(&s, &a).unwrap();
        assert!(lo < 0.0);
    }
}
