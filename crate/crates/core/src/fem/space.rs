//! The broken polynomial space `V_h^k` and its discrete functions.

use std::ops::Range;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::basis::ReferenceBasis;
use super::quadrature::{LineRule, TriangleRule};
use crate::error::{Error, Result};
use crate::mesh::{Mesh, Point};

/// Basis values and reference gradients tabulated at the points of a rule.
#[derive(Debug, Clone)]
pub struct Tabulation {
    pub values: Vec<f64>,
    pub gradients: Vec<[f64; 2]>,
    pub nbasis: usize,
}

impl Tabulation {
    fn new(basis: &ReferenceBasis, points: impl Iterator<Item = [f64; 2]>) -> Self {
        let nbasis = basis.len();
        let mut values = Vec::new();
        let mut gradients = Vec::new();
        for p in points {
            let start = values.len();
            values.resize(start + nbasis, 0.0);
            gradients.resize(start + nbasis, [0.0; 2]);
            basis.values_into(p, &mut values[start..]);
            basis.gradients_into(p, &mut gradients[start..]);
        }
        Tabulation { values, gradients, nbasis }
    }

    pub fn values_at(&self, q: usize) -> &[f64] {
        &self.values[q * self.nbasis..(q + 1) * self.nbasis]
    }

    pub fn gradients_at(&self, q: usize) -> &[[f64; 2]] {
        &self.gradients[q * self.nbasis..(q + 1) * self.nbasis]
    }
}

/// Affine map data of one element.
#[derive(Debug, Clone, Copy)]
pub struct ElementGeometry {
    /// Jacobian determinant of the reference map (twice the area).
    pub det: f64,
    /// Inverse-transpose Jacobian, row major.
    pub inv_t: [[f64; 2]; 2],
}

impl ElementGeometry {
    fn new(mesh: &Mesh, e: usize) -> Self {
        let [p0, p1, p2] = mesh.element_points(e);
        let j = [[p1[0] - p0[0], p2[0] - p0[0]], [p1[1] - p0[1], p2[1] - p0[1]]];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        let inv_t = [[j[1][1] / det, -j[1][0] / det], [-j[0][1] / det, j[0][0] / det]];
        ElementGeometry { det, inv_t }
    }

    #[inline]
    pub fn physical_gradient(&self, g: [f64; 2]) -> [f64; 2] {
        [self.inv_t[0][0] * g[0] + self.inv_t[0][1] * g[1], self.inv_t[1][0] * g[0] + self.inv_t[1][1] * g[1]]
    }

    pub fn area(&self) -> f64 {
        0.5 * self.det
    }
}

/// Quadrature rule on one set of points together with the basis tabulated there.
#[derive(Debug, Clone)]
pub struct VolumeQuadrature {
    pub rule: TriangleRule,
    pub table: Tabulation,
}

#[derive(Debug, Clone)]
pub struct EdgeQuadrature {
    pub rule: LineRule,
    /// Indexed by `2 * local_edge + reversed`.
    pub tables: Vec<Tabulation>,
}

impl EdgeQuadrature {
    fn new(basis: &ReferenceBasis, rule: LineRule) -> Self {
        let mut tables = Vec::with_capacity(6);
        for local_edge in 0..3 {
            for reversed in [false, true] {
                let trace = crate::mesh::LocalTrace { element: 0, local_edge, reversed };
                tables.push(Tabulation::new(basis, rule.points.iter().map(|&s| trace.reference_point(s))));
            }
        }
        EdgeQuadrature { rule, tables }
    }

    pub fn table(&self, trace: &crate::mesh::LocalTrace) -> &Tabulation {
        &self.tables[2 * trace.local_edge + usize::from(trace.reversed)]
    }
}

/// Broken `P_k` space with element-major, contiguous dof numbering.
#[derive(Debug, Clone)]
pub struct DGSpace {
    mesh: Arc<Mesh>,
    basis: ReferenceBasis,
    geometry: Vec<ElementGeometry>,
    volume: VolumeQuadrature,
    error_volume: VolumeQuadrature,
    edge: EdgeQuadrature,
    error_edge: EdgeQuadrature,
}

impl DGSpace {
    pub fn new(mesh: Arc<Mesh>, degree: usize) -> Result<Self> {
        let basis = ReferenceBasis::new(degree)?;
        let geometry = (0..mesh.num_elements()).map(|e| ElementGeometry::new(&mesh, e)).collect();
        let volume_rule = TriangleRule::with_degree(4 * degree);
        let error_rule = TriangleRule::with_degree(4 * degree + 2);
        let volume =
            VolumeQuadrature { table: Tabulation::new(&basis, volume_rule.points.iter().copied()), rule: volume_rule };
        let error_volume =
            VolumeQuadrature { table: Tabulation::new(&basis, error_rule.points.iter().copied()), rule: error_rule };
        let edge = EdgeQuadrature::new(&basis, LineRule::gauss(degree + 1));
        let error_edge = EdgeQuadrature::new(&basis, LineRule::with_degree(4 * degree + 2));
        Ok(DGSpace { mesh, basis, geometry, volume, error_volume, edge, error_edge })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn mesh_arc(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn degree(&self) -> usize {
        self.basis.degree()
    }

    pub fn basis(&self) -> &ReferenceBasis {
        &self.basis
    }

    pub fn dofs_per_element(&self) -> usize {
        self.basis.len()
    }

    pub fn num_dofs(&self) -> usize {
        self.mesh.num_elements() * self.dofs_per_element()
    }

    pub fn element_dofs(&self, e: usize) -> Range<usize> {
        let n = self.dofs_per_element();
        e * n..(e + 1) * n
    }

    pub fn geometry(&self, e: usize) -> &ElementGeometry {
        &self.geometry[e]
    }

    /// Volume rule exact to degree `4k`.
    pub fn volume_quadrature(&self) -> &VolumeQuadrature {
        &self.volume
    }

    /// Volume rule exact to degree `4k + 2`, used for errors against closed forms.
    pub fn error_quadrature(&self) -> &VolumeQuadrature {
        &self.error_volume
    }

    /// Gauss edge rule exact to degree `2k + 1`.
    pub fn edge_quadrature(&self) -> &EdgeQuadrature {
        &self.edge
    }

    pub fn error_edge_quadrature(&self) -> &EdgeQuadrature {
        &self.error_edge
    }

    fn check_element(&self, e: usize) -> Result<()> {
        if e >= self.mesh.num_elements() {
            return Err(Error::ElementOutOfRange { index: e, count: self.mesh.num_elements() });
        }
        Ok(())
    }

    pub fn evaluate(&self, field: &ComplexField, e: usize, xi: [f64; 2]) -> Result<Complex64> {
        self.check_element(e)?;
        let phi = self.basis.values(xi);
        Ok(dot(&field.coeffs[self.element_dofs(e)], &phi))
    }

    pub fn evaluate_gradient(&self, field: &ComplexField, e: usize, xi: [f64; 2]) -> Result<[Complex64; 2]> {
        self.check_element(e)?;
        let g = self.basis.gradients(xi);
        let geo = &self.geometry[e];
        let mut out = [Complex64::new(0.0, 0.0); 2];
        for (c, g) in field.coeffs[self.element_dofs(e)].iter().zip(g) {
            let gp = geo.physical_gradient(g);
            out[0] += c * gp[0];
            out[1] += c * gp[1];
        }
        Ok(out)
    }

    /// Nodal interpolation at the principal lattice of each element.
    pub fn interpolate(&self, f: impl Fn(Point) -> Complex64) -> ComplexField {
        let mut coeffs = Vec::with_capacity(self.num_dofs());
        for e in 0..self.mesh.num_elements() {
            for &node in self.basis.nodes() {
                coeffs.push(f(self.mesh.map_to_physical(e, node)));
            }
        }
        ComplexField { coeffs }
    }

    /// `b_i = ∫ f φ_i` with the `4k`-exact rule.
    pub fn load_vector(&self, f: impl Fn(Point) -> Complex64) -> Vec<Complex64> {
        let nb = self.dofs_per_element();
        let mut b = vec![Complex64::new(0.0, 0.0); self.num_dofs()];
        let quad = &self.volume;
        for e in 0..self.mesh.num_elements() {
            let det = self.geometry[e].det;
            let local = &mut b[e * nb..(e + 1) * nb];
            for (q, (&p, &w)) in quad.rule.points.iter().zip(&quad.rule.weights).enumerate() {
                let fv = f(self.mesh.map_to_physical(e, p)) * (w * det);
                for (bi, phi) in local.iter_mut().zip(quad.table.values_at(q)) {
                    *bi += fv * phi;
                }
            }
        }
        b
    }

    pub fn l2_norm(&self, field: &ComplexField) -> f64 {
        self.lp_norm_unchecked(field, 2, &self.volume)
    }

    /// `L^p` norm; only `p = 2` and `p = 4` are supported.
    pub fn lp_norm(&self, field: &ComplexField, p: u32) -> Result<f64> {
        match p {
            2 | 4 => Ok(self.lp_norm_unchecked(field, p, &self.volume)),
            _ => Err(Error::InvalidInput(format!("unsupported Lebesgue exponent {p}"))),
        }
    }

    fn lp_norm_unchecked(&self, field: &ComplexField, p: u32, quad: &VolumeQuadrature) -> f64 {
        let mut sum = 0.0;
        for e in 0..self.mesh.num_elements() {
            let c = &field.coeffs[self.element_dofs(e)];
            let mut local = 0.0;
            for (q, &w) in quad.rule.weights.iter().enumerate() {
                let m2 = dot(c, quad.table.values_at(q)).norm_sqr();
                local += w * if p == 4 { m2 * m2 } else { m2 };
            }
            sum += local * self.geometry[e].det;
        }
        sum.powf(1.0 / p as f64)
    }

    /// Squared contributions to the DG norm: (broken gradient, interior jumps, boundary jumps).
    pub fn dg_norm_parts(&self, field: &ComplexField) -> [f64; 3] {
        let quad = &self.volume;
        let mut volume = 0.0;
        for e in 0..self.mesh.num_elements() {
            let c = &field.coeffs[self.element_dofs(e)];
            let geo = &self.geometry[e];
            let mut local = 0.0;
            for (q, &w) in quad.rule.weights.iter().enumerate() {
                let g = grad_at(c, quad.table.gradients_at(q), geo);
                local += w * (g[0].norm_sqr() + g[1].norm_sqr());
            }
            volume += local * geo.det;
        }
        let (mut interior, mut boundary) = (0.0, 0.0);
        let eq = &self.edge;
        for edge in &self.mesh.edges {
            let left = eq.table(&edge.left);
            let cl = &field.coeffs[self.element_dofs(edge.left.element)];
            let right = edge.right.map(|r| (eq.table(&r), &field.coeffs[self.element_dofs(r.element)]));
            let mut acc = 0.0;
            for (q, &w) in eq.rule.weights.iter().enumerate() {
                let mut jump = dot(cl, left.values_at(q));
                if let Some((tab, cr)) = right {
                    jump -= dot(cr, tab.values_at(q));
                }
                // (1/h_E) ∫_E |[v]|² ds with ds = h_E dt.
                acc += w * jump.norm_sqr();
            }
            if edge.is_boundary() {
                boundary += acc;
            } else {
                interior += acc;
            }
        }
        [volume, interior, boundary]
    }

    pub fn dg_norm(&self, field: &ComplexField) -> f64 {
        self.dg_norm_parts(field).iter().sum::<f64>().sqrt()
    }

    /// `‖u - u_h‖` against a closed-form `u`, with the elevated rule.
    pub fn l2_error(&self, field: &ComplexField, exact: impl Fn(Point) -> Complex64) -> f64 {
        let quad = &self.error_volume;
        let mut sum = 0.0;
        for e in 0..self.mesh.num_elements() {
            let c = &field.coeffs[self.element_dofs(e)];
            let mut local = 0.0;
            for (q, (&p, &w)) in quad.rule.points.iter().zip(&quad.rule.weights).enumerate() {
                let diff = exact(self.mesh.map_to_physical(e, p)) - dot(c, quad.table.values_at(q));
                local += w * diff.norm_sqr();
            }
            sum += local * self.geometry[e].det;
        }
        sum.sqrt()
    }

    /// `‖u - u_h‖_DG` against a closed-form `u` and its gradient.
    pub fn dg_error(
        &self,
        field: &ComplexField,
        exact: impl Fn(Point) -> Complex64,
        exact_grad: impl Fn(Point) -> [Complex64; 2],
    ) -> f64 {
        let quad = &self.error_volume;
        let mut sum = 0.0;
        for e in 0..self.mesh.num_elements() {
            let c = &field.coeffs[self.element_dofs(e)];
            let geo = &self.geometry[e];
            let mut local = 0.0;
            for (q, (&p, &w)) in quad.rule.points.iter().zip(&quad.rule.weights).enumerate() {
                let g = grad_at(c, quad.table.gradients_at(q), geo);
                let ge = exact_grad(self.mesh.map_to_physical(e, p));
                local += w * ((ge[0] - g[0]).norm_sqr() + (ge[1] - g[1]).norm_sqr());
            }
            sum += local * geo.det;
        }
        let eq = &self.error_edge;
        for (i, edge) in self.mesh.edges.iter().enumerate() {
            let pair = self.mesh.edge_trace_pairing(i);
            let left = eq.table(&edge.left);
            let cl = &field.coeffs[self.element_dofs(edge.left.element)];
            let right = edge.right.map(|r| (eq.table(&r), &field.coeffs[self.element_dofs(r.element)]));
            for (q, (&s, &w)) in eq.rule.points.iter().zip(&eq.rule.weights).enumerate() {
                let u = exact(pair.physical_point(s));
                let mut jump = u - dot(cl, left.values_at(q));
                if let Some((tab, cr)) = right {
                    jump -= u - dot(cr, tab.values_at(q));
                }
                sum += w * jump.norm_sqr();
            }
        }
        sum.sqrt()
    }
}

#[inline]
pub(crate) fn dot(c: &[Complex64], phi: &[f64]) -> Complex64 {
    c.iter().zip(phi).fold(Complex64::new(0.0, 0.0), |acc, (c, p)| acc + c * p)
}

#[inline]
pub(crate) fn grad_at(c: &[Complex64], grads: &[[f64; 2]], geo: &ElementGeometry) -> [Complex64; 2] {
    let mut out = [Complex64::new(0.0, 0.0); 2];
    for (c, &g) in c.iter().zip(grads) {
        let gp = geo.physical_gradient(g);
        out[0] += c * gp[0];
        out[1] += c * gp[1];
    }
    out
}

/// Coefficient vector of a discrete function in `V_h^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexField {
    pub coeffs: Vec<Complex64>,
}

impl ComplexField {
    pub fn zeros(space: &DGSpace) -> Self {
        ComplexField { coeffs: vec![Complex64::new(0.0, 0.0); space.num_dofs()] }
    }

    pub fn from_coeffs(space: &DGSpace, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != space.num_dofs() {
            return Err(Error::InvalidInput(format!(
                "field has {} coefficients, space has {} dofs",
                coeffs.len(),
                space.num_dofs()
            )));
        }
        if coeffs.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::InvalidInput("field has non-finite coefficients".into()));
        }
        Ok(ComplexField { coeffs })
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    pub fn scaled(&self, s: Complex64) -> Self {
        ComplexField { coeffs: self.coeffs.iter().map(|c| c * s).collect() }
    }

    pub fn sub(&self, other: &ComplexField) -> Self {
        ComplexField { coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a - b).collect() }
    }

    /// CSV dump with columns `dof,re,im`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dof,re,im\n");
        for (i, c) in self.coeffs.iter().enumerate() {
            out.push_str(&format!("{i},{:e},{:e}\n", c.re, c.im));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Rect;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn unit_space(n: usize, k: usize) -> DGSpace {
        DGSpace::new(Arc::new(Mesh::build_structured(Rect::unit_square(), n).unwrap()), k).unwrap()
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_reference_point(rng: &mut impl Rng) -> [f64; 2] {
        loop {
            let p = [rng.random::<f64>(), rng.random::<f64>()];
            if p[0] + p[1] < 1.0 {
                return p;
            }
        }
    }

    #[test]
    fn layout_is_element_major() {
        let sp = unit_space(2, 3);
        assert_eq!(sp.dofs_per_element(), 10);
        assert_eq!(sp.num_dofs(), 80);
        assert_eq!(sp.element_dofs(3), 30..40);
        assert!(sp.volume_quadrature().rule.degree >= 12);
        assert!(sp.error_quadrature().rule.degree >= 14);
        assert!(sp.edge_quadrature().rule.degree >= 7);
    }

    #[test]
    fn evaluate_examples() {
        let sp = unit_space(3, 1);
        let zero = ComplexField::zeros(&sp);
        let one = sp.interpolate(|_| c(1.0, 0.0));
        let affine = sp.interpolate(|p| c(p[0], p[1]));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let e = rng.random_range(0..sp.mesh().num_elements());
            let xi = random_reference_point(&mut rng);
            let x = sp.mesh().map_to_physical(e, xi);
            assert_eq!(sp.evaluate(&zero, e, xi).unwrap(), c(0.0, 0.0));
            assert!((sp.evaluate(&one, e, xi).unwrap() - 1.0).norm() < 1e-12);
            assert!((sp.evaluate(&affine, e, xi).unwrap() - c(x[0], x[1])).norm() < 1e-12);
        }
        assert!(matches!(sp.evaluate(&zero, 18, [0.1, 0.1]), Err(Error::ElementOutOfRange { index: 18, count: 18 })));
    }

    #[test]
    fn gradient_of_affine_field() {
        let sp = unit_space(2, 2);
        let f = sp.interpolate(|p| c(2.0 * p[0] - p[1], 3.0 * p[1]));
        let g = sp.evaluate_gradient(&f, 5, [0.2, 0.3]).unwrap();
        assert!((g[0] - c(2.0, 0.0)).norm() < 1e-12);
        assert!((g[1] - c(-1.0, 3.0)).norm() < 1e-12);
    }

    #[test]
    fn l2_norm_examples() {
        let sp = unit_space(4, 2);
        assert!((sp.l2_norm(&sp.interpolate(|_| c(1.0, 0.0))) - 1.0).abs() < 1e-12);
        assert_eq!(sp.l2_norm(&ComplexField::zeros(&sp)), 0.0);
        let sp = unit_space(16, 3);
        let f = sp.interpolate(|p| c((PI * p[0]).sin() * (PI * p[1]).sin(), 0.0));
        assert!((sp.l2_norm(&f) - 0.5).abs() < 1e-4);
    }

    #[test]
    fn l4_norm_examples() {
        let sp = unit_space(3, 2);
        assert!((sp.lp_norm(&sp.interpolate(|_| c(1.0, 0.0)), 4).unwrap() - 1.0).abs() < 1e-12);
        let z = c(0.6, -0.8) * 3.0;
        assert!((sp.lp_norm(&sp.interpolate(|_| z), 4).unwrap() - 3.0).abs() < 1e-12);
        let x = sp.interpolate(|p| c(p[0], 0.0));
        assert!((sp.lp_norm(&x, 4).unwrap() - 0.2f64.powf(0.25)).abs() < 1e-12);
        assert!(sp.lp_norm(&x, 3).is_err());
    }

    #[test]
    fn dg_norm_examples() {
        let sp = unit_space(1, 1);
        assert_eq!(sp.dg_norm(&ComplexField::zeros(&sp)), 0.0);
        assert!((sp.dg_norm(&sp.interpolate(|_| c(1.0, 0.0))) - 2.0).abs() < 1e-12);

        let sp = unit_space(4, 1);
        let hat = sp.interpolate(|p| c(p[0] * (1.0 - p[0]) * p[1] * (1.0 - p[1]), 0.0));
        let continuous = sp.interpolate(|p| c(p[0] + 2.0 * p[1], -p[0]));
        assert!(sp.dg_norm_parts(&hat)[1].abs() < 1e-24);
        let [vol, interior, boundary] = sp.dg_norm_parts(&continuous);
        assert!(interior < 1e-24);
        assert!((vol - 6.0).abs() < 1e-12);
        assert!(boundary > 0.0);
    }

    #[test]
    fn interpolation_reproduces_polynomials() {
        assert!(unit_space(2, 2).interpolate(|_| c(0.0, 0.0)).coeffs.iter().all(|z| *z == c(0.0, 0.0)));
        for k in 1..=3 {
            let sp = unit_space(3, k);
            let poly = |p: Point| c(p[0].powi(k as i32) - 0.5 * p[1], p[0] * p[1].powi(k as i32 - 1));
            let f = sp.interpolate(poly);
            let quad = sp.volume_quadrature();
            for e in 0..sp.mesh().num_elements() {
                for &xi in &quad.rule.points {
                    let x = sp.mesh().map_to_physical(e, xi);
                    assert!((sp.evaluate(&f, e, xi).unwrap() - poly(x)).norm() < 1e-12);
                }
            }
        }
        let sp = unit_space(2, 1);
        let phase = Complex64::from_polar(1.0, 1.0);
        let f = sp.interpolate(|p| phase * (p[0] + p[1]));
        assert!(sp.l2_error(&f, |p| phase * (p[0] + p[1])) < 1e-13);
    }

    #[test]
    fn inverse_inequality_ratio_is_stable() {
        let pattern = [c(0.3, 1.0), c(-1.0, 0.2), c(0.7, -0.5), c(0.1, 0.4), c(-0.6, -0.9), c(1.0, 0.0)];
        let ratios: Vec<f64> = [4, 8, 16, 32]
            .iter()
            .map(|&n| {
                let sp = unit_space(n, 2);
                let coeffs = (0..sp.num_dofs()).map(|i| pattern[i % 6]).collect();
                let f = ComplexField { coeffs };
                sp.mesh().h * sp.dg_norm(&f) / sp.l2_norm(&f)
            })
            .collect();
        let (lo, hi) = ratios.iter().fold((f64::MAX, 0.0f64), |(lo, hi), r| (lo.min(*r), hi.max(*r)));
        assert!(hi / lo <= 2.0, "{ratios:?}");
    }

    #[test]
    fn field_construction_checks() {
        let sp = unit_space(1, 1);
        assert!(ComplexField::from_coeffs(&sp, vec![c(0.0, 0.0); 5]).is_err());
        assert!(ComplexField::from_coeffs(&sp, vec![c(f64::NAN, 0.0); 6]).is_err());
        let f = ComplexField::from_coeffs(&sp, vec![c(1.5, -2.0); 6]).unwrap();
        assert!(f.to_csv().starts_with("dof,re,im\n0,1.5e0,-2e0\n"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn norms_scale_with_modulus(seed in any::<u64>(), re in -3.0f64..3.0, im in -3.0f64..3.0) {
            let sp = unit_space(2, 2);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = ComplexField {
                coeffs: (0..sp.num_dofs()).map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect(),
            };
            let s = c(re, im);
            let g = f.scaled(s);
            let m = s.norm();
            prop_assert!((sp.l2_norm(&g) - m * sp.l2_norm(&f)).abs() <= 1e-12 * (1.0 + m * sp.l2_norm(&f)));
            prop_assert!((sp.lp_norm(&g, 4).unwrap() - m * sp.lp_norm(&f, 4).unwrap()).abs() <= 1e-12 * (1.0 + m));
            prop_assert!((sp.dg_norm(&g) - m * sp.dg_norm(&f)).abs() <= 1e-11 * (1.0 + m * sp.dg_norm(&f)));
        }

        #[test]
        fn dg_norm_is_definite(seed in any::<u64>()) {
            let sp = unit_space(2, 1);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut coeffs = vec![c(0.0, 0.0); sp.num_dofs()];
            let i = rng.random_range(0..coeffs.len());
            coeffs[i] = c(rng.random_range(0.1..1.0), rng.random_range(-1.0..1.0));
            let f = ComplexField { coeffs };
            prop_assert!(sp.dg_norm(&f) > 0.0);
        }
    }
}
