//! Ginzburg–Landau parameters, the cubic nonlinearity, and manufactured solutions.
//!
//! The equation is `u_t - (ν + iα)Δu + (κ + iβ)|u|²u - γu = f` with homogeneous
//! Dirichlet data.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::space::dot;
use crate::fem::{ComplexField, DGSpace};
use crate::mesh::{Point, Rect};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GLParams {
    pub nu: f64,
    pub alpha: f64,
    pub kappa: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Final time `T`.
    pub t_final: f64,
}

impl Default for GLParams {
    fn default() -> Self {
        GLParams { nu: 1.0, alpha: 1.0, kappa: 1.0, beta: 1.0, gamma: 1.0, t_final: 1.0 }
    }
}

impl GLParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.nu, self.alpha, self.kappa, self.beta, self.gamma, self.t_final];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite model parameter".into()));
        }
        if self.nu <= 0.0 || self.kappa <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "need nu > 0 and kappa > 0 (got nu = {}, kappa = {})",
                self.nu, self.kappa
            )));
        }
        if self.t_final <= 0.0 {
            return Err(Error::InvalidInput("final time must be positive".into()));
        }
        Ok(())
    }

    /// `ν + iα`
    pub fn diffusion(&self) -> Complex64 {
        Complex64::new(self.nu, self.alpha)
    }

    /// `κ + iβ`
    pub fn nonlinearity(&self) -> Complex64 {
        Complex64::new(self.kappa, self.beta)
    }
}

/// One term `c · sin(pπx̂) sin(qπŷ)` on the unit-scaled rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SineMode {
    pub p: u32,
    pub q: u32,
    pub coeff: Complex64,
}

/// Closed-form fields with hand-derived time derivative, gradient and Laplacian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExactSolution {
    /// `sin(πx) sin(πy) e^{it²}`
    SinSinChirp,
    /// `(1+x)⁴(1-x)⁴(1+y)⁴(1-y)⁴ e^{it}`
    QuarticBump,
    /// Time-independent sine series vanishing on the boundary of `domain`.
    SineSeries { modes: Vec<SineMode> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManufacturedCase {
    pub name: String,
    pub solution: ExactSolution,
    pub domain: Rect,
    pub params: GLParams,
    /// Forces `f ≡ 0`; the solution then only supplies the initial datum.
    #[serde(default)]
    pub homogeneous: bool,
}

fn bump(x: f64) -> (f64, f64, f64) {
    let s = 1.0 - x * x;
    let s2 = s * s;
    (s2 * s2, -8.0 * x * s2 * s, s2 * (56.0 * x * x - 8.0))
}

impl ManufacturedCase {
    pub fn u(&self, p: Point, t: f64) -> Complex64 {
        let [x, y] = p;
        match &self.solution {
            ExactSolution::SinSinChirp => (PI * x).sin() * (PI * y).sin() * (I * t * t).exp(),
            ExactSolution::QuarticBump => bump(x).0 * bump(y).0 * (I * t).exp(),
            ExactSolution::SineSeries { modes } => {
                let (xh, yh) = self.unit_coords(p);
                modes.iter().map(|m| m.coeff * (m.p as f64 * PI * xh).sin() * (m.q as f64 * PI * yh).sin()).sum()
            }
        }
    }

    pub fn u_t(&self, p: Point, t: f64) -> Complex64 {
        match &self.solution {
            ExactSolution::SinSinChirp => 2.0 * t * I * self.u(p, t),
            ExactSolution::QuarticBump => I * self.u(p, t),
            ExactSolution::SineSeries { .. } => Complex64::new(0.0, 0.0),
        }
    }

    pub fn gradient(&self, p: Point, t: f64) -> [Complex64; 2] {
        let [x, y] = p;
        match &self.solution {
            ExactSolution::SinSinChirp => {
                let ph = (I * t * t).exp();
                [PI * (PI * x).cos() * (PI * y).sin() * ph, PI * (PI * x).sin() * (PI * y).cos() * ph]
            }
            ExactSolution::QuarticBump => {
                let ph = (I * t).exp();
                let (bx, dbx, _) = bump(x);
                let (by, dby, _) = bump(y);
                [dbx * by * ph, bx * dby * ph]
            }
            ExactSolution::SineSeries { modes } => {
                let (xh, yh) = self.unit_coords(p);
                let (w, h) = (self.domain.width(), self.domain.height());
                let mut g = [Complex64::new(0.0, 0.0); 2];
                for m in modes {
                    let (kx, ky) = (m.p as f64 * PI, m.q as f64 * PI);
                    g[0] += m.coeff * (kx / w) * (kx * xh).cos() * (ky * yh).sin();
                    g[1] += m.coeff * (ky / h) * (kx * xh).sin() * (ky * yh).cos();
                }
                g
            }
        }
    }

    pub fn laplacian(&self, p: Point, t: f64) -> Complex64 {
        let [x, y] = p;
        match &self.solution {
            ExactSolution::SinSinChirp => -2.0 * PI * PI * self.u(p, t),
            ExactSolution::QuarticBump => {
                let (bx, _, d2x) = bump(x);
                let (by, _, d2y) = bump(y);
                (d2x * by + bx * d2y) * (I * t).exp()
            }
            ExactSolution::SineSeries { modes } => {
                let (xh, yh) = self.unit_coords(p);
                let (w, h) = (self.domain.width(), self.domain.height());
                modes
                    .iter()
                    .map(|m| {
                        let (kx, ky) = (m.p as f64 * PI, m.q as f64 * PI);
                        -m.coeff * ((kx / w).powi(2) + (ky / h).powi(2)) * (kx * xh).sin() * (ky * yh).sin()
                    })
                    .sum()
            }
        }
    }

    fn unit_coords(&self, p: Point) -> (f64, f64) {
        ((p[0] - self.domain.x0) / self.domain.width(), (p[1] - self.domain.y0) / self.domain.height())
    }

    /// `f = u_t - (ν+iα)Δu + (κ+iβ)|u|²u - γu`, or zero for homogeneous cases.
    pub fn source(&self, p: Point, t: f64) -> Complex64 {
        if self.homogeneous {
            return Complex64::new(0.0, 0.0);
        }
        let u = self.u(p, t);
        let pr = &self.params;
        self.u_t(p, t) - pr.diffusion() * self.laplacian(p, t) + pr.nonlinearity() * cubic(u) - pr.gamma * u
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        self.params.validate()
    }
}

/// The two manufactured solutions used for convergence studies.
pub fn builtin_cases() -> Vec<ManufacturedCase> {
    let ones = GLParams { t_final: 1.0, ..GLParams::default() };
    vec![
        ManufacturedCase {
            name: "example1".into(),
            solution: ExactSolution::SinSinChirp,
            domain: Rect::unit_square(),
            params: ones,
            homogeneous: false,
        },
        ManufacturedCase {
            name: "example2".into(),
            solution: ExactSolution::QuarticBump,
            domain: Rect { x0: -1.0, x1: 1.0, y0: -1.0, y1: 1.0 },
            params: ones,
            homogeneous: false,
        },
    ]
}

pub fn case_by_name(name: &str) -> Result<ManufacturedCase> {
    builtin_cases()
        .into_iter()
        .find(|c| c.name == name)
        .ok_or_else(|| Error::InvalidInput(format!("unknown case '{name}' (expected example1 or example2)")))
}

/// `|z|² z`
#[inline]
pub fn cubic(z: Complex64) -> Complex64 {
    z * z.norm_sqr()
}

/// Real Jacobian `∂(Re N, Im N)/∂(a, b)` of `N(a + ib) = (a² + b²)(a + ib)`.
#[inline]
pub fn cubic_jacobian_block(z: Complex64) -> [[f64; 2]; 2] {
    let (a, b) = (z.re, z.im);
    [[3.0 * a * a + b * b, 2.0 * a * b], [2.0 * a * b, a * a + 3.0 * b * b]]
}

/// `∫ |w|² w φ_i` for every basis function, with the `4k`-exact rule.
pub fn cubic_weak(space: &DGSpace, w: &ComplexField) -> Vec<Complex64> {
    let nb = space.dofs_per_element();
    let quad = space.volume_quadrature();
    let mut out = vec![Complex64::new(0.0, 0.0); space.num_dofs()];
    for e in 0..space.mesh().num_elements() {
        let dofs = space.element_dofs(e);
        let c = &w.coeffs[dofs.clone()];
        let det = space.geometry(e).det;
        let local = &mut out[dofs];
        for (q, &wq) in quad.rule.weights.iter().enumerate() {
            let phi = quad.table.values_at(q);
            let n = cubic(dot(c, phi)) * (wq * det);
            for (o, p) in local.iter_mut().zip(phi).take(nb) {
                *o += n * p;
            }
        }
    }
    out
}
