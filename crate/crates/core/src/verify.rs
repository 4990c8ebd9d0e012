//! Invariant suites bundled by the `verify` command.

use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::fem::{DGSpace, LineRule, TriangleRule};
use crate::mesh::{Mesh, Rect};
use crate::model::{case_by_name, ExactSolution, GLParams, ManufacturedCase, SineMode};
use crate::sipg::{self, SipgConfig};
use crate::stepper::{energy_balance, Discretization, StepConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl SuiteOutcome {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        SuiteOutcome { name, passed, detail }
    }

    fn from_result(name: &'static str, r: Result<(bool, String)>) -> Self {
        match r {
            Ok((passed, detail)) => SuiteOutcome::new(name, passed, detail),
            Err(e) => SuiteOutcome::new(name, false, format!("error: {e}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    /// Penalty override; each degree uses `10 (k+1)²` otherwise.
    pub penalty: Option<f64>,
    /// Time step of the growth check (default 0.5).
    pub tau: Option<f64>,
    /// Reaction coefficient of the growth check (default 1).
    pub gamma: Option<f64>,
    pub random_cases: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { penalty: None, tau: None, gamma: None, random_cases: 10, seed: 2024 }
    }
}

fn sipg_for(k: usize, penalty: Option<f64>) -> SipgConfig {
    penalty.map_or_else(|| SipgConfig::default_for_degree(k), |penalty| SipgConfig { penalty })
}

fn space(rect: Rect, n: usize, k: usize) -> Result<DGSpace> {
    DGSpace::new(Arc::new(Mesh::build_structured(rect, n)?), k)
}

/// Exact integral of `x^a y^b` over the reference triangle.
fn monomial_integral(a: u32, b: u32) -> f64 {
    let fact = |n: u32| (1..=n).map(f64::from).product::<f64>();
    fact(a) * fact(b) / fact(a + b + 2)
}

pub fn quadrature_suite() -> SuiteOutcome {
    let mut worst = 0.0f64;
    for d in 0..=16u32 {
        let rule = TriangleRule::with_degree(d as usize);
        for a in 0..=d {
            let b = d - a;
            let exact = monomial_integral(a, b);
            let got = rule.integrate(|p| p[0].powi(a as i32) * p[1].powi(b as i32));
            worst = worst.max((got - exact).abs() / exact);
        }
        let line = LineRule::with_degree(d as usize);
        let got: f64 = line.points.iter().zip(&line.weights).map(|(x, w)| w * x.powi(d as i32)).sum();
        worst = worst.max((got - 1.0 / (d as f64 + 1.0)).abs() * (d as f64 + 1.0));
    }
    SuiteOutcome::new("quadrature", worst <= 1e-12, format!("max relative error {worst:.2e} up to degree 16"))
}

pub fn mesh_suite() -> SuiteOutcome {
    let run = || -> Result<(bool, String)> {
        let mut count = 0;
        for rect in [Rect::unit_square(), Rect::new(-1.0, 1.0, -1.0, 1.0)?, Rect::new(0.0, 3.0, -0.5, 0.25)?] {
            for n in 1..=6 {
                let mesh = Mesh::build_structured(rect, n)?;
                mesh.validate()?;
                let area: f64 = (0..mesh.num_elements()).map(|e| mesh.signed_area(e)).sum();
                if (area - rect.area()).abs() > 1e-12 * rect.area() {
                    return Ok((false, format!("element areas do not sum to the domain area at n = {n}")));
                }
                count += 1;
            }
        }
        Ok((true, format!("{count} meshes conforming, oriented and covering the domain")))
    };
    SuiteOutcome::from_result("mesh", run())
}

pub fn coercivity_suite(penalty: Option<f64>) -> SuiteOutcome {
    let run = || -> Result<(bool, String)> {
        let mut min = f64::INFINITY;
        for n in [2, 4] {
            for k in 1..=3 {
                let sp = space(Rect::unit_square(), n, k)?;
                let a = sipg::assemble_stiffness(&sp, &sipg_for(k, penalty))?;
                let (lo, _) = sipg::coercivity_bounds(&sp, &a)?;
                min = min.min(lo);
            }
        }
        let msg = if min > 0.0 {
            format!("min a_h(v,v)/|v|_DG^2 = {min:.4}")
        } else {
            format!("min a_h(v,v)/|v|_DG^2 = {min:.4}: penalty too small")
        };
        Ok((min > 0.0, msg))
    };
    SuiteOutcome::from_result("coercivity", run())
}

/// Relative mismatch between the assembled Jacobian action and a centered
/// difference of the residual along a random direction.
pub fn jacobian_fd_mismatch(k: usize, n: usize, penalty: Option<f64>, seed: u64) -> Result<f64> {
    let case = case_by_name("example1")?;
    let disc = Discretization::new(space(case.domain, n, k)?, case, sipg_for(k, penalty))?;
    let stepper = disc.stepper(StepConfig::new(0.1))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rand_vec = |len: usize| -> Vec<Complex64> {
        (0..len).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
    };
    let ndof = disc.space.num_dofs();
    let w = rand_vec(ndof);
    let u_prev = rand_vec(ndof);
    let dir = rand_vec(ndof);
    let load = stepper.load(0.05);
    let jac = stepper.jacobian(&w);
    let dir_real: Vec<f64> = dir.iter().flat_map(|c| [c.re, c.im]).collect();
    let jd = jac.apply(&dir_real);
    let eps = 1e-6;
    let shifted = |s: f64| -> Vec<f64> {
        let x: Vec<Complex64> = w.iter().zip(&dir).map(|(w, d)| w + s * d).collect();
        stepper.residual(&x, &u_prev, &load).iter().flat_map(|c| [c.re, c.im]).collect()
    };
    let (rp, rm) = (shifted(eps), shifted(-eps));
    let fd: Vec<f64> = rp.iter().zip(&rm).map(|(p, m)| (p - m) / (2.0 * eps)).collect();
    let diff = jd.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm = jd.iter().map(|a| a * a).sum::<f64>().sqrt();
    Ok(diff / norm)
}

pub fn jacobian_suite(penalty: Option<f64>) -> SuiteOutcome {
    let run = || -> Result<(bool, String)> {
        let mut worst = 0.0f64;
        for k in 1..=3 {
            worst = worst.max(jacobian_fd_mismatch(k, 3, penalty, 7 + k as u64)?);
        }
        Ok((worst <= 1e-5, format!("max relative mismatch {worst:.2e}")))
    };
    SuiteOutcome::from_result("jacobian-fd", run())
}

/// A homogeneous case whose initial datum is a random smooth sine series.
pub fn random_smooth_case(rng: &mut impl Rng, domain: Rect, gamma: f64, t_final: f64) -> ManufacturedCase {
    let count = rng.random_range(2..=5);
    let modes = (0..count)
        .map(|_| {
            let p = rng.random_range(1..=3u32);
            let q = rng.random_range(1..=3u32);
            let scale = 2.0 / f64::from(p * p + q * q);
            SineMode { p, q, coeff: Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * scale }
        })
        .collect();
    ManufacturedCase {
        name: "random".into(),
        solution: ExactSolution::SineSeries { modes },
        domain,
        params: GLParams { gamma, t_final, ..GLParams::default() },
        homogeneous: true,
    }
}

/// L² norms of `u_h^0, …, u_h^N` for an unforced run.
pub fn norm_history(case: ManufacturedCase, n: usize, k: usize, penalty: Option<f64>, tau: f64) -> Result<Vec<f64>> {
    let disc = Discretization::new(space(case.domain, n, k)?, case, sipg_for(k, penalty))?;
    let mut norms = Vec::new();
    disc.run(StepConfig::new(tau), |u, _| norms.push(disc.space.l2_norm(u)))?;
    Ok(norms)
}

pub fn decay_growth_suite(opts: &VerifyOptions) -> SuiteOutcome {
    let run = || -> Result<(bool, String)> {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let (tau_g, gamma_g) = (opts.tau.unwrap_or(0.5), opts.gamma.unwrap_or(1.0));
        let t_growth = 2.0 * tau_g;
        let mut worst_increase = f64::NEG_INFINITY;
        let mut worst_excess = f64::NEG_INFINITY;
        for _ in 0..opts.random_cases {
            let case = random_smooth_case(&mut rng, Rect::unit_square(), -1.0, 0.2);
            let norms = norm_history(case, 4, 2, opts.penalty, 0.01)?;
            for w in norms.windows(2) {
                worst_increase = worst_increase.max(w[1] - w[0]);
            }
            let case = random_smooth_case(&mut rng, Rect::unit_square(), gamma_g, t_growth);
            let norms = norm_history(case, 4, 2, opts.penalty, tau_g)?;
            for (i, v) in norms.iter().enumerate() {
                let bound = (2.0 * gamma_g.max(0.0) * i as f64 * tau_g).exp() * norms[0];
                worst_excess = worst_excess.max(v - bound);
            }
        }
        let passed = worst_increase <= 1e-9 && worst_excess <= 1e-8;
        Ok((
            passed,
            format!(
                "{} cases: max norm increase {worst_increase:.2e} (gamma = -1); max excess over growth bound {worst_excess:.2e} (tau = {tau_g}, gamma = {gamma_g})",
                opts.random_cases
            ),
        ))
    };
    SuiteOutcome::from_result("decay-growth", run())
}

/// `(‖R_h u − u‖, ‖R_h u − u‖_DG)` for `u = sin(πx) sin(πy)` on the unit square.
pub fn ritz_errors(n: usize, k: usize, penalty: Option<f64>) -> Result<(f64, f64)> {
    let case = case_by_name("example1")?;
    let sp = space(case.domain, n, k)?;
    let r = sipg::ritz_project(&sp, &sipg_for(k, penalty), |p| case.laplacian(p, 0.0))?;
    Ok((sp.l2_error(&r, |p| case.u(p, 0.0)), sp.dg_error(&r, |p| case.u(p, 0.0), |p| case.gradient(p, 0.0))))
}

pub fn ritz_suite(penalty: Option<f64>) -> SuiteOutcome {
    let run = || -> Result<(bool, String)> {
        let mut passed = true;
        let mut parts = Vec::new();
        for k in 1..=3 {
            let (c, f) = (ritz_errors(8, k, penalty)?, ritz_errors(16, k, penalty)?);
            let l2 = (c.0 / f.0).log2();
            let dg = (c.1 / f.1).log2();
            passed &= (l2 - (k + 1) as f64).abs() <= 0.2 && (dg - k as f64).abs() <= 0.2;
            parts.push(format!("k={k}: {l2:.2}/{dg:.2}"));
        }
        Ok((passed, format!("L2/DG orders {}", parts.join(", "))))
    };
    SuiteOutcome::from_result("ritz-orders", run())
}

/// Largest `|energy residual| / (newton_tol · scale)` over a few steps.
pub fn energy_identity_ratio(
    case: ManufacturedCase,
    n: usize,
    k: usize,
    penalty: Option<f64>,
    tau: f64,
    steps: usize,
) -> Result<f64> {
    let disc = Discretization::new(space(case.domain, n, k)?, case, sipg_for(k, penalty))?;
    let cfg = StepConfig::new(tau);
    let mut stepper = disc.stepper(cfg)?;
    let mut u = disc.ritz(0.0)?;
    let mut worst = 0.0f64;
    for i in 0..steps {
        let t = i as f64 * tau;
        let (next, _) = stepper.step(&u, t)?;
        let load = stepper.step_load(t);
        let bal = energy_balance(&disc, &u, &next, tau, &load);
        worst = worst.max(bal.residual.abs() / (cfg.newton_tol * bal.scale));
        u = next;
    }
    Ok(worst)
}

pub fn energy_suite(opts: &VerifyOptions) -> SuiteOutcome {
    let run = || -> Result<(bool, String)> {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
        let mut worst = energy_identity_ratio(case_by_name("example1")?, 4, 2, opts.penalty, 0.05, 4)?;
        for _ in 0..3 {
            let case = random_smooth_case(&mut rng, Rect::unit_square(), -1.0, 1.0);
            worst = worst.max(energy_identity_ratio(case, 4, 2, opts.penalty, 0.05, 4)?);
        }
        Ok((worst <= 100.0, format!("max |residual| = {worst:.2} x newton_tol x scale")))
    };
    SuiteOutcome::from_result("energy-identity", run())
}

pub fn run_all(opts: &VerifyOptions) -> Vec<SuiteOutcome> {
    vec![
        quadrature_suite(),
        mesh_suite(),
        coercivity_suite(opts.penalty),
        jacobian_suite(opts.penalty),
        decay_growth_suite(opts),
        ritz_suite(opts.penalty),
        energy_suite(opts),
    ]
}
