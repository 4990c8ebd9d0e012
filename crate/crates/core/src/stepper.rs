//! Fully implicit Crank–Nicolson stepping.
//!
//! Each step solves for the average `ŵ = (u^n + u^{n-1}) / 2`:
//!
//! ```text
//! (2/τ)(ŵ - u^{n-1}, v) + (ν+iα) a_h(ŵ, v) + (κ+iβ)(|ŵ|²ŵ, v) - γ(ŵ, v) = (f^{n-1/2}, v)
//! ```
//!
//! and then sets `u^n = 2ŵ - u^{n-1}`. The cubic term is not complex
//! differentiable, so Newton works on the real `2N` system with unknowns
//! interleaved as `(Re ŵ_0, Im ŵ_0, Re ŵ_1, ...)`.

use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::space::dot;
use crate::fem::{ComplexField, DGSpace};
use crate::model::{cubic_jacobian_block, cubic_weak, GLParams, ManufacturedCase};
use crate::sipg::{self, SipgConfig};
use crate::sparse::{LinearSolver, LinearSolverKind, SparseOperator};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepConfig {
    /// Time step τ.
    pub tau: f64,
    /// Relative nonlinear residual tolerance.
    #[serde(default = "default_newton_tol")]
    pub newton_tol: f64,
    #[serde(default = "default_newton_max_iter")]
    pub newton_max_iter: usize,
    /// Retry with the lagged-modulus fixed-point iteration when Newton fails.
    #[serde(default = "default_true")]
    pub fixed_point_fallback: bool,
    #[serde(default = "default_fixed_point_max_iter")]
    pub fixed_point_max_iter: usize,
    #[serde(default)]
    pub linear_solver: LinearSolverKind,
    #[serde(default)]
    pub source_rule: SourceRule,
}

/// Time sampling of the source term within a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceRule {
    /// `f(t_{n-1/2})`
    #[default]
    Midpoint,
    /// `(f(t_{n-1}) + f(t_n)) / 2`
    Average,
}

fn default_newton_tol() -> f64 {
    1e-11
}
fn default_newton_max_iter() -> usize {
    50
}
fn default_true() -> bool {
    true
}
fn default_fixed_point_max_iter() -> usize {
    200
}

impl StepConfig {
    pub fn new(tau: f64) -> Self {
        StepConfig {
            tau,
            newton_tol: default_newton_tol(),
            newton_max_iter: default_newton_max_iter(),
            fixed_point_fallback: true,
            fixed_point_max_iter: default_fixed_point_max_iter(),
            linear_solver: LinearSolverKind::Direct,
            source_rule: SourceRule::Midpoint,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::InvalidInput(format!("time step must be positive, got {}", self.tau)));
        }
        if !(self.newton_tol.is_finite() && self.newton_tol > 0.0) || self.newton_max_iter == 0 {
            return Err(Error::InvalidInput("Newton tolerance and iteration cap must be positive".into()));
        }
        Ok(())
    }

    /// Warning text when `τγ ≥ 2`, where existence of a discrete solution is no longer guaranteed.
    pub fn solvability_warning(&self, gamma: f64) -> Option<String> {
        let tg = self.tau * gamma;
        (tg >= 2.0).then(|| format!("tau*gamma = {tg} >= 2: solvability of the implicit step is not guaranteed"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct StepReport {
    /// Time level `n` of the produced solution.
    pub n: usize,
    pub t: f64,
    pub newton_iterations: usize,
    /// Final residual relative to the step's residual scale.
    pub final_residual: f64,
    pub residual_history: Vec<f64>,
    pub linear_iterations: usize,
    pub fixed_point_iterations: usize,
    pub used_fallback: bool,
    pub seconds: f64,
}

impl StepReport {
    /// One JSON object with the keys `n`, `t`, `newton_iters`, `residual`.
    pub fn to_json_line(&self) -> String {
        #[derive(Serialize)]
        struct Line {
            n: usize,
            t: f64,
            newton_iters: usize,
            residual: f64,
        }
        let line = Line { n: self.n, t: self.t, newton_iters: self.newton_iterations, residual: self.final_residual };
        serde_json::to_string(&line).expect("step report serializes")
    }
}

/// Result of a Newton solve on a real system.
#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// Residual norms divided by the scale, starting with the initial guess.
    pub history: Vec<f64>,
    pub linear_iterations: usize,
}

/// Damped Newton iteration on a real system `R(x) = 0`.
///
/// Converged when `‖R(x)‖ <= tol · max(scale, ‖R(x₀)‖)`. `jacobian` overwrites
/// the values of `jac` (fixed sparsity pattern) at the given point.
#[allow(clippy::too_many_arguments)]
pub fn newton_solve<R, J>(
    mut residual: R,
    mut jacobian: J,
    jac: &mut SparseOperator,
    x0: Vec<f64>,
    scale: f64,
    tol: f64,
    max_iter: usize,
    solver: &mut LinearSolver,
) -> Result<NewtonOutcome>
where
    R: FnMut(&[f64]) -> Vec<f64>,
    J: FnMut(&[f64], &mut SparseOperator),
{
    let mut x = x0;
    let mut r = residual(&x);
    let r0 = norm(&r);
    let scale = scale.max(r0);
    let mut history = vec![if scale > 0.0 { r0 / scale } else { 0.0 }];
    let mut linear_iterations = 0;
    if r0 <= tol * scale {
        return Ok(NewtonOutcome { solution: x, iterations: 0, history, linear_iterations });
    }
    let mut rn = r0;
    for it in 1..=max_iter {
        jacobian(&x, jac);
        let (dx, stats) = solver.solve(jac, &r)?;
        linear_iterations += stats.iterations;
        let mut step = 1.0;
        let (mut x_new, mut r_new, mut rn_new);
        loop {
            x_new = x.iter().zip(&dx).map(|(x, d)| x - step * d).collect::<Vec<_>>();
            r_new = residual(&x_new);
            rn_new = norm(&r_new);
            if (rn_new.is_finite() && rn_new < rn) || step < 1.0 / 32.0 {
                break;
            }
            step *= 0.5;
        }
        x = x_new;
        r = r_new;
        rn = rn_new;
        history.push(rn / scale);
        if !rn.is_finite() {
            break;
        }
        if rn <= tol * scale {
            return Ok(NewtonOutcome { solution: x, iterations: it, history, linear_iterations });
        }
    }
    Err(Error::NewtonDiverged {
        iterations: history.len() - 1,
        last_residual: *history.last().unwrap_or(&f64::NAN),
        history,
        last_iterate: to_complex(&x),
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn to_real(c: &[Complex64]) -> Vec<f64> {
    c.iter().flat_map(|c| [c.re, c.im]).collect()
}

fn to_complex(x: &[f64]) -> Vec<Complex64> {
    x.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect()
}

/// Mesh, space and assembled operators for one manufactured case.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub space: DGSpace,
    pub case: ManufacturedCase,
    pub sipg: SipgConfig,
    pub stiffness: SparseOperator,
    pub mass: SparseOperator,
}

impl Discretization {
    pub fn new(space: DGSpace, case: ManufacturedCase, sipg: SipgConfig) -> Result<Self> {
        case.validate()?;
        let stiffness = sipg::assemble_stiffness(&space, &sipg)?;
        let mass = sipg::assemble_mass(&space);
        Ok(Discretization { space, case, sipg, stiffness, mass })
    }

    pub fn params(&self) -> &GLParams {
        &self.case.params
    }

    /// `R_h u(·, t)`.
    pub fn ritz(&self, t: f64) -> Result<ComplexField> {
        sipg::ritz_project_with(&self.space, &self.stiffness, |p| self.case.laplacian(p, t))
    }

    pub fn stepper(&self, cfg: StepConfig) -> Result<CnStepper<'_>> {
        CnStepper::new(self, cfg)
    }

    /// `u^0 = R_h u(·, 0)` followed by `N = T/τ` steps.
    ///
    /// The observer sees every level together with the report of the step that
    /// produced it (none for level 0).
    pub fn run(
        &self,
        cfg: StepConfig,
        mut observer: impl FnMut(&ComplexField, Option<&StepReport>),
    ) -> Result<RunOutput> {
        let steps = steps_for(self.params().t_final, cfg.tau)?;
        let u0 = self.ritz(0.0).map_err(|e| Error::AtLevel { level: 0, inner: Box::new(e) })?;
        self.run_from(u0, cfg, steps, &mut observer)
    }

    pub fn run_from(
        &self,
        u0: ComplexField,
        cfg: StepConfig,
        steps: usize,
        observer: &mut dyn FnMut(&ComplexField, Option<&StepReport>),
    ) -> Result<RunOutput> {
        let mut stepper = self.stepper(cfg)?;
        observer(&u0, None);
        let mut u = u0.clone();
        let mut reports = Vec::with_capacity(steps);
        for n in 1..=steps {
            let t_prev = (n - 1) as f64 * cfg.tau;
            let (next, mut report) =
                stepper.step(&u, t_prev).map_err(|e| Error::AtLevel { level: n, inner: Box::new(e) })?;
            report.n = n;
            report.t = n as f64 * cfg.tau;
            observer(&next, Some(&report));
            reports.push(report);
            u = next;
        }
        Ok(RunOutput { initial: u0, final_field: u, t_final: steps as f64 * cfg.tau, reports })
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub initial: ComplexField,
    pub final_field: ComplexField,
    pub t_final: f64,
    pub reports: Vec<StepReport>,
}

impl RunOutput {
    pub fn newton_total(&self) -> usize {
        self.reports.iter().map(|r| r.newton_iterations).sum()
    }
}

/// `N = T / τ`, required to be a positive integer.
pub fn steps_for(t_final: f64, tau: f64) -> Result<usize> {
    let ratio = t_final / tau;
    let n = ratio.round();
    if !(n >= 1.0 && (ratio - n).abs() <= 1e-9 * n) {
        return Err(Error::InvalidInput(format!("T / tau = {ratio} is not a positive integer")));
    }
    Ok(n as usize)
}

/// Newton solver for one Crank–Nicolson level, with cached Jacobian structure.
pub struct CnStepper<'a> {
    disc: &'a Discretization,
    cfg: StepConfig,
    jac: SparseOperator,
    /// Time-independent part of the real Jacobian.
    linear_values: Vec<f64>,
    /// For each element, the stiffness-pattern position of each local `(a, b)` pair.
    element_positions: Vec<Vec<usize>>,
    solver: LinearSolver,
}

impl std::fmt::Debug for CnStepper<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CnStepper").field("cfg", &self.cfg).finish_non_exhaustive()
    }
}

impl<'a> CnStepper<'a> {
    pub fn new(disc: &'a Discretization, cfg: StepConfig) -> Result<Self> {
        cfg.validate()?;
        if let Some(w) = cfg.solvability_warning(disc.params().gamma) {
            static WARNED: std::sync::Once = std::sync::Once::new();
            WARNED.call_once(|| log::warn!("{w}"));
        }
        let a = &disc.stiffness;
        let space = &disc.space;
        let n = a.nrows;
        let mut row_ptr = vec![0usize; 2 * n + 1];
        let mut col_idx = Vec::with_capacity(4 * a.nnz());
        let mut linear_values = Vec::with_capacity(4 * a.nnz());
        let p = disc.params();
        let shift = 2.0 / cfg.tau - p.gamma;
        for i in 0..n {
            let (cols, vals) = a.row(i);
            for comp in 0..2 {
                for (&j, &aij) in cols.iter().zip(vals) {
                    let mij = disc.mass.get(i, j);
                    // Row block of (ν + iα) A + (2/τ - γ) M acting on (Re, Im).
                    let block = [[p.nu * aij + shift * mij, -p.alpha * aij], [p.alpha * aij, p.nu * aij + shift * mij]];
                    col_idx.extend([2 * j, 2 * j + 1]);
                    linear_values.extend(block[comp]);
                }
                row_ptr[2 * i + comp + 1] = col_idx.len();
            }
        }
        let jac = SparseOperator {
            nrows: 2 * n,
            ncols: 2 * n,
            row_ptr,
            col_idx,
            values: linear_values.clone(),
            symmetric: false,
        };
        let nb = space.dofs_per_element();
        let element_positions = (0..space.mesh().num_elements())
            .map(|e| {
                let dofs = space.element_dofs(e);
                let mut pos = Vec::with_capacity(nb * nb);
                for i in dofs.clone() {
                    for j in dofs.clone() {
                        pos.push(a.position(i, j).expect("element block present in stiffness pattern"));
                    }
                }
                pos
            })
            .collect();
        Ok(CnStepper { disc, cfg, jac, linear_values, element_positions, solver: LinearSolver::new(cfg.linear_solver) })
    }

    pub fn config(&self) -> &StepConfig {
        &self.cfg
    }

    /// `(f(·, t), φ_i)`.
    /// Weak source for the step starting at `t_prev`, per the configured rule.
    pub fn step_load(&self, t_prev: f64) -> Vec<Complex64> {
        let tau = self.cfg.tau;
        match self.cfg.source_rule {
            SourceRule::Midpoint => self.load(t_prev + 0.5 * tau),
            SourceRule::Average => {
                let (a, b) = (self.load(t_prev), self.load(t_prev + tau));
                a.iter().zip(&b).map(|(a, b)| 0.5 * (a + b)).collect()
            }
        }
    }

    pub fn load(&self, t: f64) -> Vec<Complex64> {
        if self.disc.case.homogeneous {
            return vec![Complex64::new(0.0, 0.0); self.disc.space.num_dofs()];
        }
        self.disc.space.load_vector(|p| self.disc.case.source(p, t))
    }

    /// Complex residual of the averaged scheme at `ŵ`.
    pub fn residual(&self, w_hat: &[Complex64], u_prev: &[Complex64], load: &[Complex64]) -> Vec<Complex64> {
        let d = self.disc;
        let p = d.params();
        let field = ComplexField { coeffs: w_hat.to_vec() };
        let diff: Vec<Complex64> = w_hat.iter().zip(u_prev).map(|(w, u)| w - u).collect();
        let m_diff = d.mass.apply_complex(&diff);
        let m_w = d.mass.apply_complex(w_hat);
        let a_w = d.stiffness.apply_complex(w_hat);
        let c_w = cubic_weak(&d.space, &field);
        let (diffusion, nonlin) = (p.diffusion(), p.nonlinearity());
        (0..w_hat.len())
            .map(|i| {
                (2.0 / self.cfg.tau) * m_diff[i] + diffusion * a_w[i] + nonlin * c_w[i] - p.gamma * m_w[i] - load[i]
            })
            .collect()
    }

    /// Fills `jac` with the real Jacobian of the residual at `ŵ`.
    ///
    /// With `lagged` set, the cubic term is replaced by its lagged-modulus
    /// linearization `(κ+iβ)|w|² ·`, which gives the fixed-point operator.
    fn assemble_into(&self, w_hat: &[Complex64], jac: &mut SparseOperator, lagged: bool) {
        let d = self.disc;
        let p = d.params();
        let space = &d.space;
        let nb = space.dofs_per_element();
        let quad = space.volume_quadrature();
        jac.values.copy_from_slice(&self.linear_values);
        let a = &d.stiffness;
        let rot = [[p.kappa, -p.beta], [p.beta, p.kappa]];
        let mut local = vec![[[0.0; 2]; 2]; nb * nb];
        for e in 0..space.mesh().num_elements() {
            let dofs = space.element_dofs(e);
            let c = &w_hat[dofs.clone()];
            let det = space.geometry(e).det;
            local.iter_mut().for_each(|b| *b = [[0.0; 2]; 2]);
            for (q, &wq) in quad.rule.weights.iter().enumerate() {
                let phi = quad.table.values_at(q);
                let w = dot(c, phi);
                let dn = if lagged {
                    let m = w.norm_sqr();
                    [[m, 0.0], [0.0, m]]
                } else {
                    cubic_jacobian_block(w)
                };
                let k = matmul2(rot, dn);
                for aa in 0..nb {
                    let s = wq * det * phi[aa];
                    for bb in 0..nb {
                        let f = s * phi[bb];
                        let blk = &mut local[aa * nb + bb];
                        for r in 0..2 {
                            for cc in 0..2 {
                                blk[r][cc] += f * k[r][cc];
                            }
                        }
                    }
                }
            }
            for (li, i) in dofs.clone().enumerate() {
                let row_start = a.row_ptr[i];
                let len = a.row_ptr[i + 1] - row_start;
                for lj in 0..nb {
                    let o = self.element_positions[e][li * nb + lj] - row_start;
                    let blk = &local[li * nb + lj];
                    let base0 = 4 * row_start + 2 * o;
                    let base1 = 4 * row_start + 2 * len + 2 * o;
                    jac.values[base0] += blk[0][0];
                    jac.values[base0 + 1] += blk[0][1];
                    jac.values[base1] += blk[1][0];
                    jac.values[base1 + 1] += blk[1][1];
                }
            }
        }
    }

    /// Real Jacobian at `ŵ` as a fresh operator.
    pub fn jacobian(&self, w_hat: &[Complex64]) -> SparseOperator {
        let mut jac = self.jac.clone();
        self.assemble_into(w_hat, &mut jac, false);
        jac
    }

    /// Residual norm scale: `max(‖(2/τ) M u_prev‖, ‖F‖)`.
    fn residual_scale(&self, u_prev: &[Complex64], load: &[Complex64]) -> f64 {
        let mu = self.disc.mass.apply_complex(u_prev);
        let a = (2.0 / self.cfg.tau) * mu.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        let b = load.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        a.max(b)
    }

    /// Solves for `ŵ` starting from `guess`.
    pub fn solve_average(
        &mut self,
        u_prev: &[Complex64],
        guess: &[Complex64],
        load: &[Complex64],
    ) -> Result<(Vec<Complex64>, StepReport)> {
        let scale = self.residual_scale(u_prev, load);
        let mut jac = std::mem::replace(&mut self.jac, SparseOperator::from_triplets(0, 0, vec![]));
        let mut solver = std::mem::replace(&mut self.solver, LinearSolver::new(self.cfg.linear_solver));
        let this = &*self;
        let outcome = newton_solve(
            |x| to_real(&this.residual(&to_complex(x), u_prev, load)),
            |x, j| this.assemble_into(&to_complex(x), j, false),
            &mut jac,
            to_real(guess),
            scale,
            this.cfg.newton_tol,
            this.cfg.newton_max_iter,
            &mut solver,
        );
        let result = match outcome {
            Ok(o) => Ok((
                to_complex(&o.solution),
                StepReport {
                    newton_iterations: o.iterations,
                    final_residual: *o.history.last().unwrap_or(&0.0),
                    residual_history: o.history,
                    linear_iterations: o.linear_iterations,
                    ..StepReport::default()
                },
            )),
            Err(err @ Error::NewtonDiverged { .. }) if this.cfg.fixed_point_fallback => {
                log::warn!("Newton failed ({err}); falling back to fixed-point iteration");
                let (iterations, history) = match &err {
                    Error::NewtonDiverged { iterations, history, .. } => (*iterations, history.clone()),
                    _ => unreachable!(),
                };
                this.fixed_point(u_prev, guess, load, scale, &mut jac, &mut solver).map(|(w, mut rep)| {
                    rep.newton_iterations = iterations;
                    let mut h = history;
                    h.append(&mut rep.residual_history);
                    rep.residual_history = h;
                    (w, rep)
                })
            }
            Err(e) => Err(e),
        };
        self.jac = jac;
        self.solver = solver;
        result
    }

    fn fixed_point(
        &self,
        u_prev: &[Complex64],
        guess: &[Complex64],
        load: &[Complex64],
        scale: f64,
        jac: &mut SparseOperator,
        solver: &mut LinearSolver,
    ) -> Result<(Vec<Complex64>, StepReport)> {
        let mass_prev = self.disc.mass.apply_complex(u_prev);
        let rhs: Vec<Complex64> = mass_prev.iter().zip(load).map(|(m, f)| (2.0 / self.cfg.tau) * m + f).collect();
        let rhs = to_real(&rhs);
        let mut w = guess.to_vec();
        let mut history = Vec::new();
        let mut linear_iterations = 0;
        let tol = self.cfg.newton_tol * scale;
        for it in 1..=self.cfg.fixed_point_max_iter {
            self.assemble_into(&w, jac, true);
            let (x, stats) = solver.solve(jac, &rhs)?;
            linear_iterations += stats.iterations;
            w = to_complex(&x);
            let r = norm(&to_real(&self.residual(&w, u_prev, load)));
            history.push(r / scale.max(f64::MIN_POSITIVE));
            if !r.is_finite() {
                break;
            }
            if r <= tol {
                return Ok((
                    w,
                    StepReport {
                        final_residual: r / scale.max(f64::MIN_POSITIVE),
                        residual_history: history,
                        linear_iterations,
                        fixed_point_iterations: it,
                        used_fallback: true,
                        ..StepReport::default()
                    },
                ));
            }
        }
        Err(Error::NewtonDiverged {
            iterations: history.len(),
            last_residual: history.last().copied().unwrap_or(f64::NAN),
            history,
            last_iterate: w,
        })
    }

    /// One Crank–Nicolson step from level `n-1` at time `t_prev`.
    pub fn step(&mut self, u_prev: &ComplexField, t_prev: f64) -> Result<(ComplexField, StepReport)> {
        if !u_prev.is_finite() {
            return Err(Error::InvalidInput("previous level has non-finite coefficients".into()));
        }
        let start = Instant::now();
        let load = self.step_load(t_prev);
        let (w_hat, mut report) = self.solve_average(&u_prev.coeffs, &u_prev.coeffs, &load)?;
        let next = w_hat.iter().zip(&u_prev.coeffs).map(|(w, u)| 2.0 * w - u).collect();
        report.t = t_prev + self.cfg.tau;
        report.seconds = start.elapsed().as_secs_f64();
        Ok((ComplexField { coeffs: next }, report))
    }
}

fn matmul2(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [
        [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
        [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
    ]
}

/// One step with freshly assembled solver state.
pub fn cn_step(
    disc: &Discretization,
    u_prev: &ComplexField,
    t_prev: f64,
    cfg: StepConfig,
) -> Result<(ComplexField, StepReport)> {
    disc.stepper(cfg)?.step(u_prev, t_prev)
}

/// Real-part energy balance of one homogeneous step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBalance {
    /// `(‖u^n‖² - ‖u^{n-1}‖²)/(2τ) + ν a_h(ŵ,ŵ) + κ‖ŵ‖₄⁴ - γ‖ŵ‖² - Re(f, ŵ)`
    pub residual: f64,
    /// Sum of the magnitudes of the individual terms.
    pub scale: f64,
}

pub fn energy_balance(
    disc: &Discretization,
    u_prev: &ComplexField,
    u_next: &ComplexField,
    tau: f64,
    load: &[Complex64],
) -> EnergyBalance {
    let space = &disc.space;
    let p = disc.params();
    let w = ComplexField { coeffs: u_prev.coeffs.iter().zip(&u_next.coeffs).map(|(a, b)| 0.5 * (a + b)).collect() };
    let dt = (space.l2_norm(u_next).powi(2) - space.l2_norm(u_prev).powi(2)) / (2.0 * tau);
    let ah = disc.stiffness.form(&w.coeffs, &w.coeffs).re;
    let l4 = space.lp_norm(&w, 4).expect("p = 4 supported").powi(4);
    let l2 = space.l2_norm(&w).powi(2);
    let f: f64 = load.iter().zip(&w.coeffs).map(|(f, w)| (f * w.conj()).re).sum();
    let terms = [dt, p.nu * ah, p.kappa * l4, -p.gamma * l2, -f];
    EnergyBalance { residual: terms.iter().sum(), scale: terms.iter().map(|t| t.abs()).sum() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{Mesh, Rect};
    use crate::model::{case_by_name, ExactSolution, SineMode};
    use std::sync::Arc;

    fn disc(case: ManufacturedCase, n: usize, k: usize) -> Discretization {
        let space = DGSpace::new(Arc::new(Mesh::build_structured(case.domain, n).unwrap()), k).unwrap();
        Discretization::new(space, case, SipgConfig::default_for_degree(k)).unwrap()
    }

    fn series(params: GLParams) -> ManufacturedCase {
        ManufacturedCase {
            name: "series".into(),
            solution: ExactSolution::SineSeries {
                modes: vec![
                    SineMode { p: 1, q: 1, coeff: Complex64::new(0.8, 0.3) },
                    SineMode { p: 2, q: 1, coeff: Complex64::new(-0.2, 0.4) },
                ],
            },
            domain: Rect::unit_square(),
            params,
            homogeneous: true,
        }
    }

    #[test]
    fn jacobian_matches_residual_differences() {
        let d = disc(case_by_name("example1").unwrap(), 2, 2);
        let st = d.stepper(StepConfig::new(0.1)).unwrap();
        let w = d.space.interpolate(|p| Complex64::new(p[0] + 0.3, p[0] * p[1] - 0.5));
        let u_prev = d.space.interpolate(|p| Complex64::new(p[1], 0.2));
        let load = st.load(0.05);
        let jac = st.jacobian(&w.coeffs);
        let x = to_real(&w.coeffs);
        let dir: Vec<f64> = (0..x.len()).map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.5).collect();
        let eps = 1e-6;
        let at = |s: f64| {
            let y: Vec<f64> = x.iter().zip(&dir).map(|(x, d)| x + s * d).collect();
            to_real(&st.residual(&to_complex(&y), &u_prev.coeffs, &load))
        };
        let (p, m) = (at(eps), at(-eps));
        let jd = jac.apply(&dir);
        let scale = norm(&jd);
        let err = p.iter().zip(&m).zip(&jd).map(|((p, m), j)| ((p - m) / (2.0 * eps) - j).powi(2)).sum::<f64>().sqrt();
        assert!(err <= 1e-5 * scale, "{err} vs {scale}");
    }

    #[test]
    fn zero_state_stays_zero() {
        let mut case = case_by_name("example1").unwrap();
        case.homogeneous = true;
        let d = disc(case, 3, 1);
        let zero = ComplexField::zeros(&d.space);
        let (next, rep) = cn_step(&d, &zero, 0.0, StepConfig::new(0.1)).unwrap();
        assert!(next.coeffs.iter().all(|z| z.norm() == 0.0));
        assert!(rep.newton_iterations <= 1);
    }

    #[test]
    fn homogeneous_decay() {
        let params = GLParams { gamma: -1.0, ..GLParams::default() };
        let d = disc(series(params), 4, 2);
        let cfg = StepConfig::new(0.05);
        let mut st = d.stepper(cfg).unwrap();
        let mut u = d.ritz(0.0).unwrap();
        for n in 0..5 {
            let (next, _) = st.step(&u, n as f64 * cfg.tau).unwrap();
            assert!(d.space.l2_norm(&next) <= d.space.l2_norm(&u) + 10.0 * cfg.newton_tol);
            u = next;
        }
    }

    #[test]
    fn pure_reaction_growth_factor() {
        let params = GLParams { nu: 1e-14, alpha: 0.0, kappa: 1e-14, beta: 0.0, gamma: 1.0, t_final: 1.0 };
        let d = disc(series(params), 3, 2);
        let tau = 0.2;
        let u = d.space.interpolate(|p| Complex64::new(p[0], 1.0 - p[1]));
        let (next, _) = cn_step(&d, &u, 0.0, StepConfig::new(tau)).unwrap();
        let g = (1.0 + 0.5 * tau) / (1.0 - 0.5 * tau);
        for (a, b) in next.coeffs.iter().zip(&u.coeffs) {
            assert!((a - g * b).norm() < 1e-9);
        }
    }

    #[test]
    fn newton_converges_quadratically() {
        let d = disc(case_by_name("example1").unwrap(), 8, 2);
        let u0 = d.ritz(0.0).unwrap();
        let (_, rep) = cn_step(&d, &u0, 0.0, StepConfig::new(1e-3)).unwrap();
        let h = &rep.residual_history;
        assert!(!rep.used_fallback && rep.newton_iterations <= 4, "{h:?}");
        for w in h.windows(2).filter(|w| w[0] < 1e-2 && w[1] > 1e-13) {
            assert!(w[1] <= 10.0 * w[0] * w[0], "{h:?}");
        }
    }

    #[test]
    fn solution_independent_of_guess() {
        let d = disc(case_by_name("example2").unwrap(), 4, 2);
        let mut st = d.stepper(StepConfig::new(0.1)).unwrap();
        let u0 = d.ritz(0.0).unwrap();
        let load = st.step_load(0.0);
        let (a, _) = st.solve_average(&u0.coeffs, &u0.coeffs, &load).unwrap();
        let zero = vec![Complex64::new(0.0, 0.0); u0.len()];
        let (b, _) = st.solve_average(&u0.coeffs, &zero, &load).unwrap();
        let diff = d.space.l2_norm(&ComplexField { coeffs: a.iter().zip(&b).map(|(a, b)| a - b).collect() });
        assert!(diff < 1e-9 * d.space.l2_norm(&u0));
    }

    #[test]
    fn energy_identity_holds() {
        let params = GLParams { gamma: 0.5, ..GLParams::default() };
        let d = disc(series(params), 4, 2);
        let cfg = StepConfig::new(0.1);
        let u0 = d.ritz(0.0).unwrap();
        let (u1, _) = cn_step(&d, &u0, 0.0, cfg).unwrap();
        let b = energy_balance(&d, &u0, &u1, cfg.tau, &vec![Complex64::new(0.0, 0.0); u0.len()]);
        assert!(b.residual.abs() <= 100.0 * cfg.newton_tol * b.scale, "{b:?}");
    }

    #[test]
    fn runs_are_bitwise_reproducible() {
        let mut case = case_by_name("example1").unwrap();
        case.params.t_final = 0.1;
        let d = disc(case, 4, 2);
        let a = d.run(StepConfig::new(0.05), |_, _| {}).unwrap();
        let b = d.run(StepConfig::new(0.05), |_, _| {}).unwrap();
        assert_eq!(a.final_field, b.final_field);
        assert_eq!(a.newton_total(), b.newton_total());
    }

    #[test]
    fn tighter_tolerance_barely_moves_errors() {
        let mut case = case_by_name("example1").unwrap();
        case.params.t_final = 0.1;
        let d = disc(case, 4, 2);
        let err = |tol: f64| {
            let cfg = StepConfig { newton_tol: tol, ..StepConfig::new(0.05) };
            let out = d.run(cfg, |_, _| {}).unwrap();
            let t = out.t_final;
            (d.space.l2_error(&out.final_field, |p| d.case.u(p, t)), out)
        };
        let (e1, _) = err(1e-11);
        let (e2, _) = err(5e-12);
        assert!((e1 - e2).abs() < 1e-3 * e1);
    }

    #[test]
    fn observer_sees_every_level() {
        let mut case = case_by_name("example2").unwrap();
        case.params.t_final = 0.3;
        let d = disc(case, 2, 1);
        let mut seen = Vec::new();
        let out = d.run(StepConfig::new(0.1), |_, r| seen.push(r.map(|r| r.n))).unwrap();
        assert_eq!(seen, vec![None, Some(1), Some(2), Some(3)]);
        assert!((out.t_final - 0.3).abs() < 1e-15);
    }

    #[test]
    fn step_count_must_be_integral() {
        assert_eq!(steps_for(1.0, 0.1).unwrap(), 10);
        assert!(steps_for(1.0, 0.3).is_err());
        assert!(steps_for(0.0, 0.1).is_err());
    }

    #[test]
    fn invalid_configurations() {
        assert!(StepConfig::new(0.0).validate().is_err());
        assert!(StepConfig { newton_tol: -1.0, ..StepConfig::new(0.1) }.validate().is_err());
        assert!(StepConfig::new(2.0).solvability_warning(1.0).is_some());
        assert!(StepConfig::new(1.0).solvability_warning(1.0).is_none());
    }

    #[test]
    fn non_finite_input_rejected() {
        let d = disc(case_by_name("example1").unwrap(), 1, 1);
        let mut u = ComplexField::zeros(&d.space);
        u.coeffs[0] = Complex64::new(f64::NAN, 0.0);
        assert!(matches!(cn_step(&d, &u, 0.0, StepConfig::new(0.1)), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn json_line_key_order() {
        let r = StepReport { n: 3, t: 0.5, newton_iterations: 2, final_residual: 1e-13, ..StepReport::default() };
        assert_eq!(r.to_json_line(), r#"{"n":3,"t":0.5,"newton_iters":2,"residual":1e-13}"#);
    }

    #[test]
    fn source_rules_differ_only_in_sampling() {
        let d = disc(case_by_name("example1").unwrap(), 2, 1);
        let mid = d.stepper(StepConfig::new(0.2)).unwrap();
        let avg = d.stepper(StepConfig { source_rule: SourceRule::Average, ..StepConfig::new(0.2) }).unwrap();
        let close = |a: Vec<Complex64>, b: Vec<Complex64>| a.iter().zip(&b).all(|(a, b)| (a - b).norm() < 1e-14);
        assert!(close(mid.step_load(0.4), mid.load(0.5)));
        let expect: Vec<Complex64> = avg.load(0.4).iter().zip(&avg.load(0.6)).map(|(a, b)| 0.5 * (a + b)).collect();
        assert!(close(avg.step_load(0.4), expect.clone()));
        assert!(!close(mid.step_load(0.4), expect));
    }
}
