//! Convergence studies over mesh or time-step refinements.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{ComplexField, DGSpace};
use crate::mesh::Mesh;
use crate::model::{case_by_name, ManufacturedCase};
use crate::sipg::{default_penalty, SipgConfig};
use crate::sparse::LinearSolverKind;
use crate::stepper::{Discretization, SourceRule, StepConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyMode {
    /// Refine the mesh; rows are labelled by `h`.
    Spatial,
    /// Refine the time step; rows are labelled by `τ`.
    Temporal,
}

/// How the parameter that is not being refined is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// Spatial studies: `N` steps to `T` at every mesh.
    FixedSteps { steps: usize },
    /// Temporal studies: the mesh cell size equals τ.
    TauEqualsH,
    /// Temporal studies: one fixed `cells × cells` mesh.
    FixedCells { cells: usize },
}

/// Optional overrides of the case's model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

impl ParamOverrides {
    pub fn apply(&self, case: &mut ManufacturedCase) {
        let p = &mut case.params;
        p.nu = self.nu.unwrap_or(p.nu);
        p.alpha = self.alpha.unwrap_or(p.alpha);
        p.kappa = self.kappa.unwrap_or(p.kappa);
        p.beta = self.beta.unwrap_or(p.beta);
        p.gamma = self.gamma.unwrap_or(p.gamma);
    }
}

/// Nonlinear and linear solver settings shared by every grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    #[serde(default = "default_newton_tol")]
    pub newton_tol: f64,
    #[serde(default = "default_newton_max_iter")]
    pub newton_max_iter: usize,
    #[serde(default = "default_true")]
    pub fixed_point_fallback: bool,
    #[serde(default)]
    pub linear_solver: LinearSolverKind,
    #[serde(default)]
    pub source_rule: SourceRule,
}

fn default_newton_tol() -> f64 {
    StepConfig::new(1.0).newton_tol
}
fn default_newton_max_iter() -> usize {
    StepConfig::new(1.0).newton_max_iter
}
fn default_true() -> bool {
    true
}

impl Default for SolverSettings {
    fn default() -> Self {
        let s = StepConfig::new(1.0);
        SolverSettings {
            newton_tol: s.newton_tol,
            newton_max_iter: s.newton_max_iter,
            fixed_point_fallback: s.fixed_point_fallback,
            linear_solver: s.linear_solver,
            source_rule: s.source_rule,
        }
    }
}

impl SolverSettings {
    pub fn step_config(&self, tau: f64) -> StepConfig {
        StepConfig {
            newton_tol: self.newton_tol,
            newton_max_iter: self.newton_max_iter,
            fixed_point_fallback: self.fixed_point_fallback,
            linear_solver: self.linear_solver,
            source_rule: self.source_rule,
            ..StepConfig::new(tau)
        }
    }
}

/// A convergence study.
///
/// `divisions` are cells per side (spatial) or `1/τ` (temporal).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyPlan {
    pub case: String,
    pub mode: StudyMode,
    pub k: usize,
    pub t_final: f64,
    pub divisions: Vec<usize>,
    pub coupling: Coupling,
    /// Penalty λ; defaults to `10 (k+1)²`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalty: Option<f64>,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default, skip_serializing_if = "is_default")]
    pub params: ParamOverrides,
    /// Fill the `seconds` column; off by default so that reports are reproducible byte for byte.
    #[serde(default)]
    pub record_timing: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

fn is_default(p: &ParamOverrides) -> bool {
    *p == ParamOverrides::default()
}

/// Concrete setup of one row of a study.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub label: String,
    pub param: f64,
    pub cells: usize,
    pub tau: f64,
    pub steps: usize,
}

impl StudyPlan {
    pub fn from_json(text: &str) -> Result<Self> {
        let plan: StudyPlan = serde_json::from_str(text)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn penalty(&self) -> f64 {
        self.penalty.unwrap_or_else(|| default_penalty(self.k))
    }

    pub fn resolved_case(&self) -> Result<ManufacturedCase> {
        let mut case = case_by_name(&self.case)?;
        self.params.apply(&mut case);
        case.params.t_final = self.t_final;
        case.validate()?;
        Ok(case)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if self.divisions.len() < 2 {
            return bad("orders need >= 2 grid points");
        }
        if self.divisions.windows(2).any(|w| w[0] >= w[1]) || self.divisions[0] == 0 {
            return bad("grid divisions must be positive and strictly increasing");
        }
        if self.k == 0 {
            return bad("polynomial degree must be >= 1");
        }
        if !(self.t_final.is_finite() && self.t_final > 0.0) {
            return bad("final time must be positive");
        }
        match (self.mode, self.coupling) {
            (StudyMode::Spatial, Coupling::FixedSteps { steps }) if steps > 0 => {}
            (StudyMode::Temporal, Coupling::TauEqualsH | Coupling::FixedCells { cells: 1.. }) => {}
            _ => return bad("coupling does not match study mode"),
        }
        SipgConfig { penalty: self.penalty() }.validate()?;
        let case = self.resolved_case()?;
        for point in self.grid_points(&case)? {
            crate::stepper::steps_for(self.t_final, point.tau)?;
        }
        Ok(())
    }

    pub fn grid_points(&self, case: &ManufacturedCase) -> Result<Vec<GridPoint>> {
        let width = case.domain.width();
        self.divisions
            .iter()
            .map(|&m| {
                Ok(match (self.mode, self.coupling) {
                    (StudyMode::Spatial, Coupling::FixedSteps { steps }) => GridPoint {
                        label: format!("{}/{m}", fmt_int(width)),
                        param: width / m as f64,
                        cells: m,
                        tau: self.t_final / steps as f64,
                        steps,
                    },
                    (StudyMode::Temporal, coupling) => {
                        let tau = 1.0 / m as f64;
                        let cells = match coupling {
                            Coupling::FixedCells { cells } => cells,
                            _ => {
                                let c = (width * m as f64).round();
                                if (c - width * m as f64).abs() > 1e-9 {
                                    return Err(Error::InvalidInput(format!(
                                        "tau = 1/{m} does not divide the domain width {width}"
                                    )));
                                }
                                c as usize
                            }
                        };
                        let steps = crate::stepper::steps_for(self.t_final, tau)?;
                        GridPoint { label: format!("1/{m}"), param: tau, cells, tau, steps }
                    }
                    _ => return Err(Error::InvalidInput("coupling does not match study mode".into())),
                })
            })
            .collect()
    }
}

fn fmt_int(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub label: String,
    /// `h` (spatial) or `τ` (temporal).
    pub param: f64,
    pub l2_error: f64,
    pub l2_order: Option<f64>,
    pub dg_error: f64,
    pub dg_order: Option<f64>,
    pub newton_total: usize,
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub case: String,
    pub mode: StudyMode,
    pub k: usize,
    pub t_final: f64,
    pub penalty: f64,
    pub coupling: Coupling,
    pub newton_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub metadata: ReportMetadata,
    pub rows: Vec<ConvergenceRow>,
}

/// `log(e_prev / e) / log(m_prev / m)`.
pub fn observed_order(e_prev: f64, e: f64, m_prev: f64, m: f64) -> f64 {
    (e_prev / e).ln() / (m_prev / m).ln()
}

impl ConvergenceReport {
    pub fn from_rows(metadata: ReportMetadata, mut rows: Vec<ConvergenceRow>) -> Self {
        for i in 0..rows.len() {
            if i == 0 {
                rows[i].l2_order = None;
                rows[i].dg_order = None;
            } else {
                let (p, c) = (&rows[i - 1], &rows[i]);
                let l2 = observed_order(p.l2_error, c.l2_error, p.param, c.param);
                let dg = observed_order(p.dg_error, c.dg_error, p.param, c.param);
                rows[i].l2_order = Some(l2);
                rows[i].dg_order = Some(dg);
            }
        }
        ConvergenceReport { metadata, rows }
    }

    pub fn finest_orders(&self) -> (f64, f64) {
        let last = self.rows.last().expect("report has rows");
        (last.l2_order.unwrap_or(f64::NAN), last.dg_order.unwrap_or(f64::NAN))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("param,l2_error,l2_order,dg_error,dg_order,newton_total,seconds\n");
        let opt = |v: Option<f64>, prec: usize| v.map_or(String::new(), |v| format!("{v:.prec$}"));
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.10e},{},{:.10e},{},{},{}",
                r.param,
                r.l2_error,
                opt(r.l2_order, 4),
                r.dg_error,
                opt(r.dg_order, 4),
                r.newton_total,
                opt(r.seconds, 3),
            );
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let m = &self.metadata;
        let symbol = match m.mode {
            StudyMode::Spatial => "h",
            StudyMode::Temporal => "τ",
        };
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} convergence, {}, k = {}, T = {:e}, λ = {}\n",
            match m.mode {
                StudyMode::Spatial => "Spatial",
                StudyMode::Temporal => "Temporal",
            },
            m.case,
            m.k,
            m.t_final,
            m.penalty
        );
        let _ = writeln!(out, "| {symbol} | ‖u^N - u_h^N‖ | Order | ‖u^N - u_h^N‖_DG | Order |");
        let _ = writeln!(out, "|---|---|---|---|---|");
        let ord = |v: Option<f64>| v.map_or("--".to_string(), |v| format!("{v:.4}"));
        for r in &self.rows {
            let _ = writeln!(
                out,
                "| {} | {:.4e} | {} | {:.4e} | {} |",
                r.label,
                r.l2_error,
                ord(r.l2_order),
                r.dg_error,
                ord(r.dg_order)
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
    Json,
}

pub fn render(report: &ConvergenceReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => report.to_csv(),
        ReportFormat::Markdown => report.to_markdown(),
        ReportFormat::Json => report.to_json(),
    }
}

/// Errors of the discrete solution at time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinalErrors {
    pub l2: f64,
    pub dg: f64,
}

pub fn final_errors(disc: &Discretization, u_h: &ComplexField, t: f64) -> FinalErrors {
    let case = &disc.case;
    FinalErrors {
        l2: disc.space.l2_error(u_h, |p| case.u(p, t)),
        dg: disc.space.dg_error(u_h, |p| case.u(p, t), |p| case.gradient(p, t)),
    }
}

/// Splitting of the error through the Ritz projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSplit {
    /// `‖u - R_h u‖`
    pub xi_l2: f64,
    /// `‖R_h u - u_h‖`
    pub eta_l2: f64,
    /// `‖R_h u - u_h‖_DG`
    pub eta_dg: f64,
}

pub fn error_split(disc: &Discretization, t: f64, u_h: &ComplexField) -> Result<ErrorSplit> {
    let ritz = disc.ritz(t)?;
    let eta = ritz.sub(u_h);
    Ok(ErrorSplit {
        xi_l2: disc.space.l2_error(&ritz, |p| disc.case.u(p, t)),
        eta_l2: disc.space.l2_norm(&eta),
        eta_dg: disc.space.dg_norm(&eta),
    })
}

/// Outcome of one grid point, kept alongside the row for diagnostics.
#[derive(Debug, Clone)]
pub struct GridRun {
    pub point: GridPoint,
    pub row: ConvergenceRow,
    pub split: Option<ErrorSplit>,
}

pub fn run_grid_point(
    plan: &StudyPlan,
    case: &ManufacturedCase,
    point: &GridPoint,
    with_split: bool,
) -> Result<GridRun> {
    let start = Instant::now();
    let wrap = |e: Error| Error::AtGridPoint { label: point.label.clone(), inner: Box::new(e) };
    let mesh = Mesh::build_structured(case.domain, point.cells).map_err(wrap)?;
    let space = DGSpace::new(Arc::new(mesh), plan.k).map_err(wrap)?;
    let disc = Discretization::new(space, case.clone(), SipgConfig { penalty: plan.penalty() }).map_err(wrap)?;
    let cfg = plan.solver.step_config(point.tau);
    let u0 = disc.ritz(0.0).map_err(|e| wrap(Error::AtLevel { level: 0, inner: Box::new(e) }))?;
    let out = disc.run_from(u0, cfg, point.steps, &mut |_, _| {}).map_err(wrap)?;
    let errors = final_errors(&disc, &out.final_field, out.t_final);
    let split = if with_split { Some(error_split(&disc, out.t_final, &out.final_field).map_err(wrap)?) } else { None };
    let seconds = start.elapsed().as_secs_f64();
    log::info!(
        "{} {}: L2 {:.4e} DG {:.4e} ({} Newton iterations, {:.1}s)",
        case.name,
        point.label,
        errors.l2,
        errors.dg,
        out.newton_total(),
        seconds
    );
    Ok(GridRun {
        point: point.clone(),
        row: ConvergenceRow {
            label: point.label.clone(),
            param: point.param,
            l2_error: errors.l2,
            l2_order: None,
            dg_error: errors.dg,
            dg_order: None,
            newton_total: out.newton_total(),
            seconds: plan.record_timing.then_some(seconds),
        },
        split,
    })
}

/// Runs every grid point of the plan. `threads = 0` runs sequentially.
pub fn run_study(plan: &StudyPlan, threads: usize) -> Result<ConvergenceReport> {
    Ok(run_study_detailed(plan, threads, false)?.0)
}

pub fn run_study_detailed(
    plan: &StudyPlan,
    threads: usize,
    with_split: bool,
) -> Result<(ConvergenceReport, Vec<GridRun>)> {
    plan.validate()?;
    let case = plan.resolved_case()?;
    let points = plan.grid_points(&case)?;
    let runs: Vec<Result<GridRun>> = if threads <= 1 {
        points.iter().map(|p| run_grid_point(plan, &case, p, with_split)).collect()
    } else {
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<GridRun>>>> = Mutex::new((0..points.len()).map(|_| None).collect());
        std::thread::scope(|s| {
            for _ in 0..threads.min(points.len()) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= points.len() {
                        break;
                    }
                    let r = run_grid_point(plan, &case, &points[i], with_split);
                    slots.lock().expect("result slots")[i] = Some(r);
                });
            }
        });
        slots.into_inner().expect("result slots").into_iter().map(|r| r.expect("every point ran")).collect()
    };
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let metadata = ReportMetadata {
        case: plan.case.clone(),
        mode: plan.mode,
        k: plan.k,
        t_final: plan.t_final,
        penalty: plan.penalty(),
        coupling: plan.coupling,
        newton_tol: plan.solver.newton_tol,
    };
    let report = ConvergenceReport::from_rows(metadata, runs.iter().map(|r| r.row.clone()).collect());
    Ok((report, runs))
}
