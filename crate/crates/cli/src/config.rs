use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use glcn_core::harness::{ParamOverrides, SolverSettings};
use glcn_core::{case_by_name, ManufacturedCase, Rect, StepConfig};
use serde::{Deserialize, Serialize};

/// Settings of a single `run`. Every field may come from a JSON file or a flag.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Cells per side.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Cell width; must divide the domain width.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_final: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalty: Option<f64>,
    #[serde(default, skip_serializing_if = "is_default_params")]
    pub params: ParamOverrides,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub homogeneous: bool,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Write a field snapshot every this many steps (requires `output_dir`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_every: Option<usize>,
}

fn is_default_params(p: &ParamOverrides) -> bool {
    *p == ParamOverrides::default()
}

/// A configuration with every choice made.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedRun {
    pub case: ManufacturedCase,
    pub k: usize,
    pub n: usize,
    pub tau: f64,
    pub steps: usize,
    pub penalty: f64,
    pub step: StepConfig,
    pub output_dir: Option<PathBuf>,
    pub snapshot_every: Option<usize>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Fields set in `other` replace those in `self`; solver settings are kept.
    pub fn merge(mut self, other: RunConfig) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(case, k, n, h, tau, steps, t_final, penalty, output_dir, snapshot_every);
        let p = &mut self.params;
        let o = other.params;
        p.nu = o.nu.or(p.nu);
        p.alpha = o.alpha.or(p.alpha);
        p.kappa = o.kappa.or(p.kappa);
        p.beta = o.beta.or(p.beta);
        p.gamma = o.gamma.or(p.gamma);
        self.homogeneous |= other.homogeneous;
        self
    }

    pub fn resolve(&self) -> anyhow::Result<ResolvedRun> {
        let Some(name) = &self.case else { bail!("no case given (use --case example1 or --case example2)") };
        let mut case = case_by_name(name)?;
        self.params.apply(&mut case);
        case.homogeneous = self.homogeneous;
        let k = self.k.unwrap_or(1);
        if k == 0 {
            bail!("polynomial degree k must be at least 1");
        }
        let n = match (self.n, self.h) {
            (Some(_), Some(_)) => bail!("give only one of n and h"),
            (None, None) => bail!("mesh size missing (give n or h)"),
            (Some(0), _) => bail!("n must be positive"),
            (Some(n), None) => n,
            (None, Some(h)) => cells_for(case.domain, h)?,
        };
        let t_final = self.t_final.unwrap_or(case.params.t_final);
        let (tau, steps) = match (self.tau, self.steps) {
            (Some(_), Some(_)) => bail!("give only one of tau and steps"),
            (None, None) => bail!("time step missing (give tau or steps)"),
            (Some(tau), None) => {
                if !(tau.is_finite() && tau > 0.0) {
                    bail!("tau must be positive and finite");
                }
                (tau, glcn_core::stepper::steps_for(t_final, tau)?)
            }
            (None, Some(0)) => bail!("steps must be positive"),
            (None, Some(steps)) => (t_final / steps as f64, steps),
        };
        case.params.t_final = t_final;
        case.validate()?;
        let penalty = self.penalty.unwrap_or_else(|| glcn_core::sipg::default_penalty(k));
        glcn_core::SipgConfig { penalty }.validate()?;
        let step = self.solver.step_config(tau);
        step.validate()?;
        if self.snapshot_every == Some(0) {
            bail!("snapshot interval must be positive");
        }
        Ok(ResolvedRun {
            case,
            k,
            n,
            tau,
            steps,
            penalty,
            step,
            output_dir: self.output_dir.clone(),
            snapshot_every: self.snapshot_every,
        })
    }
}

fn cells_for(rect: Rect, h: f64) -> anyhow::Result<usize> {
    if !(h.is_finite() && h > 0.0) {
        bail!("h must be positive and finite");
    }
    let ratio = rect.width() / h;
    let n = ratio.round();
    if n < 1.0 || (ratio - n).abs() > 1e-9 * n {
        bail!("h = {h} does not divide the domain width {}", rect.width());
    }
    Ok(n as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> RunConfig {
        RunConfig { case: Some("example1".into()), k: Some(2), n: Some(4), steps: Some(2), ..Default::default() }
    }

    #[test]
    fn flags_win() {
        let file = RunConfig { k: Some(3), t_final: Some(0.5), ..base() };
        let flags = RunConfig { k: Some(1), ..Default::default() };
        let merged = file.merge(flags);
        assert_eq!(merged.k, Some(1));
        assert_eq!(merged.t_final, Some(0.5));
    }

    #[test]
    fn exactly_one_of_each_pair() {
        assert!(RunConfig { h: Some(0.25), ..base() }.resolve().is_err());
        assert!(RunConfig { tau: Some(0.5), ..base() }.resolve().is_err());
        assert!(RunConfig { n: None, ..base() }.resolve().is_err());
        let r = RunConfig { n: None, h: Some(0.25), ..base() }.resolve().unwrap();
        assert_eq!(r.n, 4);
        assert!(RunConfig { n: None, h: Some(0.3), ..base() }.resolve().is_err());
    }

    #[test]
    fn tau_must_divide_t_final() {
        let cfg = RunConfig { steps: None, tau: Some(0.3), t_final: Some(1.0), ..base() };
        assert!(cfg.resolve().is_err());
    }

    #[test]
    fn round_trip_is_idempotent() {
        let text =
            r#"{"case":"example2","k":3,"h":0.25,"tau":0.1,"t_final":1.0,"params":{"gamma":-1.0},"homogeneous":true}"#;
        let once = serde_json::to_string(&serde_json::from_str::<RunConfig>(text).unwrap()).unwrap();
        let twice = serde_json::to_string(&serde_json::from_str::<RunConfig>(&once).unwrap()).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"cse":"example1"}"#).is_err());
    }
}
