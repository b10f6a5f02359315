//! Run configuration: JSON file, overridden field by field by flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use staircase_core::realizer::OscParams;
use staircase_core::schedule::Precision;
use staircase_core::staircase::{p_critical, CertOptions, ParamPoint};
use staircase_core::{Error, ProfileConfig, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(rename = "Lambda", default = "default_big_lambda")]
    pub big_lambda: f64,
    /// Defaults to `0.99·p_crit`.
    #[serde(default)]
    pub p: Option<f64>,
    /// Defaults to `(p_crit − p)/20`.
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default = "default_sharpness")]
    pub sharpness: f64,
    #[serde(rename = "P0", default = "ParamPoint::center")]
    pub p0: ParamPoint,
    /// Number of simulated stages.
    #[serde(rename = "L", default = "default_stages")]
    pub stages: u32,
    #[serde(default = "default_depth")]
    pub realize_depth: u32,
    #[serde(default)]
    pub osc: OscParams,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub precision: Precision,
    /// Largest stage checked by `verify`.
    #[serde(default = "default_ell_max")]
    pub ell_max: u32,
    #[serde(default)]
    pub cert: CertOptions,
}

fn default_lambda() -> f64 {
    1.0
}
fn default_big_lambda() -> f64 {
    4.0
}
fn default_sharpness() -> f64 {
    1.0
}
fn default_stages() -> u32 {
    40
}
fn default_depth() -> u32 {
    1
}
fn default_output() -> PathBuf {
    PathBuf::from("staircase-out")
}
fn default_ell_max() -> u32 {
    50
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

/// Field overrides collected from the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub lambda: Option<f64>,
    pub big_lambda: Option<f64>,
    pub p: Option<f64>,
    pub delta: Option<f64>,
    pub sharpness: Option<f64>,
    pub p0: Option<[f64; 3]>,
    pub stages: Option<u32>,
    pub realize_depth: Option<u32>,
    pub theta: Option<f64>,
    pub eta: Option<f64>,
    pub sup_budget: Option<f64>,
    pub output: Option<PathBuf>,
    pub precision: Option<Precision>,
    pub ell_max: Option<u32>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, ov: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        cfg.apply(ov);
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, ov: &Overrides) {
        macro_rules! set {
            ($($field:ident),*) => { $(if let Some(v) = ov.$field.clone() { self.$field = v; })* };
        }
        set!(
            lambda,
            big_lambda,
            sharpness,
            stages,
            realize_depth,
            output,
            precision,
            ell_max
        );
        if ov.p.is_some() {
            self.p = ov.p;
        }
        if ov.delta.is_some() {
            self.delta = ov.delta;
        }
        if let Some([a0p, a0m, b]) = ov.p0 {
            self.p0 = ParamPoint { a0p, a0m, b };
        }
        if let Some(t) = ov.theta {
            self.osc.theta = t;
        }
        if let Some(e) = ov.eta {
            self.osc.eta = e;
        }
        if ov.sup_budget.is_some() {
            self.osc.sup_budget = ov.sup_budget;
        }
    }

    pub fn profile(&self) -> Result<ProfileConfig> {
        ProfileConfig::new(self.lambda, self.big_lambda, self.sharpness)
    }

    pub fn p_crit(&self) -> f64 {
        p_critical(self.lambda, self.big_lambda)
    }

    pub fn exponent(&self) -> f64 {
        self.p.unwrap_or(0.99 * self.p_crit())
    }

    pub fn gap(&self) -> f64 {
        self.delta
            .unwrap_or_else(|| (self.p_crit() - self.exponent()) / 20.0)
    }

    /// Re-checks every invariant the core modules rely on.
    pub fn validate(&self) -> Result<()> {
        self.profile()?;
        let (p, d, pc) = (self.exponent(), self.gap(), self.p_crit());
        if !(p > 1.0 && p < pc) {
            return Err(Error::Config(format!(
                "need 1 < p < p_crit = {pc}, got p = {p}"
            )));
        }
        if !(d > 0.0 && p + 2.0 * d < pc) {
            return Err(Error::Config(format!(
                "need delta > 0 and p + 2 delta < p_crit = {pc}, got delta = {d}"
            )));
        }
        if !self.p0.in_box() {
            return Err(Error::Config(format!(
                "P0 = ({}, {}, {}) outside (1,2)x(1,2)x(-1,1)",
                self.p0.a0p, self.p0.a0m, self.p0.b
            )));
        }
        if self.stages == 0 {
            return Err(Error::Config("L must be at least 1".into()));
        }
        if !(1..=4).contains(&self.realize_depth) {
            return Err(Error::Config(format!(
                "realize_depth must lie in 1..=4, got {}",
                self.realize_depth
            )));
        }
        let o = &self.osc;
        if !(o.theta > 0.0 && o.eta > 0.0 && o.eta < 1.0 && o.skip_weight >= 0.0 && o.cell_cap > 0)
        {
            return Err(Error::Config(format!(
                "invalid oscillation parameters {o:?}"
            )));
        }
        if o.sup_budget.is_some_and(|e| !(e > 0.0)) {
            return Err(Error::Config("sup_budget must be positive".into()));
        }
        if self.ell_max == 0 {
            return Err(Error::Config("ell_max must be at least 1".into()));
        }
        Ok(())
    }
}
