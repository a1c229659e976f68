//! Scenario files: one TOML document with `metadata`, `system`,
//! `uncertainty`, `controller`, `lkf` and `sim` sections. Matrices are
//! flat row-major arrays.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{ControllerSpec, StaParams};
use crate::dde::{InitialFunction, Scheme, SimConfig, DEFAULT_DIVERGENCE_CEILING};
use crate::lyapunov::QuadraticLkf;
use crate::model::{
    example, DelaySystem, ModelError, NominalLaw, Uncertainty, UncertaintyContext, UncertaintyRegistry,
    DEFAULT_RANK_TOL,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Parse(String),
    #[error("invalid `{key}`: {message}")]
    Invalid { key: String, message: String },
}

fn invalid(key: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        key: key.to_owned(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub name: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    /// State dimension.
    pub n: usize,
    /// Input dimension.
    pub k: usize,
    /// `0 = h_0 < h_1 < … < h_m`.
    pub delays: Vec<f64>,
    /// One `n × n` matrix per delay.
    pub a: Vec<Vec<f64>>,
    /// `n × k`.
    pub b: Vec<f64>,
    /// Nominal gains, one `k × n` matrix per delay.
    pub gains: Vec<Vec<f64>>,
    #[serde(default)]
    pub rank_tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncertaintySection {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    /// `none`, `unit`, `boundary_layer` or `sta_lr`.
    pub kind: String,
    #[serde(default)]
    pub eps_bl: Option<f64>,
    #[serde(default)]
    pub delta_g: Option<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default)]
    pub k3: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LkfSection {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    /// Defaults to the first nonzero delay.
    #[serde(default)]
    pub h: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhiSection {
    /// `constant`, `sine`, `cosine` or `linear`.
    pub kind: String,
    pub value: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub step: f64,
    pub t_final: f64,
    #[serde(default = "default_scheme")]
    pub scheme: String,
    #[serde(default)]
    pub rho0: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub divergence_ceiling: Option<f64>,
    pub phi: PhiSection,
}

fn default_scheme() -> String {
    "rk4".to_owned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub metadata: Metadata,
    pub system: SystemSection,
    pub uncertainty: UncertaintySection,
    pub controller: ControllerSection,
    pub lkf: LkfSection,
    pub sim: SimSection,
}

/// Everything a run needs, validated.
#[derive(Debug, Clone)]
pub struct BuiltScenario {
    pub system: DelaySystem,
    pub law: NominalLaw,
    pub uncertainty: Arc<dyn Uncertainty>,
    pub lkf: QuadraticLkf,
    pub controller: ControllerSpec,
    pub sim: SimConfig,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().iter().copied().collect()
}

fn matrix(key: &str, data: &[f64], rows: usize, cols: usize) -> Result<DMatrix<f64>, ScenarioError> {
    if data.len() != rows * cols {
        return Err(invalid(
            key,
            format!("expected {rows}x{cols} = {} entries, got {}", rows * cols, data.len()),
        ));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(invalid(key, "non-finite entry"));
    }
    Ok(DMatrix::from_row_slice(rows, cols, data))
}

impl Scenario {
    /// The two-state benchmark with one delay `h = 2`, `φ ≡ (1, 1)` and the
    /// super-twisting controller.
    pub fn example() -> Self {
        Self {
            metadata: Metadata {
                name: "example".into(),
                description: "two-state plant with one delay h = 2, matched delayed uncertainty".into(),
            },
            system: SystemSection {
                n: 2,
                k: 1,
                delays: vec![0.0, example::H],
                a: vec![row_major(&example::a0()), row_major(&example::a1())],
                b: row_major(&example::b()),
                gains: vec![row_major(&example::k0()), row_major(&example::k1())],
                rank_tol: None,
            },
            uncertainty: UncertaintySection {
                name: "example".into(),
                params: BTreeMap::new(),
            },
            controller: ControllerSection {
                kind: "sta_lr".into(),
                eps_bl: Some(example::EPS_BL),
                delta_g: Some(example::DELTA_G),
                beta: Some(example::BETA),
                eps: Some(example::EPS),
                k3: Some(example::K3),
            },
            lkf: LkfSection {
                p: row_major(&example::p()),
                q: row_major(&example::q()),
                r: row_major(&example::r()),
                h: None,
            },
            sim: SimSection {
                step: 1e-3,
                t_final: 100.0,
                scheme: "rk4".into(),
                rho0: None,
                seed: 0,
                divergence_ceiling: None,
                phi: PhiSection {
                    kind: "constant".into(),
                    value: vec![1.0, 1.0],
                },
            },
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Controller of the given kind with this scenario's parameters.
    pub fn controller_spec(&self, kind: &str) -> Result<ControllerSpec, ScenarioError> {
        let c = &self.controller;
        let need = |name: &str, v: Option<f64>| {
            v.ok_or_else(|| invalid(&format!("controller.{name}"), format!("required by `{kind}`")))
        };
        match kind {
            "none" => Ok(ControllerSpec::None),
            "unit" => Ok(ControllerSpec::Unit),
            "boundary_layer" => {
                let eps_bl = need("eps_bl", c.eps_bl)?;
                if !(eps_bl > 0.0) {
                    return Err(invalid("controller.eps_bl", format!("must be positive, got {eps_bl}")));
                }
                Ok(ControllerSpec::BoundaryLayer { eps_bl })
            }
            "sta_lr" => {
                let params = StaParams::new(
                    need("delta_g", c.delta_g)?,
                    need("beta", c.beta)?,
                    need("eps", c.eps)?,
                    need("k3", c.k3)?,
                )
                .map_err(|e| invalid("controller", e.to_string()))?;
                Ok(ControllerSpec::StaLr(params))
            }
            other => Err(invalid(
                "controller.kind",
                format!("unknown controller `{other}` (expected none, unit, boundary_layer or sta_lr)"),
            )),
        }
    }

    pub fn build(&self) -> Result<BuiltScenario, ScenarioError> {
        self.build_with(&UncertaintyRegistry::default())
    }

    /// Validates every section and their mutual consistency.
    pub fn build_with(&self, registry: &UncertaintyRegistry) -> Result<BuiltScenario, ScenarioError> {
        let s = &self.system;
        let (n, k) = (s.n, s.k);
        if n == 0 {
            return Err(invalid("system.n", "must be positive"));
        }
        if k == 0 || k > n {
            return Err(invalid("system.k", format!("must lie in 1..={n}, got {k}")));
        }
        if s.delays.is_empty() {
            return Err(invalid("system.delays", "at least the zero delay is required"));
        }
        if s.a.len() != s.delays.len() {
            return Err(invalid(
                "system.a",
                format!("{} matrices for {} delays", s.a.len(), s.delays.len()),
            ));
        }
        if s.gains.len() != s.delays.len() {
            return Err(invalid(
                "system.gains",
                format!("{} matrices for {} delays", s.gains.len(), s.delays.len()),
            ));
        }
        let a = s
            .a
            .iter()
            .enumerate()
            .map(|(j, m)| matrix(&format!("system.a[{j}]"), m, n, n))
            .collect::<Result<Vec<_>, _>>()?;
        let b = matrix("system.b", &s.b, n, k)?;
        let gains = s
            .gains
            .iter()
            .enumerate()
            .map(|(j, m)| matrix(&format!("system.gains[{j}]"), m, k, n))
            .collect::<Result<Vec<_>, _>>()?;
        let system = DelaySystem::new(a, b, s.delays.clone(), s.rank_tol.unwrap_or(DEFAULT_RANK_TOL))
            .map_err(|e| match e {
                ModelError::DelaysNotIncreasing(_) => invalid("system.delays", e.to_string()),
                ModelError::RankDeficientB { .. } => invalid("system.b", e.to_string()),
                ModelError::InvalidParameter(_) => invalid("system.rank_tol", e.to_string()),
                _ => invalid("system", e.to_string()),
            })?;
        let law = NominalLaw::new(&system, gains).map_err(|e| invalid("system.gains", e.to_string()))?;

        let h = match self.lkf.h {
            Some(h) => h,
            None => *s
                .delays
                .get(1)
                .ok_or_else(|| invalid("lkf.h", "required when the system has no delay"))?,
        };
        let lkf = QuadraticLkf::new(
            matrix("lkf.p", &self.lkf.p, n, n)?,
            matrix("lkf.q", &self.lkf.q, n, n)?,
            matrix("lkf.r", &self.lkf.r, n, n)?,
            h,
        )
        .map_err(|e| invalid("lkf", e.to_string()))?;

        let ctx = UncertaintyContext {
            system: &system,
            p: lkf.p(),
        };
        let uncertainty = registry
            .build(&self.uncertainty.name, &ctx, &self.uncertainty.params)
            .map_err(|e| match e {
                ModelError::UnknownUncertainty(_) => invalid("uncertainty.name", e.to_string()),
                _ => invalid("uncertainty.params", e.to_string()),
            })?;

        let controller = self.controller_spec(&self.controller.kind)?;

        let sim = self.sim_config(k)?;
        sim.validate(&system.lattice(), system.delays())
            .map_err(|e| invalid("sim.step", e.to_string()))?;

        Ok(BuiltScenario {
            system,
            law,
            uncertainty,
            lkf,
            controller,
            sim,
        })
    }

    fn sim_config(&self, k: usize) -> Result<SimConfig, ScenarioError> {
        let sim = &self.sim;
        let n = self.system.n;
        if sim.phi.value.len() != n {
            return Err(invalid(
                "sim.phi.value",
                format!("expected {n} entries, got {}", sim.phi.value.len()),
            ));
        }
        if sim.phi.value.iter().any(|v| !v.is_finite()) {
            return Err(invalid("sim.phi.value", "non-finite entry"));
        }
        let phi = InitialFunction::named(&sim.phi.kind, sim.phi.value.clone()).ok_or_else(|| {
            invalid(
                "sim.phi.kind",
                format!("unknown initial function `{}`", sim.phi.kind),
            )
        })?;
        let scheme = match sim.scheme.as_str() {
            "rk4" => Scheme::Rk4,
            "euler" => Scheme::Euler,
            other => return Err(invalid("sim.scheme", format!("unknown scheme `{other}`"))),
        };
        let rho0 = sim.rho0.clone().unwrap_or_else(|| vec![0.0; k]);
        if rho0.len() != k {
            return Err(invalid("sim.rho0", format!("expected {k} entries, got {}", rho0.len())));
        }
        let mut cfg = SimConfig::new(sim.step, sim.t_final, phi, k);
        cfg.scheme = scheme;
        cfg.rho0 = rho0;
        cfg.seed = sim.seed;
        cfg.divergence_ceiling = sim.divergence_ceiling.unwrap_or(DEFAULT_DIVERGENCE_CEILING);
        if !(cfg.t_final > 0.0) {
            return Err(invalid("sim.t_final", format!("must be positive, got {}", cfg.t_final)));
        }
        if !(cfg.divergence_ceiling > 0.0) {
            return Err(invalid("sim.divergence_ceiling", "must be positive"));
        }
        Ok(cfg)
    }
}
