//! Reduced super-twisting dynamics in isolation from the plant:
//!
//! ```text
//! ẇ = -k₁ξ₁(w) + z + d₁(t, w)
//! ż = -k₂ξ₂(w) + d₂(t, w)
//! ```
//!
//! with injected perturbations satisfying `‖d₁‖ ≤ ρ₁‖ξ₁(w)‖` and
//! `‖d₂‖ ≤ ρ₂‖ξ₂(w)‖`, plus the closed-form comparison solution that
//! bounds `V_st` along these runs.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::control::{sta_gains, xi1, xi2, StaParams};
use crate::lyapunov::{vst_value, StaCertificate};

pub const DEFAULT_STEP: f64 = 1e-4;
pub const DEFAULT_TOL_REACH: f64 = 1e-5;
/// Number of steps the reaching condition must hold for.
pub const REACH_WINDOW_STEPS: usize = 10;
const DIVERGENCE_CEILING: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("reduced run diverged at t = {t} (|(w, z)| = {norm:e})")]
    Diverged { t: f64, norm: f64 },
    #[error("perturbation {which} violates its bound at t = {t}: {value:e} > {bound:e}")]
    BoundViolated {
        which: &'static str,
        t: f64,
        value: f64,
        bound: f64,
    },
    #[error("invalid reduced scenario: {0}")]
    Invalid(String),
}

/// Vanishing perturbation in the `w` equation.
#[derive(Debug, Clone, PartialEq)]
pub enum D1Model {
    Zero,
    /// `d₁ = c ξ₁(w)`; requires `|c| ≤ ρ₁`.
    Proportional { c: f64 },
}

/// Perturbation in the `z` equation.
#[derive(Debug, Clone, PartialEq)]
pub enum D2Model {
    Zero,
    /// `a sin(ωt + φ) e`, scaled down whenever its norm exceeds `ρ₂‖ξ₂(w)‖`.
    Sinusoid {
        amplitude: f64,
        omega: f64,
        phase: f64,
        direction: DVector<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedScenario {
    pub w0: DVector<f64>,
    pub z0: DVector<f64>,
    pub d1: D1Model,
    pub d2: D2Model,
    pub rho1: f64,
    pub rho2: f64,
    pub params: StaParams,
    pub step: f64,
    pub t_final: f64,
    /// Threshold on `‖w‖`.
    pub tol_w: f64,
    /// Threshold on `‖z‖`; `None` selects [`default_tol_z`].
    pub tol_z: Option<f64>,
}

/// Step-scaled threshold on `‖z‖`: `max(1e-5, (k₂ + ρ₂)·step)`.
///
/// At a fixed step the discontinuous `ξ₂` keeps `z` chattering in a band of
/// width proportional to `k₂·step`, so a fixed `1e-5` is unreachable at the
/// default step while `w` still settles well below `1e-5`.
pub fn default_tol_z(k2: f64, rho2: f64, step: f64) -> f64 {
    DEFAULT_TOL_REACH.max((k2 + rho2) * step)
}

impl ReducedScenario {
    /// Unperturbed scenario with the default step and thresholds.
    pub fn unperturbed(w0: DVector<f64>, z0: DVector<f64>, params: StaParams, t_final: f64) -> Self {
        Self {
            w0,
            z0,
            d1: D1Model::Zero,
            d2: D2Model::Zero,
            rho1: 0.0,
            rho2: 0.0,
            params,
            step: DEFAULT_STEP,
            t_final,
            tol_w: DEFAULT_TOL_REACH,
            tol_z: None,
        }
    }

    pub fn k(&self) -> usize {
        self.w0.len()
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        let k = self.k();
        if k == 0 || self.z0.len() != k {
            return Err(OracleError::Invalid(format!(
                "w0 has length {k}, z0 has length {}",
                self.z0.len()
            )));
        }
        if !(self.rho1 >= 0.0 && self.rho2 >= 0.0) {
            return Err(OracleError::Invalid("rho1 and rho2 must be nonnegative".into()));
        }
        if !(self.step > 0.0 && self.t_final > 0.0 && self.tol_w > 0.0 && self.tol_z.is_none_or(|v| v > 0.0)) {
            return Err(OracleError::Invalid(
                "step, t_final and thresholds must be positive".into(),
            ));
        }
        if let D1Model::Proportional { c } = self.d1 {
            if c.abs() > self.rho1 {
                return Err(OracleError::Invalid(format!(
                    "|c| = {} exceeds rho1 = {}",
                    c.abs(),
                    self.rho1
                )));
            }
        }
        if let D2Model::Sinusoid { direction, .. } = &self.d2 {
            if direction.len() != k {
                return Err(OracleError::Invalid("d2 direction has the wrong length".into()));
            }
        }
        Ok(())
    }

    pub fn gains(&self) -> (f64, f64) {
        sta_gains(&self.params, self.rho1, self.rho2)
    }

    pub fn tol_z(&self) -> f64 {
        self.tol_z
            .unwrap_or_else(|| default_tol_z(self.gains().1, self.rho2, self.step))
    }

    pub fn certificate(&self) -> StaCertificate {
        StaCertificate::new(&self.params, &self.w0, &self.z0)
    }
}

/// One reduced run, stopped once the reaching condition has held for the
/// full window.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedRun {
    pub t: Vec<f64>,
    pub w: Vec<DVector<f64>>,
    pub z: Vec<DVector<f64>>,
    pub vst: Vec<f64>,
    pub k1: f64,
    pub k2: f64,
    pub t_reach: Option<f64>,
    pub certificate: StaCertificate,
}

struct Rhs<'a> {
    sc: &'a ReducedScenario,
    k1: f64,
    k2: f64,
    k3: f64,
}

impl Rhs<'_> {
    fn d1(&self, x1: &DVector<f64>) -> DVector<f64> {
        match self.sc.d1 {
            D1Model::Zero => DVector::zeros(x1.len()),
            D1Model::Proportional { c } => x1 * c,
        }
    }

    fn d2(&self, t: f64, x2: &DVector<f64>) -> DVector<f64> {
        match &self.sc.d2 {
            D2Model::Zero => DVector::zeros(x2.len()),
            D2Model::Sinusoid {
                amplitude,
                omega,
                phase,
                direction,
            } => {
                let raw = direction * (amplitude * (omega * t + phase).sin());
                let cap = self.sc.rho2 * x2.norm();
                let norm = raw.norm();
                if norm > cap {
                    raw * (cap / norm)
                } else {
                    raw
                }
            }
        }
    }

    fn eval(&self, t: f64, w: &DVector<f64>, z: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>), OracleError> {
        let x1 = xi1(w, self.k3);
        let x2 = xi2(w, self.k3);
        let d1 = self.d1(&x1);
        let d2 = self.d2(t, &x2);
        check_bound("d1", t, d1.norm(), self.sc.rho1 * x1.norm())?;
        check_bound("d2", t, d2.norm(), self.sc.rho2 * x2.norm())?;
        let dw = -&x1 * self.k1 + z + d1;
        let dz = -x2 * self.k2 + d2;
        Ok((dw, dz))
    }
}

fn check_bound(which: &'static str, t: f64, value: f64, bound: f64) -> Result<(), OracleError> {
    if value > bound * (1.0 + 1e-12) + 1e-300 {
        return Err(OracleError::BoundViolated {
            which,
            t,
            value,
            bound,
        });
    }
    Ok(())
}

/// Classical RK4 on `(w, z)` with gains fixed by the scenario's bounds.
pub fn simulate_reduced(sc: &ReducedScenario) -> Result<ReducedRun, OracleError> {
    sc.validate()?;
    let (k1, k2) = sc.gains();
    let p = &sc.params;
    let rhs = Rhs {
        sc,
        k1,
        k2,
        k3: p.k3(),
    };
    let h = sc.step;
    let steps = (sc.t_final / h).round() as usize;
    let vst = |w: &DVector<f64>, z: &DVector<f64>| vst_value(w, z, p.beta(), p.eps(), p.k3());

    let mut w = sc.w0.clone();
    let mut z = sc.z0.clone();
    let mut run = ReducedRun {
        t: vec![0.0],
        vst: vec![vst(&w, &z)],
        w: vec![w.clone()],
        z: vec![z.clone()],
        k1,
        k2,
        t_reach: None,
        certificate: sc.certificate(),
    };
    let tol_z = sc.tol_z();
    let inside = |w: &DVector<f64>, z: &DVector<f64>| w.norm() <= sc.tol_w && z.norm() <= tol_z;
    let mut streak_start = if inside(&w, &z) { Some(0usize) } else { None };

    for i in 0..steps {
        let t = i as f64 * h;
        let (a1, b1) = rhs.eval(t, &w, &z)?;
        let (a2, b2) = rhs.eval(t + 0.5 * h, &(&w + &a1 * (0.5 * h)), &(&z + &b1 * (0.5 * h)))?;
        let (a3, b3) = rhs.eval(t + 0.5 * h, &(&w + &a2 * (0.5 * h)), &(&z + &b2 * (0.5 * h)))?;
        let (a4, b4) = rhs.eval(t + h, &(&w + &a3 * h), &(&z + &b3 * h))?;
        w += (a1 + a2 * 2.0 + a3 * 2.0 + a4) * (h / 6.0);
        z += (b1 + b2 * 2.0 + b3 * 2.0 + b4) * (h / 6.0);
        let t_next = (i + 1) as f64 * h;
        let norm = (w.norm_squared() + z.norm_squared()).sqrt();
        if !norm.is_finite() || norm > DIVERGENCE_CEILING {
            return Err(OracleError::Diverged { t: t_next, norm });
        }
        run.t.push(t_next);
        run.vst.push(vst(&w, &z));
        run.w.push(w.clone());
        run.z.push(z.clone());
        if inside(&w, &z) {
            let s = *streak_start.get_or_insert(i + 1);
            if i + 1 - s >= REACH_WINDOW_STEPS {
                run.t_reach = Some(run.t[s]);
                break;
            }
        } else {
            streak_start = None;
        }
    }
    Ok(run)
}

/// Closed-form solution of `v̇ = -η₁√v - η₂v`, `v(0) = v₀`, held at zero
/// after the extinction time.
pub fn comparison_solution(eta1: f64, eta2: f64, vc0: f64, t: f64) -> f64 {
    assert!(eta1 > 0.0 && eta2 >= 0.0 && vc0 >= 0.0 && t >= 0.0, "invalid comparison arguments");
    let s = vc0.sqrt();
    if eta2 == 0.0 {
        let r = (s - 0.5 * eta1 * t).max(0.0);
        return r * r;
    }
    let r = s - eta1 / eta2 * (0.5 * eta2 * t).exp_m1();
    if r <= 0.0 {
        0.0
    } else {
        (-eta2 * t).exp() * r * r
    }
}

/// Largest excess `V_st(t) - v_c(t)` over the run up to reaching, with
/// `v_c` seeded at `V_st(0) + 1e-9`.
pub fn comparison_excess(run: &ReducedRun) -> f64 {
    let c = &run.certificate;
    let vc0 = run.vst[0] + 1e-9;
    let end = match run.t_reach {
        Some(tr) => run.t.partition_point(|&t| t <= tr),
        None => run.t.len(),
    };
    run.t[..end]
        .iter()
        .zip(&run.vst[..end])
        .map(|(&t, &v)| v - comparison_solution(c.eta1, c.eta2, vc0, t))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Ranges for randomized reduced scenarios.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomConfig {
    pub k3: f64,
    pub beta: f64,
    pub eps: f64,
    pub delta_g: f64,
    pub rho1_max: f64,
    pub rho2_max: f64,
    pub step: f64,
    pub t_final: f64,
    /// Initial `w`, `z` components are drawn from `[-scale, scale]`.
    pub init_scale: f64,
    pub tol_w: f64,
    pub tol_z: Option<f64>,
}

impl Default for RandomConfig {
    fn default() -> Self {
        Self {
            k3: 1.0,
            beta: 1.0,
            eps: 0.3,
            delta_g: 1.5,
            rho1_max: 0.5,
            rho2_max: 0.5,
            step: DEFAULT_STEP,
            t_final: 40.0,
            init_scale: 1.0,
            tol_w: DEFAULT_TOL_REACH,
            tol_z: None,
        }
    }
}

/// A compliant scenario: `k ∈ {1, 2, 3}`, `d₁ = 0.9ρ₁ξ₁(w)` and a clamped
/// sinusoidal `d₂`.
pub fn random_scenario(seed: u64, cfg: &RandomConfig) -> Result<ReducedScenario, OracleError> {
    let params = StaParams::new(cfg.delta_g, cfg.beta, cfg.eps, cfg.k3)
        .map_err(|e| OracleError::Invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.gen_range(1..=3);
    let s = cfg.init_scale;
    let mut draw = |n: usize, lo: f64, hi: f64| DVector::from_fn(n, |_, _| rng.gen_range(lo..=hi));
    let w0 = draw(k, -s, s);
    let z0 = draw(k, -s, s);
    let direction = {
        let d = draw(k, -1.0, 1.0);
        let n = d.norm();
        if n > 0.0 {
            d / n
        } else {
            DVector::from_element(k, 1.0 / (k as f64).sqrt())
        }
    };
    let rho = draw(2, 0.0, 1.0);
    let rho1 = rho[0] * cfg.rho1_max;
    let rho2 = rho[1] * cfg.rho2_max;
    let shape = draw(2, 0.0, 1.0);
    Ok(ReducedScenario {
        w0,
        z0,
        d1: D1Model::Proportional { c: 0.9 * rho1 },
        d2: D2Model::Sinusoid {
            amplitude: rho2,
            omega: 0.5 + 4.5 * shape[0],
            phase: std::f64::consts::TAU * shape[1],
            direction,
        },
        rho1,
        rho2,
        params,
        step: cfg.step,
        t_final: cfg.t_final,
        tol_w: cfg.tol_w,
        tol_z: cfg.tol_z,
    })
}
