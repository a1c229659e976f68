//! Fixed-step integration of the closed loop
//!
//! ```text
//! dx/dt = Σ_j A_j x(t - h_j) + B (v_nom + v + δ),   dρ/dt = -k₂ ξ₂(w)
//! ```
//!
//! The augmented state `(x, ρ)` is advanced with classical RK4 (or
//! explicit Euler). The step must divide every delay-lattice element, so
//! delayed arguments at the step end points are stored grid points. The
//! half-step RK4 stages read delayed states through cubic Hermite
//! interpolation on the stored derivatives.

use nalgebra::DVector;
use thiserror::Error;

use crate::analysis::ReachingReport;
use crate::control::{nominal_control, ControlError, ControlSample, Controller, ControllerSpec};
use crate::history::{divides, HistoryBuffer, HistoryError};
use crate::lyapunov::{self, LyapunovError, QuadraticLkf};
use crate::model::{DelayLattice, DelaySystem, DelayedStates, NominalLaw, Uncertainty};

pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_DIVERGENCE_CEILING: f64 = 1e9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid step: {0}")]
    StepInvalid(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("solution diverged at t = {t}: state norm {norm:e}")]
    Diverged { t: f64, norm: f64 },
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    History(#[from] HistoryError),
    #[error(transparent)]
    Lyapunov(#[from] LyapunovError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Rk4,
    Euler,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Rk4 => "rk4",
            Scheme::Euler => "euler",
        }
    }
}

/// Initial function `φ` on `[-h_m, 0]`.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialFunction {
    Constant(Vec<f64>),
    /// `value_i · sin(t)`
    Sine(Vec<f64>),
    /// `value_i · cos(t)`
    Cosine(Vec<f64>),
    /// `value_i · (1 + t)`
    Linear(Vec<f64>),
}

impl InitialFunction {
    /// Looks up a named function; `constant` is accepted as a name too.
    pub fn named(name: &str, value: Vec<f64>) -> Option<Self> {
        match name {
            "constant" => Some(Self::Constant(value)),
            "sine" => Some(Self::Sine(value)),
            "cosine" => Some(Self::Cosine(value)),
            "linear" => Some(Self::Linear(value)),
            _ => None,
        }
    }

    pub fn coefficients(&self) -> &[f64] {
        match self {
            Self::Constant(v) | Self::Sine(v) | Self::Cosine(v) | Self::Linear(v) => v,
        }
    }

    pub fn dim(&self) -> usize {
        self.coefficients().len()
    }

    pub fn value(&self, t: f64) -> DVector<f64> {
        let c = DVector::from_column_slice(self.coefficients());
        match self {
            Self::Constant(_) => c,
            Self::Sine(_) => c * t.sin(),
            Self::Cosine(_) => c * t.cos(),
            Self::Linear(_) => c * (1.0 + t),
        }
    }

    pub fn derivative(&self, t: f64) -> DVector<f64> {
        let c = DVector::from_column_slice(self.coefficients());
        match self {
            Self::Constant(_) => c * 0.0,
            Self::Sine(_) => c * t.cos(),
            Self::Cosine(_) => c * -t.sin(),
            Self::Linear(_) => c,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.coefficients().iter().all(|v| *v == 0.0)
    }

    pub fn describe(&self) -> String {
        let kind = match self {
            Self::Constant(_) => "constant",
            Self::Sine(_) => "sine",
            Self::Cosine(_) => "cosine",
            Self::Linear(_) => "linear",
        };
        format!("{kind}{:?}", self.coefficients())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub step: f64,
    pub t_final: f64,
    pub phi: InitialFunction,
    pub rho0: Vec<f64>,
    pub scheme: Scheme,
    pub seed: u64,
    pub divergence_ceiling: f64,
}

impl SimConfig {
    pub fn new(step: f64, t_final: f64, phi: InitialFunction, k: usize) -> Self {
        Self {
            step,
            t_final,
            phi,
            rho0: vec![0.0; k],
            scheme: Scheme::Rk4,
            seed: 0,
            divergence_ceiling: DEFAULT_DIVERGENCE_CEILING,
        }
    }

    /// Checks the step against the lattice and the final time.
    pub fn validate(&self, lattice: &DelayLattice, delays: &[f64]) -> Result<(), SimError> {
        let step = self.step;
        if !(step > 0.0) || !step.is_finite() {
            return Err(SimError::StepInvalid(format!("step must be positive, got {step}")));
        }
        if !(self.t_final > 0.0) || !self.t_final.is_finite() {
            return Err(SimError::InvalidConfig(format!(
                "t_final must be positive, got {}",
                self.t_final
            )));
        }
        for &h in lattice.sums() {
            if !divides(step, h) {
                return Err(SimError::StepInvalid(format!("step {step} does not divide delay sum {h}")));
            }
        }
        if !divides(step, self.t_final) {
            return Err(SimError::StepInvalid(format!(
                "step {step} does not divide t_final {}",
                self.t_final
            )));
        }
        if delays.len() > 1 && step > delays[1] / 10.0 * (1.0 + 1e-12) {
            return Err(SimError::StepInvalid(format!(
                "step {step} exceeds a tenth of the smallest delay {}",
                delays[1]
            )));
        }
        if !(self.divergence_ceiling > 0.0) {
            return Err(SimError::InvalidConfig("divergence ceiling must be positive".into()));
        }
        Ok(())
    }
}

/// The pieces of one closed loop that the right-hand side reads.
#[derive(Clone, Copy)]
pub struct ClosedLoop<'a> {
    pub system: &'a DelaySystem,
    pub law: &'a NominalLaw,
    pub uncertainty: &'a dyn Uncertainty,
    pub controller: &'a Controller,
    pub lattice: &'a DelayLattice,
}

/// Right-hand side and the signals computed on the way.
#[derive(Debug, Clone)]
pub struct RhsOutput {
    pub dx: DVector<f64>,
    pub drho: DVector<f64>,
    pub u_nom: DVector<f64>,
    pub control: ControlSample,
    pub states: DelayedStates,
}

/// Delayed-state table at `t` with `x` as the current state.
pub fn lookup_states(
    lattice: &DelayLattice,
    buffer: &HistoryBuffer,
    t: f64,
    x: &DVector<f64>,
) -> Result<DelayedStates, HistoryError> {
    let states = lattice
        .sums()
        .iter()
        .map(|&h| if h == 0.0 { Ok(x.clone()) } else { buffer.sample(t - h) })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DelayedStates::new(lattice, states))
}

/// `(dx, dρ)` of the closed loop at `(t, x, ρ)` with the delayed states
/// taken from `buffer`.
pub fn rhs(
    cl: &ClosedLoop<'_>,
    buffer: &HistoryBuffer,
    t: f64,
    x: &DVector<f64>,
    rho: &DVector<f64>,
) -> Result<RhsOutput, HistoryError> {
    let states = lookup_states(cl.lattice, buffer, t, x)?;
    let delays = cl.system.delays();
    let u_nom = nominal_control(cl.law, delays, &states);
    let control = cl.controller.evaluate(t, &states, rho, cl.uncertainty);
    let delta = cl.uncertainty.delta(t, &states);
    let mut dx = DVector::zeros(x.len());
    for (aj, &h) in cl.system.a().iter().zip(delays) {
        dx.gemv(1.0, aj, states.at(h), 1.0);
    }
    let input = &u_nom + &control.v + delta;
    dx.gemv(1.0, cl.system.b(), &input, 1.0);
    Ok(RhsOutput {
        dx,
        drho: control.drho.clone(),
        u_nom,
        control,
        states,
    })
}

/// Run metadata recorded with every result.
#[derive(Debug, Clone, PartialEq)]
pub struct SimMetadata {
    pub controller: String,
    pub uncertainty: String,
    pub scheme: Scheme,
    pub step: f64,
    pub t_final: f64,
    pub phi: String,
    pub seed: u64,
    /// `φ` was continued backward as the constant `φ(-h_m)` on `[-2h_m, -h_m]`.
    pub backward_extension: bool,
}

/// Uniformly sampled closed-loop signals on `t = 0, step, …, t_final`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub t: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    /// Initial data on `[-2h, 0)` for the functional's `h`, same spacing.
    pub x_prefix: Vec<DVector<f64>>,
    pub rho: Vec<DVector<f64>>,
    pub u_nom: Vec<DVector<f64>>,
    pub v: Vec<DVector<f64>>,
    pub u_sta: Vec<DVector<f64>>,
    pub u_total: Vec<DVector<f64>>,
    pub w: Vec<DVector<f64>>,
    /// Lyapunov-Krasovskii functional along the run.
    pub lkf: Vec<f64>,
    /// `V_st(w, ρ + δ_z)`; only for the super-twisting controller.
    pub vst: Option<Vec<f64>>,
    pub diagnostics: ReachingReport,
    pub metadata: SimMetadata,
}

impl SimResult {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn state_norms(&self) -> Vec<f64> {
        self.x.iter().map(|x| x.norm()).collect()
    }
}

/// Samples of the extended initial function on `[-span, 0]`.
fn phi_extended(phi: &InitialFunction, h_max: f64) -> impl Fn(f64) -> DVector<f64> + '_ {
    move |t| phi.value(t.max(-h_max))
}

struct Recorder {
    t: Vec<f64>,
    x: Vec<DVector<f64>>,
    rho: Vec<DVector<f64>>,
    u_nom: Vec<DVector<f64>>,
    v: Vec<DVector<f64>>,
    u_sta: Vec<DVector<f64>>,
    w: Vec<DVector<f64>>,
    vst: Option<Vec<f64>>,
}

impl Recorder {
    fn with_capacity(cap: usize, track_vst: bool) -> Self {
        Self {
            t: Vec::with_capacity(cap),
            x: Vec::with_capacity(cap),
            rho: Vec::with_capacity(cap),
            u_nom: Vec::with_capacity(cap),
            v: Vec::with_capacity(cap),
            u_sta: Vec::with_capacity(cap),
            w: Vec::with_capacity(cap),
            vst: track_vst.then(|| Vec::with_capacity(cap)),
        }
    }

    fn record(
        &mut self,
        t: f64,
        x: &DVector<f64>,
        rho: &DVector<f64>,
        out: &RhsOutput,
        cl: &ClosedLoop<'_>,
    ) {
        if let (Some(vst), Controller::StaLr(c)) = (self.vst.as_mut(), cl.controller) {
            let z = rho + cl.uncertainty.delta_z(t, &out.states);
            let p = c.params();
            vst.push(lyapunov::vst_value(&out.control.w, &z, p.beta(), p.eps(), p.k3()));
        }
        self.t.push(t);
        self.x.push(x.clone());
        self.rho.push(rho.clone());
        self.u_nom.push(out.u_nom.clone());
        self.v.push(out.control.v.clone());
        self.u_sta.push(out.control.u_sta.clone());
        self.w.push(out.control.w.clone());
    }
}

fn check_finite(t: f64, x: &DVector<f64>, ceiling: f64) -> Result<(), SimError> {
    let norm = x.norm();
    if !norm.is_finite() || norm > ceiling {
        return Err(SimError::Diverged { t, norm });
    }
    Ok(())
}

/// Integrates the closed loop and post-processes the run.
pub fn simulate(
    system: &DelaySystem,
    law: &NominalLaw,
    uncertainty: &dyn Uncertainty,
    controller: ControllerSpec,
    lkf: &QuadraticLkf,
    config: &SimConfig,
) -> Result<SimResult, SimError> {
    let n = system.n();
    let k = system.k();
    let lattice = system.lattice();
    config.validate(&lattice, system.delays())?;
    if config.phi.dim() != n {
        return Err(SimError::InvalidConfig(format!(
            "initial function has dimension {}, system has n = {n}",
            config.phi.dim()
        )));
    }
    if config.rho0.len() != k {
        return Err(SimError::InvalidConfig(format!(
            "rho0 has dimension {}, system has k = {k}",
            config.rho0.len()
        )));
    }
    if lkf.dim() != n {
        return Err(SimError::InvalidConfig(format!(
            "functional has dimension {}, system has n = {n}",
            lkf.dim()
        )));
    }
    if uncertainty.input_dim() != k {
        return Err(SimError::InvalidConfig(format!(
            "uncertainty has input dimension {}, system has k = {k}",
            uncertainty.input_dim()
        )));
    }
    let ctrl = Controller::build(controller, lkf.p(), system.b(), law, system.delays())?;
    let cl = ClosedLoop {
        system,
        law,
        uncertainty,
        controller: &ctrl,
        lattice: &lattice,
    };

    let step = config.step;
    let h_max = system.max_delay();
    let horizon = lattice.max();
    let phi = phi_extended(&config.phi, h_max);
    let dphi = |t: f64| {
        if t < -h_max {
            DVector::zeros(n)
        } else {
            config.phi.derivative(t)
        }
    };
    let mut buffer = HistoryBuffer::init_from_phi(n, &phi, Some(&dphi), horizon, step)?;

    let steps = (config.t_final / step).round() as usize;
    let mut rec = Recorder::with_capacity(steps + 1, matches!(ctrl, Controller::StaLr(_)));
    let mut x = phi(0.0);
    let mut rho = DVector::from_column_slice(&config.rho0);

    let mut current = rhs(&cl, &buffer, 0.0, &x, &rho)?;
    buffer.set_last_derivative(current.dx.clone());
    rec.record(0.0, &x, &rho, &current, &cl);

    for i in 0..steps {
        let t = i as f64 * step;
        let t_next = (i + 1) as f64 * step;
        let (x_next, rho_next) = match config.scheme {
            Scheme::Euler => (&x + &current.dx * step, &rho + &current.drho * step),
            Scheme::Rk4 => {
                let half = 0.5 * step;
                let t_mid = t + half;
                let s2 = rhs(&cl, &buffer, t_mid, &(&x + &current.dx * half), &(&rho + &current.drho * half))?;
                let s3 = rhs(&cl, &buffer, t_mid, &(&x + &s2.dx * half), &(&rho + &s2.drho * half))?;
                let s4 = rhs(&cl, &buffer, t_next, &(&x + &s3.dx * step), &(&rho + &s3.drho * step))?;
                let sixth = step / 6.0;
                (
                    &x + (&current.dx + (&s2.dx + &s3.dx) * 2.0 + &s4.dx) * sixth,
                    &rho + (&current.drho + (&s2.drho + &s3.drho) * 2.0 + &s4.drho) * sixth,
                )
            }
        };
        check_finite(t_next, &x_next, config.divergence_ceiling)?;
        x = x_next;
        rho = rho_next;
        current = rhs(&cl, &buffer, t_next, &x, &rho)?;
        buffer.push(t_next, x.clone(), Some(current.dx.clone()))?;
        rec.record(t_next, &x, &rho, &current, &cl);
    }

    // functional: needs the history over [t - 2h, t] for the functional's own h
    let lkf_span = 2.0 * lkf.h();
    if !divides(step, lkf_span) {
        return Err(SimError::StepInvalid(format!(
            "step {step} does not divide the functional span {lkf_span}"
        )));
    }
    let prefix_len = (lkf_span / step).round() as usize;
    let x_prefix: Vec<DVector<f64>> = (0..prefix_len)
        .map(|i| phi((i as f64 - prefix_len as f64) * step))
        .collect();
    let mut states = x_prefix.clone();
    states.extend(rec.x.iter().cloned());
    let lkf_values = lyapunov::lkf_series(lkf, step, &states, prefix_len)?;

    let u_total: Vec<DVector<f64>> = rec.u_nom.iter().zip(&rec.v).map(|(a, b)| a + b).collect();
    let diagnostics = ReachingReport::from_series(
        &rec.t,
        &rec.w,
        &rec.x,
        &u_total,
        crate::analysis::DEFAULT_REACH_TOL,
        crate::analysis::DEFAULT_REACH_WINDOW,
        crate::analysis::DEFAULT_TAIL_FRACTION,
    );
    Ok(SimResult {
        t: rec.t,
        x: rec.x,
        x_prefix,
        rho: rec.rho,
        u_nom: rec.u_nom,
        v: rec.v,
        u_sta: rec.u_sta,
        u_total,
        w: rec.w,
        lkf: lkf_values,
        vst: rec.vst,
        diagnostics,
        metadata: SimMetadata {
            controller: ctrl.kind().to_owned(),
            uncertainty: uncertainty.name().to_owned(),
            scheme: config.scheme,
            step,
            t_final: config.t_final,
            phi: config.phi.describe(),
            seed: config.seed,
            backward_extension: system.m() > 0,
        },
    })
}
