//! Lyapunov-Krasovskii functional of the single-delay quadratic class,
//! numerical certification of its bound and decay conditions, and the
//! super-twisting certificate (`P_st`, `V_st`, `η₁`, `η₂`, reaching-time
//! bound, `Q̂`).
//!
//! The functional is
//!
//! ```text
//! V(x_t) = x(t)ᵀPx(t) + ∫_{-h}^{0} x(t+θ)ᵀQx(t+θ) dθ
//!        + ∫_{-h}^{0} ∫_{θ-h}^{0} x(t+ξ)ᵀRx(t+ξ) dξ dθ
//! ```
//!
//! Swapping the order of integration in the double integral gives the
//! single integral `∫_{-2h}^{0} ω(ξ) x(t+ξ)ᵀRx(t+ξ) dξ` with the weight
//! `ω(ξ) = ξ + 2h` on `[-2h, -h]` and `ω(ξ) = h` on `[-h, 0]`; that is what
//! the quadrature evaluates.

use nalgebra::{DMatrix, DVector, Matrix2, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::control::{xi1, ControllerSpec, StaParams};
use crate::dde::{simulate, InitialFunction, SimConfig, SimError, SimResult};
use crate::history::{divides, HistoryBuffer, HistoryError};
use crate::model::{DelaySystem, NoUncertainty, NominalLaw};

/// Eigenvalue slack for the semidefiniteness checks on `Q` and `R`.
const PSD_TOL: f64 = 1e-10;

/// Samples with `‖x(t)‖` at or below this are left out of the fits.
pub const FIT_NORM_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LyapunovError {
    #[error("matrix {which} is not {required} (smallest eigenvalue {min_eigenvalue:e})")]
    NotDefinite {
        which: &'static str,
        required: &'static str,
        min_eigenvalue: f64,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    History(#[from] HistoryError),
    #[error("certification failed on trajectory {trajectory} at t = {t}: dV/dt / |x|² = {ratio:e}")]
    CertificationFailed { trajectory: usize, t: f64, ratio: f64 },
    #[error("no usable samples for certification")]
    NoSamples,
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigenvalues().min()
}

fn is_symmetric(m: &DMatrix<f64>) -> bool {
    (m - m.transpose()).amax() <= 1e-12 * m.amax().max(1.0)
}

/// Quadratic single-delay functional with matrices `P ≻ 0`, `Q ⪰ 0`, `R ⪰ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticLkf {
    p: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    h: f64,
}

impl QuadraticLkf {
    pub fn new(p: DMatrix<f64>, q: DMatrix<f64>, r: DMatrix<f64>, h: f64) -> Result<Self, LyapunovError> {
        let n = p.nrows();
        for (which, m) in [("P", &p), ("Q", &q), ("R", &r)] {
            if m.shape() != (n, n) {
                return Err(LyapunovError::DimensionMismatch(format!(
                    "{which} is {:?}, expected {n}x{n}",
                    m.shape()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) || !is_symmetric(m) {
                return Err(LyapunovError::InvalidParameter(format!(
                    "{which} must be finite and symmetric"
                )));
            }
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(LyapunovError::InvalidParameter(format!("delay must be positive, got {h}")));
        }
        let lp = min_eigenvalue(&p);
        if !(lp > 0.0) {
            return Err(LyapunovError::NotDefinite {
                which: "P",
                required: "positive definite",
                min_eigenvalue: lp,
            });
        }
        for (which, m) in [("Q", &q), ("R", &r)] {
            let l = min_eigenvalue(m);
            if l < -PSD_TOL {
                return Err(LyapunovError::NotDefinite {
                    which,
                    required: "positive semidefinite",
                    min_eigenvalue: l,
                });
            }
        }
        Ok(Self { p, q, r, h })
    }

    pub fn dim(&self) -> usize {
        self.p.nrows()
    }
    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }
    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }
    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }
    pub fn h(&self) -> f64 {
        self.h
    }

    /// Closed form for a constant history `x ≡ c`: `cᵀPc + h cᵀQc + (3h²/2) cᵀRc`.
    pub fn constant_history_value(&self, c: &DVector<f64>) -> f64 {
        let h = self.h;
        quad(&self.p, c) + h * quad(&self.q, c) + 1.5 * h * h * quad(&self.r, c)
    }
}

fn quad(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(m * x))
}

/// Composite Simpson rule on equally spaced samples; a trailing odd
/// interval is closed with the 3/8 rule (or the trapezoid for a single
/// interval).
pub fn simpson(values: &[f64], dx: f64) -> f64 {
    let intervals = values.len().saturating_sub(1);
    match intervals {
        0 => 0.0,
        1 => 0.5 * dx * (values[0] + values[1]),
        _ => {
            let (even_part, tail) = if intervals.is_multiple_of(2) {
                (intervals, None)
            } else {
                (intervals - 3, Some(intervals - 3))
            };
            let mut acc = 0.0;
            if even_part > 0 {
                let mut s = values[0] + values[even_part];
                for (i, v) in values[1..even_part].iter().enumerate() {
                    s += if i % 2 == 0 { 4.0 * v } else { 2.0 * v };
                }
                acc += s * dx / 3.0;
            }
            if let Some(a) = tail {
                acc += 3.0 * dx / 8.0
                    * (values[a] + 3.0 * values[a + 1] + 3.0 * values[a + 2] + values[a + 3]);
            }
            acc
        }
    }
}

/// Evaluates the functional from per-node integrands on `[t-2h, t]`:
/// `p_now = x(t)ᵀPx(t)`, `q_tail`, `r_all` listed oldest first.
fn functional_from_integrands(h: f64, dx: f64, p_now: f64, q_tail: &[f64], r_all: &[f64], scratch: &mut Vec<f64>) -> f64 {
    let nodes = q_tail.len() - 1;
    debug_assert_eq!(r_all.len(), 2 * nodes + 1);
    scratch.clear();
    scratch.extend(r_all[..=nodes].iter().enumerate().map(|(j, r)| j as f64 * dx * r));
    p_now + simpson(q_tail, dx) + simpson(scratch, dx) + h * simpson(&r_all[nodes..], dx)
}

/// `V(x_t)` from a history buffer spanning `[t - 2h, t]`. Quadrature nodes
/// sit at `t - i·step` with the buffer's step.
pub fn lkf_value(lkf: &QuadraticLkf, buffer: &HistoryBuffer, t: f64) -> Result<f64, LyapunovError> {
    if buffer.dim() != lkf.dim() {
        return Err(LyapunovError::DimensionMismatch(format!(
            "buffer dimension {} vs functional dimension {}",
            buffer.dim(),
            lkf.dim()
        )));
    }
    let dx = buffer.step();
    if !divides(dx, lkf.h) {
        return Err(LyapunovError::InvalidParameter(format!(
            "buffer step {dx} does not divide the delay {}",
            lkf.h
        )));
    }
    let nodes = (lkf.h / dx).round() as usize;
    let xs = (0..=2 * nodes)
        .map(|j| buffer.sample(t - (2 * nodes - j) as f64 * dx))
        .collect::<Result<Vec<_>, _>>()?;
    let r_all: Vec<f64> = xs.iter().map(|x| quad(&lkf.r, x)).collect();
    let q_tail: Vec<f64> = xs[nodes..].iter().map(|x| quad(&lkf.q, x)).collect();
    let p_now = quad(&lkf.p, &xs[2 * nodes]);
    Ok(functional_from_integrands(lkf.h, dx, p_now, &q_tail, &r_all, &mut Vec::new()))
}

/// `V` at every sample `i ≥ first` of a uniform series `states` with
/// spacing `step`. `first` must be at least `2h/step`.
pub fn lkf_series(
    lkf: &QuadraticLkf,
    step: f64,
    states: &[DVector<f64>],
    first: usize,
) -> Result<Vec<f64>, LyapunovError> {
    if !divides(step, lkf.h) {
        return Err(LyapunovError::InvalidParameter(format!(
            "step {step} does not divide the delay {}",
            lkf.h
        )));
    }
    let nodes = (lkf.h / step).round() as usize;
    if first < 2 * nodes {
        return Err(LyapunovError::InvalidParameter(format!(
            "series starts {first} samples in, needs {}",
            2 * nodes
        )));
    }
    let qv: Vec<f64> = states.iter().map(|x| quad(&lkf.q, x)).collect();
    let rv: Vec<f64> = states.iter().map(|x| quad(&lkf.r, x)).collect();
    let mut scratch = Vec::with_capacity(nodes + 1);
    Ok((first..states.len())
        .map(|i| {
            let p_now = quad(&lkf.p, &states[i]);
            functional_from_integrands(
                lkf.h,
                step,
                p_now,
                &qv[i - nodes..=i],
                &rv[i - 2 * nodes..=i],
                &mut scratch,
            )
        })
        .collect())
}

/// Fitted constants of the bound and decay conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct LkfCertificate {
    /// `λ_min(P)`, a valid lower-bound constant since the integral terms are nonnegative.
    pub alpha1: f64,
    /// Smallest observed `V / ‖x(t)‖²`.
    pub alpha1_observed: f64,
    /// Largest observed `V / ‖x_t‖²_H` over the window `[t - 2h, t]`.
    pub alpha2: f64,
    /// Largest constant with `ΔV/Δt ≤ -α₃‖x(t)‖²` at every sample.
    pub alpha3: f64,
    pub sample_count: usize,
    pub trajectory_ids: Vec<usize>,
}

/// Sliding-window maximum over the last `width + 1` entries.
fn sliding_max(values: &[f64], width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut dq: std::collections::VecDeque<usize> = std::collections::VecDeque::new();
    for (i, &v) in values.iter().enumerate() {
        while dq.back().is_some_and(|&j| values[j] <= v) {
            dq.pop_back();
        }
        dq.push_back(i);
        while dq.front().is_some_and(|&j| j + width < i) {
            dq.pop_front();
        }
        out.push(values[dq[0]]);
    }
    out
}

/// Fits `α₁, α₂, α₃` over nominal closed-loop runs (no uncertainty, no
/// robustifying term). Fails when some sample has a nonnegative discrete
/// derivative, i.e. when the fitted `α₃` would not be positive.
pub fn certify_assumption1(
    lkf: &QuadraticLkf,
    system: &DelaySystem,
    law: &NominalLaw,
    trajectories: &[SimResult],
) -> Result<LkfCertificate, LyapunovError> {
    if law.closed_loop().len() != system.delays().len() || lkf.dim() != system.n() {
        return Err(LyapunovError::DimensionMismatch(
            "functional, system and law do not match".into(),
        ));
    }
    let alpha1 = min_eigenvalue(&lkf.p);
    let mut alpha1_observed = f64::INFINITY;
    let mut alpha2: f64 = 0.0;
    let mut alpha3 = f64::INFINITY;
    let mut worst: Option<(usize, f64, f64)> = None;
    let mut sample_count = 0;
    let mut ids = Vec::new();

    for (id, run) in trajectories.iter().enumerate() {
        if run.metadata.controller != "none" || run.metadata.uncertainty != "none" {
            return Err(LyapunovError::InvalidParameter(format!(
                "trajectory {id} is not a nominal run ({} / {})",
                run.metadata.controller, run.metadata.uncertainty
            )));
        }
        let dt = run.metadata.step;
        let width = (2.0 * lkf.h / dt).round() as usize;
        let norms: Vec<f64> = run.x_prefix.iter().chain(&run.x).map(|x| x.norm()).collect();
        let sup = sliding_max(&norms, width);
        let offset = run.x_prefix.len();
        let mut used = false;
        for i in 0..run.len() {
            let nx = norms[offset + i];
            let hist = sup[offset + i];
            if hist > FIT_NORM_FLOOR {
                alpha2 = alpha2.max(run.lkf[i] / (hist * hist));
            }
            if nx <= FIT_NORM_FLOOR {
                continue;
            }
            alpha1_observed = alpha1_observed.min(run.lkf[i] / (nx * nx));
            if i + 1 < run.len() {
                let ratio = -(run.lkf[i + 1] - run.lkf[i]) / dt / (nx * nx);
                sample_count += 1;
                used = true;
                if ratio < alpha3 {
                    alpha3 = ratio;
                    worst = Some((id, run.t[i], ratio));
                }
            }
        }
        if used {
            ids.push(id);
        }
    }
    if sample_count == 0 {
        return Err(LyapunovError::NoSamples);
    }
    if !(alpha3 > 0.0) {
        let (trajectory, t, ratio) = worst.expect("at least one sample");
        return Err(LyapunovError::CertificationFailed { trajectory, t, ratio });
    }
    Ok(LkfCertificate {
        alpha1,
        alpha1_observed,
        alpha2,
        alpha3,
        sample_count,
        trajectory_ids: ids,
    })
}

/// `count` constant initial functions with entries uniform in `[-scale, scale]`.
pub fn random_constant_phis(seed: u64, count: usize, n: usize, scale: f64) -> Vec<InitialFunction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| InitialFunction::Constant((0..n).map(|_| rng.gen_range(-scale..=scale)).collect()))
        .collect()
}

/// Nominal closed-loop runs from the given initial functions.
pub fn nominal_runs(
    system: &DelaySystem,
    law: &NominalLaw,
    lkf: &QuadraticLkf,
    phis: &[InitialFunction],
    step: f64,
    t_final: f64,
) -> Result<Vec<SimResult>, SimError> {
    let unc = NoUncertainty::new(system.k());
    phis.iter()
        .map(|phi| {
            let cfg = SimConfig::new(step, t_final, phi.clone(), system.k());
            simulate(system, law, &unc, ControllerSpec::None, lkf, &cfg)
        })
        .collect()
}

/// `P_st` and its extreme eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct PstMatrix {
    pub matrix: DMatrix<f64>,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

/// `P_st = [[(β+4ε²)I, -2εI], [-2εI, I]]` of size `2k × 2k`.
pub fn pst_matrix(beta: f64, eps: f64, k: usize) -> PstMatrix {
    let mut m = DMatrix::zeros(2 * k, 2 * k);
    for i in 0..k {
        m[(i, i)] = beta + 4.0 * eps * eps;
        m[(k + i, k + i)] = 1.0;
        m[(i, k + i)] = -2.0 * eps;
        m[(k + i, i)] = -2.0 * eps;
    }
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    PstMatrix {
        lambda_min: eig.min(),
        lambda_max: eig.max(),
        matrix: m,
    }
}

/// `V_st(w, z) = γᵀP_stγ` with `γ = (ξ₁(w), z)`.
pub fn vst_value(w: &DVector<f64>, z: &DVector<f64>, beta: f64, eps: f64, k3: f64) -> f64 {
    let g = xi1(w, k3);
    (beta + 4.0 * eps * eps) * g.norm_squared() - 4.0 * eps * g.dot(z) + z.norm_squared()
}

/// `η₁ = ε√λ_min/λ_max`, `η₂ = 2εk₃/λ_max`.
pub fn eta_constants(eps: f64, k3: f64, lambda_min: f64, lambda_max: f64) -> (f64, f64) {
    (eps * lambda_min.sqrt() / lambda_max, 2.0 * eps * k3 / lambda_max)
}

/// `T = (2/η₂) ln(1 + (η₂/η₁)√V_st0)`, with the limit `2√V_st0/η₁` at `η₂ = 0`.
pub fn reaching_time_bound(eta1: f64, eta2: f64, vst0: f64) -> f64 {
    assert!(eta1 > 0.0 && eta2 >= 0.0 && vst0 >= 0.0, "invalid bound arguments");
    let s = vst0.sqrt();
    if eta2 == 0.0 {
        2.0 * s / eta1
    } else {
        2.0 / eta2 * (eta2 / eta1 * s).ln_1p()
    }
}

/// `Q̂` and whether `Q̂ - 2εI` is positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct QhatCheck {
    pub qhat: Matrix2<f64>,
    /// Smallest eigenvalue of `Q̂ - 2εI`.
    pub margin: f64,
    pub positive: bool,
}

pub fn qhat_matrix(k1: f64, rho1: f64, rho2: f64, beta: f64, eps: f64) -> QhatCheck {
    let b4 = beta + 4.0 * eps * eps;
    let a = 2.0 * beta * k1 - (4.0 * eps + 2.0 * rho1) * b4 - 4.0 * eps * rho2;
    let b = -4.0 * eps * rho1 - rho2;
    let qhat = Matrix2::new(a, b, b, 4.0 * eps);
    let shifted = qhat - Matrix2::identity() * (2.0 * eps);
    let margin = shifted.symmetric_eigenvalues().min();
    QhatCheck {
        qhat,
        margin,
        positive: margin > 0.0,
    }
}

/// All super-twisting certificate constants for one initial condition.
#[derive(Debug, Clone, PartialEq)]
pub struct StaCertificate {
    pub pst: PstMatrix,
    pub eta1: f64,
    pub eta2: f64,
    pub vst0: f64,
    pub t_bound: f64,
}

impl StaCertificate {
    pub fn new(params: &StaParams, w0: &DVector<f64>, z0: &DVector<f64>) -> Self {
        let pst = pst_matrix(params.beta(), params.eps(), w0.len());
        let (eta1, eta2) = eta_constants(params.eps(), params.k3(), pst.lambda_min, pst.lambda_max);
        let vst0 = vst_value(w0, z0, params.beta(), params.eps(), params.k3());
        let t_bound = reaching_time_bound(eta1, eta2, vst0);
        Self {
            pst,
            eta1,
            eta2,
            vst0,
            t_bound,
        }
    }
}

/// Draws `(β, ε, δ_g, k₃, ρ₁, ρ₂)` and reports the smallest `Q̂ - 2εI`
/// eigenvalue seen over `samples` draws.
pub fn qhat_sweep(seed: u64, samples: usize, rho_max: f64) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    let mut failures = 0;
    for _ in 0..samples {
        let beta = rng.gen_range(1e-2..10.0);
        let eps = rng.gen_range(1e-2..5.0);
        let delta_g = rng.gen_range(1e-3..10.0);
        let k3 = rng.gen_range(0.0..5.0);
        let rho1 = rng.gen_range(0.0..=rho_max);
        let rho2 = rng.gen_range(0.0..=rho_max);
        let params = StaParams::new(delta_g, beta, eps, k3).expect("positive draws");
        let (k1, _) = crate::control::sta_gains(&params, rho1, rho2);
        let check = qhat_matrix(k1, rho1, rho2, beta, eps);
        // relative margin: Q̂ entries scale with k₁
        let rel = check.margin / check.qhat.amax().max(1.0);
        worst = worst.min(rel);
        if !check.positive {
            failures += 1;
        }
    }
    (worst, failures)
}
