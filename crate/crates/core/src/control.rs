//! Control laws: nominal feedback, unit control, its boundary-layer
//! approximation, and the super-twisting Lyapunov redesign with
//! state-dependent gains.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::model::{DelayedStates, NominalLaw, Uncertainty};

/// Largest accepted condition number of `2BᵀPB`.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("2BᵀPB is numerically singular (condition estimate {condition:e})")]
    ControllerSingular { condition: f64 },
    #[error("invalid controller parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// `v_nom = Σ_j K_j x(t - h_j)`.
pub fn nominal_control(law: &NominalLaw, delays: &[f64], states: &DelayedStates) -> DVector<f64> {
    let gains = law.gains();
    let mut u = DVector::zeros(gains[0].nrows());
    for (kj, &h) in gains.iter().zip(delays) {
        u.gemv(1.0, kj, states.at(h), 1.0);
    }
    u
}

/// Sliding variable `w = 2BᵀPx`.
pub fn sliding_variable(p: &DMatrix<f64>, b: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    (b.transpose() * p * x) * 2.0
}

/// Unit control `-ρ_δ w/‖w‖`; zero at `w = 0`.
pub fn unit_control(rho_delta: f64, w: &DVector<f64>) -> DVector<f64> {
    let norm = w.norm();
    if norm == 0.0 {
        return DVector::zeros(w.len());
    }
    w * (-rho_delta / norm)
}

/// Continuous approximation of the unit control: the unit branch when
/// `ρ_δ‖w‖ ≥ ε`, the linear branch `-ρ_δ² w / ε` inside the layer.
pub fn boundary_layer_control(rho_delta: f64, w: &DVector<f64>, eps_bl: f64) -> DVector<f64> {
    if rho_delta * w.norm() >= eps_bl {
        unit_control(rho_delta, w)
    } else {
        w * (-rho_delta * rho_delta / eps_bl)
    }
}

/// `ξ₁(w) = w/‖w‖^{1/2} + k₃w`, zero at the origin.
pub fn xi1(w: &DVector<f64>, k3: f64) -> DVector<f64> {
    let norm = w.norm();
    if norm == 0.0 {
        return DVector::zeros(w.len());
    }
    w * (1.0 / norm.sqrt() + k3)
}

/// `ξ₂(w) = w/(2‖w‖) + (3k₃/2) w/‖w‖^{1/2} + k₃²w`, zero at the origin.
pub fn xi2(w: &DVector<f64>, k3: f64) -> DVector<f64> {
    let norm = w.norm();
    if norm == 0.0 {
        return DVector::zeros(w.len());
    }
    w * (0.5 / norm + 1.5 * k3 / norm.sqrt() + k3 * k3)
}

/// Jacobian `ξ₁'(w) = ‖w‖^{-1/2}(I - ½ wwᵀ/‖w‖²) + k₃I`, defined for `w ≠ 0`.
pub fn xi1_jacobian(w: &DVector<f64>, k3: f64) -> Option<DMatrix<f64>> {
    let norm = w.norm();
    if norm == 0.0 {
        return None;
    }
    let k = w.len();
    let outer = w * w.transpose() / (norm * norm);
    Some((DMatrix::identity(k, k) - outer * 0.5) / norm.sqrt() + DMatrix::identity(k, k) * k3)
}

/// Gain parameters of the variable-gain super-twisting law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaParams {
    delta_g: f64,
    beta: f64,
    eps: f64,
    k3: f64,
}

impl StaParams {
    pub fn new(delta_g: f64, beta: f64, eps: f64, k3: f64) -> Result<Self, ControlError> {
        for (name, value) in [("delta_g", delta_g), ("beta", beta), ("eps", eps)] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(ControlError::InvalidParameter(format!(
                    "{name} must be positive, got {value}"
                )));
            }
        }
        if !(k3 >= 0.0) || !k3.is_finite() {
            return Err(ControlError::InvalidParameter(format!(
                "k3 must be nonnegative, got {k3}"
            )));
        }
        Ok(Self {
            delta_g,
            beta,
            eps,
            k3,
        })
    }

    pub fn delta_g(&self) -> f64 {
        self.delta_g
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn eps(&self) -> f64 {
        self.eps
    }
    pub fn k3(&self) -> f64 {
        self.k3
    }
}

/// Gains `(k₁, k₂)` for the bound values `ρ₁, ρ₂`:
///
/// ```text
/// k₁ = δ_g + (1/β)[ (4ερ₁ + ρ₂)²/(4ε) + 2ερ₂ + ε + (2ε + ρ₁)(β + 4ε²) ]
/// k₂ = β + 4ε² + 2ε k₁
/// ```
pub fn sta_gains(params: &StaParams, rho1: f64, rho2: f64) -> (f64, f64) {
    let StaParams {
        delta_g,
        beta,
        eps,
        ..
    } = *params;
    let b4 = beta + 4.0 * eps * eps;
    let s = 4.0 * eps * rho1 + rho2;
    let k1 = delta_g + (s * s / (4.0 * eps) + 2.0 * eps * rho2 + eps + (2.0 * eps + rho1) * b4) / beta;
    let k2 = b4 + 2.0 * eps * k1;
    (k1, k2)
}

/// Output of one evaluation of the super-twisting redesign.
#[derive(Debug, Clone, PartialEq)]
pub struct StaEvaluation {
    pub w: DVector<f64>,
    pub k1: f64,
    pub k2: f64,
    pub u_sta: DVector<f64>,
    /// Robustifying term `v`.
    pub v: DVector<f64>,
    /// `dρ/dt = -k₂ ξ₂(w)`, integrated by the caller.
    pub drho: DVector<f64>,
}

/// Super-twisting Lyapunov redesign
///
/// ```text
/// v     = -(2BᵀPB)⁻¹ (2BᵀP Σ_j G_j x(t - h_j) - u_sta)
/// u_sta = -k₁ ξ₁(w) + ρ,   dρ/dt = -k₂ ξ₂(w)
/// ```
#[derive(Debug, Clone)]
pub struct StaLrController {
    p: DMatrix<f64>,
    b: DMatrix<f64>,
    two_bt_p: DMatrix<f64>,
    two_btpb_inv: DMatrix<f64>,
    g: Vec<DMatrix<f64>>,
    delays: Vec<f64>,
    params: StaParams,
}

/// Inverse of `2BᵀPB` after a conditioning check.
fn checked_gain_inverse(p: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>, ControlError> {
    let m = b.transpose() * p * b * 2.0;
    let sym = (&m + m.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigenvalues();
    let lo = eig.min();
    let hi = eig.max();
    if !(lo > 0.0) || hi / lo > MAX_CONDITION {
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        return Err(ControlError::ControllerSingular { condition });
    }
    let chol = sym
        .cholesky()
        .ok_or(ControlError::ControllerSingular { condition: f64::INFINITY })?;
    Ok(chol.inverse())
}

impl StaLrController {
    pub fn new(
        p: DMatrix<f64>,
        b: DMatrix<f64>,
        law: &NominalLaw,
        delays: &[f64],
        params: StaParams,
    ) -> Result<Self, ControlError> {
        let n = b.nrows();
        if p.shape() != (n, n) {
            return Err(ControlError::DimensionMismatch(format!(
                "P is {:?}, expected {n}x{n}",
                p.shape()
            )));
        }
        if law.closed_loop().len() != delays.len() {
            return Err(ControlError::DimensionMismatch(format!(
                "{} closed-loop matrices for {} delays",
                law.closed_loop().len(),
                delays.len()
            )));
        }
        let two_btpb_inv = checked_gain_inverse(&p, &b)?;
        let two_bt_p = b.transpose() * &p * 2.0;
        Ok(Self {
            p,
            b,
            two_bt_p,
            two_btpb_inv,
            g: law.closed_loop().to_vec(),
            delays: delays.to_vec(),
            params,
        })
    }

    pub fn params(&self) -> &StaParams {
        &self.params
    }

    /// `2BᵀP`, the row map of the sliding variable.
    pub fn sliding_map(&self) -> &DMatrix<f64> {
        &self.two_bt_p
    }

    pub fn gain_inverse(&self) -> &DMatrix<f64> {
        &self.two_btpb_inv
    }

    /// `E = I - B(BᵀPB)⁻¹BᵀP`.
    pub fn projection(&self) -> DMatrix<f64> {
        let n = self.b.nrows();
        // (BᵀPB)⁻¹ = 2 (2BᵀPB)⁻¹
        DMatrix::identity(n, n) - &self.b * (&self.two_btpb_inv * 2.0) * self.b.transpose() * &self.p
    }

    /// Evaluates the control at one time instant. `rho` is the integrator
    /// state owned by the caller.
    pub fn evaluate(
        &self,
        t: f64,
        states: &DelayedStates,
        rho: &DVector<f64>,
        uncertainty: &dyn Uncertainty,
    ) -> StaEvaluation {
        let x = states.current();
        let w = &self.two_bt_p * x;
        let rho1 = uncertainty.rho1(t, x);
        let rho2 = uncertainty.rho2(t, states);
        let (k1, k2) = sta_gains(&self.params, rho1, rho2);
        let k3 = self.params.k3;
        let u_sta = rho - xi1(&w, k3) * k1;
        let drho = xi2(&w, k3) * -k2;
        let mut gx = DVector::zeros(x.len());
        for (gj, &h) in self.g.iter().zip(&self.delays) {
            gx.gemv(1.0, gj, states.at(h), 1.0);
        }
        let v = -(&self.two_btpb_inv * (&self.two_bt_p * gx - &u_sta));
        StaEvaluation {
            w,
            k1,
            k2,
            u_sta,
            v,
            drho,
        }
    }
}

/// Which robustifying term to add to the nominal law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ControllerSpec {
    None,
    Unit,
    BoundaryLayer { eps_bl: f64 },
    StaLr(StaParams),
}

impl ControllerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ControllerSpec::None => "none",
            ControllerSpec::Unit => "unit",
            ControllerSpec::BoundaryLayer { .. } => "boundary_layer",
            ControllerSpec::StaLr(_) => "sta_lr",
        }
    }
}

/// A built controller ready for evaluation inside the integrator.
#[derive(Debug, Clone)]
pub enum Controller {
    None { two_bt_p: DMatrix<f64> },
    Unit { two_bt_p: DMatrix<f64> },
    BoundaryLayer { two_bt_p: DMatrix<f64>, eps_bl: f64 },
    StaLr(StaLrController),
}

/// Robustifying part of one control evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSample {
    pub w: DVector<f64>,
    pub v: DVector<f64>,
    /// Zero for controllers other than `sta_lr`.
    pub u_sta: DVector<f64>,
    pub drho: DVector<f64>,
}

impl Controller {
    pub fn build(
        spec: ControllerSpec,
        p: &DMatrix<f64>,
        b: &DMatrix<f64>,
        law: &NominalLaw,
        delays: &[f64],
    ) -> Result<Self, ControlError> {
        let two_bt_p = b.transpose() * p * 2.0;
        Ok(match spec {
            ControllerSpec::None => Controller::None { two_bt_p },
            ControllerSpec::Unit => {
                checked_gain_inverse(p, b)?;
                Controller::Unit { two_bt_p }
            }
            ControllerSpec::BoundaryLayer { eps_bl } => {
                if !(eps_bl > 0.0) || !eps_bl.is_finite() {
                    return Err(ControlError::InvalidParameter(format!(
                        "eps_bl must be positive, got {eps_bl}"
                    )));
                }
                checked_gain_inverse(p, b)?;
                Controller::BoundaryLayer { two_bt_p, eps_bl }
            }
            ControllerSpec::StaLr(params) => {
                Controller::StaLr(StaLrController::new(p.clone(), b.clone(), law, delays, params)?)
            }
        })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Controller::None { .. } => "none",
            Controller::Unit { .. } => "unit",
            Controller::BoundaryLayer { .. } => "boundary_layer",
            Controller::StaLr(_) => "sta_lr",
        }
    }

    pub fn evaluate(
        &self,
        t: f64,
        states: &DelayedStates,
        rho: &DVector<f64>,
        uncertainty: &dyn Uncertainty,
    ) -> ControlSample {
        let k = rho.len();
        let zero = || DVector::zeros(k);
        match self {
            Controller::None { two_bt_p } => ControlSample {
                w: two_bt_p * states.current(),
                v: zero(),
                u_sta: zero(),
                drho: zero(),
            },
            Controller::Unit { two_bt_p } => {
                let w = two_bt_p * states.current();
                let v = unit_control(uncertainty.rho_delta(t, states), &w);
                ControlSample {
                    w,
                    v,
                    u_sta: zero(),
                    drho: zero(),
                }
            }
            Controller::BoundaryLayer { two_bt_p, eps_bl } => {
                let w = two_bt_p * states.current();
                let v = boundary_layer_control(uncertainty.rho_delta(t, states), &w, *eps_bl);
                ControlSample {
                    w,
                    v,
                    u_sta: zero(),
                    drho: zero(),
                }
            }
            Controller::StaLr(c) => {
                let e = c.evaluate(t, states, rho, uncertainty);
                ControlSample {
                    w: e.w,
                    v: e.v,
                    u_sta: e.u_sta,
                    drho: e.drho,
                }
            }
        }
    }
}
