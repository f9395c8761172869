use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use super::UnlearnError;
use crate::fl::{FlError, ModelUpdate};
use crate::ledger::ClientId;
use crate::scalar::Scalar;

/// Angle between a client's update and the aggregate, in `[0, pi]`. A zero
/// vector on either side gives `pi / 2`.
pub fn compute_theta<T: Scalar>(
    local: &ModelUpdate<T>,
    global_agg: &ModelUpdate<T>,
) -> Result<f64, UnlearnError> {
    if local.delta.len() != global_agg.delta.len() {
        return Err(
            FlError::DimensionMismatch { expected: global_agg.delta.len(), got: local.delta.len() }.into()
        );
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in local.delta.iter().zip(&global_agg.delta) {
        let (a, b) = (a.to_f64_lossless(), b.to_f64_lossless());
        dot += a * b;
        na += a * a;
        nb += b * b;
    }
    let denom = na.sqrt() * nb.sqrt();
    if denom == 0.0 || !denom.is_finite() || !dot.is_finite() {
        return Ok(FRAC_PI_2);
    }
    Ok((dot / denom).clamp(-1.0, 1.0).acos())
}

/// Per-client running mean of contribution angles.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContributionTracker {
    /// Latest angle per client.
    pub theta: BTreeMap<ClientId, f64>,
    pub theta_tilde: BTreeMap<ClientId, f64>,
    /// Number of angles folded in per client.
    pub rounds: BTreeMap<ClientId, u64>,
}

impl ContributionTracker {
    /// Folds in the angle of the `t`-th observation (1-based).
    pub fn update_theta_tilde(&mut self, client: ClientId, theta: f64, t: u64) -> Result<f64, UnlearnError> {
        let expected = self.rounds.get(&client).copied().unwrap_or(0) + 1;
        if t != expected {
            return Err(UnlearnError::NonConsecutiveRound { client, expected, got: t });
        }
        if !(0.0..=std::f64::consts::PI).contains(&theta) {
            return Err(UnlearnError::Config(format!("angle {theta} outside [0, pi]")));
        }
        let next = if t == 1 {
            theta
        } else {
            let prev = self.theta_tilde[&client];
            let tf = t as f64;
            ((tf - 1.0) / tf) * prev + theta / tf
        };
        self.theta.insert(client, theta);
        self.theta_tilde.insert(client, next);
        self.rounds.insert(client, t);
        Ok(next)
    }

    pub fn theta_tilde(&self, client: ClientId) -> Option<f64> {
        self.theta_tilde.get(&client).copied()
    }
}

/// `alpha (1 - exp(-alpha exp(theta_tilde - 1)))`.
pub fn gompertz_contribution(theta_tilde: f64, alpha: f64) -> f64 {
    alpha * (1.0 - (-alpha * (theta_tilde - 1.0).exp()).exp())
}

/// Unrounded `(1 - f_target / sum f_retained) T`, or `None` when the
/// retained contributions sum to zero.
pub fn round_budget(target_f: f64, retained_f: &[f64], t: u64) -> Option<f64> {
    let sum: f64 = retained_f.iter().sum();
    if sum <= 0.0 || !sum.is_finite() {
        return None;
    }
    Some((1.0 - target_f / sum) * t as f64)
}

/// Adaptive retraining rounds for removing `targets`, rounded up and clamped
/// to `[0, T]`. Several targets contribute the sum of their scores.
pub fn adaptive_rounds(
    targets: &[ClientId],
    tracker: &ContributionTracker,
    alpha: f64,
    t: u64,
) -> Result<u64, UnlearnError> {
    if targets.is_empty() {
        return Err(UnlearnError::EmptyTargets);
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(UnlearnError::Config("alpha must be positive".into()));
    }
    let f = |c: &ClientId| tracker.theta_tilde(*c).map(|th| gompertz_contribution(th, alpha)).unwrap_or(0.0);
    let target_f: f64 = targets.iter().map(f).sum();
    let retained: Vec<f64> = tracker.theta_tilde.keys().filter(|c| !targets.contains(c)).map(f).collect();
    if retained.is_empty() {
        return Err(UnlearnError::EmptyRetained);
    }
    Ok(match round_budget(target_f, &retained, t) {
        // Absorb rounding noise so an exact integer is not bumped up.
        Some(v) => ((v - 1e-9).ceil().max(0.0) as u64).min(t),
        None => t,
    })
}

/// Tunables of the adaptive retraining plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanParams {
    pub alpha: f64,
    pub delta_t: f64,
    pub calibration_ratio: f64,
}

impl Default for PlanParams {
    fn default() -> Self {
        Self { alpha: 1.0, delta_t: 1.0, calibration_ratio: 0.5 }
    }
}

impl PlanParams {
    pub fn validate(&self) -> Result<(), UnlearnError> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(UnlearnError::Config("alpha must be positive".into()));
        }
        if !(self.delta_t > 0.0 && self.delta_t <= 1.0) {
            return Err(UnlearnError::Config("delta_t must lie in (0, 1]".into()));
        }
        if !(self.calibration_ratio > 0.0 && self.calibration_ratio <= 1.0) {
            return Err(UnlearnError::Config("calibration ratio must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrainPlan {
    pub t_tilde: u64,
    pub alpha: f64,
    pub delta_t: f64,
    pub c: f64,
    pub calibrated_epochs: usize,
}

impl RetrainPlan {
    /// Plan for removing `targets` from a model trained for `t` rounds of
    /// `local_epochs` epochs.
    pub fn derive(
        targets: &[ClientId],
        tracker: &ContributionTracker,
        params: PlanParams,
        t: u64,
        local_epochs: usize,
    ) -> Result<Self, UnlearnError> {
        params.validate()?;
        let t_tilde = adaptive_rounds(targets, tracker, params.alpha, t)?;
        let calibrated_epochs = ((params.calibration_ratio * local_epochs as f64).ceil() as usize).max(1);
        Ok(Self {
            t_tilde,
            alpha: params.alpha,
            delta_t: params.delta_t,
            c: params.calibration_ratio,
            calibrated_epochs,
        })
    }

    /// Estimated rounds saved relative to retraining from scratch.
    pub fn estimated_reduction(&self, t: u64) -> f64 {
        self.delta_t / self.c * (t as f64 - self.t_tilde as f64)
    }
}
