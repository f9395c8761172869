use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::fl::{example_losses, Dataset, GlobalModel};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiaScore {
    pub precision: f64,
    pub recall: f64,
    pub threshold: f64,
}

/// Loss-threshold membership inference. An example is called a member iff
/// its loss is below the mean loss on `holdout`.
pub fn mia_probe<T: Scalar>(
    model: &GlobalModel<T>,
    members: &Dataset<T>,
    non_members: &Dataset<T>,
    holdout: &Dataset<T>,
) -> Result<MiaScore, HarnessError> {
    if holdout.is_empty() {
        return Err(HarnessError::DegenerateThreshold);
    }
    if members.is_empty() || non_members.is_empty() {
        return Err(HarnessError::Config("membership probe needs both sets non-empty".into()));
    }
    let cal = example_losses(model, holdout);
    let tau = cal.iter().sum::<f64>() / cal.len() as f64;
    if !tau.is_finite() {
        return Err(HarnessError::DegenerateThreshold);
    }
    Ok(loss_threshold_score(&example_losses(model, members), &example_losses(model, non_members), tau))
}

/// Precision and recall of `loss < tau` as a membership test. With no
/// predicted members, precision is zero.
pub fn loss_threshold_score(member_losses: &[f64], non_member_losses: &[f64], tau: f64) -> MiaScore {
    let tp = member_losses.iter().filter(|&&l| l < tau).count();
    let fp = non_member_losses.iter().filter(|&&l| l < tau).count();
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if member_losses.is_empty() { 0.0 } else { tp as f64 / member_losses.len() as f64 };
    MiaScore { precision, recall, threshold: tau }
}
