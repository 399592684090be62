//! Gradient-free SPSA local trainer: two loss evaluations per step under a
//! Rademacher perturbation, with Spall's standard decay schedules.

use rand::Rng;

use crate::error::{Error, Result};
use crate::manifold::ParamPoint;

/// SPSA schedule constants. `step_size(k) = a0 / (k + 1 + stability_offset)^alpha_exp`
/// and `perturbation(k) = c0 / (k + 1)^gamma_exp` for step index k starting at 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpsaConfig {
    pub a0: f64,
    pub c0: f64,
    pub stability_offset: f64,
    pub alpha_exp: f64,
    pub gamma_exp: f64,
    pub steps_per_round: usize,
}

impl Default for SpsaConfig {
    fn default() -> Self {
        let steps = 30;
        Self {
            a0: 0.5,
            c0: 0.3,
            // Spall's rule of thumb: about 10% of the step budget.
            stability_offset: 0.1 * steps as f64,
            alpha_exp: 0.602,
            gamma_exp: 0.101,
            steps_per_round: steps,
        }
    }
}

impl SpsaConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.a0.is_finite() || self.a0 <= 0.0 {
            return Err(Error::Config {
                path: "spsa.a0".into(),
                reason: format!("must be > 0, got {}", self.a0),
            });
        }
        if !self.c0.is_finite() || self.c0 <= 0.0 {
            return Err(Error::Config {
                path: "spsa.c0".into(),
                reason: format!("must be > 0, got {}", self.c0),
            });
        }
        if !self.stability_offset.is_finite() || self.stability_offset < 0.0 {
            return Err(Error::Config {
                path: "spsa.stability_offset".into(),
                reason: format!("must be >= 0, got {}", self.stability_offset),
            });
        }
        for (name, v) in [("alpha_exp", self.alpha_exp), ("gamma_exp", self.gamma_exp)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config {
                    path: format!("spsa.{name}"),
                    reason: format!("must lie in (0, 1], got {v}"),
                });
            }
        }
        Ok(())
    }

    pub fn step_size(&self, k: usize) -> f64 {
        self.a0 / (k as f64 + 1.0 + self.stability_offset).powf(self.alpha_exp)
    }

    pub fn perturbation(&self, k: usize) -> f64 {
        self.c0 / (k as f64 + 1.0).powf(self.gamma_exp)
    }
}

/// Result of one round of local training.
#[derive(Debug, Clone)]
pub struct LocalTrainOutcome {
    /// Final parameters, angular coordinates canonicalized.
    pub params: ParamPoint,
    /// Gradient estimate from the last step (zeros when no step ran).
    pub last_grad: Vec<f64>,
    /// One loss value per step: the mean of the two perturbed evaluations.
    pub loss_history: Vec<f64>,
}

fn perturbed(params: &ParamPoint, delta: &[f64], scale: f64) -> Result<ParamPoint> {
    let coords = params
        .coords()
        .iter()
        .zip(delta)
        .map(|(&p, &d)| p + scale * d)
        .collect();
    // Canonicalizes perturbed angular coordinates before evaluation.
    ParamPoint::new(coords, params.spec_handle().clone())
}

/// One SPSA gradient estimate at `params` with perturbation scale `c_k`:
/// ĝ_j = [loss(θ + c·Δ) − loss(θ − c·Δ)] / (2 c Δ_j) for a Rademacher Δ.
///
/// Returns the estimate together with the two evaluated losses.
pub fn spsa_gradient_with_losses<F>(
    loss_fn: &mut F,
    params: &ParamPoint,
    c_k: f64,
    rng: &mut impl Rng,
) -> Result<(Vec<f64>, f64, f64)>
where
    F: FnMut(&ParamPoint) -> Result<f64>,
{
    if !(c_k.is_finite() && c_k > 0.0) {
        return Err(Error::Config {
            path: "spsa.c_k".into(),
            reason: format!("perturbation scale must be > 0, got {c_k}"),
        });
    }
    let delta: Vec<f64> = (0..params.dim())
        .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
        .collect();
    let plus = loss_fn(&perturbed(params, &delta, c_k)?)?;
    let minus = loss_fn(&perturbed(params, &delta, -c_k)?)?;
    if !plus.is_finite() || !minus.is_finite() {
        return Err(Error::Divergence {
            step: 0,
            detail: format!("loss evaluations ({plus}, {minus})"),
        });
    }
    let scale = (plus - minus) / (2.0 * c_k);
    // Δ_j = ±1, so dividing by Δ_j is multiplying by it.
    let grad = delta.iter().map(|&d| scale * d).collect();
    Ok((grad, plus, minus))
}

/// One SPSA gradient estimate; see [`spsa_gradient_with_losses`].
pub fn spsa_gradient<F>(
    loss_fn: &mut F,
    params: &ParamPoint,
    c_k: f64,
    rng: &mut impl Rng,
) -> Result<Vec<f64>>
where
    F: FnMut(&ParamPoint) -> Result<f64>,
{
    spsa_gradient_with_losses(loss_fn, params, c_k, rng).map(|(g, _, _)| g)
}

/// Run `steps_per_round` SPSA iterations from `params`, returning the final
/// point, the last gradient estimate, and the per-step loss history.
pub fn local_train<F>(
    params: &ParamPoint,
    loss_fn: &mut F,
    cfg: &SpsaConfig,
    rng: &mut impl Rng,
) -> Result<LocalTrainOutcome>
where
    F: FnMut(&ParamPoint) -> Result<f64>,
{
    cfg.validate()?;
    let mut current = params.clone();
    let mut last_grad = vec![0.0; params.dim()];
    let mut loss_history = Vec::with_capacity(cfg.steps_per_round);
    for k in 0..cfg.steps_per_round {
        let c_k = cfg.perturbation(k);
        let a_k = cfg.step_size(k);
        let (grad, plus, minus) =
            spsa_gradient_with_losses(loss_fn, &current, c_k, rng).map_err(|e| match e {
                Error::Divergence { detail, .. } => Error::Divergence { step: k, detail },
                other => other,
            })?;
        let coords: Vec<f64> = current
            .coords()
            .iter()
            .zip(&grad)
            .map(|(&p, &g)| p - a_k * g)
            .collect();
        current = ParamPoint::new(coords, current.spec_handle().clone())?;
        loss_history.push(0.5 * (plus + minus));
        last_grad = grad;
    }
    Ok(LocalTrainOutcome {
        params: current,
        last_grad,
        loss_history,
    })
}
