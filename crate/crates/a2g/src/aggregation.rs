//! Server-side dual-gain update: trust-weighted gradient aggregation plus the
//! geometry-gain correction, with FedAvg recovered as a special case.

use crate::error::{Error, Result};
use crate::manifold::{self, CorrectionVec, ParamPoint};
use crate::qos::{trust_weights, QosGains, QosSample, TrustWeights};

/// Server update parameters: step size η on the aggregated gradient, geometry
/// gain β on the manifold correction, and the QoS gain exponents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregationConfig {
    pub eta: f64,
    pub beta: f64,
    pub gains: QosGains,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        Self {
            eta: 0.0,
            beta: 0.05,
            gains: QosGains::default(),
        }
    }
}

impl AggregationConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.eta.is_finite() || self.eta < 0.0 {
            return Err(Error::Config {
                path: "aggregation.eta".into(),
                reason: format!("must be >= 0, got {}", self.eta),
            });
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config {
                path: "aggregation.beta".into(),
                reason: format!("must lie in [0, 1], got {}", self.beta),
            });
        }
        self.gains.validate()
    }
}

/// Everything one client sends per round: its local model, an optional
/// gradient estimate, its QoS measurements, and its shard size.
#[derive(Debug, Clone)]
pub struct ClientReport {
    pub params: ParamPoint,
    pub grad: Option<Vec<f64>>,
    pub qos: QosSample,
    pub shard_size: usize,
}

impl ClientReport {
    pub fn validate(&self) -> Result<()> {
        if let Some(g) = &self.grad {
            if g.len() != self.params.dim() {
                return Err(Error::DimensionMismatch {
                    context: "client gradient",
                    expected: self.params.dim(),
                    actual: g.len(),
                });
            }
        }
        if self.shard_size == 0 {
            return Err(Error::Config {
                path: "shard_size".into(),
                reason: "must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Trust-weighted gradient combination g_agg = Σᵢ wᵢ gᵢ. Every report must
/// carry a gradient.
pub fn aggregate_gradients(reports: &[ClientReport], weights: &TrustWeights) -> Result<Vec<f64>> {
    if reports.is_empty() {
        return Err(Error::EmptyInput("client reports"));
    }
    if weights.len() != reports.len() {
        return Err(Error::DimensionMismatch {
            context: "aggregate_gradients",
            expected: reports.len(),
            actual: weights.len(),
        });
    }
    let dim = reports[0].params.dim();
    let mut acc = vec![0.0; dim];
    for (client, (report, &w)) in reports.iter().zip(weights.weights()).enumerate() {
        let grad = report
            .grad
            .as_ref()
            .ok_or(Error::MissingGradient { client })?;
        if grad.len() != dim {
            return Err(Error::DimensionMismatch {
                context: "aggregate_gradients",
                expected: dim,
                actual: grad.len(),
            });
        }
        for (a, &g) in acc.iter_mut().zip(grad) {
            *a += w * g;
        }
    }
    Ok(acc)
}

/// Result of one server update, carrying the internals the telemetry logs.
#[derive(Debug, Clone)]
pub struct UpdateOutcome {
    pub params: ParamPoint,
    pub weights: TrustWeights,
    pub correction: CorrectionVec,
    /// Norm of the aggregated gradient; zero when η = 0 left it unused or a
    /// report carried no gradient.
    pub grad_norm: f64,
}

/// The dual-gain global update
/// θ_{t+1} = θ_t − η·g_agg + β·Ψ(θ_t, {θ_i}),
/// with angular coordinates wrapped once after the full additive step.
///
/// With η = 0 (the geometry-driven regime) missing gradients are tolerated;
/// with η > 0 they are an error.
pub fn a2g_update(
    global: &ParamPoint,
    reports: &[ClientReport],
    cfg: &AggregationConfig,
) -> Result<UpdateOutcome> {
    cfg.validate()?;
    if reports.is_empty() {
        return Err(Error::EmptyInput("client reports"));
    }
    for report in reports {
        report.validate()?;
        if report.params.spec() != global.spec() {
            return Err(Error::SpecMismatch(
                "client report lives on a different manifold than the global model",
            ));
        }
    }
    let samples: Vec<QosSample> = reports.iter().map(|r| r.qos).collect();
    let shards: Vec<usize> = reports.iter().map(|r| r.shard_size).collect();
    let weights = trust_weights(&samples, &shards, &cfg.gains)?;

    let client_points: Vec<ParamPoint> = reports.iter().map(|r| r.params.clone()).collect();
    let correction = manifold::geometry_correction(global, &client_points, &weights)?;

    let all_grads = reports.iter().all(|r| r.grad.is_some());
    let g_agg = if cfg.eta > 0.0 {
        Some(aggregate_gradients(reports, &weights)?)
    } else if all_grads {
        // Diagnostic only: η = 0 leaves it out of the update.
        Some(aggregate_gradients(reports, &weights)?)
    } else {
        None
    };
    let grad_norm = g_agg
        .as_ref()
        .map(|g| g.iter().map(|x| x * x).sum::<f64>().sqrt())
        .unwrap_or(0.0);

    let coords: Vec<f64> = global
        .coords()
        .iter()
        .enumerate()
        .map(|(j, &theta)| {
            let grad_term = match (&g_agg, cfg.eta > 0.0) {
                (Some(g), true) => cfg.eta * g[j],
                _ => 0.0,
            };
            theta - grad_term + cfg.beta * correction.coords()[j]
        })
        .collect();
    let params = ParamPoint::new(coords, global.spec_handle().clone())?;
    Ok(UpdateOutcome {
        params,
        weights,
        correction,
        grad_norm,
    })
}

/// Independent FedAvg reference: the shard-size-weighted arithmetic mean of
/// the client models, computed without touching the update path above. Only
/// defined on Euclidean specs.
pub fn fedavg_oracle(reports: &[ClientReport]) -> Result<ParamPoint> {
    if reports.is_empty() {
        return Err(Error::EmptyInput("client reports"));
    }
    if !reports[0].params.spec().is_euclidean() {
        return Err(Error::SpecMismatch(
            "fedavg oracle is defined on Euclidean specs only",
        ));
    }
    let dim = reports[0].params.dim();
    let total: f64 = reports.iter().map(|r| r.shard_size as f64).sum();
    let mut mean = vec![0.0; dim];
    for report in reports {
        let p = report.shard_size as f64 / total;
        for (m, &x) in mean.iter_mut().zip(report.params.coords()) {
            *m += p * x;
        }
    }
    ParamPoint::new(mean, reports[0].params.spec_handle().clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::ManifoldSpec;
    use crate::rng::{RngStream, StreamPurpose};
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use std::sync::Arc;

    fn qos_ok() -> QosSample {
        QosSample::new(0.95, 0.05, 0.1).unwrap()
    }

    fn report(point: ParamPoint, grad: Option<Vec<f64>>, shard: usize) -> ClientReport {
        ClientReport {
            params: point,
            grad,
            qos: qos_ok(),
            shard_size: shard,
        }
    }

    fn zero_gains() -> QosGains {
        QosGains {
            alpha: 0.0,
            gamma: 0.0,
            delta: 0.0,
            epsilon: 1e-8,
        }
    }

    #[test]
    fn gradient_aggregation_hand_cases() {
        let spec = Arc::new(ManifoldSpec::euclidean(2).unwrap());
        let p = ParamPoint::new(vec![0.0, 0.0], spec).unwrap();
        let reports = vec![
            report(p.clone(), Some(vec![1.0, 0.0]), 10),
            report(p.clone(), Some(vec![0.0, 1.0]), 10),
        ];
        let w = TrustWeights::from_weights(vec![0.25, 0.75]).unwrap();
        let g = aggregate_gradients(&reports, &w).unwrap();
        assert_abs_diff_eq!(g[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(g[1], 0.75, epsilon = 1e-15);

        let same = vec![
            report(p.clone(), Some(vec![0.5, -0.5]), 10),
            report(p, Some(vec![0.5, -0.5]), 10),
        ];
        let uniform = TrustWeights::uniform(2).unwrap();
        let g = aggregate_gradients(&same, &uniform).unwrap();
        assert_abs_diff_eq!(g[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(g[1], -0.5, epsilon = 1e-15);
    }

    #[test]
    fn missing_gradient_is_an_error_when_required() {
        let p = ParamPoint::euclidean(vec![0.0]).unwrap();
        let reports = vec![report(
            ParamPoint::new(vec![1.0], p.spec_handle().clone()).unwrap(),
            None,
            10,
        )];
        let w = TrustWeights::uniform(1).unwrap();
        assert!(matches!(
            aggregate_gradients(&reports, &w).unwrap_err(),
            Error::MissingGradient { client: 0 }
        ));

        // eta > 0 makes the update itself fail.
        let cfg = AggregationConfig {
            eta: 0.1,
            beta: 0.5,
            gains: zero_gains(),
        };
        assert!(a2g_update(&p, &reports, &cfg).is_err());

        // eta = 0 tolerates it.
        let cfg = AggregationConfig {
            eta: 0.0,
            beta: 0.5,
            gains: zero_gains(),
        };
        assert!(a2g_update(&p, &reports, &cfg).is_ok());
    }

    #[test]
    fn empty_reports_are_rejected() {
        let global = ParamPoint::euclidean(vec![0.0]).unwrap();
        let cfg = AggregationConfig::default();
        assert!(a2g_update(&global, &[], &cfg).is_err());
        assert!(fedavg_oracle(&[]).is_err());
    }

    #[test]
    fn identity_update_when_both_gains_vanish() {
        let global = ParamPoint::euclidean(vec![0.3, -0.7]).unwrap();
        let spec = global.spec_handle().clone();
        let reports = vec![report(
            ParamPoint::new(vec![5.0, 5.0], spec).unwrap(),
            None,
            10,
        )];
        let cfg = AggregationConfig {
            eta: 0.0,
            beta: 0.0,
            gains: zero_gains(),
        };
        let out = a2g_update(&global, &reports, &cfg).unwrap();
        assert_eq!(out.params.coords(), global.coords());
    }

    #[test]
    fn single_client_midpoint_at_half_beta() {
        let global = ParamPoint::euclidean(vec![1.0]).unwrap();
        let spec = global.spec_handle().clone();
        let reports = vec![report(ParamPoint::new(vec![3.0], spec).unwrap(), None, 10)];
        let cfg = AggregationConfig {
            eta: 0.0,
            beta: 0.5,
            gains: zero_gains(),
        };
        let out = a2g_update(&global, &reports, &cfg).unwrap();
        assert_abs_diff_eq!(out.params.coords()[0], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn fedavg_oracle_hand_cases() {
        let spec = Arc::new(ManifoldSpec::euclidean(1).unwrap());
        let reports = vec![
            report(ParamPoint::new(vec![0.0], spec.clone()).unwrap(), None, 10),
            report(ParamPoint::new(vec![2.0], spec.clone()).unwrap(), None, 10),
        ];
        assert_abs_diff_eq!(
            fedavg_oracle(&reports).unwrap().coords()[0],
            1.0,
            epsilon = 1e-15
        );

        let reports = vec![
            report(ParamPoint::new(vec![0.0], spec.clone()).unwrap(), None, 1),
            report(ParamPoint::new(vec![4.0], spec.clone()).unwrap(), None, 3),
        ];
        assert_abs_diff_eq!(
            fedavg_oracle(&reports).unwrap().coords()[0],
            3.0,
            epsilon = 1e-15
        );

        let single = vec![report(ParamPoint::new(vec![-2.5], spec).unwrap(), None, 7)];
        assert_eq!(fedavg_oracle(&single).unwrap().coords(), &[-2.5]);
    }

    #[test]
    fn fedavg_oracle_rejects_angular_specs() {
        let spec = Arc::new(ManifoldSpec::torus(1).unwrap());
        let reports = vec![report(ParamPoint::new(vec![0.5], spec).unwrap(), None, 10)];
        assert!(fedavg_oracle(&reports).is_err());
    }

    #[test]
    fn beta_one_zero_gains_recovers_fedavg() {
        let mut rng = RngStream::new(99, StreamPurpose::Data, 0, 0).rng();
        let spec = Arc::new(ManifoldSpec::euclidean(3).unwrap());
        for _ in 0..100 {
            let k = rng.gen_range(1..=8);
            let global = ParamPoint::new(
                (0..3).map(|_| rng.gen_range(-10.0..10.0)).collect(),
                spec.clone(),
            )
            .unwrap();
            let reports: Vec<ClientReport> = (0..k)
                .map(|_| {
                    let point = ParamPoint::new(
                        (0..3).map(|_| rng.gen_range(-10.0..10.0)).collect(),
                        spec.clone(),
                    )
                    .unwrap();
                    let qos = QosSample::new(
                        rng.gen_range(0.1..1.0),
                        rng.gen_range(0.01..1.0),
                        rng.gen_range(0.0..2.0),
                    )
                    .unwrap();
                    ClientReport {
                        params: point,
                        grad: None,
                        qos,
                        shard_size: rng.gen_range(1..500),
                    }
                })
                .collect();
            let cfg = AggregationConfig {
                eta: 0.0,
                beta: 1.0,
                gains: zero_gains(),
            };
            let ours = a2g_update(&global, &reports, &cfg).unwrap();
            let oracle = fedavg_oracle(&reports).unwrap();
            for (a, b) in ours.params.coords().iter().zip(oracle.coords()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn consensus_is_a_fixed_point() {
        let spec = Arc::new(ManifoldSpec::new(vec![true, false, true]).unwrap());
        let global = ParamPoint::new(vec![0.5, -2.0, 3.0], spec.clone()).unwrap();
        let reports: Vec<ClientReport> = (0..4).map(|_| report(global.clone(), None, 25)).collect();
        for beta in [0.0, 0.3, 1.0] {
            let cfg = AggregationConfig {
                eta: 0.0,
                beta,
                gains: QosGains::default(),
            };
            let out = a2g_update(&global, &reports, &cfg).unwrap();
            assert_eq!(out.params.coords(), global.coords());
        }
    }

    #[test]
    fn convex_hull_containment_in_euclidean_space() {
        let mut rng = RngStream::new(7, StreamPurpose::Data, 0, 0).rng();
        let spec = Arc::new(ManifoldSpec::euclidean(2).unwrap());
        for _ in 0..200 {
            let global = ParamPoint::new(
                (0..2).map(|_| rng.gen_range(-5.0..5.0)).collect(),
                spec.clone(),
            )
            .unwrap();
            let reports: Vec<ClientReport> = (0..3)
                .map(|_| {
                    report(
                        ParamPoint::new(
                            (0..2).map(|_| rng.gen_range(-5.0..5.0)).collect(),
                            spec.clone(),
                        )
                        .unwrap(),
                        None,
                        rng.gen_range(1..100),
                    )
                })
                .collect();
            let cfg = AggregationConfig {
                eta: 0.0,
                beta: rng.gen_range(0.0..=1.0),
                gains: QosGains::default(),
            };
            let out = a2g_update(&global, &reports, &cfg).unwrap();
            for j in 0..2 {
                let mut lo = global.coords()[j];
                let mut hi = lo;
                for r in &reports {
                    lo = lo.min(r.params.coords()[j]);
                    hi = hi.max(r.params.coords()[j]);
                }
                let x = out.params.coords()[j];
                assert!(x >= lo - 1e-12 && x <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn step_size_is_bounded_by_beta_times_dispersion() {
        let mut rng = RngStream::new(13, StreamPurpose::Data, 0, 0).rng();
        let spec = Arc::new(ManifoldSpec::torus(4).unwrap());
        for _ in 0..200 {
            let global = ParamPoint::new(
                (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect(),
                spec.clone(),
            )
            .unwrap();
            let reports: Vec<ClientReport> = (0..5)
                .map(|_| {
                    report(
                        ParamPoint::new(
                            (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect(),
                            spec.clone(),
                        )
                        .unwrap(),
                        None,
                        rng.gen_range(1..50),
                    )
                })
                .collect();
            let beta = rng.gen_range(0.0..=1.0);
            let cfg = AggregationConfig {
                eta: 0.0,
                beta,
                gains: QosGains::default(),
            };
            let out = a2g_update(&global, &reports, &cfg).unwrap();
            let points: Vec<ParamPoint> = reports.iter().map(|r| r.params.clone()).collect();
            let rho = manifold::dispersion(&global, &points).unwrap();
            let step = manifold::log_map(&global, &out.params).unwrap().norm();
            assert!(
                step <= beta * rho + 1e-9,
                "step {step} exceeds beta*rho {}",
                beta * rho
            );
        }
    }
}
