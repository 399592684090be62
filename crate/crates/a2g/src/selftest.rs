//! Fast invariant suite behind `a2g selftest`: manifold round trips, weight
//! normalization, FedAvg oracle equivalence, SPSA on quadratics, and channel
//! determinism. Designed to finish in seconds.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;

use crate::aggregation::{a2g_update, fedavg_oracle, AggregationConfig, ClientReport};
use crate::channel::{sample_fidelity, ChannelConfig};
use crate::error::Result;
use crate::manifold::{self, ManifoldSpec, ParamPoint};
use crate::optimizer::{local_train, spsa_gradient, SpsaConfig};
use crate::qos::{reduced_weights, trust_weights, QosGains, QosSample, TrustWeights};
use crate::rng::{RngStream, StreamPurpose};

/// Deliberate corruptions for exercising the failure path from tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Perturb the normalized weight vector before the qos checks.
    CorruptQosNormalizer,
}

/// Outcome of one selftest group.
#[derive(Debug, Clone)]
pub struct GroupResult {
    pub group: &'static str,
    pub error: Option<String>,
}

impl GroupResult {
    pub fn passed(&self) -> bool {
        self.error.is_none()
    }
}

fn check(cond: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn manifold_group() -> std::result::Result<(), String> {
    let spec = Arc::new(ManifoldSpec::torus(4).map_err(|e| e.to_string())?);
    let mut rng = RngStream::new(1001, StreamPurpose::Data, 0, 0).rng();
    for _ in 0..500 {
        let base = ParamPoint::new(
            (0..4).map(|_| rng.gen_range(-PI..PI)).collect(),
            spec.clone(),
        )
        .map_err(|e| e.to_string())?;
        let target = ParamPoint::new(
            (0..4).map(|_| rng.gen_range(-PI..PI)).collect(),
            spec.clone(),
        )
        .map_err(|e| e.to_string())?;
        let log = manifold::log_map(&base, &target).map_err(|e| e.to_string())?;
        for &v in log.coords() {
            check(
                v > -PI && v <= PI,
                format!("log component {v} out of range"),
            )?;
        }
        let back = manifold::exp_map(&base, &log).map_err(|e| e.to_string())?;
        for (a, b) in back.coords().iter().zip(target.coords()) {
            check((a - b).abs() < 1e-9, format!("round trip {a} vs {b}"))?;
        }
        // Rotation equivariance under a common shift.
        let shift = rng.gen_range(-PI..PI);
        let base_s = ParamPoint::new(
            base.coords().iter().map(|c| c + shift).collect(),
            spec.clone(),
        )
        .map_err(|e| e.to_string())?;
        let target_s = ParamPoint::new(
            target.coords().iter().map(|c| c + shift).collect(),
            spec.clone(),
        )
        .map_err(|e| e.to_string())?;
        let log_s = manifold::log_map(&base_s, &target_s).map_err(|e| e.to_string())?;
        for (a, b) in log_s.coords().iter().zip(log.coords()) {
            check((a - b).abs() < 1e-9, format!("equivariance {a} vs {b}"))?;
        }
    }
    // Contraction: the correction never exceeds the dispersion.
    for _ in 0..200 {
        let base = ParamPoint::new(
            (0..4).map(|_| rng.gen_range(-PI..PI)).collect(),
            spec.clone(),
        )
        .map_err(|e| e.to_string())?;
        let k = rng.gen_range(1..6);
        let clients: Vec<ParamPoint> = (0..k)
            .map(|_| {
                ParamPoint::new(
                    (0..4).map(|_| rng.gen_range(-PI..PI)).collect(),
                    spec.clone(),
                )
                .unwrap()
            })
            .collect();
        let mut raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        raw.iter_mut().for_each(|w| *w /= sum);
        let weights = TrustWeights::from_weights(raw).map_err(|e| e.to_string())?;
        let psi =
            manifold::geometry_correction(&base, &clients, &weights).map_err(|e| e.to_string())?;
        let rho = manifold::dispersion(&base, &clients).map_err(|e| e.to_string())?;
        check(
            psi.norm() <= rho + 1e-9,
            format!("contraction violated: {} > {rho}", psi.norm()),
        )?;
    }
    Ok(())
}

fn qos_group(fault: Option<Fault>) -> std::result::Result<(), String> {
    let mut rng = RngStream::new(1002, StreamPurpose::Data, 0, 0).rng();
    for trial in 0..200 {
        let k = rng.gen_range(1..10);
        let samples: Vec<QosSample> = (0..k)
            .map(|_| {
                QosSample::new(
                    rng.gen_range(0.05..1.0),
                    rng.gen_range(0.001..1.5),
                    rng.gen_range(0.0..3.0),
                )
                .unwrap()
            })
            .collect();
        let shards: Vec<usize> = (0..k).map(|_| rng.gen_range(1..400)).collect();
        let gains = QosGains {
            alpha: rng.gen_range(0.0..2.0),
            gamma: rng.gen_range(0.0..2.0),
            delta: rng.gen_range(0.0..2.0),
            epsilon: 1e-8,
        };
        let tw = trust_weights(&samples, &shards, &gains).map_err(|e| e.to_string())?;
        let mut weights = tw.weights().to_vec();
        if trial == 0 {
            if let Some(Fault::CorruptQosNormalizer) = fault {
                weights[0] += 0.1;
            }
        }
        let sum: f64 = weights.iter().sum();
        check(
            (sum - 1.0).abs() < 1e-12,
            format!("weights sum to {sum}, not 1"),
        )?;
        check(weights.iter().all(|&w| w > 0.0), "nonpositive trust weight")?;

        // FedAvg recovery: zero gains reduce to shard proportions.
        let zero = QosGains {
            alpha: 0.0,
            gamma: 0.0,
            delta: 0.0,
            epsilon: 1e-8,
        };
        let tw0 = trust_weights(&samples, &shards, &zero).map_err(|e| e.to_string())?;
        let total: f64 = shards.iter().map(|&s| s as f64).sum();
        for (w, &s) in tw0.weights().iter().zip(&shards) {
            check(
                (w - s as f64 / total).abs() < 1e-12,
                "zero-gain weights are not shard proportions",
            )?;
        }

        // Reduction equivalence under tied exponents and equal shards.
        let alpha = gains.alpha;
        let reduced = reduced_weights(&samples, alpha, 1e-8).map_err(|e| e.to_string())?;
        let tied = QosGains {
            alpha,
            gamma: alpha,
            delta: alpha,
            epsilon: 1e-8,
        };
        let general = trust_weights(&samples, &vec![13; k], &tied).map_err(|e| e.to_string())?;
        for (r, g) in reduced.weights().iter().zip(general.weights()) {
            check(
                (r - g).abs() < 1e-12,
                format!("reduction mismatch {r} vs {g}"),
            )?;
        }
    }
    Ok(())
}

fn aggregation_group() -> std::result::Result<(), String> {
    let spec = Arc::new(ManifoldSpec::euclidean(3).map_err(|e| e.to_string())?);
    let mut rng = RngStream::new(1003, StreamPurpose::Data, 0, 0).rng();
    let cfg = AggregationConfig {
        eta: 0.0,
        beta: 1.0,
        gains: QosGains {
            alpha: 0.0,
            gamma: 0.0,
            delta: 0.0,
            epsilon: 1e-8,
        },
    };
    for _ in 0..200 {
        let global = ParamPoint::new(
            (0..3).map(|_| rng.gen_range(-10.0..10.0)).collect(),
            spec.clone(),
        )
        .map_err(|e| e.to_string())?;
        let k = rng.gen_range(1..8);
        let reports: Vec<ClientReport> = (0..k)
            .map(|_| ClientReport {
                params: ParamPoint::new(
                    (0..3).map(|_| rng.gen_range(-10.0..10.0)).collect(),
                    spec.clone(),
                )
                .unwrap(),
                grad: None,
                qos: QosSample::new(
                    rng.gen_range(0.1..1.0),
                    rng.gen_range(0.01..1.0),
                    rng.gen_range(0.0..2.0),
                )
                .unwrap(),
                shard_size: rng.gen_range(1..300),
            })
            .collect();
        let ours = a2g_update(&global, &reports, &cfg).map_err(|e| e.to_string())?;
        let oracle = fedavg_oracle(&reports).map_err(|e| e.to_string())?;
        for (a, b) in ours.params.coords().iter().zip(oracle.coords()) {
            check(
                (a - b).abs() < 1e-12,
                format!("fedavg equivalence {a} vs {b}"),
            )?;
        }
        // Consensus fixed point.
        let consensus: Vec<ClientReport> = reports
            .iter()
            .map(|r| ClientReport {
                params: global.clone(),
                ..r.clone()
            })
            .collect();
        let fixed = a2g_update(&global, &consensus, &cfg).map_err(|e| e.to_string())?;
        check(
            fixed.params.coords() == global.coords(),
            "consensus is not a fixed point",
        )?;
    }
    Ok(())
}

fn spsa_group() -> std::result::Result<(), String> {
    let mut quad = |p: &ParamPoint| -> Result<f64> { Ok(p.coords().iter().map(|x| x * x).sum()) };
    let at = ParamPoint::euclidean(vec![1.0]).map_err(|e| e.to_string())?;
    let mut rng = RngStream::new(1004, StreamPurpose::Train, 0, 0).rng();
    let g = spsa_gradient(&mut quad, &at, 0.1, &mut rng).map_err(|e| e.to_string())?;
    check(
        (g[0] - 2.0).abs() < 1e-12,
        format!("quadratic gradient {} != 2", g[0]),
    )?;

    let cfg = SpsaConfig {
        a0: 0.2,
        c0: 0.2,
        stability_offset: 30.0,
        alpha_exp: 0.602,
        gamma_exp: 0.101,
        steps_per_round: 300,
    };
    let start = ParamPoint::euclidean(vec![1.5, -0.5, 0.8, -1.2]).map_err(|e| e.to_string())?;
    let out = local_train(&start, &mut quad, &cfg, &mut rng).map_err(|e| e.to_string())?;
    let dist: f64 = out
        .params
        .coords()
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    check(dist < 0.1, format!("quadratic SPSA stalled at {dist}"))?;
    Ok(())
}

fn channel_group() -> std::result::Result<(), String> {
    let cfg = ChannelConfig {
        flip_prob: 0.0,
        ..ChannelConfig::default()
    };
    let mut rng = RngStream::new(1005, StreamPurpose::Fidelity, 0, 0).rng();
    for _ in 0..50 {
        check(sample_fidelity(&cfg, &mut rng) == 1.0, "p=0 fidelity != 1")?;
    }
    let cfg = ChannelConfig {
        flip_prob: 0.12,
        ..ChannelConfig::default()
    };
    let draw = |seed: u64| {
        let mut rng = RngStream::new(seed, StreamPurpose::Fidelity, 1, 3).rng();
        (0..100)
            .map(|_| sample_fidelity(&cfg, &mut rng))
            .collect::<Vec<f64>>()
    };
    check(draw(7) == draw(7), "fidelity stream not deterministic")?;
    for f in draw(7) {
        check(
            (0.0..=1.0).contains(&f) && f > 0.0,
            "fidelity out of bounds",
        )?;
    }
    Ok(())
}

/// Run every group, optionally injecting a fault (used by tests to exercise
/// the failure path).
pub fn run(fault: Option<Fault>) -> Vec<GroupResult> {
    let groups: Vec<(&'static str, std::result::Result<(), String>)> = vec![
        ("manifold", manifold_group()),
        ("qos", qos_group(fault)),
        ("aggregation", aggregation_group()),
        ("spsa", spsa_group()),
        ("channel", channel_group()),
    ];
    groups
        .into_iter()
        .map(|(group, outcome)| GroupResult {
            group,
            error: outcome.err(),
        })
        .collect()
}

pub fn all_passed(results: &[GroupResult]) -> bool {
    results.iter().all(GroupResult::passed)
}
