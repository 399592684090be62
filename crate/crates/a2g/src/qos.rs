//! QoS trust weighting: turns per-client fidelity, latency, and instability
//! measurements plus shard sizes into normalized aggregation weights.

use crate::error::{Error, Result};

/// One round's QoS measurements for one client.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QosSample {
    /// Teleportation fidelity in (0, 1].
    pub fidelity: f64,
    /// Communication latency in seconds, strictly positive.
    pub latency: f64,
    /// Instability: variance of the client's recent local losses.
    pub instability: f64,
}

impl QosSample {
    pub fn new(fidelity: f64, latency: f64, instability: f64) -> Result<Self> {
        if !(fidelity.is_finite() && latency.is_finite() && instability.is_finite()) {
            return Err(Error::NonFinite("QosSample"));
        }
        if fidelity <= 0.0 || fidelity > 1.0 {
            return Err(Error::Config {
                path: "qos.fidelity".into(),
                reason: format!("must lie in (0, 1], got {fidelity}"),
            });
        }
        if latency <= 0.0 {
            return Err(Error::Config {
                path: "qos.latency".into(),
                reason: format!("must be > 0, got {latency}"),
            });
        }
        if instability < 0.0 {
            return Err(Error::Config {
                path: "qos.instability".into(),
                reason: format!("must be >= 0, got {instability}"),
            });
        }
        Ok(Self {
            fidelity,
            latency,
            instability,
        })
    }
}

/// Gain exponents regulating how strongly the trust weights react to
/// fidelity (alpha), latency (gamma), and instability (delta). `epsilon` is
/// the small regularizer keeping denominators away from zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QosGains {
    pub alpha: f64,
    pub gamma: f64,
    pub delta: f64,
    pub epsilon: f64,
}

impl Default for QosGains {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            gamma: 1.0,
            delta: 1.0,
            epsilon: 1e-8,
        }
    }
}

impl QosGains {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("gamma", self.gamma),
            ("delta", self.delta),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config {
                    path: format!("aggregation.{name}"),
                    reason: format!("must be a finite value >= 0, got {v}"),
                });
            }
        }
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return Err(Error::Config {
                path: "aggregation.epsilon".into(),
                reason: format!("must be > 0, got {}", self.epsilon),
            });
        }
        Ok(())
    }
}

/// Normalized per-client trust weights plus the intermediate quantities the
/// telemetry wants: unnormalized scores and raw QoS factors.
#[derive(Debug, Clone, PartialEq)]
pub struct TrustWeights {
    weights: Vec<f64>,
    raw_scores: Vec<f64>,
    qos_factors: Vec<f64>,
    used_fallback: bool,
}

impl TrustWeights {
    /// Wrap an explicit convex-combination weight vector (used by tests and by
    /// callers that compute weights elsewhere).
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptyInput("weights"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::NonFinite("weights"));
        }
        let sum = pairwise_sum(&weights);
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Config {
                path: "weights".into(),
                reason: format!("must sum to 1 within 1e-12, got {sum}"),
            });
        }
        Ok(Self {
            raw_scores: weights.clone(),
            qos_factors: vec![1.0; weights.len()],
            weights,
            used_fallback: false,
        })
    }

    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::EmptyInput("weights"));
        }
        Self::from_weights(vec![1.0 / k as f64; k])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn raw_scores(&self) -> &[f64] {
        &self.raw_scores
    }

    pub fn qos_factors(&self) -> &[f64] {
        &self.qos_factors
    }

    /// True when every raw score underflowed and the round fell back to pure
    /// data-size weighting.
    pub fn used_fallback(&self) -> bool {
        self.used_fallback
    }
}

/// Pairwise summation; K is small, so accuracy wins over speed.
fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let (lo, hi) = xs.split_at(n / 2);
            pairwise_sum(lo) + pairwise_sum(hi)
        }
    }
}

/// QoS factor q = F^α / ((τ+ε)^γ (σ²+ε)^δ). Strictly positive and finite for
/// samples satisfying their invariants.
pub fn qos_factor(sample: &QosSample, gains: &QosGains) -> Result<f64> {
    gains.validate()?;
    if !(sample.fidelity.is_finite()
        && sample.latency.is_finite()
        && sample.instability.is_finite())
    {
        return Err(Error::NonFinite("QosSample"));
    }
    let q = sample.fidelity.powf(gains.alpha)
        / ((sample.latency + gains.epsilon).powf(gains.gamma)
            * (sample.instability + gains.epsilon).powf(gains.delta));
    if !q.is_finite() {
        return Err(Error::NonFinite("qos factor"));
    }
    Ok(q)
}

/// Trust coefficients from QoS samples and shard sizes: dᵢ = |Dᵢ|/Σ|Dⱼ|,
/// ŵᵢ = dᵢ·qᵢ, wᵢ = ŵᵢ/Σŵⱼ.
///
/// If every raw score underflows (all qᵢ ≈ 0, which the finite-QoS assumption
/// rules out in theory but a simulation must survive), the round falls back to
/// pure data-size weights and the result is flagged.
pub fn trust_weights(
    samples: &[QosSample],
    shard_sizes: &[usize],
    gains: &QosGains,
) -> Result<TrustWeights> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("qos samples"));
    }
    if samples.len() != shard_sizes.len() {
        return Err(Error::DimensionMismatch {
            context: "trust_weights",
            expected: samples.len(),
            actual: shard_sizes.len(),
        });
    }
    if shard_sizes.contains(&0) {
        return Err(Error::Config {
            path: "shard_sizes".into(),
            reason: "shard sizes must be positive".into(),
        });
    }
    let total: f64 = shard_sizes.iter().map(|&s| s as f64).sum();
    let fractions: Vec<f64> = shard_sizes.iter().map(|&s| s as f64 / total).collect();
    let qos_factors: Vec<f64> = samples
        .iter()
        .map(|s| qos_factor(s, gains))
        .collect::<Result<_>>()?;
    let raw_scores: Vec<f64> = fractions
        .iter()
        .zip(&qos_factors)
        .map(|(d, q)| d * q)
        .collect();

    if raw_scores.iter().all(|&r| r <= 1e-300) {
        // Underflown round: fall back to data-size weighting.
        let norm = pairwise_sum(&fractions);
        let weights = fractions.iter().map(|d| d / norm).collect();
        return Ok(TrustWeights {
            weights,
            raw_scores,
            qos_factors,
            used_fallback: true,
        });
    }

    let norm = pairwise_sum(&raw_scores);
    let weights = raw_scores.iter().map(|r| r / norm).collect();
    Ok(TrustWeights {
        weights,
        raw_scores,
        qos_factors,
        used_fallback: false,
    })
}

/// QoS-only weighting wᵢ ∝ Fᵢ^α (τᵢ+ε)^{−α} (σ²ᵢ+ε)^{−α}: the reduction the
/// general rule collapses to under equal shard sizes and tied exponents.
/// Kept as an independent code path so tests can cross-check the general one.
pub fn reduced_weights(samples: &[QosSample], alpha: f64, epsilon: f64) -> Result<TrustWeights> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("qos samples"));
    }
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(Error::Config {
            path: "alpha".into(),
            reason: format!("must be a finite value >= 0, got {alpha}"),
        });
    }
    if !epsilon.is_finite() || epsilon <= 0.0 {
        return Err(Error::Config {
            path: "epsilon".into(),
            reason: format!("must be > 0, got {epsilon}"),
        });
    }
    let k = samples.len() as f64;
    let qos_factors: Vec<f64> = samples
        .iter()
        .map(|s| {
            s.fidelity.powf(alpha)
                * (s.latency + epsilon).powf(-alpha)
                * (s.instability + epsilon).powf(-alpha)
        })
        .collect();
    if qos_factors.iter().any(|q| !q.is_finite()) {
        return Err(Error::NonFinite("qos factor"));
    }
    let raw_scores: Vec<f64> = qos_factors.iter().map(|q| q / k).collect();
    let norm: f64 = qos_factors.iter().sum();
    if norm <= 1e-300 {
        let weights = vec![1.0 / k; samples.len()];
        return Ok(TrustWeights {
            weights,
            raw_scores,
            qos_factors,
            used_fallback: true,
        });
    }
    let weights = qos_factors.iter().map(|q| q / norm).collect();
    Ok(TrustWeights {
        weights,
        raw_scores,
        qos_factors,
        used_fallback: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn sample(f: f64, tau: f64, s2: f64) -> QosSample {
        QosSample::new(f, tau, s2).unwrap()
    }

    fn gains(alpha: f64, gamma: f64, delta: f64) -> QosGains {
        QosGains {
            alpha,
            gamma,
            delta,
            epsilon: 1e-8,
        }
    }

    #[test]
    fn empty_inputs_are_structural_errors() {
        assert!(trust_weights(&[], &[], &gains(1.0, 1.0, 1.0)).is_err());
        assert!(reduced_weights(&[], 1.0, 1e-8).is_err());
        assert!(TrustWeights::from_weights(vec![]).is_err());
    }

    #[test]
    fn factor_with_zero_exponents_is_one() {
        let q = qos_factor(&sample(0.3, 1.7, 4.0), &gains(0.0, 0.0, 0.0)).unwrap();
        assert_eq!(q, 1.0);
    }

    #[test]
    fn factor_reduces_to_fidelity_when_only_alpha() {
        let q = qos_factor(&sample(0.8, 1.7, 4.0), &gains(1.0, 0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(q, 0.8, epsilon = 1e-15);
    }

    #[test]
    fn factor_direct_evaluation() {
        let q = qos_factor(&sample(0.9, 0.5, 0.0), &gains(1.0, 1.0, 0.0)).unwrap();
        assert_abs_diff_eq!(q, 0.9 / 0.50000001, epsilon = 1e-12);
    }

    #[test]
    fn equal_shards_zero_gains_give_uniform_weights() {
        let samples = vec![sample(0.9, 0.1, 0.2); 3];
        let w = trust_weights(&samples, &[100, 100, 100], &gains(0.0, 0.0, 0.0)).unwrap();
        for &wi in w.weights() {
            assert_abs_diff_eq!(wi, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn zero_gains_recover_data_size_proportions() {
        let samples = vec![sample(0.2, 3.0, 9.0), sample(0.9, 0.1, 0.0)];
        let w = trust_weights(&samples, &[100, 300], &gains(0.0, 0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(w.weights()[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(w.weights()[1], 0.75, epsilon = 1e-15);
    }

    #[test]
    fn fidelity_only_weighting_hand_case() {
        let samples = vec![sample(0.8, 1.0, 1.0), sample(0.4, 1.0, 1.0)];
        let w = trust_weights(&samples, &[50, 50], &gains(1.0, 0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(w.weights()[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w.weights()[1], 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn underflow_falls_back_to_data_size_weights() {
        // Fidelity so small that q^alpha underflows for every client.
        let tiny = sample(1e-320_f64.max(f64::MIN_POSITIVE), 1.0, 0.0);
        let w = trust_weights(&[tiny, tiny], &[100, 300], &gains(3.0, 0.0, 0.0)).unwrap();
        assert!(w.used_fallback());
        assert_abs_diff_eq!(w.weights()[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(w.weights()[1], 0.75, epsilon = 1e-15);
    }

    #[test]
    fn reduced_weights_match_general_path_with_tied_gains() {
        let samples = vec![
            sample(0.97, 0.04, 0.3),
            sample(0.71, 0.9, 0.01),
            sample(0.55, 0.2, 2.0),
        ];
        let alpha = 1.3;
        let reduced = reduced_weights(&samples, alpha, 1e-8).unwrap();
        let general = trust_weights(&samples, &[7, 7, 7], &gains(alpha, alpha, alpha)).unwrap();
        for (r, g) in reduced.weights().iter().zip(general.weights()) {
            assert_abs_diff_eq!(r, g, epsilon = 1e-12);
        }
    }

    #[test]
    fn reduced_weights_uniform_cases() {
        let samples = vec![sample(0.9, 0.5, 0.1); 4];
        let w = reduced_weights(&samples, 2.0, 1e-8).unwrap();
        for &wi in w.weights() {
            assert_abs_diff_eq!(wi, 0.25, epsilon = 1e-14);
        }
        let varied = vec![sample(0.9, 0.5, 0.1), sample(0.1, 3.0, 5.0)];
        let w = reduced_weights(&varied, 0.0, 1e-8).unwrap();
        for &wi in w.weights() {
            assert_abs_diff_eq!(wi, 0.5, epsilon = 1e-14);
        }
    }

    proptest! {
        #[test]
        fn weights_normalize_and_stay_positive(
            fid in proptest::collection::vec(0.01f64..1.0, 1..12),
            seedlat in 0.001f64..2.0,
            seedinst in 0.0f64..4.0,
        ) {
            let samples: Vec<QosSample> = fid
                .iter()
                .enumerate()
                .map(|(i, &f)| sample(f, seedlat * (i as f64 + 1.0), seedinst * (i as f64)))
                .collect();
            let shards: Vec<usize> = (0..samples.len()).map(|i| 10 + 13 * i).collect();
            let w = trust_weights(&samples, &shards, &gains(1.0, 1.0, 1.0)).unwrap();
            let sum: f64 = w.weights().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(w.weights().iter().all(|&wi| wi > 0.0));
        }

        #[test]
        fn scale_invariance_of_qos_factors(
            fid in proptest::collection::vec(0.05f64..1.0, 2..8),
            scale in 0.5f64..20.0,
        ) {
            // Scaling every latency by the same constant with gamma=1 scales
            // every factor by the same constant; normalized weights move by
            // less than 1e-12.
            let eps = 1e-12; // tiny epsilon so the scaling is exact
            let base: Vec<QosSample> = fid.iter().map(|&f| sample(f, 1.0, 0.0)).collect();
            let scaled: Vec<QosSample> = fid.iter().map(|&f| sample(f, scale, 0.0)).collect();
            let g = QosGains { alpha: 1.0, gamma: 1.0, delta: 0.0, epsilon: eps };
            let shards: Vec<usize> = vec![10; fid.len()];
            let a = trust_weights(&base, &shards, &g).unwrap();
            let b = trust_weights(&scaled, &shards, &g).unwrap();
            for (x, y) in a.weights().iter().zip(b.weights()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn fidelity_monotonicity(
            fid in proptest::collection::vec(0.1f64..0.8, 2..8),
            bump in 0.05f64..0.19,
        ) {
            let samples: Vec<QosSample> = fid.iter().map(|&f| sample(f, 0.5, 0.1)).collect();
            let mut bumped = samples.clone();
            bumped[0] = sample(fid[0] + bump, 0.5, 0.1);
            let shards: Vec<usize> = vec![10; fid.len()];
            let g = gains(1.0, 0.0, 0.0);
            let before = trust_weights(&samples, &shards, &g).unwrap();
            let after = trust_weights(&bumped, &shards, &g).unwrap();
            prop_assert!(after.weights()[0] > before.weights()[0]);
            for i in 1..fid.len() {
                prop_assert!(after.weights()[i] < before.weights()[i]);
            }
        }

        #[test]
        fn latency_monotonicity(
            lat in proptest::collection::vec(0.05f64..1.0, 2..8),
            bump in 0.1f64..2.0,
        ) {
            let samples: Vec<QosSample> = lat.iter().map(|&t| sample(0.9, t, 0.1)).collect();
            let mut bumped = samples.clone();
            bumped[0] = sample(0.9, lat[0] + bump, 0.1);
            let shards: Vec<usize> = vec![10; lat.len()];
            let g = gains(0.0, 1.0, 0.0);
            let before = trust_weights(&samples, &shards, &g).unwrap();
            let after = trust_weights(&bumped, &shards, &g).unwrap();
            prop_assert!(after.weights()[0] < before.weights()[0]);
        }
    }
}
