//! Simulated teleportation link: bit-flip fidelity sampling, synthetic
//! lognormal latency, and the rolling-variance instability measurement.

use rand::Rng;
use rand_distr::{Distribution, LogNormal};

use crate::error::{Error, Result};

/// Named noise regimes for the bit-flip probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseRegime {
    Low,
    Medium,
    High,
}

impl NoiseRegime {
    pub fn flip_prob(self) -> f64 {
        match self {
            NoiseRegime::Low => 0.01,
            NoiseRegime::Medium => 0.06,
            NoiseRegime::High => 0.12,
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "low" => Ok(NoiseRegime::Low),
            "medium" => Ok(NoiseRegime::Medium),
            "high" => Ok(NoiseRegime::High),
            other => Err(Error::Config {
                path: "channel.noise".into(),
                reason: format!("unknown noise regime `{other}` (expected low|medium|high)"),
            }),
        }
    }
}

/// Teleportation-channel parameters for one client link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelConfig {
    /// Per-trial bit-flip probability p in [0, 1).
    pub flip_prob: f64,
    /// Teleportation trials per round; the fidelity sample is their success
    /// fraction.
    pub trials_per_round: usize,
    /// Location of the lognormal latency model (log-seconds).
    pub latency_log_mean: f64,
    /// Scale of the lognormal latency model.
    pub latency_log_sigma: f64,
    /// Hard latency cap in seconds.
    pub tau_max: f64,
    /// Hard instability cap.
    pub s_max: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            flip_prob: NoiseRegime::Medium.flip_prob(),
            trials_per_round: 32,
            latency_log_mean: (0.05f64).ln(),
            latency_log_sigma: 0.5,
            tau_max: 2.0,
            s_max: 10.0,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.flip_prob) {
            return Err(Error::Config {
                path: "channel.flip_prob".into(),
                reason: format!("must lie in [0, 1), got {}", self.flip_prob),
            });
        }
        if self.trials_per_round == 0 {
            return Err(Error::Config {
                path: "channel.trials_per_round".into(),
                reason: "must be >= 1".into(),
            });
        }
        if !self.latency_log_mean.is_finite() {
            return Err(Error::Config {
                path: "channel.latency_log_mean".into(),
                reason: "must be finite".into(),
            });
        }
        if !self.latency_log_sigma.is_finite() || self.latency_log_sigma < 0.0 {
            return Err(Error::Config {
                path: "channel.latency_log_sigma".into(),
                reason: format!("must be >= 0, got {}", self.latency_log_sigma),
            });
        }
        if !self.tau_max.is_finite() || self.tau_max <= 0.0 {
            return Err(Error::Config {
                path: "channel.tau_max".into(),
                reason: format!("must be > 0, got {}", self.tau_max),
            });
        }
        if !self.s_max.is_finite() || self.s_max < 0.0 {
            return Err(Error::Config {
                path: "channel.s_max".into(),
                reason: format!("must be >= 0, got {}", self.s_max),
            });
        }
        Ok(())
    }
}

/// Fidelity for one round: the fraction of `trials_per_round` independent
/// teleportation trials that escape a bit flip (probability 1 − p each),
/// floored at 1/(2·trials) so the sample stays strictly positive.
pub fn sample_fidelity(cfg: &ChannelConfig, rng: &mut impl Rng) -> f64 {
    let trials = cfg.trials_per_round;
    let mut successes = 0usize;
    for _ in 0..trials {
        if rng.gen::<f64>() >= cfg.flip_prob {
            successes += 1;
        }
    }
    let floor = 1.0 / (2.0 * trials as f64);
    (successes as f64 / trials as f64).max(floor)
}

/// Latency for one round: lognormal(log_mean, log_sigma), capped at tau_max.
pub fn sample_latency(cfg: &ChannelConfig, rng: &mut impl Rng) -> f64 {
    let sample = if cfg.latency_log_sigma == 0.0 {
        cfg.latency_log_mean.exp()
    } else {
        LogNormal::new(cfg.latency_log_mean, cfg.latency_log_sigma)
            .expect("validated sigma")
            .sample(rng)
    };
    sample.min(cfg.tau_max)
}

/// Instability: population variance of the last `window` entries of the loss
/// history, capped at `s_max`. A history shorter than two entries has zero
/// variance.
pub fn measure_instability(loss_history: &[f64], window: usize, s_max: f64) -> Result<f64> {
    if loss_history.is_empty() {
        return Err(Error::EmptyInput("loss history"));
    }
    if window == 0 {
        return Err(Error::Config {
            path: "instability_window".into(),
            reason: "must be >= 1".into(),
        });
    }
    let start = loss_history.len().saturating_sub(window);
    let tail = &loss_history[start..];
    let n = tail.len() as f64;
    let mean = tail.iter().sum::<f64>() / n;
    let var = tail.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Ok(var.min(s_max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{RngStream, StreamPurpose};
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_flip_probability_gives_perfect_fidelity() {
        let cfg = ChannelConfig {
            flip_prob: 0.0,
            ..ChannelConfig::default()
        };
        let mut rng = RngStream::new(1, StreamPurpose::Fidelity, 0, 0).rng();
        for _ in 0..100 {
            assert_eq!(sample_fidelity(&cfg, &mut rng), 1.0);
        }
    }

    #[test]
    fn fidelity_mean_tracks_one_minus_p() {
        let cfg = ChannelConfig {
            flip_prob: 0.06,
            ..ChannelConfig::default()
        };
        let mut rng = RngStream::new(9, StreamPurpose::Fidelity, 0, 0).rng();
        let n = 10_000;
        let mean: f64 = (0..n).map(|_| sample_fidelity(&cfg, &mut rng)).sum::<f64>() / n as f64;
        // Binomial mean 0.94; the window is many standard errors wide at 1e4 draws.
        assert!((0.933..=0.947).contains(&mean), "mean {mean}");
    }

    #[test]
    fn fidelity_respects_strictly_positive_floor() {
        // p close to 1 forces all-flip rounds; the floor keeps F > 0.
        let cfg = ChannelConfig {
            flip_prob: 0.999,
            trials_per_round: 4,
            ..ChannelConfig::default()
        };
        let mut rng = RngStream::new(3, StreamPurpose::Fidelity, 0, 0).rng();
        for _ in 0..200 {
            let f = sample_fidelity(&cfg, &mut rng);
            assert!(f >= 1.0 / 8.0);
            assert!(f <= 1.0);
        }
    }

    #[test]
    fn degenerate_lognormal_is_constant() {
        let cfg = ChannelConfig {
            latency_log_sigma: 0.0,
            ..ChannelConfig::default()
        };
        let mut rng = RngStream::new(5, StreamPurpose::Latency, 0, 0).rng();
        for _ in 0..10 {
            assert_eq!(sample_latency(&cfg, &mut rng), 0.05f64.ln().exp());
        }
    }

    #[test]
    fn latency_never_exceeds_cap() {
        let cfg = ChannelConfig {
            latency_log_sigma: 2.0,
            tau_max: 0.5,
            ..ChannelConfig::default()
        };
        let mut rng = RngStream::new(6, StreamPurpose::Latency, 0, 0).rng();
        for _ in 0..5000 {
            let tau = sample_latency(&cfg, &mut rng);
            assert!(tau > 0.0 && tau <= 0.5);
        }
    }

    #[test]
    fn latency_mean_matches_lognormal_moment() {
        let cfg = ChannelConfig {
            latency_log_mean: (0.05f64).ln(),
            latency_log_sigma: 0.3,
            tau_max: 1e9, // untruncated regime
            ..ChannelConfig::default()
        };
        let mut rng = RngStream::new(7, StreamPurpose::Latency, 0, 0).rng();
        let n = 10_000usize;
        let samples: Vec<f64> = (0..n).map(|_| sample_latency(&cfg, &mut rng)).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let expected = (cfg.latency_log_mean + cfg.latency_log_sigma.powi(2) / 2.0).exp();
        // 3 standard errors of the sample mean.
        let var = (cfg.latency_log_sigma.powi(2).exp() - 1.0)
            * (2.0 * cfg.latency_log_mean + cfg.latency_log_sigma.powi(2)).exp();
        let se = (var / n as f64).sqrt();
        assert!(
            (mean - expected).abs() <= 3.0 * se,
            "mean {mean}, expected {expected} +- {}",
            3.0 * se
        );
    }

    #[test]
    fn instability_of_constant_history_is_zero() {
        assert_eq!(measure_instability(&[0.75; 12], 10, 10.0).unwrap(), 0.0);
        // Non-dyadic constants can leave O(1e-32) rounding residue.
        assert!(measure_instability(&[0.7; 12], 10, 10.0).unwrap() < 1e-30);
    }

    #[test]
    fn instability_hand_case_and_degenerate_window() {
        assert_abs_diff_eq!(
            measure_instability(&[1.0, 3.0], 10, 10.0).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert_eq!(measure_instability(&[2.5], 10, 10.0).unwrap(), 0.0);
    }

    #[test]
    fn empty_history_is_a_structural_error() {
        assert!(measure_instability(&[], 10, 10.0).is_err());
    }

    #[test]
    fn instability_is_clamped_to_s_max() {
        let v = measure_instability(&[0.0, 100.0], 10, 3.0).unwrap();
        assert_eq!(v, 3.0);
    }

    #[test]
    fn streams_are_deterministic_per_address() {
        let cfg = ChannelConfig::default();
        let draw = |seed| {
            let mut rng = RngStream::new(seed, StreamPurpose::Fidelity, 2, 7).rng();
            (0..16)
                .map(|_| sample_fidelity(&cfg, &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(11), draw(11));
        assert_ne!(draw(11), draw(12));
    }
}
