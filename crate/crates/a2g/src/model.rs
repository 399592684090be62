//! Client-side classifiers: an exact statevector simulation of a small
//! RY–RZ + CNOT-ring variational circuit whose trainable angles live on a
//! torus, and a classical logistic surrogate for fast experiments.
//!
//! Forward passes are exact probabilities (no shot sampling), so repeated
//! calls agree bit for bit; stochasticity enters only through SPSA and the
//! channel.

use std::f64::consts::LN_2;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::manifold::{ManifoldSpec, ParamPoint};

const PROB_CLAMP: f64 = 1e-7;

/// Shape of the variational circuit: `num_layers` blocks of per-qubit RY and
/// RZ rotations followed by a CNOT ring, after an RY feature-encoding layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CircuitSpec {
    pub num_qubits: usize,
    pub num_layers: usize,
    pub readout_qubit: usize,
}

impl Default for CircuitSpec {
    fn default() -> Self {
        // Desk-scale default: 4 qubits, 2 layers, 16 trainable angles.
        Self {
            num_qubits: 4,
            num_layers: 2,
            readout_qubit: 0,
        }
    }
}

impl CircuitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_qubits == 0 || self.num_qubits > 8 {
            return Err(Error::Config {
                path: "model.num_qubits".into(),
                reason: format!("must lie in 1..=8, got {}", self.num_qubits),
            });
        }
        if self.num_layers == 0 {
            return Err(Error::Config {
                path: "model.num_layers".into(),
                reason: "must be >= 1".into(),
            });
        }
        if self.readout_qubit >= self.num_qubits {
            return Err(Error::Config {
                path: "model.readout_qubit".into(),
                reason: format!(
                    "must be < num_qubits ({}), got {}",
                    self.num_qubits, self.readout_qubit
                ),
            });
        }
        Ok(())
    }

    /// One RY and one RZ angle per qubit per layer.
    pub fn param_count(&self) -> usize {
        2 * self.num_qubits * self.num_layers
    }
}

/// Exact amplitude vector over 2^n basis states, little-endian qubit order
/// (qubit q is bit q of the basis index).
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amplitudes: Vec<Complex64>,
    num_qubits: usize,
}

impl StateVector {
    /// |0…0⟩ on `num_qubits` qubits.
    pub fn zero_state(num_qubits: usize) -> Self {
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 1 << num_qubits];
        amplitudes[0] = Complex64::new(1.0, 0.0);
        Self {
            amplitudes,
            num_qubits,
        }
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    fn apply_single_qubit(&mut self, qubit: usize, u: [[Complex64; 2]; 2]) {
        let mask = 1usize << qubit;
        for i in 0..self.amplitudes.len() {
            if i & mask == 0 {
                let j = i | mask;
                let a0 = self.amplitudes[i];
                let a1 = self.amplitudes[j];
                self.amplitudes[i] = u[0][0] * a0 + u[0][1] * a1;
                self.amplitudes[j] = u[1][0] * a0 + u[1][1] * a1;
            }
        }
    }

    /// RY(θ) = [[cos θ/2, −sin θ/2], [sin θ/2, cos θ/2]].
    pub fn apply_ry(&mut self, qubit: usize, theta: f64) {
        let (s, c) = (theta / 2.0).sin_cos();
        let u = [
            [Complex64::new(c, 0.0), Complex64::new(-s, 0.0)],
            [Complex64::new(s, 0.0), Complex64::new(c, 0.0)],
        ];
        self.apply_single_qubit(qubit, u);
    }

    /// RZ(θ) = diag(e^{−iθ/2}, e^{iθ/2}).
    pub fn apply_rz(&mut self, qubit: usize, theta: f64) {
        let half = theta / 2.0;
        let e_minus = Complex64::from_polar(1.0, -half);
        let e_plus = Complex64::from_polar(1.0, half);
        let mask = 1usize << qubit;
        for (i, amp) in self.amplitudes.iter_mut().enumerate() {
            *amp *= if i & mask == 0 { e_minus } else { e_plus };
        }
    }

    /// CNOT: flips `target` on the ``control = 1`` subspace.
    pub fn apply_cnot(&mut self, control: usize, target: usize) {
        let cmask = 1usize << control;
        let tmask = 1usize << target;
        for i in 0..self.amplitudes.len() {
            if i & cmask != 0 && i & tmask == 0 {
                let j = i | tmask;
                self.amplitudes.swap(i, j);
            }
        }
    }

    /// Probability of measuring `qubit` in state |1⟩.
    pub fn prob_one(&self, qubit: usize) -> f64 {
        let mask = 1usize << qubit;
        self.amplitudes
            .iter()
            .enumerate()
            .filter(|(i, _)| i & mask != 0)
            .map(|(_, a)| a.norm_sqr())
            .sum()
    }
}

/// Angle-encode a feature vector: RY(x_j) on qubit j for each feature,
/// starting from |0…0⟩. Qubits beyond the feature count stay untouched.
pub fn encode_features(x: &[f64], spec: &CircuitSpec) -> Result<StateVector> {
    spec.validate()?;
    if x.len() > spec.num_qubits {
        return Err(Error::DimensionMismatch {
            context: "encode_features",
            expected: spec.num_qubits,
            actual: x.len(),
        });
    }
    let mut state = StateVector::zero_state(spec.num_qubits);
    for (q, &xj) in x.iter().enumerate() {
        state.apply_ry(q, xj);
    }
    Ok(state)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Circuit forward pass: encode, rotate, entangle, read out the probability
/// of `readout_qubit` being |1⟩. When `params` carries one trailing linear
/// coordinate, it acts as a classical bias folded in through a sigmoid.
pub fn circuit_forward(params: &ParamPoint, x: &[f64], spec: &CircuitSpec) -> Result<f64> {
    spec.validate()?;
    let n_angles = spec.param_count();
    let extra = params
        .dim()
        .checked_sub(n_angles)
        .ok_or(Error::DimensionMismatch {
            context: "circuit params",
            expected: n_angles,
            actual: params.dim(),
        })?;
    if extra > 1 {
        return Err(Error::DimensionMismatch {
            context: "circuit bias",
            expected: n_angles + 1,
            actual: params.dim(),
        });
    }
    let coords = params.coords();
    let mut state = encode_features(x, spec)?;
    let n = spec.num_qubits;
    for layer in 0..spec.num_layers {
        let base = layer * 2 * n;
        for q in 0..n {
            state.apply_ry(q, coords[base + 2 * q]);
            state.apply_rz(q, coords[base + 2 * q + 1]);
        }
        if n > 1 {
            for q in 0..n {
                state.apply_cnot(q, (q + 1) % n);
            }
        }
    }
    let prob = state.prob_one(spec.readout_qubit);
    if extra == 1 {
        let bias = coords[n_angles];
        let clamped = prob.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        Ok(sigmoid(logit(clamped) + bias))
    } else {
        Ok(prob)
    }
}

/// Logistic surrogate: sigmoid(w·x + b) with params = (w…, b), all linear.
pub fn logistic_surrogate_forward(params: &ParamPoint, x: &[f64]) -> Result<f64> {
    if params.dim() != x.len() + 1 {
        return Err(Error::DimensionMismatch {
            context: "logistic params",
            expected: x.len() + 1,
            actual: params.dim(),
        });
    }
    let coords = params.coords();
    let z = coords[..x.len()]
        .iter()
        .zip(x)
        .map(|(w, xi)| w * xi)
        .sum::<f64>()
        + coords[x.len()];
    Ok(sigmoid(z))
}

/// Which classifier a run trains. The logistic surrogate binds its input
/// dimension at data time; the circuit requires features to fit its qubits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelSpec {
    Circuit { circuit: CircuitSpec, bias: bool },
    Logistic,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Circuit { circuit, .. } => circuit.validate(),
            ModelSpec::Logistic => Ok(()),
        }
    }

    /// Parameter manifold for `feature_dim`-dimensional inputs: circuit
    /// angles are angular, any bias and all surrogate weights are linear.
    pub fn param_manifold(&self, feature_dim: usize) -> Result<Arc<ManifoldSpec>> {
        match self {
            ModelSpec::Circuit { circuit, bias } => {
                circuit.validate()?;
                if feature_dim > circuit.num_qubits {
                    return Err(Error::Config {
                        path: "model.num_qubits".into(),
                        reason: format!(
                            "{} features do not fit on {} qubits",
                            feature_dim, circuit.num_qubits
                        ),
                    });
                }
                let mut mask = vec![true; circuit.param_count()];
                if *bias {
                    mask.push(false);
                }
                Ok(Arc::new(ManifoldSpec::new(mask)?))
            }
            ModelSpec::Logistic => Ok(Arc::new(ManifoldSpec::euclidean(feature_dim + 1)?)),
        }
    }

    pub fn forward(&self, params: &ParamPoint, x: &[f64]) -> Result<f64> {
        match self {
            ModelSpec::Circuit { circuit, .. } => circuit_forward(params, x, circuit),
            ModelSpec::Logistic => logistic_surrogate_forward(params, x),
        }
    }
}

/// Mean binary cross-entropy over a batch, predictions clamped to
/// [1e−7, 1 − 1e−7] so saturated outputs stay finite.
pub fn bce_loss(
    model: &ModelSpec,
    params: &ParamPoint,
    features: &[Vec<f64>],
    labels: &[u8],
) -> Result<f64> {
    if features.is_empty() {
        return Err(Error::EmptyInput("batch"));
    }
    if features.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "bce_loss",
            expected: features.len(),
            actual: labels.len(),
        });
    }
    let mut total = 0.0;
    for (x, &y) in features.iter().zip(labels) {
        let p = self::clamp_prob(model.forward(params, x)?);
        total += if y == 1 { -p.ln() } else { -(1.0 - p).ln() };
    }
    Ok(total / features.len() as f64)
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Closed-form BCE at p̂ = 0.5 on every sample; handy anchor for tests.
pub const BCE_AT_HALF: f64 = LN_2;
