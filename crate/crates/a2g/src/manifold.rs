//! Parameter-space geometry: Log/Exp maps on products of circles and lines,
//! the trust-weighted tangent average, and the correction operator applied by
//! the server update.
//!
//! Every coordinate is independently either angular (lives on the unit circle
//! with period 2π) or linear (lives on the real line), so all maps factor
//! per coordinate. Angular coordinates are stored canonically in [−π, π);
//! tangent components along angular coordinates are shortest signed arcs in
//! (−π, π], with the antipodal tie at exactly π resolved to +π.

use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::qos::TrustWeights;

/// Wrap an angle into the canonical point range [−π, π).
pub fn canonicalize_angle(x: f64) -> f64 {
    let w = (x + PI).rem_euclid(TAU) - PI;
    if w >= PI {
        w - TAU
    } else {
        w
    }
}

/// Shortest signed arc representative in (−π, π]; the tie at exactly π takes
/// the +π branch.
pub fn shortest_arc(x: f64) -> f64 {
    let w = x.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

/// Which coordinates of a parameter vector are angular and which are linear.
///
/// An all-false mask is plain ℝᵈ, an all-true mask is the torus Tᵈ, and mixed
/// masks are the product of the two with the product metric.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifoldSpec {
    angular_mask: Vec<bool>,
}

impl ManifoldSpec {
    pub fn new(angular_mask: Vec<bool>) -> Result<Self> {
        if angular_mask.is_empty() {
            return Err(Error::EmptyInput("angular_mask"));
        }
        Ok(Self { angular_mask })
    }

    /// ℝᵈ: every coordinate linear.
    pub fn euclidean(dim: usize) -> Result<Self> {
        Self::new(vec![false; dim])
    }

    /// Tᵈ: every coordinate angular.
    pub fn torus(dim: usize) -> Result<Self> {
        Self::new(vec![true; dim])
    }

    pub fn dim(&self) -> usize {
        self.angular_mask.len()
    }

    pub fn is_angular(&self, i: usize) -> bool {
        self.angular_mask[i]
    }

    pub fn is_euclidean(&self) -> bool {
        self.angular_mask.iter().all(|&a| !a)
    }

    pub fn angular_mask(&self) -> &[bool] {
        &self.angular_mask
    }

    /// Wrap angular coordinates into [−π, π); linear coordinates untouched.
    pub fn canonicalize(&self, coords: &mut [f64]) {
        for (c, &angular) in coords.iter_mut().zip(&self.angular_mask) {
            if angular {
                *c = canonicalize_angle(*c);
            }
        }
    }
}

/// A point on the parameter manifold. Angular coordinates are always stored
/// canonically in [−π, π).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamPoint {
    coords: Vec<f64>,
    spec: Arc<ManifoldSpec>,
}

impl ParamPoint {
    /// Build a point, wrapping angular coordinates into canonical range.
    pub fn new(coords: Vec<f64>, spec: Arc<ManifoldSpec>) -> Result<Self> {
        if coords.len() != spec.dim() {
            return Err(Error::DimensionMismatch {
                context: "ParamPoint",
                expected: spec.dim(),
                actual: coords.len(),
            });
        }
        let mut coords = coords;
        spec.canonicalize(&mut coords);
        Ok(Self { coords, spec })
    }

    /// A point in ℝᵈ with a freshly built Euclidean spec.
    pub fn euclidean(coords: Vec<f64>) -> Result<Self> {
        let spec = Arc::new(ManifoldSpec::euclidean(coords.len())?);
        Self::new(coords, spec)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn spec(&self) -> &ManifoldSpec {
        &self.spec
    }

    pub fn spec_handle(&self) -> &Arc<ManifoldSpec> {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

/// A tangent vector at some base point. Components along angular coordinates
/// are shortest-arc representatives in (−π, π].
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVec {
    coords: Vec<f64>,
    spec: Arc<ManifoldSpec>,
}

impl TangentVec {
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn spec(&self) -> &ManifoldSpec {
        &self.spec
    }

    /// Euclidean norm of the tangent components.
    pub fn norm(&self) -> f64 {
        self.coords.iter().map(|c| c * c).sum::<f64>().sqrt()
    }
}

/// Displacement added to the global coordinates by the server update.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionVec {
    coords: Vec<f64>,
}

impl CorrectionVec {
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn norm(&self) -> f64 {
        self.coords.iter().map(|c| c * c).sum::<f64>().sqrt()
    }
}

fn check_same_spec(base: &ParamPoint, other: &ParamPoint) -> Result<()> {
    if base.spec() != other.spec() {
        return Err(Error::SpecMismatch("points live on different manifolds"));
    }
    Ok(())
}

/// Log map at `base`: linear coordinates subtract, angular coordinates take
/// the signed shortest arc from base to target.
pub fn log_map(base: &ParamPoint, target: &ParamPoint) -> Result<TangentVec> {
    check_same_spec(base, target)?;
    let spec = base.spec_handle().clone();
    let coords = base
        .coords()
        .iter()
        .zip(target.coords())
        .enumerate()
        .map(|(i, (&b, &t))| {
            if spec.is_angular(i) {
                shortest_arc(t - b)
            } else {
                t - b
            }
        })
        .collect();
    Ok(TangentVec { coords, spec })
}

/// Exp map at `base`: linear coordinates add, angular coordinates add and
/// wrap back into [−π, π).
pub fn exp_map(base: &ParamPoint, tangent: &TangentVec) -> Result<ParamPoint> {
    if base.spec() != tangent.spec() {
        return Err(Error::SpecMismatch(
            "tangent vector belongs to a different manifold",
        ));
    }
    let coords = base
        .coords()
        .iter()
        .zip(tangent.coords())
        .map(|(&b, &v)| b + v)
        .collect();
    ParamPoint::new(coords, base.spec_handle().clone())
}

/// Trust-weighted tangent average of the client models at `base`:
/// v = Σᵢ wᵢ · Log(base, θᵢ).
pub fn weighted_tangent_average(
    base: &ParamPoint,
    clients: &[ParamPoint],
    weights: &TrustWeights,
) -> Result<TangentVec> {
    if clients.is_empty() {
        return Err(Error::EmptyInput("client list"));
    }
    if weights.len() != clients.len() {
        return Err(Error::DimensionMismatch {
            context: "weighted_tangent_average",
            expected: clients.len(),
            actual: weights.len(),
        });
    }
    let mut acc = vec![0.0; base.dim()];
    for (client, &w) in clients.iter().zip(weights.weights()) {
        let log = log_map(base, client)?;
        for (a, &v) in acc.iter_mut().zip(log.coords()) {
            *a += w * v;
        }
    }
    Ok(TangentVec {
        coords: acc,
        spec: base.spec_handle().clone(),
    })
}

/// Geometry correction Ψ = Exp(base, v) ⊖ base, reported as a coordinate
/// displacement whose angular components are shortest arcs, so adding Ψ to the
/// base coordinates and re-canonicalizing lands exactly on Exp(base, v).
pub fn geometry_correction(
    base: &ParamPoint,
    clients: &[ParamPoint],
    weights: &TrustWeights,
) -> Result<CorrectionVec> {
    let v = weighted_tangent_average(base, clients, weights)?;
    let moved = exp_map(base, &v)?;
    let coords = base
        .coords()
        .iter()
        .zip(moved.coords())
        .enumerate()
        .map(|(i, (&b, &m))| {
            if base.spec().is_angular(i) {
                shortest_arc(m - b)
            } else {
                m - b
            }
        })
        .collect();
    Ok(CorrectionVec { coords })
}

/// Geometric dispersion ρ: the largest tangent-norm deviation of any client
/// from the base point.
pub fn dispersion(base: &ParamPoint, clients: &[ParamPoint]) -> Result<f64> {
    if clients.is_empty() {
        return Err(Error::EmptyInput("client list"));
    }
    let mut rho: f64 = 0.0;
    for client in clients {
        rho = rho.max(log_map(base, client)?.norm());
    }
    Ok(rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn torus_point(coords: Vec<f64>) -> ParamPoint {
        let spec = Arc::new(ManifoldSpec::torus(coords.len()).unwrap());
        ParamPoint::new(coords, spec).unwrap()
    }

    /// Independent oracle: signed shortest arc by minimizing |t − b + 2πk|
    /// over integer k.
    fn arc_oracle(base: f64, target: f64) -> f64 {
        let mut best = f64::INFINITY;
        let mut arg = 0.0;
        for k in -3..=3 {
            let cand = target - base + TAU * k as f64;
            if cand.abs() < best.abs() || (cand.abs() == best.abs() && cand > arg) {
                best = cand;
                arg = cand;
            }
        }
        arg
    }

    #[test]
    fn euclidean_log_is_subtraction() {
        let base = ParamPoint::euclidean(vec![1.0, 2.0]).unwrap();
        let target = ParamPoint::new(vec![3.0, 5.0], base.spec_handle().clone()).unwrap();
        let log = log_map(&base, &target).unwrap();
        assert_eq!(log.coords(), &[2.0, 3.0]);
    }

    #[test]
    fn torus_log_takes_shortest_arc() {
        let base = torus_point(vec![0.1]);
        let target = torus_point(vec![TAU - 0.1]); // stored as −0.1
        assert_abs_diff_eq!(target.coords()[0], -0.1, epsilon = 1e-12);
        let log = log_map(&base, &target).unwrap();
        assert_abs_diff_eq!(log.coords()[0], -0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(log.coords()[0], arc_oracle(0.1, -0.1), epsilon = 1e-12);
    }

    #[test]
    fn log_of_identical_points_is_zero() {
        let p = torus_point(vec![0.3, -2.0, 3.1]);
        let log = log_map(&p, &p).unwrap();
        assert!(log.coords().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn euclidean_exp_is_addition() {
        let base = ParamPoint::euclidean(vec![1.0]).unwrap();
        let t = log_map(
            &base,
            &ParamPoint::new(vec![1.5], base.spec_handle().clone()).unwrap(),
        )
        .unwrap();
        let out = exp_map(&base, &t).unwrap();
        assert_eq!(out.coords(), &[1.5]);
    }

    #[test]
    fn torus_exp_wraps() {
        let base = torus_point(vec![3.0]);
        let target = torus_point(vec![3.5]); // canonical −2.7832…
        let log = log_map(&base, &target).unwrap();
        assert_abs_diff_eq!(log.coords()[0], 0.5, epsilon = 1e-12);
        let out = exp_map(&base, &log).unwrap();
        assert_abs_diff_eq!(out.coords()[0], 3.5 - TAU, epsilon = 1e-12);
    }

    #[test]
    fn antipode_takes_plus_pi_branch() {
        let base = torus_point(vec![0.0]);
        let target = torus_point(vec![PI]); // canonical −π
        let log = log_map(&base, &target).unwrap();
        assert_eq!(log.coords()[0], PI);
    }

    #[test]
    fn weighted_average_degenerate_and_hand_cases() {
        let base = ParamPoint::euclidean(vec![0.0]).unwrap();
        let spec = base.spec_handle().clone();
        let c0 = ParamPoint::new(vec![0.0], spec.clone()).unwrap();
        let c1 = ParamPoint::new(vec![2.0], spec.clone()).unwrap();

        let w1 = TrustWeights::from_weights(vec![1.0]).unwrap();
        let v = weighted_tangent_average(&base, std::slice::from_ref(&c1), &w1).unwrap();
        assert_eq!(v.coords(), log_map(&base, &c1).unwrap().coords());

        let w = TrustWeights::from_weights(vec![0.5, 0.5]).unwrap();
        let v = weighted_tangent_average(&base, &[c0.clone(), c1], &w).unwrap();
        assert_abs_diff_eq!(v.coords()[0], 1.0, epsilon = 1e-15);

        let consensus = weighted_tangent_average(&base, &[c0.clone(), c0], &w).unwrap();
        assert_eq!(consensus.coords(), &[0.0]);
    }

    #[test]
    fn correction_reduces_to_weighted_mean_shift_in_euclidean_space() {
        let base = ParamPoint::euclidean(vec![1.0, -2.0]).unwrap();
        let spec = base.spec_handle().clone();
        let clients = vec![
            ParamPoint::new(vec![2.0, 0.0], spec.clone()).unwrap(),
            ParamPoint::new(vec![-1.0, 4.0], spec.clone()).unwrap(),
        ];
        let weights = TrustWeights::from_weights(vec![0.25, 0.75]).unwrap();
        let psi = geometry_correction(&base, &clients, &weights).unwrap();
        for i in 0..2 {
            let expected = 0.25 * (clients[0].coords()[i] - base.coords()[i])
                + 0.75 * (clients[1].coords()[i] - base.coords()[i]);
            assert_abs_diff_eq!(psi.coords()[i], expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn correction_wraps_backward_through_antipode() {
        let base = torus_point(vec![-3.0]);
        let clients = vec![torus_point(vec![3.0])];
        let weights = TrustWeights::from_weights(vec![1.0]).unwrap();
        let psi = geometry_correction(&base, &clients, &weights).unwrap();
        assert_abs_diff_eq!(psi.coords()[0], -(TAU - 6.0), epsilon = 1e-12);
    }

    #[test]
    fn correction_is_zero_at_consensus() {
        let base = torus_point(vec![0.4, -1.7]);
        let clients = vec![base.clone(), base.clone()];
        let weights = TrustWeights::from_weights(vec![0.5, 0.5]).unwrap();
        let psi = geometry_correction(&base, &clients, &weights).unwrap();
        assert!(psi.coords().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn dispersion_examples() {
        let base = ParamPoint::euclidean(vec![0.0]).unwrap();
        let spec = base.spec_handle().clone();
        let clients = vec![
            ParamPoint::new(vec![1.0], spec.clone()).unwrap(),
            ParamPoint::new(vec![-3.0], spec.clone()).unwrap(),
        ];
        assert_abs_diff_eq!(dispersion(&base, &clients).unwrap(), 3.0, epsilon = 1e-15);

        let base = torus_point(vec![0.0]);
        let clients = vec![torus_point(vec![PI - 0.01])];
        assert_abs_diff_eq!(
            dispersion(&base, &clients).unwrap(),
            PI - 0.01,
            epsilon = 1e-12
        );

        assert_abs_diff_eq!(dispersion(&base, std::slice::from_ref(&base)).unwrap(), 0.0);
    }

    #[test]
    fn spec_mismatch_is_rejected() {
        let a = ParamPoint::euclidean(vec![0.0]).unwrap();
        let b = torus_point(vec![0.0]);
        assert!(log_map(&a, &b).is_err());
        let t = log_map(&b, &b).unwrap();
        assert!(exp_map(&a, &t).is_err());
    }

    #[test]
    fn empty_client_list_is_rejected() {
        let base = ParamPoint::euclidean(vec![0.0]).unwrap();
        let w = TrustWeights::from_weights(vec![1.0]).unwrap();
        assert!(weighted_tangent_average(&base, &[], &w).is_err());
        assert!(dispersion(&base, &[]).is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn mixed_point(mask: &[bool], raw: &[f64]) -> ParamPoint {
            let spec = Arc::new(ManifoldSpec::new(mask.to_vec()).unwrap());
            ParamPoint::new(raw.to_vec(), spec).unwrap()
        }

        proptest! {
            #[test]
            fn log_range_and_roundtrip_on_mixed_manifolds(
                mask in proptest::collection::vec(any::<bool>(), 1..6),
                scale in 0.1f64..8.0,
                seeds in proptest::collection::vec(-1.0f64..1.0, 12),
            ) {
                let d = mask.len();
                let base = mixed_point(&mask, &seeds[..d].iter().map(|s| s * scale).collect::<Vec<_>>());
                let target = ParamPoint::new(
                    seeds[6..6 + d].iter().map(|s| s * scale).collect(),
                    base.spec_handle().clone(),
                ).unwrap();
                let log = log_map(&base, &target).unwrap();
                for (i, &v) in log.coords().iter().enumerate() {
                    if mask[i] {
                        prop_assert!(v > -PI && v <= PI, "component {v}");
                    }
                }
                let back = exp_map(&base, &log).unwrap();
                for (a, b) in back.coords().iter().zip(target.coords()) {
                    prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
                }
            }

            #[test]
            fn single_coordinate_log_matches_the_arc_oracle(
                base in -PI..PI,
                target in -PI..PI,
            ) {
                let b = torus_point(vec![base]);
                let t = torus_point(vec![target]);
                let log = log_map(&b, &t).unwrap();
                prop_assert!((log.coords()[0] - arc_oracle(base, target)).abs() < 1e-12);
            }

            #[test]
            fn rotation_equivariance_on_the_torus(
                base in -PI..PI,
                target in -PI..PI,
                shift in -10.0f64..10.0,
            ) {
                let plain = log_map(&torus_point(vec![base]), &torus_point(vec![target])).unwrap();
                let shifted = log_map(
                    &torus_point(vec![base + shift]),
                    &torus_point(vec![target + shift]),
                ).unwrap();
                prop_assert!((plain.coords()[0] - shifted.coords()[0]).abs() < 1e-9);
            }

            #[test]
            fn correction_never_exceeds_dispersion(
                base in proptest::collection::vec(-PI..PI, 3),
                clients in proptest::collection::vec(proptest::collection::vec(-PI..PI, 3), 1..6),
                raw_weights in proptest::collection::vec(0.01f64..1.0, 6),
            ) {
                let b = torus_point(base);
                let points: Vec<ParamPoint> = clients
                    .iter()
                    .map(|c| ParamPoint::new(c.clone(), b.spec_handle().clone()).unwrap())
                    .collect();
                let k = points.len();
                let total: f64 = raw_weights[..k].iter().sum();
                let weights = TrustWeights::from_weights(
                    raw_weights[..k].iter().map(|w| w / total).collect(),
                ).unwrap();
                let psi = geometry_correction(&b, &points, &weights).unwrap();
                let rho = dispersion(&b, &points).unwrap();
                prop_assert!(psi.norm() <= rho + 1e-9, "{} > {rho}", psi.norm());
            }
        }
    }
}
