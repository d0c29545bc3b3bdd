//! Trust-aware communication quality and the normalized update weights derived
//! from it.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::geometry::Vec3;
use crate::model::{neighbors, CommGraph, RobotId, RobotState, SwarmParams, TrustMap};
use crate::scalar::Scalar;

/// Denominators below this trigger the coast-on-own-state fallback.
pub const WEIGHT_DENOMINATOR_EPS: f64 = 1e-12;

/// Update weights for one robot: its own term plus one per neighbor.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector<T> {
    pub self_weight: T,
    pub neighbor_weights: BTreeMap<RobotId, T>,
}

impl<T: Scalar> WeightVector<T> {
    pub fn total(&self) -> T {
        self.neighbor_weights.values().fold(self.self_weight, |acc, &w| acc + w)
    }
}

/// Quality of the link between two robots given their positions and trust gains.
///
/// Full quality `(g_i + g_j)·η/2` inside `ρ`, exponential decay out to `R`, zero
/// at or beyond `R`. When abandonment is enabled a link touching a zero-gain
/// robot is cut entirely.
pub fn comm_quality<T: Scalar>(
    pos_i: Vec3<T>,
    pos_j: Vec3<T>,
    g_i: T,
    g_j: T,
    params: &SwarmParams<T>,
) -> Result<T> {
    params.validate()?;
    Ok(comm_quality_unchecked(pos_i.distance(pos_j), g_i, g_j, params))
}

pub(crate) fn comm_quality_unchecked<T: Scalar>(d: T, g_i: T, g_j: T, params: &SwarmParams<T>) -> T {
    let r = params.comm_radius;
    let rho = params.best_quality_dist;
    if d >= r {
        return T::zero();
    }
    if params.abandon_at_zero_trust && g_i.min(g_j) == T::zero() {
        return T::zero();
    }
    let peak = (g_i + g_j) * params.quality_weight / T::lit(2.0);
    if d <= rho {
        peak
    } else {
        peak * (-params.decay_gain * (d - rho) / (r - rho)).exp()
    }
}

/// Quality a robot assigns to its own state: the link formula at distance zero
/// with both endpoints equal, i.e. `g_i·η`.
pub fn self_quality<T: Scalar>(g_i: T, params: &SwarmParams<T>) -> T {
    g_i * params.quality_weight
}

/// Normalizes self and neighbor qualities into convex update weights.
pub fn weight_vector<T: Scalar>(f_self: T, f_neighbors: &BTreeMap<RobotId, T>) -> WeightVector<T> {
    let denom = f_neighbors.values().fold(f_self, |acc, &f| acc + f);
    if denom < T::lit(WEIGHT_DENOMINATOR_EPS) {
        return WeightVector {
            self_weight: T::one(),
            neighbor_weights: f_neighbors.keys().map(|&j| (j, T::zero())).collect(),
        };
    }
    WeightVector {
        self_weight: f_self / denom,
        neighbor_weights: f_neighbors.iter().map(|(&j, &f)| (j, f / denom)).collect(),
    }
}

/// Builds the communication graph for the current positions and trust.
pub fn build_comm_graph<T: Scalar>(
    states: &[RobotState<T>],
    trust: &TrustMap<T>,
    params: &SwarmParams<T>,
) -> Result<CommGraph<T>> {
    params.validate()?;
    let adjacency = neighbors(states, params.comm_radius);
    let by_id: BTreeMap<RobotId, &RobotState<T>> = states.iter().map(|s| (s.id, s)).collect();
    let mut graph = CommGraph::default();
    for s in states {
        graph.self_quality.insert(s.id, self_quality(trust.gain(s.id), params));
    }
    for (&i, set) in &adjacency {
        for &j in set.iter().filter(|&&j| i < j) {
            let d = by_id[&i].pos.distance(by_id[&j].pos);
            let q = comm_quality_unchecked(d, trust.gain(i), trust.gain(j), params);
            graph.edges.insert((i, j), q);
        }
    }
    Ok(graph)
}

/// Weights robot `i` uses for its next update, read off the graph.
pub fn weights_for<T: Scalar>(graph: &CommGraph<T>, i: RobotId) -> WeightVector<T> {
    weight_vector(graph.self_quality(i), &graph.neighbor_qualities(i))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Role, TrustLevel};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn params(abandon: bool) -> SwarmParams<f64> {
        SwarmParams { abandon_at_zero_trust: abandon, ..SwarmParams::default() }
    }

    fn along_x(d: f64) -> (Vec3<f64>, Vec3<f64>) {
        (Vec3::new(0.0, 0.0, 5.0), Vec3::new(d, 0.0, 5.0))
    }

    #[test]
    fn zero_beyond_radius() {
        let (a, b) = along_x(20.0);
        assert_eq!(comm_quality(a, b, 1.0, 1.0, &params(false)).unwrap(), 0.0);
    }

    #[test]
    fn full_quality_inside_rho() {
        let (a, b) = along_x(3.0);
        assert_eq!(comm_quality(a, b, 1.0, 1.0, &params(false)).unwrap(), 1.0);
    }

    #[test]
    fn decays_between_rho_and_radius() {
        let (a, b) = along_x(10.0);
        let q = comm_quality(a, b, 1.0, 0.5, &params(false)).unwrap();
        // 0.75 * exp(-0.5) evaluated by hand
        assert_abs_diff_eq!(q, 0.454_898_0, epsilon = 1e-6);
        assert_abs_diff_eq!(q, 0.75 * (-0.5f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn abandonment_cuts_zero_trust_links() {
        let (a, b) = along_x(3.0);
        assert_eq!(comm_quality(a, b, 1.0, 0.0, &params(true)).unwrap(), 0.0);
        assert_eq!(comm_quality(a, b, 1.0, 0.0, &params(false)).unwrap(), 0.5);
    }

    #[test]
    fn rejects_rho_not_below_radius() {
        let p = SwarmParams { best_quality_dist: 20.0, ..params(false) };
        let (a, b) = along_x(3.0);
        assert!(comm_quality(a, b, 1.0, 1.0, &p).is_err());
    }

    #[test]
    fn self_quality_examples() {
        let p = params(true);
        assert_eq!(self_quality(1.0, &p), 1.0);
        assert_eq!(self_quality(0.5, &p), 0.5);
        assert_eq!(self_quality(0.0, &p), 0.0);
    }

    #[test]
    fn weight_examples() {
        let a = RobotId(1);
        let b = RobotId(2);
        let w = weight_vector(1.0, &BTreeMap::from([(a, 1.0), (b, 1.0)]));
        assert_abs_diff_eq!(w.self_weight, 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w.neighbor_weights[&a], 1.0 / 3.0, epsilon = 1e-15);

        let w = weight_vector(1.0, &BTreeMap::from([(a, 1.0), (b, 0.5)]));
        assert_abs_diff_eq!(w.self_weight, 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(w.neighbor_weights[&a], 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(w.neighbor_weights[&b], 0.2, epsilon = 1e-15);

        let w = weight_vector(0.0, &BTreeMap::new());
        assert_eq!(w.self_weight, 1.0);
        assert!(w.neighbor_weights.is_empty());
    }

    fn robot(id: u32, x: f64, y: f64) -> RobotState<f64> {
        RobotState::new(id, Vec3::new(x, y, 5.0), Vec3::zero(), Role::Follower)
    }

    #[test]
    fn graph_out_of_range_has_no_edges() {
        let states = [robot(0, 0.0, 0.0), robot(1, 30.0, 0.0), robot(2, 0.0, 30.0)];
        let mut trust = TrustMap::uniform(states.iter().map(|s| s.id), TrustLevel::MAX);
        trust.set_level(RobotId(2), TrustLevel::new(3).unwrap());
        let g = build_comm_graph(&states, &trust, &params(true)).unwrap();
        assert!(g.edges.is_empty());
        assert_eq!(g.self_quality(RobotId(0)), 1.0);
        assert_eq!(g.self_quality(RobotId(2)), 0.5);
    }

    #[test]
    fn graph_close_uniform_trust_is_full_quality() {
        let states = [robot(0, 0.0, 0.0), robot(1, 2.0, 0.0), robot(2, 0.0, 2.0)];
        let trust = TrustMap::uniform(states.iter().map(|s| s.id), TrustLevel::MAX);
        let g = build_comm_graph(&states, &trust, &params(true)).unwrap();
        assert_eq!(g.edges.len(), 3);
        assert!(g.edges.values().all(|&q| q == 1.0));
    }

    proptest! {
        #[test]
        fn quality_bounded_symmetric(
            x1 in -30.0..30.0f64, y1 in -30.0..30.0f64, x2 in -30.0..30.0f64, y2 in -30.0..30.0f64,
            gi in 0.0..=1.0f64, gj in 0.0..=1.0f64, eta in 0.01..=1.0f64, abandon: bool,
        ) {
            let p = SwarmParams { quality_weight: eta, abandon_at_zero_trust: abandon, ..SwarmParams::default() };
            let a = Vec3::new(x1, y1, 5.0);
            let b = Vec3::new(x2, y2, 5.0);
            let fij = comm_quality(a, b, gi, gj, &p).unwrap();
            let fji = comm_quality(b, a, gj, gi, &p).unwrap();
            prop_assert_eq!(fij.to_bits(), fji.to_bits());
            prop_assert!((0.0..=eta).contains(&fij));
        }

        #[test]
        fn quality_monotone(d1 in 0.0..20.0f64, d2 in 0.0..20.0f64, g1 in 0.0..=1.0f64, g2 in 0.0..=1.0f64, gj in 0.0..=1.0f64) {
            let p = params(false);
            let (near, far) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            prop_assert!(comm_quality_unchecked(near, g1, gj, &p) >= comm_quality_unchecked(far, g1, gj, &p));
            let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
            prop_assert!(comm_quality_unchecked(near, lo, gj, &p) <= comm_quality_unchecked(near, hi, gj, &p));
        }

        #[test]
        fn weights_are_convex(fs in 0.0..=1.0f64, fn_ in prop::collection::vec(0.0..=1.0f64, 0..8)) {
            let m: BTreeMap<_, _> = fn_.iter().enumerate().map(|(k, &f)| (RobotId(k as u32), f)).collect();
            let w = weight_vector(fs, &m);
            prop_assert!((w.total() - 1.0).abs() <= 1e-12);
            prop_assert!(w.neighbor_weights.values().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }
}
