//! Domain types shared by the control, trust and scenario modules.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::scalar::Scalar;

/// Horizontal speeds below this leave the stored heading untouched.
pub const HEADING_SPEED_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RobotId(pub u32);

impl fmt::Display for RobotId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Leader,
    Follower,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Leader => "leader",
            Role::Follower => "follower",
        }
    }
}

impl std::str::FromStr for Role {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "leader" => Ok(Role::Leader),
            "follower" => Ok(Role::Follower),
            other => Err(Error::SchemaMismatch(format!("unknown role {other:?}"))),
        }
    }
}

/// Kinematic state of one robot.
///
/// `faulty` is a diagnostic label for telemetry; the control laws never read it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RobotState<T> {
    pub id: RobotId,
    pub pos: Vec3<T>,
    pub vel: Vec3<T>,
    #[serde(default)]
    pub heading: T,
    pub role: Role,
    #[serde(default)]
    pub faulty: bool,
}

impl<T: Scalar> RobotState<T> {
    pub fn new(id: u32, pos: Vec3<T>, vel: Vec3<T>, role: Role) -> Self {
        let mut s = Self { id: RobotId(id), pos, vel, heading: T::zero(), role, faulty: false };
        s.refresh_heading();
        s
    }

    /// Re-derives the heading from the horizontal velocity, keeping the previous
    /// value when the robot is (nearly) stationary.
    pub fn refresh_heading(&mut self) {
        if self.vel.horizontal_norm() > T::lit(HEADING_SPEED_EPS) {
            self.heading = self.vel.y.atan2(self.vel.x);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.pos.is_finite() && self.vel.is_finite() && self.heading.is_finite()
    }
}

/// Optional short-range repulsion used only to keep live demos readable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Separation<T> {
    pub radius: T,
    pub gain: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, bound = "T: Scalar")]
pub struct SwarmParams<T> {
    /// Communication radius `R`, meters.
    pub comm_radius: T,
    /// Distance `ρ` within which links have best quality, meters.
    pub best_quality_dist: T,
    /// Weighting factor `η` in (0, 1].
    pub quality_weight: T,
    /// Exponential decay constant of link quality between `ρ` and `R`.
    pub decay_gain: T,
    /// Position gain of the navigational feedback, 1/s.
    pub nav_gain_pos: T,
    /// Velocity gain of the navigational feedback.
    pub nav_gain_vel: T,
    pub u_max: T,
    pub dt: T,
    pub altitude_hold: T,
    /// Zero every link touching a robot whose trust gain is exactly 0.
    pub abandon_at_zero_trust: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub separation: Option<Separation<T>>,
}

impl<T: Scalar> Default for SwarmParams<T> {
    fn default() -> Self {
        Self {
            comm_radius: T::lit(15.0),
            best_quality_dist: T::lit(5.0),
            quality_weight: T::one(),
            decay_gain: T::one(),
            nav_gain_pos: T::lit(0.1),
            nav_gain_vel: T::lit(0.4),
            u_max: T::lit(2.0),
            dt: T::lit(0.1),
            altitude_hold: T::lit(5.0),
            abandon_at_zero_trust: true,
            separation: None,
        }
    }
}

impl<T: Scalar> SwarmParams<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParams(msg.to_owned()));
        if !(self.best_quality_dist > T::zero() && self.best_quality_dist < self.comm_radius) {
            return bad("best_quality_dist must satisfy 0 < rho < comm_radius");
        }
        if !(self.quality_weight > T::zero() && self.quality_weight <= T::one()) {
            return bad("quality_weight must lie in (0, 1]");
        }
        if !(self.decay_gain > T::zero()) {
            return bad("decay_gain must be positive");
        }
        if !(self.dt > T::zero()) {
            return bad("dt must be positive");
        }
        if !(self.nav_gain_pos >= T::zero() && self.nav_gain_vel >= T::zero()) {
            return bad("navigation gains must be non-negative");
        }
        if !(self.u_max > T::zero()) {
            return bad("u_max must be positive");
        }
        if let Some(sep) = self.separation {
            if !(sep.radius > T::zero() && sep.gain >= T::zero()) {
                return bad("separation radius must be positive and gain non-negative");
            }
        }
        Ok(())
    }
}

/// Five-point trust rating, 1 = completely distrust, 5 = completely trust.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct TrustLevel(u8);

impl TrustLevel {
    pub const MIN: TrustLevel = TrustLevel(1);
    pub const MAX: TrustLevel = TrustLevel(5);

    pub fn new(level: u8) -> Option<Self> {
        (1..=5).contains(&level).then_some(Self(level))
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn lower(self) -> Self {
        Self(self.0.saturating_sub(1).max(1))
    }

    pub fn raise(self) -> Self {
        Self((self.0 + 1).min(5))
    }

    /// Linear map from rating to gain: (level - 1) / 4.
    pub fn gain<T: Scalar>(self) -> T {
        T::from_usize(usize::from(self.0 - 1)) / T::lit(4.0)
    }
}

impl TryFrom<u8> for TrustLevel {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        TrustLevel::new(v).ok_or_else(|| format!("trust level {v} outside 1..=5"))
    }
}

impl From<TrustLevel> for u8 {
    fn from(l: TrustLevel) -> u8 {
        l.0
    }
}

impl fmt::Display for TrustLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrustEntry<T> {
    pub level: TrustLevel,
    pub gain: T,
}

/// Per-robot trust level and the gain the controller consumes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrustMap<T> {
    entries: BTreeMap<RobotId, TrustEntry<T>>,
}

impl<T: Scalar> TrustMap<T> {
    pub fn uniform(ids: impl IntoIterator<Item = RobotId>, level: TrustLevel) -> Self {
        let mut map = Self { entries: BTreeMap::new() };
        for id in ids {
            map.set_level(id, level);
        }
        map
    }

    pub fn set_level(&mut self, id: RobotId, level: TrustLevel) {
        self.entries.insert(id, TrustEntry { level, gain: level.gain() });
    }

    /// Stores an arbitrary gain in [0, 1] next to a nominal level.
    pub fn set_gain(&mut self, id: RobotId, level: TrustLevel, gain: T) {
        let gain = gain.max(T::zero()).min(T::one());
        self.entries.insert(id, TrustEntry { level, gain });
    }

    pub fn entry(&self, id: RobotId) -> Option<TrustEntry<T>> {
        self.entries.get(&id).copied()
    }

    pub fn level(&self, id: RobotId) -> TrustLevel {
        self.entries.get(&id).map_or(TrustLevel::MAX, |e| e.level)
    }

    /// Gain for `id`; robots missing from the map are fully trusted.
    pub fn gain(&self, id: RobotId) -> T {
        self.entries.get(&id).map_or(T::one(), |e| e.gain)
    }

    pub fn iter(&self) -> impl Iterator<Item = (RobotId, TrustEntry<T>)> + '_ {
        self.entries.iter().map(|(id, e)| (*id, *e))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Links between robots within range and their communication quality.
///
/// Edge keys are stored with the smaller id first so lookups are symmetric by
/// construction.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CommGraph<T> {
    pub edges: BTreeMap<(RobotId, RobotId), T>,
    pub self_quality: BTreeMap<RobotId, T>,
}

impl<T: Scalar> CommGraph<T> {
    pub fn key(i: RobotId, j: RobotId) -> (RobotId, RobotId) {
        if i <= j {
            (i, j)
        } else {
            (j, i)
        }
    }

    pub fn quality(&self, i: RobotId, j: RobotId) -> Option<T> {
        self.edges.get(&Self::key(i, j)).copied()
    }

    pub fn self_quality(&self, i: RobotId) -> T {
        self.self_quality.get(&i).copied().unwrap_or_else(T::zero)
    }

    /// Neighbors of `i` together with link quality.
    pub fn neighbor_qualities(&self, i: RobotId) -> BTreeMap<RobotId, T> {
        self.edges
            .iter()
            .filter_map(|(&(a, b), &q)| {
                if a == i {
                    Some((b, q))
                } else if b == i {
                    Some((a, q))
                } else {
                    None
                }
            })
            .collect()
    }
}

pub type NeighborMap = BTreeMap<RobotId, BTreeSet<RobotId>>;

/// Neighbor sets under the strict `distance < radius` rule.
pub fn neighbors<T: Scalar>(states: &[RobotState<T>], radius: T) -> NeighborMap {
    let mut out: NeighborMap = states.iter().map(|s| (s.id, BTreeSet::new())).collect();
    for (a, sa) in states.iter().enumerate() {
        for sb in &states[a + 1..] {
            if sa.pos.distance(sb.pos) < radius {
                out.entry(sa.id).or_default().insert(sb.id);
                out.entry(sb.id).or_default().insert(sa.id);
            }
        }
    }
    out
}

/// True when every robot in `members` can reach every other through edges that
/// stay inside `members`.
pub fn is_connected(adjacency: &NeighborMap, members: &BTreeSet<RobotId>) -> bool {
    let Some(&start) = members.iter().next() else {
        return true;
    };
    let mut seen = BTreeSet::from([start]);
    let mut stack = vec![start];
    while let Some(node) = stack.pop() {
        for next in adjacency.get(&node).into_iter().flatten() {
            if members.contains(next) && seen.insert(*next) {
                stack.push(*next);
            }
        }
    }
    seen.len() == members.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn at(id: u32, x: f64, y: f64) -> RobotState<f64> {
        RobotState::new(id, Vec3::new(x, y, 5.0), Vec3::zero(), Role::Follower)
    }

    #[test]
    fn neighbors_within_radius() {
        let n = neighbors(&[at(0, 0.0, 0.0), at(1, 10.0, 0.0)], 15.0);
        assert!(n[&RobotId(0)].contains(&RobotId(1)));
        assert!(n[&RobotId(1)].contains(&RobotId(0)));
    }

    #[test]
    fn neighbors_exclude_boundary() {
        let n = neighbors(&[at(0, 0.0, 0.0), at(1, 15.0, 0.0)], 15.0);
        assert!(n[&RobotId(0)].is_empty());
        assert!(n[&RobotId(1)].is_empty());
    }

    #[test]
    fn line_at_nine_meter_spacing_is_a_chain() {
        let states: Vec<_> = (0..6).map(|i| at(i, 9.0 * f64::from(i), 0.0)).collect();
        let n = neighbors(&states, 15.0);
        // brute-force pairwise oracle
        for a in &states {
            let expected: BTreeSet<_> = states
                .iter()
                .filter(|b| b.id != a.id && ((a.pos.x - b.pos.x).powi(2) + (a.pos.y - b.pos.y).powi(2)).sqrt() < 15.0)
                .map(|b| b.id)
                .collect();
            assert_eq!(n[&a.id], expected);
        }
        assert_eq!(n[&RobotId(0)].len(), 1);
        assert_eq!(n[&RobotId(5)].len(), 1);
        for i in 1..5 {
            assert_eq!(n[&RobotId(i)].len(), 2);
        }
    }

    #[test]
    fn heading_holds_when_stationary() {
        let mut s = RobotState::new(0, Vec3::zero(), Vec3::new(0.0, 1.0, 0.0), Role::Leader);
        assert!((s.heading - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        s.vel = Vec3::zero();
        s.refresh_heading();
        assert!((s.heading - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn trust_gain_is_linear() {
        let gains: Vec<f64> = (1..=5).map(|l| TrustLevel::new(l).unwrap().gain()).collect();
        assert_eq!(gains, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(TrustLevel::new(0).is_none());
        assert!(TrustLevel::new(6).is_none());
    }

    #[test]
    fn params_validation() {
        let mut p = SwarmParams::<f64>::default();
        assert!(p.validate().is_ok());
        p.best_quality_dist = 15.0;
        assert!(matches!(p.validate(), Err(Error::InvalidParams(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn neighbor_relation_symmetric_irreflexive(
            pts in prop::collection::vec((0.0..50.0f64, 0.0..50.0f64), 1..12)
        ) {
            let states: Vec<_> = pts.iter().enumerate().map(|(i, &(x, y))| at(i as u32, x, y)).collect();
            let n = neighbors(&states, 15.0);
            for (i, set) in &n {
                prop_assert!(!set.contains(i));
                for j in set {
                    prop_assert!(n[j].contains(i));
                }
            }
        }
    }
}
