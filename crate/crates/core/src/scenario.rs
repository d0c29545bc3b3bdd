//! Scenario definitions, task-transition triggers and the accumulated
//! uncertainty captured when the swarm is re-tasked.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::{ControlMethod, Uncertainty};
use crate::error::{Error, Result};
use crate::fault::FaultProfile;
use crate::geometry::Vec3;
use crate::model::{Role, RobotId, RobotState, SwarmParams, TrustLevel};
use crate::scalar::Scalar;
use crate::trust::{TrustSchedule, TrustSourceConfig};

const SCENARIO_1: &str = include_str!("../scenarios/scenario1.toml");
const SCENARIO_2: &str = include_str!("../scenarios/scenario2.toml");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Arena<T> {
    pub width: T,
    pub height: T,
}

impl<T: Scalar> Arena<T> {
    pub fn contains(&self, p: Vec3<T>) -> bool {
        p.x >= T::zero() && p.x <= self.width && p.y >= T::zero() && p.y <= self.height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RobotSpec<T> {
    pub id: RobotId,
    pub pos: Vec3<T>,
    #[serde(default)]
    pub vel: Vec3<T>,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Target<T> {
    #[serde(default)]
    pub name: String,
    pub center: Vec3<T>,
    pub radius: T,
    pub cruise_speed: T,
    /// Whether the final distance to this target is a scored outcome. Targets
    /// abandoned mid-leg by a scheduled redirect are not.
    #[serde(default = "yes")]
    pub scored: bool,
}

fn yes() -> bool {
    true
}

/// What ends the current leg and moves the swarm on to the next target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", bound = "T: Scalar")]
pub enum Transition<T> {
    /// Team centroid within `dist` meters of the current target.
    OnArrival { dist: T },
    /// Leg `k` ends at `times[k]` seconds.
    AtTime { times: Vec<T> },
    /// Only supervisor commands switch targets.
    OnCommand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TrustSetup<T> {
    #[serde(default = "max_level")]
    pub default_level: TrustLevel,
    #[serde(default)]
    pub schedule: TrustSchedule<T>,
}

impl<T: Scalar> Default for TrustSetup<T> {
    fn default() -> Self {
        Self { default_level: TrustLevel::MAX, schedule: TrustSchedule::default() }
    }
}

fn max_level() -> TrustLevel {
    TrustLevel::MAX
}

/// Which leg's heading and which target's distance are the headline numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReportSelection {
    pub heading_leg: usize,
    pub distance_target: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ScenarioSpec<T> {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub method: ControlMethod,
    /// Simulated seconds.
    pub duration: T,
    #[serde(default)]
    pub seed: u64,
    /// Uniform horizontal jitter applied to initial positions, meters.
    #[serde(default)]
    pub initial_jitter: T,
    /// Steps between recorded communication-graph snapshots.
    #[serde(default = "default_snapshot_every")]
    pub graph_snapshot_every: usize,
    pub arena: Arena<T>,
    #[serde(default)]
    pub params: SwarmParams<T>,
    pub transition: Transition<T>,
    #[serde(default)]
    pub report: ReportSelection,
    #[serde(default)]
    pub trust: TrustSetup<T>,
    #[serde(default)]
    pub trust_source: TrustSourceConfig<T>,
    pub robots: Vec<RobotSpec<T>>,
    pub targets: Vec<Target<T>>,
    #[serde(default)]
    pub faults: Vec<FaultProfile<T>>,
}

fn default_snapshot_every() -> usize {
    10
}

impl<T: Scalar> ScenarioSpec<T> {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::InvalidScenario(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidScenario(e.to_string()))
    }

    /// One of the two shipped scenarios: 1 = transit between inspection areas,
    /// 2 = redirect to an emergency mid-leg.
    pub fn builtin(n: u8) -> Result<Self> {
        match n {
            1 => Self::from_toml(SCENARIO_1),
            2 => Self::from_toml(SCENARIO_2),
            other => Err(Error::InvalidScenario(format!("no built-in scenario {other}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidScenario(msg));
        self.params.validate()?;
        self.trust.schedule.validate()?;
        self.trust_source.heuristic.validate()?;
        if self.targets.is_empty() {
            return bad("at least one target is required".into());
        }
        if self.robots.is_empty() {
            return bad("at least one robot is required".into());
        }
        if !(self.duration > T::zero()) {
            return bad("duration must be positive".into());
        }
        if self.graph_snapshot_every == 0 {
            return bad("graph_snapshot_every must be at least 1".into());
        }
        let mut ids = BTreeSet::new();
        for r in &self.robots {
            if !ids.insert(r.id) {
                return bad(format!("duplicate robot id {}", r.id));
            }
            if !self.arena.contains(r.pos) {
                return bad(format!("robot {} starts outside the arena", r.id));
            }
        }
        for f in &self.faults {
            f.validate()?;
            if !ids.contains(&f.robot_id) {
                return bad(format!("fault references unknown robot {}", f.robot_id));
            }
        }
        for e in &self.trust.schedule.events {
            if !ids.contains(&e.robot_id) {
                return bad(format!("trust event references unknown robot {}", e.robot_id));
            }
        }
        for t in &self.targets {
            if !(t.cruise_speed > T::zero() && t.cruise_speed <= self.params.u_max) {
                return bad(format!("target {:?} cruise speed must lie in (0, u_max]", t.name));
            }
        }
        if let Transition::AtTime { times } = &self.transition {
            if times.windows(2).any(|w| w[1] < w[0]) {
                return bad("transition times must be nondecreasing".into());
            }
        }
        if self.report.distance_target >= self.targets.len() || self.report.heading_leg >= self.targets.len() {
            return bad("report selection points past the target list".into());
        }
        Ok(())
    }

    pub fn robot_ids(&self) -> Vec<RobotId> {
        self.robots.iter().map(|r| r.id).collect()
    }

    pub fn n_steps(&self) -> usize {
        (self.duration / self.params.dt).round().to_usize().unwrap_or(0)
    }

    pub fn initial_states(&self) -> Vec<RobotState<T>> {
        self.robots
            .iter()
            .map(|r| RobotState::new(r.id.0, r.pos.with_z(self.params.altitude_hold), r.vel, r.role))
            .collect()
    }

    /// Target center pinned to the operating altitude.
    pub fn target_center(&self, index: usize) -> Vec3<T> {
        self.targets[index].center.with_z(self.params.altitude_hold)
    }
}

/// Fault severity as the remaining speed fraction of the faulty robot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    /// Speed capped at 40 % of `u_max`.
    #[serde(rename = "40")]
    Cap40,
    /// Speed capped at 70 % of `u_max`.
    #[serde(rename = "70")]
    Cap70,
    /// No fault and nothing to distrust.
    None,
}

impl Severity {
    pub fn kappa<T: Scalar>(self) -> Option<T> {
        match self {
            Severity::Cap40 => Some(T::lit(0.4)),
            Severity::Cap70 => Some(T::lit(0.7)),
            Severity::None => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Cap40 => "40",
            Severity::Cap70 => "70",
            Severity::None => "none",
        }
    }
}

impl std::fmt::Display for Severity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Severity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().trim_end_matches('%') {
            "40" | "0.4" => Ok(Severity::Cap40),
            "70" | "0.7" => Ok(Severity::Cap70),
            "none" | "off" => Ok(Severity::None),
            other => Err(Error::InvalidParams(format!("unknown severity {other:?} (expected 40, 70 or none)"))),
        }
    }
}

/// One cell of the experiment grid: shipped scenario, method and severity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Condition {
    pub scenario: u8,
    pub method: ControlMethod,
    pub severity: Severity,
}

impl Condition {
    /// The eight faulty conditions: 2 scenarios x 2 severities x 2 methods.
    pub fn grid() -> Vec<Condition> {
        let mut out = Vec::with_capacity(8);
        for scenario in [1, 2] {
            for severity in [Severity::Cap40, Severity::Cap70] {
                for method in [ControlMethod::Averaged, ControlMethod::TrustR] {
                    out.push(Condition { scenario, method, severity });
                }
            }
        }
        out
    }

    pub fn spec<T: Scalar>(&self) -> Result<ScenarioSpec<T>> {
        Ok(ScenarioSpec::builtin(self.scenario)?.with_condition(self.method, self.severity))
    }
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "scenario {} / {} / severity {}", self.scenario, self.method.as_str(), self.severity)
    }
}

impl<T: Scalar> ScenarioSpec<T> {
    /// Sets the method and rescales every fault's speed cap. `Severity::None`
    /// drops the faults and the trust script together.
    pub fn with_condition(mut self, method: ControlMethod, severity: Severity) -> Self {
        self.method = method;
        match severity.kappa() {
            Some(kappa) => self.faults.iter_mut().for_each(|f| f.speed_cap_fraction = kappa),
            None => {
                self.faults.clear();
                self.trust.schedule.events.clear();
            }
        }
        self
    }
}

/// Gap between the swarm's actual and planned state when a new task arrives.
///
/// Each argument is `(position, velocity)`.
pub fn compute_accumulated_uncertainty<T: Scalar>(
    actual_centroid: (Vec3<T>, Vec3<T>),
    planned: (Vec3<T>, Vec3<T>),
) -> Uncertainty<T> {
    Uncertainty { dx: actual_centroid.0 - planned.0, du: actual_centroid.1 - planned.1 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransitionDecision {
    Continue,
    SwitchTo(usize),
}

/// Why a switch fired, recorded on the leg it closed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LegEnd {
    Arrived,
    Scheduled,
    Commanded,
    RunEnd,
}

/// Decides whether the swarm should move on from `current` at time `t`.
///
/// A supervisor `commanded` switch wins regardless of the configured trigger.
pub fn transition_check<T: Scalar>(
    centroid: Vec3<T>,
    spec: &ScenarioSpec<T>,
    t: T,
    current: usize,
    commanded: Option<usize>,
) -> (TransitionDecision, Option<LegEnd>) {
    if let Some(index) = commanded {
        if index < spec.targets.len() && index != current {
            return (TransitionDecision::SwitchTo(index), Some(LegEnd::Commanded));
        }
    }
    let next = current + 1;
    if next >= spec.targets.len() {
        return (TransitionDecision::Continue, None);
    }
    match &spec.transition {
        Transition::OnArrival { dist } => {
            if centroid.distance(spec.target_center(current)) <= *dist {
                return (TransitionDecision::SwitchTo(next), Some(LegEnd::Arrived));
            }
        }
        Transition::AtTime { times } => {
            // tolerate accumulated rounding in t = k * dt
            let eps = spec.params.dt * T::lit(1e-6);
            if times.get(current).is_some_and(|&at| t >= at - eps) {
                return (TransitionDecision::SwitchTo(next), Some(LegEnd::Scheduled));
            }
        }
        Transition::OnCommand => {}
    }
    (TransitionDecision::Continue, None)
}

/// Whether a robot has been cut out of the team: trust-weighted control with
/// abandonment enabled and a gain of exactly zero.
pub fn is_abandoned<T: Scalar>(method: ControlMethod, params: &SwarmParams<T>, gain: T) -> bool {
    method == ControlMethod::TrustR && params.abandon_at_zero_trust && gain == T::zero()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn v(x: f64, y: f64) -> Vec3<f64> {
        Vec3::new(x, y, 5.0)
    }

    #[test]
    fn builtins_parse_and_validate() {
        for n in [1, 2] {
            let s = ScenarioSpec::<f64>::builtin(n).unwrap();
            assert_eq!(s.robots.len(), 6);
            assert_eq!(s.robots.iter().filter(|r| r.role == Role::Leader).count(), 2);
            assert_eq!(s.arena, Arena { width: 50.0, height: 50.0 });
            let back = ScenarioSpec::<f64>::from_toml(&s.to_toml().unwrap()).unwrap();
            assert_eq!(back, s);
        }
        assert!(ScenarioSpec::<f64>::builtin(3).is_err());
    }

    #[test]
    fn builtins_also_load_as_f32() {
        let s = ScenarioSpec::<f32>::builtin(1).unwrap();
        assert_eq!(s.params.u_max, 2.0f32);
    }

    #[test]
    fn uncertainty_zero_on_plan() {
        let u = compute_accumulated_uncertainty((v(3.0, 4.0), v(1.0, 0.0)), (v(3.0, 4.0), v(1.0, 0.0)));
        assert_eq!(u.dx.norm(), 0.0);
        assert_eq!(u.du.norm(), 0.0);
    }

    #[test]
    fn uncertainty_short_along_track() {
        let track = Vec3::new(0.6, 0.8, 0.0);
        let planned = v(20.0, 20.0);
        let actual = planned - track * 5.0;
        let vel = track * 1.2;
        let u = compute_accumulated_uncertainty((actual, vel), (planned, vel));
        assert_abs_diff_eq!(u.dx.x, -3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(u.dx.y, -4.0, epsilon = 1e-12);
        assert_eq!(u.du, Vec3::zero());
    }

    fn spec_with(transition: Transition<f64>) -> ScenarioSpec<f64> {
        let mut s = ScenarioSpec::builtin(1).unwrap();
        s.transition = transition;
        s
    }

    #[test]
    fn arrival_switches_inside_radius() {
        let s = spec_with(Transition::OnArrival { dist: 3.0 });
        let c = s.target_center(0) + Vec3::new(2.5, 0.0, 0.0);
        assert_eq!(transition_check(c, &s, 1.0, 0, None).0, TransitionDecision::SwitchTo(1));
        let far = s.target_center(0) + Vec3::new(3.5, 0.0, 0.0);
        assert_eq!(transition_check(far, &s, 1.0, 0, None).0, TransitionDecision::Continue);
    }

    #[test]
    fn timed_switch_waits_for_its_time() {
        let s = spec_with(Transition::AtTime { times: vec![30.0] });
        let c = v(0.0, 0.0);
        assert_eq!(transition_check(c, &s, 29.9, 0, None).0, TransitionDecision::Continue);
        assert_eq!(transition_check(c, &s, 30.0, 0, None), (TransitionDecision::SwitchTo(1), Some(LegEnd::Scheduled)));
        // last target never switches on its own
        assert_eq!(transition_check(c, &s, 99.0, 1, None).0, TransitionDecision::Continue);
    }

    #[test]
    fn command_overrides_trigger() {
        let s = spec_with(Transition::OnCommand);
        let c = v(0.0, 0.0);
        assert_eq!(transition_check(c, &s, 5.0, 0, None).0, TransitionDecision::Continue);
        assert_eq!(transition_check(c, &s, 5.0, 0, Some(1)), (TransitionDecision::SwitchTo(1), Some(LegEnd::Commanded)));
        assert_eq!(transition_check(c, &s, 5.0, 0, Some(7)).0, TransitionDecision::Continue);
    }

    #[test]
    fn validation_catches_bad_specs() {
        let mut s = ScenarioSpec::<f64>::builtin(1).unwrap();
        s.targets.clear();
        assert!(s.validate().is_err());

        let mut s = ScenarioSpec::<f64>::builtin(1).unwrap();
        s.robots[0].pos = v(60.0, 10.0);
        assert!(s.validate().is_err());

        let mut s = ScenarioSpec::<f64>::builtin(1).unwrap();
        s.faults[0].speed_cap_fraction = 0.0;
        assert!(s.validate().is_err());
    }
}
