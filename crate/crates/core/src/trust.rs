//! Where trust levels come from: scripted schedules, an automated residual
//! heuristic, and live supervisor overrides layered on top.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::model::{RobotId, RobotState, TrustLevel, TrustMap};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TrustEvent<T> {
    pub time: T,
    pub robot_id: RobotId,
    pub level: TrustLevel,
}

/// Time-ordered list of scripted trust ratings.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent, bound = "T: Scalar")]
pub struct TrustSchedule<T> {
    pub events: Vec<TrustEvent<T>>,
}

impl<T: Scalar> TrustSchedule<T> {
    pub fn new(events: Vec<TrustEvent<T>>) -> Result<Self> {
        let s = Self { events };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.events.windows(2).any(|w| w[1].time < w[0].time) {
            return Err(Error::InvalidScenario("trust schedule times must be nondecreasing".into()));
        }
        Ok(())
    }
}

/// Trust in effect at time `t`: the latest event at or before `t` per robot.
pub fn trust_at<T: Scalar>(
    schedule: &TrustSchedule<T>,
    t: T,
    ids: impl IntoIterator<Item = RobotId>,
    default_level: TrustLevel,
) -> TrustMap<T> {
    let mut map = TrustMap::uniform(ids, default_level);
    for e in schedule.events.iter().take_while(|e| e.time <= t) {
        map.set_level(e.robot_id, e.level);
    }
    map
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrustSourceMode {
    #[default]
    Scripted,
    Heuristic,
    Live,
}

impl fmt::Display for TrustSourceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrustSourceMode::Scripted => "scripted",
            TrustSourceMode::Heuristic => "heuristic",
            TrustSourceMode::Live => "live",
        })
    }
}

impl FromStr for TrustSourceMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "scripted" => Ok(Self::Scripted),
            "heuristic" => Ok(Self::Heuristic),
            "live" => Ok(Self::Live),
            other => Err(format!("unknown trust source {other:?} (expected scripted, heuristic or live)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, bound = "T: Scalar")]
pub struct HeuristicConfig<T> {
    /// Residual window, steps.
    pub window: usize,
    /// Smoothed residual above which the level drops one step, m/s.
    pub tau_down: T,
    /// Smoothed residual below which the level rises one step, m/s.
    pub tau_up: T,
    /// Exponential smoothing factor in (0, 1].
    pub smoothing: T,
    /// Steps between evaluations.
    pub eval_every: usize,
}

impl<T: Scalar> Default for HeuristicConfig<T> {
    fn default() -> Self {
        Self { window: 20, tau_down: T::lit(0.15), tau_up: T::lit(0.05), smoothing: T::lit(0.3), eval_every: 10 }
    }
}

impl<T: Scalar> HeuristicConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.eval_every == 0 {
            return Err(Error::InvalidScenario("heuristic window and cadence must be at least 1 step".into()));
        }
        if !(self.tau_up <= self.tau_down) {
            return Err(Error::InvalidScenario("heuristic thresholds need tau_up <= tau_down".into()));
        }
        if !(self.smoothing > T::zero() && self.smoothing <= T::one()) {
            return Err(Error::InvalidScenario("heuristic smoothing must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, bound = "T: Scalar")]
pub struct TrustSourceConfig<T> {
    pub mode: TrustSourceMode,
    pub heuristic: HeuristicConfig<T>,
}

impl<T: Scalar> Default for TrustSourceConfig<T> {
    fn default() -> Self {
        Self { mode: TrustSourceMode::default(), heuristic: HeuristicConfig::default() }
    }
}

/// Velocity residual of each robot against the componentwise median of its
/// trusted neighbors (gain above zero), per step. Robots with no trusted
/// neighbor get no sample.
fn step_residuals<T: Scalar>(states: &[RobotState<T>], trust: &TrustMap<T>, radius: T) -> BTreeMap<RobotId, T> {
    let mut out = BTreeMap::new();
    for s in states {
        let vels: Vec<Vec3<T>> = states
            .iter()
            .filter(|o| o.id != s.id && o.pos.distance(s.pos) < radius && trust.gain(o.id) > T::zero())
            .map(|o| o.vel)
            .collect();
        if vels.is_empty() {
            continue;
        }
        let reference = Vec3::new(
            median(vels.iter().map(|v| v.x)),
            median(vels.iter().map(|v| v.y)),
            median(vels.iter().map(|v| v.z)),
        );
        out.insert(s.id, (s.vel - reference).norm());
    }
    out
}

fn median<T: Scalar>(values: impl Iterator<Item = T>) -> T {
    let mut v: Vec<T> = values.collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / T::lit(2.0)
    }
}

/// One heuristic evaluation over a window of recorded states.
///
/// `smoothed` carries each robot's filtered residual between evaluations.
pub fn heuristic_estimate<T: Scalar>(
    history: &[Vec<RobotState<T>>],
    current: &TrustMap<T>,
    smoothed: &mut BTreeMap<RobotId, T>,
    cfg: &HeuristicConfig<T>,
    radius: T,
) -> TrustMap<T> {
    let mut totals: BTreeMap<RobotId, (T, usize)> = BTreeMap::new();
    for states in history {
        for (id, r) in step_residuals(states, current, radius) {
            let e = totals.entry(id).or_insert((T::zero(), 0));
            e.0 = e.0 + r;
            e.1 += 1;
        }
    }
    let mut next = current.clone();
    for (id, entry) in current.iter() {
        let Some(&(sum, n)) = totals.get(&id) else {
            continue;
        };
        let r = sum / T::from_usize(n);
        let prev = smoothed.get(&id).copied().unwrap_or_else(T::zero);
        let filtered = cfg.smoothing * r + (T::one() - cfg.smoothing) * prev;
        smoothed.insert(id, filtered);
        if filtered > cfg.tau_down {
            next.set_level(id, entry.level.lower());
        } else if filtered < cfg.tau_up {
            next.set_level(id, entry.level.raise());
        }
    }
    next
}

/// Stateful wrapper that keeps the residual window and evaluation cadence.
#[derive(Debug, Clone)]
pub struct HeuristicEstimator<T> {
    cfg: HeuristicConfig<T>,
    radius: T,
    history: VecDeque<Vec<RobotState<T>>>,
    smoothed: BTreeMap<RobotId, T>,
    levels: TrustMap<T>,
    observed: usize,
}

impl<T: Scalar> HeuristicEstimator<T> {
    pub fn new(cfg: HeuristicConfig<T>, radius: T, initial: TrustMap<T>) -> Self {
        Self { cfg, radius, history: VecDeque::new(), smoothed: BTreeMap::new(), levels: initial, observed: 0 }
    }

    /// Feeds one step of states; re-evaluates every `eval_every` observations.
    pub fn observe(&mut self, states: &[RobotState<T>]) -> &TrustMap<T> {
        self.history.push_back(states.to_vec());
        while self.history.len() > self.cfg.window {
            self.history.pop_front();
        }
        self.observed += 1;
        if self.observed.is_multiple_of(self.cfg.eval_every) {
            let window: Vec<_> = self.history.iter().cloned().collect();
            self.levels = heuristic_estimate(&window, &self.levels, &mut self.smoothed, &self.cfg, self.radius);
        }
        &self.levels
    }

    pub fn levels(&self) -> &TrustMap<T> {
        &self.levels
    }

    pub fn smoothed_residual(&self, id: RobotId) -> Option<T> {
        self.smoothed.get(&id).copied()
    }
}

/// Live supervisor ratings that take precedence over the active source until
/// explicitly cleared.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrustOverrides {
    levels: BTreeMap<RobotId, TrustLevel>,
}

impl TrustOverrides {
    pub fn set(&mut self, id: RobotId, level: TrustLevel) {
        self.levels.insert(id, level);
    }

    pub fn clear(&mut self, id: RobotId) {
        self.levels.remove(&id);
    }

    pub fn get(&self, id: RobotId) -> Option<TrustLevel> {
        self.levels.get(&id).copied()
    }

    pub fn as_map(&self) -> &BTreeMap<RobotId, TrustLevel> {
        &self.levels
    }
}

/// Live overrides win over the active mode's map.
pub fn merge_trust<T: Scalar>(active: &TrustMap<T>, live: &BTreeMap<RobotId, TrustLevel>) -> TrustMap<T> {
    let mut out = active.clone();
    for (&id, &level) in live {
        out.set_level(id, level);
    }
    out
}

/// Picks the map for the configured mode. Live mode starts from `default_level`
/// everywhere and relies on overrides.
pub fn active_trust<T: Scalar>(
    mode: TrustSourceMode,
    scripted: &TrustMap<T>,
    heuristic: &TrustMap<T>,
    ids: impl IntoIterator<Item = RobotId>,
    default_level: TrustLevel,
) -> TrustMap<T> {
    match mode {
        TrustSourceMode::Scripted => scripted.clone(),
        TrustSourceMode::Heuristic => heuristic.clone(),
        TrustSourceMode::Live => TrustMap::uniform(ids, default_level),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Role;
    use proptest::prelude::*;

    fn lvl(n: u8) -> TrustLevel {
        TrustLevel::new(n).unwrap()
    }

    fn ids() -> Vec<RobotId> {
        (0..6).map(RobotId).collect()
    }

    fn ev(time: f64, id: u32, level: u8) -> TrustEvent<f64> {
        TrustEvent { time, robot_id: RobotId(id), level: lvl(level) }
    }

    #[test]
    fn empty_schedule_trusts_everyone() {
        let m = trust_at(&TrustSchedule::<f64>::default(), 10.0, ids(), TrustLevel::MAX);
        assert!(m.iter().all(|(_, e)| e.level == TrustLevel::MAX && e.gain == 1.0));
    }

    #[test]
    fn event_applies_at_or_after_its_time() {
        let s = TrustSchedule::new(vec![ev(20.0, 3, 1)]).unwrap();
        assert_eq!(trust_at(&s, 19.9, ids(), TrustLevel::MAX).level(RobotId(3)), TrustLevel::MAX);
        assert_eq!(trust_at(&s, 20.0, ids(), TrustLevel::MAX).level(RobotId(3)), lvl(1));
    }

    #[test]
    fn last_event_wins() {
        let s = TrustSchedule::new(vec![ev(20.0, 3, 2), ev(40.0, 3, 1)]).unwrap();
        let m = trust_at(&s, 30.0, ids(), TrustLevel::MAX);
        assert_eq!(m.level(RobotId(3)), lvl(2));
        assert_eq!(m.gain(RobotId(3)), 0.25);
    }

    #[test]
    fn unsorted_schedule_rejected() {
        assert!(TrustSchedule::new(vec![ev(5.0, 1, 2), ev(1.0, 1, 3)]).is_err());
    }

    /// Three robots in a row moving east; robot 1 carries an extra sideways
    /// velocity of `lateral` m/s.
    fn synthetic(lateral: f64) -> Vec<RobotState<f64>> {
        (0..3)
            .map(|i| {
                let extra = if i == 1 { lateral } else { 0.0 };
                RobotState::new(i, Vec3::new(4.0 * f64::from(i), 0.0, 5.0), Vec3::new(1.0, extra, 0.0), Role::Follower)
            })
            .collect()
    }

    fn run_estimator(est: &mut HeuristicEstimator<f64>, states: &[RobotState<f64>], steps: usize) -> Vec<u8> {
        let mut trace = Vec::new();
        for k in 1..=steps {
            est.observe(states);
            if k % 10 == 0 {
                trace.push(est.levels().level(RobotId(1)).get());
            }
        }
        trace
    }

    #[test]
    fn consensus_keeps_full_trust() {
        let initial = TrustMap::uniform((0..3).map(RobotId), lvl(4));
        let mut est = HeuristicEstimator::new(HeuristicConfig::default(), 15.0, initial);
        run_estimator(&mut est, &synthetic(0.0), 40);
        assert!(est.levels().iter().all(|(_, e)| e.level == TrustLevel::MAX));
    }

    #[test]
    fn persistent_deviation_drives_level_down() {
        let initial = TrustMap::uniform((0..3).map(RobotId), TrustLevel::MAX);
        let mut est = HeuristicEstimator::new(HeuristicConfig::default(), 15.0, initial);
        let trace = run_estimator(&mut est, &synthetic(0.3), 120);
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
        let first_drop = trace.iter().position(|&l| l < 5).unwrap();
        let bottom = trace.iter().position(|&l| l == 1).unwrap();
        assert!(bottom - first_drop >= 3, "needs at least 4 evaluations to reach 1: {trace:?}");
        assert_eq!(*trace.last().unwrap(), 1);
        // neighbors stay inside the hysteresis band or above
        assert!(est.levels().level(RobotId(0)) >= lvl(4));
    }

    #[test]
    fn repaired_robot_recovers() {
        let initial = TrustMap::uniform((0..3).map(RobotId), TrustLevel::MAX);
        let mut est = HeuristicEstimator::new(HeuristicConfig::default(), 15.0, initial);
        run_estimator(&mut est, &synthetic(0.3), 120);
        assert_eq!(est.levels().level(RobotId(1)), lvl(1));
        run_estimator(&mut est, &synthetic(0.0), 300);
        assert_eq!(est.levels().level(RobotId(1)), TrustLevel::MAX);
    }

    #[test]
    fn isolated_robot_keeps_level() {
        let lone = vec![RobotState::new(0, Vec3::new(0.0, 0.0, 5.0), Vec3::new(1.0, 0.4, 0.0), Role::Follower)];
        let initial = TrustMap::uniform([RobotId(0)], lvl(3));
        let mut est = HeuristicEstimator::new(HeuristicConfig::default(), 15.0, initial);
        for _ in 0..100 {
            est.observe(&lone);
        }
        assert_eq!(est.levels().level(RobotId(0)), lvl(3));
    }

    #[test]
    fn live_override_takes_precedence_until_cleared() {
        let scripted = TrustMap::<f64>::uniform(ids(), TrustLevel::MAX);
        let mut live = TrustOverrides::default();
        assert_eq!(merge_trust(&scripted, live.as_map()), scripted);

        live.set(RobotId(2), lvl(1));
        let merged = merge_trust(&scripted, live.as_map());
        assert_eq!(merged.gain(RobotId(2)), 0.0);

        live.clear(RobotId(2));
        assert_eq!(merge_trust(&scripted, live.as_map()), scripted);
    }

    proptest! {
        #[test]
        fn hysteresis_band_never_changes_levels(resid in prop::collection::vec(0.0501..0.1499f64, 1..30), start in 1u8..=5) {
            let cfg = HeuristicConfig { smoothing: 1.0, ..HeuristicConfig::default() };
            let mut current = TrustMap::<f64>::uniform([RobotId(0), RobotId(1)], lvl(start));
            let mut smoothed = BTreeMap::new();
            for r in resid {
                let window = vec![vec![
                    RobotState::new(0, Vec3::new(0.0, 0.0, 5.0), Vec3::new(1.0, r, 0.0), Role::Follower),
                    RobotState::new(1, Vec3::new(3.0, 0.0, 5.0), Vec3::new(1.0, 0.0, 0.0), Role::Follower),
                ]];
                current = heuristic_estimate(&window, &current, &mut smoothed, &cfg, 15.0);
                prop_assert_eq!(current.level(RobotId(0)), lvl(start));
                prop_assert_eq!(current.level(RobotId(1)), lvl(start));
            }
        }

        #[test]
        fn trust_at_is_right_continuous(times in prop::collection::vec(0.0..100.0f64, 1..10), q in 0.0..100.0f64) {
            let mut times = times;
            times.sort_by(f64::total_cmp);
            let events: Vec<_> = times.iter().enumerate().map(|(k, &t)| ev(t, 0, (k % 5) as u8 + 1)).collect();
            let s = TrustSchedule::new(events).unwrap();
            let at = trust_at(&s, q, [RobotId(0)], TrustLevel::MAX).level(RobotId(0));
            let just_after = trust_at(&s, q + 1e-12, [RobotId(0)], TrustLevel::MAX).level(RobotId(0));
            // no event lands within 1e-12 of a random query with overwhelming probability
            prop_assume!(times.iter().all(|t| (t - q).abs() > 1e-9));
            prop_assert_eq!(at, just_after);
        }
    }
}
