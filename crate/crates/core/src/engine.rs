//! The run loop: trust update, task transitions, recording and the swarm step,
//! one tick at a time.

use std::collections::BTreeMap;

use log::{debug, info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::{step_swarm, StepContext, Uncertainty, VirtualLeader};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::metrics::{compute_metrics, MetricsReport};
use crate::model::{CommGraph, RobotId, RobotState, TrustLevel, TrustMap};
use crate::scalar::Scalar;
use crate::scenario::{
    compute_accumulated_uncertainty, is_abandoned, transition_check, LegEnd, ScenarioSpec, TransitionDecision,
};
use crate::telemetry::{EdgeRow, Manifest, RunRecord, TrajectoryRow, TrustRow};
use crate::trust::{active_trust, merge_trust, trust_at, HeuristicEstimator, TrustOverrides, TrustSourceMode};
use crate::trust_comm::build_comm_graph;

pub const ENGINE_VERSION: &str = concat!("trustr-core ", env!("CARGO_PKG_VERSION"));

/// Inputs a supervisor can inject between ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimCommand {
    SetTrust { robot: RobotId, level: TrustLevel },
    ClearTrustOverride { robot: RobotId },
    Pause,
    Resume,
    SwitchTarget { index: usize },
}

/// One leg of the mission, delimited by recorded sample indices (inclusive).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LegRecord<T> {
    pub target_index: usize,
    pub start_step: usize,
    pub end_step: usize,
    pub end_reason: LegEnd,
    /// Accumulated uncertainty captured when the leg began.
    pub uncertainty: Uncertainty<T>,
}

/// Centroid position and velocity of the robots still in the team. Falls back
/// to all robots when everybody has been cut out.
pub fn team_centroid<T: Scalar>(spec: &ScenarioSpec<T>, states: &[RobotState<T>], trust: &TrustMap<T>) -> (Vec3<T>, Vec3<T>) {
    let members: Vec<_> = states
        .iter()
        .filter(|s| !is_abandoned(spec.method, &spec.params, trust.gain(s.id)))
        .collect();
    let members = if members.is_empty() { states.iter().collect() } else { members };
    let n = T::from_usize(members.len());
    let pos = members.iter().map(|s| s.pos).sum::<Vec3<T>>() / n;
    let vel = members.iter().map(|s| s.vel).sum::<Vec3<T>>() / n;
    (pos, vel)
}

/// Read-only view of a live simulation, used for supervisor snapshots.
#[derive(Debug, Clone)]
pub struct SimView<T> {
    pub t: T,
    pub step: usize,
    pub states: Vec<RobotState<T>>,
    pub trust: TrustMap<T>,
    /// Robots whose level is pinned by a supervisor override.
    pub overridden: Vec<RobotId>,
    pub graph: CommGraph<T>,
    pub leader: VirtualLeader<T>,
    pub target_index: usize,
    pub target_distance: T,
    pub paused: bool,
    pub finished: bool,
}

#[derive(Debug)]
pub struct Simulation<T: Scalar> {
    spec: ScenarioSpec<T>,
    ids: Vec<RobotId>,
    states: Vec<RobotState<T>>,
    leader: VirtualLeader<T>,
    uncertainty: Uncertainty<T>,
    trust: TrustMap<T>,
    overrides: TrustOverrides,
    estimator: Option<HeuristicEstimator<T>>,
    step: usize,
    n_steps: usize,
    current_target: usize,
    leg_start: usize,
    legs: Vec<LegRecord<T>>,
    pending_switch: Option<usize>,
    paused: bool,
    failure: Option<String>,
    trajectory: Vec<TrajectoryRow<T>>,
    trust_rows: Vec<TrustRow<T>>,
    last_recorded_trust: BTreeMap<RobotId, (TrustLevel, T)>,
    edges: Vec<EdgeRow<T>>,
}

impl<T: Scalar> Simulation<T> {
    pub fn new(spec: ScenarioSpec<T>) -> Result<Self> {
        spec.validate()?;
        let ids = spec.robot_ids();
        let mut states = spec.initial_states();
        if spec.initial_jitter > T::zero() {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let j = spec.initial_jitter.as_f64();
            for s in &mut states {
                s.pos.x = s.pos.x + T::lit(rng.gen_range(-j..=j));
                s.pos.y = s.pos.y + T::lit(rng.gen_range(-j..=j));
            }
        }
        let initial_trust = TrustMap::uniform(ids.iter().copied(), spec.trust.default_level);
        let (centroid, _) = team_centroid(&spec, &states, &initial_trust);
        let leader = VirtualLeader::toward(centroid, spec.target_center(0), spec.targets[0].cruise_speed);
        let estimator = (spec.trust_source.mode == TrustSourceMode::Heuristic).then(|| {
            HeuristicEstimator::new(spec.trust_source.heuristic, spec.params.comm_radius, initial_trust.clone())
        });
        let n_steps = spec.n_steps();
        let mut sim = Self {
            ids,
            states,
            leader,
            uncertainty: Uncertainty::default(),
            trust: initial_trust,
            overrides: TrustOverrides::default(),
            estimator,
            step: 0,
            n_steps,
            current_target: 0,
            leg_start: 0,
            legs: Vec::new(),
            pending_switch: None,
            paused: false,
            failure: None,
            trajectory: Vec::with_capacity(n_steps * spec.robots.len()),
            trust_rows: Vec::new(),
            last_recorded_trust: BTreeMap::new(),
            edges: Vec::new(),
            spec,
        };
        sim.refresh_trust();
        Ok(sim)
    }

    pub fn spec(&self) -> &ScenarioSpec<T> {
        &self.spec
    }

    pub fn time(&self) -> T {
        T::from_usize(self.step) * self.spec.params.dt
    }

    pub fn states(&self) -> &[RobotState<T>] {
        &self.states
    }

    pub fn trust(&self) -> &TrustMap<T> {
        &self.trust
    }

    pub fn leader(&self) -> &VirtualLeader<T> {
        &self.leader
    }

    pub fn current_target(&self) -> usize {
        self.current_target
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.n_steps || self.failure.is_some()
    }

    /// Applies a supervisor command. Must only be called between ticks.
    pub fn apply_command(&mut self, cmd: SimCommand) {
        debug!("command {cmd:?} at t={}", self.time());
        match cmd {
            SimCommand::SetTrust { robot, level } => self.overrides.set(robot, level),
            SimCommand::ClearTrustOverride { robot } => self.overrides.clear(robot),
            SimCommand::Pause => self.paused = true,
            SimCommand::Resume => self.paused = false,
            SimCommand::SwitchTarget { index } => self.pending_switch = Some(index),
        }
        self.refresh_trust();
    }

    fn refresh_trust(&mut self) {
        let t = self.time();
        let scripted = trust_at(&self.spec.trust.schedule, t, self.ids.iter().copied(), self.spec.trust.default_level);
        let heuristic = self.estimator.as_ref().map_or_else(|| scripted.clone(), |e| e.levels().clone());
        let active = active_trust(
            self.spec.trust_source.mode,
            &scripted,
            &heuristic,
            self.ids.iter().copied(),
            self.spec.trust.default_level,
        );
        self.trust = merge_trust(&active, self.overrides.as_map());
    }

    fn switch_target(&mut self, next: usize, reason: LegEnd) {
        let (c_pos, c_vel) = team_centroid(&self.spec, &self.states, &self.trust);
        // where the plan says the swarm should be right now
        let planned = (self.leader.pos - self.uncertainty.dx, self.leader.vel - self.uncertainty.du);
        let legs_uncertainty = self.uncertainty;
        self.legs.push(LegRecord {
            target_index: self.current_target,
            start_step: self.leg_start,
            end_step: self.step,
            end_reason: reason,
            uncertainty: legs_uncertainty,
        });
        self.uncertainty = compute_accumulated_uncertainty((c_pos, c_vel), planned);
        let goal = self.spec.target_center(next) + self.uncertainty.dx;
        self.leader = VirtualLeader::toward(c_pos, goal, self.spec.targets[next].cruise_speed);
        info!(
            "t={:.1}: target {} -> {} ({reason:?}), dx=({:.3}, {:.3}) du=({:.3}, {:.3})",
            self.time().as_f64(),
            self.current_target,
            next,
            self.uncertainty.dx.x.as_f64(),
            self.uncertainty.dx.y.as_f64(),
            self.uncertainty.du.x.as_f64(),
            self.uncertainty.du.y.as_f64()
        );
        self.current_target = next;
        self.leg_start = self.step;
    }

    fn record_sample(&mut self) -> Result<()> {
        let t = self.time();
        for s in &self.states {
            let entry = self.trust.entry(s.id).unwrap_or(crate::model::TrustEntry { level: TrustLevel::MAX, gain: T::one() });
            self.trajectory.push(TrajectoryRow {
                t,
                id: s.id,
                pos: s.pos,
                vel: s.vel,
                heading: s.heading,
                trust_level: entry.level,
                trust_gain: entry.gain,
                role: s.role,
                faulty: s.faulty,
            });
            let changed = self.last_recorded_trust.get(&s.id).is_none_or(|&(l, g)| l != entry.level || g != entry.gain);
            if changed {
                self.last_recorded_trust.insert(s.id, (entry.level, entry.gain));
                self.trust_rows.push(TrustRow { t, id: s.id, level: entry.level, gain: entry.gain });
            }
        }
        if self.step.is_multiple_of(self.spec.graph_snapshot_every) {
            let graph = build_comm_graph(&self.states, &self.trust, &self.spec.params)?;
            self.edges
                .extend(graph.edges.iter().map(|(&(i, j), &quality)| EdgeRow { t, i, j, quality }));
        }
        Ok(())
    }

    /// Runs one tick. Does nothing while paused or after the run has ended.
    pub fn tick(&mut self) -> Result<()> {
        if self.paused || self.is_finished() {
            return Ok(());
        }
        match self.tick_inner() {
            Ok(()) => Ok(()),
            Err(e) => {
                warn!("run aborted at step {}: {e}", self.step);
                self.failure = Some(e.to_string());
                Err(e)
            }
        }
    }

    fn tick_inner(&mut self) -> Result<()> {
        let t = self.time();
        self.refresh_trust();

        let (centroid, _) = team_centroid(&self.spec, &self.states, &self.trust);
        let commanded = self.pending_switch.take();
        if let (TransitionDecision::SwitchTo(next), Some(reason)) =
            transition_check(centroid, &self.spec, t, self.current_target, commanded)
        {
            self.switch_target(next, reason);
        }

        self.record_sample()?;

        let ctx = StepContext {
            params: &self.spec.params,
            method: self.spec.method,
            trust: &self.trust,
            leader: &self.leader,
            uncertainty: &self.uncertainty,
            faults: &self.spec.faults,
            t,
            step: self.step,
        };
        let out = step_swarm(&self.states, &ctx)?;
        if let Some(est) = self.estimator.as_mut() {
            est.observe(&self.states);
        }
        self.states = out.states;
        self.leader = out.leader;
        self.step += 1;
        Ok(())
    }

    pub fn view(&self) -> Result<SimView<T>> {
        let graph = build_comm_graph(&self.states, &self.trust, &self.spec.params)?;
        let (centroid, _) = team_centroid(&self.spec, &self.states, &self.trust);
        Ok(SimView {
            t: self.time(),
            step: self.step,
            states: self.states.clone(),
            trust: self.trust.clone(),
            overridden: self.overrides.as_map().keys().copied().collect(),
            graph,
            leader: self.leader,
            target_index: self.current_target,
            target_distance: centroid.distance(self.spec.target_center(self.current_target)),
            paused: self.paused,
            finished: self.is_finished(),
        })
    }

    /// Closes the last leg and packages everything recorded so far.
    pub fn into_record(mut self) -> RunRecord<T> {
        let recorded = self.trajectory.len() / self.ids.len().max(1);
        if recorded > 0 {
            self.legs.push(LegRecord {
                target_index: self.current_target,
                start_step: self.leg_start.min(recorded - 1),
                end_step: recorded - 1,
                end_reason: LegEnd::RunEnd,
                uncertainty: self.uncertainty,
            });
        }
        let valid = self.failure.is_none();
        let failure = self.failure.take();
        let manifest = Manifest {
            engine_version: ENGINE_VERSION.to_owned(),
            seed: self.spec.seed,
            valid,
            error: failure,
            n_robots: self.ids.len(),
            n_steps: recorded,
            legs: self.legs,
            scenario: self.spec,
        };
        let mut record = RunRecord {
            manifest,
            trajectory: self.trajectory,
            trust: self.trust_rows,
            comm_graph: self.edges,
            metrics: None,
        };
        if valid && recorded > 0 {
            match compute_metrics(&record, &record.manifest.scenario) {
                Ok(m) => record.metrics = Some(m),
                Err(e) => warn!("metrics unavailable: {e}"),
            }
        }
        record
    }
}

/// Runs a scenario to completion.
///
/// A run that diverges numerically still returns its partial record, flagged
/// invalid with the error text in the manifest.
pub fn run<T: Scalar>(spec: ScenarioSpec<T>) -> Result<RunRecord<T>> {
    let mut sim = Simulation::new(spec)?;
    while !sim.is_finished() {
        if sim.tick().is_err() {
            break;
        }
    }
    Ok(sim.into_record())
}

/// Convenience accessor used by callers that only want the headline numbers.
pub fn run_metrics<T: Scalar>(spec: ScenarioSpec<T>) -> Result<MetricsReport<T>> {
    let record = run(spec)?;
    if let Some(err) = &record.manifest.error {
        return Err(Error::InvalidScenario(err.clone()));
    }
    record.metrics.ok_or(Error::DegenerateDisplacement)
}
