//! Velocity consensus laws (plain averaging and trust-weighted), leader
//! navigational feedback, and the synchronous swarm step that composes them.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fault::{apply_degradation, FaultProfile};
use crate::geometry::Vec3;
use crate::model::{neighbors, CommGraph, Role, RobotId, RobotState, SwarmParams, TrustMap};
use crate::scalar::Scalar;
use crate::trust_comm::{build_comm_graph, weights_for, WeightVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ControlMethod {
    /// Every neighbor counts equally.
    #[serde(rename = "averaged", alias = "avg")]
    Averaged,
    /// Neighbors weighted by trust-aware link quality.
    #[serde(rename = "trust-r", alias = "trust_r")]
    TrustR,
}

impl ControlMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            ControlMethod::Averaged => "avg",
            ControlMethod::TrustR => "trust-r",
        }
    }
}

impl fmt::Display for ControlMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ControlMethod {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "avg" | "averaged" => Ok(ControlMethod::Averaged),
            "trust-r" | "trust_r" | "trustr" => Ok(ControlMethod::TrustR),
            other => Err(format!("unknown control method {other:?} (expected avg or trust-r)")),
        }
    }
}

/// Reference agent the leaders track. It glides toward `goal` and parks there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct VirtualLeader<T> {
    pub pos: Vec3<T>,
    pub vel: Vec3<T>,
    pub goal: Option<Vec3<T>>,
}

impl<T: Scalar> VirtualLeader<T> {
    /// Leader at `pos` heading for `goal` at `speed`.
    pub fn toward(pos: Vec3<T>, goal: Vec3<T>, speed: T) -> Self {
        let vel = (goal - pos).normalized(T::lit(1e-9)).map_or_else(Vec3::zero, |d| d * speed);
        Self { pos, vel, goal: Some(goal) }
    }

    pub fn advanced(&self, dt: T) -> Self {
        let stepped = self.pos + self.vel * dt;
        match self.goal {
            Some(goal) => {
                let remaining = goal - self.pos;
                if (self.vel * dt).norm() >= remaining.norm() {
                    Self { pos: goal, vel: Vec3::zero(), goal: self.goal }
                } else {
                    Self { pos: stepped, ..*self }
                }
            }
            None => Self { pos: stepped, ..*self },
        }
    }
}

/// Accumulated position/velocity gap captured at a task transition.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Uncertainty<T> {
    pub dx: Vec3<T>,
    pub du: Vec3<T>,
}

/// Plain consensus: own velocity averaged with all neighbors'.
pub fn averaged_update<T: Scalar>(u_i: Vec3<T>, neighbor_vels: &[Vec3<T>]) -> Vec3<T> {
    let sum = neighbor_vels.iter().fold(u_i, |acc, &v| acc + v);
    sum / T::from_usize(neighbor_vels.len() + 1)
}

/// Leader correction toward the virtual leader, offset by the accumulated
/// uncertainty of the current leg.
pub fn navigational_feedback<T: Scalar>(
    x_i: Vec3<T>,
    u_i: Vec3<T>,
    leader: &VirtualLeader<T>,
    uncertainty: &Uncertainty<T>,
    c1: T,
    c2: T,
) -> Vec3<T> {
    -((x_i - leader.pos + uncertainty.dx) * c1) - (u_i - leader.vel + uncertainty.du) * c2
}

/// Convex combination of own and neighbor velocities.
pub fn weighted_update<T: Scalar>(
    u_i: Vec3<T>,
    neighbor_vels: &BTreeMap<RobotId, Vec3<T>>,
    weights: &WeightVector<T>,
) -> Result<Vec3<T>> {
    if neighbor_vels.len() != weights.neighbor_weights.len()
        || !neighbor_vels.keys().all(|k| weights.neighbor_weights.contains_key(k))
    {
        return Err(Error::MismatchedNeighborSet);
    }
    Ok(neighbor_vels
        .iter()
        .fold(u_i * weights.self_weight, |acc, (j, &v)| acc + v * weights.neighbor_weights[j]))
}

/// Everything a swarm step reads besides the robot states themselves.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a, T> {
    pub params: &'a SwarmParams<T>,
    pub method: ControlMethod,
    pub trust: &'a TrustMap<T>,
    pub leader: &'a VirtualLeader<T>,
    pub uncertainty: &'a Uncertainty<T>,
    pub faults: &'a [FaultProfile<T>],
    /// Simulation time at the start of the step, seconds.
    pub t: T,
    /// Step index, used only for error reporting.
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome<T> {
    pub states: Vec<RobotState<T>>,
    pub leader: VirtualLeader<T>,
    /// Graph used for the weighted update (trust-weighted method only).
    pub graph: Option<CommGraph<T>>,
}

/// Consensus velocity before leader feedback, clamping and actuation.
fn consensus_velocity<T: Scalar>(
    s: &RobotState<T>,
    states: &[RobotState<T>],
    index: &BTreeMap<RobotId, usize>,
    adjacency: &crate::model::NeighborMap,
    graph: Option<&CommGraph<T>>,
) -> Result<Vec3<T>> {
    let nbrs = &adjacency[&s.id];
    match graph {
        None => {
            let vels: Vec<_> = nbrs.iter().map(|j| states[index[j]].vel).collect();
            Ok(averaged_update(s.vel, &vels))
        }
        Some(g) => {
            let weights = weights_for(g, s.id);
            let vels: BTreeMap<_, _> = nbrs.iter().map(|j| (*j, states[index[j]].vel)).collect();
            weighted_update(s.vel, &vels, &weights)
        }
    }
}

fn separation_push<T: Scalar>(s: &RobotState<T>, states: &[RobotState<T>], params: &SwarmParams<T>) -> Vec3<T> {
    let Some(sep) = params.separation else {
        return Vec3::zero();
    };
    states
        .iter()
        .filter(|o| o.id != s.id)
        .filter_map(|o| {
            let away = (s.pos - o.pos).with_z(T::zero());
            let d = away.norm();
            (d < sep.radius && d > T::lit(1e-9)).then(|| away / d * (sep.gain * (sep.radius - d) / sep.radius))
        })
        .sum()
}

/// Advances every robot one synchronous step; all updates read time-`t` state.
pub fn step_swarm<T: Scalar>(states: &[RobotState<T>], ctx: &StepContext<'_, T>) -> Result<StepOutcome<T>> {
    let params = ctx.params;
    let index: BTreeMap<RobotId, usize> = states.iter().enumerate().map(|(k, s)| (s.id, k)).collect();
    if index.len() != states.len() {
        return Err(Error::InvalidScenario("duplicate robot ids".into()));
    }
    let adjacency = neighbors(states, params.comm_radius);
    let graph = match ctx.method {
        ControlMethod::Averaged => None,
        ControlMethod::TrustR => Some(build_comm_graph(states, ctx.trust, params)?),
    };
    let faults: BTreeMap<RobotId, &FaultProfile<T>> = ctx.faults.iter().map(|f| (f.robot_id, f)).collect();

    let mut next = Vec::with_capacity(states.len());
    for s in states {
        let mut v = consensus_velocity(s, states, &index, &adjacency, graph.as_ref())?;
        if s.role == Role::Leader {
            v += navigational_feedback(s.pos, s.vel, ctx.leader, ctx.uncertainty, params.nav_gain_pos, params.nav_gain_vel);
        }
        v += separation_push(s, states, params);
        v = v.clamp_norm(params.u_max);
        let mut faulty = false;
        if let Some(profile) = faults.get(&s.id) {
            v = apply_degradation(v, s.heading, profile, params.u_max, ctx.t);
            faulty = profile.is_active(ctx.t);
        }
        let mut n = RobotState { vel: v, faulty, ..*s };
        n.pos = (s.pos + v * params.dt).with_z(params.altitude_hold);
        n.refresh_heading();
        if !n.is_finite() {
            return Err(Error::NumericalDivergence { step: ctx.step, robot: s.id });
        }
        next.push(n);
    }
    Ok(StepOutcome { states: next, leader: ctx.leader.advanced(params.dt), graph })
}
