//! Motor-degradation actuator model: a constant sideways velocity offset plus a
//! reduced speed ceiling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::model::{RobotId, HEADING_SPEED_EPS};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OffsetSide {
    /// Counterclockwise of the direction of travel.
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FaultProfile<T> {
    pub robot_id: RobotId,
    pub onset_time: T,
    /// Fraction κ of `u_max` the degraded motors can still reach.
    pub speed_cap_fraction: T,
    /// Sideways offset magnitude, m/s.
    #[serde(default = "default_offset")]
    pub lateral_offset: T,
    #[serde(default = "default_side")]
    pub offset_side: OffsetSide,
}

fn default_offset<T: Scalar>() -> T {
    T::lit(0.3)
}

fn default_side() -> OffsetSide {
    OffsetSide::Left
}

impl<T: Scalar> FaultProfile<T> {
    pub fn new(robot_id: RobotId, onset_time: T, speed_cap_fraction: T) -> Self {
        Self {
            robot_id,
            onset_time,
            speed_cap_fraction,
            lateral_offset: default_offset(),
            offset_side: default_side(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.onset_time >= T::zero()) {
            return Err(Error::InvalidScenario(format!("fault on robot {} has negative onset", self.robot_id)));
        }
        if !(self.speed_cap_fraction > T::zero() && self.speed_cap_fraction <= T::one()) {
            return Err(Error::InvalidScenario(format!(
                "fault on robot {} has speed cap outside (0, 1]",
                self.robot_id
            )));
        }
        if !(self.lateral_offset >= T::zero()) {
            return Err(Error::InvalidScenario(format!("fault on robot {} has negative offset", self.robot_id)));
        }
        Ok(())
    }

    pub fn is_active(&self, t: T) -> bool {
        t >= self.onset_time
    }
}

/// Passes a commanded velocity through the degraded actuator.
///
/// `heading` (radians) supplies the offset direction when the command has no
/// horizontal component.
pub fn apply_degradation<T: Scalar>(v_cmd: Vec3<T>, heading: T, profile: &FaultProfile<T>, u_max: T, t: T) -> Vec3<T> {
    if !profile.is_active(t) {
        return v_cmd;
    }
    let h = v_cmd.horizontal_norm();
    let (dir_x, dir_y) = if h > T::lit(HEADING_SPEED_EPS) {
        (v_cmd.x / h, v_cmd.y / h)
    } else {
        (heading.cos(), heading.sin())
    };
    // +90° rotation of the travel direction
    let (left_x, left_y) = (-dir_y, dir_x);
    let sign = match profile.offset_side {
        OffsetSide::Left => T::one(),
        OffsetSide::Right => -T::one(),
    };
    let o = profile.lateral_offset * sign;
    let shifted = Vec3::new(v_cmd.x + o * left_x, v_cmd.y + o * left_y, v_cmd.z);
    shifted.clamp_norm(profile.speed_cap_fraction * u_max)
}
