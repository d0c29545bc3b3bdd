use thiserror::Error;

use crate::model::RobotId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid swarm parameters: {0}")]
    InvalidParams(String),

    #[error("displacement too small to define a bearing")]
    DegenerateDisplacement,

    #[error("weights and neighbor velocities cover different neighbor sets")]
    MismatchedNeighborSet,

    #[error("robot {robot} state became non-finite at step {step}")]
    NumericalDivergence { step: usize, robot: RobotId },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("run files do not match the expected schema: {0}")]
    SchemaMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
