use thiserror::Error;

use crate::block_model::{Destination, Zone};

#[derive(Debug, Error)]
pub enum Error {
    #[error("block {0} does not exist")]
    UnknownBlock(usize),

    #[error("block {0} is already mined")]
    AlreadyMined(usize),

    #[error("block {block} has unmined predecessor {predecessor}")]
    Precedence { block: usize, predecessor: usize },

    #[error("destination {dest} cannot receive {zone} block {block}")]
    Incompatible {
        block: usize,
        zone: Zone,
        dest: Destination,
    },

    #[error("{dest} has {remaining} t left in period {period}, block {block} needs {tonnes} t")]
    Capacity {
        block: usize,
        dest: Destination,
        period: u32,
        remaining: f64,
        tonnes: f64,
    },

    #[error("schedule step {step}: {source}")]
    ScheduleStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("episode aborted at epoch {epoch}: {source}")]
    Episode {
        epoch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("schedule does not cover the remaining blocks: {0}")]
    IncompleteSchedule(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid block model: {0}")]
    Model(String),

    #[error("degenerate distribution: {0}")]
    Degenerate(String),

    #[error("ensemble operation needs at least 2 members, got {0}")]
    EnsembleTooSmall(usize),

    #[error("singular system in {0}")]
    Singular(&'static str),

    #[error("realized value is zero, gap undefined")]
    ZeroRealized,

    #[error("instance too large for exhaustive enumeration: {0}")]
    TooLarge(String),

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Error {
        Error::ScheduleStep {
            step,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
