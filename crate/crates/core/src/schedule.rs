//! Ordered extraction sequences and their capacity replay.

use serde::{Deserialize, Serialize};

use crate::block_model::{Action, BlockModel, OperationalState};
use crate::error::{Error, Result};

/// A continuation policy: blocks in extraction order, each with its
/// destination. Periods are derived by replay, never stored.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub actions: Vec<Action>,
}

/// One replayed step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Extraction {
    pub step: usize,
    pub action: Action,
    pub period: u32,
}

impl Schedule {
    pub fn new(actions: Vec<Action>) -> Self {
        Schedule { actions }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn order(&self) -> impl Iterator<Item = usize> + '_ {
        self.actions.iter().map(|a| a.block)
    }

    /// Applies every action from `start`, returning the extraction periods
    /// and the final state. Fails on the first infeasible step.
    pub fn replay(
        &self,
        model: &BlockModel,
        start: &OperationalState,
    ) -> Result<(Vec<Extraction>, OperationalState)> {
        let mut state = start.clone();
        let mut out = Vec::with_capacity(self.actions.len());
        for (step, &action) in self.actions.iter().enumerate() {
            let (next, period) = model
                .transition(&state, action)
                .map_err(|e| e.at_step(step))?;
            out.push(Extraction {
                step,
                action,
                period,
            });
            state = next;
        }
        Ok((out, state))
    }

    /// Replays and additionally requires that every block unmined in
    /// `start` is extracted.
    pub fn validate_complete(&self, model: &BlockModel, start: &OperationalState) -> Result<()> {
        let (_, end) = self.replay(model, start)?;
        if end.n_remaining() > 0 {
            return Err(Error::IncompleteSchedule(format!(
                "{} blocks left unmined",
                end.n_remaining()
            )));
        }
        Ok(())
    }

    /// The same schedule with `block` removed.
    pub fn without(&self, block: usize) -> Schedule {
        Schedule {
            actions: self.actions.iter().copied().filter(|a| a.block != block).collect(),
        }
    }
}
