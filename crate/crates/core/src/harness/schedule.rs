use serde::{Deserialize, Serialize};

use super::rng::SplitMix64;
use crate::error::{Error, Result};

/// Order in which blocks are updated.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Schedule {
    /// Independent uniform draws from a splitmix64 stream.
    Random { seed: u64 },
    /// `0, 1, …, K−1, 0, 1, …`
    #[default]
    Cyclic,
    /// A fixed sequence, repeated once exhausted.
    Fixed { sequence: Vec<usize> },
}


impl Schedule {
    pub fn seed(&self) -> Option<u64> {
        match self {
            Schedule::Random { seed } => Some(*seed),
            _ => None,
        }
    }

    /// The same schedule with its seed replaced; non-random schedules are unchanged.
    pub fn reseeded(&self, seed: u64) -> Self {
        match self {
            Schedule::Random { .. } => Schedule::Random { seed },
            other => other.clone(),
        }
    }

    pub fn validate(&self, block_count: usize) -> Result<()> {
        if block_count == 0 {
            return Err(Error::InvalidBlocks("no blocks".into()));
        }
        if let Schedule::Fixed { sequence } = self {
            if sequence.is_empty() {
                return Err(Error::Precondition("fixed schedule is empty".into()));
            }
            if let Some(&index) = sequence.iter().find(|&&k| k >= block_count) {
                return Err(Error::BlockIndex {
                    index,
                    count: block_count,
                });
            }
        }
        Ok(())
    }

    pub fn indices(&self, block_count: usize) -> Result<ScheduleIter> {
        self.validate(block_count)?;
        let kind = match self {
            Schedule::Random { seed } => Kind::Random(SplitMix64::new(*seed)),
            Schedule::Cyclic => Kind::Cyclic,
            Schedule::Fixed { sequence } => Kind::Fixed(sequence.clone()),
        };
        Ok(ScheduleIter {
            kind,
            block_count,
            step: 0,
        })
    }
}

#[derive(Debug, Clone)]
enum Kind {
    Random(SplitMix64),
    Cyclic,
    Fixed(Vec<usize>),
}

/// Endless stream of block indices.
#[derive(Debug, Clone)]
pub struct ScheduleIter {
    kind: Kind,
    block_count: usize,
    step: usize,
}

impl Iterator for ScheduleIter {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        let k = match &mut self.kind {
            Kind::Random(rng) => rng.next_index(self.block_count),
            Kind::Cyclic => self.step % self.block_count,
            Kind::Fixed(seq) => seq[self.step % seq.len()],
        };
        self.step += 1;
        Some(k)
    }
}
