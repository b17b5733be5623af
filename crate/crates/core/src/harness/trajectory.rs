use serde::{Deserialize, Serialize};

use super::engine::Engine;
use super::schedule::Schedule;
use crate::error::Result;

/// Quantities recorded after update `n`; `k` is `None` for the initial state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub n: u64,
    pub k: Option<usize>,
    pub gap: f64,
    pub w2l_to_ref: f64,
    pub second_moment: f64,
    pub running_r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub engine: String,
    pub schedule: Schedule,
    pub seed: Option<u64>,
    pub problem_hash: String,
}

/// One run: the initial record followed by one record per update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub meta: TrajectoryMeta,
    pub records: Vec<Record>,
}

impl Trajectory {
    pub fn initial(&self) -> &Record {
        &self.records[0]
    }

    pub fn updates(&self) -> &[Record] {
        &self.records[1..]
    }

    pub fn gaps(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.gap)
    }

    /// Indices `n` where the gap rose by more than `tol · max(1, gap)`.
    pub fn gap_increases(&self, tol: f64) -> Vec<u64> {
        self.records
            .windows(2)
            .filter(|w| w[1].gap > w[0].gap + tol * w[0].gap.abs().max(1.0))
            .map(|w| w[1].n)
            .collect()
    }

    pub fn running_r_is_monotone(&self) -> bool {
        self.records.windows(2).all(|w| w[1].running_r >= w[0].running_r)
    }

    /// First `n` after which every block has been updated at least once.
    pub fn first_coverage(&self, block_count: usize) -> Option<u64> {
        let mut seen = vec![false; block_count];
        let mut left = block_count;
        for r in self.updates() {
            if let Some(k) = r.k {
                if !std::mem::replace(&mut seen[k], true) {
                    left -= 1;
                    if left == 0 {
                        return Some(r.n);
                    }
                }
            }
        }
        None
    }
}

/// Runs `n_updates` single-block updates in schedule order from `init`.
///
/// `observe` sees the state after every update and may abort the run.
pub fn run_trial_with<E: Engine>(
    engine: &E,
    init: &E::State,
    schedule: &Schedule,
    n_updates: u64,
    mut observe: impl FnMut(u64, &E::State) -> Result<()>,
) -> Result<Trajectory> {
    let mut indices = schedule.indices(engine.block_count())?;
    let mut state = init.clone();
    let gap0 = engine.gap(&state)?;
    let w0 = engine.distance_to_reference(&state)?;
    let mut running_r = gap0.max(0.0).sqrt().max(w0);
    let mut records = Vec::with_capacity(n_updates as usize + 1);
    records.push(Record {
        n: 0,
        k: None,
        gap: gap0,
        w2l_to_ref: w0,
        second_moment: engine.second_moment(&state),
        running_r,
    });
    observe(0, &state)?;
    for n in 1..=n_updates {
        let k = indices.next().expect("schedules are endless");
        engine.update(&mut state, k)?;
        let w = engine.distance_to_reference(&state)?;
        running_r = running_r.max(w);
        records.push(Record {
            n,
            k: Some(k),
            gap: engine.gap(&state)?,
            w2l_to_ref: w,
            second_moment: engine.second_moment(&state),
            running_r,
        });
        observe(n, &state)?;
    }
    Ok(Trajectory {
        meta: TrajectoryMeta {
            engine: engine.name().into(),
            schedule: schedule.clone(),
            seed: schedule.seed(),
            problem_hash: engine.problem_hash().into(),
        },
        records,
    })
}

pub fn run_trial<E: Engine>(
    engine: &E,
    init: &E::State,
    schedule: &Schedule,
    n_updates: u64,
) -> Result<Trajectory> {
    run_trial_with(engine, init, schedule, n_updates, |_, _| Ok(()))
}
