//! Level progression, restarts, old-level replay and the bad-memories buffer.

use std::collections::VecDeque;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domains::{oracle_trace, sample_task, Domain, TargetTrace, TaskInstance, TaskKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub task: TaskInstance,
    pub trace: TargetTrace,
}

impl Sample {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, domain: &Domain, kind: TaskKind, level: usize) -> Result<Self> {
        let task = sample_task(rng, domain, level)?;
        let trace = oracle_trace(&task, kind)?;
        Ok(Sample { task, trace })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurriculumConfig {
    /// Last regular level; the level after it samples from all levels.
    pub max_level: usize,
    pub clear_streak: usize,
    pub solve_streak: usize,
    pub buffer_capacity: usize,
    pub buffer_share: f64,
    pub old_level_share: f64,
    /// Stop once the all-level evaluation stage is solved instead of running
    /// out the budget.
    pub stop_when_evaluated: bool,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        CurriculumConfig {
            max_level: 21,
            clear_streak: 10,
            solve_streak: 250,
            buffer_capacity: 200,
            buffer_share: 0.25,
            old_level_share: 0.2,
            stop_when_evaluated: true,
        }
    }
}

impl CurriculumConfig {
    pub fn evaluation_level(&self) -> usize {
        self.max_level + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum CurriculumEvent {
    BufferCleared { iteration: usize },
    LevelSolved { iteration: usize, level: usize, lineage: usize },
    Restart { iteration: usize, level: usize, new_lineage: usize },
    Finished { iteration: usize, level: usize, evaluated: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumState {
    pub level: usize,
    pub streak: usize,
    pub buffer: VecDeque<Sample>,
    pub iteration: usize,
    pub level_start: usize,
    pub lineage: usize,
    pub solved: Vec<usize>,
    pub finished: bool,
}

impl Default for CurriculumState {
    fn default() -> Self {
        CurriculumState {
            level: 1,
            streak: 0,
            buffer: VecDeque::new(),
            iteration: 0,
            level_start: 0,
            lineage: 0,
            solved: Vec::new(),
            finished: false,
        }
    }
}

/// What the caller must do after a curriculum step.
#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumStep {
    pub events: Vec<CurriculumEvent>,
    /// The genome must be replaced by a fresh one.
    pub restart: bool,
}

impl CurriculumState {
    pub fn highest_solved(&self) -> usize {
        self.solved.iter().copied().max().unwrap_or(0)
    }

    /// Records one finished iteration. `failed` are the minibatch samples
    /// on which the center parameters made at least one mistake.
    pub fn record(
        &mut self,
        config: &CurriculumConfig,
        restart_window: usize,
        budget: usize,
        max_fitness: bool,
        failed: Vec<Sample>,
    ) -> CurriculumStep {
        let mut events = Vec::new();
        let mut restart = false;
        self.iteration += 1;
        let it = self.iteration;
        self.streak = if max_fitness { self.streak + 1 } else { 0 };
        let overflow = failed.len().saturating_sub(config.buffer_capacity);
        for s in failed.into_iter().skip(overflow) {
            if self.buffer.len() == config.buffer_capacity {
                self.buffer.pop_front();
            }
            self.buffer.push_back(s);
        }
        if self.streak >= config.clear_streak && !self.buffer.is_empty() {
            self.buffer.clear();
            events.push(CurriculumEvent::BufferCleared { iteration: it });
        }
        if self.streak >= config.solve_streak {
            events.push(CurriculumEvent::LevelSolved { iteration: it, level: self.level, lineage: self.lineage });
            self.solved.push(self.level);
            if self.level == config.evaluation_level() && config.stop_when_evaluated {
                self.finished = true;
                events.push(CurriculumEvent::Finished { iteration: it, level: self.level, evaluated: true });
                return CurriculumStep { events, restart };
            }
            self.level = (self.level + 1).min(config.evaluation_level());
            self.streak = 0;
            self.level_start = it;
        } else if it - self.level_start >= restart_window {
            self.lineage += 1;
            events.push(CurriculumEvent::Restart { iteration: it, level: self.level, new_lineage: self.lineage });
            self.level = 1;
            self.streak = 0;
            self.level_start = it;
            self.buffer.clear();
            self.solved.clear();
            restart = true;
        }
        if it >= budget {
            self.finished = true;
            events.push(CurriculumEvent::Finished { iteration: it, level: self.level, evaluated: false });
        }
        CurriculumStep { events, restart }
    }

    /// Composes the next minibatch: buffer share first, then old levels,
    /// then the current level. The evaluation stage draws every non-buffer
    /// sample from a uniformly chosen level.
    pub fn minibatch<R: Rng + ?Sized>(
        &self,
        config: &CurriculumConfig,
        size: usize,
        domain: &Domain,
        kind: TaskKind,
        rng: &mut R,
    ) -> Result<Vec<Sample>> {
        let levels = domain.feasible_levels(config.max_level);
        if levels.is_empty() {
            return Err(Error::Config(format!("no feasible levels for {}", domain.name())));
        }
        let mut batch = Vec::with_capacity(size);
        if !self.buffer.is_empty() {
            let n = share(size, config.buffer_share);
            for _ in 0..n {
                batch.push(self.buffer[rng.random_range(0..self.buffer.len())].clone());
            }
        }
        let evaluating = self.level >= config.evaluation_level();
        let old: Vec<usize> = levels.iter().copied().filter(|&l| l < self.level).collect();
        if !evaluating && !old.is_empty() {
            for _ in 0..share(size, config.old_level_share).min(size - batch.len()) {
                let level = *old.choose(rng).expect("nonempty");
                batch.push(Sample::draw(rng, domain, kind, level)?);
            }
        }
        while batch.len() < size {
            let level = if evaluating { *levels.choose(rng).expect("nonempty") } else { self.level };
            batch.push(Sample::draw(rng, domain, kind, level)?);
        }
        Ok(batch)
    }
}

fn share(size: usize, fraction: f64) -> usize {
    (size as f64 * fraction).round() as usize
}
