//! Fitness, NES and the curriculum loop that trains the algorithmic core.

mod curriculum;
mod fitness;
mod nes;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use self::curriculum::{CurriculumConfig, CurriculumEvent, CurriculumState, CurriculumStep, Sample};
pub use self::fitness::{
    fitness, fitness_plan, fitness_search, max_fitness, score_sample, score_sample_with, FitnessReport, Normalization,
    SampleScore, PLAN_MAX, SEARCH_MAX,
};
pub use self::nes::{nes_iteration, rank_transform, shaped_utilities, NesConfig, NesStep, Utility};
use crate::data_modules::DataModules;
use crate::domains::{Domain, TaskKind};
use crate::engine::{solves_exactly, AlgorithmicCore, Engine, EngineConfig, NeuralCore};
use crate::error::{Error, Result};
use crate::smallnet::Genome;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub domain: Domain,
    pub kind: TaskKind,
    pub nes: NesConfig,
    pub curriculum: CurriculumConfig,
    pub engine: EngineConfig,
    #[serde(default)]
    pub fitness: Normalization,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(domain: Domain, kind: TaskKind, seed: u64) -> Self {
        TrainConfig {
            domain,
            kind,
            nes: NesConfig::default(),
            curriculum: CurriculumConfig::default(),
            engine: EngineConfig::default(),
            fitness: Normalization::default(),
            seed,
        }
    }
}

/// One line of the per-iteration log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub lineage: usize,
    pub level: usize,
    pub center_fitness: f64,
    pub center_f_e: f64,
    pub max_fitness: bool,
    pub updated: bool,
    pub population_mean: Option<f64>,
    pub population_max: Option<f64>,
    pub population_min: Option<f64>,
    pub streak: usize,
    pub buffer: usize,
    pub wall_ms: u64,
}

pub trait TrainObserver {
    fn iteration(&mut self, log: &IterationLog) -> Result<()>;
    /// Called for every curriculum event with the genome current at that point.
    fn event(&mut self, event: &CurriculumEvent, genome: &Genome) -> Result<()>;
}

/// Observer that keeps everything in memory.
#[derive(Debug, Default, Clone)]
pub struct Recorder {
    pub log: Vec<IterationLog>,
    pub events: Vec<CurriculumEvent>,
}

impl TrainObserver for Recorder {
    fn iteration(&mut self, log: &IterationLog) -> Result<()> {
        self.log.push(log.clone());
        Ok(())
    }

    fn event(&mut self, event: &CurriculumEvent, _genome: &Genome) -> Result<()> {
        self.events.push(event.clone());
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub genome: Genome,
    pub state: CurriculumState,
}

/// Teacher-scored fitness of `core` on a minibatch.
pub fn evaluate_batch(
    core: &dyn AlgorithmicCore,
    modules: &DataModules,
    config: EngineConfig,
    kind: TaskKind,
    norm: Normalization,
    batch: &[Sample],
) -> Result<FitnessReport> {
    let engine = Engine::new(core, modules, config)?;
    let scores = batch
        .iter()
        .map(|s| engine.run_teacher_scored(&s.task, &s.trace).map(|ep| score_sample_with(&ep.records, &s.trace, norm)))
        .collect::<Result<Vec<_>>>()?;
    fitness(kind, scores)
}

fn fresh_genome(rng: &mut ChaCha8Rng) -> Genome {
    NeuralCore::random(rng).into_genome()
}

/// Runs NES with the curriculum until the budget is spent (or the evaluation
/// stage is solved, when so configured).
pub fn train(config: &TrainConfig, modules: &DataModules, observer: &mut dyn TrainObserver) -> Result<TrainOutcome> {
    train_from(config, modules, observer, None)
}

/// As [`train`], optionally starting from a given genome.
pub fn train_from(
    config: &TrainConfig,
    modules: &DataModules,
    observer: &mut dyn TrainObserver,
    initial: Option<Genome>,
) -> Result<TrainOutcome> {
    config.nes.validate()?;
    config.engine.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut genome = match initial {
        Some(g) => NeuralCore::new(g)?.into_genome(),
        None => fresh_genome(&mut rng),
    };
    let mut state = CurriculumState::default();
    if config.nes.budget == 0 {
        return Ok(TrainOutcome { genome, state });
    }
    let nes = config.nes;
    while !state.finished {
        let started = Instant::now();
        let batch = state.minibatch(&config.curriculum, nes.minibatch, &config.domain, config.kind, &mut rng)?;
        let mut nes_rng = ChaCha8Rng::seed_from_u64(rng.random());
        let evaluate = |values: &[f64]| -> Result<(f64, bool, FitnessReport)> {
            let core = NeuralCore::new(Genome { layout: genome.layout.clone(), values: values.to_vec() })?;
            let report = evaluate_batch(&core, modules, config.engine, config.kind, config.fitness, &batch)?;
            Ok((report.fitness, report.max_fitness, report))
        };
        let mut next = genome.clone();
        let step = nes_iteration(&mut next, &nes, &mut nes_rng, evaluate);
        let (step, diverged) = match step {
            Ok(s) => (Some(s), false),
            Err(Error::NonFinite(_)) => (None, true),
            Err(e) => return Err(e),
        };
        let (center, offspring, updated) = match step {
            Some(s) => (Some(s.center), s.offspring, s.updated),
            None => (None, Vec::new(), false),
        };
        if !diverged {
            genome = next;
        }
        let max_fitness = center.as_ref().is_some_and(|c| c.max_fitness);
        let failed: Vec<Sample> = match &center {
            Some(c) => c.samples.iter().zip(&batch).filter(|(s, _)| !s.perfect()).map(|(_, b)| b.clone()).collect(),
            None => Vec::new(),
        };
        let window = if diverged { 0 } else { nes.restart_window };
        let level = state.level;
        let outcome = state.record(&config.curriculum, window, nes.budget, max_fitness, failed);
        let stats = |f: fn(f64, f64) -> f64| offspring.iter().copied().reduce(f);
        let log = IterationLog {
            iteration: state.iteration,
            lineage: if outcome.restart { state.lineage - 1 } else { state.lineage },
            level,
            center_fitness: center.as_ref().map_or(f64::NAN, |c| c.fitness),
            center_f_e: center.as_ref().map_or(f64::NAN, |c| c.mean_f_e),
            max_fitness,
            updated,
            population_mean: (!offspring.is_empty()).then(|| offspring.iter().sum::<f64>() / offspring.len() as f64),
            population_max: stats(f64::max),
            population_min: stats(f64::min),
            streak: state.streak,
            buffer: state.buffer.len(),
            wall_ms: started.elapsed().as_millis() as u64,
        };
        observer.iteration(&log)?;
        for e in &outcome.events {
            observer.event(e, &genome)?;
        }
        if outcome.restart {
            genome = fresh_genome(&mut rng);
        }
    }
    Ok(TrainOutcome { genome, state })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelAccuracy {
    pub level: usize,
    pub samples: usize,
    pub correct: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub domain: String,
    pub kind: TaskKind,
    pub levels: Vec<LevelAccuracy>,
    pub samples: usize,
    pub correct: usize,
}

impl EvalReport {
    pub fn accuracy(&self) -> f64 {
        if self.samples == 0 {
            return 0.0;
        }
        self.correct as f64 / self.samples as f64
    }
}

/// Autonomous exact-match evaluation on `samples` tasks spread evenly over
/// the feasible levels up to `max_level`.
pub fn evaluate_levels(
    core: &dyn AlgorithmicCore,
    modules: &DataModules,
    config: EngineConfig,
    kind: TaskKind,
    max_level: usize,
    samples: usize,
    seed: u64,
) -> Result<EvalReport> {
    let domain = &modules.domain;
    let levels = domain.feasible_levels(max_level);
    if levels.is_empty() {
        return Err(Error::Config(format!("no feasible levels up to {max_level}")));
    }
    let engine = Engine::new(core, modules, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc: Vec<LevelAccuracy> =
        levels.iter().map(|&level| LevelAccuracy { level, samples: 0, correct: 0 }).collect();
    for i in 0..samples {
        let slot = i % levels.len();
        let s = Sample::draw(&mut rng, domain, kind, levels[slot])?;
        acc[slot].samples += 1;
        if solves_exactly(&engine, &s.task, &s.trace)? {
            acc[slot].correct += 1;
        }
    }
    let correct = acc.iter().map(|a| a.correct).sum();
    Ok(EvalReport { domain: domain.name(), kind, levels: acc, samples, correct })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::ReferenceProgram;

    #[test]
    fn reference_scores_maximum_on_every_level() {
        let d = Domain::sokoban(6);
        let modules = DataModules::oracle(d.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for kind in [TaskKind::Search, TaskKind::Plan] {
            for level in 1..=21 {
                let batch: Vec<Sample> = (0..2).map(|_| Sample::draw(&mut rng, &d, kind, level).unwrap()).collect();
                let rep = evaluate_batch(
                    &ReferenceProgram,
                    &modules,
                    EngineConfig::default(),
                    kind,
                    Normalization::default(),
                    &batch,
                )
                .unwrap();
                assert_eq!(rep.fitness, max_fitness(kind), "level {level} {kind:?}");
                assert!(rep.max_fitness);
            }
        }
    }

    fn tiny(seed: u64) -> TrainConfig {
        let mut c = TrainConfig::new(Domain::sokoban(6), TaskKind::Search, seed);
        c.nes.budget = 6;
        c.nes.population = 4;
        c.nes.minibatch = 4;
        c
    }

    #[test]
    fn zero_budget_returns_initial_genome() {
        let mut c = tiny(1);
        c.nes.budget = 0;
        let modules = DataModules::oracle(c.domain.clone());
        let mut rec = Recorder::default();
        let out = train(&c, &modules, &mut rec).unwrap();
        assert!(rec.log.is_empty());
        assert_eq!(out.genome.len(), 992);
    }

    #[test]
    fn training_is_deterministic() {
        let c = tiny(7);
        let modules = DataModules::oracle(c.domain.clone());
        let run = || {
            let mut rec = Recorder::default();
            let out = train(&c, &modules, &mut rec).unwrap();
            let log: Vec<IterationLog> = rec.log.into_iter().map(|l| IterationLog { wall_ms: 0, ..l }).collect();
            (out.genome, log, rec.events)
        };
        let (g1, l1, e1) = run();
        let (g2, l2, e2) = run();
        assert_eq!(g1.values, g2.values);
        assert_eq!(l1, l2);
        assert_eq!(e1, e2);
        assert_eq!(l1.len(), 6);
    }

    #[test]
    fn reference_genome_never_triggers_learning() {
        let mut c = tiny(3);
        c.curriculum.solve_streak = 2;
        c.curriculum.max_level = 3;
        c.nes.budget = 20;
        let modules = DataModules::oracle(c.domain.clone());
        let mut rec = Recorder::default();
        let out = train_from(&c, &modules, &mut rec, Some(ReferenceProgram::genome())).unwrap();
        assert!(rec.log.iter().all(|l| l.max_fitness && !l.updated));
        assert_eq!(out.genome.values, ReferenceProgram::genome().values);
        assert_eq!(out.state.solved, vec![1, 2, 3, 4]);
        assert!(rec.events.iter().any(|e| matches!(e, CurriculumEvent::Finished { evaluated: true, .. })));
    }

    #[test]
    fn evaluation_report_counts() {
        let modules = DataModules::oracle(Domain::Puzzle);
        let rep =
            evaluate_levels(&ReferenceProgram, &modules, EngineConfig::default(), TaskKind::Plan, 6, 10, 1).unwrap();
        assert_eq!(rep.samples, 10);
        assert_eq!(rep.correct, 10);
        assert_eq!(rep.accuracy(), 1.0);
    }
}
