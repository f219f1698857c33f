//! The output-input computation loop.
//!
//! One step runs Input, Controller, the memory interface, both write heads,
//! the read heads, Transform_C, then the data path (Transform_D, ALU,
//! Output). The output word becomes the next step's input.

mod core;
mod reference;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use self::core::{
    core_layout, AlgorithmicCore, NeuralCore, CONTROLLER, CONTROLLER_INPUT, CONTROLLER_LAYER, INTERFACE, TRANSFORM_C,
    TRANSFORM_C_INPUT, TRANSFORM_C_LAYER,
};
pub use self::reference::{reference_mode, ReferenceProgram};
use crate::data_modules::{DataModules, PhaseSignals};
use crate::domains::{Op, TargetTrace, TaskInstance, TaskKind, OP_COUNT};
use crate::error::{Error, Result};
use crate::memory::{DualMemory, ReadOptions, COMP_WIDTH, CONTROLLER_WIDTH, PHASE_WIDTH, READ_MODES};
use crate::word::DataWord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub constrained_head: bool,
    pub usage_linkage: bool,
    pub hard_attention: bool,
    /// A second free head, only valid with the constrained head disabled. It
    /// writes the input word again with the constrained write word.
    pub extra_free_head: bool,
    pub max_steps: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            constrained_head: true,
            usage_linkage: true,
            hard_attention: true,
            extra_free_head: false,
            max_steps: 1_000_000,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.extra_free_head && self.constrained_head {
            return Err(Error::Config("the extra free head replaces the constrained head".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        Ok(())
    }

    fn read_options(&self) -> ReadOptions {
        ReadOptions { hard: self.hard_attention, usage_linkage: self.usage_linkage }
    }
}

/// Named ablations of the full architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    Full,
    NoConstrainedHead,
    TwoFreeHeads,
    NoUsageLinkage,
    SoftAttention,
}

/// Applies an ablation on top of `base`.
pub fn configure_ablation(base: EngineConfig, ablation: Ablation) -> Result<EngineConfig> {
    let mut c = base;
    match ablation {
        Ablation::Full => {}
        Ablation::NoConstrainedHead => c.constrained_head = false,
        Ablation::TwoFreeHeads => {
            c.constrained_head = false;
            c.extra_free_head = true;
        }
        Ablation::NoUsageLinkage => c.usage_linkage = false,
        Ablation::SoftAttention => c.hard_attention = false,
    }
    c.validate()?;
    Ok(c)
}

/// Control signals passed between steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlBundle {
    pub c_i: [f64; PHASE_WIDTH],
    pub c_c: [f64; CONTROLLER_WIDTH],
    pub c_m: [f64; COMP_WIDTH],
    /// `None` before the first step, which feeds the controller a zero vector.
    pub c_f: Option<Op>,
    pub c_a: bool,
    pub c_o: bool,
}

impl Default for ControlBundle {
    fn default() -> Self {
        ControlBundle {
            c_i: [0.0; PHASE_WIDTH],
            c_c: [0.0; CONTROLLER_WIDTH],
            c_m: [0.0; COMP_WIDTH],
            c_f: None,
            c_a: false,
            c_o: false,
        }
    }
}

impl ControlBundle {
    pub fn c_f_onehot(&self) -> [f64; OP_COUNT] {
        self.c_f.map_or([0.0; OP_COUNT], Op::onehot)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub location: usize,
    pub attention: [f64; READ_MODES],
    pub op: Op,
    pub d_m: DataWord,
    pub d_o: DataWord,
    /// `(c1, c2, c3)` as produced by the Input module.
    pub phase: [u8; PHASE_WIDTH],
}

/// Mutable state of one running episode.
#[derive(Debug, Clone)]
pub struct EpisodeState {
    pub memory: DualMemory,
    pub control: ControlBundle,
    pub phase: PhaseSignals,
    /// Last output word, the next step's input.
    pub d_o: DataWord,
    pub steps: usize,
}

impl EpisodeState {
    pub fn new(start: &DataWord) -> Self {
        EpisodeState {
            memory: DualMemory::new(start.len()),
            control: ControlBundle::default(),
            phase: PhaseSignals::default(),
            d_o: start.clone(),
            steps: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    /// The Input module raised the termination signal; nothing else ran.
    Terminated,
    Ran(StepRecord),
}

/// Wires an algorithmic core to a set of data modules.
pub struct Engine<'a> {
    pub core: &'a dyn AlgorithmicCore,
    pub modules: &'a DataModules,
    pub config: EngineConfig,
}

impl<'a> Engine<'a> {
    pub fn new(core: &'a dyn AlgorithmicCore, modules: &'a DataModules, config: EngineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Engine { core, modules, config })
    }

    /// One computation step. With `mask_termination` the controller sees
    /// `c3 = 0` and the termination signal does not stop the step.
    pub fn step(&self, state: &mut EpisodeState, d_e: &DataWord, mask_termination: bool) -> Result<StepOutcome> {
        if state.steps >= self.config.max_steps {
            return Err(Error::Budget(format!("step limit {} reached", self.config.max_steps)));
        }
        let phase = self.modules.input_phase(d_e, &state.d_o, state.phase)?;
        state.phase = phase;
        if phase.terminated && !mask_termination {
            return Ok(StepOutcome::Terminated);
        }
        let mut c_i = phase.to_reals();
        if mask_termination {
            c_i[2] = 0.0;
        }
        let prev = state.control;
        let (c_c, iface) = self.core.control(&c_i, &prev.c_m, &prev.c_f_onehot())?;

        let d_i = &state.d_o;
        state.memory.allocate_and_write(d_i, &iface.write_word_free)?;
        if self.config.constrained_head {
            state.memory.constrained_write(&iface.write_word_constrained);
        } else if self.config.extra_free_head {
            state.memory.allocate_and_write(d_i, &iface.write_word_constrained)?;
        }
        let read = state.memory.read_attend(&iface, self.config.read_options())?;
        let op = self.core.select_op(&c_c, &read.comp, &c_i)?;
        let (c_a, c_o, d_o) = self.modules.data_path(&read.data, op)?;

        let record = StepRecord {
            step: state.steps,
            location: read.location,
            attention: read.attention,
            op,
            d_m: read.data,
            d_o: d_o.clone(),
            phase: phase.bits(),
        };
        state.control = ControlBundle { c_i, c_c, c_m: read.comp, c_f: Some(op), c_a, c_o };
        state.d_o = d_o;
        state.steps += 1;
        Ok(StepOutcome::Ran(record))
    }

    /// The harness target word: the goal until the found signal latches, the
    /// start afterwards.
    fn target<'t>(task: &'t TaskInstance, phase: PhaseSignals) -> &'t DataWord {
        if phase.found {
            &task.start
        } else {
            &task.goal
        }
    }

    /// Runs until the first deviation from `trace` or the end of the trace.
    pub fn run_teacher_scored(&self, task: &TaskInstance, trace: &TargetTrace) -> Result<Episode> {
        let mut state = EpisodeState::new(&task.start);
        let mut records = Vec::with_capacity(trace.total_steps());
        let mask = trace.kind == TaskKind::Search;
        for t in 0..trace.total_steps() {
            let expected = trace.step(t).expect("t within trace");
            let d_e = Self::target(task, state.phase);
            let record = match self.step(&mut state, d_e, mask) {
                Ok(StepOutcome::Ran(r)) => r,
                Ok(StepOutcome::Terminated) => {
                    return Ok(Episode { records, termination: Termination::Halted { mismatch: Some(t) } })
                }
                Err(Error::Budget(_)) => return Ok(Episode { records, termination: Termination::StepLimit }),
                Err(e) => return Err(e),
            };
            let ok = step_matches(trace, t, &record, expected);
            records.push(record);
            if !ok {
                return Ok(Episode { records, termination: Termination::Mismatch { step: t } });
            }
        }
        Ok(Episode { records, termination: Termination::TraceEnd })
    }

    /// Runs without a teacher until the model signals completion.
    ///
    /// Plan tasks stop when the Input module raises `c3`. Search tasks stop
    /// when the model emits `nop` on a step whose input (its previous output)
    /// equals the goal.
    pub fn run_autonomous(&self, task: &TaskInstance, kind: TaskKind) -> Result<Episode> {
        self.run_autonomous_with(task, kind, |_| Ok(()))
    }

    /// Autonomous run that hands each record to `sink` instead of keeping it.
    pub fn run_autonomous_with(
        &self,
        task: &TaskInstance,
        kind: TaskKind,
        mut sink: impl FnMut(&StepRecord) -> Result<()>,
    ) -> Result<Episode> {
        self.run_autonomous_inner(task, kind, &mut sink, false)
    }

    fn run_autonomous_inner(
        &self,
        task: &TaskInstance,
        kind: TaskKind,
        sink: &mut dyn FnMut(&StepRecord) -> Result<()>,
        keep: bool,
    ) -> Result<Episode> {
        let mut state = EpisodeState::new(&task.start);
        let mut records = Vec::new();
        let mask = kind == TaskKind::Search;
        loop {
            let d_e = Self::target(task, state.phase);
            // The output fed into this step, not the word a `nop` passes through.
            let reached = state.d_o == task.goal;
            let record = match self.step(&mut state, d_e, mask) {
                Ok(StepOutcome::Ran(r)) => r,
                Ok(StepOutcome::Terminated) => {
                    return Ok(Episode { records, termination: Termination::Halted { mismatch: None } })
                }
                Err(Error::Budget(_)) => return Ok(Episode { records, termination: Termination::StepLimit }),
                Err(e) => return Err(e),
            };
            sink(&record)?;
            let done = mask && record.op.is_nop() && reached;
            if keep {
                records.push(record);
            }
            if done {
                return Ok(Episode { records, termination: Termination::Halted { mismatch: None } });
            }
        }
    }

    pub fn run_autonomous_recorded(&self, task: &TaskInstance, kind: TaskKind) -> Result<Episode> {
        self.run_autonomous_inner(task, kind, &mut |_| Ok(()), true)
    }
}

/// Whether step `t` agrees with the oracle. The search completion step only
/// checks for `nop`.
pub fn step_matches(trace: &TargetTrace, t: usize, record: &StepRecord, expected: &crate::domains::TraceStep) -> bool {
    let search_finish = trace.kind == TaskKind::Search && t >= trace.t_e();
    record.op == expected.op && (search_finish || record.d_m == expected.word)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Termination {
    /// The model ended the episode itself. In teacher-scored runs an early
    /// halt at trace step `mismatch` counts as a deviation.
    Halted {
        mismatch: Option<usize>,
    },
    /// Teacher-scored run deviated from the trace at this step.
    Mismatch {
        step: usize,
    },
    /// Teacher-scored run followed the whole trace.
    TraceEnd,
    StepLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub records: Vec<StepRecord>,
    pub termination: Termination,
}

impl Episode {
    /// Exact agreement of an autonomous run with the oracle trace, including
    /// self-termination right after the last trace step.
    pub fn matches_trace(&self, trace: &TargetTrace) -> bool {
        matches!(self.termination, Termination::Halted { mismatch: None })
            && self.records.len() == trace.total_steps()
            && self.records.iter().enumerate().all(|(t, r)| step_matches(trace, t, r, trace.step(t).unwrap()))
    }
}

/// Autonomous run scored against the oracle without keeping every record.
pub fn solves_exactly(engine: &Engine, task: &TaskInstance, trace: &TargetTrace) -> Result<bool> {
    let mut t = 0;
    let mut ok = true;
    let episode = engine.run_autonomous_with(task, trace.kind, |r| {
        ok &= trace.step(t).is_some_and(|e| step_matches(trace, t, r, e));
        t += 1;
        if !ok {
            // Stop early: the run can no longer match.
            return Err(Error::Budget("deviation".into()));
        }
        Ok(())
    });
    match episode {
        Ok(ep) => Ok(ok && t == trace.total_steps() && matches!(ep.termination, Termination::Halted { .. })),
        Err(Error::Budget(_)) => Ok(false),
        Err(e) => Err(e),
    }
}

/// Writes one JSON object per step.
pub fn write_trace_jsonl(records: &[StepRecord], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_trace_jsonl(path: &Path) -> Result<Vec<StepRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}
