//! Input, Transform_D, ALU and Output: the domain-specific modules on the
//! data stream, each available as a hardcoded oracle or a learned network.

mod learned;
mod train;

pub use learned::{LearnedAlu, LearnedInput, LearnedOutput, LearnedTransform};
pub use train::{
    train_alu, train_input, train_module, train_output, train_transform, write_corpus, AluSample, AluTrainer,
    DataTrainConfig, InputSample, InputTrainer, MaskInsertionLoss, ModuleTrainer, OutputSample, OutputTrainer,
    TrainReport, TransformSample, TransformTrainer,
};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domains::{Cell, Direction, Domain, Op, SokobanCodec};
use crate::error::{Error, Result};
use crate::word::DataWord;

pub const VIEW_CELLS: usize = 9;
pub const VIEW_WIDTH: usize = VIEW_CELLS * 4;
pub const CHANGE_WIDTH: usize = 4 + 3 * 4;

/// Phase signals produced by the Input module, plus the equality bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PhaseSignals {
    pub searching: bool,
    pub found: bool,
    pub terminated: bool,
    pub equal: bool,
}

impl PhaseSignals {
    /// Applies the phase formulas to a fresh equality bit, clamping each
    /// result to {0, 1}.
    pub fn next(prev: PhaseSignals, equal: bool) -> PhaseSignals {
        let i = equal as i32;
        let c2 = prev.found as i32;
        let clamp = |v: i32| v.clamp(0, 1) == 1;
        PhaseSignals { searching: clamp((1 - i) - c2), found: clamp(i + c2), terminated: clamp(i * c2), equal }
    }

    pub fn to_reals(self) -> [f64; 3] {
        [self.searching as u8 as f64, self.found as u8 as f64, self.terminated as u8 as f64]
    }

    pub fn bits(self) -> [u8; 3] {
        [self.searching as u8, self.found as u8, self.terminated as u8]
    }
}

/// The agent's cell and the two cells beyond it in each direction, ordered
/// (center, up1, up2, right1, right2, down1, down2, left1, left2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LocalView {
    pub cells: [Cell; VIEW_CELLS],
}

impl LocalView {
    pub fn along(&self, dir: Direction) -> [Cell; 3] {
        let base = 1 + 2 * dir.index();
        [self.cells[0], self.cells[base], self.cells[base + 1]]
    }

    pub fn to_reals(&self, codec: &SokobanCodec) -> Vec<f64> {
        self.cells.iter().flat_map(|&c| codec.cell_reals(c)).collect()
    }
}

/// The direction of a successful move and the three affected cells
/// (former agent cell, target, beyond). `direction` is `None` when nothing
/// changed, in which case the cells are the unchanged view along the
/// requested operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LocalChange {
    pub direction: Option<Direction>,
    pub cells: [Cell; 3],
}

impl LocalChange {
    pub fn unchanged(view: &LocalView, op: Op) -> LocalChange {
        LocalChange { direction: None, cells: view.along(op.direction().unwrap_or(Direction::Up)) }
    }

    pub fn to_reals(&self, codec: &SokobanCodec) -> Vec<f64> {
        let mut v = vec![0.0; 4];
        if let Some(d) = self.direction {
            v[d.index()] = 1.0;
        }
        v.extend(self.cells.iter().flat_map(|&c| codec.cell_reals(c)));
        v
    }
}

/// What Transform_D hands to the ALU.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataView {
    Local(LocalView),
    Word(DataWord),
}

/// What the ALU hands to Output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataChange {
    Local(LocalChange),
    Word(DataWord),
}

pub fn input_phase(equal: bool, prev: PhaseSignals) -> PhaseSignals {
    PhaseSignals::next(prev, equal)
}

pub fn oracle_view(codec: &SokobanCodec, d_m: &DataWord) -> Result<LocalView> {
    let agent = codec.agent_position(d_m)?;
    let mut cells = [Cell::Agent; VIEW_CELLS];
    for dir in Direction::ALL {
        for step in 1..=2 {
            let cell = match codec.offset(agent, dir, step as isize) {
                Some(pos) => codec.cell_at(d_m, codec.index(pos))?,
                None => Cell::Wall,
            };
            cells[2 * dir.index() + step] = cell;
        }
    }
    Ok(LocalView { cells })
}

pub fn oracle_transform(domain: &Domain, d_m: &DataWord) -> Result<DataView> {
    match domain {
        Domain::Sokoban(codec) => oracle_view(codec, d_m).map(DataView::Local),
        _ => Ok(DataView::Word(d_m.clone())),
    }
}

/// Rule table: a move succeeds into an empty cell, or pushes a box onto an
/// empty cell beyond it.
pub fn oracle_local_alu(op: Op, view: &LocalView) -> (bool, LocalChange) {
    let Some(dir) = op.direction() else {
        return (false, LocalChange::unchanged(view, op));
    };
    let [center, target, beyond] = view.along(dir);
    let cells = match (target, beyond) {
        (Cell::Empty, _) => Some([Cell::Empty, Cell::Agent, beyond]),
        (Cell::Box, Cell::Empty) => Some([Cell::Empty, Cell::Agent, Cell::Box]),
        _ => None,
    };
    match cells {
        Some(cells) if center == Cell::Agent => (true, LocalChange { direction: Some(dir), cells }),
        _ => (false, LocalChange::unchanged(view, op)),
    }
}

pub fn oracle_alu(domain: &Domain, op: Op, view: &DataView) -> Result<(bool, DataChange)> {
    match view {
        DataView::Local(v) => {
            let (c_a, change) = oracle_local_alu(op, v);
            Ok((c_a, DataChange::Local(change)))
        }
        DataView::Word(w) => {
            let next = domain.apply_action(w, op)?;
            Ok((&next != w, DataChange::Word(next)))
        }
    }
}

pub fn insert_change(codec: &SokobanCodec, change: &LocalChange, d_m: &DataWord) -> Result<DataWord> {
    let dir =
        change.direction.ok_or_else(|| Error::Config("insertion requested for an unchanged local view".into()))?;
    let agent = codec.agent_position(d_m)?;
    let mut d_o = d_m.clone();
    for (step, &cell) in change.cells.iter().enumerate() {
        let pos = codec
            .offset(agent, dir, step as isize)
            .ok_or_else(|| Error::InvalidWorld(format!("change {step} cells {dir:?} of the agent leaves the grid")))?;
        codec.write_cell(&mut d_o, codec.index(pos), cell);
    }
    Ok(d_o)
}

pub fn oracle_output(domain: &Domain, c_a: bool, change: &DataChange, d_m: &DataWord) -> Result<(bool, DataWord)> {
    if !c_a {
        return Ok((false, d_m.clone()));
    }
    match (domain, change) {
        (Domain::Sokoban(codec), DataChange::Local(c)) => Ok((true, insert_change(codec, c, d_m)?)),
        (_, DataChange::Word(w)) => Ok((true, w.clone())),
        _ => Err(Error::Config(format!("change kind does not match domain {}", domain.name()))),
    }
}

#[derive(Debug, Clone)]
pub enum InputModule {
    Oracle,
    Learned(LearnedInput),
}

#[derive(Debug, Clone)]
pub enum TransformModule {
    Oracle,
    Learned(LearnedTransform),
}

#[derive(Debug, Clone)]
pub enum AluModule {
    Oracle,
    Learned(LearnedAlu),
}

#[derive(Debug, Clone)]
pub enum OutputModule {
    Oracle,
    Learned(LearnedOutput),
}

/// The four data-dependent modules for one domain and representation.
#[derive(Debug, Clone)]
pub struct DataModules {
    pub domain: Domain,
    pub input: InputModule,
    pub transform: TransformModule,
    pub alu: AluModule,
    pub output: OutputModule,
}

pub const MODULE_FILES: [&str; 4] = ["input", "transform", "alu", "output"];

impl DataModules {
    pub fn oracle(domain: Domain) -> Self {
        DataModules {
            domain,
            input: InputModule::Oracle,
            transform: TransformModule::Oracle,
            alu: AluModule::Oracle,
            output: OutputModule::Oracle,
        }
    }

    pub fn is_oracle(&self) -> bool {
        matches!(
            (&self.input, &self.transform, &self.alu, &self.output),
            (InputModule::Oracle, TransformModule::Oracle, AluModule::Oracle, OutputModule::Oracle)
        )
    }

    /// Loads whichever of `input.bin`, `transform.bin`, `alu.bin` and
    /// `output.bin` exist in `dir`; missing files fall back to the oracle.
    pub fn load_dir(domain: Domain, dir: &Path) -> Result<Self> {
        let mut m = DataModules::oracle(domain);
        let file = |name: &str| dir.join(format!("{name}.bin"));
        if file("input").exists() {
            m.input = InputModule::Learned(LearnedInput::load(&file("input"), &m.domain)?);
        }
        if file("transform").exists() {
            m.transform = TransformModule::Learned(LearnedTransform::load(&file("transform"), &m.domain)?);
        }
        if file("alu").exists() {
            m.alu = AluModule::Learned(LearnedAlu::load(&file("alu"), &m.domain)?);
        }
        if file("output").exists() {
            m.output = OutputModule::Learned(LearnedOutput::load(&file("output"), &m.domain)?);
        }
        Ok(m)
    }

    pub fn equal(&self, d_e: &DataWord, x: &DataWord) -> Result<bool> {
        d_e.ensure_len(x.len())?;
        match &self.input {
            InputModule::Oracle => Ok(d_e == x),
            InputModule::Learned(net) => net.equal(d_e, x),
        }
    }

    pub fn input_phase(&self, d_e: &DataWord, x: &DataWord, prev: PhaseSignals) -> Result<PhaseSignals> {
        Ok(input_phase(self.equal(d_e, x)?, prev))
    }

    pub fn transform(&self, d_m: &DataWord) -> Result<DataView> {
        match &self.transform {
            TransformModule::Oracle => oracle_transform(&self.domain, d_m),
            TransformModule::Learned(net) => net.view(d_m).map(DataView::Local),
        }
    }

    pub fn alu(&self, op: Op, view: &DataView) -> Result<(bool, DataChange)> {
        match (&self.alu, view) {
            (AluModule::Learned(net), DataView::Local(v)) => {
                let (c_a, change) = net.apply(op, v)?;
                Ok((c_a, DataChange::Local(change)))
            }
            _ => oracle_alu(&self.domain, op, view),
        }
    }

    pub fn output(&self, c_a: bool, change: &DataChange, d_m: &DataWord) -> Result<(bool, DataWord)> {
        match (&self.output, change) {
            (OutputModule::Learned(net), DataChange::Local(c)) => net.insert(c_a, c, d_m),
            _ => oracle_output(&self.domain, c_a, change, d_m),
        }
    }

    /// Transform_D, ALU and Output chained on one memory word.
    pub fn data_path(&self, d_m: &DataWord, op: Op) -> Result<(bool, bool, DataWord)> {
        let view = self.transform(d_m)?;
        let (c_a, change) = self.alu(op, &view)?;
        let (c_o, d_o) = self.output(c_a, &change, d_m)?;
        Ok((c_a, c_o, d_o))
    }
}
