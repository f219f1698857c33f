use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Direction, Op};
use crate::error::{Error, Result};
use crate::word::DataWord;

pub const CELL_CODES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cell {
    Empty = 0,
    Wall = 1,
    Box = 2,
    Agent = 3,
}

impl Cell {
    pub const ALL: [Cell; CELL_CODES] = [Cell::Empty, Cell::Wall, Cell::Box, Cell::Agent];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Result<Cell> {
        Cell::ALL.get(code).copied().ok_or_else(|| Error::MalformedWord(format!("cell code {code} out of range")))
    }

    fn symbol(self) -> char {
        match self {
            Cell::Empty => '.',
            Cell::Wall => '#',
            Cell::Box => '$',
            Cell::Agent => '@',
        }
    }

    fn from_symbol(c: char) -> Result<Cell> {
        match c {
            '.' | ' ' => Ok(Cell::Empty),
            '#' => Ok(Cell::Wall),
            '$' => Ok(Cell::Box),
            '@' => Ok(Cell::Agent),
            other => Err(Error::InvalidWorld(format!("unknown cell symbol {other:?}"))),
        }
    }
}

/// Maps each cell code to the one-hot slot it occupies in the encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[u8; CELL_CODES]", into = "[u8; CELL_CODES]")]
pub struct CellPermutation {
    slots: [u8; CELL_CODES],
    inverse: [u8; CELL_CODES],
}

impl CellPermutation {
    pub fn identity() -> Self {
        Self::new([0, 1, 2, 3]).expect("identity is a bijection")
    }

    pub fn new(slots: [u8; CELL_CODES]) -> Result<Self> {
        let mut inverse = [u8::MAX; CELL_CODES];
        for (code, &slot) in slots.iter().enumerate() {
            let s = slot as usize;
            if s >= CELL_CODES || inverse[s] != u8::MAX {
                return Err(Error::Config(format!("cell permutation {slots:?} is not a bijection")));
            }
            inverse[s] = code as u8;
        }
        Ok(CellPermutation { slots, inverse })
    }

    /// Exchanges the slots of two cell kinds.
    pub fn swap(a: Cell, b: Cell) -> Self {
        let mut slots = [0, 1, 2, 3];
        slots.swap(a.code(), b.code());
        Self::new(slots).expect("a transposition is a bijection")
    }

    pub fn is_identity(&self) -> bool {
        self.slots == [0, 1, 2, 3]
    }

    pub fn slot(&self, cell: Cell) -> usize {
        self.slots[cell.code()] as usize
    }

    pub fn cell(&self, slot: usize) -> Cell {
        Cell::ALL[self.inverse[slot] as usize]
    }

    /// Applies `other` after `self`.
    pub fn then(&self, other: &CellPermutation) -> CellPermutation {
        let mut slots = [0; CELL_CODES];
        for (code, s) in slots.iter_mut().enumerate() {
            *s = other.slots[self.slots[code] as usize];
        }
        CellPermutation::new(slots).expect("composition of bijections")
    }
}

impl Default for CellPermutation {
    fn default() -> Self {
        Self::identity()
    }
}

impl TryFrom<[u8; CELL_CODES]> for CellPermutation {
    type Error = Error;

    fn try_from(slots: [u8; CELL_CODES]) -> Result<Self> {
        Self::new(slots)
    }
}

impl From<CellPermutation> for [u8; CELL_CODES] {
    fn from(p: CellPermutation) -> Self {
        p.slots
    }
}

impl fmt::Display for CellPermutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in self.slots {
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

impl std::str::FromStr for CellPermutation {
    type Err = Error;

    /// Parses four slot digits, e.g. `"0321"` for the agent/wall swap.
    fn from_str(s: &str) -> Result<Self> {
        let digits: Vec<u8> = s
            .chars()
            .map(|c| c.to_digit(10).map(|d| d as u8))
            .collect::<Option<_>>()
            .ok_or_else(|| Error::Config(format!("bad permutation {s:?}")))?;
        let slots: [u8; CELL_CODES] =
            digits.try_into().map_err(|_| Error::Config(format!("permutation {s:?} needs four digits")))?;
        Self::new(slots)
    }
}

/// A Sokoban room. Rows grow downwards.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GridWorld {
    width: usize,
    height: usize,
    cells: Vec<Cell>,
}

impl GridWorld {
    /// An empty room enclosed by walls with the agent at `agent`.
    pub fn empty_room(width: usize, height: usize, agent: (usize, usize)) -> Result<Self> {
        let mut cells = vec![Cell::Empty; width * height];
        for r in 0..height {
            for c in 0..width {
                if r == 0 || c == 0 || r + 1 == height || c + 1 == width {
                    cells[r * width + c] = Cell::Wall;
                }
            }
        }
        let mut world = GridWorld { width, height, cells };
        world.set(agent.0, agent.1, Cell::Agent);
        world.validate()?;
        Ok(world)
    }

    pub fn from_cells(width: usize, height: usize, cells: Vec<Cell>) -> Result<Self> {
        if cells.len() != width * height {
            return Err(Error::InvalidWorld(format!("{} cells for a {width}x{height} grid", cells.len())));
        }
        let world = GridWorld { width, height, cells };
        world.validate()?;
        Ok(world)
    }

    /// Parses one text line per row using `.#$@`.
    pub fn parse(text: &str) -> Result<Self> {
        let rows: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.chars().count());
        let mut cells = Vec::with_capacity(width * height);
        for row in &rows {
            if row.chars().count() != width {
                return Err(Error::InvalidWorld("ragged rows".into()));
            }
            for ch in row.chars() {
                cells.push(Cell::from_symbol(ch)?);
            }
        }
        Self::from_cells(width, height, cells)
    }

    /// Random room: inner walls uniform in [0, 2], boxes uniform in [1, 5],
    /// positions and the agent uniform over the remaining interior cells.
    /// Counts are clipped on rooms too small to hold them.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, width: usize, height: usize) -> Self {
        assert!(width >= 3 && height >= 3, "room needs an interior");
        let mut world = GridWorld::empty_room(width, height, (1, 1)).expect("valid empty room");
        world.set(1, 1, Cell::Empty);
        let mut interior: Vec<usize> =
            (1..height - 1).flat_map(|r| (1..width - 1).map(move |c| r * width + c)).collect();
        interior.shuffle(rng);
        let walls = rng.random_range(0..=2usize).min(interior.len() - 1);
        let boxes = rng.random_range(1..=5usize).min(interior.len() - 1 - walls);
        let mut slots = interior.into_iter();
        for _ in 0..walls {
            world.cells[slots.next().expect("room has space")] = Cell::Wall;
        }
        for _ in 0..boxes {
            world.cells[slots.next().expect("room has space")] = Cell::Box;
        }
        world.cells[slots.next().expect("room has space")] = Cell::Agent;
        world
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn get(&self, row: usize, col: usize) -> Cell {
        self.cells[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, cell: Cell) {
        self.cells[row * self.width + col] = cell;
    }

    pub fn count(&self, cell: Cell) -> usize {
        self.cells.iter().filter(|&&c| c == cell).count()
    }

    /// Cell at `(row, col)` shifted by `steps` in `dir`; `None` off the grid.
    pub fn offset(&self, pos: (usize, usize), dir: Direction, steps: isize) -> Option<(usize, usize)> {
        offset(self.width, self.height, pos, dir, steps)
    }

    pub fn agent(&self) -> (usize, usize) {
        let i = self.cells.iter().position(|&c| c == Cell::Agent).expect("validated world has an agent");
        (i / self.width, i % self.width)
    }

    pub fn validate(&self) -> Result<()> {
        let agents = self.count(Cell::Agent);
        if agents != 1 {
            return Err(Error::InvalidWorld(format!("expected one agent, found {agents}")));
        }
        for r in 0..self.height {
            for c in 0..self.width {
                let border = r == 0 || c == 0 || r + 1 == self.height || c + 1 == self.width;
                if border && self.get(r, c) != Cell::Wall {
                    return Err(Error::InvalidWorld(format!("boundary cell ({r}, {c}) is not a wall")));
                }
            }
        }
        Ok(())
    }

    /// Moves the agent one cell, pushing a box onto empty space if needed.
    /// Blocked moves leave the world unchanged.
    pub fn step(&self, dir: Direction) -> GridWorld {
        let agent = self.agent();
        let mut next = self.clone();
        let Some(target) = self.offset(agent, dir, 1) else {
            return next;
        };
        match self.get(target.0, target.1) {
            Cell::Empty => {
                next.set(agent.0, agent.1, Cell::Empty);
                next.set(target.0, target.1, Cell::Agent);
            }
            Cell::Box => {
                if let Some(beyond) = self.offset(agent, dir, 2) {
                    if self.get(beyond.0, beyond.1) == Cell::Empty {
                        next.set(agent.0, agent.1, Cell::Empty);
                        next.set(target.0, target.1, Cell::Agent);
                        next.set(beyond.0, beyond.1, Cell::Box);
                    }
                }
            }
            Cell::Wall | Cell::Agent => {}
        }
        next
    }
}

pub(crate) fn offset(
    width: usize,
    height: usize,
    pos: (usize, usize),
    dir: Direction,
    steps: isize,
) -> Option<(usize, usize)> {
    let (dr, dc) = dir.delta();
    let r = pos.0 as isize + dr * steps;
    let c = pos.1 as isize + dc * steps;
    (r >= 0 && c >= 0 && (r as usize) < height && (c as usize) < width).then_some((r as usize, c as usize))
}

impl fmt::Display for GridWorld {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in 0..self.height {
            if r > 0 {
                writeln!(f)?;
            }
            for c in 0..self.width {
                write!(f, "{}", self.get(r, c).symbol())?;
            }
        }
        Ok(())
    }
}

/// One-hot per-position encoding of Sokoban rooms. Bit `4 * cell + slot` is
/// set, where `slot` comes from the cell permutation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SokobanCodec {
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub permutation: CellPermutation,
}

impl SokobanCodec {
    pub fn new(width: usize, height: usize) -> Self {
        SokobanCodec { width, height, permutation: CellPermutation::identity() }
    }

    /// Same rooms under a permuted one-hot assignment, composed with any
    /// permutation already in place.
    pub fn remap(&self, permutation: CellPermutation) -> Self {
        SokobanCodec { permutation: self.permutation.then(&permutation), ..*self }
    }

    pub fn word_width(&self) -> usize {
        self.width * self.height * CELL_CODES
    }

    pub fn cell_count(&self) -> usize {
        self.width * self.height
    }

    pub fn encode(&self, world: &GridWorld) -> Result<DataWord> {
        if world.width != self.width || world.height != self.height {
            return Err(Error::InvalidWorld(format!(
                "{}x{} world for a {}x{} codec",
                world.width, world.height, self.width, self.height
            )));
        }
        let mut word = DataWord::zeros(self.word_width());
        for (i, &cell) in world.cells.iter().enumerate() {
            word.set(i * CELL_CODES + self.permutation.slot(cell), true);
        }
        Ok(word)
    }

    pub fn decode(&self, word: &DataWord) -> Result<GridWorld> {
        word.ensure_len(self.word_width())?;
        let cells = (0..self.cell_count()).map(|i| self.cell_at(word, i)).collect::<Result<Vec<_>>>()?;
        GridWorld::from_cells(self.width, self.height, cells)
    }

    /// Decodes one cell group, rejecting anything but a single set bit.
    pub fn cell_at(&self, word: &DataWord, index: usize) -> Result<Cell> {
        let base = index * CELL_CODES;
        let mut found = None;
        for slot in 0..CELL_CODES {
            if word.get(base + slot) {
                if found.is_some() {
                    return Err(Error::MalformedWord(format!("cell {index} has several bits set")));
                }
                found = Some(slot);
            }
        }
        found
            .map(|s| self.permutation.cell(s))
            .ok_or_else(|| Error::MalformedWord(format!("cell {index} has no bit set")))
    }

    pub fn write_cell(&self, word: &mut DataWord, index: usize, cell: Cell) {
        let base = index * CELL_CODES;
        for slot in 0..CELL_CODES {
            word.set(base + slot, false);
        }
        word.set(base + self.permutation.slot(cell), true);
    }

    /// One-hot reals for a cell under this codec.
    pub fn cell_reals(&self, cell: Cell) -> [f64; CELL_CODES] {
        let mut v = [0.0; CELL_CODES];
        v[self.permutation.slot(cell)] = 1.0;
        v
    }

    /// Position of the single agent, scanning only the agent slot.
    pub fn agent_position(&self, word: &DataWord) -> Result<(usize, usize)> {
        word.ensure_len(self.word_width())?;
        let slot = self.permutation.slot(Cell::Agent);
        let mut found = None;
        for i in 0..self.cell_count() {
            if word.get(i * CELL_CODES + slot) {
                if found.is_some() {
                    return Err(Error::InvalidWorld("several agents".into()));
                }
                found = Some(i);
            }
        }
        found.map(|i| (i / self.width, i % self.width)).ok_or_else(|| Error::InvalidWorld("no agent".into()))
    }

    pub fn offset(&self, pos: (usize, usize), dir: Direction, steps: isize) -> Option<(usize, usize)> {
        offset(self.width, self.height, pos, dir, steps)
    }

    pub fn index(&self, pos: (usize, usize)) -> usize {
        pos.0 * self.width + pos.1
    }

    pub fn apply(&self, word: &DataWord, op: Op) -> Result<DataWord> {
        let world = self.decode(word)?;
        match op.direction() {
            Some(dir) => self.encode(&world.step(dir)),
            None => Ok(word.clone()),
        }
    }
}
