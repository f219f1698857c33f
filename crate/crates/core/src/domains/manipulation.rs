use std::fmt;

use rand::Rng;

use super::Op;
use crate::error::{Error, Result};
use crate::word::DataWord;

pub const MANIPULATION_COLUMNS: usize = 4;
pub const MANIPULATION_HEIGHT: usize = 3;
const CODES: usize = 4;
const CLASSES: u8 = 3;
const GRID_BITS: usize = MANIPULATION_COLUMNS * MANIPULATION_HEIGHT * CODES;
pub const MANIPULATION_WIDTH: usize = GRID_BITS + CODES;

/// Four stacks of at most three objects and a gripper holding at most one.
/// Objects carry a class in 1..=3; 0 marks an empty slot.
///
/// Encoding: cell (level, column) occupies the one-hot group at
/// `4 * (level * 4 + column)` with level 0 at the bottom; the gripper is the
/// final group.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Stacks {
    columns: [Vec<u8>; MANIPULATION_COLUMNS],
    gripper: u8,
}

impl Stacks {
    pub fn new(columns: [Vec<u8>; MANIPULATION_COLUMNS], gripper: u8) -> Result<Self> {
        for col in &columns {
            if col.len() > MANIPULATION_HEIGHT {
                return Err(Error::InvalidWorld(format!("stack of height {}", col.len())));
            }
            if col.iter().any(|&o| o == 0 || o > CLASSES) {
                return Err(Error::InvalidWorld(format!("bad object class in {col:?}")));
            }
        }
        if gripper > CLASSES {
            return Err(Error::InvalidWorld(format!("bad gripper class {gripper}")));
        }
        Ok(Stacks { columns, gripper })
    }

    /// One to six objects of random class dropped on random non-full stacks,
    /// gripper empty.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut columns: [Vec<u8>; MANIPULATION_COLUMNS] = Default::default();
        let objects = rng.random_range(1..=6);
        for _ in 0..objects {
            let open: Vec<usize> =
                (0..MANIPULATION_COLUMNS).filter(|&c| columns[c].len() < MANIPULATION_HEIGHT).collect();
            let col = open[rng.random_range(0..open.len())];
            columns[col].push(rng.random_range(1..=CLASSES));
        }
        Stacks { columns, gripper: 0 }
    }

    pub fn column(&self, c: usize) -> &[u8] {
        &self.columns[c]
    }

    pub fn gripper(&self) -> u8 {
        self.gripper
    }

    /// Operation `p` picks the top object of stack `p` into an empty gripper
    /// or places the held object on stack `p`. Empty or full stacks block.
    pub fn apply(&self, op: Op) -> Stacks {
        let p = op.index();
        if p >= MANIPULATION_COLUMNS {
            return self.clone();
        }
        let mut next = self.clone();
        if self.gripper == 0 {
            if let Some(top) = next.columns[p].pop() {
                next.gripper = top;
            }
        } else if self.columns[p].len() < MANIPULATION_HEIGHT {
            next.columns[p].push(self.gripper);
            next.gripper = 0;
        }
        next
    }

    pub fn encode(&self) -> DataWord {
        let mut word = DataWord::zeros(MANIPULATION_WIDTH);
        for level in 0..MANIPULATION_HEIGHT {
            for (c, col) in self.columns.iter().enumerate() {
                let code = col.get(level).copied().unwrap_or(0) as usize;
                word.set(CODES * (level * MANIPULATION_COLUMNS + c) + code, true);
            }
        }
        word.set(GRID_BITS + self.gripper as usize, true);
        word
    }

    pub fn decode(word: &DataWord) -> Result<Self> {
        word.ensure_len(MANIPULATION_WIDTH)?;
        let group = |base: usize| -> Result<u8> {
            let set: Vec<usize> = (0..CODES).filter(|&k| word.get(base + k)).collect();
            match set.as_slice() {
                [k] => Ok(*k as u8),
                _ => Err(Error::MalformedWord(format!("group at bit {base} is not one-hot"))),
            }
        };
        let mut columns: [Vec<u8>; MANIPULATION_COLUMNS] = Default::default();
        for (c, col) in columns.iter_mut().enumerate() {
            let mut floating = false;
            for level in 0..MANIPULATION_HEIGHT {
                let code = group(CODES * (level * MANIPULATION_COLUMNS + c))?;
                if code == 0 {
                    floating = true;
                } else if floating {
                    return Err(Error::MalformedWord(format!("object floating above a gap in stack {c}")));
                } else {
                    col.push(code);
                }
            }
        }
        let gripper = group(GRID_BITS)?;
        Ok(Stacks { columns, gripper })
    }
}

impl fmt::Display for Stacks {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "gripper:{}", self.gripper)?;
        for level in (0..MANIPULATION_HEIGHT).rev() {
            writeln!(f)?;
            for col in &self.columns {
                match col.get(level) {
                    Some(o) => write!(f, "{o}")?,
                    None => write!(f, ".")?,
                }
            }
        }
        Ok(())
    }
}
