use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;

use super::sokoban::offset;
use super::Op;
use crate::error::{Error, Result};
use crate::word::DataWord;

const SIDE: usize = 3;
const CELLS: usize = SIDE * SIDE;
const TILE_BITS: usize = 4;
pub const PUZZLE_WIDTH: usize = CELLS * TILE_BITS;

/// A 3x3 sliding puzzle. Tile 0 is the blank. Each cell holds a 4-bit tile
/// id, least significant bit first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PuzzleBoard {
    tiles: [u8; CELLS],
}

impl PuzzleBoard {
    pub fn new(tiles: [u8; CELLS]) -> Result<Self> {
        let mut seen = [false; CELLS];
        for &t in &tiles {
            let t = t as usize;
            if t >= CELLS || seen[t] {
                return Err(Error::InvalidWorld(format!("tiles {tiles:?} are not a permutation of 0..9")));
            }
            seen[t] = true;
        }
        Ok(PuzzleBoard { tiles })
    }

    pub fn solved() -> Self {
        PuzzleBoard { tiles: [1, 2, 3, 4, 5, 6, 7, 8, 0] }
    }

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut tiles = [0, 1, 2, 3, 4, 5, 6, 7, 8];
        tiles.shuffle(rng);
        PuzzleBoard { tiles }
    }

    pub fn tiles(&self) -> &[u8; CELLS] {
        &self.tiles
    }

    pub fn blank(&self) -> (usize, usize) {
        let i = self.tiles.iter().position(|&t| t == 0).expect("valid board has a blank");
        (i / SIDE, i % SIDE)
    }

    /// Slides the tile on the blank's `op` side into the blank.
    pub fn apply(&self, op: Op) -> PuzzleBoard {
        let Some(dir) = op.direction() else {
            return *self;
        };
        let blank = self.blank();
        match offset(SIDE, SIDE, blank, dir, 1) {
            Some(n) => {
                let mut next = *self;
                next.tiles.swap(blank.0 * SIDE + blank.1, n.0 * SIDE + n.1);
                next
            }
            None => *self,
        }
    }

    pub fn encode(&self) -> DataWord {
        let mut word = DataWord::zeros(PUZZLE_WIDTH);
        for (i, &t) in self.tiles.iter().enumerate() {
            for b in 0..TILE_BITS {
                word.set(i * TILE_BITS + b, (t >> b) & 1 == 1);
            }
        }
        word
    }

    pub fn decode(word: &DataWord) -> Result<Self> {
        word.ensure_len(PUZZLE_WIDTH)?;
        let mut tiles = [0u8; CELLS];
        for (i, t) in tiles.iter_mut().enumerate() {
            for b in 0..TILE_BITS {
                if word.get(i * TILE_BITS + b) {
                    *t |= 1 << b;
                }
            }
        }
        PuzzleBoard::new(tiles).map_err(|e| Error::MalformedWord(e.to_string()))
    }
}

impl fmt::Display for PuzzleBoard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in 0..SIDE {
            if r > 0 {
                writeln!(f)?;
            }
            for c in 0..SIDE {
                match self.tiles[r * SIDE + c] {
                    0 => write!(f, "_")?,
                    t => write!(f, "{t}")?,
                }
            }
        }
        Ok(())
    }
}
