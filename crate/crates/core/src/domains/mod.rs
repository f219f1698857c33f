//! Symbolic planning domains, their binary encodings and the BFS oracle.

mod manipulation;
mod oracle;
mod puzzle;
mod sokoban;

pub use manipulation::{Stacks, MANIPULATION_COLUMNS, MANIPULATION_HEIGHT, MANIPULATION_WIDTH};
pub use oracle::{
    bfs_tree, oracle_trace, sample_task, sample_task_min_steps, shortest_distance, trace_from_tree, SearchTree,
    TargetTrace, TaskInstance, TaskKind, TraceStep, TreeNode, DEFAULT_EXPANSION_CAP,
};
pub use puzzle::{PuzzleBoard, PUZZLE_WIDTH};
pub use sokoban::{Cell, CellPermutation, GridWorld, SokobanCodec};

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::word::DataWord;

pub const OP_COUNT: usize = 5;

/// An ALU operation index. Indices 0..4 are the four moves in the fixed order
/// (up, right, down, left), or the four stack positions in the manipulation
/// domain; index 4 is `nop`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Op(u8);

impl Op {
    pub const UP: Op = Op(0);
    pub const RIGHT: Op = Op(1);
    pub const DOWN: Op = Op(2);
    pub const LEFT: Op = Op(3);
    pub const NOP: Op = Op(4);
    pub const MOVES: [Op; 4] = [Op::UP, Op::RIGHT, Op::DOWN, Op::LEFT];

    pub fn from_index(i: usize) -> Result<Op> {
        if i < OP_COUNT {
            Ok(Op(i as u8))
        } else {
            Err(Error::Config(format!("operation index {i} out of range")))
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_nop(self) -> bool {
        self == Op::NOP
    }

    pub fn onehot(self) -> [f64; OP_COUNT] {
        let mut v = [0.0; OP_COUNT];
        v[self.index()] = 1.0;
        v
    }

    pub fn direction(self) -> Option<Direction> {
        Direction::ALL.get(self.index()).copied()
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = ["up", "right", "down", "left", "nop"][self.index()];
        f.write_str(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Right,
    Down,
    Left,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Up, Direction::Right, Direction::Down, Direction::Left];

    /// (row delta, column delta); rows grow downwards.
    pub fn delta(self) -> (isize, isize) {
        match self {
            Direction::Up => (-1, 0),
            Direction::Right => (0, 1),
            Direction::Down => (1, 0),
            Direction::Left => (0, -1),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn op(self) -> Op {
        Op(self as u8)
    }
}

/// A task domain together with its data-word encoding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    Sokoban(SokobanCodec),
    Puzzle,
    Manipulation,
}

impl Domain {
    pub fn sokoban(size: usize) -> Domain {
        Domain::Sokoban(SokobanCodec::new(size, size))
    }

    pub fn sokoban_remapped(size: usize, permutation: CellPermutation) -> Domain {
        Domain::Sokoban(SokobanCodec::new(size, size).remap(permutation))
    }

    pub fn name(&self) -> String {
        match self {
            Domain::Sokoban(c) if c.permutation.is_identity() => {
                format!("sokoban{}x{}", c.width, c.height)
            }
            Domain::Sokoban(c) => format!("sokoban{}x{}-{}", c.width, c.height, c.permutation),
            Domain::Puzzle => "puzzle3x3".into(),
            Domain::Manipulation => "manipulation".into(),
        }
    }

    pub fn word_width(&self) -> usize {
        match self {
            Domain::Sokoban(c) => c.word_width(),
            Domain::Puzzle => PUZZLE_WIDTH,
            Domain::Manipulation => MANIPULATION_WIDTH,
        }
    }

    pub fn validate(&self, word: &DataWord) -> Result<()> {
        match self {
            Domain::Sokoban(c) => c.decode(word).map(|_| ()),
            Domain::Puzzle => PuzzleBoard::decode(word).map(|_| ()),
            Domain::Manipulation => Stacks::decode(word).map(|_| ()),
        }
    }

    /// Deterministic successor; `nop` and blocked actions return the input.
    pub fn apply_action(&self, word: &DataWord, op: Op) -> Result<DataWord> {
        match self {
            Domain::Sokoban(c) => c.apply(word, op),
            Domain::Puzzle => Ok(PuzzleBoard::decode(word)?.apply(op).encode()),
            Domain::Manipulation => Ok(Stacks::decode(word)?.apply(op).encode()),
        }
    }

    pub fn sample_start<R: Rng + ?Sized>(&self, rng: &mut R) -> DataWord {
        match self {
            Domain::Sokoban(c) => c.encode(&GridWorld::sample(rng, c.width, c.height)).expect("sampled world is valid"),
            Domain::Puzzle => PuzzleBoard::sample(rng).encode(),
            Domain::Manipulation => Stacks::sample(rng).encode(),
        }
    }

    /// The operation that always undoes `op` when applied right after it.
    /// Sokoban moves have none because pushes are irreversible.
    pub fn inverse(&self, op: Op) -> Option<Op> {
        match (self, op.direction()) {
            (Domain::Puzzle, Some(d)) => Some(Direction::ALL[(d.index() + 2) % 4].op()),
            (Domain::Manipulation, Some(_)) => Some(op),
            _ => None,
        }
    }

    /// Whether some task can have this oracle level. A tree node whose path
    /// holds an operation followed by its inverse duplicates an earlier node,
    /// so expanding it never produces a new goal.
    pub fn level_feasible(&self, level: usize) -> bool {
        if level == 0 {
            return false;
        }
        let mut path = Vec::new();
        let mut node = level - 1;
        while node > 0 {
            path.push(Op::MOVES[(node - 1) % 4]);
            node = (node - 1) / 4;
        }
        path.reverse();
        !path.windows(2).any(|w| self.inverse(w[0]) == Some(w[1]))
    }

    pub fn feasible_levels(&self, max_level: usize) -> Vec<usize> {
        (1..=max_level).filter(|&l| self.level_feasible(l)).collect()
    }

    pub fn codec(&self) -> Option<&SokobanCodec> {
        match self {
            Domain::Sokoban(c) => Some(c),
            _ => None,
        }
    }

    /// Human-readable rendering of a word, for logs and trees.
    pub fn render(&self, word: &DataWord) -> String {
        match self {
            Domain::Sokoban(c) => c.decode(word).map(|w| w.to_string()).unwrap_or_else(|e| e.to_string()),
            Domain::Puzzle => PuzzleBoard::decode(word).map(|b| b.to_string()).unwrap_or_else(|e| e.to_string()),
            Domain::Manipulation => Stacks::decode(word).map(|s| s.to_string()).unwrap_or_else(|e| e.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn domains() -> Vec<Domain> {
        vec![
            Domain::sokoban(6),
            Domain::sokoban(8),
            Domain::sokoban_remapped(6, CellPermutation::swap(Cell::Agent, Cell::Wall)),
            Domain::Puzzle,
            Domain::Manipulation,
        ]
    }

    #[test]
    fn apply_action_is_total_and_nop_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for d in domains() {
            for _ in 0..500 {
                let mut w = d.sample_start(&mut rng);
                for _ in 0..6 {
                    let op = Op::from_index(rng.random_range(0..5)).unwrap();
                    let next = d.apply_action(&w, op).unwrap();
                    d.validate(&next).unwrap();
                    if op.is_nop() {
                        assert_eq!(next, w);
                    }
                    w = next;
                }
            }
        }
    }

    #[test]
    fn infeasible_levels() {
        assert_eq!(Domain::sokoban(6).feasible_levels(21), (1..=21).collect::<Vec<_>>());
        let puzzle: Vec<usize> = (1..=21).filter(|&l| !Domain::Puzzle.level_feasible(l)).collect();
        assert_eq!(puzzle, vec![8, 13, 14, 19]);
        let manip: Vec<usize> = (1..=21).filter(|&l| !Domain::Manipulation.level_feasible(l)).collect();
        assert_eq!(manip, vec![6, 11, 16, 21]);
    }

    #[test]
    fn word_widths() {
        assert_eq!(Domain::sokoban(6).word_width(), 144);
        assert_eq!(Domain::sokoban(8).word_width(), 256);
        assert_eq!(Domain::Puzzle.word_width(), 36);
        assert_eq!(Domain::Manipulation.word_width(), 52);
    }

    #[test]
    fn domain_serializes_with_codec() {
        let d = Domain::sokoban_remapped(6, CellPermutation::swap(Cell::Agent, Cell::Wall));
        let json = serde_json::to_string(&d).unwrap();
        let back: Domain = serde_json::from_str(&json).unwrap();
        assert_eq!(back, d);
    }
}
