use std::collections::{HashSet, VecDeque};
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Domain, Op};
use crate::error::{Error, Result};
use crate::word::DataWord;

/// Expansion cap used when no level is known in advance.
pub const DEFAULT_EXPANSION_CAP: usize = 200_000;
const SAMPLE_ATTEMPTS: usize = 200_000;
const MAX_WALK: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Search,
    Plan,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub domain: Domain,
    pub start: DataWord,
    pub goal: DataWord,
    pub level: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub word: DataWord,
    pub op: Op,
}

/// Expected (read word, operation) pairs for one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetTrace {
    pub kind: TaskKind,
    pub level: usize,
    pub explore: Vec<TraceStep>,
    /// Search tasks: the single `nop` expected right after exploration.
    /// Plan tasks: the parent chain from goal to start, all `nop`.
    pub finish: Vec<TraceStep>,
}

impl TargetTrace {
    pub fn t_e(&self) -> usize {
        self.explore.len()
    }

    /// Backtrack length; zero for search tasks.
    pub fn t_b(&self) -> usize {
        match self.kind {
            TaskKind::Search => 0,
            TaskKind::Plan => self.finish.len(),
        }
    }

    pub fn total_steps(&self) -> usize {
        self.explore.len() + self.finish.len()
    }

    pub fn steps(&self) -> impl Iterator<Item = &TraceStep> {
        self.explore.iter().chain(&self.finish)
    }

    pub fn step(&self, t: usize) -> Option<&TraceStep> {
        if t < self.explore.len() {
            self.explore.get(t)
        } else {
            self.finish.get(t - self.explore.len())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeNode {
    pub word: DataWord,
    pub parent: Option<usize>,
    pub op: Option<Op>,
}

/// Breadth-first search tree without duplicate elimination. Node `4k + j + 1`
/// is the result of operation `j` on node `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchTree {
    pub nodes: Vec<TreeNode>,
    pub goal: usize,
    pub level: usize,
}

impl SearchTree {
    /// Node indices from the goal back to the root.
    pub fn path_to_root(&self) -> Vec<usize> {
        let mut path = vec![self.goal];
        let mut at = self.goal;
        while let Some(p) = self.nodes[at].parent {
            path.push(p);
            at = p;
        }
        path
    }

    pub fn depth(&self) -> usize {
        self.path_to_root().len() - 1
    }

    /// Graphviz rendering with domain-specific node labels.
    pub fn to_dot(&self, domain: &Domain) -> String {
        let on_path: HashSet<usize> = self.path_to_root().into_iter().collect();
        let mut out = String::from("digraph search_tree {\n  node [shape=box, fontname=monospace];\n");
        for (i, node) in self.nodes.iter().enumerate() {
            let label = domain.render(&node.word).replace('\n', "\\n");
            let style = if i == self.goal {
                ", style=filled, fillcolor=palegreen"
            } else if on_path.contains(&i) {
                ", style=filled, fillcolor=lightblue"
            } else {
                ""
            };
            let _ = writeln!(out, "  n{i} [label=\"s{i}\\n{label}\"{style}];");
            if let (Some(p), Some(op)) = (node.parent, node.op) {
                let _ = writeln!(out, "  n{p} -> n{i} [label=\"{op}\"];");
            }
        }
        out.push_str("}\n");
        out
    }
}

/// FIFO expansion in the fixed operation order until `goal` is produced.
/// Blocked moves still enqueue their unchanged result.
pub fn bfs_tree(domain: &Domain, start: &DataWord, goal: &DataWord, max_expanded: usize) -> Result<SearchTree> {
    domain.validate(start)?;
    goal.ensure_len(domain.word_width())?;
    if start == goal {
        return Err(Error::Config("goal equals start; level is undefined".into()));
    }
    let mut nodes = vec![TreeNode { word: start.clone(), parent: None, op: None }];
    for k in 0..max_expanded {
        for op in Op::MOVES {
            let child = domain.apply_action(&nodes[k].word, op)?;
            let found = &child == goal;
            nodes.push(TreeNode { word: child, parent: Some(k), op: Some(op) });
            if found {
                let goal = nodes.len() - 1;
                return Ok(SearchTree { nodes, goal, level: k + 1 });
            }
        }
    }
    Err(Error::Unreachable(max_expanded))
}

pub fn trace_from_tree(tree: &SearchTree, kind: TaskKind) -> TargetTrace {
    let explore =
        (0..tree.goal).map(|t| TraceStep { word: tree.nodes[t / 4].word.clone(), op: Op::MOVES[t % 4] }).collect();
    let finish = match kind {
        TaskKind::Search => vec![TraceStep { word: tree.nodes[tree.goal].word.clone(), op: Op::NOP }],
        TaskKind::Plan => tree
            .path_to_root()
            .into_iter()
            .map(|i| TraceStep { word: tree.nodes[i].word.clone(), op: Op::NOP })
            .collect(),
    };
    TargetTrace { kind, level: tree.level, explore, finish }
}

pub fn oracle_trace(task: &TaskInstance, kind: TaskKind) -> Result<TargetTrace> {
    let cap = DEFAULT_EXPANSION_CAP.max(task.level);
    let tree = bfs_tree(&task.domain, &task.start, &task.goal, cap)?;
    Ok(trace_from_tree(&tree, kind))
}

/// Length of the shortest action sequence from `start` to `goal`, searched
/// with duplicate elimination up to `max_depth`.
pub fn shortest_distance(
    domain: &Domain,
    start: &DataWord,
    goal: &DataWord,
    max_depth: usize,
) -> Result<Option<usize>> {
    if start == goal {
        return Ok(Some(0));
    }
    let mut seen: HashSet<DataWord> = HashSet::from([start.clone()]);
    let mut queue = VecDeque::from([(start.clone(), 0usize)]);
    while let Some((word, depth)) = queue.pop_front() {
        if depth == max_depth {
            continue;
        }
        for op in Op::MOVES {
            let next = domain.apply_action(&word, op)?;
            if &next == goal {
                return Ok(Some(depth + 1));
            }
            if seen.insert(next.clone()) {
                queue.push_back((next, depth + 1));
            }
        }
    }
    Ok(None)
}

fn random_walk<R: Rng + ?Sized>(domain: &Domain, rng: &mut R, start: &DataWord, len: usize) -> Result<DataWord> {
    let mut word = start.clone();
    for _ in 0..len {
        word = domain.apply_action(&word, Op::MOVES[rng.random_range(0..4)])?;
    }
    Ok(word)
}

/// Rejection-samples a task whose oracle level equals `level`: random start,
/// random walk of 1 to 12 moves for the goal, accepted on an exact level match.
pub fn sample_task<R: Rng + ?Sized>(rng: &mut R, domain: &Domain, level: usize) -> Result<TaskInstance> {
    if level == 0 {
        return Err(Error::Config("level must be at least 1".into()));
    }
    if !domain.level_feasible(level) {
        return Err(Error::Sampling { level, attempts: 0 });
    }
    for _ in 0..SAMPLE_ATTEMPTS {
        let start = domain.sample_start(rng);
        let walk = rng.random_range(1..=MAX_WALK);
        let goal = random_walk(domain, rng, &start, walk)?;
        if goal == start {
            continue;
        }
        match bfs_tree(domain, &start, &goal, level) {
            Ok(tree) if tree.level == level => {
                return Ok(TaskInstance { domain: domain.clone(), start, goal, level });
            }
            Ok(_) | Err(Error::Unreachable(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Sampling { level, attempts: SAMPLE_ATTEMPTS })
}

/// Samples a task whose oracle trace of `kind` has at least `min_steps`
/// steps. The goal is placed at the smallest tree depth able to produce such
/// a trace, at exactly that shortest distance from the start.
pub fn sample_task_min_steps<R: Rng + ?Sized>(
    rng: &mut R,
    domain: &Domain,
    kind: TaskKind,
    min_steps: usize,
    attempts: usize,
) -> Result<(TaskInstance, TargetTrace)> {
    // Nodes at depth <= d number (4^(d+1) - 1) / 3.
    let mut depth = 1;
    while (4usize.pow(depth as u32 + 1) - 1) / 3 < min_steps {
        depth += 1;
    }
    for _ in 0..attempts {
        let start = domain.sample_start(rng);
        let walk = rng.random_range(depth..=3 * depth);
        let goal = random_walk(domain, rng, &start, walk)?;
        if shortest_distance(domain, &start, &goal, depth)? != Some(depth) {
            continue;
        }
        let tree = bfs_tree(domain, &start, &goal, usize::MAX)?;
        let trace = trace_from_tree(&tree, kind);
        if trace.total_steps() >= min_steps {
            let task = TaskInstance { domain: domain.clone(), start, goal, level: tree.level };
            return Ok((task, trace));
        }
    }
    Err(Error::Sampling { level: min_steps, attempts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::{Cell, CellPermutation, GridWorld};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn room(text: &str) -> DataWord {
        let w = GridWorld::parse(text).unwrap();
        Domain::sokoban(w.width()).codec().unwrap().encode(&w).unwrap()
    }

    const OPEN: &str = "######\n#....#\n#.@..#\n#....#\n#....#\n######";

    #[test]
    fn level_one_goal_is_a_direct_successor() {
        let d = Domain::sokoban(6);
        let start = room(OPEN);
        let goal = d.apply_action(&start, Op::RIGHT).unwrap();
        let tree = bfs_tree(&d, &start, &goal, 10).unwrap();
        assert_eq!(tree.level, 1);
        assert_eq!(tree.goal, 2);
        let search = trace_from_tree(&tree, TaskKind::Search);
        assert_eq!(search.t_e(), 2);
        assert_eq!(search.total_steps(), 3);
        assert_eq!(search.t_b(), 0);
        let plan = trace_from_tree(&tree, TaskKind::Plan);
        assert_eq!(plan.finish.iter().map(|s| &s.word).collect::<Vec<_>>(), vec![&goal, &start]);
    }

    #[test]
    fn level_three_from_second_node() {
        let d = Domain::sokoban(6);
        let start = room(OPEN);
        let right = d.apply_action(&start, Op::RIGHT).unwrap();
        let goal = d.apply_action(&right, Op::DOWN).unwrap();
        let tree = bfs_tree(&d, &start, &goal, 100).unwrap();
        assert_eq!(tree.level, 3);
        assert_eq!(tree.goal, 11);
    }

    #[test]
    fn level_three_longest_traces() {
        // Pushing the box right and stepping back left leaves a new state
        // produced by the last operation on node 2.
        let d = Domain::sokoban(6);
        let start = room("######\n#@$..#\n#....#\n#....#\n#....#\n######");
        let pushed = d.apply_action(&start, Op::RIGHT).unwrap();
        let goal = d.apply_action(&pushed, Op::LEFT).unwrap();
        let tree = bfs_tree(&d, &start, &goal, 100).unwrap();
        assert_eq!(tree.level, 3);
        assert_eq!(trace_from_tree(&tree, TaskKind::Search).total_steps(), 13);
        assert_eq!(trace_from_tree(&tree, TaskKind::Plan).total_steps(), 15);
    }

    #[test]
    fn blocked_moves_are_enqueued() {
        let d = Domain::sokoban(6);
        let start = room("######\n#@...#\n#....#\n#....#\n#....#\n######");
        let goal = d.apply_action(&start, Op::DOWN).unwrap();
        let tree = bfs_tree(&d, &start, &goal, 10).unwrap();
        // Up is blocked: node 1 duplicates the root.
        assert_eq!(tree.nodes[1].word, start);
        assert_eq!(tree.goal, 3);
    }

    #[test]
    fn unreachable_and_degenerate() {
        let d = Domain::sokoban(6);
        let start = room(OPEN);
        let far = room("######\n#....#\n#....#\n#....#\n#...@#\n######");
        assert!(matches!(bfs_tree(&d, &start, &far, 3), Err(Error::Unreachable(3))));
        assert!(bfs_tree(&d, &start, &start, 3).is_err());
    }

    #[test]
    fn sampled_levels_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = Domain::sokoban(6);
        for level in [1, 2, 5, 13, 21] {
            for _ in 0..20 {
                let task = sample_task(&mut rng, &d, level).unwrap();
                let trace = oracle_trace(&task, TaskKind::Search).unwrap();
                assert_eq!(trace.level, level);
                assert!(trace.t_e() <= 4 * level && trace.t_e() > 4 * (level - 1));
            }
        }
    }

    #[test]
    fn backtrack_is_a_valid_action_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for d in [Domain::sokoban(6), Domain::Puzzle, Domain::Manipulation] {
            for level in d.feasible_levels(21) {
                let task = sample_task(&mut rng, &d, level).unwrap();
                let trace = oracle_trace(&task, TaskKind::Plan).unwrap();
                assert_eq!(trace.finish.first().unwrap().word, task.goal);
                assert_eq!(trace.finish.last().unwrap().word, task.start);
                for pair in trace.finish.windows(2) {
                    let (child, parent) = (&pair[0].word, &pair[1].word);
                    assert!(Op::MOVES.iter().any(|&op| &d.apply_action(parent, op).unwrap() == child));
                }
            }
        }
    }

    #[test]
    fn remapped_trace_has_identical_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let base = Domain::sokoban(6);
        let remapped = Domain::sokoban_remapped(6, CellPermutation::swap(Cell::Agent, Cell::Wall));
        let (bc, rc) = (base.codec().unwrap(), remapped.codec().unwrap());
        for level in [2, 7, 15] {
            let task = sample_task(&mut rng, &base, level).unwrap();
            let convert = |w: &DataWord| rc.encode(&bc.decode(w).unwrap()).unwrap();
            let moved = TaskInstance {
                domain: remapped.clone(),
                start: convert(&task.start),
                goal: convert(&task.goal),
                level,
            };
            let a = oracle_trace(&task, TaskKind::Plan).unwrap();
            let b = oracle_trace(&moved, TaskKind::Plan).unwrap();
            assert_eq!(a.total_steps(), b.total_steps());
            for (x, y) in a.steps().zip(b.steps()) {
                assert_eq!(x.op, y.op);
                assert_eq!(bc.decode(&x.word).unwrap(), rc.decode(&y.word).unwrap());
            }
        }
    }

    #[test]
    fn trace_json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let task = sample_task(&mut rng, &Domain::sokoban(6), 4).unwrap();
        let trace = oracle_trace(&task, TaskKind::Plan).unwrap();
        let json = serde_json::to_string(&(&task, &trace)).unwrap();
        let (t2, tr2): (TaskInstance, TargetTrace) = serde_json::from_str(&json).unwrap();
        assert_eq!(t2, task);
        assert_eq!(tr2, trace);
    }

    #[test]
    fn dot_output_marks_goal() {
        let d = Domain::sokoban(6);
        let start = room(OPEN);
        let goal = d.apply_action(&start, Op::DOWN).unwrap();
        let dot = bfs_tree(&d, &start, &goal, 5).unwrap().to_dot(&d);
        assert!(dot.starts_with("digraph"));
        assert!(dot.contains("n0 -> n3 [label=\"down\"]"));
        assert!(dot.contains("palegreen"));
    }

    #[test]
    fn shortest_distance_dedups() {
        let d = Domain::sokoban(6);
        let start = room(OPEN);
        let far = room("######\n#....#\n#....#\n#....#\n#...@#\n######");
        assert_eq!(shortest_distance(&d, &start, &far, 10).unwrap(), Some(4));
        assert_eq!(shortest_distance(&d, &start, &far, 3).unwrap(), None);
    }
}
