//! Step-wise fitness against oracle traces.

use serde::{Deserialize, Serialize};

use crate::domains::{TargetTrace, TaskKind};
use crate::engine::StepRecord;
use crate::error::{Error, Result};

pub const SEARCH_MAX: f64 = 120.0;
pub const PLAN_MAX: f64 = 150.0;
const EXPLORE_MAX: f64 = 100.0;
const SEARCH_BONUS: f64 = 20.0;
const PLAN_BONUS: f64 = 50.0;

pub fn max_fitness(kind: TaskKind) -> f64 {
    match kind {
        TaskKind::Search => SEARCH_MAX,
        TaskKind::Plan => PLAN_MAX,
    }
}

/// Denominator of the step-wise scores. Both variants stop crediting at the
/// first mistake.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Divide by the full segment length, so every further correct step
    /// raises the score.
    #[default]
    Trace,
    /// Divide by the number of steps up to and including the first mistake.
    FirstMistake,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub f_e: f64,
    pub f_b: f64,
    /// First trace step that was wrong or missing, if any.
    pub first_mistake: Option<usize>,
}

impl SampleScore {
    pub fn perfect(&self) -> bool {
        self.first_mistake.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessReport {
    pub kind: TaskKind,
    pub samples: Vec<SampleScore>,
    pub mean_f_e: f64,
    pub fitness: f64,
    pub max_fitness: bool,
}

/// Credit `3` for a fully right step: one for the operation, two for the
/// read word. Returns the summed credit as a fraction of the maximum, and
/// the first wrong or missing step.
fn segment_credit(
    records: &[StepRecord],
    trace: &TargetTrace,
    range: std::ops::Range<usize>,
    norm: Normalization,
) -> (f64, Option<usize>) {
    let mut credit = 0.0;
    let mut mistake = None;
    for t in range.clone() {
        let expected = trace.step(t).expect("range within trace");
        let Some(r) = records.get(t) else {
            mistake = Some(t);
            break;
        };
        let op_ok = r.op == expected.op;
        let word_ok = r.d_m == expected.word;
        credit += f64::from(u8::from(op_ok)) + 2.0 * f64::from(u8::from(word_ok));
        if !op_ok || !word_ok {
            mistake = Some(t);
            break;
        }
    }
    let steps = match (norm, mistake) {
        (Normalization::FirstMistake, Some(t)) => t - range.start + 1,
        _ => range.len(),
    };
    (credit / (3.0 * steps as f64), mistake)
}

/// Scores one teacher-scored episode with the default normalization.
pub fn score_sample(records: &[StepRecord], trace: &TargetTrace) -> SampleScore {
    score_sample_with(records, trace, Normalization::default())
}

pub fn score_sample_with(records: &[StepRecord], trace: &TargetTrace, norm: Normalization) -> SampleScore {
    let t_e = trace.t_e();
    let (fraction, mistake) = segment_credit(records, trace, 0..t_e, norm);
    let f_e = EXPLORE_MAX * fraction;
    if mistake.is_some() {
        return SampleScore { f_e, f_b: 0.0, first_mistake: mistake };
    }
    match trace.kind {
        TaskKind::Search => {
            let nop = records.get(t_e).is_some_and(|r| r.op.is_nop());
            SampleScore {
                f_e,
                f_b: if nop { SEARCH_BONUS } else { 0.0 },
                first_mistake: if nop { None } else { Some(t_e) },
            }
        }
        TaskKind::Plan => {
            let (fraction, mistake) = segment_credit(records, trace, t_e..trace.total_steps(), norm);
            let f_b = PLAN_BONUS * fraction;
            SampleScore { f_e, f_b, first_mistake: mistake }
        }
    }
}

/// Batch fitness: the mean exploration score, plus the completion bonus only
/// when every sample explored perfectly.
pub fn fitness(kind: TaskKind, samples: Vec<SampleScore>) -> Result<FitnessReport> {
    if samples.is_empty() {
        return Err(Error::Config("fitness of an empty batch".into()));
    }
    let n = samples.len() as f64;
    let mean_f_e = samples.iter().map(|s| s.f_e).sum::<f64>() / n;
    let all_explored = samples.iter().all(|s| s.f_e == EXPLORE_MAX);
    let fitness = if all_explored { samples.iter().map(|s| s.f_e + s.f_b).sum::<f64>() / n } else { mean_f_e };
    let max_fitness = samples.iter().all(SampleScore::perfect);
    Ok(FitnessReport { kind, samples, mean_f_e, fitness, max_fitness })
}

pub fn fitness_search(episodes: &[(&[StepRecord], &TargetTrace)]) -> Result<FitnessReport> {
    fitness(TaskKind::Search, episodes.iter().map(|(r, t)| score_sample(r, t)).collect())
}

pub fn fitness_plan(episodes: &[(&[StepRecord], &TargetTrace)]) -> Result<FitnessReport> {
    fitness(TaskKind::Plan, episodes.iter().map(|(r, t)| score_sample(r, t)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::{Op, TraceStep};
    use crate::word::DataWord;

    fn w(bits: &str) -> DataWord {
        DataWord::from_bit_string(bits).unwrap()
    }

    fn rec(t: usize, word: &DataWord, op: Op) -> StepRecord {
        StepRecord {
            step: t,
            location: 0,
            attention: [0.2; 5],
            op,
            d_m: word.clone(),
            d_o: word.clone(),
            phase: [1, 0, 0],
        }
    }

    fn trace(kind: TaskKind, explore: &[(&str, Op)], finish: &[(&str, Op)]) -> TargetTrace {
        let steps = |s: &[(&str, Op)]| s.iter().map(|&(b, op)| TraceStep { word: w(b), op }).collect();
        TargetTrace { kind, level: 1, explore: steps(explore), finish: steps(finish) }
    }

    fn follow(tr: &TargetTrace) -> Vec<StepRecord> {
        tr.steps().enumerate().map(|(t, s)| rec(t, &s.word, s.op)).collect()
    }

    #[test]
    fn perfect_search_scores_120() {
        let tr = trace(TaskKind::Search, &[("00", Op::UP), ("00", Op::RIGHT)], &[("01", Op::NOP)]);
        let r = follow(&tr);
        let rep = fitness_search(&[(&r, &tr), (&r, &tr)]).unwrap();
        assert_eq!(rep.fitness, 120.0);
        assert!(rep.max_fitness);
    }

    #[test]
    fn wrong_op_with_right_read_at_step_two() {
        let tr = trace(TaskKind::Search, &[("00", Op::UP), ("00", Op::RIGHT)], &[("01", Op::NOP)]);
        let r = vec![rec(0, &w("00"), Op::UP), rec(1, &w("00"), Op::DOWN)];
        let rep = fitness_search(&[(&r, &tr)]).unwrap();
        assert!((rep.fitness - 100.0 / 6.0 * 5.0).abs() < 1e-9);
        assert!((rep.fitness - 83.333_333_333).abs() < 1e-6);
        assert_eq!(rep.samples[0].first_mistake, Some(1));
        assert!(!rep.max_fitness);
    }

    #[test]
    fn missing_final_nop_scores_100() {
        let tr = trace(TaskKind::Search, &[("00", Op::UP)], &[("01", Op::NOP)]);
        let mut r = follow(&tr);
        r[1].op = Op::LEFT;
        let rep = fitness_search(&[(&r, &tr), (&r, &tr)]).unwrap();
        assert_eq!(rep.fitness, 100.0);
        assert!(!rep.max_fitness);
    }

    #[test]
    fn perfect_plan_scores_150() {
        let tr = trace(TaskKind::Plan, &[("00", Op::UP)], &[("10", Op::NOP), ("00", Op::NOP)]);
        let r = follow(&tr);
        assert_eq!(fitness_plan(&[(&r, &tr)]).unwrap().fitness, 150.0);
    }

    #[test]
    fn plan_backtrack_with_one_wrong_read() {
        let tr = trace(TaskKind::Plan, &[("00", Op::UP)], &[("11", Op::NOP), ("10", Op::NOP), ("00", Op::NOP)]);
        let mut r = follow(&tr);
        // Wrong read on the last backtrack step, nops everywhere.
        r[3].d_m = w("01");
        let rep = fitness_plan(&[(&r, &tr)]).unwrap();
        assert!((rep.fitness - (100.0 + 50.0 / 9.0 * (3.0 + 2.0 * 2.0))).abs() < 1e-9);
        assert!((rep.fitness - 138.888_888_889).abs() < 1e-6);
    }

    #[test]
    fn bonus_ignored_below_full_exploration() {
        // One sample perfect, one with f_e = 98 -> mean 99.
        let perfect = SampleScore { f_e: 100.0, f_b: 50.0, first_mistake: None };
        let weak = SampleScore { f_e: 98.0, f_b: 0.0, first_mistake: Some(3) };
        let rep = fitness(TaskKind::Plan, vec![perfect, weak]).unwrap();
        assert_eq!(rep.fitness, 99.0);
    }

    #[test]
    fn normalizations_differ_only_before_the_last_step() {
        let tr = trace(
            TaskKind::Search,
            &[("00", Op::UP), ("00", Op::RIGHT), ("00", Op::DOWN), ("00", Op::LEFT)],
            &[("01", Op::NOP)],
        );
        // Right read, wrong op at step 2 of 4.
        let mut r = follow(&tr);
        r[1].op = Op::LEFT;
        let trace_norm = score_sample_with(&r, &tr, Normalization::Trace);
        let first = score_sample_with(&r, &tr, Normalization::FirstMistake);
        assert!((trace_norm.f_e - 100.0 * 5.0 / 12.0).abs() < 1e-9);
        assert!((first.f_e - 100.0 * 5.0 / 6.0).abs() < 1e-9);
        assert_eq!(trace_norm.first_mistake, first.first_mistake);
    }

    #[test]
    fn trace_normalization_rewards_progress() {
        let tr = trace(
            TaskKind::Search,
            &[("00", Op::UP), ("00", Op::RIGHT), ("00", Op::DOWN), ("00", Op::LEFT), ("10", Op::UP)],
            &[("11", Op::NOP)],
        );
        // Wrong op at step 4 against fully wrong step 5.
        let mut early = follow(&tr);
        early[3].op = Op::DOWN;
        let mut late = follow(&tr);
        late[4] = rec(4, &w("01"), Op::DOWN);
        let score = |r: &[StepRecord], n| score_sample_with(r, &tr, n).f_e;
        assert!(score(&late, Normalization::Trace) > score(&early, Normalization::Trace));
        assert!(score(&late, Normalization::FirstMistake) < score(&early, Normalization::FirstMistake));
    }

    #[test]
    fn early_stop_counts_as_mistake() {
        let tr = trace(TaskKind::Search, &[("00", Op::UP), ("00", Op::RIGHT)], &[("01", Op::NOP)]);
        let r = vec![rec(0, &w("00"), Op::UP)];
        let s = score_sample(&r, &tr);
        assert_eq!(s.first_mistake, Some(1));
        assert!((s.f_e - 50.0).abs() < 1e-12);
        assert!((score_sample_with(&r, &tr, Normalization::FirstMistake).f_e - 50.0).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_is_an_error() {
        assert!(fitness_search(&[]).is_err());
    }
}
