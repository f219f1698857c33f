//! Hand-scripted breadth-first search and backtracking over the memory
//! primitives.
//!
//! The computational word of the node under exploration is a counter: bit 0
//! marks the node active and bit `k` (k = 1..3) says `k` operations have been
//! applied; bit 7 alone marks a finished node. Freshly written rows hold the
//! zero word, which reads as "no operation applied yet".
//!
//! Per step, given the phase signals and the previous read word/operation:
//!
//! | situation                         | read mode          | operation          |
//! |-----------------------------------|--------------------|--------------------|
//! | first step                        | temporal forward   | counter of read    |
//! | exploring, counter 0..2           | content (next ctr) | counter of read    |
//! | exploring, counter 3              | temporal forward   | counter of read    |
//! | goal found, last op was a move    | usage forward      | `nop`              |
//! | goal found, last op was `nop`     | usage backward     | `nop`              |
//!
//! The constrained head always writes the advanced counter into the row read
//! on the previous step; the free head writes the zero word.
//!
//! [`ReferenceProgram::genome`] expresses the same policy as weights of a
//! [`NeuralCore`], so the policy also runs through the trained architecture.

use super::core::{core_layout, AlgorithmicCore, NeuralCore, CONTROLLER, INTERFACE, TRANSFORM_C};
use crate::domains::{Op, OP_COUNT};
use crate::error::Result;
use crate::memory::{InterfaceVector, ReadMode, COMP_WIDTH, CONTROLLER_WIDTH, PHASE_WIDTH, READ_MODES};
use crate::smallnet::Genome;

const LOGIT: f64 = 10.0;
const GAIN: f64 = 10.0;

/// Counter word following `prev`, as a +1/-1 pattern.
fn next_counter(prev: &[f64; COMP_WIDTH]) -> [f64; COMP_WIDTH] {
    let on = |b: usize| prev[b] > 0.5;
    let mut word = [-1.0; COMP_WIDTH];
    if on(3) {
        word[7] = 1.0;
    } else {
        word[0] = 1.0;
        let k = if on(1) {
            2
        } else if on(2) {
            3
        } else if on(7) {
            return word;
        } else {
            1
        };
        word[k] = 1.0;
    }
    word
}

/// The read mode the script uses.
pub fn reference_mode(c_i: &[f64; PHASE_WIDTH], c_m_prev: &[f64; COMP_WIDTH], c_f_prev: &[f64; OP_COUNT]) -> ReadMode {
    let found = c_i[1] > 0.5;
    let first = c_f_prev.iter().all(|&v| v < 0.5);
    let was_nop = c_f_prev[Op::NOP.index()] > 0.5;
    match (found, was_nop) {
        (true, false) => ReadMode::UsageForward,
        (true, true) => ReadMode::UsageBackward,
        (false, _) if first || c_m_prev[3] > 0.5 => ReadMode::TemporalForward,
        (false, _) => ReadMode::Content,
    }
}

/// Symbolic form of the scripted policy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReferenceProgram;

impl ReferenceProgram {
    /// The same policy as weights of the neural core.
    pub fn genome() -> Genome {
        let mut g = Genome::zeros(core_layout());
        let c_range = g.layout.module_range(CONTROLLER).expect("controller");
        let i_range = g.layout.module_range(INTERFACE).expect("interface");
        let t_range = g.layout.module_range(TRANSFORM_C).expect("transform_c");

        // Controller input: c1 c2 c3 | m0..m7 | f0..f4.
        const C2: usize = 1;
        const M: usize = 3;
        const F: usize = 11;
        let (mut cw, mut cb) = (vec![0.0; 16 * 16], vec![0.0; 16]);
        let mut unit = |u: usize, terms: &[(usize, f64)], bias: f64| {
            for &(i, w) in terms {
                cw[u * 16 + i] = GAIN * w;
            }
            cb[u] = GAIN * bias;
        };
        let all_f: Vec<(usize, f64)> = (0..5).map(|j| (F + j, 1.0)).collect();
        // 0..3: previous counter 0, 1, 2, 3.
        unit(0, &[(M + 1, -1.0), (M + 2, -1.0), (M + 3, -1.0), (M + 7, -1.0)], 0.5);
        unit(1, &[(M + 1, 1.0)], -0.5);
        unit(2, &[(M + 2, 1.0)], -0.5);
        unit(3, &[(M + 3, 1.0)], -0.5);
        // 4: temporal forward, 5: content, 6: usage forward, 7: usage backward.
        let mut tf: Vec<(usize, f64)> = all_f.iter().map(|&(i, _)| (i, -1.0)).collect();
        tf.extend([(M + 3, 1.0), (C2, -2.0)]);
        unit(4, &tf, 0.5);
        let mut ct = all_f.clone();
        ct.extend([(M + 3, -1.0), (C2, -2.0)]);
        unit(5, &ct, -0.5);
        unit(6, &[(C2, 1.0), (F + 4, -1.0)], -0.5);
        unit(7, &[(C2, 1.0), (F + 4, 1.0)], -1.5);
        let cb_len = cw.len();
        g.values[c_range.start..c_range.start + cb_len].copy_from_slice(&cw);
        g.values[c_range.start + cb_len..c_range.end].copy_from_slice(&cb);

        // Interface outputs: key 0..8, logits 8..13, free 13..21, constrained 21..29.
        let (mut iw, mut ib) = (vec![0.0; 29 * 19], vec![0.0; 29]);
        for base in [0, 21] {
            for bit in 0..8 {
                ib[base + bit] = -1.0;
            }
            let mut set = |bit: usize, u: usize, w: f64| {
                ib[base + bit] = 0.0;
                iw[(base + bit) * 19 + u] = w;
            };
            set(0, 3, -1.0);
            set(1, 0, 1.0);
            set(2, 1, 1.0);
            set(3, 2, 1.0);
            set(7, 3, 1.0);
        }
        for (mode, u) in [
            (ReadMode::TemporalForward, 4),
            (ReadMode::Content, 5),
            (ReadMode::UsageForward, 6),
            (ReadMode::UsageBackward, 7),
        ] {
            let o = 8 + mode.index();
            iw[o * 19 + u] = LOGIT / 2.0;
            ib[o] = LOGIT / 2.0;
        }
        ib[13..21].fill(-1.0);
        let iw_len = iw.len();
        g.values[i_range.start..i_range.start + iw_len].copy_from_slice(&iw);
        g.values[i_range.start + iw_len..i_range.end].copy_from_slice(&ib);

        // Transform_C input: c_c 0..16 | m 16..24 | c_i 24..27.
        let (mut tw, mut tb) = (vec![0.0; 5 * 27], vec![0.0; 5]);
        tb[0] = 0.5;
        for k in 1..4 {
            tw[16 + k] = -1.0;
            tw[k * 27 + 16 + k] = 1.0;
        }
        tw[4 * 27 + 25] = 3.0;
        let tw_len = tw.len();
        g.values[t_range.start..t_range.start + tw_len].copy_from_slice(&tw);
        g.values[t_range.start + tw_len..t_range.end].copy_from_slice(&tb);
        g
    }

    pub fn neural() -> NeuralCore {
        NeuralCore::new(Self::genome()).expect("reference genome uses the core layout")
    }
}

impl AlgorithmicCore for ReferenceProgram {
    fn control(
        &self,
        c_i: &[f64; PHASE_WIDTH],
        c_m: &[f64; COMP_WIDTH],
        c_f: &[f64; OP_COUNT],
    ) -> Result<([f64; CONTROLLER_WIDTH], InterfaceVector)> {
        let counter = next_counter(c_m);
        let mut logits = [0.0; READ_MODES];
        logits[reference_mode(c_i, c_m, c_f).index()] = LOGIT;
        let iface = InterfaceVector {
            read_key: counter,
            read_mode_logits: logits,
            write_word_free: [-1.0; COMP_WIDTH],
            write_word_constrained: counter,
        };
        Ok(([0.0; CONTROLLER_WIDTH], iface))
    }

    fn select_op(
        &self,
        _c_c: &[f64; CONTROLLER_WIDTH],
        c_m: &[f64; COMP_WIDTH],
        c_i: &[f64; PHASE_WIDTH],
    ) -> Result<Op> {
        if c_i[1] > 0.5 {
            return Ok(Op::NOP);
        }
        Ok((1..4).find(|&k| c_m[k] > 0.5).map_or(Op::UP, |k| Op::MOVES[k]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::binarize;

    fn onehot(op: Option<Op>) -> [f64; 5] {
        op.map_or([0.0; 5], Op::onehot)
    }

    fn word(bits: &[usize]) -> [f64; 8] {
        let mut w = [0.0; 8];
        bits.iter().for_each(|&b| w[b] = 1.0);
        w
    }

    #[test]
    fn counter_sequence() {
        assert_eq!(binarize(&next_counter(&word(&[]))), 0b0000_0011);
        assert_eq!(binarize(&next_counter(&word(&[0, 1]))), 0b0000_0101);
        assert_eq!(binarize(&next_counter(&word(&[0, 2]))), 0b0000_1001);
        assert_eq!(binarize(&next_counter(&word(&[0, 3]))), 0b1000_0000);
    }

    #[test]
    fn genome_agrees_with_script_on_all_control_inputs() {
        let neural = ReferenceProgram::neural();
        let script = ReferenceProgram;
        let words: Vec<[f64; 8]> = vec![word(&[]), word(&[0, 1]), word(&[0, 2]), word(&[0, 3]), word(&[7])];
        let ops = [None, Some(Op::UP), Some(Op::RIGHT), Some(Op::DOWN), Some(Op::LEFT), Some(Op::NOP)];
        for phase in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 1.0, 1.0]] {
            for c_m in &words {
                for &op in &ops {
                    let c_f = onehot(op);
                    let (_, a) = script.control(&phase, c_m, &c_f).unwrap();
                    let (c_c, b) = neural.control(&phase, c_m, &c_f).unwrap();
                    assert_eq!(binarize(&a.write_word_constrained), binarize(&b.write_word_constrained));
                    assert_eq!(binarize(&a.write_word_free), binarize(&b.write_word_free));
                    assert_eq!(binarize(&a.read_key), binarize(&b.read_key));
                    let top = crate::smallnet::argmax(&b.attention());
                    assert_eq!(top, reference_mode(&phase, c_m, &c_f).index(), "{phase:?} {c_m:?} {op:?}");
                    assert!(b.attention()[top] > 0.999);
                    for read in &words {
                        assert_eq!(
                            script.select_op(&[0.0; 16], read, &phase).unwrap(),
                            neural.select_op(&c_c, read, &phase).unwrap()
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn modes_by_phase() {
        let explore = [1.0, 0.0, 0.0];
        let found = [0.0, 1.0, 0.0];
        assert_eq!(reference_mode(&explore, &word(&[]), &[0.0; 5]), ReadMode::TemporalForward);
        assert_eq!(reference_mode(&explore, &word(&[]), &onehot(Some(Op::UP))), ReadMode::Content);
        assert_eq!(reference_mode(&explore, &word(&[0, 3]), &onehot(Some(Op::LEFT))), ReadMode::TemporalForward);
        assert_eq!(reference_mode(&found, &word(&[0, 1]), &onehot(Some(Op::RIGHT))), ReadMode::UsageForward);
        assert_eq!(reference_mode(&found, &word(&[]), &onehot(Some(Op::NOP))), ReadMode::UsageBackward);
    }
}
