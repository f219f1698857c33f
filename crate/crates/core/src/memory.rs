//! Coupled computational and data memory.
//!
//! Both memories share row indices. The computational memory holds 8-bit
//! binary words written by the control stream; the data memory holds the
//! data words that arrived at the same step. Rows are allocated sequentially
//! and never reused.
//!
//! Reading combines five hard mechanisms, each of which names exactly one row:
//! content lookup, temporal linkage forward/backward (free-head write order),
//! and usage linkage forward/backward (which row was being read when a row was
//! written).

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::smallnet::{mlp_forward, softmax, Activation, LayerSpec};
use crate::word::DataWord;

pub const COMP_WIDTH: usize = 8;
pub const READ_MODES: usize = 5;
pub const CONTROLLER_WIDTH: usize = 16;
pub const PHASE_WIDTH: usize = 3;
pub const INTERFACE_INPUT: usize = CONTROLLER_WIDTH + PHASE_WIDTH;
pub const INTERFACE_WIDTH: usize = COMP_WIDTH + READ_MODES + COMP_WIDTH + COMP_WIDTH;

/// The linear map from `[c_c; c_i]` to the interface vector.
pub const INTERFACE_LAYER: LayerSpec = LayerSpec::new(INTERFACE_INPUT, INTERFACE_WIDTH, Activation::Linear);

/// An 8-bit binary computational word, bit `i` is coordinate `i`.
pub type CompWord = u8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadMode {
    Content = 0,
    TemporalForward = 1,
    TemporalBackward = 2,
    UsageForward = 3,
    UsageBackward = 4,
}

impl ReadMode {
    pub const ALL: [ReadMode; READ_MODES] = [
        ReadMode::Content,
        ReadMode::TemporalForward,
        ReadMode::TemporalBackward,
        ReadMode::UsageForward,
        ReadMode::UsageBackward,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterfaceVector {
    pub read_key: [f64; COMP_WIDTH],
    pub read_mode_logits: [f64; READ_MODES],
    pub write_word_free: [f64; COMP_WIDTH],
    pub write_word_constrained: [f64; COMP_WIDTH],
}

impl InterfaceVector {
    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != INTERFACE_WIDTH {
            return Err(Error::Width { expected: INTERFACE_WIDTH, got: v.len() });
        }
        let mut iface = InterfaceVector {
            read_key: [0.0; COMP_WIDTH],
            read_mode_logits: [0.0; READ_MODES],
            write_word_free: [0.0; COMP_WIDTH],
            write_word_constrained: [0.0; COMP_WIDTH],
        };
        iface.read_key.copy_from_slice(&v[0..8]);
        iface.read_mode_logits.copy_from_slice(&v[8..13]);
        iface.write_word_free.copy_from_slice(&v[13..21]);
        iface.write_word_constrained.copy_from_slice(&v[21..29]);
        Ok(iface)
    }

    pub fn attention(&self) -> [f64; READ_MODES] {
        let p = softmax(&self.read_mode_logits);
        let mut out = [0.0; READ_MODES];
        out.copy_from_slice(&p);
        out
    }
}

/// Single linear map from the 19-wide `[c_c; c_i]` to the 29-wide interface.
pub fn derive_interface(
    params: &[f64],
    c_c: &[f64; CONTROLLER_WIDTH],
    c_i: &[f64; PHASE_WIDTH],
) -> Result<InterfaceVector> {
    let mut input = [0.0; INTERFACE_INPUT];
    input[..CONTROLLER_WIDTH].copy_from_slice(c_c);
    input[CONTROLLER_WIDTH..].copy_from_slice(c_i);
    let out = mlp_forward(&[INTERFACE_LAYER], params, &input)?;
    InterfaceVector::from_slice(&out)
}

/// Threshold-at-zero: strictly positive coordinates become 1.
pub fn binarize(word: &[f64; COMP_WIDTH]) -> CompWord {
    word.iter().enumerate().fold(0u8, |acc, (i, &v)| if v > 0.0 { acc | 1 << i } else { acc })
}

pub fn comp_bits(word: CompWord) -> [f64; COMP_WIDTH] {
    let mut out = [0.0; COMP_WIDTH];
    for (i, o) in out.iter_mut().enumerate() {
        *o = f64::from(word >> i & 1);
    }
    out
}

/// Cosine similarity of a real key against a binary word; zero vectors give 0.
pub fn cosine(key: &[f64; COMP_WIDTH], word: CompWord) -> f64 {
    let ones = word.count_ones();
    let key_norm = key.iter().map(|k| k * k).sum::<f64>().sqrt();
    if ones == 0 || key_norm == 0.0 {
        return 0.0;
    }
    let dot: f64 = (0..COMP_WIDTH).filter(|i| word >> i & 1 == 1).map(|i| key[i]).sum();
    dot / (key_norm * f64::from(ones).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadOptions {
    pub hard: bool,
    pub usage_linkage: bool,
}

impl Default for ReadOptions {
    fn default() -> Self {
        ReadOptions { hard: true, usage_linkage: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReadResult {
    pub location: usize,
    /// `c_m`: the read computational word (a weighted average in soft mode).
    pub comp: [f64; COMP_WIDTH],
    /// `d_m`: the read data word.
    pub data: DataWord,
    pub attention: [f64; READ_MODES],
    /// Row chosen by each mechanism, in [`ReadMode`] order.
    pub candidates: [usize; READ_MODES],
}

#[derive(Debug, Clone)]
pub struct DualMemory {
    data_width: usize,
    comp: Vec<CompWord>,
    data: Vec<DataWord>,
    write_order: Vec<u64>,
    temporal_succ: Vec<Option<usize>>,
    temporal_pred: Vec<Option<usize>>,
    usage_parent: Vec<Option<usize>>,
    latest_child: Vec<Option<usize>>,
    last_read: Option<usize>,
    last_free_write: Option<usize>,
    clock: u64,
    /// Rows currently holding each computational word value.
    by_word: Vec<BTreeSet<usize>>,
}

impl DualMemory {
    pub fn new(data_width: usize) -> Self {
        DualMemory {
            data_width,
            comp: Vec::new(),
            data: Vec::new(),
            write_order: Vec::new(),
            temporal_succ: Vec::new(),
            temporal_pred: Vec::new(),
            usage_parent: Vec::new(),
            latest_child: Vec::new(),
            last_read: None,
            last_free_write: None,
            clock: 0,
            by_word: vec![BTreeSet::new(); 256],
        }
    }

    pub fn rows(&self) -> usize {
        self.comp.len()
    }

    pub fn data_rows(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.comp.is_empty()
    }

    pub fn data_width(&self) -> usize {
        self.data_width
    }

    pub fn next_free(&self) -> usize {
        self.comp.len()
    }

    pub fn last_read(&self) -> Option<usize> {
        self.last_read
    }

    pub fn comp_word(&self, row: usize) -> CompWord {
        self.comp[row]
    }

    pub fn data_word(&self, row: usize) -> &DataWord {
        &self.data[row]
    }

    pub fn temporal_succ(&self, row: usize) -> Option<usize> {
        self.temporal_succ[row]
    }

    pub fn temporal_pred(&self, row: usize) -> Option<usize> {
        self.temporal_pred[row]
    }

    pub fn usage_parent(&self, row: usize) -> Option<usize> {
        self.usage_parent[row]
    }

    pub fn write_order(&self, row: usize) -> u64 {
        self.write_order[row]
    }

    fn set_comp(&mut self, row: usize, word: CompWord) {
        let old = self.comp[row];
        self.by_word[old as usize].remove(&row);
        self.comp[row] = word;
        self.by_word[word as usize].insert(row);
    }

    /// Free write head: allocates the next row in both memories.
    pub fn allocate_and_write(&mut self, d_i: &DataWord, write_word: &[f64; COMP_WIDTH]) -> Result<usize> {
        d_i.ensure_len(self.data_width)?;
        let row = self.comp.len();
        let word = binarize(write_word);
        self.comp.push(word);
        self.by_word[word as usize].insert(row);
        self.data.push(d_i.clone());
        self.write_order.push(self.clock);
        self.clock += 1;
        self.temporal_succ.push(None);
        self.temporal_pred.push(self.last_free_write);
        if let Some(prev) = self.last_free_write {
            self.temporal_succ[prev] = Some(row);
        }
        self.last_free_write = Some(row);
        self.usage_parent.push(self.last_read);
        self.latest_child.push(None);
        if let Some(parent) = self.last_read {
            self.latest_child[parent] = Some(row);
        }
        Ok(row)
    }

    /// Constrained write head: overwrites the computational word of the
    /// previously read row. No-op before the first read.
    pub fn constrained_write(&mut self, write_word: &[f64; COMP_WIDTH]) {
        if let Some(row) = self.last_read {
            self.set_comp(row, binarize(write_word));
        }
    }

    fn content_lookup(&self, key: &[f64; COMP_WIDTH]) -> usize {
        let mut best_sim = f64::NEG_INFINITY;
        let mut best_row = usize::MAX;
        for (word, rows) in self.by_word.iter().enumerate() {
            let Some(&first) = rows.first() else { continue };
            let sim = cosine(key, word as CompWord);
            if sim > best_sim || (sim == best_sim && first < best_row) {
                best_sim = sim;
                best_row = first;
            }
        }
        best_row
    }

    /// Row each mechanism points to. Link mechanisms anchor on the last read
    /// row (the latest free write before any read) and fall back to the anchor
    /// when the link is unset.
    pub fn candidates(&self, key: &[f64; COMP_WIDTH], usage_linkage: bool) -> Result<[usize; READ_MODES]> {
        if self.is_empty() {
            return Err(Error::EmptyMemory);
        }
        let anchor = self.last_read.or(self.last_free_write).expect("nonempty memory has a free write");
        let content = self.content_lookup(key);
        let forward = self.temporal_succ[anchor].unwrap_or(anchor);
        let backward = self.temporal_pred[anchor].unwrap_or(anchor);
        let (usage_fwd, usage_bwd) = if usage_linkage {
            (self.latest_child[anchor].unwrap_or(anchor), self.usage_parent[anchor].unwrap_or(anchor))
        } else {
            (anchor, anchor)
        };
        Ok([content, forward, backward, usage_fwd, usage_bwd])
    }

    pub fn read_attend(&mut self, iface: &InterfaceVector, options: ReadOptions) -> Result<ReadResult> {
        let candidates = self.candidates(&iface.read_key, options.usage_linkage)?;
        let attention = iface.attention();

        // Combined weight per distinct candidate row.
        let mut rows: Vec<(usize, f64)> = Vec::with_capacity(READ_MODES);
        for (&row, &w) in candidates.iter().zip(&attention) {
            match rows.iter_mut().find(|(r, _)| *r == row) {
                Some((_, acc)) => *acc += w,
                None => rows.push((row, w)),
            }
        }
        let location = rows
            .iter()
            .fold(None::<(usize, f64)>, |best, &(r, w)| match best {
                Some((br, bw)) if bw > w || (bw == w && br < r) => Some((br, bw)),
                _ => Some((r, w)),
            })
            .map(|(r, _)| r)
            .expect("five candidates");

        let (comp, data) = if options.hard {
            (comp_bits(self.comp[location]), self.data[location].clone())
        } else {
            let mut comp = [0.0; COMP_WIDTH];
            let mut data = vec![0.0; self.data_width];
            for &(row, w) in &rows {
                for (c, b) in comp.iter_mut().zip(comp_bits(self.comp[row])) {
                    *c += w * b;
                }
                for (i, d) in data.iter_mut().enumerate() {
                    if self.data[row].get(i) {
                        *d += w;
                    }
                }
            }
            (comp, DataWord::from_reals(&data))
        };
        self.last_read = Some(location);
        Ok(ReadResult { location, comp, data, attention, candidates })
    }

    pub fn snapshot(&self) -> MemorySnapshot {
        MemorySnapshot {
            rows: (0..self.rows())
                .map(|r| RowSnapshot {
                    row: r,
                    comp: format!("{:08b}", self.comp[r].reverse_bits()),
                    data: self.data[r].clone(),
                    write_order: self.write_order[r],
                    temporal_succ: self.temporal_succ[r],
                    temporal_pred: self.temporal_pred[r],
                    usage_parent: self.usage_parent[r],
                })
                .collect(),
            last_read: self.last_read,
            next_free: self.next_free(),
        }
    }
}

/// JSON-friendly dump of the memory for debugging and trace export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorySnapshot {
    pub rows: Vec<RowSnapshot>,
    pub last_read: Option<usize>,
    pub next_free: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowSnapshot {
    pub row: usize,
    /// Bit 0 first.
    pub comp: String,
    pub data: DataWord,
    pub write_order: u64,
    pub temporal_succ: Option<usize>,
    pub temporal_pred: Option<usize>,
    pub usage_parent: Option<usize>,
}
