//! Fixed-width binary words carried on the data stream.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use smallvec::SmallVec;

use crate::error::{Error, Result};

/// A binary vector encoding one task configuration.
///
/// Bits are packed little-endian into 64-bit blocks; up to 256 bits live
/// inline without a heap allocation.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DataWord {
    len: usize,
    blocks: SmallVec<[u64; 4]>,
}

impl DataWord {
    pub fn zeros(len: usize) -> Self {
        DataWord { len, blocks: SmallVec::from_elem(0, len.div_ceil(64)) }
    }

    pub fn from_bits<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let mut blocks: SmallVec<[u64; 4]> = SmallVec::new();
        let mut len = 0;
        for bit in bits {
            if len % 64 == 0 {
                blocks.push(0);
            }
            if bit {
                blocks[len / 64] |= 1 << (len % 64);
            }
            len += 1;
        }
        DataWord { len, blocks }
    }

    /// Thresholds real values at 0.5.
    pub fn from_reals(values: &[f64]) -> Self {
        Self::from_bits(values.iter().map(|&v| v > 0.5))
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        self.blocks[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, bit: bool) {
        debug_assert!(i < self.len);
        if bit {
            self.blocks[i / 64] |= 1 << (i % 64);
        } else {
            self.blocks[i / 64] &= !(1 << (i % 64));
        }
    }

    pub fn count_ones(&self) -> usize {
        self.blocks.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    pub fn to_reals(&self) -> Vec<f64> {
        self.iter().map(|b| if b { 1.0 } else { 0.0 }).collect()
    }

    pub fn extend_reals(&self, out: &mut Vec<f64>) {
        out.extend(self.iter().map(|b| if b { 1.0 } else { 0.0 }));
    }

    pub fn to_bit_string(&self) -> String {
        self.iter().map(|b| if b { '1' } else { '0' }).collect()
    }

    pub fn from_bit_string(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::MalformedWord(format!("unexpected character {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self::from_bits)
    }

    pub fn ensure_len(&self, expected: usize) -> Result<()> {
        if self.len == expected {
            Ok(())
        } else {
            Err(Error::Width { expected, got: self.len })
        }
    }
}

impl fmt::Debug for DataWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DataWord({})", self.to_bit_string())
    }
}

impl Serialize for DataWord {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_bit_string())
    }
}

impl<'de> Deserialize<'de> for DataWord {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        DataWord::from_bit_string(&s).map_err(serde::de::Error::custom)
    }
}
