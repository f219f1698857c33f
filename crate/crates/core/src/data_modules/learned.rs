use std::path::Path;

use ndarray::Array2;
use rand::Rng;

use super::{LocalChange, LocalView, CHANGE_WIDTH, VIEW_CELLS, VIEW_WIDTH};
use crate::domains::{Cell, Direction, Domain, Op, SokobanCodec, OP_COUNT};
use crate::error::{Error, Result};
use crate::smallnet::{argmax, dense_stack, genome_view, Activation, Genome, LayerSpec, Network};
use crate::word::DataWord;

use Activation::{LeakyRelu, Linear};

pub(crate) fn grid_codec(domain: &Domain) -> Result<SokobanCodec> {
    domain
        .codec()
        .copied()
        .ok_or_else(|| Error::Config(format!("learned local modules need a grid domain, got {}", domain.name())))
}

fn save_nets(nets: &[&Network], path: &Path) -> Result<()> {
    genome_view(nets).save(path)
}

/// Splits a module file back into its networks, checking their shapes.
fn load_nets(path: &Path, expected: &[(&str, Vec<LayerSpec>)]) -> Result<Vec<Network>> {
    let genome = Genome::load(path)?;
    expected
        .iter()
        .map(|(name, layers)| {
            let found = genome.layout.module_spec(name);
            if &found != layers {
                return Err(Error::Config(format!("{}: module {name} has an unexpected shape", path.display())));
            }
            let params = genome.module(name).expect("module present when its layers matched").to_vec();
            Ok(Network { name: name.to_string(), layers: found, params })
        })
        .collect()
}

fn rows_to_array(rows: impl ExactSizeIterator<Item = Vec<f64>>, width: usize) -> Array2<f64> {
    let n = rows.len();
    let flat: Vec<f64> = rows.flatten().collect();
    Array2::from_shape_vec((n, width), flat).expect("rows share the stated width")
}

/// Per-bit sum of the two one-sided rectified differences.
pub fn difference_features(a: &DataWord, b: &DataWord) -> Vec<f64> {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| {
            let (x, y) = (x as u8 as f64, y as u8 as f64);
            (x - y).max(0.0) + (y - x).max(0.0)
        })
        .collect()
}

/// Learned equality test; class 1 means equal.
#[derive(Debug, Clone)]
pub struct LearnedInput {
    pub net: Network,
}

impl LearnedInput {
    pub const HIDDEN: usize = 10;

    pub fn layers(width: usize) -> Vec<LayerSpec> {
        dense_stack(width, &[Self::HIDDEN], 2, LeakyRelu, Linear)
    }

    pub fn new<R: Rng + ?Sized>(width: usize, rng: &mut R) -> Result<Self> {
        Ok(LearnedInput { net: Network::random("equality", Self::layers(width), rng)? })
    }

    pub fn equal(&self, a: &DataWord, b: &DataWord) -> Result<bool> {
        Ok(argmax(&self.net.forward(&difference_features(a, b))?) == 1)
    }

    pub fn equal_batch(&self, pairs: &[(&DataWord, &DataWord)]) -> Result<Vec<bool>> {
        let width = self.net.layers[0].input_width;
        let x = rows_to_array(pairs.iter().map(|(a, b)| difference_features(a, b)), width);
        let out = self.net.forward_batch(&x)?;
        Ok(out.rows().into_iter().map(|r| argmax(r.as_slice().expect("contiguous row")) == 1).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_nets(&[&self.net], path)
    }

    pub fn load(path: &Path, domain: &Domain) -> Result<Self> {
        let mut nets = load_nets(path, &[("equality", Self::layers(domain.word_width()))])?;
        Ok(LearnedInput { net: nets.remove(0) })
    }
}

/// Learned local-view extraction: one 4-way group per view cell.
#[derive(Debug, Clone)]
pub struct LearnedTransform {
    pub codec: SokobanCodec,
    pub net: Network,
}

impl LearnedTransform {
    pub const HIDDEN: usize = 500;

    pub fn layers(codec: &SokobanCodec) -> Vec<LayerSpec> {
        dense_stack(codec.word_width(), &[Self::HIDDEN], VIEW_WIDTH, LeakyRelu, Linear)
    }

    pub fn new<R: Rng + ?Sized>(domain: &Domain, rng: &mut R) -> Result<Self> {
        let codec = grid_codec(domain)?;
        Ok(LearnedTransform { codec, net: Network::random("view", Self::layers(&codec), rng)? })
    }

    pub fn decode(&self, logits: &[f64]) -> LocalView {
        let mut cells = [Cell::Empty; VIEW_CELLS];
        for (k, cell) in cells.iter_mut().enumerate() {
            *cell = self.codec.permutation.cell(argmax(&logits[4 * k..4 * k + 4]));
        }
        LocalView { cells }
    }

    pub fn view(&self, d_m: &DataWord) -> Result<LocalView> {
        d_m.ensure_len(self.codec.word_width())?;
        Ok(self.decode(&self.net.forward(&d_m.to_reals())?))
    }

    pub fn view_batch(&self, words: &[&DataWord]) -> Result<Vec<LocalView>> {
        let x = rows_to_array(words.iter().map(|w| w.to_reals()), self.codec.word_width());
        let out = self.net.forward_batch(&x)?;
        Ok(out.rows().into_iter().map(|r| self.decode(r.as_slice().expect("contiguous row"))).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_nets(&[&self.net], path)
    }

    pub fn load(path: &Path, domain: &Domain) -> Result<Self> {
        let codec = grid_codec(domain)?;
        let mut nets = load_nets(path, &[("view", Self::layers(&codec))])?;
        Ok(LearnedTransform { codec, net: nets.remove(0) })
    }
}

/// Learned action model: a control net deciding whether the operation
/// changes the world, gating an action net that predicts the change.
#[derive(Debug, Clone)]
pub struct LearnedAlu {
    pub codec: SokobanCodec,
    pub control: Network,
    pub action: Network,
}

impl LearnedAlu {
    pub const INPUT: usize = OP_COUNT + VIEW_WIDTH;

    pub fn control_spec() -> Vec<LayerSpec> {
        dense_stack(Self::INPUT, &[64, 64], 2, LeakyRelu, Linear)
    }

    pub fn action_spec() -> Vec<LayerSpec> {
        dense_stack(Self::INPUT, &[128, 64], CHANGE_WIDTH, LeakyRelu, Linear)
    }

    pub fn new<R: Rng + ?Sized>(domain: &Domain, rng: &mut R) -> Result<Self> {
        Ok(LearnedAlu {
            codec: grid_codec(domain)?,
            control: Network::random("control", Self::control_spec(), rng)?,
            action: Network::random("action", Self::action_spec(), rng)?,
        })
    }

    pub fn features(&self, op: Op, view: &LocalView) -> Vec<f64> {
        let mut x = op.onehot().to_vec();
        x.extend(view.to_reals(&self.codec));
        x
    }

    pub fn decode(&self, op: Op, view: &LocalView, control: &[f64], action: &[f64]) -> (bool, LocalChange) {
        if argmax(control) != 1 {
            return (false, LocalChange::unchanged(view, op));
        }
        let direction = Direction::ALL[argmax(&action[..4])];
        let mut cells = [Cell::Empty; 3];
        for (k, cell) in cells.iter_mut().enumerate() {
            let base = 4 + 4 * k;
            *cell = self.codec.permutation.cell(argmax(&action[base..base + 4]));
        }
        (true, LocalChange { direction: Some(direction), cells })
    }

    pub fn apply(&self, op: Op, view: &LocalView) -> Result<(bool, LocalChange)> {
        let x = self.features(op, view);
        let control = self.control.forward(&x)?;
        let action = self.action.forward(&x)?;
        Ok(self.decode(op, view, &control, &action))
    }

    pub fn apply_batch(&self, items: &[(Op, &LocalView)]) -> Result<Vec<(bool, LocalChange)>> {
        let x = rows_to_array(items.iter().map(|(op, v)| self.features(*op, v)), Self::INPUT);
        let control = self.control.forward_batch(&x)?;
        let action = self.action.forward_batch(&x)?;
        Ok(items
            .iter()
            .zip(control.rows().into_iter().zip(action.rows()))
            .map(|((op, v), (c, a))| {
                self.decode(*op, v, c.as_slice().expect("contiguous"), a.as_slice().expect("contiguous"))
            })
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_nets(&[&self.control, &self.action], path)
    }

    pub fn load(path: &Path, domain: &Domain) -> Result<Self> {
        let codec = grid_codec(domain)?;
        let mut nets = load_nets(path, &[("control", Self::control_spec()), ("action", Self::action_spec())])?;
        let action = nets.pop().expect("two networks");
        let control = nets.pop().expect("two networks");
        Ok(LearnedAlu { codec, control, action })
    }
}

/// Learned insertion of a local change: a control net gating between the
/// memory word and the word with the change inserted, and a mask net that
/// picks, per grid cell, whether to keep it or to write one of the three
/// changed cells there.
#[derive(Debug, Clone)]
pub struct LearnedOutput {
    pub codec: SokobanCodec,
    pub control: Network,
    pub mask: Network,
}

impl LearnedOutput {
    pub fn input_width(codec: &SokobanCodec) -> usize {
        1 + CHANGE_WIDTH + codec.word_width()
    }

    pub fn control_spec(codec: &SokobanCodec) -> Vec<LayerSpec> {
        dense_stack(Self::input_width(codec), &[500, 250], 2, LeakyRelu, Linear)
    }

    /// Four choices per cell: keep, or insert changed cell 0, 1 or 2.
    pub fn mask_spec(codec: &SokobanCodec) -> Vec<LayerSpec> {
        dense_stack(Self::input_width(codec), &[500, 500], 4 * codec.cell_count(), LeakyRelu, Linear)
    }

    pub fn new<R: Rng + ?Sized>(domain: &Domain, rng: &mut R) -> Result<Self> {
        let codec = grid_codec(domain)?;
        Ok(LearnedOutput {
            codec,
            control: Network::random("control", Self::control_spec(&codec), rng)?,
            mask: Network::random("mask", Self::mask_spec(&codec), rng)?,
        })
    }

    pub fn features(&self, c_a: bool, change: &LocalChange, d_m: &DataWord) -> Vec<f64> {
        let mut x = Vec::with_capacity(Self::input_width(&self.codec));
        x.push(c_a as u8 as f64);
        x.extend(change.to_reals(&self.codec));
        d_m.extend_reals(&mut x);
        x
    }

    pub fn decode(&self, change: &LocalChange, d_m: &DataWord, control: &[f64], mask: &[f64]) -> (bool, DataWord) {
        if argmax(control) != 1 {
            return (false, d_m.clone());
        }
        let mut d_o = d_m.clone();
        for cell in 0..self.codec.cell_count() {
            let choice = argmax(&mask[4 * cell..4 * cell + 4]);
            if choice > 0 {
                self.codec.write_cell(&mut d_o, cell, change.cells[choice - 1]);
            }
        }
        (true, d_o)
    }

    pub fn insert(&self, c_a: bool, change: &LocalChange, d_m: &DataWord) -> Result<(bool, DataWord)> {
        d_m.ensure_len(self.codec.word_width())?;
        let x = self.features(c_a, change, d_m);
        let control = self.control.forward(&x)?;
        let mask = self.mask.forward(&x)?;
        Ok(self.decode(change, d_m, &control, &mask))
    }

    pub fn insert_batch(&self, items: &[(bool, &LocalChange, &DataWord)]) -> Result<Vec<(bool, DataWord)>> {
        let x = rows_to_array(items.iter().map(|(c, ch, d)| self.features(*c, ch, d)), Self::input_width(&self.codec));
        let control = self.control.forward_batch(&x)?;
        let mask = self.mask.forward_batch(&x)?;
        Ok(items
            .iter()
            .zip(control.rows().into_iter().zip(mask.rows()))
            .map(|((_, ch, d), (c, m))| {
                self.decode(ch, d, c.as_slice().expect("contiguous"), m.as_slice().expect("contiguous"))
            })
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_nets(&[&self.control, &self.mask], path)
    }

    pub fn load(path: &Path, domain: &Domain) -> Result<Self> {
        let codec = grid_codec(domain)?;
        let mut nets = load_nets(path, &[("control", Self::control_spec(&codec)), ("mask", Self::mask_spec(&codec))])?;
        let mask = nets.pop().expect("two networks");
        let control = nets.pop().expect("two networks");
        Ok(LearnedOutput { codec, control, mask })
    }
}
