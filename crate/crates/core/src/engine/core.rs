//! The algorithmic modules: Controller, memory interface and Transform_C.

use rand::Rng;

use crate::domains::{Op, OP_COUNT};
use crate::error::{Error, Result};
use crate::memory::{
    InterfaceVector, COMP_WIDTH, CONTROLLER_WIDTH, INTERFACE_INPUT, INTERFACE_LAYER, INTERFACE_WIDTH, PHASE_WIDTH,
};
use crate::smallnet::{argmax, Activation, Genome, GenomeLayout, LayerSpec};

/// Controller input: `[c_i; c_m; c_f]`.
pub const CONTROLLER_INPUT: usize = PHASE_WIDTH + COMP_WIDTH + OP_COUNT;
/// Transform_C input: `[c_c; c_m; c_i]`.
pub const TRANSFORM_C_INPUT: usize = CONTROLLER_WIDTH + COMP_WIDTH + PHASE_WIDTH;

pub const CONTROLLER_LAYER: LayerSpec = LayerSpec::new(CONTROLLER_INPUT, CONTROLLER_WIDTH, Activation::Tanh);
pub const TRANSFORM_C_LAYER: LayerSpec = LayerSpec::new(TRANSFORM_C_INPUT, OP_COUNT, Activation::ArgmaxOnehot);

pub const CONTROLLER: &str = "controller";
pub const INTERFACE: &str = "interface";
pub const TRANSFORM_C: &str = "transform_c";

/// Flattening order of the algorithmic genome: controller, interface map,
/// Transform_C. Each layer stores its weights row-major (one row per output)
/// followed by the biases.
pub fn core_layout() -> GenomeLayout {
    let mut layout = GenomeLayout::default();
    layout.push_module(CONTROLLER, &[CONTROLLER_LAYER]);
    layout.push_module(INTERFACE, &[INTERFACE_LAYER]);
    layout.push_module(TRANSFORM_C, &[TRANSFORM_C_LAYER]);
    layout
}

/// Anything that can drive the control stream.
pub trait AlgorithmicCore: Sync {
    /// Controller and interface map. `c_m` and `c_f` are the previous step's
    /// read word and operation.
    fn control(
        &self,
        c_i: &[f64; PHASE_WIDTH],
        c_m: &[f64; COMP_WIDTH],
        c_f: &[f64; OP_COUNT],
    ) -> Result<([f64; CONTROLLER_WIDTH], InterfaceVector)>;

    /// Transform_C on the current read word.
    fn select_op(&self, c_c: &[f64; CONTROLLER_WIDTH], c_m: &[f64; COMP_WIDTH], c_i: &[f64; PHASE_WIDTH])
        -> Result<Op>;
}

fn affine<const I: usize, const O: usize>(params: &[f64], input: &[f64; I]) -> [f64; O] {
    let (w, b) = params.split_at(I * O);
    let mut out = [0.0; O];
    for (o, (row, bias)) in out.iter_mut().zip(w.chunks_exact(I).zip(b)) {
        *o = row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + bias;
    }
    out
}

/// The trainable core, parameterised by one flat genome.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralCore {
    genome: Genome,
}

impl NeuralCore {
    pub fn new(genome: Genome) -> Result<Self> {
        if genome.layout != core_layout() {
            return Err(Error::Config("genome layout does not match the algorithmic core".into()));
        }
        if genome.values.len() != genome.layout.len() {
            return Err(Error::Width { expected: genome.layout.len(), got: genome.values.len() });
        }
        Ok(NeuralCore { genome })
    }

    pub fn zeros() -> Self {
        NeuralCore { genome: Genome::zeros(core_layout()) }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        NeuralCore { genome: Genome::random(core_layout(), rng) }
    }

    pub fn genome(&self) -> &Genome {
        &self.genome
    }

    pub fn into_genome(self) -> Genome {
        self.genome
    }

    fn params(&self) -> (&[f64], &[f64], &[f64]) {
        let (c, rest) = self.genome.values.split_at(CONTROLLER_LAYER.param_count());
        let (i, t) = rest.split_at(INTERFACE_LAYER.param_count());
        (c, i, t)
    }
}

impl AlgorithmicCore for NeuralCore {
    fn control(
        &self,
        c_i: &[f64; PHASE_WIDTH],
        c_m: &[f64; COMP_WIDTH],
        c_f: &[f64; OP_COUNT],
    ) -> Result<([f64; CONTROLLER_WIDTH], InterfaceVector)> {
        let (controller, interface, _) = self.params();
        let mut input = [0.0; CONTROLLER_INPUT];
        input[..3].copy_from_slice(c_i);
        input[3..11].copy_from_slice(c_m);
        input[11..].copy_from_slice(c_f);
        let mut c_c: [f64; CONTROLLER_WIDTH] = affine(controller, &input);
        c_c.iter_mut().for_each(|v| *v = v.tanh());

        let mut iface_in = [0.0; INTERFACE_INPUT];
        iface_in[..CONTROLLER_WIDTH].copy_from_slice(&c_c);
        iface_in[CONTROLLER_WIDTH..].copy_from_slice(c_i);
        let raw: [f64; INTERFACE_WIDTH] = affine(interface, &iface_in);
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("interface vector".into()));
        }
        Ok((c_c, InterfaceVector::from_slice(&raw)?))
    }

    fn select_op(
        &self,
        c_c: &[f64; CONTROLLER_WIDTH],
        c_m: &[f64; COMP_WIDTH],
        c_i: &[f64; PHASE_WIDTH],
    ) -> Result<Op> {
        let (_, _, transform) = self.params();
        let mut input = [0.0; TRANSFORM_C_INPUT];
        input[..16].copy_from_slice(c_c);
        input[16..24].copy_from_slice(c_m);
        input[24..].copy_from_slice(c_i);
        let logits: [f64; OP_COUNT] = affine(transform, &input);
        Op::from_index(argmax(&logits))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smallnet::mlp_forward;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn layout_size() {
        // 16*16+16 + 19*29+29 + 27*5+5
        assert_eq!(core_layout().len(), 272 + 580 + 140);
        assert_eq!(core_layout().len(), 992);
        assert_eq!(core_layout().modules(), vec![CONTROLLER, INTERFACE, TRANSFORM_C]);
    }

    #[test]
    fn zero_genome_picks_first_op() {
        let core = NeuralCore::zeros();
        let (c_c, iface) = core.control(&[1.0, 0.0, 0.0], &[0.0; 8], &[0.0; 5]).unwrap();
        assert_eq!(c_c, [0.0; 16]);
        assert!(iface.attention().iter().all(|&a| (a - 0.2).abs() < 1e-12));
        assert_eq!(core.select_op(&c_c, &[1.0; 8], &[1.0, 0.0, 0.0]).unwrap(), Op::UP);
    }

    #[test]
    fn rejects_foreign_layout() {
        let mut layout = GenomeLayout::default();
        layout.push_module(CONTROLLER, &[CONTROLLER_LAYER]);
        assert!(NeuralCore::new(Genome::zeros(layout)).is_err());
    }

    proptest! {
        #[test]
        fn matches_generic_forward(seed in any::<u64>(), bits in proptest::collection::vec(0u8..2, 16)) {
            let core = NeuralCore::random(&mut ChaCha8Rng::seed_from_u64(seed));
            let g = core.genome();
            let x: Vec<f64> = bits.iter().map(|&b| f64::from(b)).collect();
            let c_i: [f64; 3] = x[..3].try_into().unwrap();
            let c_m: [f64; 8] = x[3..11].try_into().unwrap();
            let c_f: [f64; 5] = x[11..].try_into().unwrap();
            let (c_c, iface) = core.control(&c_i, &c_m, &c_f).unwrap();
            let expect_c = mlp_forward(&[CONTROLLER_LAYER], g.module(CONTROLLER).unwrap(), &x).unwrap();
            for (a, b) in c_c.iter().zip(&expect_c) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let mut iin = expect_c.clone();
            iin.extend_from_slice(&c_i);
            let expect_i = mlp_forward(&[INTERFACE_LAYER], g.module(INTERFACE).unwrap(), &iin).unwrap();
            prop_assert!((iface.read_mode_logits[2] - expect_i[10]).abs() < 1e-12);
            prop_assert!((iface.write_word_constrained[7] - expect_i[28]).abs() < 1e-12);

            let mut tin = expect_c;
            tin.extend_from_slice(&c_m);
            tin.extend_from_slice(&c_i);
            let onehot = mlp_forward(&[TRANSFORM_C_LAYER], g.module(TRANSFORM_C).unwrap(), &tin).unwrap();
            let op = core.select_op(&c_c, &c_m, &c_i).unwrap();
            prop_assert_eq!(onehot[op.index()], 1.0);
        }
    }
}
