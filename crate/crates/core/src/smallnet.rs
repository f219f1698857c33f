//! Minimal dense-network substrate.
//!
//! Parameters of a stack of dense layers live in one flat `f64` slice. Each
//! layer contributes its weight matrix in row-major `[output][input]` order
//! followed by its bias vector, so a [`Genome`] is nothing more than the
//! concatenation of those slices in layout order.

use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LEAKY_RELU_SLOPE: f64 = 0.01;
pub const INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    LeakyRelu,
    Linear,
    /// One-hot at the argmax, lowest index winning ties. Final layer only.
    ArgmaxOnehot,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::LeakyRelu => {
                if z >= 0.0 {
                    z
                } else {
                    LEAKY_RELU_SLOPE * z
                }
            }
            Activation::Linear | Activation::ArgmaxOnehot => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::LeakyRelu => {
                if z >= 0.0 {
                    1.0
                } else {
                    LEAKY_RELU_SLOPE
                }
            }
            Activation::Linear | Activation::ArgmaxOnehot => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input_width: usize,
    pub output_width: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub const fn new(input_width: usize, output_width: usize, activation: Activation) -> Self {
        LayerSpec { input_width, output_width, activation }
    }

    pub const fn weight_count(&self) -> usize {
        self.input_width * self.output_width
    }

    pub const fn param_count(&self) -> usize {
        self.weight_count() + self.output_width
    }
}

/// Builds a stack `input -> hidden... -> output` with a shared hidden activation.
pub fn dense_stack(
    input: usize,
    hidden: &[usize],
    output: usize,
    hidden_activation: Activation,
    output_activation: Activation,
) -> Vec<LayerSpec> {
    let mut widths = vec![input];
    widths.extend_from_slice(hidden);
    widths.push(output);
    let last = widths.len() - 2;
    widths
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let act = if i == last { output_activation } else { hidden_activation };
            LayerSpec::new(w[0], w[1], act)
        })
        .collect()
}

pub fn param_count(layers: &[LayerSpec]) -> usize {
    layers.iter().map(LayerSpec::param_count).sum()
}

pub fn validate_stack(layers: &[LayerSpec]) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::Config("empty layer stack".into()));
    }
    for (i, layer) in layers.iter().enumerate() {
        if layer.input_width == 0 || layer.output_width == 0 {
            return Err(Error::Config(format!("layer {i} has a zero width")));
        }
        if layer.activation == Activation::ArgmaxOnehot && i + 1 != layers.len() {
            return Err(Error::Config(format!("argmax_onehot on non-final layer {i}")));
        }
        if i > 0 && layers[i - 1].output_width != layer.input_width {
            return Err(Error::Config(format!(
                "layer {i} expects {} inputs but the previous layer emits {}",
                layer.input_width,
                layers[i - 1].output_width
            )));
        }
    }
    Ok(())
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn dense_forward(layer: &LayerSpec, params: &[f64], input: &[f64], out: &mut Vec<f64>) {
    let (weights, bias) = params.split_at(layer.weight_count());
    out.clear();
    out.extend(weights.chunks_exact(layer.input_width).zip(bias).map(|(row, b)| {
        let z = row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + b;
        layer.activation.apply(z)
    }));
    if layer.activation == Activation::ArgmaxOnehot {
        let k = argmax(out);
        out.iter_mut().enumerate().for_each(|(i, v)| *v = if i == k { 1.0 } else { 0.0 });
    }
}

/// Evaluates the stack on one input vector.
pub fn mlp_forward(layers: &[LayerSpec], params: &[f64], input: &[f64]) -> Result<Vec<f64>> {
    validate_stack(layers)?;
    let expected = param_count(layers);
    if params.len() != expected {
        return Err(Error::Config(format!("parameter slice has {} values, layout needs {expected}", params.len())));
    }
    if input.len() != layers[0].input_width {
        return Err(Error::Width { expected: layers[0].input_width, got: input.len() });
    }
    let mut current = input.to_vec();
    let mut next = Vec::new();
    let mut offset = 0;
    for layer in layers {
        let n = layer.param_count();
        dense_forward(layer, &params[offset..offset + n], &current, &mut next);
        std::mem::swap(&mut current, &mut next);
        offset += n;
    }
    Ok(current)
}

fn layer_views<'a>(layer: &LayerSpec, params: &'a [f64]) -> (ArrayView2<'a, f64>, &'a [f64]) {
    let (w, b) = params.split_at(layer.weight_count());
    let w = ArrayView2::from_shape((layer.output_width, layer.input_width), w).expect("layer slice matches its shape");
    (w, b)
}

/// Batched forward pass; rows of `inputs` are samples.
pub fn forward_batch(layers: &[LayerSpec], params: &[f64], inputs: &Array2<f64>) -> Result<Array2<f64>> {
    validate_stack(layers)?;
    if inputs.ncols() != layers[0].input_width {
        return Err(Error::Width { expected: layers[0].input_width, got: inputs.ncols() });
    }
    let mut current = inputs.clone();
    let mut offset = 0;
    for layer in layers {
        let n = layer.param_count();
        let (w, b) = layer_views(layer, &params[offset..offset + n]);
        let mut z = current.dot(&w.t());
        z += &ArrayView2::from_shape((1, b.len()), b).expect("bias row");
        z.mapv_inplace(|v| layer.activation.apply(v));
        if layer.activation == Activation::ArgmaxOnehot {
            for mut row in z.rows_mut() {
                let k = argmax(row.as_slice().expect("contiguous row"));
                row.iter_mut().enumerate().for_each(|(i, v)| *v = if i == k { 1.0 } else { 0.0 });
            }
        }
        current = z;
        offset += n;
    }
    Ok(current)
}

/// Uniform initialisation in `[-INIT_SCALE, INIT_SCALE]`.
pub fn init_params<R: Rng + ?Sized>(layers: &[LayerSpec], rng: &mut R) -> Vec<f64> {
    (0..param_count(layers)).map(|_| rng.random_range(-INIT_SCALE..=INIT_SCALE)).collect()
}

// ---------------------------------------------------------------------------
// Genome
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub module: String,
    pub layer: LayerSpec,
}

/// Flattening order of every parameterised layer in a genome.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenomeLayout {
    pub entries: Vec<LayoutEntry>,
}

impl GenomeLayout {
    pub fn push_module(&mut self, module: &str, layers: &[LayerSpec]) {
        self.entries.extend(layers.iter().map(|&layer| LayoutEntry { module: module.to_string(), layer }));
    }

    pub fn len(&self) -> usize {
        self.entries.iter().map(|e| e.layer.param_count()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn modules(&self) -> Vec<&str> {
        let mut names: Vec<&str> = Vec::new();
        for e in &self.entries {
            if names.last() != Some(&e.module.as_str()) {
                names.push(&e.module);
            }
        }
        names
    }

    pub fn module_spec(&self, module: &str) -> Vec<LayerSpec> {
        self.entries.iter().filter(|e| e.module == module).map(|e| e.layer).collect()
    }

    pub fn module_range(&self, module: &str) -> Option<Range<usize>> {
        let mut offset = 0;
        let mut range: Option<Range<usize>> = None;
        for e in &self.entries {
            let n = e.layer.param_count();
            if e.module == module {
                range = Some(match range {
                    Some(r) => r.start..offset + n,
                    None => offset..offset + n,
                });
            }
            offset += n;
        }
        range
    }
}

/// A named parameterised module, the unit a genome is assembled from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub name: String,
    pub layers: Vec<LayerSpec>,
    pub params: Vec<f64>,
}

impl Network {
    pub fn zeros(name: &str, layers: Vec<LayerSpec>) -> Result<Self> {
        validate_stack(&layers)?;
        let n = param_count(&layers);
        Ok(Network { name: name.to_string(), layers, params: vec![0.0; n] })
    }

    pub fn random<R: Rng + ?Sized>(name: &str, layers: Vec<LayerSpec>, rng: &mut R) -> Result<Self> {
        validate_stack(&layers)?;
        let params = init_params(&layers, rng);
        Ok(Network { name: name.to_string(), layers, params })
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        mlp_forward(&self.layers, &self.params, input)
    }

    pub fn forward_batch(&self, inputs: &Array2<f64>) -> Result<Array2<f64>> {
        forward_batch(&self.layers, &self.params, inputs)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        genome_view(&[self]).save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let genome = Genome::load(path)?;
        let names = genome.layout.modules();
        if names.len() != 1 {
            return Err(Error::Config(format!("{} holds {} modules, expected one", path.display(), names.len())));
        }
        let name = names[0].to_string();
        let layers = genome.layout.module_spec(&name);
        Ok(Network { name, layers, params: genome.values })
    }
}

/// Flat real-valued parameter vector plus the layout that gives it meaning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Genome {
    pub layout: GenomeLayout,
    pub values: Vec<f64>,
}

/// Flattens modules, in the given order, into one genome.
pub fn genome_view(modules: &[&Network]) -> Genome {
    let mut layout = GenomeLayout::default();
    let mut values = Vec::new();
    for m in modules {
        layout.push_module(&m.name, &m.layers);
        values.extend_from_slice(&m.params);
    }
    Genome { layout, values }
}

const GENOME_MAGIC: &[u8; 8] = b"NCGENOME";
const GENOME_VERSION: u32 = 1;

impl Genome {
    pub fn zeros(layout: GenomeLayout) -> Self {
        let n = layout.len();
        Genome { layout, values: vec![0.0; n] }
    }

    pub fn random<R: Rng + ?Sized>(layout: GenomeLayout, rng: &mut R) -> Self {
        let n = layout.len();
        let values = (0..n).map(|_| rng.random_range(-INIT_SCALE..=INIT_SCALE)).collect();
        Genome { layout, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn module(&self, name: &str) -> Option<&[f64]> {
        self.layout.module_range(name).map(|r| &self.values[r])
    }

    /// Writes the genome back into module parameters, matched by name.
    pub fn write_into(&self, modules: &mut [&mut Network]) -> Result<()> {
        for m in modules.iter_mut() {
            let range = self
                .layout
                .module_range(&m.name)
                .ok_or_else(|| Error::Config(format!("module {} not in genome layout", m.name)))?;
            if range.len() != m.params.len() {
                return Err(Error::Width { expected: m.params.len(), got: range.len() });
            }
            m.params.copy_from_slice(&self.values[range]);
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.layout)?;
        let mut out = Vec::with_capacity(24 + header.len() + 8 * self.values.len());
        out.extend_from_slice(GENOME_MAGIC);
        out.extend_from_slice(&GENOME_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Config(format!("corrupt genome file: {msg}"));
        let mut cursor = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if cursor.len() < n {
                return Err(bad("truncated"));
            }
            let (head, rest) = cursor.split_at(n);
            cursor = rest;
            Ok(head)
        };
        if take(8)? != GENOME_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != GENOME_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let header_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let layout: GenomeLayout = serde_json::from_slice(take(header_len)?)?;
        let n = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        if n != layout.len() {
            return Err(bad("value count disagrees with layout"));
        }
        let raw = take(8 * n)?;
        let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Genome { layout, values })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

// ---------------------------------------------------------------------------
// Supervised training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step_count: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            step_count: 0,
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            learning_rate: 1e-3,
        }
    }

    pub fn with_learning_rate(mut self, lr: f64) -> Self {
        self.learning_rate = lr;
        self
    }

    pub fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in
            params.iter_mut().zip(grad).zip(self.first_moment.iter_mut()).zip(self.second_moment.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// A per-sample loss on the network output.
pub trait Loss: Sync {
    /// Returns the loss and writes dLoss/dOutput into `grad`.
    fn evaluate(&self, input: &[f64], output: &[f64], target: &[f64], grad: &mut [f64]) -> f64;
}

/// Softmax cross-entropy applied independently to consecutive output groups.
#[derive(Debug, Clone)]
pub struct SoftmaxCrossEntropy {
    pub groups: Vec<usize>,
}

impl SoftmaxCrossEntropy {
    pub fn single(width: usize) -> Self {
        SoftmaxCrossEntropy { groups: vec![width] }
    }

    pub fn uniform(groups: usize, width: usize) -> Self {
        SoftmaxCrossEntropy { groups: vec![width; groups] }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl Loss for SoftmaxCrossEntropy {
    fn evaluate(&self, _input: &[f64], output: &[f64], target: &[f64], grad: &mut [f64]) -> f64 {
        let mut loss = 0.0;
        let mut offset = 0;
        for &g in &self.groups {
            let probs = softmax(&output[offset..offset + g]);
            for k in 0..g {
                let t = target[offset + k];
                if t > 0.0 {
                    loss -= t * probs[k].max(1e-300).ln();
                }
                grad[offset + k] = probs[k] - t;
            }
            offset += g;
        }
        loss
    }
}

/// Sigmoid cross-entropy on independent logits.
#[derive(Debug, Clone, Copy, Default)]
pub struct BinaryCrossEntropy;

impl Loss for BinaryCrossEntropy {
    fn evaluate(&self, _input: &[f64], output: &[f64], target: &[f64], grad: &mut [f64]) -> f64 {
        let mut loss = 0.0;
        for ((z, t), g) in output.iter().zip(target).zip(grad.iter_mut()) {
            let p = 1.0 / (1.0 + (-z).exp());
            loss -= t * p.max(1e-300).ln() + (1.0 - t) * (1.0 - p).max(1e-300).ln();
            *g = p - t;
        }
        loss
    }
}

/// Mean loss over the batch and its gradient with respect to the parameters.
pub fn loss_gradient(
    layers: &[LayerSpec],
    params: &[f64],
    inputs: &Array2<f64>,
    targets: &Array2<f64>,
    loss: &dyn Loss,
) -> Result<(f64, Vec<f64>)> {
    validate_stack(layers)?;
    if layers.last().map(|l| l.activation) == Some(Activation::ArgmaxOnehot) {
        return Err(Error::Config("cannot differentiate through argmax_onehot".into()));
    }
    let batch = inputs.nrows();
    if batch == 0 {
        return Err(Error::Config("empty batch".into()));
    }

    // Forward, keeping pre-activations and activations per layer.
    let mut activations = vec![inputs.clone()];
    let mut pre = Vec::with_capacity(layers.len());
    let mut offset = 0;
    for layer in layers {
        let n = layer.param_count();
        let (w, b) = layer_views(layer, &params[offset..offset + n]);
        let mut z = activations.last().unwrap().dot(&w.t());
        z += &ArrayView2::from_shape((1, b.len()), b).expect("bias row");
        let a = z.mapv(|v| layer.activation.apply(v));
        pre.push(z);
        activations.push(a);
        offset += n;
    }

    let output = activations.last().unwrap();
    let mut delta = Array2::<f64>::zeros(output.raw_dim());
    let mut total = 0.0;
    let mut grad_row = vec![0.0; output.ncols()];
    for i in 0..batch {
        let out_row = output.row(i);
        let l = loss.evaluate(
            inputs.row(i).as_slice().expect("contiguous"),
            out_row.as_slice().expect("contiguous"),
            targets.row(i).as_slice().expect("contiguous"),
            &mut grad_row,
        );
        total += l;
        delta.row_mut(i).iter_mut().zip(&grad_row).for_each(|(d, g)| *d = g / batch as f64);
    }
    let mean_loss = total / batch as f64;
    if !mean_loss.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss {mean_loss} over batch of {batch}; max |param| = {:.3e}",
            params.iter().fold(0.0f64, |m, p| m.max(p.abs()))
        )));
    }

    let mut grad = vec![0.0; params.len()];
    let mut offset = params.len();
    for (l, layer) in layers.iter().enumerate().rev() {
        let n = layer.param_count();
        offset -= n;
        let z = &pre[l];
        let a = &activations[l + 1];
        ndarray::Zip::from(&mut delta).and(z).and(a).for_each(|d, &z, &a| *d *= layer.activation.derivative(z, a));
        let dw = delta.t().dot(&activations[l]);
        let db: Array1<f64> = delta.sum_axis(Axis(0));
        let slot = &mut grad[offset..offset + n];
        let (gw, gb) = slot.split_at_mut(layer.weight_count());
        gw.copy_from_slice(dw.as_slice().expect("standard layout"));
        gb.copy_from_slice(db.as_slice().expect("standard layout"));
        if l > 0 {
            let (w, _) = layer_views(layer, &params[offset..offset + n]);
            delta = delta.dot(&w);
        }
    }
    Ok((mean_loss, grad))
}

/// One Adam step on the mean batch loss. Returns the loss before the step.
pub fn supervised_update(
    layers: &[LayerSpec],
    params: &mut [f64],
    adam: &mut AdamState,
    inputs: &Array2<f64>,
    targets: &Array2<f64>,
    loss: &dyn Loss,
) -> Result<f64> {
    if adam.first_moment.len() != params.len() {
        return Err(Error::Width { expected: params.len(), got: adam.first_moment.len() });
    }
    let (l, grad) = loss_gradient(layers, params, inputs, targets, loss)?;
    adam.apply(params, &grad);
    Ok(l)
}

/// Stacks equal-width rows into a matrix.
pub fn rows_to_matrix(rows: &[Vec<f64>]) -> Array2<f64> {
    let width = rows.first().map_or(0, Vec::len);
    let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    Array2::from_shape_vec((rows.len(), width), flat).expect("rows share one width")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_linear_layer_maps_to_zero() {
        let layers = [LayerSpec::new(4, 3, Activation::Linear)];
        let out = mlp_forward(&layers, &vec![0.0; 15], &[1.0, -2.0, 3.0, 0.5]).unwrap();
        assert_eq!(out, vec![0.0; 3]);
    }

    #[test]
    fn argmax_ties_resolve_to_lowest_index() {
        // Identity weights, zero bias: the logits pass straight through.
        let layers = [LayerSpec::new(5, 5, Activation::ArgmaxOnehot)];
        let mut params = vec![0.0; 30];
        for i in 0..5 {
            params[i * 5 + i] = 1.0;
        }
        let out = mlp_forward(&layers, &params, &[0.2, 0.9, 0.9, 0.1, 0.0]).unwrap();
        assert_eq!(out, vec![0.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn two_layer_tanh_matches_hand_evaluation() {
        // Layer 1: 2 -> 2 tanh, W = [[0.5, -0.25], [1.0, 0.75]], b = [0.1, -0.2]
        // Layer 2: 2 -> 1 tanh, W = [[2.0, -1.0]], b = [0.3]
        let layers = [LayerSpec::new(2, 2, Activation::Tanh), LayerSpec::new(2, 1, Activation::Tanh)];
        let params = [0.5, -0.25, 1.0, 0.75, 0.1, -0.2, 2.0, -1.0, 0.3];
        let out = mlp_forward(&layers, &params, &[1.0, -1.0]).unwrap();
        // By hand: z1 = (0.5 + 0.25 + 0.1, 1.0 - 0.75 - 0.2) = (0.85, 0.05)
        let h = [0.85f64.tanh(), 0.05f64.tanh()];
        let expected = (2.0 * h[0] - h[1] + 0.3).tanh();
        assert_abs_diff_eq!(out[0], expected, epsilon = 1e-15);
        assert_abs_diff_eq!(out[0], 0.926_371_489_2, epsilon = 1e-9);
    }

    #[test]
    fn width_mismatch_is_a_configuration_error() {
        let layers = [LayerSpec::new(3, 2, Activation::Tanh)];
        assert!(matches!(mlp_forward(&layers, &[0.0; 8], &[1.0, 2.0]), Err(Error::Width { .. })));
    }

    #[test]
    fn argmax_only_allowed_last() {
        let layers = [LayerSpec::new(3, 2, Activation::ArgmaxOnehot), LayerSpec::new(2, 2, Activation::Linear)];
        assert!(validate_stack(&layers).is_err());
    }

    #[test]
    fn nineteen_to_sixteen_layer_counts_320() {
        let layer = LayerSpec::new(19, 16, Activation::Tanh);
        assert_eq!(layer.param_count(), 19 * 16 + 16);
        assert_eq!(layer.param_count(), 320);
    }

    #[test]
    fn zero_genome_gives_activation_of_zero() {
        let mut a = Network::zeros("a", vec![LayerSpec::new(4, 3, Activation::Tanh)]).unwrap();
        let mut b = Network::zeros("b", dense_stack(3, &[5], 2, Activation::LeakyRelu, Activation::Linear)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        a.params = init_params(&a.layers, &mut rng);
        b.params = init_params(&b.layers, &mut rng);
        let zeros = Genome::zeros(genome_view(&[&a, &b]).layout);
        zeros.write_into(&mut [&mut a, &mut b]).unwrap();
        assert_eq!(a.forward(&[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![0.0; 3]);
        assert_eq!(b.forward(&[1.0, 2.0, 3.0]).unwrap(), vec![0.0; 2]);
    }

    #[test]
    fn genome_module_ranges_follow_layout_order() {
        let a = Network::zeros("ctrl", vec![LayerSpec::new(16, 16, Activation::Tanh)]).unwrap();
        let b = Network::zeros("head", dense_stack(19, &[4], 29, Activation::Tanh, Activation::Linear)).unwrap();
        let g = genome_view(&[&a, &b]);
        assert_eq!(g.layout.module_range("ctrl"), Some(0..272));
        assert_eq!(g.layout.module_range("head"), Some(272..272 + 80 + 145));
        assert_eq!(g.layout.modules(), vec!["ctrl", "head"]);
    }

    #[test]
    fn genome_file_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net =
            Network::random("m", dense_stack(6, &[4], 3, Activation::Tanh, Activation::Linear), &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        net.save(&path).unwrap();
        let back = Network::load(&path).unwrap();
        assert_eq!(back, net);
        let x = [0.3, -0.1, 0.9, 0.0, 1.0, -1.0];
        assert_eq!(back.forward(&x).unwrap(), net.forward(&x).unwrap());
    }

    #[test]
    fn corrupt_genome_bytes_are_rejected() {
        assert!(Genome::from_bytes(b"NOTAGENOME").is_err());
        let g = Genome::zeros(
            genome_view(&[&Network::zeros("m", vec![LayerSpec::new(2, 2, Activation::Linear)]).unwrap()]).layout,
        );
        let bytes = g.to_bytes().unwrap();
        assert!(Genome::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }

    fn numeric_gradient(
        layers: &[LayerSpec],
        params: &[f64],
        x: &Array2<f64>,
        y: &Array2<f64>,
        loss: &dyn Loss,
    ) -> Vec<f64> {
        // Central finite differences on the batch-mean loss, evaluated through
        // the single-sample forward path so it shares no code with backprop.
        let mean_loss = |p: &[f64]| -> f64 {
            let mut total = 0.0;
            for i in 0..x.nrows() {
                let input = x.row(i).to_vec();
                let out = mlp_forward(layers, p, &input).unwrap();
                let mut g = vec![0.0; out.len()];
                total += loss.evaluate(&input, &out, y.row(i).as_slice().unwrap(), &mut g);
            }
            total / x.nrows() as f64
        };
        let h = 1e-6;
        (0..params.len())
            .map(|k| {
                let mut plus = params.to_vec();
                let mut minus = params.to_vec();
                plus[k] += h;
                minus[k] -= h;
                (mean_loss(&plus) - mean_loss(&minus)) / (2.0 * h)
            })
            .collect()
    }

    fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-8)).fold(0.0, f64::max)
    }

    #[test]
    fn five_parameter_net_gradient_matches_finite_differences() {
        let layers = [LayerSpec::new(2, 1, Activation::Tanh), LayerSpec::new(1, 1, Activation::Linear)];
        assert_eq!(param_count(&layers), 5);
        let params = [0.4, -0.7, 0.2, 1.3, -0.1];
        let x = rows_to_matrix(&[vec![1.0, 0.5], vec![-0.3, 0.8], vec![0.0, -1.0]]);
        let y = rows_to_matrix(&[vec![1.0], vec![0.0], vec![1.0]]);
        let (_, analytic) = loss_gradient(&layers, &params, &x, &y, &BinaryCrossEntropy).unwrap();
        let numeric = numeric_gradient(&layers, &params, &x, &y, &BinaryCrossEntropy);
        assert!(max_relative_error(&analytic, &numeric) <= 1e-4, "{analytic:?} vs {numeric:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn random_net_gradient_matches_finite_differences(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let layers = dense_stack(4, &[5, 3], 6, Activation::Tanh, Activation::Linear);
            // Larger init than the default so gradients are not vanishingly small.
            let params: Vec<f64> = (0..param_count(&layers)).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = rows_to_matrix(&(0..3).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect::<Vec<_>>());
            let y = rows_to_matrix(&[
                vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            ]);
            let loss = SoftmaxCrossEntropy::uniform(2, 3);
            let (_, analytic) = loss_gradient(&layers, &params, &x, &y, &loss).unwrap();
            let numeric = numeric_gradient(&layers, &params, &x, &y, &loss);
            // Relative error is meaningless for entries that are zero up to
            // finite-difference noise; compare those absolutely.
            for (a, n) in analytic.iter().zip(&numeric) {
                let scale = a.abs().max(n.abs());
                if scale > 1e-6 {
                    prop_assert!((a - n).abs() / scale <= 1e-4, "analytic {} numeric {}", a, n);
                } else {
                    prop_assert!((a - n).abs() <= 1e-9);
                }
            }
        }

        #[test]
        fn leaky_relu_net_gradient_matches(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let layers = dense_stack(3, &[4], 2, Activation::LeakyRelu, Activation::Linear);
            let params: Vec<f64> = (0..param_count(&layers)).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = rows_to_matrix(&[vec![0.31, -0.77, 0.12], vec![-0.5, 0.25, 0.9]]);
            let y = rows_to_matrix(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
            let loss = SoftmaxCrossEntropy::single(2);
            let (_, analytic) = loss_gradient(&layers, &params, &x, &y, &loss).unwrap();
            let numeric = numeric_gradient(&layers, &params, &x, &y, &loss);
            for (a, n) in analytic.iter().zip(&numeric) {
                let scale = a.abs().max(n.abs());
                if scale > 1e-6 {
                    prop_assert!((a - n).abs() / scale <= 1e-4, "analytic {} numeric {}", a, n);
                }
            }
        }

        #[test]
        fn genome_round_trip(values in proptest::collection::vec(-10.0f64..10.0, 272 + 580)) {
            let a = Network::zeros("a", vec![LayerSpec::new(16, 16, Activation::Tanh)]).unwrap();
            let b = Network::zeros("b", vec![LayerSpec::new(19, 29, Activation::Linear)]).unwrap();
            let mut g = genome_view(&[&a, &b]);
            g.values = values.clone();
            let (mut a2, mut b2) = (a.clone(), b.clone());
            g.write_into(&mut [&mut a2, &mut b2]).unwrap();
            prop_assert_eq!(genome_view(&[&a2, &b2]).values, values);
            let bytes = g.to_bytes().unwrap();
            prop_assert_eq!(Genome::from_bytes(&bytes).unwrap(), g);
        }
    }

    #[test]
    fn target_equal_to_softmax_gives_zero_gradient() {
        let layers = [LayerSpec::new(2, 3, Activation::Linear)];
        let params = [0.2, -0.1, 0.4, 0.3, -0.5, 0.1, 0.05, -0.2, 0.3];
        let x = rows_to_matrix(&[vec![0.7, -0.4]]);
        let out = mlp_forward(&layers, &params, &x.row(0).to_vec()).unwrap();
        let y = rows_to_matrix(&[softmax(&out)]);
        let loss = SoftmaxCrossEntropy::single(3);
        let (_, grad) = loss_gradient(&layers, &params, &x, &y, &loss).unwrap();
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!(norm < 1e-12, "gradient norm {norm}");
        let mut p = params.to_vec();
        let mut adam = AdamState::new(p.len());
        supervised_update(&layers, &mut p, &mut adam, &x, &y, &loss).unwrap();
        for (a, b) in p.iter().zip(&params) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn trainer_separates_a_linearly_separable_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // Class = sign of x0 + 0.5 x1 - 0.2, with a margin around the boundary.
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        while xs.len() < 40 {
            let x: [f64; 2] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let s = x[0] + 0.5 * x[1] - 0.2;
            if s.abs() < 0.1 {
                continue;
            }
            xs.push(x.to_vec());
            ys.push(if s > 0.0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] });
        }
        let layers = dense_stack(2, &[8], 2, Activation::Tanh, Activation::Linear);
        let mut params = init_params(&layers, &mut rng);
        let mut adam = AdamState::new(params.len()).with_learning_rate(0.05);
        let loss = SoftmaxCrossEntropy::single(2);
        for i in 0..200 {
            let lo = (i * 20) % 40;
            let x = rows_to_matrix(&xs[lo..lo + 20]);
            let y = rows_to_matrix(&ys[lo..lo + 20]);
            supervised_update(&layers, &mut params, &mut adam, &x, &y, &loss).unwrap();
        }
        let correct =
            xs.iter().zip(&ys).filter(|(x, y)| argmax(&mlp_forward(&layers, &params, x).unwrap()) == argmax(y)).count();
        assert_eq!(correct, xs.len());
        assert_eq!(adam.step_count, 200);
    }

    #[test]
    fn batched_and_single_forward_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let layers = dense_stack(5, &[7], 4, Activation::LeakyRelu, Activation::Linear);
        let params = init_params(&layers, &mut rng);
        let rows: Vec<Vec<f64>> = (0..6).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let batch = forward_batch(&layers, &params, &rows_to_matrix(&rows)).unwrap();
        for (i, r) in rows.iter().enumerate() {
            let single = mlp_forward(&layers, &params, r).unwrap();
            for (a, b) in single.iter().zip(batch.row(i)) {
                assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
            }
        }
    }
}
