//! Supervised training of the learned data modules against oracle labels,
//! with a replay buffer of misclassified samples.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::learned::{difference_features, grid_codec};
use super::{
    insert_change, oracle_local_alu, oracle_view, LearnedAlu, LearnedInput, LearnedOutput, LearnedTransform,
    LocalChange, LocalView,
};
use crate::domains::{Domain, Op, SokobanCodec, OP_COUNT};
use crate::error::{Error, Result};
use crate::smallnet::{rows_to_matrix, supervised_update, AdamState, Loss, SoftmaxCrossEntropy};
use crate::word::DataWord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataTrainConfig {
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Fraction of each batch drawn from the buffer when it is nonempty.
    pub buffer_share: f64,
    pub learning_rate: f64,
    pub max_batches: usize,
    pub eval_every: usize,
    pub validation_size: usize,
    pub heldout_size: usize,
    /// Upper bound on random moves applied to sampled worlds, so training
    /// covers states seen mid-episode.
    pub max_walk: usize,
}

impl Default for DataTrainConfig {
    fn default() -> Self {
        DataTrainConfig {
            batch_size: 20,
            buffer_capacity: 200,
            buffer_share: 0.5,
            learning_rate: 1e-3,
            max_batches: 200_000,
            eval_every: 1_000,
            validation_size: 2_000,
            heldout_size: 10_000,
            max_walk: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub module: String,
    pub domain: String,
    pub batches: usize,
    pub final_loss: f64,
    /// (batch, validation accuracy) at each evaluation point.
    pub validation: Vec<(usize, f64)>,
    pub heldout_size: usize,
    pub heldout_accuracy: f64,
    pub success: bool,
}

/// A learned module together with its oracle-labelled sample generator.
pub trait ModuleTrainer {
    type Sample: Clone + Serialize;

    fn name(&self) -> &'static str;
    fn domain(&self) -> &Domain;
    fn sample(&self, rng: &mut ChaCha8Rng) -> Result<Self::Sample>;
    /// One optimizer step on the batch; returns the batch loss.
    fn update(&mut self, batch: &[Self::Sample]) -> Result<f64>;
    /// Exact agreement with the oracle label, per sample.
    fn correct(&self, samples: &[Self::Sample]) -> Result<Vec<bool>>;
}

fn accuracy<T: ModuleTrainer>(trainer: &T, samples: &[T::Sample]) -> Result<f64> {
    let mut hits = 0;
    for chunk in samples.chunks(1_000) {
        hits += trainer.correct(chunk)?.into_iter().filter(|&c| c).count();
    }
    Ok(hits as f64 / samples.len().max(1) as f64)
}

/// Trains until a validation pass is perfect and a freshly drawn held-out
/// set of `heldout_size` samples is also perfect, or the batch budget runs
/// out. The report marks the run failed in the latter case.
pub fn train_module<T: ModuleTrainer>(trainer: &mut T, config: &DataTrainConfig, seed: u64) -> Result<TrainReport> {
    if config.batch_size == 0 || config.eval_every == 0 {
        return Err(Error::Config("batch size and evaluation interval must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut heldout_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_4e1d_0u64);
    let validation: Vec<T::Sample> =
        (0..config.validation_size).map(|_| trainer.sample(&mut rng)).collect::<Result<_>>()?;
    let mut buffer: VecDeque<T::Sample> = VecDeque::with_capacity(config.buffer_capacity);
    let mut report = TrainReport {
        module: trainer.name().to_string(),
        domain: trainer.domain().name(),
        batches: 0,
        final_loss: f64::NAN,
        validation: Vec::new(),
        heldout_size: config.heldout_size,
        heldout_accuracy: 0.0,
        success: false,
    };

    for b in 1..=config.max_batches {
        let from_buffer = if buffer.is_empty() {
            0
        } else {
            ((config.batch_size as f64 * config.buffer_share).round() as usize).min(config.batch_size)
        };
        let fresh: Vec<T::Sample> =
            (0..config.batch_size - from_buffer).map(|_| trainer.sample(&mut rng)).collect::<Result<_>>()?;
        let mut batch: Vec<T::Sample> =
            (0..from_buffer).map(|_| buffer[rng.random_range(0..buffer.len())].clone()).collect();
        batch.extend(fresh.iter().cloned());
        report.final_loss = trainer.update(&batch)?;
        report.batches = b;

        for (s, ok) in fresh.iter().zip(trainer.correct(&fresh)?) {
            if !ok {
                if buffer.len() == config.buffer_capacity {
                    buffer.pop_front();
                }
                buffer.push_back(s.clone());
            }
        }

        if b % config.eval_every == 0 {
            let still_wrong = trainer.correct(buffer.make_contiguous())?;
            let mut flags = still_wrong.into_iter();
            buffer.retain(|_| !flags.next().unwrap_or(false));

            let acc = accuracy(trainer, &validation)?;
            report.validation.push((b, acc));
            if acc == 1.0 {
                let heldout: Vec<T::Sample> =
                    (0..config.heldout_size).map(|_| trainer.sample(&mut heldout_rng)).collect::<Result<_>>()?;
                report.heldout_accuracy = accuracy(trainer, &heldout)?;
                if report.heldout_accuracy == 1.0 {
                    report.success = true;
                    return Ok(report);
                }
            }
        }
    }
    if report.heldout_accuracy < 1.0 && config.heldout_size > 0 {
        let heldout: Vec<T::Sample> =
            (0..config.heldout_size).map(|_| trainer.sample(&mut heldout_rng)).collect::<Result<_>>()?;
        report.heldout_accuracy = accuracy(trainer, &heldout)?;
        report.success = report.heldout_accuracy == 1.0;
    }
    Ok(report)
}

/// Random world followed by a short random walk.
fn sample_state(domain: &Domain, rng: &mut ChaCha8Rng, max_walk: usize) -> Result<DataWord> {
    let mut w = domain.sample_start(rng);
    for _ in 0..rng.random_range(0..=max_walk) {
        w = domain.apply_action(&w, Op::MOVES[rng.random_range(0..4)])?;
    }
    Ok(w)
}

fn random_op(rng: &mut ChaCha8Rng) -> Op {
    Op::from_index(rng.random_range(0..OP_COUNT)).expect("index in range")
}

fn two_class(flag: bool) -> Vec<f64> {
    if flag {
        vec![0.0, 1.0]
    } else {
        vec![1.0, 0.0]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputSample {
    pub a: DataWord,
    pub b: DataWord,
    pub equal: bool,
}

pub struct InputTrainer {
    pub model: LearnedInput,
    domain: Domain,
    adam: AdamState,
    max_walk: usize,
}

impl InputTrainer {
    pub fn new(domain: Domain, config: &DataTrainConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let model = LearnedInput::new(domain.word_width(), rng)?;
        let adam = AdamState::new(model.net.params.len()).with_learning_rate(config.learning_rate);
        Ok(InputTrainer { model, domain, adam, max_walk: config.max_walk })
    }
}

impl ModuleTrainer for InputTrainer {
    type Sample = InputSample;

    fn name(&self) -> &'static str {
        "input"
    }

    fn domain(&self) -> &Domain {
        &self.domain
    }

    /// Half equal pairs; the rest split between one-move neighbours and
    /// unrelated configurations.
    fn sample(&self, rng: &mut ChaCha8Rng) -> Result<InputSample> {
        let a = sample_state(&self.domain, rng, self.max_walk)?;
        let r: f64 = rng.random();
        let b = if r < 0.5 {
            a.clone()
        } else if r < 0.75 {
            let mut b = self.domain.apply_action(&a, Op::MOVES[rng.random_range(0..4)])?;
            while b == a {
                b = self.domain.sample_start(rng);
            }
            b
        } else {
            sample_state(&self.domain, rng, self.max_walk)?
        };
        let equal = a == b;
        Ok(InputSample { a, b, equal })
    }

    fn update(&mut self, batch: &[InputSample]) -> Result<f64> {
        let x = rows_to_matrix(&batch.iter().map(|s| difference_features(&s.a, &s.b)).collect::<Vec<_>>());
        let t = rows_to_matrix(&batch.iter().map(|s| two_class(s.equal)).collect::<Vec<_>>());
        let net = &mut self.model.net;
        supervised_update(&net.layers, &mut net.params, &mut self.adam, &x, &t, &SoftmaxCrossEntropy::single(2))
    }

    fn correct(&self, samples: &[InputSample]) -> Result<Vec<bool>> {
        let pairs: Vec<(&DataWord, &DataWord)> = samples.iter().map(|s| (&s.a, &s.b)).collect();
        let out = self.model.equal_batch(&pairs)?;
        Ok(out.into_iter().zip(samples).map(|(e, s)| e == s.equal).collect())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransformSample {
    pub word: DataWord,
    pub view: LocalView,
}

pub struct TransformTrainer {
    pub model: LearnedTransform,
    domain: Domain,
    codec: SokobanCodec,
    adam: AdamState,
    max_walk: usize,
}

impl TransformTrainer {
    pub fn new(domain: Domain, config: &DataTrainConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let codec = grid_codec(&domain)?;
        let model = LearnedTransform::new(&domain, rng)?;
        let adam = AdamState::new(model.net.params.len()).with_learning_rate(config.learning_rate);
        Ok(TransformTrainer { model, domain, codec, adam, max_walk: config.max_walk })
    }
}

impl ModuleTrainer for TransformTrainer {
    type Sample = TransformSample;

    fn name(&self) -> &'static str {
        "transform"
    }

    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Result<TransformSample> {
        let word = sample_state(&self.domain, rng, self.max_walk)?;
        let view = oracle_view(&self.codec, &word)?;
        Ok(TransformSample { word, view })
    }

    fn update(&mut self, batch: &[TransformSample]) -> Result<f64> {
        let x = rows_to_matrix(&batch.iter().map(|s| s.word.to_reals()).collect::<Vec<_>>());
        let t = rows_to_matrix(&batch.iter().map(|s| s.view.to_reals(&self.codec)).collect::<Vec<_>>());
        let net = &mut self.model.net;
        supervised_update(&net.layers, &mut net.params, &mut self.adam, &x, &t, &SoftmaxCrossEntropy::uniform(9, 4))
    }

    fn correct(&self, samples: &[TransformSample]) -> Result<Vec<bool>> {
        let words: Vec<&DataWord> = samples.iter().map(|s| &s.word).collect();
        let views = self.model.view_batch(&words)?;
        Ok(views.iter().zip(samples).map(|(v, s)| v == &s.view).collect())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AluSample {
    pub op: Op,
    pub view: LocalView,
    pub changed: bool,
    pub change: LocalChange,
}

pub struct AluTrainer {
    pub model: LearnedAlu,
    domain: Domain,
    codec: SokobanCodec,
    control_adam: AdamState,
    action_adam: AdamState,
    max_walk: usize,
}

impl AluTrainer {
    pub fn new(domain: Domain, config: &DataTrainConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let codec = grid_codec(&domain)?;
        let model = LearnedAlu::new(&domain, rng)?;
        let control_adam = AdamState::new(model.control.params.len()).with_learning_rate(config.learning_rate);
        let action_adam = AdamState::new(model.action.params.len()).with_learning_rate(config.learning_rate);
        Ok(AluTrainer { model, domain, codec, control_adam, action_adam, max_walk: config.max_walk })
    }
}

impl ModuleTrainer for AluTrainer {
    type Sample = AluSample;

    fn name(&self) -> &'static str {
        "alu"
    }

    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Result<AluSample> {
        let word = sample_state(&self.domain, rng, self.max_walk)?;
        let view = oracle_view(&self.codec, &word)?;
        let op = random_op(rng);
        let (changed, change) = oracle_local_alu(op, &view);
        Ok(AluSample { op, view, changed, change })
    }

    fn update(&mut self, batch: &[AluSample]) -> Result<f64> {
        let x: Vec<Vec<f64>> = batch.iter().map(|s| self.model.features(s.op, &s.view)).collect();
        let t: Vec<Vec<f64>> = batch.iter().map(|s| two_class(s.changed)).collect();
        let ctl = &mut self.model.control;
        let mut loss = supervised_update(
            &ctl.layers,
            &mut ctl.params,
            &mut self.control_adam,
            &rows_to_matrix(&x),
            &rows_to_matrix(&t),
            &SoftmaxCrossEntropy::single(2),
        )?;
        let changed: Vec<usize> = (0..batch.len()).filter(|&i| batch[i].changed).collect();
        if !changed.is_empty() {
            let xa: Vec<Vec<f64>> = changed.iter().map(|&i| x[i].clone()).collect();
            let ta: Vec<Vec<f64>> = changed.iter().map(|&i| batch[i].change.to_reals(&self.codec)).collect();
            let act = &mut self.model.action;
            loss += supervised_update(
                &act.layers,
                &mut act.params,
                &mut self.action_adam,
                &rows_to_matrix(&xa),
                &rows_to_matrix(&ta),
                &SoftmaxCrossEntropy::uniform(4, 4),
            )?;
        }
        Ok(loss)
    }

    fn correct(&self, samples: &[AluSample]) -> Result<Vec<bool>> {
        let items: Vec<(Op, &LocalView)> = samples.iter().map(|s| (s.op, &s.view)).collect();
        let out = self.model.apply_batch(&items)?;
        Ok(out.iter().zip(samples).map(|((c, ch), s)| *c == s.changed && ch == &s.change).collect())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputSample {
    pub changed: bool,
    pub change: LocalChange,
    pub d_m: DataWord,
    pub d_o: DataWord,
}

/// Cross-entropy of the target word under the per-cell mixture of "keep
/// the memory cell" and "insert changed cell k", with mixture weights given
/// by a softmax over each cell's four mask logits.
#[derive(Debug, Clone, Copy)]
pub struct MaskInsertionLoss;

const CHANGE_CELLS_AT: usize = 5;
const MEMORY_AT: usize = 17;

impl Loss for MaskInsertionLoss {
    fn evaluate(&self, input: &[f64], output: &[f64], target: &[f64], grad: &mut [f64]) -> f64 {
        let cells = output.len() / 4;
        let mut loss = 0.0;
        for p in 0..cells {
            let t = (0..4).find(|&j| target[4 * p + j] > 0.5).unwrap_or(0);
            let z = &output[4 * p..4 * p + 4];
            let w = crate::smallnet::softmax(z);
            // v[i][t]: does choice i produce the target code at this cell?
            let mut hits = [0.0; 4];
            hits[0] = input[MEMORY_AT + 4 * p + t];
            for k in 0..3 {
                hits[k + 1] = input[CHANGE_CELLS_AT + 4 * k + t];
            }
            let q: f64 = w.iter().zip(&hits).map(|(w, h)| w * h).sum::<f64>().max(1e-12);
            loss -= q.ln();
            for i in 0..4 {
                grad[4 * p + i] = w[i] - w[i] * hits[i] / q;
            }
        }
        loss
    }
}

pub struct OutputTrainer {
    pub model: LearnedOutput,
    domain: Domain,
    codec: SokobanCodec,
    control_adam: AdamState,
    mask_adam: AdamState,
    max_walk: usize,
}

impl OutputTrainer {
    pub fn new(domain: Domain, config: &DataTrainConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let codec = grid_codec(&domain)?;
        let model = LearnedOutput::new(&domain, rng)?;
        let control_adam = AdamState::new(model.control.params.len()).with_learning_rate(config.learning_rate);
        let mask_adam = AdamState::new(model.mask.params.len()).with_learning_rate(config.learning_rate);
        Ok(OutputTrainer { model, domain, codec, control_adam, mask_adam, max_walk: config.max_walk })
    }
}

impl ModuleTrainer for OutputTrainer {
    type Sample = OutputSample;

    fn name(&self) -> &'static str {
        "output"
    }

    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Result<OutputSample> {
        let d_m = sample_state(&self.domain, rng, self.max_walk)?;
        let view = oracle_view(&self.codec, &d_m)?;
        let (changed, change) = oracle_local_alu(random_op(rng), &view);
        let d_o = if changed { insert_change(&self.codec, &change, &d_m)? } else { d_m.clone() };
        Ok(OutputSample { changed, change, d_m, d_o })
    }

    fn update(&mut self, batch: &[OutputSample]) -> Result<f64> {
        let x: Vec<Vec<f64>> = batch.iter().map(|s| self.model.features(s.changed, &s.change, &s.d_m)).collect();
        let t: Vec<Vec<f64>> = batch.iter().map(|s| two_class(s.changed)).collect();
        let ctl = &mut self.model.control;
        let mut loss = supervised_update(
            &ctl.layers,
            &mut ctl.params,
            &mut self.control_adam,
            &rows_to_matrix(&x),
            &rows_to_matrix(&t),
            &SoftmaxCrossEntropy::single(2),
        )?;
        let changed: Vec<usize> = (0..batch.len()).filter(|&i| batch[i].changed).collect();
        if !changed.is_empty() {
            let xm: Vec<Vec<f64>> = changed.iter().map(|&i| x[i].clone()).collect();
            let tm: Vec<Vec<f64>> = changed.iter().map(|&i| batch[i].d_o.to_reals()).collect();
            let mask = &mut self.model.mask;
            loss += supervised_update(
                &mask.layers,
                &mut mask.params,
                &mut self.mask_adam,
                &rows_to_matrix(&xm),
                &rows_to_matrix(&tm),
                &MaskInsertionLoss,
            )?;
        }
        Ok(loss)
    }

    fn correct(&self, samples: &[OutputSample]) -> Result<Vec<bool>> {
        let items: Vec<(bool, &LocalChange, &DataWord)> =
            samples.iter().map(|s| (s.changed, &s.change, &s.d_m)).collect();
        let out = self.model.insert_batch(&items)?;
        Ok(out.iter().zip(samples).map(|((c, d), s)| *c == s.changed && d == &s.d_o).collect())
    }
}

pub fn train_input(domain: &Domain, config: &DataTrainConfig, seed: u64) -> Result<(LearnedInput, TrainReport)> {
    let mut trainer = InputTrainer::new(domain.clone(), config, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let report = train_module(&mut trainer, config, seed.wrapping_add(1))?;
    Ok((trainer.model, report))
}

pub fn train_transform(
    domain: &Domain,
    config: &DataTrainConfig,
    seed: u64,
) -> Result<(LearnedTransform, TrainReport)> {
    let mut trainer = TransformTrainer::new(domain.clone(), config, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let report = train_module(&mut trainer, config, seed.wrapping_add(1))?;
    Ok((trainer.model, report))
}

pub fn train_alu(domain: &Domain, config: &DataTrainConfig, seed: u64) -> Result<(LearnedAlu, TrainReport)> {
    let mut trainer = AluTrainer::new(domain.clone(), config, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let report = train_module(&mut trainer, config, seed.wrapping_add(1))?;
    Ok((trainer.model, report))
}

pub fn train_output(domain: &Domain, config: &DataTrainConfig, seed: u64) -> Result<(LearnedOutput, TrainReport)> {
    let mut trainer = OutputTrainer::new(domain.clone(), config, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let report = train_module(&mut trainer, config, seed.wrapping_add(1))?;
    Ok((trainer.model, report))
}

/// Writes samples as JSON lines, one labelled pair per line.
pub fn write_corpus<S: Serialize>(path: &Path, samples: &[S]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in samples {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
