//! Experiment configuration, the commands behind the CLI, and their on-disk
//! artifacts.
//!
//! Every command is a pure function of its [`ExperimentConfig`]: seeds fix
//! all randomness and every log embeds a hash of the configuration.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data_modules::{
    train_alu, train_input, train_output, train_transform, DataModules, DataTrainConfig, TrainReport,
};
use crate::domains::{
    bfs_tree, sample_task, sample_task_min_steps, trace_from_tree, CellPermutation, Domain, TargetTrace, TaskInstance,
    TaskKind, DEFAULT_EXPANSION_CAP,
};
use crate::engine::{
    configure_ablation, solves_exactly, write_trace_jsonl, Ablation, AlgorithmicCore, Engine, EngineConfig, NeuralCore,
    ReferenceProgram, Termination,
};
use crate::error::{Error, Result};
use crate::smallnet::Genome;
use crate::training::{
    evaluate_levels, train_from, CurriculumConfig, CurriculumEvent, EvalReport, IterationLog, NesConfig, Normalization,
    TrainConfig, TrainObserver,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    TrainSearch,
    TrainPlan,
    /// Search and plan runs for every seed.
    TrainBoth,
    EvalGeneralization,
    TransferRepresentation,
    TransferDomain,
    ScaleTest,
    Ablation,
    TrainDataModules,
    OracleTrace,
}

/// Architecture and training variants compared by the ablation command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    NoConstrainedHead,
    TwoFreeHeads,
    NoUsageLinkage,
    SoftAttention,
    NoBadMemories,
    NoRestarts,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Full,
        Variant::NoConstrainedHead,
        Variant::TwoFreeHeads,
        Variant::NoUsageLinkage,
        Variant::SoftAttention,
        Variant::NoBadMemories,
        Variant::NoRestarts,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoConstrainedHead => "no-constrained-head",
            Variant::TwoFreeHeads => "two-free-heads",
            Variant::NoUsageLinkage => "no-usage-linkage",
            Variant::SoftAttention => "soft-attention",
            Variant::NoBadMemories => "no-bad-memories",
            Variant::NoRestarts => "no-restarts",
        }
    }

    /// Applies the variant to a training configuration.
    pub fn apply(self, config: &mut TrainConfig) -> Result<()> {
        let ablation = match self {
            Variant::Full | Variant::NoBadMemories | Variant::NoRestarts => Ablation::Full,
            Variant::NoConstrainedHead => Ablation::NoConstrainedHead,
            Variant::TwoFreeHeads => Ablation::TwoFreeHeads,
            Variant::NoUsageLinkage => Ablation::NoUsageLinkage,
            Variant::SoftAttention => Ablation::SoftAttention,
        };
        config.engine = configure_ablation(config.engine, ablation)?;
        match self {
            Variant::NoBadMemories => config.curriculum.buffer_capacity = 0,
            Variant::NoRestarts => config.nes.restart_window = usize::MAX,
            _ => {}
        }
        Ok(())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

/// A full experiment description, loadable from a JSON preset. Missing
/// fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub kind: ExperimentKind,
    /// Task for train-free commands (eval, transfer, scale test, oracle).
    pub task: TaskKind,
    /// `sokoban<N>`, `puzzle` or `manipulation`.
    pub domain: String,
    /// Cell-code permutation for Sokoban, e.g. `"0321"`.
    pub permutation: Option<String>,
    pub seeds: Vec<u64>,
    pub nes: NesConfig,
    pub curriculum: CurriculumConfig,
    pub engine: EngineConfig,
    pub fitness: Normalization,
    pub variants: Vec<Variant>,
    /// Algorithmic parameters; `None` runs the reference program.
    pub genome: Option<PathBuf>,
    /// Directory of learned data modules; `None` uses the oracle modules.
    pub data_modules: Option<PathBuf>,
    pub eval_samples: usize,
    pub eval_max_level: usize,
    /// All-level autonomous evaluation after each training run.
    pub post_eval_samples: usize,
    /// Transfer runs the curriculum on the target domain for this many
    /// iterations before evaluating.
    pub transfer_budget: usize,
    pub min_steps: usize,
    pub scale_tasks: usize,
    pub sample_attempts: usize,
    pub data_train: DataTrainConfig,
    /// Modules for `train-data-modules`; empty means every learnable one.
    pub modules: Vec<String>,
    /// Oracle level for `oracle-trace`; ignored when `task_file` is given.
    pub level: usize,
    pub task_file: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            kind: ExperimentKind::TrainSearch,
            task: TaskKind::Plan,
            domain: "sokoban6".into(),
            permutation: None,
            seeds: vec![1],
            nes: NesConfig::default(),
            curriculum: CurriculumConfig::default(),
            engine: EngineConfig::default(),
            fitness: Normalization::default(),
            variants: vec![Variant::Full],
            genome: None,
            data_modules: None,
            eval_samples: 2_000,
            eval_max_level: 21,
            post_eval_samples: 0,
            transfer_budget: 0,
            min_steps: 10_000,
            scale_tasks: 1,
            sample_attempts: 10_000,
            data_train: DataTrainConfig::default(),
            modules: Vec::new(),
            level: 3,
            task_file: None,
            out: PathBuf::from("runs/experiment"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form with the output directory
    /// cleared, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(&ExperimentConfig { out: PathBuf::new(), ..self.clone() })
            .expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn domain(&self) -> Result<Domain> {
        parse_domain(&self.domain, self.permutation.as_deref())
    }

    pub fn validate(&self) -> Result<()> {
        self.domain()?;
        self.nes.validate()?;
        self.engine.validate()?;
        for (what, path) in
            [("genome", &self.genome), ("data module directory", &self.data_modules), ("task file", &self.task_file)]
        {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(Error::Config(format!("{what} {} does not exist", p.display())));
                }
            }
        }
        if self.seeds.is_empty()
            && matches!(
                self.kind,
                ExperimentKind::TrainSearch
                    | ExperimentKind::TrainPlan
                    | ExperimentKind::TrainBoth
                    | ExperimentKind::Ablation
            )
        {
            return Err(Error::Config("training needs at least one seed".into()));
        }
        Ok(())
    }

    fn seed(&self) -> u64 {
        self.seeds.first().copied().unwrap_or(0)
    }

    fn modules(&self, domain: &Domain) -> Result<DataModules> {
        match &self.data_modules {
            Some(dir) => DataModules::load_dir(domain.clone(), dir),
            None => Ok(DataModules::oracle(domain.clone())),
        }
    }

    fn core(&self) -> Result<Box<dyn AlgorithmicCore>> {
        match &self.genome {
            Some(path) => Ok(Box::new(NeuralCore::new(Genome::load(path)?)?)),
            None => Ok(Box::new(ReferenceProgram)),
        }
    }

    fn genome_label(&self) -> String {
        self.genome.as_ref().map_or_else(|| "reference".into(), |p| p.display().to_string())
    }
}

/// Parses `sokoban<N>`, `puzzle` or `manipulation`, with an optional cell
/// permutation for Sokoban.
pub fn parse_domain(name: &str, permutation: Option<&str>) -> Result<Domain> {
    let domain = match name {
        "puzzle" => Domain::Puzzle,
        "manipulation" => Domain::Manipulation,
        s => {
            let size: usize = s
                .strip_prefix("sokoban")
                .and_then(|n| n.parse().ok())
                .ok_or_else(|| Error::Config(format!("unknown domain {name:?}")))?;
            if !(3..=16).contains(&size) {
                return Err(Error::Config(format!("sokoban size {size} out of range 3..=16")));
            }
            match permutation {
                Some(p) => Domain::sokoban_remapped(size, p.parse::<CellPermutation>()?),
                None => Domain::sokoban(size),
            }
        }
    };
    if permutation.is_some() && !matches!(domain, Domain::Sokoban(_)) {
        return Err(Error::Config("a cell permutation only applies to Sokoban".into()));
    }
    Ok(domain)
}

fn jsonl_writer(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

#[derive(Serialize)]
struct LogLine<'a> {
    config_hash: &'a str,
    #[serde(flatten)]
    log: &'a IterationLog,
}

#[derive(Serialize)]
struct EventLine<'a, T: Serialize> {
    config_hash: &'a str,
    #[serde(flatten)]
    event: &'a T,
}

/// Learning statistics of one lineage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LineageStats {
    pub lineage: usize,
    pub iterations: usize,
    /// Iterations that triggered an update, per level.
    pub learning_iterations: BTreeMap<usize, usize>,
    pub solved: Vec<usize>,
    pub solved_at: BTreeMap<usize, usize>,
}

impl LineageStats {
    pub fn highest_solved(&self) -> usize {
        self.solved.iter().copied().max().unwrap_or(0)
    }

    /// The last level that triggered learning, when later levels were
    /// solved without any update.
    pub fn generalized_after(&self) -> Option<usize> {
        let last_learning = self.learning_iterations.iter().filter(|(_, &n)| n > 0).map(|(&l, _)| l).max()?;
        self.solved.iter().any(|&l| l > last_learning).then_some(last_learning)
    }
}

/// Writes iteration logs, events and checkpoints for one training run.
struct RunWriter<'a> {
    dir: &'a Path,
    hash: &'a str,
    jsonl: BufWriter<File>,
    csv: csv::Writer<File>,
    events: BufWriter<File>,
    lineages: Vec<LineageStats>,
}

impl<'a> RunWriter<'a> {
    fn new(dir: &'a Path, hash: &'a str) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(RunWriter {
            dir,
            hash,
            jsonl: jsonl_writer(&dir.join("run.jsonl"))?,
            csv: csv::Writer::from_path(dir.join("run.csv"))?,
            events: jsonl_writer(&dir.join("events.jsonl"))?,
            lineages: vec![LineageStats::default()],
        })
    }

    fn lineage(&mut self, id: usize) -> &mut LineageStats {
        while self.lineages.len() <= id {
            let lineage = self.lineages.len();
            self.lineages.push(LineageStats { lineage, ..LineageStats::default() });
        }
        &mut self.lineages[id]
    }

    fn write_event<T: Serialize>(&mut self, event: &T) -> Result<()> {
        serde_json::to_writer(&mut self.events, &EventLine { config_hash: self.hash, event })?;
        self.events.write_all(b"\n")?;
        Ok(())
    }

    fn finish(mut self) -> Result<Vec<LineageStats>> {
        for stats in self.lineages.clone() {
            if let Some(after) = stats.generalized_after() {
                let without: Vec<usize> = stats.solved.iter().copied().filter(|&l| l > after).collect();
                self.write_event(&serde_json::json!({
                    "event": "generalization",
                    "lineage": stats.lineage,
                    "after_level": after,
                    "solved_without_learning": without,
                }))?;
            }
        }
        self.jsonl.flush()?;
        self.csv.flush()?;
        self.events.flush()?;
        Ok(self.lineages)
    }
}

impl TrainObserver for RunWriter<'_> {
    fn iteration(&mut self, log: &IterationLog) -> Result<()> {
        serde_json::to_writer(&mut self.jsonl, &LogLine { config_hash: self.hash, log })?;
        self.jsonl.write_all(b"\n")?;
        self.csv.serialize(log)?;
        let stats = self.lineage(log.lineage);
        stats.iterations += 1;
        *stats.learning_iterations.entry(log.level).or_default() += usize::from(log.updated);
        Ok(())
    }

    fn event(&mut self, event: &CurriculumEvent, genome: &Genome) -> Result<()> {
        self.write_event(event)?;
        if let CurriculumEvent::LevelSolved { iteration, level, lineage } = *event {
            genome.save(&self.dir.join(format!("genome_level{level}.bin")))?;
            let stats = self.lineage(lineage);
            stats.solved.push(level);
            stats.solved_at.insert(level, iteration);
        }
        Ok(())
    }
}

/// Result of one training run, also written as `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub seed: u64,
    pub domain: String,
    pub kind: TaskKind,
    pub variant: Variant,
    pub iterations: usize,
    pub final_level: usize,
    /// Highest level solved by any lineage.
    pub best_level: usize,
    pub evaluated: bool,
    pub lineages: Vec<LineageStats>,
    pub post_eval: Option<EvalReport>,
    pub wall_seconds: f64,
}

impl RunSummary {
    /// Whether some lineage solved `level`.
    pub fn solved(&self, level: usize) -> bool {
        self.lineages.iter().any(|l| l.solved.contains(&level))
    }
}

/// One seeded training run written to `dir`.
pub fn run_training(
    config: &ExperimentConfig,
    kind: TaskKind,
    variant: Variant,
    seed: u64,
    initial: Option<Genome>,
    dir: &Path,
) -> Result<RunSummary> {
    let domain = config.domain()?;
    let modules = config.modules(&domain)?;
    let mut train = TrainConfig {
        domain: domain.clone(),
        kind,
        nes: config.nes,
        curriculum: config.curriculum,
        engine: config.engine,
        fitness: config.fitness,
        seed,
    };
    variant.apply(&mut train)?;
    let hash = config.hash();
    let started = Instant::now();
    let mut writer = RunWriter::new(dir, &hash)?;
    let outcome = {
        let initial = match initial {
            Some(g) => g,
            // Same draw as the trainer's own fresh genome.
            None => NeuralCore::random(&mut ChaCha8Rng::seed_from_u64(seed)).into_genome(),
        };
        initial.save(&dir.join("genome_initial.bin"))?;
        train_from(&train, &modules, &mut writer, Some(initial))?
    };
    outcome.genome.save(&dir.join("genome_final.bin"))?;
    let lineages = writer.finish()?;
    let post_eval = if config.post_eval_samples > 0 {
        let core = NeuralCore::new(outcome.genome.clone())?;
        let level = config.curriculum.max_level;
        Some(evaluate_levels(
            &core,
            &modules,
            train.engine,
            kind,
            level,
            config.post_eval_samples,
            seed.wrapping_add(1),
        )?)
    } else {
        None
    };
    let state = &outcome.state;
    let summary = RunSummary {
        config_hash: hash,
        seed,
        domain: domain.name(),
        kind,
        variant,
        iterations: state.iteration,
        final_level: state.level,
        best_level: lineages.iter().map(LineageStats::highest_solved).max().unwrap_or(0),
        evaluated: state.finished && state.solved.contains(&config.curriculum.evaluation_level()),
        lineages,
        post_eval,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

fn task_name(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::Search => "search",
        TaskKind::Plan => "plan",
    }
}

/// Training runs over every seed (and both tasks for `train-both`).
pub fn cmd_train(config: &ExperimentConfig) -> Result<Vec<RunSummary>> {
    config.validate()?;
    let kinds = match config.kind {
        ExperimentKind::TrainSearch => vec![TaskKind::Search],
        ExperimentKind::TrainPlan => vec![TaskKind::Plan],
        ExperimentKind::TrainBoth => vec![TaskKind::Search, TaskKind::Plan],
        other => return Err(Error::Config(format!("{other:?} is not a training experiment"))),
    };
    let initial = config.genome.as_deref().map(Genome::load).transpose()?;
    let variant = config.variants.first().copied().unwrap_or(Variant::Full);
    fs::create_dir_all(&config.out)?;
    config.save(&config.out.join("config.json"))?;
    let mut runs = Vec::new();
    for &kind in &kinds {
        for &seed in &config.seeds {
            let mut dir = config.out.clone();
            if kinds.len() > 1 {
                dir.push(task_name(kind));
            }
            dir.push(format!("seed{seed}"));
            runs.push(run_training(config, kind, variant, seed, initial.clone(), &dir)?);
        }
    }
    write_json(&config.out.join("summary.json"), &runs)?;
    Ok(runs)
}

/// Ablation study: every variant, every seed.
pub fn cmd_ablate(config: &ExperimentConfig) -> Result<Vec<RunSummary>> {
    config.validate()?;
    fs::create_dir_all(&config.out)?;
    config.save(&config.out.join("config.json"))?;
    let mut runs = Vec::new();
    for &variant in &config.variants {
        for &seed in &config.seeds {
            let dir = config.out.join(variant.name()).join(format!("seed{seed}"));
            runs.push(run_training(config, config.task, variant, seed, None, &dir)?);
        }
    }
    write_json(&config.out.join("summary.json"), &runs)?;
    Ok(runs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub config_hash: String,
    pub genome: String,
    pub report: EvalReport,
    pub wall_seconds: f64,
}

/// Autonomous exact-match evaluation with frozen algorithmic parameters.
pub fn cmd_eval(config: &ExperimentConfig) -> Result<EvalSummary> {
    config.validate()?;
    let domain = config.domain()?;
    let modules = config.modules(&domain)?;
    let core = config.core()?;
    let started = Instant::now();
    let report = evaluate_levels(
        core.as_ref(),
        &modules,
        config.engine,
        config.task,
        config.eval_max_level,
        config.eval_samples,
        config.seed(),
    )?;
    let summary = EvalSummary {
        config_hash: config.hash(),
        genome: config.genome_label(),
        report,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    fs::create_dir_all(&config.out)?;
    write_json(&config.out.join("eval.json"), &summary)?;
    let mut csv = csv::Writer::from_path(config.out.join("eval.csv"))?;
    for level in &summary.report.levels {
        csv.serialize(level)?;
    }
    csv.flush()?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferSummary {
    pub config_hash: String,
    pub genome: String,
    pub domain: String,
    /// Curriculum run on the target domain from the frozen parameters.
    pub run: Option<RunSummary>,
    /// Whether the curriculum run never updated the parameters.
    pub no_learning_triggered: Option<bool>,
    pub eval: EvalReport,
}

/// Transfer of frozen algorithmic parameters to a new representation or
/// domain: an optional curriculum run that must not trigger learning, then
/// an exact-match evaluation.
pub fn cmd_transfer(config: &ExperimentConfig) -> Result<TransferSummary> {
    config.validate()?;
    let domain = config.domain()?;
    let modules = config.modules(&domain)?;
    let genome = match &config.genome {
        Some(p) => Genome::load(p)?,
        None => ReferenceProgram::genome(),
    };
    fs::create_dir_all(&config.out)?;
    config.save(&config.out.join("config.json"))?;
    let run = if config.transfer_budget > 0 {
        let mut c = config.clone();
        c.nes.budget = config.transfer_budget;
        let dir = config.out.join("curriculum");
        Some(run_training(&c, config.task, Variant::Full, config.seed(), Some(genome.clone()), &dir)?)
    } else {
        None
    };
    let no_learning_triggered = run
        .as_ref()
        .map(|r| r.lineages.len() == 1 && r.lineages.iter().all(|l| l.learning_iterations.values().all(|&n| n == 0)));
    let core = NeuralCore::new(genome)?;
    let eval = evaluate_levels(
        &core,
        &modules,
        config.engine,
        config.task,
        config.eval_max_level,
        config.eval_samples,
        config.seed(),
    )?;
    let summary = TransferSummary {
        config_hash: config.hash(),
        genome: config.genome_label(),
        domain: domain.name(),
        run,
        no_learning_triggered,
        eval,
    };
    write_json(&config.out.join("transfer.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleResult {
    pub level: usize,
    pub trace_steps: usize,
    pub solved: bool,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSummary {
    pub config_hash: String,
    pub genome: String,
    pub domain: String,
    pub min_steps: usize,
    pub tasks: Vec<ScaleResult>,
}

/// Autonomous runs on tasks whose oracle trace has at least `min_steps`
/// steps.
pub fn cmd_scale_test(config: &ExperimentConfig) -> Result<ScaleSummary> {
    config.validate()?;
    let domain = config.domain()?;
    let modules = config.modules(&domain)?;
    let core = config.core()?;
    let mut engine_config = config.engine;
    engine_config.max_steps = engine_config.max_steps.max(2 * config.min_steps);
    let engine = Engine::new(core.as_ref(), &modules, engine_config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed());
    let mut tasks = Vec::new();
    for _ in 0..config.scale_tasks {
        let (task, trace) =
            sample_task_min_steps(&mut rng, &domain, config.task, config.min_steps, config.sample_attempts)?;
        let started = Instant::now();
        let solved = solves_exactly(&engine, &task, &trace)?;
        tasks.push(ScaleResult {
            level: task.level,
            trace_steps: trace.total_steps(),
            solved,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    let summary = ScaleSummary {
        config_hash: config.hash(),
        genome: config.genome_label(),
        domain: domain.name(),
        min_steps: config.min_steps,
        tasks,
    };
    fs::create_dir_all(&config.out)?;
    write_json(&config.out.join("scale.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub task: TaskInstance,
    pub level: usize,
    pub depth: usize,
    pub trace_steps: usize,
    pub model_steps: usize,
    pub termination: Termination,
    pub matches_trace: bool,
}

/// Oracle trace, search tree and the model's step records for one task.
/// Writes `task.json`, `trace.json`, `tree.dot`, `steps.jsonl` and
/// `oracle.json`.
pub fn cmd_oracle(config: &ExperimentConfig) -> Result<(OracleSummary, TargetTrace)> {
    config.validate()?;
    let domain = config.domain()?;
    let task = match &config.task_file {
        Some(path) => {
            let task: TaskInstance = serde_json::from_str(&fs::read_to_string(path)?)?;
            if task.domain != domain {
                return Err(Error::Config(format!("task file is for {}, not {}", task.domain.name(), domain.name())));
            }
            task
        }
        None => sample_task(&mut ChaCha8Rng::seed_from_u64(config.seed()), &domain, config.level)?,
    };
    let tree = bfs_tree(&domain, &task.start, &task.goal, DEFAULT_EXPANSION_CAP)?;
    let trace = trace_from_tree(&tree, config.task);
    let modules = config.modules(&domain)?;
    let core = config.core()?;
    let engine = Engine::new(core.as_ref(), &modules, config.engine)?;
    let episode = engine.run_autonomous_recorded(&task, config.task)?;
    fs::create_dir_all(&config.out)?;
    write_json(&config.out.join("task.json"), &task)?;
    write_json(&config.out.join("trace.json"), &trace)?;
    fs::write(config.out.join("tree.dot"), tree.to_dot(&domain))?;
    write_trace_jsonl(&episode.records, &config.out.join("steps.jsonl"))?;
    let summary = OracleSummary {
        level: tree.level,
        depth: tree.depth(),
        trace_steps: trace.total_steps(),
        model_steps: episode.records.len(),
        termination: episode.termination,
        matches_trace: episode.matches_trace(&trace),
        task,
    };
    write_json(&config.out.join("oracle.json"), &summary)?;
    Ok((summary, trace))
}

/// Modules with a learned implementation for the domain.
pub fn learnable_modules(domain: &Domain) -> Vec<&'static str> {
    match domain {
        Domain::Sokoban(_) => vec!["input", "transform", "alu", "output"],
        Domain::Puzzle | Domain::Manipulation => vec!["input"],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataTrainSummary {
    pub config_hash: String,
    pub domain: String,
    pub reports: Vec<TrainReport>,
    pub success: bool,
}

/// Supervised training of the learned data modules. Each module is saved as
/// `<module>.bin` in the output directory, ready for `data_modules`.
pub fn cmd_train_data(config: &ExperimentConfig) -> Result<DataTrainSummary> {
    config.validate()?;
    let domain = config.domain()?;
    let available = learnable_modules(&domain);
    let wanted: Vec<String> = if config.modules.is_empty() {
        available.iter().map(|s| s.to_string()).collect()
    } else {
        config.modules.clone()
    };
    fs::create_dir_all(&config.out)?;
    let seed = config.seed();
    let mut reports = Vec::new();
    for name in &wanted {
        if !available.contains(&name.as_str()) {
            return Err(Error::Config(format!("no learned {name} module for {}", domain.name())));
        }
        let path = config.out.join(format!("{name}.bin"));
        let report = match name.as_str() {
            "input" => train_input(&domain, &config.data_train, seed).and_then(|(m, r)| m.save(&path).map(|_| r))?,
            "transform" => {
                train_transform(&domain, &config.data_train, seed).and_then(|(m, r)| m.save(&path).map(|_| r))?
            }
            "alu" => train_alu(&domain, &config.data_train, seed).and_then(|(m, r)| m.save(&path).map(|_| r))?,
            _ => train_output(&domain, &config.data_train, seed).and_then(|(m, r)| m.save(&path).map(|_| r))?,
        };
        write_json(&config.out.join(format!("{name}.json")), &report)?;
        reports.push(report);
    }
    let success = reports.iter().all(|r| r.success);
    let summary = DataTrainSummary { config_hash: config.hash(), domain: domain.name(), reports, success };
    write_json(&config.out.join("summary.json"), &summary)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp_config(kind: ExperimentKind, dir: &Path) -> ExperimentConfig {
        ExperimentConfig { kind, out: dir.to_path_buf(), ..ExperimentConfig::default() }
    }

    #[test]
    fn domains_parse() {
        assert_eq!(parse_domain("sokoban8", None).unwrap(), Domain::sokoban(8));
        assert_eq!(parse_domain("puzzle", None).unwrap(), Domain::Puzzle);
        assert_eq!(parse_domain("sokoban6", Some("0321")).unwrap().name(), "sokoban6x6-0321");
        assert!(parse_domain("puzzle", Some("0321")).is_err());
        assert!(parse_domain("chess", None).is_err());
        assert!(parse_domain("sokoban6", Some("0021")).is_err());
    }

    #[test]
    fn partial_json_takes_defaults() {
        let c: ExperimentConfig =
            serde_json::from_str(r#"{"kind":"train-plan","nes":{"budget":5},"seeds":[3,4]}"#).unwrap();
        assert_eq!(c.kind, ExperimentKind::TrainPlan);
        assert_eq!(c.nes.budget, 5);
        assert_eq!(c.nes.population, 20);
        assert_eq!(c.seeds, vec![3, 4]);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"budget":5}"#).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seeds = vec![2];
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn variants_round_trip_and_configure() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            let mut t = TrainConfig::new(Domain::sokoban(6), TaskKind::Search, 1);
            v.apply(&mut t).unwrap();
            assert_eq!(t.curriculum.buffer_capacity == 0, v == Variant::NoBadMemories);
            assert_eq!(t.nes.restart_window == usize::MAX, v == Variant::NoRestarts);
            assert_eq!(!t.engine.hard_attention, v == Variant::SoftAttention);
        }
    }

    #[test]
    fn missing_genome_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = tmp_config(ExperimentKind::EvalGeneralization, dir.path());
        c.genome = Some(dir.path().join("nope.bin"));
        assert!(matches!(cmd_eval(&c), Err(Error::Config(_))));
    }

    #[test]
    fn zero_budget_writes_initial_checkpoint_only() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = tmp_config(ExperimentKind::TrainSearch, dir.path());
        c.nes.budget = 0;
        let runs = cmd_train(&c).unwrap();
        assert_eq!(runs[0].iterations, 0);
        let run = dir.path().join("seed1");
        assert_eq!(fs::read_to_string(run.join("run.jsonl")).unwrap(), "");
        assert!(run.join("genome_initial.bin").exists());
        assert!(!run.join("genome_level1.bin").exists());
    }

    #[test]
    fn reference_training_checkpoints_every_level_and_generalizes() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = tmp_config(ExperimentKind::TrainPlan, dir.path());
        c.genome = Some(dir.path().join("reference.bin"));
        ReferenceProgram::genome().save(c.genome.as_ref().unwrap()).unwrap();
        c.out = dir.path().join("out");
        c.nes.budget = 50;
        c.nes.population = 2;
        c.nes.minibatch = 2;
        c.curriculum.max_level = 3;
        c.curriculum.solve_streak = 3;
        let runs = cmd_train(&c).unwrap();
        let run = &runs[0];
        assert!(run.evaluated);
        assert_eq!(run.lineages[0].solved, vec![1, 2, 3, 4]);
        assert_eq!(run.iterations, 12);
        for level in 1..=4 {
            assert!(c.out.join(format!("seed1/genome_level{level}.bin")).exists());
        }
        // No update anywhere, so there is no level after which it generalized.
        assert_eq!(run.lineages[0].generalized_after(), None);
        let lines = fs::read_to_string(c.out.join("seed1/run.jsonl")).unwrap();
        assert_eq!(lines.lines().count(), 12);
        assert!(lines.lines().all(|l| l.contains(&run.config_hash)));
    }

    #[test]
    fn generalization_needs_a_solved_level_past_the_last_update() {
        let mut s = LineageStats::default();
        s.learning_iterations.insert(1, 40);
        s.learning_iterations.insert(2, 0);
        s.solved = vec![1];
        assert_eq!(s.generalized_after(), None);
        s.solved.push(2);
        assert_eq!(s.generalized_after(), Some(1));
    }

    #[test]
    fn training_runs_are_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let run = |sub: &str| {
            let mut c = tmp_config(ExperimentKind::TrainSearch, &dir.path().join(sub));
            c.nes.budget = 4;
            c.nes.population = 3;
            c.nes.minibatch = 3;
            cmd_train(&c).unwrap();
            let strip = |text: String| -> Vec<serde_json::Value> {
                text.lines()
                    .map(|l| {
                        let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
                        v["wall_ms"] = 0.into();
                        v
                    })
                    .collect()
            };
            let out = dir.path().join(sub).join("seed1");
            (strip(fs::read_to_string(out.join("run.jsonl")).unwrap()), fs::read(out.join("genome_final.bin")).unwrap())
        };
        assert_eq!(run("a"), run("b"));
    }

    #[test]
    fn eval_does_not_touch_the_genome_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.bin");
        ReferenceProgram::genome().save(&path).unwrap();
        let before = fs::read(&path).unwrap();
        let mut c = tmp_config(ExperimentKind::EvalGeneralization, dir.path());
        c.genome = Some(path.clone());
        c.eval_samples = 12;
        c.eval_max_level = 6;
        let s = cmd_eval(&c).unwrap();
        assert_eq!(s.report.correct, 12);
        assert_eq!(fs::read(&path).unwrap(), before);
        assert!(dir.path().join("eval.csv").exists());
    }

    #[test]
    fn transfer_to_puzzle_triggers_no_learning() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = tmp_config(ExperimentKind::TransferDomain, dir.path());
        c.domain = "puzzle".into();
        c.transfer_budget = 8;
        c.nes.population = 2;
        c.nes.minibatch = 2;
        c.curriculum.solve_streak = 2;
        c.curriculum.max_level = 3;
        c.eval_samples = 6;
        c.eval_max_level = 7;
        let s = cmd_transfer(&c).unwrap();
        assert_eq!(s.no_learning_triggered, Some(true));
        assert_eq!(s.eval.correct, 6);
    }

    #[test]
    fn oracle_level_three_plan() {
        let dir = tempfile::tempdir().unwrap();
        let c = tmp_config(ExperimentKind::OracleTrace, dir.path());
        let (s, trace) = cmd_oracle(&c).unwrap();
        assert_eq!(s.level, 3);
        // Eight steps for the first two nodes, up to four on the third, then
        // the three-node path back to the start.
        assert!((12..=15).contains(&s.trace_steps));
        assert!(s.matches_trace);
        let text = fs::read_to_string(dir.path().join("trace.json")).unwrap();
        assert_eq!(serde_json::from_str::<TargetTrace>(&text).unwrap(), trace);
        assert_eq!(fs::read_to_string(dir.path().join("steps.jsonl")).unwrap().lines().count(), s.trace_steps);
        assert!(fs::read_to_string(dir.path().join("tree.dot")).unwrap().starts_with("digraph"));
    }

    #[test]
    fn small_scale_test() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = tmp_config(ExperimentKind::ScaleTest, dir.path());
        c.min_steps = 200;
        let s = cmd_scale_test(&c).unwrap();
        assert!(s.tasks[0].trace_steps >= 200);
        assert!(s.tasks[0].solved);
    }

    #[test]
    fn learnable_module_sets() {
        assert_eq!(learnable_modules(&Domain::sokoban(6)).len(), 4);
        assert_eq!(learnable_modules(&Domain::Puzzle), vec!["input"]);
        let dir = tempfile::tempdir().unwrap();
        let mut c = tmp_config(ExperimentKind::TrainDataModules, dir.path());
        c.domain = "puzzle".into();
        c.modules = vec!["alu".into()];
        assert!(cmd_train_data(&c).is_err());
    }
}
