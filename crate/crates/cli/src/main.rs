//! `neurocomp`: runs the training, evaluation, transfer, scale, oracle,
//! data-module and ablation experiments from JSON presets and flags.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use neurocomp::domains::TaskKind;
use neurocomp::experiment::{
    cmd_ablate, cmd_eval, cmd_oracle, cmd_scale_test, cmd_train, cmd_train_data, cmd_transfer, ExperimentConfig,
    ExperimentKind, RunSummary, Variant,
};
use neurocomp::training::{Normalization, Utility};

/// Minimum step count of the long scale run.
const LONG_SCALE_STEPS: usize = 330_631;

#[derive(Parser)]
#[command(name = "neurocomp", version, about = "Dual-memory neural computer experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the algorithmic modules with NES and the curriculum.
    Train {
        #[command(flatten)]
        common: Common,
        /// search, plan or both.
        #[arg(long)]
        task: Option<TrainTask>,
    },
    /// Exact-match evaluation of frozen parameters over all levels.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        max_level: Option<usize>,
    },
    /// Frozen parameters on a new representation or domain.
    Transfer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        max_level: Option<usize>,
        /// Curriculum iterations on the target domain before evaluating.
        #[arg(long)]
        transfer_budget: Option<usize>,
    },
    /// Autonomous runs on very long tasks.
    ScaleTest {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        min_steps: Option<usize>,
        #[arg(long)]
        tasks: Option<usize>,
        /// Tasks of at least 330,631 steps.
        #[arg(long)]
        long: bool,
    },
    /// Oracle trace, search tree and model step records for one task.
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        level: Option<usize>,
        /// JSON task instance instead of a sampled one.
        #[arg(long)]
        task_file: Option<PathBuf>,
    },
    /// Supervised training of the learned data modules.
    TrainData {
        #[command(flatten)]
        common: Common,
        /// Subset of input, transform, alu, output.
        #[arg(long, value_delimiter = ',')]
        modules: Vec<String>,
        #[arg(long)]
        max_batches: Option<usize>,
    },
    /// Training runs for several architecture and curriculum variants.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainTask {
    Search,
    Plan,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Search,
    Plan,
}

#[derive(Clone, Copy, ValueEnum)]
enum FitnessArg {
    Trace,
    FirstMistake,
}

#[derive(Clone, Copy, ValueEnum)]
enum UtilityArg {
    LogRank,
    Gini,
}

#[derive(Args)]
struct Common {
    /// JSON preset; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seeds, comma separated.
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    /// sokoban6, sokoban8, puzzle or manipulation.
    #[arg(long)]
    domain: Option<String>,
    /// Sokoban cell-code permutation such as 0321.
    #[arg(long)]
    permutation: Option<String>,
    /// Task for eval, transfer, scale-test, oracle and ablate.
    #[arg(long = "kind")]
    kind: Option<TaskArg>,
    #[arg(long)]
    budget: Option<usize>,
    /// Algorithmic parameters; the reference program when absent.
    #[arg(long)]
    genome: Option<PathBuf>,
    /// Directory of learned data modules.
    #[arg(long)]
    data_modules: Option<PathBuf>,
    #[arg(long)]
    fitness: Option<FitnessArg>,
    #[arg(long)]
    utility: Option<UtilityArg>,
    #[arg(long)]
    no_constrained_head: bool,
    #[arg(long)]
    two_free_heads: bool,
    #[arg(long)]
    no_usage_linkage: bool,
    #[arg(long)]
    soft_attention: bool,
    #[arg(long)]
    no_bad_memories: bool,
    #[arg(long)]
    no_restarts: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> neurocomp::Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if !self.seed.is_empty() {
            c.seeds = self.seed.clone();
        }
        if let Some(d) = &self.domain {
            c.domain = d.clone();
        }
        if self.permutation.is_some() {
            c.permutation = self.permutation.clone();
        }
        if let Some(k) = self.kind {
            c.task = match k {
                TaskArg::Search => TaskKind::Search,
                TaskArg::Plan => TaskKind::Plan,
            };
        }
        if let Some(b) = self.budget {
            c.nes.budget = b;
        }
        if self.genome.is_some() {
            c.genome = self.genome.clone();
        }
        if self.data_modules.is_some() {
            c.data_modules = self.data_modules.clone();
        }
        if let Some(f) = self.fitness {
            c.fitness = match f {
                FitnessArg::Trace => Normalization::Trace,
                FitnessArg::FirstMistake => Normalization::FirstMistake,
            };
        }
        if let Some(u) = self.utility {
            c.nes.utility = match u {
                UtilityArg::LogRank => Utility::LogRank,
                UtilityArg::Gini => Utility::SmoothGini { gini: 0.1 },
            };
        }
        if self.no_constrained_head {
            c.engine.constrained_head = false;
        }
        if self.two_free_heads {
            c.engine.constrained_head = false;
            c.engine.extra_free_head = true;
        }
        if self.no_usage_linkage {
            c.engine.usage_linkage = false;
        }
        if self.soft_attention {
            c.engine.hard_attention = false;
        }
        if self.no_bad_memories {
            c.curriculum.buffer_capacity = 0;
        }
        if self.no_restarts {
            c.nes.restart_window = usize::MAX;
        }
        if let Some(o) = &self.out {
            c.out = o.clone();
        }
        Ok(c)
    }
}

fn print_runs(runs: &[RunSummary]) {
    for r in runs {
        let post = r.post_eval.as_ref().map(|e| format!(" post-eval {}/{}", e.correct, e.samples)).unwrap_or_default();
        println!(
            "{} {:?} seed {} [{}]: {} iterations, {} lineages, best level {}, final level {}{}{}",
            r.domain,
            r.kind,
            r.seed,
            r.variant.name(),
            r.iterations,
            r.lineages.len(),
            r.best_level,
            r.final_level,
            if r.evaluated { ", evaluation stage solved" } else { "" },
            post
        );
    }
}

fn run(cli: Cli) -> neurocomp::Result<ExitCode> {
    match cli.command {
        Command::Train { common, task } => {
            let mut c = common.load()?;
            c.kind = match task {
                Some(TrainTask::Search) => ExperimentKind::TrainSearch,
                Some(TrainTask::Plan) => ExperimentKind::TrainPlan,
                Some(TrainTask::Both) => ExperimentKind::TrainBoth,
                None if matches!(
                    c.kind,
                    ExperimentKind::TrainSearch | ExperimentKind::TrainPlan | ExperimentKind::TrainBoth
                ) =>
                {
                    c.kind
                }
                None => ExperimentKind::TrainSearch,
            };
            print_runs(&cmd_train(&c)?);
        }
        Command::Eval { common, samples, max_level } => {
            let mut c = common.load()?;
            c.kind = ExperimentKind::EvalGeneralization;
            c.eval_samples = samples.unwrap_or(c.eval_samples);
            c.eval_max_level = max_level.unwrap_or(c.eval_max_level);
            let s = cmd_eval(&c)?;
            let r = &s.report;
            println!(
                "{} {:?} [{}]: {}/{} correct ({:.2}%)",
                r.domain,
                r.kind,
                s.genome,
                r.correct,
                r.samples,
                100.0 * r.accuracy()
            );
            for l in &r.levels {
                println!("  level {:2}: {}/{}", l.level, l.correct, l.samples);
            }
        }
        Command::Transfer { common, samples, max_level, transfer_budget } => {
            let mut c = common.load()?;
            if !matches!(c.kind, ExperimentKind::TransferRepresentation | ExperimentKind::TransferDomain) {
                c.kind = if c.domain.starts_with("sokoban") {
                    ExperimentKind::TransferRepresentation
                } else {
                    ExperimentKind::TransferDomain
                };
            }
            c.eval_samples = samples.unwrap_or(c.eval_samples);
            c.eval_max_level = max_level.unwrap_or(c.eval_max_level);
            c.transfer_budget = transfer_budget.unwrap_or(c.transfer_budget);
            let s = cmd_transfer(&c)?;
            if let Some(run) = &s.run {
                print_runs(std::slice::from_ref(run));
            }
            if let Some(none) = s.no_learning_triggered {
                println!("learning triggered during transfer: {}", if none { "no" } else { "yes" });
            }
            println!("{} [{}]: {}/{} correct", s.domain, s.genome, s.eval.correct, s.eval.samples);
        }
        Command::ScaleTest { common, min_steps, tasks, long } => {
            let mut c = common.load()?;
            c.kind = ExperimentKind::ScaleTest;
            if long {
                c.min_steps = LONG_SCALE_STEPS;
            }
            c.min_steps = min_steps.unwrap_or(c.min_steps);
            c.scale_tasks = tasks.unwrap_or(c.scale_tasks);
            let s = cmd_scale_test(&c)?;
            for t in &s.tasks {
                println!(
                    "{} [{}]: level {}, {} steps, {} in {:.1}s",
                    s.domain,
                    s.genome,
                    t.level,
                    t.trace_steps,
                    if t.solved { "solved" } else { "FAILED" },
                    t.seconds
                );
            }
        }
        Command::Oracle { common, level, task_file } => {
            let mut c = common.load()?;
            c.kind = ExperimentKind::OracleTrace;
            c.level = level.unwrap_or(c.level);
            if task_file.is_some() {
                c.task_file = task_file;
            }
            let (s, _) = cmd_oracle(&c)?;
            println!(
                "level {}, depth {}, trace {} steps, model {} steps ({:?}), exact match: {}",
                s.level, s.depth, s.trace_steps, s.model_steps, s.termination, s.matches_trace
            );
            println!("wrote task.json, trace.json, tree.dot, steps.jsonl to {}", c.out.display());
        }
        Command::TrainData { common, modules, max_batches } => {
            let mut c = common.load()?;
            c.kind = ExperimentKind::TrainDataModules;
            if !modules.is_empty() {
                c.modules = modules;
            }
            c.data_train.max_batches = max_batches.unwrap_or(c.data_train.max_batches);
            let s = cmd_train_data(&c)?;
            for r in &s.reports {
                println!(
                    "{} {}: {} after {} batches, held-out {:.4} on {}",
                    r.domain,
                    r.module,
                    if r.success { "ok" } else { "FAILED" },
                    r.batches,
                    r.heldout_accuracy,
                    r.heldout_size
                );
            }
            if !s.success {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Ablate { common, variants } => {
            let mut c = common.load()?;
            c.kind = ExperimentKind::Ablation;
            if !variants.is_empty() {
                c.variants = variants.iter().map(|v| v.parse::<Variant>()).collect::<neurocomp::Result<_>>()?;
            }
            print_runs(&cmd_ablate(&c)?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
