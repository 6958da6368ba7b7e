//! `grouppref` — experiment harness for group-wise preference learning.
//!
//! Exit codes: 0 success, 1 check/assertion failure, 2 usage error,
//! 3 I/O error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use grouppref_cli::config::{CoverageSpec, ExperimentConfig, LinkSpec};
use grouppref_cli::error::Result;
use grouppref_cli::{commands, formats, pipeline, verify};

#[derive(Parser)]
#[command(
    name = "grouppref",
    version,
    about = "Group-wise preference learning: synthetic data, pairwise reward fitting, \
             Borda aggregation, KL-bounded policy training, and bound verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic group dataset (items.jsonl + oracle.json).
    GenData {
        #[arg(long, default_value_t = 5)]
        groups: usize,
        #[arg(long, default_value_t = 15)]
        group_size: usize,
        #[arg(long, default_value_t = 8)]
        dimension: usize,
        /// Minimum within-group quality separation.
        #[arg(long, default_value_t = grouppref_core::dataset::DEFAULT_MIN_HUMOR_GAP)]
        min_gap: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = "items.jsonl")]
        out_items: PathBuf,
        #[arg(long, default_value = "oracle.json")]
        out_oracle: PathBuf,
    },

    /// Sample pairwise comparison labels from a dataset.
    GenPairs {
        #[arg(long)]
        items: PathBuf,
        /// Oracle sidecar; defaults to oracle.json next to the items file.
        #[arg(long)]
        oracle: Option<PathBuf>,
        /// logistic | probit | scaled-logistic:S
        #[arg(long, default_value = "scaled-logistic:20")]
        link: LinkSpec,
        /// full | random:p
        #[arg(long, default_value = "full")]
        coverage: CoverageSpec,
        /// Annotation rounds over the covered pairs.
        #[arg(long, default_value_t = 1)]
        repeats: u32,
        /// Independent label flip probability in [0, 0.5).
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = "pairs.jsonl")]
        out: PathBuf,
    },

    /// Simulate best-worst (MaxDiff) choice trials.
    GenMaxdiff {
        #[arg(long)]
        items: PathBuf,
        #[arg(long)]
        oracle: Option<PathBuf>,
        /// Subset size shown per trial (>= 3).
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// Choice tasks per annotator per group; defaults to ceil(5J/k).
        #[arg(long)]
        tasks: Option<usize>,
        #[arg(long, default_value_t = 1)]
        annotators: u64,
        /// Gumbel utility-noise scale (0 = noiseless respondents).
        #[arg(long, default_value_t = 0.0)]
        gumbel: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = "maxdiff.jsonl")]
        out: PathBuf,
    },

    /// Fit the linear score head on pairwise labels.
    FitReward {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        items: PathBuf,
        #[arg(long)]
        oracle: Option<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 1e-6)]
        l2: f64,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 50_000)]
        max_iters: usize,
        #[arg(long, default_value = "params.json")]
        out: PathBuf,
    },

    /// Aggregate pairwise probabilities or best-worst trials into rankings.
    Aggregate {
        #[command(subcommand)]
        mode: AggregateCommand,
    },

    /// Compare a predicted ranking against the latent order.
    EvalRank {
        #[arg(long)]
        pred: PathBuf,
        /// items.jsonl holding the latent quality values.
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        oracle: Option<PathBuf>,
        /// kendall | spearman
        #[arg(long, default_value = "kendall")]
        stat: String,
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
    },

    /// Train a tabular policy toward listwise targets under a KL leash.
    TrainPolicy {
        #[arg(long)]
        targets: PathBuf,
        #[arg(long)]
        humor: PathBuf,
        /// Reference policy; defaults to uniform over each caption set.
        #[arg(long)]
        r#ref: Option<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        beta: f64,
        #[arg(long, default_value_t = 0.5)]
        lr: f64,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        /// Hard mean-KL trust region.
        #[arg(long)]
        kl_budget: Option<f64>,
        #[arg(long, default_value = "trace.csv")]
        trace: PathBuf,
        /// Where to write the trained policy.
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Check the bound chain between a policy and a reference; exit 1 on
    /// violation.
    VerifyBounds {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        r#ref: PathBuf,
        #[arg(long)]
        humor: PathBuf,
    },

    /// Random path-model trials against the expected-quality lower bound.
    CotSim {
        #[arg(long, default_value_t = 32)]
        n_paths: usize,
        /// Probability mass on top-quality paths.
        #[arg(long, default_value_t = 0.3)]
        alpha: f64,
        /// Quality-gap budget of the remaining paths.
        #[arg(long, default_value_t = 0.4)]
        delta: f64,
        #[arg(long, default_value_t = 1000)]
        trials: u64,
        /// Also stress the average-only gap condition.
        #[arg(long)]
        average_gap: bool,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = "cot_report.json")]
        out: PathBuf,
    },

    /// Run the full experiment pipeline and write all artifacts.
    RunPipeline(Box<PipelineArgs>),

    /// Run every verification suite; exit 0 iff no violations.
    VerifyAll {
        #[arg(long, default_value_t = 1000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Inject this quality value into a bound check (out-of-range
        /// values must be caught and reported).
        #[arg(long)]
        inject_humor: Option<f64>,
    },
}

#[derive(Subcommand)]
enum AggregateCommand {
    /// Expected Borda Count over pairwise probability matrices.
    Ebc {
        #[arg(long)]
        pairsprob: PathBuf,
        /// Small-degree regularizer.
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        /// Normalize by opponent count (recommended for sparse matrices).
        #[arg(long)]
        normalize: bool,
        #[arg(long, default_value_t = 1.0)]
        temp: f64,
        #[arg(long, default_value = "ranking.csv")]
        out: PathBuf,
    },
    /// Count-difference aggregation of best-worst trials.
    Maxdiff {
        #[arg(long)]
        trials: PathBuf,
        #[arg(long)]
        items: PathBuf,
        #[arg(long)]
        oracle: Option<PathBuf>,
        #[arg(long, default_value = "ranking.csv")]
        out: PathBuf,
    },
}

/// `run-pipeline` arguments: an optional config file plus per-field
/// overrides.
#[derive(Args)]
struct PipelineArgs {
    /// JSON experiment config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    groups: Option<usize>,
    #[arg(long)]
    group_size: Option<usize>,
    #[arg(long)]
    dimension: Option<usize>,
    #[arg(long)]
    min_gap: Option<f64>,
    #[arg(long)]
    link: Option<LinkSpec>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    coverage: Option<CoverageSpec>,
    #[arg(long)]
    labels_per_pair: Option<u32>,
    #[arg(long)]
    fit_lr: Option<f64>,
    #[arg(long)]
    fit_l2: Option<f64>,
    #[arg(long)]
    fit_tol: Option<f64>,
    #[arg(long)]
    fit_max_iters: Option<usize>,
    #[arg(long)]
    alpha_reg: Option<f64>,
    #[arg(long)]
    normalize: Option<bool>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    grpo_lr: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    kl_budget: Option<f64>,
    #[arg(long)]
    eval_pairs: Option<usize>,
    #[arg(long)]
    cot_trials: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl PipelineArgs {
    fn into_config(self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => formats::read_json(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(groups) = self.groups {
            config.groups.count = groups;
            config.groups.sizes = None;
        }
        if let Some(size) = self.group_size {
            config.groups.size = size;
            config.groups.sizes = None;
        }
        if let Some(d) = self.dimension {
            config.dimension = d;
        }
        if let Some(gap) = self.min_gap {
            config.min_humor_gap = gap;
        }
        if let Some(link) = self.link {
            config.link = link;
        }
        if let Some(eps) = self.epsilon {
            config.epsilon = eps;
        }
        if let Some(coverage) = self.coverage {
            config.coverage = coverage;
        }
        if let Some(r) = self.labels_per_pair {
            config.labels_per_pair = r;
        }
        if let Some(x) = self.fit_lr {
            config.fit.learning_rate = x;
        }
        if let Some(x) = self.fit_l2 {
            config.fit.l2 = x;
        }
        if let Some(x) = self.fit_tol {
            config.fit.tol = x;
        }
        if let Some(x) = self.fit_max_iters {
            config.fit.max_iters = x;
        }
        if let Some(x) = self.alpha_reg {
            config.aggregate.alpha_reg = x;
        }
        if let Some(x) = self.normalize {
            config.aggregate.normalize = x;
        }
        if let Some(x) = self.temperature {
            config.aggregate.temperature = x;
        }
        if let Some(x) = self.beta {
            config.grpo.beta = x;
        }
        if let Some(x) = self.grpo_lr {
            config.grpo.learning_rate = x;
        }
        if let Some(x) = self.steps {
            config.grpo.steps = x;
        }
        if let Some(x) = self.kl_budget {
            config.grpo.kl_budget = Some(x);
        }
        if let Some(x) = self.eval_pairs {
            config.eval.n_eval_pairs = x;
        }
        if let Some(x) = self.cot_trials {
            config.cot.trials = x;
        }
        if let Some(x) = self.out_dir {
            config.output_dir = x;
        }
        Ok(config)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<i32> {
    match command {
        Command::GenData {
            groups,
            group_size,
            dimension,
            min_gap,
            seed,
            out_items,
            out_oracle,
        } => commands::gen_data(
            groups, group_size, dimension, min_gap, seed, &out_items, &out_oracle,
        ),
        Command::GenPairs {
            items,
            oracle,
            link,
            coverage,
            repeats,
            epsilon,
            seed,
            out,
        } => commands::gen_pairs(
            &items, &oracle, &link, &coverage, repeats, epsilon, seed, &out,
        ),
        Command::GenMaxdiff {
            items,
            oracle,
            k,
            tasks,
            annotators,
            gumbel,
            seed,
            out,
        } => commands::gen_maxdiff(&items, &oracle, k, tasks, annotators, gumbel, seed, &out),
        Command::FitReward {
            pairs,
            items,
            oracle,
            lr,
            l2,
            tol,
            max_iters,
            out,
        } => commands::fit_reward(&pairs, &items, &oracle, lr, l2, tol, max_iters, &out),
        Command::Aggregate { mode } => match mode {
            AggregateCommand::Ebc {
                pairsprob,
                alpha,
                normalize,
                temp,
                out,
            } => commands::aggregate_ebc(&pairsprob, alpha, normalize, temp, &out),
            AggregateCommand::Maxdiff {
                trials,
                items,
                oracle,
                out,
            } => commands::aggregate_maxdiff(&trials, &items, &oracle, &out),
        },
        Command::EvalRank {
            pred,
            truth,
            oracle,
            stat,
            out,
        } => commands::eval_rank(&pred, &truth, &oracle, &stat, &out),
        Command::TrainPolicy {
            targets,
            humor,
            r#ref,
            beta,
            lr,
            steps,
            kl_budget,
            trace,
            out,
        } => commands::train_policy_cmd(
            &targets, &humor, &r#ref, beta, lr, steps, kl_budget, &trace, &out,
        ),
        Command::VerifyBounds { policy, r#ref, humor } => {
            commands::verify_bounds(&policy, &r#ref, &humor)
        }
        Command::CotSim {
            n_paths,
            alpha,
            delta,
            trials,
            average_gap,
            seed,
            out,
        } => commands::cot_sim(n_paths, alpha, delta, trials, average_gap, seed, &out),
        Command::RunPipeline(args) => {
            let config = args.into_config()?;
            let report = pipeline::run_pipeline(&config)?;
            println!(
                "pipeline done: mean tau {:.3} -> {:.3} ({} of {} groups improved)",
                report.mean_tau_base,
                report.mean_tau_fitted,
                report.groups_improved,
                report.groups.len()
            );
            println!(
                "policy: expected quality {:.4} -> {:.4} (mean KL {:.3e}); \
                 paths: {} violations in {} trials",
                report.policy.initial_expected_humor,
                report.policy.final_expected_humor,
                report.policy.final_mean_kl,
                report.paths.violations,
                report.paths.trials
            );
            println!("report written to {}", config.output_dir.join("report.json").display());
            Ok(0)
        }
        Command::VerifyAll {
            trials,
            seed,
            inject_humor,
        } => {
            let violations = verify::verify_all(trials, seed, inject_humor)?;
            if violations.is_empty() {
                println!("all checks passed ({trials} trials)");
                Ok(0)
            } else {
                for v in &violations {
                    eprintln!("violation: {v}");
                }
                eprintln!("{} violation(s) found", violations.len());
                Ok(1)
            }
        }
    }
}
