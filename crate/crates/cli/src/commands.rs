//! Implementations behind each CLI subcommand. Each returns the process
//! exit code (0 = ok, 1 = check failure); argument and file problems
//! surface as errors with their own codes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use grouppref_core::aggregate::{ebc, listwise_targets, maxdiff_aggregate};
use grouppref_core::dataset::{generate, DatasetSpec, GroupDataset, GroupId, ItemId};
use grouppref_core::policy::{
    mean_kl, pinsker_check, train_policy, CategoricalPolicy, ContextId, GrpoConfig,
};
use grouppref_core::prefgen::{
    apply_label_noise, gen_maxdiff_trials, gen_pair_labels, recommended_task_count, MaxDiffTrial,
};
use grouppref_core::rewardfit::{fit, FitConfig};
use grouppref_core::rng::derive_seed;
use grouppref_core::stats::{kendall_tau, spearman_rho};

use crate::config::{CoverageSpec, LinkSpec};
use crate::error::{CliError, Result};
use crate::formats::{self, RankingRow};
use crate::pipeline::{humor_order, method_name, path_bound_summary, PinskerEntry};

/// Default oracle sidecar path: `oracle.json` next to the items file.
pub fn default_oracle_path(items: &Path) -> PathBuf {
    items
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join("oracle.json")
}

fn load_dataset(items: &Path, oracle: &Option<PathBuf>) -> Result<GroupDataset> {
    let oracle_path = oracle.clone().unwrap_or_else(|| default_oracle_path(items));
    formats::read_dataset(items, &oracle_path)
}

#[allow(clippy::too_many_arguments)]
pub fn gen_data(
    groups: usize,
    group_size: usize,
    dimension: usize,
    min_gap: f64,
    seed: u64,
    out_items: &Path,
    out_oracle: &Path,
) -> Result<i32> {
    let spec = DatasetSpec {
        dimension,
        group_sizes: vec![group_size; groups],
        min_humor_gap: min_gap,
    };
    let dataset = generate(&spec, seed).map_err(|e| CliError::check("gen-data", e))?;
    formats::write_dataset(&dataset, out_items, out_oracle)?;
    println!(
        "wrote {} items in {} groups to {}",
        dataset.n_items(),
        dataset.groups().len(),
        out_items.display()
    );
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
pub fn gen_pairs(
    items: &Path,
    oracle: &Option<PathBuf>,
    link: &LinkSpec,
    coverage: &CoverageSpec,
    repeats: u32,
    epsilon: f64,
    seed: u64,
    out: &Path,
) -> Result<i32> {
    if !(0.0..0.5).contains(&epsilon) {
        return Err(CliError::Usage(format!(
            "epsilon must be in [0, 0.5), got {epsilon}"
        )));
    }
    let dataset = load_dataset(items, oracle)?;
    let link = link.to_link()?;
    let clean = gen_pair_labels(
        &dataset,
        &link,
        &coverage.to_coverage(),
        repeats,
        derive_seed(seed, 0),
    )
    .map_err(|e| CliError::check("gen-pairs", e))?;
    let labels = if epsilon > 0.0 {
        apply_label_noise(&clean, epsilon, derive_seed(seed, 1))
            .map_err(|e| CliError::check("gen-pairs", e))?
    } else {
        clean
    };
    formats::write_pairs(out, &labels)?;
    println!("wrote {} labels to {}", labels.len(), out.display());
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
pub fn gen_maxdiff(
    items: &Path,
    oracle: &Option<PathBuf>,
    k: usize,
    tasks: Option<usize>,
    annotators: u64,
    gumbel: f64,
    seed: u64,
    out: &Path,
) -> Result<i32> {
    if annotators == 0 {
        return Err(CliError::Usage("--annotators must be >= 1".into()));
    }
    let dataset = load_dataset(items, oracle)?;
    let mut trials: Vec<MaxDiffTrial> = Vec::new();
    for (&gid, group_items) in dataset.groups() {
        let n_tasks = tasks.unwrap_or_else(|| recommended_task_count(group_items.len(), k));
        for annotator in 0..annotators {
            let stream = derive_seed(derive_seed(seed, gid.0), annotator);
            trials.extend(
                gen_maxdiff_trials(group_items, k, n_tasks, gumbel, stream)
                    .map_err(|e| CliError::check("gen-maxdiff", e))?,
            );
        }
    }
    formats::write_maxdiff(out, &trials)?;
    println!("wrote {} trials to {}", trials.len(), out.display());
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
pub fn fit_reward(
    pairs: &Path,
    items: &Path,
    oracle: &Option<PathBuf>,
    lr: f64,
    l2: f64,
    tol: f64,
    max_iters: usize,
    out: &Path,
) -> Result<i32> {
    let dataset = load_dataset(items, oracle)?;
    let labels = formats::read_pairs(pairs)?;
    let config = FitConfig {
        learning_rate: lr,
        max_iters,
        l2,
        tol,
    };
    let (params, report) =
        fit(&labels, &dataset, &config).map_err(|e| CliError::check("fit-reward", e))?;
    formats::write_params(out, &params, &report)?;
    println!(
        "fit: {} iterations, loss {:.6}, grad norm {:.3e}, converged {}",
        report.iterations, report.final_loss, report.final_grad_norm, report.converged
    );
    Ok(0)
}

pub fn aggregate_ebc(
    pairsprob: &Path,
    alpha: f64,
    normalize: bool,
    temperature: f64,
    out: &Path,
) -> Result<i32> {
    let matrices = formats::read_probs(pairsprob)?;
    let mut rows = Vec::new();
    for matrix in &matrices {
        let scores = ebc(matrix, alpha, normalize).map_err(|e| CliError::check("aggregate", e))?;
        for (idx, &deg) in scores.degrees.iter().enumerate() {
            if deg == 0 {
                eprintln!(
                    "warning: item {} in group {} has no defined comparisons; scored 0",
                    matrix.items()[idx],
                    matrix.group()
                );
            }
        }
        let targets =
            listwise_targets(matrix.group(), matrix.items(), &scores.scores, temperature)
                .map_err(|e| CliError::check("aggregate", e))?;
        let mut order: Vec<usize> = (0..matrix.n()).collect();
        order.sort_by(|&a, &b| {
            scores.scores[b]
                .partial_cmp(&scores.scores[a])
                .unwrap()
                .then(matrix.items()[a].cmp(&matrix.items()[b]))
        });
        for (rank, &idx) in order.iter().enumerate() {
            rows.push(RankingRow {
                group: matrix.group().0,
                item_id: matrix.items()[idx].0,
                ebc: scores.scores[idx],
                q: Some(targets.q[idx]),
                rank: rank + 1,
            });
        }
    }
    formats::write_ranking(out, &rows)?;
    println!("wrote {} ranking rows to {}", rows.len(), out.display());
    Ok(0)
}

pub fn aggregate_maxdiff(
    trials_path: &Path,
    items: &Path,
    oracle: &Option<PathBuf>,
    out: &Path,
) -> Result<i32> {
    let dataset = load_dataset(items, oracle)?;
    let trials = formats::read_maxdiff(trials_path)?;
    let mut by_group: BTreeMap<GroupId, Vec<MaxDiffTrial>> = BTreeMap::new();
    for trial in trials {
        by_group.entry(trial.group).or_default().push(trial);
    }
    let mut rows = Vec::new();
    for (&gid, group_items) in dataset.groups() {
        let Some(group_trials) = by_group.get(&gid) else {
            continue;
        };
        let roster: Vec<ItemId> = group_items.iter().map(|it| it.id).collect();
        let result = maxdiff_aggregate(group_trials, &roster)
            .map_err(|e| CliError::check("aggregate", e))?;
        for (rank, id) in result.ranking.iter().enumerate() {
            rows.push(RankingRow {
                group: gid.0,
                item_id: id.0,
                ebc: result.scores[id],
                q: None,
                rank: rank + 1,
            });
        }
    }
    formats::write_ranking(out, &rows)?;
    println!("wrote {} ranking rows to {}", rows.len(), out.display());
    Ok(0)
}

#[derive(Debug, Serialize)]
struct KendallGroupReport {
    tau: f64,
    p: f64,
    n: usize,
    method: &'static str,
}

#[derive(Debug, Serialize)]
struct SpearmanGroupReport {
    rho: f64,
    n: usize,
}

pub fn eval_rank(
    pred: &Path,
    truth_items: &Path,
    oracle: &Option<PathBuf>,
    stat: &str,
    out: &Path,
) -> Result<i32> {
    let dataset = load_dataset(truth_items, oracle)?;
    let rows = formats::read_ranking(pred)?;
    let mut by_group: BTreeMap<GroupId, Vec<(usize, ItemId)>> = BTreeMap::new();
    for row in rows {
        by_group
            .entry(GroupId(row.group))
            .or_default()
            .push((row.rank, ItemId(row.item_id)));
    }
    let stage = "eval-rank";
    match stat {
        "kendall" => {
            let mut groups: BTreeMap<u64, KendallGroupReport> = BTreeMap::new();
            for (gid, mut entries) in by_group {
                let items = dataset
                    .groups()
                    .get(&gid)
                    .ok_or_else(|| CliError::check(stage, format!("unknown group {gid}")))?;
                entries.sort();
                let pred_order: Vec<ItemId> = entries.into_iter().map(|(_, id)| id).collect();
                let truth = humor_order(items);
                let r = kendall_tau(&pred_order, &truth)
                    .map_err(|e| CliError::check(stage, e))?;
                groups.insert(
                    gid.0,
                    KendallGroupReport {
                        tau: r.tau,
                        p: r.p_value,
                        n: r.n,
                        method: method_name(r.method),
                    },
                );
            }
            let mean_tau =
                groups.values().map(|g| g.tau).sum::<f64>() / groups.len().max(1) as f64;
            #[derive(Serialize)]
            struct Report {
                groups: BTreeMap<u64, KendallGroupReport>,
                mean_tau: f64,
            }
            formats::write_json(out, &Report { groups, mean_tau })?;
        }
        "spearman" => {
            let mut groups: BTreeMap<u64, SpearmanGroupReport> = BTreeMap::new();
            for (gid, mut entries) in by_group {
                let items = dataset
                    .groups()
                    .get(&gid)
                    .ok_or_else(|| CliError::check(stage, format!("unknown group {gid}")))?;
                entries.sort();
                let pred_order: Vec<ItemId> = entries.into_iter().map(|(_, id)| id).collect();
                let truth = humor_order(items);
                let rho =
                    spearman_rho(&pred_order, &truth).map_err(|e| CliError::check(stage, e))?;
                groups.insert(gid.0, SpearmanGroupReport { rho, n: items.len() });
            }
            let mean_rho =
                groups.values().map(|g| g.rho).sum::<f64>() / groups.len().max(1) as f64;
            #[derive(Serialize)]
            struct Report {
                groups: BTreeMap<u64, SpearmanGroupReport>,
                mean_rho: f64,
            }
            formats::write_json(out, &Report { groups, mean_rho })?;
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown statistic '{other}' (expected kendall | spearman)"
            )))
        }
    }
    println!("wrote rank report to {}", out.display());
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
pub fn train_policy_cmd(
    targets_path: &Path,
    humor_path: &Path,
    reference_path: &Option<PathBuf>,
    beta: f64,
    lr: f64,
    steps: usize,
    kl_budget: Option<f64>,
    trace_path: &Path,
    out: &Option<PathBuf>,
) -> Result<i32> {
    let stage = "train-policy";
    let targets = formats::read_targets(targets_path)?;
    let humor = formats::read_humor(humor_path)?;
    let reference = match reference_path {
        Some(path) => formats::read_policy(path)?,
        None => {
            // Uniform reference over the caption sets implied by the
            // quality table.
            let caption_sets: BTreeMap<ContextId, Vec<ItemId>> = humor
                .iter()
                .map(|(&ctx, table)| (ctx, table.keys().copied().collect()))
                .collect();
            CategoricalPolicy::uniform(caption_sets).map_err(|e| CliError::check(stage, e))?
        }
    };
    let config = GrpoConfig {
        beta,
        learning_rate: lr,
        steps,
        kl_budget,
    };
    let outcome = train_policy(&reference, &targets, &config, &humor)
        .map_err(|e| CliError::check(stage, e))?;
    formats::write_trace(trace_path, &outcome.trace)?;
    if let Some(out) = out {
        formats::write_policy(out, &outcome.policy)?;
    }
    let first = outcome.trace.first().expect("initial trace row");
    let last = outcome.trace.last().expect("nonempty trace");
    println!(
        "trained {} steps: expected quality {:.4} -> {:.4}, mean KL {:.3e}",
        last.step, first.expected_humor, last.expected_humor, last.mean_kl
    );
    let final_kl = mean_kl(&outcome.policy, &reference).map_err(|e| CliError::check(stage, e))?;
    if let Some(budget) = kl_budget {
        if final_kl > budget {
            return Err(CliError::check(stage, "final KL exceeds the budget"));
        }
    }
    Ok(0)
}

pub fn verify_bounds(policy_path: &Path, ref_path: &Path, humor_path: &Path) -> Result<i32> {
    let policy = formats::read_policy(policy_path)?;
    let reference = formats::read_policy(ref_path)?;
    let humor = formats::read_humor(humor_path)?;
    let report = pinsker_check(&policy, &reference, &humor)
        .map_err(|e| CliError::check("verify-bounds", e))?;
    let entry = PinskerEntry::from(&report);
    println!(
        "{}",
        serde_json::to_string_pretty(&entry)
            .map_err(|e| CliError::parse(policy_path, e))?
    );
    Ok(if report.holds { 0 } else { 1 })
}

#[allow(clippy::too_many_arguments)]
pub fn cot_sim(
    n_paths: usize,
    alpha: f64,
    delta: f64,
    trials: u64,
    average_gap: bool,
    seed: u64,
    out: &Path,
) -> Result<i32> {
    if trials == 0 {
        return Err(CliError::Usage("--trials must be >= 1".into()));
    }
    let mut summary = path_bound_summary(n_paths, alpha, delta, trials, seed)
        .map_err(|e| CliError::check("cot-sim", e))?;
    if average_gap {
        // Re-run the trial loop under the average-only gap condition; the
        // bound must survive it as well.
        use grouppref_core::cotsim::{build_path_model, expected_path_humor, GapCondition};
        let bound = grouppref_core::cotsim::humor_lower_bound(alpha, delta);
        for t in 0..trials {
            let model = build_path_model(
                n_paths,
                alpha,
                delta,
                GapCondition::AverageOnly,
                derive_seed(seed, trials + t),
            )
            .map_err(|e| CliError::check("cot-sim", e))?;
            let margin = expected_path_humor(&model) - bound;
            summary.min_margin_to_bound = summary.min_margin_to_bound.min(margin);
            if margin < -1e-12 {
                summary.violations += 1;
            }
        }
        summary.trials += trials;
    }
    formats::write_json(out, &summary)?;
    println!(
        "{} trials, {} violations, min margin {:.3e}, tightness gap {:.3e}",
        summary.trials,
        summary.violations,
        summary.min_margin_to_bound,
        summary.tightness_gap_at_construction
    );
    Ok(if summary.violations == 0 && summary.anchoring_never_decreases {
        0
    } else {
        1
    })
}
