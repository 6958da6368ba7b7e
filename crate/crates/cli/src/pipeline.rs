//! The end-to-end experiment: data -> labels -> reward fit -> aggregation
//! -> policy training -> statistics, with every artifact written to the
//! output directory and a machine-readable report at the end.
//!
//! A single master seed is fanned out per stage (see the `STAGE_*`
//! constants), so any stage can be reproduced in isolation by deriving its
//! stream with [`grouppref_core::rng::derive_seed`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use grouppref_core::aggregate::{ebc, listwise_targets, GroupTargets, PairProbMatrix};
use grouppref_core::cotsim::{
    anchor_stage2, build_path_model, expected_path_humor, humor_lower_bound, GapCondition,
    PathModel,
};
use grouppref_core::dataset::{generate, DatasetSpec, GroupDataset, ItemId};
use grouppref_core::policy::{
    pinsker_check, train_policy, CategoricalPolicy, ContextId, PinskerReport, TrainOutcome,
};
use grouppref_core::prefgen::{apply_label_noise, gen_pair_labels};
use grouppref_core::rewardfit::{fit, score, ScoreParams};
use grouppref_core::rng::{derive_seed, standard_normal, stream_rng};
use grouppref_core::stats::{kendall_tau, reversal_curve, PValueMethod};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::formats::{self, FitReportEntry, RankingRow};

// Per-stage RNG streams fanned out from the master seed.
pub const STAGE_DATA: u64 = 0;
pub const STAGE_LABELS: u64 = 1;
pub const STAGE_NOISE: u64 = 2;
pub const STAGE_BASELINE: u64 = 3;
pub const STAGE_EVAL: u64 = 4;
pub const STAGE_COT: u64 = 5;

/// Per-group rank agreement before (random-score baseline) and after
/// fitting.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupReport {
    pub group: u64,
    pub n_items: usize,
    pub tau_base: f64,
    pub p_base: f64,
    pub tau_fitted: f64,
    pub p_fitted: f64,
    pub delta_tau: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReversalBinReport {
    pub lo: f64,
    pub hi: f64,
    pub pairs: usize,
    pub reversals: usize,
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinskerEntry {
    pub delta_h: f64,
    pub kl: f64,
    pub tv: f64,
    pub bound: f64,
    pub holds: bool,
}

impl From<&PinskerReport> for PinskerEntry {
    fn from(r: &PinskerReport) -> Self {
        Self {
            delta_h: r.delta_h,
            kl: r.kl,
            tv: r.tv,
            bound: r.bound,
            holds: r.holds,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyStageReport {
    pub initial_expected_humor: f64,
    pub final_expected_humor: f64,
    pub delta_expected_humor: f64,
    pub final_mean_kl: f64,
    pub steps_run: usize,
    /// Smallest over the trace of `H_t - (H_0 - sqrt(KL_t / 2))`; the
    /// stability floor holds iff this is nonnegative.
    pub min_stability_margin: f64,
    pub pinsker: PinskerEntry,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathStageReport {
    pub trials: u64,
    pub violations: u64,
    pub min_margin_to_bound: f64,
    pub tightness_gap_at_construction: f64,
    pub anchoring_never_decreases: bool,
}

/// The contents of `report.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineReport {
    pub config: ExperimentConfig,
    pub groups: Vec<GroupReport>,
    pub mean_tau_base: f64,
    pub mean_tau_fitted: f64,
    pub mean_delta_tau: f64,
    pub groups_improved: usize,
    pub fit: FitReportEntry,
    pub reversal_bins: Vec<ReversalBinReport>,
    pub policy: PolicyStageReport,
    pub paths: PathStageReport,
}

/// Run every stage and write all artifacts into `config.output_dir`.
pub fn run_pipeline(config: &ExperimentConfig) -> Result<PipelineReport> {
    config.validate()?;
    let out = &config.output_dir;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;

    // Stage: dataset.
    let spec = DatasetSpec {
        dimension: config.dimension,
        group_sizes: config.groups.sizes(),
        min_humor_gap: config.min_humor_gap,
    };
    let dataset = generate(&spec, derive_seed(config.seed, STAGE_DATA))
        .map_err(|e| CliError::check("gen-data", e))?;
    formats::write_dataset(&dataset, &out.join("items.jsonl"), &out.join("oracle.json"))?;

    // Stage: pairwise labels (+ optional flip noise).
    let link = config.link.to_link()?;
    let clean = gen_pair_labels(
        &dataset,
        &link,
        &config.coverage.to_coverage(),
        config.labels_per_pair,
        derive_seed(config.seed, STAGE_LABELS),
    )
    .map_err(|e| CliError::check("gen-pairs", e))?;
    let labels = if config.epsilon > 0.0 {
        apply_label_noise(&clean, config.epsilon, derive_seed(config.seed, STAGE_NOISE))
            .map_err(|e| CliError::check("label-noise", e))?
    } else {
        clean
    };
    formats::write_pairs(&out.join("pairs.jsonl"), &labels)?;

    // Stage: reward fit.
    let (params, fit_report) = fit(&labels, &dataset, &config.fit.to_config())
        .map_err(|e| CliError::check("fit-reward", e))?;
    formats::write_params(&out.join("params.json"), &params, &fit_report)?;

    // Stage: EBC aggregation and listwise targets. The fitted pairwise
    // probability matrices and the quality table are written too, so the
    // standalone `aggregate` / `train-policy` subcommands can replay these
    // stages from the artifacts alone.
    let (matrices, ranking_rows, targets) = aggregate_stage(&dataset, &params, config)?;
    formats::write_probs(&out.join("probs.json"), &matrices)?;
    formats::write_ranking(&out.join("ranking.csv"), &ranking_rows)?;
    formats::write_targets(&out.join("targets.json"), &targets)?;
    let humor_table: formats::HumorTable = dataset
        .groups()
        .iter()
        .map(|(&gid, items)| {
            (
                ContextId(gid.0),
                items.iter().map(|it| (it.id, it.humor)).collect(),
            )
        })
        .collect();
    formats::write_humor(&out.join("humor.json"), &humor_table)?;

    // Stage: rank statistics against the latent order.
    let baseline = baseline_params(config, &dataset);
    let group_reports = rank_stats(&dataset, &params, &baseline)?;

    // Stage: reversal diagnostic.
    let scores: BTreeMap<ItemId, f64> = dataset
        .items()
        .map(|it| Ok((it.id, score(&params, it).map_err(|e| CliError::check("eval", e))?)))
        .collect::<Result<_>>()?;
    let curve = reversal_curve(
        &scores,
        &dataset,
        &config.eval.bins,
        config.eval.n_eval_pairs,
        derive_seed(config.seed, STAGE_EVAL),
    )
    .map_err(|e| CliError::check("eval", e))?;
    let reversal_bins = curve
        .iter()
        .map(|b| ReversalBinReport {
            lo: b.lo,
            hi: b.hi,
            pairs: b.pairs,
            reversals: b.reversals,
            rate: b.rate,
        })
        .collect();

    // Stage: policy training under the KL-regularized listwise objective.
    let (outcome, policy_report) = policy_stage(&dataset, &targets, config)?;
    formats::write_trace(&out.join("trace.csv"), &outcome.trace)?;
    formats::write_policy(&out.join("policy.json"), &outcome.policy)?;

    // Stage: path-model bound checks.
    let paths = path_stage(config)?;

    let mean = |f: fn(&GroupReport) -> f64| -> f64 {
        group_reports.iter().map(f).sum::<f64>() / group_reports.len() as f64
    };
    let report = PipelineReport {
        config: config.clone(),
        mean_tau_base: mean(|g| g.tau_base),
        mean_tau_fitted: mean(|g| g.tau_fitted),
        mean_delta_tau: mean(|g| g.delta_tau),
        groups_improved: group_reports
            .iter()
            .filter(|g| g.tau_fitted > g.tau_base)
            .count(),
        groups: group_reports,
        fit: FitReportEntry {
            iters: fit_report.iterations,
            loss: fit_report.final_loss,
            grad_norm: fit_report.final_grad_norm,
            converged: fit_report.converged,
        },
        reversal_bins,
        policy: policy_report,
        paths,
    };
    formats::write_json(&out.join("report.json"), &report)?;
    Ok(report)
}

type AggregateArtifacts = (
    Vec<PairProbMatrix>,
    Vec<RankingRow>,
    BTreeMap<ContextId, GroupTargets>,
);

/// EBC scores, CSV rows, and listwise targets for every group.
fn aggregate_stage(
    dataset: &GroupDataset,
    params: &ScoreParams,
    config: &ExperimentConfig,
) -> Result<AggregateArtifacts> {
    let stage = "aggregate";
    let mut matrices = Vec::new();
    let mut rows = Vec::new();
    let mut targets = BTreeMap::new();
    for (&gid, items) in dataset.groups() {
        let scored: Vec<(ItemId, f64)> = items
            .iter()
            .map(|it| Ok((it.id, score(params, it).map_err(|e| CliError::check(stage, e))?)))
            .collect::<Result<_>>()?;
        let probs =
            PairProbMatrix::from_scores(gid, &scored).map_err(|e| CliError::check(stage, e))?;
        let scores = ebc(&probs, config.aggregate.alpha_reg, config.aggregate.normalize)
            .map_err(|e| CliError::check(stage, e))?;
        let q = listwise_targets(gid, probs.items(), &scores.scores, config.aggregate.temperature)
            .map_err(|e| CliError::check(stage, e))?;

        let mut order: Vec<usize> = (0..items.len()).collect();
        order.sort_by(|&a, &b| {
            scores.scores[b]
                .partial_cmp(&scores.scores[a])
                .unwrap()
                .then(probs.items()[a].cmp(&probs.items()[b]))
        });
        for (rank, &idx) in order.iter().enumerate() {
            rows.push(RankingRow {
                group: gid.0,
                item_id: probs.items()[idx].0,
                ebc: scores.scores[idx],
                q: Some(q.q[idx]),
                rank: rank + 1,
            });
        }
        targets.insert(ContextId(gid.0), q);
        matrices.push(probs);
    }
    Ok((matrices, rows, targets))
}

/// Random score head drawn from the baseline stream: stands in for an
/// untrained model in the before/after comparison.
fn baseline_params(config: &ExperimentConfig, dataset: &GroupDataset) -> ScoreParams {
    let mut rng = stream_rng(config.seed, STAGE_BASELINE);
    ScoreParams {
        weights: (0..dataset.dimension())
            .map(|_| standard_normal(&mut rng))
            .collect(),
        bias: 0.0,
    }
}

fn rank_stats(
    dataset: &GroupDataset,
    fitted: &ScoreParams,
    baseline: &ScoreParams,
) -> Result<Vec<GroupReport>> {
    let stage = "eval-rank";
    let mut reports = Vec::new();
    for (&gid, items) in dataset.groups() {
        let order_by = |params: &ScoreParams| -> Result<Vec<ItemId>> {
            let mut ids: Vec<(ItemId, f64)> = items
                .iter()
                .map(|it| Ok((it.id, score(params, it).map_err(|e| CliError::check(stage, e))?)))
                .collect::<Result<_>>()?;
            ids.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            Ok(ids.into_iter().map(|(id, _)| id).collect())
        };
        let truth = humor_order(items);
        let base = kendall_tau(&order_by(baseline)?, &truth)
            .map_err(|e| CliError::check(stage, e))?;
        let fitted = kendall_tau(&order_by(fitted)?, &truth)
            .map_err(|e| CliError::check(stage, e))?;
        reports.push(GroupReport {
            group: gid.0,
            n_items: items.len(),
            tau_base: base.tau,
            p_base: base.p_value,
            tau_fitted: fitted.tau,
            p_fitted: fitted.p_value,
            delta_tau: fitted.tau - base.tau,
        });
    }
    Ok(reports)
}

/// Items by descending latent quality, ties broken by ascending id.
pub fn humor_order(items: &[grouppref_core::Item]) -> Vec<ItemId> {
    let mut ids: Vec<ItemId> = items.iter().map(|it| it.id).collect();
    ids.sort_by(|&a, &b| {
        let ha = items.iter().find(|it| it.id == a).unwrap().humor;
        let hb = items.iter().find(|it| it.id == b).unwrap().humor;
        hb.partial_cmp(&ha).unwrap().then(a.cmp(&b))
    });
    ids
}

fn policy_stage(
    dataset: &GroupDataset,
    targets: &BTreeMap<ContextId, GroupTargets>,
    config: &ExperimentConfig,
) -> Result<(TrainOutcome, PolicyStageReport)> {
    let stage = "train-policy";
    let mut caption_sets = BTreeMap::new();
    let mut humor = BTreeMap::new();
    for (&gid, items) in dataset.groups() {
        let ctx = ContextId(gid.0);
        caption_sets.insert(ctx, items.iter().map(|it| it.id).collect::<Vec<_>>());
        humor.insert(
            ctx,
            items
                .iter()
                .map(|it| (it.id, it.humor))
                .collect::<BTreeMap<_, _>>(),
        );
    }
    let reference =
        CategoricalPolicy::uniform(caption_sets).map_err(|e| CliError::check(stage, e))?;
    let outcome = train_policy(&reference, targets, &config.grpo.to_config(), &humor)
        .map_err(|e| CliError::check(stage, e))?;

    let first = outcome.trace.first().expect("trace has the initial row");
    let last = outcome.trace.last().expect("trace is nonempty");
    let h0 = first.expected_humor;
    let min_stability_margin = outcome
        .trace
        .iter()
        .map(|row| row.expected_humor - (h0 - (row.mean_kl / 2.0).sqrt()))
        .fold(f64::INFINITY, f64::min);
    let pinsker = pinsker_check(&outcome.policy, &reference, &humor)
        .map_err(|e| CliError::check(stage, e))?;
    let report = PolicyStageReport {
        initial_expected_humor: h0,
        final_expected_humor: last.expected_humor,
        delta_expected_humor: last.expected_humor - h0,
        final_mean_kl: last.mean_kl,
        steps_run: last.step,
        min_stability_margin,
        pinsker: PinskerEntry::from(&pinsker),
    };
    Ok((outcome, report))
}

fn path_stage(config: &ExperimentConfig) -> Result<PathStageReport> {
    let stage = "cot-sim";
    let seed = derive_seed(config.seed, STAGE_COT);
    let summary = path_bound_summary(
        config.cot.n_paths,
        config.cot.alpha,
        config.cot.delta,
        config.cot.trials,
        seed,
    )
    .map_err(|e| CliError::check(stage, e))?;
    Ok(summary)
}

/// Bound checks over `trials` random path models plus the explicit
/// tightness construction and an anchoring sweep.
pub fn path_bound_summary(
    n_paths: usize,
    alpha: f64,
    delta: f64,
    trials: u64,
    seed: u64,
) -> std::result::Result<PathStageReport, grouppref_core::cotsim::PathModelError> {
    let bound = humor_lower_bound(alpha, delta);
    let mut violations = 0u64;
    let mut min_margin = f64::INFINITY;
    let mut anchoring_ok = true;
    for t in 0..trials {
        let model = build_path_model(
            n_paths,
            alpha,
            delta,
            GapCondition::PerPath,
            derive_seed(seed, t),
        )?;
        let expected = expected_path_humor(&model);
        let margin = expected - bound;
        min_margin = min_margin.min(margin);
        if margin < -1e-12 {
            violations += 1;
        }
        if t % 100 == 0 {
            let anchor = *model.star_set().iter().next().expect("nonempty star set");
            for lambda in [0.25, 0.5, 1.0] {
                let anchored = anchor_stage2(&model, anchor, lambda)?;
                if expected_path_humor(&anchored) < expected - 1e-12 {
                    anchoring_ok = false;
                }
            }
        }
    }

    let tightness = tightness_construction(n_paths.max(2), alpha, delta)?;
    let gap = expected_path_humor(&tightness) - bound;
    Ok(PathStageReport {
        trials,
        violations,
        min_margin_to_bound: min_margin,
        tightness_gap_at_construction: gap,
        anchoring_never_decreases: anchoring_ok,
    })
}

/// One star path holding mass `alpha`; every other path sits exactly
/// `delta` below the top. Expected quality equals the bound.
pub fn tightness_construction(
    n_paths: usize,
    alpha: f64,
    delta: f64,
) -> std::result::Result<PathModel, grouppref_core::cotsim::PathModelError> {
    let rest = n_paths - 1;
    let mut probs = vec![(1.0 - alpha) / rest as f64; n_paths];
    probs[0] = alpha;
    let mut humor = vec![1.0 - delta; n_paths];
    humor[0] = 1.0;
    PathModel::new(probs, humor, [0].into_iter().collect())
}

/// Serializable form of a rank-correlation method for reports.
pub fn method_name(method: PValueMethod) -> &'static str {
    match method {
        PValueMethod::Exact => "exact",
        PValueMethod::NormalApprox => "normal-approx",
    }
}
