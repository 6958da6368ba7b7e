//! One-shot verification of every checkable guarantee: path-model bounds,
//! the Pinsker chain, Borda reduction, aggregation order consistency, and
//! analytic-vs-numeric gradients. Violations are printed to stderr with
//! the seeds needed to reproduce them.

use std::collections::BTreeMap;

use grouppref_core::aggregate::{ebc, GroupTargets, PairProbMatrix};
use grouppref_core::cotsim::{
    anchor_stage2, build_path_model, expected_path_humor, humor_lower_bound, GapCondition,
};
use grouppref_core::dataset::{generate, DatasetSpec, GroupId, ItemId};
use grouppref_core::link::LinkFunction;
use grouppref_core::policy::{
    grpo_loss, pinsker_check, CategoricalPolicy, ContextHead, ContextId,
};
use grouppref_core::prefgen::{gen_pair_labels, Coverage};
use grouppref_core::rewardfit::{pair_loss, pair_loss_grad, ScoreParams};
use grouppref_core::rng::{derive_seed, stream_rng};
use rand::Rng;

use crate::error::{CliError, Result};
use crate::pipeline::tightness_construction;

/// Run every check; returns human-readable violations (empty on success).
pub fn verify_all(trials: u64, seed: u64, inject_humor: Option<f64>) -> Result<Vec<String>> {
    if trials == 0 {
        return Err(CliError::Usage("--trials must be >= 1".into()));
    }
    let mut violations = Vec::new();
    path_bounds(trials, derive_seed(seed, 1), &mut violations);
    pinsker_random(trials, derive_seed(seed, 2), &mut violations);
    pinsker_adversarial(&mut violations);
    borda_reduction(200, derive_seed(seed, 3), &mut violations);
    ebc_order_consistency(200, derive_seed(seed, 4), &mut violations);
    pair_gradient_check(50, derive_seed(seed, 5), &mut violations);
    grpo_gradient_check(50, derive_seed(seed, 6), &mut violations);
    if let Some(h) = inject_humor {
        injected_humor_check(h, &mut violations);
    }
    Ok(violations)
}

pub fn path_bounds(trials: u64, seed: u64, violations: &mut Vec<String>) {
    let mut rng = stream_rng(seed, 0);
    for t in 0..trials {
        let n_paths = 1 + rng.random_range(0..40usize);
        let alpha = if t % 9 == 0 { 1.0 } else { 0.01 + 0.99 * rng.random::<f64>() };
        let delta = rng.random::<f64>();
        let condition = if t % 2 == 0 { GapCondition::PerPath } else { GapCondition::AverageOnly };
        let model_seed = derive_seed(seed, t + 1);
        let model = match build_path_model(n_paths, alpha, delta, condition, model_seed) {
            Ok(m) => m,
            Err(grouppref_core::cotsim::PathModelError::AlphaUnreachable { .. }) => continue,
            Err(e) => {
                violations.push(format!("path model build failed (seed {model_seed}): {e}"));
                continue;
            }
        };
        let expected = expected_path_humor(&model);
        let bound = humor_lower_bound(alpha, delta);
        if expected < bound - 1e-12 {
            violations.push(format!(
                "path bound violated: E {expected} < {bound} (alpha {alpha}, delta {delta}, seed {model_seed})"
            ));
        }
        let anchor = *model.star_set().iter().next().expect("star set nonempty");
        for lambda in [0.25, 0.5, 1.0] {
            match anchor_stage2(&model, anchor, lambda) {
                Ok(anchored) => {
                    if expected_path_humor(&anchored) < expected - 1e-12 {
                        violations.push(format!(
                            "anchoring decreased expected quality (lambda {lambda}, seed {model_seed})"
                        ));
                    }
                }
                Err(e) => violations.push(format!("anchoring failed (seed {model_seed}): {e}")),
            }
        }
    }
    // Tightness: the single-star construction must land on the bound.
    let (alpha, delta) = (0.37, 0.58);
    match tightness_construction(16, alpha, delta) {
        Ok(model) => {
            let gap = expected_path_humor(&model) - humor_lower_bound(alpha, delta);
            if gap.abs() > 1e-12 {
                violations.push(format!("tightness construction off the bound by {gap}"));
            }
        }
        Err(e) => violations.push(format!("tightness construction failed: {e}")),
    }
}

fn two_point_policy(p0: f64) -> CategoricalPolicy {
    let contexts: BTreeMap<ContextId, ContextHead> = [(
        ContextId(0),
        ContextHead {
            captions: vec![ItemId(0), ItemId(1)],
            logits: vec![p0.ln(), (1.0 - p0).ln()],
        },
    )]
    .into_iter()
    .collect();
    CategoricalPolicy::new(contexts).expect("valid two-point policy")
}

pub fn pinsker_random(trials: u64, seed: u64, violations: &mut Vec<String>) {
    let mut rng = stream_rng(seed, 0);
    for t in 0..trials {
        let n = 2 + rng.random_range(0..6usize);
        let mut mk = || -> Vec<f64> {
            (0..n).map(|_| rng.random::<f64>() * 8.0 - 4.0).collect()
        };
        let captions: Vec<ItemId> = (0..n as u64).map(ItemId).collect();
        let policy_logits = mk();
        let reference_logits = mk();
        let policy = CategoricalPolicy::new(
            [(ContextId(0), ContextHead { captions: captions.clone(), logits: policy_logits })]
                .into_iter()
                .collect(),
        )
        .expect("valid policy");
        let reference = CategoricalPolicy::new(
            [(ContextId(0), ContextHead { captions: captions.clone(), logits: reference_logits })]
                .into_iter()
                .collect(),
        )
        .expect("valid policy");
        let humor: BTreeMap<ContextId, BTreeMap<ItemId, f64>> = [(
            ContextId(0),
            captions.iter().map(|&c| (c, rng.random::<f64>())).collect(),
        )]
        .into_iter()
        .collect();
        match pinsker_check(&policy, &reference, &humor) {
            Ok(report) if !report.holds => {
                violations.push(format!("Pinsker chain violated at trial {t} (seed {seed})"))
            }
            Ok(_) => {}
            Err(e) => violations.push(format!("Pinsker check errored at trial {t}: {e}")),
        }
    }
}

pub fn pinsker_adversarial(violations: &mut Vec<String>) {
    let reference = two_point_policy(0.5);
    let humor: BTreeMap<ContextId, BTreeMap<ItemId, f64>> = [(
        ContextId(0),
        [(ItemId(0), 1.0), (ItemId(1), 0.0)].into_iter().collect(),
    )]
    .into_iter()
    .collect();
    let mut max_ratio = 0.0f64;
    let mut e = 1e-4;
    while e < 0.5 {
        let policy = two_point_policy(1.0 - e);
        match pinsker_check(&policy, &reference, &humor) {
            Ok(report) => {
                if !report.holds {
                    violations.push(format!("adversarial Pinsker violated at e = {e}"));
                }
                if report.bound > 0.0 {
                    max_ratio = max_ratio.max(report.delta_h / report.bound);
                }
            }
            Err(err) => violations.push(format!("adversarial Pinsker errored at e = {e}: {err}")),
        }
        e *= 1.25;
    }
    if max_ratio > 1.0 + 1e-12 {
        violations.push(format!("adversarial tightness ratio {max_ratio} exceeds 1"));
    }
}

pub fn borda_reduction(trials: u64, seed: u64, violations: &mut Vec<String>) {
    let mut rng = stream_rng(seed, 0);
    for t in 0..trials {
        let n = 2 + rng.random_range(0..11usize); // n <= 12
        let mut entries = Vec::new();
        let mut wins = vec![0.0; n];
        for i in 0..n {
            for j in (i + 1)..n {
                let i_wins = rng.random::<bool>();
                entries.push((i, j, if i_wins { 1.0 } else { 0.0 }));
                if i_wins {
                    wins[i] += 1.0;
                } else {
                    wins[j] += 1.0;
                }
            }
        }
        let ids: Vec<ItemId> = (0..n as u64).map(ItemId).collect();
        let matrix = match PairProbMatrix::from_entries(GroupId(0), ids, &entries) {
            Ok(m) => m,
            Err(e) => {
                violations.push(format!("tournament {t} rejected: {e}"));
                continue;
            }
        };
        match ebc(&matrix, 0.0, false) {
            Ok(scores) if scores.scores == wins => {}
            Ok(scores) => violations.push(format!(
                "tournament {t}: EBC {:?} != Borda wins {:?}",
                scores.scores, wins
            )),
            Err(e) => violations.push(format!("tournament {t}: {e}")),
        }
    }
}

pub fn ebc_order_consistency(trials: u64, seed: u64, violations: &mut Vec<String>) {
    for t in 0..trials {
        let ds_seed = derive_seed(seed, t);
        let mut spec = DatasetSpec::uniform(1, 12, 4);
        spec.min_humor_gap = 0.01;
        let ds = match generate(&spec, ds_seed) {
            Ok(ds) => ds,
            Err(e) => {
                violations.push(format!("dataset gen failed (seed {ds_seed}): {e}"));
                continue;
            }
        };
        let items = &ds.groups()[&GroupId(0)];
        let link = match t % 3 {
            0 => LinkFunction::Logistic,
            1 => LinkFunction::Probit,
            _ => LinkFunction::ScaledLogistic(0.5 + (t % 7) as f64),
        };
        let matrix = match PairProbMatrix::from_link(GroupId(0), items, &link) {
            Ok(m) => m,
            Err(e) => {
                violations.push(format!("link matrix failed (seed {ds_seed}): {e}"));
                continue;
            }
        };
        let scores = match ebc(&matrix, 0.0, false) {
            Ok(s) => s.scores,
            Err(e) => {
                violations.push(format!("ebc failed (seed {ds_seed}): {e}"));
                continue;
            }
        };
        let mut by_ebc: Vec<usize> = (0..items.len()).collect();
        by_ebc.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
        let mut by_humor: Vec<usize> = (0..items.len()).collect();
        by_humor.sort_by(|&a, &b| items[a].humor.partial_cmp(&items[b].humor).unwrap());
        if by_ebc != by_humor {
            violations.push(format!(
                "EBC order mismatch on link-generated matrix (seed {ds_seed}, {link:?})"
            ));
        }
    }
}

pub fn pair_gradient_check(trials: u64, seed: u64, violations: &mut Vec<String>) {
    let mut rng = stream_rng(seed, 0);
    for t in 0..trials {
        let d = 2 + (t as usize % 4);
        let ds_seed = derive_seed(seed, t + 1);
        let mut spec = DatasetSpec::uniform(2, 5, d);
        spec.min_humor_gap = 0.02;
        let ds = match generate(&spec, ds_seed) {
            Ok(ds) => ds,
            Err(e) => {
                violations.push(format!("dataset gen failed (seed {ds_seed}): {e}"));
                continue;
            }
        };
        let labels =
            match gen_pair_labels(&ds, &LinkFunction::Logistic, &Coverage::Full, 1, ds_seed) {
                Ok(l) => l,
                Err(e) => {
                    violations.push(format!("label gen failed (seed {ds_seed}): {e}"));
                    continue;
                }
            };
        let l2 = if t % 2 == 0 { 0.0 } else { 1e-3 };
        let params = ScoreParams {
            weights: (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
            bias: 0.0,
        };
        let grad = match pair_loss_grad(&params, &labels, &ds, l2) {
            Ok(g) => g,
            Err(e) => {
                violations.push(format!("gradient failed (seed {ds_seed}): {e}"));
                continue;
            }
        };
        let h = 1e-5;
        for (k, &g) in grad.iter().take(d).enumerate() {
            let mut plus = params.clone();
            plus.weights[k] += h;
            let mut minus = params.clone();
            minus.weights[k] -= h;
            let fd = (pair_loss(&plus, &labels, &ds, l2).unwrap()
                - pair_loss(&minus, &labels, &ds, l2).unwrap())
                / (2.0 * h);
            let denom = g.abs().max(fd.abs()).max(1e-8);
            if ((g - fd) / denom).abs() >= 1e-4 {
                violations.push(format!(
                    "pair-loss gradient mismatch (seed {ds_seed}, coord {k}): {g} vs {fd}"
                ));
            }
        }
    }
}

pub fn grpo_gradient_check(trials: u64, seed: u64, violations: &mut Vec<String>) {
    let mut rng = stream_rng(seed, 0);
    for t in 0..trials {
        let n = 2 + rng.random_range(0..4usize);
        let captions: Vec<ItemId> = (0..n as u64).map(ItemId).collect();
        let logits: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let ref_logits: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let mk = |l: Vec<f64>| {
            CategoricalPolicy::new(
                [(ContextId(0), ContextHead { captions: captions.clone(), logits: l })]
                    .into_iter()
                    .collect(),
            )
            .expect("valid policy")
        };
        let policy = mk(logits);
        let reference = mk(ref_logits);
        let beta = if t % 2 == 0 { 0.0 } else { 0.05 + rng.random::<f64>() };
        let take = if t % 3 == 0 && n > 2 { n - 1 } else { n };
        let raw: Vec<f64> = (0..take).map(|_| 0.05 + rng.random::<f64>()).collect();
        let z: f64 = raw.iter().sum();
        let targets: BTreeMap<ContextId, GroupTargets> = [(
            ContextId(0),
            GroupTargets {
                group: GroupId(0),
                items: captions[..take].to_vec(),
                q: raw.iter().map(|x| x / z).collect(),
            },
        )]
        .into_iter()
        .collect();

        let out = match grpo_loss(&policy, &reference, &targets, beta) {
            Ok(o) => o,
            Err(e) => {
                violations.push(format!("grpo loss failed at trial {t}: {e}"));
                continue;
            }
        };
        let h = 1e-6;
        for a in 0..n {
            let eval = |delta: f64| {
                let mut head = policy.contexts()[&ContextId(0)].clone();
                head.logits[a] += delta;
                let p = CategoricalPolicy::new(
                    [(ContextId(0), head)].into_iter().collect(),
                )
                .expect("valid policy");
                grpo_loss(&p, &reference, &targets, beta).unwrap().loss
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let analytic = out.grads[&ContextId(0)][a];
            let denom = analytic.abs().max(fd.abs()).max(1e-6);
            if ((analytic - fd) / denom).abs() >= 1e-4 {
                violations.push(format!(
                    "grpo gradient mismatch at trial {t} coord {a}: {analytic} vs {fd}"
                ));
            }
        }
    }
}

/// Feed a chosen quality value through the bound checker; out-of-range
/// values must surface as domain errors.
fn injected_humor_check(h: f64, violations: &mut Vec<String>) {
    let policy = two_point_policy(0.7);
    let reference = two_point_policy(0.5);
    let humor: BTreeMap<ContextId, BTreeMap<ItemId, f64>> = [(
        ContextId(0),
        [(ItemId(0), h), (ItemId(1), 0.5)].into_iter().collect(),
    )]
    .into_iter()
    .collect();
    match pinsker_check(&policy, &reference, &humor) {
        Ok(report) if report.holds => {}
        Ok(report) => violations.push(format!(
            "injected quality {h}: bound check unexpectedly failed ({report:?})"
        )),
        Err(e) => violations.push(format!("injected quality {h}: domain error: {e}")),
    }
}
