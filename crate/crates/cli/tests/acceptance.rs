//! Acceptance suite: one test per release criterion, each printing a
//! PASS line when it holds. Run with
//! `cargo test -p grouppref-cli --test acceptance -- --nocapture`
//! to see the per-criterion lines.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use grouppref_cli::config::ExperimentConfig;
use grouppref_cli::formats;
use grouppref_cli::pipeline::{run_pipeline, PipelineReport};
use grouppref_cli::verify;

use grouppref_core::aggregate::maxdiff_aggregate;
use grouppref_core::dataset::{generate, DatasetSpec, GroupId, ItemId};
use grouppref_core::policy::{train_policy, GrpoConfig};
use grouppref_core::prefgen::{gen_maxdiff_trials, recommended_task_count};
use grouppref_core::rng::{derive_seed, stream_rng};
use grouppref_core::stats::kendall_tau;
use rand::Rng;

fn pass(criterion: usize, message: &str) {
    println!("ACCEPTANCE {criterion:2}: PASS — {message}");
}

fn default_run(dir: &Path) -> PipelineReport {
    let mut config = ExperimentConfig::default();
    config.output_dir = dir.to_path_buf();
    run_pipeline(&config).expect("default pipeline runs")
}

#[test]
fn criterion_01_rank_consistency() {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let report = default_run(dir.path());
    let elapsed = start.elapsed();
    for g in &report.groups {
        assert_eq!(
            g.tau_fitted, 1.0,
            "group {} fitted tau {} != 1.0",
            g.group, g.tau_fitted
        );
    }
    assert_eq!(report.groups.len(), 5);
    assert!(
        elapsed.as_secs_f64() < 30.0,
        "pipeline took {elapsed:?}, budget 30 s"
    );
    pass(
        1,
        &format!(
            "5 groups x 15 items, noiseless full coverage: within-group tau = 1.0 on every group ({elapsed:.2?})"
        ),
    );
}

#[test]
fn criterion_02_noise_robustness() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = ExperimentConfig::default();
    config.epsilon = 0.1;
    config.output_dir = dir.path().to_path_buf();
    assert_eq!(config.eval.n_eval_pairs, 10_000);
    let report = run_pipeline(&config).expect("noisy pipeline runs");

    let rates: Vec<f64> = report
        .reversal_bins
        .iter()
        .map(|b| b.rate.expect("default bins all receive pairs"))
        .collect();
    assert_eq!(rates.len(), 4);
    assert!(
        rates[3] < rates[0],
        "rate in [0.3, 1] = {} is not strictly below rate in [0, 0.1) = {}",
        rates[3],
        rates[0]
    );
    let inversions = rates.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(inversions <= 1, "rates {rates:?}: {inversions} adjacent inversions");
    pass(
        2,
        &format!("epsilon 0.1 reversal rates by margin bin: {rates:?} (inversions: {inversions})"),
    );
}

#[test]
fn criterion_03_ebc_borda_reduction() {
    let mut violations = Vec::new();
    verify::borda_reduction(200, 33, &mut violations);
    assert!(violations.is_empty(), "{violations:?}");
    pass(3, "200 random complete 0/1 tournaments (n <= 12): EBC equals Borda win counts exactly");
}

#[test]
fn criterion_04_ebc_order_consistency() {
    let mut violations = Vec::new();
    verify::ebc_order_consistency(200, 44, &mut violations);
    assert!(violations.is_empty(), "{violations:?}");
    pass(4, "200 random link-generated probability matrices: argsort(EBC) = argsort(latent quality)");
}

#[test]
fn criterion_05_pinsker() {
    let mut violations = Vec::new();
    verify::pinsker_random(1000, 55, &mut violations);
    verify::pinsker_adversarial(&mut violations);
    assert!(violations.is_empty(), "{violations:?}");
    pass(5, "1000 random (policy, ref, h) triples: TV <= sqrt(KL/2) and |dE h| <= TV; adversarial ratio <= 1");
}

#[test]
fn criterion_06_grpo_improvement() {
    // Rank-consistent targets produced by the default (clean) pipeline.
    let dir = tempfile::tempdir().unwrap();
    let report = default_run(dir.path());
    for g in &report.groups {
        assert_eq!(g.tau_fitted, 1.0, "targets are not rank-consistent");
    }
    let targets = formats::read_targets(&dir.path().join("targets.json")).unwrap();
    let humor = formats::read_humor(&dir.path().join("humor.json")).unwrap();
    let caption_sets = humor
        .iter()
        .map(|(&ctx, table)| (ctx, table.keys().copied().collect::<Vec<_>>()))
        .collect();
    let reference = grouppref_core::policy::CategoricalPolicy::uniform(caption_sets).unwrap();
    let config = GrpoConfig::default();
    assert_eq!((config.beta, config.steps), (0.1, 200));

    let start = Instant::now();
    let outcome = train_policy(&reference, &targets, &config, &humor).unwrap();
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "training took {elapsed:?}");

    let h0 = outcome.trace.first().unwrap().expected_humor;
    let h_final = outcome.trace.last().unwrap().expected_humor;
    assert!(
        h_final >= h0 + 0.05,
        "expected quality gain {} below 0.05",
        h_final - h0
    );
    for row in &outcome.trace {
        let floor = h0 - (row.mean_kl / 2.0).sqrt();
        assert!(
            row.expected_humor >= floor - 1e-12,
            "step {}: H {} below Pinsker floor {floor}",
            row.step,
            row.expected_humor
        );
    }
    pass(
        6,
        &format!(
            "beta 0.1, 200 steps: expected quality {h0:.4} -> {h_final:.4} (gain {:.4}), floor held at every step ({elapsed:.2?})",
            h_final - h0
        ),
    );
}

#[test]
fn criterion_07_path_bound() {
    let mut violations = Vec::new();
    verify::path_bounds(1000, 77, &mut violations);
    assert!(violations.is_empty(), "{violations:?}");

    // Tightness at an explicit construction, to 1e-12.
    let model = grouppref_cli::pipeline::tightness_construction(16, 0.41, 0.33).unwrap();
    let gap = grouppref_core::cotsim::expected_path_humor(&model)
        - grouppref_core::cotsim::humor_lower_bound(0.41, 0.33);
    assert!(gap.abs() < 1e-12, "tightness gap {gap}");
    pass(7, "1000 random path models: E[quality] >= 1 - (1-alpha)*delta; tightness construction exact; anchoring monotone");
}

#[test]
fn criterion_08_gradient_oracles() {
    let mut violations = Vec::new();
    verify::pair_gradient_check(50, 88, &mut violations);
    verify::grpo_gradient_check(50, 99, &mut violations);
    assert!(violations.is_empty(), "{violations:?}");
    pass(8, "pairwise-loss and listwise-objective gradients match central differences (rel err < 1e-4, 50 instances each)");
}

#[test]
fn criterion_09_kendall_exactness() {
    let mut rng = stream_rng(9, 0);
    let mut checked = 0;
    while checked < 100 {
        let n = 2 + rng.random_range(0..5usize); // n in 2..=6
        let base: Vec<ItemId> = (0..n as u64).map(ItemId).collect();
        let mut a = base.clone();
        let mut b = base.clone();
        for k in (1..n).rev() {
            a.swap(k, rng.random_range(0..=k));
            b.swap(k, rng.random_range(0..=k));
        }
        let r = kendall_tau(&a, &b).unwrap();
        let brute = brute_force_tau_p(&a, &b);
        assert!(
            (r.tau - brute.0).abs() < 1e-12 && (r.p_value - brute.1).abs() < 1e-12,
            "n {n}: tau {} vs {}, p {} vs {}",
            r.tau,
            brute.0,
            r.p_value,
            brute.1
        );
        checked += 1;
    }
    pass(9, "tau and exact p match brute-force permutation enumeration on 100 random order pairs (n <= 6)");
}

/// Independent oracle: enumerate all n! orders of `b`'s id set.
fn brute_force_tau_p(a: &[ItemId], b: &[ItemId]) -> (f64, f64) {
    let observed = kendall_tau(a, b).unwrap().tau;
    let mut ids: Vec<ItemId> = b.to_vec();
    ids.sort();
    let (mut hits, mut total) = (0u64, 0u64);
    permute(&mut ids, 0, &mut |perm| {
        total += 1;
        if kendall_tau(a, perm).unwrap().tau.abs() >= observed.abs() - 1e-12 {
            hits += 1;
        }
    });
    (observed, hits as f64 / total as f64)
}

fn permute(items: &mut Vec<ItemId>, k: usize, visit: &mut impl FnMut(&[ItemId])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}

#[test]
fn criterion_10_pattern_reproduction() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = ExperimentConfig::default();
    config.epsilon = 0.15;
    config.output_dir = dir.path().to_path_buf();
    let report = run_pipeline(&config).expect("pipeline runs at epsilon 0.15");
    assert!(
        report.groups_improved >= 4,
        "only {} of 5 groups improved over the random baseline",
        report.groups_improved
    );
    assert!(
        report.mean_delta_tau >= 0.3,
        "mean delta tau {} below +0.3",
        report.mean_delta_tau
    );
    pass(
        10,
        &format!(
            "epsilon 0.15: fitted tau beats the random baseline on {}/5 groups, mean delta tau +{:.2}",
            report.groups_improved, report.mean_delta_tau
        ),
    );
}

#[test]
fn criterion_11_maxdiff_recovery() {
    let ds = generate(&DatasetSpec::uniform(1, 15, 8), 42).unwrap();
    let items = &ds.groups()[&GroupId(0)];
    let k = 3;
    let tasks = recommended_task_count(items.len(), k);
    assert_eq!(tasks, 25);
    // Annotator streams exactly as the gen-maxdiff subcommand derives them.
    let mut trials = Vec::new();
    for annotator in 0..20u64 {
        let stream = derive_seed(derive_seed(42, 0), annotator);
        trials.extend(gen_maxdiff_trials(items, k, tasks, 0.5, stream).unwrap());
    }
    let roster: Vec<ItemId> = items.iter().map(|it| it.id).collect();
    let result = maxdiff_aggregate(&trials, &roster).unwrap();

    let mut truth: Vec<ItemId> = roster.clone();
    truth.sort_by(|&a, &b| {
        let ha = ds.item(a).unwrap().humor;
        let hb = ds.item(b).unwrap().humor;
        hb.partial_cmp(&ha).unwrap().then(a.cmp(&b))
    });
    let tau = kendall_tau(&result.ranking, &truth).unwrap().tau;
    assert!(tau >= 0.8, "aggregated MaxDiff tau {tau} below 0.8");
    pass(
        11,
        &format!("J=15, k=3, 20 annotators x 25 tasks, Gumbel 0.5: aggregated ranking tau = {tau:.3} >= 0.8"),
    );
}

#[test]
fn criterion_12_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let run = || {
        let status = Command::new(env!("CARGO_BIN_EXE_grouppref"))
            .args(["run-pipeline", "--out-dir"])
            .arg(&out)
            .output()
            .expect("binary runs");
        assert!(status.status.success(), "pipeline exited with {:?}", status.status);
        std::fs::read(out.join("report.json")).expect("report exists")
    };
    let first = run();
    let second = run();
    assert_eq!(first, second, "report.json differs between identical runs");
    pass(12, "two identical run-pipeline invocations produce byte-identical report.json");
}
