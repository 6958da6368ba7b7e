//! Cross-module flows: curriculum groups through labeling and ranking, and
//! the margin-bucketed robustness of a fit under label noise.

use std::collections::BTreeMap;

use grouppref_core::dataset::{generate, DatasetSpec, GroupId, Item, ItemId, OracleParams};
use grouppref_core::link::LinkFunction;
use grouppref_core::prefgen::{
    apply_label_noise, default_tiers, gen_curriculum_group, gen_pair_labels, Coverage, PairLabel,
};
use grouppref_core::rewardfit::{fit, score, FitConfig};
use grouppref_core::stats::{default_margin_bins, kendall_tau, reversal_curve};
use grouppref_core::GroupDataset;

fn humor_ranking(items: &[Item]) -> Vec<ItemId> {
    let mut ids: Vec<ItemId> = items.iter().map(|it| it.id).collect();
    ids.sort_by(|&a, &b| {
        let ha = items.iter().find(|it| it.id == a).unwrap().humor;
        let hb = items.iter().find(|it| it.id == b).unwrap().humor;
        hb.partial_cmp(&ha).unwrap().then(a.cmp(&b))
    });
    ids
}

/// Borda ranking from hard labels: items by descending win count.
fn label_ranking(items: &[Item], labels: &[PairLabel]) -> Vec<ItemId> {
    let mut wins: BTreeMap<ItemId, usize> = items.iter().map(|it| (it.id, 0)).collect();
    for l in labels {
        let winner = if l.y { l.i } else { l.j };
        *wins.get_mut(&winner).unwrap() += 1;
    }
    let mut ids: Vec<ItemId> = items.iter().map(|it| it.id).collect();
    ids.sort_by(|&a, &b| wins[&b].cmp(&wins[&a]).then(a.cmp(&b)));
    ids
}

#[test]
fn curriculum_labels_under_steep_link_recover_constructed_order() {
    let oracle = OracleParams {
        weights: vec![0.9, -0.3, 0.5, 0.2],
        bias: -0.1,
    };
    // A base item with a healthy interior quality value.
    let features = vec![1.4, -0.2, 0.8, 0.3];
    let humor = oracle.latent_humor(&features).unwrap();
    let base = Item {
        id: ItemId(0),
        group: GroupId(0),
        features,
        humor,
    };
    let items = gen_curriculum_group(&base, &oracle, &default_tiers(), 1, 77).unwrap();

    // Steep enough that every label is effectively deterministic: the
    // smallest constructed gap is 0.05 * base quality.
    let link = LinkFunction::ScaledLogistic(1000.0);
    let mut groups = BTreeMap::new();
    groups.insert(GroupId(0), items.clone());
    let mut oracles = BTreeMap::new();
    oracles.insert(GroupId(0), oracle);
    let ds = GroupDataset::new(4, groups, oracles).unwrap();
    let labels = gen_pair_labels(&ds, &link, &Coverage::Full, 1, 3).unwrap();
    assert_eq!(labels.len(), 15);

    let recovered = label_ranking(&items, &labels);
    let truth = humor_ranking(&items);
    let tau = kendall_tau(&recovered, &truth).unwrap();
    assert_eq!(tau.tau, 1.0, "recovered {recovered:?} vs truth {truth:?}");
    // Base on top, then tiers in descending tier order.
    assert_eq!(truth[0], ItemId(0));
    assert_eq!(truth[1], ItemId(5));
    assert_eq!(truth[5], ItemId(1));
}

#[test]
fn noisy_fit_reversals_concentrate_on_small_margins() {
    let ds = generate(&DatasetSpec::uniform(5, 15, 8), 42).unwrap();
    let link = LinkFunction::ScaledLogistic(20.0);
    let clean = gen_pair_labels(&ds, &link, &Coverage::Full, 3, 43).unwrap();
    let noisy = apply_label_noise(&clean, 0.1, 40).unwrap();
    let (params, _) = fit(&noisy, &ds, &FitConfig::default()).unwrap();

    let scores: BTreeMap<ItemId, f64> = ds
        .items()
        .map(|it| (it.id, score(&params, it).unwrap()))
        .collect();
    let curve = reversal_curve(&scores, &ds, &default_margin_bins(), 10_000, 41).unwrap();

    let rates: Vec<f64> = curve
        .iter()
        .map(|b| b.rate.expect("every default bin should receive pairs"))
        .collect();
    // Large margins must reverse strictly less often than near-ties, with
    // at most one adjacent bump along the way.
    assert!(
        rates[3] < rates[0],
        "large-margin rate {} !< small-margin rate {}",
        rates[3],
        rates[0]
    );
    let inversions = rates.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(inversions <= 1, "rates {rates:?} have {inversions} bumps");
}

#[test]
fn reversal_rates_shrink_when_noise_does() {
    let ds = generate(&DatasetSpec::uniform(5, 15, 8), 42).unwrap();
    let link = LinkFunction::ScaledLogistic(20.0);
    let clean = gen_pair_labels(&ds, &link, &Coverage::Full, 3, 43).unwrap();

    let overall_rate = |eps: f64| -> f64 {
        let labels = if eps == 0.0 {
            clean.clone()
        } else {
            apply_label_noise(&clean, eps, 2).unwrap()
        };
        let (params, _) = fit(&labels, &ds, &FitConfig::default()).unwrap();
        let scores: BTreeMap<ItemId, f64> = ds
            .items()
            .map(|it| (it.id, score(&params, it).unwrap()))
            .collect();
        let curve = reversal_curve(&scores, &ds, &default_margin_bins(), 10_000, 9).unwrap();
        let (pairs, reversals) = curve
            .iter()
            .fold((0, 0), |(p, r), b| (p + b.pairs, r + b.reversals));
        reversals as f64 / pairs as f64
    };
    let noisy = overall_rate(0.25);
    let mild = overall_rate(0.05);
    assert!(
        mild < noisy,
        "reversals did not shrink with noise: {mild} !< {noisy}"
    );
}
