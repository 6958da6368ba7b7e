//! Rank statistics and robustness diagnostics.
//!
//! Orders are strict permutations of an item-id set; upstream score ties
//! must be broken (by item id) before calling in here. For `n <= 10` the
//! Kendall p-value is exact: the tail of the statistic's null distribution
//! over all `n!` rankings, computed in closed integer form by dynamic
//! programming over inversion counts (the brute-force enumeration used as a
//! test oracle walks the permutations directly and agrees). Beyond that the
//! usual normal approximation on the raw concordant-minus-discordant
//! statistic takes over, with variance `n(n-1)(2n+5)/18` and no continuity
//! correction.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{GroupDataset, ItemId};

/// Largest `n` for which the exact permutation p-value is used.
pub const EXACT_P_MAX_N: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PValueMethod {
    Exact,
    NormalApprox,
}

/// Kendall rank correlation with a two-sided p-value.
#[derive(Debug, Clone, PartialEq)]
pub struct RankCorrelation {
    pub tau: f64,
    pub p_value: f64,
    pub n: usize,
    pub method: PValueMethod,
}

/// Kendall's tau between two orders of the same id set.
///
/// `tau = (concordant - discordant) / C(n, 2)`; the p-value is two-sided,
/// exact for `n <=` [`EXACT_P_MAX_N`] and normal-approximate above.
pub fn kendall_tau(order_a: &[ItemId], order_b: &[ItemId]) -> Result<RankCorrelation, StatsError> {
    let ranks = relative_ranks(order_a, order_b)?;
    let n = ranks.len();
    let total = (n * (n - 1) / 2) as u64;
    let discordant = count_inversions(&ranks);
    let concordant = total - discordant;
    let tau = (concordant as f64 - discordant as f64) / total as f64;

    let (p_value, method) = if n <= EXACT_P_MAX_N {
        (exact_two_sided_p(n, discordant), PValueMethod::Exact)
    } else {
        let s = concordant as f64 - discordant as f64;
        let sigma = libm::sqrt((n * (n - 1) * (2 * n + 5)) as f64 / 18.0);
        let z = s / sigma;
        (
            libm::erfc(z.abs() / core::f64::consts::SQRT_2),
            PValueMethod::NormalApprox,
        )
    };
    Ok(RankCorrelation {
        tau,
        p_value,
        n,
        method,
    })
}

/// Spearman's rho between two tie-free orders: `1 - 6 Σ d² / (n(n²-1))`.
pub fn spearman_rho(order_a: &[ItemId], order_b: &[ItemId]) -> Result<f64, StatsError> {
    let ranks = relative_ranks(order_a, order_b)?;
    let n = ranks.len();
    let sum_d2: f64 = ranks
        .iter()
        .enumerate()
        .map(|(pos_a, &pos_b)| {
            let d = pos_a as f64 - pos_b as f64;
            d * d
        })
        .sum();
    Ok(1.0 - 6.0 * sum_d2 / (n * (n * n - 1)) as f64)
}

/// Positions in `order_b` of the ids of `order_a`, in `order_a` order.
/// Validates that both slices are permutations of the same id set.
fn relative_ranks(order_a: &[ItemId], order_b: &[ItemId]) -> Result<Vec<usize>, StatsError> {
    if order_a.len() != order_b.len() {
        return Err(StatsError::LengthMismatch {
            a: order_a.len(),
            b: order_b.len(),
        });
    }
    if order_a.len() < 2 {
        return Err(StatsError::TooShort(order_a.len()));
    }
    let mut pos_b = BTreeMap::new();
    for (pos, &id) in order_b.iter().enumerate() {
        if pos_b.insert(id, pos).is_some() {
            return Err(StatsError::NotAPermutation(id));
        }
    }
    let mut seen = alloc::collections::BTreeSet::new();
    order_a
        .iter()
        .map(|&id| {
            if !seen.insert(id) {
                return Err(StatsError::NotAPermutation(id));
            }
            pos_b.get(&id).copied().ok_or(StatsError::NotAPermutation(id))
        })
        .collect()
}

fn count_inversions(ranks: &[usize]) -> u64 {
    let mut inv = 0;
    for i in 0..ranks.len() {
        for j in (i + 1)..ranks.len() {
            if ranks[i] > ranks[j] {
                inv += 1;
            }
        }
    }
    inv
}

/// Two-sided exact p-value: the probability, under a uniformly random
/// ranking, that `|concordant - discordant|` is at least as large as
/// observed. `counts[k]` below is the number of permutations of `n` with
/// exactly `k` inversions (the Mahonian distribution), built by the
/// standard convolution recurrence.
fn exact_two_sided_p(n: usize, discordant: u64) -> f64 {
    let total_pairs = (n * (n - 1) / 2) as i64;
    let mut counts: Vec<u64> = alloc::vec![1];
    for m in 2..=n {
        let max_inv = counts.len() - 1 + (m - 1);
        let mut next = alloc::vec![0u64; max_inv + 1];
        for (k, &c) in counts.iter().enumerate() {
            for t in 0..m {
                next[k + t] += c;
            }
        }
        counts = next;
    }
    let observed = (total_pairs - 2 * discordant as i64).abs();
    let mut tail = 0u64;
    let mut all = 0u64;
    for (k, &c) in counts.iter().enumerate() {
        all += c;
        if (total_pairs - 2 * k as i64).abs() >= observed {
            tail += c;
        }
    }
    tail as f64 / all as f64
}

/// One margin bucket of the reversal diagnostic.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginBin {
    pub lo: f64,
    pub hi: f64,
    pub pairs: usize,
    pub reversals: usize,
    /// `None` when no sampled pair landed in the bin (undefined, not zero).
    pub rate: Option<f64>,
}

/// The four-bucket margin partition used by the robustness experiments.
pub fn default_margin_bins() -> Vec<(f64, f64)> {
    alloc::vec![(0.0, 0.1), (0.1, 0.2), (0.2, 0.3), (0.3, 1.0)]
}

/// Sample same-group pairs and bucket order reversals by true quality gap.
///
/// A reversal is a pair whose score order (ties broken by ascending item
/// id) contradicts its latent quality order; pairs with exactly equal
/// quality have no defined order and are skipped. Pairs are drawn uniformly
/// with replacement from all within-group unordered pairs.
pub fn reversal_curve(
    fitted_scores: &BTreeMap<ItemId, f64>,
    dataset: &GroupDataset,
    bins: &[(f64, f64)],
    n_eval_pairs: usize,
    seed: u64,
) -> Result<Vec<MarginBin>, StatsError> {
    validate_bins(bins)?;
    if dataset.n_items() == 0 {
        return Err(StatsError::EmptyDataset);
    }
    // Cumulative pair counts per group for uniform pair sampling.
    let groups: Vec<&[crate::dataset::Item]> = dataset
        .groups()
        .values()
        .map(|items| items.as_slice())
        .collect();
    let pair_counts: Vec<usize> = groups.iter().map(|g| g.len() * (g.len() - 1) / 2).collect();
    let total_pairs: usize = pair_counts.iter().sum();
    if total_pairs == 0 {
        return Err(StatsError::EmptyDataset);
    }

    let mut out: Vec<MarginBin> = bins
        .iter()
        .map(|&(lo, hi)| MarginBin {
            lo,
            hi,
            pairs: 0,
            reversals: 0,
            rate: None,
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n_eval_pairs {
        let mut idx = rng.random_range(0..total_pairs);
        let mut g = 0;
        while idx >= pair_counts[g] {
            idx -= pair_counts[g];
            g += 1;
        }
        let (i, j) = unrank_pair(idx, groups[g].len());
        let a = &groups[g][i];
        let b = &groups[g][j];
        let gap = (a.humor - b.humor).abs();
        if gap == 0.0 {
            continue;
        }
        let sa = *fitted_scores
            .get(&a.id)
            .ok_or(StatsError::MissingScore(a.id))?;
        let sb = *fitted_scores
            .get(&b.id)
            .ok_or(StatsError::MissingScore(b.id))?;
        let fitted_prefers_a = sa > sb || (sa == sb && a.id < b.id);
        let truth_prefers_a = a.humor > b.humor;
        let reversal = fitted_prefers_a != truth_prefers_a;

        let bin = out
            .iter_mut()
            .find(|bin| gap >= bin.lo && (gap < bin.hi || (bin.hi == 1.0 && gap <= 1.0)));
        if let Some(bin) = bin {
            bin.pairs += 1;
            if reversal {
                bin.reversals += 1;
            }
        }
    }
    for bin in &mut out {
        if bin.pairs > 0 {
            bin.rate = Some(bin.reversals as f64 / bin.pairs as f64);
        }
    }
    Ok(out)
}

/// The `idx`-th unordered pair `(i, j)`, `i < j`, of `0..n` in
/// lexicographic order.
fn unrank_pair(mut idx: usize, n: usize) -> (usize, usize) {
    for i in 0..n {
        let row = n - 1 - i;
        if idx < row {
            return (i, i + 1 + idx);
        }
        idx -= row;
    }
    unreachable!("pair index out of range")
}

fn validate_bins(bins: &[(f64, f64)]) -> Result<(), StatsError> {
    if bins.is_empty() {
        return Err(StatsError::InvalidBins("no bins"));
    }
    if bins[0].0 != 0.0 {
        return Err(StatsError::InvalidBins("bins must start at 0"));
    }
    if bins[bins.len() - 1].1 != 1.0 {
        return Err(StatsError::InvalidBins("bins must end at 1"));
    }
    for w in bins.windows(2) {
        if w[0].1 != w[1].0 {
            return Err(StatsError::InvalidBins("bins must be contiguous"));
        }
    }
    if bins
        .iter()
        .any(|&(lo, hi)| !lo.is_finite() || !hi.is_finite() || lo >= hi)
    {
        return Err(StatsError::InvalidBins("each bin needs finite lo < hi"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum StatsError {
    LengthMismatch { a: usize, b: usize },
    TooShort(usize),
    NotAPermutation(ItemId),
    EmptyDataset,
    InvalidBins(&'static str),
    MissingScore(ItemId),
}

impl fmt::Display for StatsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StatsError::LengthMismatch { a, b } => {
                write!(f, "orders have different lengths: {a} vs {b}")
            }
            StatsError::TooShort(n) => write!(f, "rank correlation needs n >= 2, got {n}"),
            StatsError::NotAPermutation(id) => write!(
                f,
                "orders are not permutations of the same id set (offending id {id})"
            ),
            StatsError::EmptyDataset => write!(f, "dataset has no comparable pairs"),
            StatsError::InvalidBins(msg) => write!(f, "margin bins must partition [0, 1]: {msg}"),
            StatsError::MissingScore(id) => write!(f, "no fitted score for sampled item {id}"),
        }
    }
}

impl core::error::Error for StatsError {}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate, DatasetSpec};
    use alloc::vec;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    fn ids(v: &[u64]) -> Vec<ItemId> {
        v.iter().copied().map(ItemId).collect()
    }

    /// Test oracle: walk all n! orders and count |tau| at least as extreme.
    fn brute_force_p(order_a: &[ItemId], order_b: &[ItemId]) -> f64 {
        let observed = kendall_tau(order_a, order_b).unwrap().tau.abs();
        let mut perm: Vec<ItemId> = order_b.to_vec();
        perm.sort();
        let mut hits = 0u64;
        let mut total = 0u64;
        permute(&mut perm, 0, &mut |p| {
            total += 1;
            let tau = kendall_tau(order_a, p).unwrap().tau;
            if tau.abs() >= observed - 1e-12 {
                hits += 1;
            }
        });
        hits as f64 / total as f64
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
    fn identical_and_reversed_orders() {
        let a = ids(&[3, 1, 4, 1 + 4, 9]);
        let r = kendall_tau(&a, &a).unwrap();
        assert_eq!(r.tau, 1.0);
        let rev: Vec<ItemId> = a.iter().rev().copied().collect();
        let r = kendall_tau(&a, &rev).unwrap();
        assert_eq!(r.tau, -1.0);
        assert_eq!(spearman_rho(&a, &a).unwrap(), 1.0);
        assert_eq!(spearman_rho(&a, &rev).unwrap(), -1.0);
    }

    #[test]
    fn three_item_example() {
        let a = ids(&[1, 2, 3]);
        let b = ids(&[1, 3, 2]);
        let r = kendall_tau(&a, &b).unwrap();
        assert!((r.tau - 1.0 / 3.0).abs() < 1e-15);
        // Every permutation of three items has |tau| >= 1/3.
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.method, PValueMethod::Exact);
        assert!((spearman_rho(&a, &b).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn exact_p_matches_brute_force_enumeration() {
        let mut rng = crate::rng::stream_rng(40, 0);
        for n in 2..=6usize {
            for _ in 0..8 {
                let base: Vec<u64> = (0..n as u64).collect();
                let mut a = ids(&base);
                let mut b = ids(&base);
                for k in (1..n).rev() {
                    a.swap(k, rng.random_range(0..=k));
                    b.swap(k, rng.random_range(0..=k));
                }
                let r = kendall_tau(&a, &b).unwrap();
                let brute = brute_force_p(&a, &b);
                assert!(
                    (r.p_value - brute).abs() < 1e-12,
                    "n {n}: exact {} vs brute {brute}",
                    r.p_value
                );
            }
        }
    }

    #[test]
    fn method_switches_at_the_documented_threshold() {
        let small: Vec<ItemId> = (0..10).map(ItemId).collect();
        assert_eq!(kendall_tau(&small, &small).unwrap().method, PValueMethod::Exact);
        let big: Vec<ItemId> = (0..11).map(ItemId).collect();
        assert_eq!(
            kendall_tau(&big, &big).unwrap().method,
            PValueMethod::NormalApprox
        );
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        let a = ids(&[0, 1, 2]);
        assert!(matches!(
            kendall_tau(&a, &ids(&[0, 1])),
            Err(StatsError::LengthMismatch { .. })
        ));
        assert!(matches!(
            kendall_tau(&ids(&[0]), &ids(&[0])),
            Err(StatsError::TooShort(1))
        ));
        assert!(matches!(
            kendall_tau(&a, &ids(&[0, 1, 5])),
            Err(StatsError::NotAPermutation(_))
        ));
        assert!(matches!(
            kendall_tau(&ids(&[0, 0, 1]), &a),
            Err(StatsError::NotAPermutation(_))
        ));
    }

    #[test]
    fn reversal_curve_perfect_and_inverted_models() {
        let ds = generate(&DatasetSpec::uniform(3, 8, 4), 60).unwrap();
        let perfect: BTreeMap<ItemId, f64> =
            ds.items().map(|it| (it.id, it.humor)).collect();
        let bins = default_margin_bins();
        let curve = reversal_curve(&perfect, &ds, &bins, 5000, 1).unwrap();
        for bin in &curve {
            if let Some(rate) = bin.rate {
                assert_eq!(rate, 0.0, "bin [{}, {}]", bin.lo, bin.hi);
            }
        }
        let anti: BTreeMap<ItemId, f64> =
            ds.items().map(|it| (it.id, -it.humor)).collect();
        let curve = reversal_curve(&anti, &ds, &bins, 5000, 1).unwrap();
        let mut nonempty = 0;
        for bin in &curve {
            if let Some(rate) = bin.rate {
                nonempty += 1;
                assert_eq!(rate, 1.0, "bin [{}, {}]", bin.lo, bin.hi);
            }
        }
        assert!(nonempty >= 2);
    }

    #[test]
    fn reversal_curve_validates_inputs() {
        let ds = generate(&DatasetSpec::uniform(1, 4, 2), 61).unwrap();
        let scores: BTreeMap<ItemId, f64> = ds.items().map(|it| (it.id, 0.0)).collect();
        assert!(matches!(
            reversal_curve(&scores, &ds, &[(0.0, 0.5)], 10, 0),
            Err(StatsError::InvalidBins(_))
        ));
        assert!(matches!(
            reversal_curve(&scores, &ds, &[(0.0, 0.5), (0.6, 1.0)], 10, 0),
            Err(StatsError::InvalidBins(_))
        ));
        let partial: BTreeMap<ItemId, f64> = scores.iter().take(1).map(|(k, v)| (*k, *v)).collect();
        assert!(matches!(
            reversal_curve(&partial, &ds, &default_margin_bins(), 50, 0),
            Err(StatsError::MissingScore(_))
        ));
    }

    #[test]
    fn unrank_pair_is_a_bijection() {
        let n = 7;
        let mut seen = alloc::collections::BTreeSet::new();
        for idx in 0..(n * (n - 1) / 2) {
            let (i, j) = unrank_pair(idx, n);
            assert!(i < j && j < n);
            assert!(seen.insert((i, j)));
        }
    }

    proptest! {
        #[test]
        fn tau_is_symmetric_and_relabel_invariant(seed in 0u64..300) {
            let mut rng = crate::rng::stream_rng(seed, 7);
            let n = 3 + (seed as usize % 7);
            let base: Vec<u64> = (0..n as u64).collect();
            let mut a = ids(&base);
            let mut b = ids(&base);
            for k in (1..n).rev() {
                a.swap(k, rng.random_range(0..=k));
                b.swap(k, rng.random_range(0..=k));
            }
            let ab = kendall_tau(&a, &b).unwrap();
            let ba = kendall_tau(&b, &a).unwrap();
            prop_assert_eq!(ab.tau, ba.tau);
            prop_assert_eq!(ab.p_value, ba.p_value);

            // Relabel ids through a strictly monotone map: same statistics.
            let relabel = |v: &[ItemId]| -> Vec<ItemId> {
                v.iter().map(|id| ItemId(id.0 * 11 + 5)).collect()
            };
            let rr = kendall_tau(&relabel(&a), &relabel(&b)).unwrap();
            prop_assert_eq!(ab.tau, rr.tau);
            prop_assert_eq!(ab.p_value, rr.p_value);

            let rho_ab = spearman_rho(&a, &b).unwrap();
            let rho_ba = spearman_rho(&b, &a).unwrap();
            prop_assert!((rho_ab - rho_ba).abs() < 1e-12);
        }

        #[test]
        fn p_values_live_in_unit_interval(seed in 0u64..200, n in 2usize..15) {
            let mut rng = crate::rng::stream_rng(seed, 8);
            let base: Vec<u64> = (0..n as u64).collect();
            let mut a = ids(&base);
            let b = ids(&base);
            for k in (1..n).rev() {
                a.swap(k, rng.random_range(0..=k));
            }
            let r = kendall_tau(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.p_value));
            prop_assert!((-1.0..=1.0).contains(&r.tau));
        }
    }
}
