//! Synthetic supervision: noisy pairwise labels, a graded degradation
//! curriculum, and best–worst (MaxDiff) choice trials.
//!
//! All generators are pure functions of their seed. Multi-group operations
//! fan the seed out per group with [`crate::rng::derive_seed`] so groups can
//! be generated independently (or in parallel) without changing results.

use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{DatasetError, GroupDataset, GroupId, Item, ItemId, OracleParams};
use crate::link::{link_eval, LinkError, LinkFunction};
use crate::rng::{derive_seed, standard_gumbel, standard_normal};

/// One observed within-group comparison: `y` is true iff `i` beat `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairLabel {
    pub group: GroupId,
    pub i: ItemId,
    pub j: ItemId,
    pub y: bool,
}

/// One best–worst trial over a small subset of a group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaxDiffTrial {
    pub group: GroupId,
    pub subset: Vec<ItemId>,
    pub best: ItemId,
    pub worst: ItemId,
}

/// One tier of the degradation curriculum.
///
/// A variant built from tier `t` keeps `humor_factor` of the base item's
/// quality and sits `perturbation_scale` away from it in feature space
/// (orthogonally to the oracle direction). Higher tiers degrade less and
/// perturb less, so they are harder to tell apart from the base.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurriculumTier {
    /// 1-based tier index.
    pub tier: u8,
    /// Orthogonal feature displacement of the variant; > 0, strictly
    /// decreasing across tiers.
    pub perturbation_scale: f64,
    /// Fraction of the base quality the variant keeps; in (0, 1], strictly
    /// increasing across tiers (a smaller factor is a harsher penalty).
    pub humor_factor: f64,
}

/// The default five-tier curriculum: from "obviously ruined" to "near tie".
pub fn default_tiers() -> [CurriculumTier; 5] {
    [
        CurriculumTier { tier: 1, perturbation_scale: 1.0, humor_factor: 0.1 },
        CurriculumTier { tier: 2, perturbation_scale: 0.6, humor_factor: 0.3 },
        CurriculumTier { tier: 3, perturbation_scale: 0.35, humor_factor: 0.5 },
        CurriculumTier { tier: 4, perturbation_scale: 0.2, humor_factor: 0.8 },
        CurriculumTier { tier: 5, perturbation_scale: 0.1, humor_factor: 0.95 },
    ]
}

/// Which within-group pairs receive a label.
#[derive(Debug, Clone, PartialEq)]
pub enum Coverage {
    /// Every unordered pair, once.
    Full,
    /// Each unordered pair is included independently with this probability.
    Random(f64),
    /// An explicit list of pairs (a coverage mask), labeled in order.
    Pairs(Vec<(ItemId, ItemId)>),
}

/// Sample one pairwise label: `y = 1` with probability `Λ(h_i - h_j)`.
pub fn sample_pair_label(
    item_i: &Item,
    item_j: &Item,
    link: &LinkFunction,
    seed: u64,
) -> Result<PairLabel, PrefGenError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_pair_label_rng(item_i, item_j, link, &mut rng)
}

/// As [`sample_pair_label`], drawing from a caller-managed RNG.
pub fn sample_pair_label_rng<R: Rng>(
    item_i: &Item,
    item_j: &Item,
    link: &LinkFunction,
    rng: &mut R,
) -> Result<PairLabel, PrefGenError> {
    if item_i.group != item_j.group {
        return Err(PrefGenError::CrossGroupPair {
            i: item_i.id,
            j: item_j.id,
        });
    }
    if item_i.id == item_j.id {
        return Err(PrefGenError::SelfPair(item_i.id));
    }
    let p = link_eval(link, item_i.humor - item_j.humor)?;
    Ok(PairLabel {
        group: item_i.group,
        i: item_i.id,
        j: item_j.id,
        y: rng.random::<f64>() < p,
    })
}

/// Label within-group pairs of a dataset under the given coverage.
///
/// `repeats` annotation rounds are drawn; each round independently labels
/// the covered pairs (and re-draws `Random` inclusion), which is how a pool
/// of annotators accumulates several verdicts on the same pair.
///
/// `Full` and `Random` coverage visit groups in id order, pairs in item
/// order, with group `g` drawing from stream `(seed, g)`; an explicit
/// `Pairs` mask is labeled in its own order from stream `(seed, u64::MAX)`.
pub fn gen_pair_labels(
    dataset: &GroupDataset,
    link: &LinkFunction,
    coverage: &Coverage,
    repeats: u32,
    seed: u64,
) -> Result<Vec<PairLabel>, PrefGenError> {
    if repeats == 0 {
        return Err(PrefGenError::NoRepeats);
    }
    let mut labels = Vec::new();
    match coverage {
        Coverage::Full | Coverage::Random(_) => {
            let include_prob = match coverage {
                Coverage::Random(p) => {
                    if !(p.is_finite() && *p > 0.0 && *p <= 1.0) {
                        return Err(PrefGenError::InvalidCoverage(*p));
                    }
                    Some(*p)
                }
                _ => None,
            };
            for (&gid, items) in dataset.groups() {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, gid.0));
                for _ in 0..repeats {
                    for (a, item_i) in items.iter().enumerate() {
                        for item_j in items.iter().skip(a + 1) {
                            if let Some(p) = include_prob {
                                if rng.random::<f64>() >= p {
                                    continue;
                                }
                            }
                            labels.push(sample_pair_label_rng(item_i, item_j, link, &mut rng)?);
                        }
                    }
                }
            }
        }
        Coverage::Pairs(pairs) => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX));
            for _ in 0..repeats {
                for &(i, j) in pairs {
                    let item_i = dataset.item(i).ok_or(PrefGenError::UnknownItem(i))?;
                    let item_j = dataset.item(j).ok_or(PrefGenError::UnknownItem(j))?;
                    labels.push(sample_pair_label_rng(item_i, item_j, link, &mut rng)?);
                }
            }
        }
    }
    Ok(labels)
}

/// Flip each label independently with probability `epsilon`.
///
/// `epsilon` must lie in `[0, 0.5)`; at one half the labels carry no signal.
pub fn apply_label_noise(
    labels: &[PairLabel],
    epsilon: f64,
    seed: u64,
) -> Result<Vec<PairLabel>, PrefGenError> {
    if !(epsilon.is_finite() && (0.0..0.5).contains(&epsilon)) {
        return Err(PrefGenError::InvalidEpsilon(epsilon));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(labels
        .iter()
        .map(|l| {
            let flip = rng.random::<f64>() < epsilon;
            PairLabel { y: l.y != flip, ..*l }
        })
        .collect())
}

/// Build a curriculum group: the base item plus one degraded variant per tier.
///
/// Each variant's quality is exactly `base.humor * humor_factor(tier)`, so
/// the true within-group order is known by construction (base on top,
/// then tiers in increasing order). Features are the base features plus a
/// random displacement orthogonal to the oracle direction with norm exactly
/// `perturbation_scale(tier)`, plus the along-direction shift that makes the
/// oracle reproduce the target quality — variants stay self-consistent with
/// the oracle, and perturbation norms are strictly decreasing in the tier
/// by construction.
///
/// Variants receive ids `first_variant_id + tier - 1`.
pub fn gen_curriculum_group(
    base: &Item,
    oracle: &OracleParams,
    tiers: &[CurriculumTier],
    first_variant_id: u64,
    seed: u64,
) -> Result<Vec<Item>, PrefGenError> {
    validate_tiers(tiers)?;
    if !(base.humor > 0.0 && base.humor < 1.0) {
        return Err(PrefGenError::BaseHumorNotInterior(base.humor));
    }
    if base.features.len() != oracle.weights.len() {
        return Err(PrefGenError::Dataset(DatasetError::DimensionMismatch {
            expected: oracle.weights.len(),
            got: base.features.len(),
        }));
    }
    let d = oracle.weights.len();
    let weight_norm = libm::sqrt(oracle.weights.iter().map(|w| w * w).sum());
    if weight_norm < 1e-12 {
        return Err(PrefGenError::DegenerateOracle);
    }
    let unit: Vec<f64> = oracle.weights.iter().map(|w| w / weight_norm).collect();
    let along_base: f64 = oracle
        .weights
        .iter()
        .zip(&base.features)
        .map(|(w, x)| w * x)
        .sum::<f64>()
        + oracle.bias;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(tiers.len() + 1);
    out.push(base.clone());
    for (idx, tier) in tiers.iter().enumerate() {
        let target = base.humor * tier.humor_factor;
        let target_logit = libm::log(target / (1.0 - target));
        let shift = (target_logit - along_base) / weight_norm;

        let noise = orthogonal_noise(&unit, tier.perturbation_scale, d, &mut rng);
        let features: Vec<f64> = base
            .features
            .iter()
            .zip(&noise)
            .zip(&unit)
            .map(|((x, n), u)| x + n + shift * u)
            .collect();
        out.push(Item {
            id: ItemId(first_variant_id + idx as u64),
            group: base.group,
            features,
            humor: target,
        });
    }
    Ok(out)
}

/// A random vector orthogonal to `unit` with norm exactly `scale`.
/// For `d == 1` the orthogonal complement is trivial and the result is zero.
fn orthogonal_noise<R: Rng>(unit: &[f64], scale: f64, d: usize, rng: &mut R) -> Vec<f64> {
    if d == 1 {
        return alloc::vec![0.0];
    }
    loop {
        let g: Vec<f64> = (0..d).map(|_| standard_normal(rng)).collect();
        let proj: f64 = g.iter().zip(unit).map(|(a, b)| a * b).sum();
        let orth: Vec<f64> = g.iter().zip(unit).map(|(a, b)| a - proj * b).collect();
        let norm = libm::sqrt(orth.iter().map(|x| x * x).sum());
        if norm > 1e-9 {
            return orth.iter().map(|x| x * scale / norm).collect();
        }
    }
}

fn validate_tiers(tiers: &[CurriculumTier]) -> Result<(), PrefGenError> {
    if tiers.len() != 5 {
        return Err(PrefGenError::TierCount(tiers.len()));
    }
    for (idx, t) in tiers.iter().enumerate() {
        if t.tier as usize != idx + 1 {
            return Err(PrefGenError::TierNumbering(t.tier));
        }
        if !(t.humor_factor > 0.0 && t.humor_factor <= 1.0) {
            return Err(PrefGenError::InvalidTierFactor(t.humor_factor));
        }
        if !(t.perturbation_scale.is_finite() && t.perturbation_scale > 0.0) {
            return Err(PrefGenError::InvalidTierScale(t.perturbation_scale));
        }
    }
    for w in tiers.windows(2) {
        if w[1].humor_factor <= w[0].humor_factor {
            return Err(PrefGenError::TierFactorsNotIncreasing);
        }
        if w[1].perturbation_scale >= w[0].perturbation_scale {
            return Err(PrefGenError::TierScalesNotDecreasing);
        }
    }
    Ok(())
}

/// Upper end of the standard design guideline: `ceil(5J/k)` choice tasks
/// per respondent for `J` items in subsets of `k`.
pub fn recommended_task_count(group_size: usize, k: usize) -> usize {
    (5 * group_size).div_ceil(k)
}

/// Generate balanced best–worst trials over one group's items.
///
/// Subsets are chosen greedily by lowest appearance count (random
/// tie-breaking), which keeps appearance counts within one of each other,
/// so every item appears in at least `floor(n_tasks * k / J)` trials. The
/// simulated respondent maximizes / minimizes `h + gumbel_scale * Gumbel
/// noise` over the subset; exact utility ties go to the lowest item id, and
/// the worst pick excludes the best pick.
pub fn gen_maxdiff_trials(
    items: &[Item],
    k: usize,
    n_tasks: usize,
    gumbel_scale: f64,
    seed: u64,
) -> Result<Vec<MaxDiffTrial>, PrefGenError> {
    if k < 3 {
        return Err(PrefGenError::SubsetTooSmall(k));
    }
    if k > items.len() {
        return Err(PrefGenError::SubsetExceedsGroup {
            k,
            group_size: items.len(),
        });
    }
    if n_tasks == 0 {
        return Err(PrefGenError::NoTasks);
    }
    if !(gumbel_scale.is_finite() && gumbel_scale >= 0.0) {
        return Err(PrefGenError::InvalidGumbelScale(gumbel_scale));
    }
    let group = items[0].group;
    if items.iter().any(|it| it.group != group) {
        return Err(PrefGenError::CrossGroupPair {
            i: items[0].id,
            j: items.iter().find(|it| it.group != group).unwrap().id,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut appearances = alloc::vec![0usize; items.len()];
    let mut trials = Vec::with_capacity(n_tasks);
    for _ in 0..n_tasks {
        // Greedy balanced selection: k lowest appearance counts, ties
        // broken by a fresh random key.
        let mut order: Vec<usize> = (0..items.len()).collect();
        let keys: Vec<u64> = (0..items.len()).map(|_| rng.random()).collect();
        order.sort_by_key(|&i| (appearances[i], keys[i]));
        let mut subset: Vec<usize> = order[..k].to_vec();
        subset.sort_by_key(|&i| items[i].id);
        for &i in &subset {
            appearances[i] += 1;
        }

        let utilities: Vec<f64> = subset
            .iter()
            .map(|&i| items[i].humor + gumbel_scale * standard_gumbel(&mut rng))
            .collect();
        let best_pos = argmax_lowest_id(&subset, &utilities, items);
        let worst_pos = argmin_lowest_id(&subset, &utilities, items, best_pos);
        trials.push(MaxDiffTrial {
            group,
            subset: subset.iter().map(|&i| items[i].id).collect(),
            best: items[subset[best_pos]].id,
            worst: items[subset[worst_pos]].id,
        });
    }
    Ok(trials)
}

fn argmax_lowest_id(subset: &[usize], utilities: &[f64], items: &[Item]) -> usize {
    let mut best = 0;
    for pos in 1..subset.len() {
        if utilities[pos] > utilities[best]
            || (utilities[pos] == utilities[best] && items[subset[pos]].id < items[subset[best]].id)
        {
            best = pos;
        }
    }
    best
}

fn argmin_lowest_id(subset: &[usize], utilities: &[f64], items: &[Item], exclude: usize) -> usize {
    let mut worst = usize::MAX;
    for pos in 0..subset.len() {
        if pos == exclude {
            continue;
        }
        if worst == usize::MAX
            || utilities[pos] < utilities[worst]
            || (utilities[pos] == utilities[worst]
                && items[subset[pos]].id < items[subset[worst]].id)
        {
            worst = pos;
        }
    }
    worst
}

#[derive(Debug, Clone, PartialEq)]
pub enum PrefGenError {
    CrossGroupPair { i: ItemId, j: ItemId },
    SelfPair(ItemId),
    InvalidEpsilon(f64),
    InvalidCoverage(f64),
    UnknownItem(ItemId),
    SubsetTooSmall(usize),
    SubsetExceedsGroup { k: usize, group_size: usize },
    NoTasks,
    NoRepeats,
    InvalidGumbelScale(f64),
    TierCount(usize),
    TierNumbering(u8),
    InvalidTierFactor(f64),
    InvalidTierScale(f64),
    TierFactorsNotIncreasing,
    TierScalesNotDecreasing,
    BaseHumorNotInterior(f64),
    DegenerateOracle,
    Link(LinkError),
    Dataset(DatasetError),
}

impl fmt::Display for PrefGenError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PrefGenError::CrossGroupPair { i, j } => {
                write!(f, "items {i} and {j} are not in the same group")
            }
            PrefGenError::SelfPair(id) => write!(f, "cannot compare item {id} with itself"),
            PrefGenError::InvalidEpsilon(e) => {
                write!(f, "label noise rate must be in [0, 0.5), got {e}")
            }
            PrefGenError::InvalidCoverage(p) => {
                write!(f, "coverage probability must be in (0, 1], got {p}")
            }
            PrefGenError::UnknownItem(id) => write!(f, "unknown item id {id}"),
            PrefGenError::SubsetTooSmall(k) => {
                write!(f, "best-worst subsets need k >= 3, got {k}")
            }
            PrefGenError::SubsetExceedsGroup { k, group_size } => {
                write!(f, "subset size {k} exceeds group size {group_size}")
            }
            PrefGenError::NoTasks => write!(f, "task count must be >= 1"),
            PrefGenError::NoRepeats => write!(f, "annotation rounds must be >= 1"),
            PrefGenError::InvalidGumbelScale(g) => {
                write!(f, "Gumbel noise scale must be >= 0, got {g}")
            }
            PrefGenError::TierCount(n) => write!(f, "curriculum needs exactly 5 tiers, got {n}"),
            PrefGenError::TierNumbering(t) => {
                write!(f, "curriculum tiers must be numbered 1..=5 in order, got {t}")
            }
            PrefGenError::InvalidTierFactor(x) => {
                write!(f, "tier quality factor must be in (0, 1], got {x}")
            }
            PrefGenError::InvalidTierScale(x) => {
                write!(f, "tier perturbation scale must be > 0, got {x}")
            }
            PrefGenError::TierFactorsNotIncreasing => {
                write!(f, "tier quality factors must strictly increase with tier")
            }
            PrefGenError::TierScalesNotDecreasing => {
                write!(f, "tier perturbation scales must strictly decrease with tier")
            }
            PrefGenError::BaseHumorNotInterior(h) => {
                write!(f, "curriculum base quality must be strictly inside (0, 1), got {h}")
            }
            PrefGenError::DegenerateOracle => {
                write!(f, "oracle weight vector is zero; target qualities are unreachable")
            }
            PrefGenError::Link(e) => write!(f, "{e}"),
            PrefGenError::Dataset(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for PrefGenError {}

impl From<LinkError> for PrefGenError {
    fn from(e: LinkError) -> Self {
        PrefGenError::Link(e)
    }
}

impl From<DatasetError> for PrefGenError {
    fn from(e: DatasetError) -> Self {
        PrefGenError::Dataset(e)
    }
}
