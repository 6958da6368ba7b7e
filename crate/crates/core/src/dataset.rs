//! Items, groups, and the latent quality oracle.
//!
//! A [`GroupDataset`] partitions items into disjoint groups. Each group has
//! its own oracle — a logistic-of-linear map from feature space to `[0, 1]`
//! — and every item's stored quality value is required to agree with its
//! group's oracle (self-consistency). Quality values are never comparable
//! across groups; only within-group order is meaningful.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use crate::link::sigmoid;
use crate::rng::{standard_normal, stream_rng};
use rand::Rng;

/// Opaque item identifier, unique across a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ItemId(pub u64);

/// Group identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupId(pub u64);

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One synthetic item: a feature vector plus its latent quality value.
#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub id: ItemId,
    pub group: GroupId,
    pub features: Vec<f64>,
    /// Latent quality in `[0, 1]`, equal to the group oracle applied to
    /// `features`.
    pub humor: f64,
}

/// Per-group oracle: `h(x) = σ(w·x + bias)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleParams {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl OracleParams {
    /// Evaluate the oracle, checking the feature dimension.
    pub fn latent_humor(&self, features: &[f64]) -> Result<f64, DatasetError> {
        latent_humor(self, features)
    }
}

/// Oracle quality of a feature vector: `σ(w·x + bias)`, guaranteed `[0, 1]`.
pub fn latent_humor(oracle: &OracleParams, features: &[f64]) -> Result<f64, DatasetError> {
    if features.len() != oracle.weights.len() {
        return Err(DatasetError::DimensionMismatch {
            expected: oracle.weights.len(),
            got: features.len(),
        });
    }
    let z: f64 = oracle
        .weights
        .iter()
        .zip(features)
        .map(|(w, x)| w * x)
        .sum::<f64>()
        + oracle.bias;
    Ok(sigmoid(z))
}

/// Tolerance for the stored-quality vs. recomputed-oracle agreement check.
pub const SELF_CONSISTENCY_TOL: f64 = 1e-9;

/// Items partitioned into disjoint groups, each with its own oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupDataset {
    dimension: usize,
    groups: BTreeMap<GroupId, Vec<Item>>,
    oracles: BTreeMap<GroupId, OracleParams>,
    index: BTreeMap<ItemId, GroupId>,
}

impl GroupDataset {
    /// Build a dataset, validating every invariant:
    ///
    /// - all feature vectors and oracle weights have length `dimension`;
    /// - groups are disjoint and hold at least two items each;
    /// - quality values are in `[0, 1]` and agree with the group oracle
    ///   within [`SELF_CONSISTENCY_TOL`].
    pub fn new(
        dimension: usize,
        groups: BTreeMap<GroupId, Vec<Item>>,
        oracles: BTreeMap<GroupId, OracleParams>,
    ) -> Result<Self, DatasetError> {
        if dimension == 0 {
            return Err(DatasetError::InvalidDimension);
        }
        if groups.is_empty() {
            return Err(DatasetError::NoGroups);
        }
        let mut index = BTreeMap::new();
        for (&gid, items) in &groups {
            if items.len() < 2 {
                return Err(DatasetError::GroupTooSmall {
                    group: gid,
                    size: items.len(),
                });
            }
            let oracle = oracles.get(&gid).ok_or(DatasetError::MissingOracle(gid))?;
            if oracle.weights.len() != dimension {
                return Err(DatasetError::DimensionMismatch {
                    expected: dimension,
                    got: oracle.weights.len(),
                });
            }
            if !oracle.bias.is_finite() || oracle.weights.iter().any(|w| !w.is_finite()) {
                return Err(DatasetError::NonFiniteOracle(gid));
            }
            for item in items {
                if item.group != gid {
                    return Err(DatasetError::GroupLabelMismatch {
                        item: item.id,
                        listed_under: gid,
                        labeled: item.group,
                    });
                }
                if item.features.len() != dimension {
                    return Err(DatasetError::DimensionMismatch {
                        expected: dimension,
                        got: item.features.len(),
                    });
                }
                if item.features.iter().any(|x| !x.is_finite()) {
                    return Err(DatasetError::NonFiniteFeatures(item.id));
                }
                if !(0.0..=1.0).contains(&item.humor) {
                    return Err(DatasetError::HumorOutOfRange {
                        item: item.id,
                        humor: item.humor,
                    });
                }
                let recomputed = oracle.latent_humor(&item.features)?;
                if (recomputed - item.humor).abs() > SELF_CONSISTENCY_TOL {
                    return Err(DatasetError::SelfInconsistent {
                        item: item.id,
                        stored: item.humor,
                        recomputed,
                    });
                }
                if index.insert(item.id, gid).is_some() {
                    return Err(DatasetError::DuplicateItemId(item.id));
                }
            }
        }
        Ok(Self {
            dimension,
            groups,
            oracles,
            index,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn groups(&self) -> &BTreeMap<GroupId, Vec<Item>> {
        &self.groups
    }

    pub fn oracles(&self) -> &BTreeMap<GroupId, OracleParams> {
        &self.oracles
    }

    pub fn oracle(&self, group: GroupId) -> Option<&OracleParams> {
        self.oracles.get(&group)
    }

    pub fn group_of(&self, item: ItemId) -> Option<GroupId> {
        self.index.get(&item).copied()
    }

    pub fn item(&self, id: ItemId) -> Option<&Item> {
        let gid = self.index.get(&id)?;
        self.groups[gid].iter().find(|it| it.id == id)
    }

    pub fn items(&self) -> impl Iterator<Item = &Item> {
        self.groups.values().flatten()
    }

    pub fn n_items(&self) -> usize {
        self.index.len()
    }
}

/// Shape of a synthetic dataset to generate.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub dimension: usize,
    /// One entry per group, in group-id order starting at 0.
    pub group_sizes: Vec<usize>,
    /// Minimum within-group quality separation. Rejection-sampled; keeps
    /// every within-group order strict and recoverable.
    pub min_humor_gap: f64,
}

impl DatasetSpec {
    pub fn uniform(n_groups: usize, group_size: usize, dimension: usize) -> Self {
        Self {
            dimension,
            group_sizes: alloc::vec![group_size; n_groups],
            min_humor_gap: DEFAULT_MIN_HUMOR_GAP,
        }
    }
}

/// Default within-group quality separation for generated datasets.
pub const DEFAULT_MIN_HUMOR_GAP: f64 = 0.05;

// RNG stream tags for dataset generation (see `rng::derive_seed`).
const ORACLE_STREAM: u64 = u64::MAX;
const MAX_REJECTION_TRIES: usize = 100_000;

/// Generate a seeded synthetic dataset.
///
/// All groups share one latent unit direction; each group's oracle is that
/// direction scaled by a positive per-group factor plus a per-group bias.
/// Positive rescaling and bias leave within-group order untouched, so a
/// single linear scoring head can be order-consistent with every group at
/// once, while absolute quality values stay incomparable across groups.
///
/// Item features are standard normal draws, rejection-sampled so that
/// within-group quality values are separated by at least
/// `spec.min_humor_gap`. Group `g` uses RNG stream `(seed, g)`; the shared
/// direction and per-group oracle parameters use stream `(seed, u64::MAX)`.
pub fn generate(spec: &DatasetSpec, seed: u64) -> Result<GroupDataset, DatasetError> {
    if spec.dimension == 0 {
        return Err(DatasetError::InvalidDimension);
    }
    if spec.group_sizes.is_empty() {
        return Err(DatasetError::NoGroups);
    }
    if !(spec.min_humor_gap >= 0.0 && spec.min_humor_gap < 0.5) {
        return Err(DatasetError::InvalidGap(spec.min_humor_gap));
    }

    let mut oracle_rng = stream_rng(seed, ORACLE_STREAM);
    let mut direction: Vec<f64> = (0..spec.dimension)
        .map(|_| standard_normal(&mut oracle_rng))
        .collect();
    let norm = libm::sqrt(direction.iter().map(|x| x * x).sum());
    for x in &mut direction {
        *x /= norm;
    }

    let mut groups = BTreeMap::new();
    let mut oracles = BTreeMap::new();
    let mut next_id = 0u64;
    for (g, &size) in spec.group_sizes.iter().enumerate() {
        let gid = GroupId(g as u64);
        if size < 2 {
            return Err(DatasetError::GroupTooSmall { group: gid, size });
        }
        let scale = 1.2 + 1.3 * oracle_rng.random::<f64>();
        let bias = -0.4 + 0.8 * oracle_rng.random::<f64>();
        let oracle = OracleParams {
            weights: direction.iter().map(|x| x * scale).collect(),
            bias,
        };

        let mut rng = stream_rng(seed, g as u64);
        let mut items: Vec<Item> = Vec::with_capacity(size);
        let mut tries = 0usize;
        while items.len() < size {
            tries += 1;
            if tries > MAX_REJECTION_TRIES {
                return Err(DatasetError::GapUnsatisfiable {
                    group: gid,
                    placed: items.len(),
                    requested: size,
                });
            }
            let features: Vec<f64> = (0..spec.dimension)
                .map(|_| standard_normal(&mut rng))
                .collect();
            let humor = oracle.latent_humor(&features)?;
            if items
                .iter()
                .any(|it| (it.humor - humor).abs() < spec.min_humor_gap)
            {
                continue;
            }
            items.push(Item {
                id: ItemId(next_id + items.len() as u64),
                group: gid,
                features,
                humor,
            });
        }
        next_id += size as u64;
        groups.insert(gid, items);
        oracles.insert(gid, oracle);
    }
    GroupDataset::new(spec.dimension, groups, oracles)
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetError {
    InvalidDimension,
    NoGroups,
    DimensionMismatch { expected: usize, got: usize },
    GroupTooSmall { group: GroupId, size: usize },
    DuplicateItemId(ItemId),
    GroupLabelMismatch { item: ItemId, listed_under: GroupId, labeled: GroupId },
    MissingOracle(GroupId),
    NonFiniteOracle(GroupId),
    NonFiniteFeatures(ItemId),
    HumorOutOfRange { item: ItemId, humor: f64 },
    SelfInconsistent { item: ItemId, stored: f64, recomputed: f64 },
    InvalidGap(f64),
    GapUnsatisfiable { group: GroupId, placed: usize, requested: usize },
}

impl fmt::Display for DatasetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetError::InvalidDimension => write!(f, "feature dimension must be >= 1"),
            DatasetError::NoGroups => write!(f, "dataset must contain at least one group"),
            DatasetError::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            DatasetError::GroupTooSmall { group, size } => {
                write!(f, "group {group} has {size} items; pairwise comparison needs >= 2")
            }
            DatasetError::DuplicateItemId(id) => {
                write!(f, "item id {id} appears in more than one place")
            }
            DatasetError::GroupLabelMismatch { item, listed_under, labeled } => write!(
                f,
                "item {item} is listed under group {listed_under} but labeled {labeled}"
            ),
            DatasetError::MissingOracle(g) => write!(f, "no oracle parameters for group {g}"),
            DatasetError::NonFiniteOracle(g) => {
                write!(f, "oracle parameters for group {g} are not finite")
            }
            DatasetError::NonFiniteFeatures(id) => {
                write!(f, "item {id} has non-finite features")
            }
            DatasetError::HumorOutOfRange { item, humor } => {
                write!(f, "item {item} quality {humor} outside [0, 1]")
            }
            DatasetError::SelfInconsistent { item, stored, recomputed } => write!(
                f,
                "item {item} stored quality {stored} disagrees with oracle value {recomputed}"
            ),
            DatasetError::InvalidGap(g) => {
                write!(f, "min quality gap must be in [0, 0.5), got {g}")
            }
            DatasetError::GapUnsatisfiable { group, placed, requested } => write!(
                f,
                "could not place {requested} items with the requested gap in group {group} (placed {placed})"
            ),
        }
    }
}

impl core::error::Error for DatasetError {}
