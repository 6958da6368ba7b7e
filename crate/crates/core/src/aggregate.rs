//! From pairwise probabilities to group-level structure.
//!
//! The Expected Borda Count of an item is the sum of its predicted win
//! probabilities against the group opponents it was actually compared to;
//! with hard 0/1 probabilities it reduces to the classical Borda win count.
//! Under sparsity the per-item sum is normalized by the opponent count (an
//! optional small-degree regularizer `alpha` damps overconfident ranks for
//! items with very few edges). A temperature softmax turns scores into
//! listwise targets; auxiliary shaping rewards can be folded in, with an
//! isotonicity check that verifies the shaping did not invert the reward
//! order. Best–worst trial aggregation lives here too.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use crate::dataset::{GroupId, Item, ItemId};
use crate::link::{link_eval, LinkError, LinkFunction};
use crate::prefgen::MaxDiffTrial;

/// Pairwise win probabilities for one group's candidate set.
///
/// Entries may be missing (never compared); the diagonal is always
/// undefined. Whenever both directions are present they must be
/// antisymmetric: `p[i][j] + p[j][i] = 1` within [`ANTISYMMETRY_TOL`].
#[derive(Debug, Clone, PartialEq)]
pub struct PairProbMatrix {
    group: GroupId,
    items: Vec<ItemId>,
    p: Vec<Option<f64>>,
}

pub const ANTISYMMETRY_TOL: f64 = 1e-9;

impl PairProbMatrix {
    /// Build from sparse entries `(row, col, prob)`.
    ///
    /// When only one direction of a pair is supplied, the reverse is
    /// completed as `1 - p`; if both are supplied they must agree
    /// antisymmetrically. Probabilities live in the closed interval
    /// `[0, 1]` — the endpoints are hard tournament outcomes.
    pub fn from_entries(
        group: GroupId,
        items: Vec<ItemId>,
        entries: &[(usize, usize, f64)],
    ) -> Result<Self, AggregateError> {
        let n = items.len();
        let mut seen = alloc::collections::BTreeSet::new();
        for &id in &items {
            if !seen.insert(id) {
                return Err(AggregateError::DuplicateItem(id));
            }
        }
        let mut p: Vec<Option<f64>> = alloc::vec![None; n * n];
        // First pass: place explicit entries.
        for &(i, j, prob) in entries {
            if i >= n || j >= n {
                return Err(AggregateError::IndexOutOfRange { index: i.max(j), n });
            }
            if i == j {
                return Err(AggregateError::DiagonalEntry(i));
            }
            if !(prob.is_finite() && (0.0..=1.0).contains(&prob)) {
                return Err(AggregateError::InvalidProb { i, j, p: prob });
            }
            if let Some(existing) = p[i * n + j] {
                if (existing - prob).abs() > ANTISYMMETRY_TOL {
                    return Err(AggregateError::ConflictingEntry { i, j });
                }
            }
            p[i * n + j] = Some(prob);
        }
        // Second pass: antisymmetric completion and consistency check.
        for i in 0..n {
            for j in (i + 1)..n {
                match (p[i * n + j], p[j * n + i]) {
                    (Some(a), Some(b)) => {
                        if (a + b - 1.0).abs() > ANTISYMMETRY_TOL {
                            return Err(AggregateError::AsymmetricPair { i, j, sum: a + b });
                        }
                    }
                    (Some(a), None) => p[j * n + i] = Some(1.0 - a),
                    (None, Some(b)) => p[i * n + j] = Some(1.0 - b),
                    (None, None) => {}
                }
            }
        }
        Ok(Self { group, items, p })
    }

    /// Complete matrix induced by per-item scores: `p[i][j] = σ(s_i - s_j)`.
    pub fn from_scores(group: GroupId, scored: &[(ItemId, f64)]) -> Result<Self, AggregateError> {
        let items: Vec<ItemId> = scored.iter().map(|(id, _)| *id).collect();
        let n = items.len();
        let mut entries = Vec::with_capacity(n * (n - 1));
        for (i, &(_, si)) in scored.iter().enumerate() {
            if !si.is_finite() {
                return Err(AggregateError::NonFiniteScore(si));
            }
            for (j, &(_, sj)) in scored.iter().enumerate() {
                if i < j {
                    let prob = crate::link::sigmoid(si - sj);
                    entries.push((i, j, prob));
                }
            }
        }
        Self::from_entries(group, items, &entries)
    }

    /// Complete matrix generated by a link over latent qualities:
    /// `p[i][j] = Λ(h_i - h_j)`.
    pub fn from_link(
        group: GroupId,
        items: &[Item],
        link: &LinkFunction,
    ) -> Result<Self, AggregateError> {
        let ids: Vec<ItemId> = items.iter().map(|it| it.id).collect();
        let n = ids.len();
        let mut entries = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                let prob = link_eval(link, items[i].humor - items[j].humor)?;
                entries.push((i, j, prob));
            }
        }
        Self::from_entries(group, ids, &entries)
    }

    pub fn group(&self) -> GroupId {
        self.group
    }

    pub fn n(&self) -> usize {
        self.items.len()
    }

    pub fn items(&self) -> &[ItemId] {
        &self.items
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.p[i * self.items.len() + j]
    }

    /// Copy with a subset of (unordered) edges removed.
    pub fn without_edges(&self, removed: &[(usize, usize)]) -> Self {
        let n = self.items.len();
        let mut p = self.p.clone();
        for &(i, j) in removed {
            p[i * n + j] = None;
            p[j * n + i] = None;
        }
        Self {
            group: self.group,
            items: self.items.clone(),
            p,
        }
    }
}

/// Expected Borda Count scores together with per-item opponent counts.
#[derive(Debug, Clone, PartialEq)]
pub struct EbcScores {
    pub scores: Vec<f64>,
    /// Number of defined opponents per item; items with zero degree score 0.
    pub degrees: Vec<usize>,
}

/// Expected Borda Count: `EBC_i = Σ_{j≠i, defined} p[i][j]`.
///
/// With `normalize` the score becomes `(EBC_i + alpha) / (deg_i + alpha)`,
/// which keeps sparse rows comparable; items with no defined opponents
/// score 0 either way.
pub fn ebc(
    probs: &PairProbMatrix,
    alpha_reg: f64,
    normalize: bool,
) -> Result<EbcScores, AggregateError> {
    let n = probs.n();
    if n < 2 {
        return Err(AggregateError::TooFewItems(n));
    }
    if !(alpha_reg.is_finite() && alpha_reg >= 0.0) {
        return Err(AggregateError::InvalidAlpha(alpha_reg));
    }
    let mut scores = alloc::vec![0.0; n];
    let mut degrees = alloc::vec![0usize; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            if let Some(p) = probs.get(i, j) {
                scores[i] += p;
                degrees[i] += 1;
            }
        }
    }
    if normalize {
        for i in 0..n {
            scores[i] = if degrees[i] > 0 {
                (scores[i] + alpha_reg) / (degrees[i] as f64 + alpha_reg)
            } else {
                0.0
            };
        }
    }
    Ok(EbcScores { scores, degrees })
}

/// A probability vector over one group's candidate set.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupTargets {
    pub group: GroupId,
    pub items: Vec<ItemId>,
    pub q: Vec<f64>,
}

/// Temperature softmax of scores: `q_i ∝ exp(score_i / T)`.
pub fn listwise_targets(
    group: GroupId,
    items: &[ItemId],
    scores: &[f64],
    temperature: f64,
) -> Result<GroupTargets, AggregateError> {
    if items.len() != scores.len() {
        return Err(AggregateError::LengthMismatch {
            expected: items.len(),
            got: scores.len(),
        });
    }
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(AggregateError::InvalidTemperature(temperature));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(AggregateError::NonFiniteScore(
            scores.iter().copied().find(|s| !s.is_finite()).unwrap(),
        ));
    }
    Ok(GroupTargets {
        group,
        items: items.to_vec(),
        q: softmax_scaled(scores, temperature),
    })
}

/// Softmax of `scores / t` with max subtraction for stability.
fn softmax_scaled(scores: &[f64], t: f64) -> Vec<f64> {
    let max = scores.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(s));
    let exps: Vec<f64> = scores.iter().map(|&s| libm::exp((s - max) / t)).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

/// Shaped listwise targets: `q̃ ∝ exp((s_rm + λ_fmt·r_fmt + λ_cnt·r_cnt)/T)`.
///
/// The auxiliary rewards must lie in `[0, 1]`; with small weights they act
/// as tie-breakers that cannot cross a reward gap larger than
/// `λ_fmt + λ_cnt`.
#[allow(clippy::too_many_arguments)]
pub fn augmented_targets(
    group: GroupId,
    items: &[ItemId],
    s_rm: &[f64],
    r_fmt: &[f64],
    r_cnt: &[f64],
    lambda_fmt: f64,
    lambda_cnt: f64,
    temperature: f64,
) -> Result<GroupTargets, AggregateError> {
    if s_rm.len() != r_fmt.len() || s_rm.len() != r_cnt.len() || s_rm.len() != items.len() {
        return Err(AggregateError::LengthMismatch {
            expected: items.len(),
            got: s_rm.len().min(r_fmt.len()).min(r_cnt.len()),
        });
    }
    for &l in &[lambda_fmt, lambda_cnt] {
        if !(l.is_finite() && l >= 0.0) {
            return Err(AggregateError::InvalidShapingWeight(l));
        }
    }
    for &r in r_fmt.iter().chain(r_cnt) {
        if !(r.is_finite() && (0.0..=1.0).contains(&r)) {
            return Err(AggregateError::AuxRewardOutOfRange(r));
        }
    }
    let shaped = shaped_scores(s_rm, r_fmt, r_cnt, lambda_fmt, lambda_cnt);
    listwise_targets(group, items, &shaped, temperature)
}

/// The combined score vector used by [`augmented_targets`].
pub fn shaped_scores(
    s_rm: &[f64],
    r_fmt: &[f64],
    r_cnt: &[f64],
    lambda_fmt: f64,
    lambda_cnt: f64,
) -> Vec<f64> {
    s_rm.iter()
        .zip(r_fmt)
        .zip(r_cnt)
        .map(|((s, rf), rc)| s + lambda_fmt * rf + lambda_cnt * rc)
        .collect()
}

/// Does `shaped` preserve the strict order of `s_rm`?
///
/// Returns true (and no pairs) iff for all `i, j` with `s_rm[i] > s_rm[j]`
/// we have `shaped[i] >= shaped[j]`; otherwise the inverted index pairs.
pub fn check_isotonic(
    s_rm: &[f64],
    shaped: &[f64],
) -> Result<(bool, Vec<(usize, usize)>), AggregateError> {
    if s_rm.len() != shaped.len() {
        return Err(AggregateError::LengthMismatch {
            expected: s_rm.len(),
            got: shaped.len(),
        });
    }
    let mut inverted = Vec::new();
    for i in 0..s_rm.len() {
        for j in 0..s_rm.len() {
            if s_rm[i] > s_rm[j] && shaped[i] < shaped[j] {
                inverted.push((i, j));
            }
        }
    }
    Ok((inverted.is_empty(), inverted))
}

/// Aggregated best–worst results for one group.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxDiffResult {
    /// `(best_count - worst_count) / appearance_count` per item.
    pub scores: BTreeMap<ItemId, f64>,
    /// Items by descending score, ties broken by ascending id.
    pub ranking: Vec<ItemId>,
}

/// Aggregate best–worst trials into scores and a ranking.
///
/// Every item of `roster` must appear in at least one trial.
pub fn maxdiff_aggregate(
    trials: &[MaxDiffTrial],
    roster: &[ItemId],
) -> Result<MaxDiffResult, AggregateError> {
    if trials.is_empty() {
        return Err(AggregateError::EmptyTrials);
    }
    let group = trials[0].group;
    let roster_set: alloc::collections::BTreeSet<ItemId> = roster.iter().copied().collect();
    if roster_set.len() != roster.len() {
        return Err(AggregateError::DuplicateItem(
            *roster.iter().find(|id| roster.iter().filter(|o| o == id).count() > 1).unwrap(),
        ));
    }
    let mut appearances: BTreeMap<ItemId, usize> = BTreeMap::new();
    let mut net: BTreeMap<ItemId, i64> = BTreeMap::new();
    for trial in trials {
        if trial.group != group {
            return Err(AggregateError::MixedGroups);
        }
        if trial.subset.len() < 2 || trial.best == trial.worst {
            return Err(AggregateError::MalformedTrial);
        }
        let mut in_subset = alloc::collections::BTreeSet::new();
        for &id in &trial.subset {
            if !roster_set.contains(&id) {
                return Err(AggregateError::ForeignItem(id));
            }
            if !in_subset.insert(id) {
                return Err(AggregateError::MalformedTrial);
            }
            *appearances.entry(id).or_insert(0) += 1;
        }
        if !in_subset.contains(&trial.best) || !in_subset.contains(&trial.worst) {
            return Err(AggregateError::MalformedTrial);
        }
        *net.entry(trial.best).or_insert(0) += 1;
        *net.entry(trial.worst).or_insert(0) -= 1;
    }
    let mut scores = BTreeMap::new();
    for &id in roster {
        let appeared = appearances.get(&id).copied().unwrap_or(0);
        if appeared == 0 {
            return Err(AggregateError::UncoveredItem(id));
        }
        let n = net.get(&id).copied().unwrap_or(0);
        scores.insert(id, n as f64 / appeared as f64);
    }
    let mut ranking: Vec<ItemId> = roster.to_vec();
    ranking.sort_by(|a, b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap()
            .then(a.cmp(b))
    });
    Ok(MaxDiffResult { scores, ranking })
}

#[derive(Debug, Clone, PartialEq)]
pub enum AggregateError {
    TooFewItems(usize),
    DuplicateItem(ItemId),
    IndexOutOfRange { index: usize, n: usize },
    DiagonalEntry(usize),
    InvalidProb { i: usize, j: usize, p: f64 },
    ConflictingEntry { i: usize, j: usize },
    AsymmetricPair { i: usize, j: usize, sum: f64 },
    InvalidAlpha(f64),
    InvalidTemperature(f64),
    LengthMismatch { expected: usize, got: usize },
    InvalidShapingWeight(f64),
    AuxRewardOutOfRange(f64),
    NonFiniteScore(f64),
    EmptyTrials,
    MixedGroups,
    MalformedTrial,
    ForeignItem(ItemId),
    UncoveredItem(ItemId),
    Link(LinkError),
}

impl fmt::Display for AggregateError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AggregateError::TooFewItems(n) => {
                write!(f, "aggregation needs at least 2 items, got {n}")
            }
            AggregateError::DuplicateItem(id) => write!(f, "duplicate item id {id}"),
            AggregateError::IndexOutOfRange { index, n } => {
                write!(f, "entry index {index} out of range for {n} items")
            }
            AggregateError::DiagonalEntry(i) => {
                write!(f, "diagonal entry ({i}, {i}) is undefined by construction")
            }
            AggregateError::InvalidProb { i, j, p } => {
                write!(f, "probability ({i}, {j}) = {p} outside [0, 1]")
            }
            AggregateError::ConflictingEntry { i, j } => {
                write!(f, "entry ({i}, {j}) supplied twice with different values")
            }
            AggregateError::AsymmetricPair { i, j, sum } => {
                write!(f, "p[{i}][{j}] + p[{j}][{i}] = {sum}, expected 1")
            }
            AggregateError::InvalidAlpha(a) => {
                write!(f, "degree regularizer must be >= 0, got {a}")
            }
            AggregateError::InvalidTemperature(t) => {
                write!(f, "temperature must be > 0, got {t}")
            }
            AggregateError::LengthMismatch { expected, got } => {
                write!(f, "length mismatch: expected {expected}, got {got}")
            }
            AggregateError::InvalidShapingWeight(l) => {
                write!(f, "shaping weight must be >= 0, got {l}")
            }
            AggregateError::AuxRewardOutOfRange(r) => {
                write!(f, "auxiliary reward {r} outside [0, 1]")
            }
            AggregateError::NonFiniteScore(s) => write!(f, "non-finite score {s}"),
            AggregateError::EmptyTrials => write!(f, "no trials to aggregate"),
            AggregateError::MixedGroups => write!(f, "trials span more than one group"),
            AggregateError::MalformedTrial => {
                write!(f, "trial subset/best/worst structure is malformed")
            }
            AggregateError::ForeignItem(id) => {
                write!(f, "trial references item {id} outside the roster")
            }
            AggregateError::UncoveredItem(id) => {
                write!(f, "item {id} appears in no trial; cannot be scored")
            }
            AggregateError::Link(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for AggregateError {}

impl From<LinkError> for AggregateError {
    fn from(e: LinkError) -> Self {
        AggregateError::Link(e)
    }
}
