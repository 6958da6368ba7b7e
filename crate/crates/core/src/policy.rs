//! Tabular caption policies and KL-regularized listwise optimization.
//!
//! A policy maps each context to a softmax distribution over that context's
//! finite caption set. Training minimizes, averaged over contexts, the
//! cross-entropy against group targets plus `beta` times the KL divergence
//! from a frozen reference policy. Because the quality function is bounded
//! in `[0, 1]`, the KL term caps how far expected quality can fall: by
//! Pinsker's inequality the drop is at most `sqrt(mean_KL / 2)`, which
//! [`pinsker_check`] verifies link by link.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use crate::aggregate::GroupTargets;
use crate::dataset::ItemId;

/// Context identifier (one context per group in the pipeline).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ContextId(pub u64);

impl fmt::Display for ContextId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Logits over one context's caption set.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextHead {
    pub captions: Vec<ItemId>,
    pub logits: Vec<f64>,
}

/// A tabular softmax policy over finite caption sets.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalPolicy {
    contexts: BTreeMap<ContextId, ContextHead>,
}

impl CategoricalPolicy {
    pub fn new(contexts: BTreeMap<ContextId, ContextHead>) -> Result<Self, PolicyError> {
        if contexts.is_empty() {
            return Err(PolicyError::EmptyPolicy);
        }
        for (&ctx, head) in &contexts {
            if head.captions.is_empty() {
                return Err(PolicyError::EmptyContext(ctx));
            }
            if head.captions.len() != head.logits.len() {
                return Err(PolicyError::LengthMismatch {
                    a: head.captions.len(),
                    b: head.logits.len(),
                });
            }
            if head.logits.iter().any(|l| !l.is_finite()) {
                return Err(PolicyError::NonFiniteLogit(ctx));
            }
            let mut seen = alloc::collections::BTreeSet::new();
            for &c in &head.captions {
                if !seen.insert(c) {
                    return Err(PolicyError::DuplicateCaption { context: ctx, caption: c });
                }
            }
        }
        Ok(Self { contexts })
    }

    /// Uniform policy (zero logits) over the given caption sets.
    pub fn uniform(caption_sets: BTreeMap<ContextId, Vec<ItemId>>) -> Result<Self, PolicyError> {
        let contexts = caption_sets
            .into_iter()
            .map(|(ctx, captions)| {
                let n = captions.len();
                (ctx, ContextHead { captions, logits: alloc::vec![0.0; n] })
            })
            .collect();
        Self::new(contexts)
    }

    pub fn contexts(&self) -> &BTreeMap<ContextId, ContextHead> {
        &self.contexts
    }

    /// Softmax probabilities for one context.
    pub fn probs(&self, ctx: ContextId) -> Option<Vec<f64>> {
        self.contexts
            .get(&ctx)
            .map(|head| log_softmax(&head.logits).iter().map(|l| libm::exp(*l)).collect())
    }
}

/// KL-regularized training settings.
#[derive(Debug, Clone, PartialEq)]
pub struct GrpoConfig {
    /// Weight of the KL term; zero disables regularization.
    pub beta: f64,
    pub learning_rate: f64,
    pub steps: usize,
    /// Hard trust region: training stops at the last step whose mean KL
    /// stays within this budget.
    pub kl_budget: Option<f64>,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            learning_rate: 0.5,
            steps: 200,
            kl_budget: None,
        }
    }
}

/// `Σ p_i ln(p_i / q_i)` with `0·ln 0 = 0`. `q` must be positive wherever
/// `p` is.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64, PolicyError> {
    validate_distribution(p)?;
    validate_distribution(q)?;
    if p.len() != q.len() {
        return Err(PolicyError::LengthMismatch { a: p.len(), b: q.len() });
    }
    let mut sum = 0.0;
    for (idx, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(PolicyError::SupportMismatch { index: idx });
        }
        sum += pi * libm::log(pi / qi);
    }
    Ok(sum.max(0.0))
}

/// Total variation distance `½ Σ |p_i - q_i|`, in `[0, 1]`.
pub fn total_variation(p: &[f64], q: &[f64]) -> Result<f64, PolicyError> {
    validate_distribution(p)?;
    validate_distribution(q)?;
    if p.len() != q.len() {
        return Err(PolicyError::LengthMismatch { a: p.len(), b: q.len() });
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

const DISTRIBUTION_TOL: f64 = 1e-9;

fn validate_distribution(p: &[f64]) -> Result<(), PolicyError> {
    if p.is_empty() {
        return Err(PolicyError::LengthMismatch { a: 0, b: 0 });
    }
    let mut sum = 0.0;
    for &x in p {
        if !(x.is_finite() && x >= 0.0) {
            return Err(PolicyError::NegativeEntry(x));
        }
        sum += x;
    }
    if (sum - 1.0).abs() > DISTRIBUTION_TOL {
        return Err(PolicyError::NotADistribution(sum));
    }
    Ok(())
}

/// Loss value plus per-context logit gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GrpoLoss {
    pub loss: f64,
    pub grads: BTreeMap<ContextId, Vec<f64>>,
}

/// The listwise objective: mean over contexts of
/// `-Σ_k q(c_k) ln π(c_k) + beta · KL(π ‖ ref)`.
///
/// Targets may cover a strict subset of a context's captions (mass can then
/// leak to non-candidates, held back only by the KL term) and may be absent
/// for a context entirely, which leaves only its KL term. With the full
/// candidate set and `beta = 0` the per-context gradient is `π - q`.
pub fn grpo_loss(
    policy: &CategoricalPolicy,
    reference: &CategoricalPolicy,
    targets: &BTreeMap<ContextId, GroupTargets>,
    beta: f64,
) -> Result<GrpoLoss, PolicyError> {
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(PolicyError::InvalidConfig("beta must be >= 0"));
    }
    check_same_structure(policy, reference)?;
    for (&ctx, t) in targets {
        if !policy.contexts.contains_key(&ctx) {
            return Err(PolicyError::UnknownContext(ctx));
        }
        let head = &policy.contexts[&ctx];
        let mut q_sum = 0.0;
        for (&item, &q) in t.items.iter().zip(&t.q) {
            if !head.captions.contains(&item) {
                return Err(PolicyError::CandidateNotInContext { context: ctx, caption: item });
            }
            if !(q.is_finite() && q >= 0.0) {
                return Err(PolicyError::NegativeEntry(q));
            }
            q_sum += q;
        }
        if t.items.len() != t.q.len() {
            return Err(PolicyError::LengthMismatch { a: t.items.len(), b: t.q.len() });
        }
        if (q_sum - 1.0).abs() > DISTRIBUTION_TOL {
            return Err(PolicyError::TargetNotNormalized { context: ctx, sum: q_sum });
        }
    }

    let n_ctx = policy.contexts.len() as f64;
    let mut total = 0.0;
    let mut grads = BTreeMap::new();
    for (&ctx, head) in &policy.contexts {
        let ref_head = &reference.contexts[&ctx];
        let logp = log_softmax(&head.logits);
        let probs: Vec<f64> = logp.iter().map(|l| libm::exp(*l)).collect();
        let ref_logp = log_softmax(&ref_head.logits);

        let mut ctx_loss = 0.0;
        let mut grad: Vec<f64> = alloc::vec![0.0; probs.len()];

        if let Some(t) = targets.get(&ctx) {
            // Cross-entropy over the candidate set.
            let mut scattered: Vec<f64> = alloc::vec![0.0; probs.len()];
            for (&item, &q) in t.items.iter().zip(&t.q) {
                let pos = head.captions.iter().position(|&c| c == item).unwrap();
                scattered[pos] = q;
                ctx_loss -= q * logp[pos];
            }
            for a in 0..probs.len() {
                grad[a] += probs[a] - scattered[a];
            }
        }

        if beta > 0.0 {
            let kl: f64 = probs
                .iter()
                .zip(&logp)
                .zip(&ref_logp)
                .map(|((&p, &lp), &lr)| p * (lp - lr))
                .sum();
            ctx_loss += beta * kl;
            for a in 0..probs.len() {
                grad[a] += beta * probs[a] * (logp[a] - ref_logp[a] - kl);
            }
        }

        total += ctx_loss / n_ctx;
        for g in &mut grad {
            *g /= n_ctx;
        }
        grads.insert(ctx, grad);
    }
    if !total.is_finite() {
        return Err(PolicyError::NonFiniteLoss { step: 0 });
    }
    Ok(GrpoLoss { loss: total, grads })
}

/// One trace row per training step (step 0 is the initial state).
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub step: usize,
    pub loss: f64,
    pub mean_kl: f64,
    pub expected_humor: f64,
}

/// A trained policy with its per-step trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub policy: CategoricalPolicy,
    pub trace: Vec<TraceStep>,
}

/// Gradient-descent training of [`grpo_loss`] starting from (and
/// regularized toward) `reference`.
///
/// The quality table must cover every caption of every context. If a KL
/// budget is set, the run stops at the last step whose mean KL is within
/// the budget; a step that would exceed it is undone and not traced.
pub fn train_policy(
    reference: &CategoricalPolicy,
    targets: &BTreeMap<ContextId, GroupTargets>,
    config: &GrpoConfig,
    humor: &BTreeMap<ContextId, BTreeMap<ItemId, f64>>,
) -> Result<TrainOutcome, PolicyError> {
    if !(config.learning_rate.is_finite() && config.learning_rate > 0.0) {
        return Err(PolicyError::InvalidConfig("learning_rate must be > 0"));
    }
    if config.steps == 0 {
        return Err(PolicyError::InvalidConfig("steps must be >= 1"));
    }
    if let Some(budget) = config.kl_budget {
        if !(budget.is_finite() && budget > 0.0) {
            return Err(PolicyError::InvalidConfig("kl_budget must be > 0"));
        }
    }
    validate_humor_table(reference, humor)?;

    let mut policy = reference.clone();
    let mut trace = Vec::with_capacity(config.steps + 1);
    let initial = grpo_loss(&policy, reference, targets, config.beta)?;
    trace.push(TraceStep {
        step: 0,
        loss: initial.loss,
        mean_kl: 0.0,
        expected_humor: expected_humor(&policy, humor)?,
    });

    let mut grads = initial.grads;
    for step in 1..=config.steps {
        let previous = policy.clone();
        for (ctx, grad) in &grads {
            let head = policy.contexts.get_mut(ctx).unwrap();
            for (l, g) in head.logits.iter_mut().zip(grad) {
                *l -= config.learning_rate * g;
            }
        }
        let mean_kl = mean_kl(&policy, reference)?;
        if let Some(budget) = config.kl_budget {
            if mean_kl > budget {
                policy = previous;
                break;
            }
        }
        let eval = grpo_loss(&policy, reference, targets, config.beta)?;
        if !eval.loss.is_finite() {
            return Err(PolicyError::NonFiniteLoss { step });
        }
        trace.push(TraceStep {
            step,
            loss: eval.loss,
            mean_kl,
            expected_humor: expected_humor(&policy, humor)?,
        });
        grads = eval.grads;
    }
    Ok(TrainOutcome { policy, trace })
}

/// Mean over contexts of `KL(π(·|ctx) ‖ ref(·|ctx))`.
pub fn mean_kl(
    policy: &CategoricalPolicy,
    reference: &CategoricalPolicy,
) -> Result<f64, PolicyError> {
    check_same_structure(policy, reference)?;
    let mut sum = 0.0;
    for (&ctx, head) in &policy.contexts {
        let logp = log_softmax(&head.logits);
        let ref_logp = log_softmax(&reference.contexts[&ctx].logits);
        sum += logp
            .iter()
            .zip(&ref_logp)
            .map(|(&lp, &lr)| libm::exp(lp) * (lp - lr))
            .sum::<f64>();
    }
    Ok((sum / policy.contexts.len() as f64).max(0.0))
}

/// Mean over contexts of the policy's expected quality `Σ π(c)·h(c)`.
pub fn expected_humor(
    policy: &CategoricalPolicy,
    humor: &BTreeMap<ContextId, BTreeMap<ItemId, f64>>,
) -> Result<f64, PolicyError> {
    let mut sum = 0.0;
    for (&ctx, head) in &policy.contexts {
        let table = humor.get(&ctx).ok_or(PolicyError::MissingHumor {
            context: ctx,
            caption: head.captions[0],
        })?;
        let probs = policy.probs(ctx).unwrap();
        for (&caption, p) in head.captions.iter().zip(probs) {
            let h = *table.get(&caption).ok_or(PolicyError::MissingHumor {
                context: ctx,
                caption,
            })?;
            sum += p * h;
        }
    }
    Ok(sum / policy.contexts.len() as f64)
}

/// Verdict of the two-link bound check.
///
/// `delta_h` is the absolute change of expected quality, `kl`/`tv` the mean
/// divergences over contexts, and `bound = sqrt(kl/2)`. `holds` requires,
/// per context, `TV ≤ sqrt(KL/2)` and `|Δ E h| ≤ TV`, and in aggregate
/// `delta_h ≤ bound`, all with `1e-12` slack.
#[derive(Debug, Clone, PartialEq)]
pub struct PinskerReport {
    pub delta_h: f64,
    pub kl: f64,
    pub tv: f64,
    pub bound: f64,
    pub holds: bool,
}

const PINSKER_SLACK: f64 = 1e-12;

/// Verify the bound chain between a policy and a reference.
///
/// Quality values must be in `[0, 1]`; the chain is a theorem there, so
/// `holds` is true for every valid input.
pub fn pinsker_check(
    policy: &CategoricalPolicy,
    reference: &CategoricalPolicy,
    humor: &BTreeMap<ContextId, BTreeMap<ItemId, f64>>,
) -> Result<PinskerReport, PolicyError> {
    check_same_structure(policy, reference)?;
    validate_humor_table(policy, humor)?;
    for (&ctx, table) in humor {
        for (&caption, &h) in table {
            if !(h.is_finite() && (0.0..=1.0).contains(&h)) {
                return Err(PolicyError::HumorOutOfRange { context: ctx, caption, h });
            }
        }
    }

    let n_ctx = policy.contexts.len() as f64;
    let mut kl_sum = 0.0;
    let mut tv_sum = 0.0;
    let mut dh_sum = 0.0;
    let mut holds = true;
    for (&ctx, head) in &policy.contexts {
        let p = policy.probs(ctx).unwrap();
        let r = reference.probs(ctx).unwrap();
        let kl = kl_divergence(&p, &r)?;
        let tv = total_variation(&p, &r)?;
        let table = &humor[&ctx];
        let dh: f64 = head
            .captions
            .iter()
            .zip(p.iter().zip(&r))
            .map(|(c, (pi, ri))| (pi - ri) * table[c])
            .sum();
        holds &= tv <= libm::sqrt(kl / 2.0) + PINSKER_SLACK;
        holds &= dh.abs() <= tv + PINSKER_SLACK;
        kl_sum += kl;
        tv_sum += tv;
        dh_sum += dh;
    }
    let kl = kl_sum / n_ctx;
    let tv = tv_sum / n_ctx;
    let delta_h = (dh_sum / n_ctx).abs();
    let bound = libm::sqrt(kl / 2.0);
    holds &= delta_h <= bound + PINSKER_SLACK;
    Ok(PinskerReport { delta_h, kl, tv, bound, holds })
}

fn check_same_structure(
    a: &CategoricalPolicy,
    b: &CategoricalPolicy,
) -> Result<(), PolicyError> {
    if a.contexts.len() != b.contexts.len() {
        return Err(PolicyError::LengthMismatch {
            a: a.contexts.len(),
            b: b.contexts.len(),
        });
    }
    for (&ctx, head) in &a.contexts {
        let other = b.contexts.get(&ctx).ok_or(PolicyError::UnknownContext(ctx))?;
        if head.captions != other.captions {
            return Err(PolicyError::StructureMismatch(ctx));
        }
    }
    Ok(())
}

fn validate_humor_table(
    policy: &CategoricalPolicy,
    humor: &BTreeMap<ContextId, BTreeMap<ItemId, f64>>,
) -> Result<(), PolicyError> {
    for (&ctx, head) in &policy.contexts {
        let table = humor.get(&ctx).ok_or(PolicyError::MissingHumor {
            context: ctx,
            caption: head.captions[0],
        })?;
        for &caption in &head.captions {
            if !table.contains_key(&caption) {
                return Err(PolicyError::MissingHumor { context: ctx, caption });
            }
        }
    }
    Ok(())
}

/// `logits - logsumexp(logits)`, stable under large logits.
fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &l| m.max(l));
    let lse = max
        + libm::log(
            logits
                .iter()
                .map(|&l| libm::exp(l - max))
                .sum::<f64>(),
        );
    logits.iter().map(|&l| l - lse).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyError {
    EmptyPolicy,
    EmptyContext(ContextId),
    LengthMismatch { a: usize, b: usize },
    NonFiniteLogit(ContextId),
    DuplicateCaption { context: ContextId, caption: ItemId },
    NegativeEntry(f64),
    NotADistribution(f64),
    SupportMismatch { index: usize },
    UnknownContext(ContextId),
    StructureMismatch(ContextId),
    CandidateNotInContext { context: ContextId, caption: ItemId },
    TargetNotNormalized { context: ContextId, sum: f64 },
    MissingHumor { context: ContextId, caption: ItemId },
    HumorOutOfRange { context: ContextId, caption: ItemId, h: f64 },
    InvalidConfig(&'static str),
    NonFiniteLoss { step: usize },
}

impl fmt::Display for PolicyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyError::EmptyPolicy => write!(f, "policy has no contexts"),
            PolicyError::EmptyContext(c) => write!(f, "context {c} has no captions"),
            PolicyError::LengthMismatch { a, b } => {
                write!(f, "length mismatch: {a} vs {b}")
            }
            PolicyError::NonFiniteLogit(c) => write!(f, "context {c} has non-finite logits"),
            PolicyError::DuplicateCaption { context, caption } => {
                write!(f, "caption {caption} appears twice in context {context}")
            }
            PolicyError::NegativeEntry(x) => {
                write!(f, "distribution entry {x} is negative or non-finite")
            }
            PolicyError::NotADistribution(sum) => {
                write!(f, "probabilities sum to {sum}, expected 1")
            }
            PolicyError::SupportMismatch { index } => {
                write!(f, "q[{index}] = 0 where p[{index}] > 0; KL undefined")
            }
            PolicyError::UnknownContext(c) => write!(f, "unknown context {c}"),
            PolicyError::StructureMismatch(c) => {
                write!(f, "policy and reference disagree on the caption set of context {c}")
            }
            PolicyError::CandidateNotInContext { context, caption } => {
                write!(f, "target candidate {caption} is not a caption of context {context}")
            }
            PolicyError::TargetNotNormalized { context, sum } => {
                write!(f, "targets for context {context} sum to {sum}, expected 1")
            }
            PolicyError::MissingHumor { context, caption } => {
                write!(f, "no quality value for caption {caption} in context {context}")
            }
            PolicyError::HumorOutOfRange { context, caption, h } => write!(
                f,
                "quality {h} for caption {caption} in context {context} outside [0, 1]"
            ),
            PolicyError::InvalidConfig(msg) => write!(f, "invalid training config: {msg}"),
            PolicyError::NonFiniteLoss { step } => {
                write!(f, "loss became non-finite at step {step}")
            }
        }
    }
}

impl core::error::Error for PolicyError {}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::{ebc, listwise_targets, PairProbMatrix};
    use crate::dataset::{generate, DatasetSpec, GroupId};
    use crate::link::LinkFunction;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::Rng;

    fn caption_ids(n: usize) -> Vec<ItemId> {
        (0..n as u64).map(ItemId).collect()
    }

    fn policy_of(logits_by_ctx: &[&[f64]]) -> CategoricalPolicy {
        let contexts = logits_by_ctx
            .iter()
            .enumerate()
            .map(|(c, logits)| {
                (
                    ContextId(c as u64),
                    ContextHead {
                        captions: caption_ids(logits.len()),
                        logits: logits.to_vec(),
                    },
                )
            })
            .collect();
        CategoricalPolicy::new(contexts).unwrap()
    }

    fn random_simplex<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
        let raw: Vec<f64> = (0..n).map(|_| -libm::log(1.0 - rng.random::<f64>())).collect();
        let z: f64 = raw.iter().sum();
        raw.iter().map(|x| x / z).collect()
    }

    #[test]
    fn kl_examples() {
        let p = [0.3, 0.7];
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);

        let kl = kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((kl - core::f64::consts::LN_2).abs() < 1e-15);

        // Asymmetry, both directions hand-computed.
        let a = [0.9, 0.1];
        let u = [0.5, 0.5];
        let forward = kl_divergence(&a, &u).unwrap();
        let backward = kl_divergence(&u, &a).unwrap();
        assert!((forward - (0.9 * (1.8f64).ln() + 0.1 * (0.2f64).ln())).abs() < 1e-12);
        assert!((backward - (0.5 * (0.5f64 / 0.9).ln() + 0.5 * (5.0f64).ln())).abs() < 1e-12);
        assert!((forward - 0.368).abs() < 1e-3);
        assert!((backward - 0.511).abs() < 1e-3);
        assert_ne!(forward, backward);
    }

    #[test]
    fn kl_support_error() {
        assert!(matches!(
            kl_divergence(&[0.5, 0.5], &[1.0, 0.0]),
            Err(PolicyError::SupportMismatch { index: 1 })
        ));
        // 0 * ln 0 = 0 on the p side.
        assert_eq!(kl_divergence(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn tv_examples() {
        assert_eq!(total_variation(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        assert_eq!(total_variation(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert!((total_variation(&[0.75, 0.25], &[0.5, 0.5]).unwrap() - 0.25).abs() < 1e-15);
    }

    fn targets_for(policy: &CategoricalPolicy, q_by_ctx: &[&[f64]]) -> BTreeMap<ContextId, GroupTargets> {
        policy
            .contexts()
            .iter()
            .zip(q_by_ctx)
            .map(|((&ctx, head), q)| {
                (
                    ctx,
                    GroupTargets {
                        group: GroupId(ctx.0),
                        items: head.captions.clone(),
                        q: q.to_vec(),
                    },
                )
            })
            .collect()
    }

    #[test]
    fn loss_at_target_is_entropy_with_zero_gradient() {
        let q = [0.6, 0.3, 0.1];
        let logits: Vec<f64> = q.iter().map(|x| libm::log(*x)).collect();
        let policy = policy_of(&[&logits]);
        let targets = targets_for(&policy, &[&q]);
        let out = grpo_loss(&policy, &policy, &targets, 0.0).unwrap();
        let entropy: f64 = -q.iter().map(|x| x * libm::log(*x)).sum::<f64>();
        assert!((out.loss - entropy).abs() < 1e-12);
        for g in &out.grads[&ContextId(0)] {
            assert!(g.abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_targets_pull_toward_uniform() {
        let policy = policy_of(&[&[2.0, 0.0, -1.0]]);
        let q = [1.0 / 3.0; 3];
        let targets = targets_for(&policy, &[&q]);
        let out = grpo_loss(&policy, &policy, &targets, 0.0).unwrap();
        let grad = &out.grads[&ContextId(0)];
        // Gradient is π - q: positive where over-weighted, negative where under.
        assert!(grad[0] > 0.0 && grad[2] < 0.0);
        let probs = policy.probs(ContextId(0)).unwrap();
        for (g, (p, q)) in grad.iter().zip(probs.iter().zip(q)) {
            assert!((g - (p - q)).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = crate::rng::stream_rng(50, 0);
        for trial in 0..50 {
            let n_ctx = 1 + trial % 3;
            let mut contexts = BTreeMap::new();
            let mut ref_contexts = BTreeMap::new();
            for c in 0..n_ctx {
                let n = 2 + rng.random_range(0..4usize);
                let logits: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
                let ref_logits: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
                contexts.insert(
                    ContextId(c as u64),
                    ContextHead { captions: caption_ids(n), logits },
                );
                ref_contexts.insert(
                    ContextId(c as u64),
                    ContextHead { captions: caption_ids(n), logits: ref_logits },
                );
            }
            let policy = CategoricalPolicy::new(contexts).unwrap();
            let reference = CategoricalPolicy::new(ref_contexts).unwrap();
            let beta = if trial % 2 == 0 { 0.0 } else { 0.05 + rng.random::<f64>() };

            // Strict candidate subsets on odd trials.
            let mut targets = BTreeMap::new();
            for (&ctx, head) in policy.contexts() {
                let n = head.captions.len();
                let take = if trial % 2 == 1 && n > 2 { n - 1 } else { n };
                let q = random_simplex(take, &mut rng);
                targets.insert(
                    ctx,
                    GroupTargets {
                        group: GroupId(ctx.0),
                        items: head.captions[..take].to_vec(),
                        q,
                    },
                );
            }

            let out = grpo_loss(&policy, &reference, &targets, beta).unwrap();
            let h = 1e-6;
            for (&ctx, head) in policy.contexts() {
                for a in 0..head.logits.len() {
                    let mut perturbed = policy.clone();
                    let eval = |p: &mut CategoricalPolicy, delta: f64| {
                        p.contexts.get_mut(&ctx).unwrap().logits[a] += delta;
                        let l = grpo_loss(p, &reference, &targets, beta).unwrap().loss;
                        p.contexts.get_mut(&ctx).unwrap().logits[a] -= delta;
                        l
                    };
                    let plus = eval(&mut perturbed, h);
                    let minus = eval(&mut perturbed, -h);
                    let fd = (plus - minus) / (2.0 * h);
                    let analytic = out.grads[&ctx][a];
                    let denom = analytic.abs().max(fd.abs()).max(1e-6);
                    assert!(
                        ((analytic - fd) / denom).abs() < 1e-4,
                        "trial {trial} ctx {ctx} coord {a}: {analytic} vs {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn candidate_outside_caption_set_is_a_schema_error() {
        let policy = policy_of(&[&[0.0, 0.0]]);
        let targets: BTreeMap<ContextId, GroupTargets> = [(
            ContextId(0),
            GroupTargets {
                group: GroupId(0),
                items: vec![ItemId(0), ItemId(99)],
                q: vec![0.5, 0.5],
            },
        )]
        .into_iter()
        .collect();
        assert!(matches!(
            grpo_loss(&policy, &policy, &targets, 0.0),
            Err(PolicyError::CandidateNotInContext { .. })
        ));
    }

    #[test]
    fn logit_shift_leaves_probs_and_loss_unchanged() {
        let policy = policy_of(&[&[0.3, -1.2, 2.0]]);
        let shifted = policy_of(&[&[100.3, 98.8, 102.0]]);
        let p1 = policy.probs(ContextId(0)).unwrap();
        let p2 = shifted.probs(ContextId(0)).unwrap();
        for (a, b) in p1.iter().zip(&p2) {
            assert!((a - b).abs() < 1e-12);
        }
        let q = [0.2, 0.5, 0.3];
        let t1 = targets_for(&policy, &[&q]);
        let l1 = grpo_loss(&policy, &policy, &t1, 0.7).unwrap().loss;
        let l2 = grpo_loss(&shifted, &shifted, &t1, 0.7).unwrap().loss;
        assert!((l1 - l2).abs() < 1e-12);
    }

    fn humor_table_for(
        policy: &CategoricalPolicy,
        values: &[&[f64]],
    ) -> BTreeMap<ContextId, BTreeMap<ItemId, f64>> {
        policy
            .contexts()
            .iter()
            .zip(values)
            .map(|((&ctx, head), hs)| {
                (
                    ctx,
                    head.captions.iter().copied().zip(hs.iter().copied()).collect(),
                )
            })
            .collect()
    }

    #[test]
    fn huge_beta_pins_the_policy_to_the_reference() {
        let reference = policy_of(&[&[0.5, -0.5, 0.0]]);
        let q = [0.7, 0.2, 0.1];
        let targets = targets_for(&reference, &[&q]);
        let humor = humor_table_for(&reference, &[&[0.9, 0.1, 0.4]]);
        // Plain gradient descent needs lr ≲ 1/beta to be stable once the
        // KL term dominates the curvature.
        let config = GrpoConfig {
            beta: 1e6,
            learning_rate: 4e-6,
            steps: 3000,
            kl_budget: None,
        };
        let out = train_policy(&reference, &targets, &config, &humor).unwrap();
        let p = out.policy.probs(ContextId(0)).unwrap();
        let r = reference.probs(ContextId(0)).unwrap();
        assert!(total_variation(&p, &r).unwrap() < 1e-3);
        let h0 = out.trace.first().unwrap().expected_humor;
        let h1 = out.trace.last().unwrap().expected_humor;
        assert!((h1 - h0).abs() < 1e-3);
    }

    #[test]
    fn rank_consistent_targets_raise_expected_quality() {
        // Build targets from clean link-generated probabilities of one group.
        let ds = generate(&DatasetSpec::uniform(2, 10, 4), 90).unwrap();
        let mut caption_sets = BTreeMap::new();
        let mut targets = BTreeMap::new();
        let mut humor = BTreeMap::new();
        for (&gid, items) in ds.groups() {
            let ctx = ContextId(gid.0);
            let ids: Vec<ItemId> = items.iter().map(|it| it.id).collect();
            let m = PairProbMatrix::from_link(gid, items, &LinkFunction::ScaledLogistic(20.0))
                .unwrap();
            let scores = ebc(&m, 0.0, false).unwrap().scores;
            let t = listwise_targets(gid, &ids, &scores, 1.0).unwrap();
            targets.insert(ctx, GroupTargets { group: gid, items: ids.clone(), q: t.q });
            humor.insert(ctx, items.iter().map(|it| (it.id, it.humor)).collect());
            caption_sets.insert(ctx, ids);
        }
        let reference = CategoricalPolicy::uniform(caption_sets).unwrap();
        let config = GrpoConfig {
            beta: 0.1,
            learning_rate: 0.5,
            steps: 200,
            kl_budget: None,
        };
        let out = train_policy(&reference, &targets, &config, &humor).unwrap();
        let h0 = out.trace.first().unwrap().expected_humor;
        let h_final = out.trace.last().unwrap().expected_humor;
        assert!(h_final > h0, "{h_final} !> {h0}");

        // Trace-wide stability: never drop below the Pinsker floor.
        for row in &out.trace {
            assert!(
                row.expected_humor >= h0 - libm::sqrt(row.mean_kl / 2.0) - 1e-12,
                "step {}: {} vs floor", row.step, row.expected_humor
            );
        }
    }

    #[test]
    fn single_caption_contexts_are_fixed_points() {
        let reference = policy_of(&[&[0.7]]);
        let targets = targets_for(&reference, &[&[1.0]]);
        let humor = humor_table_for(&reference, &[&[0.3]]);
        let out = train_policy(&reference, &targets, &GrpoConfig::default(), &humor).unwrap();
        assert_eq!(out.policy.probs(ContextId(0)).unwrap(), vec![1.0]);
        let h0 = out.trace.first().unwrap().expected_humor;
        let h1 = out.trace.last().unwrap().expected_humor;
        assert_eq!(h0, h1);
    }

    #[test]
    fn kl_budget_is_a_hard_stop() {
        let reference = policy_of(&[&[0.0, 0.0, 0.0]]);
        let targets = targets_for(&reference, &[&[0.98, 0.01, 0.01]]);
        let humor = humor_table_for(&reference, &[&[1.0, 0.0, 0.0]]);
        let budget = 0.02;
        let config = GrpoConfig {
            beta: 0.0,
            learning_rate: 1.0,
            steps: 5000,
            kl_budget: Some(budget),
        };
        let out = train_policy(&reference, &targets, &config, &humor).unwrap();
        let final_kl = mean_kl(&out.policy, &reference).unwrap();
        assert!(final_kl <= budget, "final KL {final_kl} exceeds budget");
        assert!(out.trace.len() < 5001, "budget never engaged");
        // Every traced step respects the budget too.
        for row in &out.trace {
            assert!(row.mean_kl <= budget + 1e-15);
        }
    }

    #[test]
    fn pinsker_identity_case() {
        let policy = policy_of(&[&[0.2, -0.4], &[1.0, 2.0, -0.5]]);
        let humor = humor_table_for(&policy, &[&[0.5, 0.9], &[0.1, 0.7, 0.3]]);
        let report = pinsker_check(&policy, &policy, &humor).unwrap();
        assert_eq!(report.delta_h, 0.0);
        assert_eq!(report.kl, 0.0);
        assert_eq!(report.bound, 0.0);
        assert!(report.holds);
    }

    #[test]
    fn pinsker_holds_on_random_triples() {
        let mut rng = crate::rng::stream_rng(51, 0);
        for _ in 0..1000 {
            let n = 2 + rng.random_range(0..6usize);
            let logits: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 8.0 - 4.0).collect();
            let ref_logits: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 8.0 - 4.0).collect();
            let policy = policy_of(&[&logits]);
            let reference = policy_of(&[&ref_logits]);
            let hs: Vec<f64> = (0..n).map(|_| rng.random()).collect();
            let humor = humor_table_for(&policy, &[&hs]);
            let report = pinsker_check(&policy, &reference, &humor).unwrap();
            assert!(report.holds, "violation: {report:?}");
        }
    }

    #[test]
    fn pinsker_ratio_approaches_but_never_exceeds_one() {
        let mut max_ratio = 0.0f64;
        let mut e = 1e-4;
        while e <= 0.5 {
            let p_prob = 1.0 - e;
            let logits = [libm::log(p_prob), libm::log(e)];
            let policy = policy_of(&[&logits]);
            let reference = policy_of(&[&[0.0, 0.0]]);
            let humor = humor_table_for(&policy, &[&[1.0, 0.0]]);
            let report = pinsker_check(&policy, &reference, &humor).unwrap();
            assert!(report.holds);
            if report.bound > 0.0 {
                max_ratio = max_ratio.max(report.delta_h / report.bound);
            }
            e *= 1.3;
        }
        // Near e = 0.5 the chain is tight.
        let policy = policy_of(&[&[libm::log(0.501), libm::log(0.499)]]);
        let reference = policy_of(&[&[0.0, 0.0]]);
        let humor = humor_table_for(&policy, &[&[1.0, 0.0]]);
        let report = pinsker_check(&policy, &reference, &humor).unwrap();
        max_ratio = max_ratio.max(report.delta_h / report.bound);
        assert!(max_ratio <= 1.0 + 1e-12, "ratio {max_ratio}");
        assert!(max_ratio > 0.99, "sweep never got tight: {max_ratio}");
    }

    #[test]
    fn pinsker_rejects_out_of_range_quality() {
        let policy = policy_of(&[&[0.0, 0.0]]);
        let humor = humor_table_for(&policy, &[&[1.2, 0.5]]);
        assert!(matches!(
            pinsker_check(&policy, &policy, &humor),
            Err(PolicyError::HumorOutOfRange { .. })
        ));
    }

    proptest! {
        #[test]
        fn gibbs_inequality(seed in 0u64..400) {
            let mut rng = crate::rng::stream_rng(seed, 3);
            let n = 2 + (seed as usize % 6);
            let p = random_simplex(n, &mut rng);
            let q = random_simplex(n, &mut rng);
            let kl = kl_divergence(&p, &q).unwrap();
            prop_assert!(kl >= 0.0);
            if p != q {
                prop_assert!(kl > 0.0);
            }
            prop_assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        }

        #[test]
        fn softmax_probs_are_a_distribution(seed in 0u64..200) {
            let mut rng = crate::rng::stream_rng(seed, 4);
            let n = 1 + (seed as usize % 7);
            let logits: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 40.0 - 20.0).collect();
            let policy = policy_of(&[&logits]);
            let probs = policy.probs(ContextId(0)).unwrap();
            prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(probs.iter().all(|&p| p > 0.0));
        }
    }
}
