//! Distributions over abstract reasoning paths, and the star-mass lower
//! bound on their expected quality.
//!
//! A [`PathModel`] assigns probabilities to finitely many paths; a "star"
//! subset of paths carries quality exactly 1 (qualities are normalized so
//! the max is 1), and every other path falls short by at most `delta` —
//! per path in the default construction, or merely on average behind the
//! [`GapCondition::AverageOnly`] flag. Either way the expected quality is
//! at least `1 - (1 - alpha)·delta`, where `alpha` is the star mass; the
//! bound is tight for the single-star construction with all non-star
//! qualities exactly `1 - delta`.
//!
//! Anchoring mixes the distribution toward a point mass on one star path.
//! That can only grow the star mass (`alpha' = (1-λ)·alpha + λ`) and, for
//! `λ < 1`, keeps every originally supported path supported.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// How non-star quality gaps relate to `delta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapCondition {
    /// Every non-star path individually sits within `delta` of the best.
    PerPath,
    /// Only the probability-weighted average gap is within `delta`;
    /// individual paths may be worse. The bound still holds by linearity.
    AverageOnly,
}

/// A distribution over reasoning paths with per-path quality.
#[derive(Debug, Clone, PartialEq)]
pub struct PathModel {
    probs: Vec<f64>,
    humor: Vec<f64>,
    star_set: BTreeSet<usize>,
}

const NORMALIZATION_TOL: f64 = 1e-9;

impl PathModel {
    /// Validates: probabilities form a distribution, qualities are in
    /// `[0, 1]` with star paths at exactly 1 (hence max quality 1), and the
    /// star set is a nonempty subset with positive mass.
    pub fn new(
        probs: Vec<f64>,
        humor: Vec<f64>,
        star_set: BTreeSet<usize>,
    ) -> Result<Self, PathModelError> {
        if probs.is_empty() || probs.len() != humor.len() {
            return Err(PathModelError::LengthMismatch {
                probs: probs.len(),
                humor: humor.len(),
            });
        }
        let mut sum = 0.0;
        for &p in &probs {
            if !(p.is_finite() && p >= 0.0) {
                return Err(PathModelError::NegativeProb(p));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(PathModelError::ProbsNotNormalized(sum));
        }
        for &h in &humor {
            if !(h.is_finite() && (0.0..=1.0).contains(&h)) {
                return Err(PathModelError::HumorOutOfRange(h));
            }
        }
        if star_set.is_empty() {
            return Err(PathModelError::EmptyStarSet);
        }
        for &r in &star_set {
            if r >= probs.len() {
                return Err(PathModelError::PathOutOfRange(r));
            }
            if humor[r] != 1.0 {
                return Err(PathModelError::StarHumorNotOne(r));
            }
        }
        let alpha: f64 = star_set.iter().map(|&r| probs[r]).sum();
        if alpha <= 0.0 {
            return Err(PathModelError::ZeroStarMass);
        }
        Ok(Self { probs, humor, star_set })
    }

    pub fn n_paths(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn humor(&self) -> &[f64] {
        &self.humor
    }

    pub fn star_set(&self) -> &BTreeSet<usize> {
        &self.star_set
    }

    /// Total probability mass on star paths.
    pub fn star_mass(&self) -> f64 {
        self.star_set.iter().map(|&r| self.probs[r]).sum()
    }

    /// Largest quality shortfall among non-star paths.
    pub fn max_gap(&self) -> f64 {
        self.humor
            .iter()
            .enumerate()
            .filter(|(r, _)| !self.star_set.contains(r))
            .map(|(_, &h)| 1.0 - h)
            .fold(0.0, f64::max)
    }
}

/// The guaranteed floor `1 - (1 - alpha)·delta` on expected path quality.
pub fn humor_lower_bound(alpha: f64, delta: f64) -> f64 {
    1.0 - (1.0 - alpha) * delta
}

/// Build a random model with star mass exactly `alpha` and gap budget
/// `delta`.
///
/// Star paths get quality 1; non-star qualities are drawn from
/// `[1 - delta, 1]` (or rescaled to an average gap within `delta` under
/// [`GapCondition::AverageOnly`]). Raw probability weights are drawn
/// randomly, then the star and non-star blocks are rescaled to masses
/// `alpha` and `1 - alpha`. When `alpha < 1` at least one non-star path
/// must exist, so `n_paths >= 2` is required there.
pub fn build_path_model(
    n_paths: usize,
    alpha: f64,
    delta: f64,
    condition: GapCondition,
    seed: u64,
) -> Result<PathModel, PathModelError> {
    if n_paths == 0 {
        return Err(PathModelError::NoPaths);
    }
    if !(alpha.is_finite() && alpha > 0.0 && alpha <= 1.0) {
        return Err(PathModelError::InvalidAlpha(alpha));
    }
    if !(delta.is_finite() && (0.0..=1.0).contains(&delta)) {
        return Err(PathModelError::InvalidDelta(delta));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    if alpha == 1.0 {
        let star_count = 1 + rng.random_range(0..n_paths);
        let mut raw: Vec<f64> = (0..star_count).map(|_| exp_draw(&mut rng)).collect();
        let z: f64 = raw.iter().sum();
        raw.iter_mut().for_each(|w| *w /= z);
        let mut probs = alloc::vec![0.0; n_paths];
        let mut humor = alloc::vec![0.0; n_paths];
        let mut star_set = BTreeSet::new();
        for (r, w) in raw.into_iter().enumerate() {
            probs[r] = w;
            star_set.insert(r);
        }
        for (r, h) in humor.iter_mut().enumerate() {
            // Unreached paths keep probability zero; give them quality 1
            // so the "max quality = 1" normalization is witnessed by stars.
            *h = if star_set.contains(&r) { 1.0 } else { 1.0 - delta };
        }
        return PathModel::new(probs, humor, star_set);
    }

    if n_paths < 2 {
        return Err(PathModelError::AlphaUnreachable { n_paths, alpha });
    }
    let star_count = 1 + rng.random_range(0..n_paths - 1);
    let raw: Vec<f64> = (0..n_paths).map(|_| exp_draw(&mut rng)).collect();
    let star_raw: f64 = raw[..star_count].iter().sum();
    let rest_raw: f64 = raw[star_count..].iter().sum();
    let mut probs = alloc::vec![0.0; n_paths];
    for (r, &w) in raw.iter().enumerate() {
        probs[r] = if r < star_count {
            alpha * w / star_raw
        } else {
            (1.0 - alpha) * w / rest_raw
        };
    }

    let mut humor = alloc::vec![1.0; n_paths];
    match condition {
        GapCondition::PerPath => {
            for h in humor.iter_mut().skip(star_count) {
                *h = 1.0 - delta * rng.random::<f64>();
            }
        }
        GapCondition::AverageOnly => {
            let cap = delta.min(0.5) * 2.0;
            let mut gaps: Vec<f64> = (star_count..n_paths)
                .map(|_| cap * rng.random::<f64>())
                .collect();
            let rest_mass: f64 = probs[star_count..].iter().sum();
            if rest_mass > 0.0 {
                let avg: f64 = gaps
                    .iter()
                    .zip(&probs[star_count..])
                    .map(|(g, p)| g * p)
                    .sum::<f64>()
                    / rest_mass;
                if avg > delta {
                    let shrink = delta / avg;
                    gaps.iter_mut().for_each(|g| *g *= shrink);
                }
            }
            for (h, g) in humor.iter_mut().skip(star_count).zip(gaps) {
                *h = 1.0 - g;
            }
        }
    }
    let star_set: BTreeSet<usize> = (0..star_count).collect();
    PathModel::new(probs, humor, star_set)
}

/// Expected path quality `Σ probs·humor`; at least
/// [`humor_lower_bound`]`(alpha, delta)` for models built as above.
pub fn expected_path_humor(model: &PathModel) -> f64 {
    model
        .probs
        .iter()
        .zip(&model.humor)
        .map(|(p, h)| p * h)
        .sum()
}

/// Mix the path distribution toward a point mass on a star path:
/// `probs' = (1-λ)·probs + λ·e_anchor`.
///
/// The anchor must be a star path, so the star mass grows to
/// `(1-λ)·alpha + λ` and expected quality cannot decrease. For `λ < 1`
/// every originally supported path stays supported.
pub fn anchor_stage2(
    model: &PathModel,
    anchor_path: usize,
    lambda: f64,
) -> Result<PathModel, PathModelError> {
    if anchor_path >= model.n_paths() {
        return Err(PathModelError::PathOutOfRange(anchor_path));
    }
    if !model.star_set.contains(&anchor_path) {
        return Err(PathModelError::AnchorNotStar(anchor_path));
    }
    if !(lambda.is_finite() && (0.0..=1.0).contains(&lambda)) {
        return Err(PathModelError::InvalidLambda(lambda));
    }
    let probs: Vec<f64> = model
        .probs
        .iter()
        .enumerate()
        .map(|(r, &p)| (1.0 - lambda) * p + if r == anchor_path { lambda } else { 0.0 })
        .collect();
    PathModel::new(probs, model.humor.clone(), model.star_set.clone())
}

/// Unit-mean exponential draw; keeps raw weights strictly positive.
fn exp_draw<R: Rng>(rng: &mut R) -> f64 {
    -libm::log(1.0 - rng.random::<f64>())
}

#[derive(Debug, Clone, PartialEq)]
pub enum PathModelError {
    NoPaths,
    LengthMismatch { probs: usize, humor: usize },
    NegativeProb(f64),
    ProbsNotNormalized(f64),
    HumorOutOfRange(f64),
    EmptyStarSet,
    PathOutOfRange(usize),
    StarHumorNotOne(usize),
    ZeroStarMass,
    InvalidAlpha(f64),
    InvalidDelta(f64),
    AlphaUnreachable { n_paths: usize, alpha: f64 },
    InvalidLambda(f64),
    AnchorNotStar(usize),
}

impl fmt::Display for PathModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PathModelError::NoPaths => write!(f, "a path model needs at least one path"),
            PathModelError::LengthMismatch { probs, humor } => {
                write!(f, "probs ({probs}) and qualities ({humor}) differ in length")
            }
            PathModelError::NegativeProb(p) => {
                write!(f, "path probability {p} is negative or non-finite")
            }
            PathModelError::ProbsNotNormalized(s) => {
                write!(f, "path probabilities sum to {s}, expected 1")
            }
            PathModelError::HumorOutOfRange(h) => {
                write!(f, "path quality {h} outside [0, 1]")
            }
            PathModelError::EmptyStarSet => write!(f, "star set must be nonempty"),
            PathModelError::PathOutOfRange(r) => write!(f, "path index {r} out of range"),
            PathModelError::StarHumorNotOne(r) => {
                write!(f, "star path {r} must have quality exactly 1")
            }
            PathModelError::ZeroStarMass => write!(f, "star set has zero probability mass"),
            PathModelError::InvalidAlpha(a) => {
                write!(f, "star mass must be in (0, 1], got {a}")
            }
            PathModelError::InvalidDelta(d) => {
                write!(f, "gap budget must be in [0, 1], got {d}")
            }
            PathModelError::AlphaUnreachable { n_paths, alpha } => write!(
                f,
                "star mass {alpha} < 1 needs a non-star path, but there are only {n_paths} paths"
            ),
            PathModelError::InvalidLambda(l) => {
                write!(f, "anchoring mixture weight must be in [0, 1], got {l}")
            }
            PathModelError::AnchorNotStar(r) => {
                write!(f, "anchor path {r} is not in the star set")
            }
        }
    }
}

impl core::error::Error for PathModelError {}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn all_star_and_zero_gap_degenerate_cases() {
        let m = build_path_model(8, 1.0, 0.7, GapCondition::PerPath, 1).unwrap();
        assert!((expected_path_humor(&m) - 1.0).abs() < 1e-12);
        assert!((m.star_mass() - 1.0).abs() < 1e-12);

        let m = build_path_model(8, 0.3, 0.0, GapCondition::PerPath, 2).unwrap();
        assert!((expected_path_humor(&m) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bound_value_direct_substitution() {
        assert!((humor_lower_bound(0.5, 0.2) - 0.9).abs() < 1e-15);
        assert_eq!(humor_lower_bound(1.0, 0.9), 1.0);
    }

    #[test]
    fn tightness_construction_achieves_equality() {
        let (alpha, delta) = (0.37, 0.41);
        let n = 6;
        let mut probs = vec![(1.0 - alpha) / (n - 1) as f64; n];
        probs[0] = alpha;
        let mut humor = vec![1.0 - delta; n];
        humor[0] = 1.0;
        let star: BTreeSet<usize> = [0].into_iter().collect();
        let m = PathModel::new(probs, humor, star).unwrap();
        let gap = expected_path_humor(&m) - humor_lower_bound(alpha, delta);
        assert!(gap.abs() < 1e-12, "tightness gap {gap}");
    }

    #[test]
    fn random_models_never_violate_the_bound() {
        let mut rng = crate::rng::stream_rng(70, 0);
        use rand::Rng;
        for trial in 0..1000 {
            let n = 1 + rng.random_range(0..40usize);
            let alpha = if trial % 7 == 0 {
                1.0
            } else {
                0.01 + 0.99 * rng.random::<f64>()
            };
            let delta = rng.random::<f64>();
            let condition = if trial % 3 == 0 {
                GapCondition::AverageOnly
            } else {
                GapCondition::PerPath
            };
            let model = match build_path_model(n, alpha, delta, condition, 5000 + trial) {
                Ok(m) => m,
                Err(PathModelError::AlphaUnreachable { .. }) => continue,
                Err(e) => panic!("unexpected build error: {e}"),
            };
            let e = expected_path_humor(&model);
            let bound = humor_lower_bound(alpha, delta);
            assert!(
                e >= bound - 1e-12,
                "trial {trial}: E {e} below bound {bound} (alpha {alpha}, delta {delta})"
            );
            assert!((model.star_mass() - alpha).abs() < 1e-12);
        }
    }

    #[test]
    fn average_only_condition_allows_per_path_excess() {
        // Look for a model whose max gap exceeds delta while the average
        // stays within it; the flag exists exactly for this stress case.
        let delta = 0.3;
        let mut found = false;
        for seed in 0..200 {
            let m = build_path_model(12, 0.4, delta, GapCondition::AverageOnly, seed).unwrap();
            assert!(expected_path_humor(&m) >= humor_lower_bound(0.4, delta) - 1e-12);
            if m.max_gap() > delta + 1e-9 {
                found = true;
            }
        }
        assert!(found, "average-only builder never exceeded delta per path");
    }

    #[test]
    fn per_path_condition_caps_every_gap() {
        for seed in 0..100 {
            let m = build_path_model(10, 0.5, 0.25, GapCondition::PerPath, seed).unwrap();
            assert!(m.max_gap() <= 0.25 + 1e-12);
        }
    }

    #[test]
    fn anchoring_identity_and_point_mass() {
        let m = build_path_model(10, 0.4, 0.5, GapCondition::PerPath, 9).unwrap();
        let anchor = *m.star_set().iter().next().unwrap();

        let same = anchor_stage2(&m, anchor, 0.0).unwrap();
        assert_eq!(same, m);

        let pinned = anchor_stage2(&m, anchor, 1.0).unwrap();
        assert!((pinned.star_mass() - 1.0).abs() < 1e-12);
        assert!((expected_path_humor(&pinned) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn anchoring_mixes_star_mass_linearly() {
        let mut rng = crate::rng::stream_rng(71, 0);
        use rand::Rng;
        for seed in 0..100 {
            let alpha = 0.4;
            let m = build_path_model(12, alpha, 0.6, GapCondition::PerPath, seed).unwrap();
            let anchor = *m.star_set().iter().next().unwrap();
            let lambda = rng.random::<f64>();
            let anchored = anchor_stage2(&m, anchor, lambda).unwrap();

            let expected_alpha = (1.0 - lambda) * alpha + lambda;
            assert!((anchored.star_mass() - expected_alpha).abs() < 1e-12);
            assert!(anchored.star_mass() >= m.star_mass() - 1e-12);
            assert!(expected_path_humor(&anchored) >= expected_path_humor(&m) - 1e-12);
            assert!(humor_lower_bound(expected_alpha, 0.6) >= humor_lower_bound(alpha, 0.6));

            if lambda < 1.0 {
                for (r, &p) in m.probs().iter().enumerate() {
                    if p > 0.0 {
                        assert!(anchored.probs()[r] > 0.0, "support shrank at path {r}");
                    }
                }
            }
        }
    }

    #[test]
    fn half_anchor_example() {
        let mut probs = vec![0.4, 0.6];
        let humor = vec![1.0, 0.8];
        let star: BTreeSet<usize> = [0].into_iter().collect();
        let m = PathModel::new(core::mem::take(&mut probs), humor, star).unwrap();
        let anchored = anchor_stage2(&m, 0, 0.5).unwrap();
        assert!((anchored.star_mass() - 0.7).abs() < 1e-12);
        let e = expected_path_humor(&anchored);
        assert!((e - (0.7 + 0.3 * 0.8)).abs() < 1e-12);
    }

    #[test]
    fn anchor_outside_star_set_is_rejected() {
        let m = build_path_model(6, 0.5, 0.5, GapCondition::PerPath, 3).unwrap();
        let non_star = (0..m.n_paths())
            .find(|r| !m.star_set().contains(r))
            .unwrap();
        assert!(matches!(
            anchor_stage2(&m, non_star, 0.5),
            Err(PathModelError::AnchorNotStar(_))
        ));
    }

    #[test]
    fn builder_validates_parameters() {
        assert!(matches!(
            build_path_model(0, 0.5, 0.5, GapCondition::PerPath, 0),
            Err(PathModelError::NoPaths)
        ));
        assert!(matches!(
            build_path_model(4, 0.0, 0.5, GapCondition::PerPath, 0),
            Err(PathModelError::InvalidAlpha(_))
        ));
        assert!(matches!(
            build_path_model(4, 0.5, 1.5, GapCondition::PerPath, 0),
            Err(PathModelError::InvalidDelta(_))
        ));
        assert!(matches!(
            build_path_model(1, 0.5, 0.5, GapCondition::PerPath, 0),
            Err(PathModelError::AlphaUnreachable { .. })
        ));
    }
}
