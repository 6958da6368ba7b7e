//! Link functions mapping latent quality gaps to preference probabilities.
//!
//! A link `Λ` is strictly increasing with range in `(0, 1)` and `Λ(0) = 1/2`
//! exactly: a zero quality gap makes the comparison a coin flip, and larger
//! gaps make the preferred side more certain.

use core::fmt;

/// Strictly increasing map from a quality gap to a win probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LinkFunction {
    /// `σ(x) = 1 / (1 + e^(-x))`.
    Logistic,
    /// Standard normal CDF `Φ(x)`, evaluated through the error function.
    Probit,
    /// `σ(s·x)` for a slope `s > 0`. Large slopes make labels near-deterministic.
    ScaledLogistic(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum LinkError {
    /// The gap passed to [`link_eval`] was NaN or infinite.
    NonFiniteInput(f64),
    /// A scaled-logistic slope must be strictly positive and finite.
    InvalidSlope(f64),
}

impl fmt::Display for LinkError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LinkError::NonFiniteInput(x) => write!(f, "link input must be finite, got {x}"),
            LinkError::InvalidSlope(s) => write!(f, "scaled-logistic slope must be > 0, got {s}"),
        }
    }
}

impl core::error::Error for LinkError {}

impl LinkFunction {
    /// A scaled logistic link, validating the slope.
    pub fn scaled_logistic(slope: f64) -> Result<Self, LinkError> {
        if !(slope.is_finite() && slope > 0.0) {
            return Err(LinkError::InvalidSlope(slope));
        }
        Ok(LinkFunction::ScaledLogistic(slope))
    }
}

/// Smallest probability returned by [`link_eval`]; keeps the range inside
/// the open interval even where the exact value would round to 0 or 1.
const P_FLOOR: f64 = 1e-300;
/// Largest probability returned by [`link_eval`] (the f64 just below 1).
const P_CEIL: f64 = 1.0 - f64::EPSILON / 2.0;

/// Evaluate the link at gap `x`.
///
/// Returns a probability in the open interval `(0, 1)`, strictly increasing
/// in `x` over the link's numerically resolvable range, with
/// `link_eval(0) == 0.5` exactly and `Λ(x) + Λ(-x) = 1` for the symmetric
/// kinds.
pub fn link_eval(link: &LinkFunction, x: f64) -> Result<f64, LinkError> {
    if !x.is_finite() {
        return Err(LinkError::NonFiniteInput(x));
    }
    let p = match link {
        LinkFunction::Logistic => sigmoid(x),
        LinkFunction::Probit => 0.5 + 0.5 * libm::erf(x / core::f64::consts::SQRT_2),
        LinkFunction::ScaledLogistic(s) => {
            if !(s.is_finite() && *s > 0.0) {
                return Err(LinkError::InvalidSlope(*s));
            }
            sigmoid(s * x)
        }
    };
    Ok(p.clamp(P_FLOOR, P_CEIL))
}

/// Numerically stable logistic function.
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn logistic_at_zero_is_exactly_half() {
        assert_eq!(link_eval(&LinkFunction::Logistic, 0.0).unwrap(), 0.5);
        assert_eq!(link_eval(&LinkFunction::Probit, 0.0).unwrap(), 0.5);
        assert_eq!(
            link_eval(&LinkFunction::ScaledLogistic(2.0), 0.0).unwrap(),
            0.5
        );
    }

    #[test]
    fn logistic_closed_form_at_ln3() {
        // σ(ln 3) = 3/4
        let p = link_eval(&LinkFunction::Logistic, 3.0_f64.ln()).unwrap();
        assert!((p - 0.75).abs() < 1e-15);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        assert!(matches!(
            link_eval(&LinkFunction::Logistic, f64::NAN),
            Err(LinkError::NonFiniteInput(_))
        ));
        assert!(matches!(
            link_eval(&LinkFunction::Probit, f64::INFINITY),
            Err(LinkError::NonFiniteInput(_))
        ));
    }

    #[test]
    fn invalid_slope_is_rejected() {
        assert!(LinkFunction::scaled_logistic(0.0).is_err());
        assert!(LinkFunction::scaled_logistic(-3.0).is_err());
        assert!(LinkFunction::scaled_logistic(f64::NAN).is_err());
        assert!(LinkFunction::scaled_logistic(20.0).is_ok());
    }

    #[test]
    fn probit_matches_reference_normal_cdf_values() {
        // Φ(1) and the 97.5% quantile, to well within the 1e-7 budget.
        let p1 = link_eval(&LinkFunction::Probit, 1.0).unwrap();
        assert!((p1 - 0.841_344_746_068_543).abs() < 1e-12);
        let p975 = link_eval(&LinkFunction::Probit, 1.959_963_984_540_054).unwrap();
        assert!((p975 - 0.975).abs() < 1e-12);
    }

    #[test]
    fn saturated_values_stay_in_open_interval() {
        let hi = link_eval(&LinkFunction::Logistic, 800.0).unwrap();
        let lo = link_eval(&LinkFunction::Logistic, -800.0).unwrap();
        assert!(hi < 1.0 && hi > 0.5);
        assert!(lo > 0.0 && lo < 0.5);
    }

    fn all_links() -> Vec<LinkFunction> {
        vec![
            LinkFunction::Logistic,
            LinkFunction::Probit,
            LinkFunction::ScaledLogistic(0.5),
            LinkFunction::ScaledLogistic(20.0),
        ]
    }

    proptest! {
        // Strict monotonicity over the domain the model actually sees:
        // quality gaps live in [-1, 1]. Gaps closer than 1e-6 can collide
        // with f64 resolution once a steep link saturates, so keep the
        // points separated.
        #[test]
        fn strictly_increasing(a in -1.0f64..1.0, b in -1.0f64..1.0) {
            prop_assume!((a - b).abs() > 1e-6);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            for link in all_links() {
                let pl = link_eval(&link, lo).unwrap();
                let ph = link_eval(&link, hi).unwrap();
                prop_assert!(pl < ph, "{link:?}: Λ({lo}) = {pl} !< Λ({hi}) = {ph}");
            }
        }

        #[test]
        fn symmetry_sums_to_one(x in -30.0f64..30.0) {
            for link in all_links() {
                let p = link_eval(&link, x).unwrap();
                let q = link_eval(&link, -x).unwrap();
                prop_assert!((p + q - 1.0).abs() < 1e-12, "{link:?} at {x}: {p} + {q}");
            }
        }

        #[test]
        fn range_is_open_unit_interval(x in proptest::num::f64::NORMAL) {
            prop_assume!(x.is_finite());
            for link in all_links() {
                let p = link_eval(&link, x).unwrap();
                prop_assert!(p > 0.0 && p < 1.0);
            }
        }
    }
}
