//! Reference loss computations over externally supplied probabilities.

use thiserror::Error;

/// Probabilities fed to [`bce_match_loss`] are clamped to `[EPS, 1 − EPS]`.
pub const EPS: f64 = 1e-7;

/// Default weight of the matching loss in the joint objective.
pub const DEFAULT_LAMBDA: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("{targets} target tokens but {steps} predicted distributions")]
    StepMismatch { targets: usize, steps: usize },
    #[error("empty input")]
    Empty,
    #[error("target token {token} at position {pos} is outside a vocabulary of {vocab}")]
    TokenOutOfVocab { pos: usize, token: usize, vocab: usize },
    #[error("probability {value} at position {pos} is not in [0, 1]")]
    BadProbability { pos: usize, value: f64 },
    #[error("{labels} labels but {probs} probabilities")]
    LengthMismatch { labels: usize, probs: usize },
    #[error("lambda must be finite and non-negative, got {0}")]
    BadLambda(f64),
}

/// Mean negative log-likelihood of `target` under per-position distributions.
///
/// A zero probability on a target token yields `f64::INFINITY`.
pub fn cross_entropy_aspect_loss(target: &[usize], steps: &[Vec<f64>]) -> Result<f64, LossError> {
    if target.is_empty() {
        return Err(LossError::Empty);
    }
    if target.len() != steps.len() {
        return Err(LossError::StepMismatch {
            targets: target.len(),
            steps: steps.len(),
        });
    }
    let mut total = 0.0;
    for (pos, (&tok, dist)) in target.iter().zip(steps).enumerate() {
        let p = *dist.get(tok).ok_or(LossError::TokenOutOfVocab {
            pos,
            token: tok,
            vocab: dist.len(),
        })?;
        if !(0.0..=1.0).contains(&p) {
            return Err(LossError::BadProbability { pos, value: p });
        }
        if p == 0.0 {
            log::warn!("zero probability on target token {tok} at position {pos}; loss is infinite");
            return Ok(f64::INFINITY);
        }
        total -= p.ln();
    }
    Ok(total / target.len() as f64)
}

/// Mean of per-image aspect losses.
pub fn mean_over_images(per_image: &[f64]) -> Result<f64, LossError> {
    if per_image.is_empty() {
        return Err(LossError::Empty);
    }
    Ok(per_image.iter().sum::<f64>() / per_image.len() as f64)
}

/// Mean binary cross-entropy over candidates.
pub fn bce_match_loss(labels: &[bool], probs: &[f64]) -> Result<f64, LossError> {
    if labels.is_empty() {
        return Err(LossError::Empty);
    }
    if labels.len() != probs.len() {
        return Err(LossError::LengthMismatch {
            labels: labels.len(),
            probs: probs.len(),
        });
    }
    let mut total = 0.0;
    for (pos, (&y, &p)) in labels.iter().zip(probs).enumerate() {
        if p.is_nan() {
            return Err(LossError::BadProbability { pos, value: p });
        }
        let clamped = p.clamp(EPS, 1.0 - EPS);
        if clamped != p {
            log::warn!("probability {p} at position {pos} clamped to {clamped}");
        }
        total -= if y { clamped.ln() } else { (1.0 - clamped).ln() };
    }
    Ok(total / labels.len() as f64)
}

/// `l_asp + lambda · l_pred`.
pub fn joint_loss(l_asp: f64, l_pred: f64, lambda: f64) -> Result<f64, LossError> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(LossError::BadLambda(lambda));
    }
    Ok(l_asp + lambda * l_pred)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ce_reference_values() {
        assert_eq!(cross_entropy_aspect_loss(&[0, 2], &[vec![1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap(), 0.0);
        let uniform = cross_entropy_aspect_loss(&[3], &[vec![0.25; 4]]).unwrap();
        assert!((uniform - 4f64.ln()).abs() < 1e-12);
        assert!((uniform - 1.3863).abs() < 1e-4);
        assert_eq!(cross_entropy_aspect_loss(&[1], &[vec![1.0, 0.0]]).unwrap(), f64::INFINITY);
    }

    #[test]
    fn ce_errors() {
        assert_eq!(cross_entropy_aspect_loss(&[], &[]), Err(LossError::Empty));
        assert!(matches!(cross_entropy_aspect_loss(&[0], &[]), Err(LossError::StepMismatch { .. })));
        assert!(matches!(cross_entropy_aspect_loss(&[5], &[vec![0.5, 0.5]]), Err(LossError::TokenOutOfVocab { .. })));
        assert!(matches!(cross_entropy_aspect_loss(&[0], &[vec![1.5]]), Err(LossError::BadProbability { .. })));
    }

    #[test]
    fn bce_reference_values() {
        let perfect = bce_match_loss(&[true, false], &[1.0 - EPS, EPS]).unwrap();
        assert!(perfect < 1e-6);
        assert!((bce_match_loss(&[true], &[0.5]).unwrap() - 2f64.ln()).abs() < 1e-12);
        // Out-of-range probabilities are clamped, not rejected.
        let clamped = bce_match_loss(&[true, false], &[1.0, 0.0]).unwrap();
        assert!((clamped - perfect).abs() < 1e-12);
        assert!(bce_match_loss(&[true], &[f64::NAN]).is_err());
    }

    #[test]
    fn joint_reference_values() {
        assert_eq!(joint_loss(1.0, 0.5, 2.0).unwrap(), 2.0);
        assert_eq!(joint_loss(1.0, 0.5, DEFAULT_LAMBDA).unwrap(), 2.0);
        assert_eq!(joint_loss(0.7, 123.0, 0.0).unwrap(), 0.7);
        assert!(joint_loss(1.0, 1.0, -1.0).is_err());
    }
}
