use crate::error::{invalid, Result};

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return invalid("softmax of an empty vector");
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return invalid("softmax input must be finite");
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax_class(values: &[f64]) -> Result<usize> {
    if values.is_empty() {
        return invalid("argmax of an empty vector");
    }
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        for p in softmax(&[1000.0, 1000.0, 1000.0]).unwrap() {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
        let p = softmax(&[1.0, 0.0]).unwrap();
        // e / (e + 1)
        assert!((p[0] - 0.73106).abs() < 1e-5);
        assert!((p[1] - 0.26894).abs() < 1e-5);
        assert!(softmax(&[f64::NAN, 0.0]).is_err());
        assert!(softmax(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn argmax_examples() {
        assert_eq!(argmax_class(&[0.1, 0.7, 0.2]).unwrap(), 1);
        assert_eq!(argmax_class(&[0.5, 0.5]).unwrap(), 0);
        assert_eq!(argmax_class(&[0.2, 0.3, 0.3, 0.2]).unwrap(), 1);
        assert!(argmax_class(&[]).is_err());
    }

    proptest! {
        #[test]
        fn softmax_is_shift_invariant(
            logits in prop::collection::vec(-50.0f64..50.0, 1..10),
            shift in -100.0f64..100.0,
        ) {
            let a = softmax(&logits).unwrap();
            let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
            let b = softmax(&shifted).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(a.iter().all(|p| *p >= 0.0));
        }

        #[test]
        fn argmax_of_softmax_matches_logits(
            logits in prop::collection::vec(prop::sample::select(vec![-2.0, -1.0, 0.0, 0.5, 1.0, 3.0]), 1..8),
        ) {
            let probs = softmax(&logits).unwrap();
            prop_assert_eq!(argmax_class(&probs).unwrap(), argmax_class(&logits).unwrap());
        }
    }
}
