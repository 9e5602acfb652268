use serde::{Deserialize, Serialize};

/// Headline numbers of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Accuracy over every class after the last task.
    pub laa: f64,
    /// Mean over steps of the accuracy on all classes seen so far.
    pub iaa: f64,
}

/// `laa = A_T`, `iaa = mean(A_1..A_T)`. Returns `None` for an empty sequence.
pub fn compute_metrics(step_accuracy: &[f64]) -> Option<Metrics> {
    let last = *step_accuracy.last()?;
    Some(Metrics {
        laa: last,
        iaa: step_accuracy.iter().sum::<f64>() / step_accuracy.len() as f64,
    })
}

/// Fraction of positions where `predicted` equals `truth`.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    correct(predicted, truth) as f64 / truth.len() as f64
}

pub(crate) fn correct(predicted: &[usize], truth: &[usize]) -> usize {
    predicted.iter().zip(truth).filter(|(p, t)| p == t).count()
}

/// Sample mean and standard deviation (`n - 1` denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn last_and_mean() {
        let m = compute_metrics(&[1.0, 0.5]).unwrap();
        assert_eq!(m.laa, 0.5);
        assert_eq!(m.iaa, 0.75);
    }

    #[test]
    fn constant_sequence() {
        let m = compute_metrics(&[0.625; 7]).unwrap();
        assert_eq!((m.laa, m.iaa), (0.625, 0.625));
        assert!(compute_metrics(&[]).is_none());
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert_eq!(s, 1.0);
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
    }

    #[test]
    fn accuracy_counts_matches() {
        assert_eq!(accuracy(&[1, 2, 3, 4], &[1, 0, 3, 0]), 0.5);
    }
}
