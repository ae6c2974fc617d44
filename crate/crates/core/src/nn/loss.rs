//! Softmax cross-entropy over a batch of logits.

use crate::error::{Error, Result};

/// Mean softmax cross-entropy and its gradient with respect to the logits.
///
/// `logits` is row-major (batch, classes). The returned gradient has the
/// same layout and already carries the 1/batch factor.
pub fn softmax_cross_entropy(
    logits: &[f32],
    labels: &[u8],
    classes: usize,
) -> Result<(f64, Vec<f32>)> {
    let batch = labels.len();
    if logits.len() != batch * classes {
        return Err(Error::Config(format!(
            "logits len {} != batch {} x classes {}",
            logits.len(),
            batch,
            classes
        )));
    }
    for &l in labels {
        if (l as usize) >= classes {
            return Err(Error::Input(format!(
                "label {} out of range for {} classes",
                l, classes
            )));
        }
    }

    let mut grad = vec![0.0f32; logits.len()];
    let mut total = 0.0f64;
    let inv_b = 1.0 / batch as f32;
    for (b, &label) in labels.iter().enumerate() {
        let row = &logits[b * classes..(b + 1) * classes];
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f64;
        for &v in row {
            sum += ((v - max) as f64).exp();
        }
        let log_sum = sum.ln() + max as f64;
        total += log_sum - row[label as usize] as f64;

        let grow = &mut grad[b * classes..(b + 1) * classes];
        for (j, g) in grow.iter_mut().enumerate() {
            let p = (((row[j] - max) as f64).exp() / sum) as f32;
            *g = (p - if j == label as usize { 1.0 } else { 0.0 }) * inv_b;
        }
    }
    Ok((total / batch as f64, grad))
}

/// Index of the largest logit per row; ties go to the first index.
pub fn argmax_rows(logits: &[f32], classes: usize) -> Vec<usize> {
    logits
        .chunks(classes)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
