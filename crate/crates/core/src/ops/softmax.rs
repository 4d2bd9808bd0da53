use super::CostCounter;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Temperature-scaled softmax of one logit row, computed in `f64`:
/// `exp(z_i / T) / sum_j exp(z_j / T)`.
pub fn softmax_row(z: &[f32], temperature: f64) -> Result<Vec<f64>> {
    check_temperature(temperature)?;
    Ok(softmax_row_unchecked(z, temperature))
}

pub(crate) fn softmax_row_unchecked(z: &[f32], temperature: f64) -> Vec<f64> {
    let max = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let exps: Vec<f64> = z
        .iter()
        .map(|&v| ((v as f64 - max) / temperature).exp())
        .collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `log softmax(z / T)[class]`, stable for large logit gaps.
pub(crate) fn log_softmax_at(z: &[f32], temperature: f64, class: usize) -> f64 {
    let max = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let lse: f64 = z
        .iter()
        .map(|&v| ((v as f64 - max) / temperature).exp())
        .sum::<f64>()
        .ln();
    (z[class] as f64 - max) / temperature - lse
}

fn check_temperature(t: f64) -> Result<()> {
    if t.is_finite() && t > 0.0 {
        Ok(())
    } else {
        Err(Error::Param(format!("temperature must be > 0, got {t}")))
    }
}

/// Row-wise temperature-scaled softmax over the last axis of `[N, classes]`.
pub fn softmax_t(z: &Tensor, temperature: f64, counter: &mut CostCounter) -> Result<Tensor> {
    check_temperature(temperature)?;
    let classes = *z.dims().last().expect("non-empty dims");
    let mut out = Vec::with_capacity(z.len());
    for row in z.data().chunks_exact(classes) {
        out.extend(softmax_row_unchecked(row, temperature).into_iter().map(|p| p as f32));
    }
    counter.add_elems(z.len() as u64);
    Tensor::new(z.dims().to_vec(), out)
}

/// Index of the first maximum.
pub fn argmax(row: &[f32]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_and_closed_form() {
        let p = softmax_row(&[0.0, 0.0], 3.7).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
        let p = softmax_row(&[std::f32::consts::LN_2, 0.0], 1.0).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-7);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-7);
    }

    #[test]
    fn rejects_non_positive_temperature() {
        assert!(softmax_row(&[1.0], 0.0).is_err());
        assert!(softmax_t(&Tensor::zeros(&[1, 2]), -1.0, &mut CostCounter::new()).is_err());
    }

    #[test]
    fn argmax_takes_first_maximum() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, -1.0]), 1);
    }
}
