//! Weighted choice between datasets: each dataset is drawn with probability
//! proportional to `priority * size`.

use rand::Rng;

use crate::error::SamplerError;

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerWeights {
    pub probabilities: Vec<f64>,
    cumulative: Vec<f64>,
}

/// `datasets` holds `(priority, size)` pairs.
pub fn sampler_probabilities(datasets: &[(f64, usize)]) -> Result<SamplerWeights, SamplerError> {
    if let Some(i) = datasets.iter().position(|(p, _)| !(p.is_finite() && *p >= 0.0)) {
        return Err(SamplerError::Invalid(i));
    }
    let products: Vec<f64> = datasets.iter().map(|(p, n)| p * *n as f64).collect();
    let total: f64 = products.iter().sum();
    if !(total > 0.0) {
        return Err(SamplerError::AllZero);
    }
    let probabilities: Vec<f64> = products.iter().map(|x| x / total).collect();
    let mut acc = 0.0;
    let cumulative = probabilities
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect();
    Ok(SamplerWeights { probabilities, cumulative })
}

/// Index of the drawn dataset. Zero-probability entries are never returned.
pub fn draw_sample<R: Rng + ?Sized>(weights: &SamplerWeights, rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * weights.cumulative.last().copied().unwrap_or(1.0);
    let i = weights.cumulative.partition_point(|c| *c <= u);
    let mut i = i.min(weights.probabilities.len() - 1);
    while weights.probabilities[i] == 0.0 && i > 0 {
        i -= 1;
    }
    i
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn direct_formula() {
        let w = sampler_probabilities(&[(1.0, 100), (1.0, 300)]).unwrap();
        assert!((w.probabilities[0] - 0.25).abs() < 1e-15 && (w.probabilities[1] - 0.75).abs() < 1e-15);
        let s = sampler_probabilities(&[(7.0, 100), (7.0, 300)]).unwrap();
        assert_eq!(s.probabilities, w.probabilities);
        assert_eq!(sampler_probabilities(&[(3.0, 5)]).unwrap().probabilities, vec![1.0]);
        assert_eq!(sampler_probabilities(&[(0.0, 5), (2.0, 0)]), Err(SamplerError::AllZero));
        assert_eq!(sampler_probabilities(&[(1.0, 5), (-2.0, 1)]), Err(SamplerError::Invalid(1)));
    }

    #[test]
    fn zero_weight_entries_are_never_drawn() {
        let w = sampler_probabilities(&[(0.0, 10), (1.0, 10), (0.0, 10)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!((0..10_000).all(|_| draw_sample(&w, &mut rng) == 1));
    }
}
