use rand::Rng;

/// Independent Bernoulli selection of eligible subjects.
///
/// One uniform is drawn for every subject, eligible or not, so the stream
/// advances by exactly `N` draws whatever the eligibility pattern.
pub fn poisson_sample<R: Rng + ?Sized>(probs: &[f64], eligible: &[bool], rng: &mut R) -> Vec<bool> {
    assert_eq!(probs.len(), eligible.len(), "probs and eligibility lengths differ");
    probs
        .iter()
        .zip(eligible)
        .map(|(&p, &e)| {
            let u: f64 = rng.gen();
            e && u < p
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn extremes() {
        let mut rng = stream(1, &[0]);
        assert!(poisson_sample(&[1.0; 50], &[true; 50], &mut rng).iter().all(|&b| b));
        assert!(!poisson_sample(&[0.0; 50], &[true; 50], &mut rng).iter().any(|&b| b));
        assert!(!poisson_sample(&[1.0; 50], &[false; 50], &mut rng).iter().any(|&b| b));
    }

    #[test]
    fn binomial_concentration() {
        let n = 10_000;
        let mut rng = stream(2024, &[1]);
        let got = poisson_sample(&vec![0.5; n], &vec![true; n], &mut rng);
        let count = got.iter().filter(|&&b| b).count() as f64;
        assert!((count - 5000.0).abs() <= 4.0 * (n as f64 * 0.25).sqrt(), "{count}");
    }
}
