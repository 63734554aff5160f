use rand::Rng;

use crate::mixture::MixtureWeights;
use crate::scalar::Scalar;

/// Inverted-dropout factors: 0 with probability `rate`, else `1/(1-rate)`.
pub fn dropout_factors<T: Scalar, R: Rng + ?Sized>(n: usize, rate: f64, rng: &mut R) -> Vec<T> {
    let keep = T::of(1.0 / (1.0 - rate));
    (0..n)
        .map(|_| if rng.gen_bool(rate) { T::zero() } else { keep })
        .collect()
}

/// Inverted dropout on a vector; the identity at evaluation or rate 0.
pub fn standard_dropout<T: Scalar, R: Rng + ?Sized>(
    h: &[T],
    rate: f64,
    rng: &mut R,
    training: bool,
) -> Vec<T> {
    if !training || rate == 0.0 {
        return h.to_vec();
    }
    dropout_factors::<T, R>(h.len(), rate, rng)
        .into_iter()
        .zip(h)
        .map(|(f, &x)| f * x)
        .collect()
}

/// Draws whether one training example drops its count columns. No random
/// number is consumed at rate 0.
pub fn block_dropped<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> bool {
    rate > 0.0 && rng.gen_bool(rate)
}

/// With probability `rate`, zeroes the first `count_columns` weights and
/// renormalizes the identity segment.
pub fn block_dropout_mask<T: Scalar, R: Rng + ?Sized>(
    lambda: &MixtureWeights<T>,
    count_columns: usize,
    rate: f64,
    rng: &mut R,
) -> MixtureWeights<T> {
    if !block_dropped(rate, rng) {
        return lambda.clone();
    }
    let v = lambda.values();
    let rest: T = v[count_columns..].iter().copied().sum();
    let mut out = vec![T::zero(); v.len()];
    if rest > T::zero() {
        for (o, &x) in out[count_columns..].iter_mut().zip(&v[count_columns..]) {
            *o = x / rest;
        }
    } else {
        let n = T::of((v.len() - count_columns) as f64);
        out[count_columns..]
            .iter_mut()
            .for_each(|o| *o = T::one() / n);
    }
    MixtureWeights::new_unchecked(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dropped_block_rescales_identity_segment() {
        let l = MixtureWeights::new(vec![0.2, 0.3, 0.25, 0.25]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut seen = false;
        for _ in 0..20 {
            let m = block_dropout_mask(&l, 2, 0.5, &mut rng);
            if m.values()[0] == 0.0 {
                assert_eq!(m.values(), &[0.0, 0.0, 0.5, 0.5]);
                seen = true;
            } else {
                assert_eq!(m, l);
            }
        }
        assert!(seen);
    }

    #[test]
    fn rate_zero_is_identity_and_draws_nothing() {
        let l = MixtureWeights::new(vec![0.5, 0.5]).unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(1);
        let b = a.clone();
        for _ in 0..100 {
            assert_eq!(block_dropout_mask(&l, 1, 0.0, &mut a), l);
        }
        assert_eq!(a, b);
    }

    #[test]
    fn block_drop_frequency() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let drops = (0..10_000).filter(|_| block_dropped(0.5, &mut rng)).count();
        assert!((4800..=5200).contains(&drops), "{drops}");
    }

    #[test]
    fn standard_dropout_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = vec![1.0f64, -2.0, 3.0];
        assert_eq!(standard_dropout(&h, 0.0, &mut rng, true), h);
        assert_eq!(standard_dropout(&h, 0.5, &mut rng, false), h);
        let ones = vec![1.0f64; 10_000];
        let mean = standard_dropout(&ones, 0.5, &mut rng, true)
            .iter()
            .sum::<f64>()
            / 10_000.0;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
    }
}
