//! Small numeric helpers and deterministic RNG stream derivation.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derive a child seed from a parent seed, a purpose tag, and an index.
///
/// Streams for different (tag, idx) pairs are independent for all practical
/// purposes, and the derivation is stable across platforms, so any component
/// that consumes randomness can be replayed in isolation.
pub fn substream(seed: u64, tag: &str, idx: u64) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for &b in tag.as_bytes() {
        h = splitmix(h ^ b as u64);
    }
    splitmix(h ^ idx.wrapping_mul(0xbf58_476d_1ce4_e5b9))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn softplus(x: f64) -> f64 {
    // log1p(exp(x)) with the large-x branch kept exact.
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`softplus`]: returns rho such that softplus(rho) = s, s > 0.
pub fn inv_softplus(s: f64) -> f64 {
    assert!(s > 0.0, "inv_softplus needs a positive argument, got {s}");
    if s > 30.0 {
        s
    } else {
        s.exp_m1().ln()
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn linf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Sample mean and sample standard deviation (n-1 denominator).
/// A single observation yields std 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    assert!(!values.is_empty(), "mean_std over empty slice");
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substreams_differ_by_tag_and_index() {
        let a = substream(7, "env", 0);
        let b = substream(7, "env", 1);
        let c = substream(7, "dropout", 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, substream(7, "env", 0));
    }

    #[test]
    fn softplus_roundtrip() {
        for &s in &[1e-3, 0.01, 0.5, 1.0, 2.0, 40.0] {
            let r = inv_softplus(s);
            assert!((softplus(r) - s).abs() < 1e-12 * s.max(1.0), "s={s}");
        }
    }

    #[test]
    fn mean_std_matches_hand_values() {
        let (m, s) = mean_std(&[0.2, 0.4]);
        assert!((m - 0.3).abs() < 1e-12);
        assert!((s - 0.1414213562373095).abs() < 1e-12);
        let (m1, s1) = mean_std(&[0.5]);
        assert_eq!(m1, 0.5);
        assert_eq!(s1, 0.0);
    }
}
