use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::space::Coalition;

/// Coalition proposal distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Every subset equally likely (independent fair inclusion bits).
    Uniform,
    /// Size uniform on `0..=M`, then a uniform subset of that size.
    #[default]
    Stratified,
}

impl core::str::FromStr for Mode {
    type Err = &'static str;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(Mode::Uniform),
            "stratified" => Ok(Mode::Stratified),
            _ => Err("mode must be `uniform` or `stratified`"),
        }
    }
}

impl core::fmt::Display for Mode {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Mode::Uniform => "uniform",
            Mode::Stratified => "stratified",
        })
    }
}

pub fn sample_coalition<R: Rng + ?Sized>(rng: &mut R, mode: Mode, total: usize) -> Coalition {
    match mode {
        Mode::Uniform => {
            let mut members = Vec::new();
            let mut base = 0;
            while base < total {
                let width = (total - base).min(64);
                let word = rng.next_u64();
                members.extend((0..width).filter(|b| word >> b & 1 == 1).map(|b| base + b));
                base += width;
            }
            Coalition::from_sorted(members)
        }
        Mode::Stratified => {
            let size = rng.gen_range(0..=total);
            let mut pool: Vec<usize> = (0..total).collect();
            for k in 0..size {
                let pick = rng.gen_range(k..total);
                pool.swap(k, pick);
            }
            pool.truncate(size);
            pool.sort_unstable();
            Coalition::from_sorted(pool)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_subsets_equiprobable() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0usize; 4];
        for _ in 0..4096 {
            counts[sample_coalition(&mut rng, Mode::Uniform, 2).mask().unwrap() as usize] += 1;
        }
        for c in counts {
            assert!((c as f64 / 4096.0 - 0.25).abs() <= 0.03, "{counts:?}");
        }
        // chi-square with 3 dof, 0.999 quantile 16.27
        let chi: f64 = counts.iter().map(|&c| (c as f64 - 1024.0) * (c as f64 - 1024.0) / 1024.0).sum();
        assert!(chi < 16.27, "chi2 = {chi}");
    }

    #[test]
    fn stratified_sizes_equiprobable() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut counts = [0usize; 5];
        for _ in 0..4096 {
            counts[sample_coalition(&mut rng, Mode::Stratified, 4).len()] += 1;
        }
        for c in counts {
            assert!((c as f64 / 4096.0 - 0.2).abs() <= 0.03, "{counts:?}");
        }
    }

    #[test]
    fn stratified_subset_uniform_within_size() {
        // size-2 subsets of 4 features: six, each 1/6 of the size-2 draws
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = std::collections::BTreeMap::new();
        let mut total = 0;
        for _ in 0..30_000 {
            let c = sample_coalition(&mut rng, Mode::Stratified, 4);
            if c.len() == 2 {
                *counts.entry(c.mask().unwrap()).or_insert(0usize) += 1;
                total += 1;
            }
        }
        assert_eq!(counts.len(), 6);
        for &c in counts.values() {
            assert!((c as f64 / total as f64 - 1.0 / 6.0).abs() < 0.02);
        }
    }

    #[test]
    fn wide_universe_stays_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for mode in [Mode::Uniform, Mode::Stratified] {
            for _ in 0..100 {
                let c = sample_coalition(&mut rng, mode, 70);
                assert!(c.max_index().is_none_or(|k| k < 70));
            }
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        for mode in [Mode::Uniform, Mode::Stratified] {
            let draw = |seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..50).map(|_| sample_coalition(&mut rng, mode, 9)).collect::<Vec<_>>()
            };
            assert_eq!(draw(9), draw(9));
            assert_ne!(draw(9), draw(10));
        }
    }
}
