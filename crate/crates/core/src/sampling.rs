//! Frame-index samplers.
//!
//! Every sampler returns `k` strictly increasing indices into a clip of `T`
//! frames and is a pure function of its arguments and the caller's rng.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::SslRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingStrategy {
    Uniform,
    SegmentRandom,
    LongShort,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingSpec {
    pub strategy: SamplingStrategy,
    pub frames_per_view: usize,
    /// Window length for `long_short`; defaults to `ceil(T/4)` clamped to `[k, T]`.
    #[serde(default)]
    pub short_window: Option<usize>,
    pub seed: u64,
}

impl SamplingSpec {
    pub fn new(strategy: SamplingStrategy, frames_per_view: usize, seed: u64) -> Self {
        Self {
            strategy,
            frames_per_view,
            short_window: None,
            seed,
        }
    }

    pub fn validate(&self, clip_len: usize) -> Result<()> {
        if self.frames_per_view == 0 {
            return invalid("frames_per_view must be >= 1");
        }
        check_count(clip_len, self.frames_per_view)?;
        if self.strategy == SamplingStrategy::LongShort {
            let w = self.window_for(clip_len);
            if w > clip_len || w < self.frames_per_view {
                return invalid(format!(
                    "short window {w} must lie in [{}, {clip_len}]",
                    self.frames_per_view
                ));
            }
        }
        Ok(())
    }

    pub fn window_for(&self, clip_len: usize) -> usize {
        self.short_window
            .unwrap_or_else(|| default_short_window(clip_len, self.frames_per_view))
    }

    /// One view under this spec. For `long_short` this is the short view.
    pub fn sample(&self, clip_len: usize, rng: &mut SslRng) -> Result<Vec<usize>> {
        let k = self.frames_per_view;
        match self.strategy {
            SamplingStrategy::Uniform => uniform_sample(clip_len, k),
            SamplingStrategy::SegmentRandom => segment_random_sample(clip_len, k, rng),
            SamplingStrategy::LongShort => {
                Ok(long_short_sample(clip_len, k, self.window_for(clip_len), rng)?.1)
            }
        }
    }
}

/// `ceil(T/4)` clamped to at least `k` and at most `T`.
pub fn default_short_window(clip_len: usize, k: usize) -> usize {
    clip_len.div_ceil(4).max(k).min(clip_len)
}

fn check_count(clip_len: usize, k: usize) -> Result<()> {
    if k == 0 || k > clip_len {
        return invalid(format!("cannot sample {k} frames from a clip of {clip_len}"));
    }
    Ok(())
}

/// Segment centres: `floor((i + 0.5) * T / k)`.
pub fn uniform_sample(clip_len: usize, k: usize) -> Result<Vec<usize>> {
    check_count(clip_len, k)?;
    // (2i + 1) T / 2k in exact integer arithmetic.
    Ok((0..k).map(|i| (2 * i + 1) * clip_len / (2 * k)).collect())
}

/// Bounds of segment `i` of `k`: `[floor(iT/k), floor((i+1)T/k))`.
pub fn segment_bounds(clip_len: usize, k: usize, i: usize) -> (usize, usize) {
    (i * clip_len / k, (i + 1) * clip_len / k)
}

/// One uniformly drawn index inside each of `k` contiguous segments.
pub fn segment_random_sample(clip_len: usize, k: usize, rng: &mut SslRng) -> Result<Vec<usize>> {
    check_count(clip_len, k)?;
    Ok((0..k)
        .map(|i| {
            let (lo, hi) = segment_bounds(clip_len, k, i);
            rng.random_range(lo..hi)
        })
        .collect())
}

/// Uniform frames under the canonical view and a randomly sampled view of the same clip.
pub fn dual_temporal_views(clip_len: usize, k: usize, rng: &mut SslRng) -> Result<(Vec<usize>, Vec<usize>)> {
    Ok((
        uniform_sample(clip_len, k)?,
        segment_random_sample(clip_len, k, rng)?,
    ))
}

/// Whole-clip uniform view plus a uniform view of a random window of length `window`.
pub fn long_short_sample(
    clip_len: usize,
    k: usize,
    window: usize,
    rng: &mut SslRng,
) -> Result<(Vec<usize>, Vec<usize>)> {
    check_count(clip_len, k)?;
    if window < k || window > clip_len {
        return invalid(format!("short window {window} must lie in [{k}, {clip_len}]"));
    }
    let long = uniform_sample(clip_len, k)?;
    let start = rng.random_range(0..=clip_len - window);
    let short = uniform_sample(window, k)?
        .into_iter()
        .map(|i| start + i)
        .collect();
    Ok((long, short))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    #[test]
    fn uniform_examples() {
        assert_eq!(uniform_sample(8, 4).unwrap(), vec![1, 3, 5, 7]);
        assert_eq!(uniform_sample(5, 5).unwrap(), vec![0, 1, 2, 3, 4]);
        assert_eq!(uniform_sample(12, 3).unwrap(), vec![2, 6, 10]);
        assert!(uniform_sample(3, 4).is_err());
        assert!(uniform_sample(3, 0).is_err());
    }

    #[test]
    fn segment_random_examples() {
        let mut rng = seeded(1);
        assert_eq!(segment_random_sample(6, 6, &mut rng).unwrap(), vec![0, 1, 2, 3, 4, 5]);
        for _ in 0..100 {
            let idx = segment_random_sample(12, 3, &mut rng).unwrap();
            for (i, &v) in idx.iter().enumerate() {
                assert!((4 * i..=4 * i + 3).contains(&v));
            }
        }
        let a = segment_random_sample(40, 7, &mut seeded(9)).unwrap();
        let b = segment_random_sample(40, 7, &mut seeded(9)).unwrap();
        assert_eq!(a, b);
        assert!(segment_random_sample(2, 3, &mut rng).is_err());
    }

    #[test]
    fn segment_random_covers_every_admissible_index() {
        let mut rng = seeded(2024);
        let mut seen = [false; 12];
        for _ in 0..10_000 {
            for i in segment_random_sample(12, 3, &mut rng).unwrap() {
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn dual_view_examples() {
        let mut rng = seeded(3);
        let (a, b) = dual_temporal_views(4, 4, &mut rng).unwrap();
        assert_eq!(a, vec![0, 1, 2, 3]);
        assert_eq!(b, vec![0, 1, 2, 3]);
        let (a, b) = dual_temporal_views(8, 4, &mut rng).unwrap();
        assert_eq!(a, vec![1, 3, 5, 7]);
        assert_eq!(b.len(), 4);
    }

    #[test]
    fn long_short_examples() {
        let mut rng = seeded(4);
        let (long, short) = long_short_sample(64, 8, 16, &mut rng).unwrap();
        assert_eq!(long, vec![4, 12, 20, 28, 36, 44, 52, 60]);
        let start = short[0] - 1;
        assert!(short.iter().all(|&i| i >= start && i < start + 16));
        let (_, full) = long_short_sample(16, 4, 16, &mut rng).unwrap();
        assert_eq!(full, uniform_sample(16, 4).unwrap());
        assert!(long_short_sample(16, 4, 3, &mut rng).is_err());
        assert!(long_short_sample(16, 4, 17, &mut rng).is_err());
    }

    #[test]
    fn spec_defaults_and_validation() {
        let spec = SamplingSpec::new(SamplingStrategy::LongShort, 8, 0);
        assert_eq!(spec.window_for(64), 16);
        assert_eq!(spec.window_for(16), 8);
        assert!(spec.validate(64).is_ok());
        assert!(spec.validate(4).is_err());
        let mut bad = spec.clone();
        bad.short_window = Some(4);
        assert!(bad.validate(64).is_err());
    }

    proptest! {
        #[test]
        fn samplers_emit_sorted_in_range_indices(t in 1usize..200, k_frac in 0.0f64..1.0, seed: u64) {
            let k = ((t as f64 * k_frac) as usize).clamp(1, t);
            let mut rng = seeded(seed);
            let w = default_short_window(t, k);
            let views = [
                uniform_sample(t, k).unwrap(),
                segment_random_sample(t, k, &mut rng).unwrap(),
                long_short_sample(t, k, w, &mut rng).unwrap().0,
                long_short_sample(t, k, w, &mut rng).unwrap().1,
            ];
            for v in views {
                prop_assert_eq!(v.len(), k);
                prop_assert!(v.windows(2).all(|p| p[0] < p[1]));
                prop_assert!(v.iter().all(|&i| i < t));
            }
            let again = segment_random_sample(t, k, &mut seeded(seed)).unwrap();
            prop_assert_eq!(again, segment_random_sample(t, k, &mut seeded(seed)).unwrap());
        }
    }
}
