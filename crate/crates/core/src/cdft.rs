//! CDF-t bias correction.
//!
//! Empirical CDFs are continuous and piecewise linear through the order
//! statistics (`F(x_(i)) = i / (n - 1)`), so the quantile function is the
//! usual linear interpolation between order statistics and is the exact
//! inverse of `F` on the sample range. Outside the range both are clamped,
//! which makes the transfer constant beyond the observed extremes.
//!
//! Before the transfer, historical and future source samples are shifted by
//! `mean(obs_hist) - mean(src_hist)` so that large location biases do not
//! push most future values outside the historical ranges.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::{calendar, FieldStack};

pub const MIN_SAMPLES: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Degenerate("empirical CDF of an empty sample".into()));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::Degenerate("empirical CDF of non-finite samples".into()));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(Self { sorted })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    pub fn is_constant(&self) -> bool {
        self.sorted[0] == self.sorted[self.sorted.len() - 1]
    }

    /// Non-decreasing, 0 below the minimum and 1 at and above the maximum.
    pub fn cdf(&self, x: f64) -> f64 {
        let n = self.sorted.len();
        if n == 1 {
            return if x < self.sorted[0] { 0.0 } else { 1.0 };
        }
        if x < self.sorted[0] {
            return 0.0;
        }
        // last index with sorted[j] <= x
        let j = self.sorted.partition_point(|&v| v <= x) - 1;
        if j == n - 1 {
            return 1.0;
        }
        let (x0, x1) = (self.sorted[j], self.sorted[j + 1]);
        let w = if x1 > x0 { (x - x0) / (x1 - x0) } else { 0.0 };
        (j as f64 + w) / (n - 1) as f64
    }

    /// Linear interpolation between order statistics, `p` clamped to [0, 1].
    pub fn quantile(&self, p: f64) -> f64 {
        let n = self.sorted.len();
        let h = p.clamp(0.0, 1.0) * (n - 1) as f64;
        let lo = h.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        let w = h - lo as f64;
        if w == 0.0 {
            self.sorted[lo]
        } else {
            self.sorted[lo] + w * (self.sorted[hi] - self.sorted[lo])
        }
    }
}

/// `F_obs^-1(F_src(x))` for each sample.
pub fn quantile_map(x: &[f64], f_src: &EmpiricalCdf, f_obs: &EmpiricalCdf) -> Vec<f64> {
    x.iter().map(|&v| f_obs.quantile(f_src.cdf(v))).collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Outcome of correcting one block of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCorrection {
    pub values: Vec<f64>,
    /// The source was constant and a mean shift was applied instead.
    pub mean_shift_fallback: bool,
}

/// CDF-t on one block: the future observed CDF is estimated as
/// `F_oh(F_sh^-1(F_sf(x)))` and future source values are mapped through
/// `F_sf` and its inverse.
pub fn cdft_samples(obs_hist: &[f64], src_hist: &[f64], src_fut: &[f64]) -> Result<BlockCorrection> {
    for (name, xs) in [("obs_hist", obs_hist), ("src_hist", src_hist), ("src_fut", src_fut)] {
        if xs.len() < MIN_SAMPLES {
            return Err(Error::InsufficientData(format!(
                "{name} has {} samples, CDF-t needs {MIN_SAMPLES}",
                xs.len()
            )));
        }
    }
    let shift = mean(obs_hist) - mean(src_hist);
    let sh: Vec<f64> = src_hist.iter().map(|x| x + shift).collect();
    let sf: Vec<f64> = src_fut.iter().map(|x| x + shift).collect();
    let f_oh = EmpiricalCdf::new(obs_hist)?;
    let f_sh = EmpiricalCdf::new(&sh)?;
    let f_sf = EmpiricalCdf::new(&sf)?;
    if f_sh.is_constant() || f_sf.is_constant() {
        return Ok(BlockCorrection {
            values: sf,
            mean_shift_fallback: true,
        });
    }
    let values = sf
        .iter()
        .map(|&y| f_sf.quantile(f_sh.cdf(f_oh.quantile(f_sf.cdf(y)))))
        .collect();
    Ok(BlockCorrection {
        values,
        mean_shift_fallback: false,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CdftConfig {
    /// Correct each calendar month separately.
    pub by_month: bool,
}

/// Time indices grouped into blocks (one block, or one per calendar month).
fn blocks(times: &[i64], by_month: bool) -> Vec<Vec<usize>> {
    if !by_month {
        return vec![(0..times.len()).collect()];
    }
    let mut out = vec![Vec::new(); 12];
    for (i, &t) in times.iter().enumerate() {
        out[calendar::month(t) as usize - 1].push(i);
    }
    out
}

/// Per-cell, per-variable CDF-t of `src_fut` towards `obs_hist`.
pub fn cdft_correct(
    obs_hist: &FieldStack,
    src_hist: &FieldStack,
    src_fut: &FieldStack,
    cfg: &CdftConfig,
) -> Result<FieldStack> {
    obs_hist.check_same_space(src_hist)?;
    obs_hist.check_same_space(src_fut)?;
    let b_obs = blocks(obs_hist.times(), cfg.by_month);
    let b_sh = blocks(src_hist.times(), cfg.by_month);
    let b_sf = blocks(src_fut.times(), cfg.by_month);
    let cells = obs_hist.valid_cells();
    let n_vars = obs_hist.n_vars();

    let jobs: Vec<(usize, usize)> = (0..n_vars).flat_map(|v| cells.iter().map(move |&c| (v, c))).collect();
    let results = jobs
        .par_iter()
        .map(|&(v, c)| {
            let oh = obs_hist.series(v, c);
            let sh = src_hist.series(v, c);
            let sf = src_fut.series(v, c);
            let mut out = vec![0.0; sf.len()];
            let mut fallback = false;
            for ((bo, bh), bf) in b_obs.iter().zip(&b_sh).zip(&b_sf) {
                if bf.is_empty() {
                    continue;
                }
                let pick = |xs: &[f64], idx: &[usize]| idx.iter().map(|&i| xs[i]).collect::<Vec<_>>();
                let corr = cdft_samples(&pick(&oh, bo), &pick(&sh, bh), &pick(&sf, bf))?;
                fallback |= corr.mean_shift_fallback;
                for (&i, x) in bf.iter().zip(corr.values) {
                    out[i] = x;
                }
            }
            Ok((out, fallback))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut corrected = src_fut.clone();
    let mut n_fallback = 0;
    for (&(v, c), (series, fallback)) in jobs.iter().zip(results) {
        n_fallback += fallback as usize;
        for (t, x) in series.into_iter().enumerate() {
            corrected.slice_mut(t, v)[c] = x;
        }
    }
    if n_fallback > 0 {
        log::warn!("{n_fallback} cell/variable blocks had a constant source; used a mean-shift correction");
    }
    Ok(corrected)
}
