//! Cutoff selection with a domain classifier.
//!
//! For each candidate wavelength both domains are reduced to their low band
//! and summarised per frame by a log binned isotropic spectrum. A ridge
//! classifier is fitted on part of the frames and scored on the rest; the
//! chosen cutoff is the smallest wavelength at which the domains can no
//! longer be told apart. The spectrum of the low band equals the spectrum of
//! the raw frame restricted to the kept modes, so each frame is transformed
//! only once.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

use crate::csv::CsvTable;
use crate::error::{Error, Result};
use crate::fields::FieldStack;
use crate::rng::stream_rng;
use crate::spectral::{isotropic_wavenumbers, Fft2, SpectralCutoff};

pub const MIN_FRAMES: usize = 20;
pub const DEFAULT_THRESHOLD: f64 = 0.55;
const N_BINS: usize = 32;
const VALIDATION_FRACTION: f64 = 0.3;
const RIDGE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CutoffScan {
    /// Candidate wavelengths in km, descending.
    pub candidates: Vec<f64>,
    /// Held-out accuracy per candidate.
    pub accuracies: Vec<f64>,
    pub selected: f64,
    /// Set when no candidate reached the threshold and the largest one was
    /// chosen as a fallback.
    pub fallback: bool,
}

impl CutoffScan {
    pub fn to_csv(&self) -> CsvTable {
        let mut table = CsvTable::new(&["wavelength_km", "accuracy", "selected"]);
        for (c, a) in self.candidates.iter().zip(&self.accuracies) {
            table.push([c.to_string(), a.to_string(), ((*c == self.selected) as u8).to_string()]);
        }
        table
    }
}

/// Squared DFT magnitudes of every (frame, variable) plane.
fn frame_powers(stack: &FieldStack, n_frames: usize) -> Vec<Vec<f64>> {
    let fft = Fft2::for_grid(stack.grid());
    (0..n_frames)
        .map(|t| {
            let mut all = Vec::with_capacity(stack.n_vars() * stack.n_cells());
            for v in 0..stack.n_vars() {
                all.extend(fft.forward_real(stack.slice(t, v)).iter().map(|z| z.norm_sqr()));
            }
            all
        })
        .collect()
}

/// Log mean power per (variable, bin) over the modes kept by `cut`.
fn features(powers: &[f64], k: &[f64], bin_width: f64, kc: f64, n_vars: usize) -> Vec<f64> {
    let n_cells = k.len();
    let mut out = Vec::new();
    for v in 0..n_vars {
        let mut sums = vec![0.0; N_BINS];
        let mut counts = vec![0usize; N_BINS];
        for (i, &kk) in k.iter().enumerate().skip(1) {
            if kk <= kc {
                let b = ((kk / bin_width) as usize).min(N_BINS - 1);
                sums[b] += powers[v * n_cells + i];
                counts[b] += 1;
            }
        }
        for b in 0..N_BINS {
            if counts[b] > 0 {
                out.push((sums[b] / counts[b] as f64 + 1e-300).ln());
            }
        }
    }
    out
}

/// Held-out accuracy of a ridge classifier; a score of exactly zero counts
/// as half a hit.
fn classify(train_x: &[Vec<f64>], train_y: &[f64], test_x: &[Vec<f64>], test_y: &[f64]) -> f64 {
    let d = train_x[0].len();
    if d == 0 {
        return 0.5;
    }
    let n = train_x.len();
    let mut mean = vec![0.0; d];
    for row in train_x {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x / n as f64;
        }
    }
    let mut sd = vec![0.0; d];
    for row in train_x {
        for ((s, x), m) in sd.iter_mut().zip(row).zip(&mean) {
            *s += (x - m) * (x - m) / n as f64;
        }
    }
    let sd: Vec<f64> = sd.iter().map(|s| if *s > 0.0 { s.sqrt() } else { 1.0 }).collect();
    let scale = |row: &[f64]| -> Vec<f64> {
        row.iter().zip(&mean).zip(&sd).map(|((x, m), s)| (x - m) / s).collect()
    };
    let x = DMatrix::from_fn(n, d, |i, j| scale(&train_x[i])[j]);
    let y_mean = train_y.iter().sum::<f64>() / n as f64;
    let y = DVector::from_iterator(n, train_y.iter().map(|v| v - y_mean));
    let gram = x.transpose() * &x + DMatrix::identity(d, d) * (RIDGE * n as f64);
    let rhs = x.transpose() * y;
    let w = match gram.cholesky() {
        Some(c) => c.solve(&rhs),
        None => return 0.5,
    };
    let mut hits = 0.0;
    for (row, &label) in test_x.iter().zip(test_y) {
        let z = DVector::from_vec(scale(row));
        let score = w.dot(&z) + y_mean;
        hits += if score == 0.0 {
            0.5
        } else if score.signum() == label {
            1.0
        } else {
            0.0
        };
    }
    hits / test_x.len() as f64
}

/// Scans `candidates` and returns per-candidate accuracies and the choice.
///
/// Train and validation frames are split by time index, and the same time
/// indices are used for both domains.
pub fn select_cutoff(
    source: &FieldStack,
    target: &FieldStack,
    candidates: &[f64],
    threshold: f64,
    seed: u64,
) -> Result<CutoffScan> {
    source.check_same_space(target)?;
    if !source.is_fully_valid() {
        return Err(Error::MaskUnsupported("cutoff selection"));
    }
    if candidates.is_empty() {
        return Err(Error::Spec("no cutoff candidates".into()));
    }
    let n_frames = source.n_times().min(target.n_times());
    if n_frames < MIN_FRAMES {
        return Err(Error::InsufficientData(format!(
            "cutoff selection needs {MIN_FRAMES} frames per domain, got {} and {}",
            source.n_times(),
            target.n_times()
        )));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sorted.dedup();
    for &c in &sorted {
        SpectralCutoff::new(c)?.check_resolvable(source.grid())?;
    }

    let k = isotropic_wavenumbers(source.grid());
    let k_top = k.iter().cloned().fold(0.0, f64::max);
    let bin_width = k_top / N_BINS as f64;
    let src_pow = frame_powers(source, n_frames);
    let tgt_pow = frame_powers(target, n_frames);

    let mut order: Vec<usize> = (0..n_frames).collect();
    order.shuffle(&mut stream_rng(seed, 0));
    let n_val = ((n_frames as f64 * VALIDATION_FRACTION).round() as usize).clamp(1, n_frames - 1);
    let (val, train) = order.split_at(n_val);

    let mut accuracies = Vec::with_capacity(sorted.len());
    for &c in &sorted {
        let kc = SpectralCutoff::new(c)?.wavenumber() * (1.0 + 1e-9);
        let feat = |p: &Vec<f64>| features(p, &k, bin_width, kc, source.n_vars());
        let build = |idx: &[usize]| {
            let mut xs = Vec::with_capacity(2 * idx.len());
            let mut ys = Vec::with_capacity(2 * idx.len());
            for &t in idx {
                xs.push(feat(&src_pow[t]));
                ys.push(-1.0);
                xs.push(feat(&tgt_pow[t]));
                ys.push(1.0);
            }
            (xs, ys)
        };
        let (tx, ty) = build(train);
        let (vx, vy) = build(val);
        let acc = classify(&tx, &ty, &vx, &vy);
        log::debug!("cutoff {c} km: held-out accuracy {acc:.3}");
        accuracies.push(acc);
    }

    let qualifying = sorted
        .iter()
        .zip(&accuracies)
        .filter(|(_, &a)| a <= threshold)
        .map(|(&c, _)| c)
        .last();
    let (selected, fallback) = match qualifying {
        Some(c) => (c, false),
        None => (sorted[0], true),
    };
    Ok(CutoffScan {
        candidates: sorted,
        accuracies,
        selected,
        fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{GridSpec, WIND_UNITS};
    use crate::rng::normal_vec;

    fn noise(n: usize, times: usize, seed: u64, amp: f64) -> FieldStack {
        let g = GridSpec::regular_km(n, n, 25.0, 25.0, 45.0, 5.0).unwrap();
        FieldStack::new(
            g,
            vec!["sfcWind".into()],
            vec![WIND_UNITS.into()],
            (0..times as i64).collect(),
            normal_vec(seed, 0, times * n * n).iter().map(|x| amp * x).collect(),
            vec![true; n * n],
        )
        .unwrap()
    }

    #[test]
    fn identical_domains_are_indistinguishable() {
        let s = noise(32, 24, 1, 1.0);
        let scan = select_cutoff(&s, &s, &[1200.0, 600.0, 300.0], 0.55, 3).unwrap();
        assert!(scan.accuracies.iter().all(|&a| a == 0.5));
        assert_eq!(scan.selected, 300.0);
        assert!(!scan.fallback);
    }

    #[test]
    fn distinct_domains_fall_back_to_largest() {
        let a = noise(32, 24, 1, 1.0);
        let b = noise(32, 24, 2, 3.0);
        let scan = select_cutoff(&a, &b, &[300.0, 600.0], 0.55, 3).unwrap();
        assert_eq!(scan.candidates, vec![600.0, 300.0]);
        assert!(scan.fallback);
        assert_eq!(scan.selected, 600.0);
        assert!(scan.accuracies.iter().all(|&a| a > 0.9));
    }

    #[test]
    fn single_candidate_and_frame_count() {
        let s = noise(16, 20, 4, 1.0);
        let scan = select_cutoff(&s, &s, &[200.0], 0.55, 0).unwrap();
        assert_eq!(scan.selected, 200.0);
        assert_eq!(scan.accuracies.len(), 1);
        let short = noise(16, 19, 4, 1.0);
        assert!(matches!(
            select_cutoff(&short, &short, &[200.0], 0.55, 0),
            Err(Error::InsufficientData(_))
        ));
    }
}
