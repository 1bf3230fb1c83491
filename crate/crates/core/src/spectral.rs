//! Fourier-domain scale separation on periodic regular grids.
//!
//! Wavenumbers are in cycles per km (`k = 1 / wavelength`). The low-pass
//! mask is sharp and isotropic: a mode is kept when
//! `sqrt(kx^2 + ky^2) <= 1 / wavelength_km`. No window is applied, so
//! non-periodic fields leak energy across the cutoff at the domain edges.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::csv::CsvTable;
use crate::error::{Error, Result};
use crate::fields::{FieldStack, GridSpec};
use crate::scale::{Decomposition, Separator};

/// Relative slack when comparing a mode's wavenumber with the cutoff, so
/// modes sitting exactly on the cutoff are kept regardless of rounding.
const CUTOFF_SLACK: f64 = 1e-9;

/// Cutoff wavelength separating shared large scales from the residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralCutoff {
    wavelength_km: f64,
}

impl SpectralCutoff {
    pub fn new(wavelength_km: f64) -> Result<Self> {
        if !(wavelength_km > 0.0) || !wavelength_km.is_finite() {
            return Err(Error::Spec(format!(
                "cutoff wavelength must be positive, got {wavelength_km}"
            )));
        }
        Ok(Self { wavelength_km })
    }

    pub fn wavelength_km(&self) -> f64 {
        self.wavelength_km
    }

    pub fn wavenumber(&self) -> f64 {
        1.0 / self.wavelength_km
    }

    /// The cutoff must be longer than twice the coarsest grid spacing.
    pub fn check_resolvable(&self, grid: &GridSpec) -> Result<()> {
        let limit = 2.0 * grid.dx_km().max(grid.dy_km());
        if self.wavelength_km > limit {
            Ok(())
        } else {
            Err(Error::Spec(format!(
                "cutoff {} km is not resolvable on a grid with Nyquist wavelength {limit} km",
                self.wavelength_km
            )))
        }
    }
}

/// `fftfreq`: sample frequencies in cycles per unit of `spacing`.
pub fn fftfreq(n: usize, spacing: f64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let i = if i <= (n - 1) / 2 { i as f64 } else { i as f64 - n as f64 };
            i / (n as f64 * spacing)
        })
        .collect()
}

/// Isotropic wavenumber of every DFT mode in row-major `[ky][kx]` order.
pub fn isotropic_wavenumbers(grid: &GridSpec) -> Vec<f64> {
    let ky = fftfreq(grid.n_rows(), grid.dy_km());
    let kx = fftfreq(grid.n_cols(), grid.dx_km());
    ky.iter()
        .flat_map(|y| kx.iter().map(move |x| x.hypot(*y)))
        .collect()
}

/// Row/column FFT plans for one grid shape.
pub(crate) struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub(crate) fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    pub(crate) fn for_grid(grid: &GridSpec) -> Self {
        Self::new(grid.n_rows(), grid.n_cols())
    }

    fn run(&self, data: &mut [Complex64], row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
        debug_assert_eq!(data.len(), self.rows * self.cols);
        for r in data.chunks_exact_mut(self.cols) {
            row.process(r);
        }
        let mut buf = vec![Complex64::default(); self.rows];
        for c in 0..self.cols {
            for r in 0..self.rows {
                buf[r] = data[r * self.cols + c];
            }
            col.process(&mut buf);
            for r in 0..self.rows {
                data[r * self.cols + c] = buf[r];
            }
        }
    }

    pub(crate) fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.row_fwd, &self.col_fwd);
    }

    /// Inverse transform including the `1/N` normalisation.
    pub(crate) fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.row_inv, &self.col_inv);
        let scale = 1.0 / data.len() as f64;
        for z in data.iter_mut() {
            *z *= scale;
        }
    }

    pub(crate) fn forward_real(&self, plane: &[f64]) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = plane.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.forward(&mut data);
        data
    }
}

/// Sharp isotropic low-pass of one plane given a keep-mask over modes.
pub(crate) fn filter_plane(fft: &Fft2, plane: &[f64], keep: &[bool]) -> Vec<f64> {
    let mut data = fft.forward_real(plane);
    for (z, &k) in data.iter_mut().zip(keep) {
        if !k {
            *z = Complex64::default();
        }
    }
    fft.inverse(&mut data);
    data.iter().map(|z| z.re).collect()
}

pub(crate) fn lowpass_keep(grid: &GridSpec, cut: &SpectralCutoff) -> Vec<bool> {
    let kc = cut.wavenumber() * (1.0 + CUTOFF_SLACK);
    isotropic_wavenumbers(grid).into_iter().map(|k| k <= kc).collect()
}

fn require_full_mask(stack: &FieldStack, what: &'static str) -> Result<()> {
    if stack.is_fully_valid() {
        Ok(())
    } else {
        Err(Error::MaskUnsupported(what))
    }
}

/// Low-pass component of every `(time, variable)` slice.
pub fn lowpass_component(stack: &FieldStack, cut: &SpectralCutoff) -> Result<FieldStack> {
    require_full_mask(stack, "the Fourier low-pass")?;
    cut.check_resolvable(stack.grid())?;
    let fft = Fft2::for_grid(stack.grid());
    let keep = lowpass_keep(stack.grid(), cut);
    let mut low = stack.clone();
    for t in 0..stack.n_times() {
        for v in 0..stack.n_vars() {
            let filtered = filter_plane(&fft, stack.slice(t, v), &keep);
            low.slice_mut(t, v).copy_from_slice(&filtered);
        }
    }
    Ok(low)
}

/// Splits a fully valid stack into low and high parts with `high = stack - low`.
pub fn lowpass(stack: &FieldStack, cut: &SpectralCutoff) -> Result<Decomposition> {
    let low = lowpass_component(stack, cut)?;
    let high = stack.zip_with(&low, |x, l| x - l)?;
    Ok(Decomposition {
        low,
        high,
        separator: Separator::Fourier(*cut),
    })
}

/// `cuts.len() + 1` bands, coarsest first, summing to the input.
pub fn band_decompose(stack: &FieldStack, cuts: &[SpectralCutoff]) -> Result<Vec<FieldStack>> {
    if cuts.is_empty() {
        return Err(Error::Ordering("at least one cutoff is required".into()));
    }
    if cuts.windows(2).any(|w| w[1].wavelength_km() >= w[0].wavelength_km()) {
        return Err(Error::Ordering(
            "cutoff wavelengths must be strictly descending".into(),
        ));
    }
    let lows = cuts
        .iter()
        .map(|c| lowpass_component(stack, c))
        .collect::<Result<Vec<_>>>()?;
    let mut bands = Vec::with_capacity(cuts.len() + 1);
    bands.push(lows[0].clone());
    for pair in lows.windows(2) {
        bands.push(pair[1].zip_with(&pair[0], |a, b| a - b)?);
    }
    bands.push(stack.zip_with(lows.last().unwrap(), |x, l| x - l)?);
    Ok(bands)
}

/// Zero-padded inverse DFT along one axis: `out[j]` evaluates the
/// trigonometric interpolant of `input` (length `n`) at `j * n / m`.
fn upsample_1d(input: &[Complex64], m: usize, planner: &mut FftPlanner<f64>) -> Vec<Complex64> {
    let n = input.len();
    let mut spec = input.to_vec();
    planner.plan_fft_forward(n).process(&mut spec);
    let mut padded = vec![Complex64::default(); m];
    if m == n {
        padded.copy_from_slice(&spec);
    } else {
        let half = n / 2;
        let positive = (n - 1) / 2; // strictly positive frequencies
        padded[0] = spec[0];
        for k in 1..=positive {
            padded[k] = spec[k];
            padded[m - k] = spec[n - k];
        }
        if n % 2 == 0 {
            // split the Nyquist bin so the interpolant stays real
            padded[half] = spec[half] * 0.5;
            padded[m - half] += spec[half] * 0.5;
        }
    }
    planner.plan_fft_inverse(m).process(&mut padded);
    let scale = 1.0 / n as f64;
    padded.iter().map(|z| z * scale).collect()
}

fn refines_axis(src: &[f64], dst: &[f64]) -> Result<bool> {
    let (n, m) = (src.len(), dst.len());
    if m < n {
        return Err(Error::UseBilinear);
    }
    let src_step = (src[n - 1] - src[0]) / (n - 1) as f64;
    let dst_step = (dst[m - 1] - dst[0]) / (m - 1) as f64;
    let span_src = src_step * n as f64;
    let span_dst = dst_step * m as f64;
    let tol = 1e-6 * span_src.abs();
    if (src[0] - dst[0]).abs() > tol || (span_src - span_dst).abs() > tol {
        return Err(Error::Extent(
            "spectral regridding needs a refinement of the same periodic extent".into(),
        ));
    }
    Ok(m > n)
}

/// Band-limited upsampling by zero-padding the 2-D DFT.
///
/// The target must start at the same coordinates and cover the same periodic
/// extent (`n * spacing`) with at least as many points per axis.
pub fn spectral_regrid(stack: &FieldStack, target: &GridSpec) -> Result<FieldStack> {
    require_full_mask(stack, "spectral regridding")?;
    let src = stack.grid();
    let rows_refined = refines_axis(src.lat(), target.lat())?;
    let cols_refined = refines_axis(src.lon(), target.lon())?;
    if !rows_refined && !cols_refined {
        return FieldStack::new(
            target.clone(),
            stack.variables().to_vec(),
            stack.units().to_vec(),
            stack.times().to_vec(),
            stack.values().to_vec(),
            vec![true; target.n_cells()],
        );
    }
    let (n_rows, n_cols) = (src.n_rows(), src.n_cols());
    let (m_rows, m_cols) = (target.n_rows(), target.n_cols());
    let mut planner = FftPlanner::new();
    let mut values = Vec::with_capacity(stack.n_times() * stack.n_vars() * target.n_cells());
    for t in 0..stack.n_times() {
        for v in 0..stack.n_vars() {
            let plane = stack.slice(t, v);
            // rows first: n_rows x m_cols
            let mut wide = vec![Complex64::default(); n_rows * m_cols];
            for r in 0..n_rows {
                let row: Vec<Complex64> = plane[r * n_cols..(r + 1) * n_cols]
                    .iter()
                    .map(|&x| Complex64::new(x, 0.0))
                    .collect();
                let up = upsample_1d(&row, m_cols, &mut planner);
                wide[r * m_cols..(r + 1) * m_cols].copy_from_slice(&up);
            }
            let mut out = vec![0.0; m_rows * m_cols];
            for c in 0..m_cols {
                let col: Vec<Complex64> = (0..n_rows).map(|r| wide[r * m_cols + c]).collect();
                let up = upsample_1d(&col, m_rows, &mut planner);
                for r in 0..m_rows {
                    out[r * m_cols + c] = up[r].re;
                }
            }
            values.extend(out);
        }
    }
    FieldStack::new(
        target.clone(),
        stack.variables().to_vec(),
        stack.units().to_vec(),
        stack.times().to_vec(),
        values,
        vec![true; target.n_cells()],
    )
}

/// Linear isotropic wavenumber bins over `(0, k_max]`; the mean mode is
/// excluded.
#[derive(Debug, Clone)]
pub struct SpectrumBinning {
    bin_of_mode: Vec<Option<usize>>,
    n_modes: Vec<usize>,
    bin_width: f64,
}

impl SpectrumBinning {
    pub fn new(grid: &GridSpec, n_bins: usize) -> Result<Self> {
        if n_bins < 4 {
            return Err(Error::Spec(format!("need at least 4 spectrum bins, got {n_bins}")));
        }
        let k = isotropic_wavenumbers(grid);
        let k_top = k.iter().cloned().fold(0.0, f64::max);
        let bin_width = k_top / n_bins as f64;
        let mut n_modes = vec![0; n_bins];
        let bin_of_mode = k
            .iter()
            .enumerate()
            .map(|(i, &kk)| {
                if i == 0 {
                    None
                } else {
                    let b = ((kk / bin_width) as usize).min(n_bins - 1);
                    n_modes[b] += 1;
                    Some(b)
                }
            })
            .collect();
        Ok(Self {
            bin_of_mode,
            n_modes,
            bin_width,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.n_modes.len()
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_width
    }

    /// Per-bin sum of `|X_k|^2 / N` for one plane.
    pub(crate) fn accumulate(&self, fft: &Fft2, plane: &[f64], sums: &mut [f64]) {
        let data = fft.forward_real(plane);
        let n = data.len() as f64;
        for (z, bin) in data.iter().zip(&self.bin_of_mode) {
            if let Some(b) = bin {
                sums[*b] += z.norm_sqr() / n;
            }
        }
    }
}

/// Time-averaged isotropic power spectrum of one variable.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrum {
    /// Bin centres in cycles per km, ascending.
    pub k_bins: Vec<f64>,
    /// Mean `|X_k|^2 / N` over the modes of each bin and over time.
    pub power: Vec<f64>,
    pub n_modes: Vec<usize>,
    pub bin_width: f64,
}

impl PowerSpectrum {
    /// Upper edge of bin `i`.
    pub fn upper_edge(&self, i: usize) -> f64 {
        self.k_bins[i] + self.bin_width / 2.0
    }

    pub fn total_energy(&self) -> f64 {
        self.power
            .iter()
            .zip(&self.n_modes)
            .map(|(p, &n)| p * n as f64)
            .sum()
    }

    pub fn to_csv(&self) -> CsvTable {
        let mut table = CsvTable::new(&["k_per_km", "wavelength_km", "power", "n_modes"]);
        for i in 0..self.k_bins.len() {
            table.push([
                self.k_bins[i].to_string(),
                (1.0 / self.k_bins[i]).to_string(),
                self.power[i].to_string(),
                self.n_modes[i].to_string(),
            ]);
        }
        table
    }
}

/// Isotropic spectrum per variable: `|DFT|^2 / N` averaged within linear
/// wavenumber bins, then over time. Bins without modes are not reported.
pub fn isotropic_spectrum(stack: &FieldStack, n_bins: usize) -> Result<Vec<PowerSpectrum>> {
    require_full_mask(stack, "the isotropic spectrum")?;
    if stack.n_times() == 0 {
        return Err(Error::Degenerate("spectrum of an empty stack".into()));
    }
    let binning = SpectrumBinning::new(stack.grid(), n_bins)?;
    let fft = Fft2::for_grid(stack.grid());
    let mut out = Vec::with_capacity(stack.n_vars());
    for v in 0..stack.n_vars() {
        let mut sums = vec![0.0; n_bins];
        for t in 0..stack.n_times() {
            binning.accumulate(&fft, stack.slice(t, v), &mut sums);
        }
        let mut spec = PowerSpectrum {
            k_bins: Vec::new(),
            power: Vec::new(),
            n_modes: Vec::new(),
            bin_width: binning.bin_width,
        };
        for b in 0..n_bins {
            let n = binning.n_modes[b];
            if n > 0 {
                spec.k_bins.push((b as f64 + 0.5) * binning.bin_width);
                spec.power.push(sums[b] / (n * stack.n_times()) as f64);
                spec.n_modes.push(n);
            }
        }
        out.push(spec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::WIND_UNITS;
    use crate::rng::normal_vec;
    use std::f64::consts::PI;

    fn grid(n: usize) -> GridSpec {
        GridSpec::regular_km(n, n, 25.0, 25.0, 46.0, 2.0).unwrap()
    }

    fn stack_from(g: &GridSpec, n_times: usize, values: Vec<f64>) -> FieldStack {
        FieldStack::new(
            g.clone(),
            vec!["sfcWind".into()],
            vec![WIND_UNITS.into()],
            (0..n_times as i64).collect(),
            values,
            vec![true; g.n_cells()],
        )
        .unwrap()
    }

    fn sinusoid(g: &GridSpec, wavelength_km: f64) -> Vec<f64> {
        (0..g.n_cells())
            .map(|cell| {
                let x = (cell % g.n_cols()) as f64 * g.dx_km();
                (2.0 * PI * x / wavelength_km).sin()
            })
            .collect()
    }

    fn max_abs(xs: &[f64]) -> f64 {
        xs.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    #[test]
    fn fftfreq_matches_numpy_convention() {
        assert_eq!(fftfreq(4, 1.0), vec![0.0, 0.25, -0.5, -0.25]);
        assert_eq!(fftfreq(5, 0.5), vec![0.0, 0.4, 0.8, -0.8, -0.4]);
    }

    #[test]
    fn constant_field_is_all_low() {
        let g = grid(16);
        let s = stack_from(&g, 1, vec![3.25; 256]);
        let Decomposition { low, high, .. } = lowpass(&s, &SpectralCutoff::new(300.0).unwrap()).unwrap();
        assert!(low.values().iter().all(|x| (x - 3.25).abs() < 1e-12));
        assert!(max_abs(high.values()) < 1e-12);
    }

    #[test]
    fn short_sinusoid_is_all_high() {
        // 48 cells * 25 km = 1200 km, two full periods of 600 km
        let g = grid(48);
        let s = stack_from(&g, 1, sinusoid(&g, 600.0));
        let Decomposition { low, high, .. } = lowpass(&s, &SpectralCutoff::new(1200.0).unwrap()).unwrap();
        assert!(max_abs(low.values()) < 1e-6);
        let diff: Vec<f64> = high.values().iter().zip(s.values()).map(|(a, b)| a - b).collect();
        assert!(max_abs(&diff) < 1e-6);
    }

    #[test]
    fn lowpass_matches_direct_dft_oracle() {
        let g = grid(32);
        let s = stack_from(&g, 1, normal_vec(4, 0, 1024));
        let cut = SpectralCutoff::new(300.0).unwrap();
        let low = lowpass(&s, &cut).unwrap().low;

        // O(N^2) DFT oracle with the same isotropic mask
        let n = 32usize;
        let x = s.slice(0, 0);
        let freq = fftfreq(n, 25.0);
        let k_of = |p: usize, q: usize| freq[p].hypot(freq[q]);
        let mut coeffs = vec![(0.0f64, 0.0f64); n * n];
        for p in 0..n {
            for q in 0..n {
                if k_of(p, q) > 1.0 / 300.0 {
                    continue;
                }
                let (mut re, mut im) = (0.0, 0.0);
                for r in 0..n {
                    for c in 0..n {
                        let ang = -2.0 * PI * ((p * r) as f64 / n as f64 + (q * c) as f64 / n as f64);
                        re += x[r * n + c] * ang.cos();
                        im += x[r * n + c] * ang.sin();
                    }
                }
                coeffs[p * n + q] = (re, im);
            }
        }
        for r in 0..n {
            for c in 0..n {
                let mut acc = 0.0;
                for p in 0..n {
                    for q in 0..n {
                        let (re, im) = coeffs[p * n + q];
                        if re == 0.0 && im == 0.0 {
                            continue;
                        }
                        let ang = 2.0 * PI * ((p * r) as f64 / n as f64 + (q * c) as f64 / n as f64);
                        acc += re * ang.cos() - im * ang.sin();
                    }
                }
                acc /= (n * n) as f64;
                assert!((low.slice(0, 0)[r * n + c] - acc).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn masked_input_is_rejected() {
        let g = grid(8);
        let mut mask = vec![true; 64];
        mask[3] = false;
        let s = stack_from(&g, 1, vec![1.0; 64]).with_mask(mask).unwrap();
        assert!(matches!(
            lowpass(&s, &SpectralCutoff::new(300.0).unwrap()),
            Err(Error::MaskUnsupported(_))
        ));
        assert!(matches!(isotropic_spectrum(&s, 8), Err(Error::MaskUnsupported(_))));
    }

    #[test]
    fn unresolvable_cutoff_is_rejected() {
        let g = grid(8);
        let s = stack_from(&g, 1, vec![1.0; 64]);
        assert!(lowpass(&s, &SpectralCutoff::new(50.0).unwrap()).is_err());
    }

    #[test]
    fn bands_place_a_single_mode_in_the_middle_band() {
        // 72 cells * 25 km = 1800 km; 900 km = two periods
        let g = grid(72);
        let s = stack_from(&g, 1, sinusoid(&g, 900.0));
        let cuts = [SpectralCutoff::new(1200.0).unwrap(), SpectralCutoff::new(750.0).unwrap()];
        let bands = band_decompose(&s, &cuts).unwrap();
        assert_eq!(bands.len(), 3);
        assert!(max_abs(bands[0].values()) < 1e-9);
        assert!(max_abs(bands[2].values()) < 1e-9);
        let diff: Vec<f64> = bands[1].values().iter().zip(s.values()).map(|(a, b)| a - b).collect();
        assert!(max_abs(&diff) < 1e-9);
    }

    #[test]
    fn single_cut_band_equals_lowpass_and_order_is_checked() {
        let g = grid(16);
        let s = stack_from(&g, 1, normal_vec(2, 0, 256));
        let cut = SpectralCutoff::new(200.0).unwrap();
        let bands = band_decompose(&s, &[cut]).unwrap();
        let Decomposition { low, high, .. } = lowpass(&s, &cut).unwrap();
        assert_eq!(bands[0], low);
        assert_eq!(bands[1], high);
        let bad = [SpectralCutoff::new(300.0).unwrap(), SpectralCutoff::new(400.0).unwrap()];
        assert!(matches!(band_decompose(&s, &bad), Err(Error::Ordering(_))));
    }

    #[test]
    fn spectral_regrid_reproduces_band_limited_sinusoid() {
        let coarse = GridSpec::new(
            (0..16).map(|i| 40.0 + i as f64 * 0.25).collect(),
            (0..12).map(|j| 1.0 + j as f64 * 0.3).collect(),
        )
        .unwrap();
        let fine = GridSpec::new(
            (0..32).map(|i| 40.0 + i as f64 * 0.125).collect(),
            (0..24).map(|j| 1.0 + j as f64 * 0.15).collect(),
        )
        .unwrap();
        let f = |lat: f64, lon: f64| {
            1.5 + (2.0 * PI * 3.0 * (lat - 40.0) / 4.0).cos() * (2.0 * PI * 2.0 * (lon - 1.0) / 3.6).sin()
                + 0.5 * (2.0 * PI * 5.0 * (lon - 1.0) / 3.6).cos()
        };
        let values = (0..coarse.n_cells())
            .map(|c| f(coarse.lat()[c / 12], coarse.lon()[c % 12]))
            .collect();
        let s = stack_from(&coarse, 1, values);
        let up = spectral_regrid(&s, &fine).unwrap();
        for c in 0..fine.n_cells() {
            let expect = f(fine.lat()[c / 24], fine.lon()[c % 24]);
            assert!((up.slice(0, 0)[c] - expect).abs() < 1e-6);
        }
        let same = spectral_regrid(&s, &coarse).unwrap();
        assert_eq!(same.values(), s.values());
        assert!(matches!(spectral_regrid(&up, &coarse), Err(Error::UseBilinear)));
    }

    #[test]
    fn spectrum_parseval_and_single_mode() {
        let g = grid(32);
        let s = stack_from(&g, 3, normal_vec(8, 1, 3 * 1024));
        let spec = &isotropic_spectrum(&s, 32).unwrap()[0];
        let mut var_sum = 0.0;
        for t in 0..3 {
            let x = s.slice(t, 0);
            let m = x.iter().sum::<f64>() / 1024.0;
            var_sum += x.iter().map(|v| (v - m).powi(2)).sum::<f64>();
        }
        let expect = var_sum / 3.0;
        assert!((spec.total_energy() - expect).abs() / expect < 1e-6);

        let g = grid(64);
        let s = stack_from(&g, 1, sinusoid(&g, 400.0));
        let spec = &isotropic_spectrum(&s, 32).unwrap()[0];
        let k = 1.0 / 400.0;
        let hit = spec
            .k_bins
            .iter()
            .position(|&c| (c - k).abs() <= spec.bin_width / 2.0)
            .unwrap();
        let frac = spec.power[hit] * spec.n_modes[hit] as f64 / spec.total_energy();
        assert!(frac >= 0.99, "fraction {frac}");
    }
}
