//! Gaussian-blur scale separation for masked domains.
//!
//! The blur is a normalised masked convolution `blur(x * m) / blur(m)`, so
//! missing cells neither contribute nor drag coastal values towards zero. The
//! grid edge is treated exactly like the mask boundary.

use crate::error::{Error, Result};
use crate::fields::{FieldStack, GridSpec};
use crate::rng::normal_vec;
use crate::scale::{Decomposition, Separator};

pub const DEFAULT_TRUNCATE: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlurSpec {
    sigma_km: f64,
    truncate: f64,
}

impl BlurSpec {
    pub fn new(sigma_km: f64) -> Result<Self> {
        Self::with_truncate(sigma_km, DEFAULT_TRUNCATE)
    }

    pub fn with_truncate(sigma_km: f64, truncate: f64) -> Result<Self> {
        if !(sigma_km > 0.0) || !sigma_km.is_finite() {
            return Err(Error::Spec(format!("blur sigma must be positive, got {sigma_km}")));
        }
        if !(truncate > 0.0) || !truncate.is_finite() {
            return Err(Error::Spec(format!("blur truncation must be positive, got {truncate}")));
        }
        Ok(Self { sigma_km, truncate })
    }

    pub fn sigma_km(&self) -> f64 {
        self.sigma_km
    }

    pub fn truncate(&self) -> f64 {
        self.truncate
    }

    /// `(sigma_x, sigma_y)` in cells; both must be at least half a cell.
    pub fn sigma_cells(&self, grid: &GridSpec) -> Result<(f64, f64)> {
        let sx = self.sigma_km / grid.dx_km();
        let sy = self.sigma_km / grid.dy_km();
        if sx < 0.5 || sy < 0.5 {
            return Err(Error::Spec(format!(
                "blur sigma {} km is below half a grid cell ({sx:.3} x {sy:.3} cells)",
                self.sigma_km
            )));
        }
        Ok((sx, sy))
    }
}

/// Truncated, unit-sum Gaussian taps `w[-r..=r]`.
pub fn gaussian_kernel(sigma_cells: f64, truncate: f64) -> Vec<f64> {
    let radius = (truncate * sigma_cells).ceil() as i64;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|j| (-(j * j) as f64 / (2.0 * sigma_cells * sigma_cells)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Separable blur of several planes sharing a mask, with precomputed taps.
pub(crate) struct MaskedBlur {
    n_rows: usize,
    n_cols: usize,
    kx: Vec<f64>,
    ky: Vec<f64>,
    mask: Vec<bool>,
    weight: Vec<f64>,
}

impl MaskedBlur {
    pub(crate) fn new(grid: &GridSpec, mask: &[bool], spec: &BlurSpec) -> Result<Self> {
        if !mask.iter().any(|&m| m) {
            return Err(Error::Degenerate("blur over a mask without valid cells".into()));
        }
        let (sx, sy) = spec.sigma_cells(grid)?;
        let mut blur = Self {
            n_rows: grid.n_rows(),
            n_cols: grid.n_cols(),
            kx: gaussian_kernel(sx, spec.truncate()),
            ky: gaussian_kernel(sy, spec.truncate()),
            mask: mask.to_vec(),
            weight: Vec::new(),
        };
        let ones: Vec<f64> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        blur.weight = blur.convolve(&ones);
        Ok(blur)
    }

    /// Plain separable convolution, taps outside the grid dropped.
    fn convolve(&self, plane: &[f64]) -> Vec<f64> {
        let (nr, nc) = (self.n_rows as i64, self.n_cols as i64);
        let rx = (self.kx.len() / 2) as i64;
        let ry = (self.ky.len() / 2) as i64;
        let mut tmp = vec![0.0; plane.len()];
        for r in 0..nr {
            for c in 0..nc {
                let mut acc = 0.0;
                for (i, w) in self.kx.iter().enumerate() {
                    let cc = c + i as i64 - rx;
                    if (0..nc).contains(&cc) {
                        acc += w * plane[(r * nc + cc) as usize];
                    }
                }
                tmp[(r * nc + c) as usize] = acc;
            }
        }
        let mut out = vec![0.0; plane.len()];
        for r in 0..nr {
            for c in 0..nc {
                let mut acc = 0.0;
                for (i, w) in self.ky.iter().enumerate() {
                    let rr = r + i as i64 - ry;
                    if (0..nr).contains(&rr) {
                        acc += w * tmp[(rr * nc + c) as usize];
                    }
                }
                out[(r * nc + c) as usize] = acc;
            }
        }
        out
    }

    pub(crate) fn apply(&self, plane: &[f64]) -> Vec<f64> {
        let filled: Vec<f64> = plane
            .iter()
            .zip(&self.mask)
            .map(|(&x, &m)| if m { x } else { 0.0 })
            .collect();
        let num = self.convolve(&filled);
        num.iter()
            .zip(&self.weight)
            .zip(&self.mask)
            .map(|((n, w), &m)| if m { n / w } else { f64::NAN })
            .collect()
    }
}

/// Blur of every `(time, variable)` slice; masked cells stay missing.
pub fn gaussian_blur_masked(stack: &FieldStack, spec: &BlurSpec) -> Result<FieldStack> {
    let blur = MaskedBlur::new(stack.grid(), stack.mask(), spec)?;
    let mut values = Vec::with_capacity(stack.values().len());
    for t in 0..stack.n_times() {
        for v in 0..stack.n_vars() {
            values.extend(blur.apply(stack.slice(t, v)));
        }
    }
    stack.with_values(values)
}

pub fn blur_split(stack: &FieldStack, spec: &BlurSpec) -> Result<Decomposition> {
    let low = gaussian_blur_masked(stack, spec)?;
    let high = stack.zip_with(&low, |x, l| x - l)?;
    Ok(Decomposition {
        low,
        high,
        separator: Separator::Blur(*spec),
    })
}

/// Standard normal draws on the valid cells of `template`, one stream per
/// `(time, variable)` slice.
pub fn white_noise_like(template: &FieldStack, seed: u64) -> Result<FieldStack> {
    let n = template.n_cells();
    let mut values = Vec::with_capacity(template.values().len());
    for t in 0..template.n_times() {
        for v in 0..template.n_vars() {
            values.extend(normal_vec(seed, (t * template.n_vars() + v) as u64, n));
        }
    }
    template.with_values(values)
}

/// `eps - blur(eps)` with `eps` standard normal on the template's layout.
pub fn highpass_noise(template: &FieldStack, spec: &BlurSpec, seed: u64) -> Result<FieldStack> {
    let eps = white_noise_like(template, seed)?;
    Ok(blur_split(&eps, spec)?.high)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::WIND_UNITS;

    fn grid(n: usize) -> GridSpec {
        GridSpec::regular_km(n, n, 10.0, 10.0, 0.0, 0.0).unwrap()
    }

    fn stack(g: &GridSpec, values: Vec<f64>, mask: Vec<bool>) -> FieldStack {
        let n_times = values.len() / g.n_cells();
        FieldStack::new(
            g.clone(),
            vec!["sfcWind".into()],
            vec![WIND_UNITS.into()],
            (0..n_times as i64).collect(),
            values,
            mask,
        )
        .unwrap()
    }

    fn coastline(n: usize) -> Vec<bool> {
        (0..n * n).map(|c| (c / n) + 2 * (c % n) < 2 * n).collect()
    }

    #[test]
    fn constant_survives_any_mask() {
        let g = grid(20);
        let s = stack(&g, vec![7.5; 400], coastline(20));
        let b = gaussian_blur_masked(&s, &BlurSpec::new(30.0).unwrap()).unwrap();
        for (x, &m) in b.values().iter().zip(s.mask()) {
            if m {
                assert!((x - 7.5).abs() < 1e-10);
            } else {
                assert!(x.is_nan());
            }
        }
    }

    #[test]
    fn impulse_response_matches_direct_convolution() {
        let n = 41;
        let g = grid(n);
        let mut values = vec![0.0; n * n];
        values[20 * n + 20] = 1.0;
        let s = stack(&g, values, vec![true; n * n]);
        let spec = BlurSpec::new(25.0).unwrap();
        let b = gaussian_blur_masked(&s, &spec).unwrap();

        // 2-D oracle: sum over the full truncated square kernel
        let sigma: f64 = 2.5;
        let radius = (4.0 * sigma).ceil() as i64;
        let w = |j: i64| (-(j * j) as f64 / (2.0 * sigma * sigma)).exp();
        let norm: f64 = (-radius..=radius).map(w).sum::<f64>().powi(2);
        for r in 0..n as i64 {
            for c in 0..n as i64 {
                let (dr, dc) = (r - 20, c - 20);
                let expect = if dr.abs() <= radius && dc.abs() <= radius {
                    w(dr) * w(dc) / norm
                } else {
                    0.0
                };
                assert!((b.values()[(r * n as i64 + c) as usize] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_valid_cell_is_unchanged() {
        let g = grid(9);
        let mut mask = vec![false; 81];
        mask[40] = true;
        let mut values = vec![0.0; 81];
        values[40] = -3.0;
        let s = stack(&g, values, mask);
        let b = gaussian_blur_masked(&s, &BlurSpec::new(20.0).unwrap()).unwrap();
        assert!((b.values()[40] + 3.0).abs() < 1e-14);
    }

    #[test]
    fn empty_mask_and_subcell_sigma_are_rejected() {
        let g = grid(6);
        let s = stack(&g, vec![0.0; 36], vec![false; 36]);
        assert!(matches!(
            gaussian_blur_masked(&s, &BlurSpec::new(20.0).unwrap()),
            Err(Error::Degenerate(_))
        ));
        let s = stack(&g, vec![0.0; 36], vec![true; 36]);
        assert!(gaussian_blur_masked(&s, &BlurSpec::new(4.0).unwrap()).is_err());
    }

    #[test]
    fn long_wave_passes_to_low_band() {
        // sigma 2 cells, wavelength 10 sigma; transfer exp(-2 pi^2 / 100) ~ 0.82
        let n = 120;
        let g = grid(n);
        let lambda = 200.0;
        let values: Vec<f64> = (0..n * n)
            .map(|c| (2.0 * std::f64::consts::PI * (c % n) as f64 * 10.0 / lambda).sin())
            .collect();
        let s = stack(&g, values, vec![true; n * n]);
        let d = blur_split(&s, &BlurSpec::new(20.0).unwrap()).unwrap();
        // interior cells away from the grid edge
        let mut high_max: f64 = 0.0;
        for r in 30..90 {
            for c in 30..90 {
                high_max = high_max.max(d.high.values()[r * n + c].abs());
            }
        }
        assert!(high_max < 0.2, "high amplitude {high_max}");
    }

    #[test]
    fn highpass_noise_is_deterministic_and_rough() {
        let n = 48;
        let g = grid(n);
        let s = stack(&g, vec![0.0; n * n], vec![true; n * n]);
        let spec = BlurSpec::new(40.0).unwrap();
        let a = highpass_noise(&s, &spec, 11).unwrap();
        assert_eq!(a, highpass_noise(&s, &spec, 11).unwrap());
        let again = gaussian_blur_masked(&a, &spec).unwrap();
        let peak = |xs: &[f64]| xs.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(peak(again.values()) < 0.2 * peak(a.values()));
    }
}
