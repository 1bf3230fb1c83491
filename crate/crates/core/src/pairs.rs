//! Normalisation and pseudo-pair construction.
//!
//! A pseudo-pair couples a target-domain frame `x` with a degraded copy
//! `shared(x) + noise`, where the noise has its shared component removed.
//! At inference, source fields are regridded, reduced to their shared
//! component and fed through the same path.

use crate::error::{Error, Result};
use crate::kv::{join, KvBlock};
use crate::fields::{bilinear_regrid, temporal_moments, FieldStack, GridSpec, MomentMaps};
use crate::rng::derive_seed;
use crate::scale::Separator;
use crate::spectral::spectral_regrid;

/// Default inference noise scale.
pub const DEFAULT_NOISE_SCALE: f64 = 1.1;

/// Per-variable scalar moments over all valid cells and times.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationParams {
    pub variables: Vec<String>,
    pub source: DomainStats,
    pub target: DomainStats,
    /// Per-cell temporal moments of the target, used for normalising and
    /// denormalising target-domain fields.
    pub target_cells: MomentMaps,
}

fn spatial_stats(stack: &FieldStack, vars: &[usize], domain: &str) -> Result<DomainStats> {
    let mut mean = Vec::with_capacity(vars.len());
    let mut std = Vec::with_capacity(vars.len());
    for &v in vars {
        let mut n = 0usize;
        let mut sum = 0.0;
        for t in 0..stack.n_times() {
            for (x, &m) in stack.slice(t, v).iter().zip(stack.mask()) {
                if m {
                    sum += x;
                    n += 1;
                }
            }
        }
        if n == 0 {
            return Err(Error::Degenerate(format!("{domain} stack has no valid values")));
        }
        let mu = sum / n as f64;
        let mut ss = 0.0;
        for t in 0..stack.n_times() {
            for (x, &m) in stack.slice(t, v).iter().zip(stack.mask()) {
                if m {
                    ss += (x - mu) * (x - mu);
                }
            }
        }
        let sd = (ss / n as f64).sqrt();
        if !(sd > 0.0) {
            return Err(Error::Degenerate(format!(
                "variable `{}` has zero variance in the {domain} training period",
                stack.variables()[v]
            )));
        }
        mean.push(mu);
        std.push(sd);
    }
    Ok(DomainStats { mean, std })
}

/// Variable indices of `stack` in the order of `names`.
fn indices_of(stack: &FieldStack, names: &[String]) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|n| {
            stack
                .variable_index(n)
                .ok_or_else(|| Error::Alignment(format!("variable `{n}` is missing")))
        })
        .collect()
}

/// Scalar moments per domain plus per-cell target maps, over the variables
/// both stacks share (target order).
pub fn fit_normalization(train_source: &FieldStack, train_target: &FieldStack) -> Result<NormalizationParams> {
    if train_source.n_times() == 0 || train_target.n_times() == 0 {
        return Err(Error::Degenerate("empty training period".into()));
    }
    let variables: Vec<String> = train_target
        .variables()
        .iter()
        .filter(|v| train_source.variable_index(v).is_some())
        .cloned()
        .collect();
    if variables.is_empty() {
        return Err(Error::Alignment("source and target share no variables".into()));
    }
    let src_idx = indices_of(train_source, &variables)?;
    let tgt_idx = indices_of(train_target, &variables)?;
    let source = spatial_stats(train_source, &src_idx, "source")?;
    let target = spatial_stats(train_target, &tgt_idx, "target")?;
    let target_cells = temporal_moments(&train_target.select_variables(&tgt_idx))?;
    Ok(NormalizationParams {
        variables,
        source,
        target,
        target_cells,
    })
}

impl NormalizationParams {
    fn cell_std(&self, v: usize, cell: usize) -> f64 {
        let s = self.target_cells.std[v][cell];
        // cells without temporal variability fall back to the scalar std
        if s > 0.0 {
            s
        } else {
            self.target.std[v]
        }
    }

    /// `(x - mean) / std` with the scalar source moments.
    pub fn normalize_source(&self, stack: &FieldStack) -> Result<FieldStack> {
        let stack = stack.select_variables(&indices_of(stack, &self.variables)?);
        let mut out = stack.clone();
        for t in 0..stack.n_times() {
            for v in 0..stack.n_vars() {
                let (mu, sd) = (self.source.mean[v], self.source.std[v]);
                for x in out.slice_mut(t, v) {
                    *x = (*x - mu) / sd;
                }
            }
        }
        Ok(out)
    }

    fn check_target_grid(&self, stack: &FieldStack) -> Result<()> {
        if stack.n_cells() != self.target_cells.mean[0].len() {
            return Err(Error::Shape(format!(
                "stack has {} cells, target statistics have {}",
                stack.n_cells(),
                self.target_cells.mean[0].len()
            )));
        }
        Ok(())
    }

    /// Per-cell standardisation of target-domain fields.
    pub fn normalize_target(&self, stack: &FieldStack) -> Result<FieldStack> {
        self.check_target_grid(stack)?;
        let stack = stack.select_variables(&indices_of(stack, &self.variables)?);
        let mut out = stack.clone();
        for t in 0..stack.n_times() {
            for v in 0..stack.n_vars() {
                for (cell, x) in out.slice_mut(t, v).iter_mut().enumerate() {
                    *x = (*x - self.target_cells.mean[v][cell]) / self.cell_std(v, cell);
                }
            }
        }
        Ok(out)
    }

    /// Serialises the statistics as a `key=value` block.
    pub fn to_kv(&self) -> KvBlock {
        let mut kv = KvBlock::new();
        kv.set("variables", join(&self.variables));
        kv.set("source_mean", join(&self.source.mean));
        kv.set("source_std", join(&self.source.std));
        kv.set("target_mean", join(&self.target.mean));
        kv.set("target_std", join(&self.target.std));
        for (v, name) in self.variables.iter().enumerate() {
            kv.set(&format!("cell_mean.{name}"), join(&self.target_cells.mean[v]));
            kv.set(&format!("cell_std.{name}"), join(&self.target_cells.std[v]));
        }
        kv
    }

    pub fn from_kv(kv: &KvBlock) -> Result<Self> {
        let list = |key: &str| -> Result<Vec<f64>> {
            kv.parse_list(key)?
                .ok_or_else(|| Error::Spec(format!("normalisation block lacks `{key}`")))
        };
        let variables: Vec<String> = kv
            .parse_list("variables")?
            .ok_or_else(|| Error::Spec("normalisation block lacks `variables`".into()))?;
        let nv = variables.len();
        let source = DomainStats {
            mean: list("source_mean")?,
            std: list("source_std")?,
        };
        let target = DomainStats {
            mean: list("target_mean")?,
            std: list("target_std")?,
        };
        let mut cells = MomentMaps {
            mean: Vec::with_capacity(nv),
            std: Vec::with_capacity(nv),
        };
        for name in &variables {
            cells.mean.push(list(&format!("cell_mean.{name}"))?);
            cells.std.push(list(&format!("cell_std.{name}"))?);
        }
        let lens_ok = [&source.mean, &source.std, &target.mean, &target.std]
            .iter()
            .all(|x| x.len() == nv)
            && cells.mean.iter().chain(&cells.std).all(|m| m.len() == cells.mean[0].len());
        if nv == 0 || !lens_ok {
            return Err(Error::Spec("inconsistent normalisation block".into()));
        }
        Ok(Self {
            variables,
            source,
            target,
            target_cells: cells,
        })
    }

    /// Inverse of [`normalize_target`](Self::normalize_target).
    pub fn denormalize_target(&self, stack: &FieldStack) -> Result<FieldStack> {
        self.check_target_grid(stack)?;
        if stack.variables() != self.variables.as_slice() {
            return Err(Error::Alignment("variables differ from the normalisation".into()));
        }
        let mut out = stack.clone();
        for t in 0..stack.n_times() {
            for v in 0..stack.n_vars() {
                for (cell, x) in out.slice_mut(t, v).iter_mut().enumerate() {
                    *x = *x * self.cell_std(v, cell) + self.target_cells.mean[v][cell];
                }
            }
        }
        Ok(out)
    }
}

/// One training sample: a single-time frame and its degraded copy.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoPair {
    /// `shared + noise`, the start of the flow.
    pub conditioning: FieldStack,
    /// Noise-free shared component of the target.
    pub shared: FieldStack,
    pub target: FieldStack,
    pub separator: Separator,
    pub seed: u64,
    /// Index of the frame in the stack the pair was built from.
    pub time_index: usize,
}

/// Seeded pair generator over a normalised target stack. Each epoch draws
/// fresh noise from `derive_seed(seed, [epoch])`.
#[derive(Debug, Clone)]
pub struct PairFactory {
    target: FieldStack,
    shared: FieldStack,
    separator: Separator,
    n_noise_draws: usize,
    amplitude: f64,
    seed: u64,
}

impl PairFactory {
    pub fn new(target: FieldStack, separator: Separator, n_noise_draws: usize, seed: u64) -> Result<Self> {
        if n_noise_draws == 0 {
            return Err(Error::Spec("n_noise_draws must be at least 1".into()));
        }
        if target.n_times() == 0 {
            return Err(Error::Degenerate("no target frames to pair".into()));
        }
        separator.check(&target)?;
        let shared = separator.shared(&target)?;
        Ok(Self {
            target,
            shared,
            separator,
            n_noise_draws,
            amplitude: 1.0,
            seed,
        })
    }

    /// Scales the injected noise; 0 gives `conditioning == shared`.
    pub fn with_amplitude(mut self, amplitude: f64) -> Self {
        self.amplitude = amplitude;
        self
    }

    pub fn n_frames(&self) -> usize {
        self.target.n_times()
    }

    pub fn separator(&self) -> Separator {
        self.separator
    }

    /// Pairs for frame `t`, draw `i`, under base seed `seed`.
    fn pair(&self, t: usize, i: usize, seed: u64) -> Result<PseudoPair> {
        let pair_seed = derive_seed(seed, &[t as u64, i as u64]);
        let target = self.target.select_times(&[t]);
        let shared = self.shared.select_times(&[t]);
        let conditioning = if self.amplitude == 0.0 {
            shared.clone()
        } else {
            let noise = self.separator.highpass_noise(&target, pair_seed)?;
            let a = self.amplitude;
            shared.zip_with(&noise, |s, e| s + a * e)?
        };
        Ok(PseudoPair {
            conditioning,
            shared,
            target,
            separator: self.separator,
            seed: pair_seed,
            time_index: t,
        })
    }

    pub fn pairs_with_seed(&self, seed: u64) -> Result<Vec<PseudoPair>> {
        let mut out = Vec::with_capacity(self.n_frames() * self.n_noise_draws);
        for t in 0..self.n_frames() {
            for i in 0..self.n_noise_draws {
                out.push(self.pair(t, i, seed)?);
            }
        }
        Ok(out)
    }

    pub fn epoch_pairs(&self, epoch: usize) -> Result<Vec<PseudoPair>> {
        self.pairs_with_seed(derive_seed(self.seed, &[epoch as u64]))
    }
}

/// All pairs of a normalised target stack for one seed.
pub fn make_pairs(
    target: &FieldStack,
    separator: Separator,
    n_noise_draws: usize,
    seed: u64,
) -> Result<Vec<PseudoPair>> {
    PairFactory::new(target.clone(), separator, n_noise_draws, seed)?.pairs_with_seed(seed)
}

/// Regrids onto `grid`: spectral interpolation for Fourier separators when
/// the grids allow it, bilinear otherwise.
pub fn regrid_to(source: &FieldStack, separator: &Separator, grid: &GridSpec) -> Result<FieldStack> {
    if source.grid().matches(grid) {
        return Ok(source.clone());
    }
    if separator.is_fourier() && source.is_fully_valid() {
        match spectral_regrid(source, grid) {
            Ok(out) => return Ok(out),
            Err(Error::UseBilinear) | Err(Error::Extent(_)) => {
                log::debug!("grids are not a periodic refinement, using bilinear regridding");
            }
            Err(e) => return Err(e),
        }
    }
    bilinear_regrid(source, grid)
}

/// Regrids a normalised source stack onto the target grid, keeps its shared
/// component and adds `noise_scale` times separator-filtered noise.
///
/// `target_mask` restricts the result to the target domain (masked domains
/// are only supported by the blur separator).
pub fn project_source(
    source: &FieldStack,
    separator: &Separator,
    target_grid: &GridSpec,
    target_mask: Option<&[bool]>,
    noise_scale: f64,
    seed: u64,
) -> Result<FieldStack> {
    let mut regridded = regrid_to(source, separator, target_grid)?;
    if let Some(mask) = target_mask {
        let combined: Vec<bool> = regridded.mask().iter().zip(mask).map(|(a, b)| *a && *b).collect();
        regridded = regridded.with_mask(combined)?;
    }
    separator.check(&regridded)?;
    let shared = separator.shared(&regridded)?;
    if noise_scale == 0.0 {
        return Ok(shared);
    }
    let noise = separator.highpass_noise(&shared, seed)?;
    shared.zip_with(&noise, |s, e| s + noise_scale * e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::WIND_UNITS;
    use crate::rng::normal_vec;
    use crate::spectral::{lowpass_component, SpectralCutoff};

    fn grid(n: usize) -> GridSpec {
        GridSpec::regular_km(n, n, 25.0, 25.0, 46.0, 2.0).unwrap()
    }

    fn random(g: &GridSpec, vars: usize, times: usize, seed: u64) -> FieldStack {
        FieldStack::new(
            g.clone(),
            (0..vars).map(|v| format!("v{v}")).collect(),
            vec![WIND_UNITS.into(); vars],
            (0..times as i64).collect(),
            normal_vec(seed, 0, vars * times * g.n_cells()),
            vec![true; g.n_cells()],
        )
        .unwrap()
    }

    #[test]
    fn affine_target_moments() {
        let g = grid(6);
        let src = random(&g, 2, 5, 1);
        let tgt = src.map(|x| 2.0 * x + 3.0);
        let p = fit_normalization(&src, &tgt).unwrap();
        for v in 0..2 {
            assert!((p.target.mean[v] - (2.0 * p.source.mean[v] + 3.0)).abs() < 1e-12);
            assert!((p.target.std[v] - 2.0 * p.source.std[v]).abs() < 1e-12);
        }
        let same = fit_normalization(&src, &src).unwrap();
        assert_eq!(same.source, same.target);
    }

    #[test]
    fn kv_round_trip() {
        let g = grid(4);
        let p = fit_normalization(&random(&g, 2, 5, 1), &random(&g, 2, 6, 2)).unwrap();
        let text = p.to_kv().to_string();
        assert_eq!(NormalizationParams::from_kv(&KvBlock::parse(&text).unwrap()).unwrap(), p);
    }

    #[test]
    fn scalar_moments_match_loop_oracle() {
        let g = grid(5);
        let s = random(&g, 2, 4, 9);
        let p = fit_normalization(&s, &s).unwrap();
        for v in 0..2 {
            let mut xs = Vec::new();
            for t in 0..4 {
                for c in 0..25 {
                    xs.push(s.get(t, v, c));
                }
            }
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            let sd = (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt();
            assert!((p.source.mean[v] - m).abs() < 1e-12);
            assert!((p.source.std[v] - sd).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_variance_is_rejected() {
        let g = grid(4);
        let s = FieldStack::zeros(g, &["sfcWind"], vec![0, 1]);
        assert!(matches!(fit_normalization(&s, &s), Err(Error::Degenerate(_))));
    }

    #[test]
    fn target_normalisation_round_trips() {
        let g = grid(6);
        let s = random(&g, 1, 8, 3).map(|x| 4.0 + 2.0 * x);
        let p = fit_normalization(&s, &s).unwrap();
        let back = p.denormalize_target(&p.normalize_target(&s).unwrap()).unwrap();
        for (a, b) in back.values().iter().zip(s.values()) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }

    #[test]
    fn pairs_share_the_low_band() {
        let g = grid(32);
        let t = random(&g, 1, 3, 5);
        let sep = Separator::Fourier(SpectralCutoff::new(300.0).unwrap());
        let pairs = make_pairs(&t, sep, 2, 17).unwrap();
        assert_eq!(pairs.len(), 6);
        let cut = SpectralCutoff::new(300.0).unwrap();
        for p in &pairs {
            let a = lowpass_component(&p.conditioning, &cut).unwrap();
            let b = lowpass_component(&p.target, &cut).unwrap();
            for (x, y) in a.values().iter().zip(b.values()) {
                assert!((x - y).abs() < 1e-6);
            }
        }
        assert_eq!(pairs[0].shared, pairs[1].shared);
        assert_ne!(pairs[0].conditioning, pairs[1].conditioning);
        assert_eq!(pairs, make_pairs(&t, sep, 2, 17).unwrap());
    }

    #[test]
    fn zero_amplitude_gives_the_shared_component() {
        let g = grid(16);
        let t = random(&g, 1, 2, 6);
        let sep = Separator::Fourier(SpectralCutoff::new(200.0).unwrap());
        let f = PairFactory::new(t, sep, 1, 1).unwrap().with_amplitude(0.0);
        for p in f.epoch_pairs(0).unwrap() {
            assert_eq!(p.conditioning, p.shared);
        }
    }

    #[test]
    fn fourier_pairs_reject_masks() {
        let g = grid(8);
        let mut mask = vec![true; 64];
        mask[0] = false;
        let t = random(&g, 1, 2, 6).with_mask(mask).unwrap();
        let sep = Separator::Fourier(SpectralCutoff::new(200.0).unwrap());
        assert!(matches!(make_pairs(&t, sep, 1, 0), Err(Error::MaskUnsupported(_))));
    }

    #[test]
    fn projection_noise_lives_above_the_cutoff() {
        let g = grid(32);
        let s = random(&g, 1, 1, 2);
        let cut = SpectralCutoff::new(300.0).unwrap();
        let sep = Separator::Fourier(cut);
        let a = project_source(&s, &sep, &g, None, 1.0, 1).unwrap();
        let b = project_source(&s, &sep, &g, None, 1.0, 2).unwrap();
        let la = lowpass_component(&a, &cut).unwrap();
        let lb = lowpass_component(&b, &cut).unwrap();
        for (x, y) in la.values().iter().zip(lb.values()) {
            assert!((x - y).abs() < 1e-6);
        }
        let plain = project_source(&s, &sep, &g, None, 0.0, 1).unwrap();
        assert_eq!(plain, lowpass_component(&s, &cut).unwrap());

        let doubled = project_source(&s, &sep, &g, None, 2.0, 1).unwrap();
        let var = |x: &FieldStack| {
            let h: Vec<f64> = x.values().iter().zip(plain.values()).map(|(a, b)| a - b).collect();
            h.iter().map(|v| v * v).sum::<f64>()
        };
        let ratio = var(&doubled) / var(&a);
        assert!((ratio - 4.0).abs() < 0.4);
    }
}
