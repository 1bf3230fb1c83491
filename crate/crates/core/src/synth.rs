//! Seeded synthetic gridded fields and the canonical test scenarios.
//!
//! Each `(time, latent variable)` plane is drawn from its own counter-derived
//! ChaCha stream, so frames can be generated in any order. White noise is
//! shaped in Fourier space to `P(k) ~ k^-beta`, truncated above
//! `1 / lambda_eff` and scaled to unit variance (in expectation), then mixed
//! across variables and evolved in time as AR(1).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fields::{calendar, FieldStack, GridSpec, WIND_UNITS};
use crate::kv::KvBlock;
use crate::rng::{derive_seed, normal_vec};
use crate::spectral::{isotropic_wavenumbers, lowpass_component, Fft2, SpectralCutoff};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub grid: GridSpec,
    pub n_times: usize,
    pub variables: Vec<String>,
    /// Spectral slope per variable.
    pub beta: Vec<f64>,
    pub amplitude: f64,
    /// Constant added after scaling.
    pub mean: f64,
    /// Effective-resolution wavelength in km; `f64::INFINITY` keeps all modes.
    pub lambda_eff: f64,
    /// Row-major `n_vars x n_vars` correlation matrix.
    pub correlation: Vec<f64>,
    pub ar1: f64,
    pub seed: u64,
    /// First day (days since 1970-01-01); steps are daily.
    pub start_day: i64,
}

impl SynthSpec {
    /// One variable, `beta = 2`, unit amplitude, no truncation, no memory.
    pub fn new(grid: GridSpec, n_times: usize, variables: &[&str], seed: u64) -> Self {
        let nv = variables.len();
        let mut correlation = vec![0.0; nv * nv];
        for v in 0..nv {
            correlation[v * nv + v] = 1.0;
        }
        Self {
            grid,
            n_times,
            variables: variables.iter().map(|s| s.to_string()).collect(),
            beta: vec![2.0; nv],
            amplitude: 1.0,
            mean: 0.0,
            lambda_eff: f64::INFINITY,
            correlation,
            ar1: 0.0,
            seed,
            start_day: calendar::days(chrono::NaiveDate::from_ymd_opt(2000, 1, 1).unwrap()),
        }
    }

    /// Lower factor `L` with `L L^T = C`.
    fn mixing(&self) -> Result<DMatrix<f64>> {
        let nv = self.variables.len();
        if nv == 0 || self.beta.len() != nv || self.correlation.len() != nv * nv {
            return Err(Error::Spec("variables, slopes and correlation matrix disagree in size".into()));
        }
        let c = DMatrix::from_row_slice(nv, nv, &self.correlation);
        for i in 0..nv {
            if (c[(i, i)] - 1.0).abs() > 1e-12 {
                return Err(Error::Spec("correlation matrix needs a unit diagonal".into()));
            }
            for j in 0..nv {
                if (c[(i, j)] - c[(j, i)]).abs() > 1e-12 {
                    return Err(Error::Spec("correlation matrix is not symmetric".into()));
                }
            }
        }
        let eig = SymmetricEigen::new(c);
        if eig.eigenvalues.iter().any(|&l| l < -1e-10) {
            return Err(Error::Spec("correlation matrix is not positive semi-definite".into()));
        }
        let sqrt_l = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
        Ok(&eig.eigenvectors * sqrt_l)
    }

    pub fn validate(&self) -> Result<()> {
        self.mixing()?;
        let min_lambda = 2.0 * self.grid.dx_km().max(self.grid.dy_km());
        if !(self.lambda_eff >= min_lambda) {
            return Err(Error::Spec(format!(
                "effective wavelength {} km is below twice the grid spacing ({min_lambda} km)",
                self.lambda_eff
            )));
        }
        if !(self.ar1.abs() < 1.0) {
            return Err(Error::Spec("AR(1) coefficient must lie in (-1, 1)".into()));
        }
        if !self.amplitude.is_finite() || !self.mean.is_finite() {
            return Err(Error::Spec("amplitude and mean must be finite".into()));
        }
        Ok(())
    }
}

/// Unit-variance spectral filter `sqrt(k^-beta)` with the DC mode and modes
/// above `1 / lambda_eff` removed.
fn spectral_filter(grid: &GridSpec, beta: f64, lambda_eff: f64) -> Vec<f64> {
    let k_max = 1.0 / lambda_eff;
    let mut h: Vec<f64> = isotropic_wavenumbers(grid)
        .into_iter()
        .map(|k| if k == 0.0 || (lambda_eff.is_finite() && k > k_max * (1.0 + 1e-9)) { 0.0 } else { k.powf(-beta / 2.0) })
        .collect();
    let energy: f64 = h.iter().map(|x| x * x).sum();
    if energy > 0.0 {
        let s = (h.len() as f64 / energy).sqrt();
        for x in &mut h {
            *x *= s;
        }
    }
    h
}

/// Shaped noise plane drawn from `stream` of `seed`.
fn shaped_plane(fft: &Fft2, filter: &[f64], seed: u64, stream: u64) -> Vec<f64> {
    let noise = normal_vec(seed, stream, filter.len());
    let mut data: Vec<Complex64> = noise.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fft.forward(&mut data);
    for (z, h) in data.iter_mut().zip(filter) {
        *z *= h;
    }
    fft.inverse(&mut data);
    data.iter().map(|z| z.re).collect()
}

/// Latent unit-variance fields `[t][v][cell]` with AR(1) memory, before
/// mixing, amplitude and mean.
fn latent(spec: &SynthSpec) -> Vec<Vec<Vec<f64>>> {
    let nv = spec.variables.len();
    let fft = Fft2::for_grid(&spec.grid);
    let filters: Vec<Vec<f64>> = spec
        .beta
        .iter()
        .map(|&b| spectral_filter(&spec.grid, b, spec.lambda_eff))
        .collect();
    let mut innov: Vec<Vec<Vec<f64>>> = (0..spec.n_times)
        .into_par_iter()
        .map(|t| {
            (0..nv)
                .map(|v| shaped_plane(&fft, &filters[v], derive_seed(spec.seed, &[t as u64, v as u64]), 0))
                .collect()
        })
        .collect();
    let phi = spec.ar1;
    let w = (1.0 - phi * phi).sqrt();
    for t in 1..spec.n_times {
        let (done, rest) = innov.split_at_mut(t);
        for (cur, prev) in rest[0].iter_mut().zip(&done[t - 1]) {
            for (c, p) in cur.iter_mut().zip(prev) {
                *c = phi * p + w * *c;
            }
        }
    }
    innov
}

/// Generates the stack described by `spec`.
pub fn generate(spec: &SynthSpec) -> Result<FieldStack> {
    spec.validate()?;
    let l = spec.mixing()?;
    let nv = spec.variables.len();
    let nc = spec.grid.n_cells();
    let z = latent(spec);
    let mut values = vec![0.0; spec.n_times * nv * nc];
    for (t, planes) in z.iter().enumerate() {
        for v in 0..nv {
            let out = &mut values[(t * nv + v) * nc..(t * nv + v + 1) * nc];
            for (j, plane) in planes.iter().enumerate() {
                let c = l[(v, j)];
                if c != 0.0 {
                    for (o, x) in out.iter_mut().zip(plane) {
                        *o += c * x;
                    }
                }
            }
            for o in out.iter_mut() {
                *o = spec.mean + spec.amplitude * *o;
            }
        }
    }
    FieldStack::new(
        spec.grid.clone(),
        spec.variables.clone(),
        vec![WIND_UNITS.to_string(); nv],
        (0..spec.n_times as i64).map(|t| spec.start_day + t).collect(),
        values,
        vec![true; nc],
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    SharedLargescale,
    BiasedSource,
    FutureShift,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::SharedLargescale, Scenario::BiasedSource, Scenario::FutureShift];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::SharedLargescale => "shared_largescale",
            Scenario::BiasedSource => "biased_source",
            Scenario::FutureShift => "future_shift",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::UnknownScenario(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub n_rows: usize,
    pub n_cols: usize,
    pub dx_km: f64,
    /// Scenario default when `None`.
    pub n_times: Option<usize>,
    pub variables: Vec<String>,
    pub beta: f64,
    pub mean: f64,
    pub ar1: f64,
    pub seed: u64,
    pub cutoff_km: f64,
    /// Amplitude of the source's independent small scales; 0.3 for
    /// `shared_largescale` and 1 for `future_shift` when `None`.
    pub damping: Option<f64>,
    pub gain: f64,
    pub offset: f64,
    pub drift_pct: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_rows: 32,
            n_cols: 32,
            dx_km: 25.0,
            n_times: None,
            variables: vec!["sfcWind".into()],
            beta: 2.0,
            mean: 5.0,
            ar1: 0.5,
            seed: 0,
            cutoff_km: 500.0,
            damping: None,
            gain: 2.0,
            offset: 3.0,
            drift_pct: 10.0,
        }
    }
}

impl ScenarioConfig {
    fn default_times(&self, s: Scenario) -> usize {
        self.n_times.unwrap_or(match s {
            Scenario::SharedLargescale => 200,
            Scenario::BiasedSource => 2000,
            Scenario::FutureShift => 730,
        })
    }

    fn damping(&self, s: Scenario) -> f64 {
        self.damping.unwrap_or(match s {
            Scenario::FutureShift => 1.0,
            _ => 0.3,
        })
    }

    fn spec(&self, n_times: usize, seed: u64) -> Result<SynthSpec> {
        let grid = GridSpec::regular_km(self.n_rows, self.n_cols, self.dx_km, self.dx_km, 46.0, 2.0)?;
        let names: Vec<&str> = self.variables.iter().map(|s| s.as_str()).collect();
        let mut spec = SynthSpec::new(grid, n_times, &names, seed);
        spec.beta = vec![self.beta; names.len()];
        spec.mean = self.mean;
        spec.ar1 = self.ar1;
        Ok(spec)
    }
}

/// Source, target and the ground truth of one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioData {
    pub source: FieldStack,
    pub target: FieldStack,
    pub truth: KvBlock,
}

impl ScenarioData {
    /// Writes `source.wfld`, `target.wfld` and `truth.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        crate::wfld::write_fieldstack(&self.source, &dir.join("source.wfld"))?;
        crate::wfld::write_fieldstack(&self.target, &dir.join("target.wfld"))?;
        let path = dir.join("truth.txt");
        std::fs::write(&path, self.truth.to_string()).map_err(|e| Error::io(&path, e))
    }
}

fn half_periods(times: &[i64], truth: &mut KvBlock) {
    let half = times.len() / 2;
    truth.set("hist_start", calendar::date(times[0]));
    truth.set("hist_end", calendar::date(times[half - 1]));
    truth.set("fut_start", calendar::date(times[half]));
    truth.set("fut_end", calendar::date(times[times.len() - 1]));
}

/// Low band of `target` plus damped independent small scales.
fn shared_source(target: &FieldStack, cfg: &ScenarioConfig, damping: f64, seed: u64) -> Result<FieldStack> {
    let cut = SpectralCutoff::new(cfg.cutoff_km)?;
    cut.check_resolvable(target.grid())?;
    let low = lowpass_component(target, &cut)?;
    let mut spec = cfg.spec(target.n_times(), derive_seed(seed, &[1]))?;
    spec.mean = 0.0;
    spec.amplitude = damping;
    let other = generate(&spec)?;
    let other_high = other.zip_with(&lowpass_component(&other, &cut)?, |a, b| a - b)?;
    low.zip_with(&other_high, |a, b| a + b)
}

pub fn make_scenario(scenario: Scenario, cfg: &ScenarioConfig) -> Result<ScenarioData> {
    let n_times = cfg.default_times(scenario);
    let mut truth = KvBlock::new();
    truth.set("scenario", scenario.name());
    truth.set("seed", cfg.seed);
    truth.set("n_rows", cfg.n_rows);
    truth.set("n_cols", cfg.n_cols);
    truth.set("dx_km", cfg.dx_km);
    truth.set("n_times", n_times);
    truth.set("beta", cfg.beta);
    truth.set("mean", cfg.mean);
    match scenario {
        Scenario::SharedLargescale => {
            let mut spec = cfg.spec(n_times, derive_seed(cfg.seed, &[0]))?;
            spec.ar1 = cfg.ar1;
            let target = generate(&spec)?;
            let damping = cfg.damping(scenario);
            let source = shared_source(&target, cfg, damping, cfg.seed)?;
            truth.set("cutoff_km", cfg.cutoff_km);
            truth.set("damping", damping);
            truth.set("ar1", cfg.ar1);
            Ok(ScenarioData { source, target, truth })
        }
        Scenario::BiasedSource => {
            let mut spec = cfg.spec(n_times, derive_seed(cfg.seed, &[0]))?;
            spec.ar1 = 0.0;
            let target = generate(&spec)?;
            let source = target.map(|x| cfg.gain * x + cfg.offset);
            truth.set("gain", cfg.gain);
            truth.set("offset", cfg.offset);
            truth.set("ar1", 0.0);
            half_periods(target.times(), &mut truth);
            Ok(ScenarioData { source, target, truth })
        }
        Scenario::FutureShift => {
            if n_times < 4 {
                return Err(Error::Spec("future_shift needs at least 4 time steps".into()));
            }
            let mut spec = cfg.spec(n_times, derive_seed(cfg.seed, &[0]))?;
            spec.ar1 = cfg.ar1;
            let base = generate(&spec)?;
            // linear ramp d(t) = s t fixed so that the period means differ by drift_pct
            let half = n_times / 2;
            let nv = base.n_vars();
            let period_mean = |v: usize, r: std::ops::Range<usize>| {
                let n = (r.len() * base.n_cells()) as f64;
                r.map(|t| base.slice(t, v).iter().sum::<f64>()).sum::<f64>() / n
            };
            let t_h = (half as f64 - 1.0) / 2.0;
            let t_f = (half + n_times - 1) as f64 / 2.0;
            let f = 1.0 + cfg.drift_pct / 100.0;
            let slopes: Vec<f64> = (0..nv)
                .map(|v| {
                    let (mh, mf) = (period_mean(v, 0..half), period_mean(v, half..n_times));
                    (f * mh - mf) / (t_f - f * t_h)
                })
                .collect();
            let mut target = base.clone();
            for t in 0..n_times {
                for (v, s) in slopes.iter().enumerate() {
                    for x in target.slice_mut(t, v) {
                        *x += s * t as f64;
                    }
                }
            }
            let damping = cfg.damping(scenario);
            let source = shared_source(&target, cfg, damping, cfg.seed)?;
            truth.set("drift_pct", cfg.drift_pct);
            truth.set("cutoff_km", cfg.cutoff_km);
            truth.set("damping", damping);
            truth.set("drift_slope_per_day", crate::kv::join(&slopes));
            half_periods(target.times(), &mut truth);
            Ok(ScenarioData { source, target, truth })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{delta_full, pearson, Period};
    use crate::spectral::isotropic_spectrum;

    fn grid(n: usize) -> GridSpec {
        GridSpec::regular_km(n, n, 25.0, 25.0, 46.0, 2.0).unwrap()
    }

    #[test]
    fn zero_amplitude_and_determinism() {
        let mut spec = SynthSpec::new(grid(16), 3, &["a"], 9);
        let a = generate(&spec).unwrap();
        assert_eq!(a, generate(&spec).unwrap());
        spec.amplitude = 0.0;
        assert!(generate(&spec).unwrap().values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn spectral_slope() {
        let mut spec = SynthSpec::new(grid(128), 4, &["a"], 1);
        spec.beta = vec![3.0];
        let s = &isotropic_spectrum(&generate(&spec).unwrap(), 32).unwrap()[0];
        let pts: Vec<(f64, f64)> = s
            .k_bins
            .iter()
            .zip(&s.power)
            .skip(1)
            .map(|(k, p)| (k.ln(), p.ln()))
            .collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        assert!((slope + 3.0).abs() < 0.3, "slope {slope}");
    }

    #[test]
    fn truncation_removes_power() {
        let mut spec = SynthSpec::new(grid(32), 2, &["a"], 2);
        spec.lambda_eff = 200.0;
        let st = generate(&spec).unwrap();
        let s = &isotropic_spectrum(&st, 32).unwrap()[0];
        let top = s.power.iter().cloned().fold(0.0, f64::max);
        for (i, p) in s.power.iter().enumerate() {
            if s.k_bins[i] - s.bin_width / 2.0 > 1.0 / 200.0 {
                assert!(*p < 1e-10 * top);
            }
        }
    }

    #[test]
    fn correlation_is_realised() {
        let mut spec = SynthSpec::new(grid(16), 40, &["a", "b"], 3);
        spec.correlation = vec![1.0, 0.6, 0.6, 1.0];
        spec.beta = vec![0.0, 0.0];
        let st = generate(&spec).unwrap();
        let a: Vec<f64> = (0..40).flat_map(|t| st.slice(t, 0).to_vec()).collect();
        let b: Vec<f64> = (0..40).flat_map(|t| st.slice(t, 1).to_vec()).collect();
        assert!((pearson(&a, &b).unwrap() - 0.6).abs() < 0.05);
        spec.correlation = vec![1.0, 1.5, 1.5, 1.0];
        assert!(matches!(generate(&spec), Err(Error::Spec(_))));
    }

    #[test]
    fn scenarios_hold_their_truth() {
        let cfg = ScenarioConfig {
            n_times: Some(20),
            ..ScenarioConfig::default()
        };
        let d = make_scenario(Scenario::SharedLargescale, &cfg).unwrap();
        let cut = SpectralCutoff::new(500.0).unwrap();
        let a = lowpass_component(&d.source, &cut).unwrap();
        let b = lowpass_component(&d.target, &cut).unwrap();
        assert!(a.values().iter().zip(b.values()).all(|(x, y)| (x - y).abs() <= 1e-6));

        let d = make_scenario(Scenario::BiasedSource, &cfg).unwrap();
        assert!(d.source.values().iter().zip(d.target.values()).all(|(s, t)| *s == 2.0 * t + 3.0));

        let cfg = ScenarioConfig {
            n_times: Some(100),
            ..cfg
        };
        let d = make_scenario(Scenario::FutureShift, &cfg).unwrap();
        let p = |a: &str, b: &str| Period {
            start: calendar::parse(d.truth.get(a).unwrap()).unwrap(),
            end: calendar::parse(d.truth.get(b).unwrap()).unwrap(),
        };
        let (h, f) = (p("hist_start", "hist_end"), p("fut_start", "fut_end"));
        assert!((delta_full(&d.target, &h, &f).unwrap()[0] - 10.0).abs() < 1e-6);
        assert!((delta_full(&d.source, &h, &f).unwrap()[0] - 10.0).abs() < 1e-6);
        assert!(matches!("nope".parse::<Scenario>(), Err(Error::UnknownScenario(_))));
    }
}
