//! Evaluation metrics against a reference and against the driving model.
//!
//! Every metric is computed per variable and then averaged over variables
//! ([`VarScores`]). Alongside the scalars, the intermediate curves (CDFs,
//! spectra, variograms, correlation against distance, annual anomalies and
//! seasonal delta maps) are returned as CSV tables.
//!
//! `delta_season` follows the printed definition: the seasonal deltas are
//! computed from spatial means, so the outer spatial average is a no-op.
//! Per-cell seasonal delta maps are emitted separately as curves.

use rand::seq::SliceRandom;

use crate::csv::CsvTable;
use crate::error::{Error, Result};
use crate::fields::calendar::{self, Season};
use crate::fields::FieldStack;
use crate::rng::stream_rng;
use crate::spectral::{isotropic_spectrum, PowerSpectrum};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl Region {
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        (self.lat_min..=self.lat_max).contains(&lat) && (self.lon_min..=self.lon_max).contains(&lon)
    }
}

/// Inclusive day range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Period {
    pub start: i64,
    pub end: i64,
}

impl Period {
    pub fn contains(&self, day: i64) -> bool {
        (self.start..=self.end).contains(&day)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricConfig {
    /// Largest wavenumber (1/km) entering the spectrum metric.
    pub k_max: f64,
    pub n_bins: usize,
    /// Largest distance (km) entering the variogram metric.
    pub h_max: f64,
    /// Distance bin width (km) for variograms and correlation curves.
    pub h_bin: f64,
    /// Altitude threshold (m) defining mountain cells.
    pub theta_alt: f64,
    pub quantile: f64,
    pub spearman_max_cells: usize,
    /// Cells kept by seeded uniform subsampling when the guard trips.
    pub spearman_subsample: Option<usize>,
    pub seed: u64,
    pub region: Option<Region>,
    pub hist: Option<Period>,
    pub fut: Option<Period>,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            k_max: 1.0 / 200.0,
            n_bins: 32,
            h_max: 300.0,
            h_bin: 25.0,
            theta_alt: 800.0,
            quantile: 0.95,
            spearman_max_cells: 5000,
            spearman_subsample: None,
            seed: 0,
            region: None,
            hist: None,
            fut: None,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.quantile > 0.0 && self.quantile < 1.0) {
            return Err(Error::Spec(format!("extreme quantile must lie in (0, 1), got {}", self.quantile)));
        }
        if !(self.theta_alt >= 0.0) {
            return Err(Error::Spec("altitude threshold must be non-negative".into()));
        }
        if !(self.h_bin > 0.0 && self.h_max > self.h_bin) {
            return Err(Error::Spec("need h_max > h_bin > 0".into()));
        }
        if !(self.k_max > 0.0) {
            return Err(Error::Spec("k_max must be positive".into()));
        }
        Ok(())
    }
}

/// Per-variable values and their mean over variables.
#[derive(Debug, Clone, PartialEq)]
pub struct VarScores {
    pub per_var: Vec<f64>,
    pub mean: f64,
}

impl VarScores {
    pub fn new(per_var: Vec<f64>) -> Self {
        let mean = per_var.iter().sum::<f64>() / per_var.len() as f64;
        Self { per_var, mean }
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Pearson correlation; `None` when either series has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa > 0.0 && sbb > 0.0 {
        Some(sab / (saa * sbb).sqrt())
    } else {
        None
    }
}

/// Ranks starting at 1, ties receiving their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Type-7 quantile (linear interpolation between order statistics).
pub fn quantile_type7(xs: &[f64], q: f64) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = q * (s.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(s.len() - 1);
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}

/// Mean absolute difference of per-cell temporal means and standard
/// deviations.
pub fn delta_mean_std(method: &FieldStack, obs: &FieldStack) -> Result<(VarScores, VarScores)> {
    method.check_same_space(obs)?;
    let cells = obs.valid_cells();
    let mut dmu = Vec::new();
    let mut dsd = Vec::new();
    for v in 0..obs.n_vars() {
        let (mut a, mut b) = (0.0, 0.0);
        for &c in &cells {
            let (mm, sm) = moments(&method.series(v, c));
            let (mo, so) = moments(&obs.series(v, c));
            a += (mm - mo).abs();
            b += (sm - so).abs();
        }
        dmu.push(a / cells.len() as f64);
        dsd.push(b / cells.len() as f64);
    }
    Ok((VarScores::new(dmu), VarScores::new(dsd)))
}

fn moments(xs: &[f64]) -> (f64, f64) {
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
    (m, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterVariable {
    pub score: f64,
    /// `(v1, v2, mean |rho_m - rho_obs|)` per pair.
    pub pairs: Vec<(usize, usize, f64)>,
    /// Cell/pair combinations skipped for zero temporal variance.
    pub excluded: usize,
}

/// Per-cell inter-variable correlations compared with the reference.
pub fn intervar_corr_consistency(method: &FieldStack, obs: &FieldStack) -> Result<InterVariable> {
    method.check_same_space(obs)?;
    if obs.n_vars() < 2 {
        return Err(Error::InsufficientData("inter-variable correlation needs 2 variables".into()));
    }
    if obs.n_times() < 3 || method.n_times() < 3 {
        return Err(Error::InsufficientData("inter-variable correlation needs 3 time steps".into()));
    }
    let cells = obs.valid_cells();
    let mut pairs = Vec::new();
    let mut excluded = 0;
    for v1 in 0..obs.n_vars() {
        for v2 in v1 + 1..obs.n_vars() {
            let mut sum = 0.0;
            let mut n = 0;
            for &c in &cells {
                let rm = pearson(&method.series(v1, c), &method.series(v2, c));
                let ro = pearson(&obs.series(v1, c), &obs.series(v2, c));
                match (rm, ro) {
                    (Some(a), Some(b)) => {
                        sum += (a - b).abs();
                        n += 1;
                    }
                    _ => excluded += 1,
                }
            }
            if n == 0 {
                return Err(Error::Degenerate(format!(
                    "no cell with temporal variance for variables {v1} and {v2}"
                )));
            }
            pairs.push((v1, v2, sum / n as f64));
        }
    }
    let score = pairs.iter().map(|p| p.2).sum::<f64>() / pairs.len() as f64;
    Ok(InterVariable { score, pairs, excluded })
}

/// Spearman matrix over `cells` (row-major `|cells| x |cells|`).
pub fn spearman_matrix(stack: &FieldStack, v: usize, cells: &[usize]) -> Vec<f64> {
    let nt = stack.n_times();
    let n = cells.len();
    // ranks[p][t]
    let mut ranks = vec![vec![0.0; nt]; n];
    for t in 0..nt {
        let slice = stack.slice(t, v);
        let vals: Vec<f64> = cells.iter().map(|&c| slice[c]).collect();
        let m = mean(&vals);
        let anomalies: Vec<f64> = vals.iter().map(|x| x - m).collect();
        for (p, r) in average_ranks(&anomalies).into_iter().enumerate() {
            ranks[p][t] = r;
        }
    }
    let centred: Vec<(Vec<f64>, f64)> = ranks
        .iter()
        .map(|r| {
            let m = mean(r);
            let d: Vec<f64> = r.iter().map(|x| x - m).collect();
            let ss = d.iter().map(|x| x * x).sum::<f64>();
            (d, ss)
        })
        .collect();
    let mut out = vec![0.0; n * n];
    for p in 0..n {
        for q in p..n {
            let value = if p == q {
                1.0
            } else {
                let (dp, sp) = &centred[p];
                let (dq, sq) = &centred[q];
                if *sp > 0.0 && *sq > 0.0 {
                    dp.iter().zip(dq).map(|(a, b)| a * b).sum::<f64>() / (sp * sq).sqrt()
                } else {
                    0.0
                }
            };
            out[p * n + q] = value;
            out[q * n + p] = value;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpearmanResult {
    pub scores: VarScores,
    /// Columns: variable, distance_km, method_abs_r, reference_abs_r, n_pairs.
    pub curves: CsvTable,
    pub n_cells: usize,
}

fn guarded_cells(mut cells: Vec<usize>, cfg: &MetricConfig) -> Result<Vec<usize>> {
    if cells.len() <= cfg.spearman_max_cells {
        return Ok(cells);
    }
    match cfg.spearman_subsample {
        Some(k) if k >= 2 && k <= cfg.spearman_max_cells => {
            cells.shuffle(&mut stream_rng(cfg.seed, 7));
            cells.truncate(k);
            cells.sort_unstable();
            Ok(cells)
        }
        _ => Err(Error::Spec(format!(
            "{} cells exceed the Spearman size guard of {}; configure spearman_subsample",
            cells.len(),
            cfg.spearman_max_cells
        ))),
    }
}

/// Mean absolute difference of spatial Spearman matrices over `cells`
/// (all valid cells when `None`).
pub fn spatial_spearman_error(
    method: &FieldStack,
    obs: &FieldStack,
    cells: Option<&[usize]>,
    cfg: &MetricConfig,
) -> Result<SpearmanResult> {
    method.check_same_space(obs)?;
    if obs.n_times() < 3 || method.n_times() < 3 {
        return Err(Error::InsufficientData("Spearman structure needs 3 time steps".into()));
    }
    let cells = match cells {
        Some(c) => c.to_vec(),
        None => obs.valid_cells(),
    };
    if cells.is_empty() {
        return Err(Error::EmptyRegion("no cells for the Spearman structure".into()));
    }
    let cells = guarded_cells(cells, cfg)?;
    let n = cells.len();
    let grid = obs.grid();
    let mut max_d: f64 = 0.0;
    for p in 0..n {
        for q in p + 1..n {
            max_d = max_d.max(grid.distance_km(cells[p], cells[q]));
        }
    }
    let n_dbins = ((max_d / cfg.h_bin).floor() as usize + 1).max(1);
    let mut per_var = Vec::new();
    let mut curves = CsvTable::new(&["variable", "distance_km", "method_abs_r", "reference_abs_r", "n_pairs"]);
    for v in 0..obs.n_vars() {
        let rm = spearman_matrix(method, v, &cells);
        let ro = spearman_matrix(obs, v, &cells);
        let total: f64 = rm.iter().zip(&ro).map(|(a, b)| (a - b).abs()).sum();
        per_var.push(total / (n * n) as f64);
        let mut sum_m = vec![0.0; n_dbins];
        let mut sum_o = vec![0.0; n_dbins];
        let mut count = vec![0usize; n_dbins];
        for p in 0..n {
            for q in p + 1..n {
                let b = ((grid.distance_km(cells[p], cells[q]) / cfg.h_bin) as usize).min(n_dbins - 1);
                sum_m[b] += rm[p * n + q].abs();
                sum_o[b] += ro[p * n + q].abs();
                count[b] += 1;
            }
        }
        for b in 0..n_dbins {
            if count[b] > 0 {
                curves.push([
                    obs.variables()[v].clone(),
                    ((b as f64 + 0.5) * cfg.h_bin).to_string(),
                    (sum_m[b] / count[b] as f64).to_string(),
                    (sum_o[b] / count[b] as f64).to_string(),
                    count[b].to_string(),
                ]);
            }
        }
    }
    Ok(SpearmanResult {
        scores: VarScores::new(per_var),
        curves,
        n_cells: n,
    })
}

/// Cells whose altitude exceeds `theta_alt`.
pub fn mountain_cells(stack: &FieldStack, altitude: &[f64], theta_alt: f64) -> Result<Vec<usize>> {
    if altitude.len() != stack.n_cells() {
        return Err(Error::Shape(format!(
            "altitude map has {} cells, grid has {}",
            altitude.len(),
            stack.n_cells()
        )));
    }
    let cells: Vec<usize> = stack
        .valid_cells()
        .into_iter()
        .filter(|&c| altitude[c] > theta_alt)
        .collect();
    if cells.is_empty() {
        return Err(Error::EmptyRegion(format!("no valid cell above {theta_alt} m")));
    }
    Ok(cells)
}

/// RMS difference over the selected bins divided by the mean reference
/// power there. Returns `None` when no bin is selected.
pub fn spectral_ssm(method: &PowerSpectrum, obs: &PowerSpectrum, keep: impl Fn(f64) -> bool) -> Option<f64> {
    let mut sq = 0.0;
    let mut po = 0.0;
    let mut n = 0;
    for ((k, pm), p) in obs.k_bins.iter().zip(&method.power).zip(&obs.power) {
        if keep(*k) {
            sq += (pm - p) * (pm - p);
            po += p;
            n += 1;
        }
    }
    if n == 0 {
        return None;
    }
    Some((sq / n as f64).sqrt() / (po / n as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumResult {
    pub scores: VarScores,
    /// Columns: variable, k_per_km, wavelength_km, method_power, reference_power.
    pub curves: CsvTable,
}

/// Large-scale spectrum metric over bins with centre `<= k_max`.
pub fn spectrum_metric(method: &FieldStack, obs: &FieldStack, cfg: &MetricConfig) -> Result<SpectrumResult> {
    method.check_same_space(obs)?;
    let sm = isotropic_spectrum(method, cfg.n_bins)?;
    let so = isotropic_spectrum(obs, cfg.n_bins)?;
    let mut per_var = Vec::new();
    let mut curves = CsvTable::new(&["variable", "k_per_km", "wavelength_km", "method_power", "reference_power"]);
    for v in 0..obs.n_vars() {
        let ssm = spectral_ssm(&sm[v], &so[v], |k| k <= cfg.k_max)
            .ok_or_else(|| Error::Spec(format!("no spectrum bin at or below k_max = {}", cfg.k_max)))?;
        per_var.push(ssm);
        for i in 0..so[v].k_bins.len() {
            curves.push([
                obs.variables()[v].clone(),
                so[v].k_bins[i].to_string(),
                (1.0 / so[v].k_bins[i]).to_string(),
                sm[v].power[i].to_string(),
                so[v].power[i].to_string(),
            ]);
        }
    }
    Ok(SpectrumResult {
        scores: VarScores::new(per_var),
        curves,
    })
}

/// Semi-variogram per distance bin, averaged over time. Bins without
/// pairs are `None`.
pub fn semivariogram(stack: &FieldStack, v: usize, cells: &[usize], h_max: f64, h_bin: f64) -> Vec<Option<f64>> {
    let n_bins = (h_max / h_bin).ceil() as usize;
    let grid = stack.grid();
    let mut pairs: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_bins];
    for (i, &a) in cells.iter().enumerate() {
        for &b in &cells[i + 1..] {
            let d = grid.distance_km(a, b);
            if d > 0.0 && d <= h_max {
                let bin = ((d / h_bin).ceil() as usize).clamp(1, n_bins) - 1;
                pairs[bin].push((a, b));
            }
        }
    }
    pairs
        .iter()
        .map(|ps| {
            if ps.is_empty() {
                return None;
            }
            let mut total = 0.0;
            for t in 0..stack.n_times() {
                let s = stack.slice(t, v);
                let g: f64 = ps.iter().map(|&(a, b)| (s[a] - s[b]).powi(2)).sum();
                total += g / (2.0 * ps.len() as f64);
            }
            Some(total / stack.n_times() as f64)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariogramResult {
    pub scores: VarScores,
    /// Variables whose reference variogram is identically zero; their score
    /// is 0 when the method's is also zero and infinite otherwise.
    pub degenerate: Vec<bool>,
    /// Columns: variable, distance_km, method_gamma, reference_gamma.
    pub curves: CsvTable,
}

/// Normalised RMS variogram difference over mountain cells.
pub fn variogram_metric(
    method: &FieldStack,
    obs: &FieldStack,
    altitude: &[f64],
    cfg: &MetricConfig,
) -> Result<VariogramResult> {
    method.check_same_space(obs)?;
    let cells = mountain_cells(obs, altitude, cfg.theta_alt)?;
    let mut per_var = Vec::new();
    let mut degenerate = Vec::new();
    let mut curves = CsvTable::new(&["variable", "distance_km", "method_gamma", "reference_gamma"]);
    for v in 0..obs.n_vars() {
        let gm = semivariogram(method, v, &cells, cfg.h_max, cfg.h_bin);
        let go = semivariogram(obs, v, &cells, cfg.h_max, cfg.h_bin);
        let mut sq = 0.0;
        let mut po = 0.0;
        let mut n = 0;
        for (b, (m, o)) in gm.iter().zip(&go).enumerate() {
            if let (Some(m), Some(o)) = (m, o) {
                sq += (m - o) * (m - o);
                po += o;
                n += 1;
                curves.push([
                    obs.variables()[v].clone(),
                    ((b as f64 + 0.5) * cfg.h_bin).to_string(),
                    m.to_string(),
                    o.to_string(),
                ]);
            }
        }
        if n == 0 {
            return Err(Error::EmptyRegion("no mountain cell pair within h_max".into()));
        }
        let rms = (sq / n as f64).sqrt();
        let denom = po / n as f64;
        if denom > 0.0 {
            per_var.push(rms / denom);
            degenerate.push(false);
        } else {
            per_var.push(if rms == 0.0 { 0.0 } else { f64::INFINITY });
            degenerate.push(true);
        }
    }
    Ok(VariogramResult {
        scores: VarScores::new(per_var),
        degenerate,
        curves,
    })
}

/// Two-sample KS statistic `sup |F_a - F_b|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

fn pooled(stack: &FieldStack, v: usize, cells: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(stack.n_times() * cells.len());
    for t in 0..stack.n_times() {
        let s = stack.slice(t, v);
        out.extend(cells.iter().map(|&c| s[c]));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct KsResult {
    pub scores: VarScores,
    /// Columns: variable, x, method_cdf, reference_cdf.
    pub curves: CsvTable,
}

const CDF_POINTS: usize = 101;

fn empirical_cdf(sorted: &[f64], x: f64) -> f64 {
    sorted.partition_point(|&v| v <= x) as f64 / sorted.len() as f64
}

/// KS statistic of values pooled over times and valid cells, optionally
/// restricted to a lat/lon box.
pub fn ks_statistic(method: &FieldStack, obs: &FieldStack, region: Option<&Region>) -> Result<KsResult> {
    method.check_same_space(obs)?;
    let grid = obs.grid();
    let cells: Vec<usize> = obs
        .valid_cells()
        .into_iter()
        .filter(|&c| {
            region.is_none_or(|r| r.contains(grid.lat()[c / grid.n_cols()], grid.lon()[c % grid.n_cols()]))
        })
        .collect();
    if cells.is_empty() || obs.n_times() == 0 || method.n_times() == 0 {
        return Err(Error::EmptyRegion("no samples for the KS statistic".into()));
    }
    let mut per_var = Vec::new();
    let mut curves = CsvTable::new(&["variable", "x", "method_cdf", "reference_cdf"]);
    for v in 0..obs.n_vars() {
        let mut a = pooled(method, v, &cells);
        let mut b = pooled(obs, v, &cells);
        per_var.push(ks_two_sample(&a, &b));
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let lo = a[0].min(b[0]);
        let hi = a[a.len() - 1].max(b[b.len() - 1]);
        for i in 0..CDF_POINTS {
            let x = lo + (hi - lo) * i as f64 / (CDF_POINTS - 1) as f64;
            curves.push([
                obs.variables()[v].clone(),
                x.to_string(),
                empirical_cdf(&a, x).to_string(),
                empirical_cdf(&b, x).to_string(),
            ]);
        }
    }
    Ok(KsResult {
        scores: VarScores::new(per_var),
        curves,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtremeResult {
    pub frequency: VarScores,
    pub intensity: VarScores,
    /// Cells left out of the intensity metric because the method or the
    /// reference never exceeds the threshold.
    pub excluded: usize,
}

pub const MIN_EXTREME_STEPS: usize = 20;

/// Exceedance frequency and intensity above per-cell reference quantiles.
pub fn extreme_metrics(method: &FieldStack, obs: &FieldStack, cfg: &MetricConfig) -> Result<ExtremeResult> {
    method.check_same_space(obs)?;
    extreme_metrics_min(method, obs, cfg.quantile, MIN_EXTREME_STEPS)
}

/// As [`extreme_metrics`] with an explicit minimum series length.
pub fn extreme_metrics_min(method: &FieldStack, obs: &FieldStack, q: f64, min_steps: usize) -> Result<ExtremeResult> {
    method.check_same_space(obs)?;
    if obs.n_times() < min_steps || method.n_times() == 0 {
        return Err(Error::InsufficientData(format!(
            "extreme thresholds need {min_steps} reference time steps, got {}",
            obs.n_times()
        )));
    }
    let cells = obs.valid_cells();
    let mut f = Vec::new();
    let mut intensity = Vec::new();
    let mut excluded = 0;
    for v in 0..obs.n_vars() {
        let mut fsum = 0.0;
        let mut isum = 0.0;
        let mut icount = 0;
        for &c in &cells {
            let so = obs.series(v, c);
            let sm = method.series(v, c);
            let theta = quantile_type7(&so, q);
            let exceed = |s: &[f64]| {
                let xs: Vec<f64> = s.iter().cloned().filter(|&x| x > theta).collect();
                (xs.len() as f64 / s.len() as f64, if xs.is_empty() { None } else { Some(mean(&xs)) })
            };
            let (fm, im) = exceed(&sm);
            let (fo, io) = exceed(&so);
            fsum += (fm - fo).abs();
            match (im, io) {
                (Some(a), Some(b)) => {
                    isum += (a - b).abs();
                    icount += 1;
                }
                _ => excluded += 1,
            }
        }
        f.push(fsum / cells.len() as f64);
        intensity.push(if icount > 0 { isum / icount as f64 } else { f64::NAN });
    }
    Ok(ExtremeResult {
        frequency: VarScores::new(f),
        intensity: VarScores::new(intensity),
        excluded,
    })
}

/// Spatial mean over valid cells and the given time indices.
fn spatial_time_mean(stack: &FieldStack, v: usize, times: &[usize]) -> f64 {
    let cells = stack.valid_cells();
    let mut s = 0.0;
    for &t in times {
        let slice = stack.slice(t, v);
        s += cells.iter().map(|&c| slice[c]).sum::<f64>();
    }
    s / (times.len() * cells.len()) as f64
}

fn cell_time_mean(stack: &FieldStack, v: usize, cell: usize, times: &[usize]) -> f64 {
    times.iter().map(|&t| stack.get(t, v, cell)).sum::<f64>() / times.len() as f64
}

fn relative_change(hist: f64, fut: f64) -> Result<f64> {
    if hist == 0.0 {
        return Err(Error::Degenerate("historical mean is zero; relative change undefined".into()));
    }
    Ok((fut - hist) / hist * 100.0)
}

fn period_indices(stack: &FieldStack, p: &Period, name: &str) -> Result<Vec<usize>> {
    let idx: Vec<usize> = (0..stack.n_times()).filter(|&t| p.contains(stack.times()[t])).collect();
    if idx.is_empty() {
        return Err(Error::Period(format!(
            "{name} period {}..{} contains no time step",
            calendar::date(p.start),
            calendar::date(p.end)
        )));
    }
    Ok(idx)
}

/// Time indices of complete season instances within `idx`, per season, and
/// the number of incomplete instances dropped.
pub fn season_indices(times: &[i64], idx: &[usize]) -> ([Vec<usize>; 4], usize) {
    use std::collections::BTreeMap;
    let mut groups: BTreeMap<(usize, i32), (Vec<usize>, [bool; 3])> = BTreeMap::new();
    for &i in idx {
        let (season, year) = calendar::season(times[i]);
        let s = Season::ALL.iter().position(|x| *x == season).unwrap();
        let month = calendar::month(times[i]);
        let slot = season.months().iter().position(|&m| m == month).unwrap();
        let entry = groups.entry((s, year)).or_default();
        entry.0.push(i);
        entry.1[slot] = true;
    }
    let mut out: [Vec<usize>; 4] = Default::default();
    let mut dropped = 0;
    for ((s, _), (members, seen)) in groups {
        if seen.iter().all(|&b| b) {
            out[s].extend(members);
        } else {
            dropped += 1;
        }
    }
    for v in &mut out {
        v.sort_unstable();
    }
    (out, dropped)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcmResult {
    pub rho: VarScores,
    pub anomalies: VarScores,
    /// `|delta_m - delta_gcm|` per variable, full period.
    pub delta_full: VarScores,
    /// Mean over seasons of `|delta_m,s - delta_gcm,s|` per variable.
    pub delta_season: VarScores,
    pub method_delta_full: Vec<f64>,
    pub gcm_delta_full: Vec<f64>,
    /// Cells skipped in `rho` for zero temporal variance.
    pub excluded: usize,
    pub dropped_seasons: usize,
    /// Columns: variable, year, method_anomaly, gcm_anomaly.
    pub anomaly_curves: CsvTable,
    /// Columns: variable, season, cell, method_delta, gcm_delta.
    pub season_maps: CsvTable,
}

/// Consistency with the driving model: temporal correlation, annual
/// anomalies and relative change signals.
pub fn gcm_consistency(method: &FieldStack, gcm: &FieldStack, cfg: &MetricConfig) -> Result<GcmResult> {
    method.check_aligned(gcm)?;
    if method.times() != gcm.times() {
        return Err(Error::Alignment("method and driving model use different dates".into()));
    }
    let hist = cfg.hist.ok_or_else(|| Error::Period("historical period is not configured".into()))?;
    let fut = cfg.fut.ok_or_else(|| Error::Period("future period is not configured".into()))?;
    let hist_idx = period_indices(gcm, &hist, "historical")?;
    let fut_idx = period_indices(gcm, &fut, "future")?;
    let cells = gcm.valid_cells();
    let times = gcm.times();

    let mut years: Vec<i32> = times.iter().map(|&t| calendar::year(t)).collect();
    years.dedup();
    let year_idx: Vec<Vec<usize>> = years
        .iter()
        .map(|y| (0..times.len()).filter(|&t| calendar::year(times[t]) == *y).collect())
        .collect();
    let (hist_seasons, d1) = season_indices(times, &hist_idx);
    let (fut_seasons, d2) = season_indices(times, &fut_idx);

    let mut rho = Vec::new();
    let mut anom = Vec::new();
    let mut dfull = Vec::new();
    let mut dseason = Vec::new();
    let mut m_full = Vec::new();
    let mut g_full = Vec::new();
    let mut excluded = 0;
    let mut anomaly_curves = CsvTable::new(&["variable", "year", "method_anomaly", "gcm_anomaly"]);
    let mut season_maps = CsvTable::new(&["variable", "season", "cell", "method_delta", "gcm_delta"]);
    for v in 0..gcm.n_vars() {
        let name = &gcm.variables()[v];
        let mut rs = 0.0;
        let mut rn = 0;
        for &c in &cells {
            match pearson(&method.series(v, c), &gcm.series(v, c)) {
                Some(r) => {
                    rs += r;
                    rn += 1;
                }
                None => excluded += 1,
            }
        }
        rho.push(if rn > 0 { rs / rn as f64 } else { f64::NAN });

        let ym: Vec<f64> = year_idx.iter().map(|i| spatial_time_mean(method, v, i)).collect();
        let yg: Vec<f64> = year_idx.iter().map(|i| spatial_time_mean(gcm, v, i)).collect();
        let (mm, mg) = (mean(&ym), mean(&yg));
        let mut a = 0.0;
        for (k, y) in years.iter().enumerate() {
            let (am, ag) = (ym[k] - mm, yg[k] - mg);
            a += (am - ag).abs();
            anomaly_curves.push([name.clone(), y.to_string(), am.to_string(), ag.to_string()]);
        }
        anom.push(a / years.len() as f64);

        let delta = |s: &FieldStack, h: &[usize], f: &[usize]| {
            relative_change(spatial_time_mean(s, v, h), spatial_time_mean(s, v, f))
        };
        let dm = delta(method, &hist_idx, &fut_idx)?;
        let dg = delta(gcm, &hist_idx, &fut_idx)?;
        m_full.push(dm);
        g_full.push(dg);
        dfull.push((dm - dg).abs());

        let mut ds = 0.0;
        for s in 0..4 {
            let (h, f) = (&hist_seasons[s], &fut_seasons[s]);
            if h.is_empty() || f.is_empty() {
                return Err(Error::Period(format!(
                    "season {} has no complete instance in both periods",
                    Season::ALL[s].name()
                )));
            }
            ds += (delta(method, h, f)? - delta(gcm, h, f)?).abs();
            for &c in &cells {
                let cm = relative_change(cell_time_mean(method, v, c, h), cell_time_mean(method, v, c, f));
                let cg = relative_change(cell_time_mean(gcm, v, c, h), cell_time_mean(gcm, v, c, f));
                if let (Ok(cm), Ok(cg)) = (cm, cg) {
                    season_maps.push([
                        name.clone(),
                        Season::ALL[s].name().to_string(),
                        c.to_string(),
                        cm.to_string(),
                        cg.to_string(),
                    ]);
                }
            }
        }
        dseason.push(ds / 4.0);
    }
    Ok(GcmResult {
        rho: VarScores::new(rho),
        anomalies: VarScores::new(anom),
        delta_full: VarScores::new(dfull),
        delta_season: VarScores::new(dseason),
        method_delta_full: m_full,
        gcm_delta_full: g_full,
        excluded,
        dropped_seasons: d1 + d2,
        anomaly_curves,
        season_maps,
    })
}

/// Relative change of the spatial mean between two periods, per variable.
pub fn delta_full(stack: &FieldStack, hist: &Period, fut: &Period) -> Result<Vec<f64>> {
    let h = period_indices(stack, hist, "historical")?;
    let f = period_indices(stack, fut, "future")?;
    (0..stack.n_vars())
        .map(|v| relative_change(spatial_time_mean(stack, v, &h), spatial_time_mean(stack, v, &f)))
        .collect()
}

/// Named scalar metrics and curves for one method.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub method: String,
    pub scalars: Vec<(String, f64)>,
    pub curves: Vec<(String, CsvTable)>,
    pub notes: Vec<String>,
}

impl MetricReport {
    pub fn new(method: &str) -> Self {
        Self {
            method: method.to_string(),
            scalars: Vec::new(),
            curves: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.scalars.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    fn push_scores(&mut self, name: &str, scores: &VarScores, variables: &[String]) {
        self.scalars.push((name.to_string(), scores.mean));
        if variables.len() > 1 {
            for (v, s) in variables.iter().zip(&scores.per_var) {
                self.scalars.push((format!("{name}[{v}]"), *s));
            }
        }
    }
}

/// Observation-relative metrics. Metrics whose preconditions fail (single
/// variable, masked grid, no altitude map) are skipped with a note.
pub fn evaluate_vs_reference(
    name: &str,
    method: &FieldStack,
    obs: &FieldStack,
    altitude: Option<&[f64]>,
    cfg: &MetricConfig,
) -> Result<MetricReport> {
    cfg.validate()?;
    let vars = obs.variables().to_vec();
    let mut r = MetricReport::new(name);
    let (dmu, dsd) = delta_mean_std(method, obs)?;
    r.push_scores("delta_mu", &dmu, &vars);
    r.push_scores("delta_sigma", &dsd, &vars);
    if obs.n_vars() >= 2 {
        let iv = intervar_corr_consistency(method, obs)?;
        r.scalars.push(("delta_rho".into(), iv.score));
        if iv.excluded > 0 {
            r.notes.push(format!("delta_rho: {} zero-variance cell/pair combinations excluded", iv.excluded));
        }
    } else {
        r.notes.push("delta_rho: skipped, needs at least two variables".into());
    }
    let sp = spatial_spearman_error(method, obs, None, cfg)?;
    r.push_scores("delta_R", &sp.scores, &vars);
    r.curves.push(("spearman_distance".into(), sp.curves));
    if obs.is_fully_valid() {
        let ssm = spectrum_metric(method, obs, cfg)?;
        r.push_scores("SSM", &ssm.scores, &vars);
        r.curves.push(("spectra".into(), ssm.curves));
    } else {
        r.notes.push("SSM: skipped on a masked grid".into());
    }
    match altitude {
        Some(alt) => {
            let ov = variogram_metric(method, obs, alt, cfg)?;
            r.push_scores("OVM", &ov.scores, &vars);
            if ov.degenerate.iter().any(|&d| d) {
                r.notes.push("OVM: reference variogram is identically zero".into());
            }
            r.curves.push(("variograms".into(), ov.curves));
            let cells = mountain_cells(obs, alt, cfg.theta_alt)?;
            let mt = spatial_spearman_error(method, obs, Some(&cells), cfg)?;
            r.push_scores("delta_R_mountain", &mt.scores, &vars);
            r.curves.push(("spearman_distance_mountain".into(), mt.curves));
        }
        None => r.notes.push("OVM: skipped, no altitude map".into()),
    }
    let ks = ks_statistic(method, obs, cfg.region.as_ref())?;
    r.push_scores("KS", &ks.scores, &vars);
    r.curves.push(("cdfs".into(), ks.curves));
    let ex = extreme_metrics(method, obs, cfg)?;
    r.push_scores("extreme_f", &ex.frequency, &vars);
    r.push_scores("extreme_I", &ex.intensity, &vars);
    if ex.excluded > 0 {
        r.notes.push(format!("extreme_I: {} cells without exceedances excluded", ex.excluded));
    }
    Ok(r)
}

/// Driving-model-relative metrics.
pub fn evaluate_vs_gcm(name: &str, method: &FieldStack, gcm: &FieldStack, cfg: &MetricConfig) -> Result<MetricReport> {
    let vars = gcm.variables().to_vec();
    let g = gcm_consistency(method, gcm, cfg)?;
    let mut r = MetricReport::new(name);
    r.push_scores("rho_GCM", &g.rho, &vars);
    r.push_scores("A", &g.anomalies, &vars);
    r.push_scores("delta_full", &g.delta_full, &vars);
    r.push_scores("delta_season", &g.delta_season, &vars);
    for (v, (m, c)) in vars.iter().zip(g.method_delta_full.iter().zip(&g.gcm_delta_full)) {
        r.notes.push(format!("{v}: full-period change {m:.4}% (driving model {c:.4}%)"));
    }
    if g.dropped_seasons > 0 {
        r.notes.push(format!("{} incomplete season instances dropped", g.dropped_seasons));
    }
    if g.excluded > 0 {
        r.notes.push(format!("rho_GCM: {} zero-variance cells excluded", g.excluded));
    }
    r.curves.push(("annual_anomalies".into(), g.anomaly_curves));
    r.curves.push(("season_delta_maps".into(), g.season_maps));
    Ok(r)
}

/// Metric x method table; metrics missing for a method are left empty.
pub fn metrics_table(reports: &[MetricReport]) -> CsvTable {
    let mut header = vec!["metric"];
    header.extend(reports.iter().map(|r| r.method.as_str()));
    let mut table = CsvTable::new(&header);
    let mut names: Vec<&str> = Vec::new();
    for r in reports {
        for (n, _) in &r.scalars {
            if !names.contains(&n.as_str()) {
                names.push(n);
            }
        }
    }
    for n in names {
        let mut row = vec![n.to_string()];
        row.extend(reports.iter().map(|r| r.get(n).map(|v| v.to_string()).unwrap_or_default()));
        table.push(row);
    }
    table
}

/// Whether larger values of a metric are better.
pub fn higher_is_better(metric: &str) -> bool {
    metric.starts_with("rho_GCM")
}

/// Min-max rescaling per metric across methods, oriented so that 1 is the
/// best method and 0 the worst. Ties map to 1.
pub fn radar_normalize(reports: &[MetricReport]) -> CsvTable {
    let mut header = vec!["metric"];
    header.extend(reports.iter().map(|r| r.method.as_str()));
    let mut table = CsvTable::new(&header);
    let mut names: Vec<&str> = Vec::new();
    for r in reports {
        for (n, _) in &r.scalars {
            if !n.contains('[') && !names.contains(&n.as_str()) {
                names.push(n);
            }
        }
    }
    for n in names {
        let vals: Vec<Option<f64>> = reports.iter().map(|r| r.get(n).filter(|v| v.is_finite())).collect();
        let present: Vec<f64> = vals.iter().flatten().cloned().collect();
        if present.is_empty() {
            continue;
        }
        let lo = present.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = present.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut row = vec![n.to_string()];
        for v in vals {
            row.push(match v {
                None => String::new(),
                Some(x) => {
                    let s = if hi > lo { (x - lo) / (hi - lo) } else { 1.0 };
                    let s = if higher_is_better(n) || hi == lo { s } else { 1.0 - s };
                    s.to_string()
                }
            });
        }
        table.push(row);
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{GridSpec, WIND_UNITS};
    use crate::rng::normal_vec;

    fn stack(rows: usize, cols: usize, vars: usize, times: Vec<i64>, values: Vec<f64>) -> FieldStack {
        let g = GridSpec::regular_km(rows, cols, 25.0, 25.0, 45.0, 5.0).unwrap();
        FieldStack::new(
            g,
            (0..vars).map(|v| format!("v{v}")).collect(),
            vec![WIND_UNITS.into(); vars],
            times,
            values,
            vec![true; rows * cols],
        )
        .unwrap()
    }

    fn random(rows: usize, cols: usize, vars: usize, nt: usize, seed: u64) -> FieldStack {
        stack(rows, cols, vars, (0..nt as i64).collect(), normal_vec(seed, 0, rows * cols * vars * nt))
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn moments_shift() {
        let obs = random(4, 4, 2, 6, 1);
        let (a, b) = delta_mean_std(&obs.map(|x| x - 1.5), &obs).unwrap();
        assert!((a.mean - 1.5).abs() < 1e-12);
        assert!(b.mean < 1e-12);
    }

    #[test]
    fn sign_flip_gives_two() {
        let nt = 5;
        let base: Vec<f64> = (0..nt).map(|t| t as f64).collect();
        let mut obs_vals = Vec::new();
        let mut m_vals = Vec::new();
        for t in 0..nt {
            for _ in 0..2 {
                obs_vals.extend([base[t]; 4]);
            }
            m_vals.extend([base[t]; 4]);
            m_vals.extend([-base[t]; 4]);
        }
        let obs = stack(2, 2, 2, (0..nt as i64).collect(), obs_vals);
        let m = stack(2, 2, 2, (0..nt as i64).collect(), m_vals);
        let r = intervar_corr_consistency(&m, &obs).unwrap();
        assert!((r.score - 2.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_hand_case() {
        // 2x2 grid, 3 steps; ranks after removing the spatial mean are the
        // raw ranks: t0 [1,2,3,4], t1 [2,1,4,3], t2 [4,3,2,1]
        let vals = vec![1.0, 2.0, 3.0, 4.0, 2.0, 1.0, 4.0, 3.0, 4.0, 3.0, 2.0, 1.0];
        let s = stack(2, 2, 1, vec![0, 1, 2], vals);
        let r = spearman_matrix(&s, 0, &[0, 1, 2, 3]);
        // cell 0: [1,2,4], cell 1: [2,1,3]: centred [-4/3,-1/3,5/3] and [0,-1,1]
        let expect = (0.0 + 1.0 / 3.0 + 5.0 / 3.0) / ((42.0f64 / 9.0) * 2.0).sqrt();
        assert!((r[1] - expect).abs() < 1e-12);
        assert_eq!(r[0], 1.0);
        let cube = s.map(|x| x * x * x + 2.0);
        let e = spatial_spearman_error(&cube, &s, None, &MetricConfig::default()).unwrap();
        assert_eq!(e.scores.mean, 0.0);
    }

    #[test]
    fn spearman_guard() {
        let s = random(3, 3, 1, 4, 3);
        let cfg = MetricConfig {
            spearman_max_cells: 4,
            ..MetricConfig::default()
        };
        assert!(spatial_spearman_error(&s, &s, None, &cfg).is_err());
        let cfg = MetricConfig {
            spearman_subsample: Some(4),
            ..cfg
        };
        assert_eq!(spatial_spearman_error(&s, &s, None, &cfg).unwrap().n_cells, 4);
    }

    #[test]
    fn ssm_scaling() {
        let obs = random(16, 16, 1, 4, 5);
        let cfg = MetricConfig {
            k_max: 1.0,
            ..MetricConfig::default()
        };
        assert_eq!(spectrum_metric(&obs, &obs, &cfg).unwrap().scores.mean, 0.0);
        let so = &isotropic_spectrum(&obs, 32).unwrap()[0];
        let ssm = spectrum_metric(&obs.map(|x| 2.0 * x), &obs, &cfg).unwrap().scores.mean;
        let rms = (so.power.iter().map(|p| (3.0 * p).powi(2)).sum::<f64>() / so.power.len() as f64).sqrt();
        let expect = rms / mean(&so.power);
        assert!((ssm - expect).abs() < 1e-9);
    }

    #[test]
    fn variogram_hand_case() {
        // 1x3 strip, 25 km apart, one step: values 0, 1, 3
        let g = GridSpec::regular_km(2, 3, 25.0, 25.0, 0.0, 0.0).unwrap();
        let s = FieldStack::new(
            g,
            vec!["v".into()],
            vec![WIND_UNITS.into()],
            vec![0],
            vec![0.0, 1.0, 3.0, 0.0, 0.0, 0.0],
            vec![true; 6],
        )
        .unwrap();
        let alt = [900.0, 900.0, 900.0, 0.0, 0.0, 0.0];
        let cells = mountain_cells(&s, &alt, 800.0).unwrap();
        let dx = s.grid().distance_km(0, 1);
        let gam = semivariogram(&s, 0, &cells, 3.0 * dx, dx);
        // pairs at dx: (0,1) diff 1, (1,2) diff 2 -> (1 + 4) / 4
        assert!((gam[0].unwrap() - 1.25).abs() < 1e-12);
        // pair at 2 dx: (0,2) diff 3 -> 9 / 2
        assert!((gam[1].unwrap() - 4.5).abs() < 1e-12);
        assert!(gam[2].is_none());
    }

    #[test]
    fn constant_variogram_is_flagged() {
        let s = stack(3, 3, 1, vec![0, 1], vec![2.0; 18]);
        let r = variogram_metric(&s, &s, &[1000.0; 9], &MetricConfig::default()).unwrap();
        assert_eq!(r.scores.mean, 0.0);
        assert!(r.degenerate[0]);
        assert!(matches!(
            variogram_metric(&s, &s, &[0.0; 9], &MetricConfig::default()),
            Err(Error::EmptyRegion(_))
        ));
    }

    #[test]
    fn ks_hand_cases() {
        assert!((ks_two_sample(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(ks_two_sample(&[1.0, 2.0], &[5.0, 6.0]), 1.0);
        assert_eq!(ks_two_sample(&[1.0, 2.0, 2.0], &[2.0, 1.0, 2.0]), 0.0);
    }

    #[test]
    fn extremes_hand_case() {
        // q = 0.6 on [1, 2, 3, 4, 5]: h = 2.4 -> 3.4; exceedances 4, 5
        let obs = stack(2, 2, 1, (0..5).collect(), (1..=5).flat_map(|x| [x as f64; 4]).collect());
        let m = stack(2, 2, 1, (0..5).collect(), [1.0, 1.0, 1.0, 4.0, 6.0].iter().flat_map(|x| [*x; 4]).collect());
        let r = extreme_metrics_min(&m, &obs, 0.6, 5).unwrap();
        assert!(r.frequency.mean.abs() < 1e-15);
        assert!((r.intensity.mean - 0.5).abs() < 1e-12);
    }

    #[test]
    fn season_grouping_drops_incomplete() {
        let start = calendar::days(chrono::NaiveDate::from_ymd_opt(2000, 1, 1).unwrap());
        let times: Vec<i64> = (0..366).map(|d| start + d).collect();
        let idx: Vec<usize> = (0..times.len()).collect();
        let (groups, dropped) = season_indices(&times, &idx);
        // Jan-Feb 2000 (DJF 2000 without December) and December 2000 are incomplete
        assert_eq!(dropped, 2);
        assert!(groups[0].is_empty());
        assert_eq!(groups[1].len(), 31 + 30 + 31);
    }

    #[test]
    fn delta_full_of_ten_percent() {
        let start = calendar::days(chrono::NaiveDate::from_ymd_opt(2000, 1, 1).unwrap());
        let times: Vec<i64> = (0..4).map(|d| start + d).collect();
        let s = stack(2, 2, 1, times.clone(), [10.0, 10.0, 11.0, 11.0].iter().flat_map(|x| [*x; 4]).collect());
        let d = delta_full(
            &s,
            &Period { start: times[0], end: times[1] },
            &Period { start: times[2], end: times[3] },
        )
        .unwrap();
        assert!((d[0] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn radar_orientation() {
        let mut a = MetricReport::new("a");
        a.scalars = vec![("KS".into(), 0.1), ("rho_GCM".into(), 0.2)];
        let mut b = MetricReport::new("b");
        b.scalars = vec![("KS".into(), 0.3), ("rho_GCM".into(), 0.9)];
        let t = radar_normalize(&[a, b]);
        assert_eq!(t.rows[0], vec!["KS", "1", "0"]);
        assert_eq!(t.rows[1], vec!["rho_GCM", "0", "1"]);
    }
}
