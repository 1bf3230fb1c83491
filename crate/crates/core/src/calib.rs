//! Ensemble calibration diagnostics and noise-scale tuning.

use rand::Rng;
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::csv::CsvTable;
use crate::error::{Error, Result};
use crate::fields::FieldStack;
use crate::rng::stream_rng;

pub const DEFAULT_LEVELS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Ensemble CRPS of one value, `mean|x_i - y| - sum_{i,j}|x_i - x_j| / (2 n^2)`.
pub fn crps(members: &[f64], obs: f64) -> f64 {
    let n = members.len() as f64;
    let skill = members.iter().map(|x| (x - obs).abs()).sum::<f64>() / n;
    let mut sorted = members.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // sum_{i,j} |x_i - x_j| = 2 sum_i (2i - n + 1) x_(i)
    let pair: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * i as f64 - n + 1.0) * x)
        .sum::<f64>()
        * 2.0;
    skill - 0.5 * pair / (n * n)
}

/// Verification points with their ensembles, stored point-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    n_members: usize,
    members: Vec<f64>,
    obs: Vec<f64>,
}

impl Verification {
    pub fn new(n_members: usize, members: Vec<f64>, obs: Vec<f64>) -> Result<Self> {
        if n_members == 0 || members.len() != n_members * obs.len() {
            return Err(Error::Shape(format!(
                "{} member values for {} points and {n_members} members",
                members.len(),
                obs.len()
            )));
        }
        Ok(Self { n_members, members, obs })
    }

    /// Points over all times and valid cells of variable `v`.
    pub fn from_stacks(members: &[FieldStack], obs: &FieldStack, v: usize) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::SpreadUndefined);
        }
        for m in members {
            m.check_aligned(obs)?;
        }
        let cells = obs.valid_cells();
        let mut mv = Vec::with_capacity(members.len() * cells.len() * obs.n_times());
        let mut ov = Vec::with_capacity(cells.len() * obs.n_times());
        for t in 0..obs.n_times() {
            let so = obs.slice(t, v);
            let sm: Vec<&[f64]> = members.iter().map(|m| m.slice(t, v)).collect();
            for &c in &cells {
                ov.push(so[c]);
                mv.extend(sm.iter().map(|s| s[c]));
            }
        }
        Self::new(members.len(), mv, ov)
    }

    pub fn n_points(&self) -> usize {
        self.obs.len()
    }

    pub fn n_members(&self) -> usize {
        self.n_members
    }

    pub fn point(&self, i: usize) -> (&[f64], f64) {
        (&self.members[i * self.n_members..(i + 1) * self.n_members], self.obs[i])
    }

    fn need_two(&self) -> Result<()> {
        if self.n_members < 2 {
            return Err(Error::SpreadUndefined);
        }
        Ok(())
    }
}

pub fn mean_crps(ver: &Verification) -> f64 {
    let per: Vec<f64> = (0..ver.n_points())
        .into_par_iter()
        .map(|i| {
            let (m, o) = ver.point(i);
            crps(m, o)
        })
        .collect();
    per.iter().sum::<f64>() / per.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpreadSkill {
    /// RMS ensemble standard deviation (`n - 1` convention).
    pub spread: f64,
    /// RMS error of the ensemble mean.
    pub rmse: f64,
    /// `spread / rmse`; infinite when `rmse == 0`.
    pub ratio: f64,
    pub degenerate: bool,
}

pub fn spread_skill(ver: &Verification) -> Result<SpreadSkill> {
    ver.need_two()?;
    let n = ver.n_members as f64;
    let (mut var_sum, mut err_sum) = (0.0, 0.0);
    for i in 0..ver.n_points() {
        let (m, o) = ver.point(i);
        let mean = m.iter().sum::<f64>() / n;
        var_sum += m.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        err_sum += (mean - o).powi(2);
    }
    let np = ver.n_points() as f64;
    let spread = (var_sum / np).sqrt();
    let rmse = (err_sum / np).sqrt();
    let degenerate = rmse == 0.0;
    Ok(SpreadSkill {
        spread,
        rmse,
        ratio: if degenerate { f64::INFINITY } else { spread / rmse },
        degenerate,
    })
}

/// Counts of the reference's rank among the members (`n_members + 1` bins);
/// ties are broken uniformly at random.
pub fn rank_histogram(ver: &Verification, seed: u64) -> Result<Vec<u64>> {
    ver.need_two()?;
    let mut rng = stream_rng(seed, 0);
    let mut counts = vec![0u64; ver.n_members + 1];
    for i in 0..ver.n_points() {
        let (m, o) = ver.point(i);
        let below = m.iter().filter(|&&x| x < o).count();
        let ties = m.iter().filter(|&&x| x == o).count();
        let rank = if ties == 0 { below } else { below + rng.random_range(0..=ties) };
        counts[rank] += 1;
    }
    Ok(counts)
}

/// p-value of a chi-square test of uniformity.
pub fn chi_square_uniform_p(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).unwrap();
    1.0 - dist.cdf(stat)
}

fn quantile_sorted(s: &[f64], q: f64) -> f64 {
    let h = q * (s.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(s.len() - 1);
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}

/// `(nominal, empirical)` coverage of central ensemble intervals.
pub fn reliability(ver: &Verification, levels: &[f64]) -> Result<Vec<(f64, f64)>> {
    ver.need_two()?;
    if let Some(l) = levels.iter().find(|&&l| !(l > 0.0 && l < 1.0)) {
        return Err(Error::Spec(format!("coverage level {l} outside (0, 1)")));
    }
    let mut inside = vec![0usize; levels.len()];
    let mut sorted = vec![0.0; ver.n_members];
    for i in 0..ver.n_points() {
        let (m, o) = ver.point(i);
        sorted.copy_from_slice(m);
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (k, &p) in levels.iter().enumerate() {
            let lo = quantile_sorted(&sorted, (1.0 - p) / 2.0);
            let hi = quantile_sorted(&sorted, (1.0 + p) / 2.0);
            if o >= lo && o <= hi {
                inside[k] += 1;
            }
        }
    }
    Ok(levels
        .iter()
        .zip(inside)
        .map(|(&p, c)| (p, c as f64 / ver.n_points() as f64))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub noise_scale: f64,
    pub variables: Vec<String>,
    pub crps: Vec<f64>,
    pub spread_skill: Vec<SpreadSkill>,
    pub rank_histogram: Vec<Vec<u64>>,
    pub reliability: Vec<Vec<(f64, f64)>>,
    pub n_points: usize,
}

impl CalibrationReport {
    /// Mean spread-skill ratio over variables.
    pub fn mean_ratio(&self) -> f64 {
        self.spread_skill.iter().map(|s| s.ratio).sum::<f64>() / self.spread_skill.len() as f64
    }

    /// RMS spread pooled over variables.
    pub fn pooled_spread(&self) -> f64 {
        (self.spread_skill.iter().map(|s| s.spread * s.spread).sum::<f64>() / self.spread_skill.len() as f64).sqrt()
    }

    pub fn scores_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&["noise_scale", "variable", "crps", "spread", "rmse", "spread_skill"]);
        for (v, name) in self.variables.iter().enumerate() {
            let s = &self.spread_skill[v];
            t.push([
                self.noise_scale.to_string(),
                name.clone(),
                self.crps[v].to_string(),
                s.spread.to_string(),
                s.rmse.to_string(),
                s.ratio.to_string(),
            ]);
        }
        t
    }

    pub fn rank_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&["noise_scale", "variable", "bin", "count"]);
        for (v, name) in self.variables.iter().enumerate() {
            for (b, c) in self.rank_histogram[v].iter().enumerate() {
                t.push([self.noise_scale.to_string(), name.clone(), b.to_string(), c.to_string()]);
            }
        }
        t
    }

    pub fn reliability_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&["noise_scale", "variable", "nominal", "empirical"]);
        for (v, name) in self.variables.iter().enumerate() {
            for (p, e) in &self.reliability[v] {
                t.push([self.noise_scale.to_string(), name.clone(), p.to_string(), e.to_string()]);
            }
        }
        t
    }
}

/// All diagnostics for one ensemble, per variable.
pub fn calibration_report(
    members: &[FieldStack],
    obs: &FieldStack,
    noise_scale: f64,
    levels: &[f64],
    seed: u64,
) -> Result<CalibrationReport> {
    let mut report = CalibrationReport {
        noise_scale,
        variables: obs.variables().to_vec(),
        crps: Vec::new(),
        spread_skill: Vec::new(),
        rank_histogram: Vec::new(),
        reliability: Vec::new(),
        n_points: 0,
    };
    for v in 0..obs.n_vars() {
        let ver = Verification::from_stacks(members, obs, v)?;
        report.spread_skill.push(spread_skill(&ver)?);
        report.crps.push(mean_crps(&ver));
        report.rank_histogram.push(rank_histogram(&ver, crate::rng::derive_seed(seed, &[v as u64]))?);
        report.reliability.push(reliability(&ver, levels)?);
        report.n_points = ver.n_points();
    }
    Ok(report)
}

/// Produces an ensemble for a given noise scale; seeds must not depend on
/// the scale.
pub trait EnsembleGenerator {
    fn generate(&self, noise_scale: f64) -> Result<Vec<FieldStack>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tuning {
    pub reports: Vec<CalibrationReport>,
    pub recommended: f64,
    /// Whether pooled spread strictly increases along the ascending grid.
    pub monotone: bool,
}

/// Regenerates the ensemble for each scale and recommends the one whose
/// spread-skill ratio is nearest 1.
pub fn tune_noise_scale<G: EnsembleGenerator>(
    generator: &G,
    a_grid: &[f64],
    obs: &FieldStack,
    levels: &[f64],
    seed: u64,
) -> Result<Tuning> {
    if a_grid.is_empty() {
        return Err(Error::Spec("empty noise-scale grid".into()));
    }
    let mut grid = a_grid.to_vec();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();
    let mut reports = Vec::with_capacity(grid.len());
    for &a in &grid {
        let members = generator.generate(a)?;
        let report = calibration_report(&members, obs, a, levels, seed)?;
        log::info!("noise scale {a}: spread-skill {:.4}", report.mean_ratio());
        reports.push(report);
    }
    let monotone = reports
        .windows(2)
        .all(|w| w[1].pooled_spread() > w[0].pooled_spread());
    if !monotone {
        log::warn!("ensemble spread is not strictly increasing in the noise scale; check member seeding");
    }
    let best = reports
        .iter()
        .min_by(|x, y| {
            (x.mean_ratio() - 1.0)
                .abs()
                .partial_cmp(&(y.mean_ratio() - 1.0).abs())
                .unwrap()
        })
        .unwrap();
    Ok(Tuning {
        recommended: best.noise_scale,
        reports,
        monotone,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_crps(m: &[f64], y: f64) -> f64 {
        let n = m.len() as f64;
        let a = m.iter().map(|x| (x - y).abs()).sum::<f64>() / n;
        let mut b = 0.0;
        for x in m {
            for z in m {
                b += (x - z).abs();
            }
        }
        a - 0.5 * b / (n * n)
    }

    #[test]
    fn crps_hand_cases() {
        assert_eq!(crps(&[0.0, 2.0], 1.0), 0.5);
        assert_eq!(crps(&[3.0], 3.0), 0.0);
        assert_eq!(crps(&[3.0], 1.0), 2.0);
        let m = [0.3, -1.2, 4.0, 0.3, 2.2];
        assert!((crps(&m, 0.7) - brute_crps(&m, 0.7)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_and_biased_spread() {
        let v = Verification::new(2, vec![1.0, 1.0, 2.0, 2.0], vec![1.0, 2.0]).unwrap();
        let s = spread_skill(&v).unwrap();
        assert!(s.degenerate && s.ratio.is_infinite());
        let v = Verification::new(2, vec![3.0, 3.0, 4.0, 4.0], vec![1.0, 2.0]).unwrap();
        let s = spread_skill(&v).unwrap();
        assert_eq!(s.ratio, 0.0);
        assert_eq!(s.rmse, 2.0);
        let one = Verification::new(1, vec![1.0], vec![1.0]).unwrap();
        assert!(matches!(spread_skill(&one), Err(Error::SpreadUndefined)));
    }

    #[test]
    fn rank_extremes() {
        let v = Verification::new(3, vec![1.0, 2.0, 3.0, 5.0, 6.0, 7.0], vec![0.0, -1.0]).unwrap();
        assert_eq!(rank_histogram(&v, 0).unwrap(), vec![2, 0, 0, 0]);
        let v = Verification::new(3, vec![1.0, 2.0, 3.0], vec![9.0]).unwrap();
        assert_eq!(rank_histogram(&v, 0).unwrap(), vec![0, 0, 0, 1]);
    }

    #[test]
    fn reliability_hand_case() {
        // members 0, 1, 2, 3: 0.25 -> 0.75, 0.75 -> 2.25
        let members = vec![0.0, 1.0, 2.0, 3.0].repeat(4);
        let v = Verification::new(4, members, vec![0.5, 0.75, 2.25, 2.5]).unwrap();
        assert_eq!(reliability(&v, &[0.5]).unwrap(), vec![(0.5, 0.5)]);
        assert!(reliability(&v, &[1.0]).is_err());
        let point = Verification::new(3, vec![1.0; 3], vec![2.0]).unwrap();
        assert!(reliability(&point, &DEFAULT_LEVELS).unwrap().iter().all(|p| p.1 == 0.0));
    }
}
