//! Run configuration: a flat `key=value` file overlaid on built-in defaults,
//! then on command-line overrides.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use scaleflow::calib::DEFAULT_LEVELS;
use scaleflow::fields::calendar;
use scaleflow::flow::{Architecture, EnsembleSpec, Optimizer, TrainConfig};
use scaleflow::kv::KvBlock;
use scaleflow::metrics::{MetricConfig, Period, Region};
use scaleflow::spectral::SpectralCutoff;
use scaleflow::synth::{Scenario, ScenarioConfig};
use scaleflow::Separator;

use crate::CliError;

/// Every accepted key with its default; an empty default means unset.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("threads", "1"),
    ("out", "run"),
    ("source_train", ""),
    ("target_train", ""),
    ("source_eval", ""),
    ("target_eval", ""),
    ("train_period", ""),
    ("eval_period", ""),
    ("altitude", ""),
    ("separator", "fourier:1200"),
    ("cutoff_candidates", "300,400,500,600,750,1200"),
    ("cutoff_threshold", "0.55"),
    ("bands", ""),
    ("hidden", "16,16"),
    ("kernel", "3"),
    ("learning_rate", "0.003"),
    ("batch_size", "8"),
    ("epochs", "20"),
    ("optimizer", "momentum"),
    ("momentum", "0.9"),
    ("n_noise_draws", "1"),
    ("pair_noise_scale", "1.1"),
    ("gradient_check", "false"),
    ("n_members", "10"),
    ("noise_scale", "1.1"),
    ("ode_steps", "50"),
    ("k_max", "0.005"),
    ("n_bins", "32"),
    ("h_max", "300"),
    ("h_bin", "25"),
    ("theta_alt", "800"),
    ("quantile", "0.95"),
    ("spearman_max_cells", "5000"),
    ("spearman_subsample", ""),
    ("region", ""),
    ("hist", ""),
    ("fut", ""),
    ("ovm", ""),
    ("cdft_by_month", "false"),
    ("methods", ""),
    ("a_grid", "0.8,1.0,1.1,1.2"),
    ("levels", "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9"),
    ("scenario", "shared_largescale"),
    ("synth_rows", "32"),
    ("synth_cols", "32"),
    ("synth_dx_km", "25"),
    ("synth_times", ""),
    ("synth_variables", "sfcWind"),
    ("synth_beta", "2"),
    ("synth_mean", "5"),
    ("synth_ar1", "0.5"),
    ("synth_cutoff_km", "500"),
    ("synth_damping", ""),
    ("synth_gain", "2"),
    ("synth_offset", "3"),
    ("synth_drift_pct", "10"),
];

/// Keys written by the tool itself; accepted and ignored on input.
pub const MANIFEST_PREFIX: &str = "manifest.";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SeparatorChoice {
    Fixed(Separator),
    /// Fourier cutoff chosen by the domain classifier.
    Auto,
}

impl FromStr for SeparatorChoice {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        if s.trim() == "fourier:auto" {
            return Ok(SeparatorChoice::Auto);
        }
        s.parse::<Separator>()
            .map(SeparatorChoice::Fixed)
            .map_err(|e| CliError::Usage(format!("separator `{s}`: {e}")))
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Effective configuration: defaults, file, overrides.
    pub kv: KvBlock,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
    pub seed: u64,
    pub threads: usize,
    pub out: PathBuf,
    pub separator: SeparatorChoice,
    pub cutoff_candidates: Vec<f64>,
    pub cutoff_threshold: f64,
    pub bands: Vec<f64>,
    pub architecture: Architecture,
    pub train: TrainConfig,
    pub n_noise_draws: usize,
    pub pair_noise_scale: f64,
    pub ensemble: EnsembleSpec,
    pub metrics: MetricConfig,
    pub ovm: Option<bool>,
    pub cdft_by_month: bool,
    pub methods: Vec<(String, String)>,
    pub a_grid: Vec<f64>,
    pub levels: Vec<f64>,
    pub scenario: Scenario,
    pub synth: ScenarioConfig,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn value<T: FromStr>(kv: &KvBlock, key: &str) -> Result<T, CliError> {
    let raw = kv.get(key).unwrap_or("");
    raw.parse()
        .map_err(|_| usage(format!("config key `{key}`: cannot parse `{raw}`")))
}

fn optional<T: FromStr>(kv: &KvBlock, key: &str) -> Result<Option<T>, CliError> {
    match kv.get(key) {
        None | Some("") => Ok(None),
        Some(_) => value(kv, key).map(Some),
    }
}

fn list<T: FromStr>(kv: &KvBlock, key: &str) -> Result<Vec<T>, CliError> {
    match kv.get(key) {
        None | Some("") => Ok(Vec::new()),
        Some(raw) => scaleflow::kv::parse_list(raw).map_err(|e| usage(format!("config key `{key}`: {e}"))),
    }
}

fn boolean(kv: &KvBlock, key: &str) -> Result<bool, CliError> {
    match kv.get(key).unwrap_or("") {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(usage(format!("config key `{key}`: expected true or false, got `{other}`"))),
    }
}

fn period(kv: &KvBlock, key: &str) -> Result<Option<Period>, CliError> {
    let raw = match kv.get(key) {
        None | Some("") => return Ok(None),
        Some(r) => r,
    };
    let (a, b) = raw
        .split_once("..")
        .ok_or_else(|| usage(format!("config key `{key}`: expected START..END, got `{raw}`")))?;
    let start = calendar::parse(a.trim()).map_err(|e| usage(format!("config key `{key}`: {e}")))?;
    let end = calendar::parse(b.trim()).map_err(|e| usage(format!("config key `{key}`: {e}")))?;
    if end < start {
        return Err(usage(format!("config key `{key}`: period ends before it starts")));
    }
    Ok(Some(Period { start, end }))
}

impl RunConfig {
    /// Built-in defaults overlaid with `file` and then `overrides`.
    pub fn load(file: Option<&Path>, overrides: &KvBlock) -> Result<Self, CliError> {
        let mut kv = KvBlock::new();
        for (k, v) in KEYS {
            kv.set(k, v);
        }
        let mut base_dir = PathBuf::from(".");
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Core(scaleflow::Error::Io {
                    path: path.to_path_buf(),
                    source: e,
                })
            })?;
            let block = KvBlock::parse(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            check_keys(&block)?;
            for (k, v) in block.iter() {
                if !k.starts_with(MANIFEST_PREFIX) {
                    kv.set(k, v);
                }
            }
            if let Some(dir) = path.parent() {
                if !dir.as_os_str().is_empty() {
                    base_dir = dir.to_path_buf();
                }
            }
        }
        check_keys(overrides)?;
        kv.merge(overrides);
        Self::from_kv(kv, base_dir)
    }

    fn from_kv(kv: KvBlock, base_dir: PathBuf) -> Result<Self, CliError> {
        let seed: u64 = value(&kv, "seed")?;
        let threads: usize = value(&kv, "threads")?;
        if threads == 0 {
            return Err(usage("threads must be at least 1"));
        }
        let out = PathBuf::from(kv.get("out").unwrap_or("run"));
        let out = if out.is_absolute() { out } else { base_dir.join(out) };

        let hidden: Vec<usize> = list(&kv, "hidden")?;
        let kernel: usize = value(&kv, "kernel")?;
        if kernel % 2 == 0 {
            return Err(usage("kernel size must be odd"));
        }
        let mut architecture = Architecture::new(0, hidden);
        architecture.kernel = kernel;

        let optimizer = match kv.get("optimizer").unwrap_or("") {
            "sgd" => Optimizer::Sgd,
            "momentum" => Optimizer::Momentum(value(&kv, "momentum")?),
            other => return Err(usage(format!("optimizer must be sgd or momentum, got `{other}`"))),
        };
        let train = TrainConfig {
            learning_rate: value(&kv, "learning_rate")?,
            batch_size: value(&kv, "batch_size")?,
            epochs: value(&kv, "epochs")?,
            seed: scaleflow::rng::derive_seed(seed, &[3]),
            optimizer,
            gradient_check: boolean(&kv, "gradient_check")?,
        };
        if !(train.learning_rate > 0.0) {
            return Err(usage("learning_rate must be positive"));
        }
        let ensemble = EnsembleSpec {
            n_members: value(&kv, "n_members")?,
            noise_scale: value(&kv, "noise_scale")?,
            ode_steps: value(&kv, "ode_steps")?,
            seed: scaleflow::rng::derive_seed(seed, &[4]),
        };
        if ensemble.n_members == 0 || ensemble.ode_steps == 0 {
            return Err(usage("n_members and ode_steps must be at least 1"));
        }

        let region = match list::<f64>(&kv, "region")?.as_slice() {
            [] => None,
            [a, b, c, d] => Some(Region {
                lat_min: *a,
                lat_max: *b,
                lon_min: *c,
                lon_max: *d,
            }),
            _ => return Err(usage("region must be lat_min,lat_max,lon_min,lon_max")),
        };
        let metrics = MetricConfig {
            k_max: value(&kv, "k_max")?,
            n_bins: value(&kv, "n_bins")?,
            h_max: value(&kv, "h_max")?,
            h_bin: value(&kv, "h_bin")?,
            theta_alt: value(&kv, "theta_alt")?,
            quantile: value(&kv, "quantile")?,
            spearman_max_cells: value(&kv, "spearman_max_cells")?,
            spearman_subsample: optional(&kv, "spearman_subsample")?,
            seed: scaleflow::rng::derive_seed(seed, &[5]),
            region,
            hist: period(&kv, "hist")?,
            fut: period(&kv, "fut")?,
        };
        metrics.validate().map_err(|e| usage(e.to_string()))?;

        let methods = list::<String>(&kv, "methods")?
            .into_iter()
            .map(|m| {
                m.split_once(':')
                    .map(|(a, b)| (a.to_string(), b.to_string()))
                    .ok_or_else(|| usage(format!("methods entries must be name:path, got `{m}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;

        let levels: Vec<f64> = list(&kv, "levels")?;
        let levels = if levels.is_empty() { DEFAULT_LEVELS.to_vec() } else { levels };
        let a_grid: Vec<f64> = list(&kv, "a_grid")?;
        if a_grid.is_empty() {
            return Err(usage("a_grid must not be empty"));
        }

        let scenario: Scenario = kv
            .get("scenario")
            .unwrap_or("")
            .parse()
            .map_err(|e: scaleflow::Error| usage(e.to_string()))?;
        let synth = ScenarioConfig {
            n_rows: value(&kv, "synth_rows")?,
            n_cols: value(&kv, "synth_cols")?,
            dx_km: value(&kv, "synth_dx_km")?,
            n_times: optional(&kv, "synth_times")?,
            variables: list(&kv, "synth_variables")?,
            beta: value(&kv, "synth_beta")?,
            mean: value(&kv, "synth_mean")?,
            ar1: value(&kv, "synth_ar1")?,
            seed,
            cutoff_km: value(&kv, "synth_cutoff_km")?,
            damping: optional(&kv, "synth_damping")?,
            gain: value(&kv, "synth_gain")?,
            offset: value(&kv, "synth_offset")?,
            drift_pct: value(&kv, "synth_drift_pct")?,
        };

        let bands: Vec<f64> = list(&kv, "bands")?;
        for b in &bands {
            SpectralCutoff::new(*b).map_err(|e| usage(e.to_string()))?;
        }
        Ok(Self {
            seed,
            threads,
            out,
            separator: kv.get("separator").unwrap_or("").parse()?,
            cutoff_candidates: list(&kv, "cutoff_candidates")?,
            cutoff_threshold: value(&kv, "cutoff_threshold")?,
            bands,
            architecture,
            train,
            n_noise_draws: value(&kv, "n_noise_draws")?,
            pair_noise_scale: value(&kv, "pair_noise_scale")?,
            ensemble,
            metrics,
            ovm: match kv.get("ovm") {
                None | Some("") => None,
                Some(_) => Some(boolean(&kv, "ovm")?),
            },
            cdft_by_month: boolean(&kv, "cdft_by_month")?,
            methods,
            a_grid,
            levels,
            scenario,
            synth,
            kv,
            base_dir,
        })
    }

    /// Resolved path for a path-valued key, `None` when unset.
    pub fn path(&self, key: &str) -> Option<PathBuf> {
        match self.kv.get(key) {
            None | Some("") => None,
            Some(p) => Some(self.resolve(p)),
        }
    }

    pub fn resolve(&self, p: &str) -> PathBuf {
        let p = PathBuf::from(p);
        if p.is_absolute() {
            p
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf, CliError> {
        self.path(key)
            .ok_or_else(|| usage(format!("config key `{key}` is required for this command")))
    }

    pub fn train_period(&self) -> Result<Option<Period>, CliError> {
        period(&self.kv, "train_period")
    }

    pub fn eval_period(&self) -> Result<Option<Period>, CliError> {
        period(&self.kv, "eval_period")
    }

    /// Configuration recorded in the manifest: everything but the output
    /// directory, so runs into different directories compare equal.
    pub fn recorded(&self) -> KvBlock {
        let mut kv = KvBlock::new();
        for (k, v) in self.kv.iter() {
            if k != "out" {
                kv.set(k, v);
            }
        }
        kv
    }
}

fn check_keys(block: &KvBlock) -> Result<(), CliError> {
    for (k, _) in block.iter() {
        if !k.starts_with(MANIFEST_PREFIX) && !KEYS.iter().any(|(name, _)| *name == k) {
            return Err(usage(format!("unknown config key `{k}`")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse() {
        let cfg = RunConfig::load(None, &KvBlock::new()).unwrap();
        assert_eq!(cfg.threads, 1);
        assert_eq!(cfg.ensemble.n_members, 10);
        assert_eq!(cfg.ensemble.noise_scale, 1.1);
        assert!(matches!(cfg.separator, SeparatorChoice::Fixed(Separator::Fourier(_))));
    }

    #[test]
    fn overrides_win_and_unknown_keys_fail() {
        let mut o = KvBlock::new();
        o.set("separator", "blur:50");
        o.set("epochs", "3");
        let cfg = RunConfig::load(None, &o).unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert!(matches!(cfg.separator, SeparatorChoice::Fixed(Separator::Blur(_))));
        o.set("separator", "fourier:auto");
        assert_eq!(RunConfig::load(None, &o).unwrap().separator, SeparatorChoice::Auto);
        let mut bad = KvBlock::new();
        bad.set("epoch", "3");
        assert!(matches!(RunConfig::load(None, &bad), Err(CliError::Usage(_))));
    }
}
