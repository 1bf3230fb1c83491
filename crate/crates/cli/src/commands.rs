//! Pipeline commands. Each reads its inputs from the configuration and the
//! run directory and writes through [`Outputs`].

use std::path::Path;

use scaleflow::calib::{tune_noise_scale, EnsembleGenerator};
use scaleflow::cdft::{cdft_correct, CdftConfig};
use scaleflow::csv::CsvTable;
use scaleflow::cutoff::select_cutoff;
use scaleflow::flow::{
    decode_model, encode_model, ensemble_stats, loss_curve_csv, sample, train, Architecture, ConvNet,
    EnsembleSpec,
};
use scaleflow::kv::KvBlock;
use scaleflow::metrics::{evaluate_vs_gcm, evaluate_vs_reference, metrics_table, radar_normalize, MetricReport};
use scaleflow::pairs::{fit_normalization, project_source, regrid_to, NormalizationParams, PairFactory};
use scaleflow::rng::derive_seed;
use scaleflow::spectral::{band_decompose, isotropic_spectrum, SpectralCutoff};
use scaleflow::synth::make_scenario;
use scaleflow::wfld::read_fieldstack;
use scaleflow::{Error, FieldStack, GridSpec, Separator};

use crate::config::{RunConfig, SeparatorChoice};
use crate::manifest::{self, Outputs};
use crate::CliError;

pub const MODEL_FILE: &str = "checkpoints/model.wfmd";
pub const NORMALIZATION_FILE: &str = "checkpoints/normalization.txt";
pub const MEMBERS_DIR: &str = "members";

fn read_optional_period(cfg: &RunConfig, key: &str, eval: bool) -> Result<Option<FieldStack>, CliError> {
    let Some(path) = cfg.path(key) else {
        return Ok(None);
    };
    let stack = read_fieldstack(&path)?;
    let period = if eval { cfg.eval_period()? } else { cfg.train_period()? };
    Ok(Some(match period {
        Some(p) => restrict(stack, p.start, p.end, key)?,
        None => stack,
    }))
}

fn restrict(stack: FieldStack, start: i64, end: i64, key: &str) -> Result<FieldStack, CliError> {
    let out = stack.select_period(start, end);
    if out.n_times() == 0 {
        return Err(CliError::Core(Error::Period(format!("`{key}` has no time steps in the selected period"))));
    }
    Ok(out)
}

fn read_train(cfg: &RunConfig, key: &str) -> Result<FieldStack, CliError> {
    cfg.require_path(key)?;
    Ok(read_optional_period(cfg, key, false)?.expect("path checked"))
}

fn read_eval(cfg: &RunConfig, key: &str) -> Result<FieldStack, CliError> {
    cfg.require_path(key)?;
    Ok(read_optional_period(cfg, key, true)?.expect("path checked"))
}

fn largest_candidate(cfg: &RunConfig) -> Result<Separator, CliError> {
    let c = cfg.cutoff_candidates.iter().cloned().fold(f64::NAN, f64::max);
    if !c.is_finite() {
        return Err(CliError::Usage("cutoff_candidates must not be empty".into()));
    }
    Ok(Separator::Fourier(SpectralCutoff::new(c)?))
}

/// Resolves the separator, running the cutoff scan for `fourier:auto`.
fn resolve_separator(
    cfg: &RunConfig,
    source: &FieldStack,
    target: &FieldStack,
    out: &mut Outputs,
) -> Result<Separator, CliError> {
    match cfg.separator {
        SeparatorChoice::Fixed(s) => Ok(s),
        SeparatorChoice::Auto => {
            let provisional = largest_candidate(cfg)?;
            let src = regrid_to(source, &provisional, target.grid())?;
            let scan = select_cutoff(
                &src,
                target,
                &cfg.cutoff_candidates,
                cfg.cutoff_threshold,
                derive_seed(cfg.seed, &[7]),
            )?;
            out.csv("reports/cutoff_scan.csv", &scan.to_csv())?;
            if scan.fallback {
                log::warn!("no candidate reached the classifier threshold; using {} km", scan.selected);
            }
            log::info!("selected cutoff {} km", scan.selected);
            Ok(Separator::Fourier(SpectralCutoff::new(scan.selected)?))
        }
    }
}

/// Separator recorded by `train`, else the configured one.
fn trained_separator(cfg: &RunConfig) -> Result<Separator, CliError> {
    let path = cfg.out.join(NORMALIZATION_FILE);
    if path.exists() {
        let (_, sep) = read_normalization(&path)?;
        return Ok(sep);
    }
    match cfg.separator {
        SeparatorChoice::Fixed(s) => Ok(s),
        SeparatorChoice::Auto => largest_candidate(cfg),
    }
}

fn read_normalization(path: &Path) -> Result<(NormalizationParams, Separator), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let kv = KvBlock::parse(&text)?;
    let params = NormalizationParams::from_kv(&kv)?;
    let sep: Separator = kv.require("separator")?.parse()?;
    Ok((params, sep))
}

struct Trained {
    model: ConvNet,
    params: NormalizationParams,
    separator: Separator,
}

fn load_trained(cfg: &RunConfig) -> Result<Trained, CliError> {
    let model_path = cfg.out.join(MODEL_FILE);
    let bytes = std::fs::read(&model_path).map_err(|e| Error::Io {
        path: model_path.clone(),
        source: e,
    })?;
    let model = decode_model(&bytes)?;
    let (params, separator) = read_normalization(&cfg.out.join(NORMALIZATION_FILE))?;
    Ok(Trained {
        model,
        params,
        separator,
    })
}

pub fn synth(cfg: &RunConfig) -> Result<(), CliError> {
    let mut out = Outputs::new(&cfg.out)?;
    let data = make_scenario(cfg.scenario, &cfg.synth)?;
    out.fields("synth/source.wfld", &data.source)?;
    out.fields("synth/target.wfld", &data.target)?;
    let mut truth = data.truth.clone();
    truth.set("scenario", cfg.scenario);
    out.text("synth/truth.txt", &truth.to_string())?;
    manifest::update(cfg, "synth", &[("synth", cfg.seed)], &out)
}

fn spectra_csv(stack: &FieldStack, n_bins: usize) -> Result<CsvTable, CliError> {
    let spectra = isotropic_spectrum(stack, n_bins)?;
    let mut table = CsvTable::new(&["variable", "k_per_km", "wavelength_km", "power", "n_modes"]);
    for (name, s) in stack.variables().iter().zip(&spectra) {
        for row in s.to_csv().rows {
            let mut r = vec![name.clone()];
            r.extend(row);
            table.push(r);
        }
    }
    Ok(table)
}

pub fn decompose(cfg: &RunConfig) -> Result<(), CliError> {
    let mut out = Outputs::new(&cfg.out)?;
    let grid_source = cfg
        .path("target_train")
        .or_else(|| cfg.path("target_eval"))
        .ok_or_else(|| CliError::Usage("decompose needs target_train or target_eval".into()))?;
    let target_grid: GridSpec = read_fieldstack(&grid_source)?.grid().clone();

    let mut inputs: Vec<(&str, FieldStack)> = Vec::new();
    for key in ["source_train", "target_train", "source_eval", "target_eval"] {
        let eval = key.ends_with("_eval");
        if let Some(stack) = read_optional_period(cfg, key, eval)? {
            inputs.push((key, stack));
        }
    }
    let separator = match cfg.separator {
        SeparatorChoice::Fixed(s) => s,
        SeparatorChoice::Auto => {
            let src = inputs.iter().find(|(k, _)| *k == "source_train");
            let tgt = inputs.iter().find(|(k, _)| *k == "target_train");
            match (src, tgt) {
                (Some((_, s)), Some((_, t))) => resolve_separator(cfg, s, t, &mut out)?,
                _ => return Err(CliError::Usage("fourier:auto needs source_train and target_train".into())),
            }
        }
    };

    for (name, stack) in &inputs {
        let stack = regrid_to(stack, &separator, &target_grid)?;
        if cfg.bands.is_empty() {
            let d = separator.split(&stack)?;
            out.fields(&format!("decomposed/{name}_low.wfld"), &d.low)?;
            out.fields(&format!("decomposed/{name}_high.wfld"), &d.high)?;
        } else {
            let cuts = cfg
                .bands
                .iter()
                .map(|&b| SpectralCutoff::new(b))
                .collect::<Result<Vec<_>, _>>()?;
            for (i, band) in band_decompose(&stack, &cuts)?.iter().enumerate() {
                out.fields(&format!("decomposed/{name}_band{i}.wfld"), band)?;
            }
        }
        if stack.is_fully_valid() {
            out.csv(&format!("reports/spectra_{name}.csv"), &spectra_csv(&stack, cfg.metrics.n_bins)?)?;
        }
    }
    let mut note = KvBlock::new();
    note.set("separator", separator);
    out.text("decomposed/separator.txt", &note.to_string())?;
    manifest::update(cfg, "decompose", &[("cutoff_selection", derive_seed(cfg.seed, &[7]))], &out)
}

pub fn train_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let mut out = Outputs::new(&cfg.out)?;
    let source = read_train(cfg, "source_train")?;
    let target = read_train(cfg, "target_train")?;
    let separator = resolve_separator(cfg, &source, &target, &mut out)?;
    let params = fit_normalization(&source, &target)?;
    let normalized = params.normalize_target(&target)?;
    let pair_seed = derive_seed(cfg.seed, &[1]);
    let init_seed = derive_seed(cfg.seed, &[2]);
    let factory = PairFactory::new(normalized, separator, cfg.n_noise_draws, pair_seed)?
        .with_amplitude(cfg.pair_noise_scale);
    let mut arch: Architecture = cfg.architecture.clone();
    arch.channels = params.variables.len();
    let mut model = ConvNet::new(arch, init_seed)?;
    let losses = train(&mut model, &factory, &cfg.train)?;
    if let Some(last) = losses.last() {
        log::info!("final training loss {last:.6}");
    }

    out.bytes(MODEL_FILE, &encode_model(&model))?;
    let mut kv = params.to_kv();
    kv.set("separator", separator);
    out.text(NORMALIZATION_FILE, &kv.to_string())?;
    out.csv("reports/loss.csv", &loss_curve_csv(&losses))?;
    manifest::update(
        cfg,
        "train",
        &[
            ("pairs", pair_seed),
            ("model_init", init_seed),
            ("train", cfg.train.seed),
            ("cutoff_selection", derive_seed(cfg.seed, &[7])),
        ],
        &out,
    )
}

/// Normalised shared-scale condition for the evaluation source.
fn source_condition(cfg: &RunConfig, t: &Trained) -> Result<(FieldStack, FieldStack), CliError> {
    let source = read_eval(cfg, "source_eval")?;
    let template_key = if cfg.path("target_eval").is_some() { "target_eval" } else { "target_train" };
    let template = read_fieldstack(&cfg.require_path(template_key)?)?;
    let normalized = t.params.normalize_source(&source)?;
    let mask = template.mask().to_vec();
    let cond = project_source(&normalized, &t.separator, template.grid(), Some(&mask), 0.0, 0)?;
    Ok((source, cond))
}

pub fn generate(cfg: &RunConfig) -> Result<(), CliError> {
    let mut out = Outputs::new(&cfg.out)?;
    let trained = load_trained(cfg)?;
    let (_, cond) = source_condition(cfg, &trained)?;
    let ens = sample(&trained.model, &cond, &trained.separator, &cfg.ensemble, Some(&trained.params))?;
    for (m, member) in ens.members.iter().enumerate() {
        out.fields(&format!("{MEMBERS_DIR}/member_{m:02}.wfld"), member)?;
    }
    if ens.members.len() >= 2 {
        let stats = ensemble_stats(&ens)?;
        out.fields(&format!("{MEMBERS_DIR}/mean.wfld"), &stats.mean)?;
        out.fields(&format!("{MEMBERS_DIR}/spread.wfld"), &stats.spread)?;
    } else {
        out.fields(&format!("{MEMBERS_DIR}/mean.wfld"), &ens.members[0])?;
    }
    manifest::update(cfg, "generate", &[("ensemble", cfg.ensemble.seed)], &out)
}

/// Keeps the time steps of `method` that also occur in `reference`.
fn align_times(method: &FieldStack, reference: &FieldStack) -> FieldStack {
    let idx: Vec<usize> = method
        .times()
        .iter()
        .enumerate()
        .filter(|(_, t)| reference.times().contains(t))
        .map(|(i, _)| i)
        .collect();
    if idx.is_empty() || idx.len() == method.n_times() {
        method.clone()
    } else {
        method.select_times(&idx)
    }
}

fn altitude_map(cfg: &RunConfig, reference: &FieldStack) -> Result<Option<Vec<f64>>, CliError> {
    let path = cfg.path("altitude");
    match (cfg.ovm, path) {
        (Some(false), _) => Ok(None),
        (Some(true), None) => Err(CliError::Usage("ovm=true needs an altitude map".into())),
        (_, None) => Ok(None),
        (_, Some(p)) => {
            let alt = read_fieldstack(&p)?;
            if !alt.grid().matches(reference.grid()) {
                return Err(CliError::Core(Error::Shape(
                    "altitude map grid differs from the reference grid".into(),
                )));
            }
            Ok(Some(alt.slice(0, 0).to_vec()))
        }
    }
}

pub fn evaluate(cfg: &RunConfig) -> Result<(), CliError> {
    let mut out = Outputs::new(&cfg.out)?;
    let reference = read_eval(cfg, "target_eval")?;
    let source = read_eval(cfg, "source_eval")?;
    let separator = trained_separator(cfg)?;
    let grid = reference.grid().clone();
    let altitude = altitude_map(cfg, &reference)?;
    let mut notes: Vec<String> = Vec::new();

    let mut methods: Vec<(String, FieldStack)> = vec![("source".into(), regrid_to(&source, &separator, &grid)?)];
    match (
        read_optional_period(cfg, "source_train", false)?,
        read_optional_period(cfg, "target_train", false)?,
    ) {
        (Some(src_hist), Some(obs_hist)) => {
            let src_hist = regrid_to(&src_hist, &separator, &grid)?;
            let cdft = cdft_correct(
                &obs_hist,
                &src_hist,
                &methods[0].1,
                &CdftConfig {
                    by_month: cfg.cdft_by_month,
                },
            )?;
            out.fields("reports/cdft.wfld", &cdft)?;
            methods.push(("cdft".into(), cdft));
        }
        _ => notes.push("cdft: skipped, needs source_train and target_train".into()),
    }
    let members = cfg.out.join(MEMBERS_DIR);
    for (name, file) in [("ensemble_mean", "mean.wfld"), ("member_00", "member_00.wfld")] {
        let path = members.join(file);
        if path.exists() {
            methods.push((name.into(), read_fieldstack(&path)?));
        } else {
            notes.push(format!("{name}: skipped, run generate first"));
        }
    }
    for (name, path) in &cfg.methods {
        methods.push((name.clone(), read_fieldstack(&cfg.resolve(path))?));
    }

    let mut reports: Vec<MetricReport> = Vec::new();
    for (name, stack) in &methods {
        let aligned = align_times(stack, &reference);
        let r = evaluate_vs_reference(name, &aligned, &reference, altitude.as_deref(), &cfg.metrics)?;
        reports.push(r);
    }
    out.csv("reports/metrics_reference.csv", &metrics_table(&reports))?;
    out.csv("reports/radar.csv", &radar_normalize(&reports))?;

    let mut gcm_reports: Vec<MetricReport> = Vec::new();
    if cfg.metrics.hist.is_some() && cfg.metrics.fut.is_some() {
        let gcm = &methods[0].1;
        for (name, stack) in &methods[1..] {
            if stack.times() != gcm.times() {
                notes.push(format!("{name}: driving-model metrics skipped, time axis differs from source_eval"));
                continue;
            }
            gcm_reports.push(evaluate_vs_gcm(name, stack, gcm, &cfg.metrics)?);
        }
        out.csv("reports/metrics_gcm.csv", &metrics_table(&gcm_reports))?;
    } else {
        notes.push("driving-model metrics: skipped, set hist and fut".into());
    }

    for r in reports.iter().chain(&gcm_reports) {
        for (curve, table) in &r.curves {
            out.csv(&format!("reports/curves/{}_{curve}.csv", r.method), table)?;
        }
        for n in &r.notes {
            notes.push(format!("{}: {n}", r.method));
        }
    }
    let mut text = notes.join("\n");
    text.push('\n');
    out.text("reports/notes.txt", &text)?;
    manifest::update(cfg, "evaluate", &[("metrics", cfg.metrics.seed)], &out)
}

struct PerfectModel<'a> {
    trained: &'a Trained,
    condition: FieldStack,
    spec: EnsembleSpec,
}

impl EnsembleGenerator for PerfectModel<'_> {
    fn generate(&self, noise_scale: f64) -> scaleflow::Result<Vec<FieldStack>> {
        let spec = EnsembleSpec { noise_scale, ..self.spec };
        let t = self.trained;
        Ok(sample(&t.model, &self.condition, &t.separator, &spec, Some(&t.params))?.members)
    }
}

pub fn calibrate(cfg: &RunConfig) -> Result<(), CliError> {
    let mut out = Outputs::new(&cfg.out)?;
    let trained = load_trained(cfg)?;
    let obs = read_eval(cfg, "target_eval")?;
    let normalized = trained.params.normalize_target(&obs)?;
    let condition = trained.separator.shared(&normalized)?;
    let obs = obs.select_variables(
        &trained
            .params
            .variables
            .iter()
            .map(|v| obs.variable_index(v).expect("normalisation selected it"))
            .collect::<Vec<_>>(),
    );
    let generator = PerfectModel {
        trained: &trained,
        condition,
        spec: cfg.ensemble,
    };
    let seed = derive_seed(cfg.seed, &[6]);
    let tuning = tune_noise_scale(&generator, &cfg.a_grid, &obs, &cfg.levels, seed)?;

    let mut scores: Option<CsvTable> = None;
    let mut ranks: Option<CsvTable> = None;
    let mut rel: Option<CsvTable> = None;
    for r in &tuning.reports {
        for (acc, t) in [
            (&mut scores, r.scores_csv()),
            (&mut ranks, r.rank_csv()),
            (&mut rel, r.reliability_csv()),
        ] {
            match acc {
                Some(a) => a.rows.extend(t.rows),
                None => *acc = Some(t),
            }
        }
    }
    out.csv("reports/calibration_scores.csv", &scores.expect("non-empty grid"))?;
    out.csv("reports/calibration_rank.csv", &ranks.expect("non-empty grid"))?;
    out.csv("reports/calibration_reliability.csv", &rel.expect("non-empty grid"))?;

    let mut summary = KvBlock::new();
    summary.set("recommended_noise_scale", tuning.recommended);
    summary.set("spread_monotone", tuning.monotone);
    for r in &tuning.reports {
        summary.set(&format!("spread_skill.{}", r.noise_scale), r.mean_ratio());
        summary.set(&format!("pooled_spread.{}", r.noise_scale), r.pooled_spread());
    }
    out.text("reports/calibration_summary.txt", &summary.to_string())?;
    manifest::update(
        cfg,
        "calibrate",
        &[("ensemble", cfg.ensemble.seed), ("calibration", seed)],
        &out,
    )
}
