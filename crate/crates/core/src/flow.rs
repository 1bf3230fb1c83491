//! Conditional flow matching on pseudo-pairs.
//!
//! The probability path is the straight line `x_t = (1 - t) x0 + t x1`
//! from the degraded input `x0` to the target `x1`, with constant velocity
//! `x1 - x0`. The network sees the current state, the noise-free shared
//! component and `t` as a constant channel. Sampling integrates the learned
//! field with explicit Euler steps from `t = 0` to `t = 1`.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::csv::CsvTable;
use crate::error::{Error, Result};
use crate::fields::{FieldStack, Frame};
use crate::kv::{join, KvBlock};
use crate::pairs::{NormalizationParams, PairFactory, PseudoPair};
use crate::rng::{derive_seed, stream_rng};
use crate::scale::Separator;

/// Velocity field `v(state, t, condition)`; output has the state's shape.
pub trait VelocityModel: Sync {
    fn velocity(&self, state: &Frame, t: f64, cond: &Frame) -> Frame;
}

/// A velocity model with a flat parameter vector and exact gradients of the
/// masked mean squared error.
pub trait TrainableModel: VelocityModel {
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];

    /// Mean of `(v - target)^2` over channels and `valid` cells, and its
    /// gradient with respect to the parameters.
    fn loss_and_grad(&self, state: &Frame, t: f64, cond: &Frame, target: &Frame, valid: &[bool]) -> (f64, Vec<f64>);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    /// Number of field variables `C`; the network reads `2C + 1` channels.
    pub channels: usize,
    pub hidden: Vec<usize>,
    pub kernel: usize,
    pub activation: Activation,
}

impl Architecture {
    pub fn new(channels: usize, hidden: Vec<usize>) -> Self {
        Self {
            channels,
            hidden,
            kernel: 3,
            activation: Activation::Tanh,
        }
    }

    pub fn input_channels(&self) -> usize {
        2 * self.channels + 1
    }

    fn layer_sizes(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_channels()];
        widths.extend(&self.hidden);
        widths.push(self.channels);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn n_params(&self) -> usize {
        let k2 = self.kernel * self.kernel;
        self.layer_sizes().iter().map(|(i, o)| o * i * k2 + o).sum()
    }

    fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::Spec("model needs at least one channel".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Spec(format!("kernel size must be odd, got {}", self.kernel)));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Spec("hidden widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    cin: usize,
    cout: usize,
    w_off: usize,
    b_off: usize,
}

/// Stack of `same`-padded convolutions with smooth hidden activations and
/// a linear output layer. `hidden = []` is a single linear convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvNet {
    arch: Architecture,
    params: Vec<f64>,
}

/// `out[o] += sum_i w[o][i] * shift(input[i])` with zero padding.
fn conv_accumulate(input: &[f64], out: &mut [f64], weights: &[f64], layer: &Layer, k: usize, rows: usize, cols: usize) {
    let p = rows * cols;
    let h = (k / 2) as isize;
    for o in 0..layer.cout {
        let out_plane = &mut out[o * p..(o + 1) * p];
        for i in 0..layer.cin {
            let in_plane = &input[i * p..(i + 1) * p];
            for a in 0..k {
                let dr = a as isize - h;
                for b in 0..k {
                    let dc = b as isize - h;
                    let w = weights[((o * layer.cin + i) * k + a) * k + b];
                    if w == 0.0 {
                        continue;
                    }
                    let r_lo = (-dr).max(0) as usize;
                    let r_hi = (rows as isize - dr).min(rows as isize).max(0) as usize;
                    let c_lo = (-dc).max(0) as usize;
                    let c_hi = (cols as isize - dc).min(cols as isize).max(0) as usize;
                    if c_lo >= c_hi {
                        continue;
                    }
                    for r in r_lo..r_hi {
                        let rr = (r as isize + dr) as usize;
                        let dst = &mut out_plane[r * cols + c_lo..r * cols + c_hi];
                        let src_lo = (rr * cols) as isize + c_lo as isize + dc;
                        let src = &in_plane[src_lo as usize..src_lo as usize + (c_hi - c_lo)];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += w * s;
                        }
                    }
                }
            }
        }
    }
}

/// Weight, bias and input gradients of one convolution layer.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    dz: &[f64],
    weights: &[f64],
    layer: &Layer,
    k: usize,
    rows: usize,
    cols: usize,
    grad: &mut [f64],
    d_input: Option<&mut [f64]>,
) {
    let p = rows * cols;
    let h = (k / 2) as isize;
    let mut d_input = d_input;
    for o in 0..layer.cout {
        let dz_plane = &dz[o * p..(o + 1) * p];
        grad[layer.b_off + o] += dz_plane.iter().sum::<f64>();
        for i in 0..layer.cin {
            let in_plane = &input[i * p..(i + 1) * p];
            for a in 0..k {
                let dr = a as isize - h;
                for b in 0..k {
                    let dc = b as isize - h;
                    let widx = ((o * layer.cin + i) * k + a) * k + b;
                    let w = weights[widx];
                    let r_lo = (-dr).max(0) as usize;
                    let r_hi = (rows as isize - dr).min(rows as isize).max(0) as usize;
                    let c_lo = (-dc).max(0) as usize;
                    let c_hi = (cols as isize - dc).min(cols as isize).max(0) as usize;
                    if c_lo >= c_hi {
                        continue;
                    }
                    let mut gw = 0.0;
                    for r in r_lo..r_hi {
                        let rr = (r as isize + dr) as usize;
                        let g = &dz_plane[r * cols + c_lo..r * cols + c_hi];
                        let src_lo = ((rr * cols) as isize + c_lo as isize + dc) as usize;
                        let x = &in_plane[src_lo..src_lo + (c_hi - c_lo)];
                        gw += g.iter().zip(x).map(|(g, x)| g * x).sum::<f64>();
                        if let Some(din) = d_input.as_deref_mut() {
                            let dst = &mut din[i * p + src_lo..i * p + src_lo + (c_hi - c_lo)];
                            for (d, g) in dst.iter_mut().zip(g) {
                                *d += w * g;
                            }
                        }
                    }
                    grad[layer.w_off + widx] += gw;
                }
            }
        }
    }
}

impl ConvNet {
    /// Seeded initialisation: weights `N(0, 1 / fan_in)`, zero biases.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut params = vec![0.0; arch.n_params()];
        let mut rng = stream_rng(seed, 0);
        let k2 = arch.kernel * arch.kernel;
        let mut off = 0;
        for (cin, cout) in arch.layer_sizes() {
            let scale = 1.0 / ((cin * k2) as f64).sqrt();
            for w in &mut params[off..off + cout * cin * k2] {
                let z: f64 = StandardNormal.sample(&mut rng);
                *w = scale * z;
            }
            off += cout * cin * k2 + cout;
        }
        Ok(Self { arch, params })
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.n_params() {
            return Err(Error::Shape(format!(
                "architecture needs {} parameters, got {}",
                arch.n_params(),
                params.len()
            )));
        }
        Ok(Self { arch, params })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    fn layers(&self) -> Vec<Layer> {
        let k2 = self.arch.kernel * self.arch.kernel;
        let mut off = 0;
        self.arch
            .layer_sizes()
            .into_iter()
            .map(|(cin, cout)| {
                let layer = Layer {
                    cin,
                    cout,
                    w_off: off,
                    b_off: off + cout * cin * k2,
                };
                off += cout * cin * k2 + cout;
                layer
            })
            .collect()
    }

    fn input(&self, state: &Frame, t: f64, cond: &Frame) -> Vec<f64> {
        assert_eq!(state.n_channels, self.arch.channels, "state channels");
        assert!(state.same_shape(cond), "condition shape");
        let p = state.plane_len();
        let mut x = Vec::with_capacity(self.arch.input_channels() * p);
        let clean = |v: &f64| if v.is_finite() { *v } else { 0.0 };
        x.extend(state.data.iter().map(clean));
        x.extend(cond.data.iter().map(clean));
        x.extend(std::iter::repeat(t).take(p));
        x
    }

    /// Activations of every layer; `acts[0]` is the input.
    fn forward(&self, input: Vec<f64>, rows: usize, cols: usize) -> Vec<Vec<f64>> {
        let p = rows * cols;
        let layers = self.layers();
        let last = layers.len() - 1;
        let mut acts = vec![input];
        for (l, layer) in layers.iter().enumerate() {
            let mut z = vec![0.0; layer.cout * p];
            for o in 0..layer.cout {
                z[o * p..(o + 1) * p].fill(self.params[layer.b_off + o]);
            }
            conv_accumulate(&acts[l], &mut z, &self.params[layer.w_off..], layer, self.arch.kernel, rows, cols);
            if l < last {
                match self.arch.activation {
                    Activation::Tanh => z.iter_mut().for_each(|v| *v = v.tanh()),
                }
            }
            acts.push(z);
        }
        acts
    }
}

impl VelocityModel for ConvNet {
    fn velocity(&self, state: &Frame, t: f64, cond: &Frame) -> Frame {
        let input = self.input(state, t, cond);
        let mut acts = self.forward(input, state.n_rows, state.n_cols);
        Frame {
            n_channels: state.n_channels,
            n_rows: state.n_rows,
            n_cols: state.n_cols,
            data: acts.pop().unwrap(),
        }
    }
}

impl TrainableModel for ConvNet {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn loss_and_grad(&self, state: &Frame, t: f64, cond: &Frame, target: &Frame, valid: &[bool]) -> (f64, Vec<f64>) {
        let (rows, cols) = (state.n_rows, state.n_cols);
        let p = rows * cols;
        let input = self.input(state, t, cond);
        let acts = self.forward(input, rows, cols);
        let out = acts.last().unwrap();
        let n_valid = valid.iter().filter(|&&v| v).count();
        let denom = (n_valid * state.n_channels).max(1) as f64;
        let mut loss = 0.0;
        let mut g = vec![0.0; out.len()];
        for c in 0..state.n_channels {
            for cell in 0..p {
                if valid[cell] {
                    let i = c * p + cell;
                    let r = out[i] - target.data[i];
                    loss += r * r;
                    g[i] = 2.0 * r / denom;
                }
            }
        }
        loss /= denom;

        let layers = self.layers();
        let mut grad = vec![0.0; self.params.len()];
        let last = layers.len() - 1;
        for l in (0..layers.len()).rev() {
            let layer = &layers[l];
            if l < last {
                // d tanh(z) = 1 - tanh(z)^2, with acts[l + 1] = tanh(z)
                for (gi, a) in g.iter_mut().zip(&acts[l + 1]) {
                    *gi *= 1.0 - a * a;
                }
            }
            let mut d_in = if l > 0 { Some(vec![0.0; layer.cin * p]) } else { None };
            conv_backward(
                &acts[l],
                &g,
                &self.params[layer.w_off..],
                layer,
                self.arch.kernel,
                rows,
                cols,
                &mut grad,
                d_in.as_deref_mut(),
            );
            if let Some(d) = d_in {
                g = d;
            }
        }
        (loss, grad)
    }
}

/// One training frame triple taken from a pseudo-pair.
struct Sample {
    x0: Frame,
    x1: Frame,
    cond: Frame,
    valid: Vec<bool>,
}

impl Sample {
    fn from_pair(pair: &PseudoPair) -> Result<Self> {
        pair.conditioning.check_aligned(&pair.target)?;
        pair.shared.check_aligned(&pair.target)?;
        if pair.target.n_times() != 1 {
            return Err(Error::Shape("pseudo-pairs must hold exactly one time step".into()));
        }
        Ok(Self {
            x0: pair.conditioning.frame(0).zero_filled(),
            x1: pair.target.frame(0).zero_filled(),
            cond: pair.shared.frame(0).zero_filled(),
            valid: pair.target.mask().to_vec(),
        })
    }

    fn state_and_velocity(&self, t: f64) -> (Frame, Frame) {
        let mut state = self.x0.clone();
        let mut v = self.x0.clone();
        for ((s, vv), (a, b)) in state
            .data
            .iter_mut()
            .zip(v.data.iter_mut())
            .zip(self.x0.data.iter().zip(&self.x1.data))
        {
            *s = (1.0 - t) * a + t * b;
            *vv = b - a;
        }
        (state, v)
    }

    fn loss_and_grad<M: TrainableModel>(&self, model: &M, t: f64) -> (f64, Vec<f64>) {
        let (state, v) = self.state_and_velocity(t);
        model.loss_and_grad(&state, t, &self.cond, &v, &self.valid)
    }
}

/// Flow-matching loss of one pair at time `t` and its parameter gradient.
pub fn fm_loss<M: TrainableModel>(model: &M, pair: &PseudoPair, t: f64) -> Result<(f64, Vec<f64>)> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Spec(format!("flow time must lie in [0, 1], got {t}")));
    }
    Ok(Sample::from_pair(pair)?.loss_and_grad(model, t))
}

/// Supplies the pairs for each epoch.
pub trait PairSource {
    fn epoch_pairs(&self, epoch: usize) -> Result<Vec<PseudoPair>>;
}

impl PairSource for [PseudoPair] {
    fn epoch_pairs(&self, _epoch: usize) -> Result<Vec<PseudoPair>> {
        Ok(self.to_vec())
    }
}

impl PairSource for Vec<PseudoPair> {
    fn epoch_pairs(&self, _epoch: usize) -> Result<Vec<PseudoPair>> {
        Ok(self.clone())
    }
}

impl PairSource for PairFactory {
    fn epoch_pairs(&self, epoch: usize) -> Result<Vec<PseudoPair>> {
        PairFactory::epoch_pairs(self, epoch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd,
    Momentum(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Compare analytic and finite-difference gradients before training.
    pub gradient_check: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.003,
            batch_size: 8,
            epochs: 20,
            seed: 0,
            optimizer: Optimizer::Momentum(0.9),
            gradient_check: false,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Spec(format!("invalid learning rate {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Spec("batch size must be at least 1".into()));
        }
        if let Optimizer::Momentum(m) = self.optimizer {
            if !(0.0..1.0).contains(&m) {
                return Err(Error::Spec(format!("momentum must lie in [0, 1), got {m}")));
            }
        }
        Ok(())
    }
}

/// Largest relative deviation between analytic and central-difference
/// gradients over (at most) `max_params` evenly spaced parameters.
pub fn gradient_check<M: TrainableModel + Clone>(
    model: &M,
    pair: &PseudoPair,
    t: f64,
    step: f64,
    max_params: usize,
) -> Result<f64> {
    let sample = Sample::from_pair(pair)?;
    let (_, analytic) = sample.loss_and_grad(model, t);
    let n = analytic.len();
    let stride = (n / max_params.max(1)).max(1);
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for i in (0..n).step_by(stride) {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + step;
        let up = sample.loss_and_grad(&probe, t).0;
        probe.params_mut()[i] = orig - step;
        let down = sample.loss_and_grad(&probe, t).0;
        probe.params_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let scale = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    Ok(worst)
}

/// Gradient-check tolerance used when `TrainConfig::gradient_check` is set.
pub const GRADIENT_TOLERANCE: f64 = 1e-3;

/// Minibatch training. Flow times are stratified within each batch and the
/// batch gradient is reduced in a fixed order, so results do not depend on
/// the number of threads. Returns the mean loss of every epoch.
pub fn train<M, S>(model: &mut M, pairs: &S, cfg: &TrainConfig) -> Result<Vec<f64>>
where
    M: TrainableModel + Clone + Send,
    S: PairSource + ?Sized,
{
    cfg.validate()?;
    let n_params = model.params().len();
    let mut velocity = vec![0.0; n_params];
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let pairs = pairs.epoch_pairs(epoch)?;
        if pairs.is_empty() {
            return Err(Error::InsufficientData("no training pairs".into()));
        }
        if epoch == 0 && cfg.gradient_check {
            let err = gradient_check(model, &pairs[0], 0.37, 1e-4, 64)?;
            if err > GRADIENT_TOLERANCE {
                return Err(Error::GradientCheck(err));
            }
        }
        let samples = pairs.iter().map(Sample::from_pair).collect::<Result<Vec<_>>>()?;
        let mut rng = stream_rng(derive_seed(cfg.seed, &[epoch as u64]), 1);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let b = batch.len();
            let mut strata: Vec<usize> = (0..b).collect();
            strata.shuffle(&mut rng);
            let times: Vec<f64> = strata
                .iter()
                .map(|&s| (s as f64 + rng.random::<f64>()) / b as f64)
                .collect();
            let results: Vec<(f64, Vec<f64>)> = batch
                .par_iter()
                .zip(times.par_iter())
                .map(|(&i, &t)| samples[i].loss_and_grad(&*model, t))
                .collect();
            let mut grad = vec![0.0; n_params];
            let mut batch_loss = 0.0;
            for (loss, g) in &results {
                batch_loss += loss;
                for (a, x) in grad.iter_mut().zip(g) {
                    *a += x;
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    learning_rate: cfg.learning_rate,
                });
            }
            epoch_loss += batch_loss;
            let scale = 1.0 / b as f64;
            let params = model.params_mut();
            match cfg.optimizer {
                Optimizer::Sgd => {
                    for (p, g) in params.iter_mut().zip(&grad) {
                        *p -= cfg.learning_rate * g * scale;
                    }
                }
                Optimizer::Momentum(mu) => {
                    for ((p, g), v) in params.iter_mut().zip(&grad).zip(velocity.iter_mut()) {
                        *v = mu * *v + g * scale;
                        *p -= cfg.learning_rate * *v;
                    }
                }
            }
            if params.iter().any(|p| !p.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    learning_rate: cfg.learning_rate,
                });
            }
        }
        let mean = epoch_loss / samples.len() as f64;
        log::debug!("epoch {epoch}: loss {mean:.6}");
        losses.push(mean);
    }
    Ok(losses)
}

pub fn loss_curve_csv(losses: &[f64]) -> CsvTable {
    let mut table = CsvTable::new(&["epoch", "loss"]);
    for (e, l) in losses.iter().enumerate() {
        table.push([e.to_string(), l.to_string()]);
    }
    table
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleSpec {
    pub n_members: usize,
    pub noise_scale: f64,
    pub ode_steps: usize,
    pub seed: u64,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        Self {
            n_members: 10,
            noise_scale: crate::pairs::DEFAULT_NOISE_SCALE,
            ode_steps: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub members: Vec<FieldStack>,
}

/// Euler integration of one frame from `t = 0` to `t = 1`.
pub fn integrate<M: VelocityModel + ?Sized>(model: &M, start: &Frame, cond: &Frame, steps: usize) -> Result<Frame> {
    let dt = 1.0 / steps as f64;
    let mut x = start.clone();
    for step in 0..steps {
        let v = model.velocity(&x, step as f64 * dt, cond);
        for (a, b) in x.data.iter_mut().zip(&v.data) {
            *a += dt * b;
        }
        if x.data.iter().any(|a| !a.is_finite()) {
            return Err(Error::BlowUp { step });
        }
    }
    Ok(x)
}

/// Draws `spec.n_members` members from a normalised condition stack.
///
/// Member `m` starts at `condition + a * highpass_noise(seed_m)` and is
/// integrated per frame; with `params` the result is denormalised with the
/// per-cell target moments.
pub fn sample<M: VelocityModel + ?Sized>(
    model: &M,
    condition: &FieldStack,
    separator: &Separator,
    spec: &EnsembleSpec,
    params: Option<&NormalizationParams>,
) -> Result<Ensemble> {
    if spec.n_members == 0 || spec.ode_steps == 0 {
        return Err(Error::Spec("ensembles need at least one member and one step".into()));
    }
    if !(spec.noise_scale >= 0.0) {
        return Err(Error::Spec(format!("noise scale must be non-negative, got {}", spec.noise_scale)));
    }
    let members = (0..spec.n_members)
        .into_par_iter()
        .map(|m| {
            let seed = derive_seed(spec.seed, &[m as u64]);
            let start = if spec.noise_scale == 0.0 {
                condition.clone()
            } else {
                let noise = separator.highpass_noise(condition, seed)?;
                condition.zip_with(&noise, |c, e| c + spec.noise_scale * e)?
            };
            let frames = (0..condition.n_times())
                .into_par_iter()
                .map(|t| {
                    let cond = condition.frame(t).zero_filled();
                    integrate(model, &start.frame(t).zero_filled(), &cond, spec.ode_steps)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut out = condition.clone();
            for (t, f) in frames.iter().enumerate() {
                out.set_frame(t, f)?;
            }
            match params {
                Some(p) => p.denormalize_target(&out),
                None => Ok(out),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Ensemble { members })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub mean: FieldStack,
    /// Unbiased (`n - 1`) standard deviation across members.
    pub spread: FieldStack,
}

pub fn ensemble_stats(ens: &Ensemble) -> Result<EnsembleStats> {
    let n = ens.members.len();
    if n < 2 {
        return Err(Error::SpreadUndefined);
    }
    let first = &ens.members[0];
    for m in &ens.members[1..] {
        m.check_aligned(first)?;
    }
    let len = first.values().len();
    let mut mean = vec![0.0; len];
    for m in &ens.members {
        for (a, x) in mean.iter_mut().zip(m.values()) {
            *a += x;
        }
    }
    mean.iter_mut().for_each(|a| *a /= n as f64);
    let mut var = vec![0.0; len];
    for m in &ens.members {
        for ((s, x), mu) in var.iter_mut().zip(m.values()).zip(&mean) {
            *s += (x - mu) * (x - mu);
        }
    }
    let spread = var.iter().map(|s| (s / (n - 1) as f64).sqrt()).collect();
    Ok(EnsembleStats {
        mean: first.with_values(mean)?,
        spread: first.with_values(spread)?,
    })
}

const MODEL_MAGIC: &[u8; 4] = b"WFMD";
const MODEL_VERSION: u8 = 0x01;

/// Checkpoint bytes: `WFMD`, version, u32 header length, `key=value`
/// architecture block, then little-endian f64 parameters.
pub fn encode_model(model: &ConvNet) -> Vec<u8> {
    let arch = model.architecture();
    let mut header = KvBlock::new();
    header.set("kind", "convnet");
    header.set("channels", arch.channels);
    header.set("hidden", join(&arch.hidden));
    header.set("kernel", arch.kernel);
    header.set("activation", arch.activation.name());
    header.set("n_params", model.params().len());
    let header = header.to_string();
    let mut out = Vec::with_capacity(9 + header.len() + 8 * model.params().len());
    out.extend_from_slice(MODEL_MAGIC);
    out.push(MODEL_VERSION);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for p in model.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<ConvNet> {
    if bytes.len() < 9 {
        return Err(Error::format(bytes.len() as u64, "file shorter than preamble"));
    }
    if &bytes[..4] != MODEL_MAGIC {
        return Err(Error::format(0, "magic mismatch, expected WFMD"));
    }
    if bytes[4] != MODEL_VERSION {
        return Err(Error::format(4, format!("unsupported version {}", bytes[4])));
    }
    let len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let end = 9usize
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::format(bytes.len() as u64, "truncated header"))?;
    let text = std::str::from_utf8(&bytes[9..end]).map_err(|_| Error::format(9, "header is not UTF-8"))?;
    let bad = |e: Error| Error::format(9, e.to_string());
    let header = KvBlock::parse(text).map_err(bad)?;
    let kind = header.require("kind").map_err(bad)?;
    if kind != "convnet" {
        return Err(Error::format(9, format!("unknown model kind `{kind}`")));
    }
    let activation = header.require("activation").map_err(bad)?;
    let arch = Architecture {
        channels: header.require_value("channels").map_err(bad)?,
        hidden: header.parse_list("hidden").map_err(bad)?.unwrap_or_default(),
        kernel: header.require_value("kernel").map_err(bad)?,
        activation: Activation::parse(activation)
            .ok_or_else(|| Error::format(9, format!("unknown activation `{activation}`")))?,
    };
    let n: usize = header.require_value("n_params").map_err(bad)?;
    if n != arch.n_params() {
        return Err(Error::format(9, "n_params disagrees with the architecture"));
    }
    let payload = &bytes[end..];
    if payload.len() != 8 * n {
        return Err(Error::format(
            bytes.len() as u64,
            format!("expected {} parameter bytes, found {}", 8 * n, payload.len()),
        ));
    }
    let params = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ConvNet::from_params(arch, params)
}

pub fn save_model(model: &ConvNet, path: &Path) -> Result<()> {
    fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ConvNet> {
    decode_model(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
