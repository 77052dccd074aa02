//! Generative adversarial imputation nets for categorical variables.
//!
//! Levels are one-hot encoded. The generator sees the noisy encoded data and
//! the mask and emits one softmax block per variable; the discriminator sees
//! the imputed encoding and a hint and predicts, per cell, whether it was
//! observed. Mask entries are 1 for observed cells throughout.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, RowDVector};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{ImputationResult, IncompleteDataset, OrdinalDataset};
use crate::error::{Error, Result};
use crate::glm::sample_level;
use crate::rng::{self, Rng};

const PROB_CLAMP: f64 = 1e-7;
const NOISE_SCALE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainDraw {
    /// Sample the imputed level from the softmax block.
    Sample,
    /// Take the most probable level.
    Argmax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GainConfig {
    pub hint_rate: f64,
    pub alpha_weight: f64,
    pub batch_size: usize,
    pub n_steps: usize,
    pub learning_rate: f64,
    /// Per-variable reconstruction weights. `None` uses the missing
    /// fractions normalised to mean one.
    pub missing_rate_weights: Option<Vec<f64>>,
    pub draw: GainDraw,
}

impl Default for GainConfig {
    fn default() -> Self {
        GainConfig {
            hint_rate: 0.9,
            alpha_weight: 10.0,
            batch_size: 128,
            n_steps: 10_000,
            learning_rate: 1e-3,
            missing_rate_weights: None,
            draw: GainDraw::Sample,
        }
    }
}

impl GainConfig {
    pub fn validate(&self, p: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.hint_rate) {
            return Err(Error::Config(format!("hint rate {} outside [0,1]", self.hint_rate)));
        }
        if !(self.alpha_weight >= 0.0) {
            return Err(Error::Config("reconstruction weight must be non-negative".into()));
        }
        if self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::Config("batch size and learning rate must be positive".into()));
        }
        if let Some(w) = &self.missing_rate_weights {
            if w.len() != p || w.iter().any(|x| !(*x >= 0.0)) {
                return Err(Error::Config(format!("need {p} non-negative reconstruction weights")));
            }
        }
        Ok(())
    }
}

/// Missing fraction per variable, normalised to mean one.
pub fn missing_rate_weights(input: &IncompleteDataset) -> Vec<f64> {
    let n = input.n().max(1) as f64;
    let rates: Vec<f64> = (0..input.p()).map(|j| input.mask().missing_count(j) as f64 / n).collect();
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    if mean == 0.0 {
        return vec![1.0; rates.len()];
    }
    rates.iter().map(|r| r / mean).collect()
}

/// One-hot layout: variable `j` occupies columns `offsets[j]..offsets[j] + cards[j]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainEncoding {
    pub cards: Vec<usize>,
    pub offsets: Vec<usize>,
}

impl GainEncoding {
    pub fn new(cards: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(cards.len());
        let mut w = 0;
        for &d in cards {
            offsets.push(w);
            w += d;
        }
        GainEncoding {
            cards: cards.to_vec(),
            offsets,
        }
    }

    pub fn width(&self) -> usize {
        self.cards.iter().sum()
    }

    pub fn p(&self) -> usize {
        self.cards.len()
    }

    pub fn block(&self, j: usize) -> std::ops::Range<usize> {
        self.offsets[j]..self.offsets[j] + self.cards[j]
    }

    /// Encodes rows; missing blocks are filled with `U(0, 0.01)` noise.
    pub fn encode(&self, input: &IncompleteDataset, rows: &[usize], rng: &mut Rng) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(rows.len(), self.width());
        for (r, &i) in rows.iter().enumerate() {
            for j in 0..self.p() {
                match input.get(i, j) {
                    Some(level) => out[(r, self.offsets[j] + level as usize - 1)] = 1.0,
                    None => {
                        for c in self.block(j) {
                            out[(r, c)] = NOISE_SCALE * rng.random::<f64>();
                        }
                    }
                }
            }
        }
        out
    }

    pub fn encode_levels(&self, rows: &[Vec<u8>]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(rows.len(), self.width());
        for (r, row) in rows.iter().enumerate() {
            for (j, &level) in row.iter().enumerate() {
                out[(r, self.offsets[j] + level as usize - 1)] = 1.0;
            }
        }
        out
    }

    /// Most probable level in each block.
    pub fn decode(&self, encoded: &DMatrix<f64>) -> Vec<Vec<u8>> {
        (0..encoded.nrows())
            .map(|r| {
                (0..self.p())
                    .map(|j| {
                        let block = self.block(j);
                        let mut best = 0;
                        for (d, c) in block.clone().enumerate() {
                            if encoded[(r, c)] > encoded[(r, block.start + best)] {
                                best = d;
                            }
                        }
                        best as u8 + 1
                    })
                    .collect()
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `inputs x outputs`.
    pub weights: DMatrix<f64>,
    pub bias: RowDVector<f64>,
}

impl Layer {
    fn glorot(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let sd = (2.0 / (inputs + outputs) as f64).sqrt();
        let normal = Normal::new(0.0, sd).expect("positive sd");
        Layer {
            weights: DMatrix::from_fn(inputs, outputs, |_, _| normal.sample(rng)),
            bias: RowDVector::zeros(outputs),
        }
    }

    fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = x * &self.weights;
        for mut row in z.row_iter_mut() {
            row += &self.bias;
        }
        z
    }
}

/// Two tanh hidden layers and a linear output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: [Layer; 3],
}

struct MlpCache {
    input: DMatrix<f64>,
    h1: DMatrix<f64>,
    h2: DMatrix<f64>,
}

#[derive(Clone, Debug)]
struct MlpGrad {
    weights: [DMatrix<f64>; 3],
    bias: [RowDVector<f64>; 3],
}

impl Mlp {
    fn new(inputs: usize, hidden: usize, outputs: usize, rng: &mut Rng) -> Self {
        Mlp {
            layers: [
                Layer::glorot(inputs, hidden, rng),
                Layer::glorot(hidden, hidden, rng),
                Layer::glorot(hidden, outputs, rng),
            ],
        }
    }

    fn forward(&self, input: DMatrix<f64>) -> (DMatrix<f64>, MlpCache) {
        let h1 = self.layers[0].forward(&input).map(f64::tanh);
        let h2 = self.layers[1].forward(&h1).map(f64::tanh);
        let out = self.layers[2].forward(&h2);
        (out, MlpCache { input, h1, h2 })
    }

    /// Gradients of the parameters and of the input given `d out`.
    fn backward(&self, cache: &MlpCache, d_out: &DMatrix<f64>) -> (MlpGrad, DMatrix<f64>) {
        let col_sums = |m: &DMatrix<f64>| m.row_sum();
        let g3 = cache.h2.transpose() * d_out;
        let b3 = col_sums(d_out);
        let mut d2 = d_out * self.layers[2].weights.transpose();
        d2.zip_apply(&cache.h2, |d, h| *d *= 1.0 - h * h);
        let g2 = cache.h1.transpose() * &d2;
        let b2 = col_sums(&d2);
        let mut d1 = &d2 * self.layers[1].weights.transpose();
        d1.zip_apply(&cache.h1, |d, h| *d *= 1.0 - h * h);
        let g1 = cache.input.transpose() * &d1;
        let b1 = col_sums(&d1);
        let d_in = &d1 * self.layers[0].weights.transpose();
        (
            MlpGrad {
                weights: [g1, g2, g3],
                bias: [b1, b2, b3],
            },
            d_in,
        )
    }

    fn step(&mut self, grad: &MlpGrad, lr: f64) {
        for (layer, (gw, gb)) in self.layers.iter_mut().zip(grad.weights.iter().zip(&grad.bias)) {
            layer.weights -= gw * lr;
            layer.bias -= gb * lr;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub discriminator: f64,
    pub generator: f64,
    pub reconstruction: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GainNets {
    pub encoding: GainEncoding,
    pub generator: Mlp,
    pub discriminator: Mlp,
    pub trace: Vec<LossRecord>,
}

impl GainNets {
    pub fn new(cards: &[usize], rng: &mut Rng) -> Self {
        let encoding = GainEncoding::new(cards);
        let (w, p) = (encoding.width(), encoding.p());
        GainNets {
            generator: Mlp::new(w + p, w, w, rng),
            discriminator: Mlp::new(w + p, w, p, rng),
            encoding,
            trace: Vec::new(),
        }
    }

    /// Softmax block outputs of the generator for encoded data and mask.
    pub fn generate(&self, encoded: &DMatrix<f64>, mask: &DMatrix<f64>) -> DMatrix<f64> {
        let (logits, _) = self.generator.forward(concat(encoded, mask));
        block_softmax(&self.encoding, &logits)
    }

    /// Per-cell probabilities that each cell was observed.
    pub fn discriminate(&self, imputed: &DMatrix<f64>, hint: &DMatrix<f64>) -> DMatrix<f64> {
        let (logits, _) = self.discriminator.forward(concat(imputed, hint));
        logits.map(sigmoid)
    }
}

fn concat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn block_softmax(enc: &GainEncoding, logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = logits.clone();
    for r in 0..logits.nrows() {
        for j in 0..enc.p() {
            let block = enc.block(j);
            let max = block.clone().map(|c| logits[(r, c)]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for c in block.clone() {
                out[(r, c)] = (logits[(r, c)] - max).exp();
                sum += out[(r, c)];
            }
            for c in block {
                out[(r, c)] /= sum;
            }
        }
    }
    out
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// `-sum [m ln m_hat + (1 - m) ln(1 - m_hat)]`.
pub fn discriminator_loss(mask: &DMatrix<f64>, m_hat: &DMatrix<f64>) -> f64 {
    mask.iter()
        .zip(m_hat.iter())
        .map(|(&m, &q)| {
            let q = clamp_prob(q);
            -(m * q.ln() + (1.0 - m) * (1.0 - q).ln())
        })
        .sum()
}

/// Adversarial loss `-sum (1 - m) ln m_hat` and weighted cross-entropy
/// reconstruction loss over observed cells.
pub fn generator_losses(
    enc: &GainEncoding,
    mask: &DMatrix<f64>,
    m_hat: &DMatrix<f64>,
    y_bar: &DMatrix<f64>,
    y: &DMatrix<f64>,
    weights: &[f64],
) -> (f64, f64) {
    let adversarial = mask
        .iter()
        .zip(m_hat.iter())
        .map(|(&m, &q)| -(1.0 - m) * clamp_prob(q).ln())
        .sum();
    let mut recon = 0.0;
    for r in 0..mask.nrows() {
        for j in 0..enc.p() {
            if mask[(r, j)] == 0.0 {
                continue;
            }
            let ce: f64 = enc.block(j).map(|c| -y[(r, c)] * clamp_prob(y_bar[(r, c)]).ln()).sum();
            recon += weights[j] * mask[(r, j)] * ce;
        }
    }
    (adversarial, recon)
}

/// Observed cells get a one with probability `hint_rate`; missing cells zero.
pub fn make_hint(mask: &DMatrix<f64>, hint_rate: f64, rng: &mut Rng) -> DMatrix<f64> {
    mask.map(|m| if m == 1.0 && rng.random::<f64>() < hint_rate { 1.0 } else { 0.0 })
}

fn expand_mask(enc: &GainEncoding, mask: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(mask.nrows(), enc.width());
    for r in 0..mask.nrows() {
        for j in 0..enc.p() {
            for c in enc.block(j) {
                out[(r, c)] = mask[(r, j)];
            }
        }
    }
    out
}

fn mask_rows(input: &IncompleteDataset, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), input.p(), |r, j| if input.mask().is_missing(rows[r], j) { 0.0 } else { 1.0 })
}

/// One batch worth of forward state.
struct Batch {
    mask: DMatrix<f64>,
    encoded: DMatrix<f64>,
    hint: DMatrix<f64>,
}

struct GeneratorPass {
    g_cache: MlpCache,
    y_bar: DMatrix<f64>,
    y_hat: DMatrix<f64>,
    mask_wide: DMatrix<f64>,
}

fn generator_pass(nets: &GainNets, batch: &Batch) -> GeneratorPass {
    let (logits, g_cache) = nets.generator.forward(concat(&batch.encoded, &batch.mask));
    let y_bar = block_softmax(&nets.encoding, &logits);
    let mask_wide = expand_mask(&nets.encoding, &batch.mask);
    let y_hat = mask_wide.component_mul(&batch.encoded) + mask_wide.map(|m| 1.0 - m).component_mul(&y_bar);
    GeneratorPass {
        g_cache,
        y_bar,
        y_hat,
        mask_wide,
    }
}

/// Loss and discriminator gradient; the generator output is held fixed.
fn discriminator_gradient(nets: &GainNets, batch: &Batch, pass: &GeneratorPass) -> (f64, MlpGrad) {
    let (logits, cache) = nets.discriminator.forward(concat(&pass.y_hat, &batch.hint));
    let m_hat = logits.map(sigmoid);
    let loss = discriminator_loss(&batch.mask, &m_hat);
    let d_logits = &m_hat - &batch.mask;
    let (grad, _) = nets.discriminator.backward(&cache, &d_logits);
    (loss, grad)
}

/// Losses and the generator gradient of `L_G + alpha L_M`, through the
/// discriminator held fixed.
fn generator_gradient(nets: &GainNets, batch: &Batch, pass: &GeneratorPass, alpha: f64, weights: &[f64]) -> (f64, f64, MlpGrad) {
    let enc = &nets.encoding;
    let (d_logits, d_cache) = nets.discriminator.forward(concat(&pass.y_hat, &batch.hint));
    let m_hat = d_logits.map(sigmoid);
    let (l_g, l_m) = generator_losses(enc, &batch.mask, &m_hat, &pass.y_bar, &batch.encoded, weights);

    // d L_G / d logit = -(1 - m)(1 - m_hat).
    let dz = batch.mask.zip_map(&m_hat, |m, q| -(1.0 - m) * (1.0 - q));
    let (_, d_in) = nets.discriminator.backward(&d_cache, &dz);
    let w = enc.width();
    let d_yhat = d_in.columns(0, w).into_owned();
    let d_ybar = d_yhat.component_mul(&pass.mask_wide.map(|m| 1.0 - m));

    let mut d_glogits = DMatrix::zeros(pass.y_bar.nrows(), w);
    for r in 0..pass.y_bar.nrows() {
        for j in 0..enc.p() {
            let block = enc.block(j);
            let dot: f64 = block.clone().map(|c| pass.y_bar[(r, c)] * d_ybar[(r, c)]).sum();
            let m = batch.mask[(r, j)];
            for c in block {
                let s = pass.y_bar[(r, c)];
                let adv = s * (d_ybar[(r, c)] - dot);
                let rec = alpha * weights[j] * m * (s - batch.encoded[(r, c)]);
                d_glogits[(r, c)] = adv + rec;
            }
        }
    }
    let (grad, _) = nets.generator.backward(&pass.g_cache, &d_glogits);
    (l_g, l_m, grad)
}

/// Trains the two nets by alternating SGD steps.
pub fn train_gain(input: &IncompleteDataset, config: &GainConfig, rng_seed: u64) -> Result<GainNets> {
    config.validate(input.p())?;
    input.check_imputable()?;
    let mut rng = rng::substream(rng_seed, &[0]);
    let mut nets = GainNets::new(&input.cardinalities(), &mut rng);
    let weights = config.missing_rate_weights.clone().unwrap_or_else(|| missing_rate_weights(input));
    let n = input.n();
    let batch_size = config.batch_size.min(n);
    nets.trace.reserve(config.n_steps);
    for step in 1..=config.n_steps {
        let rows = rand::seq::index::sample(&mut rng, n, batch_size).into_vec();
        let mask = mask_rows(input, &rows);
        let encoded = nets.encoding.encode(input, &rows, &mut rng);
        let hint = make_hint(&mask, config.hint_rate, &mut rng);
        let batch = Batch { mask, encoded, hint };

        let pass = generator_pass(&nets, &batch);
        let (l_d, d_grad) = discriminator_gradient(&nets, &batch, &pass);
        nets.discriminator.step(&d_grad, config.learning_rate);

        let (l_g, l_m, g_grad) = generator_gradient(&nets, &batch, &pass, config.alpha_weight, &weights);
        nets.generator.step(&g_grad, config.learning_rate);

        if !(l_d.is_finite() && l_g.is_finite() && l_m.is_finite()) {
            return Err(Error::Numerical(format!("GAIN training diverged at step {step}")));
        }
        nets.trace.push(LossRecord {
            step,
            discriminator: l_d,
            generator: l_g,
            reconstruction: l_m,
        });
    }
    Ok(nets)
}

pub fn write_loss_trace(trace: &[LossRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let mut write = || -> std::io::Result<()> {
        writeln!(out, "step,discriminator,generator,reconstruction")?;
        for r in trace {
            writeln!(out, "{},{},{},{}", r.step, r.discriminator, r.generator, r.reconstruction)?;
        }
        out.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

/// `L` completed datasets, each from fresh noise.
pub fn gain_impute(input: &IncompleteDataset, nets: &GainNets, l: usize, rng_seed: u64, draw: GainDraw) -> Result<ImputationResult> {
    if nets.encoding.cards != input.cardinalities() {
        return Err(Error::InvalidArgument("nets were trained on different variables".into()));
    }
    let n = input.n();
    let rows: Vec<usize> = (0..n).collect();
    let mask = mask_rows(input, &rows);
    let mut completed = Vec::with_capacity(l);
    for s in 0..l {
        let mut data = input.data().clone();
        if !input.mask().is_empty() {
            let mut rng = rng::substream(rng_seed, &[1, s as u64]);
            let encoded = nets.encoding.encode(input, &rows, &mut rng);
            let probs = nets.generate(&encoded, &mask);
            for j in 0..input.p() {
                let block = nets.encoding.block(j);
                for i in input.mask().missing_rows(j) {
                    let pr: Vec<f64> = block.clone().map(|c| probs[(i, c)]).collect();
                    let level = match draw {
                        GainDraw::Sample => sample_level(&pr, &mut rng),
                        GainDraw::Argmax => {
                            let best = pr.iter().enumerate().fold(0, |b, (d, &x)| if x > pr[b] { d } else { b });
                            best as u8 + 1
                        }
                    };
                    data.set(i, j, level);
                }
            }
        }
        completed.push(data);
    }
    Ok(ImputationResult {
        method: "GAIN".into(),
        seed: rng_seed,
        completed,
        diagnostics: BTreeMap::new(),
        trace: Vec::new(),
    })
}

/// Trains on the incomplete data and imputes `L` datasets.
pub fn gain_method(input: &IncompleteDataset, config: &GainConfig, l: usize, rng_seed: u64) -> Result<ImputationResult> {
    let nets = train_gain(input, config, rng::child_seed(rng_seed, &[0]))?;
    let mut res = gain_impute(input, &nets, l, rng::child_seed(rng_seed, &[1]), config.draw)?;
    res.seed = rng_seed;
    if let Some(last) = nets.trace.last() {
        res.diagnostics.insert("final_discriminator_loss".into(), last.discriminator);
        res.diagnostics.insert("final_generator_loss".into(), last.generator);
        res.diagnostics.insert("final_reconstruction_loss".into(), last.reconstruction);
    }
    Ok(res)
}

/// Decodes a completed dataset through the one-hot layout, for round-trip checks.
pub fn roundtrip(enc: &GainEncoding, data: &OrdinalDataset) -> Vec<Vec<u8>> {
    let rows: Vec<Vec<u8>> = (0..data.n()).map(|i| data.row(i)).collect();
    enc.decode(&enc.encode_levels(&rows))
}

/// Worst relative error between analytic and central-difference gradients
/// of each loss with respect to its net's parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientCheck {
    pub discriminator: f64,
    pub generator: f64,
    pub reconstruction: f64,
}

impl GradientCheck {
    pub fn worst(&self) -> f64 {
        self.discriminator.max(self.generator).max(self.reconstruction)
    }
}

fn params_mut(m: &mut Mlp) -> Vec<&mut f64> {
    let mut out = Vec::new();
    for layer in m.layers.iter_mut() {
        out.extend(layer.weights.iter_mut());
        out.extend(layer.bias.iter_mut());
    }
    out
}

fn flat_grad(g: &MlpGrad) -> Vec<f64> {
    let mut out = Vec::new();
    for (w, b) in g.weights.iter().zip(&g.bias) {
        out.extend(w.iter().copied());
        out.extend(b.iter().copied());
    }
    out
}

fn worst_error(analytic: &[f64], loss: impl Fn(usize, f64) -> f64) -> f64 {
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (k, &a) in analytic.iter().enumerate() {
        let fd = (loss(k, h) - loss(k, -h)) / (2.0 * h);
        let err = (fd - a).abs() / a.abs().max(fd.abs()).max(1e-3);
        worst = worst.max(err);
    }
    worst
}

/// Compares the backpropagated gradients of the discriminator loss, the
/// adversarial generator loss and the reconstruction loss with central
/// differences on a small random net and batch.
pub fn gradient_check(seed: u64) -> GradientCheck {
    let mut r = rng::from_seed(seed);
    let cards = [2, 3];
    let nets = GainNets::new(&cards, &mut r);
    let rows = 4;
    let mask = DMatrix::from_fn(rows, 2, |i, j| if (i + j) % 2 == 0 { 1.0 } else { 0.0 });
    let encoded = DMatrix::from_fn(rows, nets.encoding.width(), |_, _| r.random::<f64>() * 0.01);
    let mut encoded = encoded;
    for i in 0..rows {
        for j in 0..2 {
            if mask[(i, j)] == 1.0 {
                let block: Vec<usize> = nets.encoding.block(j).collect();
                let hit = block[r.random_range(0..block.len())];
                for c in block {
                    encoded[(i, c)] = if c == hit { 1.0 } else { 0.0 };
                }
            }
        }
    }
    let hint = make_hint(&mask, 0.5, &mut r);
    let batch = Batch { mask, encoded, hint };
    let weights = vec![0.7, 1.3];

    let pass = generator_pass(&nets, &batch);
    let (_, d_grad) = discriminator_gradient(&nets, &batch, &pass);
    let discriminator = worst_error(&flat_grad(&d_grad), |k, h| {
        let mut n2 = nets.clone();
        *params_mut(&mut n2.discriminator)[k] += h;
        discriminator_gradient(&n2, &batch, &pass).0
    });

    let perturbed = |k: usize, h: f64| {
        let mut n2 = nets.clone();
        *params_mut(&mut n2.generator)[k] += h;
        let pass = generator_pass(&n2, &batch);
        let (lg, lm, _) = generator_gradient(&n2, &batch, &pass, 0.0, &weights);
        (lg, lm)
    };
    let (_, _, g0) = generator_gradient(&nets, &batch, &pass, 0.0, &weights);
    let (_, _, g1) = generator_gradient(&nets, &batch, &pass, 1.0, &weights);
    let adversarial = flat_grad(&g0);
    let reconstruction_grad: Vec<f64> = flat_grad(&g1).iter().zip(&adversarial).map(|(a, b)| a - b).collect();
    GradientCheck {
        discriminator,
        generator: worst_error(&adversarial, |k, h| perturbed(k, h).0),
        reconstruction: worst_error(&reconstruction_grad, |k, h| perturbed(k, h).1),
    }
}
