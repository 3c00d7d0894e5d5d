//! Embedding table `f` over `D̂`, unembedding table `g` over `Ĉ`, and the
//! softmax model `p̂(c|d) = softmax(f(d)ᵀ g(c))`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};

use crate::concept_model::{ConceptVector, ContextVector, LatentModel};
use crate::data::{build_dataset, PairSampler, Vocab};
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::Seeded;

/// Logit assigned to concept vectors that contradict the context in the
/// exact-match construction.
pub const INCONSISTENT_LOGIT: f64 = -30.0;

const CHECKPOINT_MAGIC: &[u8; 8] = b"LINCONCK";

#[derive(Clone, Debug, PartialEq)]
pub struct RepresentationTables {
    dim: usize,
    n_contexts: usize,
    n_concepts: usize,
    f: Vec<f64>,
    g: Vec<f64>,
}

impl RepresentationTables {
    pub fn zeros(n_contexts: usize, n_concepts: usize, dim: usize) -> Self {
        Self {
            dim,
            n_contexts,
            n_concepts,
            f: vec![0.0; n_contexts * dim],
            g: vec![0.0; n_concepts * dim],
        }
    }

    /// Row-major `f` (`n_contexts × dim`) and `g` (`n_concepts × dim`).
    pub fn from_parts(dim: usize, f: Vec<f64>, g: Vec<f64>) -> Result<Self> {
        if dim == 0 || f.len() % dim != 0 || g.len() % dim != 0 {
            return Err(Error::InvalidArgument(format!(
                "table sizes {} and {} are not multiples of dim {dim}",
                f.len(),
                g.len()
            )));
        }
        if f.iter().chain(&g).any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite table entry".into()));
        }
        Ok(Self {
            dim,
            n_contexts: f.len() / dim,
            n_concepts: g.len() / dim,
            f,
            g,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_contexts(&self) -> usize {
        self.n_contexts
    }

    pub fn n_concepts(&self) -> usize {
        self.n_concepts
    }

    pub fn f(&self) -> &[f64] {
        &self.f
    }

    pub fn g(&self) -> &[f64] {
        &self.g
    }

    pub fn f_mut(&mut self) -> &mut [f64] {
        &mut self.f
    }

    pub fn g_mut(&mut self) -> &mut [f64] {
        &mut self.g
    }

    pub fn f_row(&self, d_id: usize) -> &[f64] {
        &self.f[d_id * self.dim..(d_id + 1) * self.dim]
    }

    pub fn g_row(&self, c_id: usize) -> &[f64] {
        &self.g[c_id * self.dim..(c_id + 1) * self.dim]
    }

    pub fn f_row_mut(&mut self, d_id: usize) -> &mut [f64] {
        &mut self.f[d_id * self.dim..(d_id + 1) * self.dim]
    }

    pub fn g_row_mut(&mut self, c_id: usize) -> &mut [f64] {
        &mut self.g[c_id * self.dim..(c_id + 1) * self.dim]
    }

    pub fn matches(&self, vocab: &Vocab) -> bool {
        self.n_contexts == vocab.n_contexts() && self.n_concepts == vocab.n_concepts()
    }

    /// Every entry multiplied by `lambda`.
    pub fn scaled(&self, lambda: f64) -> Self {
        let mut out = self.clone();
        out.f.iter_mut().chain(out.g.iter_mut()).for_each(|x| *x *= lambda);
        out
    }

    /// `f(d)ᵀ g(c)` for every concept id.
    pub fn logits(&self, d_id: usize) -> Vec<f64> {
        let fd = self.f_row(d_id);
        self.g.chunks_exact(self.dim).map(|gc| dot(fd, gc)).collect()
    }

    pub fn predict(&self, d_id: usize) -> Vec<f64> {
        let mut p = self.logits(d_id);
        softmax_in_place(&mut p);
        p
    }

    /// Mean cross-entropy `−ln p̂(c|d)` over the batch.
    pub fn batch_loss(&self, batch: &[(usize, usize)]) -> f64 {
        assert!(!batch.is_empty(), "empty batch");
        let total: f64 = batch
            .iter()
            .map(|&(d, c)| {
                let logits = self.logits(d);
                log_sum_exp(&logits) - logits[c]
            })
            .sum();
        total / batch.len() as f64
    }

    /// Exact mean gradient of [`batch_loss`](Self::batch_loss).
    pub fn batch_grads(&self, batch: &[(usize, usize)]) -> Gradients {
        assert!(!batch.is_empty(), "empty batch");
        let dim = self.dim;
        let inv = 1.0 / batch.len() as f64;
        let mut f_rows: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let mut g = vec![0.0; self.g.len()];
        let mut loss = 0.0;
        let mut probs = vec![0.0; self.n_concepts];
        for &(d, c_star) in batch {
            let fd = self.f_row(d);
            for (p, gc) in probs.iter_mut().zip(self.g.chunks_exact(dim)) {
                *p = dot(fd, gc);
            }
            let lse = log_sum_exp(&probs);
            loss += lse - probs[c_star];
            for p in probs.iter_mut() {
                *p = (*p - lse).exp();
            }
            probs[c_star] -= 1.0;
            let grad_fd = f_rows.entry(d).or_insert_with(|| vec![0.0; dim]);
            for ((r, gc), gg) in probs
                .iter()
                .zip(self.g.chunks_exact(dim))
                .zip(g.chunks_exact_mut(dim))
            {
                let w = r * inv;
                for k in 0..dim {
                    grad_fd[k] += w * gc[k];
                    gg[k] += w * fd[k];
                }
            }
        }
        Gradients {
            loss: loss * inv,
            f_rows,
            g,
        }
    }

    /// Binary checkpoint: header then row-major little-endian `f`, `g`.
    pub fn to_checkpoint(&self, vocab: &Vocab) -> Vec<u8> {
        let mut out = Vec::with_capacity(48 + 8 * (self.f.len() + self.g.len()));
        out.extend_from_slice(CHECKPOINT_MAGIC);
        for v in [
            vocab.m() as u64,
            self.dim as u64,
            self.n_concepts as u64,
            self.n_contexts as u64,
            vocab.ordering_hash(),
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for x in self.f.iter().chain(&self.g) {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_checkpoint(bytes: &[u8], vocab: &Vocab) -> Result<Self> {
        let bad = |msg: &str| Error::Parse {
            line: 0,
            msg: format!("checkpoint: {msg}"),
        };
        if bytes.len() < 48 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("missing header"));
        }
        let word = |k: usize| u64::from_le_bytes(bytes[8 + 8 * k..16 + 8 * k].try_into().unwrap());
        let (m, dim, n_con, n_ctx, hash) = (word(0), word(1), word(2), word(3), word(4));
        if m as usize != vocab.m()
            || n_con as usize != vocab.n_concepts()
            || n_ctx as usize != vocab.n_contexts()
            || hash != vocab.ordering_hash()
        {
            return Err(bad("vocabulary does not match"));
        }
        let dim = dim as usize;
        let n_f = n_ctx as usize * dim;
        let n_g = n_con as usize * dim;
        let body = &bytes[48..];
        if body.len() != 8 * (n_f + n_g) {
            return Err(bad("body length does not match header"));
        }
        let vals: Vec<f64> = body
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Self::from_parts(dim, vals[..n_f].to_vec(), vals[n_f..].to_vec())
    }
}

/// Sparse gradient: only rows of `f` seen in the batch, all of `g`.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub loss: f64,
    pub f_rows: BTreeMap<usize, Vec<f64>>,
    pub g: Vec<f64>,
}

impl Gradients {
    /// Dense `f` gradient (zeros for untouched rows).
    pub fn dense_f(&self, n_contexts: usize, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_contexts * dim];
        for (&d, row) in &self.f_rows {
            out[d * dim..(d + 1) * dim].copy_from_slice(row);
        }
        out
    }
}

pub fn softmax_in_place(x: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    x.iter_mut().for_each(|v| *v /= total);
}

pub fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Gaussian entries with standard deviation `init_scale / √dim`.
pub fn init_tables(vocab: &Vocab, dim: usize, init_scale: f64, seed: u64) -> Result<RepresentationTables> {
    if dim == 0 {
        return Err(Error::InvalidArgument("dim must be at least 1".into()));
    }
    let mut tables = RepresentationTables::zeros(vocab.n_contexts(), vocab.n_concepts(), dim);
    if init_scale == 0.0 {
        return Ok(tables);
    }
    let normal = Normal::new(0.0, init_scale / (dim as f64).sqrt())
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = Seeded::seed_from_u64(seed);
    for x in tables.f.iter_mut().chain(tables.g.iter_mut()) {
        *x = normal.sample(&mut rng);
    }
    Ok(tables)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one flat parameter block.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// One bias-corrected update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, hp: AdamParams) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::LengthMismatch {
                expected: self.m.len(),
                got: params.len().min(grad.len()),
            });
        }
        self.t += 1;
        let bc1 = 1.0 - hp.beta1.powi(self.t as i32);
        let bc2 = 1.0 - hp.beta2.powi(self.t as i32);
        for k in 0..params.len() {
            let gk = grad[k];
            self.m[k] = hp.beta1 * self.m[k] + (1.0 - hp.beta1) * gk;
            self.v[k] = hp.beta2 * self.v[k] + (1.0 - hp.beta2) * gk * gk;
            let m_hat = self.m[k] / bc1;
            let v_hat = self.v[k] / bc2;
            params[k] -= lr * m_hat / (v_hat.sqrt() + hp.eps);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step(
    mut state: AdamState,
    mut params: Vec<f64>,
    grad: &[f64],
    lr: f64,
    hp: AdamParams,
) -> Result<(AdamState, Vec<f64>)> {
    state.step(&mut params, grad, lr, hp)?;
    Ok((state, params))
}

#[derive(Clone, Debug)]
pub struct FiniteDiffReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub coordinates: usize,
}

/// Floor on the denominator of the relative error, so coordinates whose
/// true gradient is ~0 are judged by absolute error.
pub const REL_ERR_FLOOR: f64 = 1e-4;

/// Central differences on a random subsample of at least 200 coordinates
/// (all of them when the model is smaller).
pub fn finite_diff_check(
    tables: &RepresentationTables,
    batch: &[(usize, usize)],
    h: f64,
    seed: u64,
) -> Result<FiniteDiffReport> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step {h} must be positive")));
    }
    let grads = tables.batch_grads(batch);
    let analytic: Vec<f64> = grads
        .dense_f(tables.n_contexts, tables.dim)
        .into_iter()
        .chain(grads.g.iter().copied())
        .collect();
    let total = analytic.len();
    let coords: Vec<usize> = if total <= 200 {
        (0..total).collect()
    } else {
        let mut rng = Seeded::seed_from_u64(seed);
        index::sample(&mut rng, total, 200).into_vec()
    };
    let mut probe = tables.clone();
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    for &k in &coords {
        let original = *param_mut(&mut probe, k);
        *param_mut(&mut probe, k) = original + h;
        let up = probe.batch_loss(batch);
        *param_mut(&mut probe, k) = original - h;
        let down = probe.batch_loss(batch);
        *param_mut(&mut probe, k) = original;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[k];
        let abs = (a - numeric).abs();
        max_abs = max_abs.max(abs);
        max_rel = max_rel.max(abs / a.abs().max(numeric.abs()).max(REL_ERR_FLOOR));
    }
    Ok(FiniteDiffReport {
        max_rel_err: max_rel,
        max_abs_err: max_abs,
        coordinates: coords.len(),
    })
}

/// Flat parameter `k`: `f` entries first, then `g`.
fn param_mut(t: &mut RepresentationTables, k: usize) -> &mut f64 {
    let n_f = t.f.len();
    if k < n_f {
        &mut t.f[k]
    } else {
        &mut t.g[k - n_f]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam(AdamParams),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetMode {
    /// Fresh batches drawn from the model every step.
    Streaming,
    /// A pre-sampled dataset; batches are drawn from it with replacement.
    Fixed { size: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    /// Number of logged losses per plateau window; 0 disables early stopping.
    pub stop_window: usize,
    pub stop_tol: f64,
    pub init_scale: f64,
    pub seed: u64,
    pub log_every: usize,
    pub observe_prob: f64,
    pub dataset: DatasetMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Sgd,
            learning_rate: 0.1,
            batch_size: 100,
            max_steps: 20_000,
            stop_window: 50,
            stop_tol: 1e-4,
            init_scale: 1.0,
            seed: 0,
            log_every: 100,
            observe_prob: 0.5,
            dataset: DatasetMode::Streaming,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.log_every == 0 {
            return Err(Error::InvalidArgument(
                "batch_size and log_every must be at least 1".into(),
            ));
        }
        if let DatasetMode::Fixed { size: 0 } = self.dataset {
            return Err(Error::InvalidArgument("fixed dataset size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceEntry {
    pub step: usize,
    /// Mean batch loss since the previous log.
    pub loss: f64,
    pub probes: Vec<(String, f64)>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossTrace {
    pub entries: Vec<TraceEntry>,
    pub steps_run: usize,
    pub stopped_early: bool,
}

impl LossTrace {
    pub fn final_loss(&self) -> Option<f64> {
        self.entries.last().map(|e| e.loss)
    }

    fn plateaued(&self, window: usize, tol: f64) -> bool {
        let n = self.entries.len();
        if window == 0 || n < 2 * window {
            return false;
        }
        let mean = |s: &[TraceEntry]| s.iter().map(|e| e.loss).sum::<f64>() / s.len() as f64;
        let last = mean(&self.entries[n - window..]);
        let prev = mean(&self.entries[n - 2 * window..n - window]);
        (last - prev).abs() < tol
    }
}

/// Probe evaluated on each log: `(step, tables) -> named scalars`.
pub type Probe<'a> = dyn FnMut(usize, &RepresentationTables) -> Vec<(String, f64)> + 'a;

pub fn train(
    model: &LatentModel,
    vocab: &Vocab,
    tables: RepresentationTables,
    config: &TrainConfig,
) -> Result<(RepresentationTables, LossTrace)> {
    train_with_probe(model, vocab, tables, config, None)
}

pub fn train_with_probe(
    model: &LatentModel,
    vocab: &Vocab,
    mut tables: RepresentationTables,
    config: &TrainConfig,
    mut probe: Option<&mut Probe<'_>>,
) -> Result<(RepresentationTables, LossTrace)> {
    config.validate()?;
    if !tables.matches(vocab) {
        return Err(Error::Precondition(format!(
            "tables hold {}x{} rows but the vocabulary has {}x{}",
            tables.n_contexts,
            tables.n_concepts,
            vocab.n_contexts(),
            vocab.n_concepts()
        )));
    }
    let sampler = PairSampler::new(model, vocab, config.observe_prob)?;
    let mut rng = Seeded::seed_from_u64(config.seed);
    let fixed = match config.dataset {
        DatasetMode::Streaming => None,
        DatasetMode::Fixed { size } => Some(build_dataset(
            model,
            vocab,
            size,
            config.observe_prob,
            rng.random(),
        )?),
    };
    let dim = tables.dim;
    let mut adam = match config.optimizer {
        Optimizer::Adam(_) => Some((AdamState::new(tables.f.len()), AdamState::new(tables.g.len()))),
        Optimizer::Sgd => None,
    };
    let lr = config.learning_rate;
    let mut trace = LossTrace::default();
    let mut batch = Vec::with_capacity(config.batch_size);
    let mut running = 0.0;
    let mut since_log = 0usize;
    for step in 1..=config.max_steps {
        match &fixed {
            None => sampler.fill(config.batch_size, &mut rng, &mut batch)?,
            Some(ds) => {
                batch.clear();
                for _ in 0..config.batch_size {
                    batch.push(ds.pairs[rng.random_range(0..ds.len())]);
                }
            }
        }
        let grads = tables.batch_grads(&batch);
        if !grads.loss.is_finite() {
            return Err(Error::Divergence {
                step,
                loss: grads.loss,
                learning_rate: lr,
            });
        }
        match (&mut adam, config.optimizer) {
            (Some((sf, sg)), Optimizer::Adam(hp)) => {
                let dense = grads.dense_f(tables.n_contexts, dim);
                sf.step(&mut tables.f, &dense, lr, hp)?;
                sg.step(&mut tables.g, &grads.g, lr, hp)?;
            }
            _ => {
                for (&d, row) in &grads.f_rows {
                    for (x, gx) in tables.f_row_mut(d).iter_mut().zip(row) {
                        *x -= lr * gx;
                    }
                }
                for (x, gx) in tables.g.iter_mut().zip(&grads.g) {
                    *x -= lr * gx;
                }
            }
        }
        if tables.f.iter().chain(&tables.g).any(|x| !x.is_finite()) {
            return Err(Error::Divergence {
                step,
                loss: f64::NAN,
                learning_rate: lr,
            });
        }
        running += grads.loss;
        since_log += 1;
        trace.steps_run = step;
        if step % config.log_every == 0 || step == config.max_steps {
            let probes = match probe.as_mut() {
                Some(p) => p(step, &tables),
                None => Vec::new(),
            };
            trace.entries.push(TraceEntry {
                step,
                loss: running / since_log as f64,
                probes,
            });
            running = 0.0;
            since_log = 0;
            if trace.plateaued(config.stop_window, config.stop_tol) {
                trace.stopped_early = step < config.max_steps;
                break;
            }
        }
    }
    Ok((tables, trace))
}

/// `E_d[H(p(·|d))]` under the data-generating law of `sampler`'s regime with
/// full vocabulary and independent masks; the floor for the training loss.
pub fn conditional_entropy_bound(model: &LatentModel, observe_prob: f64) -> Result<f64> {
    let m = model.m();
    let joint = model.exact()?;
    let mut total = 0.0;
    for keep in 0..1u32 << m {
        let k = keep.count_ones() as i32;
        let w = observe_prob.powi(k) * (1.0 - observe_prob).powi(m as i32 - k);
        if w == 0.0 {
            continue;
        }
        // Group concept vectors by their observed values.
        let mut groups: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
        for (code, &p) in joint.probs().iter().enumerate() {
            groups.entry(code as u32 & keep).or_default().push(p);
        }
        for probs in groups.values() {
            let pd: f64 = probs.iter().sum();
            let h: f64 = -probs
                .iter()
                .map(|&p| {
                    let q = p / pd;
                    if q > 0.0 {
                        q * q.ln()
                    } else {
                        0.0
                    }
                })
                .sum::<f64>();
            total += w * pd * h;
        }
    }
    Ok(total)
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Deterministic perturbation in `[-contamination, contamination]` that
/// depends on `c` only through the coordinates `d` observes, and vanishes
/// when `d` observes nothing.
fn perturbation(d: &ContextVector, c: &ConceptVector, contamination: f64) -> f64 {
    if d.observed_mask() == 0 || contamination == 0.0 {
        return 0.0;
    }
    let key = d.lex_rank().wrapping_mul(0x1_0000_0001) ^ (c.code() & d.observed_mask()) as u64;
    let u = (splitmix(key) >> 11) as f64 / (1u64 << 53) as f64;
    contamination * (2.0 * u - 1.0)
}

fn require_full(vocab: &Vocab, model: &LatentModel) -> Result<()> {
    if vocab.m() != model.m() || !vocab.is_full() {
        return Err(Error::Precondition(
            "construction needs the full vocabulary of the model".into(),
        ));
    }
    Ok(())
}

/// Tables with `f = I` (one axis per context) whose log-odds for every
/// concept equal the true marginal log-odds on all contexts leaving that
/// concept unobserved. Requires jointly independent concepts.
pub fn construct_log_odds_tables(
    model: &LatentModel,
    vocab: &Vocab,
    contamination: f64,
) -> Result<RepresentationTables> {
    require_full(vocab, model)?;
    let joint = model.exact()?;
    let m = model.m();
    let marg: Vec<f64> = (0..m).map(|i| joint.marginal_one(i)).collect();
    let mut worst: f64 = 0.0;
    for c in ConceptVector::all(m) {
        let prod: f64 = (0..m)
            .map(|i| if c.get(i) { marg[i] } else { 1.0 - marg[i] })
            .product();
        worst = worst.max((prod - joint.prob(&c)).abs());
    }
    if worst > 1e-12 {
        return Err(Error::Dependent(worst));
    }
    logit_tables(vocab, |d, c| {
        let s: f64 = (0..m)
            .map(|j| if c.get(j) { marg[j].ln() } else { (1.0 - marg[j]).ln() })
            .sum();
        s + perturbation(d, c, contamination)
    })
}

/// Tables with `f = I` whose logits are `ln p(c ⊕ d)` plus a perturbation,
/// where `c ⊕ d` overwrites the coordinates `d` observes. Every log-odds
/// ratio for a concept `d` leaves unobserved then equals the true log-odds
/// given all other coordinates, so it depends only on the neighbors.
pub fn construct_neighbor_log_odds_tables(
    model: &LatentModel,
    vocab: &Vocab,
    contamination: f64,
) -> Result<RepresentationTables> {
    require_full(vocab, model)?;
    let joint = model.exact()?;
    let m = model.m();
    logit_tables(vocab, |d, c| {
        let merged = (c.code() & !d.observed_mask()) | d.value_bits();
        joint.prob(&ConceptVector::from_code(m, merged)).ln() + perturbation(d, c, contamination)
    })
}

fn logit_tables(
    vocab: &Vocab,
    logit: impl Fn(&ContextVector, &ConceptVector) -> f64,
) -> Result<RepresentationTables> {
    let n_ctx = vocab.n_contexts();
    let n_con = vocab.n_concepts();
    let mut tables = RepresentationTables::zeros(n_ctx, n_con, n_ctx);
    for d_id in 0..n_ctx {
        tables.f_row_mut(d_id)[d_id] = 1.0;
    }
    for c_id in 0..n_con {
        let c = vocab.concept(c_id);
        for d_id in 0..n_ctx {
            let d = vocab.context(d_id);
            tables.g_row_mut(c_id)[d_id] = logit(&d, &c);
        }
    }
    Ok(tables)
}

/// Solves `f g(c) = logits[·, c]` for `g` given a square invertible `f`
/// (`n_contexts × n_contexts`, row-major).
pub fn realize_logits(logits: &DMatrix<f64>, f: Vec<f64>) -> Result<RepresentationTables> {
    let n_ctx = logits.nrows();
    if f.len() != n_ctx * n_ctx {
        return Err(Error::DimensionMismatch(f.len(), n_ctx * n_ctx));
    }
    let fm = DMatrix::from_row_slice(n_ctx, n_ctx, &f);
    let gt = fm
        .lu()
        .solve(logits)
        .ok_or_else(|| Error::Precondition("embedding matrix is singular".into()))?;
    let g: Vec<f64> = (0..logits.ncols())
        .flat_map(|c| gt.column(c).iter().copied().collect::<Vec<_>>())
        .collect();
    RepresentationTables::from_parts(n_ctx, f, g)
}

/// Dense random `f` with logits `ln p(c|d)` on consistent pairs and
/// [`INCONSISTENT_LOGIT`] elsewhere, so `p̂` reproduces every positive
/// conditional up to `exp(INCONSISTENT_LOGIT)` leakage.
pub fn exact_match_tables(model: &LatentModel, vocab: &Vocab, seed: u64) -> Result<RepresentationTables> {
    require_full(vocab, model)?;
    let n_ctx = vocab.n_contexts();
    let n_con = vocab.n_concepts();
    let mut logits = DMatrix::zeros(n_ctx, n_con);
    for d_id in 0..n_ctx {
        let cond = model.conditional(&vocab.context(d_id))?;
        for c_id in 0..n_con {
            let p = cond.prob(&vocab.concept(c_id));
            logits[(d_id, c_id)] = if p > 0.0 { p.ln() } else { INCONSISTENT_LOGIT };
        }
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = Seeded::seed_from_u64(seed);
    let f: Vec<f64> = (0..n_ctx * n_ctx).map(|_| normal.sample(&mut rng)).collect();
    realize_logits(&logits, f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::full_vocab;
    use approx::assert_abs_diff_eq;

    fn rank_one_tables() -> RepresentationTables {
        // f(d) = (1), g(c) = (ln(c + 1))
        let g = (1..=4).map(|k| (k as f64).ln()).collect();
        RepresentationTables::from_parts(1, vec![1.0], g).unwrap()
    }

    #[test]
    fn zero_tables_predict_uniform() {
        let t = RepresentationTables::zeros(3, 4, 2);
        for p in t.predict(1) {
            assert_abs_diff_eq!(p, 0.25, epsilon = 1e-15);
        }
        let t8 = RepresentationTables::zeros(1, 8, 2);
        assert_abs_diff_eq!(t8.batch_loss(&[(0, 3)]), 8f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn hand_set_logits() {
        let t = rank_one_tables();
        let p = t.predict(0);
        for (k, expected) in [0.1, 0.2, 0.3, 0.4].iter().enumerate() {
            assert_abs_diff_eq!(p[k], expected, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(t.batch_loss(&[(0, 3)]), -(0.4f64.ln()), epsilon = 1e-12);
        assert_abs_diff_eq!(t.batch_loss(&[(0, 3)]), 0.916_290_731_874_155, epsilon = 1e-12);
    }

    #[test]
    fn confident_target_has_near_zero_loss() {
        let t = RepresentationTables::from_parts(1, vec![1.0], vec![0.0, 50.0]).unwrap();
        assert!(t.batch_loss(&[(0, 1)]) < 1e-20);
    }

    #[test]
    fn shift_invariance() {
        // Adding a constant to every logit: append a coordinate with f = 1
        // and g = constant.
        let base = RepresentationTables::from_parts(1, vec![0.7], vec![0.1, -0.4, 1.3]).unwrap();
        let shifted =
            RepresentationTables::from_parts(2, vec![0.7, 1.0], vec![0.1, 5.0, -0.4, 5.0, 1.3, 5.0]).unwrap();
        for (a, b) in base.predict(0).iter().zip(shifted.predict(0)) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_point_is_stationary() {
        let t = RepresentationTables::zeros(3, 2, 2);
        let grads = t.batch_grads(&[(0, 1), (2, 0)]);
        assert!(grads.g.iter().all(|&x| x == 0.0));
        assert!(grads.f_rows.values().flatten().all(|&x| x == 0.0));
        let fd = finite_diff_check(&t, &[(0, 1), (2, 0)], 1e-5, 0).unwrap();
        assert!(fd.max_abs_err < 1e-9);
    }

    #[test]
    fn single_sample_embedding_gradient() {
        let vocab = full_vocab(2).unwrap();
        let t = init_tables(&vocab, 3, 1.0, 5).unwrap();
        let (d, c_star) = (4, 2);
        let grads = t.batch_grads(&[(d, c_star)]);
        let p = t.predict(d);
        let mut expected = vec![0.0; 3];
        for c in 0..vocab.n_concepts() {
            for k in 0..3 {
                expected[k] += p[c] * t.g_row(c)[k];
            }
        }
        for k in 0..3 {
            expected[k] -= t.g_row(c_star)[k];
            assert_abs_diff_eq!(grads.f_rows[&d][k], expected[k], epsilon = 1e-14);
        }
        assert_eq!(grads.f_rows.len(), 1);
    }

    #[test]
    fn finite_differences_and_truncation_order() {
        let vocab = full_vocab(3).unwrap();
        let t = init_tables(&vocab, 4, 1.0, 9).unwrap();
        let batch: Vec<_> = (0..10).map(|k| (k * 2 % 27, k % 8)).collect();
        let fine = finite_diff_check(&t, &batch, 1e-5, 1).unwrap();
        let coarse = finite_diff_check(&t, &batch, 1e-2, 1).unwrap();
        assert!(fine.max_rel_err < 1e-5, "{}", fine.max_rel_err);
        assert!(coarse.max_abs_err > fine.max_abs_err);
        assert!(finite_diff_check(&t, &batch, 0.0, 1).is_err());
    }

    #[test]
    fn init_properties() {
        let vocab = full_vocab(3).unwrap();
        let zero = init_tables(&vocab, 5, 0.0, 1).unwrap();
        assert!(zero.f().iter().chain(zero.g()).all(|&x| x == 0.0));
        assert_eq!(init_tables(&vocab, 5, 1.0, 2).unwrap(), init_tables(&vocab, 5, 1.0, 2).unwrap());
        let big = full_vocab(7).unwrap();
        let t = init_tables(&big, 64, 1.0, 3).unwrap();
        let norms: Vec<f64> = (0..1000).map(|d| crate::linalg::norm(t.f_row(d))).collect();
        let outside = norms.iter().filter(|n| !(0.7..1.3).contains(*n)).count();
        // chi with 64 dof scaled by 1/8: sd ≈ 0.088, so ±30% is ≈ 3.4 sd
        assert!(outside <= 10, "{outside}");
        let mean = norms.iter().sum::<f64>() / 1000.0;
        assert!((mean - 0.996).abs() < 0.02, "{mean}");
    }

    #[test]
    fn adam_first_step_and_zero_gradient() {
        let hp = AdamParams::default();
        let (state, params) = adam_step(AdamState::new(3), vec![1.0, 2.0, 3.0], &[0.0; 3], 0.001, hp).unwrap();
        assert_eq!(params, vec![1.0, 2.0, 3.0]);
        assert_eq!(state.t, 1);
        let (_, moved) = adam_step(AdamState::new(3), vec![0.0; 3], &[0.5, -2.0, 1e-3], 0.001, hp).unwrap();
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + ε)
        for (x, g) in moved.iter().zip([0.5f64, -2.0, 1e-3]) {
            assert_abs_diff_eq!(*x, -0.001 * g / (g.abs() + 1e-8), epsilon = 1e-15);
        }
        assert!(AdamState::new(2).step(&mut [0.0; 3], &[0.0; 3], 0.1, hp).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let vocab = full_vocab(2).unwrap();
        let t = init_tables(&vocab, 3, 1.0, 4).unwrap();
        let bytes = t.to_checkpoint(&vocab);
        assert_eq!(RepresentationTables::from_checkpoint(&bytes, &vocab).unwrap(), t);
        let other = full_vocab(3).unwrap();
        assert!(RepresentationTables::from_checkpoint(&bytes, &other).is_err());
    }

    #[test]
    fn zero_learning_rate_leaves_tables() {
        let model = LatentModel::independent(&[0.4, 0.6]).unwrap();
        let vocab = full_vocab(2).unwrap();
        let t = init_tables(&vocab, 2, 1.0, 1).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            max_steps: 50,
            log_every: 10,
            ..TrainConfig::default()
        };
        let (after, trace) = train(&model, &vocab, t.clone(), &cfg).unwrap();
        assert_eq!(after, t);
        assert_eq!(trace.entries.len(), 5);
    }

    #[test]
    fn divergence_is_reported() {
        let model = LatentModel::independent(&[0.4, 0.6]).unwrap();
        let vocab = full_vocab(2).unwrap();
        let t = init_tables(&vocab, 2, 1.0, 1).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e300,
            max_steps: 50,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&model, &vocab, t, &cfg),
            Err(Error::Divergence { .. })
        ));
    }

    #[test]
    fn entropy_bound_single_coin() {
        // masks never observe: H = ln 2 for a fair coin
        let model = LatentModel::independent(&[0.5]).unwrap();
        assert_abs_diff_eq!(conditional_entropy_bound(&model, 0.0).unwrap(), 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(conditional_entropy_bound(&model, 1.0).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            conditional_entropy_bound(&model, 0.5).unwrap(),
            0.5 * 2f64.ln(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn log_odds_construction_rejects_dependent_models() {
        let graph = crate::concept_model::ConceptGraph::new(
            2,
            crate::concept_model::GraphKind::Dag,
            vec![(0, 1)],
        )
        .unwrap();
        let model = LatentModel::new(
            graph,
            vec![
                crate::concept_model::Cpt { parents: vec![], probs: vec![0.5] },
                crate::concept_model::Cpt { parents: vec![0], probs: vec![0.3, 0.7] },
            ],
        )
        .unwrap();
        let vocab = full_vocab(2).unwrap();
        assert!(matches!(
            construct_log_odds_tables(&model, &vocab, 0.0),
            Err(Error::Dependent(_))
        ));
    }

    #[test]
    fn log_odds_construction_matches_marginals() {
        let model = LatentModel::independent(&[0.8, 0.5, 0.35]).unwrap();
        let vocab = full_vocab(3).unwrap();
        let t = construct_log_odds_tables(&model, &vocab, 0.5).unwrap();
        for i in 0..3 {
            let target = model.marginal_log_odds(i).unwrap();
            for (d_id, d) in vocab.contexts().iter().enumerate() {
                if d.entry(i) != crate::concept_model::Entry::Diamond {
                    continue;
                }
                let p = t.predict(d_id);
                for c in vocab.concepts() {
                    let lo = vocab.concept_id(&c.with(i, false)).unwrap();
                    let hi = vocab.concept_id(&c.with(i, true)).unwrap();
                    assert_abs_diff_eq!((p[lo] / p[hi]).ln(), target, epsilon = 1e-10);
                }
            }
        }
    }
}
