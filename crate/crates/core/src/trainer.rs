//! Deterministic training loop: AdamW with decoupled weight decay, linear
//! warmup followed by cosine decay, and a frozen reference model.
//!
//! A training *unit* is a preference pair for the pairwise methods and a
//! single labeled example for BNF; `batch_size` counts units. Batch loss and
//! gradients are means over units.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label, PreferenceExample};
use crate::error::{Error, Result};
use crate::losses::{bnf_loss_grad_cached, pairwise_loss_grad, LossHyperparams, Method};
use crate::model::{token_log_probs, ModelParams};
use crate::numerics::SeededRng;
use crate::scalar::{Precision, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    #[serde(default)]
    pub hp: LossHyperparams,
    pub lr_peak: f64,
    pub warmup_frac: f64,
    pub steps: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_eps")]
    pub adam_eps: f64,
    pub seed: u64,
    #[serde(default)]
    pub precision: Precision,
    /// Global-norm gradient clip; off when absent.
    #[serde(default)]
    pub clip_norm: Option<f64>,
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-8
}

impl TrainConfig {
    /// Desk-scale defaults for `method`.
    pub fn new(method: Method, seed: u64) -> Self {
        Self {
            method,
            hp: LossHyperparams::default(),
            lr_peak: 3e-3,
            warmup_frac: 0.1,
            steps: 500,
            batch_size: 64,
            weight_decay: 0.0,
            adam_beta1: default_beta1(),
            adam_beta2: default_beta2(),
            adam_eps: default_eps(),
            seed,
            precision: Precision::Double,
            clip_norm: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.lr_peak > 0.0 && self.lr_peak.is_finite()) {
            return Err(Error::Config(format!("lr_peak must be > 0, got {}", self.lr_peak)));
        }
        if !(0.0..=1.0).contains(&self.warmup_frac) {
            return Err(Error::Config(format!("warmup_frac must be in [0, 1], got {}", self.warmup_frac)));
        }
        if self.warmup_frac > 0.0 && self.steps > 0 && self.warmup_frac * (self.steps as f64) < 1.0 {
            return Err(Error::Config(format!(
                "warmup_frac * steps must be >= 1 when warmup is enabled ({} * {})",
                self.warmup_frac, self.steps
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight_decay must be >= 0, got {}", self.weight_decay)));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return Err(Error::Config(format!("adam_eps must be > 0, got {}", self.adam_eps)));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("clip_norm must be > 0, got {c}")));
            }
        }
        Ok(())
    }

    pub fn warmup_steps(&self) -> usize {
        (self.warmup_frac * self.steps as f64).ceil() as usize
    }

    pub fn adamw(&self) -> AdamW {
        AdamW {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// Learning rate at `step` (0-based).
///
/// Warmup: `lr_peak · (step + 1) / warmup_steps`. Afterwards
/// `lr_peak · ½(1 + cos(π · progress))` with progress running from 0 at the
/// first post-warmup step to 1 at `steps − 1`. A single post-warmup step gets
/// `lr_peak`.
pub fn lr_schedule(step: usize, cfg: &TrainConfig) -> Result<f64> {
    if step >= cfg.steps {
        return Err(Error::Domain(format!("step {step} outside [0, {})", cfg.steps)));
    }
    let warm = cfg.warmup_steps();
    if step < warm {
        return Ok(cfg.lr_peak * (step + 1) as f64 / warm as f64);
    }
    let span = cfg.steps - 1 - warm;
    if span == 0 {
        return Ok(cfg.lr_peak);
    }
    let progress = (step - warm) as f64 / span as f64;
    Ok(cfg.lr_peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// First and second moment accumulators plus the number of steps taken.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: usize,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        Self {
            m: vec![T::zero(); params.num_params()],
            v: vec![T::zero(); params.num_params()],
            step: 0,
        }
    }
}

/// One bias-corrected AdamW update with decoupled weight decay.
pub fn adamw_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &ModelParams<T>,
    opt: &mut OptimizerState<T>,
    lr: f64,
    cfg: &AdamW,
) -> Result<()> {
    if !params.same_shape(grads) || opt.m.len() != params.num_params() || opt.v.len() != params.num_params() {
        return Err(Error::Dimension("optimizer, gradient and parameter shapes differ".into()));
    }
    if let Some(k) = grads.as_slice().iter().position(|g| !g.is_finite()) {
        return Err(Error::Divergence {
            step: opt.step,
            msg: format!("non-finite gradient at parameter {k}"),
        });
    }
    opt.step += 1;
    let t = opt.step as i32;
    let (b1, b2) = (T::c(cfg.beta1), T::c(cfg.beta2));
    let bc1 = T::one() - b1.powi(t);
    let bc2 = T::one() - b2.powi(t);
    let lr_t = T::c(lr);
    let decay = T::one() - lr_t * T::c(cfg.weight_decay);
    let eps = T::c(cfg.eps);
    for (((p, &g), m), v) in params
        .as_mut_slice()
        .iter_mut()
        .zip(grads.as_slice())
        .zip(opt.m.iter_mut())
        .zip(opt.v.iter_mut())
    {
        *m = b1 * *m + (T::one() - b1) * g;
        *v = b2 * *v + (T::one() - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p = *p * decay - lr_t * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// One row of the per-step metrics log; means are over the batch before the update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub mean_logp_w: f64,
    pub mean_logp_l: f64,
    pub mean_per_token_logp_l: f64,
}

pub const METRICS_COLUMNS: [&str; 6] = [
    "step",
    "loss",
    "lr",
    "mean_logp_w",
    "mean_logp_l",
    "mean_per_token_logp_l",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn to_csv(&self) -> String {
        let mut out = METRICS_COLUMNS.join(",");
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.step, r.loss, r.lr, r.mean_logp_w, r.mean_logp_l, r.mean_per_token_logp_l
            );
        }
        out
    }

    /// Parses a metrics CSV; `step` and `mean_per_token_logp_l` are required,
    /// other absent columns read as NaN.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| Error::Format("metrics log is empty".into()))?
            .split(',')
            .map(str::trim)
            .collect();
        let col = |name: &str| header.iter().position(|h| *h == name);
        let step_col = col("step").ok_or_else(|| Error::Format("missing column step".into()))?;
        let ptl_col = col("mean_per_token_logp_l")
            .ok_or_else(|| Error::Format("missing column mean_per_token_logp_l".into()))?;
        let others = [col("loss"), col("lr"), col("mean_logp_w"), col("mean_logp_l")];
        let mut rows = Vec::new();
        for (k, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if cells.len() != header.len() {
                return Err(Error::Parse { line: k + 2, msg: format!("expected {} cells", header.len()) });
            }
            let num = |c: usize| -> Result<f64> {
                cells[c]
                    .parse::<f64>()
                    .map_err(|e| Error::Parse { line: k + 2, msg: format!("column {}: {e}", header[c]) })
            };
            let opt = |c: Option<usize>| -> Result<f64> { c.map_or(Ok(f64::NAN), num) };
            rows.push(MetricsRow {
                step: cells[step_col]
                    .parse()
                    .map_err(|e| Error::Parse { line: k + 2, msg: format!("column step: {e}") })?,
                loss: opt(others[0])?,
                lr: opt(others[1])?,
                mean_logp_w: opt(others[2])?,
                mean_logp_l: opt(others[3])?,
                mean_per_token_logp_l: num(ptl_col)?,
            });
        }
        Ok(Self { rows })
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Result of [`train_run`].
#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub params: ModelParams<T>,
    /// The frozen reference copy of the initial parameters.
    pub reference: ModelParams<T>,
    pub log: MetricsLog,
}

#[derive(Debug, Clone, Copy)]
enum Unit {
    Pair { w: usize, l: usize },
    Single(usize),
}

/// Reference statistics of one example, computed once.
struct RefCache<T> {
    token_logp: Vec<T>,
    seq_logp: T,
}

struct ItemResult<T> {
    loss: T,
    grad: ModelParams<T>,
    /// (label, sequence log-likelihood, length) of each sequence seen.
    seqs: [(Label, T, usize); 2],
    n_seqs: usize,
}

fn item_grad<T: Scalar>(
    cfg: &TrainConfig,
    params: &ModelParams<T>,
    data: &Dataset,
    refs: &[RefCache<T>],
    unit: Unit,
) -> Result<ItemResult<T>> {
    let mut grad = params.zeros_like();
    match unit {
        Unit::Pair { w, l } => {
            let (ew, el) = (&data.examples[w], &data.examples[l]);
            let (zw, cw) = params.forward_with_cache(&ew.prompt, &ew.response)?;
            let (zl, cl) = params.forward_with_cache(&el.prompt, &el.response)?;
            let g = pairwise_loss_grad(
                cfg.method,
                &zw,
                &zl,
                &ew.response,
                &el.response,
                (refs[w].seq_logp, refs[l].seq_logp),
                &cfg.hp,
            )?;
            params.backward_with_cache(&ew.prompt, &ew.response, &g.dlogits_w, &cw, &mut grad)?;
            params.backward_with_cache(&el.prompt, &el.response, &g.dlogits_l, &cl, &mut grad)?;
            let lw = token_log_probs(&zw, &ew.response)?.into_iter().sum();
            let ll = token_log_probs(&zl, &el.response)?.into_iter().sum();
            Ok(ItemResult {
                loss: g.loss,
                grad,
                seqs: [
                    (Label::Preferred, lw, ew.response.len()),
                    (Label::Dispreferred, ll, el.response.len()),
                ],
                n_seqs: 2,
            })
        }
        Unit::Single(k) => {
            let ex: &PreferenceExample = &data.examples[k];
            let (z, cache) = params.forward_with_cache(&ex.prompt, &ex.response)?;
            let g = bnf_loss_grad_cached(&z, &refs[k].token_logp, &ex.response, ex.label)?;
            params.backward_with_cache(&ex.prompt, &ex.response, &g.dlogits, &cache, &mut grad)?;
            let lp = token_log_probs(&z, &ex.response)?.into_iter().sum();
            Ok(ItemResult {
                loss: g.loss,
                grad,
                seqs: [(ex.label, lp, ex.response.len()); 2],
                n_seqs: 1,
            })
        }
    }
}

fn units_for(method: Method, data: &Dataset) -> Result<Vec<Unit>> {
    if method.is_pairwise() {
        if let Some(k) = data.first_singleton() {
            return Err(Error::Config(format!(
                "method {method} needs paired data; example {k} has no pair_id"
            )));
        }
        Ok(data
            .pair_index()?
            .into_iter()
            .map(|p| Unit::Pair { w: p.preferred, l: p.dispreferred })
            .collect())
    } else {
        Ok((0..data.examples.len()).map(Unit::Single).collect())
    }
}

fn mean_or_nan(sum: f64, n: usize) -> f64 {
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Trains a copy of `init` on `data` with a single thread.
pub fn train_run<T: Scalar>(cfg: &TrainConfig, init: &ModelParams<T>, data: &Dataset) -> Result<TrainOutcome<T>> {
    train_run_threads(cfg, init, data, 1)
}

/// [`train_run`] with per-unit gradients computed on `threads` workers.
///
/// Gradients are reduced in unit order, so the result does not depend on
/// the thread count.
pub fn train_run_threads<T: Scalar>(
    cfg: &TrainConfig,
    init: &ModelParams<T>,
    data: &Dataset,
    threads: usize,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    data.validate()?;
    if init.vocab_size() != data.vocab_size {
        return Err(Error::Config(format!(
            "model vocab_size {} differs from dataset vocab_size {}",
            init.vocab_size(),
            data.vocab_size
        )));
    }
    let reference = init.clone();
    let mut params = init.clone();
    let mut log = MetricsLog::default();
    if cfg.steps == 0 {
        return Ok(TrainOutcome { params, reference, log });
    }
    let units = units_for(cfg.method, data)?;
    if units.is_empty() {
        return Err(Error::Config("dataset has no training units".into()));
    }
    let refs: Vec<RefCache<T>> = data
        .examples
        .iter()
        .map(|ex| {
            let (z, _) = reference.forward_with_cache(&ex.prompt, &ex.response)?;
            let token_logp = token_log_probs(&z, &ex.response)?;
            let seq_logp = token_logp.iter().copied().sum();
            Ok(RefCache { token_logp, seq_logp })
        })
        .collect::<Result<_>>()?;

    let pool = if threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };

    let mut rng = SeededRng::new(cfg.seed).split(0x5eed_0001);
    let mut order: Vec<usize> = (0..units.len()).collect();
    let mut cursor = units.len();
    let mut opt = OptimizerState::new(&params);
    let adamw = cfg.adamw();

    for step in 0..cfg.steps {
        if cursor >= units.len() {
            rng.shuffle(&mut order);
            cursor = 0;
        }
        let end = (cursor + cfg.batch_size).min(units.len());
        let batch: Vec<Unit> = order[cursor..end].iter().map(|&k| units[k]).collect();
        cursor = end;

        let lr = lr_schedule(step, cfg)?;
        let eval = |u: &Unit| item_grad(cfg, &params, data, &refs, *u);
        let results: Vec<Result<ItemResult<T>>> = match &pool {
            Some(pool) => pool.install(|| batch.par_iter().map(eval).collect()),
            None => batch.iter().map(eval).collect(),
        };

        let mut grad = params.zeros_like();
        let mut loss = T::zero();
        let (mut sum_w, mut n_w, mut sum_l, mut sum_ptl, mut n_l) = (0.0, 0usize, 0.0, 0.0, 0usize);
        for r in results {
            let r = r?;
            loss += r.loss;
            grad.add_scaled(&r.grad, T::one());
            for &(label, lp, len) in &r.seqs[..r.n_seqs] {
                match label {
                    Label::Preferred => {
                        sum_w += lp.f64();
                        n_w += 1;
                    }
                    Label::Dispreferred => {
                        sum_l += lp.f64();
                        sum_ptl += lp.f64() / len as f64;
                        n_l += 1;
                    }
                }
            }
        }
        let inv = T::one() / T::from_usize_lossy(batch.len());
        loss *= inv;
        grad.as_mut_slice().iter_mut().for_each(|g| *g *= inv);
        if !loss.is_finite() {
            return Err(Error::Divergence { step, msg: format!("non-finite loss {loss}") });
        }
        if let Some(max_norm) = cfg.clip_norm {
            let norm = grad.l2_norm().f64();
            if norm > max_norm {
                let c = T::c(max_norm / norm);
                grad.as_mut_slice().iter_mut().for_each(|g| *g *= c);
            }
        }
        log.rows.push(MetricsRow {
            step,
            loss: loss.f64(),
            lr,
            mean_logp_w: mean_or_nan(sum_w, n_w),
            mean_logp_l: mean_or_nan(sum_l, n_l),
            mean_per_token_logp_l: mean_or_nan(sum_ptl, n_l),
        });
        adamw_step(&mut params, &grad, &mut opt, lr, &adamw).map_err(|e| match e {
            Error::Divergence { msg, .. } => Error::Divergence { step, msg },
            other => other,
        })?;
    }
    Ok(TrainOutcome { params, reference, log })
}

/// Dataset-wide log-likelihood summary by label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalSummary {
    pub mean_logp_w: f64,
    pub mean_logp_l: f64,
    pub mean_per_token_logp_w: f64,
    pub mean_per_token_logp_l: f64,
    /// Smallest per-token (length-normalized) log-likelihood of any dispreferred example.
    pub min_per_token_logp_l: f64,
}

pub fn evaluate<T: Scalar>(params: &ModelParams<T>, data: &Dataset) -> Result<EvalSummary> {
    let (mut sw, mut nw, mut ptw, mut sl, mut nl, mut ptl) = (0.0, 0, 0.0, 0.0, 0, 0.0);
    let mut min_l = f64::INFINITY;
    for ex in &data.examples {
        let (total, _) = crate::model::sequence_log_likelihood(params, &ex.prompt, &ex.response)?;
        let total = total.f64();
        let per = total / ex.response.len() as f64;
        match ex.label {
            Label::Preferred => {
                sw += total;
                ptw += per;
                nw += 1;
            }
            Label::Dispreferred => {
                sl += total;
                ptl += per;
                nl += 1;
                min_l = min_l.min(per);
            }
        }
    }
    Ok(EvalSummary {
        mean_logp_w: mean_or_nan(sw, nw),
        mean_logp_l: mean_or_nan(sl, nl),
        mean_per_token_logp_w: mean_or_nan(ptw, nw),
        mean_per_token_logp_l: mean_or_nan(ptl, nl),
        min_per_token_logp_l: if nl == 0 { f64::NAN } else { min_l },
    })
}
