//! Finite-difference verification of the analytic logit gradients.

use serde::{Deserialize, Serialize};

use crate::data::{Label, TokenId};
use crate::error::{Error, Result};
use crate::losses::{
    bnf_loss_grad, bnf_surrogate_loss, bnf_target_distribution, pairwise_loss_grad, sequence_logp, LossHyperparams,
    Method,
};
use crate::model::LogitsMatrix;
use crate::numerics::{finite_diff_grad, max_relative_error, SeededRng, DEFAULT_FD_STEP};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckConfig {
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_instances")]
    pub instances: usize,
    #[serde(default = "default_vocab_sizes")]
    pub vocab_sizes: Vec<usize>,
    #[serde(default = "default_resp_lens")]
    pub resp_lens: Vec<usize>,
    #[serde(default = "default_step")]
    pub h: f64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Standard deviation of the random logits.
    #[serde(default = "default_logit_scale")]
    pub logit_scale: f64,
    #[serde(default)]
    pub hp: LossHyperparams,
    #[serde(default)]
    pub seed: u64,
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}
fn default_instances() -> usize {
    100
}
fn default_vocab_sizes() -> Vec<usize> {
    vec![3, 8, 32]
}
fn default_resp_lens() -> Vec<usize> {
    vec![1, 4, 16]
}
fn default_step() -> f64 {
    DEFAULT_FD_STEP
}
fn default_tolerance() -> f64 {
    1e-6
}
fn default_logit_scale() -> f64 {
    2.0
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            methods: default_methods(),
            instances: default_instances(),
            vocab_sizes: default_vocab_sizes(),
            resp_lens: default_resp_lens(),
            h: default_step(),
            tolerance: default_tolerance(),
            logit_scale: default_logit_scale(),
            hp: LossHyperparams::default(),
            seed: 0,
        }
    }
}

impl GradcheckConfig {
    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        if self.methods.is_empty() || self.instances == 0 {
            return Err(Error::Config("gradcheck needs at least one method and one instance".into()));
        }
        if self.vocab_sizes.is_empty() || self.vocab_sizes.iter().any(|&v| v < 2) {
            return Err(Error::Config("vocab_sizes must be nonempty and each >= 2".into()));
        }
        if self.resp_lens.is_empty() || self.resp_lens.contains(&0) {
            return Err(Error::Config("resp_lens must be nonempty and each >= 1".into()));
        }
        if !(self.h > 0.0 && self.tolerance > 0.0 && self.logit_scale > 0.0) {
            return Err(Error::Config("h, tolerance and logit_scale must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodCheck {
    pub method: Method,
    pub instances: usize,
    pub max_rel_error: f64,
    pub worst_vocab_size: usize,
    pub worst_resp_len: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub methods: Vec<MethodCheck>,
    pub passed: bool,
}

fn random_logits(rng: &mut SeededRng, rows: usize, v: usize, scale: f64) -> LogitsMatrix<f64> {
    let data = (0..rows * v).map(|_| scale * rng.normal()).collect();
    LogitsMatrix::from_flat(rows, v, data).expect("shape is consistent")
}

fn random_tokens(rng: &mut SeededRng, n: usize, v: usize) -> Vec<TokenId> {
    (0..n).map(|_| rng.below(v) as TokenId).collect()
}

/// Relative error of one random instance of `method` at vocabulary `v` and length `len`.
pub fn check_instance(
    method: Method,
    rng: &mut SeededRng,
    v: usize,
    len: usize,
    cfg: &GradcheckConfig,
) -> Result<f64> {
    let s = cfg.logit_scale;
    if method == Method::Bnf {
        let z = random_logits(rng, len, v, s);
        let zr = random_logits(rng, len, v, s);
        let y = random_tokens(rng, len, v);
        let label = if rng.coin() { Label::Preferred } else { Label::Dispreferred };
        let analytic = bnf_loss_grad(&z, &zr, &y, label)?;
        let target = bnf_target_distribution(&z.log_softmax(), &zr.log_softmax(), &y)?;
        let numeric = finite_diff_grad(
            |flat| {
                let m = LogitsMatrix::from_flat(len, v, flat.to_vec()).expect("shape");
                bnf_surrogate_loss(&m, &target, label).expect("shape")
            },
            z.as_slice(),
            cfg.h,
        )?;
        return Ok(max_relative_error(analytic.dlogits.as_slice(), &numeric));
    }
    let len_l = cfg.resp_lens[rng.below(cfg.resp_lens.len())];
    let zw = random_logits(rng, len, v, s);
    let zl = random_logits(rng, len_l, v, s);
    let yw = random_tokens(rng, len, v);
    let yl = random_tokens(rng, len_l, v);
    let rw = sequence_logp(&random_logits(rng, len, v, s), &yw);
    let rl = sequence_logp(&random_logits(rng, len_l, v, s), &yl);
    let g = pairwise_loss_grad(method, &zw, &zl, &yw, &yl, (rw, rl), &cfg.hp)?;
    let mut analytic = g.dlogits_w.as_slice().to_vec();
    analytic.extend_from_slice(g.dlogits_l.as_slice());
    let mut z0 = zw.as_slice().to_vec();
    z0.extend_from_slice(zl.as_slice());
    let split = len * v;
    let numeric = finite_diff_grad(
        |flat| {
            let a = LogitsMatrix::from_flat(len, v, flat[..split].to_vec()).expect("shape");
            let b = LogitsMatrix::from_flat(len_l, v, flat[split..].to_vec()).expect("shape");
            pairwise_loss_grad(method, &a, &b, &yw, &yl, (rw, rl), &cfg.hp).expect("valid instance").loss
        },
        &z0,
        cfg.h,
    )?;
    Ok(max_relative_error(&analytic, &numeric))
}

/// Runs `cfg.instances` instances per method, cycling over every (vocab, length) combination.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    cfg.validate()?;
    let combos: Vec<(usize, usize)> = cfg
        .vocab_sizes
        .iter()
        .flat_map(|&v| cfg.resp_lens.iter().map(move |&n| (v, n)))
        .collect();
    let root = SeededRng::new(cfg.seed);
    let mut methods = Vec::with_capacity(cfg.methods.len());
    for (k, &method) in cfg.methods.iter().enumerate() {
        let mut rng = root.split(k as u64 + 1);
        let mut worst = (0.0f64, 0, 0);
        for i in 0..cfg.instances {
            let (v, n) = combos[i % combos.len()];
            let err = check_instance(method, &mut rng, v, n, cfg)?;
            if err.is_nan() {
                return Err(Error::Numerical(format!("{method}: relative error is NaN")));
            }
            if err > worst.0 || i == 0 {
                worst = (err, v, n);
            }
        }
        methods.push(MethodCheck {
            method,
            instances: cfg.instances,
            max_rel_error: worst.0,
            worst_vocab_size: worst.1,
            worst_resp_len: worst.2,
            passed: worst.0 < cfg.tolerance,
        });
    }
    let passed = methods.iter().all(|m| m.passed);
    Ok(GradcheckReport { tolerance: cfg.tolerance, methods, passed })
}
