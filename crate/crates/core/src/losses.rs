//! Preference losses with exact gradients with respect to response logits.
//!
//! Pairwise losses (NLL+PLL, DPO, IPO, SLiC-HF, SimPO) depend on the logits
//! only through the summed sequence log-likelihoods `ℓ_w = log π(y_w|x)` and
//! `ℓ_l = log π(y_l|x)`. Their logit gradients are therefore
//!
//! ```text
//! ∂L/∂z_w = (∂L/∂ℓ_w) · r_w        ∂L/∂z_l = (∂L/∂ℓ_l) · r_l
//! r[i] = onehot(y_i) − softmax(z[i])      (the gradient of ℓ w.r.t. z)
//! ```
//!
//! and for DPO and IPO `∂L/∂ℓ_w = −C`, `∂L/∂ℓ_l = +C` with `C` the
//! constraint value returned by [`constraint_value`]. SimPO follows the same
//! pattern on its length-normalized, β-scaled log-likelihoods.
//!
//! BNF is a per-example cross-entropy against the dynamic target
//! distribution, treated as a constant during differentiation:
//!
//! ```text
//! f(y_i)  = min(π(y_i) / π_ref(y_i), 1)
//! f(t)    = (1 − f(y_i)) / (1 − π(y_i)) · π(t)          t ≠ y_i
//! L       = −(label/|y|) Σ_i Σ_t f(t) log π(t)
//! ∂L/∂z_t = (label/|y|) (π(t) − f(t))
//! ```

use serde::{Deserialize, Serialize};

use crate::data::{Label, TokenId};
use crate::error::{Error, Result};
use crate::model::LogitsMatrix;
use crate::numerics::{log_softmax_into, neg_log_sigmoid, sigmoid};
use crate::scalar::Scalar;

/// Reference log-probabilities below `ln(1e-300)` are rejected.
pub const REF_LOG_PROB_FLOOR: f64 = -690.775_527_898_213_7;

/// Below this off-token mass the target collapses to one-hot at `y_i`.
pub const OFF_MASS_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    NllPll,
    Dpo,
    Ipo,
    Slic,
    Simpo,
    Bnf,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::NllPll,
        Method::Dpo,
        Method::Ipo,
        Method::Slic,
        Method::Simpo,
        Method::Bnf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::NllPll => "nll_pll",
            Method::Dpo => "dpo",
            Method::Ipo => "ipo",
            Method::Slic => "slic",
            Method::Simpo => "simpo",
            Method::Bnf => "bnf",
        }
    }

    /// Whether the loss consumes (y_w, y_l) pairs.
    pub fn is_pairwise(self) -> bool {
        self != Method::Bnf
    }

    /// Whether the loss consults the reference model.
    pub fn uses_reference(self) -> bool {
        matches!(self, Method::Dpo | Method::Ipo | Method::Bnf)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossHyperparams {
    /// DPO / SimPO scale.
    pub beta: f64,
    /// IPO regularization; the target gap is `1 / (2τ)`.
    pub tau: f64,
    /// SLiC-HF margin.
    pub delta: f64,
    /// SimPO margin.
    pub gamma: f64,
}

impl Default for LossHyperparams {
    fn default() -> Self {
        Self { beta: 0.1, tau: 0.1, delta: 1.0, gamma: 0.5 }
    }
}

impl LossHyperparams {
    pub fn validate(&self) -> Result<()> {
        let all = [("beta", self.beta), ("tau", self.tau), ("delta", self.delta), ("gamma", self.gamma)];
        if let Some((name, v)) = all.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Config(format!("{name} must be finite, got {v}")));
        }
        if self.beta <= 0.0 {
            return Err(Error::Config(format!("beta must be > 0, got {}", self.beta)));
        }
        if self.tau <= 0.0 {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if self.delta < 0.0 {
            return Err(Error::Config(format!("delta must be >= 0, got {}", self.delta)));
        }
        if self.gamma < 0.0 {
            return Err(Error::Config(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        Ok(())
    }
}

/// Loss and logit gradients of a pairwise objective.
#[derive(Debug, Clone, PartialEq)]
pub struct PairLossGrad<T> {
    pub loss: T,
    pub dlogits_w: LogitsMatrix<T>,
    pub dlogits_l: LogitsMatrix<T>,
}

/// Loss and logit gradient of a single-sequence objective (BNF).
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad<T> {
    pub loss: T,
    pub dlogits: LogitsMatrix<T>,
}

/// Per-position dynamic target rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetDistribution<T> {
    pub rows: LogitsMatrix<T>,
}

/// Sequence log-likelihood summaries of one preference pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairStats<T> {
    pub logp_w: T,
    pub logp_l: T,
    pub ref_logp_w: T,
    pub ref_logp_l: T,
    pub len_w: usize,
    pub len_l: usize,
}

fn check_logits<T: Scalar>(logits: &LogitsMatrix<T>, y: &[TokenId], what: &str) -> Result<()> {
    if y.is_empty() {
        return Err(Error::Dimension(format!("{what}: empty response")));
    }
    if logits.rows() != y.len() {
        return Err(Error::Dimension(format!(
            "{what}: {} logits rows for a response of length {}",
            logits.rows(),
            y.len()
        )));
    }
    if logits.cols() < 2 {
        return Err(Error::Dimension(format!("{what}: vocabulary must have >= 2 entries")));
    }
    if let Some(t) = y.iter().find(|&&t| t as usize >= logits.cols()) {
        return Err(Error::Domain(format!("{what}: token {t} out of range")));
    }
    if logits.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("{what}: non-finite logit")));
    }
    Ok(())
}

fn check_same_shape<T: Scalar>(a: &LogitsMatrix<T>, b: &LogitsMatrix<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "{what}: policy shape {:?} differs from reference shape {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `(log π(y|x), r)` where `r[i] = onehot(y_i) − softmax(z[i])`.
pub fn loglik_and_residual<T: Scalar>(logits: &LogitsMatrix<T>, y: &[TokenId]) -> (T, LogitsMatrix<T>) {
    let mut res = LogitsMatrix::zeros(logits.rows(), logits.cols());
    let mut total = T::zero();
    for (i, &t) in y.iter().enumerate() {
        let row = res.row_mut(i);
        log_softmax_into(logits.row(i), row);
        total += row[t as usize];
        row.iter_mut().for_each(|v| *v = -v.exp());
        row[t as usize] += T::one();
    }
    (total, res)
}

/// Summed log-likelihood of `y` under `logits`.
pub fn sequence_logp<T: Scalar>(logits: &LogitsMatrix<T>, y: &[TokenId]) -> T {
    let mut buf = vec![T::zero(); logits.cols()];
    y.iter()
        .enumerate()
        .map(|(i, &t)| {
            log_softmax_into(logits.row(i), &mut buf);
            buf[t as usize]
        })
        .sum()
}

/// Evaluates the constraint function `C` for SLiC-HF, DPO, IPO or SimPO.
pub fn constraint_value<T: Scalar>(method: Method, s: &PairStats<T>, hp: &LossHyperparams) -> Result<T> {
    let beta = T::c(hp.beta);
    Ok(match method {
        Method::Slic => {
            if s.logp_w - s.logp_l < T::c(hp.delta) {
                T::one()
            } else {
                T::zero()
            }
        }
        Method::Dpo => {
            let lr_w = s.logp_w - s.ref_logp_w;
            let lr_l = s.logp_l - s.ref_logp_l;
            beta * sigmoid(beta * lr_l - beta * lr_w)
        }
        Method::Ipo => {
            let lr_w = s.logp_w - s.ref_logp_w;
            let lr_l = s.logp_l - s.ref_logp_l;
            T::c(2.0) * (T::c(0.5 / hp.tau) + lr_l - lr_w)
        }
        Method::Simpo => {
            if s.len_w == 0 || s.len_l == 0 {
                return Err(Error::Dimension("SimPO needs nonempty responses".into()));
            }
            let nw = beta / T::from_usize_lossy(s.len_w);
            let nl = beta / T::from_usize_lossy(s.len_l);
            sigmoid(T::c(hp.gamma) + nl * s.logp_l - nw * s.logp_w)
        }
        Method::NllPll | Method::Bnf => {
            return Err(Error::Config(format!("no constraint function for method {method}")))
        }
    })
}

/// Loss value and `(∂L/∂ℓ_w, ∂L/∂ℓ_l)` of a pairwise method given sequence stats.
pub fn pairwise_outer<T: Scalar>(method: Method, s: &PairStats<T>, hp: &LossHyperparams) -> Result<(T, T, T)> {
    let beta = T::c(hp.beta);
    Ok(match method {
        Method::NllPll => (-s.logp_w + s.logp_l, -T::one(), T::one()),
        Method::Dpo => {
            let u = beta * (s.logp_w - s.ref_logp_w) - beta * (s.logp_l - s.ref_logp_l);
            let c = constraint_value(method, s, hp)?;
            (neg_log_sigmoid(u), -c, c)
        }
        Method::Ipo => {
            let gap = (s.logp_w - s.ref_logp_w) - (s.logp_l - s.ref_logp_l) - T::c(0.5 / hp.tau);
            let c = constraint_value(method, s, hp)?;
            (gap * gap, -c, c)
        }
        Method::Slic => {
            let margin = T::c(hp.delta) - (s.logp_w - s.logp_l);
            // at the kink (gap == δ) the hinge is inactive
            if margin > T::zero() {
                (margin, -T::one(), T::one())
            } else {
                (T::zero(), T::zero(), T::zero())
            }
        }
        Method::Simpo => {
            let c = constraint_value(method, s, hp)?;
            let nw = beta / T::from_usize_lossy(s.len_w);
            let nl = beta / T::from_usize_lossy(s.len_l);
            let u = nw * s.logp_w - nl * s.logp_l - T::c(hp.gamma);
            (neg_log_sigmoid(u), -c * nw, c * nl)
        }
        Method::Bnf => return Err(Error::Config("bnf is not a pairwise loss".into())),
    })
}

/// Pairwise loss from policy logits and precomputed reference sequence
/// log-likelihoods `(ref_logp_w, ref_logp_l)`, ignored by reference-free methods.
pub fn pairwise_loss_grad<T: Scalar>(
    method: Method,
    logits_w: &LogitsMatrix<T>,
    logits_l: &LogitsMatrix<T>,
    y_w: &[TokenId],
    y_l: &[TokenId],
    ref_logp: (T, T),
    hp: &LossHyperparams,
) -> Result<PairLossGrad<T>> {
    hp.validate()?;
    check_logits(logits_w, y_w, "y_w")?;
    check_logits(logits_l, y_l, "y_l")?;
    let (logp_w, mut dlogits_w) = loglik_and_residual(logits_w, y_w);
    let (logp_l, mut dlogits_l) = loglik_and_residual(logits_l, y_l);
    let stats = PairStats {
        logp_w,
        logp_l,
        ref_logp_w: ref_logp.0,
        ref_logp_l: ref_logp.1,
        len_w: y_w.len(),
        len_l: y_l.len(),
    };
    let (loss, c_w, c_l) = pairwise_outer(method, &stats, hp)?;
    dlogits_w.scale(c_w);
    dlogits_l.scale(c_l);
    Ok(PairLossGrad { loss, dlogits_w, dlogits_l })
}

/// `−log π(y_w|x) + log π(y_l|x)`.
pub fn nll_pll_loss_grad<T: Scalar>(
    logits_w: &LogitsMatrix<T>,
    logits_l: &LogitsMatrix<T>,
    y_w: &[TokenId],
    y_l: &[TokenId],
) -> Result<PairLossGrad<T>> {
    let zero = (T::zero(), T::zero());
    pairwise_loss_grad(Method::NllPll, logits_w, logits_l, y_w, y_l, zero, &LossHyperparams::default())
}

#[allow(clippy::too_many_arguments)]
fn referenced_loss<T: Scalar>(
    method: Method,
    logits_w: &LogitsMatrix<T>,
    logits_l: &LogitsMatrix<T>,
    ref_logits_w: &LogitsMatrix<T>,
    ref_logits_l: &LogitsMatrix<T>,
    y_w: &[TokenId],
    y_l: &[TokenId],
    hp: &LossHyperparams,
) -> Result<PairLossGrad<T>> {
    check_same_shape(logits_w, ref_logits_w, "y_w")?;
    check_same_shape(logits_l, ref_logits_l, "y_l")?;
    check_logits(ref_logits_w, y_w, "reference y_w")?;
    check_logits(ref_logits_l, y_l, "reference y_l")?;
    let refs = (sequence_logp(ref_logits_w, y_w), sequence_logp(ref_logits_l, y_l));
    pairwise_loss_grad(method, logits_w, logits_l, y_w, y_l, refs, hp)
}

/// `−log σ(β log(π_w/π_ref,w) − β log(π_l/π_ref,l))`.
#[allow(clippy::too_many_arguments)]
pub fn dpo_loss_grad<T: Scalar>(
    logits_w: &LogitsMatrix<T>,
    logits_l: &LogitsMatrix<T>,
    ref_logits_w: &LogitsMatrix<T>,
    ref_logits_l: &LogitsMatrix<T>,
    y_w: &[TokenId],
    y_l: &[TokenId],
    hp: &LossHyperparams,
) -> Result<PairLossGrad<T>> {
    referenced_loss(Method::Dpo, logits_w, logits_l, ref_logits_w, ref_logits_l, y_w, y_l, hp)
}

/// `(log(π_w/π_ref,w) − log(π_l/π_ref,l) − 1/(2τ))²`.
#[allow(clippy::too_many_arguments)]
pub fn ipo_loss_grad<T: Scalar>(
    logits_w: &LogitsMatrix<T>,
    logits_l: &LogitsMatrix<T>,
    ref_logits_w: &LogitsMatrix<T>,
    ref_logits_l: &LogitsMatrix<T>,
    y_w: &[TokenId],
    y_l: &[TokenId],
    hp: &LossHyperparams,
) -> Result<PairLossGrad<T>> {
    referenced_loss(Method::Ipo, logits_w, logits_l, ref_logits_w, ref_logits_l, y_w, y_l, hp)
}

/// `max(0, δ − log π(y_w|x) + log π(y_l|x))`.
pub fn slic_loss_grad<T: Scalar>(
    logits_w: &LogitsMatrix<T>,
    logits_l: &LogitsMatrix<T>,
    y_w: &[TokenId],
    y_l: &[TokenId],
    hp: &LossHyperparams,
) -> Result<PairLossGrad<T>> {
    let zero = (T::zero(), T::zero());
    pairwise_loss_grad(Method::Slic, logits_w, logits_l, y_w, y_l, zero, hp)
}

/// `−log σ(β/|y_w| log π(y_w|x) − β/|y_l| log π(y_l|x) − γ)`.
pub fn simpo_loss_grad<T: Scalar>(
    logits_w: &LogitsMatrix<T>,
    logits_l: &LogitsMatrix<T>,
    y_w: &[TokenId],
    y_l: &[TokenId],
    hp: &LossHyperparams,
) -> Result<PairLossGrad<T>> {
    let zero = (T::zero(), T::zero());
    pairwise_loss_grad(Method::Simpo, logits_w, logits_l, y_w, y_l, zero, hp)
}

/// Dynamic target row for one position, written into `out`.
///
/// `logp` is the policy log-softmax row and `ref_logp_y` the reference
/// log-probability of the observed token `y`.
pub fn bnf_target_row<T: Scalar>(logp: &[T], ref_logp_y: T, y: usize, out: &mut [T]) -> Result<()> {
    if ref_logp_y < T::c(REF_LOG_PROB_FLOOR) {
        return Err(Error::Numerical(format!(
            "reference probability of token {y} is below 1e-300 (log = {ref_logp_y})"
        )));
    }
    let log_ratio = logp[y] - ref_logp_y;
    let on = if log_ratio >= T::zero() { T::one() } else { log_ratio.exp() };
    let off_mass: T = logp
        .iter()
        .enumerate()
        .filter(|&(t, _)| t != y)
        .map(|(_, v)| v.exp())
        .sum();
    if off_mass < T::c(OFF_MASS_GUARD) {
        out.iter_mut().for_each(|v| *v = T::zero());
        out[y] = T::one();
        return Ok(());
    }
    let scale = (T::one() - on) / off_mass;
    for (o, &lp) in out.iter_mut().zip(logp) {
        *o = scale * lp.exp();
    }
    out[y] = on;
    Ok(())
}

/// Dynamic target distribution from per-position policy and reference
/// log-probability rows.
pub fn bnf_target_distribution<T: Scalar>(
    policy_logp: &LogitsMatrix<T>,
    ref_logp: &LogitsMatrix<T>,
    y: &[TokenId],
) -> Result<TargetDistribution<T>> {
    check_logits(policy_logp, y, "policy")?;
    check_same_shape(policy_logp, ref_logp, "target")?;
    for (name, m) in [("policy", policy_logp), ("reference", ref_logp)] {
        for (i, row) in m.iter_rows().enumerate() {
            let s: f64 = row.iter().map(|v| v.f64().exp()).sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::Domain(format!(
                    "{name} row {i} is not a log-probability vector (mass {s})"
                )));
            }
        }
    }
    let mut rows = LogitsMatrix::zeros(y.len(), policy_logp.cols());
    for (i, &t) in y.iter().enumerate() {
        bnf_target_row(policy_logp.row(i), ref_logp.row(i)[t as usize], t as usize, rows.row_mut(i))?;
    }
    Ok(TargetDistribution { rows })
}

fn label_factor<T: Scalar>(label: Label, len: usize) -> T {
    T::c(label.sign() as f64) / T::from_usize_lossy(len)
}

/// BNF loss and gradient given the reference log-probability of each observed token.
pub fn bnf_loss_grad_cached<T: Scalar>(
    policy_logits: &LogitsMatrix<T>,
    ref_token_logp: &[T],
    y: &[TokenId],
    label: Label,
) -> Result<LossGrad<T>> {
    check_logits(policy_logits, y, "bnf")?;
    if ref_token_logp.len() != y.len() {
        return Err(Error::Dimension(format!(
            "{} reference log-probabilities for a response of length {}",
            ref_token_logp.len(),
            y.len()
        )));
    }
    let k = label_factor::<T>(label, y.len());
    let v = policy_logits.cols();
    let mut dlogits = LogitsMatrix::zeros(y.len(), v);
    let mut logp = vec![T::zero(); v];
    let mut target = vec![T::zero(); v];
    let mut cross = T::zero();
    for (i, &t) in y.iter().enumerate() {
        log_softmax_into(policy_logits.row(i), &mut logp);
        bnf_target_row(&logp, ref_token_logp[i], t as usize, &mut target)?;
        let row = dlogits.row_mut(i);
        for j in 0..v {
            if target[j] != T::zero() {
                cross += target[j] * logp[j];
            }
            row[j] = k * (logp[j].exp() - target[j]);
        }
    }
    Ok(LossGrad { loss: -k * cross, dlogits })
}

/// BNF loss `−(label/|y|) Σ_i Σ_t f(t) log π(t)` and its stop-gradient logit gradient.
pub fn bnf_loss_grad<T: Scalar>(
    policy_logits: &LogitsMatrix<T>,
    ref_logits: &LogitsMatrix<T>,
    y: &[TokenId],
    label: Label,
) -> Result<LossGrad<T>> {
    check_same_shape(policy_logits, ref_logits, "bnf")?;
    check_logits(ref_logits, y, "bnf reference")?;
    let ref_token_logp = crate::model::token_log_probs(ref_logits, y)?;
    bnf_loss_grad_cached(policy_logits, &ref_token_logp, y, label)
}

/// Cross-entropy against a fixed target, `−(label/|y|) Σ f ⊙ log_softmax(z)`.
///
/// With the target frozen at the current policy this is the function whose
/// ordinary gradient equals the BNF gradient.
pub fn bnf_surrogate_loss<T: Scalar>(
    policy_logits: &LogitsMatrix<T>,
    target: &TargetDistribution<T>,
    label: Label,
) -> Result<T> {
    check_same_shape(policy_logits, &target.rows, "surrogate")?;
    let k = label_factor::<T>(label, policy_logits.rows().max(1));
    let mut logp = vec![T::zero(); policy_logits.cols()];
    let mut cross = T::zero();
    for i in 0..policy_logits.rows() {
        log_softmax_into(policy_logits.row(i), &mut logp);
        cross += target.rows.row(i).iter().zip(&logp).map(|(&f, &l)| f * l).sum::<T>();
    }
    Ok(-k * cross)
}
