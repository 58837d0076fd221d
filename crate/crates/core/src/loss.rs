//! Weighted cross-entropy, token-level preference loss, and gradient checks
//! over externally supplied logits and log-probabilities.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BETA_KL: f64 = 0.1;
pub const DEFAULT_GAMMA: f64 = 0.5;
pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative gradient error.
pub const REL_ERR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossInput {
    pub logits: Vec<Vec<f64>>,
    pub targets: Vec<usize>,
    #[serde(with = "mask_bits")]
    pub mask: Vec<bool>,
    pub weights: Vec<f64>,
}

impl LossInput {
    pub fn seq_len(&self) -> usize {
        self.logits.len()
    }

    pub fn vocab(&self) -> usize {
        self.logits.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.seq_len();
        let v = self.vocab();
        if v == 0 && t > 0 {
            return Err(Error::invalid("logit rows must be non-empty"));
        }
        if let Some(j) = self.logits.iter().position(|r| r.len() != v) {
            return Err(Error::invalid(format!(
                "logit row {j} has {} entries, expected {v}",
                self.logits[j].len()
            )));
        }
        for (name, len) in [
            ("targets", self.targets.len()),
            ("mask", self.mask.len()),
            ("weights", self.weights.len()),
        ] {
            if len != t {
                return Err(Error::invalid(format!("{name} has length {len}, expected {t}")));
            }
        }
        if let Some(j) = self.targets.iter().position(|&y| y >= v) {
            return Err(Error::invalid(format!(
                "target {} at position {j} is outside vocabulary {v}",
                self.targets[j]
            )));
        }
        if self.logits.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::invalid("logits must be finite"));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("weights must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Sum,
    /// Divide by the number of target positions.
    Mean,
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(row);
    row.iter().map(|x| (x - lse).exp()).collect()
}

fn target_count(input: &LossInput) -> usize {
    input.mask.iter().filter(|&&m| m).count()
}

fn sft_unchecked(input: &LossInput) -> f64 {
    let mut loss = 0.0;
    for (j, row) in input.logits.iter().enumerate() {
        if input.mask[j] {
            loss -= input.weights[j] * (row[input.targets[j]] - log_sum_exp(row));
        }
    }
    loss
}

/// `-sum_j w_j mask_j log softmax(logits_j)[target_j]`.
pub fn weighted_sft_loss(input: &LossInput) -> Result<f64> {
    input.validate()?;
    Ok(sft_unchecked(input))
}

pub fn weighted_sft_loss_reduced(input: &LossInput, reduction: Reduction) -> Result<f64> {
    let loss = weighted_sft_loss(input)?;
    Ok(match reduction {
        Reduction::Sum => loss,
        Reduction::Mean => match target_count(input) {
            0 => 0.0,
            n => loss / n as f64,
        },
    })
}

/// `w_j mask_j (softmax(logits_j) - onehot(target_j))` per row.
pub fn weighted_sft_grad(input: &LossInput) -> Result<Vec<Vec<f64>>> {
    input.validate()?;
    Ok(input
        .logits
        .iter()
        .enumerate()
        .map(|(j, row)| {
            if !input.mask[j] {
                return vec![0.0; row.len()];
            }
            let w = input.weights[j];
            let mut g = softmax(row);
            g[input.targets[j]] -= 1.0;
            g.iter_mut().for_each(|x| *x *= w);
            g
        })
        .collect())
}

/// Central-difference gradient of the summed loss.
pub fn finite_difference_grad(input: &LossInput, step: f64) -> Result<Vec<Vec<f64>>> {
    input.validate()?;
    let mut probe = input.clone();
    let mut out = vec![vec![0.0; input.vocab()]; input.seq_len()];
    for j in 0..input.seq_len() {
        for v in 0..input.vocab() {
            let x = input.logits[j][v];
            probe.logits[j][v] = x + step;
            let up = sft_unchecked(&probe);
            probe.logits[j][v] = x - step;
            let down = sft_unchecked(&probe);
            probe.logits[j][v] = x;
            out[j][v] = (up - down) / (2.0 * step);
        }
    }
    Ok(out)
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERR_FLOOR)
}

/// Largest relative error between the analytic and numeric gradients.
pub fn grad_check(input: &LossInput, step: f64) -> Result<f64> {
    let analytic = weighted_sft_grad(input)?;
    let numeric = finite_difference_grad(input, step)?;
    Ok(analytic
        .iter()
        .flatten()
        .zip(numeric.iter().flatten())
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub policy_logprob_w: f64,
    pub policy_logprob_l: f64,
    pub ref_logprob_w: f64,
    pub ref_logprob_l: f64,
}

impl PreferencePair {
    pub fn margin(&self) -> f64 {
        (self.policy_logprob_w - self.ref_logprob_w) - (self.policy_logprob_l - self.ref_logprob_l)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.policy_logprob_w,
            self.policy_logprob_l,
            self.ref_logprob_w,
            self.ref_logprob_l,
        ];
        if all.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::invalid("preference log-probabilities must be finite"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpoConfig {
    pub beta_kl: f64,
    pub gamma: f64,
}

impl Default for DpoConfig {
    fn default() -> Self {
        Self {
            beta_kl: DEFAULT_BETA_KL,
            gamma: DEFAULT_GAMMA,
        }
    }
}

impl DpoConfig {
    pub fn new(beta_kl: f64, gamma: f64) -> Result<Self> {
        if !(beta_kl.is_finite() && beta_kl > 0.0) {
            return Err(Error::invalid(format!("beta must be positive, got {beta_kl}")));
        }
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(Error::invalid(format!("gamma must be nonnegative, got {gamma}")));
        }
        Ok(Self { beta_kl, gamma })
    }
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// `-ln sigmoid(beta * margin)`.
pub fn dpo_loss(pair: &PreferencePair, cfg: &DpoConfig) -> f64 {
    softplus(-cfg.beta_kl * pair.margin())
}

pub fn combined_loss(sft: f64, dpo: f64, cfg: &DpoConfig) -> f64 {
    sft + cfg.gamma * dpo
}

/// Draw two distinct candidates in proportion to their weight sums and order
/// them by weight sum; on a tie the first draw wins.
pub fn sample_preference_pair<R: Rng + ?Sized>(candidates: &[(u64, f64)], rng: &mut R) -> Result<(u64, u64)> {
    if candidates.len() < 2 {
        return Err(Error::invalid("need at least two candidates"));
    }
    if let Some((id, w)) = candidates.iter().find(|(_, w)| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::invalid(format!(
            "candidate {id} has non-positive weight sum {w}"
        )));
    }
    let draw = |rng: &mut R, skip: Option<usize>| {
        let total: f64 = candidates
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != skip)
            .map(|(_, c)| c.1)
            .sum();
        let mut u = rng.random::<f64>() * total;
        let mut last = 0;
        for (i, c) in candidates.iter().enumerate() {
            if Some(i) == skip {
                continue;
            }
            last = i;
            if u < c.1 {
                return i;
            }
            u -= c.1;
        }
        last
    };
    let a = draw(rng, None);
    let b = draw(rng, Some(a));
    let (first, second) = (candidates[a], candidates[b]);
    Ok(if second.1 > first.1 {
        (second.0, first.0)
    } else {
        (first.0, second.0)
    })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBatch {
    #[serde(default)]
    pub examples: Vec<LossInput>,
    #[serde(default)]
    pub pairs: Vec<PreferencePair>,
}

impl LossBatch {
    /// Accepts `{examples, pairs}`, a bare list of examples, or one example.
    pub fn from_value(v: serde_json::Value) -> Result<Self> {
        let parsed = if v.is_array() {
            serde_json::from_value(v).map(|examples| Self {
                examples,
                pairs: Vec::new(),
            })
        } else if v.get("logits").is_some() {
            serde_json::from_value(v).map(|e| Self {
                examples: vec![e],
                pairs: Vec::new(),
            })
        } else {
            serde_json::from_value(v)
        };
        parsed.map_err(|e| Error::parse("loss input", e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub sft: f64,
    pub dpo: f64,
    pub combined: f64,
    pub grad_check_max_rel_err: Option<f64>,
}

/// Sum the losses over the batch in file order.
pub fn evaluate_batch(
    batch: &LossBatch,
    cfg: &DpoConfig,
    reduction: Reduction,
    check_grad: bool,
) -> Result<LossReport> {
    let mut sft = 0.0;
    let mut worst: Option<f64> = None;
    for (i, ex) in batch.examples.iter().enumerate() {
        let loss = weighted_sft_loss_reduced(ex, reduction).map_err(|e| Error::invalid(format!("example {i}: {e}")))?;
        sft += loss;
        if check_grad {
            let err = grad_check(ex, FD_STEP)?;
            worst = Some(worst.map_or(err, |w| w.max(err)));
        }
    }
    let mut dpo = 0.0;
    for (i, p) in batch.pairs.iter().enumerate() {
        p.validate().map_err(|e| Error::invalid(format!("pair {i}: {e}")))?;
        dpo += dpo_loss(p, cfg);
    }
    Ok(LossReport {
        sft,
        dpo,
        combined: combined_loss(sft, dpo, cfg),
        grad_check_max_rel_err: worst,
    })
}

mod mask_bits {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(bits: &[bool], s: S) -> Result<S::Ok, S::Error> {
        bits.iter().map(|&b| u8::from(b)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<bool>, D::Error> {
        Vec::<u8>::deserialize(d)?
            .into_iter()
            .map(|v| match v {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(serde::de::Error::custom(format!("mask entry {other} is not 0/1"))),
            })
            .collect()
    }
}
