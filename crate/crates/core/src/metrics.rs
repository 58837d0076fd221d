//! Attention-quality diagnostics over supplied attention rows and generation
//! log-probabilities.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

pub const DEFAULT_RECENCY_K: usize = 20;
const SUM_TOLERANCE: f64 = 1e-3;

/// Compensated (Neumaier) summation.
fn sum(xs: &[f64]) -> f64 {
    let mut s = 0.0;
    let mut c = 0.0;
    for &x in xs {
        let t = s + x;
        if f64::abs(s) >= x.abs() {
            c += (s - t) + x;
        } else {
            c += (x - t) + s;
        }
        s = t;
    }
    s + c
}

/// A normalized attention distribution over `n` input tokens.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct AttentionRow(Vec<f64>);

impl AttentionRow {
    /// Rows summing to within 1e-3 of one are renormalized; others are rejected.
    pub fn new(a: Vec<f64>) -> Result<Self> {
        if a.is_empty() {
            return Err(Error::invalid("attention row is empty"));
        }
        if a.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::invalid("attention weights must be finite and nonnegative"));
        }
        let total = sum(&a);
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::invalid(format!("attention row sums to {total}")));
        }
        if total == 1.0 {
            return Ok(Self(a));
        }
        Ok(Self(a.into_iter().map(|x| x / total).collect()))
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::new(vec![1.0 / n as f64; n])
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<'de> Deserialize<'de> for AttentionRow {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Self::new(Vec::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

/// Mean token log-probability.
pub fn gcs(token_logprobs: &[f64]) -> Result<f64> {
    if token_logprobs.is_empty() {
        return Err(Error::invalid("no log-probabilities"));
    }
    Ok(token_logprobs.iter().sum::<f64>() / token_logprobs.len() as f64)
}

/// Share of attention on the last `k` tokens.
pub fn rfs(row: &AttentionRow, k: usize) -> Result<f64> {
    let n = row.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k = {k} must lie in 1..={n}")));
    }
    let a = row.weights();
    Ok(sum(&a[n - k..]) / sum(a))
}

/// Mean attention on the critical token indices (0-based).
pub fn afs(row: &AttentionRow, critical: &[usize]) -> Result<f64> {
    if critical.is_empty() {
        return Err(Error::invalid("critical set is empty"));
    }
    let a = row.weights();
    let mut total = 0.0;
    for &i in critical {
        total += a
            .get(i)
            .ok_or_else(|| Error::invalid(format!("critical index {i} out of range for n = {}", a.len())))?;
    }
    Ok(total / critical.len() as f64)
}

/// Shannon entropy in nats; zero entries contribute nothing.
pub fn attention_entropy(row: &AttentionRow) -> f64 {
    -row.weights()
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>()
}

/// Sum of per-row entropies.
pub fn batch_entropy(rows: &[AttentionRow]) -> f64 {
    rows.iter().map(attention_entropy).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
}

/// Two-sided Welch t-test between two samples.
pub fn welch_test(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid("each sample needs at least two values"));
    }
    let stats = |x: &[f64]| {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (n, mean, var)
    };
    let (na, ma, va) = stats(a);
    let (nb, mb, vb) = stats(b);
    let sa = va / na;
    let sb = vb / nb;
    let se2 = sa + sb;
    if se2 == 0.0 {
        return Err(Error::invalid("both samples have zero variance"));
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Internal(e.to_string()))?;
    let p_value = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(WelchResult { t, df, p_value })
}

fn default_k() -> usize {
    DEFAULT_RECENCY_K
}

/// Metric pairs for a significance comparison of two systems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: Vec<f64>,
    pub treatment: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionInput {
    pub rows: Vec<AttentionRow>,
    #[serde(default)]
    pub critical: Vec<usize>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub logprobs: Option<Vec<f64>>,
    #[serde(default)]
    pub compare: Option<Comparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowMetrics {
    pub entropy: f64,
    pub rfs: f64,
    pub afs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<RowMetrics>,
    pub mean_entropy: f64,
    pub batch_entropy: f64,
    pub mean_rfs: f64,
    pub mean_afs: Option<f64>,
    pub gcs: Option<f64>,
    pub welch: Option<WelchResult>,
}

pub fn evaluate(input: &AttentionInput) -> Result<MetricsReport> {
    if input.rows.is_empty() {
        return Err(Error::invalid("no attention rows"));
    }
    let mut rows = Vec::with_capacity(input.rows.len());
    for (i, row) in input.rows.iter().enumerate() {
        let ctx = |e: Error| Error::invalid(format!("row {i}: {e}"));
        rows.push(RowMetrics {
            entropy: attention_entropy(row),
            rfs: rfs(row, input.k).map_err(ctx)?,
            afs: if input.critical.is_empty() {
                None
            } else {
                Some(afs(row, &input.critical).map_err(ctx)?)
            },
        });
    }
    let n = rows.len() as f64;
    let mean_afs = rows[0].afs.map(|_| rows.iter().filter_map(|r| r.afs).sum::<f64>() / n);
    Ok(MetricsReport {
        mean_entropy: rows.iter().map(|r| r.entropy).sum::<f64>() / n,
        batch_entropy: batch_entropy(&input.rows),
        mean_rfs: rows.iter().map(|r| r.rfs).sum::<f64>() / n,
        mean_afs,
        gcs: input.logprobs.as_deref().map(gcs).transpose()?,
        welch: input
            .compare
            .as_ref()
            .map(|c| welch_test(&c.treatment, &c.baseline))
            .transpose()?,
        rows,
    })
}

/// Rows as CSV, one line per row.
pub fn rows_to_csv(rows: &[AttentionRow]) -> String {
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r.weights().iter().map(|x| format!("{x:.16e}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}
