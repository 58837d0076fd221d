//! Per-token training weights and their projection onto subword shards.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::artifact;
use crate::error::{Error, Result};
use crate::pseudo::PseudoPath;
use crate::salience::ModePriors;
use crate::tokens::TokenMap;
use crate::transitions::NGram;

pub const DEFAULT_W_BASE: f64 = 3.0;

/// `w_base + 1 / ln(freq + 2) + mean`.
pub fn token_weight(w_base: f64, freq: u64, posterior_mean: f64) -> f64 {
    w_base + 1.0 / (freq as f64 + 2.0).ln() + posterior_mean
}

/// Weight of each of the `n_tokens` AST tokens of one example, with the token
/// class taken from its covering gram. Tokens outside the path get `w_base`
/// alone.
pub fn assemble_ast_weights(
    path: &PseudoPath,
    freqs: &BTreeMap<NGram, u64>,
    priors: &ModePriors,
    n_tokens: usize,
    w_base: f64,
) -> Result<Vec<f64>> {
    let mut weights = vec![w_base; n_tokens];
    let mut covered = vec![false; n_tokens];
    for g in &path.grams {
        let freq = *freqs
            .get(&g.gram)
            .ok_or_else(|| Error::MissingFrequency(g.gram.to_string()))?;
        if g.tokens.len() != g.gram.arity() {
            return Err(Error::invalid(format!(
                "gram {} covers {} tokens",
                g.gram,
                g.tokens.len()
            )));
        }
        for (&id, class) in g.tokens.iter().zip(g.gram.classes()) {
            if id >= n_tokens {
                return Err(Error::invalid(format!("token id {id} out of range")));
            }
            if std::mem::replace(&mut covered[id], true) {
                return Err(Error::invalid(format!("token {id} covered twice")));
            }
            weights[id] = token_weight(w_base, freq, priors.mean(class)?);
        }
    }
    Ok(weights)
}

/// Shard slots of each AST token, indexed by token id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShardMap {
    slots: Vec<Vec<usize>>,
}

impl ShardMap {
    /// Slots must be non-empty per token and, concatenated in token order,
    /// form one contiguous ascending run.
    pub fn new(slots: Vec<Vec<usize>>) -> Result<Self> {
        let mut next: Option<usize> = None;
        for (id, s) in slots.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::invalid(format!("token {id} has no shards")));
            }
            for &slot in s {
                if let Some(expect) = next {
                    if slot != expect {
                        return Err(Error::invalid(format!(
                            "token {id}: shard slot {slot} breaks the contiguous run (expected {expect})"
                        )));
                    }
                }
                next = Some(slot + 1);
            }
        }
        Ok(Self { slots })
    }

    /// One shard per token starting at slot 0.
    pub fn identity(n: usize) -> Self {
        Self {
            slots: (0..n).map(|i| vec![i]).collect(),
        }
    }

    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        let mut start = 0;
        let mut slots = Vec::with_capacity(counts.len());
        for &k in counts {
            slots.push((start..start + k).collect());
            start += k;
        }
        Self::new(slots)
    }

    pub fn token_count(&self) -> usize {
        self.slots.len()
    }

    pub fn shard_count(&self) -> usize {
        self.slots.iter().map(Vec::len).sum()
    }

    pub fn shards(&self, token: usize) -> Option<&[usize]> {
        self.slots.get(token).map(Vec::as_slice)
    }

    pub fn counts(&self) -> Vec<usize> {
        self.slots.iter().map(Vec::len).collect()
    }

    fn to_value(&self) -> Value {
        let m: serde_json::Map<String, Value> = self
            .slots
            .iter()
            .enumerate()
            .map(|(i, s)| (i.to_string(), Value::from(s.clone())))
            .collect();
        Value::Object(m)
    }

    fn from_object(obj: &serde_json::Map<String, Value>) -> Result<Self> {
        let mut by_id = BTreeMap::new();
        for (k, v) in obj {
            let id: usize = k
                .parse()
                .map_err(|_| Error::parse("shard map", format!("token id {k:?} is not an integer")))?;
            let slots: Vec<usize> =
                serde_json::from_value(v.clone()).map_err(|e| Error::parse("shard map", format!("token {k}: {e}")))?;
            by_id.insert(id, slots);
        }
        if by_id.keys().copied().ne(0..by_id.len()) {
            return Err(Error::invalid("shard map token ids must be dense from 0"));
        }
        Self::new(by_id.into_values().collect())
    }
}

impl Serialize for ShardMap {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_value().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ShardMap {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        let obj = v
            .as_object()
            .ok_or_else(|| serde::de::Error::custom("shard map must be an object"))?;
        Self::from_object(obj).map_err(serde::de::Error::custom)
    }
}

/// Shard maps for a run: one map shared by every example, or one per example id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ShardSet {
    Shared(ShardMap),
    PerExample(BTreeMap<u64, ShardMap>),
}

impl ShardSet {
    pub fn for_example(&self, example_id: u64) -> Result<&ShardMap> {
        match self {
            Self::Shared(m) => Ok(m),
            Self::PerExample(maps) => maps
                .get(&example_id)
                .ok_or_else(|| Error::invalid(format!("no shard map for example {example_id}"))),
        }
    }

    pub fn from_value(v: &Value) -> Result<Self> {
        let obj = v
            .as_object()
            .ok_or_else(|| Error::parse("shard file", "expected an object"))?;
        if obj.values().all(Value::is_array) {
            return Ok(Self::Shared(ShardMap::from_object(obj)?));
        }
        let mut maps = BTreeMap::new();
        for (k, v) in obj {
            let id: u64 = k
                .parse()
                .map_err(|_| Error::parse("shard file", format!("example id {k:?} is not an integer")))?;
            let inner = v
                .as_object()
                .ok_or_else(|| Error::parse("shard file", format!("example {k}: expected an object")))?;
            maps.insert(id, ShardMap::from_object(inner)?);
        }
        Ok(Self::PerExample(maps))
    }

    pub fn to_value(&self) -> Value {
        match self {
            Self::Shared(m) => m.to_value(),
            Self::PerExample(maps) => {
                Value::Object(maps.iter().map(|(id, m)| (id.to_string(), m.to_value())).collect())
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<u64> {
        artifact::write_json(path, &self.to_value())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_value(&artifact::read_json::<Value>(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(pub Vec<f64>);

impl WeightVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// Every shard inherits its parent token's weight, in slot order.
pub fn project_shards(ast_weights: &[f64], shards: &ShardMap) -> Result<WeightVector> {
    if ast_weights.len() != shards.token_count() {
        return Err(Error::invalid(format!(
            "{} token weights for a shard map over {} tokens",
            ast_weights.len(),
            shards.token_count()
        )));
    }
    let mut out = Vec::with_capacity(shards.shard_count());
    for (w, s) in ast_weights.iter().zip(&shards.slots) {
        out.extend(std::iter::repeat_n(*w, s.len()));
    }
    Ok(WeightVector(out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRecord {
    pub example_id: u64,
    pub weights: WeightVector,
}

/// Demonstration subword split: whitespace separates, every punctuation
/// character stands alone, and word runs break at case and digit boundaries.
pub fn demo_subwords(text: &str) -> Vec<String> {
    #[derive(PartialEq, Clone, Copy)]
    enum Kind {
        Lower,
        Upper,
        Digit,
    }
    let kind = |c: char| {
        if c.is_ascii_digit() {
            Kind::Digit
        } else if c.is_uppercase() {
            Kind::Upper
        } else {
            Kind::Lower
        }
    };
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut prev: Option<Kind> = None;
    for c in text.chars() {
        if c.is_whitespace() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            prev = None;
        } else if c.is_alphanumeric() {
            let k = kind(c);
            let split = matches!(
                (prev, k),
                (Some(Kind::Lower), Kind::Upper)
                    | (Some(Kind::Digit), Kind::Lower | Kind::Upper)
                    | (Some(Kind::Lower | Kind::Upper), Kind::Digit)
            );
            if split && !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            cur.push(c);
            prev = Some(k);
        } else {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            out.push(c.to_string());
            prev = None;
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    if out.is_empty() {
        out.push(text.to_string());
    }
    out
}

/// Shard map of a token map under [`demo_subwords`], slots starting at 0.
pub fn demo_shard_map(map: &TokenMap) -> ShardMap {
    let counts: Vec<usize> = map.tokens().iter().map(|t| demo_subwords(&t.text).len()).collect();
    ShardMap::from_counts(&counts).expect("demo split yields at least one shard per token")
}
