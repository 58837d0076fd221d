//! Per-class Beta salience priors fitted from monogram fixation counts.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::artifact;
use crate::error::{Error, Result};
use crate::tokens::{ScanPath, SessionMode, Taxonomy, TokenMap};

/// Key under which the pooled (all-class) prior is stored in a priors file.
pub const POOLED_KEY: &str = "*";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCount {
    /// Fixations landing on tokens of the class.
    pub c1: u64,
    /// Tokens of the class exposed across the corpus.
    pub n_tok: u64,
}

/// Monogram counts keyed by class, in taxonomy order.
#[derive(Debug, Clone, PartialEq)]
pub struct MonogramCounts {
    taxonomy: Taxonomy,
    counts: Vec<ClassCount>,
}

impl MonogramCounts {
    pub fn new(taxonomy: Taxonomy) -> Self {
        let counts = vec![ClassCount::default(); taxonomy.len()];
        Self { taxonomy, counts }
    }

    pub fn from_counts<'a, I>(taxonomy: Taxonomy, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, u64, u64)>,
    {
        let mut out = Self::new(taxonomy);
        for (class, c1, n_tok) in entries {
            let slot = out.slot_mut(class)?;
            slot.c1 += c1;
            slot.n_tok += n_tok;
        }
        Ok(out)
    }

    fn slot_mut(&mut self, class: &str) -> Result<&mut ClassCount> {
        let i = self
            .taxonomy
            .position(class)
            .ok_or_else(|| Error::UnknownClass(class.to_string()))?;
        Ok(&mut self.counts[i])
    }

    /// Add one scan path: its fixations to `c1`, and every token of the
    /// viewed snippet to `n_tok`.
    pub fn accumulate(&mut self, path: &ScanPath, map: &TokenMap) -> Result<()> {
        for class in path.classes(map)? {
            self.slot_mut(class)?.c1 += 1;
        }
        for t in map.tokens() {
            self.slot_mut(&t.class)?.n_tok += 1;
        }
        Ok(())
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    pub fn get(&self, class: &str) -> Option<ClassCount> {
        self.taxonomy.position(class).map(|i| self.counts[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, ClassCount)> {
        self.taxonomy.iter().zip(self.counts.iter().copied())
    }

    pub fn total(&self) -> ClassCount {
        self.counts.iter().fold(ClassCount::default(), |a, c| ClassCount {
            c1: a.c1 + c.c1,
            n_tok: a.n_tok + c.n_tok,
        })
    }
}

pub fn count_monograms(paths: &[ScanPath], map: &TokenMap) -> Result<MonogramCounts> {
    let mut counts = MonogramCounts::new(map.taxonomy().clone());
    for p in paths {
        counts.accumulate(p, map)?;
    }
    Ok(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaPrior {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaPrior {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0 && beta.is_finite() && beta > 0.0) {
            return Err(Error::invalid(format!(
                "Beta parameters must be positive, got ({alpha}, {beta})"
            )));
        }
        Ok(Self { alpha, beta })
    }

    pub const fn uniform() -> Self {
        Self { alpha: 1.0, beta: 1.0 }
    }

    pub fn mean(&self) -> f64 {
        posterior_mean(self)
    }

    pub fn variance(&self) -> f64 {
        let s = self.alpha + self.beta;
        self.alpha * self.beta / (s * s * (s + 1.0))
    }

    pub fn ln_beta_fn(&self) -> f64 {
        ln_gamma(self.alpha) + ln_gamma(self.beta) - ln_gamma(self.alpha + self.beta)
    }
}

/// `alpha = c1 + 1`, `beta = max(1, n_tok - c1 + 1)`.
///
/// Repeated fixations can push `c1` past `n_tok`; beta is then clamped to 1.
pub fn fit_beta(c1: u64, n_tok: u64) -> BetaPrior {
    let alpha = c1 as f64 + 1.0;
    let beta = if n_tok >= c1 { (n_tok - c1) as f64 + 1.0 } else { 1.0 };
    BetaPrior { alpha, beta }
}

pub fn posterior_mean(prior: &BetaPrior) -> f64 {
    prior.alpha / (prior.alpha + prior.beta)
}

/// Beta density evaluated in log space.
pub fn beta_pdf(prior: &BetaPrior, x: f64) -> Result<f64> {
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::invalid(format!("beta_pdf needs 0 < x < 1, got {x}")));
    }
    let ln = (prior.alpha - 1.0) * x.ln() + (prior.beta - 1.0) * (-x).ln_1p() - prior.ln_beta_fn();
    Ok(ln.exp())
}

pub fn bayes_update(prior: &BetaPrior, k: u64, n: u64) -> Result<BetaPrior> {
    if k > n {
        return Err(Error::invalid(format!("successes {k} exceed trials {n}")));
    }
    Ok(BetaPrior {
        alpha: prior.alpha + k as f64,
        beta: prior.beta + (n - k) as f64,
    })
}

/// Priors for every class of one session mode, plus the pooled prior.
#[derive(Debug, Clone, PartialEq)]
pub struct ModePriors {
    pub classes: BTreeMap<String, BetaPrior>,
    pub pooled: BetaPrior,
}

impl ModePriors {
    pub fn fit(counts: &MonogramCounts) -> Self {
        let classes = counts
            .iter()
            .map(|(class, c)| (class.to_string(), fit_beta(c.c1, c.n_tok)))
            .collect();
        let total = counts.total();
        Self {
            classes,
            pooled: fit_beta(total.c1, total.n_tok),
        }
    }

    pub fn get(&self, class: &str) -> Result<&BetaPrior> {
        self.classes
            .get(class)
            .ok_or_else(|| Error::UnknownClass(class.to_string()))
    }

    pub fn mean(&self, class: &str) -> Result<f64> {
        self.get(class).map(posterior_mean)
    }

    /// Fixation counts recovered from `alpha - 1`.
    pub fn hits(&self) -> BTreeMap<String, u64> {
        self.classes
            .iter()
            .map(|(c, p)| (c.clone(), (p.alpha - 1.0).round().max(0.0) as u64))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SaliencePriorSet {
    modes: BTreeMap<SessionMode, ModePriors>,
}

impl SaliencePriorSet {
    pub fn fit(counts: &BTreeMap<SessionMode, MonogramCounts>) -> Self {
        Self {
            modes: counts.iter().map(|(m, c)| (*m, ModePriors::fit(c))).collect(),
        }
    }

    pub fn insert(&mut self, mode: SessionMode, priors: ModePriors) {
        self.modes.insert(mode, priors);
    }

    pub fn mode(&self, mode: SessionMode) -> Result<&ModePriors> {
        self.modes
            .get(&mode)
            .ok_or_else(|| Error::invalid(format!("no priors for mode {mode}")))
    }

    pub fn modes(&self) -> impl Iterator<Item = (SessionMode, &ModePriors)> {
        self.modes.iter().map(|(m, p)| (*m, p))
    }

    pub fn to_file(&self) -> PriorsFile {
        self.modes
            .iter()
            .map(|(mode, p)| {
                let mut entries: BTreeMap<String, PriorRecord> = p
                    .classes
                    .iter()
                    .map(|(c, b)| (c.clone(), PriorRecord::from(*b)))
                    .collect();
                entries.insert(POOLED_KEY.to_string(), PriorRecord::from(p.pooled));
                (mode.as_str().to_string(), entries)
            })
            .collect()
    }

    pub fn from_file(file: &PriorsFile) -> Result<Self> {
        let mut set = SaliencePriorSet::default();
        for (mode, entries) in file {
            let mode: SessionMode = mode.parse()?;
            let mut classes = BTreeMap::new();
            let mut pooled = None;
            for (class, rec) in entries {
                let prior = BetaPrior::new(rec.alpha, rec.beta)?;
                if class == POOLED_KEY {
                    pooled = Some(prior);
                } else {
                    classes.insert(class.clone(), prior);
                }
            }
            let pooled =
                pooled.ok_or_else(|| Error::invalid(format!("priors for mode {mode} lack the pooled `*` entry")))?;
            set.insert(mode, ModePriors { classes, pooled });
        }
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<u64> {
        artifact::write_json(path, &self.to_file())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_file(&artifact::read_json(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorRecord {
    pub alpha: f64,
    pub beta: f64,
    pub mean: f64,
}

impl From<BetaPrior> for PriorRecord {
    fn from(b: BetaPrior) -> Self {
        Self {
            alpha: b.alpha,
            beta: b.beta,
            mean: b.mean(),
        }
    }
}

/// `{mode: {class: {alpha, beta, mean}}}`.
pub type PriorsFile = BTreeMap<String, BTreeMap<String, PriorRecord>>;
