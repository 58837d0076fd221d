//! Pseudo-attention masks sampled from salience priors, and the greedy
//! line-aware n-gram paths built over them.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::salience::{BetaPrior, ModePriors, MonogramCounts};
use crate::tokens::{SessionMode, TokenMap};
use crate::transitions::{NGram, NGramIndex, TransitionTables};

pub type GazeRng = ChaCha8Rng;

/// Per-example generator: `seed XOR example_id`.
pub fn example_rng(seed: u64, example_id: u64) -> GazeRng {
    ChaCha8Rng::seed_from_u64(seed ^ example_id)
}

/// Maximum line span of an accepted bigram or trigram, per mode.
pub fn default_line_span(mode: SessionMode) -> u32 {
    match mode {
        SessionMode::Reading => 3,
        SessionMode::Writing => 5,
        SessionMode::Combined => 4,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskConfig {
    pub mode: SessionMode,
    pub line_span: u32,
    pub rng_seed: u64,
}

impl MaskConfig {
    pub fn new(mode: SessionMode, rng_seed: u64) -> Self {
        Self {
            mode,
            line_span: default_line_span(mode),
            rng_seed,
        }
    }

    pub fn with_line_span(mut self, line_span: u32) -> Result<Self> {
        if line_span < 1 {
            return Err(Error::invalid("line span must be at least 1"));
        }
        self.line_span = line_span;
        Ok(self)
    }
}

/// Draw a salience ratio from `Beta(alpha, beta)`.
///
/// `Beta(1, 1)` returns the generator's uniform draw directly; other shapes
/// use the two-gamma construction `X / (X + Y)`.
pub fn sample_ratio<R: Rng + ?Sized>(prior: &BetaPrior, rng: &mut R) -> Result<f64> {
    if prior.alpha == 1.0 && prior.beta == 1.0 {
        return Ok(rng.random::<f64>());
    }
    let ga = Gamma::new(prior.alpha, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    let gb = Gamma::new(prior.beta, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    loop {
        let x: f64 = ga.sample(rng);
        let y: f64 = gb.sample(rng);
        let s = x + y;
        if s > 0.0 && s.is_finite() {
            return Ok(x / s);
        }
    }
}

/// Corpus-level class shares `p_s = c1(s) / sum c1`, kept as integer counts so
/// quota floors are exact.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClassShares {
    hits: BTreeMap<String, u64>,
    total: u64,
}

impl ClassShares {
    pub fn from_hits(hits: BTreeMap<String, u64>) -> Self {
        let total = hits.values().sum();
        Self { hits, total }
    }

    pub fn from_counts(counts: &MonogramCounts) -> Self {
        Self::from_hits(counts.iter().map(|(c, k)| (c.to_string(), k.c1)).collect())
    }

    pub fn from_priors(priors: &ModePriors) -> Self {
        Self::from_hits(priors.hits())
    }

    pub fn share(&self, class: &str) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        self.hits.get(class).copied().unwrap_or(0) as f64 / self.total as f64
    }

    /// `m_s = max(1, floor(p_s * m))`.
    pub fn quota(&self, class: &str, m: usize) -> usize {
        let hits = self.hits.get(class).copied().unwrap_or(0) as u128;
        let floor = if self.total == 0 {
            0
        } else {
            (hits * m as u128 / self.total as u128) as usize
        };
        floor.max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionMask {
    #[serde(with = "bits_as_ints")]
    pub bits: Vec<bool>,
    pub rho: f64,
    /// Target number of selected tokens, `floor(rho * n)`.
    pub m: usize,
    /// Per-class quota targets for classes present in the example.
    pub quotas: BTreeMap<String, usize>,
}

impl AttentionMask {
    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn selected(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }
}

/// Sample a binary mask over the tokens of `map`.
///
/// Positions are shuffled once. Classes present in the example are visited in
/// descending share (ties in taxonomy order) and take their quota from the
/// shuffled order until `m` tokens are selected; remaining slots are filled
/// from the unselected positions in shuffled order.
pub fn sample_mask<R: Rng + ?Sized>(
    map: &TokenMap,
    rho: f64,
    shares: &ClassShares,
    rng: &mut R,
) -> Result<AttentionMask> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::invalid(format!("rho must lie in [0, 1], got {rho}")));
    }
    let n = map.len();
    if n == 0 {
        return Err(Error::invalid("cannot sample a mask over an empty token map"));
    }
    let m = ((rho * n as f64).floor() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);

    let mut present: Vec<(usize, &str)> = map
        .taxonomy()
        .iter()
        .enumerate()
        .filter(|(_, c)| map.tokens().iter().any(|t| t.class == *c))
        .collect();
    present.sort_by(|a, b| shares.share(b.1).total_cmp(&shares.share(a.1)).then(a.0.cmp(&b.0)));

    let mut bits = vec![false; n];
    let mut selected = 0;
    let mut quotas = BTreeMap::new();
    for &(_, class) in &present {
        let quota = shares.quota(class, m);
        quotas.insert(class.to_string(), quota);
        let mut taken = 0;
        for &pos in &order {
            if taken == quota || selected == m {
                break;
            }
            if map.tokens()[pos].class == class {
                bits[pos] = true;
                taken += 1;
                selected += 1;
            }
        }
    }
    for &pos in &order {
        if selected == m {
            break;
        }
        if !bits[pos] {
            bits[pos] = true;
            selected += 1;
        }
    }
    Ok(AttentionMask { bits, rho, m, quotas })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathGram {
    #[serde(with = "gram_as_list")]
    pub gram: NGram,
    pub index: usize,
    pub tokens: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PseudoPath {
    pub grams: Vec<PathGram>,
}

impl PseudoPath {
    pub fn covered_tokens(&self) -> Vec<usize> {
        self.grams.iter().flat_map(|g| g.tokens.iter().copied()).collect()
    }
}

/// Greedy left-to-right n-gram matching over the masked tokens: a trigram
/// when its line span is within `line_span` and the class triple is in the
/// trigram table, else such a bigram, else a monogram.
pub fn generate_path(
    mask: &AttentionMask,
    map: &TokenMap,
    tables: &TransitionTables,
    index: &NGramIndex,
    line_span: u32,
) -> Result<PseudoPath> {
    if mask.bits.len() != map.len() {
        return Err(Error::invalid(format!(
            "mask length {} does not match token count {}",
            mask.bits.len(),
            map.len()
        )));
    }
    let masked = mask.selected();
    let line = |i: usize| i64::from(map.tokens()[masked[i]].line);
    let class = |i: usize| map.tokens()[masked[i]].class.as_str();
    let within = |a: usize, b: usize| line(b) - line(a) <= i64::from(line_span);

    let mut grams = Vec::new();
    let mut i = 0;
    while i < masked.len() {
        let arity = if i + 2 < masked.len()
            && within(i, i + 2)
            && tables.has_trigram(&NGram::new([class(i), class(i + 1), class(i + 2)]))
        {
            3
        } else if i + 1 < masked.len() && within(i, i + 1) && tables.has_bigram(&NGram::new([class(i), class(i + 1)])) {
            2
        } else {
            1
        };
        let gram = NGram::new((i..i + arity).map(class));
        let idx = index.resolve(&gram)?;
        grams.push(PathGram {
            gram,
            index: idx,
            tokens: masked[i..i + arity].to_vec(),
        });
        i += arity;
    }
    Ok(PseudoPath { grams })
}

/// One generated training example as written to the pseudo file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoExample {
    pub example_id: u64,
    pub rho: f64,
    #[serde(with = "bits_as_ints")]
    pub mask: Vec<bool>,
    pub path: PseudoPath,
}

impl PseudoExample {
    pub fn token_count(&self) -> usize {
        self.mask.len()
    }
}

/// Sample rho, the mask, and the pseudo path for one example.
pub fn generate_example(
    example_id: u64,
    map: &TokenMap,
    priors: &ModePriors,
    tables: &TransitionTables,
    index: &NGramIndex,
    cfg: &MaskConfig,
) -> Result<PseudoExample> {
    let mut rng = example_rng(cfg.rng_seed, example_id);
    let rho = sample_ratio(&priors.pooled, &mut rng)?;
    let shares = ClassShares::from_priors(priors);
    let mask = sample_mask(map, rho, &shares, &mut rng)?;
    let path = generate_path(&mask, map, tables, index, cfg.line_span)?;
    Ok(PseudoExample {
        example_id,
        rho,
        mask: mask.bits,
        path,
    })
}

/// Generated examples of one run, with the mode whose priors produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoFile {
    pub mode: SessionMode,
    pub line_span: u32,
    pub examples: Vec<PseudoExample>,
}

impl PseudoFile {
    pub fn frequencies(&self) -> BTreeMap<NGram, u64> {
        gram_frequencies(self.examples.iter().map(|e| &e.path))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<u64> {
        crate::artifact::write_json(path, self)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        crate::artifact::read_json(path)
    }
}

/// Corpus-level emission counts of every gram across a set of paths.
pub fn gram_frequencies<'a, I>(paths: I) -> BTreeMap<NGram, u64>
where
    I: IntoIterator<Item = &'a PseudoPath>,
{
    let mut freq = BTreeMap::new();
    for p in paths {
        for g in &p.grams {
            *freq.entry(g.gram.clone()).or_default() += 1;
        }
    }
    freq
}

mod bits_as_ints {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(bits: &[bool], s: S) -> Result<S::Ok, S::Error> {
        let ints: Vec<u8> = bits.iter().map(|&b| u8::from(b)).collect();
        ints.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<bool>, D::Error> {
        Vec::<u8>::deserialize(d)?
            .into_iter()
            .map(|v| match v {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(serde::de::Error::custom(format!("mask bit {other} is not 0/1"))),
            })
            .collect()
    }
}

mod gram_as_list {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::transitions::NGram;

    pub fn serialize<S: Serializer>(gram: &NGram, s: S) -> Result<S::Ok, S::Error> {
        gram.classes().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NGram, D::Error> {
        let classes = Vec::<String>::deserialize(d)?;
        if classes.is_empty() || classes.len() > 3 {
            return Err(serde::de::Error::custom("gram must hold 1 to 3 classes"));
        }
        Ok(NGram::new(classes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::salience::fit_beta;
    use crate::tokens::{
        AstToken, Taxonomy, CONDITIONAL_STATEMENT, FUNCTION_CALL, FUNCTION_DECLARATION, LOOP, PARAMETER,
        VARIABLE_DECLARATION,
    };
    use crate::transitions::{build_index, CountTable, NGramCounts};

    fn map_of(layout: &[(&str, u32)]) -> TokenMap {
        let tokens = layout
            .iter()
            .enumerate()
            .map(|(i, (class, line))| AstToken {
                id: i,
                text: format!("t{i}"),
                class: class.to_string(),
                line: *line,
                bbox: [i as f64 * 10.0, 0.0, i as f64 * 10.0 + 10.0, 10.0].into(),
            })
            .collect();
        TokenMap::new(Taxonomy::default(), tokens).unwrap()
    }

    fn table1_shares() -> ClassShares {
        ClassShares::from_hits(
            [
                (VARIABLE_DECLARATION, 18665),
                (FUNCTION_DECLARATION, 13971),
                (CONDITIONAL_STATEMENT, 13222),
                (LOOP, 7876),
                (FUNCTION_CALL, 5232),
            ]
            .into_iter()
            .map(|(c, v)| (c.to_string(), v))
            .collect(),
        )
    }

    #[test]
    fn uniform_prior_returns_uniform_draw() {
        let mut a = example_rng(7, 0);
        let mut b = example_rng(7, 0);
        let rho = sample_ratio(&BetaPrior::uniform(), &mut a).unwrap();
        assert_eq!(rho, b.random::<f64>());
    }

    #[test]
    fn concentrated_prior() {
        let p = BetaPrior { alpha: 1e6, beta: 1e6 };
        let mut rng = example_rng(1, 2);
        for _ in 0..1000 {
            let r = sample_ratio(&p, &mut rng).unwrap();
            assert!(r > 0.49 && r < 0.51);
        }
    }

    #[test]
    fn monte_carlo_mean() {
        let p = BetaPrior { alpha: 2.0, beta: 6.0 };
        let mut rng = example_rng(3, 4);
        let n = 100_000;
        let mean = (0..n).map(|_| sample_ratio(&p, &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - 0.25).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn half_mask() {
        let map = map_of(&[(LOOP, 1); 10]);
        let mask = sample_mask(&map, 0.5, &table1_shares(), &mut example_rng(0, 0)).unwrap();
        assert_eq!(mask.popcount(), 5);
        assert_eq!(mask.m, 5);
    }

    #[test]
    fn table1_loop_quota() {
        let shares = table1_shares();
        assert!((shares.share(LOOP) - 7876.0 / 58966.0).abs() < 1e-12);
        assert_eq!(shares.quota(LOOP, 10), 1);
        assert_eq!(shares.quota(VARIABLE_DECLARATION, 10), 3);
        // classes never fixated still receive the floor of one
        assert_eq!(shares.quota(PARAMETER, 10), 1);
    }

    #[test]
    fn zero_rho_gives_empty_mask() {
        let map = map_of(&[(LOOP, 1); 4]);
        let mask = sample_mask(&map, 0.0, &table1_shares(), &mut example_rng(0, 0)).unwrap();
        assert_eq!(mask.popcount(), 0);
        assert!(sample_mask(&map, 1.5, &table1_shares(), &mut example_rng(0, 0)).is_err());
        assert!(sample_mask(&map, -0.1, &table1_shares(), &mut example_rng(0, 0)).is_err());
    }

    #[test]
    fn quotas_are_met_when_feasible() {
        let mut layout = vec![(VARIABLE_DECLARATION, 1); 10];
        layout.extend([(LOOP, 2); 5]);
        layout.extend([(FUNCTION_CALL, 3); 5]);
        let map = map_of(&layout);
        for seed in 0..50 {
            let mask = sample_mask(&map, 0.6, &table1_shares(), &mut example_rng(seed, 0)).unwrap();
            assert_eq!(mask.popcount(), 12);
            for (class, quota) in &mask.quotas {
                let got = mask
                    .selected()
                    .iter()
                    .filter(|&&i| map.tokens()[i].class == *class)
                    .count();
                assert!(got >= *quota, "{class}: {got} < {quota}");
            }
        }
    }

    #[test]
    fn mask_is_deterministic_under_seed() {
        let map = map_of(&[(LOOP, 1), (PARAMETER, 1), (FUNCTION_CALL, 2), (LOOP, 3)]);
        let a = sample_mask(&map, 0.75, &table1_shares(), &mut example_rng(9, 1)).unwrap();
        let b = sample_mask(&map, 0.75, &table1_shares(), &mut example_rng(9, 1)).unwrap();
        assert_eq!(a, b);
    }

    fn tables(c2: &[(&[&str], u64)], c3: &[(&[&str], u64)]) -> (TransitionTables, NGramIndex) {
        let to_table = |rows: &[(&[&str], u64)]| -> CountTable {
            rows.iter().map(|(g, c)| (NGram::new(g.iter().copied()), *c)).collect()
        };
        let raw = NGramCounts {
            c2: to_table(c2),
            c3: to_table(c3),
        };
        let t = TransitionTables::build(&raw, 5);
        let idx = build_index(&Taxonomy::default(), &t.p2, &t.p3);
        (t, idx)
    }

    fn full_mask(n: usize) -> AttentionMask {
        AttentionMask {
            bits: vec![true; n],
            rho: 1.0,
            m: n,
            quotas: BTreeMap::new(),
        }
    }

    #[test]
    fn trigram_consumes_whole_path() {
        let map = map_of(&[(FUNCTION_DECLARATION, 1), (PARAMETER, 1), (VARIABLE_DECLARATION, 2)]);
        let (t, idx) = tables(&[], &[(&[FUNCTION_DECLARATION, PARAMETER, VARIABLE_DECLARATION], 1634)]);
        let p = generate_path(&full_mask(3), &map, &t, &idx, 3).unwrap();
        assert_eq!(p.grams.len(), 1);
        assert_eq!(p.grams[0].tokens, [0, 1, 2]);
        assert_eq!(p.grams[0].index, 8);
    }

    #[test]
    fn span_failure_falls_back() {
        let map = map_of(&[(FUNCTION_DECLARATION, 1), (PARAMETER, 1), (VARIABLE_DECLARATION, 9)]);
        let (t, idx) = tables(&[], &[(&[FUNCTION_DECLARATION, PARAMETER, VARIABLE_DECLARATION], 1634)]);
        let p = generate_path(&full_mask(3), &map, &t, &idx, 3).unwrap();
        assert_eq!(p.grams.iter().map(|g| g.gram.arity()).collect::<Vec<_>>(), [1, 1, 1]);

        let (t, idx) = tables(
            &[(&[FUNCTION_DECLARATION, PARAMETER], 40)],
            &[(&[FUNCTION_DECLARATION, PARAMETER, VARIABLE_DECLARATION], 1634)],
        );
        let p = generate_path(&full_mask(3), &map, &t, &idx, 3).unwrap();
        assert_eq!(p.grams.iter().map(|g| g.gram.arity()).collect::<Vec<_>>(), [2, 1]);
        // a span of 8 lines is accepted once the limit allows it
        let p = generate_path(&full_mask(3), &map, &t, &idx, 8).unwrap();
        assert_eq!(p.grams.len(), 1);
    }

    #[test]
    fn single_token_is_monogram() {
        let map = map_of(&[(LOOP, 1), (PARAMETER, 1)]);
        let (t, idx) = tables(&[], &[]);
        let mut mask = full_mask(2);
        mask.bits[0] = false;
        let p = generate_path(&mask, &map, &t, &idx, 3).unwrap();
        assert_eq!(p.grams.len(), 1);
        assert_eq!(p.grams[0].gram, NGram::new([PARAMETER]));
        assert_eq!(p.grams[0].index, 5);
    }

    #[test]
    fn class_outside_index_is_an_error() {
        let map = map_of(&[(LOOP, 1)]);
        let idx = NGramIndex::from_grams(vec![NGram::new([PARAMETER])]).unwrap();
        let err = generate_path(&full_mask(1), &map, &TransitionTables::default(), &idx, 3);
        assert!(matches!(err, Err(Error::UnknownGram(_))));
    }

    #[test]
    fn example_generation_is_reproducible() {
        let map = map_of(&[(LOOP, 1), (PARAMETER, 1), (FUNCTION_CALL, 2), (LOOP, 3), (PARAMETER, 4)]);
        let counts = MonogramCounts::from_counts(
            Taxonomy::default(),
            [(LOOP, 30, 50), (PARAMETER, 10, 40), (FUNCTION_CALL, 5, 20)],
        )
        .unwrap();
        let priors = ModePriors::fit(&counts);
        assert_eq!(priors.pooled, fit_beta(45, 110));
        let (t, idx) = tables(&[(&[LOOP, PARAMETER], 9)], &[]);
        let cfg = MaskConfig::new(SessionMode::Reading, 42);
        let a = generate_example(3, &map, &priors, &t, &idx, &cfg).unwrap();
        let b = generate_example(3, &map, &priors, &t, &idx, &cfg).unwrap();
        assert_eq!(a, b);
        let covered = a.path.covered_tokens();
        let mask_ids: Vec<usize> = (0..5).filter(|&i| a.mask[i]).collect();
        assert_eq!(covered, mask_ids);
        let json = serde_json::to_value(&a).unwrap();
        assert!(json["mask"].as_array().unwrap().iter().all(|v| v == 0 || v == 1));
        let back: PseudoExample = serde_json::from_value(json).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn frequencies_count_emissions() {
        let p = PseudoPath {
            grams: vec![
                PathGram {
                    gram: NGram::new([LOOP]),
                    index: 3,
                    tokens: vec![0],
                },
                PathGram {
                    gram: NGram::new([LOOP]),
                    index: 3,
                    tokens: vec![2],
                },
            ],
        };
        let f = gram_frequencies([&p, &p]);
        assert_eq!(f[&NGram::new([LOOP])], 4);
    }

    proptest::proptest! {
        #[test]
        fn mask_law(
            classes in proptest::collection::vec(0usize..8, 1..40),
            hits in proptest::collection::vec(0u64..1000, 8),
            rho in 0.0f64..=1.0,
            seed in 0u64..1000,
        ) {
            let tax = Taxonomy::default();
            let layout: Vec<(&str, u32)> =
                classes.iter().map(|&c| (tax.labels()[c].as_str(), 1)).collect();
            let map = map_of(&layout);
            let shares = ClassShares::from_hits(
                tax.iter().zip(&hits).map(|(c, &h)| (c.to_string(), h)).collect(),
            );
            let mask = sample_mask(&map, rho, &shares, &mut example_rng(seed, 0)).unwrap();
            let n = map.len();
            proptest::prop_assert_eq!(mask.popcount(), (rho * n as f64).floor() as usize);
            let available = |c: &str| map.tokens().iter().filter(|t| t.class == c).count();
            let feasible = mask.quotas.iter().all(|(c, &q)| q <= available(c))
                && mask.quotas.values().sum::<usize>() <= mask.m;
            if feasible {
                for (c, &q) in &mask.quotas {
                    let got = mask.selected().iter().filter(|&&i| map.tokens()[i].class == *c).count();
                    proptest::prop_assert!(got >= q);
                }
            }
        }
    }
}
