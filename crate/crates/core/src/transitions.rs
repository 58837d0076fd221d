//! Bigram/trigram gaze-transition tables and the global n-gram index.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::artifact;
use crate::error::{Error, Result};
use crate::tokens::{ScanPath, Taxonomy, TokenMap};

/// Separator used when an n-gram is written as a single string key.
pub const GRAM_SEPARATOR: &str = "→";

pub const DEFAULT_PRUNE_THRESHOLD: u64 = 5;

/// Sequence of one to three class labels.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NGram(Vec<String>);

impl NGram {
    pub fn new<I, S>(classes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self(classes.into_iter().map(Into::into).collect())
    }

    pub fn arity(&self) -> usize {
        self.0.len()
    }

    pub fn classes(&self) -> &[String] {
        &self.0
    }

    /// All but the last class.
    pub fn context(&self) -> &[String] {
        &self.0[..self.0.len().saturating_sub(1)]
    }
}

impl fmt::Display for NGram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(GRAM_SEPARATOR))
    }
}

impl FromStr for NGram {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<String> = s.split(GRAM_SEPARATOR).map(str::to_string).collect();
        if parts.iter().any(String::is_empty) || parts.len() > 3 {
            return Err(Error::parse("n-gram", format!("malformed key `{s}`")));
        }
        Ok(NGram(parts))
    }
}

impl Serialize for NGram {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NGram {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub type CountTable = BTreeMap<NGram, u64>;
pub type ProbTable = BTreeMap<NGram, f64>;

/// Raw sliding-window bigram and trigram counts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NGramCounts {
    pub c2: CountTable,
    pub c3: CountTable,
}

impl NGramCounts {
    pub fn accumulate(&mut self, path: &ScanPath, map: &TokenMap) -> Result<()> {
        let classes = path.classes(map)?;
        for w in classes.windows(2) {
            *self.c2.entry(NGram::new(w.iter().copied())).or_default() += 1;
        }
        for w in classes.windows(3) {
            *self.c3.entry(NGram::new(w.iter().copied())).or_default() += 1;
        }
        Ok(())
    }

    pub fn pruned(&self, threshold: u64) -> Self {
        Self {
            c2: prune(&self.c2, threshold),
            c3: prune(&self.c3, threshold),
        }
    }
}

pub fn count_ngrams(paths: &[ScanPath], map: &TokenMap) -> Result<NGramCounts> {
    let mut counts = NGramCounts::default();
    for p in paths {
        counts.accumulate(p, map)?;
    }
    Ok(counts)
}

/// Drop every entry whose count is below `threshold`.
pub fn prune(counts: &CountTable, threshold: u64) -> CountTable {
    counts
        .iter()
        .filter(|(_, &c)| c >= threshold)
        .map(|(g, &c)| (g.clone(), c))
        .collect()
}

/// Normalize counts per conditioning context (every class but the last).
pub fn conditional(counts: &CountTable) -> ProbTable {
    let mut totals: BTreeMap<&[String], u64> = BTreeMap::new();
    for (g, &c) in counts {
        *totals.entry(g.context()).or_default() += c;
    }
    counts
        .iter()
        .filter_map(|(g, &c)| {
            let total = totals[g.context()];
            (total > 0).then(|| (g.clone(), c as f64 / total as f64))
        })
        .collect()
}

pub fn conditional_probs(c2: &CountTable, c3: &CountTable) -> (ProbTable, ProbTable) {
    (conditional(c2), conditional(c3))
}

/// Pruned counts and their conditional probabilities.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TransitionTables {
    pub c2: CountTable,
    pub c3: CountTable,
    pub p2: ProbTable,
    pub p3: ProbTable,
}

impl TransitionTables {
    /// Prune, then normalize the surviving mass.
    pub fn build(raw: &NGramCounts, threshold: u64) -> Self {
        let pruned = raw.pruned(threshold);
        let (p2, p3) = conditional_probs(&pruned.c2, &pruned.c3);
        Self {
            c2: pruned.c2,
            c3: pruned.c3,
            p2,
            p3,
        }
    }

    pub fn has_bigram(&self, g: &NGram) -> bool {
        self.c2.contains_key(g)
    }

    pub fn has_trigram(&self, g: &NGram) -> bool {
        self.c3.contains_key(g)
    }
}

/// Dense index over monograms (taxonomy order), then bigrams, then trigrams,
/// each group in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NGramIndex {
    grams: Vec<NGram>,
    lookup: BTreeMap<NGram, usize>,
}

impl NGramIndex {
    pub fn from_grams(grams: Vec<NGram>) -> Result<Self> {
        let mut lookup = BTreeMap::new();
        for (i, g) in grams.iter().enumerate() {
            if lookup.insert(g.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate n-gram `{g}` in index")));
            }
        }
        Ok(Self { grams, lookup })
    }

    pub fn get(&self, gram: &NGram) -> Option<usize> {
        self.lookup.get(gram).copied()
    }

    pub fn resolve(&self, gram: &NGram) -> Result<usize> {
        self.get(gram).ok_or_else(|| Error::UnknownGram(gram.to_string()))
    }

    pub fn gram(&self, index: usize) -> Option<&NGram> {
        self.grams.get(index)
    }

    pub fn len(&self) -> usize {
        self.grams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grams.is_empty()
    }

    pub fn grams(&self) -> &[NGram] {
        &self.grams
    }

    pub fn to_map(&self) -> BTreeMap<NGram, usize> {
        self.lookup.clone()
    }

    pub fn from_map(map: &BTreeMap<NGram, usize>) -> Result<Self> {
        let mut grams: Vec<Option<NGram>> = vec![None; map.len()];
        for (g, &i) in map {
            match grams.get_mut(i) {
                Some(slot @ None) => *slot = Some(g.clone()),
                _ => return Err(Error::invalid(format!("index values are not dense at {i}"))),
            }
        }
        Self::from_grams(grams.into_iter().map(Option::unwrap).collect())
    }
}

pub fn build_index(taxonomy: &Taxonomy, p2: &ProbTable, p3: &ProbTable) -> NGramIndex {
    let grams = taxonomy
        .iter()
        .map(|c| NGram::new([c]))
        .chain(p2.keys().cloned())
        .chain(p3.keys().cloned())
        .collect();
    NGramIndex::from_grams(grams).expect("taxonomy labels and table keys are unique")
}

/// On-disk tables file: `{c2, c3, p2, p3, index}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TablesFile {
    #[serde(flatten)]
    pub tables: TransitionTables,
    pub index: BTreeMap<NGram, usize>,
}

impl TablesFile {
    pub fn new(tables: TransitionTables, index: &NGramIndex) -> Self {
        Self {
            tables,
            index: index.to_map(),
        }
    }

    pub fn index(&self) -> Result<NGramIndex> {
        NGramIndex::from_map(&self.index)
    }

    pub fn save(&self, path: &Path) -> Result<u64> {
        artifact::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        artifact::read_json(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokens::{AstToken, PathEntry, SessionMode};
    use proptest::prelude::*;

    fn g(s: &str) -> NGram {
        s.parse().unwrap()
    }

    fn table(entries: &[(&str, u64)]) -> CountTable {
        entries.iter().map(|(k, v)| (g(k), *v)).collect()
    }

    fn abc_map() -> TokenMap {
        let tax = Taxonomy::new(["A", "B", "C"]).unwrap();
        let tokens = ["A", "B", "C"]
            .iter()
            .enumerate()
            .map(|(i, c)| AstToken {
                id: i,
                text: c.to_lowercase(),
                class: c.to_string(),
                line: 1,
                bbox: [i as f64, 0.0, i as f64 + 1.0, 1.0].into(),
            })
            .collect();
        TokenMap::new(tax, tokens).unwrap()
    }

    fn path(ids: &[usize]) -> ScanPath {
        ScanPath {
            mode: SessionMode::Reading,
            entries: ids
                .iter()
                .enumerate()
                .map(|(i, &t)| PathEntry {
                    fixation_index: i,
                    token_id: t,
                })
                .collect(),
        }
    }

    #[test]
    fn window_counts() {
        let c = count_ngrams(&[path(&[0, 1, 2])], &abc_map()).unwrap();
        assert_eq!(c.c2, table(&[("A→B", 1), ("B→C", 1)]));
        assert_eq!(c.c3, table(&[("A→B→C", 1)]));
        let c = count_ngrams(&[path(&[1])], &abc_map()).unwrap();
        assert!(c.c2.is_empty() && c.c3.is_empty());
    }

    #[test]
    fn prune_boundary() {
        assert!(prune(&table(&[("A→B", 4)]), 5).is_empty());
        assert_eq!(prune(&table(&[("A→B", 5)]), 5), table(&[("A→B", 5)]));
    }

    #[test]
    fn conditionals() {
        let p = conditional(&table(&[("A→B", 6), ("A→C", 6)]));
        assert_eq!(p[&g("A→B")], 0.5);
        assert_eq!(p[&g("A→C")], 0.5);
        assert_eq!(conditional(&table(&[("A→B", 9)]))[&g("A→B")], 1.0);
        let p = conditional(&table(&[("A→B", 8399), ("A→C", 2601)]));
        assert!((p[&g("A→B")] - 8399.0 / 11000.0).abs() < 1e-15);
        assert!((p[&g("A→B")] - 0.763_545_454_545).abs() < 1e-12);
        let p3 = conditional(&table(&[("A→B→C", 3), ("A→B→A", 1), ("B→B→C", 2)]));
        assert_eq!(p3[&g("A→B→C")], 0.75);
        assert_eq!(p3[&g("B→B→C")], 1.0);
    }

    #[test]
    fn normalization_after_pruning() {
        let raw = NGramCounts {
            c2: table(&[("A→B", 6), ("A→C", 4), ("B→C", 2)]),
            c3: CountTable::new(),
        };
        let t = TransitionTables::build(&raw, 5);
        assert_eq!(t.c2, table(&[("A→B", 6)]));
        assert_eq!(t.p2[&g("A→B")], 1.0);
        assert!(!t.p2.contains_key(&g("B→C")));
    }

    #[test]
    fn index_ordering() {
        let tax = Taxonomy::default();
        let idx = build_index(&tax, &ProbTable::new(), &ProbTable::new());
        assert_eq!(idx.len(), 8);
        for (i, c) in tax.iter().enumerate() {
            assert_eq!(idx.get(&NGram::new([c])), Some(i));
        }
        let p2: ProbTable = [(g("loop→other"), 1.0)].into_iter().collect();
        let idx = build_index(&tax, &p2, &ProbTable::new());
        assert_eq!(idx.get(&g("loop→other")), Some(8));
        let p3: ProbTable = [(g("other→loop→loop"), 1.0), (g("loop→loop→other"), 1.0)]
            .into_iter()
            .collect();
        let idx = build_index(&tax, &p2, &p3);
        assert_eq!(idx.get(&g("loop→loop→other")), Some(9));
        assert_eq!(idx.get(&g("other→loop→loop")), Some(10));
        assert_eq!(NGramIndex::from_map(&idx.to_map()).unwrap(), idx);
    }

    #[test]
    fn gram_strings() {
        assert_eq!(g("variable declaration→loop").arity(), 2);
        assert_eq!(g("a→b").to_string(), "a→b");
        assert!("a→→b".parse::<NGram>().is_err());
        assert!("a→b→c→d".parse::<NGram>().is_err());
    }

    #[test]
    fn tables_file_shape() {
        let raw = NGramCounts {
            c2: table(&[("A→B", 5)]),
            c3: table(&[("A→B→C", 7)]),
        };
        let t = TransitionTables::build(&raw, 5);
        let idx = build_index(&Taxonomy::new(["A", "B", "C"]).unwrap(), &t.p2, &t.p3);
        let file = TablesFile::new(t, &idx);
        let v: serde_json::Value = serde_json::from_str(&artifact::to_canonical_string(&file).unwrap()).unwrap();
        let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, ["c2", "c3", "index", "p2", "p3"]);
        assert_eq!(v["index"]["A→B→C"], 4);
        assert_eq!(v["c3"]["A→B→C"], 7);
        let back: TablesFile = serde_json::from_value(v).unwrap();
        assert_eq!(back, file);
    }

    fn arb_counts() -> impl Strategy<Value = CountTable> {
        prop::collection::btree_map(
            (0usize..4, 0usize..4).prop_map(|(a, b)| NGram::new([a.to_string(), b.to_string()])),
            0u64..20,
            0..16,
        )
    }

    proptest! {
        #[test]
        fn prune_is_idempotent(c in arb_counts(), t in 0u64..10) {
            let once = prune(&c, t);
            prop_assert_eq!(prune(&once, t), once.clone());
            prop_assert!(once.values().all(|&v| v >= t));
        }

        #[test]
        fn conditionals_sum_to_one(c in arb_counts()) {
            let p = conditional(&prune(&c, 1));
            let mut sums: BTreeMap<Vec<String>, f64> = BTreeMap::new();
            for (g, v) in &p {
                *sums.entry(g.context().to_vec()).or_default() += v;
            }
            for s in sums.values() {
                prop_assert!((s - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn count_conservation(paths in prop::collection::vec(prop::collection::vec(0usize..3, 0..12), 0..6)) {
            let map = abc_map();
            let scan: Vec<ScanPath> = paths.iter().map(|p| path(p)).collect();
            let c = count_ngrams(&scan, &map).unwrap();
            let expect2: u64 = paths.iter().map(|p| p.len().saturating_sub(1) as u64).sum();
            let expect3: u64 = paths.iter().map(|p| p.len().saturating_sub(2) as u64).sum();
            prop_assert_eq!(c.c2.values().sum::<u64>(), expect2);
            prop_assert_eq!(c.c3.values().sum::<u64>(), expect3);
        }

        #[test]
        fn index_is_stable(c in arb_counts()) {
            let tax = Taxonomy::new(["0", "1", "2", "3"]).unwrap();
            let p = conditional(&prune(&c, 5));
            let a = build_index(&tax, &p, &ProbTable::new());
            let b = build_index(&tax, &p.clone(), &ProbTable::new());
            prop_assert_eq!(a, b);
        }
    }
}
