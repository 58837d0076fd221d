//! Source tokens with semantic classes and screen geometry, and the mapping
//! from fixations to tokens.

mod classify;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::error::{Error, Result};
use crate::gaze::Fixation;

pub use classify::{classify_source, classify_source_with, Layout};

pub const VARIABLE_DECLARATION: &str = "variable declaration";
pub const FUNCTION_DECLARATION: &str = "function declaration";
pub const CONDITIONAL_STATEMENT: &str = "conditional statement";
pub const LOOP: &str = "loop";
pub const FUNCTION_CALL: &str = "function call";
pub const PARAMETER: &str = "parameter";
pub const ARGUMENT: &str = "argument";
pub const OTHER: &str = "other";

pub const DEFAULT_CLASSES: [&str; 8] = [
    VARIABLE_DECLARATION,
    FUNCTION_DECLARATION,
    CONDITIONAL_STATEMENT,
    LOOP,
    FUNCTION_CALL,
    PARAMETER,
    ARGUMENT,
    OTHER,
];

/// Ordered set of semantic class labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Taxonomy(Vec<String>);

impl Taxonomy {
    pub fn new<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        for (i, l) in labels.iter().enumerate() {
            if l.is_empty() || l == "*" || l.contains(crate::transitions::GRAM_SEPARATOR) {
                return Err(Error::invalid(format!("reserved or empty class label `{l}`")));
            }
            if labels[..i].contains(l) {
                return Err(Error::invalid(format!("duplicate class label `{l}`")));
            }
        }
        Ok(Self(labels))
    }

    pub fn labels(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn position(&self, label: &str) -> Option<usize> {
        self.0.iter().position(|l| l == label)
    }

    pub fn contains(&self, label: &str) -> bool {
        self.position(label).is_some()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }
}

impl Default for Taxonomy {
    fn default() -> Self {
        Self(DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect())
    }
}

/// Axis-aligned screen rectangle, half-open: `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl From<[f64; 4]> for BBox {
    fn from([x0, y0, x1, y1]: [f64; 4]) -> Self {
        Self { x0, y0, x1, y1 }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

impl BBox {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn overlaps(&self, other: &BBox) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.x1 > self.x0 && self.y1 > self.y0)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AstToken {
    pub id: usize,
    pub text: String,
    #[serde(rename = "class")]
    pub class: String,
    pub line: u32,
    pub bbox: BBox,
}

/// Leaf tokens of one snippet. Ids are dense and boxes never overlap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTokenMap")]
pub struct TokenMap {
    taxonomy: Taxonomy,
    tokens: Vec<AstToken>,
}

#[derive(Deserialize)]
struct RawTokenMap {
    #[serde(default)]
    taxonomy: Option<Taxonomy>,
    tokens: Vec<AstToken>,
}

impl TryFrom<RawTokenMap> for TokenMap {
    type Error = Error;

    fn try_from(raw: RawTokenMap) -> Result<Self> {
        let taxonomy = match raw.taxonomy {
            Some(t) => Taxonomy::new(t.0)?,
            None => Taxonomy::default(),
        };
        TokenMap::new(taxonomy, raw.tokens)
    }
}

impl TokenMap {
    pub fn new(taxonomy: Taxonomy, tokens: Vec<AstToken>) -> Result<Self> {
        for (i, t) in tokens.iter().enumerate() {
            if t.id != i {
                return Err(Error::invalid(format!(
                    "token ids must be dense: position {i} has id {}",
                    t.id
                )));
            }
            if t.line < 1 {
                return Err(Error::invalid(format!("token {i} has line 0")));
            }
            if t.bbox.is_degenerate() {
                return Err(Error::invalid(format!("token {i} has a degenerate bbox")));
            }
            if !taxonomy.contains(&t.class) {
                return Err(Error::UnknownClass(t.class.clone()));
            }
        }
        check_overlaps(&tokens)?;
        Ok(Self { taxonomy, tokens })
    }

    pub fn empty(taxonomy: Taxonomy) -> Self {
        Self {
            taxonomy,
            tokens: Vec::new(),
        }
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    pub fn tokens(&self) -> &[AstToken] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&AstToken> {
        self.tokens.get(id)
    }

    pub fn class_of(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(|t| t.class.as_str())
    }

    /// Token whose box contains the point, if any.
    pub fn token_at(&self, x: f64, y: f64) -> Option<&AstToken> {
        self.tokens.iter().find(|t| t.bbox.contains(x, y))
    }

    /// Number of tokens per taxonomy class, in taxonomy order.
    pub fn class_counts(&self) -> Vec<(String, u64)> {
        self.taxonomy
            .iter()
            .map(|c| {
                let n = self.tokens.iter().filter(|t| t.class == c).count() as u64;
                (c.to_string(), n)
            })
            .collect()
    }
}

fn check_overlaps(tokens: &[AstToken]) -> Result<()> {
    let mut order: Vec<usize> = (0..tokens.len()).collect();
    order.sort_by(|&a, &b| tokens[a].bbox.x0.total_cmp(&tokens[b].bbox.x0));
    for (k, &a) in order.iter().enumerate() {
        for &b in &order[k + 1..] {
            if tokens[b].bbox.x0 >= tokens[a].bbox.x1 {
                break;
            }
            if tokens[a].bbox.overlaps(&tokens[b].bbox) {
                return Err(Error::Overlap {
                    first: a.min(b),
                    second: a.max(b),
                });
            }
        }
    }
    Ok(())
}

pub fn load_token_map(path: &Path) -> Result<TokenMap> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_token_map(&text)
}

/// Parse a token map document, surfacing invariant violations as typed errors.
pub fn parse_token_map(text: &str) -> Result<TokenMap> {
    let raw: RawTokenMap = serde_json::from_str(text).map_err(|e| Error::parse("token map", e))?;
    TokenMap::try_from(raw)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionMode {
    Reading,
    Writing,
    Combined,
}

impl SessionMode {
    pub const ALL: [SessionMode; 3] = [SessionMode::Reading, SessionMode::Writing, SessionMode::Combined];

    pub fn as_str(&self) -> &'static str {
        match self {
            SessionMode::Reading => "reading",
            SessionMode::Writing => "writing",
            SessionMode::Combined => "combined",
        }
    }

    /// Whether a path recorded in `self` contributes to artifacts for `target`.
    pub fn feeds(&self, target: SessionMode) -> bool {
        target == SessionMode::Combined || *self == target
    }
}

impl fmt::Display for SessionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SessionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reading" => Ok(SessionMode::Reading),
            "writing" => Ok(SessionMode::Writing),
            "combined" => Ok(SessionMode::Combined),
            other => Err(Error::invalid(format!("unknown session mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathEntry {
    pub fixation_index: usize,
    pub token_id: usize,
}

/// Token-level scan path, in fixation order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPath {
    pub mode: SessionMode,
    pub entries: Vec<PathEntry>,
}

impl ScanPath {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Class labels of the visited tokens, in order.
    pub fn classes<'m>(&self, map: &'m TokenMap) -> Result<Vec<&'m str>> {
        self.entries
            .iter()
            .map(|e| {
                map.class_of(e.token_id)
                    .ok_or_else(|| Error::invalid(format!("scan path references unknown token {}", e.token_id)))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    #[serde(flatten)]
    pub path: ScanPath,
    pub discard_ratio: f64,
}

/// Map each fixation centroid to the token box containing it. Fixations
/// outside every box are discarded and counted in `discard_ratio`.
pub fn align_fixations(fixations: &[Fixation], map: &TokenMap, mode: SessionMode) -> Alignment {
    let entries: Vec<PathEntry> = fixations
        .iter()
        .enumerate()
        .filter_map(|(i, f)| {
            map.token_at(f.centroid_x, f.centroid_y).map(|t| PathEntry {
                fixation_index: i,
                token_id: t.id,
            })
        })
        .collect();
    let discard_ratio = if fixations.is_empty() {
        0.0
    } else {
        1.0 - entries.len() as f64 / fixations.len() as f64
    };
    Alignment {
        path: ScanPath { mode, entries },
        discard_ratio,
    }
}

pub fn load_scan_path(path: &Path) -> Result<ScanPath> {
    artifact::read_json(path)
}
