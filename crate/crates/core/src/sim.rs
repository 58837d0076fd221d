//! Synthetic gaze sessions with planted class salience and transitions.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::error::{Error, Result};
use crate::gaze::{write_samples, Fixation, GazeSample, SessionGeometry};
use crate::pseudo::{example_rng, GazeRng};
use crate::tokens::{PathEntry, ScanPath, SessionMode, TokenMap};

/// Per-axis jitter is clamped at this many standard deviations.
const JITTER_CLAMP_SD: f64 = 1.2;
const MIN_FIXATION_SAMPLES: usize = 14;
const MIN_TRANSIT_SAMPLES: usize = 5;
const DETOUR_DEG: f64 = 4.0;
const MAX_HOP_DEG: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DurationModel {
    pub mean_ms: f64,
    pub sd_ms: f64,
}

impl Default for DurationModel {
    fn default() -> Self {
        Self {
            mean_ms: 250.0,
            sd_ms: 50.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthRange {
    pub min: usize,
    pub max: usize,
}

fn default_jitter() -> f64 {
    0.2
}

/// Planted statistics of a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedModel {
    /// Per-class probability that a token of the class is fixated.
    pub salience: BTreeMap<String, f64>,
    /// Row-stochastic class transition matrix. Absent rows follow salience
    /// times class frequency in the map.
    #[serde(default)]
    pub transitions: Option<BTreeMap<String, BTreeMap<String, f64>>>,
    #[serde(default)]
    pub duration: DurationModel,
    pub sessions: usize,
    pub session_length: LengthRange,
    pub seed: u64,
    #[serde(default = "default_mode")]
    pub mode: SessionMode,
    #[serde(default = "default_jitter")]
    pub jitter_deg: f64,
    #[serde(default)]
    pub geometry: SessionGeometry,
}

fn default_mode() -> SessionMode {
    SessionMode::Reading
}

impl PlantedModel {
    pub fn validate(&self) -> Result<()> {
        for (c, &p) in &self.salience {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::invalid(format!("salience of {c:?} must lie in (0, 1), got {p}")));
            }
        }
        if let Some(t) = &self.transitions {
            for (from, row) in t {
                if row.values().any(|p| !(p.is_finite() && *p >= 0.0)) {
                    return Err(Error::invalid(format!("transition row {from:?} has a negative entry")));
                }
                let s: f64 = row.values().sum();
                if (s - 1.0).abs() > 1e-9 {
                    return Err(Error::invalid(format!("transition row {from:?} sums to {s}")));
                }
            }
        }
        if self.session_length.min < 1 || self.session_length.min > self.session_length.max {
            return Err(Error::invalid("session length range must satisfy 1 <= min <= max"));
        }
        if !(self.duration.mean_ms.is_finite() && self.duration.mean_ms > 0.0 && self.duration.sd_ms >= 0.0) {
            return Err(Error::invalid("duration mean must be positive and sd nonnegative"));
        }
        if !(self.jitter_deg.is_finite() && self.jitter_deg >= 0.0) {
            return Err(Error::invalid("jitter must be nonnegative"));
        }
        self.geometry.validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: Self = artifact::read_json(path)?;
        m.validate()?;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedSession {
    pub samples: Vec<GazeSample>,
    pub fixations: Vec<Fixation>,
    pub truth: ScanPath,
}

/// Class sampler restricted to the classes present in one map.
struct Planted<'a> {
    map: &'a TokenMap,
    classes: Vec<&'a str>,
    by_class: BTreeMap<&'a str, Vec<usize>>,
    start: Vec<f64>,
    rows: BTreeMap<&'a str, Vec<f64>>,
}

impl<'a> Planted<'a> {
    fn new(model: &PlantedModel, map: &'a TokenMap) -> Result<Self> {
        let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for t in map.tokens() {
            by_class.entry(t.class.as_str()).or_default().push(t.id);
        }
        let classes: Vec<&str> = map.taxonomy().iter().filter(|c| by_class.contains_key(c)).collect();
        let salience = |c: &str| {
            model
                .salience
                .get(c)
                .copied()
                .ok_or_else(|| Error::invalid(format!("no planted salience for class {c:?}")))
        };
        let mut start = Vec::with_capacity(classes.len());
        for c in &classes {
            start.push(salience(c)? * by_class[c].len() as f64);
        }
        let mut rows = BTreeMap::new();
        for &from in &classes {
            let row = model
                .transitions
                .as_ref()
                .and_then(|t| t.get(from))
                .map(|r| {
                    classes
                        .iter()
                        .map(|c| r.get(*c).copied().unwrap_or(0.0))
                        .collect::<Vec<_>>()
                })
                .filter(|r| r.iter().sum::<f64>() > 0.0)
                .unwrap_or_else(|| start.clone());
            rows.insert(from, row);
        }
        Ok(Self {
            map,
            classes,
            by_class,
            start,
            rows,
        })
    }

    fn pick(weights: &[f64], rng: &mut GazeRng) -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                return i;
            }
            u -= w;
        }
        weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
    }

    fn walk(&self, len: usize, rng: &mut GazeRng) -> Vec<usize> {
        let mut tokens = Vec::with_capacity(len);
        let mut class = self.classes[Self::pick(&self.start, rng)];
        for step in 0..len {
            if step > 0 {
                class = self.classes[Self::pick(&self.rows[class], rng)];
            }
            let pool = &self.by_class[class];
            tokens.push(pool[rng.random_range(0..pool.len())]);
        }
        tokens
    }
}

/// Synthesize every session of the model over one token map.
///
/// Each fixation is a cloud of jittered samples on its token's box centre;
/// consecutive fixations are joined by transit samples routed through a
/// detour point well away from both endpoints.
pub fn simulate_sessions(model: &PlantedModel, map: &TokenMap) -> Result<Vec<SimulatedSession>> {
    if map.is_empty() {
        return Err(Error::invalid("cannot simulate over an empty token map"));
    }
    model.validate()?;
    let planted = Planted::new(model, map)?;
    (0..model.sessions)
        .map(|i| simulate_one(model, &planted, &mut example_rng(model.seed, i as u64)))
        .collect()
}

fn simulate_one(model: &PlantedModel, planted: &Planted, rng: &mut GazeRng) -> Result<SimulatedSession> {
    let geom = &model.geometry;
    let ppd = geom.pixels_per_degree;
    let period = geom.sample_period_ms();
    let len = rng.random_range(model.session_length.min..=model.session_length.max);
    let tokens = planted.walk(len, rng);

    let sigma = model.jitter_deg * ppd;
    let jitter = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).map_err(|e| Error::Internal(e.to_string()))?;
    let duration =
        Normal::new(model.duration.mean_ms, model.duration.sd_ms).map_err(|e| Error::Internal(e.to_string()))?;
    let clamp = JITTER_CLAMP_SD * sigma;

    let mut samples = Vec::new();
    let mut fixations = Vec::with_capacity(len);
    let mut entries = Vec::with_capacity(len);
    let mut prev_centre: Option<(f64, f64)> = None;
    let mut tick = 0usize;
    for (k, &id) in tokens.iter().enumerate() {
        let (cx, cy) = planted.map.tokens()[id].bbox.center();
        if let Some((px, py)) = prev_centre {
            for (x, y) in transit((px, py), (cx, cy), ppd, rng) {
                samples.push(GazeSample::valid(tick as f64 * period, x, y));
                tick += 1;
            }
        }
        let n = ((duration.sample(rng) / period).round().max(0.0) as usize).max(MIN_FIXATION_SAMPLES);
        let first = samples.len();
        for _ in 0..n {
            let dx = if sigma > 0.0 {
                jitter.sample(rng).clamp(-clamp, clamp)
            } else {
                0.0
            };
            let dy = if sigma > 0.0 {
                jitter.sample(rng).clamp(-clamp, clamp)
            } else {
                0.0
            };
            samples.push(GazeSample::valid(tick as f64 * period, cx + dx, cy + dy));
            tick += 1;
        }
        let cloud = &samples[first..];
        fixations.push(Fixation {
            start: cloud[0].timestamp,
            duration: cloud[n - 1].timestamp - cloud[0].timestamp,
            centroid_x: cloud.iter().map(|s| s.x).sum::<f64>() / n as f64,
            centroid_y: cloud.iter().map(|s| s.y).sum::<f64>() / n as f64,
            sample_count: n,
        });
        entries.push(PathEntry {
            fixation_index: k,
            token_id: id,
        });
        prev_centre = Some((cx, cy));
    }
    Ok(SimulatedSession {
        samples,
        fixations,
        truth: ScanPath {
            mode: model.mode,
            entries,
        },
    })
}

/// Points strictly between `a` and `b` along `a -> d -> b`, where `d` sits
/// at least `DETOUR_DEG` off the segment, spaced at most `MAX_HOP_DEG`.
fn transit(a: (f64, f64), b: (f64, f64), ppd: f64, rng: &mut GazeRng) -> Vec<(f64, f64)> {
    let (mx, my) = ((a.0 + b.0) / 2.0, (a.1 + b.1) / 2.0);
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let l = vx.hypot(vy);
    let (nx, ny) = if l > 0.0 { (-vy / l, vx / l) } else { (0.0, 1.0) };
    let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let off = (DETOUR_DEG * ppd).max(l / 2.0) * side;
    let d = (mx + nx * off, my + ny * off);

    let leg1 = (d.0 - a.0).hypot(d.1 - a.1);
    let leg2 = (b.0 - d.0).hypot(b.1 - d.1);
    let total = leg1 + leg2;
    let hops = ((total / (MAX_HOP_DEG * ppd)).ceil() as usize).max(MIN_TRANSIT_SAMPLES + 1);
    (1..hops)
        .map(|i| {
            let s = total * i as f64 / hops as f64;
            if s <= leg1 {
                let t = s / leg1;
                (a.0 + (d.0 - a.0) * t, a.1 + (d.1 - a.1) * t)
            } else {
                let t = (s - leg1) / leg2;
                (d.0 + (b.0 - d.0) * t, d.1 + (b.1 - d.1) * t)
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEntry {
    pub file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<String>,
    pub mode: SessionMode,
    pub tokens: String,
}

pub const SESSION_MANIFEST: &str = "sessions.json";
pub const TOKENS_FILE: &str = "tokens.json";

/// Write `session_NNN.csv`, `truth_NNN.json`, the token map, and a manifest.
pub fn write_sessions(dir: &Path, sessions: &[SimulatedSession], map: &TokenMap) -> Result<Vec<SessionEntry>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    artifact::write_json(&dir.join(TOKENS_FILE), map)?;
    let mut entries = Vec::with_capacity(sessions.len());
    for (i, s) in sessions.iter().enumerate() {
        let file = format!("session_{i:03}.csv");
        let truth = format!("truth_{i:03}.json");
        let mut buf = Vec::new();
        write_samples(&mut buf, &s.samples)?;
        artifact::write_bytes(&dir.join(&file), &buf)?;
        artifact::write_json(&dir.join(&truth), &s.truth)?;
        entries.push(SessionEntry {
            file,
            truth: Some(truth),
            mode: s.truth.mode,
            tokens: TOKENS_FILE.to_string(),
        });
    }
    artifact::write_json(&dir.join(SESSION_MANIFEST), &entries)?;
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaze::{segment_fixations, FilterConfig, IdtParams, Segmentation};
    use crate::salience::{count_monograms, ModePriors};
    use crate::tokens::{align_fixations, classify_source};
    use crate::transitions::{conditional, count_ngrams, NGram};

    fn snippet() -> TokenMap {
        classify_source(
            "int sum(int[] xs) {\n    int total = 0;\n    for (int i = 0; i < xs.length; i++) {\n        if (xs[i] > 0) {\n            total += xs[i];\n        }\n    }\n    return total;\n}\n",
        )
        .unwrap()
    }

    fn model(sessions: usize, len: usize) -> PlantedModel {
        let map = snippet();
        PlantedModel {
            salience: map.taxonomy().iter().map(|c| (c.to_string(), 0.5)).collect(),
            transitions: None,
            duration: DurationModel::default(),
            sessions,
            session_length: LengthRange { min: len, max: len },
            seed: 42,
            mode: SessionMode::Reading,
            jitter_deg: 0.2,
            geometry: SessionGeometry::default(),
        }
    }

    #[test]
    fn segmentation_recovers_fixations() {
        let map = snippet();
        let m = model(10, 40);
        let filter = FilterConfig::new(&m.geometry);
        for s in simulate_sessions(&m, &map).unwrap() {
            let seg = Segmentation::from_samples(&s.samples, &m.geometry, &filter, &IdtParams::default());
            assert_eq!(seg.fixations.len(), s.fixations.len());
            for (got, want) in seg.fixations.iter().zip(&s.fixations) {
                assert_eq!(got.sample_count, want.sample_count);
                assert!((got.centroid_x - want.centroid_x).abs() < 1e-9);
            }
            let aligned = align_fixations(&seg.fixations, &map, SessionMode::Reading);
            assert_eq!(aligned.path.entries, s.truth.entries);
        }
    }

    #[test]
    fn samples_keep_within_fixation_window() {
        let map = snippet();
        let m = model(3, 20);
        for s in simulate_sessions(&m, &map).unwrap() {
            assert!(s.samples.windows(2).all(|w| w[1].timestamp > w[0].timestamp));
            let fixation = segment_fixations(&s.samples, &m.geometry, &IdtParams::default());
            assert_eq!(fixation.len(), 20);
        }
    }

    #[test]
    fn zero_sessions_and_errors() {
        let map = snippet();
        assert!(simulate_sessions(&model(0, 5), &map).unwrap().is_empty());
        let empty = TokenMap::empty(map.taxonomy().clone());
        assert!(simulate_sessions(&model(2, 5), &empty).is_err());
        let mut bad = model(2, 5);
        bad.salience.insert("loop".into(), 1.0);
        assert!(simulate_sessions(&bad, &map).is_err());
        let mut bad = model(2, 5);
        bad.transitions = Some(BTreeMap::from([(
            "loop".into(),
            BTreeMap::from([("loop".into(), 0.5)]),
        )]));
        assert!(bad.validate().is_err());
    }

    #[test]
    fn deterministic_under_seed() {
        let map = snippet();
        let a = simulate_sessions(&model(2, 10), &map).unwrap();
        let b = simulate_sessions(&model(2, 10), &map).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_transitions_recovered() {
        let map = snippet();
        let mut m = model(1, 10_000);
        let present: Vec<String> = map
            .class_counts()
            .into_iter()
            .filter(|(_, n)| *n > 0)
            .map(|(c, _)| c)
            .collect();
        let p = 1.0 / present.len() as f64;
        let row: BTreeMap<String, f64> = present.iter().map(|c| (c.clone(), p)).collect();
        m.transitions = Some(present.iter().map(|c| (c.clone(), row.clone())).collect());
        let s = simulate_sessions(&m, &map).unwrap();
        let counts = count_ngrams(&[s[0].truth.clone()], &map).unwrap();
        let p2 = conditional(&counts.c2);
        for a in &present {
            for b in &present {
                let got = p2.get(&NGram::new([a.as_str(), b.as_str()])).copied().unwrap_or(0.0);
                assert!((got - p).abs() < 0.03, "{a} -> {b}: {got}");
            }
        }
    }

    #[test]
    fn salience_ordering_recovered() {
        let map = snippet();
        let mut m = model(20, 60);
        m.salience.insert("loop".into(), 0.9);
        m.salience.insert("variable declaration".into(), 0.1);
        let paths: Vec<ScanPath> = simulate_sessions(&m, &map)
            .unwrap()
            .into_iter()
            .map(|s| s.truth)
            .collect();
        let priors = ModePriors::fit(&count_monograms(&paths, &map).unwrap());
        assert!(priors.mean("loop").unwrap() > priors.mean("variable declaration").unwrap());
    }

    #[test]
    fn writes_session_directory() {
        let map = snippet();
        let dir = tempfile::tempdir().unwrap();
        let sessions = simulate_sessions(&model(2, 4), &map).unwrap();
        let entries = write_sessions(dir.path(), &sessions, &map).unwrap();
        assert_eq!(entries.len(), 2);
        let back = crate::gaze::load_samples(&dir.path().join(&entries[1].file)).unwrap();
        assert_eq!(back, sessions[1].samples);
        let truth: ScanPath = artifact::read_json(&dir.path().join(entries[1].truth.as_ref().unwrap())).unwrap();
        assert_eq!(truth, sessions[1].truth);
    }
}
