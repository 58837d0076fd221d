//! End-to-end run: gaze sessions and training sources in, a reproducible
//! artifact bundle out.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::artifact;
use crate::error::{Error, Result};
use crate::gaze::{load_samples, FilterConfig, IdtParams, Segmentation, SessionGeometry};
use crate::pseudo::{generate_example, MaskConfig, PseudoExample, PseudoFile};
use crate::salience::{MonogramCounts, SaliencePriorSet};
use crate::sim::SessionEntry;
use crate::tokens::{align_fixations, classify_source, load_token_map, ScanPath, SessionMode, Taxonomy, TokenMap};
use crate::transitions::{build_index, NGramCounts, TablesFile, TransitionTables, DEFAULT_PRUNE_THRESHOLD};
use crate::weights::{assemble_ast_weights, demo_shard_map, project_shards, ShardSet, WeightRecord, DEFAULT_W_BASE};

pub const STAGE_INGEST: &str = "gaze_ingest";
pub const STAGE_ALIGN: &str = "token_align";
pub const STAGE_SALIENCE: &str = "salience_model";
pub const STAGE_TRANSITIONS: &str = "transition_model";
pub const STAGE_PSEUDO: &str = "pseudo_attention";
pub const STAGE_WEIGHTS: &str = "weight_projection";
pub const STAGE_BUNDLE: &str = "cli_pipeline";

pub const CONFIG_FILE: &str = "config.json";
pub const PRIORS_FILE: &str = "priors.json";
pub const TABLES_FILE: &str = "tables.json";
pub const PSEUDO_FILE: &str = "pseudo.json";
pub const SHARDS_FILE: &str = "shards.json";
pub const WEIGHTS_FILE: &str = "weights.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

const BUNDLE_FILES: [&str; 6] = [
    CONFIG_FILE,
    PRIORS_FILE,
    TABLES_FILE,
    PSEUDO_FILE,
    SHARDS_FILE,
    WEIGHTS_FILE,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSpans {
    pub reading: u32,
    pub writing: u32,
    pub combined: u32,
}

impl Default for LineSpans {
    fn default() -> Self {
        Self {
            reading: 3,
            writing: 5,
            combined: 4,
        }
    }
}

impl LineSpans {
    pub fn get(&self, mode: SessionMode) -> u32 {
        match mode {
            SessionMode::Reading => self.reading,
            SessionMode::Writing => self.writing,
            SessionMode::Combined => self.combined,
        }
    }
}

/// Every tunable of a run. Input paths are relative to `base_dir`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "defaults::mode")]
    pub mode: SessionMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taxonomy: Option<Vec<String>>,
    #[serde(default = "defaults::dispersion")]
    pub dispersion_deg: f64,
    #[serde(default = "defaults::min_fixation")]
    pub min_fixation_ms: f64,
    #[serde(default = "defaults::max_velocity")]
    pub max_velocity_deg_s: f64,
    #[serde(default = "defaults::prune")]
    pub prune_threshold: u64,
    #[serde(default)]
    pub line_span: LineSpans,
    #[serde(default = "defaults::w_base")]
    pub w_base: f64,
    #[serde(default = "defaults::beta")]
    pub beta: f64,
    #[serde(default = "defaults::gamma")]
    pub gamma: f64,
    #[serde(default = "defaults::seed")]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<PathBuf>,
    /// Session manifests as written by the simulator.
    pub sessions: Vec<PathBuf>,
    /// Directory of training examples: source files, or token maps as `.json`.
    pub examples: PathBuf,
    /// Bundle directory; not part of the hashed configuration.
    #[serde(default = "defaults::output", skip_serializing)]
    pub output: PathBuf,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

mod defaults {
    use crate::tokens::SessionMode;

    pub fn mode() -> SessionMode {
        SessionMode::Reading
    }
    pub fn dispersion() -> f64 {
        1.0
    }
    pub fn min_fixation() -> f64 {
        100.0
    }
    pub fn max_velocity() -> f64 {
        1000.0
    }
    pub fn prune() -> u64 {
        super::DEFAULT_PRUNE_THRESHOLD
    }
    pub fn w_base() -> f64 {
        super::DEFAULT_W_BASE
    }
    pub fn beta() -> f64 {
        crate::loss::DEFAULT_BETA_KL
    }
    pub fn gamma() -> f64 {
        crate::loss::DEFAULT_GAMMA
    }
    pub fn seed() -> u64 {
        42
    }
    pub fn output() -> std::path::PathBuf {
        "out".into()
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::parse("run config", e))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dispersion_deg", self.dispersion_deg),
            ("min_fixation_ms", self.min_fixation_ms),
            ("max_velocity_deg_s", self.max_velocity_deg_s),
            ("w_base", self.w_base),
            ("beta", self.beta),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::invalid(format!("gamma must be nonnegative, got {}", self.gamma)));
        }
        if self.prune_threshold == 0 {
            return Err(Error::invalid("prune_threshold must be positive"));
        }
        for m in SessionMode::ALL {
            if self.line_span.get(m) == 0 {
                return Err(Error::invalid(format!("line span for {m} must be positive")));
            }
        }
        self.taxonomy()?;
        Ok(())
    }

    pub fn taxonomy(&self) -> Result<Taxonomy> {
        match &self.taxonomy {
            Some(labels) => Taxonomy::new(labels.iter().cloned()),
            None => Ok(Taxonomy::default()),
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn idt(&self) -> IdtParams {
        IdtParams {
            dispersion_deg: self.dispersion_deg,
            min_duration_ms: self.min_fixation_ms,
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(&artifact::to_canonical_vec(self)?))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub files: BTreeMap<String, FileRecord>,
    /// SHA-256 of each input file, keyed by its path relative to the config.
    pub inputs: BTreeMap<String, String>,
    pub total_bytes: u64,
}

/// A gaze session aligned to the token map it was recorded on.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSession {
    pub path: ScanPath,
    pub map_key: String,
    pub discard_ratio: f64,
}

/// Scan paths paired with the token map each was recorded on.
#[derive(Debug, Clone, Default)]
pub struct PathCorpus {
    pub maps: BTreeMap<String, TokenMap>,
    pub sessions: Vec<AlignedSession>,
}

impl PathCorpus {
    pub fn single(map: TokenMap, paths: Vec<ScanPath>) -> Self {
        let key = String::from("map");
        Self {
            sessions: paths
                .into_iter()
                .map(|path| AlignedSession {
                    path,
                    map_key: key.clone(),
                    discard_ratio: 0.0,
                })
                .collect(),
            maps: BTreeMap::from([(key, map)]),
        }
    }

    fn pairs(&self) -> impl Iterator<Item = (&ScanPath, &TokenMap)> {
        self.sessions.iter().map(|s| (&s.path, &self.maps[&s.map_key]))
    }
}

/// Priors for every mode; each mode pools the sessions that feed it.
pub fn fit_priors(corpus: &PathCorpus, taxonomy: &Taxonomy) -> Result<SaliencePriorSet> {
    let mut counts = BTreeMap::new();
    for target in SessionMode::ALL {
        let mut c = MonogramCounts::new(taxonomy.clone());
        for (path, map) in corpus.pairs().filter(|(p, _)| p.mode.feeds(target)) {
            c.accumulate(path, map)?;
        }
        counts.insert(target, c);
    }
    Ok(SaliencePriorSet::fit(&counts))
}

/// Pruned transition tables and the gram index for one mode.
pub fn fit_transitions(
    corpus: &PathCorpus,
    taxonomy: &Taxonomy,
    mode: SessionMode,
    threshold: u64,
) -> Result<TablesFile> {
    let mut raw = NGramCounts::default();
    for (path, map) in corpus.pairs().filter(|(p, _)| p.mode.feeds(mode)) {
        raw.accumulate(path, map)?;
    }
    let tables = TransitionTables::build(&raw, threshold);
    let index = build_index(taxonomy, &tables.p2, &tables.p3);
    Ok(TablesFile::new(tables, &index))
}

/// One pseudo example per map, with example ids given by position.
pub fn generate_pseudo(
    maps: &[TokenMap],
    priors: &SaliencePriorSet,
    tables: &TablesFile,
    cfg: &MaskConfig,
) -> Result<PseudoFile> {
    let mode_priors = priors.mode(cfg.mode).map_err(|e| e.in_stage(STAGE_PSEUDO, None))?;
    let index = tables.index().map_err(|e| e.in_stage(STAGE_PSEUDO, None))?;
    let examples = maps
        .iter()
        .enumerate()
        .map(|(i, map)| {
            generate_example(i as u64, map, mode_priors, &tables.tables, &index, cfg)
                .map_err(|e| e.in_stage(STAGE_PSEUDO, Some(i as u64)))
        })
        .collect::<Result<Vec<PseudoExample>>>()?;
    Ok(PseudoFile {
        mode: cfg.mode,
        line_span: cfg.line_span,
        examples,
    })
}

/// Weight records for every pseudo example, gram frequencies taken over the
/// whole file.
pub fn project_weights(
    pseudo: &PseudoFile,
    priors: &SaliencePriorSet,
    shards: &ShardSet,
    w_base: f64,
) -> Result<Vec<WeightRecord>> {
    let stage = |id| move |e: Error| e.in_stage(STAGE_WEIGHTS, id);
    let mode_priors = priors.mode(pseudo.mode).map_err(stage(None))?;
    let freqs = pseudo.frequencies();
    pseudo
        .examples
        .iter()
        .map(|ex| {
            let id = Some(ex.example_id);
            let ast =
                assemble_ast_weights(&ex.path, &freqs, mode_priors, ex.token_count(), w_base).map_err(stage(id))?;
            let map = shards.for_example(ex.example_id).map_err(stage(id))?;
            let weights = project_shards(&ast, map).map_err(stage(id))?;
            Ok(WeightRecord {
                example_id: ex.example_id,
                weights,
            })
        })
        .collect()
}

fn relative_key(cfg: &RunConfig, p: &Path) -> String {
    p.strip_prefix(&cfg.base_dir)
        .unwrap_or(p)
        .to_string_lossy()
        .replace('\\', "/")
}

struct Inputs {
    hashes: BTreeMap<String, String>,
}

impl Inputs {
    fn read(&mut self, cfg: &RunConfig, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        self.hashes.insert(relative_key(cfg, path), sha256_hex(&bytes));
        Ok(bytes)
    }

    fn read_string(&mut self, cfg: &RunConfig, path: &Path) -> Result<String> {
        String::from_utf8(self.read(cfg, path)?).map_err(|e| Error::parse(path.display().to_string(), e))
    }
}

fn check_taxonomy(map: &TokenMap, taxonomy: &Taxonomy, what: &Path) -> Result<()> {
    if map.taxonomy() != taxonomy {
        return Err(Error::invalid(format!(
            "{} uses a taxonomy different from the run config",
            what.display()
        )));
    }
    Ok(())
}

/// Segment and align every session listed in the manifest.
fn ingest_sessions(cfg: &RunConfig, taxonomy: &Taxonomy, inputs: &mut Inputs) -> Result<PathCorpus> {
    let geometry = match &cfg.geometry {
        Some(p) => {
            let p = cfg.resolve(p);
            let text = inputs
                .read_string(cfg, &p)
                .map_err(|e| e.in_stage(STAGE_INGEST, None))?;
            let g: SessionGeometry = serde_json::from_str(&text)
                .map_err(|e| Error::parse(p.display().to_string(), e).in_stage(STAGE_INGEST, None))?;
            g.validate().map_err(|e| e.in_stage(STAGE_INGEST, None))?;
            g
        }
        None => SessionGeometry::default(),
    };
    let filter = FilterConfig {
        pixels_per_degree: geometry.pixels_per_degree,
        max_velocity_deg_s: cfg.max_velocity_deg_s,
    };
    let idt = cfg.idt();
    let mut corpus = PathCorpus::default();
    let mut listed = Vec::new();
    for manifest in &cfg.sessions {
        let manifest_path = cfg.resolve(manifest);
        let manifest_dir = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let text = inputs
            .read_string(cfg, &manifest_path)
            .map_err(|e| e.in_stage(STAGE_INGEST, None))?;
        let entries: Vec<SessionEntry> = serde_json::from_str(&text)
            .map_err(|e| Error::parse(manifest_path.display().to_string(), e).in_stage(STAGE_INGEST, None))?;
        listed.extend(entries.into_iter().map(|e| (manifest_dir.clone(), e)));
    }
    for (i, (manifest_dir, entry)) in listed.iter().enumerate() {
        let id = Some(i as u64);
        let tokens_path = manifest_dir.join(&entry.tokens);
        let key = relative_key(cfg, &tokens_path);
        if !corpus.maps.contains_key(&key) {
            let text = inputs
                .read_string(cfg, &tokens_path)
                .map_err(|e| e.in_stage(STAGE_ALIGN, id))?;
            let map = crate::tokens::parse_token_map(&text).map_err(|e| e.in_stage(STAGE_ALIGN, id))?;
            check_taxonomy(&map, taxonomy, &tokens_path).map_err(|e| e.in_stage(STAGE_ALIGN, id))?;
            corpus.maps.insert(key.clone(), map);
        }
        let csv_path = manifest_dir.join(&entry.file);
        inputs.read(cfg, &csv_path).map_err(|e| e.in_stage(STAGE_INGEST, id))?;
        let samples = load_samples(&csv_path).map_err(|e| e.in_stage(STAGE_INGEST, id))?;
        let seg = Segmentation::from_samples(&samples, &geometry, &filter, &idt);
        let aligned = align_fixations(&seg.fixations, &corpus.maps[&key], entry.mode);
        corpus.sessions.push(AlignedSession {
            path: aligned.path,
            map_key: key,
            discard_ratio: aligned.discard_ratio,
        });
    }
    Ok(corpus)
}

/// Training examples in file-name order.
fn load_examples(cfg: &RunConfig, taxonomy: &Taxonomy, inputs: &mut Inputs) -> Result<Vec<TokenMap>> {
    let dir = cfg.resolve(&cfg.examples);
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e).in_stage(STAGE_PSEUDO, None))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && !p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.')))
        .collect();
    files.sort();
    files
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let id = Some(i as u64);
            let text = inputs.read_string(cfg, p).map_err(|e| e.in_stage(STAGE_ALIGN, id))?;
            let map = parse_map_any(p, &text).map_err(|e| e.in_stage(STAGE_ALIGN, id))?;
            check_taxonomy(&map, taxonomy, p).map_err(|e| e.in_stage(STAGE_ALIGN, id))?;
            Ok(map)
        })
        .collect()
}

/// All artifacts of one run.
#[derive(Debug, Clone)]
pub struct ArtifactBundle {
    pub priors: SaliencePriorSet,
    pub tables: TablesFile,
    pub pseudo: PseudoFile,
    pub shards: ShardSet,
    pub weights: Vec<WeightRecord>,
    pub manifest: Manifest,
    pub corpus: PathCorpus,
}

pub fn run_pipeline(cfg: &RunConfig, out_dir: &Path) -> Result<ArtifactBundle> {
    cfg.validate().map_err(|e| e.in_stage(STAGE_BUNDLE, None))?;
    let taxonomy = cfg.taxonomy()?;
    let mut inputs = Inputs {
        hashes: BTreeMap::new(),
    };

    let corpus = ingest_sessions(cfg, &taxonomy, &mut inputs)?;
    let priors = fit_priors(&corpus, &taxonomy).map_err(|e| e.in_stage(STAGE_SALIENCE, None))?;
    let tables = fit_transitions(&corpus, &taxonomy, cfg.mode, cfg.prune_threshold)
        .map_err(|e| e.in_stage(STAGE_TRANSITIONS, None))?;

    let maps = load_examples(cfg, &taxonomy, &mut inputs)?;
    let mask_cfg = MaskConfig {
        mode: cfg.mode,
        line_span: cfg.line_span.get(cfg.mode),
        rng_seed: cfg.seed,
    };
    let pseudo = generate_pseudo(&maps, &priors, &tables, &mask_cfg)?;
    let shards = ShardSet::PerExample(
        maps.iter()
            .enumerate()
            .map(|(i, m)| (i as u64, demo_shard_map(m)))
            .collect(),
    );
    let weights = project_weights(&pseudo, &priors, &shards, cfg.w_base)?;

    let write = |name: &str, bytes: Vec<u8>| -> Result<(String, FileRecord)> {
        let record = FileRecord {
            bytes: bytes.len() as u64,
            sha256: sha256_hex(&bytes),
        };
        artifact::write_bytes(&out_dir.join(name), &bytes)?;
        Ok((name.to_string(), record))
    };
    let mut weight_bytes = Vec::new();
    for r in &weights {
        weight_bytes.extend(canonical_line(r)?);
    }
    let contents: [(&str, Vec<u8>); 6] = [
        (CONFIG_FILE, canonical_line(cfg)?),
        (PRIORS_FILE, canonical_line(&priors.to_file())?),
        (TABLES_FILE, canonical_line(&tables)?),
        (PSEUDO_FILE, canonical_line(&pseudo)?),
        (SHARDS_FILE, canonical_line(&shards.to_value())?),
        (WEIGHTS_FILE, weight_bytes),
    ];
    let files = contents
        .into_iter()
        .map(|(name, bytes)| write(name, bytes))
        .collect::<Result<BTreeMap<_, _>>>()
        .map_err(|e| e.in_stage(STAGE_BUNDLE, None))?;
    let manifest = Manifest {
        config_hash: cfg.hash()?,
        seed: cfg.seed,
        total_bytes: files.values().map(|f| f.bytes).sum(),
        files,
        inputs: inputs.hashes,
    };
    artifact::write_json(&out_dir.join(MANIFEST_FILE), &manifest).map_err(|e| e.in_stage(STAGE_BUNDLE, None))?;
    Ok(ArtifactBundle {
        priors,
        tables,
        pseudo,
        shards,
        weights,
        manifest,
        corpus,
    })
}

fn canonical_line<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut v = artifact::to_canonical_vec(value)?;
    v.push(b'\n');
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    fn record(&mut self, name: &str, outcome: std::result::Result<(), String>) {
        self.checks.push(Check {
            name: name.to_string(),
            passed: outcome.is_ok(),
            detail: outcome.err().unwrap_or_default(),
        });
    }
}

type Outcome = std::result::Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Outcome {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Re-check the invariants of a bundle directory. Unreadable files become
/// failed checks.
pub fn validate_artifacts(dir: &Path) -> ValidationReport {
    let mut report = ValidationReport::default();
    let load = |name: &str| -> std::result::Result<Vec<u8>, String> {
        fs::read(dir.join(name)).map_err(|e| format!("{name}: {e}"))
    };
    let parse = |name: &str| -> std::result::Result<serde_json::Value, String> {
        let bytes = load(name)?;
        serde_json::from_slice(&bytes).map_err(|e| format!("{name}: {e}"))
    };

    let manifest: std::result::Result<Manifest, String> =
        parse(MANIFEST_FILE).and_then(|v| serde_json::from_value(v).map_err(|e| format!("{MANIFEST_FILE}: {e}")));
    let config: std::result::Result<RunConfig, String> =
        parse(CONFIG_FILE).and_then(|v| serde_json::from_value(v).map_err(|e| format!("{CONFIG_FILE}: {e}")));

    report.record(
        "manifest_integrity",
        manifest.as_ref().map_err(Clone::clone).and_then(|m| {
            let mut total = 0;
            for name in BUNDLE_FILES {
                let rec = m
                    .files
                    .get(name)
                    .ok_or_else(|| format!("{name} missing from manifest"))?;
                let bytes = load(name)?;
                ensure(bytes.len() as u64 == rec.bytes, || {
                    format!("{name}: {} bytes, manifest says {}", bytes.len(), rec.bytes)
                })?;
                ensure(sha256_hex(&bytes) == rec.sha256, || format!("{name}: digest mismatch"))?;
                total += rec.bytes;
            }
            ensure(total == m.total_bytes, || {
                format!("total_bytes {} but files sum to {total}", m.total_bytes)
            })
        }),
    );
    report.record(
        "config_hash",
        manifest.as_ref().map_err(Clone::clone).and_then(|m| {
            let cfg = config.as_ref().map_err(Clone::clone)?;
            let h = cfg.hash().map_err(|e| e.to_string())?;
            ensure(h == m.config_hash, || {
                "recomputed config hash differs from manifest".into()
            })?;
            ensure(cfg.seed == m.seed, || "manifest seed differs from config".into())
        }),
    );

    let priors = parse(PRIORS_FILE).and_then(|v| {
        let f = serde_json::from_value(v).map_err(|e| format!("{PRIORS_FILE}: {e}"))?;
        SaliencePriorSet::from_file(&f).map_err(|e| e.to_string())
    });
    report.record(
        "priors_valid",
        priors.as_ref().map_err(Clone::clone).and_then(|p| {
            for (mode, mp) in p.modes() {
                for (class, b) in mp
                    .classes
                    .iter()
                    .map(|(c, b)| (c.as_str(), b))
                    .chain([("*", &mp.pooled)])
                {
                    ensure(b.alpha >= 1.0 && b.beta >= 1.0, || {
                        format!("{mode}/{class}: shape below 1")
                    })?;
                    ensure(b.alpha.fract() == 0.0 && b.beta.fract() == 0.0, || {
                        format!("{mode}/{class}: non-integer shape")
                    })?;
                }
            }
            Ok(())
        }),
    );

    let tables: std::result::Result<TablesFile, String> =
        parse(TABLES_FILE).and_then(|v| serde_json::from_value(v).map_err(|e| format!("{TABLES_FILE}: {e}")));
    let threshold = config
        .as_ref()
        .map(|c| c.prune_threshold)
        .unwrap_or(DEFAULT_PRUNE_THRESHOLD);
    report.record(
        "tables_pruned",
        tables.as_ref().map_err(Clone::clone).and_then(|t| {
            for (g, &c) in t.tables.c2.iter().chain(&t.tables.c3) {
                ensure(c >= threshold, || format!("{g} has count {c} below {threshold}"))?;
            }
            Ok(())
        }),
    );
    report.record(
        "tables_normalized",
        tables.as_ref().map_err(Clone::clone).and_then(|t| {
            for (c, p) in [(&t.tables.c2, &t.tables.p2), (&t.tables.c3, &t.tables.p3)] {
                ensure(c.keys().eq(p.keys()), || {
                    "probability keys differ from count keys".into()
                })?;
                let mut sums: BTreeMap<&[String], f64> = BTreeMap::new();
                for (g, v) in p {
                    *sums.entry(g.context()).or_default() += v;
                }
                for (ctx, s) in sums {
                    ensure((s - 1.0).abs() <= 1e-9, || {
                        format!("context {} sums to {s}", ctx.join("→"))
                    })?;
                }
            }
            Ok(())
        }),
    );
    let index = tables
        .as_ref()
        .map_err(Clone::clone)
        .and_then(|t| t.index().map_err(|e| e.to_string()));
    report.record(
        "index_complete",
        index.as_ref().map_err(Clone::clone).and_then(|idx| {
            let t = tables.as_ref().map_err(Clone::clone)?;
            let tax = config
                .as_ref()
                .map_err(Clone::clone)?
                .taxonomy()
                .map_err(|e| e.to_string())?;
            let expect = build_index(&tax, &t.tables.p2, &t.tables.p3);
            ensure(*idx == expect, || {
                "index does not list taxonomy, bigrams, trigrams in canonical order".into()
            })
        }),
    );

    let pseudo: std::result::Result<PseudoFile, String> =
        parse(PSEUDO_FILE).and_then(|v| serde_json::from_value(v).map_err(|e| format!("{PSEUDO_FILE}: {e}")));
    report.record(
        "pseudo_coverage",
        pseudo.as_ref().map_err(Clone::clone).and_then(|p| {
            let idx = index.as_ref().map_err(Clone::clone)?;
            for ex in &p.examples {
                let id = ex.example_id;
                let n = ex.token_count();
                let masked: Vec<usize> = (0..n).filter(|&i| ex.mask[i]).collect();
                ensure(masked.len() == (ex.rho * n as f64).floor() as usize, || {
                    format!("example {id}: popcount differs from floor(rho n)")
                })?;
                ensure(ex.path.covered_tokens() == masked, || {
                    format!("example {id}: path does not cover the mask in order")
                })?;
                for g in &ex.path.grams {
                    ensure(idx.get(&g.gram) == Some(g.index), || {
                        format!("example {id}: gram {} has stale index", g.gram)
                    })?;
                }
            }
            Ok(())
        }),
    );

    let shards = parse(SHARDS_FILE).and_then(|v| ShardSet::from_value(&v).map_err(|e| e.to_string()));
    let weights: std::result::Result<Vec<WeightRecord>, String> = load(WEIGHTS_FILE).and_then(|b| {
        String::from_utf8_lossy(&b)
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| format!("{WEIGHTS_FILE}: {e}")))
            .collect()
    });
    report.record(
        "weights_length_law",
        weights.as_ref().map_err(Clone::clone).and_then(|ws| {
            let p = pseudo.as_ref().map_err(Clone::clone)?;
            let s = shards.as_ref().map_err(Clone::clone)?;
            ensure(ws.len() == p.examples.len(), || {
                format!("{} weight records for {} examples", ws.len(), p.examples.len())
            })?;
            for (w, ex) in ws.iter().zip(&p.examples) {
                let id = ex.example_id;
                ensure(w.example_id == id, || {
                    format!("weight record {} out of order", w.example_id)
                })?;
                let m = s.for_example(id).map_err(|e| e.to_string())?;
                ensure(m.token_count() == ex.token_count(), || {
                    format!(
                        "example {id}: shard map covers {} tokens, mask {}",
                        m.token_count(),
                        ex.token_count()
                    )
                })?;
                ensure(w.weights.len() == m.shard_count(), || {
                    format!(
                        "example {id}: {} weights for {} shards",
                        w.weights.len(),
                        m.shard_count()
                    )
                })?;
                let mut at = 0;
                for k in m.counts() {
                    let run = &w.weights.0[at..at + k];
                    ensure(run.iter().all(|&x| x == run[0]), || {
                        format!("example {id}: shards of one token differ")
                    })?;
                    at += k;
                }
            }
            Ok(())
        }),
    );
    report.record(
        "weights_recomputed",
        weights.as_ref().map_err(Clone::clone).and_then(|ws| {
            let p = pseudo.as_ref().map_err(Clone::clone)?;
            let pr = priors.as_ref().map_err(Clone::clone)?;
            let s = shards.as_ref().map_err(Clone::clone)?;
            let cfg = config.as_ref().map_err(Clone::clone)?;
            let expect = project_weights(p, pr, s, cfg.w_base).map_err(|e| e.to_string())?;
            ensure(expect == *ws, || "weights differ from recomputation".into())?;
            ensure(ws.iter().flat_map(|w| &w.weights.0).all(|&x| x >= cfg.w_base), || {
                "weight below w_base".into()
            })
        }),
    );
    report
}

fn parse_map_any(path: &Path, text: &str) -> Result<TokenMap> {
    if path.extension().is_some_and(|e| e == "json") {
        crate::tokens::parse_token_map(text)
    } else {
        classify_source(text)
    }
}

/// A token map file, or a source file run through the built-in classifier.
pub fn load_map_any(path: &Path) -> Result<TokenMap> {
    if path.extension().is_some_and(|e| e == "json") {
        return load_token_map(path);
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    classify_source(&text).map_err(|e| Error::parse(path.display().to_string(), e))
}
