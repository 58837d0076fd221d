//! Raw gaze streams: artifact filtering, I-DT fixation segmentation and
//! saccade derivation.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack for comparing millisecond timestamps parsed from text.
const TIME_EPS_MS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Validity {
    Valid,
    Blink,
    Offscreen,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeSample {
    pub timestamp: f64,
    pub x: f64,
    pub y: f64,
    pub validity: Validity,
}

impl GazeSample {
    pub fn valid(timestamp: f64, x: f64, y: f64) -> Self {
        Self {
            timestamp,
            x,
            y,
            validity: Validity::Valid,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionGeometry {
    pub sample_rate: f64,
    pub pixels_per_degree: f64,
    pub screen_w: f64,
    pub screen_h: f64,
}

impl SessionGeometry {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("sample_rate", self.sample_rate),
            ("pixels_per_degree", self.pixels_per_degree),
            ("screen_w", self.screen_w),
            ("screen_h", self.screen_h),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!(
                    "geometry field {name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn sample_period_ms(&self) -> f64 {
        1000.0 / self.sample_rate
    }
}

impl Default for SessionGeometry {
    fn default() -> Self {
        Self {
            sample_rate: 120.0,
            pixels_per_degree: 30.0,
            screen_w: 1920.0,
            screen_h: 1080.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fixation {
    pub start: f64,
    pub duration: f64,
    pub centroid_x: f64,
    pub centroid_y: f64,
    pub sample_count: usize,
}

impl Fixation {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Saccade {
    pub from_fixation: usize,
    pub to_fixation: usize,
    pub duration: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    pub pixels_per_degree: f64,
    /// Samples moving faster than this (deg/s) relative to the last kept
    /// sample are treated as noise.
    pub max_velocity_deg_s: f64,
}

impl FilterConfig {
    pub fn new(geom: &SessionGeometry) -> Self {
        Self {
            pixels_per_degree: geom.pixels_per_degree,
            max_velocity_deg_s: 1000.0,
        }
    }
}

/// Drop non-valid samples and velocity outliers.
///
/// Velocity is measured against the most recently kept sample, so an isolated
/// spike is removed without also discarding the sample that follows it.
pub fn filter_artifacts(samples: &[GazeSample], cfg: &FilterConfig) -> Vec<GazeSample> {
    let mut kept: Vec<GazeSample> = Vec::with_capacity(samples.len());
    for s in samples {
        if s.validity != Validity::Valid || !s.x.is_finite() || !s.y.is_finite() {
            continue;
        }
        if let Some(prev) = kept.last() {
            let dt_s = (s.timestamp - prev.timestamp) / 1000.0;
            let dist_deg = (s.x - prev.x).hypot(s.y - prev.y) / cfg.pixels_per_degree;
            if dt_s > 0.0 && dist_deg / dt_s > cfg.max_velocity_deg_s {
                continue;
            }
        }
        kept.push(*s);
    }
    kept
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdtParams {
    pub dispersion_deg: f64,
    pub min_duration_ms: f64,
}

impl Default for IdtParams {
    fn default() -> Self {
        Self {
            dispersion_deg: 1.0,
            min_duration_ms: 100.0,
        }
    }
}

/// Manhattan dispersion `(max x - min x) + (max y - min y)` of a window.
pub fn dispersion(window: &[GazeSample]) -> f64 {
    let mut bounds = Bounds::new(&window[0]);
    for s in &window[1..] {
        bounds.include(s);
    }
    bounds.dispersion()
}

#[derive(Debug, Clone, Copy)]
struct Bounds {
    min_x: f64,
    max_x: f64,
    min_y: f64,
    max_y: f64,
}

impl Bounds {
    fn new(s: &GazeSample) -> Self {
        Self {
            min_x: s.x,
            max_x: s.x,
            min_y: s.y,
            max_y: s.y,
        }
    }

    fn include(&mut self, s: &GazeSample) {
        self.min_x = self.min_x.min(s.x);
        self.max_x = self.max_x.max(s.x);
        self.min_y = self.min_y.min(s.y);
        self.max_y = self.max_y.max(s.y);
    }

    fn with(mut self, s: &GazeSample) -> Self {
        self.include(s);
        self
    }

    fn dispersion(&self) -> f64 {
        (self.max_x - self.min_x) + (self.max_y - self.min_y)
    }
}

/// Dispersion-threshold (I-DT) fixation identification.
///
/// A window covering `min_duration_ms` is opened at the current sample. If
/// its dispersion exceeds the threshold the first sample is dropped and the
/// window re-opened; otherwise the window grows until the next sample would
/// break the threshold, the fixation is emitted, and scanning restarts at the
/// breaking sample.
pub fn segment_fixations(samples: &[GazeSample], geom: &SessionGeometry, params: &IdtParams) -> Vec<Fixation> {
    let threshold = params.dispersion_deg * geom.pixels_per_degree;
    let n = samples.len();
    let mut fixations = Vec::new();
    let mut start = 0;
    // `end` marks the first sample whose offset from `start` reaches the
    // minimum duration; it only ever moves forward.
    let mut end = 0;
    while start < n {
        end = end.max(start);
        while end < n && samples[end].timestamp - samples[start].timestamp < params.min_duration_ms - TIME_EPS_MS {
            end += 1;
        }
        if end >= n {
            break;
        }
        let window = &samples[start..=end];
        if dispersion(window) > threshold {
            start += 1;
            continue;
        }
        let mut bounds = Bounds::new(&window[0]);
        for s in &window[1..] {
            bounds.include(s);
        }
        while end + 1 < n && bounds.with(&samples[end + 1]).dispersion() <= threshold {
            end += 1;
            bounds.include(&samples[end]);
        }
        fixations.push(summarize(&samples[start..=end]));
        start = end + 1;
    }
    fixations
}

fn summarize(members: &[GazeSample]) -> Fixation {
    let count = members.len();
    let (sx, sy) = members.iter().fold((0.0, 0.0), |(ax, ay), s| (ax + s.x, ay + s.y));
    let first = members[0].timestamp;
    let last = members[count - 1].timestamp;
    Fixation {
        start: first,
        duration: last - first,
        centroid_x: sx / count as f64,
        centroid_y: sy / count as f64,
        sample_count: count,
    }
}

pub fn derive_saccades(fixations: &[Fixation]) -> Vec<Saccade> {
    fixations
        .windows(2)
        .enumerate()
        .map(|(i, pair)| Saccade {
            from_fixation: i,
            to_fixation: i + 1,
            duration: pair[1].start - pair[0].end(),
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleRecord {
    timestamp_ms: f64,
    x_px: Option<f64>,
    y_px: Option<f64>,
    validity: Validity,
}

/// Read a gaze stream (`timestamp_ms,x_px,y_px,validity`).
pub fn read_samples<R: Read>(reader: R) -> Result<Vec<GazeSample>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::parse("gaze csv", e))?;
    let expected = ["timestamp_ms", "x_px", "y_px", "validity"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::parse(
            "gaze csv",
            format!("expected header {}", expected.join(",")),
        ));
    }
    let mut out: Vec<GazeSample> = Vec::new();
    for (row, rec) in rdr.deserialize::<SampleRecord>().enumerate() {
        let rec = rec.map_err(|e| Error::parse("gaze csv", e))?;
        if let Some(prev) = out.last() {
            if rec.timestamp_ms <= prev.timestamp {
                return Err(Error::invalid(format!(
                    "gaze csv row {}: timestamp {} does not increase",
                    row + 2,
                    rec.timestamp_ms
                )));
            }
        }
        let x = rec.x_px.unwrap_or(f64::NAN);
        let y = rec.y_px.unwrap_or(f64::NAN);
        if rec.validity == Validity::Valid && !(x.is_finite() && y.is_finite()) {
            return Err(Error::invalid(format!(
                "gaze csv row {}: valid sample without finite coordinates",
                row + 2
            )));
        }
        out.push(GazeSample {
            timestamp: rec.timestamp_ms,
            x,
            y,
            validity: rec.validity,
        });
    }
    Ok(out)
}

pub fn load_samples(path: &Path) -> Result<Vec<GazeSample>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_samples(file).map_err(|e| match e {
        Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
        other => other,
    })
}

pub fn write_samples<W: Write>(writer: W, samples: &[GazeSample]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for s in samples {
        let valid = s.validity == Validity::Valid;
        wtr.serialize(SampleRecord {
            timestamp_ms: s.timestamp,
            x_px: valid.then_some(s.x),
            y_px: valid.then_some(s.y),
            validity: s.validity,
        })
        .map_err(|e| Error::Internal(e.to_string()))?;
    }
    wtr.flush().map_err(|e| Error::Internal(e.to_string()))?;
    Ok(())
}

/// Output of `segment`: fixations and the saccades between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    pub fixations: Vec<Fixation>,
    pub saccades: Vec<Saccade>,
}

impl Segmentation {
    pub fn from_samples(
        samples: &[GazeSample],
        geom: &SessionGeometry,
        filter: &FilterConfig,
        params: &IdtParams,
    ) -> Self {
        let clean = filter_artifacts(samples, filter);
        let fixations = segment_fixations(&clean, geom, params);
        let saccades = derive_saccades(&fixations);
        Self { fixations, saccades }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PERIOD: f64 = 1000.0 / 120.0;

    fn geom() -> SessionGeometry {
        SessionGeometry {
            sample_rate: 120.0,
            pixels_per_degree: 40.0,
            screen_w: 1920.0,
            screen_h: 1080.0,
        }
    }

    fn constant(n: usize, t0: f64, x: f64, y: f64) -> Vec<GazeSample> {
        (0..n)
            .map(|i| GazeSample::valid(t0 + i as f64 * PERIOD, x, y))
            .collect()
    }

    #[test]
    fn clean_stream_passes_filter() {
        let s = constant(10, 0.0, 100.0, 100.0);
        assert_eq!(filter_artifacts(&s, &FilterConfig::new(&geom())).len(), 10);
    }

    #[test]
    fn blink_samples_are_dropped() {
        let mut s = constant(10, 0.0, 100.0, 100.0);
        s[3].validity = Validity::Blink;
        s[7].validity = Validity::Offscreen;
        assert_eq!(filter_artifacts(&s, &FilterConfig::new(&geom())).len(), 8);
    }

    #[test]
    fn velocity_spike_is_dropped() {
        // Sample 5 jumps 1666.67 px = 41.67 deg in 8.333 ms: 5000 deg/s.
        let mut s = constant(10, 0.0, 100.0, 100.0);
        s[5].x = 100.0 + 5000.0 * (PERIOD / 1000.0) * 40.0;
        let v = (s[5].x - 100.0) / 40.0 / (PERIOD / 1000.0);
        assert!((v - 5000.0).abs() < 1e-9);
        let out = filter_artifacts(&s, &FilterConfig::new(&geom()));
        assert_eq!(out.len(), 9);
        assert!(out.iter().all(|g| g.x == 100.0));
        // The sample after the spike survives because velocity is taken
        // against the last kept sample.
        assert!(out.iter().any(|g| g.timestamp == s[6].timestamp));
    }

    #[test]
    fn empty_stream_filters_to_empty() {
        assert!(filter_artifacts(&[], &FilterConfig::new(&geom())).is_empty());
    }

    #[test]
    fn constant_stream_is_one_fixation() {
        let s = constant(30, 0.0, 500.0, 500.0);
        let f = segment_fixations(&s, &geom(), &IdtParams::default());
        assert_eq!(f.len(), 1);
        assert!((f[0].duration - 29.0 * PERIOD).abs() < 1e-9);
        assert!((f[0].duration - 241.666_666).abs() < 1e-3);
        assert_eq!((f[0].centroid_x, f[0].centroid_y), (500.0, 500.0));
        assert_eq!(f[0].sample_count, 30);
    }

    #[test]
    fn two_clusters_with_transit() {
        // 200 ms clusters at 10 deg separation (400 px), 3 transit samples.
        let per_cluster = 25; // 24 intervals = 200 ms
        let mut s = constant(per_cluster, 0.0, 100.0, 300.0);
        let mut t = s.last().unwrap().timestamp;
        for k in 1..=3 {
            t += PERIOD;
            s.push(GazeSample::valid(t, 100.0 + 100.0 * k as f64, 300.0));
        }
        s.extend(constant(per_cluster, t + PERIOD, 500.0, 300.0));
        let f = segment_fixations(&s, &geom(), &IdtParams::default());
        assert_eq!(f.len(), 2);
        assert_eq!(f[0].centroid_x, 100.0);
        assert_eq!(f[1].centroid_x, 500.0);
        assert_eq!(f[0].sample_count, per_cluster);
        assert_eq!(f[1].sample_count, per_cluster);
        let sac = derive_saccades(&f);
        assert_eq!(sac.len(), 1);
        assert!((sac[0].duration - 4.0 * PERIOD).abs() < 1e-9);
    }

    #[test]
    fn short_stream_has_no_fixation() {
        let s = constant(7, 0.0, 10.0, 10.0); // 50 ms
        assert!(segment_fixations(&s, &geom(), &IdtParams::default()).is_empty());
        assert!(segment_fixations(&[], &geom(), &IdtParams::default()).is_empty());
    }

    #[test]
    fn dispersion_boundary_is_inclusive() {
        // Manhattan span of exactly 1 deg (40 px) is still a fixation.
        let mut s = constant(20, 0.0, 0.0, 0.0);
        s[4].x = 25.0;
        s[9].y = 15.0;
        assert_eq!(dispersion(&s), 40.0);
        assert_eq!(segment_fixations(&s, &geom(), &IdtParams::default()).len(), 1);
        s[9].y = 15.5;
        let f = segment_fixations(&s, &geom(), &IdtParams::default());
        // Leading samples are dropped until the window no longer holds both
        // outliers, so the fixation starts at sample 5.
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].start, s[5].timestamp);
        assert_eq!(f[0].sample_count, 15);
    }

    #[test]
    fn saccade_gap_arithmetic() {
        let a = Fixation {
            start: 100.0,
            duration: 200.0,
            centroid_x: 0.0,
            centroid_y: 0.0,
            sample_count: 25,
        };
        let b = Fixation { start: 345.0, ..a };
        let s = derive_saccades(&[a, b]);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].duration, 45.0);
        assert_eq!((s[0].from_fixation, s[0].to_fixation), (0, 1));
        assert!(derive_saccades(&[a]).is_empty());
        assert_eq!(derive_saccades(&[a; 5]).len(), 4);
    }

    #[test]
    fn csv_round_trip_and_validation() {
        let mut s = constant(3, 0.0, 1.5, 2.5);
        s[1].validity = Validity::Blink;
        let mut buf = Vec::new();
        write_samples(&mut buf, &s).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("timestamp_ms,x_px,y_px,validity\n"));
        let back = read_samples(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[1].validity, Validity::Blink);
        assert_eq!(back[2], s[2]);

        let bad = "timestamp_ms,x_px,y_px,validity\n0,1,1,valid\n0,1,1,valid\n";
        assert!(matches!(read_samples(bad.as_bytes()), Err(Error::Invalid(_))));
        let bad = "t,x,y,v\n0,1,1,valid\n";
        assert!(matches!(read_samples(bad.as_bytes()), Err(Error::Parse { .. })));
    }

    #[test]
    fn geometry_must_be_positive() {
        assert!(geom().validate().is_ok());
        let g = SessionGeometry {
            pixels_per_degree: 0.0,
            ..geom()
        };
        assert!(g.validate().is_err());
    }
}
