//! RR-interval segments: validation, the two-rule quality filter, window
//! extraction from beat annotations, a synthetic AR(1) cohort generator and
//! patient-stratified fold assignment.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Length of one analysis window.
pub const SEGMENT_SPAN_MS: u64 = 60_000;
/// Segments with fewer distinct interval values are rejected.
pub const MIN_UNIQUE_INTERVALS: usize = 64;
pub const MIN_HEART_RATE: f64 = 30.0;
pub const MAX_HEART_RATE: f64 = 180.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Label {
    Normal,
    Positive,
}

impl Label {
    pub fn from_u8(v: u8) -> Option<Label> {
        match v {
            0 => Some(Label::Normal),
            1 => Some(Label::Positive),
            _ => None,
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            Label::Normal => 0,
            Label::Positive => 1,
        }
    }

    pub fn as_f64(self) -> f64 {
        self.as_u8() as f64
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }
}

/// One labeled window of inter-beat intervals (milliseconds).
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RrSegment {
    pub patient_id: String,
    pub label: Label,
    pub segment_id: String,
    pub intervals: Vec<u32>,
}

impl RrSegment {
    pub fn new(
        patient_id: impl Into<String>,
        label: Label,
        segment_id: impl Into<String>,
        intervals: Vec<u32>,
    ) -> Result<Self> {
        let seg = RrSegment {
            patient_id: patient_id.into(),
            label,
            segment_id: segment_id.into(),
            intervals,
        };
        seg.validate()?;
        Ok(seg)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Error::Validation {
            segment: self.segment_id.clone(),
            msg,
        };
        if self.intervals.is_empty() {
            return Err(invalid("no intervals".to_string()));
        }
        if let Some(pos) = self.intervals.iter().position(|&r| r == 0) {
            return Err(invalid(format!("interval {pos} is not positive")));
        }
        let longest = *self.intervals.iter().max().unwrap_or(&0) as u64;
        if self.total_ms() > SEGMENT_SPAN_MS + longest {
            return Err(invalid(format!(
                "intervals sum to {} ms, more than one {SEGMENT_SPAN_MS} ms window",
                self.total_ms()
            )));
        }
        Ok(())
    }

    pub fn total_ms(&self) -> u64 {
        self.intervals.iter().map(|&r| r as u64).sum()
    }

    pub fn mean_ms(&self) -> f64 {
        self.total_ms() as f64 / self.intervals.len() as f64
    }

    pub fn intervals_f64(&self) -> Vec<f64> {
        self.intervals.iter().map(|&r| r as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatientInfo {
    pub label: Label,
    pub segment_ids: Vec<String>,
}

/// Validated segments plus the derived per-patient index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Dataset {
    segments: Vec<RrSegment>,
    patients: BTreeMap<String, PatientInfo>,
}

impl Dataset {
    pub fn new(segments: Vec<RrSegment>) -> Result<Self> {
        let mut patients: BTreeMap<String, PatientInfo> = BTreeMap::new();
        let mut seen = BTreeMap::new();
        for seg in &segments {
            seg.validate()?;
            if seen.insert(seg.segment_id.as_str(), ()).is_some() {
                return Err(Error::Integrity(format!(
                    "duplicate segment id {}",
                    seg.segment_id
                )));
            }
            let entry = patients
                .entry(seg.patient_id.clone())
                .or_insert_with(|| PatientInfo {
                    label: seg.label,
                    segment_ids: Vec::new(),
                });
            if entry.label != seg.label {
                return Err(Error::Integrity(format!(
                    "patient {} has segments labeled {} and {}",
                    seg.patient_id,
                    entry.label.as_u8(),
                    seg.label.as_u8()
                )));
            }
            entry.segment_ids.push(seg.segment_id.clone());
        }
        Ok(Dataset { segments, patients })
    }

    /// Parses the line format `patient_id,label,segment_id,i1 i2 ...`.
    /// Blank lines and lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut segments = Vec::new();
        let mut labels: BTreeMap<String, (Label, usize)> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let seg = parse_line(trimmed, line)?;
            match labels.get(&seg.patient_id) {
                Some(&(label, first)) if label != seg.label => {
                    return Err(Error::Integrity(format!(
                        "line {line}: patient {} labeled {} but line {first} says {}",
                        seg.patient_id,
                        seg.label.as_u8(),
                        label.as_u8()
                    )));
                }
                Some(_) => {}
                None => {
                    labels.insert(seg.patient_id.clone(), (seg.label, line));
                }
            }
            segments.push(seg);
        }
        Dataset::new(segments)
    }

    /// Renders the dataset in the line format read by [`Dataset::parse`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for seg in &self.segments {
            out.push_str(&format_line(seg));
            out.push('\n');
        }
        out
    }

    pub fn segments(&self) -> &[RrSegment] {
        &self.segments
    }

    pub fn into_segments(self) -> Vec<RrSegment> {
        self.segments
    }

    pub fn patients(&self) -> &BTreeMap<String, PatientInfo> {
        &self.patients
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn label_of(&self, patient_id: &str) -> Option<Label> {
        self.patients.get(patient_id).map(|p| p.label)
    }

    /// Segments whose patient satisfies `keep`, in dataset order.
    pub fn select<F: Fn(&str) -> bool>(&self, keep: F) -> Vec<&RrSegment> {
        self.segments
            .iter()
            .filter(|s| keep(&s.patient_id))
            .collect()
    }

    /// Splits into segments accepted by [`filter_segment`] and the rejected
    /// ones with their reasons.
    pub fn partition_filtered(&self) -> (Vec<&RrSegment>, Vec<(&RrSegment, Rejection)>) {
        let mut accepted = Vec::new();
        let mut rejected = Vec::new();
        for seg in &self.segments {
            match filter_segment(&seg.intervals) {
                Ok(()) => accepted.push(seg),
                Err(r) => rejected.push((seg, r)),
            }
        }
        (accepted, rejected)
    }
}

fn parse_line(line: &str, number: usize) -> Result<RrSegment> {
    let parse_err = |msg: String| Error::Parse { line: number, msg };
    let mut fields = line.splitn(4, ',');
    let patient = fields.next().unwrap_or("").trim();
    let label = fields
        .next()
        .ok_or_else(|| parse_err("missing label field".to_string()))?
        .trim();
    let segment = fields
        .next()
        .ok_or_else(|| parse_err("missing segment id field".to_string()))?
        .trim();
    let intervals = fields
        .next()
        .ok_or_else(|| parse_err("missing interval field".to_string()))?;
    if patient.is_empty() || segment.is_empty() {
        return Err(parse_err("empty patient or segment id".to_string()));
    }
    let label = label
        .parse::<u8>()
        .ok()
        .and_then(Label::from_u8)
        .ok_or_else(|| parse_err(format!("label must be 0 or 1, got {label:?}")))?;
    let mut values = Vec::new();
    for tok in intervals.split_whitespace() {
        let v: i64 = tok
            .parse()
            .map_err(|_| parse_err(format!("interval {tok:?} is not an integer")))?;
        if v <= 0 {
            return Err(Error::Validation {
                segment: segment.to_string(),
                msg: format!("line {number}: interval {v} is not positive"),
            });
        }
        let v = u32::try_from(v).map_err(|_| parse_err(format!("interval {v} out of range")))?;
        values.push(v);
    }
    RrSegment::new(patient, label, segment, values).map_err(|e| match e {
        Error::Validation { segment, msg } => Error::Validation {
            segment,
            msg: format!("line {number}: {msg}"),
        },
        other => other,
    })
}

fn format_line(seg: &RrSegment) -> String {
    let mut s = format!("{},{},{},", seg.patient_id, seg.label.as_u8(), seg.segment_id);
    for (i, r) in seg.intervals.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        s.push_str(&r.to_string());
    }
    s
}

/// Why [`filter_segment`] rejected a segment. Each field is set when its
/// rule fired and carries the offending value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rejection {
    /// Rule (a): distinct interval count below [`MIN_UNIQUE_INTERVALS`].
    pub unique_values: Option<usize>,
    /// Rule (b): apparent heart rate outside `[30, 180]` beats per minute.
    pub heart_rate: Option<f64>,
}

impl Rejection {
    pub fn rule_ids(&self) -> Vec<&'static str> {
        let mut ids = Vec::new();
        if self.unique_values.is_some() {
            ids.push("unique-values");
        }
        if self.heart_rate.is_some() {
            ids.push("heart-rate");
        }
        ids
    }
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut sep = "";
        if let Some(n) = self.unique_values {
            write!(f, "unique-values: {n} < {MIN_UNIQUE_INTERVALS}")?;
            sep = "; ";
        }
        if let Some(hr) = self.heart_rate {
            write!(
                f,
                "{sep}heart-rate: {hr:.2} outside [{MIN_HEART_RATE}, {MAX_HEART_RATE}]"
            )?;
        }
        Ok(())
    }
}

pub fn unique_count(intervals: &[u32]) -> usize {
    let mut sorted = intervals.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    sorted.len()
}

/// Apparent heart rate in beats per minute, `60000 / mean(RR)`.
pub fn apparent_heart_rate(intervals: &[u32]) -> f64 {
    let total: u64 = intervals.iter().map(|&r| r as u64).sum();
    60_000.0 * intervals.len() as f64 / total as f64
}

/// The two quality rules: at least 64 distinct interval values and an
/// apparent heart rate within `[30, 180]`.
pub fn filter_segment(intervals: &[u32]) -> core::result::Result<(), Rejection> {
    let unique = unique_count(intervals);
    let hr = apparent_heart_rate(intervals);
    let rejection = Rejection {
        unique_values: (unique < MIN_UNIQUE_INTERVALS).then_some(unique),
        heart_rate: (!(MIN_HEART_RATE..=MAX_HEART_RATE).contains(&hr)).then_some(hr),
    };
    if rejection.unique_values.is_none() && rejection.heart_rate.is_none() {
        Ok(())
    } else {
        Err(rejection)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtractConfig {
    pub n_segments: usize,
    pub duration_ms: u64,
    pub seed: u64,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            n_segments: 100,
            duration_ms: SEGMENT_SPAN_MS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub segments: Vec<RrSegment>,
    /// Segments requested but not produced within the retry budget.
    pub shortfall: usize,
    pub rejected_draws: usize,
}

/// Successive differences of the beats falling in `[start, start + duration)`.
pub fn window_intervals(beat_times: &[u64], start: u64, duration_ms: u64) -> Vec<u32> {
    let lo = beat_times.partition_point(|&t| t < start);
    let hi = beat_times.partition_point(|&t| t < start + duration_ms);
    beat_times[lo..hi]
        .windows(2)
        .map(|w| (w[1] - w[0]) as u32)
        .collect()
}

/// Draws random windows from one recording, keeping those that pass the
/// quality filter. At most `10 * n_segments` windows are drawn.
pub fn extract_segments(
    beat_times: &[u64],
    cfg: &ExtractConfig,
    patient_id: &str,
    label: Label,
) -> Result<Extraction> {
    if cfg.n_segments == 0 {
        return Ok(Extraction {
            segments: Vec::new(),
            shortfall: 0,
            rejected_draws: 0,
        });
    }
    if beat_times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Argument("beat times must be strictly ascending".to_string()));
    }
    let (first, last) = match (beat_times.first(), beat_times.last()) {
        (Some(&f), Some(&l)) => (f, l),
        _ => {
            return Err(Error::Span {
                span_ms: 0,
                window_ms: cfg.duration_ms,
            })
        }
    };
    if last - first < cfg.duration_ms {
        return Err(Error::Span {
            span_ms: last - first,
            window_ms: cfg.duration_ms,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let budget = 10 * cfg.n_segments;
    let mut segments = Vec::with_capacity(cfg.n_segments);
    let mut rejected_draws = 0;
    for _ in 0..budget {
        if segments.len() == cfg.n_segments {
            break;
        }
        let start = rng.random_range(first..=last - cfg.duration_ms);
        let intervals = window_intervals(beat_times, start, cfg.duration_ms);
        if intervals.is_empty() || filter_segment(&intervals).is_err() {
            rejected_draws += 1;
            continue;
        }
        let id = format!("{patient_id}-{:03}", segments.len());
        segments.push(RrSegment::new(patient_id, label, id, intervals)?);
    }
    Ok(Extraction {
        shortfall: cfg.n_segments - segments.len(),
        segments,
        rejected_draws,
    })
}

/// Stationary AR(1) process in RR space: `rr = mean + x`,
/// `x' = phi * x + sigma * e` with standard normal `e`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ArProcess {
    pub mean_ms: f64,
    pub sigma_ms: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SynthConfig {
    pub normal: ArProcess,
    /// Reduced-variability class.
    pub positive: ArProcess,
    /// Candidate series drawn per emitted segment before giving up.
    pub max_attempts_per_segment: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            normal: ArProcess {
                mean_ms: 850.0,
                sigma_ms: 60.0,
                phi: 0.5,
            },
            positive: ArProcess {
                mean_ms: 820.0,
                sigma_ms: 15.0,
                phi: 0.9,
            },
            max_attempts_per_segment: 20_000,
        }
    }
}

impl ArProcess {
    fn validate(&self) -> Result<()> {
        if !(self.mean_ms > 0.0 && self.mean_ms.is_finite()) {
            return Err(Error::Config(format!("mean {} must be positive", self.mean_ms)));
        }
        if !(self.sigma_ms >= 0.0 && self.sigma_ms.is_finite()) {
            return Err(Error::Config(format!("sigma {} must be non-negative", self.sigma_ms)));
        }
        if !(self.phi > -1.0 && self.phi < 1.0) {
            return Err(Error::Config(format!("phi {} must lie in (-1, 1)", self.phi)));
        }
        Ok(())
    }

    /// Fills `out` with one window of rounded intervals. Returns `false` if a
    /// draw was not positive.
    pub fn draw(&self, rng: &mut ChaCha8Rng, out: &mut Vec<u32>) -> bool {
        out.clear();
        let stationary_sd = self.sigma_ms / libm::sqrt(1.0 - self.phi * self.phi);
        let z: f64 = StandardNormal.sample(rng);
        let mut x = stationary_sd * z;
        let mut total = 0u64;
        loop {
            let r = libm::round(self.mean_ms + x);
            if r < 1.0 {
                return false;
            }
            let r = r as u64;
            if total + r > SEGMENT_SPAN_MS {
                return !out.is_empty();
            }
            total += r;
            out.push(r as u32);
            let e: f64 = StandardNormal.sample(rng);
            x = self.phi * x + self.sigma_ms * e;
        }
    }
}

/// Two-class synthetic cohort. Candidate windows failing the quality filter
/// are redrawn, so every emitted segment passes it.
pub fn synth_dataset(
    patients_per_class: usize,
    segments_per_patient: usize,
    cfg: &SynthConfig,
    seed: u64,
) -> Result<Dataset> {
    if patients_per_class == 0 || segments_per_patient == 0 {
        return Err(Error::Argument("patient and segment counts must be at least 1".to_string()));
    }
    cfg.normal.validate()?;
    cfg.positive.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut segments = Vec::with_capacity(2 * patients_per_class * segments_per_patient);
    let mut buf = Vec::new();
    for (label, process, prefix) in [
        (Label::Normal, &cfg.normal, "N"),
        (Label::Positive, &cfg.positive, "P"),
    ] {
        for p in 0..patients_per_class {
            let patient = format!("{prefix}{p:03}");
            for s in 0..segments_per_patient {
                let mut accepted = false;
                for _ in 0..cfg.max_attempts_per_segment {
                    if process.draw(&mut rng, &mut buf) && filter_segment(&buf).is_ok() {
                        accepted = true;
                        break;
                    }
                }
                if !accepted {
                    return Err(Error::Config(format!(
                        "class {} process (mean {}, sigma {}, phi {}) produced no segment passing \
                         the quality filter in {} attempts",
                        label.as_u8(),
                        process.mean_ms,
                        process.sigma_ms,
                        process.phi,
                        cfg.max_attempts_per_segment
                    )));
                }
                segments.push(RrSegment {
                    patient_id: patient.clone(),
                    label,
                    segment_id: format!("{patient}-{s:03}"),
                    intervals: buf.clone(),
                });
            }
        }
    }
    Dataset::new(segments)
}

/// Patient to fold mapping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub k: usize,
    pub fold_of_patient: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, patient_id: &str) -> Option<usize> {
        self.fold_of_patient.get(patient_id).copied()
    }

    pub fn patients_in(&self, fold: usize) -> Vec<&str> {
        self.fold_of_patient
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(p, _)| p.as_str())
            .collect()
    }

    pub fn is_test(&self, patient_id: &str, fold: usize) -> bool {
        self.fold_of(patient_id) == Some(fold)
    }
}

/// Shuffles patients within each class and deals them round-robin over `k`
/// folds. Dealing continues across classes, so fold sizes differ by at most
/// one both per class and overall.
pub fn stratified_folds(ds: &Dataset, k: usize, seed: u64) -> Result<FoldAssignment> {
    let n = ds.patients().len();
    if k < 2 {
        return Err(Error::Argument(format!("k = {k}, need at least 2 folds")));
    }
    if k > n {
        return Err(Error::Argument(format!("k = {k} exceeds patient count {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of_patient = BTreeMap::new();
    let mut next = 0;
    for label in [Label::Normal, Label::Positive] {
        let mut ids: Vec<&String> = ds
            .patients()
            .iter()
            .filter(|(_, info)| info.label == label)
            .map(|(id, _)| id)
            .collect();
        ids.shuffle(&mut rng);
        for id in ids {
            fold_of_patient.insert(id.clone(), next % k);
            next += 1;
        }
    }
    Ok(FoldAssignment { k, fold_of_patient })
}
