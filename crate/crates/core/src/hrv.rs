//! Traditional heart-rate-variability features.
//!
//! The vector has a fixed, versioned order (`FEATURE_NAMES`). All features
//! are computed on the raw intervals in milliseconds. Histogram-based
//! features anchor their bins at the shortest interval so that they do not
//! depend on an absolute offset.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const FEATURE_COUNT: usize = 23;

/// Bumped whenever a definition or the order below changes.
pub const FEATURE_SET_VERSION: &str = "hrv23-v1";

pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "mean_rr",
    "median_rr",
    "sdnn",
    "rmssd",
    "sdsd",
    "pnn20",
    "pnn50",
    "cv",
    "triangular_index",
    "tinn",
    "sd1",
    "sd2",
    "sd1_sd2",
    "apen",
    "sampen",
    "shannon_entropy",
    "renyi2_entropy",
    "sfi",
    "ctm",
    "corr_dim",
    "dfa_alpha1",
    "masd",
    "range",
];

/// Histogram bin width in ms.
pub const HIST_BIN_MS: f64 = 7.8125;
pub const ENTROPY_M: usize = 2;
pub const ENTROPY_R_FACTOR: f64 = 0.2;
/// CTM radius, in units of the largest absolute successive difference.
pub const CTM_RADIUS: f64 = 0.1;
/// SFI grid resolution per axis over the normalized scatter `[-1, 1]^2`.
pub const SFI_GRID: usize = 10;
/// Pair-distance quantiles whose radii are used for the correlation sum slope.
pub const CORR_DIM_QUANTILES: [f64; 5] = [0.02, 0.04, 0.08, 0.16, 0.32];
/// Pair distances at or below this fraction of the largest one count as
/// coincident points and never serve as a radius.
pub const CORR_DIM_COINCIDENT: f64 = 1e-9;
pub const DFA_SCALES: core::ops::RangeInclusive<usize> = 4..=11;
/// Fewer intervals than this are rejected outright.
pub const MIN_INTERVALS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HrvFeatures(pub [f64; FEATURE_COUNT]);

impl HrvFeatures {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        FEATURE_NAMES.iter().position(|n| *n == name).map(|i| self.0[i])
    }
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn median(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Population standard deviation. Values are taken relative to the first
/// one, which makes the result exactly shift-invariant for integer data.
pub fn sdnn(x: &[f64]) -> f64 {
    let Some(&origin) = x.first() else {
        return 0.0;
    };
    let rel: Vec<f64> = x.iter().map(|v| v - origin).collect();
    let m = mean(&rel);
    libm::sqrt(rel.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64)
}

fn diffs(x: &[f64]) -> Vec<f64> {
    x.windows(2).map(|w| w[1] - w[0]).collect()
}

pub fn rmssd(x: &[f64]) -> f64 {
    let d = diffs(x);
    libm::sqrt(d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64)
}

/// Standard deviation of successive differences.
pub fn sdsd(x: &[f64]) -> f64 {
    sdnn(&diffs(x))
}

/// Fraction of successive differences whose magnitude exceeds `threshold_ms`.
pub fn pnn(x: &[f64], threshold_ms: f64) -> f64 {
    let d = diffs(x);
    d.iter().filter(|v| libm::fabs(**v) > threshold_ms).count() as f64 / d.len() as f64
}

pub fn masd(x: &[f64]) -> f64 {
    let d = diffs(x);
    d.iter().map(|v| libm::fabs(*v)).sum::<f64>() / d.len() as f64
}

pub fn range(x: &[f64]) -> f64 {
    let (lo, hi) = min_max(x);
    hi - lo
}

fn min_max(x: &[f64]) -> (f64, f64) {
    x.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Bin counts with bin `k` covering `[min + k*w, min + (k+1)*w)`.
pub fn histogram(x: &[f64], bin_width: f64) -> Vec<usize> {
    let (lo, hi) = min_max(x);
    let n_bins = libm::floor((hi - lo) / bin_width) as usize + 1;
    let mut counts = vec![0usize; n_bins];
    for &v in x {
        let k = libm::floor((v - lo) / bin_width) as usize;
        counts[k.min(n_bins - 1)] += 1;
    }
    counts
}

/// Number of intervals divided by the height of the tallest histogram bin.
pub fn triangular_index(x: &[f64]) -> f64 {
    let h = histogram(x, HIST_BIN_MS);
    x.len() as f64 / *h.iter().max().unwrap_or(&1) as f64
}

/// Base width of the triangle that best fits the histogram in least squares.
/// The apex sits on the tallest bin; the feet `N < X < M` are searched
/// exhaustively over bin positions, including one position past each end.
pub fn tinn(x: &[f64]) -> f64 {
    let h = histogram(x, HIST_BIN_MS);
    let b = h.len() as i64;
    let (apex, &height) = h
        .iter()
        .enumerate()
        .fold((0, &0usize), |best, cur| if cur.1 > best.1 { cur } else { best });
    let xa = apex as i64;
    let y = height as f64;
    let mut best = (f64::INFINITY, 0i64, 0i64);
    for n in -1..xa {
        for m in (xa + 1)..=b {
            let mut err = 0.0;
            for (t, &c) in h.iter().enumerate() {
                let t = t as i64;
                let q = if t <= n || t >= m {
                    0.0
                } else if t <= xa {
                    y * (t - n) as f64 / (xa - n) as f64
                } else {
                    y * (m - t) as f64 / (m - xa) as f64
                };
                err += (c as f64 - q) * (c as f64 - q);
            }
            if err < best.0 {
                best = (err, n, m);
            }
        }
    }
    (best.2 - best.1) as f64 * HIST_BIN_MS
}

/// Poincare descriptors `(SD1, SD2)`.
pub fn poincare(x: &[f64]) -> (f64, f64) {
    let r = core::f64::consts::FRAC_1_SQRT_2;
    let across: Vec<f64> = x.windows(2).map(|w| (w[1] - w[0]) * r).collect();
    let along: Vec<f64> = x.windows(2).map(|w| (w[1] + w[0]) * r).collect();
    (sdnn(&across), sdnn(&along))
}

fn chebyshev_within(x: &[f64], i: usize, j: usize, m: usize, r: f64) -> bool {
    (0..m).all(|k| libm::fabs(x[i + k] - x[j + k]) <= r)
}

fn apen_phi(x: &[f64], m: usize, r: f64) -> f64 {
    let count = x.len() - m + 1;
    let mut acc = 0.0;
    for i in 0..count {
        let c = (0..count).filter(|&j| chebyshev_within(x, i, j, m, r)).count();
        acc += libm::log(c as f64 / count as f64);
    }
    acc / count as f64
}

/// Approximate entropy with self-matches counted, distances in max-norm and
/// matches at `distance <= r`.
pub fn apen(x: &[f64], m: usize, r: f64) -> f64 {
    apen_phi(x, m, r) - apen_phi(x, m + 1, r)
}

/// Sample entropy `-ln(A/B)` over the first `N - m` templates, self-matches
/// excluded. When no match is found at either length the value is the
/// largest finite one the data could produce, `ln(number of pairs)`.
pub fn sampen(x: &[f64], m: usize, r: f64) -> f64 {
    let count = x.len() - m;
    let (mut a, mut b) = (0usize, 0usize);
    for i in 0..count {
        for j in (i + 1)..count {
            if chebyshev_within(x, i, j, m, r) {
                b += 1;
                if libm::fabs(x[i + m] - x[j + m]) <= r {
                    a += 1;
                }
            }
        }
    }
    if a == 0 || b == 0 {
        let pairs = (count * (count - 1) / 2).max(1);
        libm::log(pairs as f64)
    } else {
        -libm::log(a as f64 / b as f64)
    }
}

fn probabilities(counts: &[usize]) -> Vec<f64> {
    let total = counts.iter().sum::<usize>() as f64;
    counts.iter().filter(|&&c| c > 0).map(|&c| c as f64 / total).collect()
}

/// Shannon entropy (nats) of the binned histogram.
pub fn shannon_entropy(x: &[f64]) -> f64 {
    -probabilities(&histogram(x, HIST_BIN_MS))
        .iter()
        .map(|p| p * libm::log(*p))
        .sum::<f64>()
}

/// Renyi entropy of order 2 (nats) of the binned histogram.
pub fn renyi2_entropy(x: &[f64]) -> f64 {
    -libm::log(probabilities(&histogram(x, HIST_BIN_MS)).iter().map(|p| p * p).sum::<f64>())
}

/// Points `(d[n], d[n+1])` of the successive-difference scatter, scaled by
/// the largest `|d|` so that they lie in `[-1, 1]^2`.
fn difference_scatter(x: &[f64]) -> Vec<(f64, f64)> {
    let d = diffs(x);
    let scale = d.iter().fold(0.0f64, |a, v| a.max(libm::fabs(*v)));
    let scale = if scale > 0.0 { scale } else { 1.0 };
    d.windows(2).map(|w| (w[0] / scale, w[1] / scale)).collect()
}

/// Central tendency measure: fraction of scatter points within `CTM_RADIUS`
/// of the origin.
pub fn ctm(x: &[f64]) -> f64 {
    let pts = difference_scatter(x);
    let inside = pts
        .iter()
        .filter(|(a, b)| libm::sqrt(a * a + b * b) < CTM_RADIUS)
        .count();
    inside as f64 / pts.len() as f64
}

/// Spatial filling index: mean squared occupancy probability over the cells
/// of a regular grid laid on the normalized scatter. Low values mean the
/// points spread over many cells.
pub fn sfi(x: &[f64]) -> f64 {
    let pts = difference_scatter(x);
    let g = SFI_GRID;
    let cell = |v: f64| -> usize {
        let k = libm::floor((v + 1.0) * 0.5 * g as f64) as i64;
        k.clamp(0, g as i64 - 1) as usize
    };
    let mut counts = vec![0usize; g * g];
    for &(a, b) in &pts {
        counts[cell(a) * g + cell(b)] += 1;
    }
    let n = pts.len() as f64;
    counts.iter().map(|&c| (c as f64 / n) * (c as f64 / n)).sum::<f64>() / (g * g) as f64
}

/// Least-squares slope of `ys` on `xs`.
fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let mx = mean(xs);
    let my = mean(ys);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Grassberger-Procaccia correlation dimension of the embedding
/// `(x[n], x[n+1])`. The correlation sum is evaluated at radii equal to the
/// pair-distance quantiles in `CORR_DIM_QUANTILES`; the estimate is the
/// slope of `ln C(r)` against `ln r`. Radii that fall on coincident points
/// are skipped.
pub fn correlation_dimension(x: &[f64]) -> Result<f64> {
    let pts: Vec<(f64, f64)> = x.windows(2).map(|w| (w[0], w[1])).collect();
    let mut dist = Vec::with_capacity(pts.len() * pts.len() / 2);
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            let (dx, dy) = (pts[i].0 - pts[j].0, pts[i].1 - pts[j].1);
            dist.push(libm::sqrt(dx * dx + dy * dy));
        }
    }
    if dist.is_empty() {
        return Err(Error::Feature("correlation dimension needs at least three intervals"));
    }
    dist.sort_by(f64::total_cmp);
    let total = dist.len() as f64;
    let floor = CORR_DIM_COINCIDENT * dist[dist.len() - 1];
    let mut log_r = Vec::new();
    let mut log_c = Vec::new();
    for &q in &CORR_DIM_QUANTILES {
        let idx = (libm::ceil(q * total) as usize).clamp(1, dist.len()) - 1;
        let r = dist[idx];
        if r <= floor || log_r.last().is_some_and(|&l| l >= libm::log(r)) {
            continue;
        }
        let within = dist.partition_point(|&d| d <= r);
        log_r.push(libm::log(r));
        log_c.push(libm::log(within as f64 / total));
    }
    if log_r.len() < 2 {
        return Err(Error::Feature("correlation dimension has fewer than two usable radii"));
    }
    Ok(slope(&log_r, &log_c))
}

/// Detrended fluctuation analysis short-term exponent over `DFA_SCALES`.
pub fn dfa_alpha1(x: &[f64]) -> Result<f64> {
    let m = mean(x);
    let mut profile = Vec::with_capacity(x.len());
    let mut acc = 0.0;
    for v in x {
        acc += v - m;
        profile.push(acc);
    }
    let mut log_n = Vec::new();
    let mut log_f = Vec::new();
    for n in DFA_SCALES {
        let windows = profile.len() / n;
        if windows == 0 {
            return Err(Error::Feature("series too short for DFA"));
        }
        let ts: Vec<f64> = (0..n).map(|t| t as f64).collect();
        let tm = mean(&ts);
        let stt: f64 = ts.iter().map(|t| (t - tm) * (t - tm)).sum();
        let mut rss = 0.0;
        for w in 0..windows {
            let seg = &profile[w * n..(w + 1) * n];
            let ym = mean(seg);
            let sty: f64 = ts.iter().zip(seg).map(|(t, y)| (t - tm) * (y - ym)).sum();
            let b = sty / stt;
            rss += ts
                .iter()
                .zip(seg)
                .map(|(t, y)| {
                    let e = y - (ym + b * (t - tm));
                    e * e
                })
                .sum::<f64>();
        }
        let f = libm::sqrt(rss / (windows * n) as f64);
        if !(f > 0.0) {
            return Err(Error::Feature("zero fluctuation in DFA"));
        }
        log_n.push(libm::log(n as f64));
        log_f.push(libm::log(f));
    }
    Ok(slope(&log_n, &log_f))
}

/// The full feature vector in `FEATURE_NAMES` order.
pub fn compute_features(intervals: &[u32]) -> Result<HrvFeatures> {
    if intervals.len() < MIN_INTERVALS {
        return Err(Error::Feature("too few intervals"));
    }
    let x: Vec<f64> = intervals.iter().map(|&v| v as f64).collect();
    let sd = sdnn(&x);
    if !(sd > 0.0) {
        return Err(Error::Feature("zero SDNN"));
    }
    let mu = mean(&x);
    let (sd1, sd2) = poincare(&x);
    if !(sd2 > 0.0) {
        return Err(Error::Feature("zero SD2"));
    }
    let r = ENTROPY_R_FACTOR * sd;
    let f = [
        mu,
        median(&x),
        sd,
        rmssd(&x),
        sdsd(&x),
        pnn(&x, 20.0),
        pnn(&x, 50.0),
        sd / mu,
        triangular_index(&x),
        tinn(&x),
        sd1,
        sd2,
        sd1 / sd2,
        apen(&x, ENTROPY_M, r),
        sampen(&x, ENTROPY_M, r),
        shannon_entropy(&x),
        renyi2_entropy(&x),
        sfi(&x),
        ctm(&x),
        correlation_dimension(&x)?,
        dfa_alpha1(&x)?,
        masd(&x),
        range(&x),
    ];
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::Feature("non-finite feature"));
    }
    Ok(HrvFeatures(f))
}
