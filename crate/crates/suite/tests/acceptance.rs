//! Acceptance suite: prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails. Every tolerance is a constant below.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use clap::Parser;
use fhnet::cli::{self, Cli};
use fhnet::parallel;
use fhnet_core::ad::grad_check;
use fhnet_core::cv::{DeepConfig, FoldModel, FoldReport, ForestConfig, Item};
use fhnet_core::direct::{direct_minimize_observed, PretuneConfig, SearchSpace, DEFAULT_EPSILON};
use fhnet_core::fhn::{integrate, rr_to_drive, DriveConfig, FhnParams};
use fhnet_core::hrv::{apen, compute_features, correlation_dimension, pnn, rmssd, sdnn};
use fhnet_core::metrics::{roc_auc, sens_spec};
use fhnet_core::net::{init_weights, HybridModel, ModelLayout, ParamVector, Sample, Standardizer};
use fhnet_core::rr::{filter_segment, stratified_folds, synth_dataset, Dataset, Label, SynthConfig};
use fhnet_core::train::{train_observed, AdamState, EpochRecord, ModelInit, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

const P: Label = Label::Positive;
const N: Label = Label::Normal;

// criterion 1
const GRAD_REL_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-6;
// criterion 2
const ORIGIN_STEPS: usize = 1000;
const EULER_MIN_RATIO: f64 = 1.8;
// criterion 3
const SPHERE_TARGET: f64 = 1e-4;
const SPHERE_BUDGET: usize = 150;
const BRANIN_OPTIMUM: f64 = 0.397887;
const BRANIN_TOL: f64 = 1e-2;
const BRANIN_BUDGET: usize = 300;
const GRID: usize = 1000;
const TILING_TOL: f64 = 1e-9;
// criterion 4
const ADAM_TARGET: f64 = 1e-3;
const ADAM_STEPS: usize = 2000;
const ADAM_LR: f64 = 0.05;
// criterion 5
const AUC_INSTANCES: usize = 200;
const AUC_MAX_N: usize = 50;
// criterion 6
const APEN_SEEDS: u64 = 20;
const APEN_LEN: usize = 100;
const AR_PHI: f64 = 0.9;
const SINE_BAND: (f64, f64) = (0.8, 1.3);
const NOISE_FLOOR: f64 = 1.6;
// criterion 7
const EPOCHS_MAX: usize = 200;
const CLAMP_FRACTION: f64 = 0.1;
const CLAMPED_EPOCHS: usize = 20;
// criterion 8
const BENCH_PATIENTS: usize = 20;
const BENCH_SEGMENTS: usize = 20;
const BENCH_SEED: u64 = 7;
const BENCH_FOLDS: usize = 10;
const DEEP_MIN_AUC: f64 = 0.85;
const RF_MIN_AUC: f64 = 0.70;

#[derive(Default)]
struct Outcome {
    notes: Vec<String>,
    failures: Vec<String>,
}

impl Outcome {
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.failures.push(what.into());
        }
    }

    fn note(&mut self, what: impl Into<String>) {
        self.notes.push(what.into());
    }
}

/// `limit` is the runtime bound, if the criterion states one.
fn criterion(id: u32, title: &str, limit: Option<Duration>, body: impl FnOnce(&mut Outcome)) -> bool {
    let start = Instant::now();
    let mut out = Outcome::default();
    let run = panic::catch_unwind(AssertUnwindSafe(|| body(&mut out)));
    let elapsed = start.elapsed();
    if let Err(e) = run {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        out.failures.push(format!("panicked: {msg}"));
    }
    let bound = match limit {
        Some(l) => {
            out.check(
                elapsed < l,
                format!("runtime {:.2} s over the {} s limit", elapsed.as_secs_f64(), l.as_secs()),
            );
            format!(", limit {} s", l.as_secs())
        }
        None => String::new(),
    };
    let pass = out.failures.is_empty();
    let mut line = format!(
        "criterion {id} {} {title} [{:.2} s{bound}]: {}",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        out.notes.join("; ")
    );
    if !pass {
        line.push_str(&format!(" | failed: {}", out.failures.join("; ")));
    }
    println!("{line}");
    pass
}

fn gradient_fidelity(out: &mut Outcome) {
    let layout = ModelLayout::new(2, 0, vec![3]).unwrap();
    out.check(layout.layer_sizes() == [2, 3, 2], "head is not [2, 3, 2]");
    let head = init_weights(&layout.layer_sizes(), 0.5, 11).unwrap();
    let population = [FhnParams::new(1.0, 0.08, 0.8, 0.3), FhnParams::new(0.6, 0.2, 1.2, 0.1)];
    let params = ParamVector::assemble(layout, &population, 0.5, &head).unwrap();
    let mut model = HybridModel::new(params, DriveConfig::default()).unwrap();
    let (a, b) = ([980u32], [485u32, 490]);
    for rr in [&a[..], &b[..]] {
        let steps = rr_to_drive(rr, 10.0, 0.5, 20.0).unwrap().len();
        out.check(steps == 100, format!("{rr:?} unrolls {steps} steps"));
    }
    let readout = model.training_readout();
    let raw: Vec<Vec<f64>> = [&a[..], &b[..]].iter().map(|rr| model.raw_rates(rr, readout).unwrap()).collect();
    model.rates.smooth = Standardizer::fit(&raw).unwrap();
    let batch = [
        Sample {
            intervals: &a,
            hrv: None,
            label: P,
        },
        Sample {
            intervals: &b,
            hrv: None,
            label: N,
        },
    ];
    let check = grad_check(|_, p| model.objective_at(p, &batch, 0.01), &model.params.values, FD_STEP).unwrap();
    // |g_ad - g_fd| / max(1, |g_fd|), the checker's own definition
    let rel = check.max_rel_error;
    out.note(format!("{} parameters, max relative error {rel:.2e}", check.analytic.len()));
    out.check(rel < GRAD_REL_TOL, format!("relative error {rel:.2e} >= {GRAD_REL_TOL:e}"));
}

fn euler_final_v(p: &FhnParams, dt_ms: f64) -> f64 {
    let drive = rr_to_drive(&[800; 5], dt_ms, 0.5, 20.0).unwrap();
    *integrate(p, 0.5, &drive, dt_ms / 100.0).unwrap().v.last().unwrap()
}

fn fhn_dynamics(out: &mut Outcome) {
    let p = FhnParams::new(1.3, 0.2, 0.7, 0.5);
    let silent = rr_to_drive(&[10_000], 10.0, 0.0, 20.0).unwrap();
    let traj = integrate(&p, 0.0, &silent, 0.1).unwrap();
    let drift = traj.v.iter().chain(&traj.w).filter(|x| **x != 0.0).count();
    out.note(format!("{} steps at the origin, {drift} non-zero states", silent.len()));
    out.check(silent.len() >= ORIGIN_STEPS && drift == 0, "origin drifted");

    // damped oscillation after each pulse; beats fall on every grid
    let p = FhnParams::new(3.0, 0.3, 0.3, 0.0);
    let reference = euler_final_v(&p, 10.0 / 16.0);
    let err: Vec<f64> = [10.0, 5.0, 2.5, 1.25]
        .iter()
        .map(|&dt| (euler_final_v(&p, dt) - reference).abs())
        .collect();
    let ratios: Vec<f64> = err.windows(2).map(|w| w[0] / w[1]).collect();
    out.note(format!("error ratios per halving {:.2?}", ratios));
    out.check(
        ratios.iter().all(|r| *r >= EULER_MIN_RATIO),
        format!("a ratio is below {EULER_MIN_RATIO}"),
    );
}

fn branin(x: &[f64]) -> f64 {
    use std::f64::consts::PI;
    let u = x[1] - 5.1 / (4.0 * PI * PI) * x[0] * x[0] + 5.0 / PI * x[0] - 6.0;
    u * u + 10.0 * (1.0 - 1.0 / (8.0 * PI)) * x[0].cos() + 10.0
}

fn direct(out: &mut Outcome) {
    let mut worst_volume = 0.0f64;
    let mut overlaps = 0;
    let mut tiling = |t: &fhnet_core::direct::RectTree| {
        worst_volume = worst_volume.max((t.total_volume() - 1.0).abs());
        if !t.interiors_disjoint() {
            overlaps += 1;
        }
    };
    let space = SearchSpace::new(&[(-1.0, 1.0); 2]).unwrap();
    let sphere = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
    let r = direct_minimize_observed(sphere, &space, SPHERE_BUDGET, DEFAULT_EPSILON, &mut tiling).unwrap();
    out.note(format!("sphere {:.2e} in {} evaluations", r.best_value, r.trace.len()));
    out.check(
        r.best_value < SPHERE_TARGET && r.trace.len() <= SPHERE_BUDGET,
        "sphere target missed",
    );

    let bounds = [(-5.0, 10.0), (0.0, 15.0)];
    let mut grid_min = f64::INFINITY;
    for i in 0..GRID {
        for j in 0..GRID {
            let x = [
                bounds[0].0 + 15.0 * i as f64 / (GRID - 1) as f64,
                bounds[1].0 + 15.0 * j as f64 / (GRID - 1) as f64,
            ];
            grid_min = grid_min.min(branin(&x));
        }
    }
    let space = SearchSpace::new(&bounds).unwrap();
    let r = direct_minimize_observed(branin, &space, BRANIN_BUDGET, DEFAULT_EPSILON, &mut tiling).unwrap();
    out.note(format!(
        "Branin {:.6} in {} evaluations (grid oracle {grid_min:.6})",
        r.best_value,
        r.trace.len()
    ));
    out.check((grid_min - BRANIN_OPTIMUM).abs() < BRANIN_TOL, "grid oracle disagrees with the optimum");
    out.check(
        (r.best_value - BRANIN_OPTIMUM).abs() < BRANIN_TOL && r.trace.len() <= BRANIN_BUDGET,
        "Branin target missed",
    );
    out.note(format!("worst tiling volume error {worst_volume:.1e}"));
    out.check(worst_volume < TILING_TOL && overlaps == 0, "tiling broken");
}

fn adam(out: &mut Outcome) {
    let mut x = [1.0, 1.0];
    let mut opt = AdamState::new(2, ADAM_LR);
    let mut steps = None;
    for t in 1..=ADAM_STEPS {
        let g = [2.0 * x[0], 2.0 * x[1]];
        opt.step(&mut x, &g, &[false, false]).unwrap();
        if (x[0] * x[0] + x[1] * x[1]).sqrt() < ADAM_TARGET {
            steps = Some(t);
            break;
        }
    }
    match steps {
        Some(t) => out.note(format!("norm below {ADAM_TARGET:e} after {t} steps")),
        None => out.check(false, format!("norm still above {ADAM_TARGET:e} after {ADAM_STEPS} steps")),
    }

    let mut y = [1.0, -0.75, 0.5];
    let frozen = [false, true, false];
    let mut opt = AdamState::new(3, ADAM_LR);
    let mut moved = 0;
    for _ in 0..ADAM_STEPS {
        let g = y.map(|v| 2.0 * v);
        opt.step(&mut y, &g, &frozen).unwrap();
        moved += (y[1].to_bits() != (-0.75f64).to_bits()) as usize;
    }
    out.check(moved == 0, "a clamped coordinate moved");
}

fn brute_auc(scores: &[f64], labels: &[Label]) -> f64 {
    let (mut twice, mut pairs) = (0u64, 0u64);
    for (i, &a) in scores.iter().enumerate() {
        for (j, &b) in scores.iter().enumerate() {
            if labels[i] == P && labels[j] == N {
                pairs += 1;
                twice += if a > b {
                    2
                } else if a == b {
                    1
                } else {
                    0
                };
            }
        }
    }
    twice as f64 / (2 * pairs) as f64
}

fn metrics(out: &mut Outcome) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mismatches = 0;
    let mut done = 0;
    while done < AUC_INSTANCES {
        let n = rng.random_range(2..=AUC_MAX_N);
        // tenths make ties common
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..20) as f64 / 10.0).collect();
        let labels: Vec<Label> = (0..n).map(|_| if rng.random_bool(0.5) { P } else { N }).collect();
        if !(labels.contains(&P) && labels.contains(&N)) {
            continue;
        }
        done += 1;
        mismatches += (roc_auc(&scores, &labels).unwrap() != brute_auc(&scores, &labels)) as usize;
    }
    out.note(format!("{done} instances, {mismatches} rank/pairwise mismatches"));
    out.check(mismatches == 0, "rank AUC differs from pairwise AUC");
    let hand = [
        (sens_spec(&[0.9, 0.8, 0.1, 0.2], &[P, P, N, N], 0.5).unwrap(), (1.0, 1.0)),
        (sens_spec(&[0.9, 0.3, 0.6, 0.1], &[P, P, N, N], 0.5).unwrap(), (0.5, 0.5)),
        ((sens_spec(&[0.0, 0.3, 0.6, 0.1], &[P, P, N, N], 0.0).unwrap().0, 1.0), (1.0, 1.0)),
    ];
    out.check(hand.iter().all(|(got, want)| got == want), format!("hand cases {hand:?}"));
}

fn white_and_ar1(seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let white: Vec<f64> = (0..APEN_LEN).map(|_| 800.0 + 50.0 * normal()).collect();
    // stationary AR(1) with the same variance
    let innov = 50.0 * (1.0 - AR_PHI * AR_PHI).sqrt();
    let mut prev = 50.0 * normal();
    let mut corr = Vec::with_capacity(APEN_LEN);
    for _ in 0..APEN_LEN {
        corr.push(800.0 + prev);
        prev = AR_PHI * prev + innov * normal();
    }
    (white, corr)
}

fn hrv_features(out: &mut Outcome) {
    let hand = [
        sdnn(&[800.0, 800.0, 800.0]) == 0.0,
        rmssd(&[800.0, 820.0, 800.0]) == 20.0,
        pnn(&[800.0, 825.0, 800.0], 20.0) == 1.0,
        apen(&[800.0; 50], 2, 0.2 * sdnn(&[800.0; 50])) == 0.0,
    ];
    out.check(hand.iter().all(|h| *h), format!("hand cases {hand:?}"));

    let (mut white, mut corr) = (0.0, 0.0);
    for seed in 0..APEN_SEEDS {
        let (w, c) = white_and_ar1(seed);
        white += apen(&w, 2, 0.2 * sdnn(&w)) / APEN_SEEDS as f64;
        corr += apen(&c, 2, 0.2 * sdnn(&c)) / APEN_SEEDS as f64;
    }
    out.note(format!("mean ApEn white {white:.4} vs AR(1) phi={AR_PHI} {corr:.4} at N={APEN_LEN}"));
    out.check(white > corr, "ApEn of white noise does not exceed ApEn of AR(1)");

    let mut sine_dims = Vec::new();
    for period in [25.0, 40.0, 60.0, 100.0] {
        let sine: Vec<f64> = (0..200)
            .map(|n| 800.0 + 50.0 * (2.0 * std::f64::consts::PI * n as f64 / period).sin())
            .collect();
        sine_dims.push(correlation_dimension(&sine).unwrap());
    }
    let u = Uniform::new(700.0, 900.0).unwrap();
    let mut noise_min = f64::INFINITY;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise: Vec<f64> = (0..200).map(|_| u.sample(&mut rng)).collect();
        noise_min = noise_min.min(correlation_dimension(&noise).unwrap());
    }
    out.note(format!("sine dimensions {sine_dims:.3?}, noise minimum {noise_min:.3}"));
    out.check(
        sine_dims.iter().all(|d| (SINE_BAND.0..=SINE_BAND.1).contains(d)),
        "sine outside its band",
    );
    out.check(noise_min > NOISE_FLOOR, "noise dimension too low");
}

fn protocol(out: &mut Outcome) {
    let ds = synth_dataset(2, 3, &SynthConfig::default(), 5).unwrap();
    let data: Vec<(Vec<u32>, Label)> = ds.segments().iter().map(|s| (s.intervals[..12].to_vec(), s.label)).collect();
    let samples: Vec<Sample<'_>> = data
        .iter()
        .map(|(r, l)| Sample {
            intervals: r,
            hrv: None,
            label: *l,
        })
        .collect();
    let init = ModelInit {
        layout: ModelLayout::new(2, 0, vec![3]).unwrap(),
        population: vec![FhnParams::new(3.0, 0.5, 0.1, 0.0), FhnParams::new(1.0, 0.1, 1.0, 1.0)],
        drive: DriveConfig::default(),
    };
    let cfg = TrainConfig {
        epochs_max: EPOCHS_MAX,
        clamp_fraction: CLAMP_FRACTION,
        seed: 1,
        ..TrainConfig::default()
    };
    let mut initial: Vec<f64> = init.population.iter().flat_map(|p| p.to_array()).collect();
    initial.push(init.drive.amplitude);
    let fhn = init.layout.fhn_range();
    let mut slices = Vec::new();
    let mut observer = |_: &EpochRecord, m: &HybridModel| slices.push(m.params.values[fhn.clone()].to_vec());
    let (_, log) = train_observed(&samples, &init, &cfg, &mut observer).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let frozen_ok = slices.len() > CLAMPED_EPOCHS && slices[..CLAMPED_EPOCHS].iter().all(|s| bits(s) == bits(&initial));
    let changed = slices[CLAMPED_EPOCHS.min(slices.len())..].iter().all(|s| bits(s) != bits(&initial));
    let clamped: Vec<usize> = log.epochs.iter().filter(|e| e.clamped).map(|e| e.epoch).collect();
    out.note(format!("{} epochs run, {} clamped", log.epochs.len(), clamped.len()));
    out.check(clamped == (1..=CLAMPED_EPOCHS).collect::<Vec<_>>(), "clamped flags are not epochs 1 to 20");
    out.check(frozen_ok, "FHN slices moved during the clamp phase");
    out.check(changed, "FHN slices unchanged after the clamp phase");
    out.check(log.epochs.len() <= EPOCHS_MAX, "ran past epochs_max");

    let distinct = |n: u32, base: u32| (0..n).map(|i| base + i).collect::<Vec<u32>>();
    // 66 distinct values summing to 22000 ms: exactly 180 bpm
    let mut at_180 = distinct(66, 300);
    *at_180.last_mut().unwrap() += 22_000 - at_180.iter().sum::<u32>();
    let mut above_180 = at_180.clone();
    *above_180.last_mut().unwrap() -= 1;
    // 64 distinct values with mean 2000 ms: exactly 30 bpm
    let at_30: Vec<u32> = (0..64).map(|i| 2000 - 32 + i + (i >= 32) as u32).collect();
    let mut below_30 = at_30.clone();
    *below_30.last_mut().unwrap() += 1;
    let rules = |r: &[u32]| filter_segment(r).err().map(|e| e.rule_ids()).unwrap_or_default();
    let cases: [(&str, Vec<u32>, Vec<&str>); 7] = [
        ("64 distinct at 800 ms", distinct(64, 768), vec![]),
        ("63 distinct at 800 ms", distinct(63, 769), vec!["unique-values"]),
        ("constant", vec![800; 75], vec!["unique-values"]),
        ("exactly 180 bpm", at_180, vec![]),
        ("above 180 bpm", above_180, vec!["heart-rate"]),
        ("exactly 30 bpm", at_30, vec![]),
        ("below 30 bpm", below_30, vec!["heart-rate"]),
    ];
    let wrong: Vec<&str> = cases
        .iter()
        .filter(|(_, r, want)| rules(r) != *want)
        .map(|(name, _, _)| *name)
        .collect();
    out.note(format!("{} filter cases", cases.len()));
    out.check(wrong.is_empty(), format!("filter cases {wrong:?}"));
}

/// Delegates to a model after checking that no test patient is trained on.
struct LeakGuard<'m> {
    inner: &'m dyn FoldModel,
    leaks: Mutex<Vec<usize>>,
}

impl FoldModel for LeakGuard<'_> {
    fn fit_score(&self, fold: usize, train: &[Item<'_>], test: &[Item<'_>]) -> fhnet_core::Result<Vec<f64>> {
        if train.iter().any(|t| test.iter().any(|s| s.patient == t.patient)) {
            self.leaks.lock().unwrap().push(fold);
        }
        self.inner.fit_score(fold, train, test)
    }
}

fn guarded_cv(items: &[Item<'_>], ds: &Dataset, model: &dyn FoldModel) -> (FoldReport, Vec<usize>) {
    let folds = stratified_folds(ds, BENCH_FOLDS, BENCH_SEED).unwrap();
    let guard = LeakGuard {
        inner: model,
        leaks: Mutex::new(Vec::new()),
    };
    let report = parallel::cross_validate(items, &folds, &guard, 0.5).unwrap();
    (report, guard.leaks.into_inner().unwrap())
}

fn benchmark(out: &mut Outcome) {
    let ds = synth_dataset(BENCH_PATIENTS, BENCH_SEGMENTS, &SynthConfig::default(), BENCH_SEED).unwrap();
    let hrv: Vec<Vec<f64>> = ds
        .segments()
        .iter()
        .map(|s| compute_features(&s.intervals).unwrap().as_slice().to_vec())
        .collect();
    let items: Vec<Item<'_>> = ds
        .segments()
        .iter()
        .zip(&hrv)
        .map(|(s, h)| Item {
            patient: &s.patient_id,
            label: s.label,
            intervals: &s.intervals,
            hrv: Some(h),
        })
        .collect();
    let deep = DeepConfig {
        n_neurons: 1,
        hidden: vec![8],
        fused: false,
        drive: DriveConfig::default(),
        train: TrainConfig {
            epochs_max: 10,
            seed: BENCH_SEED,
            ..TrainConfig::default()
        },
        pretune: Some(PretuneConfig {
            budget: 200,
            seed: BENCH_SEED,
            ..PretuneConfig::default()
        }),
    };
    let forest = ForestConfig {
        n_trees: 30,
        seed: BENCH_SEED,
    };
    let (deep_report, deep_leaks) = guarded_cv(&items, &ds, &deep);
    let (rf_report, rf_leaks) = guarded_cv(&items, &ds, &forest);
    let mean = |r: &FoldReport| r.segment.auc.map_or(f64::NAN, |s| s.mean);
    let std = |r: &FoldReport| r.segment.auc.map_or(f64::NAN, |s| s.std);
    let (d, t) = (mean(&deep_report), mean(&rf_report));
    out.note(format!(
        "deep AUC {d:.3} +- {:.3} over {} folds, RF AUC {t:.3} +- {:.3}",
        std(&deep_report),
        deep_report.folds.len(),
        std(&rf_report)
    ));
    out.check(d >= DEEP_MIN_AUC, format!("deep AUC {d:.3} < {DEEP_MIN_AUC}"));
    out.check(t >= RF_MIN_AUC, format!("RF AUC {t:.3} < {RF_MIN_AUC}"));
    out.check(d > t, format!("ordering deep > traditional does not hold ({d:.3} vs {t:.3})"));
    out.check(
        deep_report.folds.len() == BENCH_FOLDS && rf_report.folds.len() == BENCH_FOLDS,
        "missing folds",
    );
    out.note(format!("patient leaks {}", deep_leaks.len() + rf_leaks.len()));
    out.check(deep_leaks.is_empty() && rf_leaks.is_empty(), "a test patient appeared in training");
}

/// Runs a command line in process, exactly as the binary would parse it.
fn cli_run(args: &[&str]) -> bool {
    Cli::try_parse_from(std::iter::once("fhnet").chain(args.iter().copied()))
        .map(|c| cli::run(c).is_ok())
        .unwrap_or(false)
}

fn determinism(out: &mut Outcome) {
    let dir = tempfile::TempDir::new().unwrap();
    let mut runs = Vec::new();
    for run in 0..2 {
        let f = |n: &str| dir.path().join(format!("{run}_{n}"));
        let path = |n: &str| f(n).to_str().unwrap().to_string();
        let (data, feat, rf, deep, trace) = (path("d.rr"), path("f.csv"), path("rf.json"), path("deep.json"), path("trace.csv"));
        let small = [
            "--neurons", "1", "--hidden", "2", "--epochs", "3", "--pretune-budget", "5", "--seed", "3",
        ];
        let mut commands: Vec<Vec<String>> = vec![
            vec!["synth", "--patients-per-class", "3", "--segments", "2", "--seed", "7", "--out", &data],
            vec!["features", "--data", &data, "--out", &feat],
            vec!["train", "--data", &data, "--model", "trad", "--out", &rf],
            [&["train", "--data", &data, "--out", &deep, "--trace", &trace][..], &small[..]].concat(),
        ]
        .into_iter()
        .map(|c| c.into_iter().map(String::from).collect())
        .collect();
        let (r1, r2, r3, csv, roc) = (path("r1.jsonl"), path("r2.jsonl"), path("r3.jsonl"), path("cv.csv"), path("roc.csv"));
        commands.push(
            ["eval", "--data", &data, "--checkpoint", &deep, "--report", &r1, "--roc-out", &roc]
                .map(String::from)
                .to_vec(),
        );
        commands.push(
            ["eval", "--data", &data, "--checkpoint", &rf, "--report", &r2]
                .map(String::from)
                .to_vec(),
        );
        commands.push(
            [&["eval", "--data", &data, "--cv", "3", "--report", &r3, "--csv-out", &csv][..], &small[..]]
                .concat()
                .into_iter()
                .map(String::from)
                .collect(),
        );
        for c in &commands {
            let args: Vec<&str> = c.iter().map(String::as_str).collect();
            out.check(cli_run(&args), format!("fhnet {} failed", args[0]));
        }
        let files = ["d.rr", "f.csv", "rf.json", "deep.json", "deep.json.log", "trace.csv", "r1.jsonl", "roc.csv", "r2.jsonl", "r3.jsonl", "cv.csv"];
        runs.push(files.map(|n| fs::read(f(n)).unwrap_or_default()));
        if run == 0 {
            out.note(format!("{} commands, {} output files compared", commands.len(), files.len()));
        }
    }
    let differing = runs[0].iter().zip(&runs[1]).filter(|(a, b)| a != b).count();
    out.check(
        differing == 0 && runs[0].iter().all(|b| !b.is_empty()),
        format!("{differing} outputs differ between runs"),
    );
}

fn main() {
    let secs = |s| Some(Duration::from_secs(s));
    let results = [
        criterion(1, "gradient fidelity", secs(10), gradient_fidelity),
        criterion(2, "FHN dynamics", secs(5), fhn_dynamics),
        criterion(3, "DIRECT", secs(10), direct),
        criterion(4, "Adam", secs(1), adam),
        criterion(5, "metrics", secs(5), metrics),
        criterion(6, "HRV features", secs(60), hrv_features),
        criterion(7, "protocol fidelity", None, protocol),
        criterion(8, "synthetic benchmark", secs(30 * 60), benchmark),
        criterion(9, "determinism", None, determinism),
    ];
    let failed: Vec<usize> = results
        .iter()
        .enumerate()
        .filter(|(_, ok)| !**ok)
        .map(|(i, _)| i + 1)
        .collect();
    println!(
        "acceptance: {} of {} criteria pass{}",
        results.len() - failed.len(),
        results.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!(", failing {failed:?}")
        }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
