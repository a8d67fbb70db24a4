//! Acceptance checks. Each test writes one `PASS`/`FAIL` line to stderr
//! (bypassing the test harness capture) and then asserts its criterion.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use npcdiag::features::PSI_MAX;
use npcdiag::pipeline::{
    generate_dataset, scenario_matrix, train_on_load, write_dataset, CaptureOptions,
};
use npcdiag::stream::{replay_session, ReplaySpec};
use npcdiag::{
    evaluate, feature_vector, serve, simulate, train_forest, write_model, ClassSet, CurrentSample,
    Evaluation, ExperimentSetup, FaultSchedule, FaultSet, FeatureMode, Forest, ForestParams,
    Scenario, SimConfig, StreamOptions, SwitchId,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SAME_LOAD_OVERALL: f64 = 0.94;
const SAME_LOAD_PER_CLASS: f64 = 0.90;
const SAME_LOAD_RUNTIME: Duration = Duration::from_secs(180);
const CROSS_LOAD_OVERALL: f64 = 0.90;
const CROSS_LOAD_GAP: f64 = 0.05;
const RAW_CEILING: f64 = 0.75;
const RAW_MARGIN: f64 = 0.15;
const INVARIANCE_PAIRS: usize = 1000;
const INVARIANCE_SCALES: [f64; 3] = [0.5, 2.0, 10.0];
const INVARIANCE_TOL: f64 = 1e-9;
const BLOCKED_HALF_MEAN: f64 = 0.05;
const OUTER_PEAK: (f64, f64) = (0.05, 0.70);
const OTHER_HALF_RMS: f64 = 0.15;
const SLOPE_TOL: f64 = 1e-9;
const SLOPE_SIN_FLOOR: f64 = 1e-3;
const FRAME_BUDGET: Duration = Duration::from_millis(20);

fn report(n: u32, name: &str, ok: bool, detail: &str) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    writeln!(err, "{verdict} criterion {n} ({name}): {detail}").unwrap();
}

struct Trained {
    forest: Forest,
    same: Evaluation,
    cross: Evaluation,
    elapsed: Duration,
}

fn train_and_score(mode: FeatureMode) -> Trained {
    let setup = ExperimentSetup::default();
    let start = Instant::now();
    let (forest, held_out) =
        train_on_load(10.0, mode, &ForestParams::desk_scale(), &setup).unwrap();
    let same = evaluate(&forest, &held_out.to_samples()).unwrap();
    let elapsed = start.elapsed();
    let other = setup.held_out(20.0, 10.0, mode).unwrap();
    let cross = evaluate(&forest, &other.to_samples()).unwrap();
    Trained {
        forest,
        same,
        cross,
        elapsed,
    }
}

fn transformed() -> &'static Trained {
    static T: OnceLock<Trained> = OnceLock::new();
    T.get_or_init(|| train_and_score(FeatureMode::Transformed))
}

fn raw() -> &'static Trained {
    static T: OnceLock<Trained> = OnceLock::new();
    T.get_or_init(|| train_and_score(FeatureMode::Raw))
}

#[test]
fn criterion_1_same_load_accuracy() {
    let t = transformed();
    let classes = t.forest.classes();
    let weak: Vec<String> = t
        .same
        .per_class
        .iter()
        .filter(|s| s.accuracy().is_some_and(|a| a < SAME_LOAD_PER_CLASS))
        .map(|s| {
            format!(
                "{} {:.3}",
                classes.get(s.class_id).unwrap().name(),
                s.accuracy().unwrap()
            )
        })
        .collect();
    let ok =
        t.same.overall >= SAME_LOAD_OVERALL && weak.is_empty() && t.elapsed < SAME_LOAD_RUNTIME;
    let detail = format!(
        "overall {:.4} (need >= {SAME_LOAD_OVERALL}), min class {:.3} (need >= {SAME_LOAD_PER_CLASS}), below: [{}], {:.1} s",
        t.same.overall,
        t.same.min_class_accuracy().unwrap(),
        weak.join(", "),
        t.elapsed.as_secs_f64()
    );
    report(1, "same-load accuracy", ok, &detail);
    assert!(ok, "{detail}");
}

#[test]
fn criterion_2_cross_load_robustness() {
    let t = transformed();
    let gap = (t.same.overall - t.cross.overall).abs();
    let ok = t.cross.overall >= CROSS_LOAD_OVERALL && gap <= CROSS_LOAD_GAP;
    let detail = format!(
        "20 ohm overall {:.4} (need >= {CROSS_LOAD_OVERALL}), 10 ohm {:.4}, gap {gap:.4} (need <= {CROSS_LOAD_GAP})",
        t.cross.overall, t.same.overall
    );
    report(2, "cross-load robustness", ok, &detail);
    assert!(ok, "{detail}");
}

#[test]
fn criterion_3_raw_feature_degradation() {
    let r = raw();
    let t = transformed();
    let drop = t.cross.overall - r.cross.overall;
    let ok = r.cross.overall <= RAW_CEILING && drop >= RAW_MARGIN;
    let detail = format!(
        "raw 20 ohm overall {:.4} (need <= {RAW_CEILING}), {drop:.4} below transformed (need >= {RAW_MARGIN})",
        r.cross.overall
    );
    report(3, "raw-feature degradation", ok, &detail);
    assert!(ok, "{detail}");
}

fn zero_sum(rng: &mut ChaCha8Rng) -> CurrentSample {
    let ia = rng.random_range(-50.0..50.0);
    let ib = rng.random_range(-50.0..50.0);
    CurrentSample::new(0.0, [ia, ib, -ia - ib])
}

#[test]
fn criterion_4_amplitude_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..INVARIANCE_PAIRS {
        let (curr, prev) = (zero_sum(&mut rng), zero_sum(&mut rng));
        let base = feature_vector(&curr, &prev);
        for k in INVARIANCE_SCALES {
            let scaled = feature_vector(&curr.scaled(k), &prev.scaled(k));
            for (a, b) in base.0.iter().zip(scaled.0) {
                let rel = if *a == 0.0 {
                    b.abs()
                } else {
                    (a - b).abs() / a.abs()
                };
                worst = worst.max(rel);
            }
        }
    }
    let ok = worst <= INVARIANCE_TOL;
    let detail = format!(
        "{INVARIANCE_PAIRS} pairs x {INVARIANCE_SCALES:?}, worst relative difference {worst:.2e}"
    );
    report(4, "amplitude invariance", ok, &detail);
    assert!(ok, "{detail}");
}

fn steady_cycle(fault: &str) -> Vec<[f64; 3]> {
    let cfg = SimConfig::default();
    let n = cfg.samples_per_period();
    let tr = simulate(&Scenario::new(
        cfg,
        fault.parse().unwrap(),
        5.0 * cfg.period(),
        8.0 * cfg.period(),
    ))
    .unwrap();
    tr.samples[7 * n..8 * n]
        .iter()
        .map(|s| s.currents())
        .collect()
}

fn half(xs: &[f64], positive: bool) -> Vec<f64> {
    xs.iter()
        .map(|&x| if positive { x.max(0.0) } else { (-x).max(0.0) })
        .collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn rms(xs: &[f64]) -> f64 {
    (xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64).sqrt()
}

fn peak(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(0.0, f64::max)
}

#[test]
fn criterion_5_fault_signatures() {
    let normal = steady_cycle("none");
    let mut failures = Vec::new();
    let (mut worst_blocked, mut peak_range, mut worst_other) = (0.0f64, (f64::MAX, 0.0f64), 0.0f64);
    for (p, phase) in ["a", "b", "c"].iter().enumerate() {
        let healthy: Vec<f64> = normal.iter().map(|c| c[p]).collect();
        for pos in 1..=4u8 {
            let name = format!("S{phase}{pos}");
            let faulted: Vec<f64> = steady_cycle(&name).iter().map(|c| c[p]).collect();
            // Upper switches (1, 2) act on the positive half, lower (3, 4) on the negative.
            let positive = pos <= 2;
            let (f_hit, h_hit) = (half(&faulted, positive), half(&healthy, positive));
            match pos {
                2 | 3 => {
                    let ratio = mean(&f_hit) / mean(&h_hit);
                    worst_blocked = worst_blocked.max(ratio);
                    if ratio >= BLOCKED_HALF_MEAN {
                        failures.push(format!("{name} half mean {ratio:.3}"));
                    }
                }
                _ => {
                    let ratio = peak(&f_hit) / peak(&h_hit);
                    peak_range = (peak_range.0.min(ratio), peak_range.1.max(ratio));
                    let other = rms(&half(&faulted, !positive)) / rms(&half(&healthy, !positive));
                    worst_other = worst_other.max((other - 1.0).abs());
                    if !(ratio > OUTER_PEAK.0 && ratio < OUTER_PEAK.1) {
                        failures.push(format!("{name} peak {ratio:.3}"));
                    }
                    if (other - 1.0).abs() > OTHER_HALF_RMS {
                        failures.push(format!("{name} other half rms {other:.3}"));
                    }
                }
            }
        }
    }
    let ok = failures.is_empty();
    let detail = format!(
        "inner blocked half mean <= {worst_blocked:.4} of normal, outer peak {:.3}..{:.3}, other half rms off by <= {worst_other:.3}{}",
        peak_range.0,
        peak_range.1,
        if ok { String::new() } else { format!("; failing: {}", failures.join(", ")) }
    );
    report(5, "fault signatures", ok, &detail);
    assert!(ok, "{detail}");
}

#[test]
fn criterion_6_closed_form_slope() {
    let steps = 200_000;
    let (mut checked, mut worst) = (0usize, 0.0f64);
    for amp in [0.3, 1.0, 17.0] {
        for k in 0..steps {
            let wt = 2.0 * PI * k as f64 / steps as f64;
            let s = CurrentSample::new(
                0.0,
                [
                    amp * wt.sin(),
                    amp * (wt - 2.0 * PI / 3.0).sin(),
                    amp * (wt + 2.0 * PI / 3.0).sin(),
                ],
            );
            let psi = feature_vector(&s, &s);
            // Frame anchored on phase x sees the same curve shifted by its phase lag.
            for (j, lag) in [0.0, 2.0 * PI / 3.0, 4.0 * PI / 3.0].iter().enumerate() {
                let theta = wt - lag;
                if theta.sin().abs() <= SLOPE_SIN_FLOOR {
                    continue;
                }
                let closed =
                    3f64.sqrt() / (1.0 + 2.0 * (theta - 2.0 * PI / 3.0).sin() / theta.sin());
                let expected = closed.clamp(-PSI_MAX, PSI_MAX);
                let err = (psi.0[j] - expected).abs() / expected.abs().max(1.0);
                worst = worst.max(err);
                checked += 1;
            }
        }
    }
    let ok = worst <= SLOPE_TOL;
    let detail = format!("{checked} points, worst error {worst:.2e}");
    report(6, "closed-form slope", ok, &detail);
    assert!(ok, "{detail}");
}

fn schedule(events: &[(&str, f64)]) -> FaultSchedule {
    let mut s = FaultSchedule::new();
    for (name, t) in events {
        s.push(name.parse::<SwitchId>().unwrap(), *t);
    }
    s
}

#[test]
fn criterion_7_online_protocol() {
    let forest = &transformed().forest;
    let sessions = [
        (vec![("Sa1", 0.1)], "Sa1"),
        (vec![("Sa1", 0.1), ("Sb2", 0.15)], "Sa1+Sb2"),
    ];
    let mut parts = Vec::new();
    let mut ok = true;
    let mut slowest = Duration::ZERO;
    for (events, want) in sessions {
        let bytes = replay_session(&ReplaySpec::new(
            SimConfig::default(),
            schedule(&events),
            25,
        ))
        .unwrap();
        let s = serve(
            bytes.as_slice(),
            forest,
            std::io::sink(),
            &StreamOptions::default(),
        )
        .unwrap();
        let want: FaultSet = want.parse().unwrap();
        ok &= s.confirmed == want && s.skipped == 0;
        slowest = slowest.max(s.max_latency);
        parts.push(format!("{want} confirmed {{{}}}", s.confirmed));
    }
    ok &= slowest < FRAME_BUDGET;
    let detail = format!(
        "{}, slowest frame {:.2} ms",
        parts.join("; "),
        slowest.as_secs_f64() * 1e3
    );
    report(7, "online protocol", ok, &detail);
    assert!(ok, "{detail}");
}

fn dataset_bytes(threads: usize) -> Vec<u8> {
    let classes = ClassSet::standard();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap();
    let d = pool
        .install(|| {
            generate_dataset(
                &scenario_matrix(&classes, 10.0, 120, 5),
                &classes,
                &SimConfig::default(),
                &CaptureOptions::default(),
            )
        })
        .unwrap();
    let mut out = Vec::new();
    write_dataset(&d, &mut out).unwrap();
    out
}

fn model_bytes(threads: usize) -> Vec<u8> {
    let classes = ClassSet::standard();
    let d = generate_dataset(
        &scenario_matrix(&classes, 10.0, 120, 5),
        &classes,
        &SimConfig::default(),
        &CaptureOptions::default(),
    )
    .unwrap();
    let params = ForestParams {
        n_trees: 20,
        ..ForestParams::default()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap();
    let forest = pool
        .install(|| train_forest(&d.to_samples(), &classes, FeatureMode::Transformed, &params))
        .unwrap();
    let mut out = Vec::new();
    write_model(&forest, &mut out).unwrap();
    out
}

fn event_log() -> Vec<u8> {
    let bytes = replay_session(&ReplaySpec::new(
        SimConfig::default(),
        schedule(&[("Sa1", 0.1), ("Sb2", 0.15)]),
        12,
    ))
    .unwrap();
    let opts = StreamOptions {
        record_latency: false,
        ..StreamOptions::default()
    };
    let mut log = Vec::new();
    serve(bytes.as_slice(), &transformed().forest, &mut log, &opts).unwrap();
    log
}

#[test]
fn criterion_8_determinism() {
    let data = dataset_bytes(1) == dataset_bytes(3);
    let model = model_bytes(1) == model_bytes(3);
    let log = event_log() == event_log();
    let ok = data && model && log;
    let detail = format!(
        "dataset identical: {data}, model file identical: {model}, event log identical: {log}"
    );
    report(8, "determinism", ok, &detail);
    assert!(ok, "{detail}");
}
