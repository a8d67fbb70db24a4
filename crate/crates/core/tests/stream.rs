use std::sync::OnceLock;

use npcdiag::pipeline::{train_on_load, ExperimentSetup};
use npcdiag::stream::{
    classify_window, decode_frame, replay_frames, replay_session, serve, window_decision,
    FaultLatch, ReplaySpec, StreamOptions, FRAME_LEN,
};
use npcdiag::{
    ClassSet, FaultSchedule, FaultSet, FeatureMode, Forest, ForestParams, SimConfig, SwitchId,
};
use proptest::prelude::*;

fn forest() -> &'static Forest {
    static FOREST: OnceLock<Forest> = OnceLock::new();
    FOREST.get_or_init(|| {
        train_on_load(
            10.0,
            FeatureMode::Transformed,
            &ForestParams::desk_scale(),
            &ExperimentSetup::default(),
        )
        .unwrap()
        .0
    })
}

fn schedule(events: &[(&str, f64)]) -> FaultSchedule {
    let mut s = FaultSchedule::new();
    for (name, t) in events {
        s.push(name.parse::<SwitchId>().unwrap(), *t);
    }
    s
}

fn frames(events: &[(&str, f64)], n: usize) -> Vec<Vec<u8>> {
    replay_frames(&ReplaySpec::new(SimConfig::default(), schedule(events), n)).unwrap()
}

fn id(name: &str) -> u16 {
    forest().classes().find(name.parse().unwrap()).unwrap().id
}

fn share(labels: &[u16], class: u16) -> f64 {
    labels.iter().filter(|&&l| l == class).count() as f64 / labels.len() as f64
}

#[test]
fn normal_frame_is_mostly_normal() {
    let f = frames(&[], 3);
    let prev = decode_frame(&f[1]).unwrap();
    let frame = decode_frame(&f[2]).unwrap();
    let labels = classify_window(forest(), &frame, prev.samples.last().copied());
    assert_eq!(labels.len(), 200);
    assert!(share(&labels, 0) >= 0.95, "{}", share(&labels, 0));
}

#[test]
fn steady_fault_frame_is_mostly_that_fault() {
    let f = frames(&[("Sa1", 0.0)], 4);
    let frame = decode_frame(&f[3]).unwrap();
    let labels = classify_window(
        forest(),
        &frame,
        decode_frame(&f[2]).unwrap().samples.last().copied(),
    );
    assert!(
        share(&labels, id("Sa1")) >= 0.90,
        "{}",
        share(&labels, id("Sa1"))
    );
}

#[test]
fn onset_mid_window_gives_normal_prefix() {
    // The fault opens 100 samples into frame 2.
    let f = frames(&[("Sb3", 0.05)], 5);
    let frame = decode_frame(&f[2]).unwrap();
    let labels = classify_window(
        forest(),
        &frame,
        decode_frame(&f[1]).unwrap().samples.last().copied(),
    );
    assert!(share(&labels[..100], 0) >= 0.9, "{:?}", &labels[..100]);
    assert!(labels[100..].iter().any(|&l| l != 0));
    // A full cycle after onset the window is in the steady fault state.
    let next = classify_window(
        forest(),
        &decode_frame(&f[4]).unwrap(),
        decode_frame(&f[3]).unwrap().samples.last().copied(),
    );
    assert!(share(&next, id("Sb3")) >= 0.9);
}

#[test]
fn scripted_single_fault_session() {
    // Five healthy frames, then the fault for twenty frames.
    let bytes = replay_session(&ReplaySpec::new(
        SimConfig::default(),
        schedule(&[("Sa1", 0.1)]),
        25,
    ))
    .unwrap();
    let mut log = Vec::new();
    let s = serve(
        bytes.as_slice(),
        forest(),
        &mut log,
        &StreamOptions::default(),
    )
    .unwrap();
    assert_eq!(s.frames, 25);
    assert_eq!(s.skipped, 0);
    assert_eq!(s.confirmed, "Sa1".parse::<FaultSet>().unwrap());
    assert!(s.decisions[..5].iter().all(|&(_, d)| d == 0));

    let text = String::from_utf8(log).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 25);
    for (k, line) in lines.iter().enumerate() {
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(cols.len(), 5, "{line}");
        assert_eq!(cols[0], k.to_string());
        assert_eq!(cols[1].len(), 12);
        assert!(cols[2].parse::<f64>().is_ok());
        assert!(cols[4].parse::<u128>().is_ok());
    }
    assert!(lines[0].ends_with(&format!("\t-\t{}", lines[0].rsplit('\t').next().unwrap())));
    assert!(lines[24].contains("\tSa1\t"));
}

#[test]
fn scripted_double_fault_session() {
    let bytes = replay_session(&ReplaySpec::new(
        SimConfig::default(),
        schedule(&[("Sa1", 0.1), ("Sb2", 0.15)]),
        25,
    ))
    .unwrap();
    let s = serve(
        bytes.as_slice(),
        forest(),
        std::io::sink(),
        &StreamOptions::default(),
    )
    .unwrap();
    assert_eq!(s.confirmed, "Sa1+Sb2".parse::<FaultSet>().unwrap());
}

#[test]
fn empty_source() {
    let s = serve(
        &[][..],
        forest(),
        std::io::sink(),
        &StreamOptions::default(),
    )
    .unwrap();
    assert_eq!(s.frames, 0);
    assert!(s.confirmed.is_empty());
}

#[test]
fn corrupt_frame_is_skipped() {
    let mut f = frames(&[], 6);
    f[3][500] ^= 0xff;
    let mut log = Vec::new();
    let s = serve(
        f.concat().as_slice(),
        forest(),
        &mut log,
        &StreamOptions::default(),
    )
    .unwrap();
    assert_eq!((s.frames, s.skipped), (5, 1));
    assert!(s.confirmed.is_empty());
    let seqs: Vec<u32> = s.decisions.iter().map(|d| d.0).collect();
    assert_eq!(seqs, vec![0, 1, 2, 4, 5]);
    assert_eq!(String::from_utf8(log).unwrap().lines().count(), 5);
}

#[test]
fn truncated_tail_is_skipped() {
    let f = frames(&[], 3);
    let mut bytes = f.concat();
    bytes.truncate(2 * FRAME_LEN + 100);
    let s = serve(
        bytes.as_slice(),
        forest(),
        std::io::sink(),
        &StreamOptions::default(),
    )
    .unwrap();
    assert_eq!((s.frames, s.skipped), (2, 1));
}

#[test]
fn out_of_order_frames_are_counted() {
    let f = frames(&[], 4);
    let bytes = [&f[0][..], &f[2], &f[1], &f[3]].concat();
    let s = serve(
        bytes.as_slice(),
        forest(),
        std::io::sink(),
        &StreamOptions::default(),
    )
    .unwrap();
    assert_eq!((s.frames, s.out_of_order), (4, 1));
}

#[test]
fn event_log_is_reproducible_without_latency() {
    let bytes = replay_session(&ReplaySpec::new(
        SimConfig::default(),
        schedule(&[("Sc2", 0.03)]),
        8,
    ))
    .unwrap();
    let opts = StreamOptions {
        record_latency: false,
        ..StreamOptions::default()
    };
    let run = || {
        let mut log = Vec::new();
        serve(bytes.as_slice(), forest(), &mut log, &opts).unwrap();
        log
    };
    let a = run();
    assert_eq!(a, run());
    assert!(String::from_utf8(a)
        .unwrap()
        .lines()
        .all(|l| l.ends_with("\t0")));
}

#[test]
fn frame_processing_meets_budget() {
    let bytes = replay_session(&ReplaySpec::new(
        SimConfig::default(),
        FaultSchedule::new(),
        10,
    ))
    .unwrap();
    let s = serve(
        bytes.as_slice(),
        forest(),
        std::io::sink(),
        &StreamOptions::default(),
    )
    .unwrap();
    assert!(s.max_latency.as_millis() < 20, "{:?}", s.max_latency);
}

fn fault_set_strategy() -> impl Strategy<Value = FaultSet> {
    let classes = ClassSet::standard();
    let sets: Vec<FaultSet> = classes.iter().map(|c| c.components).collect();
    proptest::sample::select(sets)
}

proptest! {
    #[test]
    fn latch_only_grows(decisions in proptest::collection::vec(fault_set_strategy(), 0..40)) {
        let mut latch = FaultLatch::default();
        let mut before = FaultSet::EMPTY;
        let mut seen = FaultSet::EMPTY;
        for d in decisions {
            seen = seen.union(d);
            let now = latch.update(d);
            prop_assert!(now.is_superset(before));
            prop_assert!(seen.is_superset(now));
            before = now;
        }
    }

    #[test]
    fn votes_sum_to_label_count(labels in proptest::collection::vec(0u16..17, 200)) {
        let classes = ClassSet::standard();
        let r = window_decision(0, &labels, &classes, 0.3);
        prop_assert_eq!(r.votes.iter().sum::<u32>(), 200);
        prop_assert!((0.0..=1.0).contains(&r.fault_fraction));
        if r.fault_fraction < 0.3 {
            prop_assert_eq!(r.decision, 0);
        } else {
            prop_assert!(r.decision != 0);
        }
    }
}
