//! Online diagnosis over framed current windows: per-sample classification,
//! a thresholded window decision and a multi-window fault latch.

mod codec;
mod replay;

use std::collections::VecDeque;
use std::io::{self, Read, Write};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use codec::{
    decode_frame, encode_frame, FrameError, WireFrame, FRAME_LEN, FRAME_MAGIC, FRAME_SAMPLES,
    FRAME_VERSION,
};
pub use replay::{replay_frames, replay_session, ReplaySpec};

use crate::error::{Error, Result};
use crate::fault::{ClassSet, FaultSet};
use crate::forest::Forest;
use crate::sim::CurrentSample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamOptions {
    /// Minimum fraction of fault labels for a window to be called faulty.
    pub theta: f64,
    /// Number of recent window decisions the latch remembers.
    pub history: usize,
    /// Appearances within the history needed to confirm a switch.
    pub confirm: usize,
    /// Write measured per-frame latency into the event log. When off the
    /// column is 0 and logs are reproducible byte for byte.
    pub record_latency: bool,
}

impl Default for StreamOptions {
    fn default() -> Self {
        StreamOptions {
            theta: 0.3,
            history: 5,
            confirm: 2,
            record_latency: true,
        }
    }
}

impl StreamOptions {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::Config(format!(
                "theta must be in [0, 1], got {}",
                self.theta
            )));
        }
        if self.history == 0 || self.confirm == 0 || self.confirm > self.history {
            return Err(Error::Config(format!(
                "latch needs 1 <= confirm ({}) <= history ({})",
                self.confirm, self.history
            )));
        }
        Ok(())
    }
}

/// Per-sample class ids for one frame. `carry` is the last sample of the
/// previous frame; without it the first sample is paired with itself.
pub fn classify_window(forest: &Forest, frame: &WireFrame, carry: Option<[f32; 3]>) -> Vec<u16> {
    let mode = forest.feature_mode();
    let to_sample = |s: &[f32; 3]| CurrentSample::new(0.0, s.map(f64::from));
    let mut prev = to_sample(
        carry
            .as_ref()
            .or(frame.samples.first())
            .unwrap_or(&[0.0; 3]),
    );
    let mut rows = Vec::with_capacity(frame.samples.len() * mode.dim());
    for s in &frame.samples {
        let curr = to_sample(s);
        rows.extend(mode.extract(&curr, &prev));
        prev = curr;
    }
    forest.predict_batch(&rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowReport {
    pub seq: u32,
    /// Per-class label counts, indexed by class id.
    pub votes: Vec<u32>,
    pub decision: u16,
    pub fault_fraction: f64,
}

/// Fault fraction below `theta` gives the normal class; otherwise the most
/// frequent fault class wins, ties to the lowest id.
pub fn window_decision(seq: u32, labels: &[u16], classes: &ClassSet, theta: f64) -> WindowReport {
    let normal = classes.normal().id;
    let mut votes = vec![0u32; classes.len()];
    for &l in labels {
        votes[l as usize] += 1;
    }
    let faulty: u32 = labels.len() as u32 - votes[normal as usize];
    let fault_fraction = if labels.is_empty() {
        0.0
    } else {
        faulty as f64 / labels.len() as f64
    };
    let decision = if fault_fraction < theta || faulty == 0 {
        normal
    } else {
        let mut best = None::<usize>;
        for (c, &v) in votes.iter().enumerate() {
            if c != normal as usize && best.is_none_or(|b| v > votes[b]) {
                best = Some(c);
            }
        }
        best.map_or(normal, |b| b as u16)
    };
    WindowReport {
        seq,
        votes,
        decision,
        fault_fraction,
    }
}

/// Confirms a switch once it appears in `confirm` of the last `history`
/// window decisions. The confirmed set never shrinks.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultLatch {
    confirmed: FaultSet,
    history: VecDeque<FaultSet>,
    depth: usize,
    confirm: usize,
}

impl Default for FaultLatch {
    fn default() -> Self {
        FaultLatch::new(5, 2)
    }
}

impl FaultLatch {
    pub fn new(depth: usize, confirm: usize) -> Self {
        FaultLatch {
            confirmed: FaultSet::EMPTY,
            history: VecDeque::with_capacity(depth),
            depth: depth.max(1),
            confirm: confirm.max(1),
        }
    }

    pub fn confirmed(&self) -> FaultSet {
        self.confirmed
    }

    pub fn history(&self) -> impl Iterator<Item = FaultSet> + '_ {
        self.history.iter().copied()
    }

    /// Feeds the components of one window decision.
    pub fn update(&mut self, decision: FaultSet) -> FaultSet {
        if self.history.len() == self.depth {
            self.history.pop_front();
        }
        self.history.push_back(decision);
        for id in decision.iter() {
            let seen = self.history.iter().filter(|h| h.contains(id)).count();
            if seen >= self.confirm {
                self.confirmed.insert(id);
            }
        }
        self.confirmed
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SessionSummary {
    pub frames: usize,
    pub skipped: usize,
    pub out_of_order: usize,
    /// `(seq, decision class id)` per accepted frame.
    pub decisions: Vec<(u32, u16)>,
    pub confirmed: FaultSet,
    pub max_latency: Duration,
}

fn fill(source: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match source.read(&mut buf[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(got)
}

fn confirmed_field(set: FaultSet) -> String {
    if set.is_empty() {
        "-".into()
    } else {
        set.to_string()
    }
}

/// Processes frames from `source` until end of stream, writing one
/// tab-separated event line per accepted frame to `sink`:
/// `seq, decision code, fault fraction, confirmed switches, latency in us`.
///
/// Malformed frames are logged and skipped.
pub fn serve<R: Read, W: Write>(
    mut source: R,
    forest: &Forest,
    mut sink: W,
    opts: &StreamOptions,
) -> Result<SessionSummary> {
    opts.validate()?;
    let classes = forest.classes();
    let mut latch = FaultLatch::new(opts.history, opts.confirm);
    let mut summary = SessionSummary::default();
    let mut carry = None;
    let mut last_seq = None::<u32>;
    let mut buf = vec![0u8; FRAME_LEN];

    loop {
        let got = fill(&mut source, &mut buf)?;
        if got == 0 {
            break;
        }
        let start = Instant::now();
        let frame = match decode_frame(&buf[..got]) {
            Ok(f) => f,
            Err(e) => {
                log::warn!("skipping frame: {e}");
                summary.skipped += 1;
                carry = None;
                if got < FRAME_LEN {
                    break;
                }
                continue;
            }
        };
        if last_seq.is_some_and(|s| frame.seq <= s) {
            log::warn!(
                "frame {} arrived after frame {}",
                frame.seq,
                last_seq.unwrap_or(0)
            );
            summary.out_of_order += 1;
        }
        last_seq = Some(frame.seq);

        let labels = classify_window(forest, &frame, carry);
        let report = window_decision(frame.seq, &labels, classes, opts.theta);
        let decided = classes
            .get(report.decision)
            .expect("decision is a class id");
        let confirmed = latch.update(decided.components);
        let elapsed = start.elapsed();
        carry = frame.samples.last().copied();

        summary.frames += 1;
        summary.decisions.push((frame.seq, report.decision));
        summary.max_latency = summary.max_latency.max(elapsed);
        let latency_us = if opts.record_latency {
            elapsed.as_micros()
        } else {
            0
        };
        writeln!(
            sink,
            "{}\t{}\t{:.3}\t{}\t{}",
            frame.seq,
            decided.to_label_code(),
            report.fault_fraction,
            confirmed_field(confirmed),
            latency_us
        )?;
    }
    sink.flush()?;
    summary.confirmed = latch.confirmed();
    log::info!(
        "session: {} frames, {} skipped, confirmed {}, max latency {:?}",
        summary.frames,
        summary.skipped,
        confirmed_field(summary.confirmed),
        summary.max_latency
    );
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fault::SwitchId;

    fn sw(s: &str) -> SwitchId {
        s.parse().unwrap()
    }

    fn set(s: &str) -> FaultSet {
        s.parse().unwrap()
    }

    #[test]
    fn window_decision_examples() {
        let classes = ClassSet::standard();
        let sa1 = classes.find(set("Sa1")).unwrap().id;
        let sa2 = classes.find(set("Sa2")).unwrap().id;
        let sb2 = classes.find(set("Sb2")).unwrap().id;

        let r = window_decision(0, &[0; 200], &classes, 0.3);
        assert_eq!((r.decision, r.fault_fraction), (0, 0.0));
        assert_eq!(r.votes.iter().sum::<u32>(), 200);

        let mut labels = vec![0u16; 100];
        labels.extend(std::iter::repeat_n(sa1, 95));
        labels.extend(std::iter::repeat_n(sa2, 5));
        let r = window_decision(1, &labels, &classes, 0.3);
        assert_eq!((r.decision, r.fault_fraction), (sa1, 0.5));

        let mut labels = vec![0u16; 150];
        labels.extend(std::iter::repeat_n(sb2, 50));
        let r = window_decision(2, &labels, &classes, 0.3);
        assert_eq!((r.decision, r.fault_fraction), (0, 0.25));
    }

    #[test]
    fn plurality_tie_goes_to_lowest_id() {
        let classes = ClassSet::standard();
        let mut labels = vec![0u16; 100];
        labels.extend(std::iter::repeat_n(7u16, 50));
        labels.extend(std::iter::repeat_n(3u16, 50));
        assert_eq!(window_decision(0, &labels, &classes, 0.3).decision, 3);
    }

    fn run(decisions: &[&str]) -> FaultSet {
        let mut latch = FaultLatch::default();
        for d in decisions {
            latch.update(set(d));
        }
        latch.confirmed()
    }

    #[test]
    fn latch_examples() {
        assert_eq!(run(&["normal", "Sa1", "Sa1"]), FaultSet::single(sw("Sa1")));
        assert_eq!(
            run(&["normal", "Sa1", "Sa1+Sb2", "Sb2", "Sb2"]),
            set("Sa1+Sb2")
        );
        assert_eq!(run(&["normal"; 8]), FaultSet::EMPTY);
        // A single stray decision is not enough.
        assert_eq!(
            run(&["normal", "Sc3", "normal", "normal", "normal", "normal", "normal", "Sc3"]),
            FaultSet::EMPTY
        );
    }

    #[test]
    fn latch_never_forgets() {
        let mut latch = FaultLatch::default();
        latch.update(set("Sa1"));
        latch.update(set("Sa1"));
        for _ in 0..10 {
            assert!(latch.update(FaultSet::EMPTY).contains(sw("Sa1")));
        }
        assert_eq!(latch.history().count(), 5);
    }

    #[test]
    fn options_validation() {
        assert!(StreamOptions::default().validate().is_ok());
        assert!(StreamOptions {
            theta: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(StreamOptions {
            confirm: 6,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
