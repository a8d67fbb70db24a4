use crate::error::{Error, Result};
use crate::sim::{simulate, FaultSchedule, Scenario, SimConfig};
use crate::stream::{encode_frame, FRAME_SAMPLES};

/// A simulated session to be sent as wire frames.
///
/// Onsets in `schedule` are relative to the first streamed sample. The
/// simulation runs `warmup_cycles` healthy cycles before streaming starts
/// so the session begins in steady state.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplaySpec {
    pub sim: SimConfig,
    pub schedule: FaultSchedule,
    pub frames: usize,
    pub warmup_cycles: usize,
    pub first_seq: u32,
}

impl ReplaySpec {
    pub fn new(sim: SimConfig, schedule: FaultSchedule, frames: usize) -> Self {
        ReplaySpec {
            sim,
            schedule,
            frames,
            warmup_cycles: 5,
            first_seq: 0,
        }
    }
}

pub fn replay_frames(spec: &ReplaySpec) -> Result<Vec<Vec<u8>>> {
    let cfg = spec.sim;
    cfg.validate()?;
    let lead = spec.warmup_cycles * cfg.samples_per_period();
    let lead_t = lead as f64 * cfg.dt_sample;
    let n = lead + spec.frames * FRAME_SAMPLES;
    let duration = n as f64 * cfg.dt_sample;
    let mut schedule = FaultSchedule::new();
    for &(id, t) in spec.schedule.events() {
        schedule.push(id, lead_t + t);
    }
    let trace = simulate(&Scenario {
        config: cfg,
        schedule,
        duration,
    })?;
    if trace.samples.len() != n {
        return Err(Error::Config(
            "sample grid does not divide the replay duration".into(),
        ));
    }
    trace.samples[lead..]
        .chunks_exact(FRAME_SAMPLES)
        .enumerate()
        .map(|(k, chunk)| {
            let samples: Vec<[f32; 3]> = chunk
                .iter()
                .map(|s| s.currents().map(|v| v as f32))
                .collect();
            Ok(encode_frame(
                spec.first_seq.wrapping_add(k as u32),
                &samples,
            )?)
        })
        .collect()
}

/// Whole session as one byte stream.
pub fn replay_session(spec: &ReplaySpec) -> Result<Vec<u8>> {
    Ok(replay_frames(spec)?.concat())
}
