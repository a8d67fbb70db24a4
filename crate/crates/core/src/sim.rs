//! Behavioral model of a three-level NPC inverter feeding a star RL load.
//!
//! Each phase leg is driven by phase-disposition SPWM (two in-phase
//! triangular carriers stacked on `[0, 1]` and `[-1, 0]`). The commanded
//! work mode is turned into a gate vector, faulted gates are masked off, and
//! the pole voltage actually imposed is resolved from the conduction path
//! available for the present current direction. The load is integrated with
//! forward Euler at `dt_sim` and decimated to `dt_sample`.
//!
//! The dc link is two stiff `Vdc/2` sources; neutral-point drift is not
//! modeled.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fault::{FaultSet, Phase, SwitchId};

/// Current magnitude below which a phase is treated as not conducting.
pub const ZERO_CURRENT_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// DC link voltage, V.
    pub vdc: f64,
    /// Output (fundamental) frequency, Hz.
    pub f_out: f64,
    /// Carrier frequency, Hz.
    pub f_sw: f64,
    /// Load resistance per phase, ohm.
    pub r: f64,
    /// Load inductance per phase, H.
    pub l: f64,
    /// Modulation index.
    pub m_a: f64,
    /// Integration step, s.
    pub dt_sim: f64,
    /// Output sampling interval, s.
    pub dt_sample: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            vdc: 200.0,
            f_out: 50.0,
            f_sw: 12_800.0,
            r: 10.0,
            l: 0.01,
            m_a: 0.8,
            dt_sim: 1e-6,
            dt_sample: 1e-4,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.vdc > 0.0) {
            return fail(format!("vdc must be positive, got {}", self.vdc));
        }
        if !(self.f_out > 0.0) {
            return fail(format!("f_out must be positive, got {}", self.f_out));
        }
        if !(self.f_sw > 2.0 * self.f_out) {
            return fail(format!("f_sw ({}) must exceed 2 * f_out", self.f_sw));
        }
        if !(self.m_a > 0.0 && self.m_a <= 1.0) {
            return fail(format!("m_a must be in (0, 1], got {}", self.m_a));
        }
        if !(self.l > 0.0) {
            return fail(format!("load inductance must be positive, got {}", self.l));
        }
        if !(self.r >= 0.0) {
            return fail(format!(
                "load resistance must be non-negative, got {}",
                self.r
            ));
        }
        if !(self.dt_sim > 0.0 && self.dt_sim <= self.dt_sample) {
            return fail(format!(
                "need 0 < dt_sim <= dt_sample, got dt_sim={} dt_sample={}",
                self.dt_sim, self.dt_sample
            ));
        }
        let ratio = self.dt_sample / self.dt_sim;
        if (ratio - ratio.round()).abs() > 1e-6 * ratio {
            return fail(format!(
                "dt_sample must be an integer multiple of dt_sim, ratio {ratio}"
            ));
        }
        Ok(())
    }

    /// Fundamental period, s.
    pub fn period(&self) -> f64 {
        1.0 / self.f_out
    }

    pub fn omega(&self) -> f64 {
        2.0 * PI * self.f_out
    }

    /// Integration steps per output sample.
    pub fn decimation(&self) -> usize {
        (self.dt_sample / self.dt_sim).round() as usize
    }

    /// Integration steps per fundamental period, when the period holds a
    /// whole number of steps and of carrier periods. The modulator then runs
    /// on a wrapped step counter, like a controller timer, so its switching
    /// pattern repeats exactly every cycle instead of jittering by one step
    /// with floating-point time.
    pub fn modulator_period_steps(&self) -> Option<u64> {
        let steps = self.period() / self.dt_sim;
        let carriers = self.f_sw / self.f_out;
        let whole = |x: f64| (x - x.round()).abs() < 1e-9 * x.max(1.0);
        (whole(steps) && whole(carriers) && steps >= 1.0).then(|| steps.round() as u64)
    }

    /// Output samples per fundamental period.
    pub fn samples_per_period(&self) -> usize {
        (self.period() / self.dt_sample).round() as usize
    }
}

/// Conduction mode of one phase leg.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WorkMode {
    P,
    O,
    N,
}

impl WorkMode {
    /// Switching function value: +1, 0 or -1.
    pub fn level(self) -> i8 {
        match self {
            WorkMode::P => 1,
            WorkMode::O => 0,
            WorkMode::N => -1,
        }
    }

    /// Pole voltage of the healthy leg in this mode.
    pub fn pole_voltage(self, vdc: f64) -> f64 {
        f64::from(self.level()) * vdc / 2.0
    }
}

/// On/off state of `S_x1..S_x4` for one leg.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GateVector(pub [bool; 4]);

impl GateVector {
    pub fn g1(self) -> bool {
        self.0[0]
    }
    pub fn g2(self) -> bool {
        self.0[1]
    }
    pub fn g3(self) -> bool {
        self.0[2]
    }
    pub fn g4(self) -> bool {
        self.0[3]
    }
}

/// Phase offset of each leg's reference.
fn phase_shift(phase: Phase) -> f64 {
    match phase {
        Phase::A => 0.0,
        Phase::B => 2.0 * PI / 3.0,
        Phase::C => -2.0 * PI / 3.0,
    }
}

/// Modulating reference `m_a * sin(wt - phi)`.
pub fn reference(t: f64, phase: Phase, cfg: &SimConfig) -> f64 {
    cfg.m_a * (cfg.omega() * t - phase_shift(phase)).sin()
}

/// Upper triangular carrier on `[0, 1]`, zero at `t = 0`. The lower carrier
/// is this value minus one.
pub fn upper_carrier(t: f64, cfg: &SimConfig) -> f64 {
    let cycles = t * cfg.f_sw;
    let frac = cycles - cycles.floor();
    1.0 - (2.0 * frac - 1.0).abs()
}

/// Mode selection given the reference and the upper carrier value.
pub fn select_mode(reference: f64, upper: f64) -> WorkMode {
    let lower = upper - 1.0;
    if reference >= upper {
        WorkMode::P
    } else if reference < lower {
        WorkMode::N
    } else {
        WorkMode::O
    }
}

pub fn commanded_mode(t: f64, phase: Phase, cfg: &SimConfig) -> WorkMode {
    select_mode(reference(t, phase, cfg), upper_carrier(t, cfg))
}

pub fn gate_vector(mode: WorkMode) -> GateVector {
    match mode {
        WorkMode::P => GateVector([true, true, false, false]),
        WorkMode::O => GateVector([false, true, true, false]),
        WorkMode::N => GateVector([false, false, true, true]),
    }
}

/// Forces off every gate of `phase` whose switch is in `faults`.
pub fn apply_faults(gates: GateVector, phase: Phase, faults: FaultSet) -> GateVector {
    let mut out = gates.0;
    for (k, gate) in out.iter_mut().enumerate() {
        let id = SwitchId::new(phase, k as u8 + 1).expect("positions 1..=4");
        if faults.contains(id) {
            *gate = false;
        }
    }
    GateVector(out)
}

/// Pole voltage imposed by a leg given its commanded mode, masked gates and
/// current (positive out of the pole).
pub fn effective_pole_voltage(mode: WorkMode, masked: GateVector, i_x: f64, vdc: f64) -> f64 {
    let half = vdc / 2.0;
    let [g1, g2, g3, g4] = masked.0;
    if i_x > ZERO_CURRENT_EPS {
        match mode {
            WorkMode::P if g1 && g2 => half,
            WorkMode::P if g2 => 0.0,
            WorkMode::O if g2 => 0.0,
            // Lower antiparallel diodes carry the current.
            _ => -half,
        }
    } else if i_x < -ZERO_CURRENT_EPS {
        match mode {
            WorkMode::N if g3 && g4 => -half,
            WorkMode::N if g3 => 0.0,
            WorkMode::O if g3 => 0.0,
            // Upper antiparallel diodes carry the current.
            _ => half,
        }
    } else {
        let open = match mode {
            WorkMode::P => g1 && g2,
            WorkMode::O => g2 && g3,
            WorkMode::N => g3 && g4,
        };
        if open {
            mode.pole_voltage(vdc)
        } else {
            0.0
        }
    }
}

/// Validated star-connected RL load with an isolated neutral.
#[derive(Debug, Clone, Copy)]
struct RlLoad {
    r: f64,
    l: f64,
    dt: f64,
}

impl RlLoad {
    fn new(cfg: &SimConfig) -> Result<Self> {
        if !(cfg.l > 0.0) || !(cfg.r >= 0.0) {
            return Err(Error::Config(format!(
                "load needs L > 0 and R >= 0, got R={} L={}",
                cfg.r, cfg.l
            )));
        }
        if !(cfg.dt_sim > 0.0) {
            return Err(Error::Config(format!(
                "dt_sim must be positive, got {}",
                cfg.dt_sim
            )));
        }
        Ok(RlLoad {
            r: cfg.r,
            l: cfg.l,
            dt: cfg.dt_sim,
        })
    }

    #[inline]
    fn step(&self, i: [f64; 3], v_pole: [f64; 3]) -> [f64; 3] {
        let v_n = (v_pole[0] + v_pole[1] + v_pole[2]) / 3.0;
        let mut out = i;
        for p in 0..3 {
            out[p] = i[p] + self.dt * ((v_pole[p] - v_n) - self.r * i[p]) / self.l;
        }
        out
    }
}

/// One forward-Euler step of the load currents under the given pole voltages.
pub fn step_load(i: [f64; 3], v_pole: [f64; 3], cfg: &SimConfig) -> Result<[f64; 3]> {
    Ok(RlLoad::new(cfg)?.step(i, v_pole))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurrentSample {
    pub t: f64,
    pub ia: f64,
    pub ib: f64,
    pub ic: f64,
}

impl CurrentSample {
    pub fn new(t: f64, currents: [f64; 3]) -> Self {
        CurrentSample {
            t,
            ia: currents[0],
            ib: currents[1],
            ic: currents[2],
        }
    }

    pub fn currents(&self) -> [f64; 3] {
        [self.ia, self.ib, self.ic]
    }

    pub fn phase_current(&self, phase: Phase) -> f64 {
        self.currents()[phase.index()]
    }

    pub fn scaled(&self, k: f64) -> Self {
        CurrentSample {
            t: self.t,
            ia: self.ia * k,
            ib: self.ib * k,
            ic: self.ic * k,
        }
    }
}

/// Switch failures with individual onset times.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FaultSchedule {
    events: Vec<(SwitchId, f64)>,
}

impl FaultSchedule {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every switch of `faults` opens at `onset`.
    pub fn simultaneous(faults: FaultSet, onset: f64) -> Self {
        FaultSchedule {
            events: faults.iter().map(|id| (id, onset)).collect(),
        }
    }

    pub fn push(&mut self, id: SwitchId, onset: f64) {
        self.events.push((id, onset));
    }

    pub fn faults(&self) -> FaultSet {
        self.events.iter().map(|(id, _)| *id).collect()
    }

    /// Earliest onset, or `None` for a healthy run.
    pub fn first_onset(&self) -> Option<f64> {
        self.events.iter().map(|(_, t)| *t).reduce(f64::min)
    }

    pub fn events(&self) -> &[(SwitchId, f64)] {
        &self.events
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: SimConfig,
    pub schedule: FaultSchedule,
    pub duration: f64,
}

impl Scenario {
    pub fn new(config: SimConfig, faults: FaultSet, fault_onset: f64, duration: f64) -> Self {
        Scenario {
            config,
            schedule: FaultSchedule::simultaneous(faults, fault_onset),
            duration,
        }
    }

    pub fn healthy(config: SimConfig, duration: f64) -> Self {
        Scenario {
            config,
            schedule: FaultSchedule::new(),
            duration,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurrentTrace {
    pub config: SimConfig,
    pub fault: FaultSet,
    /// Earliest fault onset, s. Equals the run duration for a healthy run.
    pub fault_onset: f64,
    pub samples: Vec<CurrentSample>,
}

impl CurrentTrace {
    /// Writes `t,ia,ib,ic` with one row per sample.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,ia,ib,ic")?;
        for s in &self.samples {
            writeln!(out, "{},{},{},{}", s.t, s.ia, s.ib, s.ic)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Runs the inverter model and returns the decimated current trace.
///
/// Sample `k` is the load state at `t = k * dt_sample`; the run yields
/// `round(duration / dt_sample)` samples. Fault onsets are snapped to the
/// nearest integration step and each switch is masked from that step on.
pub fn simulate(scenario: &Scenario) -> Result<CurrentTrace> {
    let cfg = scenario.config;
    cfg.validate()?;
    let load = RlLoad::new(&cfg)?;
    let duration = scenario.duration;
    if !(duration >= 0.0) {
        return Err(Error::Config(format!(
            "duration must be non-negative, got {duration}"
        )));
    }
    for &(id, onset) in scenario.schedule.events() {
        if !(onset >= 0.0 && onset <= duration) {
            return Err(Error::Config(format!(
                "onset {onset} of {id} must lie in [0, duration={duration}]"
            )));
        }
    }

    let mut onsets: Vec<(u64, SwitchId)> = scenario
        .schedule
        .events()
        .iter()
        .map(|&(id, t)| ((t / cfg.dt_sim).round() as u64, id))
        .collect();
    onsets.sort();

    let decimation = cfg.decimation();
    let n_samples = (duration / cfg.dt_sample).round() as usize;
    let mut samples = Vec::with_capacity(n_samples);
    let mut active = FaultSet::EMPTY;
    let mut next_onset = 0usize;
    let mut i = [0.0f64; 3];
    let wrap = cfg.modulator_period_steps();

    for k in 0..n_samples {
        samples.push(CurrentSample::new(k as f64 * cfg.dt_sample, i));
        for s in 0..decimation {
            let step = (k * decimation + s) as u64;
            while next_onset < onsets.len() && onsets[next_onset].0 <= step {
                active.insert(onsets[next_onset].1);
                next_onset += 1;
            }
            let t = match wrap {
                Some(n) => (step % n) as f64 * cfg.dt_sim,
                None => step as f64 * cfg.dt_sim,
            };
            let upper = upper_carrier(t, &cfg);
            let mut v = [0.0f64; 3];
            for phase in Phase::ALL {
                let mode = select_mode(reference(t, phase, &cfg), upper);
                let gates = apply_faults(gate_vector(mode), phase, active);
                v[phase.index()] = effective_pole_voltage(mode, gates, i[phase.index()], cfg.vdc);
            }
            i = load.step(i, v);
        }
    }

    Ok(CurrentTrace {
        config: cfg,
        fault: scenario.schedule.faults(),
        fault_onset: scenario.schedule.first_onset().unwrap_or(duration),
        samples,
    })
}
