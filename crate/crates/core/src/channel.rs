//! Synthetic acid/base propagation channel.
//!
//! The simulator maps an injection schedule to a received pH trace in stages:
//! rectangular injection waveform, linear dispersion through a causal
//! inverse-Gaussian-shaped kernel (net H+ concentration), water-equilibrium
//! pH transduction, a first-order probe lag, Gaussian sensor noise, clamping
//! and ADC quantization. Everything is a pure function of
//! `(schedule, config, seed)`.

use crate::error::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{BufRead, Write};

/// Water autoionization constant, [H+][OH-] at 25 C.
pub const KW: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    /// Mean arrival delay of the dispersion kernel, seconds.
    pub transit_mean_s: f64,
    /// Kernel shape; larger is narrower.
    pub dispersion_shape: f64,
    /// Injected-ion equivalent per second of pumping, mol/L.
    pub pulse_amplitude_mol_per_l: f64,
    /// Log-normal spread of the per-injection pumped amount (0 disables).
    pub amplitude_jitter: f64,
    /// First-order pH probe time constant, seconds (0 disables).
    pub sensor_time_constant_s: f64,
    pub baseline_ph: f64,
    /// Pre-quantization Gaussian noise, pH units.
    pub noise_std_ph: f64,
    pub sample_rate_hz: f64,
    pub adc_bits: u32,
    pub adc_range_ph: [f64; 2],
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            transit_mean_s: 0.4,
            dispersion_shape: 20.0,
            pulse_amplitude_mol_per_l: 1e-4,
            amplitude_jitter: 0.0,
            sensor_time_constant_s: 0.0,
            baseline_ph: 7.0,
            noise_std_ph: 0.02,
            sample_rate_hz: 200.0,
            adc_bits: 10,
            adc_range_ph: [0.0, 14.0],
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.transit_mean_s > 0.0) {
            return bad("transit_mean_s must be > 0");
        }
        if !(self.dispersion_shape > 0.0) {
            return bad("dispersion_shape must be > 0");
        }
        if !(self.sample_rate_hz > 0.0) {
            return bad("sample_rate_hz must be > 0");
        }
        if !(self.adc_range_ph[0] < self.adc_range_ph[1]) {
            return bad("adc_range_ph lo must be below hi");
        }
        if self.adc_bits < 1 || self.adc_bits > 32 {
            return bad("adc_bits must be in 1..=32");
        }
        if !(self.baseline_ph > 0.0 && self.baseline_ph < 14.0) {
            return bad("baseline_ph must be in (0, 14)");
        }
        if !(self.noise_std_ph >= 0.0)
            || !(self.amplitude_jitter >= 0.0)
            || !(self.sensor_time_constant_s >= 0.0)
            || !(self.pulse_amplitude_mol_per_l >= 0.0)
        {
            return bad("noise, jitter, probe lag and amplitude must be non-negative");
        }
        Ok(())
    }

    pub fn sample_period(&self) -> f64 {
        1.0 / self.sample_rate_hz
    }

    /// Width of one quantization step in pH units.
    pub fn adc_step(&self) -> f64 {
        (self.adc_range_ph[1] - self.adc_range_ph[0]) / self.adc_levels_minus_one()
    }

    fn adc_levels_minus_one(&self) -> f64 {
        ((1u64 << self.adc_bits) - 1) as f64
    }

    /// Maps a pH value to the nearest representable ADC output.
    pub fn quantize(&self, ph: f64) -> f64 {
        let [lo, hi] = self.adc_range_ph;
        let clamped = ph.clamp(lo, hi);
        let code = ((clamped - lo) / (hi - lo) * self.adc_levels_minus_one()).round();
        lo + code * self.adc_step()
    }

    /// Short hex token identifying this configuration.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let hash = Sha256::digest(json.as_bytes());
        hash[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Acid,
    Base,
}

impl Polarity {
    /// +1 for acid (adds H+), -1 for base.
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Acid => 1.0,
            Polarity::Base => -1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Acid => "acid",
            Polarity::Base => "base",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseEvent {
    pub start_s: f64,
    pub duration_s: f64,
    pub polarity: Polarity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSchedule {
    pub events: Vec<PulseEvent>,
    pub total_duration_s: f64,
}

impl PulseSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.total_duration_s > 0.0) {
            return Err(Error::InvalidSchedule("total_duration_s must be > 0".into()));
        }
        let mut prev = f64::NEG_INFINITY;
        for (i, e) in self.events.iter().enumerate() {
            if e.start_s < prev {
                return Err(Error::InvalidSchedule(format!("event {i} out of order")));
            }
            if e.start_s < 0.0 || !(e.duration_s > 0.0) {
                return Err(Error::InvalidSchedule(format!("event {i} has bad timing")));
            }
            if e.start_s + e.duration_s > self.total_duration_s + 1e-9 {
                return Err(Error::InvalidSchedule(format!("event {i} runs past the end")));
            }
            prev = e.start_s;
        }
        Ok(())
    }

    /// Merges two schedules over the longer of the two durations.
    pub fn union(&self, other: &PulseSchedule) -> PulseSchedule {
        let mut events: Vec<PulseEvent> = self.events.iter().chain(&other.events).copied().collect();
        events.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
        PulseSchedule {
            events,
            total_duration_s: self.total_duration_s.max(other.total_duration_s),
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "start_s,duration_s,polarity")?;
        for e in &self.events {
            writeln!(w, "{:.6},{:.6},{}", e.start_s, e.duration_s, e.polarity.as_str())?;
        }
        Ok(())
    }

    /// Reads the CSV written by [`PulseSchedule::write_csv`]. Comment lines
    /// (`#`) are skipped; the total duration is not stored in the file.
    pub fn read_csv<R: BufRead>(r: R, total_duration_s: f64) -> Result<PulseSchedule> {
        let mut events = Vec::new();
        let mut header_seen = false;
        for line in r.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !header_seen {
                if line != "start_s,duration_s,polarity" {
                    return Err(Error::Parse(format!("unexpected schedule header `{line}`")));
                }
                header_seen = true;
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 {
                return Err(Error::Parse(format!("bad schedule row `{line}`")));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("{s}: {e}")));
            let polarity = match cols[2] {
                "acid" => Polarity::Acid,
                "base" => Polarity::Base,
                other => return Err(Error::Parse(format!("unknown polarity `{other}`"))),
            };
            events.push(PulseEvent {
                start_s: num(cols[0])?,
                duration_s: num(cols[1])?,
                polarity,
            });
        }
        let schedule = PulseSchedule {
            events,
            total_duration_s,
        };
        schedule.validate()?;
        Ok(schedule)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhTrace {
    pub sample_rate_hz: f64,
    pub samples: Vec<f64>,
    pub seed: u64,
    pub config_digest: String,
}

impl PhTrace {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "time_s,ph")?;
        for (i, ph) in self.samples.iter().enumerate() {
            writeln!(w, "{:.6},{:.6}", i as f64 / self.sample_rate_hz, ph)?;
        }
        Ok(())
    }

    /// Reads a `time_s,ph` CSV. The sample rate is recovered from the first
    /// two timestamps; seed and digest come from the caller (manifest).
    pub fn read_csv<R: BufRead>(r: R, seed: u64, config_digest: &str) -> Result<PhTrace> {
        let mut times = Vec::new();
        let mut samples = Vec::new();
        let mut header_seen = false;
        for line in r.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !header_seen {
                if line != "time_s,ph" {
                    return Err(Error::Parse(format!("unexpected trace header `{line}`")));
                }
                header_seen = true;
                continue;
            }
            let (t, ph) = line
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("bad trace row `{line}`")))?;
            let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("{s}: {e}")));
            times.push(parse(t)?);
            samples.push(parse(ph)?);
        }
        if times.len() < 2 {
            return Err(Error::Parse("trace needs at least two samples".into()));
        }
        let dt = times[1] - times[0];
        if !(dt > 0.0) {
            return Err(Error::Parse("non-increasing timestamps".into()));
        }
        Ok(PhTrace {
            sample_rate_hz: (1.0 / dt * 1e3).round() / 1e3,
            samples,
            seed,
            config_digest: config_digest.to_string(),
        })
    }
}

fn raw_kernel(tau: f64, cfg: &ChannelConfig) -> f64 {
    if tau <= 0.0 {
        return 0.0;
    }
    let d = tau - cfg.transit_mean_s;
    tau.powf(-1.5) * (-cfg.dispersion_shape * d * d / tau).exp()
}

/// Number of kernel taps kept on the sample grid (20 transit means).
pub fn kernel_len(cfg: &ChannelConfig) -> usize {
    (20.0 * cfg.transit_mean_s * cfg.sample_rate_hz).floor() as usize
}

fn kernel_norm(cfg: &ChannelConfig) -> f64 {
    let dt = cfg.sample_period();
    let mass: f64 = (1..=kernel_len(cfg))
        .map(|k| raw_kernel(k as f64 * dt, cfg))
        .sum::<f64>()
        * dt;
    1.0 / mass
}

/// Channel impulse response at delay `tau` (per second). Zero for `tau <= 0`;
/// normalized so that its sum over the sample grid times the sample period is 1.
pub fn impulse_response(tau: f64, cfg: &ChannelConfig) -> f64 {
    raw_kernel(tau, cfg) * kernel_norm(cfg)
}

/// The impulse response sampled at `k * dt` for `k = 0..=kernel_len`.
pub fn kernel_taps(cfg: &ChannelConfig) -> Vec<f64> {
    let dt = cfg.sample_period();
    let norm = kernel_norm(cfg);
    (0..=kernel_len(cfg))
        .map(|k| raw_kernel(k as f64 * dt, cfg) * norm)
        .collect()
}

fn n_samples(schedule: &PulseSchedule, cfg: &ChannelConfig) -> usize {
    (schedule.total_duration_s * cfg.sample_rate_hz + 1e-9).floor() as usize
}

fn sample_index(t: f64, fs: f64) -> usize {
    (t * fs).round().max(0.0) as usize
}

/// Per-event pumped amounts relative to nominal, one per event in order.
fn event_gains(n: usize, jitter: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if jitter == 0.0 {
        return vec![1.0; n];
    }
    // mean-one log-normal
    let normal = Normal::new(-0.5 * jitter * jitter, jitter).expect("finite jitter");
    (0..n).map(|_| normal.sample(rng).exp()).collect()
}

fn superpose(schedule: &PulseSchedule, cfg: &ChannelConfig, gains: &[f64]) -> Vec<f64> {
    let fs = cfg.sample_rate_hz;
    let dt = cfg.sample_period();
    let n = n_samples(schedule, cfg);
    let taps = kernel_taps(cfg);
    let mut out = vec![0.0; n];
    // u is sparse (only active pump samples), so scatter each active sample
    // through the kernel instead of a dense convolution.
    for (event, gain) in schedule.events.iter().zip(gains) {
        let amp = event.polarity.sign() * cfg.pulse_amplitude_mol_per_l * gain;
        let i0 = sample_index(event.start_s, fs);
        let i1 = sample_index(event.start_s + event.duration_s, fs);
        for m in i0..i1.min(n) {
            let end = (m + taps.len()).min(n);
            for (slot, tap) in out[m..end].iter_mut().zip(&taps) {
                *slot += amp * tap * dt;
            }
        }
    }
    out
}

/// Net injected H+ concentration (acid positive) on the sample grid.
pub fn net_ion_concentration(schedule: &PulseSchedule, cfg: &ChannelConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    schedule.validate()?;
    Ok(superpose(schedule, cfg, &vec![1.0; schedule.events.len()]))
}

/// pH after adding net concentration `c` (mol/L, acid positive) to water at
/// `baseline_ph`, solving the charge balance [H+] - Kw/[H+] = ctot exactly.
pub fn ph_from_net(c: f64, baseline_ph: f64) -> f64 {
    let h0 = 10f64.powf(-baseline_ph);
    let c0 = h0 - KW / h0;
    let ctot = c0 + c;
    let h = if ctot >= 0.0 {
        (ctot + (ctot * ctot + 4.0 * KW).sqrt()) / 2.0
    } else {
        // same root, rewritten to avoid cancellation when ctot << 0
        2.0 * KW / ((ctot * ctot + 4.0 * KW).sqrt() - ctot)
    };
    -h.log10()
}

fn probe_lag(ph: &mut [f64], cfg: &ChannelConfig) {
    if cfg.sensor_time_constant_s <= 0.0 {
        return;
    }
    let alpha = 1.0 - (-cfg.sample_period() / cfg.sensor_time_constant_s).exp();
    let mut state = cfg.baseline_ph;
    for x in ph.iter_mut() {
        state += alpha * (*x - state);
        *x = state;
    }
}

/// Noise-free pH at the probe (after transduction and probe lag, before noise
/// and quantization), with nominal pump amounts.
pub fn noiseless_ph(schedule: &PulseSchedule, cfg: &ChannelConfig) -> Result<Vec<f64>> {
    let mut ph: Vec<f64> = net_ion_concentration(schedule, cfg)?
        .into_iter()
        .map(|c| ph_from_net(c, cfg.baseline_ph))
        .collect();
    probe_lag(&mut ph, cfg);
    Ok(ph)
}

/// Runs the full channel. Identical `(schedule, cfg, seed)` give bit-identical
/// traces.
pub fn simulate(schedule: &PulseSchedule, cfg: &ChannelConfig, seed: u64) -> Result<PhTrace> {
    cfg.validate()?;
    schedule.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gains = event_gains(schedule.events.len(), cfg.amplitude_jitter, &mut rng);
    let mut ph: Vec<f64> = superpose(schedule, cfg, &gains)
        .into_iter()
        .map(|c| ph_from_net(c, cfg.baseline_ph))
        .collect();
    probe_lag(&mut ph, cfg);
    if cfg.noise_std_ph > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_std_ph).expect("finite noise std");
        for x in ph.iter_mut() {
            *x += normal.sample(&mut rng);
        }
    }
    let samples = ph.into_iter().map(|x| cfg.quantize(x)).collect();
    Ok(PhTrace {
        sample_rate_hz: cfg.sample_rate_hz,
        samples,
        seed,
        config_digest: cfg.digest(),
    })
}
