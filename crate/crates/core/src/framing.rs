//! Message framing: bit modulation onto acid/base injections, preamble
//! synchronization and per-symbol windowing of the received trace.

use crate::channel::{noiseless_ph, ChannelConfig, PhTrace, Polarity, PulseEvent, PulseSchedule};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Pause durations that give the 250, 334, 380 and 500 ms symbol intervals.
pub const STANDARD_PAUSES_S: [f64; 4] = [0.220, 0.304, 0.350, 0.470];

/// Number of all-zero symbols appended as an end-of-message marker.
pub const TERMINATOR_LEN: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrameSpec {
    pub injection_s: f64,
    pub pause_s: f64,
    pub preamble_injection_s: f64,
    pub preamble_silence_s: f64,
    /// Minimum silence after the last symbol, so the channel delay of the
    /// final injection still lands inside the trace.
    pub tail_s: f64,
    pub append_terminator: bool,
}

impl Default for FrameSpec {
    fn default() -> Self {
        Self {
            injection_s: 0.030,
            pause_s: 0.220,
            preamble_injection_s: 0.100,
            preamble_silence_s: 0.900,
            tail_s: 1.0,
            append_terminator: false,
        }
    }
}

impl FrameSpec {
    pub fn with_pause(pause_s: f64) -> Self {
        Self {
            pause_s,
            ..Self::default()
        }
    }

    pub fn symbol_interval(&self) -> f64 {
        self.injection_s + self.pause_s
    }

    pub fn preamble_total(&self) -> f64 {
        self.preamble_injection_s + self.preamble_silence_s
    }

    /// Symbol interval rounded to whole milliseconds.
    pub fn interval_ms(&self) -> u32 {
        (self.symbol_interval() * 1000.0).round() as u32
    }

    pub fn validate(&self) -> Result<()> {
        let all_positive = [
            self.injection_s,
            self.pause_s,
            self.preamble_injection_s,
            self.preamble_silence_s,
        ]
        .iter()
        .all(|&d| d > 0.0);
        if !all_positive || self.tail_s < 0.0 {
            return Err(Error::InvalidFrame("durations must be positive".into()));
        }
        Ok(())
    }

    /// Sample offset (from the onset) of the first sample of symbol `k`.
    pub fn symbol_start(&self, k: usize, fs: f64) -> usize {
        ((self.preamble_total() + k as f64 * self.symbol_interval()) * fs + 1e-9).floor() as usize
    }

    /// Samples per symbol window.
    pub fn window_len(&self, fs: f64) -> usize {
        (self.symbol_interval() * fs).round() as usize
    }
}

/// Maps bits to injections: the acid preamble at t = 0, then one
/// `injection_s` pulse per symbol (acid for 0, base for 1).
pub fn modulate(bits: &[u8], spec: &FrameSpec) -> Result<PulseSchedule> {
    if bits.is_empty() {
        return Err(Error::EmptyBits);
    }
    spec.validate()?;
    let mut events = vec![PulseEvent {
        start_s: 0.0,
        duration_s: spec.preamble_injection_s,
        polarity: Polarity::Acid,
    }];
    let terminator = if spec.append_terminator { TERMINATOR_LEN } else { 0 };
    let symbols = bits.iter().copied().chain(std::iter::repeat_n(0u8, terminator));
    let t0 = spec.preamble_total();
    let interval = spec.symbol_interval();
    let mut n = 0;
    for (i, bit) in symbols.enumerate() {
        events.push(PulseEvent {
            start_s: t0 + i as f64 * interval,
            duration_s: spec.injection_s,
            polarity: if bit == 0 { Polarity::Acid } else { Polarity::Base },
        });
        n = i + 1;
    }
    let total_duration_s = t0 + n as f64 * interval + interval.max(spec.tail_s);
    Ok(PulseSchedule {
        events,
        total_duration_s,
    })
}

/// Noise-free pH deviation from baseline produced by the preamble alone,
/// over the preamble period, and the index of its arrival (first sample
/// more than 1.5 ADC steps below baseline).
pub fn preamble_template(spec: &FrameSpec, cfg: &ChannelConfig) -> Result<(Vec<f64>, usize)> {
    let schedule = PulseSchedule {
        events: vec![PulseEvent {
            start_s: 0.0,
            duration_s: spec.preamble_injection_s,
            polarity: Polarity::Acid,
        }],
        total_duration_s: spec.preamble_total(),
    };
    let template: Vec<f64> = noiseless_ph(&schedule, cfg)?
        .into_iter()
        .map(|x| x - cfg.baseline_ph)
        .collect();
    let edge = -1.5 * cfg.adc_step();
    let arrival = template
        .iter()
        .position(|&x| x < edge)
        .ok_or(Error::SyncNotFound)?;
    Ok((template, arrival))
}

/// Finds the preamble's acid onset.
///
/// The baseline-removed trace is correlated against the expected preamble
/// response ([`preamble_template`]) at every lag within one preamble period.
/// The best lag must carry at least a quarter of the nominal preamble
/// amplitude and stand 4 noise standard deviations above zero; the onset is
/// that lag plus the template's own arrival index.
pub fn detect_sync(trace: &PhTrace, spec: &FrameSpec, cfg: &ChannelConfig) -> Result<usize> {
    let (template, arrival) = preamble_template(spec, cfg)?;
    let n = template.len();
    if trace.samples.len() < n {
        return Err(Error::SyncNotFound);
    }
    let energy: f64 = template.iter().map(|p| p * p).sum();
    let max_lag = (trace.samples.len() - n).min(n);
    let mut best = (0, f64::NEG_INFINITY);
    for lag in 0..=max_lag {
        let score: f64 = trace.samples[lag..lag + n]
            .iter()
            .zip(&template)
            .map(|(x, p)| (x - cfg.baseline_ph) * p)
            .sum();
        if score > best.1 {
            best = (lag, score);
        }
    }
    let (lag, score) = best;
    // quantization residue of a flat trace is at most half a step per sample
    let floor = (4.0 * cfg.noise_std_ph * energy.sqrt()).max(0.25 * energy);
    if score < floor {
        return Err(Error::SyncNotFound);
    }
    Ok(lag + arrival)
}

/// Cuts `n` equal-length symbol windows referenced to `onset`.
pub fn slice_symbols<'a>(
    trace: &'a PhTrace,
    onset: usize,
    spec: &FrameSpec,
    n: usize,
) -> Result<Vec<&'a [f64]>> {
    let fs = trace.sample_rate_hz;
    let len = spec.window_len(fs);
    let available = (0..)
        .take_while(|&k| onset + spec.symbol_start(k, fs) + len <= trace.samples.len())
        .take(n + 1)
        .count();
    if available < n {
        return Err(Error::TraceTooShort {
            available,
            requested: n,
        });
    }
    Ok((0..n)
        .map(|k| {
            let start = onset + spec.symbol_start(k, fs);
            &trace.samples[start..start + len]
        })
        .collect())
}

/// Renders bits as an ASCII `0`/`1` string.
pub fn bits_to_string(bits: &[u8]) -> String {
    bits.iter().map(|&b| if b == 0 { '0' } else { '1' }).collect()
}

pub fn bits_from_str(s: &str) -> Result<Vec<u8>> {
    s.trim()
        .chars()
        .map(|c| match c {
            '0' => Ok(0),
            '1' => Ok(1),
            other => Err(Error::Parse(format!("bit string contains `{other}`"))),
        })
        .collect()
}
