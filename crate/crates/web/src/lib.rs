//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Three views: a simulated received trace with the detected onset and symbol
//! windows, the channel impulse/pulse response, and a rate-of-change eye
//! diagram. Errors cross the boundary as strings.

use phlink::channel::{
    kernel_taps, noiseless_ph, simulate, ChannelConfig, Polarity, PulseEvent, PulseSchedule,
};
use phlink::features::{bin_features, N_DIFFS};
use phlink::framing::{bits_from_str, detect_sync, modulate, slice_symbols, FrameSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

fn msg(e: phlink::Error) -> String {
    e.to_string()
}

#[wasm_bindgen]
pub struct Link {
    channel: ChannelConfig,
}

#[wasm_bindgen]
pub struct Trace {
    samples: Vec<f64>,
    onset: i32,
    symbol_starts: Vec<u32>,
    window_len: u32,
}

#[wasm_bindgen]
impl Trace {
    #[wasm_bindgen(getter)]
    pub fn samples(&self) -> Vec<f64> {
        self.samples.clone()
    }

    /// Detected preamble onset, or -1 when sync failed.
    #[wasm_bindgen(getter)]
    pub fn onset(&self) -> i32 {
        self.onset
    }

    #[wasm_bindgen(getter)]
    pub fn symbol_starts(&self) -> Vec<u32> {
        self.symbol_starts.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn window_len(&self) -> u32 {
        self.window_len
    }
}

#[wasm_bindgen]
pub struct Eye {
    diffs: Vec<f64>,
    bits: Vec<u8>,
}

#[wasm_bindgen]
impl Eye {
    /// Seven rate-of-change values per symbol, symbol-major.
    #[wasm_bindgen(getter)]
    pub fn diffs(&self) -> Vec<f64> {
        self.diffs.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn bits(&self) -> Vec<u8> {
        self.bits.clone()
    }
}

impl Default for Link {
    fn default() -> Self {
        Self::new()
    }
}

#[wasm_bindgen]
impl Link {
    /// Starts from the repository's experiment channel.
    #[wasm_bindgen(constructor)]
    pub fn new() -> Link {
        Link {
            channel: ChannelConfig {
                transit_mean_s: 0.6,
                dispersion_shape: 1.0,
                pulse_amplitude_mol_per_l: 1e-6,
                noise_std_ph: 0.15,
                ..ChannelConfig::default()
            },
        }
    }

    pub fn set_transit_mean(&mut self, seconds: f64) {
        self.channel.transit_mean_s = seconds;
    }

    pub fn set_dispersion(&mut self, shape: f64) {
        self.channel.dispersion_shape = shape;
    }

    pub fn set_amplitude(&mut self, mol_per_l: f64) {
        self.channel.pulse_amplitude_mol_per_l = mol_per_l;
    }

    pub fn set_noise(&mut self, std_ph: f64) {
        self.channel.noise_std_ph = std_ph;
    }

    pub fn sample_rate(&self) -> f64 {
        self.channel.sample_rate_hz
    }

    /// Transmits `bits` (a 0/1 string) with the given pause and runs the
    /// receiver front end on the result.
    pub fn trace(&self, bits: &str, pause_s: f64, seed: u32) -> Result<Trace, String> {
        let bits = bits_from_str(bits).map_err(msg)?;
        let spec = FrameSpec::with_pause(pause_s);
        let schedule = modulate(&bits, &spec).map_err(msg)?;
        let trace = simulate(&schedule, &self.channel, seed as u64).map_err(msg)?;
        let fs = self.channel.sample_rate_hz;
        let onset = detect_sync(&trace, &spec, &self.channel).ok();
        let symbol_starts = match onset {
            Some(o) if slice_symbols(&trace, o, &spec, bits.len()).is_ok() => (0..bits.len())
                .map(|k| (o + spec.symbol_start(k, fs)) as u32)
                .collect(),
            _ => Vec::new(),
        };
        Ok(Trace {
            samples: trace.samples,
            onset: onset.map_or(-1, |o| o as i32),
            symbol_starts,
            window_len: spec.window_len(fs) as u32,
        })
    }

    /// Kernel taps on the sample grid (per second).
    pub fn impulse_response(&self) -> Result<Vec<f64>, String> {
        self.channel.validate().map_err(msg)?;
        Ok(kernel_taps(&self.channel))
    }

    /// Noise-free pH after one injection of `injection_s` at t = 0.
    pub fn pulse_response(&self, injection_s: f64, acid: bool, duration_s: f64) -> Result<Vec<f64>, String> {
        let schedule = PulseSchedule {
            events: vec![PulseEvent {
                start_s: 0.0,
                duration_s: injection_s,
                polarity: if acid { Polarity::Acid } else { Polarity::Base },
            }],
            total_duration_s: duration_s,
        };
        noiseless_ph(&schedule, &self.channel).map_err(msg)
    }

    /// Random `n_bits` message at one pause; returns its eye-diagram rows.
    pub fn eye(&self, pause_s: f64, n_bits: u32, seed: u32) -> Result<Eye, String> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
        rng.set_stream(1);
        let bits: Vec<u8> = (0..n_bits).map(|_| rng.random_range(0..2u8)).collect();
        let spec = FrameSpec::with_pause(pause_s);
        let schedule = modulate(&bits, &spec).map_err(msg)?;
        let trace = simulate(&schedule, &self.channel, seed as u64).map_err(msg)?;
        let onset = detect_sync(&trace, &spec, &self.channel).map_err(msg)?;
        let windows = slice_symbols(&trace, onset, &spec, bits.len()).map_err(msg)?;
        let mut diffs = Vec::with_capacity(bits.len() * N_DIFFS);
        for w in windows {
            diffs.extend_from_slice(&bin_features(w).map_err(msg)?.diffs);
        }
        Ok(Eye { diffs, bits })
    }
}
