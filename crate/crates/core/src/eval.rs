//! Experiment harness: dataset generation, train/test split, per-interval
//! detector training, BER evaluation and eye-diagram export.

use crate::channel::{simulate, ChannelConfig, PhTrace};
use crate::error::{Error, Result};
use crate::features::{bin_features, rnn_features, svm_features, FeatureVector};
use crate::framing::{detect_sync, modulate, slice_symbols, FrameSpec, STANDARD_PAUSES_S};
use crate::rnn::{detect_sequence, train_rnn, EpochLog, RnnModel, Sequence, TrainConfig};
use crate::slope::{classify_slope, train_slope, SlopeModel};
use crate::svm::{classify_svm, train_svm, SvmModel, SvmParams};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

/// Intervals that carry test data when only short intervals are tested.
pub const SHORT_TEST_INTERVALS_MS: [u32; 3] = [250, 334, 380];

const STREAM_RECORD: u64 = 1;
const STREAM_SPLIT: u64 = 2;
const STREAM_SVM_VALIDATION: u64 = 3;
const STREAM_RNN: u64 = 4;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent child seed for `(stream, index)` under a master seed.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(stream)) ^ index)
}

#[cfg(feature = "parallel")]
fn par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
    items.iter().map(f).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub n_experiments: usize,
    pub bits_per_record: usize,
    /// One pause per symbol interval; experiments cycle through them.
    pub pauses_s: Vec<f64>,
    /// Frame template; its pause is replaced per interval.
    pub frame: FrameSpec,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n_experiments: 194,
            bits_per_record: 120,
            pauses_s: STANDARD_PAUSES_S.to_vec(),
            frame: FrameSpec::default(),
        }
    }
}

impl DatasetSpec {
    pub fn frames(&self) -> Vec<FrameSpec> {
        self.pauses_s
            .iter()
            .map(|&p| FrameSpec {
                pause_s: p,
                ..self.frame
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_experiments == 0 || self.bits_per_record == 0 {
            return Err(Error::InvalidConfig(
                "dataset needs at least one experiment and one bit".into(),
            ));
        }
        if self.pauses_s.is_empty() {
            return Err(Error::InvalidConfig("no symbol intervals configured".into()));
        }
        let mut seen = Vec::new();
        for f in self.frames() {
            f.validate()?;
            if seen.contains(&f.interval_ms()) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate interval {} ms",
                    f.interval_ms()
                )));
            }
            seen.push(f.interval_ms());
        }
        Ok(())
    }
}

/// One simulated transmission.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub index: usize,
    pub bits: Vec<u8>,
    pub frame: FrameSpec,
    pub trace: PhTrace,
    /// Seed of this record; drives both its bits and its channel noise.
    pub seed: u64,
}

impl ExperimentRecord {
    pub fn interval_ms(&self) -> u32 {
        self.frame.interval_ms()
    }
}

/// Simulates one record. Bits come from stream 1 of the record's generator,
/// the channel from stream 0.
pub fn generate_record(
    index: usize,
    seed: u64,
    frame: FrameSpec,
    n_bits: usize,
    channel: &ChannelConfig,
) -> Result<ExperimentRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let bits: Vec<u8> = (0..n_bits).map(|_| rng.random_range(0..2u8)).collect();
    let schedule = modulate(&bits, &frame)?;
    let trace = simulate(&schedule, channel, seed)?;
    Ok(ExperimentRecord {
        index,
        bits,
        frame,
        trace,
        seed,
    })
}

/// Experiment `i` uses interval `i mod intervals` and seed
/// `derive_seed(master_seed, 1, i)`.
pub fn generate_dataset(
    spec: &DatasetSpec,
    channel: &ChannelConfig,
    master_seed: u64,
) -> Result<Vec<ExperimentRecord>> {
    spec.validate()?;
    channel.validate()?;
    let frames = spec.frames();
    let jobs: Vec<usize> = (0..spec.n_experiments).collect();
    par_map(&jobs, |&i| {
        let seed = derive_seed(master_seed, STREAM_RECORD, i as u64);
        generate_record(i, seed, frames[i % frames.len()], spec.bits_per_record, channel)
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub test_fraction: f64,
    /// Only the 250/334/380 ms intervals contribute test records; the rest
    /// train only.
    pub short_intervals_only: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            short_intervals_only: false,
        }
    }
}

/// Stratified per interval: each interval's records are shuffled and the
/// first `round(f * n)` (at least 1, at most n - 1) go to test. Returns
/// sorted record positions `(train, test)`.
pub fn split_dataset(
    records: &[ExperimentRecord],
    spec: &SplitSpec,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return Err(Error::Split(format!(
            "test fraction {} outside (0, 1)",
            spec.test_fraction
        )));
    }
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (pos, r) in records.iter().enumerate() {
        groups.entry(r.interval_ms()).or_default().push(pos);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (interval, mut members) in groups {
        if spec.short_intervals_only && !SHORT_TEST_INTERVALS_MS.contains(&interval) {
            train.extend(members);
            continue;
        }
        if members.len() < 2 {
            return Err(Error::Split(format!(
                "interval {interval} ms has {} experiment(s), need at least 2",
                members.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_SPLIT, interval as u64));
        members.shuffle(&mut rng);
        let n_test =
            ((members.len() as f64 * spec.test_fraction).round() as usize).clamp(1, members.len() - 1);
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// A record after the receiver front end. `symbols` is `None` when the
/// preamble was not found or the trace ended early.
#[derive(Debug, Clone)]
pub struct Received<'a> {
    pub record: &'a ExperimentRecord,
    pub symbols: Option<Vec<FeatureVector>>,
}

/// Sync, slicing and feature extraction for one record.
pub fn receive_symbols(record: &ExperimentRecord, channel: &ChannelConfig) -> Result<Vec<FeatureVector>> {
    let onset = detect_sync(&record.trace, &record.frame, channel)?;
    slice_symbols(&record.trace, onset, &record.frame, record.bits.len())?
        .into_iter()
        .map(bin_features)
        .collect()
}

pub fn receive_all<'a>(records: &[&'a ExperimentRecord], channel: &ChannelConfig) -> Vec<Received<'a>> {
    par_map(records, |&record| Received {
        record,
        symbols: receive_symbols(record, channel).ok(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Slope,
    Svm,
    Rnn,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 3] = [DetectorKind::Slope, DetectorKind::Svm, DetectorKind::Rnn];

    pub fn as_str(self) -> &'static str {
        match self {
            DetectorKind::Slope => "slope",
            DetectorKind::Svm => "svm",
            DetectorKind::Rnn => "rnn",
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "slope" => Ok(DetectorKind::Slope),
            "svm" => Ok(DetectorKind::Svm),
            "rnn" | "lstm" => Ok(DetectorKind::Rnn),
            other => Err(Error::Parse(format!(
                "unknown detector `{other}`, expected slope, svm or rnn"
            ))),
        }
    }
}

/// Anything that turns one record's symbol features into bits.
pub trait Detector {
    fn detect(&self, symbols: &[FeatureVector]) -> Result<Vec<u8>>;
}

impl Detector for SlopeModel {
    fn detect(&self, symbols: &[FeatureVector]) -> Result<Vec<u8>> {
        Ok(symbols.iter().map(|fv| classify_slope(self, fv)).collect())
    }
}

impl Detector for SvmModel {
    fn detect(&self, symbols: &[FeatureVector]) -> Result<Vec<u8>> {
        Ok(symbols
            .iter()
            .map(|fv| classify_svm(self, &svm_features(fv)))
            .collect())
    }
}

impl Detector for RnnModel {
    fn detect(&self, symbols: &[FeatureVector]) -> Result<Vec<u8>> {
        let inputs: Vec<[f64; 15]> = symbols.iter().map(rnn_features).collect();
        detect_sequence(self, &inputs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrainedModel {
    Slope(SlopeModel),
    Svm(SvmModel),
    Rnn(RnnModel),
}

impl TrainedModel {
    pub fn kind(&self) -> DetectorKind {
        match self {
            TrainedModel::Slope(_) => DetectorKind::Slope,
            TrainedModel::Svm(_) => DetectorKind::Svm,
            TrainedModel::Rnn(_) => DetectorKind::Rnn,
        }
    }
}

impl Detector for TrainedModel {
    fn detect(&self, symbols: &[FeatureVector]) -> Result<Vec<u8>> {
        match self {
            TrainedModel::Slope(m) => m.detect(symbols),
            TrainedModel::Svm(m) => m.detect(symbols),
            TrainedModel::Rnn(m) => m.detect(symbols),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub svm: SvmParams,
    /// Box constraints tried on a validation split; the winner is retrained
    /// on all training records.
    pub c_grid: Vec<f64>,
    pub svm_validation_fraction: f64,
    pub rnn: TrainConfig,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            svm: SvmParams::default(),
            c_grid: vec![0.1, 1.0, 10.0],
            svm_validation_fraction: 0.2,
            rnn: TrainConfig::default(),
        }
    }
}

/// What training one detector on one interval produced.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalTraining {
    pub interval_ms: u32,
    pub model: TrainedModel,
    /// Training records used (those that synchronized).
    pub records: usize,
    /// Slope: training errors. Svm: validation errors per grid value.
    pub summary: Vec<(f64, usize)>,
    /// Rnn epoch log; empty for the other detectors.
    pub epochs: Vec<EpochLog>,
}

fn labelled(received: &[&Received<'_>]) -> (Vec<FeatureVector>, Vec<u8>) {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for r in received {
        if let Some(s) = &r.symbols {
            x.extend_from_slice(s);
            y.extend_from_slice(&r.record.bits);
        }
    }
    (x, y)
}

fn train_svm_tuned(
    group: &[&Received<'_>],
    cfg: &DetectorConfig,
    seed: u64,
) -> Result<(SvmModel, Vec<(f64, usize)>)> {
    let fit = |part: &[&Received<'_>], c_reg: f64| -> Result<SvmModel> {
        let (x, y) = labelled(part);
        let rows: Vec<[f64; 19]> = x.iter().map(svm_features).collect();
        Ok(train_svm(&rows, &y, &SvmParams { c_reg, ..cfg.svm })?.model)
    };
    if cfg.c_grid.len() <= 1 || group.len() < 2 {
        let c = cfg.c_grid.first().copied().unwrap_or(cfg.svm.c_reg);
        return Ok((fit(group, c)?, Vec::new()));
    }
    let mut order: Vec<&Received<'_>> = group.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val =
        ((order.len() as f64 * cfg.svm_validation_fraction).round() as usize).clamp(1, order.len() - 1);
    let (val, fit_part) = order.split_at(n_val);
    let mut scores = Vec::new();
    for &c in &cfg.c_grid {
        let model = fit(fit_part, c)?;
        let mut errors = 0;
        for r in val {
            if let Some(s) = &r.symbols {
                let bits = model.detect(s)?;
                errors += bits.iter().zip(&r.record.bits).filter(|(a, b)| a != b).count();
            }
        }
        scores.push((c, errors));
    }
    // fewest validation errors; ties keep the earlier grid value
    let best = scores.iter().min_by_key(|s| s.1).expect("non-empty grid").0;
    Ok((fit(group, best)?, scores))
}

/// Trains one detector per symbol interval found in `train`.
pub fn train_detector(
    kind: DetectorKind,
    train: &[Received<'_>],
    cfg: &DetectorConfig,
    master_seed: u64,
) -> Result<Vec<IntervalTraining>> {
    let mut groups: BTreeMap<u32, Vec<&Received<'_>>> = BTreeMap::new();
    for r in train {
        groups.entry(r.record.interval_ms()).or_default().push(r);
    }
    let groups: Vec<(u32, Vec<&Received<'_>>)> = groups.into_iter().collect();
    par_map(&groups, |(interval_ms, group)| {
        let interval_ms = *interval_ms;
        let records = group.iter().filter(|r| r.symbols.is_some()).count();
        let (model, summary, epochs) = match kind {
            DetectorKind::Slope => {
                let (x, y) = labelled(group);
                let fit = train_slope(&x, &y)?;
                (
                    TrainedModel::Slope(fit.model),
                    vec![(fit.model.threshold, fit.errors)],
                    Vec::new(),
                )
            }
            DetectorKind::Svm => {
                let seed = derive_seed(master_seed, STREAM_SVM_VALIDATION, interval_ms as u64);
                let (m, scores) = train_svm_tuned(group, cfg, seed)?;
                (TrainedModel::Svm(m), scores, Vec::new())
            }
            DetectorKind::Rnn => {
                let sequences: Vec<Sequence> = group
                    .iter()
                    .filter_map(|r| {
                        r.symbols.as_ref().map(|s| Sequence {
                            inputs: s.iter().map(|fv| rnn_features(fv).to_vec()).collect(),
                            targets: r.record.bits.clone(),
                        })
                    })
                    .collect();
                let seed = derive_seed(master_seed ^ cfg.rnn.seed, STREAM_RNN, interval_ms as u64);
                let out = train_rnn(&sequences, &TrainConfig { seed, ..cfg.rnn })?;
                (TrainedModel::Rnn(out.model), Vec::new(), out.log)
            }
        };
        Ok(IntervalTraining {
            interval_ms,
            model,
            records,
            summary,
            epochs,
        })
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub detector: String,
    pub interval_ms: u32,
    pub bits: usize,
    pub errors: usize,
    pub sync_failures: usize,
}

impl ReportRow {
    pub fn ber(&self) -> f64 {
        if self.bits == 0 {
            0.0
        } else {
            self.errors as f64 / self.bits as f64
        }
    }
}

/// Scores `models` (keyed by interval) on the test records. Records whose
/// front end failed count every bit as an error.
pub fn evaluate<D: Detector + Sync>(
    name: &str,
    models: &BTreeMap<u32, D>,
    test: &[Received<'_>],
) -> Result<Vec<ReportRow>> {
    let scored: Vec<Result<(u32, usize, usize, bool)>> = par_map(test, |r| {
        let interval_ms = r.record.interval_ms();
        let model = models.get(&interval_ms).ok_or_else(|| Error::MissingModel {
            detector: name.to_string(),
            interval_ms,
        })?;
        let n = r.record.bits.len();
        Ok(match &r.symbols {
            Some(s) => {
                let bits = model.detect(s)?;
                let errors = bits.iter().zip(&r.record.bits).filter(|(a, b)| a != b).count();
                (interval_ms, n, errors, false)
            }
            None => (interval_ms, n, n, true),
        })
    });
    let mut rows: BTreeMap<u32, ReportRow> = BTreeMap::new();
    for s in scored {
        let (interval_ms, bits, errors, failed) = s?;
        let row = rows.entry(interval_ms).or_insert_with(|| ReportRow {
            detector: name.to_string(),
            interval_ms,
            bits: 0,
            errors: 0,
            sync_failures: 0,
        });
        row.bits += bits;
        row.errors += errors;
        row.sync_failures += usize::from(failed);
    }
    Ok(rows.into_values().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub master_seed: u64,
    pub config_digest: String,
    pub split: SplitSpec,
    pub test_records: Vec<usize>,
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn ber(&self, detector: DetectorKind, interval_ms: u32) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.detector == detector.as_str() && r.interval_ms == interval_ms)
            .map(ReportRow::ber)
    }

    /// `detector,interval_ms,bits,errors,ber` under a provenance comment.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", provenance_line(&self.config_digest, self.master_seed))?;
        writeln!(w, "detector,interval_ms,bits,errors,ber")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{:.6}",
                r.detector,
                r.interval_ms,
                r.bits,
                r.errors,
                r.ber()
            )?;
        }
        Ok(())
    }
}

pub fn provenance_line(config_digest: &str, master_seed: u64) -> String {
    format!("# config_digest={config_digest} master_seed={master_seed}")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EyeRow {
    pub diff_index: usize,
    pub diff_value: f64,
    pub bit: u8,
}

/// One row per (symbol, rate-of-change index) over the synchronized
/// records of one interval.
pub fn eye_diagram_export(received: &[Received<'_>], interval_ms: u32) -> Vec<EyeRow> {
    let mut rows = Vec::new();
    for r in received.iter().filter(|r| r.record.interval_ms() == interval_ms) {
        let Some(symbols) = &r.symbols else { continue };
        for (fv, &bit) in symbols.iter().zip(&r.record.bits) {
            for (diff_index, &diff_value) in fv.diffs.iter().enumerate() {
                rows.push(EyeRow {
                    diff_index,
                    diff_value,
                    bit,
                });
            }
        }
    }
    rows
}

pub fn write_eye_csv<W: Write>(mut w: W, provenance: &str, rows: &[EyeRow]) -> Result<()> {
    writeln!(w, "{provenance}")?;
    writeln!(w, "diff_index,diff_value,bit")?;
    for r in rows {
        writeln!(w, "{},{},{}", r.diff_index, r.diff_value, r.bit)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(n: usize, bits: usize) -> DatasetSpec {
        DatasetSpec {
            n_experiments: n,
            bits_per_record: bits,
            ..Default::default()
        }
    }

    #[test]
    fn round_robin_and_determinism() {
        let cfg = ChannelConfig::default();
        let a = generate_dataset(&small_spec(4, 10), &cfg, 7).unwrap();
        let ms: Vec<u32> = a.iter().map(|r| r.interval_ms()).collect();
        assert_eq!(ms, vec![250, 334, 380, 500]);
        let b = generate_dataset(&small_spec(4, 10), &cfg, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&small_spec(4, 10), &cfg, 8).unwrap();
        assert_ne!(a[0].bits, c[0].bits);
    }

    #[test]
    fn seeds_are_distinct() {
        let mut seeds: Vec<u64> = (0..1000).map(|i| derive_seed(5, STREAM_RECORD, i)).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 1000);
        assert_ne!(derive_seed(5, 1, 0), derive_seed(5, 2, 0));
    }

    #[test]
    fn default_dataset_bit_count() {
        let spec = DatasetSpec::default();
        assert_eq!(spec.n_experiments * spec.bits_per_record, 23_280);
    }

    fn fake_records(intervals: &[u32], per: usize) -> Vec<ExperimentRecord> {
        let mut out = Vec::new();
        for &ms in intervals {
            for _ in 0..per {
                let frame = FrameSpec::with_pause(ms as f64 / 1000.0 - 0.03);
                out.push(ExperimentRecord {
                    index: out.len(),
                    bits: vec![0, 1],
                    frame,
                    trace: PhTrace {
                        sample_rate_hz: 200.0,
                        samples: vec![],
                        seed: 0,
                        config_digest: String::new(),
                    },
                    seed: 0,
                });
            }
        }
        out
    }

    #[test]
    fn split_partitions_and_stratifies() {
        let records = fake_records(&[250], 10);
        let (train, test) = split_dataset(&records, &SplitSpec::default(), 1).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));

        let records = fake_records(&[250, 334, 380, 500], 12);
        let (train, test) = split_dataset(&records, &SplitSpec::default(), 3).unwrap();
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..records.len()).collect::<Vec<_>>());
        for ms in [250, 334, 380, 500] {
            let n = test.iter().filter(|&&i| records[i].interval_ms() == ms).count();
            assert!((n as f64 - 0.2 * 12.0).abs() <= 1.0);
        }
        assert_eq!(
            split_dataset(&records, &SplitSpec::default(), 3).unwrap(),
            (train, test)
        );
    }

    #[test]
    fn short_split_leaves_500_ms_in_training() {
        let records = fake_records(&[250, 334, 380, 500], 5);
        let spec = SplitSpec {
            short_intervals_only: true,
            ..Default::default()
        };
        let (_, test) = split_dataset(&records, &spec, 3).unwrap();
        assert!(test.iter().all(|&i| records[i].interval_ms() != 500));
        assert_eq!(test.len(), 3);
    }

    #[test]
    fn split_rejects_singletons() {
        let records = fake_records(&[250], 1);
        assert!(matches!(
            split_dataset(&records, &SplitSpec::default(), 0),
            Err(Error::Split(_))
        ));
    }

    struct Oracle;
    impl Detector for Oracle {
        fn detect(&self, s: &[FeatureVector]) -> Result<Vec<u8>> {
            // bit encoded in the sign of the last diff by the test fixture
            Ok(s.iter().map(|fv| u8::from(fv.diffs[6] > 0.0)).collect())
        }
    }
    struct Inverter;
    impl Detector for Inverter {
        fn detect(&self, s: &[FeatureVector]) -> Result<Vec<u8>> {
            Ok(Oracle.detect(s)?.into_iter().map(|b| 1 - b).collect())
        }
    }

    fn encoded(bits: &[u8]) -> Vec<FeatureVector> {
        bits.iter()
            .map(|&b| {
                let mut d = [0.0; 7];
                d[6] = if b == 1 { 1.0 } else { -1.0 };
                FeatureVector {
                    bin_means: [7.0; 8],
                    diffs: d,
                    bin_mean_stat: (7.0, 0.0),
                    diff_stat: (0.0, 0.0),
                }
            })
            .collect()
    }

    #[test]
    fn stub_detectors_give_ber_0_and_1() {
        let mut records = fake_records(&[250, 500], 3);
        for (i, r) in records.iter_mut().enumerate() {
            r.bits = (0..20).map(|k| ((i + k) % 3 == 0) as u8).collect();
        }
        let received: Vec<Received<'_>> = records
            .iter()
            .map(|r| Received {
                record: r,
                symbols: Some(encoded(&r.bits)),
            })
            .collect();
        let perfect: BTreeMap<u32, Oracle> = [(250, Oracle), (500, Oracle)].into();
        let inverted: BTreeMap<u32, Inverter> = [(250, Inverter), (500, Inverter)].into();
        let rows = evaluate("oracle", &perfect, &received).unwrap();
        assert!(rows.iter().all(|r| r.ber() == 0.0 && r.bits == 60));
        let rows = evaluate("inv", &inverted, &received).unwrap();
        assert!(rows.iter().all(|r| r.ber() == 1.0));
        let only_250: BTreeMap<u32, Oracle> = [(250, Oracle)].into();
        assert!(matches!(
            evaluate("x", &only_250, &received),
            Err(Error::MissingModel { interval_ms: 500, .. })
        ));
    }

    #[test]
    fn ber_matches_recount_and_sync_failures_score_as_errors() {
        struct Fixed(Vec<u8>);
        impl Detector for Fixed {
            fn detect(&self, s: &[FeatureVector]) -> Result<Vec<u8>> {
                Ok(self.0[..s.len()].to_vec())
            }
        }
        let mut records = fake_records(&[250], 4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for r in records.iter_mut() {
            r.bits = (0..50).map(|_| rng.random_range(0..2)).collect();
        }
        let guess: Vec<u8> = (0..50).map(|_| rng.random_range(0..2)).collect();
        let received: Vec<Received<'_>> = records
            .iter()
            .enumerate()
            .map(|(i, r)| Received {
                record: r,
                symbols: (i != 2).then(|| encoded(&r.bits)),
            })
            .collect();
        let models: BTreeMap<u32, Fixed> = [(250, Fixed(guess.clone()))].into();
        let row = &evaluate("fixed", &models, &received).unwrap()[0];
        let mut recount = 0;
        for (i, r) in records.iter().enumerate() {
            recount += if i == 2 {
                50
            } else {
                r.bits.iter().zip(&guess).filter(|(a, b)| a != b).count()
            };
        }
        assert_eq!(row.errors, recount);
        assert_eq!(row.bits, 200);
        assert_eq!(row.sync_failures, 1);
    }

    #[test]
    fn eye_rows_and_separation() {
        let cfg = ChannelConfig::default();
        let spec = DatasetSpec {
            pauses_s: vec![0.47],
            ..small_spec(1, 120)
        };
        let records = generate_dataset(&spec, &cfg, 11).unwrap();
        let refs: Vec<&ExperimentRecord> = records.iter().collect();
        let received = receive_all(&refs, &cfg);
        let rows = eye_diagram_export(&received, 500);
        assert_eq!(rows.len(), 840);
        // windows open at the arrival, so the first rate of change carries
        // the pulse edge: falling for acid, rising for base
        let first: Vec<&EyeRow> = rows.iter().filter(|r| r.diff_index == 0).collect();
        let acid = first.iter().filter(|r| r.bit == 0);
        let (falling, total) = acid.fold((0, 0), |(f, t), r| (f + usize::from(r.diff_value < 0.0), t + 1));
        assert!(falling * 2 > total);
        assert!(first.iter().filter(|r| r.bit == 1).all(|r| r.diff_value > 0.0));
    }

    #[test]
    fn detector_names() {
        for k in DetectorKind::ALL {
            assert_eq!(k.as_str().parse::<DetectorKind>().unwrap(), k);
        }
        assert!("knn".parse::<DetectorKind>().is_err());
    }
}
