//! Run configuration and the end-to-end pipeline.
//!
//! The config file is flat text with dotted keys:
//!
//! ```text
//! master_seed = 20240601
//! channel.noise_std_ph = 0.02
//! dataset.pauses_s = [0.22, 0.304, 0.35, 0.47]
//! detectors.rnn.state_dim = 16
//! ```
//!
//! Missing keys take their defaults; unknown keys are rejected.

use crate::channel::ChannelConfig;
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, generate_dataset, receive_all, split_dataset, train_detector, DatasetSpec, DetectorConfig,
    DetectorKind, EvalReport, ExperimentRecord, IntervalTraining, SplitSpec, TrainedModel,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub master_seed: u64,
    pub output_dir: String,
    pub channel: ChannelConfig,
    pub dataset: DatasetSpec,
    pub split: SplitSpec,
    pub detectors: DetectorConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            master_seed: 20240601,
            output_dir: "out".into(),
            channel: ChannelConfig::default(),
            dataset: DatasetSpec::default(),
            split: SplitSpec::default(),
            detectors: DetectorConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Serializes back to the dotted-key form.
    pub fn to_text(&self) -> String {
        let value = toml::Value::try_from(self).expect("config is representable");
        let mut lines = Vec::new();
        flatten("", &value, &mut lines);
        lines.join("\n") + "\n"
    }

    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        self.dataset.validate()?;
        let d = &self.detectors;
        if !(d.svm.sigma_sq > 0.0) || d.c_grid.iter().any(|c| !(*c > 0.0)) || !(d.svm.c_reg > 0.0) {
            return Err(Error::InvalidConfig(
                "sigma_sq and every C must be positive".into(),
            ));
        }
        if !(d.rnn.learning_rate > 0.0) || d.rnn.state_dim == 0 || d.rnn.sequence_length == 0 {
            return Err(Error::InvalidConfig(
                "rnn learning_rate, state_dim and sequence_length must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Hex digest of everything except the output directory.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.output_dir.clear();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&bytes)[..8]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

fn flatten(prefix: &str, value: &toml::Value, out: &mut Vec<String>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        other => out.push(format!("{prefix} = {other}")),
    }
}

/// Per-detector, per-interval training results.
pub type TrainingLog = BTreeMap<DetectorKind, Vec<IntervalTraining>>;

/// Everything one end-to-end run produces.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub records: Vec<ExperimentRecord>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub training: TrainingLog,
    pub report: EvalReport,
}

impl PipelineRun {
    pub fn models(&self, kind: DetectorKind) -> BTreeMap<u32, TrainedModel> {
        self.training[&kind]
            .iter()
            .map(|t| (t.interval_ms, t.model.clone()))
            .collect()
    }
}

/// Splits `records` with the run's split settings and master seed.
pub fn split_records<'a>(
    cfg: &RunConfig,
    records: &'a [ExperimentRecord],
) -> Result<(Vec<&'a ExperimentRecord>, Vec<&'a ExperimentRecord>)> {
    let (train, test) = split_dataset(records, &cfg.split, cfg.master_seed)?;
    Ok((
        train.iter().map(|&i| &records[i]).collect(),
        test.iter().map(|&i| &records[i]).collect(),
    ))
}

/// Trains and scores `detectors` on an existing dataset.
pub fn train_and_evaluate(
    cfg: &RunConfig,
    records: &[ExperimentRecord],
    detectors: &[DetectorKind],
) -> Result<(Vec<usize>, Vec<usize>, TrainingLog, EvalReport)> {
    let (train, test) = split_dataset(records, &cfg.split, cfg.master_seed)?;
    let train_refs: Vec<&ExperimentRecord> = train.iter().map(|&i| &records[i]).collect();
    let test_refs: Vec<&ExperimentRecord> = test.iter().map(|&i| &records[i]).collect();
    let train_rx = receive_all(&train_refs, &cfg.channel);
    let test_rx = receive_all(&test_refs, &cfg.channel);
    let mut training = BTreeMap::new();
    let mut rows = Vec::new();
    for &kind in detectors {
        let trained = train_detector(kind, &train_rx, &cfg.detectors, cfg.master_seed)?;
        let models: BTreeMap<u32, TrainedModel> =
            trained.iter().map(|t| (t.interval_ms, t.model.clone())).collect();
        rows.extend(evaluate(kind.as_str(), &models, &test_rx)?);
        training.insert(kind, trained);
    }
    let report = EvalReport {
        master_seed: cfg.master_seed,
        config_digest: cfg.digest(),
        split: cfg.split,
        test_records: test.iter().map(|&i| records[i].index).collect(),
        rows,
    };
    Ok((train, test, training, report))
}

/// Generate, split, train every detector and evaluate.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineRun> {
    cfg.validate()?;
    let records = generate_dataset(&cfg.dataset, &cfg.channel, cfg.master_seed)?;
    let (train, test, training, report) = train_and_evaluate(cfg, &records, &DetectorKind::ALL)?;
    Ok(PipelineRun {
        records,
        train,
        test,
        training,
        report,
    })
}
