//! On-disk layout for datasets and trained models.
//!
//! A dataset directory holds `manifest.json` and one `traces/record_NNN.csv`
//! per experiment. Trace files start with a `#` provenance line. Because the
//! samples are ADC outputs, loading snaps every value back onto the
//! quantizer grid, so a dataset read from disk is identical to the one that
//! was written.

use crate::channel::{ChannelConfig, PhTrace};
use crate::error::{Error, Result};
use crate::eval::{provenance_line, DetectorKind, ExperimentRecord, TrainedModel};
use crate::framing::{bits_from_str, bits_to_string, FrameSpec};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub index: usize,
    pub file: String,
    pub seed: u64,
    pub interval_ms: u32,
    pub frame: FrameSpec,
    pub bits: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_digest: String,
    pub master_seed: u64,
    pub channel: ChannelConfig,
    pub records: Vec<RecordEntry>,
}

fn record_file(index: usize) -> String {
    format!("traces/record_{index:03}.csv")
}

/// Writes the manifest and trace files, creating `dir` if needed.
pub fn write_dataset(
    dir: &Path,
    records: &[ExperimentRecord],
    channel: &ChannelConfig,
    config_digest: &str,
    master_seed: u64,
) -> Result<Manifest> {
    fs::create_dir_all(dir.join("traces"))?;
    let mut entries = Vec::with_capacity(records.len());
    for r in records {
        let file = record_file(r.index);
        let mut w = BufWriter::new(File::create(dir.join(&file))?);
        writeln!(
            w,
            "{} record={} seed={}",
            provenance_line(config_digest, master_seed),
            r.index,
            r.seed
        )?;
        r.trace.write_csv(&mut w)?;
        w.flush()?;
        entries.push(RecordEntry {
            index: r.index,
            file,
            seed: r.seed,
            interval_ms: r.interval_ms(),
            frame: r.frame,
            bits: bits_to_string(&r.bits),
        });
    }
    let manifest = Manifest {
        config_digest: config_digest.to_string(),
        master_seed,
        channel: channel.clone(),
        records: entries,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn read_dataset(dir: &Path) -> Result<(Manifest, Vec<ExperimentRecord>)> {
    let manifest: Manifest = read_json(&dir.join(MANIFEST_FILE))?;
    let digest = manifest.channel.digest();
    let records = manifest
        .records
        .iter()
        .map(|e| {
            let f = BufReader::new(File::open(dir.join(&e.file))?);
            let mut trace = PhTrace::read_csv(f, e.seed, &digest)?;
            trace
                .samples
                .iter_mut()
                .for_each(|x| *x = manifest.channel.quantize(*x));
            let record = ExperimentRecord {
                index: e.index,
                bits: bits_from_str(&e.bits)?,
                frame: e.frame,
                trace,
                seed: e.seed,
            };
            if record.interval_ms() != e.interval_ms {
                return Err(Error::Parse(format!(
                    "{}: interval does not match its frame",
                    e.file
                )));
            }
            Ok(record)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, records))
}

/// One detector's models for every interval, with provenance and the
/// records it was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub config_digest: String,
    pub master_seed: u64,
    pub detector: DetectorKind,
    pub train_records: Vec<usize>,
    pub models: BTreeMap<u32, TrainedModel>,
}

impl ModelFile {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: ModelFile = read_json(path)?;
        if let Some(bad) = m.models.values().find(|t| t.kind() != m.detector) {
            return Err(Error::Parse(format!(
                "{} model inside a {} model file",
                bad.kind(),
                m.detector
            )));
        }
        Ok(m)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}
