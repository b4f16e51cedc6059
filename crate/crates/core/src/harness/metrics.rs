//! Append-only training metrics, one CSV per run.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::sac::LossReport;

pub const SCHEMA_LINE: &str = "# mucking-metrics schema v1";

pub const COLUMNS: [&str; 21] = [
    "step",
    "phase",
    "lesson",
    "event",
    "agent",
    "updates",
    "critic_loss",
    "actor_loss",
    "alpha_loss",
    "alpha",
    "entropy",
    "mean_q",
    "episode_return",
    "fill",
    "mass_t",
    "duration_s",
    "energy_J",
    "failed",
    "target_x",
    "generation",
    "loading_index",
];

/// Row kinds: `phase`, `lesson`, `update`, `loading`, `pool_push`,
/// `checkpoint`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub phase: String,
    pub lesson: usize,
    pub event: String,
    pub agent: Option<String>,
    pub updates: Option<u64>,
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub alpha_loss: Option<f64>,
    pub alpha: Option<f64>,
    pub entropy: Option<f64>,
    pub mean_q: Option<f64>,
    pub episode_return: Option<f64>,
    pub fill: Option<f64>,
    pub mass_t: Option<f64>,
    pub duration_s: Option<f64>,
    #[serde(rename = "energy_J")]
    pub energy_j: Option<f64>,
    pub failed: Option<bool>,
    pub target_x: Option<f64>,
    pub generation: Option<u32>,
    pub loading_index: Option<usize>,
}

impl MetricsRow {
    pub fn event(step: u64, phase: &str, lesson: usize, event: &str) -> Self {
        Self {
            step,
            phase: phase.to_string(),
            lesson,
            event: event.to_string(),
            ..Self::default()
        }
    }

    pub fn with_losses(mut self, agent: &str, r: &LossReport) -> Self {
        self.agent = Some(agent.to_string());
        self.updates = Some(r.update);
        self.critic_loss = Some(r.critic_loss);
        self.actor_loss = Some(r.actor_loss);
        self.alpha_loss = Some(r.alpha_loss);
        self.alpha = Some(r.alpha);
        self.entropy = Some(r.entropy);
        self.mean_q = Some(r.mean_q);
        self
    }
}

pub struct MetricsWriter {
    csv: csv::Writer<BufWriter<File>>,
}

impl MetricsWriter {
    /// Starts a new file with the schema comment and header.
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut f = BufWriter::new(File::create(path)?);
        writeln!(f, "{SCHEMA_LINE}")?;
        let mut csv = csv::WriterBuilder::new().has_headers(false).from_writer(f);
        csv.write_record(COLUMNS)?;
        Ok(Self { csv })
    }

    /// Reopens an existing file, dropping anything past `len` bytes.
    pub fn reopen(path: &Path, len: u64) -> Result<Self> {
        let mut f = OpenOptions::new().read(true).write(true).open(path)?;
        f.set_len(len)?;
        f.seek(SeekFrom::End(0))?;
        let csv = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(BufWriter::new(f));
        Ok(Self { csv })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        self.csv.serialize(row)?;
        Ok(())
    }

    /// Flushes and returns the file length.
    pub fn flush(&mut self) -> Result<u64> {
        self.csv.flush()?;
        Ok(self.csv.get_ref().get_ref().metadata()?.len())
    }
}

/// Reads a metrics file back, skipping the schema comment.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let mut rows = Vec::new();
    for r in rdr.deserialize() {
        rows.push(r?);
    }
    Ok(rows)
}
