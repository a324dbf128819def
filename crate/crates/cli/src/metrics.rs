//! Per-epoch metric rows.

use std::io::{self, Write};
use std::time::Duration;

use clap::ValueEnum;
use serde::Serialize;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Jsonl,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRecord {
    pub epoch: u64,
    pub events: usize,
    pub rules_changed: usize,
    /// Fixpoint latency.
    pub latency_us: f64,
    pub requests: usize,
    /// Mean per-request retrieval latency, when the epoch had requests.
    pub retrieval_us: Option<f64>,
}

pub fn micros(d: Duration) -> f64 {
    // Never report zero, even for an empty epoch on a coarse clock.
    (d.as_nanos().max(1)) as f64 / 1e3
}

pub struct MetricWriter<W: Write> {
    out: W,
    format: Format,
}

impl<W: Write> MetricWriter<W> {
    pub fn new(mut out: W, format: Format) -> io::Result<Self> {
        if format == Format::Csv {
            writeln!(out, "epoch,events,rules_changed,latency_us,requests,retrieval_us")?;
        }
        Ok(MetricWriter { out, format })
    }

    pub fn write(&mut self, r: &MetricRecord) -> io::Result<()> {
        match self.format {
            Format::Csv => {
                let retrieval = r.retrieval_us.map(|v| format!("{v:.3}")).unwrap_or_default();
                writeln!(
                    self.out,
                    "{},{},{},{:.3},{},{}",
                    r.epoch, r.events, r.rules_changed, r.latency_us, r.requests, retrieval
                )
            }
            Format::Jsonl => {
                serde_json::to_writer(&mut self.out, r)?;
                writeln!(self.out)
            }
        }
    }

    pub fn finish(mut self) -> io::Result<()> {
        self.out.flush()
    }
}
