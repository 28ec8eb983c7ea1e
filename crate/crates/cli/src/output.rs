//! Output files. Every file carries the spec hash and seed: CSV rows end in
//! `spec_hash,seed`, JSON documents embed a `provenance` object.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::Serialize;
use tdcsim_core::analysis::{Histogram, LinearityReport};
use tdcsim_core::calib::CalibrationTable;
use tdcsim_core::experiment::{ExperimentError, Provenance};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

pub struct Output {
    dir: PathBuf,
    pub format: Format,
}

impl Output {
    pub fn new(dir: &Path, format: Format) -> Result<Self, ExperimentError> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            format,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn create(&self, name: &str) -> Result<BufWriter<File>, ExperimentError> {
        let path = self.path(name);
        println!("{}", path.display());
        Ok(BufWriter::new(File::create(path)?))
    }

    pub fn json<T: Serialize>(&self, stem: &str, value: &T) -> Result<(), ExperimentError> {
        let mut w = self.create(&format!("{stem}.json"))?;
        serde_json::to_writer_pretty(&mut w, value)?;
        std::io::Write::write_all(&mut w, b"\n")?;
        Ok(())
    }

    /// Writes `header` plus `spec_hash,seed`, then each row with the
    /// provenance appended.
    pub fn csv<I>(&self, stem: &str, prov: &Provenance, header: &[&str], rows: I) -> Result<(), ExperimentError>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let mut out = csv::Writer::from_writer(self.create(&format!("{stem}.csv"))?);
        out.write_record(header.iter().copied().chain(["spec_hash", "seed"]))?;
        for mut row in rows {
            row.push(prov.spec_hash.clone());
            row.push(prov.seed.to_string());
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn histogram(&self, stem: &str, prov: &Provenance, h: &Histogram) -> Result<(), ExperimentError> {
        self.csv(
            stem,
            prov,
            &["center_ps", "count"],
            h.counts
                .iter()
                .enumerate()
                .map(|(k, c)| vec![h.center(k).to_string(), c.to_string()]),
        )
    }

    pub fn linearity(
        &self,
        stem: &str,
        prov: &Provenance,
        table: &CalibrationTable,
        report: &LinearityReport,
    ) -> Result<(), ExperimentError> {
        self.csv(
            stem,
            prov,
            &["bin", "count", "width_ps", "center_ps", "dnl", "tdnl"],
            (0..table.n_c()).map(|i| {
                vec![
                    (i + 1).to_string(),
                    table.counts()[i].to_string(),
                    table.bin_widths()[i].to_string(),
                    table.centers()[i + 1].to_string(),
                    report.dnl[i].to_string(),
                    report.tdnl[i].to_string(),
                ]
            }),
        )
    }
}
