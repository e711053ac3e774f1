//! Output files. Every CSV starts with a `#` line carrying the experiment,
//! the config hash and the seed; JSON artifacts carry the same fields in a
//! `provenance` object.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub experiment: String,
    pub config_sha256: String,
    pub seed: u64,
}

impl Provenance {
    pub fn of(cfg: &ExperimentConfig) -> Self {
        Self { experiment: cfg.experiment.name().to_string(), config_sha256: cfg.hash(), seed: cfg.seed }
    }

    pub fn header_line(&self) -> String {
        format!("# scatchain experiment={} config_sha256={} seed={}", self.experiment, self.config_sha256, self.seed)
    }
}

#[derive(Serialize)]
struct Wrapped<'a, T: Serialize> {
    provenance: &'a Provenance,
    result: &'a T,
}

pub struct ArtifactWriter {
    dir: PathBuf,
    prov: Provenance,
    written: Vec<PathBuf>,
}

impl ArtifactWriter {
    pub fn create(dir: &Path, cfg: &ExperimentConfig) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let mut w = Self { dir: dir.to_path_buf(), prov: Provenance::of(cfg), written: Vec::new() };
        w.write_raw("config.json", format!("{}\n", cfg.canonical().to_json_string()))?;
        Ok(w)
    }

    pub fn provenance(&self) -> &Provenance {
        &self.prov
    }

    pub fn into_written(self) -> Vec<PathBuf> {
        self.written
    }

    fn write_raw(&mut self, name: &str, text: String) -> CliResult<()> {
        let path = self.dir.join(name);
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        self.written.push(path);
        Ok(())
    }

    /// Writes `header` and `rows`; cells are written verbatim.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<()> {
        let path = self.dir.join(name);
        let mut buf = format!("{}\n", self.prov.header_line()).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            let wrap = |e| CliError::Csv { path: path.clone(), source: e };
            w.write_record(header).map_err(wrap)?;
            for r in rows {
                w.write_record(&r).map_err(wrap)?;
            }
            w.flush().map_err(|e| CliError::io(&path, e))?;
        }
        fs::write(&path, buf).map_err(|e| CliError::io(&path, e))?;
        self.written.push(path);
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let text = serde_json::to_string_pretty(&Wrapped { provenance: &self.prov, result: value })
            .map_err(|e| CliError::Config(format!("serialising {name}: {e}")))?;
        self.write_raw(name, format!("{text}\n"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_through_text() {
        for x in [0.1, 1.0 / 3.0, 1e-300, -2.5e17, 5e-324, 1.0] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(1.0), "1.0");
    }
}
