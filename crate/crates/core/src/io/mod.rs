//! File formats: SAMF binary feature files, headerless CSV and JSON run
//! reports.

mod csv;
mod report;
mod samf;

pub use self::csv::{read_csv, read_csv_str, write_csv};
pub use report::{NullSummary, RunParameters, RunReport};
pub use samf::{read_samf, read_samf_bytes, write_samf, write_samf_bytes, SAMF_MAGIC, SAMF_VERSION};

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Samf,
    Csv,
}

impl Format {
    /// `.csv` means CSV; everything else is read as SAMF.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Samf,
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "samf" => Ok(Format::Samf),
            "csv" => Ok(Format::Csv),
            _ => Err(Error::invalid(format!("unknown format {s:?}"))),
        }
    }
}

pub fn ingest(path: impl AsRef<Path>, format: Format) -> Result<FeatureMatrix> {
    match format {
        Format::Samf => read_samf(path),
        Format::Csv => read_csv(path),
    }
}
