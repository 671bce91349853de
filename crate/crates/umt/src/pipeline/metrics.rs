//! Step metrics: a fixed single-line text format, written append-only
//! so interrupted runs keep their history.

use crate::error::{Error, Result};
use crate::objectives::LossReport;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub lr: f64,
    pub uta: Option<f64>,
    pub vtc: Option<f64>,
    pub vtm: Option<f64>,
    pub mlm: Option<f64>,
    pub tokens_processed: u64,
}

impl StepRecord {
    pub fn from_report(step: u64, lr: f64, report: &LossReport, tokens_processed: u64) -> Self {
        StepRecord {
            step,
            lr,
            uta: report.uta,
            vtc: report.vtc,
            vtm: report.vtm,
            mlm: report.mlm,
            tokens_processed,
        }
    }
}

fn field(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::NAN)
}

/// One record per line; absent objectives print as NaN.
pub fn format_line(r: &StepRecord) -> String {
    format!(
        "step={} lr={} uta={} vtc={} vtm={} mlm={} tokens={}",
        r.step,
        r.lr,
        field(r.uta),
        field(r.vtc),
        field(r.vtm),
        field(r.mlm),
        r.tokens_processed
    )
}

pub fn parse_line(line: &str) -> Result<StepRecord> {
    let mut step = None;
    let mut lr = None;
    let mut uta = None;
    let mut vtc = None;
    let mut vtm = None;
    let mut mlm = None;
    let mut tokens = None;
    for part in line.split_whitespace() {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("metrics field {part:?} lacks '='")))?;
        let bad = |k: &str| Error::invalid(format!("cannot parse {value:?} for metrics field {k}"));
        match key {
            "step" => step = Some(value.parse::<u64>().map_err(|_| bad(key))?),
            "lr" => lr = Some(value.parse::<f64>().map_err(|_| bad(key))?),
            "uta" => uta = Some(value.parse::<f64>().map_err(|_| bad(key))?),
            "vtc" => vtc = Some(value.parse::<f64>().map_err(|_| bad(key))?),
            "vtm" => vtm = Some(value.parse::<f64>().map_err(|_| bad(key))?),
            "mlm" => mlm = Some(value.parse::<f64>().map_err(|_| bad(key))?),
            "tokens" => tokens = Some(value.parse::<u64>().map_err(|_| bad(key))?),
            other => return Err(Error::invalid(format!("unknown metrics field {other:?}"))),
        }
    }
    let require = |name: &str, v: Option<f64>| {
        v.ok_or_else(|| Error::invalid(format!("metrics line missing field {name}")))
    };
    let opt = |v: Option<f64>| v.filter(|x| !x.is_nan());
    Ok(StepRecord {
        step: step.ok_or_else(|| Error::invalid("metrics line missing field step"))?,
        lr: require("lr", lr)?,
        uta: opt(Some(require("uta", uta)?)),
        vtc: opt(Some(require("vtc", vtc)?)),
        vtm: opt(Some(require("vtm", vtm)?)),
        mlm: opt(Some(require("mlm", mlm)?)),
        tokens_processed: tokens
            .ok_or_else(|| Error::invalid("metrics line missing field tokens"))?,
    })
}

/// Append-only metrics file.
pub struct MetricsLog {
    path: PathBuf,
}

impl MetricsLog {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        Ok(MetricsLog { path: path.to_path_buf() })
    }

    pub fn append(&self, record: &StepRecord) -> Result<()> {
        let mut f = std::fs::OpenOptions::new().append(true).open(&self.path)?;
        writeln!(f, "{}", format_line(record))?;
        Ok(())
    }

    pub fn read_all(path: &Path) -> Result<Vec<StepRecord>> {
        let text = std::fs::read_to_string(path)?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(parse_line)
            .collect()
    }
}
