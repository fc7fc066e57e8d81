//! Plot-ready CSV of a calibrated series.

use std::io::{Read, Write};
use std::path::Path;

use crate::dynamic::CalSummarySeries;
use crate::error::{CalError, Result};

/// Parsed plot file. `t` is 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotData {
    pub t: Vec<usize>,
    pub median: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub truth: Option<Vec<f64>>,
}

/// `truth` covers the full horizon; only entries from `summary.start` on are written.
pub fn write_plot_data<W: Write>(summary: &CalSummarySeries, truth: Option<&[f64]>, out: W) -> Result<()> {
    if let Some(tr) = truth {
        if tr.len() < summary.start + summary.len() {
            return Err(CalError::Dimension {
                context: "plot truth",
                expected: summary.start + summary.len(),
                found: tr.len(),
            });
        }
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t", "median", "lower", "upper"];
    if truth.is_some() {
        header.push("truth");
    }
    w.write_record(&header)?;
    for i in 0..summary.len() {
        let t = summary.start + i;
        let mut rec = vec![
            (t + 1).to_string(),
            format!("{:.16e}", summary.median[i]),
            format!("{:.16e}", summary.lower[i]),
            format!("{:.16e}", summary.upper[i]),
        ];
        if let Some(tr) = truth {
            rec.push(format!("{:.16e}", tr[t]));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_plot_data(summary: &CalSummarySeries, truth: Option<&[f64]>, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_plot_data(summary, truth, std::io::BufWriter::new(file))
}

pub fn read_plot_data<R: Read>(input: R) -> Result<PlotData> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    let with_truth = match headers.iter().collect::<Vec<_>>().as_slice() {
        ["t", "median", "lower", "upper"] => false,
        ["t", "median", "lower", "upper", "truth"] => true,
        _ => {
            return Err(CalError::Parse {
                line: 1,
                message: "expected header t,median,lower,upper[,truth]".into(),
            })
        }
    };
    let mut out = PlotData {
        t: Vec::new(),
        median: Vec::new(),
        lower: Vec::new(),
        upper: Vec::new(),
        truth: with_truth.then(Vec::new),
    };
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |s: &str, e: &dyn std::fmt::Display| CalError::Parse {
            line,
            message: format!("bad value {s:?}: {e}"),
        };
        let t = rec[0].parse::<usize>().map_err(|e| bad(&rec[0], &e))?;
        let mut vals = Vec::with_capacity(4);
        for s in rec.iter().skip(1) {
            vals.push(s.parse::<f64>().map_err(|e| bad(s, &e))?);
        }
        out.t.push(t);
        out.median.push(vals[0]);
        out.lower.push(vals[1]);
        out.upper.push(vals[2]);
        if let Some(tr) = out.truth.as_mut() {
            tr.push(vals[3]);
        }
    }
    Ok(out)
}

pub fn load_plot_data(path: &Path) -> Result<PlotData> {
    read_plot_data(std::fs::File::open(path)?)
}
