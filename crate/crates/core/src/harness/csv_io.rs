//! CSV datasets (`id,f0,..,f{d-1},label`) and tabular exports.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::data::{Demand, Label, LabeledDataset};
use crate::diversity::ImprovementFactor;
use crate::error::{Error, Result};

fn csv_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

fn finish(path: &Path, mut w: csv::Writer<File>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_row(path: &Path, w: &mut csv::Writer<File>, row: &[String]) -> Result<()> {
    w.write_record(row).map_err(|e| csv_err(path, 0, e.to_string()))
}

pub fn load_csv(path: &Path) -> Result<LabeledDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = rdr.headers().map_err(|e| csv_err(path, 1, e.to_string()))?.clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < 3 || cols[0] != "id" || cols[cols.len() - 1] != "label" {
        return Err(csv_err(path, 1, "header must be id,f0,..,f{d-1},label"));
    }
    let dim = cols.len() - 2;
    for (k, c) in cols[1..=dim].iter().enumerate() {
        if *c != format!("f{k}") {
            return Err(csv_err(path, 1, format!("expected column f{k}, found {c:?}")));
        }
    }

    let mut demands = Vec::new();
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            csv_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = rec[0]
            .trim()
            .parse::<u64>()
            .map_err(|_| csv_err(path, line, format!("bad id {:?}", &rec[0])))?;
        let features = (1..=dim)
            .map(|k| {
                let v = rec[k]
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| csv_err(path, line, format!("bad feature f{} {:?}", k - 1, &rec[k])))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(csv_err(path, line, format!("non-finite feature f{}", k - 1)))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        let label = rec[dim + 1]
            .trim()
            .parse::<u8>()
            .ok()
            .and_then(Label::from_u8)
            .ok_or_else(|| csv_err(path, line, format!("label must be 0 or 1, got {:?}", &rec[dim + 1])))?;
        demands.push(Demand::new(id, features));
        labels.push(label);
    }
    LabeledDataset::new(dim, demands, labels).map_err(|e| csv_err(path, 0, e.to_string()))
}

pub fn save_csv(ds: &LabeledDataset, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["id".to_string()];
    header.extend((0..ds.dim()).map(|k| format!("f{k}")));
    header.push("label".into());
    write_row(path, &mut w, &header)?;
    for (d, l) in ds.iter() {
        let mut row = vec![d.id.to_string()];
        // Display for f64 is the shortest string that parses back exactly.
        row.extend(d.features.iter().map(|x| x.to_string()));
        row.push(l.to_string());
        write_row(path, &mut w, &row)?;
    }
    finish(path, w)
}

/// Two columns, `rank,score`.
pub fn write_ordered_scores(scores: &[(usize, f64)], path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    write_row(path, &mut w, &["rank".into(), "score".into()])?;
    for (rank, score) in scores {
        write_row(path, &mut w, &[rank.to_string(), score.to_string()])?;
    }
    finish(path, w)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub mean_single_pfd: f64,
    pub mean_pair_pfd: f64,
    pub empirical_improvement: Option<ImprovementFactor>,
    pub analytic_pair_pfd: f64,
}

/// `mean_single_pfd,mean_pair_pfd,empirical_improvement,analytic_pair_pfd`.
/// An improvement without joint failures is written as `inf`, and one
/// without any failures is left empty.
pub fn write_curve(rows: &[CurveRow], path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    let header = ["mean_single_pfd", "mean_pair_pfd", "empirical_improvement", "analytic_pair_pfd"];
    write_row(path, &mut w, &header.map(String::from))?;
    for r in rows {
        let improvement = match r.empirical_improvement {
            Some(ImprovementFactor::Finite(v)) => v.to_string(),
            Some(ImprovementFactor::NoJointFailures) => "inf".into(),
            None => String::new(),
        };
        write_row(
            path,
            &mut w,
            &[r.mean_single_pfd.to_string(), r.mean_pair_pfd.to_string(), improvement, r.analytic_pair_pfd.to_string()],
        )?;
    }
    finish(path, w)
}

/// Writes `text` to `path`.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
