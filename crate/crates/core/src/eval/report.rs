//! CSV tables and SVG plots. Floats are written with fixed precision so
//! reruns produce identical bytes.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::scores::{AbstentionRow, CalibrationReport, ClassStats, ConfusionMatrix, DnMedBin};
use crate::error::{Error, Result};

pub fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

/// Write a header and rows of already formatted fields.
pub fn write_csv(path: impl AsRef<Path>, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Scores of one model or ensemble on one evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub policy: String,
    pub examples_per_class: usize,
    pub source: String,
    pub n_records: usize,
    /// `(k, Top-k accuracy)` pairs.
    pub top_k: Vec<(usize, f64)>,
    pub ece: f64,
    pub best_t: f64,
    pub ece_at_best_t: f64,
}

pub fn write_summary(path: impl AsRef<Path>, rows: &[SummaryRow]) -> Result<()> {
    let ks: Vec<String> = rows
        .first()
        .map(|r| r.top_k.iter().map(|(k, _)| format!("top{k}")).collect())
        .unwrap_or_default();
    let mut header = vec!["policy", "examples_per_class", "source", "n_records"];
    header.extend(ks.iter().map(String::as_str));
    header.extend(["ece", "best_t", "ece_at_best_t"]);
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut v = vec![
                r.policy.clone(),
                r.examples_per_class.to_string(),
                r.source.clone(),
                r.n_records.to_string(),
            ];
            v.extend(r.top_k.iter().map(|&(_, a)| fmt(a)));
            v.extend([fmt(r.ece), format!("{:.2}", r.best_t), fmt(r.ece_at_best_t)]);
            v
        })
        .collect();
    write_csv(path, &header, &body)
}

/// Rows of a CSV written by this module, keyed by header name.
pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<std::collections::BTreeMap<String, String>>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    let header = r.headers()?.clone();
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok(header.iter().map(String::from).zip(rec.iter().map(String::from)).collect())
        })
        .collect()
}

pub fn write_reliability(path: impl AsRef<Path>, reports: &[(String, CalibrationReport)]) -> Result<()> {
    let rows: Vec<Vec<String>> = reports
        .iter()
        .flat_map(|(source, rep)| rep.reliability.iter().map(move |b| (source, b)))
        .map(|(source, b)| {
            vec![
                source.to_string(),
                fmt(b.lower),
                fmt(b.upper),
                b.count.to_string(),
                fmt(b.confidence),
                fmt(b.accuracy),
                fmt(b.mass),
            ]
        })
        .collect();
    write_csv(
        path,
        &["source", "bin_lower", "bin_upper", "count", "confidence", "accuracy", "mass"],
        &rows,
    )
}

pub fn write_confusion(path: impl AsRef<Path>, m: &ConfusionMatrix, names: &[String]) -> Result<()> {
    let mut header = vec!["true_class"];
    header.extend(names.iter().map(String::as_str));
    let rows: Vec<Vec<String>> = m
        .counts
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = vec![names[i].clone()];
            r.extend(row.iter().map(usize::to_string));
            r
        })
        .collect();
    write_csv(path, &header, &rows)
}

pub fn write_class_stats(path: impl AsRef<Path>, stats: &[ClassStats]) -> Result<()> {
    let rows: Vec<Vec<String>> = stats
        .iter()
        .map(|s| vec![s.class.clone(), fmt(s.precision), fmt(s.recall), fmt(s.f1)])
        .collect();
    write_csv(path, &["Class", "Precision", "Recall", "F1"], &rows)
}

pub fn write_dnmed_bins(path: impl AsRef<Path>, bins: &[DnMedBin], spearman: Option<f64>) -> Result<()> {
    let rows: Vec<Vec<String>> = bins
        .iter()
        .map(|b| {
            vec![
                fmt(b.lower),
                fmt(b.upper),
                fmt(b.center),
                b.count.to_string(),
                opt(b.accuracy),
                b.accuracy.is_none().to_string(),
                opt(spearman),
            ]
        })
        .collect();
    write_csv(
        path,
        &["bin_lower", "bin_upper", "bin_center", "count", "top1", "empty", "spearman"],
        &rows,
    )
}

pub fn write_abstention(path: impl AsRef<Path>, source: &str, rows: &[AbstentionRow]) -> Result<()> {
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                source.to_string(),
                format!("{:.2}", r.threshold),
                fmt(100.0 * r.uncertain_fraction),
                r.n_confident.to_string(),
                opt(r.top1),
                opt(r.top3),
            ]
        })
        .collect();
    write_csv(
        path,
        &["source", "threshold", "uncertain_pct", "n_confident", "top1", "top3"],
        &rows,
    )
}

fn write_text(path: &Path, s: &str) -> Result<()> {
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Reliability diagram: bar per bin at its accuracy, diagonal for reference.
pub fn reliability_svg(path: impl AsRef<Path>, rep: &CalibrationReport, title: &str) -> Result<()> {
    let (w, h, m) = (400.0, 400.0, 40.0);
    let side = w - 2.0 * m;
    let mut s = String::new();
    let _ = write!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = write!(s, r#"<text x="{m}" y="20">{title} (ECE {:.3})</text>"#, rep.ece);
    let _ = write!(
        s,
        r#"<rect x="{m}" y="{m}" width="{side}" height="{side}" fill="none" stroke="black"/>"#
    );
    let bw = side / rep.n_bins as f64;
    for (i, b) in rep.reliability.iter().enumerate().filter(|(_, b)| b.count > 0) {
        let bh = b.accuracy * side;
        let _ = write!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#4878a8" stroke="white"/>"##,
            m + i as f64 * bw,
            m + side - bh,
            bw,
            bh
        );
    }
    let _ = write!(
        s,
        r#"<line x1="{m}" y1="{}" x2="{}" y2="{m}" stroke="gray" stroke-dasharray="4"/>"#,
        m + side,
        m + side
    );
    let _ = write!(s, r#"<text x="{}" y="{}">confidence</text>"#, w / 2.0 - 30.0, h - 10.0);
    s.push_str("</svg>\n");
    write_text(path.as_ref(), &s)
}

/// Row-normalized confusion heat map.
pub fn confusion_svg(path: impl AsRef<Path>, m: &ConfusionMatrix, names: &[String]) -> Result<()> {
    let n = m.n_classes;
    let cell = 36.0;
    let margin = 60.0;
    let size = margin + cell * n as f64 + 10.0;
    let mut s = String::new();
    let _ = write!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" font-family="sans-serif" font-size="10">"#
    );
    for (i, row) in m.counts.iter().enumerate() {
        let total: usize = row.iter().sum();
        let y = margin + i as f64 * cell;
        let _ = write!(s, r#"<text x="4" y="{:.1}">{}</text>"#, y + cell / 2.0, names[i]);
        for (j, &c) in row.iter().enumerate() {
            let frac = if total > 0 { c as f64 / total as f64 } else { 0.0 };
            let shade = (255.0 * (1.0 - frac)).round() as u8;
            let x = margin + j as f64 * cell;
            let _ = write!(
                s,
                r#"<rect x="{x:.1}" y="{y:.1}" width="{cell}" height="{cell}" fill="rgb({shade},{shade},255)" stroke="white"/><text x="{:.1}" y="{:.1}" text-anchor="middle">{c}</text>"#,
                x + cell / 2.0,
                y + cell / 2.0 + 3.0
            );
        }
    }
    for (j, name) in names.iter().enumerate() {
        let _ = write!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{name}</text>"#,
            margin + j as f64 * cell + cell / 2.0,
            margin - 8.0
        );
    }
    s.push_str("</svg>\n");
    write_text(path.as_ref(), &s)
}
