//! Sweep persistence: records, aggregates, manifest and plot data.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{Aggregate, ExperimentConfig, SweepRecord, SweepResult};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EmittedFiles {
    pub records: PathBuf,
    pub aggregates: PathBuf,
    pub manifest: PathBuf,
    pub plots: Vec<PathBuf>,
}

pub(crate) fn records_csv(records: &[SweepRecord]) -> Result<Vec<u8>> {
    to_csv(records)
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))
}

pub fn read_records(path: &Path) -> Result<Vec<SweepRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<SweepRecord>, _>>()
        .map_err(|e| Error::format(path, e.to_string()))
}

/// SHA-256 of the config's canonical JSON form, hex encoded.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let json = serde_json::to_vec(cfg).map_err(|e| Error::Config(e.to_string()))?;
    Ok(hex::encode(Sha256::digest(json)))
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool_version: &'static str,
    config: &'a ExperimentConfig,
    config_hash: String,
    records_hash: String,
    master_seed: u64,
    seed_labels: [&'static str; 5],
    record_count: usize,
    reference: &'a super::ReferenceSummary,
    slope_a: Option<super::LogSlope>,
    slope_b: Option<super::LogSlope>,
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `records.csv`, `aggregates.csv`, `manifest.json` and the
/// `plots/` directory under `dir`.
pub fn emit_outputs(result: &SweepResult, dir: &Path) -> Result<EmittedFiles> {
    if result.records.is_empty() {
        return Err(Error::InvalidArgument("sweep result has no records".into()));
    }
    let plots_dir = dir.join("plots");
    fs::create_dir_all(&plots_dir).map_err(|e| Error::io(&plots_dir, e))?;

    let records_bytes = records_csv(&result.records)?;
    let files = EmittedFiles {
        records: dir.join("records.csv"),
        aggregates: dir.join("aggregates.csv"),
        manifest: dir.join("manifest.json"),
        plots: vec![],
    };
    write(&files.records, &records_bytes)?;
    write(&files.aggregates, &to_csv(&result.aggregates)?)?;
    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION"),
        config: &result.config,
        config_hash: config_hash(&result.config)?,
        records_hash: hex::encode(Sha256::digest(&records_bytes)),
        master_seed: result.config.master_seed,
        seed_labels: ["training", "evaluation", "centers", "dither", "measurement"],
        record_count: result.records.len(),
        reference: &result.reference,
        slope_a: result.slope_a,
        slope_b: result.slope_b,
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    write(&files.manifest, &json)?;

    let mut plots = Vec::new();
    let error_csv = plots_dir.join("error_vs_b.csv");
    let mut text = String::from("b,rel_a_mean,rel_a_std,rel_b_mean,rel_b_std,prediction_error_mean,prediction_error_std\n");
    for a in &result.aggregates {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{},{}",
            a.word_length, a.rel_a_mean, a.rel_a_std, a.rel_b_mean, a.rel_b_std, a.prediction_error_mean, a.prediction_error_std
        );
    }
    write(&error_csv, text.as_bytes())?;
    plots.push(error_csv);

    if result.aggregates.iter().any(|a| a.cost_mean.is_some()) {
        let cost_csv = plots_dir.join("cost_vs_b.csv");
        let mut text = String::from("b,cost_mean,cost_std,reference_cost\n");
        let reference = result.reference.achieved_cost.map_or(String::new(), |c| c.to_string());
        for a in &result.aggregates {
            let opt = |v: Option<f64>| v.map_or(String::new(), |c| c.to_string());
            let _ = writeln!(text, "{},{},{},{}", a.word_length, opt(a.cost_mean), opt(a.cost_std), reference);
        }
        write(&cost_csv, text.as_bytes())?;
        plots.push(cost_csv);
    }

    for trace in &result.traces {
        let name = match trace.word_length {
            Some(b) => format!("tracking_b{b}.csv"),
            None => "tracking_unquantized.csv".into(),
        };
        let path = plots_dir.join(name);
        trace.run.write_csv(&path)?;
        plots.push(path);
    }

    let svg = plots_dir.join("error_vs_b.svg");
    write(&svg, error_svg(&result.aggregates).as_bytes())?;
    plots.push(svg);

    Ok(EmittedFiles { plots, ..files })
}

/// Log-scale line chart of the mean relative errors against `b`.
fn error_svg(aggs: &[Aggregate]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const PAD: f64 = 48.0;
    let series: [(&str, &str, Vec<f64>); 2] = [
        ("relA", "#1f77b4", aggs.iter().map(|a| a.rel_a_mean).collect()),
        ("relB", "#d62728", aggs.iter().map(|a| a.rel_b_mean).collect()),
    ];
    let bs: Vec<f64> = aggs.iter().map(|a| a.word_length as f64).collect();
    let logs: Vec<f64> = series
        .iter()
        .flat_map(|s| s.2.iter())
        .filter(|v| **v > 0.0 && v.is_finite())
        .map(|v| v.log10())
        .collect();
    let (bmin, bmax) = bs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
    let (ymin, ymax) = logs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
    let (ymin, ymax) = (ymin.floor(), ymax.ceil().max(ymin.floor() + 1.0));
    let bspan = (bmax - bmin).max(1.0);
    let px = |b: f64| PAD + (b - bmin) / bspan * (W - 2.0 * PAD);
    let py = |l: f64| H - PAD - (l - ymin) / (ymax - ymin) * (H - 2.0 * PAD);
    let mut s = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#);
    let _ = write!(
        s,
        r#"<rect width="{W}" height="{H}" fill="white"/><line x1="{PAD}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{y0}" stroke="black"/>"#,
        y0 = H - PAD,
        x1 = W - PAD
    );
    for b in &bs {
        let _ = write!(s, r#"<text x="{}" y="{}" text-anchor="middle">{b}</text>"#, px(*b), H - PAD + 16.0);
    }
    let mut e = ymin;
    while e <= ymax {
        let _ = write!(s, r#"<text x="{}" y="{}" text-anchor="end">1e{e}</text>"#, PAD - 4.0, py(e) + 4.0);
        e += 1.0;
    }
    let _ = write!(s, r#"<text x="{}" y="{}" text-anchor="middle">word length b</text>"#, W / 2.0, H - 8.0);
    for (i, (label, color, vals)) in series.iter().enumerate() {
        let pts: Vec<String> = bs
            .iter()
            .zip(vals)
            .filter(|(_, v)| **v > 0.0 && v.is_finite())
            .map(|(b, v)| format!("{:.2},{:.2}", px(*b), py(v.log10())))
            .collect();
        let _ = write!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/><text x="{}" y="{}" fill="{color}">{label}</text>"#,
            pts.join(" "),
            W - PAD - 40.0,
            PAD + 14.0 * i as f64
        );
    }
    s.push_str("</svg>\n");
    s
}
