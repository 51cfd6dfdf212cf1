//! Report emission: CSV tables, a JSON summary and a static HTML page.
//!
//! Everything here is a pure function of the run directory. Numbers are
//! kept at full precision until a cell is written, where they are rounded
//! to two decimals once.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use biasprobe_core::metrics::Indicator;
use biasprobe_core::tables::build_aggregates;
use biasprobe_core::{AccuracyRow, Aggregates, AssociationTable, EditAuditRow, Gender, PairFraction64, RunManifest};
use serde::{Deserialize, Serialize};

use crate::classify_audit::{association_rows, replay_classify};
use crate::edit_audit::{replay_edits, FacePanel};
use crate::error::AuditError;
use crate::layout::RunDir;
use crate::svg::{escape, BarChart, Group};

pub const TABLE1_HEADER: [&str; 9] =
    ["dataset", "identity_id", "tier", "strength", "flip_rate", "delta_ita", "n_edits", "original_ita", "edited_ita"];

/// Identity column value of the per-gender mean rows in table2.csv and table3.csv.
pub const MEAN_ROW_ID: &str = "mean_across_races";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    /// SHA-256 of `manifest.json` in the run directory.
    pub manifest_hash: String,
    pub table1: Vec<EditAuditRow>,
    pub table2: AssociationTable,
    pub table3: Vec<AccuracyRow>,
    pub aggregates: Aggregates,
    pub pair_fractions: Vec<PairFraction64>,
    pub significant_comparisons: Vec<PairFraction64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Format {
    Csv,
    Json,
    Html,
}

impl std::str::FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "html" => Ok(Format::Html),
            other => Err(format!("unknown format `{other}` (expected csv, json or html)")),
        }
    }
}

/// Replays both ledgers of a run into a summary.
pub fn build_summary(run: &RunDir) -> Result<(RunSummary, RunManifest, Vec<FacePanel>), AuditError> {
    let (manifest, manifest_hash) = run.manifest()?;
    let edits = replay_edits(&manifest, run)?;
    let classify = replay_classify(&manifest, run)?;
    let aggregates = build_aggregates(&manifest, &edits.rows, &classify.table2)?;
    let summary = RunSummary {
        run_id: run.run_id().to_string(),
        manifest_hash,
        table1: edits.rows,
        table2: classify.table2,
        table3: classify.table3,
        aggregates,
        pair_fractions: classify.pair_fractions,
        significant_comparisons: classify.significant,
    };
    Ok((summary, manifest, edits.faces))
}

/// Two decimals; negative zero prints as zero.
pub fn fmt2(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn gender_str(manifest: &RunManifest, id: &str) -> String {
    manifest.identity(id).map(|i| i.group_axes.gender_label.as_str().to_string()).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), AuditError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(AuditError::io(path))
}

pub fn table1_rows(summary: &RunSummary) -> Vec<Vec<String>> {
    summary
        .table1
        .iter()
        .map(|r| {
            vec![
                r.dataset.clone(),
                r.identity_id.clone(),
                r.tier.as_str().to_string(),
                fmt2(r.strength),
                fmt2(r.flip_rate),
                fmt2(r.delta_ita),
                r.n_edits.to_string(),
                fmt2(r.original_ita),
                fmt2(r.edited_ita),
            ]
        })
        .collect()
}

/// Wide layout shared by tables 2 and 3: one row per identity, one column
/// per sample count, then per-gender means across races for each dataset.
fn wide_rows<F>(manifest: &RunManifest, value: F, lead: &[String]) -> Vec<Vec<String>>
where
    F: Fn(&str, u32) -> Option<f64>,
{
    let mut rows = Vec::new();
    for dataset in manifest.datasets() {
        let idents: Vec<_> = manifest.identities.iter().filter(|i| i.dataset == dataset).collect();
        for ident in &idents {
            let mut row = vec![
                dataset.clone(),
                ident.id.clone(),
                gender_str(manifest, &ident.id),
                ident.group_axes.race_label.clone(),
            ];
            row.extend(lead.iter().cloned());
            row.extend(manifest.elbo_sample_counts.iter().map(|&n| value(&ident.id, n).map(fmt2).unwrap_or_default()));
            rows.push(row);
        }
        for g in [Gender::Female, Gender::Male] {
            let members: Vec<_> = idents.iter().filter(|i| i.group_axes.gender_label == g).collect();
            if members.is_empty() {
                continue;
            }
            let mut row = vec![dataset.clone(), MEAN_ROW_ID.into(), g.as_str().into(), String::new()];
            row.extend(lead.iter().cloned());
            for &n in &manifest.elbo_sample_counts {
                let vals: Vec<f64> = members.iter().filter_map(|i| value(&i.id, n)).collect();
                let cell = if vals.len() == members.len() {
                    fmt2(vals.iter().sum::<f64>() / vals.len() as f64)
                } else {
                    String::new()
                };
                row.push(cell);
            }
            rows.push(row);
        }
    }
    rows
}

fn sample_columns(manifest: &RunManifest) -> Vec<String> {
    manifest.elbo_sample_counts.iter().map(|n| format!("n={n}")).collect()
}

pub fn table2_header(manifest: &RunManifest) -> Vec<String> {
    let mut h: Vec<String> =
        ["dataset", "identity_id", "gender", "race", "target_a", "target_b"].map(String::from).to_vec();
    h.extend(sample_columns(manifest));
    h
}

pub fn table3_header(manifest: &RunManifest) -> Vec<String> {
    let mut h: Vec<String> = ["dataset", "identity_id", "gender", "race"].map(String::from).to_vec();
    h.extend(sample_columns(manifest));
    h
}

pub fn table2_rows(summary: &RunSummary, manifest: &RunManifest) -> Vec<Vec<String>> {
    if summary.table2.rows.is_empty() {
        return Vec::new();
    }
    let lead = [manifest.concepts.label_a.clone(), manifest.concepts.label_b.clone()];
    wide_rows(manifest, |id, n| summary.table2.score(id, n), &lead)
}

pub fn table3_rows(summary: &RunSummary, manifest: &RunManifest) -> Vec<Vec<String>> {
    if summary.table3.is_empty() {
        return Vec::new();
    }
    let value =
        |id: &str, n: u32| summary.table3.iter().find(|r| r.identity_id == id && r.n_samples == n).map(|r| r.accuracy);
    wide_rows(manifest, value, &[])
}

/// Writes the requested outputs into `out` and returns the paths written.
pub fn emit_reports(
    summary: &RunSummary,
    manifest: &RunManifest,
    faces: &[FacePanel],
    formats: &BTreeSet<Format>,
    out: &Path,
) -> Result<Vec<PathBuf>, AuditError> {
    std::fs::create_dir_all(out).map_err(AuditError::io(out))?;
    let mut written = Vec::new();
    if formats.contains(&Format::Csv) {
        let t1 = out.join("table1.csv");
        write_csv(&t1, &TABLE1_HEADER.map(String::from), &table1_rows(summary))?;
        let t2 = out.join("table2.csv");
        write_csv(&t2, &table2_header(manifest), &table2_rows(summary, manifest))?;
        let t3 = out.join("table3.csv");
        write_csv(&t3, &table3_header(manifest), &table3_rows(summary, manifest))?;
        written.extend([t1, t2, t3]);
    }
    if formats.contains(&Format::Json) {
        let p = out.join("summary.json");
        let text = serde_json::to_string_pretty(summary).expect("summary serializes") + "\n";
        std::fs::write(&p, text).map_err(AuditError::io(&p))?;
        written.push(p);
    }
    if formats.contains(&Format::Html) {
        let p = out.join("report.html");
        std::fs::write(&p, render_html(summary, manifest, faces)?).map_err(AuditError::io(&p))?;
        written.push(p);
    }
    Ok(written)
}

/// Association rows under a soft indicator, for sensitivity analysis only.
pub fn emit_soft_sensitivity(
    run: &RunDir,
    manifest: &RunManifest,
    temperature: f64,
    out: &Path,
) -> Result<PathBuf, AuditError> {
    let rows = association_rows(manifest, run, Indicator::Soft { temperature })?;
    let table = AssociationTable::from_rows(rows, manifest);
    let p = out.join("sensitivity_soft.json");
    let body = serde_json::json!({ "indicator": Indicator::Soft { temperature }, "table2": table });
    std::fs::create_dir_all(out).map_err(AuditError::io(out))?;
    std::fs::write(&p, serde_json::to_string_pretty(&body).expect("serializes") + "\n").map_err(AuditError::io(&p))?;
    Ok(p)
}

fn html_table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut s = String::from("<table><thead><tr>");
    for h in header {
        let _ = write!(s, "<th>{}</th>", escape(h));
    }
    s.push_str("</tr></thead><tbody>");
    for r in rows {
        s.push_str("<tr>");
        for c in r {
            let _ = write!(s, "<td>{}</td>", escape(c));
        }
        s.push_str("</tr>");
    }
    s.push_str("</tbody></table>");
    s
}

/// Bar charts: high-paid flip rates per strength, mean ΔITA per identity
/// and strength, and the rate of choosing `set_a` per sample count.
pub fn charts(summary: &RunSummary, manifest: &RunManifest) -> Vec<String> {
    let mut out = Vec::new();
    let agg = &summary.aggregates;
    if !summary.table1.is_empty() {
        let groups = agg
            .datasets
            .iter()
            .flat_map(|d| {
                manifest.edit_strengths.iter().map(move |&s| {
                    let pick = |v: &[biasprobe_core::tables::StrengthValue]| {
                        v.iter().find(|x| x.strength == s).map(|x| x.value)
                    };
                    Group {
                        label: format!("{} {}", d.dataset, fmt2(s)),
                        values: vec![pick(&d.female_flip_high_paid), pick(&d.male_flip_high_paid)],
                    }
                })
            })
            .collect();
        out.push(
            BarChart {
                title: "Gender flips, high-paid edits".into(),
                y_label: "flip rate".into(),
                series: vec!["female".into(), "male".into()],
                groups,
                y_range: Some((0.0, 1.0)),
            }
            .render(),
        );
        let groups = manifest
            .identities
            .iter()
            .map(|ident| Group {
                label: ident.id.clone(),
                values: manifest
                    .edit_strengths
                    .iter()
                    .map(|&s| {
                        let v: Vec<f64> = summary
                            .table1
                            .iter()
                            .filter(|r| r.identity_id == ident.id && r.strength == s)
                            .map(|r| r.delta_ita)
                            .collect();
                        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
                    })
                    .collect(),
            })
            .collect();
        out.push(
            BarChart {
                title: "Skin-tone shift (mean over tiers)".into(),
                y_label: "ΔITA (degrees)".into(),
                series: manifest.edit_strengths.iter().map(|s| format!("strength {}", fmt2(*s))).collect(),
                groups,
                y_range: None,
            }
            .render(),
        );
    }
    if !summary.table2.rows.is_empty() {
        let groups = agg
            .datasets
            .iter()
            .flat_map(|d| {
                d.male_dominated_choice_rate_by_samples.iter().map(move |c| Group {
                    label: format!("{} n={}", d.dataset, c.n_samples),
                    values: vec![c.female, c.male],
                })
            })
            .collect();
        out.push(
            BarChart {
                title: format!("Rate of choosing {}", manifest.concepts.label_a),
                y_label: "association".into(),
                series: vec!["female".into(), "male".into()],
                groups,
                y_range: Some((0.0, 1.0)),
            }
            .render(),
        );
    }
    out
}

pub fn render_html(summary: &RunSummary, manifest: &RunManifest, faces: &[FacePanel]) -> Result<String, AuditError> {
    let mut s = String::new();
    s.push_str("<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>biasprobe report</title><style>");
    s.push_str(
        "body{font-family:sans-serif;margin:2em;color:#222}table{border-collapse:collapse;margin:1em 0}\
         td,th{border:1px solid #ccc;padding:2px 8px;text-align:right}th{background:#f4f4f4}\
         .faces{display:flex;flex-wrap:wrap;gap:8px}.faces figure{margin:0;text-align:center;font-size:11px}\
         .faces img{width:96px;height:96px;image-rendering:pixelated}",
    );
    s.push_str("</style></head><body>\n");
    let _ = writeln!(s, "<h1>Bias audit {}</h1>", escape(&summary.run_id));
    let _ = writeln!(s, "<p>Manifest SHA-256: <code>{}</code></p>", escape(&summary.manifest_hash));

    s.push_str("<h2>Charts</h2>\n");
    for c in charts(summary, manifest) {
        s.push_str(&c);
        s.push('\n');
    }
    if !summary.table1.is_empty() {
        s.push_str("<h2>Edit audit</h2>\n");
        s.push_str(&html_table(&TABLE1_HEADER.map(String::from), &table1_rows(summary)));
    }
    if !summary.table2.rows.is_empty() {
        s.push_str("<h2>Association scores</h2>\n");
        s.push_str(&html_table(&table2_header(manifest), &table2_rows(summary, manifest)));
        let rows: Vec<Vec<String>> = summary
            .table2
            .differentials
            .iter()
            .map(|d| vec![d.dataset.clone(), d.n_samples.to_string(), fmt2(d.value)])
            .collect();
        s.push_str("<h3>Male minus female association</h3>\n");
        s.push_str(&html_table(&["dataset", "n_samples", "differential"].map(String::from), &rows));
        s.push_str("<h2>Gender accuracy</h2>\n");
        s.push_str(&html_table(&table3_header(manifest), &table3_rows(summary, manifest)));
        let rows: Vec<Vec<String>> = summary
            .significant_comparisons
            .iter()
            .map(|p| vec![p.identity_id.clone(), p.concept_a.clone(), p.concept_b.clone(), fmt2(p.frac_a)])
            .collect();
        s.push_str("<h3>One-sided comparisons</h3>\n");
        s.push_str(&html_table(&["identity_id", "concept_a", "concept_b", "frac_a"].map(String::from), &rows));
    }
    if !faces.is_empty() {
        s.push_str("<h2>Average faces</h2>\n");
        for ident in &manifest.identities {
            let panels: Vec<&FacePanel> = faces.iter().filter(|f| f.identity_id == ident.id).collect();
            if panels.is_empty() {
                continue;
            }
            let _ = write!(s, "<h3>{}</h3><div class=\"faces\">", escape(&ident.display_name));
            for p in panels {
                let png =
                    p.face.to_png().map_err(|source| AuditError::Image { path: PathBuf::from(&p.caption), source })?;
                let _ = write!(
                    s,
                    "<figure><img alt=\"{0}\" src=\"data:image/png;base64,{1}\"><figcaption>{0}</figcaption></figure>",
                    escape(&p.caption),
                    B64.encode(png)
                );
            }
            s.push_str("</div>\n");
        }
    }
    s.push_str("</body></html>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_decimals_once() {
        assert_eq!(fmt2(0.125), "0.12");
        assert_eq!(fmt2(37.396), "37.40");
        assert_eq!(fmt2(-0.001), "0.00");
        assert_eq!(fmt2(1.0), "1.00");
    }

    #[test]
    fn format_names() {
        assert_eq!("csv".parse::<Format>(), Ok(Format::Csv));
        assert!("pdf".parse::<Format>().is_err());
    }
}
