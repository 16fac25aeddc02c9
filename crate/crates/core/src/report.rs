//! Summary tables: one row per (model tag, condition) with the four scores,
//! as CSV and as a markdown grid of models × conditions.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{ConfusionMatrix, Metrics};

pub const CSV_HEADER: &str = "tag,condition,accuracy,precision,recall,f1";
pub const NORMAL: &str = "normal";
const SCORES: [&str; 4] = ["Acc", "P", "R", "F1"];

/// Four decimals, ties to even on the exact binary value; `NaN` when undefined.
pub fn format_score(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:.4}")
    }
}

/// `normal` first, then `fog<β>` by β, then anything else by name.
pub fn condition_order(a: &str, b: &str) -> Ordering {
    let key = |c: &str| -> (u8, f64) {
        if c == NORMAL {
            (0, 0.0)
        } else if let Some(beta) = c.strip_prefix("fog").and_then(|b| b.parse::<f64>().ok()) {
            (1, beta)
        } else {
            (2, 0.0)
        }
    };
    let (ka, kb) = (key(a), key(b));
    ka.0.cmp(&kb.0)
        .then(ka.1.total_cmp(&kb.1))
        .then_with(|| a.cmp(b))
}

/// Rows with scores already rendered as text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReportTable {
    pub rows: Vec<ReportRow>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReportRow {
    pub tag: String,
    pub condition: String,
    /// accuracy, precision, recall, f1
    pub scores: [String; 4],
}

fn check_field(s: &str) -> Result<()> {
    if s.is_empty() || s.contains([',', '|', '\n']) {
        return Err(Error::invalid(
            "report",
            format!("tag or condition `{s}` must be non-empty without `,` or `|`"),
        ));
    }
    Ok(())
}

impl ReportTable {
    /// Orders rows by first appearance of the tag, then by condition.
    pub fn from_results(results: &[(String, String, ConfusionMatrix)]) -> Result<Self> {
        if results.is_empty() {
            return Err(Error::invalid("report", "no results to report"));
        }
        let mut rows = Vec::with_capacity(results.len());
        for (tag, cond, cm) in results {
            check_field(tag)?;
            check_field(cond)?;
            let m: Metrics = cm.metrics()?;
            for name in m.undefined() {
                log::warn!("{tag}/{cond}: {name} is undefined (zero denominator)");
            }
            rows.push(ReportRow {
                tag: tag.clone(),
                condition: cond.clone(),
                scores: [m.accuracy, m.precision, m.recall, m.f1].map(format_score),
            });
        }
        Self::from_rows(rows)
    }

    fn from_rows(mut rows: Vec<ReportRow>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for r in &rows {
            if !seen.insert((r.tag.clone(), r.condition.clone())) {
                return Err(Error::invalid(
                    "report",
                    format!("duplicate result for ({}, {})", r.tag, r.condition),
                ));
            }
        }
        let tags = tag_order(&rows);
        rows.sort_by(|a, b| {
            let ia = tags.iter().position(|t| *t == a.tag);
            let ib = tags.iter().position(|t| *t == b.tag);
            ia.cmp(&ib)
                .then_with(|| condition_order(&a.condition, &b.condition))
        });
        Ok(ReportTable { rows })
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{}", r.tag, r.condition, r.scores.join(","));
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(Error::Dataset(format!(
                "report CSV must start with `{CSV_HEADER}`"
            )));
        }
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(Error::Dataset(format!(
                    "report CSV line {}: expected 6 fields",
                    n + 2
                )));
            }
            rows.push(ReportRow {
                tag: f[0].to_string(),
                condition: f[1].to_string(),
                scores: [f[2], f[3], f[4], f[5]].map(str::to_string),
            });
        }
        if rows.is_empty() {
            return Err(Error::Dataset("report CSV has no rows".into()));
        }
        Self::from_rows(rows)
    }

    /// Grid with one row per tag and a column group per condition.
    pub fn to_markdown(&self) -> String {
        let tags = tag_order(&self.rows);
        let mut conditions: Vec<&str> = self.rows.iter().map(|r| r.condition.as_str()).collect();
        conditions.sort_by(|a, b| condition_order(a, b));
        conditions.dedup();

        let mut out = String::from("| Model |");
        for c in &conditions {
            for s in SCORES {
                let _ = write!(out, " {c} {s} |");
            }
        }
        out.push_str("\n|---|");
        out.push_str(&"---:|".repeat(4 * conditions.len()));
        out.push('\n');
        for tag in &tags {
            let _ = write!(out, "| {tag} |");
            for c in &conditions {
                match self
                    .rows
                    .iter()
                    .find(|r| &r.tag == tag && r.condition == *c)
                {
                    Some(r) => r.scores.iter().for_each(|s| {
                        let _ = write!(out, " {s} |");
                    }),
                    None => out.push_str(&" - |".repeat(4)),
                }
            }
            out.push('\n');
        }
        let undefined: Vec<&ReportRow> = self
            .rows
            .iter()
            .filter(|r| r.scores.iter().any(|s| s == "NaN"))
            .collect();
        if !undefined.is_empty() {
            out.push_str("\nWarnings:\n\n");
            for r in undefined {
                let names: Vec<&str> = ["accuracy", "precision", "recall", "f1"]
                    .iter()
                    .zip(&r.scores)
                    .filter(|(_, s)| *s == "NaN")
                    .map(|(n, _)| *n)
                    .collect();
                let _ = writeln!(
                    out,
                    "- {} / {}: {} undefined (zero denominator)",
                    r.tag,
                    r.condition,
                    names.join(", ")
                );
            }
        }
        out
    }

    /// Writes `report.csv` and `report.md` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, text) in [
            ("report.csv", self.to_csv()),
            ("report.md", self.to_markdown()),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

fn tag_order(rows: &[ReportRow]) -> Vec<String> {
    let mut tags: Vec<String> = Vec::new();
    for r in rows {
        if !tags.contains(&r.tag) {
            tags.push(r.tag.clone());
        }
    }
    tags
}
