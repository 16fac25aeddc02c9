//! CSV writers for training history, timing and confusion tallies.

use std::fmt::Write as _;
use std::path::Path;

use super::EpochRecord;
use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;

pub const HISTORY_HEADER: &str = "# dtnt history v1";
pub const CONFUSION_HEADER: &str = "# dtnt confusion v1";
pub const TIMING_HEADER: &str = "# dtnt timing v1";

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Wall time is written as `NA` unless `wall_time` is set, so that
/// identical runs give identical files.
pub fn history_csv(records: &[EpochRecord], wall_time: bool) -> String {
    let mut out = format!("{HISTORY_HEADER}\nepoch,lr,train_loss,train_acc,test_acc,seconds\n");
    for r in records {
        let secs = if wall_time {
            format!("{:.3}", r.seconds)
        } else {
            "NA".into()
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{secs}",
            r.epoch, r.lr, r.train_loss, r.train_acc, r.test_acc
        );
    }
    out
}

pub fn write_history(path: &Path, records: &[EpochRecord], wall_time: bool) -> Result<()> {
    write(path, &history_csv(records, wall_time))
}

pub fn write_timing(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let mut out = format!("{TIMING_HEADER}\nepoch,seconds\n");
    for r in records {
        let _ = writeln!(out, "{},{:.3}", r.epoch, r.seconds);
    }
    write(path, &out)
}

pub fn confusion_csv(rows: &[(String, String, ConfusionMatrix)]) -> String {
    let mut out = format!("{CONFUSION_HEADER}\ntag,condition,tp,tn,fp,fn\n");
    for (tag, cond, cm) in rows {
        let _ = writeln!(out, "{tag},{cond},{},{},{},{}", cm.tp, cm.tn, cm.fp, cm.fn_);
    }
    out
}

pub fn write_confusion(path: &Path, rows: &[(String, String, ConfusionMatrix)]) -> Result<()> {
    write(path, &confusion_csv(rows))
}

/// Parses a file written by [`write_confusion`].
pub fn read_confusion(path: &Path) -> Result<Vec<(String, String, ConfusionMatrix)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |n: usize, msg: &str| Error::Dataset(format!("{}:{}: {msg}", path.display(), n + 1));
    let mut out = Vec::new();
    let mut saw_header = false;
    for (n, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if !saw_header {
            if line.trim() != "tag,condition,tp,tn,fp,fn" {
                return Err(bad(n, "expected header `tag,condition,tp,tn,fp,fn`"));
            }
            saw_header = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 6 {
            return Err(bad(n, "expected 6 fields"));
        }
        let num = |s: &str| {
            s.parse::<u64>()
                .map_err(|_| bad(n, &format!("`{s}` is not a count")))
        };
        out.push((
            f[0].to_string(),
            f[1].to_string(),
            ConfusionMatrix {
                tp: num(f[2])?,
                tn: num(f[3])?,
                fp: num(f[4])?,
                fn_: num(f[5])?,
            },
        ));
    }
    Ok(out)
}
