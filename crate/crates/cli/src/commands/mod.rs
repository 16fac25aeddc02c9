pub mod augment;
pub mod eval;
pub mod gradcheck;
pub mod report;
pub mod synth;
pub mod train;

use std::path::Path;

use dtnt_core::data::Dataset;
use dtnt_core::fog::{apply_fog, condition_tag, FogParams};
use dtnt_core::kernels::Exec;
use dtnt_core::metrics::ConfusionMatrix;
use dtnt_core::model::Model;
use dtnt_core::report::ReportTable;
use dtnt_core::train::{evaluate, write_confusion};

use crate::error::Result;

pub const DEFAULT_BETAS: &str = "0.08,0.16,0.24";

pub type ResultRow = (String, String, ConfusionMatrix);

pub fn fogged(ds: &Dataset, beta: f64) -> Result<Dataset> {
    Ok(ds.map_images(|im| {
        let s = im.shape();
        Ok(apply_fog(im, &FogParams::new(beta, s[1], s[2])?)?.image)
    })?)
}

/// Tallies `model` on `ds` clean and under each fog strength.
pub fn evaluate_conditions(
    model: &Model<f32>,
    ds: &Dataset,
    betas: &[f64],
    tag: &str,
) -> Result<Vec<ResultRow>> {
    let exec = Exec::auto();
    let mut rows = vec![(
        tag.to_string(),
        "normal".to_string(),
        evaluate(model, ds, exec)?,
    )];
    for &beta in betas {
        let cm = evaluate(model, &fogged(ds, beta)?, exec)?;
        rows.push((tag.to_string(), condition_tag(beta), cm));
    }
    for (tag, cond, cm) in &rows {
        log::info!("{tag} {cond}: accuracy {:.4}", cm.metrics()?.accuracy);
    }
    Ok(rows)
}

/// `confusion.csv`, `report.csv` and `report.md` in `dir`.
pub fn write_results(dir: &Path, rows: &[ResultRow]) -> Result<()> {
    write_confusion(&dir.join("confusion.csv"), rows)?;
    ReportTable::from_results(rows)?.write(dir)?;
    Ok(())
}
