//! Labeled image sets: directory loading, class balancing, stratified
//! splitting, batching and the synthetic generator.

mod io;
mod synth;
#[cfg(test)]
mod tests;

use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use io::{quantize, read_png, write_png};
pub use synth::{render, synth_generate, SIZE};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SEDAN: &str = "sedan";
pub const PICKUP: &str = "pickup";

/// Extent every loaded image must have.
pub const IMAGE_SIZE: usize = 64;

#[derive(Clone, Debug)]
pub struct Item {
    /// `C×H×W` in `[0, 1]`.
    pub image: Arc<Tensor<f32>>,
    pub label: usize,
    /// Path relative to the dataset root, e.g. `sedan/a.png`.
    pub name: String,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub items: Vec<Item>,
    /// Index 0 is `sedan`, 1 is `pickup` when present.
    pub class_names: Vec<String>,
    /// Region name or `synthetic`.
    pub provenance: String,
    /// Seed of the last sampling step, if any.
    pub seed: Option<u64>,
}

/// Orders class names: `sedan`, `pickup`, then the rest alphabetically.
pub fn class_order(mut names: Vec<String>) -> Vec<String> {
    let rank = |n: &str| match n {
        SEDAN => 0,
        PICKUP => 1,
        _ => 2,
    };
    names.sort_by(|a, b| rank(a).cmp(&rank(b)).then_with(|| a.cmp(b)));
    names
}

fn sorted_entries(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

/// Reads `<root>/<class>/*.png`. Classes are the subdirectories; files are
/// enumerated in lexicographic order.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let dirs: Vec<_> = sorted_entries(root)?
        .into_iter()
        .filter(|p| p.is_dir())
        .collect();
    let names: Vec<String> = dirs
        .iter()
        .map(|d| d.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    if names.is_empty() {
        return Err(Error::Dataset(format!(
            "{}: no class subdirectories",
            root.display()
        )));
    }
    let class_names = class_order(names);
    let mut items = Vec::new();
    let mut channels = None;
    for (label, class) in class_names.iter().enumerate() {
        let dir = root.join(class);
        let files: Vec<_> = sorted_entries(&dir)?
            .into_iter()
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
            .collect();
        if files.is_empty() {
            return Err(Error::Dataset(format!(
                "class directory {} has no PNG images",
                dir.display()
            )));
        }
        for path in files {
            let image = read_png(&path)?;
            let s = image.shape();
            if s[1] != IMAGE_SIZE || s[2] != IMAGE_SIZE {
                return Err(Error::Image {
                    path,
                    msg: format!("expected {IMAGE_SIZE}x{IMAGE_SIZE}, got {}x{}", s[2], s[1]),
                });
            }
            match channels {
                None => channels = Some(s[0]),
                Some(c) if c != s[0] => {
                    return Err(Error::Image {
                        path,
                        msg: format!("has {} channels, earlier images have {c}", s[0]),
                    })
                }
                _ => {}
            }
            let name = format!("{class}/{}", path.file_name().unwrap().to_string_lossy());
            items.push(Item {
                image: Arc::new(image),
                label,
                name,
            });
        }
    }
    let provenance = root
        .file_name()
        .map_or_else(|| "dataset".into(), |n| n.to_string_lossy().into_owned());
    Ok(Dataset {
        items,
        class_names,
        provenance,
        seed: None,
    })
}

/// Writes every item to `<root>/<item.name>`.
pub fn write_dataset(ds: &Dataset, root: &Path) -> Result<()> {
    for class in &ds.class_names {
        let dir = root.join(class);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    ds.items
        .iter()
        .try_for_each(|item| write_png(&root.join(&item.name), &item.image))
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes()];
        for item in &self.items {
            c[item.label] += 1;
        }
        c
    }

    pub fn channels(&self) -> Option<usize> {
        self.items.first().map(|i| i.image.shape()[0])
    }

    fn with_items(&self, items: Vec<Item>, seed: u64) -> Dataset {
        Dataset {
            items,
            class_names: self.class_names.clone(),
            provenance: self.provenance.clone(),
            seed: Some(seed),
        }
    }

    fn by_class(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.num_classes()];
        for (i, item) in self.items.iter().enumerate() {
            groups[item.label].push(i);
        }
        groups
    }

    /// Downsamples every class to the minority count, then shuffles.
    pub fn balance(&self, seed: u64) -> Result<Dataset> {
        let mut groups = self.by_class();
        if let Some(c) = groups.iter().position(Vec::is_empty) {
            return Err(Error::Dataset(format!(
                "class `{}` has no items",
                self.class_names[c]
            )));
        }
        let keep = groups.iter().map(Vec::len).min().unwrap_or(0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut chosen = Vec::new();
        for g in &mut groups {
            g.shuffle(&mut rng);
            chosen.extend_from_slice(&g[..keep]);
        }
        chosen.shuffle(&mut rng);
        Ok(self.with_items(
            chosen.into_iter().map(|i| self.items[i].clone()).collect(),
            seed,
        ))
    }

    /// Stratified split with `round(fraction·N)` training items.
    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::Dataset(format!(
                "train fraction must be in (0, 1), got {train_fraction}"
            )));
        }
        let n = self.len();
        if n < 2 {
            return Err(Error::Dataset(format!("cannot split {n} item(s)")));
        }
        let mut groups = self.by_class();
        let quotas = split_quotas(
            &groups.iter().map(Vec::len).collect::<Vec<_>>(),
            train_fraction,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (g, q) in groups.iter_mut().zip(quotas) {
            g.shuffle(&mut rng);
            train.extend_from_slice(&g[..q]);
            test.extend_from_slice(&g[q..]);
        }
        if train.is_empty() || test.is_empty() {
            return Err(Error::Dataset(format!(
                "split of {n} items at {train_fraction} leaves one side empty"
            )));
        }
        train.shuffle(&mut rng);
        test.shuffle(&mut rng);
        let pick = |ix: Vec<usize>| {
            self.with_items(
                ix.into_iter().map(|i| self.items[i].clone()).collect(),
                seed,
            )
        };
        Ok((pick(train), pick(test)))
    }

    /// Per-channel mean and (population) standard deviation over all pixels.
    pub fn channel_stats(&self) -> Result<(Vec<f32>, Vec<f32>)> {
        let c = self
            .channels()
            .ok_or_else(|| Error::Dataset("no items to measure".into()))?;
        let mut sum = vec![0.0f64; c];
        let mut sq = vec![0.0f64; c];
        let mut count = 0usize;
        for item in &self.items {
            let plane = item.image.len() / c;
            for (i, &v) in item.image.data().iter().enumerate() {
                sum[i / plane] += v as f64;
                sq[i / plane] += (v as f64) * (v as f64);
            }
            count += plane;
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| ((s / count as f64 - m * m).max(0.0).sqrt().max(1e-6)) as f32)
            .collect();
        Ok((mean.into_iter().map(|m| m as f32).collect(), std))
    }

    /// Stacks the selected items into `[N×C×H×W]` plus labels.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<f32>, Vec<usize>)> {
        let first = self.items.get(
            *indices
                .first()
                .ok_or_else(|| Error::Dataset("empty batch".into()))?,
        );
        let shape = first
            .ok_or_else(|| Error::Dataset("batch index out of range".into()))?
            .image
            .shape()
            .to_vec();
        let mut data = Vec::with_capacity(indices.len() * shape.iter().product::<usize>());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let item = self
                .items
                .get(i)
                .ok_or_else(|| Error::Dataset(format!("batch index {i} out of range")))?;
            if item.image.shape() != shape.as_slice() {
                return Err(Error::Dataset(format!(
                    "{} has shape {:?}, expected {shape:?}",
                    item.name,
                    item.image.shape()
                )));
            }
            data.extend_from_slice(item.image.data());
            labels.push(item.label);
        }
        let mut full = vec![indices.len()];
        full.extend(shape);
        Ok((Tensor::new(full, data)?, labels))
    }

    /// Applies `f` to every image, keeping labels and names.
    pub fn map_images(&self, f: impl Fn(&Tensor<f32>) -> Result<Tensor<f32>>) -> Result<Dataset> {
        let items = self
            .items
            .iter()
            .map(|it| {
                Ok(Item {
                    image: Arc::new(f(&it.image)?),
                    label: it.label,
                    name: it.name.clone(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Dataset {
            items,
            class_names: self.class_names.clone(),
            provenance: self.provenance.clone(),
            seed: self.seed,
        })
    }
}

/// Per-class training counts summing to `round(fraction·N)`: floors first,
/// then the largest remainders (ties to the lowest class index).
pub fn split_quotas(counts: &[usize], fraction: f64) -> Vec<usize> {
    let n: usize = counts.iter().sum();
    let total = (fraction * n as f64).round() as usize;
    let exact: Vec<f64> = counts.iter().map(|&c| fraction * c as f64).collect();
    let mut quotas: Vec<usize> = exact.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let mut missing = total.saturating_sub(quotas.iter().sum());
    for &c in order.iter().cycle().take(order.len() * 2) {
        if missing == 0 {
            break;
        }
        if quotas[c] < counts[c] {
            quotas[c] += 1;
            missing -= 1;
        }
    }
    quotas
}

/// `max(1, floor(fraction·n))`.
pub fn batch_size(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64 + 1e-9).floor() as usize).max(1)
}

/// Shuffled index batches for one epoch; the final short batch is kept.
pub fn make_batches(n: usize, fraction: f64, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return Err(Error::Dataset("training set is empty".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Dataset(format!(
            "batch fraction must be in (0, 1], got {fraction}"
        )));
    }
    let size = batch_size(n, fraction);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    order.shuffle(&mut rng);
    Ok(order.chunks(size).map(<[usize]>::to_vec).collect())
}
