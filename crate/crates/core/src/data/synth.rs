//! Procedural overhead vehicle chips: a rounded-rectangle body, with a
//! lighter cargo bed over the rear 40% for pickups.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dataset, Item, PICKUP, SEDAN};
use crate::tensor::Tensor;

pub const SIZE: usize = 64;

/// Signed distance to a rounded rectangle centred at the origin.
fn rounded_rect_sd(u: f64, v: f64, half_len: f64, half_wid: f64, radius: f64) -> f64 {
    let qx = u.abs() - (half_len - radius);
    let qy = v.abs() - (half_wid - radius);
    let outside = qx.max(0.0).hypot(qy.max(0.0));
    outside + qx.max(qy).min(0.0) - radius
}

/// Smooth background: bilinear upsampling of a coarse random grid.
fn texture(rng: &mut ChaCha8Rng, amplitude: f64) -> Vec<f64> {
    const G: usize = 9;
    let grid: Vec<f64> = (0..G * G)
        .map(|_| rng.random_range(-amplitude..amplitude))
        .collect();
    let step = (SIZE - 1) as f64 / (G - 1) as f64;
    (0..SIZE * SIZE)
        .map(|p| {
            let (y, x) = ((p / SIZE) as f64 / step, (p % SIZE) as f64 / step);
            let (y0, x0) = (
                (y.floor() as usize).min(G - 2),
                (x.floor() as usize).min(G - 2),
            );
            let (fy, fx) = (y - y0 as f64, x - x0 as f64);
            let at = |r: usize, c: usize| grid[r * G + c];
            (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1))
                + fy * ((1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1))
        })
        .collect()
}

/// One `1×64×64` chip quantized to multiples of 1/255.
pub fn render(rng: &mut ChaCha8Rng, pickup: bool) -> Tensor<f32> {
    let background = rng.random_range(0.2..0.45);
    let tex = texture(rng, 0.06);
    let length = rng.random_range(28.0..=34.0);
    let width = length * rng.random_range(0.42..0.5);
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (cy, cx) = (
        31.5 + rng.random_range(-6.0..6.0),
        31.5 + rng.random_range(-6.0..6.0),
    );
    let body = rng.random_range(0.45..0.6);
    let bed = body + rng.random_range(0.3..0.4);
    let window = body - rng.random_range(0.15..0.25);
    let (sin, cos) = angle.sin_cos();
    let (half_len, half_wid) = (length / 2.0, width / 2.0);
    // Rear 40% of the body, measured from the back bumper at u = −half_len.
    let bed_front = -half_len + 0.4 * length;
    let mut data = Vec::with_capacity(SIZE * SIZE);
    for p in 0..SIZE * SIZE {
        let (y, x) = ((p / SIZE) as f64 - cy, (p % SIZE) as f64 - cx);
        let (u, v) = (x * cos + y * sin, -x * sin + y * cos);
        let coverage = (0.5 - rounded_rect_sd(u, v, half_len, half_wid, 3.0)).clamp(0.0, 1.0);
        let mut paint = body;
        if pickup && u < bed_front {
            paint = bed;
        } else {
            // windscreen band across the cab
            let wu = if pickup {
                bed_front + 0.35 * (half_len - bed_front)
            } else {
                0.15 * length
            };
            if (u - wu).abs() < 0.08 * length && v.abs() < half_wid - 1.5 {
                paint = window;
            }
        }
        let noise = rng.random_range(-0.03..0.03);
        let bg = background + tex[p];
        let value = (bg * (1.0 - coverage) + paint * coverage + noise).clamp(0.0, 1.0);
        data.push((value * 255.0).round() as f32 / 255.0);
    }
    Tensor::new(vec![1, SIZE, SIZE], data).expect("fixed geometry")
}

/// `n_per_class` sedans followed by `n_per_class` pickups.
pub fn synth_generate(n_per_class: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(2 * n_per_class);
    for (label, pickup) in [(0, false), (1, true)] {
        for i in 0..n_per_class {
            let image = render(&mut rng, pickup);
            let class = if pickup { PICKUP } else { SEDAN };
            items.push(Item {
                image: Arc::new(image),
                label,
                name: format!("{class}/{i:05}.png"),
            });
        }
    }
    Dataset {
        items,
        class_names: vec![SEDAN.to_string(), PICKUP.to_string()],
        provenance: "synthetic".into(),
        seed: Some(seed),
    }
}
