//! Synthetic fog: a radial depth proxy, exponential transmission, and a
//! blend toward a constant airlight of 0.5.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

pub const LIGHT: f64 = 0.08;
pub const MEDIUM: f64 = 0.16;
pub const HEAVY: f64 = 0.24;
pub const PRESETS: [f64; 3] = [LIGHT, MEDIUM, HEAVY];

pub const AIRLIGHT: f64 = 0.5;

/// Values may exceed `[0, 1]` by this much before being rejected.
pub const RANGE_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FogParams {
    pub beta: f64,
    pub rows: usize,
    pub cols: usize,
    pub center_row: f64,
    pub center_col: f64,
}

impl FogParams {
    /// Centered on the exact middle of the grid, `((rows−1)/2, (cols−1)/2)`.
    pub fn new(beta: f64, rows: usize, cols: usize) -> Result<Self> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::invalid(
                "fog",
                format!("beta must be finite and >= 0, got {beta}"),
            ));
        }
        if rows == 0 || cols == 0 {
            return Err(Error::invalid(
                "fog",
                "image must have at least one row and column",
            ));
        }
        Ok(FogParams {
            beta,
            rows,
            cols,
            center_row: (rows as f64 - 1.0) / 2.0,
            center_col: (cols as f64 - 1.0) / 2.0,
        })
    }

    pub fn with_center(mut self, row: f64, col: f64) -> Self {
        self.center_row = row;
        self.center_col = col;
        self
    }

    /// `d = −0.04·‖(i, j) − (i₀, j₀)‖ + √max(rows, cols)`.
    pub fn distance(&self, i: f64, j: f64) -> Result<f64> {
        let (r, c) = ((self.rows - 1) as f64, (self.cols - 1) as f64);
        if !(0.0..=r).contains(&i) || !(0.0..=c).contains(&j) {
            return Err(Error::invalid(
                "fog_distance",
                format!("pixel ({i}, {j}) outside {}x{} image", self.rows, self.cols),
            ));
        }
        let radius = (i - self.center_row).hypot(j - self.center_col);
        Ok(-0.04 * radius + (self.rows.max(self.cols) as f64).sqrt())
    }
}

/// `t = e^{−β·d}`, unclamped.
pub fn transmission(beta: f64, d: f64) -> f64 {
    (-beta * d).exp()
}

/// Blend of one value toward the airlight.
pub fn blend(v: f64, t: f64) -> f64 {
    v * t + AIRLIGHT * (1.0 - t)
}

#[derive(Clone, Debug)]
pub struct Fogged<T> {
    pub image: Tensor<T>,
    /// Pixel positions whose transmission fell outside `[0, 1]`.
    pub transmission_clamps: usize,
    /// Output values pulled back into `[0, 1]`.
    pub value_clamps: usize,
}

impl<T> Fogged<T> {
    pub fn clamp_count(&self) -> usize {
        self.transmission_clamps + self.value_clamps
    }
}

/// Fogs a `C×H×W` image with values in `[0, 1]`, each channel alike.
/// Transmission is clamped to `[0, 1]` and results to `[0, 1]`.
pub fn apply_fog<T: Real>(image: &Tensor<T>, params: &FogParams) -> Result<Fogged<T>> {
    let shape = image.shape();
    if shape.len() != 3 || shape[1] != params.rows || shape[2] != params.cols {
        return Err(Error::invalid(
            "apply_fog",
            format!(
                "image shape {shape:?} does not match {}x{} fog grid",
                params.rows, params.cols
            ),
        ));
    }
    if let Some(v) = image
        .data()
        .iter()
        .map(|&v| Real::to_f64(v))
        .find(|v| !(-RANGE_TOLERANCE..=1.0 + RANGE_TOLERANCE).contains(v))
    {
        return Err(Error::invalid(
            "apply_fog",
            format!("value {v} outside [0, 1]; normalize first"),
        ));
    }
    let (h, w) = (params.rows, params.cols);
    let mut t_map = Vec::with_capacity(h * w);
    let mut transmission_clamps = 0;
    for i in 0..h {
        for j in 0..w {
            let t = transmission(params.beta, params.distance(i as f64, j as f64)?);
            if !(0.0..=1.0).contains(&t) {
                transmission_clamps += 1;
            }
            t_map.push(t.clamp(0.0, 1.0));
        }
    }
    let mut value_clamps = 0;
    let data = image
        .data()
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let out = blend(Real::to_f64(*v), t_map[k % (h * w)]);
            if !(0.0..=1.0).contains(&out) {
                value_clamps += 1;
            }
            T::lit(out.clamp(0.0, 1.0))
        })
        .collect();
    Ok(Fogged {
        image: Tensor::new(shape.to_vec(), data)?,
        transmission_clamps,
        value_clamps,
    })
}

/// Condition tag used in reports, e.g. `fog0.24`.
pub fn condition_tag(beta: f64) -> String {
    format!("fog{beta}")
}
