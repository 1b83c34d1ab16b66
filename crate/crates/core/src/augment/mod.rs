//! Stochastic time-series transformations and their composition.
//!
//! Each transform has a deterministic core (`*_with` / `*_at`) that takes the
//! random quantities explicitly, and a sampling wrapper that draws them from
//! an [`Rng`]. Every transform returns a series of the input length.

mod spline;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::RngStream;

pub use spline::{interp_at, resample_linear, NaturalCubicSpline};

/// Lower bound on the time-warp speed curve.
pub const MIN_WARP_SPEED: f64 = 1e-3;

fn normal(mean: f64, sigma: f64) -> Normal<f64> {
    Normal::new(mean, sigma).expect("sigma is validated non-negative and finite")
}

pub fn jitter<R: Rng + ?Sized>(x: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    let noise = normal(0.0, sigma);
    x.iter().map(|&v| v + noise.sample(rng)).collect()
}

/// Draws the scaling factor: `N(1, σ²)`, or `N(0, σ²)` when `mean_zero`.
pub fn draw_scale<R: Rng + ?Sized>(sigma: f64, mean_zero: bool, rng: &mut R) -> f64 {
    normal(if mean_zero { 0.0 } else { 1.0 }, sigma).sample(rng)
}

pub fn scale_by(x: &[f64], s: f64) -> Vec<f64> {
    x.iter().map(|&v| v * s).collect()
}

pub fn scaling<R: Rng + ?Sized>(x: &[f64], sigma: f64, mean_zero: bool, rng: &mut R) -> Vec<f64> {
    scale_by(x, draw_scale(sigma, mean_zero, rng))
}

/// Length of the zeroed segment.
pub fn cutout_len(len: usize, ratio: f64) -> usize {
    ((ratio * len as f64).floor() as usize).min(len)
}

pub fn cutout_at(x: &[f64], start: usize, len: usize) -> Vec<f64> {
    let mut out = x.to_vec();
    out[start..start + len].iter_mut().for_each(|v| *v = 0.0);
    out
}

pub fn cutout<R: Rng + ?Sized>(x: &[f64], ratio: f64, rng: &mut R) -> Vec<f64> {
    let len = cutout_len(x.len(), ratio);
    if len == 0 {
        return x.to_vec();
    }
    let start = rng.random_range(0..=x.len() - len);
    cutout_at(x, start, len)
}

fn draw_knots<R: Rng + ?Sized>(knots: usize, sigma: f64, rng: &mut R) -> Vec<f64> {
    let d = normal(1.0, sigma);
    (0..knots).map(|_| d.sample(rng)).collect()
}

/// Smooth curve of length `len` through `knot_values` placed evenly over
/// `[0, len - 1]`.
pub fn warp_curve(len: usize, knot_values: &[f64]) -> Vec<f64> {
    if len < 2 {
        return vec![knot_values[0]; len];
    }
    NaturalCubicSpline::evenly_spaced((len - 1) as f64, knot_values.to_vec()).sample(len)
}

pub fn magnitude_warp_with(x: &[f64], knot_values: &[f64]) -> Vec<f64> {
    let w = warp_curve(x.len(), knot_values);
    x.iter().zip(w).map(|(&v, w)| v * w).collect()
}

pub fn magnitude_warp<R: Rng + ?Sized>(x: &[f64], knots: usize, sigma: f64, rng: &mut R) -> Vec<f64> {
    let k = draw_knots(knots, sigma, rng);
    magnitude_warp_with(x, &k)
}

/// Cumulative warp path of the speed curve through `knot_values`, rescaled
/// so that it maps `0 -> 0` and `len - 1 -> len - 1`.
pub fn time_warp_path(len: usize, knot_values: &[f64]) -> Vec<f64> {
    let speed = warp_curve(len, knot_values);
    let mut path = Vec::with_capacity(len);
    let mut acc = 0.0;
    for (t, s) in speed.into_iter().enumerate() {
        if t > 0 {
            acc += s.max(MIN_WARP_SPEED);
        }
        path.push(acc);
    }
    if len > 1 {
        let scale = (len - 1) as f64 / acc;
        path.iter_mut().for_each(|p| *p *= scale);
        path[len - 1] = (len - 1) as f64;
    }
    path
}

/// Output sample `t` reads the input where the warp path crosses `t`.
pub fn time_warp_with(x: &[f64], knot_values: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n < 2 {
        return x.to_vec();
    }
    let path = time_warp_path(n, knot_values);
    let mut out = Vec::with_capacity(n);
    let mut j = 0;
    for t in 0..n {
        let tf = t as f64;
        while j + 2 < n && path[j + 1] < tf {
            j += 1;
        }
        let (p0, p1) = (path[j], path[j + 1]);
        let f = if p1 > p0 {
            ((tf - p0) / (p1 - p0)).clamp(0.0, 1.0)
        } else {
            0.0
        };
        out.push(if f == 0.0 {
            x[j]
        } else if f == 1.0 {
            x[j + 1]
        } else {
            x[j] + f * (x[j + 1] - x[j])
        });
    }
    out
}

pub fn time_warp<R: Rng + ?Sized>(x: &[f64], knots: usize, sigma: f64, rng: &mut R) -> Vec<f64> {
    let k = draw_knots(knots, sigma, rng);
    time_warp_with(x, &k)
}

pub fn window_len(len: usize, ratio: f64) -> usize {
    ((ratio * len as f64).round() as usize).clamp(1, len.max(1))
}

/// Crops `x[start..start + len]` and stretches it back to `x.len()`.
pub fn window_slice_at(x: &[f64], start: usize, len: usize) -> Vec<f64> {
    resample_linear(&x[start..start + len], x.len())
}

pub fn window_slice<R: Rng + ?Sized>(x: &[f64], keep_ratio: f64, rng: &mut R) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let len = window_len(x.len(), keep_ratio);
    let start = rng.random_range(0..=x.len() - len);
    window_slice_at(x, start, len)
}

/// Resamples the window `x[start..start + len]` by `factor`, then brings the
/// whole series back to its original length.
pub fn window_warp_at(x: &[f64], start: usize, len: usize, factor: f64) -> Vec<f64> {
    let n = x.len();
    let warped_len = ((len as f64 * factor).round() as usize).max(1);
    let mut joined = Vec::with_capacity(n - len + warped_len);
    joined.extend_from_slice(&x[..start]);
    joined.extend(resample_linear(&x[start..start + len], warped_len));
    joined.extend_from_slice(&x[start + len..]);
    resample_linear(&joined, n)
}

pub fn window_warp<R: Rng + ?Sized>(x: &[f64], window_ratio: f64, factors: &[f64], rng: &mut R) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let len = window_len(x.len(), window_ratio);
    let start = rng.random_range(0..=x.len() - len);
    let factor = factors[rng.random_range(0..factors.len())];
    window_warp_at(x, start, len, factor)
}

/// One parameterized transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Augmentation {
    Jitter {
        #[serde(default = "defaults::jitter_sigma")]
        sigma: f64,
    },
    Scaling {
        #[serde(default = "defaults::scaling_sigma")]
        sigma: f64,
        /// Draw the factor from `N(0, σ²)` instead of `N(1, σ²)`.
        #[serde(default)]
        mean_zero: bool,
    },
    Cutout {
        #[serde(default = "defaults::cutout_ratio")]
        ratio: f64,
    },
    MagnitudeWarp {
        #[serde(default = "defaults::magnitude_knots")]
        knots: usize,
        #[serde(default = "defaults::magnitude_sigma")]
        sigma: f64,
    },
    TimeWarp {
        #[serde(default = "defaults::time_knots")]
        knots: usize,
        #[serde(default = "defaults::time_sigma")]
        sigma: f64,
    },
    WindowSlice {
        #[serde(default = "defaults::keep_ratio")]
        keep_ratio: f64,
    },
    WindowWarp {
        #[serde(default = "defaults::window_ratio")]
        window_ratio: f64,
        #[serde(default = "defaults::warp_factors")]
        factors: Vec<f64>,
    },
}

pub mod defaults {
    pub fn jitter_sigma() -> f64 {
        0.2
    }
    pub fn scaling_sigma() -> f64 {
        0.4
    }
    pub fn cutout_ratio() -> f64 {
        0.1
    }
    pub fn magnitude_knots() -> usize {
        4
    }
    pub fn magnitude_sigma() -> f64 {
        0.3
    }
    pub fn time_knots() -> usize {
        8
    }
    pub fn time_sigma() -> f64 {
        0.2
    }
    pub fn keep_ratio() -> f64 {
        0.8
    }
    pub fn window_ratio() -> f64 {
        0.3
    }
    pub fn warp_factors() -> Vec<f64> {
        vec![0.5, 2.0]
    }
}

impl Augmentation {
    pub fn name(&self) -> &'static str {
        match self {
            Augmentation::Jitter { .. } => "jitter",
            Augmentation::Scaling { .. } => "scaling",
            Augmentation::Cutout { .. } => "cutout",
            Augmentation::MagnitudeWarp { .. } => "magnitude_warp",
            Augmentation::TimeWarp { .. } => "time_warp",
            Augmentation::WindowSlice { .. } => "window_slice",
            Augmentation::WindowWarp { .. } => "window_warp",
        }
    }

    /// The transform of the given name with its default parameters.
    pub fn from_name(name: &str) -> Result<Self> {
        use defaults::*;
        Ok(match name {
            "jitter" => Augmentation::Jitter { sigma: jitter_sigma() },
            "scaling" => Augmentation::Scaling {
                sigma: scaling_sigma(),
                mean_zero: false,
            },
            "cutout" => Augmentation::Cutout { ratio: cutout_ratio() },
            "magnitude_warp" => Augmentation::MagnitudeWarp {
                knots: magnitude_knots(),
                sigma: magnitude_sigma(),
            },
            "time_warp" => Augmentation::TimeWarp {
                knots: time_knots(),
                sigma: time_sigma(),
            },
            "window_slice" => Augmentation::WindowSlice {
                keep_ratio: keep_ratio(),
            },
            "window_warp" => Augmentation::WindowWarp {
                window_ratio: window_ratio(),
                factors: warp_factors(),
            },
            other => return Err(invalid!("unknown augmentation `{other}`")),
        })
    }

    pub const NAMES: [&'static str; 7] = [
        "jitter",
        "scaling",
        "cutout",
        "magnitude_warp",
        "time_warp",
        "window_slice",
        "window_warp",
    ];

    pub fn validate(&self) -> Result<()> {
        let sigma_ok = |s: f64| s.is_finite() && s >= 0.0;
        let open_unit = |r: f64| r > 0.0 && r < 1.0;
        let ok = match self {
            Augmentation::Jitter { sigma } | Augmentation::Scaling { sigma, .. } => sigma_ok(*sigma),
            Augmentation::Cutout { ratio } => open_unit(*ratio),
            Augmentation::MagnitudeWarp { knots, sigma } | Augmentation::TimeWarp { knots, sigma } => {
                *knots >= 2 && sigma_ok(*sigma)
            }
            Augmentation::WindowSlice { keep_ratio } => *keep_ratio > 0.0 && *keep_ratio <= 1.0,
            Augmentation::WindowWarp { window_ratio, factors } => {
                open_unit(*window_ratio) && !factors.is_empty() && factors.iter().all(|f| f.is_finite() && *f > 0.0)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(invalid!("invalid parameters for {}: {:?}", self.name(), self))
        }
    }

    pub fn apply<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Vec<f64> {
        match self {
            Augmentation::Jitter { sigma } => jitter(x, *sigma, rng),
            Augmentation::Scaling { sigma, mean_zero } => scaling(x, *sigma, *mean_zero, rng),
            Augmentation::Cutout { ratio } => cutout(x, *ratio, rng),
            Augmentation::MagnitudeWarp { knots, sigma } => magnitude_warp(x, *knots, *sigma, rng),
            Augmentation::TimeWarp { knots, sigma } => time_warp(x, *knots, *sigma, rng),
            Augmentation::WindowSlice { keep_ratio } => window_slice(x, *keep_ratio, rng),
            Augmentation::WindowWarp { window_ratio, factors } => window_warp(x, *window_ratio, factors, rng),
        }
    }
}

/// Ordered list of transforms applied one after another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AugmentationPolicy {
    pub steps: Vec<Augmentation>,
}

impl Default for AugmentationPolicy {
    /// Magnitude warping followed by time warping.
    fn default() -> Self {
        Self {
            steps: vec![
                Augmentation::from_name("magnitude_warp").unwrap(),
                Augmentation::from_name("time_warp").unwrap(),
            ],
        }
    }
}

impl AugmentationPolicy {
    pub fn new(steps: Vec<Augmentation>) -> Result<Self> {
        let p = Self { steps };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps.is_empty() {
            return Err(invalid!("augmentation policy is empty"));
        }
        self.steps.iter().try_for_each(Augmentation::validate)
    }

    /// Applies every step in order; all steps draw from the one stream.
    pub fn apply(&self, x: &[f64], stream: RngStream) -> Vec<f64> {
        let mut rng = stream.rng();
        self.apply_with(x, &mut rng)
    }

    pub fn apply_with<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Vec<f64> {
        let mut cur = x.to_vec();
        for step in &self.steps {
            cur = step.apply(&cur, rng);
        }
        cur
    }
}

#[cfg(test)]
mod tests;
