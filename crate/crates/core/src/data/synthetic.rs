//! Labeled toy data: sine, sawtooth and chirp waveforms with random
//! frequency, phase and amplitude plus Gaussian noise. The frequency range
//! is wide so that waveform shape, not frequency, separates the classes.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::TimeSeriesDataset;
use crate::error::{invalid, Result};
use crate::rng::{tag, RngStream};

pub const SYNTHETIC_CLASSES: [&str; 3] = ["sine", "sawtooth", "chirp"];

/// Two related parameterizations of the same three waveform families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticVariant {
    /// 2 to 12 base cycles per window.
    A,
    /// 3 to 14 base cycles, with a slow baseline drift.
    B,
}

/// `n` series of length `len`, classes assigned round-robin, noise
/// standard deviation `noise`.
pub fn synthetic_dataset(
    n: usize,
    len: usize,
    noise: f64,
    variant: SyntheticVariant,
    seed: u64,
) -> Result<TimeSeriesDataset> {
    if n < SYNTHETIC_CLASSES.len() || len < 2 {
        return Err(invalid!("synthetic data needs at least 3 series of length 2"));
    }
    let noise = Normal::new(0.0, noise).map_err(|e| invalid!("noise: {e}"))?;
    let (lo, hi, drift) = match variant {
        SyntheticVariant::A => (2.0, 12.0, 0.0),
        SyntheticVariant::B => (3.0, 14.0, 0.5),
    };
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % SYNTHETIC_CLASSES.len();
        let mut rng = RngStream::derive(seed, &[tag::SYNTHETIC, variant as u64, i as u64]).rng();
        let cycles = rng.random_range(lo..hi);
        let phase = rng.random_range(0.0..1.0);
        let amp = rng.random_range(0.7..1.3);
        let tilt = drift * rng.random_range(-1.0..1.0);
        let row = (0..len)
            .map(|t| {
                let s = t as f64 / (len - 1) as f64;
                let shape = match class {
                    0 => (TAU * (cycles * s + phase)).sin(),
                    1 => {
                        let p = (cycles * s + phase).fract();
                        2.0 * p - 1.0
                    }
                    _ => {
                        // frequency doubles linearly across the window
                        (TAU * (cycles * s + 0.5 * cycles * s * s + phase)).sin()
                    }
                };
                amp * shape + tilt * s + noise.sample(&mut rng)
            })
            .collect();
        rows.push(row);
        labels.push(SYNTHETIC_CLASSES[class].to_string());
    }
    let name = match variant {
        SyntheticVariant::A => "synthetic-a",
        SyntheticVariant::B => "synthetic-b",
    };
    TimeSeriesDataset::new(name, rows, Some(labels))
}
