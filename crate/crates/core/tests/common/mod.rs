//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use curve_core::imaging::FloatImage;
use curve_core::tone_curve::ControlPoints;

/// Cubic Bézier coordinate with endpoints 0 and 1, written in the power
/// basis so it shares no code with the library.
pub fn bezier(q: f64, p1: f64, p2: f64) -> f64 {
    let a = 3.0 * p1 - 3.0 * p2 + 1.0;
    let b = -6.0 * p1 + 3.0 * p2;
    let c = 3.0 * p1;
    ((a * q + b) * q + c) * q
}

/// Exact tone mapping `x -> c_out(c_in^-1(x))` for control points whose
/// input coordinate is non-decreasing in the parameter. The parameter is
/// bracketed on a dense grid of samples and refined by bisection.
pub struct ExactCurve {
    p: ControlPoints,
    grid: Vec<f64>,
}

impl ExactCurve {
    pub const DENSE: usize = 100_000;

    pub fn new(p: ControlPoints) -> Self {
        let grid = (0..=Self::DENSE)
            .map(|j| bezier(j as f64 / Self::DENSE as f64, p.p1_in, p.p2_in))
            .collect();
        Self { p, grid }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        let j = self.grid.partition_point(|&v| v < x).clamp(1, Self::DENSE);
        let (mut lo, mut hi) = ((j - 1) as f64 / Self::DENSE as f64, j as f64 / Self::DENSE as f64);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if bezier(mid, self.p.p1_in, self.p.p2_in) < x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        bezier(0.5 * (lo + hi), self.p.p1_out, self.p.p2_out)
    }
}

/// Central-difference derivative.
pub fn central(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Relative gradient error with an absolute floor for near-zero gradients.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Per-pixel channel mean, computed independently of the library.
pub fn luma(img: &FloatImage) -> Vec<f64> {
    let (c, h, w) = img.dims();
    let d = img.data();
    (0..h * w)
        .map(|i| (0..c).map(|k| f64::from(d[k * h * w + i])).sum::<f64>() / c as f64)
        .collect()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
