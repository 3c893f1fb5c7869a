//! Cubic Bézier tone curves with fixed endpoints `(0,0)` and `(1,1)`.
//!
//! An [`ActionVector`] `[theta1, theta2, r1, r2]` places the two interior
//! control points in polar form around the endpoints; the all-zero action
//! puts them on the diagonal, giving the identity mapping. The curve is
//! sampled at `L + 1` uniform parameter values and applied to intensities
//! as a piecewise-linear map:
//!
//! ```text
//! y = sum_{j<L} clip(x - in_j, 0, din_j) * dout_j / din_j
//! ```
//!
//! Because the map is pointwise it can be baked into a [`Lut`]; applying
//! successive curves to a LUT composes them, so a whole episode collapses
//! into a single gather over the full-resolution image.

use std::f64::consts::{FRAC_PI_4, SQRT_2};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{level_to_unit, max_level, unit_to_level, FloatImage, QuantizedImage};

/// Every action component lies in `[-ACTION_LIMIT, ACTION_LIMIT]`.
pub const ACTION_LIMIT: f64 = 2.0;
pub const DEFAULT_SEGMENTS: usize = 64;
pub const SUPPORTED_BIT_DEPTHS: [u32; 4] = [8, 10, 12, 16];

/// Floor applied to the input step in the slope quotient. Non-monotone curves
/// produce zero or negative steps; the clip bound still uses the raw step.
const MIN_INPUT_STEP: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ToneCurveError {
    #[error("action component {name} = {value} lies outside [-2, 2]")]
    ActionOutOfRange { name: &'static str, value: f64 },
    #[error("a curve table needs at least one segment")]
    NoSegments,
    #[error("unsupported LUT bit depth {0} (expected 8, 10, 12 or 16)")]
    UnsupportedBitDepth(u32),
    #[error("image bit depth {image} does not match LUT bit depth {lut}")]
    BitDepthMismatch { image: u32, lut: u32 },
    #[error("malformed curve table: {0}")]
    MalformedTable(String),
    #[error("malformed LUT: {0}")]
    MalformedLut(String),
}

pub type Result<T> = std::result::Result<T, ToneCurveError>;

/// Tone-curve parameters, ordered `[theta1, theta2, r1, r2]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ActionVector {
    pub theta1: f64,
    pub theta2: f64,
    pub r1: f64,
    pub r2: f64,
}

impl ActionVector {
    const NAMES: [&'static str; 4] = ["theta1", "theta2", "r1", "r2"];

    pub fn new(theta1: f64, theta2: f64, r1: f64, r2: f64) -> Result<Self> {
        let a = Self {
            theta1,
            theta2,
            r1,
            r2,
        };
        a.validate()?;
        Ok(a)
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn from_array(v: [f64; 4]) -> Result<Self> {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.theta1, self.theta2, self.r1, self.r2]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in Self::NAMES.iter().zip(self.to_array()) {
            if !(-ACTION_LIMIT..=ACTION_LIMIT).contains(&value) {
                return Err(ToneCurveError::ActionOutOfRange { name, value });
            }
        }
        Ok(())
    }
}

/// The free Bézier coordinates; endpoints are pinned at (0,0) and (1,1).
///
/// Values may leave `[0, 1]` (radii range over `[-0.5, 1.5]`); they are not
/// clamped here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlPoints {
    pub p1_in: f64,
    pub p1_out: f64,
    pub p2_in: f64,
    pub p2_out: f64,
}

impl ControlPoints {
    pub fn identity() -> Self {
        let a = SQRT_2 / 4.0;
        Self {
            p1_in: a,
            p1_out: a,
            p2_in: 1.0 - a,
            p2_out: 1.0 - a,
        }
    }
}

pub fn control_points(action: &ActionVector) -> Result<ControlPoints> {
    action.validate()?;
    let radius1 = (action.r1 + 1.0) / 2.0;
    let radius2 = (action.r2 + 1.0) / 2.0;
    let angle1 = (action.theta1 + 1.0) * FRAC_PI_4;
    let angle2 = (action.theta2 + 1.0) * FRAC_PI_4;
    Ok(ControlPoints {
        p1_in: radius1 * angle1.cos(),
        p1_out: radius1 * angle1.sin(),
        p2_in: 1.0 - radius2 * angle2.cos(),
        p2_out: 1.0 - radius2 * angle2.sin(),
    })
}

/// Cubic Bernstein form with `p0 = 0`, `p3 = 1`.
#[inline]
pub fn bezier_coordinate(q: f64, p1: f64, p2: f64) -> f64 {
    let s = 1.0 - q;
    3.0 * q * s * s * p1 + 3.0 * q * q * s * p2 + q * q * q
}

/// Sampled tone curve: `in_points[j]`, `out_points[j]` are the curve's input
/// and output coordinates at parameter `j / segments`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CurveTableRepr", into = "CurveTableRepr")]
pub struct CurveTable {
    segments: usize,
    in_points: Vec<f64>,
    out_points: Vec<f64>,
    steps: Vec<f64>,
    slopes: Vec<f64>,
    // All input steps at least MIN_INPUT_STEP: the clipped sum reduces to
    // interpolation within a single located segment.
    monotone: bool,
}

#[derive(Serialize, Deserialize)]
struct CurveTableRepr {
    segments: usize,
    in_points: Vec<f64>,
    out_points: Vec<f64>,
}

impl TryFrom<CurveTableRepr> for CurveTable {
    type Error = ToneCurveError;

    fn try_from(r: CurveTableRepr) -> Result<Self> {
        CurveTable::from_points(r.in_points, r.out_points).and_then(|t| {
            if t.segments == r.segments {
                Ok(t)
            } else {
                Err(ToneCurveError::MalformedTable(format!(
                    "segments = {} but {} points supplied",
                    r.segments,
                    t.segments + 1
                )))
            }
        })
    }
}

impl From<CurveTable> for CurveTableRepr {
    fn from(t: CurveTable) -> Self {
        Self {
            segments: t.segments,
            in_points: t.in_points,
            out_points: t.out_points,
        }
    }
}

impl CurveTable {
    pub fn from_points(in_points: Vec<f64>, out_points: Vec<f64>) -> Result<Self> {
        if in_points.len() != out_points.len() {
            return Err(ToneCurveError::MalformedTable(format!(
                "{} input points vs {} output points",
                in_points.len(),
                out_points.len()
            )));
        }
        if in_points.len() < 2 {
            return Err(ToneCurveError::NoSegments);
        }
        if in_points.iter().chain(&out_points).any(|v| !v.is_finite()) {
            return Err(ToneCurveError::MalformedTable("non-finite point".into()));
        }
        let segments = in_points.len() - 1;
        if in_points[0] != 0.0
            || out_points[0] != 0.0
            || in_points[segments] != 1.0
            || out_points[segments] != 1.0
        {
            return Err(ToneCurveError::MalformedTable(
                "curves must start at (0, 0) and end at (1, 1)".into(),
            ));
        }
        let steps: Vec<f64> = in_points.windows(2).map(|w| w[1] - w[0]).collect();
        let monotone = steps.iter().all(|&d| d >= MIN_INPUT_STEP);
        let slopes = steps
            .iter()
            .zip(out_points.windows(2))
            .map(|(&din, w)| (w[1] - w[0]) / din.max(MIN_INPUT_STEP))
            .collect();
        Ok(Self {
            segments,
            in_points,
            out_points,
            steps,
            slopes,
            monotone,
        })
    }

    pub fn identity(segments: usize) -> Result<Self> {
        sample_curve(&ControlPoints::identity(), segments)
    }

    pub fn segments(&self) -> usize {
        self.segments
    }

    pub fn in_points(&self) -> &[f64] {
        &self.in_points
    }

    pub fn out_points(&self) -> &[f64] {
        &self.out_points
    }

    pub fn is_monotone(&self) -> bool {
        self.monotone
    }

    /// Evaluates the piecewise-linear map at one intensity. Inputs are clamped
    /// to `[0, 1]` first and the result is clamped to `[0, 1]`.
    pub fn eval(&self, x: f64) -> f64 {
        let x = if x.is_nan() { 0.0 } else { x.clamp(0.0, 1.0) };
        // Endpoints are pinned; the clipped sum alone does not guarantee
        // this for non-monotone tables.
        if x == 0.0 {
            return 0.0;
        }
        if x == 1.0 {
            return 1.0;
        }
        let y = if self.monotone {
            self.eval_located(x)
        } else {
            self.eval_clipped_sum(x)
        };
        y.clamp(0.0, 1.0)
    }

    fn eval_located(&self, x: f64) -> f64 {
        let last = self.segments;
        // Segments fully below x contribute their whole output step, so the
        // sum telescopes to the left knot plus a partial step.
        let k = self.in_points[1..last].partition_point(|&p| p <= x);
        self.out_points[k] + (x - self.in_points[k]) * self.slopes[k]
    }

    fn eval_clipped_sum(&self, x: f64) -> f64 {
        // min(max(.)) keeps the upper bound when it falls below zero.
        let term = |p: f64, din: f64, slope: f64| (x - p).max(0.0).min(din) * slope;
        let n = self.segments;
        let (ins, steps, slopes) = (&self.in_points[..n], &self.steps[..], &self.slopes[..]);
        // Four independent partial sums keep the adds pipelined.
        let mut acc = [0.0f64; 4];
        let mut chunks = ins.chunks_exact(4).zip(steps.chunks_exact(4)).zip(slopes.chunks_exact(4));
        for ((p, d), s) in &mut chunks {
            for l in 0..4 {
                acc[l] += term(p[l], d[l], s[l]);
            }
        }
        let tail = n - n % 4;
        let mut rest = 0.0;
        for j in tail..n {
            rest += term(ins[j], steps[j], slopes[j]);
        }
        (acc[0] + acc[1]) + (acc[2] + acc[3]) + rest
    }

    #[inline]
    pub fn apply_value(&self, v: f32) -> f32 {
        self.eval(f64::from(v)) as f32
    }
}

pub fn sample_curve(points: &ControlPoints, segments: usize) -> Result<CurveTable> {
    if segments == 0 {
        return Err(ToneCurveError::NoSegments);
    }
    let mut in_points = Vec::with_capacity(segments + 1);
    let mut out_points = Vec::with_capacity(segments + 1);
    for j in 0..=segments {
        let q = j as f64 / segments as f64;
        in_points.push(bezier_coordinate(q, points.p1_in, points.p2_in));
        out_points.push(bezier_coordinate(q, points.p1_out, points.p2_out));
    }
    in_points[0] = 0.0;
    out_points[0] = 0.0;
    in_points[segments] = 1.0;
    out_points[segments] = 1.0;
    CurveTable::from_points(in_points, out_points)
}

/// Convenience: action -> control points -> table.
pub fn curve_for_action(action: &ActionVector, segments: usize) -> Result<CurveTable> {
    sample_curve(&control_points(action)?, segments)
}

pub fn apply_curve(image: &FloatImage, table: &CurveTable) -> FloatImage {
    image.map(|v| table.apply_value(v))
}

/// One normalized output per representable input level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lut {
    bit_depth: u32,
    values: Vec<f32>,
}

impl Lut {
    pub fn new(bit_depth: u32, values: Vec<f32>) -> Result<Self> {
        check_depth(bit_depth)?;
        let expected = 1usize << bit_depth;
        if values.len() != expected {
            return Err(ToneCurveError::MalformedLut(format!(
                "{} entries, expected {expected}",
                values.len()
            )));
        }
        Ok(Self { bit_depth, values })
    }

    pub fn bit_depth(&self) -> u32 {
        self.bit_depth
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn check_depth(bit_depth: u32) -> Result<()> {
    if SUPPORTED_BIT_DEPTHS.contains(&bit_depth) {
        Ok(())
    } else {
        Err(ToneCurveError::UnsupportedBitDepth(bit_depth))
    }
}

pub fn identity_lut(bit_depth: u32) -> Result<Lut> {
    check_depth(bit_depth)?;
    let values = (0..=max_level(bit_depth))
        .map(|i| level_to_unit(i, bit_depth))
        .collect();
    Ok(Lut { bit_depth, values })
}

/// Runs the LUT entries through the curve exactly as image values are.
pub fn apply_to_lut(lut: &Lut, table: &CurveTable) -> Lut {
    Lut {
        bit_depth: lut.bit_depth,
        values: lut.values.iter().map(|&v| table.apply_value(v)).collect(),
    }
}

pub fn map_image(image: &QuantizedImage, lut: &Lut) -> Result<QuantizedImage> {
    if image.bit_depth() != lut.bit_depth {
        return Err(ToneCurveError::BitDepthMismatch {
            image: image.bit_depth(),
            lut: lut.bit_depth,
        });
    }
    let levels: Vec<u16> = lut
        .values
        .iter()
        .map(|&v| unit_to_level(v, lut.bit_depth))
        .collect();
    let data = image.data().iter().map(|&l| levels[l as usize]).collect();
    let (c, h, w) = image.dims();
    Ok(QuantizedImage::new(c, h, w, lut.bit_depth, data)
        .expect("mapped image keeps the source geometry"))
}
