//! Test-time enhancement: a short state loop on a small proxy image decides
//! the curves, their composition is collected into one LUT, and the
//! full-resolution original is mapped through it once.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::imaging::{
    build_state, center_crop, downsample, downsample_quantized, quantize, to_float, FloatImage,
    ImagingError, QuantizedImage,
};
use crate::neural::{deterministic_action, NeuralError, PolicyNetwork, Tensor, STATE_SIZE};
use crate::tone_curve::{
    apply_curve, apply_to_lut, curve_for_action, identity_lut, map_image, ActionVector, CurveTable,
    Lut, ToneCurveError, DEFAULT_SEGMENTS,
};

pub const DEFAULT_STEPS: usize = 5;
/// Crop used before downsampling in [`StateMode::CenterCrop`].
pub const STATE_CROP: usize = 224;

#[derive(Debug, Error)]
pub enum EnhanceError {
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    ToneCurve(#[from] ToneCurveError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error("invalid enhancement options: {0}")]
    Options(String),
}

pub type Result<T> = std::result::Result<T, EnhanceError>;

/// How the 56x56 state image is derived from the input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StateMode {
    /// Area-resize the whole frame.
    #[default]
    Resize,
    /// Center-crop to 224x224 (as in training), then area-resize.
    CenterCrop,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnhanceOptions {
    pub steps: usize,
    pub segments: usize,
    pub state_mode: StateMode,
}

impl Default for EnhanceOptions {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            segments: DEFAULT_SEGMENTS,
            state_mode: StateMode::Resize,
        }
    }
}

impl EnhanceOptions {
    fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(EnhanceError::Options("steps must be at least 1".into()));
        }
        if self.segments == 0 {
            return Err(EnhanceError::Options("segments must be at least 1".into()));
        }
        Ok(())
    }
}

fn lut_as_values<S: Serializer>(lut: &Lut, s: S) -> std::result::Result<S::Ok, S::Error> {
    lut.values().serialize(s)
}

fn lut_from_values<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Lut, D::Error> {
    let values = Vec::<f32>::deserialize(d)?;
    let n = values.len();
    if !n.is_power_of_two() {
        return Err(serde::de::Error::custom(format!("LUT length {n} is not a power of two")));
    }
    Lut::new(n.trailing_zeros(), values).map_err(serde::de::Error::custom)
}

/// Everything decided for one image: per-step actions and curves, their
/// composite LUT, and (not serialized) the per-step state previews.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhanceTrace {
    pub actions: Vec<[f64; 4]>,
    pub curves: Vec<CurveTable>,
    #[serde(serialize_with = "lut_as_values", deserialize_with = "lut_from_values")]
    pub lut: Lut,
    #[serde(skip)]
    pub previews: Vec<FloatImage>,
}

impl EnhanceTrace {
    /// Recomposes the curves from the identity LUT.
    pub fn recompose(&self) -> Lut {
        let mut lut = identity_lut(self.lut.bit_depth()).expect("depth came from a valid LUT");
        for c in &self.curves {
            lut = apply_to_lut(&lut, c);
        }
        lut
    }
}

/// The 56x56 state image for a full-resolution input.
pub fn state_image(image: &FloatImage, mode: StateMode) -> Result<FloatImage> {
    Ok(match mode {
        StateMode::Resize => downsample(image, STATE_SIZE, STATE_SIZE)?,
        StateMode::CenterCrop => downsample(
            &center_crop(image, STATE_CROP, STATE_CROP)?,
            STATE_SIZE,
            STATE_SIZE,
        )?,
    })
}

/// Same as [`state_image`] on [`to_float`]`(image)`. The whole-frame mode
/// reads the levels directly, without a full-resolution float copy.
pub fn state_image_quantized(image: &QuantizedImage, mode: StateMode) -> Result<FloatImage> {
    match mode {
        StateMode::Resize => Ok(downsample_quantized(image, STATE_SIZE, STATE_SIZE)?),
        StateMode::CenterCrop => state_image(&to_float(image), mode),
    }
}

/// Decides the actions with a deterministic policy on the small state image
/// and composes the resulting curves into a LUT. Cost does not depend on the
/// input resolution.
pub fn plan(
    policy: &PolicyNetwork<f32>,
    state: &FloatImage,
    options: &EnhanceOptions,
    bit_depth: u32,
) -> Result<EnhanceTrace> {
    options.validate()?;
    let mut x = state.clone();
    let mut prev: Option<FloatImage> = None;
    let mut lut = identity_lut(bit_depth)?;
    let mut actions = Vec::with_capacity(options.steps);
    let mut curves = Vec::with_capacity(options.steps);
    let mut previews = Vec::with_capacity(options.steps);
    for _ in 0..options.steps {
        let s = build_state(&x, prev.as_ref())?;
        let (h, w) = s.spatial();
        let input = Tensor::from_vec(&[1, s.channels(), h, w], s.combined())?;
        let out = policy.forward(&input)?;
        let mu: Vec<f64> = out.mu.row(0).iter().map(|&v| f64::from(v)).collect();
        let action = deterministic_action(&mu);
        let table = curve_for_action(&action, options.segments)?;
        lut = apply_to_lut(&lut, &table);
        let next = apply_curve(&x, &table);
        previews.push(next.clone());
        prev = Some(std::mem::replace(&mut x, next));
        actions.push(action.to_array());
        curves.push(table);
    }
    Ok(EnhanceTrace {
        actions,
        curves,
        lut,
        previews,
    })
}

/// LUT and tables for a fixed action sequence.
pub fn compose(actions: &[ActionVector], segments: usize, bit_depth: u32) -> Result<(Lut, Vec<CurveTable>)> {
    let mut lut = identity_lut(bit_depth)?;
    let mut tables = Vec::with_capacity(actions.len());
    for a in actions {
        let t = curve_for_action(a, segments)?;
        lut = apply_to_lut(&lut, &t);
        tables.push(t);
    }
    Ok((lut, tables))
}

/// Full pipeline: state, plan, single LUT map of the original.
pub fn enhance(
    image: &QuantizedImage,
    policy: &PolicyNetwork<f32>,
    options: &EnhanceOptions,
) -> Result<(QuantizedImage, EnhanceTrace)> {
    let state = state_image_quantized(image, options.state_mode)?;
    let trace = plan(policy, &state, options, image.bit_depth())?;
    let out = map_image(image, &trace.lut)?;
    Ok((out, trace))
}

/// Reference path: every curve applied to the full-resolution float image
/// in turn. Returns the pre-quantization result.
pub fn naive_float(image: &QuantizedImage, tables: &[CurveTable]) -> FloatImage {
    let mut x = to_float(image);
    for t in tables {
        x = apply_curve(&x, t);
    }
    x
}

pub fn naive(image: &QuantizedImage, tables: &[CurveTable]) -> QuantizedImage {
    quantize(&naive_float(image, tables), image.bit_depth())
}
