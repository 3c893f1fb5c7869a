//! Per-frame timing of the LUT path against naive full-resolution curve
//! application.
//!
//! Stages of the LUT path: `state` (downsample to the 56x56 state), `plan`
//! (policy steps plus LUT composition, resolution independent), `map` (one
//! gather per value). The naive path runs state and plan again, then applies
//! every curve to the full-resolution float image and quantizes. Resolutions
//! are interleaved within each repeat so slow drifts in machine load hit all
//! of them alike.

use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use serde::Serialize;

use crate::enhance::{naive, plan, state_image_quantized, EnhanceOptions, Result};
use crate::imaging::QuantizedImage;
use crate::neural::PolicyNetwork;
use crate::synthetic::random_image;
use crate::tone_curve::map_image;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Resolution {
    pub label: String,
    pub height: usize,
    pub width: usize,
}

impl Resolution {
    pub const HD: (usize, usize) = (720, 1280);
    pub const FHD: (usize, usize) = (1080, 1920);
    pub const UHD: (usize, usize) = (2160, 3840);

    pub fn standard() -> Vec<Resolution> {
        ["HD", "FHD", "UHD"].iter().map(|s| s.parse().unwrap()).collect()
    }
}

impl FromStr for Resolution {
    type Err = String;

    /// `HD`, `FHD`, `UHD` (case-insensitive) or `HEIGHTxWIDTH`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let named = match s.to_ascii_uppercase().as_str() {
            "HD" => Some(Self::HD),
            "FHD" => Some(Self::FHD),
            "UHD" | "4K" => Some(Self::UHD),
            _ => None,
        };
        let (height, width) = match named {
            Some(hw) => hw,
            None => {
                let (h, w) = s
                    .split_once(['x', 'X'])
                    .ok_or_else(|| format!("unknown resolution {s:?}"))?;
                let h: usize = h.trim().parse().map_err(|_| format!("bad height in {s:?}"))?;
                let w: usize = w.trim().parse().map_err(|_| format!("bad width in {s:?}"))?;
                if h == 0 || w == 0 {
                    return Err(format!("empty resolution {s:?}"));
                }
                (h, w)
            }
        };
        Ok(Resolution {
            label: s.to_string(),
            height,
            width,
        })
    }
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub repeats: usize,
    pub enhance: EnhanceOptions,
    pub naive: bool,
    pub bit_depth: u32,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            repeats: 100,
            enhance: EnhanceOptions::default(),
            naive: true,
            bit_depth: 8,
        }
    }
}

/// Mean milliseconds per frame.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub resolution: Resolution,
    pub state_ms: f64,
    pub plan_ms: f64,
    pub map_ms: f64,
    pub lut_total_ms: f64,
    pub naive_ms: Option<f64>,
    /// Whether both paths produced identical quantized output (checked once).
    pub outputs_match: Option<bool>,
}

impl BenchRow {
    pub fn speedup(&self) -> Option<f64> {
        self.naive_ms.map(|n| n / self.lut_total_ms)
    }
}

#[derive(Default)]
struct Acc {
    state: f64,
    plan: f64,
    map: f64,
    naive: f64,
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Benchmarks on random RGB frames, one per resolution.
pub fn run_bench(
    policy: &PolicyNetwork<f32>,
    resolutions: &[Resolution],
    options: &BenchOptions,
    rng: &mut impl Rng,
) -> Result<Vec<BenchRow>> {
    let opts = &options.enhance;
    let depth = options.bit_depth;
    let frames: Vec<QuantizedImage> = resolutions
        .iter()
        .map(|r| random_image(3, r.height, r.width, depth, rng))
        .collect();
    let mut matches = Vec::with_capacity(frames.len());
    for frame in &frames {
        if options.naive {
            let state = state_image_quantized(frame, opts.state_mode)?;
            let trace = plan(policy, &state, opts, depth)?;
            let fast = map_image(frame, &trace.lut)?;
            matches.push(Some(fast == naive(frame, &trace.curves)));
        } else {
            matches.push(None);
        }
    }
    let mut acc: Vec<Acc> = resolutions.iter().map(|_| Acc::default()).collect();
    for _ in 0..options.repeats {
        for (frame, a) in frames.iter().zip(acc.iter_mut()) {
            let t = Instant::now();
            let state = state_image_quantized(frame, opts.state_mode)?;
            a.state += ms_since(t);
            let t = Instant::now();
            let trace = plan(policy, &state, opts, depth)?;
            a.plan += ms_since(t);
            let t = Instant::now();
            let out = map_image(frame, &trace.lut)?;
            a.map += ms_since(t);
            std::hint::black_box(out);

            if options.naive {
                let t = Instant::now();
                let state = state_image_quantized(frame, opts.state_mode)?;
                let trace = plan(policy, &state, opts, depth)?;
                let out = naive(frame, &trace.curves);
                a.naive += ms_since(t);
                std::hint::black_box(out);
            }
        }
    }
    let n = options.repeats.max(1) as f64;
    Ok(resolutions
        .iter()
        .zip(acc)
        .zip(matches)
        .map(|((r, a), m)| BenchRow {
            resolution: r.clone(),
            state_ms: a.state / n,
            plan_ms: a.plan / n,
            map_ms: a.map / n,
            lut_total_ms: (a.state + a.plan + a.map) / n,
            naive_ms: options.naive.then_some(a.naive / n),
            outputs_match: m,
        })
        .collect())
}

/// Largest relative deviation of the plan stage from its mean over rows.
pub fn plan_spread(rows: &[BenchRow]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let mean = rows.iter().map(|r| r.plan_ms).sum::<f64>() / rows.len() as f64;
    rows.iter()
        .map(|r| (r.plan_ms - mean).abs() / mean)
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parses_resolutions() {
        let r: Resolution = "fhd".parse().unwrap();
        assert_eq!((r.height, r.width), (1080, 1920));
        let r: Resolution = "48x64".parse().unwrap();
        assert_eq!((r.height, r.width), (48, 64));
        assert!("0x5".parse::<Resolution>().is_err());
        assert!("big".parse::<Resolution>().is_err());
        assert_eq!(Resolution::standard().len(), 3);
    }

    #[test]
    fn small_bench_runs_and_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let policy = PolicyNetwork::<f32>::new(&mut rng);
        let res: Vec<Resolution> = ["60x80".parse().unwrap(), "64x64".parse().unwrap()].to_vec();
        let opts = BenchOptions {
            repeats: 2,
            ..Default::default()
        };
        let rows = run_bench(&policy, &res, &opts, &mut rng).unwrap();
        assert_eq!(rows.len(), 2);
        for r in &rows {
            assert_eq!(r.outputs_match, Some(true));
            assert!(r.plan_ms > 0.0 && r.naive_ms.unwrap() > 0.0);
        }
        assert!(plan_spread(&rows).is_finite());
    }
}
