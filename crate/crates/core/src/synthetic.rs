//! Procedural test images.

use rand::Rng;

use crate::imaging::{FloatImage, QuantizedImage};

/// Uniformly random levels.
pub fn random_image(channels: usize, height: usize, width: usize, bit_depth: u32, rng: &mut impl Rng) -> QuantizedImage {
    let max = ((1u32 << bit_depth) - 1) as u16;
    let data = (0..channels * height * width)
        .map(|_| rng.random_range(0..=max))
        .collect();
    QuantizedImage::new(channels, height, width, bit_depth, data).expect("valid by construction")
}

/// Smooth RGB scene built from a few random gradients and blobs, with
/// values in `[0, 1]`.
pub fn scene(height: usize, width: usize, rng: &mut impl Rng) -> FloatImage {
    struct Blob {
        cy: f64,
        cx: f64,
        radius: f64,
        color: [f64; 3],
    }
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.2..0.6));
    let slope: [f64; 2] = [rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4)];
    let blobs: Vec<Blob> = (0..rng.random_range(3..7))
        .map(|_| Blob {
            cy: rng.random_range(0.0..1.0),
            cx: rng.random_range(0.0..1.0),
            radius: rng.random_range(0.05..0.3),
            color: std::array::from_fn(|_| rng.random_range(-0.5..0.6)),
        })
        .collect();
    let mut data = vec![0.0f32; 3 * height * width];
    for y in 0..height {
        let fy = (y as f64 + 0.5) / height as f64;
        for x in 0..width {
            let fx = (x as f64 + 0.5) / width as f64;
            let ramp = slope[0] * (fy - 0.5) + slope[1] * (fx - 0.5);
            for c in 0..3 {
                let mut v = base[c] + ramp;
                for b in &blobs {
                    let d2 = ((fy - b.cy).powi(2) + (fx - b.cx).powi(2)) / (b.radius * b.radius);
                    v += b.color[c] * (-d2).exp();
                }
                data[(c * height + y) * width + x] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    FloatImage::new(3, height, width, data).expect("valid by construction")
}

/// A [`scene`] scaled down so its mean luminance equals a value drawn from
/// `[0.05, 0.15]`.
pub fn dark_scene(height: usize, width: usize, rng: &mut impl Rng) -> FloatImage {
    let target = rng.random_range(0.05..0.15);
    let s = scene(height, width, rng);
    let mean = s.mean_luminance().max(1e-3);
    let k = (target / mean) as f32;
    s.map(|v| (v * k).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dark_scenes_are_dark_and_textured() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let img = dark_scene(64, 64, &mut rng);
            let m = img.mean_luminance();
            assert!(m < 0.2 && m > 0.01, "{m}");
            let lum = img.luminance();
            let var = lum.iter().map(|v| (v - m).powi(2)).sum::<f64>() / lum.len() as f64;
            assert!(var > 0.0);
        }
    }

    #[test]
    fn random_levels_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = random_image(3, 8, 8, 10, &mut rng);
        assert!(img.data().iter().all(|&v| v <= 1023));
    }
}
