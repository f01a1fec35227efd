//! Synthetic angiography-like scenes with planted ground truth.
//!
//! A scene is a low-rank background (smooth random spatial fields times slow
//! temporal modulation curves), a set of growing tubular vessels with
//! parabolic cross-section profiles, and additive Gaussian noise whose
//! variance is affine in the local signal level. Every stage is a pure
//! function of (spec, seed).

use crate::error::{CoreError, Result};
use crate::real::Real;
use crate::video::VideoSequence;
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const BACKGROUND_SALT: u64 = 0x6267_0001;
const VESSEL_SALT: u64 = 0x7665_0002;
const NOISE_SALT: u64 = 0x6e6f_0003;

/// Parameters of one synthetic scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    /// Exact rank of the background matrix view.
    pub bg_rank: usize,
    /// Amplitude of the slow temporal modulation, in grey levels.
    pub bg_drift: f64,
    pub vessel_count: usize,
    pub vessel_width_px: f64,
    /// Centerline intensity of the vessel layer, in [0, 1].
    pub vessel_peak_intensity: f64,
    /// Noise variance model: sigma^2 = noise_a * signal + noise_b.
    pub noise_a: f64,
    pub noise_b: f64,
    /// Blend a static high-contrast edge band into the background (a stand-in
    /// for catheter/spine-like structures).
    pub static_edges: bool,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.frames == 0 {
            return Err(CoreError::Config("scene dimensions must be positive".into()));
        }
        if self.bg_rank == 0 || self.bg_rank > (self.height * self.width).min(self.frames) {
            return Err(CoreError::Config(format!(
                "bg_rank {} outside 1..=min(pixels, frames)",
                self.bg_rank
            )));
        }
        if !(0.0..=1.0).contains(&self.vessel_peak_intensity) {
            return Err(CoreError::Config("vessel_peak_intensity must be in [0,1]".into()));
        }
        if self.noise_a < 0.0 || self.noise_b < 0.0 {
            return Err(CoreError::Config("noise coefficients must be nonnegative".into()));
        }
        if self.vessel_width_px <= 0.0 {
            return Err(CoreError::Config("vessel_width_px must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.bg_drift) {
            return Err(CoreError::Config("bg_drift must be in [0,1]".into()));
        }
        Ok(())
    }
}

/// Planted decomposition of one generated scene. The observation is
/// `clip(background + vessels + noise, 0, 1)`.
#[derive(Debug, Clone)]
pub struct GroundTruth<T: Real> {
    pub background: VideoSequence<T>,
    pub vessel_layer: VideoSequence<T>,
    pub vessel_mask: Array3<bool>,
    pub noise: VideoSequence<T>,
    pub observation: VideoSequence<T>,
    /// Fraction of pixels altered by the final clip to [0, 1].
    pub clipped_fraction: f64,
}

/// A smooth random field in [lo, 1]: a handful of low-frequency cosine waves,
/// normalized, then affinely mapped so the field stays strictly positive.
fn smooth_field(rng: &mut ChaCha8Rng, h: usize, w: usize, lo: f64) -> Vec<f64> {
    let waves = 6;
    let mut params = Vec::with_capacity(waves);
    for _ in 0..waves {
        let fu = rng.gen_range(-2.5..2.5) / w as f64;
        let fv = rng.gen_range(-2.5..2.5) / h as f64;
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let amp = rng.gen_range(0.3..1.0);
        params.push((fu, fv, phase, amp));
    }
    let mut field = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut v = 0.0;
            for &(fu, fv, phase, amp) in &params {
                v += amp
                    * (std::f64::consts::TAU * (fu * x as f64 + fv * y as f64) + phase).cos();
            }
            field[y * w + x] = v;
        }
    }
    let min = field.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = field.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (max - min).max(1e-12);
    for v in &mut field {
        *v = lo + (1.0 - lo) * (*v - min) / span;
    }
    field
}

/// Adds a straight high-contrast band (sharp edges, random orientation).
fn add_edge_band(rng: &mut ChaCha8Rng, field: &mut [f64], h: usize, w: usize) {
    let angle = rng.gen_range(0.0..std::f64::consts::PI);
    let (nx, ny) = (angle.cos(), angle.sin());
    let offset = rng.gen_range(0.3..0.7) * (nx.abs() * w as f64 + ny.abs() * h as f64);
    let half_width = (h.min(w) as f64 / 16.0).max(1.5);
    for y in 0..h {
        for x in 0..w {
            let d = (nx * x as f64 + ny * y as f64 - offset).abs();
            if d < half_width {
                // 1-pixel soft shoulder keeps the band sharp but not aliased
                let edge = ((half_width - d).min(1.0)).max(0.0);
                field[y * w + x] += 0.8 * edge;
            }
        }
    }
    let min = field.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = field.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (max - min).max(1e-12);
    for v in field.iter_mut() {
        *v = 0.15 + 0.85 * (*v - min) / span;
    }
}

/// Low-rank background: `bg_rank` strictly positive spatial fields times
/// slow sinusoidal temporal curves. The matrix view has rank exactly
/// `bg_rank`; values stay within [0, 1].
pub fn make_background<T: Real>(spec: &SceneSpec) -> Result<VideoSequence<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ BACKGROUND_SALT);
    let (h, w, f) = (spec.height, spec.width, spec.frames);
    let level = 0.55 / spec.bg_rank as f64 / (1.0 + spec.bg_drift);

    let mut volume = Array3::<T>::zeros((h, w, f));
    for r in 0..spec.bg_rank {
        let mut field = smooth_field(&mut rng, h, w, 0.15);
        if r == 0 && spec.static_edges {
            add_edge_band(&mut rng, &mut field, h, w);
        }
        let freq = rng.gen_range(0.5..1.5);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let curve: Vec<f64> = (0..f)
            .map(|t| {
                1.0 + spec.bg_drift
                    * (std::f64::consts::TAU * freq * t as f64 / f as f64 + phase).sin()
            })
            .collect();
        for y in 0..h {
            for x in 0..w {
                let base = level * field[y * w + x];
                for t in 0..f {
                    let v = volume[[y, x, t]].acc() + base * curve[t];
                    volume[[y, x, t]] = T::from_acc(v);
                }
            }
        }
    }
    Ok(VideoSequence::new(volume))
}

fn random_centerline(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<(f64, f64)> {
    let (hf, wf) = (h as f64, w as f64);
    // start on a random border, heading inward
    let (mut x, mut y, mut dir) = match rng.gen_range(0..4u8) {
        0 => (rng.gen_range(0.2..0.8) * wf, 0.0, std::f64::consts::FRAC_PI_2),
        1 => (rng.gen_range(0.2..0.8) * wf, hf - 1.0, -std::f64::consts::FRAC_PI_2),
        2 => (0.0, rng.gen_range(0.2..0.8) * hf, 0.0),
        _ => (wf - 1.0, rng.gen_range(0.2..0.8) * hf, std::f64::consts::PI),
    };
    let step = 0.3;
    let max_len = 3.0 * (hf + wf);
    let mut curvature = 0.0f64;
    let mut points = Vec::new();
    let mut travelled = 0.0;
    let margin = 2.0;
    while travelled < max_len {
        points.push((x, y));
        curvature = 0.92 * curvature + 0.08 * rng.gen_range(-0.25..0.25);
        dir += curvature * step;
        x += dir.cos() * step;
        y += dir.sin() * step;
        travelled += step;
        if x < -margin || x > wf - 1.0 + margin || y < -margin || y > hf - 1.0 + margin {
            break;
        }
    }
    points
}

/// Rasterizes tube layers from explicit centerlines. Frame `t` shows the
/// leading `(t+1)/frames` fraction of each centerline (the contrast front
/// advances at constant parametric speed); the cross-section intensity is
/// `peak * (1 - (d/half_width)^2)` clamped at zero, `d` being the distance to
/// the visible centerline. Overlapping tubes take the pointwise maximum.
pub fn rasterize_tubes<T: Real>(
    centerlines: &[Vec<(f64, f64)>],
    height: usize,
    width: usize,
    frames: usize,
    width_px: f64,
    peak: f64,
) -> (VideoSequence<T>, Array3<bool>) {
    let half_w = width_px / 2.0;
    let mut layer = Array3::<T>::zeros((height, width, frames));
    let mut mask = Array3::from_elem((height, width, frames), false);
    let reach = half_w.ceil() as isize + 1;

    for line in centerlines {
        if line.is_empty() {
            continue;
        }
        // squared distance to the visible prefix, updated incrementally as
        // the contrast front advances
        let mut dist2 = vec![f64::INFINITY; height * width];
        let mut consumed = 0usize;
        for t in 0..frames {
            let visible = ((t + 1) as f64 / frames as f64 * line.len() as f64).ceil() as usize;
            let visible = visible.min(line.len());
            for &(px, py) in &line[consumed..visible] {
                let x0 = ((px.floor() as isize) - reach).max(0);
                let x1 = ((px.floor() as isize) + reach).min(width as isize - 1);
                let y0 = ((py.floor() as isize) - reach).max(0);
                let y1 = ((py.floor() as isize) + reach).min(height as isize - 1);
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        let dx = x as f64 - px;
                        let dy = y as f64 - py;
                        let d2 = dx * dx + dy * dy;
                        let cell = &mut dist2[y as usize * width + x as usize];
                        if d2 < *cell {
                            *cell = d2;
                        }
                    }
                }
            }
            consumed = visible;
            for y in 0..height {
                for x in 0..width {
                    let d2 = dist2[y * width + x];
                    if d2 < half_w * half_w {
                        let v = peak * (1.0 - d2 / (half_w * half_w));
                        if v > layer[[y, x, t]].acc() {
                            layer[[y, x, t]] = T::from_acc(v);
                        }
                    }
                }
            }
        }
    }
    for ((y, x, t), m) in mask.indexed_iter_mut() {
        *m = layer[[y, x, t]] > T::zero();
    }
    (VideoSequence::new(layer), mask)
}

/// Moving tubular foreground: random smooth centerlines whose visible extent
/// grows frame by frame, with parabolic cross-section intensity. The mask is
/// exactly the support of the layer.
pub fn make_vessels<T: Real>(spec: &SceneSpec) -> Result<(VideoSequence<T>, Array3<bool>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ VESSEL_SALT);
    let lines: Vec<Vec<(f64, f64)>> = (0..spec.vessel_count)
        .map(|_| random_centerline(&mut rng, spec.height, spec.width))
        .collect();
    Ok(rasterize_tubes(
        &lines,
        spec.height,
        spec.width,
        spec.frames,
        spec.vessel_width_px,
        spec.vessel_peak_intensity,
    ))
}

/// Draws the noise field for a clean volume: zero-mean Gaussian with
/// per-pixel standard deviation `sqrt(noise_a * s + noise_b)` where `s` is the
/// clean value clamped to [0, 1].
pub fn sample_noise<T: Real>(clean: &VideoSequence<T>, spec: &SceneSpec) -> VideoSequence<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ NOISE_SALT);
    let mut noise = Array3::<T>::zeros(clean.data().dim());
    for (out, v) in noise.iter_mut().zip(clean.data().iter()) {
        let s = v.acc().clamp(0.0, 1.0);
        let sigma = (spec.noise_a * s + spec.noise_b).sqrt();
        let z: f64 = StandardNormal.sample(&mut rng);
        *out = T::from_acc(sigma * z);
    }
    VideoSequence::new(noise)
}

/// Adds signal-dependent Gaussian noise to a clean volume (unclipped).
pub fn add_noise<T: Real>(clean: &VideoSequence<T>, spec: &SceneSpec) -> VideoSequence<T> {
    let noise = sample_noise(clean, spec);
    let data = clean.data() + noise.data();
    VideoSequence::new(data)
}

/// Generates a full scene: background, vessels, noise, and the clipped
/// observation, together with the clipped-pixel fraction diagnostic.
pub fn generate_scene<T: Real>(spec: &SceneSpec) -> Result<GroundTruth<T>> {
    spec.validate()?;
    let background = make_background::<T>(spec)?;
    let (vessel_layer, vessel_mask) = make_vessels::<T>(spec)?;
    let clean = VideoSequence::new(background.data() + vessel_layer.data());
    let noise = sample_noise(&clean, spec);

    let mut observation = Array3::<T>::zeros(clean.data().dim());
    let mut clipped = 0usize;
    for (out, (c, n)) in observation
        .iter_mut()
        .zip(clean.data().iter().zip(noise.data().iter()))
    {
        let raw = *c + *n;
        let v = num_traits::clamp(raw, T::zero(), T::one());
        if v != raw {
            clipped += 1;
        }
        *out = v;
    }
    let total = clean.data().len();
    Ok(GroundTruth {
        background,
        vessel_layer,
        vessel_mask,
        noise,
        observation: VideoSequence::new(observation),
        clipped_fraction: clipped as f64 / total as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::svd_jacobi;

    fn test_spec() -> SceneSpec {
        SceneSpec {
            height: 32,
            width: 32,
            frames: 10,
            bg_rank: 3,
            bg_drift: 0.06,
            vessel_count: 2,
            vessel_width_px: 4.0,
            vessel_peak_intensity: 0.35,
            noise_a: 0.01,
            noise_b: 0.0004,
            static_edges: true,
            seed: 11,
        }
    }

    #[test]
    fn static_rank1_background_has_identical_frames() {
        let mut spec = test_spec();
        spec.bg_rank = 1;
        spec.bg_drift = 0.0;
        let bg = make_background::<f64>(&spec).unwrap();
        let first = bg.data().index_axis(ndarray::Axis(2), 0).to_owned();
        for t in 1..spec.frames {
            let frame = bg.data().index_axis(ndarray::Axis(2), t);
            assert!(first
                .iter()
                .zip(frame.iter())
                .all(|(a, b)| (a - b).abs() < 1e-14));
        }
    }

    #[test]
    fn background_rank_is_exact() {
        let spec = test_spec();
        let bg = make_background::<f64>(&spec).unwrap();
        let svd = svd_jacobi(bg.to_matrix().view());
        let sigma_max = svd.s[0];
        let above: usize = svd.s.iter().filter(|&&s| s > 1e-8 * sigma_max).count();
        assert_eq!(above, spec.bg_rank);
        assert!(bg.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn background_is_deterministic() {
        let spec = test_spec();
        let a = make_background::<f32>(&spec).unwrap();
        let b = make_background::<f32>(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn no_vessels_means_empty_mask() {
        let mut spec = test_spec();
        spec.vessel_count = 0;
        let (layer, mask) = make_vessels::<f64>(&spec).unwrap();
        assert!(layer.data().iter().all(|&v| v == 0.0));
        assert!(mask.iter().all(|&m| !m));
    }

    #[test]
    fn centerline_pixel_reaches_peak_intensity() {
        // horizontal straight tube through pixel-center row y = 4
        let line: Vec<(f64, f64)> = (0..48).map(|i| (i as f64 * 0.25, 4.0)).collect();
        let (layer, mask) = rasterize_tubes::<f64>(&[line], 9, 12, 1, 3.0, 0.4);
        assert!((layer.data()[[4, 5, 0]] - 0.4).abs() < 1e-12);
        assert!(mask[[4, 5, 0]]);
        // profile decays away from the centerline
        assert!(layer.data()[[5, 5, 0]] < 0.4);
    }

    #[test]
    fn mask_is_exact_support_and_grows() {
        let spec = test_spec();
        let (layer, mask) = make_vessels::<f64>(&spec).unwrap();
        for (idx, &m) in mask.indexed_iter() {
            assert_eq!(m, layer.data()[idx] > 0.0);
        }
        let (h, w, f) = layer.data().dim();
        for t in 1..f {
            for y in 0..h {
                for x in 0..w {
                    if mask[[y, x, t - 1]] {
                        assert!(mask[[y, x, t]], "support shrank at ({y},{x},{t})");
                    }
                }
            }
        }
    }

    #[test]
    fn zero_noise_is_identity() {
        let mut spec = test_spec();
        spec.noise_a = 0.0;
        spec.noise_b = 0.0;
        let bg = make_background::<f64>(&spec).unwrap();
        let noisy = add_noise(&bg, &spec);
        assert_eq!(bg.data(), noisy.data());
    }

    #[test]
    fn homoscedastic_noise_std_matches_model() {
        let mut spec = test_spec();
        spec.noise_a = 0.0;
        spec.noise_b = 0.0025;
        let clean = VideoSequence::<f64>::zeros(100, 100, 100);
        let noise = sample_noise(&clean, &spec);
        let n = noise.data().len() as f64;
        let mean: f64 = noise.data().iter().sum::<f64>() / n;
        let var: f64 =
            noise.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let expect = spec.noise_b.sqrt();
        assert!(
            (var.sqrt() - expect).abs() / expect < 0.03,
            "std {} vs {}",
            var.sqrt(),
            expect
        );
    }

    #[test]
    fn signal_dependent_noise_std_matches_model() {
        let mut spec = test_spec();
        spec.noise_a = 0.02;
        spec.noise_b = 0.0001;
        let clean = VideoSequence::new(Array3::<f64>::from_elem((100, 100, 100), 0.5));
        let noise = sample_noise(&clean, &spec);
        let n = noise.data().len() as f64;
        let mean: f64 = noise.data().iter().sum::<f64>() / n;
        let var: f64 =
            noise.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let expect = 0.0101f64.sqrt();
        assert!(
            (var.sqrt() - expect).abs() / expect < 0.03,
            "std {} vs {}",
            var.sqrt(),
            expect
        );
    }

    #[test]
    fn scene_composition_identity_off_clip() {
        let gt = generate_scene::<f64>(&test_spec()).unwrap();
        let (h, w, f) = gt.observation.data().dim();
        let mut checked = 0;
        for y in 0..h {
            for x in 0..w {
                for t in 0..f {
                    let raw = gt.background.data()[[y, x, t]]
                        + gt.vessel_layer.data()[[y, x, t]]
                        + gt.noise.data()[[y, x, t]];
                    if (0.0..=1.0).contains(&raw) {
                        assert_eq!(gt.observation.data()[[y, x, t]], raw);
                        checked += 1;
                    }
                }
            }
        }
        assert!(checked > 0);
        assert!(
            gt.clipped_fraction < 0.01,
            "default parameters should clip <1%, got {}",
            gt.clipped_fraction
        );
    }

    #[test]
    fn scene_is_reproducible_bit_for_bit() {
        let spec = test_spec();
        let a = generate_scene::<f32>(&spec).unwrap();
        let b = generate_scene::<f32>(&spec).unwrap();
        assert_eq!(a.observation, b.observation);
        assert_eq!(a.noise, b.noise);
        assert_eq!(a.vessel_mask, b.vessel_mask);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = test_spec();
        spec.bg_rank = 0;
        assert!(make_background::<f64>(&spec).is_err());
        let mut spec = test_spec();
        spec.bg_rank = 11; // > frames
        assert!(spec.validate().is_err());
        let mut spec = test_spec();
        spec.vessel_peak_intensity = 1.5;
        assert!(spec.validate().is_err());
        let mut spec = test_spec();
        spec.noise_a = -0.1;
        assert!(spec.validate().is_err());
    }
}
