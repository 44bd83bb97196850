//! Temporal stability of keypoint trajectories: mean motion difference,
//! motion-magnitude variability and high-frequency spectral power, each
//! normalized to [0, 1] and averaged into a single score (lower is steadier).

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rasterizer::Image;

pub const DEFAULT_CUTOFF_FRACTION: f64 = 0.4;
pub const SMOOTHING_WINDOW: usize = 5;
pub const MIN_FRAMES_FOR_SPECTRUM: usize = 4;

/// T frames of K 2D keypoints, stored frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointTrajectory {
    points: Vec<[f64; 2]>,
    num_frames: usize,
    num_keypoints: usize,
    pub fps: f64,
}

impl KeypointTrajectory {
    pub fn new(points: Vec<[f64; 2]>, num_frames: usize, num_keypoints: usize, fps: f64) -> Result<Self> {
        if num_frames < 2 {
            return Err(Error::param(format!("trajectory needs at least 2 frames, got {num_frames}")));
        }
        if num_keypoints == 0 {
            return Err(Error::param("trajectory needs at least one keypoint"));
        }
        if points.len() != num_frames * num_keypoints {
            return Err(Error::param(format!(
                "{} points for {num_frames} frames x {num_keypoints} keypoints",
                points.len()
            )));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::param(format!("fps must be positive, got {fps}")));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::param("trajectory contains non-finite coordinates"));
        }
        Ok(Self {
            points,
            num_frames,
            num_keypoints,
            fps,
        })
    }

    /// Build from per-frame keypoint lists.
    pub fn from_frames(frames: &[Vec<[f64; 2]>], fps: f64) -> Result<Self> {
        let k = frames.first().map_or(0, Vec::len);
        if frames.iter().any(|f| f.len() != k) {
            return Err(Error::param("frames have differing keypoint counts"));
        }
        Self::new(frames.concat(), frames.len(), k, fps)
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn num_keypoints(&self) -> usize {
        self.num_keypoints
    }

    pub fn point(&self, t: usize, k: usize) -> [f64; 2] {
        self.points[t * self.num_keypoints + k]
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    fn same_layout(&self, other: &Self) -> Result<()> {
        if self.num_frames != other.num_frames || self.num_keypoints != other.num_keypoints {
            return Err(Error::param(format!(
                "trajectory shapes differ: {}x{} vs {}x{}",
                self.num_frames, self.num_keypoints, other.num_frames, other.num_keypoints
            )));
        }
        if self.fps != other.fps {
            return Err(Error::param(format!("fps differ: {} vs {}", self.fps, other.fps)));
        }
        Ok(())
    }

    /// δ_t = p_{t+1} − p_t, shape (T−1)×K.
    fn displacement(&self, t: usize, k: usize) -> [f64; 2] {
        let a = self.point(t, k);
        let b = self.point(t + 1, k);
        [b[0] - a[0], b[1] - a[1]]
    }

    /// Add a constant offset to every point.
    pub fn translated(&self, offset: [f64; 2]) -> Self {
        let mut out = self.clone();
        for p in &mut out.points {
            p[0] += offset[0];
            p[1] += offset[1];
        }
        out
    }

    /// Centered moving average per keypoint; the window shrinks at the ends.
    pub fn moving_average(&self, window: usize) -> Self {
        let half = window / 2;
        let mut points = Vec::with_capacity(self.points.len());
        for t in 0..self.num_frames {
            let lo = t.saturating_sub(half);
            let hi = (t + half).min(self.num_frames - 1);
            let n = (hi - lo + 1) as f64;
            for k in 0..self.num_keypoints {
                let mut acc = [0.0; 2];
                for s in lo..=hi {
                    let p = self.point(s, k);
                    acc[0] += p[0];
                    acc[1] += p[1];
                }
                points.push([acc[0] / n, acc[1] / n]);
            }
        }
        Self { points, ..*self }
    }
}

fn norm2(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

fn diff_norms(gen: &KeypointTrajectory, gt: &KeypointTrajectory) -> Result<Vec<f64>> {
    gen.same_layout(gt)?;
    let mut out = Vec::with_capacity((gen.num_frames - 1) * gen.num_keypoints);
    for t in 0..gen.num_frames - 1 {
        for k in 0..gen.num_keypoints {
            let a = gen.displacement(t, k);
            let b = gt.displacement(t, k);
            out.push(norm2([a[0] - b[0], a[1] - b[1]]));
        }
    }
    Ok(out)
}

fn magnitude_diffs(gen: &KeypointTrajectory, gt: &KeypointTrajectory) -> Result<Vec<f64>> {
    gen.same_layout(gt)?;
    let mut out = Vec::with_capacity((gen.num_frames - 1) * gen.num_keypoints);
    for t in 0..gen.num_frames - 1 {
        for k in 0..gen.num_keypoints {
            out.push(norm2(gen.displacement(t, k)) - norm2(gt.displacement(t, k)));
        }
    }
    Ok(out)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population standard deviation, two-pass.
fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Mean over frames and keypoints of the displacement-difference norm, in pixels per frame.
pub fn motion_difference(gen: &KeypointTrajectory, gt: &KeypointTrajectory) -> Result<f64> {
    Ok(mean(&diff_norms(gen, gt)?))
}

/// Standard deviation of the per-keypoint speed difference.
pub fn motion_variability(gen: &KeypointTrajectory, gt: &KeypointTrajectory) -> Result<f64> {
    Ok(std_dev(&magnitude_diffs(gen, gt)?))
}

/// |X_k|² of the DFT of a real signal, all T bins.
pub fn power_spectrum(signal: &[f64]) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = signal.iter().map(|&x| Complex::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf.iter().map(|c| c.norm_sqr()).collect()
}

/// Frequency of DFT bin `k` of a length-`n` signal as a fraction of Nyquist.
pub fn bin_fraction_of_nyquist(k: usize, n: usize) -> f64 {
    2.0 * k.min(n - k) as f64 / n as f64
}

fn high_freq_fraction(signal: &[f64], cutoff: f64, detrend: bool) -> f64 {
    let m = if detrend { mean(signal) } else { 0.0 };
    let centered: Vec<f64> = signal.iter().map(|x| x - m).collect();
    let power = power_spectrum(&centered);
    let total: f64 = power.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let n = signal.len();
    let high: f64 = power
        .iter()
        .enumerate()
        .filter(|(k, _)| bin_fraction_of_nyquist(*k, n) > cutoff)
        .map(|(_, p)| p)
        .sum();
    high / total
}

/// Fraction of spectral power above `cutoff_fraction` × Nyquist, averaged
/// over keypoints and axes.
pub fn high_freq_power(gen: &KeypointTrajectory, cutoff_fraction: f64, detrend: bool) -> Result<f64> {
    if !(cutoff_fraction > 0.0 && cutoff_fraction < 1.0) {
        return Err(Error::param(format!("cutoff fraction must lie in (0, 1), got {cutoff_fraction}")));
    }
    if gen.num_frames < MIN_FRAMES_FOR_SPECTRUM {
        return Err(Error::param(format!(
            "spectral analysis needs at least {MIN_FRAMES_FOR_SPECTRUM} frames, got {}",
            gen.num_frames
        )));
    }
    let mut acc = 0.0;
    for k in 0..gen.num_keypoints {
        for axis in 0..2 {
            let signal: Vec<f64> = (0..gen.num_frames).map(|t| gen.point(t, k)[axis]).collect();
            acc += high_freq_fraction(&signal, cutoff_fraction, detrend);
        }
    }
    Ok(acc / (2 * gen.num_keypoints) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityConfig {
    pub cutoff_fraction: f64,
    pub detrend: bool,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            cutoff_fraction: DEFAULT_CUTOFF_FRACTION,
            detrend: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reference {
    GroundTruth,
    SelfSmoothed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawComponents {
    pub motion_difference: f64,
    pub motion_variability: f64,
    pub high_freq_power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub motion_difference: f64,
    pub motion_variability: f64,
    pub high_freq_power: f64,
    pub score: f64,
    pub raw: RawComponents,
    /// Per-sequence maxima the raw M_d and V_m were divided by.
    pub normalizers: [f64; 2],
    pub cutoff_fraction: f64,
    pub detrend: bool,
    pub reference: Reference,
    pub warnings: Vec<String>,
}

/// Mean of the three normalized components.
pub fn combine_components(md: f64, vm: f64, hf: f64) -> f64 {
    (md + vm + hf) / 3.0
}

/// Score `gen` against `gt`, or against a moving average of itself when `gt`
/// is absent.
pub fn stability_score(
    gen: &KeypointTrajectory,
    gt: Option<&KeypointTrajectory>,
    config: &StabilityConfig,
) -> Result<StabilityReport> {
    let smoothed;
    let (reference, kind) = match gt {
        Some(gt) => (gt, Reference::GroundTruth),
        None => {
            smoothed = gen.moving_average(SMOOTHING_WINDOW);
            (&smoothed, Reference::SelfSmoothed)
        }
    };
    let diffs = diff_norms(gen, reference)?;
    let mags = magnitude_diffs(gen, reference)?;
    let hf = high_freq_power(gen, config.cutoff_fraction, config.detrend)?;

    let raw_md = mean(&diffs);
    let raw_vm = std_dev(&mags);
    let md_max = diffs
        .chunks(gen.num_keypoints)
        .map(mean)
        .fold(0.0_f64, f64::max);
    let vm_max = mags.iter().fold(0.0_f64, |m, x| m.max(x.abs()));

    let mut warnings = Vec::new();
    let mut normalize = |raw: f64, max: f64, name: &str| {
        if max > 0.0 {
            (raw / max).clamp(0.0, 1.0)
        } else {
            warnings.push(format!("{name} normalizer is zero; component set to 0"));
            0.0
        }
    };
    let md = normalize(raw_md, md_max, "motion_difference");
    let vm = normalize(raw_vm, vm_max, "motion_variability");
    Ok(StabilityReport {
        motion_difference: md,
        motion_variability: vm,
        high_freq_power: hf,
        score: combine_components(md, vm, hf),
        raw: RawComponents {
            motion_difference: raw_md,
            motion_variability: raw_vm,
            high_freq_power: hf,
        },
        normalizers: [md_max, vm_max],
        cutoff_fraction: config.cutoff_fraction,
        detrend: config.detrend,
        reference: kind,
        warnings,
    })
}

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

/// Luminance-weighted centroid of `roi` in each frame, as one keypoint.
pub fn track_centroid(frames: &[Image], roi: Roi, fps: f64) -> Result<KeypointTrajectory> {
    if roi.width == 0 || roi.height == 0 {
        return Err(Error::param("region of interest is empty"));
    }
    let mut points = Vec::with_capacity(frames.len());
    for (i, img) in frames.iter().enumerate() {
        if roi.x + roi.width > img.width || roi.y + roi.height > img.height {
            return Err(Error::param(format!("region of interest falls outside frame {i}")));
        }
        let (mut w, mut sx, mut sy) = (0.0, 0.0, 0.0);
        for y in roi.y..roi.y + roi.height {
            for x in roi.x..roi.x + roi.width {
                let l = img.luminance(x, y);
                w += l;
                sx += l * x as f64;
                sy += l * y as f64;
            }
        }
        if w <= 0.0 {
            return Err(Error::param(format!("region of interest is black in frame {i}")));
        }
        points.push([sx / w, sy / w]);
    }
    KeypointTrajectory::new(points, frames.len(), 1, fps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(f: impl Fn(usize, usize) -> [f64; 2], t: usize, k: usize) -> KeypointTrajectory {
        let pts = (0..t).flat_map(|i| (0..k).map(move |j| (i, j))).map(|(i, j)| f(i, j)).collect();
        KeypointTrajectory::new(pts, t, k, 25.0).unwrap()
    }

    #[test]
    fn identical_trajectories_have_zero_motion_terms() {
        let gt = traj(|t, k| [(t as f64 * 0.3).sin() + k as f64, (t as f64 * 0.1).cos()], 30, 3);
        let r = stability_score(&gt, Some(&gt), &StabilityConfig::default()).unwrap();
        assert_eq!(r.motion_difference, 0.0);
        assert_eq!(r.motion_variability, 0.0);
        assert_eq!(r.warnings.len(), 2);
    }

    #[test]
    fn offset_is_invisible_to_motion_difference() {
        let gt = traj(|t, k| [t as f64 * 0.5, k as f64 + (t as f64).sin()], 12, 2);
        let gen = gt.translated([3.0, -7.0]);
        assert!(motion_difference(&gen, &gt).unwrap() < 1e-12);
    }

    #[test]
    fn alternating_jitter_by_enumeration() {
        let a = 0.7;
        let gt = traj(|t, _| [t as f64, 2.0 * t as f64], 9, 2);
        let gen = traj(|t, _| {
            let s = if t % 2 == 0 { a } else { -a };
            [t as f64 + s, 2.0 * t as f64]
        }, 9, 2);
        assert!((motion_difference(&gen, &gt).unwrap() - 2.0 * a).abs() < 1e-12);
    }

    #[test]
    fn sinusoid_above_cutoff_is_all_high_frequency() {
        let n = 20;
        let g = traj(|t, _| [(std::f64::consts::PI * 0.9 * t as f64).cos(), 0.0], n, 1);
        // x carries all power above 0.5 Nyquist; y is constant and contributes 0.
        let hf = high_freq_power(&g, 0.5, true).unwrap();
        assert!((hf - 0.5).abs() < 1e-12, "{hf}");
        let c = traj(|_, _| [4.0, 4.0], n, 1);
        assert_eq!(high_freq_power(&c, 0.5, true).unwrap(), 0.0);
    }

    #[test]
    fn parameter_errors() {
        let g = traj(|t, _| [t as f64, 0.0], 3, 1);
        assert!(high_freq_power(&g, 0.4, true).is_err());
        let g = traj(|t, _| [t as f64, 0.0], 8, 1);
        assert!(high_freq_power(&g, 1.0, true).is_err());
        assert!(high_freq_power(&g, 0.0, true).is_err());
        let h = traj(|t, _| [t as f64, 0.0], 9, 1);
        assert!(motion_difference(&g, &h).is_err());
        assert!(KeypointTrajectory::new(vec![[0.0; 2]], 1, 1, 25.0).is_err());
    }

    #[test]
    fn arithmetic_of_the_score() {
        assert_eq!(combine_components(0.0, 0.0, 0.0), 0.0);
        assert!((combine_components(0.3, 0.6, 0.9) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn self_smoothed_mode_is_flagged() {
        let g = traj(|t, _| [t as f64 + if t % 2 == 0 { 1.0 } else { 0.0 }, 0.0], 16, 1);
        let r = stability_score(&g, None, &StabilityConfig::default()).unwrap();
        assert_eq!(r.reference, Reference::SelfSmoothed);
        assert!(r.score > 0.0 && r.score <= 1.0);
    }

    #[test]
    fn centroid_roi_errors() {
        let img = Image::new(8, 8, [1.0; 3]);
        let roi = Roi { x: 0, y: 0, width: 0, height: 3 };
        assert!(track_centroid(&[img.clone(), img.clone()], roi, 25.0).is_err());
        let roi = Roi { x: 6, y: 0, width: 4, height: 3 };
        assert!(track_centroid(&[img.clone(), img.clone()], roi, 25.0).is_err());
        let roi = Roi { x: 0, y: 0, width: 8, height: 8 };
        let t = track_centroid(&[img.clone(), img], roi, 25.0).unwrap();
        assert_eq!(t.point(0, 0), [3.5, 3.5]);
    }
}
