//! Synthetic sharp-video generation and blur degradation.
//!
//! Clips are anti-aliased moving shapes (circles and rectangles on a gray
//! background) rendered at a high frame rate. Degradation approximates a
//! long-exposure capture: low-fps frame `i` is either the average of the
//! `2*tau + 1` sharp frames centred on `i*beta`, or — with probability
//! `1 - blur_probability` — the sharp centre frame itself, so the degraded
//! input mixes blurry and sharp frames the way real footage does.
//!
//! Supervision targets per low-fps frame: the sharp window centre for
//! deblurring and the sharp frame halfway to the next input for
//! interpolation. With the defaults (tau = 5, beta = 8) those are the
//! 0-indexed 5th and 9th frames of the 11-frame window.

use ndarray::Array3;
use rand::Rng;

use crate::error::{Error, Result};
use crate::frame::{Frame, VideoSequence};
use crate::seed::stream_rng;

/// Shape trajectory model: constant velocity or constant acceleration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionModel {
    Linear,
    Quadratic,
}

impl std::str::FromStr for MotionModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(MotionModel::Linear),
            "quadratic" => Ok(MotionModel::Quadratic),
            _ => Err(Error::config(format!("unknown motion model `{s}`"))),
        }
    }
}

/// Parameters of the synthetic sharp-clip corpus.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub clip_count: usize,
    pub frames_per_clip: usize,
    pub height: usize,
    pub width: usize,
    pub shape_count: usize,
    pub motion_model: MotionModel,
    pub fps: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            clip_count: 1,
            frames_per_clip: 24,
            height: 64,
            width: 64,
            shape_count: 3,
            motion_model: MotionModel::Linear,
            fps: 240.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.clip_count == 0 || self.frames_per_clip == 0 {
            return Err(Error::config("clip_count and frames_per_clip must be positive"));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::config(format!(
                "invalid clip dimensions {}x{}",
                self.height, self.width
            )));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::config(format!("fps must be positive, got {}", self.fps)));
        }
        Ok(())
    }
}

/// Parameters of the degradation protocol.
#[derive(Debug, Clone)]
pub struct BlurSpec {
    /// Half-window: `2 * tau + 1` sharp frames are averaged per blurry frame.
    pub tau: usize,
    /// Frame-rate stride between consecutive low-fps frames.
    pub beta: usize,
    /// Probability that a given low-fps frame is blurred rather than sharp.
    pub blur_probability: f64,
    pub seed: u64,
}

impl Default for BlurSpec {
    fn default() -> Self {
        BlurSpec { tau: 5, beta: 8, blur_probability: 0.5, seed: 0 }
    }
}

impl BlurSpec {
    pub fn validate(&self) -> Result<()> {
        if self.beta == 0 {
            return Err(Error::config("beta must be positive"));
        }
        if !(0.0..=1.0).contains(&self.blur_probability) {
            return Err(Error::config(format!(
                "blur probability {} outside [0, 1]",
                self.blur_probability
            )));
        }
        if 2 * self.tau + 1 > 2 * self.beta {
            // Consecutive blur windows overlap; legal but usually unintended.
            log::warn!(
                "blur windows overlap: 2*tau+1 = {} exceeds 2*beta = {}",
                2 * self.tau + 1,
                2 * self.beta
            );
        }
        Ok(())
    }

    /// Clone with a seed derived for one clip of a corpus, so per-clip
    /// degradation streams never collide.
    pub fn for_clip(&self, base_seed: u64, clip: u64) -> BlurSpec {
        BlurSpec { seed: crate::seed::child(base_seed, clip.wrapping_add(0x1000)), ..self.clone() }
    }
}

/// Check that clips leave room for at least one full degradation window.
pub fn validate_window_fit(synth: &SynthSpec, blur: &BlurSpec) -> Result<()> {
    let need = 2 * blur.tau + 1 + blur.beta;
    if synth.frames_per_clip < need {
        return Err(Error::config(format!(
            "frames_per_clip = {} cannot fit a degradation window (needs >= {} for tau = {}, beta = {})",
            synth.frames_per_clip, need, blur.tau, blur.beta
        )));
    }
    Ok(())
}

/// One supervision example: a low-fps input window together with the sharp
/// targets it should reconstruct.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    /// Consecutive low-fps frames, each blurry or sharp per `blur_mask`.
    pub input_window: VideoSequence,
    /// Sharp window centre per input frame.
    pub deblur_gt: Vec<Frame>,
    /// Sharp midpoint per adjacent input pair (one fewer than inputs).
    pub interp_gt: Vec<Frame>,
    /// `true` where the input frame was blurred.
    pub blur_mask: Vec<bool>,
}

impl TrainingSample {
    pub fn validate(&self) -> Result<()> {
        let l = self.input_window.len();
        if self.deblur_gt.len() != l || self.interp_gt.len() + 1 != l || self.blur_mask.len() != l {
            return Err(Error::shape(format!(
                "sample with {l} inputs has {} deblur targets, {} interp targets, {} mask bits",
                self.deblur_gt.len(),
                self.interp_gt.len(),
                self.blur_mask.len()
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Shape rendering
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
enum ShapeKind {
    /// radius
    Circle(f32),
    /// half-extents
    Rect(f32, f32),
}

#[derive(Debug, Clone)]
struct Shape {
    kind: ShapeKind,
    color: [f32; 3],
    pos: (f32, f32),
    vel: (f32, f32),
    acc: (f32, f32),
}

impl Shape {
    fn extent(&self) -> (f32, f32) {
        match self.kind {
            ShapeKind::Circle(r) => (r, r),
            ShapeKind::Rect(hw, hh) => (hw, hh),
        }
    }

    /// Advance one high-fps frame, bouncing off the clip borders.
    fn step(&mut self, width: f32, height: f32) {
        self.vel.0 += self.acc.0;
        self.vel.1 += self.acc.1;
        self.pos.0 += self.vel.0;
        self.pos.1 += self.vel.1;
        let (ex, ey) = self.extent();
        let bounce = |p: &mut f32, v: &mut f32, a: &mut f32, e: f32, max: f32| {
            if *p < e {
                *p = 2.0 * e - *p;
                *v = -*v;
                *a = -*a;
            } else if *p > max - e {
                *p = 2.0 * (max - e) - *p;
                *v = -*v;
                *a = -*a;
            }
        };
        bounce(&mut self.pos.0, &mut self.vel.0, &mut self.acc.0, ex, width);
        bounce(&mut self.pos.1, &mut self.vel.1, &mut self.acc.1, ey, height);
    }

    /// Anti-aliased coverage of the pixel centred at `(x, y)`.
    fn coverage(&self, x: f32, y: f32) -> f32 {
        match self.kind {
            ShapeKind::Circle(r) => {
                let d = ((x - self.pos.0).powi(2) + (y - self.pos.1).powi(2)).sqrt();
                (r - d + 0.5).clamp(0.0, 1.0)
            }
            ShapeKind::Rect(hw, hh) => {
                // Exact pixel/rectangle overlap for an axis-aligned box.
                let ox = (x + 0.5).min(self.pos.0 + hw) - (x - 0.5).max(self.pos.0 - hw);
                let oy = (y + 0.5).min(self.pos.1 + hh) - (y - 0.5).max(self.pos.1 - hh);
                ox.clamp(0.0, 1.0) * oy.clamp(0.0, 1.0)
            }
        }
    }
}

const BACKGROUND: f32 = 0.5;

fn render(shapes: &[Shape], height: usize, width: usize) -> Frame {
    let mut data = Array3::from_elem((3, height, width), BACKGROUND);
    for s in shapes {
        let (ex, ey) = s.extent();
        let x0 = (s.pos.0 - ex - 1.0).floor().max(0.0) as usize;
        let x1 = ((s.pos.0 + ex + 1.0).ceil() as usize).min(width.saturating_sub(1));
        let y0 = (s.pos.1 - ey - 1.0).floor().max(0.0) as usize;
        let y1 = ((s.pos.1 + ey + 1.0).ceil() as usize).min(height.saturating_sub(1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                let cov = s.coverage(x as f32, y as f32);
                if cov > 0.0 {
                    for c in 0..3 {
                        let v = data[[c, y, x]];
                        data[[c, y, x]] = v + cov * (s.color[c] - v);
                    }
                }
            }
        }
    }
    Frame::new(data).expect("rendered values stay in [0, 1]")
}

fn spawn_shapes(spec: &SynthSpec, rng: &mut impl Rng) -> Vec<Shape> {
    let w = spec.width as f32;
    let h = spec.height as f32;
    let min_dim = w.min(h);
    // Speeds in px per high-fps frame; scaled so the blur smear stays
    // proportionate when the resolution changes.
    let speed_scale = min_dim / 64.0;
    (0..spec.shape_count)
        .map(|_| {
            let kind = if rng.random::<f64>() < 0.5 {
                ShapeKind::Circle(rng.random_range(0.09..0.22) * min_dim)
            } else {
                ShapeKind::Rect(
                    rng.random_range(0.08..0.20) * min_dim,
                    rng.random_range(0.08..0.20) * min_dim,
                )
            };
            let color = [
                rng.random_range(0.05..0.95f32),
                rng.random_range(0.05..0.95f32),
                rng.random_range(0.05..0.95f32),
            ];
            let (ex, ey) = match kind {
                ShapeKind::Circle(r) => (r, r),
                ShapeKind::Rect(hw, hh) => (hw, hh),
            };
            let pos = (
                rng.random_range(ex..(w - ex).max(ex + 0.001)),
                rng.random_range(ey..(h - ey).max(ey + 0.001)),
            );
            let speed = rng.random_range(0.25..1.0f32) * speed_scale;
            let dir = rng.random_range(0.0..std::f32::consts::TAU);
            let vel = (speed * dir.cos(), speed * dir.sin());
            let acc = match spec.motion_model {
                MotionModel::Linear => (0.0, 0.0),
                MotionModel::Quadratic => {
                    let mag = rng.random_range(0.0..0.01f32) * speed_scale;
                    let adir = rng.random_range(0.0..std::f32::consts::TAU);
                    (mag * adir.cos(), mag * adir.sin())
                }
            };
            Shape { kind, color, pos, vel, acc }
        })
        .collect()
}

/// Generate one clip of the corpus. Clip `c` draws from stream `c` of the
/// spec seed, so generating clips individually, in any order, reproduces
/// [`synth_sequence`] exactly.
pub fn synth_clip(spec: &SynthSpec, clip: usize) -> Result<VideoSequence> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, clip as u64);
    let mut shapes = spawn_shapes(spec, &mut rng);
    let mut frames = Vec::with_capacity(spec.frames_per_clip);
    for _ in 0..spec.frames_per_clip {
        frames.push(render(&shapes, spec.height, spec.width));
        for s in &mut shapes {
            s.step(spec.width as f32, spec.height as f32);
        }
    }
    VideoSequence::new(frames, spec.fps)
}

/// Generate the whole corpus described by `spec`.
pub fn synth_sequence(spec: &SynthSpec) -> Result<Vec<VideoSequence>> {
    spec.validate()?;
    if spec.shape_count == 0 {
        log::warn!("shape_count = 0: generating uniform-background clips");
    }
    (0..spec.clip_count).map(|c| synth_clip(spec, c)).collect()
}

// ---------------------------------------------------------------------------
// Degradation
// ---------------------------------------------------------------------------

/// Average the `2 * tau + 1` sharp frames centred on `i * beta`.
///
/// Accumulates per pixel in `f64`; the result is a mean of `[0, 1]` values so
/// no clamping is ever needed.
pub fn blur_frame(sharp: &VideoSequence, i: usize, spec: &BlurSpec) -> Result<Frame> {
    spec.validate()?;
    let centre = (i * spec.beta) as i64;
    let lo = centre - spec.tau as i64;
    let hi = centre + spec.tau as i64;
    if lo < 0 {
        return Err(Error::index(format!("sharp frame {lo} (window start for low-fps frame {i})")));
    }
    if hi >= sharp.len() as i64 {
        return Err(Error::index(format!(
            "sharp frame {hi} (window end for low-fps frame {i}, sequence has {})",
            sharp.len()
        )));
    }
    let (h, w) = (sharp.height(), sharp.width());
    let mut acc = Array3::<f64>::zeros((3, h, w));
    for k in lo..=hi {
        let frame = sharp.frame(k as usize)?;
        acc.zip_mut_with(frame.data(), |a, &v| *a += f64::from(v));
    }
    let n = f64::from(2 * spec.tau as u32 + 1);
    Frame::new(acc.mapv(|v| (v / n) as f32))
}

/// Supervision targets for low-fps frame `i`: the sharp window centre
/// (deblurring) and the sharp frame halfway to input `i + 1` (interpolation).
pub fn ground_truth_targets(
    sharp: &VideoSequence,
    i: usize,
    spec: &BlurSpec,
) -> Result<(Frame, Frame)> {
    spec.validate()?;
    if spec.beta % 2 != 0 {
        return Err(Error::config(format!(
            "beta = {} must be even so the interpolation midpoint is an integer frame index",
            spec.beta
        )));
    }
    let centre = i * spec.beta;
    let lo = centre as i64 - spec.tau as i64;
    if lo < 0 {
        return Err(Error::index(format!("sharp frame {lo} (window start for low-fps frame {i})")));
    }
    if centre + spec.tau >= sharp.len() {
        return Err(Error::index(format!(
            "sharp frame {} (window end for low-fps frame {i}, sequence has {})",
            centre + spec.tau,
            sharp.len()
        )));
    }
    let mid = centre + spec.beta / 2;
    if mid >= sharp.len() {
        return Err(Error::index(format!(
            "sharp frame {mid} (interpolation midpoint for low-fps frame {i}, sequence has {})",
            sharp.len()
        )));
    }
    Ok((sharp.frame(centre)?.clone(), sharp.frame(mid)?.clone()))
}

/// Valid low-fps index range `[i_min, i_max]` for a sharp sequence: every
/// index whose full blur window fits.
pub fn low_fps_range(sharp_len: usize, spec: &BlurSpec) -> Result<(usize, usize)> {
    let i_min = spec.tau.div_ceil(spec.beta);
    let last = sharp_len as i64 - 1 - spec.tau as i64;
    if last < 0 {
        return Err(Error::SequenceTooShort(format!(
            "{sharp_len} sharp frames cannot fit a blur window of {}",
            2 * spec.tau + 1
        )));
    }
    let i_max = last as usize / spec.beta;
    if i_max < i_min {
        return Err(Error::SequenceTooShort(format!(
            "{sharp_len} sharp frames yield no valid low-fps frame (tau = {}, beta = {})",
            spec.tau, spec.beta
        )));
    }
    Ok((i_min, i_max))
}

/// Degrade a sharp sequence into a mixed blurry/sharp low-fps input window
/// with per-frame ground truths.
///
/// Each low-fps frame flips a seeded coin: blurred via [`blur_frame`] or
/// passed through as the sharp window centre. Frames with `blur_mask =
/// false` are bit-identical to their centres.
pub fn degrade_video(sharp: &VideoSequence, spec: &BlurSpec) -> Result<TrainingSample> {
    spec.validate()?;
    if spec.beta % 2 != 0 {
        return Err(Error::config(format!("beta = {} must be even", spec.beta)));
    }
    let (i_min, i_max) = low_fps_range(sharp.len(), spec)?;
    if i_max - i_min + 1 < 2 {
        return Err(Error::SequenceTooShort(format!(
            "{} sharp frames yield fewer than 2 low-fps frames",
            sharp.len()
        )));
    }
    let mut rng = stream_rng(spec.seed, 0);
    let mut inputs = Vec::new();
    let mut deblur_gt = Vec::new();
    let mut interp_gt = Vec::new();
    let mut blur_mask = Vec::new();

    for i in i_min..=i_max {
        let blurred = rng.random::<f64>() < spec.blur_probability;
        let centre = sharp.frame(i * spec.beta)?.clone();
        let input = if blurred { blur_frame(sharp, i, spec)? } else { centre.clone() };
        inputs.push(input);
        deblur_gt.push(centre);
        blur_mask.push(blurred);
        if i < i_max {
            interp_gt.push(sharp.frame(i * spec.beta + spec.beta / 2)?.clone());
        }
    }

    let sample = TrainingSample {
        input_window: VideoSequence::new(inputs, sharp.fps() / spec.beta as f64)?,
        deblur_gt,
        interp_gt,
        blur_mask,
    };
    sample.validate()?;
    Ok(sample)
}
