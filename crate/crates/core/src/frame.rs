//! Pixel-domain types: single RGB frames and frame sequences.

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One RGB frame. Values live in `[0, 1]`, stored channels-first as
/// `(3, height, width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    data: Array3<f32>,
}

impl Frame {
    /// Wrap pixel data, validating the range and shape invariants.
    pub fn new(data: Array3<f32>) -> Result<Self> {
        let (c, h, w) = data.dim();
        if c != 3 {
            return Err(Error::shape(format!("frame must have 3 channels, got {c}")));
        }
        if h == 0 || w == 0 {
            return Err(Error::shape(format!("frame dimensions must be positive, got {h}x{w}")));
        }
        for &v in data.iter() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::shape(format!("frame value {v} outside [0, 1]")));
            }
        }
        Ok(Frame { data })
    }

    /// Uniform frame with every channel set to `value`.
    pub fn constant(height: usize, width: usize, value: f32) -> Result<Self> {
        Frame::new(Array3::from_elem((3, height, width), value))
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f32> {
        self.data
    }

    /// Copy into a network tensor of the requested precision.
    pub fn to_tensor<T: Scalar>(&self) -> Array3<T> {
        self.data.mapv(|v| T::from_f64(f64::from(v)))
    }

    /// Build a frame from a network output tensor. The generator ends in a
    /// sigmoid so values are already in `(0, 1)`; clamping only guards
    /// against rounding at the boundaries when narrowing to `f32`.
    pub fn from_tensor<T: Scalar>(t: &Array3<T>) -> Result<Self> {
        Frame::new(t.mapv(|v| (v.to_f64() as f32).clamp(0.0, 1.0)))
    }
}

/// An ordered run of frames with a frame rate. All frames share dimensions.
#[derive(Debug, Clone)]
pub struct VideoSequence {
    frames: Vec<Frame>,
    fps: f64,
}

impl VideoSequence {
    pub fn new(frames: Vec<Frame>, fps: f64) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::SequenceTooShort("video needs at least one frame".into()));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::config(format!("fps must be positive, got {fps}")));
        }
        let (h, w) = (frames[0].height(), frames[0].width());
        for (i, f) in frames.iter().enumerate() {
            if f.height() != h || f.width() != w {
                return Err(Error::shape(format!(
                    "frame {i} is {}x{}, expected {h}x{w}",
                    f.height(),
                    f.width()
                )));
            }
        }
        Ok(VideoSequence { frames, fps })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn frame(&self, i: usize) -> Result<&Frame> {
        self.frames
            .get(i)
            .ok_or_else(|| Error::index(format!("frame {i} of a {}-frame sequence", self.len())))
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    /// Contiguous sub-sequence `[start, start + len)`, keeping the fps.
    pub fn slice(&self, start: usize, len: usize) -> Result<VideoSequence> {
        if start + len > self.frames.len() || len == 0 {
            return Err(Error::index(format!(
                "slice [{start}, {}) of a {}-frame sequence",
                start + len,
                self.len()
            )));
        }
        VideoSequence::new(self.frames[start..start + len].to_vec(), self.fps)
    }
}
