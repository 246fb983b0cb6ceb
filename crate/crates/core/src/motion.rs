//! Domain values: poses, embeddings, extrinsic factors and sequences.

use std::f64::consts::PI;

use crate::ad::Array;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Joint-angle channels per frame after dropping global orientation and
/// translation.
pub const POSE_DIM: usize = 54;
/// Width of the learned pose embedding.
pub const EMBED_DIM: usize = 32;
/// Width of the extrinsic factor.
pub const R_DIM: usize = 8;
pub const FRAME_RATE: u32 = 25;
pub const MS_PER_FRAME: u32 = 1000 / FRAME_RATE;

/// Maps an angle into `[-pi, pi]`; values already inside are returned
/// unchanged (bit for bit).
pub fn wrap_angle<S: Scalar>(x: S) -> S {
    let pi = S::of(PI);
    if x >= -pi && x <= pi {
        return x;
    }
    let two_pi = S::of(2.0 * PI);
    let mut y = x - two_pi * (x / two_pi).round();
    if y > pi {
        y = y - two_pi;
    } else if y < -pi {
        y = y + two_pi;
    }
    y
}

/// One frame of joint angles.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseVector<S>(Vec<S>);

impl<S: Scalar> PoseVector<S> {
    /// Validates finiteness and the `[-pi, pi]` range.
    pub fn new(angles: Vec<S>) -> Result<Self> {
        if angles.is_empty() {
            return Err(Error::Invalid("empty pose".into()));
        }
        let pi = S::of(PI);
        if let Some(i) = angles.iter().position(|a| !a.is_finite() || a.abs() > pi) {
            return Err(Error::Invalid(format!(
                "pose angle {i} = {} is not a wrapped finite angle",
                angles[i]
            )));
        }
        Ok(Self(angles))
    }

    /// Wraps every channel first; fails only on non-finite input.
    pub fn wrapped(angles: Vec<S>) -> Result<Self> {
        Self::new(angles.into_iter().map(wrap_angle).collect())
    }

    pub fn angles(&self) -> &[S] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn to_row(&self) -> Array<S> {
        Array::new(vec![1, self.0.len()], self.0.clone()).expect("nonempty pose")
    }
}

/// Code of one pose in the learned embedding space.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseEmbedding<S>(pub Vec<S>);

impl<S: Scalar> PoseEmbedding<S> {
    pub fn new(code: Vec<S>) -> Result<Self> {
        if code.is_empty() || code.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("embedding must be nonempty and finite".into()));
        }
        Ok(Self(code))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn to_row(&self) -> Array<S> {
        Array::new(vec![1, self.0.len()], self.0.clone()).expect("nonempty code")
    }
}

/// Random vector selecting one of the plausible futures.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtrinsicFactor<S>(pub Vec<S>);

impl<S: Scalar> ExtrinsicFactor<S> {
    pub fn new(r: Vec<S>) -> Result<Self> {
        if r.is_empty() || r.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("extrinsic factor must be nonempty and finite".into()));
        }
        Ok(Self(r))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![S::zero(); dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn to_row(&self) -> Array<S> {
        Array::new(vec![1, self.0.len()], self.0.clone()).expect("nonempty factor")
    }
}

/// Time-ordered frames at [`FRAME_RATE`], stored as a `[frames, dim]` array.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence<S> {
    frames: Array<S>,
    pub label: Option<String>,
}

impl<S: Scalar> MotionSequence<S> {
    pub fn new(frames: Array<S>, label: Option<String>) -> Result<Self> {
        if frames.shape2().is_none() || frames.dims().len() != 2 {
            return Err(Error::Invalid(format!(
                "sequence frames must be [frames, dim], got {:?}",
                frames.dims()
            )));
        }
        if !frames.all_finite() {
            return Err(Error::Invalid("sequence contains non-finite values".into()));
        }
        Ok(Self { frames, label })
    }

    pub fn from_frames(frames: &[Vec<S>], label: Option<String>) -> Result<Self> {
        Self::new(Array::from_rows(frames)?, label)
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    pub fn frames(&self) -> &Array<S> {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &[S] {
        self.frames.row(t)
    }

    pub fn pose(&self, t: usize) -> Result<PoseVector<S>> {
        PoseVector::new(self.frame(t).to_vec())
    }

    /// Frames `start .. start + len` as a new sequence with the same label.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.len() {
            return Err(Error::Invalid(format!(
                "window {start}..{} outside sequence of {} frames",
                start + len,
                self.len()
            )));
        }
        let d = self.dim();
        let values = self.frames.values()[start * d..(start + len) * d].to_vec();
        Self::new(Array::new(vec![len, d], values)?, self.label.clone())
    }

    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::Invalid("frame dims differ".into()));
        }
        let mut values = self.frames.values().to_vec();
        values.extend_from_slice(other.frames.values());
        Self::new(
            Array::new(vec![self.len() + other.len(), self.dim()], values)?,
            self.label.clone(),
        )
    }

    /// All frames satisfy the pose invariants.
    pub fn is_wrapped(&self) -> bool {
        let pi = S::of(PI);
        self.frames.values().iter().all(|v| v.abs() <= pi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pose_validation() {
        assert!(PoseVector::new(vec![0.0f64; POSE_DIM]).is_ok());
        assert!(PoseVector::new(vec![4.0f64]).is_err());
        assert!(PoseVector::new(vec![f64::NAN]).is_err());
        let p = PoseVector::wrapped(vec![4.0f64, -7.0]).unwrap();
        assert!((p.angles()[0] - (4.0 - 2.0 * PI)).abs() < 1e-12);
    }

    #[test]
    fn window_and_concat() {
        let s = MotionSequence::<f64>::from_frames(
            &[vec![0.0, 1.0], vec![0.1, 1.1], vec![0.2, 1.2]],
            Some("walk".into()),
        )
        .unwrap();
        let a = s.window(0, 1).unwrap();
        let b = s.window(1, 2).unwrap();
        assert_eq!(a.concat(&b).unwrap(), s);
        assert!(s.window(2, 2).is_err());
    }

    proptest! {
        #[test]
        fn wrap_lands_in_range(x in -1e4f64..1e4) {
            let y = wrap_angle(x);
            prop_assert!(y.abs() <= PI);
            let k = ((x - y) / (2.0 * PI)).round();
            prop_assert!((x - y - k * 2.0 * PI).abs() < 1e-9);
        }

        #[test]
        fn wrap_is_identity_in_range(x in -PI..PI) {
            prop_assert_eq!(wrap_angle(x).to_bits(), x.to_bits());
        }
    }
}
