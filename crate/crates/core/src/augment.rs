//! Keypoint-space augmentation: a per-sequence rotation, horizontal shear
//! and scaling of the (x, y) plane about a pivot.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pose::{PoseError, PoseSequence};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("degenerate scale: 1 + scale_delta = {0}")]
    DegenerateScale(f64),
    #[error("augmentation parameters must be finite")]
    NonFinite,
    #[error("sigma must be non-negative, got {0}")]
    NegativeSigma(f64),
    #[error(transparent)]
    Pose(#[from] PoseError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentationParams {
    /// Radians.
    pub rotation_angle: f64,
    pub shear_factor: f64,
    /// Poses are scaled by `1 + scale_delta`.
    pub scale_delta: f64,
}

impl AugmentationParams {
    pub fn is_identity(&self) -> bool {
        self.rotation_angle == 0.0 && self.shear_factor == 0.0 && self.scale_delta == 0.0
    }

    /// Row-major 2x2 matrix of `Scale ∘ Shear ∘ Rotate`.
    pub fn matrix(&self) -> [[f64; 2]; 2] {
        let (sin, cos) = self.rotation_angle.sin_cos();
        let s = 1.0 + self.scale_delta;
        let h = self.shear_factor;
        // Shear [[1, h], [0, 1]] times rotation [[cos, -sin], [sin, cos]].
        [
            [s * (cos + h * sin), s * (h * cos - sin)],
            [s * sin, s * cos],
        ]
    }

    pub fn inverse_rotation(&self) -> Self {
        Self {
            rotation_angle: -self.rotation_angle,
            ..*self
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationPolicy {
    pub sigma: f64,
    pub center: (f64, f64),
    pub seed: u64,
    pub rotate: bool,
    pub shear: bool,
    pub scale: bool,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self {
            sigma: 0.2,
            center: (0.5, 0.5),
            seed: 0,
            rotate: true,
            shear: true,
            scale: true,
        }
    }
}

impl AugmentationPolicy {
    pub fn validate(&self) -> Result<(), AugmentError> {
        if !(self.sigma >= 0.0) {
            return Err(AugmentError::NegativeSigma(self.sigma));
        }
        if !self.center.0.is_finite() || !self.center.1.is_finite() {
            return Err(AugmentError::NonFinite);
        }
        Ok(())
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

/// Draws the three parameters independently from N(0, sigma²). Disabled
/// transforms still consume their draw so the stream does not depend on the
/// enable flags.
pub fn sample_params<R: Rng + ?Sized>(policy: &AugmentationPolicy, rng: &mut R) -> AugmentationParams {
    let mut draw = |enabled: bool| {
        let z: f64 = StandardNormal.sample(rng);
        if enabled {
            z * policy.sigma
        } else {
            0.0
        }
    };
    let rotation_angle = draw(policy.rotate);
    let shear_factor = draw(policy.shear);
    let scale_delta = draw(policy.scale);
    AugmentationParams {
        rotation_angle,
        shear_factor,
        scale_delta,
    }
}

/// Applies the composite affine map about `center` to every keypoint's
/// (x, y). z and confidence are untouched; results are not clamped.
pub fn apply(
    p: &PoseSequence,
    params: &AugmentationParams,
    center: (f64, f64),
) -> Result<PoseSequence, AugmentError> {
    if !(params.rotation_angle.is_finite()
        && params.shear_factor.is_finite()
        && params.scale_delta.is_finite())
    {
        return Err(AugmentError::NonFinite);
    }
    let s = 1.0 + params.scale_delta;
    if s.abs() <= 1e-6 {
        return Err(AugmentError::DegenerateScale(s));
    }
    if params.is_identity() {
        return Ok(p.clone());
    }
    let [[a, b], [c, d]] = params.matrix();
    let (cx, cy) = center;
    let dim = p.coord_dim();
    let mut coords = p.coords().to_vec();
    for point in coords.chunks_exact_mut(dim) {
        let x = point[0] as f64 - cx;
        let y = point[1] as f64 - cy;
        point[0] = (a * x + b * y + cx) as f32;
        point[1] = (c * x + d * y + cy) as f32;
    }
    Ok(p.with_data(p.fps(), coords, p.confidence().to_vec())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::Fps;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn zero_sigma_gives_zero_params() {
        let policy = AugmentationPolicy {
            sigma: 0.0,
            ..Default::default()
        };
        let mut rng = policy.rng();
        for _ in 0..10 {
            assert!(sample_params(&policy, &mut rng).is_identity());
        }
    }

    #[test]
    fn same_seed_same_stream() {
        let policy = AugmentationPolicy {
            seed: 42,
            ..Default::default()
        };
        let mut a = policy.rng();
        let mut b = policy.rng();
        for _ in 0..50 {
            assert_eq!(sample_params(&policy, &mut a), sample_params(&policy, &mut b));
        }
    }

    #[test]
    fn quarter_turn_about_origin() {
        let p = PoseSequence::from_coords(Fps::whole(25).unwrap(), 2, 1, vec![1.0, 0.0]).unwrap();
        let params = AugmentationParams {
            rotation_angle: FRAC_PI_2,
            ..Default::default()
        };
        let out = apply(&p, &params, (0.0, 0.0)).unwrap();
        assert!(out.point(0, 0)[0].abs() < 1e-6);
        assert!((out.point(0, 0)[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn shear_is_horizontal() {
        let p = PoseSequence::from_coords(Fps::whole(25).unwrap(), 3, 1, vec![0.2, 0.4, 0.7]).unwrap();
        let params = AugmentationParams {
            shear_factor: 0.5,
            ..Default::default()
        };
        let out = apply(&p, &params, (0.0, 0.0)).unwrap();
        assert!((out.point(0, 0)[0] - 0.4).abs() < 1e-7);
        assert_eq!(out.point(0, 0)[1], 0.4);
        assert_eq!(out.point(0, 0)[2], 0.7);
    }

    #[test]
    fn degenerate_scale_rejected() {
        let p = PoseSequence::from_coords(Fps::whole(25).unwrap(), 2, 1, vec![0.5, 0.5]).unwrap();
        let params = AugmentationParams {
            scale_delta: -1.0,
            ..Default::default()
        };
        assert!(matches!(
            apply(&p, &params, (0.5, 0.5)),
            Err(AugmentError::DegenerateScale(_))
        ));
    }

    #[test]
    fn disabled_transforms_are_zero() {
        let policy = AugmentationPolicy {
            rotate: false,
            scale: false,
            seed: 3,
            ..Default::default()
        };
        let mut rng = policy.rng();
        let params = sample_params(&policy, &mut rng);
        assert_eq!(params.rotation_angle, 0.0);
        assert_eq!(params.scale_delta, 0.0);
        assert_ne!(params.shear_factor, 0.0);
    }
}
