//! Frame-rate conversion of pose sequences by natural cubic spline
//! interpolation of every coordinate and confidence track.

use rayon::prelude::*;
use thiserror::Error;

use crate::pose::{validate, Fps, PoseError, PoseSequence};

#[derive(Debug, Error)]
pub enum ResampleError {
    #[error("fps must be positive, got {0}")]
    NonPositiveFps(Fps),
    #[error(transparent)]
    Pose(#[from] PoseError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ResampleSpec {
    pub target_fps: Fps,
}

impl ResampleSpec {
    pub fn new(target_fps: Fps) -> Result<Self, ResampleError> {
        if !target_fps.is_positive() {
            return Err(ResampleError::NonPositiveFps(target_fps));
        }
        Ok(Self { target_fps })
    }
}

/// Natural cubic spline through samples at integer knots `0..n`.
#[derive(Clone, Debug)]
pub struct NaturalSpline {
    values: Vec<f64>,
    second: Vec<f64>,
}

impl NaturalSpline {
    pub fn new(values: Vec<f64>) -> Self {
        let n = values.len();
        let mut second = vec![0.0; n];
        if n >= 3 {
            // Tridiagonal system M[i-1] + 4 M[i] + M[i+1] = 6 (y[i+1] - 2 y[i] + y[i-1])
            // for interior knots, M[0] = M[n-1] = 0. Thomas algorithm.
            let m = n - 2;
            let mut diag = vec![4.0; m];
            let mut rhs: Vec<f64> = (1..n - 1)
                .map(|i| 6.0 * (values[i + 1] - 2.0 * values[i] + values[i - 1]))
                .collect();
            for i in 1..m {
                let w = 1.0 / diag[i - 1];
                diag[i] -= w;
                rhs[i] -= w * rhs[i - 1];
            }
            second[m] = rhs[m - 1] / diag[m - 1];
            for i in (0..m - 1).rev() {
                second[i + 1] = (rhs[i] - second[i + 2]) / diag[i];
            }
        }
        Self { values, second }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Evaluates at knot `index + frac`, `frac` in `[0, 1)`. Knots are
    /// reproduced exactly.
    pub fn eval_split(&self, index: usize, frac: f64) -> f64 {
        let n = self.values.len();
        if frac == 0.0 || n == 1 {
            return self.values[index.min(n - 1)];
        }
        let (i, r) = if index >= n - 1 {
            (n - 2, 1.0)
        } else {
            (index, frac)
        };
        let y0 = self.values[i];
        let y1 = self.values[i + 1];
        let s = 1.0 - r;
        y0 + r * (y1 - y0) + ((s * s * s - s) * self.second[i] + (r * r * r - r) * self.second[i + 1]) / 6.0
    }

    pub fn eval(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, (self.values.len() - 1) as f64);
        let i = x.floor();
        self.eval_split(i as usize, x - i)
    }
}

/// Number of output frames: `floor((T-1) * target / source) + 1`.
pub fn output_frame_count(num_frames: usize, source: Fps, target: Fps) -> usize {
    if num_frames == 0 {
        return 0;
    }
    let num = (num_frames as u128 - 1) * target.num as u128 * source.den as u128;
    let den = target.den as u128 * source.num as u128;
    (num / den) as usize + 1
}

/// Source-knot position of output frame `t`, as exact integer part and fraction.
fn source_position(t: usize, source: Fps, target: Fps) -> (usize, f64) {
    let num = t as u128 * source.num as u128 * target.den as u128;
    let den = source.den as u128 * target.num as u128;
    ((num / den) as usize, (num % den) as f64 / den as f64)
}

/// Output timestamps in seconds.
pub fn output_times(num_frames: usize, source: Fps, target: Fps) -> Vec<f64> {
    (0..output_frame_count(num_frames, source, target))
        .map(|t| t as f64 * target.den as f64 / target.num as f64)
        .collect()
}

/// Resamples `p` to `spec.target_fps`.
///
/// Output frame 0 sits at input time 0. Confidence is clamped to `[0,1]`
/// always; coordinates only when the input has no validation diagnostics.
pub fn resample(p: &PoseSequence, spec: ResampleSpec) -> Result<PoseSequence, ResampleError> {
    let target = spec.target_fps;
    if !target.is_positive() {
        return Err(ResampleError::NonPositiveFps(target));
    }
    let source = p.fps();
    if !source.is_positive() {
        return Err(ResampleError::NonPositiveFps(source));
    }
    let t_in = p.num_frames();
    if t_in == 1 {
        return Ok(p.with_data(target, p.coords().to_vec(), p.confidence().to_vec())?);
    }
    let clamp_coords = validate(p).is_empty();
    let t_out = output_frame_count(t_in, source, target);
    let positions: Vec<(usize, f64)> =
        (0..t_out).map(|t| source_position(t, source, target)).collect();

    let k = p.num_keypoints();
    let c = p.coord_dim();
    let coord_tracks: Vec<Vec<f32>> = (0..k * c)
        .into_par_iter()
        .map(|track| {
            let spline = NaturalSpline::new(
                (0..t_in).map(|t| p.coords()[t * k * c + track] as f64).collect(),
            );
            positions
                .iter()
                .map(|&(i, r)| {
                    let v = spline.eval_split(i, r);
                    let v = if clamp_coords { v.clamp(0.0, 1.0) } else { v };
                    v as f32
                })
                .collect()
        })
        .collect();
    let conf_tracks: Vec<Vec<f32>> = (0..k)
        .into_par_iter()
        .map(|kp| {
            let spline = NaturalSpline::new(
                (0..t_in).map(|t| p.confidence()[t * k + kp] as f64).collect(),
            );
            positions
                .iter()
                .map(|&(i, r)| spline.eval_split(i, r).clamp(0.0, 1.0) as f32)
                .collect()
        })
        .collect();

    let mut coords = vec![0.0f32; t_out * k * c];
    for (track, values) in coord_tracks.iter().enumerate() {
        for (t, &v) in values.iter().enumerate() {
            coords[t * k * c + track] = v;
        }
    }
    let mut confidence = vec![0.0f32; t_out * k];
    for (kp, values) in conf_tracks.iter().enumerate() {
        for (t, &v) in values.iter().enumerate() {
            confidence[t * k + kp] = v;
        }
    }
    Ok(p.with_data(target, coords, confidence)?)
}
