//! Peg/hole perception: the observation contract the controller consumes, the
//! Gaussian heatmap codec used by keypoint networks, and a geometric oracle
//! that stands in for the learned classifier and positioner.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::camera::{CameraModel, ImagePoint};
use crate::error::{Error, Result};
use crate::spatial::Vec3;

/// Slack (px) allowed outside the image when clamping estimated points.
pub const IMAGE_SLACK_PX: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PegHoleState {
    Obscured,
    Separated,
    Overlapped,
}

impl PegHoleState {
    pub const ALL: [PegHoleState; 3] = [PegHoleState::Obscured, PegHoleState::Separated, PegHoleState::Overlapped];

    pub fn as_str(&self) -> &'static str {
        match self {
            PegHoleState::Obscured => "obscured",
            PegHoleState::Separated => "separated",
            PegHoleState::Overlapped => "overlapped",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PegHoleObservation {
    pub arm_index: usize,
    pub state: PegHoleState,
    pub peg_px: ImagePoint,
    pub hole_px: ImagePoint,
}

/// Ground-truth geometry one arm's camera looks at.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArmView {
    pub camera: CameraModel,
    pub peg_tip: Vec3,
    /// Unit vector from the peg tip toward its base.
    pub peg_axis: Vec3,
    pub peg_length: f64,
    pub peg_radius: f64,
    pub hole_center: Vec3,
    pub hole_radius: f64,
    /// Hole axis, pointing into the hole.
    pub hole_axis: Vec3,
}

/// Anything that turns what an arm's camera sees into a peg/hole observation.
pub trait Perception {
    fn observe(&mut self, view: &ArmView, arm: usize) -> Result<PegHoleObservation>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerceptionNoise {
    /// Per-axis Gaussian pixel noise on both points (px).
    pub pixel_sigma: f64,
    /// Hole pixel noise while the hole is obscured (px).
    pub obscured_hole_sigma: f64,
    /// Probability the reported state is replaced by a different one.
    pub mislabel_prob: f64,
}

impl Default for PerceptionNoise {
    fn default() -> Self {
        Self {
            pixel_sigma: 3.0,
            obscured_hole_sigma: 10.0,
            mislabel_prob: 0.05,
        }
    }
}

impl PerceptionNoise {
    pub fn none() -> Self {
        Self {
            pixel_sigma: 0.0,
            obscured_hole_sigma: 0.0,
            mislabel_prob: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.pixel_sigma >= 0.0
            && self.obscured_hole_sigma >= 0.0
            && (0.0..=1.0).contains(&self.mislabel_prob)
            && self.pixel_sigma.is_finite()
            && self.obscured_hole_sigma.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::ConfigInvalid(format!("perception noise out of range: {self:?}")))
        }
    }
}

/// Dense heatmap over raster pixel centres, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub sigma: f64,
    pub data: Vec<f64>,
}

impl Heatmap {
    pub fn zeros(width: usize, height: usize, sigma: f64) -> Self {
        Self {
            width,
            height,
            sigma,
            data: vec![0.0; width * height],
        }
    }

    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, col: usize, row: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }
}

/// Gaussian bump centred on `target`, given in raster pixel coordinates
/// (`u` = column, `v` = row).
pub fn encode_heatmap(target: ImagePoint, sigma: f64, width: usize, height: usize) -> Heatmap {
    assert!(sigma > 0.0, "heatmap sigma must be positive");
    let inv = 1.0 / (2.0 * sigma * sigma);
    // The bump is separable: one exponential per row and per column.
    let gauss = |d: f64| (-(d * d) * inv).exp();
    let cols: Vec<f64> = (0..width).map(|c| gauss(c as f64 - target.u)).collect();
    let mut data = Vec::with_capacity(width * height);
    for row in 0..height {
        let gv = gauss(row as f64 - target.v);
        data.extend(cols.iter().map(|gu| gu * gv));
    }
    Heatmap {
        width,
        height,
        sigma,
        data,
    }
}

/// Raster position of the largest value. Ties go to the first pixel in
/// row-major scan order.
pub fn decode_heatmap(h: &Heatmap) -> ImagePoint {
    assert!(!h.data.is_empty(), "cannot decode an empty heatmap");
    let mut best = 0;
    for (k, &value) in h.data.iter().enumerate() {
        if value > h.data[best] {
            best = k;
        }
    }
    ImagePoint::new((best % h.width) as f64, (best / h.width) as f64)
}

/// Does the segment `from -> to` pass through the solid finite cylinder?
pub fn segment_hits_cylinder(from: &Vec3, to: &Vec3, base: &Vec3, axis: &Vec3, length: f64, radius: f64) -> bool {
    let dir = to - from;
    let w = from - base;
    // Axial coordinate s(t) = (w + t dir)·axis must lie in [0, length].
    let s0 = w.dot(axis);
    let ds = dir.dot(axis);
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    if ds.abs() < 1e-15 {
        if s0 < 0.0 || s0 > length {
            return false;
        }
    } else {
        let (a, b) = ((0.0 - s0) / ds, (length - s0) / ds);
        lo = lo.max(a.min(b));
        hi = hi.min(a.max(b));
    }
    if lo > hi {
        return false;
    }
    // Radial distance² |w⊥ + t dir⊥|² ≤ r² is a quadratic in t.
    let wp = w - axis * s0;
    let dp = dir - axis * ds;
    let qa = dp.norm_squared();
    let qb = 2.0 * wp.dot(&dp);
    let qc = wp.norm_squared() - radius * radius;
    if qa < 1e-18 {
        return qc <= 0.0;
    }
    let disc = qb * qb - 4.0 * qa * qc;
    if disc < 0.0 {
        return false;
    }
    let sq = disc.sqrt();
    let (r0, r1) = ((-qb - sq) / (2.0 * qa), (-qb + sq) / (2.0 * qa));
    r0.max(lo) <= r1.min(hi)
}

/// Lateral peg-tip-to-hole-centre offset, projected onto the plane ⟂ hole axis.
pub fn true_lateral_offset(view: &ArmView) -> Vec3 {
    let delta = view.hole_center - view.peg_tip;
    delta - view.hole_axis * delta.dot(&view.hole_axis)
}

/// Geometric state label from true 3-D geometry.
pub fn classify_state(view: &ArmView) -> PegHoleState {
    if segment_hits_cylinder(
        view.camera.position(),
        &view.hole_center,
        &view.peg_tip,
        &view.peg_axis,
        view.peg_length,
        view.peg_radius,
    ) {
        PegHoleState::Obscured
    } else if true_lateral_offset(view).norm() <= view.peg_radius + view.hole_radius {
        PegHoleState::Overlapped
    } else {
        PegHoleState::Separated
    }
}

fn clamp_to_image(camera: &CameraModel, pt: ImagePoint) -> ImagePoint {
    let (hw, hh) = camera.half_extent();
    ImagePoint::new(
        pt.u.clamp(-hw - IMAGE_SLACK_PX, hw + IMAGE_SLACK_PX),
        pt.v.clamp(-hh - IMAGE_SLACK_PX, hh + IMAGE_SLACK_PX),
    )
}

fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
    } else {
        0.0
    }
}

/// Noisy oracle observation drawn from `rng`.
pub fn observe(view: &ArmView, arm: usize, noise: &PerceptionNoise, rng: &mut ChaCha8Rng) -> Result<PegHoleObservation> {
    let oracle = classify_state(view);
    let peg = view.camera.project_point(&view.peg_tip)?;
    let hole = view.camera.project_point(&view.hole_center)?;
    let hole_sigma = if oracle == PegHoleState::Obscured {
        noise.obscured_hole_sigma
    } else {
        noise.pixel_sigma
    };
    let peg = ImagePoint::new(peg.u + gaussian(rng, noise.pixel_sigma), peg.v + gaussian(rng, noise.pixel_sigma));
    let hole = ImagePoint::new(hole.u + gaussian(rng, hole_sigma), hole.v + gaussian(rng, hole_sigma));
    let state = if noise.mislabel_prob > 0.0 && rng.gen_bool(noise.mislabel_prob) {
        let others: Vec<_> = PegHoleState::ALL.iter().copied().filter(|s| *s != oracle).collect();
        others[rng.gen_range(0..others.len())]
    } else {
        oracle
    };
    Ok(PegHoleObservation {
        arm_index: arm,
        state,
        peg_px: clamp_to_image(&view.camera, peg),
        hole_px: clamp_to_image(&view.camera, hole),
    })
}

/// Reference [`Perception`] implementation: one independent RNG stream per arm.
#[derive(Clone, Debug)]
pub struct OraclePerception {
    pub noise: PerceptionNoise,
    streams: Vec<ChaCha8Rng>,
}

impl OraclePerception {
    pub fn new(noise: PerceptionNoise, streams: Vec<ChaCha8Rng>) -> Self {
        Self { noise, streams }
    }
}

impl Perception for OraclePerception {
    fn observe(&mut self, view: &ArmView, arm: usize) -> Result<PegHoleObservation> {
        observe(view, arm, &self.noise, &mut self.streams[arm])
    }
}
