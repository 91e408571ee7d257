#![allow(dead_code)]

use dockport::eval::FrameResult;
use dockport::filters::{FilterRegistry, FilterSpec, FrameContext, InputFrame, Modality};
use dockport::geometry::{CameraIntrinsics, PortModel, PortPose};
use dockport::pose::{folded_geodesic, Estimate, Pipeline, PipelineConfig};
use dockport::synth::tilted_normal;
use nalgebra::{Rotation3, Vector3};
use rand::Rng;

pub fn camera() -> CameraIntrinsics {
    CameraIntrinsics::davis346()
}

pub fn model() -> PortModel {
    PortModel::default()
}

/// Random pose at `depth` with the whole ring (plus margin) inside the image.
pub fn random_pose(rng: &mut impl Rng, k: &CameraIntrinsics, depth: f64, inclination_deg: f64) -> PortPose {
    let r_px = k.fx * model().ring_radius() / depth * 1.15 + 6.0;
    let u = if 2.0 * r_px < k.width as f64 { rng.random_range(r_px..k.width as f64 - r_px) } else { k.cx };
    let v = if 2.0 * r_px < k.height as f64 { rng.random_range(r_px..k.height as f64 - r_px) } else { k.cy };
    let p = Vector3::new((u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth);
    let n = tilted_normal(&p, inclination_deg, rng.random_range(0.0..360.0));
    PortPose::from_normal_yaw(&n, rng.random_range(0.0..360.0), p)
}

/// In-plane rotation error after aligning the estimated normal to the true one.
pub fn yaw_error(est: &PortPose, gt: &PortPose) -> f64 {
    let align = Rotation3::rotation_between(&est.normal(), &gt.normal()).unwrap_or_else(Rotation3::identity);
    folded_geodesic(&(align * est.rotation), &gt.rotation, PortModel::SYMMETRY_ORDER)
}

pub fn best_candidate_error(e: &Estimate, gt: &PortPose) -> f64 {
    let n = gt.normal();
    [&e.five_dof.normal_a, &e.five_dof.normal_b]
        .iter()
        .map(|c| c.as_vector().angle(&n).to_degrees())
        .fold(f64::INFINITY, f64::min)
}

pub fn pipeline(filter: &str, config: PipelineConfig) -> Pipeline {
    let k = camera();
    let spec = FilterSpec::new(Modality::Rgb, model(), k);
    let filters = FilterRegistry::builtin().create(filter, &spec).expect("builtin filter");
    Pipeline::new(config, model(), k, filters)
}

/// Runs a frame with the ground-truth pose available to bypass filters.
pub fn estimate(p: &Pipeline, frame: &InputFrame, gt: &PortPose) -> Result<Estimate, dockport::pose::AbortReason> {
    let ctx = FrameContext {
        gt_pose: Some(gt),
        ..Default::default()
    };
    p.estimate(frame, &ctx).expect("filter error")
}

pub fn to_result(t: u64, gt: PortPose, outcome: Result<Estimate, dockport::pose::AbortReason>) -> FrameResult {
    FrameResult {
        timestamp_us: t,
        gt,
        outcome: outcome.map(|e| e.pose),
        in_fov: dockport::eval::in_fov(&gt, &camera()),
        temporal: None,
    }
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s[(s.len() - 1) / 2]
}

pub fn quantile(v: &[f64], q: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s[((s.len() - 1) as f64 * q).round() as usize]
}
