//! Pinhole cameras, trajectories and per-pixel Plücker ray fields.
//!
//! Conventions: right-handed frames, the camera looks down `+z` in its own
//! frame with `x` right and `y` down, matching pixel space. Pixel `(u, v)`
//! refers to the continuous coordinate `(u, v)`; integer pixels sit at
//! integer coordinates. Poses store the camera-to-world rotation together
//! with the camera center, so the Plücker moment `o × d` is direct.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::Rng as _;

use crate::cache::ColoredPointCloud;
use crate::error::{invalid, mismatch, Error, Result};
use crate::imgbuf::Image;
use crate::rng::rng_for;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Centered intrinsics with a horizontal field of view in degrees.
    pub fn from_fov(width: usize, height: usize, fov_x_deg: f64) -> Result<Self> {
        let fx = 0.5 * width as f64 / (0.5 * fov_x_deg.to_radians()).tan();
        Self::new(
            fx,
            fx,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return invalid(format!("degenerate focal lengths fx={} fy={}", self.fx, self.fy));
        }
        if self.width == 0 || self.height == 0 {
            return invalid("zero image dimensions");
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return invalid(format!(
                "principal point ({}, {}) outside {}x{}",
                self.cx, self.cy, self.width, self.height
            ));
        }
        Ok(())
    }

    /// Camera-frame direction with unit `z` through pixel `(u, v)`.
    #[inline]
    pub fn backproject(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    #[inline]
    pub fn project(&self, p_cam: &Vec3) -> (f64, f64) {
        (
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        )
    }

    /// Intrinsics for an image downsampled by an integer factor with box filtering.
    pub fn downscaled(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.width % factor != 0 || self.height % factor != 0 {
            return mismatch(format!(
                "{}x{} not divisible by {factor}",
                self.width, self.height
            ));
        }
        let f = factor as f64;
        Self::new(
            self.fx / f,
            self.fy / f,
            (self.cx + 0.5) / f - 0.5,
            (self.cy + 0.5) / f - 0.5,
            self.width / factor,
            self.height / factor,
        )
    }
}

/// Camera-to-world rigid transform: `rotation` maps camera axes to world axes and
/// `center` is the camera center in world coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPose {
    pub rotation: Mat3,
    pub center: Vec3,
}

impl CameraPose {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            center: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Mat3, center: Vec3) -> Result<Self> {
        let pose = Self { rotation, center };
        pose.validate()?;
        Ok(pose)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.rotation.iter().chain(self.center.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("camera pose".into()));
        }
        let ortho = (self.rotation * self.rotation.transpose() - Mat3::identity()).abs().max();
        let det = self.rotation.determinant();
        if ortho > 1e-9 || (det - 1.0).abs() > 1e-9 {
            return invalid(format!(
                "rotation not orthonormal (|RR^T - I| = {ortho:e}, det = {det})"
            ));
        }
        Ok(())
    }

    /// Camera at `center` looking at `target`; `down` hints the image `y` axis.
    pub fn look_at(center: Vec3, target: Vec3, down: Vec3) -> Result<Self> {
        let z = (target - center).normalize();
        let x = down.cross(&z);
        if x.norm() < 1e-12 {
            return invalid("look_at: down hint parallel to viewing direction");
        }
        let x = x.normalize();
        let y = z.cross(&x);
        Self::new(Mat3::from_columns(&[x, y, z]), center)
    }

    #[inline]
    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation.tr_mul(&(p - self.center))
    }

    #[inline]
    pub fn camera_to_world(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.center
    }

    pub fn right(&self) -> Vec3 {
        self.rotation.column(0).into_owned()
    }

    pub fn down(&self) -> Vec3 {
        self.rotation.column(1).into_owned()
    }

    pub fn forward(&self) -> Vec3 {
        self.rotation.column(2).into_owned()
    }

    /// Unit world-space ray direction through pixel `(u, v)`.
    pub fn ray_direction(&self, k: &CameraIntrinsics, u: f64, v: f64) -> Vec3 {
        (self.rotation * k.backproject(u, v)).normalize()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<CameraPose>,
    pub intrinsics: CameraIntrinsics,
    pub frame_times: Vec<f64>,
}

impl Trajectory {
    pub fn new(poses: Vec<CameraPose>, intrinsics: CameraIntrinsics, frame_times: Vec<f64>) -> Result<Self> {
        let t = Self {
            poses,
            intrinsics,
            frame_times,
        };
        t.validate()?;
        Ok(t)
    }

    /// Uniform frame times `k / (L - 1)` on `[0, 1]`.
    pub fn with_uniform_times(poses: Vec<CameraPose>, intrinsics: CameraIntrinsics) -> Result<Self> {
        let times = uniform_times(poses.len());
        Self::new(poses, intrinsics, times)
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.poses.is_empty() {
            return invalid("trajectory needs at least one pose");
        }
        if self.poses.len() != self.frame_times.len() {
            return mismatch(format!(
                "{} poses but {} frame times",
                self.poses.len(),
                self.frame_times.len()
            ));
        }
        self.intrinsics.validate()?;
        for p in &self.poses {
            p.validate()?;
        }
        if self.frame_times.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return invalid("frame times must lie in [0, 1]");
        }
        if self.frame_times.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("frame times must be strictly increasing");
        }
        Ok(())
    }

    /// Restricts to the first `len` frames.
    pub fn truncated(&self, len: usize) -> Result<Self> {
        if len == 0 || len > self.len() {
            return invalid(format!("cannot truncate {} frames to {len}", self.len()));
        }
        Self::new(
            self.poses[..len].to_vec(),
            self.intrinsics,
            self.frame_times[..len].to_vec(),
        )
    }

    pub fn downscaled(&self, factor: usize) -> Result<Self> {
        Self::new(self.poses.clone(), self.intrinsics.downscaled(factor)?, self.frame_times.clone())
    }
}

pub fn uniform_times(len: usize) -> Vec<f64> {
    if len <= 1 {
        return vec![0.0; len];
    }
    (0..len).map(|k| k as f64 / (len - 1) as f64).collect()
}

/// Per-pixel ray directions and moments, each `L × 3 × H × W`.
#[derive(Clone, Debug, PartialEq)]
pub struct PluckerImage {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub directions: Vec<f64>,
    pub moments: Vec<f64>,
}

impl PluckerImage {
    #[inline]
    pub fn index(&self, frame: usize, c: usize, y: usize, x: usize) -> usize {
        ((frame * 3 + c) * self.height + y) * self.width + x
    }

    pub fn direction(&self, frame: usize, y: usize, x: usize) -> Vec3 {
        Vec3::from_fn(|c, _| self.directions[self.index(frame, c, y, x)])
    }

    pub fn moment(&self, frame: usize, y: usize, x: usize) -> Vec3 {
        Vec3::from_fn(|c, _| self.moments[self.index(frame, c, y, x)])
    }

    /// The direction (or moment) planes of one frame as a 3-channel image.
    pub fn frame_image(&self, frame: usize, moments: bool) -> Image {
        let n = 3 * self.height * self.width;
        let src = if moments { &self.moments } else { &self.directions };
        Image {
            channels: 3,
            height: self.height,
            width: self.width,
            data: src[frame * n..(frame + 1) * n].to_vec(),
        }
    }
}

pub fn compute_plucker(trajectory: &Trajectory) -> Result<PluckerImage> {
    trajectory.validate()?;
    let k = &trajectory.intrinsics;
    let (h, w, l) = (k.height, k.width, trajectory.len());
    let mut out = PluckerImage {
        frames: l,
        height: h,
        width: w,
        directions: vec![0.0; l * 3 * h * w],
        moments: vec![0.0; l * 3 * h * w],
    };
    for (f, pose) in trajectory.poses.iter().enumerate() {
        let o = pose.center;
        for y in 0..h {
            for x in 0..w {
                let d = pose.ray_direction(k, x as f64, y as f64);
                let m = o.cross(&d);
                for c in 0..3 {
                    let i = out.index(f, c, y, x);
                    out.directions[i] = d[c];
                    out.moments[i] = m[c];
                }
            }
        }
    }
    Ok(out)
}

/// Unprojects a depth map (camera `z` depth) into a pixel-organized world-space cloud.
/// Pixels with non-finite or non-positive depth are kept in the grid but flagged invalid.
pub fn unproject_depth(
    image: &Image,
    depth: &Image,
    intrinsics: &CameraIntrinsics,
    pose: &CameraPose,
) -> Result<ColoredPointCloud> {
    if image.channels != 3 || depth.channels != 1 {
        return mismatch("unproject_depth expects a 3-channel image and a 1-channel depth map");
    }
    if image.height != depth.height || image.width != depth.width {
        return mismatch(format!(
            "image {}x{} vs depth {}x{}",
            image.height, image.width, depth.height, depth.width
        ));
    }
    if image.height != intrinsics.height || image.width != intrinsics.width {
        return mismatch("image dims differ from intrinsics");
    }
    intrinsics.validate()?;
    let (h, w) = (image.height, image.width);
    let mut cloud = ColoredPointCloud::with_capacity(h * w);
    cloud.grid_shape = Some((h, w));
    for y in 0..h {
        for x in 0..w {
            let z = depth.get(0, y, x);
            let color = [image.get(0, y, x), image.get(1, y, x), image.get(2, y, x)];
            if z.is_finite() && z > 0.0 {
                let p = pose.camera_to_world(&(intrinsics.backproject(x as f64, y as f64) * z));
                cloud.push(p, color, true);
            } else {
                cloud.push(Vec3::zeros(), color, false);
            }
        }
    }
    Ok(cloud)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Archetype {
    OrbitLeft,
    OrbitRight,
    TiltUp,
    TiltDown,
    DollyOut,
    DollyIn,
}

impl Archetype {
    pub const ALL: [Archetype; 6] = [
        Archetype::OrbitLeft,
        Archetype::OrbitRight,
        Archetype::TiltUp,
        Archetype::TiltDown,
        Archetype::DollyOut,
        Archetype::DollyIn,
    ];
}

/// Parameters of the six trajectory archetypes.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct CoverageConfig {
    /// Orbit sweep around the pivot, degrees.
    pub orbit_deg: f64,
    /// In-place pitch, degrees.
    pub tilt_deg: f64,
    /// Dolly travel as a fraction of `scene_depth`.
    pub dolly_fraction: f64,
    /// Distance from the anchor to the orbit pivot along the optical axis.
    pub scene_depth: f64,
    /// Relative jitter applied to repeated archetypes when more than six views are requested.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        Self {
            orbit_deg: 30.0,
            tilt_deg: 20.0,
            dolly_fraction: 0.5,
            scene_depth: 4.0,
            jitter: 0.25,
            seed: 0,
        }
    }
}

fn rot_y(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_x(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// Generates one archetype path of `length` poses starting exactly at `anchor`.
pub fn archetype_path(
    anchor: &CameraPose,
    archetype: Archetype,
    length: usize,
    orbit_rad: f64,
    tilt_rad: f64,
    travel: f64,
    scene_depth: f64,
) -> Vec<CameraPose> {
    let pivot = anchor.center + anchor.forward() * scene_depth;
    let mut poses = Vec::with_capacity(length);
    poses.push(*anchor);
    for k in 1..length {
        let s = k as f64 / (length - 1) as f64;
        let pose = match archetype {
            Archetype::OrbitLeft | Archetype::OrbitRight => {
                let sign = if archetype == Archetype::OrbitLeft { 1.0 } else { -1.0 };
                let local = rot_y(sign * orbit_rad * s);
                let world = anchor.rotation * local * anchor.rotation.transpose();
                CameraPose {
                    rotation: anchor.rotation * local,
                    center: pivot + world * (anchor.center - pivot),
                }
            }
            Archetype::TiltUp | Archetype::TiltDown => {
                let sign = if archetype == Archetype::TiltUp { 1.0 } else { -1.0 };
                CameraPose {
                    rotation: anchor.rotation * rot_x(sign * tilt_rad * s),
                    center: anchor.center,
                }
            }
            Archetype::DollyOut | Archetype::DollyIn => {
                let sign = if archetype == Archetype::DollyIn { 1.0 } else { -1.0 };
                CameraPose {
                    rotation: anchor.rotation,
                    center: anchor.center + anchor.forward() * (sign * travel * s),
                }
            }
        };
        poses.push(pose);
    }
    poses
}

/// Samples `count` trajectories of `length` frames around `anchor`, cycling through
/// the six archetypes; repeats beyond the sixth get seeded parameter jitter.
pub fn sample_trajectories(
    anchor: &CameraPose,
    intrinsics: &CameraIntrinsics,
    count: usize,
    length: usize,
    coverage: &CoverageConfig,
) -> Result<Vec<Trajectory>> {
    if count == 0 {
        return invalid("need at least one trajectory");
    }
    if length < 2 {
        return invalid("trajectories need at least two frames");
    }
    anchor.validate()?;
    intrinsics.validate()?;
    let mut rng = rng_for(coverage.seed, "trajectory-jitter");
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let archetype = Archetype::ALL[i % 6];
        let scale = if i < 6 {
            1.0
        } else {
            1.0 + coverage.jitter * rng.gen_range(-1.0..=1.0)
        };
        let poses = archetype_path(
            anchor,
            archetype,
            length,
            coverage.orbit_deg.to_radians() * scale,
            coverage.tilt_deg.to_radians() * scale,
            coverage.dolly_fraction * coverage.scene_depth * scale,
            coverage.scene_depth,
        );
        out.push(Trajectory::with_uniform_times(poses, *intrinsics)?);
    }
    Ok(out)
}

/// Reverses frame order; times are mirrored so they stay increasing on the same span.
pub fn reverse_trajectory(trajectory: &Trajectory) -> Trajectory {
    let n = trajectory.len();
    let (first, last) = (trajectory.frame_times[0], trajectory.frame_times[n - 1]);
    Trajectory {
        poses: trajectory.poses.iter().rev().copied().collect(),
        intrinsics: trajectory.intrinsics,
        frame_times: (0..n)
            .map(|k| (first + last - trajectory.frame_times[n - 1 - k]).clamp(0.0, 1.0))
            .collect(),
    }
}

/// Text form: a `# width height` header, then one frame per line as
/// `t fx fy cx cy r00 .. r22 tx ty tz` with 17 significant digits.
pub fn trajectory_to_text(trajectory: &Trajectory) -> String {
    let k = &trajectory.intrinsics;
    let mut s = format!("# {} {}\n", k.width, k.height);
    for (pose, t) in trajectory.poses.iter().zip(&trajectory.frame_times) {
        let mut fields = vec![*t, k.fx, k.fy, k.cx, k.cy];
        for r in 0..3 {
            for c in 0..3 {
                fields.push(pose.rotation[(r, c)]);
            }
        }
        fields.extend(pose.center.iter());
        let line: Vec<String> = fields.iter().map(|v| format!("{v:.16e}")).collect();
        let _ = writeln!(s, "{}", line.join(" "));
    }
    s
}

pub fn trajectory_from_text(text: &str) -> Result<Trajectory> {
    let mut dims: Option<(usize, usize)> = None;
    let mut intrinsics: Option<CameraIntrinsics> = None;
    let mut poses = Vec::new();
    let mut times = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if dims.is_none() {
                let v: Vec<usize> = rest
                    .split_whitespace()
                    .map(|t| t.parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Format(format!("trajectory header: {e}")))?;
                if v.len() != 2 {
                    return Err(Error::Format("trajectory header must be `# width height`".into()));
                }
                dims = Some((v[0], v[1]));
            }
            continue;
        }
        let (w, h) = dims.ok_or_else(|| Error::Format("missing `# width height` header".into()))?;
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        if v.len() != 17 {
            return Err(Error::Format(format!(
                "line {}: expected 17 fields, found {}",
                lineno + 1,
                v.len()
            )));
        }
        let k = CameraIntrinsics::new(v[1], v[2], v[3], v[4], w, h)?;
        match intrinsics {
            None => intrinsics = Some(k),
            Some(prev) if prev != k => {
                return Err(Error::Format("intrinsics vary within one trajectory".into()))
            }
            _ => {}
        }
        let r = Mat3::new(v[5], v[6], v[7], v[8], v[9], v[10], v[11], v[12], v[13]);
        poses.push(CameraPose::new(r, Vec3::new(v[14], v[15], v[16]))?);
        times.push(v[0]);
    }
    let k = intrinsics.ok_or_else(|| Error::Format("trajectory has no frames".into()))?;
    Trajectory::new(poses, k, times)
}

pub fn save_trajectory(path: &Path, trajectory: &Trajectory) -> Result<()> {
    std::fs::write(path, trajectory_to_text(trajectory))?;
    Ok(())
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    trajectory_from_text(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn unit_k(w: usize, h: usize) -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 1.0,
            fy: 1.0,
            cx: 0.0,
            cy: 0.0,
            width: w,
            height: h,
        }
    }

    #[test]
    fn unproject_identity_pose() {
        let k = unit_k(1, 1);
        let img = Image::filled(3, 1, 1, 0.25);
        let depth = Image::filled(1, 1, 1, 1.0);
        let cloud = unproject_depth(&img, &depth, &k, &CameraPose::identity()).unwrap();
        assert_eq!(cloud.positions[0], Vec3::new(0.0, 0.0, 1.0));
        assert_eq!(cloud.colors[0], [0.25; 3]);
    }

    #[test]
    fn unproject_translated_pose() {
        let k = unit_k(1, 1);
        let pose = CameraPose::new(Mat3::identity(), Vec3::new(0.0, 0.0, -5.0)).unwrap();
        let cloud = unproject_depth(
            &Image::new(3, 1, 1),
            &Image::filled(1, 1, 1, 1.0),
            &k,
            &pose,
        )
        .unwrap();
        assert_eq!(cloud.positions[0], Vec3::new(0.0, 0.0, -4.0));
    }

    #[test]
    fn unproject_flags_invalid_depth() {
        let k = CameraIntrinsics::from_fov(2, 1, 60.0).unwrap();
        let depth = Image::from_vec(1, 1, 2, vec![f64::NAN, 2.0]).unwrap();
        let cloud = unproject_depth(&Image::new(3, 1, 2), &depth, &k, &CameraPose::identity()).unwrap();
        assert_eq!(cloud.valid, vec![false, true]);
    }

    #[test]
    fn unproject_rejects_dimension_mismatch() {
        let k = CameraIntrinsics::from_fov(2, 2, 60.0).unwrap();
        let r = unproject_depth(&Image::new(3, 2, 2), &Image::new(1, 2, 1), &k, &CameraPose::identity());
        assert!(matches!(r, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn unproject_project_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let k = CameraIntrinsics::new(7.5, 8.25, 3.2, 4.1, 8, 8).unwrap();
        let pose = CameraPose::look_at(
            Vec3::new(0.3, -0.2, -2.0),
            Vec3::new(0.1, 0.2, 1.0),
            Vec3::new(0.05, 1.0, 0.0),
        )
        .unwrap();
        let data = (0..64).map(|_| rng.gen_range(0.5..6.0)).collect();
        let depth = Image::from_vec(1, 8, 8, data).unwrap();
        let cloud = unproject_depth(&Image::new(3, 8, 8), &depth, &k, &pose).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let p = pose.world_to_camera(&cloud.positions[y * 8 + x]);
                let (u, v) = k.project(&p);
                assert!((u - x as f64).abs() < 1e-6 && (v - y as f64).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn plucker_origin_camera_has_zero_moments() {
        let k = CameraIntrinsics::from_fov(6, 4, 50.0).unwrap();
        let pose = CameraPose::look_at(Vec3::zeros(), Vec3::new(1.0, 0.0, 1.0), Vec3::y()).unwrap();
        let traj = Trajectory::new(vec![pose], k, vec![0.0]).unwrap();
        let pl = compute_plucker(&traj).unwrap();
        assert!(pl.moments.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn plucker_central_ray_is_forward_axis() {
        let k = CameraIntrinsics::new(10.0, 10.0, 2.0, 3.0, 5, 7).unwrap();
        let traj = Trajectory::new(vec![CameraPose::identity()], k, vec![0.0]).unwrap();
        let pl = compute_plucker(&traj).unwrap();
        assert_eq!(pl.direction(0, 3, 2), Vec3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn plucker_rejects_degenerate_focal() {
        let k = CameraIntrinsics {
            fx: 0.0,
            fy: 1.0,
            cx: 0.0,
            cy: 0.0,
            width: 2,
            height: 2,
        };
        let traj = Trajectory {
            poses: vec![CameraPose::identity()],
            intrinsics: k,
            frame_times: vec![0.0],
        };
        assert!(compute_plucker(&traj).is_err());
    }

    #[test]
    fn degenerate_coverage_stays_at_anchor() {
        let k = CameraIntrinsics::from_fov(8, 8, 60.0).unwrap();
        let anchor = CameraPose::look_at(Vec3::new(1.0, 0.0, -3.0), Vec3::zeros(), Vec3::y()).unwrap();
        let cov = CoverageConfig {
            orbit_deg: 0.0,
            tilt_deg: 0.0,
            dolly_fraction: 0.0,
            ..Default::default()
        };
        let t = sample_trajectories(&anchor, &k, 1, 2, &cov).unwrap();
        assert_eq!(t[0].poses[0], anchor);
        assert!((t[0].poses[1].rotation - anchor.rotation).abs().max() < 1e-12);
        assert!((t[0].poses[1].center - anchor.center).norm() < 1e-12);
    }

    #[test]
    fn dolly_out_moves_linearly_backwards() {
        let anchor = CameraPose::identity();
        let poses = archetype_path(&anchor, Archetype::DollyOut, 3, 0.0, 0.0, 2.0, 4.0);
        let z: Vec<f64> = poses.iter().map(|p| p.center.z).collect();
        assert_eq!(z, vec![0.0, -1.0, -2.0]);
    }

    #[test]
    fn six_archetypes_are_distinct_and_spread() {
        let k = CameraIntrinsics::from_fov(8, 8, 60.0).unwrap();
        let anchor = CameraPose::look_at(Vec3::new(0.0, 0.0, -3.0), Vec3::new(0.0, 0.0, 1.0), Vec3::y()).unwrap();
        let trajs = sample_trajectories(&anchor, &k, 6, 9, &CoverageConfig::default()).unwrap();
        let finals: Vec<CameraPose> = trajs.iter().map(|t| *t.poses.last().unwrap()).collect();
        for i in 0..6 {
            assert_eq!(trajs[i].poses[0], anchor);
            for j in i + 1..6 {
                let dr = (finals[i].rotation - finals[j].rotation).abs().max();
                let dc = (finals[i].center - finals[j].center).norm();
                assert!(dr > 1e-6 || dc > 1e-6, "final poses {i} and {j} coincide");
                let dolly_pair = i == 4 && j == 5;
                let angle = finals[i].forward().angle(&finals[j].forward()).to_degrees();
                if dolly_pair {
                    // Both dolly paths keep the anchor's viewing direction and
                    // are separated by twice the travel distance instead.
                    assert!(angle < 1e-9);
                    assert!((dc - 2.0 * 0.5 * 4.0).abs() < 1e-9);
                } else {
                    assert!(angle > 10.0, "archetypes {i},{j}: {angle} deg");
                }
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_with_jitter() {
        let k = CameraIntrinsics::from_fov(8, 8, 60.0).unwrap();
        let anchor = CameraPose::identity();
        let cov = CoverageConfig {
            seed: 11,
            ..Default::default()
        };
        let a = sample_trajectories(&anchor, &k, 9, 5, &cov).unwrap();
        let b = sample_trajectories(&anchor, &k, 9, 5, &cov).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[6].poses[4], a[0].poses[4]);
    }

    #[test]
    fn reverse_is_involution_and_renormalizes_times() {
        let k = CameraIntrinsics::from_fov(8, 8, 60.0).unwrap();
        let poses: Vec<CameraPose> = (0..3)
            .map(|i| CameraPose::new(Mat3::identity(), Vec3::new(i as f64, 0.0, 0.0)).unwrap())
            .collect();
        let t = Trajectory::new(poses, k, vec![0.0, 0.4, 1.0]).unwrap();
        let r = reverse_trajectory(&t);
        let xs: Vec<f64> = r.poses.iter().map(|p| p.center.x).collect();
        assert_eq!(xs, vec![2.0, 1.0, 0.0]);
        assert!((r.frame_times[1] - 0.6).abs() < 1e-15);
        assert_eq!(r.frame_times[0], 0.0);
        assert_eq!(r.frame_times[2], 1.0);
        assert_eq!(reverse_trajectory(&r).poses, t.poses);
        r.validate().unwrap();
    }

    #[test]
    fn text_format_round_trips_exactly() {
        let k = CameraIntrinsics::from_fov(16, 12, 55.0).unwrap();
        let anchor = CameraPose::look_at(Vec3::new(0.1, 0.2, -3.0), Vec3::zeros(), Vec3::y()).unwrap();
        let t = &sample_trajectories(&anchor, &k, 1, 4, &CoverageConfig::default()).unwrap()[0];
        let text = trajectory_to_text(t);
        assert!(text.lines().nth(1).unwrap().split_whitespace().count() == 17);
        assert_eq!(&trajectory_from_text(&text).unwrap(), t);
    }
}
