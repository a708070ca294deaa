//! Spatiotemporal point cache, z-buffered forward warping and the mesh-based
//! conservative disocclusion mask.

use rayon::prelude::*;

use crate::camera::{unproject_depth, CameraIntrinsics, CameraPose, Vec3};
use crate::error::{invalid, mismatch, Result};
use crate::imgbuf::Image;

/// Camera-space depth below which geometry is treated as behind the camera.
pub const NEAR_PLANE: f64 = 1e-4;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ColoredPointCloud {
    pub positions: Vec<Vec3>,
    pub colors: Vec<[f64; 3]>,
    pub valid: Vec<bool>,
    /// `(height, width)` when points are stored row-major over a pixel grid.
    pub grid_shape: Option<(usize, usize)>,
}

impl ColoredPointCloud {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            positions: Vec::with_capacity(n),
            colors: Vec::with_capacity(n),
            valid: Vec::with_capacity(n),
            grid_shape: None,
        }
    }

    pub fn push(&mut self, position: Vec3, color: [f64; 3], valid: bool) {
        self.positions.push(position);
        self.colors.push(color);
        self.valid.push(valid);
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Concatenates clouds, dropping the grid organization.
    pub fn union<'a>(clouds: impl IntoIterator<Item = &'a ColoredPointCloud>) -> Self {
        let mut out = Self::default();
        for c in clouds {
            out.positions.extend_from_slice(&c.positions);
            out.colors.extend_from_slice(&c.colors);
            out.valid.extend_from_slice(&c.valid);
        }
        out
    }
}

/// One captured frame feeding the cache.
#[derive(Clone, Debug)]
pub struct CacheFrame {
    pub image: Image,
    pub depth: Image,
    pub pose: CameraPose,
    pub intrinsics: CameraIntrinsics,
}

/// `L × V` array of clouds, stored row-major (`[t][v]`).
#[derive(Clone, Debug)]
pub struct SpatioTemporalCache {
    pub frames: usize,
    pub views: usize,
    pub clouds: Vec<ColoredPointCloud>,
}

impl SpatioTemporalCache {
    pub fn get(&self, t: usize, v: usize) -> &ColoredPointCloud {
        &self.clouds[t * self.views + v]
    }
}

/// Unprojects every frame; `frames` are given row-major over `(L, V)`.
pub fn build_cache(frames: &[CacheFrame], layout: (usize, usize)) -> Result<SpatioTemporalCache> {
    let (l, v) = layout;
    if l == 0 || v == 0 || frames.len() != l * v {
        return mismatch(format!(
            "layout {l}x{v} needs {} frames, got {}",
            l * v,
            frames.len()
        ));
    }
    let clouds = frames
        .iter()
        .map(|f| unproject_depth(&f.image, &f.depth, &f.intrinsics, &f.pose))
        .collect::<Result<Vec<_>>>()?;
    Ok(SpatioTemporalCache {
        frames: l,
        views: v,
        clouds,
    })
}

/// Output of forward warping. `mask` is 1 where a point landed, 0 where the
/// pixel is disoccluded; empty pixels carry `+∞` depth and black color.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpResult {
    pub image: Image,
    pub mask: Image,
    pub depth: Image,
}

/// Rows per parallel band in the warp and mesh rasterizers.
const BAND_ROWS: usize = 16;

struct ProjectedPoint {
    x: i64,
    y: i64,
    z: f64,
    index: usize,
}

/// Z-buffered point splatting. Each point covers the integer offsets `(dx, dy)`
/// with `dx² + dy² < r²` around its nearest pixel; the nearest depth wins and
/// ties go to the lowest point index, so the result does not depend on input order.
pub fn forward_warp(
    cloud: &ColoredPointCloud,
    pose: &CameraPose,
    intrinsics: &CameraIntrinsics,
    splat_radius: f64,
) -> Result<WarpResult> {
    if cloud.is_empty() {
        return invalid("forward_warp needs a non-empty cloud");
    }
    if !(splat_radius > 0.0) {
        return invalid("splat radius must be positive");
    }
    intrinsics.validate()?;
    let (h, w) = (intrinsics.height, intrinsics.width);
    let reach = (splat_radius.ceil() as i64 - 1).max(0);
    let r2 = splat_radius * splat_radius;

    let projected: Vec<ProjectedPoint> = cloud
        .positions
        .iter()
        .enumerate()
        .filter(|(i, _)| cloud.valid[*i])
        .filter_map(|(index, p)| {
            let pc = pose.world_to_camera(p);
            if !(pc.z > NEAR_PLANE) {
                return None;
            }
            let (u, v) = intrinsics.project(&pc);
            if !u.is_finite() || !v.is_finite() {
                return None;
            }
            Some(ProjectedPoint {
                x: u.round() as i64,
                y: v.round() as i64,
                z: pc.z,
                index,
            })
        })
        .collect();

    let mut depth = vec![f64::INFINITY; h * w];
    let mut owner = vec![usize::MAX; h * w];
    depth
        .par_chunks_mut(BAND_ROWS * w)
        .zip(owner.par_chunks_mut(BAND_ROWS * w))
        .enumerate()
        .for_each(|(band, (zbuf, ids))| {
            let y0 = (band * BAND_ROWS) as i64;
            let y1 = y0 + (zbuf.len() / w) as i64;
            for p in &projected {
                if p.y + reach < y0 || p.y - reach >= y1 {
                    continue;
                }
                for dy in -reach..=reach {
                    let y = p.y + dy;
                    if y < y0 || y >= y1 {
                        continue;
                    }
                    for dx in -reach..=reach {
                        let x = p.x + dx;
                        if x < 0 || x >= w as i64 || ((dx * dx + dy * dy) as f64) >= r2 {
                            continue;
                        }
                        let k = (y - y0) as usize * w + x as usize;
                        if (p.z, p.index) < (zbuf[k], ids[k]) {
                            zbuf[k] = p.z;
                            ids[k] = p.index;
                        }
                    }
                }
            }
        });

    let mut image = Image::new(3, h, w);
    let mut mask = Image::new(1, h, w);
    for k in 0..h * w {
        if owner[k] != usize::MAX {
            let c = cloud.colors[owner[k]];
            for (ch, v) in c.iter().enumerate() {
                image.data[ch * h * w + k] = *v;
            }
            mask.data[k] = 1.0;
        }
    }
    Ok(WarpResult {
        image,
        mask,
        depth: Image::from_vec(1, h, w, depth)?,
    })
}

/// Triangle mesh over a pixel grid, vertices in the source camera frame.
#[derive(Clone, Debug)]
pub struct PixelMesh {
    pub height: usize,
    pub width: usize,
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    pub valid: Vec<bool>,
    /// Pose of the camera whose frame the vertices live in.
    pub source_pose: CameraPose,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MeshOptions {
    /// When set, triangles whose longest edge exceeds this multiple of the local
    /// median pixel-to-pixel spacing are flagged invalid. Off by default: the
    /// stretched triangles across depth edges are what makes the refined mask
    /// treat hidden regions as occupied.
    pub discontinuity_factor: Option<f64>,
}

pub fn build_pixel_mesh(cloud: &ColoredPointCloud, pose: &CameraPose) -> Result<PixelMesh> {
    build_pixel_mesh_with(cloud, pose, &MeshOptions::default())
}

pub fn build_pixel_mesh_with(
    cloud: &ColoredPointCloud,
    pose: &CameraPose,
    options: &MeshOptions,
) -> Result<PixelMesh> {
    let (h, w) = cloud
        .grid_shape
        .ok_or_else(|| crate::error::Error::InvalidInput("cloud has no pixel grid".into()))?;
    if cloud.len() != h * w {
        return mismatch("grid shape does not match point count");
    }
    let vertices: Vec<Vec3> = cloud
        .positions
        .iter()
        .map(|p| pose.world_to_camera(p))
        .collect();
    let idx = |u: usize, v: usize| v * w + u;
    let mut triangles = Vec::with_capacity(2 * h.saturating_sub(1) * w.saturating_sub(1));
    let mut valid = Vec::with_capacity(triangles.capacity());
    let spacing = options
        .discontinuity_factor
        .map(|_| local_median_spacing(&vertices, &cloud.valid, h, w));
    for v in 0..h.saturating_sub(1) {
        for u in 0..w.saturating_sub(1) {
            let quad = [
                [idx(u, v), idx(u + 1, v), idx(u, v + 1)],
                [idx(u + 1, v), idx(u + 1, v + 1), idx(u, v + 1)],
            ];
            for tri in quad {
                let mut ok = tri.iter().all(|&i| cloud.valid[i]);
                if let (true, Some(factor), Some(sp)) = (ok, options.discontinuity_factor, &spacing) {
                    let longest = (0..3)
                        .map(|e| (vertices[tri[e]] - vertices[tri[(e + 1) % 3]]).norm())
                        .fold(0.0, f64::max);
                    let local = sp[v * (w - 1) + u];
                    ok = local.is_finite() && longest <= factor * local;
                }
                triangles.push(tri);
                valid.push(ok);
            }
        }
    }
    Ok(PixelMesh {
        height: h,
        width: w,
        vertices,
        triangles,
        valid,
        source_pose: *pose,
    })
}

/// Per-quad median of valid horizontal/vertical neighbor distances in a 5×5 quad window.
fn local_median_spacing(vertices: &[Vec3], valid: &[bool], h: usize, w: usize) -> Vec<f64> {
    let idx = |u: usize, v: usize| v * w + u;
    let mut out = vec![f64::INFINITY; (h - 1) * (w - 1)];
    let mut buf = Vec::new();
    for v in 0..h - 1 {
        for u in 0..w - 1 {
            buf.clear();
            for qv in v.saturating_sub(2)..(v + 3).min(h - 1) {
                for qu in u.saturating_sub(2)..(u + 3).min(w - 1) {
                    let a = idx(qu, qv);
                    for b in [idx(qu + 1, qv), idx(qu, qv + 1)] {
                        if valid[a] && valid[b] {
                            buf.push((vertices[a] - vertices[b]).norm());
                        }
                    }
                }
            }
            if !buf.is_empty() {
                buf.sort_by(f64::total_cmp);
                out[v * (w - 1) + u] = buf[buf.len() / 2];
            }
        }
    }
    out
}

/// Nearest ray-surface depth per pixel: perspective-correct rasterization of
/// every valid triangle, `+∞` where nothing is hit.
pub fn mesh_depth(mesh: &PixelMesh, pose: &CameraPose, intrinsics: &CameraIntrinsics) -> Result<Image> {
    intrinsics.validate()?;
    let (h, w) = (intrinsics.height, intrinsics.width);
    let verts: Vec<Vec3> = mesh
        .vertices
        .iter()
        .map(|p| pose.world_to_camera(&mesh.source_pose.camera_to_world(p)))
        .collect();
    // Screen-space (x, y, 1/z) per vertex.
    let screen: Vec<[f64; 3]> = verts
        .iter()
        .map(|p| {
            let (x, y) = intrinsics.project(p);
            [x, y, 1.0 / p.z]
        })
        .collect();
    let tris: Vec<([usize; 3], [f64; 4])> = mesh
        .triangles
        .iter()
        .zip(&mesh.valid)
        .filter(|(t, ok)| **ok && t.iter().all(|&i| verts[i].z > NEAR_PLANE))
        .filter_map(|(t, _)| {
            let [a, b, c] = t.map(|i| screen[i]);
            let area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
            if area.abs() < 1e-12 || !area.is_finite() {
                return None;
            }
            let xmin = a[0].min(b[0]).min(c[0]);
            let xmax = a[0].max(b[0]).max(c[0]);
            let ymin = a[1].min(b[1]).min(c[1]);
            let ymax = a[1].max(b[1]).max(c[1]);
            Some((*t, [xmin, xmax, ymin, ymax]))
        })
        .collect();

    let mut depth = vec![f64::INFINITY; h * w];
    depth
        .par_chunks_mut(BAND_ROWS * w)
        .enumerate()
        .for_each(|(band, zbuf)| {
            let y0 = band * BAND_ROWS;
            let y1 = y0 + zbuf.len() / w;
            for (t, bb) in &tris {
                let ys = bb[2].ceil().max(y0 as f64);
                let ye = bb[3].floor().min(y1 as f64 - 1.0);
                let xs = bb[0].ceil().max(0.0);
                let xe = bb[1].floor().min(w as f64 - 1.0);
                if ys > ye || xs > xe {
                    continue;
                }
                let [a, b, c] = t.map(|i| screen[i]);
                let area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
                for y in ys as usize..=ye as usize {
                    let py = y as f64;
                    for x in xs as usize..=xe as usize {
                        let px = x as f64;
                        let l0 = ((b[0] - px) * (c[1] - py) - (b[1] - py) * (c[0] - px)) / area;
                        let l1 = ((c[0] - px) * (a[1] - py) - (c[1] - py) * (a[0] - px)) / area;
                        let l2 = 1.0 - l0 - l1;
                        const TOL: f64 = -1e-9;
                        if l0 < TOL || l1 < TOL || l2 < TOL {
                            continue;
                        }
                        let z = 1.0 / (l0 * a[2] + l1 * b[2] + l2 * c[2]);
                        let k = (y - y0) * w + x;
                        if z > NEAR_PLANE && z < zbuf[k] {
                            zbuf[k] = z;
                        }
                    }
                }
            }
        });
    Image::from_vec(1, h, w, depth)
}

/// Masks out pixels where the mesh surface lies more than `epsilon` in front of
/// the warped point depth. Never turns a masked pixel back on.
pub fn refine_mask(warp: &WarpResult, mesh_depth: &Image, epsilon: f64) -> Result<Image> {
    if !(epsilon >= 0.0) {
        return invalid(format!("epsilon must be non-negative, got {epsilon}"));
    }
    warp.depth.ensure_same_shape(mesh_depth, "refine_mask depth")?;
    warp.mask.ensure_same_shape(mesh_depth, "refine_mask mask")?;
    let mut out = warp.mask.clone();
    for ((m, &dm), &d) in out.data.iter_mut().zip(&mesh_depth.data).zip(&warp.depth.data) {
        if dm.is_finite() && dm < d - epsilon {
            *m = 0.0;
        }
    }
    Ok(out)
}

/// `1e-2 ×` the median of the finite depths in `depth`.
pub fn default_epsilon(depth: &Image) -> f64 {
    let mut v: Vec<f64> = depth.data.iter().copied().filter(|d| d.is_finite()).collect();
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    1e-2 * v[v.len() / 2]
}

/// Warp plus refined mask from a pixel-organized cloud captured at `source_pose`.
#[derive(Clone, Debug)]
pub struct ConservativeWarp {
    pub warp: WarpResult,
    pub mesh_depth: Image,
    pub refined_mask: Image,
    pub epsilon: f64,
}

pub fn conservative_warp(
    cloud: &ColoredPointCloud,
    source_pose: &CameraPose,
    target_pose: &CameraPose,
    intrinsics: &CameraIntrinsics,
    splat_radius: f64,
    epsilon: Option<f64>,
) -> Result<ConservativeWarp> {
    let warp = forward_warp(cloud, target_pose, intrinsics, splat_radius)?;
    let mesh = build_pixel_mesh(cloud, source_pose)?;
    let md = mesh_depth(&mesh, target_pose, intrinsics)?;
    let eps = epsilon.unwrap_or_else(|| default_epsilon(&warp.depth));
    let refined = refine_mask(&warp, &md, eps)?;
    Ok(ConservativeWarp {
        warp,
        mesh_depth: md,
        refined_mask: refined,
        epsilon: eps,
    })
}
