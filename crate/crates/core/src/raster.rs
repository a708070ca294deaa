//! Tile-based differentiable Gaussian splatting with a scalar reference renderer.
//!
//! Each Gaussian's footprint is `G(p) = exp(-q/2)` with `q = dᵀ Σ₂ᴅ⁻¹ d`,
//! truncated to zero beyond `q > 9` (three standard deviations). Both renderers
//! apply the same truncation and the same early stop once transmittance drops
//! below `1e-4`, so they agree to rounding.

use rayon::prelude::*;

use crate::camera::{CameraIntrinsics, CameraPose, Mat3, Vec3};
use crate::error::{invalid, mismatch, Error, Result};
use crate::imgbuf::Image;

pub const CHANNELS: usize = 14;
pub const TILE: usize = 16;
/// Screen-space dilation added to every projected covariance (pixels²).
pub const LOW_PASS: f64 = 0.3;
pub const CUTOFF_Q: f64 = 9.0;
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
/// Below this accumulated alpha the expected depth is reported as 0.
pub const DEPTH_ALPHA_MIN: f64 = 1e-4;
pub const NEAR_PLANE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOptions {
    /// Footprints are zero where `q` exceeds this; `f64::INFINITY` keeps full
    /// Gaussian support (every Gaussian lands in every tile).
    pub cutoff_q: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { cutoff_q: CUTOFF_Q }
    }
}

/// Channel offsets in the flat 14-value layout.
pub mod ch {
    pub const POSITION: usize = 0;
    pub const SCALE: usize = 3;
    pub const ROTATION: usize = 6;
    pub const OPACITY: usize = 10;
    pub const COLOR: usize = 11;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian {
    pub position: Vec3,
    pub scale: Vec3,
    /// `(w, x, y, z)`; the renderer normalizes it.
    pub rotation: [f64; 4],
    pub opacity: f64,
    pub color: [f64; 3],
}

impl Gaussian {
    pub fn isotropic(position: Vec3, radius: f64, opacity: f64, color: [f64; 3]) -> Self {
        Self {
            position,
            scale: Vec3::repeat(radius),
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity,
            color,
        }
    }

    pub fn to_channels(&self) -> [f64; CHANNELS] {
        let mut c = [0.0; CHANNELS];
        c[0..3].copy_from_slice(self.position.as_slice());
        c[3..6].copy_from_slice(self.scale.as_slice());
        c[6..10].copy_from_slice(&self.rotation);
        c[10] = self.opacity;
        c[11..14].copy_from_slice(&self.color);
        c
    }

    pub fn from_channels(c: &[f64; CHANNELS]) -> Self {
        Self {
            position: Vec3::new(c[0], c[1], c[2]),
            scale: Vec3::new(c[3], c[4], c[5]),
            rotation: [c[6], c[7], c[8], c[9]],
            opacity: c[10],
            color: [c[11], c[12], c[13]],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.to_channels().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("gaussian parameter".into()));
        }
        if self.scale.iter().any(|s| *s <= 0.0) {
            return invalid(format!("non-positive scale {:?}", self.scale));
        }
        if quat_norm(&self.rotation) < 1e-12 {
            return invalid("zero quaternion");
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return invalid(format!("opacity {} outside [0, 1]", self.opacity));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaussianScene {
    pub gaussians: Vec<Gaussian>,
    /// Decoded target time for bullet-time scenes.
    pub time_stamp: Option<f64>,
}

impl GaussianScene {
    pub fn new(gaussians: Vec<Gaussian>) -> Self {
        Self {
            gaussians,
            time_stamp: None,
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, g) in self.gaussians.iter().enumerate() {
            g.validate().map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("{m} of gaussian {i}")),
                Error::InvalidInput(m) => Error::InvalidInput(format!("gaussian {i}: {m}")),
                other => other,
            })?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub image: Image,
    pub alpha: Image,
    pub depth: Image,
}

/// Upstream gradient of a scalar loss with respect to each render output.
#[derive(Clone, Debug)]
pub struct RenderAdjoint {
    pub image: Image,
    pub alpha: Image,
    pub depth: Image,
}

impl RenderAdjoint {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            image: Image::new(3, height, width),
            alpha: Image::new(1, height, width),
            depth: Image::new(1, height, width),
        }
    }
}

pub fn quat_norm(q: &[f64; 4]) -> f64 {
    q.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn quat_to_matrix(q: &[f64; 4]) -> Mat3 {
    let [w, x, y, z] = *q;
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Screen-space state of one Gaussian after projection.
#[derive(Clone, Copy, Debug)]
struct Splat {
    mean: [f64; 2],
    /// Inverse 2D covariance `[[a, b], [b, c]]`.
    conic: [f64; 3],
    /// Half-widths of the cutoff ellipse's bounding box.
    extent: [f64; 2],
    depth: f64,
    opacity: f64,
    color: [f64; 3],
}

struct Projection {
    t: Vec3,
    rot: Mat3,
    qhat: [f64; 4],
    qnorm: f64,
    /// `J W`, the 2×3 Jacobian of the screen position w.r.t. world position.
    jw: [[f64; 3]; 2],
    sigma: Mat3,
}

fn project_gaussian(
    g: &Gaussian,
    pose: &CameraPose,
    k: &CameraIntrinsics,
    cutoff_q: f64,
) -> Option<(Splat, Projection)> {
    let t = pose.world_to_camera(&g.position);
    if !(t.z > NEAR_PLANE) {
        return None;
    }
    let qnorm = quat_norm(&g.rotation);
    let qhat = g.rotation.map(|v| v / qnorm);
    let rot = quat_to_matrix(&qhat);
    let m = rot * Mat3::from_diagonal(&g.scale);
    let sigma = m * m.transpose();
    let w = pose.rotation.transpose();
    let (iz, iz2) = (1.0 / t.z, 1.0 / (t.z * t.z));
    let j = [
        [k.fx * iz, 0.0, -k.fx * t.x * iz2],
        [0.0, k.fy * iz, -k.fy * t.y * iz2],
    ];
    let mut jw = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            jw[r][c] = (0..3).map(|i| j[r][i] * w[(i, c)]).sum();
        }
    }
    let mut cov = [0.0; 3];
    let pairs = [(0, 0), (0, 1), (1, 1)];
    for (slot, (r, s)) in pairs.iter().enumerate() {
        let mut acc = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                acc += jw[*r][a] * sigma[(a, b)] * jw[*s][b];
            }
        }
        cov[slot] = acc;
    }
    cov[0] += LOW_PASS;
    cov[2] += LOW_PASS;
    let det = cov[0] * cov[2] - cov[1] * cov[1];
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let conic = [cov[2] / det, -cov[1] / det, cov[0] / det];
    let mean = [k.fx * t.x * iz + k.cx, k.fy * t.y * iz + k.cy];
    let reach = cutoff_q.sqrt();
    let extent = [reach * cov[0].sqrt(), reach * cov[2].sqrt()];
    Some((
        Splat {
            mean,
            conic,
            extent,
            depth: t.z,
            opacity: g.opacity,
            color: g.color,
        },
        Projection {
            t,
            rot,
            qhat,
            qnorm,
            jw,
            sigma,
        },
    ))
}

struct Prepared {
    splats: Vec<Splat>,
    /// Original index of every entry in `splats`.
    source: Vec<usize>,
    /// Per tile, indices into `splats` in front-to-back order.
    bins: Vec<Vec<u32>>,
    tiles_x: usize,
    tiles_y: usize,
}

fn prepare(scene: &GaussianScene, pose: &CameraPose, k: &CameraIntrinsics, opts: &RenderOptions) -> Result<Prepared> {
    if scene.is_empty() {
        return invalid("cannot render an empty scene");
    }
    k.validate()?;
    pose.validate()?;
    scene.validate()?;
    let projected: Vec<Option<Splat>> = scene
        .gaussians
        .par_iter()
        .map(|g| project_gaussian(g, pose, k, opts.cutoff_q).map(|(s, _)| s))
        .collect();
    let mut order: Vec<usize> = (0..projected.len()).filter(|i| projected[*i].is_some()).collect();
    order.sort_by(|&a, &b| {
        let (za, zb) = (projected[a].unwrap().depth, projected[b].unwrap().depth);
        za.total_cmp(&zb).then(a.cmp(&b))
    });
    let splats: Vec<Splat> = order.iter().map(|&i| projected[i].unwrap()).collect();
    let tiles_x = k.width.div_ceil(TILE);
    let tiles_y = k.height.div_ceil(TILE);
    let mut bins = vec![Vec::new(); tiles_x * tiles_y];
    let (wmax, hmax) = (k.width as f64 - 1.0, k.height as f64 - 1.0);
    for (si, s) in splats.iter().enumerate() {
        let x0 = (s.mean[0] - s.extent[0]).ceil().max(0.0);
        let x1 = (s.mean[0] + s.extent[0]).floor().min(wmax);
        let y0 = (s.mean[1] - s.extent[1]).ceil().max(0.0);
        let y1 = (s.mean[1] + s.extent[1]).floor().min(hmax);
        if !(x0 <= x1 && y0 <= y1) {
            continue;
        }
        let (tx0, tx1) = (x0 as usize / TILE, x1 as usize / TILE);
        let (ty0, ty1) = (y0 as usize / TILE, y1 as usize / TILE);
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                bins[ty * tiles_x + tx].push(si as u32);
            }
        }
    }
    Ok(Prepared {
        splats,
        source: order,
        bins,
        tiles_x,
        tiles_y,
    })
}

#[inline]
fn footprint_q(s: &Splat, px: f64, py: f64) -> (f64, f64, f64) {
    let dx = px - s.mean[0];
    let dy = py - s.mean[1];
    let [a, b, c] = s.conic;
    (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy, dx, dy)
}

fn tile_bounds(tile: usize, tiles_x: usize, k: &CameraIntrinsics) -> (usize, usize, usize, usize) {
    let (tx, ty) = (tile % tiles_x, tile / tiles_x);
    let x0 = tx * TILE;
    let y0 = ty * TILE;
    (x0, (x0 + TILE).min(k.width), y0, (y0 + TILE).min(k.height))
}

/// Composites one pixel: returns `[r, g, b, alpha, weighted depth]`.
#[inline]
fn shade_pixel(splats: &[Splat], bin: &[u32], px: f64, py: f64, cutoff_q: f64) -> [f64; 5] {
    let mut out = [0.0; 5];
    let mut trans = 1.0;
    for &si in bin {
        let s = &splats[si as usize];
        let (q, _, _) = footprint_q(s, px, py);
        if q > cutoff_q {
            continue;
        }
        let alpha = s.opacity * (-0.5 * q).exp();
        let w = alpha * trans;
        out[0] += w * s.color[0];
        out[1] += w * s.color[1];
        out[2] += w * s.color[2];
        out[3] += w;
        out[4] += w * s.depth;
        trans *= 1.0 - alpha;
        if trans < MIN_TRANSMITTANCE {
            break;
        }
    }
    out
}

fn finish_output(pixels: Vec<[f64; 5]>, k: &CameraIntrinsics) -> RenderOutput {
    let n = k.width * k.height;
    let mut image = Image::new(3, k.height, k.width);
    let mut alpha = Image::new(1, k.height, k.width);
    let mut depth = Image::new(1, k.height, k.width);
    for (i, p) in pixels.iter().enumerate() {
        for c in 0..3 {
            image.data[c * n + i] = p[c];
        }
        alpha.data[i] = p[3];
        depth.data[i] = if p[3] < DEPTH_ALPHA_MIN { 0.0 } else { p[4] / p[3] };
    }
    RenderOutput { image, alpha, depth }
}

fn scatter_tiles(tiles: Vec<Vec<[f64; 5]>>, tiles_x: usize, k: &CameraIntrinsics) -> Vec<[f64; 5]> {
    let mut pixels = vec![[0.0; 5]; k.width * k.height];
    for (tile, vals) in tiles.into_iter().enumerate() {
        let (x0, x1, y0, y1) = tile_bounds(tile, tiles_x, k);
        let mut it = vals.into_iter();
        for y in y0..y1 {
            for x in x0..x1 {
                pixels[y * k.width + x] = it.next().unwrap();
            }
        }
    }
    pixels
}

/// Renders RGB, alpha and expected depth over a black background.
pub fn render(scene: &GaussianScene, pose: &CameraPose, k: &CameraIntrinsics) -> Result<RenderOutput> {
    render_opts(scene, pose, k, &RenderOptions::default())
}

pub fn render_opts(
    scene: &GaussianScene,
    pose: &CameraPose,
    k: &CameraIntrinsics,
    opts: &RenderOptions,
) -> Result<RenderOutput> {
    let prep = prepare(scene, pose, k, opts)?;
    let tiles: Vec<Vec<[f64; 5]>> = (0..prep.tiles_x * prep.tiles_y)
        .into_par_iter()
        .map(|tile| {
            let (x0, x1, y0, y1) = tile_bounds(tile, prep.tiles_x, k);
            let bin = &prep.bins[tile];
            let mut vals = Vec::with_capacity((x1 - x0) * (y1 - y0));
            for y in y0..y1 {
                for x in x0..x1 {
                    vals.push(shade_pixel(&prep.splats, bin, x as f64, y as f64, opts.cutoff_q));
                }
            }
            vals
        })
        .collect();
    Ok(finish_output(scatter_tiles(tiles, prep.tiles_x, k), k))
}

/// Screen-space gradient slots: mean x/y, conic a/b/c, opacity, color r/g/b, depth.
type SplatGrad = [f64; 10];

/// Forward render plus reverse-mode gradients of `Σ adjoint ⊙ output` w.r.t. all
/// 14 channels of every Gaussian (culled Gaussians get zeros).
pub fn render_with_gradients(
    scene: &GaussianScene,
    pose: &CameraPose,
    k: &CameraIntrinsics,
    adjoint: &RenderAdjoint,
) -> Result<(RenderOutput, Vec<[f64; CHANNELS]>)> {
    render_with_gradients_opts(scene, pose, k, adjoint, &RenderOptions::default())
}

pub fn render_with_gradients_opts(
    scene: &GaussianScene,
    pose: &CameraPose,
    k: &CameraIntrinsics,
    adjoint: &RenderAdjoint,
    opts: &RenderOptions,
) -> Result<(RenderOutput, Vec<[f64; CHANNELS]>)> {
    let shape = (k.height, k.width);
    for (img, c) in [(&adjoint.image, 3), (&adjoint.alpha, 1), (&adjoint.depth, 1)] {
        if (img.channels, img.height, img.width) != (c, shape.0, shape.1) {
            return mismatch("render adjoint shape does not match intrinsics");
        }
    }
    let prep = prepare(scene, pose, k, opts)?;
    let n = k.width * k.height;
    let per_tile: Vec<(Vec<[f64; 5]>, Vec<SplatGrad>)> = (0..prep.tiles_x * prep.tiles_y)
        .into_par_iter()
        .map(|tile| {
            let (x0, x1, y0, y1) = tile_bounds(tile, prep.tiles_x, k);
            let bin = &prep.bins[tile];
            let mut grads = vec![[0.0; 10]; bin.len()];
            let mut vals = Vec::with_capacity((x1 - x0) * (y1 - y0));
            let mut hits: Vec<(usize, f64, f64, f64, f64, f64)> = Vec::new();
            for y in y0..y1 {
                for x in x0..x1 {
                    let (px, py) = (x as f64, y as f64);
                    // Forward pass, remembering (slot, alpha, transmittance, q, dx, dy).
                    hits.clear();
                    let mut out = [0.0; 5];
                    let mut trans = 1.0;
                    for (slot, &si) in bin.iter().enumerate() {
                        let s = &prep.splats[si as usize];
                        let (q, dx, dy) = footprint_q(s, px, py);
                        if q > opts.cutoff_q {
                            continue;
                        }
                        let alpha = s.opacity * (-0.5 * q).exp();
                        let w = alpha * trans;
                        for c in 0..3 {
                            out[c] += w * s.color[c];
                        }
                        out[3] += w;
                        out[4] += w * s.depth;
                        hits.push((slot, alpha, trans, q, dx, dy));
                        trans *= 1.0 - alpha;
                        if trans < MIN_TRANSMITTANCE {
                            break;
                        }
                    }
                    vals.push(out);

                    let pix = y * k.width + x;
                    let gc = [
                        adjoint.image.data[pix],
                        adjoint.image.data[n + pix],
                        adjoint.image.data[2 * n + pix],
                    ];
                    // Output is (Σw c, Σw, N/A): fold depth into per-splat weights.
                    let a = out[3];
                    let (gz, ga) = if a < DEPTH_ALPHA_MIN {
                        (0.0, adjoint.alpha.data[pix])
                    } else {
                        let gd = adjoint.depth.data[pix];
                        (gd / a, adjoint.alpha.data[pix] - gd * out[4] / (a * a))
                    };
                    let mut rest = 0.0;
                    for &(slot, alpha, t_i, q, dx, dy) in hits.iter().rev() {
                        let s = &prep.splats[bin[slot] as usize];
                        let gf = gc[0] * s.color[0] + gc[1] * s.color[1] + gc[2] * s.color[2] + gz * s.depth + ga;
                        let w = alpha * t_i;
                        let d_alpha = t_i * (gf - rest);
                        rest = alpha * gf + (1.0 - alpha) * rest;
                        let g = &mut grads[slot];
                        g[6] += w * gc[0];
                        g[7] += w * gc[1];
                        g[8] += w * gc[2];
                        g[9] += w * gz;
                        let gauss = (-0.5 * q).exp();
                        g[5] += d_alpha * gauss;
                        let dq = -0.5 * alpha * d_alpha;
                        let [ca, cb, cc] = s.conic;
                        g[0] += -2.0 * dq * (ca * dx + cb * dy);
                        g[1] += -2.0 * dq * (cb * dx + cc * dy);
                        g[2] += dq * dx * dx;
                        g[3] += dq * 2.0 * dx * dy;
                        g[4] += dq * dy * dy;
                    }
                }
            }
            (vals, grads)
        })
        .collect();

    let mut splat_grads = vec![[0.0; 10]; prep.splats.len()];
    let mut tiles = Vec::with_capacity(per_tile.len());
    for (tile, (vals, grads)) in per_tile.into_iter().enumerate() {
        for (slot, g) in grads.iter().enumerate() {
            let acc = &mut splat_grads[prep.bins[tile][slot] as usize];
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        tiles.push(vals);
    }
    let output = finish_output(scatter_tiles(tiles, prep.tiles_x, k), k);

    let chained: Vec<(usize, [f64; CHANNELS])> = splat_grads
        .par_iter()
        .zip(prep.source.par_iter())
        .map(|(sg, &src)| (src, backprop_projection(&scene.gaussians[src], pose, k, sg)))
        .collect();
    let mut out = vec![[0.0; CHANNELS]; scene.len()];
    for (src, g) in chained {
        out[src] = g;
    }
    Ok((output, out))
}

fn backprop_projection(g: &Gaussian, pose: &CameraPose, k: &CameraIntrinsics, sg: &SplatGrad) -> [f64; CHANNELS] {
    let (splat, p) = project_gaussian(g, pose, k, CUTOFF_Q).expect("projected during prepare");
    let mut out = [0.0; CHANNELS];
    out[ch::OPACITY] = sg[5];
    out[ch::COLOR..ch::COLOR + 3].copy_from_slice(&sg[6..9]);

    // Conic gradient (a, 2b, c slots) to a symmetric dQ, then dΣ₂ᴅ = -Q dQ Q.
    let [ca, cb, cc] = splat.conic;
    let q = [[ca, cb], [cb, cc]];
    let dq = [[sg[2], 0.5 * sg[3]], [0.5 * sg[3], sg[4]]];
    let mut tmp = [[0.0; 2]; 2];
    let mut dcov = [[0.0; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            tmp[r][c] = (0..2).map(|i| q[r][i] * dq[i][c]).sum();
        }
    }
    for r in 0..2 {
        for c in 0..2 {
            dcov[r][c] = -(0..2).map(|i| tmp[r][i] * q[i][c]).sum::<f64>();
        }
    }

    // Σ₂ᴅ = T Σ Tᵀ with T = J W.
    let tm = p.jw;
    let mut dsigma = Mat3::zeros();
    for a in 0..3 {
        for b in 0..3 {
            let mut acc = 0.0;
            for r in 0..2 {
                for c in 0..2 {
                    acc += tm[r][a] * dcov[r][c] * tm[c][b];
                }
            }
            dsigma[(a, b)] = acc;
        }
    }
    let mut dt_mat = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            let mut acc = 0.0;
            for i in 0..2 {
                for j in 0..3 {
                    acc += dcov[r][i] * tm[i][j] * p.sigma[(j, c)];
                }
            }
            dt_mat[r][c] = 2.0 * acc;
        }
    }
    let w = pose.rotation.transpose();
    let mut dj = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            dj[r][c] = (0..3).map(|i| dt_mat[r][i] * w[(c, i)]).sum();
        }
    }

    let t = p.t;
    let (iz, iz2, iz3) = (1.0 / t.z, 1.0 / (t.z * t.z), 1.0 / (t.z * t.z * t.z));
    let (fx, fy) = (k.fx, k.fy);
    let mut dtv = Vec3::zeros();
    dtv.x += dj[0][2] * (-fx * iz2);
    dtv.y += dj[1][2] * (-fy * iz2);
    dtv.z += dj[0][0] * (-fx * iz2) + dj[0][2] * (2.0 * fx * t.x * iz3) + dj[1][1] * (-fy * iz2)
        + dj[1][2] * (2.0 * fy * t.y * iz3);
    dtv.x += sg[0] * fx * iz;
    dtv.z += -sg[0] * fx * t.x * iz2;
    dtv.y += sg[1] * fy * iz;
    dtv.z += -sg[1] * fy * t.y * iz2;
    dtv.z += sg[9];
    let dpos = pose.rotation * dtv;
    out[0..3].copy_from_slice(dpos.as_slice());

    // Σ = M Mᵀ with M = R diag(s).
    let m = p.rot * Mat3::from_diagonal(&g.scale);
    let dm = 2.0 * dsigma * m;
    let mut dr = Mat3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            dr[(i, j)] = dm[(i, j)] * g.scale[j];
            out[ch::SCALE + j] += dm[(i, j)] * p.rot[(i, j)];
        }
    }
    let [qw, qx, qy, qz] = p.qhat;
    let d = |i: usize, j: usize| dr[(i, j)];
    let dqhat = [
        2.0 * qz * (d(1, 0) - d(0, 1)) + 2.0 * qy * (d(0, 2) - d(2, 0)) + 2.0 * qx * (d(2, 1) - d(1, 2)),
        2.0 * qy * (d(1, 0) + d(0, 1)) + 2.0 * qz * (d(2, 0) + d(0, 2)) + 2.0 * qw * (d(2, 1) - d(1, 2))
            - 4.0 * qx * (d(2, 2) + d(1, 1)),
        2.0 * qx * (d(1, 0) + d(0, 1)) + 2.0 * qw * (d(0, 2) - d(2, 0)) + 2.0 * qz * (d(2, 1) + d(1, 2))
            - 4.0 * qy * (d(2, 2) + d(0, 0)),
        2.0 * qw * (d(1, 0) - d(0, 1)) + 2.0 * qx * (d(2, 0) + d(0, 2)) + 2.0 * qy * (d(2, 1) + d(1, 2))
            - 4.0 * qz * (d(1, 1) + d(0, 0)),
    ];
    let dot: f64 = (0..4).map(|i| dqhat[i] * p.qhat[i]).sum();
    for i in 0..4 {
        out[ch::ROTATION + i] = (dqhat[i] - p.qhat[i] * dot) / p.qnorm;
    }
    out
}

/// Single-threaded per-pixel renderer: every pixel loops over every Gaussian
/// with plain matrix algebra. Used as the correctness oracle.
pub fn render_reference(
    scene: &GaussianScene,
    pose: &CameraPose,
    k: &CameraIntrinsics,
    opts: &RenderOptions,
) -> Result<RenderOutput> {
    use nalgebra::{Matrix2, Matrix2x3, Vector2};
    if scene.is_empty() {
        return invalid("cannot render an empty scene");
    }
    k.validate()?;
    scene.validate()?;
    struct Ref {
        mean: Vector2<f64>,
        inv: Matrix2<f64>,
        z: f64,
        index: usize,
    }
    let mut items = Vec::new();
    for (index, g) in scene.gaussians.iter().enumerate() {
        let t = pose.rotation.transpose() * (g.position - pose.center);
        if t.z <= NEAR_PLANE {
            continue;
        }
        let q = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            g.rotation[0],
            g.rotation[1],
            g.rotation[2],
            g.rotation[3],
        ));
        let r = q.to_rotation_matrix().into_inner();
        let s2 = Mat3::from_diagonal(&g.scale.component_mul(&g.scale));
        let cov3 = r * s2 * r.transpose();
        let j = Matrix2x3::new(
            k.fx / t.z,
            0.0,
            -k.fx * t.x / (t.z * t.z),
            0.0,
            k.fy / t.z,
            -k.fy * t.y / (t.z * t.z),
        );
        let jw = j * pose.rotation.transpose();
        let cov2 = jw * cov3 * jw.transpose() + Matrix2::identity() * LOW_PASS;
        let Some(inv) = cov2.try_inverse() else { continue };
        items.push(Ref {
            mean: Vector2::new(k.fx * t.x / t.z + k.cx, k.fy * t.y / t.z + k.cy),
            inv,
            z: t.z,
            index,
        });
    }
    items.sort_by(|a, b| a.z.total_cmp(&b.z).then(a.index.cmp(&b.index)));
    let mut pixels = Vec::with_capacity(k.width * k.height);
    for y in 0..k.height {
        for x in 0..k.width {
            let p = Vector2::new(x as f64, y as f64);
            let mut trans = 1.0;
            let mut acc = [0.0; 5];
            for it in &items {
                let d = p - it.mean;
                let q = (d.transpose() * it.inv * d)[(0, 0)];
                if q > opts.cutoff_q {
                    continue;
                }
                let g = &scene.gaussians[it.index];
                let alpha = g.opacity * (-0.5 * q).exp();
                let w = trans * alpha;
                for c in 0..3 {
                    acc[c] += w * g.color[c];
                }
                acc[3] += w;
                acc[4] += w * it.z;
                trans *= 1.0 - alpha;
                if trans < MIN_TRANSMITTANCE {
                    break;
                }
            }
            pixels.push(acc);
        }
    }
    Ok(finish_output(pixels, k))
}

/// `ceil(keep_fraction · n)`, robust to products that land a rounding error above an integer.
pub fn prune_count(n: usize, keep_fraction: f64) -> usize {
    let x = keep_fraction * n as f64;
    let r = x.round();
    let k = if (x - r).abs() <= 1e-9 * x.max(1.0) { r } else { x.ceil() };
    (k as usize).min(n)
}

/// Indices of the `ceil(keep_fraction · N)` most opaque Gaussians (lower index
/// wins ties), ascending.
pub fn prune_indices(scene: &GaussianScene, keep_fraction: f64) -> Result<Vec<usize>> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return invalid(format!("keep fraction {keep_fraction} outside (0, 1]"));
    }
    let n = scene.len();
    let keep = prune_count(n, keep_fraction);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        scene.gaussians[b]
            .opacity
            .total_cmp(&scene.gaussians[a].opacity)
            .then(a.cmp(&b))
    });
    let mut kept = order[..keep].to_vec();
    kept.sort_unstable();
    Ok(kept)
}

/// Keeps the most opaque Gaussians per [`prune_indices`], preserving their order.
pub fn prune_by_opacity(scene: &GaussianScene, keep_fraction: f64) -> Result<GaussianScene> {
    let kept = prune_indices(scene, keep_fraction)?;
    Ok(GaussianScene {
        gaussians: kept.iter().map(|&i| scene.gaussians[i]).collect(),
        time_stamp: scene.time_stamp,
    })
}

/// Per-pixel Gaussians laid out `[view][frame][row][col]`.
#[derive(Clone, Debug)]
pub struct GaussianGrid {
    pub views: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub gaussians: Vec<Gaussian>,
}

/// Number of Gaussians left after keeping one per `factor × factor` block.
pub fn subsample_count(views: usize, frames: usize, height: usize, width: usize, factor: usize) -> Result<u64> {
    if factor == 0 || height % factor != 0 || width % factor != 0 {
        return mismatch(format!("{height}x{width} not divisible by {factor}"));
    }
    Ok(views as u64 * frames as u64 * (height / factor) as u64 * (width / factor) as u64)
}

/// Keeps the top-left Gaussian of each `factor × factor` block.
pub fn subsample_grid(grid: &GaussianGrid, factor: usize) -> Result<GaussianScene> {
    let count = subsample_count(grid.views, grid.frames, grid.height, grid.width, factor)? as usize;
    if grid.gaussians.len() != grid.views * grid.frames * grid.height * grid.width {
        return mismatch("grid dimensions do not match gaussian count");
    }
    let mut out = Vec::with_capacity(count);
    for plane in 0..grid.views * grid.frames {
        let base = plane * grid.height * grid.width;
        for y in (0..grid.height).step_by(factor) {
            for x in (0..grid.width).step_by(factor) {
                out.push(grid.gaussians[base + y * grid.width + x]);
            }
        }
    }
    Ok(GaussianScene::new(out))
}
