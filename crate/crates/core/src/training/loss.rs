//! The four loss terms, each with its gradient with respect to the render.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::imgbuf::Image;
use crate::raster::GaussianScene;
use crate::rng::rng_for;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub mse: f64,
    pub lpips: f64,
    pub depth: f64,
    pub opacity: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            mse: 1.0,
            lpips: 0.5,
            depth: 0.05,
            opacity: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.mse, self.lpips, self.depth, self.opacity].iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return invalid("loss weights must be finite and non-negative");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub mse: f64,
    pub lpips: f64,
    pub depth: f64,
    pub opacity: f64,
}

impl LossParts {
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            mse: self.mse * s,
            lpips: self.lpips * s,
            depth: self.depth * s,
            opacity: self.opacity * s,
        }
    }

    pub fn add(&mut self, o: &LossParts) {
        self.mse += o.mse;
        self.lpips += o.lpips;
        self.depth += o.depth;
        self.opacity += o.opacity;
    }
}

/// Weighted sum of the loss terms; non-finite parts are an error.
pub fn total_loss(parts: &LossParts, weights: &LossWeights) -> Result<f64> {
    let p = [parts.mse, parts.lpips, parts.depth, parts.opacity];
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("loss parts {p:?}")));
    }
    Ok(weights.mse * parts.mse + weights.lpips * parts.lpips + weights.depth * parts.depth + weights.opacity * parts.opacity)
}

/// A loss value with its gradient; `flagged` marks degenerate inputs
/// (empty mask, zero prediction) handled by a fallback.
#[derive(Clone, Debug)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Image,
    pub flagged: bool,
}

fn mask_at(mask: Option<&Image>, i: usize) -> bool {
    mask.map_or(true, |m| m.data[i] > 0.5)
}

/// Mean squared error over all channels of masked pixels.
pub fn loss_mse(rendered: &Image, target: &Image, mask: Option<&Image>) -> Result<LossGrad> {
    rendered.ensure_same_shape(target, "mse target")?;
    let plane = rendered.height * rendered.width;
    if let Some(m) = mask {
        if m.channels != 1 || m.height != rendered.height || m.width != rendered.width {
            return Err(Error::DimensionMismatch("mse mask".into()));
        }
    }
    let count = (0..plane).filter(|&i| mask_at(mask, i)).count() * rendered.channels;
    let mut grad = Image::new(rendered.channels, rendered.height, rendered.width);
    if count == 0 {
        return Ok(LossGrad {
            value: 0.0,
            grad,
            flagged: true,
        });
    }
    let mut sum = 0.0;
    for c in 0..rendered.channels {
        for i in 0..plane {
            if mask_at(mask, i) {
                let j = c * plane + i;
                let d = rendered.data[j] - target.data[j];
                sum += d * d;
                grad.data[j] = 2.0 * d / count as f64;
            }
        }
    }
    Ok(LossGrad {
        value: sum / count as f64,
        grad,
        flagged: false,
    })
}

/// Scale-invariant depth loss: least-squares scale `s*` then L1 normalized by
/// the mean target depth, both over the mask. A zero prediction falls back to
/// the unscaled normalized L1.
pub fn loss_depth(rendered: &Image, target: &Image, mask: Option<&Image>) -> Result<LossGrad> {
    rendered.ensure_same_shape(target, "depth target")?;
    let n = rendered.data.len();
    let idx: Vec<usize> = (0..n)
        .filter(|&i| mask_at(mask, i) && target.data[i].is_finite() && target.data[i] > 0.0)
        .collect();
    let mut grad = Image::new(rendered.channels, rendered.height, rendered.width);
    if idx.is_empty() {
        return Ok(LossGrad {
            value: 0.0,
            grad,
            flagged: true,
        });
    }
    let (dr, dt) = (&rendered.data, &target.data);
    let rr: f64 = idx.iter().map(|&i| dr[i] * dr[i]).sum();
    let rt: f64 = idx.iter().map(|&i| dr[i] * dt[i]).sum();
    let m = idx.len() as f64;
    let mean_t = idx.iter().map(|&i| dt[i]).sum::<f64>() / m;
    let norm = 1.0 / (m * mean_t);
    if rr == 0.0 {
        let value = idx.iter().map(|&i| (dr[i] - dt[i]).abs()).sum::<f64>() * norm;
        for &i in &idx {
            grad.data[i] = (dr[i] - dt[i]).signum() * norm;
        }
        return Ok(LossGrad {
            value,
            grad,
            flagged: true,
        });
    }
    let s = rt / rr;
    let mut value = 0.0;
    let mut a = 0.0;
    for &i in &idx {
        let e = s * dr[i] - dt[i];
        value += e.abs();
        let sg = if e > 0.0 {
            1.0
        } else if e < 0.0 {
            -1.0
        } else {
            0.0
        };
        a += sg * dr[i];
        grad.data[i] = sg * s;
    }
    for &i in &idx {
        grad.data[i] += a * (dt[i] - 2.0 * s * dr[i]) / rr;
        grad.data[i] *= norm;
    }
    Ok(LossGrad {
        value: value * norm,
        grad,
        flagged: false,
    })
}

/// Mean opacity over the scene; the gradient per Gaussian is `1/N`.
pub fn loss_opacity(scene: &GaussianScene) -> Result<f64> {
    if scene.is_empty() {
        return invalid("opacity loss of an empty scene");
    }
    Ok(scene.gaussians.iter().map(|g| g.opacity).sum::<f64>() / scene.len() as f64)
}

const P_MID: usize = 6;
const OCTAVES: usize = 3;
const NORM_EPS: f64 = 1e-10;

/// Frozen random feature stack standing in for a learned perceptual metric:
/// two 3×3 convolutions (3→6→6) with tanh, features unit-normalized across
/// channels per pixel, compared at three octaves.
#[derive(Clone, Debug)]
pub struct PerceptualProxy {
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

struct Features {
    /// Per layer: pre-normalization activations and per-pixel norms.
    acts: [Vec<f64>; 2],
    norms: [Vec<f64>; 2],
}

fn conv3x3(x: &[f64], cin: usize, h: usize, w: usize, wt: &[f64], b: &[f64], cout: usize) -> Vec<f64> {
    let mut out = vec![0.0; cout * h * w];
    for o in 0..cout {
        let plane = &mut out[o * h * w..(o + 1) * h * w];
        plane.iter_mut().for_each(|v| *v = b[o]);
        for i in 0..cin {
            let src = &x[i * h * w..(i + 1) * h * w];
            for ky in 0..3 {
                for kx in 0..3 {
                    let k = wt[((o * cin + i) * 3 + ky) * 3 + kx];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let srow = &src[sy as usize * w..(sy as usize + 1) * w];
                        let drow = &mut plane[y * w..(y + 1) * w];
                        let (x0, x1) = if kx == 0 { (1, w) } else if kx == 2 { (0, w - 1) } else { (0, w) };
                        for xx in x0..x1 {
                            drow[xx] += k * srow[xx + kx - 1];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`conv3x3`] with respect to its input.
fn conv3x3_adjoint(dy: &[f64], cin: usize, h: usize, w: usize, wt: &[f64], cout: usize) -> Vec<f64> {
    let mut dx = vec![0.0; cin * h * w];
    for o in 0..cout {
        let g = &dy[o * h * w..(o + 1) * h * w];
        for i in 0..cin {
            let dst = &mut dx[i * h * w..(i + 1) * h * w];
            for ky in 0..3 {
                for kx in 0..3 {
                    let k = wt[((o * cin + i) * 3 + ky) * 3 + kx];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let grow = &g[y * w..(y + 1) * w];
                        let drow = &mut dst[sy as usize * w..(sy as usize + 1) * w];
                        let (x0, x1) = if kx == 0 { (1, w) } else if kx == 2 { (0, w - 1) } else { (0, w) };
                        for xx in x0..x1 {
                            drow[xx + kx - 1] += k * grow[xx];
                        }
                    }
                }
            }
        }
    }
    dx
}

fn channel_norms(f: &[f64], c: usize, plane: usize) -> Vec<f64> {
    (0..plane)
        .map(|p| ((0..c).map(|k| f[k * plane + p].powi(2)).sum::<f64>() + NORM_EPS).sqrt())
        .collect()
}

fn avg_pool2(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (h / 2, w / 2);
    let mut out = vec![0.0; c * h2 * w2];
    for k in 0..c {
        for y in 0..h2 {
            for xx in 0..w2 {
                let s = |dy: usize, dx: usize| x[(k * h + 2 * y + dy) * w + 2 * xx + dx];
                out[(k * h2 + y) * w2 + xx] = 0.25 * (s(0, 0) + s(0, 1) + s(1, 0) + s(1, 1));
            }
        }
    }
    out
}

fn avg_pool2_adjoint(dy: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (h / 2, w / 2);
    let mut dx = vec![0.0; c * h * w];
    for k in 0..c {
        for y in 0..h2 {
            for xx in 0..w2 {
                let g = 0.25 * dy[(k * h2 + y) * w2 + xx];
                for (dy_, dx_) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    dx[(k * h + 2 * y + dy_) * w + 2 * xx + dx_] += g;
                }
            }
        }
    }
    dx
}

impl Default for PerceptualProxy {
    fn default() -> Self {
        Self::new(0x5eed_1295)
    }
}

impl PerceptualProxy {
    pub fn new(seed: u64) -> Self {
        use rand_distr::{Distribution, Normal};
        let mut rng = rng_for(seed, "perceptual-proxy");
        let mut draw = |n: usize, fan_in: usize| {
            let d = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("finite std");
            (0..n).map(|_| d.sample(&mut rng)).collect::<Vec<f64>>()
        };
        let w1 = draw(P_MID * 3 * 9, 27);
        let b1 = draw(P_MID, 27).iter().map(|v| 0.1 * v).collect();
        let w2 = draw(P_MID * P_MID * 9, P_MID * 9);
        let b2 = draw(P_MID, P_MID * 9).iter().map(|v| 0.1 * v).collect();
        Self { w1, b1, w2, b2 }
    }

    fn features(&self, x: &[f64], h: usize, w: usize) -> Features {
        let plane = h * w;
        let centered: Vec<f64> = x.iter().map(|v| 2.0 * v - 1.0).collect();
        let a1: Vec<f64> = conv3x3(&centered, 3, h, w, &self.w1, &self.b1, P_MID).iter().map(|v| v.tanh()).collect();
        let a2: Vec<f64> = conv3x3(&a1, P_MID, h, w, &self.w2, &self.b2, P_MID).iter().map(|v| v.tanh()).collect();
        let n1 = channel_norms(&a1, P_MID, plane);
        let n2 = channel_norms(&a2, P_MID, plane);
        Features {
            acts: [a1, a2],
            norms: [n1, n2],
        }
    }

    /// Distance and (optionally) its gradient with respect to `a`.
    fn octave(&self, a: &[f64], b: &[f64], h: usize, w: usize, want_grad: bool) -> (f64, Option<Vec<f64>>) {
        let plane = h * w;
        let fa = self.features(a, h, w);
        let fb = self.features(b, h, w);
        let mut value = 0.0;
        let mut d_acts: [Vec<f64>; 2] = [vec![0.0; P_MID * plane], vec![0.0; P_MID * plane]];
        for layer in 0..2 {
            let (xa, na) = (&fa.acts[layer], &fa.norms[layer]);
            let (xb, nb) = (&fb.acts[layer], &fb.norms[layer]);
            for p in 0..plane {
                let mut diff = [0.0; P_MID];
                for c in 0..P_MID {
                    diff[c] = xa[c * plane + p] / na[p] - xb[c * plane + p] / nb[p];
                    value += diff[c] * diff[c] / plane as f64;
                }
                if want_grad {
                    // d/dx of x/|x| applied to 2·diff/plane.
                    let g: Vec<f64> = diff.iter().map(|d| 2.0 * d / plane as f64).collect();
                    let dot: f64 = (0..P_MID).map(|c| g[c] * xa[c * plane + p] / na[p]).sum();
                    for c in 0..P_MID {
                        let u = xa[c * plane + p] / na[p];
                        d_acts[layer][c * plane + p] = (g[c] - u * dot) / na[p];
                    }
                }
            }
        }
        if !want_grad {
            return (value, None);
        }
        let [mut d1, d2] = d_acts;
        let a2 = &fa.acts[1];
        let d2_pre: Vec<f64> = d2.iter().zip(a2).map(|(g, t)| g * (1.0 - t * t)).collect();
        let back = conv3x3_adjoint(&d2_pre, P_MID, h, w, &self.w2, P_MID);
        d1.iter_mut().zip(&back).for_each(|(a, b)| *a += b);
        let a1 = &fa.acts[0];
        let d1_pre: Vec<f64> = d1.iter().zip(a1).map(|(g, t)| g * (1.0 - t * t)).collect();
        let dx = conv3x3_adjoint(&d1_pre, 3, h, w, &self.w1, P_MID);
        (value, Some(dx.iter().map(|v| 2.0 * v).collect()))
    }

    fn run(&self, a: &Image, b: &Image, want_grad: bool) -> Result<(f64, Option<Image>)> {
        a.ensure_same_shape(b, "perceptual target")?;
        if a.channels != 3 {
            return invalid("perceptual proxy expects RGB images");
        }
        let (mut xa, mut xb) = (a.data.clone(), b.data.clone());
        let (mut h, mut w) = (a.height, a.width);
        let mut total = 0.0;
        let mut grads: Vec<Vec<f64>> = Vec::new();
        let mut shapes = Vec::new();
        let mut used = 0;
        for o in 0..OCTAVES {
            if h == 0 || w == 0 {
                break;
            }
            let (v, g) = self.octave(&xa, &xb, h, w, want_grad);
            total += v;
            used += 1;
            if let Some(g) = g {
                grads.push(g);
            }
            shapes.push((h, w));
            if o + 1 < OCTAVES {
                if h % 2 != 0 || w % 2 != 0 || h < 2 || w < 2 {
                    break;
                }
                xa = avg_pool2(&xa, 3, h, w);
                xb = avg_pool2(&xb, 3, h, w);
                h /= 2;
                w /= 2;
            }
        }
        let scale = 1.0 / used as f64;
        if !want_grad {
            return Ok((total * scale, None));
        }
        // Fold coarse-octave gradients back through the pooling chain.
        let mut acc = grads.pop().expect("at least one octave");
        for o in (0..grads.len()).rev() {
            let (hh, ww) = shapes[o];
            let up = avg_pool2_adjoint(&acc, 3, hh, ww);
            acc = grads[o].iter().zip(&up).map(|(x, y)| x + y).collect();
        }
        let grad = Image::from_vec(3, a.height, a.width, acc.iter().map(|v| v * scale).collect())?;
        Ok((total * scale, Some(grad)))
    }

    /// Symmetric, non-negative distance; zero for identical images.
    pub fn distance(&self, a: &Image, b: &Image) -> Result<f64> {
        Ok(self.run(a, b, false)?.0)
    }

    /// Distance and its gradient with respect to `rendered`.
    pub fn loss(&self, rendered: &Image, target: &Image) -> Result<LossGrad> {
        let (value, grad) = self.run(rendered, target, true)?;
        Ok(LossGrad {
            value,
            grad: grad.expect("gradient requested"),
            flagged: false,
        })
    }
}

/// Convenience wrapper using the default proxy.
pub fn loss_perceptual(rendered: &Image, target: &Image) -> Result<f64> {
    PerceptualProxy::default().distance(rendered, target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Gaussian;
    use crate::camera::Vec3;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn rand_image(seed: u64, c: usize, h: usize, w: usize) -> Image {
        let mut rng = rng_for(seed, "loss-test");
        let data = (0..c * h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
        Image::from_vec(c, h, w, data).unwrap()
    }

    #[test]
    fn mse_examples() {
        let a = rand_image(1, 3, 8, 8);
        assert_eq!(loss_mse(&a, &a, None).unwrap().value, 0.0);
        let mut b = a.clone();
        b.data.iter_mut().for_each(|v| *v += 0.1);
        assert!((loss_mse(&a, &b, None).unwrap().value - 0.01).abs() < 1e-12);
        let empty = Image::new(1, 8, 8);
        let r = loss_mse(&a, &b, Some(&empty)).unwrap();
        assert!(r.flagged);
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn mse_matches_double_loop() {
        let a = rand_image(2, 3, 7, 9);
        let b = rand_image(3, 3, 7, 9);
        let mask = rand_image(4, 1, 7, 9);
        let mut sum = 0.0;
        let mut n = 0;
        for y in 0..7 {
            for x in 0..9 {
                if mask.get(0, y, x) > 0.5 {
                    for c in 0..3 {
                        sum += (a.get(c, y, x) - b.get(c, y, x)).powi(2);
                        n += 1;
                    }
                }
            }
        }
        let got = loss_mse(&a, &b, Some(&mask)).unwrap().value;
        assert!((got - sum / n as f64).abs() < 1e-12);
    }

    fn check_grad(f: &dyn Fn(&Image) -> f64, x: &Image, grad: &Image, tol: f64) {
        let h = 1e-6;
        for i in 0..x.data.len() {
            let mut p = x.clone();
            p.data[i] += h;
            let mut m = x.clone();
            m.data[i] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            assert!((fd - grad.data[i]).abs() < tol * (1.0 + fd.abs()), "index {i}: {} vs {fd}", grad.data[i]);
        }
    }

    #[test]
    fn mse_gradient() {
        let a = rand_image(5, 3, 5, 5);
        let b = rand_image(6, 3, 5, 5);
        let m = rand_image(7, 1, 5, 5);
        let g = loss_mse(&a, &b, Some(&m)).unwrap().grad;
        check_grad(&|x| loss_mse(x, &b, Some(&m)).unwrap().value, &a, &g, 1e-7);
    }

    #[test]
    fn depth_examples() {
        let t = rand_image(8, 1, 6, 6).data.iter().map(|v| v + 0.5).collect::<Vec<_>>();
        let t = Image::from_vec(1, 6, 6, t).unwrap();
        assert!(loss_depth(&t, &t, None).unwrap().value.abs() < 1e-15);
        let mut d2 = t.clone();
        d2.data.iter_mut().for_each(|v| *v *= 2.0);
        assert!(loss_depth(&d2, &t, None).unwrap().value.abs() < 1e-15);
        let zero = Image::new(1, 6, 6);
        let r = loss_depth(&zero, &t, None).unwrap();
        assert!(r.flagged);
        assert!((r.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn depth_scale_invariance() {
        let t = Image::from_vec(1, 8, 8, rand_image(9, 1, 8, 8).data.iter().map(|v| 1.0 + 4.0 * v).collect()).unwrap();
        let d = Image::from_vec(1, 8, 8, rand_image(10, 1, 8, 8).data.iter().map(|v| 1.0 + 4.0 * v).collect()).unwrap();
        let base = loss_depth(&d, &t, None).unwrap().value;
        for alpha in [0.1, 1.0, 10.0] {
            let mut s = d.clone();
            s.data.iter_mut().for_each(|v| *v *= alpha);
            assert!((loss_depth(&s, &t, None).unwrap().value - base).abs() < 1e-9);
        }
    }

    #[test]
    fn depth_gradient() {
        let t = Image::from_vec(1, 5, 5, rand_image(11, 1, 5, 5).data.iter().map(|v| 1.0 + v).collect()).unwrap();
        let d = Image::from_vec(1, 5, 5, rand_image(12, 1, 5, 5).data.iter().map(|v| 1.0 + v).collect()).unwrap();
        let m = rand_image(13, 1, 5, 5);
        let g = loss_depth(&d, &t, Some(&m)).unwrap().grad;
        check_grad(&|x| loss_depth(x, &t, Some(&m)).unwrap().value, &d, &g, 1e-6);
    }

    #[test]
    fn opacity_examples() {
        let g = |o: f64| Gaussian::isotropic(Vec3::zeros(), 0.1, o, [0.5; 3]);
        assert_eq!(loss_opacity(&GaussianScene::new(vec![g(0.0); 3])).unwrap(), 0.0);
        assert_eq!(loss_opacity(&GaussianScene::new(vec![g(1.0); 3])).unwrap(), 1.0);
        assert!((loss_opacity(&GaussianScene::new(vec![g(0.2), g(0.4)])).unwrap() - 0.3).abs() < 1e-15);
        assert!(loss_opacity(&GaussianScene::default()).is_err());
    }

    #[test]
    fn total_loss_examples() {
        let w = LossWeights::default();
        let unit = LossParts {
            mse: 1.0,
            lpips: 1.0,
            depth: 1.0,
            opacity: 1.0,
        };
        assert!((total_loss(&unit, &w).unwrap() - 1.65).abs() < 1e-12);
        let zero = LossWeights {
            mse: 0.0,
            lpips: 0.0,
            depth: 0.0,
            opacity: 0.0,
        };
        assert_eq!(total_loss(&unit, &zero).unwrap(), 0.0);
        let p = LossParts {
            mse: 0.04,
            lpips: 0.3,
            depth: 0.2,
            opacity: 0.5,
        };
        assert!((total_loss(&p, &w).unwrap() - 0.25).abs() < 1e-12);
        let bad = LossParts { mse: f64::NAN, ..p };
        assert!(total_loss(&bad, &w).is_err());
    }

    #[test]
    fn perceptual_identity_and_symmetry() {
        let p = PerceptualProxy::default();
        let a = rand_image(14, 3, 16, 16);
        let b = rand_image(15, 3, 16, 16);
        assert_eq!(p.distance(&a, &a).unwrap(), 0.0);
        let ab = p.distance(&a, &b).unwrap();
        assert!(ab > 0.0);
        assert!((ab - p.distance(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn perceptual_gradient() {
        let p = PerceptualProxy::default();
        let a = rand_image(16, 3, 8, 8);
        let b = rand_image(17, 3, 8, 8);
        let g = p.loss(&a, &b).unwrap().grad;
        check_grad(&|x| p.distance(x, &b).unwrap(), &a, &g, 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn total_loss_is_linear(a in 0.0..10.0f64, b in 0.0..10.0f64, k in 0.0..5.0f64) {
            let w = LossWeights::default();
            let p = LossParts { mse: a, lpips: b, depth: a * b, opacity: b };
            let q = p.scaled(k);
            let lhs = total_loss(&q, &w).unwrap();
            let rhs = k * total_loss(&p, &w).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()));
            let mut bumped = p;
            bumped.mse += 1.0;
            let d = total_loss(&bumped, &w).unwrap() - total_loss(&p, &w).unwrap();
            prop_assert!((d - w.mse).abs() < 1e-9);
        }

        #[test]
        fn perceptual_is_non_negative(seed in 0u64..1000) {
            let p = PerceptualProxy::default();
            let a = rand_image(seed, 3, 8, 8);
            let b = rand_image(seed + 1, 3, 8, 8);
            prop_assert!(p.distance(&a, &b).unwrap() >= 0.0);
        }
    }
}
