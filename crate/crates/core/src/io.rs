//! File formats and image metrics: splat PLY, raw frame/depth dumps, PNG, PSNR and SSIM.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::cache::WarpResult;
use crate::camera::Vec3;
use crate::error::{invalid, mismatch, Error, Result};
use crate::imgbuf::Image;
use crate::raster::{Gaussian, GaussianScene};

/// Zeroth-order spherical harmonic constant.
pub const SH_C0: f64 = 0.28209479177387814;

pub const PLY_PROPERTIES: [&str; 17] = [
    "x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2", "rot_0",
    "rot_1", "rot_2", "rot_3",
];

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    crate::decoder::sigmoid(x)
}

pub fn ply_header(count: usize) -> String {
    let mut h = format!("ply\nformat binary_little_endian 1.0\nelement vertex {count}\n");
    for p in PLY_PROPERTIES {
        h.push_str(&format!("property float {p}\n"));
    }
    h.push_str("end_header\n");
    h
}

/// One PLY record in file order.
pub fn ply_record(g: &Gaussian) -> [f32; 17] {
    let mut r = [0f32; 17];
    for i in 0..3 {
        r[i] = g.position[i] as f32;
        r[6 + i] = ((g.color[i] - 0.5) / SH_C0) as f32;
        r[10 + i] = g.scale[i].ln() as f32;
    }
    r[9] = logit(g.opacity) as f32;
    for i in 0..4 {
        r[13 + i] = g.rotation[i] as f32;
    }
    r
}

fn from_record(r: &[f32; 17]) -> Gaussian {
    let f = |i: usize| r[i] as f64;
    Gaussian {
        position: Vec3::new(f(0), f(1), f(2)),
        scale: Vec3::new(f(10).exp(), f(11).exp(), f(12).exp()),
        rotation: [f(13), f(14), f(15), f(16)],
        opacity: sigmoid(f(9)),
        color: [0.5 + SH_C0 * f(6), 0.5 + SH_C0 * f(7), 0.5 + SH_C0 * f(8)],
    }
}

pub fn write_ply(mut w: impl Write, scene: &GaussianScene) -> Result<()> {
    scene.validate()?;
    w.write_all(ply_header(scene.len()).as_bytes())?;
    let mut buf = Vec::with_capacity(scene.len() * 68);
    for g in &scene.gaussians {
        for v in ply_record(g) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_ply(r: impl Read) -> Result<GaussianScene> {
    let mut r = BufReader::new(r);
    let mut line = String::new();
    let mut expect = |r: &mut BufReader<_>, want: &str| -> Result<String> {
        line.clear();
        r.read_line(&mut line)?;
        let got = line.trim_end_matches('\n').to_string();
        if !want.is_empty() && got != want {
            return Err(Error::Format(format!("PLY header: expected {want:?}, got {got:?}")));
        }
        Ok(got)
    };
    expect(&mut r, "ply")?;
    expect(&mut r, "format binary_little_endian 1.0")?;
    let count_line = expect(&mut r, "")?;
    let count: usize = count_line
        .strip_prefix("element vertex ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format(format!("PLY header: bad element line {count_line:?}")))?;
    for p in PLY_PROPERTIES {
        expect(&mut r, &format!("property float {p}"))?;
    }
    expect(&mut r, "end_header")?;
    let mut bytes = vec![0u8; count * 68];
    r.read_exact(&mut bytes)?;
    let gaussians = bytes
        .chunks_exact(68)
        .map(|c| {
            let rec: [f32; 17] = std::array::from_fn(|i| f32::from_le_bytes([c[4 * i], c[4 * i + 1], c[4 * i + 2], c[4 * i + 3]]));
            from_record(&rec)
        })
        .collect();
    Ok(GaussianScene::new(gaussians))
}

pub fn export_ply(scene: &GaussianScene, path: &Path) -> Result<()> {
    let mut f = BufWriter::new(std::fs::File::create(path)?);
    write_ply(&mut f, scene)?;
    f.flush()?;
    Ok(())
}

pub fn import_ply(path: &Path) -> Result<GaussianScene> {
    read_ply(std::fs::File::open(path)?)
}

fn write_u32s(w: &mut impl Write, vals: &[usize]) -> Result<()> {
    for &v in vals {
        let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn write_f32s(w: &mut impl Write, data: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(data.len() * 4);
    for v in data {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_f32s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)?;
    Ok(bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect())
}

/// Frame stack: header `L C H W` (u32 LE), then f32 LE samples frame-major, channel-major.
pub fn write_frames_raw(mut w: impl Write, frames: &[Image]) -> Result<()> {
    let first = frames.first().ok_or_else(|| Error::InvalidInput("no frames".into()))?;
    if frames.iter().any(|f| !f.same_shape(first)) {
        return mismatch("frames differ in shape");
    }
    write_u32s(&mut w, &[frames.len(), first.channels, first.height, first.width])?;
    for f in frames {
        write_f32s(&mut w, &f.data)?;
    }
    Ok(())
}

pub fn read_frames_raw(mut r: impl Read) -> Result<Vec<Image>> {
    let (l, c, h, w) = (read_u32(&mut r)?, read_u32(&mut r)?, read_u32(&mut r)?, read_u32(&mut r)?);
    if l == 0 || c == 0 || h == 0 || w == 0 || l * c * h * w > 1 << 30 {
        return Err(Error::Format(format!("implausible frame stack {l}x{c}x{h}x{w}")));
    }
    (0..l).map(|_| Image::from_vec(c, h, w, read_f32s(&mut r, c * h * w)?)).collect()
}

/// Single depth map: header `H W` (u32 LE), then f32 LE row-major.
pub fn write_depth_raw(mut w: impl Write, depth: &Image) -> Result<()> {
    if depth.channels != 1 {
        return mismatch("depth must have one channel");
    }
    write_u32s(&mut w, &[depth.height, depth.width])?;
    write_f32s(&mut w, &depth.data)
}

pub fn read_depth_raw(mut r: impl Read) -> Result<Image> {
    let (h, w) = (read_u32(&mut r)?, read_u32(&mut r)?);
    if h == 0 || w == 0 || h * w > 1 << 28 {
        return Err(Error::Format(format!("implausible depth map {h}x{w}")));
    }
    Image::from_vec(1, h, w, read_f32s(&mut r, h * w)?)
}

pub fn save_frames(path: &Path, frames: &[Image]) -> Result<()> {
    let mut f = BufWriter::new(std::fs::File::create(path)?);
    write_frames_raw(&mut f, frames)?;
    f.flush()?;
    Ok(())
}

pub fn load_frames(path: &Path) -> Result<Vec<Image>> {
    read_frames_raw(BufReader::new(std::fs::File::open(path)?))
}

/// Writes a 1- or 3-channel image in `[0, 1]` as an 8-bit PNG.
pub fn save_png(path: &Path, img: &Image) -> Result<()> {
    let to8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let (w, h) = (img.width as u32, img.height as u32);
    match img.channels {
        1 => {
            let buf = image::GrayImage::from_fn(w, h, |x, y| image::Luma([to8(img.get(0, y as usize, x as usize))]));
            buf.save(path)?;
        }
        3 => {
            let buf = image::RgbImage::from_fn(w, h, |x, y| {
                image::Rgb(std::array::from_fn(|c| to8(img.get(c, y as usize, x as usize))))
            });
            buf.save(path)?;
        }
        c => return invalid(format!("cannot save a {c}-channel image as PNG")),
    }
    Ok(())
}

pub fn load_png(path: &Path) -> Result<Image> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Image::new(3, h, w);
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            out.set(c, y as usize, x as usize, p[c] as f64 / 255.0);
        }
    }
    Ok(out)
}

/// Writes `image.png`, `mask.png` and `depth.raw` into `dir`.
pub fn dump_warp(dir: &Path, warp: &WarpResult) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    save_png(&dir.join("image.png"), &warp.image)?;
    save_png(&dir.join("mask.png"), &warp.mask)?;
    let mut f = BufWriter::new(std::fs::File::create(dir.join("depth.raw"))?);
    write_depth_raw(&mut f, &warp.depth)?;
    f.flush()?;
    Ok(())
}

fn check_metric_inputs(a: &Image, b: &Image) -> Result<()> {
    a.ensure_same_shape(b, "metric input")?;
    if a.data.iter().chain(&b.data).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("metric input".into()));
    }
    Ok(())
}

/// `10·log10(1/MSE)` for images in `[0, 1]`; identical images give `+∞`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    check_metric_inputs(a, b)?;
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering with the normalized Gaussian window.
fn filter_valid(x: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for xx in 0..ow {
            tmp[y * ow + xx] = (0..n).map(|i| k[i] * x[y * w + xx + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for xx in 0..ow {
            out[y * ow + xx] = (0..n).map(|i| k[i] * tmp[(y + i) * ow + xx]).sum();
        }
    }
    out
}

/// Mean SSIM over channels and valid window positions (11×11 Gaussian window,
/// σ = 1.5, `C1 = 0.01²`, `C2 = 0.03²`, dynamic range 1).
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_metric_inputs(a, b)?;
    let (h, w) = (a.height, a.width);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return invalid(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels"));
    }
    let k = gaussian_window();
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..a.channels {
        let x = a.plane(c);
        let y = b.plane(c);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
        let mx = filter_valid(x, h, w, &k);
        let my = filter_valid(y, h, w, &k);
        let sxx = filter_valid(&xx, h, w, &k);
        let syy = filter_valid(&yy, h, w, &k);
        let sxy = filter_valid(&xy, h, w, &k);
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            total += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use rand::Rng as _;

    fn rand_image(seed: u64, c: usize, h: usize, w: usize) -> Image {
        let mut rng = rng_for(seed, "io-test");
        Image::from_vec(c, h, w, (0..c * h * w).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
    }

    fn rand_scene(seed: u64, n: usize) -> GaussianScene {
        let mut rng = rng_for(seed, "io-scene");
        GaussianScene::new(
            (0..n)
                .map(|_| {
                    let mut q: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
                    let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
                    q.iter_mut().for_each(|v| *v /= qn);
                    Gaussian {
                        position: Vec3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)),
                        scale: Vec3::new(rng.gen_range(0.01..1.0), rng.gen_range(0.01..1.0), rng.gen_range(0.01..1.0)),
                        rotation: q,
                        opacity: rng.gen_range(0.01..0.99),
                        color: [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)],
                    }
                })
                .collect(),
        )
    }

    #[test]
    fn ply_round_trip() {
        let scene = rand_scene(1, 50);
        let mut buf = Vec::new();
        write_ply(&mut buf, &scene).unwrap();
        let back = read_ply(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 50);
        for (a, b) in scene.gaussians.iter().zip(&back.gaussians) {
            let (x, y) = (a.to_channels(), b.to_channels());
            for i in 0..x.len() {
                assert!((x[i] - y[i]).abs() <= 1e-6 * (1.0 + x[i].abs()), "channel {i}: {} vs {}", x[i], y[i]);
            }
        }
    }

    #[test]
    fn ply_header_grammar_and_conventions() {
        let g = Gaussian::isotropic(Vec3::new(1.0, 2.0, 3.0), 1.0, 0.5, [0.5; 3]);
        let mut buf = Vec::new();
        write_ply(&mut buf, &GaussianScene::new(vec![g])).unwrap();
        let header = ply_header(1);
        assert!(buf.starts_with(header.as_bytes()));
        assert_eq!(buf.len(), header.len() + 68);
        let rec = ply_record(&g);
        assert_eq!(rec[9], 0.0);
        assert_eq!(&rec[6..9], &[0.0, 0.0, 0.0]);
        assert_eq!(&rec[10..13], &[0.0, 0.0, 0.0]);
        assert_eq!(&rec[3..6], &[0.0, 0.0, 0.0]);
        let mut bad = buf.clone();
        bad[0] = b'x';
        assert!(matches!(read_ply(bad.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn raw_formats_round_trip() {
        let frames = vec![rand_image(2, 3, 4, 5), rand_image(3, 3, 4, 5)];
        let mut buf = Vec::new();
        write_frames_raw(&mut buf, &frames).unwrap();
        assert_eq!(buf.len(), 16 + 2 * 60 * 4);
        let back = read_frames_raw(buf.as_slice()).unwrap();
        for (a, b) in frames.iter().zip(&back) {
            for (x, y) in a.data.iter().zip(&b.data) {
                assert_eq!(*y, *x as f32 as f64);
            }
        }
        let d = rand_image(4, 1, 6, 7);
        let mut buf = Vec::new();
        write_depth_raw(&mut buf, &d).unwrap();
        assert_eq!(&buf[..8], &[6, 0, 0, 0, 7, 0, 0, 0]);
        assert_eq!(read_depth_raw(buf.as_slice()).unwrap().height, 6);
    }

    #[test]
    fn psnr_examples() {
        let a = rand_image(5, 3, 8, 8);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let mut b = a.clone();
        for (i, v) in b.data.iter_mut().enumerate() {
            *v += if i % 2 == 0 { 0.1 } else { -0.1 };
        }
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    }

    /// Direct per-window SSIM without separable filtering.
    fn ssim_oracle(a: &Image, b: &Image) -> f64 {
        let r = 5i64;
        let mut wts = [[0.0; 11]; 11];
        let mut s = 0.0;
        for i in 0..11 {
            for j in 0..11 {
                let d2 = ((i as i64 - r).pow(2) + (j as i64 - r).pow(2)) as f64;
                wts[i][j] = (-d2 / (2.0 * 1.5 * 1.5)).exp();
                s += wts[i][j];
            }
        }
        let mut total = 0.0;
        let mut n = 0;
        for c in 0..a.channels {
            for y in 0..=a.height - 11 {
                for x in 0..=a.width - 11 {
                    let (mut ux, mut uy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for i in 0..11 {
                        for j in 0..11 {
                            let w = wts[i][j] / s;
                            let p = a.get(c, y + i, x + j);
                            let q = b.get(c, y + i, x + j);
                            ux += w * p;
                            uy += w * q;
                            sxx += w * p * p;
                            syy += w * q * q;
                            sxy += w * p * q;
                        }
                    }
                    let (c1, c2) = (1e-4, 9e-4);
                    let num = (2.0 * ux * uy + c1) * (2.0 * (sxy - ux * uy) + c2);
                    let den = (ux * ux + uy * uy + c1) * (sxx - ux * ux + syy - uy * uy + c2);
                    total += num / den;
                    n += 1;
                }
            }
        }
        total / n as f64
    }

    #[test]
    fn ssim_matches_oracle() {
        let a = rand_image(6, 3, 16, 19);
        let b = rand_image(7, 3, 16, 19);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((ssim(&a, &b).unwrap() - ssim_oracle(&a, &b)).abs() < 1e-9);
        let mut blur = a.clone();
        blur.data.iter_mut().for_each(|v| *v = 0.5 * *v + 0.25);
        assert!((ssim(&a, &blur).unwrap() - ssim_oracle(&a, &blur)).abs() < 1e-9);
        assert!(ssim(&rand_image(8, 3, 8, 8), &rand_image(9, 3, 8, 8)).is_err());
    }

    #[test]
    fn psnr_matches_scalar_oracle() {
        let a = rand_image(10, 3, 9, 7);
        let b = rand_image(11, 3, 9, 7);
        let mut sum = 0.0;
        for c in 0..3 {
            for y in 0..9 {
                for x in 0..7 {
                    sum += (a.get(c, y, x) - b.get(c, y, x)).powi(2);
                }
            }
        }
        let oracle = 10.0 * (1.0 / (sum / 189.0)).log10();
        assert!((psnr(&a, &b).unwrap() - oracle).abs() < 1e-9);
    }

    #[test]
    fn png_and_warp_dump() {
        let dir = tempfile::tempdir().unwrap();
        let img = rand_image(12, 3, 5, 6);
        save_png(&dir.path().join("a.png"), &img).unwrap();
        let back = load_png(&dir.path().join("a.png")).unwrap();
        for (x, y) in img.data.iter().zip(&back.data) {
            assert!((x - y).abs() <= 0.5 / 255.0 + 1e-12);
        }
        let warp = WarpResult {
            image: img.clone(),
            mask: Image::filled(1, 5, 6, 1.0),
            depth: Image::filled(1, 5, 6, f64::INFINITY),
        };
        dump_warp(&dir.path().join("w"), &warp).unwrap();
        let d = read_depth_raw(std::fs::File::open(dir.path().join("w/depth.raw")).unwrap()).unwrap();
        assert!(d.data.iter().all(|v| v.is_infinite()));
    }
}
