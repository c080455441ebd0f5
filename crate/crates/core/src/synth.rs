//! Synthetic scenes with known geometry: DSMs, affine RPC cameras, rendered
//! images and exact per-pixel altitudes. Every pipeline stage is checked
//! against these.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{LocalFrame, METERS_PER_DEGREE};
use crate::raster::{GeoTransform, Raster};
use crate::rpc::{GroundPoint, LocalizeOptions, PixelPoint, RpcModel};

/// Axis-aligned building: center `(x, y)` in scene meters, footprint `w × l`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub l: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Terrain {
    Flat { h0: f64 },
    Ramp { h0: f64, gx: f64, gy: f64 },
    Boxes { ground: f64, boxes: Vec<BoxSpec> },
}

fn default_gsd() -> f64 {
    0.5
}

fn default_altitude() -> f64 {
    600.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSpec {
    /// Horizontal look direction, degrees clockwise from north.
    pub azimuth_deg: f64,
    pub off_nadir_deg: f64,
    /// Orbit altitude; kept for bookkeeping, affine cameras ignore it.
    #[serde(default = "default_altitude")]
    pub altitude_km: f64,
    /// Ground sample distance, meters per pixel.
    #[serde(default = "default_gsd")]
    pub gsd: f64,
    /// In-plane rotation of the image axes, degrees.
    #[serde(default)]
    pub rotation_deg: f64,
    /// Magnitude of random cubic terms added to the polynomials.
    #[serde(default)]
    pub cubic: f64,
    #[serde(default)]
    pub cubic_seed: u64,
}

impl ViewSpec {
    pub fn new(azimuth_deg: f64, off_nadir_deg: f64) -> Self {
        ViewSpec {
            azimuth_deg,
            off_nadir_deg,
            altitude_km: default_altitude(),
            gsd: default_gsd(),
            rotation_deg: 0.0,
            cubic: 0.0,
            cubic_seed: 0,
        }
    }
}

fn default_center() -> [f64; 2] {
    [-95.93, 41.25]
}

fn default_blur() -> f64 {
    1.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    /// East × north size in meters.
    pub extent: [f64; 2],
    pub cell: f64,
    pub terrain: Terrain,
    pub texture_seed: u64,
    /// Fraction of texture samples redrawn independently per camera.
    #[serde(default)]
    pub season_decorrelation: f64,
    pub cameras: Vec<ViewSpec>,
    /// Scene center (lon, lat) in degrees.
    #[serde(default = "default_center")]
    pub center: [f64; 2],
    /// Texture blur, in cells.
    #[serde(default = "default_blur")]
    pub texture_blur: f64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.cell > 0.0) || !(self.extent[0] > 0.0) || !(self.extent[1] > 0.0) {
            return Err(Error::InvalidInput("scene cell and extent must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.season_decorrelation) {
            return Err(Error::InvalidInput("season_decorrelation outside [0,1]".into()));
        }
        for v in &self.cameras {
            if !(v.off_nadir_deg.abs() < 45.0) || !(v.gsd > 0.0) {
                return Err(Error::InvalidInput(format!("bad view {v:?}")));
            }
        }
        Ok(())
    }

    /// The standard test scene: 512×512 cells of 0.5 m, boxes 5–30 m tall,
    /// two cameras at 10° and 20° off-nadir looking from opposite sides.
    pub fn box_scene(decorrelation: f64) -> Self {
        let boxes = vec![
            BoxSpec { x: -70.0, y: 60.0, w: 40.0, l: 30.0, height: 12.0 },
            BoxSpec { x: 50.0, y: 70.0, w: 30.0, l: 45.0, height: 30.0 },
            BoxSpec { x: -60.0, y: -55.0, w: 25.0, l: 25.0, height: 5.0 },
            BoxSpec { x: 40.0, y: -50.0, w: 50.0, l: 20.0, height: 20.0 },
            BoxSpec { x: 0.0, y: 5.0, w: 20.0, l: 20.0, height: 8.0 },
        ];
        SceneSpec {
            extent: [256.0, 256.0],
            cell: 0.5,
            terrain: Terrain::Boxes { ground: 300.0, boxes },
            texture_seed: 0,
            season_decorrelation: decorrelation,
            cameras: vec![ViewSpec::new(100.0, 10.0), ViewSpec::new(255.0, 20.0)],
            center: default_center(),
            texture_blur: default_blur(),
        }
    }

    pub fn flat_scene(h0: f64) -> Self {
        SceneSpec {
            terrain: Terrain::Flat { h0 },
            ..SceneSpec::box_scene(0.0)
        }
    }

    pub fn scene_center(&self) -> GroundPoint {
        let h = match &self.terrain {
            Terrain::Flat { h0 } | Terrain::Ramp { h0, .. } => *h0,
            Terrain::Boxes { ground, .. } => *ground,
        };
        GroundPoint::new(self.center[0], self.center[1], h)
    }

    pub fn frame(&self) -> LocalFrame {
        LocalFrame::new(self.center[0], self.center[1])
    }
}

/// A generated scene: DSM on a north-up grid centered on the frame origin and
/// one texture per camera on the same grid.
#[derive(Debug, Clone)]
pub struct Scene {
    pub spec: SceneSpec,
    pub frame: LocalFrame,
    pub dsm: Raster,
    pub textures: Vec<Raster>,
}

/// Rendered image plus the exact altitude hit by each pixel's ray.
#[derive(Debug, Clone)]
pub struct Rendered {
    pub image: Raster,
    pub altitude: Raster,
}

pub fn make_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let w = (spec.extent[0] / spec.cell).round() as u32;
    let h = (spec.extent[1] / spec.cell).round() as u32;
    let x0 = -(w as f64) * spec.cell / 2.0;
    let y0 = h as f64 * spec.cell / 2.0;
    let gt = GeoTransform::north_up(x0, y0, spec.cell);
    let frame = spec.frame();
    let dsm = Raster::from_fn(w, h, |c, r| {
        let (x, y) = gt.pixel_center(c, r);
        terrain_height(&spec.terrain, x, y) as f32
    })
    .with_geotransform(gt)?
    .with_crs(frame.crs_tag());

    let mut rng = ChaCha8Rng::seed_from_u64(spec.texture_seed);
    let n = (w * h) as usize;
    let base: Vec<f32> = (0..n).map(|_| rng.gen::<f32>()).collect();
    let textures = (0..spec.cameras.len())
        .map(|i| {
            let mut cam_rng = ChaCha8Rng::seed_from_u64(spec.texture_seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(i as u64 + 1)));
            let noise: Vec<f32> = base
                .iter()
                .map(|&b| {
                    let fresh = cam_rng.gen::<f32>();
                    if cam_rng.gen::<f64>() < spec.season_decorrelation { fresh } else { b }
                })
                .collect();
            band_limit(noise, w as usize, h as usize, spec.texture_blur)
        })
        .map(|data| {
            Raster::new(w, h, 1, data)
                .expect("consistent size")
                .with_geotransform(gt)
                .expect("valid geotransform")
        })
        .collect();
    Ok(Scene { spec: spec.clone(), frame, dsm, textures })
}

fn terrain_height(t: &Terrain, x: f64, y: f64) -> f64 {
    match t {
        Terrain::Flat { h0 } => *h0,
        Terrain::Ramp { h0, gx, gy } => h0 + gx * x + gy * y,
        Terrain::Boxes { ground, boxes } => {
            ground
                + boxes
                    .iter()
                    .filter(|b| (x - b.x).abs() < b.w / 2.0 && (y - b.y).abs() < b.l / 2.0)
                    .map(|b| b.height)
                    .fold(0.0, f64::max)
        }
    }
}

/// Gaussian blur of white noise, rescaled to mean 128 and std 40.
fn band_limit(noise: Vec<f32>, w: usize, h: usize, sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let ksum: f64 = kernel.iter().sum();
    let blur = |src: &[f64], stride: usize, len: usize, count: usize, step: usize| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for line in 0..count {
            for i in 0..len {
                let mut acc = 0.0;
                for (k, kv) in kernel.iter().enumerate() {
                    let j = (i as isize + k as isize - radius).clamp(0, len as isize - 1) as usize;
                    acc += kv * src[line * step + j * stride];
                }
                out[line * step + i * stride] = acc / ksum;
            }
        }
        out
    };
    let src: Vec<f64> = noise.into_iter().map(f64::from).collect();
    let horiz = blur(&src, 1, w, h, w);
    let both = blur(&horiz, w, h, w, 1);
    let n = both.len() as f64;
    let mean = both.iter().sum::<f64>() / n;
    let std = (both.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-12);
    both.iter()
        .map(|v| (128.0 + 40.0 * (v - mean) / std).clamp(0.0, 255.0) as f32)
        .collect()
}

/// Affine pushbroom-style camera as an RPC: linear numerators, unit
/// denominators. A point raised by `dh` shifts by `dh·tan(off_nadir)` along
/// the look azimuth before the image rotation and `1/gsd` scaling.
pub fn make_rpc(view: &ViewSpec, center: GroundPoint, image_w: u32, image_h: u32) -> RpcModel {
    let frame = LocalFrame::new(center.lon, center.lat);
    let kx = METERS_PER_DEGREE * frame.lat0.to_radians().cos();
    let ky = METERS_PER_DEGREE;
    let tan = view.off_nadir_deg.to_radians().tan();
    let (te, tn) = (tan * view.azimuth_deg.to_radians().sin(), tan * view.azimuth_deg.to_radians().cos());
    let (s, c) = view.rotation_deg.to_radians().sin_cos();

    let lon_scale = (image_w as f64 * view.gsd / 2.0) / kx;
    let lat_scale = (image_h as f64 * view.gsd / 2.0) / ky;
    let height_scale = 100.0;
    let samp_scale = image_w as f64 / 2.0;
    let line_scale = image_h as f64 / 2.0;

    // pixel offsets per unit normalized coordinate
    let (de_dl, dn_dp) = (lon_scale * kx / view.gsd, lat_scale * ky / view.gsd);
    let (de_dh, dn_dh) = (height_scale * te / view.gsd, height_scale * tn / view.gsd);

    let mut samp_num = [0.0; 20];
    let mut line_num = [0.0; 20];
    let mut den = [0.0; 20];
    den[0] = 1.0;
    // col = c·e + s·n, row = s·e − c·n
    samp_num[1] = c * de_dl / samp_scale;
    samp_num[2] = s * dn_dp / samp_scale;
    samp_num[3] = (c * de_dh + s * dn_dh) / samp_scale;
    line_num[1] = s * de_dl / line_scale;
    line_num[2] = -c * dn_dp / line_scale;
    line_num[3] = (s * de_dh - c * dn_dh) / line_scale;

    let mut samp_den = den;
    let mut line_den = den;
    if view.cubic != 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(view.cubic_seed);
        for i in 4..20 {
            samp_num[i] = view.cubic * rng.gen_range(-1.0..1.0);
            line_num[i] = view.cubic * rng.gen_range(-1.0..1.0);
            samp_den[i] = view.cubic * rng.gen_range(-1.0..1.0);
            line_den[i] = view.cubic * rng.gen_range(-1.0..1.0);
        }
    }
    RpcModel {
        line_off: image_h as f64 / 2.0,
        samp_off: image_w as f64 / 2.0,
        line_scale,
        samp_scale,
        lat_off: center.lat,
        lon_off: center.lon,
        height_off: center.h,
        lat_scale,
        lon_scale,
        height_scale,
        line_num,
        line_den,
        samp_num,
        samp_den,
    }
}

impl Scene {
    /// Surface altitude at scene coordinates. Boxes and flat scenes use the
    /// containing cell, ramps interpolate bilinearly.
    pub fn surface(&self, x: f64, y: f64) -> Option<f64> {
        let gt = self.dsm.geotransform().expect("scene dsm is georeferenced");
        let (c, r) = gt.invert(x, y);
        let (w, h) = self.dsm.dims();
        if c < 0.0 || r < 0.0 || c >= w as f64 || r >= h as f64 {
            return None;
        }
        match self.spec.terrain {
            Terrain::Ramp { .. } => Some(terrain_height(&self.spec.terrain, x, y)),
            _ => Some(self.dsm.get(c as usize, r as usize, 0) as f64),
        }
    }

    pub fn height_range(&self) -> (f64, f64) {
        let (lo, hi) = self.dsm.valid_range(0).expect("scene dsm is non-empty");
        (lo as f64, hi as f64)
    }

    /// Median DSM altitude.
    pub fn median_height(&self) -> f64 {
        let mut v: Vec<f32> = self.dsm.data().iter().copied().filter(|v| !v.is_nan()).collect();
        v.sort_by(f32::total_cmp);
        v[v.len() / 2] as f64
    }

    /// Camera for view `i`, sized to cover the scene at ground level.
    pub fn camera(&self, i: usize) -> RpcModel {
        let view = &self.spec.cameras[i];
        let w = (self.spec.extent[0] / view.gsd).round() as u32;
        let h = (self.spec.extent[1] / view.gsd).round() as u32;
        make_rpc(view, self.spec.scene_center(), w, h)
    }

    pub fn image_size(&self, i: usize) -> (u32, u32) {
        let view = &self.spec.cameras[i];
        (
            (self.spec.extent[0] / view.gsd).round() as u32,
            (self.spec.extent[1] / view.gsd).round() as u32,
        )
    }

    /// Ray-marches every pixel of `cam` against the surface, stepping down in
    /// altitude by half a cell, and samples texture `texture` at the hit.
    pub fn render(&self, cam: &RpcModel, texture: usize, out_w: u32, out_h: u32) -> Result<Rendered> {
        let (lo, hi) = self.height_range();
        let (top, bottom) = (hi + 1.0, lo - 1.0);
        let step = self.spec.cell / 2.0;
        let tex = &self.textures[texture];
        let tex_gt = *tex.geotransform().expect("texture is georeferenced");
        let w = out_w as usize;
        let mut image = vec![f32::NAN; w * out_h as usize];
        let mut altitude = vec![f32::NAN; w * out_h as usize];
        let opts = LocalizeOptions { tol_px: 1e-6, ..Default::default() };

        image
            .par_chunks_mut(w.max(1))
            .zip(altitude.par_chunks_mut(w.max(1)))
            .enumerate()
            .try_for_each(|(row, (img_row, alt_row))| -> Result<()> {
                for col in 0..w {
                    let p = PixelPoint::new(col as f64, row as f64);
                    let g_top = cam.localize_with(p, top, None, &opts)?.ground;
                    let g_bot = cam.localize_with(p, bottom, Some((g_top.lon, g_top.lat)), &opts)?.ground;
                    let (xt, yt) = self.frame.to_local(g_top.lon, g_top.lat);
                    let (xb, yb) = self.frame.to_local(g_bot.lon, g_bot.lat);
                    let at = |h: f64| {
                        let t = (top - h) / (top - bottom);
                        (xt + t * (xb - xt), yt + t * (yb - yt))
                    };
                    let below = |h: f64| {
                        let (x, y) = at(h);
                        self.surface(x, y).map(|z| h <= z)
                    };
                    let Some(hit) = march(top, bottom, step, &below, &|h| {
                        let (x, y) = at(h);
                        self.surface(x, y)
                    }) else {
                        continue;
                    };
                    let g = cam
                        .localize_with(p, hit, Some((g_top.lon, g_top.lat)), &opts)?
                        .ground;
                    let (x, y) = self.frame.to_local(g.lon, g.lat);
                    let (tc, tr) = tex_gt.invert(x, y);
                    let mut v = [0.0f32];
                    if tex.sample_bilinear(tc - 0.5, tr - 0.5, &mut v) {
                        img_row[col] = v[0];
                        alt_row[col] = hit as f32;
                    }
                }
                Ok(())
            })?;
        Ok(Rendered {
            image: Raster::new(out_w, out_h, 1, image)?,
            altitude: Raster::new(out_w, out_h, 1, altitude)?,
        })
    }

    /// Renders view `i` at its default size with its own texture.
    pub fn render_view(&self, i: usize) -> Result<Rendered> {
        let (w, h) = self.image_size(i);
        self.render(&self.camera(i), i, w, h)
    }
}

/// First altitude (marching down from `top`) at which the ray is at or below
/// the surface. Flat hits snap to the surface altitude; wall hits are refined
/// by bisection.
fn march(
    top: f64,
    bottom: f64,
    step: f64,
    below: &dyn Fn(f64) -> Option<bool>,
    surface: &dyn Fn(f64) -> Option<f64>,
) -> Option<f64> {
    let n = ((top - bottom) / step).ceil() as usize;
    let mut prev = top;
    for k in 1..=n {
        let h = (top - k as f64 * step).max(bottom);
        if below(h) == Some(true) {
            if let Some(z) = surface(h) {
                if z <= prev && z >= h && surface(z) == Some(z) {
                    return Some(z);
                }
            }
            let (mut hi, mut lo) = (prev, h);
            for _ in 0..40 {
                let mid = 0.5 * (hi + lo);
                if below(mid) == Some(true) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Some(lo);
        }
        prev = h;
    }
    None
}

/// Exact correspondences between two rendered views: surface points seen by
/// both cameras, with pixel positions in each image's original frame.
pub fn visible_correspondences(
    scene: &Scene,
    cams: (&RpcModel, &RpcModel),
    renders: (&Rendered, &Rendered),
    count: usize,
    seed: u64,
) -> Result<Vec<(PixelPoint, PixelPoint)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = scene.dsm.dims();
    let gt = *scene.dsm.geotransform().expect("georeferenced");
    let visible = |cam: &RpcModel, r: &Rendered, g: &GroundPoint| -> Result<Option<PixelPoint>> {
        let p = cam.project(g)?;
        let seen = r.altitude.sample_nearest(p.col, p.row, 0);
        Ok(seen.filter(|a| (*a as f64 - g.h).abs() < 0.05).map(|_| p))
    };
    let mut out = Vec::with_capacity(count);
    let mut tries = 0;
    while out.len() < count && tries < count * 200 {
        tries += 1;
        let (c, r) = (rng.gen_range(2..w - 2), rng.gen_range(2..h - 2));
        let z = scene.dsm.get(c, r, 0) as f64;
        // keep away from height discontinuities
        let flat = (0..3).all(|dr| (0..3).all(|dc| scene.dsm.get(c + dc - 1, r + dr - 1, 0) as f64 == z));
        if !flat {
            continue;
        }
        let (x, y) = gt.pixel_center(c, r);
        let g = scene.frame.ground(x, y, z);
        if let (Some(a), Some(b)) = (visible(cams.0, renders.0, &g)?, visible(cams.1, renders.1, &g)?) {
            out.push((a, b));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_box_spec() -> SceneSpec {
        SceneSpec {
            extent: [64.0, 64.0],
            cell: 0.5,
            terrain: Terrain::Boxes {
                ground: 100.0,
                boxes: vec![BoxSpec { x: 0.0, y: 0.0, w: 16.0, l: 16.0, height: 10.0 }],
            },
            ..SceneSpec::box_scene(0.0)
        }
    }

    #[test]
    fn flat_and_box_dsm_values() {
        let s = make_scene(&SceneSpec { extent: [32.0, 32.0], ..SceneSpec::flat_scene(100.0) }).unwrap();
        assert!(s.dsm.data().iter().all(|&v| v == 100.0));
        let s = make_scene(&small_box_spec()).unwrap();
        assert_eq!(s.dsm.get(64, 64, 0), 110.0);
        assert_eq!(s.dsm.get(2, 2, 0), 100.0);
    }

    #[test]
    fn decorrelation_zero_shares_texture() {
        let s = make_scene(&small_box_spec()).unwrap();
        assert_eq!(s.textures[0].data(), s.textures[1].data());
        let mut spec = small_box_spec();
        spec.season_decorrelation = 1.0;
        let s = make_scene(&spec).unwrap();
        assert_ne!(s.textures[0].data(), s.textures[1].data());
    }

    #[test]
    fn nadir_camera_ignores_height() {
        let cam = make_rpc(&ViewSpec::new(0.0, 0.0), GroundPoint::new(1.0, 45.0, 0.0), 100, 100);
        assert!(cam.samp_num[3].abs() < 1e-15 && cam.line_num[3].abs() < 1e-15);
    }

    #[test]
    fn off_nadir_height_derivative_closed_form() {
        let view = ViewSpec::new(90.0, 15.0);
        let center = GroundPoint::new(-95.9, 41.2, 300.0);
        let cam = make_rpc(&view, center, 400, 400);
        let dcol_dh = cam.samp_scale * cam.samp_num[3] / cam.height_scale;
        let expected = 15f64.to_radians().tan() / view.gsd;
        assert!((dcol_dh - expected).abs() < 1e-9);
        // and numerically through project
        let a = cam.project(&GroundPoint { h: 310.0, ..center }).unwrap();
        let b = cam.project(&center).unwrap();
        assert!(((a.col - b.col) / 10.0 - expected).abs() < 1e-9);
    }

    #[test]
    fn linear_camera_inverts_in_one_step() {
        let cam = make_rpc(&ViewSpec::new(30.0, 20.0), GroundPoint::new(2.0, 48.0, 50.0), 512, 512);
        let g = GroundPoint::new(2.0003, 47.9998, 75.0);
        let p = cam.project(&g).unwrap();
        let l = cam.localize_with(p, g.h, None, &LocalizeOptions::default()).unwrap();
        assert!(l.iterations <= 2);
        assert!((l.ground.lon - g.lon).abs() < 1e-10 && (l.ground.lat - g.lat).abs() < 1e-10);
    }

    #[test]
    fn flat_render_altitude_is_constant() {
        let spec = SceneSpec { extent: [32.0, 32.0], ..SceneSpec::flat_scene(100.0) };
        let s = make_scene(&spec).unwrap();
        let r = s.render_view(1).unwrap();
        let vals: Vec<f32> = r.altitude.data().iter().copied().filter(|v| !v.is_nan()).collect();
        assert!(vals.len() > 3000);
        assert!(vals.iter().all(|&v| v == 100.0));
    }

    #[test]
    fn roof_parallax_matches_closed_form() {
        let mut spec = small_box_spec();
        spec.cameras = vec![ViewSpec::new(0.0, 0.0), ViewSpec::new(90.0, 20.0)];
        let s = make_scene(&spec).unwrap();
        let nadir = s.render_view(0).unwrap();
        let oblique = s.render_view(1).unwrap();
        // roof footprint columns along the center row in each view
        let roof_cols = |r: &Rendered| -> Vec<usize> {
            let row = r.altitude.height() as usize / 2;
            (0..r.altitude.width() as usize)
                .filter(|&c| r.altitude.get(c, row, 0) == 110.0)
                .collect()
        };
        let (a, b) = (roof_cols(&nadir), roof_cols(&oblique));
        let shift = (b[0] as f64 - a[0] as f64) * 0.5;
        let expected = 10.0 * 20f64.to_radians().tan();
        assert!((shift - expected).abs() <= spec.cell, "{shift} vs {expected}");
    }

    #[test]
    fn sideband_altitude_matches_dsm_at_ground_point() {
        let s = make_scene(&small_box_spec()).unwrap();
        let cam = s.camera(1);
        let r = s.render_view(1).unwrap();
        let (w, h) = r.altitude.dims();
        let mut checked = 0;
        for row in (0..h).step_by(3) {
            for col in (0..w).step_by(3) {
                let a = r.altitude.get(col, row, 0);
                if a.is_nan() {
                    continue;
                }
                let g = cam.localize(PixelPoint::new(col as f64, row as f64), a as f64).unwrap();
                let (x, y) = s.frame.to_local(g.lon, g.lat);
                let z = s.surface(x, y).unwrap();
                // wall hits sit between ground and roof; allow the march tolerance there
                if (z - a as f64).abs() > s.spec.cell / 20.0 {
                    let near_wall = [(-0.3, 0.0), (0.3, 0.0), (0.0, -0.3), (0.0, 0.3)].iter().any(|(dx, dy)| {
                        s.surface(x + dx, y + dy).map_or(false, |zz| (zz - z).abs() > 1.0)
                    });
                    assert!(near_wall, "({col},{row}) alt {a} vs dsm {z}");
                }
                checked += 1;
            }
        }
        assert!(checked > 1000);
    }

    #[test]
    fn rendering_is_deterministic() {
        let s = make_scene(&small_box_spec()).unwrap();
        let a = s.render_view(0).unwrap();
        let b = s.render_view(0).unwrap();
        assert_eq!(a.image.data().len(), b.image.data().len());
        assert!(a.image.data().iter().zip(b.image.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
