//! Ground-truth disparities in rectified coordinates from a reference DSM.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::MapCrs;
use crate::raster::Raster;
use crate::rectify::RectGeometry;
use crate::rpc::{LocalizeOptions, PixelPoint, RpcModel};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GtConfig {
    /// Holes up to this many pixels from a valid pixel are filled.
    pub fill_radius: usize,
    /// Altitude step between neighbors that counts as a discontinuity.
    pub edge_jump: f64,
    /// Pixels within this distance of a discontinuity get zero confidence.
    pub edge_radius: usize,
}

impl Default for GtConfig {
    fn default() -> Self {
        GtConfig { fill_radius: 2, edge_jump: 1.0, edge_radius: 2 }
    }
}

/// Surface altitude seen by each pixel of a `frame_w × frame_h` image.
///
/// Every DSM cell center goes to its nearest pixel and the highest altitude
/// wins. Pixels without a direct hit take the highest altitude among cells
/// landing in their 3×3 neighborhood; what is still empty is filled from the
/// nearest valid pixel within `fill_radius`.
pub fn project_dsm(dsm: &Raster, rpc: &RpcModel, frame_w: u32, frame_h: u32, cfg: &GtConfig) -> Result<Raster> {
    let gt = *dsm.geotransform().ok_or(Error::NoGeotransform)?;
    let crs = MapCrs::from_tag(dsm.crs())?;
    let (dw, dh) = dsm.dims();
    let (w, h) = (frame_w as usize, frame_h as usize);

    let hits: Vec<(usize, usize, f32)> = (0..dh)
        .into_par_iter()
        .flat_map_iter(|r| {
            (0..dw).filter_map(move |c| {
                let z = dsm.get(c, r, 0);
                if z.is_nan() {
                    return None;
                }
                let (x, y) = gt.pixel_center(c, r);
                let (lon, lat) = crs.to_geo(x, y);
                let p = rpc.project(&crate::rpc::GroundPoint::new(lon, lat, z as f64)).ok()?;
                let (pc, pr) = (p.col.round(), p.row.round());
                // keep one pixel of margin for the splat
                if pc < -1.0 || pr < -1.0 || pc > w as f64 || pr > h as f64 {
                    return None;
                }
                Some(((pc + 1.0) as usize, (pr + 1.0) as usize, z))
            })
        })
        .collect();

    // padded by one pixel on each side
    let pw = w + 2;
    let mut direct = vec![f32::NAN; pw * (h + 2)];
    for &(c, r, z) in &hits {
        let v = &mut direct[r * pw + c];
        if v.is_nan() || z > *v {
            *v = z;
        }
    }
    let mut out = vec![f32::NAN; w * h];
    let mut any = false;
    for r in 0..h {
        for c in 0..w {
            let d = direct[(r + 1) * pw + c + 1];
            let v = if d.is_nan() {
                let mut m = f32::NAN;
                for rr in r..r + 3 {
                    for cc in c..c + 3 {
                        let z = direct[rr * pw + cc];
                        if !z.is_nan() && (m.is_nan() || z > m) {
                            m = z;
                        }
                    }
                }
                m
            } else {
                d
            };
            any |= !v.is_nan();
            out[r * w + c] = v;
        }
    }
    if !any {
        return Err(Error::EmptyOverlap);
    }
    let out = fill_holes(&out, w, h, cfg.fill_radius);
    Raster::new(frame_w, frame_h, 1, out)
}

/// Nearest valid value within `radius` (Euclidean, ties in scan order).
pub(crate) fn fill_holes(src: &[f32], w: usize, h: usize, radius: usize) -> Vec<f32> {
    if radius == 0 {
        return src.to_vec();
    }
    let rad = radius as isize;
    let mut offsets: Vec<(isize, isize)> = (-rad..=rad)
        .flat_map(|dr| (-rad..=rad).map(move |dc| (dr, dc)))
        .filter(|&(dr, dc)| (dr, dc) != (0, 0) && dr * dr + dc * dc <= rad * rad)
        .collect();
    offsets.sort_by_key(|&(dr, dc)| (dr * dr + dc * dc, dr, dc));
    (0..w * h)
        .into_par_iter()
        .map(|i| {
            if !src[i].is_nan() {
                return src[i];
            }
            let (r, c) = ((i / w) as isize, (i % w) as isize);
            offsets
                .iter()
                .map(|&(dr, dc)| (r + dr, c + dc))
                .filter(|&(rr, cc)| rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w)
                .map(|(rr, cc)| src[rr as usize * w + cc as usize])
                .find(|v| !v.is_nan())
                .unwrap_or(f32::NAN)
        })
        .collect()
}

/// 1 where a pixel is farther than `radius` from an altitude jump of more
/// than `jump` between 4-neighbors, else 0; nodata stays nodata.
pub fn discontinuity_confidence(alt: &Raster, jump: f64, radius: usize) -> Raster {
    let (w, h) = alt.dims();
    let mut edge = vec![false; w * h];
    for r in 0..h {
        for c in 0..w {
            let z = alt.get(c, r, 0);
            if z.is_nan() {
                continue;
            }
            let mut e = false;
            if c + 1 < w {
                let n = alt.get(c + 1, r, 0);
                e |= n.is_nan() || (n - z).abs() as f64 > jump;
            }
            if r + 1 < h {
                let n = alt.get(c, r + 1, 0);
                e |= n.is_nan() || (n - z).abs() as f64 > jump;
            }
            if e {
                edge[r * w + c] = true;
                if c + 1 < w {
                    edge[r * w + c + 1] = true;
                }
                if r + 1 < h {
                    edge[(r + 1) * w + c] = true;
                }
            }
        }
    }
    let rad = radius as isize;
    Raster::from_fn(w as u32, h as u32, |c, r| {
        if alt.get(c, r, 0).is_nan() {
            return f32::NAN;
        }
        for dr in -rad..=rad {
            for dc in -rad..=rad {
                let (rr, cc) = (r as isize + dr, c as isize + dc);
                if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w && edge[rr as usize * w + cc as usize] {
                    return 0.0;
                }
            }
        }
        1.0
    })
}

#[derive(Debug, Clone)]
pub struct GtDisparity {
    /// `D(u, v) = u − u_R`.
    pub disparity: Raster,
    /// Rectified `v − v_R`, kept for diagnostics.
    pub vertical: Raster,
    /// 0 near altitude discontinuities, 1 elsewhere.
    pub confidence: Raster,
    /// Altitude looked up for each rectified-left pixel.
    pub altitude: Raster,
    /// Pixels whose localization did not converge.
    pub failures: usize,
}

/// `rpc_a`, `rpc_b` are in the order the images were given to the
/// rectification; `geom.swapped` decides which one is the left camera.
pub fn gt_disparity(
    geom: &RectGeometry,
    dsm: &Raster,
    rpc_a: &RpcModel,
    rpc_b: &RpcModel,
    cfg: &GtConfig,
) -> Result<GtDisparity> {
    let (cam_l, cam_r) = geom.ordered(rpc_a, rpc_b);
    let dsm_l = project_dsm(dsm, cam_l, geom.left_size.0, geom.left_size.1, cfg)?;
    let conf_l = discontinuity_confidence(&dsm_l, cfg.edge_jump, cfg.edge_radius);
    let h_l_inv = geom.h_l.inverse()?;
    let (w, h) = (geom.out_size.0 as usize, geom.out_size.1 as usize);
    let opts = LocalizeOptions { tol_px: 1e-6, ..Default::default() };

    let rows: Vec<(Vec<[f32; 4]>, usize)> = (0..h)
        .into_par_iter()
        .map(|v| {
            let mut row = vec![[f32::NAN; 4]; w];
            let mut fails = 0;
            let mut guess = None;
            let mut z = [0f32];
            for (u, px) in row.iter_mut().enumerate() {
                let Some((x, y)) = h_l_inv.apply_xy(u as f64, v as f64) else { continue };
                let alt = if dsm_l.sample_bilinear(x, y, &mut z) {
                    z[0]
                } else {
                    match dsm_l.sample_nearest(x, y, 0) {
                        Some(a) => a,
                        None => continue,
                    }
                };
                let g = match cam_l.localize_with(PixelPoint::new(x, y), alt as f64, guess, &opts) {
                    Ok(l) => l.ground,
                    Err(_) => {
                        fails += 1;
                        continue;
                    }
                };
                guess = Some((g.lon, g.lat));
                let Ok(pr) = cam_r.project(&g) else { continue };
                let Some((ur, vr)) = geom.h_r.apply_xy(pr.col, pr.row) else { continue };
                let conf = dsm_l.sample_nearest(x, y, 0).map_or(0.0, |_| {
                    conf_l.get(x.round().max(0.0) as usize, y.round().max(0.0) as usize, 0)
                });
                *px = [(u as f64 - ur) as f32, (v as f64 - vr) as f32, conf, alt];
            }
            (row, fails)
        })
        .collect();

    let mut bands = [
        Vec::with_capacity(w * h),
        Vec::with_capacity(w * h),
        Vec::with_capacity(w * h),
        Vec::with_capacity(w * h),
    ];
    let mut failures = 0;
    for (row, f) in rows {
        failures += f;
        for px in row {
            for k in 0..4 {
                bands[k].push(px[k]);
            }
        }
    }
    let [d, vert, conf, alt] = bands;
    let mk = |data| Raster::new(w as u32, h as u32, 1, data);
    Ok(GtDisparity {
        disparity: mk(d)?,
        vertical: mk(vert)?,
        confidence: mk(conf)?,
        altitude: mk(alt)?,
        failures,
    })
}
