//! Disparity to altitude by per-pixel height search, then altitude image to
//! a ground-aligned DSM.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::LocalFrame;
use crate::homography::Homography;
use crate::raster::{GeoTransform, Raster};
use crate::rectify::RectGeometry;
use crate::rpc::{LocalizeOptions, PixelPoint, RpcModel};

const MAX_ITER: usize = 50;
const TOL_H: f64 = 1e-3;
const GOLDEN_EVALS: usize = 60;

/// Height search for one rectified pair.
pub struct Triangulator<'a> {
    h_l_inv: Homography,
    h_r: Homography,
    cam_l: &'a RpcModel,
    cam_r: &'a RpcModel,
    bounds: [f64; 2],
    opts: LocalizeOptions,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeightFit {
    pub h: f64,
    /// Rectified-right distance to `(u − d, v)`, pixels.
    pub residual: f64,
}

impl<'a> Triangulator<'a> {
    /// `rpc_a`, `rpc_b` in the order the images were given to the
    /// rectification.
    pub fn new(geom: &RectGeometry, rpc_a: &'a RpcModel, rpc_b: &'a RpcModel, h_bounds: [f64; 2]) -> Result<Self> {
        if !(h_bounds[0] < h_bounds[1]) || !h_bounds.iter().all(|h| h.is_finite()) {
            return Err(Error::InvalidInput(format!("degenerate altitude bounds {h_bounds:?}")));
        }
        let (cam_l, cam_r) = geom.ordered(rpc_a, rpc_b);
        Ok(Triangulator {
            h_l_inv: geom.h_l.inverse()?,
            h_r: geom.h_r,
            cam_l,
            cam_r,
            bounds: h_bounds,
            opts: LocalizeOptions { tol_px: 1e-6, ..Default::default() },
        })
    }

    /// Residual vector at altitude `h` for the left original pixel `x`,
    /// target `(tu, tv)` in the rectified right view.
    fn residual(&self, x: PixelPoint, tu: f64, tv: f64, h: f64, guess: &mut Option<(f64, f64)>) -> Result<(f64, f64)> {
        let g = self.cam_l.localize_with(x, h, *guess, &self.opts)?.ground;
        *guess = Some((g.lon, g.lat));
        let q = self.h_r.apply(self.cam_r.project(&g)?)?;
        Ok((q.col - tu, q.row - tv))
    }

    /// `r(h) = ‖H_R·P_R(L_L(H_L⁻¹ p, h)) − (u − d, v)‖`, for checks.
    pub fn residual_at(&self, p: PixelPoint, d: f64, h: f64) -> Result<f64> {
        let x = self.h_l_inv.apply(p)?;
        let r = self.residual(x, p.col - d, p.row, h, &mut None)?;
        Ok(r.0.hypot(r.1))
    }

    /// Altitude minimizing the epipolar residual of rectified pixel `p` with
    /// disparity `d`: secant Gauss-Newton on the residual vector, with a
    /// golden-section search when it stalls.
    pub fn pixel(&self, p: PixelPoint, d: f64) -> Result<HeightFit> {
        if !d.is_finite() {
            return Err(Error::InvalidInput("non-finite disparity".into()));
        }
        let x = self.h_l_inv.apply(p)?;
        let (tu, tv) = (p.col - d, p.row);
        let [lo, hi] = self.bounds;
        let mut guess = None;
        let mut eval = |h: f64| self.residual(x, tu, tv, h, &mut guess);

        let mut h0 = 0.5 * (lo + hi);
        let mut r0 = eval(h0)?;
        let mut h1 = h0 + 1.0;
        let mut r1 = eval(h1)?;
        let mut pinned = None;
        for _ in 0..MAX_ITER {
            let dh = h1 - h0;
            let j = ((r1.0 - r0.0) / dh, (r1.1 - r0.1) / dh);
            let jj = j.0 * j.0 + j.1 * j.1;
            if jj < 1e-18 {
                break;
            }
            let step = -(j.0 * r1.0 + j.1 * r1.1) / jj;
            let target = h1 + step;
            let next = target.clamp(lo, hi);
            if next != target && next == h1 {
                // already at the bound and still pushed outward
                pinned = Some(next);
                break;
            }
            h0 = h1;
            r0 = r1;
            h1 = next;
            r1 = eval(h1)?;
            if (h1 - h0).abs() < TOL_H {
                let residual = r1.0.hypot(r1.1);
                if next != target {
                    return Err(Error::OutOfBounds { h: h1, residual });
                }
                return Ok(HeightFit { h: h1, residual });
            }
        }
        if let Some(h) = pinned {
            let r = eval(h)?;
            return Err(Error::OutOfBounds { h, residual: r.0.hypot(r.1) });
        }
        self.golden(x, tu, tv)
    }

    fn golden(&self, x: PixelPoint, tu: f64, tv: f64) -> Result<HeightFit> {
        let [mut a, mut b] = self.bounds;
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        let mut guess = None;
        let mut f = |h: f64| self.residual(x, tu, tv, h, &mut guess).map(|r| r.0.hypot(r.1));
        let mut c = b - phi * (b - a);
        let mut d = a + phi * (b - a);
        let (mut fc, mut fd) = (f(c)?, f(d)?);
        for _ in 2..GOLDEN_EVALS {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - phi * (b - a);
                fc = f(c)?;
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + phi * (b - a);
                fd = f(d)?;
            }
        }
        let (h, residual) = if fc < fd { (c, fc) } else { (d, fd) };
        let span = self.bounds[1] - self.bounds[0];
        if (h - self.bounds[0]).abs() < 1e-6 * span || (self.bounds[1] - h).abs() < 1e-6 * span {
            return Err(Error::OutOfBounds { h, residual });
        }
        Ok(HeightFit { h, residual })
    }
}

pub fn triangulate_pixel(
    p_rect: PixelPoint,
    d: f64,
    geom: &RectGeometry,
    rpc_a: &RpcModel,
    rpc_b: &RpcModel,
    h_bounds: [f64; 2],
) -> Result<HeightFit> {
    Triangulator::new(geom, rpc_a, rpc_b, h_bounds)?.pixel(p_rect, d)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriangulationStats {
    pub triangulated: usize,
    pub no_convergence: usize,
    pub out_of_bounds: usize,
    pub other_failures: usize,
}

#[derive(Debug, Clone)]
pub struct AltitudeImage {
    /// Channel 0 altitude in meters, channel 1 epipolar residual in pixels.
    pub raster: Raster,
    pub stats: TriangulationStats,
}

/// Altitude of every valid disparity pixel; failures become nodata and are
/// counted.
pub fn triangulate(
    disp: &Raster,
    geom: &RectGeometry,
    rpc_a: &RpcModel,
    rpc_b: &RpcModel,
    h_bounds: [f64; 2],
) -> Result<AltitudeImage> {
    if disp.channels() != 1 || (disp.width(), disp.height()) != geom.out_size {
        return Err(Error::FrameMismatch(format!(
            "disparity is {}x{}x{}, rectified frame is {}x{}",
            disp.width(),
            disp.height(),
            disp.channels(),
            geom.out_size.0,
            geom.out_size.1
        )));
    }
    let tri = Triangulator::new(geom, rpc_a, rpc_b, h_bounds)?;
    let (w, h) = disp.dims();
    let rows: Vec<(Vec<f32>, TriangulationStats)> = (0..h)
        .into_par_iter()
        .map(|v| {
            let mut out = vec![f32::NAN; 2 * w];
            let mut st = TriangulationStats::default();
            for u in 0..w {
                let d = disp.get(u, v, 0);
                if d.is_nan() {
                    continue;
                }
                match tri.pixel(PixelPoint::new(u as f64, v as f64), d as f64) {
                    Ok(fit) => {
                        out[2 * u] = fit.h as f32;
                        out[2 * u + 1] = fit.residual as f32;
                        st.triangulated += 1;
                    }
                    Err(Error::NoConvergence { .. }) => st.no_convergence += 1,
                    Err(Error::OutOfBounds { .. }) => st.out_of_bounds += 1,
                    Err(_) => st.other_failures += 1,
                }
            }
            (out, st)
        })
        .collect();
    let mut stats = TriangulationStats::default();
    let mut data = Vec::with_capacity(2 * w * h);
    for (row, st) in rows {
        data.extend_from_slice(&row);
        stats.triangulated += st.triangulated;
        stats.no_convergence += st.no_convergence;
        stats.out_of_bounds += st.out_of_bounds;
        stats.other_failures += st.other_failures;
    }
    Ok(AltitudeImage { raster: Raster::new(w as u32, h as u32, 2, data)?, stats })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    #[default]
    Median,
    Max,
    Mean,
}

impl std::str::FromStr for Aggregator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "median" => Ok(Aggregator::Median),
            "max" => Ok(Aggregator::Max),
            "mean" => Ok(Aggregator::Mean),
            _ => Err(Error::InvalidInput(format!("unknown aggregator {s:?}"))),
        }
    }
}

impl Aggregator {
    /// `v` sorted ascending, nonempty.
    fn apply(self, v: &[f32]) -> f32 {
        let n = v.len();
        match self {
            Aggregator::Max => v[n - 1],
            Aggregator::Mean => (v.iter().map(|&x| x as f64).sum::<f64>() / n as f64) as f32,
            Aggregator::Median if n % 2 == 1 => v[n / 2],
            Aggregator::Median => ((v[n / 2 - 1] as f64 + v[n / 2] as f64) / 2.0) as f32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub cell: f64,
    pub agg: Aggregator,
    /// Metric frame origin; defaults to the left camera's normalization
    /// center.
    pub frame: Option<(f64, f64)>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { cell: 0.5, agg: Aggregator::Median, frame: None }
    }
}

/// Localizes each valid altitude pixel with the left camera and bins it into
/// a north-up grid whose origin is a multiple of the cell size.
pub fn grid_dsm(alt: &Raster, geom: &RectGeometry, rpc_a: &RpcModel, rpc_b: &RpcModel, spec: &GridSpec) -> Result<Raster> {
    if !(spec.cell > 0.0 && spec.cell.is_finite()) {
        return Err(Error::InvalidInput(format!("cell size {} must be positive", spec.cell)));
    }
    let (cam_l, _) = geom.ordered(rpc_a, rpc_b);
    let frame = match spec.frame {
        Some((lon0, lat0)) => LocalFrame::new(lon0, lat0),
        None => LocalFrame::new(cam_l.lon_off, cam_l.lat_off),
    };
    let h_l_inv = geom.h_l.inverse()?;
    let opts = LocalizeOptions { tol_px: 1e-6, ..Default::default() };
    let (w, h) = alt.dims();
    let pts: Vec<(f64, f64, f32)> = (0..h)
        .into_par_iter()
        .flat_map_iter(|v| {
            let mut guess = None;
            let mut row = Vec::new();
            for u in 0..w {
                let z = alt.get(u, v, 0);
                if z.is_nan() {
                    continue;
                }
                let Some((x, y)) = h_l_inv.apply_xy(u as f64, v as f64) else { continue };
                if let Ok(l) = cam_l.localize_with(PixelPoint::new(x, y), z as f64, guess, &opts) {
                    guess = Some((l.ground.lon, l.ground.lat));
                    let (e, n) = frame.to_local(l.ground.lon, l.ground.lat);
                    row.push((e, n, z));
                }
            }
            row
        })
        .collect();
    if pts.is_empty() {
        return Err(Error::EmptyInput);
    }
    let c = spec.cell;
    let (mut emin, mut emax, mut nmin, mut nmax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(e, n, _) in &pts {
        emin = emin.min(e);
        emax = emax.max(e);
        nmin = nmin.min(n);
        nmax = nmax.max(n);
    }
    let x0 = (emin / c).floor() * c;
    let y0 = (nmax / c).ceil() * c;
    let gw = (((emax - x0) / c).floor() as usize + 1).max(1);
    let gh = (((y0 - nmin) / c).floor() as usize + 1).max(1);
    let mut binned: Vec<(usize, f32)> = pts
        .iter()
        .map(|&(e, n, z)| {
            let col = (((e - x0) / c).floor() as usize).min(gw - 1);
            let row = (((y0 - n) / c).floor() as usize).min(gh - 1);
            (row * gw + col, z)
        })
        .collect();
    binned.par_sort_unstable_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut data = vec![f32::NAN; gw * gh];
    let mut i = 0;
    while i < binned.len() {
        let cell = binned[i].0;
        let mut j = i;
        while j < binned.len() && binned[j].0 == cell {
            j += 1;
        }
        let vals: Vec<f32> = binned[i..j].iter().map(|b| b.1).collect();
        data[cell] = spec.agg.apply(&vals);
        i = j;
    }
    Ok(Raster::new(gw as u32, gh as u32, 1, data)?
        .with_geotransform(GeoTransform::north_up(x0, y0, c))?
        .with_crs(frame.crs_tag()))
}
