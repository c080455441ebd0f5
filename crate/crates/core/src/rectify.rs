//! Diachronic rectification: RPC-initialized rectifying homographies refined
//! with a horizontal shear, an optional role swap, and a sparse-match
//! translation that makes disparities unipolar and altitude-increasing.

use nalgebra::{Matrix4, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::homography::{fit_affine_rows, Homography};
use crate::raster::{warp, Raster};
use crate::rpc::{LocalizeOptions, PixelPoint, RpcModel};
use crate::sparse_match::{classic_match, MatchConfig, MatchSet};

/// Pixel rectangle in an original image, by pixel centers:
/// columns `col0 ..= col0 + width − 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Roi {
    pub col0: f64,
    pub row0: f64,
    pub width: f64,
    pub height: f64,
}

impl Roi {
    pub fn full(width: u32, height: u32) -> Self {
        Roi { col0: 0.0, row0: 0.0, width: width as f64, height: height as f64 }
    }

    pub fn center(&self) -> PixelPoint {
        PixelPoint::new(self.col0 + (self.width - 1.0) / 2.0, self.row0 + (self.height - 1.0) / 2.0)
    }

    fn validate(&self) -> Result<()> {
        if !(self.width >= 1.0 && self.height >= 1.0) || !self.col0.is_finite() || !self.row0.is_finite() {
            return Err(Error::InvalidInput(format!("empty roi {self:?}")));
        }
        Ok(())
    }
}

/// Left-image lattice with the right-image projection of each node at each
/// altitude.
#[derive(Debug, Clone)]
pub struct VirtualGrid {
    pub grid_n: usize,
    pub altitudes: Vec<f64>,
    /// `(left pixel, right pixel per altitude)`.
    pub points: Vec<(PixelPoint, Vec<PixelPoint>)>,
}

impl VirtualGrid {
    pub fn build(
        rpc_l: &RpcModel,
        rpc_r: &RpcModel,
        roi: &Roi,
        grid_n: usize,
        altitudes: &[f64],
    ) -> Result<Self> {
        roi.validate()?;
        if grid_n < 2 || altitudes.is_empty() {
            return Err(Error::InvalidInput("virtual grid needs n >= 2 and an altitude".into()));
        }
        let mut points = Vec::with_capacity(grid_n * grid_n);
        let opts = LocalizeOptions { tol_px: 1e-7, ..Default::default() };
        let step = |len: f64, i: usize| (len - 1.0) * i as f64 / (grid_n - 1) as f64;
        for j in 0..grid_n {
            for i in 0..grid_n {
                let p = PixelPoint::new(roi.col0 + step(roi.width, i), roi.row0 + step(roi.height, j));
                let right = altitudes
                    .iter()
                    .map(|&h| rpc_r.project(&rpc_l.localize_with(p, h, None, &opts)?.ground))
                    .collect::<Result<Vec<_>>>()?;
                points.push((p, right));
            }
        }
        Ok(VirtualGrid { grid_n, altitudes: altitudes.to_vec(), points })
    }

    /// Evenly spaced altitudes over `h_range`, both ends included.
    pub fn altitudes_in(h_range: [f64; 2], count: usize) -> Vec<f64> {
        if count == 1 {
            return vec![0.5 * (h_range[0] + h_range[1])];
        }
        (0..count)
            .map(|k| h_range[0] + (h_range[1] - h_range[0]) * k as f64 / (count - 1) as f64)
            .collect()
    }

    /// Every `(left, right)` correspondence in original image coordinates.
    pub fn pairs(&self) -> impl Iterator<Item = (PixelPoint, PixelPoint)> + '_ {
        self.points.iter().flat_map(|(l, rs)| rs.iter().map(move |r| (*l, *r)))
    }

    /// Rectified `(u_L − u_R, v_L − v_R)` for every correspondence.
    pub fn rectified_offsets(&self, h_l: &Homography, h_r: &Homography) -> Result<Vec<(f64, f64)>> {
        self.pairs()
            .map(|(l, r)| {
                let (a, b) = (h_l.apply(l)?, h_r.apply(r)?);
                Ok((a.col - b.col, a.row - b.row))
            })
            .collect()
    }

    pub fn max_vertical_residual(&self, h_l: &Homography, h_r: &Homography) -> Result<f64> {
        Ok(self.rectified_offsets(h_l, h_r)?.iter().fold(0.0, |m, o| m.max(o.1.abs())))
    }
}

/// Affine fundamental fit `a·u_R + b·v_R + c·u_L + d·v_L + e = 0` turned into
/// a pair of orientation-preserving similarities that send epipolar lines to
/// image rows.
pub fn rpc_rectify(
    rpc_l: &RpcModel,
    rpc_r: &RpcModel,
    roi: &Roi,
    h_range: [f64; 2],
) -> Result<(Homography, Homography)> {
    rpc_rectify_grid(rpc_l, rpc_r, roi, h_range, 7, 3)
}

pub fn rpc_rectify_grid(
    rpc_l: &RpcModel,
    rpc_r: &RpcModel,
    roi: &Roi,
    h_range: [f64; 2],
    grid_n: usize,
    n_alt: usize,
) -> Result<(Homography, Homography)> {
    if !(h_range[1] > h_range[0]) || n_alt < 2 {
        return Err(Error::InvalidInput(format!("degenerate altitude range {h_range:?}")));
    }
    let grid = VirtualGrid::build(rpc_l, rpc_r, roi, grid_n, &VirtualGrid::altitudes_in(h_range, n_alt))?;
    let rows: Vec<[f64; 4]> = grid.pairs().map(|(l, r)| [r.col, r.row, l.col, l.row]).collect();
    let n = rows.len() as f64;
    let mut mean = [0.0; 4];
    for r in &rows {
        for k in 0..4 {
            mean[k] += r[k] / n;
        }
    }
    let mut cov = Matrix4::<f64>::zeros();
    for r in &rows {
        for i in 0..4 {
            for j in 0..4 {
                cov[(i, j)] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let (l1, l3) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[3]]);
    // Without parallax the data spans only two dimensions and any line
    // through it is an equally good "epipolar" constraint.
    if l1 <= 1e-9 * l3 {
        return Err(Error::DegenerateGeometry("no parallax between the two cameras".into()));
    }
    let v = eig.eigenvectors.column(order[0]);
    let (mut a, mut b, mut c, mut d) = (v[0], v[1], v[2], v[3]);
    // Both rows flip together with the eigenvector sign; pick the sign whose
    // two rotations are closest to upright. The rule is invariant under
    // exchanging the cameras.
    let upright = b - d;
    if upright < 0.0 || (upright == 0.0 && a - c < 0.0) {
        (a, b, c, d) = (-a, -b, -c, -d);
    }
    let e = -(a * mean[0] + b * mean[1] + c * mean[2] + d * mean[3]);
    let (nab, ncd) = (a.hypot(b), c.hypot(d));
    if nab < 1e-9 || ncd < 1e-9 {
        return Err(Error::DegenerateGeometry("epipolar direction undefined in one view".into()));
    }
    let q = (nab * ncd).sqrt();
    let h_l = Homography::new([-d / q, c / q, 0.0, -c / q, -d / q, 0.0, 0.0, 0.0, 1.0])?;
    let h_r = Homography::new([b / q, -a / q, 0.0, a / q, b / q, e / q, 0.0, 0.0, 1.0])?;
    Ok((h_l, h_r))
}

/// Row-preserving shear `S = [[a,b,c],[0,1,0],[0,0,1]]` fitted so rectified
/// virtual matches at `z_avg` have zero disparity; returns `S·H_R`.
pub fn reduce_disp_range(
    h_l: &Homography,
    h_r: &Homography,
    rpc_l: &RpcModel,
    rpc_r: &RpcModel,
    roi: &Roi,
    z_avg: f64,
) -> Result<Homography> {
    let grid = VirtualGrid::build(rpc_l, rpc_r, roi, 7, &[z_avg])?;
    let mut src = Vec::with_capacity(grid.points.len());
    let mut dst = Vec::with_capacity(grid.points.len());
    for (l, r) in grid.pairs() {
        src.push(h_r.apply(r)?);
        dst.push(h_l.apply(l)?);
    }
    let [row, _] = fit_affine_rows(&src, &dst)?;
    if row[0] <= 0.0 {
        return Err(Error::DegenerateConfiguration("disparity shear reverses the row direction".into()));
    }
    let s = Homography::new([row[0], row[1], row[2], 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])?;
    Ok(s.compose(h_r))
}

/// Rectified disparity of the virtual match through `left_px` at altitude `z`.
pub fn virtual_disparity(
    h_l: &Homography,
    h_r: &Homography,
    rpc_l: &RpcModel,
    rpc_r: &RpcModel,
    left_px: PixelPoint,
    z: f64,
) -> Result<f64> {
    let r = rpc_r.project(&rpc_l.localize(left_px, z)?)?;
    Ok(h_l.apply(left_px)?.col - h_r.apply(r)?.col)
}

/// True when raising the virtual match through `left_px` by `dz` lowers its
/// disparity, meaning the two images must exchange roles.
pub fn disparity_decreases_with_altitude(
    h_l: &Homography,
    h_r: &Homography,
    rpc_l: &RpcModel,
    rpc_r: &RpcModel,
    left_px: PixelPoint,
    z_avg: f64,
    dz: f64,
) -> Result<bool> {
    let d0 = virtual_disparity(h_l, h_r, rpc_l, rpc_r, left_px, z_avg)?;
    let d1 = virtual_disparity(h_l, h_r, rpc_l, rpc_r, left_px, z_avg + dz)?;
    Ok(d1 < d0)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `t = min(u_L − u_R)`, `s = median(v_L − v_R)` over matches in the current
/// rectified frames; returns `[[1,0,t],[0,1,s],[0,0,1]]·H_R`.
pub fn enforce_polarity(h_r: &Homography, m: &MatchSet) -> Result<(Homography, f64, f64)> {
    if m.is_empty() {
        return Err(Error::EmptyMatchSet);
    }
    let t = m.matches.iter().map(|x| x.disparity()).fold(f64::INFINITY, f64::min);
    let s = median(m.matches.iter().map(|x| x.vertical_offset()).collect());
    Ok((Homography::translation(t, s).compose(h_r), t, s))
}

/// Matches driving the polarity step.
#[derive(Debug, Clone)]
pub enum MatchInput {
    /// Run `classic_match` on the intermediate rectified pair.
    Auto,
    /// Correspondences in original image coordinates, left/right in the
    /// order the images were passed to `rectify_pair`.
    Original(MatchSet),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RectifyConfig {
    /// Half the altitude span of the virtual grid around `z_avg`.
    pub half_range: f64,
    pub grid_n: usize,
    /// Altitude step of the swap test.
    pub dz: f64,
    pub max_size: u32,
    pub min_matches: usize,
    pub matcher: MatchConfig,
}

impl Default for RectifyConfig {
    fn default() -> Self {
        RectifyConfig {
            half_range: 40.0,
            grid_n: 7,
            dz: 10.0,
            max_size: 8192,
            min_matches: 4,
            matcher: MatchConfig { max_offset: Some(128.0), ..MatchConfig::default() },
        }
    }
}

/// Everything needed to map between original and rectified frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectGeometry {
    pub h_l: Homography,
    pub h_r: Homography,
    /// The second argument image became the rectified left view.
    pub swapped: bool,
    pub t: f64,
    pub s: f64,
    pub out_size: (u32, u32),
    /// Size of the original image behind the rectified left view.
    pub left_size: (u32, u32),
    pub z_avg: f64,
    pub h_range: [f64; 2],
}

impl RectGeometry {
    /// Argument-order pair arranged as (rectified left, rectified right).
    pub fn ordered<'a, T>(&self, first: &'a T, second: &'a T) -> (&'a T, &'a T) {
        if self.swapped {
            (second, first)
        } else {
            (first, second)
        }
    }
}

#[derive(Debug, Clone)]
pub struct RectificationResult {
    pub geometry: RectGeometry,
    pub rect_left: Raster,
    pub rect_right: Raster,
    pub n_matches: usize,
}

/// Output frame covering the warped left image: translation to apply to both
/// homographies and the clamped size.
fn output_frame(h_l: &Homography, w: u32, h: u32, max_size: u32) -> Result<(Homography, (u32, u32))> {
    let (wf, hf) = (w as f64 - 1.0, h as f64 - 1.0);
    let mut lo = (f64::INFINITY, f64::INFINITY);
    let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (x, y) in [(0.0, 0.0), (wf, 0.0), (0.0, hf), (wf, hf)] {
        let p = h_l.apply(PixelPoint::new(x, y))?;
        lo = (lo.0.min(p.col), lo.1.min(p.row));
        hi = (hi.0.max(p.col), hi.1.max(p.row));
    }
    let size = |span: f64| ((span.ceil() as i64 + 1).clamp(1, max_size as i64)) as u32;
    Ok((Homography::translation(-lo.0, -lo.1), (size(hi.0 - lo.0), size(hi.1 - lo.1))))
}

pub fn rectify_pair(
    left: &Raster,
    rpc_l: &RpcModel,
    right: &Raster,
    rpc_r: &RpcModel,
    z_avg: f64,
    matches: &MatchInput,
    cfg: &RectifyConfig,
) -> Result<RectificationResult> {
    let roi = Roi::full(left.width(), left.height());
    let h_range = [z_avg - cfg.half_range, z_avg + cfg.half_range];
    let (h_l, h_r) = rpc_rectify_grid(rpc_l, rpc_r, &roi, h_range, cfg.grid_n, 3)?;
    let h_r = reduce_disp_range(&h_l, &h_r, rpc_l, rpc_r, &roi, z_avg)?;
    let swapped = disparity_decreases_with_altitude(&h_l, &h_r, rpc_l, rpc_r, roi.center(), z_avg, cfg.dz)?;
    let (img_l, img_r, h_l, h_r) = if swapped {
        (right, left, h_r, h_l)
    } else {
        (left, right, h_l, h_r)
    };

    let (shift, out_size) = output_frame(&h_l, img_l.width(), img_l.height(), cfg.max_size)?;
    let h_l = shift.compose(&h_l);
    let h_r = shift.compose(&h_r);

    let rect_matches = match matches {
        MatchInput::Auto => {
            let (a, b) = rayon::join(
                || warp(img_l, &h_l, out_size.0, out_size.1),
                || warp(img_r, &h_r, out_size.0, out_size.1),
            );
            let m = classic_match(&a?, &b?, &cfg.matcher)?;
            if m.len() < cfg.min_matches {
                return Err(Error::MatchFailure { found: m.len(), required: cfg.min_matches });
            }
            m
        }
        MatchInput::Original(m) => {
            if m.is_empty() {
                return Err(Error::EmptyMatchSet);
            }
            let m = if swapped { m.swapped() } else { m.clone() };
            let mut out = m.clone();
            for x in &mut out.matches {
                x.left = h_l.apply(x.left)?;
                x.right = h_r.apply(x.right)?;
            }
            out
        }
    };

    let (h_r, t, s) = enforce_polarity(&h_r, &rect_matches)?;
    let (a, b) = rayon::join(
        || warp(img_l, &h_l, out_size.0, out_size.1),
        || warp(img_r, &h_r, out_size.0, out_size.1),
    );
    Ok(RectificationResult {
        geometry: RectGeometry {
            h_l,
            h_r,
            swapped,
            t,
            s,
            out_size,
            left_size: (img_l.width(), img_l.height()),
            z_avg,
            h_range,
        },
        rect_left: a?,
        rect_right: b?,
        n_matches: rect_matches.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse_match::{Match, MatchSource};
    use crate::synth::{make_rpc, ViewSpec};
    use crate::rpc::GroundPoint;

    fn cam(az: f64, off: f64, rot: f64, cubic: f64) -> RpcModel {
        let mut v = ViewSpec::new(az, off);
        v.rotation_deg = rot;
        v.cubic = cubic;
        v.cubic_seed = (az * 7.0 + off) as u64;
        make_rpc(&v, GroundPoint::new(-95.93, 41.25, 300.0), 512, 512)
    }

    fn ms(v: &[(f64, f64)]) -> MatchSet {
        MatchSet::new(
            v.iter().map(|&(d, dv)| Match::new(10.0 + d, 5.0 + dv, 10.0, 5.0, 1.0)).collect(),
            MatchSource::External,
        )
    }

    #[test]
    fn polarity_examples() {
        let (h, t, s) = enforce_polarity(&Homography::identity(), &ms(&[(3.0, 0.0), (-2.0, 0.0), (5.0, 0.0)])).unwrap();
        assert_eq!(t, -2.0);
        let shifted: Vec<f64> = [3.0, -2.0, 5.0]
            .iter()
            .map(|d| 10.0 + d - h.apply(PixelPoint::new(10.0, 5.0)).unwrap().col)
            .collect();
        assert_eq!(shifted, vec![5.0, 0.0, 7.0]);
        assert_eq!(s, 0.0);

        let (_, _, s) = enforce_polarity(&Homography::identity(), &ms(&[(0.0, 1.0), (0.0, 1.2), (0.0, 0.8)])).unwrap();
        assert_eq!(s, 1.0);
        let (_, t, s) = enforce_polarity(&Homography::identity(), &ms(&[(4.0, -0.5)])).unwrap();
        assert_eq!((t, s), (4.0, -0.5));
        let empty = MatchSet::new(vec![], MatchSource::External);
        assert!(matches!(enforce_polarity(&Homography::identity(), &empty), Err(Error::EmptyMatchSet)));
    }

    #[test]
    fn already_rectified_pair_gives_identity() {
        // parallax purely along image rows: looking east and west
        let l = cam(90.0, 10.0, 0.0, 0.0);
        let r = cam(270.0, 15.0, 0.0, 0.0);
        let roi = Roi::full(512, 512);
        let (hl, hr) = rpc_rectify(&l, &r, &roi, [260.0, 340.0]).unwrap();
        // the common similarity is the left one; undo it on both
        let inv = hl.inverse().unwrap();
        let hr0 = inv.compose(&hr);
        for (x, y) in hl.matrix().iter().zip(Homography::identity().matrix()) {
            assert!((x - y).abs() < 1e-6, "{:?}", hl);
        }
        for (x, y) in hr0.matrix().iter().zip(Homography::identity().matrix()) {
            assert!((x - y).abs() < 1e-6, "{:?}", hr0);
        }
    }

    #[test]
    fn held_out_vertical_residual() {
        for (k, (l, r)) in [
            (cam(100.0, 10.0, 0.0, 0.0), cam(255.0, 20.0, 0.0, 0.0)),
            (cam(10.0, 25.0, 12.0, 2e-5), cam(160.0, 5.0, -20.0, 2e-5)),
        ]
        .into_iter()
        .enumerate()
        {
            let roi = Roi::full(512, 512);
            let (hl, hr) = rpc_rectify(&l, &r, &roi, [260.0, 340.0]).unwrap();
            let dense = VirtualGrid::build(&l, &r, &roi, 50, &VirtualGrid::altitudes_in([260.0, 340.0], 5)).unwrap();
            assert!(dense.max_vertical_residual(&hl, &hr).unwrap() <= 0.25);

            let (hr2, hl2) = rpc_rectify(&r, &l, &roi, [260.0, 340.0]).unwrap();
            let dense2 = VirtualGrid::build(&r, &l, &roi, 50, &VirtualGrid::altitudes_in([260.0, 340.0], 5)).unwrap();
            assert!(dense2.max_vertical_residual(&hr2, &hl2).unwrap() <= 0.25);
            if k > 0 {
                // the fit samples a different lattice once the cameras are not affine
                continue;
            }
            // swapped arguments give the same maps up to a shared row shift
            let d = hl2.compose(&hl.inverse().unwrap());
            let m = d.matrix();
            assert!((m[0] - 1.0).abs() < 1e-6 && m[1].abs() < 1e-6 && m[2].abs() < 1e-6, "{m:?}");
            assert!(m[3].abs() < 1e-6 && (m[4] - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn identical_cameras_degenerate() {
        let l = cam(100.0, 10.0, 0.0, 0.0);
        assert!(matches!(
            rpc_rectify(&l, &l, &Roi::full(512, 512), [260.0, 340.0]),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn shear_zeroes_disparity_at_zavg() {
        let (l, r) = (cam(100.0, 10.0, 0.0, 0.0), cam(255.0, 20.0, 0.0, 0.0));
        let roi = Roi::full(512, 512);
        let (hl, hr) = rpc_rectify(&l, &r, &roi, [260.0, 340.0]).unwrap();
        let hr2 = reduce_disp_range(&hl, &hr, &l, &r, &roi, 300.0).unwrap();
        let grid = VirtualGrid::build(&l, &r, &roi, 7, &[300.0]).unwrap();
        let off = grid.rectified_offsets(&hl, &hr2).unwrap();
        let rms = (off.iter().map(|o| o.0 * o.0).sum::<f64>() / off.len() as f64).sqrt();
        assert!(rms <= 0.5, "{rms}");
        // fixed point: a second reduction changes nothing
        let hr3 = reduce_disp_range(&hl, &hr2, &l, &r, &roi, 300.0).unwrap();
        for (x, y) in hr3.matrix().iter().zip(hr2.matrix()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn swap_test_antisymmetry() {
        let (l, r) = (cam(100.0, 10.0, 0.0, 0.0), cam(255.0, 20.0, 0.0, 0.0));
        let roi = Roi::full(512, 512);
        let (hl, hr) = rpc_rectify(&l, &r, &roi, [260.0, 340.0]).unwrap();
        let hr = reduce_disp_range(&hl, &hr, &l, &r, &roi, 300.0).unwrap();
        let c = roi.center();
        let a = disparity_decreases_with_altitude(&hl, &hr, &l, &r, c, 300.0, 10.0).unwrap();
        let flipped = disparity_decreases_with_altitude(&hl, &hr, &l, &r, c, 300.0, -10.0).unwrap();
        assert_ne!(a, flipped);
        let c_r = r.project(&l.localize(c, 300.0).unwrap()).unwrap();
        let b = disparity_decreases_with_altitude(&hr, &hl, &r, &l, c_r, 300.0, 10.0).unwrap();
        assert_ne!(a, b);
    }
}
