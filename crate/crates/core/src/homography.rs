//! 3×3 projective transforms in pixel coordinates and the small
//! least-squares fits used by rectification.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rpc::PixelPoint;

const DET_EPS: f64 = 1e-12;
const W_EPS: f64 = 1e-12;

/// Row-major 3×3 projective map, kept at canonical scale `m[8] = 1`
/// whenever `m[8] != 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 9]", into = "[f64; 9]")]
pub struct Homography {
    m: [f64; 9],
}

impl TryFrom<[f64; 9]> for Homography {
    type Error = Error;

    fn try_from(m: [f64; 9]) -> Result<Self> {
        Homography::new(m)
    }
}

impl From<Homography> for [f64; 9] {
    fn from(h: Homography) -> Self {
        h.m
    }
}

fn det3(m: &[f64; 9]) -> f64 {
    m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
        + m[2] * (m[3] * m[7] - m[4] * m[6])
}

fn adjugate(m: &[f64; 9]) -> [f64; 9] {
    [
        m[4] * m[8] - m[5] * m[7],
        m[2] * m[7] - m[1] * m[8],
        m[1] * m[5] - m[2] * m[4],
        m[5] * m[6] - m[3] * m[8],
        m[0] * m[8] - m[2] * m[6],
        m[2] * m[3] - m[0] * m[5],
        m[3] * m[7] - m[4] * m[6],
        m[1] * m[6] - m[0] * m[7],
        m[0] * m[4] - m[1] * m[3],
    ]
}

fn mul3(a: &[f64; 9], b: &[f64; 9]) -> [f64; 9] {
    let mut out = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            out[r * 3 + c] = (0..3).map(|k| a[r * 3 + k] * b[k * 3 + c]).sum();
        }
    }
    out
}

/// Solves the 3×3 system `a·x = b` by the adjugate formula.
fn solve3(a: &[f64; 9], b: [f64; 3], rel_eps: f64) -> Option<[f64; 3]> {
    let det = det3(a);
    let scale: f64 = a.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if !det.is_finite() || det.abs() <= rel_eps * scale.powi(3) {
        return None;
    }
    let adj = adjugate(a);
    Some([
        (adj[0] * b[0] + adj[1] * b[1] + adj[2] * b[2]) / det,
        (adj[3] * b[0] + adj[4] * b[1] + adj[5] * b[2]) / det,
        (adj[6] * b[0] + adj[7] * b[1] + adj[8] * b[2]) / det,
    ])
}

impl Homography {
    pub fn new(mut m: [f64; 9]) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularHomography(f64::NAN));
        }
        if m[8] != 0.0 {
            let k = m[8];
            m.iter_mut().for_each(|v| *v /= k);
        }
        let det = det3(&m);
        if det.abs() <= DET_EPS {
            return Err(Error::SingularHomography(det));
        }
        Ok(Homography { m })
    }

    pub fn identity() -> Self {
        Homography { m: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0] }
    }

    /// `[[1,0,tx],[0,1,ty],[0,0,1]]`.
    pub fn translation(tx: f64, ty: f64) -> Self {
        Homography { m: [1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0] }
    }

    /// Affine map from its top two rows.
    pub fn affine(a: [f64; 6]) -> Result<Self> {
        Homography::new([a[0], a[1], a[2], a[3], a[4], a[5], 0.0, 0.0, 1.0])
    }

    pub fn matrix(&self) -> &[f64; 9] {
        &self.m
    }

    pub fn det(&self) -> f64 {
        det3(&self.m)
    }

    pub fn is_affine(&self) -> bool {
        self.m[6] == 0.0 && self.m[7] == 0.0
    }

    /// Maps a point, returning `None` for points sent to infinity.
    #[inline]
    pub fn apply_xy(&self, u: f64, v: f64) -> Option<(f64, f64)> {
        let m = &self.m;
        let w = m[6] * u + m[7] * v + m[8];
        if w.abs() <= W_EPS {
            return None;
        }
        Some(((m[0] * u + m[1] * v + m[2]) / w, (m[3] * u + m[4] * v + m[5]) / w))
    }

    pub fn apply(&self, p: PixelPoint) -> Result<PixelPoint> {
        self.apply_xy(p.col, p.row)
            .map(|(col, row)| PixelPoint { col, row })
            .ok_or(Error::PointAtInfinity)
    }

    pub fn inverse(&self) -> Result<Homography> {
        let det = self.det();
        if det.abs() <= DET_EPS {
            return Err(Error::SingularHomography(det));
        }
        let adj = adjugate(&self.m);
        Homography::new(adj.map(|v| v / det))
    }

    /// `self · other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Homography) -> Homography {
        Homography::new(mul3(&self.m, &other.m)).expect("product of invertible maps")
    }

    /// Least-squares affine map sending `src` to `dst`, solved on
    /// centroid-centered coordinates.
    pub fn fit_affine(src: &[PixelPoint], dst: &[PixelPoint]) -> Result<Homography> {
        let rows = fit_affine_rows(src, dst)?;
        Homography::affine([rows[0][0], rows[0][1], rows[0][2], rows[1][0], rows[1][1], rows[1][2]])
    }
}

/// The two rows `[a, b, c]` of the least-squares affine fit. Each row is an
/// independent problem, so the first row alone is the best row-preserving
/// correction of the horizontal coordinate.
pub fn fit_affine_rows(src: &[PixelPoint], dst: &[PixelPoint]) -> Result<[[f64; 3]; 2]> {
    if src.len() != dst.len() {
        return Err(Error::InvalidInput(format!(
            "{} source points vs {} destination points",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 3 {
        return Err(Error::DegenerateConfiguration(format!("{} point pairs", src.len())));
    }
    let n = src.len() as f64;
    let mean = |pts: &[PixelPoint]| {
        let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.col, a.1 + p.row));
        (sx / n, sy / n)
    };
    let (mx, my) = mean(src);
    let (dx, dy) = mean(dst);
    let mut normal = [0.0; 9];
    let mut rhs_u = [0.0; 3];
    let mut rhs_v = [0.0; 3];
    for (s, d) in src.iter().zip(dst) {
        let basis = [s.col - mx, s.row - my, 1.0];
        for r in 0..3 {
            for c in 0..3 {
                normal[r * 3 + c] += basis[r] * basis[c];
            }
            rhs_u[r] += basis[r] * (d.col - dx);
            rhs_v[r] += basis[r] * (d.row - dy);
        }
    }
    let solve = |rhs| {
        solve3(&normal, rhs, 1e-12)
            .ok_or_else(|| Error::DegenerateConfiguration("collinear points".into()))
    };
    let [a, b, c] = solve(rhs_u)?;
    let [d, e, f] = solve(rhs_v)?;
    // undo the centering: dst - dmean = A (src - smean) + c
    Ok([
        [a, b, c + dx - a * mx - b * my],
        [d, e, f + dy - d * mx - e * my],
    ])
}
