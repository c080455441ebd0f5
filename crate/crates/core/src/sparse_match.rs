//! Sparse correspondences: CSV ingestion of externally computed matches and
//! a built-in corner + ZNCC matcher whose match count drives pair curation.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::rpc::PixelPoint;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub left: PixelPoint,
    pub right: PixelPoint,
    pub score: f64,
}

impl Match {
    pub fn new(ul: f64, vl: f64, ur: f64, vr: f64, score: f64) -> Self {
        Match { left: PixelPoint::new(ul, vl), right: PixelPoint::new(ur, vr), score }
    }

    /// Horizontal disparity `u_L − u_R`.
    pub fn disparity(&self) -> f64 {
        self.left.col - self.right.col
    }

    /// Vertical offset `v_L − v_R`.
    pub fn vertical_offset(&self) -> f64 {
        self.left.row - self.right.row
    }

    pub fn swapped(&self) -> Match {
        Match { left: self.right, right: self.left, score: self.score }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchSource {
    External,
    BuiltIn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchSet {
    pub matches: Vec<Match>,
    pub source: MatchSource,
}

impl MatchSet {
    pub fn new(matches: Vec<Match>, source: MatchSource) -> Self {
        MatchSet { matches, source }
    }

    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }

    /// Same correspondences with left and right roles exchanged.
    pub fn swapped(&self) -> MatchSet {
        MatchSet {
            matches: self.matches.iter().map(Match::swapped).collect(),
            source: self.source,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.matches.len() * 48);
        s.push_str("# uL,vL,uR,vR,score\n");
        for m in &self.matches {
            let _ = writeln!(
                s,
                "{:.6},{:.6},{:.6},{:.6},{:.6}",
                m.left.col, m.left.row, m.right.col, m.right.row, m.score
            );
        }
        s
    }
}

pub fn match_count(m: &MatchSet) -> usize {
    m.len()
}

/// Parses `uL,vL,uR,vR[,score]` lines; `#` starts a comment.
pub fn parse_matches(text: &str) -> Result<MatchSet> {
    let mut matches = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::MalformedLine(i + 1))?;
        let m = match fields.as_slice() {
            [ul, vl, ur, vr] => Match::new(*ul, *vl, *ur, *vr, 1.0),
            [ul, vl, ur, vr, s] => Match::new(*ul, *vl, *ur, *vr, *s),
            _ => return Err(Error::MalformedLine(i + 1)),
        };
        let finite = [m.left.col, m.left.row, m.right.col, m.right.row].iter().all(|v| v.is_finite());
        if !finite || !(0.0..=1.0).contains(&m.score) {
            return Err(Error::MalformedLine(i + 1));
        }
        matches.push(m);
    }
    if matches.is_empty() {
        return Err(Error::EmptyFile);
    }
    Ok(MatchSet::new(matches, MatchSource::External))
}

pub fn load_matches(path: impl AsRef<Path>) -> Result<MatchSet> {
    parse_matches(&fs::read_to_string(path)?)
}

pub fn save_matches(m: &MatchSet, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, m.to_csv())?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatchConfig {
    /// Harris threshold as a fraction of the strongest response.
    pub corner_tau: f64,
    pub nms_radius: usize,
    /// Odd ZNCC window side.
    pub window: usize,
    /// Nearest / second-nearest descriptor distance ratio.
    pub ratio: f64,
    pub inlier_px: f64,
    pub ransac_iters: usize,
    pub seed: u64,
    pub max_keypoints: usize,
    /// Only compare keypoints closer than this many pixels, when set.
    pub max_offset: Option<f64>,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            corner_tau: 0.01,
            nms_radius: 4,
            window: 11,
            ratio: 0.8,
            inlier_px: 3.0,
            ransac_iters: 1000,
            seed: 0,
            max_keypoints: 2000,
            max_offset: None,
        }
    }
}

struct Keypoint {
    col: usize,
    row: usize,
    descriptor: Vec<f32>,
}

fn harris_response(img: &Raster) -> Vec<f32> {
    let (w, h) = img.dims();
    let at = |c: usize, r: usize| img.get(c, r, 0);
    let mut ixx = vec![0.0f32; w * h];
    let mut iyy = vec![0.0f32; w * h];
    let mut ixy = vec![0.0f32; w * h];
    for r in 1..h.saturating_sub(1) {
        for c in 1..w.saturating_sub(1) {
            let gx = 0.5 * (at(c + 1, r) - at(c - 1, r));
            let gy = 0.5 * (at(c, r + 1) - at(c, r - 1));
            if gx.is_nan() || gy.is_nan() {
                continue;
            }
            let i = r * w + c;
            ixx[i] = gx * gx;
            iyy[i] = gy * gy;
            ixy[i] = gx * gy;
        }
    }
    let sxx = box_sum(&ixx, w, h, 2);
    let syy = box_sum(&iyy, w, h, 2);
    let sxy = box_sum(&ixy, w, h, 2);
    (0..w * h)
        .map(|i| {
            let (a, b, c) = (sxx[i], syy[i], sxy[i]);
            a * b - c * c - 0.04 * (a + b) * (a + b)
        })
        .collect()
}

/// Sum over a `(2r+1)²` box, clamped at the borders.
fn box_sum(src: &[f32], w: usize, h: usize, r: usize) -> Vec<f32> {
    let mut tmp = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let (lo, hi) = (x.saturating_sub(r), (x + r).min(w - 1));
            tmp[y * w + x] = src[y * w + lo..=y * w + hi].iter().sum();
        }
    }
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        let (lo, hi) = (y.saturating_sub(r), (y + r).min(h - 1));
        for x in 0..w {
            out[y * w + x] = (lo..=hi).map(|yy| tmp[yy * w + x]).sum();
        }
    }
    out
}

/// Zero-mean, unit-norm patch, or `None` on nodata or flat texture.
fn patch_descriptor(img: &Raster, col: usize, row: usize, half: usize) -> Option<Vec<f32>> {
    let mut v = Vec::with_capacity((2 * half + 1).pow(2));
    for r in row - half..=row + half {
        for c in col - half..=col + half {
            let x = img.get(c, r, 0);
            if x.is_nan() {
                return None;
            }
            v.push(x);
        }
    }
    let mean = v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64;
    let norm = v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>().sqrt();
    if norm < 1e-6 {
        return None;
    }
    Some(v.iter().map(|&x| ((x as f64 - mean) / norm) as f32).collect())
}

fn detect(img: &Raster, cfg: &MatchConfig) -> Vec<Keypoint> {
    let (w, h) = img.dims();
    let resp = harris_response(img);
    let max = resp.iter().cloned().fold(0.0f32, f32::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let tau = cfg.corner_tau as f32 * max;
    let half = cfg.window / 2;
    let border = half.max(cfg.nms_radius) + 1;
    let nr = cfg.nms_radius as isize;
    let mut found: Vec<(f32, usize, usize)> = (border..h.saturating_sub(border))
        .into_par_iter()
        .flat_map_iter(|r| {
            let resp = &resp;
            (border..w.saturating_sub(border)).filter_map(move |c| {
                let v = resp[r * w + c];
                if v <= tau {
                    return None;
                }
                for dr in -nr..=nr {
                    for dc in -nr..=nr {
                        if dr == 0 && dc == 0 {
                            continue;
                        }
                        let (rr, cc) = ((r as isize + dr) as usize, (c as isize + dc) as usize);
                        let o = resp[rr * w + cc];
                        // ties go to the earlier pixel in raster order
                        if o > v || (o == v && (rr, cc) < (r, c)) {
                            return None;
                        }
                    }
                }
                Some((v, c, r))
            })
        })
        .collect();
    found.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.2, a.1).cmp(&(b.2, b.1))));
    found.truncate(cfg.max_keypoints);
    found
        .into_iter()
        .filter_map(|(_, col, row)| {
            patch_descriptor(img, col, row, half).map(|descriptor| Keypoint { col, row, descriptor })
        })
        .collect()
}

#[inline]
fn zncc(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// For every query keypoint: best candidate index, its ZNCC, and whether it
/// passes the distance-ratio test.
fn best_candidates(
    query: &[Keypoint],
    cands: &[Keypoint],
    cfg: &MatchConfig,
) -> Vec<Option<(usize, f32, bool)>> {
    query
        .par_iter()
        .map(|q| {
            let mut best: Option<(usize, f32)> = None;
            let mut second = f32::NEG_INFINITY;
            for (j, c) in cands.iter().enumerate() {
                if let Some(r) = cfg.max_offset {
                    let d = (q.col as f64 - c.col as f64).hypot(q.row as f64 - c.row as f64);
                    if d > r {
                        continue;
                    }
                }
                let s = zncc(&q.descriptor, &c.descriptor);
                match best {
                    Some((_, bs)) if s <= bs => second = second.max(s),
                    _ => {
                        if let Some((_, bs)) = best {
                            second = second.max(bs);
                        }
                        best = Some((j, s));
                    }
                }
            }
            best.map(|(j, s)| {
                // Euclidean distance between unit descriptors
                let d1 = (2.0 * (1.0 - s)).max(0.0).sqrt();
                let d2 = (2.0 * (1.0 - second)).max(0.0).sqrt();
                let passes = second == f32::NEG_INFINITY || (d1 as f64) < cfg.ratio * d2 as f64;
                (j, s, passes)
            })
        })
        .collect()
}

/// Role-symmetric ordering key, so RANSAC sees the same sequence whichever
/// image is called left.
fn symmetric_key(m: &Match) -> [f64; 4] {
    [
        m.left.row + m.right.row,
        m.left.col + m.right.col,
        m.left.row.min(m.right.row),
        m.left.col.min(m.right.col),
    ]
}

/// Keeps the matches within `inlier_px` of the dominant translation.
pub fn translation_ransac(mut matches: Vec<Match>, cfg: &MatchConfig) -> Vec<Match> {
    if matches.is_empty() {
        return matches;
    }
    matches.sort_by(|a, b| {
        symmetric_key(a)
            .iter()
            .zip(symmetric_key(b).iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let inliers_of = |t: (f64, f64)| -> usize {
        matches
            .iter()
            .filter(|m| {
                (m.right.col - m.left.col - t.0).hypot(m.right.row - m.left.row - t.1) <= cfg.inlier_px
            })
            .count()
    };
    let mut best = (0usize, (0.0, 0.0));
    for _ in 0..cfg.ransac_iters {
        let m = &matches[rng.gen_range(0..matches.len())];
        let t = (m.right.col - m.left.col, m.right.row - m.left.row);
        let n = inliers_of(t);
        if n > best.0 {
            best = (n, t);
        }
    }
    let t = best.1;
    matches.retain(|m| {
        (m.right.col - m.left.col - t.0).hypot(m.right.row - m.left.row - t.1) <= cfg.inlier_px
    });
    matches
}

/// Harris corners matched by ZNCC with mutual-best and ratio tests, then
/// filtered to the dominant translation. Output is sorted by `(v_L, u_L)`.
pub fn classic_match(a: &Raster, b: &Raster, cfg: &MatchConfig) -> Result<MatchSet> {
    for img in [a, b] {
        if img.channels() != 1 {
            return Err(Error::InvalidInput("classic_match needs single-channel images".into()));
        }
        if img.width().min(img.height()) < 32 {
            return Err(Error::ImageTooSmall(img.width(), img.height()));
        }
    }
    if cfg.window % 2 == 0 || cfg.window < 3 {
        return Err(Error::InvalidInput(format!("match window {} must be odd and >= 3", cfg.window)));
    }
    let (ka, kb) = rayon::join(|| detect(a, cfg), || detect(b, cfg));
    let ab = best_candidates(&ka, &kb, cfg);
    let ba = best_candidates(&kb, &ka, cfg);
    let mut matches = Vec::new();
    for (i, cand) in ab.iter().enumerate() {
        let Some((j, s, pass_ab)) = *cand else { continue };
        let Some((back, _, pass_ba)) = ba[j] else { continue };
        if back == i && pass_ab && pass_ba {
            matches.push(Match::new(
                ka[i].col as f64,
                ka[i].row as f64,
                kb[j].col as f64,
                kb[j].row as f64,
                s.clamp(0.0, 1.0) as f64,
            ));
        }
    }
    let mut kept = translation_ransac(matches, cfg);
    kept.sort_by(|x, y| {
        x.left.row.total_cmp(&y.left.row).then(x.left.col.total_cmp(&y.left.col))
    });
    Ok(MatchSet::new(kept, MatchSource::BuiltIn))
}
