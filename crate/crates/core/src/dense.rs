//! Dense disparity: a ZNCC block matcher for rectified pairs and ingestion of
//! maps computed by external tools.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{read_raster, Raster};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatchConfigDense {
    pub d_min: f64,
    pub d_max: f64,
    pub window: usize,
    pub lr_tol: f64,
    pub subpixel: bool,
}

impl Default for MatchConfigDense {
    fn default() -> Self {
        MatchConfigDense { d_min: 0.0, d_max: 128.0, window: 9, lr_tol: 1.0, subpixel: true }
    }
}

impl MatchConfigDense {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_min.is_finite() && self.d_max.is_finite() && self.d_min <= self.d_max)
            || self.d_max - self.d_min > 4096.0
        {
            return Err(Error::BadDisparityRange(self.d_min, self.d_max));
        }
        if self.window < 3 || self.window % 2 == 0 {
            return Err(Error::InvalidInput(format!("window {} must be odd and >= 3", self.window)));
        }
        Ok(())
    }
}

/// Window statistics of one image row band: mean and `1/(σ·n)`, NaN where the
/// window holds nodata or no texture.
fn window_stats(img: &Raster, v: usize, r: usize) -> (Vec<f64>, Vec<f64>) {
    let w = img.width() as usize;
    let n = ((2 * r + 1) * (2 * r + 1)) as f64;
    let mut cs = vec![0.0; w];
    let mut cs2 = vec![0.0; w];
    let mut bad = vec![false; w];
    for k in v - r..=v + r {
        for (u, &x) in img.row(k).iter().enumerate() {
            if x.is_nan() {
                bad[u] = true;
            } else {
                cs[u] += x as f64;
                cs2[u] += (x as f64) * (x as f64);
            }
        }
    }
    let mut mean = vec![f64::NAN; w];
    let mut inv = vec![f64::NAN; w];
    for u in r..w.saturating_sub(r) {
        if bad[u - r..=u + r].iter().any(|&b| b) {
            continue;
        }
        let s: f64 = cs[u - r..=u + r].iter().sum();
        let s2: f64 = cs2[u - r..=u + r].iter().sum();
        let m = s / n;
        let var = s2 - n * m * m;
        if var > 1e-6 * n {
            mean[u] = m;
            inv[u] = 1.0 / var.sqrt();
        }
    }
    (mean, inv)
}

struct Best {
    d: i64,
    s: f64,
    minus: f64,
    plus: f64,
}

impl Best {
    const NONE: Best = Best { d: i64::MIN, s: f64::NEG_INFINITY, minus: f64::NAN, plus: f64::NAN };

    fn refined(&self, subpixel: bool) -> f64 {
        let d = self.d as f64;
        // a perfect correlation already is the integer alignment
        if !subpixel || self.minus.is_nan() || self.plus.is_nan() || self.s >= 1.0 - 1e-9 {
            return d;
        }
        let den = self.minus - 2.0 * self.s + self.plus;
        if den >= 0.0 {
            return d;
        }
        d + (0.5 * (self.minus - self.plus) / den).clamp(-0.5, 0.5)
    }
}

fn match_row(left: &Raster, right: &Raster, v: usize, cfg: &MatchConfigDense, dmin: i64, dmax: i64) -> Vec<f32> {
    let w = left.width() as usize;
    let r = cfg.window / 2;
    let n = ((2 * r + 1) * (2 * r + 1)) as f64;
    let (ml, il) = window_stats(left, v, r);
    let (mr, ir) = window_stats(right, v, r);
    let mut best_l: Vec<Best> = (0..w).map(|_| Best::NONE).collect();
    let mut best_r: Vec<Best> = (0..w).map(|_| Best::NONE).collect();
    let mut prev = vec![f64::NAN; w];
    let mut cur = vec![f64::NAN; w];
    let mut cs = vec![0.0; w];
    let lrows: Vec<&[f32]> = (v - r..=v + r).map(|k| left.row(k)).collect();
    let rrows: Vec<&[f32]> = (v - r..=v + r).map(|k| right.row(k)).collect();

    for d in dmin..=dmax {
        // left pixel u sees right pixel u − d
        let u0 = d.max(0) as usize;
        let u1 = (w as i64 + d.min(0)).max(0) as usize;
        cur.iter_mut().for_each(|x| *x = f64::NAN);
        if u1 >= u0 + 2 * r + 1 {
            cs.iter_mut().for_each(|x| *x = 0.0);
            for (lr, rr) in lrows.iter().zip(&rrows) {
                for u in u0..u1 {
                    let (a, b) = (lr[u], rr[(u as i64 - d) as usize]);
                    if !(a.is_nan() || b.is_nan()) {
                        cs[u] += a as f64 * b as f64;
                    }
                }
            }
            for u in u0 + r..u1 - r {
                let ur = (u as i64 - d) as usize;
                if il[u].is_nan() || ir[ur].is_nan() {
                    continue;
                }
                let s: f64 = cs[u - r..=u + r].iter().sum();
                cur[u] = (s - n * ml[u] * mr[ur]) * il[u] * ir[ur];
            }
        }
        for u in 0..w {
            let bl = &mut best_l[u];
            if bl.d == d - 1 {
                bl.plus = cur[u];
            }
            if cur[u] > bl.s {
                *bl = Best { d, s: cur[u], minus: prev[u], plus: f64::NAN };
            }
        }
        for (ur, br) in best_r.iter_mut().enumerate() {
            // right pixel ur at disparity d pairs with left pixel ur + d
            let at = |buf: &[f64], k: i64| -> f64 {
                if k >= 0 && (k as usize) < w { buf[k as usize] } else { f64::NAN }
            };
            let u = ur as i64 + d;
            if br.d == d - 1 {
                br.plus = at(&cur, u);
            }
            let s = at(&cur, u);
            if s > br.s {
                *br = Best { d, s, minus: at(&prev, u - 1), plus: f64::NAN };
            }
        }
        std::mem::swap(&mut prev, &mut cur);
    }

    let right_d: Vec<f64> = best_r
        .iter()
        .map(|b| if b.d == i64::MIN { f64::NAN } else { b.refined(cfg.subpixel) })
        .collect();
    best_l
        .iter()
        .enumerate()
        .map(|(u, b)| {
            if b.d == i64::MIN {
                return f32::NAN;
            }
            let d = b.refined(cfg.subpixel);
            let ur = (u as f64 - d).round();
            if ur < 0.0 || ur >= w as f64 {
                return f32::NAN;
            }
            let back = right_d[ur as usize];
            if back.is_nan() || (back - d).abs() > cfg.lr_tol {
                return f32::NAN;
            }
            d as f32
        })
        .collect()
}

/// Per pixel, the disparity `d` in `[d_min, d_max]` maximizing the ZNCC
/// between left `(u, v)` and right `(u − d, v)`, kept when the right-to-left
/// search agrees within `lr_tol`. Ties go to the smaller `d`.
pub fn block_match(left: &Raster, right: &Raster, cfg: &MatchConfigDense) -> Result<Raster> {
    cfg.validate()?;
    if left.channels() != 1 || right.channels() != 1 || left.dims() != right.dims() {
        return Err(Error::InvalidInput("block_match needs two single-channel rasters of equal size".into()));
    }
    let (w, h) = left.dims();
    let r = cfg.window / 2;
    let (dmin, dmax) = (cfg.d_min.ceil() as i64, cfg.d_max.floor() as i64);
    if dmin > dmax {
        return Err(Error::BadDisparityRange(cfg.d_min, cfg.d_max));
    }
    let rows: Vec<Vec<f32>> = (0..h)
        .into_par_iter()
        .map(|v| {
            if v < r || v + r >= h {
                vec![f32::NAN; w]
            } else {
                match_row(left, right, v, cfg, dmin, dmax)
            }
        })
        .collect();
    Raster::new(w as u32, h as u32, 1, rows.concat())
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadDisparityOptions {
    /// Flip the sign for tools that emit `u_R − u`.
    pub negate: bool,
    /// Reject maps holding both negative and positive disparities.
    pub strict_unipolar: bool,
}

pub fn check_unipolar(d: &Raster) -> Result<()> {
    if let Some((min, max)) = d.valid_range(0) {
        if min < 0.0 && max > 0.0 {
            return Err(Error::BipolarDisparity { min, max });
        }
    }
    Ok(())
}

pub fn load_disparity(path: impl AsRef<Path>, opts: LoadDisparityOptions) -> Result<Raster> {
    let mut d = read_raster(path)?;
    if d.channels() != 1 {
        return Err(Error::InvalidRaster(format!("disparity must have 1 channel, found {}", d.channels())));
    }
    if opts.negate {
        d.data_mut().iter_mut().for_each(|x| *x = -*x);
    }
    if opts.strict_unipolar {
        check_unipolar(&d)?;
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::write_raster;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(w: u32, h: u32, seed: u64) -> Raster {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Raster::from_fn(w, h, |_, _| rng.gen_range(0.0..255.0))
    }

    fn shifted(src: &Raster, k: i64) -> Raster {
        let w = src.width() as i64;
        Raster::from_fn(src.width(), src.height(), |c, r| {
            let x = c as i64 + k;
            if x >= 0 && x < w { src.get(x as usize, r, 0) } else { f32::NAN }
        })
    }

    #[test]
    fn pure_shift_is_exact() {
        let left = noise(80, 40, 1);
        // right(u) = left(u + k): left pixel u matches right u − k
        let k = 6;
        let right = shifted(&left, k);
        let right = Raster::from_fn(80, 40, |c, r| {
            let x = c as i64 + k;
            if x < 80 { left.get(x as usize, r, 0) } else { right.get(c, r, 0) }
        });
        let cfg = MatchConfigDense { d_min: 0.0, d_max: 12.0, ..Default::default() };
        let d = block_match(&left, &right, &cfg).unwrap();
        let mut n = 0;
        for v in 6..34 {
            for u in 20..74 {
                assert_eq!(d.get(u, v, 0), k as f32, "({u},{v})");
                n += 1;
            }
        }
        assert!(n > 0);
    }

    #[test]
    fn textureless_is_nodata() {
        let flat = Raster::filled(40, 30, 1, 77.0);
        let d = block_match(&flat, &flat, &MatchConfigDense { d_max: 8.0, ..Default::default() }).unwrap();
        assert_eq!(d.valid_count(), 0);
    }

    #[test]
    fn bounds_and_range_errors() {
        let a = noise(60, 30, 2);
        let b = noise(60, 30, 3);
        let cfg = MatchConfigDense { d_min: -3.0, d_max: 5.0, lr_tol: 100.0, ..Default::default() };
        let d = block_match(&a, &b, &cfg).unwrap();
        assert!(d.data().iter().filter(|x| !x.is_nan()).all(|&x| (-3.5..=5.5).contains(&x)));
        let bad = MatchConfigDense { d_min: 4.0, d_max: 1.0, ..Default::default() };
        assert!(matches!(block_match(&a, &b, &bad), Err(Error::BadDisparityRange(..))));
        let even = MatchConfigDense { window: 8, ..Default::default() };
        assert!(block_match(&a, &b, &even).is_err());
    }

    #[test]
    fn shift_equivariance() {
        let base = noise(100, 30, 4);
        let right = shifted(&base, 3);
        let cfg = MatchConfigDense { d_min: 0.0, d_max: 8.0, ..Default::default() };
        let d0 = block_match(&base, &right, &cfg).unwrap();
        let (b2, r2) = (shifted(&base, 5), shifted(&right, 5));
        let d1 = block_match(&b2, &r2, &cfg).unwrap();
        for v in 5..25 {
            for u in 20..80 {
                assert_eq!(d1.get(u, v, 0), d0.get(u + 5, v, 0));
            }
        }
    }

    #[test]
    fn subpixel_shift() {
        // smooth texture shifted by 2.5 px
        let f = |x: f64, y: f64| 128.0 + 60.0 * (x * 0.37).sin() * (y * 0.23).cos() + 40.0 * (x * 0.11 + y * 0.05).sin();
        let left = Raster::from_fn(80, 30, |c, r| f(c as f64, r as f64) as f32);
        let right = Raster::from_fn(80, 30, |c, r| f(c as f64 + 2.5, r as f64) as f32);
        let cfg = MatchConfigDense { d_min: 0.0, d_max: 6.0, ..Default::default() };
        let d = block_match(&left, &right, &cfg).unwrap();
        let v: Vec<f32> = (20..60).map(|u| d.get(u, 15, 0)).filter(|x| !x.is_nan()).collect();
        assert!(v.len() > 30);
        let mean = v.iter().sum::<f32>() / v.len() as f32;
        assert!((mean - 2.5).abs() < 0.15, "{mean}");
    }

    #[test]
    fn load_options() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.pfm");
        let d = Raster::new(3, 1, 1, vec![1.0, -2.0, f32::NAN]).unwrap();
        write_raster(&d, &p, crate::raster::RasterFormat::Pfm).unwrap();
        let back = load_disparity(&p, LoadDisparityOptions::default()).unwrap();
        assert_eq!(back.data()[..2], d.data()[..2]);
        let neg = load_disparity(&p, LoadDisparityOptions { negate: true, ..Default::default() }).unwrap();
        assert_eq!(neg.data()[..2], [-1.0, 2.0]);
        assert!(matches!(
            load_disparity(&p, LoadDisparityOptions { strict_unipolar: true, ..Default::default() }),
            Err(Error::BipolarDisparity { .. })
        ));
    }
}
