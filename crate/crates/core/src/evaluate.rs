//! DSM accuracy against a reference: per-pair MAE/RMSE with margin and
//! vegetation exclusion, per-AOI medians and dataset mean ± std.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::MapCrs;
use crate::raster::{Raster, VegetationMask};

/// Compensated summation, accumulated in call order.
#[derive(Debug, Default, Clone, Copy)]
pub struct KahanSum {
    sum: f64,
    c: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let y = x - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pair_id: String,
    pub mae_m: f64,
    pub rmse_m: f64,
    /// Fraction of evaluable reference pixels with a valid prediction.
    pub completeness: f64,
    pub n_eval: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AoiScore {
    pub aoi_id: String,
    pub median_mae_m: f64,
    pub pair_reports: Vec<EvalReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub aois: Vec<AoiScore>,
    pub dataset_mean: f64,
    /// Population standard deviation of the AOI scores.
    pub dataset_std: f64,
}

/// Mean of the two central values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Prediction resampled (nearest) onto the reference grid.
fn resample_onto(pred: &Raster, reference: &Raster) -> Result<Raster> {
    match (pred.geotransform(), reference.geotransform()) {
        (None, None) => {
            if pred.dims() != reference.dims() {
                return Err(Error::GridMismatch(format!(
                    "ungeoreferenced rasters of different size {:?} and {:?}",
                    pred.dims(),
                    reference.dims()
                )));
            }
            Ok(pred.clone())
        }
        (Some(gp), Some(gr)) => {
            gp.validate().and(gr.validate()).map_err(|e| Error::GridMismatch(e.to_string()))?;
            let same_crs = pred.crs() == reference.crs();
            let (cp, cr) = if same_crs {
                (None, None)
            } else {
                let parse = |t| MapCrs::from_tag(t).map_err(|e| Error::GridMismatch(e.to_string()));
                (Some(parse(pred.crs())?), Some(parse(reference.crs())?))
            };
            Ok(Raster::from_fn(reference.width(), reference.height(), |c, r| {
                let (mut x, mut y) = gr.pixel_center(c, r);
                if let (Some(cp), Some(cr)) = (cp, cr) {
                    let (lon, lat) = cr.to_geo(x, y);
                    (x, y) = cp.to_map(lon, lat);
                }
                let (pc, pr) = gp.invert(x, y);
                pred.sample_nearest(pc - 0.5, pr - 0.5, 0).unwrap_or(f32::NAN)
            }))
        }
        _ => Err(Error::GridMismatch("only one of the rasters is georeferenced".into())),
    }
}

/// MAE and RMSE over reference pixels that are outside the `margin` band,
/// not vegetation, valid in the reference and valid in the prediction.
pub fn dsm_mae(
    pair_id: &str,
    pred: &Raster,
    reference: &Raster,
    veg: Option<&VegetationMask>,
    margin: usize,
) -> Result<EvalReport> {
    if pred.channels() != 1 || reference.channels() != 1 {
        return Err(Error::InvalidInput("dsm_mae needs single-channel rasters".into()));
    }
    if let Some(m) = veg {
        if m.raster().dims() != reference.dims() {
            return Err(Error::GridMismatch("vegetation mask does not match the reference grid".into()));
        }
    }
    let p = resample_onto(pred, reference)?;
    let (w, h) = reference.dims();
    let (mut abs, mut sq) = (KahanSum::default(), KahanSum::default());
    let (mut evaluable, mut n) = (0usize, 0usize);
    for r in margin..h.saturating_sub(margin) {
        for c in margin..w.saturating_sub(margin) {
            let z = reference.get(c, r, 0);
            if z.is_nan() || veg.is_some_and(|m| m.is_vegetation(c, r)) {
                continue;
            }
            evaluable += 1;
            let q = p.get(c, r, 0);
            if q.is_nan() {
                continue;
            }
            let e = q as f64 - z as f64;
            abs.add(e.abs());
            sq.add(e * e);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoEvaluablePixels);
    }
    Ok(EvalReport {
        pair_id: pair_id.to_owned(),
        mae_m: abs.total() / n as f64,
        rmse_m: (sq.total() / n as f64).sqrt(),
        completeness: n as f64 / evaluable as f64,
        n_eval: n,
    })
}

/// AOI score = median pair MAE; dataset mean and population std over AOI
/// scores. Output AOIs are sorted by id.
pub fn aggregate(groups: &[(String, Vec<EvalReport>)]) -> Result<Summary> {
    if groups.is_empty() {
        return Err(Error::EmptyGroup("no AOIs".into()));
    }
    let mut by_aoi: BTreeMap<&str, Vec<EvalReport>> = BTreeMap::new();
    for (aoi, reports) in groups {
        by_aoi.entry(aoi).or_default().extend(reports.iter().cloned());
    }
    let mut aois = Vec::with_capacity(by_aoi.len());
    for (aoi, mut reports) in by_aoi {
        let maes: Vec<f64> = reports.iter().map(|r| r.mae_m).collect();
        let med = median(&maes).ok_or_else(|| Error::EmptyGroup(aoi.to_owned()))?;
        reports.sort_by(|a, b| a.pair_id.cmp(&b.pair_id).then(a.mae_m.total_cmp(&b.mae_m)));
        aois.push(AoiScore { aoi_id: aoi.to_owned(), median_mae_m: med, pair_reports: reports });
    }
    let mut scores: Vec<f64> = aois.iter().map(|a| a.median_mae_m).collect();
    scores.sort_by(f64::total_cmp);
    let k = scores.len() as f64;
    let mut s = KahanSum::default();
    scores.iter().for_each(|&x| s.add(x));
    let mean = s.total() / k;
    let mut v = KahanSum::default();
    scores.iter().for_each(|&x| v.add((x - mean) * (x - mean)));
    Ok(Summary { aois, dataset_mean: mean, dataset_std: (v.total() / k).sqrt() })
}

/// Disparity MAE and RMSE in pixels over jointly valid pixels outside the
/// margin.
pub fn disp_error(pred: &Raster, gt: &Raster, margin: usize) -> Result<(f64, f64)> {
    if pred.dims() != gt.dims() || pred.channels() != 1 || gt.channels() != 1 {
        return Err(Error::FrameMismatch(format!("{:?} vs {:?}", pred.dims(), gt.dims())));
    }
    let (w, h) = gt.dims();
    let (mut abs, mut sq, mut n) = (KahanSum::default(), KahanSum::default(), 0usize);
    for r in margin..h.saturating_sub(margin) {
        for c in margin..w.saturating_sub(margin) {
            let (a, b) = (pred.get(c, r, 0), gt.get(c, r, 0));
            if a.is_nan() || b.is_nan() {
                continue;
            }
            let e = a as f64 - b as f64;
            abs.add(e.abs());
            sq.add(e * e);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoEvaluablePixels);
    }
    Ok((abs.total() / n as f64, (sq.total() / n as f64).sqrt()))
}
