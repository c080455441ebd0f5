//! Pair labeling from acquisition dates and match counts, and seeded
//! sampling of training manifests.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, NaiveDate, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const YEAR_DAYS: f64 = 365.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub image_id: String,
    pub aoi_id: String,
    /// ISO-8601 date or date-time, UTC.
    pub acq_date: String,
    #[serde(default)]
    pub rpc_path: Option<String>,
    #[serde(default)]
    pub image_path: Option<String>,
}

impl ImageMeta {
    pub fn acquired(&self) -> Result<DateTime<Utc>> {
        parse_date(&self.acq_date)
    }
}

pub fn parse_date(s: &str) -> Result<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(d) = DateTime::parse_from_rfc3339(s) {
        return Ok(d.with_timezone(&Utc));
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight exists").and_utc())
        .map_err(|_| Error::InvalidInput(format!("not an ISO-8601 date: {s:?}")))
}

/// Absolute gap in days.
pub fn raw_gap(d1: DateTime<Utc>, d2: DateTime<Utc>) -> f64 {
    (d1 - d2).num_seconds().unsigned_abs() as f64 / 86_400.0
}

/// Gap folded onto half a year: `min(g mod 365.25, 365.25 − g mod 365.25)`.
pub fn fold_gap(g: f64) -> f64 {
    let m = g.abs().rem_euclid(YEAR_DAYS);
    m.min(YEAR_DAYS - m)
}

pub fn seasonal_gap(d1: DateTime<Utc>, d2: DateTime<Utc>) -> f64 {
    fold_gap(raw_gap(d1, d2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Diachronic,
    Synchronic,
    Unlabeled,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Diachronic => "diachronic",
            Label::Synchronic => "synchronic",
            Label::Unlabeled => "unlabeled",
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurateConfig {
    pub gap_thresh: f64,
    pub match_thresh: f64,
    /// When set, the match threshold becomes this many matches per
    /// megapixel of overlap.
    #[serde(default)]
    pub matches_per_mpx: Option<f64>,
}

impl Default for CurateConfig {
    fn default() -> Self {
        CurateConfig { gap_thresh: 30.0, match_thresh: 40.0, matches_per_mpx: None }
    }
}

impl CurateConfig {
    pub fn match_threshold(&self, area_mpx: Option<f64>) -> f64 {
        match (self.matches_per_mpx, area_mpx) {
            (Some(k), Some(a)) => k * a,
            _ => self.match_thresh,
        }
    }

    /// Diachronic: folded gap above the threshold and few matches.
    /// Synchronic: folded gap within it and enough matches.
    pub fn label(&self, gap_days: f64, n_matches: usize, area_mpx: Option<f64>) -> Label {
        let few = (n_matches as f64) < self.match_threshold(area_mpx);
        match (gap_days > self.gap_thresh, few) {
            (true, true) => Label::Diachronic,
            (false, false) => Label::Synchronic,
            _ => Label::Unlabeled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairLabel {
    pub a: String,
    pub b: String,
    pub gap_days: f64,
    pub raw_gap_days: f64,
    pub n_matches: usize,
    pub label: Label,
    /// Raw gap says "far apart" while the folded gap says "same season".
    pub season_wrap: bool,
}

pub fn label_pair(a: &ImageMeta, b: &ImageMeta, n_matches: usize, cfg: &CurateConfig) -> Result<PairLabel> {
    let raw = raw_gap(a.acquired()?, b.acquired()?);
    let gap = fold_gap(raw);
    Ok(PairLabel {
        a: a.image_id.clone(),
        b: b.image_id.clone(),
        gap_days: gap,
        raw_gap_days: raw,
        n_matches,
        label: cfg.label(gap, n_matches, None),
        season_wrap: raw > cfg.gap_thresh && gap <= cfg.gap_thresh,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub aoi: String,
    pub left_id: String,
    pub right_id: String,
    pub label: Label,
    pub gap_days: f64,
    pub n_matches: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Quotas {
    pub dia_per_aoi: usize,
    pub sync_per_aoi: usize,
}

#[derive(Debug)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    /// `InsufficientPairs` for every AOI and label short of its quota.
    pub warnings: Vec<Error>,
    /// Every labeled candidate pair, including unsampled ones.
    pub labels: Vec<(String, PairLabel)>,
}

impl Manifest {
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(&serde_json::to_string(e).expect("entry serializes"));
            s.push('\n');
        }
        s
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }

    pub fn count(&self, label: Label) -> usize {
        self.entries.iter().filter(|e| e.label == label).count()
    }
}

pub fn read_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Labels every same-AOI pair (match counts computed in parallel) and
/// samples up to the quota of diachronic and synchronic pairs per AOI with a
/// seeded shuffle. AOIs are visited in id order and pairs are ordered by
/// image id, so the manifest depends only on the inputs and the seed.
pub fn build_manifest<F>(images: &[ImageMeta], count: F, quotas: Quotas, seed: u64, cfg: &CurateConfig) -> Result<Manifest>
where
    F: Fn(&ImageMeta, &ImageMeta) -> Result<usize> + Sync,
{
    let mut by_aoi: BTreeMap<&str, Vec<&ImageMeta>> = BTreeMap::new();
    for im in images {
        im.acquired()?;
        by_aoi.entry(&im.aoi_id).or_default().push(im);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    let mut warnings = Vec::new();
    let mut labels = Vec::new();
    for (aoi, mut ims) in by_aoi {
        ims.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        let pairs: Vec<(&ImageMeta, &ImageMeta)> = (0..ims.len())
            .flat_map(|i| (i + 1..ims.len()).map(move |j| (i, j)))
            .map(|(i, j)| (ims[i], ims[j]))
            .collect();
        let labeled: Vec<PairLabel> = pairs
            .par_iter()
            .map(|(a, b)| label_pair(a, b, count(a, b)?, cfg))
            .collect::<Result<_>>()?;
        for (label, quota) in [(Label::Diachronic, quotas.dia_per_aoi), (Label::Synchronic, quotas.sync_per_aoi)] {
            let mut pool: Vec<&PairLabel> = labeled.iter().filter(|p| p.label == label).collect();
            pool.shuffle(&mut rng);
            if pool.len() < quota {
                warnings.push(Error::InsufficientPairs {
                    aoi: aoi.to_owned(),
                    label: label.to_string(),
                    found: pool.len(),
                    wanted: quota,
                });
            }
            for p in pool.into_iter().take(quota) {
                entries.push(ManifestEntry {
                    aoi: aoi.to_owned(),
                    left_id: p.a.clone(),
                    right_id: p.b.clone(),
                    label,
                    gap_days: p.gap_days,
                    n_matches: p.n_matches,
                });
            }
        }
        labels.extend(labeled.into_iter().map(|l| (aoi.to_owned(), l)));
    }
    Ok(Manifest { entries, warnings, labels })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> DateTime<Utc> {
        parse_date(s).unwrap()
    }

    fn meta(id: &str, aoi: &str, date: &str) -> ImageMeta {
        ImageMeta { image_id: id.into(), aoi_id: aoi.into(), acq_date: date.into(), rpc_path: None, image_path: None }
    }

    #[test]
    fn gap_examples() {
        assert_eq!(seasonal_gap(d("2015-01-10"), d("2015-11-20")), 51.25);
        assert_eq!(seasonal_gap(d("2015-03-03"), d("2015-03-03")), 0.0);
        assert_eq!(fold_gap(365.0), 0.25);
        assert_eq!(seasonal_gap(d("2015-11-20"), d("2015-01-10")), 51.25);
        assert!(fold_gap(1000.0) <= YEAR_DAYS / 2.0);
        assert_eq!(raw_gap(d("2015-01-01T12:00:00Z"), d("2015-01-01")), 0.5);
        assert!(parse_date("01/02/2015").is_err());
    }

    #[test]
    fn label_examples() {
        let c = CurateConfig::default();
        assert_eq!(c.label(51.25, 12, None), Label::Diachronic);
        assert_eq!(c.label(5.0, 100, None), Label::Synchronic);
        assert_eq!(c.label(51.25, 100, None), Label::Unlabeled);
        assert_eq!(c.label(5.0, 12, None), Label::Unlabeled);
        let area = CurateConfig { matches_per_mpx: Some(100.0), ..Default::default() };
        assert_eq!(area.label(5.0, 60, Some(0.5)), Label::Synchronic);
        assert_eq!(area.label(5.0, 60, Some(1.0)), Label::Unlabeled);
    }

    #[test]
    fn pair_label_symmetric_and_flags_wrap() {
        let (a, b) = (meta("a", "x", "2014-12-20"), meta("b", "x", "2015-12-25"));
        let c = CurateConfig::default();
        let ab = label_pair(&a, &b, 50, &c).unwrap();
        let ba = label_pair(&b, &a, 50, &c).unwrap();
        assert_eq!((ab.label, ab.gap_days), (ba.label, ba.gap_days));
        assert_eq!(ab.label, Label::Synchronic);
        assert!(ab.season_wrap);
    }

    #[test]
    fn manifest_is_seeded_and_reports_shortfalls() {
        let mut ims = Vec::new();
        for k in 0..8 {
            ims.push(meta(&format!("o{k}"), "OMA", &format!("2015-{:02}-15", k + 1)));
        }
        for k in 0..4 {
            ims.push(meta(&format!("j{k}"), "JAX", &format!("{}-06-01", 2014 + k)));
        }
        // few matches for pairs more than a month apart
        let count = |a: &ImageMeta, b: &ImageMeta| -> Result<usize> {
            let g = seasonal_gap(a.acquired()?, b.acquired()?);
            Ok(if g > 30.0 { 10 } else { 100 })
        };
        let q = Quotas { dia_per_aoi: 5, sync_per_aoi: 2 };
        let c = CurateConfig::default();
        let m1 = build_manifest(&ims, count, q, 7, &c).unwrap();
        let m2 = build_manifest(&ims, count, q, 7, &c).unwrap();
        assert_eq!(m1.to_jsonl(), m2.to_jsonl());
        assert_eq!(read_manifest(&m1.to_jsonl()).unwrap(), m1.entries);
        // JAX dates are anniversaries: synchronic only
        assert!(m1.entries.iter().filter(|e| e.aoi == "JAX").all(|e| e.label == Label::Synchronic));
        assert!(m1.warnings.iter().any(|w| matches!(w, Error::InsufficientPairs { aoi, label, .. } if aoi == "JAX" && label == "diachronic")));
        assert_eq!(m1.entries.iter().filter(|e| e.aoi == "OMA" && e.label == Label::Diachronic).count(), 5);
        let m3 = build_manifest(&ims, count, q, 8, &c).unwrap();
        assert_eq!(m3.entries.len(), m1.entries.len());
    }
}
