//! Subcommand bodies. Each reads its inputs through the digest check,
//! writes its outputs and leaves a `PipelineMeta` sidecar next to them.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::meta::{io_context, meta_path, read_verified, PipelineMeta};
use super::*;
use crate::curate::{build_manifest, CurateConfig, ImageMeta, Label, Quotas};
use crate::dense::{block_match, load_disparity, LoadDisparityOptions, MatchConfigDense};
use crate::error::Result;
use crate::evaluate::{aggregate, dsm_mae, median, EvalReport, Summary};
use crate::gt::{fill_holes, gt_disparity, GtConfig};
use crate::plot::{plot, ValueRange};
use crate::raster::{decode, encode, read_raster, Raster, RasterFormat, VegetationMask};
use crate::rectify::{rectify_pair, MatchInput, RectGeometry, RectifyConfig};
use crate::rpc::RpcModel;
use crate::sparse_match::{classic_match, match_count, parse_matches, MatchConfig, MatchSource};
use crate::synth::{make_scene, SceneSpec};
use crate::triangulate::{grid_dsm, triangulate, GridSpec};

pub const RECT_LEFT: &str = "rect_left.dsrast";
pub const RECT_RIGHT: &str = "rect_right.dsrast";
pub const RECT_META: &str = "meta.json";
pub const RPC_LEFT: &str = "rpc_left.json";
pub const RPC_RIGHT: &str = "rpc_right.json";

/// Contents of `meta.json` in a rectification directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectDirMeta {
    #[serde(flatten)]
    pub geometry: RectGeometry,
    pub n_matches: usize,
    pub match_source: MatchSource,
}

/// An evaluation report as written by `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aoi_id: Option<String>,
    #[serde(flatten)]
    pub report: EvalReport,
}

pub(super) fn execute(cmd: Command) -> std::result::Result<(), Failure> {
    match cmd {
        Command::Rectify(a) => rectify(&a).map(drop)?,
        Command::GtDisp(a) => gt_disp(&a)?,
        Command::Match(a) => dense_match(&a)?,
        Command::ImportDisp(a) => import_disp(&a)?,
        Command::Triangulate(a) => triangulate_cmd(&a)?,
        Command::Grid(a) => grid(&a)?,
        Command::Eval(a) => eval(&a).map(drop)?,
        Command::EvalAgg(a) => eval_agg(&a)?,
        Command::Curate(a) => curate(&a)?,
        Command::Synth(a) => synth(&a)?,
        Command::Plot(a) => plot_cmd(&a)?,
        Command::Pipeline(a) => pipeline(a)?,
    }
    Ok(())
}

fn utf8(path: &Path, bytes: Vec<u8>) -> Result<String> {
    String::from_utf8(bytes).map_err(|_| Error::InvalidInput(format!("{} is not UTF-8 text", path.display())))
}

fn load_raster(path: &Path, role: &str, meta: &mut PipelineMeta) -> Result<Raster> {
    let bytes = read_verified(path)?;
    meta.input(role, path, &bytes);
    decode(&bytes)
}

fn parse_rpc_text(text: &str) -> Result<RpcModel> {
    if text.trim_start().starts_with('{') {
        RpcModel::from_json_str(text)
    } else {
        RpcModel::from_keyword_text(text)
    }
}

fn load_rpc(path: &Path, role: &str, meta: &mut PipelineMeta) -> Result<RpcModel> {
    let bytes = read_verified(path)?;
    meta.input(role, path, &bytes);
    parse_rpc_text(&utf8(path, bytes)?)
}

fn save_bytes(path: &Path, bytes: &[u8], role: &str, meta: &mut PipelineMeta) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes).map_err(|e| io_context(e, path))?;
    meta.output(role, path, bytes);
    Ok(())
}

fn save_raster(raster: &Raster, path: &Path, role: &str, meta: &mut PipelineMeta) -> Result<()> {
    let bytes = encode(raster, RasterFormat::from_path(path))?;
    save_bytes(path, &bytes, role, meta)
}

fn save_json(value: &impl Serialize, path: &Path, role: &str, meta: &mut PipelineMeta) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    save_bytes(path, &bytes, role, meta)
}

/// Adds a result entry (counts, statistics) to the recorded parameters.
fn note(meta: &mut PipelineMeta, key: &str, value: impl Serialize) {
    if let serde_json::Value::Object(m) = &mut meta.params {
        m.insert(key.to_string(), serde_json::to_value(value).unwrap_or(serde_json::Value::Null));
    }
}

fn finish(meta: &PipelineMeta, outputs: &[&Path]) -> Result<()> {
    for p in outputs {
        meta.write_for(p)?;
    }
    Ok(())
}

fn dsm_median(dsm: &Raster) -> Result<f64> {
    let v: Vec<f64> = dsm.band(0).data().iter().filter(|x| !x.is_nan()).map(|&x| x as f64).collect();
    median(&v).ok_or(Error::EmptyInput)
}

struct RectDir {
    dir: PathBuf,
    info: RectDirMeta,
    /// Cameras in the order the images were given to `rectify`.
    rpc_a: RpcModel,
    rpc_b: RpcModel,
}

impl RectDir {
    /// Reads the geometry and cameras, checking each file against the
    /// record `rectify` left next to the rectified left image.
    fn open(dir: &Path, meta: &mut PipelineMeta) -> Result<Self> {
        let record_path = meta_path(&dir.join(RECT_LEFT));
        let record = if record_path.is_file() { Some(PipelineMeta::read(&record_path)?) } else { None };
        let mut read = |name: &str| -> Result<String> {
            let p = dir.join(name);
            let bytes = fs::read(&p).map_err(|e| io_context(e, &p))?;
            if let Some(r) = &record {
                r.verify(&p, &bytes)?;
            }
            meta.input(&format!("rect/{name}"), &p, &bytes);
            utf8(&p, bytes)
        };
        let info: RectDirMeta = serde_json::from_str(&read(RECT_META)?)?;
        let rpc_a = parse_rpc_text(&read(RPC_LEFT)?)?;
        let rpc_b = parse_rpc_text(&read(RPC_RIGHT)?)?;
        Ok(RectDir { dir: dir.to_path_buf(), info, rpc_a, rpc_b })
    }

    fn geometry(&self) -> &RectGeometry {
        &self.info.geometry
    }

    fn images(&self, meta: &mut PipelineMeta) -> Result<(Raster, Raster)> {
        let l = load_raster(&self.dir.join(RECT_LEFT), "rect/rect_left", meta)?;
        let r = load_raster(&self.dir.join(RECT_RIGHT), "rect/rect_right", meta)?;
        Ok((l, r))
    }
}

pub(super) fn rectify(a: &RectifyArgs) -> Result<RectGeometry> {
    let mut meta = PipelineMeta::new("rectify", a);
    let left = load_raster(&a.left, "left", &mut meta)?;
    let right = load_raster(&a.right, "right", &mut meta)?;
    let rpc_l = load_rpc(&a.rpc_left, "rpc_left", &mut meta)?;
    let rpc_r = load_rpc(&a.rpc_right, "rpc_right", &mut meta)?;
    let z_avg = match (a.zavg, &a.dsm) {
        (Some(z), _) => z,
        (None, Some(p)) => dsm_median(&load_raster(p, "dsm", &mut meta)?)?,
        (None, None) => 0.5 * (rpc_l.height_off + rpc_r.height_off),
    };
    let input = match &a.matches {
        Some(p) => {
            let bytes = read_verified(p)?;
            meta.input("matches", p, &bytes);
            MatchInput::Original(parse_matches(&utf8(p, bytes)?)?)
        }
        None => MatchInput::Auto,
    };
    let cfg = RectifyConfig { half_range: a.half_range, grid_n: a.grid_n, ..RectifyConfig::default() };
    let res = rectify_pair(&left, &rpc_l, &right, &rpc_r, z_avg, &input, &cfg)?;
    let g = &res.geometry;
    let info = RectDirMeta {
        geometry: g.clone(),
        n_matches: res.n_matches,
        match_source: if a.matches.is_some() { MatchSource::External } else { MatchSource::BuiltIn },
    };
    note(&mut meta, "z_avg_used", z_avg);

    let d = &a.out_dir;
    fs::create_dir_all(d)?;
    save_raster(&res.rect_left, &d.join(RECT_LEFT), "rect_left", &mut meta)?;
    save_raster(&res.rect_right, &d.join(RECT_RIGHT), "rect_right", &mut meta)?;
    save_json(&g.h_l, &d.join("H_L.json"), "h_l", &mut meta)?;
    save_json(&g.h_r, &d.join("H_R.json"), "h_r", &mut meta)?;
    save_json(&info, &d.join(RECT_META), "meta", &mut meta)?;
    save_bytes(&d.join(RPC_LEFT), rpc_l.to_json().as_bytes(), "rpc_left", &mut meta)?;
    save_bytes(&d.join(RPC_RIGHT), rpc_r.to_json().as_bytes(), "rpc_right", &mut meta)?;
    finish(&meta, &[&d.join(RECT_LEFT), &d.join(RECT_RIGHT)])?;
    println!(
        "rectified {}x{} (swapped: {}, t = {:.3}, s = {:.3}, z_avg = {:.2} m, {} matches)",
        g.out_size.0, g.out_size.1, g.swapped, g.t, g.s, g.z_avg, res.n_matches
    );
    Ok(res.geometry)
}

fn gt_disp(a: &GtDispArgs) -> Result<()> {
    let mut meta = PipelineMeta::new("gt-disp", a);
    let rd = RectDir::open(&a.rect_dir, &mut meta)?;
    let dsm = load_raster(&a.dsm, "dsm", &mut meta)?;
    let gt = gt_disparity(rd.geometry(), &dsm, &rd.rpc_a, &rd.rpc_b, &GtConfig::default())?;
    note(&mut meta, "localization_failures", gt.failures);
    save_raster(&gt.disparity, &a.out, "disparity", &mut meta)?;
    let mut outs = vec![a.out.as_path()];
    if let Some(c) = &a.confidence {
        save_raster(&gt.confidence, c, "confidence", &mut meta)?;
        outs.push(c);
    }
    finish(&meta, &outs)?;
    let range = gt.disparity.valid_range(0);
    println!(
        "gt disparity: {} valid pixels, range {:?}, {} localization failures",
        gt.disparity.valid_count(),
        range,
        gt.failures
    );
    Ok(())
}

fn dense_match(a: &MatchArgs) -> Result<()> {
    let mut meta = PipelineMeta::new("match", a);
    let rd = RectDir::open(&a.rect_dir, &mut meta)?;
    let (l, r) = rd.images(&mut meta)?;
    let cfg = MatchConfigDense {
        d_min: a.dmin,
        d_max: a.dmax,
        window: a.window,
        lr_tol: a.lr_tol,
        subpixel: !a.no_subpixel,
    };
    let d = block_match(&l, &r, &cfg)?;
    save_raster(&d, &a.out, "disparity", &mut meta)?;
    finish(&meta, &[&a.out])?;
    println!("disparity: {} of {} pixels matched", d.valid_count(), d.data().len());
    Ok(())
}

fn import_disp(a: &ImportDispArgs) -> Result<()> {
    let mut meta = PipelineMeta::new("import-disp", a);
    let bytes = read_verified(&a.input)?;
    meta.input("disparity", &a.input, &bytes);
    let d = load_disparity(&a.input, LoadDisparityOptions { negate: a.negate, strict_unipolar: a.strict_unipolar })?;
    if let Some(dir) = &a.rect_dir {
        let rd = RectDir::open(dir, &mut meta)?;
        let want = rd.geometry().out_size;
        if (d.width(), d.height()) != want {
            return Err(Error::FrameMismatch(format!(
                "disparity is {}x{}, rectified frame is {}x{}",
                d.width(),
                d.height(),
                want.0,
                want.1
            )));
        }
    }
    save_raster(&d, &a.out, "disparity", &mut meta)?;
    finish(&meta, &[&a.out])?;
    println!("imported disparity: {} valid pixels, range {:?}", d.valid_count(), d.valid_range(0));
    Ok(())
}

fn triangulate_cmd(a: &TriangulateArgs) -> Result<()> {
    let mut meta = PipelineMeta::new("triangulate", a);
    let rd = RectDir::open(&a.rect_dir, &mut meta)?;
    let disp = load_raster(&a.disp, "disparity", &mut meta)?;
    let z = rd.geometry().z_avg;
    let bounds = [a.hmin.unwrap_or(z - 500.0), a.hmax.unwrap_or(z + 500.0)];
    let alt = triangulate(&disp, rd.geometry(), &rd.rpc_a, &rd.rpc_b, bounds)?;
    note(&mut meta, "h_bounds", bounds);
    note(&mut meta, "stats", alt.stats);
    save_raster(&alt.raster, &a.out, "altitude", &mut meta)?;
    finish(&meta, &[&a.out])?;
    let s = alt.stats;
    println!(
        "triangulated {} pixels ({} no convergence, {} out of bounds, {} other failures)",
        s.triangulated, s.no_convergence, s.out_of_bounds, s.other_failures
    );
    Ok(())
}

fn grid(a: &GridArgs) -> Result<()> {
    let mut meta = PipelineMeta::new("grid", a);
    let alt = load_raster(&a.alt, "altitude", &mut meta)?;
    let rd = RectDir::open(&a.rect_dir, &mut meta)?;
    let spec = GridSpec { cell: a.cell, agg: a.agg, frame: None };
    let mut dsm = grid_dsm(&alt, rd.geometry(), &rd.rpc_a, &rd.rpc_b, &spec)?;
    if let Some(radius) = a.fill {
        let (w, h) = dsm.dims();
        let filled = fill_holes(dsm.data(), w, h, radius);
        dsm = Raster::new(dsm.width(), dsm.height(), 1, filled)?.with_georef_of(&dsm);
    }
    save_raster(&dsm, &a.out, "dsm", &mut meta)?;
    finish(&meta, &[&a.out])?;
    println!("dsm {}x{} at {} m, {} valid cells", dsm.width(), dsm.height(), a.cell, dsm.valid_count());
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<EvalReport> {
    let mut meta = PipelineMeta::new("eval", a);
    let pred = load_raster(&a.pred, "pred", &mut meta)?;
    let reference = load_raster(&a.reference, "ref", &mut meta)?;
    let veg = match &a.veg {
        Some(p) => Some(VegetationMask::new(load_raster(p, "veg", &mut meta)?)?),
        None => None,
    };
    let pair_id = a.pair_id.clone().unwrap_or_else(|| {
        a.pred.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    });
    let report = dsm_mae(&pair_id, &pred, &reference, veg.as_ref(), a.margin)?;
    if let Some(j) = &a.json {
        let file = ReportFile { aoi_id: a.aoi.clone(), report: report.clone() };
        save_json(&file, j, "report", &mut meta)?;
        finish(&meta, &[j])?;
    }
    println!(
        "{}: MAE {:.4} m, RMSE {:.4} m, completeness {:.4} ({} pixels)",
        report.pair_id, report.mae_m, report.rmse_m, report.completeness, report.n_eval
    );
    Ok(report)
}

fn json_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> =
        fs::read_dir(dir).map_err(|e| io_context(e, dir))?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            json_files(&p, out)?;
        } else {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            if name.ends_with(".json") && !name.ends_with(meta::META_SUFFIX) {
                out.push(p);
            }
        }
    }
    Ok(())
}

fn eval_agg(a: &EvalAggArgs) -> Result<()> {
    let mut meta = PipelineMeta::new("eval-agg", a);
    let mut files = Vec::new();
    json_files(&a.reports, &mut files)?;
    let mut groups: BTreeMap<String, Vec<EvalReport>> = BTreeMap::new();
    for p in files {
        let bytes = read_verified(&p)?;
        let Ok(file) = serde_json::from_slice::<ReportFile>(&bytes) else {
            diagnostic("warning", "SkippedFile", &format!("{} is not an evaluation report", p.display()));
            continue;
        };
        let rel = p.strip_prefix(&a.reports).unwrap_or(&p).display().to_string();
        meta.input(&rel, &p, &bytes);
        let parent = p.parent().filter(|d| *d != a.reports.as_path()).and_then(|d| d.file_name());
        let aoi = match (file.aoi_id, parent) {
            (Some(id), _) => id,
            (None, Some(d)) => d.to_string_lossy().into_owned(),
            (None, None) => {
                return Err(Error::InvalidInput(format!("{}: no aoi_id and no AOI directory", p.display())))
            }
        };
        groups.entry(aoi).or_default().push(file.report);
    }
    let groups: Vec<(String, Vec<EvalReport>)> = groups.into_iter().collect();
    let summary: Summary = aggregate(&groups)?;
    for s in &summary.aois {
        println!("{}: median MAE {:.4} m over {} pairs", s.aoi_id, s.median_mae_m, s.pair_reports.len());
    }
    println!("dataset: {:.4} ± {:.4} m over {} AOIs", summary.dataset_mean, summary.dataset_std, summary.aois.len());
    if let Some(j) = &a.json {
        save_json(&summary, j, "summary", &mut meta)?;
        finish(&meta, &[j])?;
    }
    Ok(())
}

fn curate(a: &CurateArgs) -> Result<()> {
    let mut meta = PipelineMeta::new("curate", a);
    let bytes = read_verified(&a.meta)?;
    meta.input("images", &a.meta, &bytes);
    let images: Vec<ImageMeta> = serde_json::from_slice(&bytes)?;
    let base = a.meta.parent().map(Path::to_path_buf).unwrap_or_default();
    let (from_files, from_matcher) = (AtomicUsize::new(0), AtomicUsize::new(0));
    let count = |x: &ImageMeta, y: &ImageMeta| -> Result<usize> {
        if let Some(dir) = &a.matches_dir {
            for name in [format!("{}_{}.csv", x.image_id, y.image_id), format!("{}_{}.csv", y.image_id, x.image_id)] {
                let p = dir.join(name);
                if p.is_file() {
                    from_files.fetch_add(1, Ordering::Relaxed);
                    let text = fs::read_to_string(&p).map_err(|e| io_context(e, &p))?;
                    return match parse_matches(&text) {
                        Ok(m) => Ok(match_count(&m)),
                        Err(Error::EmptyFile) => Ok(0),
                        Err(e) => Err(e),
                    };
                }
            }
        }
        match (&x.image_path, &y.image_path) {
            (Some(pa), Some(pb)) => {
                from_matcher.fetch_add(1, Ordering::Relaxed);
                let ra = read_raster(base.join(pa))?;
                let rb = read_raster(base.join(pb))?;
                Ok(classic_match(&ra, &rb, &MatchConfig::default())?.len())
            }
            _ => Err(Error::InvalidInput(format!(
                "pair {} / {} has neither a match file nor image paths",
                x.image_id, y.image_id
            ))),
        }
    };
    let cfg = CurateConfig { gap_thresh: a.gap_thresh, match_thresh: a.match_thresh, matches_per_mpx: a.matches_per_mpx };
    let quotas = Quotas { dia_per_aoi: a.dia_per_aoi, sync_per_aoi: a.sync_per_aoi };
    let manifest = build_manifest(&images, count, quotas, a.seed, &cfg)?;
    for w in &manifest.warnings {
        diagnostic("warning", w.name(), &w.to_string());
    }
    note(&mut meta, "pairs_counted_from_csv", from_files.load(Ordering::Relaxed));
    note(&mut meta, "pairs_counted_by_builtin_matcher", from_matcher.load(Ordering::Relaxed));
    save_bytes(&a.out, manifest.to_jsonl().as_bytes(), "manifest", &mut meta)?;
    finish(&meta, &[&a.out])?;
    let wraps = manifest.labels.iter().filter(|(_, l)| l.season_wrap).count();
    println!(
        "{} candidate pairs; manifest holds {} diachronic and {} synchronic pairs ({} season-wrapped candidates)",
        manifest.labels.len(),
        manifest.count(Label::Diachronic),
        manifest.count(Label::Synchronic),
        wraps
    );
    Ok(())
}

fn view_name(i: usize) -> String {
    match i {
        0 => "left".into(),
        1 => "right".into(),
        _ => format!("view{i}"),
    }
}

fn synth(a: &SynthArgs) -> Result<()> {
    let mut meta = PipelineMeta::new("synth", a);
    let spec = match (&a.spec, a.preset) {
        (Some(p), _) => {
            let bytes = read_verified(p)?;
            meta.input("spec", p, &bytes);
            serde_json::from_slice(&bytes)?
        }
        (None, Some(Preset::Flat)) => SceneSpec { season_decorrelation: a.decorrelation, ..SceneSpec::flat_scene(300.0) },
        (None, _) => SceneSpec::box_scene(a.decorrelation),
    };
    let scene = make_scene(&spec)?;
    let d = &a.out_dir;
    fs::create_dir_all(d)?;
    let mut rasters = vec![d.join("dsm.dsrast")];
    save_raster(&scene.dsm, &rasters[0], "dsm", &mut meta)?;
    save_json(&spec, &d.join("scene.json"), "scene", &mut meta)?;
    for i in 0..spec.cameras.len() {
        let name = view_name(i);
        let r = scene.render_view(i)?;
        let (img, alt) = (d.join(format!("{name}.dsrast")), d.join(format!("{name}_alt.dsrast")));
        save_raster(&r.image, &img, &name, &mut meta)?;
        save_raster(&r.altitude, &alt, &format!("{name}_alt"), &mut meta)?;
        let rpc = d.join(format!("{name}.rpc.json"));
        save_bytes(&rpc, scene.camera(i).to_json().as_bytes(), &format!("{name}_rpc"), &mut meta)?;
        rasters.extend([img, alt, rpc]);
    }
    let refs: Vec<&Path> = rasters.iter().map(PathBuf::as_path).collect();
    finish(&meta, &refs)?;
    let (lo, hi) = scene.height_range();
    println!(
        "scene {}x{} cells, {} views, heights {:.2}..{:.2} m, median {:.2} m",
        scene.dsm.width(),
        scene.dsm.height(),
        spec.cameras.len(),
        lo,
        hi,
        scene.median_height()
    );
    Ok(())
}

fn parse_range(s: &str) -> std::result::Result<ValueRange, Failure> {
    if s == "auto" {
        return Ok(ValueRange::Auto);
    }
    let bad = || Failure::Usage(format!("--range expects `auto` or `lo,hi`, got {s:?}"));
    let (lo, hi) = s.split_once(',').ok_or_else(bad)?;
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    Ok(ValueRange::Fixed(lo, hi))
}

fn plot_cmd(a: &PlotArgs) -> std::result::Result<(), Failure> {
    let range = parse_range(&a.range)?;
    let mut meta = PipelineMeta::new("plot", a);
    let r = load_raster(&a.input, "raster", &mut meta)?;
    if a.band >= r.channels() as usize {
        return Err(Failure::Usage(format!("--band {} but the raster has {} channels", a.band, r.channels())));
    }
    let img = plot(&r.band(a.band), a.cmap, range)?;
    save_bytes(&a.out, &img.encode(), "image", &mut meta)?;
    finish(&meta, &[&a.out])?;
    println!("wrote {}x{} {}", img.width, img.height, if img.channels == 1 { "PGM" } else { "PPM" });
    Ok(())
}

impl PipelineConfig {
    /// Fills every unset field from `base`.
    fn or(self, base: PipelineConfig) -> PipelineConfig {
        PipelineConfig {
            left: self.left.or(base.left),
            right: self.right.or(base.right),
            rpc_left: self.rpc_left.or(base.rpc_left),
            rpc_right: self.rpc_right.or(base.rpc_right),
            zavg: self.zavg.or(base.zavg),
            matches: self.matches.or(base.matches),
            half_range: self.half_range.or(base.half_range),
            grid_n: self.grid_n.or(base.grid_n),
            disp_source: self.disp_source.or(base.disp_source),
            disp: self.disp.or(base.disp),
            negate: self.negate.or(base.negate),
            dmin: self.dmin.or(base.dmin),
            dmax: self.dmax.or(base.dmax),
            window: self.window.or(base.window),
            dsm: self.dsm.or(base.dsm),
            hmin: self.hmin.or(base.hmin),
            hmax: self.hmax.or(base.hmax),
            cell: self.cell.or(base.cell),
            agg: self.agg.or(base.agg),
            reference: self.reference.or(base.reference),
            veg: self.veg.or(base.veg),
            margin: self.margin.or(base.margin),
            out_dir: self.out_dir.or(base.out_dir),
        }
    }

    /// Resolves relative paths against the config file's directory.
    fn rebase(mut self, dir: &Path) -> PipelineConfig {
        for p in [
            &mut self.left,
            &mut self.right,
            &mut self.rpc_left,
            &mut self.rpc_right,
            &mut self.matches,
            &mut self.disp,
            &mut self.dsm,
            &mut self.reference,
            &mut self.veg,
            &mut self.out_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        self
    }
}

fn pipeline(a: PipelineArgs) -> std::result::Result<(), Failure> {
    let mut cfg = a.flags;
    if let Some(p) = &a.config {
        let file: PipelineConfig = serde_json::from_slice(&read_verified(p)?).map_err(Error::from)?;
        cfg = cfg.or(file.rebase(p.parent().unwrap_or(Path::new(""))));
    }
    fn need<T: Clone>(v: &Option<T>, key: &str) -> std::result::Result<T, Failure> {
        v.clone().ok_or_else(|| Failure::Usage(format!("pipeline needs --{key} (flag or config key)")))
    }
    let out = need(&cfg.out_dir, "out-dir")?;
    fs::create_dir_all(&out)?;
    fs::write(out.join("pipeline.json"), serde_json::to_vec_pretty(&cfg).map_err(Error::from)?)?;

    let rect_dir = out.join("rect");
    rectify(&RectifyArgs {
        left: need(&cfg.left, "left")?,
        right: need(&cfg.right, "right")?,
        rpc_left: need(&cfg.rpc_left, "rpc-left")?,
        rpc_right: need(&cfg.rpc_right, "rpc-right")?,
        zavg: cfg.zavg,
        dsm: cfg.dsm.clone(),
        matches: cfg.matches.clone(),
        out_dir: rect_dir.clone(),
        half_range: cfg.half_range.unwrap_or(40.0),
        grid_n: cfg.grid_n.unwrap_or(7),
    })?;

    let disp = out.join("disp.pfm");
    match cfg.disp_source.unwrap_or(DispSource::Match) {
        DispSource::Match => dense_match(&MatchArgs {
            rect_dir: rect_dir.clone(),
            out: disp.clone(),
            dmin: cfg.dmin.unwrap_or(0.0),
            dmax: cfg.dmax.unwrap_or(128.0),
            window: cfg.window.unwrap_or(9),
            lr_tol: 1.0,
            no_subpixel: false,
        })?,
        DispSource::Import => import_disp(&ImportDispArgs {
            input: need(&cfg.disp, "disp")?,
            out: disp.clone(),
            negate: cfg.negate.unwrap_or(false),
            strict_unipolar: false,
            rect_dir: Some(rect_dir.clone()),
        })?,
        DispSource::Gt => gt_disp(&GtDispArgs {
            rect_dir: rect_dir.clone(),
            dsm: need(&cfg.dsm, "dsm")?,
            out: disp.clone(),
            confidence: None,
        })?,
    }

    let alt = out.join("alt.dsrast");
    triangulate_cmd(&TriangulateArgs { rect_dir: rect_dir.clone(), disp, out: alt.clone(), hmin: cfg.hmin, hmax: cfg.hmax })?;
    let dsm = out.join("dsm.dsrast");
    grid(&GridArgs {
        alt,
        rect_dir,
        cell: cfg.cell.unwrap_or(0.5),
        agg: cfg.agg.unwrap_or_default(),
        out: dsm.clone(),
        fill: None,
    })?;

    if let Some(reference) = &cfg.reference {
        let report = eval(&EvalArgs {
            pred: dsm,
            reference: reference.clone(),
            veg: cfg.veg.clone(),
            margin: cfg.margin.unwrap_or(32),
            json: Some(out.join("report.json")),
            pair_id: None,
            aoi: None,
        })?;
        println!("MAE: {:.4} m", report.mae_m);
    }
    Ok(())
}
