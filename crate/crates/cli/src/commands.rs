//! One function per subcommand. Work is spread over images with rayon;
//! results are gathered in sorted image-id order before anything is
//! written, so output bytes do not depend on the thread count.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use csk_core::codec::{decode_boxes, encode_targets, DecodeParams};
use csk_core::eval::{ap_sweep, leaf_metrics, ImageIous};
use csk_core::io::boxes_csv::group_by_image;
use csk_core::io::{
    read_boxes_csv, read_fmap, read_masks_json, write_boxes_csv, write_fmap, write_masks_json, BoxRecord, MaskFile,
};
use csk_core::loss::gradcheck::run_suite;
use csk_core::points::{generate_biased_points_on_stream, Strategy};
use csk_core::roi::{segment_detection, GuidedMembershipHead, PyramidLevel, PyramidLevels, SegmentOutcome};
use csk_core::{BinaryMask, Detection, InstanceMask};
use csk_synth::scene::DEFAULT_STRIDES;
use csk_synth::{generate_scene_on_stream, SceneParams};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::{EvalKind, UsageError};

const HEATMAP_FILE: &str = "heatmap.fmap";
const WH_FILE: &str = "wh.fmap";
const OFFSET_FILE: &str = "offset.fmap";

fn create_dir(path: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("cannot create {}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn check_image_id(id: &str) -> anyhow::Result<()> {
    if id.is_empty() || id.starts_with('.') || id.contains(['/', '\\']) {
        bail!(UsageError(format!("image id {id:?} cannot name a directory")));
    }
    Ok(())
}

pub fn encode_gt(
    cfg: &RunConfig,
    boxes: &Path,
    height: usize,
    width: usize,
    out: &Path,
    only: Option<&str>,
) -> anyhow::Result<()> {
    let mut groups = group_by_image(&read_boxes_csv(boxes)?);
    if let Some(id) = only {
        groups.retain(|k, _| k == id);
        if groups.is_empty() {
            bail!(UsageError(format!("image {id:?} not found in {}", boxes.display())));
        }
    }
    for id in groups.keys() {
        check_image_id(id)?;
    }
    let groups: Vec<(String, Vec<BoxRecord>)> = groups.into_iter().collect();
    let collisions = groups
        .par_iter()
        .map(|(id, recs)| -> anyhow::Result<usize> {
            let bboxes: Vec<_> = recs.iter().map(|r| r.bbox).collect();
            let targets = encode_targets(&bboxes, height, width, cfg.n, cfg.min_iou)
                .with_context(|| format!("image {id}"))?;
            let dir = out.join(id);
            create_dir(&dir)?;
            write_fmap(dir.join(HEATMAP_FILE), &targets.heatmap)?;
            write_fmap(dir.join(WH_FILE), &targets.wh_map)?;
            write_fmap(dir.join(OFFSET_FILE), &targets.offset_map)?;
            Ok(targets.collisions)
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    for ((id, _), c) in groups.iter().zip(collisions) {
        if c > 0 {
            eprintln!("warning: image {id}: {c} boxes share a center cell with an earlier box");
        }
    }
    Ok(())
}

/// Subdirectories of `root` that contain `marker`, sorted by name.
fn image_dirs(root: &Path, marker: &str) -> anyhow::Result<Vec<(String, PathBuf)>> {
    let entries = std::fs::read_dir(root).with_context(|| format!("cannot list {}", root.display()))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let path = entry?.path();
        if path.join(marker).is_file() {
            let name = path
                .file_name()
                .and_then(|n| n.to_str())
                .with_context(|| format!("non-UTF-8 directory name {}", path.display()))?;
            dirs.push((name.to_string(), path));
        }
    }
    dirs.sort();
    Ok(dirs)
}

pub fn decode(cfg: &RunConfig, maps: &Path, out: &Path) -> anyhow::Result<()> {
    let dirs = image_dirs(maps, HEATMAP_FILE)?;
    if dirs.is_empty() {
        bail!(UsageError(format!("no <image_id>/{HEATMAP_FILE} under {}", maps.display())));
    }
    let params = DecodeParams {
        downsize: cfg.n,
        top_k: cfg.top_k,
        score_thresh: cfg.score_thresh,
    };
    let per_image = dirs
        .par_iter()
        .map(|(id, dir)| -> anyhow::Result<Vec<BoxRecord>> {
            let heat = read_fmap(dir.join(HEATMAP_FILE))?;
            let wh = read_fmap(dir.join(WH_FILE))?;
            let off = read_fmap(dir.join(OFFSET_FILE))?;
            let dets = decode_boxes(&heat, &wh, &off, &params).with_context(|| format!("image {id}"))?;
            Ok(dets
                .into_iter()
                .map(|d| BoxRecord {
                    image_id: id.clone(),
                    bbox: d.bbox,
                    score: Some(d.score),
                })
                .collect())
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let records: Vec<BoxRecord> = per_image.into_iter().flatten().collect();
    write_boxes_csv(out, &records)?;
    Ok(())
}

/// Reads `pyramid_s<stride>.fmap` files from `dir`, finest first. The image
/// size is taken from the finest level times its stride.
fn read_pyramid(dir: &Path) -> anyhow::Result<PyramidLevels> {
    let entries = std::fs::read_dir(dir).with_context(|| format!("cannot list {}", dir.display()))?;
    let mut found: Vec<(u32, PathBuf)> = Vec::new();
    for entry in entries {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(stride) = name
            .strip_prefix("pyramid_s")
            .and_then(|rest| rest.strip_suffix(".fmap"))
            .and_then(|s| s.parse::<u32>().ok())
        {
            found.push((stride, path));
        }
    }
    if found.is_empty() {
        bail!("no pyramid_s<stride>.fmap files in {}", dir.display());
    }
    found.sort();
    let mut levels = Vec::with_capacity(found.len());
    for (stride, path) in &found {
        levels.push(PyramidLevel {
            map: read_fmap(path)?,
            stride: *stride as f64,
        });
    }
    let s0 = found[0].0 as usize;
    let (h, w) = (levels[0].map.height() * s0, levels[0].map.width() * s0);
    Ok(PyramidLevels::new(h, w, levels)?)
}

pub fn segment(cfg: &RunConfig, boxes: &Path, pyramids: &Path, out: &Path, level: usize) -> anyhow::Result<()> {
    let groups: Vec<(String, Vec<BoxRecord>)> = group_by_image(&read_boxes_csv(boxes)?).into_iter().collect();
    for (id, _) in &groups {
        check_image_id(id)?;
    }
    create_dir(out)?;
    let rejected = groups
        .par_iter()
        .map(|(id, recs)| -> anyhow::Result<usize> {
            let levels = read_pyramid(&pyramids.join(id)).with_context(|| format!("image {id}"))?;
            let head = GuidedMembershipHead::from_pyramid(&levels, level)?;
            let mut instances: Vec<InstanceMask> = Vec::with_capacity(recs.len());
            let mut rejected = 0;
            for r in recs {
                match segment_detection(&levels, &r.detection()?, &head, cfg.mask_thresh)? {
                    SegmentOutcome::Mask(m) => instances.push(m.instance),
                    SegmentOutcome::Rejected => rejected += 1,
                }
            }
            let file = MaskFile::from_instances(id.clone(), levels.image_h(), levels.image_w(), &instances)?;
            write_masks_json(out.join(format!("{id}.json")), &file)?;
            Ok(rejected)
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    for ((id, _), n) in groups.iter().zip(rejected) {
        if n > 0 {
            eprintln!("note: image {id}: {n} detections rejected (outside the image or under 2 px)");
        }
    }
    Ok(())
}

pub fn sample_points(
    cfg: &RunConfig,
    mask: &Path,
    strategy: Option<&str>,
    stream: u64,
    out: Option<&Path>,
) -> anyhow::Result<()> {
    let map = read_fmap(mask)?;
    if map.channels() != 1 {
        bail!(UsageError(format!(
            "{} has {} channels, expected one",
            mask.display(),
            map.channels()
        )));
    }
    let mut sampling = cfg.sampling();
    let mut text = String::from("u,v,uncertainty\n");
    if let Some(name) = strategy {
        let Some(s) = Strategy::from_name(name) else {
            let names: Vec<_> = Strategy::ALL.iter().map(|s| s.name()).collect();
            bail!(UsageError(format!("unknown strategy {name:?}; one of {}", names.join(", "))));
        };
        match s.parameters() {
            Some((k, beta)) => {
                sampling.k = k;
                sampling.beta = beta;
            }
            None => return emit(out, &text),
        }
    }
    let set = generate_biased_points_on_stream(&map, &sampling, stream)?;
    for p in &set.points {
        let _ = writeln!(text, "{},{},{}", p.point.u, p.point.v, p.uncertainty);
    }
    emit(out, &text)
}

fn collect_files(dir: &Path, ext: &str, into: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot list {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            collect_files(&path, ext, into)?;
        } else if path.extension().is_some_and(|e| e == ext) {
            into.push(path);
        }
    }
    Ok(())
}

/// Expands directories (recursively) into their files with the given
/// extension, in sorted path order.
fn expand(paths: &[PathBuf], ext: &str) -> anyhow::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            collect_files(p, ext, &mut files)?;
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

fn read_mask_files(paths: &[PathBuf]) -> anyhow::Result<BTreeMap<String, MaskFile>> {
    let mut by_id = BTreeMap::new();
    for path in expand(paths, "json")? {
        let file = read_masks_json(&path)?;
        let id = file.image_id.clone();
        if by_id.insert(id.clone(), file).is_some() {
            bail!(UsageError(format!("image {id:?} appears in more than one file")));
        }
    }
    Ok(by_id)
}

struct EvalImage {
    ious: ImageIous,
    pred_masks: Vec<BinaryMask>,
    gt_masks: Vec<BinaryMask>,
}

fn mask_images(pred: &[PathBuf], gt: &[PathBuf]) -> anyhow::Result<Vec<EvalImage>> {
    let pred = read_mask_files(pred)?;
    let gt = read_mask_files(gt)?;
    let ids: Vec<&String> = pred.keys().chain(gt.keys()).collect::<BTreeSet<_>>().into_iter().collect();
    ids.par_iter()
        .map(|&id| -> anyhow::Result<EvalImage> {
            let dets: Vec<InstanceMask> = match pred.get(id) {
                Some(f) => f.to_instances()?,
                None => Vec::new(),
            };
            let gt_masks: Vec<BinaryMask> = match gt.get(id) {
                Some(f) => f.to_instances()?.into_iter().map(|i| i.mask).collect(),
                None => Vec::new(),
            };
            if let (Some(p), Some(g)) = (pred.get(id), gt.get(id)) {
                if (p.height, p.width) != (g.height, g.width) {
                    bail!(UsageError(format!(
                        "image {id}: prediction is {}x{}, ground truth {}x{}",
                        p.height, p.width, g.height, g.width
                    )));
                }
            }
            let ious = ImageIous::from_masks(id.clone(), &dets, &gt_masks)?;
            Ok(EvalImage {
                ious,
                pred_masks: dets.into_iter().map(|d| d.mask).collect(),
                gt_masks,
            })
        })
        .collect()
}

fn box_images(pred: &[PathBuf], gt: &[PathBuf]) -> anyhow::Result<Vec<EvalImage>> {
    let load = |paths: &[PathBuf]| -> anyhow::Result<Vec<BoxRecord>> {
        let mut all = Vec::new();
        for p in expand(paths, "csv")? {
            all.extend(read_boxes_csv(&p)?);
        }
        Ok(all)
    };
    let pred = group_by_image(&load(pred)?);
    let gt = group_by_image(&load(gt)?);
    let ids: BTreeSet<&String> = pred.keys().chain(gt.keys()).collect();
    ids.into_iter()
        .map(|id| -> anyhow::Result<EvalImage> {
            let dets: Vec<Detection> = pred
                .get(id)
                .map(|recs| recs.iter().map(|r| r.detection()).collect::<Result<_, _>>())
                .transpose()?
                .unwrap_or_default();
            let gts: Vec<_> = gt.get(id).map(|recs| recs.iter().map(|r| r.bbox).collect()).unwrap_or_default();
            Ok(EvalImage {
                ious: ImageIous::from_boxes(id.clone(), &dets, &gts)?,
                pred_masks: Vec::new(),
                gt_masks: Vec::new(),
            })
        })
        .collect()
}

pub fn eval_ap(pred: &[PathBuf], gt: &[PathBuf], kind: EvalKind, leaf: bool, out: Option<&Path>) -> anyhow::Result<()> {
    let images = match kind {
        EvalKind::Mask => mask_images(pred, gt)?,
        EvalKind::Box => {
            if leaf {
                bail!(UsageError("--leaf needs --kind mask".into()));
            }
            box_images(pred, gt)?
        }
    };
    let tables: Vec<ImageIous> = images.iter().map(|i| i.ious.clone()).collect();
    let result = ap_sweep(&tables)?;

    let mut text = String::from("metric,alpha,value\n");
    for (alpha, ap) in result.thresholds.iter().zip(result.ap) {
        let _ = writeln!(text, "AP,{alpha},{ap}");
    }
    if leaf {
        let per_image = images
            .par_iter()
            .map(|i| leaf_metrics(&i.pred_masks, &i.gt_masks))
            .collect::<Result<Vec<_>, _>>()?;
        let n = per_image.len().max(1) as f64;
        let mean = |f: &dyn Fn(&csk_core::eval::LeafMetrics) -> f64| per_image.iter().map(f).sum::<f64>() / n;
        let _ = writeln!(text, "bestDice,,{}", mean(&|m| m.best_dice));
        let _ = writeln!(text, "diffFG,,{}", mean(&|m| m.diff_fg as f64));
        let _ = writeln!(text, "absDiffFG,,{}", mean(&|m| m.abs_diff_fg as f64));
        let _ = writeln!(text, "FgBgDice,,{}", mean(&|m| m.fg_bg_dice));
    }
    let _ = writeln!(text, "AP_mean,{}", result.mean);
    emit(out, &text)
}

struct SceneSummary {
    id: String,
    boxes: Vec<BoxRecord>,
    height: usize,
    width: usize,
    instances: usize,
    shortfall: usize,
}

pub fn synth_gen(cfg: &RunConfig, params: &SceneParams, scenes: usize, out: &Path) -> anyhow::Result<()> {
    params.validate()?;
    create_dir(out)?;
    let summaries = (0..scenes)
        .into_par_iter()
        .map(|i| -> anyhow::Result<SceneSummary> {
            let scene = generate_scene_on_stream(cfg.seed, i as u64, params)?;
            let id = format!("scene_{i:04}");
            let dir = out.join(&id);
            create_dir(&dir)?;
            write_fmap(dir.join("image.fmap"), &scene.image)?;
            let pyramid = scene.ideal_pyramid(&DEFAULT_STRIDES)?;
            for level in pyramid.levels() {
                write_fmap(dir.join(format!("pyramid_s{}.fmap", level.stride)), &level.map)?;
            }
            let instances: Vec<InstanceMask> = scene
                .instances
                .iter()
                .map(|inst| InstanceMask::new(inst.mask.clone(), Detection { bbox: inst.bbox, score: 1.0 }))
                .collect();
            let file = MaskFile::from_instances(id.clone(), scene.image_h, scene.image_w, &instances)?;
            write_masks_json(dir.join("gt_masks.json"), &file)?;
            Ok(SceneSummary {
                boxes: scene
                    .instances
                    .iter()
                    .map(|inst| BoxRecord {
                        image_id: id.clone(),
                        bbox: inst.bbox,
                        score: None,
                    })
                    .collect(),
                id,
                height: scene.image_h,
                width: scene.image_w,
                instances: scene.instances.len(),
                shortfall: scene.shortfall,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;

    let boxes: Vec<BoxRecord> = summaries.iter().flat_map(|s| s.boxes.iter().cloned()).collect();
    write_boxes_csv(out.join("gt_boxes.csv"), &boxes)?;
    let mut manifest = String::from("image_id,height,width,instances,shortfall\n");
    for s in &summaries {
        let _ = writeln!(manifest, "{},{},{},{},{}", s.id, s.height, s.width, s.instances, s.shortfall);
        if s.shortfall > 0 {
            eprintln!("warning: {}: placed {} of {} instances", s.id, s.instances, params.count);
        }
    }
    emit(Some(&out.join("manifest.csv")), &manifest)
}

pub fn grad_check(cfg: &RunConfig, instances: usize, out: Option<&Path>) -> anyhow::Result<()> {
    if instances == 0 {
        bail!(UsageError("--instances must be at least 1".into()));
    }
    let reports = run_suite(cfg.seed, instances, &cfg.focal())?;
    let mut text = String::from("loss_name,max_rel_err\n");
    for r in &reports {
        let _ = writeln!(text, "{},{}", r.loss, r.max_rel_err);
    }
    emit(out, &text)
}
