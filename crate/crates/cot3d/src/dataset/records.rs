//! Dataset records, JSONL IO, deterministic builder, splits, and the
//! review-sample manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::shapes::{generate_shape, ShapeSpec, SizeParams};
use crate::cotformat::{render, AnnotationFormat, CoTAnnotation};
use crate::error::{CotError, Result};
use crate::geometry::{load_point_cloud, write_xyz, CloudFormat, Point3, PointCloud};

/// Default number of surface samples per generated shape.
pub const DEFAULT_POINTS: usize = 512;

/// Point clouds larger than this are stored by file reference, not inline.
pub const INLINE_POINT_LIMIT: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SubsetKind {
    #[serde(rename = "cap3d_like")]
    Cap3dLike,
    #[serde(rename = "gapartnet_like")]
    GapartnetLike,
}

impl SubsetKind {
    pub fn name(&self) -> &'static str {
        match self {
            SubsetKind::Cap3dLike => "cap3d_like",
            SubsetKind::GapartnetLike => "gapartnet_like",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub shape_id: String,
    pub subset: SubsetKind,
    pub split: Split,
    pub format: AnnotationFormat,
    pub text: String,
    pub gold: CoTAnnotation,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub points: Option<Vec<Point3>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub points_file: Option<String>,
}

impl DatasetRecord {
    /// The record's cloud; points must be resident (read_records loads
    /// file references eagerly).
    pub fn cloud(&self) -> Result<PointCloud> {
        let points = self
            .points
            .clone()
            .ok_or_else(|| CotError::Data(format!("record {}: points not loaded", self.shape_id)))?;
        PointCloud::new(&self.shape_id, points)
    }
}

/// Weights over (tagged, unmarked, none); must sum to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FormatMix {
    pub tagged: f64,
    pub unmarked: f64,
    pub none: f64,
}

impl FormatMix {
    pub fn new(tagged: f64, unmarked: f64, none: f64) -> Result<Self> {
        let sum = tagged + unmarked + none;
        if tagged < 0.0 || unmarked < 0.0 || none < 0.0 || (sum - 1.0).abs() > 1e-9 {
            return Err(CotError::Validation(format!(
                "format mix ({tagged}, {unmarked}, {none}) must be non-negative and sum to 1"
            )));
        }
        Ok(Self { tagged, unmarked, none })
    }

    pub fn only(fmt: AnnotationFormat) -> Self {
        match fmt {
            AnnotationFormat::Tagged => Self { tagged: 1.0, unmarked: 0.0, none: 0.0 },
            AnnotationFormat::Unmarked => Self { tagged: 0.0, unmarked: 1.0, none: 0.0 },
            AnnotationFormat::None => Self { tagged: 0.0, unmarked: 0.0, none: 1.0 },
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> AnnotationFormat {
        let u: f64 = rng.gen_range(0.0..1.0);
        if u < self.tagged {
            AnnotationFormat::Tagged
        } else if u < self.tagged + self.unmarked {
            AnnotationFormat::Unmarked
        } else {
            AnnotationFormat::None
        }
    }
}

/// Draw one family-sized spec on the display grid (sizes in exact tenths
/// so template descriptors are integers).
fn draw_spec(rng: &mut ChaCha8Rng, subset: SubsetKind) -> ShapeSpec {
    let t = |v: i64| v as f64 / 10.0;
    let c = |v: i64| v as f64 / 100.0;
    let size = match rng.gen_range(0..5u8) {
        0 => SizeParams::Box {
            width: t(rng.gen_range(4..=16)),
            depth: t(rng.gen_range(4..=16)),
            height: t(rng.gen_range(3..=12)),
        },
        1 => SizeParams::Cylinder {
            radius: t(rng.gen_range(2..=6)),
            height: t(rng.gen_range(6..=16)),
        },
        2 => SizeParams::Mug {
            radius: t(rng.gen_range(3..=5)),
            height: t(rng.gen_range(7..=12)),
            handle_minor: c(rng.gen_range(4..=8)),
        },
        3 => SizeParams::Pot {
            radius: t(rng.gen_range(4..=7)),
            height: t(rng.gen_range(5..=10)),
            handle_minor: c(rng.gen_range(4..=8)),
        },
        _ => SizeParams::Cabinet {
            width: t(rng.gen_range(8..=16)),
            depth: t(rng.gen_range(4..=8)),
            height: t(rng.gen_range(10..=20)),
            knob_radius: c(rng.gen_range(3..=6)),
        },
    };
    ShapeSpec { size, subset }
}

/// Deterministic benchmark builder: `n_per_subset` records for each of the
/// two subset flavors, each record seeded by seed xor record index.
pub fn build_dataset(n_per_subset: usize, mix: FormatMix, seed: u64) -> Result<Vec<DatasetRecord>> {
    build_dataset_with_points(n_per_subset, mix, seed, DEFAULT_POINTS)
}

pub fn build_dataset_with_points(
    n_per_subset: usize,
    mix: FormatMix,
    seed: u64,
    n_points: usize,
) -> Result<Vec<DatasetRecord>> {
    if n_per_subset < 10 {
        return Err(CotError::Validation(format!(
            "n_per_subset {n_per_subset} must be at least 10"
        )));
    }
    let mut records = Vec::with_capacity(2 * n_per_subset);
    let mut index: u64 = 0;
    for subset in [SubsetKind::Cap3dLike, SubsetKind::GapartnetLike] {
        let prefix = match subset {
            SubsetKind::Cap3dLike => "cap",
            SubsetKind::GapartnetLike => "gap",
        };
        for i in 0..n_per_subset {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index);
            index += 1;
            let spec = draw_spec(&mut rng, subset);
            let format = mix.draw(&mut rng);
            let shape_id = format!("{prefix}-{i:05}");
            let point_seed = rng.gen::<u64>();
            let (cloud, gold) = generate_shape(&spec, &shape_id, n_points, point_seed)?;
            let text = render(&gold, format)?;
            records.push(DatasetRecord {
                shape_id,
                subset,
                split: Split::Train,
                format,
                text,
                gold,
                points: Some(cloud.points),
                points_file: None,
            });
        }
    }
    Ok(records)
}

/// Assign train/val/test splits in place, by shape id, with
/// largest-remainder rounding of the ratios.
pub fn split_dataset(records: &mut [DatasetRecord], ratios: (f64, f64, f64), seed: u64) -> Result<()> {
    let r = [ratios.0, ratios.1, ratios.2];
    if r.iter().any(|&x| x < 0.0) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(CotError::Validation(format!(
            "split ratios {r:?} must be non-negative and sum to 1"
        )));
    }
    // distinct ids in first-appearance order, then seeded shuffle
    let mut ids = Vec::new();
    for rec in records.iter() {
        if !ids.contains(&rec.shape_id) {
            ids.push(rec.shape_id.clone());
        }
    }
    if ids.len() < 3 {
        return Err(CotError::Data(format!(
            "need at least 3 distinct shape ids to split, got {}",
            ids.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let n = ids.len();
    let mut counts = [0usize; 3];
    let mut fracs = [0.0f64; 3];
    for k in 0..3 {
        let quota = r[k] * n as f64;
        counts[k] = quota.floor() as usize;
        fracs[k] = quota - quota.floor();
    }
    let mut leftover = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    // largest remainder first; ties favor the earlier split
    order.sort_by(|&a, &b| fracs[b].partial_cmp(&fracs[a]).unwrap().then(a.cmp(&b)));
    for &k in &order {
        if leftover == 0 {
            break;
        }
        counts[k] += 1;
        leftover -= 1;
    }

    let mut assignment = BTreeMap::new();
    let mut cursor = 0;
    for (k, split) in [Split::Train, Split::Val, Split::Test].into_iter().enumerate() {
        for id in &ids[cursor..cursor + counts[k]] {
            assignment.insert(id.clone(), split);
        }
        cursor += counts[k];
    }
    for rec in records.iter_mut() {
        rec.split = assignment[&rec.shape_id];
    }
    Ok(())
}

/// Deterministic uniform sample of round(fraction * n) shape ids, in
/// original record order.
pub fn sample_review_manifest(
    records: &[DatasetRecord],
    fraction: f64,
    seed: u64,
) -> Result<Vec<String>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CotError::Range(format!(
            "review fraction {fraction} must lie in (0, 1]"
        )));
    }
    let n = records.len();
    let k = (fraction * n as f64).round() as usize;
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let mut chosen: Vec<usize> = indices.into_iter().take(k).collect();
    chosen.sort_unstable();
    Ok(chosen
        .into_iter()
        .map(|i| records[i].shape_id.clone())
        .collect())
}

/// Side-file directory for clouds above the inline limit: sibling of the
/// JSONL named `<stem>_points`.
fn points_dir(path: &Path) -> std::path::PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "records".to_string());
    path.with_file_name(format!("{stem}_points"))
}

pub fn write_records(records: &[DatasetRecord], path: &Path) -> Result<()> {
    let mut out = String::new();
    for rec in records {
        let mut rec = rec.clone();
        let n_pts = rec.points.as_ref().map_or(0, Vec::len);
        if n_pts > INLINE_POINT_LIMIT || rec.points_file.is_some() {
            let dir = points_dir(path);
            fs::create_dir_all(&dir)?;
            let rel = rec
                .points_file
                .clone()
                .unwrap_or_else(|| format!("{}/{}.xyz", dir.file_name().unwrap().to_string_lossy(), rec.shape_id));
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            let cloud = rec.cloud()?;
            fs::write(base.join(&rel), write_xyz(&cloud))?;
            rec.points = None;
            rec.points_file = Some(rel);
        }
        out.push_str(&serde_json::to_string(&rec)?);
        out.push('\n');
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, out)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<DatasetRecord>> {
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut rec: DatasetRecord =
            serde_json::from_str(&line).map_err(|e| CotError::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        match (&rec.points, &rec.points_file) {
            (None, None) => {
                return Err(CotError::Parse {
                    line: i + 1,
                    msg: "record has neither `points` nor `points_file`".into(),
                })
            }
            (None, Some(rel)) => {
                let cloud = load_point_cloud(&base.join(rel), CloudFormat::Xyz)?;
                rec.points = Some(cloud.points);
            }
            _ => {}
        }
        records.push(rec);
    }
    Ok(records)
}

/// Audit: every record's text must regenerate byte-exactly from its gold.
pub fn audit_text_regeneration(records: &[DatasetRecord]) -> Result<()> {
    for rec in records {
        let expect = render(&rec.gold, rec.format)?;
        if expect != rec.text {
            return Err(CotError::Data(format!(
                "record {}: text does not equal render(gold, {:?})",
                rec.shape_id, rec.format
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn small_dataset() -> Vec<DatasetRecord> {
        build_dataset_with_points(10, FormatMix::new(0.4, 0.4, 0.2).unwrap(), 9, 32).unwrap()
    }

    #[test]
    fn unmarked_only_mix() {
        let recs =
            build_dataset_with_points(10, FormatMix::only(AnnotationFormat::Unmarked), 1, 16)
                .unwrap();
        assert!(recs.iter().all(|r| r.format == AnnotationFormat::Unmarked));
    }

    #[test]
    fn ids_unique_and_counts() {
        let recs = small_dataset();
        assert_eq!(recs.len(), 20);
        let ids: BTreeSet<_> = recs.iter().map(|r| r.shape_id.clone()).collect();
        assert_eq!(ids.len(), 20);
        assert_eq!(recs.iter().filter(|r| r.subset == SubsetKind::Cap3dLike).count(), 10);
    }

    #[test]
    fn build_is_deterministic() {
        let a = small_dataset();
        let b = small_dataset();
        assert_eq!(a, b);
    }

    #[test]
    fn format_counts_near_expected() {
        // mix (1/3,1/3,1/3), n=300: each count within +-2 sigma of 100
        let mix = FormatMix::new(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0).unwrap();
        let recs = build_dataset_with_points(150, mix, 5, 8).unwrap();
        let sigma = (300.0f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        for fmt in [AnnotationFormat::Tagged, AnnotationFormat::Unmarked, AnnotationFormat::None] {
            let count = recs.iter().filter(|r| r.format == fmt).count() as f64;
            assert!(
                (count - 100.0).abs() <= 2.0 * sigma,
                "{fmt:?} count {count} outside 100 +- {:.1}",
                2.0 * sigma
            );
        }
    }

    #[test]
    fn ten_shapes_split_8_1_1() {
        let mut recs = small_dataset();
        recs.truncate(10);
        split_dataset(&mut recs, (0.8, 0.1, 0.1), 3).unwrap();
        let count = |s| recs.iter().filter(|r| r.split == s).count();
        assert_eq!(count(Split::Train), 8);
        assert_eq!(count(Split::Val), 1);
        assert_eq!(count(Split::Test), 1);
    }

    #[test]
    fn split_groups_by_shape_id() {
        // one shape rendered in 3 formats stays in one split
        let mut recs = small_dataset();
        let mut extra = recs[0].clone();
        extra.format = AnnotationFormat::None;
        extra.text = extra.gold.conclusion.clone();
        recs.push(extra);
        split_dataset(&mut recs, (0.8, 0.1, 0.1), 7).unwrap();
        let splits: BTreeSet<_> = recs
            .iter()
            .filter(|r| r.shape_id == recs[0].shape_id)
            .map(|r| r.split)
            .collect();
        assert_eq!(splits.len(), 1);
    }

    #[test]
    fn split_is_deterministic_and_total() {
        let mut a = small_dataset();
        let mut b = small_dataset();
        split_dataset(&mut a, (0.8, 0.1, 0.1), 11).unwrap();
        split_dataset(&mut b, (0.8, 0.1, 0.1), 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_shapes_to_split() {
        let mut recs = small_dataset();
        recs.truncate(2);
        assert!(matches!(
            split_dataset(&mut recs, (0.8, 0.1, 0.1), 1),
            Err(CotError::Data(_))
        ));
    }

    #[test]
    fn manifest_fraction_and_determinism() {
        let recs = small_dataset();
        let m = sample_review_manifest(&recs, 0.20, 13).unwrap();
        assert_eq!(m.len(), 4);
        assert_eq!(m, sample_review_manifest(&recs, 0.20, 13).unwrap());
        let all = sample_review_manifest(&recs, 1.0, 13).unwrap();
        assert_eq!(all.len(), recs.len());
    }

    #[test]
    fn jsonl_round_trip_identity() {
        let recs = small_dataset();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        write_records(&recs, &path).unwrap();
        let back = read_records(&path).unwrap();
        assert_eq!(recs, back);
    }

    #[test]
    fn large_clouds_use_side_files() {
        let mut recs = small_dataset();
        recs.truncate(1);
        let big: Vec<Point3> = (0..1500).map(|i| [i as f64, 0.0, 0.0]).collect();
        recs[0].points = Some(big);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        write_records(&recs, &path).unwrap();
        let raw = std::fs::read_to_string(&path).unwrap();
        assert!(raw.contains("points_file"));
        assert!(!raw.contains("\"points\""));
        let back = read_records(&path).unwrap();
        assert_eq!(back[0].points.as_ref().unwrap().len(), 1500);
    }

    #[test]
    fn missing_gold_names_field_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(
            &path,
            "{\"shape_id\":\"a\",\"subset\":\"cap3d_like\",\"split\":\"train\",\"format\":\"none\",\"text\":\"t\",\"points\":[[0,0,0]]}\n",
        )
        .unwrap();
        let err = read_records(&path).unwrap_err();
        match err {
            CotError::Parse { line, msg } => {
                assert_eq!(line, 1);
                assert!(msg.contains("gold"), "message should name the field: {msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn embedded_newlines_stay_on_one_line() {
        let recs = small_dataset();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        write_records(&recs, &path).unwrap();
        let raw = std::fs::read_to_string(&path).unwrap();
        assert_eq!(raw.lines().count(), recs.len());
        assert!(recs.iter().any(|r| r.text.contains('\n')));
    }

    #[test]
    fn texts_regenerate_from_gold() {
        audit_text_regeneration(&small_dataset()).unwrap();
    }
}
