//! Point-cloud types, normalization, farthest point sampling, kNN grouping,
//! Fourier positional features, and ASCII point-cloud file loading.

use std::fmt;
use std::path::Path;

use crate::error::{CotError, Result};

pub type Point3 = [f64; 3];

fn dist2(a: Point3, b: Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// A set of 3-D points for one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub shape_id: String,
}

impl PointCloud {
    pub fn new(shape_id: impl Into<String>, points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(CotError::Data("point cloud must have at least one point".into()));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(CotError::NonFinite("point cloud coordinate".into()));
        }
        Ok(Self {
            points,
            shape_id: shape_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of the lexicographically smallest coordinate triple; the
    /// canonical FPS start used for permutation-invariant encoding.
    pub fn canonical_start(&self) -> usize {
        let mut best = 0;
        for i in 1..self.points.len() {
            if self.points[i] < self.points[best] {
                best = i;
            }
        }
        best
    }
}

/// Keypoints selected from a parent cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet {
    pub indices: Vec<usize>,
    pub coords: Vec<Point3>,
}

/// Center the cloud on its centroid and scale the farthest point to norm 1.
/// A cloud of identical points maps to all-zeros.
pub fn normalize_to_unit_sphere(pc: &PointCloud) -> PointCloud {
    let n = pc.len() as f64;
    let mut centroid = [0.0; 3];
    for p in &pc.points {
        for k in 0..3 {
            centroid[k] += p[k] / n;
        }
    }
    let mut max_norm = 0.0f64;
    let centered: Vec<Point3> = pc
        .points
        .iter()
        .map(|p| {
            let q = [p[0] - centroid[0], p[1] - centroid[1], p[2] - centroid[2]];
            max_norm = max_norm.max((q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt());
            q
        })
        .collect();
    let scale = if max_norm > 0.0 { 1.0 / max_norm } else { 1.0 };
    PointCloud {
        points: centered
            .into_iter()
            .map(|p| [p[0] * scale, p[1] * scale, p[2] * scale])
            .collect(),
        shape_id: pc.shape_id.clone(),
    }
}

/// Greedy max-min farthest point sampling, ties broken by lowest index.
pub fn farthest_point_sample(pc: &PointCloud, k: usize, start: usize) -> Result<KeypointSet> {
    let n = pc.len();
    if k == 0 || k > n {
        return Err(CotError::Capacity {
            requested: k,
            available: n,
        });
    }
    if start >= n {
        return Err(CotError::Range(format!("FPS start {start} out of range 0..{n}")));
    }
    let mut indices = Vec::with_capacity(k);
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut current = start;
    indices.push(current);
    for _ in 1..k {
        let cp = pc.points[current];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for i in 0..n {
            let d = dist2(pc.points[i], cp);
            if d < min_d2[i] {
                min_d2[i] = d;
            }
            if !indices.contains(&i) && min_d2[i] > best_d {
                best_d = min_d2[i];
                best = i;
            }
        }
        current = best;
        indices.push(current);
    }
    let coords = indices.iter().map(|&i| pc.points[i]).collect();
    Ok(KeypointSet { indices, coords })
}

/// For each keypoint, the `m` nearest cloud points (keypoint included,
/// ties by lowest index) expressed as offsets from the keypoint.
pub fn knn_group(pc: &PointCloud, keys: &KeypointSet, m: usize) -> Result<Vec<Vec<Point3>>> {
    let n = pc.len();
    if m == 0 || m > n {
        return Err(CotError::Capacity {
            requested: m,
            available: n,
        });
    }
    let mut groups = Vec::with_capacity(keys.indices.len());
    for &ki in &keys.indices {
        let kp = pc.points[ki];
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            dist2(pc.points[a], kp)
                .partial_cmp(&dist2(pc.points[b], kp))
                .unwrap()
                .then(a.cmp(&b))
        });
        let group = order[..m]
            .iter()
            .map(|&i| {
                let p = pc.points[i];
                [p[0] - kp[0], p[1] - kp[1], p[2] - kp[2]]
            })
            .collect();
        groups.push(group);
    }
    Ok(groups)
}

/// Per axis, `[sin(2^j π x), cos(2^j π x)]` for `j = 0..n_freq`, giving a
/// `k × (6·n_freq)` feature matrix.
pub fn fourier_encode(coords: &[Point3], n_freq: usize) -> Result<Vec<Vec<f64>>> {
    if n_freq == 0 {
        return Err(CotError::Range("fourier_encode needs n_freq >= 1".into()));
    }
    Ok(coords
        .iter()
        .map(|p| {
            let mut feats = Vec::with_capacity(6 * n_freq);
            for &x in p {
                for j in 0..n_freq {
                    let arg = (1u64 << j) as f64 * std::f64::consts::PI * x;
                    feats.push(arg.sin());
                    feats.push(arg.cos());
                }
            }
            feats
        })
        .collect())
}

/// Supported ASCII point-cloud file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    PlyAscii,
    Obj,
    Xyz,
}

impl fmt::Display for CloudFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CloudFormat::PlyAscii => write!(f, "ply-ascii"),
            CloudFormat::Obj => write!(f, "obj"),
            CloudFormat::Xyz => write!(f, "xyz"),
        }
    }
}

impl std::str::FromStr for CloudFormat {
    type Err = CotError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ply-ascii" | "ply" => Ok(CloudFormat::PlyAscii),
            "obj" => Ok(CloudFormat::Obj),
            "xyz" => Ok(CloudFormat::Xyz),
            other => Err(CotError::Config(format!("unknown point cloud format {other:?}"))),
        }
    }
}

pub fn load_point_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud> {
    let text = std::fs::read_to_string(path)?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "cloud".into());
    parse_point_cloud(&text, format, &id)
}

pub fn parse_point_cloud(text: &str, format: CloudFormat, shape_id: &str) -> Result<PointCloud> {
    let points = match format {
        CloudFormat::Xyz => parse_xyz(text)?,
        CloudFormat::Obj => parse_obj(text)?,
        CloudFormat::PlyAscii => parse_ply_ascii(text)?,
    };
    PointCloud::new(shape_id, points)
}

fn parse_float(tok: &str, line: usize) -> Result<f64> {
    tok.parse::<f64>().map_err(|_| CotError::Parse {
        line,
        msg: format!("non-numeric field {tok:?}"),
    })
}

fn parse_triple(tokens: &[&str], line: usize) -> Result<Point3> {
    if tokens.len() < 3 {
        return Err(CotError::Parse {
            line,
            msg: format!("expected 3 coordinates, got {}", tokens.len()),
        });
    }
    Ok([
        parse_float(tokens[0], line)?,
        parse_float(tokens[1], line)?,
        parse_float(tokens[2], line)?,
    ])
}

fn parse_xyz(text: &str) -> Result<Vec<Point3>> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if tokens.len() != 3 {
            return Err(CotError::Parse {
                line: lineno,
                msg: format!("expected 3 fields, got {}", tokens.len()),
            });
        }
        points.push(parse_triple(&tokens, lineno)?);
    }
    Ok(points)
}

fn parse_obj(text: &str) -> Result<Vec<Point3>> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.first() {
            Some(&"v") => points.push(parse_triple(&tokens[1..], lineno)?),
            // faces, normals, texcoords, comments: vertex positions only
            _ => continue,
        }
    }
    Ok(points)
}

fn parse_ply_ascii(text: &str) -> Result<Vec<Point3>> {
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or(CotError::Parse {
        line: 1,
        msg: "empty file".into(),
    })?;
    if first.trim() != "ply" {
        return Err(CotError::Parse {
            line: 1,
            msg: format!("expected 'ply' magic, got {first:?}"),
        });
    }
    let mut vertex_count: Option<usize> = None;
    let mut saw_format = false;
    let mut header_end = 0;
    for (i, line) in lines.by_ref() {
        let lineno = i + 1;
        let trimmed = line.trim();
        if trimmed.starts_with("format") {
            if trimmed != "format ascii 1.0" {
                return Err(CotError::Parse {
                    line: lineno,
                    msg: format!("only 'format ascii 1.0' supported, got {trimmed:?}"),
                });
            }
            saw_format = true;
        } else if let Some(rest) = trimmed.strip_prefix("element vertex ") {
            vertex_count = Some(rest.trim().parse().map_err(|_| CotError::Parse {
                line: lineno,
                msg: format!("bad vertex count {rest:?}"),
            })?);
        } else if trimmed == "end_header" {
            header_end = lineno;
            break;
        }
    }
    if !saw_format || header_end == 0 {
        return Err(CotError::Parse {
            line: header_end.max(1),
            msg: "malformed PLY header".into(),
        });
    }
    let expected = vertex_count.ok_or(CotError::Parse {
        line: header_end,
        msg: "missing 'element vertex' declaration".into(),
    })?;
    let mut points = Vec::with_capacity(expected);
    for (i, line) in lines {
        let lineno = i + 1;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if points.len() == expected {
            break;
        }
        points.push(parse_triple(&tokens, lineno)?);
    }
    if points.len() != expected {
        return Err(CotError::Parse {
            line: header_end,
            msg: format!("header declares {expected} vertices, file contains {}", points.len()),
        });
    }
    Ok(points)
}

/// Write a cloud as plain XYZ text, one point per line.
pub fn write_xyz(pc: &PointCloud) -> String {
    let mut out = String::new();
    for p in &pc.points {
        out.push_str(&format!("{:.17} {:.17} {:.17}\n", p[0], p[1], p[2]));
    }
    out
}
