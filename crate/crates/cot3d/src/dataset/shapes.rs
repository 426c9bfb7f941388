//! Procedural shape families with analytic surfaces and template-derived
//! gold annotations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::records::SubsetKind;
use crate::cotformat::CoTAnnotation;
use crate::error::{CotError, Result};
use crate::geometry::{Point3, PointCloud};

/// Affordance tags; the closed tag set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Affordance {
    Graspable,
    Openable,
    Containable,
    Supportive,
}

impl Affordance {
    /// The function sentence template for stage 2.
    pub fn function_phrase(&self) -> &'static str {
        match self {
            Affordance::Graspable => "can be grasped",
            Affordance::Openable => "can be opened",
            Affordance::Containable => "can contain items",
            Affordance::Supportive => "can support items",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeFamily {
    Box,
    Cylinder,
    Mug,
    Pot,
    Cabinet,
}

impl ShapeFamily {
    pub const ALL: [ShapeFamily; 5] = [
        ShapeFamily::Box,
        ShapeFamily::Cylinder,
        ShapeFamily::Mug,
        ShapeFamily::Pot,
        ShapeFamily::Cabinet,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ShapeFamily::Box => "box",
            ShapeFamily::Cylinder => "cylinder",
            ShapeFamily::Mug => "mug",
            ShapeFamily::Pot => "pot",
            ShapeFamily::Cabinet => "cabinet",
        }
    }
}

/// Analytic surface primitives. Cylinders are axis-aligned with z; tori
/// are vertical rings (tube centers in the x-z plane).
#[derive(Debug, Clone, PartialEq)]
pub enum Surface {
    Cuboid { center: Point3, half: [f64; 3] },
    Cylinder { center: Point3, radius: f64, half_height: f64 },
    Sphere { center: Point3, radius: f64 },
    Torus { center: Point3, major: f64, minor: f64 },
}

impl Surface {
    pub fn area(&self) -> f64 {
        use std::f64::consts::PI;
        match self {
            Surface::Cuboid { half, .. } => {
                8.0 * (half[0] * half[1] + half[0] * half[2] + half[1] * half[2])
            }
            Surface::Cylinder { radius, half_height, .. } => {
                2.0 * PI * radius * (2.0 * half_height) + 2.0 * PI * radius * radius
            }
            Surface::Sphere { radius, .. } => 4.0 * PI * radius * radius,
            Surface::Torus { major, minor, .. } => 4.0 * PI * PI * major * minor,
        }
    }

    /// Unsigned distance from a point to this surface.
    pub fn surface_distance(&self, p: Point3) -> f64 {
        match self {
            Surface::Cuboid { center, half } => {
                let q = [
                    (p[0] - center[0]).abs() - half[0],
                    (p[1] - center[1]).abs() - half[1],
                    (p[2] - center[2]).abs() - half[2],
                ];
                let outside: f64 = q
                    .iter()
                    .map(|v| v.max(0.0) * v.max(0.0))
                    .sum::<f64>()
                    .sqrt();
                let inside = q[0].max(q[1]).max(q[2]).min(0.0);
                (outside + inside).abs()
            }
            Surface::Cylinder { center, radius, half_height } => {
                let dx = p[0] - center[0];
                let dy = p[1] - center[1];
                let dz = p[2] - center[2];
                let qr = (dx * dx + dy * dy).sqrt() - radius;
                let qz = dz.abs() - half_height;
                let outside = (qr.max(0.0).powi(2) + qz.max(0.0).powi(2)).sqrt();
                let inside = qr.max(qz).min(0.0);
                (outside + inside).abs()
            }
            Surface::Sphere { center, radius } => {
                let d = ((p[0] - center[0]).powi(2)
                    + (p[1] - center[1]).powi(2)
                    + (p[2] - center[2]).powi(2))
                .sqrt();
                (d - radius).abs()
            }
            Surface::Torus { center, major, minor } => {
                let dx = p[0] - center[0];
                let dy = p[1] - center[1];
                let dz = p[2] - center[2];
                let q = (dx * dx + dz * dz).sqrt() - major;
                ((q * q + dy * dy).sqrt() - minor).abs()
            }
        }
    }

    /// Draw one point uniformly on the surface.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Point3 {
        use std::f64::consts::PI;
        match self {
            Surface::Cuboid { center, half } => {
                let areas = [
                    half[1] * half[2], // +-x faces
                    half[0] * half[2],
                    half[0] * half[1],
                ];
                let total: f64 = areas.iter().sum();
                let mut pick = rng.gen_range(0.0..total);
                let mut axis = 2;
                for (i, a) in areas.iter().enumerate() {
                    if pick < *a {
                        axis = i;
                        break;
                    }
                    pick -= a;
                }
                let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let mut p = [0.0; 3];
                for k in 0..3 {
                    p[k] = if k == axis {
                        side * half[k]
                    } else {
                        rng.gen_range(-half[k]..=half[k])
                    };
                    p[k] += center[k];
                }
                p
            }
            Surface::Cylinder { center, radius, half_height } => {
                let hh = *half_height;
                let side_area = 2.0 * PI * radius * (2.0 * hh);
                let cap_area = PI * radius * radius;
                let pick = rng.gen_range(0.0..side_area + 2.0 * cap_area);
                if pick < side_area {
                    let theta = rng.gen_range(0.0..2.0 * PI);
                    let z = rng.gen_range(-hh..=hh);
                    [
                        center[0] + radius * theta.cos(),
                        center[1] + radius * theta.sin(),
                        center[2] + z,
                    ]
                } else {
                    let top = pick < side_area + cap_area;
                    let theta = rng.gen_range(0.0..2.0 * PI);
                    let r = radius * rng.gen_range(0.0f64..=1.0).sqrt();
                    [
                        center[0] + r * theta.cos(),
                        center[1] + r * theta.sin(),
                        center[2] + if top { hh } else { -hh },
                    ]
                }
            }
            Surface::Sphere { center, radius } => {
                let u: f64 = rng.gen_range(-1.0..=1.0);
                let theta = rng.gen_range(0.0..2.0 * PI);
                let rho = (1.0 - u * u).sqrt();
                [
                    center[0] + radius * rho * theta.cos(),
                    center[1] + radius * rho * theta.sin(),
                    center[2] + radius * u,
                ]
            }
            Surface::Torus { center, major, minor } => {
                // area element ~ (major + minor cos(phi)); rejection sample phi
                let phi = loop {
                    let phi = rng.gen_range(0.0..2.0 * PI);
                    let accept = (major + minor * phi.cos()) / (major + minor);
                    if rng.gen_range(0.0..1.0) < accept {
                        break phi;
                    }
                };
                let theta = rng.gen_range(0.0..2.0 * PI);
                let ring = major + minor * phi.cos();
                [
                    center[0] + ring * theta.cos(),
                    center[1] + minor * phi.sin(),
                    center[2] + ring * theta.sin(),
                ]
            }
        }
    }
}

/// A labeled part with its affordance tags and analytic surface.
#[derive(Debug, Clone)]
pub struct Part {
    pub label: &'static str,
    pub affordances: Vec<Affordance>,
    pub surface: Surface,
}

/// Family-specific size parameters, in model units (tenths are the
/// template's display unit: 1.2 units renders as "12 tenths").
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum SizeParams {
    Box { width: f64, depth: f64, height: f64 },
    Cylinder { radius: f64, height: f64 },
    Mug { radius: f64, height: f64, handle_minor: f64 },
    Pot { radius: f64, height: f64, handle_minor: f64 },
    Cabinet { width: f64, depth: f64, height: f64, knob_radius: f64 },
}

/// Specification of one synthetic shape: family-sized primitives plus the
/// subset flavor that selects the annotation template emphasis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub size: SizeParams,
    pub subset: SubsetKind,
}

impl ShapeSpec {
    pub fn family(&self) -> ShapeFamily {
        match self.size {
            SizeParams::Box { .. } => ShapeFamily::Box,
            SizeParams::Cylinder { .. } => ShapeFamily::Cylinder,
            SizeParams::Mug { .. } => ShapeFamily::Mug,
            SizeParams::Pot { .. } => ShapeFamily::Pot,
            SizeParams::Cabinet { .. } => ShapeFamily::Cabinet,
        }
    }

    fn validate(&self) -> Result<()> {
        let dims: Vec<f64> = match self.size {
            SizeParams::Box { width, depth, height } => vec![width, depth, height],
            SizeParams::Cylinder { radius, height } => vec![radius, height],
            SizeParams::Mug { radius, height, handle_minor } => vec![radius, height, handle_minor],
            SizeParams::Pot { radius, height, handle_minor } => vec![radius, height, handle_minor],
            SizeParams::Cabinet { width, depth, height, knob_radius } => {
                vec![width, depth, height, knob_radius]
            }
        };
        if dims.iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
            return Err(CotError::Validation(format!(
                "invalid size parameters {dims:?}: all must be positive"
            )));
        }
        Ok(())
    }

    /// The part list with analytic surfaces.
    pub fn parts(&self) -> Result<Vec<Part>> {
        self.validate()?;
        Ok(match self.size {
            SizeParams::Box { width, depth, height } => vec![Part {
                label: "body",
                affordances: vec![Affordance::Supportive],
                surface: Surface::Cuboid {
                    center: [0.0; 3],
                    half: [width / 2.0, depth / 2.0, height / 2.0],
                },
            }],
            SizeParams::Cylinder { radius, height } => vec![Part {
                label: "body",
                affordances: vec![Affordance::Supportive, Affordance::Graspable],
                surface: Surface::Cylinder {
                    center: [0.0; 3],
                    radius,
                    half_height: height / 2.0,
                },
            }],
            SizeParams::Mug { radius, height, handle_minor } => vec![
                Part {
                    label: "body",
                    affordances: vec![Affordance::Containable],
                    surface: Surface::Cylinder {
                        center: [0.0; 3],
                        radius,
                        half_height: height / 2.0,
                    },
                },
                Part {
                    label: "handle",
                    affordances: vec![Affordance::Graspable],
                    surface: Surface::Torus {
                        center: [radius, 0.0, 0.0],
                        major: height / 4.0,
                        minor: handle_minor,
                    },
                },
            ],
            SizeParams::Pot { radius, height, handle_minor } => {
                let lid_hh = height * 0.05;
                vec![
                    Part {
                        label: "body",
                        affordances: vec![Affordance::Containable],
                        surface: Surface::Cylinder {
                            center: [0.0; 3],
                            radius,
                            half_height: height / 2.0,
                        },
                    },
                    Part {
                        label: "lid",
                        affordances: vec![Affordance::Openable],
                        surface: Surface::Cylinder {
                            center: [0.0, 0.0, height / 2.0 + lid_hh],
                            radius: radius * 1.05,
                            half_height: lid_hh,
                        },
                    },
                    Part {
                        label: "handle",
                        affordances: vec![Affordance::Graspable],
                        surface: Surface::Torus {
                            center: [radius, 0.0, 0.0],
                            major: height / 4.0,
                            minor: handle_minor,
                        },
                    },
                ]
            }
            SizeParams::Cabinet { width, depth, height, knob_radius } => {
                let t = depth * 0.02;
                vec![
                    Part {
                        label: "body",
                        affordances: vec![Affordance::Containable, Affordance::Supportive],
                        surface: Surface::Cuboid {
                            center: [0.0; 3],
                            half: [width / 2.0, depth / 2.0, height / 2.0],
                        },
                    },
                    Part {
                        label: "door",
                        affordances: vec![Affordance::Openable],
                        surface: Surface::Cuboid {
                            center: [0.0, depth / 2.0 + t, 0.0],
                            half: [width * 0.45, t, height * 0.45],
                        },
                    },
                    Part {
                        label: "knob",
                        affordances: vec![Affordance::Graspable],
                        surface: Surface::Sphere {
                            center: [width * 0.25, depth / 2.0 + 2.0 * t + knob_radius, 0.0],
                            radius: knob_radius,
                        },
                    },
                ]
            }
        })
    }

    /// The dimensions phrase used verbatim in stage 1 and the conclusion.
    fn dims_phrase(&self) -> String {
        let tenths = |v: f64| (v * 10.0).round() as i64;
        match self.size {
            SizeParams::Box { width, depth, height } => format!(
                "{} by {} by {} tenths",
                tenths(width),
                tenths(depth),
                tenths(height)
            ),
            SizeParams::Cabinet { width, depth, height, .. } => format!(
                "{} by {} by {} tenths",
                tenths(width),
                tenths(depth),
                tenths(height)
            ),
            SizeParams::Cylinder { radius, height }
            | SizeParams::Mug { radius, height, .. }
            | SizeParams::Pot { radius, height, .. } => format!(
                "{} tenths across and {} tenths tall",
                tenths(2.0 * radius),
                tenths(height)
            ),
        }
    }

    fn causal_sentence(&self) -> &'static str {
        let part_level = self.subset == SubsetKind::GapartnetLike;
        match (self.family(), part_level) {
            (ShapeFamily::Box, false) => {
                "Because the box is a rigid block, items placed on its flat top stay put."
            }
            (ShapeFamily::Box, true) => {
                "The flat top face of the body carries loads, so stacking on the box is stable."
            }
            (ShapeFamily::Cylinder, false) => {
                "Because the cylinder has a round wall, a hand can close around it to grasp it."
            }
            (ShapeFamily::Cylinder, true) => {
                "The curved wall of the body fits the curl of fingers, so the cylinder rolls or lifts easily."
            }
            (ShapeFamily::Mug, false) => {
                "Because the handle forms a loop beside the body, the mug can be lifted with one hand."
            }
            (ShapeFamily::Mug, true) => {
                "The loop of the handle admits fingers, so pulling the handle lifts the whole mug."
            }
            (ShapeFamily::Pot, false) => {
                "Because the lid rests on top of the body, lifting the lid opens the pot."
            }
            (ShapeFamily::Pot, true) => {
                "The lid covers the rim of the body, so raising the lid exposes the interior of the pot."
            }
            (ShapeFamily::Cabinet, false) => {
                "Because the knob sits on the door, pulling it swings the door open to reach inside."
            }
            (ShapeFamily::Cabinet, true) => {
                "The knob is mounted on the door panel, so torque on the knob rotates the door away from the body."
            }
        }
    }

    /// Gold annotation whose conclusion reuses only words that already
    /// appear in stages 1 and 2 (the scorer's gold-vs-gold fixed point
    /// depends on this).
    pub fn gold_annotation(&self) -> Result<CoTAnnotation> {
        let parts = self.parts()?;
        let family = self.family().name();
        let dims = self.dims_phrase();
        let part_names: Vec<&str> = parts.iter().map(|p| p.label).collect();

        let object_recognition = match self.subset {
            SubsetKind::Cap3dLike => format!(
                "This object is a {family} measuring {dims}. It has a {}.",
                part_names.join(" and a ")
            ),
            SubsetKind::GapartnetLike => format!(
                "This object is a {family} measuring {dims}, assembled from a {}.",
                part_names.join(" and a ")
            ),
        };

        let mut function_sentences = Vec::new();
        for part in &parts {
            for aff in &part.affordances {
                function_sentences.push(format!("The {} {}.", part.label, aff.function_phrase()));
            }
        }
        let functional_inference = function_sentences.join(" ");

        let causal_reasoning = self.causal_sentence().to_string();

        // one clause per part, reusing the stage-2 phrases verbatim
        let mut clauses = Vec::new();
        for part in &parts {
            let phrases: Vec<&str> = part
                .affordances
                .iter()
                .map(|a| a.function_phrase())
                .collect();
            clauses.push(format!("a {} that {}", part.label, phrases.join(" and ")));
        }
        let conclusion = format!(
            "A {family} measuring {dims} with {}.",
            clauses.join(" and ")
        );

        Ok(CoTAnnotation {
            object_recognition,
            functional_inference,
            causal_reasoning,
            conclusion,
        })
    }
}

/// Sample a point cloud on the union of part surfaces (area-weighted,
/// deterministic from the seed) and build the gold annotation.
pub fn generate_shape(
    spec: &ShapeSpec,
    shape_id: &str,
    n_points: usize,
    seed: u64,
) -> Result<(PointCloud, CoTAnnotation)> {
    let parts = spec.parts()?;
    if n_points == 0 {
        return Err(CotError::Validation("n_points must be positive".into()));
    }
    let areas: Vec<f64> = parts.iter().map(|p| p.surface.area()).collect();
    let total: f64 = areas.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let mut pick = rng.gen_range(0.0..total);
        let mut idx = parts.len() - 1;
        for (i, a) in areas.iter().enumerate() {
            if pick < *a {
                idx = i;
                break;
            }
            pick -= a;
        }
        points.push(parts[idx].surface.sample(&mut rng));
    }
    let cloud = PointCloud::new(shape_id, points)?;
    let gold = spec.gold_annotation()?;
    Ok((cloud, gold))
}
