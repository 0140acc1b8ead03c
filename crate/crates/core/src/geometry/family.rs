use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{rasterize, GridDomain, Shape};
use crate::error::{LabError, Result};
use crate::grid::GridSpec;

/// Geometry of a perturbation family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilyKind {
    /// Two disjoint disks in the limit. Each member joins them by a handle of
    /// width `eps` and punches a closed hole of radius `hole_ratio * eps` at
    /// each disk center.
    Dumbbell {
        left: [f64; 2],
        right: [f64; 2],
        radius: f64,
        #[serde(default = "default_hole_ratio")]
        hole_ratio: f64,
    },
    /// A disk minus a concentric closed hole of radius `eps`. The limit is the
    /// disk punctured at its center node.
    ShrinkingHole { center: [f64; 2], radius: f64 },
    /// A rectangle cut by a sinusoidal crack `y = y_c + eps sin(2π k t)` over
    /// `x ∈ [x_start, x_end]`; the limit has the straight crack. Cracks are
    /// removed as one-cell-wide channels.
    OscillatingCrack {
        rect: [f64; 4],
        crack_y: f64,
        crack_x: [f64; 2],
        #[serde(default = "default_waves")]
        waves: f64,
    },
    /// Regular polygons inscribed in a disk with sagitta at most `eps`.
    PolygonDisk { center: [f64; 2], radius: f64 },
}

fn default_hole_ratio() -> f64 {
    0.5
}

fn default_waves() -> f64 {
    3.0
}

/// Serialized flat: the family fields and `eps_list` share one object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "serde_json::Map<String, serde_json::Value>")]
pub struct FamilySpec {
    #[serde(flatten)]
    pub kind: FamilyKind,
    pub eps_list: Vec<f64>,
}

// `flatten` cannot reject unknown keys, so split the object by hand and let
// `FamilyKind` do the rejecting.
impl TryFrom<serde_json::Map<String, serde_json::Value>> for FamilySpec {
    type Error = String;

    fn try_from(mut m: serde_json::Map<String, serde_json::Value>) -> std::result::Result<Self, String> {
        let eps = m.remove("eps_list").ok_or("missing field `eps_list`")?;
        let eps_list = serde_json::from_value(eps).map_err(|e| format!("eps_list: {e}"))?;
        let kind = serde_json::from_value(serde_json::Value::Object(m)).map_err(|e| e.to_string())?;
        Ok(FamilySpec { kind, eps_list })
    }
}

/// The generated members, ordered like `eps_list`, and their limit set.
#[derive(Debug, Clone)]
pub struct Family {
    pub eps: Vec<f64>,
    pub members: Vec<GridDomain>,
    pub limit: GridDomain,
}

impl FamilySpec {
    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        if self.eps_list.is_empty() {
            return Err(LabError::InvalidFamily("eps_list is empty".into()));
        }
        if self.eps_list.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(LabError::InvalidFamily(format!(
                "eps_list must be strictly decreasing: {:?}",
                self.eps_list
            )));
        }
        if let Some(&eps) = self.eps_list.iter().find(|&&e| !(e > 2.0 * grid.h)) {
            return Err(LabError::Unresolvable { eps, h: grid.h });
        }
        Ok(())
    }

    /// Shape of the member at `eps` on a grid with spacing `h`.
    pub fn member_shape(&self, eps: f64, h: f64) -> Shape {
        match &self.kind {
            FamilyKind::Dumbbell {
                left,
                right,
                radius,
                hole_ratio,
            } => {
                let cy = 0.5 * (left[1] + right[1]);
                let handle = Shape::rect(left[0], right[0], cy - 0.5 * eps, cy + 0.5 * eps);
                let hole = hole_ratio * eps;
                Shape::Union {
                    parts: vec![
                        Shape::disk(left[0], left[1], *radius),
                        Shape::disk(right[0], right[1], *radius),
                        handle,
                    ],
                }
                .minus(vec![
                    Shape::disk(left[0], left[1], hole),
                    Shape::disk(right[0], right[1], hole),
                ])
            }
            FamilyKind::ShrinkingHole { center, radius } => {
                Shape::disk(center[0], center[1], *radius).minus(vec![Shape::disk(center[0], center[1], eps)])
            }
            FamilyKind::OscillatingCrack {
                rect,
                crack_y,
                crack_x,
                waves,
            } => Shape::rect(rect[0], rect[1], rect[2], rect[3]).minus(vec![crack(*crack_y, *crack_x, *waves, eps, h)]),
            FamilyKind::PolygonDisk { center, radius } => {
                let n = polygon_sides(*radius, eps);
                let vertices = (0..n)
                    .map(|k| {
                        let t = 2.0 * PI * k as f64 / n as f64;
                        [center[0] + radius * t.cos(), center[1] + radius * t.sin()]
                    })
                    .collect();
                Shape::Polygon { vertices }
            }
        }
    }

    pub fn limit_shape(&self, h: f64) -> Shape {
        match &self.kind {
            FamilyKind::Dumbbell {
                left, right, radius, ..
            } => Shape::Union {
                parts: vec![
                    Shape::disk(left[0], left[1], *radius),
                    Shape::disk(right[0], right[1], *radius),
                ],
            },
            FamilyKind::ShrinkingHole { center, radius } => {
                Shape::disk(center[0], center[1], *radius).minus(vec![Shape::Point {
                    x: center[0],
                    y: center[1],
                }])
            }
            FamilyKind::OscillatingCrack {
                rect,
                crack_y,
                crack_x,
                waves,
            } => Shape::rect(rect[0], rect[1], rect[2], rect[3]).minus(vec![crack(*crack_y, *crack_x, *waves, 0.0, h)]),
            FamilyKind::PolygonDisk { center, radius } => Shape::disk(center[0], center[1], *radius),
        }
    }
}

/// Smallest regular polygon inscribed in a disk of radius `r` whose edges stay
/// within `eps` of the circle.
fn polygon_sides(r: f64, eps: f64) -> usize {
    if eps >= r {
        return 3;
    }
    let n = (PI / (1.0 - eps / r).acos()).ceil() as usize;
    n.max(3)
}

fn crack(y_c: f64, x: [f64; 2], waves: f64, amp: f64, h: f64) -> Shape {
    let len = x[1] - x[0];
    let samples = ((len / h) * 8.0).ceil().max(2.0) as usize;
    let points = (0..=samples)
        .map(|s| {
            let t = s as f64 / samples as f64;
            [x[0] + t * len, y_c + amp * (2.0 * PI * waves * t).sin()]
        })
        .collect();
    // every curve point has a node within h/√2, and every 4-neighbor pair the
    // curve separates loses at least one node
    Shape::Channel {
        points,
        half_width: h * std::f64::consts::FRAC_1_SQRT_2 + 1e-12,
    }
}

/// Rasterizes every member of a family and its limit set.
pub fn family_generate(f: &FamilySpec, grid: &GridSpec) -> Result<Family> {
    f.validate(grid)?;
    let members = f
        .eps_list
        .iter()
        .map(|&eps| rasterize(&f.member_shape(eps, grid.h), grid))
        .collect::<Result<Vec<_>>>()?;
    let limit = rasterize(&f.limit_shape(grid.h), grid)?;
    Ok(Family {
        eps: f.eps_list.clone(),
        members,
        limit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{ekeland_distance, hc_distance, kuratowski_check};

    #[test]
    fn spec_json_is_flat_and_strict() {
        let s: FamilySpec = serde_json::from_str(r#"{"kind": "shrinking_hole", "center": [0.5, 0.5], "radius": 0.4, "eps_list": [0.2, 0.1]}"#).unwrap();
        assert_eq!(s.eps_list, vec![0.2, 0.1]);
        let back: FamilySpec = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<FamilySpec>(r#"{"kind": "shrinking_hole", "center": [0.5, 0.5], "radius": 0.4, "eps_list": [0.2], "extra": 1}"#).is_err());
        assert!(serde_json::from_str::<FamilySpec>(r#"{"kind": "shrinking_hole", "center": [0.5, 0.5], "radius": 0.4}"#).is_err());
    }

    fn dumbbell(eps: Vec<f64>) -> FamilySpec {
        FamilySpec {
            kind: FamilyKind::Dumbbell {
                left: [0.25, 0.5],
                right: [0.75, 0.5],
                radius: 0.2,
                hole_ratio: 0.5,
            },
            eps_list: eps,
        }
    }

    fn shrinking_hole(eps: Vec<f64>) -> FamilySpec {
        FamilySpec {
            kind: FamilyKind::ShrinkingHole {
                center: [0.5, 0.5],
                radius: 0.4,
            },
            eps_list: eps,
        }
    }

    #[test]
    fn dumbbell_ekeland_strictly_decreasing() {
        let g = GridSpec::unit(129).unwrap();
        let fam = family_generate(&dumbbell(vec![0.2, 0.1, 0.05]), &g).unwrap();
        assert_eq!(fam.members.len(), 3);
        let d: Vec<f64> = fam
            .members
            .iter()
            .map(|m| ekeland_distance(m, &fam.limit).unwrap())
            .collect();
        assert!(d.windows(2).all(|w| w[1] < w[0]), "{d:?}");
        // the limit is two disjoint disks: nothing on the axis between them
        assert!(!fam.limit.contains(g.node(64, 64)));
    }

    #[test]
    fn shrinking_hole_hc_distance_tracks_eps() {
        let g = GridSpec::unit(129).unwrap();
        let eps = vec![0.2, 0.1, 0.05];
        let fam = family_generate(&shrinking_hole(eps.clone()), &g).unwrap();
        for (m, e) in fam.members.iter().zip(&eps) {
            let d = hc_distance(m, &fam.limit).unwrap();
            assert!((d - e).abs() <= 2.0 * g.h, "eps {e}: {d}");
        }
    }

    #[test]
    fn oscillating_crack_within_amplitude() {
        let g = GridSpec::unit(129).unwrap();
        let spec = FamilySpec {
            kind: FamilyKind::OscillatingCrack {
                rect: [0.1, 0.9, 0.1, 0.9],
                crack_y: 0.5,
                crack_x: [0.3, 0.7],
                waves: 3.0,
            },
            eps_list: vec![0.1, 0.05, 0.025],
        };
        let fam = family_generate(&spec, &g).unwrap();
        for (m, e) in fam.members.iter().zip(&fam.eps) {
            let d = hc_distance(m, &fam.limit).unwrap();
            assert!(d <= e + 2.0 * g.h, "eps {e}: {d}");
        }
    }

    #[test]
    fn polygon_disk_approaches_disk() {
        let g = GridSpec::unit(129).unwrap();
        let spec = FamilySpec {
            kind: FamilyKind::PolygonDisk {
                center: [0.5, 0.5],
                radius: 0.35,
            },
            eps_list: vec![0.1, 0.05, 0.025],
        };
        let fam = family_generate(&spec, &g).unwrap();
        for (m, e) in fam.members.iter().zip(&fam.eps) {
            assert!(fam.limit.contains_domain(m));
            assert!(hc_distance(m, &fam.limit).unwrap() <= e + 2.0 * g.h);
        }
    }

    #[test]
    fn unresolvable_eps_is_named() {
        let g = GridSpec::unit(33).unwrap();
        let err = family_generate(&dumbbell(vec![0.2, 0.05]), &g).unwrap_err();
        assert_eq!(err, LabError::Unresolvable { eps: 0.05, h: g.h });
        assert!(family_generate(&dumbbell(vec![0.1, 0.2]), &g).is_err());
    }

    #[test]
    fn kuratowski_verdicts_on_shipped_families() {
        let g = GridSpec::unit(129).unwrap();
        let tol = 2.0 * g.h;
        let hole = family_generate(&shrinking_hole(vec![0.2, 0.1, 0.05, 0.025]), &g).unwrap();
        let r = kuratowski_check(&hole.members, &hole.limit, tol).unwrap();
        assert!(r.k1.pass && r.k2.pass, "{r:?}");

        let bell = family_generate(&dumbbell(vec![0.2, 0.1, 0.05, 0.025]), &g).unwrap();
        let r = kuratowski_check(&bell.members, &bell.limit, tol).unwrap();
        assert!(r.k1.pass, "{r:?}");
        assert!(!r.k2.pass, "{r:?}");
    }
}
