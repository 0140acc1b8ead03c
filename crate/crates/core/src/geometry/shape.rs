use serde::{Deserialize, Serialize};

use super::GridDomain;
use crate::error::{LabError, Result};
use crate::grid::GridSpec;

/// A planar set description. Base shapes are open; subtracted shapes are
/// removed together with their boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    Rect {
        x0: f64,
        x1: f64,
        y0: f64,
        y1: f64,
    },
    Disk {
        cx: f64,
        cy: f64,
        r: f64,
    },
    /// Interior of a simple polygon (vertices in either orientation).
    Polygon { vertices: Vec<[f64; 2]> },
    /// A single point. On a grid it selects the nearest node.
    Point { x: f64, y: f64 },
    /// Tube of the given half width around a polyline.
    Channel {
        points: Vec<[f64; 2]>,
        half_width: f64,
    },
    Union { parts: Vec<Shape> },
    Difference { base: Box<Shape>, minus: Vec<Shape> },
}

impl Shape {
    pub fn disk(cx: f64, cy: f64, r: f64) -> Self {
        Shape::Disk { cx, cy, r }
    }

    pub fn rect(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Shape::Rect { x0, x1, y0, y1 }
    }

    pub fn minus(self, parts: Vec<Shape>) -> Self {
        Shape::Difference {
            base: Box::new(self),
            minus: parts,
        }
    }

    /// Membership test. `closed` includes the boundary; `point_tol` is the
    /// half-size of the square a `Point` occupies.
    pub fn contains(&self, x: f64, y: f64, closed: bool, point_tol: f64) -> bool {
        match self {
            Shape::Rect { x0, x1, y0, y1 } => {
                if closed {
                    *x0 <= x && x <= *x1 && *y0 <= y && y <= *y1
                } else {
                    *x0 < x && x < *x1 && *y0 < y && y < *y1
                }
            }
            Shape::Disk { cx, cy, r } => {
                let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                if closed {
                    d2 <= r * r
                } else {
                    d2 < r * r
                }
            }
            Shape::Polygon { vertices } => {
                let inside = point_in_polygon(vertices, x, y);
                if closed {
                    inside || polyline_distance(vertices, true, x, y) <= 1e-12
                } else {
                    inside && polyline_distance(vertices, true, x, y) > 1e-12
                }
            }
            Shape::Point { x: px, y: py } => {
                (x - px).abs() <= point_tol && (y - py).abs() <= point_tol
            }
            Shape::Channel { points, half_width } => {
                let d = polyline_distance(points, false, x, y);
                if closed {
                    d <= *half_width
                } else {
                    d < *half_width
                }
            }
            Shape::Union { parts } => parts.iter().any(|s| s.contains(x, y, closed, point_tol)),
            Shape::Difference { base, minus } => {
                base.contains(x, y, closed, point_tol)
                    && !minus.iter().any(|s| s.contains(x, y, true, point_tol))
            }
        }
    }

    /// Bounding box `[xmin, xmax, ymin, ymax]`, or `None` for an empty union.
    pub fn bounds(&self) -> Option<[f64; 4]> {
        match self {
            Shape::Rect { x0, x1, y0, y1 } => Some([*x0, *x1, *y0, *y1]),
            Shape::Disk { cx, cy, r } => Some([cx - r, cx + r, cy - r, cy + r]),
            Shape::Polygon { vertices } => bounds_of(vertices, 0.0),
            Shape::Point { x, y } => Some([*x, *x, *y, *y]),
            Shape::Channel { points, half_width } => bounds_of(points, *half_width),
            Shape::Union { parts } => parts
                .iter()
                .filter_map(Shape::bounds)
                .reduce(|a, b| [a[0].min(b[0]), a[1].max(b[1]), a[2].min(b[2]), a[3].max(b[3])]),
            Shape::Difference { base, .. } => base.bounds(),
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(LabError::InvalidParams(m.to_string()));
        match self {
            Shape::Rect { x0, x1, y0, y1 } if !(x1 > x0 && y1 > y0) => bad("rect with empty extent"),
            Shape::Disk { r, .. } if !(*r > 0.0) => bad("disk radius must be positive"),
            Shape::Polygon { vertices } if vertices.len() < 3 => bad("polygon needs 3 vertices"),
            Shape::Channel { points, half_width } if points.len() < 2 || !(*half_width > 0.0) => {
                bad("channel needs 2 points and a positive half width")
            }
            Shape::Union { parts } if parts.is_empty() => Err(LabError::EmptyDescription),
            Shape::Union { parts } => parts.iter().try_for_each(Shape::validate),
            Shape::Difference { base, minus } => {
                base.validate()?;
                minus.iter().try_for_each(Shape::validate)
            }
            _ => Ok(()),
        }
    }
}

fn bounds_of(points: &[[f64; 2]], pad: f64) -> Option<[f64; 4]> {
    points.iter().fold(None, |acc: Option<[f64; 4]>, p| {
        let b = [p[0] - pad, p[0] + pad, p[1] - pad, p[1] + pad];
        Some(match acc {
            None => b,
            Some(a) => [a[0].min(b[0]), a[1].max(b[1]), a[2].min(b[2]), a[3].max(b[3])],
        })
    })
}

fn point_in_polygon(v: &[[f64; 2]], x: f64, y: f64) -> bool {
    let mut inside = false;
    let n = v.len();
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = (v[i][0], v[i][1]);
        let (xj, yj) = (v[j][0], v[j][1]);
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn segment_distance(a: [f64; 2], b: [f64; 2], x: f64, y: f64) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((x - a[0]) * dx + (y - a[1]) * dy) / len2).clamp(0.0, 1.0)
    };
    let (px, py) = (a[0] + t * dx, a[1] + t * dy);
    ((x - px).powi(2) + (y - py).powi(2)).sqrt()
}

fn polyline_distance(points: &[[f64; 2]], closed: bool, x: f64, y: f64) -> f64 {
    let mut d = f64::INFINITY;
    for w in points.windows(2) {
        d = d.min(segment_distance(w[0], w[1], x, y));
    }
    if closed && points.len() > 2 {
        d = d.min(segment_distance(points[points.len() - 1], points[0], x, y));
    }
    d
}

/// Rasterizes `shape` by node sampling: a node belongs to the domain iff its
/// coordinates lie in the (open) set.
pub fn rasterize(shape: &Shape, grid: &GridSpec) -> Result<GridDomain> {
    shape.validate()?;
    let b = shape.bounds().ok_or(LabError::EmptyDescription)?;
    let [x0, x1, y0, y1] = grid.bbox;
    if !(b[0] > x0 && b[1] < x1 && b[2] > y0 && b[3] < y1) {
        return Err(LabError::TouchesBoundary(format!(
            "shape bounds {b:?} not strictly inside {:?}",
            grid.bbox
        )));
    }
    let tol = 0.5 * grid.h;
    let mask = (0..grid.n_nodes())
        .map(|k| {
            let (x, y) = grid.node_xy(k);
            shape.contains(x, y, false, tol)
        })
        .collect();
    GridDomain::from_mask(*grid, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn margin_box_measure_is_exact_cell_count() {
        let g = GridSpec::unit(33).unwrap();
        let h = g.h;
        // nodes 1..=31 on each axis are inside, giving 30 x 30 full cells
        let d = rasterize(&Shape::rect(0.5 * h, 1.0 - 0.5 * h, 0.5 * h, 1.0 - 0.5 * h), &g).unwrap();
        assert_eq!(d.node_count(), 31 * 31);
        assert_eq!(d.measure(), (30.0 * h) * (30.0 * h));
    }

    #[test]
    fn disk_area_within_perimeter_band() {
        let g = GridSpec::unit(129).unwrap();
        let r = 0.3;
        let d = rasterize(&Shape::disk(0.5, 0.5, r), &g).unwrap();
        let err = (d.measure() - PI * r * r).abs();
        assert!(err <= 4.0 * r * g.h, "err {err} vs band {}", 4.0 * r * g.h);
    }

    #[test]
    fn empty_union_is_rejected() {
        let g = GridSpec::unit(9).unwrap();
        assert_eq!(
            rasterize(&Shape::Union { parts: vec![] }, &g).unwrap_err(),
            LabError::EmptyDescription
        );
    }

    #[test]
    fn touching_the_box_is_rejected() {
        let g = GridSpec::unit(9).unwrap();
        let err = rasterize(&Shape::disk(0.5, 0.5, 0.5), &g).unwrap_err();
        assert!(matches!(err, LabError::TouchesBoundary(_)));
    }

    #[test]
    fn point_picks_nearest_node() {
        let g = GridSpec::unit(9).unwrap();
        let d = rasterize(&Shape::Point { x: 0.51, y: 0.49 }, &g).unwrap();
        assert_eq!(d.node_count(), 1);
        assert!(d.contains(g.node(4, 4)));
    }

    #[test]
    fn polygon_and_channel_membership() {
        let tri = Shape::Polygon {
            vertices: vec![[0.2, 0.2], [0.8, 0.2], [0.5, 0.8]],
        };
        assert!(tri.contains(0.5, 0.4, false, 0.0));
        assert!(!tri.contains(0.2, 0.7, false, 0.0));
        let ch = Shape::Channel {
            points: vec![[0.2, 0.5], [0.8, 0.5]],
            half_width: 0.05,
        };
        assert!(ch.contains(0.5, 0.53, false, 0.0));
        assert!(!ch.contains(0.5, 0.56, false, 0.0));
        assert!(!ch.contains(0.9, 0.5, false, 0.0));
    }
}
