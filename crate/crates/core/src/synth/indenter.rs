use serde::{Deserialize, Serialize};

/// Contact-law constants. Depths are in mm, forces in N.
const K_SPHERE: f64 = 4.7;
const K_FLAT: f64 = 1.2;
const K_CONE: f64 = 4.0;
const K_STAR: f64 = 0.75;

/// Slope of the skirt around flat-faced indenters, so the indentation of a
/// punch is continuous rather than a step.
pub const CHAMFER_SLOPE: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Shape {
    Sphere { radius: f64 },
    /// Flat circular punch.
    Cylinder { radius: f64 },
    /// Flat rectangular punch, `width` along x and `length` along y.
    Box { width: f64, length: f64 },
    /// Cone with its apex down; `half_angle` in degrees.
    Cone { half_angle: f64 },
    /// Flat punch with a star footprint.
    StarPrism { points: usize, outer: f64, inner: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Indenter {
    pub id: String,
    #[serde(flatten)]
    pub shape: Shape,
}

impl Indenter {
    pub fn new(id: impl Into<String>, shape: Shape) -> Self {
        Self { id: id.into(), shape }
    }

    /// Height of the indenter's lower surface above its lowest point at a
    /// lateral offset in the indenter frame.
    pub fn profile_mm(&self, x: f64, y: f64) -> f64 {
        let r = x.hypot(y);
        match self.shape {
            Shape::Sphere { radius } => {
                if r >= radius {
                    f64::INFINITY
                } else {
                    radius - (radius * radius - r * r).sqrt()
                }
            }
            Shape::Cylinder { radius } => CHAMFER_SLOPE * (r - radius).max(0.0),
            Shape::Box { width, length } => {
                let ex = (x.abs() - width / 2.0).max(0.0);
                let ey = (y.abs() - length / 2.0).max(0.0);
                CHAMFER_SLOPE * ex.hypot(ey)
            }
            Shape::Cone { half_angle } => r / half_angle.to_radians().tan(),
            Shape::StarPrism { .. } => CHAMFER_SLOPE * self.star_outside_distance(x, y),
        }
    }

    fn star_vertices(&self) -> Vec<[f64; 2]> {
        let Shape::StarPrism { points, outer, inner } = self.shape else {
            return Vec::new();
        };
        (0..2 * points)
            .map(|k| {
                let a = std::f64::consts::PI * k as f64 / points as f64 + std::f64::consts::FRAC_PI_2;
                let r = if k % 2 == 0 { outer } else { inner };
                [r * a.cos(), r * a.sin()]
            })
            .collect()
    }

    /// Distance from a point to the star polygon, zero inside.
    fn star_outside_distance(&self, x: f64, y: f64) -> f64 {
        let v = self.star_vertices();
        let mut inside = false;
        let mut best = f64::INFINITY;
        for i in 0..v.len() {
            let (a, b) = (v[i], v[(i + 1) % v.len()]);
            if (a[1] > y) != (b[1] > y) && x < a[0] + (y - a[1]) * (b[0] - a[0]) / (b[1] - a[1]) {
                inside = !inside;
            }
            let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
            let t = (((x - a[0]) * ex + (y - a[1]) * ey) / (ex * ex + ey * ey)).clamp(0.0, 1.0);
            best = best.min((x - a[0] - t * ex).hypot(y - a[1] - t * ey));
        }
        if inside {
            0.0
        } else {
            best
        }
    }

    /// Footprint area of a flat face in mm².
    pub fn face_area(&self) -> f64 {
        match self.shape {
            Shape::Cylinder { radius } => std::f64::consts::PI * radius * radius,
            Shape::Box { width, length } => width * length,
            Shape::StarPrism { .. } => {
                let v = self.star_vertices();
                let twice: f64 = (0..v.len())
                    .map(|i| {
                        let (a, b) = (v[i], v[(i + 1) % v.len()]);
                        a[0] * b[1] - b[0] * a[1]
                    })
                    .sum();
                twice.abs() / 2.0
            }
            Shape::Sphere { .. } | Shape::Cone { .. } => 0.0,
        }
    }

    /// Lateral radius (mm) beyond which a press of depth `d` mm leaves the gel
    /// untouched.
    pub fn contact_radius_mm(&self, d: f64) -> f64 {
        let skirt = d / CHAMFER_SLOPE;
        match self.shape {
            Shape::Sphere { radius } => {
                let d = d.min(radius);
                (2.0 * radius * d - d * d).sqrt()
            }
            Shape::Cylinder { radius } => radius + skirt,
            Shape::Box { width, length } => 0.5 * width.hypot(length) + skirt,
            Shape::Cone { half_angle } => d * half_angle.to_radians().tan(),
            Shape::StarPrism { outer, .. } => outer + skirt,
        }
    }

    /// Normal force at indentation depth `d` mm: Hertz-like `d^1.5` for
    /// spheres, linear in depth and face area for flat punches, quadratic
    /// for cones and star prisms.
    pub fn force(&self, d: f64) -> f64 {
        let d = d.max(0.0);
        match self.shape {
            Shape::Sphere { radius } => K_SPHERE * radius.sqrt() * d.powf(1.5),
            Shape::Cylinder { .. } | Shape::Box { .. } => K_FLAT * self.face_area() * d,
            Shape::Cone { half_angle } => K_CONE * half_angle.to_radians().tan() * d * d,
            Shape::StarPrism { .. } => K_STAR * self.face_area() * d * d,
        }
    }

    /// Inverse of [`Indenter::force`].
    pub fn depth_for_force(&self, f: f64) -> f64 {
        let f = f.max(0.0);
        match self.shape {
            Shape::Sphere { radius } => (f / (K_SPHERE * radius.sqrt())).powf(2.0 / 3.0),
            Shape::Cylinder { .. } | Shape::Box { .. } => f / (K_FLAT * self.face_area()),
            Shape::Cone { half_angle } => (f / (K_CONE * half_angle.to_radians().tan())).sqrt(),
            Shape::StarPrism { .. } => (f / (K_STAR * self.face_area())).sqrt(),
        }
    }
}

/// The 18 standard indenters: spheres, cylinders, square and rectangular
/// boxes, cones and star prisms, each family at two or more sizes.
pub fn standard_indenters() -> Vec<Indenter> {
    let mut v = Vec::with_capacity(18);
    let mut add = |id: &str, s: Shape| v.push(Indenter::new(id, s));
    add("sphere_r3", Shape::Sphere { radius: 3.0 });
    add("sphere_r4.8", Shape::Sphere { radius: 4.8 });
    add("cylinder_r1.5", Shape::Cylinder { radius: 1.5 });
    add("cylinder_r2.4", Shape::Cylinder { radius: 2.4 });
    add("square_3", Shape::Box { width: 3.0, length: 3.0 });
    add("square_4.8", Shape::Box { width: 4.8, length: 4.8 });
    add("rect_4x2", Shape::Box { width: 4.0, length: 2.0 });
    add("rect_6.4x3.2", Shape::Box { width: 6.4, length: 3.2 });
    add("rect_4.5x1.5", Shape::Box { width: 4.5, length: 1.5 });
    add("rect_7.2x2.4", Shape::Box { width: 7.2, length: 2.4 });
    add("cone_50", Shape::Cone { half_angle: 50.0 });
    add("cone_60", Shape::Cone { half_angle: 60.0 });
    add("cone_70", Shape::Cone { half_angle: 70.0 });
    add("cone_75", Shape::Cone { half_angle: 75.0 });
    add("star5_2.5", Shape::StarPrism { points: 5, outer: 2.5, inner: 1.2 });
    add("star5_4", Shape::StarPrism { points: 5, outer: 4.0, inner: 1.9 });
    add("star6_2.5", Shape::StarPrism { points: 6, outer: 2.5, inner: 1.4 });
    add("star6_4", Shape::StarPrism { points: 6, outer: 4.0, inner: 2.2 });
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn force_law_inverts() {
        for ind in standard_indenters() {
            for f in [1.0, 4.5, 15.0] {
                let d = ind.depth_for_force(f);
                assert!((ind.force(d) - f).abs() < 1e-9, "{}", ind.id);
            }
        }
    }

    #[test]
    fn force_strictly_increases_with_depth() {
        for ind in standard_indenters() {
            let mut last = ind.force(0.0);
            assert_eq!(last, 0.0);
            for k in 1..50 {
                let f = ind.force(k as f64 * 0.05);
                assert!(f > last);
                last = f;
            }
        }
    }

    #[test]
    fn star_area_and_inside_test() {
        let star = Indenter::new("s", Shape::StarPrism { points: 4, outer: 2.0, inner: 2.0_f64.sqrt() });
        // Inner vertices at radius sqrt(2) are collinear with the outer ones,
        // so this star is the diamond through (0, ±2) and (±2, 0).
        assert!((star.face_area() - 8.0).abs() < 1e-9);
        assert_eq!(star.profile_mm(0.3, 0.2), 0.0);
        assert!((star.profile_mm(3.0, 0.0) - CHAMFER_SLOPE * 1.0).abs() < 1e-12);
    }

    #[test]
    fn contact_radius_bounds_nonzero_indentation() {
        for ind in standard_indenters() {
            let d = ind.depth_for_force(15.0);
            let r = ind.contact_radius_mm(d);
            for k in 0..16 {
                let a = k as f64 * std::f64::consts::PI / 8.0;
                let (x, y) = (1.001 * r * a.cos(), 1.001 * r * a.sin());
                assert!(d - ind.profile_mm(x, y) <= 1e-9, "{}", ind.id);
            }
        }
    }
}
