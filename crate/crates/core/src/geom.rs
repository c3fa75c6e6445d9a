//! Plane geometry primitives and quadrature rules.
//!
//! Everything downstream works with straight-sided triangles, so gradients of
//! P1 basis functions are constant per element and the only quadrature that
//! matters is for smooth data terms. Triangle rules are given in barycentric
//! coordinates with weights summing to one (scale by element area).

use std::ops::{Add, Div, Mul, Neg, Sub};

/// A point or vector in the plane.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the cross product `self x o`.
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn dist(self, o: Vec2) -> f64 {
        (self - o).norm()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Div<f64> for Vec2 {
    type Output = Vec2;
    fn div(self, s: f64) -> Vec2 {
        Vec2::new(self.x / s, self.y / s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// A 2x2 matrix, used for Jacobians of vector fields.
///
/// Row convention: `m.row(i)` is the gradient of the i-th component, so
/// `m * n` has components `grad(v_i) . n`, the normal derivative of each
/// component.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Mat2 {
    pub a: f64, // d v1 / dx
    pub b: f64, // d v1 / dy
    pub c: f64, // d v2 / dx
    pub d: f64, // d v2 / dy
}

impl Mat2 {
    pub const ZERO: Mat2 = Mat2 { a: 0.0, b: 0.0, c: 0.0, d: 0.0 };

    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Mat2 { a, b, c, d }
    }

    pub fn row(self, i: usize) -> Vec2 {
        match i {
            0 => Vec2::new(self.a, self.b),
            _ => Vec2::new(self.c, self.d),
        }
    }

    pub fn trace(self) -> f64 {
        self.a + self.d
    }

    pub fn mul_vec(self, v: Vec2) -> Vec2 {
        Vec2::new(self.a * v.x + self.b * v.y, self.c * v.x + self.d * v.y)
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    fn add(self, o: Mat2) -> Mat2 {
        Mat2::new(self.a + o.a, self.b + o.b, self.c + o.c, self.d + o.d)
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, o: Mat2) -> Mat2 {
        Mat2::new(self.a - o.a, self.b - o.b, self.c - o.c, self.d - o.d)
    }
}

impl Mul<f64> for Mat2 {
    type Output = Mat2;
    fn mul(self, s: f64) -> Mat2 {
        Mat2::new(self.a * s, self.b * s, self.c * s, self.d * s)
    }
}

/// Twice the signed area of the triangle (a, b, c); positive when
/// counterclockwise.
pub fn signed_area2(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    (b - a).cross(c - a)
}

pub fn triangle_area(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    0.5 * signed_area2(a, b, c)
}

/// Longest edge length of the triangle.
pub fn triangle_diameter(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    a.dist(b).max(b.dist(c)).max(c.dist(a))
}

/// Smallest interior angle in radians.
pub fn triangle_min_angle(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    let angle = |p: Vec2, q: Vec2, r: Vec2| {
        let u = q - p;
        let v = r - p;
        (u.dot(v) / (u.norm() * v.norm())).clamp(-1.0, 1.0).acos()
    };
    angle(a, b, c).min(angle(b, c, a)).min(angle(c, a, b))
}

/// Barycentric coordinates of `p` with respect to (a, b, c).
pub fn barycentric(p: Vec2, a: Vec2, b: Vec2, c: Vec2) -> [f64; 3] {
    let det = signed_area2(a, b, c);
    let l0 = signed_area2(p, b, c) / det;
    let l1 = signed_area2(a, p, c) / det;
    [l0, l1, 1.0 - l0 - l1]
}

/// Whether `p` lies inside the triangle, with a signed tolerance on the
/// barycentric coordinates (negative `tol` admits points slightly outside).
pub fn contains_point(p: Vec2, a: Vec2, b: Vec2, c: Vec2, tol: f64) -> bool {
    let l = barycentric(p, a, b, c);
    l.iter().all(|&li| li >= -tol)
}

/// Gradients of the three P1 hat functions on (a, b, c); constant vectors.
pub fn p1_gradients(a: Vec2, b: Vec2, c: Vec2) -> [Vec2; 3] {
    let det = signed_area2(a, b, c);
    [
        Vec2::new(b.y - c.y, c.x - b.x) / det,
        Vec2::new(c.y - a.y, a.x - c.x) / det,
        Vec2::new(a.y - b.y, b.x - a.x) / det,
    ]
}

/// A quadrature point in barycentric coordinates with weight (weights sum
/// to 1 over the rule).
#[derive(Clone, Copy, Debug)]
pub struct TriQuadPoint {
    pub bary: [f64; 3],
    pub weight: f64,
}

/// Symmetric triangle quadrature rule exact for the given polynomial degree.
///
/// Supported degrees: 1, 2, 4, 5, 7 (higher requests fall back to 7; the
/// 13-point rule has one negative weight, which is harmless for smooth data).
pub fn triangle_rule(degree: usize) -> &'static [TriQuadPoint] {
    const P1: &[TriQuadPoint] = &[TriQuadPoint { bary: [THIRD, THIRD, THIRD], weight: 1.0 }];
    const THIRD: f64 = 1.0 / 3.0;
    const P2: &[TriQuadPoint] = &{
        let (a, b) = (2.0 / 3.0, 1.0 / 6.0);
        [
            TriQuadPoint { bary: [a, b, b], weight: THIRD },
            TriQuadPoint { bary: [b, a, b], weight: THIRD },
            TriQuadPoint { bary: [b, b, a], weight: THIRD },
        ]
    };
    const P4: &[TriQuadPoint] = &{
        let (a1, b1, w1) = (0.108103018168070, 0.445948490915965, 0.223381589678011);
        let (a2, b2, w2) = (0.816847572980459, 0.091576213509771, 0.109951743655322);
        [
            TriQuadPoint { bary: [a1, b1, b1], weight: w1 },
            TriQuadPoint { bary: [b1, a1, b1], weight: w1 },
            TriQuadPoint { bary: [b1, b1, a1], weight: w1 },
            TriQuadPoint { bary: [a2, b2, b2], weight: w2 },
            TriQuadPoint { bary: [b2, a2, b2], weight: w2 },
            TriQuadPoint { bary: [b2, b2, a2], weight: w2 },
        ]
    };
    const P5: &[TriQuadPoint] = &{
        let (a1, b1, w1) = (0.059715871789770, 0.470142064105115, 0.132394152788506);
        let (a2, b2, w2) = (0.797426985353087, 0.101286507323456, 0.125939180544827);
        [
            TriQuadPoint { bary: [THIRD, THIRD, THIRD], weight: 0.225 },
            TriQuadPoint { bary: [a1, b1, b1], weight: w1 },
            TriQuadPoint { bary: [b1, a1, b1], weight: w1 },
            TriQuadPoint { bary: [b1, b1, a1], weight: w1 },
            TriQuadPoint { bary: [a2, b2, b2], weight: w2 },
            TriQuadPoint { bary: [b2, a2, b2], weight: w2 },
            TriQuadPoint { bary: [b2, b2, a2], weight: w2 },
        ]
    };
    const P7: &[TriQuadPoint] = &{
        let (a1, b1, w1) = (0.479308067841923, 0.260345966079038, 0.175615257433204);
        let (a2, b2, w2) = (0.869739794195568, 0.065130102902216, 0.053347235608839);
        let (a3, b3, c3, w3) =
            (0.638444188569809, 0.312865496004875, 0.048690315425316, 0.077113760890257);
        [
            TriQuadPoint { bary: [THIRD, THIRD, THIRD], weight: -0.149570044467670 },
            TriQuadPoint { bary: [a1, b1, b1], weight: w1 },
            TriQuadPoint { bary: [b1, a1, b1], weight: w1 },
            TriQuadPoint { bary: [b1, b1, a1], weight: w1 },
            TriQuadPoint { bary: [a2, b2, b2], weight: w2 },
            TriQuadPoint { bary: [b2, a2, b2], weight: w2 },
            TriQuadPoint { bary: [b2, b2, a2], weight: w2 },
            TriQuadPoint { bary: [a3, b3, c3], weight: w3 },
            TriQuadPoint { bary: [a3, c3, b3], weight: w3 },
            TriQuadPoint { bary: [b3, a3, c3], weight: w3 },
            TriQuadPoint { bary: [b3, c3, a3], weight: w3 },
            TriQuadPoint { bary: [c3, a3, b3], weight: w3 },
            TriQuadPoint { bary: [c3, b3, a3], weight: w3 },
        ]
    };
    match degree {
        0 | 1 => P1,
        2 | 3 => P2,
        4 => P4,
        5 | 6 => P5,
        _ => P7,
    }
}

/// Integrate `f` over the triangle (a, b, c) with the rule of the given degree.
pub fn integrate_triangle<F: FnMut(Vec2) -> f64>(
    a: Vec2,
    b: Vec2,
    c: Vec2,
    degree: usize,
    mut f: F,
) -> f64 {
    let area = triangle_area(a, b, c);
    triangle_rule(degree)
        .iter()
        .map(|q| {
            let p = a * q.bary[0] + b * q.bary[1] + c * q.bary[2];
            q.weight * f(p)
        })
        .sum::<f64>()
        * area
}

/// Gauss-Legendre nodes/weights on [0, 1]; weights sum to 1.
pub fn segment_rule(points: usize) -> &'static [(f64, f64)] {
    const G2: &[(f64, f64)] = &[(0.2113248654051871, 0.5), (0.7886751345948129, 0.5)];
    const G3: &[(f64, f64)] = &[
        (0.1127016653792583, 5.0 / 18.0),
        (0.5, 4.0 / 9.0),
        (0.8872983346207417, 5.0 / 18.0),
    ];
    const G5: &[(f64, f64)] = &[
        (0.04691007703066800, 0.11846344252809454),
        (0.23076534494715845, 0.23931433524968324),
        (0.5, 0.28444444444444444),
        (0.76923465505284155, 0.23931433524968324),
        (0.95308992296933200, 0.11846344252809454),
    ];
    match points {
        0..=2 => G2,
        3 | 4 => G3,
        _ => G5,
    }
}

/// Integrate `f` along the segment from `a` to `b`.
pub fn integrate_segment<F: FnMut(Vec2) -> f64>(a: Vec2, b: Vec2, points: usize, mut f: F) -> f64 {
    let len = a.dist(b);
    segment_rule(points)
        .iter()
        .map(|&(t, w)| w * f(a + (b - a) * t))
        .sum::<f64>()
        * len
}

/// Halton sequence point (bases 2 and 3), for deterministic quasi-random
/// sampling in verification checks.
pub fn halton(index: usize) -> Vec2 {
    fn radical_inverse(mut i: usize, base: usize) -> f64 {
        let mut f = 1.0;
        let mut r = 0.0;
        while i > 0 {
            f /= base as f64;
            r += f * (i % base) as f64;
            i /= base;
        }
        r
    }
    Vec2::new(radical_inverse(index + 1, 2), radical_inverse(index + 1, 3))
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: Vec2 = Vec2 { x: 0.0, y: 0.0 };
    const B: Vec2 = Vec2 { x: 1.0, y: 0.0 };
    const C: Vec2 = Vec2 { x: 0.0, y: 1.0 };

    #[test]
    fn rules_integrate_monomials_exactly() {
        // x^p y^q over the reference triangle = p! q! / (p+q+2)!.
        let exact = |p: u32, q: u32| {
            let fact = |n: u32| (1..=n).map(|k| k as f64).product::<f64>();
            fact(p) * fact(q) / fact(p + q + 2)
        };
        for &deg in &[1usize, 2, 4, 5, 7] {
            for p in 0..=deg as u32 {
                for q in 0..=(deg as u32 - p) {
                    let got = integrate_triangle(A, B, C, deg, |v| v.x.powi(p as i32) * v.y.powi(q as i32));
                    let want = exact(p, q);
                    assert!(
                        (got - want).abs() < 1e-14,
                        "deg {deg} monomial x^{p} y^{q}: {got} vs {want}"
                    );
                }
            }
        }
    }

    #[test]
    fn segment_rule_exactness() {
        // 5-point Gauss is exact through degree 9.
        for p in 0..=9 {
            let got = integrate_segment(A, B, 5, |v| v.x.powi(p));
            let want = 1.0 / (p as f64 + 1.0);
            assert!((got - want).abs() < 1e-14, "degree {p}");
        }
    }

    #[test]
    fn p1_gradients_partition_of_unity() {
        let g = p1_gradients(A, B, C);
        let sum = g[0] + g[1] + g[2];
        assert!(sum.norm() < 1e-15);
        // Hat i is 1 at vertex i, 0 at others; gradient reproduces that drop.
        assert!((g[1].x - 1.0).abs() < 1e-15 && g[1].y.abs() < 1e-15);
        assert!((g[2].y - 1.0).abs() < 1e-15 && g[2].x.abs() < 1e-15);
    }

    #[test]
    fn barycentric_roundtrip() {
        let p = Vec2::new(0.2, 0.3);
        let l = barycentric(p, A, B, C);
        let back = A * l[0] + B * l[1] + C * l[2];
        assert!(back.dist(p) < 1e-15);
        assert!(contains_point(p, A, B, C, 1e-12));
        assert!(!contains_point(Vec2::new(0.8, 0.8), A, B, C, 1e-12));
    }

    #[test]
    fn min_angle_right_isoceles() {
        let ang = triangle_min_angle(A, B, C);
        assert!((ang - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
    }
}
