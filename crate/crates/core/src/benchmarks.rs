//! Manufactured benchmark problems and error norms.
//!
//! Both cases prescribe smooth adjoint fields and build the data so the
//! chosen fields satisfy the full optimality system: `f = -lap(u) + grad p`,
//! `u_d = u + lap(phi) + grad r`, `y_d = y`, plus a contact traction datum
//! `g = dphi/dn + r n` on the contact boundary that closes the control
//! stationarity equation there (the volume data alone cannot cancel the
//! boundary terms of the adjoint pair). With `g` in place the exact control
//! never touches the bounds in the limit and the discrete contact stress of
//! the solved problem tends to zero on the inactive boundary.
//!
//! The second case drives the corner singularity: the velocity/control pair
//! is the divergence-free corner eigenfunction `r^alpha (...)` of the Stokes
//! operator on the reentrant sector, so `f = 0` and the energy error decays
//! with the reduced rate under uniform refinement.

use crate::fe::FeSystem;
use crate::geom::{integrate_triangle, Mat2, Vec2};
use crate::kkt::Bounds;
use crate::mesh::{lshape_domain, unit_square_domain, BoundaryLabel, DomainSpec};
use crate::pdas::OptimalityPoint;
use std::f64::consts::PI;
use std::sync::Arc;

pub type VecField = Arc<dyn Fn(Vec2) -> Vec2 + Send + Sync>;
pub type MatField = Arc<dyn Fn(Vec2) -> Mat2 + Send + Sync>;
pub type ScalarField = Arc<dyn Fn(Vec2) -> f64 + Send + Sync>;
pub type TractionField = Arc<dyn Fn(Vec2, Vec2) -> Vec2 + Send + Sync>;

/// Exact solution fields with analytic gradients.
#[derive(Clone)]
pub struct ExactSolution {
    /// Velocity; equals the control in both cases.
    pub u: VecField,
    pub grad_u: MatField,
    pub p: ScalarField,
    pub phi: VecField,
    pub grad_phi: MatField,
    pub r: ScalarField,
}

/// A manufactured problem: domain, constants, exact fields and data.
#[derive(Clone)]
pub struct BenchmarkCase {
    pub name: &'static str,
    pub domain: DomainSpec,
    pub rho: f64,
    pub bounds: Bounds,
    pub exact: ExactSolution,
    pub f: VecField,
    pub u_d: VecField,
    pub y_d: VecField,
    /// Contact traction datum `g(x, n)`; together with `y_d` it makes the
    /// exact fields satisfy the control stationarity equation.
    pub traction: TractionField,
    /// Keep-out radius around singular points for interior sampling.
    pub sample_min_radius: f64,
}

impl BenchmarkCase {
    /// Normal-stress datum entering the contact-stress indicator:
    /// `g(x, n) - rho * grad(y_d)(x) n`. Adding it to the discrete contact
    /// stress yields a quantity that vanishes at the exact solution on the
    /// inactive boundary.
    pub fn stress_data(&self) -> TractionField {
        let g = self.traction.clone();
        let grad = self.exact.grad_u.clone();
        let rho = self.rho;
        Arc::new(move |x, n| g(x, n) - grad(x).mul_vec(n) * rho)
    }

    /// Is `p` inside the domain with the given margin to the boundary?
    pub fn is_interior(&self, p: Vec2, margin: f64) -> bool {
        match self.name {
            "square" => p.x > margin && p.x < 1.0 - margin && p.y > margin && p.y < 1.0 - margin,
            _ => {
                let inside_box = p.x > -1.0 + margin
                    && p.x < 1.0 - margin
                    && p.y > -1.0 + margin
                    && p.y < 1.0 - margin;
                let near_removed = p.x > -margin && p.y < margin;
                inside_box && !near_removed && p.norm() > self.sample_min_radius
            }
        }
    }

    /// Deterministic interior sample points (Halton, rejection-filtered).
    pub fn interior_samples(&self, count: usize, margin: f64) -> Vec<Vec2> {
        let (lo, extent) = match self.name {
            "square" => (Vec2::new(0.0, 0.0), 1.0),
            _ => (Vec2::new(-1.0, -1.0), 2.0),
        };
        let mut out = Vec::with_capacity(count);
        let mut i = 0;
        while out.len() < count && i < 100_000 {
            let h = crate::geom::halton(i);
            let p = lo + h * extent;
            if self.is_interior(p, margin) {
                out.push(p);
            }
            i += 1;
        }
        out
    }
}

/// Smooth-solution case on the unit square, Dirichlet bottom side and
/// contact elsewhere.
pub fn case_square() -> BenchmarkCase {
    let u: VecField = Arc::new(|p: Vec2| {
        let e = p.x.exp();
        Vec2::new(-e * (p.y * p.y.cos() + p.y.sin()), e * p.y * p.y.sin())
    });
    let grad_u: MatField = Arc::new(|p: Vec2| {
        let e = p.x.exp();
        let (s, c) = p.y.sin_cos();
        Mat2::new(
            -e * (p.y * c + s),
            -e * (2.0 * c - p.y * s),
            e * p.y * s,
            e * (s + p.y * c),
        )
    });
    let lap_u = |p: Vec2| {
        let e = p.x.exp();
        Vec2::new(2.0 * e * p.y.sin(), 2.0 * e * p.y.cos())
    };
    let pressure: ScalarField =
        Arc::new(|p: Vec2| (2.0 * PI * p.x).sin() * (2.0 * PI * p.y).sin());
    let grad_pressure = |p: Vec2| {
        Vec2::new(
            2.0 * PI * (2.0 * PI * p.x).cos() * (2.0 * PI * p.y).sin(),
            2.0 * PI * (2.0 * PI * p.x).sin() * (2.0 * PI * p.y).cos(),
        )
    };
    let (phi, grad_phi, lap_phi) = adjoint_velocity();
    let r = pressure.clone();
    let grad_r = grad_pressure;

    let f: VecField = Arc::new(move |p: Vec2| grad_pressure(p) - lap_u(p));
    let u_d: VecField = {
        let u = u.clone();
        Arc::new(move |p: Vec2| u(p) + lap_phi(p) + grad_r(p))
    };
    let y_d = u.clone();
    let traction: TractionField = {
        let grad_phi = grad_phi.clone();
        let r = r.clone();
        Arc::new(move |x: Vec2, n: Vec2| grad_phi(x).mul_vec(n) + n * r(x))
    };

    BenchmarkCase {
        name: "square",
        domain: unit_square_domain(BoundaryLabel::Dirichlet, BoundaryLabel::Contact),
        rho: 1e-2,
        bounds: Bounds::new([-4.0, -2.0], [2.0, 2.5]),
        exact: ExactSolution { u: u.clone(), grad_u, p: pressure, phi, grad_phi, r },
        f,
        u_d,
        y_d,
        traction,
        sample_min_radius: 0.0,
    }
}

/// Reduced-regularity case on the L-shaped domain, contact on the whole
/// boundary: velocity/control are the divergence-free corner eigenfunction
/// of the Stokes operator, so the body force vanishes identically.
pub fn case_lshape() -> BenchmarkCase {
    let alpha = 856399.0 / 1572864.0;
    let omega = 1.5 * PI;
    let sector = CornerFlow { alpha, cos_alpha_omega: (alpha * omega).cos() };

    let u: VecField = Arc::new(move |p: Vec2| sector.velocity(p));
    let grad_u: MatField = Arc::new(move |p: Vec2| sector.velocity_gradient(p));
    let pressure: ScalarField = Arc::new(move |p: Vec2| sector.pressure(p));
    let (phi, grad_phi, lap_phi) = adjoint_velocity();
    let r: ScalarField = Arc::new(|p: Vec2| (2.0 * PI * p.x).sin() * (2.0 * PI * p.y).sin());
    let grad_r = |p: Vec2| {
        Vec2::new(
            2.0 * PI * (2.0 * PI * p.x).cos() * (2.0 * PI * p.y).sin(),
            2.0 * PI * (2.0 * PI * p.x).sin() * (2.0 * PI * p.y).cos(),
        )
    };
    // the corner eigenfunction satisfies -lap(u) + grad(p) = 0
    let f: VecField = Arc::new(|_| Vec2::ZERO);
    let u_d: VecField = {
        let u = u.clone();
        Arc::new(move |p: Vec2| u(p) + lap_phi(p) + grad_r(p))
    };
    let y_d = u.clone();
    let traction: TractionField = {
        let grad_phi = grad_phi.clone();
        let r = r.clone();
        Arc::new(move |x: Vec2, n: Vec2| grad_phi(x).mul_vec(n) + n * r(x))
    };

    BenchmarkCase {
        name: "lshape",
        domain: lshape_domain(BoundaryLabel::Contact),
        rho: 1e-2,
        bounds: Bounds::new([-3.0, -3.0], [4.0, 4.0]),
        exact: ExactSolution { u: u.clone(), grad_u, p: pressure, phi, grad_phi, r },
        f,
        u_d,
        y_d,
        traction,
        sample_min_radius: 0.1,
    }
}

/// Shared adjoint velocity of both cases; vanishes on the lines
/// x in {-1, 0, 1} and y in {-1, 0, 1}, hence on both domain boundaries.
fn adjoint_velocity() -> (VecField, MatField, impl Fn(Vec2) -> Vec2 + Copy) {
    let phi: VecField = Arc::new(|p: Vec2| {
        let sx = (PI * p.x).sin();
        let sy = (PI * p.y).sin();
        Vec2::new(
            0.5 * sx * sx * (2.0 * PI * p.y).sin(),
            -0.5 * sy * sy * (2.0 * PI * p.x).sin(),
        )
    });
    let grad_phi: MatField = Arc::new(|p: Vec2| {
        let sx = (PI * p.x).sin();
        let sy = (PI * p.y).sin();
        let s2x = (2.0 * PI * p.x).sin();
        let s2y = (2.0 * PI * p.y).sin();
        let c2x = (2.0 * PI * p.x).cos();
        let c2y = (2.0 * PI * p.y).cos();
        Mat2::new(
            0.5 * PI * s2x * s2y,
            PI * sx * sx * c2y,
            -PI * sy * sy * c2x,
            -0.5 * PI * s2y * s2x,
        )
    });
    let lap_phi = |p: Vec2| {
        let s2x = (2.0 * PI * p.x).sin();
        let s2y = (2.0 * PI * p.y).sin();
        let c2x = (2.0 * PI * p.x).cos();
        let c2y = (2.0 * PI * p.y).cos();
        Vec2::new(
            PI * PI * s2y * (2.0 * c2x - 1.0),
            -PI * PI * s2x * (2.0 * c2y - 1.0),
        )
    };
    (phi, grad_phi, lap_phi)
}

/// Divergence-free corner eigenfunction of the Stokes operator on the
/// reentrant sector of angle 3 pi / 2.
#[derive(Clone, Copy)]
struct CornerFlow {
    alpha: f64,
    cos_alpha_omega: f64,
}

impl CornerFlow {
    /// Angle in [0, 3 pi / 2] measured from the positive x axis.
    fn angle(p: Vec2) -> f64 {
        let t = p.y.atan2(p.x);
        if t < 0.0 {
            t + 2.0 * PI
        } else {
            t
        }
    }

    fn psi(&self, t: f64) -> f64 {
        let a = self.alpha;
        let ca = self.cos_alpha_omega;
        ((1.0 + a) * t).sin() * ca / (1.0 + a) - ((1.0 + a) * t).cos()
            - ((1.0 - a) * t).sin() * ca / (1.0 - a)
            + ((1.0 - a) * t).cos()
    }

    fn psi1(&self, t: f64) -> f64 {
        let a = self.alpha;
        let ca = self.cos_alpha_omega;
        ((1.0 + a) * t).cos() * ca + (1.0 + a) * ((1.0 + a) * t).sin()
            - ((1.0 - a) * t).cos() * ca
            - (1.0 - a) * ((1.0 - a) * t).sin()
    }

    fn psi2(&self, t: f64) -> f64 {
        let a = self.alpha;
        let ca = self.cos_alpha_omega;
        -(1.0 + a) * ((1.0 + a) * t).sin() * ca + (1.0 + a) * (1.0 + a) * ((1.0 + a) * t).cos()
            + (1.0 - a) * ((1.0 - a) * t).sin() * ca
            - (1.0 - a) * (1.0 - a) * ((1.0 - a) * t).cos()
    }

    fn psi3(&self, t: f64) -> f64 {
        let a = self.alpha;
        let ca = self.cos_alpha_omega;
        -(1.0 + a) * (1.0 + a) * ((1.0 + a) * t).cos() * ca
            - (1.0 + a).powi(3) * ((1.0 + a) * t).sin()
            + (1.0 - a) * (1.0 - a) * ((1.0 - a) * t).cos() * ca
            + (1.0 - a).powi(3) * ((1.0 - a) * t).sin()
    }

    fn velocity(&self, p: Vec2) -> Vec2 {
        let rr = p.norm();
        if rr < 1e-300 {
            return Vec2::ZERO;
        }
        let t = Self::angle(p);
        let (st, ct) = t.sin_cos();
        let (ps, ps1) = (self.psi(t), self.psi1(t));
        let a = self.alpha;
        Vec2::new(
            rr.powf(a) * ((1.0 + a) * st * ps + ct * ps1),
            rr.powf(a) * (st * ps1 - (1.0 + a) * ct * ps),
        )
    }

    fn velocity_gradient(&self, p: Vec2) -> Mat2 {
        let rr = p.norm();
        let t = Self::angle(p);
        let (st, ct) = t.sin_cos();
        let a = self.alpha;
        let (ps, ps1, ps2) = (self.psi(t), self.psi1(t), self.psi2(t));
        let g1 = (1.0 + a) * st * ps + ct * ps1;
        let g2 = st * ps1 - (1.0 + a) * ct * ps;
        let g1t = (1.0 + a) * ct * ps + a * st * ps1 + ct * ps2;
        let g2t = (1.0 + a) * st * ps - a * ct * ps1 + st * ps2;
        let radial = rr.powf(a - 1.0);
        Mat2::new(
            radial * (a * g1 * ct - g1t * st),
            radial * (a * g1 * st + g1t * ct),
            radial * (a * g2 * ct - g2t * st),
            radial * (a * g2 * st + g2t * ct),
        )
    }

    fn pressure(&self, p: Vec2) -> f64 {
        let rr = p.norm();
        debug_assert!(rr > 1e-14, "pressure sampled at the singular corner");
        let t = Self::angle(p);
        let a = self.alpha;
        -rr.powf(a - 1.0) * ((1.0 + a) * (1.0 + a) * self.psi1(t) + self.psi3(t)) / (1.0 - a)
    }
}

/// Error norms of a discrete optimality point against the exact fields.
#[derive(Clone, Copy, Debug)]
pub struct ErrorReport {
    /// H1-seminorm error of the velocity.
    pub err_u: f64,
    /// L2 error of the pressure, zero-mean representatives.
    pub err_p: f64,
    pub err_phi: f64,
    pub err_r: f64,
    pub err_y: f64,
    pub total: f64,
}

/// H1-seminorm / L2 errors by element quadrature of the given degree
/// (at least 5). Pressures are compared after removing the area-weighted
/// mean of both the exact and the discrete field.
pub fn compute_errors(
    sys: &FeSystem,
    sol: &OptimalityPoint,
    case: &BenchmarkCase,
    quad_degree: usize,
) -> ErrorReport {
    assert!(quad_degree >= 5);
    let mesh = &sys.mesh;
    let u_full = sol.u_full(sys);
    let y_full = sol.y_full(sys);
    let phi_full = sol.phi_full(sys);
    let total_area = mesh.coarse.total_area();

    let mean_h = (0..mesh.coarse.n_triangles())
        .map(|k| mesh.coarse.area(k) * sol.p[k])
        .sum::<f64>()
        / total_area;
    let mean_rh = (0..mesh.coarse.n_triangles())
        .map(|k| mesh.coarse.area(k) * sol.r[k])
        .sum::<f64>()
        / total_area;
    let nt = mesh.fine.n_triangles();
    let exact_means: Vec<[f64; 2]> = crate::parallel::map_indexed(nt, |t| {
        let [a, b, c] = mesh.fine.coords(t);
        [
            integrate_triangle(a, b, c, quad_degree, |x| (case.exact.p)(x)),
            integrate_triangle(a, b, c, quad_degree, |x| (case.exact.r)(x)),
        ]
    });
    let mean_ex: f64 = exact_means.iter().map(|v| v[0]).sum::<f64>() / total_area;
    let mean_rex: f64 = exact_means.iter().map(|v| v[1]).sum::<f64>() / total_area;

    let per_element: Vec<[f64; 5]> = crate::parallel::map_indexed(nt, |t| {
        let [a, b, c] = mesh.fine.coords(t);
        let parent = mesh.parent_of_fine[t];
        let grad_u_h = sys.p1_jacobian(&u_full, t);
        let grad_y_h = sys.p1_jacobian(&y_full, t);
        let grad_phi_h = sys.p1_jacobian(&phi_full, t);
        let frob = |m: Mat2| m.a * m.a + m.b * m.b + m.c * m.c + m.d * m.d;
        let e_u = integrate_triangle(a, b, c, quad_degree, |x| {
            frob((case.exact.grad_u)(x) - grad_u_h)
        });
        let e_y = integrate_triangle(a, b, c, quad_degree, |x| {
            frob((case.exact.grad_u)(x) - grad_y_h)
        });
        let e_phi = integrate_triangle(a, b, c, quad_degree, |x| {
            frob((case.exact.grad_phi)(x) - grad_phi_h)
        });
        let e_p = integrate_triangle(a, b, c, quad_degree, |x| {
            let d = ((case.exact.p)(x) - mean_ex) - (sol.p[parent] - mean_h);
            d * d
        });
        let e_r = integrate_triangle(a, b, c, quad_degree, |x| {
            let d = ((case.exact.r)(x) - mean_rex) - (sol.r[parent] - mean_rh);
            d * d
        });
        [e_u, e_p, e_phi, e_r, e_y]
    });
    let mut sums = [0.0f64; 5];
    for row in &per_element {
        for (s, v) in sums.iter_mut().zip(row) {
            *s += v;
        }
    }
    let [su, sp, sphi, sr, sy] = sums;
    ErrorReport {
        err_u: su.sqrt(),
        err_p: sp.sqrt(),
        err_phi: sphi.sqrt(),
        err_r: sr.sqrt(),
        err_y: sy.sqrt(),
        total: su.sqrt() + sp.sqrt() + sphi.sqrt() + sr.sqrt() + sy.sqrt(),
    }
}

/// One manufactured-data check: name plus worst observed defect.
#[derive(Clone, Debug)]
pub struct VerificationCheck {
    pub name: String,
    pub worst: f64,
    pub tolerance: f64,
}

impl VerificationCheck {
    pub fn passed(&self) -> bool {
        self.worst <= self.tolerance
    }
}

/// Finite-difference and analytic consistency checks of the manufactured
/// data (step 1e-5, tolerance 1e-5 unless noted).
pub fn verify_case(case: &BenchmarkCase, n_samples: usize) -> Vec<VerificationCheck> {
    let step = 1e-5;
    let margin = 2e-3;
    let samples = case.interior_samples(n_samples, margin);
    let mut checks = Vec::new();

    let grad_fd_scalar = |f: &dyn Fn(Vec2) -> f64, x: Vec2| {
        Vec2::new(
            (f(Vec2::new(x.x + step, x.y)) - f(Vec2::new(x.x - step, x.y))) / (2.0 * step),
            (f(Vec2::new(x.x, x.y + step)) - f(Vec2::new(x.x, x.y - step))) / (2.0 * step),
        )
    };
    let lap_fd = |f: &dyn Fn(Vec2) -> Vec2, x: Vec2| {
        let fxx = (f(Vec2::new(x.x + step, x.y)) - f(x) * 2.0 + f(Vec2::new(x.x - step, x.y)))
            * (1.0 / (step * step));
        let fyy = (f(Vec2::new(x.x, x.y + step)) - f(x) * 2.0 + f(Vec2::new(x.x, x.y - step)))
            * (1.0 / (step * step));
        fxx + fyy
    };

    let mut worst = 0.0f64;
    for &x in &samples {
        let lhs = (case.f)(x);
        let rhs = grad_fd_scalar(&*case.exact.p, x) - lap_fd(&*case.exact.u, x);
        worst = worst.max((lhs - rhs).norm());
    }
    checks.push(VerificationCheck { name: "f = -lap(u) + grad(p)".into(), worst, tolerance: 1e-5 });

    let mut worst = 0.0f64;
    for &x in &samples {
        let lhs = (case.u_d)(x);
        let rhs =
            (case.exact.u)(x) + lap_fd(&*case.exact.phi, x) + grad_fd_scalar(&*case.exact.r, x);
        worst = worst.max((lhs - rhs).norm());
    }
    checks.push(VerificationCheck {
        name: "u_d = u + lap(phi) + grad(r)".into(),
        worst,
        tolerance: 1e-5,
    });

    let mut worst_u = 0.0f64;
    let mut worst_phi = 0.0f64;
    for &x in &samples {
        worst_u = worst_u.max((case.exact.grad_u)(x).trace().abs());
        worst_phi = worst_phi.max((case.exact.grad_phi)(x).trace().abs());
    }
    checks.push(VerificationCheck { name: "div(u) = 0".into(), worst: worst_u, tolerance: 1e-8 });
    checks.push(VerificationCheck {
        name: "div(phi) = 0".into(),
        worst: worst_phi,
        tolerance: 1e-8,
    });

    let mut worst = 0.0f64;
    for &x in &samples {
        let g = (case.exact.grad_phi)(x);
        let gu = (case.exact.grad_u)(x);
        for comp in 0..2 {
            let fphi = |x: Vec2| {
                let v = (case.exact.phi)(x);
                if comp == 0 {
                    v.x
                } else {
                    v.y
                }
            };
            let fu = |x: Vec2| {
                let v = (case.exact.u)(x);
                if comp == 0 {
                    v.x
                } else {
                    v.y
                }
            };
            worst = worst.max((g.row(comp) - grad_fd_scalar(&fphi, x)).norm());
            worst = worst.max((gu.row(comp) - grad_fd_scalar(&fu, x)).norm());
        }
    }
    checks.push(VerificationCheck {
        name: "analytic gradients vs finite differences".into(),
        worst,
        tolerance: 1e-5,
    });

    let mut worst = 0.0f64;
    let n_polygon = case.domain.polygon.len();
    for i in 0..n_polygon {
        let a = case.domain.polygon[i];
        let b = case.domain.polygon[(i + 1) % n_polygon];
        for k in 1..20 {
            let x = a + (b - a) * (k as f64 / 20.0);
            worst = worst.max((case.exact.phi)(x).norm());
        }
    }
    checks.push(VerificationCheck {
        name: "phi = 0 on the boundary".into(),
        worst,
        tolerance: 1e-12,
    });

    let mut worst = 0.0f64;
    for i in 0..n_polygon {
        let a = case.domain.polygon[i];
        let b = case.domain.polygon[(i + 1) % n_polygon];
        let tangent = b - a;
        let len = tangent.norm();
        let n = Vec2::new(tangent.y, -tangent.x) / len;
        for k in 1..10 {
            let x = a + tangent * (k as f64 / 10.0);
            if case.name == "lshape" && x.norm() < case.sample_min_radius {
                continue;
            }
            let g = (case.traction)(x, n);
            let want = (case.exact.grad_phi)(x).mul_vec(n) + n * (case.exact.r)(x);
            worst = worst.max((g - want).norm());
        }
    }
    checks.push(VerificationCheck {
        name: "traction = dphi/dn + r n".into(),
        worst,
        tolerance: 1e-12,
    });

    if case.name == "lshape" {
        let alpha = 856399.0 / 1572864.0;
        let sector = CornerFlow { alpha, cos_alpha_omega: (alpha * 1.5 * PI).cos() };
        let mut worst = 0.0f64;
        let dt = 1e-6;
        for k in 1..50 {
            let t = 1.5 * PI * (k as f64) / 50.0;
            let fd = (sector.psi(t + dt) - sector.psi(t - dt)) / (2.0 * dt);
            worst = worst.max((sector.psi1(t) - fd).abs());
        }
        checks.push(VerificationCheck {
            name: "angular profile derivative".into(),
            worst,
            tolerance: 1e-6,
        });
    }

    checks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kkt::ActiveSetState;
    use crate::mesh::build_initial;

    #[test]
    fn square_case_constants() {
        let case = case_square();
        assert_eq!(case.rho, 1e-2);
        assert_eq!(case.bounds.lower, [-4.0, -2.0]);
        assert_eq!(case.bounds.upper, [2.0, 2.5]);
        let g = (case.exact.grad_u)(Vec2::new(0.3, 0.7));
        assert!(g.trace().abs() < 1e-12);
    }

    #[test]
    fn square_verification_passes() {
        let case = case_square();
        for check in verify_case(&case, 100) {
            assert!(check.passed(), "{}: worst {} > {}", check.name, check.worst, check.tolerance);
        }
    }

    #[test]
    fn lshape_verification_passes() {
        let case = case_lshape();
        for check in verify_case(&case, 100) {
            assert!(check.passed(), "{}: worst {} > {}", check.name, check.worst, check.tolerance);
        }
    }

    #[test]
    fn lshape_constants_and_eigencondition() {
        let case = case_lshape();
        assert_eq!(case.bounds.lower, [-3.0, -3.0]);
        assert_eq!(case.bounds.upper, [4.0, 4.0]);
        let alpha = 856399.0 / 1572864.0;
        assert!((alpha - 0.544482).abs() < 1e-6);
        // the angular eigencondition sin(alpha w) = alpha at w = 3 pi / 2
        let w = 1.5 * PI;
        assert!(((alpha * w).sin() - alpha).abs() < 1e-4);
        assert!((case.exact.u)(Vec2::new(1e-12, 1e-12)).norm() < 1e-6);
    }

    #[test]
    fn lshape_stokes_residual_is_zero() {
        // -lap(u) + grad(p) = 0 for the corner eigenfunction (f = 0)
        let case = case_lshape();
        let step = 1e-5;
        for &x in &case.interior_samples(60, 1e-2) {
            let lap = {
                let f = &case.exact.u;
                let fxx = (f(Vec2::new(x.x + step, x.y)) - f(x) * 2.0
                    + f(Vec2::new(x.x - step, x.y)))
                    * (1.0 / (step * step));
                let fyy = (f(Vec2::new(x.x, x.y + step)) - f(x) * 2.0
                    + f(Vec2::new(x.x, x.y - step)))
                    * (1.0 / (step * step));
                fxx + fyy
            };
            let gp = {
                let f = &case.exact.p;
                Vec2::new(
                    (f(Vec2::new(x.x + step, x.y)) - f(Vec2::new(x.x - step, x.y)))
                        / (2.0 * step),
                    (f(Vec2::new(x.x, x.y + step)) - f(Vec2::new(x.x, x.y - step)))
                        / (2.0 * step),
                )
            };
            let res = (gp - lap).norm();
            let scale = 1.0 + lap.norm() + gp.norm();
            assert!(res / scale < 2e-4, "residual {res} at ({}, {})", x.x, x.y);
        }
    }

    pub(crate) fn interpolant_point(sys: &FeSystem, case: &BenchmarkCase) -> OptimalityPoint {
        let nv = sys.dofs.n_vertices;
        let n = sys.dofs.n_velocity();
        let m = sys.dofs.n_control();
        let u_full = sys.interpolate(&*case.exact.u);
        let phi_full = sys.interpolate(&*case.exact.phi);
        // u carried entirely by the control part; w = 0
        let w = vec![0.0; 2 * n];
        let mut y = vec![0.0; 2 * m];
        for c in 0..2 {
            for (lq, &v) in sys.dofs.control.iter().enumerate() {
                y[c * m + lq] = u_full[c * nv + v];
            }
        }
        let mut phi = vec![0.0; 2 * n];
        for c in 0..2 {
            for (li, &v) in sys.dofs.interior.iter().enumerate() {
                phi[c * n + li] = phi_full[c * nv + v];
            }
        }
        let centroid_value = |k: usize, f: &ScalarField| {
            let [a, b, c] = sys.mesh.coarse.coords(k);
            f((a + b + c) / 3.0)
        };
        let p: Vec<f64> =
            (0..sys.mesh.coarse.n_triangles()).map(|k| centroid_value(k, &case.exact.p)).collect();
        let r: Vec<f64> =
            (0..sys.mesh.coarse.n_triangles()).map(|k| centroid_value(k, &case.exact.r)).collect();
        OptimalityPoint {
            w,
            y,
            phi,
            p,
            r,
            mu: vec![0.0; 2 * m],
            active: ActiveSetState::all_inactive(sys.dofs.n_contact()),
            iterations: 0,
            converged: true,
            report: crate::kkt::KktSolveReport {
                residual_norm: 0.0,
                block_residuals: [0.0; 6],
                dim: 0,
                nnz: 0,
                pressure_shift: [0.0, 0.0],
                border_multipliers: [0.0, 0.0],
            },
        }
    }

    #[test]
    fn interpolant_error_halves_under_refinement() {
        let case = case_square();
        let mut errs = Vec::new();
        for h in [0.25, 0.125] {
            let mesh = build_initial(&case.domain, h).unwrap();
            let sys = FeSystem::assemble(mesh, &*case.f, &*case.u_d, 5).unwrap();
            let point = interpolant_point(&sys, &case);
            let report = compute_errors(&sys, &point, &case, 5);
            errs.push(report.err_u);
        }
        let ratio = errs[0] / errs[1];
        assert!(
            (1.7..=2.4).contains(&ratio),
            "interpolation error should halve: ratio {ratio}, errs {errs:?}"
        );
    }

    #[test]
    fn pressure_error_ignores_constant_shift() {
        let case = case_square();
        let mesh = build_initial(&case.domain, 0.25).unwrap();
        let sys = FeSystem::assemble(mesh, &*case.f, &*case.u_d, 5).unwrap();
        let mut point = interpolant_point(&sys, &case);
        let base = compute_errors(&sys, &point, &case, 5);
        for v in point.p.iter_mut() {
            *v += 7.0;
        }
        let shifted = compute_errors(&sys, &point, &case, 5);
        assert!((base.err_p - shifted.err_p).abs() < 1e-10);
    }

    #[test]
    fn error_quadrature_matches_high_degree_oracle_on_polynomials() {
        // cubic fields make both the degree-5 rule and the degree-7 oracle
        // exact, so the two evaluations agree to roundoff
        let case = case_square();
        let mesh = build_initial(&case.domain, 0.5).unwrap();
        let sys = FeSystem::assemble(mesh, &*case.f, &*case.u_d, 5).unwrap();
        let cubic = |p: Vec2| Vec2::new(p.x * p.x * p.x - p.y, p.x * p.y * p.y);
        let grad_cubic = |p: Vec2| Mat2::new(3.0 * p.x * p.x, -1.0, p.y * p.y, 2.0 * p.x * p.y);
        let mut fake = case.clone();
        fake.exact.u = Arc::new(cubic);
        fake.exact.grad_u = Arc::new(grad_cubic);
        let point = interpolant_point(&sys, &fake);
        let e5 = compute_errors(&sys, &point, &fake, 5);
        let e7 = compute_errors(&sys, &point, &fake, 7);
        assert!(
            ((e5.err_u - e7.err_u) / e7.err_u).abs() < 1e-10,
            "{} vs {}",
            e5.err_u,
            e7.err_u
        );
    }
}
