//! Primal-dual active-set iteration for the discrete control problem.
//!
//! Each sweep classifies the contact pairs from the current control and
//! multiplier, solves the coupled system with those constraints imposed as
//! identity rows, and stops when the sets repeat or the control stops
//! moving. No damping between iterates.

use crate::fe::FeSystem;
use crate::kkt::{
    ActiveSetState, Bounds, KktAssembler, KktError, KktSolution, KktSolveReport, PairStatus,
};
use std::collections::HashSet;
use std::fmt;

/// Converged solution bundle of the discrete optimality system.
#[derive(Clone, Debug)]
pub struct OptimalityPoint {
    /// Zero-trace part of the velocity (length 2n).
    pub w: Vec<f64>,
    /// Control coefficients (length 2m).
    pub y: Vec<f64>,
    /// Adjoint velocity (length 2n).
    pub phi: Vec<f64>,
    /// State pressure (coarse P0).
    pub p: Vec<f64>,
    /// Adjoint pressure (coarse P0).
    pub r: Vec<f64>,
    /// Multiplier over control dofs (length 2m), zero off the active sets.
    pub mu: Vec<f64>,
    pub active: ActiveSetState,
    pub iterations: usize,
    pub converged: bool,
    pub report: KktSolveReport,
}

impl OptimalityPoint {
    /// Full-vertex velocity field u = w + y (length 2 nv).
    pub fn u_full(&self, sys: &FeSystem) -> Vec<f64> {
        let wf = sys.dofs.interior_to_full(&self.w);
        let yf = sys.dofs.control_to_full(&self.y);
        wf.iter().zip(&yf).map(|(a, b)| a + b).collect()
    }

    pub fn y_full(&self, sys: &FeSystem) -> Vec<f64> {
        sys.dofs.control_to_full(&self.y)
    }

    pub fn phi_full(&self, sys: &FeSystem) -> Vec<f64> {
        sys.dofs.interior_to_full(&self.phi)
    }

    /// Worst violation of the bilateral bounds over the contact pairs.
    pub fn bound_violation(&self, sys: &FeSystem, bounds: Bounds) -> f64 {
        let m = sys.dofs.n_control();
        let mut worst = 0.0f64;
        for c in 0..2 {
            for &v in &sys.dofs.contact {
                let lq = sys.dofs.control_of_vertex[v].unwrap();
                let val = self.y[c * m + lq];
                worst = worst.max(bounds.lower[c] - val).max(val - bounds.upper[c]);
            }
        }
        worst
    }

    /// Max-norm of the pressure-block residual of u = w + y (discrete
    /// divergence-free check), and the same for the adjoint velocity.
    pub fn divergence_residuals(&self, sys: &FeSystem) -> (f64, f64) {
        let div_u = sys.apply_b_transpose(&self.u_full(sys));
        let div_phi = sys.apply_b_transpose(&self.phi_full(sys));
        let inf = |v: &[f64]| v.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        (inf(&div_u), inf(&div_phi))
    }
}

/// One line of the iteration log.
#[derive(Clone, Debug)]
pub struct IterationRecord {
    pub k: usize,
    pub n_lower: usize,
    pub n_upper: usize,
    pub dy_inf: f64,
    pub kkt_residual: f64,
}

#[derive(Debug)]
pub enum PdasError {
    Kkt(KktError),
    MaxIter {
        max_iter: usize,
        cycle_detected: bool,
        history: Vec<IterationRecord>,
    },
}

impl fmt::Display for PdasError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PdasError::Kkt(e) => write!(f, "{e}"),
            PdasError::MaxIter { max_iter, cycle_detected, .. } => write!(
                f,
                "active-set iteration did not converge in {max_iter} sweeps{}",
                if *cycle_detected { " (cycling active-set pattern)" } else { "" }
            ),
        }
    }
}

impl std::error::Error for PdasError {}

impl From<KktError> for PdasError {
    fn from(e: KktError) -> Self {
        PdasError::Kkt(e)
    }
}

/// Classify the contact pairs from a control/multiplier pair. Strict
/// inequalities as printed; ties fall into the inactive set.
pub fn active_sets(
    sys: &FeSystem,
    y: &[f64],
    mu: &[f64],
    bounds: Bounds,
    iteration: usize,
) -> ActiveSetState {
    let m = sys.dofs.n_control();
    assert_eq!(y.len(), 2 * m);
    assert_eq!(mu.len(), 2 * m);
    let n_contact = sys.dofs.n_contact();
    let mut status = vec![PairStatus::Inactive; 2 * n_contact];
    for c in 0..2 {
        for (lc, &v) in sys.dofs.contact.iter().enumerate() {
            let lq = sys.dofs.control_of_vertex[v].unwrap();
            let(yv, muv) = (y[c * m + lq], mu[c * m + lq]);
            status[c * n_contact + lc] = if muv + (yv - bounds.upper[c]) > 0.0 {
                PairStatus::UpperActive
            } else if muv + (yv - bounds.lower[c]) < 0.0 {
                PairStatus::LowerActive
            } else {
                PairStatus::Inactive
            };
        }
    }
    ActiveSetState { status, iteration }
}

/// Deterministic start: bound-projected target interpolant and zero
/// multiplier.
pub fn default_start(sys: &FeSystem, y_d: &[f64], bounds: Bounds) -> (Vec<f64>, Vec<f64>) {
    let m = sys.dofs.n_control();
    let mut y0 = y_d.to_vec();
    for c in 0..2 {
        for &v in &sys.dofs.contact {
            let lq = sys.dofs.control_of_vertex[v].unwrap();
            y0[c * m + lq] = bounds.clamp(c, y0[c * m + lq]);
        }
    }
    (y0, vec![0.0; 2 * m])
}

/// Run the active-set loop.
///
/// Terminates when the active sets repeat or when the control increment
/// drops below `tol` in the max norm. Returns the last iterate together
/// with the per-sweep log.
#[allow(clippy::too_many_arguments)]
pub fn pdas_solve(
    sys: &FeSystem,
    rho: f64,
    bounds: Bounds,
    y_d: &[f64],
    traction_moments: Option<&[f64]>,
    y0: &[f64],
    mu0: &[f64],
    max_iter: usize,
    tol: f64,
) -> Result<(OptimalityPoint, Vec<IterationRecord>), PdasError> {
    assert!(max_iter >= 1);
    let mut sets = active_sets(sys, y0, mu0, bounds, 0);
    let asm = KktAssembler::new(sys, rho, bounds, y_d, traction_moments);
    let mut history = Vec::new();
    let mut seen: HashSet<Vec<PairStatus>> = HashSet::new();
    let mut cycle_detected = false;
    let mut prev_y: Option<Vec<f64>> = None;
    let mut last: Option<KktSolution> = None;

    for k in 0..max_iter {
        seen.insert(sets.status.clone());
        let sol = asm.solve(&sets, 1e-8)?;
        let dy_inf = match &prev_y {
            Some(py) => sol
                .y
                .iter()
                .zip(py)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max),
            None => f64::INFINITY,
        };
        history.push(IterationRecord {
            k,
            n_lower: sets.n_lower(),
            n_upper: sets.n_upper(),
            dy_inf,
            kkt_residual: sol.report.residual_norm,
        });
        let next = active_sets(sys, &sol.y, &sol.mu, bounds, k + 1);
        let sets_fixed = next.status == sets.status;
        let y_converged = dy_inf < tol;
        prev_y = Some(sol.y.clone());
        last = Some(sol);
        if sets_fixed || y_converged {
            let sol = last.unwrap();
            return Ok((
                OptimalityPoint {
                    w: sol.w,
                    y: sol.y,
                    phi: sol.phi,
                    p: sol.p,
                    r: sol.r,
                    mu: sol.mu,
                    active: ActiveSetState { status: sets.status, iteration: k + 1 },
                    iterations: k + 1,
                    converged: true,
                    report: sol.report,
                },
                history,
            ));
        }
        if seen.contains(&next.status) {
            cycle_detected = true;
        }
        sets = next;
    }
    Err(PdasError::MaxIter { max_iter, cycle_detected, history })
}

/// Value of the discrete objective at an iterate, up to the
/// iterate-independent data constant: `1/2 u' M u - u' F2
/// + rho/2 (y - y_d)' A (y - y_d) + G' y`.
pub fn reduced_objective(
    sys: &FeSystem,
    rho: f64,
    y_d: &[f64],
    traction_moments: Option<&[f64]>,
    w: &[f64],
    y: &[f64],
) -> f64 {
    let u = {
        let wf = sys.dofs.interior_to_full(w);
        let yf = sys.dofs.control_to_full(y);
        wf.iter().zip(&yf).map(|(a, b)| a + b).collect::<Vec<f64>>()
    };
    let mu_vec = sys.apply_blocked(&sys.m, &u);
    let misfit = 0.5 * dot(&u, &mu_vec) - dot(&u, &sys.f2);
    let mut dy = sys.dofs.control_to_full(y);
    let ydf = sys.dofs.control_to_full(y_d);
    for (a, b) in dy.iter_mut().zip(&ydf) {
        *a -= b;
    }
    let ady = sys.apply_blocked(&sys.a, &dy);
    let reg = 0.5 * rho * dot(&dy, &ady);
    let trac = traction_moments.map_or(0.0, |g| dot(g, y));
    misfit + reg + trac
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec2;
    use crate::mesh::{build_initial, unit_square_domain, BoundaryLabel};

    fn zero(_: Vec2) -> Vec2 {
        Vec2::ZERO
    }

    fn smooth_sys(h: f64, scale: f64) -> FeSystem {
        let mesh = build_initial(
            &unit_square_domain(BoundaryLabel::Dirichlet, BoundaryLabel::Contact),
            h,
        )
        .unwrap();
        let f = move |p: Vec2| Vec2::new(scale * (3.0 * p.x).sin(), scale * (2.0 * p.y).cos());
        let ud = move |p: Vec2| Vec2::new(scale * p.y * p.x, -scale * p.x);
        FeSystem::assemble(mesh, &f, &ud, 5).unwrap()
    }

    /// Bounds at a fraction of the unconstrained control magnitude, so a
    /// strict subset of the contact pairs activates.
    fn calibrated_bounds(sys: &FeSystem, frac: f64) -> Bounds {
        let m = sys.dofs.n_control();
        let wide = Bounds::new([-1e9, -1e9], [1e9, 1e9]);
        let y_d = vec![0.0; 2 * m];
        let (y0, mu0) = default_start(sys, &y_d, wide);
        let (p, _) = pdas_solve(sys, 1e-2, wide, &y_d, None, &y0, &mu0, 5, 1e-12).unwrap();
        let mut hi = [0.0f64; 2];
        for c in 0..2 {
            for &v in &sys.dofs.contact {
                let lq = sys.dofs.control_of_vertex[v].unwrap();
                hi[c] = hi[c].max(p.y[c * m + lq].abs());
            }
        }
        Bounds::new(
            [-frac * hi[0].max(1e-6), -frac * hi[1].max(1e-6)],
            [frac * hi[0].max(1e-6), frac * hi[1].max(1e-6)],
        )
    }

    #[test]
    fn active_set_formulas() {
        let sys = smooth_sys(0.5, 1.0);
        let m = sys.dofs.n_control();
        let bounds = Bounds::new([-1.0, -1.0], [1.0, 1.0]);
        let mut y = vec![0.0; 2 * m];
        let mut mu = vec![0.0; 2 * m];
        // all strictly inside -> inactive
        let sets = active_sets(&sys, &y, &mu, bounds, 0);
        assert!(sets.status.iter().all(|&s| s == PairStatus::Inactive));
        // one node pushed above the upper bound in component 1
        let v0 = sys.dofs.contact[0];
        let lq0 = sys.dofs.control_of_vertex[v0].unwrap();
        y[lq0] = 1.0 + 0.5;
        let sets = active_sets(&sys, &y, &mu, bounds, 0);
        assert_eq!(sets.status[0], PairStatus::UpperActive);
        // mu = -0.3 with y = lower + 0.1 -> lower-active (-0.3 + 0.1 < 0)
        y[lq0] = -1.0 + 0.1;
        mu[lq0] = -0.3;
        let sets = active_sets(&sys, &y, &mu, bounds, 0);
        assert_eq!(sets.status[0], PairStatus::LowerActive);
        // ties (exact bound, zero multiplier) stay inactive
        y[lq0] = 1.0;
        mu[lq0] = 0.0;
        let sets = active_sets(&sys, &y, &mu, bounds, 0);
        assert_eq!(sets.status[0], PairStatus::Inactive);
    }

    #[test]
    fn effectively_unconstrained_converges_in_two_sweeps() {
        let sys = smooth_sys(0.5, 1.0);
        let m = sys.dofs.n_control();
        let bounds = Bounds::new([-1e6, -1e6], [1e6, 1e6]);
        let y_d = vec![0.0; 2 * m];
        let (y0, mu0) = default_start(&sys, &y_d, bounds);
        let (point, log) =
            pdas_solve(&sys, 1e-2, bounds, &y_d, None, &y0, &mu0, 50, 1e-10).unwrap();
        assert!(point.converged);
        assert!(point.iterations <= 2, "iterations = {}", point.iterations);
        assert!(point.active.status.iter().all(|&s| s == PairStatus::Inactive));
        assert!(!log.is_empty());
        assert!(point.bound_violation(&sys, bounds) <= 1e-10);
        let (du, dphi) = point.divergence_residuals(&sys);
        assert!(du < 1e-10 && dphi < 1e-10, "divergence residuals {du} {dphi}");
    }

    #[test]
    fn fixed_point_of_active_sets() {
        // bounds tight enough that some constraints engage
        let sys = smooth_sys(0.5, 8.0);
        let m = sys.dofs.n_control();
        let bounds = calibrated_bounds(&sys, 0.5);
        let y_d = vec![0.0; 2 * m];
        let (y0, mu0) = default_start(&sys, &y_d, bounds);
        let (point, _) = pdas_solve(&sys, 1e-2, bounds, &y_d, None, &y0, &mu0, 50, 1e-12).unwrap();
        assert!(point.converged);
        let again = active_sets(&sys, &point.y, &point.mu, bounds, 0);
        assert_eq!(again.status, point.active.status);
        assert!(
            point.active.n_lower() + point.active.n_upper() > 0,
            "test should engage some constraints"
        );
        // multiplier sign conditions at convergence
        let n_contact = sys.dofs.n_contact();
        for c in 0..2 {
            for (lc, &v) in sys.dofs.contact.iter().enumerate() {
                let lq = sys.dofs.control_of_vertex[v].unwrap();
                let muv = point.mu[c * m + lq];
                match point.active.status[c * n_contact + lc] {
                    PairStatus::LowerActive => assert!(muv <= 1e-10),
                    PairStatus::UpperActive => assert!(muv >= -1e-10),
                    PairStatus::Inactive => assert_eq!(muv, 0.0),
                }
            }
        }
        assert!(point.bound_violation(&sys, bounds) <= 1e-10);
    }

    #[test]
    fn scaling_consistency_unconstrained() {
        // scaling all data by c scales the solution by c when nothing is
        // active before and after
        let sys1 = smooth_sys(0.5, 1.0);
        let sys3 = smooth_sys(0.5, 3.0);
        let m = sys1.dofs.n_control();
        let bounds = Bounds::new([-1e6, -1e6], [1e6, 1e6]);
        let y_d1: Vec<f64> = (0..2 * m).map(|i| 0.01 * ((i % 7) as f64)).collect();
        let y_d3: Vec<f64> = y_d1.iter().map(|v| 3.0 * v).collect();
        let (y0, mu0) = default_start(&sys1, &y_d1, bounds);
        let (p1, _) = pdas_solve(&sys1, 1e-2, bounds, &y_d1, None, &y0, &mu0, 50, 1e-12).unwrap();
        let (y0, mu0) = default_start(&sys3, &y_d3, bounds);
        let (p3, _) = pdas_solve(&sys3, 1e-2, bounds, &y_d3, None, &y0, &mu0, 50, 1e-12).unwrap();
        let check = |a: &[f64], b: &[f64]| {
            let worst = a
                .iter()
                .zip(b)
                .map(|(x, y)| (3.0 * x - y).abs())
                .fold(0.0f64, f64::max);
            assert!(worst < 1e-8, "scaling violated by {worst}");
        };
        check(&p1.w, &p3.w);
        check(&p1.y, &p3.y);
        check(&p1.phi, &p3.phi);
        check(&p1.p, &p3.p);
        check(&p1.r, &p3.r);
        check(&p1.mu, &p3.mu);
    }

    #[test]
    fn final_objective_not_above_feasible_iterates() {
        let sys = smooth_sys(0.5, 8.0);
        let m = sys.dofs.n_control();
        let bounds = calibrated_bounds(&sys, 0.6);
        let y_d = vec![0.0; 2 * m];
        let (y0, mu0) = default_start(&sys, &y_d, bounds);
        // run manually to record objectives of feasible iterates
        let mut sets = active_sets(&sys, &y0, &mu0, bounds, 0);
        let asm = KktAssembler::new(&sys, 1e-2, bounds, &y_d, None);
        let mut feasible_objectives = Vec::new();
        let mut final_obj = None;
        for k in 0..50 {
            let sol = asm.solve(&sets, 1e-8).unwrap();
            let feasible = {
                let mut ok = true;
                for c in 0..2 {
                    for &v in &sys.dofs.contact {
                        let lq = sys.dofs.control_of_vertex[v].unwrap();
                        let val = sol.y[c * m + lq];
                        ok &= val >= bounds.lower[c] - 1e-12 && val <= bounds.upper[c] + 1e-12;
                    }
                }
                ok
            };
            let obj = reduced_objective(&sys, 1e-2, &y_d, None, &sol.w, &sol.y);
            if feasible {
                feasible_objectives.push(obj);
            }
            let next = active_sets(&sys, &sol.y, &sol.mu, bounds, k + 1);
            if next.status == sets.status {
                final_obj = Some(obj);
                break;
            }
            sets = next;
        }
        let final_obj = final_obj.expect("did not converge");
        for (i, &obj) in feasible_objectives.iter().enumerate() {
            assert!(final_obj <= obj + 1e-10, "iterate {i}: {obj} < final {final_obj}");
        }
    }

    #[test]
    fn discrete_vi_residual_nonnegative_directions() {
        // perturbing the converged control at one contact dof toward the
        // interior of the bounds must not decrease the Lagrangian residual:
        // mu has the right sign against every admissible direction.
        let sys = smooth_sys(0.5, 8.0);
        let m = sys.dofs.n_control();
        let bounds = calibrated_bounds(&sys, 0.5);
        let y_d = vec![0.0; 2 * m];
        let (y0, mu0) = default_start(&sys, &y_d, bounds);
        let (point, _) = pdas_solve(&sys, 1e-2, bounds, &y_d, None, &y0, &mu0, 50, 1e-12).unwrap();
        let asm = KktAssembler::new(&sys, 1e-2, bounds, &y_d, None);
        let lambda = asm.stationarity_residual(&point.w, &point.y, &point.phi, &point.r);
        // lambda = mu at convergence; the VI demands lambda * (x - y) <= 0
        // for every feasible direction at each contact dof.
        for c in 0..2 {
            for &v in &sys.dofs.contact {
                let lq = sys.dofs.control_of_vertex[v].unwrap();
                let j = c * m + lq;
                let yv = point.y[j];
                // direction up is admissible unless at the upper bound
                if yv < bounds.upper[c] - 1e-12 {
                    assert!(lambda[j] <= 1e-9, "dof {j}: lambda {} with room above", lambda[j]);
                }
                if yv > bounds.lower[c] + 1e-12 {
                    assert!(lambda[j] >= -1e-9, "dof {j}: lambda {} with room below", lambda[j]);
                }
            }
        }
    }
}
