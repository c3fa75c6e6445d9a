//! Assembly and direct solution of the coupled linear system of one
//! active-set iteration.
//!
//! Unknown layout: `[w (2n) | y (2m) | p (k) | phi (2n) | r (k) | mu (2m) |
//! borders]`, rows in the same order: state momentum, state divergence,
//! adjoint momentum, adjoint divergence, control stationarity, constraint
//! rows, mean constraints.
//!
//! Sign conventions follow the bilinear form `b(z, q) = -int q div z`: the
//! state momentum row reads `A w + A y - B p = F1`, the adjoint row
//! `A phi + B r - M w - M y = -F2`, and the control row
//! `rho A y + M y + M w - A phi - B r + mu = F2 + rho A y_d - G`,
//! where `G` is the moment vector of an optional contact traction datum.
//! With these placements the discrete pressures approximate the pressures
//! of the continuous optimality system directly (no sign flip).
//!
//! The velocity test space vanishes on the whole boundary, so the state
//! pressure is only determined up to a constant; a bordered zero-mean row
//! fixes it. The adjoint pressure is pinned by the control rows through the
//! boundary-flux weights of the inactive contact dofs; when the active
//! pattern pins every flux-carrying contact dof that coupling disappears
//! and a second zero-mean border is switched on for that solve.

use crate::fe::FeSystem;
use crate::sparse::Csr;
use std::fmt;

use faer::prelude::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMat, Triplet};

/// Componentwise bilateral bounds on the control trace.
#[derive(Clone, Copy, Debug)]
pub struct Bounds {
    pub lower: [f64; 2],
    pub upper: [f64; 2],
}

impl Bounds {
    pub fn new(lower: [f64; 2], upper: [f64; 2]) -> Self {
        assert!(lower[0] < upper[0] && lower[1] < upper[1]);
        Bounds { lower, upper }
    }

    pub fn clamp(&self, c: usize, v: f64) -> f64 {
        v.clamp(self.lower[c], self.upper[c])
    }
}

/// Status of one (contact vertex, component) pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PairStatus {
    LowerActive,
    UpperActive,
    Inactive,
}

/// Active/inactive partition of the contact pairs at one iteration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActiveSetState {
    /// Pair `(lc, c)` at index `c * n_contact + lc`.
    pub status: Vec<PairStatus>,
    pub iteration: usize,
}

impl ActiveSetState {
    pub fn all_inactive(n_contact: usize) -> Self {
        ActiveSetState { status: vec![PairStatus::Inactive; 2 * n_contact], iteration: 0 }
    }

    pub fn n_lower(&self) -> usize {
        self.status.iter().filter(|&&s| s == PairStatus::LowerActive).count()
    }

    pub fn n_upper(&self) -> usize {
        self.status.iter().filter(|&&s| s == PairStatus::UpperActive).count()
    }

    pub fn all_pairs_active(&self) -> bool {
        !self.status.is_empty() && self.status.iter().all(|&s| s != PairStatus::Inactive)
    }
}

#[derive(Debug)]
pub enum KktError {
    Singular { detail: String },
    Tolerance { achieved: f64, requested: f64 },
}

impl fmt::Display for KktError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KktError::Singular { detail } => write!(f, "singular coupled system: {detail}"),
            KktError::Tolerance { achieved, requested } => {
                write!(f, "solver residual {achieved:e} exceeds tolerance {requested:e}")
            }
        }
    }
}

impl std::error::Error for KktError {}

/// Diagnostics of one coupled solve.
#[derive(Clone, Debug)]
pub struct KktSolveReport {
    /// Max-norm over all block-equation residuals.
    pub residual_norm: f64,
    /// state, divergence, adjoint, adjoint divergence, control, constraints.
    pub block_residuals: [f64; 6],
    pub dim: usize,
    pub nnz: usize,
    /// Constants subtracted from the pressure blocks (enforced mean-zero).
    pub pressure_shift: [f64; 2],
    /// Multipliers of the bordered mean rows; nonzero values flag an
    /// inconsistent divergence constraint.
    pub border_multipliers: [f64; 2],
}

/// Solution bundle of one coupled solve (component-blocked vectors).
#[derive(Clone, Debug)]
pub struct KktSolution {
    pub w: Vec<f64>,
    pub y: Vec<f64>,
    pub p: Vec<f64>,
    pub phi: Vec<f64>,
    pub r: Vec<f64>,
    pub mu: Vec<f64>,
    pub report: KktSolveReport,
}

/// Reusable assembler for the per-iteration solves on a fixed system.
pub struct KktAssembler<'a> {
    sys: &'a FeSystem,
    rho: f64,
    bounds: Bounds,
    /// Full-vertex expansion of the control target interpolant.
    y_d_full: Vec<f64>,
    /// Moment vector of the contact traction datum (length 2m), or zeros.
    traction: Vec<f64>,
    base_triplets: Vec<(usize, usize, f64)>,
    base_rhs: Vec<f64>,
    /// 1 + max |rhs|, the scale for the relative residual tolerance.
    rhs_scale: f64,
    /// Boundary-flux weight of every control dof: integral of div(hat e_c).
    flux_weight: Vec<f64>,
    n: usize,
    m: usize,
    kappa: usize,
    dim: usize,
}

struct Layout {
    n: usize,
    m: usize,
    kappa: usize,
}

impl Layout {
    fn w(&self, c: usize, l: usize) -> usize {
        c * self.n + l
    }
    fn y(&self, c: usize, l: usize) -> usize {
        2 * self.n + c * self.m + l
    }
    fn p(&self, k: usize) -> usize {
        2 * self.n + 2 * self.m + k
    }
    fn phi(&self, c: usize, l: usize) -> usize {
        2 * self.n + 2 * self.m + self.kappa + c * self.n + l
    }
    fn r(&self, k: usize) -> usize {
        4 * self.n + 2 * self.m + self.kappa + k
    }
    fn mu(&self, c: usize, l: usize) -> usize {
        4 * self.n + 2 * self.m + 2 * self.kappa + c * self.m + l
    }
    fn row_state(&self, c: usize, l: usize) -> usize {
        c * self.n + l
    }
    fn row_div(&self, k: usize) -> usize {
        2 * self.n + k
    }
    fn row_adj(&self, c: usize, l: usize) -> usize {
        2 * self.n + self.kappa + c * self.n + l
    }
    fn row_adjdiv(&self, k: usize) -> usize {
        4 * self.n + self.kappa + k
    }
    fn row_ctrl(&self, c: usize, l: usize) -> usize {
        4 * self.n + 2 * self.kappa + c * self.m + l
    }
    fn row_cons(&self, c: usize, l: usize) -> usize {
        4 * self.n + 2 * self.kappa + 2 * self.m + c * self.m + l
    }
    fn size(&self) -> usize {
        4 * self.n + 4 * self.m + 2 * self.kappa
    }
}

impl<'a> KktAssembler<'a> {
    /// `y_d` is a component-blocked control-space vector (length 2m);
    /// `traction_moments`, when given, is the boundary moment vector of the
    /// contact traction datum (length 2m).
    pub fn new(
        sys: &'a FeSystem,
        rho: f64,
        bounds: Bounds,
        y_d: &[f64],
        traction_moments: Option<&[f64]>,
    ) -> Self {
        assert!(rho > 0.0);
        let n = sys.dofs.n_velocity();
        let m = sys.dofs.n_control();
        let kappa = sys.mesh.coarse.n_triangles();
        assert_eq!(y_d.len(), 2 * m);
        let traction = match traction_moments {
            Some(t) => {
                assert_eq!(t.len(), 2 * m);
                t.to_vec()
            }
            None => vec![0.0; 2 * m],
        };
        let y_d_full = sys.dofs.control_to_full(y_d);
        let lay = Layout { n, m, kappa };
        let nv = sys.dofs.n_vertices;
        // two border slots: state-pressure mean (always) and the adjoint
        // slot, wired per solve
        let dim = lay.size() + 2;

        let mut t = Vec::new();
        let mut rhs = vec![0.0; dim];
        let areas: Vec<f64> = (0..kappa).map(|k| sys.mesh.coarse.area(k)).collect();

        for c in 0..2 {
            // state momentum and adjoint momentum rows (interior dofs)
            for (li, &v) in sys.dofs.interior.iter().enumerate() {
                let rs = lay.row_state(c, li);
                let ra = lay.row_adj(c, li);
                for (u, val) in sys.a.row(v) {
                    if let Some(lu) = sys.dofs.interior_of_vertex[u] {
                        t.push((rs, lay.w(c, lu), val));
                        t.push((ra, lay.phi(c, lu), val));
                    }
                    if let Some(lq) = sys.dofs.control_of_vertex[u] {
                        t.push((rs, lay.y(c, lq), val));
                    }
                }
                for (u, val) in sys.m.row(v) {
                    if let Some(lu) = sys.dofs.interior_of_vertex[u] {
                        t.push((ra, lay.w(c, lu), -val));
                    }
                    if let Some(lq) = sys.dofs.control_of_vertex[u] {
                        t.push((ra, lay.y(c, lq), -val));
                    }
                }
                for (k, val) in sys.b[c].row(v) {
                    t.push((rs, lay.p(k), -val));
                    t.push((ra, lay.r(k), val));
                }
                rhs[rs] = sys.f1[c * nv + v];
                rhs[ra] = -sys.f2[c * nv + v];
            }
            // control stationarity rows
            for (lq, &v) in sys.dofs.control.iter().enumerate() {
                let rc = lay.row_ctrl(c, lq);
                let mut ayd = 0.0;
                for (u, val) in sys.a.row(v) {
                    if let Some(lu) = sys.dofs.control_of_vertex[u] {
                        t.push((rc, lay.y(c, lu), rho * val));
                    }
                    if let Some(lu) = sys.dofs.interior_of_vertex[u] {
                        t.push((rc, lay.phi(c, lu), -val));
                    }
                    ayd += val * y_d_full[c * nv + u];
                }
                for (u, val) in sys.m.row(v) {
                    if let Some(lu) = sys.dofs.control_of_vertex[u] {
                        t.push((rc, lay.y(c, lu), val));
                    }
                    if let Some(lu) = sys.dofs.interior_of_vertex[u] {
                        t.push((rc, lay.w(c, lu), val));
                    }
                }
                for (k, val) in sys.b[c].row(v) {
                    t.push((rc, lay.r(k), -val));
                }
                t.push((rc, lay.mu(c, lq), 1.0));
                rhs[rc] = sys.f2[c * nv + v] + rho * ayd - self_traction(&traction, m, c, lq);
            }
        }
        // divergence rows: B^T (w + y) = 0 and B^T phi = 0
        for u in 0..nv {
            for c in 0..2 {
                for (k, val) in sys.b[c].row(u) {
                    if let Some(lu) = sys.dofs.interior_of_vertex[u] {
                        t.push((lay.row_div(k), lay.w(c, lu), val));
                        t.push((lay.row_adjdiv(k), lay.phi(c, lu), val));
                    }
                    if let Some(lq) = sys.dofs.control_of_vertex[u] {
                        t.push((lay.row_div(k), lay.y(c, lq), val));
                    }
                }
            }
        }
        // mean-zero border for the state pressure: row over p, column into
        // the adjoint divergence rows (their sum is the redundant equation)
        let xi_p = lay.size();
        let row_pmean = lay.size();
        for k in 0..kappa {
            t.push((row_pmean, lay.p(k), areas[k]));
            t.push((lay.row_adjdiv(k), xi_p, areas[k]));
        }

        // boundary-flux weight of each control dof; dofs with nonzero
        // weight are the ones that pin the adjoint pressure constant
        let mut flux_weight = vec![0.0; 2 * m];
        for c in 0..2 {
            for (lq, &v) in sys.dofs.control.iter().enumerate() {
                flux_weight[c * m + lq] = sys.b[c].row(v).map(|(_, val)| val).sum();
            }
        }

        let rhs_scale = 1.0 + rhs.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        KktAssembler {
            sys,
            rho,
            bounds,
            y_d_full,
            traction,
            base_triplets: t,
            base_rhs: rhs,
            rhs_scale,
            flux_weight,
            n,
            m,
            kappa,
            dim,
        }
    }

    /// The adjoint pressure loses its pinning when every contact dof with a
    /// nonzero boundary-flux weight is pinned by an active constraint.
    fn needs_adjoint_border(&self, active: &ActiveSetState) -> bool {
        let n_contact = self.sys.dofs.n_contact();
        let max_flux =
            self.flux_weight.iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1e-300);
        for c in 0..2 {
            for (lq, &v) in self.sys.dofs.control.iter().enumerate() {
                if self.flux_weight[c * self.m + lq].abs() <= 1e-12 * max_flux {
                    continue;
                }
                let pinned = self.sys.dofs.contact_of_vertex[v]
                    .map(|lc| active.status[c * n_contact + lc] != PairStatus::Inactive)
                    .unwrap_or(false);
                if !pinned {
                    return false;
                }
            }
        }
        true
    }

    /// Solve the coupled system with the given active sets.
    pub fn solve(&self, active: &ActiveSetState, tol: f64) -> Result<KktSolution, KktError> {
        let lay = Layout { n: self.n, m: self.m, kappa: self.kappa };
        let n_contact = self.sys.dofs.n_contact();
        assert_eq!(active.status.len(), 2 * n_contact);
        let mut triplets = self.base_triplets.clone();
        let mut rhs = self.base_rhs.clone();
        // second border slot: zero-mean adjoint pressure in the degenerate
        // pattern, otherwise an identity row pinning the unused multiplier
        let border_r = self.needs_adjoint_border(active);
        let xi_r = lay.size() + 1;
        if border_r {
            for k in 0..self.kappa {
                let area = self.sys.mesh.coarse.area(k);
                triplets.push((xi_r, lay.r(k), area));
                triplets.push((lay.row_div(k), xi_r, area));
            }
        } else {
            triplets.push((xi_r, xi_r, 1.0));
        }
        // constraint rows: identity on y for actives, identity on mu
        // otherwise
        for c in 0..2 {
            for (lq, &v) in self.sys.dofs.control.iter().enumerate() {
                let row = lay.row_cons(c, lq);
                let status = self.sys.dofs.contact_of_vertex[v]
                    .map(|lc| active.status[c * n_contact + lc])
                    .unwrap_or(PairStatus::Inactive);
                match status {
                    PairStatus::LowerActive => {
                        triplets.push((row, lay.y(c, lq), 1.0));
                        rhs[row] = self.bounds.lower[c];
                    }
                    PairStatus::UpperActive => {
                        triplets.push((row, lay.y(c, lq), 1.0));
                        rhs[row] = self.bounds.upper[c];
                    }
                    PairStatus::Inactive => {
                        triplets.push((row, lay.mu(c, lq), 1.0));
                        rhs[row] = 0.0;
                    }
                }
            }
        }
        // merge duplicates deterministically before handing to the solver
        let merged = Csr::from_triplets(self.dim, self.dim, &triplets);
        let mut faer_triplets = Vec::with_capacity(merged.nnz());
        for row in 0..self.dim {
            for (col, val) in merged.row(row) {
                faer_triplets.push(Triplet::new(row, col, val));
            }
        }
        let mat = SparseColMat::<usize, f64>::try_new_from_triplets(
            self.dim,
            self.dim,
            &faer_triplets,
        )
        .map_err(|e| KktError::Singular { detail: format!("matrix build failed: {e:?}") })?;
        let symbolic = SymbolicLu::try_new(mat.symbolic()).map_err(|e| KktError::Singular {
            detail: format!("symbolic factorization failed: {e:?}"),
        })?;
        let lu = Lu::try_new_with_symbolic(symbolic, mat.as_ref()).map_err(|e| {
            KktError::Singular { detail: format!("{e:?}{}", self.singularity_hint(active)) }
        })?;
        let mut b = faer::Mat::<f64>::zeros(self.dim, 1);
        for (i, &v) in rhs.iter().enumerate() {
            b[(i, 0)] = v;
        }
        let x = lu.solve(&b);
        let xv: Vec<f64> = (0..self.dim).map(|i| x[(i, 0)]).collect();
        if xv.iter().any(|v| !v.is_finite()) {
            return Err(KktError::Singular {
                detail: format!("non-finite solution{}", self.singularity_hint(active)),
            });
        }
        self.extract(active, &xv, tol, border_r)
    }

    fn singularity_hint(&self, active: &ActiveSetState) -> String {
        if self.needs_adjoint_border(active) {
            "; nullspace candidate: adjoint pressure constant (every flux-carrying contact dof active)"
                .into()
        } else {
            String::new()
        }
    }

    fn extract(
        &self,
        active: &ActiveSetState,
        x: &[f64],
        tol: f64,
        border_r: bool,
    ) -> Result<KktSolution, KktError> {
        let lay = Layout { n: self.n, m: self.m, kappa: self.kappa };
        let n_contact = self.sys.dofs.n_contact();
        let mut w = vec![0.0; 2 * self.n];
        let mut y = vec![0.0; 2 * self.m];
        let mut p = vec![0.0; self.kappa];
        let mut phi = vec![0.0; 2 * self.n];
        let mut r = vec![0.0; self.kappa];
        let mut mu = vec![0.0; 2 * self.m];
        for c in 0..2 {
            for l in 0..self.n {
                w[c * self.n + l] = x[lay.w(c, l)];
                phi[c * self.n + l] = x[lay.phi(c, l)];
            }
            for l in 0..self.m {
                y[c * self.m + l] = x[lay.y(c, l)];
                mu[c * self.m + l] = x[lay.mu(c, l)];
            }
        }
        for k in 0..self.kappa {
            p[k] = x[lay.p(k)];
            r[k] = x[lay.r(k)];
        }
        // snap constraints: identity rows hold to roundoff; make them exact
        for c in 0..2 {
            for (lq, &v) in self.sys.dofs.control.iter().enumerate() {
                let status = self.sys.dofs.contact_of_vertex[v]
                    .map(|lc| active.status[c * n_contact + lc])
                    .unwrap_or(PairStatus::Inactive);
                match status {
                    PairStatus::LowerActive => y[c * self.m + lq] = self.bounds.lower[c],
                    PairStatus::UpperActive => y[c * self.m + lq] = self.bounds.upper[c],
                    PairStatus::Inactive => mu[c * self.m + lq] = 0.0,
                }
            }
        }
        // enforce the reported mean-zero state pressure exactly
        let areas: Vec<f64> = (0..self.kappa).map(|k| self.sys.mesh.coarse.area(k)).collect();
        let total_area: f64 = areas.iter().sum();
        let p_mean = areas.iter().zip(&p).map(|(a, v)| a * v).sum::<f64>() / total_area;
        for v in p.iter_mut() {
            *v -= p_mean;
        }
        let r_mean = areas.iter().zip(&r).map(|(a, v)| a * v).sum::<f64>() / total_area;
        let mut r_shift = 0.0;
        if border_r {
            // r carries a free constant in this configuration; return the
            // mean-zero representative
            for v in r.iter_mut() {
                *v -= r_mean;
            }
            r_shift = r_mean;
        }

        let block_residuals = self.residuals(&w, &y, &p, &phi, &r, &mu, active, 0.0);
        let residual_norm = block_residuals.iter().fold(0.0f64, |a, &b| a.max(b));
        // the tolerance check discounts the divergence defect absorbed by
        // the adjoint border (an inconsistent fully-clamped pattern); the
        // reported residuals stay physical
        let xi_r = if border_r { x[lay.size() + 1] } else { 0.0 };
        let checked = if border_r {
            let rel = self.residuals(&w, &y, &p, &phi, &r, &mu, active, xi_r);
            rel.iter().fold(0.0f64, |a, &b| a.max(b))
        } else {
            residual_norm
        };
        if checked > tol * self.rhs_scale {
            return Err(KktError::Tolerance { achieved: checked, requested: tol * self.rhs_scale });
        }
        let border_multipliers = [
            x[lay.size()],
            if border_r { x[lay.size() + 1] } else { 0.0 },
        ];
        Ok(KktSolution {
            w,
            y,
            p,
            phi,
            r,
            mu,
            report: KktSolveReport {
                residual_norm,
                block_residuals,
                dim: self.dim,
                nnz: self.base_triplets.len(),
                pressure_shift: [p_mean, r_shift],
                border_multipliers,
            },
        })
    }

    /// Max-norm residuals of the six physical blocks, computed from the
    /// assembled operators (independent of the factorization).
    /// `xi_r` discounts the bordered divergence relaxation (0 for the
    /// physical residual).
    #[allow(clippy::too_many_arguments)]
    pub fn residuals(
        &self,
        w: &[f64],
        y: &[f64],
        p: &[f64],
        phi: &[f64],
        r: &[f64],
        mu: &[f64],
        active: &ActiveSetState,
        xi_r: f64,
    ) -> [f64; 6] {
        let sys = self.sys;
        let nv = sys.dofs.n_vertices;
        let n_contact = sys.dofs.n_contact();
        let w_full = sys.dofs.interior_to_full(w);
        let y_full = sys.dofs.control_to_full(y);
        let phi_full = sys.dofs.interior_to_full(phi);
        let u_full: Vec<f64> = w_full.iter().zip(&y_full).map(|(a, b)| a + b).collect();
        let a_u = sys.apply_blocked(&sys.a, &u_full);
        let a_phi = sys.apply_blocked(&sys.a, &phi_full);
        let m_u = sys.apply_blocked(&sys.m, &u_full);
        let a_yd = sys.apply_blocked(&sys.a, &self.y_d_full);
        let a_y = sys.apply_blocked(&sys.a, &y_full);
        let bp = sys.apply_b(p);
        let br = sys.apply_b(r);
        let mut res = [0.0f64; 6];
        for c in 0..2 {
            for &v in &sys.dofs.interior {
                let j = c * nv + v;
                res[0] = res[0].max((a_u[j] - bp[j] - sys.f1[j]).abs());
                res[2] = res[2].max((a_phi[j] + br[j] - m_u[j] + sys.f2[j]).abs());
            }
            for (lq, &v) in sys.dofs.control.iter().enumerate() {
                let j = c * nv + v;
                let jq = c * self.m + lq;
                let lhs = self.rho * a_y[j] + m_u[j] - a_phi[j] - br[j] + mu[jq];
                let rhs = sys.f2[j] + self.rho * a_yd[j] - self_traction(&self.traction, self.m, c, lq);
                res[4] = res[4].max((lhs - rhs).abs());
                let status = sys.dofs.contact_of_vertex[v]
                    .map(|lc| active.status[c * n_contact + lc])
                    .unwrap_or(PairStatus::Inactive);
                let cons = match status {
                    PairStatus::LowerActive => (y[jq] - self.bounds.lower[c]).abs(),
                    PairStatus::UpperActive => (y[jq] - self.bounds.upper[c]).abs(),
                    PairStatus::Inactive => mu[jq].abs(),
                };
                res[5] = res[5].max(cons);
            }
        }
        let div_u = sys.apply_b_transpose(&u_full);
        let div_phi = sys.apply_b_transpose(&phi_full);
        for k in 0..self.kappa {
            let relax = xi_r * sys.mesh.coarse.area(k);
            res[1] = res[1].max((div_u[k] + relax).abs());
            res[3] = res[3].max(div_phi[k].abs());
        }
        res
    }

    pub fn bounds(&self) -> Bounds {
        self.bounds
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Control-stationarity residual row evaluated without the multiplier:
    /// `(F2 + rho A y_d - G - rho A y - M u + A phi + B r)` at control dof
    /// `(lq, c)`. At a converged point this equals the multiplier.
    pub fn stationarity_residual(
        &self,
        w: &[f64],
        y: &[f64],
        phi: &[f64],
        r: &[f64],
    ) -> Vec<f64> {
        let sys = self.sys;
        let nv = sys.dofs.n_vertices;
        let w_full = sys.dofs.interior_to_full(w);
        let y_full = sys.dofs.control_to_full(y);
        let phi_full = sys.dofs.interior_to_full(phi);
        let u_full: Vec<f64> = w_full.iter().zip(&y_full).map(|(a, b)| a + b).collect();
        let a_phi = sys.apply_blocked(&sys.a, &phi_full);
        let m_u = sys.apply_blocked(&sys.m, &u_full);
        let a_yd = sys.apply_blocked(&sys.a, &self.y_d_full);
        let a_y = sys.apply_blocked(&sys.a, &y_full);
        let br = sys.apply_b(r);
        let mut out = vec![0.0; 2 * self.m];
        for c in 0..2 {
            for (lq, &v) in sys.dofs.control.iter().enumerate() {
                let j = c * nv + v;
                out[c * self.m + lq] = sys.f2[j] + self.rho * a_yd[j]
                    - self_traction(&self.traction, self.m, c, lq)
                    - self.rho * a_y[j]
                    - m_u[j]
                    + a_phi[j]
                    + br[j];
            }
        }
        out
    }
}

fn self_traction(traction: &[f64], m: usize, c: usize, lq: usize) -> f64 {
    traction[c * m + lq]
}

/// Convenience wrapper: assemble and solve once.
#[allow(clippy::too_many_arguments)]
pub fn solve_kkt(
    sys: &FeSystem,
    active: &ActiveSetState,
    rho: f64,
    bounds: Bounds,
    y_d: &[f64],
    traction_moments: Option<&[f64]>,
    tol: f64,
) -> Result<KktSolution, KktError> {
    let asm = KktAssembler::new(sys, rho, bounds, y_d, traction_moments);
    asm.solve(active, tol)
}

/// Partial-pivot Gaussian elimination, used as an independent oracle in
/// tests.
pub fn dense_solve_for_tests(mat: &[Vec<f64>], rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let mut a: Vec<Vec<f64>> = mat.to_vec();
    let mut b = rhs.to_vec();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        let d = a[col][col];
        assert!(d.abs() > 1e-300, "singular dense system");
        for i in (col + 1)..n {
            let f = a[i][col] / d;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                a[i][j] -= f * a[col][j];
            }
            b[i] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut acc = b[i];
        for j in (i + 1)..n {
            acc -= a[i][j] * x[j];
        }
        x[i] = acc / a[i][i];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fe::FeSystem;
    use crate::geom::Vec2;
    use crate::mesh::{build_initial, lshape_domain, unit_square_domain, BoundaryLabel};

    fn zero(_: Vec2) -> Vec2 {
        Vec2::ZERO
    }

    fn square_sys(h: f64) -> FeSystem {
        let mesh = build_initial(
            &unit_square_domain(BoundaryLabel::Dirichlet, BoundaryLabel::Contact),
            h,
        )
        .unwrap();
        FeSystem::assemble(mesh, &zero, &zero, 5).unwrap()
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let sys = square_sys(0.5);
        let m = sys.dofs.n_control();
        let active = ActiveSetState::all_inactive(sys.dofs.n_contact());
        let bounds = Bounds::new([-1.0, -1.0], [1.0, 1.0]);
        let sol = solve_kkt(&sys, &active, 1e-2, bounds, &vec![0.0; 2 * m], None, 1e-9).unwrap();
        for v in sol.w.iter().chain(&sol.y).chain(&sol.p).chain(&sol.phi).chain(&sol.r).chain(&sol.mu)
        {
            assert!(v.abs() < 1e-11);
        }
        assert!(sol.report.residual_norm <= 1e-9);
    }

    #[test]
    fn forced_all_active_on_all_contact_square() {
        // all-contact boundary, every pair forced to the upper bound (1, 1);
        // the constant field (1, 1) carries no net boundary flux, so the
        // system stays consistent and y == (1, 1) everywhere.
        let mesh = build_initial(
            &unit_square_domain(BoundaryLabel::Contact, BoundaryLabel::Contact),
            0.7,
        )
        .unwrap();
        let sys = FeSystem::assemble(mesh, &zero, &zero, 5).unwrap();
        let m = sys.dofs.n_control();
        let n_contact = sys.dofs.n_contact();
        let active = ActiveSetState {
            status: vec![PairStatus::UpperActive; 2 * n_contact],
            iteration: 0,
        };
        let bounds = Bounds::new([-2.0, -2.0], [1.0, 1.0]);
        let sol = solve_kkt(&sys, &active, 1e-2, bounds, &vec![0.0; 2 * m], None, 1e-8).unwrap();
        // feasibility exact on contact nodes
        for c in 0..2 {
            for (lq, &v) in sys.dofs.control.iter().enumerate() {
                if sys.dofs.contact_of_vertex[v].is_some() {
                    assert_eq!(sol.y[c * m + lq], 1.0);
                } else {
                    assert!((sol.y[c * m + lq] - 1.0).abs() < 1e-9, "interior y follows");
                }
            }
        }
        assert!(sol.w.iter().all(|v| v.abs() < 1e-9));
        assert!(sol.report.residual_norm <= 1e-8);
    }

    #[test]
    fn residuals_match_dense_oracle() {
        // small mesh, smooth data: block residuals tiny and solution matches
        // an independent dense elimination of the same assembled system
        let mesh = build_initial(
            &unit_square_domain(BoundaryLabel::Dirichlet, BoundaryLabel::Contact),
            2.0,
        )
        .unwrap();
        let f = |p: Vec2| Vec2::new((p.x * 3.1).sin(), (p.y * 2.7).cos());
        let ud = |p: Vec2| Vec2::new(p.x * p.y, -p.x);
        let sys = FeSystem::assemble(mesh, &f, &ud, 5).unwrap();
        let m = sys.dofs.n_control();
        let y_d: Vec<f64> = (0..2 * m).map(|i| 0.1 * (i as f64 * 0.7).sin()).collect();
        let active = ActiveSetState::all_inactive(sys.dofs.n_contact());
        let bounds = Bounds::new([-10.0, -10.0], [10.0, 10.0]);
        let asm = KktAssembler::new(&sys, 0.5, bounds, &y_d, None);
        let sol = asm.solve(&active, 1e-10).unwrap();
        assert!(sol.report.residual_norm <= 1e-10);

        // dense re-solve of the identical triplet system
        let lay = Layout {
            n: sys.dofs.n_velocity(),
            m: sys.dofs.n_control(),
            kappa: sys.mesh.coarse.n_triangles(),
        };
        let dim = lay.size() + 2;
        let mut dense = vec![vec![0.0; dim]; dim];
        let mut rhs = asm.base_rhs.clone();
        for &(r, c, v) in &asm.base_triplets {
            dense[r][c] += v;
        }
        dense[dim - 1][dim - 1] = 1.0; // unused adjoint border slot
        let n_contact = sys.dofs.n_contact();
        for c in 0..2 {
            for (lq, &v) in sys.dofs.control.iter().enumerate() {
                let row = lay.row_cons(c, lq);
                let _ = v;
                let _ = n_contact;
                dense[row][lay.mu(c, lq)] = 1.0;
                rhs[row] = 0.0;
            }
        }
        let x = dense_solve_for_tests(&dense, &rhs);
        for c in 0..2 {
            for l in 0..lay.n {
                assert!((x[lay.w(c, l)] - sol.w[c * lay.n + l]).abs() < 1e-8);
                assert!((x[lay.phi(c, l)] - sol.phi[c * lay.n + l]).abs() < 1e-8);
            }
            for l in 0..lay.m {
                assert!((x[lay.y(c, l)] - sol.y[c * lay.m + l]).abs() < 1e-8);
            }
        }
        // dense pressures need the same mean shift before comparing
        let areas: Vec<f64> =
            (0..lay.kappa).map(|k| sys.mesh.coarse.area(k)).collect();
        let total: f64 = areas.iter().sum();
        let pm = (0..lay.kappa).map(|k| areas[k] * x[lay.p(k)]).sum::<f64>() / total;
        for k in 0..lay.kappa {
            assert!((x[lay.p(k)] - pm - sol.p[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_mean_state_pressure() {
        let mesh = build_initial(&lshape_domain(BoundaryLabel::Contact), 0.8).unwrap();
        let f = |p: Vec2| Vec2::new(p.y, p.x + 1.0);
        let sys = FeSystem::assemble(mesh, &f, &zero, 5).unwrap();
        let m = sys.dofs.n_control();
        let active = ActiveSetState::all_inactive(sys.dofs.n_contact());
        let bounds = Bounds::new([-100.0, -100.0], [100.0, 100.0]);
        let sol = solve_kkt(&sys, &active, 1e-2, bounds, &vec![0.0; 2 * m], None, 1e-9).unwrap();
        let areas: Vec<f64> =
            (0..sys.mesh.coarse.n_triangles()).map(|k| sys.mesh.coarse.area(k)).collect();
        let total: f64 = areas.iter().sum();
        let mean = areas.iter().zip(&sol.p).map(|(a, v)| a * v).sum::<f64>();
        let pinf = sol.p.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        assert!(mean.abs() <= 1e-12 * total * pinf.max(1e-300) + 1e-300);
    }
}
