//! Dof maps and assembled operators for the P1 vector / P0 pressure pair.
//!
//! Velocity-like fields are P1 on the fine mesh, component-blocked: dof
//! `(vertex i, component c)` sits at index `c * nv + i`. Pressure-like
//! fields are P0 on the coarse mesh. The scalar stiffness and mass matrices
//! are assembled once on the full vertex set; restrictions to the zero-trace
//! velocity space and the control space are index maps, applied when the
//! coupled system is formed.
//!
//! Entries of the stiffness, mass and divergence matrices are closed-form
//! for straight P1/P0 elements; only data loads use quadrature. Element
//! loops run through `parallel::map_indexed` and accumulate in element
//! order, so assembly is bit-reproducible.

use crate::geom::{triangle_rule, Vec2};
use crate::mesh::{
    p1_gradients_of, BoundaryLabel, MeshError, PointLocator, TwoGridMesh, VertexClass,
};
use crate::sparse::Csr;
use std::fmt;

#[derive(Debug)]
pub enum FeError {
    Degenerate { element: usize },
    Mesh(MeshError),
    Dimension { expected: usize, got: usize },
}

impl fmt::Display for FeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeError::Degenerate { element } => write!(f, "degenerate element {element}"),
            FeError::Mesh(e) => write!(f, "{e}"),
            FeError::Dimension { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
        }
    }
}

impl std::error::Error for FeError {}

impl From<MeshError> for FeError {
    fn from(e: MeshError) -> Self {
        FeError::Mesh(e)
    }
}

/// Index maps between global fine vertices and the constrained subspaces.
#[derive(Clone, Debug)]
pub struct DofMaps {
    pub n_vertices: usize,
    /// Vertices of the zero-trace velocity space (interior vertices).
    pub interior: Vec<usize>,
    pub interior_of_vertex: Vec<Option<usize>>,
    /// Vertices of the control space (not on the Dirichlet closure).
    pub control: Vec<usize>,
    pub control_of_vertex: Vec<Option<usize>>,
    /// Contact vertices, as positions into `control` as well.
    pub contact: Vec<usize>,
    pub contact_of_vertex: Vec<Option<usize>>,
}

impl DofMaps {
    pub fn build(mesh: &TwoGridMesh) -> DofMaps {
        let nv = mesh.fine.n_vertices();
        let mut interior = Vec::new();
        let mut control = Vec::new();
        let mut contact = Vec::new();
        let mut interior_of_vertex = vec![None; nv];
        let mut control_of_vertex = vec![None; nv];
        let mut contact_of_vertex = vec![None; nv];
        for v in 0..nv {
            match mesh.vertex_class[v] {
                VertexClass::Interior => {
                    interior_of_vertex[v] = Some(interior.len());
                    interior.push(v);
                    control_of_vertex[v] = Some(control.len());
                    control.push(v);
                }
                VertexClass::Contact | VertexClass::Neumann => {
                    control_of_vertex[v] = Some(control.len());
                    control.push(v);
                    if mesh.vertex_class[v] == VertexClass::Contact {
                        contact_of_vertex[v] = Some(contact.len());
                        contact.push(v);
                    }
                }
                VertexClass::Dirichlet => {}
            }
        }
        DofMaps {
            n_vertices: nv,
            interior,
            interior_of_vertex,
            control,
            control_of_vertex,
            contact,
            contact_of_vertex,
        }
    }

    pub fn n_velocity(&self) -> usize {
        self.interior.len()
    }

    pub fn n_control(&self) -> usize {
        self.control.len()
    }

    pub fn n_contact(&self) -> usize {
        self.contact.len()
    }

    /// Expand a component-blocked control vector (length 2m) to a full
    /// vertex field (length 2nv), zero on Dirichlet vertices.
    pub fn control_to_full(&self, y: &[f64]) -> Vec<f64> {
        let m = self.control.len();
        assert_eq!(y.len(), 2 * m);
        let mut full = vec![0.0; 2 * self.n_vertices];
        for (q, &v) in self.control.iter().enumerate() {
            full[v] = y[q];
            full[self.n_vertices + v] = y[m + q];
        }
        full
    }

    /// Expand a component-blocked interior vector (length 2n) to a full
    /// vertex field.
    pub fn interior_to_full(&self, w: &[f64]) -> Vec<f64> {
        let n = self.interior.len();
        assert_eq!(w.len(), 2 * n);
        let mut full = vec![0.0; 2 * self.n_vertices];
        for (q, &v) in self.interior.iter().enumerate() {
            full[v] = w[q];
            full[self.n_vertices + v] = w[n + q];
        }
        full
    }

    pub fn full_to_control(&self, full: &[f64]) -> Vec<f64> {
        let m = self.control.len();
        assert_eq!(full.len(), 2 * self.n_vertices);
        let mut y = vec![0.0; 2 * m];
        for (q, &v) in self.control.iter().enumerate() {
            y[q] = full[v];
            y[m + q] = full[self.n_vertices + v];
        }
        y
    }
}

/// Assembled operators of the two-grid discretization.
pub struct FeSystem {
    pub mesh: TwoGridMesh,
    pub dofs: DofMaps,
    /// Scalar P1 stiffness on the full fine vertex set.
    pub a: Csr,
    /// Scalar P1 mass on the full fine vertex set.
    pub m: Csr,
    /// Divergence coupling, component c: `b[c][i][k] = ∫ (d_c hat_i) chi_k`.
    pub b: [Csr; 2],
    /// Load of the body force, component-blocked over all vertices.
    pub f1: Vec<f64>,
    /// Load of the velocity target, component-blocked over all vertices.
    pub f2: Vec<f64>,
    pub quad_degree: usize,
}

impl FeSystem {
    /// Assemble all operators. `quad_degree >= 2` controls the load
    /// quadrature only; matrix entries are closed-form.
    pub fn assemble(
        mesh: TwoGridMesh,
        f: &(dyn Fn(Vec2) -> Vec2 + Sync),
        u_d: &(dyn Fn(Vec2) -> Vec2 + Sync),
        quad_degree: usize,
    ) -> Result<FeSystem, FeError> {
        assert!(quad_degree >= 2, "load quadrature must be at least degree 2");
        let nv = mesh.fine.n_vertices();
        let nt = mesh.fine.n_triangles();
        let kappa = mesh.coarse.n_triangles();

        struct Local {
            tri: [usize; 3],
            parent: usize,
            stiff: [[f64; 3]; 3],
            mass: [[f64; 3]; 3],
            bdiv: [Vec2; 3],
            load_f: [Vec2; 3],
            load_ud: [Vec2; 3],
            degenerate: bool,
        }

        let rule = triangle_rule(quad_degree);
        let locals = crate::parallel::map_indexed(nt, |t| {
            let tri = mesh.fine.triangles[t];
            let [pa, pb, pc] = mesh.fine.coords(t);
            let area = crate::geom::triangle_area(pa, pb, pc);
            let diam = crate::geom::triangle_diameter(pa, pb, pc);
            let mut local = Local {
                tri,
                parent: mesh.parent_of_fine[t],
                stiff: [[0.0; 3]; 3],
                mass: [[0.0; 3]; 3],
                bdiv: [Vec2::ZERO; 3],
                load_f: [Vec2::ZERO; 3],
                load_ud: [Vec2::ZERO; 3],
                degenerate: area <= 1e-14 * diam * diam,
            };
            if local.degenerate {
                return local;
            }
            let g = p1_gradients_of(&mesh.fine, t);
            for i in 0..3 {
                for j in 0..3 {
                    local.stiff[i][j] = area * g[i].dot(g[j]);
                    local.mass[i][j] = area / 12.0 * if i == j { 2.0 } else { 1.0 };
                }
                local.bdiv[i] = g[i] * area;
            }
            for q in rule {
                let x = pa * q.bary[0] + pb * q.bary[1] + pc * q.bary[2];
                let fx = f(x);
                let ux = u_d(x);
                for i in 0..3 {
                    let w = q.weight * area * q.bary[i];
                    local.load_f[i] = local.load_f[i] + fx * w;
                    local.load_ud[i] = local.load_ud[i] + ux * w;
                }
            }
            local
        });

        if let Some(t) = locals.iter().position(|l| l.degenerate) {
            return Err(FeError::Degenerate { element: t });
        }

        let mut a_trip = Vec::with_capacity(nt * 9);
        let mut m_trip = Vec::with_capacity(nt * 9);
        let mut bx_trip = Vec::with_capacity(nt * 3);
        let mut by_trip = Vec::with_capacity(nt * 3);
        let mut f1 = vec![0.0; 2 * nv];
        let mut f2 = vec![0.0; 2 * nv];
        for local in &locals {
            for i in 0..3 {
                let vi = local.tri[i];
                for j in 0..3 {
                    let vj = local.tri[j];
                    a_trip.push((vi, vj, local.stiff[i][j]));
                    m_trip.push((vi, vj, local.mass[i][j]));
                }
                bx_trip.push((vi, local.parent, local.bdiv[i].x));
                by_trip.push((vi, local.parent, local.bdiv[i].y));
                f1[vi] += local.load_f[i].x;
                f1[nv + vi] += local.load_f[i].y;
                f2[vi] += local.load_ud[i].x;
                f2[nv + vi] += local.load_ud[i].y;
            }
        }

        let dofs = DofMaps::build(&mesh);
        Ok(FeSystem {
            mesh,
            dofs,
            a: Csr::from_triplets(nv, nv, &a_trip),
            m: Csr::from_triplets(nv, nv, &m_trip),
            b: [Csr::from_triplets(nv, kappa, &bx_trip), Csr::from_triplets(nv, kappa, &by_trip)],
            f1,
            f2,
            quad_degree,
        })
    }

    /// Apply the scalar operator componentwise to a full vector field.
    pub fn apply_blocked(&self, op: &Csr, x: &[f64]) -> Vec<f64> {
        let nv = self.dofs.n_vertices;
        assert_eq!(x.len(), 2 * nv);
        let mut y = vec![0.0; 2 * nv];
        let yx = op.matvec(&x[..nv]);
        let yy = op.matvec(&x[nv..]);
        y[..nv].copy_from_slice(&yx);
        y[nv..].copy_from_slice(&yy);
        y
    }

    /// `(B p)` as a full vector field: component c gets `b[c] * p`.
    pub fn apply_b(&self, p: &[f64]) -> Vec<f64> {
        let nv = self.dofs.n_vertices;
        let bx = self.b[0].matvec(p);
        let by = self.b[1].matvec(p);
        let mut out = vec![0.0; 2 * nv];
        out[..nv].copy_from_slice(&bx);
        out[nv..].copy_from_slice(&by);
        out
    }

    /// `B^T u` over the pressure space for a full vector field `u`; entry k
    /// is the integral of `div u` over coarse element k.
    pub fn apply_b_transpose(&self, u: &[f64]) -> Vec<f64> {
        let nv = self.dofs.n_vertices;
        let mut out = self.b[0].matvec_transpose(&u[..nv]);
        let oy = self.b[1].matvec_transpose(&u[nv..]);
        for (o, v) in out.iter_mut().zip(oy) {
            *o += v;
        }
        out
    }

    /// Nodal interpolant of a vector field on the full vertex set.
    pub fn interpolate(&self, field: &dyn Fn(Vec2) -> Vec2) -> Vec<f64> {
        let nv = self.dofs.n_vertices;
        let mut out = vec![0.0; 2 * nv];
        for (i, &v) in self.mesh.fine.vertices.iter().enumerate() {
            let val = field(v);
            out[i] = val.x;
            out[nv + i] = val.y;
        }
        out
    }

    /// Constant Jacobian of a P1 vector field on fine element `t`.
    pub fn p1_jacobian(&self, values: &[f64], t: usize) -> crate::geom::Mat2 {
        let nv = self.dofs.n_vertices;
        let g = p1_gradients_of(&self.mesh.fine, t);
        let tri = self.mesh.fine.triangles[t];
        let mut gx = Vec2::ZERO;
        let mut gy = Vec2::ZERO;
        for k in 0..3 {
            gx = gx + g[k] * values[tri[k]];
            gy = gy + g[k] * values[nv + tri[k]];
        }
        crate::geom::Mat2::new(gx.x, gx.y, gy.x, gy.y)
    }

    /// Value of a P1 vector field at a point of fine element `t`.
    pub fn p1_value(&self, values: &[f64], t: usize, p: Vec2) -> Vec2 {
        let nv = self.dofs.n_vertices;
        let l = crate::mesh::p1_basis_at(&self.mesh.fine, t, p);
        let tri = self.mesh.fine.triangles[t];
        let mut out = Vec2::ZERO;
        for k in 0..3 {
            out = out + Vec2::new(values[tri[k]], values[nv + tri[k]]) * l[k];
        }
        out
    }
}

/// Field kinds for [`DiscreteField`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldKind {
    /// P1 vector field on the fine mesh, component-blocked (length 2 nv).
    VelocityLike,
    /// P0 scalar field on the coarse mesh (length = coarse triangle count).
    PressureLike,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FieldValue {
    Scalar(f64),
    Vector(Vec2),
}

/// Coefficient vector tagged with its interpretation.
#[derive(Clone, Debug)]
pub struct DiscreteField {
    pub kind: FieldKind,
    pub values: Vec<f64>,
}

impl DiscreteField {
    pub fn new(kind: FieldKind, values: Vec<f64>, mesh: &TwoGridMesh) -> Result<Self, FeError> {
        let expected = match kind {
            FieldKind::VelocityLike => 2 * mesh.fine.n_vertices(),
            FieldKind::PressureLike => mesh.coarse.n_triangles(),
        };
        if values.len() != expected {
            return Err(FeError::Dimension { expected, got: values.len() });
        }
        Ok(DiscreteField { kind, values })
    }

    /// Evaluate at a point of the domain; P1 barycentric interpolation or
    /// P0 element lookup. Fails when the point is outside every element.
    pub fn evaluate(&self, mesh: &TwoGridMesh, point: Vec2) -> Result<FieldValue, FeError> {
        match self.kind {
            FieldKind::VelocityLike => {
                let loc = PointLocator::new(&mesh.fine);
                let t = loc.locate(point)?;
                let nv = mesh.fine.n_vertices();
                let l = crate::mesh::p1_basis_at(&mesh.fine, t, point);
                let tri = mesh.fine.triangles[t];
                let mut out = Vec2::ZERO;
                for k in 0..3 {
                    out = out + Vec2::new(self.values[tri[k]], self.values[nv + tri[k]]) * l[k];
                }
                Ok(FieldValue::Vector(out))
            }
            FieldKind::PressureLike => {
                let loc = PointLocator::new(&mesh.coarse);
                let t = loc.locate(point)?;
                Ok(FieldValue::Scalar(self.values[t]))
            }
        }
    }
}

/// Closed-form boundary integrals of the contact-side hat functions.
///
/// For a contact side of length `h` touching contact vertex p, the inner
/// third adjacent to p carries:
///   integral of hat_p            over it = 5 h / 18,
///   integral of hat_p^2          over it = 19 h / 81,
///   integral of hat_p * hat_q    over it = 7 h / 162 (q the other endpoint).
#[derive(Clone, Copy, Debug)]
pub struct ContactSideIntegrals {
    pub edge: usize,
    pub other_vertex: usize,
    pub length: f64,
    /// Integral of hat_p over the whole side (= h/2).
    pub hat: f64,
    pub inner_hat: f64,
    pub inner_hat_sq: f64,
    pub inner_hat_cross: f64,
}

/// Per contact vertex: its touching contact sides with closed-form hat
/// integrals, and the total integral of hat_p over the contact patch.
#[derive(Clone, Debug)]
pub struct ContactBoundary {
    /// Indexed like `dofs.contact`.
    pub sides: Vec<Vec<ContactSideIntegrals>>,
    pub hat_total: Vec<f64>,
}

/// Closed-form contact-boundary integrals for every contact vertex.
pub fn boundary_mass_contact(mesh: &TwoGridMesh, dofs: &DofMaps) -> ContactBoundary {
    let mut sides = vec![Vec::new(); dofs.contact.len()];
    let mut hat_total = vec![0.0; dofs.contact.len()];
    for (e, edge) in mesh.edges.iter().enumerate() {
        if edge.label != Some(BoundaryLabel::Contact) {
            continue;
        }
        let h = edge.length;
        for (p, q) in [(edge.v.0, edge.v.1), (edge.v.1, edge.v.0)] {
            if let Some(cp) = dofs.contact_of_vertex[p] {
                sides[cp].push(ContactSideIntegrals {
                    edge: e,
                    other_vertex: q,
                    length: h,
                    hat: 0.5 * h,
                    inner_hat: 5.0 * h / 18.0,
                    inner_hat_sq: 19.0 * h / 81.0,
                    inner_hat_cross: 7.0 * h / 162.0,
                });
                hat_total[cp] += 0.5 * h;
            }
        }
    }
    ContactBoundary { sides, hat_total }
}

/// Moment vector of a boundary traction against the control basis:
/// `out[(q, c)] = integral over the contact boundary of g(x, n) . (hat_q e_c)`.
/// Returns a component-blocked control-space vector (length 2m).
pub fn contact_traction_moments(
    mesh: &TwoGridMesh,
    dofs: &DofMaps,
    g: &dyn Fn(Vec2, Vec2) -> Vec2,
    quad_points: usize,
) -> Vec<f64> {
    let m = dofs.n_control();
    let mut out = vec![0.0; 2 * m];
    let rule = crate::geom::segment_rule(quad_points);
    for edge in &mesh.edges {
        if edge.label != Some(BoundaryLabel::Contact) {
            continue;
        }
        let (u, v) = edge.v;
        let (pu, pv) = (mesh.fine.vertices[u], mesh.fine.vertices[v]);
        let n = edge.normal_plus;
        for &(t, w) in rule {
            let x = pu + (pv - pu) * t;
            let gx = g(x, n);
            let wl = w * edge.length;
            for (vert, hat) in [(u, 1.0 - t), (v, t)] {
                if let Some(q) = dofs.control_of_vertex[vert] {
                    out[q] += wl * gx.x * hat;
                    out[m + q] += wl * gx.y * hat;
                }
            }
        }
    }
    out
}
