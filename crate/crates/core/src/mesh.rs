//! Two-grid triangle meshes: a conforming coarse triangulation and its
//! midpoint (red) refinement, with boundary labels and patch topology.
//!
//! Conventions:
//! - Triangles are stored counterclockwise as `[a, b, c]`; the newest-vertex
//!   bisection refinement edge is always the edge `(a, b)` and `c` is the
//!   newest vertex. Bisection of `[a, b, c]` at `m = (a+b)/2` produces
//!   `[c, a, m]` and `[b, c, m]`.
//! - Marking a triangle marks all three of its edges; the closure pass then
//!   marks refinement edges until every triangle with a marked edge has its
//!   refinement edge marked. A fully marked triangle is bisected twice
//!   (four children), so one full-marking sweep quadruples the element count.
//! - Adaptive refinement acts on the coarse mesh only; the fine mesh is
//!   always rebuilt as the midpoint refinement of the coarse mesh.

use crate::geom::{
    contains_point, p1_gradients, signed_area2, triangle_area, triangle_diameter,
    triangle_min_angle, Vec2,
};
use std::collections::HashMap;
use std::fmt;

/// Boundary condition class of a polygon segment or mesh boundary edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BoundaryLabel {
    Dirichlet,
    Contact,
    Neumann,
}

impl BoundaryLabel {
    pub fn to_tag(self) -> u32 {
        match self {
            BoundaryLabel::Dirichlet => 1,
            BoundaryLabel::Contact => 2,
            BoundaryLabel::Neumann => 3,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            1 => Some(BoundaryLabel::Dirichlet),
            2 => Some(BoundaryLabel::Contact),
            3 => Some(BoundaryLabel::Neumann),
            _ => None,
        }
    }
}

/// Classification of a fine vertex. Corners shared by the Dirichlet closure
/// and the contact boundary count as Dirichlet.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VertexClass {
    Interior,
    Dirichlet,
    Contact,
    Neumann,
}

#[derive(Debug)]
pub enum MeshError {
    NonSimplePolygon,
    InvalidDomain(String),
    DegenerateTriangle { triangle: usize },
    NotConforming(String),
    Parse(String),
    LocationFailure { point: (f64, f64) },
}

impl fmt::Display for MeshError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeshError::NonSimplePolygon => write!(f, "polygon is not simple"),
            MeshError::InvalidDomain(s) => write!(f, "invalid domain: {s}"),
            MeshError::DegenerateTriangle { triangle } => {
                write!(f, "degenerate triangle {triangle}")
            }
            MeshError::NotConforming(s) => write!(f, "mesh not conforming: {s}"),
            MeshError::Parse(s) => write!(f, "mesh parse error: {s}"),
            MeshError::LocationFailure { point } => {
                write!(f, "point ({}, {}) not inside any element", point.0, point.1)
            }
        }
    }
}

impl std::error::Error for MeshError {}

/// Polygonal domain with one boundary label per segment.
#[derive(Clone, Debug)]
pub struct DomainSpec {
    /// Counterclockwise simple polygon.
    pub polygon: Vec<Vec2>,
    /// Label of segment i = (polygon[i], polygon[i+1 mod n]).
    pub labels: Vec<BoundaryLabel>,
}

impl DomainSpec {
    pub fn new(polygon: Vec<Vec2>, labels: Vec<BoundaryLabel>) -> Result<Self, MeshError> {
        let spec = DomainSpec { polygon, labels };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        let n = self.polygon.len();
        if n < 3 {
            return Err(MeshError::InvalidDomain("fewer than 3 vertices".into()));
        }
        if self.labels.len() != n {
            return Err(MeshError::InvalidDomain("one label per segment required".into()));
        }
        if !self.labels.iter().any(|&l| l == BoundaryLabel::Contact) {
            return Err(MeshError::InvalidDomain("no contact segment".into()));
        }
        if self.area() <= 0.0 {
            return Err(MeshError::InvalidDomain("polygon not counterclockwise".into()));
        }
        if !self.is_simple() {
            return Err(MeshError::NonSimplePolygon);
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        let n = self.polygon.len();
        0.5 * (0..n)
            .map(|i| self.polygon[i].cross(self.polygon[(i + 1) % n]))
            .sum::<f64>()
    }

    fn is_simple(&self) -> bool {
        let n = self.polygon.len();
        let seg = |i: usize| (self.polygon[i], self.polygon[(i + 1) % n]);
        for i in 0..n {
            for j in (i + 1)..n {
                // adjacent segments share an endpoint, skip them
                if j == i || (j + 1) % n == i || (i + 1) % n == j {
                    continue;
                }
                let (a, b) = seg(i);
                let (c, d) = seg(j);
                if segments_intersect(a, b, c, d) {
                    return false;
                }
            }
        }
        true
    }
}

fn segments_intersect(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    let orient = |p: Vec2, q: Vec2, r: Vec2| (q - p).cross(r - p);
    let (o1, o2) = (orient(a, b, c), orient(a, b, d));
    let (o3, o4) = (orient(c, d, a), orient(c, d, b));
    if (o1 * o2 < 0.0) && (o3 * o4 < 0.0) {
        return true;
    }
    let on = |p: Vec2, q: Vec2, r: Vec2| {
        orient(p, q, r).abs() < 1e-14
            && r.x >= p.x.min(q.x) - 1e-14
            && r.x <= p.x.max(q.x) + 1e-14
            && r.y >= p.y.min(q.y) - 1e-14
            && r.y <= p.y.max(q.y) + 1e-14
    };
    on(a, b, c) || on(a, b, d) || on(c, d, a) || on(c, d, b)
}

/// Conforming triangulation with newest-vertex bisection genealogy.
#[derive(Clone, Debug)]
pub struct CoarseMesh {
    pub vertices: Vec<Vec2>,
    /// CCW vertex triples; the refinement edge is `(t[0], t[1])`.
    pub triangles: Vec<[usize; 3]>,
    /// `(u, v, label)` covering the whole boundary.
    pub boundary_edges: Vec<(usize, usize, BoundaryLabel)>,
    /// Bisection depth per triangle.
    pub generation: Vec<u32>,
}

impl CoarseMesh {
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn coords(&self, t: usize) -> [Vec2; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.coords(t);
        triangle_area(a, b, c)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_triangles()).map(|t| self.area(t)).sum()
    }

    pub fn diameter(&self, t: usize) -> f64 {
        let [a, b, c] = self.coords(t);
        triangle_diameter(a, b, c)
    }

    pub fn max_diameter(&self) -> f64 {
        (0..self.n_triangles()).map(|t| self.diameter(t)).fold(0.0, f64::max)
    }

    pub fn min_angle(&self) -> f64 {
        (0..self.n_triangles())
            .map(|t| {
                let [a, b, c] = self.coords(t);
                triangle_min_angle(a, b, c)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Refinement edge of triangle `t` under the storage convention.
    pub fn refinement_edge(&self, t: usize) -> (usize, usize) {
        (self.triangles[t][0], self.triangles[t][1])
    }

    /// Rotate vertex orderings so the longest edge of each triangle comes
    /// first (used to seed the refinement edges of an initial mesh).
    fn seed_refinement_edges(&mut self) {
        for tri in &mut self.triangles {
            let [a, b, c] = *tri;
            let l01 = self.vertices[a].dist(self.vertices[b]);
            let l12 = self.vertices[b].dist(self.vertices[c]);
            let l20 = self.vertices[c].dist(self.vertices[a]);
            if l12 > l01 && l12 >= l20 {
                *tri = [b, c, a];
            } else if l20 > l01 && l20 > l12 {
                *tri = [c, a, b];
            }
        }
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        for (t, _) in self.triangles.iter().enumerate() {
            let [a, b, c] = self.coords(t);
            let area = triangle_area(a, b, c);
            let diam = triangle_diameter(a, b, c);
            if area <= 1e-14 * diam * diam {
                return Err(MeshError::DegenerateTriangle { triangle: t });
            }
        }
        // Every edge shared by at most two triangles; single-triangle edges
        // must carry a boundary label, and labeled edges must be single.
        let mut edge_count: HashMap<(usize, usize), usize> = HashMap::new();
        for tri in &self.triangles {
            for k in 0..3 {
                let (u, v) = (tri[k], tri[(k + 1) % 3]);
                let key = (u.min(v), u.max(v));
                *edge_count.entry(key).or_insert(0) += 1;
            }
        }
        if edge_count.values().any(|&c| c > 2) {
            return Err(MeshError::NotConforming("edge shared by more than 2 triangles".into()));
        }
        let boundary: Vec<(usize, usize)> = edge_count
            .iter()
            .filter(|(_, &c)| c == 1)
            .map(|(&e, _)| e)
            .collect();
        let labeled: std::collections::HashSet<(usize, usize)> = self
            .boundary_edges
            .iter()
            .map(|&(u, v, _)| (u.min(v), u.max(v)))
            .collect();
        if boundary.len() != self.boundary_edges.len()
            || boundary.iter().any(|e| !labeled.contains(e))
        {
            return Err(MeshError::NotConforming(
                "boundary label list does not match mesh boundary".into(),
            ));
        }
        Ok(())
    }

    /// One newest-vertex bisection sweep. Every marked triangle is bisected
    /// (twice), and the conformity closure bisects neighbors as needed.
    pub fn refine(&self, marked: &[usize]) -> CoarseMesh {
        if marked.is_empty() {
            return self.clone();
        }
        // Edge table in deterministic first-touch order.
        let mut edge_ids: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edge_list: Vec<(usize, usize)> = Vec::new();
        let mut tri_edges: Vec<[usize; 3]> = Vec::with_capacity(self.n_triangles());
        for tri in &self.triangles {
            let mut ids = [0usize; 3];
            for k in 0..3 {
                let (u, v) = (tri[k], tri[(k + 1) % 3]);
                let key = (u.min(v), u.max(v));
                let id = *edge_ids.entry(key).or_insert_with(|| {
                    edge_list.push(key);
                    edge_list.len() - 1
                });
                ids[k] = id;
            }
            tri_edges.push(ids);
        }
        let mut edge_marked = vec![false; edge_list.len()];
        for &t in marked {
            for &e in &tri_edges[t] {
                edge_marked[e] = true;
            }
        }
        // Closure: a triangle with any marked edge must have its refinement
        // edge marked too.
        loop {
            let mut changed = false;
            for t in 0..self.n_triangles() {
                let [e0, e1, e2] = tri_edges[t];
                if (edge_marked[e1] || edge_marked[e2]) && !edge_marked[e0] {
                    edge_marked[e0] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        // New midpoint vertex per marked edge.
        let mut vertices = self.vertices.clone();
        let mut midpoint = vec![usize::MAX; edge_list.len()];
        for (e, &(u, v)) in edge_list.iter().enumerate() {
            if edge_marked[e] {
                midpoint[e] = vertices.len();
                vertices.push((self.vertices[u] + self.vertices[v]) * 0.5);
            }
        }
        // Children per marking pattern.
        let mut triangles = Vec::with_capacity(self.n_triangles() * 2);
        let mut generation = Vec::with_capacity(self.n_triangles() * 2);
        for t in 0..self.n_triangles() {
            let [a, b, c] = self.triangles[t];
            let [e0, e1, e2] = tri_edges[t];
            let g = self.generation[t];
            match (edge_marked[e0], edge_marked[e1], edge_marked[e2]) {
                (false, false, false) => {
                    triangles.push([a, b, c]);
                    generation.push(g);
                }
                (true, false, false) => {
                    let m = midpoint[e0];
                    triangles.push([c, a, m]);
                    triangles.push([b, c, m]);
                    generation.extend([g + 1, g + 1]);
                }
                (true, true, false) => {
                    let m0 = midpoint[e0];
                    let m1 = midpoint[e1];
                    triangles.push([c, a, m0]);
                    triangles.push([m0, b, m1]);
                    triangles.push([c, m0, m1]);
                    generation.extend([g + 1, g + 2, g + 2]);
                }
                (true, false, true) => {
                    let m0 = midpoint[e0];
                    let m2 = midpoint[e2];
                    triangles.push([m0, c, m2]);
                    triangles.push([a, m0, m2]);
                    triangles.push([b, c, m0]);
                    generation.extend([g + 2, g + 2, g + 1]);
                }
                (true, true, true) => {
                    let m0 = midpoint[e0];
                    let m1 = midpoint[e1];
                    let m2 = midpoint[e2];
                    triangles.push([m0, c, m2]);
                    triangles.push([a, m0, m2]);
                    triangles.push([m0, b, m1]);
                    triangles.push([c, m0, m1]);
                    generation.extend([g + 2, g + 2, g + 2, g + 2]);
                }
                // closure guarantees the refinement edge is marked whenever
                // any edge is marked
                _ => unreachable!("closure violated"),
            }
        }
        // Boundary edges inherit labels through bisection.
        let mut boundary_edges = Vec::with_capacity(self.boundary_edges.len() * 2);
        for &(u, v, label) in &self.boundary_edges {
            let key = (u.min(v), u.max(v));
            let e = edge_ids[&key];
            if edge_marked[e] {
                let m = midpoint[e];
                boundary_edges.push((u, m, label));
                boundary_edges.push((m, v, label));
            } else {
                boundary_edges.push((u, v, label));
            }
        }
        CoarseMesh { vertices, triangles, boundary_edges, generation }
    }
}

/// A fine-mesh edge with adjacency. `tris[0]` is the plus side; the stored
/// normal is the outward unit normal of that triangle across the edge.
#[derive(Clone, Debug)]
pub struct FineEdge {
    pub v: (usize, usize),
    pub tris: [Option<usize>; 2],
    pub label: Option<BoundaryLabel>,
    pub normal_plus: Vec2,
    pub length: f64,
}

impl FineEdge {
    pub fn midpoint(&self, mesh: &CoarseMesh) -> Vec2 {
        (mesh.vertices[self.v.0] + mesh.vertices[self.v.1]) * 0.5
    }
}

/// Node patch of a fine vertex: incident elements and the classified sides
/// of the patch.
#[derive(Clone, Debug)]
pub struct NodePatch {
    pub vertex: usize,
    pub elements: Vec<usize>,
    pub interior_sides: Vec<usize>,
    pub contact_sides: Vec<usize>,
    pub dirichlet_sides: Vec<usize>,
    pub neumann_sides: Vec<usize>,
    /// Diameter of the patch.
    pub h_p: f64,
}

/// Coarse triangulation plus its midpoint refinement and all derived
/// topology used by assembly and the error estimator.
#[derive(Clone, Debug)]
pub struct TwoGridMesh {
    pub domain: Option<DomainSpec>,
    pub coarse: CoarseMesh,
    pub fine: CoarseMesh,
    /// Four fine children per coarse triangle.
    pub child_map: Vec<[usize; 4]>,
    /// Coarse parent of each fine triangle.
    pub parent_of_fine: Vec<usize>,
    pub edges: Vec<FineEdge>,
    /// Edge ids of the three edges of each fine triangle.
    pub fine_tri_edges: Vec<[usize; 3]>,
    pub vertex_class: Vec<VertexClass>,
}

impl TwoGridMesh {
    /// Build the two-grid pair from a coarse mesh by connecting the edge
    /// midpoints of every coarse triangle.
    pub fn from_coarse(coarse: CoarseMesh, domain: Option<DomainSpec>) -> Result<Self, MeshError> {
        coarse.validate()?;
        let ncv = coarse.n_vertices();
        let mut vertices = coarse.vertices.clone();
        let mut edge_ids: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid_of_edge: Vec<usize> = Vec::new();
        let mut mid = |u: usize, v: usize,
                       vertices: &mut Vec<Vec2>,
                       edge_ids: &mut HashMap<(usize, usize), usize>,
                       mid_of_edge: &mut Vec<usize>|
         -> usize {
            let key = (u.min(v), u.max(v));
            if let Some(&e) = edge_ids.get(&key) {
                return mid_of_edge[e];
            }
            let m = vertices.len();
            vertices.push((vertices[u] + vertices[v]) * 0.5);
            edge_ids.insert(key, edge_ids.len());
            mid_of_edge.push(m);
            m
        };
        let mut fine_triangles = Vec::with_capacity(coarse.n_triangles() * 4);
        let mut generation = Vec::with_capacity(coarse.n_triangles() * 4);
        let mut child_map = Vec::with_capacity(coarse.n_triangles());
        let mut parent_of_fine = Vec::with_capacity(coarse.n_triangles() * 4);
        for t in 0..coarse.n_triangles() {
            let [a, b, c] = coarse.triangles[t];
            let mab = mid(a, b, &mut vertices, &mut edge_ids, &mut mid_of_edge);
            let mbc = mid(b, c, &mut vertices, &mut edge_ids, &mut mid_of_edge);
            let mca = mid(c, a, &mut vertices, &mut edge_ids, &mut mid_of_edge);
            let base = fine_triangles.len();
            fine_triangles.push([a, mab, mca]);
            fine_triangles.push([b, mbc, mab]);
            fine_triangles.push([c, mca, mbc]);
            fine_triangles.push([mab, mbc, mca]);
            child_map.push([base, base + 1, base + 2, base + 3]);
            parent_of_fine.extend([t, t, t, t]);
            generation.extend([coarse.generation[t]; 4]);
        }
        // Fine boundary edges: halves of coarse boundary edges.
        let mut fine_boundary = Vec::with_capacity(coarse.boundary_edges.len() * 2);
        for &(u, v, label) in &coarse.boundary_edges {
            let key = (u.min(v), u.max(v));
            let e = edge_ids
                .get(&key)
                .ok_or_else(|| MeshError::NotConforming("boundary edge not in any triangle".into()))?;
            let m = mid_of_edge[*e];
            fine_boundary.push((u, m, label));
            fine_boundary.push((m, v, label));
        }
        let mut fine = CoarseMesh {
            vertices,
            triangles: fine_triangles,
            boundary_edges: fine_boundary,
            generation,
        };
        fine.seed_refinement_edges();
        fine.validate()?;
        let _ = ncv;

        // Fine edge table with adjacency and outward normals.
        let mut fedge_ids: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edges: Vec<FineEdge> = Vec::new();
        let mut fine_tri_edges: Vec<[usize; 3]> = Vec::with_capacity(fine.n_triangles());
        for t in 0..fine.n_triangles() {
            let tri = fine.triangles[t];
            let mut ids = [0usize; 3];
            for k in 0..3 {
                let (u, v) = (tri[k], tri[(k + 1) % 3]);
                let key = (u.min(v), u.max(v));
                let id = match fedge_ids.get(&key) {
                    Some(&id) => {
                        edges[id].tris[1] = Some(t);
                        id
                    }
                    None => {
                        let id = edges.len();
                        fedge_ids.insert(key, id);
                        let pu = fine.vertices[u];
                        let pv = fine.vertices[v];
                        let tangent = pv - pu;
                        let len = tangent.norm();
                        // outward normal of triangle t: rotate the CCW-ordered
                        // edge tangent clockwise
                        let normal_plus = Vec2::new(tangent.y, -tangent.x) / len;
                        edges.push(FineEdge {
                            v: (u, v),
                            tris: [Some(t), None],
                            label: None,
                            normal_plus,
                            length: len,
                        });
                        id
                    }
                };
                ids[k] = id;
            }
            fine_tri_edges.push(ids);
        }
        for &(u, v, label) in &fine.boundary_edges {
            let key = (u.min(v), u.max(v));
            let id = fedge_ids
                .get(&key)
                .ok_or_else(|| MeshError::NotConforming("labeled edge missing".into()))?;
            edges[*id].label = Some(label);
        }

        // Vertex classification; Dirichlet wins at corners.
        let mut vertex_class = vec![VertexClass::Interior; fine.n_vertices()];
        for e in &edges {
            if let Some(label) = e.label {
                for &v in &[e.v.0, e.v.1] {
                    let cur = vertex_class[v];
                    let next = match label {
                        BoundaryLabel::Dirichlet => VertexClass::Dirichlet,
                        BoundaryLabel::Contact => VertexClass::Contact,
                        BoundaryLabel::Neumann => VertexClass::Neumann,
                    };
                    vertex_class[v] = match (cur, next) {
                        (VertexClass::Dirichlet, _) => VertexClass::Dirichlet,
                        (_, VertexClass::Dirichlet) => VertexClass::Dirichlet,
                        (VertexClass::Contact, _) => VertexClass::Contact,
                        (_, c) => c,
                    };
                }
            }
        }

        Ok(TwoGridMesh {
            domain,
            coarse,
            fine,
            child_map,
            parent_of_fine,
            edges,
            fine_tri_edges,
            vertex_class,
        })
    }

    pub fn fine_vertex_count(&self) -> usize {
        self.fine.n_vertices()
    }

    pub fn vertices_of_class(&self, class: VertexClass) -> impl Iterator<Item = usize> + '_ {
        self.vertex_class
            .iter()
            .enumerate()
            .filter(move |&(_, &c)| c == class)
            .map(|(i, _)| i)
    }

    /// Fine-vertex -> incident fine triangles, in ascending triangle order.
    pub fn vertex_to_triangles(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.fine.n_vertices()];
        for (t, tri) in self.fine.triangles.iter().enumerate() {
            for &v in tri {
                adj[v].push(t);
            }
        }
        adj
    }

    /// One patch per fine vertex, with sides split by boundary label.
    pub fn node_patches(&self) -> Vec<NodePatch> {
        let adj = self.vertex_to_triangles();
        crate::parallel::map_indexed(self.fine.n_vertices(), |p| {
            let elements = adj[p].clone();
            let mut side_ids: Vec<usize> = elements
                .iter()
                .flat_map(|&t| self.fine_tri_edges[t].iter().copied())
                .collect();
            side_ids.sort_unstable();
            side_ids.dedup();
            let mut patch = NodePatch {
                vertex: p,
                elements,
                interior_sides: Vec::new(),
                contact_sides: Vec::new(),
                dirichlet_sides: Vec::new(),
                neumann_sides: Vec::new(),
                h_p: 0.0,
            };
            for e in side_ids {
                match self.edges[e].label {
                    None => patch.interior_sides.push(e),
                    Some(BoundaryLabel::Contact) => patch.contact_sides.push(e),
                    Some(BoundaryLabel::Dirichlet) => patch.dirichlet_sides.push(e),
                    Some(BoundaryLabel::Neumann) => patch.neumann_sides.push(e),
                }
            }
            let mut verts: Vec<usize> =
                patch.elements.iter().flat_map(|&t| self.fine.triangles[t]).collect();
            verts.sort_unstable();
            verts.dedup();
            for i in 0..verts.len() {
                for j in (i + 1)..verts.len() {
                    patch.h_p = patch
                        .h_p
                        .max(self.fine.vertices[verts[i]].dist(self.fine.vertices[verts[j]]));
                }
            }
            patch
        })
    }

    /// Contact sides of the fine mesh (edge ids).
    pub fn contact_edges(&self) -> Vec<usize> {
        (0..self.edges.len())
            .filter(|&e| self.edges[e].label == Some(BoundaryLabel::Contact))
            .collect()
    }
}

/// Build the initial two-grid mesh: triangulate the polygon by ear clipping,
/// seed refinement edges with the longest edge, then bisect uniformly until
/// every coarse element has diameter at most `target_h`.
pub fn build_initial(domain: &DomainSpec, target_h: f64) -> Result<TwoGridMesh, MeshError> {
    domain.validate()?;
    if !(target_h > 0.0) {
        return Err(MeshError::InvalidDomain("target_h must be positive".into()));
    }
    let tri_indices = ear_clip(&domain.polygon)?;
    let n = domain.polygon.len();
    let boundary_edges: Vec<(usize, usize, BoundaryLabel)> =
        (0..n).map(|i| (i, (i + 1) % n, domain.labels[i])).collect();
    let mut coarse = CoarseMesh {
        vertices: domain.polygon.clone(),
        triangles: tri_indices,
        boundary_edges,
        generation: vec![0; 0],
    };
    coarse.generation = vec![0; coarse.n_triangles()];
    coarse.seed_refinement_edges();
    coarse.validate()?;
    loop {
        let marked: Vec<usize> =
            (0..coarse.n_triangles()).filter(|&t| coarse.diameter(t) > target_h).collect();
        if marked.is_empty() {
            break;
        }
        coarse = coarse.refine(&marked);
    }
    TwoGridMesh::from_coarse(coarse, Some(domain.clone()))
}

/// Bisect the marked coarse triangles (with conformity closure) and rebuild
/// the fine mesh as the midpoint refinement of the result.
pub fn bisect_coarse(mesh: &TwoGridMesh, marked: &[usize]) -> Result<TwoGridMesh, MeshError> {
    if marked.is_empty() {
        return Ok(mesh.clone());
    }
    let coarse = mesh.coarse.refine(marked);
    TwoGridMesh::from_coarse(coarse, mesh.domain.clone())
}

fn ear_clip(polygon: &[Vec2]) -> Result<Vec<[usize; 3]>, MeshError> {
    let n = polygon.len();
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut triangles = Vec::with_capacity(n - 2);
    let mut guard = 0usize;
    while remaining.len() > 3 {
        let m = remaining.len();
        let mut clipped = false;
        for k in 0..m {
            let (ip, i, inext) =
                (remaining[(k + m - 1) % m], remaining[k], remaining[(k + 1) % m]);
            let (a, b, c) = (polygon[ip], polygon[i], polygon[inext]);
            if signed_area2(a, b, c) <= 1e-14 {
                continue; // reflex or degenerate corner
            }
            let ear_ok = remaining.iter().all(|&j| {
                j == ip || j == i || j == inext || !contains_point(polygon[j], a, b, c, -1e-12)
            });
            if ear_ok {
                triangles.push([ip, i, inext]);
                remaining.remove(k);
                clipped = true;
                break;
            }
        }
        if !clipped {
            return Err(MeshError::InvalidDomain("ear clipping failed".into()));
        }
        guard += 1;
        if guard > 4 * n {
            return Err(MeshError::InvalidDomain("ear clipping did not terminate".into()));
        }
    }
    triangles.push([remaining[0], remaining[1], remaining[2]]);
    Ok(triangles)
}

/// Plain-text mesh format: header `nv nt nbe`, vertex lines `x y`, triangle
/// lines `i j k`, boundary edge lines `i j label`. Floats are written with
/// Rust's shortest round-trip formatting, so export -> import -> export is
/// bit-exact.
pub fn export_text(mesh: &CoarseMesh) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "{} {} {}\n",
        mesh.n_vertices(),
        mesh.n_triangles(),
        mesh.boundary_edges.len()
    ));
    for v in &mesh.vertices {
        s.push_str(&format!("{} {}\n", v.x, v.y));
    }
    for t in &mesh.triangles {
        s.push_str(&format!("{} {} {}\n", t[0], t[1], t[2]));
    }
    for &(u, v, label) in &mesh.boundary_edges {
        s.push_str(&format!("{} {} {}\n", u, v, label.to_tag()));
    }
    s
}

pub fn import_text(text: &str) -> Result<CoarseMesh, MeshError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| MeshError::Parse("empty file".into()))?;
    let parts: Vec<usize> = header
        .split_whitespace()
        .map(|w| w.parse().map_err(|_| MeshError::Parse(format!("bad header: {header}"))))
        .collect::<Result<_, _>>()?;
    if parts.len() != 3 {
        return Err(MeshError::Parse("header must be `nv nt nbe`".into()));
    }
    let (nv, nt, nbe) = (parts[0], parts[1], parts[2]);
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let line = lines.next().ok_or_else(|| MeshError::Parse("missing vertex line".into()))?;
        let xy: Vec<f64> = line
            .split_whitespace()
            .map(|w| w.parse().map_err(|_| MeshError::Parse(format!("bad vertex: {line}"))))
            .collect::<Result<_, _>>()?;
        if xy.len() != 2 {
            return Err(MeshError::Parse(format!("bad vertex: {line}")));
        }
        vertices.push(Vec2::new(xy[0], xy[1]));
    }
    let mut triangles = Vec::with_capacity(nt);
    for _ in 0..nt {
        let line = lines.next().ok_or_else(|| MeshError::Parse("missing triangle line".into()))?;
        let ijk: Vec<usize> = line
            .split_whitespace()
            .map(|w| w.parse().map_err(|_| MeshError::Parse(format!("bad triangle: {line}"))))
            .collect::<Result<_, _>>()?;
        if ijk.len() != 3 {
            return Err(MeshError::Parse(format!("bad triangle: {line}")));
        }
        triangles.push([ijk[0], ijk[1], ijk[2]]);
    }
    let mut boundary_edges = Vec::with_capacity(nbe);
    for _ in 0..nbe {
        let line = lines.next().ok_or_else(|| MeshError::Parse("missing boundary line".into()))?;
        let uvl: Vec<usize> = line
            .split_whitespace()
            .map(|w| w.parse().map_err(|_| MeshError::Parse(format!("bad boundary: {line}"))))
            .collect::<Result<_, _>>()?;
        if uvl.len() != 3 {
            return Err(MeshError::Parse(format!("bad boundary: {line}")));
        }
        let label = BoundaryLabel::from_tag(uvl[2] as u32)
            .ok_or_else(|| MeshError::Parse(format!("unknown label {}", uvl[2])))?;
        boundary_edges.push((uvl[0], uvl[1], label));
    }
    let generation = vec![0; triangles.len()];
    let mesh = CoarseMesh { vertices, triangles, boundary_edges, generation };
    mesh.validate()?;
    Ok(mesh)
}

/// Uniform-bucket point locator over the fine mesh.
pub struct PointLocator<'a> {
    mesh: &'a CoarseMesh,
    min: Vec2,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

impl<'a> PointLocator<'a> {
    pub fn new(mesh: &'a CoarseMesh) -> Self {
        let mut min = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut max = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &mesh.vertices {
            min.x = min.x.min(v.x);
            min.y = min.y.min(v.y);
            max.x = max.x.max(v.x);
            max.y = max.y.max(v.y);
        }
        let cell = mesh.max_diameter().max(1e-12);
        let nx = (((max.x - min.x) / cell).ceil() as usize).max(1);
        let ny = (((max.y - min.y) / cell).ceil() as usize).max(1);
        let mut buckets = vec![Vec::new(); nx * ny];
        let clampi = |v: f64, n: usize| (v.max(0.0) as usize).min(n - 1);
        for t in 0..mesh.n_triangles() {
            let [a, b, c] = mesh.coords(t);
            let (x0, x1) = (a.x.min(b.x).min(c.x), a.x.max(b.x).max(c.x));
            let (y0, y1) = (a.y.min(b.y).min(c.y), a.y.max(b.y).max(c.y));
            let i0 = clampi((x0 - min.x) / cell, nx);
            let i1 = clampi((x1 - min.x) / cell, nx);
            let j0 = clampi((y0 - min.y) / cell, ny);
            let j1 = clampi((y1 - min.y) / cell, ny);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    buckets[j * nx + i].push(t);
                }
            }
        }
        PointLocator { mesh, min, cell, nx, ny, buckets }
    }

    pub fn locate(&self, p: Vec2) -> Result<usize, MeshError> {
        let i = (((p.x - self.min.x) / self.cell).floor().max(0.0) as usize).min(self.nx - 1);
        let j = (((p.y - self.min.y) / self.cell).floor().max(0.0) as usize).min(self.ny - 1);
        for &t in &self.buckets[j * self.nx + i] {
            let [a, b, c] = self.mesh.coords(t);
            if contains_point(p, a, b, c, 1e-10) {
                return Ok(t);
            }
        }
        // Tolerance fallback: nearest triangle by worst barycentric defect.
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for t in 0..self.mesh.n_triangles() {
            let [a, b, c] = self.mesh.coords(t);
            let l = crate::geom::barycentric(p, a, b, c);
            let worst = l.iter().fold(f64::INFINITY, |acc, &x| acc.min(x));
            if worst > best.0 {
                best = (worst, t);
            }
        }
        if best.0 > -1e-8 {
            Ok(best.1)
        } else {
            Err(MeshError::LocationFailure { point: (p.x, p.y) })
        }
    }
}

/// Unit square domain with the bottom side labeled `bottom` and the rest
/// labeled `rest`.
pub fn unit_square_domain(bottom: BoundaryLabel, rest: BoundaryLabel) -> DomainSpec {
    DomainSpec {
        polygon: vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(0.0, 1.0),
        ],
        labels: vec![bottom, rest, rest, rest],
    }
}

/// L-shaped domain (-1,1)^2 minus the closed quadrant [0,1]x[-1,0], with all
/// eight unit segments labeled `label`.
pub fn lshape_domain(label: BoundaryLabel) -> DomainSpec {
    DomainSpec {
        polygon: vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(0.0, 1.0),
            Vec2::new(-1.0, 1.0),
            Vec2::new(-1.0, 0.0),
            Vec2::new(-1.0, -1.0),
            Vec2::new(0.0, -1.0),
        ],
        labels: vec![label; 8],
    }
}

/// Evaluate the three P1 hats of fine triangle `t` at `p`.
pub fn p1_basis_at(mesh: &CoarseMesh, t: usize, p: Vec2) -> [f64; 3] {
    let [a, b, c] = mesh.coords(t);
    crate::geom::barycentric(p, a, b, c)
}

/// Constant P1 gradients on fine triangle `t`.
pub fn p1_gradients_of(mesh: &CoarseMesh, t: usize) -> [Vec2; 3] {
    let [a, b, c] = mesh.coords(t);
    p1_gradients(a, b, c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(target_h: f64) -> TwoGridMesh {
        build_initial(
            &unit_square_domain(BoundaryLabel::Dirichlet, BoundaryLabel::Contact),
            target_h,
        )
        .unwrap()
    }

    #[test]
    fn initial_square_two_triangles() {
        let mesh = square(2.0);
        assert_eq!(mesh.coarse.n_triangles(), 2);
        assert_eq!(mesh.fine.n_triangles(), 8);
        assert!((mesh.coarse.total_area() - 1.0).abs() < 1e-14);
        assert!((mesh.fine.total_area() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn square_vertex_sets_partition() {
        let mesh = square(0.5);
        let mut counts = [0usize; 4];
        for &c in &mesh.vertex_class {
            counts[match c {
                VertexClass::Interior => 0,
                VertexClass::Dirichlet => 1,
                VertexClass::Contact => 2,
                VertexClass::Neumann => 3,
            }] += 1;
        }
        assert_eq!(counts.iter().sum::<usize>(), mesh.fine.n_vertices());
        assert_eq!(counts[3], 0);
        // Bottom corners are Dirichlet.
        for (i, v) in mesh.fine.vertices.iter().enumerate() {
            if (v.y - 0.0).abs() < 1e-14 {
                assert_eq!(mesh.vertex_class[i], VertexClass::Dirichlet, "vertex {i}");
            } else if (v.x * (1.0 - v.x)).abs() < 1e-14 || (1.0 - v.y).abs() < 1e-14 {
                assert_eq!(mesh.vertex_class[i], VertexClass::Contact, "vertex {i}");
            } else {
                assert_eq!(mesh.vertex_class[i], VertexClass::Interior, "vertex {i}");
            }
        }
    }

    #[test]
    fn lshape_all_contact() {
        let domain = lshape_domain(BoundaryLabel::Contact);
        assert_eq!(domain.labels.len(), 8);
        let mesh = build_initial(&domain, 0.8).unwrap();
        assert_eq!(mesh.vertices_of_class(VertexClass::Dirichlet).count(), 0);
        assert!((mesh.coarse.total_area() - 3.0).abs() < 1e-12);
        assert!(mesh.coarse.min_angle() > 5.0_f64.to_radians());
    }

    #[test]
    fn bowtie_rejected() {
        let poly = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(0.0, 1.0),
        ];
        let got = DomainSpec::new(poly, vec![BoundaryLabel::Contact; 4]);
        assert!(matches!(got, Err(MeshError::NonSimplePolygon) | Err(MeshError::InvalidDomain(_))));
    }

    #[test]
    fn refine_empty_marking_unchanged() {
        let mesh = square(2.0);
        let refined = bisect_coarse(&mesh, &[]).unwrap();
        assert_eq!(refined.coarse.n_triangles(), mesh.coarse.n_triangles());
        assert_eq!(refined.fine.n_triangles(), mesh.fine.n_triangles());
    }

    #[test]
    fn refine_single_marked_triangle() {
        let mesh = square(2.0);
        let initial_min_angle = mesh.coarse.min_angle();
        let refined = bisect_coarse(&mesh, &[0]).unwrap();
        assert!(refined.coarse.n_triangles() >= 3);
        assert!(refined.coarse.min_angle() >= initial_min_angle / 2.0 - 1e-12);
        refined.coarse.validate().unwrap();
    }

    #[test]
    fn full_marking_three_times_gives_128() {
        let mut mesh = square(2.0);
        for _ in 0..3 {
            let all: Vec<usize> = (0..mesh.coarse.n_triangles()).collect();
            mesh = bisect_coarse(&mesh, &all).unwrap();
        }
        // marking all edges of every triangle bisects each twice per sweep
        assert_eq!(mesh.coarse.n_triangles(), 128);
        assert!((mesh.coarse.total_area() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shape_regularity_over_ten_refinements() {
        let mut mesh = square(2.0);
        let bound = mesh.coarse.min_angle() / 2.0;
        let mut rng = 0usize;
        for _ in 0..10 {
            // deterministic pseudo-random single marks
            rng = (rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407))
                % mesh.coarse.n_triangles().max(1);
            mesh = bisect_coarse(&mesh, &[rng]).unwrap();
            assert!(mesh.coarse.min_angle() >= bound - 1e-12);
            assert!((mesh.coarse.total_area() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_grid_children_areas_sum_to_parent() {
        let mesh = square(0.5);
        for (t, children) in mesh.child_map.iter().enumerate() {
            let parent = mesh.coarse.area(t);
            let sum: f64 = children.iter().map(|&c| mesh.fine.area(c)).sum();
            assert!((sum - parent).abs() <= 1e-14 * parent.abs().max(1.0));
        }
    }

    #[test]
    fn patches_classify_sides() {
        let mesh = square(0.5);
        let patches = mesh.node_patches();
        let adj = mesh.vertex_to_triangles();
        for patch in &patches {
            assert!(patch.h_p > 0.0);
            assert_eq!(patch.elements, adj[patch.vertex]);
            match mesh.vertex_class[patch.vertex] {
                VertexClass::Interior => {
                    // no boundary side of the patch ring contains the node
                    for &e in patch.contact_sides.iter().chain(&patch.dirichlet_sides) {
                        let (a, b) = mesh.edges[e].v;
                        assert!(a != patch.vertex && b != patch.vertex);
                    }
                    let v = mesh.fine.vertices[patch.vertex];
                    if v.dist(Vec2::new(0.5, 0.5)) < 0.2 {
                        // a deep interior node touches no boundary at all
                        assert!(patch.contact_sides.is_empty());
                        assert!(patch.dirichlet_sides.is_empty());
                    }
                }
                VertexClass::Contact => {
                    let v = mesh.fine.vertices[patch.vertex];
                    let on_corner = (v.x == 0.0 || v.x == 1.0) && (v.y == 0.0 || v.y == 1.0);
                    if !on_corner {
                        // interior contact node: exactly two incident contact sides
                        let touching = patch
                            .contact_sides
                            .iter()
                            .filter(|&&e| {
                                mesh.edges[e].v.0 == patch.vertex || mesh.edges[e].v.1 == patch.vertex
                            })
                            .count();
                        assert_eq!(touching, 2, "vertex {}", patch.vertex);
                    }
                }
                _ => {}
            }
        }
        // A Dirichlet-contact transition vertex has both side kinds nonempty:
        // bottom corners of the square qualify.
        let corner = mesh
            .fine
            .vertices
            .iter()
            .position(|v| v.x == 0.0 && v.y == 0.0)
            .unwrap();
        let patch = &patches[corner];
        assert!(!patch.dirichlet_sides.is_empty());
        assert!(!patch.contact_sides.is_empty());
    }

    #[test]
    fn interior_patch_sides_shared_or_separating() {
        let mesh = square(0.5);
        let patches = mesh.node_patches();
        for patch in &patches {
            for &e in &patch.interior_sides {
                let edge = &mesh.edges[e];
                let inside = edge
                    .tris
                    .iter()
                    .filter(|t| t.map_or(false, |t| patch.elements.contains(&t)))
                    .count();
                assert!(inside == 1 || inside == 2);
            }
        }
    }

    #[test]
    fn export_import_roundtrip_bit_exact() {
        let mut mesh = square(0.7);
        mesh = bisect_coarse(&mesh, &[0, 2]).unwrap();
        let text = export_text(&mesh.coarse);
        let back = import_text(&text).unwrap();
        let text2 = export_text(&back);
        assert_eq!(text, text2);
        assert_eq!(back.vertices, mesh.coarse.vertices);
        assert_eq!(back.triangles, mesh.coarse.triangles);
    }

    #[test]
    fn locator_finds_points() {
        let mesh = square(0.5);
        let loc = PointLocator::new(&mesh.fine);
        let t = loc.locate(Vec2::new(0.3, 0.7)).unwrap();
        let [a, b, c] = mesh.fine.coords(t);
        assert!(contains_point(Vec2::new(0.3, 0.7), a, b, c, 1e-9));
        assert!(loc.locate(Vec2::new(5.0, 5.0)).is_err());
    }
}
