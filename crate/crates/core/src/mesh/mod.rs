//! 2D polytopal meshes compliant with a subdomain partition.
//!
//! Cells are simple polygons given as counter-clockwise vertex loops; faces
//! are the straight edges shared between cells (or lying on the boundary).
//! Every face stores a fixed orientation: the first incident cell `T1` is
//! the one with the lower cell index, which pins the sign of all jump
//! operators downstream.

mod io;

pub use io::{read_mesh, read_mesh_str, write_mesh, write_mesh_string};

use crate::geometry::{polygon_centroid, polygon_diameter, polygon_signed_area, Vec2};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A mesh face (straight segment) with its fixed orientation.
#[derive(Debug, Clone)]
pub struct Face {
    /// Endpoint vertex indices, in the order traversed by `cells.0`.
    pub verts: [usize; 2],
    /// Incident cells: (T1, T2). `None` marks a boundary face.
    pub cells: (usize, Option<usize>),
    /// Length |F|.
    pub measure: f64,
    /// Face diameter h_F (equals |F| for a segment).
    pub diameter: f64,
    /// Face point x_F (midpoint).
    pub point: Vec2,
}

impl Face {
    pub fn is_boundary(&self) -> bool {
        self.cells.1.is_none()
    }

    /// Unit tangent in the stored vertex order; used as the global face frame.
    pub fn tangent(&self, mesh: &Mesh) -> Vec2 {
        (mesh.vertices[self.verts[1]] - mesh.vertices[self.verts[0]]).normalize()
    }
}

/// Side data of a face as seen from one incident cell.
#[derive(Debug, Clone, Copy)]
pub struct CellFace {
    /// Global face index.
    pub face: usize,
    /// Outward unit normal n_TF.
    pub normal: Vec2,
    /// Orthogonal distance from x_T to the face's supporting line.
    pub d: f64,
}

#[derive(Debug, Clone)]
pub struct Cell {
    /// Counter-clockwise vertex loop.
    pub verts: Vec<usize>,
    /// Incident faces with per-cell geometry, in loop order.
    pub faces: Vec<CellFace>,
    /// Area |T|.
    pub measure: f64,
    /// Diameter h_T.
    pub diameter: f64,
    /// Cell point x_T (centroid unless overridden).
    pub point: Vec2,
    /// Subdomain tag.
    pub subdomain: usize,
}

/// Regularity quantities of a mesh, exact maxima over cells/faces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularityMetrics {
    /// Max cell diameter.
    pub h: f64,
    /// max_T ( max_F h_T/d_TF + card(F_T) ).
    pub theta: f64,
    /// max over internal faces of d_TF/d_T'F + d_T'F/d_TF.
    pub eta_jump: f64,
    /// Max number of faces per cell.
    pub max_faces_per_cell: usize,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: Vec<Vec2>,
    pub faces: Vec<Face>,
    pub cells: Vec<Cell>,
    /// Indices of internal faces.
    pub internal_faces: Vec<usize>,
    /// Indices of boundary faces.
    pub boundary_faces: Vec<usize>,
    pub n_subdomains: usize,
}

impl Mesh {
    /// Assemble a mesh from vertices, ccw cell loops and optional per-cell
    /// subdomains / cell points, deriving faces and all geometric data.
    /// Validates every invariant before returning.
    pub fn from_cells(
        vertices: Vec<Vec2>,
        cell_loops: Vec<Vec<usize>>,
        subdomains: Option<Vec<usize>>,
        cell_points: Option<Vec<Vec2>>,
    ) -> Result<Mesh> {
        let n_verts = vertices.len();
        if let Some(subs) = &subdomains {
            if subs.len() != cell_loops.len() {
                return Err(Error::InvalidInput(
                    "subdomain tag count does not match cell count".into(),
                ));
            }
        }
        if let Some(pts) = &cell_points {
            if pts.len() != cell_loops.len() {
                return Err(Error::InvalidInput(
                    "cell point count does not match cell count".into(),
                ));
            }
        }

        // Derive faces: key by sorted endpoint pair; first traversal fixes T1.
        let mut face_index: std::collections::HashMap<(usize, usize), usize> =
            std::collections::HashMap::new();
        let mut faces: Vec<Face> = Vec::new();
        // Records (cell, face, forward) where forward = traversed v0 -> v1.
        let mut incidences: Vec<Vec<(usize, bool)>> = Vec::new();

        for (ci, loop_) in cell_loops.iter().enumerate() {
            if loop_.len() < 3 {
                return Err(Error::MeshValidation(format!(
                    "degenerate cell {ci}: {} vertices",
                    loop_.len()
                )));
            }
            for (pos, &v0) in loop_.iter().enumerate() {
                let v1 = loop_[(pos + 1) % loop_.len()];
                if v0 >= n_verts || v1 >= n_verts {
                    return Err(Error::MeshValidation(format!(
                        "cell {ci} references vertex out of range"
                    )));
                }
                if v0 == v1 {
                    return Err(Error::MeshValidation(format!(
                        "degenerate cell {ci}: repeated vertex {v0}"
                    )));
                }
                let key = (v0.min(v1), v0.max(v1));
                match face_index.get(&key) {
                    None => {
                        let fi = faces.len();
                        face_index.insert(key, fi);
                        let a = vertices[v0];
                        let b = vertices[v1];
                        let len = (b - a).norm();
                        faces.push(Face {
                            verts: [v0, v1],
                            cells: (ci, None),
                            measure: len,
                            diameter: len,
                            point: 0.5 * (a + b),
                        });
                        incidences.push(vec![(ci, true)]);
                    }
                    Some(&fi) => {
                        if incidences[fi].len() >= 2 {
                            return Err(Error::MeshValidation(format!(
                                "non-manifold connectivity: face ({},{}) shared by more than two cells",
                                key.0, key.1
                            )));
                        }
                        let forward = faces[fi].verts[0] == v0;
                        if forward {
                            // Both ccw loops must traverse a shared edge in
                            // opposite directions.
                            return Err(Error::MeshValidation(format!(
                                "orientation: cells {} and {} traverse face ({},{}) in the same direction",
                                faces[fi].cells.0, ci, key.0, key.1
                            )));
                        }
                        faces[fi].cells.1 = Some(ci);
                        incidences[fi].push((ci, false));
                    }
                }
            }
        }

        // Cell geometry.
        let mut cells: Vec<Cell> = Vec::with_capacity(cell_loops.len());
        for (ci, loop_) in cell_loops.iter().enumerate() {
            let pts: Vec<Vec2> = loop_.iter().map(|&v| vertices[v]).collect();
            let area = polygon_signed_area(&pts);
            if area <= 0.0 {
                return Err(Error::MeshValidation(format!(
                    "cell {ci} is not counter-clockwise or has nonpositive area {area:.3e}"
                )));
            }
            let point = match &cell_points {
                Some(p) => p[ci],
                None => polygon_centroid(&pts),
            };
            let mut cfaces = Vec::with_capacity(loop_.len());
            for (pos, &v0) in loop_.iter().enumerate() {
                let v1 = loop_[(pos + 1) % loop_.len()];
                let key = (v0.min(v1), v0.max(v1));
                let fi = face_index[&key];
                let edge = vertices[v1] - vertices[v0];
                // Outward normal of a ccw loop: rotate the edge by -90°.
                let normal = Vec2::new(edge.y, -edge.x).normalize();
                let d = (faces[fi].point - point).dot(&normal);
                cfaces.push(CellFace { face: fi, normal, d });
            }
            cells.push(Cell {
                verts: loop_.clone(),
                faces: cfaces,
                measure: area,
                diameter: polygon_diameter(&pts),
                point,
                subdomain: subdomains.as_ref().map_or(0, |s| s[ci]),
            });
        }

        let mut internal_faces = Vec::new();
        let mut boundary_faces = Vec::new();
        for (fi, f) in faces.iter().enumerate() {
            if f.is_boundary() {
                boundary_faces.push(fi);
            } else {
                internal_faces.push(fi);
            }
        }

        let n_subdomains = cells.iter().map(|c| c.subdomain).max().unwrap_or(0) + 1;
        let mesh = Mesh {
            vertices,
            faces,
            cells,
            internal_faces,
            boundary_faces,
            n_subdomains,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    /// Check every mesh invariant; returns a diagnostic on the first failure.
    pub fn validate(&self) -> Result<()> {
        for (ci, cell) in self.cells.iter().enumerate() {
            let h = cell.diameter;
            let perim: f64 = cell.faces.iter().map(|cf| self.faces[cf.face].measure).sum();
            // Closed polygon: Σ |F| n_TF = 0.
            let mut closure = Vec2::zeros();
            // Σ d_TF |F| = 2 |T| in 2D.
            let mut pyramid = 0.0;
            for cf in &cell.faces {
                let f = &self.faces[cf.face];
                if cf.d <= 0.0 {
                    return Err(Error::MeshValidation(format!(
                        "cell {ci}, face {}: d_TF = {:.3e} <= 0 (cell point outside or on the face line)",
                        cf.face, cf.d
                    )));
                }
                closure += f.measure * cf.normal;
                pyramid += cf.d * f.measure;
                if f.cells.0 != ci && f.cells.1 != Some(ci) {
                    return Err(Error::MeshValidation(format!(
                        "face {} does not list cell {ci} as a neighbor",
                        cf.face
                    )));
                }
            }
            if closure.norm() > 1e-12 * h.max(perim) {
                return Err(Error::MeshValidation(format!(
                    "cell {ci}: face normals do not close (|Σ|F|n| = {:.3e})",
                    closure.norm()
                )));
            }
            if (pyramid - 2.0 * cell.measure).abs() > 1e-12 * 2.0 * cell.measure {
                return Err(Error::MeshValidation(format!(
                    "cell {ci}: Σ d_TF|F| = {pyramid:.16e} != 2|T| = {:.16e}",
                    2.0 * cell.measure
                )));
            }
        }
        // Internal faces: two incident cells with opposite normals.
        for &fi in &self.internal_faces {
            let f = &self.faces[fi];
            let (t1, t2) = (f.cells.0, f.cells.1.expect("internal face"));
            let n1 = self.cell_face(t1, fi).normal;
            let n2 = self.cell_face(t2, fi).normal;
            if (n1 + n2).norm() > 1e-12 {
                return Err(Error::MeshValidation(format!(
                    "face {fi}: incident normals are not opposite"
                )));
            }
        }
        Ok(())
    }

    /// The `CellFace` record of cell `ci` for global face `fi`.
    pub fn cell_face(&self, ci: usize, fi: usize) -> &CellFace {
        self.cells[ci]
            .faces
            .iter()
            .find(|cf| cf.face == fi)
            .expect("cell does not touch face")
    }

    /// Vertex coordinates of a cell, in loop order.
    pub fn cell_vertices(&self, ci: usize) -> Vec<Vec2> {
        self.cells[ci].verts.iter().map(|&v| self.vertices[v]).collect()
    }

    /// Exact maxima of the regularity quantities.
    pub fn regularity_metrics(&self) -> RegularityMetrics {
        let mut h: f64 = 0.0;
        let mut theta: f64 = 0.0;
        let mut max_faces = 0usize;
        for cell in &self.cells {
            h = h.max(cell.diameter);
            let worst = cell
                .faces
                .iter()
                .map(|cf| cell.diameter / cf.d)
                .fold(0.0_f64, f64::max);
            theta = theta.max(worst + cell.faces.len() as f64);
            max_faces = max_faces.max(cell.faces.len());
        }
        let mut eta_jump: f64 = 0.0;
        for &fi in &self.internal_faces {
            let f = &self.faces[fi];
            let d1 = self.cell_face(f.cells.0, fi).d;
            let d2 = self.cell_face(f.cells.1.unwrap(), fi).d;
            eta_jump = eta_jump.max(d1 / d2 + d2 / d1);
        }
        RegularityMetrics {
            h,
            theta,
            eta_jump,
            max_faces_per_cell: max_faces,
        }
    }

    /// Uniform rectangular mesh of an axis-aligned rectangle, with
    /// `n_subdomains_x` vertical strips of equal width as subdomains.
    pub fn build_cartesian(
        nx: usize,
        ny: usize,
        lower: Vec2,
        upper: Vec2,
        n_subdomains_x: usize,
    ) -> Result<Mesh> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidInput("nx and ny must be >= 1".into()));
        }
        if upper.x <= lower.x || upper.y <= lower.y {
            return Err(Error::InvalidInput("degenerate rectangle".into()));
        }
        if n_subdomains_x == 0 || !nx.is_multiple_of(n_subdomains_x) {
            return Err(Error::InvalidInput(format!(
                "subdomain count {n_subdomains_x} must divide nx = {nx}"
            )));
        }
        let dx = (upper.x - lower.x) / nx as f64;
        let dy = (upper.y - lower.y) / ny as f64;
        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push(Vec2::new(lower.x + i as f64 * dx, lower.y + j as f64 * dy));
            }
        }
        let vid = |i: usize, j: usize| j * (nx + 1) + i;
        let mut loops = Vec::with_capacity(nx * ny);
        let mut subs = Vec::with_capacity(nx * ny);
        let cells_per_strip = nx / n_subdomains_x;
        for j in 0..ny {
            for i in 0..nx {
                loops.push(vec![vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)]);
                subs.push(i / cells_per_strip);
            }
        }
        Mesh::from_cells(vertices, loops, Some(subs), None)
    }

    /// Displace interior vertices by a deterministic pseudo-random offset of
    /// at most `amplitude` times the smallest incident face length.
    ///
    /// Vertices on the domain boundary are kept fixed; vertices on a
    /// subdomain interface move only tangentially (along the interface
    /// line). The perturbed mesh is re-validated.
    pub fn perturb(&self, amplitude: f64, seed: u64) -> Result<Mesh> {
        if !(0.0..0.5).contains(&amplitude) {
            return Err(Error::InvalidInput(format!(
                "perturbation amplitude {amplitude} outside [0, 0.5)"
            )));
        }
        if amplitude == 0.0 {
            return Ok(self.clone());
        }

        #[derive(Clone, Copy, PartialEq)]
        enum Kind {
            Interior,
            Interface(f64), // tangent direction angle of the interface line
            Boundary,
        }

        let n = self.vertices.len();
        let mut kind = vec![Kind::Interior; n];
        let mut min_len = vec![f64::INFINITY; n];
        for f in &self.faces {
            for &v in &f.verts {
                min_len[v] = min_len[v].min(f.measure);
            }
            if f.is_boundary() {
                kind[f.verts[0]] = Kind::Boundary;
                kind[f.verts[1]] = Kind::Boundary;
            }
        }
        // Interface vertices: endpoints of internal faces whose two cells
        // carry different subdomain tags. They may slide along that face's
        // line only; if a vertex sits on two differently oriented interface
        // lines (or on the boundary) it stays fixed.
        for &fi in &self.internal_faces {
            let f = &self.faces[fi];
            let s1 = self.cells[f.cells.0].subdomain;
            let s2 = self.cells[f.cells.1.unwrap()].subdomain;
            if s1 == s2 {
                continue;
            }
            let t = f.tangent(self);
            let angle = t.y.atan2(t.x);
            for &v in &f.verts {
                kind[v] = match kind[v] {
                    Kind::Interior => Kind::Interface(angle),
                    Kind::Interface(a) if (a - angle).abs() < 1e-12 => Kind::Interface(a),
                    _ => Kind::Boundary,
                };
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vertices = self.vertices.clone();
        for v in 0..n {
            // Draw for every vertex so the stream does not depend on the
            // vertex classification.
            let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let r: f64 = rng.gen_range(0.0..1.0);
            let radius = amplitude * min_len[v] * r;
            match kind[v] {
                Kind::Boundary => {}
                Kind::Interior => {
                    vertices[v] += radius * Vec2::new(a.cos(), a.sin());
                }
                Kind::Interface(angle) => {
                    let t = Vec2::new(angle.cos(), angle.sin());
                    vertices[v] += radius * (a.cos()) * t;
                }
            }
        }

        let loops: Vec<Vec<usize>> = self.cells.iter().map(|c| c.verts.clone()).collect();
        let subs: Vec<usize> = self.cells.iter().map(|c| c.subdomain).collect();
        Mesh::from_cells(vertices, loops, Some(subs), None).map_err(|e| {
            Error::MeshValidation(format!("perturbation rejected: {e}"))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn one_cell_unit_square() {
        let m = Mesh::build_cartesian(1, 1, Vec2::zeros(), Vec2::new(1.0, 1.0), 1).unwrap();
        assert_eq!(m.cells.len(), 1);
        assert_eq!(m.faces.len(), 4);
        let c = &m.cells[0];
        assert_relative_eq!(c.measure, 1.0);
        assert_relative_eq!(c.diameter, 2f64.sqrt());
        let mut pyramid = 0.0;
        for cf in &c.faces {
            assert_relative_eq!(m.faces[cf.face].measure, 1.0);
            assert_relative_eq!(cf.d, 0.5);
            pyramid += cf.d * m.faces[cf.face].measure;
        }
        assert_relative_eq!(pyramid, 2.0 * c.measure);
    }

    #[test]
    fn two_cells_orientation() {
        let m = Mesh::build_cartesian(2, 1, Vec2::zeros(), Vec2::new(1.0, 1.0), 1).unwrap();
        assert_eq!(m.cells.len(), 2);
        assert_eq!(m.faces.len(), 7);
        assert_eq!(m.internal_faces.len(), 1);
        let f = &m.faces[m.internal_faces[0]];
        // T1/T2 fixed by ascending cell index.
        assert_eq!(f.cells.0, 0);
        assert_eq!(f.cells.1, Some(1));
    }

    #[test]
    fn strip_subdomains() {
        let m = Mesh::build_cartesian(4, 4, Vec2::zeros(), Vec2::new(1.0, 1.0), 2).unwrap();
        assert_eq!(m.cells.len(), 16);
        for c in &m.cells {
            assert_eq!(c.subdomain, usize::from(c.point.x >= 0.5));
        }
        assert_eq!(m.n_subdomains, 2);
    }

    #[test]
    fn metrics_one_cell() {
        let m = Mesh::build_cartesian(1, 1, Vec2::zeros(), Vec2::new(1.0, 1.0), 1).unwrap();
        let r = m.regularity_metrics();
        // theta = sqrt(2)/(1/2) + 4 = 2 sqrt(2) + 4.
        assert_relative_eq!(r.theta, 2.0 * 2f64.sqrt() + 4.0, max_relative = 1e-14);
        assert!(r.theta >= 3.0);
        assert_eq!(r.max_faces_per_cell, 4);
    }

    #[test]
    fn metrics_eta_symmetric_neighbors() {
        let m = Mesh::build_cartesian(2, 1, Vec2::zeros(), Vec2::new(1.0, 1.0), 1).unwrap();
        let r = m.regularity_metrics();
        assert_relative_eq!(r.eta_jump, 2.0, max_relative = 1e-14);
    }

    #[test]
    fn refinement_halves_h() {
        let a = Mesh::build_cartesian(4, 4, Vec2::zeros(), Vec2::new(1.0, 1.0), 1).unwrap();
        let b = Mesh::build_cartesian(8, 8, Vec2::zeros(), Vec2::new(1.0, 1.0), 1).unwrap();
        assert_eq!(b.regularity_metrics().h, 0.5 * a.regularity_metrics().h);
    }

    #[test]
    fn perturb_identity_at_zero_amplitude() {
        let m = Mesh::build_cartesian(4, 4, Vec2::zeros(), Vec2::new(1.0, 1.0), 1).unwrap();
        let p = m.perturb(0.0, 3).unwrap();
        assert_eq!(m.vertices, p.vertices);
    }

    #[test]
    fn perturb_deterministic() {
        let m = Mesh::build_cartesian(4, 4, Vec2::zeros(), Vec2::new(1.0, 1.0), 1).unwrap();
        let a = m.perturb(0.2, 7).unwrap();
        let b = m.perturb(0.2, 7).unwrap();
        assert_eq!(a.vertices, b.vertices);
        // Different seed moves differently.
        let c = m.perturb(0.2, 8).unwrap();
        assert_ne!(a.vertices, c.vertices);
    }

    #[test]
    fn perturb_validates_and_roughens() {
        let m = Mesh::build_cartesian(4, 4, Vec2::zeros(), Vec2::new(1.0, 1.0), 1).unwrap();
        let p = m.perturb(0.2, 7).unwrap();
        p.validate().unwrap();
        assert_eq!(p.cells.len(), m.cells.len());
        assert_eq!(p.faces.len(), m.faces.len());
        assert_eq!(p.vertices.len(), m.vertices.len());
        let (rm, rp) = (m.regularity_metrics(), p.regularity_metrics());
        assert!(rp.h >= rm.h);
        assert!(rp.theta >= rm.theta);
        assert!(rp.eta_jump >= rm.eta_jump);
        assert!(rp.max_faces_per_cell >= rm.max_faces_per_cell);
    }

    #[test]
    fn perturb_keeps_interface_line() {
        let m = Mesh::build_cartesian(4, 4, Vec2::zeros(), Vec2::new(1.0, 1.0), 2).unwrap();
        let p = m.perturb(0.3, 11).unwrap();
        for (v, (a, b)) in m.vertices.iter().zip(p.vertices.iter()).enumerate() {
            if (m.vertices[v].x - 0.5).abs() < 1e-14 {
                assert_eq!(a.x, b.x, "interface vertex {v} moved off the line");
            }
        }
        for (cm, cp) in m.cells.iter().zip(p.cells.iter()) {
            assert_eq!(cm.subdomain, cp.subdomain);
        }
    }

    #[test]
    fn boundary_vertices_fixed() {
        let m = Mesh::build_cartesian(3, 3, Vec2::zeros(), Vec2::new(1.0, 1.0), 1).unwrap();
        let p = m.perturb(0.25, 5).unwrap();
        for (i, v) in m.vertices.iter().enumerate() {
            let on_boundary = v.x.abs() < 1e-14
                || (v.x - 1.0).abs() < 1e-14
                || v.y.abs() < 1e-14
                || (v.y - 1.0).abs() < 1e-14;
            if on_boundary {
                assert_eq!(*v, p.vertices[i]);
            } else {
                assert_ne!(*v, p.vertices[i]);
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Mesh::build_cartesian(0, 1, Vec2::zeros(), Vec2::new(1.0, 1.0), 1).is_err());
        assert!(Mesh::build_cartesian(1, 1, Vec2::zeros(), Vec2::new(0.0, 1.0), 1).is_err());
        assert!(Mesh::build_cartesian(3, 3, Vec2::zeros(), Vec2::new(1.0, 1.0), 2).is_err());
        let m = Mesh::build_cartesian(2, 2, Vec2::zeros(), Vec2::new(1.0, 1.0), 1).unwrap();
        assert!(m.perturb(0.5, 0).is_err());
    }
}
