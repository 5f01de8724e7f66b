//! Line-oriented text format for polytopal meshes.
//!
//! ```text
//! # optional comments anywhere
//! polymesh 1
//! vertices N
//! x y            (N lines)
//! cells M
//! i j k ...      (M ccw vertex loops)
//! subdomains M   (optional; one integer per cell)
//! cellpoints M   (optional; x y per cell)
//! ```
//!
//! Vertex coordinates are written in shortest round-trip form, so a
//! write/read cycle reproduces them bit-identically.

use super::Mesh;
use crate::geometry::Vec2;
use crate::{Error, Result};
use std::path::Path;

pub fn write_mesh_string(mesh: &Mesh) -> String {
    let mut out = String::new();
    out.push_str("polymesh 1\n");
    out.push_str(&format!("vertices {}\n", mesh.vertices.len()));
    for v in &mesh.vertices {
        out.push_str(&format!("{} {}\n", v.x, v.y));
    }
    out.push_str(&format!("cells {}\n", mesh.cells.len()));
    for c in &mesh.cells {
        let words: Vec<String> = c.verts.iter().map(|v| v.to_string()).collect();
        out.push_str(&words.join(" "));
        out.push('\n');
    }
    if mesh.n_subdomains > 1 {
        out.push_str(&format!("subdomains {}\n", mesh.cells.len()));
        for c in &mesh.cells {
            out.push_str(&format!("{}\n", c.subdomain));
        }
    }
    // Cell points are only written when some cell overrides its centroid.
    let overridden = mesh.cells.iter().enumerate().any(|(ci, c)| {
        let centroid = crate::geometry::polygon_centroid(&mesh.cell_vertices(ci));
        c.point != centroid
    });
    if overridden {
        out.push_str(&format!("cellpoints {}\n", mesh.cells.len()));
        for c in &mesh.cells {
            out.push_str(&format!("{} {}\n", c.point.x, c.point.y));
        }
    }
    out
}

pub fn write_mesh(mesh: &Mesh, path: &Path) -> Result<()> {
    std::fs::write(path, write_mesh_string(mesh))?;
    Ok(())
}

struct Lines<'a> {
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next_content(&mut self) -> Option<(usize, &'a str)> {
        for (no, raw) in self.iter.by_ref() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if !line.is_empty() {
                return Some((no + 1, line));
            }
        }
        None
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::MeshParse { line, msg: msg.into() }
}

pub fn read_mesh_str(text: &str) -> Result<Mesh> {
    let mut lines = Lines { iter: text.lines().enumerate() };

    let (no, header) = lines
        .next_content()
        .ok_or_else(|| parse_err(0, "empty file"))?;
    if header != "polymesh 1" {
        return Err(parse_err(no, format!("expected `polymesh 1`, got `{header}`")));
    }

    let (no, decl) = lines
        .next_content()
        .ok_or_else(|| parse_err(no, "missing `vertices N`"))?;
    let n_verts = parse_count(no, decl, "vertices")?;
    let mut vertices = Vec::with_capacity(n_verts);
    for _ in 0..n_verts {
        let (no, line) = lines
            .next_content()
            .ok_or_else(|| parse_err(no, "unexpected end of vertex list"))?;
        let mut it = line.split_whitespace();
        let x = parse_f64(no, it.next())?;
        let y = parse_f64(no, it.next())?;
        if it.next().is_some() {
            return Err(parse_err(no, "trailing tokens after vertex coordinates"));
        }
        vertices.push(Vec2::new(x, y));
    }

    let (no, decl) = lines
        .next_content()
        .ok_or_else(|| parse_err(no, "missing `cells M`"))?;
    let n_cells = parse_count(no, decl, "cells")?;
    let mut loops = Vec::with_capacity(n_cells);
    let mut last = no;
    for _ in 0..n_cells {
        let (no, line) = lines
            .next_content()
            .ok_or_else(|| parse_err(last, "unexpected end of cell list"))?;
        last = no;
        let idx: std::result::Result<Vec<usize>, _> =
            line.split_whitespace().map(str::parse::<usize>).collect();
        let idx = idx.map_err(|e| parse_err(no, format!("bad vertex index: {e}")))?;
        if idx.len() < 3 {
            return Err(parse_err(no, format!("degenerate cell: {} vertices", idx.len())));
        }
        loops.push(idx);
    }

    let mut subdomains = None;
    let mut cell_points = None;
    while let Some((no, decl)) = lines.next_content() {
        if let Some(rest) = decl.strip_prefix("subdomains ") {
            let m: usize = rest
                .trim()
                .parse()
                .map_err(|e| parse_err(no, format!("bad count: {e}")))?;
            if m != n_cells {
                return Err(parse_err(no, "subdomain count does not match cell count"));
            }
            let mut subs = Vec::with_capacity(m);
            let mut last = no;
            for _ in 0..m {
                let (no, line) = lines
                    .next_content()
                    .ok_or_else(|| parse_err(last, "unexpected end of subdomain list"))?;
                last = no;
                subs.push(
                    line.parse::<usize>()
                        .map_err(|e| parse_err(no, format!("bad subdomain tag: {e}")))?,
                );
            }
            subdomains = Some(subs);
        } else if let Some(rest) = decl.strip_prefix("cellpoints ") {
            let m: usize = rest
                .trim()
                .parse()
                .map_err(|e| parse_err(no, format!("bad count: {e}")))?;
            if m != n_cells {
                return Err(parse_err(no, "cell point count does not match cell count"));
            }
            let mut pts = Vec::with_capacity(m);
            let mut last = no;
            for _ in 0..m {
                let (no, line) = lines
                    .next_content()
                    .ok_or_else(|| parse_err(last, "unexpected end of cell point list"))?;
                last = no;
                let mut it = line.split_whitespace();
                let x = parse_f64(no, it.next())?;
                let y = parse_f64(no, it.next())?;
                pts.push(Vec2::new(x, y));
            }
            cell_points = Some(pts);
        } else {
            return Err(parse_err(no, format!("unknown section `{decl}`")));
        }
    }

    Mesh::from_cells(vertices, loops, subdomains, cell_points)
}

pub fn read_mesh(path: &Path) -> Result<Mesh> {
    let text = std::fs::read_to_string(path)?;
    read_mesh_str(&text)
}

fn parse_count(line: usize, decl: &str, keyword: &str) -> Result<usize> {
    let rest = decl
        .strip_prefix(keyword)
        .ok_or_else(|| parse_err(line, format!("expected `{keyword} N`, got `{decl}`")))?;
    rest.trim()
        .parse()
        .map_err(|e| parse_err(line, format!("bad count: {e}")))
}

fn parse_f64(line: usize, tok: Option<&str>) -> Result<f64> {
    let tok = tok.ok_or_else(|| parse_err(line, "missing coordinate"))?;
    tok.parse()
        .map_err(|e| parse_err(line, format!("bad number `{tok}`: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec2;

    #[test]
    fn round_trip_bit_identical() {
        let m = Mesh::build_cartesian(3, 2, Vec2::zeros(), Vec2::new(1.0, 1.0), 1)
            .unwrap()
            .perturb(0.2, 13)
            .unwrap();
        let text = write_mesh_string(&m);
        let back = read_mesh_str(&text).unwrap();
        assert_eq!(m.vertices, back.vertices);
        assert_eq!(m.cells.len(), back.cells.len());
        for (a, b) in m.cells.iter().zip(back.cells.iter()) {
            assert_eq!(a.verts, b.verts);
            assert_eq!(a.subdomain, b.subdomain);
        }
    }

    #[test]
    fn rejects_degenerate_cell() {
        let text = "polymesh 1\nvertices 3\n0 0\n1 0\n0 1\ncells 1\n0 1\n";
        let err = read_mesh_str(text).unwrap_err();
        assert!(err.to_string().contains("degenerate cell"), "{err}");
    }

    #[test]
    fn rejects_orientation_mismatch() {
        // Second cell traverses the shared edge 1->3 in the same direction
        // as the first (i.e., it is given clockwise).
        let text = "polymesh 1\nvertices 4\n0 0\n1 0\n1 1\n0 1\n\
                    cells 2\n0 1 3\n1 3 2\n";
        let err = read_mesh_str(text).unwrap_err();
        assert!(err.to_string().contains("orientation"), "{err}");
    }

    #[test]
    fn rejects_nonmanifold() {
        let text = "polymesh 1\nvertices 5\n0 0\n1 0\n0 1\n1 1\n2 0\n\
                    cells 3\n0 1 2\n1 3 2\n1 2 4\n";
        let err = read_mesh_str(text).unwrap_err();
        assert!(err.to_string().contains("non-manifold"), "{err}");
    }

    #[test]
    fn comments_and_cellpoints() {
        let text = "# a comment\npolymesh 1\nvertices 4\n0 0\n2 0\n2 2\n0 2\n\
                    cells 1\n0 1 2 3\ncellpoints 1\n1.5 0.5\n";
        let m = read_mesh_str(text).unwrap();
        assert_eq!(m.cells[0].point, Vec2::new(1.5, 0.5));
        // Overridden cell points survive a write/read cycle.
        let back = read_mesh_str(&write_mesh_string(&m)).unwrap();
        assert_eq!(back.cells[0].point, Vec2::new(1.5, 0.5));
    }
}
