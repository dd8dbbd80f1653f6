//! Triangle meshes, template spheres, surface sampling and Wavefront OBJ IO.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::Vec3;

/// An undirected mesh edge with the faces incident to it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    /// Endpoints, smaller index first.
    pub vertices: [usize; 2],
    pub faces: Vec<usize>,
}

#[derive(Debug, Default, PartialEq, Eq)]
struct Topology {
    neighbors: Vec<Vec<usize>>,
    edges: Vec<Edge>,
}

impl Topology {
    fn build(n_vertices: usize, faces: &[[usize; 3]]) -> Self {
        let mut neighbors = vec![Vec::new(); n_vertices];
        let mut edge_index: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edges: Vec<Edge> = Vec::new();
        for (fi, f) in faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                let idx = *edge_index.entry(key).or_insert_with(|| {
                    edges.push(Edge { vertices: [key.0, key.1], faces: Vec::new() });
                    edges.len() - 1
                });
                edges[idx].faces.push(fi);
            }
        }
        for e in &edges {
            let [a, b] = e.vertices;
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for n in &mut neighbors {
            n.sort_unstable();
        }
        Self { neighbors, edges }
    }
}

/// Triangle mesh with counter-clockwise (outward) winding.
///
/// Vertex positions may be edited freely through [`TriangleMesh::vertices_mut`];
/// the adjacency caches depend only on the faces and are shared between clones.
#[derive(Debug, Clone)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    topology: Arc<Topology>,
}

impl PartialEq for TriangleMesh {
    fn eq(&self, other: &Self) -> bool {
        self.vertices == other.vertices && self.faces == other.faces
    }
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        for (i, v) in vertices.iter().enumerate() {
            if !v.iter().all(|c| c.is_finite()) {
                return invalid(format!("vertex {i} has non-finite coordinates"));
            }
        }
        for (i, f) in faces.iter().enumerate() {
            if f.iter().any(|&v| v >= vertices.len()) {
                return invalid(format!("face {i} references a vertex out of range"));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return invalid(format!("face {i} is degenerate"));
            }
        }
        let topology = Arc::new(Topology::build(vertices.len(), &faces));
        Ok(Self { vertices, faces, topology })
    }

    pub fn empty() -> Self {
        Self { vertices: Vec::new(), faces: Vec::new(), topology: Arc::default() }
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn vertices_mut(&mut self) -> &mut [Vec3] {
        &mut self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    /// Sorted one-ring neighbours of vertex `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.topology.neighbors[i]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.topology.edges
    }

    /// True when every edge is shared by exactly two faces.
    pub fn is_closed(&self) -> bool {
        !self.faces.is_empty() && self.edges().iter().all(|e| e.faces.len() == 2)
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edges().len() as i64 + self.faces.len() as i64
    }

    pub fn corners(&self, face: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Unnormalized normal (length = twice the face area).
    pub fn face_normal(&self, face: usize) -> Vec3 {
        let [a, b, c] = self.corners(face);
        (b - a).cross(&(c - a))
    }

    pub fn face_area(&self, face: usize) -> f64 {
        0.5 * self.face_normal(face).norm()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Signed enclosed volume (positive for closed outward-wound meshes).
    pub fn signed_volume(&self) -> f64 {
        (0..self.faces.len())
            .map(|f| {
                let [a, b, c] = self.corners(f);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    pub fn centroid(&self) -> Vec3 {
        if self.vertices.is_empty() {
            return Vec3::zeros();
        }
        self.vertices.iter().sum::<Vec3>() / self.vertices.len() as f64
    }

    pub fn bounding_box(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), v| (lo.inf(v), hi.sup(v))))
    }

    /// Copy with every vertex mapped through `f`; topology is shared.
    pub fn map_vertices(&self, mut f: impl FnMut(&Vec3) -> Vec3) -> Self {
        Self {
            vertices: self.vertices.iter().map(&mut f).collect(),
            faces: self.faces.clone(),
            topology: Arc::clone(&self.topology),
        }
    }

    pub fn translated(&self, offset: Vec3) -> Self {
        self.map_vertices(|v| v + offset)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        self.map_vertices(|v| v * factor)
    }
}

/// Finite point set sampled from a surface.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return invalid("point cloud contains non-finite coordinates");
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Icosphere of the given radius centred at the origin.
///
/// Each subdivision splits every triangle in four and re-projects the new
/// midpoints onto the sphere.
pub fn make_icosphere(subdivisions: u32, radius: f64) -> Result<TriangleMesh> {
    if subdivisions > 6 {
        return invalid(format!("subdivisions must be in [0, 6], got {subdivisions}"));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return invalid(format!("radius must be positive, got {radius}"));
    }
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ]
    .iter()
    .map(|p| Vec3::from(*p).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<Vec3>| {
            *midpoint.entry((a.min(b), a.max(b))).or_insert_with(|| {
                vertices.push(((vertices[a] + vertices[b]) * 0.5).normalize());
                vertices.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in &faces {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    for v in &mut vertices {
        *v *= radius;
    }
    TriangleMesh::new(vertices, faces)
}

/// Axis-aligned cube with the given half extent, 12 outward-wound triangles.
pub fn make_cube(half_extent: f64) -> Result<TriangleMesh> {
    if !(half_extent > 0.0) {
        return invalid("cube half extent must be positive");
    }
    let h = half_extent;
    let vertices = vec![
        Vec3::new(-h, -h, -h),
        Vec3::new(h, -h, -h),
        Vec3::new(h, h, -h),
        Vec3::new(-h, h, -h),
        Vec3::new(-h, -h, h),
        Vec3::new(h, -h, h),
        Vec3::new(h, h, h),
        Vec3::new(-h, h, h),
    ];
    let faces = vec![
        [0, 3, 2],
        [0, 2, 1],
        [4, 5, 6],
        [4, 6, 7],
        [0, 1, 5],
        [0, 5, 4],
        [3, 7, 6],
        [3, 6, 2],
        [0, 4, 7],
        [0, 7, 3],
        [1, 2, 6],
        [1, 6, 5],
    ];
    TriangleMesh::new(vertices, faces)
}

/// Smooth star-shaped blob: an icosphere whose radius is modulated by a few
/// seeded low-frequency sinusoids of the direction.
pub fn make_blob(subdivisions: u32, radius: f64, seed: u64) -> Result<TriangleMesh> {
    let sphere = make_icosphere(subdivisions, 1.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<(Vec3, f64, f64, f64)> = (0..3)
        .map(|_| {
            let axis = loop {
                let v = Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                let n = v.norm();
                if n > 0.1 && n <= 1.0 {
                    break v / n;
                }
            };
            let amplitude = rng.random_range(0.06..0.12);
            let frequency = rng.random_range(1.0..2.2);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            (axis, amplitude, frequency, phase)
        })
        .collect();
    Ok(sphere.map_vertices(|d| {
        let r = 1.0
            + waves
                .iter()
                .map(|(axis, a, w, p)| a * (w * axis.dot(d) * std::f64::consts::PI + p).sin())
                .sum::<f64>();
        d * (radius * r)
    }))
}

/// Draws `n` points uniformly by area from the mesh surface.
pub fn sample_surface(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<PointCloud> {
    if mesh.is_empty() {
        return invalid("cannot sample an empty mesh");
    }
    if n == 0 {
        return invalid("sample count must be at least 1");
    }
    let mut cumulative = Vec::with_capacity(mesh.faces().len());
    let mut total = 0.0;
    for f in 0..mesh.faces().len() {
        total += mesh.face_area(f);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return invalid("mesh has zero surface area");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n)
        .map(|_| {
            let target = rng.random::<f64>() * total;
            let face = cumulative.partition_point(|&c| c <= target).min(cumulative.len() - 1);
            let [a, b, c] = mesh.corners(face);
            let r1 = rng.random::<f64>().sqrt();
            let r2 = rng.random::<f64>();
            a * (1.0 - r1) + b * (r1 * (1.0 - r2)) + c * (r1 * r2)
        })
        .collect();
    PointCloud::new(points)
}

/// Parses Wavefront OBJ text. Only `v` and `f` records are interpreted;
/// polygons are fan-triangulated.
pub fn parse_obj(text: &str) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let err = |message: String| Error::Parse { line, message };
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = content.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let coords: Vec<f64> = tokens
                    .map(|t| t.parse::<f64>().map_err(|_| err(format!("bad coordinate `{t}`"))))
                    .collect::<Result<_>>()?;
                if !(3..=4).contains(&coords.len()) {
                    return Err(err(format!("vertex needs 3 coordinates, got {}", coords.len())));
                }
                vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = tokens
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or("");
                        let i: i64 =
                            head.parse().map_err(|_| err(format!("bad face index `{t}`")))?;
                        match i {
                            0 => Err(err("face index 0 is invalid (OBJ indices are 1-based)".into())),
                            i if i > 0 && (i as usize) <= vertices.len() => Ok(i as usize - 1),
                            i if i < 0 && (i.unsigned_abs() as usize) <= vertices.len() => {
                                Ok(vertices.len() - i.unsigned_abs() as usize)
                            }
                            i => Err(err(format!("face index {i} out of range"))),
                        }
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(err(format!("face needs at least 3 vertices, got {}", idx.len())));
                }
                for k in 1..idx.len() - 1 {
                    let tri = [idx[0], idx[k], idx[k + 1]];
                    if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                        return Err(err("degenerate face".into()));
                    }
                    faces.push(tri);
                }
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, faces)
}

pub fn load_obj(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    parse_obj(&fs::read_to_string(path)?)
}

/// OBJ text containing only `v` and `f` records. Coordinates use the
/// shortest representation that parses back to the same `f64`.
pub fn format_obj(mesh: &TriangleMesh) -> String {
    let mut out = String::with_capacity(32 * (mesh.vertices().len() + mesh.faces().len()));
    for v in mesh.vertices() {
        let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
    }
    for f in mesh.faces() {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

pub fn save_obj(mesh: &TriangleMesh, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_obj(mesh))?;
    Ok(())
}
