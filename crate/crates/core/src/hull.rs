//! Visual hull by voxel carving, surfaced with marching cubes.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::camera::{project, CameraPose, Intrinsics};
use crate::error::{invalid, Result};
use crate::geometry::TriangleMesh;
use crate::image::SilhouetteMask;
use crate::mc_tables::TRIANGLE_TABLE;
use crate::render::NEAR_PLANE;
use crate::Vec3;

/// Axis-aligned voxel lattice with one occupancy bit per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    res: [usize; 3],
    min: Vec3,
    max: Vec3,
    occupancy: Vec<bool>,
}

impl VoxelGrid {
    pub fn new(res: [usize; 3], min: Vec3, max: Vec3) -> Result<Self> {
        if res.iter().any(|&r| r < 2) {
            return invalid(format!("grid resolution must be at least 2 per axis, got {res:?}"));
        }
        if (0..3).any(|a| !(min[a] < max[a]) || !min[a].is_finite() || !max[a].is_finite()) {
            return invalid("grid bounds must satisfy min < max");
        }
        Ok(Self { res, min, max, occupancy: vec![false; res[0] * res[1] * res[2]] })
    }

    pub fn cube(res: usize, half_extent: f64) -> Result<Self> {
        Self::new([res; 3], Vec3::repeat(-half_extent), Vec3::repeat(half_extent))
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.res
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        (self.min, self.max)
    }

    pub fn voxel_size(&self) -> Vec3 {
        (self.max - self.min).component_div(&Vec3::new(self.res[0] as f64, self.res[1] as f64, self.res[2] as f64))
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.res[1] + j) * self.res[0] + i
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.occupancy[self.index(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, value: bool) {
        let idx = self.index(i, j, k);
        self.occupancy[idx] = value;
    }

    pub fn center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let h = self.voxel_size();
        self.min + Vec3::new((i as f64 + 0.5) * h.x, (j as f64 + 0.5) * h.y, (k as f64 + 0.5) * h.z)
    }

    pub fn occupancy(&self) -> &[bool] {
        &self.occupancy
    }

    pub fn occupied_count(&self) -> usize {
        self.occupancy.iter().filter(|&&o| o).count()
    }

    pub fn occupied_volume(&self) -> f64 {
        let h = self.voxel_size();
        self.occupied_count() as f64 * h.x * h.y * h.z
    }

    pub fn is_empty(&self) -> bool {
        !self.occupancy.iter().any(|&o| o)
    }

    /// Occupancy packed eight voxels per byte, least significant bit first,
    /// x fastest.
    pub fn to_bits(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.occupancy.len().div_ceil(8)];
        for (i, &o) in self.occupancy.iter().enumerate() {
            if o {
                out[i / 8] |= 1 << (i % 8);
            }
        }
        out
    }

    pub fn sidecar_text(&self) -> String {
        format!(
            "res {} {} {}\nmin {} {} {}\nmax {} {} {}\n",
            self.res[0], self.res[1], self.res[2], self.min.x, self.min.y, self.min.z, self.max.x, self.max.y, self.max.z
        )
    }

    /// Writes the packed bits to `path` and the dimensions to `path.txt`.
    pub fn save_raw(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::File::create(path)?.write_all(&self.to_bits())?;
        let mut sidecar = path.as_os_str().to_owned();
        sidecar.push(".txt");
        std::fs::write(sidecar, self.sidecar_text())?;
        Ok(())
    }
}

fn inside_silhouette(mask: &SilhouetteMask, pose: &CameraPose, k: &Intrinsics, p: &Vec3) -> bool {
    let proj = project(pose, k, p);
    if !(proj.depth > NEAR_PLANE) || !(proj.u >= 0.0 && proj.v >= 0.0) {
        return false;
    }
    let (x, y) = (proj.u.floor() as usize, proj.v.floor() as usize);
    x < mask.width && y < mask.height && mask.at(x, y) >= 0.5
}

/// Keeps every voxel whose centre projects into all silhouettes.
pub fn carve(
    views: &[(SilhouetteMask, CameraPose)],
    k: &Intrinsics,
    res: [usize; 3],
    min: Vec3,
    max: Vec3,
) -> Result<VoxelGrid> {
    if views.is_empty() {
        return invalid("carving needs at least one view");
    }
    let mut grid = VoxelGrid::new(res, min, max)?;
    let slice = res[0] * res[1];
    let template = grid.clone();
    grid.occupancy.par_chunks_mut(slice).enumerate().for_each(|(kz, cells)| {
        for j in 0..res[1] {
            for i in 0..res[0] {
                let c = template.center(i, j, kz);
                cells[j * res[0] + i] = views.iter().all(|(m, p)| inside_silhouette(m, p, k, &c));
            }
        }
    });
    Ok(grid)
}

const CORNERS: [[usize; 3]; 8] =
    [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]];

const EDGES: [[usize; 2]; 12] =
    [[0, 1], [1, 2], [2, 3], [3, 0], [4, 5], [5, 6], [6, 7], [7, 4], [0, 4], [1, 5], [2, 6], [3, 7]];

/// Marching-cubes surface of the occupancy at level 0.5, sampled at voxel
/// centres. The grid is padded with an empty layer so the result is closed.
pub fn grid_to_mesh(grid: &VoxelGrid) -> Result<TriangleMesh> {
    if grid.is_empty() {
        return invalid("cannot surface an empty voxel grid");
    }
    let [nx, ny, nz] = grid.res;
    // lattice points in padded coordinates run over 0..=n+1
    let value = |a: usize, b: usize, c: usize| -> f64 {
        if a == 0 || b == 0 || c == 0 || a > nx || b > ny || c > nz {
            0.0
        } else {
            f64::from(u8::from(grid.get(a - 1, b - 1, c - 1)))
        }
    };
    let h = grid.voxel_size();
    let point = |p: [usize; 3]| -> Vec3 {
        grid.min + Vec3::new((p[0] as f64 - 0.5) * h.x, (p[1] as f64 - 0.5) * h.y, (p[2] as f64 - 0.5) * h.z)
    };
    let (px, py) = (nx + 2, ny + 2);
    let lattice_index = |p: [usize; 3]| (p[2] * py + p[1]) * px + p[0];

    let mut vertices = Vec::new();
    let mut lookup: HashMap<(usize, usize), usize> = HashMap::new();
    let mut faces = Vec::new();
    for c in 0..=nz {
        for b in 0..=ny {
            for a in 0..=nx {
                let corner = |n: usize| [a + CORNERS[n][0], b + CORNERS[n][1], c + CORNERS[n][2]];
                let vals: [f64; 8] = std::array::from_fn(|n| {
                    let p = corner(n);
                    value(p[0], p[1], p[2])
                });
                let case = (0..8).fold(0usize, |acc, n| acc | (usize::from(vals[n] < 0.5) << n));
                if case == 0 || case == 255 {
                    continue;
                }
                let mut edge_vertex = |e: usize| -> usize {
                    let (p, q) = (corner(EDGES[e][0]), corner(EDGES[e][1]));
                    let lo = if lattice_index(p) < lattice_index(q) { p } else { q };
                    let axis = (0..3).find(|&d| p[d] != q[d]).unwrap_or(0);
                    *lookup.entry((lattice_index(lo), axis)).or_insert_with(|| {
                        let (vp, vq) = (vals[EDGES[e][0]], vals[EDGES[e][1]]);
                        let t = (0.5 - vp) / (vq - vp);
                        vertices.push(point(p) + (point(q) - point(p)) * t);
                        vertices.len() - 1
                    })
                };
                for tri in TRIANGLE_TABLE[case].chunks_exact(3) {
                    if tri[0] < 0 {
                        break;
                    }
                    let ids = [edge_vertex(tri[0] as usize), edge_vertex(tri[1] as usize), edge_vertex(tri[2] as usize)];
                    faces.push(ids);
                }
            }
        }
    }
    TriangleMesh::new(vertices, faces)
}
