//! Nested uniform Cartesian meshes of the unit hypercube and their vertex patches.
//!
//! Level `ℓ` has `m = 2^(ℓ+1)` cells per direction. Cells and vertices are
//! addressed by integer multi-indices, numbered lexicographically with the
//! first coordinate running fastest.

use crate::error::{Error, Result};

/// Multi-index padded to three entries; unused trailing entries are zero.
pub type Index = [usize; 3];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MeshHierarchy {
    dim: usize,
    max_level: usize,
}

/// Shorthand for [`MeshHierarchy::new`].
pub fn build_hierarchy(dim: usize, max_level: usize) -> Result<MeshHierarchy> {
    MeshHierarchy::new(dim, max_level)
}

impl MeshHierarchy {
    pub fn new(dim: usize, max_level: usize) -> Result<Self> {
        if !(2..=3).contains(&dim) {
            return Err(Error::invalid(format!("dimension must be 2 or 3, got {dim}")));
        }
        if max_level > 12 {
            return Err(Error::invalid(format!("level {max_level} is out of range")));
        }
        Ok(Self { dim, max_level })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_level(&self) -> usize {
        self.max_level
    }

    pub fn n_levels(&self) -> usize {
        self.max_level + 1
    }

    pub fn level(&self, level: usize) -> Result<Level> {
        if level > self.max_level {
            return Err(Error::invalid(format!(
                "level {level} exceeds the finest level {}",
                self.max_level
            )));
        }
        Ok(Level::new(self.dim, level))
    }

    pub fn cells_per_dir(&self, level: usize) -> usize {
        1 << (level + 1)
    }

    pub fn h(&self, level: usize) -> f64 {
        1.0 / self.cells_per_dir(level) as f64
    }
}

/// A single uniform mesh of the hierarchy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Level {
    pub dim: usize,
    pub level: usize,
    /// Cells per direction.
    pub m: usize,
}

impl Level {
    pub fn new(dim: usize, level: usize) -> Self {
        Self {
            dim,
            level,
            m: 1 << (level + 1),
        }
    }

    pub fn h(&self) -> f64 {
        1.0 / self.m as f64
    }

    pub fn n_cells(&self) -> usize {
        self.m.pow(self.dim as u32)
    }

    pub fn cell_index(&self, c: Index) -> usize {
        (0..self.dim).rev().fold(0, |acc, j| acc * self.m + c[j])
    }

    pub fn cell_coords(&self, mut idx: usize) -> Index {
        let mut c = [0; 3];
        for cj in c.iter_mut().take(self.dim) {
            *cj = idx % self.m;
            idx /= self.m;
        }
        c
    }

    /// Lower-left corner of a cell.
    pub fn cell_origin(&self, c: Index) -> [f64; 3] {
        let h = self.h();
        [c[0] as f64 * h, c[1] as f64 * h, c[2] as f64 * h]
    }

    /// Neighbor across the face with normal `dir`, `None` at the boundary.
    pub fn neighbor(&self, c: Index, dir: usize, upper: bool) -> Option<Index> {
        let mut n = c;
        if upper {
            if c[dir] + 1 >= self.m {
                return None;
            }
            n[dir] += 1;
        } else {
            if c[dir] == 0 {
                return None;
            }
            n[dir] -= 1;
        }
        Some(n)
    }

    /// Children of a cell on the next finer level.
    pub fn children(&self, c: Index) -> Vec<Index> {
        (0..1usize << self.dim)
            .map(|bits| {
                let mut child = [0; 3];
                for j in 0..self.dim {
                    child[j] = 2 * c[j] + ((bits >> j) & 1);
                }
                child
            })
            .collect()
    }

    /// Interior faces with normal `dir`, as the lower cell of each pair.
    /// Every interior face appears exactly once.
    pub fn interior_faces(&self, dir: usize) -> impl Iterator<Item = Index> + '_ {
        (0..self.n_cells())
            .map(|i| self.cell_coords(i))
            .filter(move |c| c[dir] + 1 < self.m)
    }

    /// Cells touching the lower (`upper = false`) or upper boundary face in `dir`.
    pub fn boundary_cells(&self, dir: usize, upper: bool) -> impl Iterator<Item = Index> + '_ {
        let target = if upper { self.m - 1 } else { 0 };
        (0..self.n_cells())
            .map(|i| self.cell_coords(i))
            .filter(move |c| c[dir] == target)
    }
}

/// The `2^d` cells around one interior vertex.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VertexPatch {
    pub level: usize,
    /// Vertex lattice coordinates, each in `1..m`.
    pub vertex: Index,
    /// Cell indices, lexicographic within the patch.
    pub cells: Vec<usize>,
    pub color: usize,
}

impl VertexPatch {
    /// Lowest cell of the patch.
    pub fn origin(&self) -> Index {
        let mut o = self.vertex;
        for v in o.iter_mut() {
            *v = v.saturating_sub(1);
        }
        o
    }
}

/// Patch coloring scheme.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Coloring {
    /// Vertex coordinate parity, `2^d` colors. Same-color patches are
    /// cell-disjoint but may share faces.
    #[default]
    Parity,
    /// Vertex coordinates modulo three, `3^d` colors. Same-color patches are
    /// separated by a full cell layer, so their stencils never touch.
    Separated,
}

impl Coloring {
    fn modulus(self) -> usize {
        match self {
            Coloring::Parity => 2,
            Coloring::Separated => 3,
        }
    }

    pub fn n_colors(self, dim: usize) -> usize {
        self.modulus().pow(dim as u32)
    }

    pub fn color_of(self, vertex: Index, dim: usize) -> usize {
        let r = self.modulus();
        (0..dim).rev().fold(0, |acc, j| acc * r + vertex[j] % r)
    }
}

/// One patch per interior vertex, lexicographic in the vertex coordinates,
/// colored by [`Coloring::Parity`].
pub fn enumerate_patches(level: &Level) -> Vec<VertexPatch> {
    enumerate_patches_with(level, Coloring::Parity)
}

pub fn enumerate_patches_with(level: &Level, coloring: Coloring) -> Vec<VertexPatch> {
    let d = level.dim;
    let inner = level.m - 1;
    let count = inner.pow(d as u32);
    let mut out = Vec::with_capacity(count);
    for p in 0..count {
        let mut vertex = [0; 3];
        let mut rest = p;
        for v in vertex.iter_mut().take(d) {
            *v = rest % inner + 1;
            rest /= inner;
        }
        let cells = (0..1usize << d)
            .map(|bits| {
                let mut c = [0; 3];
                for j in 0..d {
                    c[j] = vertex[j] - 1 + ((bits >> j) & 1);
                }
                level.cell_index(c)
            })
            .collect();
        out.push(VertexPatch {
            level: level.level,
            vertex,
            cells,
            color: coloring.color_of(vertex, d),
        });
    }
    out
}

/// Groups patch indices by their stored color. Returns `n_colors` groups, some
/// possibly empty, each sorted ascending.
pub fn color_patches(patches: &[VertexPatch], n_colors: usize) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); n_colors];
    for (i, p) in patches.iter().enumerate() {
        groups[p.color].push(i);
    }
    groups
}
