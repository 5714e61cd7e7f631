//! Mesh generation, hex-to-mixed-element splitting, side connectivity and
//! serialization.
//!
//! Meshes are fully periodic boxes. Element lists are kept sorted along the
//! Hilbert curve; every mesh-producing operation re-establishes that order.

mod connectivity;
mod generate;
mod io;
mod split;

pub use connectivity::build_side_connectivity;
pub use generate::{generate_box_mesh, generate_box_mesh_level};
pub use io::{read_mesh, write_mesh, write_sidecar};
pub use split::{mixed_box_preset, split_selected, split_to_mixed, SplitTemplate};

use crate::sfc::{BoundingBox, SfcIndex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("invalid mesh dimensions ({0}, {1}, {2})")]
    InvalidDims(usize, usize, usize),
    #[error("element {0} is not a hexahedron and cannot be split")]
    NonHexSplit(usize),
    #[error("unmatched interior face of element {elem} (local face {face})")]
    UnmatchedFace { elem: usize, face: usize },
    #[error("face shared by more than two elements (nodes {0:?})")]
    OvermatchedFace(Vec<usize>),
    #[error("split selection index {0} out of range")]
    SelectionOutOfRange(usize),
    #[error("mesh file parse error at byte {offset}: {msg}")]
    Parse { offset: u64, msg: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Sfc(#[from] crate::sfc::SfcError),
}

/// The four supported element shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum ElementType {
    Hex = 0,
    Tet = 1,
    Prism = 2,
    Pyramid = 3,
}

impl ElementType {
    pub const ALL: [ElementType; 4] = [
        ElementType::Hex,
        ElementType::Tet,
        ElementType::Prism,
        ElementType::Pyramid,
    ];

    /// Number of geometric corner nodes.
    pub fn node_count(self) -> usize {
        match self {
            ElementType::Hex => 8,
            ElementType::Tet => 4,
            ElementType::Prism => 6,
            ElementType::Pyramid => 5,
        }
    }

    /// Non-hexahedral types advance modal degrees of freedom in time.
    pub fn is_modal(self) -> bool {
        self != ElementType::Hex
    }

    /// Volume of the reference element.
    pub fn reference_volume(self) -> f64 {
        match self {
            ElementType::Hex => 8.0,          // [-1,1]^3
            ElementType::Tet => 1.0 / 6.0,    // unit simplex
            ElementType::Prism => 0.5,        // unit triangle x [0,1]
            ElementType::Pyramid => 4.0 / 3.0, // [-1,1]^2 base, apex (0,0,1)
        }
    }

    /// Local faces as corner-index lists, in a fixed order.
    ///
    /// For hexes the order is (-x, +x, -y, +y, -z, +z) with the canonical
    /// corner numbering (0..3 bottom counterclockwise, 4..7 top).
    pub fn faces(self) -> &'static [&'static [usize]] {
        match self {
            ElementType::Hex => &[
                &[0, 3, 7, 4],
                &[1, 2, 6, 5],
                &[0, 1, 5, 4],
                &[3, 2, 6, 7],
                &[0, 1, 2, 3],
                &[4, 5, 6, 7],
            ],
            ElementType::Tet => &[&[0, 1, 2], &[0, 1, 3], &[0, 2, 3], &[1, 2, 3]],
            ElementType::Prism => &[
                &[0, 1, 2],
                &[3, 4, 5],
                &[0, 1, 4, 3],
                &[1, 2, 5, 4],
                &[2, 0, 3, 5],
            ],
            ElementType::Pyramid => &[
                &[0, 1, 2, 3],
                &[0, 1, 4],
                &[1, 2, 4],
                &[2, 3, 4],
                &[3, 0, 4],
            ],
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(ElementType::Hex),
            1 => Some(ElementType::Tet),
            2 => Some(ElementType::Prism),
            3 => Some(ElementType::Pyramid),
            _ => None,
        }
    }
}

/// A single mesh element.
#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub element_type: ElementType,
    pub node_ids: Vec<usize>,
    pub barycenter: [f64; 3],
    /// Constant (affine) Jacobian: physical volume / reference volume.
    pub jacobian: f64,
    pub sfc_index: SfcIndex,
}

impl Element {
    pub fn volume(&self) -> f64 {
        self.jacobian * self.element_type.reference_volume()
    }
}

/// A matched face between one or two elements.
///
/// `node_ids` is the face as seen from the master element. Across periodic
/// boundaries the slave sees a translated copy, recorded in
/// `slave_node_ids`; for ordinary interior sides both frames coincide and
/// `slave_node_ids` is `None`. A triangular side may be a sub-face of a
/// neighboring quad face (split-hex next to an unsplit hex); the quad owner
/// then participates in two sides referencing the same local face.
#[derive(Debug, Clone, PartialEq)]
pub struct Side {
    pub node_ids: Vec<usize>,
    pub master_elem: usize,
    pub master_face: usize,
    pub slave_elem: Option<usize>,
    pub slave_face: Option<usize>,
    pub slave_node_ids: Option<Vec<usize>>,
}

impl Side {
    pub fn is_boundary(&self) -> bool {
        self.slave_elem.is_none()
    }

    pub fn neighbor_elems(&self) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(self.master_elem).chain(self.slave_elem)
    }
}

/// Element mesh with periodic side connectivity.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub nodes: Vec<[f64; 3]>,
    /// Sorted ascending by `sfc_index`, ties by construction order.
    pub elements: Vec<Element>,
    pub sides: Vec<Side>,
    /// Domain box (periodic in all directions).
    pub domain: BoundingBox,
    /// Hilbert quantization level used for element ordering.
    pub sort_level: u32,
}

impl Mesh {
    /// Element counts by type, in `ElementType::ALL` order.
    pub fn counts_by_type(&self) -> [usize; 4] {
        let mut counts = [0usize; 4];
        for e in &self.elements {
            counts[e.element_type as usize] += 1;
        }
        counts
    }

    pub fn n_modal_elems(&self) -> usize {
        self.elements
            .iter()
            .filter(|e| e.element_type.is_modal())
            .count()
    }

    /// Map side index -> master element index (the `SideToElem` table).
    pub fn side_to_elem(&self) -> Vec<usize> {
        self.sides.iter().map(|s| s.master_elem).collect()
    }

    pub fn total_volume(&self) -> f64 {
        self.elements.iter().map(Element::volume).sum()
    }

    /// True if elements are sorted ascending by SFC index.
    pub fn is_sfc_sorted(&self) -> bool {
        self.elements
            .windows(2)
            .all(|w| w[0].sfc_index <= w[1].sfc_index)
    }

    pub fn node_coords(&self, ids: &[usize]) -> Vec<[f64; 3]> {
        ids.iter().map(|&i| self.nodes[i]).collect()
    }
}

/// Signed volume of a tetrahedron, times six.
fn tet6(a: [f64; 3], b: [f64; 3], c: [f64; 3], d: [f64; 3]) -> f64 {
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let w = [d[0] - a[0], d[1] - a[1], d[2] - a[2]];
    u[0] * (v[1] * w[2] - v[2] * w[1]) - u[1] * (v[0] * w[2] - v[2] * w[0])
        + u[2] * (v[0] * w[1] - v[1] * w[0])
}

/// Volume of an element given its corner coordinates, by tetrahedral
/// decomposition (valid for the affine elements used here).
pub fn element_volume(ty: ElementType, corners: &[[f64; 3]]) -> f64 {
    let tets: &[[usize; 4]] = match ty {
        ElementType::Tet => &[[0, 1, 2, 3]],
        ElementType::Pyramid => &[[0, 1, 2, 4], [0, 2, 3, 4]],
        ElementType::Prism => &[[0, 1, 2, 3], [1, 2, 3, 4], [2, 3, 4, 5]],
        // Kuhn decomposition around the 0-6 diagonal.
        ElementType::Hex => &[
            [0, 1, 2, 6],
            [0, 1, 5, 6],
            [0, 3, 2, 6],
            [0, 3, 7, 6],
            [0, 4, 5, 6],
            [0, 4, 7, 6],
        ],
    };
    tets.iter()
        .map(|t| tet6(corners[t[0]], corners[t[1]], corners[t[2]], corners[t[3]]).abs() / 6.0)
        .sum()
}

/// Mean of the corner coordinates. Used as the SFC sorting point.
pub fn vertex_mean(corners: &[[f64; 3]]) -> [f64; 3] {
    let mut c = [0.0; 3];
    for p in corners {
        for d in 0..3 {
            c[d] += p[d];
        }
    }
    let n = corners.len() as f64;
    [c[0] / n, c[1] / n, c[2] / n]
}
