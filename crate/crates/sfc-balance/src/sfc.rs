//! 3D Hilbert space-filling-curve indexing and mesh-order generation.
//!
//! The curve variant is the Butz/Hamilton transposed-bits construction
//! (Skilling's formulation): coordinates are converted to the transposed
//! Gray-code representation and the index is read off by bit interleaving.
//! Only bijectivity and face-adjacency of consecutive cells matter for the
//! consumers in this crate; no bit-compatibility with any external tool is
//! claimed.

use thiserror::Error;

/// Default quantization depth for barycenter sorting (1024^3 lattice).
pub const DEFAULT_SORT_LEVEL: u32 = 10;

/// Maximum supported refinement level. 3 * 20 = 60 index bits fit in u64.
pub const MAX_LEVEL: u32 = 20;

#[derive(Debug, Error, PartialEq)]
pub enum SfcError {
    #[error("coordinate ({i}, {j}, {k}) out of range for level {level}")]
    CoordOutOfRange { i: u32, j: u32, k: u32, level: u32 },
    #[error("index {index} out of range for level {level}")]
    IndexOutOfRange { index: u64, level: u32 },
    #[error("level {0} outside supported range [1, 20]")]
    InvalidLevel(u32),
    #[error("barycenter ({x}, {y}, {z}) outside bounding box")]
    PointOutsideBox { x: f64, y: f64, z: f64 },
}

/// Lattice cell on the 2^level grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridCoord {
    pub i: u32,
    pub j: u32,
    pub k: u32,
    pub level: u32,
}

impl GridCoord {
    pub fn new(i: u32, j: u32, k: u32, level: u32) -> Result<Self, SfcError> {
        if level == 0 || level > MAX_LEVEL {
            return Err(SfcError::InvalidLevel(level));
        }
        let side = 1u32 << level;
        if i >= side || j >= side || k >= side {
            return Err(SfcError::CoordOutOfRange { i, j, k, level });
        }
        Ok(Self { i, j, k, level })
    }
}

/// Position along the Hilbert curve, in [0, 8^level).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SfcIndex(pub u64);

/// Axis-aligned bounding box used for barycenter quantization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl BoundingBox {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }

    /// Smallest box containing all points.
    pub fn containing(points: &[[f64; 3]]) -> Self {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for p in points {
            for d in 0..3 {
                min[d] = min[d].min(p[d]);
                max[d] = max[d].max(p[d]);
            }
        }
        Self { min, max }
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|d| p[d] >= self.min[d] && p[d] <= self.max[d])
    }
}

/// Hilbert index of a lattice cell.
pub fn hilbert_encode(coord: GridCoord) -> SfcIndex {
    let bits = coord.level;
    let mut x = [coord.i, coord.j, coord.k];
    axes_to_transpose(&mut x, bits);
    // Interleave: bit b of x[0], x[1], x[2] (msb first) form one curve octant.
    let mut index: u64 = 0;
    for b in (0..bits).rev() {
        for xi in &x {
            index = (index << 1) | u64::from((xi >> b) & 1);
        }
    }
    SfcIndex(index)
}

/// Lattice cell at a Hilbert index. Inverse of [`hilbert_encode`].
pub fn hilbert_decode(index: SfcIndex, level: u32) -> Result<GridCoord, SfcError> {
    if level == 0 || level > MAX_LEVEL {
        return Err(SfcError::InvalidLevel(level));
    }
    if index.0 >= 1u64 << (3 * level) {
        return Err(SfcError::IndexOutOfRange { index: index.0, level });
    }
    let mut x = [0u32; 3];
    for b in 0..(3 * level) {
        let bit = (index.0 >> (3 * level - 1 - b)) & 1;
        x[(b % 3) as usize] = (x[(b % 3) as usize] << 1) | bit as u32;
    }
    transpose_to_axes(&mut x, level);
    GridCoord::new(x[0], x[1], x[2], level)
}

// Skilling, "Programming the Hilbert curve" (AIP Conf. Proc. 707), n = 3.
fn axes_to_transpose(x: &mut [u32; 3], bits: u32) {
    let m = 1u32 << (bits - 1);
    // Inverse undo
    let mut q = m;
    while q > 1 {
        let p = q - 1;
        for i in 0..3 {
            if x[i] & q != 0 {
                x[0] ^= p;
            } else {
                let t = (x[0] ^ x[i]) & p;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
        q >>= 1;
    }
    // Gray encode
    for i in 1..3 {
        x[i] ^= x[i - 1];
    }
    let mut t = 0;
    q = m;
    while q > 1 {
        if x[2] & q != 0 {
            t ^= q - 1;
        }
        q >>= 1;
    }
    for xi in x.iter_mut() {
        *xi ^= t;
    }
}

fn transpose_to_axes(x: &mut [u32; 3], bits: u32) {
    let n = 2u32 << (bits - 1);
    // Gray decode by H ^ (H/2)
    let mut t = x[2] >> 1;
    for i in (1..3).rev() {
        x[i] ^= x[i - 1];
    }
    x[0] ^= t;
    // Undo excess work
    let mut q = 2;
    while q != n {
        let p = q - 1;
        for i in (0..3).rev() {
            if x[i] & q != 0 {
                x[0] ^= p;
            } else {
                t = (x[0] ^ x[i]) & p;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
        q <<= 1;
    }
}

/// Quantize a point in `bbox` onto the 2^level lattice.
///
/// Axes with zero extent map to coordinate 0, which supports pseudo-2D meshes.
pub fn quantize(p: [f64; 3], bbox: &BoundingBox, level: u32) -> Result<GridCoord, SfcError> {
    if !bbox.contains(p) {
        return Err(SfcError::PointOutsideBox { x: p[0], y: p[1], z: p[2] });
    }
    let side = 1u64 << level;
    let mut c = [0u32; 3];
    for d in 0..3 {
        let extent = bbox.max[d] - bbox.min[d];
        if extent > 0.0 {
            let rel = (p[d] - bbox.min[d]) / extent;
            let cell = (rel * side as f64) as u64;
            c[d] = cell.min(side - 1) as u32;
        }
    }
    GridCoord::new(c[0], c[1], c[2], level)
}

/// Stable permutation that sorts elements by the Hilbert index of their
/// quantized barycenter; ties keep the original order.
pub fn sfc_sort_permutation(
    barycenters: &[[f64; 3]],
    bbox: &BoundingBox,
    level: u32,
) -> Result<Vec<usize>, SfcError> {
    let mut keyed: Vec<(SfcIndex, usize)> = Vec::with_capacity(barycenters.len());
    for (idx, &p) in barycenters.iter().enumerate() {
        let coord = quantize(p, bbox, level)?;
        keyed.push((hilbert_encode(coord), idx));
    }
    keyed.sort_by_key(|&(sfc, idx)| (sfc, idx));
    Ok(keyed.into_iter().map(|(_, idx)| idx).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn origin_is_index_zero() {
        let c = GridCoord::new(0, 0, 0, 1).unwrap();
        assert_eq!(hilbert_encode(c), SfcIndex(0));
        assert_eq!(hilbert_decode(SfcIndex(0), 1).unwrap(), c);
    }

    #[test]
    fn level1_bijection() {
        let mut seen = HashSet::new();
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    let idx = hilbert_encode(GridCoord::new(i, j, k, 1).unwrap());
                    assert!(idx.0 < 8);
                    assert!(seen.insert(idx.0));
                }
            }
        }
        assert_eq!(seen.len(), 8);
    }

    #[test]
    fn level3_roundtrip() {
        for i in 0..8 {
            for j in 0..8 {
                for k in 0..8 {
                    let c = GridCoord::new(i, j, k, 3).unwrap();
                    let idx = hilbert_encode(c);
                    assert_eq!(hilbert_decode(idx, 3).unwrap(), c);
                }
            }
        }
    }

    #[test]
    fn level2_consecutive_cells_face_adjacent() {
        for idx in 0..63u64 {
            let a = hilbert_decode(SfcIndex(idx), 2).unwrap();
            let b = hilbert_decode(SfcIndex(idx + 1), 2).unwrap();
            let dist = a.i.abs_diff(b.i) + a.j.abs_diff(b.j) + a.k.abs_diff(b.k);
            assert_eq!(dist, 1, "indices {idx},{} not adjacent", idx + 1);
        }
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(GridCoord::new(2, 0, 0, 1).is_err());
        assert!(hilbert_decode(SfcIndex(8), 1).is_err());
        assert!(hilbert_decode(SfcIndex(0), 0).is_err());
    }

    #[test]
    fn single_element_sort_is_identity() {
        let bbox = BoundingBox::new([0.0; 3], [1.0; 3]);
        let perm = sfc_sort_permutation(&[[0.5, 0.5, 0.5]], &bbox, 4).unwrap();
        assert_eq!(perm, vec![0]);
    }

    #[test]
    fn box_2x2x2_sort_matches_hilbert_visit_order() {
        // Cell centers of a 2x2x2 box listed in (i fastest) lexicographic order.
        let bbox = BoundingBox::new([0.0; 3], [2.0; 3]);
        let mut centers = Vec::new();
        for k in 0..2 {
            for j in 0..2 {
                for i in 0..2 {
                    centers.push([i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5]);
                }
            }
        }
        let perm = sfc_sort_permutation(&centers, &bbox, 1).unwrap();
        // Oracle: enumerate the level-1 visit order by decoding 0..8.
        let expected: Vec<usize> = (0..8)
            .map(|h| {
                let c = hilbert_decode(SfcIndex(h), 1).unwrap();
                (c.i + 2 * c.j + 4 * c.k) as usize
            })
            .collect();
        assert_eq!(perm, expected);
    }

    #[test]
    fn sorted_input_sorts_to_identity() {
        let bbox = BoundingBox::new([0.0; 3], [2.0; 3]);
        let centers: Vec<[f64; 3]> = (0..8u64)
            .map(|h| {
                let c = hilbert_decode(SfcIndex(h), 1).unwrap();
                [c.i as f64 + 0.5, c.j as f64 + 0.5, c.k as f64 + 0.5]
            })
            .collect();
        let perm = sfc_sort_permutation(&centers, &bbox, 1).unwrap();
        assert_eq!(perm, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn degenerate_box_axis_maps_to_zero() {
        let bbox = BoundingBox::new([0.0, 0.0, 0.5], [1.0, 1.0, 0.5]);
        let c = quantize([0.2, 0.7, 0.5], &bbox, 3).unwrap();
        assert_eq!(c.k, 0);
    }

    #[test]
    fn point_outside_box_rejected() {
        let bbox = BoundingBox::new([0.0; 3], [1.0; 3]);
        assert!(sfc_sort_permutation(&[[2.0, 0.5, 0.5]], &bbox, 3).is_err());
    }
}
