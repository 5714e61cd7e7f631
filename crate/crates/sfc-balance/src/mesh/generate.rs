//! Structured periodic box mesh generation.

use super::{build_side_connectivity, element_volume, vertex_mean, Element, ElementType, Mesh, MeshError};
use crate::sfc::{hilbert_encode, quantize, BoundingBox, DEFAULT_SORT_LEVEL};

/// Generate an all-hex structured mesh of `nx * ny * nz` elements on `domain`,
/// SFC-sorted, with periodic side pairing in all directions.
pub fn generate_box_mesh(
    nx: usize,
    ny: usize,
    nz: usize,
    domain: BoundingBox,
) -> Result<Mesh, MeshError> {
    generate_box_mesh_level(nx, ny, nz, domain, DEFAULT_SORT_LEVEL)
}

pub fn generate_box_mesh_level(
    nx: usize,
    ny: usize,
    nz: usize,
    domain: BoundingBox,
    sort_level: u32,
) -> Result<Mesh, MeshError> {
    if nx == 0 || ny == 0 || nz == 0 {
        return Err(MeshError::InvalidDims(nx, ny, nz));
    }
    let (px, py, pz) = (nx + 1, ny + 1, nz + 1);
    let node_id = |i: usize, j: usize, k: usize| i + px * (j + py * k);

    let mut nodes = Vec::with_capacity(px * py * pz);
    for k in 0..pz {
        for j in 0..py {
            for i in 0..px {
                nodes.push([
                    domain.min[0] + (domain.max[0] - domain.min[0]) * i as f64 / nx as f64,
                    domain.min[1] + (domain.max[1] - domain.min[1]) * j as f64 / ny as f64,
                    domain.min[2] + (domain.max[2] - domain.min[2]) * k as f64 / nz as f64,
                ]);
            }
        }
    }

    let mut elements = Vec::with_capacity(nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                // Canonical corner order: bottom counterclockwise, then top.
                let ids = vec![
                    node_id(i, j, k),
                    node_id(i + 1, j, k),
                    node_id(i + 1, j + 1, k),
                    node_id(i, j + 1, k),
                    node_id(i, j, k + 1),
                    node_id(i + 1, j, k + 1),
                    node_id(i + 1, j + 1, k + 1),
                    node_id(i, j + 1, k + 1),
                ];
                let corners: Vec<[f64; 3]> = ids.iter().map(|&n| nodes[n]).collect();
                let barycenter = vertex_mean(&corners);
                let volume = element_volume(ElementType::Hex, &corners);
                let coord = quantize(barycenter, &domain, sort_level)?;
                elements.push(Element {
                    element_type: ElementType::Hex,
                    node_ids: ids,
                    barycenter,
                    jacobian: volume / ElementType::Hex.reference_volume(),
                    sfc_index: hilbert_encode(coord),
                });
            }
        }
    }
    elements.sort_by_key(|e| e.sfc_index);

    let mut mesh = Mesh {
        nodes,
        elements,
        sides: Vec::new(),
        domain,
        sort_level,
    };
    build_side_connectivity(&mut mesh)?;
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sfc::{hilbert_decode, SfcIndex};

    fn unit_box() -> BoundingBox {
        BoundingBox::new([0.0; 3], [1.0; 3])
    }

    #[test]
    fn box_512() {
        let m = generate_box_mesh(8, 8, 8, unit_box()).unwrap();
        assert_eq!(m.elements.len(), 512);
        assert_eq!(m.counts_by_type(), [512, 0, 0, 0]);
        assert!(m.is_sfc_sorted());
        assert!((m.total_volume() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_element_periodic_sides() {
        let m = generate_box_mesh(1, 1, 1, unit_box()).unwrap();
        assert_eq!(m.elements.len(), 1);
        // Each periodic face pair merges into one side.
        assert_eq!(m.sides.len(), 3);
        for s in &m.sides {
            assert_eq!(s.master_elem, 0);
            assert_eq!(s.slave_elem, Some(0));
        }
    }

    #[test]
    fn box_2x2x2_in_level1_hilbert_order() {
        let m = generate_box_mesh(2, 2, 2, unit_box()).unwrap();
        assert_eq!(m.elements.len(), 8);
        // Oracle: decode the level-1 curve and compare barycenter cells.
        for (pos, e) in m.elements.iter().enumerate() {
            let c = hilbert_decode(SfcIndex(pos as u64), 1).unwrap();
            let cell = [
                (e.barycenter[0] * 2.0) as u32,
                (e.barycenter[1] * 2.0) as u32,
                (e.barycenter[2] * 2.0) as u32,
            ];
            assert_eq!([c.i, c.j, c.k], cell);
        }
    }

    #[test]
    fn two_by_one_master_ordering() {
        let m = generate_box_mesh(2, 1, 1, unit_box()).unwrap();
        assert_eq!(m.sides.len(), 6);
        // Interior + wrap faces in x: both are shared by elements 0 and 1
        // with master 0.
        let shared: Vec<_> = m
            .sides
            .iter()
            .filter(|s| s.master_elem != s.slave_elem.unwrap())
            .collect();
        assert_eq!(shared.len(), 2);
        for s in &shared {
            assert_eq!(s.master_elem, 0);
            assert_eq!(s.slave_elem, Some(1));
        }
    }

    #[test]
    fn invalid_dims_rejected() {
        assert!(generate_box_mesh(0, 1, 1, unit_box()).is_err());
    }
}
