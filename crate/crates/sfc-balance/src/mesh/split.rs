//! Hex splitting into tetrahedra, pyramids and prisms.
//!
//! Quad faces produced by splitting are always triangulated by the diagonal
//! through the face's lowest- and highest-numbered corners (the Kuhn rule),
//! so adjacent split hexes agree on shared faces and split/unsplit
//! transitions reduce to quad-covered-by-two-triangles matching.

use super::{
    build_side_connectivity, element_volume, generate_box_mesh_level, vertex_mean, Element,
    ElementType, Mesh, MeshError,
};
use crate::sfc::{hilbert_encode, quantize, BoundingBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTemplate {
    /// Kuhn decomposition around the 0-6 corner diagonal.
    SixTets,
    /// One pyramid per face, apex at an added center node.
    SixPyramids,
    /// Diagonal vertical cut into two wedges.
    TwoPrisms,
}

impl SplitTemplate {
    pub fn children(self) -> usize {
        match self {
            SplitTemplate::SixTets | SplitTemplate::SixPyramids => 6,
            SplitTemplate::TwoPrisms => 2,
        }
    }

    fn child_type(self) -> ElementType {
        match self {
            SplitTemplate::SixTets => ElementType::Tet,
            SplitTemplate::SixPyramids => ElementType::Pyramid,
            SplitTemplate::TwoPrisms => ElementType::Prism,
        }
    }
}

// Child corner lists in the parent's local corner numbering; index 8 is the
// added center node (pyramids only).
const KUHN_TETS: [[usize; 4]; 6] = [
    [0, 1, 2, 6],
    [0, 1, 5, 6],
    [0, 3, 2, 6],
    [0, 3, 7, 6],
    [0, 4, 5, 6],
    [0, 4, 7, 6],
];
const TWO_PRISMS: [[usize; 6]; 2] = [[0, 1, 2, 4, 5, 6], [0, 2, 3, 4, 6, 7]];
const SIX_PYRAMIDS: [[usize; 5]; 6] = [
    [0, 3, 7, 4, 8],
    [1, 2, 6, 5, 8],
    [0, 1, 5, 4, 8],
    [3, 2, 6, 7, 8],
    [0, 1, 2, 3, 8],
    [4, 5, 6, 7, 8],
];

/// Replace the selected hexes by template children; the result is re-sorted
/// along the SFC and its connectivity rebuilt. Total volume is conserved.
pub fn split_selected(
    mesh: &Mesh,
    assignment: &[(usize, SplitTemplate)],
) -> Result<Mesh, MeshError> {
    let mut template: Vec<Option<SplitTemplate>> = vec![None; mesh.elements.len()];
    for &(idx, t) in assignment {
        if idx >= mesh.elements.len() {
            return Err(MeshError::SelectionOutOfRange(idx));
        }
        if mesh.elements[idx].element_type != ElementType::Hex {
            return Err(MeshError::NonHexSplit(idx));
        }
        template[idx] = Some(t);
    }

    let mut nodes = mesh.nodes.clone();
    let mut elements: Vec<Element> = Vec::new();
    for (ei, e) in mesh.elements.iter().enumerate() {
        let Some(t) = template[ei] else {
            elements.push(e.clone());
            continue;
        };
        // The diagonal rule needs the canonical corner order, in which
        // corner 0 has the smallest and corner 6 the largest node id.
        debug_assert_eq!(
            e.node_ids.iter().min(),
            Some(&e.node_ids[0]),
            "hex corners not in canonical order"
        );
        debug_assert_eq!(e.node_ids.iter().max(), Some(&e.node_ids[6]));

        let mut local_ids = e.node_ids.clone();
        if t == SplitTemplate::SixPyramids {
            let corners = mesh.node_coords(&e.node_ids);
            nodes.push(vertex_mean(&corners));
            local_ids.push(nodes.len() - 1);
        }
        let children: Vec<Vec<usize>> = match t {
            SplitTemplate::SixTets => KUHN_TETS.iter().map(|c| c.to_vec()).collect(),
            SplitTemplate::TwoPrisms => TWO_PRISMS.iter().map(|c| c.to_vec()).collect(),
            SplitTemplate::SixPyramids => SIX_PYRAMIDS.iter().map(|c| c.to_vec()).collect(),
        };
        let ty = t.child_type();
        for child in children {
            let ids: Vec<usize> = child.iter().map(|&c| local_ids[c]).collect();
            let corners: Vec<[f64; 3]> = ids.iter().map(|&n| nodes[n]).collect();
            let barycenter = vertex_mean(&corners);
            let volume = element_volume(ty, &corners);
            let coord = quantize(barycenter, &mesh.domain, mesh.sort_level)?;
            elements.push(Element {
                element_type: ty,
                node_ids: ids,
                barycenter,
                jacobian: volume / ty.reference_volume(),
                sfc_index: hilbert_encode(coord),
            });
        }
    }

    let mut order: Vec<usize> = (0..elements.len()).collect();
    order.sort_by_key(|&i| (elements[i].sfc_index, i));
    let elements = order.into_iter().map(|i| elements[i].clone()).collect();

    let mut out = Mesh {
        nodes,
        elements,
        sides: Vec::new(),
        domain: mesh.domain,
        sort_level: mesh.sort_level,
    };
    build_side_connectivity(&mut out)?;
    Ok(out)
}

/// Split the trailing `split_fraction` of the SFC-ordered hexes, assigning
/// templates in contiguous SFC blocks proportional to `template_mix`
/// (tets : pyramids : prisms, largest-remainder rounding).
pub fn split_to_mixed(
    mesh: &Mesh,
    split_fraction: f64,
    template_mix: [f64; 3],
) -> Result<Mesh, MeshError> {
    let n = mesh.elements.len();
    let n_split = ((split_fraction * n as f64).ceil() as usize).min(n);
    if n_split == 0 {
        return Ok(mesh.clone());
    }
    let selected: Vec<usize> = (n - n_split..n).collect();
    let counts = apportion(n_split, &template_mix);
    let mut assignment = Vec::with_capacity(n_split);
    let templates = [
        SplitTemplate::SixTets,
        SplitTemplate::SixPyramids,
        SplitTemplate::TwoPrisms,
    ];
    let mut at = 0;
    for (t, &c) in templates.iter().zip(&counts) {
        for &idx in &selected[at..at + c] {
            assignment.push((idx, *t));
        }
        at += c;
    }
    split_selected(mesh, &assignment)
}

/// Largest-remainder apportionment of `total` into weighted parts.
fn apportion(total: usize, weights: &[f64; 3]) -> [usize; 3] {
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return [total, 0, 0];
    }
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts = [0usize; 3];
    let mut assigned = 0;
    for i in 0..3 {
        counts[i] = exact[i].floor() as usize;
        assigned += counts[i];
    }
    let mut rem: Vec<(f64, usize)> = exact
        .iter()
        .enumerate()
        .map(|(i, x)| (x - x.floor(), i))
        .collect();
    rem.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    for r in 0..total - assigned {
        counts[rem[r % 3].1] += 1;
    }
    counts
}

/// The mixed-element box mesh mirroring the 1984-element configuration:
/// an 8x8x8 hex box in which the 384 hexes outside the low-(y,z) quadrant
/// are split.
///
/// Whole-hex templates produce 6/6/2 children, so the exact per-type counts
/// follow from the template assignment: 894 tetrahedra, 738 pyramids and
/// 224 prisms alongside the 128 remaining hexes, 1984 elements in total,
/// split in contiguous SFC blocks.
pub fn mixed_box_preset() -> Result<Mesh, MeshError> {
    let domain = BoundingBox::new([0.0; 3], [std::f64::consts::TAU; 3]);
    let base = generate_box_mesh_level(8, 8, 8, domain, crate::sfc::DEFAULT_SORT_LEVEL)?;
    let mid = |d: usize| 0.5 * (domain.min[d] + domain.max[d]);

    let selected: Vec<usize> = base
        .elements
        .iter()
        .enumerate()
        .filter(|(_, e)| !(e.barycenter[1] < mid(1) && e.barycenter[2] < mid(2)))
        .map(|(i, _)| i)
        .collect();
    assert_eq!(selected.len(), 384);

    let mut assignment = Vec::with_capacity(384);
    for (pos, &idx) in selected.iter().enumerate() {
        let t = if pos < 112 {
            SplitTemplate::TwoPrisms
        } else if pos < 112 + 149 {
            SplitTemplate::SixTets
        } else {
            SplitTemplate::SixPyramids
        };
        assignment.push((idx, t));
    }
    split_selected(&base, &assignment)
}
