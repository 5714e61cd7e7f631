//! Linear advection update loop over a partitioned, SFC-sorted mesh.
//!
//! Hexes get a collocation spectral-element update: tensor-product
//! differentiation for the volume term plus upwind face corrections. The
//! other element types evolve their cell mean finite-volume style with a
//! least-squares gradient reconstruction for face values, and carry their
//! state through a modal projection / reconstruction round trip each step
//! so their per-step cost reflects modal time stepping.
//!
//! Every arithmetic path is element- or side-local and iterates in mesh
//! order, so results are bit-identical for any partitioning of the same
//! mesh. Neighbor face values are shared by gathering a global face-value
//! table each stage; the gather happens outside the instrumented sections
//! so communication never shows up as element cost.

use super::basis::{
    build_basis, differentiation_matrix, gauss_legendre, lagrange_values, modal_project, BasisSet,
};
use super::{KernelError, LserkScheme};
use crate::cluster::Comm;
use crate::mesh::{ElementType, Mesh};
use crate::timing::{Section, TimerSet};
use nalgebra::{DMatrix, DVector};
use std::ops::Range;

pub const N_FACE_SLOTS: usize = 6;

#[derive(Debug, Clone)]
pub struct KernelConfig {
    pub degree: usize,
    pub velocity: [f64; 3],
    pub cfl: f64,
    pub n_var: usize,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            degree: 5,
            velocity: [1.0, 0.5, 0.25],
            cfl: 0.3,
            n_var: 1,
        }
    }
}

struct Hex1d {
    w: Vec<f64>,
    d: DMatrix<f64>,
    l_left: Vec<f64>,
    l_right: Vec<f64>,
}

struct ElemGeom {
    ty: ElementType,
    volume: f64,
    jacobian: f64,
    /// Physical edge extents (hex only; all hexes here are axis-aligned).
    hex_h: [f64; 3],
    /// Physical coordinates of the solution nodes.
    node_xyz: Vec<[f64; 3]>,
    /// Barycenter and per-face centroids in this element's own frame.
    center: [f64; 3],
    face_centroid: Vec<[f64; 3]>,
    /// Sides covering each local face, with outward sign (+1 master, -1 slave).
    face_sides: Vec<Vec<(usize, f64)>>,
    /// Least-squares physical gradient operator, 3 x n_nodes (non-hex).
    grad_op: Option<DMatrix<f64>>,
}

struct SideGeom {
    area: f64,
    /// Advection speed through the face, velocity . outward master normal.
    an: f64,
    master: usize,
    master_face: usize,
    slave: usize,
    slave_face: usize,
}

/// Partition-independent per-mesh data; every rank builds an identical copy.
pub struct Kernel {
    pub config: KernelConfig,
    pub scheme: LserkScheme,
    bases: [Option<BasisSet>; 4],
    hex1d: Hex1d,
    elems: Vec<ElemGeom>,
    sides: Vec<SideGeom>,
    /// Uniform per-element state stride: n_var * (N+1)^3.
    pub slot: usize,
    /// CFL-derived time step for the configured velocity.
    pub dt_cfl: f64,
}

impl Kernel {
    pub fn new(mesh: &Mesh, config: KernelConfig) -> Result<Self, KernelError> {
        let n1 = config.degree + 1;
        let (x1, w1) = gauss_legendre(n1);
        let hex1d = Hex1d {
            w: w1.clone(),
            d: differentiation_matrix(&x1),
            l_left: lagrange_values(&x1, -1.0),
            l_right: lagrange_values(&x1, 1.0),
        };
        let mut bases: [Option<BasisSet>; 4] = [None, None, None, None];
        for ty in [ElementType::Tet, ElementType::Prism, ElementType::Pyramid] {
            if mesh.elements.iter().any(|e| e.element_type == ty) {
                bases[ty as usize] = Some(build_basis(ty, config.degree)?);
            }
        }

        let mut elems = Vec::with_capacity(mesh.elements.len());
        for e in &mesh.elements {
            let corners = mesh.node_coords(&e.node_ids);
            let ty = e.element_type;
            let faces = ty.faces();
            let face_centroid: Vec<[f64; 3]> = faces
                .iter()
                .map(|f| centroid(&f.iter().map(|&c| corners[c]).collect::<Vec<_>>()))
                .collect();
            let (hex_h, node_xyz, grad_op) = match ty {
                ElementType::Hex => {
                    let h = hex_extents(&corners)?;
                    let lo = corners[0];
                    let mut xyz = Vec::with_capacity(n1 * n1 * n1);
                    for k in 0..n1 {
                        for j in 0..n1 {
                            for i in 0..n1 {
                                xyz.push([
                                    lo[0] + 0.5 * (x1[i] + 1.0) * h[0],
                                    lo[1] + 0.5 * (x1[j] + 1.0) * h[1],
                                    lo[2] + 0.5 * (x1[k] + 1.0) * h[2],
                                ]);
                            }
                        }
                    }
                    (h, xyz, None)
                }
                _ => {
                    let basis = bases[ty as usize].as_ref().unwrap();
                    let xyz: Vec<[f64; 3]> = basis
                        .nodes
                        .iter()
                        .map(|&r| map_reference_point(ty, &corners, r))
                        .collect();
                    let g = least_squares_gradient(&xyz);
                    ([0.0; 3], xyz, Some(g))
                }
            };
            elems.push(ElemGeom {
                ty,
                volume: e.volume(),
                jacobian: e.jacobian,
                hex_h,
                node_xyz,
                center: e.barycenter,
                face_centroid,
                face_sides: vec![Vec::new(); faces.len()],
                grad_op,
            });
        }

        let vel = config.velocity;
        let mut sides = Vec::with_capacity(mesh.sides.len());
        for (si, s) in mesh.sides.iter().enumerate() {
            let Some(slave) = s.slave_elem else {
                return Err(KernelError::UnsupportedMesh(format!(
                    "side {si} has no neighbor; meshes must be fully periodic"
                )));
            };
            let pts = mesh.node_coords(&s.node_ids);
            let (area, mut n) = face_area_normal(&pts);
            let c = centroid(&pts);
            let mb = &mesh.elements[s.master_elem].barycenter;
            let out = [c[0] - mb[0], c[1] - mb[1], c[2] - mb[2]];
            if n[0] * out[0] + n[1] * out[1] + n[2] * out[2] < 0.0 {
                n = [-n[0], -n[1], -n[2]];
            }
            let an = vel[0] * n[0] + vel[1] * n[1] + vel[2] * n[2];
            sides.push(SideGeom {
                area,
                an,
                master: s.master_elem,
                master_face: s.master_face,
                slave,
                slave_face: s.slave_face.unwrap(),
            });
            elems[s.master_elem].face_sides[s.master_face].push((si, 1.0));
            elems[slave].face_sides[s.slave_face.unwrap()].push((si, -1.0));
        }

        let h_min = elems
            .iter()
            .map(|e| e.volume.cbrt())
            .fold(f64::INFINITY, f64::min);
        let speed = (vel[0] * vel[0] + vel[1] * vel[1] + vel[2] * vel[2]).sqrt();
        let dt_cfl = if speed > 0.0 {
            config.cfl * h_min / (speed * (2 * config.degree + 1) as f64)
        } else {
            config.cfl * h_min / (2 * config.degree + 1) as f64
        };

        let slot = config.n_var * n1 * n1 * n1;
        Ok(Kernel {
            config,
            scheme: LserkScheme::carpenter_kennedy(),
            bases,
            hex1d,
            elems,
            sides,
            slot,
            dt_cfl,
        })
    }

    pub fn n_elems(&self) -> usize {
        self.elems.len()
    }

    pub fn n_sides(&self) -> usize {
        self.sides.len()
    }

    pub fn element_type(&self, e: usize) -> ElementType {
        self.elems[e].ty
    }

    /// Number of active solution values in an element's state slot.
    pub fn active_nodes(&self, e: usize) -> usize {
        match self.elems[e].ty {
            ElementType::Hex => {
                let n1 = self.config.degree + 1;
                n1 * n1 * n1
            }
            ty => self.bases[ty as usize].as_ref().unwrap().n_nodes,
        }
    }
}

fn centroid(pts: &[[f64; 3]]) -> [f64; 3] {
    let mut c = [0.0; 3];
    for p in pts {
        for d in 0..3 {
            c[d] += p[d];
        }
    }
    let n = pts.len() as f64;
    [c[0] / n, c[1] / n, c[2] / n]
}

fn hex_extents(corners: &[[f64; 3]]) -> Result<[f64; 3], KernelError> {
    let h = [
        corners[1][0] - corners[0][0],
        corners[3][1] - corners[0][1],
        corners[4][2] - corners[0][2],
    ];
    // The tensor-product update assumes axis-aligned boxes; verify.
    let lo = corners[0];
    let tol = 1e-9 * (h[0].abs() + h[1].abs() + h[2].abs());
    let offsets: [[f64; 3]; 8] = [
        [0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0],
        [1.0, 1.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [1.0, 0.0, 1.0],
        [1.0, 1.0, 1.0],
        [0.0, 1.0, 1.0],
    ];
    for (ci, off) in offsets.iter().enumerate() {
        for d in 0..3 {
            let want = lo[d] + off[d] * h[d];
            if (corners[ci][d] - want).abs() > tol {
                return Err(KernelError::UnsupportedMesh(
                    "hexahedron is not an axis-aligned box".into(),
                ));
            }
        }
    }
    Ok(h)
}

/// Map a reference-element point to physical space.
fn map_reference_point(ty: ElementType, v: &[[f64; 3]], r: [f64; 3]) -> [f64; 3] {
    let lin = |coeffs: &[(f64, usize)]| -> [f64; 3] {
        let mut p = [0.0; 3];
        for &(c, vi) in coeffs {
            for d in 0..3 {
                p[d] += c * v[vi][d];
            }
        }
        p
    };
    match ty {
        ElementType::Tet => lin(&[
            (1.0 - r[0] - r[1] - r[2], 0),
            (r[0], 1),
            (r[1], 2),
            (r[2], 3),
        ]),
        ElementType::Prism => lin(&[
            ((1.0 - r[0] - r[1]) * (1.0 - r[2]), 0),
            (r[0] * (1.0 - r[2]), 1),
            (r[1] * (1.0 - r[2]), 2),
            ((1.0 - r[0] - r[1]) * r[2], 3),
            (r[0] * r[2], 4),
            (r[1] * r[2], 5),
        ]),
        ElementType::Pyramid => {
            let s = 1.0 - r[2];
            let (a, b) = if s > 1e-14 {
                (r[0] / s, r[1] / s)
            } else {
                (0.0, 0.0)
            };
            lin(&[
                (s * 0.25 * (1.0 - a) * (1.0 - b), 0),
                (s * 0.25 * (1.0 + a) * (1.0 - b), 1),
                (s * 0.25 * (1.0 + a) * (1.0 + b), 2),
                (s * 0.25 * (1.0 - a) * (1.0 + b), 3),
                (r[2], 4),
            ])
        }
        ElementType::Hex => unreachable!(),
    }
}

/// 3 x n operator mapping nodal values to the least-squares-fit constant
/// gradient over the node cloud. Exact for affine data; returns zeros when
/// the cloud does not span 3D (degree 0).
fn least_squares_gradient(xyz: &[[f64; 3]]) -> DMatrix<f64> {
    let n = xyz.len();
    let c = centroid(xyz);
    let mut x = DMatrix::zeros(n, 3);
    for (i, p) in xyz.iter().enumerate() {
        for d in 0..3 {
            x[(i, d)] = p[d] - c[d];
        }
    }
    let xtx = x.transpose() * &x;
    match xtx.cholesky() {
        Some(ch) => {
            let mut inv = DMatrix::identity(3, 3);
            ch.solve_mut(&mut inv);
            inv * x.transpose()
        }
        None => DMatrix::zeros(3, n),
    }
}

/// Area and unit normal of a planar face (triangle or quad).
fn face_area_normal(pts: &[[f64; 3]]) -> (f64, [f64; 3]) {
    let cross = |u: [f64; 3], v: [f64; 3]| {
        [
            u[1] * v[2] - u[2] * v[1],
            u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0],
        ]
    };
    let sub = |a: [f64; 3], b: [f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    let n = match pts.len() {
        3 => cross(sub(pts[1], pts[0]), sub(pts[2], pts[0])),
        4 => cross(sub(pts[2], pts[0]), sub(pts[3], pts[1])),
        k => panic!("face with {k} corners"),
    };
    let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    (0.5 * len, [n[0] / len, n[1] / len, n[2] / len])
}

/// Weighted sum written as pivot + weighted deviations, so a constant input
/// reproduces the pivot bit-exactly (the weights sum to one analytically).
fn pivoted_sum(weights: &[f64], get: impl Fn(usize) -> f64) -> f64 {
    let pivot = get(0);
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w * (get(i) - pivot);
    }
    pivot + acc
}

/// One rank's share of the solver: contiguous SFC range of owned elements
/// and their state.
pub struct LocalSolver {
    pub kernel: Kernel,
    own: Range<usize>,
    /// Owned state, `own.len() * slot` values; non-hex elements use the
    /// first `active_nodes` entries of their slot.
    pub u: Vec<f64>,
    pub timers: TimerSet,
    pub steps_taken: usize,
    /// Sides incident to owned elements (flux work this rank performs).
    owned_sides: Vec<usize>,
    /// For cost attribution: local master index per owned-mastered side.
    side_masters_local: Vec<usize>,
}

impl LocalSolver {
    pub fn new(mesh: &Mesh, config: KernelConfig, own: Range<usize>) -> Result<Self, KernelError> {
        let kernel = Kernel::new(mesh, config)?;
        let u = vec![0.0; own.len() * kernel.slot];
        let mut s = LocalSolver {
            kernel,
            own: 0..0,
            u,
            timers: TimerSet::new(),
            steps_taken: 0,
            owned_sides: Vec::new(),
            side_masters_local: Vec::new(),
        };
        s.set_partition_range(own);
        Ok(s)
    }

    pub fn own_range(&self) -> Range<usize> {
        self.own.clone()
    }

    pub fn n_owned(&self) -> usize {
        self.own.len()
    }

    /// Install a new owned range and its state (after element redistribution).
    pub fn set_partition(&mut self, own: Range<usize>, u: Vec<f64>) {
        assert_eq!(u.len(), own.len() * self.kernel.slot);
        self.u = u;
        self.set_partition_range(own);
    }

    fn set_partition_range(&mut self, own: Range<usize>) {
        self.own = own.clone();
        self.owned_sides.clear();
        self.side_masters_local.clear();
        for (si, s) in self.kernel.sides.iter().enumerate() {
            let m_owned = own.contains(&s.master);
            if m_owned || own.contains(&s.slave) {
                self.owned_sides.push(si);
            }
            if m_owned {
                self.side_masters_local.push(s.master - own.start);
            }
        }
    }

    /// Modal flags for owned elements, in local order.
    pub fn owned_modal_flags(&self) -> Vec<bool> {
        self.own
            .clone()
            .map(|e| self.kernel.elems[e].ty.is_modal())
            .collect()
    }

    /// Local master indices of owned-mastered sides (attribution table).
    pub fn owned_side_masters(&self) -> &[usize] {
        &self.side_masters_local
    }

    /// Fill the owned state by evaluating `f` at the physical node positions.
    pub fn set_initial(&mut self, f: impl Fn([f64; 3]) -> f64) {
        let slot = self.kernel.slot;
        for (li, e) in self.own.clone().enumerate() {
            let base = li * slot;
            let geom = &self.kernel.elems[e];
            for (ni, &p) in geom.node_xyz.iter().enumerate() {
                self.u[base + ni] = f(p);
            }
        }
    }

    /// Integral of the solution over the owned elements.
    pub fn local_integral(&self) -> f64 {
        let slot = self.kernel.slot;
        let mut total = 0.0;
        for (li, e) in self.own.clone().enumerate() {
            let geom = &self.kernel.elems[e];
            let base = li * slot;
            let s: f64 = match geom.ty {
                ElementType::Hex => {
                    let n1 = self.kernel.config.degree + 1;
                    let w = &self.kernel.hex1d.w;
                    let mut acc = 0.0;
                    for k in 0..n1 {
                        for j in 0..n1 {
                            for i in 0..n1 {
                                acc += w[i] * w[j] * w[k] * self.u[base + i + n1 * (j + n1 * k)];
                            }
                        }
                    }
                    acc
                }
                ty => {
                    let b = self.kernel.bases[ty as usize].as_ref().unwrap();
                    (0..b.n_nodes).map(|i| b.weights[i] * self.u[base + i]).sum()
                }
            };
            total += geom.jacobian * s;
        }
        total
    }

    /// Advance one time step. `dt` is typically `kernel.dt_cfl`.
    pub fn advance_step(&mut self, comm: &Comm, dt: f64) -> Result<(), KernelError> {
        let slot = self.kernel.slot;
        let n1 = self.kernel.config.degree + 1;
        let n_owned = self.own.len();
        let scheme = self.kernel.scheme.clone();

        // --- step start: gradients + cell means (elements), modal projection.
        let mut means = vec![0.0; n_owned];
        let mut grads = vec![[0.0; 3]; n_owned];
        self.timers.start(Section::ElemWork);
        for li in 0..n_owned {
            let e = self.own.start + li;
            let geom = &self.kernel.elems[e];
            if geom.ty == ElementType::Hex {
                continue;
            }
            let nb = self.kernel.bases[geom.ty as usize].as_ref().unwrap().n_nodes;
            let u = &self.u[li * slot..li * slot + nb];
            // Pivoted mean: constants survive bit-exactly.
            let pivot = u[0];
            let mut acc = 0.0;
            for &v in u {
                acc += v - pivot;
            }
            means[li] = pivot + acc / nb as f64;
            let g = geom.grad_op.as_ref().unwrap();
            let dev = DVector::from_iterator(nb, u.iter().map(|&v| v - pivot));
            let gvec = g * dev;
            grads[li] = [gvec[0], gvec[1], gvec[2]];
        }
        self.timers.stop(Section::ElemWork);

        // Modal start-of-step projection (full mass solve per modal element).
        // The section is skipped entirely when this rank owns no modal
        // elements, so no modal time can accrue without modal elements.
        let has_modal = self
            .own
            .clone()
            .any(|e| self.kernel.elems[e].ty.is_modal());
        let mut q_start: Vec<Vec<f64>> = vec![Vec::new(); n_owned];
        if has_modal {
            self.timers.start(Section::ModalWork);
            for li in 0..n_owned {
                let e = self.own.start + li;
                let geom = &self.kernel.elems[e];
                if geom.ty == ElementType::Hex {
                    continue;
                }
                let b = self.kernel.bases[geom.ty as usize].as_ref().unwrap();
                q_start[li] =
                    modal_project(b, geom.jacobian, &self.u[li * slot..li * slot + b.n_nodes]);
            }
            self.timers.stop(Section::ModalWork);
        }

        // Per-stage working state.
        let mut hex_reg = vec![0.0; n_owned * slot]; // hex LSERK registers
        let mut shift = vec![0.0; n_owned]; // non-hex mean shift within the step
        let mut shift_reg = vec![0.0; n_owned];
        // Modal registers: only owned modal elements have entries.
        let mut q_cur: Vec<Vec<f64>> = q_start.clone();
        let mut q_reg: Vec<Vec<f64>> = q_start.iter().map(|q| vec![0.0; q.len()]).collect();

        let n_elems = self.kernel.n_elems();
        let mut fstar = vec![0.0; self.kernel.n_sides()];
        // Per owned hex: the six face-point planes of the current stage.
        let mut hex_faces: Vec<[Vec<f64>; 6]> = Vec::new();
        let wf2 = {
            // 2D face quadrature mean weights (sum to one analytically).
            let w = &self.kernel.hex1d.w;
            let mut wf = vec![0.0; n1 * n1];
            for b in 0..n1 {
                for a in 0..n1 {
                    wf[a + n1 * b] = w[a] * w[b] * 0.25;
                }
            }
            wf
        };

        for stage in 0..scheme.n_stages() {
            // (a) face values of owned elements.
            let mut local_tab = vec![0.0; n_owned * N_FACE_SLOTS];
            self.timers.start(Section::ElemWork);
            hex_faces.clear();
            for li in 0..n_owned {
                let e = self.own.start + li;
                let geom = &self.kernel.elems[e];
                match geom.ty {
                    ElementType::Hex => {
                        let u = &self.u[li * slot..(li + 1) * slot];
                        let planes = hex_face_planes(u, n1, &self.kernel.hex1d);
                        for f in 0..6 {
                            local_tab[li * N_FACE_SLOTS + f] =
                                pivoted_sum(&wf2, |p| planes[f][p]);
                        }
                        hex_faces.push(planes);
                    }
                    _ => {
                        let m = means[li] + shift[li];
                        let g = grads[li];
                        for (f, fc) in geom.face_centroid.iter().enumerate() {
                            let r = [
                                fc[0] - geom.center[0],
                                fc[1] - geom.center[1],
                                fc[2] - geom.center[2],
                            ];
                            local_tab[li * N_FACE_SLOTS + f] =
                                m + g[0] * r[0] + g[1] * r[1] + g[2] * r[2];
                        }
                    }
                }
            }
            self.timers.stop(Section::ElemWork);

            // (b) share face values; rank chunks concatenate to mesh order.
            let gathered = comm.all_gather_f64(&local_tab)?;
            let mut tab = Vec::with_capacity(n_elems * N_FACE_SLOTS);
            for chunk in gathered {
                tab.extend_from_slice(&chunk);
            }
            debug_assert_eq!(tab.len(), n_elems * N_FACE_SLOTS);

            // (c) upwind side fluxes for sides this rank touches.
            self.timers.start(Section::SideWork);
            for &si in &self.owned_sides {
                let s = &self.kernel.sides[si];
                let up = if s.an >= 0.0 {
                    tab[s.master * N_FACE_SLOTS + s.master_face]
                } else {
                    tab[s.slave * N_FACE_SLOTS + s.slave_face]
                };
                fstar[si] = s.an * up;
            }
            self.timers.stop(Section::SideWork);

            // (d) residuals and state updates.
            self.timers.start(Section::ElemWork);
            let mut hex_li = 0;
            for li in 0..n_owned {
                let e = self.own.start + li;
                let geom = &self.kernel.elems[e];
                match geom.ty {
                    ElementType::Hex => {
                        let planes = &hex_faces[hex_li];
                        hex_li += 1;
                        let rhs = hex_residual(
                            &self.u[li * slot..(li + 1) * slot],
                            planes,
                            geom,
                            &self.kernel.sides,
                            &fstar,
                            n1,
                            &self.kernel.hex1d,
                            &self.kernel.config.velocity,
                        );
                        let reg = &mut hex_reg[li * slot..(li + 1) * slot];
                        let u = &mut self.u[li * slot..(li + 1) * slot];
                        for i in 0..slot {
                            reg[i] = scheme.a[stage] * reg[i] + dt * rhs[i];
                            u[i] += scheme.b[stage] * reg[i];
                        }
                    }
                    ty => {
                        // Finite-volume mean residual from single-valued
                        // side fluxes, in fixed face/sub-face order.
                        let mut outflow = 0.0;
                        for fs in &geom.face_sides {
                            for &(si, sign) in fs {
                                outflow += sign * self.kernel.sides[si].area * fstar[si];
                            }
                        }
                        let r = -outflow / geom.volume;
                        shift_reg[li] = scheme.a[stage] * shift_reg[li] + dt * r;
                        shift[li] += scheme.b[stage] * shift_reg[li];
                        // Advance the modal coefficients with the projected
                        // residual. The residual is spatially uniform, so
                        // its projection is exactly r * sqrt(refvol) on the
                        // constant mode (the basis is W-orthonormal).
                        let r0 = r * ty.reference_volume().sqrt();
                        let qr = &mut q_reg[li];
                        let qc = &mut q_cur[li];
                        for m in 0..qc.len() {
                            let inc = if m == 0 { r0 } else { 0.0 };
                            qr[m] = scheme.a[stage] * qr[m] + dt * inc;
                            qc[m] += scheme.b[stage] * qr[m];
                        }
                    }
                }
            }
            self.timers.stop(Section::ElemWork);
        }

        // --- step end: reconstruct the modal increment onto the nodes.
        if has_modal {
            self.timers.start(Section::ModalWork);
            for li in 0..n_owned {
                let e = self.own.start + li;
                let geom = &self.kernel.elems[e];
                if geom.ty == ElementType::Hex {
                    continue;
                }
                let b = self.kernel.bases[geom.ty as usize].as_ref().unwrap();
                let dq = DVector::from_iterator(
                    b.n_modes,
                    q_cur[li].iter().zip(&q_start[li]).map(|(c, s)| c - s),
                );
                let du = &b.v * dq;
                let base = li * slot;
                for i in 0..b.n_nodes {
                    self.u[base + i] += du[i];
                }
            }
            self.timers.stop(Section::ModalWork);
        }

        self.steps_taken += 1;
        if self.u.iter().any(|v| !v.is_finite()) {
            return Err(KernelError::Diverged {
                step: self.steps_taken,
            });
        }
        Ok(())
    }
}

/// Extrapolate a hex's nodal values to its six face-point planes.
/// Plane layout: faces (-x,+x,-y,+y,-z,+z); in-plane index a + n1*b where
/// (a,b) are the two tangential directions in (x,y,z) order.
fn hex_face_planes(u: &[f64], n1: usize, ops: &Hex1d) -> [Vec<f64>; 6] {
    let idx = |i: usize, j: usize, k: usize| i + n1 * (j + n1 * k);
    let mut planes: [Vec<f64>; 6] = std::array::from_fn(|_| vec![0.0; n1 * n1]);
    let interp = |l: &[f64], get: &dyn Fn(usize) -> f64| pivoted_sum(l, get);
    for b in 0..n1 {
        for a in 0..n1 {
            let p = a + n1 * b;
            planes[0][p] = interp(&ops.l_left, &|i| u[idx(i, a, b)]);
            planes[1][p] = interp(&ops.l_right, &|i| u[idx(i, a, b)]);
            planes[2][p] = interp(&ops.l_left, &|j| u[idx(a, j, b)]);
            planes[3][p] = interp(&ops.l_right, &|j| u[idx(a, j, b)]);
            planes[4][p] = interp(&ops.l_left, &|k| u[idx(a, b, k)]);
            planes[5][p] = interp(&ops.l_right, &|k| u[idx(a, b, k)]);
        }
    }
    planes
}

/// Evenly sized contiguous ownership range for one rank.
pub fn even_range(n_elems: usize, rank: usize, n_ranks: usize) -> Range<usize> {
    let base = n_elems / n_ranks;
    let rem = n_elems % n_ranks;
    let start = rank * base + rank.min(rem);
    let len = base + usize::from(rank < rem);
    start..start + len
}

/// Strong-form collocation residual for one axis-aligned hex: tensor
/// derivative volume term plus upwind face corrections against the
/// area-averaged single-valued side fluxes.
#[allow(clippy::too_many_arguments)]
fn hex_residual(
    u: &[f64],
    planes: &[Vec<f64>; 6],
    geom: &ElemGeom,
    sides: &[SideGeom],
    fstar: &[f64],
    n1: usize,
    ops: &Hex1d,
    vel: &[f64; 3],
) -> Vec<f64> {
    let idx = |i: usize, j: usize, k: usize| i + n1 * (j + n1 * k);
    let mut rhs = vec![0.0; u.len()];

    // Volume term: -v . grad(u).
    for axis in 0..3 {
        let scale = vel[axis] * 2.0 / geom.hex_h[axis];
        if scale == 0.0 {
            continue;
        }
        for b in 0..n1 {
            for a in 0..n1 {
                for i in 0..n1 {
                    let node = match axis {
                        0 => idx(i, a, b),
                        1 => idx(a, i, b),
                        _ => idx(a, b, i),
                    };
                    // Differentiate deviations from the collocation value so
                    // a constant state yields an exactly zero derivative.
                    let ui = u[node];
                    let mut du = 0.0;
                    for m in 0..n1 {
                        let um = match axis {
                            0 => u[idx(m, a, b)],
                            1 => u[idx(a, m, b)],
                            _ => u[idx(a, b, m)],
                        };
                        du += ops.d[(i, m)] * (um - ui);
                    }
                    rhs[node] -= scale * du;
                }
            }
        }
    }

    // Face corrections. The outward side flux is area-averaged over the
    // sides covering each face (one conforming quad, or the triangles of a
    // split neighbor) and compared against the local pointwise flux; the
    // difference is lifted along the normal direction's cardinal functions.
    for axis in 0..3 {
        let scale = 2.0 / geom.hex_h[axis];
        for (f, is_plus) in [(2 * axis, false), (2 * axis + 1, true)] {
            // `fstar` is oriented along each side's master normal; `sign`
            // flips it to this element's outward direction.
            let mut flux_sum = 0.0;
            let mut area_sum = 0.0;
            for &(si, sign) in &geom.face_sides[f] {
                flux_sum += sign * sides[si].area * fstar[si];
                area_sum += sides[si].area;
            }
            let outward = flux_sum / area_sum;
            // Flux in the +axis direction at this face.
            let fstar_axis = if is_plus { outward } else { -outward };
            let lift = if is_plus { &ops.l_right } else { &ops.l_left };
            let orient = if is_plus { 1.0 } else { -1.0 };
            for b in 0..n1 {
                for a in 0..n1 {
                    let floc = vel[axis] * planes[f][a + n1 * b];
                    let jump = fstar_axis - floc;
                    if jump == 0.0 {
                        continue;
                    }
                    for i in 0..n1 {
                        let node = match axis {
                            0 => idx(i, a, b),
                            1 => idx(a, i, b),
                            _ => idx(a, b, i),
                        };
                        rhs[node] -= scale * orient * jump * lift[i] / ops.w[i];
                    }
                }
            }
        }
    }
    rhs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{run_cluster_all, DEFAULT_TIMEOUT};
    use crate::mesh::{generate_box_mesh, split_to_mixed};
    use crate::sfc::BoundingBox;

    fn small_mixed() -> Mesh {
        let m = generate_box_mesh(2, 2, 2, BoundingBox::new([0.0; 3], [1.0; 3])).unwrap();
        split_to_mixed(&m, 0.5, [1.0, 1.0, 1.0]).unwrap()
    }

    fn run_serial(mesh: &Mesh, cfg: KernelConfig, steps: usize, init: impl Fn([f64; 3]) -> f64 + Sync) -> Vec<f64> {
        let n = mesh.elements.len();
        let out = run_cluster_all(1, DEFAULT_TIMEOUT, |comm| {
            let mut s = LocalSolver::new(mesh, cfg.clone(), 0..n).unwrap();
            s.set_initial(&init);
            let dt = s.kernel.dt_cfl;
            for _ in 0..steps {
                s.advance_step(&comm, dt).unwrap();
            }
            Ok(s.u)
        })
        .unwrap();
        out.into_iter().next().unwrap()
    }

    #[test]
    fn free_stream_exact_on_mixed_mesh() {
        let mesh = small_mixed();
        let cfg = KernelConfig {
            degree: 3,
            ..Default::default()
        };
        let u = run_serial(&mesh, cfg, 20, |_| 2.75);
        let kernel = Kernel::new(&mesh, KernelConfig { degree: 3, ..Default::default() }).unwrap();
        for (e, chunk) in u.chunks(kernel.slot).enumerate() {
            for &v in &chunk[..kernel.active_nodes(e)] {
                assert!((v - 2.75).abs() < 1e-12, "elem {e}: {v}");
            }
        }
    }

    #[test]
    fn advection_conserves_integral() {
        let mesh = small_mixed();
        let cfg = KernelConfig {
            degree: 3,
            ..Default::default()
        };
        let n = mesh.elements.len();
        let init = |p: [f64; 3]| (std::f64::consts::TAU * p[0]).sin() * (std::f64::consts::TAU * p[1]).cos() + 1.0;
        let integrals = run_cluster_all(1, DEFAULT_TIMEOUT, |comm| {
            let mut s = LocalSolver::new(&mesh, cfg.clone(), 0..n).unwrap();
            s.set_initial(init);
            let before = s.local_integral();
            let dt = s.kernel.dt_cfl;
            for _ in 0..30 {
                s.advance_step(&comm, dt).unwrap();
            }
            Ok((before, s.local_integral()))
        })
        .unwrap();
        let (before, after) = integrals[0];
        assert!((before - 1.0).abs() < 0.05, "mean-one data integrates near 1: {before}");
        assert!(
            (after - before).abs() < 1e-10 * before.abs().max(1.0),
            "integral drifted from {before} to {after}"
        );
    }

    #[test]
    fn partition_independence_small() {
        let mesh = small_mixed();
        let init = |p: [f64; 3]| (std::f64::consts::TAU * p[2]).sin() + 0.3 * p[0];
        let mut finals: Vec<Vec<f64>> = Vec::new();
        for n_ranks in [1usize, 3] {
            let out = run_cluster_all(n_ranks, DEFAULT_TIMEOUT, |comm| {
                let cfg = KernelConfig {
                    degree: 2,
                    ..Default::default()
                };
                let own = even_range(mesh.elements.len(), comm.rank(), comm.size());
                let mut s = LocalSolver::new(&mesh, cfg, own).unwrap();
                s.set_initial(init);
                let dt = s.kernel.dt_cfl;
                for _ in 0..10 {
                    s.advance_step(&comm, dt).unwrap();
                }
                Ok(s.u)
            })
            .unwrap();
            finals.push(out.into_iter().flatten().collect());
        }
        assert_eq!(finals[0].len(), finals[1].len());
        for (i, (a, b)) in finals[0].iter().zip(&finals[1]).enumerate() {
            assert_eq!(a.to_bits(), b.to_bits(), "value {i} differs across partitions");
        }
    }

    #[test]
    fn hex_solution_actually_advects() {
        // A sine advected one full period through the periodic box must
        // come back close to where it started, and must change in between.
        let mesh = generate_box_mesh(4, 4, 4, BoundingBox::new([0.0; 3], [1.0; 3])).unwrap();
        let cfg = KernelConfig {
            degree: 3,
            velocity: [1.0, 0.0, 0.0],
            cfl: 0.4,
            n_var: 1,
        };
        let init = |p: [f64; 3]| (std::f64::consts::TAU * p[0]).sin();
        let n = mesh.elements.len();
        let (mid_diff, final_diff) = run_cluster_all(1, DEFAULT_TIMEOUT, |comm| {
            let mut s = LocalSolver::new(&mesh, cfg.clone(), 0..n).unwrap();
            s.set_initial(init);
            let u0 = s.u.clone();
            let steps = 200usize;
            let dt = 1.0 / steps as f64;
            let mut mid = 0.0;
            for step in 0..steps {
                s.advance_step(&comm, dt).unwrap();
                if step == steps / 2 - 1 {
                    mid = rms_diff(&s.u, &u0);
                }
            }
            Ok((mid, rms_diff(&s.u, &u0)))
        })
        .unwrap()[0];
        assert!(mid_diff > 0.5, "half-period state should differ: {mid_diff}");
        assert!(final_diff < 0.05, "full-period return error {final_diff}");
    }

    fn rms_diff(a: &[f64], b: &[f64]) -> f64 {
        let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        (s / a.len() as f64).sqrt()
    }

    #[test]
    fn divergence_is_reported() {
        let mesh = generate_box_mesh(2, 2, 2, BoundingBox::new([0.0; 3], [1.0; 3])).unwrap();
        let cfg = KernelConfig {
            degree: 2,
            ..Default::default()
        };
        let n = mesh.elements.len();
        let res = run_cluster_all(1, DEFAULT_TIMEOUT, |comm| {
            let mut s = LocalSolver::new(&mesh, cfg.clone(), 0..n).unwrap();
            s.set_initial(|_| 1.0);
            s.u[0] = f64::NAN;
            match s.advance_step(&comm, s.kernel.dt_cfl) {
                Err(KernelError::Diverged { step }) => Ok(step),
                other => panic!("expected divergence, got {other:?}"),
            }
        })
        .unwrap();
        assert_eq!(res[0], 1);
    }

    #[test]
    fn even_ranges_cover_exactly() {
        for n in [0usize, 1, 7, 64] {
            for k in [1usize, 2, 3, 5] {
                let mut covered = 0;
                let mut prev_end = 0;
                for r in 0..k {
                    let range = even_range(n, r, k);
                    assert_eq!(range.start, prev_end);
                    prev_end = range.end;
                    covered += range.len();
                }
                assert_eq!(covered, n);
                assert_eq!(prev_end, n);
            }
        }
    }
}
