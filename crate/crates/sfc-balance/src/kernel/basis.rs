//! Per-element-type basis sets: interpolation nodes, quadrature weights,
//! generalized Vandermonde and the reference mass matrix.
//!
//! Hexes default to a nodal tensor-product basis on Legendre-Gauss points
//! (Vandermonde = identity). The non-hexahedral types carry a square modal
//! basis obtained by W-orthonormalizing monomials on a per-type point
//! lattice, so the projection problem is well conditioned and exactly
//! invertible for any constant Jacobian.

use super::KernelError;
use crate::mesh::ElementType;
use nalgebra::{Cholesky, DMatrix, DVector};

/// Highest supported polynomial degree.
pub const MAX_DEGREE: usize = 10;

/// How the hexahedral Vandermonde is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HexBasisKind {
    /// Nodal collocation basis; V is the identity.
    #[default]
    Nodal,
    /// Tensor-product Legendre modal basis.
    Modal,
}

#[derive(Debug, Clone)]
pub struct BasisSet {
    pub element_type: ElementType,
    pub degree: usize,
    pub n_nodes: usize,
    pub n_modes: usize,
    /// Interpolation/quadrature points in reference coordinates.
    pub nodes: Vec<[f64; 3]>,
    /// Diagonal quadrature weights; they sum to the reference volume.
    pub weights: Vec<f64>,
    /// Generalized Vandermonde, n_nodes x n_modes.
    pub v: DMatrix<f64>,
    /// V^T W V.
    pub reference_mass: DMatrix<f64>,
    /// Precomputed projection operator M^{-1} V^T W, n_modes x n_nodes.
    proj: DMatrix<f64>,
    /// Nodal differentiation matrices (d/dx, d/dy, d/dz in reference
    /// coordinates); absent for the nodal hex basis, which differentiates
    /// dimension-by-dimension instead.
    pub diff: Option<[DMatrix<f64>; 3]>,
}

/// Number of solution points/modes per element type at a given degree.
pub fn n_nodes_for(ty: ElementType, n: usize) -> usize {
    let n1 = n + 1;
    match ty {
        ElementType::Hex => n1 * n1 * n1,
        ElementType::Tet => n1 * (n + 2) * (n + 3) / 6,
        ElementType::Prism => n1 * n1 * (n + 2) / 2,
        ElementType::Pyramid => n1 * (n + 2) * (2 * n + 3) / 6,
    }
}

pub fn build_basis(ty: ElementType, degree: usize) -> Result<BasisSet, KernelError> {
    build_basis_with_options(ty, degree, HexBasisKind::default())
}

pub fn build_basis_with_options(
    ty: ElementType,
    degree: usize,
    hex_kind: HexBasisKind,
) -> Result<BasisSet, KernelError> {
    if degree > MAX_DEGREE {
        return Err(KernelError::UnsupportedDegree(degree));
    }
    match ty {
        ElementType::Hex => build_hex(degree, hex_kind),
        _ => build_modal(ty, degree),
    }
}

/// q_modal = M^{-1} V^T W J q_nodal with M = V^T W J V.
///
/// J is a constant per element here, so it cancels between the mass matrix
/// and the right-hand side and the projection collapses to one matvec with
/// the precomputed operator M^{-1} V^T W.
pub fn modal_project(basis: &BasisSet, jacobian: f64, q_nodal: &[f64]) -> Vec<f64> {
    debug_assert_eq!(q_nodal.len(), basis.n_nodes);
    debug_assert!(jacobian > 0.0);
    let out = &basis.proj * DVector::from_column_slice(q_nodal);
    out.as_slice().to_vec()
}

/// q_nodal = V q_modal.
pub fn modal_reconstruct(basis: &BasisSet, q_modal: &[f64]) -> Vec<f64> {
    debug_assert_eq!(q_modal.len(), basis.n_modes);
    let out = &basis.v * DVector::from_column_slice(q_modal);
    out.as_slice().to_vec()
}

/// 2-norm condition number of the Vandermonde.
pub fn vandermonde_condition(basis: &BasisSet) -> f64 {
    let svd = basis.v.clone().svd(false, false);
    let max = svd.singular_values.max();
    let min = svd.singular_values.min();
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

// ---------------------------------------------------------------------------
// 1D Legendre-Gauss machinery (shared with the hex tensor kernel).
// ---------------------------------------------------------------------------

/// Legendre-Gauss nodes and weights on [-1, 1].
pub fn gauss_legendre(n_points: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n_points >= 1);
    let n = n_points;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_deriv(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_deriv(n, x);
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    // Symmetrize to suppress asymmetric rounding.
    for i in 0..n / 2 {
        let m = 0.5 * (nodes[i].abs() + nodes[n - 1 - i].abs());
        nodes[i] = -m;
        nodes[n - 1 - i] = m;
        let w = 0.5 * (weights[i] + weights[n - 1 - i]);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_deriv(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Barycentric weights of an interpolation point set.
pub fn barycentric_weights(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut w = vec![1.0; n];
    for j in 0..n {
        for k in 0..n {
            if k != j {
                w[j] /= x[j] - x[k];
            }
        }
    }
    w
}

/// Lagrange differentiation matrix with the negative-sum trick, so a
/// constant differentiates to exactly zero.
pub fn differentiation_matrix(x: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    let w = barycentric_weights(x);
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut row_sum = 0.0;
        for j in 0..n {
            if i != j {
                let v = (w[j] / w[i]) / (x[i] - x[j]);
                d[(i, j)] = v;
                row_sum += v;
            }
        }
        d[(i, i)] = -row_sum;
    }
    d
}

/// Values of the Lagrange cardinal functions at point `at`.
pub fn lagrange_values(x: &[f64], at: f64) -> Vec<f64> {
    let n = x.len();
    let w = barycentric_weights(x);
    for (j, &xj) in x.iter().enumerate() {
        if (at - xj).abs() < 1e-14 {
            let mut out = vec![0.0; n];
            out[j] = 1.0;
            return out;
        }
    }
    let terms: Vec<f64> = (0..n).map(|j| w[j] / (at - x[j])).collect();
    let denom: f64 = terms.iter().sum();
    terms.iter().map(|t| t / denom).collect()
}

/// Normalized Legendre polynomial value (L2([-1,1]) norm one).
fn legendre_normalized(n: usize, x: f64) -> f64 {
    let mut p0 = 1.0;
    let mut p1 = x;
    let p = if n == 0 {
        1.0
    } else {
        for k in 2..=n {
            let kf = k as f64;
            let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
            p0 = p1;
            p1 = p2;
        }
        p1
    };
    p * ((2.0 * n as f64 + 1.0) / 2.0).sqrt()
}

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

fn build_hex(degree: usize, kind: HexBasisKind) -> Result<BasisSet, KernelError> {
    let n1 = degree + 1;
    let (x, wx) = gauss_legendre(n1);
    let n = n1 * n1 * n1;
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    // k outermost, i innermost: index = i + n1*(j + n1*k).
    for k in 0..n1 {
        for j in 0..n1 {
            for i in 0..n1 {
                nodes.push([x[i], x[j], x[k]]);
                weights.push(wx[i] * wx[j] * wx[k]);
            }
        }
    }
    let v = match kind {
        HexBasisKind::Nodal => DMatrix::identity(n, n),
        HexBasisKind::Modal => {
            let mut v = DMatrix::zeros(n, n);
            for (row, p) in nodes.iter().enumerate() {
                let mut col = 0;
                for kk in 0..n1 {
                    for jj in 0..n1 {
                        for ii in 0..n1 {
                            v[(row, col)] = legendre_normalized(ii, p[0])
                                * legendre_normalized(jj, p[1])
                                * legendre_normalized(kk, p[2]);
                            col += 1;
                        }
                    }
                }
            }
            v
        }
    };
    finish(ElementType::Hex, degree, nodes, weights, v, None)
}

fn build_modal(ty: ElementType, degree: usize) -> Result<BasisSet, KernelError> {
    let exps = monomial_exponents(ty, degree);
    let nodes = reference_nodes(ty, degree);
    let n = exps.len();
    assert_eq!(nodes.len(), n);
    assert_eq!(n, n_nodes_for(ty, degree));
    let weights = vec![ty.reference_volume() / n as f64; n];

    let mono = monomial_vandermonde(&nodes, &exps);
    // W-orthonormalize (two Gram-Schmidt passes) so the reference mass is
    // numerically the identity and projection roundtrips stay tight.
    let v = gram_schmidt_w(&mono, &weights).ok_or(KernelError::SingularBasis {
        element_type: ty,
        degree,
    })?;

    // Nodal differentiation from the raw monomial basis: D = dMono * Mono^-1.
    let inv = mono
        .clone()
        .lu()
        .try_inverse()
        .ok_or(KernelError::SingularBasis {
            element_type: ty,
            degree,
        })?;
    let mut diff_mats = Vec::with_capacity(3);
    for axis in 0..3 {
        let dmono = monomial_vandermonde_deriv(&nodes, &exps, axis);
        let mut d = dmono * &inv;
        // Negative-sum trick: constants differentiate to exactly zero.
        for i in 0..n {
            let mut row_sum = 0.0;
            for j in 0..n {
                if j != i {
                    row_sum += d[(i, j)];
                }
            }
            d[(i, i)] = -row_sum;
        }
        diff_mats.push(d);
    }
    let diff: [DMatrix<f64>; 3] = diff_mats.try_into().unwrap();

    finish(ty, degree, nodes, weights, v, Some(diff))
}

fn finish(
    ty: ElementType,
    degree: usize,
    nodes: Vec<[f64; 3]>,
    weights: Vec<f64>,
    v: DMatrix<f64>,
    diff: Option<[DMatrix<f64>; 3]>,
) -> Result<BasisSet, KernelError> {
    let n = nodes.len();
    let w_diag = DMatrix::from_diagonal(&DVector::from_vec(weights.clone()));
    let reference_mass = v.transpose() * &w_diag * &v;
    let mass_chol = Cholesky::new(reference_mass.clone()).ok_or(KernelError::SingularBasis {
        element_type: ty,
        degree,
    })?;
    let proj = mass_chol.solve(&(v.transpose() * &w_diag));
    Ok(BasisSet {
        element_type: ty,
        degree,
        n_nodes: n,
        n_modes: n,
        nodes,
        weights,
        v,
        reference_mass,
        proj,
        diff,
    })
}

fn monomial_vandermonde(nodes: &[[f64; 3]], exps: &[[usize; 3]]) -> DMatrix<f64> {
    let n = nodes.len();
    let mut a = DMatrix::zeros(n, exps.len());
    for (r, p) in nodes.iter().enumerate() {
        for (c, e) in exps.iter().enumerate() {
            a[(r, c)] = p[0].powi(e[0] as i32) * p[1].powi(e[1] as i32) * p[2].powi(e[2] as i32);
        }
    }
    a
}

fn monomial_vandermonde_deriv(nodes: &[[f64; 3]], exps: &[[usize; 3]], axis: usize) -> DMatrix<f64> {
    let n = nodes.len();
    let mut a = DMatrix::zeros(n, exps.len());
    for (r, p) in nodes.iter().enumerate() {
        for (c, e) in exps.iter().enumerate() {
            if e[axis] == 0 {
                continue;
            }
            let mut val = e[axis] as f64;
            for d in 0..3 {
                let pow = if d == axis { e[d] - 1 } else { e[d] };
                val *= p[d].powi(pow as i32);
            }
            a[(r, c)] = val;
        }
    }
    a
}

/// Modified Gram-Schmidt in the W inner product, applied twice.
fn gram_schmidt_w(a: &DMatrix<f64>, w: &[f64]) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let m = a.ncols();
    let mut q = a.clone();
    let dot = |q: &DMatrix<f64>, i: usize, j: usize| -> f64 {
        (0..n).map(|r| w[r] * q[(r, i)] * q[(r, j)]).sum()
    };
    for _pass in 0..2 {
        for j in 0..m {
            for i in 0..j {
                let r = dot(&q, i, j);
                for row in 0..n {
                    let qi = q[(row, i)];
                    q[(row, j)] -= r * qi;
                }
            }
            let norm = dot(&q, j, j).sqrt();
            if !(norm > 1e-12) {
                return None;
            }
            for row in 0..n {
                q[(row, j)] /= norm;
            }
        }
    }
    Some(q)
}

// ---------------------------------------------------------------------------
// Reference point sets and mode sets
// ---------------------------------------------------------------------------

fn monomial_exponents(ty: ElementType, n: usize) -> Vec<[usize; 3]> {
    let mut exps = Vec::new();
    match ty {
        ElementType::Hex => {
            for k in 0..=n {
                for j in 0..=n {
                    for i in 0..=n {
                        exps.push([i, j, k]);
                    }
                }
            }
        }
        ElementType::Tet => {
            for k in 0..=n {
                for j in 0..=n - k {
                    for i in 0..=n - k - j {
                        exps.push([i, j, k]);
                    }
                }
            }
        }
        ElementType::Prism => {
            for k in 0..=n {
                for j in 0..=n {
                    for i in 0..=n - j {
                        exps.push([i, j, k]);
                    }
                }
            }
        }
        ElementType::Pyramid => {
            for k in 0..=n {
                for j in 0..=n - k {
                    for i in 0..=n - k {
                        exps.push([i, j, k]);
                    }
                }
            }
        }
    }
    // Constant mode first so the basis starts with the constant function.
    debug_assert_eq!(exps[0], [0, 0, 0]);
    exps
}

fn reference_nodes(ty: ElementType, n: usize) -> Vec<[f64; 3]> {
    if n == 0 {
        return vec![match ty {
            ElementType::Hex => [0.0, 0.0, 0.0],
            ElementType::Tet => [0.25, 0.25, 0.25],
            ElementType::Prism => [1.0 / 3.0, 1.0 / 3.0, 0.5],
            ElementType::Pyramid => [0.0, 0.0, 0.25],
        }];
    }
    let nf = n as f64;
    let mut pts = Vec::new();
    match ty {
        ElementType::Hex => {
            for k in 0..=n {
                for j in 0..=n {
                    for i in 0..=n {
                        pts.push([
                            -1.0 + 2.0 * i as f64 / nf,
                            -1.0 + 2.0 * j as f64 / nf,
                            -1.0 + 2.0 * k as f64 / nf,
                        ]);
                    }
                }
            }
        }
        ElementType::Tet => {
            // Principal lattice of the unit simplex.
            for k in 0..=n {
                for j in 0..=n - k {
                    for i in 0..=n - k - j {
                        pts.push([i as f64 / nf, j as f64 / nf, k as f64 / nf]);
                    }
                }
            }
        }
        ElementType::Prism => {
            for k in 0..=n {
                for j in 0..=n {
                    for i in 0..=n - j {
                        pts.push([i as f64 / nf, j as f64 / nf, k as f64 / nf]);
                    }
                }
            }
        }
        ElementType::Pyramid => {
            // Square cross-section lattice shrinking towards the apex.
            for k in 0..=n {
                let z = k as f64 / nf;
                let m = n - k + 1;
                let s = 1.0 - z;
                for j in 0..m {
                    for i in 0..m {
                        let coord = |idx: usize| {
                            if m == 1 {
                                0.0
                            } else {
                                -s + 2.0 * s * idx as f64 / (m - 1) as f64
                            }
                        };
                        pts.push([coord(i), coord(j), z]);
                    }
                }
            }
        }
    }
    pts
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn hex_n0_is_unit_matrix() {
        let b = build_basis(ElementType::Hex, 0).unwrap();
        assert_eq!(b.n_nodes, 1);
        assert_eq!(b.v[(0, 0)], 1.0);
    }

    #[test]
    fn degree_cap_enforced() {
        assert!(matches!(
            build_basis(ElementType::Tet, 11),
            Err(KernelError::UnsupportedDegree(11))
        ));
    }

    #[test]
    fn tet_n2_condition_finite() {
        let b = build_basis(ElementType::Tet, 2).unwrap();
        let cond = vandermonde_condition(&b);
        assert!(cond.is_finite() && cond < 1e6, "cond = {cond}");
    }

    #[test]
    fn all_types_build_up_to_degree_six() {
        for ty in ElementType::ALL {
            for n in 0..=6 {
                let b = build_basis(ty, n).unwrap();
                assert_eq!(b.n_nodes, n_nodes_for(ty, n), "{ty:?} N={n}");
                // Reference mass symmetric.
                let m = &b.reference_mass;
                for i in 0..b.n_modes {
                    for j in 0..b.n_modes {
                        assert!((m[(i, j)] - m[(j, i)]).abs() < 1e-13);
                    }
                }
                // Weights sum to the reference volume.
                let wsum: f64 = b.weights.iter().sum();
                assert!((wsum - ty.reference_volume()).abs() < 1e-12 * ty.reference_volume());
            }
        }
    }

    #[test]
    fn project_zero_gives_zero() {
        let b = build_basis(ElementType::Tet, 3).unwrap();
        let q = vec![0.0; b.n_nodes];
        assert!(modal_project(&b, 2.5, &q).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn project_pure_mode_gives_unit_vector() {
        for ty in [ElementType::Tet, ElementType::Prism, ElementType::Pyramid] {
            let b = build_basis(ty, 3).unwrap();
            let k = b.n_modes / 2;
            let q: Vec<f64> = (0..b.n_nodes).map(|i| b.v[(i, k)]).collect();
            let modal = modal_project(&b, 1.7, &q);
            for (i, &m) in modal.iter().enumerate() {
                let expect = if i == k { 1.0 } else { 0.0 };
                assert!((m - expect).abs() < 1e-10, "{ty:?} mode {i}: {m}");
            }
        }
    }

    #[test]
    fn roundtrip_random_state() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for ty in ElementType::ALL {
            for n in [1usize, 3, 5] {
                let b = build_basis_with_options(ty, n, HexBasisKind::Modal).unwrap();
                let q: Vec<f64> = (0..b.n_nodes).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let j = 0.37;
                // Oracle: dense factorization of the full mass matrix,
                // independent of the Cholesky path used by modal_project.
                let w = DMatrix::from_diagonal(&DVector::from_vec(
                    b.weights.iter().map(|&x| x * j).collect(),
                ));
                let m_phys = b.v.transpose() * &w * &b.v;
                let rhs = b.v.transpose() * &w * DVector::from_column_slice(&q);
                let modal_oracle = m_phys.lu().solve(&rhs).unwrap();

                let modal = modal_project(&b, j, &q);
                for i in 0..b.n_modes {
                    assert!((modal[i] - modal_oracle[i]).abs() < 1e-9, "{ty:?} N={n}");
                }
                let back = modal_reconstruct(&b, &modal);
                for i in 0..b.n_nodes {
                    assert!((back[i] - q[i]).abs() < 1e-10, "{ty:?} N={n} node {i}");
                }
            }
        }
    }

    #[test]
    fn projection_idempotent() {
        let b = build_basis(ElementType::Pyramid, 4).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let modal: Vec<f64> = (0..b.n_modes).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let nodal = modal_reconstruct(&b, &modal);
        let again = modal_project(&b, 3.0, &nodal);
        for i in 0..b.n_modes {
            assert!((again[i] - modal[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn gauss_legendre_integrates_exactly() {
        let (x, w) = gauss_legendre(4);
        // Exact for degree <= 7: integral of x^6 over [-1,1] = 2/7.
        let integral: f64 = x.iter().zip(&w).map(|(&xi, &wi)| wi * xi.powi(6)).sum();
        assert!((integral - 2.0 / 7.0).abs() < 1e-14);
        let wsum: f64 = w.iter().sum();
        assert!((wsum - 2.0).abs() < 1e-14);
    }

    #[test]
    fn differentiation_matrix_exact_for_polynomials() {
        let (x, _) = gauss_legendre(5);
        let d = differentiation_matrix(&x);
        // d/dx of x^3 at the nodes.
        for i in 0..x.len() {
            let val: f64 = (0..x.len()).map(|j| d[(i, j)] * x[j].powi(3)).sum();
            assert!((val - 3.0 * x[i] * x[i]).abs() < 1e-12);
        }
        // Row sums are zero to rounding (negative-sum trick).
        for i in 0..x.len() {
            let val: f64 = (0..x.len()).map(|j| d[(i, j)] * 1.0).sum();
            assert!(val.abs() < 1e-13);
        }
    }

    #[test]
    fn nodal_diff_matrices_kill_constants() {
        for ty in [ElementType::Tet, ElementType::Prism, ElementType::Pyramid] {
            let b = build_basis(ty, 4).unwrap();
            let diff = b.diff.as_ref().unwrap();
            for d in diff {
                for i in 0..b.n_nodes {
                    let s: f64 = (0..b.n_nodes).map(|j| d[(i, j)]).sum();
                    let scale: f64 = (0..b.n_nodes).map(|j| d[(i, j)].abs()).sum();
                    assert!(s.abs() <= 1e-13 * scale.max(1.0), "{ty:?}: {s}");
                }
            }
        }
    }
}
