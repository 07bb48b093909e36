//! Displacement operators and the measures of distance from group matrices.
//!
//! Classical Sylvester/Stein operators are provided for the circulant case.
//! The group version works on the diagonal-basis form F(M): a matrix is a
//! group matrix exactly when every row of F(M) is constant, so D(M) takes the
//! difference of each row with a cyclic shift of itself.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::group::{ElemId, FiniteGroup};
use crate::group_matrix::{
    densify, f_of, gm_from_coeffs, m_of, pattern_means, Dense, DiagonalBasisForm,
    GroupMatrix, DEFAULT_TOL,
};
use crate::sampling::random_cycle;

/// Relative threshold for numerical rank.
pub const RANK_REL_TOL: f64 = 1e-9;

pub fn sylvester_displacement(a: &Dense, b: &Dense, m: &Dense) -> Result<Dense> {
    if a.nrows() != a.ncols() || b.nrows() != b.ncols() || a.ncols() != m.nrows() || m.ncols() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "A {:?}, B {:?}, M {:?}",
            a.shape(),
            b.shape(),
            m.shape()
        )));
    }
    Ok(a * m - m * b)
}

pub fn stein_displacement(a: &Dense, b: &Dense, m: &Dense) -> Result<Dense> {
    if a.nrows() != a.ncols() || b.nrows() != b.ncols() || a.ncols() != m.nrows() || m.ncols() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "A {:?}, B {:?}, M {:?}",
            a.shape(),
            b.shape(),
            m.shape()
        )));
    }
    Ok(m - a * m * b)
}

/// Numerical rank from column-pivoted QR, counting diagonal entries of R
/// above `max(rel·‖M‖_F, 1e-10)`. Returns the rank and the threshold used.
pub fn numerical_rank(m: &Dense, rel: f64) -> (usize, f64) {
    let tol = (rel * m.norm()).max(DEFAULT_TOL);
    if m.is_empty() || m.amax() <= tol {
        return (0, tol);
    }
    // QR is cheaper on the tall orientation.
    let tall = if m.nrows() >= m.ncols() { m.clone() } else { m.transpose() };
    let r = tall.col_piv_qr().unpack_r();
    let rank = (0..r.nrows().min(r.ncols()))
        .filter(|&i| r[(i, i)].abs() > tol)
        .count();
    (rank, tol)
}

#[derive(Debug, Clone)]
pub struct DisplacementResult {
    pub residual: Dense,
    pub rank: usize,
    pub rank_tol: f64,
}

impl DisplacementResult {
    fn from_residual(residual: Dense) -> Self {
        let (rank, rank_tol) = numerical_rank(&residual, RANK_REL_TOL);
        DisplacementResult {
            residual,
            rank,
            rank_tol,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.rank == 0
    }
}

/// Row-wise `F − PF` with `P(x_1, …, x_N) = (x_2, …, x_N, x_1)`, for any
/// row-array (rectangular forms come from padded windows).
pub fn row_cycle_difference(f: &Dense) -> Dense {
    let n = f.ncols();
    Dense::from_fn(f.nrows(), n, |g, j| f[(g, j)] - f[(g, (j + 1) % n)])
}

/// D(M) for the canonical column cycle.
pub fn displacement_d(form: &DiagonalBasisForm) -> DisplacementResult {
    DisplacementResult::from_residual(row_cycle_difference(form.matrix()))
}

/// D(M) straight from a dense matrix.
pub fn displacement_of(m: &Dense, group: &Arc<FiniteGroup>) -> Result<DisplacementResult> {
    Ok(displacement_d(&f_of(m, group)?))
}

/// One single-cycle permutation σ_g of the columns per row of F.
#[derive(Debug, Clone, PartialEq)]
pub struct PermutationFamily {
    sigmas: Vec<Vec<usize>>,
}

impl PermutationFamily {
    pub fn new(sigmas: Vec<Vec<usize>>) -> Result<Self> {
        let n = sigmas.len();
        for (row, s) in sigmas.iter().enumerate() {
            if s.len() != n {
                return Err(Error::InvalidFamily(format!(
                    "σ_{row} has length {}, expected {n}",
                    s.len()
                )));
            }
            if s.iter().any(|&x| x >= n) {
                return Err(Error::InvalidFamily(format!("σ_{row} maps out of range")));
            }
            // follow the cycle from 0; it must visit every column once
            let mut x = 0;
            let mut len = 0;
            loop {
                x = s[x];
                len += 1;
                if x == 0 || len > n {
                    break;
                }
            }
            if len != n || x != 0 {
                return Err(Error::InvalidFamily(format!("σ_{row} is not a single {n}-cycle")));
            }
        }
        Ok(PermutationFamily { sigmas })
    }

    /// Every row uses `j ↦ j + 1 mod n`, reproducing [`displacement_d`].
    pub fn canonical(n: usize) -> Self {
        let s: Vec<usize> = (0..n).map(|j| (j + 1) % n).collect();
        PermutationFamily {
            sigmas: vec![s; n],
        }
    }

    pub fn random(rng: &mut impl Rng, n: usize) -> Self {
        PermutationFamily {
            sigmas: (0..n).map(|_| random_cycle(rng, n)).collect(),
        }
    }

    pub fn sigmas(&self) -> &[Vec<usize>] {
        &self.sigmas
    }
}

/// `[D_P(M)]_{g,j} = F_{g,j} − F_{g,σ_g(j)}`.
pub fn displacement_d_family(form: &DiagonalBasisForm, family: &PermutationFamily) -> Result<DisplacementResult> {
    let f = form.matrix();
    if family.sigmas.len() != f.nrows() {
        return Err(Error::InvalidFamily(format!(
            "family of size {} for F with {} rows",
            family.sigmas.len(),
            f.nrows()
        )));
    }
    let residual = Dense::from_fn(f.nrows(), f.ncols(), |g, j| f[(g, j)] - f[(g, family.sigmas[g][j])]);
    Ok(DisplacementResult::from_residual(residual))
}

/// Dimension of the span of a set of equally-shaped matrices.
pub fn span_dimension(mats: &[Dense]) -> usize {
    let Some(first) = mats.first() else {
        return 0;
    };
    let len = first.len();
    let stacked = DMatrix::from_fn(len, mats.len(), |i, k| mats[k].as_slice()[i]);
    numerical_rank(&stacked, RANK_REL_TOL).0
}

/// dim_D of the class spanned by `basis`: rank of the stacked D(M_i).
pub fn displacement_dimension(basis: &[Dense], group: &Arc<FiniteGroup>) -> Result<usize> {
    let residuals = basis
        .iter()
        .map(|m| Ok(row_cycle_difference(f_of(m, group)?.matrix())))
        .collect::<Result<Vec<_>>>()?;
    Ok(span_dimension(&residuals))
}

/// dim_D computed with a per-row permutation family.
pub fn displacement_dimension_family(
    basis: &[Dense],
    group: &Arc<FiniteGroup>,
    family: &PermutationFamily,
) -> Result<usize> {
    let residuals = basis
        .iter()
        .map(|m| Ok(displacement_d_family(&f_of(m, group)?, family)?.residual))
        .collect::<Result<Vec<_>>>()?;
    Ok(span_dimension(&residuals))
}

/// Orthogonal projection onto the group matrices and the Frobenius distance.
#[derive(Debug, Clone)]
pub struct Projection {
    pub distance: f64,
    pub projection: GroupMatrix,
}

/// Group diagonals have disjoint supports, so the nearest group matrix takes
/// the mean of M over each pattern.
pub fn distance_to_gm(m: &Dense, group: &Arc<FiniteGroup>) -> Result<Projection> {
    let coeffs = pattern_means(m, group)?;
    let projection = gm_from_coeffs(group, &coeffs)?;
    let distance = (m - densify(&projection)).norm();
    Ok(Projection {
        distance,
        projection,
    })
}

/// Kernel `F(M) = 1 ⊗ b + Σ_i a_{g_i} ⊗ e_{g_i}`: a group matrix with
/// coefficients `b` plus free vectors in columns `g_i` of F (rows `g_i` of M).
#[derive(Debug, Clone)]
pub struct LdrKernel {
    group: Arc<FiniteGroup>,
    b: Vec<f64>,
    a_vectors: Vec<(ElemId, Vec<f64>)>,
}

impl LdrKernel {
    pub fn new(group: &Arc<FiniteGroup>, b: Vec<f64>, a_vectors: Vec<(ElemId, Vec<f64>)>) -> Result<Self> {
        let n = group.order();
        if b.len() != n {
            return Err(Error::DimensionMismatch(format!("b has length {}, expected {n}", b.len())));
        }
        let mut seen = vec![false; n];
        for (pos, a) in &a_vectors {
            group.check_id(*pos)?;
            if a.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "a-vector at {pos} has length {}, expected {n}",
                    a.len()
                )));
            }
            if std::mem::replace(&mut seen[*pos], true) {
                return Err(Error::DuplicatePosition(*pos));
            }
        }
        Ok(LdrKernel {
            group: group.clone(),
            b,
            a_vectors,
        })
    }

    pub fn group(&self) -> &Arc<FiniteGroup> {
        &self.group
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn a_vectors(&self) -> &[(ElemId, Vec<f64>)] {
        &self.a_vectors
    }

    pub fn rank_budget(&self) -> usize {
        self.a_vectors.len()
    }

    pub fn diagonal_form(&self) -> DiagonalBasisForm {
        let n = self.group.order();
        let mut f = Dense::from_fn(n, n, |g, _| self.b[g]);
        for (pos, a) in &self.a_vectors {
            for g in 0..n {
                f[(g, *pos)] += a[g];
            }
        }
        DiagonalBasisForm::new(&self.group, f).expect("square by construction")
    }

    pub fn to_dense(&self) -> Dense {
        m_of(&self.diagonal_form())
    }

    /// dim span{a_{g_i}}, which equals rank D(M) when fewer than |G| columns are used.
    pub fn span_rank(&self) -> usize {
        let n = self.group.order();
        if self.a_vectors.is_empty() {
            return 0;
        }
        let stacked = DMatrix::from_fn(n, self.a_vectors.len(), |i, k| self.a_vectors[k].1[i]);
        numerical_rank(&stacked, RANK_REL_TOL).0
    }
}

/// Assembles the dense matrix of an LDR kernel.
pub fn ldr_build(group: &Arc<FiniteGroup>, b: &[f64], a_vectors: &[(ElemId, Vec<f64>)]) -> Result<Dense> {
    Ok(LdrKernel::new(group, b.to_vec(), a_vectors.to_vec())?.to_dense())
}

/// Orthogonal projection of M onto the LDR class with the given positions:
/// columns `g_i` of F stay free, the rest are averaged into `b`.
pub fn ldr_project_params(m: &Dense, group: &Arc<FiniteGroup>, positions: &[ElemId]) -> Result<LdrKernel> {
    let form = f_of(m, group)?;
    let f = form.matrix();
    let n = group.order();
    let mut free = vec![false; n];
    for &p in positions {
        group.check_id(p)?;
        if std::mem::replace(&mut free[p], true) {
            return Err(Error::DuplicatePosition(p));
        }
    }
    let fixed: Vec<usize> = (0..n).filter(|&j| !free[j]).collect();
    let b: Vec<f64> = (0..n)
        .map(|g| {
            if fixed.is_empty() {
                0.0
            } else {
                fixed.iter().map(|&j| f[(g, j)]).sum::<f64>() / fixed.len() as f64
            }
        })
        .collect();
    let a_vectors = positions
        .iter()
        .map(|&p| (p, (0..n).map(|g| f[(g, p)] - b[g]).collect()))
        .collect();
    LdrKernel::new(group, b, a_vectors)
}

/// Basis of the LDR class with free `b` and free a-vectors at `positions`.
pub fn ldr_class_basis(group: &Arc<FiniteGroup>, positions: &[ElemId]) -> Result<Vec<Dense>> {
    let n = group.order();
    let mut basis = group_matrix_class_basis(group);
    for &p in positions {
        group.check_id(p)?;
        for g in 0..n {
            let mut a = vec![0.0; n];
            a[g] = 1.0;
            basis.push(ldr_build(group, &vec![0.0; n], &[(p, a)])?);
        }
    }
    Ok(basis)
}

/// The group diagonals, a basis of all group matrices.
pub fn group_matrix_class_basis(group: &Arc<FiniteGroup>) -> Vec<Dense> {
    let n = group.order();
    (0..n)
        .map(|g| {
            let mut e = vec![0.0; n];
            e[g] = 1.0;
            densify(&gm_from_coeffs(group, &e).expect("length matches"))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundMode {
    Transpose,
    Product,
    Sum,
    Kronecker,
}

/// Both sides of one item of the distance bounds.
#[derive(Debug, Clone, Serialize)]
pub struct DistanceBoundReport {
    pub mode: BoundMode,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// `dist(M, GM) = dist(Mᵀ, GM)` within `1e-10`.
pub fn check_distance_transpose(m: &Dense, group: &Arc<FiniteGroup>) -> Result<DistanceBoundReport> {
    let lhs = distance_to_gm(m, group)?.distance;
    let rhs = distance_to_gm(&m.transpose(), group)?.distance;
    Ok(DistanceBoundReport {
        mode: BoundMode::Transpose,
        lhs,
        rhs,
        holds: (lhs - rhs).abs() <= DEFAULT_TOL,
    })
}

/// `dist(MN, GM) ≤ max(‖M‖, ‖N‖)·(dist(M, GM) + dist(N, GM))`.
pub fn check_distance_product(m: &Dense, n: &Dense, group: &Arc<FiniteGroup>) -> Result<DistanceBoundReport> {
    if m.shape() != n.shape() {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", m.shape(), n.shape())));
    }
    let lhs = distance_to_gm(&(m * n), group)?.distance;
    let rhs = m.norm().max(n.norm())
        * (distance_to_gm(m, group)?.distance + distance_to_gm(n, group)?.distance);
    Ok(DistanceBoundReport {
        mode: BoundMode::Product,
        lhs,
        rhs,
        holds: lhs <= rhs + DEFAULT_TOL,
    })
}

/// `dist(M ⊗ N, GM^{G×H}) ≤ max(‖M‖, ‖N‖)·(dist(M, GM^G) + dist(N, GM^H))`.
pub fn check_distance_kronecker(
    m: &Dense,
    g: &Arc<FiniteGroup>,
    n: &Dense,
    h: &Arc<FiniteGroup>,
    product: &Arc<FiniteGroup>,
) -> Result<DistanceBoundReport> {
    if product.order() != g.order() * h.order() {
        return Err(Error::GroupMismatch);
    }
    let lhs = distance_to_gm(&m.kronecker(n), product)?.distance;
    let rhs = m.norm().max(n.norm()) * (distance_to_gm(m, g)?.distance + distance_to_gm(n, h)?.distance);
    Ok(DistanceBoundReport {
        mode: BoundMode::Kronecker,
        lhs,
        rhs,
        holds: lhs <= rhs + DEFAULT_TOL,
    })
}

/// One item of the displacement-dimension rules.
#[derive(Debug, Clone, Serialize)]
pub struct DimensionReport {
    pub mode: BoundMode,
    pub measured: usize,
    pub bound: usize,
    pub holds: bool,
    /// Whether `measured == bound`; only meaningful for the inequality items.
    pub equality: bool,
    /// Kronecker only: `d_M·dim N + dim M·d_N`, which always holds.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub product_rule_bound: Option<usize>,
}

/// `dim_D(Mᵀ) = dim_D(M)`.
pub fn check_dimension_transpose(basis: &[Dense], group: &Arc<FiniteGroup>) -> Result<DimensionReport> {
    let d = displacement_dimension(basis, group)?;
    let transposed: Vec<Dense> = basis.iter().map(|m| m.transpose()).collect();
    let dt = displacement_dimension(&transposed, group)?;
    Ok(DimensionReport {
        mode: BoundMode::Transpose,
        measured: dt,
        bound: d,
        holds: dt == d,
        equality: dt == d,
        product_rule_bound: None,
    })
}

/// `dim_D(M + M') ≤ dim_D(M) + dim_D(M')`.
pub fn check_dimension_sum(a: &[Dense], b: &[Dense], group: &Arc<FiniteGroup>) -> Result<DimensionReport> {
    let da = displacement_dimension(a, group)?;
    let db = displacement_dimension(b, group)?;
    let both: Vec<Dense> = a.iter().chain(b).cloned().collect();
    let d = displacement_dimension(&both, group)?;
    Ok(DimensionReport {
        mode: BoundMode::Sum,
        measured: d,
        bound: da + db,
        holds: d <= da + db,
        equality: d == da + db,
        product_rule_bound: None,
    })
}

/// `dim_D(M ⊗ N) ≤ dim_D(M) + dim_D(N)` with the class `{M ⊗ N}` spanned by
/// the pairwise products of the two bases.
///
/// The additive bound only holds when one side is a single matrix with
/// constant F-rows (or both classes are group matrices). Writing each F-row
/// as constant part plus remainder gives the general bound
/// `d_M·dim N + dim M·d_N`, reported as `product_rule_bound`.
pub fn check_dimension_kronecker(
    m: &[Dense],
    g: &Arc<FiniteGroup>,
    n: &[Dense],
    h: &Arc<FiniteGroup>,
    product: &Arc<FiniteGroup>,
) -> Result<DimensionReport> {
    if product.order() != g.order() * h.order() {
        return Err(Error::GroupMismatch);
    }
    let dm = displacement_dimension(m, g)?;
    let dn = displacement_dimension(n, h)?;
    let pairs: Vec<Dense> = m.iter().flat_map(|a| n.iter().map(move |b| a.kronecker(b))).collect();
    let d = displacement_dimension(&pairs, product)?;
    let product_rule = dm * span_dimension(n) + span_dimension(m) * dn;
    Ok(DimensionReport {
        mode: BoundMode::Kronecker,
        measured: d,
        bound: dm + dn,
        holds: d <= dm + dn,
        equality: d == dm + dn,
        product_rule_bound: Some(product_rule),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group_matrix::{group_diagonal, is_group_matrix};
    use crate::sampling::{random_dense, random_vec, rng};

    fn grp(g: FiniteGroup) -> Arc<FiniteGroup> {
        Arc::new(g)
    }

    fn shift(n: usize) -> Dense {
        Dense::from_fn(n, n, |i, j| if i == (j + 1) % n { 1.0 } else { 0.0 })
    }

    /// Rank by brute force: Gaussian elimination with full pivoting.
    fn rank_oracle(m: &Dense, tol: f64) -> usize {
        let mut a = m.clone();
        let mut rank = 0;
        let (rows, cols) = a.shape();
        let mut used_rows = vec![false; rows];
        for c in 0..cols {
            let Some(p) = (0..rows)
                .filter(|&r| !used_rows[r])
                .max_by(|&x, &y| a[(x, c)].abs().total_cmp(&a[(y, c)].abs()))
            else {
                break;
            };
            if a[(p, c)].abs() <= tol {
                continue;
            }
            used_rows[p] = true;
            rank += 1;
            for r in 0..rows {
                if r != p {
                    let factor = a[(r, c)] / a[(p, c)];
                    for k in 0..cols {
                        a[(r, k)] -= factor * a[(p, k)];
                    }
                }
            }
        }
        rank
    }

    #[test]
    fn classical_operators() {
        let mut r = rng(10);
        let i = Dense::identity(5, 5);
        let m = random_dense(&mut r, 5, 5);
        assert_eq!(sylvester_displacement(&i, &i, &m).unwrap().amax(), 0.0);

        let c = grp(FiniteGroup::cyclic(6).unwrap());
        let p = shift(6);
        let pinv = p.transpose();
        let circ = densify(&gm_from_coeffs(&c, &random_vec(&mut r, 6)).unwrap());
        // circulants commute with P: Δ_{P,P⁻¹} and ∇_{P,P} vanish, ∇_{P,P⁻¹} does not
        assert!(stein_displacement(&p, &pinv, &circ).unwrap().amax() < 1e-14);
        assert!(sylvester_displacement(&p, &p, &circ).unwrap().amax() < 1e-14);
        assert!(sylvester_displacement(&p, &pinv, &circ).unwrap().amax() > 1e-3);

        let u = nalgebra::DVector::from_vec(random_vec(&mut r, 6));
        let v = nalgebra::DVector::from_vec(random_vec(&mut r, 6));
        let noisy = &circ + &u * v.transpose();
        for res in [
            sylvester_displacement(&p, &p, &noisy).unwrap(),
            stein_displacement(&p, &pinv, &noisy).unwrap(),
        ] {
            let (rank, _) = numerical_rank(&res, RANK_REL_TOL);
            assert_eq!(rank, rank_oracle(&res, 1e-9));
            assert!((1..=2).contains(&rank));
        }

        assert!(sylvester_displacement(&p, &pinv, &Dense::zeros(5, 6)).is_err());
    }

    #[test]
    fn numerical_rank_agrees_with_elimination() {
        let mut r = rng(11);
        for _ in 0..50 {
            let k = r.random_range(0..5);
            let a = random_dense(&mut r, 7, k);
            let b = random_dense(&mut r, k, 9);
            let m = &a * &b;
            assert_eq!(numerical_rank(&m, RANK_REL_TOL).0, k);
            assert_eq!(rank_oracle(&m, 1e-9), k);
        }
    }

    #[test]
    fn d_vanishes_on_group_matrices() {
        let mut r = rng(12);
        for g in [
            FiniteGroup::cyclic(8).unwrap(),
            FiniteGroup::dihedral(4).unwrap(),
            FiniteGroup::symmetric(3).unwrap(),
        ] {
            let g = grp(g);
            let m = densify(&gm_from_coeffs(&g, &random_vec(&mut r, g.order())).unwrap());
            let d = displacement_of(&m, &g).unwrap();
            assert_eq!(d.rank, 0);
            assert_eq!(d.residual.amax(), 0.0);
        }
        let c4 = grp(FiniteGroup::cyclic(4).unwrap());
        assert_eq!(displacement_of(&Dense::zeros(4, 4), &c4).unwrap().rank, 0);
    }

    #[test]
    fn ldr_rank_examples() {
        let c6 = grp(FiniteGroup::cyclic(6).unwrap());
        let mut r = rng(13);
        let b = random_vec(&mut r, 6);
        let m0 = ldr_build(&c6, &b, &[]).unwrap();
        assert_eq!(m0, densify(&gm_from_coeffs(&c6, &b).unwrap()));

        let a1 = random_vec(&mut r, 6);
        let a2 = random_vec(&mut r, 6);
        let m2 = ldr_build(&c6, &b, &[(1, a1.clone()), (4, a2.clone())]).unwrap();
        assert_eq!(displacement_of(&m2, &c6).unwrap().rank, 2);

        // dependent a-vectors: rank equals span dimension 1
        let a3: Vec<f64> = a1.iter().map(|x| 2.0 * x).collect();
        let k = LdrKernel::new(&c6, b.clone(), vec![(1, a1.clone()), (3, a3)]).unwrap();
        assert_eq!(k.span_rank(), 1);
        assert_eq!(displacement_of(&k.to_dense(), &c6).unwrap().rank, 1);

        // a constant a-vector still occupies one column of F
        let ones = LdrKernel::new(&c6, b.clone(), vec![(2, vec![1.0; 6])]).unwrap();
        assert_eq!(displacement_of(&ones.to_dense(), &c6).unwrap().rank, ones.span_rank());

        assert!(matches!(
            ldr_build(&c6, &b, &[(1, a1.clone()), (1, a2)]),
            Err(Error::DuplicatePosition(1))
        ));
    }

    #[test]
    fn d_of_single_column_perturbation_has_rank_one() {
        let c5 = grp(FiniteGroup::cyclic(5).unwrap());
        let mut r = rng(14);
        let b = random_vec(&mut r, 5);
        let a = random_vec(&mut r, 5);
        let mut f = Dense::from_fn(5, 5, |g, _| b[g]);
        for g in 0..5 {
            f[(g, 3)] += a[g];
        }
        let form = DiagonalBasisForm::new(&c5, f).unwrap();
        assert_eq!(displacement_d(&form).rank, 1);
    }

    #[test]
    fn permutation_families() {
        let mut r = rng(15);
        let d4 = grp(FiniteGroup::dihedral(4).unwrap());
        let gm = densify(&gm_from_coeffs(&d4, &random_vec(&mut r, 8)).unwrap());
        let fam = PermutationFamily::random(&mut r, 8);
        let form = f_of(&gm, &d4).unwrap();
        assert_eq!(displacement_d_family(&form, &fam).unwrap().residual.amax(), 0.0);

        let canon = PermutationFamily::canonical(8);
        let m = random_dense(&mut r, 8, 8);
        let form = f_of(&m, &d4).unwrap();
        assert_eq!(
            displacement_d_family(&form, &canon).unwrap().residual,
            displacement_d(&form).residual
        );

        // one non-constant row of F → residual confined to that row
        let mut f = Dense::from_fn(8, 8, |g, _| g as f64);
        f[(5, 2)] += 1.0;
        let form = DiagonalBasisForm::new(&d4, f).unwrap();
        let res = displacement_d_family(&form, &fam).unwrap().residual;
        for g in 0..8 {
            let nz = res.row(g).amax() > 0.0;
            assert_eq!(nz, g == 5);
        }

        // two cycles of length 2 on 4 columns is not a single cycle
        assert!(matches!(
            PermutationFamily::new(vec![vec![1, 0, 3, 2]; 4]),
            Err(Error::InvalidFamily(_))
        ));
        assert!(PermutationFamily::new(vec![vec![1, 2, 3, 0]; 4]).is_ok());
    }

    #[test]
    fn dimension_examples() {
        let c8 = grp(FiniteGroup::cyclic(8).unwrap());
        assert_eq!(displacement_dimension(&group_matrix_class_basis(&c8), &c8).unwrap(), 0);
        assert_eq!(displacement_dimension(&[], &c8).unwrap(), 0);
        for (n, r) in [(8, 1), (8, 2), (12, 1)] {
            let g = grp(FiniteGroup::cyclic(n).unwrap());
            let positions: Vec<usize> = (0..r).map(|i| 2 * i + 1).collect();
            let basis = ldr_class_basis(&g, &positions).unwrap();
            assert_eq!(displacement_dimension(&basis, &g).unwrap(), n * r);
        }
    }

    #[test]
    fn family_does_not_change_dimension() {
        let mut r = rng(16);
        let s3 = grp(FiniteGroup::symmetric(3).unwrap());
        let basis = ldr_class_basis(&s3, &[0, 4]).unwrap();
        let d = displacement_dimension(&basis, &s3).unwrap();
        for _ in 0..5 {
            let fam = PermutationFamily::random(&mut r, 6);
            assert_eq!(displacement_dimension_family(&basis, &s3, &fam).unwrap(), d);
        }
    }

    #[test]
    fn distance_examples() {
        let c2 = grp(FiniteGroup::cyclic(2).unwrap());
        let eps = 0.3;
        let m = Dense::from_row_slice(2, 2, &[eps, 0.0, 0.0, 0.0]);
        let p = distance_to_gm(&m, &c2).unwrap();
        assert!((p.projection.coeffs()[0] - eps / 2.0).abs() < 1e-15);
        assert!((p.distance - eps / 2f64.sqrt()).abs() < 1e-15);

        let mut r = rng(17);
        let c6 = grp(FiniteGroup::cyclic(6).unwrap());
        let phi = random_vec(&mut r, 6);
        let gm = densify(&gm_from_coeffs(&c6, &phi).unwrap());
        let p = distance_to_gm(&gm, &c6).unwrap();
        assert!(p.distance < 1e-14);
        for (a, b) in p.projection.coeffs().iter().zip(&phi) {
            assert!((a - b).abs() < 1e-14);
        }

        // least-squares oracle over the span of the group diagonals
        let m = random_dense(&mut r, 6, 6);
        let basis = group_matrix_class_basis(&c6);
        let design = DMatrix::from_fn(36, 6, |i, k| basis[k].as_slice()[i]);
        let target = nalgebra::DVector::from_column_slice(m.as_slice());
        let sol = design.clone().svd(true, true).solve(&target, 1e-12).unwrap();
        let resid = (&design * &sol - &target).norm();
        let p = distance_to_gm(&m, &c6).unwrap();
        assert!((p.distance - resid).abs() < 1e-12);
        for k in 0..6 {
            assert!((p.projection.coeffs()[k] - sol[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn ldr_projection_recovers_parameters() {
        let mut r = rng(18);
        let d3 = grp(FiniteGroup::dihedral(3).unwrap());
        let b = random_vec(&mut r, 6);
        let a = random_vec(&mut r, 6);
        let m = ldr_build(&d3, &b, &[(2, a.clone())]).unwrap();
        let k = ldr_project_params(&m, &d3, &[2]).unwrap();
        assert!((k.to_dense() - &m).amax() < 1e-14);
        let gm = group_diagonal(&d3, 1).unwrap().to_dense();
        let k = ldr_project_params(&gm, &d3, &[]).unwrap();
        assert!(is_group_matrix(&k.to_dense(), &d3, 0.0).unwrap().is_group_matrix);
    }

    #[test]
    fn distance_bounds_on_group_matrices() {
        let mut r = rng(19);
        let c4 = grp(FiniteGroup::cyclic(4).unwrap());
        let a = densify(&gm_from_coeffs(&c4, &random_vec(&mut r, 4)).unwrap());
        let b = densify(&gm_from_coeffs(&c4, &random_vec(&mut r, 4)).unwrap());
        let rep = check_distance_product(&a, &b, &c4).unwrap();
        assert!(rep.lhs < 1e-14 && rep.rhs < 1e-14 && rep.holds);
        assert!(check_distance_transpose(&random_dense(&mut r, 4, 4), &c4).unwrap().holds);
    }

    #[test]
    fn dimension_rules_on_small_classes() {
        let c4 = grp(FiniteGroup::cyclic(4).unwrap());
        let gm = group_matrix_class_basis(&c4);
        assert_eq!(check_dimension_transpose(&gm, &c4).unwrap().measured, 0);
        // single-entry perturbations in disjoint rows of F
        let single = |g: usize, col: usize| {
            let mut f = Dense::zeros(4, 4);
            f[(g, col)] = 1.0;
            m_of(&DiagonalBasisForm::new(&c4, f).unwrap())
        };
        let rep = check_dimension_sum(&[single(0, 1)], &[single(2, 3)], &c4).unwrap();
        assert!(rep.holds && rep.equality);
        assert_eq!(rep.measured, 2);
    }

    #[test]
    fn kronecker_dimension_rule() {
        let c4 = grp(FiniteGroup::cyclic(4).unwrap());
        let c2 = grp(FiniteGroup::cyclic(2).unwrap());
        let p = grp(FiniteGroup::direct_product(&c4, &c2).unwrap());
        let ldr = ldr_class_basis(&c4, &[1]).unwrap();
        let gm4 = group_matrix_class_basis(&c4);
        let gm2 = group_matrix_class_basis(&c2);
        let id2 = vec![Dense::identity(2, 2)];
        let corner = vec![Dense::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])];

        let rep = check_dimension_kronecker(&gm4, &c4, &gm2, &c2, &p).unwrap();
        assert_eq!((rep.measured, rep.bound), (0, 0));
        let rep = check_dimension_kronecker(&ldr, &c4, &id2, &c2, &p).unwrap();
        assert_eq!((rep.measured, rep.bound), (4, 4));
        // the additive rule breaks once both sides carry several matrices
        let rep = check_dimension_kronecker(&ldr, &c4, &gm2, &c2, &p).unwrap();
        assert_eq!((rep.measured, rep.bound, rep.product_rule_bound), (8, 4, Some(8)));
        assert!(!rep.holds);
        let rep = check_dimension_kronecker(&gm4, &c4, &corner, &c2, &p).unwrap();
        assert_eq!((rep.measured, rep.bound, rep.product_rule_bound), (4, 1, Some(4)));
    }
}
