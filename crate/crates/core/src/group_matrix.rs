//! Group diagonals B_g, group matrices Σ φ(g) B_g and the diagonal-basis
//! reshuffle F(M) of a general matrix.
//!
//! `(B_g)_{h,h'} = 1` iff `h = g h'`. A diagonal is stored as the column index
//! of the single one in each row, `g⁻¹h`, and applied as a gather.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::group::{ElemId, FiniteGroup, Subgroup};

pub type Dense = DMatrix<f64>;

/// Default absolute tolerance for floating-point structure checks.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Inversions with a larger condition number are refused.
pub const MAX_INVERSE_CONDITION: f64 = 1e12;

pub(crate) fn same_group(a: &Arc<FiniteGroup>, b: &Arc<FiniteGroup>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

/// The permutation matrix B_g as a row → column index array.
#[derive(Debug, Clone)]
pub struct GroupDiagonal {
    group: Arc<FiniteGroup>,
    element: ElemId,
    col_of_row: Vec<usize>,
}

/// Builds B_g for `g` in `group`.
pub fn group_diagonal(group: &Arc<FiniteGroup>, g: ElemId) -> Result<GroupDiagonal> {
    group.check_id(g)?;
    let gi = group.inv(g);
    Ok(GroupDiagonal {
        group: group.clone(),
        element: g,
        col_of_row: (0..group.order()).map(|h| group.mul(gi, h)).collect(),
    })
}

impl GroupDiagonal {
    pub fn group(&self) -> &Arc<FiniteGroup> {
        &self.group
    }

    pub fn element(&self) -> ElemId {
        self.element
    }

    pub fn col_of_row(&self) -> &[usize] {
        &self.col_of_row
    }

    /// `B_g x`, i.e. `y[h] = x[g⁻¹h]`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.col_of_row.iter().map(|&c| x[c]).collect()
    }

    /// `B_gᵀ x = B_{g⁻¹} x`.
    pub fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        for (row, &col) in self.col_of_row.iter().enumerate() {
            y[col] = x[row];
        }
        y
    }

    pub fn to_dense(&self) -> Dense {
        let n = self.col_of_row.len();
        let mut m = Dense::zeros(n, n);
        for (row, &col) in self.col_of_row.iter().enumerate() {
            m[(row, col)] = 1.0;
        }
        m
    }
}

/// A matrix `Σ_g φ(g) B_g` held by its coefficient vector φ.
#[derive(Debug, Clone)]
pub struct GroupMatrix {
    group: Arc<FiniteGroup>,
    coeffs: Vec<f64>,
}

pub fn gm_from_coeffs(group: &Arc<FiniteGroup>, phi: &[f64]) -> Result<GroupMatrix> {
    if phi.len() != group.order() {
        return Err(Error::DimensionMismatch(format!(
            "{} coefficients for a group of order {}",
            phi.len(),
            group.order()
        )));
    }
    Ok(GroupMatrix {
        group: group.clone(),
        coeffs: phi.to_vec(),
    })
}

impl GroupMatrix {
    pub fn group(&self) -> &Arc<FiniteGroup> {
        &self.group
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn densify(&self) -> Dense {
        densify(self)
    }

    /// `M ψ` without forming the dense matrix: `(Mψ)(x) = Σ_g φ(g) ψ(g⁻¹x)`.
    pub fn apply(&self, psi: &[f64]) -> Vec<f64> {
        let g = &self.group;
        let mut y = vec![0.0; g.order()];
        for (el, &c) in self.coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let gi = g.inv(el);
            for (x, yx) in y.iter_mut().enumerate() {
                *yx += c * psi[g.mul(gi, x)];
            }
        }
        y
    }
}

pub fn densify(m: &GroupMatrix) -> Dense {
    let g = &m.group;
    let n = g.order();
    Dense::from_fn(n, n, |h, hp| m.coeffs[g.mul(h, g.inv(hp))])
}

fn check_same(a: &GroupMatrix, b: &GroupMatrix) -> Result<()> {
    if same_group(&a.group, &b.group) {
        Ok(())
    } else {
        Err(Error::GroupMismatch)
    }
}

/// `Mᵀ` has coefficients `φ(g⁻¹)`.
pub fn gm_transpose(m: &GroupMatrix) -> GroupMatrix {
    let g = &m.group;
    GroupMatrix {
        group: g.clone(),
        coeffs: (0..g.order()).map(|x| m.coeffs[g.inv(x)]).collect(),
    }
}

/// `M M'` has coefficients `(φ ∗ φ')(x) = Σ_{gh = x} φ(g) φ'(h)`.
pub fn gm_multiply(a: &GroupMatrix, b: &GroupMatrix) -> Result<GroupMatrix> {
    check_same(a, b)?;
    let g = &a.group;
    let mut coeffs = vec![0.0; g.order()];
    for (x, &ca) in a.coeffs.iter().enumerate() {
        if ca == 0.0 {
            continue;
        }
        for (y, &cb) in b.coeffs.iter().enumerate() {
            coeffs[g.mul(x, y)] += ca * cb;
        }
    }
    Ok(GroupMatrix {
        group: g.clone(),
        coeffs,
    })
}

/// 2-norm condition number from the singular values.
pub fn condition_number(m: &Dense) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Dense LU inverse, then coefficients re-read as pattern means. Fails when
/// the condition number exceeds [`MAX_INVERSE_CONDITION`] or the inverse
/// deviates from a group matrix by more than `1e-8·cond`.
pub fn gm_inverse(m: &GroupMatrix) -> Result<GroupMatrix> {
    let dense = densify(m);
    let cond = condition_number(&dense);
    if !cond.is_finite() || cond > MAX_INVERSE_CONDITION {
        return Err(Error::NoInverse(cond));
    }
    let inv = dense.lu().try_inverse().ok_or(Error::NoInverse(cond))?;
    let check = is_group_matrix(&inv, &m.group, f64::INFINITY)?;
    let allowed = 1e-8 * cond;
    if check.deviation > allowed {
        return Err(Error::InexactInverse {
            deviation: check.deviation,
            allowed,
        });
    }
    Ok(GroupMatrix {
        group: m.group.clone(),
        coeffs: pattern_means(&inv, &m.group)?,
    })
}

/// `M ⊗ N` over G × H, coefficients `φ_M(g) φ_N(h)` at id `g·|H| + h`.
pub fn gm_kronecker(m: &GroupMatrix, n: &GroupMatrix) -> Result<GroupMatrix> {
    let product = Arc::new(FiniteGroup::direct_product(&m.group, &n.group)?);
    gm_kronecker_in(m, n, &product)
}

/// Same as [`gm_kronecker`] with a prebuilt product group.
pub fn gm_kronecker_in(m: &GroupMatrix, n: &GroupMatrix, product: &Arc<FiniteGroup>) -> Result<GroupMatrix> {
    let nh = n.group.order();
    if product.order() != m.group.order() * nh {
        return Err(Error::GroupMismatch);
    }
    let coeffs = m
        .coeffs
        .iter()
        .flat_map(|&a| n.coeffs.iter().map(move |&b| a * b))
        .collect();
    Ok(GroupMatrix {
        group: product.clone(),
        coeffs,
    })
}

/// Restricts B_g (with `g ∈ H`) to the rows and columns of H, giving the
/// H-group diagonal over the subgroup's local ids.
pub fn restrict_to_subgroup(b: &GroupDiagonal, h: &Subgroup) -> Result<GroupDiagonal> {
    if !same_group(&b.group, h.parent()) {
        return Err(Error::GroupMismatch);
    }
    let local_g = h.local_id(b.element).ok_or_else(|| {
        Error::InvalidRestriction(format!("{} is not in the subgroup", b.group.label(b.element)))
    })?;
    let col_of_row = h
        .members()
        .iter()
        .map(|&row| {
            let col = b.col_of_row[row];
            h.local_id(col).ok_or_else(|| {
                Error::InvalidRestriction(format!("row {row} maps outside the subgroup"))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GroupDiagonal {
        group: h.as_group().clone(),
        element: local_g,
        col_of_row,
    })
}

/// F(M): row `g`, column `h` holds `M[h, g⁻¹h]`, the entry of M on the
/// support of B_g in row h.
#[derive(Debug, Clone)]
pub struct DiagonalBasisForm {
    group: Arc<FiniteGroup>,
    f: Dense,
}

impl DiagonalBasisForm {
    pub fn new(group: &Arc<FiniteGroup>, f: Dense) -> Result<Self> {
        let n = group.order();
        if f.shape() != (n, n) {
            return Err(Error::DimensionMismatch(format!(
                "F is {:?}, group order {n}",
                f.shape()
            )));
        }
        Ok(DiagonalBasisForm {
            group: group.clone(),
            f,
        })
    }

    pub fn group(&self) -> &Arc<FiniteGroup> {
        &self.group
    }

    pub fn matrix(&self) -> &Dense {
        &self.f
    }

    pub fn into_matrix(self) -> Dense {
        self.f
    }
}

fn check_square(m: &Dense, group: &FiniteGroup) -> Result<()> {
    let n = group.order();
    if m.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "matrix is {:?}, group order {n}",
            m.shape()
        )));
    }
    Ok(())
}

pub fn f_of(m: &Dense, group: &Arc<FiniteGroup>) -> Result<DiagonalBasisForm> {
    check_square(m, group)?;
    let n = group.order();
    let f = Dense::from_fn(n, n, |g, h| m[(h, group.mul(group.inv(g), h))]);
    Ok(DiagonalBasisForm {
        group: group.clone(),
        f,
    })
}

/// Inverse reshuffle: `M[h, h'] = F[h h'⁻¹, h]`.
pub fn m_of(form: &DiagonalBasisForm) -> Dense {
    let g = &form.group;
    let n = g.order();
    Dense::from_fn(n, n, |h, hp| form.f[(g.mul(h, g.inv(hp)), h)])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupMatrixCheck {
    pub is_group_matrix: bool,
    /// Largest max−min spread over the group-diagonal patterns.
    pub deviation: f64,
}

/// Checks that M is constant on the support of every B_g.
pub fn is_group_matrix(m: &Dense, group: &Arc<FiniteGroup>, tol: f64) -> Result<GroupMatrixCheck> {
    check_square(m, group)?;
    let n = group.order();
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for h in 0..n {
        for hp in 0..n {
            let g = group.mul(h, group.inv(hp));
            let v = m[(h, hp)];
            lo[g] = lo[g].min(v);
            hi[g] = hi[g].max(v);
        }
    }
    let deviation = lo
        .iter()
        .zip(&hi)
        .map(|(l, h)| h - l)
        .fold(0.0, f64::max);
    Ok(GroupMatrixCheck {
        is_group_matrix: deviation <= tol,
        deviation,
    })
}

/// Mean of M over the support of each B_g.
pub fn pattern_means(m: &Dense, group: &Arc<FiniteGroup>) -> Result<Vec<f64>> {
    check_square(m, group)?;
    let n = group.order();
    let mut sums = vec![0.0; n];
    for h in 0..n {
        for hp in 0..n {
            sums[group.mul(h, group.inv(hp))] += m[(h, hp)];
        }
    }
    Ok(sums.into_iter().map(|s| s / n as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{random_dense, random_vec, rng};

    fn grp(g: FiniteGroup) -> Arc<FiniteGroup> {
        Arc::new(g)
    }

    #[test]
    fn diagonal_of_c3() {
        let c3 = grp(FiniteGroup::cyclic(3).unwrap());
        let b = group_diagonal(&c3, 1).unwrap();
        assert_eq!(b.col_of_row(), &[2, 0, 1]);
        let d = b.to_dense();
        let expect = Dense::from_row_slice(3, 3, &[0., 0., 1., 1., 0., 0., 0., 1., 0.]);
        assert_eq!(d, expect);
        assert_eq!(group_diagonal(&c3, 0).unwrap().to_dense(), Dense::identity(3, 3));
        assert!(group_diagonal(&c3, 3).is_err());
    }

    #[test]
    fn diagonal_one_is_cyclic_shift() {
        // canonical cyclic permutation e_i ↦ e_{i+1}
        for n in 2..7 {
            let c = grp(FiniteGroup::cyclic(n).unwrap());
            let p = Dense::from_fn(n, n, |i, j| if i == (j + 1) % n { 1.0 } else { 0.0 });
            assert_eq!(group_diagonal(&c, 1).unwrap().to_dense(), p);
        }
    }

    #[test]
    fn dense_diagonals_match_definition() {
        for g in [FiniteGroup::dihedral(3).unwrap(), FiniteGroup::symmetric(3).unwrap()] {
            let g = grp(g);
            for el in 0..g.order() {
                let d = group_diagonal(&g, el).unwrap().to_dense();
                for h in 0..g.order() {
                    for hp in 0..g.order() {
                        let one = h == g.mul(el, hp);
                        assert_eq!(d[(h, hp)], if one { 1.0 } else { 0.0 });
                    }
                }
                assert_eq!(d.row_sum().iter().sum::<f64>(), g.order() as f64);
            }
        }
    }

    #[test]
    fn densify_identity_and_circulant() {
        let c5 = grp(FiniteGroup::cyclic(5).unwrap());
        let e = gm_from_coeffs(&c5, &[1., 0., 0., 0., 0.]).unwrap();
        assert_eq!(densify(&e), Dense::identity(5, 5));
        let phi = [1., 2., 3., 4., 5.];
        let m = densify(&gm_from_coeffs(&c5, &phi).unwrap());
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(m[(i, j)], phi[(i + 5 - j) % 5]);
            }
        }
        assert!(gm_from_coeffs(&c5, &[1.0]).is_err());
    }

    #[test]
    fn densify_is_sum_of_diagonals() {
        let d3 = grp(FiniteGroup::dihedral(3).unwrap());
        let mut r = rng(1);
        let phi = random_vec(&mut r, 6);
        let m = densify(&gm_from_coeffs(&d3, &phi).unwrap());
        let mut sum = Dense::zeros(6, 6);
        for g in 0..6 {
            sum += group_diagonal(&d3, g).unwrap().to_dense() * phi[g];
        }
        assert_eq!(m, sum);
        assert_eq!(is_group_matrix(&m, &d3, 0.0).unwrap().deviation, 0.0);
    }

    #[test]
    fn diagonal_algebra() {
        let s3 = grp(FiniteGroup::symmetric(3).unwrap());
        for a in 0..6 {
            let mut ea = vec![0.0; 6];
            ea[a] = 1.0;
            let ba = gm_from_coeffs(&s3, &ea).unwrap();
            let t = gm_transpose(&ba);
            assert_eq!(densify(&t), group_diagonal(&s3, s3.inv(a)).unwrap().to_dense());
            assert_eq!(densify(&t), densify(&ba).transpose());
            for b in 0..6 {
                let mut eb = vec![0.0; 6];
                eb[b] = 1.0;
                let bb = gm_from_coeffs(&s3, &eb).unwrap();
                let p = gm_multiply(&ba, &bb).unwrap();
                assert_eq!(densify(&p), group_diagonal(&s3, s3.mul(a, b)).unwrap().to_dense());
            }
        }
    }

    #[test]
    fn inverse_of_identity_and_singular() {
        let c4 = grp(FiniteGroup::cyclic(4).unwrap());
        let e = gm_from_coeffs(&c4, &[1., 0., 0., 0.]).unwrap();
        assert_eq!(gm_inverse(&e).unwrap().coeffs(), &[1., 0., 0., 0.]);
        let ones = gm_from_coeffs(&c4, &[1., 1., 1., 1.]).unwrap();
        assert!(matches!(gm_inverse(&ones), Err(Error::NoInverse(_))));
        let other = grp(FiniteGroup::cyclic(4).unwrap().with_generators(&[1]).unwrap());
        // same table, different generators: still the same group algebra
        let e2 = gm_from_coeffs(&other, &[1., 0., 0., 0.]).unwrap();
        assert!(gm_multiply(&e, &e2).is_ok());
        let c5 = grp(FiniteGroup::cyclic(5).unwrap());
        let f = gm_from_coeffs(&c5, &[1., 0., 0., 0., 0.]).unwrap();
        assert!(matches!(gm_multiply(&e, &f), Err(Error::GroupMismatch)));
    }

    #[test]
    fn kronecker_matches_dense() {
        let c2 = grp(FiniteGroup::cyclic(2).unwrap());
        let b1 = gm_from_coeffs(&c2, &[0., 1.]).unwrap();
        let k = gm_kronecker(&b1, &b1).unwrap();
        let expect = Dense::from_row_slice(
            4,
            4,
            &[0., 0., 0., 1., 0., 0., 1., 0., 0., 1., 0., 0., 1., 0., 0., 0.],
        );
        assert_eq!(densify(&k), expect);
        assert_eq!(densify(&k), group_diagonal(k.group(), 3).unwrap().to_dense());

        let c3 = grp(FiniteGroup::cyclic(3).unwrap());
        let mut r = rng(2);
        let m = gm_from_coeffs(&c3, &random_vec(&mut r, 3)).unwrap();
        let n = gm_from_coeffs(&c2, &random_vec(&mut r, 2)).unwrap();
        let k = gm_kronecker(&m, &n).unwrap();
        let dense = densify(&m).kronecker(&densify(&n));
        assert!((densify(&k) - dense).amax() < 1e-15);

        let ident = gm_kronecker(
            &gm_from_coeffs(&c3, &[1., 0., 0.]).unwrap(),
            &gm_from_coeffs(&c2, &[1., 0.]).unwrap(),
        )
        .unwrap();
        assert_eq!(densify(&ident), Dense::identity(6, 6));
    }

    #[test]
    fn restriction_examples() {
        let c4 = FiniteGroup::cyclic(4).unwrap();
        let g = grp(FiniteGroup::direct_product(&c4, &c4).unwrap());
        let h = Subgroup::from_generators(g.clone(), &[8, 2]).unwrap();
        let r = restrict_to_subgroup(&group_diagonal(&g, 8).unwrap(), &h).unwrap();
        let native = group_diagonal(h.as_group(), h.local_id(8).unwrap()).unwrap();
        assert_eq!(r.col_of_row(), native.col_of_row());
        // H ≅ C2 × C2 and (2,0) is its first-factor generator
        let c2 = FiniteGroup::cyclic(2).unwrap();
        let c22 = grp(FiniteGroup::direct_product(&c2, &c2).unwrap());
        assert_eq!(r.to_dense(), group_diagonal(&c22, 2).unwrap().to_dense());

        let id = restrict_to_subgroup(&group_diagonal(&g, 0).unwrap(), &h).unwrap();
        assert_eq!(id.to_dense(), Dense::identity(4, 4));

        assert!(matches!(
            restrict_to_subgroup(&group_diagonal(&g, 1).unwrap(), &h),
            Err(Error::InvalidRestriction(_))
        ));

        let d4 = grp(FiniteGroup::dihedral(4).unwrap());
        let s = d4.find("s").unwrap();
        let rot = Subgroup::from_generators(d4.clone(), &[s]).unwrap();
        let c4 = grp(FiniteGroup::cyclic(4).unwrap());
        for k in 0..4 {
            let el = rot.parent_id(k);
            let rd = restrict_to_subgroup(&group_diagonal(&d4, el).unwrap(), &rot).unwrap();
            // rotation subgroup members are s^k at id 2k: local id k ↔ k in C4
            assert_eq!(rd.to_dense(), group_diagonal(&c4, k).unwrap().to_dense());
        }
    }

    #[test]
    fn diagonal_basis_form() {
        let c6 = grp(FiniteGroup::cyclic(6).unwrap());
        let ident = f_of(&Dense::identity(6, 6), &c6).unwrap();
        for g in 0..6 {
            for h in 0..6 {
                assert_eq!(ident.matrix()[(g, h)], if g == 0 { 1.0 } else { 0.0 });
            }
        }
        let mut r = rng(3);
        let m = random_dense(&mut r, 6, 6);
        assert_eq!(m_of(&f_of(&m, &c6).unwrap()), m);

        for g in [FiniteGroup::dihedral(4).unwrap(), FiniteGroup::symmetric(3).unwrap()] {
            let g = grp(g);
            let phi = random_vec(&mut r, g.order());
            let f = f_of(&densify(&gm_from_coeffs(&g, &phi).unwrap()), &g).unwrap();
            for row in 0..g.order() {
                for col in 0..g.order() {
                    assert_eq!(f.matrix()[(row, col)], phi[row]);
                }
            }
        }
        assert!(f_of(&Dense::zeros(5, 5), &c6).is_err());
    }

    #[test]
    fn group_matrix_check() {
        let c8 = grp(FiniteGroup::cyclic(8).unwrap());
        let mut r = rng(4);
        let mut m = densify(&gm_from_coeffs(&c8, &random_vec(&mut r, 8)).unwrap());
        assert_eq!(is_group_matrix(&m, &c8, DEFAULT_TOL).unwrap(), GroupMatrixCheck {
            is_group_matrix: true,
            deviation: 0.0
        });
        m[(2, 5)] += 0.1;
        let c = is_group_matrix(&m, &c8, DEFAULT_TOL).unwrap();
        assert!(!c.is_group_matrix);
        assert!((c.deviation - 0.1).abs() < 1e-12);
        let any = random_dense(&mut r, 8, 8);
        assert!(is_group_matrix(&any, &c8, f64::INFINITY).unwrap().is_group_matrix);
    }

    #[test]
    fn apply_matches_dense() {
        let d4 = grp(FiniteGroup::dihedral(4).unwrap());
        let mut r = rng(5);
        let m = gm_from_coeffs(&d4, &random_vec(&mut r, 8)).unwrap();
        let psi = random_vec(&mut r, 8);
        let dense = densify(&m) * nalgebra::DVector::from_vec(psi.clone());
        let fast = m.apply(&psi);
        for i in 0..8 {
            assert!((dense[i] - fast[i]).abs() < 1e-12);
        }
        let b = group_diagonal(&d4, 3).unwrap();
        let bt = b.to_dense().transpose() * nalgebra::DVector::from_vec(psi.clone());
        assert_eq!(b.apply_transpose(&psi), bt.as_slice());
    }
}
