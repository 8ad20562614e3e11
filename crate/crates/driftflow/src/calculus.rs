//! Dense spectral routines and finite-difference oracles.
//!
//! One [`Spectrum`] type serves both the real symmetric case (Hessians) and
//! the general case (game Jacobians, complex-extended Hessians), so
//! eigenvalues and eigenvectors are always stored complex. Algorithms are
//! dense throughout: the crate targets problems with at most a few hundred
//! parameters, where exactness and determinism matter more than scale.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use crate::error::{Error, Result};
use crate::problems::Problem;

pub type C64 = Complex<f64>;
pub type CVector = DVector<C64>;
pub type CMatrix = DMatrix<C64>;

/// Lift a real vector onto the real axis of the complex plane.
pub fn promote(v: &DVector<f64>) -> CVector {
    v.map(|x| C64::new(x, 0.0))
}

/// Lift a real matrix onto the real axis of the complex plane.
pub fn promote_matrix(m: &DMatrix<f64>) -> CMatrix {
    m.map(|x| C64::new(x, 0.0))
}

/// Real parts of a complex vector.
pub fn re_vector(v: &CVector) -> DVector<f64> {
    v.map(|z| z.re)
}

/// Real parts of a complex matrix.
pub fn re_matrix(m: &CMatrix) -> DMatrix<f64> {
    m.map(|z| z.re)
}

/// Largest imaginary magnitude in a vector; zero means the vector is real.
pub fn max_imag(v: &CVector) -> f64 {
    v.iter().fold(0.0, |acc, z| acc.max(z.im.abs()))
}

/// An eigendecomposition with a fixed ordering and sign convention.
///
/// Eigenvalues are sorted by descending real part, ties broken by descending
/// imaginary part and then original index, so the leading pair (λ₀, u₀) is
/// deterministic. Eigenvector columns have unit 2-norm. When a reference
/// gradient is supplied to [`eig_sym`], each column is negated if needed so
/// that Re(gᵀuᵢ) ≥ 0; otherwise the largest-magnitude entry of each column is
/// rotated to the positive real axis.
#[derive(Debug, Clone)]
pub struct Spectrum {
    /// Eigenvalues, sorted as described above.
    pub eigenvalues: CVector,
    /// Unit-norm eigenvector columns, ordered to match `eigenvalues`.
    pub eigenvectors: CMatrix,
}

impl Spectrum {
    /// Number of eigenpairs.
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Real parts of the eigenvalues, in spectrum order.
    pub fn real_parts(&self) -> DVector<f64> {
        self.eigenvalues.map(|z| z.re)
    }

    /// Largest residual ‖Muᵢ − λᵢuᵢ‖₂ over all pairs.
    pub fn max_residual(&self, m: &CMatrix) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.len() {
            let u = self.eigenvectors.column(i);
            let r = m * u - u * self.eigenvalues[i];
            worst = worst.max(r.norm());
        }
        worst
    }
}

fn sort_pairs(eigenvalues: Vec<C64>, vectors: Vec<CVector>) -> Spectrum {
    let mut order: Vec<usize> = (0..eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        let (la, lb) = (eigenvalues[a], eigenvalues[b]);
        lb.re
            .partial_cmp(&la.re)
            .unwrap()
            .then(lb.im.partial_cmp(&la.im).unwrap())
            .then(a.cmp(&b))
    });
    let n = vectors.first().map_or(0, |v| v.len());
    let mut values = CVector::zeros(eigenvalues.len());
    let mut matrix = CMatrix::zeros(n, eigenvalues.len());
    for (slot, &src) in order.iter().enumerate() {
        values[slot] = eigenvalues[src];
        matrix.set_column(slot, &vectors[src]);
    }
    Spectrum {
        eigenvalues: values,
        eigenvectors: matrix,
    }
}

/// Rotate `v` so its largest-magnitude entry is positive real, in place.
fn fix_phase(v: &mut CVector) {
    let mut best = 0usize;
    let mut best_mag = -1.0;
    for (i, z) in v.iter().enumerate() {
        let mag = z.norm();
        if mag > best_mag + 1e-14 {
            best_mag = mag;
            best = i;
        }
    }
    let z = v[best];
    if z.norm() > 0.0 {
        let phase = z / z.norm();
        let rot = phase.conj();
        for entry in v.iter_mut() {
            *entry *= rot;
        }
    }
}

/// Drive the off-diagonals of the nearly diagonal `b = qᵀaq` to machine level
/// with cyclic Jacobi rotations, accumulating the rotations into `q`.
fn jacobi_polish(b: &mut DMatrix<f64>, q: &mut DMatrix<f64>) {
    let n = b.nrows();
    let scale = 1.0 + b.amax();
    for _sweep in 0..3 {
        let mut off: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off = off.max(b[(i, j)].abs());
            }
        }
        if off <= n as f64 * f64::EPSILON * scale {
            break;
        }
        for p in 0..n {
            for r in (p + 1)..n {
                let apq = b[(p, r)];
                if apq.abs() <= f64::EPSILON * scale {
                    continue;
                }
                let tau = (b[(r, r)] - b[(p, p)]) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let (app, arr) = (b[(p, p)], b[(r, r)]);
                b[(p, p)] = app - t * apq;
                b[(r, r)] = arr + t * apq;
                b[(p, r)] = 0.0;
                b[(r, p)] = 0.0;
                for k in 0..n {
                    if k != p && k != r {
                        let (bkp, bkr) = (b[(k, p)], b[(k, r)]);
                        b[(k, p)] = c * bkp - s * bkr;
                        b[(k, r)] = s * bkp + c * bkr;
                        b[(p, k)] = b[(k, p)];
                        b[(r, k)] = b[(k, r)];
                    }
                    let (qkp, qkr) = (q[(k, p)], q[(k, r)]);
                    q[(k, p)] = c * qkp - s * qkr;
                    q[(k, r)] = s * qkp + c * qkr;
                }
            }
        }
    }
}

/// Eigendecomposition of a real symmetric matrix.
///
/// The matrix is symmetrised before solving, so asymmetry below the tolerance
/// of 1e-8·(1+‖H‖∞) is absorbed rather than amplified. The solver's basis is
/// polished by Jacobi rotations, so the reconstruction residual ‖A − QΛQᵀ‖
/// sits at machine level rather than the solver's looser tolerance. When
/// `ref_grad` is given, eigenvector signs are fixed so that gᵀuᵢ ≥ 0 for
/// every column; columns orthogonal to the gradient keep the default phase
/// convention.
pub fn eig_sym(h: &DMatrix<f64>, ref_grad: Option<&DVector<f64>>) -> Result<Spectrum> {
    let (rows, cols) = h.shape();
    if rows != cols {
        return Err(Error::NonSquare { rows, cols });
    }
    let scale = 1.0 + h.amax();
    let mut max_asymmetry: f64 = 0.0;
    for i in 0..rows {
        for j in (i + 1)..cols {
            max_asymmetry = max_asymmetry.max((h[(i, j)] - h[(j, i)]).abs());
        }
    }
    if max_asymmetry > 1e-8 * scale {
        return Err(Error::NonSymmetric { max_asymmetry });
    }
    let sym = (h + h.transpose()) * 0.5;
    let decomp = nalgebra::SymmetricEigen::try_new(sym.clone(), f64::EPSILON, 100_000)
        .ok_or(Error::NoConvergence)?;
    let mut q = decomp.eigenvectors;
    let mut b = q.transpose() * &sym * &q;
    jacobi_polish(&mut b, &mut q);

    let n = rows;
    let mut values = Vec::with_capacity(n);
    let mut vectors = Vec::with_capacity(n);
    for i in 0..n {
        values.push(C64::new(b[(i, i)], 0.0));
        let col = q.column(i).into_owned();
        let mut v = promote(&col);
        match ref_grad {
            Some(g) => {
                if g.len() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        got: g.len(),
                    });
                }
                let dot = g.dot(&col);
                if dot < 0.0 {
                    v = -v;
                } else if dot == 0.0 {
                    fix_phase(&mut v);
                }
            }
            None => fix_phase(&mut v),
        }
        vectors.push(v);
    }
    Ok(sort_pairs(values, vectors))
}

/// Basis for the (numerical) nullspace of a complex matrix, by row reduction
/// with row pivoting. Entries whose pivot magnitude falls below `tol` are
/// treated as zero.
fn complex_nullspace(a: &CMatrix, tol: f64) -> Vec<CVector> {
    let (rows, cols) = a.shape();
    let mut m = a.clone();
    let mut pivot_cols: Vec<usize> = Vec::new();
    let mut r = 0usize;
    for c in 0..cols {
        if r >= rows {
            break;
        }
        let mut best_row = r;
        let mut best_mag = 0.0;
        for i in r..rows {
            let mag = m[(i, c)].norm();
            if mag > best_mag {
                best_mag = mag;
                best_row = i;
            }
        }
        if best_mag <= tol {
            continue;
        }
        m.swap_rows(r, best_row);
        let piv = m[(r, c)];
        for j in c..cols {
            let val = m[(r, j)] / piv;
            m[(r, j)] = val;
        }
        for i in 0..rows {
            if i == r {
                continue;
            }
            let factor = m[(i, c)];
            if factor.norm() == 0.0 {
                continue;
            }
            for j in c..cols {
                let sub = factor * m[(r, j)];
                m[(i, j)] -= sub;
            }
        }
        pivot_cols.push(c);
        r += 1;
    }

    let mut basis = Vec::new();
    for free in 0..cols {
        if pivot_cols.contains(&free) {
            continue;
        }
        let mut v = CVector::zeros(cols);
        v[free] = C64::new(1.0, 0.0);
        for (k, &pc) in pivot_cols.iter().enumerate() {
            v[pc] = -m[(k, free)];
        }
        let norm = v.norm();
        if norm > 0.0 {
            v /= C64::new(norm, 0.0);
        }
        basis.push(v);
    }
    basis
}

/// Orthonormalise `vectors` in place by modified Gram–Schmidt.
fn orthonormalize(vectors: &mut [CVector]) {
    for i in 0..vectors.len() {
        for j in 0..i {
            let coeff = vectors[j].dotc(&vectors[i]);
            let proj = &vectors[j] * coeff;
            vectors[i] -= proj;
        }
        let norm = vectors[i].norm();
        if norm > 1e-300 {
            vectors[i] /= C64::new(norm, 0.0);
        }
    }
}

/// Eigendecomposition of a general complex matrix.
///
/// Eigenvalues come from the complex Schur form; eigenvectors are recovered as
/// nullspace bases of M − λI, one cluster of nearby eigenvalues at a time.
/// A cluster whose eigenspace is smaller than its multiplicity is the Jordan
/// case this crate refuses to handle, reported as [`Error::Defective`].
pub fn eig_general_c(m: &CMatrix) -> Result<Spectrum> {
    let (rows, cols) = m.shape();
    if rows != cols {
        return Err(Error::NonSquare { rows, cols });
    }
    let n = rows;
    if n == 0 {
        return Ok(Spectrum {
            eigenvalues: CVector::zeros(0),
            eigenvectors: CMatrix::zeros(0, 0),
        });
    }
    let scale = 1.0 + m.camax();
    let schur = nalgebra::Schur::try_new(m.clone(), f64::EPSILON, 100_000)
        .ok_or(Error::NoConvergence)?;
    let (_, t) = schur.unpack();
    let mut eigenvalues: Vec<C64> = (0..n).map(|i| t[(i, i)]).collect();

    // Cluster nearby eigenvalues so repeated roots share one nullspace solve.
    let cluster_tol = 1e-7 * scale;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eigenvalues[a]
            .re
            .partial_cmp(&eigenvalues[b].re)
            .unwrap()
            .then(eigenvalues[a].im.partial_cmp(&eigenvalues[b].im).unwrap())
    });
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for &idx in &order {
        match clusters.last_mut() {
            Some(cluster)
                if (eigenvalues[idx] - eigenvalues[*cluster.last().unwrap()]).norm()
                    <= cluster_tol =>
            {
                cluster.push(idx)
            }
            _ => clusters.push(vec![idx]),
        }
    }

    let mut vectors: Vec<Option<CVector>> = vec![None; n];
    let rank_tol = 1e-8 * scale;
    for cluster in &clusters {
        let mean = cluster.iter().map(|&i| eigenvalues[i]).sum::<C64>()
            / C64::new(cluster.len() as f64, 0.0);
        let mut shifted = m.clone();
        for d in 0..n {
            shifted[(d, d)] -= mean;
        }
        let mut basis = complex_nullspace(&shifted, rank_tol);
        if basis.len() < cluster.len() {
            return Err(Error::Defective {
                eigenvalue: format!("{:.6}{:+.6}i", mean.re, mean.im),
            });
        }
        orthonormalize(&mut basis);
        for (&idx, vec) in cluster.iter().zip(basis) {
            // Snap the cluster to its mean so repeated roots compare equal.
            if cluster.len() > 1 {
                eigenvalues[idx] = mean;
            }
            let mut v = vec;
            fix_phase(&mut v);
            vectors[idx] = Some(v);
        }
    }

    let vectors: Vec<CVector> = vectors.into_iter().map(|v| v.unwrap()).collect();
    Ok(sort_pairs(eigenvalues, vectors))
}

/// Eigendecomposition of a general real matrix. See [`eig_general_c`].
pub fn eig_general(m: &DMatrix<f64>) -> Result<Spectrum> {
    eig_general_c(&promote_matrix(m))
}

/// Central-difference gradient of `problem.eval` at a real point.
pub fn fd_grad(problem: &dyn Problem, theta: &DVector<f64>, eps: f64) -> Result<DVector<f64>> {
    check_eps(eps)?;
    let n = theta.len();
    let mut grad = DVector::zeros(n);
    for i in 0..n {
        let mut plus = theta.clone();
        let mut minus = theta.clone();
        plus[i] += eps;
        minus[i] -= eps;
        grad[i] = (problem.eval(&plus)? - problem.eval(&minus)?) / (2.0 * eps);
    }
    Ok(grad)
}

/// Central-difference Hessian-vector product built from `problem.grad`.
pub fn fd_hvp(
    problem: &dyn Problem,
    theta: &DVector<f64>,
    v: &DVector<f64>,
    eps: f64,
) -> Result<DVector<f64>> {
    check_eps(eps)?;
    let plus = problem.grad(&(theta + v * eps))?;
    let minus = problem.grad(&(theta - v * eps))?;
    Ok((plus - minus) / (2.0 * eps))
}

/// Central-difference third-derivative contraction built from `problem.hvp`:
/// the directional derivative along `w` of the Hessian-vector product with
/// `v`, whose k-th entry is Σᵢⱼ ∂³E/∂θᵢ∂θₖ∂θⱼ vᵢwⱼ.
pub fn fd_third(
    problem: &dyn Problem,
    theta: &DVector<f64>,
    v: &DVector<f64>,
    w: &DVector<f64>,
    eps: f64,
) -> Result<DVector<f64>> {
    check_eps(eps)?;
    let plus = problem.hvp(&(theta + w * eps), v)?;
    let minus = problem.hvp(&(theta - w * eps), v)?;
    Ok((plus - minus) / (2.0 * eps))
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::ConfigError(format!(
            "finite-difference step must be positive and finite, got {eps}"
        )));
    }
    Ok(())
}

/// Exact state of the affine flow ẋ = Mx + c at time `t`, via the matrix
/// exponential of the augmented system.
pub fn flow_affine(
    m: &DMatrix<f64>,
    c: &DVector<f64>,
    x0: &DVector<f64>,
    t: f64,
) -> Result<DVector<f64>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::NonSquare {
            rows: n,
            cols: m.ncols(),
        });
    }
    if c.len() != n || x0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: c.len().max(x0.len()),
        });
    }
    let mut aug = DMatrix::zeros(n + 1, n + 1);
    for i in 0..n {
        for j in 0..n {
            aug[(i, j)] = t * m[(i, j)];
        }
        aug[(i, n)] = t * c[i];
    }
    let e = aug.exp();
    let mut out = DVector::zeros(n);
    for i in 0..n {
        let mut acc = e[(i, n)];
        for j in 0..n {
            acc += e[(i, j)] * x0[j];
        }
        out[i] = acc;
    }
    Ok(out)
}
