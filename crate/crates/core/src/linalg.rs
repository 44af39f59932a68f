//! Dense complex linear-algebra helpers shared by every module.
//!
//! All matrices are `nalgebra::DMatrix<Complex64>`. Hermitian inputs are
//! symmetrized before factorization so round-off in the lower triangle never
//! leaks into eigenvalues.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

/// Relative singular value threshold used for every rank decision.
pub const RANK_RTOL: f64 = 1e-12;

/// Eigenvalue floor (relative to trace) for inverse square roots.
pub const EIG_FLOOR_REL: f64 = 1e-14;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

/// `(A + A†) / 2`
pub fn hermitize(a: &CMat) -> CMat {
    (a + a.adjoint()) * c(0.5, 0.0)
}

pub fn trace_re(a: &CMat) -> f64 {
    a.diagonal().iter().map(|z| z.re).sum()
}

/// Real part of `Tr(A B)` without forming the product.
pub fn trace_prod_re(a: &CMat, b: &CMat) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            acc += (a[(i, j)] * b[(j, i)]).re;
        }
    }
    acc
}

pub fn fro_norm(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Largest absolute deviation from Hermitian symmetry.
pub fn hermitian_defect(a: &CMat) -> f64 {
    if a.nrows() != a.ncols() {
        return f64::INFINITY;
    }
    let mut worst: f64 = 0.0;
    for i in 0..a.nrows() {
        for j in i..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Hermitian eigendecomposition with eigenvalues sorted in descending order.
///
/// Eigenvector columns are phase-normalized (largest-magnitude entry real and
/// nonnegative) so repeated calls on the same input give identical output.
pub fn eigh_desc(a: &CMat) -> (Vec<f64>, CMat) {
    let n = a.nrows();
    if n == 0 {
        return (Vec::new(), CMat::zeros(0, 0));
    }
    let eig = hermitize(a).symmetric_eigen();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let values = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMat::zeros(n, n);
    for (dst, &src) in idx.iter().enumerate() {
        let col = phase_normalize(&eig.eigenvectors.column(src).into_owned());
        vectors.set_column(dst, &col);
    }
    (values, vectors)
}

/// Rotates `v` so its largest-magnitude entry is real and nonnegative.
pub fn phase_normalize(v: &CVec) -> CVec {
    let mut best = 0;
    let mut best_mag = -1.0;
    for (i, z) in v.iter().enumerate() {
        // strict comparison with a small margin keeps ties on the first index
        if z.norm() > best_mag * (1.0 + 1e-12) {
            best = i;
            best_mag = z.norm();
        }
    }
    if best_mag <= 0.0 {
        return v.clone();
    }
    let phase = v[best].conj() / best_mag;
    v.map(|z| z * phase)
}

/// Unit-normalized, phase-normalized copy of `v`; `None` for a zero vector.
pub fn unit(v: &CVec) -> Option<CVec> {
    let n = v.norm();
    if !(n > 0.0) || !n.is_finite() {
        return None;
    }
    Some(phase_normalize(&(v / c(n, 0.0))))
}

fn spectral_map(a: &CMat, f: impl Fn(f64) -> f64) -> CMat {
    let (vals, vecs) = eigh_desc(a);
    let n = a.nrows();
    let mut scaled = vecs.clone();
    for j in 0..n {
        let s = f(vals[j]);
        for i in 0..n {
            scaled[(i, j)] *= s;
        }
    }
    hermitize(&(scaled * vecs.adjoint()))
}

/// Hermitian square root of a PSD matrix (negative eigenvalues clamped to 0).
pub fn sqrtm(a: &CMat) -> CMat {
    spectral_map(a, |x| x.max(0.0).sqrt())
}

/// Inverse square root of a Hermitian PD matrix, eigenvalues floored at
/// `EIG_FLOOR_REL * trace`.
pub fn inv_sqrtm(a: &CMat) -> CMat {
    let floor = EIG_FLOOR_REL * trace_re(a).abs().max(f64::MIN_POSITIVE);
    spectral_map(a, |x| 1.0 / x.max(floor).sqrt())
}

/// Projects a Hermitian matrix onto the PSD cone.
pub fn psd_part(a: &CMat) -> CMat {
    spectral_map(a, |x| x.max(0.0))
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eig(a: &CMat) -> f64 {
    eigh_desc(a).0.last().copied().unwrap_or(0.0)
}

/// `ln det A` for Hermitian PD `A`.
pub fn logdet_hpd(a: &CMat) -> Result<f64> {
    if a.nrows() == 0 {
        return Ok(0.0);
    }
    match hermitize(a).cholesky() {
        Some(ch) => Ok(2.0 * ch.l_dirty().diagonal().iter().map(|z| z.re.ln()).sum::<f64>()),
        None => {
            let vals = eigh_desc(a).0;
            if vals.iter().any(|&v| v <= 0.0) {
                return Err(Error::NotPositiveDefinite("log-determinant argument"));
            }
            Ok(vals.iter().map(|v| v.ln()).sum())
        }
    }
}

/// Solves `A X = B` for Hermitian PD `A`.
pub fn solve_hpd(a: &CMat, b: &CMat) -> Result<CMat> {
    if let Some(ch) = hermitize(a).cholesky() {
        return Ok(ch.solve(b));
    }
    a.clone()
        .lu()
        .solve(b)
        .ok_or(Error::NotPositiveDefinite("linear system matrix"))
}

pub fn solve_hpd_vec(a: &CMat, b: &CVec) -> Result<CVec> {
    let x = solve_hpd(a, &CMat::from_column_slice(b.len(), 1, b.as_slice()))?;
    Ok(x.column(0).into_owned())
}

/// Threshold below which a singular value counts as zero.
pub fn rank_threshold(s_max: f64, rows: usize, cols: usize) -> f64 {
    RANK_RTOL * s_max * rows.max(cols) as f64
}

/// Thin SVD truncated to numerical rank: `A = U diag(s) V†`, `s` descending.
#[derive(Clone, Debug)]
pub struct ThinSvd {
    pub u: CMat,
    pub s: Vec<f64>,
    pub v: CMat,
}

pub fn thin_svd(a: &CMat) -> ThinSvd {
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return ThinSvd {
            u: CMat::zeros(rows, 0),
            s: Vec::new(),
            v: CMat::zeros(cols, 0),
        };
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let k = svd.singular_values.len();
    let mut idx: Vec<usize> = (0..k).collect();
    idx.sort_by(|&i, &j| {
        svd.singular_values[j]
            .total_cmp(&svd.singular_values[i])
            .then(i.cmp(&j))
    });
    let s_max = idx.first().map(|&i| svd.singular_values[i]).unwrap_or(0.0);
    let tol = rank_threshold(s_max, rows, cols);
    let kept: Vec<usize> = idx
        .into_iter()
        .filter(|&i| svd.singular_values[i] > tol && s_max > 0.0)
        .collect();
    let mut uu = CMat::zeros(rows, kept.len());
    let mut vv = CMat::zeros(cols, kept.len());
    let mut s = Vec::with_capacity(kept.len());
    for (dst, &src) in kept.iter().enumerate() {
        // fix the phase on V and carry the same rotation into U
        let vcol: CVec = v_t.row(src).adjoint();
        let vn = phase_normalize(&vcol);
        let rot = match vcol.iter().zip(vn.iter()).find(|(a, _)| a.norm() > 0.0) {
            Some((a, b)) => b / a,
            None => c(1.0, 0.0),
        };
        let ucol: CVec = u.column(src).into_owned() * rot;
        uu.set_column(dst, &ucol);
        vv.set_column(dst, &vn);
        s.push(svd.singular_values[src]);
    }
    ThinSvd { u: uu, s, v: vv }
}

/// Numerical rank under the shared threshold.
pub fn rank(a: &CMat) -> usize {
    thin_svd(a).s.len()
}

/// Orthonormal basis (columns) of the orthogonal complement of the span of
/// the orthonormal columns `v` inside `C^n`.
pub fn complement_basis(n: usize, v: &[CVec]) -> CMat {
    let mut proj = identity(n);
    for x in v {
        proj -= x * x.adjoint();
    }
    let (vals, vecs) = eigh_desc(&proj);
    let keep = vals.iter().filter(|&&x| x > 0.5).count();
    vecs.columns(0, keep).into_owned()
}

/// Complex matrix with i.i.d. CN(0, 1) entries, drawn row-major (real then
/// imaginary part for each entry).
pub fn random_cn<R: rand::Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMat {
    use rand_distr::{Distribution, StandardNormal};
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut m = CMat::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            m[(i, j)] = c(re * s, im * s);
        }
    }
    m
}

/// Random PSD matrix `A A†` with `A` an `n × k` CN(0, 1) draw, scaled to the
/// given trace.
pub fn random_psd<R: rand::Rng + ?Sized>(rng: &mut R, n: usize, k: usize, trace: f64) -> CMat {
    let a = random_cn(rng, n, k);
    let m = &a * a.adjoint();
    let t = trace_re(&m);
    if t <= 0.0 {
        return CMat::zeros(n, n);
    }
    hermitize(&(m * c(trace / t, 0.0)))
}

pub fn real_diag(d: &[f64]) -> CMat {
    CMat::from_diagonal(&CVec::from_iterator(d.len(), d.iter().map(|&x| c(x, 0.0))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eigh_sorted_and_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_psd(&mut rng, 4, 4, 3.0);
        let (vals, vecs) = eigh_desc(&a);
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
        let back = &vecs * real_diag(&vals) * vecs.adjoint();
        assert!(fro_norm(&(back - &a)) < 1e-12);
    }

    #[test]
    fn inverse_sqrt_squares_to_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_psd(&mut rng, 3, 5, 2.0) + identity(3);
        let r = inv_sqrtm(&a);
        let prod = &r * &a * &r;
        assert!(fro_norm(&(prod - identity(3))) < 1e-12);
        let s = sqrtm(&a);
        assert!(fro_norm(&(&s * &s - &a)) < 1e-12);
    }

    #[test]
    fn logdet_matches_eigenvalues() {
        let a = real_diag(&[2.0, 3.0]);
        assert!((logdet_hpd(&a).unwrap() - 6f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn thin_svd_truncates_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_cn(&mut rng, 4, 1);
        let b = random_cn(&mut rng, 1, 3);
        let m = &a * &b;
        let svd = thin_svd(&m);
        assert_eq!(svd.s.len(), 1);
        let back = &svd.u * real_diag(&svd.s) * svd.v.adjoint();
        assert!(fro_norm(&(back - &m)) < 1e-12 * fro_norm(&m));
    }

    #[test]
    fn phase_normalization_makes_peak_real() {
        let v = CVec::from_vec(vec![c(0.0, 1.0), c(0.1, 0.0)]);
        let n = phase_normalize(&v);
        assert!(n[0].im.abs() < 1e-15 && n[0].re > 0.0);
    }

    #[test]
    fn complement_basis_is_orthogonal() {
        let e1 = CVec::from_vec(vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        let b = complement_basis(3, &[e1.clone()]);
        assert_eq!(b.ncols(), 2);
        assert!((e1.adjoint() * &b).norm() < 1e-14);
    }
}
