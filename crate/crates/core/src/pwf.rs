//! Polite water-filling kernels.

use crate::duality::covariance_transformation;
use crate::error::{Error, Result};
use crate::linalg::{
    c, fro_norm, hermitize, inv_sqrtm, min_eig, sqrtm, thin_svd, trace_re, CMat,
};
use crate::netmodel::{
    interference_covariance, reverse_interference_covariance, whiten, CovarianceSet, NetworkSpec,
};

/// Equivalent channel `Ω^{-1/2} H Ω̂^{-1/2}` with its thin SVD `F Δ G†`.
/// `delta` holds squared singular values, descending.
#[derive(Clone, Debug)]
pub struct EquivalentChannel {
    pub hbar: CMat,
    pub f: CMat,
    pub g: CMat,
    pub delta: Vec<f64>,
    pub omega_inv_sqrt: CMat,
    pub omega_hat_inv_sqrt: CMat,
}

impl EquivalentChannel {
    pub fn rank(&self) -> usize {
        self.delta.len()
    }
}

/// Water-filling result over one equivalent channel.
#[derive(Clone, Debug, PartialEq)]
pub struct PwfDecomposition {
    pub nu: f64,
    pub d: Vec<f64>,
    pub active: Vec<usize>,
}

impl PwfDecomposition {
    fn from_level(nu: f64, delta: &[f64], d: Vec<f64>) -> Self {
        debug_assert_eq!(delta.len(), d.len());
        let active = d.iter().enumerate().filter(|(_, &x)| x > 0.0).map(|(j, _)| j).collect();
        Self { nu, d, active }
    }

    pub fn power(&self) -> f64 {
        self.d.iter().sum()
    }

    pub fn rate(&self, delta: &[f64]) -> f64 {
        self.d.iter().zip(delta).map(|(d, x)| (d * x).ln_1p()).sum()
    }
}

fn require_pd(a: &CMat, what: &'static str) -> Result<()> {
    if a.nrows() > 0 && !(min_eig(a) > 0.0) {
        return Err(Error::NotPositiveDefinite(what));
    }
    Ok(())
}

pub fn equivalent_channel(omega: &CMat, h: &CMat, omega_hat: &CMat) -> Result<EquivalentChannel> {
    if omega.nrows() != h.nrows() || omega_hat.nrows() != h.ncols() {
        return Err(Error::Dimension("equivalent channel factors".into()));
    }
    require_pd(omega, "interference covariance")?;
    require_pd(omega_hat, "reverse interference covariance")?;
    let oi = inv_sqrtm(omega);
    let ohi = inv_sqrtm(omega_hat);
    let hbar = &oi * h * &ohi;
    let svd = thin_svd(&hbar);
    Ok(EquivalentChannel {
        delta: svd.s.iter().map(|s| s * s).collect(),
        f: svd.u,
        g: svd.v,
        hbar,
        omega_inv_sqrt: oi,
        omega_hat_inv_sqrt: ohi,
    })
}

/// Solves `Σ_j c_j (ν − 1/δ_j)⁺ = budget` for `ν`. With unit weights this is
/// plain water-filling; general weights express a trace constraint through a
/// non-unitary back-transform.
pub fn waterfill_weighted(delta: &[f64], weights: &[f64], budget: f64) -> Result<PwfDecomposition> {
    if !(budget >= 0.0) || !budget.is_finite() {
        return Err(Error::Invalid(format!("power budget {budget}")));
    }
    if weights.len() != delta.len() {
        return Err(Error::Dimension("water-filling weights".into()));
    }
    let mut idx: Vec<usize> = (0..delta.len()).filter(|&j| delta[j] > 0.0 && weights[j] > 0.0).collect();
    if idx.is_empty() {
        if budget > 0.0 {
            return Err(Error::NoSubchannel(budget));
        }
        return Ok(PwfDecomposition::from_level(0.0, delta, vec![0.0; delta.len()]));
    }
    idx.sort_by(|&a, &b| delta[b].total_cmp(&delta[a]).then(a.cmp(&b)));
    let floor = 1.0 / delta[idx[0]];
    if budget == 0.0 {
        return Ok(PwfDecomposition::from_level(floor, delta, vec![0.0; delta.len()]));
    }
    let (mut cw, mut cb) = (0.0, 0.0);
    let mut nu = floor;
    for &j in &idx {
        let b = 1.0 / delta[j];
        let (ncw, ncb) = (cw + weights[j], cb + weights[j] * b);
        let cand = (budget + ncb) / ncw;
        if cand > b {
            nu = cand;
            cw = ncw;
            cb = ncb;
        } else {
            break;
        }
    }
    let d = delta
        .iter()
        .zip(weights)
        .map(|(&x, &w)| if x > 0.0 && w > 0.0 { (nu - 1.0 / x).max(0.0) } else { 0.0 })
        .collect();
    Ok(PwfDecomposition::from_level(nu, delta, d))
}

/// Water-filling under a power budget: `d_j = (ν − 1/δ_j)⁺`, `Σ d_j = budget`.
pub fn waterfill_power(delta: &[f64], budget: f64) -> Result<PwfDecomposition> {
    waterfill_weighted(delta, &vec![1.0; delta.len()], budget)
}

/// Water-filling level meeting a rate target (nats) by repeatedly solving for
/// `ν` on the active set and dropping every subchannel with negative power.
pub fn waterfill_rate(delta: &[f64], target: f64) -> Result<PwfDecomposition> {
    if !(target >= 0.0) || !target.is_finite() {
        return Err(Error::Invalid(format!("rate target {target}")));
    }
    let mut active: Vec<usize> = (0..delta.len()).filter(|&j| delta[j] > 0.0).collect();
    if active.is_empty() {
        if target > 0.0 {
            return Err(Error::InfeasibleRate(target));
        }
        return Ok(PwfDecomposition::from_level(0.0, delta, vec![0.0; delta.len()]));
    }
    if target == 0.0 {
        let best = active.iter().map(|&j| delta[j]).fold(0.0, f64::max);
        return Ok(PwfDecomposition::from_level(1.0 / best, delta, vec![0.0; delta.len()]));
    }
    loop {
        let n = active.len() as f64;
        let log_prod: f64 = active.iter().map(|&j| delta[j].ln()).sum();
        let nu = ((target - log_prod) / n).exp();
        let keep: Vec<usize> = active.iter().copied().filter(|&j| nu - 1.0 / delta[j] > 0.0).collect();
        if keep.len() == active.len() {
            let mut d = vec![0.0; delta.len()];
            for &j in &active {
                d[j] = nu - 1.0 / delta[j];
            }
            return Ok(PwfDecomposition::from_level(nu, delta, d));
        }
        active = keep;
    }
}

/// `Ω̂^{-1/2} G D G† Ω̂^{-1/2}` given `Ω̂^{-1/2}`.
pub fn assemble(basis: &CMat, inv_sqrt: &CMat, d: &[f64]) -> CMat {
    let mut scaled = basis.clone();
    for (j, &x) in d.iter().enumerate() {
        scaled.column_mut(j).scale_mut(x.max(0.0).sqrt());
    }
    let half = inv_sqrt * scaled;
    hermitize(&(&half * half.adjoint()))
}

pub fn assemble_forward(g: &CMat, omega_hat: &CMat, d: &[f64]) -> CMat {
    assemble(g, &inv_sqrtm(omega_hat), d)
}

pub fn assemble_reverse(f: &CMat, omega: &CMat, d: &[f64]) -> CMat {
    assemble(f, &inv_sqrtm(omega), d)
}

/// Per-link trace weights `c_j = ‖M g_j‖²` so that
/// `Tr(M G D G† M†) = Σ_j c_j d_j`.
pub fn trace_weights(basis: &CMat, inv_sqrt: &CMat) -> Vec<f64> {
    (0..basis.ncols()).map(|j| (inv_sqrt * basis.column(j)).norm_squared()).collect()
}

/// Best fit of `Q` by `G diag((ν − 1/δ)⁺) G†` over `ν ≥ 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PwfFit {
    /// `‖Q − fit‖_F / Tr(Q)`
    pub residual: f64,
    pub nu: f64,
}

/// Projection of a Hermitian `q` onto the water-filling family over basis `g`
/// and levels `delta`. The objective is piecewise quadratic in `ν` with
/// breakpoints at `1/δ_j`; each piece is minimized in closed form.
pub fn pwf_fit(q: &CMat, g: &CMat, delta: &[f64]) -> PwfFit {
    let tr = trace_re(q);
    let qn2 = fro_norm(q).powi(2);
    if !(tr > 0.0) {
        let nu = delta.iter().copied().fold(0.0, f64::max);
        return PwfFit { residual: 0.0, nu: if nu > 0.0 { 1.0 / nu } else { 0.0 } };
    }
    let a: Vec<f64> = (0..g.ncols()).map(|j| g.column(j).dotc(&(q * g.column(j))).re).collect();
    let mut order: Vec<usize> = (0..delta.len()).filter(|&j| delta[j] > 0.0).collect();
    order.sort_by(|&x, &y| delta[y].total_cmp(&delta[x]));
    let b: Vec<f64> = order.iter().map(|&j| 1.0 / delta[j]).collect();
    let av: Vec<f64> = order.iter().map(|&j| a[j]).collect();
    let eval = |nu: f64| -> f64 {
        b.iter()
            .zip(&av)
            .map(|(&bj, &aj)| {
                let x = (nu - bj).max(0.0);
                x * x - 2.0 * x * aj
            })
            .sum()
    };
    let mut best_nu = b.first().copied().unwrap_or(0.0);
    let mut best = 0.0;
    let (mut sb, mut sa) = (0.0, 0.0);
    for k in 0..b.len() {
        sb += b[k];
        sa += av[k];
        let lo = b[k];
        let hi = b.get(k + 1).copied().unwrap_or(f64::INFINITY);
        let nu = ((sb + sa) / (k + 1) as f64).clamp(lo, hi);
        let v = eval(nu);
        if v < best {
            best = v;
            best_nu = nu;
        }
    }
    let resid2 = (qn2 + best).max(0.0);
    PwfFit { residual: resid2.sqrt() / tr, nu: best_nu }
}

/// Distance of each link's covariance from the polite water-filling structure
/// over its own equivalent channel, where `Ω̂` comes from the covariance
/// transformation of `sigma`. Also returns the fitted levels `ν_l`.
pub fn pwf_fits(net: &NetworkSpec, sigma: &CovarianceSet) -> Result<Vec<PwfFit>> {
    sigma.check_dims(&net.forward_dims())?;
    let (white, maps) = whiten(net)?;
    let sigma_w = maps.forward_to_white(sigma);
    let hat = covariance_transformation(&white, &sigma_w)?;
    (0..white.links())
        .map(|l| {
            let omega = interference_covariance(&white, &sigma_w, l)?;
            let omega_hat = reverse_interference_covariance(&white, &hat, l)?;
            let eq = equivalent_channel(&omega, white.channel(l, l), &omega_hat)?;
            let root = sqrtm(&omega_hat);
            let q = hermitize(&(&root * &sigma_w[l] * &root));
            Ok(pwf_fit(&q, &eq.g, &eq.delta))
        })
        .collect()
}

pub fn pwf_residual(net: &NetworkSpec, sigma: &CovarianceSet) -> Result<Vec<f64>> {
    Ok(pwf_fits(net, sigma)?.into_iter().map(|f| f.residual).collect())
}

/// Classical single-user water-filling covariance of `h` under power `budget`.
pub fn single_user_waterfill(h: &CMat, budget: f64) -> Result<(CMat, PwfDecomposition)> {
    let svd = thin_svd(h);
    let delta: Vec<f64> = svd.s.iter().map(|s| s * s).collect();
    let wf = waterfill_power(&delta, budget)?;
    let id = crate::linalg::identity(h.ncols());
    Ok((assemble(&svd.v, &id, &wf.d), wf))
}

/// Same, at a rate target in nats.
pub fn single_user_waterfill_rate(h: &CMat, target: f64) -> Result<(CMat, PwfDecomposition)> {
    let svd = thin_svd(h);
    let delta: Vec<f64> = svd.s.iter().map(|s| s * s).collect();
    let wf = waterfill_rate(&delta, target)?;
    let id = crate::linalg::identity(h.ncols());
    Ok((assemble(&svd.v, &id, &wf.d), wf))
}

/// `c · I` helper used by tests and callers building isotropic inputs.
pub fn isotropic(n: usize, power: f64) -> CMat {
    crate::linalg::identity(n) * c(power / n as f64, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{identity, random_cn, random_psd, real_diag};
    use crate::netmodel::link_rate;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn equivalent_channel_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let h = random_cn(&mut rng, 3, 2);
        let eq = equivalent_channel(&identity(3), &h, &identity(2)).unwrap();
        assert!(fro_norm(&(&eq.hbar - &h)) < 1e-12);
        let s = CMat::from_element(1, 1, c(4.0, 0.0));
        let eq = equivalent_channel(&s, &CMat::from_element(1, 1, c(2.0, 0.0)), &identity(1)).unwrap();
        assert!((eq.hbar[(0, 0)] - c(1.0, 0.0)).norm() < 1e-14);
        let o = random_psd(&mut rng, 3, 3, 2.0) + identity(3);
        let oh = random_psd(&mut rng, 2, 2, 2.0) + identity(2);
        let eq = equivalent_channel(&o, &h, &oh).unwrap();
        let mut sd = eq.g.clone();
        for j in 0..eq.rank() {
            sd.column_mut(j).scale_mut(eq.delta[j].sqrt());
        }
        let rebuilt = &eq.f * sd.adjoint();
        assert!(fro_norm(&(rebuilt - &eq.hbar)) <= 1e-10 * fro_norm(&eq.hbar));
        assert!(fro_norm(&(eq.f.adjoint() * &eq.f - identity(eq.rank()))) < 1e-10);
        assert!(fro_norm(&(eq.g.adjoint() * &eq.g - identity(eq.rank()))) < 1e-10);
        assert!(equivalent_channel(&CMat::zeros(3, 3), &h, &oh).is_err());
    }

    #[test]
    fn waterfill_power_cases() {
        let w = waterfill_power(&[1.0], 3.0).unwrap();
        assert_eq!((w.nu, w.d.clone()), (4.0, vec![3.0]));
        let w = waterfill_power(&[1.0, 0.25], 3.0).unwrap();
        assert_eq!((w.nu, w.d.clone()), (4.0, vec![3.0, 0.0]));
        assert_eq!(w.active, vec![0]);
        assert!(matches!(waterfill_power(&[], 1.0), Err(Error::NoSubchannel(_))));
    }

    #[test]
    fn waterfill_rate_cases() {
        let w = waterfill_rate(&[1.0, 1.0], 2.0 * 2f64.ln()).unwrap();
        assert!((w.nu - 2.0).abs() < 1e-14);
        assert!((w.d[0] - 1.0).abs() < 1e-14 && (w.d[1] - 1.0).abs() < 1e-14);
        let w = waterfill_rate(&[4.0, 0.01], 5f64.ln()).unwrap();
        assert_eq!(w.nu, 1.25);
        assert_eq!(w.d[0], 1.0);
        assert_eq!(w.d[1], 0.0);
        assert!((w.rate(&[4.0, 0.01]) - 5f64.ln()).abs() < 1e-14);
        let w = waterfill_rate(&[2.0, 0.5], 0.0).unwrap();
        assert_eq!(w.d, vec![0.0, 0.0]);
        assert!(w.active.is_empty());
        assert!(matches!(waterfill_rate(&[0.0], 1.0), Err(Error::InfeasibleRate(_))));
    }

    #[test]
    fn rate_and_power_solves_are_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..200 {
            let n = rng.random_range(1..6);
            let delta: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..10.0)).collect();
            let target = rng.random_range(0.01..8.0);
            let w = waterfill_rate(&delta, target).unwrap();
            assert!((w.rate(&delta) - target).abs() < 1e-10);
            let back = waterfill_power(&delta, w.power()).unwrap();
            assert!((back.nu - w.nu).abs() < 1e-10 * (1.0 + w.nu));
        }
    }

    #[test]
    fn assemble_cases() {
        let g = CMat::from_columns(&[crate::streams::basis_vector(2, 0)]);
        let s = assemble_forward(&g, &identity(2), &[2.5]);
        assert!(fro_norm(&(s - real_diag(&[2.5, 0.0]))) < 1e-15);
    }

    #[test]
    fn assembled_rate_matches_waterfill() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let h = random_cn(&mut rng, 3, 3);
        let omega = random_psd(&mut rng, 3, 3, 1.0) + identity(3);
        let omega_hat = random_psd(&mut rng, 3, 2, 1.0) + identity(3);
        let eq = equivalent_channel(&omega, &h, &omega_hat).unwrap();
        let w = waterfill_rate(&eq.delta, 2.0).unwrap();
        let sigma = assemble_forward(&eq.g, &omega_hat, &w.d);
        let net = NetworkSpec::new(vec![vec![h.clone()]], DMatrix::zeros(1, 1))
            .unwrap()
            .with_noise(vec![omega.clone()])
            .unwrap();
        let set = CovarianceSet::new(vec![sigma]).unwrap();
        // rate over Ω with Ω̂ whitening undone equals the stream-rate sum
        assert!((link_rate(&net, &set, 0).unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn single_user_residuals() {
        let h = real_diag(&[2.0, 1.0]);
        let net = NetworkSpec::new(vec![vec![h.clone()]], DMatrix::zeros(1, 1)).unwrap();
        let (wf, _) = single_user_waterfill(&h, 3.0).unwrap();
        let r = pwf_residual(&net, &CovarianceSet::new(vec![wf]).unwrap()).unwrap();
        assert!(r[0] <= 1e-8, "{r:?}");
        let r = pwf_residual(&net, &CovarianceSet::new(vec![isotropic(2, 0.5)]).unwrap()).unwrap();
        assert!(r[0] > 1e-3, "{r:?}");
    }

    #[test]
    fn fit_recovers_level() {
        let delta = [3.0, 1.0, 0.2];
        let w = waterfill_power(&delta, 2.0).unwrap();
        let g = identity(3);
        let q = assemble(&g, &identity(3), &w.d);
        let fit = pwf_fit(&q, &g, &delta);
        assert!(fit.residual < 1e-12);
        assert!((fit.nu - w.nu).abs() < 1e-12);
    }
}
