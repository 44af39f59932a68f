//! SINR duality between forward and reverse links, and the covariance
//! transformation built on it.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{hermitize, CMat, CVec};
use crate::netmodel::{reverse_network, whiten, CovarianceSet, NetworkSpec};
use crate::streams::{
    crosstalk, direct_gains, forward_sinrs, outer_sum, strategy_from_covariances, unflatten,
    CrosstalkMatrix, LinkStreams, StreamStrategy,
};

const SOLVE_RTOL: f64 = 1e-10;

/// Diagonal `D = diag(γ⁰ / |r†Ht|²)` together with the targets it encodes.
#[derive(Clone, Debug, PartialEq)]
pub struct DualScaling {
    pub d: Vec<f64>,
    pub gamma0: Vec<f64>,
}

impl DualScaling {
    pub fn new(gains: &[f64], gamma0: &[f64]) -> Result<Self> {
        if gains.len() != gamma0.len() {
            return Err(Error::Dimension("gain and target vectors differ in length".into()));
        }
        let d = gains
            .iter()
            .zip(gamma0)
            .enumerate()
            .map(|(i, (&g, &t))| {
                if t < 0.0 || !t.is_finite() {
                    Err(Error::Invalid(format!("target SINR {t} at stream {i}")))
                } else if t == 0.0 {
                    Ok(0.0)
                } else if g > 0.0 {
                    Ok(t / g)
                } else {
                    Err(Error::Infeasible(format!("stream {i} has zero direct gain")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { d, gamma0: gamma0.to_vec() })
    }
}

/// Solves `(I − D M) x = D n` and insists on a nonnegative solution.
pub fn solve_powers(d: &[f64], m: &DMatrix<f64>, noise: &[f64]) -> Result<Vec<f64>> {
    let n = d.len();
    if m.nrows() != n || m.ncols() != n || noise.len() != n {
        return Err(Error::Dimension("power system size".into()));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let a = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } - d[i] * m[(i, j)]);
    let b = DVector::from_iterator(n, d.iter().zip(noise).map(|(x, y)| x * y));
    let x = a
        .clone()
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Infeasible("singular power system".into()))?;
    let resid = (&a * &x - &b).norm();
    let scale = b.norm().max(1.0) * x.norm().max(1.0);
    if !x.iter().all(|v| v.is_finite()) || resid > SOLVE_RTOL * scale {
        return Err(Error::Infeasible(format!("power system residual {resid:.3e}")));
    }
    let floor = -1e-12 * x.amax().max(1.0);
    if x.iter().any(|&v| v < floor) {
        return Err(Error::Infeasible("negative stream power".into()));
    }
    Ok(x.iter().map(|v| v.max(0.0)).collect())
}

/// Reverse powers `q` achieving the targets in `scaling` on the reverse links:
/// `(I − D Ψᵀ) q = D 1`, i.e. `q = (D⁻¹ − Ψᵀ)⁻¹ 1` without inverting `D`.
pub fn dual_powers(scaling: &DualScaling, psi: &DMatrix<f64>) -> Result<Vec<f64>> {
    solve_powers(&scaling.d, &psi.transpose(), &vec![1.0; scaling.d.len()])
}

/// Forward powers achieving the targets: `(I − D Ψ) p = D 1`.
pub fn primal_powers(scaling: &DualScaling, psi: &DMatrix<f64>) -> Result<Vec<f64>> {
    solve_powers(&scaling.d, psi, &vec![1.0; scaling.d.len()])
}

/// Result of a covariance transformation, with the stream strategy that
/// realizes both directions.
#[derive(Clone, Debug)]
pub struct Transformation {
    pub sigma_hat: CovarianceSet,
    pub strategy: StreamStrategy,
    pub crosstalk: CrosstalkMatrix,
}

/// Drops zero-power streams so that `D` stays well defined.
fn drop_silent(strat: &mut StreamStrategy) {
    for s in &mut strat.links {
        let keep: Vec<bool> = s.p.iter().map(|&p| p > 0.0).collect();
        let pick = |v: &[CVec]| v.iter().zip(&keep).filter(|x| *x.1).map(|x| x.0.clone()).collect();
        *s = LinkStreams {
            t: pick(&s.t),
            r: pick(&s.r),
            p: s.p.iter().copied().filter(|&p| p > 0.0).collect(),
            q: s.q.iter().zip(&keep).filter(|x| *x.1).map(|x| *x.0).collect(),
        };
    }
}

fn transform_white(net: &NetworkSpec, sigma: &CovarianceSet) -> Result<Transformation> {
    let mut strat = strategy_from_covariances(net, sigma)?;
    drop_silent(&mut strat);
    let t = strat.transmit_vectors();
    let r = strat.receive_vectors();
    let counts = strat.stream_counts();
    let p: Vec<Vec<f64>> = strat.links.iter().map(|s| s.p.clone()).collect();
    let gamma: Vec<f64> = forward_sinrs(net, &t, &r, &p)?.into_iter().flatten().collect();
    let psi = crosstalk(net, &t, &r)?;
    let gains = direct_gains(net, &t, &r)?;
    let scaling = DualScaling::new(&gains, &gamma)?;
    let q = dual_powers(&scaling, &psi.matrix)?;
    for (s, ql) in strat.links.iter_mut().zip(unflatten(&q, &counts)) {
        s.q = ql;
    }
    let sigma_hat = CovarianceSet::from_hermitian(
        strat
            .links
            .iter()
            .zip(net.reverse_dims())
            .map(|(s, d)| hermitize(&outer_sum(&s.r, &s.q, d)))
            .collect(),
    );
    Ok(Transformation { sigma_hat, strategy: strat, crosstalk: psi })
}

/// Maps forward covariances to reverse covariances with equal or larger
/// reverse rates and the same constraint value. Colored networks are handled
/// by whitening, transforming, and mapping back.
pub fn covariance_transformation_full(net: &NetworkSpec, sigma: &CovarianceSet) -> Result<Transformation> {
    sigma.check_dims(&net.forward_dims())?;
    if net.is_white() {
        return transform_white(net, sigma);
    }
    let (white, maps) = whiten(net)?;
    let mut out = transform_white(&white, &maps.forward_to_white(sigma))?;
    out.sigma_hat = maps.reverse_from_white(&out.sigma_hat);
    Ok(out)
}

pub fn covariance_transformation(net: &NetworkSpec, sigma: &CovarianceSet) -> Result<CovarianceSet> {
    Ok(covariance_transformation_full(net, sigma)?.sigma_hat)
}

/// The transformation applied in the reverse direction: reverse covariances
/// of `net` to forward covariances.
pub fn reverse_covariance_transformation(net: &NetworkSpec, sigma_hat: &CovarianceSet) -> Result<CovarianceSet> {
    covariance_transformation(&reverse_network(net), sigma_hat)
}

/// Convenience for single matrices in tests and kernels.
pub fn stream_covariance(vecs: &[CVec], powers: &[f64]) -> CMat {
    let dim = vecs.first().map_or(0, |v| v.len());
    hermitize(&outer_sum(vecs, powers, dim))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, random_cn, random_psd, trace_prod_re};
    use crate::netmodel::{link_rates, reverse_link_rates};
    use crate::streams::{basis_vector, reverse_sinrs};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_net(rng: &mut ChaCha8Rng, links: usize, ant: usize) -> NetworkSpec {
        let h = (0..links)
            .map(|_| (0..links).map(|_| random_cn(rng, ant, ant)).collect())
            .collect();
        let phi = DMatrix::from_fn(links, links, |i, j| if i == j { 0.0 } else { 1.0 });
        NetworkSpec::new(h, phi).unwrap()
    }

    #[test]
    fn single_stream_dual_is_primal() {
        let s = DualScaling::new(&[0.5], &[2.0]).unwrap();
        let q = dual_powers(&s, &DMatrix::zeros(1, 1)).unwrap();
        assert!((q[0] - 4.0).abs() < 1e-15);
        let s = DualScaling::new(&[1.0, 2.0], &[3.0, 1.0]).unwrap();
        let q = dual_powers(&s, &DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(q, vec![3.0, 0.5]);
    }

    #[test]
    fn infeasible_targets_rejected() {
        let psi = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let s = DualScaling::new(&[1.0, 1.0], &[2.0, 2.0]).unwrap();
        assert!(matches!(dual_powers(&s, &psi), Err(Error::Infeasible(_))));
        assert!(matches!(DualScaling::new(&[0.0], &[1.0]), Err(Error::Infeasible(_))));
    }

    #[test]
    fn power_round_trip_on_random_net() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = random_net(&mut rng, 2, 2);
        let sigma = CovarianceSet::new((0..2).map(|_| random_psd(&mut rng, 2, 2, 1.5)).collect()).unwrap();
        let tr = covariance_transformation_full(&net, &sigma).unwrap();
        let st = &tr.strategy;
        let (t, r) = (st.transmit_vectors(), st.receive_vectors());
        let p: Vec<Vec<f64>> = st.links.iter().map(|s| s.p.clone()).collect();
        let q: Vec<Vec<f64>> = st.links.iter().map(|s| s.q.clone()).collect();
        let sp: f64 = st.flat_p().iter().sum();
        let sq: f64 = st.flat_q().iter().sum();
        assert!((sp - sq).abs() < 1e-9 * sp);
        let g = forward_sinrs(&net, &t, &r, &p).unwrap();
        let gh = reverse_sinrs(&net, &r, &t, &q).unwrap();
        for (a, b) in g.iter().flatten().zip(gh.iter().flatten()) {
            assert!((a - b).abs() < 1e-9 * (1.0 + a));
        }
        let gains = direct_gains(&net, &t, &r).unwrap();
        let flat: Vec<f64> = gh.into_iter().flatten().collect();
        let back = primal_powers(&DualScaling::new(&gains, &flat).unwrap(), &tr.crosstalk.matrix).unwrap();
        for (a, b) in back.iter().zip(st.flat_p()) {
            assert!((a - b).abs() < 1e-8 * (1.0 + b));
        }
    }

    #[test]
    fn scalar_single_user_transformation() {
        let net = NetworkSpec::new(vec![vec![CMat::from_element(1, 1, c(0.0, 1.5))]], DMatrix::zeros(1, 1)).unwrap();
        let sigma = CovarianceSet::new(vec![CMat::from_element(1, 1, c(2.0, 0.0))]).unwrap();
        let hat = covariance_transformation(&net, &sigma).unwrap();
        assert!((hat[0][(0, 0)].re - 2.0).abs() < 1e-12);
        let f = link_rates(&net, &sigma).unwrap()[0];
        let r = reverse_link_rates(&net, &hat).unwrap()[0];
        assert!((f - r).abs() < 1e-12);
    }

    #[test]
    fn transformation_on_three_links() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let net = random_net(&mut rng, 3, 3);
        let sigma = CovarianceSet::new((0..3).map(|_| random_psd(&mut rng, 3, 2, 2.0)).collect()).unwrap();
        let hat = covariance_transformation(&net, &sigma).unwrap();
        let f = link_rates(&net, &sigma).unwrap();
        let r = reverse_link_rates(&net, &hat).unwrap();
        for (a, b) in f.iter().zip(&r) {
            assert!(b >= &(a - 1e-9), "{b} < {a}");
        }
        assert!((hat.total_power() - sigma.total_power()).abs() < 1e-9 * sigma.total_power());
    }

    #[test]
    fn colored_net_preserves_constraint_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let net = random_net(&mut rng, 2, 2);
        let noise: Vec<CMat> = (0..2).map(|_| random_psd(&mut rng, 2, 2, 2.0) + crate::linalg::identity(2)).collect();
        let weight: Vec<CMat> = (0..2).map(|_| random_psd(&mut rng, 2, 2, 1.0) + crate::linalg::identity(2)).collect();
        let net = net.with_noise(noise.clone()).unwrap().with_weights(weight.clone()).unwrap();
        let sigma = CovarianceSet::new((0..2).map(|_| random_psd(&mut rng, 2, 2, 1.0)).collect()).unwrap();
        let hat = covariance_transformation(&net, &sigma).unwrap();
        let fwd: f64 = (0..2).map(|l| trace_prod_re(&sigma[l], &weight[l])).sum();
        let rev: f64 = (0..2).map(|l| trace_prod_re(&hat[l], &noise[l])).sum();
        assert!((fwd - rev).abs() < 1e-9 * fwd);
        let f = link_rates(&net, &sigma).unwrap();
        let r = reverse_link_rates(&net, &hat).unwrap();
        for (a, b) in f.iter().zip(&r) {
            assert!(b >= &(a - 1e-9));
        }
    }

    #[test]
    fn zero_power_links_pass_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let net = random_net(&mut rng, 2, 2);
        let sigma = CovarianceSet::new(vec![random_psd(&mut rng, 2, 1, 1.0), CMat::zeros(2, 2)]).unwrap();
        let hat = covariance_transformation(&net, &sigma).unwrap();
        assert_eq!(hat[1], CMat::zeros(2, 2));
        assert!(stream_covariance(&[basis_vector(2, 0)], &[2.0])[(0, 0)].re == 2.0);
    }
}
