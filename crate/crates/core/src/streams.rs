//! Decomposition of MIMO links into SISO streams with MMSE-SIC reception.
//!
//! Streams are indexed link-major: stream `m` of link `l` sits at flat index
//! `offsets[l] + m`. In the forward direction stream `m` is the `m`-th to be
//! decoded, so it sees streams `m+1..` of its own link as interference. The
//! reverse direction uses the opposite intra-link order.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{
    c, complement_basis, eigh_desc, identity, logdet_hpd, phase_normalize, rank_threshold,
    solve_hpd, solve_hpd_vec, trace_re, unit, CMat, CVec,
};
use crate::netmodel::{
    interference_covariance, reverse_interference_covariance, CovarianceSet, NetworkSpec,
};

/// Transmit/receive vectors and stream powers of one link.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinkStreams {
    pub t: Vec<CVec>,
    pub r: Vec<CVec>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl LinkStreams {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StreamStrategy {
    pub links: Vec<LinkStreams>,
}

impl StreamStrategy {
    pub fn stream_counts(&self) -> Vec<usize> {
        self.links.iter().map(LinkStreams::len).collect()
    }

    pub fn offsets(&self) -> Vec<usize> {
        offsets(&self.stream_counts())
    }

    pub fn total_streams(&self) -> usize {
        self.links.iter().map(LinkStreams::len).sum()
    }

    pub fn flat_p(&self) -> Vec<f64> {
        self.links.iter().flat_map(|s| s.p.iter().copied()).collect()
    }

    pub fn flat_q(&self) -> Vec<f64> {
        self.links.iter().flat_map(|s| s.q.iter().copied()).collect()
    }

    pub fn set_flat_p(&mut self, p: &[f64]) {
        let mut it = p.iter();
        for s in &mut self.links {
            for x in &mut s.p {
                *x = *it.next().expect("power vector length");
            }
        }
    }

    pub fn set_flat_q(&mut self, q: &[f64]) {
        let mut it = q.iter();
        for s in &mut self.links {
            for x in &mut s.q {
                *x = *it.next().expect("power vector length");
            }
        }
    }

    pub fn transmit_vectors(&self) -> Vec<Vec<CVec>> {
        self.links.iter().map(|s| s.t.clone()).collect()
    }

    pub fn receive_vectors(&self) -> Vec<Vec<CVec>> {
        self.links.iter().map(|s| s.r.clone()).collect()
    }

    /// `Σ_l = Σ_m p_{l,m} t_{l,m} t_{l,m}†`
    pub fn forward_covariances(&self, dims: &[usize]) -> CovarianceSet {
        CovarianceSet::from_hermitian(
            self.links
                .iter()
                .zip(dims)
                .map(|(s, &d)| outer_sum(&s.t, &s.p, d))
                .collect(),
        )
    }

    /// `Σ̂_l = Σ_m q_{l,m} r_{l,m} r_{l,m}†`
    pub fn reverse_covariances(&self, dims: &[usize]) -> CovarianceSet {
        CovarianceSet::from_hermitian(
            self.links
                .iter()
                .zip(dims)
                .map(|(s, &d)| outer_sum(&s.r, &s.q, d))
                .collect(),
        )
    }
}

pub fn offsets(counts: &[usize]) -> Vec<usize> {
    let mut acc = 0;
    counts
        .iter()
        .map(|&n| {
            let o = acc;
            acc += n;
            o
        })
        .collect()
}

/// `Σ_m w_m x_m x_m†` as a `dim × dim` matrix.
pub fn outer_sum(vecs: &[CVec], weights: &[f64], dim: usize) -> CMat {
    let mut m = CMat::zeros(dim, dim);
    for (v, &w) in vecs.iter().zip(weights) {
        if w != 0.0 {
            m += v * v.adjoint() * c(w, 0.0);
        }
    }
    m
}

/// Splits a covariance into unit transmit directions and powers via its
/// eigendecomposition: one stream per numerically nonzero eigenvalue, in
/// descending order of power.
pub fn decompose_eigen(sigma: &CMat) -> (Vec<CVec>, Vec<f64>) {
    let (vals, vecs) = eigh_desc(sigma);
    let Some(&top) = vals.first() else {
        return (Vec::new(), Vec::new());
    };
    let tol = rank_threshold(top.max(0.0), sigma.nrows(), sigma.ncols());
    let mut dirs = Vec::new();
    let mut powers = Vec::new();
    for (j, &v) in vals.iter().enumerate() {
        if v > tol && top > 0.0 {
            dirs.push(vecs.column(j).into_owned());
            powers.push(v);
        }
    }
    (dirs, powers)
}

/// Scaled precoder `[√p_1 t_1, …]` built from directions and powers.
pub fn precoder_matrix(dirs: &[CVec], powers: &[f64], dim: usize) -> CMat {
    let mut m = CMat::zeros(dim, dirs.len());
    for (j, (d, &p)) in dirs.iter().zip(powers).enumerate() {
        m.set_column(j, &(d * c(p.max(0.0).sqrt(), 0.0)));
    }
    m
}

/// Inverse of [`precoder_matrix`]: column norms squared become powers.
/// Zero columns get power zero and the first basis vector as direction.
pub fn precoder_streams(precoder: &CMat) -> (Vec<CVec>, Vec<f64>) {
    let n = precoder.nrows();
    let mut dirs = Vec::with_capacity(precoder.ncols());
    let mut powers = Vec::with_capacity(precoder.ncols());
    for col in precoder.column_iter() {
        let col = col.into_owned();
        match unit(&col) {
            Some(u) => {
                powers.push(col.norm_squared());
                dirs.push(u);
            }
            None => {
                powers.push(0.0);
                dirs.push(basis_vector(n, 0));
            }
        }
    }
    (dirs, powers)
}

pub fn basis_vector(n: usize, i: usize) -> CVec {
    let mut v = CVec::zeros(n);
    if n > 0 {
        v[i] = c(1.0, 0.0);
    }
    v
}

/// Builds a strategy whose transmit side is the eigendecomposition of each
/// covariance, with MMSE-SIC receivers attached.
pub fn strategy_from_covariances(net: &NetworkSpec, sigma: &CovarianceSet) -> Result<StreamStrategy> {
    sigma.check_dims(&net.forward_dims())?;
    let mut strat = StreamStrategy {
        links: sigma
            .iter()
            .map(|s| {
                let (t, p) = decompose_eigen(s);
                let n = t.len();
                LinkStreams { t, r: Vec::new(), p, q: vec![0.0; n] }
            })
            .collect(),
    };
    let r = mmse_sic_receivers(net, &strat.transmit_vectors(), &powers_of(&strat, Side::Forward))?;
    for (s, r) in strat.links.iter_mut().zip(r) {
        s.r = r;
    }
    Ok(strat)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Forward,
    Reverse,
}

pub fn powers_of(strat: &StreamStrategy, side: Side) -> Vec<Vec<f64>> {
    strat
        .links
        .iter()
        .map(|s| match side {
            Side::Forward => s.p.clone(),
            Side::Reverse => s.q.clone(),
        })
        .collect()
}

/// MMSE-SIC filters for one link. With `Side::Forward`, filter `m` treats
/// streams `m+1..` as interference; with `Side::Reverse`, streams `..m`.
pub fn sic_mmse_filters(h: &CMat, omega: &CMat, dirs: &[CVec], powers: &[f64], side: Side) -> Result<Vec<CVec>> {
    let n = h.nrows();
    let images: Vec<CVec> = dirs.iter().map(|t| h * t).collect();
    let mut out = Vec::with_capacity(dirs.len());
    for m in 0..dirs.len() {
        let mut k = omega.clone();
        let interferers: Box<dyn Iterator<Item = usize>> = match side {
            Side::Forward => Box::new(m + 1..dirs.len()),
            Side::Reverse => Box::new(0..m),
        };
        for i in interferers {
            if powers[i] != 0.0 {
                k += &images[i] * images[i].adjoint() * c(powers[i], 0.0);
            }
        }
        let filt = solve_hpd_vec(&k, &images[m])?;
        out.push(unit(&filt).unwrap_or_else(|| basis_vector(n, 0)));
    }
    Ok(out)
}

/// Forward MMSE-SIC receive vectors for transmit vectors `t` and powers `p`.
pub fn mmse_sic_receivers(net: &NetworkSpec, t: &[Vec<CVec>], p: &[Vec<f64>]) -> Result<Vec<Vec<CVec>>> {
    let dims = net.forward_dims();
    let sigma = CovarianceSet::from_hermitian(
        t.iter().zip(p).zip(&dims).map(|((t, p), &d)| outer_sum(t, p, d)).collect(),
    );
    (0..net.links())
        .map(|l| {
            let omega = interference_covariance(net, &sigma, l)?;
            sic_mmse_filters(net.channel(l, l), &omega, &t[l], &p[l], Side::Forward)
        })
        .collect()
}

/// Reverse-link MMSE-SIC receive vectors (new transmit vectors of the forward
/// links) for reverse transmit vectors `r` with powers `q`.
pub fn mmse_sic_transmitters(net: &NetworkSpec, r: &[Vec<CVec>], q: &[Vec<f64>]) -> Result<Vec<Vec<CVec>>> {
    let dims = net.reverse_dims();
    let sigma_hat = CovarianceSet::from_hermitian(
        r.iter().zip(q).zip(&dims).map(|((r, q), &d)| outer_sum(r, q, d)).collect(),
    );
    (0..net.links())
        .map(|l| {
            let omega_hat = reverse_interference_covariance(net, &sigma_hat, l)?;
            sic_mmse_filters(&net.channel(l, l).adjoint(), &omega_hat, &r[l], &q[l], Side::Reverse)
        })
        .collect()
}

/// Cross-talk matrix together with its stream layout.
#[derive(Clone, Debug, PartialEq)]
pub struct CrosstalkMatrix {
    pub matrix: DMatrix<f64>,
    pub counts: Vec<usize>,
}

impl CrosstalkMatrix {
    pub fn offsets(&self) -> Vec<usize> {
        offsets(&self.counts)
    }

    pub fn get(&self, l: usize, m: usize, k: usize, n: usize) -> f64 {
        let o = self.offsets();
        self.matrix[(o[l] + m, o[k] + n)]
    }
}

fn check_shapes(t: &[Vec<CVec>], r: &[Vec<CVec>], links: usize) -> Result<Vec<usize>> {
    if t.len() != links || r.len() != links {
        return Err(Error::Dimension("stream tables must cover every link".into()));
    }
    t.iter()
        .zip(r)
        .map(|(a, b)| {
            if a.len() == b.len() {
                Ok(a.len())
            } else {
                Err(Error::Dimension("transmit and receive stream counts differ".into()))
            }
        })
        .collect()
}

/// Entry `[(l,m),(k,n)]`: zero for `k = l, m ≥ n`; `|r_{l,m}† H_{l,l} t_{l,n}|²`
/// for `k = l, m < n`; `Φ_{l,k} |r_{l,m}† H_{l,k} t_{k,n}|²` otherwise.
pub fn crosstalk(net: &NetworkSpec, t: &[Vec<CVec>], r: &[Vec<CVec>]) -> Result<CrosstalkMatrix> {
    let counts = check_shapes(t, r, net.links())?;
    let off = offsets(&counts);
    let total: usize = counts.iter().sum();
    let mut psi = DMatrix::zeros(total, total);
    for l in 0..net.links() {
        for k in 0..net.links() {
            let phi = if k == l { 1.0 } else { net.coupling(l, k) };
            if phi == 0.0 {
                continue;
            }
            let h = net.channel(l, k);
            for (n, tv) in t[k].iter().enumerate() {
                let ht = h * tv;
                for (m, rv) in r[l].iter().enumerate() {
                    if k == l && m >= n {
                        continue;
                    }
                    psi[(off[l] + m, off[k] + n)] = phi * rv.dotc(&ht).norm_sqr();
                }
            }
        }
    }
    Ok(CrosstalkMatrix { matrix: psi, counts })
}

/// Direct gains `|r_{l,m}† H_{l,l} t_{l,m}|²`, flat.
pub fn direct_gains(net: &NetworkSpec, t: &[Vec<CVec>], r: &[Vec<CVec>]) -> Result<Vec<f64>> {
    check_shapes(t, r, net.links())?;
    let mut g = Vec::new();
    for l in 0..net.links() {
        let h = net.channel(l, l);
        for (tv, rv) in t[l].iter().zip(&r[l]) {
            g.push(rv.dotc(&(h * tv)).norm_sqr());
        }
    }
    Ok(g)
}

fn noise_terms(mats: impl Fn(usize) -> CMat, vecs: &[Vec<CVec>]) -> Vec<f64> {
    let mut out = Vec::new();
    for (l, vs) in vecs.iter().enumerate() {
        let w = mats(l);
        for v in vs {
            out.push(v.dotc(&(&w * v)).re);
        }
    }
    out
}

fn flatten(x: &[Vec<f64>]) -> Vec<f64> {
    x.iter().flatten().copied().collect()
}

pub fn unflatten(flat: &[f64], counts: &[usize]) -> Vec<Vec<f64>> {
    let mut it = flat.iter().copied();
    counts.iter().map(|&n| it.by_ref().take(n).collect()).collect()
}

/// Per-stream forward SINRs. The noise term is `r† W_l r`, which is 1 for
/// white noise and unit receivers.
pub fn forward_sinrs(net: &NetworkSpec, t: &[Vec<CVec>], r: &[Vec<CVec>], p: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let psi = crosstalk(net, t, r)?;
    let g = direct_gains(net, t, r)?;
    let noise = noise_terms(|l| net.noise(l).clone(), r);
    let pf = flatten(p);
    let gamma: Vec<f64> = (0..pf.len())
        .map(|i| {
            let interf: f64 = (0..pf.len()).map(|j| psi.matrix[(i, j)] * pf[j]).sum();
            pf[i] * g[i] / (noise[i] + interf)
        })
        .collect();
    Ok(unflatten(&gamma, &psi.counts))
}

/// Per-stream reverse SINRs with `r` as transmit and `t` as receive vectors;
/// the cross-talk matrix enters transposed.
pub fn reverse_sinrs(net: &NetworkSpec, r: &[Vec<CVec>], t: &[Vec<CVec>], q: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let psi = crosstalk(net, t, r)?;
    let g = direct_gains(net, t, r)?;
    let noise = noise_terms(|l| net.weight(l).clone(), t);
    let qf = flatten(q);
    let gamma: Vec<f64> = (0..qf.len())
        .map(|i| {
            let interf: f64 = (0..qf.len()).map(|j| psi.matrix[(j, i)] * qf[j]).sum();
            qf[i] * g[i] / (noise[i] + interf)
        })
        .collect();
    Ok(unflatten(&gamma, &psi.counts))
}

/// Output of [`equal_sinr_precoder`].
#[derive(Clone, Debug)]
pub struct EqualSinrPrecoder {
    /// Unitary `M × M` mixing matrix.
    pub mixing: CMat,
    /// Scaled precoder `Ṫ V` with `M` columns.
    pub precoder: CMat,
    /// Common per-stream SINR `e^{I/M} − 1`.
    pub target_sinr: f64,
    /// Mutual information over the whitened channel, nats.
    pub rate: f64,
}

fn eigen_precoder(sigma: &CMat, streams: usize) -> Result<CMat> {
    let (dirs, powers) = decompose_eigen(sigma);
    if dirs.len() > streams {
        return Err(Error::TooFewStreams { streams, rank: dirs.len() });
    }
    let mut tdot = CMat::zeros(sigma.nrows(), streams);
    let base = precoder_matrix(&dirs, &powers, sigma.nrows());
    for j in 0..base.ncols() {
        tdot.set_column(j, &base.column(j));
    }
    Ok(tdot)
}

/// Finds a decomposition of `sigma` into `streams` streams whose MMSE-SIC
/// SINRs over `h_equiv` (an interference-whitened channel) are all equal to
/// `e^{I/M} − 1`, by backward induction over the streams: each new mixing
/// vector combines the largest and smallest eigenvectors of the residual
/// SINR matrix restricted to the complement of the vectors already chosen.
pub fn equal_sinr_precoder(h_equiv: &CMat, sigma: &CMat, streams: usize) -> Result<EqualSinrPrecoder> {
    if streams == 0 {
        return Err(Error::TooFewStreams { streams, rank: 1 });
    }
    if h_equiv.ncols() != sigma.nrows() {
        return Err(Error::Dimension("channel columns must match covariance size".into()));
    }
    let tdot = eigen_precoder(sigma, streams)?;
    let hbar = h_equiv * &tdot;
    let gram = hbar.adjoint() * &hbar;
    let rate = logdet_hpd(&(identity(streams) + &gram))?.max(0.0);
    let tau = (rate / streams as f64).exp_m1();

    let n_r = hbar.nrows();
    let mut chosen: Vec<CVec> = Vec::with_capacity(streams);
    for m in (1..=streams).rev() {
        let mut k = identity(n_r);
        for v in &chosen {
            let hv = &hbar * v;
            k += &hv * hv.adjoint();
        }
        let a = hbar.adjoint() * solve_hpd(&k, &hbar)?;
        let basis = complement_basis(streams, &chosen);
        if basis.ncols() != m {
            return Err(Error::Eigen(format!(
                "complement of {} mixing vectors has dimension {}",
                chosen.len(),
                basis.ncols()
            )));
        }
        let restricted = basis.adjoint() * &a * &basis;
        let (lam, w) = eigh_desc(&restricted);
        let top = &basis * w.column(0);
        let low = &basis * w.column(m - 1);
        let (l1, lm) = (lam[0], lam[m - 1]);
        let v = if l1 - lm <= 1e-14 * (1.0 + l1.abs()) {
            top
        } else {
            let share = ((tau - lm) / (l1 - lm)).clamp(0.0, 1.0);
            top * c(share.sqrt(), 0.0) + low * c((1.0 - share).sqrt(), 0.0)
        };
        let v = unit(&v).ok_or_else(|| Error::Eigen("degenerate mixing vector".into()))?;
        chosen.push(v);
    }
    chosen.reverse();
    let mut mixing = CMat::zeros(streams, streams);
    for (j, v) in chosen.iter().enumerate() {
        mixing.set_column(j, v);
    }
    Ok(EqualSinrPrecoder { precoder: &tdot * &mixing, mixing, target_sinr: tau, rate })
}

/// Decomposition with uniform stream powers `Tr(Σ)/M`: `Ṫ = U D^{1/2} F₀`
/// where `F₀` holds rows of the `M × M` unitary DFT matrix (0-based indices),
/// zero-padded when `M` is below the antenna count.
pub fn equal_power_precoder(sigma: &CMat, streams: usize) -> Result<CMat> {
    let n = sigma.nrows();
    let (vals, u) = eigh_desc(sigma);
    let rank = decompose_eigen(sigma).0.len();
    if streams < rank || streams == 0 {
        return Err(Error::TooFewStreams { streams, rank: rank.max(1) });
    }
    let scale = 1.0 / (streams as f64).sqrt();
    let f0 = CMat::from_fn(n, streams, |k, l| {
        if k < streams {
            let angle = -2.0 * std::f64::consts::PI * (k * l) as f64 / streams as f64;
            c(angle.cos() * scale, angle.sin() * scale)
        } else {
            c(0.0, 0.0)
        }
    });
    let mut ud = u;
    for j in 0..n {
        let s = c(vals[j].max(0.0).sqrt(), 0.0);
        for i in 0..n {
            ud[(i, j)] *= s;
        }
    }
    Ok(ud * f0)
}

/// Strategy in which every link's covariance is re-decomposed into equal-SINR
/// streams over its interference-whitened channel; receivers are MMSE-SIC.
pub fn equal_sinr_strategy(net: &NetworkSpec, sigma: &CovarianceSet, streams: &[usize]) -> Result<StreamStrategy> {
    sigma.check_dims(&net.forward_dims())?;
    let mut links = Vec::with_capacity(net.links());
    for l in 0..net.links() {
        let omega = interference_covariance(net, sigma, l)?;
        let h_eq = crate::linalg::inv_sqrtm(&omega) * net.channel(l, l);
        let pre = equal_sinr_precoder(&h_eq, &sigma[l], streams[l])?;
        let (t, p) = precoder_streams(&pre.precoder);
        let n = t.len();
        links.push(LinkStreams { t, r: Vec::new(), p, q: vec![0.0; n] });
    }
    let mut strat = StreamStrategy { links };
    let r = mmse_sic_receivers(net, &strat.transmit_vectors(), &powers_of(&strat, Side::Forward))?;
    for (s, r) in strat.links.iter_mut().zip(r) {
        s.r = r;
    }
    Ok(strat)
}

/// Normalized copy of each vector, phase-fixed; used when importing vectors.
pub fn normalize_all(vs: &[CVec]) -> Vec<CVec> {
    vs.iter()
        .map(|v| unit(v).unwrap_or_else(|| phase_normalize(v)))
        .collect()
}

/// `Tr(Σ)` helper re-exported for callers that only hold a matrix.
pub fn power(sigma: &CMat) -> f64 {
    trace_re(sigma)
}
