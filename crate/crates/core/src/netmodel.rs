//! Network instances, coupling matrices, interference covariances and rates.
//!
//! Link indices are 0-based in the API. Human-facing diagnostics (coupling
//! violations) print 1-based positions to match how coupling matrices are
//! usually written down.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    c, eigh_desc, fro_norm, hermitian_defect, hermitize, identity, inv_sqrtm, logdet_hpd, sqrtm,
    trace_prod_re, trace_re, CMat,
};

/// Tolerance on Hermitian symmetry and PSD-ness of covariances.
pub const COV_TOL: f64 = 1e-10;

/// A B-MAC network instance: channels `H[l][k]` from the transmitter of link
/// `k` to the receiver of link `l`, a coupling matrix, physical node grouping,
/// noise covariances `W` and constraint weights `Ŵ`.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    tx_antennas: Vec<usize>,
    rx_antennas: Vec<usize>,
    channels: Vec<Vec<CMat>>,
    coupling: DMatrix<f64>,
    tx_node: Vec<usize>,
    rx_node: Vec<usize>,
    noise: Vec<CMat>,
    weight: Vec<CMat>,
}

impl NetworkSpec {
    /// Builds a network with white noise, unit constraint weights and one
    /// physical node per virtual transmitter/receiver.
    pub fn new(channels: Vec<Vec<CMat>>, coupling: DMatrix<f64>) -> Result<Self> {
        let links = channels.len();
        if links == 0 {
            return Err(Error::Dimension("network needs at least one link".into()));
        }
        if channels.iter().any(|row| row.len() != links) {
            return Err(Error::Dimension("channel table must be L x L".into()));
        }
        let rx_antennas: Vec<usize> = (0..links).map(|l| channels[l][0].nrows()).collect();
        let tx_antennas: Vec<usize> = (0..links).map(|k| channels[0][k].ncols()).collect();
        for l in 0..links {
            for k in 0..links {
                let h = &channels[l][k];
                if h.nrows() != rx_antennas[l] || h.ncols() != tx_antennas[k] {
                    return Err(Error::Dimension(format!(
                        "H[{l}][{k}] is {}x{}, expected {}x{}",
                        h.nrows(),
                        h.ncols(),
                        rx_antennas[l],
                        tx_antennas[k]
                    )));
                }
            }
        }
        if coupling.nrows() != links || coupling.ncols() != links {
            return Err(Error::Dimension(format!(
                "coupling matrix is {}x{}, expected {links}x{links}",
                coupling.nrows(),
                coupling.ncols()
            )));
        }
        Ok(Self {
            noise: rx_antennas.iter().map(|&n| identity(n)).collect(),
            weight: tx_antennas.iter().map(|&n| identity(n)).collect(),
            tx_node: (0..links).collect(),
            rx_node: (0..links).collect(),
            tx_antennas,
            rx_antennas,
            channels,
            coupling,
        })
    }

    pub fn with_nodes(mut self, tx_node: Vec<usize>, rx_node: Vec<usize>) -> Result<Self> {
        if tx_node.len() != self.links() || rx_node.len() != self.links() {
            return Err(Error::Dimension("node grouping must list every link".into()));
        }
        for l in 0..self.links() {
            for k in 0..self.links() {
                if tx_node[l] == tx_node[k] && self.tx_antennas[l] != self.tx_antennas[k] {
                    return Err(Error::Dimension(format!(
                        "links {l} and {k} share a transmitter but differ in antenna count"
                    )));
                }
                if rx_node[l] == rx_node[k] && self.rx_antennas[l] != self.rx_antennas[k] {
                    return Err(Error::Dimension(format!(
                        "links {l} and {k} share a receiver but differ in antenna count"
                    )));
                }
            }
        }
        self.tx_node = tx_node;
        self.rx_node = rx_node;
        Ok(self)
    }

    pub fn with_noise(mut self, noise: Vec<CMat>) -> Result<Self> {
        check_pd_set(&noise, &self.rx_antennas, "noise covariance")?;
        self.noise = noise.iter().map(hermitize).collect();
        Ok(self)
    }

    pub fn with_weights(mut self, weight: Vec<CMat>) -> Result<Self> {
        check_pd_set(&weight, &self.tx_antennas, "constraint weight")?;
        self.weight = weight.iter().map(hermitize).collect();
        Ok(self)
    }

    pub fn with_coupling(mut self, coupling: DMatrix<f64>) -> Result<Self> {
        if coupling.shape() != (self.links(), self.links()) {
            return Err(Error::Dimension("coupling matrix must be L x L".into()));
        }
        self.coupling = coupling;
        Ok(self)
    }

    pub fn links(&self) -> usize {
        self.channels.len()
    }

    pub fn tx_antennas(&self, l: usize) -> usize {
        self.tx_antennas[l]
    }

    pub fn rx_antennas(&self, l: usize) -> usize {
        self.rx_antennas[l]
    }

    pub fn channel(&self, l: usize, k: usize) -> &CMat {
        &self.channels[l][k]
    }

    pub fn coupling(&self, l: usize, k: usize) -> f64 {
        self.coupling[(l, k)]
    }

    pub fn coupling_matrix(&self) -> &DMatrix<f64> {
        &self.coupling
    }

    pub fn tx_node(&self, l: usize) -> usize {
        self.tx_node[l]
    }

    pub fn rx_node(&self, l: usize) -> usize {
        self.rx_node[l]
    }

    pub fn noise(&self, l: usize) -> &CMat {
        &self.noise[l]
    }

    pub fn weight(&self, l: usize) -> &CMat {
        &self.weight[l]
    }

    /// True when every noise covariance and constraint weight is the identity.
    pub fn is_white(&self) -> bool {
        let is_eye = |m: &CMat| fro_norm(&(m - identity(m.nrows()))) == 0.0;
        self.noise.iter().all(is_eye) && self.weight.iter().all(is_eye)
    }

    /// Antenna counts that forward covariances must match.
    pub fn forward_dims(&self) -> Vec<usize> {
        self.tx_antennas.clone()
    }

    /// Antenna counts that reverse covariances must match.
    pub fn reverse_dims(&self) -> Vec<usize> {
        self.rx_antennas.clone()
    }

    /// Constraint value `Σ Tr(Σ_l Ŵ_l)`.
    pub fn weighted_power(&self, sigma: &CovarianceSet) -> f64 {
        sigma
            .iter()
            .zip(&self.weight)
            .map(|(s, w)| trace_prod_re(s, w))
            .sum()
    }

    /// Reverse constraint value `Σ Tr(Σ̂_l W_l)`.
    pub fn reverse_weighted_power(&self, sigma_hat: &CovarianceSet) -> f64 {
        sigma_hat
            .iter()
            .zip(&self.noise)
            .map(|(s, w)| trace_prod_re(s, w))
            .sum()
    }

    /// Reindexes links so that new link `i` is old link `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_perm(perm, self.links())?;
        let n = perm.len();
        let channels = (0..n)
            .map(|i| (0..n).map(|j| self.channels[perm[i]][perm[j]].clone()).collect())
            .collect();
        let coupling = DMatrix::from_fn(n, n, |i, j| self.coupling[(perm[i], perm[j])]);
        Ok(Self {
            tx_antennas: perm.iter().map(|&p| self.tx_antennas[p]).collect(),
            rx_antennas: perm.iter().map(|&p| self.rx_antennas[p]).collect(),
            channels,
            coupling,
            tx_node: perm.iter().map(|&p| self.tx_node[p]).collect(),
            rx_node: perm.iter().map(|&p| self.rx_node[p]).collect(),
            noise: perm.iter().map(|&p| self.noise[p].clone()).collect(),
            weight: perm.iter().map(|&p| self.weight[p].clone()).collect(),
        })
    }

    /// Same network under the coupling matrix induced by `order`.
    pub fn with_order(&self, order: &EncodingOrder) -> Result<Self> {
        let phi = order.coupling(self)?;
        self.clone().with_coupling(phi)
    }
}

fn check_pd_set(mats: &[CMat], dims: &[usize], what: &'static str) -> Result<()> {
    if mats.len() != dims.len() {
        return Err(Error::Dimension(format!("{what}: expected {} matrices", dims.len())));
    }
    for (m, &d) in mats.iter().zip(dims) {
        if m.shape() != (d, d) {
            return Err(Error::Dimension(format!("{what}: expected {d}x{d}")));
        }
        if hermitian_defect(m) > COV_TOL * (1.0 + fro_norm(m)) {
            return Err(Error::NotPositiveDefinite(what));
        }
        if eigh_desc(m).0.last().copied().unwrap_or(1.0) <= 0.0 {
            return Err(Error::NotPositiveDefinite(what));
        }
    }
    Ok(())
}

fn check_perm(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n {
        return Err(Error::Invalid(format!("permutation has {} entries, expected {n}", perm.len())));
    }
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::Invalid(format!("{perm:?} is not a permutation")));
        }
        seen[p] = true;
    }
    Ok(())
}

/// Per-link Hermitian PSD covariance matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceSet(Vec<CMat>);

impl CovarianceSet {
    /// Validates Hermitian symmetry and PSD-ness within [`COV_TOL`]
    /// (relative to the matrix scale), symmetrizes, and clamps slightly
    /// negative eigenvalues to zero.
    pub fn new(mats: Vec<CMat>) -> Result<Self> {
        let mut out = Vec::with_capacity(mats.len());
        for (l, m) in mats.into_iter().enumerate() {
            if m.nrows() != m.ncols() {
                return Err(Error::Dimension(format!("covariance {l} is not square")));
            }
            let scale = 1.0 + fro_norm(&m);
            if hermitian_defect(&m) > COV_TOL * scale {
                return Err(Error::Invalid(format!("covariance {l} is not Hermitian")));
            }
            let h = hermitize(&m);
            let (vals, _) = eigh_desc(&h);
            if vals.last().is_some_and(|&v| v < -COV_TOL * scale) {
                return Err(Error::Invalid(format!("covariance {l} is not PSD")));
            }
            if vals.last().is_some_and(|&v| v < 0.0) {
                out.push(crate::linalg::psd_part(&h));
            } else {
                out.push(h);
            }
        }
        Ok(Self(out))
    }

    /// Wraps matrices that are Hermitian PSD by construction; only symmetrizes.
    pub fn from_hermitian(mats: Vec<CMat>) -> Self {
        Self(mats.iter().map(hermitize).collect())
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self(dims.iter().map(|&n| CMat::zeros(n, n)).collect())
    }

    /// `Σ_l = (total / (L · n_l)) I`.
    pub fn scaled_identity(dims: &[usize], total: f64) -> Self {
        let links = dims.len() as f64;
        Self(
            dims.iter()
                .map(|&n| identity(n) * c(total / (links * n as f64), 0.0))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, CMat> {
        self.0.iter()
    }

    pub fn as_slice(&self) -> &[CMat] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<CMat> {
        self.0
    }

    /// Replaces link `l`'s matrix (symmetrized).
    pub fn set(&mut self, l: usize, m: CMat) {
        self.0[l] = hermitize(&m);
    }

    /// Unweighted sum power `Σ Tr(Σ_l)`.
    pub fn total_power(&self) -> f64 {
        self.0.iter().map(trace_re).sum()
    }

    pub fn link_power(&self, l: usize) -> f64 {
        trace_re(&self.0[l])
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self(perm.iter().map(|&p| self.0[p].clone()).collect())
    }

    /// Inverse of [`CovarianceSet::permuted`].
    pub fn unpermuted(&self, perm: &[usize]) -> Self {
        let mut out = self.0.clone();
        for (i, &p) in perm.iter().enumerate() {
            out[p] = self.0[i].clone();
        }
        Self(out)
    }

    pub fn check_dims(&self, dims: &[usize]) -> Result<()> {
        if self.0.len() != dims.len() {
            return Err(Error::Dimension(format!(
                "covariance set has {} links, network has {}",
                self.0.len(),
                dims.len()
            )));
        }
        for (l, (m, &d)) in self.0.iter().zip(dims).enumerate() {
            if m.shape() != (d, d) {
                return Err(Error::Dimension(format!(
                    "covariance {l} is {}x{}, expected {d}x{d}",
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        Ok(())
    }
}

impl std::ops::Index<usize> for CovarianceSet {
    type Output = CMat;

    fn index(&self, l: usize) -> &CMat {
        &self.0[l]
    }
}

/// A coupling-matrix defect found by [`validate_coupling`].
#[derive(Clone, Debug, PartialEq)]
pub enum CouplingViolation {
    Shape { rows: usize, cols: usize, links: usize },
    /// 1-based link index.
    DiagonalNonzero(usize),
    /// 1-based row and column.
    NonBinary { row: usize, col: usize, value: f64 },
}

impl fmt::Display for CouplingViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Shape { rows, cols, links } => {
                write!(f, "coupling matrix is {rows}x{cols} for {links} links")
            }
            Self::DiagonalNonzero(l) => write!(f, "diagonal nonzero at {l}"),
            Self::NonBinary { row, col, value } => {
                write!(f, "non-binary entry {value} at ({row}, {col})")
            }
        }
    }
}

pub fn validate_coupling(net: &NetworkSpec) -> Vec<CouplingViolation> {
    coupling_violations(net.coupling_matrix(), net.links())
}

/// Checks a bare coupling matrix: square `links × links`, binary, zero diagonal.
pub fn coupling_violations(phi: &DMatrix<f64>, links: usize) -> Vec<CouplingViolation> {
    let (rows, cols) = phi.shape();
    if rows != links || cols != links {
        return vec![CouplingViolation::Shape { rows, cols, links }];
    }
    let mut out = Vec::new();
    for l in 0..links {
        if phi[(l, l)] != 0.0 {
            out.push(CouplingViolation::DiagonalNonzero(l + 1));
        }
    }
    for l in 0..links {
        for k in 0..links {
            let v = phi[(l, k)];
            if v != 0.0 && v != 1.0 {
                out.push(CouplingViolation::NonBinary { row: l + 1, col: k + 1, value: v });
            }
        }
    }
    out
}

fn check_link(net: &NetworkSpec, l: usize) -> Result<()> {
    if l >= net.links() {
        return Err(Error::LinkIndex { index: l, links: net.links() });
    }
    Ok(())
}

/// Interference-plus-noise covariance
/// `Ω_l = W_l + Σ_{k≠l} Φ_{l,k} H_{l,k} Σ_k H_{l,k}†`.
pub fn interference_covariance(net: &NetworkSpec, sigma: &CovarianceSet, l: usize) -> Result<CMat> {
    check_link(net, l)?;
    sigma.check_dims(&net.tx_antennas)?;
    let mut omega = net.noise[l].clone();
    for k in 0..net.links() {
        let phi = net.coupling[(l, k)];
        if k == l || phi == 0.0 {
            continue;
        }
        let h = &net.channels[l][k];
        omega += h * &sigma[k] * h.adjoint() * c(phi, 0.0);
    }
    Ok(hermitize(&omega))
}

/// Reverse-link interference-plus-noise covariance
/// `Ω̂_l = Ŵ_l + Σ_{k≠l} Φ_{k,l} H_{k,l}† Σ̂_k H_{k,l}`.
pub fn reverse_interference_covariance(
    net: &NetworkSpec,
    sigma_hat: &CovarianceSet,
    l: usize,
) -> Result<CMat> {
    check_link(net, l)?;
    sigma_hat.check_dims(&net.rx_antennas)?;
    let mut omega = net.weight[l].clone();
    for k in 0..net.links() {
        let phi = net.coupling[(k, l)];
        if k == l || phi == 0.0 {
            continue;
        }
        let h = &net.channels[k][l];
        omega += h.adjoint() * &sigma_hat[k] * h * c(phi, 0.0);
    }
    Ok(hermitize(&omega))
}

pub fn interference_covariances(net: &NetworkSpec, sigma: &CovarianceSet) -> Result<Vec<CMat>> {
    (0..net.links()).map(|l| interference_covariance(net, sigma, l)).collect()
}

pub fn reverse_interference_covariances(
    net: &NetworkSpec,
    sigma_hat: &CovarianceSet,
) -> Result<Vec<CMat>> {
    (0..net.links())
        .map(|l| reverse_interference_covariance(net, sigma_hat, l))
        .collect()
}

/// `ln|Ω + H Σ H†| − ln|Ω|`, clamped at zero.
pub fn rate_given_omega(h: &CMat, sigma: &CMat, omega: &CMat) -> Result<f64> {
    let signal = h * sigma * h.adjoint();
    let rate = logdet_hpd(&(omega + signal))? - logdet_hpd(omega)?;
    Ok(rate.max(0.0))
}

/// Achievable rate of link `l` in nats.
pub fn link_rate(net: &NetworkSpec, sigma: &CovarianceSet, l: usize) -> Result<f64> {
    let omega = interference_covariance(net, sigma, l)?;
    rate_given_omega(&net.channels[l][l], &sigma[l], &omega)
}

pub fn link_rates(net: &NetworkSpec, sigma: &CovarianceSet) -> Result<Vec<f64>> {
    (0..net.links()).map(|l| link_rate(net, sigma, l)).collect()
}

/// Rate of reverse link `l` (channel `H_{l,l}†`) in nats.
pub fn reverse_link_rate(net: &NetworkSpec, sigma_hat: &CovarianceSet, l: usize) -> Result<f64> {
    let omega_hat = reverse_interference_covariance(net, sigma_hat, l)?;
    rate_given_omega(&net.channels[l][l].adjoint(), &sigma_hat[l], &omega_hat)
}

pub fn reverse_link_rates(net: &NetworkSpec, sigma_hat: &CovarianceSet) -> Result<Vec<f64>> {
    (0..net.links()).map(|l| reverse_link_rate(net, sigma_hat, l)).collect()
}

/// The dual network: channels `H'_{l,k} = H_{k,l}†`, coupling `Φᵀ`, and the
/// roles of noise and constraint weight swapped.
pub fn reverse_network(net: &NetworkSpec) -> NetworkSpec {
    let n = net.links();
    NetworkSpec {
        tx_antennas: net.rx_antennas.clone(),
        rx_antennas: net.tx_antennas.clone(),
        channels: (0..n)
            .map(|l| (0..n).map(|k| net.channels[k][l].adjoint()).collect())
            .collect(),
        coupling: net.coupling.transpose(),
        tx_node: net.rx_node.clone(),
        rx_node: net.tx_node.clone(),
        noise: net.weight.clone(),
        weight: net.noise.clone(),
    }
}

/// Finds a reindexing under which no link is interfered by a lower-indexed
/// link. Returns `perm` with new link `i` = old link `perm[i]`, or `None` when
/// the interference digraph has a cycle. Among valid orders the smallest
/// available index is always taken first, so an already-ordered network maps
/// to the identity.
pub fn is_itree(phi: &DMatrix<f64>) -> Option<Vec<usize>> {
    let n = phi.nrows();
    // edge l -> k when k interferes l: l must be placed before k
    let mut indegree = vec![0usize; n];
    for l in 0..n {
        for k in 0..n {
            if k != l && phi[(l, k)] != 0.0 {
                indegree[k] += 1;
            }
        }
    }
    let mut ready: std::collections::BTreeSet<usize> =
        (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(&l) = ready.iter().next() {
        ready.remove(&l);
        order.push(l);
        for k in 0..n {
            if k != l && phi[(l, k)] != 0.0 {
                indegree[k] -= 1;
                if indegree[k] == 0 {
                    ready.insert(k);
                }
            }
        }
    }
    (order.len() == n).then_some(order)
}

/// Checks that link `l` is never interfered by a link `k < l`.
pub fn check_itree_ordered(net: &NetworkSpec) -> Result<()> {
    for l in 0..net.links() {
        for k in 0..l {
            if net.coupling[(l, k)] != 0.0 {
                return Err(Error::NotITree { interfered: l, interferer: k });
            }
        }
    }
    Ok(())
}

/// Sub-network formed by the first `i` links of an iTree-ordered network with
/// the remaining links' covariances held fixed. Their interference is folded
/// into colored noise `W_l + Σ_{j≥i} Φ_{l,j} H_{l,j} Σ_j H_{l,j}†`. Also
/// returns the budget `P_T^i = Σ_{l<i} Tr(Σ_l Ŵ_l)`.
pub fn sub_network(net: &NetworkSpec, sigma: &CovarianceSet, i: usize) -> Result<(NetworkSpec, f64)> {
    check_itree_ordered(net)?;
    sigma.check_dims(&net.tx_antennas)?;
    if i == 0 || i > net.links() {
        return Err(Error::LinkIndex { index: i, links: net.links() });
    }
    let mut noise = Vec::with_capacity(i);
    for l in 0..i {
        let mut w = net.noise[l].clone();
        for j in i..net.links() {
            let phi = net.coupling[(l, j)];
            if phi != 0.0 {
                let h = &net.channels[l][j];
                w += h * &sigma[j] * h.adjoint() * c(phi, 0.0);
            }
        }
        noise.push(hermitize(&w));
    }
    let budget = (0..i).map(|l| trace_prod_re(&sigma[l], &net.weight[l])).sum();
    let sub = NetworkSpec {
        tx_antennas: net.tx_antennas[..i].to_vec(),
        rx_antennas: net.rx_antennas[..i].to_vec(),
        channels: (0..i).map(|l| net.channels[l][..i].to_vec()).collect(),
        coupling: net.coupling.view((0, 0), (i, i)).into_owned(),
        tx_node: net.tx_node[..i].to_vec(),
        rx_node: net.rx_node[..i].to_vec(),
        noise,
        weight: net.weight[..i].to_vec(),
    };
    Ok((sub, budget))
}

/// Square roots of the noise and weight matrices used to move covariances in
/// and out of a whitened network.
#[derive(Clone, Debug)]
pub struct Whitening {
    noise_sqrt: Vec<CMat>,
    noise_inv_sqrt: Vec<CMat>,
    weight_sqrt: Vec<CMat>,
    weight_inv_sqrt: Vec<CMat>,
}

impl Whitening {
    fn map(set: &CovarianceSet, by: &[CMat]) -> CovarianceSet {
        CovarianceSet::from_hermitian(set.iter().zip(by).map(|(s, m)| m * s * m).collect())
    }

    /// `Σ' = Ŵ^{1/2} Σ Ŵ^{1/2}`
    pub fn forward_to_white(&self, sigma: &CovarianceSet) -> CovarianceSet {
        Self::map(sigma, &self.weight_sqrt)
    }

    /// `Σ = Ŵ^{-1/2} Σ' Ŵ^{-1/2}`
    pub fn forward_from_white(&self, sigma: &CovarianceSet) -> CovarianceSet {
        Self::map(sigma, &self.weight_inv_sqrt)
    }

    /// `Σ̂' = W^{1/2} Σ̂ W^{1/2}`
    pub fn reverse_to_white(&self, sigma_hat: &CovarianceSet) -> CovarianceSet {
        Self::map(sigma_hat, &self.noise_sqrt)
    }

    /// `Σ̂ = W^{-1/2} Σ̂' W^{-1/2}`
    pub fn reverse_from_white(&self, sigma_hat: &CovarianceSet) -> CovarianceSet {
        Self::map(sigma_hat, &self.noise_inv_sqrt)
    }
}

/// Equivalent network with identity noise and weights: channels become
/// `W_k^{-1/2} H_{k,l} Ŵ_l^{-1/2}`. Rates and the constraint value are
/// invariant under the returned maps.
pub fn whiten(net: &NetworkSpec) -> Result<(NetworkSpec, Whitening)> {
    check_pd_set(&net.noise, &net.rx_antennas, "noise covariance")?;
    check_pd_set(&net.weight, &net.tx_antennas, "constraint weight")?;
    let w = Whitening {
        noise_sqrt: net.noise.iter().map(sqrtm).collect(),
        noise_inv_sqrt: net.noise.iter().map(inv_sqrtm).collect(),
        weight_sqrt: net.weight.iter().map(sqrtm).collect(),
        weight_inv_sqrt: net.weight.iter().map(inv_sqrtm).collect(),
    };
    let n = net.links();
    let channels = (0..n)
        .map(|k| {
            (0..n)
                .map(|l| &w.noise_inv_sqrt[k] * &net.channels[k][l] * &w.weight_inv_sqrt[l])
                .collect()
        })
        .collect();
    let white = NetworkSpec {
        tx_antennas: net.tx_antennas.clone(),
        rx_antennas: net.rx_antennas.clone(),
        channels,
        coupling: net.coupling.clone(),
        tx_node: net.tx_node.clone(),
        rx_node: net.rx_node.clone(),
        noise: net.rx_antennas.iter().map(|&d| identity(d)).collect(),
        weight: net.tx_antennas.iter().map(|&d| identity(d)).collect(),
    };
    Ok((white, w))
}

/// Encode order per physical transmitter and decode order per physical
/// receiver. Each list runs from first encoded (decoded) to last.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EncodingOrder {
    pub encode: BTreeMap<usize, Vec<usize>>,
    pub decode: BTreeMap<usize, Vec<usize>>,
}

impl EncodingOrder {
    /// Ascending link index at every node.
    pub fn natural(net: &NetworkSpec) -> Self {
        let mut encode: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        let mut decode: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for l in 0..net.links() {
            encode.entry(net.tx_node[l]).or_default().push(l);
            decode.entry(net.rx_node[l]).or_default().push(l);
        }
        Self { encode, decode }
    }

    pub fn validate(&self, net: &NetworkSpec) -> Result<()> {
        let natural = Self::natural(net);
        for (label, ours, theirs) in [
            ("encode", &self.encode, &natural.encode),
            ("decode", &self.decode, &natural.decode),
        ] {
            if ours.keys().ne(theirs.keys()) {
                return Err(Error::Order(format!("{label} order must list every physical node")));
            }
            for (node, links) in ours {
                let mut sorted = links.clone();
                sorted.sort_unstable();
                if &sorted != &theirs[node] {
                    return Err(Error::Order(format!(
                        "{label} order at node {node} is not a permutation of its links"
                    )));
                }
            }
        }
        Ok(())
    }

    fn position(map: &BTreeMap<usize, Vec<usize>>, node: usize, link: usize) -> usize {
        map[&node].iter().position(|&x| x == link).expect("validated order")
    }

    /// Coupling matrix produced by dirty-paper coding at transmitters and
    /// successive cancellation at receivers under this order. Entries between
    /// links sharing neither a transmitter nor a receiver keep the network's
    /// current value (whether a signal path exists at all).
    pub fn coupling(&self, net: &NetworkSpec) -> Result<DMatrix<f64>> {
        self.validate(net)?;
        let n = net.links();
        let mut phi = DMatrix::zeros(n, n);
        for l in 0..n {
            for k in 0..n {
                if k == l {
                    continue;
                }
                let same_tx = net.tx_node[l] == net.tx_node[k];
                let same_rx = net.rx_node[l] == net.rx_node[k];
                let cancelled_by_dpc = same_tx && {
                    let t = net.tx_node[l];
                    Self::position(&self.encode, t, l) > Self::position(&self.encode, t, k)
                };
                let cancelled_by_sic = same_rx && {
                    let r = net.rx_node[l];
                    Self::position(&self.decode, r, k) < Self::position(&self.decode, r, l)
                };
                phi[(l, k)] = if cancelled_by_dpc || cancelled_by_sic {
                    0.0
                } else if same_tx || same_rx {
                    1.0
                } else {
                    net.coupling[(l, k)]
                };
            }
        }
        Ok(phi)
    }
}

/// Maximal pseudo-BC and pseudo-MAC link sets (each with at least two links).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PseudoGroups {
    pub bc: Vec<Vec<usize>>,
    pub mac: Vec<Vec<usize>>,
}

/// Largest node size for which all subsets are enumerated.
const MAX_GROUP_ENUM: usize = 16;

fn maximal_uniform_sets(candidates: &[usize], uniform: impl Fn(&[usize]) -> bool) -> Vec<Vec<usize>> {
    let n = candidates.len().min(MAX_GROUP_ENUM);
    let mut valid: Vec<Vec<usize>> = Vec::new();
    let mut masks: Vec<u32> = (1u32..(1u32 << n)).filter(|m| m.count_ones() >= 2).collect();
    masks.sort_by_key(|m| std::cmp::Reverse(m.count_ones()));
    let mut kept_masks: Vec<u32> = Vec::new();
    for m in masks {
        if kept_masks.iter().any(|&k| k & m == m) {
            continue;
        }
        let set: Vec<usize> = (0..n).filter(|b| m & (1 << b) != 0).map(|b| candidates[b]).collect();
        if uniform(&set) {
            kept_masks.push(m);
            valid.push(set);
        }
    }
    valid.sort();
    valid
}

/// Pseudo BC: links sharing a physical transmitter such that every outside
/// link is either interfered by all of them or by none. Pseudo MAC: links
/// sharing a physical receiver such that every outside link interferes all of
/// them or none.
pub fn pseudo_groups(net: &NetworkSpec) -> PseudoGroups {
    let n = net.links();
    let phi = &net.coupling;
    let mut by_tx: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut by_rx: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for l in 0..n {
        by_tx.entry(net.tx_node[l]).or_default().push(l);
        by_rx.entry(net.rx_node[l]).or_default().push(l);
    }
    let mut groups = PseudoGroups::default();
    for links in by_tx.values().filter(|v| v.len() >= 2) {
        groups.bc.extend(maximal_uniform_sets(links, |set| {
            (0..n)
                .filter(|k| !set.contains(k))
                .all(|k| set.iter().all(|&j| phi[(k, j)] == phi[(k, set[0])]))
        }));
    }
    for links in by_rx.values().filter(|v| v.len() >= 2) {
        groups.mac.extend(maximal_uniform_sets(links, |set| {
            (0..n)
                .filter(|k| !set.contains(k))
                .all(|k| set.iter().all(|&j| phi[(j, k)] == phi[(set[0], k)]))
        }));
    }
    groups
}
