//! Scenario files, presets and channel generation.

use bmac_core::linalg::{c, random_cn, CMat};
use bmac_core::netmodel::{EncodingOrder, NetworkSpec};
use bmac_core::rng::{stream_rng, STREAM_CHANNELS};
use bmac_core::solvers::Targets;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{HarnessError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Complex matrix as row-major real and imaginary parts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl MatrixJson {
    pub fn from_mat(m: &CMat) -> Self {
        let (rows, cols) = m.shape();
        let mut re = Vec::with_capacity(rows * cols);
        let mut im = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                re.push(m[(i, j)].re);
                im.push(m[(i, j)].im);
            }
        }
        Self { rows, cols, re, im }
    }

    pub fn to_mat(&self) -> Result<CMat> {
        let n = self.rows * self.cols;
        if self.re.len() != n || self.im.len() != n {
            return Err(HarnessError::Schema(format!("matrix {}x{} needs {n} entries", self.rows, self.cols)));
        }
        Ok(CMat::from_fn(self.rows, self.cols, |i, j| c(self.re[i * self.cols + j], self.im[i * self.cols + j])))
    }
}

/// Order at one physical node, first encoded (decoded) first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeOrder {
    pub node: usize,
    pub links: Vec<usize>,
}

/// JSON form of [`EncodingOrder`], with nodes as list entries rather than
/// map keys.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderJson {
    pub encode: Vec<NodeOrder>,
    pub decode: Vec<NodeOrder>,
}

impl From<&EncodingOrder> for OrderJson {
    fn from(o: &EncodingOrder) -> Self {
        let list = |m: &std::collections::BTreeMap<usize, Vec<usize>>| {
            m.iter().map(|(&node, links)| NodeOrder { node, links: links.clone() }).collect()
        };
        Self { encode: list(&o.encode), decode: list(&o.decode) }
    }
}

impl From<&OrderJson> for EncodingOrder {
    fn from(o: &OrderJson) -> Self {
        let map = |v: &[NodeOrder]| v.iter().map(|n| (n.node, n.links.clone())).collect();
        Self { encode: map(&o.encode), decode: map(&o.decode) }
    }
}

/// Coupling, node sharing and encode/decode order, common to every source.
/// With an `order`, entries between links that share a node are derived from
/// it; `coupling` then only matters for links sharing no node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub coupling: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tx_nodes: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rx_nodes: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<OrderJson>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NetworkSource {
    /// `H_{l,k} = sqrt(g_{l,k}) · CN(0, 1)` entries, drawn from the channel
    /// stream of the scenario seed in row-major `(l, k)` order.
    Generated {
        tx_antennas: Vec<usize>,
        rx_antennas: Vec<usize>,
        gain_db: Vec<Vec<f64>>,
        topology: Topology,
    },
    Inline {
        channels: Vec<Vec<MatrixJson>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        noise: Option<Vec<MatrixJson>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<Vec<MatrixJson>>,
        topology: Topology,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    A,
    B,
    Pr,
    Pr1,
    Prd,
    FopPr1,
}

impl SolverKind {
    pub fn is_fop(self) -> bool {
        matches!(self, SolverKind::A | SolverKind::FopPr1)
    }

    pub fn name(self) -> &'static str {
        match self {
            SolverKind::A => "a",
            SolverKind::B => "b",
            SolverKind::Pr => "pr",
            SolverKind::Pr1 => "pr1",
            SolverKind::Prd => "prd",
            SolverKind::FopPr1 => "fop-pr1",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunOptions {
    pub max_iters: usize,
    pub tol: f64,
    pub rate_tol: f64,
    pub power_cap: f64,
    /// Sum-power budget for the FOP solvers.
    pub total_power: Option<f64>,
    /// Extra random starts on top of the default start.
    pub multistart: usize,
    /// Start from random vectors/covariances instead of the default.
    pub random_init: bool,
    pub order_opt: bool,
    pub order_passes: usize,
    /// PRD training rounds; 3.5 means seven half rounds.
    pub rounds: f64,
    pub beta: f64,
    /// Per-transmitter power cap for PRD.
    pub pmax: Option<f64>,
    /// Pilot snapshots per PRD covariance estimate; exact when absent.
    pub estimation_samples: Option<usize>,
    pub trace_residuals: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tol: 1e-8,
            rate_tol: 1e-7,
            power_cap: 1e6,
            total_power: None,
            multistart: 0,
            random_init: false,
            order_opt: false,
            order_passes: 20,
            rounds: 3.5,
            beta: 1.0,
            pmax: None,
            estimation_samples: None,
            trace_residuals: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub version: u32,
    pub name: String,
    pub seed: u64,
    pub network: NetworkSource,
    pub targets_bits: Vec<f64>,
    pub solver: SolverKind,
    #[serde(default)]
    pub options: RunOptions,
}

fn matrix(rows: &[Vec<f64>], n: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(HarnessError::Schema(format!("{what} must be {n}x{n}")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn apply_topology(net: NetworkSpec, topo: &Topology) -> Result<NetworkSpec> {
    let n = net.links();
    let mut net = net;
    if topo.tx_nodes.is_some() || topo.rx_nodes.is_some() {
        let tx = topo.tx_nodes.clone().unwrap_or_else(|| (0..n).collect());
        let rx = topo.rx_nodes.clone().unwrap_or_else(|| (0..n).collect());
        net = net.with_nodes(tx, rx)?;
    }
    if let Some(order) = &topo.order {
        net = net.with_order(&order.into())?;
    }
    Ok(net)
}

impl Scenario {
    pub fn links(&self) -> usize {
        self.targets_bits.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != SCHEMA_VERSION {
            return Err(HarnessError::Schema(format!("unsupported schema version {}", self.version)));
        }
        if self.targets_bits.is_empty() || self.targets_bits.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
            return Err(HarnessError::Schema("targets must be positive".into()));
        }
        let o = &self.options;
        if o.max_iters == 0 || !(o.rounds >= 0.5) || (o.rounds * 2.0).fract() != 0.0 {
            return Err(HarnessError::Schema("iteration and round budgets must be positive (rounds in halves)".into()));
        }
        if !(o.beta >= 1.0) {
            return Err(HarnessError::Schema(format!("beta {} below 1", o.beta)));
        }
        if self.solver.is_fop() && !o.total_power.is_some_and(|p| p > 0.0) {
            return Err(HarnessError::Schema("FOP solvers need a positive total_power".into()));
        }
        Ok(())
    }

    pub fn targets(&self) -> Result<Targets> {
        Ok(Targets::from_bits(&self.targets_bits)?)
    }

    /// The network for this scenario's seed, order applied.
    pub fn network(&self) -> Result<NetworkSpec> {
        self.validate()?;
        let links = self.links();
        let net = match &self.network {
            NetworkSource::Generated { tx_antennas, rx_antennas, gain_db, topology } => {
                if tx_antennas.len() != links || rx_antennas.len() != links {
                    return Err(HarnessError::Schema("antenna lists must match the target count".into()));
                }
                let gains = matrix(gain_db, links, "gain_db")?;
                let mut rng = stream_rng(self.seed, STREAM_CHANNELS);
                let mut channels = vec![Vec::with_capacity(links); links];
                for (l, row) in channels.iter_mut().enumerate() {
                    for k in 0..links {
                        let amp = 10f64.powf(gains[(l, k)] / 20.0);
                        row.push(random_cn(&mut rng, rx_antennas[l], tx_antennas[k]) * c(amp, 0.0));
                    }
                }
                let net = NetworkSpec::new(channels, matrix(&topology.coupling, links, "coupling")?)?;
                apply_topology(net, topology)?
            }
            NetworkSource::Inline { channels, noise, weights, topology } => {
                if channels.len() != links {
                    return Err(HarnessError::Schema("channel table must match the target count".into()));
                }
                let h = channels
                    .iter()
                    .map(|row| row.iter().map(MatrixJson::to_mat).collect::<Result<Vec<_>>>())
                    .collect::<Result<Vec<_>>>()?;
                let mut net = NetworkSpec::new(h, matrix(&topology.coupling, links, "coupling")?)?;
                if let Some(w) = noise {
                    net = net.with_noise(w.iter().map(MatrixJson::to_mat).collect::<Result<_>>()?)?;
                }
                if let Some(w) = weights {
                    net = net.with_weights(w.iter().map(MatrixJson::to_mat).collect::<Result<_>>()?)?;
                }
                apply_topology(net, topology)?
            }
        };
        Ok(net)
    }

    /// Same network without the order applied, for order search.
    pub fn base_network(&self) -> Result<(NetworkSpec, EncodingOrder)> {
        let mut plain = self.clone();
        let order = match &mut plain.network {
            NetworkSource::Generated { topology, .. } | NetworkSource::Inline { topology, .. } => topology.order.take(),
        };
        let net = plain.network()?;
        let order = order.map_or_else(|| EncodingOrder::natural(&net), |o| (&o).into());
        Ok((net, order))
    }
}

fn off_diagonal(n: usize, on: f64, off: f64) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { on } else { off }).collect()).collect()
}

fn order(encode: &[(usize, &[usize])], decode: &[(usize, &[usize])]) -> OrderJson {
    let list = |v: &[(usize, &[usize])]| v.iter().map(|(node, l)| NodeOrder { node: *node, links: l.to_vec() }).collect();
    OrderJson { encode: list(encode), decode: list(decode) }
}

fn generated(n: usize, antennas: (usize, usize), gain_db: Vec<Vec<f64>>, topology: Topology) -> NetworkSource {
    NetworkSource::Generated {
        tx_antennas: vec![antennas.0; n],
        rx_antennas: vec![antennas.1; n],
        gain_db,
        topology,
    }
}

pub const PRESETS: &[&str] = &[
    "fig1",
    "fig2-orderA",
    "fig2-orderA-strong",
    "fig2-orderB",
    "ic3",
    "ic3-strong",
    "mac4",
    "mac4-equal",
];

/// Built-in topologies. Link indices are 0-based here.
pub fn preset(name: &str, seed: u64) -> Result<Scenario> {
    let (network, targets_bits, solver) = match name {
        // Transmitters {0,1}, {2}, {3,4}; receivers {0}, {1,2,3}, {4}.
        // Link 0 is encoded after link 1, link 3 after link 4, and link 3 is
        // decoded last at the shared receiver.
        "fig1" => {
            let topo = Topology {
                coupling: off_diagonal(5, 0.0, 1.0),
                tx_nodes: Some(vec![0, 0, 1, 2, 2]),
                rx_nodes: Some(vec![0, 1, 1, 1, 2]),
                order: Some(order(&[(0, &[1, 0]), (1, &[2]), (2, &[4, 3])], &[(0, &[0]), (1, &[1, 2, 3]), (2, &[4])])),
            };
            let rs = 16.0;
            (generated(5, (4, 4), off_diagonal(5, 0.0, 0.0), topo), vec![rs / 16.0, rs / 16.0, rs / 8.0, rs / 4.0, rs / 2.0], SolverKind::Pr1)
        }
        "fig2-orderA" | "fig2-orderA-strong" | "fig2-orderB" => {
            let phi = if name == "fig2-orderB" {
                vec![vec![0.0, 1.0, 1.0, 0.0], vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 1.0], vec![0.0; 4]]
            } else {
                vec![vec![0.0, 1.0, 1.0, 0.0], vec![0.0, 0.0, 1.0, 0.0], vec![0.0, 0.0, 0.0, 1.0], vec![0.0; 4]]
            };
            let mut gains = off_diagonal(4, 0.0, 0.0);
            if name == "fig2-orderA-strong" {
                gains[0][2] = 10.0;
                gains[1][2] = 10.0;
            }
            let topo = Topology { coupling: phi, tx_nodes: Some(vec![0, 1, 1, 2]), rx_nodes: Some(vec![0, 0, 1, 2]), order: None };
            let solver = if name == "fig2-orderB" { SolverKind::Pr1 } else { SolverKind::Pr };
            (generated(4, (4, 4), gains, topo), vec![5.0; 4], solver)
        }
        "ic3" | "ic3-strong" => {
            let g = if name == "ic3" { 0.0 } else { 10.0 };
            let topo = Topology { coupling: off_diagonal(3, 0.0, 1.0), tx_nodes: None, rx_nodes: None, order: None };
            (generated(3, (4, 4), off_diagonal(3, 0.0, g), topo), vec![5.0; 3], SolverKind::Pr1)
        }
        "mac4" | "mac4-equal" => {
            let rs = 15.0;
            let targets = if name == "mac4" {
                vec![rs / 15.0, 2.0 * rs / 15.0, 4.0 * rs / 15.0, 8.0 * rs / 15.0]
            } else {
                vec![rs / 4.0; 4]
            };
            let topo = Topology {
                coupling: off_diagonal(4, 0.0, 1.0),
                tx_nodes: Some(vec![0, 1, 2, 3]),
                rx_nodes: Some(vec![0; 4]),
                order: Some(order(&[(0, &[0]), (1, &[1]), (2, &[2]), (3, &[3])], &[(0, &[0, 1, 2, 3])])),
            };
            (generated(4, (2, 4), off_diagonal(4, 0.0, 0.0), topo), targets, SolverKind::Pr)
        }
        other => return Err(HarnessError::UnknownPreset(other.to_string())),
    };
    Ok(Scenario {
        version: SCHEMA_VERSION,
        name: name.to_string(),
        seed,
        network,
        targets_bits,
        solver,
        options: RunOptions::default(),
    })
}
