//! Radial collector network and the terminal-voltage fixed point.
//!
//! Each feeder is a tree rooted at the PCC (node 0). With the branch-node
//! incidence matrix `C` (rows = branches, columns = non-root nodes, entry 1
//! when the node's injection flows through the branch) and the diagonal
//! branch impedance matrix `Z`, node voltages follow from the injections as
//!
//! ```text
//! U = U_pcc + Cᵀ Z C I
//! ```
//!
//! The terminal-voltage solve iterates this sweep with the controller's
//! current laws until the node voltages stop moving.

use std::collections::VecDeque;
use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::control::{id_max, iq_ref, TurbineParams, VOLTAGE_FLOOR};
use crate::error::{Error, Result};

/// Serialises a complex impedance as `{ "r": .., "x": .. }`.
pub mod impedance {
    use num_complex::Complex64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Rx {
        r: f64,
        x: f64,
    }

    pub fn serialize<S: Serializer>(z: &Complex64, s: S) -> Result<S::Ok, S::Error> {
        Rx { r: z.re, x: z.im }.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Complex64, D::Error> {
        let rx = Rx::deserialize(d)?;
        Ok(Complex64::new(rx.r, rx.x))
    }

    pub mod option {
        use super::Rx;
        use num_complex::Complex64;
        use serde::{Deserialize, Deserializer, Serialize, Serializer};

        pub fn serialize<S: Serializer>(z: &Option<Complex64>, s: S) -> Result<S::Ok, S::Error> {
            z.map(|z| Rx { r: z.re, x: z.im }).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Complex64>, D::Error> {
            Ok(Option::<Rx>::deserialize(d)?.map(|rx| Complex64::new(rx.r, rx.x)))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    #[serde(with = "impedance")]
    pub z: Complex64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Feeder {
    pub branches: Vec<Branch>,
    /// Nodes hosting a turbine, in turbine numbering order.
    pub turbine_nodes: Vec<usize>,
}

impl Feeder {
    /// A chain PCC - n1 - n2 - ... with one turbine per node; the first
    /// branch is `link`, the others `step`.
    pub fn chain(n: usize, link: Complex64, step: Complex64) -> Self {
        let branches = (0..n)
            .map(|i| Branch {
                from: i,
                to: i + 1,
                z: if i == 0 { link } else { step },
            })
            .collect();
        Feeder {
            branches,
            turbine_nodes: (1..=n).collect(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.branches.len() + 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FarmTopology {
    pub feeders: Vec<Feeder>,
    #[serde(with = "impedance")]
    pub pcc_transformer_z: Complex64,
    #[serde(with = "impedance")]
    pub grid_thevenin_z: Complex64,
}

impl FarmTopology {
    pub fn n_turbines(&self) -> usize {
        self.feeders.iter().map(|f| f.turbine_nodes.len()).sum()
    }
}

/// Branch-node incidence matrix of one feeder.
#[derive(Clone, Debug, PartialEq)]
pub struct IncidenceMatrix(pub DMatrix<u8>);

impl IncidenceMatrix {
    pub fn n_branches(&self) -> usize {
        self.0.nrows()
    }
    /// Column `j` corresponds to node `j + 1`.
    pub fn n_nodes(&self) -> usize {
        self.0.ncols()
    }
}

/// Parent branch index of every node (None for the root), found by a
/// breadth-first walk from node 0. Fails unless the feeder is a tree.
fn parent_branches(feeder: &Feeder) -> Result<Vec<Option<usize>>> {
    let n = feeder.n_nodes();
    let mut adj = vec![Vec::new(); n];
    for (b, br) in feeder.branches.iter().enumerate() {
        if br.from >= n || br.to >= n || br.from == br.to {
            return Err(Error::Topology(format!(
                "branch {b} ({} -> {}) references nodes outside 0..{n}",
                br.from, br.to
            )));
        }
        if br.z.re < 0.0 || !br.z.re.is_finite() || !br.z.im.is_finite() {
            return Err(Error::Topology(format!("branch {b} has impedance {}", br.z)));
        }
        adj[br.from].push((br.to, b));
        adj[br.to].push((br.from, b));
    }
    let mut parent = vec![None; n];
    let mut seen = vec![false; n];
    seen[0] = true;
    let mut queue = VecDeque::from([0usize]);
    while let Some(node) = queue.pop_front() {
        for &(next, b) in &adj[node] {
            if Some(b) == parent[node] {
                continue;
            }
            if seen[next] {
                return Err(Error::Topology(format!("feeder is not radial: loop through branch {b}")));
            }
            seen[next] = true;
            parent[next] = Some(b);
            queue.push_back(next);
        }
    }
    if let Some(orphan) = seen.iter().position(|s| !s) {
        return Err(Error::Topology(format!("node {orphan} is not connected to the PCC")));
    }
    Ok(parent)
}

/// Branch indices on the path from the root to `node`.
fn root_path(feeder: &Feeder, parent: &[Option<usize>], mut node: usize) -> Vec<usize> {
    let mut path = Vec::new();
    while let Some(b) = parent[node] {
        path.push(b);
        let br = &feeder.branches[b];
        node = if br.to == node { br.from } else { br.to };
    }
    path.reverse();
    path
}

pub fn build_incidence(feeder: &Feeder) -> Result<IncidenceMatrix> {
    let parent = parent_branches(feeder)?;
    let n = feeder.n_nodes();
    let mut c = DMatrix::<u8>::zeros(feeder.branches.len(), n - 1);
    for node in 1..n {
        for b in root_path(feeder, &parent, node) {
            c[(b, node - 1)] = 1;
        }
    }
    Ok(IncidenceMatrix(c))
}

/// Injection of a turbine at terminal voltage `u` under the ride-through
/// current laws, with active power `|u| min(i_d0/|u|, id_max)` and reactive
/// power `|u| iq_ref`.
pub fn injection_current(u: Complex64, i_d0: f64, params: &TurbineParams) -> Complex64 {
    let mag = u.norm().max(VOLTAGE_FLOOR);
    let p = mag * (i_d0 / mag).min(id_max(mag, params));
    let q = mag * iq_ref(mag, params);
    let u = if u.norm() < VOLTAGE_FLOOR {
        Complex64::from_polar(VOLTAGE_FLOOR, u.arg())
    } else {
        u
    };
    (Complex64::new(p, q) / u).conj()
}

#[derive(Clone, Debug)]
struct FeederNetwork {
    /// Global index of this feeder's first turbine.
    offset: usize,
    n_turbines: usize,
    /// `Cᵀ Z C` restricted to turbine nodes, row-major.
    transfer: Vec<Complex64>,
}

/// Precomputed collector network.
#[derive(Clone, Debug)]
pub struct Network {
    feeders: Vec<FeederNetwork>,
    n_turbines: usize,
    /// Root-path impedance of every turbine.
    path_z: Vec<Complex64>,
    /// Whether a turbine's root path carries another turbine's current.
    path_shared: Vec<bool>,
    /// `(feeder, node)` of every turbine.
    location: Vec<(usize, usize)>,
}

impl Network {
    pub fn new(topology: &FarmTopology) -> Result<Self> {
        let mut feeders = Vec::with_capacity(topology.feeders.len());
        let mut path_z = Vec::new();
        let mut path_shared = Vec::new();
        let mut location = Vec::new();
        let mut offset = 0;
        for (fi, feeder) in topology.feeders.iter().enumerate() {
            let inc = build_incidence(feeder)?;
            let cols: Vec<usize> = feeder
                .turbine_nodes
                .iter()
                .map(|&node| {
                    if node == 0 || node >= feeder.n_nodes() {
                        Err(Error::Topology(format!("turbine on invalid node {node} of feeder {fi}")))
                    } else {
                        Ok(node - 1)
                    }
                })
                .collect::<Result<_>>()?;
            let mut sorted = cols.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != cols.len() {
                return Err(Error::Topology(format!("feeder {fi} has two turbines on one node")));
            }

            let c = inc.0.map(|v| Complex64::new(v as f64, 0.0));
            let z = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                feeder.branches.len(),
                feeder.branches.iter().map(|b| b.z),
            ));
            let full = c.transpose() * z * &c;
            let nt = cols.len();
            let mut transfer = Vec::with_capacity(nt * nt);
            for &r in &cols {
                for &k in &cols {
                    transfer.push(full[(r, k)]);
                }
            }

            for (i, &col) in cols.iter().enumerate() {
                path_z.push(full[(col, col)]);
                let shared = (0..inc.n_branches()).any(|b| {
                    inc.0[(b, col)] == 1 && cols.iter().enumerate().any(|(j, &other)| j != i && inc.0[(b, other)] == 1)
                });
                path_shared.push(shared);
                location.push((fi, feeder.turbine_nodes[i]));
            }

            feeders.push(FeederNetwork {
                offset,
                n_turbines: nt,
                transfer,
            });
            offset += nt;
        }
        Ok(Network {
            feeders,
            n_turbines: offset,
            path_z,
            path_shared,
            location,
        })
    }

    pub fn n_turbines(&self) -> usize {
        self.n_turbines
    }

    pub fn path_impedance(&self, turbine: usize) -> Complex64 {
        self.path_z[turbine]
    }

    pub fn path_is_shared(&self, turbine: usize) -> bool {
        self.path_shared[turbine]
    }

    pub fn location(&self, turbine: usize) -> (usize, usize) {
        self.location[turbine]
    }

    /// `out = u_pcc + Cᵀ Z C I` for every turbine node.
    pub fn apply(&self, u_pcc: Complex64, injections: &[Complex64], out: &mut [Complex64]) {
        for f in &self.feeders {
            let n = f.n_turbines;
            let inj = &injections[f.offset..f.offset + n];
            for (r, slot) in out[f.offset..f.offset + n].iter_mut().enumerate() {
                let row = &f.transfer[r * n..(r + 1) * n];
                let mut acc = u_pcc;
                for (m, i) in row.iter().zip(inj) {
                    acc += m * i;
                }
                *slot = acc;
            }
        }
    }
}

/// One fixed-point sweep: injections from `u_prev`, then revised voltages.
pub fn sweep(
    u_pcc: Complex64,
    u_prev: &[Complex64],
    network: &Network,
    i_d0s: &[f64],
    params: &TurbineParams,
) -> Vec<Complex64> {
    let inj: Vec<Complex64> = u_prev
        .iter()
        .zip(i_d0s)
        .map(|(&u, &i_d0)| injection_current(u, i_d0, params))
        .collect();
    let mut out = vec![Complex64::new(0.0, 0.0); u_prev.len()];
    network.apply(u_pcc, &inj, &mut out);
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 50 }
    }
}

/// How the PCC voltage is fixed during a network solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PccBoundary {
    Fixed(Complex64),
    /// Source `e` behind impedance `z`: `U_pcc = e + z * sum(I)`.
    Thevenin { e: Complex64, z: Complex64 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
    /// The divergence guard switched on half-step damping.
    pub damped: bool,
}

/// Reusable buffers for [`solve_network`].
#[derive(Clone, Debug, Default)]
pub struct Workspace {
    injections: Vec<Complex64>,
    next: Vec<Complex64>,
}

/// Fixed-point network solve shared by the terminal-voltage calculation and
/// the simulator. `voltages` and `u_pcc` hold the starting point on entry
/// and the solution on exit; `inject(k, u)` is the current injected by
/// turbine node `k` at voltage `u`.
pub fn solve_network<F>(
    network: &Network,
    boundary: PccBoundary,
    voltages: &mut [Complex64],
    u_pcc: &mut Complex64,
    mut inject: F,
    opts: SolverOptions,
    ws: &mut Workspace,
) -> Result<SolveStats>
where
    F: FnMut(usize, Complex64) -> Complex64,
{
    let n = network.n_turbines;
    ws.injections.resize(n, Complex64::default());
    ws.next.resize(n, Complex64::default());

    let mut damped = false;
    let mut growth = 0;
    let mut last = f64::INFINITY;
    let mut residual = f64::INFINITY;
    for iter in 1..=opts.max_iter {
        let mut total = Complex64::default();
        for (k, slot) in ws.injections.iter_mut().enumerate() {
            *slot = inject(k, voltages[k]);
            total += *slot;
        }
        let pcc = match boundary {
            PccBoundary::Fixed(u) => u,
            PccBoundary::Thevenin { e, z } => e + z * total,
        };
        network.apply(pcc, &ws.injections, &mut ws.next);

        residual = (pcc - *u_pcc).norm();
        for (u, nu) in voltages.iter().zip(&ws.next) {
            residual = residual.max((nu - u).norm());
        }
        if !residual.is_finite() {
            break;
        }
        if residual < opts.tol {
            voltages.copy_from_slice(&ws.next);
            *u_pcc = pcc;
            return Ok(SolveStats { iterations: iter, residual, damped });
        }

        growth = if residual >= last { growth + 1 } else { 0 };
        last = residual;
        if growth >= 3 {
            damped = true;
        }
        if damped {
            for (u, nu) in voltages.iter_mut().zip(&ws.next) {
                *u += 0.5 * (nu - *u);
            }
            *u_pcc += 0.5 * (pcc - *u_pcc);
        } else {
            voltages.copy_from_slice(&ws.next);
            *u_pcc = pcc;
        }
    }
    Err(Error::NonConvergence {
        what: "network solve",
        iterations: opts.max_iter,
        residual,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TerminalSolution {
    pub voltages: Vec<Complex64>,
    pub stats: SolveStats,
}

/// Terminal voltages of every turbine for a given PCC voltage, starting from
/// a flat profile at `u_pcc`.
pub fn solve_terminal_voltages(
    u_pcc: Complex64,
    network: &Network,
    i_d0s: &[f64],
    params: &TurbineParams,
    opts: SolverOptions,
) -> Result<TerminalSolution> {
    if !(opts.tol > 0.0) {
        return Err(Error::Precondition("solver tolerance must be positive".into()));
    }
    if i_d0s.len() != network.n_turbines() {
        return Err(Error::Precondition(format!(
            "{} pre-fault currents for {} turbines",
            i_d0s.len(),
            network.n_turbines()
        )));
    }
    let mut voltages = vec![u_pcc; network.n_turbines()];
    let mut pcc = u_pcc;
    let stats = solve_network(
        network,
        PccBoundary::Fixed(u_pcc),
        &mut voltages,
        &mut pcc,
        |k, u| injection_current(u, i_d0s[k], params),
        opts,
        &mut Workspace::default(),
    )?;
    Ok(TerminalSolution { voltages, stats })
}

/// Steady pre-fault flow with constant-power injections `p[k]` behind a
/// Thevenin source. Returns terminal voltages and the PCC voltage.
pub fn solve_prefault(
    network: &Network,
    p: &[f64],
    e_source: Complex64,
    z_th: Complex64,
    opts: SolverOptions,
) -> Result<(Vec<Complex64>, Complex64, SolveStats)> {
    let mut voltages = vec![e_source; network.n_turbines()];
    let mut pcc = e_source;
    let stats = solve_network(
        network,
        PccBoundary::Thevenin { e: e_source, z: z_th },
        &mut voltages,
        &mut pcc,
        |k, u| (Complex64::new(p[k], 0.0) / u).conj(),
        opts,
        &mut Workspace::default(),
    )?;
    Ok((voltages, pcc, stats))
}

/// CSV with columns `turbine,feeder,node,u_mag,u_angle` (1-based turbine
/// and feeder numbers, angle in radians).
pub fn write_voltages_csv<W: Write>(network: &Network, voltages: &[Complex64], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["turbine", "feeder", "node", "u_mag", "u_angle"])?;
    for (k, u) in voltages.iter().enumerate() {
        let (f, node) = network.location(k);
        w.write_record([
            (k + 1).to_string(),
            (f + 1).to_string(),
            node.to_string(),
            format!("{:.14e}", u.norm()),
            format!("{:.14e}", u.arg()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn farm(feeders: Vec<Feeder>) -> FarmTopology {
        FarmTopology {
            feeders,
            pcc_transformer_z: c(0.0, 0.0),
            grid_thevenin_z: c(0.0, 0.0),
        }
    }

    #[test]
    fn incidence_chain_single_star() {
        let chain = Feeder::chain(2, c(0.01, 0.02), c(0.01, 0.02));
        assert_eq!(build_incidence(&chain).unwrap().0, dmatrix![1u8, 1; 0, 1]);

        let single = Feeder::chain(1, c(0.01, 0.02), c(0.0, 0.0));
        assert_eq!(build_incidence(&single).unwrap().0, dmatrix![1u8]);

        let star = Feeder {
            branches: (1..=3).map(|i| Branch { from: 0, to: i, z: c(0.01, 0.01) }).collect(),
            turbine_nodes: vec![1, 2, 3],
        };
        assert_eq!(
            build_incidence(&star).unwrap().0,
            DMatrix::<u8>::identity(3, 3)
        );
    }

    #[test]
    fn incidence_reversed_branch_and_path_property() {
        // 0 - 1 - 2, 1 - 3 with one branch written child -> parent
        let f = Feeder {
            branches: vec![
                Branch { from: 0, to: 1, z: c(0.1, 0.1) },
                Branch { from: 2, to: 1, z: c(0.1, 0.1) },
                Branch { from: 1, to: 3, z: c(0.1, 0.1) },
            ],
            turbine_nodes: vec![2, 3],
        };
        let m = build_incidence(&f).unwrap().0;
        assert_eq!(m, dmatrix![1u8, 1, 1; 0, 1, 0; 0, 0, 1]);
        for col in 0..m.ncols() {
            assert!(m.column(col).iter().any(|&v| v == 1));
        }
    }

    #[test]
    fn non_radial_rejected() {
        let f = Feeder {
            branches: vec![
                Branch { from: 0, to: 1, z: c(0.1, 0.1) },
                Branch { from: 1, to: 2, z: c(0.1, 0.1) },
                Branch { from: 2, to: 0, z: c(0.1, 0.1) },
            ],
            turbine_nodes: vec![1, 2],
        };
        assert!(matches!(build_incidence(&f), Err(Error::Topology(_))));

        let disconnected = Feeder {
            branches: vec![
                Branch { from: 0, to: 1, z: c(0.1, 0.1) },
                Branch { from: 2, to: 3, z: c(0.1, 0.1) },
                Branch { from: 3, to: 2, z: c(0.1, 0.1) },
            ],
            turbine_nodes: vec![1],
        };
        assert!(matches!(build_incidence(&disconnected), Err(Error::Topology(_))));

        let negative_r = Feeder::chain(1, c(-0.1, 0.1), c(0.0, 0.0));
        assert!(build_incidence(&negative_r).is_err());
    }

    #[test]
    fn injection_examples() {
        let p = TurbineParams::default();
        let i = injection_current(c(1.0, 0.0), 0.7, &p);
        assert_abs_diff_eq!(i.re, 0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(i.im, 0.0, epsilon = 1e-12);

        let i = injection_current(c(0.5, 0.0), 0.5, &p);
        assert_abs_diff_eq!(i.re, 0.9219544457292888, epsilon = 1e-12);
        assert_abs_diff_eq!(i.im, -0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(i.norm(), 1.1, epsilon = 1e-12);

        let base = injection_current(c(0.6, 0.0), 0.8, &p).norm();
        for th in [0.3, -1.2, 2.9] {
            let r = injection_current(Complex64::from_polar(0.6, th), 0.8, &p);
            assert_abs_diff_eq!(r.norm(), base, epsilon = 1e-12);
        }
    }

    #[test]
    fn sweep_trivial_cases() {
        let p = TurbineParams::default();
        let zero = Network::new(&farm(vec![Feeder::chain(3, c(0.0, 0.0), c(0.0, 0.0))])).unwrap();
        let u = sweep(c(0.7, 0.1), &[c(1.0, 0.0); 3], &zero, &[0.5; 3], &p);
        assert!(u.iter().all(|&v| v == c(0.7, 0.1)));

        let lines = Network::new(&farm(vec![Feeder::chain(3, c(0.01, 0.02), c(0.01, 0.02))])).unwrap();
        let u = sweep(c(1.0, 0.0), &[c(1.0, 0.0); 3], &lines, &[0.0; 3], &p);
        assert!(u.iter().all(|&v| v == c(1.0, 0.0)));
    }

    #[test]
    fn sweep_matches_two_node_ladder() {
        let p = TurbineParams::default();
        let z = c(0.01, 0.02);
        let net = Network::new(&farm(vec![Feeder::chain(2, z, z)])).unwrap();
        let u = sweep(c(1.0, 0.0), &[c(1.0, 0.0); 2], &net, &[1.0, 1.0], &p);
        // Kirchhoff by hand: both injections cross branch 1, only the far
        // one crosses branch 2.
        let i = c(1.0, 0.0);
        let u1 = c(1.0, 0.0) + z * (i + i);
        let u2 = u1 + z * i;
        assert_abs_diff_eq!((u[0] - u1).norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!((u[1] - u2).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_impedance_converges_in_one() {
        let p = TurbineParams::default();
        let net = Network::new(&farm(vec![
            Feeder::chain(4, c(0.0, 0.0), c(0.0, 0.0)),
            Feeder::chain(2, c(0.0, 0.0), c(0.0, 0.0)),
        ]))
        .unwrap();
        let sol = solve_terminal_voltages(c(0.3, 0.0), &net, &[0.8; 6], &p, SolverOptions::default()).unwrap();
        assert_eq!(sol.stats.iterations, 1);
        assert!(sol.voltages.iter().all(|&v| v == c(0.3, 0.0)));
    }

    #[test]
    fn path_identity_and_rotation() {
        let p = TurbineParams::default();
        let step = c(0.004, 0.008);
        let f = Feeder::chain(5, c(0.016, 0.032), step);
        let topo = farm(vec![f.clone()]);
        let net = Network::new(&topo).unwrap();
        let i_d0 = [1.0, 0.9, 0.8, 0.7, 0.6];
        let u_pcc = c(0.4, 0.0);
        let opts = SolverOptions { tol: 1e-12, max_iter: 200 };
        let sol = solve_terminal_voltages(u_pcc, &net, &i_d0, &p, opts).unwrap();

        // walk the chain: branch current is the sum of everything downstream
        let inj: Vec<Complex64> = sol
            .voltages
            .iter()
            .zip(&i_d0)
            .map(|(&u, &d)| injection_current(u, d, &p))
            .collect();
        let mut u = u_pcc;
        for (k, br) in f.branches.iter().enumerate() {
            let ib: Complex64 = inj[k..].iter().sum();
            u += br.z * ib;
            assert_abs_diff_eq!((u - sol.voltages[k]).norm(), 0.0, epsilon = 1e-11);
        }

        let rot = Complex64::from_polar(1.0, 0.7);
        let rsol = solve_terminal_voltages(u_pcc * rot, &net, &i_d0, &p, opts).unwrap();
        for (a, b) in sol.voltages.iter().zip(&rsol.voltages) {
            assert_abs_diff_eq!((a * rot - b).norm(), 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn weak_coupling_iterations_non_increasing() {
        let p = TurbineParams::default();
        let mut prev = usize::MAX;
        for s in [1.0, 0.5, 0.1, 0.01, 0.0] {
            let net = Network::new(&farm(vec![Feeder::chain(6, c(0.02, 0.04) * s, c(0.005, 0.01) * s)])).unwrap();
            let sol = solve_terminal_voltages(c(0.35, 0.0), &net, &[0.9; 6], &p, SolverOptions::default()).unwrap();
            assert!(sol.stats.iterations <= prev, "scale {s}: {} > {prev}", sol.stats.iterations);
            prev = sol.stats.iterations;
        }
    }

    #[test]
    fn non_convergence_reports_residual() {
        let p = TurbineParams::default();
        let net = Network::new(&farm(vec![Feeder::chain(6, c(0.02, 0.04), c(0.005, 0.01))])).unwrap();
        let err = solve_terminal_voltages(c(0.35, 0.0), &net, &[0.9; 6], &p, SolverOptions { tol: 1e-14, max_iter: 2 })
            .unwrap_err();
        match err {
            Error::NonConvergence { iterations, residual, .. } => {
                assert_eq!(iterations, 2);
                assert!(residual > 0.0);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn damping_guard_rescues_oscillation() {
        // Purely reactive injections with a loop gain above one: the plain
        // iteration keeps overshooting, the damped one settles.
        let p = TurbineParams::default();
        let net = Network::new(&farm(vec![Feeder::chain(8, c(0.0, 0.066), c(0.0, 0.022))])).unwrap();
        let opts = SolverOptions { tol: 1e-8, max_iter: 400 };
        let sol = solve_terminal_voltages(c(0.3, 0.0), &net, &[0.0; 8], &p, opts).unwrap();
        assert!(sol.stats.damped);
        let again = sweep(c(0.3, 0.0), &sol.voltages, &net, &[0.0; 8], &p);
        for (a, b) in sol.voltages.iter().zip(&again) {
            assert!((a - b).norm() < 1e-7);
        }
    }

    #[test]
    fn shared_paths() {
        let star = Feeder {
            branches: (1..=2).map(|i| Branch { from: 0, to: i, z: c(0.01, 0.01) }).collect(),
            turbine_nodes: vec![1, 2],
        };
        let net = Network::new(&farm(vec![star, Feeder::chain(2, c(0.02, 0.02), c(0.01, 0.01))])).unwrap();
        assert!(!net.path_is_shared(0));
        assert!(!net.path_is_shared(1));
        assert!(net.path_is_shared(2));
        assert!(net.path_is_shared(3));
        assert_eq!(net.path_impedance(3), c(0.03, 0.03));
    }

    #[test]
    fn voltage_csv() {
        let net = Network::new(&farm(vec![Feeder::chain(2, c(0.01, 0.02), c(0.01, 0.02))])).unwrap();
        let mut buf = Vec::new();
        write_voltages_csv(&net, &[c(1.0, 0.0), c(0.0, 1.0)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "turbine,feeder,node,u_mag,u_angle");
        assert!(lines[2].starts_with("2,1,2,1.0"));
    }
}
