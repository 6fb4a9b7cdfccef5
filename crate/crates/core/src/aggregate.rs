//! Per-category single-machine equivalents of a farm.
//!
//! Turbines are grouped by their response category at the instant before
//! clearance. Each non-empty group becomes one unit of `n_c` machines with
//! an equivalent wind speed that preserves the group's pre-fault power, a
//! recovery-rate schedule (category I only) that reproduces the staggered
//! end of the members' ramps, and a collector line chosen so that the
//! unit's reactive injection reproduces the PCC voltage at clearance.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::classify::{classify_wtg, Category, ClusterAssignment};
use crate::control::{id_max, iq_ref, power_curve, power_curve_inverse, RampSchedule, TurbineParams};
use crate::error::{Error, Result};
use crate::feeder::{
    self, injection_current, solve_prefault, solve_terminal_voltages, Branch, FarmTopology, Feeder, Network,
    SolverOptions,
};
use crate::simulate::{run, FaultScenario, Plant, SimOptions, Unit};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquivalentUnit {
    /// `None` for the farm-wide wind-speed-only baseline.
    pub category: Option<Category>,
    pub n_machines: u32,
    pub v_eq: f64,
    /// Per-machine recovery-rate schedule; plain `k_ramp` when absent.
    pub ramp_schedule: Option<RampSchedule>,
    pub line_r: f64,
    pub line_x: f64,
    pub q_equ: f64,
    pub alpha_equ: f64,
    pub p_equ: f64,
    /// Zero-based indices of the member turbines.
    pub members: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquivalentFarm {
    pub units: Vec<EquivalentUnit>,
    pub pcc_voltage_used: f64,
    pub params: TurbineParams,
    #[serde(with = "feeder::impedance")]
    pub pcc_transformer_z: Complex64,
    #[serde(with = "feeder::impedance")]
    pub grid_thevenin_z: Complex64,
}

impl EquivalentFarm {
    pub fn n_machines(&self) -> u32 {
        self.units.iter().map(|u| u.n_machines).sum()
    }

    pub fn unit(&self, category: Category) -> Option<&EquivalentUnit> {
        self.units.iter().find(|u| u.category == Some(category))
    }

    /// Each unit on its own radial line behind the farm transformer.
    pub fn plant(&self) -> Result<Plant> {
        let topology = FarmTopology {
            feeders: self
                .units
                .iter()
                .map(|u| Feeder {
                    branches: vec![Branch {
                        from: 0,
                        to: 1,
                        z: Complex64::new(u.line_r, u.line_x),
                    }],
                    turbine_nodes: vec![1],
                })
                .collect(),
            pcc_transformer_z: self.pcc_transformer_z,
            grid_thevenin_z: self.grid_thevenin_z,
        };
        let units = self
            .units
            .iter()
            .map(|u| Unit {
                wind_speed: u.v_eq,
                n_machines: u.n_machines,
                ramp: u.ramp_schedule.clone(),
            })
            .collect();
        Plant::new(topology, self.params.clone(), units)
    }
}

/// Speed at which one machine produces the mean power of the group.
///
/// A group entirely below cut-in keeps its mean speed (no output either way).
pub fn equivalent_wind_speed(speeds: &[f64], params: &TurbineParams) -> Result<f64> {
    if speeds.is_empty() {
        return Err(Error::Precondition("empty cluster".into()));
    }
    let n = speeds.len() as f64;
    let mut mean_p = 0.0;
    for &v in speeds {
        mean_p += power_curve(v, params)?;
    }
    mean_p /= n;
    if mean_p <= 0.0 {
        return Ok(speeds.iter().sum::<f64>() / n);
    }
    if mean_p >= params.rated_power {
        return Ok(params.v_rated);
    }
    Ok(power_curve_inverse(mean_p, params)?.speed)
}

/// Ramp duration of every category-I member, sorted ascending.
///
/// `members` holds `(v_w, alpha, e)` per turbine.
pub fn ramp_durations(members: &[(f64, f64, f64)], params: &TurbineParams) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(members.len());
    for &(v, alpha, e) in members {
        let t = (power_curve(v, params)? / e - id_max(alpha, params)) / params.k_ramp;
        if t < -1e-12 {
            return Err(Error::ClassificationInconsistency(format!(
                "negative ramp duration {t} s for v_w = {v}, alpha = {alpha}"
            )));
        }
        out.push(t.max(0.0));
    }
    out.sort_by(f64::total_cmp);
    Ok(out)
}

/// Per-machine rate schedule for `N` staggered ramps of durations `sorted`.
///
/// While `j` of the machines have finished, the remaining `N - j` still
/// ramp at `k`, so the aggregate per-machine rate is `(N - j) k / N`. After
/// the last one the rate is `k / N`; the unit has reached its target by then.
pub fn klim_schedule(sorted: &[f64], params: &TurbineParams) -> Result<RampSchedule> {
    if sorted.is_empty() {
        return Err(Error::Precondition("empty duration list".into()));
    }
    if sorted.windows(2).any(|w| w[1] < w[0]) || sorted[0] < 0.0 {
        return Err(Error::Precondition("durations must be sorted and non-negative".into()));
    }
    let n = sorted.len();
    let k = params.k_ramp;
    let mut segments = Vec::with_capacity(n + 1);
    segments.push((0.0, k));
    for (j, &t) in sorted.iter().enumerate().take(n - 1) {
        segments.push((t, (n - j - 1) as f64 * k / n as f64));
    }
    segments.push((sorted[n - 1], k / n as f64));
    Ok(RampSchedule { segments })
}

/// Reactive power of a group at clearance from `(alpha, i_q)` pairs.
pub fn cluster_reactive(members: &[(f64, f64)]) -> f64 {
    members.iter().map(|&(alpha, iq)| alpha * iq).sum()
}

/// Terminal voltage at which `n_c` machines inject `q_equ` under the
/// reactive current law; of the two roots, the one nearer `alpha_pcc`.
pub fn equivalent_terminal_voltage(q_equ: f64, n_c: u32, alpha_pcc: f64, params: &TurbineParams) -> Result<f64> {
    if !(q_equ >= 0.0) || n_c == 0 {
        return Err(Error::Precondition(format!("q_equ = {q_equ}, n_c = {n_c}")));
    }
    let g = params.lvrt_gain * params.i_n * n_c as f64;
    let u = params.lvrt_upper;
    let mut disc = u * u - 4.0 * q_equ / g;
    if disc < 0.0 {
        if disc < -1e-12 {
            return Err(Error::InfeasibleReactive { q_equ, n_machines: n_c });
        }
        disc = 0.0;
    }
    let s = disc.sqrt();
    let (r1, r2) = ((u + s) / 2.0, (u - s) / 2.0);
    if (r1 - alpha_pcc).abs() <= (r2 - alpha_pcc).abs() + 1e-12 {
        Ok(r1)
    } else {
        Ok(r2)
    }
}

/// Active power of a unit at the instant before clearance.
pub fn equivalent_power_at_clearance(
    category: Category,
    n_c: u32,
    alpha_equ: f64,
    v_eq: f64,
    params: &TurbineParams,
) -> Result<f64> {
    let n = n_c as f64;
    match category {
        Category::I | Category::II => Ok(n * alpha_equ * id_max(alpha_equ, params)),
        Category::III => Ok(n * power_curve(v_eq, params)?),
    }
}

/// Line `(r, x)` with `r = k0 x` across which the unit's injection
/// `p_equ + j q_equ` at `alpha_equ` arrives at the PCC with magnitude
/// `alpha_pcc`. The smaller root is the statically stable one.
pub fn equivalent_line(p_equ: f64, q_equ: f64, alpha_equ: f64, alpha_pcc: f64, k0: f64) -> Result<(f64, f64)> {
    let infeasible = || Error::NoFeasibleLine {
        p_equ,
        q_equ,
        alpha_equ,
        alpha_pcc,
        k0,
    };
    if alpha_equ < alpha_pcc {
        return Err(Error::Precondition(format!(
            "unit voltage {alpha_equ} below PCC voltage {alpha_pcc}"
        )));
    }
    let s2 = p_equ * p_equ + q_equ * q_equ;
    if alpha_equ == alpha_pcc {
        return Ok((0.0, 0.0));
    }
    if s2 == 0.0 {
        return Err(infeasible());
    }
    let a = alpha_equ * (k0 * p_equ + q_equ);
    let b = s2 * (1.0 + k0 * k0);
    let disc = a * a - b * (alpha_equ * alpha_equ - alpha_pcc * alpha_pcc);
    if disc < 0.0 {
        return Err(infeasible());
    }
    let x = alpha_equ * (a - disc.sqrt()) / b;
    let r = k0 * x;

    let u = Complex64::new(alpha_equ, 0.0);
    let i = (Complex64::new(p_equ, q_equ) / u).conj();
    let u_pcc = u - Complex64::new(r, x) * i;
    if (u_pcc.norm() - alpha_pcc).abs() > 1e-8 || x < 0.0 {
        return Err(infeasible());
    }
    Ok((r, x))
}

/// The per-turbine farm with its solved pre-fault operating point.
#[derive(Clone, Debug)]
pub struct DetailedFarm {
    pub topology: FarmTopology,
    pub network: Network,
    pub params: TurbineParams,
    pub speeds: Vec<f64>,
    /// Pre-fault terminal voltage magnitude of every turbine.
    pub e0: Vec<f64>,
    pub i_d0: Vec<f64>,
}

impl DetailedFarm {
    pub fn new(
        topology: FarmTopology,
        params: TurbineParams,
        speeds: Vec<f64>,
        scenario: &FaultScenario,
        opts: SolverOptions,
    ) -> Result<Self> {
        params.validate()?;
        let network = Network::new(&topology)?;
        if speeds.len() != network.n_turbines() {
            return Err(Error::Precondition(format!(
                "{} wind speeds for {} turbines",
                speeds.len(),
                network.n_turbines()
            )));
        }
        let p0: Vec<f64> = speeds.iter().map(|&v| power_curve(v, &params)).collect::<Result<_>>()?;
        let z_g = scenario.grid_thevenin_z.unwrap_or(topology.grid_thevenin_z);
        let (u, _, _) = solve_prefault(
            &network,
            &p0,
            Complex64::new(scenario.e_source_prefault, 0.0),
            topology.pcc_transformer_z + z_g,
            opts,
        )?;
        let e0: Vec<f64> = u.iter().map(|u| u.norm()).collect();
        let i_d0 = p0
            .iter()
            .zip(&e0)
            .map(|(&p, &e)| crate::control::CurrentState::steady(p, e, &params).i_d0)
            .collect();
        Ok(Self {
            topology,
            network,
            params,
            speeds,
            e0,
            i_d0,
        })
    }

    pub fn n_turbines(&self) -> usize {
        self.speeds.len()
    }

    pub fn plant(&self) -> Result<Plant> {
        Plant::detailed(&self.topology, &self.params, &self.speeds)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EquivalentOptions {
    /// Classify with `e = 1` instead of each turbine's pre-fault voltage.
    pub unity_e: bool,
    pub terminal: SolverOptions,
    pub pcc_tol: f64,
    pub pcc_max_iter: usize,
    pub sim: SimOptions,
}

impl Default for EquivalentOptions {
    fn default() -> Self {
        Self {
            unity_e: false,
            terminal: SolverOptions::default(),
            pcc_tol: 1e-3,
            pcc_max_iter: 10,
            sim: SimOptions::default(),
        }
    }
}

/// Category of every turbine given its terminal voltage at clearance.
pub fn classify_farm(farm: &DetailedFarm, voltages: &[Complex64], unity_e: bool) -> Result<Vec<ClusterAssignment>> {
    farm.speeds
        .iter()
        .zip(voltages)
        .zip(&farm.e0)
        .map(|((&v, u), &e0)| classify_wtg(v, u.norm(), if unity_e { 1.0 } else { e0 }, &farm.params))
        .collect()
}

/// Injection-weighted mean R/X of the members' root paths.
fn path_ratio(farm: &DetailedFarm, members: &[usize], voltages: &[Complex64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for &i in members {
        let z = farm.network.path_impedance(i);
        if z.im <= 0.0 {
            continue;
        }
        let w = injection_current(voltages[i], farm.i_d0[i], &farm.params).norm();
        num += w * z.re / z.im;
        den += w;
    }
    if den > 0.0 {
        return num / den;
    }
    let ratios: Vec<f64> = members
        .iter()
        .map(|&i| farm.network.path_impedance(i))
        .filter(|z| z.im > 0.0)
        .map(|z| z.re / z.im)
        .collect();
    if ratios.is_empty() {
        0.0
    } else {
        ratios.iter().sum::<f64>() / ratios.len() as f64
    }
}

/// Group the turbines by category and build one unit per non-empty group.
pub fn build_equivalent_farm(
    farm: &DetailedFarm,
    alpha_pcc: f64,
    voltages: &[Complex64],
    unity_e: bool,
) -> Result<EquivalentFarm> {
    let params = &farm.params;
    let assignments = classify_farm(farm, voltages, unity_e)?;
    let mut units = Vec::new();
    for cat in Category::ALL {
        let members: Vec<usize> = (0..farm.n_turbines())
            .filter(|&i| assignments[i].category == cat)
            .collect();
        if members.is_empty() {
            continue;
        }
        let n_c = members.len() as u32;
        let speeds: Vec<f64> = members.iter().map(|&i| farm.speeds[i]).collect();
        let alphas: Vec<f64> = members.iter().map(|&i| voltages[i].norm()).collect();

        let single = members.len() == 1 && !farm.network.path_is_shared(members[0]);
        let v_eq = if single { speeds[0] } else { equivalent_wind_speed(&speeds, params)? };

        let pairs: Vec<(f64, f64)> = alphas.iter().map(|&a| (a, iq_ref(a, params))).collect();
        let q_equ = cluster_reactive(&pairs);
        let alpha_equ = if q_equ > 0.0 {
            equivalent_terminal_voltage(q_equ, n_c, alpha_pcc, params)?
        } else {
            alphas.iter().sum::<f64>() / alphas.len() as f64
        };
        let p_equ = equivalent_power_at_clearance(cat, n_c, alpha_equ, v_eq, params)?;

        let (line_r, line_x) = if single {
            let z = farm.network.path_impedance(members[0]);
            (z.re, z.im)
        } else {
            let k0 = path_ratio(farm, &members, voltages);
            equivalent_line(p_equ, q_equ, alpha_equ, alpha_pcc, k0)?
        };

        let ramp_schedule = if cat == Category::I {
            let triples: Vec<(f64, f64, f64)> = members
                .iter()
                .map(|&i| {
                    let e = if unity_e { 1.0 } else { farm.e0[i] };
                    (farm.speeds[i], voltages[i].norm(), e)
                })
                .collect();
            Some(klim_schedule(&ramp_durations(&triples, params)?, params)?)
        } else {
            None
        };

        units.push(EquivalentUnit {
            category: Some(cat),
            n_machines: n_c,
            v_eq,
            ramp_schedule,
            line_r,
            line_x,
            q_equ,
            alpha_equ,
            p_equ,
            members,
        });
    }
    Ok(EquivalentFarm {
        units,
        pcc_voltage_used: alpha_pcc,
        params: params.clone(),
        pcc_transformer_z: farm.topology.pcc_transformer_z,
        grid_thevenin_z: farm.topology.grid_thevenin_z,
    })
}

/// Wind-speed-only baseline: the whole farm as one unit at the farm's
/// equivalent speed, plain `k_ramp`, behind the mean root-path impedance
/// shared by all machines in parallel.
pub fn traditional_equivalent(farm: &DetailedFarm) -> Result<EquivalentFarm> {
    let params = &farm.params;
    let n = farm.n_turbines();
    if n == 0 {
        return Err(Error::Precondition("empty farm".into()));
    }
    let v_eq = equivalent_wind_speed(&farm.speeds, params)?;
    let mean_z = (0..n).map(|i| farm.network.path_impedance(i)).sum::<Complex64>() / n as f64;
    let line = mean_z / n as f64;
    Ok(EquivalentFarm {
        units: vec![EquivalentUnit {
            category: None,
            n_machines: n as u32,
            v_eq,
            ramp_schedule: None,
            line_r: line.re,
            line_x: line.im,
            q_equ: 0.0,
            alpha_equ: 1.0,
            p_equ: n as f64 * power_curve(v_eq, params)?,
            members: (0..n).collect(),
        }],
        pcc_voltage_used: 1.0,
        params: params.clone(),
        pcc_transformer_z: farm.topology.pcc_transformer_z,
        grid_thevenin_z: farm.topology.grid_thevenin_z,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PccIteration {
    pub farm: EquivalentFarm,
    /// PCC voltage guesses, starting from 1.0; one entry per simulation
    /// after the first.
    pub trace: Vec<f64>,
    /// Number of equivalent-farm simulations run.
    pub simulations: usize,
}

/// Find the PCC voltage at clearance by alternately equivalencing the farm
/// and simulating the equivalent.
pub fn pcc_iteration(farm: &DetailedFarm, scenario: &FaultScenario, opts: &EquivalentOptions) -> Result<PccIteration> {
    if !(opts.pcc_tol > 0.0) {
        return Err(Error::Precondition("pcc tolerance must be positive".into()));
    }
    let mut scenario = scenario.clone();
    if scenario.grid_thevenin_z.is_none() {
        scenario.grid_thevenin_z = Some(farm.topology.grid_thevenin_z);
    }
    let clear = scenario.pre_clearance_step();
    let mut alpha = 1.0;
    let mut trace = vec![alpha];
    for sim in 1..=opts.pcc_max_iter {
        let eq = equivalent_at(farm, alpha, opts)?;
        let ts = run(&eq.plant()?, &scenario, &opts.sim)?;
        let next = ts.u_pcc[clear];
        trace.push(next);
        if (next - alpha).abs() < opts.pcc_tol {
            let farm = equivalent_at(farm, next, opts)?;
            return Ok(PccIteration {
                farm,
                trace,
                simulations: sim,
            });
        }
        alpha = next;
    }
    Err(Error::PccNonConvergence { trace })
}

/// Solve the terminal voltages at `alpha_pcc` and build the equivalent.
pub fn equivalent_at(farm: &DetailedFarm, alpha_pcc: f64, opts: &EquivalentOptions) -> Result<EquivalentFarm> {
    let sol = solve_terminal_voltages(
        Complex64::new(alpha_pcc, 0.0),
        &farm.network,
        &farm.i_d0,
        &farm.params,
        opts.terminal,
    )?;
    build_equivalent_farm(farm, alpha_pcc, &sol.voltages, opts.unity_e)
}
