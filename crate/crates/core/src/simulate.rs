//! Quasi-static phasor simulation of a farm behind a Thevenin grid.
//!
//! Each time step first advances every controller with the terminal voltage
//! of the previous step, then solves the network algebraically with the
//! converter currents held fixed, and finally records the PCC quantities.
//! The same loop drives the per-turbine farm and the aggregate models; an
//! aggregate unit is one controller whose current is multiplied by its
//! machine count.

use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::control::{power_curve, step_current_with_rate, CurrentState, RampSchedule, TurbineParams};
use crate::error::{Error, Result};
use crate::feeder::{self, solve_network, solve_prefault, FarmTopology, Network, PccBoundary, SolverOptions, Workspace};

/// Grid-side disturbance and time grid of one simulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultScenario {
    pub e_source_prefault: f64,
    /// Source magnitude while the fault is on.
    pub e_source_fault: f64,
    pub t_fault: f64,
    pub t_clear: f64,
    pub t_end: f64,
    pub dt: f64,
    /// Replaces the topology's grid impedance when present.
    #[serde(default, with = "feeder::impedance::option", skip_serializing_if = "Option::is_none")]
    pub grid_thevenin_z: Option<Complex64>,
    /// Optional shunt fault impedance at the grid side of the farm
    /// transformer, applied together with the source dip.
    #[serde(default, with = "feeder::impedance::option", skip_serializing_if = "Option::is_none")]
    pub shunt_fault_z: Option<Complex64>,
}

impl FaultScenario {
    pub fn validate(&self) -> Result<()> {
        let ok = self.t_fault >= 0.0
            && self.t_fault < self.t_clear
            && self.t_clear <= self.t_end
            && self.dt > 0.0
            && self.e_source_fault <= self.e_source_prefault
            && self.e_source_fault >= 0.0
            && self.shunt_fault_z.is_none_or(|z| z.norm() > 0.0 && z.re >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InputDomain(format!("inconsistent fault scenario {self:?}")))
        }
    }

    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt + 1e-9).floor() as usize + 1
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }

    /// Whether the fault is applied at time `t`.
    pub fn fault_on(&self, t: f64) -> bool {
        let eps = 1e-9 * self.dt;
        t >= self.t_fault - eps && t < self.t_clear - eps
    }

    /// Index of the last sample strictly before clearance.
    pub fn pre_clearance_step(&self) -> usize {
        let k = ((self.t_clear - 1e-9 * self.dt) / self.dt).ceil() as usize;
        k.saturating_sub(1)
    }

    /// Thevenin source and impedance seen from the farm's collector bus.
    pub fn thevenin(&self, t: f64, topology: &FarmTopology) -> (Complex64, Complex64) {
        let z_g = self.grid_thevenin_z.unwrap_or(topology.grid_thevenin_z);
        let z_t = topology.pcc_transformer_z;
        if !self.fault_on(t) {
            return (Complex64::new(self.e_source_prefault, 0.0), z_t + z_g);
        }
        let e = Complex64::new(self.e_source_fault, 0.0);
        match self.shunt_fault_z {
            None => (e, z_t + z_g),
            Some(z_f) => {
                let sum = z_g + z_f;
                (e * z_f / sum, z_t + z_g * z_f / sum)
            }
        }
    }
}

/// One controller in a simulated plant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    pub wind_speed: f64,
    /// Machines represented; the injection is scaled by this count.
    pub n_machines: u32,
    /// Recovery-rate schedule; the turbine's own `k_ramp` when absent.
    pub ramp: Option<RampSchedule>,
}

/// Network plus controllers, ready to simulate.
#[derive(Clone, Debug)]
pub struct Plant {
    pub topology: FarmTopology,
    pub network: Network,
    pub params: TurbineParams,
    pub units: Vec<Unit>,
}

impl Plant {
    pub fn new(topology: FarmTopology, params: TurbineParams, units: Vec<Unit>) -> Result<Self> {
        params.validate()?;
        let network = Network::new(&topology)?;
        if units.len() != network.n_turbines() {
            return Err(Error::Precondition(format!(
                "{} units for {} turbine nodes",
                units.len(),
                network.n_turbines()
            )));
        }
        for u in &units {
            if u.n_machines == 0 {
                return Err(Error::Precondition("unit with zero machines".into()));
            }
            if let Some(s) = &u.ramp {
                if s.segments.is_empty() || s.segments.iter().any(|&(_, r)| !(r > 0.0)) {
                    return Err(Error::Precondition("ramp schedule needs positive rates".into()));
                }
            }
        }
        Ok(Self {
            topology,
            network,
            params,
            units,
        })
    }

    /// Per-turbine plant: one single-machine unit per turbine node.
    pub fn detailed(topology: &FarmTopology, params: &TurbineParams, speeds: &[f64]) -> Result<Self> {
        let units = speeds
            .iter()
            .map(|&v| Unit {
                wind_speed: v,
                n_machines: 1,
                ramp: None,
            })
            .collect();
        Self::new(topology.clone(), params.clone(), units)
    }

    pub fn n_machines(&self) -> u32 {
        self.units.iter().map(|u| u.n_machines).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimOptions {
    pub network: SolverOptions,
    /// Keep per-unit voltages and currents for every step.
    pub record_units: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            network: SolverOptions { tol: 1e-10, max_iter: 200 },
            record_units: false,
        }
    }
}

/// Per-unit traces, stored step-major (`[step * n_units + unit]`).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UnitTraces {
    pub n_units: usize,
    pub voltages: Vec<Complex64>,
    /// Total injected current of each unit (all its machines).
    pub currents: Vec<Complex64>,
}

impl UnitTraces {
    pub fn voltage(&self, step: usize, unit: usize) -> Complex64 {
        self.voltages[step * self.n_units + unit]
    }

    pub fn current(&self, step: usize, unit: usize) -> Complex64 {
        self.currents[step * self.n_units + unit]
    }

    /// Active power injected by a unit at a step.
    pub fn power(&self, step: usize, unit: usize) -> f64 {
        (self.voltage(step, unit) * self.current(step, unit).conj()).re
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TimeSeries {
    pub t: Vec<f64>,
    pub p_pcc: Vec<f64>,
    pub q_pcc: Vec<f64>,
    pub u_pcc: Vec<f64>,
    pub units: Option<UnitTraces>,
    /// Pre-fault controller state of every unit.
    pub initial: Vec<CurrentState>,
    /// Wall-clock seconds spent in the run, when known.
    pub wall_clock: Option<f64>,
}

impl TimeSeries {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// CSV with header `t,p_pcc,q_pcc,u_pcc`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "p_pcc", "q_pcc", "u_pcc"])?;
        for k in 0..self.len() {
            w.write_record([
                format!("{:.14e}", self.t[k]),
                format!("{:.14e}", self.p_pcc[k]),
                format!("{:.14e}", self.q_pcc[k]),
                format!("{:.14e}", self.u_pcc[k]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != ["t", "p_pcc", "q_pcc", "u_pcc"] {
            return Err(Error::InputDomain(format!("unexpected time-series header {header:?}")));
        }
        let mut ts = TimeSeries::default();
        for rec in r.records() {
            let rec = rec?;
            let field = |i: usize| -> Result<f64> {
                rec[i]
                    .trim()
                    .parse()
                    .map_err(|_| Error::InputDomain(format!("bad number {:?}", &rec[i])))
            };
            ts.t.push(field(0)?);
            ts.p_pcc.push(field(1)?);
            ts.q_pcc.push(field(2)?);
            ts.u_pcc.push(field(3)?);
        }
        Ok(ts)
    }

    /// Writes the CSV and, when the wall clock is known, a `.meta.json`
    /// sidecar next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)?;
        if let Some(w) = self.wall_clock {
            let meta = serde_json::json!({ "wall_clock_s": w, "steps": self.len() });
            std::fs::write(meta_path(path), serde_json::to_string_pretty(&meta)?)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut ts = Self::read_csv(std::fs::File::open(path)?)?;
        if let Ok(text) = std::fs::read_to_string(meta_path(path)) {
            let meta: serde_json::Value = serde_json::from_str(&text)?;
            ts.wall_clock = meta.get("wall_clock_s").and_then(|v| v.as_f64());
        }
        Ok(ts)
    }
}

fn meta_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    s.into()
}

/// Simulate `plant` through `scenario`.
pub fn run(plant: &Plant, scenario: &FaultScenario, opts: &SimOptions) -> Result<TimeSeries> {
    scenario.validate()?;
    let started = Instant::now();
    let params = &plant.params;
    let network = &plant.network;
    let n = plant.units.len();

    let p_unit: Vec<f64> = plant
        .units
        .iter()
        .map(|u| power_curve(u.wind_speed, params))
        .collect::<Result<_>>()?;
    let scale: Vec<f64> = plant.units.iter().map(|u| u.n_machines as f64).collect();
    let p_total: Vec<f64> = p_unit.iter().zip(&scale).map(|(p, s)| p * s).collect();

    let (e0, z0) = scenario.thevenin(0.0, &plant.topology);
    let (mut voltages, mut u_pcc, _) = if scenario.fault_on(0.0) {
        // a fault from t = 0 still starts from the healthy operating point
        let healthy = FaultScenario {
            t_fault: f64::INFINITY,
            ..scenario.clone()
        };
        let (e, z) = healthy.thevenin(0.0, &plant.topology);
        solve_prefault(network, &p_total, e, z, opts.network)?
    } else {
        solve_prefault(network, &p_total, e0, z0, opts.network)?
    };
    let mut states: Vec<CurrentState> = voltages
        .iter()
        .zip(&p_unit)
        .map(|(u, &p)| CurrentState::steady(p, u.norm(), params))
        .collect();
    let initial = states.clone();

    let steps = scenario.n_steps();
    let mut ts = TimeSeries {
        t: Vec::with_capacity(steps),
        p_pcc: Vec::with_capacity(steps),
        q_pcc: Vec::with_capacity(steps),
        u_pcc: Vec::with_capacity(steps),
        units: opts.record_units.then(|| UnitTraces {
            n_units: n,
            voltages: Vec::with_capacity(steps * n),
            currents: Vec::with_capacity(steps * n),
        }),
        initial,
        wall_clock: None,
    };

    let mut was_lvrt = vec![false; n];
    let mut recovery_start: Vec<Option<f64>> = vec![None; n];
    let mut currents = vec![Complex64::default(); n];
    let mut ws = Workspace::default();

    for step in 0..steps {
        let t = scenario.time(step);

        for k in 0..n {
            let mag = voltages[k].norm();
            let rate = match &plant.units[k].ramp {
                None => params.k_ramp,
                Some(schedule) => {
                    if params.in_lvrt(mag) {
                        was_lvrt[k] = true;
                        recovery_start[k] = None;
                    } else if was_lvrt[k] && recovery_start[k].is_none() {
                        recovery_start[k] = Some(t);
                    }
                    schedule.rate_at(recovery_start[k].map_or(0.0, |t0| t - t0))
                }
            };
            states[k] = step_current_with_rate(&states[k], mag, scenario.dt, rate, params);
        }

        let (e, z) = scenario.thevenin(t, &plant.topology);
        let states_ref = &states;
        let scale_ref = &scale;
        solve_network(
            network,
            PccBoundary::Thevenin { e, z },
            &mut voltages,
            &mut u_pcc,
            |k, u| {
                let s = &states_ref[k];
                let mag = u.norm();
                let dir = if mag > 1e-12 { u / mag } else { Complex64::new(1.0, 0.0) };
                Complex64::new(s.i_d, -s.i_q) * dir * scale_ref[k]
            },
            opts.network,
            &mut ws,
        )
        .map_err(|source| Error::SimulationAbort {
            step,
            source: Box::new(source),
        })?;

        let mut total = Complex64::default();
        for k in 0..n {
            let u = voltages[k];
            let mag = u.norm();
            let dir = if mag > 1e-12 { u / mag } else { Complex64::new(1.0, 0.0) };
            currents[k] = Complex64::new(states[k].i_d, -states[k].i_q) * dir * scale[k];
            total += currents[k];
        }
        let s_pcc = u_pcc * total.conj();
        ts.t.push(t);
        ts.p_pcc.push(s_pcc.re);
        ts.q_pcc.push(s_pcc.im);
        ts.u_pcc.push(u_pcc.norm());
        if let Some(tr) = ts.units.as_mut() {
            tr.voltages.extend_from_slice(&voltages);
            tr.currents.extend_from_slice(&currents);
        }
    }
    ts.wall_clock = Some(started.elapsed().as_secs_f64());
    Ok(ts)
}

/// Error metrics of `candidate` against `reference`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareMetrics {
    /// Mean absolute percentage error of the PCC active power (%).
    pub mape_p: f64,
    pub max_abs_p: f64,
    pub max_abs_q: f64,
    /// Reference wall clock divided by candidate wall clock.
    pub wall_clock_ratio: Option<f64>,
    pub samples: usize,
}

/// Denominator floor of the percentage error (pu).
pub const MAPE_FLOOR: f64 = 0.01;

pub fn compare(reference: &TimeSeries, candidate: &TimeSeries, window: (f64, f64)) -> Result<CompareMetrics> {
    if reference.len() != candidate.len() {
        return Err(Error::InputDomain(format!(
            "time grids differ in length ({} vs {})",
            reference.len(),
            candidate.len()
        )));
    }
    for (a, b) in reference.t.iter().zip(&candidate.t) {
        if (a - b).abs() > 1e-9 * (1.0 + a.abs()) {
            return Err(Error::InputDomain(format!("time grids differ at t = {a}")));
        }
    }
    let (lo, hi) = window;
    let mut sum = 0.0;
    let mut samples = 0;
    let mut max_abs_p: f64 = 0.0;
    let mut max_abs_q: f64 = 0.0;
    for k in 0..reference.len() {
        let t = reference.t[k];
        if t < lo - 1e-12 || t > hi + 1e-12 {
            continue;
        }
        let dp = (candidate.p_pcc[k] - reference.p_pcc[k]).abs();
        let dq = (candidate.q_pcc[k] - reference.q_pcc[k]).abs();
        sum += dp / reference.p_pcc[k].abs().max(MAPE_FLOOR);
        max_abs_p = max_abs_p.max(dp);
        max_abs_q = max_abs_q.max(dq);
        samples += 1;
    }
    if samples == 0 {
        return Err(Error::InputDomain(format!("no samples in window [{lo}, {hi}]")));
    }
    let wall_clock_ratio = match (reference.wall_clock, candidate.wall_clock) {
        (Some(a), Some(b)) if b > 0.0 => Some(a / b),
        _ => None,
    };
    Ok(CompareMetrics {
        mape_p: 100.0 * sum / samples as f64,
        max_abs_p,
        max_abs_q,
        wall_clock_ratio,
        samples,
    })
}
