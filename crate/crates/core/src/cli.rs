//! Command-line front end.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::aggregate::{pcc_iteration, traditional_equivalent};
use crate::classify::{boundary_table, write_boundary_csv, Category};
use crate::error::{Error, Result};
use crate::scenario::ScenarioFile;
use crate::simulate::{compare, run, TimeSeries};

#[derive(Debug, Parser)]
#[command(name = "wfeq", version, about = "Fault-response equivalents of full-converter wind farms")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Classify every turbine at the converged PCC voltage.
    Classify(ScenarioArgs),
    /// Critical wind speeds over a grid of dip depths.
    Boundary {
        scenario: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        alpha_min: f64,
        #[arg(long, default_value_t = 0.9)]
        alpha_max: f64,
        #[arg(long, default_value_t = 71)]
        points: usize,
        /// Pre-fault voltage used for the critical powers.
        #[arg(long, default_value_t = 1.0)]
        e: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate one or more scenarios (concurrently) with one model.
    Simulate {
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Model::Detailed)]
        model: Model,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Compare a candidate time series against a reference.
    Compare {
        reference: PathBuf,
        candidate: PathBuf,
        /// Window as `start,end` in seconds; the whole series by default.
        #[arg(long, value_parser = parse_window)]
        window: Option<(f64, f64)>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Write the equivalent farm as JSON.
    Equivalize(ScenarioArgs),
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    pub scenario: PathBuf,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Model {
    Detailed,
    Equivalent,
    Traditional,
}

impl Model {
    fn name(self) -> &'static str {
        match self {
            Model::Detailed => "detailed",
            Model::Equivalent => "equivalent",
            Model::Traditional => "traditional",
        }
    }
}

fn parse_window(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected start,end")?;
    let a: f64 = a.trim().parse().map_err(|_| format!("bad start {a:?}"))?;
    let b: f64 = b.trim().parse().map_err(|_| format!("bad end {b:?}"))?;
    if a > b {
        return Err("window start after end".into());
    }
    Ok((a, b))
}

fn out_dir(explicit: &Option<PathBuf>, scenario: &ScenarioFile) -> Result<PathBuf> {
    let dir = explicit
        .clone()
        .or_else(|| scenario.outputs.dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".into())
}

/// Run the tool; returns the process exit code.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if code == 0 { write!(stdout, "{e}") } else { write!(stderr, "{e}") };
            return code;
        }
    };
    match dispatch(cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command, stdout: &mut dyn Write) -> Result<()> {
    match command {
        Command::Classify(args) => cmd_classify(&args, stdout),
        Command::Boundary {
            scenario,
            alpha_min,
            alpha_max,
            points,
            e,
            out,
        } => {
            let s = ScenarioFile::load(&scenario)?;
            if points < 1 || !(alpha_min <= alpha_max) {
                return Err(Error::InputDomain("empty alpha grid".into()));
            }
            let grid: Vec<f64> = (0..points)
                .map(|i| {
                    if points == 1 {
                        alpha_min
                    } else {
                        alpha_min + (alpha_max - alpha_min) * i as f64 / (points - 1) as f64
                    }
                })
                .collect();
            let rows = boundary_table(&grid, e, &s.turbine)?;
            match out {
                Some(path) => write_boundary_csv(&rows, std::fs::File::create(path)?),
                None => write_boundary_csv(&rows, stdout),
            }
        }
        Command::Simulate {
            scenarios,
            model,
            out_dir: dir,
        } => cmd_simulate(&scenarios, model, &dir, stdout),
        Command::Compare {
            reference,
            candidate,
            window,
            json,
        } => {
            let a = TimeSeries::load(&reference)?;
            let b = TimeSeries::load(&candidate)?;
            let window = window.unwrap_or((
                a.t.first().copied().unwrap_or(0.0),
                a.t.last().copied().unwrap_or(0.0),
            ));
            let m = compare(&a, &b, window)?;
            writeln!(stdout, "mape_p_percent {:.6}", m.mape_p)?;
            writeln!(stdout, "max_abs_p {:.6e}", m.max_abs_p)?;
            writeln!(stdout, "max_abs_q {:.6e}", m.max_abs_q)?;
            match m.wall_clock_ratio {
                Some(r) => writeln!(stdout, "wall_clock_ratio {r:.3}")?,
                None => writeln!(stdout, "wall_clock_ratio n/a")?,
            }
            if let Some(path) = json {
                std::fs::write(path, serde_json::to_string_pretty(&m)?)?;
            }
            Ok(())
        }
        Command::Equivalize(args) => {
            let s = ScenarioFile::load(&args.scenario)?;
            let farm = s.detailed_farm()?;
            let it = pcc_iteration(&farm, &s.fault, &s.equivalent_options())?;
            let path = out_dir(&args.out_dir, &s)?.join(format!("{}_equivalent.json", stem(&args.scenario)));
            std::fs::write(&path, serde_json::to_string_pretty(&it.farm)?)?;
            writeln!(stdout, "pcc trace {:?}", it.trace)?;
            writeln!(stdout, "wrote {}", path.display())?;
            Ok(())
        }
    }
}

fn cmd_classify(args: &ScenarioArgs, stdout: &mut dyn Write) -> Result<()> {
    let s = ScenarioFile::load(&args.scenario)?;
    let farm = s.detailed_farm()?;
    let opts = s.equivalent_options();
    let it = pcc_iteration(&farm, &s.fault, &opts)?;
    let alpha = *it.trace.last().expect("trace is never empty");
    let eq = &it.farm;
    let sol = crate::feeder::solve_terminal_voltages(
        num_complex::Complex64::new(alpha, 0.0),
        &farm.network,
        &farm.i_d0,
        &farm.params,
        opts.terminal,
    )?;

    let dir = out_dir(&args.out_dir, &s)?;
    let path = dir.join(format!("{}_clusters.csv", stem(&args.scenario)));
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["turbine", "feeder", "v_w", "alpha", "category"])?;
    for (i, u) in sol.voltages.iter().enumerate() {
        let cat = eq
            .units
            .iter()
            .find(|unit| unit.members.contains(&i))
            .and_then(|unit| unit.category)
            .expect("every turbine belongs to a unit");
        w.write_record([
            (i + 1).to_string(),
            (farm.network.location(i).0 + 1).to_string(),
            format!("{:.6}", farm.speeds[i]),
            format!("{:.6}", u.norm()),
            cat.to_string(),
        ])?;
    }
    w.flush()?;

    writeln!(stdout, "pcc voltage {alpha:.4} after {} simulation(s)", it.simulations)?;
    for (n, cat) in Category::ALL.iter().enumerate() {
        let members = eq
            .unit(*cat)
            .map(|u| u.members.iter().map(|m| (m + 1).to_string()).collect::<Vec<_>>().join(" "))
            .unwrap_or_else(|| "-".into());
        writeln!(stdout, "subgroup {} (category {cat}): {members}", n + 1)?;
    }
    writeln!(stdout, "wrote {}", path.display())?;
    Ok(())
}

fn simulate_one(path: &Path, model: Model, dir: &Option<PathBuf>) -> Result<PathBuf> {
    let s = ScenarioFile::load(path)?;
    let farm = s.detailed_farm()?;
    let plant = match model {
        Model::Detailed => farm.plant()?,
        Model::Equivalent => pcc_iteration(&farm, &s.fault, &s.equivalent_options())?.farm.plant()?,
        Model::Traditional => traditional_equivalent(&farm)?.plant()?,
    };
    let ts = run(&plant, &s.fault, &s.sim_options(false))?;
    let out = out_dir(dir, &s)?.join(format!("{}_{}.csv", stem(path), model.name()));
    ts.save(&out)?;
    Ok(out)
}

fn cmd_simulate(scenarios: &[PathBuf], model: Model, dir: &Option<PathBuf>, stdout: &mut dyn Write) -> Result<()> {
    let results: Vec<Result<PathBuf>> = std::thread::scope(|scope| {
        let handles: Vec<_> = scenarios
            .iter()
            .map(|p| scope.spawn(move || simulate_one(p, model, dir)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Precondition("simulation thread panicked".into()))))
            .collect()
    });
    let mut first_err = None;
    for (path, r) in scenarios.iter().zip(results) {
        match r {
            Ok(out) => writeln!(stdout, "wrote {}", out.display())?,
            Err(e) => {
                writeln!(stdout, "failed {}: {e}", path.display())?;
                first_err.get_or_insert(e);
            }
        }
    }
    first_err.map_or(Ok(()), Err)
}
