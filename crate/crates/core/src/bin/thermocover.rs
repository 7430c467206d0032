use std::fs;
use std::path::{Path, PathBuf};
use std::process;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use thermocover::kv::KvDoc;
use thermocover::report::RunReport;
use thermocover::scenario::{builtin_scenario, builtin_scenarios, ScenarioSpec};
use thermocover::sim::{simulate, SimTrace};
use thermocover::sysid::{fit_fopdt, fit_two_node, NetworkTrace, StepTrace};
use thermocover::{Error, Mode, PlantParams, Result};

#[derive(Parser)]
#[command(name = "thermocover", version, about = "Thermal cover simulator, controller and identification bench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone, Default)]
struct Overrides {
    /// Override a scenario key, e.g. `detection.threshold=0.05`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Control sample time (s); the integration step becomes a tenth of it
    /// unless `dt` is also set.
    #[arg(long)]
    t_step: Option<f64>,
    /// Seed for measurement noise.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write `<name>_trace.csv` and `<name>_report.txt`.
    Run {
        /// Built-in scenario name or path to a scenario file.
        scenario: Option<String>,
        /// Run every built-in scenario in parallel.
        #[arg(long, conflicts_with = "scenario")]
        all: bool,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// List the built-in scenarios.
    List,
    /// Print a scenario in the key-value format, with overrides applied.
    PrintConfig {
        scenario: String,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Fit model parameters to a trace CSV.
    Fit {
        csv: PathBuf,
        #[arg(long, value_enum, default_value_t = FitModel::Fopdt)]
        model: FitModel,
        /// Parameter set the trace belongs to (heat|cool).
        #[arg(long, default_value = "heat")]
        mode: Mode,
        /// Output column for the first-order fit (T_c or T_w).
        #[arg(long, default_value = "T_c")]
        column: String,
        /// Room temperature during the experiment (two-node fit).
        #[arg(long, default_value_t = 21.0)]
        t_amb: f64,
        /// Write the fitted parameters here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FitModel {
    Fopdt,
    TwoNode,
}

fn load_scenario(name: &str) -> Result<ScenarioSpec> {
    match builtin_scenario(name) {
        Ok(spec) => Ok(spec),
        Err(Error::UnknownScenario(_)) if Path::new(name).is_file() => {
            let text = fs::read_to_string(name).map_err(|e| Error::io(name, e))?;
            ScenarioSpec::parse(&text)
        }
        Err(e) => Err(e),
    }
}

/// Scenario with overrides applied, plus the override lines for the report.
fn configure(base: ScenarioSpec, ov: &Overrides) -> Result<(ScenarioSpec, Vec<String>)> {
    let mut doc = base.to_kv();
    let mut applied = Vec::new();
    if let Some(ts) = ov.t_step {
        for (k, v) in [("t_s", ts), ("dt", ts / 10.0)] {
            doc.set_f64(k, v);
        }
        applied.push(format!("t_s={ts}"));
    }
    if let Some(seed) = ov.seed {
        doc.set("noise.seed", seed);
        applied.push(format!("noise.seed={seed}"));
    }
    for s in &ov.set {
        doc.apply_override(s)?;
        applied.push(s.trim().to_string());
    }
    Ok((ScenarioSpec::from_kv(&doc)?, applied))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path.display(), e))
}

fn run_one(spec: &ScenarioSpec, applied: &[String], out_dir: &Path) -> Result<String> {
    let trace = simulate(spec)?;
    let report = RunReport::new(spec, &trace, applied)?.render();
    write(&out_dir.join(format!("{}_trace.csv", spec.name)), &trace.to_csv())?;
    write(&out_dir.join(format!("{}_report.txt", spec.name)), &report)?;
    Ok(report)
}

fn fit(csv: &Path, model: FitModel, mode: Mode, column: &str, t_amb: f64) -> Result<KvDoc> {
    let text = fs::read_to_string(csv).map_err(|e| Error::io(csv.display(), e))?;
    let trace = SimTrace::from_csv(&text)?;
    let report = match model {
        FitModel::Fopdt => fit_fopdt(&StepTrace::from_sim(&trace, mode, column)?)?,
        FitModel::TwoNode => {
            let p = PlantParams::preset(mode);
            fit_two_node(&[NetworkTrace::from_sim(&trace, mode, t_amb)?], p.c_co, p.r_co)?
        }
    };
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    Ok(report.to_kv())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::List => {
            for s in builtin_scenarios() {
                println!("{}", s.name);
            }
        }
        Command::PrintConfig { scenario, overrides } => {
            let (spec, _) = configure(load_scenario(&scenario)?, &overrides)?;
            print!("{}", spec.to_kv());
        }
        Command::Run {
            scenario,
            all,
            out_dir,
            overrides,
        } => {
            if !out_dir.is_dir() {
                return Err(Error::io(
                    out_dir.display(),
                    std::io::Error::new(std::io::ErrorKind::NotFound, "output directory does not exist"),
                ));
            }
            if all {
                let specs = builtin_scenarios()
                    .into_iter()
                    .map(|s| configure(s, &overrides))
                    .collect::<Result<Vec<_>>>()?;
                let results: Vec<(String, Result<String>)> = specs
                    .par_iter()
                    .map(|(spec, applied)| (spec.name.clone(), run_one(spec, applied, &out_dir)))
                    .collect();
                let mut first_err = None;
                for (name, r) in results {
                    match r {
                        Ok(_) => println!("{name}: ok"),
                        Err(e) => {
                            eprintln!("{name}: error: {e}");
                            first_err.get_or_insert(e);
                        }
                    }
                }
                if let Some(e) = first_err {
                    return Err(e);
                }
            } else {
                let name = scenario.ok_or_else(|| Error::invalid("a scenario name or --all is required"))?;
                let (spec, applied) = configure(load_scenario(&name)?, &overrides)?;
                print!("{}", run_one(&spec, &applied, &out_dir)?);
            }
        }
        Command::Fit {
            csv,
            model,
            mode,
            column,
            t_amb,
            out,
        } => {
            let doc = fit(&csv, model, mode, &column, t_amb)?;
            match out {
                Some(path) => write(&path, &doc.to_string())?,
                None => print!("{doc}"),
            }
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = execute(cli) {
        eprintln!("error: {e}");
        process::exit(e.exit_code() as i32);
    }
}
