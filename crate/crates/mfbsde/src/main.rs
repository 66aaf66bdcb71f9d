use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mfbsde::config::ScenarioConfig;
use mfbsde::report::{csv_string, export_csv};
use mfbsde::scenario::{shipped, solve, SHIPPED};
use mfbsde::suite::run_suite;
use mfbsde::HarnessError;
use mfbsde_core::skorokhod::{bsp_residuals, solve_bsp, solve_sp, sp_residuals, BspProblem, SpProblem};
use mfbsde_core::grid::make_grid;

#[derive(Parser)]
#[command(name = "mfbsde", version, about = "Doubly mean-reflected mean-field BSDE experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario JSON file, or `shipped:NAME`.
    #[arg(long)]
    config: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for CSV and JSON reports.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    particles: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Deterministic ramp problems for the forward and backward reflection maps.
    Skorokhod {
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve a (quadratic, Lipschitz or resistance) scenario.
    Solve(Common),
    /// Density pipeline scenario.
    Density(Common),
    /// Acceptance suite; `--filter` selects by id, name or tag.
    Suite {
        #[arg(long)]
        filter: Option<String>,
        /// Write the JSON summary here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep particle counts and step counts for one scenario.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "1000,2500,10000")]
        particle_sweep: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "50,100")]
        step_sweep: Vec<usize>,
    },
}

fn load(common: &Common, default: &str) -> Result<ScenarioConfig, HarnessError> {
    let mut cfg = match common.config.as_deref() {
        Some(arg) if arg.starts_with("shipped:") => shipped(&arg["shipped:".len()..])?,
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{path}: {e}")))?;
            ScenarioConfig::from_json(&text)?
        }
        None => shipped(default)?,
    };
    if let Some(s) = common.seed {
        cfg.particles.seed = s;
    }
    if let Some(n) = common.particles {
        cfg.particles.n = n;
    }
    if let Some(n) = common.steps {
        cfg.grid.n_steps = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), text)?;
    Ok(())
}

fn run_one(common: &Common, default: &str, require_density: bool) -> Result<(), HarnessError> {
    let cfg = load(common, default)?;
    if require_density && !matches!(cfg.resistance, mfbsde::config::ResistanceConfig::Density { .. }) {
        return Err(HarnessError::Config(format!("{} is not a density scenario", cfg.name)));
    }
    let out = solve(&cfg)?;
    let rep = &out.report;
    match &common.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let csv_name = cfg.output.as_ref().map_or_else(|| format!("{}.csv", cfg.name), |o| o.csv.clone());
            export_csv(rep, &dir.join(csv_name))?;
            write(dir, &format!("{}.json", cfg.name), &rep.to_json())?;
        }
        None => print!("{}", csv_string(rep)?),
    }
    eprintln!(
        "{}: invariants {}, picard iterations {}, {:.2} s",
        rep.scenario,
        if rep.passed() { "pass" } else { "FAIL" },
        rep.picard_history.len(),
        rep.wall_time_s
    );
    if rep.passed() {
        Ok(())
    } else {
        Err(HarnessError::Solver {
            message: format!("{} violates its invariants", rep.scenario),
            history: rep.picard_history.clone(),
        })
    }
}

fn skorokhod(steps: usize, out: Option<&Path>) -> Result<(), HarnessError> {
    let grid = make_grid(0.0, 1.0, steps)?;
    let n = grid.n_nodes();
    let s: Vec<f64> = grid.nodes().iter().map(|t| 2.0 * t).collect();
    let fwd_p = SpProblem::band(grid.clone(), s.clone(), vec![-1.0; n], vec![1.0; n])?;
    let fwd = solve_sp(&fwd_p)?;
    let bwd_p = BspProblem::band(grid.clone(), s, 0.0, vec![0.0; n], vec![1.0; n])?;
    let bwd = solve_bsp(&bwd_p)?;
    let mut text = String::from("t,x_forward,K_forward,x_backward,K_backward\n");
    for i in 0..n {
        text.push_str(&format!(
            "{:.11e},{:.11e},{:.11e},{:.11e},{:.11e}\n",
            grid.node(i),
            fwd.x[i],
            fwd.k.values()[i],
            bwd.x[i],
            bwd.k.values()[i]
        ));
    }
    let (rf, rb) = (sp_residuals(&fwd_p, &fwd), bsp_residuals(&bwd_p, &bwd));
    eprintln!("forward residuals {rf:?}\nbackward residuals {rb:?}");
    match out {
        Some(dir) => write(dir, "skorokhod.csv", &text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn bench(common: &Common, ns: &[usize], steps: &[usize]) -> Result<(), HarnessError> {
    println!("scenario,particles,steps,seconds,E_Y0,picard_iterations,passed");
    for &st in steps {
        for &n in ns {
            let c = Common {
                particles: Some(n),
                steps: Some(st),
                ..common.clone()
            };
            let cfg = load(&c, "lipschitz_contraction")?;
            let rep = solve(&cfg)?.report;
            println!(
                "{},{n},{st},{:.3},{:.11e},{},{}",
                rep.scenario,
                rep.wall_time_s,
                rep.rows[0].mean_y,
                rep.picard_history.len(),
                rep.passed()
            );
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Skorokhod { steps, out } => skorokhod(steps, out.as_deref()),
        Command::Solve(c) => run_one(&c, "inactive_band", false),
        Command::Density(c) => run_one(&c, "density_half", true),
        Command::Suite { filter, out } => {
            let summary = run_suite(filter.as_deref());
            for r in &summary.results {
                eprintln!("{}", r.line());
            }
            let json = summary.to_json();
            match out {
                Some(dir) => write(&dir, "suite.json", &json)?,
                None => println!("{json}"),
            }
            if summary.all_passed() {
                Ok(())
            } else {
                Err(HarnessError::Suite {
                    failed: summary.failed,
                    total: summary.total,
                })
            }
        }
        Command::Bench {
            common,
            particle_sweep,
            step_sweep,
        } => bench(&common, &particle_sweep, &step_sweep),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let HarnessError::Solver { history, .. } = &e {
                if !history.is_empty() {
                    eprintln!("iteration history: {history:?}");
                }
            }
            if let HarnessError::Config(_) = e {
                let names: Vec<&str> = SHIPPED.iter().map(|(n, _)| *n).collect();
                eprintln!("shipped scenarios: {}", names.join(", "));
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
