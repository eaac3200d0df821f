use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use aclab::config::{expansion_row, geometry_report, run_config, well_from, CaseConfig, WellSection};
use aclab::diagnostics::{write_expansion, write_table};
use aclab::modelops::eps_spectrum;
use aclab::profile::{compute_profile, decay_check, default_t_max};
use aclab::solver::{continuation, lyapunov_schmidt_iterate, newton_full, Method, Mode, SolveConfig};
use aclab::{Error, Result};

#[derive(Parser)]
#[command(name = "lab", version, about = "Allen-Cahn interface lab")]
struct Cli {
    /// output directory
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// worker threads (0 = all cores)
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// seed for randomized checks
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum WellArg {
    Quartic,
    Asymmetric,
}

#[derive(Subcommand)]
enum Cmd {
    /// Tabulate the heteroclinic profile and report c* and decay rates.
    Profile {
        #[arg(long, value_enum, default_value = "quartic")]
        well: WellArg,
        #[arg(long, default_value_t = 4001)]
        points: usize,
        #[arg(long)]
        t_max: Option<f64>,
    },
    /// Lowest Dirichlet eigenvalues of the eps-scaled operator on [-1, 1].
    Spectrum {
        #[arg(long, value_enum, default_value = "quartic")]
        well: WellArg,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.1, 0.05, 0.025])]
        eps: Vec<f64>,
        #[arg(long, default_value_t = 3)]
        k: usize,
    },
    /// Geometry identities and the Jacobi nondegeneracy verdict of a case.
    Geometry { config: PathBuf },
    /// Residual of the approximate solution of a case at one eps.
    Residual {
        config: PathBuf,
        #[arg(long)]
        eps: f64,
    },
    /// Solve a case at one eps and write the state.
    Solve {
        config: PathBuf,
        #[arg(long)]
        eps: f64,
    },
    /// Continuation over the case schedule; writes the expansion table.
    Sweep { config: PathBuf },
    /// Full pipeline with assertions; exit code 1 if any fails.
    Run { config: PathBuf },
}

fn well_section(w: WellArg) -> WellSection {
    match w {
        WellArg::Quartic => WellSection::Quartic,
        WellArg::Asymmetric => WellSection::Asymmetric,
    }
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)?)?;
    Ok(())
}

fn execute(cli: &Cli) -> Result<bool> {
    let out = &cli.out;
    std::fs::create_dir_all(out)?;
    match &cli.cmd {
        Cmd::Profile { well, points, t_max } => {
            let w = well_from(&well_section(*well))?;
            let t = match t_max {
                Some(t) => *t,
                None => default_t_max(&w)?,
            };
            let p = compute_profile(&w, t, *points)?;
            let rows: Vec<Vec<f64>> = p
                .grid_t()
                .iter()
                .zip(p.u_values())
                .zip(p.w_values())
                .map(|((t, u), w)| vec![*t, *u, *w])
                .collect();
            write_table(&out.join("profile.csv"), &["t", "u", "w"], &rows)?;
            let d = decay_check(&p)?;
            println!("c_star {:.16e}", p.c_star());
            println!("decay rates {:.6} {:.6}", d.rate_minus, d.rate_plus);
            Ok(p.check_invariants().holds())
        }
        Cmd::Spectrum { well, eps, k } => {
            let w = well_from(&well_section(*well))?;
            let p = compute_profile(&w, default_t_max(&w)?, 4001)?;
            let mut rows = Vec::new();
            for &e in eps {
                let s = eps_spectrum(&p, e, *k, 40)?;
                println!("eps {e}: {:?}", s.eigenvalues);
                let mut r = vec![e];
                r.extend(&s.eigenvalues);
                rows.push(r);
            }
            let mut header = vec!["eps".to_string()];
            header.extend((0..*k).map(|i| format!("mu{i}")));
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            write_table(&out.join("spectrum.csv"), &header, &rows)?;
            Ok(true)
        }
        Cmd::Geometry { config } => {
            let cfg = CaseConfig::load(config)?;
            let pb = cfg.problem()?;
            let rep = geometry_report(&pb, cfg.solve_config().mode)?;
            println!("{rep:?}");
            write_json(&out.join("geometry.json"), &rep)?;
            Ok(true)
        }
        Cmd::Residual { config, eps } => {
            let cfg = CaseConfig::load(config)?;
            let pb = cfg.problem()?;
            pb.check_resolution(*eps)?;
            let u = pb.approximate(*eps, None)?;
            let lambda = match cfg.solve_config().mode {
                Mode::Unconstrained => 0.0,
                Mode::VolumeConstrained { .. } => pb.lambda_star(),
            };
            let f = pb.residual(*eps, lambda, &u);
            let sup = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            println!("sup |F| = {sup:.6e}, sup |F| / eps^2 = {:.6e}", sup / (eps * eps));
            write_json(&out.join("residual.json"), &serde_json::json!({ "eps": eps, "sup": sup, "field": f }))?;
            Ok(true)
        }
        Cmd::Solve { config, eps } => {
            let cfg = CaseConfig::load(config)?;
            let pb = cfg.problem()?;
            let solve = SolveConfig { continuation_eps: vec![*eps], ..cfg.solve_config() };
            let st = match cfg.solver.method {
                Method::Newton => {
                    let u0 = pb.approximate(*eps, None)?;
                    newton_full(&pb, &solve, *eps, &u0, pb.lambda_star())?
                }
                Method::LyapunovSchmidt => lyapunov_schmidt_iterate(&pb, &solve, *eps, &pb.reference, None)?.0,
            };
            println!(
                "eps {} lambda {:.12} residual {:.3e} iterations {}",
                st.eps, st.lambda, st.residual_norm, st.iterations
            );
            write_json(&out.join("state.json"), &st)?;
            Ok(true)
        }
        Cmd::Sweep { config } => {
            let cfg = CaseConfig::load(config)?;
            let pb = cfg.problem()?;
            let solve = cfg.solve_config();
            let states = continuation(&pb, &solve, cfg.solver.method)?;
            let rows = states
                .iter()
                .map(|s| expansion_row(&pb, solve.mode, s))
                .collect::<Result<Vec<_>>>()?;
            write_expansion(&out.join("table.csv"), &rows)?;
            for r in &rows {
                println!("{r:?}");
            }
            Ok(true)
        }
        Cmd::Run { config } => {
            let rep = run_config(config, out, cli.seed)?;
            print!("{}", rep.render());
            Ok(rep.passed())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more assertions failed");
            ExitCode::from(1)
        }
        Err(e) => {
            let e: &Error = &e;
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
