use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use wpf_core::constraints::{construct_feasible_from, m_m_probe, minimal_area, z_empty_sufficient};
use wpf_core::flow::{check_estimates, evolve, Trajectory};
use wpf_core::functionals::make_state;
use wpf_core::io::{write_diagnostics_csv, ConfigFile, IoError, Snapshot};
use wpf_core::neumann::NeumannSolvePlan;
use wpf_core::{Error, Field, PhaseState};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] IoError),

    #[error("{0}")]
    Invalid(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("numerical failure: {0}")]
    Numerical(#[source] Error),

    #[error("margin collapse: {0}")]
    MarginCollapse(String),

    #[error("{0} check(s) failed")]
    ChecksFailed(usize),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) | Self::Invalid(_) => 1,
            Self::Infeasible(_) => 2,
            Self::Numerical(_) => 3,
            Self::MarginCollapse(_) => 4,
            Self::ChecksFailed(_) => 5,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InfeasibleBeta { .. } | Error::InfeasibleInitial(_) => {
                Self::Infeasible(e.to_string())
            }
            Error::InvalidGrid(_) | Error::InvalidParameter(_) | Error::ZeroDirection => {
                Self::Invalid(e.to_string())
            }
            Error::MarginCollapse { .. } => Self::MarginCollapse(e.to_string()),
            e => Self::Numerical(e),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn write(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|source| {
        IoError::File {
            path: path.to_owned(),
            source,
        }
        .into()
    })
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|source| {
        IoError::File {
            path: path.to_owned(),
            source,
        }
        .into()
    })
}

pub struct Initial {
    pub state: PhaseState,
    pub summary: String,
    pub z_empty: bool,
}

/// Builds the feasible initial state described by `cfg` without writing anything.
pub fn build_initial(cfg: &ConfigFile) -> CliResult<Initial> {
    let grid = cfg.grid()?;
    let p = cfg.potential()?;
    let spec = cfg.spec()?;
    let base = minimal_area(spec.alpha, &p, &grid)?;
    if spec.beta <= base.value {
        return Err(CliError::Infeasible(format!(
            "beta = {} does not exceed the estimated minimal area {:.10}",
            spec.beta, base.value
        )));
    }
    let phi = cfg.phi.field(&grid)?;
    let fp = construct_feasible_from(&spec, &phi, &p, &base)?;
    let state = make_state(fp.field, &p);
    let plan = NeumannSolvePlan::new(grid);
    let m_m = m_m_probe(std::slice::from_ref(&state), &plan);
    let z_empty = z_empty_sufficient(&spec, &p, &grid);

    let mut s = String::new();
    let _ = writeln!(s, "beta_alpha_est = {:.16e}", base.value);
    let _ = writeln!(s, "z_empty_sufficient = {z_empty}");
    let _ = writeln!(s, "phi = {}", cfg.phi);
    let _ = writeln!(s, "lambda = {:.16e}", fp.lambda);
    let _ = writeln!(s, "mean = {:.16e}", state.mean_v);
    let _ = writeln!(s, "area_F = {:.16e}", state.area_f);
    let _ = writeln!(s, "energy_E = {:.16e}", state.energy_e);
    let _ = writeln!(s, "margin = {:.16e}", state.margin);
    let _ = writeln!(s, "m_M_probe = {:.16e}", m_m);
    if !z_empty {
        let _ = writeln!(
            s,
            "WARNING: z_empty_sufficient = false; the closed-form test is inconclusive for this (alpha, beta)"
        );
    }
    Ok(Initial {
        state,
        summary: s,
        z_empty,
    })
}

fn snapshot(cfg: &ConfigFile, field: Field, t: f64) -> Snapshot {
    Snapshot {
        a: cfg.a,
        alpha: cfg.alpha,
        beta: cfg.beta,
        t,
        field,
    }
}

pub fn initial_snapshot_path(cfg: &ConfigFile) -> PathBuf {
    cfg.out_dir.join("v0.snap")
}

pub fn cmd_init(cfg: &ConfigFile) -> CliResult<Initial> {
    let init = build_initial(cfg)?;
    create_dir(&cfg.out_dir)?;
    snapshot(cfg, init.state.v.clone(), 0.0).save(&initial_snapshot_path(cfg))?;
    write(&cfg.out_dir.join("feasibility.txt"), &init.summary)?;
    print!("{}", init.summary);
    if !init.z_empty {
        eprintln!("wpf: warning: z_empty_sufficient is false");
    }
    println!("wrote {}", initial_snapshot_path(cfg).display());
    Ok(init)
}

/// Loads `v0.snap` when it was produced for the same grid and parameters,
/// otherwise runs `init` again.
fn initial_field(cfg: &ConfigFile) -> CliResult<Field> {
    let path = initial_snapshot_path(cfg);
    if path.exists() {
        let snap = Snapshot::load(&path)?;
        let matches = snap.field.grid() == &cfg.grid()?
            && snap.a == cfg.a
            && snap.alpha == cfg.alpha
            && snap.beta == cfg.beta;
        if matches {
            return Ok(snap.field);
        }
        eprintln!(
            "wpf: {} does not match the configuration; re-initialising",
            path.display()
        );
    }
    Ok(cmd_init(cfg)?.state.v)
}

fn fmt_summary(traj: &Trajectory, status: &str) -> String {
    let g = &traj.global;
    let report = check_estimates(traj);
    let mut s = String::new();
    let _ = writeln!(s, "status = {status}");
    let _ = writeln!(s, "steps = {}", traj.steps());
    let _ = writeln!(s, "E_initial = {:.16e}", g.energy_initial);
    let _ = writeln!(
        s,
        "E_final = {:.16e}",
        traj.energies().last().copied().unwrap_or(f64::NAN)
    );
    let _ = writeln!(s, "observed_m_M = {:.16e}", g.observed_m_m);
    let _ = writeln!(s, "min_margin = {:.16e}", g.min_margin);
    let _ = writeln!(s, "max_abs_A = {:.16e}", g.max_abs_a);
    let _ = writeln!(s, "max_abs_B = {:.16e}", g.max_abs_b);
    let _ = writeln!(s, "kappa_B = {:.16e}", g.kappa_b);
    let _ = writeln!(
        s,
        "multiplier_accumulator = {:.16e}",
        g.multiplier_accumulator
    );
    let _ = writeln!(s, "C1 = {:.16e}", report.c1);
    let retries: Vec<String> = g.half_step_retries.iter().map(|n| n.to_string()).collect();
    let _ = writeln!(s, "half_step_retries = [{}]", retries.join(", "));
    let _ = writeln!(s, "estimate checks:");
    for c in &report.checks {
        let _ = writeln!(
            s,
            "  {:<20} {}  worst {:.3e}  {}",
            c.name,
            if c.passed { "PASS" } else { "FAIL" },
            c.worst_ratio,
            c.detail
        );
    }
    s
}

fn write_outputs(cfg: &ConfigFile, traj: &Trajectory, status: &str) -> CliResult<()> {
    create_dir(&cfg.out_dir)?;
    let csv_path = cfg.out_dir.join("diagnostics.csv");
    let file = fs::File::create(&csv_path).map_err(|source| IoError::File {
        path: csv_path.clone(),
        source,
    })?;
    write_diagnostics_csv(std::io::BufWriter::new(file), &traj.rows).map_err(|source| {
        IoError::File {
            path: csv_path,
            source,
        }
    })?;
    let snap_dir = cfg.out_dir.join("snapshots");
    create_dir(&snap_dir)?;
    for ((step, t), state) in traj.state_steps.iter().zip(&traj.times).zip(&traj.states) {
        snapshot(cfg, state.v.clone(), *t).save(&snap_dir.join(format!("step_{step:07}.snap")))?;
    }
    let summary = fmt_summary(traj, status);
    write(&cfg.out_dir.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

pub fn cmd_run(cfg: &ConfigFile) -> CliResult<()> {
    let rc = cfg.run_config()?;
    let v0 = initial_field(cfg)?;
    match evolve(&v0, &rc) {
        Ok(traj) => write_outputs(cfg, &traj, "completed"),
        Err(Error::MarginCollapse {
            step,
            margin,
            partial,
        }) => {
            let status = format!("margin-collapse at step {step} (margin {margin:e})");
            write_outputs(cfg, &partial, &status)?;
            Err(CliError::MarginCollapse(format!(
                "margin {margin:e} fell below the floor {:e} at step {step}",
                rc.margin_floor
            )))
        }
        Err(e) => Err(e.into()),
    }
}
