use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nlcap::bell::{
    cglmp3_functional, chsh_functional, max_facet_alignment, max_violation,
    violation as bell_violation, BellFunctional, NSBasis,
};
use nlcap::io::{read_json, write_json, StateSpec};
use nlcap::optimizer::{
    default_grid, optimize_setup, reference_functional, sweep_gamma, Execution, OptimizeConfig,
    SweepConfig, SweepTable,
};
use nlcap::quantum::{born_box, DensityOperator, GammaState};
use nlcap::solver::{nonlocal_capacity, SolverConfig, SolverResult};
use nlcap::{Error, InputDist, NSBox};
use serde::Serialize;

use crate::error::{CliError, CliResult, Status};
use crate::manifest::{sibling, Recorder};
use crate::{
    CapacityArgs, OptimizeArgs, SearchArgs, SolverArgs, StateArgs, SweepArgs, ViolationArgs,
};

fn solver_config(args: &SolverArgs) -> SolverConfig {
    SolverConfig {
        gap_tol: args.gap_tol,
        max_outer_iters: args.max_iters,
        ..Default::default()
    }
}

fn optimize_config(search: &SearchArgs, solver: &SolverArgs) -> OptimizeConfig {
    OptimizeConfig {
        restarts: search.restarts,
        seed: search.seed,
        outer_tol: search.outer_tol,
        solver: solver_config(solver),
        ..Default::default()
    }
}

fn print_json(value: &impl Serialize) -> CliResult<()> {
    println!(
        "{}",
        serde_json::to_string_pretty(value).map_err(Error::from)?
    );
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Solver result with the iteration budget outcome split off.
fn solve(nsbox: &NSBox, cfg: &SolverConfig) -> CliResult<(SolverResult, Status)> {
    match nonlocal_capacity(nsbox, cfg) {
        Ok(res) => Ok((res, Status::Converged)),
        Err(Error::IterationLimit(res)) => Ok((*res, Status::IterationLimit)),
        Err(e) => Err(e.into()),
    }
}

pub fn capacity(args: &CapacityArgs) -> CliResult<Status> {
    let mut rec = Recorder::start("capacity");
    rec.input(&args.nsbox);
    let nsbox: NSBox = read_json(&args.nsbox)?;
    let mut cfg = solver_config(&args.solver);
    if let Some(w) = &args.input_dist {
        cfg.fixed_input_dist = Some(InputDist::new(w.clone())?);
    }
    let (res, status) = solve(&nsbox, &cfg)?;
    match &args.out {
        Some(out) => {
            write_json(out, &res)?;
            rec.finish(
                &cfg,
                vec![cfg.init_seed],
                std::slice::from_ref(out),
                &sibling(out, "manifest.json"),
            )?;
            println!("capacity    {:.9}", res.capacity);
            println!("lower_bound {:.9}", res.lower_bound);
            println!("gap         {:.3e}", res.gap);
            println!("iterations  {}", res.iterations);
        }
        None => {
            print_json(&res)?;
            eprintln!(
                "capacity {:.9} lower_bound {:.9} gap {:.3e} iterations {}",
                res.capacity, res.lower_bound, res.gap, res.iterations
            );
        }
    }
    Ok(status)
}

#[derive(Serialize)]
struct ViolationReport {
    functional: String,
    /// Index of the maximizing relabeling within the orbit.
    relabeling: usize,
    coeffs: Vec<f64>,
    value: f64,
    local_bound: f64,
    delta_b: f64,
    /// `B/2 - 1`, floored at 0; built-in functionals only.
    cmin_bell: Option<f64>,
    note: Option<&'static str>,
}

pub fn violation(args: &ViolationArgs) -> CliResult<Status> {
    let nsbox: NSBox = read_json(&args.nsbox)?;
    // Built-ins are scored on their best relabeling; outcome and setting
    // labels are conventions of the box.
    let (family, builtin) = match args.functional.as_str() {
        "chsh" => (chsh_functional().relabel_orbit(), true),
        "cglmp3" => (cglmp3_functional().relabel_orbit(), true),
        path => (vec![read_json::<BellFunctional>(path)?], false),
    };
    let (k, v) = max_violation(&nsbox, &family)?;
    print_json(&ViolationReport {
        functional: args.functional.clone(),
        relabeling: k,
        coeffs: family[k].coeffs().to_vec(),
        value: v.value,
        local_bound: v.local_bound,
        delta_b: v.delta_b,
        cmin_bell: builtin.then(|| (0.5 * v.value - 1.0).max(0.0)),
        note: builtin.then_some("cmin_bell equals the minimal communication only if the measurements maximize this violation"),
    })?;
    Ok(Status::Converged)
}

fn load_state(
    args: &StateArgs,
    local_dim: usize,
    rec: &mut Recorder,
) -> CliResult<DensityOperator> {
    let spec = match (&args.state, &args.gamma) {
        (Some(path), _) => {
            rec.input(path);
            read_json::<StateSpec>(path)?
        }
        (None, Some(g)) => {
            StateSpec::Gamma(GammaState::new(g[0], g.get(1).copied().unwrap_or(0.0))?)
        }
        (None, None) => {
            return Err(CliError::Usage(
                "pass --state FILE or --gamma G1[,G2]".into(),
            ))
        }
    };
    Ok(spec.density(Some(local_dim))?)
}

/// The extracted functional with the numbers needed to judge it.
#[derive(Serialize)]
struct FunctionalReport<'a> {
    #[serde(flatten)]
    functional: &'a BellFunctional,
    delta_b: f64,
    /// Alignment with the closest CHSH/CGLMP facet, when the shape has one.
    s_b: Option<f64>,
    capacity: f64,
    f_check: Option<f64>,
}

#[derive(Serialize)]
struct OptimizeSummary {
    capacity: f64,
    lower_bound: f64,
    gap: f64,
    delta_b: f64,
    s_b: Option<f64>,
    f_check: Option<f64>,
    outer_iterations: usize,
    restarts_completed: usize,
    failures: Vec<String>,
}

pub fn optimize(args: &OptimizeArgs) -> CliResult<Status> {
    let mut rec = Recorder::start("optimize");
    if args.shape.r != args.shape.s {
        return Err(Error::DimensionMismatch(format!(
            "shape {} needs equal outcome counts",
            args.shape
        ))
        .into());
    }
    let rho = load_state(&args.state, args.shape.r, &mut rec)?;
    let cfg = optimize_config(&args.search, &args.solver);
    let out = optimize_setup(&rho, args.shape, &cfg, &[])?;
    let best = &out.best;

    let nsbox = born_box(&rho, &best.setup)?;
    let delta_b = bell_violation(&nsbox, &out.functional)?.delta_b;
    let s_b = match reference_functional(args.shape) {
        // A vanishing functional (no violation at all) has no direction.
        Some(reference) => match max_facet_alignment(
            &out.functional,
            &reference.relabel_orbit(),
            &NSBasis::new(args.shape)?,
        ) {
            Ok(x) => Some(x),
            Err(Error::DegenerateProjection { .. }) => None,
            Err(e) => return Err(e.into()),
        },
        None => None,
    };

    std::fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    let path = |name: &str| args.out.join(name);
    write_json(path("setup.json"), &best.setup)?;
    write_json(path("witness.json"), &best.result.witness)?;
    write_json(path("result.json"), &best.result)?;
    write_json(
        path("functional.json"),
        &FunctionalReport {
            functional: &out.functional,
            delta_b,
            s_b,
            capacity: best.result.capacity,
            f_check: out.f_check,
        },
    )?;
    let mut trace = String::from("step,capacity,lower_bound,dual_before,dual_after,setup_hash\n");
    for (k, s) in best.trace.steps.iter().enumerate() {
        let _ = writeln!(
            trace,
            "{k},{:.9},{:.9},{:.9},{:.9},{}",
            s.capacity, s.lower_bound, s.dual_before, s.dual_after, s.setup_hash
        );
    }
    write_text(&path("trace.csv"), &trace)?;

    let outputs: Vec<PathBuf> = [
        "setup.json",
        "witness.json",
        "result.json",
        "functional.json",
        "trace.csv",
    ]
    .map(path)
    .to_vec();
    rec.finish(&cfg, vec![cfg.seed], &outputs, &path("manifest.json"))?;

    print_json(&OptimizeSummary {
        capacity: best.result.capacity,
        lower_bound: best.result.lower_bound,
        gap: best.result.gap,
        delta_b,
        s_b,
        f_check: out.f_check,
        outer_iterations: best.trace.steps.len(),
        restarts_completed: out.restarts_completed,
        failures: out.failures.clone(),
    })?;
    Ok(if best.result.converged {
        Status::Converged
    } else {
        Status::IterationLimit
    })
}

pub fn sweep(args: &SweepArgs) -> CliResult<Status> {
    let rec = Recorder::start("sweep");
    let execution = if args.jobs == 1 {
        Execution::SequentialWarm
    } else {
        Execution::ParallelCold
    };
    let mut cfg = SweepConfig::new(args.mode, execution);
    cfg.optimize = optimize_config(&args.search, &args.solver);
    cfg.refine_rounds = args.refine;
    let grid = args.gamma1.clone().unwrap_or_else(default_grid);

    let run = || sweep_gamma(&grid, args.gamma2, args.shape, &cfg);
    let table: SweepTable = if args.jobs > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(args.jobs)
            .build()?
            .install(run)?
    } else {
        run()?
    };

    let sidecar = sibling(&args.out, "json");
    write_text(&args.out, &table.to_csv())?;
    write_json(&sidecar, &table)?;
    rec.finish(
        &cfg,
        vec![cfg.optimize.seed],
        &[args.out.clone(), sidecar.clone()],
        &sibling(&args.out, "manifest.json"),
    )?;

    let failed: Vec<_> = table.points.iter().filter(|p| p.error.is_some()).collect();
    let unconverged = table
        .points
        .iter()
        .filter(|p| p.error.is_none() && !p.converged)
        .count();
    for p in &failed {
        eprintln!(
            "gamma1 = {}: {}",
            p.gamma1,
            p.error.as_deref().unwrap_or_default()
        );
    }
    println!(
        "{} points ({} failed, {} unconverged), {} execution -> {} and {}",
        table.points.len(),
        failed.len(),
        unconverged,
        if execution == Execution::SequentialWarm {
            "sequential-warm"
        } else {
            "parallel-cold"
        },
        args.out.display(),
        sidecar.display()
    );
    Ok(if !failed.is_empty() {
        Status::Failed
    } else if unconverged > 0 {
        Status::IterationLimit
    } else {
        Status::Converged
    })
}
