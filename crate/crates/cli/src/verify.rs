//! Post-hoc checks on result files: the communication bracket
//! `C <= Cmin <= C + 2 log2(C + 1) + 2 log2 e` and weak duality.

use std::path::Path;

use nlcap::io::read_json;
use nlcap::optimizer::SweepTable;
use nlcap::quantum::{born_box, GammaState};
use nlcap::solver::{dual_lower_bound, SolverResult};
use nlcap::NSBox;
use serde::Deserialize;

use crate::error::{CliError, CliResult, Status};
use crate::VerifyArgs;

#[derive(Default)]
struct Tally {
    checks: usize,
    failures: Vec<String>,
}

impl Tally {
    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok {
            self.failures.push(what());
        }
    }
}

fn bracket_holds(capacity: f64, cmin: f64, tol: f64) -> bool {
    let upper = capacity + 2.0 * (capacity + 1.0).log2() + 2.0 * std::f64::consts::LOG2_E;
    capacity <= cmin + tol && cmin <= upper + tol
}

#[derive(Deserialize)]
struct CsvRow {
    gamma1: f64,
    capacity: f64,
    lower_bound: f64,
    cmin_bell: f64,
}

fn verify_csv(path: &Path, tol: f64, tally: &mut Tally) -> CliResult<()> {
    let csv_err = |source| CliError::Csv {
        path: path.display().to_string(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    for row in reader.deserialize() {
        let row: CsvRow = row.map_err(csv_err)?;
        if row.capacity.is_nan() {
            continue;
        }
        tally.check(row.lower_bound <= row.capacity + tol, || {
            format!("gamma1 = {}: lower bound above capacity", row.gamma1)
        });
        if row.cmin_bell.is_finite() {
            tally.check(bracket_holds(row.capacity, row.cmin_bell, tol), || {
                format!(
                    "gamma1 = {}: capacity {} vs cmin {} outside the bracket",
                    row.gamma1, row.capacity, row.cmin_bell
                )
            });
        }
    }
    Ok(())
}

fn verify_table(table: &SweepTable, tol: f64, tally: &mut Tally) -> CliResult<()> {
    for p in table.points.iter().filter(|p| p.error.is_none()) {
        let g = p.gamma1;
        tally.check(p.lower_bound <= p.capacity + tol, || {
            format!("gamma1 = {g}: lower bound above capacity")
        });
        if p.cmin_bell.is_finite() {
            tally.check(bracket_holds(p.capacity, p.cmin_bell, tol), || {
                format!(
                    "gamma1 = {g}: capacity {} vs cmin {} outside the bracket",
                    p.capacity, p.cmin_bell
                )
            });
        }
        if let (Some(w), Some(setup)) = (&p.witness, &p.setup) {
            let rho = GammaState::new(p.gamma1, p.gamma2)?.density_in(table.shape.r)?;
            let dual = dual_lower_bound(w, &born_box(&rho, setup)?)?;
            tally.check(dual <= p.capacity + tol, || {
                format!(
                    "gamma1 = {g}: recomputed dual bound {dual} above capacity {}",
                    p.capacity
                )
            });
            tally.check((dual - p.lower_bound).abs() <= 1e-7, || {
                format!(
                    "gamma1 = {g}: recomputed dual bound {dual} vs stored {}",
                    p.lower_bound
                )
            });
        }
    }
    Ok(())
}

fn verify_result(
    res: &SolverResult,
    nsbox: Option<&NSBox>,
    tol: f64,
    tally: &mut Tally,
) -> CliResult<()> {
    tally.check(res.lower_bound <= res.capacity + tol, || {
        "lower bound above capacity".into()
    });
    let residual = res.witness.feasibility_residual();
    tally.check(residual < 1e-9, || {
        format!("witness feasibility residual {residual:e}")
    });
    if let Some(b) = nsbox {
        let dual = dual_lower_bound(&res.witness, b)?;
        tally.check(dual <= res.capacity + tol, || {
            format!("dual bound {dual} above capacity {}", res.capacity)
        });
        tally.check((dual - res.lower_bound).abs() <= 1e-7, || {
            format!("dual bound {dual} vs stored {}", res.lower_bound)
        });
    }
    Ok(())
}

pub fn run(args: &VerifyArgs) -> CliResult<Status> {
    let mut tally = Tally::default();
    let is_csv = args
        .file
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        verify_csv(&args.file, args.tol, &mut tally)?;
    } else {
        let value: serde_json::Value = read_json(&args.file)?;
        if value.get("points").is_some() {
            let table: SweepTable = serde_json::from_value(value).map_err(nlcap::Error::from)?;
            verify_table(&table, args.tol, &mut tally)?;
        } else {
            let res: SolverResult = serde_json::from_value(value).map_err(nlcap::Error::from)?;
            let nsbox: Option<NSBox> = args.nsbox.as_ref().map(read_json).transpose()?;
            verify_result(&res, nsbox.as_ref(), args.tol, &mut tally)?;
        }
    }
    for f in &tally.failures {
        println!("FAIL {f}");
    }
    println!("{} checks, {} failed", tally.checks, tally.failures.len());
    Ok(if tally.failures.is_empty() {
        Status::Converged
    } else {
        Status::Failed
    })
}
