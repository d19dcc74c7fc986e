//! `udet gradcheck`: the full gradient-verification suite; nonzero exit on
//! any failure.

use udet_core::verify::{gradient_suite, model_gradient_check, MODEL_TOLERANCE};

use crate::{CliError, CliResult};

pub fn run() -> CliResult {
    let entries = gradient_suite().map_err(CliError::Run)?;
    let mut failed = Vec::new();
    for e in &entries {
        let status = if e.passed() { "PASS" } else { "FAIL" };
        println!("{status} {} [tol {:.0e}]: {}", e.name, e.report.tolerance, e.report);
        if !e.passed() {
            failed.push(e.name);
        }
    }

    let e2e = model_gradient_check(4).map_err(CliError::Run)?;
    let status = if e2e.passed() { "PASS" } else { "FAIL" };
    println!("{status} end-to-end model [tol {MODEL_TOLERANCE:.0e}]: {e2e}");
    if !e2e.passed() {
        failed.push("end-to-end model");
    }

    if failed.is_empty() {
        println!("all gradient checks passed");
        Ok(())
    } else {
        Err(CliError::Check(format!("gradient checks failed: {}", failed.join(", "))))
    }
}
