//! Compares analytic head gradients with central differences on random instances.

use stagebank::harness::gradcheck::run_gradcheck;

fn main() -> stagebank::Result<()> {
    let r = run_gradcheck(100, 0)?;
    println!(
        "{} instances, {} coordinates, max relative error {:.2e}, max absolute error {:.2e}, failures {}",
        r.instances, r.coordinates, r.max_rel_error, r.max_abs_error, r.failures
    );
    Ok(())
}
