//! Checks the analytic gradient of the full alignment objective through the
//! encoder against central differences.

use uniskel::harness::{gradcheck_model, GradCheckConfig};

fn main() -> uniskel::Result<()> {
    let r = gradcheck_model(&GradCheckConfig::default())?;
    println!(
        "max relative error {:.3e} over {} entries (worst: {:?}[{}], analytic {:.6e}, numeric {:.6e})",
        r.max_rel_err, r.entries_checked, r.worst_param, r.worst_index, r.analytic, r.numeric
    );
    println!("{}", if r.passed() { "ok" } else { "FAILED" });
    Ok(())
}
