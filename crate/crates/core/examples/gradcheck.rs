//! Finite-difference check of every parameter group on the toy model in f64.

use jmini::train::gradcheck::fixture;
use jmini::train::{gradcheck, GradCheckOptions, GroupStatus};
use jmini::{CodecConfig, GroupSet, JanusModel, ModelConfig};

fn main() -> jmini::Result<()> {
    let model: JanusModel<f64> = JanusModel::new(ModelConfig::toy(), CodecConfig::toy(), 1)?.cast();
    let (seqs, images) = fixture(&model, 3)?;
    let t0 = std::time::Instant::now();
    let report = gradcheck(&model, &seqs, &images, GroupSet::all(), &GradCheckOptions::default())?;
    for (group, status) in &report.groups {
        if let GroupStatus::Checked { max_rel_error, coords } = status {
            println!("{:<20} {coords:>4} coords  max rel error {max_rel_error:.2e}", group.name());
        }
    }
    println!("{} in {:.1}s", if report.passed() { "passed" } else { "FAILED" }, t0.elapsed().as_secs_f64());
    Ok(())
}
