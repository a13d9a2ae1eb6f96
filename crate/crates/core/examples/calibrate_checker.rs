//! Re-measures the checker's shape thresholds on ground-truth renders.
//! The output is what ships in assets/shape_calibration.json.

fn main() -> jmini::Result<()> {
    let c = jmini::infer::calibrate(10_000, 48, 2024)?;
    println!("{}", serde_json::to_string_pretty(&c)?);
    Ok(())
}
