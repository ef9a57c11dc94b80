//! Regenerates `assets/reference/rq1_trajectories.csv` from the score table.
//!
//! Run from the workspace root:
//! `cargo run -p resilience-core --example synthesize_reference`

use resilience_core::reference_data::{synthesize_reference, trajectories_to_csv, TRAJECTORY_DECIMALS};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let csv = trajectories_to_csv(&synthesize_reference()?, TRAJECTORY_DECIMALS);
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/assets/reference/rq1_trajectories.csv");
    std::fs::write(path, csv)?;
    println!("wrote {path}");
    Ok(())
}
