//! Runs the full synthetic benchmark and prints the comparison table.
//!
//! `cargo run --release -p pdscreen-core --example run_benchmark [subjects_per_class]`

use pdscreen_core::pipeline::{run_benchmark, BenchmarkConfig};

fn main() -> pdscreen_core::Result<()> {
    let mut cfg = BenchmarkConfig::default();
    if let Some(n) = std::env::args().nth(1) {
        cfg.cohort.subjects_per_class = n.parse().expect("subjects per class must be an integer");
    }
    let out = run_benchmark(&cfg)?;
    println!("direction cosines: {:?}", out.direction_cosines);
    println!("{}", out.face_report.to_table());
    if let Some(last) = out.gait_trace.last() {
        println!(
            "gait extractor: epoch {} loss {:.4} accuracy {:.4}",
            last.epoch, last.loss, last.accuracy
        );
    }
    println!("{}", out.comparison.to_table());
    for t in &out.timings {
        println!("{:<12}{:.1}s", t.stage, t.seconds);
    }
    Ok(())
}
