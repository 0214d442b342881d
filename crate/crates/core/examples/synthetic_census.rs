//! Full synthetic census: generate a city, calibrate, roll up by zip, test for
//! spatial clustering of car prices and predict income from car features.
//!
//! ```text
//! cargo run --release --example synthetic_census -- 1
//! ```

use carcensus::pipeline::{demo, DemoConfig};

fn main() -> carcensus::Result<()> {
    env_logger::init();
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let report = demo(&DemoConfig::new(seed))?;
    println!("{report}");
    println!("strongest income correlations:");
    let mut ranked = report.correlations.clone();
    ranked.retain(|c| c.r.is_some());
    ranked.sort_by(|a, b| b.r.unwrap().abs().total_cmp(&a.r.unwrap().abs()));
    for c in ranked.iter().take(8) {
        println!("  {:<24} r={:+.3} p={:.2e}", c.name, c.r.unwrap(), c.p_value.unwrap());
    }
    Ok(())
}
