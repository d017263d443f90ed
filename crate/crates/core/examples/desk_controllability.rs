//! Trains the desk model on the synthetic two-class corpus and reports
//! loss reduction, class accuracy of samples and Fréchet distance.
//!
//! cargo run --release --example desk_controllability -- [seed] [steps] [live]

use choreoflow::experiment::{run_controllability, ControllabilityConfig};

fn main() {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut cfg = ControllabilityConfig::new(seed);
    if let Some(steps) = args.next().and_then(|s| s.parse().ok()) {
        cfg.train.steps = steps;
    }
    if args.next().as_deref() == Some("live") {
        cfg.use_ema = false;
    }
    match run_controllability(&cfg) {
        Ok(r) => println!("{}", serde_json::to_string_pretty(&r).unwrap()),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
