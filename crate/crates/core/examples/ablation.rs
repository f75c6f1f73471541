//! Trains the five ablation variants on domains 0 and 1 and ranks them by
//! PSNR on held-out domain 2.
//!
//! ```text
//! cargo run --release --example ablation -- [steps] [out_dir]
//! ```

use std::path::PathBuf;

use hazemeta::evaluate::ablation::run_ablation;
use hazemeta::RunConfig;

fn main() -> hazemeta::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let mut cfg = RunConfig::default();
    if let Some(steps) = args.next().and_then(|s| s.parse().ok()) {
        cfg.ablation.steps = steps;
    }
    let out = PathBuf::from(args.next().unwrap_or_else(|| "runs/ablation".into()));
    cfg.validate()?;

    let table = run_ablation(&cfg, &out)?;
    print!("{}", table.to_csv());
    println!("table and plot written to {}", out.display());
    Ok(())
}
