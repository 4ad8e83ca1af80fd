use std::path::PathBuf;

use clap::Args;

use stream_etm::bench::{fig1_toy, ToyConfig, FIG1_SEED};
use stream_etm::Result;

use crate::files::write_json;

#[derive(Debug, Args)]
pub struct ToyArgs {
    #[arg(long, default_value_t = FIG1_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = ToyConfig::default().topics)]
    pub topics: usize,
    /// Spread of the new points around their previous counterparts.
    #[arg(long, default_value_t = ToyConfig::default().noise)]
    pub noise: f64,
    /// Cosine-equivalent cutoff for both matchers.
    #[arg(long, default_value_t = ToyConfig::default().cutoff)]
    pub cutoff: f64,
    /// Output JSON file.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: ToyArgs) -> Result<()> {
    let cfg = ToyConfig { topics: args.topics, noise: args.noise, seed: args.seed, cutoff: args.cutoff, ..ToyConfig::default() };
    let toy = fig1_toy(&cfg)?;
    write_json(&args.out, &toy)?;
    let yes_no = |b: bool| if b { "yes" } else { "no" };
    println!(
        "transport assignments unchanged: {}; euclidean assignments changed: {}",
        yes_no(toy.uot_stable()),
        yes_no(toy.euclidean_changed())
    );
    Ok(())
}
