//! Prompting strategy x aggregation grid on gold-labelled ranking instances,
//! repeated under different seeds.
//!
//! cargo run --example ablation -- [instances] [runs]

use redbench::crrf::ablation::{full_grid, run_ablation};
use redbench::fixtures::ablation_dataset;
use redbench::gateway::Gateway;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let instances: usize = args.next().map(|x| x.parse()).transpose()?.unwrap_or(30);
    let runs: usize = args.next().map(|x| x.parse()).transpose()?.unwrap_or(3);
    let data = ablation_dataset(instances, 8, 2, 42);
    let report = run_ablation(&Gateway::mock(42), &data, &full_grid(), runs, 42)?;
    print!("{}", report.to_tsv());
    Ok(())
}
