//! Throughput and scorer-call counts on seeded synthetic catalogs of
//! growing size. Calls per instance should stay flat as the catalog grows.
//!
//! ```bash
//! cargo run --release -p dmel --example synthetic_benchmark -- 1000 10000 100000
//! ```

use dmel::cli::{bench_table, cmd_bench, BenchArgs, RunArgs};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut sizes: Vec<usize> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    if sizes.is_empty() {
        sizes = vec![1_000, 10_000];
    }
    let args = BenchArgs { sizes, instances: 500, lexicon: 20_000, run: RunArgs { jobs: 4, ..Default::default() } };
    let rows = cmd_bench(&args)?;
    print!("{}", bench_table(&rows));
    Ok(())
}
