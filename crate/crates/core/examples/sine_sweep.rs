//! Reptile vs gradient-agreement Reptile on sine regression for one rate pair.
//!
//! `cargo run --release --example sine_sweep -- <inner_rate> <outer_rate> [iterations] [seeds]`

use metagree::evaluate::{run_cells, tabulate, Contender};
use metagree::tasks::SineFamily;
use metagree::{MetaConfig, MlpSpec, Schedule, TaskSource, Variant};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let (inner, outer) = (arg(0, 0.02), arg(1, 0.1));
    let iterations = arg(2, 20_000.0) as usize;
    let n_seeds = arg(3, 3.0) as u64;
    let seeds: Vec<u64> = (1..=n_seeds).collect();

    let source = TaskSource::Sine(SineFamily::default());
    let contenders: Vec<Contender> = [Variant::Reptile, Variant::GaReptile]
        .into_iter()
        .map(|variant| {
            let mut config = MetaConfig::sine(variant, 0);
            config.inner_rate = inner;
            config.outer_rate = outer;
            config.outer_iterations = iterations;
            Contender {
                name: variant.to_string(),
                config,
                spec: MlpSpec::sine_regressor(),
                source: source.clone(),
            }
        })
        .collect();
    let start = std::time::Instant::now();
    let cells = run_cells(&contenders, &seeds, 1000, 12_345, Schedule::Parallel);
    let table = tabulate(&contenders, &seeds, 1000, 12_345, &cells);
    for row in &table.rows {
        println!(
            "inner={inner} outer={outer} {:<10} {} = {:.4} +- {:.4} {:?}",
            row.name, row.metric, row.mean, row.std, row.per_seed
        );
    }
    let (r, g) = (table.rows[0].mean, table.rows[1].mean);
    println!(
        "relative improvement {:.1}%  ({:.1?})",
        100.0 * (r - g) / r,
        start.elapsed()
    );
}
