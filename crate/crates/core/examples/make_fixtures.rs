//! Regenerates the bundled data under `data/`.
//!
//! ```text
//! cargo run -p postslm --example make_fixtures -- [out_dir]
//! ```

use std::path::PathBuf;

use postslm::hedonic::synthetic_city;
use postslm::montecarlo::{simulate_dataset, McConfig};

fn main() -> postslm::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"));
    std::fs::create_dir_all(&out)?;

    synthetic_city(1)?.write_dir(&out.join("city"))?;

    let sim1 = McConfig::sim1();
    simulate_dataset(&sim1, 0.4, 0)?.write_csv(std::fs::File::create(out.join("sim1.csv"))?)?;
    let mut aux = csv::Writer::from_path(out.join("sim1_aux.csv"))?;
    aux.write_record(["stratum", "aux_size"])?;
    for (q, n) in sim1.population.iter().enumerate() {
        aux.write_record([(q + 1).to_string(), n.to_string()])?;
    }
    aux.flush()?;

    let small = McConfig {
        population: [30, 30, 30, 30],
        sample: [3, 3, 3, 3],
        slope_offsets: [0.0; 4],
        dgp_weights: None,
        seed: 12,
        ..McConfig::sim1()
    };
    simulate_dataset(&small, 0.3, 0)?.write_csv(std::fs::File::create(out.join("fit12.csv"))?)?;
    println!("fixtures written to {}", out.display());
    Ok(())
}
