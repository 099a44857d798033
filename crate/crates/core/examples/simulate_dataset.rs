//! Render a small labeled frame set and print its manifest summary.
//!
//! cargo run --example simulate_dataset -- [out_dir]

use spectranet::sim::{generate_dataset, DatasetSpec, OrientationPolicy};

fn main() -> spectranet::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/example-data".into());
    let spec = DatasetSpec {
        n_classes: 4,
        examples_per_class: 10,
        orientation_policy: OrientationPolicy::Random,
        include_flat: true,
        seed: 3,
        ..Default::default()
    };
    let classes = spec.class_library()?;
    for c in &classes {
        let names: Vec<&str> = c.materials.iter().map(|m| m.name.as_str()).collect();
        println!("{}: {}", c.class_id, names.join(" + "));
    }
    let manifest = generate_dataset(&spec, &classes, &out)?;
    println!("{} frames in {out}", manifest.len());
    for (class, n) in manifest.class_counts() {
        let dn: Vec<f64> = manifest
            .records
            .iter()
            .filter(|r| r.class_id == class)
            .map(|r| r.measured_dnmed)
            .collect();
        let mean = dn.iter().sum::<f64>() / n as f64;
        println!("{class:>6}: {n} frames, mean DN_med {mean:.1}");
    }
    Ok(())
}
