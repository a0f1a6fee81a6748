use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Dataset, StreamError};

/// Two unit-variance Gaussian clusters centred at `-separation` and
/// `+separation` on every axis. Classes alternate row by row so any head/tail
/// split sees both.
pub fn gaussian_clusters(n: usize, dim: usize, separation: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut ds = Dataset {
        feature_columns: (0..dim).map(|i| format!("x{i}")).collect(),
        label_column: "label".into(),
        ..Dataset::default()
    };
    for i in 0..n {
        let class = (i % 2) as f64;
        let centre = if class == 0.0 {
            -separation
        } else {
            separation
        };
        ds.features
            .push((0..dim).map(|_| centre + noise.sample(&mut rng)).collect());
        ds.labels.push(class);
    }
    ds
}

/// Writes `ds` with a header row, features first, label last.
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), StreamError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = ds.feature_columns.clone();
    header.push(ds.label_column.clone());
    w.write_record(&header)?;
    for (f, l) in ds.features.iter().zip(&ds.labels) {
        let mut row: Vec<String> = f.iter().map(|v| v.to_string()).collect();
        row.push(l.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
