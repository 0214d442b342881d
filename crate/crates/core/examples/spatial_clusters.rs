//! Moran's I and Getis-Ord Gi* on a grid of points with one expensive corner.
//!
//! ```text
//! cargo run --release --example spatial_clusters
//! ```

use carcensus::spatial::{
    build_weights, classify_clusters, getis_ord_gistar, morans_i_significance, ClusterLabel, GeoPoint, PointPattern,
    WeightScheme, DEFAULT_COLD_THRESHOLD, DEFAULT_HOT_THRESHOLD,
};

fn main() -> carcensus::Result<()> {
    // 20 x 20 grid, ~100 m spacing; prices rise toward the north-east corner
    let n = 20;
    let mut points = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let d = (((n - 1 - i) * (n - 1 - i) + (n - 1 - j) * (n - 1 - j)) as f64).sqrt();
            let wobble = ((i * 7 + j * 13) % 11) as f64 * 400.0;
            points.push(GeoPoint {
                lat: 41.8 + i as f64 * 0.0009,
                lon: -87.7 + j as f64 * 0.0012,
                value: 18_000.0 + 30_000.0 * (-d / 5.0).exp() + wobble,
            });
        }
    }
    let pattern = PointPattern::new(points)?;

    for scheme in [WeightScheme::InverseSquare, WeightScheme::Band(250.0)] {
        let w = build_weights(&pattern, scheme)?;
        let t = morans_i_significance(&pattern, &w, 999, 11)?;
        println!("{scheme:<12} I={:.4} E[I]={:.4} p={:.3}", t.observed, t.expected, t.p_value);
    }

    let w = build_weights(&pattern, WeightScheme::Band(250.0))?;
    let z = getis_ord_gistar(&pattern, &w)?;
    let labels = classify_clusters(&z, DEFAULT_HOT_THRESHOLD, DEFAULT_COLD_THRESHOLD)?;
    for row in (0..n).rev() {
        let line: String = (0..n)
            .map(|col| match labels[row * n + col] {
                ClusterLabel::Hot => '+',
                ClusterLabel::Cold => '-',
                ClusterLabel::None => '.',
            })
            .collect();
        println!("{line}");
    }
    Ok(())
}
