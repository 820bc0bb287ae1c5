//! Shared inputs for the benchmarks.

use scalelaw::{IsoFlopCurve, NStarEstimate, NoiseProfile};

/// Seven log-spaced sizes around `centre` on a sqrt(2) grid.
pub fn sizes(centre: f64) -> Vec<f64> {
    (-3..=3).map(|i| centre * 2f64.powf(0.5 * i as f64)).collect()
}

/// A quadratic-in-log bowl with its vertex between knots.
pub fn bowl_curve(flops: f64) -> IsoFlopCurve {
    let vertex = 3.3e7;
    let data: Vec<(f64, f64)> = sizes(3e7)
        .into_iter()
        .map(|n| (n, 3.0 + 0.08 * (n / vertex).ln().powi(2)))
        .collect();
    IsoFlopCurve::from_losses(flops, &data, &NoiseProfile::refined_web()).expect("valid fixture")
}

/// Estimates lying on `N = 2e6 C^0.5` with mildly varying spread.
pub fn estimates(count: usize) -> Vec<NStarEstimate> {
    (0..count)
        .map(|k| {
            let c = 1.25e16 * 2f64.powi(k as i32);
            let n = 2e6 * c.sqrt();
            NStarEstimate {
                flops: c,
                n_star: n,
                log_std: 0.12 + 0.01 * k as f64,
                samples: vec![n; 8],
                omitted_fraction: 0.0,
                loss_star: 3.0,
                valid: true,
            }
        })
        .collect()
}
