//! Small descriptive-statistics helpers shared by the estimators.

/// Median of a slice. NaN-free input is assumed; returns NaN when empty.
pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Linear-interpolation quantile (the "type 7" rule used by numpy and R).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, q)
}

pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = pos - lo as f64;
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n - 1 denominator); zero for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

/// Weighted least-squares line `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    /// Weighted coefficient of determination.
    pub r_squared: f64,
    /// Coefficient of determination of the same line with unit weights.
    pub r_squared_unweighted: f64,
}

/// Weighted linear regression via weighted-mean centring.
///
/// Returns `None` when fewer than two points carry positive weight or when
/// all abscissae coincide.
pub fn weighted_line(xs: &[f64], ys: &[f64], ws: &[f64]) -> Option<LineFit> {
    debug_assert_eq!(xs.len(), ys.len());
    debug_assert_eq!(xs.len(), ws.len());
    let used = ws.iter().filter(|w| **w > 0.0).count();
    if used < 2 {
        return None;
    }
    let sw: f64 = ws.iter().sum();
    let xbar = xs.iter().zip(ws).map(|(x, w)| w * x).sum::<f64>() / sw;
    let ybar = ys.iter().zip(ws).map(|(y, w)| w * y).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for ((x, y), w) in xs.iter().zip(ys).zip(ws) {
        let dx = x - xbar;
        sxx += w * dx * dx;
        sxy += w * dx * (y - ybar);
    }
    if sxx <= 0.0 || !sxx.is_finite() {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;

    let mut ss_res_w = 0.0;
    let mut ss_tot_w = 0.0;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    let ymean = mean(ys);
    for ((x, y), w) in xs.iter().zip(ys).zip(ws) {
        let r = y - (intercept + slope * x);
        ss_res_w += w * r * r;
        ss_tot_w += w * (y - ybar) * (y - ybar);
        ss_res += r * r;
        ss_tot += (y - ymean) * (y - ymean);
    }
    let r2 = |res: f64, tot: f64| if tot > 0.0 { 1.0 - res / tot } else { 1.0 };
    Some(LineFit {
        intercept,
        slope,
        r_squared: r2(ss_res_w, ss_tot_w),
        r_squared_unweighted: r2(ss_res, ss_tot),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(median(&v), 2.5);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert!((quantile(&v, 0.25) - 1.75).abs() < 1e-15);
    }

    #[test]
    fn std_of_constant_is_zero() {
        assert_eq!(sample_std(&[2.0; 5]), 0.0);
        assert!((sample_std(&[1.0, 2.0, 3.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn line_through_exact_points() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| 1.0 + 2.0 * x).collect();
        let fit = weighted_line(&xs, &ys, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-14);
        assert!((fit.intercept - 1.0).abs() < 1e-14);
        assert_eq!(fit.r_squared, 1.0);
    }

    #[test]
    fn degenerate_abscissa_rejected() {
        assert!(weighted_line(&[1.0, 1.0], &[0.0, 1.0], &[1.0, 1.0]).is_none());
        assert!(weighted_line(&[1.0], &[0.0], &[1.0]).is_none());
    }
}
