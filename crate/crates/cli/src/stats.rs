//! Small statistics helpers for aggregating repetitions.

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// Linear-interpolation percentile, `q` in [0, 100].
pub fn percentile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Least-squares `(slope, intercept)` of `y` on `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    linear_fit(&lx, &ly).map(|(s, _)| s)
}

/// Least-squares `(a, b)` of `y = a / d + b`.
pub fn inverse_fit(d: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let inv: Vec<f64> = d.iter().map(|v| 1.0 / v).collect();
    linear_fit(&inv, y)
}

/// `x` at which the piecewise log-log curve through `(xs, ys)` reaches
/// `target`; `ys` must be monotone over the bracketing segment.
pub fn log_interp_x(xs: &[f64], ys: &[f64], target: f64) -> Option<f64> {
    for i in 1..xs.len() {
        let (y0, y1) = (ys[i - 1], ys[i]);
        if (y0 - target) * (y1 - target) <= 0.0 && y0 != y1 && y0 > 0.0 && y1 > 0.0 && target > 0.0 {
            let t = (target.ln() - y0.ln()) / (y1.ln() - y0.ln());
            return Some((xs[i - 1].ln() + t * (xs[i].ln() - xs[i - 1].ln())).exp());
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&xs), 2.5);
        assert!((std_dev(&xs) - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(std_dev(&[3.0]), 0.0);
    }

    #[test]
    fn percentiles() {
        let xs: Vec<f64> = (0..=100).map(f64::from).collect();
        assert_eq!(percentile(&xs, 68.0), 68.0);
        assert_eq!(percentile(&[5.0, 1.0], 50.0), 3.0);
        assert_eq!(percentile(&[2.0], 68.0), 2.0);
    }

    #[test]
    fn fits() {
        let d = [100.0, 200.0, 400.0];
        let y: Vec<f64> = d.iter().map(|v| 0.3 / v + 1e-4).collect();
        let (a, b) = inverse_fit(&d, &y).unwrap();
        assert!((a - 0.3).abs() < 1e-12 && (b - 1e-4).abs() < 1e-15);
        let x = [1.0, 10.0, 100.0];
        let y = [1.0, 0.1, 0.01];
        assert!((log_log_slope(&x, &y).unwrap() + 1.0).abs() < 1e-12);
        assert!(log_log_slope(&x, &[1.0, 0.0, 1.0]).is_none());
    }

    #[test]
    fn interpolation() {
        let x = [1.0, 10.0, 100.0];
        let y = [1.0, 0.1, 0.01];
        assert!((log_interp_x(&x, &y, 0.1).unwrap() - 10.0).abs() < 1e-9);
        assert!((log_interp_x(&x, &y, 0.0316227766).unwrap() - 31.6227766).abs() < 1e-4);
        assert!(log_interp_x(&x, &y, 2.0).is_none());
    }
}
