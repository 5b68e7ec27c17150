//! Small regression helpers shared by the constant estimators.

/// Ordinary least squares fit `y = intercept + slope * x`.
///
/// Returns `None` with fewer than two points or when all `x` coincide.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return None;
    }
    let mx = xs[..n].iter().sum::<f64>() / n as f64;
    let my = ys[..n].iter().sum::<f64>() / n as f64;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs[..n].iter().zip(&ys[..n]) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx <= f64::EPSILON * n as f64 {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Slope of the upper envelope of a point cloud.
///
/// The x-range is cut into `bins` equal cells, the highest point of each
/// non-empty cell is kept, and a straight line is fitted through those
/// maxima. Returns `(slope, intercept)`.
pub fn envelope_fit(xs: &[f64], ys: &[f64], bins: usize) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .map(|(&x, &y)| (x, y))
        .collect();
    if pts.len() < 2 || bins < 2 {
        return None;
    }
    let lo = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return None;
    }
    let mut best: Vec<Option<(f64, f64)>> = vec![None; bins];
    for &(x, y) in &pts {
        let b = (((x - lo) / (hi - lo)) * bins as f64).floor() as usize;
        let b = b.min(bins - 1);
        match best[b] {
            Some((_, by)) if by >= y => {}
            _ => best[b] = Some((x, y)),
        }
    }
    let (bx, by): (Vec<f64>, Vec<f64>) = best.into_iter().flatten().unzip();
    least_squares(&bx, &by)
}

/// Two-stage least squares: fit, drop points whose absolute residual lies
/// above the `keep` quantile, refit.
pub fn trimmed_least_squares(xs: &[f64], ys: &[f64], keep: f64) -> Option<(f64, f64)> {
    let (slope, icept) = least_squares(xs, ys)?;
    let mut res: Vec<f64> = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - icept - slope * x).abs())
        .collect();
    let mut sorted = res.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let cut = sorted[((sorted.len() - 1) as f64 * keep).round() as usize];
    let (mut kx, mut ky) = (Vec::new(), Vec::new());
    for (i, r) in res.drain(..).enumerate() {
        if r <= cut {
            kx.push(xs[i]);
            ky.push(ys[i]);
        }
    }
    least_squares(&kx, &ky).or(Some((slope, icept)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line_is_recovered() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 - 0.5 * x).collect();
        let (s, c) = least_squares(&xs, &ys).unwrap();
        assert!((s + 0.5).abs() < 1e-12);
        assert!((c - 3.0).abs() < 1e-12);
    }

    #[test]
    fn envelope_ignores_points_below() {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..50 {
            let x = i as f64 / 10.0;
            xs.push(x);
            ys.push(2.0 * x);
            xs.push(x);
            ys.push(2.0 * x - 5.0);
        }
        let (s, _) = envelope_fit(&xs, &ys, 10).unwrap();
        assert!((s - 2.0).abs() < 1e-9);
    }

    #[test]
    fn trimming_removes_outlier() {
        let mut xs: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let mut ys: Vec<f64> = xs.iter().map(|x| x * 0.25).collect();
        xs.push(20.0);
        ys.push(100.0);
        let (s, _) = trimmed_least_squares(&xs, &ys, 0.95).unwrap();
        assert!((s - 0.25).abs() < 1e-9);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(least_squares(&[1.0], &[2.0]).is_none());
        assert!(least_squares(&[1.0, 1.0], &[2.0, 3.0]).is_none());
    }
}
