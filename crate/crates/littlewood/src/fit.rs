//! Ordinary least squares for the scaling-law diagnostics.

/// Result of fitting `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope (residual-based; meaningless for n <= 2).
    pub slope_stderr: f64,
    pub n: usize,
}

impl LineFit {
    /// Half-width of the ~95% confidence band on the slope.
    pub fn slope_band(&self) -> f64 {
        2.0 * self.slope_stderr
    }
}

/// Fit a straight line; returns `None` for fewer than two points or a
/// degenerate abscissa.
pub fn fit_line(points: &[(f64, f64)]) -> Option<LineFit> {
    let n = points.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res: f64 = points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let slope_stderr = if n > 2 {
        (ss_res / (nf - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Some(LineFit {
        slope,
        intercept,
        slope_stderr,
        n,
    })
}

/// Fit `log y = c + s log x`, skipping non-positive values.
pub fn fit_log_log(points: &[(f64, f64)]) -> Option<LineFit> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.0 > 0.0 && p.1 > 0.0)
        .map(|p| (p.0.ln(), p.1.ln()))
        .collect();
    fit_line(&logs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line_recovered() {
        let pts: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 3.0 - 0.25 * i as f64)).collect();
        let fit = fit_line(&pts).unwrap();
        assert!((fit.slope + 0.25).abs() < 1e-12);
        assert!((fit.intercept - 3.0).abs() < 1e-12);
        assert!(fit.slope_stderr < 1e-12);
    }

    #[test]
    fn power_law_slope_from_log_log() {
        let pts: Vec<(f64, f64)> = (1..=8)
            .map(|i| {
                let x = 10.0_f64.powi(i);
                (x, 2.0 * x.powf(-0.75))
            })
            .collect();
        let fit = fit_log_log(&pts).unwrap();
        assert!((fit.slope + 0.75).abs() < 1e-10);
    }

    #[test]
    fn degenerate_inputs_yield_none() {
        assert!(fit_line(&[(1.0, 2.0)]).is_none());
        assert!(fit_line(&[(1.0, 2.0), (1.0, 3.0)]).is_none());
        assert!(fit_log_log(&[(0.0, 1.0), (-1.0, 2.0)]).is_none());
    }
}
