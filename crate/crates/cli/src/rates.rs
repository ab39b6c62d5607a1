//! Observed orders between uniform levels and least-squares slopes along an
//! adaptive trace.

/// `log₂(e_{ℓ−1}/e_ℓ)` for every row after the first. An order is `None`
/// when either error is zero or not finite.
pub fn pairwise_orders(errors: &[f64]) -> Vec<Option<f64>> {
    let mut out = Vec::with_capacity(errors.len());
    for (i, &e) in errors.iter().enumerate() {
        if i == 0 {
            out.push(None);
            continue;
        }
        let prev = errors[i - 1];
        out.push(if usable(prev) && usable(e) { Some((prev / e).log2()) } else { None });
    }
    out
}

fn usable(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

/// Least-squares slope of `log y` against `log x`. Points with a non-positive
/// coordinate are an error (`None`), as is a fit through fewer than two
/// distinct abscissae.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    if !x.iter().chain(y).all(|&v| usable(v)) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx <= 0.0 {
        return None;
    }
    Some(sxy / sxx)
}

/// Number of trailing points used for an adaptive slope: `⌈n/2⌉`.
pub fn tail_len(n: usize) -> usize {
    n.div_ceil(2)
}

/// Slope over the last `⌈n/2⌉` points.
pub fn tail_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() {
        return None;
    }
    let start = x.len() - tail_len(x.len());
    loglog_slope(&x[start..], &y[start..])
}
