//! Piecewise-linear color ramp used for every colored mesh export.
//!
//! The anchors are five samples of the viridis map. They are part of the
//! output format: changing them changes exported files.

/// `(t, [r, g, b])` anchors, `t` increasing from 0 to 1.
pub const ANCHORS: [(f64, [f64; 3]); 5] = [
    (0.00, [0.267004, 0.004874, 0.329415]),
    (0.25, [0.229739, 0.322361, 0.545706]),
    (0.50, [0.127568, 0.566949, 0.550556]),
    (0.75, [0.369214, 0.788888, 0.382914]),
    (1.00, [0.993248, 0.906157, 0.143936]),
];

/// Color of `t`, clamped to [0, 1]. NaN maps to the low end.
pub fn ramp(t: f64) -> [f64; 3] {
    let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
    for w in ANCHORS.windows(2) {
        let (t0, c0) = w[0];
        let (t1, c1) = w[1];
        if t <= t1 {
            let s = (t - t0) / (t1 - t0);
            return [0, 1, 2].map(|k| (1.0 - s) * c0[k] + s * c1[k]);
        }
    }
    ANCHORS[ANCHORS.len() - 1].1
}

/// Maps values linearly from `range` (or their own min/max) onto the ramp.
pub fn colorize(values: &[f64], range: Option<(f64, f64)>) -> Vec<[f64; 3]> {
    let (lo, hi) = range.unwrap_or_else(|| {
        values
            .iter()
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
    });
    let span = hi - lo;
    values
        .iter()
        .map(|&v| ramp(if span > 0.0 && span.is_finite() { (v - lo) / span } else { 0.0 }))
        .collect()
}
