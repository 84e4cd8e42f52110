//! Adaptive Gauss–Kronrod (7, 15) quadrature for integrands given on the log
//! scale. The integrand is evaluated as `exp(g(x) − shift)` with `shift` the
//! largest log value seen so far, so likelihoods far below `f64::MIN_POSITIVE`
//! integrate without underflow.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss weights for XGK[1], XGK[3], XGK[5], XGK[7]
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Rescale once a new log value exceeds the running shift by this much.
const RESHIFT: f64 = 200.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogIntegral {
    /// Natural log of the integral.
    pub log_value: f64,
    /// Estimated relative error of the integral (not of its log).
    pub rel_error: f64,
    pub intervals: usize,
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

fn nodes(a: f64, b: f64) -> [f64; 15] {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut x = [c; 15];
    for i in 0..7 {
        x[2 * i] = c - h * XGK[i];
        x[2 * i + 1] = c + h * XGK[i];
    }
    x
}

fn log_values(g: &mut impl FnMut(f64) -> f64, a: f64, b: f64) -> Result<[f64; 15]> {
    let x = nodes(a, b);
    let mut out = [0.0; 15];
    for (o, &xi) in out.iter_mut().zip(&x) {
        let v = g(xi);
        if v.is_nan() || v == f64::INFINITY {
            return Err(Error::Numerical(format!("integrand is {v} at {xi}")));
        }
        *o = v;
    }
    Ok(out)
}

fn rule(a: f64, b: f64, logs: &[f64; 15], shift: f64) -> Segment {
    let h = 0.5 * (b - a);
    let f: Vec<f64> = logs.iter().map(|l| (l - shift).exp()).collect();
    let centre = f[14];
    let mut kronrod = WGK[7] * centre;
    let mut gauss = WG[3] * centre;
    for i in 0..7 {
        let pair = f[2 * i] + f[2 * i + 1];
        kronrod += WGK[i] * pair;
        if i % 2 == 1 {
            gauss += WG[i / 2] * pair;
        }
    }
    let mean = 0.5 * kronrod;
    let mut asc = WGK[7] * (centre - mean).abs();
    for i in 0..7 {
        asc += WGK[i] * ((f[2 * i] - mean).abs() + (f[2 * i + 1] - mean).abs());
    }
    let (value, asc) = (kronrod * h, asc * h);
    let mut error = ((kronrod - gauss) * h).abs();
    if asc > 0.0 && error > 0.0 {
        error = asc * (200.0 * error / asc).powf(1.5).min(1.0);
    }
    Segment { a, b, value, error: error.max(50.0 * f64::EPSILON * value) }
}

/// Integrates `exp(g)` over `[breakpoints[0], breakpoints[last]]`, starting
/// from the given partition and bisecting the worst segment until the
/// estimated relative error is below `rel_tol`.
pub fn integrate_log<F: FnMut(f64) -> f64>(
    mut g: F,
    breakpoints: &[f64],
    rel_tol: f64,
    max_intervals: usize,
) -> Result<LogIntegral> {
    if breakpoints.len() < 2
        || breakpoints.iter().any(|x| !x.is_finite())
        || breakpoints.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(Error::Numerical(format!(
            "integration breakpoints must be finite and increasing: {breakpoints:?}"
        )));
    }
    let initial = breakpoints
        .windows(2)
        .map(|w| Ok((w[0], w[1], log_values(&mut g, w[0], w[1])?)))
        .collect::<Result<Vec<_>>>()?;
    let mut shift = initial
        .iter()
        .flat_map(|(_, _, l)| l.iter().copied())
        .fold(f64::NEG_INFINITY, f64::max);
    if shift == f64::NEG_INFINITY {
        return Err(Error::Numerical("integrand vanishes over the whole domain".into()));
    }
    let mut segs: Vec<Segment> = initial.iter().map(|(a, b, l)| rule(*a, *b, l, shift)).collect();

    loop {
        let total: f64 = segs.iter().map(|s| s.value).sum();
        let error: f64 = segs.iter().map(|s| s.error).sum();
        if error <= rel_tol * total.abs() {
            return Ok(LogIntegral {
                log_value: shift + total.ln(),
                rel_error: error / total,
                intervals: segs.len(),
            });
        }
        let worst = segs
            .iter()
            .enumerate()
            .filter(|(_, s)| s.error > 0.0)
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .map(|(i, _)| i);
        let Some(worst) = worst.filter(|_| segs.len() < max_intervals) else {
            return Err(Error::Quadrature {
                estimate: shift + total.ln(),
                error: error / total,
            });
        };
        let Segment { a, b, .. } = segs[worst];
        let m = 0.5 * (a + b);
        if !(a < m && m < b) {
            // cannot bisect further at this precision
            segs[worst].error = 0.0;
            continue;
        }
        let left = log_values(&mut g, a, m)?;
        let right = log_values(&mut g, m, b)?;
        let peak = left.iter().chain(&right).copied().fold(f64::NEG_INFINITY, f64::max);
        if peak > shift + RESHIFT {
            let factor = (shift - peak).exp();
            for s in &mut segs {
                s.value *= factor;
                s.error *= factor;
            }
            shift = peak;
        }
        segs[worst] = rule(a, m, &left, shift);
        segs.push(rule(m, b, &right, shift));
    }
}

/// Evenly spaced breakpoints, `pieces + 1` of them.
pub(crate) fn linspace(a: f64, b: f64, pieces: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..=pieces)
        .map(|i| a + (b - a) * i as f64 / pieces as f64)
        .collect();
    v[pieces] = b;
    v
}

/// Sorts, clips to `[lo, hi]` and drops points closer than `min_gap`.
pub(crate) fn clean_breakpoints(mut pts: Vec<f64>, lo: f64, hi: f64) -> Vec<f64> {
    let min_gap = (hi - lo) * 1e-9;
    pts.retain(|p| p.is_finite() && *p > lo && *p < hi);
    pts.push(lo);
    pts.push(hi);
    pts.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::with_capacity(pts.len());
    for p in pts {
        if out.last().is_none_or(|l| p - l > min_gap) {
            out.push(p);
        } else if p == hi {
            *out.last_mut().unwrap() = hi;
        }
    }
    out
}
