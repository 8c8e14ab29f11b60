//! Least-squares fitters for the linear, negative-exponential and power laws.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Law {
    Linear,
    Negexp,
    Powerlaw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum FitParams {
    /// `y = slope·x + intercept`; `origin_slope` is the through-origin fit.
    Linear { slope: f64, intercept: f64, origin_slope: f64 },
    /// `C = c_star − alpha·exp(−beta·E)`
    Negexp { c_star: f64, alpha: f64, beta: f64 },
    /// `L = d_c·D^alpha_d`
    Powerlaw { d_c: f64, alpha_d: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: FitParams,
    /// Root-mean-square residual in the units of y.
    pub residual_rms: f64,
    /// Coefficient of determination, clamped to [0, 1]; log-space for the power law.
    pub r_squared: f64,
    pub points: Vec<(f64, f64)>,
    /// Smallest and largest fitted x.
    pub x_range: (f64, f64),
    pub iterations: usize,
    pub flags: Vec<String>,
}

impl FitResult {
    pub fn law(&self) -> Law {
        match self.params {
            FitParams::Linear { .. } => Law::Linear,
            FitParams::Negexp { .. } => Law::Negexp,
            FitParams::Powerlaw { .. } => Law::Powerlaw,
        }
    }

    /// The fitted law at `x`.
    pub fn eval(&self, x: f64) -> f64 {
        match self.params {
            FitParams::Linear { slope, intercept, .. } => slope * x + intercept,
            FitParams::Negexp { c_star, alpha, beta } => c_star - alpha * (-beta * x).exp(),
            FitParams::Powerlaw { d_c, alpha_d } => d_c * x.powf(alpha_d),
        }
    }

    /// Evaluates at `x` and flags points beyond 10× the fitted range.
    pub fn extrapolate(&self, x: f64) -> Extrapolation {
        let (lo, hi) = self.x_range;
        Extrapolation {
            value: self.eval(x),
            beyond_range: x > 10.0 * hi || (lo > 0.0 && x < lo / 10.0),
        }
    }

    /// The x at which the law reaches `y`.
    pub fn inverse(&self, y: f64) -> Result<f64> {
        match self.params {
            FitParams::Linear { slope, intercept, .. } => {
                if slope == 0.0 {
                    return Err(Error::Domain("flat line has no inverse".into()));
                }
                Ok((y - intercept) / slope)
            }
            FitParams::Negexp { c_star, alpha, beta } => {
                if y >= c_star {
                    return Err(Error::Unreachable { target: y, limit: c_star });
                }
                if alpha <= 0.0 || beta <= 0.0 {
                    return Err(Error::Domain("negexp inverse needs alpha, beta > 0".into()));
                }
                Ok(-((c_star - y) / alpha).ln() / beta)
            }
            FitParams::Powerlaw { d_c, alpha_d } => {
                if y <= 0.0 || alpha_d == 0.0 {
                    return Err(Error::Domain("power-law inverse needs y > 0 and a non-zero exponent".into()));
                }
                Ok((y / d_c).powf(1.0 / alpha_d))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extrapolation {
    pub value: f64,
    pub beyond_range: bool,
}

fn x_range(points: &[(f64, f64)]) -> (f64, f64) {
    points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)))
}

fn distinct_x(points: &[(f64, f64)]) -> usize {
    let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    xs.len()
}

fn check_finite(points: &[(f64, f64)]) -> Result<()> {
    if points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
        return Err(Error::Domain("points must be finite".into()));
    }
    Ok(())
}

/// Residual RMS and clamped r² of predictions against observations.
fn goodness(ys: &[f64], pred: &[f64]) -> (f64, f64) {
    let n = ys.len() as f64;
    let mean = ys.iter().sum::<f64>() / n;
    let ss_res: f64 = ys.iter().zip(pred).map(|(y, p)| (y - p).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res <= 1e-24 * ys.iter().map(|y| y * y).sum::<f64>().max(1e-300) {
        1.0
    } else {
        0.0
    };
    ((ss_res / n).sqrt(), r2.clamp(0.0, 1.0))
}

/// Ordinary least squares `y = a·x + b`, sums taken in sorted order so the
/// result does not depend on point order.
fn ols(points: &[(f64, f64)]) -> (f64, f64) {
    let mut p = points.to_vec();
    p.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let n = p.len() as f64;
    let mx = p.iter().map(|q| q.0).sum::<f64>() / n;
    let my = p.iter().map(|q| q.1).sum::<f64>() / n;
    let sxy: f64 = p.iter().map(|q| (q.0 - mx) * (q.1 - my)).sum();
    let sxx: f64 = p.iter().map(|q| (q.0 - mx).powi(2)).sum();
    let a = sxy / sxx;
    (a, my - a * mx)
}

pub fn fit_linear(points: &[(f64, f64)]) -> Result<FitResult> {
    check_finite(points)?;
    if points.len() < 2 || distinct_x(points) < 2 {
        return Err(Error::Range("linear fit needs at least 2 distinct x values".into()));
    }
    let (slope, intercept) = ols(points);
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let sxx: f64 = sorted.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = sorted.iter().map(|p| p.0 * p.1).sum();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let pred: Vec<f64> = points.iter().map(|p| slope * p.0 + intercept).collect();
    let (rms, r2) = goodness(&ys, &pred);
    Ok(FitResult {
        params: FitParams::Linear {
            slope,
            intercept,
            origin_slope: sxy / sxx,
        },
        residual_rms: rms,
        r_squared: r2,
        points: points.to_vec(),
        x_range: x_range(points),
        iterations: 0,
        flags: Vec::new(),
    })
}

pub fn fit_powerlaw(points: &[(f64, f64)]) -> Result<FitResult> {
    check_finite(points)?;
    if points.iter().any(|p| p.0 <= 0.0 || p.1 <= 0.0) {
        return Err(Error::Domain("power-law fit needs positive x and y".into()));
    }
    if distinct_x(points) < 3 {
        return Err(Error::Range("power-law fit needs at least 3 distinct x values".into()));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|p| (p.0.ln(), p.1.ln())).collect();
    let (alpha_d, ln_dc) = ols(&logs);
    let d_c = ln_dc.exp();
    let ly: Vec<f64> = logs.iter().map(|p| p.1).collect();
    let lpred: Vec<f64> = logs.iter().map(|p| alpha_d * p.0 + ln_dc).collect();
    let (_, r2) = goodness(&ly, &lpred);
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let pred: Vec<f64> = points.iter().map(|p| d_c * p.0.powf(alpha_d)).collect();
    let (rms, _) = goodness(&ys, &pred);
    Ok(FitResult {
        params: FitParams::Powerlaw { d_c, alpha_d },
        residual_rms: rms,
        r_squared: r2,
        points: points.to_vec(),
        x_range: x_range(points),
        iterations: 0,
        flags: Vec::new(),
    })
}

/// Solves the 3×3 system `a·x = b` by Gaussian elimination with partial pivoting.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for c in 0..3 {
        let p = (c..3).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-300 {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..3 {
            let f = a[r][c] / a[c][c];
            for k in c..3 {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = [0.0; 3];
    for r in (0..3).rev() {
        let s: f64 = (r + 1..3).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

pub const NEGEXP_MAX_ITERATIONS: usize = 200;
pub const NEGEXP_TOLERANCE: f64 = 1e-10;

fn negexp_ssr(p: &[(f64, f64)], t: [f64; 3]) -> f64 {
    p.iter().map(|&(e, c)| (c - (t[0] - t[1] * (-t[2] * e).exp())).powi(2)).sum()
}

/// Damped Gauss-Newton (Levenberg-Marquardt) fit of `C = C* − α·exp(−β·E)`.
pub fn fit_negexp(points: &[(f64, f64)]) -> Result<FitResult> {
    check_finite(points)?;
    if distinct_x(points) < 4 {
        return Err(Error::Range("negexp fit needs at least 4 distinct epochs".into()));
    }
    let (lo, hi) = x_range(points);
    if lo <= 0.0 || hi < 4.0 * lo {
        return Err(Error::Range("negexp fit needs positive epochs spanning at least 4x".into()));
    }
    let mut p = points.to_vec();
    p.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut flags = Vec::new();
    let mut sorted = p.clone();
    sorted.dedup_by(|a, b| a.0 == b.0);
    if sorted.windows(2).any(|w| w[1].1 < w[0].1) {
        flags.push("capacity decreases with epochs somewhere in the data".to_string());
    }

    let max_c = p.iter().map(|q| q.1).fold(f64::NEG_INFINITY, f64::max);
    let min_c = p.iter().map(|q| q.1).fold(f64::INFINITY, f64::min);
    let c0 = if max_c > 0.0 { 1.05 * max_c } else { max_c + 0.05 * max_c.abs().max(1.0) };
    let a0 = c0 - min_c;
    // ln(C* − C) = ln α − β·E
    let logs: Vec<(f64, f64)> = p.iter().filter(|q| c0 - q.1 > 0.0).map(|q| (q.0, (c0 - q.1).ln())).collect();
    let mut b0 = if distinct_x(&logs) >= 2 { -ols(&logs).0 } else { 0.0 };
    if !(b0 > 0.0 && b0.is_finite()) {
        b0 = 1.0 / (hi - lo);
    }
    let mut t = [c0, a0, b0];
    let mut ssr = negexp_ssr(&p, t);
    let scale = p.iter().map(|q| q.1 * q.1).sum::<f64>().max(1e-300);
    let mut lambda = 1e-3;
    let mut converged = ssr <= 1e-28 * scale;
    let mut iterations = 0;
    while !converged && iterations < NEGEXP_MAX_ITERATIONS {
        iterations += 1;
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for &(e, c) in &p {
            let ex = (-t[2] * e).exp();
            let j = [1.0, -ex, t[1] * e * ex];
            let r = c - (t[0] - t[1] * ex);
            for a in 0..3 {
                jtr[a] += j[a] * r;
                for b in 0..3 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        let mut accepted = false;
        while lambda < 1e16 {
            let mut m = jtj;
            for d in 0..3 {
                m[d][d] += lambda * jtj[d][d].max(1e-300);
            }
            if let Some(delta) = solve3(m, jtr) {
                // beta is kept non-negative so the curve saturates
                let cand = [t[0] + delta[0], t[1] + delta[1], (t[2] + delta[2]).max(0.0)];
                let s = negexp_ssr(&p, cand);
                if s.is_finite() && s <= ssr {
                    let rel = (ssr - s) / ssr.max(1e-300);
                    t = cand;
                    ssr = s;
                    lambda = (lambda / 10.0).max(1e-12);
                    accepted = true;
                    if rel <= NEGEXP_TOLERANCE || ssr <= 1e-28 * scale {
                        converged = true;
                    }
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no damped step lowers the residual: a numerical minimum
            converged = true;
        }
    }
    if !converged {
        return Err(Error::FitFailure {
            reason: format!("no convergence; last parameters C*={}, alpha={}, beta={}, ssr={ssr}", t[0], t[1], t[2]),
            iterations,
        });
    }
    let (mut c_star, mut alpha, beta) = (t[0], t[1], t[2]);
    // A curve flat over the data is the same fit as the constant C* − α·exp(−β·E_max).
    let swing = alpha * ((-beta * lo).exp() - (-beta * hi).exp());
    if swing.abs() <= 1e-9 * max_c.abs().max(min_c.abs()).max(1e-300) {
        c_star -= alpha * (-beta * hi).exp();
        alpha = 0.0;
        flags.push("curve is flat over the fitted epochs".to_string());
    }
    if c_star < max_c {
        flags.push(format!("fitted C* {c_star} is below the largest observed capacity {max_c}"));
    }
    let ys: Vec<f64> = p.iter().map(|q| q.1).collect();
    let pred: Vec<f64> = p.iter().map(|q| c_star - alpha * (-beta * q.0).exp()).collect();
    let (rms, r2) = goodness(&ys, &pred);
    Ok(FitResult {
        params: FitParams::Negexp { c_star, alpha, beta },
        residual_rms: rms,
        r_squared: r2,
        points: points.to_vec(),
        x_range: (lo, hi),
        iterations,
        flags,
    })
}

/// RMS residuals of capacity-vs-size laws fitted to the same points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LawComparison {
    pub linear_rms: f64,
    pub log_rms: f64,
    pub sqrt_rms: f64,
}

impl LawComparison {
    pub fn linear_wins(&self) -> bool {
        self.linear_rms < self.log_rms && self.linear_rms < self.sqrt_rms
    }
}

/// Fits `C = a·N + b`, `C = a·ln N + b` and `C = a·√N + b` to the same points.
pub fn compare_size_laws(points: &[(f64, f64)]) -> Result<LawComparison> {
    if points.iter().any(|p| p.0 <= 0.0) {
        return Err(Error::Domain("sizes must be positive".into()));
    }
    let rms_with = |f: fn(f64) -> f64| -> Result<f64> {
        let tp: Vec<(f64, f64)> = points.iter().map(|p| (f(p.0), p.1)).collect();
        Ok(fit_linear(&tp)?.residual_rms)
    };
    Ok(LawComparison {
        linear_rms: rms_with(|x| x)?,
        log_rms: rms_with(f64::ln)?,
        sqrt_rms: rms_with(f64::sqrt)?,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn exact_line() {
        let pts: Vec<(f64, f64)> = [1.0, 2.0, 5.0, 9.0].iter().map(|&x| (x, 2.0 * x + 5.0)).collect();
        let f = fit_linear(&pts).unwrap();
        let FitParams::Linear { slope, intercept, .. } = f.params else { panic!() };
        assert!((slope - 2.0).abs() < 1e-12 && (intercept - 5.0).abs() < 1e-12);
        assert_eq!(f.r_squared, 1.0);
        assert!((f.eval(0.0) - 5.0).abs() < 1e-12);
        assert!(fit_linear(&pts[..1]).is_err());
        assert!(fit_linear(&[(1.0, 1.0), (1.0, 2.0)]).is_err());
    }

    #[test]
    fn linear_homogeneity() {
        let pts = [(1.0, 3.0), (2.0, 4.5), (4.0, 9.1), (7.0, 14.0)];
        let k = 3.5;
        let scaled: Vec<(f64, f64)> = pts.iter().map(|p| (p.0, p.1 * k)).collect();
        let (FitParams::Linear { slope: a, intercept: b, .. }, FitParams::Linear { slope: c, intercept: d, .. }) =
            (fit_linear(&pts).unwrap().params, fit_linear(&scaled).unwrap().params)
        else {
            panic!()
        };
        assert!(rel(c, a * k) < 1e-12 && rel(d, b * k) < 1e-12);
    }

    #[test]
    fn headline_inversion() {
        let pts = [(1e6, 0.015e6), (2e6, 0.03e6), (4e6, 0.06e6)];
        let f = fit_linear(&pts).unwrap();
        let n = f.inverse(15e9).unwrap();
        assert!(rel(n, 1e12) < 1e-9, "{n}");
        assert!(f.extrapolate(n).beyond_range);
        assert!(!f.extrapolate(3e6).beyond_range);
    }

    #[test]
    fn exact_powerlaw() {
        let pts: Vec<(f64, f64)> = [1e3, 3e3, 1e4, 3e4].iter().map(|&d| (d, 2.0 * f64::powf(d, -0.1))).collect();
        let f = fit_powerlaw(&pts).unwrap();
        let FitParams::Powerlaw { d_c, alpha_d } = f.params else { panic!() };
        assert!(rel(d_c, 2.0) < 1e-9 && rel(alpha_d, -0.1) < 1e-9);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        let k = 7.0;
        let scaled: Vec<(f64, f64)> = pts.iter().map(|p| (p.0, p.1 * k)).collect();
        let FitParams::Powerlaw { d_c: d2, alpha_d: a2 } = fit_powerlaw(&scaled).unwrap().params else { panic!() };
        assert!(rel(d2, 2.0 * k) < 1e-9 && (a2 - alpha_d).abs() < 1e-12);
        assert!(matches!(fit_powerlaw(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)]), Err(Error::Domain(_))));
        let inv = f.inverse(f.eval(5e3)).unwrap();
        assert!(rel(inv, 5e3) < 1e-9);
    }

    fn negexp_points(c: f64, a: f64, b: f64, es: &[f64]) -> Vec<(f64, f64)> {
        es.iter().map(|&e| (e, c - a * (-b * e).exp())).collect()
    }

    #[test]
    fn negexp_recovers_noiseless_parameters() {
        let pts = negexp_points(10000.0, 8000.0, 0.004, &[50.0, 100.0, 200.0, 400.0, 800.0, 1600.0]);
        let f = fit_negexp(&pts).unwrap();
        let FitParams::Negexp { c_star, alpha, beta } = f.params else { panic!() };
        assert!(rel(c_star, 1e4) < 1e-3 && rel(alpha, 8e3) < 1e-3 && rel(beta, 4e-3) < 1e-3);
        assert!(f.iterations <= NEGEXP_MAX_ITERATIONS);
        assert!((f.eval(1e9) - c_star).abs() < 1e-6);
        assert!(matches!(f.inverse(c_star + 1.0), Err(Error::Unreachable { .. })));
        let e = f.inverse(9000.0).unwrap();
        assert!((f.eval(e) - 9000.0).abs() < 1e-6);
    }

    #[test]
    fn negexp_constant_data() {
        let pts: Vec<(f64, f64)> = [10.0, 20.0, 40.0, 80.0, 160.0].iter().map(|&e| (e, 500.0)).collect();
        let f = fit_negexp(&pts).unwrap();
        let FitParams::Negexp { c_star, alpha, beta } = f.params else { panic!() };
        assert!(rel(c_star, 500.0) < 1e-6, "{c_star}");
        assert!((alpha * (-beta * 10.0f64).exp()).abs() < 1e-3, "{alpha} {beta}");
    }

    #[test]
    fn negexp_preconditions_and_flags() {
        let short = negexp_points(10.0, 5.0, 0.1, &[10.0, 12.0, 14.0, 16.0]);
        assert!(matches!(fit_negexp(&short), Err(Error::Range(_))));
        assert!(fit_negexp(&short[..3]).is_err());
        let mut dec = negexp_points(100.0, 50.0, 0.05, &[5.0, 10.0, 20.0, 40.0, 80.0]);
        dec[4].1 = 60.0;
        let f = fit_negexp(&dec).unwrap();
        assert!(f.flags.iter().any(|s| s.contains("decreases")));
    }

    #[test]
    fn fitters_ignore_point_order() {
        let pts = negexp_points(300.0, 250.0, 0.02, &[10.0, 20.0, 40.0, 80.0, 160.0]);
        let mut noisy: Vec<(f64, f64)> = pts.iter().enumerate().map(|(i, p)| (p.0, p.1 * (1.0 + 0.01 * (i as f64 - 2.0)))).collect();
        let a = fit_negexp(&noisy).unwrap();
        noisy.reverse();
        let b = fit_negexp(&noisy).unwrap();
        assert_eq!(a.params, b.params);
        let c = fit_linear(&noisy).unwrap();
        noisy.swap(0, 3);
        assert_eq!(fit_linear(&noisy).unwrap().params, c.params);
    }

    /// Monte-Carlo oracle: multiplicative 5% noise, 100 seeded trials.
    #[test]
    fn powerlaw_noisy_recovery() {
        let ds: Vec<f64> = (0..10).map(|i| 100.0 * 10f64.powf(i as f64 * 4.0 / 9.0)).collect();
        let noise = Normal::new(0.0, 0.05).unwrap();
        let mut errs = Vec::new();
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<(f64, f64)> = ds
                .iter()
                .map(|&d| (d, 2.0 * d.powf(-0.1) * (1.0 + noise.sample(&mut rng))))
                .collect();
            let FitParams::Powerlaw { alpha_d, .. } = fit_powerlaw(&pts).unwrap().params else { panic!() };
            errs.push(rel(alpha_d, -0.1));
        }
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        assert!(mean < 0.10, "{mean}");
    }

    #[test]
    fn size_law_comparison() {
        let pts: Vec<(f64, f64)> = [1e4, 2e4, 4e4, 8e4].iter().map(|&n| (n, 0.01 * n + 3.0)).collect();
        let c = compare_size_laws(&pts).unwrap();
        assert!(c.linear_wins());
        assert!(c.linear_rms < 1e-9);
    }
}
