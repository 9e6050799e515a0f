use crate::error::{Error, Result};

use super::DiagnosticsRecord;

/// Least number of samples accepted by [`decay_fit`].
pub const MIN_FIT_SAMPLES: usize = 8;
/// Sup norms below this are round-off, not signal.
pub const ROUNDOFF_FLOOR: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecayFit {
    /// Least-squares slope of `log sup|v|` against `log t`.
    pub slope: f64,
    pub intercept: f64,
    /// `C` in `sup|v| ~ C / (t + m t^{3/2})`, fitted in the log (geometric mean).
    pub c_fit: f64,
    /// `||sup - C g|| / ||sup||` over the window, `g = 1/(t + m t^{3/2})`.
    pub residual: f64,
    /// `max sup / (C g)` over the window.
    pub max_ratio: f64,
    pub samples: usize,
}

/// `1 / (t + m t^{3/2})`.
pub fn decay_model(t: f64, m: f64) -> f64 {
    1.0 / (t + m * t.powf(1.5))
}

/// Fits the decay of `sup|v_i|` over the records with `t` in `window`.
pub fn decay_fit(
    records: &[DiagnosticsRecord],
    i: usize,
    window: (f64, f64),
    m: f64,
) -> Result<DecayFit> {
    let slack = 1e-9 * window.1.abs().max(1.0);
    let mut pts = Vec::new();
    for r in records {
        if r.t < window.0 - slack || r.t > window.1 + slack {
            continue;
        }
        let sup = r
            .species
            .get(i)
            .ok_or_else(|| Error::Fit(format!("species {i} missing at t = {}", r.t)))?
            .sup;
        if !(sup >= ROUNDOFF_FLOOR) {
            return Err(Error::Fit(format!(
                "sup norm {sup:e} at t = {} is at round-off level",
                r.t
            )));
        }
        if r.t <= 0.0 {
            return Err(Error::Fit(format!("non-positive time {}", r.t)));
        }
        pts.push((r.t, sup));
    }
    if pts.len() < MIN_FIT_SAMPLES {
        return Err(Error::Fit(format!(
            "{} samples in [{}, {}], need at least {MIN_FIT_SAMPLES}",
            pts.len(),
            window.0,
            window.1
        )));
    }
    let n = pts.len() as f64;
    let xs: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("window contains a single time".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;

    let log_c = pts
        .iter()
        .map(|&(t, s)| s.ln() - decay_model(t, m).ln())
        .sum::<f64>()
        / n;
    let c_fit = log_c.exp();
    let mut num = 0.0;
    let mut den = 0.0;
    let mut max_ratio = 0.0f64;
    for &(t, s) in &pts {
        let model = c_fit * decay_model(t, m);
        num += (s - model).powi(2);
        den += s * s;
        max_ratio = max_ratio.max(s / model);
    }
    Ok(DecayFit {
        slope,
        intercept,
        c_fit,
        residual: (num / den).sqrt(),
        max_ratio,
        samples: pts.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InequalityReport {
    /// Smallest `sqrt(E(t0)) + int ||F|| + q - sqrt(E(t))` seen.
    pub min_slack: f64,
    pub t_at_min: f64,
    pub species_at_min: usize,
    /// Largest quadrature error bound used.
    pub max_quadrature_bound: f64,
}

/// Checks `E(t)^{1/2} <= E(t0)^{1/2} + int_{t0}^t ||F|| + q(t)` along the
/// records, with `q` a trapezoid error bound from second differences of the
/// integrand. `source_norms[k][i]` is `||F_i||` at `records[k].t`.
pub fn energy_inequality_check(
    records: &[DiagnosticsRecord],
    source_norms: &[Vec<f64>],
) -> Result<InequalityReport> {
    if records.len() != source_norms.len() {
        return Err(Error::InvalidParameter(format!(
            "{} records but {} source samples",
            records.len(),
            source_norms.len()
        )));
    }
    let first = records
        .first()
        .ok_or_else(|| Error::InvalidParameter("no records".into()))?;
    let species = first.species.len();
    let mut report = InequalityReport {
        min_slack: f64::INFINITY,
        t_at_min: first.t,
        species_at_min: 0,
        max_quadrature_bound: 0.0,
    };
    for i in 0..species {
        let f: Vec<f64> = source_norms
            .iter()
            .map(|s| {
                s.get(i)
                    .copied()
                    .ok_or_else(|| Error::InvalidParameter("source sample too short".into()))
            })
            .collect::<Result<_>>()?;
        let e0 = first.species[i].energy.sqrt();
        let mut integral = 0.0;
        let mut q = 0.0;
        for k in 0..records.len() {
            if k > 0 {
                let h = records[k].t - records[k - 1].t;
                integral += 0.5 * h * (f[k] + f[k - 1]);
                // |error| <= h^3/12 max|f''| on the interval, f'' from the
                // nearest available second difference.
                if records.len() >= 3 {
                    let c = k.clamp(1, records.len() - 2);
                    let d2 = (f[c + 1] - 2.0 * f[c] + f[c - 1]).abs();
                    q += h * d2 / 12.0;
                }
            }
            let slack = e0 + integral + q - records[k].species[i].energy.sqrt();
            report.max_quadrature_bound = report.max_quadrature_bound.max(q);
            if slack < report.min_slack {
                report.min_slack = slack;
                report.t_at_min = records[k].t;
                report.species_at_min = i;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::SpeciesRecord;

    fn rec(t: f64, sup: f64, energy: f64) -> DiagnosticsRecord {
        DiagnosticsRecord {
            t,
            species: vec![SpeciesRecord {
                energy,
                l2: 0.0,
                sup,
                support_radius: 0.0,
            }],
            source_l2: None,
        }
    }

    #[test]
    fn exact_inverse_t() {
        let rs: Vec<_> = (0..20)
            .map(|k| 5.0 + k as f64)
            .map(|t| rec(t, 7.0 / t, 1.0))
            .collect();
        let f = decay_fit(&rs, 0, (5.0, 30.0), 0.0).unwrap();
        assert!((f.slope + 1.0).abs() < 1e-12);
        assert!((f.c_fit - 7.0).abs() < 1e-12);
        assert!(f.residual < 1e-12);
        assert!((f.max_ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_massive_model() {
        let m = 0.5;
        let rs: Vec<_> = (0..30)
            .map(|k| 5.0 + k as f64)
            .map(|t| rec(t, 3.0 * decay_model(t, m), 1.0))
            .collect();
        let f = decay_fit(&rs, 0, (5.0, 30.0), m).unwrap();
        assert!((f.c_fit - 3.0).abs() < 1e-12);
        assert!(f.residual < 1e-12);
    }

    #[test]
    fn fit_rejections() {
        let few: Vec<_> = (0..5).map(|k| rec(5.0 + k as f64, 1.0, 1.0)).collect();
        assert!(decay_fit(&few, 0, (5.0, 30.0), 0.0).is_err());
        let tiny: Vec<_> = (0..10).map(|k| rec(5.0 + k as f64, 1e-15, 1.0)).collect();
        assert!(matches!(
            decay_fit(&tiny, 0, (5.0, 30.0), 0.0),
            Err(Error::Fit(_))
        ));
    }

    #[test]
    fn conserved_energy_zero_source() {
        let rs: Vec<_> = (0..10)
            .map(|k| rec(2.0 + 0.5 * k as f64, 1.0, 4.0))
            .collect();
        let src = vec![vec![0.0]; 10];
        let r = energy_inequality_check(&rs, &src).unwrap();
        assert!(r.min_slack.abs() < 1e-9);
    }

    #[test]
    fn negated_source_flagged() {
        // sqrt(E) grows exactly as int ||F|| with ||F|| = 1.
        let rs: Vec<_> = (0..10)
            .map(|k| {
                let t = 2.0 + 0.5 * k as f64;
                rec(t, 1.0, (1.0 + (t - 2.0)).powi(2))
            })
            .collect();
        let ok = energy_inequality_check(&rs, &vec![vec![1.0]; 10]).unwrap();
        assert!(ok.min_slack > -1e-12);
        let bad = energy_inequality_check(&rs, &vec![vec![-1.0]; 10]).unwrap();
        assert!(bad.min_slack < -1.0);
    }
}
