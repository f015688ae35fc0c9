//! Wire and nonlinear-elastic-unit tension models and their identification.
//!
//! A muscle is a Dyneema wire in series with a rubber elastic unit. The wire
//! alone is linear with a stiffness inversely proportional to its absolute
//! length, `T = a_d * dl / l_abs`. The whole muscle is exponential in its
//! elongation. Two exponential forms are supported:
//!
//! - [`ElasticForm::Exp`]: `T = a_m * exp(b_m * dl)`, nonzero at `dl = 0`.
//! - [`ElasticForm::ExpShifted`]: `T = a_m * (exp(b_m * dl) - 1)`, which passes
//!   through the origin and whose inverse is `log(T / a_m + 1) / b_m`.
//!
//! Negative elongation is slack and carries no tension in either form.

use std::io::{Read, Write};

use nalgebra::{Matrix2, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElasticForm {
    Exp,
    #[default]
    ExpShifted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElasticParams {
    /// Dyneema stiffness per unit length, N.
    pub a_d: f64,
    /// Exponential scale, N.
    pub a_m: f64,
    /// Exponential rate, 1/mm.
    pub b_m: f64,
    /// Absolute muscle length the combined constants were identified at, mm.
    pub l_base: f64,
    #[serde(default)]
    pub form: ElasticForm,
}

impl ElasticParams {
    /// Dyneema wire with a Grommet elastic unit.
    pub const GROMMET: ElasticParams = ElasticParams {
        a_d: 2.8e4,
        a_m: 3.32,
        b_m: 0.14,
        l_base: 480.0,
        form: ElasticForm::ExpShifted,
    };

    /// Dyneema wire with an O-ring elastic unit.
    pub const ORING: ElasticParams = ElasticParams {
        a_d: 2.8e4,
        a_m: 1.34,
        b_m: 0.19,
        l_base: 480.0,
        form: ElasticForm::ExpShifted,
    };

    pub fn with_form(self, form: ElasticForm) -> Self {
        Self { form, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("a_d", self.a_d),
            ("a_m", self.a_m),
            ("b_m", self.b_m),
            ("l_base", self.l_base),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Argument(format!("elastic parameter {name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Linear Dyneema tension for elongation `dl_d` of a wire of length `l_abs`.
pub fn dyneema_tension(dl_d: f64, l_abs: f64, params: &ElasticParams) -> Result<f64> {
    if !(l_abs > 0.0) {
        return Err(Error::Argument(format!("absolute muscle length must be > 0, got {l_abs}")));
    }
    Ok(params.a_d * dl_d.max(0.0) / l_abs)
}

/// Tension of the whole muscle (wire plus elastic unit) at elongation `dl_m`.
pub fn combined_tension(dl_m: f64, params: &ElasticParams) -> f64 {
    if dl_m < 0.0 {
        return 0.0;
    }
    let ElasticParams { a_m, b_m, .. } = *params;
    match params.form {
        ElasticForm::Exp => a_m * (b_m * dl_m).exp(),
        ElasticForm::ExpShifted => a_m * (b_m * dl_m).exp_m1(),
    }
}

/// `d combined_tension / d dl_m`; zero in slack.
pub fn combined_stiffness(dl_m: f64, params: &ElasticParams) -> f64 {
    if dl_m < 0.0 {
        return 0.0;
    }
    params.a_m * params.b_m * (params.b_m * dl_m).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Elongation {
    pub mm: f64,
    /// Set when the tension lies below what the model can produce
    /// (`T < a_m` under [`ElasticForm::Exp`]); `mm` is then 0.
    pub extrapolated: bool,
}

/// Inverse of [`combined_tension`].
pub fn combined_elongation(t: f64, params: &ElasticParams) -> Result<Elongation> {
    if !(t >= 0.0) {
        return Err(Error::NegativeTension { index: 0, value: t });
    }
    let ElasticParams { a_m, b_m, .. } = *params;
    Ok(match params.form {
        ElasticForm::ExpShifted => Elongation {
            mm: (t / a_m).ln_1p() / b_m,
            extrapolated: false,
        },
        ElasticForm::Exp if t < a_m => Elongation {
            mm: 0.0,
            extrapolated: true,
        },
        ElasticForm::Exp => Elongation {
            mm: (t / a_m).ln() / b_m,
            extrapolated: false,
        },
    })
}

/// Elongation of the elastic unit alone: the combined elongation minus the
/// wire's share at `l_base`.
pub fn neu_elongation(t: f64, params: &ElasticParams) -> Result<Elongation> {
    let e = combined_elongation(t, params)?;
    Ok(Elongation {
        mm: e.mm - wire_elongation(t, params),
        ..e
    })
}

/// Dyneema elongation at `l_base` under tension `t`.
pub fn wire_elongation(t: f64, params: &ElasticParams) -> f64 {
    t * params.l_base / params.a_d
}

/// A folded muscle runs out and back through a pulley, so the measurement
/// unit on one strand sees half of the path tension.
pub fn sensor_tension(t_path: f64, folded: bool) -> f64 {
    if folded {
        t_path / 2.0
    } else {
        t_path
    }
}

/// Inverse of [`sensor_tension`].
pub fn path_tension(t_sensor: f64, folded: bool) -> f64 {
    if folded {
        t_sensor * 2.0
    } else {
        t_sensor
    }
}

/// Stored energy `integral_0^dl combined_tension`, N·mm.
pub fn elastic_energy(dl_m: f64, params: &ElasticParams) -> f64 {
    if dl_m <= 0.0 {
        return 0.0;
    }
    let ElasticParams { a_m, b_m, .. } = *params;
    let u = b_m * dl_m;
    match params.form {
        ElasticForm::Exp => a_m / b_m * u.exp_m1(),
        ElasticForm::ExpShifted => {
            // expm1(u) - u loses everything to cancellation for small u.
            let excess = if u < 1e-3 {
                u * u * (0.5 + u * (1.0 / 6.0 + u * (1.0 / 24.0 + u / 120.0)))
            } else {
                u.exp_m1() - u
            };
            a_m / b_m * excess
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogSource {
    #[default]
    ForceGauge,
    Sensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub l_abs_mm: f64,
    pub dl_mm: f64,
    #[serde(rename = "T_N")]
    pub t_n: f64,
}

/// Tension-elongation samples taken at a fixed absolute muscle length.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MeasurementLog {
    pub rows: Vec<LogRow>,
    pub source: LogSource,
}

impl MeasurementLog {
    pub fn new(rows: Vec<LogRow>, source: LogSource) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            if !(r.t_n >= 0.0) {
                return Err(Error::NegativeTension { index: i, value: r.t_n });
            }
            if !r.dl_mm.is_finite() || !r.l_abs_mm.is_finite() {
                return Err(Error::Argument(format!("row {i}: non-finite value")));
            }
        }
        Ok(Self { rows, source })
    }

    /// Reads `l_abs_mm,dl_mm,T_N` CSV.
    pub fn read_csv(reader: impl Read, source: LogSource) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let rows = rdr.deserialize().collect::<std::result::Result<Vec<LogRow>, _>>()?;
        Self::new(rows, source)
    }

    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One line of an identification report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub param: String,
    pub value: f64,
    pub stderr: f64,
}

pub fn write_report(rows: &[ReportRow], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DyneemaFit {
    pub a_d: f64,
    pub stderr: f64,
    pub rmse: f64,
}

impl DyneemaFit {
    pub fn report(&self) -> Vec<ReportRow> {
        vec![
            ReportRow { param: "a_d".into(), value: self.a_d, stderr: self.stderr },
            ReportRow { param: "rmse_N".into(), value: self.rmse, stderr: 0.0 },
        ]
    }
}

/// Least squares through the origin on `T = a_d * (dl / l_abs)`.
pub fn identify_dyneema(log: &MeasurementLog) -> Result<DyneemaFit> {
    let n = log.rows.len();
    if n < 2 {
        return Err(Error::SingularFit(format!("need at least 2 rows, got {n}")));
    }
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for r in &log.rows {
        if !(r.l_abs_mm > 0.0) {
            return Err(Error::Argument(format!("absolute length must be > 0, got {}", r.l_abs_mm)));
        }
        let x = r.dl_mm / r.l_abs_mm;
        sxx += x * x;
        sxy += x * r.t_n;
    }
    if !(sxx > f64::MIN_POSITIVE) {
        return Err(Error::SingularFit("all elongations are zero".into()));
    }
    let a_d = sxy / sxx;
    let rss: f64 = log
        .rows
        .iter()
        .map(|r| (r.t_n - a_d * r.dl_mm / r.l_abs_mm).powi(2))
        .sum();
    Ok(DyneemaFit {
        a_d,
        stderr: (rss / (n - 1) as f64 / sxx).sqrt(),
        rmse: (rss / n as f64).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombinedFit {
    pub a_m: f64,
    pub b_m: f64,
    pub stderr_a: f64,
    pub stderr_b: f64,
    pub rmse: f64,
    pub iterations: usize,
}

impl CombinedFit {
    pub fn report(&self) -> Vec<ReportRow> {
        vec![
            ReportRow { param: "a_m".into(), value: self.a_m, stderr: self.stderr_a },
            ReportRow { param: "b_m".into(), value: self.b_m, stderr: self.stderr_b },
            ReportRow { param: "rmse_N".into(), value: self.rmse, stderr: 0.0 },
        ]
    }
}

const GN_MAX_ITERS: usize = 100;
const GN_STEP_TOL: f64 = 1e-10;

fn model_and_grad(dl: f64, a: f64, b: f64, form: ElasticForm) -> (f64, f64, f64) {
    let e = (b * dl).exp();
    match form {
        ElasticForm::Exp => (a * e, e, a * dl * e),
        ElasticForm::ExpShifted => ((b * dl).exp_m1() * a, (b * dl).exp_m1(), a * dl * e),
    }
}

fn sum_sq(log: &MeasurementLog, a: f64, b: f64, form: ElasticForm) -> f64 {
    log.rows
        .iter()
        .map(|r| (r.t_n - model_and_grad(r.dl_mm, a, b, form).0).powi(2))
        .sum()
}

/// Fits `(a_m, b_m)` by Gauss-Newton on the tension residuals, started from a
/// log-linear regression of `ln T` on `dl`. Rows with `T <= 0` are left out of
/// the starting regression.
pub fn identify_combined(log: &MeasurementLog, form: ElasticForm) -> Result<CombinedFit> {
    let n = log.rows.len();
    if n < 3 {
        return Err(Error::SingularFit(format!("need at least 3 rows, got {n}")));
    }
    let (lo, hi) = log
        .rows
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.dl_mm), hi.max(r.dl_mm)));
    if !(hi - lo > 1e-12) {
        return Err(Error::SingularFit("elongations have no spread".into()));
    }

    let pos: Vec<&LogRow> = log.rows.iter().filter(|r| r.t_n > 0.0).collect();
    if pos.len() < 2 {
        return Err(Error::SingularFit("need at least 2 rows with positive tension".into()));
    }
    let m = pos.len() as f64;
    let mx = pos.iter().map(|r| r.dl_mm).sum::<f64>() / m;
    let my = pos.iter().map(|r| r.t_n.ln()).sum::<f64>() / m;
    let sxx: f64 = pos.iter().map(|r| (r.dl_mm - mx).powi(2)).sum();
    let sxy: f64 = pos.iter().map(|r| (r.dl_mm - mx) * (r.t_n.ln() - my)).sum();
    if !(sxx > 1e-300) {
        return Err(Error::SingularFit("positive-tension rows have no elongation spread".into()));
    }
    let mut b = (sxy / sxx).max(1e-6);
    let mut a = (my - b * mx).exp();

    let mut cost = sum_sq(log, a, b, form);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < GN_MAX_ITERS {
        iterations += 1;
        let mut jtj = Matrix2::zeros();
        let mut jtr = Vector2::zeros();
        for r in &log.rows {
            let (f, da, db) = model_and_grad(r.dl_mm, a, b, form);
            let g = Vector2::new(da, db);
            jtj += g * g.transpose();
            jtr += g * (r.t_n - f);
        }
        let step = jtj
            .cholesky()
            .map(|c| c.solve(&jtr))
            .ok_or_else(|| Error::SingularFit("normal equations are singular".into()))?;

        // Halve until the cost does not increase and the parameters stay positive.
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let na = a + scale * step[0];
            let nb = b + scale * step[1];
            if na > 0.0 && nb > 0.0 {
                let c = sum_sq(log, na, nb, form);
                if c <= cost {
                    accepted = Some((na, nb, c));
                    break;
                }
            }
            scale *= 0.5;
        }
        let Some((na, nb, c)) = accepted else {
            converged = true;
            break;
        };
        let rel = ((na - a) / a).abs().max(((nb - b) / b).abs());
        a = na;
        b = nb;
        cost = c;
        if rel < GN_STEP_TOL {
            converged = true;
            break;
        }
    }
    let rmse = (cost / n as f64).sqrt();
    if !converged {
        return Err(Error::NoConvergence { iterations, residual: rmse });
    }

    let mut jtj = Matrix2::zeros();
    for r in &log.rows {
        let (_, da, db) = model_and_grad(r.dl_mm, a, b, form);
        let g = Vector2::new(da, db);
        jtj += g * g.transpose();
    }
    let s2 = cost / (n as f64 - 2.0).max(1.0);
    let (stderr_a, stderr_b) = jtj
        .try_inverse()
        .map(|inv| ((inv[(0, 0)] * s2).sqrt(), (inv[(1, 1)] * s2).sqrt()))
        .unwrap_or((f64::NAN, f64::NAN));

    Ok(CombinedFit { a_m: a, b_m: b, stderr_a, stderr_b, rmse, iterations })
}

/// What a synthetic log is generated from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LogModel {
    /// Wire only, at the given absolute length.
    Dyneema { l_abs_mm: f64 },
    /// Whole muscle; rows record `l_base` as the absolute length.
    Combined,
}

/// Evenly spaced elongations over `range`, tensions from the model plus
/// additive Gaussian noise, clamped at zero.
pub fn synthetic_log(
    params: &ElasticParams,
    model: LogModel,
    range: (f64, f64),
    samples: usize,
    noise_sd: f64,
    seed: u64,
) -> Result<MeasurementLog> {
    if samples < 2 {
        return Err(Error::Argument("a synthetic log needs at least 2 samples".into()));
    }
    let noise = Normal::new(0.0, noise_sd.max(0.0))
        .map_err(|e| Error::Argument(format!("noise sd: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..samples)
        .map(|i| {
            let dl = range.0 + (range.1 - range.0) * i as f64 / (samples - 1) as f64;
            let (l_abs, t) = match model {
                LogModel::Dyneema { l_abs_mm } => (l_abs_mm, dyneema_tension(dl, l_abs_mm, params)?),
                LogModel::Combined => (params.l_base, combined_tension(dl, params)),
            };
            let t = if noise_sd > 0.0 { t + noise.sample(&mut rng) } else { t };
            Ok(LogRow { l_abs_mm: l_abs, dl_mm: dl, t_n: t.max(0.0) })
        })
        .collect::<Result<Vec<_>>>()?;
    MeasurementLog::new(rows, LogSource::ForceGauge)
}

#[cfg(test)]
mod tests {
    use super::*;

    const G: ElasticParams = ElasticParams::GROMMET;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn dyneema_values() {
        assert_eq!(dyneema_tension(0.0, 480.0, &G).unwrap(), 0.0);
        // 2.8e4 * 1 / 480
        assert!(close(dyneema_tension(1.0, 480.0, &G).unwrap(), 58.333_333_333_333_336, 1e-9));
        assert_eq!(dyneema_tension(-1.0, 480.0, &G).unwrap(), 0.0);
        assert!(dyneema_tension(1.0, 0.0, &G).is_err());
        assert!(dyneema_tension(1.0, -3.0, &G).is_err());
    }

    #[test]
    fn combined_values() {
        assert_eq!(combined_tension(0.0, &G), 0.0);
        let exp = G.with_form(ElasticForm::Exp);
        // 3.32 * e^1.4
        assert!(close(combined_tension(10.0, &exp), 13.463_263_889_924_319, 1e-9));
        assert_eq!(combined_tension(-5.0, &G), 0.0);
        assert_eq!(combined_tension(-5.0, &exp), 0.0);
    }

    #[test]
    fn elongation_values() {
        assert_eq!(combined_elongation(0.0, &G).unwrap().mm, 0.0);
        // ln(13/3.32 + 1) / 0.14
        let e = combined_elongation(13.0, &G).unwrap();
        assert!(close(e.mm, 11.374_475_475_768_312, 1e-9), "{}", e.mm);
        assert!(combined_elongation(-1.0, &G).is_err());

        let exp = G.with_form(ElasticForm::Exp);
        let e = combined_elongation(1.0, &exp).unwrap();
        assert_eq!(e.mm, 0.0);
        assert!(e.extrapolated);
    }

    #[test]
    fn neu_values() {
        assert_eq!(neu_elongation(0.0, &G).unwrap().mm, 0.0);
        // 11.2259... - 13 * 480 / 2.8e4
        let e = neu_elongation(13.0, &G).unwrap().mm;
        assert!(close(e, 11.374_475_475_768_312 - 0.222_857_142_857_142_86, 1e-9), "{e}");
        assert!(close(e, 11.151_618_332_911_17, 1e-9));
    }

    #[test]
    fn sensor_halving() {
        assert_eq!(sensor_tension(100.0, true), 50.0);
        assert_eq!(sensor_tension(100.0, false), 100.0);
        assert_eq!(sensor_tension(0.0, true), 0.0);
        assert_eq!(path_tension(sensor_tension(37.0, true), true), 37.0);
    }

    #[test]
    fn energy_slack_is_zero() {
        for form in [ElasticForm::Exp, ElasticForm::ExpShifted] {
            let p = G.with_form(form);
            assert_eq!(elastic_energy(0.0, &p), 0.0);
            assert_eq!(elastic_energy(-3.0, &p), 0.0);
        }
    }

    #[test]
    fn energy_gradient_is_tension() {
        let h = 1e-5;
        for form in [ElasticForm::Exp, ElasticForm::ExpShifted] {
            let p = G.with_form(form);
            for i in 1..60 {
                let x = i as f64 * 0.5;
                let fd = (elastic_energy(x + h, &p) - elastic_energy(x - h, &p)) / (2.0 * h);
                let t = combined_tension(x, &p);
                assert!((fd - t).abs() / (1.0 + t.abs()) < 1e-8, "{form:?} x={x}: {fd} vs {t}");
            }
        }
    }

    #[test]
    fn energy_small_argument_branch_is_continuous() {
        let x = 1e-3 / G.b_m;
        let below = elastic_energy(x * (1.0 - 1e-9), &G);
        let above = elastic_energy(x * (1.0 + 1e-9), &G);
        assert!((below - above).abs() / above < 1e-6);
    }

    #[test]
    fn energy_is_convex_and_nonnegative() {
        for form in [ElasticForm::Exp, ElasticForm::ExpShifted] {
            let p = G.with_form(form);
            let xs: Vec<f64> = (0..=200).map(|i| i as f64 * 0.25).collect();
            for w in xs.windows(3) {
                let e: Vec<f64> = w.iter().map(|&x| elastic_energy(x, &p)).collect();
                assert!(e.iter().all(|&v| v >= 0.0));
                assert!(e[0] + e[2] - 2.0 * e[1] >= -1e-9);
            }
        }
    }

    #[test]
    fn dyneema_identification_exact() {
        let log = synthetic_log(&G, LogModel::Dyneema { l_abs_mm: 480.0 }, (0.0, 20.0), 50, 0.0, 0).unwrap();
        let fit = identify_dyneema(&log).unwrap();
        assert!(((fit.a_d - 2.8e4) / 2.8e4).abs() < 1e-9);
    }

    #[test]
    fn dyneema_identification_degenerate() {
        let rows = vec![LogRow { l_abs_mm: 480.0, dl_mm: 0.0, t_n: 1.0 }; 4];
        let log = MeasurementLog::new(rows, LogSource::ForceGauge).unwrap();
        assert!(matches!(identify_dyneema(&log), Err(Error::SingularFit(_))));
    }

    #[test]
    fn combined_identification_exact() {
        for (a, b) in [(1.34, 0.19), (3.32, 0.14)] {
            for form in [ElasticForm::Exp, ElasticForm::ExpShifted] {
                let p = ElasticParams { a_m: a, b_m: b, ..G }.with_form(form);
                let log = synthetic_log(&p, LogModel::Combined, (0.0, 25.0), 60, 0.0, 0).unwrap();
                let fit = identify_combined(&log, form).unwrap();
                assert!(((fit.a_m - a) / a).abs() < 1e-6, "{form:?} {fit:?}");
                assert!(((fit.b_m - b) / b).abs() < 1e-6, "{form:?} {fit:?}");
            }
        }
    }

    #[test]
    fn combined_identification_degenerate() {
        let rows = vec![LogRow { l_abs_mm: 480.0, dl_mm: 3.0, t_n: 5.0 }; 5];
        let log = MeasurementLog::new(rows, LogSource::ForceGauge).unwrap();
        assert!(identify_combined(&log, ElasticForm::ExpShifted).is_err());
        let log = MeasurementLog::new(
            vec![LogRow { l_abs_mm: 480.0, dl_mm: 3.0, t_n: 5.0 }; 2],
            LogSource::ForceGauge,
        )
        .unwrap();
        assert!(identify_combined(&log, ElasticForm::Exp).is_err());
    }

    #[test]
    fn scale_consistency() {
        let c = 2.5;
        let p = G.with_form(ElasticForm::Exp);
        let log = synthetic_log(&p, LogModel::Combined, (0.0, 25.0), 40, 0.0, 0).unwrap();
        let mut scaled = log.clone();
        for r in &mut scaled.rows {
            r.t_n *= c;
        }
        let f1 = identify_combined(&log, ElasticForm::Exp).unwrap();
        let f2 = identify_combined(&scaled, ElasticForm::Exp).unwrap();
        assert!((f2.a_m / f1.a_m - c).abs() < 1e-9);
        assert!((f2.b_m - f1.b_m).abs() < 1e-12);

        let dlog = synthetic_log(&G, LogModel::Dyneema { l_abs_mm: 300.0 }, (0.0, 10.0), 30, 0.0, 0).unwrap();
        let mut dscaled = dlog.clone();
        for r in &mut dscaled.rows {
            r.t_n *= c;
        }
        let d1 = identify_dyneema(&dlog).unwrap().a_d;
        let d2 = identify_dyneema(&dscaled).unwrap().a_d;
        assert!((d2 / d1 - c).abs() < 1e-12);
    }

    #[test]
    fn log_csv_header() {
        let log = synthetic_log(&G, LogModel::Combined, (0.0, 5.0), 3, 0.0, 0).unwrap();
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("l_abs_mm,dl_mm,T_N\n"), "{text}");
        let back = MeasurementLog::read_csv(text.as_bytes(), LogSource::ForceGauge).unwrap();
        assert_eq!(back, log);
    }

    #[test]
    fn negative_tension_rows_rejected() {
        let text = "l_abs_mm,dl_mm,T_N\n480,1,-2\n";
        assert!(matches!(
            MeasurementLog::read_csv(text.as_bytes(), LogSource::Sensor),
            Err(Error::NegativeTension { index: 0, .. })
        ));
    }

    #[test]
    fn report_csv_header() {
        let mut buf = Vec::new();
        write_report(&DyneemaFit { a_d: 1.0, stderr: 0.1, rmse: 0.0 }.report(), &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("param,value,stderr\n"));
    }
}
