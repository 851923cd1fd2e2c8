//! Scoring rules for Gaussian forecasts: CRPS (closed form and quadrature),
//! Winkler, Pinball and central prediction-interval bounds.

use serde::{Deserialize, Serialize};

use crate::numerics::{normal_cdf, normal_inv_cdf, normal_pdf};
use crate::{Error, Result};

/// Significance level used by the Winkler score.
pub const WINKLER_ALPHA: f64 = 0.1;
/// Constant charged inside the band by the literal Winkler form.
pub const WINKLER_DELTA_PARAM: f64 = 1.0;
/// Prediction intervals reported by default, in percent.
pub const DEFAULT_PIS: [f64; 3] = [30.0, 60.0, 90.0];

const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;

/// Predictive distribution `N(mu, delta^2)`.
///
/// `delta` is the standard deviation: it is the quantity that standardizes
/// `(y - mu)` in the CRPS closed form, and every other score reads it the same
/// way. [`GaussianForecast::std_dev`] is the one place that interpretation lives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianForecast {
    pub mu: f64,
    pub delta: f64,
}

impl GaussianForecast {
    pub fn new(mu: f64, delta: f64) -> Result<Self> {
        let f = GaussianForecast { mu, delta };
        f.check()?;
        Ok(f)
    }

    pub fn check(&self) -> Result<()> {
        if !self.mu.is_finite() || !self.delta.is_finite() {
            return Err(Error::Domain(format!(
                "forecast must be finite, got mu={} delta={}",
                self.mu, self.delta
            )));
        }
        if self.delta <= 0.0 {
            return Err(Error::Domain(format!("delta must be positive, got {}", self.delta)));
        }
        Ok(())
    }

    pub fn std_dev(&self) -> f64 {
        self.delta
    }

    pub fn quantile(&self, q: f64) -> Result<f64> {
        Ok(self.mu + self.std_dev() * normal_inv_cdf(q)?)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        normal_cdf((x - self.mu) / self.std_dev())
    }
}

/// Central prediction interval at `p` percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiBand {
    pub p: f64,
    pub lower: f64,
    pub upper: f64,
}

impl PiBand {
    pub fn contains(&self, y: f64) -> bool {
        self.lower <= y && y <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Closed-form CRPS of a Gaussian forecast.
pub fn crps_gaussian(f: GaussianForecast, y: f64) -> Result<f64> {
    f.check()?;
    let d = f.std_dev();
    let z = (y - f.mu) / d;
    Ok(d * (z * (2.0 * normal_cdf(z) - 1.0) + 2.0 * normal_pdf(z) - FRAC_1_SQRT_PI))
}

/// CRPS by adaptive quadrature of its integral definition.
///
/// Integrates `F(x)^2` below `y` and `(1 - F(x))^2` above it over
/// `[mu - 10 delta, mu + 10 delta]`, stretched to include `y` when it lies
/// outside. The truncated tails contribute less than `1e-20`.
pub fn crps_oracle(f: GaussianForecast, y: f64) -> Result<f64> {
    f.check()?;
    let lo = (f.mu - 10.0 * f.std_dev()).min(y);
    let hi = (f.mu + 10.0 * f.std_dev()).max(y);
    let below = adaptive_simpson(&|x| f.cdf(x).powi(2), lo, y, 1e-12);
    let above = adaptive_simpson(&|x| (1.0 - f.cdf(x)).powi(2), y, hi, 1e-12);
    Ok(below + above)
}

fn adaptive_simpson(g: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let (fa, fm, fb) = (g(a), g(0.5 * (a + b)), g(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(g, a, b, fa, fm, fb, whole, tol, 60)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    g: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (g(lm), g(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        return left + right + diff / 15.0;
    }
    simpson_step(g, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(g, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Quantile levels of the central `p` percent interval.
pub fn pi_quantiles(p: f64) -> Result<[f64; 2]> {
    if !(p > 0.0 && p < 100.0) {
        return Err(Error::Domain(format!("PI percentage must lie in (0, 100), got {p}")));
    }
    Ok([(1.0 - p / 100.0) / 2.0, (1.0 + p / 100.0) / 2.0])
}

pub fn pi_bounds(f: GaussianForecast, p: f64) -> Result<PiBand> {
    f.check()?;
    let [ql, qu] = pi_quantiles(p)?;
    Ok(PiBand {
        p,
        lower: f.quantile(ql)?,
        upper: f.quantile(qu)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WinklerMode {
    /// Constant `delta_param` inside the band and as the base of every penalty.
    #[default]
    Paper,
    /// Interval width in place of `delta_param`, with `alpha = 1 - p/100`.
    Conventional,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WinklerConfig {
    pub alpha: f64,
    pub delta_param: f64,
    pub mode: WinklerMode,
}

impl Default for WinklerConfig {
    fn default() -> Self {
        WinklerConfig {
            alpha: WINKLER_ALPHA,
            delta_param: WINKLER_DELTA_PARAM,
            mode: WinklerMode::Paper,
        }
    }
}

/// Winkler score of `y` against an already computed band.
pub fn winkler_band(band: &PiBand, y: f64, cfg: &WinklerConfig) -> f64 {
    let (alpha, base) = match cfg.mode {
        WinklerMode::Paper => (cfg.alpha, cfg.delta_param),
        WinklerMode::Conventional => (1.0 - band.p / 100.0, band.width()),
    };
    if y < band.lower {
        2.0 * (band.lower - y) / alpha + base
    } else if y > band.upper {
        2.0 * (y - band.upper) / alpha + base
    } else {
        base
    }
}

/// Winkler score with the literal defaults (`alpha = 0.1`, `delta_param = 1`).
pub fn winkler(f: GaussianForecast, y: f64, p: f64) -> Result<f64> {
    winkler_with(f, y, p, &WinklerConfig::default())
}

pub fn winkler_with(f: GaussianForecast, y: f64, p: f64, cfg: &WinklerConfig) -> Result<f64> {
    Ok(winkler_band(&pi_bounds(f, p)?, y, cfg))
}

/// Pinball loss of quantile estimate `y_q` at level `q`.
pub fn pinball_loss(q: f64, y_q: f64, y: f64) -> f64 {
    if y_q < y {
        (y - y_q) * q
    } else {
        (y_q - y) * (1.0 - q)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PinballScore {
    pub per_quantile: Vec<(f64, f64)>,
    pub average: f64,
}

pub fn pinball(f: GaussianForecast, y: f64, quantiles: &[f64]) -> Result<PinballScore> {
    f.check()?;
    if quantiles.is_empty() {
        return Err(Error::Domain("pinball needs at least one quantile".into()));
    }
    let mut per_quantile = Vec::with_capacity(quantiles.len());
    for &q in quantiles {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::Domain(format!("quantile level must lie in (0, 1), got {q}")));
        }
        per_quantile.push((q, pinball_loss(q, f.quantile(q)?, y)));
    }
    let average = per_quantile.iter().map(|(_, v)| v).sum::<f64>() / quantiles.len() as f64;
    Ok(PinballScore { per_quantile, average })
}

/// Quantile grid `{0.05, 0.10, ..., 0.95}` for the aggregate Pinball score.
pub fn pinball_grid() -> Vec<f64> {
    (1..=19).map(|k| k as f64 * 0.05).collect()
}

/// Average Pinball over the two quantiles bounding the `p` percent interval.
pub fn pinball_pi(f: GaussianForecast, y: f64, p: f64) -> Result<f64> {
    Ok(pinball(f, y, &pi_quantiles(p)?)?.average)
}
