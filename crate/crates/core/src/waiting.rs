//! Per-state holding-time laws: density `f`, survival `Λ`, hazard `λ`, and the
//! definite integrals the quadrature rules are built from.

use rand::Rng;
use rand_distr::{Distribution, Gamma as GammaDist};
use serde::{Deserialize, Serialize};

use crate::special::{gamma, gamma_p, gamma_q, ln_gamma};
use crate::{Error, Real, Result};

/// Holding-time distribution of a single state.
///
/// JSON form: `{"family":"gamma","shape":2.0,"rate":1.0}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum WaitingTime<T> {
    Exponential { rate: T },
    Gamma { shape: T, rate: T },
    Weibull { shape: T, scale: T },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    Density,
    Survival,
    Hazard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntegralKind {
    Density,
    Survival,
}

impl<T: Real> WaitingTime<T> {
    pub fn exponential(rate: T) -> Result<Self> {
        let d = WaitingTime::Exponential { rate };
        d.validate()?;
        Ok(d)
    }

    pub fn gamma(shape: T, rate: T) -> Result<Self> {
        let d = WaitingTime::Gamma { shape, rate };
        d.validate()?;
        Ok(d)
    }

    pub fn weibull(shape: T, scale: T) -> Result<Self> {
        let d = WaitingTime::Weibull { shape, scale };
        d.validate()?;
        Ok(d)
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            WaitingTime::Exponential { .. } => "exponential",
            WaitingTime::Gamma { .. } => "gamma",
            WaitingTime::Weibull { .. } => "weibull",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: T| {
            if v.is_nan() {
                Err(Error::validation(format!("{} parameter {name} is NaN", self.family_name())))
            } else if !(v > T::zero()) || v.is_infinite() {
                Err(Error::validation(format!(
                    "{} parameter {name} must be finite and > 0, got {v}",
                    self.family_name()
                )))
            } else {
                Ok(())
            }
        };
        match *self {
            WaitingTime::Exponential { rate } => check("rate", rate),
            WaitingTime::Gamma { shape, rate } => check("shape", shape).and(check("rate", rate)),
            WaitingTime::Weibull { shape, scale } => check("shape", shape).and(check("scale", scale)),
        }
    }

    /// Checked point evaluation of density, survival or hazard.
    pub fn evaluate(&self, tau: T, kind: Quantity) -> Result<T> {
        self.validate()?;
        if tau.is_nan() || tau < T::zero() {
            return Err(Error::domain(format!("waiting time must be >= 0, got {tau}")));
        }
        Ok(match kind {
            Quantity::Density => self.density(tau),
            Quantity::Survival => self.survival(tau),
            Quantity::Hazard => self.hazard(tau),
        })
    }

    pub fn density(&self, tau: T) -> T {
        if tau < T::zero() {
            return T::zero();
        }
        match *self {
            WaitingTime::Exponential { rate } => rate * (-rate * tau).exp(),
            WaitingTime::Gamma { shape, rate } => {
                if tau == T::zero() {
                    return if shape < T::one() {
                        T::infinity()
                    } else if shape == T::one() {
                        rate
                    } else {
                        T::zero()
                    };
                }
                self.log_density(tau).exp()
            }
            WaitingTime::Weibull { shape, scale } => {
                if tau == T::zero() {
                    return if shape < T::one() {
                        T::infinity()
                    } else if shape == T::one() {
                        T::one() / scale
                    } else {
                        T::zero()
                    };
                }
                let z = tau / scale;
                shape / scale * z.powf(shape - T::one()) * (-z.powf(shape)).exp()
            }
        }
    }

    /// `ln f(τ)`; `-inf` where the density vanishes.
    pub fn log_density(&self, tau: T) -> T {
        if tau < T::zero() {
            return T::neg_infinity();
        }
        match *self {
            WaitingTime::Exponential { rate } => rate.ln() - rate * tau,
            WaitingTime::Gamma { shape, rate } => {
                if tau == T::zero() {
                    return self.density(tau).ln();
                }
                shape * rate.ln() + (shape - T::one()) * tau.ln() - rate * tau - ln_gamma(shape)
            }
            WaitingTime::Weibull { shape, scale } => {
                if tau == T::zero() {
                    return self.density(tau).ln();
                }
                let z = tau / scale;
                (shape / scale).ln() + (shape - T::one()) * z.ln() - z.powf(shape)
            }
        }
    }

    /// `Λ(τ) = P(holding time > τ)`.
    pub fn survival(&self, tau: T) -> T {
        if tau <= T::zero() {
            return T::one();
        }
        match *self {
            WaitingTime::Exponential { rate } => (-rate * tau).exp(),
            WaitingTime::Gamma { shape, rate } => gamma_q(shape, rate * tau),
            WaitingTime::Weibull { shape, scale } => (-(tau / scale).powf(shape)).exp(),
        }
    }

    /// `F(τ) = 1 - Λ(τ)`, accurate for small τ.
    pub fn cdf(&self, tau: T) -> T {
        if tau <= T::zero() {
            return T::zero();
        }
        match *self {
            WaitingTime::Exponential { rate } => -(-rate * tau).exp_m1(),
            WaitingTime::Gamma { shape, rate } => gamma_p(shape, rate * tau),
            WaitingTime::Weibull { shape, scale } => -(-(tau / scale).powf(shape)).exp_m1(),
        }
    }

    /// Exit rate `λ(τ)`, evaluated from family-specific expressions so that it
    /// stays finite where `Λ` underflows. At τ = 0 a singular hazard is `+inf`.
    pub fn hazard(&self, tau: T) -> T {
        match *self {
            WaitingTime::Exponential { rate } => rate,
            WaitingTime::Weibull { shape, scale } => {
                if tau <= T::zero() {
                    return self.density(T::zero());
                }
                shape / scale * (tau / scale).powf(shape - T::one())
            }
            WaitingTime::Gamma { shape, rate } => {
                if tau <= T::zero() {
                    return self.density(T::zero());
                }
                let x = rate * tau;
                if x < shape + T::one() {
                    self.density(tau) / self.survival(tau)
                } else {
                    // Q(a, x) = x^a e^{-x} / Γ(a) * cf(a, x)  ⇒  λ = rate / (x cf)
                    rate / (x * gamma_q_cf(shape, x))
                }
            }
        }
    }

    /// Mean holding time `E[τ] = ∫_0^∞ Λ`.
    pub fn mean(&self) -> T {
        match *self {
            WaitingTime::Exponential { rate } => T::one() / rate,
            WaitingTime::Gamma { shape, rate } => shape / rate,
            WaitingTime::Weibull { shape, scale } => scale * gamma(T::one() + T::one() / shape),
        }
    }

    /// `∫_0^t Λ(s) ds`.
    pub fn cum_survival(&self, t: T) -> T {
        if t <= T::zero() {
            return T::zero();
        }
        if t.is_infinite() {
            return self.mean();
        }
        match *self {
            WaitingTime::Exponential { rate } => -(-rate * t).exp_m1() / rate,
            WaitingTime::Gamma { shape, rate } => {
                let x = rate * t;
                t * gamma_q(shape, x) + shape / rate * gamma_p(shape + T::one(), x)
            }
            WaitingTime::Weibull { shape, scale } => {
                let inv = T::one() / shape;
                scale * gamma(T::one() + inv) * gamma_p(inv, (t / scale).powf(shape))
            }
        }
    }

    /// `∫_t^∞ Λ(s) ds`.
    pub fn tail_survival(&self, t: T) -> T {
        if t <= T::zero() {
            return self.mean();
        }
        if t.is_infinite() {
            return T::zero();
        }
        match *self {
            WaitingTime::Exponential { rate } => (-rate * t).exp() / rate,
            WaitingTime::Gamma { shape, rate } => {
                let x = rate * t;
                if x < shape + T::one() {
                    return self.mean() - self.cum_survival(t);
                }
                // (1/r) [ (k - x) Q(k, x) + x^k e^{-x} / Γ(k) ]
                let lead = (shape * x.ln() - x - ln_gamma(shape)).exp();
                let v = ((shape - x) * gamma_q(shape, x) + lead) / rate;
                v.max(T::zero())
            }
            WaitingTime::Weibull { shape, scale } => {
                let inv = T::one() / shape;
                scale * gamma(T::one() + inv) * gamma_q(inv, (t / scale).powf(shape))
            }
        }
    }

    /// `∫_a^b f` or `∫_a^b Λ`; `b` may be `+inf`.
    pub fn interval_integral(&self, a: T, b: T, kind: IntegralKind) -> Result<T> {
        self.validate()?;
        if a.is_nan() || b.is_nan() || a < T::zero() {
            return Err(Error::domain(format!("invalid interval [{a}, {b}]")));
        }
        if a > b {
            return Err(Error::domain(format!("interval bounds reversed: a = {a} > b = {b}")));
        }
        if a == b {
            return Ok(T::zero());
        }
        Ok(match kind {
            IntegralKind::Density => self.density_mass(a, b),
            IntegralKind::Survival => self.survival_mass(a, b),
        })
    }

    /// `∫_a^b f = F(b) - F(a)`, choosing the better-conditioned form.
    pub fn density_mass(&self, a: T, b: T) -> T {
        if b <= a {
            return T::zero();
        }
        let la = self.survival(a);
        if la > T::lit(0.5) {
            (self.cdf(b) - self.cdf(a)).max(T::zero())
        } else {
            (la - self.survival(b)).max(T::zero())
        }
    }

    /// `∫_a^b Λ`, choosing the better-conditioned form.
    pub fn survival_mass(&self, a: T, b: T) -> T {
        if b <= a {
            return T::zero();
        }
        if self.survival(a) > T::lit(0.5) {
            (self.cum_survival(b) - self.cum_survival(a)).max(T::zero())
        } else {
            (self.tail_survival(a) - self.tail_survival(b)).max(T::zero())
        }
    }

    /// Smallest `s` with `Λ(s) <= p`, by bracketing and bisection.
    pub fn survival_quantile(&self, p: T) -> T {
        if p >= T::one() {
            return T::zero();
        }
        let mut hi = self.mean().max(T::min_positive_value());
        while self.survival(hi) > p {
            hi = hi * T::lit(2.0);
            if hi.is_infinite() {
                return hi;
            }
        }
        let mut lo = T::zero();
        for _ in 0..200 {
            let mid = T::lit(0.5) * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.survival(mid) > p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }

    /// Draws one holding time. Exponential and Weibull use the inverse CDF,
    /// Gamma uses the Marsaglia–Tsang sampler.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        let u: f64 = rng.random::<f64>();
        let u = 1.0 - u; // (0, 1]
        let v = match *self {
            WaitingTime::Exponential { rate } => -u.ln() / rate.as_f64(),
            WaitingTime::Weibull { shape, scale } => scale.as_f64() * (-u.ln()).powf(1.0 / shape.as_f64()),
            WaitingTime::Gamma { shape, rate } => {
                let g = GammaDist::new(shape.as_f64(), 1.0 / rate.as_f64()).expect("validated gamma parameters");
                g.sample(rng)
            }
        };
        T::lit(v)
    }
}

// Continued-fraction factor of Q(a, x) without the x^a e^{-x}/Γ(a) prefactor.
fn gamma_q_cf<T: Real>(a: T, x: T) -> T {
    let lead = (a * x.ln() - x - ln_gamma(a)).exp();
    if lead > T::min_positive_value() {
        let q = gamma_q(a, x);
        if q > T::min_positive_value() {
            return q / lead;
        }
    }
    // Deep tail: the asymptotic series 1/x (1 + (a-1)/x + (a-1)(a-2)/x^2 + ...)
    let mut term = T::one();
    let mut sum = T::one();
    for k in 1..30 {
        term = term * (a - T::from_usize_lossy(k)) / x;
        sum = sum + term;
        if term.abs() < T::epsilon() * sum.abs() {
            break;
        }
    }
    sum / x
}

/// Lag-indexed survival integrals, exact or tabulated.
pub trait LagIntegrals<T: Real> {
    fn law(&self) -> &WaitingTime<T>;
    fn survival(&self, s: T) -> T;
    /// `C(s) = ∫_0^s Λ`.
    fn cum_survival(&self, s: T) -> T;

    fn survival_and_cum(&self, s: T) -> (T, T) {
        (self.survival(s), self.cum_survival(s))
    }

    fn density(&self, s: T) -> T {
        self.law().density(s)
    }

    /// Product-trapezoid weights for `∫_a^b f(s) v(s) ds` with `v` linear
    /// between its values at the two cell ends: returns `(w_near, w_far)` so the
    /// integral is `w_near v(a) + w_far v(b)`. Only `Λ` and `∫Λ` are used, so a
    /// singular density at `s = 0` is handled exactly.
    fn cell_weights(&self, a: T, b: T) -> (T, T) {
        let width = b - a;
        if !(width > T::zero()) {
            return (T::zero(), T::zero());
        }
        if a > T::zero() && width <= a && width < T::lit(1e-5) {
            return gauss_cell_weights(self.law(), a, b);
        }
        let s = self.cum_survival(b) - self.cum_survival(a);
        let far = ((s - width * self.survival(b)) / width).max(T::zero());
        let near = (self.survival(a) - s / width).max(T::zero());
        (near, far)
    }
}

impl<T: Real> LagIntegrals<T> for WaitingTime<T> {
    fn law(&self) -> &WaitingTime<T> {
        self
    }

    fn survival(&self, s: T) -> T {
        WaitingTime::survival(self, s)
    }

    fn cum_survival(&self, s: T) -> T {
        WaitingTime::cum_survival(self, s)
    }
}

pub(crate) fn gauss_cell_weights<T: Real>(law: &WaitingTime<T>, a: T, b: T) -> (T, T) {
    let half = T::lit(0.5) * (b - a);
    let mid = T::lit(0.5) * (a + b);
    let r = T::lit((3.0_f64 / 5.0).sqrt());
    let nodes = [mid - r * half, mid, mid + r * half];
    let weights = [T::lit(5.0 / 9.0), T::lit(8.0 / 9.0), T::lit(5.0 / 9.0)];
    let width = b - a;
    let mut near = T::zero();
    let mut far = T::zero();
    for (s, w) in nodes.into_iter().zip(weights) {
        let fw = w * half * law.density(s);
        near = near + fw * (b - s) / width;
        far = far + fw * (s - a) / width;
    }
    (near, far)
}

/// Uniform-spacing cache of `Λ` and `C = ∫Λ`, interpolated by cubic Hermite
/// polynomials using the known derivatives `Λ' = -f` and `C' = Λ`.
#[derive(Debug, Clone)]
pub struct LagTable<T> {
    law: WaitingTime<T>,
    spacing: T,
    inv_spacing: T,
    survival: Vec<T>,
    // per cell: power-form cubics in the local coordinate for Λ and ∫Λ
    coef: Vec<[T; 8]>,
    direct_cells: usize,
}

impl<T: Real> LagTable<T> {
    pub fn new(law: WaitingTime<T>, spacing: T, max_lag: T) -> Self {
        let n = (max_lag / spacing).ceil().to_usize().unwrap_or(0) + 2;
        let mut survival = Vec::with_capacity(n);
        let mut cum = Vec::with_capacity(n);
        let mut density = Vec::with_capacity(n);
        for m in 0..n {
            let s = spacing * T::from_usize_lossy(m);
            survival.push(law.survival(s));
            cum.push(law.cum_survival(s));
            density.push(law.density(s));
        }
        let h = spacing;
        let coef = (0..n - 1)
            .map(|m| {
                let l = cubic(survival[m], -h * density[m], survival[m + 1], -h * density[m + 1]);
                let c = cubic(cum[m], h * survival[m], cum[m + 1], h * survival[m + 1]);
                [l[0], l[1], l[2], l[3], c[0], c[1], c[2], c[3]]
            })
            .collect();
        // Derivatives of f blow up at 0 for most shapes; evaluate the first
        // cells in closed form.
        let coef: Vec<[T; 8]> = coef;
        let bad = coef.iter().rposition(|c| c.iter().any(|v| !v.is_finite())).map_or(0, |i| i + 1);
        let direct_cells = match law {
            WaitingTime::Exponential { .. } => bad,
            _ => bad.max(64),
        };
        LagTable { law, spacing, inv_spacing: T::one() / spacing, survival, coef, direct_cells }
    }

    pub fn spacing(&self) -> T {
        self.spacing
    }

    pub fn max_lag(&self) -> T {
        self.spacing * T::from_usize_lossy(self.survival.len() - 1)
    }

    #[inline]
    fn locate(&self, s: T) -> Option<(&[T; 8], T)> {
        let x = s * self.inv_spacing;
        let m = x.floor().to_usize()?;
        if m < self.direct_cells {
            return None;
        }
        let c = self.coef.get(m)?;
        Some((c, x - T::from_usize_lossy(m)))
    }

    /// `(Λ(s), ∫_0^s Λ)` with a single table lookup.
    #[inline]
    pub fn survival_and_cum(&self, s: T) -> (T, T) {
        if s <= T::zero() {
            return (T::one(), T::zero());
        }
        match self.locate(s) {
            Some((c, u)) => {
                let lam = c[0] + u * (c[1] + u * (c[2] + u * c[3]));
                let cum = c[4] + u * (c[5] + u * (c[6] + u * c[7]));
                (lam.max(T::zero()).min(T::one()), cum)
            }
            None => (self.law.survival(s), self.law.cum_survival(s)),
        }
    }

    /// Smallest tabulated lag beyond which `Λ < tol`, if inside the table.
    pub fn negligible_beyond(&self, tol: T) -> Option<T> {
        let idx = self.survival.partition_point(|&v| v >= tol);
        (idx < self.survival.len()).then(|| self.spacing * T::from_usize_lossy(idx))
    }
}

/// Cubic Hermite interpolant on `[0,1]` in power form, from end values and
/// end slopes already scaled by the cell width.
#[inline]
fn cubic<T: Real>(y0: T, d0: T, y1: T, d1: T) -> [T; 4] {
    let two = T::lit(2.0);
    let three = T::lit(3.0);
    [y0, d0, three * (y1 - y0) - two * d0 - d1, two * (y0 - y1) + d0 + d1]
}

impl<T: Real> LagIntegrals<T> for LagTable<T> {
    fn law(&self) -> &WaitingTime<T> {
        &self.law
    }

    #[inline]
    fn survival_and_cum(&self, s: T) -> (T, T) {
        LagTable::survival_and_cum(self, s)
    }

    fn density(&self, s: T) -> T {
        if s <= T::zero() {
            return self.law.density(s);
        }
        match self.locate(s) {
            // −Λ' of the cubic
            Some((c, u)) => -(c[1] + u * (T::lit(2.0) * c[2] + u * T::lit(3.0) * c[3])) * self.inv_spacing,
            None => self.law.density(s),
        }
    }

    fn survival(&self, s: T) -> T {
        if s <= T::zero() {
            return T::one();
        }
        match self.locate(s) {
            Some((c, u)) => (c[0] + u * (c[1] + u * (c[2] + u * c[3]))).max(T::zero()).min(T::one()),
            None => self.law.survival(s),
        }
    }

    fn cum_survival(&self, s: T) -> T {
        if s <= T::zero() {
            return T::zero();
        }
        match self.locate(s) {
            Some((c, u)) => c[4] + u * (c[5] + u * (c[6] + u * c[7])),
            None => self.law.cum_survival(s),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    type WaitingTime = crate::waiting::WaitingTime<f64>;

    fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        s * h / 3.0
    }

    #[test]
    fn spec_point_examples() {
        let e = WaitingTime::exponential(2.0).unwrap();
        assert_eq!(e.evaluate(0.0, Quantity::Density).unwrap(), 2.0);
        let g = WaitingTime::gamma(2.0, 1.0).unwrap();
        let v = g.evaluate(1.0, Quantity::Survival).unwrap();
        assert!((v - 2.0 * (-1.0_f64).exp()).abs() < 1e-14);
        assert!((v - 0.735_759).abs() < 1e-6);
        // independent check: 1 - ∫_0^1 f
        let mass = simpson(|t| g.density(t), 0.0, 1.0, 2000);
        assert!((1.0 - mass - v).abs() < 1e-10);
        let w = WaitingTime::weibull(1.0, 1.0).unwrap();
        assert!((w.evaluate(3.0, Quantity::Hazard).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn evaluate_errors() {
        let g = WaitingTime::gamma(2.0, 1.0).unwrap();
        assert!(matches!(g.evaluate(-1.0, Quantity::Density), Err(Error::Domain(_))));
        let bad = WaitingTime::Gamma { shape: f64::NAN, rate: 1.0 };
        assert!(matches!(bad.evaluate(1.0, Quantity::Density), Err(Error::Validation(_))));
        assert!(WaitingTime::weibull(0.0, 1.0).is_err());
    }

    #[test]
    fn interval_integral_examples() {
        let e = WaitingTime::exponential(1.0).unwrap();
        let v = e.interval_integral(0.0, 1.0, IntegralKind::Survival).unwrap();
        assert!((v - (1.0 - (-1.0_f64).exp())).abs() < 1e-15);
        for d in [e, WaitingTime::gamma(0.7, 1.3).unwrap(), WaitingTime::weibull(2.5, 0.8).unwrap()] {
            let total = d.interval_integral(0.0, f64::INFINITY, IntegralKind::Density).unwrap();
            assert!((total - 1.0).abs() < 1e-14);
            assert_eq!(d.interval_integral(0.4, 0.4, IntegralKind::Survival).unwrap(), 0.0);
            assert_eq!(d.interval_integral(0.4, 0.4, IntegralKind::Density).unwrap(), 0.0);
        }
        assert!(e.interval_integral(2.0, 1.0, IntegralKind::Density).is_err());
    }

    #[test]
    fn means() {
        assert!((WaitingTime::exponential(4.0).unwrap().mean() - 0.25).abs() < 1e-15);
        assert!((WaitingTime::gamma(3.0, 2.0).unwrap().mean() - 1.5).abs() < 1e-15);
        let w = WaitingTime::weibull(2.0, 1.0).unwrap();
        assert!((w.mean() - 0.886_227).abs() < 1e-6);
        let via_integral = w.interval_integral(0.0, f64::INFINITY, IntegralKind::Survival).unwrap();
        let via_simpson = simpson(|t| w.survival(t), 0.0, 12.0, 20_000);
        assert!((via_integral - w.mean()).abs() < 1e-12);
        assert!((via_simpson - w.mean()).abs() < 1e-10);
    }

    #[test]
    fn survival_integrals_match_quadrature() {
        for d in [
            WaitingTime::gamma(2.7, 1.9).unwrap(),
            WaitingTime::gamma(0.6, 0.5).unwrap(),
            WaitingTime::weibull(0.7, 1.2).unwrap(),
            WaitingTime::weibull(3.0, 2.0).unwrap(),
        ] {
            for &(a, b) in &[(0.5, 1.0), (1.0, 4.0), (3.0, 9.0)] {
                let exact = d.survival_mass(a, b);
                let num = simpson(|t| d.survival(t), a, b, 20_000);
                assert!((exact - num).abs() < 1e-10 * num.max(1e-3), "{d:?} [{a},{b}] {exact} {num}");
                let exact_f = d.density_mass(a, b);
                let num_f = simpson(|t| d.density(t), a, b, 20_000);
                assert!((exact_f - num_f).abs() < 1e-10 * num_f.max(1e-3));
            }
        }
    }

    #[test]
    fn shape_one_families_are_exponential() {
        let r = 1.7;
        let e = WaitingTime::exponential(r).unwrap();
        let g = WaitingTime::gamma(1.0, r).unwrap();
        let w = WaitingTime::weibull(1.0, 1.0 / r).unwrap();
        for i in 0..200 {
            let t = i as f64 * 0.05;
            for d in [g, w] {
                assert!((d.density(t) - e.density(t)).abs() < 1e-12);
                assert!((d.survival(t) - e.survival(t)).abs() < 1e-12);
                assert!((d.hazard(t) - e.hazard(t)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hazard_stays_finite_in_deep_tail() {
        let g = WaitingTime::gamma(2.5, 3.0).unwrap();
        let h = g.hazard(400.0);
        assert!(h.is_finite() && h > 2.9 && h < 3.0);
        let w = WaitingTime::weibull(0.5, 1.0).unwrap();
        assert!(w.hazard(0.0).is_infinite());
        assert!(w.density(0.0).is_infinite());
        assert_eq!(w.survival(0.0), 1.0);
    }

    #[test]
    fn table_matches_direct_evaluation() {
        for d in [
            WaitingTime::gamma(2.3, 1.5).unwrap(),
            WaitingTime::weibull(0.6, 0.9).unwrap(),
            WaitingTime::gamma(50.0, 50.0).unwrap(),
        ] {
            let table = LagTable::new(d, 2.5e-4, 12.0);
            for i in 1..5000 {
                let s = i as f64 * 0.002_37;
                assert!((table.survival(s) - d.survival(s)).abs() < 1e-11);
                assert!((table.cum_survival(s) - d.cum_survival(s)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cell_weights_integrate_linear_functions() {
        let d = WaitingTime::gamma(1.8, 2.2).unwrap();
        let (a, b) = (0.3, 0.31);
        let (near, far) = d.cell_weights(a, b);
        // v(s) = 1 and v(s) = s
        let m0 = simpson(|s| d.density(s), a, b, 200);
        let m1 = simpson(|s| s * d.density(s), a, b, 200);
        assert!((near + far - m0).abs() < 1e-14);
        assert!((near * a + far * b - m1).abs() < 1e-14);
        let (n2, f2) = d.cell_weights(0.3, 0.3 + 1e-7);
        let m0 = simpson(|s| d.density(s), 0.3, 0.3 + 1e-7, 4);
        assert!((n2 + f2 - m0).abs() < 1e-20);
    }
}
