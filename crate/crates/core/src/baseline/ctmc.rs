//! Exact filtering and smoothing for exponential-waiting models by
//! uniformization of the generator.

use crate::model::CtsmcModel;
use crate::observation::ObservationSet;
use crate::waiting::WaitingTime;
use crate::{Error, Real, Result};

#[derive(Debug, Clone)]
pub struct CtmcResult<T> {
    /// Pre-update marginals at each observation.
    pub predicted: Vec<Vec<T>>,
    /// Post-update marginals at each observation.
    pub filtered: Vec<Vec<T>>,
    pub normalizers: Vec<T>,
    pub log_evidence: T,
    /// Filtered marginals at the query times.
    pub filtered_at: Vec<Vec<T>>,
    /// Smoothed marginals at the query times.
    pub smoothed_at: Vec<Vec<T>>,
}

struct Generator<T> {
    rates: Vec<T>,
    jump: Vec<Vec<T>>,
    unif: T,
}

impl<T: Real> Generator<T> {
    fn new(model: &CtsmcModel<T>) -> Result<Self> {
        let rates = model
            .waiting
            .iter()
            .map(|w| match *w {
                WaitingTime::Exponential { rate } => Ok(rate),
                WaitingTime::Gamma { shape, rate } if shape == T::one() => Ok(rate),
                WaitingTime::Weibull { shape, scale } if shape == T::one() => Ok(T::one() / scale),
                _ => Err(Error::validation("CTMC filter needs exponential waiting times")),
            })
            .collect::<Result<Vec<T>>>()?;
        let unif = rates.iter().copied().fold(T::zero(), T::max);
        Ok(Generator { rates, jump: model.embedded.m.clone(), unif })
    }

    // v P with P = I + Q / Λ (row vector), or P v (column) when `adjoint`.
    fn step(&self, v: &[T], adjoint: bool) -> Vec<T> {
        let n = v.len();
        let mut out = vec![T::zero(); n];
        for x in 0..n {
            let stay = T::one() - self.rates[x] / self.unif;
            if adjoint {
                let mut s = stay * v[x];
                for y in 0..n {
                    s = s + self.rates[x] / self.unif * self.jump[x][y] * v[y];
                }
                out[x] = s;
            } else {
                out[x] = out[x] + stay * v[x];
                for y in 0..n {
                    out[y] = out[y] + v[x] * self.rates[x] / self.unif * self.jump[x][y];
                }
            }
        }
        out
    }

    /// `v e^{QΔ}` (forward) or `e^{QΔ} v` (adjoint).
    fn propagate(&self, v: &[T], dt: T, adjoint: bool) -> Vec<T> {
        if dt <= T::zero() || self.unif == T::zero() {
            return v.to_vec();
        }
        let chunks = (self.unif * dt / T::lit(30.0)).ceil().to_usize().unwrap_or(1).max(1);
        let d = dt / T::from_usize_lossy(chunks);
        let lam = self.unif * d;
        let mut cur = v.to_vec();
        for _ in 0..chunks {
            let mut term = cur.clone();
            let mut weight = (-lam).exp();
            let mut acc: Vec<T> = term.iter().map(|&t| t * weight).collect();
            let mut cum = weight;
            let mut k = 0usize;
            while T::one() - cum > T::lit(1e-17) && k < 10_000 {
                k += 1;
                term = self.step(&term, adjoint);
                weight = weight * lam / T::from_usize_lossy(k);
                cum = cum + weight;
                for (a, t) in acc.iter_mut().zip(&term) {
                    *a = *a + weight * *t;
                }
                if weight < T::lit(1e-18) && T::from_usize_lossy(k) > lam {
                    break;
                }
            }
            cur = acc;
        }
        cur
    }
}

/// Forward–backward recursion for a CTMC; `query` times must lie in
/// `[0, horizon]`.
pub fn ctmc_forward_backward<T: Real>(
    model: &CtsmcModel<T>,
    obs: &ObservationSet<T>,
    query: &[T],
) -> Result<CtmcResult<T>> {
    model.validate()?;
    let gen = Generator::new(model)?;
    let k = obs.len();
    let mut predicted = Vec::with_capacity(k);
    let mut filtered = Vec::with_capacity(k);
    let mut normalizers = Vec::with_capacity(k);
    let mut log_evidence = T::zero();
    let mut p = model.initial.clone();
    let mut t = T::zero();
    for (j, (&tk, lik)) in obs.times.iter().zip(&obs.likelihoods).enumerate() {
        p = gen.propagate(&p, tk - t, false);
        predicted.push(p.clone());
        let c = p.iter().zip(lik).fold(T::zero(), |a, (&q, &l)| a + q * l);
        if !(c > T::zero()) {
            return Err(Error::ZeroLikelihood { index: j, time: tk.as_f64() });
        }
        for (q, &l) in p.iter_mut().zip(lik) {
            *q = *q * l / c;
        }
        normalizers.push(c);
        log_evidence = log_evidence + c.ln();
        filtered.push(p.clone());
        t = tk;
    }
    // β just before each observation: likelihood of y_k.. given X(t_k)
    let n = model.n_states();
    let mut beta_pre = vec![vec![T::one(); n]; k + 1];
    for j in (0..k).rev() {
        let next = if j + 1 < k {
            gen.propagate(&beta_pre[j + 1], obs.times[j + 1] - obs.times[j], true)
        } else {
            vec![T::one(); n]
        };
        beta_pre[j] = next.iter().zip(&obs.likelihoods[j]).map(|(&b, &l)| b * l / normalizers[j]).collect();
    }
    let mut filtered_at = Vec::with_capacity(query.len());
    let mut smoothed_at = Vec::with_capacity(query.len());
    for &q in query {
        let done = obs.times.partition_point(|&s| s <= q);
        let (start, base) = if done == 0 {
            (T::zero(), model.initial.clone())
        } else {
            (obs.times[done - 1], filtered[done - 1].clone())
        };
        let a = gen.propagate(&base, q - start, false);
        let b = if done < k { gen.propagate(&beta_pre[done], obs.times[done] - q, true) } else { vec![T::one(); n] };
        let mut s: Vec<T> = a.iter().zip(&b).map(|(&x, &y)| x * y).collect();
        let tot: T = s.iter().copied().sum();
        for v in s.iter_mut() {
            *v = *v / tot;
        }
        filtered_at.push(a);
        smoothed_at.push(s);
    }
    Ok(CtmcResult { predicted, filtered, normalizers, log_evidence, filtered_at, smoothed_at })
}

#[cfg(test)]
mod tests {
    use super::*;
    type WaitingTime = crate::waiting::WaitingTime<f64>;

    #[test]
    fn two_state_closed_form() {
        let e = WaitingTime::exponential(1.0).unwrap();
        let m = CtsmcModel::new(vec![e, e], vec![vec![0.0, 1.0], vec![1.0, 0.0]], Some(vec![1.0, 0.0])).unwrap();
        let r = ctmc_forward_backward(&m, &ObservationSet::empty(), &[1.0, 3.0]).unwrap();
        assert!((r.filtered_at[0][0] - 0.567_667_641_618_306_3).abs() < 1e-14);
        assert!((r.filtered_at[1][0] - 0.5 * (1.0 + (-6.0_f64).exp())).abs() < 1e-14);
        assert_eq!(r.smoothed_at[0], r.filtered_at[0]);
    }

    #[test]
    fn rejects_non_exponential() {
        let g = WaitingTime::gamma(2.0, 1.0).unwrap();
        let m = CtsmcModel::new(vec![g, g], vec![vec![0.0, 1.0], vec![1.0, 0.0]], None).unwrap();
        assert!(ctmc_forward_backward(&m, &ObservationSet::empty(), &[]).is_err());
    }
}
