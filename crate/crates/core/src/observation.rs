//! Observation times, per-state likelihood vectors and the scaled likelihood υ.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::model::Trajectory;
use crate::waiting::WaitingTime;
use crate::{Error, Real, Result};

/// Gaussian emissions `Y ~ N(b(x), d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionModel<T> {
    pub levels: Vec<T>,
    pub sd: T,
}

impl<T: Real> EmissionModel<T> {
    pub fn new(levels: Vec<T>, sd: T) -> Result<Self> {
        if !(sd > T::zero()) || sd.is_infinite() {
            return Err(Error::validation(format!("emission sd must be > 0, got {sd}")));
        }
        if levels.iter().any(|b| !b.is_finite()) {
            return Err(Error::validation("emission levels must be finite"));
        }
        Ok(EmissionModel { levels, sd })
    }

    /// Levels `0, 1, ..., n-1` with `d = 0.25` (a quarter of the level gap).
    pub fn equally_spaced(n: usize) -> Self {
        EmissionModel { levels: (0..n).map(T::from_usize_lossy).collect(), sd: T::lit(0.25) }
    }

    pub fn likelihood(&self, y: T) -> Vec<T> {
        let norm = T::one() / (T::lit((2.0 * std::f64::consts::PI).sqrt()) * self.sd);
        self.levels
            .iter()
            .map(|&b| {
                let z = (y - b) / self.sd;
                norm * (-T::lit(0.5) * z * z).exp()
            })
            .collect()
    }
}

/// Ordered observations with likelihood vectors `L_k(x | y_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet<T> {
    pub times: Vec<T>,
    /// Raw values; NaN where only a likelihood vector was supplied.
    pub values: Vec<T>,
    pub likelihoods: Vec<Vec<T>>,
}

impl<T: Real> ObservationSet<T> {
    pub fn empty() -> Self {
        ObservationSet { times: Vec::new(), values: Vec::new(), likelihoods: Vec::new() }
    }

    /// Validating constructor; times must be strictly increasing.
    pub fn new(times: Vec<T>, values: Vec<T>, likelihoods: Vec<Vec<T>>) -> Result<Self> {
        let o = ObservationSet { times, values, likelihoods };
        o.check()?;
        Ok(o)
    }

    /// Like [`ObservationSet::new`] but sorts by time and merges observations
    /// sharing a time stamp by multiplying their likelihood vectors.
    pub fn new_merging(times: Vec<T>, values: Vec<T>, likelihoods: Vec<Vec<T>>) -> Result<Self> {
        if times.len() != values.len() || times.len() != likelihoods.len() {
            return Err(Error::validation("times, values and likelihoods differ in length"));
        }
        let mut idx: Vec<usize> = (0..times.len()).collect();
        idx.sort_by(|&a, &b| times[a].partial_cmp(&times[b]).unwrap_or(std::cmp::Ordering::Equal));
        let mut o = ObservationSet::empty();
        for i in idx {
            if o.times.last() == Some(&times[i]) {
                let last = o.likelihoods.last_mut().unwrap();
                for (l, &v) in last.iter_mut().zip(&likelihoods[i]) {
                    *l = *l * v;
                }
                *o.values.last_mut().unwrap() = T::nan();
            } else {
                o.times.push(times[i]);
                o.values.push(values[i]);
                o.likelihoods.push(likelihoods[i].clone());
            }
        }
        o.check()?;
        Ok(o)
    }

    pub fn from_values(times: Vec<T>, values: Vec<T>, emission: &EmissionModel<T>) -> Result<Self> {
        let lik = values.iter().map(|&y| emission.likelihood(y)).collect();
        Self::new_merging(times, values, lik)
    }

    fn check(&self) -> Result<()> {
        let k = self.times.len();
        if self.values.len() != k || self.likelihoods.len() != k {
            return Err(Error::validation("times, values and likelihoods differ in length"));
        }
        if self.times.iter().any(|t| !t.is_finite() || *t < T::zero()) {
            return Err(Error::validation("observation times must be finite and >= 0"));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::validation("observation times must be strictly increasing"));
        }
        let n = self.likelihoods.first().map_or(0, |l| l.len());
        for (i, l) in self.likelihoods.iter().enumerate() {
            if l.len() != n {
                return Err(Error::validation(format!("likelihood vector {i} has wrong length")));
            }
            if l.iter().any(|v| v.is_nan() || *v < T::zero() || v.is_infinite()) {
                return Err(Error::validation(format!("likelihood vector {i} has invalid entries")));
            }
            if !l.iter().any(|v| *v > T::zero()) {
                return Err(Error::validation(format!("likelihood vector {i} is identically zero")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n_states(&self) -> Option<usize> {
        self.likelihoods.first().map(|l| l.len())
    }

    /// Drops observations at or beyond `horizon`.
    pub fn truncated(&self, horizon: T) -> Self {
        let k = self.times.partition_point(|&t| t < horizon);
        ObservationSet {
            times: self.times[..k].to_vec(),
            values: self.values[..k].to_vec(),
            likelihoods: self.likelihoods[..k].to_vec(),
        }
    }

    /// `(time, value)` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["time", "value"])?;
        for (t, y) in self.times.iter().zip(&self.values) {
            wr.write_record([format!("{t}"), format!("{y}")])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// `(time, L(x_1), ..., L(x_n))` rows.
    pub fn write_likelihood_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let n = self.n_states().unwrap_or(0);
        let mut head = vec!["time".to_string()];
        head.extend((1..=n).map(|i| format!("L{i}")));
        wr.write_record(&head)?;
        for (t, l) in self.times.iter().zip(&self.likelihoods) {
            let mut row = vec![format!("{t}")];
            row.extend(l.iter().map(|v| format!("{v}")));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads either `(time, value)` rows (requires `emission`) or likelihood
    /// rows `(time, L1, ..., Ln)`, decided by the column count.
    pub fn read_csv<R: Read>(r: R, emission: Option<&EmissionModel<T>>) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut times = Vec::new();
        let mut values = Vec::new();
        let mut lik = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let nums: Vec<f64> = rec
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::validation(format!("bad number in observation CSV: {e}")))?;
            if nums.len() < 2 {
                return Err(Error::validation("observation CSV rows need at least 2 columns"));
            }
            times.push(T::lit(nums[0]));
            if nums.len() == 2 {
                let em =
                    emission.ok_or_else(|| Error::validation("(time, value) observations need an emission model"))?;
                let y = T::lit(nums[1]);
                values.push(y);
                lik.push(em.likelihood(y));
            } else {
                values.push(T::nan());
                lik.push(nums[1..].iter().map(|&v| T::lit(v)).collect());
            }
        }
        Self::new_merging(times, values, lik)
    }
}

/// Renewal-process observation times on `[0, horizon)` with Gaussian values.
pub fn sample_observations<T: Real>(
    traj: &Trajectory<T>,
    emission: &EmissionModel<T>,
    renewal: &WaitingTime<T>,
    seed: u64,
) -> Result<ObservationSet<T>> {
    if traj.states.is_empty() {
        return Err(Error::domain("empty trajectory"));
    }
    renewal.validate()?;
    if traj.states.iter().any(|&s| s >= emission.levels.len()) {
        return Err(Error::validation("emission model has fewer levels than states"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let end = traj.horizon.as_f64();
    let mut t = 0.0_f64;
    let mut times = Vec::new();
    let mut values = Vec::new();
    loop {
        t += renewal.sample(&mut rng).as_f64();
        if t >= end {
            break;
        }
        let tt = T::lit(t);
        if times.last().is_some_and(|&p| tt <= p) {
            continue;
        }
        let x = traj.state_at(tt)?;
        let xi: f64 = StandardNormal.sample(&mut rng);
        times.push(tt);
        values.push(emission.levels[x] + emission.sd * T::lit(xi));
    }
    ObservationSet::from_values(times, values, emission)
}

/// υ(x, t', t) = Π_{k: t_k ∈ [t', t)} L_k(x) / c_k, stored as per-state prefix
/// sums of logs with separate zero counts.
#[derive(Debug, Clone)]
pub struct ScaledLikelihood<T> {
    obs: ObservationSet<T>,
    normalizers: Option<Vec<T>>,
    log_prefix: Vec<Vec<T>>,
    zero_prefix: Vec<Vec<u32>>,
}

impl<T: Real> ScaledLikelihood<T> {
    /// Without normalizers υ queries spanning an observation fail.
    pub fn new(obs: ObservationSet<T>) -> Self {
        ScaledLikelihood { obs, normalizers: None, log_prefix: Vec::new(), zero_prefix: Vec::new() }
    }

    pub fn with_normalizers(obs: ObservationSet<T>, c: Vec<T>) -> Result<Self> {
        let mut s = Self::new(obs);
        s.set_normalizers(c)?;
        Ok(s)
    }

    pub fn set_normalizers(&mut self, c: Vec<T>) -> Result<()> {
        if c.len() != self.obs.len() {
            return Err(Error::validation(format!("{} normalizers for {} observations", c.len(), self.obs.len())));
        }
        if c.iter().any(|v| !(*v > T::zero()) || !v.is_finite()) {
            return Err(Error::validation("normalizers must be finite and > 0"));
        }
        let n = self.obs.n_states().unwrap_or(0);
        let k = self.obs.len();
        let mut lp = vec![vec![T::zero(); k + 1]; n];
        let mut zp = vec![vec![0u32; k + 1]; n];
        for x in 0..n {
            for j in 0..k {
                let l = self.obs.likelihoods[j][x];
                let (dl, dz) = if l > T::zero() { ((l / c[j]).ln(), 0) } else { (T::zero(), 1) };
                lp[x][j + 1] = lp[x][j] + dl;
                zp[x][j + 1] = zp[x][j] + dz;
            }
        }
        self.log_prefix = lp;
        self.zero_prefix = zp;
        self.normalizers = Some(c);
        Ok(())
    }

    pub fn observations(&self) -> &ObservationSet<T> {
        &self.obs
    }

    pub fn normalizers(&self) -> Option<&[T]> {
        self.normalizers.as_deref()
    }

    /// Index of the first observation with time `>= t`.
    pub fn first_at_or_after(&self, t: T) -> usize {
        self.obs.times.partition_point(|&s| s < t)
    }

    /// `ln υ` over the observation index range `[a, b)`; `-inf` if a factor is 0.
    pub fn log_upsilon_range(&self, x: usize, a: usize, b: usize) -> Result<T> {
        if a >= b {
            return Ok(T::zero());
        }
        if self.normalizers.is_none() {
            return Err(Error::state("normalizers missing: run the forward pass first"));
        }
        if self.zero_prefix[x][b] != self.zero_prefix[x][a] {
            return Ok(T::neg_infinity());
        }
        Ok(self.log_prefix[x][b] - self.log_prefix[x][a])
    }

    pub fn upsilon_range(&self, x: usize, a: usize, b: usize) -> Result<T> {
        Ok(self.log_upsilon_range(x, a, b)?.exp())
    }

    /// υ(x, t_from, t_to) with the half-open convention `[t_from, t_to)`.
    pub fn upsilon(&self, x: usize, t_from: T, t_to: T) -> Result<T> {
        if t_from > t_to || t_from.is_nan() || t_to.is_nan() {
            return Err(Error::domain(format!("need t_from <= t_to, got [{t_from}, {t_to})")));
        }
        if let Some(n) = self.obs.n_states() {
            if x >= n {
                return Err(Error::domain(format!("state {x} out of range")));
            }
        }
        let a = self.first_at_or_after(t_from);
        let b = self.first_at_or_after(t_to);
        self.upsilon_range(x, a, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    type EmissionModel = super::EmissionModel<f64>;

    fn obs3() -> ObservationSet<f64> {
        ObservationSet::new(
            vec![0.5, 1.0, 2.0],
            vec![f64::NAN; 3],
            vec![vec![0.2, 0.8], vec![0.5, 0.1], vec![1.0, 3.0]],
        )
        .unwrap()
    }

    #[test]
    fn upsilon_examples() {
        let sl = ScaledLikelihood::with_normalizers(obs3(), vec![0.5, 0.25, 2.0]).unwrap();
        assert_eq!(sl.upsilon(0, 1.1, 1.9).unwrap(), 1.0);
        assert!((sl.upsilon(1, 0.9, 1.5).unwrap() - 0.1 / 0.25).abs() < 1e-15);
        // half-open: an observation at t_to is excluded, at t_from included
        assert!((sl.upsilon(0, 1.0, 2.0).unwrap() - 2.0).abs() < 1e-15);
        for &(a, b, c) in &[(0.0, 0.7, 3.0), (0.5, 1.0, 2.0), (0.1, 0.1, 2.5)] {
            for x in 0..2 {
                let whole = sl.upsilon(x, a, c).unwrap();
                let split = sl.upsilon(x, a, b).unwrap() * sl.upsilon(x, b, c).unwrap();
                assert!((whole - split).abs() < 1e-14 * whole.max(1.0));
            }
        }
    }

    #[test]
    fn missing_normalizers_is_state_error() {
        let sl = ScaledLikelihood::new(obs3());
        assert!(matches!(sl.upsilon(0, 0.0, 1.0), Err(Error::State(_))));
        assert_eq!(sl.upsilon(0, 0.6, 0.9).unwrap(), 1.0);
    }

    #[test]
    fn duplicates_merge() {
        let o = ObservationSet::new_merging(
            vec![1.0, 0.5, 1.0],
            vec![0.0; 3],
            vec![vec![0.5, 1.0], vec![1.0, 1.0], vec![0.5, 0.2]],
        )
        .unwrap();
        assert_eq!(o.times, vec![0.5, 1.0]);
        assert_eq!(o.likelihoods[1], vec![0.25, 0.2]);
    }

    #[test]
    fn rejects_bad_sets() {
        assert!(ObservationSet::new(vec![1.0, 1.0], vec![0.0; 2], vec![vec![1.0], vec![1.0]]).is_err());
        assert!(ObservationSet::new(vec![1.0], vec![0.0], vec![vec![0.0, 0.0]]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let em = EmissionModel::new(vec![0.0, 1.0], 0.3).unwrap();
        let o = ObservationSet::from_values(vec![0.1, 0.4], vec![0.2, 0.9], &em).unwrap();
        let mut buf = Vec::new();
        o.write_csv(&mut buf).unwrap();
        let back = ObservationSet::read_csv(&buf[..], Some(&em)).unwrap();
        assert_eq!(back.times, o.times);
        for (a, b) in back.likelihoods.iter().flatten().zip(o.likelihoods.iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
        let mut buf = Vec::new();
        o.write_likelihood_csv(&mut buf).unwrap();
        let back = ObservationSet::<f64>::read_csv(&buf[..], None).unwrap();
        assert_eq!(back.likelihoods.len(), 2);
    }
}
