use std::io::Write;

use crate::{Error, Real, Result};

/// Role of a mesh node. Every observation time carries two nodes at the same
/// instant: before and after the likelihood update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Regular,
    ObsLeft(usize),
    ObsRight(usize),
}

/// Mesh over `[0, T]` aligned with the observation times.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid<T> {
    pub times: Vec<T>,
    pub kinds: Vec<NodeKind>,
    /// Number of observations already applied at each node.
    pub applied: Vec<usize>,
    pub h: T,
    pub horizon: T,
}

impl<T: Real> TimeGrid<T> {
    /// Between consecutive breakpoints `⌊L/h⌋` steps of length `h` plus the
    /// remainder; a remainder below `0.1 h` is absorbed by splitting the last
    /// two steps evenly.
    pub fn build(obs_times: &[T], horizon: T, h: T) -> Result<Self> {
        if !(h > T::zero()) || !h.is_finite() {
            return Err(Error::domain(format!("step must be finite and > 0, got {h}")));
        }
        if !(horizon > T::zero()) || !horizon.is_finite() {
            return Err(Error::domain(format!("horizon must be finite and > 0, got {horizon}")));
        }
        if let Some(&t) = obs_times.iter().find(|&&t| t >= horizon || t < T::zero()) {
            return Err(Error::domain(format!("observation at t = {t} outside [0, {horizon})")));
        }
        if obs_times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::validation("observation times must be strictly increasing"));
        }
        let mut g = TimeGrid { times: vec![], kinds: vec![], applied: vec![], h, horizon };
        let push_obs = |g: &mut TimeGrid<T>, k: usize, t: T| {
            g.times.push(t);
            g.kinds.push(NodeKind::ObsLeft(k));
            g.applied.push(k);
            g.times.push(t);
            g.kinds.push(NodeKind::ObsRight(k));
            g.applied.push(k + 1);
        };
        let mut start = 0;
        if obs_times.first() == Some(&T::zero()) {
            push_obs(&mut g, 0, T::zero());
            start = 1;
        } else {
            g.times.push(T::zero());
            g.kinds.push(NodeKind::Regular);
            g.applied.push(0);
        }
        let mut a = T::zero();
        for k in start..=obs_times.len() {
            let b = if k < obs_times.len() { obs_times[k] } else { horizon };
            for t in interior_nodes(a, b, h) {
                g.times.push(t);
                g.kinds.push(NodeKind::Regular);
                g.applied.push(k);
            }
            if k < obs_times.len() {
                push_obs(&mut g, k, b);
            } else {
                g.times.push(b);
                g.kinds.push(NodeKind::Regular);
                g.applied.push(k);
            }
            a = b;
        }
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> usize {
        self.times.len() - 1
    }

    /// Number of nonzero-width steps.
    pub fn n_steps(&self) -> usize {
        self.times.windows(2).filter(|w| w[1] > w[0]).count()
    }

    pub fn max_step(&self) -> T {
        self.times.windows(2).map(|w| w[1] - w[0]).fold(T::zero(), T::max)
    }

    /// Node index of the left (pre-update) node of observation `k`.
    pub fn obs_left_index(&self, k: usize) -> Option<usize> {
        self.kinds.iter().position(|&n| n == NodeKind::ObsLeft(k))
    }
}

// Strictly interior nodes of (a, b).
fn interior_nodes<T: Real>(a: T, b: T, h: T) -> Vec<T> {
    let len = b - a;
    let ratio = len / h;
    let mut full = ratio.floor().to_usize().unwrap_or(0);
    let mut rem = len - h * T::from_usize_lossy(full);
    if rem <= T::lit(1e-9) * h {
        // an exact multiple: the last full step ends on b
        full = full.saturating_sub(1);
        rem = T::zero();
    }
    let mut out: Vec<T> = (1..=full).map(|i| a + h * T::from_usize_lossy(i)).collect();
    if rem > T::zero() && rem < T::lit(0.1) * h && full >= 1 {
        let last = out.pop().unwrap();
        let base = last - h;
        out.push(base + T::lit(0.5) * (b - base));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    #[default]
    Linear,
    /// Natural cubic spline, restarted at every duplicated node.
    CubicSpline,
}

/// Per-state values on mesh nodes, stored node-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction<T> {
    pub times: Vec<T>,
    pub n_states: usize,
    pub data: Vec<T>,
    pub interpolation: Interpolation,
}

impl<T: Real> GridFunction<T> {
    pub fn zeros(times: Vec<T>, n_states: usize) -> Self {
        let data = vec![T::zero(); times.len() * n_states];
        GridFunction { times, n_states, data, interpolation: Interpolation::Linear }
    }

    pub fn from_rows(times: Vec<T>, rows: &[Vec<T>]) -> Result<Self> {
        let n = rows.first().map_or(0, |r| r.len());
        if rows.len() != times.len() || rows.iter().any(|r| r.len() != n) {
            return Err(Error::validation("grid function rows do not match the time axis"));
        }
        Ok(GridFunction {
            times,
            n_states: n,
            data: rows.iter().flatten().copied().collect(),
            interpolation: Interpolation::Linear,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.n_states..(i + 1) * self.n_states]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let n = self.n_states;
        &mut self.data[i * n..(i + 1) * n]
    }

    #[inline]
    pub fn get(&self, i: usize, x: usize) -> T {
        self.data[i * self.n_states + x]
    }

    #[inline]
    pub fn set(&mut self, i: usize, x: usize, v: T) {
        self.data[i * self.n_states + x] = v;
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks(self.n_states.max(1))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn min_value(&self) -> T {
        self.data.iter().copied().fold(T::infinity(), T::min)
    }

    /// `max |a − b|` over common nodes.
    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        if self.times.len() != other.times.len() || self.n_states != other.n_states {
            return Err(Error::state("grid functions live on different meshes"));
        }
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| (a - b).abs()).fold(T::zero(), T::max))
    }

    /// Value at `t`; at a duplicated time the last node (post-update) wins.
    pub fn value_at(&self, t: T) -> Vec<T> {
        self.resample(&[t], self.interpolation).row(0).to_vec()
    }

    /// Evaluates at every time in `ts` (need not be sorted).
    pub fn resample(&self, ts: &[T], how: Interpolation) -> GridFunction<T> {
        let n = self.n_states;
        let mut out = GridFunction::zeros(ts.to_vec(), n);
        if self.times.is_empty() {
            return out;
        }
        let second = match how {
            Interpolation::CubicSpline => Some(self.spline_second_derivatives()),
            Interpolation::Linear => None,
        };
        let last = self.times.len() - 1;
        for (r, &t) in ts.iter().enumerate() {
            // index of the last node with time <= t
            let p = self.times.partition_point(|&s| s <= t);
            if p == 0 {
                out.row_mut(r).copy_from_slice(self.row(0));
                continue;
            }
            let j = p - 1;
            if j == last || self.times[j] == t {
                out.row_mut(r).copy_from_slice(self.row(j));
                continue;
            }
            let (t0, t1) = (self.times[j], self.times[j + 1]);
            let d = t1 - t0;
            let u = (t - t0) / d;
            for x in 0..n {
                let (y0, y1) = (self.get(j, x), self.get(j + 1, x));
                let mut v = y0 + u * (y1 - y0);
                if let Some(m) = &second {
                    let (m0, m1) = (m[j * n + x], m[(j + 1) * n + x]);
                    let a = T::one() - u;
                    v = v + d * d / T::lit(6.0) * ((a * a * a - a) * m0 + (u * u * u - u) * m1);
                }
                out.set(r, x, v);
            }
        }
        out.interpolation = how;
        out
    }

    // Natural-spline second derivatives per run of strictly increasing times.
    fn spline_second_derivatives(&self) -> Vec<T> {
        let n = self.n_states;
        let mut m = vec![T::zero(); self.data.len()];
        let len = self.times.len();
        let mut s = 0;
        while s < len {
            let mut e = s;
            while e + 1 < len && self.times[e + 1] > self.times[e] {
                e += 1;
            }
            if e - s >= 2 {
                for x in 0..n {
                    self.natural_spline(s, e, x, &mut m);
                }
            }
            s = e + 1;
        }
        m
    }

    fn natural_spline(&self, s: usize, e: usize, x: usize, m: &mut [T]) {
        let n = self.n_states;
        let k = e - s + 1;
        let two = T::lit(2.0);
        let six = T::lit(6.0);
        // Thomas algorithm on interior unknowns
        let mut c = vec![T::zero(); k];
        let mut d = vec![T::zero(); k];
        for i in 1..k - 1 {
            let (a0, a1, a2) = (self.times[s + i - 1], self.times[s + i], self.times[s + i + 1]);
            let (h0, h1) = (a1 - a0, a2 - a1);
            let (y0, y1, y2) = (self.get(s + i - 1, x), self.get(s + i, x), self.get(s + i + 1, x));
            let rhs = six * ((y2 - y1) / h1 - (y1 - y0) / h0);
            let diag = two * (h0 + h1) - h0 * c[i - 1];
            c[i] = h1 / diag;
            d[i] = (rhs - h0 * d[i - 1]) / diag;
        }
        let mut next = T::zero();
        for i in (1..k - 1).rev() {
            let v = d[i] - c[i] * next;
            m[(s + i) * n + x] = v;
            next = v;
        }
    }

    /// CSV with header `time,<names...>`.
    pub fn write_csv<W: Write>(&self, w: W, names: &[String]) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut head = vec!["time".to_string()];
        if names.len() == self.n_states {
            head.extend(names.iter().cloned());
        } else {
            head.extend((1..=self.n_states).map(|i| format!("state_{i}")));
        }
        wr.write_record(&head)?;
        for (i, t) in self.times.iter().enumerate() {
            let mut rec = vec![format!("{t}")];
            rec.extend(self.row(i).iter().map(|v| format!("{v}")));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<std::path::Path>, names: &[String]) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f), names)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_contains_observation_pairs() {
        let g = TimeGrid::build(&[0.25, 0.5], 1.0, 0.1).unwrap();
        let l = g.obs_left_index(0).unwrap();
        assert_eq!(g.times[l], 0.25);
        assert_eq!(g.kinds[l + 1], NodeKind::ObsRight(0));
        assert_eq!(g.applied[l], 0);
        assert_eq!(g.applied[l + 1], 1);
        assert!(g.max_step() <= 0.1 + 1e-15);
        assert_eq!(*g.times.last().unwrap(), 1.0);
        assert_eq!(g.applied[g.last()], 2);
        assert!(g.times.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn tiny_remainder_is_absorbed() {
        let g = TimeGrid::build(&[], 1.005, 0.1).unwrap();
        let steps: Vec<f64> = g.times.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(steps.iter().all(|&s| s <= 0.1 + 1e-12 && s > 0.05));
        assert_eq!(steps.len(), 11);
        assert!((steps[9] - steps[10]).abs() < 1e-12);
        let g = TimeGrid::build(&[], 1.0, 0.1).unwrap();
        assert_eq!(g.len(), 11);
    }

    #[test]
    fn observation_at_zero_and_errors() {
        let g = TimeGrid::build(&[0.0], 0.3, 0.1).unwrap();
        assert_eq!(g.kinds[0], NodeKind::ObsLeft(0));
        assert_eq!(g.kinds[1], NodeKind::ObsRight(0));
        assert!(TimeGrid::build(&[0.3], 0.3, 0.1).is_err());
        assert!(TimeGrid::build(&[], 1.0, 0.0).is_err());
    }

    #[test]
    fn spline_reproduces_cubics_inside_runs() {
        let times: Vec<f64> = (0..=40).map(|i| i as f64 * 0.05).collect();
        let rows: Vec<Vec<f64>> = times.iter().map(|&t| vec![t.sin(), 2.0 * t]).collect();
        let gf = GridFunction::from_rows(times, &rows).unwrap();
        let r = gf.resample(&[0.512, 1.333], Interpolation::CubicSpline);
        assert!((r.get(0, 0) - 0.512_f64.sin()).abs() < 1e-5);
        assert!((r.get(1, 1) - 2.666).abs() < 1e-12);
        let l = gf.resample(&[1.333], Interpolation::Linear);
        assert!((l.get(0, 0) - 1.333_f64.sin()).abs() < 1e-3);
    }

    #[test]
    fn value_at_duplicate_time_is_right_limit() {
        let gf =
            GridFunction::from_rows(vec![0.0, 1.0, 1.0, 2.0], &[vec![0.0], vec![1.0], vec![5.0], vec![5.0]]).unwrap();
        assert_eq!(gf.value_at(1.0), vec![5.0]);
        assert_eq!(gf.value_at(0.5), vec![0.5]);
    }
}
