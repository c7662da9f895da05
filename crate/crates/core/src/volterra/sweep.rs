//! Node-by-node solver for the renewal-type current system
//!
//! ```text
//! v(x,s) = ∫_0^s f(s−σ|x) υ(x,σ,s) u(x,σ) dσ + src(x,s),    u = Op v
//! ```
//!
//! in a sweep coordinate `s` (forward time, or reversed time for the backward
//! pass). `Op` is `M` or `M†`. The memory integral uses the product-trapezoid
//! rule; the newest node enters implicitly through its own near-end weight.

use crate::model::EmbeddedChain;
use crate::volterra::linalg::solve_in_place;
use crate::waiting::{gauss_cell_weights, LagIntegrals};
use crate::{Error, Real, Result};

/// Product-trapezoid weights for one cell with lags `a < b` given `Λ` and
/// `C = ∫Λ` at both ends.
#[inline]
pub(crate) fn product_weights<T: Real, K: LagIntegrals<T>>(
    kernel: &K,
    a: T,
    b: T,
    lam_a: T,
    c_a: T,
    lam_b: T,
    c_b: T,
) -> (T, T) {
    let width = b - a;
    if a > T::zero() && width <= a && width < T::lit(1e-5) {
        return gauss_cell_weights(kernel.law(), a, b);
    }
    let s = c_b - c_a;
    let far = ((s - width * lam_b) / width).max(T::zero());
    let near = (lam_a - s / width).max(T::zero());
    (near, far)
}

pub(crate) struct Sweep<'a, T, K> {
    kernels: &'a [K],
    chain: &'a EmbeddedChain<T>,
    adjoint: bool,
    n: usize,
    tol: T,
    pub times: Vec<T>,
    /// `ln υ` reference values per node: υ(j → i) = exp(lw_i − lw_j).
    lw: Vec<T>,
    /// Running count of zero likelihood factors; υ(j → i) = 0 if they differ.
    zc: Vec<u32>,
    /// Current entering the memory integral (φ forward, ψ_β backward).
    pub u: Vec<T>,
    /// Solved current (ψ forward, φ_β backward).
    pub v: Vec<T>,
    umax: Vec<T>,
    cutoff: Vec<T>,
    pub max_cutoff: Vec<T>,
    // scratch
    /// `1 / (times[j+1] − times[j])` for every stored cell.
    inv_dt: Vec<T>,
    hist: Vec<T>,
    near: Vec<T>,
    mat: Vec<T>,
}

impl<'a, T: Real, K: LagIntegrals<T>> Sweep<'a, T, K> {
    pub fn new(kernels: &'a [K], chain: &'a EmbeddedChain<T>, adjoint: bool, tol: T, capacity: usize) -> Self {
        let n = kernels.len();
        Sweep {
            kernels,
            chain,
            adjoint,
            n,
            tol,
            times: Vec::with_capacity(capacity),
            lw: Vec::with_capacity(capacity * n),
            zc: Vec::with_capacity(capacity * n),
            u: Vec::with_capacity(capacity * n),
            v: Vec::with_capacity(capacity * n),
            umax: vec![T::zero(); n],
            cutoff: vec![T::zero(); n],
            max_cutoff: vec![T::zero(); n],
            inv_dt: Vec::with_capacity(capacity),
            hist: vec![T::zero(); n],
            near: vec![T::zero(); n],
            mat: vec![T::zero(); n * n],
        }
    }

    #[inline]
    pub fn u_row(&self, i: usize) -> &[T] {
        &self.u[i * self.n..(i + 1) * self.n]
    }

    #[inline]
    pub fn v_row(&self, i: usize) -> &[T] {
        &self.v[i * self.n..(i + 1) * self.n]
    }

    pub fn apply_op(&self, g: &[T], out: &mut [T]) {
        if self.adjoint {
            self.chain.adjoint(g, out);
        } else {
            self.chain.forward(g, out);
        }
    }

    /// Memory integral at a prospective node `(t, lw, zc)` over all stored
    /// nodes. Returns explicit part in `hist` and the implicit weight of the
    /// new node in `near`.
    fn history(&mut self, t: T, lw: &[T], zc: &[u32]) {
        let n = self.n;
        let m = self.times.len();
        let gauss_width = T::lit(1e-5);
        for x in 0..n {
            let kern = &self.kernels[x];
            let cut = self.cutoff[x];
            let mut acc = T::zero();
            let mut near_new = T::zero();
            let (mut a, mut lam_a, mut c_a) = (T::zero(), T::one(), T::zero());
            let mut fresh = true; // near end of the current cell is the new node
            let mut u_near = T::zero();
            let (mut key_z, mut key_l) = (u32::MAX, T::nan());
            let mut ups = T::zero();
            for j in (0..m).rev() {
                if a > cut {
                    break;
                }
                let idx = j * n + x;
                let (z, l) = (self.zc[idx], self.lw[idx]);
                if z != key_z || l != key_l {
                    key_z = z;
                    key_l = l;
                    ups = if z == zc[x] { (lw[x] - l).exp() } else { T::zero() };
                }
                let u_far = ups * self.u[idx];
                let b = t - self.times[j];
                if b > a {
                    let (lam_b, c_b) = kern.survival_and_cum(b);
                    let width = b - a;
                    let (wn, wf) = if a > T::zero() && width <= a && width < gauss_width {
                        gauss_cell_weights(kern.law(), a, b)
                    } else {
                        // 1/width from the stored node spacing unless this is the newest cell
                        let inv = if fresh { T::one() / width } else { self.inv_dt[j] };
                        let sc = (c_b - c_a) * inv;
                        ((lam_a - sc).max(T::zero()), (sc - lam_b).max(T::zero()))
                    };
                    if fresh {
                        near_new = near_new + wn;
                    } else {
                        acc = acc + wn * u_near;
                    }
                    acc = acc + wf * u_far;
                    a = b;
                    lam_a = lam_b;
                    c_a = c_b;
                }
                fresh = false;
                u_near = u_far;
            }
            self.hist[x] = acc;
            self.near[x] = near_new;
        }
    }

    /// Appends a node and solves `(I − diag(near) Op) v = hist + src`.
    /// Returns the history-only part `v − src` in `hist_out`.
    pub fn push(&mut self, t: T, lw: &[T], zc: &[u32], src: &[T], hist_out: &mut [T]) -> Result<()> {
        let n = self.n;
        if let Some(&last) = self.times.last() {
            if t < last {
                return Err(Error::state("sweep nodes must be non-decreasing"));
            }
        }
        self.history(t, lw, zc);
        let mut rhs: Vec<T> = (0..n).map(|x| self.hist[x] + src[x]).collect();
        if self.near.iter().any(|&w| w > T::zero()) {
            for x in 0..n {
                for y in 0..n {
                    let op = if self.adjoint { self.chain.prob(x, y) } else { self.chain.prob(y, x) };
                    let id = if x == y { T::one() } else { T::zero() };
                    self.mat[x * n + y] = id - self.near[x] * op;
                }
            }
            if !solve_in_place(&mut self.mat, &mut rhs, n) {
                return Err(Error::Instability { interval: 0, detail: "singular implicit system".into() });
            }
        }
        let mut u = vec![T::zero(); n];
        self.apply_op(&rhs, &mut u);
        for x in 0..n {
            hist_out[x] = rhs[x] - src[x];
        }
        if let Some(&last) = self.times.last() {
            self.inv_dt.push(T::one() / (t - last));
        }
        self.times.push(t);
        self.lw.extend_from_slice(lw);
        self.zc.extend_from_slice(zc);
        self.v.extend_from_slice(&rhs);
        self.u.extend_from_slice(&u);
        self.update_cutoffs(&u);
        Ok(())
    }

    /// Appends a node whose entering current `u` is already known, so the
    /// newest node's own weight contributes explicitly: `v = hist + near∘u + src`.
    pub fn push_explicit(&mut self, t: T, lw: &[T], zc: &[u32], src: &[T], u: &[T], hist_out: &mut [T]) -> Result<()> {
        let n = self.n;
        if let Some(&last) = self.times.last() {
            if t < last {
                return Err(Error::state("sweep nodes must be non-decreasing"));
            }
        }
        self.history(t, lw, zc);
        for x in 0..n {
            hist_out[x] = self.hist[x] + self.near[x] * u[x];
        }
        if let Some(&last) = self.times.last() {
            self.inv_dt.push(T::one() / (t - last));
        }
        self.times.push(t);
        self.lw.extend_from_slice(lw);
        self.zc.extend_from_slice(zc);
        self.v.extend((0..n).map(|x| hist_out[x] + src[x]));
        self.u.extend_from_slice(u);
        self.update_cutoffs(u);
        Ok(())
    }

    /// Drops nodes from index `len` on.
    pub fn truncate(&mut self, len: usize) {
        let n = self.n;
        self.times.truncate(len);
        self.inv_dt.truncate(len.saturating_sub(1));
        self.lw.truncate(len * n);
        self.zc.truncate(len * n);
        self.u.truncate(len * n);
        self.v.truncate(len * n);
    }

    fn update_cutoffs(&mut self, u: &[T]) {
        for x in 0..self.n {
            let a = u[x].abs();
            if a > self.umax[x] * T::lit(2.0) || self.cutoff[x] == T::zero() {
                self.umax[x] = self.umax[x].max(a).max(T::min_positive_value());
                let law = self.kernels[x].law();
                self.cutoff[x] = if self.tol > T::zero() {
                    law.survival_quantile(self.tol / (T::lit(4.0) * self.umax[x]))
                } else {
                    T::infinity()
                };
                self.max_cutoff[x] = self.max_cutoff[x].max(self.cutoff[x]);
            }
        }
    }
}
