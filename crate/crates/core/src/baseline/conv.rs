//! Online causal convolution with a fixed kernel whose inputs arrive one at
//! a time, split into segments separated by multiplicative barriers.
//!
//! `history(s) = Σ_{s' < s} a[s'] k[s − s'] Π(barriers between s' and s)`.
//! Inside a segment the classic relaxed (power-of-two block) scheme keeps the
//! cost at `O(L log² L)`; at a barrier the whole segment is flushed into the
//! future with one FFT and every pending value beyond it is rescaled.

use num_complex::Complex;
use rustfft::{FftNum, FftPlanner};

use crate::Real;

const DIRECT_MAX: usize = 32;

pub(crate) struct OnlineConv<T: FftNum> {
    kernel: Vec<T>,
    pending: Vec<T>,
    seg_start: usize,
    seg_end: usize,
    vals: Vec<T>,
    // FFT of kernel[p..2p) zero-padded to 2p, per level p
    levels: Vec<(usize, Vec<Complex<T>>)>,
    planner: FftPlanner<T>,
}

impl<T: Real + FftNum> OnlineConv<T> {
    /// `len` is the number of sweep positions; the first segment ends
    /// (exclusive) at `first_end`.
    pub fn new(kernel: Vec<T>, len: usize, first_end: usize) -> Self {
        OnlineConv {
            kernel,
            pending: vec![T::zero(); len],
            seg_start: 0,
            seg_end: first_end.min(len),
            vals: Vec::new(),
            levels: Vec::new(),
            planner: FftPlanner::new(),
        }
    }

    #[inline]
    pub fn history(&self, s: usize) -> T {
        self.pending[s]
    }

    /// Adds an externally computed contribution at position `s`.
    pub fn add(&mut self, s: usize, v: T) {
        self.pending[s] = self.pending[s] + v;
    }

    #[inline]
    fn k(&self, d: usize) -> T {
        self.kernel.get(d).copied().unwrap_or(T::zero())
    }

    /// Appends the input at the next position of the current segment.
    pub fn push(&mut self, a: T) {
        self.vals.push(a);
        let i = self.vals.len() - 1;
        let local_end = self.seg_end - self.seg_start;
        let mut p = 1;
        while (i + 1).is_multiple_of(p) {
            let first_dest = i + 1;
            if first_dest >= local_end || p >= self.kernel.len() {
                break;
            }
            let k0 = i + 1 - p;
            if p <= DIRECT_MAX {
                for u in 0..p {
                    let au = self.vals[k0 + u];
                    if au == T::zero() {
                        continue;
                    }
                    for v in 0..p {
                        let dest = first_dest + u + v;
                        if dest >= local_end {
                            break;
                        }
                        let g = self.seg_start + dest;
                        self.pending[g] = self.pending[g] + au * self.k(p + v);
                    }
                }
            } else {
                let out = self.block_conv(k0, p);
                for (j, &c) in out.iter().enumerate() {
                    let dest = first_dest + j;
                    if dest >= local_end {
                        break;
                    }
                    let g = self.seg_start + dest;
                    self.pending[g] = self.pending[g] + c;
                }
            }
            p *= 2;
        }
    }

    fn level_fft(&mut self, p: usize) -> usize {
        if let Some(pos) = self.levels.iter().position(|(q, _)| *q == p) {
            return pos;
        }
        let mut buf: Vec<Complex<T>> =
            (0..2 * p).map(|j| Complex::new(if j < p { self.k(p + j) } else { T::zero() }, T::zero())).collect();
        self.planner.plan_fft_forward(2 * p).process(&mut buf);
        self.levels.push((p, buf));
        self.levels.len() - 1
    }

    // vals[k0..k0+p) ⊛ kernel[p..2p), length 2p − 1
    fn block_conv(&mut self, k0: usize, p: usize) -> Vec<T> {
        let lv = self.level_fft(p);
        let n = 2 * p;
        let mut buf: Vec<Complex<T>> =
            (0..n).map(|j| Complex::new(if j < p { self.vals[k0 + j] } else { T::zero() }, T::zero())).collect();
        self.planner.plan_fft_forward(n).process(&mut buf);
        for (b, k) in buf.iter_mut().zip(&self.levels[lv].1) {
            *b = *b * *k;
        }
        self.planner.plan_fft_inverse(n).process(&mut buf);
        let scale = T::one() / T::from_usize_lossy(n);
        buf[..n - 1].iter().map(|c| c.re * scale).collect()
    }

    /// Closes the current segment after its last push: flushes it into all
    /// later positions, multiplies everything pending beyond it by `factor`,
    /// and opens the next segment ending at `next_end`.
    pub fn barrier(&mut self, factor: T, next_end: usize) {
        let len = self.pending.len();
        let l = self.vals.len();
        let last = self.seg_start + l; // first position after the segment
        if last < len && l > 0 {
            let span = len - self.seg_start; // local destinations 0..span
            let klen = self.kernel.len().min(span);
            if l <= DIRECT_MAX || klen <= DIRECT_MAX {
                for (k, &a) in self.vals.iter().enumerate() {
                    if a == T::zero() {
                        continue;
                    }
                    for dest in l.max(k + 1)..span.min(k + klen) {
                        let g = self.seg_start + dest;
                        self.pending[g] = self.pending[g] + a * self.kernel[dest - k];
                    }
                }
            } else {
                let n = (l + klen).next_power_of_two();
                let mut a: Vec<Complex<T>> =
                    (0..n).map(|j| Complex::new(if j < l { self.vals[j] } else { T::zero() }, T::zero())).collect();
                let mut b: Vec<Complex<T>> = (0..n)
                    .map(|j| Complex::new(if j < klen { self.kernel[j] } else { T::zero() }, T::zero()))
                    .collect();
                let fwd = self.planner.plan_fft_forward(n);
                fwd.process(&mut a);
                fwd.process(&mut b);
                for (x, y) in a.iter_mut().zip(&b) {
                    *x = *x * *y;
                }
                self.planner.plan_fft_inverse(n).process(&mut a);
                let scale = T::one() / T::from_usize_lossy(n);
                for dest in l..span.min(l + klen - 1) {
                    let g = self.seg_start + dest;
                    self.pending[g] = self.pending[g] + a[dest].re * scale;
                }
            }
        }
        if factor != T::one() {
            for v in &mut self.pending[last.min(len)..] {
                *v = *v * factor;
            }
        }
        self.vals.clear();
        self.seg_start = last;
        self.seg_end = next_end.min(len).max(last);
    }
}
