//! Memory kernel `κ` with `ℒ{κ} = ℒ{f} / ℒ{Λ}` for the families where it is
//! a finite exponential sum, and the master equation
//!
//! ```text
//! dp/dt = (M − I) [ κ * (p − g_p) + g_φ ]
//! ```
//!
//! solved directly as an independent check of the current-based solver.

use num_complex::Complex;

use crate::model::CtsmcModel;
use crate::volterra::grid::GridFunction;
use crate::volterra::{initial_term, BoundaryCondition, BoundaryKind};
use crate::waiting::WaitingTime;
use crate::{Error, Real, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum MemoryKernel<T> {
    /// `κ(τ) = weight · δ(τ)`: the Markov case.
    Instantaneous { weight: T },
    /// `κ(τ) = Re Σ_j coeffs_j exp(exponents_j τ)`; conjugate pairs cancel the
    /// imaginary parts.
    Exponentials { coeffs: Vec<Complex<T>>, exponents: Vec<Complex<T>> },
}

impl<T: Real> MemoryKernel<T> {
    pub fn evaluate(&self, tau: T) -> T {
        match self {
            MemoryKernel::Instantaneous { .. } => T::zero(),
            MemoryKernel::Exponentials { coeffs, exponents } => {
                coeffs.iter().zip(exponents).fold(T::zero(), |acc, (a, s)| acc + (a * (s * tau).exp()).re)
            }
        }
    }

    /// `ℒ{κ}(s)` for real `s > 0`.
    pub fn laplace(&self, s: T) -> T {
        match self {
            MemoryKernel::Instantaneous { weight } => *weight,
            MemoryKernel::Exponentials { coeffs, exponents } => coeffs
                .iter()
                .zip(exponents)
                .fold(T::zero(), |acc, (a, e)| acc + (a / (Complex::new(s, T::zero()) - e)).re),
        }
    }

    /// Largest imaginary residue of the exponential sum on a τ grid; zero up
    /// to rounding for a well-formed kernel.
    pub fn imaginary_residue(&self, taus: &[T]) -> T {
        match self {
            MemoryKernel::Instantaneous { .. } => T::zero(),
            MemoryKernel::Exponentials { coeffs, exponents } => taus
                .iter()
                .map(|&t| {
                    coeffs
                        .iter()
                        .zip(exponents)
                        .fold(Complex::new(T::zero(), T::zero()), |acc, (a, s)| acc + a * (s * t).exp())
                        .im
                        .abs()
                })
                .fold(T::zero(), T::max),
        }
    }
}

/// Partial-fraction kernel for Exponential and integer-shape Gamma laws.
///
/// For Gamma(k, r): `ℒ{κ}(s) = r^k / Π_{j=1}^{k−1} (s − s_j)` with
/// `s_j = r (e^{2πij/k} − 1)`, hence `κ(τ) = Σ_j A_j e^{s_j τ}`.
pub fn memory_kernel<T: Real>(dist: &WaitingTime<T>) -> Result<MemoryKernel<T>> {
    dist.validate()?;
    match *dist {
        WaitingTime::Exponential { rate } => Ok(MemoryKernel::Instantaneous { weight: rate }),
        WaitingTime::Gamma { shape, rate } => {
            let k = shape.round();
            if (shape - k).abs() > T::lit(1e-12) || k < T::one() {
                return Err(Error::KernelUnavailable(format!("gamma shape {shape} (not an integer)")));
            }
            let k = k.to_usize().unwrap_or(0);
            if k == 1 {
                return Ok(MemoryKernel::Instantaneous { weight: rate });
            }
            if k > 32 {
                return Err(Error::KernelUnavailable(format!("gamma shape {k} (too large)")));
            }
            let two_pi = T::lit(2.0 * std::f64::consts::PI);
            let poles: Vec<Complex<T>> = (1..k)
                .map(|j| {
                    let ang = two_pi * T::from_usize_lossy(j) / T::from_usize_lossy(k);
                    Complex::new(rate * (ang.cos() - T::one()), rate * ang.sin())
                })
                .collect();
            let num = Complex::new(rate.powi(k as i32), T::zero());
            let coeffs = poles
                .iter()
                .enumerate()
                .map(|(j, &sj)| {
                    let den = poles
                        .iter()
                        .enumerate()
                        .filter(|&(l, _)| l != j)
                        .fold(Complex::new(T::one(), T::zero()), |acc, (_, &sl)| acc * (sj - sl));
                    num / den
                })
                .collect();
            Ok(MemoryKernel::Exponentials { coeffs, exponents: poles })
        }
        WaitingTime::Weibull { .. } => Err(Error::KernelUnavailable("weibull".into())),
    }
}

// Auxiliary state: z_j' = s_j z_j + input, so κ * input = Σ A_j z_j.
struct Convolver<T> {
    kernel: MemoryKernel<T>,
}

impl<T: Real> Convolver<T> {
    fn n_aux(&self) -> usize {
        match &self.kernel {
            MemoryKernel::Instantaneous { .. } => 0,
            MemoryKernel::Exponentials { exponents, .. } => exponents.len(),
        }
    }

    fn output(&self, input: T, z: &[Complex<T>]) -> T {
        match &self.kernel {
            MemoryKernel::Instantaneous { weight } => *weight * input,
            MemoryKernel::Exponentials { coeffs, .. } => {
                coeffs.iter().zip(z).fold(T::zero(), |acc, (a, zj)| acc + (a * zj).re)
            }
        }
    }

    fn derivative(&self, input: T, z: &[Complex<T>], dz: &mut [Complex<T>]) {
        if let MemoryKernel::Exponentials { exponents, .. } = &self.kernel {
            for ((d, s), zj) in dz.iter_mut().zip(exponents).zip(z) {
                *d = s * zj + Complex::new(input, T::zero());
            }
        }
    }
}

/// Integrates the kernel master equation with classical RK4 at step `dt`
/// and returns `p(x, t)` on the uniform grid `0, dt, ..., horizon`.
pub fn solve_kernel_master_equation<T: Real>(
    model: &CtsmcModel<T>,
    bc: &BoundaryCondition,
    horizon: T,
    dt: T,
) -> Result<GridFunction<T>> {
    model.validate()?;
    if !(dt > T::zero()) || !(horizon > T::zero()) {
        return Err(Error::domain("horizon and step must be > 0"));
    }
    let n = model.n_states();
    let conv: Vec<Convolver<T>> =
        model.waiting.iter().map(|w| memory_kernel(w).map(|kernel| Convolver { kernel })).collect::<Result<_>>()?;
    let steps = (horizon / dt).ceil().to_usize().unwrap_or(1).max(1);
    let dt = horizon / T::from_usize_lossy(steps);
    let offsets: Vec<usize> = conv
        .iter()
        .scan(0, |acc, c| {
            let o = *acc;
            *acc += c.n_aux();
            Some(o)
        })
        .collect();
    let n_aux: usize = conv.iter().map(|c| c.n_aux()).sum();

    let gp = |t: T| -> Vec<T> { (0..n).map(|x| initial_term(bc.initial, model, x, t, BoundaryKind::P)).collect() };
    let gf =
        |t: T| -> Vec<T> { (0..n).map(|x| initial_term(bc.initial, model, x, t, BoundaryKind::Current)).collect() };

    // state: p (n), z (aux of p), w (aux of g_p)
    let rhs = |t: T,
               p: &[T],
               z: &[Complex<T>],
               w: &[Complex<T>],
               dp: &mut [T],
               dz: &mut [Complex<T>],
               dw: &mut [Complex<T>]| {
        let g = gp(t);
        let f = gf(t);
        let mut psi = vec![T::zero(); n];
        for x in 0..n {
            let (o, m) = (offsets[x], conv[x].n_aux());
            let kp = conv[x].output(p[x], &z[o..o + m]);
            let kg = conv[x].output(g[x], &w[o..o + m]);
            psi[x] = kp - kg + f[x];
            conv[x].derivative(p[x], &z[o..o + m], &mut dz[o..o + m]);
            conv[x].derivative(g[x], &w[o..o + m], &mut dw[o..o + m]);
        }
        model.embedded.forward(&psi, dp);
        for x in 0..n {
            dp[x] = dp[x] - psi[x];
        }
    };

    let zero_c = Complex::new(T::zero(), T::zero());
    let mut p = gp(T::zero());
    let mut z = vec![zero_c; n_aux];
    let mut w = vec![zero_c; n_aux];
    let mut out = GridFunction::zeros((0..=steps).map(|i| dt * T::from_usize_lossy(i)).collect(), n);
    out.row_mut(0).copy_from_slice(&p);

    let mut k = [
        (vec![T::zero(); n], vec![zero_c; n_aux], vec![zero_c; n_aux]),
        (vec![T::zero(); n], vec![zero_c; n_aux], vec![zero_c; n_aux]),
        (vec![T::zero(); n], vec![zero_c; n_aux], vec![zero_c; n_aux]),
        (vec![T::zero(); n], vec![zero_c; n_aux], vec![zero_c; n_aux]),
    ];
    let half = T::lit(0.5);
    let sixth = T::one() / T::lit(6.0);
    for step in 0..steps {
        let t = dt * T::from_usize_lossy(step);
        for stage in 0..4 {
            let (c, tt) = match stage {
                0 => (T::zero(), t),
                3 => (T::one(), t + dt),
                _ => (half, t + half * dt),
            };
            let (pp, zz, ww) = if stage == 0 {
                (p.clone(), z.clone(), w.clone())
            } else {
                let prev = &k[stage - 1];
                (
                    p.iter().zip(&prev.0).map(|(a, d)| *a + *d * c * dt).collect::<Vec<_>>(),
                    z.iter().zip(&prev.1).map(|(a, d)| a + d * (c * dt)).collect::<Vec<_>>(),
                    w.iter().zip(&prev.2).map(|(a, d)| a + d * (c * dt)).collect::<Vec<_>>(),
                )
            };
            let (dp, dz, dw) = &mut k[stage];
            rhs(tt, &pp, &zz, &ww, dp, dz, dw);
        }
        for x in 0..n {
            p[x] = p[x] + dt * sixth * (k[0].0[x] + T::lit(2.0) * (k[1].0[x] + k[2].0[x]) + k[3].0[x]);
        }
        for j in 0..n_aux {
            let two = T::lit(2.0);
            z[j] = z[j] + (k[0].1[j] + (k[1].1[j] + k[2].1[j]) * two + k[3].1[j]) * (dt * sixth);
            w[j] = w[j] + (k[0].2[j] + (k[1].2[j] + k[2].2[j]) * two + k[3].2[j]) * (dt * sixth);
        }
        out.row_mut(step + 1).copy_from_slice(&p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    type WaitingTime = crate::waiting::WaitingTime<f64>;

    #[test]
    fn kernel_examples() {
        let e = WaitingTime::exponential(3.0).unwrap();
        assert_eq!(memory_kernel(&e).unwrap(), MemoryKernel::Instantaneous { weight: 3.0 });
        let g1 = WaitingTime::gamma(1.0, 2.5).unwrap();
        assert_eq!(memory_kernel(&g1).unwrap(), MemoryKernel::Instantaneous { weight: 2.5 });
        let g2 = WaitingTime::gamma(2.0, 1.0).unwrap();
        let k = memory_kernel(&g2).unwrap();
        for &t in &[0.0, 0.3, 2.0] {
            assert!((k.evaluate(t) - (-2.0 * t).exp()).abs() < 1e-14);
        }
        assert!(matches!(memory_kernel(&WaitingTime::gamma(2.5, 1.0).unwrap()), Err(Error::KernelUnavailable(_))));
        assert!(matches!(memory_kernel(&WaitingTime::weibull(2.0, 1.0).unwrap()), Err(Error::KernelUnavailable(_))));
    }

    #[test]
    fn kernel_laplace_matches_ratio() {
        for k in 2..6 {
            let r = 1.3;
            let d = WaitingTime::gamma(k as f64, r).unwrap();
            let ker = memory_kernel(&d).unwrap();
            let taus: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
            assert!(ker.imaginary_residue(&taus) < 1e-12);
            for &s in &[0.5, 1.0, 4.0] {
                let fhat = (r / (s + r)).powi(k);
                let lhat = (1.0 - fhat) / s;
                assert!((ker.laplace(s) - fhat / lhat).abs() < 1e-10 * (fhat / lhat));
            }
        }
    }

    #[test]
    fn exponential_master_equation_is_ctmc() {
        let e = WaitingTime::exponential(1.0).unwrap();
        let m = CtsmcModel::new(vec![e, e], vec![vec![0.0, 1.0], vec![1.0, 0.0]], Some(vec![1.0, 0.0])).unwrap();
        let p = solve_kernel_master_equation(&m, &BoundaryCondition::default(), 1.0, 1e-3).unwrap();
        let last = p.len() - 1;
        assert!((p.get(last, 0) - 0.5 * (1.0 + (-2.0_f64).exp())).abs() < 1e-12);
    }
}
