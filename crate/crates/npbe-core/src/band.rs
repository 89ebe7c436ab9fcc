//! Complex banded LU factorization with partial pivoting.
//!
//! Storage follows the LAPACK `gbtrf` convention: a matrix with `kl`
//! subdiagonals and `ku` superdiagonals is stored in `2*kl + ku + 1` band
//! rows so the factorization can grow `kl` extra superdiagonals of fill.
//! Entry `A[i][j]` lives in band row `kl + ku + i - j`, column `j`.
//!
//! This covers every sparse system in the crate: the flux-form stencils
//! couple at most one node per axis direction, so the half bandwidth equals
//! the product of the faster axis node counts.

use num_complex::Complex64;

use crate::{Error, Result};

/// Banded complex matrix in expanded (factorizable) band storage.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    /// Band rows * n, row-major; band row r column j holds A[j + r - kl - ku][j].
    ab: Vec<Complex64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let rows = 2 * kl + ku + 1;
        BandMatrix {
            n,
            kl,
            ku,
            ab: vec![Complex64::ZERO; rows * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.n && j < self.n);
        let r = self.kl + self.ku + i - j;
        r * self.n + j
    }

    /// Returns `A[i][j]`; zero outside the band.
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        let (i64_, j64) = (i as i64, j as i64);
        if i64_ - j64 > self.kl as i64 || j64 - i64_ > self.ku as i64 {
            Complex64::ZERO
        } else {
            self.ab[self.slot(i, j)]
        }
    }

    /// Sets `A[i][j]`. Panics if the entry falls outside the declared band.
    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        let (i64_, j64) = (i as i64, j as i64);
        assert!(
            i64_ - j64 <= self.kl as i64 && j64 - i64_ <= self.ku as i64,
            "entry ({i},{j}) outside band kl={} ku={}",
            self.kl,
            self.ku
        );
        let s = self.slot(i, j);
        self.ab[s] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: Complex64) {
        let s = self.slot(i, j);
        self.ab[s] += v;
    }

    /// y = A x.
    pub fn matvec(&self, x: &[Complex64], y: &mut [Complex64]) {
        assert_eq!(x.len(), self.n);
        for i in 0..self.n {
            let jmin = i.saturating_sub(self.kl);
            let jmax = (i + self.ku).min(self.n - 1);
            let mut acc = Complex64::ZERO;
            for j in jmin..=jmax {
                acc += self.ab[self.slot(i, j)] * x[j];
            }
            y[i] = acc;
        }
    }

    /// y = A^H x.
    pub fn matvec_adjoint(&self, x: &[Complex64], y: &mut [Complex64]) {
        assert_eq!(x.len(), self.n);
        y.fill(Complex64::ZERO);
        for i in 0..self.n {
            let jmin = i.saturating_sub(self.kl);
            let jmax = (i + self.ku).min(self.n - 1);
            for j in jmin..=jmax {
                y[j] += self.ab[self.slot(i, j)].conj() * x[i];
            }
        }
    }

    /// LU factorization with partial pivoting; consumes the matrix.
    pub fn factor(mut self) -> Result<BandLu> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let mut ipiv = vec![0usize; n];
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            // pivot search down column j
            let mut jp = 0usize;
            let mut best = self.ab[self.slot(j, j)].norm_sqr();
            for p in 1..=km {
                let cand = self.ab[self.slot(j + p, j)].norm_sqr();
                if cand > best {
                    best = cand;
                    jp = p;
                }
            }
            ipiv[j] = j + jp;
            let pivot = self.ab[self.slot(j + jp, j)];
            if pivot == Complex64::ZERO || !pivot.re.is_finite() || !pivot.im.is_finite() {
                return Err(Error::SolveFailure(format!(
                    "singular or non-finite pivot at column {j}"
                )));
            }
            let ju = (j + ku + kl).min(n - 1);
            if jp != 0 {
                for col in j..=ju {
                    let a = self.slot(j, col);
                    let b = self.slot(j + jp, col);
                    self.ab.swap(a, b);
                }
            }
            let pivot = self.ab[self.slot(j, j)];
            for p in 1..=km {
                let s = self.slot(j + p, j);
                self.ab[s] /= pivot;
            }
            for col in (j + 1)..=ju {
                let ajk = self.ab[self.slot(j, col)];
                if ajk != Complex64::ZERO {
                    for p in 1..=km {
                        let s = self.slot(j + p, col);
                        let m = self.ab[self.slot(j + p, j)];
                        self.ab[s] -= m * ajk;
                    }
                }
            }
        }
        Ok(BandLu { mat: self, ipiv })
    }
}

/// Factored form of a [`BandMatrix`].
#[derive(Debug, Clone)]
pub struct BandLu {
    mat: BandMatrix,
    ipiv: Vec<usize>,
}

impl BandLu {
    pub fn dim(&self) -> usize {
        self.mat.n
    }

    /// Solves A x = b in place.
    pub fn solve(&self, b: &mut [Complex64]) {
        let (n, kl, ku) = (self.mat.n, self.mat.kl, self.mat.ku);
        assert_eq!(b.len(), n);
        // L solve with lazily applied pivots
        for j in 0..n {
            let p = self.ipiv[j];
            if p != j {
                b.swap(j, p);
            }
            let km = kl.min(n - 1 - j);
            let bj = b[j];
            if bj != Complex64::ZERO {
                for q in 1..=km {
                    b[j + q] -= self.mat.ab[self.mat.slot(j + q, j)] * bj;
                }
            }
        }
        // U solve; U has bandwidth ku + kl
        let kw = ku + kl;
        for j in (0..n).rev() {
            b[j] /= self.mat.ab[self.mat.slot(j, j)];
            let bj = b[j];
            if bj != Complex64::ZERO {
                let imin = j.saturating_sub(kw);
                for i in imin..j {
                    b[i] -= self.mat.ab[self.mat.slot(i, j)] * bj;
                }
            }
        }
    }

    /// Solves A^H x = b in place.
    pub fn solve_adjoint(&self, b: &mut [Complex64]) {
        let (n, kl, ku) = (self.mat.n, self.mat.kl, self.mat.ku);
        assert_eq!(b.len(), n);
        let kw = ku + kl;
        // U^H is lower triangular: forward substitution
        for j in 0..n {
            let imin = j.saturating_sub(kw);
            let mut acc = b[j];
            for i in imin..j {
                acc -= self.mat.ab[self.mat.slot(i, j)].conj() * b[i];
            }
            b[j] = acc / self.mat.ab[self.mat.slot(j, j)].conj();
        }
        // L^H is unit upper triangular; undo pivots in reverse
        for j in (0..n.saturating_sub(1)).rev() {
            let km = kl.min(n - 1 - j);
            let mut acc = b[j];
            for q in 1..=km {
                acc -= self.mat.ab[self.mat.slot(j + q, j)].conj() * b[j + q];
            }
            b[j] = acc;
            let p = self.ipiv[j];
            if p != j {
                b.swap(j, p);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;

    fn random_band(n: usize, kl: usize, ku: usize, rng: &mut CounterRng) -> BandMatrix {
        let mut m = BandMatrix::zeros(n, kl, ku);
        for i in 0..n {
            for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                m.set(i, j, Complex64::new(rng.symmetric(), rng.symmetric()));
            }
            // dominant diagonal keeps the test systems well conditioned
            let d = m.get(i, i) + Complex64::new(4.0 + kl as f64 + ku as f64, 1.0);
            m.set(i, i, d);
        }
        m
    }

    #[test]
    fn factor_solve_recovers_solution() {
        let mut rng = CounterRng::new(11).stream(0);
        for &(n, kl, ku) in &[(1usize, 0usize, 0usize), (7, 1, 1), (40, 3, 2), (60, 5, 9)] {
            let a = random_band(n, kl, ku, &mut rng);
            let x_true: Vec<Complex64> = (0..n)
                .map(|_| Complex64::new(rng.symmetric(), rng.symmetric()))
                .collect();
            let mut b = vec![Complex64::ZERO; n];
            a.matvec(&x_true, &mut b);
            let lu = a.clone().factor().unwrap();
            let mut x = b.clone();
            lu.solve(&mut x);
            let err: f64 = x
                .iter()
                .zip(&x_true)
                .map(|(p, q)| (p - q).norm())
                .fold(0.0, f64::max);
            assert!(err < 1e-11, "n={n} kl={kl} ku={ku}: err={err}");
        }
    }

    #[test]
    fn adjoint_solve_matches_adjoint_matvec() {
        let mut rng = CounterRng::new(12).stream(0);
        let a = random_band(35, 4, 2, &mut rng);
        let x_true: Vec<Complex64> = (0..35)
            .map(|_| Complex64::new(rng.symmetric(), rng.symmetric()))
            .collect();
        let mut b = vec![Complex64::ZERO; 35];
        a.matvec_adjoint(&x_true, &mut b);
        let lu = a.factor().unwrap();
        let mut x = b;
        lu.solve_adjoint(&mut x);
        let err: f64 = x
            .iter()
            .zip(&x_true)
            .map(|(p, q)| (p - q).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-11, "err={err}");
    }

    #[test]
    fn pivoting_handles_weak_diagonal() {
        // zero leading diagonal entry forces an interchange
        let mut m = BandMatrix::zeros(3, 1, 1);
        m.set(0, 0, Complex64::ZERO);
        m.set(0, 1, Complex64::new(2.0, 0.0));
        m.set(1, 0, Complex64::new(1.0, 0.0));
        m.set(1, 1, Complex64::new(1.0, 1.0));
        m.set(1, 2, Complex64::new(0.5, 0.0));
        m.set(2, 1, Complex64::new(-1.0, 0.0));
        m.set(2, 2, Complex64::new(3.0, -1.0));
        let x_true = vec![
            Complex64::new(1.0, 2.0),
            Complex64::new(-0.5, 0.25),
            Complex64::new(0.0, -1.0),
        ];
        let mut b = vec![Complex64::ZERO; 3];
        m.matvec(&x_true, &mut b);
        let lu = m.factor().unwrap();
        let mut x = b;
        lu.solve(&mut x);
        for (p, q) in x.iter().zip(&x_true) {
            assert!((p - q).norm() < 1e-13);
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        let mut m = BandMatrix::zeros(2, 1, 1);
        m.set(0, 0, Complex64::new(1.0, 0.0));
        m.set(0, 1, Complex64::new(1.0, 0.0));
        m.set(1, 0, Complex64::new(1.0, 0.0));
        m.set(1, 1, Complex64::new(1.0, 0.0));
        assert!(m.factor().is_err());
    }
}
