//! Banded linear solver for the collocation Newton systems.
//!
//! The stacked two-point boundary value residual couples each 12-dim node
//! only to its neighbour, so the Jacobian is banded with half-bandwidths
//! 17 and dense factorization would waste two orders of magnitude at the
//! refinement grids the tests use. Storage follows the LAPACK band layout:
//! `kl` extra super-diagonal rows absorb fill-in from partial pivoting.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BandError {
    #[error("matrix is singular at elimination column {col}")]
    Singular { col: usize },
    #[error("dimension mismatch: matrix order {n}, rhs length {len}")]
    Shape { n: usize, len: usize },
}

/// Square band matrix with `kl` sub- and `ku` super-diagonals.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    /// Row-major `(2 kl + ku + 1) x n`; entry (r, c) lives at band row
    /// `kl + ku + r - c`, column `c`.
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        Self { n, kl, ku, data: vec![0.0; (2 * kl + ku + 1) * n] }
    }

    pub fn order(&self) -> usize {
        self.n
    }

    #[inline]
    fn slot(&self, r: usize, c: usize) -> usize {
        debug_assert!(r < self.n && c < self.n);
        let band_row = self.kl + self.ku + r - c;
        band_row * self.n + c
    }

    #[inline]
    pub fn in_band(&self, r: usize, c: usize) -> bool {
        (r as isize - c as isize) <= self.kl as isize
            && (c as isize - r as isize) <= (self.ku + self.kl) as isize
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        if self.in_band(r, c) {
            self.data[self.slot(r, c)]
        } else {
            0.0
        }
    }

    /// Set an entry; `(r, c)` must lie within the declared band.
    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(
            if c >= r { c - r <= self.ku } else { r - c <= self.kl },
            "entry ({r}, {c}) outside band kl={} ku={}",
            self.kl,
            self.ku
        );
        let idx = self.slot(r, c);
        self.data[idx] = v;
    }

    #[inline]
    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        let idx = self.slot(r, c);
        self.data[idx] += v;
    }

    pub fn reset(&mut self) {
        self.data.fill(0.0);
    }

    /// Solve `A x = rhs` in place by Gaussian elimination with partial
    /// pivoting, consuming the factorization workspace. The matrix content
    /// is destroyed.
    pub fn solve_in_place(&mut self, rhs: &mut [f64]) -> Result<(), BandError> {
        let n = self.n;
        if rhs.len() != n {
            return Err(BandError::Shape { n, len: rhs.len() });
        }
        let (kl, ku) = (self.kl, self.ku);
        let width = kl + ku;

        for k in 0..n {
            // Pivot search within the sub-diagonal reach of column k.
            let last = (k + kl).min(n - 1);
            let mut piv = k;
            let mut best = self.get(k, k).abs();
            for r in k + 1..=last {
                let v = self.get(r, k).abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best < 1e-300 {
                return Err(BandError::Singular { col: k });
            }
            if piv != k {
                let hi = (k + width).min(n - 1);
                for c in k..=hi {
                    let a = self.get(k, c);
                    let b = self.get(piv, c);
                    let ik = self.slot(k, c);
                    self.data[ik] = b;
                    let ip = self.slot(piv, c);
                    self.data[ip] = a;
                }
                rhs.swap(k, piv);
            }
            let pivot = self.get(k, k);
            for r in k + 1..=last {
                let l = self.get(r, k) / pivot;
                if l == 0.0 {
                    continue;
                }
                let hi = (k + width).min(n - 1);
                for c in k + 1..=hi {
                    let v = l * self.get(k, c);
                    let idx = self.slot(r, c);
                    self.data[idx] -= v;
                }
                rhs[r] -= l * rhs[k];
            }
        }

        for k in (0..n).rev() {
            let hi = (k + width).min(n - 1);
            let mut acc = rhs[k];
            for c in k + 1..=hi {
                acc -= self.get(k, c) * rhs[c];
            }
            rhs[k] = acc / self.get(k, k);
        }
        Ok(())
    }
}
