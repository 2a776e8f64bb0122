//! Symmetric banded matrices with an in-place Cholesky factorization.

/// Lower band storage: `data[i * (bw + 1) + k] = A[i][i - k]`.
#[derive(Clone, Debug)]
pub(crate) struct SymBanded {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl SymBanded {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i >= j && i - j <= self.bw);
        i * (self.bw + 1) + (i - j)
    }

    /// Adds `v` to `A[i][j]` (and implicitly `A[j][i]`).
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    pub fn add_diagonal(&mut self, v: f64) {
        for i in 0..self.n {
            let k = self.idx(i, i);
            self.data[k] += v;
        }
    }

    /// Decouples dof `i`: clears its row and column and sets the diagonal to `d`.
    pub fn isolate(&mut self, i: usize, d: f64) {
        let lo = i.saturating_sub(self.bw);
        for j in lo..i {
            let k = self.idx(i, j);
            self.data[k] = 0.0;
        }
        for j in i + 1..(i + self.bw + 1).min(self.n) {
            let k = self.idx(j, i);
            self.data[k] = 0.0;
        }
        let k = self.idx(i, i);
        self.data[k] = d;
    }

    pub fn max_abs_diagonal(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i).abs()).fold(0.0, f64::max)
    }

    #[cfg(test)]
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            for j in lo..=i {
                let a = self.data[self.idx(i, j)];
                y[i] += a * x[j];
                if i != j {
                    y[j] += a * x[i];
                }
            }
        }
        y
    }

    /// Cholesky factor `L` with `A = L Lᵀ`, or `None` if `A` is not positive definite.
    pub fn cholesky(mut self) -> Option<Cholesky> {
        let bw = self.bw;
        for i in 0..self.n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut s = self.data[self.idx(i, j)];
                let klo = lo.max(j.saturating_sub(bw));
                for k in klo..j {
                    s -= self.data[self.idx(i, k)] * self.data[self.idx(j, k)];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return None;
                    }
                    let k = self.idx(i, i);
                    self.data[k] = s.sqrt();
                } else {
                    let d = self.data[self.idx(j, j)];
                    let k = self.idx(i, j);
                    self.data[k] = s / d;
                }
            }
        }
        Some(Cholesky { l: self })
    }

    /// `A = L D Lᵀ` without pivoting, or `None` on a (near-)zero pivot.
    pub fn ldlt(mut self) -> Option<Ldlt> {
        let bw = self.bw;
        for i in 0..self.n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut s = self.data[self.idx(i, j)];
                let klo = lo.max(j.saturating_sub(bw));
                for k in klo..j {
                    s -= self.data[self.idx(i, k)] * self.data[self.idx(j, k)] * self.data[self.idx(k, k)];
                }
                if i == j {
                    if !s.is_finite() || s.abs() < 1e-300 {
                        return None;
                    }
                    let k = self.idx(i, i);
                    self.data[k] = s;
                } else {
                    let d = self.data[self.idx(j, j)];
                    let k = self.idx(i, j);
                    self.data[k] = s / d;
                }
            }
        }
        Some(Ldlt { f: self })
    }
}

/// Unit lower factor stored below the diagonal, `D` on it.
pub(crate) struct Ldlt {
    f: SymBanded,
}

impl Ldlt {
    /// Number of negative pivots, i.e. of negative eigenvalues (Sylvester).
    pub fn negative_count(&self) -> usize {
        (0..self.f.n).filter(|&i| self.f.get(i, i) < 0.0).count()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let f = &self.f;
        let (n, bw) = (f.n, f.bw);
        let mut y = b.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for k in lo..i {
                y[i] -= f.data[f.idx(i, k)] * y[k];
            }
        }
        for (i, yi) in y.iter_mut().enumerate() {
            *yi /= f.data[f.idx(i, i)];
        }
        for i in (0..n).rev() {
            for k in i + 1..(i + bw + 1).min(n) {
                y[i] -= f.data[f.idx(k, i)] * y[k];
            }
        }
        y
    }
}

pub(crate) struct Cholesky {
    l: SymBanded,
}

impl Cholesky {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let l = &self.l;
        let n = l.n;
        let bw = l.bw;
        let mut y = b.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut s = y[i];
            for k in lo..i {
                s -= l.data[l.idx(i, k)] * y[k];
            }
            y[i] = s / l.data[l.idx(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..(i + bw + 1).min(n) {
                s -= l.data[l.idx(k, i)] * y[k];
            }
            y[i] = s / l.data[l.idx(i, i)];
        }
        y
    }
}
