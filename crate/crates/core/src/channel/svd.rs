//! Small dense complex matrices and their singular value decomposition.

use num_complex::Complex64;

/// Row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMatrix {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<Complex64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged matrix rows");
        CMatrix {
            rows: r,
            cols: c,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = Complex64::new(v, 0.0);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn col(&self, j: usize) -> Vec<Complex64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn adjoint(&self) -> CMatrix {
        let mut out = CMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)].conj();
            }
        }
        out
    }

    pub fn mul_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.cols, "matrix-vector shape mismatch");
        (0..self.rows)
            .map(|i| {
                self.data[i * self.cols..(i + 1) * self.cols]
                    .iter()
                    .zip(x)
                    .fold(Complex64::new(0.0, 0.0), |acc, (a, b)| acc + a * b)
            })
            .collect()
    }

    /// `selfᴴ x` without forming the adjoint.
    pub fn adjoint_mul_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.rows, "matrix-vector shape mismatch");
        (0..self.cols)
            .map(|j| (0..self.rows).fold(Complex64::new(0.0, 0.0), |acc, i| acc + self[(i, j)].conj() * x[i]))
            .collect()
    }

    pub fn matmul(&self, other: &CMatrix) -> CMatrix {
        assert_eq!(self.cols, other.rows, "matrix product shape mismatch");
        let mut out = CMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn frobenius_distance(&self, other: &CMatrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl std::ops::Index<(usize, usize)> for CMatrix {
    type Output = Complex64;

    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.cols + j]
    }
}

/// `H = U Σ Vᴴ` with square unitary `U` (`m × m`) and `V` (`n × n`) and
/// `min(m, n)` singular values in descending order.
#[derive(Debug, Clone, PartialEq)]
pub struct Svd {
    pub u: CMatrix,
    pub sigma: Vec<f64>,
    pub v: CMatrix,
}

impl Svd {
    pub fn reconstruct(&self) -> CMatrix {
        let (m, n) = (self.u.rows(), self.v.rows());
        let mut s = CMatrix::zeros(m, n);
        for (i, &v) in self.sigma.iter().enumerate() {
            s[(i, i)] = Complex64::new(v, 0.0);
        }
        self.u.matmul(&s).matmul(&self.v.adjoint())
    }
}

/// `‖x‖₂` accumulated with `hypot`, exact for a single entry.
fn norm(x: &[Complex64]) -> f64 {
    x.iter().fold(0.0, |acc: f64, z| acc.hypot(z.norm()))
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter()
        .zip(b)
        .fold(Complex64::new(0.0, 0.0), |acc, (x, y)| acc + x.conj() * y)
}

/// Extend orthonormal columns to an orthonormal basis of `C^m`.
fn complete_basis(mut cols: Vec<Vec<Complex64>>, m: usize) -> CMatrix {
    let mut k = 0;
    while cols.len() < m && k < 2 * m {
        let mut cand = vec![Complex64::new(0.0, 0.0); m];
        cand[k % m] = Complex64::new(1.0, 0.0);
        for _ in 0..2 {
            for c in &cols {
                let p = dot(c, &cand);
                for (x, y) in cand.iter_mut().zip(c) {
                    *x -= p * y;
                }
            }
        }
        let nrm = norm(&cand);
        if nrm > 0.5 {
            cols.push(cand.iter().map(|z| z / nrm).collect());
        }
        k += 1;
    }
    let mut out = CMatrix::zeros(m, m);
    for (j, c) in cols.iter().enumerate() {
        for (i, &z) in c.iter().enumerate() {
            out[(i, j)] = z;
        }
    }
    out
}

/// Closed form for `2 × 2` via the eigen-decomposition of `HᴴH`.
pub fn complex_svd_2x2(h: &CMatrix) -> Svd {
    assert_eq!((h.rows(), h.cols()), (2, 2), "complex_svd_2x2 needs a 2x2 matrix");
    let zero = Complex64::new(0.0, 0.0);
    let (c0, c1) = (h.col(0), h.col(1));
    let a = c0.iter().map(|z| z.norm_sqr()).sum::<f64>();
    let c = c1.iter().map(|z| z.norm_sqr()).sum::<f64>();
    let b = dot(&c0, &c1);

    let half_gap = 0.5 * (a - c);
    let lambda1 = 0.5 * (a + c) + half_gap.hypot(b.norm());
    if !(lambda1 > 0.0) {
        return Svd {
            u: CMatrix::identity(2),
            sigma: vec![0.0, 0.0],
            v: CMatrix::identity(2),
        };
    }

    // Two algebraically equivalent eigenvector candidates; keep the better conditioned.
    let cand_a = [b, Complex64::new(lambda1 - a, 0.0)];
    let cand_b = [Complex64::new(lambda1 - c, 0.0), b.conj()];
    let pick = if norm(&cand_a) >= norm(&cand_b) { cand_a } else { cand_b };
    let n_pick = norm(&pick);
    let v1 = if n_pick > 0.0 {
        [pick[0] / n_pick, pick[1] / n_pick]
    } else {
        [Complex64::new(1.0, 0.0), zero]
    };
    let v2 = [-v1[1].conj(), v1[0].conj()];

    let sigma1 = lambda1.sqrt();
    let hv1 = h.mul_vec(&v1);
    let u1: Vec<Complex64> = hv1.iter().map(|z| z / sigma1).collect();
    let nu1 = norm(&u1);
    let u1: Vec<Complex64> = u1.iter().map(|z| z / nu1).collect();

    let comp = [-u1[1].conj(), u1[0].conj()];
    let hv2 = h.mul_vec(&v2);
    let proj = dot(&comp, &hv2);
    let sigma2 = proj.norm();
    let phase = if sigma2 > 0.0 {
        proj / sigma2
    } else {
        Complex64::new(1.0, 0.0)
    };
    let u2 = [comp[0] * phase, comp[1] * phase];

    Svd {
        u: CMatrix::from_rows(&[vec![u1[0], u2[0]], vec![u1[1], u2[1]]]),
        sigma: vec![sigma1, sigma2.min(sigma1)],
        v: CMatrix::from_rows(&[vec![v1[0], v2[0]], vec![v1[1], v2[1]]]),
    }
}

/// One-sided (Hestenes) Jacobi SVD for any shape.
pub fn jacobi_svd(h: &CMatrix) -> Svd {
    if h.rows() < h.cols() {
        let t = jacobi_svd(&h.adjoint());
        return Svd {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        };
    }
    let (m, n) = (h.rows(), h.cols());
    let mut a: Vec<Vec<Complex64>> = (0..n).map(|j| h.col(j)).collect();
    let mut v: Vec<Vec<Complex64>> = (0..n)
        .map(|j| {
            let mut e = vec![Complex64::new(0.0, 0.0); n];
            e[j] = Complex64::new(1.0, 0.0);
            e
        })
        .collect();

    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = a[p].iter().map(|z| z.norm_sqr()).sum::<f64>();
                let beta = a[q].iter().map(|z| z.norm_sqr()).sum::<f64>();
                let gamma = dot(&a[p], &a[q]);
                let g = gamma.norm();
                if g == 0.0 || g <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                // Rotate column q by the phase of γ so the pair becomes real.
                let phase = (gamma / g).conj();
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                for cols in [&mut a, &mut v] {
                    for k in 0..cols[p].len() {
                        let xp = cols[p][k];
                        let xq = cols[q][k] * phase;
                        cols[p][k] = xp * cs - xq * sn;
                        cols[q][k] = xp * sn + xq * cs;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = a.iter().map(|c| norm(c)).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let top = norms.iter().cloned().fold(0.0, f64::max);
    let floor = top * f64::EPSILON * (m.max(n) as f64);

    let mut sigma = Vec::with_capacity(n);
    let mut u_cols = Vec::with_capacity(m);
    let mut v_mat = CMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let s = norms[src];
        if s > floor && s > 0.0 {
            sigma.push(s);
            u_cols.push(a[src].iter().map(|z| z / s).collect());
        } else {
            sigma.push(0.0);
        }
        for k in 0..n {
            v_mat[(k, dst)] = v[src][k];
        }
    }
    // Null-space columns of U are filled in after the informative ones; their
    // singular values are zero so their placement does not affect H.
    let rank = u_cols.len();
    let u = complete_basis(u_cols, m);
    debug_assert!(sigma[rank..].iter().all(|&s| s == 0.0));
    Svd { u, sigma, v: v_mat }
}

/// Closed form for `2 × 2`, Jacobi otherwise.
pub fn svd(h: &CMatrix) -> Svd {
    if h.rows() == 2 && h.cols() == 2 {
        complex_svd_2x2(h)
    } else {
        jacobi_svd(h)
    }
}
