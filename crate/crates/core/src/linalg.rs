//! Small dense 4x4 helpers and a complex banded LU with partial pivoting.

use num_complex::Complex;
use num_traits::Zero;
use thiserror::Error;

use crate::real::{Real, C};

pub type Mat4<T> = [[C<T>; 4]; 4];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is singular to working precision (zero pivot in column {0})")]
    Singular(usize),
    #[error("matrix is numerically full rank (residual ratio {0:.3e}); not a root")]
    NotARoot(f64),
}

pub fn det4<T: Real>(m: &Mat4<T>) -> C<T> {
    let mut a = *m;
    let mut det = Complex::new(T::one(), T::zero());
    for k in 0..4 {
        let mut p = k;
        for i in k + 1..4 {
            if a[i][k].norm() > a[p][k].norm() {
                p = i;
            }
        }
        if a[p][k].is_zero() {
            return Complex::zero();
        }
        if p != k {
            a.swap(p, k);
            det = -det;
        }
        det *= a[k][k];
        for i in k + 1..4 {
            let f = a[i][k] / a[k][k];
            for j in k + 1..4 {
                let t = a[k][j];
                a[i][j] -= f * t;
            }
        }
    }
    det
}

fn det3<T: Real>(m: &Mat4<T>, rows: [usize; 3], cols: [usize; 3]) -> C<T> {
    let e = |i: usize, j: usize| m[rows[i]][cols[j]];
    e(0, 0) * (e(1, 1) * e(2, 2) - e(1, 2) * e(2, 1)) - e(0, 1) * (e(1, 0) * e(2, 2) - e(1, 2) * e(2, 0))
        + e(0, 2) * (e(1, 0) * e(2, 1) - e(1, 1) * e(2, 0))
}

fn others(i: usize) -> [usize; 3] {
    let mut o = [0; 3];
    let mut n = 0;
    for j in 0..4 {
        if j != i {
            o[n] = j;
            n += 1;
        }
    }
    o
}

pub fn adjugate4<T: Real>(m: &Mat4<T>) -> Mat4<T> {
    let mut adj = [[Complex::zero(); 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            let c = det3(m, others(i), others(j));
            adj[j][i] = if (i + j) % 2 == 0 { c } else { -c };
        }
    }
    adj
}

pub fn frobenius4<T: Real>(m: &Mat4<T>) -> T {
    m.iter().flatten().map(|z| z.norm_sqr()).sum::<T>().sqrt()
}

pub fn matvec4<T: Real>(m: &Mat4<T>, v: &[C<T>; 4]) -> [C<T>; 4] {
    let mut out = [Complex::zero(); 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i] += m[i][j] * v[j];
        }
    }
    out
}

pub fn norm4<T: Real>(v: &[C<T>; 4]) -> T {
    v.iter().map(|z| z.norm_sqr()).sum::<T>().sqrt()
}

/// |det| divided by the product of column norms (Hadamard ratio, in [0,1]).
pub fn hadamard_ratio<T: Real>(m: &Mat4<T>, det: C<T>) -> T {
    let mut p = T::one();
    for j in 0..4 {
        let c = (0..4).map(|i| m[i][j].norm_sqr()).sum::<T>().sqrt();
        if c.is_zero() {
            return T::zero();
        }
        p *= c;
    }
    det.norm() / p
}

/// Unit null direction of a rank-deficient 4x4 matrix from its largest adjugate column.
/// Fails when `|M v| / |M|_F` exceeds `tol`.
pub fn null_vector_of<T: Real>(m: &Mat4<T>, tol: T) -> Result<[C<T>; 4], LinalgError> {
    let adj = adjugate4(m);
    let mut best = 0;
    let mut best_n = T::zero();
    for j in 0..4 {
        let n = (0..4).map(|i| adj[i][j].norm_sqr()).sum::<T>();
        if n > best_n {
            best_n = n;
            best = j;
        }
    }
    let fro = frobenius4(m);
    if best_n.is_zero() || fro.is_zero() {
        return Err(LinalgError::NotARoot(f64::NAN));
    }
    let s = best_n.sqrt();
    let mut v = [Complex::zero(); 4];
    for i in 0..4 {
        v[i] = adj[i][best] / s;
    }
    // Fix the phase: largest component real and positive.
    let k = (0..4).fold(0, |k, i| if v[i].norm() > v[k].norm() { i } else { k });
    let ph = v[k].conj() / v[k].norm();
    for z in v.iter_mut() {
        *z *= ph;
    }
    let ratio = norm4(&matvec4(m, &v)) / fro;
    if ratio > tol {
        return Err(LinalgError::NotARoot(ratio.to_f64_lossy()));
    }
    Ok(v)
}

/// Square complex band matrix with `kl` sub- and `ku` super-diagonals, stored with
/// room for the fill produced by partial pivoting.
#[derive(Debug, Clone)]
pub struct BandMatrix<T: Real> {
    n: usize,
    kl: usize,
    ku: usize,
    w: usize,
    data: Vec<C<T>>,
}

impl<T: Real> BandMatrix<T> {
    pub fn new(n: usize, kl: usize, ku: usize) -> Self {
        let w = 2 * kl + ku + 1;
        BandMatrix { n, kl, ku, w, data: vec![Complex::zero(); n * w] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.ku + self.kl, "({i},{j}) outside band");
        i * self.w + (j + self.kl - i)
    }

    pub fn add(&mut self, i: usize, j: usize, v: C<T>) {
        assert!(j + self.kl >= i && j <= i + self.ku, "({i},{j}) outside band");
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> C<T> {
        if j + self.kl < i || j > i + self.ku + self.kl || j >= self.n {
            return Complex::zero();
        }
        self.data[self.idx(i, j)]
    }

    pub fn matvec(&self, x: &[C<T>]) -> Vec<C<T>> {
        let mut y = vec![Complex::zero(); self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            for j in lo..=hi {
                y[i] += self.data[self.idx(i, j)] * x[j];
            }
        }
        y
    }

    pub fn factor(mut self) -> Result<BandLu<T>, LinalgError> {
        let n = self.n;
        let (kl, reach) = (self.kl, self.kl + self.ku);
        let mut piv = vec![0usize; n];
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut pv = self.data[self.idx(k, k)].norm();
            for i in k + 1..=last {
                let v = self.data[self.idx(i, k)].norm();
                if v > pv {
                    p = i;
                    pv = v;
                }
            }
            if pv.is_zero() || !pv.is_finite() {
                return Err(LinalgError::Singular(k));
            }
            piv[k] = p;
            let jmax = (k + reach).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    let (a, b) = (self.idx(k, j), self.idx(p, j));
                    self.data.swap(a, b);
                }
            }
            let d = self.data[self.idx(k, k)];
            for i in k + 1..=last {
                let ik = self.idx(i, k);
                let f = self.data[ik] / d;
                self.data[ik] = f;
                if f.is_zero() {
                    continue;
                }
                for j in k + 1..=jmax {
                    let kj = self.data[self.idx(k, j)];
                    let ij = self.idx(i, j);
                    self.data[ij] -= f * kj;
                }
            }
        }
        Ok(BandLu { m: self, piv })
    }
}

#[derive(Debug, Clone)]
pub struct BandLu<T: Real> {
    m: BandMatrix<T>,
    piv: Vec<usize>,
}

impl<T: Real> BandLu<T> {
    pub fn solve_in_place(&self, b: &mut [C<T>]) {
        let m = &self.m;
        let n = m.n;
        assert_eq!(b.len(), n);
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk.is_zero() {
                continue;
            }
            for i in k + 1..=(k + m.kl).min(n - 1) {
                b[i] -= m.data[m.idx(i, k)] * bk;
            }
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in i + 1..=(i + m.kl + m.ku).min(n - 1) {
                s -= m.data[m.idx(i, j)] * b[j];
            }
            b[i] = s / m.data[m.idx(i, i)];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn c(re: f64, im: f64) -> C<f64> {
        Complex::new(re, im)
    }

    #[test]
    fn det_of_permutation_and_diag() {
        let mut m = [[c(0.0, 0.0); 4]; 4];
        m[0][1] = c(1.0, 0.0);
        m[1][0] = c(1.0, 0.0);
        m[2][2] = c(2.0, 0.0);
        m[3][3] = c(0.0, 3.0);
        assert!((det4(&m) - c(0.0, -6.0)).norm() < 1e-14);
    }

    #[test]
    fn identity_is_not_a_root() {
        let mut m = [[c(0.0, 0.0); 4]; 4];
        for i in 0..4 {
            m[i][i] = c(1.0, 0.0);
        }
        assert!(matches!(null_vector_of(&m, 1e-8), Err(LinalgError::NotARoot(_))));
    }

    #[test]
    fn null_vector_of_rank_three() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut m = [[c(0.0, 0.0); 4]; 4];
        for row in m.iter_mut() {
            for z in row.iter_mut().take(3) {
                *z = c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
            row[3] = row[0] * c(0.3, -0.2) - row[2] * c(1.1, 0.0);
        }
        let v = null_vector_of(&m, 1e-12).unwrap();
        assert!(norm4(&matvec4(&m, &v)) < 1e-13);
        assert!((norm4(&v) - 1.0).abs() < 1e-14);
    }

    fn random_band(n: usize, kl: usize, ku: usize, seed: u64) -> (BandMatrix<f64>, Vec<Vec<C<f64>>>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut b = BandMatrix::new(n, kl, ku);
        let mut d = vec![vec![c(0.0, 0.0); n]; n];
        for i in 0..n {
            for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                // weak diagonal forces pivoting
                let z = if i == j { c(1e-3, 0.0) } else { c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) };
                b.add(i, j, z);
                d[i][j] = z;
            }
        }
        (b, d)
    }

    #[test]
    fn banded_solve_matches_dense_product() {
        let (n, kl, ku) = (40, 6, 3);
        let (b, d) = random_band(n, kl, ku, 7);
        let x: Vec<C<f64>> = (0..n).map(|i| c(i as f64, 1.0 - i as f64 * 0.5)).collect();
        let mut rhs: Vec<C<f64>> = (0..n).map(|i| (0..n).map(|j| d[i][j] * x[j]).sum()).collect();
        assert_eq!(b.matvec(&x), rhs);
        let lu = b.factor().unwrap();
        lu.solve_in_place(&mut rhs);
        for i in 0..n {
            assert!((rhs[i] - x[i]).norm() < 1e-8 * (1.0 + x[i].norm()), "{i}");
        }
    }

    #[test]
    fn singular_band_detected() {
        let mut b = BandMatrix::<f64>::new(3, 1, 1);
        b.add(0, 0, c(1.0, 0.0));
        b.add(2, 2, c(1.0, 0.0));
        assert!(matches!(b.factor(), Err(LinalgError::Singular(1))));
    }

    proptest! {
        #[test]
        fn banded_solve_residual(seed in 0u64..1000, n in 5usize..30) {
            let (b, _) = random_band(n, 2, 1, seed);
            let x: Vec<C<f64>> = (0..n).map(|i| c((i as f64).sin(), (i as f64).cos())).collect();
            let mut rhs = b.matvec(&x);
            let lu = b.clone().factor().unwrap();
            lu.solve_in_place(&mut rhs);
            let r = b.matvec(&rhs);
            let want = b.matvec(&x);
            let err: f64 = r.iter().zip(&want).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            prop_assert!(err < 1e-9);
        }
    }
}
