//! Dense eigenvalue solvers generic over [`Real`].
//!
//! * General (nonsymmetric) matrices: Householder reduction to upper
//!   Hessenberg form followed by the Francis double-shift QR iteration
//!   (after the EISPACK `orthes`/`hqr` pair).
//! * Symmetric matrices: cyclic Jacobi rotations.
//!
//! Both run unchanged in `f64` or [`DoubleDouble`](super::DoubleDouble); the
//! latter is what makes defective eigenvalue pairs resolvable well below
//! `sqrt(f64::EPSILON)`.

use super::Real;

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Square<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Real> Square<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![T::zero(); n * n],
        }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] = v;
    }

    #[inline]
    fn at(&mut self, i: usize, j: usize) -> &mut T {
        &mut self.data[i * self.n + j]
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EigError {
    #[error("QR iteration did not converge for eigenvalue index {index}")]
    NoConvergence { index: usize },
    #[error("Jacobi sweeps did not converge (off-diagonal norm {off:e})")]
    JacobiNoConvergence { off: f64 },
    #[error("matrix contains non-finite entries")]
    NonFinite,
}

const MAX_QR_ITERATIONS: usize = 60;
const MAX_JACOBI_SWEEPS: usize = 100;

/// Reduces `a` in place to upper Hessenberg form by orthogonal similarity.
pub fn hessenberg<T: Real>(a: &mut Square<T>) {
    let n = a.n;
    if n < 3 {
        return;
    }
    let mut ort = vec![T::zero(); n];
    for m in 1..n - 1 {
        let mut scale = T::zero();
        for i in m..n {
            scale += a.get(i, m - 1).abs();
        }
        if scale.is_zero() {
            continue;
        }
        let mut h = T::zero();
        for i in (m..n).rev() {
            ort[i] = a.get(i, m - 1) / scale;
            h += ort[i] * ort[i];
        }
        let mut g = h.sqrt();
        if ort[m] > T::zero() {
            g = -g;
        }
        h -= ort[m] * g;
        ort[m] -= g;

        for j in m..n {
            let mut f = T::zero();
            for i in (m..n).rev() {
                f += ort[i] * a.get(i, j);
            }
            f /= h;
            for i in m..n {
                *a.at(i, j) -= f * ort[i];
            }
        }
        for i in 0..n {
            let mut f = T::zero();
            for j in (m..n).rev() {
                f += ort[j] * a.get(i, j);
            }
            f /= h;
            for j in m..n {
                *a.at(i, j) -= f * ort[j];
            }
        }
        ort[m] *= scale;
        a.set(m, m - 1, scale * g);
    }
    for i in 2..n {
        for j in 0..i - 1 {
            a.set(i, j, T::zero());
        }
    }
}

/// Eigenvalues `(re, im)` of an upper Hessenberg matrix, destroying it.
///
/// Complex eigenvalues come out as adjacent conjugate pairs.
pub fn hessenberg_eigenvalues<T: Real>(h: Square<T>) -> Result<Vec<(T, T)>, EigError> {
    let n = h.n;
    // 1-based working copy keeps the classic index arithmetic readable
    let dim = n + 1;
    let mut a = vec![T::zero(); dim * dim];
    for i in 0..n {
        for j in 0..n {
            a[(i + 1) * dim + j + 1] = h.get(i, j);
        }
    }
    macro_rules! a {
        ($i:expr, $j:expr) => {
            a[($i) * dim + ($j)]
        };
    }
    let unit = T::from_f64(T::UNIT_ROUNDOFF);
    let half = T::from_f64(0.5);

    let mut wr = vec![T::zero(); dim];
    let mut wi = vec![T::zero(); dim];

    let mut anorm = T::zero();
    for i in 1..=n {
        for j in i.saturating_sub(1).max(1)..=n {
            anorm += a!(i, j).abs();
        }
    }
    for i in 1..=n {
        for j in 1..=n {
            if !a!(i, j).to_f64().is_finite() {
                return Err(EigError::NonFinite);
            }
        }
    }

    let floor = unit * T::from_f64(n as f64) * anorm;

    let mut nn = n;
    let mut t = T::zero();
    while nn >= 1 {
        let mut its = 0usize;
        loop {
            let mut l = nn;
            while l >= 2 {
                let mut s = a!(l - 1, l - 1).abs() + a!(l, l).abs();
                if s.is_zero() {
                    s = anorm;
                }
                // the norm-wise test stops stalls when the local scale is far below the noise floor
                if a!(l, l - 1).abs() <= unit * s || a!(l, l - 1).abs() <= floor {
                    a!(l, l - 1) = T::zero();
                    break;
                }
                l -= 1;
            }
            let mut x = a!(nn, nn);
            if l == nn {
                wr[nn] = x + t;
                wi[nn] = T::zero();
                nn -= 1;
                break;
            }
            let mut y = a!(nn - 1, nn - 1);
            let mut w = a!(nn, nn - 1) * a!(nn - 1, nn);
            if l == nn - 1 {
                let p = half * (y - x);
                let q = p * p + w;
                let mut z = q.abs().sqrt();
                x += t;
                if q >= T::zero() {
                    z = p + z.with_sign_of(p);
                    wr[nn - 1] = x + z;
                    wr[nn] = x + z;
                    if !z.is_zero() {
                        wr[nn] = x - w / z;
                    }
                    wi[nn - 1] = T::zero();
                    wi[nn] = T::zero();
                } else {
                    wr[nn - 1] = x + p;
                    wr[nn] = x + p;
                    wi[nn - 1] = -z;
                    wi[nn] = z;
                }
                nn -= 2;
                break;
            }

            if its == MAX_QR_ITERATIONS {
                return Err(EigError::NoConvergence { index: nn - 1 });
            }
            if its > 0 && its.is_multiple_of(10) {
                // exceptional shift
                t += x;
                for i in 1..=nn {
                    a!(i, i) -= x;
                }
                let s = a!(nn, nn - 1).abs() + a!(nn - 1, nn - 2).abs();
                x = T::from_f64(0.75) * s;
                y = x;
                w = T::from_f64(-0.4375) * s * s;
            }
            its += 1;

            let mut m = nn - 2;
            let (mut p, mut q, mut r);
            loop {
                let z = a!(m, m);
                let rr = x - z;
                let ss = y - z;
                p = (rr * ss - w) / a!(m + 1, m) + a!(m, m + 1);
                q = a!(m + 1, m + 1) - z - rr - ss;
                r = a!(m + 2, m + 1);
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = a!(m, m - 1).abs() * (q.abs() + r.abs());
                let v = p.abs() * (a!(m - 1, m - 1).abs() + z.abs() + a!(m + 1, m + 1).abs());
                if u <= unit * v {
                    break;
                }
                m -= 1;
            }
            for i in m + 2..=nn {
                a!(i, i - 2) = T::zero();
                if i != m + 2 {
                    a!(i, i - 3) = T::zero();
                }
            }
            let mut k = m;
            while k < nn {
                if k != m {
                    p = a!(k, k - 1);
                    q = a!(k + 1, k - 1);
                    r = T::zero();
                    if k != nn - 1 {
                        r = a!(k + 2, k - 1);
                    }
                    x = p.abs() + q.abs() + r.abs();
                    if !x.is_zero() {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let s = (p * p + q * q + r * r).sqrt().with_sign_of(p);
                if !s.is_zero() {
                    if k == m {
                        if l != m {
                            a!(k, k - 1) = -a!(k, k - 1);
                        }
                    } else {
                        a!(k, k - 1) = -s * x;
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    let z = r / s;
                    q /= p;
                    r /= p;
                    for j in k..=nn {
                        let mut pp = a!(k, j) + q * a!(k + 1, j);
                        if k != nn - 1 {
                            pp += r * a!(k + 2, j);
                            a!(k + 2, j) -= pp * z;
                        }
                        a!(k + 1, j) -= pp * y;
                        a!(k, j) -= pp * x;
                    }
                    let mmin = if nn < k + 3 { nn } else { k + 3 };
                    for i in l..=mmin {
                        let mut pp = x * a!(i, k) + y * a!(i, k + 1);
                        if k != nn - 1 {
                            pp += z * a!(i, k + 2);
                            a!(i, k + 2) -= pp * r;
                        }
                        a!(i, k + 1) -= pp * q;
                        a!(i, k) -= pp;
                    }
                }
                k += 1;
            }
        }
    }
    Ok((1..=n).map(|i| (wr[i], wi[i])).collect())
}

/// Eigenvalues `(re, im)` of a general square matrix.
pub fn general_eigenvalues<T: Real>(a: &Square<T>) -> Result<Vec<(T, T)>, EigError> {
    let mut h = a.clone();
    hessenberg(&mut h);
    hessenberg_eigenvalues(h)
}

/// Eigenvalues of a symmetric matrix (only the upper triangle is read),
/// sorted in descending order.
pub fn symmetric_eigenvalues<T: Real>(a: &Square<T>) -> Result<Vec<T>, EigError> {
    let n = a.n;
    let mut m = Square::from_fn(n, |i, j| if i <= j { a.get(i, j) } else { a.get(j, i) });
    let mut frob = T::zero();
    for v in &m.data {
        frob += *v * *v;
    }
    let tol = T::from_f64(T::UNIT_ROUNDOFF) * T::from_f64(T::UNIT_ROUNDOFF) * frob;
    let one = T::one();
    let two = T::from_f64(2.0);

    let off_norm = |m: &Square<T>| {
        let mut off = T::zero();
        for i in 0..n {
            for j in i + 1..n {
                off += m.get(i, j) * m.get(i, j);
            }
        }
        off
    };

    let mut sweeps = 0;
    loop {
        let off = off_norm(&m);
        if off <= tol {
            break;
        }
        if sweeps == MAX_JACOBI_SWEEPS {
            return Err(EigError::JacobiNoConvergence {
                off: off.to_f64().sqrt(),
            });
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = m.get(p, q);
                if apq.is_zero() {
                    continue;
                }
                let theta = (m.get(q, q) - m.get(p, p)) / (two * apq);
                // theta^2 would overflow; double-double turns inf into NaN
                let t = if theta.abs().to_f64() > 1e100 {
                    one / (two * theta)
                } else {
                    one.with_sign_of(theta) / (theta.abs() + (theta * theta + one).sqrt())
                };
                let c = one / (t * t + one).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m.get(k, p);
                    let akq = m.get(k, q);
                    m.set(k, p, c * akp - s * akq);
                    m.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = m.get(p, k);
                    let aqk = m.get(q, k);
                    m.set(p, k, c * apk - s * aqk);
                    m.set(q, k, s * apk + c * aqk);
                }
            }
        }
    }
    let mut eig: Vec<T> = (0..n).map(|i| m.get(i, i)).collect();
    eig.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    Ok(eig)
}
