//! Doubly stochastic mixing matrices and the spectrum of the ADMM consensus
//! operator.
//!
//! For a symmetric doubly stochastic `W` and augmentation `eps > 0` the
//! two-step consensus recursion is driven by the `2S x 2S` operator
//!
//! ```text
//!     M = [ a W + I     -a/2 (W + I) ]      a = eps / (1 + eps)
//!         [    I              0      ]
//! ```
//!
//! whose eigenvalues come in pairs, one pair per eigenvalue of `W`
//! ([`closed_form_eigs`]). The second largest modulus over all pairs is the
//! contraction rate [`slem`]; [`eps_star`] minimises it.

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::graph::GraphTopology;
use crate::numeric::eig::{general_eigenvalues, symmetric_eigenvalues, Square};
use crate::numeric::{DoubleDouble, Real};

/// Tolerance on row sums and symmetry accepted by [`MixingMatrix::new`].
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Named weight constructions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Construction {
    MaxDegree,
    Metropolis,
}

impl Construction {
    pub fn build(self, g: &GraphTopology) -> Result<MixingMatrix> {
        match self {
            Construction::MaxDegree => max_degree_chain(g),
            Construction::Metropolis => metropolis_weights(g),
        }
    }
}

impl std::str::FromStr for Construction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max-degree" => Ok(Self::MaxDegree),
            "metropolis" => Ok(Self::Metropolis),
            other => Err(param(format!(
                "unknown construction {other:?} (max-degree | metropolis)"
            ))),
        }
    }
}

/// Symmetric doubly stochastic matrix supported on a graph's neighbourhoods.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    w: DMatrix<f64>,
    neighborhoods: Vec<Vec<usize>>,
}

impl MixingMatrix {
    /// Validates `w` against the zero pattern of `g`.
    pub fn new(g: &GraphTopology, w: DMatrix<f64>) -> Result<Self> {
        let s = g.sensor_count();
        if w.nrows() != s || w.ncols() != s {
            return Err(param(format!(
                "W is {}x{}, graph has {s} sensors",
                w.nrows(),
                w.ncols()
            )));
        }
        for k in 0..s {
            let row: f64 = w.row(k).iter().sum();
            if (row - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::Validation(format!("row {k} of W sums to {row}")));
            }
            for l in 0..s {
                if (w[(k, l)] - w[(l, k)]).abs() > STOCHASTIC_TOL {
                    return Err(Error::Validation(format!("W not symmetric at ({k},{l})")));
                }
                if l != k && !g.adjacent(k, l) && w[(k, l)] != 0.0 {
                    return Err(Error::Validation(format!(
                        "W({k},{l}) = {} but sensors {k} and {l} are not neighbours",
                        w[(k, l)]
                    )));
                }
            }
        }
        let neighborhoods = (0..s).map(|k| g.neighborhood(k).to_vec()).collect();
        Ok(Self { w, neighborhoods })
    }

    /// The 1x1 matrix `[1]` of a single sensor.
    pub fn singleton() -> Self {
        Self {
            w: DMatrix::from_element(1, 1, 1.0),
            neighborhoods: vec![vec![0]],
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn sensor_count(&self) -> usize {
        self.w.nrows()
    }

    /// Neighbourhood of `k` (including `k`) on which row `k` is supported.
    pub fn neighborhood(&self, k: usize) -> &[usize] {
        &self.neighborhoods[k]
    }

    #[inline]
    pub fn weight(&self, k: usize, l: usize) -> f64 {
        self.w[(k, l)]
    }

    /// Eigenvalues of `W`, descending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self
            .w
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        ev
    }

    /// Eigenvalues of `W` in double-double precision, descending.
    pub fn eigenvalues_dd(&self) -> Result<Vec<DoubleDouble>> {
        let n = self.sensor_count();
        let a = Square::from_fn(n, |i, j| DoubleDouble::from_f64(self.w[(i, j)]));
        Ok(symmetric_eigenvalues(&a)?)
    }
}

fn require_connected(g: &GraphTopology) -> Result<()> {
    if g.sensor_count() < 2 {
        return Err(param("mixing constructions need at least 2 sensors"));
    }
    if !g.is_connected() {
        return Err(Error::Topology("graph is not connected".into()));
    }
    Ok(())
}

/// Every edge weighted `1/d_max`; the diagonal takes the remainder.
pub fn max_degree_chain(g: &GraphTopology) -> Result<MixingMatrix> {
    require_connected(g)?;
    let s = g.sensor_count();
    let d_max = g.max_degree() as f64;
    let mut w = DMatrix::zeros(s, s);
    for k in 0..s {
        for l in g.neighbors(k) {
            w[(k, l)] = 1.0 / d_max;
        }
        w[(k, k)] = 1.0 - g.degree(k) as f64 / d_max;
    }
    MixingMatrix::new(g, w)
}

/// Edge `(k,l)` weighted `1/(1 + max(deg k, deg l))`; the diagonal takes the remainder.
pub fn metropolis_weights(g: &GraphTopology) -> Result<MixingMatrix> {
    require_connected(g)?;
    let s = g.sensor_count();
    let mut w = DMatrix::zeros(s, s);
    for k in 0..s {
        let mut off = 0.0;
        for l in g.neighbors(k) {
            let v = 1.0 / (1.0 + g.degree(k).max(g.degree(l)) as f64);
            w[(k, l)] = v;
            off += v;
        }
        w[(k, k)] = 1.0 - off;
    }
    MixingMatrix::new(g, w)
}

/// Second largest eigenvalue of `W` by value.
pub fn lambda2(w: &MixingMatrix) -> Result<f64> {
    if w.sensor_count() < 2 {
        return Err(param("second eigenvalue undefined for a single sensor"));
    }
    Ok(w.eigenvalues()[1])
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(param(format!("eps must be positive and finite, got {eps}")));
    }
    Ok(())
}

/// The consensus operator `M` for `(W, eps)`.
pub fn build_m(w: &MixingMatrix, eps: f64) -> Result<DMatrix<f64>> {
    check_eps(eps)?;
    let s = w.sensor_count();
    let a = eps / (1.0 + eps);
    let b = eps / (2.0 * (1.0 + eps));
    let mut m = DMatrix::zeros(2 * s, 2 * s);
    for i in 0..s {
        for j in 0..s {
            let wij = w.weight(i, j);
            let id = if i == j { 1.0 } else { 0.0 };
            m[(i, j)] = a * wij + id;
            m[(i, s + j)] = -b * (wij + id);
            m[(s + i, j)] = id;
        }
    }
    Ok(m)
}

/// The eigenvalue pair of `M` attached to eigenvalue `lambda` of `W`,
/// `(re, im)` with the `+` root first.
pub fn closed_form_pair<T: Real>(lambda: T, eps: T) -> [(T, T); 2] {
    let one = T::one();
    let two = T::from_f64(2.0);
    let denom = two * (one + eps);
    let centre = (one + eps + eps * lambda) / denom;
    let radicand = one + eps * eps * (lambda * lambda - one);
    if radicand >= T::zero() {
        let d = radicand.sqrt() / denom;
        [(centre + d, T::zero()), (centre - d, T::zero())]
    } else {
        let d = (-radicand).sqrt() / denom;
        [(centre, d), (centre, -d)]
    }
}

/// `(1 + eps + eps*lambda ± sqrt(1 + eps^2 (lambda^2 - 1))) / (2 (1 + eps))`.
pub fn closed_form_eigs(lambda: f64, eps: f64) -> [Complex<f64>; 2] {
    closed_form_pair(lambda, eps).map(|(re, im)| Complex::new(re, im))
}

fn check_lambda2(lambda2: f64) -> Result<()> {
    if !(-1.0..1.0).contains(&lambda2) {
        return Err(param(format!("lambda2 must lie in [-1, 1), got {lambda2}")));
    }
    Ok(())
}

/// Largest `eps` for which the `lambda2` pair dominates the rate.
pub fn h_threshold(lambda2: f64) -> f64 {
    if lambda2 >= 0.0 {
        (1.0 + lambda2) / (1.0 - lambda2)
    } else {
        1.0
    }
}

/// Second largest eigenvalue modulus of `M` as a function of `(eps, lambda2)`.
pub fn slem(eps: f64, lambda2: f64) -> f64 {
    if eps <= h_threshold(lambda2) {
        closed_form_eigs(lambda2, eps)[0].norm()
    } else {
        eps / (1.0 + eps)
    }
}

/// Minimiser of [`slem`] over `eps`.
pub fn eps_star(lambda2: f64) -> Result<f64> {
    check_lambda2(lambda2)?;
    if lambda2 < 0.0 {
        return Ok(1.0);
    }
    let mut eps = 1.0 / (1.0 - lambda2 * lambda2).sqrt();
    // The λ₂ pair is a double root here and slem grows like a square root on
    // the real side; stay on the complex side, where it is smooth.
    while 1.0 + eps * eps * (lambda2 * lambda2 - 1.0) > 0.0 {
        eps = eps.next_up();
    }
    Ok(eps)
}

/// Minimum of [`slem`] over `eps`.
pub fn rho_star(lambda2: f64) -> Result<f64> {
    check_lambda2(lambda2)?;
    if lambda2 < 0.0 {
        return Ok(0.5);
    }
    let root = (1.0 - lambda2 * lambda2).sqrt();
    Ok((lambda2 + 1.0 + root) / (2.0 * (1.0 + root)))
}

/// Prefactor of the optimal consensus error bound; equals `1/(rho* (1 + eps*))`.
pub fn gamma_const(lambda2: f64) -> Result<f64> {
    check_lambda2(lambda2)?;
    if lambda2 < 0.0 {
        return Ok(1.0);
    }
    let root = (1.0 - lambda2 * lambda2).sqrt();
    Ok(2.0 * root / (1.0 + lambda2 + root))
}

/// `1 / ln(1/rho)`.
pub fn mixing_time(rho: f64) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(param(format!("mixing time needs 0 < rho < 1, got {rho}")));
    }
    Ok(1.0 / (1.0 / rho).ln())
}

fn sort_spectrum(ev: &mut [Complex<f64>]) {
    ev.sort_by(|a, b| {
        b.norm()
            .total_cmp(&a.norm())
            .then(b.re.total_cmp(&a.re))
            .then(b.im.total_cmp(&a.im))
    });
}

/// `M` assembled in precision `T` directly from `W` and `eps`.
pub fn build_m_in<T: Real>(w: &MixingMatrix, eps: T) -> Square<T> {
    let s = w.sensor_count();
    let one = T::one();
    let a = eps / (one + eps);
    let b = a / T::from_f64(2.0);
    let mut m = Square::zeros(2 * s);
    for i in 0..s {
        for j in 0..s {
            let wij = T::from_f64(w.weight(i, j));
            let id = if i == j { one } else { T::zero() };
            m.set(i, j, a * wij + id);
            m.set(i, s + j, -(b * (wij + id)));
            m.set(s + i, j, id);
        }
    }
    m
}

/// Numeric eigenvalues of `M`, sorted by modulus then real part, descending.
///
/// `M` is assembled and reduced in double-double: at `eps = eps*` the
/// `lambda2` pair is defective, and rounding `M` to `f64` would alone split
/// it by `~sqrt(f64::EPSILON)`.
pub fn numeric_m_spectrum(w: &MixingMatrix, eps: f64) -> Result<Vec<Complex<f64>>> {
    check_eps(eps)?;
    let a = build_m_in(w, DoubleDouble::from_f64(eps));
    let mut ev: Vec<Complex<f64>> = general_eigenvalues(&a)?
        .into_iter()
        .map(|(re, im)| Complex::new(re.to_f64(), im.to_f64()))
        .collect();
    sort_spectrum(&mut ev);
    Ok(ev)
}

/// Closed-form eigenvalues of `M`: the pairs over every eigenvalue of `W`,
/// evaluated in double-double and sorted like [`numeric_m_spectrum`].
pub fn closed_form_m_spectrum(w: &MixingMatrix, eps: f64) -> Result<Vec<Complex<f64>>> {
    check_eps(eps)?;
    let e = DoubleDouble::from_f64(eps);
    let mut ev = Vec::with_capacity(2 * w.sensor_count());
    for lambda in w.eigenvalues_dd()? {
        for (re, im) in closed_form_pair(lambda, e) {
            ev.push(Complex::new(re.to_f64(), im.to_f64()));
        }
    }
    sort_spectrum(&mut ev);
    Ok(ev)
}

/// Largest distance in a greedy one-to-one pairing of `a` with `b`.
///
/// Each element of `a` takes its nearest unused element of `b`, so the
/// result bounds the optimal matching distance from above.
pub fn matching_deviation(a: &[Complex<f64>], b: &[Complex<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut used = vec![false; b.len()];
    let mut worst: f64 = 0.0;
    for x in a {
        let (idx, d) = b
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .map(|(i, y)| (i, (x - y).norm()))
            .min_by(|p, q| p.1.total_cmp(&q.1))
            .expect("equal lengths");
        used[idx] = true;
        worst = worst.max(d);
    }
    worst
}

/// Spectral summary of a mixing matrix at an operating point `eps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub lambda2: f64,
    pub eps_star: f64,
    pub rho_star: f64,
    pub gamma: f64,
    /// Mixing time at the optimal rate.
    pub tau: f64,
    /// Operating point and its rate.
    pub eps: f64,
    pub rho: f64,
    /// Eigenvalues of `M(eps)` as `[re, im]`, sorted by modulus then real part.
    pub m_eigenvalues: Vec<[f64; 2]>,
    /// Numeric second largest modulus of `M(eps)`.
    pub numeric_slem: f64,
    /// Max deviation between closed-form and numeric spectra of `M(eps)`.
    pub closed_form_deviation: f64,
}

impl SpectrumReport {
    /// Report at `eps`, or at the optimum when `eps` is `None`.
    pub fn compute(w: &MixingMatrix, eps: Option<f64>) -> Result<Self> {
        let lambda2 = lambda2(w)?;
        if lambda2 >= 1.0 - 1e-15 {
            return Err(Error::Topology(format!(
                "lambda2 = {lambda2}: graph is not connected"
            )));
        }
        let eps_star = eps_star(lambda2)?;
        let rho_star = rho_star(lambda2)?;
        let eps = eps.unwrap_or(eps_star);
        let numeric = numeric_m_spectrum(w, eps)?;
        let closed = closed_form_m_spectrum(w, eps)?;
        Ok(Self {
            lambda2,
            eps_star,
            rho_star,
            gamma: gamma_const(lambda2)?,
            tau: mixing_time(rho_star)?,
            eps,
            rho: slem(eps, lambda2),
            numeric_slem: numeric.get(1).map_or(0.0, |z| z.norm()),
            closed_form_deviation: matching_deviation(&closed, &numeric),
            m_eigenvalues: numeric.iter().map(|z| [z.re, z.im]).collect(),
        })
    }
}
