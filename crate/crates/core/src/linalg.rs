//! Small dense linear algebra: matrix products along words, singular
//! spectra and the singular value function `φ^s`.
//!
//! Singular values are the square roots of the eigenvalues of `TᵀT`. They are
//! computed with one-sided (Hestenes) Jacobi rotations applied to the columns
//! of `T`, which diagonalises `TᵀT` implicitly. Never forming `TᵀT` keeps the
//! small singular values of long word products accurate to working precision
//! relative to themselves rather than to `α_1²`. For `d = 2` a closed form is
//! used instead.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Square `d×d` real matrix stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    dim: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidMatrix("dimension must be at least 1".into()));
        }
        if data.len() != dim * dim {
            return Err(Error::InvalidMatrix(format!(
                "expected {} entries for a {dim}x{dim} matrix, got {}",
                dim * dim,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidMatrix(format!(
                "entry ({}, {}) is not finite",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self { dim, data })
    }

    /// Builds a matrix from rows; every row must have as many entries as there are rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != dim) {
            return Err(Error::InvalidMatrix(format!(
                "matrix is not square: row {i} has {} entries, expected {dim}",
                r.len()
            )));
        }
        Self::new(dim, rows.concat())
    }

    pub fn identity(dim: usize) -> Self {
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = 1.0;
        }
        Self { dim, data }
    }

    pub fn diag(values: &[f64]) -> Result<Self> {
        let dim = values.len();
        let mut data = vec![0.0; dim * dim];
        for (i, v) in values.iter().enumerate() {
            data[i * dim + i] = *v;
        }
        Self::new(dim, data)
    }

    pub fn scaled_identity(dim: usize, r: f64) -> Result<Self> {
        Self::diag(&vec![r; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.dim + col]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    pub fn mul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.dim, other.dim, "dimension mismatch in matrix product");
        let mut out = vec![0.0; self.dim * self.dim];
        mul_into(&self.data, &other.data, &mut out, self.dim);
        Matrix { dim: self.dim, data: out }
    }

    pub fn transpose(&self) -> Matrix {
        let d = self.dim;
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                out[j * d + i] = self.data[i * d + j];
            }
        }
        Matrix { dim: d, data: out }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        mat_vec_into(&self.data, x, &mut out, self.dim);
        out
    }

    pub fn determinant(&self) -> f64 {
        determinant(&self.data, self.dim)
    }

    /// Largest singular value.
    pub fn operator_norm(&self) -> f64 {
        singular_values(self).map(|s| s.largest()).unwrap_or(f64::NAN)
    }
}

/// `out = a · b` for row-major `d×d` slices.
#[inline]
pub(crate) fn mul_into(a: &[f64], b: &[f64], out: &mut [f64], d: usize) {
    match d {
        2 => {
            out[0] = a[0] * b[0] + a[1] * b[2];
            out[1] = a[0] * b[1] + a[1] * b[3];
            out[2] = a[2] * b[0] + a[3] * b[2];
            out[3] = a[2] * b[1] + a[3] * b[3];
        }
        _ => {
            for i in 0..d {
                for j in 0..d {
                    let mut acc = 0.0;
                    for k in 0..d {
                        acc += a[i * d + k] * b[k * d + j];
                    }
                    out[i * d + j] = acc;
                }
            }
        }
    }
}

#[inline]
pub(crate) fn mat_vec_into(a: &[f64], x: &[f64], out: &mut [f64], d: usize) {
    for i in 0..d {
        let mut acc = 0.0;
        for k in 0..d {
            acc += a[i * d + k] * x[k];
        }
        out[i] = acc;
    }
}

/// Determinant by Gaussian elimination with partial pivoting.
pub(crate) fn determinant(a: &[f64], d: usize) -> f64 {
    match d {
        1 => a[0],
        2 => a[0] * a[3] - a[1] * a[2],
        _ => {
            let mut m = a.to_vec();
            let mut det = 1.0;
            for col in 0..d {
                let pivot = (col..d)
                    .max_by(|&x, &y| m[x * d + col].abs().total_cmp(&m[y * d + col].abs()))
                    .unwrap();
                if m[pivot * d + col] == 0.0 {
                    return 0.0;
                }
                if pivot != col {
                    for k in 0..d {
                        m.swap(col * d + k, pivot * d + k);
                    }
                    det = -det;
                }
                let p = m[col * d + col];
                det *= p;
                for row in col + 1..d {
                    let f = m[row * d + col] / p;
                    for k in col..d {
                        m[row * d + k] -= f * m[col * d + k];
                    }
                }
            }
            det
        }
    }
}

/// Singular values `α_1 ≥ α_2 ≥ … ≥ α_d ≥ 0` of a square matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularSpectrum {
    values: Vec<f64>,
}

impl SingularSpectrum {
    /// Wraps a list of singular values, sorting them into non-increasing order.
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidMatrix("empty spectrum".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidMatrix(
                "singular values must be finite and non-negative".into(),
            ));
        }
        values.sort_by(|a, b| b.total_cmp(a));
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn largest(&self) -> f64 {
        self.values[0]
    }

    pub fn smallest(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Product of all singular values, i.e. `|det T|`.
    pub fn volume(&self) -> f64 {
        self.values.iter().product()
    }

    /// `φ^s` of the underlying matrix. Panics on negative or NaN `s`; see [`svf`].
    pub fn phi(&self, s: f64) -> f64 {
        assert!(s >= 0.0, "singular value function needs s >= 0, got {s}");
        phi_of(&self.values, s)
    }
}

/// Computes all singular values of `t`, sorted non-increasing.
pub fn singular_values(t: &Matrix) -> Result<SingularSpectrum> {
    if t.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidMatrix("matrix has non-finite entries".into()));
    }
    let mut values = vec![0.0; t.dim];
    spectrum_into(&t.data, t.dim, None, &mut values);
    Ok(SingularSpectrum { values })
}

/// Writes the sorted singular values of the row-major `d×d` matrix `a` into `out`.
///
/// When `abs_det` is known independently (e.g. as a product of the factors'
/// determinants) the smallest singular value is recovered as
/// `|det| / (α_1⋯α_{d-1})`, which is more accurate for ill-conditioned products.
pub(crate) fn spectrum_into(a: &[f64], d: usize, abs_det: Option<f64>, out: &mut [f64]) {
    match d {
        1 => out[0] = a[0].abs(),
        2 => {
            let s1 = largest_singular_value_2x2(a);
            let det = abs_det.unwrap_or_else(|| (a[0] * a[3] - a[1] * a[2]).abs());
            out[0] = s1;
            out[1] = if s1 > 0.0 { (det / s1).min(s1) } else { 0.0 };
        }
        _ => {
            jacobi_singular_values(a, d, out);
            if let Some(det) = abs_det {
                let head: f64 = out[..d - 1].iter().product();
                if head > 0.0 {
                    out[d - 1] = (det / head).min(out[d - 2]);
                }
            }
        }
    }
}

/// Natural logarithms of the sorted singular values, given `ln |det a|`.
/// This is the inner kernel of the pressure sums.
#[inline]
pub(crate) fn log_spectrum_into(a: &[f64], d: usize, log_det: f64, out: &mut [f64]) {
    match d {
        1 => out[0] = a[0].abs().ln(),
        2 => {
            let l1 = largest_singular_value_2x2(a).ln();
            out[0] = l1;
            out[1] = (log_det - l1).min(l1);
        }
        _ => {
            jacobi_singular_values(a, d, out);
            for v in out.iter_mut() {
                *v = v.ln();
            }
            let head: f64 = out[..d - 1].iter().sum();
            out[d - 1] = (log_det - head).min(out[d - 2]);
        }
    }
}

/// `α_1 = (p + q) / 2` with `p = |(a+d, b−c)|`, `q = |(a−d, b+c)|`.
#[inline]
fn largest_singular_value_2x2(a: &[f64]) -> f64 {
    let (u, v) = (a[0] + a[3], a[1] - a[2]);
    let (x, y) = (a[0] - a[3], a[1] + a[2]);
    0.5 * ((u * u + v * v).sqrt() + (x * x + y * y).sqrt())
}

/// One-sided Jacobi: rotate column pairs of `a` until mutually orthogonal;
/// the column norms are then the singular values.
fn jacobi_singular_values(a: &[f64], d: usize, out: &mut [f64]) {
    // Column-major working copy.
    let mut cols = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            cols[j * d + i] = a[i * d + j];
        }
    }
    const MAX_SWEEPS: usize = 60;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..d - 1 {
            for q in p + 1..d {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for k in 0..d {
                    let (x, y) = (cols[p * d + k], cols[q * d + k]);
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..d {
                    let (x, y) = (cols[p * d + k], cols[q * d + k]);
                    cols[p * d + k] = c * x - s * y;
                    cols[q * d + k] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    for j in 0..d {
        out[j] = cols[j * d..(j + 1) * d].iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    out.sort_by(|x, y| y.total_cmp(x));
}

/// Singular value function `φ^s`.
///
/// For `r − 1 < s ≤ r ≤ d` this is `α_1⋯α_{r−1}·α_r^{s−r+1}`; for `s > d` it is
/// `(α_1⋯α_d)^{s/d}`; `φ^0 = 1`. Zero singular values give 0 rather than an error.
pub fn svf(spectrum: &SingularSpectrum, s: f64) -> Result<f64> {
    if s.is_nan() || s < 0.0 {
        return Err(Error::Domain(format!(
            "singular value function needs s >= 0, got {s}"
        )));
    }
    Ok(phi_of(&spectrum.values, s))
}

pub(crate) fn phi_of(alpha: &[f64], s: f64) -> f64 {
    let d = alpha.len();
    if s == 0.0 {
        return 1.0;
    }
    if s > d as f64 {
        let vol: f64 = alpha.iter().product();
        return vol.powf(s / d as f64);
    }
    let r = s.ceil() as usize;
    let head: f64 = alpha[..r - 1].iter().product();
    head * alpha[r - 1].powf(s - (r as f64) + 1.0)
}

/// Log-domain coefficients of `φ^s` for a fixed `s`, so that
/// `ln φ^s(T) = Σ_k weight_k · ln α_k(T)`. Lets the pressure kernels evaluate
/// many exponents from one spectrum with a dot product and one `exp`.
#[derive(Debug, Clone)]
pub(crate) struct PhiWeights {
    pub(crate) weights: Vec<f64>,
}

impl PhiWeights {
    pub(crate) fn new(d: usize, s: f64) -> Self {
        let mut weights = vec![0.0; d];
        if s > d as f64 {
            weights.iter_mut().for_each(|w| *w = s / d as f64);
        } else if s > 0.0 {
            let r = s.ceil() as usize;
            weights[..r - 1].iter_mut().for_each(|w| *w = 1.0);
            weights[r - 1] = s - r as f64 + 1.0;
        }
        Self { weights }
    }

    #[inline]
    pub(crate) fn phi_from_logs(&self, log_alpha: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (w, l) in self.weights.iter().zip(log_alpha) {
            if *w != 0.0 {
                acc += w * l;
            }
        }
        acc.exp()
    }
}

/// Left-to-right product `T_{w_0} T_{w_1} ⋯ T_{w_{n−1}}`; the empty word gives the identity.
pub fn word_product(maps: &[Matrix], word: &[u32]) -> Result<Matrix> {
    let dim = maps
        .first()
        .map(Matrix::dim)
        .ok_or_else(|| Error::Input("no matrices supplied".into()))?;
    if let Some(bad) = word.iter().find(|&&i| i as usize >= maps.len()) {
        return Err(Error::InvalidWord(format!(
            "symbol {bad} out of range for {} maps",
            maps.len()
        )));
    }
    let mut acc = Matrix::identity(dim);
    for &i in word {
        acc = acc.mul(&maps[i as usize]);
    }
    Ok(acc)
}

/// Relative-plus-absolute closeness used throughout the property tests.
pub fn approx_le(lhs: f64, rhs: f64) -> bool {
    lhs <= rhs + 1e-9 * rhs.abs() + 1e-12
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(1e-300)
    }

    #[test]
    fn upper_triangular_example() {
        let t = Matrix::from_rows(&[vec![0.5, 0.3], vec![0.0, 0.4]]).unwrap();
        let sv = singular_values(&t).unwrap();
        // Eigenvalues of TᵀT = [[0.25, 0.15], [0.15, 0.25]] are 0.4 and 0.1.
        assert!(close(sv.values()[0], 0.4f64.sqrt(), 1e-12));
        assert!(close(sv.values()[1], 0.1f64.sqrt(), 1e-12));
    }

    #[test]
    fn identity_and_diagonal() {
        let sv = singular_values(&Matrix::identity(3)).unwrap();
        assert_eq!(sv.values(), &[1.0, 1.0, 1.0]);
        let sv = singular_values(&Matrix::diag(&[0.2, -0.5]).unwrap()).unwrap();
        assert_eq!(sv.values(), &[0.5, 0.2]);
    }

    #[test]
    fn jacobi_path_matches_closed_form_on_embedded_2x2() {
        let t = Matrix::from_rows(&[
            vec![0.5, 0.3, 0.0],
            vec![0.0, 0.4, 0.0],
            vec![0.0, 0.0, 0.25],
        ])
        .unwrap();
        let sv = singular_values(&t).unwrap();
        let expect = [0.4f64.sqrt(), 0.1f64.sqrt(), 0.25];
        for (a, b) in sv.values().iter().zip(expect) {
            assert!(close(*a, b, 1e-12), "{a} vs {b}");
        }
    }

    #[test]
    fn rejects_non_square_and_non_finite() {
        assert!(matches!(
            Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0]]),
            Err(Error::InvalidMatrix(_))
        ));
        assert!(matches!(
            Matrix::new(2, vec![0.1, f64::NAN, 0.0, 0.1]),
            Err(Error::InvalidMatrix(_))
        ));
    }

    #[test]
    fn svf_branches() {
        let sp = SingularSpectrum::new(vec![0.5, 0.2]).unwrap();
        assert!(close(svf(&sp, 1.5).unwrap(), 0.5 * 0.2f64.sqrt(), 1e-14));
        assert!(close(svf(&sp, 2.0).unwrap(), 0.1, 1e-14));
        assert!(close(svf(&sp, 3.0).unwrap(), 0.1f64.powf(1.5), 1e-14));
        assert_eq!(svf(&sp, 0.0).unwrap(), 1.0);
        assert!(matches!(svf(&sp, -0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn svf_degenerate_spectrum_gives_zero() {
        let sp = SingularSpectrum::new(vec![0.5, 0.0]).unwrap();
        assert_eq!(svf(&sp, 1.0).unwrap(), 0.5);
        assert_eq!(svf(&sp, 1.2).unwrap(), 0.0);
        assert_eq!(svf(&sp, 2.5).unwrap(), 0.0);
    }

    #[test]
    fn phi_weights_agree_with_direct_formula() {
        let sp = SingularSpectrum::new(vec![0.7, 0.3, 0.1]).unwrap();
        let logs: Vec<f64> = sp.values().iter().map(|a| a.ln()).collect();
        for s in [0.0, 0.3, 1.0, 1.7, 2.0, 2.4, 3.0, 4.5] {
            let w = PhiWeights::new(3, s);
            assert!(close(w.phi_from_logs(&logs), svf(&sp, s).unwrap(), 1e-13));
        }
    }

    #[test]
    fn word_products() {
        let t = Matrix::diag(&[0.5, 0.2]).unwrap();
        assert_eq!(word_product(&[t.clone()], &[]).unwrap(), Matrix::identity(2));
        let p = word_product(&[t.clone()], &[0, 0]).unwrap();
        assert!(close(p.get(0, 0), 0.25, 1e-15) && close(p.get(1, 1), 0.04, 1e-15));
        let u = Matrix::from_rows(&[vec![0.3, 0.1], vec![0.0, 0.4]]).unwrap();
        let maps = [t, u];
        assert_ne!(
            word_product(&maps, &[0, 1]).unwrap(),
            word_product(&maps, &[1, 0]).unwrap()
        );
        assert!(matches!(word_product(&maps, &[2]), Err(Error::InvalidWord(_))));
    }

    #[test]
    fn determinant_general() {
        let t = Matrix::from_rows(&[
            vec![2.0, 1.0, 0.0],
            vec![1.0, 3.0, 1.0],
            vec![0.0, 1.0, 4.0],
        ])
        .unwrap();
        assert!(close(t.determinant(), 18.0, 1e-14));
    }
}
