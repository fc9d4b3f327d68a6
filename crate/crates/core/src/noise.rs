//! Measurement-noise covariance `Q`, pre-whitening and Gaussian sampling.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Reject a covariance whose smallest eigenvalue is below this fraction of
/// the largest one.
pub const SPD_RELATIVE_TOLERANCE: f64 = 1e-12;

const SYMMETRY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseKind {
    /// `sigma2 * I`.
    Scalar { size: usize, sigma2: f64 },
    /// Independent measurements with per-edge variances.
    Diagonal(Vec<f64>),
    /// Dense symmetric positive definite covariance.
    Full(DMatrix<f64>),
}

#[derive(Debug, Clone)]
struct FullFactors {
    cholesky_lower: DMatrix<f64>,
    inverse: DMatrix<f64>,
    inverse_sqrt: DMatrix<f64>,
}

/// Covariance of the measurement noise vector `w`.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    kind: NoiseKind,
    factors: Option<FullFactors>,
}

impl PartialEq for NoiseModel {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

impl NoiseModel {
    pub fn scalar(size: usize, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::NotPositiveDefinite(format!(
                "scalar variance must be positive, got {sigma2}"
            )));
        }
        Ok(NoiseModel {
            kind: NoiseKind::Scalar { size, sigma2 },
            factors: None,
        })
    }

    pub fn diagonal(vars: Vec<f64>) -> Result<Self> {
        if let Some((m, v)) = vars
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v > 0.0 && v.is_finite()))
        {
            return Err(Error::NotPositiveDefinite(format!(
                "variance of measurement {m} must be positive, got {v}"
            )));
        }
        Ok(NoiseModel {
            kind: NoiseKind::Diagonal(vars),
            factors: None,
        })
    }

    pub fn full(q: DMatrix<f64>) -> Result<Self> {
        if !q.is_square() {
            return Err(Error::DimensionMismatch {
                what: "covariance columns",
                expected: q.nrows(),
                actual: q.ncols(),
            });
        }
        let scale = q.amax().max(1.0);
        let asym = (&q - q.transpose()).amax();
        if asym > SYMMETRY_TOLERANCE * scale {
            return Err(Error::NotSymmetric(asym));
        }
        let q = (&q + q.transpose()) * 0.5;
        let eig = SymmetricEigen::new(q.clone());
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        if !(max > 0.0) || min < SPD_RELATIVE_TOLERANCE * max {
            return Err(Error::NotPositiveDefinite(format!(
                "eigenvalues span [{min:e}, {max:e}]"
            )));
        }
        let cholesky = q
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("Cholesky factorization failed".into()))?;
        let inv_sqrt_diag = eig.eigenvalues.map(|l| 1.0 / l.sqrt());
        let inverse_sqrt = &eig.eigenvectors
            * DMatrix::from_diagonal(&inv_sqrt_diag)
            * eig.eigenvectors.transpose();
        let factors = FullFactors {
            inverse: cholesky.inverse(),
            cholesky_lower: cholesky.l(),
            inverse_sqrt,
        };
        Ok(NoiseModel {
            kind: NoiseKind::Full(q),
            factors: Some(factors),
        })
    }

    pub fn kind(&self) -> &NoiseKind {
        &self.kind
    }

    pub fn size(&self) -> usize {
        match &self.kind {
            NoiseKind::Scalar { size, .. } => *size,
            NoiseKind::Diagonal(v) => v.len(),
            NoiseKind::Full(q) => q.nrows(),
        }
    }

    /// Variances of the individual measurements (diagonal of `Q`).
    pub fn variances(&self) -> Vec<f64> {
        match &self.kind {
            NoiseKind::Scalar { size, sigma2 } => vec![*sigma2; *size],
            NoiseKind::Diagonal(v) => v.clone(),
            NoiseKind::Full(q) => q.diagonal().iter().copied().collect(),
        }
    }

    /// Whether `Q` is diagonal by representation.
    pub fn is_diagonal(&self) -> bool {
        !matches!(self.kind, NoiseKind::Full(_))
    }

    pub fn materialize(&self) -> DMatrix<f64> {
        match &self.kind {
            NoiseKind::Full(q) => q.clone(),
            _ => DMatrix::from_diagonal(&DVector::from_vec(self.variances())),
        }
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        match (&self.kind, &self.factors) {
            (NoiseKind::Full(_), Some(f)) => f.inverse.clone(),
            _ => DMatrix::from_diagonal(&DVector::from_iterator(
                self.size(),
                self.variances().into_iter().map(|v| 1.0 / v),
            )),
        }
    }

    /// Symmetric positive definite `Q^{-1/2}`.
    pub fn inverse_sqrt(&self) -> DMatrix<f64> {
        match (&self.kind, &self.factors) {
            (NoiseKind::Full(_), Some(f)) => f.inverse_sqrt.clone(),
            _ => DMatrix::from_diagonal(&DVector::from_iterator(
                self.size(),
                self.variances().into_iter().map(|v| 1.0 / v.sqrt()),
            )),
        }
    }

    /// Lower Cholesky factor `C` with `C C^T = Q`.
    pub fn cholesky_lower(&self) -> DMatrix<f64> {
        match (&self.kind, &self.factors) {
            (NoiseKind::Full(_), Some(f)) => f.cholesky_lower.clone(),
            _ => DMatrix::from_diagonal(&DVector::from_iterator(
                self.size(),
                self.variances().into_iter().map(f64::sqrt),
            )),
        }
    }

    /// Noise model of the measurements listed in `row_map`, in that order.
    pub fn restrict(&self, row_map: &[usize]) -> Result<Self> {
        let size = self.size();
        if let Some(&index) = row_map.iter().find(|&&m| m >= size) {
            return Err(Error::IndexOutOfRange {
                index,
                node_count: size,
            });
        }
        match &self.kind {
            NoiseKind::Scalar { sigma2, .. } => NoiseModel::scalar(row_map.len(), *sigma2),
            NoiseKind::Diagonal(v) => NoiseModel::diagonal(row_map.iter().map(|&m| v[m]).collect()),
            NoiseKind::Full(q) => NoiseModel::full(DMatrix::from_fn(
                row_map.len(),
                row_map.len(),
                |i, j| q[(row_map[i], row_map[j])],
            )),
        }
    }

    /// `x' = Q^{-1/2} x`.
    pub fn whiten(&self, x: &MeasurementVector) -> Result<MeasurementVector> {
        if x.whitened {
            return Err(Error::Degenerate("measurement vector is already whitened".into()));
        }
        self.check_len(x.values.len())?;
        let values = match (&self.kind, &self.factors) {
            (NoiseKind::Full(_), Some(f)) => &f.inverse_sqrt * &x.values,
            _ => DVector::from_iterator(
                x.values.len(),
                x.values
                    .iter()
                    .zip(self.variances())
                    .map(|(xi, v)| xi / v.sqrt()),
            ),
        };
        Ok(MeasurementVector {
            values,
            whitened: true,
        })
    }

    /// One noise draw `w = C z` with `z` standard normal, consuming exactly
    /// `size()` normals from `rng`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_iterator(self.size(), (0..self.size()).map(|_| rng.sample(StandardNormal)));
        match (&self.kind, &self.factors) {
            (NoiseKind::Scalar { sigma2, .. }, _) => z * sigma2.sqrt(),
            (NoiseKind::Diagonal(v), _) => {
                DVector::from_iterator(z.len(), z.iter().zip(v).map(|(zi, vi)| zi * vi.sqrt()))
            }
            (NoiseKind::Full(_), Some(f)) => &f.cholesky_lower * z,
            (NoiseKind::Full(_), None) => unreachable!("full models are factored on construction"),
        }
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.size() {
            return Err(Error::DimensionMismatch {
                what: "measurement vector length",
                expected: self.size(),
                actual: len,
            });
        }
        Ok(())
    }
}

/// Measurement vector `x` (or its whitened form `x'`).
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementVector {
    pub values: DVector<f64>,
    pub whitened: bool,
}

impl MeasurementVector {
    pub fn new(values: DVector<f64>) -> Self {
        MeasurementVector {
            values,
            whitened: false,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn mat(rows: &[&[f64]]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
    }

    #[test]
    fn materialize_structured_models() {
        let q = NoiseModel::scalar(3, 1e-4).unwrap().materialize();
        assert_eq!(q, DMatrix::from_diagonal_element(3, 3, 1e-4));
        let q = NoiseModel::diagonal(vec![1.0, 2.0, 3.0]).unwrap().materialize();
        assert_eq!(q, DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0])));
        assert!(NoiseModel::scalar(3, 0.0).is_err());
        assert!(NoiseModel::diagonal(vec![1.0, -1.0]).is_err());
    }

    #[test]
    fn full_model_requires_spd() {
        assert!(NoiseModel::full(mat(&[&[2.0, 1.0], &[1.0, 2.0]])).is_ok());
        assert!(matches!(
            NoiseModel::full(mat(&[&[1.0, 2.0], &[2.0, 1.0]])),
            Err(Error::NotPositiveDefinite(_))
        ));
        assert!(matches!(
            NoiseModel::full(mat(&[&[1.0, 0.5], &[0.0, 1.0]])),
            Err(Error::NotSymmetric(_))
        ));
        assert!(NoiseModel::full(mat(&[&[1.0, 0.0], &[0.0, 1e-13]])).is_err());
    }

    #[test]
    fn restrict_models() {
        let s = NoiseModel::scalar(5, 2.0).unwrap().restrict(&[1, 4]).unwrap();
        assert_eq!(s.kind(), &NoiseKind::Scalar { size: 2, sigma2: 2.0 });
        let d = NoiseModel::diagonal(vec![1.0, 2.0, 3.0, 4.0])
            .unwrap()
            .restrict(&[1, 3])
            .unwrap();
        assert_eq!(d.kind(), &NoiseKind::Diagonal(vec![2.0, 4.0]));
        let q = mat(&[
            &[4.0, 1.0, 0.5, 0.2],
            &[1.0, 3.0, 0.3, 0.1],
            &[0.5, 0.3, 2.0, 0.4],
            &[0.2, 0.1, 0.4, 1.0],
        ]);
        let f = NoiseModel::full(q.clone()).unwrap().restrict(&[0, 2]).unwrap();
        assert_eq!(f.materialize(), mat(&[&[4.0, 0.5], &[0.5, 2.0]]));
        assert!(NoiseModel::scalar(2, 1.0).unwrap().restrict(&[2]).is_err());
    }

    #[test]
    fn whitening() {
        let nm = NoiseModel::scalar(2, 4.0).unwrap();
        let x = MeasurementVector::new(DVector::from_vec(vec![2.0, 2.0]));
        assert_eq!(nm.whiten(&x).unwrap().values, DVector::from_vec(vec![1.0, 1.0]));
        let id = NoiseModel::scalar(2, 1.0).unwrap();
        assert_eq!(id.whiten(&x).unwrap().values, x.values);
        let wrong = MeasurementVector::new(DVector::from_vec(vec![1.0]));
        assert!(matches!(nm.whiten(&wrong), Err(Error::DimensionMismatch { .. })));
        let already = nm.whiten(&x).unwrap();
        assert!(nm.whiten(&already).is_err());
    }

    #[test]
    fn inverse_sqrt_whitens_covariance() {
        let q = mat(&[&[2.0, 1.0, 0.0], &[1.0, 2.0, 1e-4], &[0.0, 1e-4, 1e-6]]);
        let nm = NoiseModel::full(q.clone()).unwrap();
        let w = nm.inverse_sqrt();
        let err = (&w * &q * &w - DMatrix::identity(3, 3)).norm();
        assert!(err < 1e-10, "{err}");
        assert!((&w - w.transpose()).amax() < 1e-12);
    }

    #[test]
    fn whitened_samples_have_identity_covariance() {
        let nm = NoiseModel::full(mat(&[&[2.0, 1.0], &[1.0, 2.0]])).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let trials = 100_000;
        let mut acc = DMatrix::zeros(2, 2);
        for _ in 0..trials {
            let w = MeasurementVector::new(nm.sample(&mut rng));
            let x = nm.whiten(&w).unwrap().values;
            acc += &x * x.transpose();
        }
        acc /= trials as f64;
        let gap = (acc - DMatrix::identity(2, 2)).norm() / 2f64.sqrt();
        assert!(gap < 0.03, "{gap}");
    }

    #[test]
    fn sample_moments_match_q() {
        let q = mat(&[&[2.0, 1.0, 0.3], &[1.0, 2.0, 0.2], &[0.3, 0.2, 0.5]]);
        let nm = NoiseModel::full(q.clone()).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let trials = 100_000;
        let mut mean = DVector::zeros(3);
        let mut second = DMatrix::zeros(3, 3);
        for _ in 0..trials {
            let w = nm.sample(&mut rng);
            mean += &w;
            second += &w * w.transpose();
        }
        mean /= trials as f64;
        let cov = second / trials as f64 - &mean * mean.transpose();
        for i in 0..3 {
            let se = (q[(i, i)] / trials as f64).sqrt();
            assert!(mean[i].abs() < 4.0 * se, "mean[{i}] = {}", mean[i]);
        }
        let gap = (cov - &q).norm() / q.norm();
        assert!(gap < 0.03, "{gap}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let nm = NoiseModel::diagonal(vec![1.0, 2.0, 3.0]).unwrap();
        let a = nm.sample(&mut ChaCha20Rng::seed_from_u64(99));
        let b = nm.sample(&mut ChaCha20Rng::seed_from_u64(99));
        assert_eq!(a, b);
    }
}
