//! Least-squares phase estimation from pairwise difference measurements.
//!
//! The measurement model is `x = B phi + w` with `cov(w) = Q`. Because every
//! row of `B` sums to zero, `phi` is identifiable only up to a common offset
//! (and, when calibration uses the subset Ω alone, up to an arbitrary value
//! at every node outside Ω). The estimators here return the minimum-norm
//! solution, i.e. all those free offsets are set to zero.
//!
//! Everything is expressed through the generalized Laplacian
//! `L = B^T Q^{-1} B` and an orthonormal basis `Z` of the identifiable
//! subspace; the estimate covariance is `Z (Z^T L Z)^{-1} Z^T`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, check_symmetric};
use crate::noise::{MeasurementVector, NoiseKind, NoiseModel};
use crate::topology::{subset_rows, IncidenceMatrix, SubsetSpec, Topology};

/// Relative threshold below which an eigenvalue counts as zero.
pub const ZERO_EIGENVALUE_TOLERANCE: f64 = 1e-10;

/// Largest accepted condition number of the reduced system `Z^T L Z`.
pub const MAX_CONDITION_NUMBER: f64 = 1e12;

/// `L = B^T Q^{-1} B`. Diagonal noise models are accumulated edge by edge
/// without forming `Q`.
pub fn laplacian(b: &IncidenceMatrix, q: &NoiseModel) -> Result<DMatrix<f64>> {
    if q.size() != b.edge_count() {
        return Err(Error::DimensionMismatch {
            what: "noise covariance size",
            expected: b.edge_count(),
            actual: q.size(),
        });
    }
    let n = b.node_count();
    match q.kind() {
        NoiseKind::Full(_) => {
            let bm = b.matrix();
            Ok(linalg::symmetrize(&(bm.transpose() * q.inverse() * bm)))
        }
        _ => {
            let mut l = DMatrix::zeros(n, n);
            for (&(p, m), var) in b.rows().iter().zip(q.variances()) {
                let w = 1.0 / var;
                l[(p, p)] += w;
                l[(m, m)] += w;
                l[(p, m)] -= w;
                l[(m, p)] -= w;
            }
            Ok(l)
        }
    }
}

/// Orthonormal basis of the orthogonal complement of `span(null_vectors)`.
///
/// Householder QR of the `N x k` matrix of null vectors; the trailing
/// `N - k` columns of the orthogonal factor are returned. Costs
/// `O(k N (N - k))`.
pub fn complement_basis(null_vectors: &[DVector<f64>]) -> Result<DMatrix<f64>> {
    let k = null_vectors.len();
    let n = match null_vectors.first() {
        Some(v) => v.len(),
        None => return Err(Error::Degenerate("no null vectors given".into())),
    };
    if null_vectors.iter().any(|v| v.len() != n) {
        return Err(Error::Degenerate("null vectors differ in length".into()));
    }
    if k >= n {
        return Err(Error::Degenerate(format!(
            "{k} null vectors leave no complement in dimension {n}"
        )));
    }
    let mut a = DMatrix::from_columns(null_vectors);
    let mut reflectors: Vec<DVector<f64>> = Vec::with_capacity(k);
    for j in 0..k {
        let original = a.column(j).norm();
        let x = a.view((j, j), (n - j, 1)).clone_owned();
        let norm = x.norm();
        if !(original > 0.0) || norm <= 1e-10 * original {
            return Err(Error::Degenerate(format!(
                "null vector {j} is linearly dependent on the previous ones"
            )));
        }
        let mut v = x.column(0).clone_owned();
        v[0] += norm.copysign(x[0]);
        let vn = v.norm();
        v /= vn;
        let mut block = a.view_mut((j, j), (n - j, k - j));
        let proj = v.transpose() * &block;
        block -= &v * proj * 2.0;
        reflectors.push(v);
    }
    let mut z = DMatrix::zeros(n, n - k);
    for c in 0..n - k {
        z[(k + c, c)] = 1.0;
    }
    for (j, v) in reflectors.iter().enumerate().rev() {
        let mut block = z.rows_mut(j, n - j);
        let proj = v.transpose() * &block;
        block -= v * proj * 2.0;
    }
    Ok(z)
}

/// `L` (or `L_Ω`) together with a basis `Z` of the identifiable subspace
/// and the inverse of the reduced system `Z^T L Z`.
#[derive(Debug, Clone)]
pub struct GeneralizedLaplacian {
    matrix: DMatrix<f64>,
    basis: DMatrix<f64>,
    omega: Option<SubsetSpec>,
    reduced_inverse: DMatrix<f64>,
    reduced_eigenvalues: Vec<f64>,
}

impl GeneralizedLaplacian {
    /// Full problem over a connected measurement graph.
    pub fn full(b: &IncidenceMatrix, q: &NoiseModel) -> Result<Self> {
        let n = b.node_count();
        if n < 2 {
            return Err(Error::InvalidTopology("need at least two nodes".into()));
        }
        let all: Vec<usize> = (0..n).collect();
        if !b.connects(&all) {
            return Err(Error::Disconnected);
        }
        let l = laplacian(b, q)?;
        let z = complement_basis(&[linalg::ones(n)])?;
        Self::from_parts(l, z, None)
    }

    /// Subset problem: `b_omega` holds only measurements among the nodes of
    /// `omega`, which must form a connected subgraph.
    pub fn subset(b_omega: &IncidenceMatrix, q_omega: &NoiseModel, omega: &SubsetSpec) -> Result<Self> {
        let n = b_omega.node_count();
        if omega.node_count() != n {
            return Err(Error::DimensionMismatch {
                what: "subset node count",
                expected: n,
                actual: omega.node_count(),
            });
        }
        if omega.len() < 2 {
            return Err(Error::InvalidSubset(
                "at least two participating nodes are needed".into(),
            ));
        }
        if let Some(&(p, m)) = b_omega
            .rows()
            .iter()
            .find(|(p, m)| !omega.contains(*p) || !omega.contains(*m))
        {
            return Err(Error::InvalidSubset(format!(
                "measurement ({p}, {m}) leaves the subset"
            )));
        }
        if !b_omega.connects(omega.members()) {
            return Err(Error::SubsetDisconnected);
        }
        let l = laplacian(b_omega, q_omega)?;
        Self::from_parts(l, subset_basis(omega)?, Some(omega.clone()))
    }

    /// Assembles from an explicit `L` and basis `Z`; used to check that
    /// results do not depend on the choice of `Z`.
    pub fn from_parts(matrix: DMatrix<f64>, basis: DMatrix<f64>, omega: Option<SubsetSpec>) -> Result<Self> {
        check_symmetric(&matrix)?;
        if basis.nrows() != matrix.nrows() {
            return Err(Error::DimensionMismatch {
                what: "basis rows",
                expected: matrix.nrows(),
                actual: basis.nrows(),
            });
        }
        let reduced = linalg::symmetrize(&(basis.transpose() * &matrix * &basis));
        let eigenvalues = linalg::sorted_eigenvalues(&reduced);
        let (lo, hi) = (eigenvalues[0], eigenvalues[eigenvalues.len() - 1]);
        if !(lo > 0.0) || hi / lo > MAX_CONDITION_NUMBER {
            return Err(Error::IllConditioned(if lo > 0.0 { hi / lo } else { f64::INFINITY }));
        }
        let reduced_inverse = linalg::symmetrize(
            &reduced
                .cholesky()
                .ok_or(Error::IllConditioned(f64::INFINITY))?
                .inverse(),
        );
        Ok(GeneralizedLaplacian {
            matrix,
            basis,
            omega,
            reduced_inverse,
            reduced_eigenvalues: eigenvalues,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// `Z` (full problem) or `Z_Ω` (subset problem).
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn omega(&self) -> Option<&SubsetSpec> {
        self.omega.as_ref()
    }

    pub fn node_count(&self) -> usize {
        self.matrix.nrows()
    }

    /// Dimension of the unidentifiable subspace: 1, or `N - N_Ω + 1`.
    pub fn nullspace_dim(&self) -> usize {
        self.node_count() - self.basis.ncols()
    }

    /// `(Z^T L Z)^{-1}`.
    pub fn reduced_inverse(&self) -> &DMatrix<f64> {
        &self.reduced_inverse
    }

    /// Eigenvalues of `Z^T L Z` in ascending order: the nonzero
    /// eigenvalues of `L` in the full case.
    pub fn reduced_eigenvalues(&self) -> &[f64] {
        &self.reduced_eigenvalues
    }

    pub fn condition_number(&self) -> f64 {
        self.reduced_eigenvalues[self.reduced_eigenvalues.len() - 1] / self.reduced_eigenvalues[0]
    }

    /// `Z (Z^T L Z)^{-1} Z^T`.
    pub fn covariance(&self) -> DMatrix<f64> {
        linalg::symmetrize(&(&self.basis * &self.reduced_inverse * self.basis.transpose()))
    }

    /// `Z Z^T`, the projector onto the identifiable subspace.
    pub fn projector(&self) -> DMatrix<f64> {
        &self.basis * self.basis.transpose()
    }

    /// Nullspace dimension of `L` counted numerically from its eigenvalues.
    pub fn numeric_nullspace_dim(&self) -> usize {
        let ev = linalg::sorted_eigenvalues(&self.matrix);
        let max = ev.last().copied().unwrap_or(0.0).abs();
        ev.iter().filter(|l| l.abs() <= ZERO_EIGENVALUE_TOLERANCE * max).count()
    }
}

/// Basis of the complement of `{u, e_n : n not in Ω}`: vectors supported on
/// Ω and summing to zero.
fn subset_basis(omega: &SubsetSpec) -> Result<DMatrix<f64>> {
    let local = complement_basis(&[linalg::ones(omega.len())])?;
    let mut z = DMatrix::zeros(omega.node_count(), local.ncols());
    for (r, &node) in omega.members().iter().enumerate() {
        z.row_mut(node).copy_from(&local.row(r));
    }
    Ok(z)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CaseTag {
    /// All measurements among all nodes.
    Full,
    /// Only measurements among the listed nodes.
    Subset(Vec<usize>),
}

/// Estimate, covariance and identifiable-part projector.
#[derive(Debug, Clone)]
pub struct CalibrationSolution {
    pub estimate: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub projector: DMatrix<f64>,
    pub case: CaseTag,
}

/// Linear least-squares estimator with its gain matrix precomputed, so that
/// repeated solves (Monte Carlo) cost one matrix-vector product each.
#[derive(Debug, Clone)]
pub struct Estimator {
    laplacian: GeneralizedLaplacian,
    gain: DMatrix<f64>,
    covariance: DMatrix<f64>,
    projector: DMatrix<f64>,
    case: CaseTag,
}

impl Estimator {
    pub fn full(b: &IncidenceMatrix, q: &NoiseModel) -> Result<Self> {
        let gl = GeneralizedLaplacian::full(b, q)?;
        Ok(Self::assemble(gl, b, q, CaseTag::Full))
    }

    pub fn subset(b_omega: &IncidenceMatrix, q_omega: &NoiseModel, omega: &SubsetSpec) -> Result<Self> {
        let gl = GeneralizedLaplacian::subset(b_omega, q_omega, omega)?;
        Ok(Self::assemble(gl, b_omega, q_omega, CaseTag::Subset(omega.members().to_vec())))
    }

    fn assemble(gl: GeneralizedLaplacian, b: &IncidenceMatrix, q: &NoiseModel, case: CaseTag) -> Self {
        let covariance = gl.covariance();
        let n = b.node_count();
        // gain = Z (Z^T L Z)^{-1} Z^T B^T Q^{-1} = cov B^T Q^{-1}
        let gain = match q.kind() {
            NoiseKind::Full(_) => &covariance * (b.matrix().transpose() * q.inverse()),
            _ => {
                let mut g = DMatrix::zeros(n, b.edge_count());
                for (m, (&(p, r), var)) in b.rows().iter().zip(q.variances()).enumerate() {
                    let col = (covariance.column(p) - covariance.column(r)) / var;
                    g.set_column(m, &col);
                }
                g
            }
        };
        let projector = gl.projector();
        Estimator {
            laplacian: gl,
            gain,
            covariance,
            projector,
            case,
        }
    }

    pub fn laplacian(&self) -> &GeneralizedLaplacian {
        &self.laplacian
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn projector(&self) -> &DMatrix<f64> {
        &self.projector
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.gain
    }

    pub fn case(&self) -> &CaseTag {
        &self.case
    }

    pub fn measurement_count(&self) -> usize {
        self.gain.ncols()
    }

    /// Minimum-norm estimate from raw (unwhitened) measurements.
    pub fn estimate(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.gain.ncols() {
            return Err(Error::DimensionMismatch {
                what: "measurement vector length",
                expected: self.gain.ncols(),
                actual: x.len(),
            });
        }
        Ok(&self.gain * x)
    }

    pub fn solve(&self, x: &MeasurementVector) -> Result<CalibrationSolution> {
        if x.whitened {
            return Err(Error::Degenerate(
                "estimator expects raw measurements, not whitened ones".into(),
            ));
        }
        Ok(CalibrationSolution {
            estimate: self.estimate(&x.values)?,
            covariance: self.covariance.clone(),
            projector: self.projector.clone(),
            case: self.case.clone(),
        })
    }
}

/// Least squares using every measurement of a connected graph.
pub fn solve_full(b: &IncidenceMatrix, q: &NoiseModel, x: &MeasurementVector) -> Result<CalibrationSolution> {
    Estimator::full(b, q)?.solve(x)
}

/// Least squares using only the measurements among the nodes of Ω.
pub fn solve_subset(
    b_omega: &IncidenceMatrix,
    q_omega: &NoiseModel,
    x_omega: &MeasurementVector,
    omega: &SubsetSpec,
) -> Result<CalibrationSolution> {
    Estimator::subset(b_omega, q_omega, omega)?.solve(x_omega)
}

pub fn covariance_full(gl: &GeneralizedLaplacian) -> Result<DMatrix<f64>> {
    if gl.omega().is_some() {
        return Err(Error::Degenerate("expected a full-problem Laplacian".into()));
    }
    Ok(gl.covariance())
}

pub fn covariance_subset(gl: &GeneralizedLaplacian) -> Result<DMatrix<f64>> {
    if gl.omega().is_none() {
        return Err(Error::Degenerate("expected a subset-problem Laplacian".into()));
    }
    Ok(gl.covariance())
}

/// Expected estimate `Z Z^T phi` for true phases `phi`.
pub fn mean_projection(phi_true: &DVector<f64>, solution: &CalibrationSolution) -> Result<DVector<f64>> {
    if phi_true.len() != solution.projector.nrows() {
        return Err(Error::DimensionMismatch {
            what: "phase vector length",
            expected: solution.projector.nrows(),
            actual: phi_true.len(),
        });
    }
    Ok(&solution.projector * phi_true)
}

/// Loewner order test `A ⪰ B`: the smallest eigenvalue of `A - B` is at
/// least `-tol * max(1, ||A||_2)`.
pub fn psd_order(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> Result<bool> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch {
            what: "matrix order",
            expected: a.nrows(),
            actual: b.nrows(),
        });
    }
    check_symmetric(a)?;
    check_symmetric(b)?;
    let ev_a = linalg::sorted_eigenvalues(a);
    let norm_a = ev_a.iter().fold(0.0f64, |m, l| m.max(l.abs()));
    let min_diff = linalg::min_eigenvalue(&(a - b));
    Ok(min_diff >= -tol * norm_a.max(1.0))
}

/// Topology, noise and optional participating subset with the estimators
/// for both calibration cases built up front.
#[derive(Debug, Clone)]
pub struct CalibrationProblem {
    topology: Topology,
    noise: NoiseModel,
    incidence: IncidenceMatrix,
    full: Estimator,
    restricted: Option<RestrictedProblem>,
}

#[derive(Debug, Clone)]
pub struct RestrictedProblem {
    pub subset: SubsetSpec,
    pub incidence: IncidenceMatrix,
    /// Row of `B` for each row of `B_Ω`.
    pub row_map: Vec<usize>,
    pub noise: NoiseModel,
    pub estimator: Estimator,
}

impl CalibrationProblem {
    pub fn new(topology: Topology, noise: NoiseModel, subset: Option<SubsetSpec>) -> Result<Self> {
        if !topology.is_connected() {
            return Err(Error::Disconnected);
        }
        let incidence = topology.incidence();
        let full = Estimator::full(&incidence, &noise)?;
        let restricted = match subset {
            Some(subset) => {
                let (b_omega, row_map) = subset_rows(&topology, &subset)?;
                let q_omega = noise.restrict(&row_map)?;
                let estimator = Estimator::subset(&b_omega, &q_omega, &subset)?;
                Some(RestrictedProblem {
                    subset,
                    incidence: b_omega,
                    row_map,
                    noise: q_omega,
                    estimator,
                })
            }
            None => None,
        };
        Ok(CalibrationProblem {
            topology,
            noise,
            incidence,
            full,
            restricted,
        })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn incidence(&self) -> &IncidenceMatrix {
        &self.incidence
    }

    pub fn full(&self) -> &Estimator {
        &self.full
    }

    pub fn restricted(&self) -> Option<&RestrictedProblem> {
        self.restricted.as_ref()
    }

    pub fn node_count(&self) -> usize {
        self.topology.node_count()
    }
}
