//! Null-steering beamforming from the participating subset Ω and the
//! leakage variance it suffers from phase-estimation errors.
//!
//! With weights `a_n` chosen so that `sum h_n a_n = 0`, the vector
//! `v_n = h_n a_n` (zero outside Ω) lies in the column span of `Z_Ω` and
//! can be written `v = Z_Ω p`. To first order the leaked effective channel
//! has variance `v^H cov(phi_hat) v`, i.e. `p^H K p` with kernel `K_a` when
//! all measurements are used and `K_b` when only those inside Ω are.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::calibrate::GeneralizedLaplacian;
use crate::error::{Error, Result};
use crate::linalg;
use crate::topology::SubsetSpec;

/// Channel, weights and the null-steering vector `v = Z_Ω p`.
#[derive(Debug, Clone)]
pub struct BeamformScenario {
    omega: SubsetSpec,
    channel: DVector<Complex64>,
    weights: DVector<Complex64>,
    v: DVector<Complex64>,
    p: DVector<Complex64>,
}

impl BeamformScenario {
    /// Null-steering weights for the given coordinates `p` in the basis
    /// `z_omega` (the `Z_Ω` of a subset problem over `omega`).
    pub fn null_steering(
        channel: DVector<Complex64>,
        z_omega: &DMatrix<f64>,
        omega: &SubsetSpec,
        p: DVector<Complex64>,
    ) -> Result<Self> {
        let n = omega.node_count();
        if omega.len() < 2 {
            return Err(Error::InvalidSubset(
                "null steering needs at least two antennas".into(),
            ));
        }
        for (what, expected, actual) in [
            ("channel length", n, channel.len()),
            ("basis rows", n, z_omega.nrows()),
            ("basis columns", omega.len() - 1, z_omega.ncols()),
            ("coordinate vector length", omega.len() - 1, p.len()),
        ] {
            if expected != actual {
                return Err(Error::DimensionMismatch {
                    what,
                    expected,
                    actual,
                });
            }
        }
        if let Some(&node) = omega.members().iter().find(|&&m| channel[m].norm() == 0.0) {
            return Err(Error::ZeroChannel(node));
        }
        let z = z_omega.map(|x| Complex64::new(x, 0.0));
        let v = &z * &p;
        let mask = omega.mask();
        let weights = DVector::from_fn(n, |i, _| {
            if mask[i] {
                v[i] / channel[i]
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        Ok(BeamformScenario {
            omega: omega.clone(),
            channel,
            weights,
            v,
            p,
        })
    }

    /// Same as [`null_steering`](Self::null_steering) with `p` drawn
    /// uniformly from the complex unit sphere.
    pub fn random_null_steering<R: Rng + ?Sized>(
        channel: DVector<Complex64>,
        z_omega: &DMatrix<f64>,
        omega: &SubsetSpec,
        rng: &mut R,
    ) -> Result<Self> {
        let dim = omega.len().saturating_sub(1);
        let p = random_unit_coordinates(dim, rng);
        Self::null_steering(channel, z_omega, omega, p)
    }

    pub fn omega(&self) -> &SubsetSpec {
        &self.omega
    }

    pub fn channel(&self) -> &DVector<Complex64> {
        &self.channel
    }

    pub fn weights(&self) -> &DVector<Complex64> {
        &self.weights
    }

    pub fn v(&self) -> &DVector<Complex64> {
        &self.v
    }

    pub fn p(&self) -> &DVector<Complex64> {
        &self.p
    }

    /// `|sum_{n in Ω} h_n a_n|`.
    pub fn constraint_residual(&self) -> f64 {
        self.omega
            .members()
            .iter()
            .map(|&n| self.channel[n] * self.weights[n])
            .sum::<Complex64>()
            .norm()
    }
}

/// Uniform draw from the unit sphere in `C^dim`.
pub fn random_unit_coordinates<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<Complex64> {
    loop {
        let p = DVector::from_fn(dim, |_, _| {
            Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
        });
        let norm = p.norm();
        if norm > 0.0 {
            return p.unscale(norm);
        }
    }
}

/// Channel with unit modulus and independent uniform phases.
pub fn unit_modulus_channel<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<Complex64> {
    DVector::from_fn(n, |_, _| {
        Complex64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU))
    })
}

/// Exact `g = sum_{n in Ω} h_n a_n e^{j phi_hat_n} e^{-j phi_n}`.
pub fn effective_channel(
    scenario: &BeamformScenario,
    phi_true: &DVector<f64>,
    phi_hat: &DVector<f64>,
) -> Result<Complex64> {
    let n = scenario.channel.len();
    for (what, len) in [("true phase length", phi_true.len()), ("estimate length", phi_hat.len())] {
        if len != n {
            return Err(Error::DimensionMismatch {
                what,
                expected: n,
                actual: len,
            });
        }
    }
    Ok(scenario
        .omega
        .members()
        .iter()
        .map(|&k| {
            scenario.channel[k]
                * scenario.weights[k]
                * Complex64::from_polar(1.0, phi_hat[k] - phi_true[k])
        })
        .sum())
}

/// `x^H A x` for real symmetric `A`.
pub fn hermitian_form(a: &DMatrix<f64>, x: &DVector<Complex64>) -> f64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for j in 0..x.len() {
        let col: Complex64 = (0..x.len()).map(|i| x[i].conj() * a[(i, j)]).sum();
        acc += col * x[j];
    }
    acc.re
}

/// First-order leakage variance `v^H cov(phi_hat) v`.
pub fn var_g(scenario: &BeamformScenario, covariance: &DMatrix<f64>) -> Result<f64> {
    let n = scenario.v.len();
    if covariance.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            what: "covariance order",
            expected: n,
            actual: covariance.nrows(),
        });
    }
    Ok(hermitian_form(covariance, &scenario.v))
}

fn check_subset_basis(full: &GeneralizedLaplacian, z_omega: &DMatrix<f64>) -> Result<()> {
    if z_omega.nrows() != full.node_count() {
        return Err(Error::DimensionMismatch {
            what: "subset basis rows",
            expected: full.node_count(),
            actual: z_omega.nrows(),
        });
    }
    Ok(())
}

/// `K_a = Z_Ω^T Z (Z^T L Z)^{-1} Z^T Z_Ω`.
pub fn kernel_a(full: &GeneralizedLaplacian, z_omega: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if full.omega().is_some() {
        return Err(Error::Degenerate("kernel_a needs the full-problem Laplacian".into()));
    }
    check_subset_basis(full, z_omega)?;
    let w = full.basis().transpose() * z_omega;
    Ok(linalg::symmetrize(&(w.transpose() * full.reduced_inverse() * &w)))
}

/// `K_a` through the Schur complement of `L` on the non-participating
/// nodes `Ω̄`:
/// `(Z_Ω^T L Z_Ω - Z_Ω^T L E (E^T L E)^{-1} E^T L Z_Ω)^{-1}` with `E = E_Ω̄`.
pub fn kernel_a_schur(l: &DMatrix<f64>, z_omega: &DMatrix<f64>, omega: &SubsetSpec) -> Result<DMatrix<f64>> {
    let lz = l * z_omega;
    let mut s = z_omega.transpose() * &lz;
    let outside = omega.complement();
    if !outside.is_empty() {
        // E^T L E is the principal block of L on Ω̄; E^T L Z_Ω are its rows of L Z_Ω.
        let l_oo = DMatrix::from_fn(outside.len(), outside.len(), |i, j| l[(outside[i], outside[j])]);
        let l_oz = DMatrix::from_fn(outside.len(), lz.ncols(), |i, j| lz[(outside[i], j)]);
        let chol = linalg::symmetrize(&l_oo).cholesky().ok_or_else(|| {
            Error::Degenerate("L restricted to the non-participating nodes is singular".into())
        })?;
        s -= l_oz.transpose() * chol.solve(&l_oz);
    }
    let s = linalg::symmetrize(&s);
    let inv = s
        .cholesky()
        .ok_or(Error::IllConditioned(f64::INFINITY))?
        .inverse();
    Ok(linalg::symmetrize(&inv))
}

/// `K_b = (Z_Ω^T L_Ω Z_Ω)^{-1}`.
pub fn kernel_b(subset: &GeneralizedLaplacian) -> Result<DMatrix<f64>> {
    if subset.omega().is_none() {
        return Err(Error::Degenerate("kernel_b needs a subset-problem Laplacian".into()));
    }
    Ok(subset.reduced_inverse().clone())
}

/// The two leakage kernels over a common `Z_Ω` basis.
#[derive(Debug, Clone)]
pub struct KernelPair {
    pub k_a: DMatrix<f64>,
    pub k_b: DMatrix<f64>,
}

impl KernelPair {
    pub fn new(full: &GeneralizedLaplacian, subset: &GeneralizedLaplacian) -> Result<Self> {
        Ok(KernelPair {
            k_a: kernel_a(full, subset.basis())?,
            k_b: kernel_b(subset)?,
        })
    }

    /// `(p^H K_a p, p^H K_b p)`.
    pub fn variances(&self, p: &DVector<Complex64>) -> (f64, f64) {
        (hermitian_form(&self.k_a, p), hermitian_form(&self.k_b, p))
    }
}

/// `Δ = L - L_Ω`, the information discarded by calibrating inside Ω only.
pub fn delta_matrix(full: &GeneralizedLaplacian, subset: &GeneralizedLaplacian) -> Result<DMatrix<f64>> {
    if full.node_count() != subset.node_count() {
        return Err(Error::DimensionMismatch {
            what: "Laplacian order",
            expected: full.node_count(),
            actual: subset.node_count(),
        });
    }
    Ok(full.matrix() - subset.matrix())
}

/// `Z_Ω^T Δ^{1/2} (I - Π) Δ^{1/2} Z_Ω` where `Π` projects onto the columns
/// of `Δ^{1/2} E_Ω̄`. Equals `K_a^{-1} - K_b^{-1}`.
pub fn inverse_kernel_difference(
    delta: &DMatrix<f64>,
    z_omega: &DMatrix<f64>,
    omega: &SubsetSpec,
) -> DMatrix<f64> {
    let n = delta.nrows();
    let root = linalg::psd_sqrt(delta);
    let e = SubsetSpec::selector(n, &omega.complement());
    let pi = linalg::column_space_projector(&(&root * e), 1e-10);
    let inner = DMatrix::identity(n, n) - pi;
    linalg::symmetrize(&(z_omega.transpose() * &root * inner * &root * z_omega))
}

/// `λ_max(K_b - K_a) / λ_max(K_b)`: the largest leakage reduction from
/// calibrating with all measurements, relative to the worst case of
/// calibrating inside Ω only.
pub fn kernel_gap(kp: &KernelPair) -> Result<f64> {
    if kp.k_a.shape() != kp.k_b.shape() {
        return Err(Error::DimensionMismatch {
            what: "kernel order",
            expected: kp.k_b.nrows(),
            actual: kp.k_a.nrows(),
        });
    }
    let top = linalg::max_eigenvalue(&kp.k_b);
    if !(top > 0.0) {
        return Err(Error::Degenerate("K_b has no positive eigenvalue".into()));
    }
    Ok(linalg::max_eigenvalue(&(&kp.k_b - &kp.k_a)) / top)
}

/// Power-gain loss `|1 + 1|^2 / |1 + e^{j delta}|^2` when half of the
/// antennas of a coherent beam are off by `delta` radians. Returns
/// `f64::INFINITY` at `delta = π` (mod 2π).
pub fn coherent_loss(delta: f64) -> f64 {
    // |1 + e^{j delta}|^2 = 4 cos^2(delta / 2)
    let c = (delta / 2.0).cos();
    if c.abs() < f64::EPSILON {
        return f64::INFINITY;
    }
    1.0 / (c * c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::NoiseModel;
    use crate::topology::{subset_rows, Topology};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use std::f64::consts::PI;

    fn problem(t: &Topology, omega: &SubsetSpec, sigma2: f64) -> (GeneralizedLaplacian, GeneralizedLaplacian) {
        let q = NoiseModel::scalar(t.edge_count(), sigma2).unwrap();
        let full = GeneralizedLaplacian::full(&t.incidence(), &q).unwrap();
        let (bo, map) = subset_rows(t, omega).unwrap();
        let sub = GeneralizedLaplacian::subset(&bo, &q.restrict(&map).unwrap(), omega).unwrap();
        (full, sub)
    }

    fn ones_channel(n: usize) -> DVector<Complex64> {
        DVector::from_element(n, Complex64::new(1.0, 0.0))
    }

    #[test]
    fn two_antenna_null_steering() {
        let t = Topology::line(4).unwrap();
        let omega = SubsetSpec::new(4, &[0, 1]).unwrap();
        let (_, sub) = problem(&t, &omega, 1.0);
        let p = DVector::from_element(1, Complex64::new(1.0, 0.0));
        let sc = BeamformScenario::null_steering(ones_channel(4), sub.basis(), &omega, p).unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert!((sc.v()[0].norm() - s).abs() < 1e-15);
        assert!((sc.v()[0] + sc.v()[1]).norm() < 1e-15);
        assert!(sc.v()[2].norm() == 0.0 && sc.v()[3].norm() == 0.0);
        assert_eq!(sc.weights(), sc.v());
    }

    #[test]
    fn random_scenarios_satisfy_constraints() {
        let t = Topology::grid8(4, 5).unwrap();
        let omega = SubsetSpec::new(20, &[0, 1, 2, 5, 6, 7, 11]).unwrap();
        let (_, sub) = problem(&t, &omega, 1.0);
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..100 {
            let h = unit_modulus_channel(20, &mut rng);
            let sc = BeamformScenario::random_null_steering(h, sub.basis(), &omega, &mut rng).unwrap();
            assert!(sc.constraint_residual() <= 1e-12);
            assert!((sc.v().norm() - sc.p().norm()).abs() < 1e-12);
            assert!((sc.p().norm() - 1.0).abs() < 1e-12);
            let sum: Complex64 = sc.v().iter().sum();
            assert!(sum.norm() < 1e-12);
        }
    }

    #[test]
    fn zero_channel_is_rejected() {
        let t = Topology::line(3).unwrap();
        let omega = SubsetSpec::all(3);
        let (_, sub) = problem(&t, &omega, 1.0);
        let mut h = ones_channel(3);
        h[1] = Complex64::new(0.0, 0.0);
        let p = DVector::from_element(2, Complex64::new(0.5, 0.0));
        assert!(matches!(
            BeamformScenario::null_steering(h, sub.basis(), &omega, p),
            Err(Error::ZeroChannel(1))
        ));
    }

    #[test]
    fn effective_channel_examples() {
        let t = Topology::ring(5).unwrap();
        let omega = SubsetSpec::new(5, &[0, 1, 2]).unwrap();
        let (_, sub) = problem(&t, &omega, 1.0);
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let h = unit_modulus_channel(5, &mut rng);
        let sc = BeamformScenario::random_null_steering(h, sub.basis(), &omega, &mut rng).unwrap();
        let phi = DVector::from_vec(vec![0.1, -0.2, 0.3, 0.0, 0.05]);
        assert!(effective_channel(&sc, &phi, &phi).unwrap().norm() < 1e-12);
        let hat = DVector::from_vec(vec![0.12, -0.25, 0.31, 0.0, 0.0]);
        let g = effective_channel(&sc, &phi, &hat).unwrap();
        let shifted = hat.add_scalar(0.9);
        let g2 = effective_channel(&sc, &phi, &shifted).unwrap();
        assert!((g.norm() - g2.norm()).abs() < 1e-14);
    }

    #[test]
    fn two_antenna_effective_channel_by_hand() {
        let omega = SubsetSpec::all(2);
        let z = crate::calibrate::complement_basis(&[linalg::ones(2)]).unwrap();
        let s = 1.0 / 2f64.sqrt();
        let h = DVector::from_vec(vec![Complex64::new(s, 0.0), Complex64::new(s, 0.0)]);
        let sign = z[(0, 0)].signum();
        // v = (1, -1)/sqrt(2) * (1/sqrt 2) so that h_n a_n = ±1/2
        let p = DVector::from_element(1, Complex64::new(sign * s, 0.0));
        let sc = BeamformScenario::null_steering(h, &z, &omega, p).unwrap();
        let zero = DVector::zeros(2);
        for delta in [0.0, 0.3, 1.0, 2.5] {
            let hat = DVector::from_vec(vec![delta, 0.0]);
            let g = effective_channel(&sc, &zero, &hat).unwrap();
            let expected = (Complex64::new(1.0, 0.0) - Complex64::from_polar(1.0, delta)).norm_sqr() / 4.0;
            assert!((g.norm_sqr() - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn var_g_examples() {
        let n = 6;
        let omega = SubsetSpec::new(n, &[1, 2, 3]).unwrap();
        let t = Topology::line(n).unwrap();
        let (_, sub) = problem(&t, &omega, 1.0);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let sc = BeamformScenario::random_null_steering(ones_channel(n), sub.basis(), &omega, &mut rng).unwrap();
        assert_eq!(var_g(&sc, &DMatrix::zeros(n, n)).unwrap(), 0.0);
        let sigma2 = 0.37;
        let proj = (DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64)) * sigma2;
        assert!((var_g(&sc, &proj).unwrap() - sigma2).abs() < 1e-14);
        assert!(var_g(&sc, &DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn kernels_coincide_when_omega_is_everything() {
        let t = Topology::grid8(3, 3).unwrap();
        let (full, sub) = problem(&t, &SubsetSpec::all(9), 1e-4);
        let kp = KernelPair::new(&full, &sub).unwrap();
        assert!((&kp.k_a - &kp.k_b).amax() < 1e-10 * kp.k_b.amax());
        assert!(kernel_gap(&kp).unwrap().abs() < 1e-12);
        assert!(delta_matrix(&full, &sub).unwrap().amax() == 0.0);
    }

    #[test]
    fn line_with_contiguous_omega_has_equal_kernels() {
        let t = Topology::line(10).unwrap();
        for members in [vec![0, 1, 2], vec![3, 4, 5, 6], vec![7, 8, 9]] {
            let omega = SubsetSpec::new(10, &members).unwrap();
            let (full, sub) = problem(&t, &omega, 1.0);
            let kp = KernelPair::new(&full, &sub).unwrap();
            assert!((&kp.k_a - &kp.k_b).amax() < 1e-10);
        }
    }

    #[test]
    fn schur_route_matches_definition() {
        let t = Topology::grid8(4, 4).unwrap();
        let omega = SubsetSpec::grid_corner(4, 4, 3).unwrap();
        let (full, sub) = problem(&t, &omega, 1e-4);
        let direct = kernel_a(&full, sub.basis()).unwrap();
        let schur = kernel_a_schur(full.matrix(), sub.basis(), &omega).unwrap();
        assert!((&direct - &schur).amax() < 1e-9 * direct.amax());
    }

    #[test]
    fn two_node_subset_kernel_b() {
        let t = Topology::line(4).unwrap();
        let omega = SubsetSpec::new(4, &[1, 2]).unwrap();
        let (_, sub) = problem(&t, &omega, 1.0);
        let kb = kernel_b(&sub).unwrap();
        assert_eq!(kb.shape(), (1, 1));
        assert!((kb[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kernel_b_reproduces_subset_quadratic_form() {
        let t = Topology::grid8(4, 4).unwrap();
        let omega = SubsetSpec::grid_corner(4, 4, 3).unwrap();
        let (_, sub) = problem(&t, &omega, 1.0);
        let cov = sub.covariance();
        let kb = kernel_b(&sub).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        for _ in 0..100 {
            let sc = BeamformScenario::random_null_steering(
                unit_modulus_channel(16, &mut rng),
                sub.basis(),
                &omega,
                &mut rng,
            )
            .unwrap();
            let vb = hermitian_form(&kb, sc.p());
            assert!((vb - var_g(&sc, &cov).unwrap()).abs() < 1e-10 * vb.abs().max(1.0));
        }
    }

    #[test]
    fn delta_is_laplacian_of_removed_edges() {
        let t = Topology::grid8(3, 4).unwrap();
        let omega = SubsetSpec::new(12, &[0, 1, 4, 5]).unwrap();
        let (full, sub) = problem(&t, &omega, 1.0);
        let delta = delta_matrix(&full, &sub).unwrap();
        let mask = omega.mask();
        let removed: Vec<(usize, usize)> = t
            .edges()
            .iter()
            .filter(|e| !(mask[e.lo] && mask[e.hi]))
            .map(|e| (e.lo, e.hi))
            .collect();
        let b = crate::topology::IncidenceMatrix::from_oriented_rows(12, &removed).unwrap();
        let expected = b.matrix().transpose() * b.matrix();
        assert!((delta.clone() - expected).amax() < 1e-12);
        assert!(linalg::min_eigenvalue(&delta) >= -1e-10);
    }

    #[test]
    fn kernel_gap_errors() {
        let kp = KernelPair {
            k_a: DMatrix::zeros(2, 2),
            k_b: DMatrix::zeros(2, 2),
        };
        assert!(kernel_gap(&kp).is_err());
        let kp = KernelPair {
            k_a: DMatrix::zeros(1, 1),
            k_b: DMatrix::identity(2, 2),
        };
        assert!(kernel_gap(&kp).is_err());
    }

    #[test]
    fn coherent_loss_values() {
        assert_eq!(coherent_loss(0.0), 1.0);
        assert!((coherent_loss(PI / 2.0) - 2.0).abs() < 1e-12);
        assert!((10.0 * coherent_loss(PI / 2.0).log10() - 3.0103).abs() < 1e-4);
        assert!((coherent_loss(2.0 * PI / 3.0) - 4.0).abs() < 1e-12);
        assert!(coherent_loss(PI).is_infinite());
        assert!(coherent_loss(-PI).is_infinite());
    }
}
