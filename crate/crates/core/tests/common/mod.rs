#![allow(dead_code)]

use nalgebra::DMatrix;
use phasecal::calibrate::GeneralizedLaplacian;
use phasecal::linalg;
use phasecal::noise::NoiseModel;
use phasecal::spectra::pruefer_tree;
use phasecal::topology::{subset_rows, SubsetSpec, Topology};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

/// Random spanning tree plus each remaining pair with probability `extra`.
pub fn random_connected_graph<R: Rng>(rng: &mut R, n: usize, extra: f64) -> Topology {
    let seq: Vec<usize> = (0..n - 2).map(|_| rng.random_range(0..n)).collect();
    let tree = pruefer_tree(&seq).unwrap();
    let mut pairs: Vec<(usize, usize)> = tree.edges().iter().map(|e| (e.lo, e.hi)).collect();
    for i in 0..n {
        for j in i + 1..n {
            if !pairs.contains(&(i, j)) && !pairs.contains(&(j, i)) && rng.random_bool(extra) {
                pairs.push((i, j));
            }
        }
    }
    pairs.shuffle(rng);
    Topology::from_edge_list(n, &pairs).unwrap()
}

pub fn random_tree<R: Rng>(rng: &mut R, n: usize) -> Topology {
    let seq: Vec<usize> = (0..n - 2).map(|_| rng.random_range(0..n)).collect();
    pruefer_tree(&seq).unwrap()
}

/// `A A^T / m + 0.1 I` with standard normal `A`, scaled by `scale`.
pub fn random_spd<R: Rng>(rng: &mut R, m: usize, scale: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(m, m, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
    let q = (&a * a.transpose()) / m as f64 + DMatrix::identity(m, m) * 0.1;
    (&q + q.transpose()) * (0.5 * scale)
}

/// Connected subset of at least two nodes grown from a random seed node.
pub fn random_connected_subset<R: Rng>(rng: &mut R, t: &Topology) -> SubsetSpec {
    let n = t.node_count();
    let target = rng.random_range(2..=n);
    let adj = t.neighbors();
    let mut members = vec![rng.random_range(0..n)];
    while members.len() < target {
        let frontier: Vec<usize> = members
            .iter()
            .flat_map(|&m| adj[m].iter().copied())
            .filter(|v| !members.contains(v))
            .collect();
        members.push(*frontier.choose(rng).unwrap());
    }
    SubsetSpec::new(n, &members).unwrap()
}

pub struct Instance {
    pub topology: Topology,
    pub noise: NoiseModel,
    pub omega: SubsetSpec,
    pub full: GeneralizedLaplacian,
    pub subset: GeneralizedLaplacian,
}

/// Random connected graph with `3 <= N <= max_n`, random SPD `Q` and a
/// random connected Ω.
pub fn random_instance<R: Rng>(rng: &mut R, max_n: usize) -> Instance {
    let n = rng.random_range(3..=max_n);
    let density = rng.random_range(0.0..0.6);
    let topology = random_connected_graph(rng, n, density);
    let noise = NoiseModel::full(random_spd(rng, topology.edge_count(), 1e-2)).unwrap();
    let omega = random_connected_subset(rng, &topology);
    let full = GeneralizedLaplacian::full(&topology.incidence(), &noise).unwrap();
    let (b, map) = subset_rows(&topology, &omega).unwrap();
    let subset = GeneralizedLaplacian::subset(&b, &noise.restrict(&map).unwrap(), &omega).unwrap();
    Instance {
        topology,
        noise,
        omega,
        full,
        subset,
    }
}

/// Moore-Penrose pseudo-inverse, an independent route to the full-case
/// covariance. Symmetric input goes through the eigendecomposition; general
/// input through `pinv(A) = pinv(A^T A) A^T`.
pub fn pinv(a: &DMatrix<f64>) -> DMatrix<f64> {
    if a.is_square() && linalg::asymmetry(a) == 0.0 {
        linalg::symmetric_pinv(a, 1e-10)
    } else {
        linalg::symmetric_pinv(&(a.transpose() * a), 1e-12) * a.transpose()
    }
}

pub fn unit_laplacian(t: &Topology) -> DMatrix<f64> {
    let b = t.incidence();
    b.matrix().transpose() * b.matrix()
}
