//! Molecular graph representation, radius-based neighbor lists and
//! pairwise distance features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Conformation;

/// Bond type codes are stable across serialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BondType {
    Single,
    Double,
    Triple,
    Aromatic,
    /// Radius-only pair without a chemical bond.
    Virtual,
}

impl BondType {
    pub fn code(self) -> u8 {
        match self {
            BondType::Single => 0,
            BondType::Double => 1,
            BondType::Triple => 2,
            BondType::Aromatic => 3,
            BondType::Virtual => 4,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => BondType::Single,
            1 => BondType::Double,
            2 => BondType::Triple,
            3 => BondType::Aromatic,
            4 => BondType::Virtual,
            other => return Err(Error::invalid(format!("unknown bond type code {other}"))),
        })
    }

    pub const COUNT: usize = 5;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bond {
    pub i: usize,
    pub j: usize,
    pub bond_type: BondType,
}

/// Undirected graph over atoms; bonds are stored with `i < j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MolecularGraph {
    atoms: Vec<u8>,
    bonds: Vec<Bond>,
}

impl MolecularGraph {
    pub fn new(atoms: Vec<u8>, bonds: Vec<Bond>) -> Result<Self> {
        let n = atoms.len();
        if n == 0 {
            return Err(Error::invalid("graph must contain at least one atom"));
        }
        let mut normalized = Vec::with_capacity(bonds.len());
        let mut seen = std::collections::HashSet::new();
        for b in bonds {
            if b.i >= n || b.j >= n {
                return Err(Error::invalid(format!("bond ({}, {}) out of range for {n} atoms", b.i, b.j)));
            }
            if b.i == b.j {
                return Err(Error::invalid(format!("self-bond on atom {}", b.i)));
            }
            let (i, j) = if b.i < b.j { (b.i, b.j) } else { (b.j, b.i) };
            if !seen.insert((i, j)) {
                return Err(Error::invalid(format!("duplicate bond ({i}, {j})")));
            }
            normalized.push(Bond { i, j, bond_type: b.bond_type });
        }
        normalized.sort_by_key(|b| (b.i, b.j));
        Ok(Self { atoms, bonds: normalized })
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    /// Element type codes, one per atom.
    pub fn atoms(&self) -> &[u8] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }
}

/// An undirected retained pair with its type and current distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub bond_type: BondType,
    pub distance: f64,
}

/// Bonded pairs (always) plus non-bonded pairs within radius `tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborList {
    edges: Vec<Edge>,
    adjacency: Vec<Vec<usize>>,
}

impl NeighborList {
    /// Undirected edges, sorted by `(i, j)` with `i < j`.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Sorted neighbor indices of atom `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn edge_indices(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(|e| (e.i, e.j)).collect()
    }
}

/// Per-edge Euclidean distances for a given conformation.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceFeatures {
    pub edges: Vec<(usize, usize)>,
    pub distances: Vec<f64>,
}

/// Builds the neighbor list: every bonded pair regardless of distance, plus
/// every non-bonded pair with `d_ij <= tau` as a virtual edge.
pub fn build_neighbor_list(
    g: &MolecularGraph,
    c: &Conformation,
    tau: f64,
) -> Result<NeighborList> {
    if g.atom_count() != c.atom_count() {
        return Err(Error::shape("build_neighbor_list", g.atom_count(), c.atom_count()));
    }
    if tau <= 0.0 {
        return Err(Error::invalid(format!("radius threshold must be positive, got {tau}")));
    }
    let n = g.atom_count();
    let mut bond_map = std::collections::HashMap::new();
    for b in g.bonds() {
        bond_map.insert((b.i, b.j), b.bond_type);
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (c.row(i) - c.row(j)).norm();
            match bond_map.get(&(i, j)) {
                Some(&bt) => edges.push(Edge { i, j, bond_type: bt, distance: d }),
                None if d <= tau => {
                    edges.push(Edge { i, j, bond_type: BondType::Virtual, distance: d })
                }
                None => {}
            }
        }
    }
    let mut adjacency = vec![Vec::new(); n];
    for e in &edges {
        adjacency[e.i].push(e.j);
        adjacency[e.j].push(e.i);
    }
    for adj in &mut adjacency {
        adj.sort_unstable();
    }
    Ok(NeighborList { edges, adjacency })
}

/// Euclidean distance per edge for the given conformation.
pub fn distances(edges: &[(usize, usize)], c: &Conformation) -> Result<DistanceFeatures> {
    let n = c.atom_count();
    let mut out = Vec::with_capacity(edges.len());
    for &(i, j) in edges {
        if i >= n || j >= n {
            return Err(Error::invalid(format!("edge ({i}, {j}) out of range for {n} atoms")));
        }
        out.push((c.row(i) - c.row(j)).norm());
    }
    Ok(DistanceFeatures { edges: edges.to_vec(), distances: out })
}

/// Result of [`distance_jacobian_apply`]; `degenerate_edges` counts edges
/// whose contribution was zeroed because the endpoints coincide.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianApply {
    pub field: Vec<[f64; 3]>,
    pub degenerate_edges: usize,
}

/// Computes `(∂_C d)ᵀ s`: atom `i` receives `Σ_{e=(i,j)} s_e·(c_i − c_j)/d_e`,
/// each undirected edge contributing oppositely to its two endpoints.
///
/// Edges shorter than `1e-8` are skipped (distance gradient undefined at
/// coincidence) and counted in `degenerate_edges`.
pub fn distance_jacobian_apply(
    edges: &[(usize, usize)],
    c: &Conformation,
    s: &[f64],
) -> Result<JacobianApply> {
    if s.len() != edges.len() {
        return Err(Error::shape("distance_jacobian_apply", edges.len(), s.len()));
    }
    let n = c.atom_count();
    let mut field = vec![[0.0; 3]; n];
    let mut degenerate = 0;
    for (&(i, j), &w) in edges.iter().zip(s) {
        if i >= n || j >= n {
            return Err(Error::invalid(format!("edge ({i}, {j}) out of range for {n} atoms")));
        }
        let diff = c.row(i) - c.row(j);
        let d = diff.norm();
        if d < 1e-8 {
            degenerate += 1;
            continue;
        }
        let u = diff / d;
        for k in 0..3 {
            field[i][k] += w * u[k];
            field[j][k] -= w * u[k];
        }
    }
    Ok(JacobianApply { field, degenerate_edges: degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::geom::{apply_transform, RigidTransform};
    use crate::rng::{random_rotation, random_translation, standard_normal_coords};

    fn chain_graph(n: usize) -> MolecularGraph {
        let bonds = (0..n - 1)
            .map(|i| Bond { i, j: i + 1, bond_type: BondType::Single })
            .collect();
        MolecularGraph::new(vec![0; n], bonds).unwrap()
    }

    #[test]
    fn bonded_pair_retained_beyond_radius() {
        let g = chain_graph(2);
        let c = Conformation::new(vec![[0.0; 3], [15.0, 0.0, 0.0]]).unwrap();
        let nl = build_neighbor_list(&g, &c, 10.0).unwrap();
        assert_eq!(nl.edges().len(), 1);
        assert_eq!(nl.edges()[0].bond_type, BondType::Single);
        assert_abs_diff_eq!(nl.edges()[0].distance, 15.0, epsilon = 1e-12);
    }

    #[test]
    fn nonbonded_pair_beyond_radius_excluded() {
        let g = MolecularGraph::new(vec![0, 0], vec![]).unwrap();
        let c = Conformation::new(vec![[0.0; 3], [15.0, 0.0, 0.0]]).unwrap();
        let nl = build_neighbor_list(&g, &c, 10.0).unwrap();
        assert!(nl.edges().is_empty());
    }

    #[test]
    fn neighbor_list_matches_bruteforce_pairwise_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let g = chain_graph(8);
        let c = {
            let base = standard_normal_coords(8, &mut rng);
            let scaled: Vec<[f64; 3]> =
                base.coords().iter().map(|r| [r[0] * 2.0, r[1] * 2.0, r[2] * 2.0]).collect();
            Conformation::new(scaled).unwrap()
        };
        let tau = 2.0;
        let nl = build_neighbor_list(&g, &c, tau).unwrap();
        let mut expected = Vec::new();
        for i in 0..8 {
            for j in (i + 1)..8 {
                let d = (c.row(i) - c.row(j)).norm();
                let bonded = j == i + 1;
                if bonded || d <= tau {
                    expected.push((i, j));
                }
            }
        }
        assert_eq!(nl.edge_indices(), expected);
        // Symmetry of adjacency.
        for e in nl.edges() {
            assert!(nl.neighbors(e.i).contains(&e.j));
            assert!(nl.neighbors(e.j).contains(&e.i));
        }
    }

    #[test]
    fn neighbor_list_count_mismatch_errors() {
        let g = chain_graph(3);
        let c = Conformation::new(vec![[0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
        assert!(build_neighbor_list(&g, &c, 1.0).is_err());
    }

    #[test]
    fn graph_validation() {
        assert!(MolecularGraph::new(vec![], vec![]).is_err());
        assert!(MolecularGraph::new(
            vec![0, 0],
            vec![Bond { i: 0, j: 0, bond_type: BondType::Single }]
        )
        .is_err());
        assert!(MolecularGraph::new(
            vec![0, 0],
            vec![
                Bond { i: 0, j: 1, bond_type: BondType::Single },
                Bond { i: 1, j: 0, bond_type: BondType::Double }
            ]
        )
        .is_err());
    }

    #[test]
    fn distances_basic_cases() {
        let c = Conformation::new(vec![[0.0; 3], [3.0, 4.0, 0.0], [0.0; 3]]).unwrap();
        let df = distances(&[(0, 2), (0, 1)], &c).unwrap();
        assert_abs_diff_eq!(df.distances[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(df.distances[1], 5.0, epsilon = 1e-12);
    }

    #[test]
    fn distances_invariant_under_rigid_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c = standard_normal_coords(6, &mut rng);
        let edges: Vec<(usize, usize)> = (0..6).flat_map(|i| ((i + 1)..6).map(move |j| (i, j))).collect();
        let t = RigidTransform {
            rotation: random_rotation(&mut rng),
            translation: random_translation(5.0, &mut rng),
        };
        let moved = apply_transform(&c, &t);
        let a = distances(&edges, &c).unwrap();
        let b = distances(&edges, &moved).unwrap();
        for (x, y) in a.distances.iter().zip(&b.distances) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-10);
        }
    }

    #[test]
    fn jacobian_apply_zero_scores_give_zero_field() {
        let c = Conformation::new(vec![[0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
        let out = distance_jacobian_apply(&[(0, 1)], &c, &[0.0]).unwrap();
        assert_eq!(out.field, vec![[0.0; 3]; 2]);
    }

    #[test]
    fn jacobian_apply_unit_edge_direction() {
        let c = Conformation::new(vec![[0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
        let out = distance_jacobian_apply(&[(0, 1)], &c, &[1.0]).unwrap();
        assert_eq!(out.field[0], [-1.0, 0.0, 0.0]);
        assert_eq!(out.field[1], [1.0, 0.0, 0.0]);
        assert_eq!(out.degenerate_edges, 0);
    }

    #[test]
    fn jacobian_apply_degenerate_edge_zeroed_and_flagged() {
        let c = Conformation::new(vec![[0.0; 3], [0.0; 3]]).unwrap();
        let out = distance_jacobian_apply(&[(0, 1)], &c, &[1.0]).unwrap();
        assert_eq!(out.field, vec![[0.0; 3]; 2]);
        assert_eq!(out.degenerate_edges, 1);
    }

    #[test]
    fn jacobian_apply_matches_finite_differences() {
        // Oracle: central finite differences on f(C) = Σ_e s_e · d_e(C).
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let c = standard_normal_coords(5, &mut rng);
        let edges: Vec<(usize, usize)> = vec![(0, 1), (1, 2), (2, 3), (3, 4), (0, 4), (1, 3)];
        let s: Vec<f64> = (0..edges.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let out = distance_jacobian_apply(&edges, &c, &s).unwrap();

        let f = |coords: &Conformation| -> f64 {
            distances(&edges, coords)
                .unwrap()
                .distances
                .iter()
                .zip(&s)
                .map(|(d, w)| d * w)
                .sum()
        };
        let h = 1e-6;
        for i in 0..5 {
            for k in 0..3 {
                let mut plus = c.coords().to_vec();
                let mut minus = c.coords().to_vec();
                plus[i][k] += h;
                minus[i][k] -= h;
                let fd = (f(&Conformation::new(plus).unwrap())
                    - f(&Conformation::new(minus).unwrap()))
                    / (2.0 * h);
                let rel = (out.field[i][k] - fd).abs() / (fd.abs().max(1e-6));
                assert!(rel < 1e-4, "atom {i} coord {k}: analytic {} fd {fd}", out.field[i][k]);
            }
        }
    }

    #[test]
    fn jacobian_apply_equivariant_and_force_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let c = standard_normal_coords(5, &mut rng);
        let edges = vec![(0, 1), (1, 2), (2, 3), (3, 4), (0, 3)];
        let s: Vec<f64> = (0..edges.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let base = distance_jacobian_apply(&edges, &c, &s).unwrap();

        // Internal forces cancel: rows sum to zero.
        for k in 0..3 {
            let sum: f64 = base.field.iter().map(|r| r[k]).sum();
            assert!(sum.abs() < 1e-9);
        }

        // Rotation-equivariant, translation-invariant.
        let r = random_rotation(&mut rng);
        let t = RigidTransform { rotation: r, translation: random_translation(3.0, &mut rng) };
        let moved = apply_transform(&c, &t);
        let out = distance_jacobian_apply(&edges, &moved, &s).unwrap();
        for i in 0..5 {
            let rotated = r * nalgebra::Vector3::from(base.field[i]);
            for k in 0..3 {
                assert_abs_diff_eq!(out.field[i][k], rotated[k], epsilon = 1e-8);
            }
        }
    }
}
