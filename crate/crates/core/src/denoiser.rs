//! The noise-prediction network ε(G, C^t, t): atom/time embeddings, an
//! invariant message-passing encoder, then L equivariant field layers whose
//! coordinate update is a sum of radial directions weighted by learned
//! invariant scalars.

use serde::{Deserialize, Serialize};

use crate::diffcore::{ParameterStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geom::Conformation;
use crate::molgraph::{build_neighbor_list, BondType, MolecularGraph, NeighborList};

/// Per-bond-type embedding width in the field layers.
const EDGE_EMB_DIM: usize = 8;

/// How the final per-atom 3-vector output is read off the coordinate track.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutputMode {
    /// Final coordinate embeddings x^L as-is.
    Absolute,
    /// x^L − x⁰, so a network with zeroed coordinate weights predicts zero.
    #[default]
    Residual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    pub encoder_layers: usize,
    pub hidden_dim: usize,
    pub gfn_layers: usize,
    pub time_embedding_dim: usize,
    /// Neighbor-list radius threshold.
    pub tau: f64,
    /// Gaussian radial-basis bins over [0, tau] for encoder edge features.
    pub rbf_bins: usize,
    /// Number of distinct element-type codes the atom embedding covers.
    pub num_element_types: usize,
    pub output_mode: OutputMode,
    /// Test fixture: permutes the components of the radial direction,
    /// deliberately breaking rotation equivariance.
    #[serde(skip)]
    pub debug_break_equivariance: bool,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            encoder_layers: 4,
            hidden_dim: 128,
            gfn_layers: 4,
            time_embedding_dim: 16,
            tau: 10.0,
            rbf_bins: 64,
            num_element_types: 16,
            output_mode: OutputMode::Residual,
            debug_break_equivariance: false,
        }
    }
}

impl DenoiserConfig {
    /// Small configuration for tests and desk-scale training.
    pub fn desk(hidden_dim: usize, encoder_layers: usize, gfn_layers: usize, tau: f64) -> Self {
        Self {
            encoder_layers,
            hidden_dim,
            gfn_layers,
            time_embedding_dim: 8,
            tau,
            rbf_bins: 16,
            num_element_types: 16,
            output_mode: OutputMode::Residual,
            debug_break_equivariance: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("encoder_layers", self.encoder_layers),
            ("hidden_dim", self.hidden_dim),
            ("gfn_layers", self.gfn_layers),
            ("time_embedding_dim", self.time_embedding_dim),
            ("rbf_bins", self.rbf_bins),
            ("num_element_types", self.num_element_types),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.tau <= 0.0 {
            return Err(Error::invalid("tau must be positive"));
        }
        Ok(())
    }
}

/// Per-atom 3-vector output of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseField {
    pub vectors: Vec<[f64; 3]>,
    /// Coincident neighbor pairs whose radial contribution was zeroed.
    pub degenerate_pairs: usize,
}

impl NoiseField {
    fn from_tensor(t: &Tensor, degenerate_pairs: usize) -> Result<Self> {
        if t.cols != 3 {
            return Err(Error::shape("NoiseField", 3, t.cols));
        }
        let vectors: Vec<[f64; 3]> = t
            .data
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        if vectors.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite value in noise field"));
        }
        Ok(Self { vectors, degenerate_pairs })
    }
}

/// Per-layer snapshot of the invariant and coordinate tracks, for the
/// layerwise equivariance checks.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub h: Tensor,
    pub x: Tensor,
}

pub struct DenoiserModel {
    pub config: DenoiserConfig,
    pub params: ParameterStore,
}

/// Directed edge view of a neighbor list: each undirected edge appears once
/// per direction, receiver first, in a fixed order.
struct DirectedEdges {
    recv: Vec<usize>,
    send: Vec<usize>,
    bond_codes: Vec<usize>,
    distances: Vec<f64>,
    /// Unit vectors (c_recv − c_send)/d, zeroed on coincident pairs.
    dirs: Vec<[f64; 3]>,
    degenerate: usize,
}

impl DirectedEdges {
    fn build(neighbors: &NeighborList, c: &Conformation, break_equivariance: bool) -> Self {
        let mut out = DirectedEdges {
            recv: Vec::new(),
            send: Vec::new(),
            bond_codes: Vec::new(),
            distances: Vec::new(),
            dirs: Vec::new(),
            degenerate: 0,
        };
        for e in neighbors.edges() {
            for (i, j) in [(e.i, e.j), (e.j, e.i)] {
                out.recv.push(i);
                out.send.push(j);
                out.bond_codes.push(e.bond_type.code() as usize);
                out.distances.push(e.distance);
                if e.distance < 1e-8 {
                    out.dirs.push([0.0; 3]);
                    if i < j {
                        out.degenerate += 1;
                    }
                } else {
                    let d = c.row(i) - c.row(j);
                    // The debug break cyclically permutes the components,
                    // which no longer transforms like a vector under
                    // rotation.
                    let v = if break_equivariance {
                        nalgebra::Vector3::new(d.y, d.z, d.x)
                    } else {
                        d
                    };
                    let u = v / e.distance;
                    out.dirs.push([u.x, u.y, u.z]);
                }
            }
        }
        out
    }

    fn len(&self) -> usize {
        self.recv.len()
    }
}

/// Sinusoidal position features of a timestep.
fn time_features(t: usize, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    let half = dim.div_ceil(2);
    for k in 0..half {
        let freq = (10_000f64).powf(-(k as f64) / half as f64);
        out[2 * k] = (t as f64 * freq).sin();
        if 2 * k + 1 < dim {
            out[2 * k + 1] = (t as f64 * freq).cos();
        }
    }
    out
}

/// Gaussian radial basis over [0, tau].
fn rbf_features(d: f64, bins: usize, tau: f64) -> Vec<f64> {
    let width = tau / bins as f64;
    (0..bins)
        .map(|k| {
            let center = tau * k as f64 / (bins.max(2) - 1) as f64;
            (-(d - center).powi(2) / (2.0 * width * width)).exp()
        })
        .collect()
}

fn uniform_init(rows: usize, cols: usize, fan_in: usize, rng: &mut impl rand::Rng) -> Tensor {
    let bound = (1.0 / fan_in as f64).sqrt();
    Tensor {
        rows,
        cols,
        data: (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect(),
    }
}

/// Registers the two affine layers of a feed-forward block.
fn init_mlp(
    store: &mut ParameterStore,
    prefix: &str,
    in_dim: usize,
    hidden: usize,
    out_dim: usize,
    rng: &mut impl rand::Rng,
) -> Result<()> {
    store.insert(&format!("{prefix}.w1"), uniform_init(in_dim, hidden, in_dim, rng))?;
    store.insert(&format!("{prefix}.b1"), Tensor::zeros(1, hidden))?;
    store.insert(&format!("{prefix}.w2"), uniform_init(hidden, out_dim, hidden, rng))?;
    store.insert(&format!("{prefix}.b2"), Tensor::zeros(1, out_dim))?;
    Ok(())
}

struct TapeParams<'a> {
    tape: &'a mut Tape,
    store: &'a ParameterStore,
}

impl<'a> TapeParams<'a> {
    fn get(&mut self, name: &str) -> Result<Var> {
        let value = self.store.get(name)?.clone();
        Ok(self.tape.param(name, value))
    }

    fn mlp(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let w1 = self.get(&format!("{prefix}.w1"))?;
        let b1 = self.get(&format!("{prefix}.b1"))?;
        let w2 = self.get(&format!("{prefix}.w2"))?;
        let b2 = self.get(&format!("{prefix}.b2"))?;
        let t = &mut *self.tape;
        let z = t.matmul(x, w1)?;
        let z = t.add_bias(z, b1)?;
        let z = t.silu(z);
        let z = t.matmul(z, w2)?;
        t.add_bias(z, b2)
    }
}

impl DenoiserModel {
    pub fn init(config: DenoiserConfig, seed: u64) -> Result<Self> {
        use rand::SeedableRng;
        config.validate()?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let b = config.hidden_dim;
        let mut store = ParameterStore::new();
        store.insert("embed.atom", uniform_init(config.num_element_types, b, b, &mut rng))?;
        store.insert(
            "embed.time.w",
            uniform_init(config.time_embedding_dim, b, config.time_embedding_dim, &mut rng),
        )?;
        store.insert("embed.time.b", Tensor::zeros(1, b))?;
        let edge_dim = config.rbf_bins + BondType::COUNT;
        for l in 0..config.encoder_layers {
            init_mlp(&mut store, &format!("enc{l}.filter"), edge_dim, b, b, &mut rng)?;
            store.insert(&format!("enc{l}.lin"), uniform_init(b, b, b, &mut rng))?;
            init_mlp(&mut store, &format!("enc{l}.update"), 2 * b, b, b, &mut rng)?;
        }
        store.insert(
            "gfn.edge_emb",
            uniform_init(BondType::COUNT, EDGE_EMB_DIM, EDGE_EMB_DIM, &mut rng),
        )?;
        for l in 0..config.gfn_layers {
            init_mlp(&mut store, &format!("gfn{l}.msg"), 2 * b + 1 + EDGE_EMB_DIM, b, b, &mut rng)?;
            init_mlp(&mut store, &format!("gfn{l}.node"), 2 * b, b, b, &mut rng)?;
            init_mlp(&mut store, &format!("gfn{l}.coord"), b, b, 1, &mut rng)?;
        }
        Ok(Self { config, params: store })
    }

    /// Initial per-atom embeddings: atom-type embedding plus projected
    /// sinusoidal time features.
    fn embed_on_tape(
        &self,
        p: &mut TapeParams<'_>,
        g: &MolecularGraph,
        t: usize,
    ) -> Result<Var> {
        for (i, &code) in g.atoms().iter().enumerate() {
            if code as usize >= self.config.num_element_types {
                return Err(Error::invalid(format!(
                    "unknown element code {code} at atom {i} (embedding covers 0..{})",
                    self.config.num_element_types
                )));
            }
        }
        let atom_table = p.get("embed.atom")?;
        let indices: Vec<usize> = g.atoms().iter().map(|&c| c as usize).collect();
        let atom_emb = p.tape.gather_rows(atom_table, &indices)?;
        let tf = Tensor::new(1, self.config.time_embedding_dim, time_features(t, self.config.time_embedding_dim))?;
        let tf = p.tape.constant(tf);
        let tw = p.get("embed.time.w")?;
        let tb = p.get("embed.time.b")?;
        let tproj = p.tape.matmul(tf, tw)?;
        let tproj = p.tape.add_bias(tproj, tb)?;
        p.tape.add_bias(atom_emb, tproj)
    }

    /// Invariant encoder: continuous-filter message passing over distance
    /// radial-basis and bond-type features.
    fn encode_on_tape(
        &self,
        p: &mut TapeParams<'_>,
        edges: &DirectedEdges,
        n: usize,
        h0: Var,
    ) -> Result<Var> {
        let cfg = &self.config;
        let ne = edges.len();
        let edge_dim = cfg.rbf_bins + BondType::COUNT;
        let mut feat = Tensor::zeros(ne.max(1), edge_dim);
        for e in 0..ne {
            let rbf = rbf_features(edges.distances[e], cfg.rbf_bins, cfg.tau);
            feat.data[e * edge_dim..e * edge_dim + cfg.rbf_bins].copy_from_slice(&rbf);
            feat.data[e * edge_dim + cfg.rbf_bins + edges.bond_codes[e]] = 1.0;
        }
        let mut h = h0;
        for l in 0..cfg.encoder_layers {
            if ne == 0 {
                // No edges: zero aggregate, update still applies.
                let agg = p.tape.constant(Tensor::zeros(n, cfg.hidden_dim));
                let cat = p.tape.concat_cols(&[h, agg])?;
                let upd = p.mlp(&format!("enc{l}.update"), cat)?;
                h = p.tape.add(h, upd)?;
                continue;
            }
            let feat_var = p.tape.constant(feat.clone());
            let filter = p.mlp(&format!("enc{l}.filter"), feat_var)?;
            let lin = p.get(&format!("enc{l}.lin"))?;
            let hj = p.tape.gather_rows(h, &edges.send)?;
            let hj = p.tape.matmul(hj, lin)?;
            let msg = p.tape.mul(filter, hj)?;
            let agg = p.tape.scatter_add_rows(msg, &edges.recv, n)?;
            let cat = p.tape.concat_cols(&[h, agg])?;
            let upd = p.mlp(&format!("enc{l}.update"), cat)?;
            h = p.tape.add(h, upd)?;
        }
        Ok(h)
    }

    /// Equivariant field layers. Returns the output field and per-layer
    /// snapshots of (h, x).
    fn gfn_on_tape(
        &self,
        p: &mut TapeParams<'_>,
        edges: &DirectedEdges,
        n: usize,
        mut h: Var,
        x0: &Conformation,
        trace: Option<&mut Vec<LayerTrace>>,
    ) -> Result<Var> {
        let cfg = &self.config;
        let ne = edges.len();
        let coords = Tensor::new(n, 3, x0.flat())?;
        let x_init = p.tape.constant(coords);
        let mut x = x_init;
        let mut traces = Vec::new();

        let edge_table = p.get("gfn.edge_emb")?;
        let edge_emb = if ne > 0 {
            Some(p.tape.gather_rows(edge_table, &edges.bond_codes)?)
        } else {
            None
        };
        let dir_const = if ne > 0 {
            let mut dirs = Tensor::zeros(ne, 3);
            for e in 0..ne {
                dirs.data[e * 3..e * 3 + 3].copy_from_slice(&edges.dirs[e]);
            }
            Some(p.tape.constant(dirs))
        } else {
            None
        };

        for l in 0..cfg.gfn_layers {
            if let (Some(edge_emb), Some(dir_const)) = (edge_emb, dir_const) {
                let hi = p.tape.gather_rows(h, &edges.recv)?;
                let hj = p.tape.gather_rows(h, &edges.send)?;
                let xi = p.tape.gather_rows(x, &edges.recv)?;
                let xj = p.tape.gather_rows(x, &edges.send)?;
                let diff = p.tape.sub(xi, xj)?;
                let diff_sq = p.tape.mul(diff, diff)?;
                let sq = p.tape.row_sum(diff_sq);
                let m_in = p.tape.concat_cols(&[hi, hj, sq, edge_emb])?;
                let m = p.mlp(&format!("gfn{l}.msg"), m_in)?;
                let agg = p.tape.scatter_add_rows(m, &edges.recv, n)?;
                let cat = p.tape.concat_cols(&[h, agg])?;
                h = p.mlp(&format!("gfn{l}.node"), cat)?;
                let w = p.mlp(&format!("gfn{l}.coord"), m)?;
                let contrib = p.tape.scale_rows(dir_const, w)?;
                let delta = p.tape.scatter_add_rows(contrib, &edges.recv, n)?;
                x = p.tape.add(x, delta)?;
            }
            traces.push((h, x));
        }

        if let Some(out) = trace {
            for (h_var, x_var) in &traces {
                out.push(LayerTrace {
                    h: p.tape.value(*h_var).clone(),
                    x: p.tape.value(*x_var).clone(),
                });
            }
        }

        match cfg.output_mode {
            OutputMode::Absolute => Ok(x),
            OutputMode::Residual => p.tape.sub(x, x_init),
        }
    }

    /// Full forward on an existing tape; parameters are registered on the
    /// tape so `Tape::backward` yields their gradients.
    pub(crate) fn forward_on_tape(
        &self,
        tape: &mut Tape,
        g: &MolecularGraph,
        c: &Conformation,
        t: usize,
        neighbors: &NeighborList,
        trace: Option<&mut Vec<LayerTrace>>,
    ) -> Result<(Var, usize)> {
        if g.atom_count() != c.atom_count() {
            return Err(Error::shape("denoiser forward", g.atom_count(), c.atom_count()));
        }
        let edges = DirectedEdges::build(neighbors, c, self.config.debug_break_equivariance);
        let degenerate = edges.degenerate;
        let mut p = TapeParams { tape, store: &self.params };
        let h0 = self.embed_on_tape(&mut p, g, t)?;
        let h = self.encode_on_tape(&mut p, &edges, g.atom_count(), h0)?;
        let out = self.gfn_on_tape(&mut p, &edges, g.atom_count(), h, c, trace)?;
        Ok((out, degenerate))
    }

    /// Evaluates ε(G, C, t). Builds the neighbor list from `c` with the
    /// configured radius.
    pub fn eps_theta(&self, g: &MolecularGraph, c: &Conformation, t: usize) -> Result<NoiseField> {
        let neighbors = build_neighbor_list(g, c, self.config.tau)?;
        let mut tape = Tape::new();
        let (out, degenerate) = self.forward_on_tape(&mut tape, g, c, t, &neighbors, None)?;
        NoiseField::from_tensor(tape.value(out), degenerate)
    }

    /// As [`eps_theta`](Self::eps_theta) but also returns per-layer (h, x)
    /// snapshots of the field layers.
    pub fn eps_theta_trace(
        &self,
        g: &MolecularGraph,
        c: &Conformation,
        t: usize,
    ) -> Result<(NoiseField, Vec<LayerTrace>)> {
        let neighbors = build_neighbor_list(g, c, self.config.tau)?;
        let mut tape = Tape::new();
        let mut traces = Vec::new();
        let (out, degenerate) =
            self.forward_on_tape(&mut tape, g, c, t, &neighbors, Some(&mut traces))?;
        Ok((NoiseField::from_tensor(tape.value(out), degenerate)?, traces))
    }

    /// Initial embeddings h⁰ as plain values (deterministic in (G, t)).
    pub fn embed_inputs(&self, g: &MolecularGraph, t: usize) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut p = TapeParams { tape: &mut tape, store: &self.params };
        let h0 = self.embed_on_tape(&mut p, g, t)?;
        Ok(tape.value(h0).clone())
    }

    /// Invariant encoder output as plain values.
    pub fn encode_invariant(
        &self,
        g: &MolecularGraph,
        c: &Conformation,
        t: usize,
    ) -> Result<Tensor> {
        let neighbors = build_neighbor_list(g, c, self.config.tau)?;
        let edges = DirectedEdges::build(&neighbors, c, false);
        let mut tape = Tape::new();
        let mut p = TapeParams { tape: &mut tape, store: &self.params };
        let h0 = self.embed_on_tape(&mut p, g, t)?;
        let h = self.encode_on_tape(&mut p, &edges, g.atom_count(), h0)?;
        Ok(tape.value(h).clone())
    }
}
