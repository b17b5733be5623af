use sha2::{Digest, Sha256};

use crate::analysis::block_smoothness;
use crate::error::Result;
use crate::gaussian::{w2l, GaussianModel, GaussianProduct};
use crate::grid::{GridModel, GridProduct, GridReference};
use crate::potential::{BlockStructure, Potential};

/// What the harness needs from a CAVI implementation.
pub trait Engine: Sync {
    type State: Clone + Send + Sync;

    fn name(&self) -> &'static str;
    fn block_count(&self) -> usize;
    fn update(&self, state: &mut Self::State, k: usize) -> Result<()>;
    /// `F(q) − F(q*)`.
    fn gap(&self, state: &Self::State) -> Result<f64>;
    /// `W_{2,L}(q, q*)`.
    fn distance_to_reference(&self, state: &Self::State) -> Result<f64>;
    fn second_moment(&self, state: &Self::State) -> f64;
    fn all_updated(&self, state: &Self::State) -> bool;
    /// `(relative, absolute)` slack for exact-descent comparisons.
    fn descent_tolerance(&self) -> (f64, f64);
    fn problem_hash(&self) -> &str;
}

/// SHA-256 over the little-endian bytes of blocks, `Q`, `b`, monomials and
/// declared smoothness.
pub fn problem_hash(pot: &Potential, blocks: &BlockStructure) -> String {
    let mut h = Sha256::new();
    let mut put = |v: f64| h.update(v.to_le_bytes());
    put(blocks.count() as f64);
    blocks.sizes().iter().for_each(|&s| put(s as f64));
    pot.q().iter().for_each(|&v| put(v));
    pot.b().iter().for_each(|&v| put(v));
    for m in pot.monomials() {
        put(m.coeff);
        for &(i, p) in &m.powers {
            put(i as f64);
            put(p as f64);
        }
    }
    if let Some(extra) = pot.extra_smoothness() {
        extra.iter().for_each(|&v| put(v));
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone)]
pub struct GaussianEngine {
    model: GaussianModel,
    weights: Vec<f64>,
    reference: GaussianProduct,
    hash: String,
}

impl GaussianEngine {
    pub fn new(pot: Potential, blocks: BlockStructure) -> Result<Self> {
        let weights = block_smoothness(&pot, &blocks)?;
        let hash = problem_hash(&pot, &blocks);
        let model = GaussianModel::new(pot, blocks)?;
        let reference = model.mf_optimum();
        Ok(Self {
            model,
            weights,
            reference,
            hash,
        })
    }

    pub fn model(&self) -> &GaussianModel {
        &self.model
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn reference(&self) -> &GaussianProduct {
        &self.reference
    }
}

impl Engine for GaussianEngine {
    type State = GaussianProduct;

    fn name(&self) -> &'static str {
        "gaussian"
    }

    fn block_count(&self) -> usize {
        self.model.blocks().count()
    }

    fn update(&self, state: &mut GaussianProduct, k: usize) -> Result<()> {
        self.model.cavi_update(state, k)
    }

    fn gap(&self, state: &GaussianProduct) -> Result<f64> {
        self.model.kl_gap(state)
    }

    fn distance_to_reference(&self, state: &GaussianProduct) -> Result<f64> {
        w2l(state, &self.reference, &self.weights)
    }

    fn second_moment(&self, state: &GaussianProduct) -> f64 {
        state.second_moment_total()
    }

    fn all_updated(&self, state: &GaussianProduct) -> bool {
        state.all_updated()
    }

    fn descent_tolerance(&self) -> (f64, f64) {
        (1e-10, 1e-14)
    }

    fn problem_hash(&self) -> &str {
        &self.hash
    }
}

#[derive(Debug, Clone)]
pub struct GridEngine {
    model: GridModel,
    reference: GridReference,
    hash: String,
}

impl GridEngine {
    /// Solves for the reference with cyclic sweeps to `tol` in `W_{2,L}`.
    pub fn new(model: GridModel, tol: f64, max_sweeps: usize) -> Result<Self> {
        let reference = model.solve_reference(tol, max_sweeps)?;
        let hash = problem_hash(model.potential(), model.blocks());
        Ok(Self {
            model,
            reference,
            hash,
        })
    }

    pub fn model(&self) -> &GridModel {
        &self.model
    }

    pub fn reference(&self) -> &GridReference {
        &self.reference
    }
}

impl Engine for GridEngine {
    type State = GridProduct;

    fn name(&self) -> &'static str {
        "grid"
    }

    fn block_count(&self) -> usize {
        self.model.blocks().count()
    }

    fn update(&self, state: &mut GridProduct, k: usize) -> Result<()> {
        self.model.cavi_update(state, k)
    }

    /// `Ψ(q) − Ψ*`.
    fn gap(&self, state: &GridProduct) -> Result<f64> {
        Ok(self.model.free_energy(state)? - self.reference.free_energy)
    }

    fn distance_to_reference(&self, state: &GridProduct) -> Result<f64> {
        self.model.w2l_to_reference(state, &self.reference)
    }

    fn second_moment(&self, state: &GridProduct) -> f64 {
        state.second_moment_total()
    }

    fn all_updated(&self, state: &GridProduct) -> bool {
        state.all_updated()
    }

    fn descent_tolerance(&self) -> (f64, f64) {
        (1e-4, 1e-9)
    }

    fn problem_hash(&self) -> &str {
        &self.hash
    }
}
