//! Exact CAVI for Gaussian targets `U(x) = ½ xᵀQx + bᵀx`.
//!
//! Every factor stays Gaussian, so updates, KL gaps, and Wasserstein
//! distances are all closed form. This engine is the ground truth the grid
//! engine is checked against.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::analysis::psd_sqrt;
use crate::error::{Error, Result};
use crate::potential::{BlockStructure, Potential};

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFactor {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Set once the block has been updated; from then on `cov = Q_kk⁻¹`.
    pub updated: bool,
}

/// Product of per-block Gaussian factors.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianProduct {
    pub factors: Vec<GaussianFactor>,
}

fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone()).ok_or_else(|| Error::NotPositiveDefinite(format!(" ({what})")))
}

fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

impl GaussianProduct {
    pub fn new(means: Vec<DVector<f64>>, covs: Vec<DMatrix<f64>>) -> Result<Self> {
        if means.len() != covs.len() {
            return Err(Error::DimensionMismatch {
                expected: means.len(),
                got: covs.len(),
            });
        }
        let factors = means
            .into_iter()
            .zip(covs)
            .enumerate()
            .map(|(k, (mean, cov))| {
                if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
                    return Err(Error::DimensionMismatch {
                        expected: mean.len(),
                        got: cov.nrows(),
                    });
                }
                if (&cov - cov.transpose()).abs().max() > 1e-12 * cov.norm() {
                    return Err(Error::NotPositiveDefinite(format!(
                        " (covariance of block {k} is not symmetric)"
                    )));
                }
                cholesky(&cov, &format!("covariance of block {k}"))?;
                Ok(GaussianFactor {
                    mean,
                    cov,
                    updated: false,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { factors })
    }

    /// Factors with diagonal covariances from flat per-coordinate arrays.
    pub fn from_diagonal(blocks: &BlockStructure, means: &[f64], variances: &[f64]) -> Result<Self> {
        for len in [means.len(), variances.len()] {
            if len != blocks.dim() {
                return Err(Error::DimensionMismatch {
                    expected: blocks.dim(),
                    got: len,
                });
            }
        }
        let (ms, cs) = (0..blocks.count())
            .map(|k| {
                let r = blocks.range(k);
                (
                    DVector::from_column_slice(&means[r.clone()]),
                    DMatrix::from_diagonal(&DVector::from_column_slice(&variances[r])),
                )
            })
            .unzip();
        Self::new(ms, cs)
    }

    pub fn block_count(&self) -> usize {
        self.factors.len()
    }

    pub fn all_updated(&self) -> bool {
        self.factors.iter().all(|f| f.updated)
    }

    pub fn flat_mean(&self) -> DVector<f64> {
        let d = self.factors.iter().map(|f| f.mean.len()).sum();
        DVector::from_iterator(d, self.factors.iter().flat_map(|f| f.mean.iter().copied()))
    }

    /// `Σ_k E‖x_k‖²`.
    pub fn second_moment_total(&self) -> f64 {
        self.factors
            .iter()
            .map(|f| f.mean.norm_squared() + f.cov.trace())
            .sum()
    }
}

/// Target-specific data shared by every update: block precisions, their
/// inverses and Cholesky factors, and the optimum mean `μ = −Q⁻¹b`.
#[derive(Debug, Clone)]
pub struct GaussianModel {
    pot: Potential,
    blocks: BlockStructure,
    block_chol: Vec<Cholesky<f64, Dyn>>,
    block_cov: Vec<DMatrix<f64>>,
    block_log_det: Vec<f64>,
    optimum_mean: DVector<f64>,
}

impl GaussianModel {
    pub fn new(pot: Potential, blocks: BlockStructure) -> Result<Self> {
        if !pot.is_quadratic() {
            return Err(Error::InvalidPotential(
                "gaussian engine requires purely quadratic potential".into(),
            ));
        }
        if blocks.dim() != pot.dim() {
            return Err(Error::DimensionMismatch {
                expected: pot.dim(),
                got: blocks.dim(),
            });
        }
        let full = cholesky(pot.q(), "Q")?;
        let optimum_mean = -full.solve(pot.b());
        let mut block_chol = Vec::with_capacity(blocks.count());
        let mut block_cov = Vec::with_capacity(blocks.count());
        let mut block_log_det = Vec::with_capacity(blocks.count());
        for k in 0..blocks.count() {
            let r = blocks.range(k);
            let qkk = pot.q().view((r.start, r.start), (r.len(), r.len())).into_owned();
            let chol = cholesky(&qkk, &format!("Q block {k}"))?;
            block_cov.push(chol.inverse());
            block_log_det.push(log_det(&chol));
            block_chol.push(chol);
        }
        Ok(Self {
            pot,
            blocks,
            block_chol,
            block_cov,
            block_log_det,
            optimum_mean,
        })
    }

    pub fn potential(&self) -> &Potential {
        &self.pot
    }

    pub fn blocks(&self) -> &BlockStructure {
        &self.blocks
    }

    pub fn optimum_mean(&self) -> &DVector<f64> {
        &self.optimum_mean
    }

    /// `Q_kk⁻¹`, the covariance every updated factor takes.
    pub fn block_cov(&self, k: usize) -> &DMatrix<f64> {
        &self.block_cov[k]
    }

    /// The mean-field optimum: means `−Q⁻¹b`, covariances `Q_kk⁻¹`.
    pub fn mf_optimum(&self) -> GaussianProduct {
        let factors = (0..self.blocks.count())
            .map(|k| GaussianFactor {
                mean: self.optimum_mean.rows_range(self.blocks.range(k)).into_owned(),
                cov: self.block_cov[k].clone(),
                updated: true,
            })
            .collect();
        GaussianProduct { factors }
    }

    fn check_state(&self, state: &GaussianProduct) -> Result<()> {
        if state.block_count() != self.blocks.count() {
            return Err(Error::DimensionMismatch {
                expected: self.blocks.count(),
                got: state.block_count(),
            });
        }
        for (k, f) in state.factors.iter().enumerate() {
            if f.mean.len() != self.blocks.size(k) {
                return Err(Error::DimensionMismatch {
                    expected: self.blocks.size(k),
                    got: f.mean.len(),
                });
            }
        }
        Ok(())
    }

    /// Replaces factor `k` by its exact coordinate minimizer:
    /// `m_k ← −Q_kk⁻¹(b_k + Σ_{j≠k} Q_kj m_j)`, `S_k ← Q_kk⁻¹`.
    pub fn cavi_update(&self, state: &mut GaussianProduct, k: usize) -> Result<()> {
        self.blocks.check_index(k)?;
        self.check_state(state)?;
        let rk = self.blocks.range(k);
        let mut rhs = self.pot.b().rows_range(rk.clone()).into_owned();
        for j in 0..self.blocks.count() {
            if j == k {
                continue;
            }
            let rj = self.blocks.range(j);
            let qkj = self.pot.q().view((rk.start, rj.start), (rk.len(), rj.len()));
            rhs += qkj * &state.factors[j].mean;
        }
        let factor = &mut state.factors[k];
        factor.mean = -self.block_chol[k].solve(&rhs);
        factor.cov = self.block_cov[k].clone();
        factor.updated = true;
        Ok(())
    }

    /// `KL(q‖π) − KL(q*‖π) = ½(m−μ)ᵀQ(m−μ) + ½Σ_k[tr(Q_kk S_k) − d_k − log det(Q_kk S_k)]`.
    pub fn kl_gap(&self, state: &GaussianProduct) -> Result<f64> {
        self.check_state(state)?;
        let e = state.flat_mean() - &self.optimum_mean;
        let mut gap = 0.5 * e.dot(&(self.pot.q() * &e));
        for (k, f) in state.factors.iter().enumerate() {
            // Updated factors carry S_k = Q_kk⁻¹ exactly, for which the term vanishes.
            if f.updated {
                continue;
            }
            let chol = cholesky(&f.cov, &format!("covariance of block {k}"))?;
            let r = self.blocks.range(k);
            let qkk = self.pot.q().view((r.start, r.start), (r.len(), r.len()));
            let trace = (qkk * &f.cov).trace();
            let d = r.len() as f64;
            gap += 0.5 * (trace - d - self.block_log_det[k] - log_det(&chol));
        }
        Ok(gap)
    }

    /// Starts from the point mass at `x` and performs one cyclic sweep.
    pub fn one_sweep_from_point(&self, x: &[f64]) -> Result<GaussianProduct> {
        if x.len() != self.blocks.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.blocks.dim(),
                got: x.len(),
            });
        }
        // Only the means of the other blocks enter an update, so any PD
        // placeholder covariance reproduces the point-mass sweep exactly.
        let mut state = GaussianProduct::from_diagonal(&self.blocks, x, &vec![1.0; x.len()])?;
        for k in 0..self.blocks.count() {
            self.cavi_update(&mut state, k)?;
        }
        Ok(state)
    }
}

/// Squared 2-Wasserstein distance between two Gaussians.
pub fn w2_squared_gaussian(
    mean_a: &DVector<f64>,
    cov_a: &DMatrix<f64>,
    mean_b: &DVector<f64>,
    cov_b: &DMatrix<f64>,
) -> Result<f64> {
    let shift = (mean_a - mean_b).norm_squared();
    let bures = if cov_a.nrows() == 1 {
        if !(cov_a[(0, 0)] > 0.0 && cov_b[(0, 0)] > 0.0) {
            return Err(Error::NotPositiveDefinite(" (variance)".into()));
        }
        let diff = cov_a[(0, 0)].sqrt() - cov_b[(0, 0)].sqrt();
        diff * diff
    } else {
        cholesky(cov_a, "covariance")?;
        cholesky(cov_b, "covariance")?;
        let root_b = psd_sqrt(cov_b)?;
        let cross = &root_b * cov_a * &root_b;
        let cross = (&cross + cross.transpose()) * 0.5;
        let cross_root = psd_sqrt(&cross)?;
        (cov_a.trace() + cov_b.trace() - 2.0 * cross_root.trace()).max(0.0)
    };
    Ok(shift + bures)
}

/// `W_{2,L}(a, b) = sqrt(Σ_k L_k W₂²(a_k, b_k))`.
pub fn w2l(a: &GaussianProduct, b: &GaussianProduct, weights: &[f64]) -> Result<f64> {
    if a.block_count() != b.block_count() || weights.len() != a.block_count() {
        return Err(Error::DimensionMismatch {
            expected: a.block_count(),
            got: b.block_count().max(weights.len()),
        });
    }
    let mut total = 0.0;
    for ((fa, fb), &l) in a.factors.iter().zip(&b.factors).zip(weights) {
        total += l * w2_squared_gaussian(&fa.mean, &fa.cov, &fb.mean, &fb.cov)?;
    }
    Ok(total.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis;
    use crate::harness::rng::SplitMix64;
    use nalgebra::{dmatrix, dvector};

    fn coupled(b: DVector<f64>) -> GaussianModel {
        let pot = Potential::quadratic(dmatrix![1.0, 0.5; 0.5, 1.0], b).unwrap();
        GaussianModel::new(pot, BlockStructure::scalar(2).unwrap()).unwrap()
    }

    fn scalar_state(means: &[f64], vars: &[f64]) -> GaussianProduct {
        GaussianProduct::from_diagonal(&BlockStructure::scalar(means.len()).unwrap(), means, vars).unwrap()
    }

    /// KL(N(m,S) ‖ N(μ,Q⁻¹)) from the full multivariate formula using dense
    /// determinants and inverses.
    fn raw_kl(q: &DMatrix<f64>, mu: &DVector<f64>, m: &DVector<f64>, s: &DMatrix<f64>) -> f64 {
        let d = m.len() as f64;
        let cov_pi = q.clone().try_inverse().unwrap();
        let e = mu - m;
        0.5 * ((q * s).trace() + e.dot(&(q * &e)) - d + cov_pi.determinant().ln() - s.determinant().ln())
    }

    fn block_diag(state: &GaussianProduct) -> DMatrix<f64> {
        let d: usize = state.factors.iter().map(|f| f.mean.len()).sum();
        let mut s = DMatrix::zeros(d, d);
        let mut off = 0;
        for f in &state.factors {
            let n = f.mean.len();
            s.view_mut((off, off), (n, n)).copy_from(&f.cov);
            off += n;
        }
        s
    }

    fn random_model(rng: &mut SplitMix64, sizes: Vec<usize>) -> GaussianModel {
        let blocks = BlockStructure::new(sizes).unwrap();
        let d = blocks.dim();
        let a = DMatrix::from_fn(d, d, |_, _| rng.normal());
        let q = &a * a.transpose() / d as f64 + DMatrix::identity(d, d) * 0.2;
        let b = DVector::from_fn(d, |_, _| rng.normal());
        GaussianModel::new(Potential::quadratic(q, b).unwrap(), blocks).unwrap()
    }

    fn random_state(rng: &mut SplitMix64, blocks: &BlockStructure) -> GaussianProduct {
        let means = (0..blocks.count())
            .map(|k| DVector::from_fn(blocks.size(k), |_, _| 2.0 * rng.normal()))
            .collect();
        let covs = (0..blocks.count())
            .map(|k| {
                let n = blocks.size(k);
                let a = DMatrix::from_fn(n, n, |_, _| rng.normal());
                &a * a.transpose() + DMatrix::identity(n, n) * 0.3
            })
            .collect();
        GaussianProduct::new(means, covs).unwrap()
    }

    #[test]
    fn optimum_examples() {
        let pot = Potential::quadratic(DMatrix::from_diagonal(&dvector![2.0, 3.0]), dvector![0.0, 0.0]).unwrap();
        let m = GaussianModel::new(pot, BlockStructure::scalar(2).unwrap()).unwrap();
        let opt = m.mf_optimum();
        assert_eq!(opt.flat_mean(), dvector![0.0, 0.0]);
        assert!((opt.factors[0].cov[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((opt.factors[1].cov[(0, 0)] - 1.0 / 3.0).abs() < 1e-15);

        let opt = coupled(dvector![0.0, 0.0]).mf_optimum();
        assert_eq!(opt.flat_mean(), dvector![0.0, 0.0]);
        assert_eq!(opt.factors[0].cov[(0, 0)], 1.0);

        let opt = coupled(dvector![1.0, 0.0]).mf_optimum();
        let mean = opt.flat_mean();
        assert!((mean[0] + 4.0 / 3.0).abs() < 1e-14);
        assert!((mean[1] - 2.0 / 3.0).abs() < 1e-14);

        let bad = Potential::quadratic(dmatrix![1.0, 2.0; 2.0, 1.0], dvector![0.0, 0.0]).unwrap();
        assert!(GaussianModel::new(bad, BlockStructure::scalar(2).unwrap()).is_err());
    }

    #[test]
    fn update_matches_grid_minimization() {
        let m = coupled(dvector![0.0, 0.0]);
        let mut s = scalar_state(&[0.3, 2.0], &[1.0, 1.0]);
        m.cavi_update(&mut s, 0).unwrap();
        assert_eq!(s.factors[0].mean[0], -1.0);
        assert_eq!(s.factors[0].cov[(0, 0)], 1.0);
        // brute-force minimization of the expected potential over a fine grid
        let best = (0..=400_000)
            .map(|i| -3.0 + i as f64 * 1e-5)
            .min_by(|a, b| {
                let f = |x: f64| 0.5 * x * x + 0.5 * x * 2.0;
                f(*a).total_cmp(&f(*b))
            })
            .unwrap();
        assert!((best - s.factors[0].mean[0]).abs() < 1e-5);
        assert_eq!(m.cavi_update(&mut s, 2), Err(Error::BlockIndex { index: 2, count: 2 }));
    }

    #[test]
    fn independent_and_idempotent_updates() {
        let pot = Potential::quadratic(DMatrix::from_diagonal(&dvector![2.0, 4.0]), dvector![1.0, -2.0]).unwrap();
        let m = GaussianModel::new(pot, BlockStructure::scalar(2).unwrap()).unwrap();
        for other in [-5.0, 0.0, 3.0] {
            let mut s = scalar_state(&[9.0, other], &[2.0, 2.0]);
            m.cavi_update(&mut s, 0).unwrap();
            assert!((s.factors[0].mean[0] + 0.5).abs() < 1e-15);
        }
        let mut rng = SplitMix64::new(3);
        let model = random_model(&mut rng, vec![2, 1, 2]);
        let mut s = random_state(&mut rng, model.blocks());
        model.cavi_update(&mut s, 1).unwrap();
        let once = s.clone();
        model.cavi_update(&mut s, 1).unwrap();
        assert_eq!(once, s);
    }

    #[test]
    fn kl_gap_examples() {
        let m = coupled(dvector![0.0, 0.0]);
        assert_eq!(m.kl_gap(&m.mf_optimum()).unwrap(), 0.0);
        let s = scalar_state(&[1.0, 0.0], &[1.0, 1.0]);
        assert!((m.kl_gap(&s).unwrap() - 0.5).abs() < 1e-15);
        let s = scalar_state(&[1.0, 1.0], &[1.0, 1.0]);
        assert!((m.kl_gap(&s).unwrap() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn kl_gap_matches_raw_kl_difference() {
        let mut rng = SplitMix64::new(17);
        for sizes in [vec![1, 1], vec![2, 1], vec![1, 2, 2], vec![2, 2, 1, 1]] {
            let model = random_model(&mut rng, sizes);
            let q = model.potential().q().clone();
            let mu = model.optimum_mean().clone();
            let opt = model.mf_optimum();
            let base = raw_kl(&q, &mu, &opt.flat_mean(), &block_diag(&opt));
            for _ in 0..20 {
                let s = random_state(&mut rng, model.blocks());
                let oracle = raw_kl(&q, &mu, &s.flat_mean(), &block_diag(&s)) - base;
                let closed = model.kl_gap(&s).unwrap();
                assert!((oracle - closed).abs() < 1e-9 * oracle.abs().max(1.0), "{oracle} vs {closed}");
            }
        }
    }

    #[test]
    fn w2l_examples() {
        let a = scalar_state(&[0.5, -1.0], &[2.0, 0.5]);
        assert_eq!(w2l(&a, &a, &[1.0, 3.0]).unwrap(), 0.0);
        let mut b = a.clone();
        b.factors[1].mean[0] += 1.5;
        assert!((w2l(&a, &b, &[1.0, 4.0]).unwrap() - 3.0).abs() < 1e-15);
        let p = scalar_state(&[0.0], &[1.0]);
        let q = scalar_state(&[2.0], &[4.0]);
        assert!((w2l(&p, &q, &[1.0]).unwrap() - 5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn w2_multivariate_reduces_to_commuting_formula() {
        // commuting covariances: Bures term is ‖√A − √B‖_F²
        let a = dmatrix![4.0, 0.0; 0.0, 1.0];
        let b = dmatrix![1.0, 0.0; 0.0, 9.0];
        let z = dvector![0.0, 0.0];
        let w = w2_squared_gaussian(&z, &a, &z, &b).unwrap();
        assert!((w - (1.0 + 4.0)).abs() < 1e-12);
    }

    #[test]
    fn monotone_descent_and_fixed_point() {
        let mut rng = SplitMix64::new(99);
        let model = random_model(&mut rng, vec![1, 2, 1, 2]);
        let opt = model.mf_optimum();
        for k in 0..4 {
            let mut s = opt.clone();
            model.cavi_update(&mut s, k).unwrap();
            assert!((s.flat_mean() - opt.flat_mean()).amax() < 1e-12);
        }
        for _ in 0..1000 {
            let mut s = random_state(&mut rng, model.blocks());
            let before = model.kl_gap(&s).unwrap();
            model.cavi_update(&mut s, rng.next_index(4)).unwrap();
            let after = model.kl_gap(&s).unwrap();
            assert!(after <= before + 1e-12 * before.max(1.0));
            assert!(after >= -1e-12);
        }
    }

    #[test]
    fn talagrand_control_along_iterates() {
        let mut rng = SplitMix64::new(123);
        let model = random_model(&mut rng, vec![1, 1, 2, 1]);
        let l = analysis::block_smoothness(model.potential(), model.blocks()).unwrap();
        let (lambda, _) = analysis::lambda_star_lower(model.potential(), model.blocks(), &l, None).unwrap();
        assert!(lambda > 0.0);
        let opt = model.mf_optimum();
        let mut s = random_state(&mut rng, model.blocks());
        for _ in 0..200 {
            let gap = model.kl_gap(&s).unwrap();
            let w = w2l(&s, &opt, &l).unwrap();
            assert!(0.5 * lambda * w * w <= gap + 1e-9);
            model.cavi_update(&mut s, rng.next_index(4)).unwrap();
        }
    }

    #[test]
    fn one_step_expected_descent_exact() {
        let mut rng = SplitMix64::new(7);
        for sizes in [vec![1, 1], vec![2, 1, 1], vec![1, 2, 2, 1, 1]] {
            let model = random_model(&mut rng, sizes);
            let kk = model.blocks().count();
            let l = analysis::block_smoothness(model.potential(), model.blocks()).unwrap();
            let (lambda, _) = analysis::lambda_star_lower(model.potential(), model.blocks(), &l, None).unwrap();
            for _ in 0..100 {
                let mut s = random_state(&mut rng, model.blocks());
                for k in 0..kk {
                    model.cavi_update(&mut s, k).unwrap();
                }
                let gap = model.kl_gap(&s).unwrap();
                let mean_after = (0..kk)
                    .map(|k| {
                        let mut t = s.clone();
                        model.cavi_update(&mut t, k).unwrap();
                        model.kl_gap(&t).unwrap()
                    })
                    .sum::<f64>()
                    / kk as f64;
                assert!(mean_after <= (1.0 - lambda / kk as f64) * gap * (1.0 + 1e-10));
            }
        }
    }

    #[test]
    fn reparametrization_equivariance() {
        let mut rng = SplitMix64::new(31);
        let model = random_model(&mut rng, vec![1, 2, 1]);
        let blocks = model.blocks().clone();
        let scales = [0.2, 7.0, 1.9];
        let diag = DVector::from_iterator(blocks.dim(), (0..blocks.dim()).map(|i| scales[blocks.block_of(i)]));
        let inv = DMatrix::from_diagonal(&diag.map(|s| 1.0 / s));
        let q = &inv * model.potential().q() * &inv;
        let b = &inv * model.potential().b();
        let scaled = GaussianModel::new(Potential::quadratic(q, b).unwrap(), blocks.clone()).unwrap();

        let mut s = random_state(&mut rng, &blocks);
        let mut t = s.clone();
        for (k, f) in t.factors.iter_mut().enumerate() {
            f.mean *= scales[k];
            f.cov *= scales[k] * scales[k];
        }
        for _ in 0..100 {
            let ga = model.kl_gap(&s).unwrap();
            let gb = scaled.kl_gap(&t).unwrap();
            assert!((ga - gb).abs() < 1e-9, "{ga} vs {gb}");
            let k = rng.next_index(3);
            model.cavi_update(&mut s, k).unwrap();
            scaled.cavi_update(&mut t, k).unwrap();
        }
    }

    #[test]
    fn one_sweep_from_point_sets_all_flags() {
        let m = coupled(dvector![1.0, 0.0]);
        let s = m.one_sweep_from_point(&[1.0, 1.0]).unwrap();
        assert!(s.all_updated());
        assert!((s.factors[0].mean[0] - (-1.0 - 0.5)).abs() < 1e-15);
        assert!((s.factors[1].mean[0] - 0.75).abs() < 1e-15);
    }
}
