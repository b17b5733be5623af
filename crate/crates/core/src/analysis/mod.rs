//! Smoothness and convexity constants of a potential under a block structure.
//!
//! For purely quadratic potentials every constant is exact. Once monomials
//! are present the block smoothness relies on a user-declared `ℓ_k` and `λ*`
//! is only a lower bound whose validity hinges on the monomial part being
//! convex; [`Certification`] records how much of that was checked.

pub mod eigen;
pub mod rates;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::rng::SplitMix64;
use crate::potential::{BlockStructure, Potential};

pub use eigen::{psd_sqrt, sym_eigen, SymEigen};
pub use rates::{
    deterministic_scan_budget, iterations_to_epsilon, iterations_to_epsilon_convex,
    rate_bound_convex, rate_bound_strong,
};

/// How trustworthy a reported `λ*` is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Certification {
    /// Purely quadratic potential: `λ*` is exact.
    Exact,
    /// Every monomial is a positive even power of one coordinate, so the
    /// monomial Hessian is PSD everywhere.
    Certified,
    /// The monomial Hessian was PSD at every probe point of the domain.
    Probed,
    /// Supplied by the user or not checked.
    Declared,
}

impl Certification {
    pub fn is_certified(self) -> bool {
        !matches!(self, Certification::Declared)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    /// Block smoothness constants `L_k`.
    pub smoothness: Vec<f64>,
    pub lambda_star: f64,
    pub certification: Certification,
    /// Global convexity constant `λ` (smallest Hessian eigenvalue lower bound).
    pub lambda_classical: f64,
    /// Global smoothness constant `L`; an upper bound once monomials are present.
    pub smoothness_classical: f64,
    /// `λ_min(D_Q^{-1/2} Q D_Q^{-1/2})`; differs from `λ*` when some `d_k > 1`.
    pub lambda_dq: Option<f64>,
    /// True iff the potential is purely quadratic.
    pub exact: bool,
    /// True iff `smoothness` includes user-declared monomial contributions.
    pub smoothness_declared: bool,
}

impl ConvexityReport {
    pub fn condition_number(&self) -> f64 {
        if self.lambda_classical > 0.0 {
            self.smoothness_classical / self.lambda_classical
        } else {
            f64::INFINITY
        }
    }

    pub fn coordinate_condition_number(&self) -> f64 {
        if self.lambda_star > 0.0 {
            1.0 / self.lambda_star
        } else {
            f64::INFINITY
        }
    }
}

fn block_submatrix(m: &DMatrix<f64>, blocks: &BlockStructure, k: usize) -> DMatrix<f64> {
    let r = blocks.range(k);
    m.view((r.start, r.start), (r.len(), r.len())).into_owned()
}

fn check_blocks(pot: &Potential, blocks: &BlockStructure) -> Result<()> {
    if blocks.dim() != pot.dim() {
        return Err(Error::DimensionMismatch {
            expected: pot.dim(),
            got: blocks.dim(),
        });
    }
    Ok(())
}

/// `L_k = λ_max(Q_kk) + ℓ_k`, with `ℓ_k` the declared monomial contribution.
pub fn block_smoothness(pot: &Potential, blocks: &BlockStructure) -> Result<Vec<f64>> {
    check_blocks(pot, blocks)?;
    let extra = match (pot.is_quadratic(), pot.extra_smoothness()) {
        (true, _) => None,
        (false, None) => return Err(Error::MissingDeclaredSmoothness),
        (false, Some(extra)) if extra.len() != blocks.count() => {
            return Err(Error::DimensionMismatch {
                expected: blocks.count(),
                got: extra.len(),
            })
        }
        (false, Some(extra)) => Some(extra),
    };
    (0..blocks.count())
        .map(|k| {
            let mut l = sym_eigen(&block_submatrix(pot.q(), blocks, k))?.max();
            if let Some(extra) = extra {
                l += extra[k];
            }
            if !(l > 0.0) {
                return Err(Error::NonPositiveSmoothness { index: k, value: l });
            }
            Ok(l)
        })
        .collect()
}

/// `D_L^{-1/2} M D_L^{-1/2}` for per-block weights `L`.
pub fn scale_by_weights(m: &DMatrix<f64>, blocks: &BlockStructure, weights: &[f64]) -> DMatrix<f64> {
    let d = m.nrows();
    let w: Vec<f64> = (0..d).map(|i| weights[blocks.block_of(i)]).collect();
    // sqrt(w·w) == w exactly, so a diagonal M scaled by itself gives exact ones.
    DMatrix::from_fn(d, d, |i, j| m[(i, j)] / (w[i] * w[j]).sqrt())
}

fn validate_weights(weights: &[f64], blocks: &BlockStructure) -> Result<()> {
    if weights.len() != blocks.count() {
        return Err(Error::DimensionMismatch {
            expected: blocks.count(),
            got: weights.len(),
        });
    }
    if let Some((index, &value)) = weights.iter().enumerate().find(|(_, l)| !(**l > 0.0)) {
        return Err(Error::NonPositiveSmoothness { index, value });
    }
    Ok(())
}

/// Probe points for the monomial-convexity check: the domain centre, a
/// lattice when the dimension is small, and pseudo-random points otherwise.
fn probe_points(dim: usize, domain: (f64, f64)) -> Vec<Vec<f64>> {
    let (lo, hi) = domain;
    let mut points = vec![vec![0.5 * (lo + hi); dim]];
    let per_axis: usize = match dim {
        1 => 201,
        2 => 41,
        3 => 13,
        4 => 7,
        _ => 0,
    };
    if per_axis > 0 {
        let total = per_axis.pow(dim as u32);
        for mut idx in 0..total {
            let mut p = Vec::with_capacity(dim);
            for _ in 0..dim {
                let t = (idx % per_axis) as f64 / (per_axis - 1) as f64;
                p.push(lo + (hi - lo) * t);
                idx /= per_axis;
            }
            points.push(p);
        }
    }
    let mut rng = SplitMix64::new(0x5eed_c0ffee);
    for _ in 0..2000 {
        points.push((0..dim).map(|_| rng.uniform(lo, hi)).collect());
    }
    points
}

fn monomials_certified(pot: &Potential) -> bool {
    pot.monomials()
        .iter()
        .all(|m| m.powers.len() == 1 && m.powers[0].1 % 2 == 0 && m.coeff > 0.0)
}

fn monomials_psd_on(pot: &Potential, domain: (f64, f64)) -> Result<bool> {
    for p in probe_points(pot.dim(), domain) {
        let h = pot.monomial_hessian(&p);
        let scale = h.norm().max(1.0);
        if sym_eigen(&h)?.min() < -1e-9 * scale {
            return Ok(false);
        }
    }
    Ok(true)
}

/// `λ_min(D_L^{-1/2} Q D_L^{-1/2})` clamped to `[0, 1]`, together with how far
/// it can be trusted as a lower bound on `λ*` for the full potential.
pub fn lambda_star_lower(
    pot: &Potential,
    blocks: &BlockStructure,
    weights: &[f64],
    domain: Option<(f64, f64)>,
) -> Result<(f64, Certification)> {
    check_blocks(pot, blocks)?;
    validate_weights(weights, blocks)?;
    let scaled = scale_by_weights(pot.q(), blocks, weights);
    let value = sym_eigen(&scaled)?.min().clamp(0.0, 1.0);
    let certification = if pot.is_quadratic() {
        Certification::Exact
    } else if monomials_certified(pot) {
        Certification::Certified
    } else if let Some(domain) = domain {
        if monomials_psd_on(pot, domain)? {
            Certification::Probed
        } else {
            Certification::Declared
        }
    } else {
        Certification::Declared
    };
    Ok((value, certification))
}

/// `λ_min(D_Q^{-1/2} Q D_Q^{-1/2})` with `D_Q` the block diagonal of `Q`.
pub fn lambda_min_dq(q: &DMatrix<f64>, blocks: &BlockStructure) -> Result<f64> {
    let d = q.nrows();
    let mut scale = DMatrix::zeros(d, d);
    for k in 0..blocks.count() {
        let r = blocks.range(k);
        let inv = eigen::pd_inv_sqrt(&block_submatrix(q, blocks, k))?;
        scale
            .view_mut((r.start, r.start), (r.len(), r.len()))
            .copy_from(&inv);
    }
    let m = &scale * q * &scale;
    let m = (&m + m.transpose()) * 0.5;
    Ok(sym_eigen(&m)?.min())
}

/// All constants for `pot` under `blocks`. `domain` is the per-coordinate
/// working interval used to probe monomial convexity.
pub fn analyze(
    pot: &Potential,
    blocks: &BlockStructure,
    domain: Option<(f64, f64)>,
) -> Result<ConvexityReport> {
    let smoothness = block_smoothness(pot, blocks)?;
    let (lambda_star, certification) = lambda_star_lower(pot, blocks, &smoothness, domain)?;
    let eig = sym_eigen(pot.q())?;
    let exact = pot.is_quadratic();
    let (lambda_classical, smoothness_classical) = if exact {
        (eig.min(), eig.max())
    } else {
        // For a convex potential λ_max(∇²U) ≤ Σ_k λ_max of its diagonal blocks.
        (eig.min(), smoothness.iter().sum())
    };
    let lambda_dq = if exact {
        lambda_min_dq(pot.q(), blocks).ok()
    } else {
        None
    };
    Ok(ConvexityReport {
        smoothness,
        lambda_star,
        certification,
        lambda_classical,
        smoothness_classical,
        lambda_dq,
        exact,
        smoothness_declared: !exact,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpotCheck {
    pub convex: bool,
    /// Smallest eigenvalue of `D_L^{-1/2} ∇²U D_L^{-1/2}` seen.
    pub worst_eigenvalue: f64,
}

/// Samples the scaled Hessian at the domain centre and at `sample_count`
/// pseudo-random points of `domain^d`.
pub fn convexity_spot_check(
    pot: &Potential,
    blocks: &BlockStructure,
    weights: &[f64],
    sample_count: usize,
    domain: (f64, f64),
    seed: u64,
) -> Result<SpotCheck> {
    check_blocks(pot, blocks)?;
    validate_weights(weights, blocks)?;
    let (lo, hi) = domain;
    let d = pot.dim();
    let mut rng = SplitMix64::new(seed);
    let mut worst = f64::INFINITY;
    let centre = vec![0.5 * (lo + hi); d];
    for s in 0..=sample_count {
        let x = if s == 0 {
            centre.clone()
        } else {
            (0..d).map(|_| rng.uniform(lo, hi)).collect()
        };
        let h = scale_by_weights(&pot.hessian(&x)?, blocks, weights);
        worst = worst.min(sym_eigen(&h)?.min());
    }
    Ok(SpotCheck {
        convex: worst >= -1e-8,
        worst_eigenvalue: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::Monomial;
    use nalgebra::{dmatrix, dvector, DVector};
    use proptest::prelude::*;

    fn quad(q: DMatrix<f64>) -> Potential {
        let d = q.nrows();
        Potential::quadratic(q, DVector::zeros(d)).unwrap()
    }

    fn flat_quartic() -> Potential {
        let mut ms = Monomial::expand_linear_power(0.25, &[(0, 1.0), (1, -1.0)], 4);
        ms.extend(Monomial::expand_linear_power(0.25, &[(0, 1.0), (1, 1.0)], 4));
        Potential::new(DMatrix::zeros(2, 2), dvector![0.0, 0.0], ms).unwrap()
    }

    #[test]
    fn smoothness_diagonal_and_blocks() {
        let pot = quad(DMatrix::from_diagonal(&dvector![0.5, 2.0, 7.0]));
        let blocks = BlockStructure::scalar(3).unwrap();
        assert_eq!(block_smoothness(&pot, &blocks).unwrap(), vec![0.5, 2.0, 7.0]);

        let pot = quad(dmatrix![2.0, 1.0, 0.1; 1.0, 2.0, 0.1; 0.1, 0.1, 1.0]);
        let blocks = BlockStructure::new(vec![2, 1]).unwrap();
        let l = block_smoothness(&pot, &blocks).unwrap();
        assert!((l[0] - 3.0).abs() < 1e-14);
        assert_eq!(l[1], 1.0);
    }

    #[test]
    fn smoothness_with_declared_monomials() {
        let a: f64 = 4.0;
        let pot = Potential::new(DMatrix::zeros(1, 1), dvector![0.0], vec![Monomial::new(0.25, [(0, 4)])])
            .unwrap();
        let blocks = BlockStructure::scalar(1).unwrap();
        assert_eq!(block_smoothness(&pot, &blocks), Err(Error::MissingDeclaredSmoothness));
        let pot = pot.with_extra_smoothness(vec![3.0 * a * a]).unwrap();
        assert_eq!(block_smoothness(&pot, &blocks).unwrap(), vec![3.0 * a * a]);
    }

    #[test]
    fn lambda_star_examples() {
        let blocks = BlockStructure::scalar(2).unwrap();
        let diag = quad(DMatrix::from_diagonal(&dvector![3.0, 0.01]));
        let (l, c) = lambda_star_lower(&diag, &blocks, &[3.0, 0.01], None).unwrap();
        assert!((l - 1.0).abs() < 1e-15);
        assert_eq!(c, Certification::Exact);
        let r = analyze(&diag, &blocks, None).unwrap();
        assert!((r.condition_number() - 300.0).abs() < 1e-9);

        let coupled = quad(dmatrix![1.0, 0.5; 0.5, 1.0]);
        let (l, _) = lambda_star_lower(&coupled, &blocks, &[1.0, 1.0], None).unwrap();
        assert!((l - 0.5).abs() < 1e-14);

        let singular = quad(dmatrix![1.0, 1.0; 1.0, 1.0]);
        let (l, _) = lambda_star_lower(&singular, &blocks, &[1.0, 1.0], None).unwrap();
        assert_eq!(l, 0.0);

        assert!(matches!(
            lambda_star_lower(&coupled, &blocks, &[1.0, 0.0], None),
            Err(Error::NonPositiveSmoothness { index: 1, .. })
        ));
    }

    #[test]
    fn monomial_certification_levels() {
        let blocks = BlockStructure::scalar(2).unwrap();
        let pot = flat_quartic().with_extra_smoothness(vec![768.0, 768.0]).unwrap();
        let r = analyze(&pot, &blocks, Some((-8.0, 8.0))).unwrap();
        assert_eq!(r.certification, Certification::Probed);
        assert_eq!(r.lambda_star, 0.0);
        assert!(!r.exact);
        assert_eq!(analyze(&pot, &blocks, None).unwrap().certification, Certification::Declared);

        let sep = Potential::new(
            DMatrix::identity(2, 2),
            dvector![0.0, 0.0],
            vec![Monomial::new(0.1, [(0, 4)]), Monomial::new(0.2, [(1, 6)])],
        )
        .unwrap()
        .with_extra_smoothness(vec![1.0, 1.0])
        .unwrap();
        assert_eq!(analyze(&sep, &blocks, None).unwrap().certification, Certification::Certified);

        let cubic = Potential::new(
            DMatrix::identity(2, 2),
            dvector![0.0, 0.0],
            vec![Monomial::new(0.1, [(0, 3)])],
        )
        .unwrap()
        .with_extra_smoothness(vec![1.0, 0.0])
        .unwrap();
        assert_eq!(
            analyze(&cubic, &blocks, Some((-1.0, 1.0))).unwrap().certification,
            Certification::Declared
        );
    }

    #[test]
    fn dq_constant_differs_for_multivariate_blocks() {
        let q = dmatrix![2.0, 1.5, 0.3; 1.5, 2.0, 0.3; 0.3, 0.3, 1.0];
        let scalar = BlockStructure::scalar(3).unwrap();
        let pot = quad(q.clone());
        let r = analyze(&pot, &scalar, None).unwrap();
        assert!((r.lambda_dq.unwrap() - r.lambda_star).abs() < 1e-12);
        let grouped = BlockStructure::new(vec![2, 1]).unwrap();
        let r = analyze(&pot, &grouped, None).unwrap();
        assert!((r.lambda_dq.unwrap() - r.lambda_star).abs() > 1e-3);
    }

    #[test]
    fn spot_check_examples() {
        let blocks = BlockStructure::scalar(2).unwrap();
        let coupled = quad(dmatrix![1.0, 0.5; 0.5, 1.0]);
        let s = convexity_spot_check(&coupled, &blocks, &[1.0, 1.0], 50, (-3.0, 3.0), 1).unwrap();
        assert!(s.convex);
        assert!((s.worst_eigenvalue - 0.5).abs() < 1e-12);

        let s = convexity_spot_check(&flat_quartic(), &blocks, &[1.0, 1.0], 200, (-2.0, 2.0), 1).unwrap();
        assert!(s.convex);
        assert!(s.worst_eigenvalue.abs() < 1e-12);

        let wells = Potential::new(
            DMatrix::zeros(1, 1),
            dvector![0.0],
            vec![Monomial::new(0.25, [(0, 4)]), Monomial::new(-1.0, [(0, 2)])],
        )
        .unwrap();
        let one = BlockStructure::scalar(1).unwrap();
        let s = convexity_spot_check(&wells, &one, &[10.0], 100, (-2.0, 2.0), 1).unwrap();
        assert!(!s.convex);
        assert!((s.worst_eigenvalue - (-0.2)).abs() < 1e-12);
    }

    fn random_pd(rng: &mut SplitMix64, d: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(d, d, |_, _| rng.normal());
        &a * a.transpose() + DMatrix::identity(d, d) * 0.1
    }

    #[test]
    fn classical_ratio_lower_bounds_lambda_star() {
        let mut rng = SplitMix64::new(11);
        for trial in 0..100 {
            let d = 2 + trial % 6;
            let pot = quad(random_pd(&mut rng, d));
            let sizes: Vec<usize> = if d % 2 == 0 { vec![2; d / 2] } else { vec![1; d] };
            let blocks = BlockStructure::new(sizes).unwrap();
            let r = analyze(&pot, &blocks, None).unwrap();
            let lmax = r.smoothness.iter().cloned().fold(0.0, f64::max);
            assert!(r.lambda_star >= r.lambda_classical / lmax - 1e-12);
            assert!((0.0..=1.0).contains(&r.lambda_star));
        }
    }

    #[test]
    fn block_diagonal_iff_lambda_star_one() {
        let mut rng = SplitMix64::new(5);
        let blocks = BlockStructure::scalar(4).unwrap();
        for _ in 0..30 {
            let diag = DVector::from_fn(4, |_, _| 0.1 + rng.next_f64() * 10.0);
            let mut q = DMatrix::from_diagonal(&diag);
            let r = analyze(&quad(q.clone()), &blocks, None).unwrap();
            assert!((r.lambda_star - 1.0).abs() < 1e-9, "{}", r.lambda_star);
            q[(0, 2)] += 0.05;
            q[(2, 0)] += 0.05;
            q += DMatrix::identity(4, 4);
            let r = analyze(&quad(q), &blocks, None).unwrap();
            assert!(r.lambda_star < 1.0 - 1e-9);
        }
    }

    #[test]
    fn block_diagonal_with_multivariate_blocks() {
        // With d_k > 1 the scaled diagonal block is Q_kk / λ_max(Q_kk), so λ*
        // is the worst within-block inverse condition number.
        let mut rng = SplitMix64::new(6);
        for _ in 0..30 {
            let a = random_pd(&mut rng, 2);
            let b = random_pd(&mut rng, 1);
            let mut q = DMatrix::zeros(3, 3);
            q.view_mut((0, 0), (2, 2)).copy_from(&a);
            q.view_mut((2, 2), (1, 1)).copy_from(&b);
            let blocks = BlockStructure::new(vec![2, 1]).unwrap();
            let r = analyze(&quad(q), &blocks, None).unwrap();
            let ea = sym_eigen(&a).unwrap();
            assert!((r.lambda_star - ea.min() / ea.max()).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn lambda_star_invariant_under_block_rescaling(
            seed in any::<u64>(),
            scales in prop::collection::vec(0.1f64..10.0, 3),
        ) {
            let mut rng = SplitMix64::new(seed);
            let q = random_pd(&mut rng, 5);
            let blocks = BlockStructure::new(vec![2, 1, 2]).unwrap();
            let base = analyze(&quad(q.clone()), &blocks, None).unwrap().lambda_star;
            let diag = DVector::from_iterator(5, (0..5).map(|i| scales[blocks.block_of(i)]));
            let s = DMatrix::from_diagonal(&diag);
            let rescaled = &s * q * &s;
            let rescaled = (&rescaled + rescaled.transpose()) * 0.5;
            let after = analyze(&quad(rescaled), &blocks, None).unwrap().lambda_star;
            prop_assert!((base - after).abs() < 1e-9);
        }
    }
}
