//! One-dimensional optimal transport through quantile functions.

use super::{Grid1D, GridDensity};
use crate::error::{Error, Result};

/// Number of uniform quantile levels used by [`w2_1d`].
pub const QUANTILE_LEVELS: usize = 4096;

/// Midpoint levels `(j + ½)/m`, `j = 0..m`.
pub fn quantile_levels(m: usize) -> Vec<f64> {
    (0..m).map(|j| (j as f64 + 0.5) / m as f64).collect()
}

/// Trapezoid-accumulated CDF at the nodes, rescaled to end exactly at one.
pub fn cdf(q: &GridDensity) -> Result<Vec<f64>> {
    let v = q.values();
    let h = q.grid().spacing();
    let mut out = Vec::with_capacity(v.len());
    let mut acc = 0.0;
    out.push(0.0);
    for i in 1..v.len() {
        acc += 0.5 * h * (v[i - 1] + v[i]);
        out.push(acc);
    }
    if !(acc.is_finite() && acc > 0.0) {
        return Err(Error::DegenerateCdf(format!("total mass {acc}")));
    }
    out.iter_mut().for_each(|f| *f /= acc);
    Ok(out)
}

/// Inverts a nondecreasing piecewise-linear CDF at sorted levels in `[0, 1]`.
fn invert_sorted(grid: Grid1D, f: &[f64], levels: &[f64]) -> Result<Vec<f64>> {
    let n = f.len();
    let h = grid.spacing();
    let mut out = Vec::with_capacity(levels.len());
    let mut j = 0usize;
    let mut last = f64::NEG_INFINITY;
    for &u in levels {
        if u < last {
            return Err(Error::DegenerateCdf("quantile levels must be sorted".into()));
        }
        last = u;
        let x = if u <= 0.0 {
            let first = f.partition_point(|&v| v <= 0.0);
            grid.node(first.saturating_sub(1))
        } else if u >= 1.0 {
            grid.node(f.partition_point(|&v| v < 1.0).min(n - 1))
        } else {
            while j < n && f[j] < u {
                j += 1;
            }
            if j == 0 || j == n {
                return Err(Error::DegenerateCdf(format!("level {u} outside CDF range")));
            }
            let (f0, f1) = (f[j - 1], f[j]);
            if !(f1 > f0) {
                return Err(Error::DegenerateCdf("non-increasing segment".into()));
            }
            grid.node(j - 1) + h * (u - f0) / (f1 - f0)
        };
        out.push(x);
    }
    Ok(out)
}

/// Quantile function of `q` at sorted `levels`.
pub fn quantiles(q: &GridDensity, levels: &[f64]) -> Result<Vec<f64>> {
    invert_sorted(q.grid(), &cdf(q)?, levels)
}

/// `sqrt(mean_u (F_a⁻¹(u) − F_b⁻¹(u))²)` over [`QUANTILE_LEVELS`] midpoint levels.
pub fn w2_1d(a: &GridDensity, b: &GridDensity) -> Result<f64> {
    if a.grid() != b.grid() {
        return Err(Error::Precondition("densities live on different grids".into()));
    }
    let levels = quantile_levels(QUANTILE_LEVELS);
    Ok(w2_from_quantiles(&quantiles(a, &levels)?, &quantiles(b, &levels)?))
}

pub(crate) fn w2_from_quantiles(qa: &[f64], qb: &[f64]) -> f64 {
    let sum: f64 = qa.iter().zip(qb).map(|(x, y)| (x - y) * (x - y)).sum();
    (sum / qa.len() as f64).sqrt()
}

/// The displacement interpolant `((1−t)Id + tT)_# a` on the common grid.
///
/// Quantiles are taken at every CDF level either density attains at a node,
/// which resolves both tails. The pushed-forward CDF is interpolated
/// piecewise linearly and deposited as cell masses onto the nodes.
pub fn displacement_interpolate_1d(a: &GridDensity, b: &GridDensity, t: f64) -> Result<GridDensity> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Precondition(format!("t = {t} outside [0, 1]")));
    }
    let grid = a.grid();
    if grid != b.grid() {
        return Err(Error::Precondition("densities live on different grids".into()));
    }
    let fa = cdf(a)?;
    let fb = cdf(b)?;
    let mut levels: Vec<f64> = fa.iter().chain(&fb).copied().collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let qa = invert_sorted(grid, &fa, &levels)?;
    let qb = invert_sorted(grid, &fb, &levels)?;
    let pushed: Vec<f64> = qa
        .iter()
        .zip(&qb)
        .map(|(x, y)| (1.0 - t) * x + t * y)
        .collect();
    let (lo, hi) = (grid.lo(), grid.hi());
    let slack = 1e-9 * (hi - lo);
    if pushed[0] < lo - slack || pushed[pushed.len() - 1] > hi + slack {
        return Err(Error::MassEscaped(1.0));
    }

    // Pushed CDF at cell boundaries lo, x_i + h/2, ..., hi.
    let n = grid.len();
    let h = grid.spacing();
    let boundaries: Vec<f64> = std::iter::once(lo)
        .chain((0..n - 1).map(|i| grid.node(i) + 0.5 * h))
        .chain(std::iter::once(hi))
        .collect();
    let mut cum = Vec::with_capacity(boundaries.len());
    let mut j = 0usize;
    for &c in &boundaries {
        while j < pushed.len() && pushed[j] <= c {
            j += 1;
        }
        let u = if j == 0 {
            0.0
        } else if j == pushed.len() {
            1.0
        } else {
            let (y0, y1) = (pushed[j - 1], pushed[j]);
            let (u0, u1) = (levels[j - 1], levels[j]);
            u0 + (u1 - u0) * (c - y0) / (y1 - y0)
        };
        cum.push(u);
    }
    let escaped = cum[0] + (1.0 - cum[cum.len() - 1]);
    if escaped > 1e-9 {
        return Err(Error::MassEscaped(escaped));
    }
    let values = (0..n)
        .map(|i| ((cum[i + 1] - cum[i]).max(0.0)) / grid.weight(i))
        .collect();
    GridDensity::from_values(values, grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(grid: Grid1D, mean: f64, var: f64) -> GridDensity {
        let lv = grid.nodes().map(|x| -(x - mean) * (x - mean) / (2.0 * var)).collect();
        GridDensity::normalize(lv, grid).unwrap()
    }

    #[test]
    fn w2_examples() {
        let grid = Grid1D::new(-20.0, 20.0, 4096).unwrap();
        let a = gaussian(grid, 0.0, 1.0);
        assert_eq!(w2_1d(&a, &a).unwrap(), 0.0);
        let c = 1.3;
        let shifted = gaussian(grid, c, 1.0);
        assert!((w2_1d(&a, &shifted).unwrap() - c).abs() < 1e-4);
        let wide = gaussian(grid, 2.0, 4.0);
        assert!((w2_1d(&a, &wide).unwrap() - 5f64.sqrt()).abs() < 1e-3);
    }

    #[test]
    fn quantiles_of_uniform() {
        let grid = Grid1D::new(0.0, 1.0, 101).unwrap();
        let q = GridDensity::normalize(vec![0.0; 101], grid).unwrap();
        let levels = [0.0, 0.25, 0.5, 0.999, 1.0];
        let x = quantiles(&q, &levels).unwrap();
        for (u, xv) in levels.iter().zip(x) {
            assert!((u - xv).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolation_endpoints() {
        let grid = Grid1D::new(-10.0, 10.0, 2048).unwrap();
        let a = gaussian(grid, -1.0, 0.5);
        let b = gaussian(grid, 2.0, 2.0);
        let q0 = displacement_interpolate_1d(&a, &b, 0.0).unwrap();
        let q1 = displacement_interpolate_1d(&a, &b, 1.0).unwrap();
        assert!(w2_1d(&q0, &a).unwrap() < 1e-3);
        assert!(w2_1d(&q1, &b).unwrap() < 1e-3);
        assert!(displacement_interpolate_1d(&a, &b, 1.5).is_err());
    }

    #[test]
    fn gaussian_geodesic_is_mean_interpolation() {
        let grid = Grid1D::new(-10.0, 14.0, 2048).unwrap();
        let a = gaussian(grid, 0.0, 1.0);
        let b = gaussian(grid, 4.0, 1.0);
        let mid = displacement_interpolate_1d(&a, &b, 0.5).unwrap();
        assert!(w2_1d(&mid, &gaussian(grid, 2.0, 1.0)).unwrap() < 1e-2);
    }

    #[test]
    fn geodesic_distance_scales_with_t() {
        let grid = Grid1D::new(-12.0, 12.0, 2048).unwrap();
        let lv_a: Vec<f64> = grid.nodes().map(|x| -(x + 1.0).powi(4) / 4.0).collect();
        let a = GridDensity::normalize(lv_a, grid).unwrap();
        let b = gaussian(grid, 3.0, 2.5);
        let total = w2_1d(&a, &b).unwrap();
        for t in [0.25, 0.5, 0.75] {
            let qt = displacement_interpolate_1d(&a, &b, t).unwrap();
            let d = w2_1d(&a, &qt).unwrap();
            assert!((d - t * total).abs() <= 1e-2 * t * total, "t = {t}: {d} vs {}", t * total);
        }
    }
}
