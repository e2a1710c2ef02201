use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::design::Design;
use crate::error::Result;

pub const DEFAULT_VIF_THRESHOLD: f64 = 10.0;

/// 1 − R² at or below this is treated as perfect collinearity.
const COLLINEAR_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VifRemoval {
    pub name: String,
    /// `None` stands for an infinite VIF.
    pub vif: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VifScreen {
    pub threshold: f64,
    pub retained: Vec<String>,
    pub removed: Vec<VifRemoval>,
    /// VIFs of the retained predictors after the last removal.
    pub final_vifs: Vec<(String, f64)>,
}

/// Correlation matrix of the columns of `x`; `None` where a column has zero
/// variance.
fn correlation(x: &DMatrix<f64>) -> (DMatrix<f64>, Vec<bool>) {
    let (n, p) = x.shape();
    let mut c = x.clone();
    let mut constant = vec![false; p];
    for j in 0..p {
        let mean = c.column(j).sum() / n as f64;
        c.column_mut(j).add_scalar_mut(-mean);
        let norm = c.column(j).norm();
        if norm == 0.0 {
            constant[j] = true;
        } else {
            c.column_mut(j).unscale_mut(norm);
        }
    }
    (c.transpose() * &c, constant)
}

fn from_r2(r2: f64) -> f64 {
    let denom = 1.0 - r2;
    if denom <= COLLINEAR_TOL {
        f64::INFINITY
    } else {
        1.0 / denom
    }
}

/// VIF of every column of `x` (predictors only, no intercept column), each
/// from the regression of that column on the others with an intercept.
pub fn vifs(x: &DMatrix<f64>) -> Vec<f64> {
    let p = x.ncols();
    if p == 0 {
        return Vec::new();
    }
    if p == 1 {
        return vec![1.0];
    }
    let (g, constant) = correlation(x);
    if constant.iter().any(|&c| c) {
        return projection_vifs(&g, &constant);
    }
    // With a well-conditioned correlation matrix R²_j = 1 − 1/(G⁻¹)_jj.
    if let Some(chol) = g.clone().cholesky() {
        let l = chol.l();
        let min_pivot = (0..p).map(|j| l[(j, j)] * l[(j, j)]).fold(f64::INFINITY, f64::min);
        if min_pivot > COLLINEAR_TOL {
            let inv = chol.inverse();
            return (0..p).map(|j| from_r2(1.0 - 1.0 / inv[(j, j)])).collect();
        }
    }
    projection_vifs(&g, &constant)
}

/// R²_j as the squared length of the projection of column j onto the span
/// of the other columns, through a pseudo-inverse so that collinearity among
/// the regressors does not matter.
fn projection_vifs(g: &DMatrix<f64>, constant: &[bool]) -> Vec<f64> {
    let p = g.ncols();
    (0..p)
        .map(|j| {
            if constant[j] {
                return f64::INFINITY;
            }
            let others: Vec<usize> = (0..p).filter(|&k| k != j && !constant[k]).collect();
            if others.is_empty() {
                return 1.0;
            }
            let sub = g.select_rows(&others).select_columns(&others);
            let v = g.select_rows(&others).column(j).into_owned();
            let eig = SymmetricEigen::new(sub);
            let max_ev = eig.eigenvalues.amax();
            let mut r2 = 0.0;
            for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
                if lambda > 1e-12 * max_ev {
                    let proj = eig.eigenvectors.column(i).dot(&v);
                    r2 += proj * proj / lambda;
                }
            }
            from_r2(r2)
        })
        .collect()
}

/// Removes the predictor with the highest VIF while it exceeds `threshold`,
/// one at a time; equal VIFs go to the name that sorts first.
pub fn vif_screen(design: &Design, threshold: f64) -> Result<VifScreen> {
    let mut names = design.names.clone();
    let mut cols: Vec<usize> = (1..=names.len()).collect();
    let mut removed = Vec::new();
    loop {
        let current = vifs(&design.x.select_columns(&cols));
        let worst = current
            .iter()
            .enumerate()
            .fold(None::<(usize, f64)>, |best, (i, &v)| match best {
                Some((_, b)) if v <= b => best,
                _ => Some((i, v)),
            });
        match worst {
            Some((i, v)) if v > threshold && names.len() > 1 => {
                let name = names.remove(i);
                cols.remove(i);
                log::info!("VIF screen removed {name} (VIF {v:.3})");
                removed.push(VifRemoval {
                    name,
                    vif: v.is_finite().then_some(v),
                });
            }
            _ => {
                return Ok(VifScreen {
                    threshold,
                    final_vifs: names.iter().cloned().zip(current).collect(),
                    retained: names,
                    removed,
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::design::{Transform, TransformSpec};
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Brute-force VIF: regress column j on the others plus an intercept via
    /// the normal equations (Gaussian elimination) and take 1/(1 − R²).
    fn brute_vif(cols: &[Vec<f64>], j: usize) -> f64 {
        let n = cols[j].len();
        let mut regs: Vec<Vec<f64>> = vec![vec![1.0; n]];
        regs.extend(cols.iter().enumerate().filter(|(k, _)| *k != j).map(|(_, c)| c.clone()));
        let k = regs.len();
        let mut a = vec![vec![0.0; k + 1]; k];
        for r in 0..n {
            for p in 0..k {
                for q in 0..k {
                    a[p][q] += regs[p][r] * regs[q][r];
                }
                a[p][k] += regs[p][r] * cols[j][r];
            }
        }
        for c in 0..k {
            let piv = (c..k).max_by(|&p, &q| a[p][c].abs().total_cmp(&a[q][c].abs())).unwrap();
            a.swap(c, piv);
            for r in c + 1..k {
                let f = a[r][c] / a[c][c];
                for q in c..=k {
                    a[r][q] -= f * a[c][q];
                }
            }
        }
        let mut b = vec![0.0; k];
        for i in (0..k).rev() {
            b[i] = (a[i][k] - (i + 1..k).map(|q| a[i][q] * b[q]).sum::<f64>()) / a[i][i];
        }
        let y = &cols[j];
        let mean = y.iter().sum::<f64>() / n as f64;
        let mut rss = 0.0;
        let mut tss = 0.0;
        for r in 0..n {
            let fit: f64 = (0..k).map(|p| b[p] * regs[p][r]).sum();
            rss += (y[r] - fit).powi(2);
            tss += (y[r] - mean).powi(2);
        }
        1.0 / (rss / tss)
    }

    fn design(cols: &[(&str, Vec<f64>)]) -> Design {
        let n = cols[0].1.len();
        let mut x = DMatrix::from_element(n, cols.len() + 1, 1.0);
        for (j, (_, c)) in cols.iter().enumerate() {
            x.set_column(j + 1, &DVector::from_vec(c.clone()));
        }
        Design {
            names: cols.iter().map(|(n, _)| n.to_string()).collect(),
            x,
            y: DVector::zeros(n),
            observed: vec![1.0; n],
            spec: TransformSpec(cols.iter().map(|(n, _)| (n.to_string(), Transform::Ln)).collect()),
            dropped_constant: vec![],
        }
    }

    #[test]
    fn orthogonal_columns_have_unit_vif() {
        let a = vec![1.0, -1.0, 1.0, -1.0];
        let b = vec![1.0, 1.0, -1.0, -1.0];
        let s = vif_screen(&design(&[("a", a), ("b", b)]), 10.0).unwrap();
        assert!(s.removed.is_empty());
        for (_, v) in &s.final_vifs {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_multiple_removed_as_infinite() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x1: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..1.0)).collect();
        let x2: Vec<f64> = x1.iter().map(|v| 2.0 * v).collect();
        let x3: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..1.0)).collect();
        let s = vif_screen(&design(&[("x1", x1), ("x2", x2), ("x3", x3)]), 10.0).unwrap();
        assert_eq!(s.removed, vec![VifRemoval { name: "x1".into(), vif: None }]);
        assert_eq!(s.retained, vec!["x2".to_string(), "x3".to_string()]);
    }

    #[test]
    fn correlated_pair_matches_closed_form() {
        // Two columns with sample correlation exactly 0.9.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 200;
        let mut u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let center = |v: &mut Vec<f64>| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter_mut().for_each(|x| *x -= m);
        };
        center(&mut u);
        center(&mut w);
        let uu: f64 = u.iter().map(|x| x * x).sum();
        let uw: f64 = u.iter().zip(&w).map(|(a, b)| a * b).sum();
        w.iter_mut().zip(&u).for_each(|(b, a)| *b -= uw / uu * a);
        let ww: f64 = w.iter().map(|x| x * x).sum();
        let a: Vec<f64> = u.iter().map(|x| x / uu.sqrt()).collect();
        let b: Vec<f64> = a.iter().zip(&w).map(|(x, y)| 0.9 * x + (1.0 - 0.81f64).sqrt() * y / ww.sqrt()).collect();
        let s = vif_screen(&design(&[("a", a.clone()), ("b", b.clone())]), 10.0).unwrap();
        assert!(s.removed.is_empty());
        let expected = 1.0 / (1.0 - 0.81);
        for (j, (_, v)) in s.final_vifs.iter().enumerate() {
            assert!((v - expected).abs() < 1e-8);
            assert!((v - brute_vif(&[a.clone(), b.clone()], j)).abs() < 1e-8);
        }
    }

    #[test]
    fn agrees_with_brute_force_on_random_designs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let p = rng.random_range(2..7);
            let n = rng.random_range(p + 5..80);
            let mut cols: Vec<Vec<f64>> = (0..p).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            // induce some correlation
            for r in 0..n {
                cols[1][r] += 0.8 * cols[0][r];
            }
            let x = DMatrix::from_fn(n, p, |i, j| cols[j][i]);
            let v = vifs(&x);
            for j in 0..p {
                let b = brute_vif(&cols, j);
                assert!((v[j] - b).abs() <= 1e-8 * b, "{} vs {}", v[j], b);
            }
        }
    }

    #[test]
    fn orthogonal_survives_alongside_singular_pair() {
        // `a` is orthogonal to the collinear pair and must never be removed
        // even though it sorts first.
        let a = vec![1.0, -1.0, 1.0, -1.0, 1.0, -1.0];
        let b = vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0];
        let c: Vec<f64> = b.iter().map(|v| 3.0 * v).collect();
        let s = vif_screen(&design(&[("a", a), ("b", b), ("c", c)]), 10.0).unwrap();
        assert_eq!(s.removed.len(), 1);
        assert_eq!(s.removed[0].name, "b");
        assert!(s.retained.contains(&"a".to_string()));
    }

    #[test]
    fn screen_terminates_within_p_iterations() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base: Vec<f64> = (0..60).map(|_| rng.random_range(0.0..1.0)).collect();
        let cols: Vec<(String, Vec<f64>)> = (0..8)
            .map(|k| (format!("v{k}"), base.iter().map(|b| b + 0.01 * rng.random_range(-1.0..1.0) * k as f64).collect()))
            .collect();
        let refs: Vec<(&str, Vec<f64>)> = cols.iter().map(|(n, c)| (n.as_str(), c.clone())).collect();
        let s = vif_screen(&design(&refs), 10.0).unwrap();
        assert!(s.removed.len() < 8);
        assert!(s.final_vifs.iter().all(|(_, v)| *v <= 10.0));
    }
}
