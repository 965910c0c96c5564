//! Shift-invert Lanczos for `K* φ = λ M φ` with full reorthogonalization in
//! the M inner product and explicit deflation between passes, so repeated
//! eigenvalues (degenerate circumferential pairs) are found as well.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fem::assembly::{CondensedSystem, ShiftedSolver};
use crate::fem::sparse::{dot, norm};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigenOptions {
    pub seed: u64,
    /// Required relative residual of every returned pair.
    pub tolerance: f64,
    /// Lanczos vectors per pass; `None` picks `max(2 count + 20, 40)`.
    pub subspace: Option<usize>,
    pub max_passes: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            seed: 0x5eed,
            tolerance: 1e-8,
            subspace: None,
            max_passes: 8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EigenPair {
    pub lambda: f64,
    /// Mass-normalized.
    pub vector: Vec<f64>,
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct EigenSolution {
    pub pairs: Vec<EigenPair>,
    pub shift: f64,
    pub lanczos_steps: usize,
    pub passes: usize,
}

fn factor_with_retry(sys: &CondensedSystem, sigma: f64) -> Result<(ShiftedSolver, f64)> {
    let attempt = |s: f64| -> Result<ShiftedSolver> {
        let f = sys.shifted_solver(1.0, -s)?;
        // A shift on top of an eigenvalue shows up as a useless solve.
        let probe: Vec<f64> = (0..sys.n_u()).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let x = f.solve(&probe);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Factorization("non-finite solution".into()));
        }
        Ok(f)
    };
    match attempt(sigma) {
        Ok(f) => Ok((f, sigma)),
        Err(_) => {
            let s2 = if sigma == 0.0 { -1.0 } else { sigma * 1.001 };
            attempt(s2).map(|f| (f, s2)).map_err(|_| Error::ShiftHitsEigenvalue {
                shift_hz: sigma.abs().sqrt() / (2.0 * std::f64::consts::PI),
            })
        }
    }
}

/// The `count` eigenpairs with `λ` nearest to `sigma`.
pub fn eigs_near(sys: &CondensedSystem, sigma: f64, count: usize, opts: &EigenOptions) -> Result<EigenSolution> {
    let n = sys.n_u();
    if count == 0 || count > n {
        return Err(Error::invalid(format!("cannot extract {count} pairs from {n} DOFs")));
    }
    let (solver, sigma) = factor_with_retry(sys, sigma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut base_m = opts.subspace.unwrap_or((2 * count + 20).max(40));

    // Locked pairs: (lambda, x, Mx, residual).
    let mut locked: Vec<(f64, Vec<f64>, Vec<f64>, f64)> = Vec::new();
    let mut steps_total = 0;
    let mut worst_residual: f64 = 0.0;
    let mut mx = vec![0.0; n];
    let mut kx = vec![0.0; n];
    let mut passes = 0;

    for pass in 0..opts.max_passes {
        passes = pass + 1;
        let room = n - locked.len();
        if room == 0 {
            break;
        }
        let m = base_m.min(room);
        let deflate = |w: &mut Vec<f64>, locked: &[(f64, Vec<f64>, Vec<f64>, f64)]| {
            for (_, x, mxl, _) in locked {
                let c = dot(w, mxl);
                w.iter_mut().zip(x).for_each(|(a, b)| *a -= c * b);
            }
        };
        let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        sys.mass_mul(&v, &mut mx);
        v = solver.solve(&mx);
        deflate(&mut v, &locked);
        sys.mass_mul(&v, &mut mx);
        let nv = dot(&v, &mx).sqrt();
        if !(nv > 0.0) {
            break;
        }
        v.iter_mut().for_each(|a| *a /= nv);
        mx.iter_mut().for_each(|a| *a /= nv);

        let mut q: Vec<Vec<f64>> = vec![v];
        let mut mq: Vec<Vec<f64>> = vec![mx.clone()];
        let mut alpha = Vec::with_capacity(m);
        let mut beta: Vec<f64> = Vec::with_capacity(m);
        let mut exhausted = false;
        for j in 0..m {
            let mut w = solver.solve(&mq[j]);
            let a = dot(&w, &mq[j]);
            alpha.push(a);
            for (wi, qi) in w.iter_mut().zip(&q[j]) {
                *wi -= a * qi;
            }
            if j > 0 {
                let b = beta[j - 1];
                for (wi, qi) in w.iter_mut().zip(&q[j - 1]) {
                    *wi -= b * qi;
                }
            }
            for _ in 0..2 {
                for (qk, mqk) in q.iter().zip(&mq) {
                    let c = dot(&w, mqk);
                    w.iter_mut().zip(qk).for_each(|(x, y)| *x -= c * y);
                }
                deflate(&mut w, &locked);
            }
            let mut mw = vec![0.0; n];
            sys.mass_mul(&w, &mut mw);
            let b = dot(&w, &mw).max(0.0).sqrt();
            steps_total += 1;
            let scale = alpha.iter().fold(0.0f64, |s, v| s.max(v.abs()));
            if j + 1 == m || b <= 1e-13 * scale {
                beta.push(b);
                exhausted = b <= 1e-13 * scale;
                break;
            }
            beta.push(b);
            w.iter_mut().for_each(|x| *x /= b);
            mw.iter_mut().for_each(|x| *x /= b);
            q.push(w);
            mq.push(mw);
        }

        let k = alpha.len();
        let mut t = DMatrix::zeros(k, k);
        for i in 0..k {
            t[(i, i)] = alpha[i];
            if i + 1 < k {
                t[(i, i + 1)] = beta[i];
                t[(i + 1, i)] = beta[i];
            }
        }
        let eig = nalgebra::SymmetricEigen::new(t);
        let beta_last = beta[k - 1];
        let theta_max = eig.eigenvalues.iter().fold(0.0f64, |s, v| s.max(v.abs()));

        let prev_cut = nth_distance(&locked, sigma, count);
        let mut new_near = f64::INFINITY;
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].abs().total_cmp(&eig.eigenvalues[a].abs()));
        for i in order {
            let theta = eig.eigenvalues[i];
            if theta.abs() < 1e-14 * theta_max {
                continue;
            }
            let bound = if exhausted { 0.0 } else { (beta_last * eig.eigenvectors[(k - 1, i)]).abs() };
            if bound > 1e-9 * theta.abs() {
                continue;
            }
            let mut x = vec![0.0; n];
            for (c, qc) in q.iter().take(k).enumerate() {
                let y = eig.eigenvectors[(c, i)];
                x.iter_mut().zip(qc).for_each(|(a, b)| *a += y * b);
            }
            let lambda = sigma + 1.0 / theta;
            sys.mass_mul(&x, &mut mx);
            let nm = dot(&x, &mx).sqrt();
            x.iter_mut().for_each(|a| *a /= nm);
            mx.iter_mut().for_each(|a| *a /= nm);
            sys.k_star_mul(&x, &mut kx);
            let r: Vec<f64> = kx.iter().zip(&mx).map(|(a, b)| a - lambda * b).collect();
            let denom = norm(&kx).max(sigma.abs() * norm(&mx)).max(f64::MIN_POSITIVE);
            let res = norm(&r) / denom;
            if res < opts.tolerance {
                worst_residual = worst_residual.max(res);
                new_near = new_near.min((lambda - sigma).abs());
                locked.push((lambda, x, mx.clone(), res));
            }
        }
        if locked.len() >= count && pass > 0 && new_near > prev_cut {
            break;
        }
        if locked.len() >= count && room <= base_m {
            break;
        }
        if new_near == f64::INFINITY {
            base_m *= 2;
        }
    }

    locked.sort_by(|a, b| (a.0 - sigma).abs().total_cmp(&(b.0 - sigma).abs()));
    if locked.len() < count {
        return Err(Error::SolverNoConverge {
            iterations: steps_total,
            converged: locked.len(),
            requested: count,
            worst_residual,
        });
    }
    locked.truncate(count);
    locked.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(EigenSolution {
        pairs: locked
            .into_iter()
            .map(|(lambda, vector, _, residual)| EigenPair {
                lambda,
                vector,
                residual,
            })
            .collect(),
        shift: sigma,
        lanczos_steps: steps_total,
        passes,
    })
}

fn nth_distance(locked: &[(f64, Vec<f64>, Vec<f64>, f64)], sigma: f64, count: usize) -> f64 {
    if locked.len() < count {
        return f64::INFINITY;
    }
    let mut d: Vec<f64> = locked.iter().map(|l| (l.0 - sigma).abs()).collect();
    d.sort_by(f64::total_cmp);
    d[count - 1]
}
