#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use riskmpc::linalg::{Mat, Vector};
use riskmpc::qp::Qp;

/// Brute-force minimizer of a strictly convex QP: try every subset of
/// inequality rows as the active set, solve the KKT system, keep the best
/// candidate that is primal feasible with nonnegative multipliers.
/// `None` means no KKT point exists, i.e. the QP is infeasible.
pub fn enumerate_qp(qp: &Qp) -> Option<Vector> {
    let nv = qp.h.nrows();
    let m = qp.a.nrows();
    let p = qp.aeq.nrows();
    assert!(m <= 16);
    let mut best: Option<(f64, Vector)> = None;
    for mask in 0u32..(1 << m) {
        let act: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let k = act.len() + p;
        if k > nv {
            continue;
        }
        let dim = nv + k;
        let mut kkt = DMatrix::<f64>::zeros(dim, dim);
        let mut rhs = DVector::<f64>::zeros(dim);
        kkt.view_mut((0, 0), (nv, nv)).copy_from(&qp.h);
        for j in 0..nv {
            rhs[j] = -qp.g[j];
        }
        for (r, &i) in act.iter().enumerate() {
            for j in 0..nv {
                kkt[(nv + r, j)] = qp.a[(i, j)];
                kkt[(j, nv + r)] = qp.a[(i, j)];
            }
            rhs[nv + r] = qp.b[i];
        }
        for e in 0..p {
            let r = act.len() + e;
            for j in 0..nv {
                kkt[(nv + r, j)] = qp.aeq[(e, j)];
                kkt[(j, nv + r)] = qp.aeq[(e, j)];
            }
            rhs[nv + r] = qp.beq[e];
        }
        let svd = kkt.clone().svd(false, false);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if smin <= 1e-10 * smax {
            continue;
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let v = sol.rows(0, nv).into_owned();
        if (0..act.len()).any(|r| sol[nv + r] < -1e-9) {
            continue;
        }
        if qp.max_violation(&v) > 1e-8 {
            continue;
        }
        let f = qp.objective(&v);
        if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
            best = Some((f, v));
        }
    }
    best.map(|(_, v)| v)
}

/// Random strictly convex QP with `nv ≤ 6` variables and `m ≤ 8`
/// inequalities. Roughly a third of the instances have right-hand sides
/// drawn independently of any interior point and may be infeasible.
pub fn random_qp(rng: &mut ChaCha8Rng) -> Qp {
    let nv = rng.random_range(1..=6);
    let m = rng.random_range(0..=8);
    let p = if nv > 1 && rng.random_bool(0.3) { rng.random_range(1..nv.min(3)) } else { 0 };
    let mf = Mat::from_fn(nv, nv, |_, _| rng_normal(rng));
    let h = mf.transpose() * &mf + Mat::identity(nv, nv) * 0.1;
    let g = Vector::from_fn(nv, |_, _| 2.0 * rng_normal(rng));
    let a = Mat::from_fn(m, nv, |_, _| rng_normal(rng));
    let aeq = Mat::from_fn(p, nv, |_, _| rng_normal(rng));
    let x0 = Vector::from_fn(nv, |_, _| rng_normal(rng));
    let wild = rng.random_bool(0.33);
    let b = Vector::from_fn(m, |i, _| {
        if wild {
            2.0 * rng_normal(rng) - 1.5
        } else {
            (a.row(i) * &x0)[0] + rng.random_range(0.0..1.0)
        }
    });
    let beq = &aeq * &x0;
    Qp { h, g, a, b, aeq, beq }
}

pub fn rng_normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random `n×n` matrix scaled to spectral radius `radius`.
pub fn random_stable(rng: &mut ChaCha8Rng, n: usize, radius: f64) -> Mat {
    let a = Mat::from_fn(n, n, |_, _| rng_normal(rng));
    let r = riskmpc::linalg::spectral_radius(&a);
    if r == 0.0 {
        a
    } else {
        a * (radius / r)
    }
}
