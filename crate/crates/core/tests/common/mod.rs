//! Independent reference computations shared by the integration tests and
//! the acceptance runner.
#![allow(dead_code)]

use nalgebra::DMatrix;
use netar::dgp::{simulate, CopulaSpec, SimConfig};
use netar::model::{Domain, Family, ModelSpec};
use netar::netgraph::{gen_sbm, Network};
use netar::panel::Panel;
use netar::rng::Stream;

/// Central finite-difference gradient.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let mut up = x.to_vec();
            let mut dn = x.to_vec();
            let step = h * x[k].abs().max(1.0);
            up[k] += step;
            dn[k] -= step;
            (f(&up) - f(&dn)) / (2.0 * step)
        })
        .collect()
}

/// Relative error with a floor of 1 on the scale.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Gauss-Jordan inverse with partial pivoting, written out by hand.
pub fn naive_inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = r.clone();
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for c in 0..n {
        let p = (c..n).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs())).unwrap();
        m.swap(c, p);
        let piv = m[c][c];
        for v in m[c].iter_mut() {
            *v /= piv;
        }
        for r in 0..n {
            if r != c {
                let f = m[r][c];
                for k in 0..2 * n {
                    m[r][k] -= f * m[c][k];
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

fn mm(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    (0..n).map(|i| (0..m).map(|j| (0..k).map(|l| a[i][l] * b[l][j]).sum()).collect()).collect()
}

fn block(a: &DMatrix<f64>, r: std::ops::Range<usize>, c: std::ops::Range<usize>) -> Vec<Vec<f64>> {
    r.map(|i| c.clone().map(|j| a[(i, j)]).collect()).collect()
}

/// The four-term covariance correction evaluated term by term.
pub fn naive_sigma(h: &DMatrix<f64>, b: &DMatrix<f64>, m1: usize) -> Vec<Vec<f64>> {
    let m = h.nrows();
    let h11i = naive_inverse(&block(h, 0..m1, 0..m1));
    let h12 = block(h, 0..m1, m1..m);
    let h21 = block(h, m1..m, 0..m1);
    let b11 = block(b, 0..m1, 0..m1);
    let b12 = block(b, 0..m1, m1..m);
    let b21 = block(b, m1..m, 0..m1);
    let b22 = block(b, m1..m, m1..m);
    let t2 = mm(&mm(&h21, &h11i), &b12);
    let t3 = mm(&mm(&b21, &h11i), &h12);
    let t4 = mm(&mm(&mm(&mm(&h21, &h11i), &b11), &h11i), &h12);
    let m2 = m - m1;
    (0..m2).map(|i| (0..m2).map(|j| b22[i][j] - t2[i][j] - t3[i][j] + t4[i][j]).collect()).collect()
}

/// Random symmetric positive definite matrix `A A' + m I`.
pub fn random_spd(m: usize, stream: &mut Stream) -> DMatrix<f64> {
    let a = DMatrix::from_fn(m, m, |_, _| stream.normal());
    &a * a.transpose() + DMatrix::identity(m, m) * m as f64
}

/// Nelder-Mead minimizer with restarts.
pub fn nelder_mead(f: impl Fn(&[f64]) -> f64, x0: &[f64], scale: f64, iters: usize) -> Vec<f64> {
    let n = x0.len();
    let mut best = x0.to_vec();
    let mut size = scale;
    for _ in 0..6 {
        let mut simplex: Vec<Vec<f64>> = vec![best.clone()];
        for k in 0..n {
            let mut p = best.clone();
            p[k] += size;
            simplex.push(p);
        }
        let mut vals: Vec<f64> = simplex.iter().map(|p| f(p)).collect();
        for _ in 0..iters {
            let mut idx: Vec<usize> = (0..=n).collect();
            idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
            simplex = idx.iter().map(|&i| simplex[i].clone()).collect();
            vals = idx.iter().map(|&i| vals[i]).collect();
            let centroid: Vec<f64> = (0..n).map(|k| simplex[..n].iter().map(|p| p[k]).sum::<f64>() / n as f64).collect();
            let along = |t: f64| -> Vec<f64> { (0..n).map(|k| centroid[k] + t * (simplex[n][k] - centroid[k])).collect() };
            let xr = along(-1.0);
            let fr = f(&xr);
            if fr < vals[0] {
                let xe = along(-2.0);
                let fe = f(&xe);
                if fe < fr {
                    simplex[n] = xe;
                    vals[n] = fe;
                } else {
                    simplex[n] = xr;
                    vals[n] = fr;
                }
            } else if fr < vals[n - 1] {
                simplex[n] = xr;
                vals[n] = fr;
            } else {
                let xc = along(0.5);
                let fc = f(&xc);
                if fc < vals[n] {
                    simplex[n] = xc;
                    vals[n] = fc;
                } else {
                    for i in 1..=n {
                        simplex[i] = (0..n).map(|k| simplex[0][k] + 0.5 * (simplex[i][k] - simplex[0][k])).collect();
                        vals[i] = f(&simplex[i]);
                    }
                }
            }
        }
        let k = (0..=n).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
        best = simplex[k].clone();
        size *= 0.1;
    }
    best
}

/// Pearson chi-square goodness of fit of integer draws against Poisson(lambda),
/// pooling cells with expected count below 5. Returns (statistic, df).
pub fn poisson_gof(draws: &[u64], lambda: f64) -> (f64, usize) {
    let n = draws.len() as f64;
    let mut probs = Vec::new();
    let mut p = (-lambda).exp();
    let mut k = 0u64;
    let mut cum = 0.0;
    loop {
        if n * p < 5.0 && k as f64 > lambda {
            break;
        }
        probs.push(p);
        cum += p;
        k += 1;
        p *= lambda / k as f64;
    }
    let last = probs.len();
    probs.push(1.0 - cum);
    let mut obs = vec![0.0; probs.len()];
    for &d in draws {
        obs[(d as usize).min(last)] += 1.0;
    }
    let stat = obs.iter().zip(&probs).map(|(o, p)| (o - n * p).powi(2) / (n * p)).sum();
    (stat, probs.len() - 1)
}

/// A small simulated panel with its network.
pub fn small_panel(domain: Domain, n: usize, t: usize, seed: u64) -> (Panel, Network) {
    let net = gen_sbm(n, 2, seed).unwrap();
    let spec = match domain {
        Domain::Count => ModelSpec::linear(Domain::Count, [1.0, 0.3, 0.2]).unwrap(),
        Domain::Continuous => ModelSpec::linear(Domain::Continuous, [1.5, 0.4, 0.5]).unwrap(),
    };
    let panel = simulate(&spec, &net, &CopulaSpec::identity(), &SimConfig::new(t, seed + 1).burn_in(50)).unwrap();
    (panel, net)
}

/// Random admissible parameter vector for a family.
pub fn random_theta(family: Family, domain: Domain, stream: &mut Stream) -> Vec<f64> {
    let u = |s: &mut Stream, lo: f64, hi: f64| lo + (hi - lo) * s.uniform();
    let mut t = vec![u(stream, 0.5, 2.0), u(stream, 0.05, 0.4), u(stream, 0.05, 0.4)];
    match family {
        Family::Linear => {}
        Family::InterceptDrift => t.push(u(stream, 0.0, 1.0)),
        Family::Stnar => {
            t.push(u(stream, 0.05, 0.5));
            t.push(u(stream, 0.05, 1.0));
        }
        Family::Tnar => {
            t.extend([u(stream, 0.05, 0.5), u(stream, 0.05, 0.3), u(stream, 0.05, 0.3)]);
            t.push(u(stream, 0.5, 3.0));
        }
    }
    if domain == Domain::Continuous && family != Family::Linear {
        // exercise signs in the continuous domain
        t[1] = -t[1];
    }
    t
}
