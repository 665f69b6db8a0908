#![allow(dead_code)]

use std::path::PathBuf;

use miph::data::read_model;
use miph::{GompertzTransform, InitialDistribution, InitialVector, Margin, MiphModel, SubIntensity};
use miph::linalg::{expm, Matrix};
use ndarray::{array, Array1, Array2};
use rand::Rng;

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("data").join(name)
}

/// Printed couple fit `k ∈ 1..=4` with its normalised initial vector.
pub fn couple(k: usize) -> (MiphModel, InitialVector) {
    let model = read_model(&data_path(&format!("couple{k}.json"))).unwrap();
    let pi = model.fixed_initial().unwrap().clone();
    (model, pi)
}

pub fn couple_ages(k: usize) -> (f64, f64) {
    [(63.0, 63.0), (68.0, 63.0), (63.0, 68.0), (73.0, 63.0)][k - 1]
}

/// Random sub-intensity matrix with rates in `[0.2, 3]`.
pub fn random_sub<R: Rng>(rng: &mut R, p: usize, coxian: bool) -> SubIntensity {
    let mut t = Array2::zeros((p, p));
    for k in 0..p {
        let mut out = 0.0;
        for s in 0..p {
            if s != k && (!coxian || s == k + 1) {
                t[[k, s]] = rng.random_range(0.2..3.0);
                out += t[[k, s]];
            }
        }
        out += rng.random_range(0.2..3.0);
        t[[k, k]] = -out;
    }
    SubIntensity::new(t).unwrap()
}

pub fn random_pi<R: Rng>(rng: &mut R, p: usize) -> InitialVector {
    let w: Vec<f64> = (0..p).map(|_| rng.random_range(0.05..1.0)).collect();
    InitialVector::normalized(w).unwrap()
}

pub fn bivariate(t1: SubIntensity, b1: f64, t2: SubIntensity, b2: f64, pi: InitialVector) -> MiphModel {
    MiphModel::new(
        vec![
            Margin::new(t1, GompertzTransform::new(b1).unwrap()),
            Margin::new(t2, GompertzTransform::new(b2).unwrap()),
        ],
        InitialDistribution::Fixed(pi),
    )
    .unwrap()
}

/// Small bivariate model with strong positive dependence.
pub fn small_model() -> MiphModel {
    bivariate(
        SubIntensity::new(array![[-3.0, 2.0, 0.0], [0.0, -1.0, 0.5], [0.0, 0.0, -0.3]]).unwrap(),
        0.8,
        SubIntensity::new(array![[-2.5, 2.0, 0.0], [0.0, -0.8, 0.6], [0.0, 0.0, -0.2]]).unwrap(),
        1.5,
        InitialVector::new(array![0.5, 0.3, 0.2]).unwrap(),
    )
}

fn merge_count(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut count = merge_count(&mut v[..mid], buf) + merge_count(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[i] <= v[j] {
            buf.push(v[i]);
            i += 1;
        } else {
            buf.push(v[j]);
            count += (mid - i) as u64;
            j += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    count
}

/// Sample Kendall tau of continuous data, by inversion counting.
pub fn sample_kendall(x: &[f64], y: &[f64]) -> f64 {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let discordant = merge_count(&mut ys, &mut Vec::with_capacity(x.len())) as f64;
    let pairs = x.len() as f64 * (x.len() as f64 - 1.0) / 2.0;
    (pairs - 2.0 * discordant) / pairs
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    for (rank, &i) in idx.iter().enumerate() {
        r[i] = rank as f64;
    }
    r
}

/// Sample Spearman rho of continuous data.
pub fn sample_spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mean = (n - 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mean) * (b - mean);
        sxx += (a - mean) * (a - mean);
        syy += (b - mean) * (b - mean);
    }
    sxy / (sxx * syy).sqrt()
}

/// Composite Simpson rule with an even number of panels.
pub fn simpson<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, panels: usize) -> f64 {
    let panels = panels + panels % 2;
    let h = (b - a) / panels as f64;
    let mut acc = f(a) + f(b);
    for k in 1..panels {
        acc += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

/// Expected statistics of one row by quadrature of the path integrals.
pub struct Brute {
    pub b: Array1<f64>,
    pub z: Vec<Array1<f64>>,
    pub n_trans: Vec<Matrix>,
    pub n_exit: Vec<Array1<f64>>,
}

pub fn brute_force(x: &[f64], delta: &[bool], pi: &[f64], subs: &[SubIntensity]) -> Brute {
    let p = pi.len();
    let d = x.len();
    // end vector: exit rates when observed, ones when censored
    let ends: Vec<Array1<f64>> = (0..d)
        .map(|i| if delta[i] { subs[i].exit_rates().clone() } else { Array1::ones(p) })
        .collect();
    // per-start-state factor of margin i
    let factors: Vec<Array1<f64>> = (0..d).map(|i| expm(subs[i].matrix(), x[i]).unwrap().dot(&ends[i])).collect();
    let others = |i: usize, k: usize| -> f64 { (0..d).filter(|&l| l != i).map(|l| factors[l][k]).product() };
    let lik: f64 = (0..p).map(|k| pi[k] * (0..d).map(|i| factors[i][k]).product::<f64>()).sum();

    // every margin starts in the shared state, so b counts d starts per row
    let b = Array1::from_shape_fn(p, |k| d as f64 * pi[k] * (0..d).map(|i| factors[i][k]).product::<f64>() / lik);
    let mut z = Vec::new();
    let mut n_trans = Vec::new();
    let mut n_exit = Vec::new();
    for i in 0..d {
        let t = subs[i].matrix();
        let w = Array1::from_shape_fn(p, |k| pi[k] * others(i, k) / lik);
        // ∫₀ˣ wᵀ e^{Tu} e_j · e_sᵀ e^{T(x−u)} end du
        let path = |j: usize, s: usize| {
            simpson(
                |u| {
                    let left = w.dot(&expm(t, u).unwrap());
                    let right = expm(t, x[i] - u).unwrap().dot(&ends[i]);
                    left[j] * right[s]
                },
                0.0,
                x[i],
                2000,
            )
        };
        z.push(Array1::from_shape_fn(p, |j| path(j, j)));
        n_trans.push(Matrix::from_shape_fn((p, p), |(j, s)| if j == s { 0.0 } else { t[[j, s]] * path(j, s) }));
        let at_end = w.dot(&expm(t, x[i]).unwrap());
        n_exit.push(Array1::from_shape_fn(p, |j| {
            if delta[i] {
                at_end[j] * subs[i].exit_rates()[j]
            } else {
                0.0
            }
        }));
    }
    Brute { b, z, n_trans, n_exit }
}
