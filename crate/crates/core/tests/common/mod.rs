//! Brute-force dense oracles shared by the integration tests. Nothing here goes
//! through the crate's closed-form Galerkin integrals: basis functions, operator
//! factors and integrals are rebuilt pointwise and summed by quadrature.
#![allow(dead_code)]

use std::f64::consts::PI;

use lowrank_kinetics::implicit::{build_gamma, build_m, Forcing, ImplicitStepper, ALSStepConfig};
use lowrank_kinetics::operator::{advection_operator, crank_nicolson_pair, SeparableOperator};
use lowrank_kinetics::quadrature::CompositeRule;
use lowrank_kinetics::{BasisSpec, CPTensor, FactorKind, HTTensor, C64};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };
const I: C64 = C64 { re: 0.0, im: 1.0 };

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<C64> {
    DMatrix::from_fn(rows, cols, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

pub fn random_cp(specs: &[BasisSpec], rank: usize, seed: u64) -> CPTensor {
    let mut r = rng(seed);
    let f = specs.iter().map(|s| random_matrix(&mut r, s.modes(), rank)).collect();
    CPTensor::from_factors(specs.to_vec(), f).unwrap()
}

/// `exp(iπsz/b)/sqrt(2b)` for coefficient index `h`.
pub fn phi(spec: &BasisSpec, h: usize, z: f64) -> C64 {
    let b = spec.half_width();
    let s = h as f64 - (spec.modes() as f64 - 1.0) / 2.0;
    (I * (PI * s * z / b)).exp() / (2.0 * b).sqrt()
}

/// The factor `kind` applied to `Σ c_h φ_h`, evaluated at `z`.
pub fn apply_1d(spec: &BasisSpec, kind: FactorKind, c: &[C64], z: f64) -> C64 {
    let b = spec.half_width();
    let mut v = ZERO;
    for (h, ch) in c.iter().enumerate() {
        let s = h as f64 - (spec.modes() as f64 - 1.0) / 2.0;
        let k = I * (PI * s / b);
        let p = phi(spec, h, z);
        v += ch * match kind {
            FactorKind::Identity => p,
            FactorKind::Derivative => k * p,
            FactorKind::CoordMultiply => z * p,
            FactorKind::CoordTimesDerivative => z * k * p,
        };
    }
    v
}

pub fn rule(spec: &BasisSpec) -> CompositeRule {
    CompositeRule::new(-spec.half_width(), spec.half_width(), 24, 16)
}

pub fn unit(spec: &BasisSpec, h: usize) -> Vec<C64> {
    let mut e = vec![ZERO; spec.modes()];
    e[h] = ONE;
    e
}

/// Galerkin matrix `∫ conj(φ_s) E φ_h` by quadrature.
pub fn galerkin_1d(spec: &BasisSpec, kind: FactorKind) -> DMatrix<C64> {
    let q = spec.modes();
    let r = rule(spec);
    DMatrix::from_fn(q, q, |s, h| {
        let e = unit(spec, h);
        r.nodes.iter().zip(&r.weights).map(|(&z, &w)| phi(spec, s, z).conj() * apply_1d(spec, kind, &e, z) * w).sum()
    })
}

/// Multi-index of a flat position, first dimension fastest.
pub fn multi_index(mut idx: usize, dims: &[usize]) -> Vec<usize> {
    dims.iter()
        .map(|&d| {
            let i = idx % d;
            idx /= d;
            i
        })
        .collect()
}

/// `Σ_l Π_k β_k[i_k, l]` directly from the factors.
pub fn cp_dense_oracle(f: &CPTensor) -> Vec<C64> {
    let dims: Vec<usize> = f.specs().iter().map(|s| s.modes()).collect();
    let total: usize = dims.iter().product();
    (0..total)
        .map(|p| {
            let ix = multi_index(p, &dims);
            (0..f.rank()).map(|l| ix.iter().enumerate().map(|(k, &i)| f.factor(k)[(i, l)]).product::<C64>()).sum()
        })
        .collect()
}

/// Evaluates a dense coefficient tensor at `z` with the pointwise basis.
pub fn dense_eval(dense: &[C64], specs: &[BasisSpec], z: &[f64]) -> C64 {
    let dims: Vec<usize> = specs.iter().map(|s| s.modes()).collect();
    dense
        .iter()
        .enumerate()
        .map(|(p, c)| {
            let ix = multi_index(p, &dims);
            c * ix.iter().enumerate().map(|(k, &i)| phi(&specs[k], i, z[k])).product::<C64>()
        })
        .sum()
}

/// Full tensor of an HT tensor by explicit recursive contraction of the node data.
pub fn ht_dense_oracle(h: &HTTensor) -> Vec<C64> {
    fn frame(h: &HTTensor, t: usize) -> DMatrix<C64> {
        let node = &h.tree().nodes()[t];
        let b = &h.node_data()[t];
        match node.children {
            None => b.clone(),
            Some([l, r]) => {
                let (ul, ur) = (frame(h, l), frame(h, r));
                let (kl, kr) = (ul.ncols(), ur.ncols());
                let mut u = DMatrix::zeros(ul.nrows() * ur.nrows(), b.ncols());
                for j in 0..b.ncols() {
                    for ir in 0..ur.nrows() {
                        for il in 0..ul.nrows() {
                            let mut s = ZERO;
                            for bb in 0..kr {
                                for a in 0..kl {
                                    s += b[(a + kl * bb, j)] * ul[(il, a)] * ur[(ir, bb)];
                                }
                            }
                            u[(il + ul.nrows() * ir, j)] = s;
                        }
                    }
                }
                u
            }
        }
    }
    frame(h, 0).column(0).iter().copied().collect()
}

pub fn max_abs_diff(a: &[C64], b: &[C64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub fn dense_norm(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

pub fn dense_dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Dense separable operator `Σ_q α_q ⊗_k G_k^q` applied to a dense tensor.
pub fn dense_apply(l: &SeparableOperator, specs: &[BasisSpec], x: &[C64]) -> Vec<C64> {
    let dims: Vec<usize> = specs.iter().map(|s| s.modes()).collect();
    let mut out = vec![ZERO; x.len()];
    for term in l.terms() {
        let g: Vec<DMatrix<C64>> = specs.iter().zip(&term.factors).map(|(s, &k)| galerkin_1d(s, k)).collect();
        for (p, o) in out.iter_mut().enumerate() {
            let ip = multi_index(p, &dims);
            let mut acc = ZERO;
            for (q, xq) in x.iter().enumerate() {
                let iq = multi_index(q, &dims);
                let w: C64 = (0..dims.len()).map(|k| g[k][(ip[k], iq[k])]).product();
                acc += w * xq;
            }
            *o += term.alpha * acc;
        }
    }
    out
}

/// Random HT tensor on the balanced tree with node ranks `k`.
pub fn random_ht(specs: &[BasisSpec], k: usize, seed: u64) -> HTTensor {
    let mut r = rng(seed);
    let tree = lowrank_kinetics::ht::DimensionTree::balanced(specs.len()).unwrap();
    let kt = |t: usize| if t == 0 { 1 } else { k };
    let data = (0..tree.len())
        .map(|t| match tree.nodes()[t].children {
            None => random_matrix(&mut r, specs[tree.nodes()[t].dims[0]].modes(), kt(t)),
            Some([a, b]) => random_matrix(&mut r, kt(a) * kt(b), kt(t)),
        })
        .collect();
    HTTensor::from_parts(specs.to_vec(), tree, data).unwrap()
}

pub fn oracle_specs() -> Vec<BasisSpec> {
    vec![BasisSpec::new(5, 1.0).unwrap(), BasisSpec::new(3, 2.0).unwrap(), BasisSpec::new(5, 0.7).unwrap()]
}

pub fn sample_points(specs: &[BasisSpec], n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    (0..n).map(|_| specs.iter().map(|s| r.random_range(-s.half_width()..s.half_width())).collect()).collect()
}

/// Largest relative deviation of CP/HT evaluation and dense materialization from the oracles.
pub fn check_evaluation() -> f64 {
    let specs = oracle_specs();
    let f = random_cp(&specs, 3, 11);
    let dense = cp_dense_oracle(&f);
    let scale = dense_norm(&dense);
    let mut err = max_abs_diff(&f.to_dense(), &dense) / scale;
    let h = random_ht(&specs, 2, 12);
    let hd = ht_dense_oracle(&h);
    let hscale = dense_norm(&hd);
    err = err.max(max_abs_diff(&h.to_dense(), &hd) / hscale);
    let hc = HTTensor::from_cp(&f).unwrap();
    err = err.max(max_abs_diff(&hc.to_dense(), &dense) / scale);
    for z in sample_points(&specs, 20, 13) {
        err = err.max((f.evaluate(&z).unwrap() - dense_eval(&dense, &specs, &z)).norm() / scale);
        err = err.max((h.evaluate(&z).unwrap() - dense_eval(&hd, &specs, &z)).norm() / hscale);
    }
    err
}

/// Relative error of CP and HT inner products against dense dot products.
pub fn check_inner_products() -> f64 {
    let specs = oracle_specs();
    let (f, g) = (random_cp(&specs, 2, 21), random_cp(&specs, 3, 22));
    let (fd, gd) = (cp_dense_oracle(&f), cp_dense_oracle(&g));
    let scale = dense_norm(&fd) * dense_norm(&gd);
    let mut err = (f.inner_product(&g).unwrap() - dense_dot(&fd, &gd)).norm() / scale;
    let (a, b) = (random_ht(&specs, 2, 23), random_ht(&specs, 3, 24));
    let (ad, bd) = (ht_dense_oracle(&a), ht_dense_oracle(&b));
    err = err.max((a.inner_product(&b).unwrap() - dense_dot(&ad, &bd)).norm() / (dense_norm(&ad) * dense_norm(&bd)));
    err.max((a.norm() - dense_norm(&ad)).abs() / dense_norm(&ad))
}

/// Relative error of CP and HT operator application against the dense Galerkin operator.
pub fn check_operator_application() -> f64 {
    let specs = oracle_specs();
    let c = DMatrix::from_row_slice(3, 3, &[0.5, 1.0, -0.3, -0.25, 0.5, 0.2, 0.1, 0.25, 0.7]);
    let l = advection_operator(&c).unwrap();
    let f = random_cp(&specs, 2, 31);
    let want = dense_apply(&l, &specs, &cp_dense_oracle(&f));
    let scale = dense_norm(&want);
    let got_cp = l.apply(&f).unwrap().to_dense();
    let h = random_ht(&specs, 2, 32);
    let want_h = dense_apply(&l, &specs, &ht_dense_oracle(&h));
    let got_h = h.apply_operator(&l).unwrap().to_dense();
    (max_abs_diff(&got_cp, &want) / scale).max(max_abs_diff(&got_h, &want_h) / dense_norm(&want_h))
}

/// `A` or `B` applied to a CP tensor, evaluated pointwise.
fn op_value(l: &SeparableOperator, specs: &[BasisSpec], f: &CPTensor, z: &[f64]) -> C64 {
    let mut v = ZERO;
    for term in l.terms() {
        for col in 0..f.rank() {
            let mut p = term.alpha;
            for k in 0..specs.len() {
                let c: Vec<C64> = f.factor(k).column(col).iter().copied().collect();
                p *= apply_1d(&specs[k], term.factors[k], &c, z[k]);
            }
            v += p;
        }
    }
    v
}

/// Relative error of `M_q` and `γ_q` against the least-squares normal equations
/// formed by 2D quadrature of `‖A u − (B u_old + dt·s·g)‖²`.
pub fn check_assembly() -> f64 {
    let specs = vec![BasisSpec::new(3, 1.3).unwrap(), BasisSpec::new(3, 0.9).unwrap()];
    let c = DMatrix::from_row_slice(2, 2, &[0.5, 1.0, -0.25, 0.4]);
    let pair = crank_nicolson_pair(&advection_operator(&c).unwrap(), 0.1).unwrap();
    let tables = lowrank_kinetics::implicit::OperatorTables::new(&pair, &specs).unwrap();
    let beta_new = random_cp(&specs, 2, 41);
    let beta_old = random_cp(&specs, 3, 42);
    let forcing = Forcing { scale: 0.7, source: random_cp(&specs, 2, 43) };
    let (r0, r1) = (rule(&specs[0]), rule(&specs[1]));
    let mut err: f64 = 0.0;
    for q in 0..2 {
        let m = build_m(q, beta_new.factors(), &tables).unwrap();
        let g = build_gamma(q, beta_new.factors(), beta_old.factors(), &tables, Some(&forcing)).unwrap();
        let (qn, r) = (specs[q].modes(), beta_new.rank());
        let mut m_or = DMatrix::<C64>::zeros(qn * r, qn * r);
        let mut g_or = DVector::<C64>::zeros(qn * r);
        for (&z0, &w0) in r0.nodes.iter().zip(&r0.weights) {
            for (&z1, &w1) in r1.nodes.iter().zip(&r1.weights) {
                let z = [z0, z1];
                let w = w0 * w1;
                // A applied to each trial function φ_s(z_q) Π_{k≠q} u_k^l(z_k)
                let mut a_phi = vec![ZERO; qn * r];
                for term in pair.a.terms() {
                    let mut other = vec![term.alpha; r];
                    for k in (0..2).filter(|&k| k != q) {
                        for (l, o) in other.iter_mut().enumerate() {
                            let col: Vec<C64> = beta_new.factor(k).column(l).iter().copied().collect();
                            *o *= apply_1d(&specs[k], term.factors[k], &col, z[k]);
                        }
                    }
                    for s in 0..qn {
                        let own = apply_1d(&specs[q], term.factors[q], &unit(&specs[q], s), z[q]);
                        for l in 0..r {
                            a_phi[l * qn + s] += other[l] * own;
                        }
                    }
                }
                let rhs = op_value(&pair.b, &specs, &beta_old, &z)
                    + pair.dt * forcing.scale * forcing.source.evaluate(&z).unwrap();
                for i in 0..qn * r {
                    let ci = a_phi[i].conj() * w;
                    g_or[i] += ci * rhs;
                    for j in 0..qn * r {
                        m_or[(i, j)] += ci * a_phi[j];
                    }
                }
            }
        }
        err = err.max((&m - &m_or).norm() / m_or.norm());
        err = err.max((&g - &g_or).norm() / g_or.norm());
    }
    err
}

/// Singular values of the matricization of a dense tensor with row dims `rows`.
pub fn matricization_singular_values(dense: &[C64], dims: &[usize], rows: &[usize]) -> Vec<f64> {
    let cols: Vec<usize> = (0..dims.len()).filter(|k| !rows.contains(k)).collect();
    let nr: usize = rows.iter().map(|&k| dims[k]).product();
    let nc: usize = cols.iter().map(|&k| dims[k]).product();
    let mut m = DMatrix::<C64>::zeros(nr, nc);
    for (p, v) in dense.iter().enumerate() {
        let ix = multi_index(p, dims);
        let flat = |set: &[usize]| set.iter().rev().fold(0, |acc, &k| acc * dims[k] + ix[k]);
        m[(flat(rows), flat(&cols))] = *v;
    }
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// HSVD checks on an `N = 3` tensor, relative to `‖h‖`:
/// estimate vs the dense matricization tails, and the error bounds
/// `max tail ≤ ‖h − h̃‖ ≤ estimate`.
pub fn check_hsvd() -> f64 {
    let specs = vec![BasisSpec::new(5, 1.0).unwrap(); 3];
    let dims = vec![5; 3];
    let h = HTTensor::from_cp(&random_cp(&specs, 6, 51)).unwrap();
    let dense = ht_dense_oracle(&h);
    let norm = dense_norm(&dense);
    let tr = h.truncate(2, 0.0).unwrap();
    let tree = h.tree();
    let root_right = tree.nodes()[0].children.unwrap()[1];
    let mut tails = Vec::new();
    for t in 1..tree.len() {
        if t == root_right {
            continue;
        }
        let s = matricization_singular_values(&dense, &dims, &tree.nodes()[t].dims);
        tails.push(s[2..].iter().map(|x| x * x).sum::<f64>());
    }
    let est = tails.iter().sum::<f64>().sqrt();
    let actual = dense_norm(&dense.iter().zip(tr.tensor.to_dense()).map(|(a, b)| a - b).collect::<Vec<_>>());
    let max_tail = tails.iter().copied().fold(0.0, f64::max).sqrt();
    let mut err = (tr.error_estimate - est).abs() / norm;
    err = err.max((actual - tr.error_estimate).max(0.0) / norm);
    err = err.max((max_tail - actual).max(0.0) / norm);
    // tolerance mode: the dense error stays within eps·‖h‖
    let eps = 0.05;
    let tr = h.truncate(100, eps).unwrap();
    let actual = dense_norm(&dense.iter().zip(tr.tensor.to_dense()).map(|(a, b)| a - b).collect::<Vec<_>>());
    err.max((actual - eps * norm).max(0.0) / norm)
}

/// One CN step of `∂_t f = −0.5 z ∂_z f` at rank 1 against the dense least-squares solution.
pub fn check_cn_step_1d() -> f64 {
    let spec = BasisSpec::new(7, 3.0).unwrap();
    let specs = vec![spec];
    let l = advection_operator(&DMatrix::from_element(1, 1, 0.5)).unwrap();
    let pair = crank_nicolson_pair(&l, 0.05).unwrap();
    let f0 = CPTensor::rank_one(specs.clone(), vec![spec.project(|z| C64::new((-z * z).exp(), 0.0))]).unwrap();
    let cfg = ALSStepConfig { eps_tol: 1e-13, lsqr_tol: 1e-15, ..Default::default() };
    let mut st = ImplicitStepper::new(&pair, &specs, cfg).unwrap();
    let (f1, _) = st.step(&f0, None).unwrap();
    let (ga, gb) = (gram(&pair.a, &pair.a, &spec), gram(&pair.a, &pair.b, &spec));
    let rhs = gb * DVector::from_iterator(7, f0.factor(0).column(0).iter().copied());
    let want = ga.lu().solve(&rhs).unwrap();
    let got = f1.to_dense();
    max_abs_diff(&got, want.as_slice()) / want.norm()
}

/// `[⟨L φ_s, K φ_h⟩]` by quadrature for one-dimensional operators.
fn gram(l: &SeparableOperator, k: &SeparableOperator, spec: &BasisSpec) -> DMatrix<C64> {
    let q = spec.modes();
    let r = rule(spec);
    let img = |op: &SeparableOperator, h: usize, z: f64| -> C64 {
        op.terms().iter().map(|t| t.alpha * apply_1d(spec, t.factors[0], &unit(spec, h), z)).sum()
    };
    DMatrix::from_fn(q, q, |s, h| r.nodes.iter().zip(&r.weights).map(|(&z, &w)| img(l, s, z).conj() * img(k, h, z) * w).sum())
}
