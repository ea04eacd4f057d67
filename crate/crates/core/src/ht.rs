//! Hierarchical Tucker tensors on a balanced binary dimension tree.
//!
//! Leaves hold `Q × k` frames. An interior node `t` with children `l`, `r`
//! holds a transfer matrix of shape `(k_l·k_r) × k_t`, row `a + k_l·b`, so that
//! its implicit frame is `U_t = (U_r ⊗ U_l) B_t`. The root has `k = 1` and its
//! frame is the whole coefficient tensor.

use nalgebra::DMatrix;

use crate::basis::{BasisSpec, C64};
use crate::cp::CPTensor;
use crate::error::{Error, Result};
use crate::operator::SeparableOperator;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeNode {
    pub dims: Vec<usize>,
    pub children: Option<[usize; 2]>,
    pub parent: Option<usize>,
}

/// Nodes are stored in preorder, so every child has a larger index than its parent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DimensionTree {
    nodes: Vec<TreeNode>,
}

impl DimensionTree {
    /// Splits `{0..N}` recursively into a left part of `⌊n/2⌋` and a right part of `⌈n/2⌉` dims.
    pub fn balanced(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::ShapeMismatch("tree needs at least one dimension".into()));
        }
        let mut nodes = Vec::new();
        fn build(nodes: &mut Vec<TreeNode>, dims: Vec<usize>, parent: Option<usize>) -> usize {
            let id = nodes.len();
            nodes.push(TreeNode { dims: dims.clone(), children: None, parent });
            if dims.len() > 1 {
                let split = dims.len() / 2;
                let l = build(nodes, dims[..split].to_vec(), Some(id));
                let r = build(nodes, dims[split..].to_vec(), Some(id));
                nodes[id].children = Some([l, r]);
            }
            id
        }
        build(&mut nodes, (0..n).collect(), None);
        Ok(Self { nodes })
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn ndims(&self) -> usize {
        self.nodes[0].dims.len()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_leaf(&self, t: usize) -> bool {
        self.nodes[t].children.is_none()
    }

    /// Leaf node index holding dimension `k`.
    pub fn leaf_of(&self, k: usize) -> usize {
        self.nodes
            .iter()
            .position(|n| n.children.is_none() && n.dims[0] == k)
            .expect("every dimension has a leaf")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HTTensor {
    specs: Vec<BasisSpec>,
    tree: DimensionTree,
    /// Leaf frame or transfer matrix, indexed like the tree nodes.
    data: Vec<DMatrix<C64>>,
}

#[derive(Debug, Clone)]
pub struct Truncation {
    pub tensor: HTTensor,
    /// `sqrt(Σ discarded σ²)` over the distinct node matricizations.
    pub error_estimate: f64,
    pub norm: f64,
}

impl HTTensor {
    /// Validates shapes and assembles a tensor from per-node data (preorder).
    pub fn from_parts(specs: Vec<BasisSpec>, tree: DimensionTree, data: Vec<DMatrix<C64>>) -> Result<Self> {
        if tree.ndims() != specs.len() || data.len() != tree.len() {
            return Err(Error::ShapeMismatch("tree, specs and node data disagree".into()));
        }
        for (t, node) in tree.nodes().iter().enumerate() {
            let m = &data[t];
            match node.children {
                None => {
                    if m.nrows() != specs[node.dims[0]].modes() {
                        return Err(Error::ShapeMismatch(format!("leaf {t} frame has {} rows", m.nrows())));
                    }
                }
                Some([l, r]) => {
                    if m.nrows() != data[l].ncols() * data[r].ncols() {
                        return Err(Error::ShapeMismatch(format!("transfer tensor {t} has {} rows", m.nrows())));
                    }
                }
            }
            if node.parent.is_none() && m.ncols() != 1 {
                return Err(Error::ShapeMismatch("root rank must be 1".into()));
            }
            if m.ncols() == 0 {
                return Err(Error::InvalidRank(0));
            }
            if m.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
                return Err(Error::InvalidState(format!("non-finite entry at node {t}")));
            }
        }
        Ok(Self { specs, tree, data })
    }

    /// Exact conversion with diagonal transfer tensors.
    pub fn from_cp(f: &CPTensor) -> Result<Self> {
        let tree = DimensionTree::balanced(f.ndims())?;
        let r = f.rank();
        let data = tree
            .nodes()
            .iter()
            .map(|node| match node.children {
                None => {
                    let u = f.factor(node.dims[0]).clone();
                    if node.parent.is_none() {
                        DMatrix::from_fn(u.nrows(), 1, |s, _| u.row(s).sum())
                    } else {
                        u
                    }
                }
                Some(_) => {
                    let cols = if node.parent.is_none() { 1 } else { r };
                    DMatrix::from_fn(r * r, cols, |row, j| {
                        let (a, b) = (row % r, row / r);
                        if a == b && (cols == 1 || a == j) {
                            C64::new(1.0, 0.0)
                        } else {
                            C64::new(0.0, 0.0)
                        }
                    })
                }
            })
            .collect();
        Self::from_parts(f.specs().to_vec(), tree, data)
    }

    pub fn zeros(specs: Vec<BasisSpec>) -> Result<Self> {
        Self::from_cp(&CPTensor::zeros(specs, 1)?)
    }

    pub fn specs(&self) -> &[BasisSpec] {
        &self.specs
    }

    pub fn tree(&self) -> &DimensionTree {
        &self.tree
    }

    pub fn ndims(&self) -> usize {
        self.specs.len()
    }

    pub fn node_data(&self) -> &[DMatrix<C64>] {
        &self.data
    }

    pub fn node_ranks(&self) -> Vec<usize> {
        self.data.iter().map(|m| m.ncols()).collect()
    }

    pub fn max_rank(&self) -> usize {
        self.node_ranks().into_iter().skip(1).max().unwrap_or(1)
    }

    /// Number of stored coefficients.
    pub fn storage(&self) -> usize {
        self.data.iter().map(|m| m.len()).sum()
    }

    fn check_compatible(&self, other: &HTTensor) -> Result<()> {
        if self.specs != other.specs || self.tree != other.tree {
            return Err(Error::ShapeMismatch("tensors live on different bases or trees".into()));
        }
        Ok(())
    }

    pub fn evaluate(&self, z: &[f64]) -> Result<C64> {
        if z.len() != self.ndims() {
            return Err(Error::ShapeMismatch(format!(
                "point has {} coordinates, tensor has {} dimensions",
                z.len(),
                self.ndims()
            )));
        }
        let mut vals: Vec<Vec<C64>> = vec![Vec::new(); self.tree.len()];
        for t in (0..self.tree.len()).rev() {
            let m = &self.data[t];
            vals[t] = match self.tree.nodes()[t].children {
                None => {
                    let k = self.tree.nodes()[t].dims[0];
                    let phi = self.specs[k].eval_all(z[k]);
                    (0..m.ncols()).map(|j| m.column(j).iter().zip(&phi).map(|(c, p)| c * p).sum()).collect()
                }
                Some([l, r]) => {
                    let (ul, ur) = (&vals[l], &vals[r]);
                    let kl = ul.len();
                    (0..m.ncols())
                        .map(|j| {
                            m.column(j)
                                .iter()
                                .enumerate()
                                .map(|(row, c)| c * ul[row % kl] * ur[row / kl])
                                .sum()
                        })
                        .collect()
                }
            };
        }
        Ok(vals[0][0])
    }

    /// Frames of every node as explicit matrices over the node's dims (lower dims fastest).
    fn dense_frames(&self) -> Vec<DMatrix<C64>> {
        let mut frames: Vec<DMatrix<C64>> = vec![DMatrix::zeros(0, 0); self.tree.len()];
        for t in (0..self.tree.len()).rev() {
            frames[t] = match self.tree.nodes()[t].children {
                None => self.data[t].clone(),
                Some([l, r]) => frames[r].kronecker(&frames[l]) * &self.data[t],
            };
        }
        frames
    }

    /// Full coefficient tensor, first dimension fastest.
    pub fn to_dense(&self) -> Vec<C64> {
        self.dense_frames()[0].as_slice().to_vec()
    }

    /// `∫ conj(self) · other`.
    pub fn inner_product(&self, other: &HTTensor) -> Result<C64> {
        self.check_compatible(other)?;
        let mut g: Vec<DMatrix<C64>> = vec![DMatrix::zeros(0, 0); self.tree.len()];
        for t in (0..self.tree.len()).rev() {
            g[t] = match self.tree.nodes()[t].children {
                None => self.data[t].adjoint() * &other.data[t],
                Some([l, r]) => self.data[t].adjoint() * kron_apply(&g[l], &g[r], &other.data[t]),
            };
        }
        Ok(g[0][(0, 0)])
    }

    pub fn norm(&self) -> f64 {
        self.inner_product(self).map(|v| v.re.max(0.0).sqrt()).unwrap_or(0.0)
    }

    pub fn scale(&self, a: C64) -> HTTensor {
        let mut out = self.clone();
        out.data[0] *= a;
        out
    }

    pub fn add(&self, other: &HTTensor) -> Result<HTTensor> {
        HTTensor::sum(&[self.clone(), other.clone()])
    }

    /// `a·self + b·other`.
    pub fn scaled_sum(&self, a: C64, other: &HTTensor, b: C64) -> Result<HTTensor> {
        HTTensor::sum(&[self.scale(a), other.scale(b)])
    }

    /// Block-diagonal concatenation of all operands; node ranks add up.
    pub fn sum(items: &[HTTensor]) -> Result<HTTensor> {
        let first = items.first().ok_or_else(|| Error::InvalidParameter("empty sum".into()))?;
        for h in &items[1..] {
            first.check_compatible(h)?;
        }
        let tree = &first.tree;
        let mut data = Vec::with_capacity(tree.len());
        for (t, node) in tree.nodes().iter().enumerate() {
            let is_root = node.parent.is_none();
            match node.children {
                None => {
                    let rows = first.data[t].nrows();
                    if is_root {
                        let mut m = DMatrix::zeros(rows, 1);
                        for h in items {
                            m += &h.data[t];
                        }
                        data.push(m);
                    } else {
                        let cols: usize = items.iter().map(|h| h.data[t].ncols()).sum();
                        let mut m = DMatrix::zeros(rows, cols);
                        let mut off = 0;
                        for h in items {
                            let c = h.data[t].ncols();
                            m.columns_mut(off, c).copy_from(&h.data[t]);
                            off += c;
                        }
                        data.push(m);
                    }
                }
                Some([l, r]) => {
                    let kl: usize = items.iter().map(|h| h.data[l].ncols()).sum();
                    let kr: usize = items.iter().map(|h| h.data[r].ncols()).sum();
                    let kt: usize = if is_root { 1 } else { items.iter().map(|h| h.data[t].ncols()).sum() };
                    let mut m = DMatrix::zeros(kl * kr, kt);
                    let (mut ol, mut or, mut ot) = (0, 0, 0);
                    for h in items {
                        let b = &h.data[t];
                        let hl = h.data[l].ncols();
                        for j in 0..b.ncols() {
                            for (row, c) in b.column(j).iter().enumerate() {
                                let (a, bb) = (row % hl, row / hl);
                                m[((ol + a) + kl * (or + bb), ot + j)] += c;
                            }
                        }
                        ol += hl;
                        or += h.data[r].ncols();
                        if !is_root {
                            ot += b.ncols();
                        }
                    }
                    data.push(m);
                }
            }
        }
        HTTensor::from_parts(first.specs.clone(), tree.clone(), data)
    }

    /// `Σ_q α_q (L_1^q ⊗ ⋯ ⊗ L_N^q) h`, applied leaf by leaf and summed.
    pub fn apply_operator(&self, l: &SeparableOperator) -> Result<HTTensor> {
        if l.ndims() != self.ndims() {
            return Err(Error::ShapeMismatch(format!(
                "operator has {} dimensions, tensor has {}",
                l.ndims(),
                self.ndims()
            )));
        }
        let mut parts = Vec::with_capacity(l.separation_rank());
        for term in l.terms() {
            let mut h = self.clone();
            for (k, &kind) in term.factors.iter().enumerate() {
                if kind != crate::basis::FactorKind::Identity {
                    let leaf = self.tree.leaf_of(k);
                    h.data[leaf] = self.specs[k].factor_matrix(kind) * &h.data[leaf];
                }
            }
            h.data[0] *= term.alpha;
            parts.push(h);
        }
        HTTensor::sum(&parts)
    }

    /// QR from the leaves up: every non-root frame gets orthonormal columns.
    pub fn orthogonalize(&self) -> HTTensor {
        let mut data = self.data.clone();
        let nodes = self.tree.nodes();
        for t in (1..self.tree.len()).rev() {
            let qr = data[t].clone().qr();
            let (q, r) = (qr.q(), qr.r());
            data[t] = q;
            let p = nodes[t].parent.expect("non-root");
            let [cl, cr] = nodes[p].children.expect("parent is interior");
            let nb = if t == cl {
                let kr = data[cr].ncols();
                kron_apply(&r, &DMatrix::identity(kr, kr), &data[p])
            } else {
                let kl = data[cl].ncols();
                kron_apply(&DMatrix::identity(kl, kl), &r, &data[p])
            };
            data[p] = nb;
        }
        HTTensor { specs: self.specs.clone(), tree: self.tree.clone(), data }
    }

    /// Hierarchical SVD truncation: node ranks at most `r_max`, and the total
    /// discarded weight at most `eps·‖h‖`, split evenly over the `2N−3` distinct nodes.
    pub fn truncate(&self, r_max: usize, eps: f64) -> Result<Truncation> {
        if r_max == 0 {
            return Err(Error::InvalidRank(0));
        }
        if !(eps >= 0.0) {
            return Err(Error::InvalidParameter("eps must be non-negative".into()));
        }
        let h = self.orthogonalize();
        let norm = h.data[0].norm();
        let n = self.ndims();
        let nodes = self.tree.nodes();
        if n == 1 {
            return Ok(Truncation { tensor: h, error_estimate: 0.0, norm });
        }
        let node_tol2 = eps * eps * norm * norm / (2 * n - 3) as f64;
        // square-root Gramians, top down
        let mut sqrt_g: Vec<DMatrix<C64>> = vec![DMatrix::zeros(0, 0); nodes.len()];
        sqrt_g[0] = DMatrix::from_element(1, 1, C64::new(1.0, 0.0));
        for t in 0..nodes.len() {
            let Some([l, r]) = nodes[t].children else { continue };
            let b = &h.data[t];
            let (kl, kr) = (h.data[l].ncols(), h.data[r].ncols());
            let bs = b * &sqrt_g[t];
            let m = bs.ncols();
            let mut sl = DMatrix::zeros(kl, kr * m);
            let mut sr = DMatrix::zeros(kr, kl * m);
            for c in 0..m {
                for row in 0..kl * kr {
                    let (a, bb) = (row % kl, row / kl);
                    sl[(a, bb * m + c)] = bs[(row, c)];
                    sr[(bb, a * m + c)] = bs[(row, c)];
                }
            }
            sqrt_g[l] = compress(sl);
            sqrt_g[r] = compress(sr);
        }
        let root_right = nodes[0].children.map(|c| c[1]);
        let mut proj: Vec<Option<DMatrix<C64>>> = vec![None; nodes.len()];
        let mut discarded = 0.0;
        for t in 1..nodes.len() {
            let svd = sqrt_g[t].clone().svd(true, false);
            let u = svd.u.expect("requested");
            let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
            order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
            let sig: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
            let k_t = h.data[t].ncols();
            let mut keep = sig.len().min(r_max).max(1);
            let mut tail: f64 = sig[keep..].iter().map(|s| s * s).sum();
            while keep > 1 && tail + sig[keep - 1] * sig[keep - 1] <= node_tol2 {
                keep -= 1;
                tail += sig[keep] * sig[keep];
            }
            let keep = keep.min(k_t);
            if Some(t) != root_right {
                discarded += tail;
            }
            proj[t] = Some(DMatrix::from_fn(k_t, keep, |i, j| if j < u.ncols() { u[(i, order[j])] } else { C64::new(0.0, 0.0) }));
        }
        let mut data = Vec::with_capacity(nodes.len());
        for (t, node) in nodes.iter().enumerate() {
            let w_t = proj[t].as_ref();
            let m = match node.children {
                None => &h.data[t] * w_t.expect("leaf is non-root"),
                Some([l, r]) => {
                    let (wl, wr) = (proj[l].as_ref().expect("child"), proj[r].as_ref().expect("child"));
                    let b = match w_t {
                        Some(w) => &h.data[t] * w,
                        None => h.data[t].clone(),
                    };
                    kron_apply(&wl.adjoint(), &wr.adjoint(), &b)
                }
            };
            data.push(m);
        }
        let tensor = HTTensor::from_parts(self.specs.clone(), self.tree.clone(), data)?;
        Ok(Truncation { tensor, error_estimate: discarded.sqrt(), norm })
    }
}

/// `(G_r ⊗ G_l) B` without forming the Kronecker product: column `j` of `B`
/// is reshaped to `k_l × k_r` and mapped to `G_l X G_rᵀ`.
fn kron_apply(gl: &DMatrix<C64>, gr: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    let (kl, kr) = (gl.ncols(), gr.ncols());
    debug_assert_eq!(b.nrows(), kl * kr);
    let (ml, mr) = (gl.nrows(), gr.nrows());
    let grt = gr.transpose();
    let mut out = DMatrix::zeros(ml * mr, b.ncols());
    for j in 0..b.ncols() {
        let x = DMatrix::from_column_slice(kl, kr, b.column(j).as_slice());
        let y = gl * x * &grt;
        out.column_mut(j).copy_from_slice(y.as_slice());
    }
    out
}

/// Replaces a wide factor `S` by a square one with the same `S Sᴴ`.
fn compress(s: DMatrix<C64>) -> DMatrix<C64> {
    if s.ncols() <= s.nrows() {
        return s;
    }
    let svd = s.svd(true, false);
    let u = svd.u.expect("requested");
    let k = svd.singular_values.len();
    DMatrix::from_fn(u.nrows(), k, |i, j| u[(i, j)] * svd.singular_values[j])
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_cp(n: usize, q: usize, r: usize, seed: u64) -> CPTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let specs = vec![BasisSpec::new(q, 1.5).unwrap(); n];
        let f = specs
            .iter()
            .map(|s| {
                DMatrix::from_fn(s.modes(), r, |_, _| {
                    C64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))
                })
            })
            .collect();
        CPTensor::from_factors(specs, f).unwrap()
    }

    #[test]
    fn tree_layout_six() {
        let t = DimensionTree::balanced(6).unwrap();
        let dims: Vec<Vec<usize>> = t.nodes().iter().map(|n| n.dims.clone()).collect();
        assert_eq!(dims[1], vec![0, 1, 2]);
        assert_eq!(dims[2], vec![0]);
        assert_eq!(dims[3], vec![1, 2]);
        assert_eq!(t.len(), 11);
        assert_eq!(DimensionTree::balanced(1).unwrap().len(), 1);
    }

    #[test]
    fn from_cp_matches_dense() {
        for n in 1..=4 {
            let f = random_cp(n, 3, 2, n as u64);
            let h = HTTensor::from_cp(&f).unwrap();
            let a = f.to_dense();
            let b = h.to_dense();
            let d: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
            assert!(d < 1e-12, "n={n} d={d}");
            assert!((h.norm() - f.norm()).abs() < 1e-10 * f.norm());
        }
    }

    #[test]
    fn rank_one_ranks() {
        let f = random_cp(5, 3, 1, 3);
        let h = HTTensor::from_cp(&f).unwrap();
        assert!(h.node_ranks().iter().all(|&k| k == 1));
    }

    #[test]
    fn orthogonalize_keeps_values() {
        let f = random_cp(4, 5, 3, 7);
        let h = HTTensor::from_cp(&f).unwrap();
        let o = h.orthogonalize();
        for t in 1..o.tree().len() {
            let m = &o.node_data()[t];
            let g = m.adjoint() * m;
            assert!((g - DMatrix::<C64>::identity(m.ncols(), m.ncols())).norm() < 1e-10);
        }
        let z = [0.1, -0.4, 1.2, 0.7];
        assert!((o.evaluate(&z).unwrap() - h.evaluate(&z).unwrap()).norm() < 1e-10);
    }

    #[test]
    fn cancellation_truncates_to_zero() {
        let f = random_cp(3, 5, 2, 11);
        let h = HTTensor::from_cp(&f).unwrap();
        let d = h.scaled_sum(C64::new(1.0, 0.0), &h, C64::new(-1.0, 0.0)).unwrap();
        let t = d.truncate(1, 0.0).unwrap();
        assert!(t.tensor.norm() < 1e-10);
    }

    #[test]
    fn single_leaf_is_expansion() {
        let spec = BasisSpec::new(5, 2.0).unwrap();
        let v = DVector::from_fn(5, |i, _| C64::new(i as f64, 0.5));
        let f = CPTensor::rank_one(vec![spec.clone()], vec![v.clone()]).unwrap();
        let h = HTTensor::from_cp(&f).unwrap();
        let want = spec.eval_expansion(v.as_slice(), 0.3);
        assert!((h.evaluate(&[0.3]).unwrap() - want).norm() < 1e-14);
    }
}
