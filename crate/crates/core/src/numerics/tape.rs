//! Reverse-mode differentiation over 2-D row-major values.
//!
//! Every forward op appends one node; node inputs always precede the node, so
//! a single reverse sweep over the node list visits each op exactly once.

use std::rc::Rc;

use super::linalg::{self, gemm};
use super::params::ModelParams;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Half of `ln(2π)`.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;
/// Half of `ln(2πe)`: the entropy of a unit Gaussian.
pub const HALF_LN_2PI_E: f64 = 1.418_938_533_204_672_7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu {
        x: Var,
        tanh: Vec<f64>,
    },
    Relu(Var),
    Clamp(Var, f64, f64),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Softmax {
        x: Var,
    },
    GatherRows {
        table: Var,
        idx: Rc<[Option<usize>]>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    Sum(Var),
    Mean(Var),
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    GaussianNll {
        mean: Var,
        log_std: Var,
        target: Var,
    },
    GaussianEntropy(Var),
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Boolean attention mask, `rows × cols`, `true` = may attend.
#[derive(Debug, Clone)]
pub struct AttnMask {
    pub rows: usize,
    pub cols: usize,
    pub allowed: Rc<[bool]>,
}

impl AttnMask {
    /// Strictly causal (`j <= i`) and restricted to valid keys.
    pub fn causal(valid: &[bool]) -> Self {
        let n = valid.len();
        let mut allowed = vec![false; n * n];
        for i in 0..n {
            for j in 0..=i {
                allowed[i * n + j] = valid[j];
            }
        }
        AttnMask {
            rows: n,
            cols: n,
            allowed: allowed.into(),
        }
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Leaf gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

/// Leaves created from a [`ModelParams`] collection, in name order.
#[derive(Debug, Clone)]
pub struct ParamVars {
    entries: Vec<(String, Var)>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.entries
            .binary_search_by(|(n, _)| n.as_str().cmp(name))
            .map(|i| self.entries[i].1)
            .map_err(|_| Error::UnknownParameter(name.to_string()))
    }

    /// Flat gradient laid out like [`ModelParams::flat_grads`]; parameters the
    /// loss does not depend on contribute zeros.
    pub fn flat_grads(&self, tape: &Tape, grads: &Gradients) -> Vec<f64> {
        let mut out = Vec::new();
        for (_, v) in &self.entries {
            match grads.get(*v) {
                Some(g) => out.extend_from_slice(g),
                None => out.extend(std::iter::repeat_n(0.0, tape.value(*v).len())),
            }
        }
        out
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.node(v).value[0]
    }

    pub fn leaf(
        &mut self,
        rows: usize,
        cols: usize,
        data: Vec<f64>,
        requires_grad: bool,
    ) -> Result<Var> {
        if rows * cols != data.len() {
            return Err(Error::shape("leaf", &[rows, cols], &[data.len()]));
        }
        Ok(self.push(rows, cols, data, Op::Leaf, requires_grad))
    }

    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var> {
        self.leaf(rows, cols, data, false)
    }

    pub fn tensor(&mut self, t: &Tensor) -> Var {
        let (r, c) = t.rows_cols();
        self.push(r, c, t.data().to_vec(), Op::Leaf, t.requires_grad)
    }

    /// Records every parameter as a differentiable leaf.
    pub fn params(&mut self, params: &ModelParams) -> ParamVars {
        let entries = params
            .iter()
            .map(|(name, t)| {
                let (r, c) = t.rows_cols();
                let v = self.push(r, c, t.data().to_vec(), Op::Leaf, true);
                (name.to_string(), v)
            })
            .collect();
        ParamVars { entries }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, &[sa.0, sa.1], &[sb.0, sb.1]));
        }
        Ok(sa)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((m, k), (k2, n)) = (self.shape(a), self.shape(b));
        if k != k2 {
            return Err(Error::shape("matmul", &[m, k], &[k2, n]));
        }
        let out = linalg::matmul(m, k, n, self.value(a), self.value(b));
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(m, n, out, Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((m, k), (n, k2)) = (self.shape(a), self.shape(b));
        if k != k2 {
            return Err(Error::shape("matmul_nt", &[m, k], &[n, k2]));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a),
            false,
            self.value(b),
            true,
            &mut out,
            0.0,
        );
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(m, n, out, Op::MatMulNt(a, b), ng))
    }

    fn zip(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        mk: Op,
    ) -> Result<Var> {
        let (r, c) = self.same_shape(op, a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| f(*x, *y))
            .collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(r, c, out, mk, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds the `1×cols` row `b` to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let ((r, c), (br, bc)) = (self.shape(x), self.shape(b));
        if br != 1 || bc != c {
            return Err(Error::shape("add_row", &[r, c], &[br, bc]));
        }
        let mut out = self.value(x).to_vec();
        linalg::add_row_inplace(&mut out, self.value(b));
        let ng = self.ng(x) || self.ng(b);
        Ok(self.push(r, c, out, Op::AddRow(x, b), ng))
    }

    /// `x · w + b`
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (r, c) = self.shape(x);
        let out = self.value(x).iter().map(|v| f(*v)).collect();
        let ng = self.ng(x);
        self.push(r, c, out, op, ng)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.map(x, |v| v * s, Op::Scale(x, s))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let xv = self.value(x);
        let tanh: Vec<f64> = xv.iter().map(|v| linalg::gelu_tanh(*v)).collect();
        let out = xv
            .iter()
            .zip(&tanh)
            .map(|(v, t)| linalg::gelu_from_tanh(*v, *t))
            .collect();
        let ng = self.ng(x);
        self.push(r, c, out, Op::Gelu { x, tanh }, ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.map(x, |v| v.clamp(lo, hi), Op::Clamp(x, lo, hi))
    }

    /// Row-wise layer normalization (ε = 1e-5) with learned affine `gamma`, `beta` (`1×cols`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (r, c) = self.shape(x);
        for p in [gamma, beta] {
            if self.shape(p) != (1, c) {
                let s = self.shape(p);
                return Err(Error::shape("layer_norm", &[r, c], &[s.0, s.1]));
            }
        }
        let mut out = vec![0.0; r * c];
        let mut xhat = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        {
            let (xv, g, b) = (self.value(x), self.value(gamma), self.value(beta));
            let ones = vec![1.0; c];
            let zeros = vec![0.0; c];
            for i in 0..r {
                let row = &xv[i * c..(i + 1) * c];
                let (_, rs) =
                    linalg::layer_norm_row(row, &ones, &zeros, &mut xhat[i * c..(i + 1) * c]);
                rstd[i] = rs;
                for j in 0..c {
                    out[i * c + j] = xhat[i * c + j] * g[j] + b[j];
                }
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(
            r,
            c,
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            ng,
        ))
    }

    /// Row-wise, max-subtracted softmax. With a mask, disallowed entries are
    /// exactly zero and fully masked rows are all zeros.
    pub fn softmax(&mut self, x: Var, mask: Option<&AttnMask>) -> Result<Var> {
        let (r, c) = self.shape(x);
        let mut out = self.value(x).to_vec();
        match mask {
            Some(m) => {
                if (m.rows, m.cols) != (r, c) {
                    return Err(Error::shape("softmax", &[r, c], &[m.rows, m.cols]));
                }
                for (i, row) in out.chunks_exact_mut(c).enumerate() {
                    let allowed = &m.allowed[i * c..(i + 1) * c];
                    linalg::softmax_masked_row(row, |j| allowed[j]);
                }
            }
            None => {
                for row in out.chunks_exact_mut(c) {
                    linalg::softmax_masked_row(row, |_| true);
                }
            }
        }
        let ng = self.ng(x);
        Ok(self.push(r, c, out, Op::Softmax { x }, ng))
    }

    /// Selects rows of `table`; `None` yields a zero row.
    pub fn gather_rows(&mut self, table: Var, idx: impl Into<Rc<[Option<usize>]>>) -> Result<Var> {
        let idx: Rc<[Option<usize>]> = idx.into();
        let (r, c) = self.shape(table);
        let mut out = vec![0.0; idx.len() * c];
        {
            let tv = self.value(table);
            for (o, i) in idx.iter().enumerate() {
                if let Some(i) = *i {
                    if i >= r {
                        return Err(Error::shape("gather_rows", &[r, c], &[i]));
                    }
                    out[o * c..(o + 1) * c].copy_from_slice(&tv[i * c..(i + 1) * c]);
                }
            }
        }
        let ng = self.ng(table);
        let n = idx.len();
        Ok(self.push(n, c, out, Op::GatherRows { table, idx }, ng))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(x);
        if start + len > c || len == 0 {
            return Err(Error::shape("slice_cols", &[r, c], &[start, len]));
        }
        let xv = self.value(x);
        let mut out = Vec::with_capacity(r * len);
        for row in xv.chunks_exact(c) {
            out.extend_from_slice(&row[start..start + len]);
        }
        let ng = self.ng(x);
        Ok(self.push(r, len, out, Op::SliceCols { x, start }, ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = self.shape(parts[0]).0;
        let mut total = 0;
        for p in parts {
            let (pr, pc) = self.shape(*p);
            if pr != r {
                return Err(Error::shape("concat_cols", &[r], &[pr]));
            }
            total += pc;
        }
        let mut out = vec![0.0; r * total];
        let mut off = 0;
        for p in parts {
            let (_, pc) = self.shape(*p);
            let pv = self.value(*p);
            for i in 0..r {
                out[i * total + off..i * total + off + pc]
                    .copy_from_slice(&pv[i * pc..(i + 1) * pc]);
            }
            off += pc;
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        Ok(self.push(r, total, out, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let ng = self.ng(x);
        self.push(1, 1, vec![s], Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.iter().sum::<f64>() / v.len() as f64;
        let ng = self.ng(x);
        self.push(1, 1, vec![s], Op::Mean(x), ng)
    }

    /// Inverted dropout with a caller-supplied keep mask (`true` = keep).
    pub fn dropout(&mut self, x: Var, keep: &[bool], p: f64) -> Result<Var> {
        let (r, c) = self.shape(x);
        if keep.len() != r * c {
            return Err(Error::shape("dropout", &[r, c], &[keep.len()]));
        }
        let s = 1.0 / (1.0 - p);
        let mask: Vec<f64> = keep.iter().map(|k| if *k { s } else { 0.0 }).collect();
        let out = self
            .value(x)
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        let ng = self.ng(x);
        Ok(self.push(r, c, out, Op::Dropout { x, mask }, ng))
    }

    /// Σ_i [ log_std_i + ½ln(2π) + ½((x_i − mean_i)/exp(log_std_i))² ] over every entry.
    pub fn gaussian_nll(&mut self, mean: Var, log_std: Var, target: Var) -> Result<Var> {
        self.same_shape("gaussian_nll", mean, log_std)?;
        self.same_shape("gaussian_nll", mean, target)?;
        let (m, ls, x) = (self.value(mean), self.value(log_std), self.value(target));
        let mut s = 0.0;
        for i in 0..m.len() {
            let z = (x[i] - m[i]) * (-ls[i]).exp();
            s += ls[i] + HALF_LN_2PI + 0.5 * z * z;
        }
        let ng = self.ng(mean) || self.ng(log_std) || self.ng(target);
        Ok(self.push(
            1,
            1,
            vec![s],
            Op::GaussianNll {
                mean,
                log_std,
                target,
            },
            ng,
        ))
    }

    /// Σ_i [ log_std_i + ½ln(2πe) ] over every entry.
    pub fn gaussian_entropy(&mut self, log_std: Var) -> Var {
        let s = self.value(log_std).iter().map(|l| l + HALF_LN_2PI_E).sum();
        let ng = self.ng(log_std);
        self.push(1, 1, vec![s], Op::GaussianEntropy(log_std), ng)
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.ng(loss) {
            return Gradients { grads };
        }
        grads[loss.0] = Some(vec![1.0; self.node(loss).value.len()]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.backward_node(node, &g, &mut grads);
            // only leaf gradients are reported; intermediates are released early
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        Gradients { grads }
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.ng(v) {
            return None;
        }
        let n = self.node(v).value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let (r, c) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let n = c;
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.acc(grads, *a) {
                    gemm(m, n, k, g, false, bv, true, ga, 1.0);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    gemm(k, m, n, av, true, g, false, gb, 1.0);
                }
            }
            Op::MatMulNt(a, b) => {
                // y = a bᵀ: da = g b, db = gᵀ a
                let (m, k) = self.shape(*a);
                let n = c;
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.acc(grads, *a) {
                    gemm(m, n, k, g, false, bv, false, ga, 1.0);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    gemm(n, m, k, g, true, av, false, gb, 1.0);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(gv) = self.acc(grads, v) {
                        gv.iter_mut().zip(g).for_each(|(d, s)| *d += s);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(d, s)| *d += s);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    gb.iter_mut().zip(g).for_each(|(d, s)| *d -= s);
                }
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if self.ng(a) {
                    let bv = self.value(b).to_vec();
                    let ga = self.acc(grads, a).unwrap();
                    for i in 0..g.len() {
                        ga[i] += g[i] * bv[i];
                    }
                }
                if self.ng(b) {
                    let av = self.value(a).to_vec();
                    let gb = self.acc(grads, b).unwrap();
                    for i in 0..g.len() {
                        gb[i] += g[i] * av[i];
                    }
                }
            }
            Op::AddRow(x, b) => {
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(d, s)| *d += s);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for row in g.chunks_exact(c) {
                        gb.iter_mut().zip(row).for_each(|(d, s)| *d += s);
                    }
                }
            }
            Op::Scale(x, s) => {
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(d, v)| *d += v * s);
                }
            }
            Op::Gelu { x, tanh } => {
                let xv = self.value(*x);
                if let Some(gx) = self.acc(grads, *x) {
                    for i in 0..g.len() {
                        gx[i] += g[i] * linalg::gelu_grad_from_tanh(xv[i], tanh[i]);
                    }
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                if let Some(gx) = self.acc(grads, *x) {
                    for i in 0..g.len() {
                        if xv[i] > 0.0 {
                            gx[i] += g[i];
                        }
                    }
                }
            }
            Op::Clamp(x, lo, hi) => {
                let xv = self.value(*x);
                if let Some(gx) = self.acc(grads, *x) {
                    for i in 0..g.len() {
                        if xv[i] >= *lo && xv[i] <= *hi {
                            gx[i] += g[i];
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let gam = self.value(*gamma);
                if let Some(gg) = self.acc(grads, *gamma) {
                    for i in 0..r {
                        for j in 0..c {
                            gg[j] += g[i * c + j] * xhat[i * c + j];
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *beta) {
                    for row in g.chunks_exact(c) {
                        gb.iter_mut().zip(row).for_each(|(d, s)| *d += s);
                    }
                }
                if let Some(gx) = self.acc(grads, *x) {
                    let n = c as f64;
                    let mut dxhat = vec![0.0; c];
                    for i in 0..r {
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..c {
                            dxhat[j] = g[i * c + j] * gam[j];
                            m1 += dxhat[j];
                            m2 += dxhat[j] * xhat[i * c + j];
                        }
                        m1 /= n;
                        m2 /= n;
                        for j in 0..c {
                            gx[i * c + j] += rstd[i] * (dxhat[j] - m1 - xhat[i * c + j] * m2);
                        }
                    }
                }
            }
            Op::Softmax { x } => {
                let y = &node.value;
                if let Some(gx) = self.acc(grads, *x) {
                    for i in 0..r {
                        let yr = &y[i * c..(i + 1) * c];
                        let gr = &g[i * c..(i + 1) * c];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            gx[i * c + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::GatherRows { table, idx } => {
                if let Some(gt) = self.acc(grads, *table) {
                    for (o, i) in idx.iter().enumerate() {
                        if let Some(i) = *i {
                            for j in 0..c {
                                gt[i * c + j] += g[o * c + j];
                            }
                        }
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let (_, xc) = self.shape(*x);
                if let Some(gx) = self.acc(grads, *x) {
                    for i in 0..r {
                        for j in 0..c {
                            gx[i * xc + start + j] += g[i * c + j];
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let (_, pc) = self.shape(*p);
                    if let Some(gp) = self.acc(grads, *p) {
                        for i in 0..r {
                            for j in 0..pc {
                                gp[i * pc + j] += g[i * c + off + j];
                            }
                        }
                    }
                    off += pc;
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    let s = g[0] / gx.len() as f64;
                    gx.iter_mut().for_each(|d| *d += s);
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(gx) = self.acc(grads, *x) {
                    for i in 0..g.len() {
                        gx[i] += g[i] * mask[i];
                    }
                }
            }
            Op::GaussianNll {
                mean,
                log_std,
                target,
            } => {
                let (m, ls, x) = (self.value(*mean), self.value(*log_std), self.value(*target));
                let n = m.len();
                // z = (x - m) / σ; d/dm = -z/σ, d/dlogσ = 1 - z², d/dx = z/σ
                let mut zs = Vec::with_capacity(n);
                for i in 0..n {
                    let inv = (-ls[i]).exp();
                    zs.push(((x[i] - m[i]) * inv, inv));
                }
                if let Some(gm) = self.acc(grads, *mean) {
                    for i in 0..n {
                        gm[i] -= g[0] * zs[i].0 * zs[i].1;
                    }
                }
                if let Some(gl) = self.acc(grads, *log_std) {
                    for i in 0..n {
                        gl[i] += g[0] * (1.0 - zs[i].0 * zs[i].0);
                    }
                }
                if let Some(gx) = self.acc(grads, *target) {
                    for i in 0..n {
                        gx[i] += g[0] * zs[i].0 * zs[i].1;
                    }
                }
            }
            Op::GaussianEntropy(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
        }
    }
}
