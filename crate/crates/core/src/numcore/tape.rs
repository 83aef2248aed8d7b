//! Reverse-mode differentiation over a recorded operation graph.
//!
//! A [`Tape`] borrows a [`ParamSet`] read-only, records every operation of a
//! forward pass, and [`Tape::backward`] walks the record in reverse to produce
//! one gradient matrix per parameter. Tapes are cheap and meant to be built
//! per example, so a batch can be differentiated on several threads against
//! the same parameters.

use serde::{Deserialize, Serialize};

use super::mat::{matmul_acc, matmul_nt_acc, matmul_tn_acc, Mat};
use crate::error::{Error, Result};

/// Pre-activations of `sigmoid` and `exp` are clamped to this range.
pub const ACTIVATION_CLAMP: f64 = 30.0;
/// Lower bound applied to every probability before taking its log.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Mat,
}

/// Named, ordered collection of trainable matrices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        self.params.push(Param { name: name.into(), value });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&self) -> Grads {
        Grads { mats: self.params.iter().map(|p| Mat::zeros(p.value.rows(), p.value.cols())).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }
}

/// Gradients aligned with a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    mats: Vec<Mat>,
}

impl Grads {
    pub fn get(&self, id: ParamId) -> &Mat {
        &self.mats[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.mats[id.0]
    }

    pub fn len(&self) -> usize {
        self.mats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mats.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Mat> {
        self.mats.iter()
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.mats.iter_mut().zip(&other.mats) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.mats.iter_mut().for_each(|m| m.scale_assign(s));
    }

    pub fn is_finite(&self) -> bool {
        self.mats.iter().all(Mat::is_finite)
    }
}

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    OneMinus(Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Mask(Var, Vec<f64>),
    HCat(Vec<Var>),
    VCat(Vec<Var>),
    Transpose(Var),
    SoftmaxRow(Var),
    Row(Var, usize),
    Sum(Vec<Var>),
    Bce { probs: Var, target: Vec<f64> },
    WeibullNll { alpha: Var, beta: Var, y: Vec<f64>, u: Vec<f64> },
    SoftmaxCe { logits: Var, target: usize },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Mul(..) => "mul",
            Op::OneMinus(_) => "one_minus",
            Op::Scale(..) => "scale",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Exp(_) => "exp",
            Op::Mask(..) => "dropout",
            Op::HCat(_) => "hcat",
            Op::VCat(_) => "vcat",
            Op::Transpose(_) => "transpose",
            Op::SoftmaxRow(_) => "softmax",
            Op::Row(..) => "row",
            Op::Sum(_) => "sum",
            Op::Bce { .. } => "bce",
            Op::WeibullNll { .. } => "weibull_nll",
            Op::SoftmaxCe { .. } => "softmax_ce",
        }
    }
}

struct Node {
    op: Op,
    // `None` for parameters: their value lives in the borrowed ParamSet.
    value: Option<Mat>,
}

pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
    overflow: Option<&'static str>,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    let x = x.clamp(-ACTIVATION_CLAMP, ACTIVATION_CLAMP);
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn clamped_exp(x: f64) -> f64 {
    x.clamp(-ACTIVATION_CLAMP, ACTIVATION_CLAMP).exp()
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Tape { params, nodes: Vec::with_capacity(256), param_nodes: vec![None; params.len()], overflow: None }
    }

    pub fn params(&self) -> &ParamSet {
        self.params
    }

    pub fn value(&self, v: Var) -> &Mat {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    /// Errors if any recorded operation produced NaN or infinity.
    pub fn ensure_finite(&self) -> Result<()> {
        match self.overflow {
            Some(op) => Err(Error::NumericOverflow(op.to_string())),
            None => Ok(()),
        }
    }

    fn push(&mut self, op: Op, value: Mat) -> Var {
        if self.overflow.is_none() && !value.is_finite() {
            self.overflow = Some(op.name());
        }
        self.nodes.push(Node { op, value: Some(value) });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Mat) -> Var {
        self.push(Op::Input, value)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        self.nodes.push(Node { op: Op::Param(id), value: None });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.cols(), vb.rows(), "matmul shape mismatch");
        let mut out = Mat::zeros(va.rows(), vb.cols());
        matmul_acc(va, vb, &mut out);
        self.push(Op::MatMul(a, b), out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(Op::Add(a, b), out)
    }

    /// `a (r x c) + b (1 x c)`, broadcasting `b` over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(vb.rows(), 1);
        assert_eq!(va.cols(), vb.cols());
        let mut out = va.clone();
        let c = va.cols();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += vb.data()[i % c];
        }
        self.push(Op::AddRow(a, b), out)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(Op::Mul(a, b), out)
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| 1.0 - x);
        self.push(Op::OneMinus(a), out)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(Op::Scale(a, s), out)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), out)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), out)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), out)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(clamped_exp);
        self.push(Op::Exp(a), out)
    }

    /// Multiplies element-wise by a fixed mask (inverted dropout).
    pub fn mask(&mut self, a: Var, mask: Vec<f64>) -> Var {
        let va = self.value(a);
        assert_eq!(va.len(), mask.len());
        let out = Mat::from_vec(va.rows(), va.cols(), va.data().iter().zip(&mask).map(|(x, m)| x * m).collect())
            .expect("mask shape");
        self.push(Op::Mask(a, mask), out)
    }

    /// Column-wise concatenation of nodes with equal row counts.
    pub fn hcat(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Mat::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let vp = self.value(p);
                assert_eq!(vp.rows(), rows, "hcat row mismatch");
                for c in 0..vp.cols() {
                    out.set(r, offset + c, vp.get(r, c));
                }
                offset += vp.cols();
            }
        }
        self.push(Op::HCat(parts.to_vec()), out)
    }

    /// Row-wise stacking of nodes with equal column counts.
    pub fn vcat(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let vp = self.value(p);
            assert_eq!(vp.cols(), cols, "vcat column mismatch");
            data.extend_from_slice(vp.data());
            rows += vp.rows();
        }
        let out = Mat::from_vec(rows, cols, data).expect("vcat shape");
        self.push(Op::VCat(parts.to_vec()), out)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(Op::Transpose(a), out)
    }

    /// Softmax over each row.
    pub fn softmax_row(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let mut out = va.clone();
        let c = va.cols();
        for row in out.data_mut().chunks_mut(c) {
            softmax_in_place(row);
        }
        self.push(Op::SoftmaxRow(a), out)
    }

    pub fn row(&mut self, a: Var, r: usize) -> Var {
        let out = Mat::row(self.value(a).row_slice(r).to_vec());
        self.push(Op::Row(a, r), out)
    }

    /// Element-wise sum of same-shape nodes.
    pub fn sum(&mut self, parts: &[Var]) -> Var {
        let mut out = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            out.add_assign(self.value(p));
        }
        self.push(Op::Sum(parts.to_vec()), out)
    }

    /// Summed binary cross-entropy of probabilities against a 0/1 target.
    pub fn bce(&mut self, probs: Var, target: Vec<f64>) -> Var {
        let loss = bce_value(self.value(probs).data(), &target);
        self.push(Op::Bce { probs, target }, Mat::scalar(loss))
    }

    /// Censored discrete-Weibull negative log-likelihood summed over items.
    pub fn weibull_nll(&mut self, alpha: Var, beta: Var, y: Vec<f64>, u: Vec<f64>) -> Var {
        let (a, b) = (self.value(alpha).data(), self.value(beta).data());
        let loss: f64 = (0..a.len()).map(|k| weibull_item_nll(a[k], b[k], y[k], u[k]).0).sum();
        self.push(Op::WeibullNll { alpha, beta, y, u }, Mat::scalar(loss))
    }

    /// Categorical cross-entropy of a logit row against a class index.
    pub fn softmax_ce(&mut self, logits: Var, target: usize) -> Var {
        let z = self.value(logits).data();
        let loss = log_sum_exp(z) - z[target];
        self.push(Op::SoftmaxCe { logits, target }, Mat::scalar(loss))
    }

    /// Gradients of the scalar `loss` with respect to every parameter.
    /// Parameters the loss does not depend on get zero gradients.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::scalar(1.0));
        let mut out = self.params.zero_grads();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => out.get_mut(*id).add_assign(&g),
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let ga = slot(&mut grads, *a, va);
                    matmul_nt_acc(&g, vb, ga);
                    let gb = slot(&mut grads, *b, vb);
                    matmul_tn_acc(va, &g, gb);
                }
                Op::Add(a, b) => {
                    slot(&mut grads, *a, self.value(*a)).add_assign(&g);
                    slot(&mut grads, *b, self.value(*b)).add_assign(&g);
                }
                Op::AddRow(a, b) => {
                    slot(&mut grads, *a, self.value(*a)).add_assign(&g);
                    let gb = slot(&mut grads, *b, self.value(*b));
                    let c = g.cols();
                    for (i, v) in g.data().iter().enumerate() {
                        gb.data_mut()[i % c] += v;
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let ga = slot(&mut grads, *a, va);
                    for ((o, gv), bv) in ga.data_mut().iter_mut().zip(g.data()).zip(vb.data()) {
                        *o += gv * bv;
                    }
                    let gb = slot(&mut grads, *b, vb);
                    for ((o, gv), av) in gb.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                        *o += gv * av;
                    }
                }
                Op::OneMinus(a) => {
                    let ga = slot(&mut grads, *a, self.value(*a));
                    for (o, gv) in ga.data_mut().iter_mut().zip(g.data()) {
                        *o -= gv;
                    }
                }
                Op::Scale(a, s) => {
                    let ga = slot(&mut grads, *a, self.value(*a));
                    for (o, gv) in ga.data_mut().iter_mut().zip(g.data()) {
                        *o += s * gv;
                    }
                }
                Op::Sigmoid(a) => {
                    let x = self.value(*a);
                    let y = node.value.as_ref().unwrap();
                    let ga = slot(&mut grads, *a, x);
                    for (((o, gv), xv), yv) in ga.data_mut().iter_mut().zip(g.data()).zip(x.data()).zip(y.data()) {
                        if xv.abs() <= ACTIVATION_CLAMP {
                            *o += gv * yv * (1.0 - yv);
                        }
                    }
                }
                Op::Tanh(a) => {
                    let y = node.value.as_ref().unwrap();
                    let ga = slot(&mut grads, *a, self.value(*a));
                    for ((o, gv), yv) in ga.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *o += gv * (1.0 - yv * yv);
                    }
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let ga = slot(&mut grads, *a, x);
                    for ((o, gv), xv) in ga.data_mut().iter_mut().zip(g.data()).zip(x.data()) {
                        if *xv > 0.0 {
                            *o += gv;
                        }
                    }
                }
                Op::Exp(a) => {
                    let x = self.value(*a);
                    let y = node.value.as_ref().unwrap();
                    let ga = slot(&mut grads, *a, x);
                    for (((o, gv), xv), yv) in ga.data_mut().iter_mut().zip(g.data()).zip(x.data()).zip(y.data()) {
                        if xv.abs() <= ACTIVATION_CLAMP {
                            *o += gv * yv;
                        }
                    }
                }
                Op::Mask(a, m) => {
                    let ga = slot(&mut grads, *a, self.value(*a));
                    for ((o, gv), mv) in ga.data_mut().iter_mut().zip(g.data()).zip(m) {
                        *o += gv * mv;
                    }
                }
                Op::HCat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let vp = self.value(p);
                        let (rows, cols) = vp.shape();
                        let gp = slot(&mut grads, p, vp);
                        for r in 0..rows {
                            for c in 0..cols {
                                let cur = gp.get(r, c);
                                gp.set(r, c, cur + g.get(r, offset + c));
                            }
                        }
                        offset += cols;
                    }
                }
                Op::VCat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let vp = self.value(p);
                        let n = vp.len();
                        let gp = slot(&mut grads, p, vp);
                        for (o, gv) in gp.data_mut().iter_mut().zip(&g.data()[offset..offset + n]) {
                            *o += gv;
                        }
                        offset += n;
                    }
                }
                Op::Transpose(a) => {
                    slot(&mut grads, *a, self.value(*a)).add_assign(&g.transpose());
                }
                Op::SoftmaxRow(a) => {
                    let y = node.value.as_ref().unwrap();
                    let c = y.cols();
                    let ga = slot(&mut grads, *a, self.value(*a));
                    for r in 0..y.rows() {
                        let yr = &y.data()[r * c..(r + 1) * c];
                        let gr = &g.data()[r * c..(r + 1) * c];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            ga.data_mut()[r * c + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
                Op::Row(a, r) => {
                    let ga = slot(&mut grads, *a, self.value(*a));
                    let c = ga.cols();
                    for (j, gv) in g.data().iter().enumerate() {
                        ga.data_mut()[r * c + j] += gv;
                    }
                }
                Op::Sum(parts) => {
                    for &p in parts {
                        slot(&mut grads, p, self.value(p)).add_assign(&g);
                    }
                }
                Op::Bce { probs, target } => {
                    let scale = g.as_scalar();
                    let p = self.value(*probs);
                    let gp = slot(&mut grads, *probs, p);
                    for ((o, &pv), &t) in gp.data_mut().iter_mut().zip(p.data()).zip(target) {
                        if pv > LOG_FLOOR && pv < 1.0 - LOG_FLOOR {
                            *o += scale * (-t / pv + (1.0 - t) / (1.0 - pv));
                        }
                    }
                }
                Op::WeibullNll { alpha, beta, y, u } => {
                    let scale = g.as_scalar();
                    let (va, vb) = (self.value(*alpha), self.value(*beta));
                    let derivs: Vec<(f64, f64)> = (0..va.len())
                        .map(|k| {
                            let (_, da, db) = weibull_item_nll(va.data()[k], vb.data()[k], y[k], u[k]);
                            (da, db)
                        })
                        .collect();
                    let ga = slot(&mut grads, *alpha, va);
                    for (o, (da, _)) in ga.data_mut().iter_mut().zip(&derivs) {
                        *o += scale * da;
                    }
                    let gb = slot(&mut grads, *beta, vb);
                    for (o, (_, db)) in gb.data_mut().iter_mut().zip(&derivs) {
                        *o += scale * db;
                    }
                }
                Op::SoftmaxCe { logits, target } => {
                    let scale = g.as_scalar();
                    let z = self.value(*logits);
                    let mut probs = z.data().to_vec();
                    softmax_in_place(&mut probs);
                    let gz = slot(&mut grads, *logits, z);
                    for (j, (o, pj)) in gz.data_mut().iter_mut().zip(&probs).enumerate() {
                        let t = if j == *target { 1.0 } else { 0.0 };
                        *o += scale * (pj - t);
                    }
                }
            }
        }
        out
    }
}

fn slot<'g>(grads: &'g mut [Option<Mat>], v: Var, like: &Mat) -> &'g mut Mat {
    grads[v.0].get_or_insert_with(|| Mat::zeros(like.rows(), like.cols()))
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

pub(crate) fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn bce_value(probs: &[f64], target: &[f64]) -> f64 {
    probs
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = p.clamp(LOG_FLOOR, 1.0 - LOG_FLOOR);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum()
}

/// Per-item censored Weibull loss and its partials w.r.t. `alpha` and `beta`.
///
/// Uncensored (`u = 1`): `-ln pmf(y)`, floored at `ln 1e-12`.
/// Censored (`u = 0`): `-ln P(Y > y) = ((y+1)/alpha)^beta`, exact.
pub(crate) fn weibull_item_nll(alpha: f64, beta: f64, y: f64, u: f64) -> (f64, f64, f64) {
    let b_ratio = (y + 1.0) / alpha;
    let b = b_ratio.powf(beta);
    let db_dalpha = -beta * b / alpha;
    let db_dbeta = b * b_ratio.ln();

    let (mut loss, mut d_alpha, mut d_beta) = ((1.0 - u) * b, (1.0 - u) * db_dalpha, (1.0 - u) * db_dbeta);

    if u > 0.0 {
        let (a, da_dalpha, da_dbeta) = if y > 0.0 {
            let ratio = y / alpha;
            let a = ratio.powf(beta);
            (a, -beta * a / alpha, a * ratio.ln())
        } else {
            (0.0, 0.0, 0.0)
        };
        // pmf = e^{-a} (1 - e^{-(b-a)})
        let log_pmf = -a + (-(a - b).exp_m1()).ln();
        if log_pmf > LOG_FLOOR.ln() {
            // -dP/P with P scaled by e^{a}: (a' - r b') / (1 - r), r = e^{a-b}
            let r = (a - b).exp();
            let inv = 1.0 / (1.0 - r);
            d_alpha += u * (da_dalpha - r * db_dalpha) * inv;
            d_beta += u * (da_dbeta - r * db_dbeta) * inv;
            loss += u * -log_pmf;
        } else {
            loss += u * -LOG_FLOOR.ln();
        }
    }
    (loss, d_alpha, d_beta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient_matches_analytic() {
        let mut ps = ParamSet::new();
        let w = ps.add("w", Mat::scalar(3.0));
        let mut tape = Tape::new(&ps);
        let wv = tape.param(w);
        let sq = tape.mul(wv, wv);
        let g = tape.backward(sq);
        assert!((g.get(w).as_scalar() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn disconnected_param_gets_zero_gradient() {
        let mut ps = ParamSet::new();
        let w = ps.add("w", Mat::scalar(2.0));
        let unused = ps.add("unused", Mat::row(vec![1.0, 2.0]));
        let mut tape = Tape::new(&ps);
        let wv = tape.param(w);
        let y = tape.scale(wv, 4.0);
        let g = tape.backward(y);
        assert_eq!(g.get(w).as_scalar(), 4.0);
        assert_eq!(g.get(unused).data(), &[0.0, 0.0]);
    }

    #[test]
    fn overflow_is_reported() {
        let ps = ParamSet::new();
        let mut tape = Tape::new(&ps);
        let x = tape.input(Mat::row(vec![f64::MAX]));
        let _ = tape.scale(x, 10.0);
        assert!(matches!(tape.ensure_finite(), Err(Error::NumericOverflow(_))));
    }

    #[test]
    fn weibull_partials_match_differences() {
        let h = 1e-6;
        for &(alpha, beta, y, u) in
            &[(2.0, 0.5, 3.0, 1.0), (0.7, 0.9, 0.0, 1.0), (5.0, 0.3, 4.0, 0.0), (1.3, 0.6, 12.0, 1.0)]
        {
            let (_, da, db) = weibull_item_nll(alpha, beta, y, u);
            let na =
                (weibull_item_nll(alpha + h, beta, y, u).0 - weibull_item_nll(alpha - h, beta, y, u).0) / (2.0 * h);
            let nb =
                (weibull_item_nll(alpha, beta + h, y, u).0 - weibull_item_nll(alpha, beta - h, y, u).0) / (2.0 * h);
            assert!((da - na).abs() < 1e-6, "{da} vs {na}");
            assert!((db - nb).abs() < 1e-6, "{db} vs {nb}");
        }
    }
}
