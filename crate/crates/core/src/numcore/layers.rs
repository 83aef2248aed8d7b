use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mat::Mat;
use super::tape::{clamped_exp, sigmoid, softmax_in_place, ParamId, ParamSet, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
    Exp,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Glorot-uniform matrix: `U(-s, s)` with `s = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Mat {
    let s = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-s..s)).collect();
    Mat::from_vec(rows, cols, data).expect("glorot shape")
}

/// Plain-value GRU weights. Input matrices are `input_dim x hidden`,
/// recurrent matrices `hidden x hidden`, biases `1 x hidden`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruWeights {
    pub w_z: Mat,
    pub u_z: Mat,
    pub b_z: Mat,
    pub w_r: Mat,
    pub u_r: Mat,
    pub b_r: Mat,
    pub w: Mat,
    pub u: Mat,
    pub b: Mat,
}

impl GruWeights {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        let (wi, wh, b) = (Mat::zeros(input_dim, hidden), Mat::zeros(hidden, hidden), Mat::zeros(1, hidden));
        GruWeights {
            w_z: wi.clone(),
            u_z: wh.clone(),
            b_z: b.clone(),
            w_r: wi.clone(),
            u_r: wh.clone(),
            b_r: b.clone(),
            w: wi,
            u: wh,
            b,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.rows()
    }

    pub fn hidden(&self) -> usize {
        self.w_z.cols()
    }
}

fn affine(x: &[f64], w: &Mat, b: &Mat) -> Result<Vec<f64>> {
    if x.len() != w.rows() || b.cols() != w.cols() {
        return Err(Error::Shape(format!("input {} against {}x{} weights", x.len(), w.rows(), w.cols())));
    }
    let mut out = b.data().to_vec();
    for (k, &xv) in x.iter().enumerate() {
        for (o, &wv) in out.iter_mut().zip(w.row_slice(k)) {
            *o += xv * wv;
        }
    }
    Ok(out)
}

fn ensure_finite(v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericOverflow("gru_cell".into()))
    }
}

/// One GRU update:
/// `z = σ(x W_z + h U_z + b_z)`, `r = σ(x W_r + h U_r + b_r)`,
/// `ĥ = tanh(x W + (r ⊙ h) U + b)`, `h' = (1 - z) ⊙ h + z ⊙ ĥ`.
pub fn gru_cell(x: &[f64], h_prev: &[f64], w: &GruWeights) -> Result<Vec<f64>> {
    if h_prev.len() != w.hidden() {
        return Err(Error::Shape(format!("hidden state {} for {} units", h_prev.len(), w.hidden())));
    }
    let mut z = affine(x, &w.w_z, &w.b_z)?;
    let zh = affine(h_prev, &w.u_z, &Mat::zeros(1, w.hidden()))?;
    let mut r = affine(x, &w.w_r, &w.b_r)?;
    let rh = affine(h_prev, &w.u_r, &Mat::zeros(1, w.hidden()))?;
    for i in 0..z.len() {
        z[i] = sigmoid(z[i] + zh[i]);
        r[i] = sigmoid(r[i] + rh[i]);
    }
    let gated: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    let mut cand = affine(x, &w.w, &w.b)?;
    let ch = affine(&gated, &w.u, &Mat::zeros(1, w.hidden()))?;
    for i in 0..cand.len() {
        cand[i] = (cand[i] + ch[i]).tanh();
    }
    let h: Vec<f64> = (0..z.len()).map(|i| (1.0 - z[i]) * h_prev[i] + z[i] * cand[i]).collect();
    ensure_finite(&h)?;
    Ok(h)
}

pub fn activate(v: &mut [f64], activation: Activation) {
    match activation {
        Activation::Identity => {}
        Activation::Relu => v.iter_mut().for_each(|x| *x = x.max(0.0)),
        Activation::Sigmoid => v.iter_mut().for_each(|x| *x = sigmoid(*x)),
        Activation::Tanh => v.iter_mut().for_each(|x| *x = x.tanh()),
        Activation::Exp => v.iter_mut().for_each(|x| *x = clamped_exp(*x)),
        Activation::Softmax => softmax_in_place(v),
    }
}

/// `activation(x W + b)`.
pub fn dense(x: &[f64], w: &Mat, b: &Mat, activation: Activation) -> Result<Vec<f64>> {
    let mut out = affine(x, w, b)?;
    activate(&mut out, activation);
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(Error::NumericOverflow("dense".into()))
    }
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`,
/// otherwise `1 / (1 - rate)`.
pub fn dropout_mask(n: usize, rate: f64, rng: &mut impl Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..n).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }).collect()
}

pub fn dropout(x: &[f64], rate: f64, mode: Mode, rng: &mut impl Rng) -> Vec<f64> {
    if mode == Mode::Infer || rate == 0.0 {
        return x.to_vec();
    }
    dropout_mask(x.len(), rate, rng).iter().zip(x).map(|(m, v)| m * v).collect()
}

/// Applies dropout to a tape node; identity outside training.
pub fn tape_dropout(tape: &mut Tape<'_>, x: Var, rate: f64, mode: Mode, rng: &mut impl Rng) -> Var {
    if mode == Mode::Infer || rate == 0.0 {
        return x;
    }
    let n = tape.value(x).len();
    let mask = dropout_mask(n, rate, rng);
    tape.mask(x, mask)
}

/// GRU layer whose weights live in a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GruLayer {
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

impl GruLayer {
    pub fn new(params: &mut ParamSet, prefix: &str, input_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let w_z = params.add(format!("{prefix}.w_z"), glorot(input_dim, hidden, rng));
        let w_r = params.add(format!("{prefix}.w_r"), glorot(input_dim, hidden, rng));
        let w = params.add(format!("{prefix}.w"), glorot(input_dim, hidden, rng));
        let u_z = params.add(format!("{prefix}.u_z"), glorot(hidden, hidden, rng));
        let u_r = params.add(format!("{prefix}.u_r"), glorot(hidden, hidden, rng));
        let u = params.add(format!("{prefix}.u"), glorot(hidden, hidden, rng));
        let b_z = params.add(format!("{prefix}.b_z"), Mat::zeros(1, hidden));
        let b_r = params.add(format!("{prefix}.b_r"), Mat::zeros(1, hidden));
        let b = params.add(format!("{prefix}.b"), Mat::zeros(1, hidden));
        GruLayer { w_z, u_z, b_z, w_r, u_r, b_r, w, u, b, input_dim, hidden }
    }

    pub fn weights(&self, params: &ParamSet) -> GruWeights {
        GruWeights {
            w_z: params.get(self.w_z).clone(),
            u_z: params.get(self.u_z).clone(),
            b_z: params.get(self.b_z).clone(),
            w_r: params.get(self.w_r).clone(),
            u_r: params.get(self.u_r).clone(),
            b_r: params.get(self.b_r).clone(),
            w: params.get(self.w).clone(),
            u: params.get(self.u).clone(),
            b: params.get(self.b).clone(),
        }
    }

    pub fn zero_state(&self, tape: &mut Tape<'_>) -> Var {
        tape.input(Mat::zeros(1, self.hidden))
    }

    pub fn step(&self, tape: &mut Tape<'_>, x: Var, h: Var) -> Var {
        let gate = |tape: &mut Tape<'_>, w: ParamId, u: ParamId, b: ParamId, h_in: Var| {
            let (w, u, b) = (tape.param(w), tape.param(u), tape.param(b));
            let xw = tape.matmul(x, w);
            let hu = tape.matmul(h_in, u);
            let s = tape.add(xw, hu);
            tape.add_row(s, b)
        };
        let z_pre = gate(tape, self.w_z, self.u_z, self.b_z, h);
        let z = tape.sigmoid(z_pre);
        let r_pre = gate(tape, self.w_r, self.u_r, self.b_r, h);
        let r = tape.sigmoid(r_pre);
        let rh = tape.mul(r, h);
        let c_pre = gate(tape, self.w, self.u, self.b, rh);
        let cand = tape.tanh(c_pre);
        let keep = tape.one_minus(z);
        let old = tape.mul(keep, h);
        let new = tape.mul(z, cand);
        tape.add(old, new)
    }

    /// Runs the layer over `inputs` from `h0` (zeros if `None`) and returns
    /// every hidden state.
    pub fn run(&self, tape: &mut Tape<'_>, inputs: &[Var], h0: Option<Var>) -> Vec<Var> {
        let mut h = h0.unwrap_or_else(|| self.zero_state(tape));
        inputs
            .iter()
            .map(|&x| {
                h = self.step(tape, x, h);
                h
            })
            .collect()
    }
}

/// Dense layer whose weights live in a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub activation: Activation,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl DenseLayer {
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        input_dim: usize,
        output_dim: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let w = params.add(format!("{prefix}.w"), glorot(input_dim, output_dim, rng));
        let b = params.add(format!("{prefix}.b"), Mat::zeros(1, output_dim));
        DenseLayer { w, b, activation, input_dim, output_dim }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Var {
        let (w, b) = (tape.param(self.w), tape.param(self.b));
        let xw = tape.matmul(x, w);
        let pre = tape.add_row(xw, b);
        match self.activation {
            Activation::Identity => pre,
            Activation::Relu => tape.relu(pre),
            Activation::Sigmoid => tape.sigmoid(pre),
            Activation::Tanh => tape.tanh(pre),
            Activation::Exp => tape.exp(pre),
            Activation::Softmax => tape.softmax_row(pre),
        }
    }

    pub fn apply(&self, params: &ParamSet, x: &[f64]) -> Result<Vec<f64>> {
        dense(x, params.get(self.w), params.get(self.b), self.activation)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_single_unit() {
        let w = GruWeights::zeros(2, 1);
        let h = gru_cell(&[1.0, -1.0], &[0.8], &w).unwrap();
        assert!((h[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn zero_weights_two_units() {
        let w = GruWeights::zeros(3, 2);
        let h = gru_cell(&[0.3, 0.0, 1.0], &[1.0, -1.0], &w).unwrap();
        assert!((h[0] - 0.5).abs() < 1e-15 && (h[1] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn dense_examples() {
        let x = [1.5, -2.0];
        let out = dense(&x, &Mat::identity(2), &Mat::zeros(1, 2), Activation::Identity).unwrap();
        assert_eq!(out, x.to_vec());
        let out = dense(&[-1.0, 2.0], &Mat::identity(2), &Mat::zeros(1, 2), Activation::Relu).unwrap();
        assert_eq!(out, vec![0.0, 2.0]);
        let out = dense(&[0.0, 0.0], &Mat::identity(2), &Mat::zeros(1, 2), Activation::Softmax).unwrap();
        assert_eq!(out, vec![0.5, 0.5]);
    }

    #[test]
    fn dense_rejects_bad_shape() {
        assert!(dense(&[1.0], &Mat::identity(2), &Mat::zeros(1, 2), Activation::Identity).is_err());
    }

    #[test]
    fn dropout_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = vec![1.0, 2.0, 3.0];
        assert_eq!(dropout(&x, 0.0, Mode::Train, &mut rng), x);
        assert_eq!(dropout(&x, 0.4, Mode::Infer, &mut rng), x);
    }

    #[test]
    fn dropout_preserves_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = vec![1.0; 100_000];
        let y = dropout(&x, 0.5, Mode::Train, &mut rng);
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn tape_gru_matches_plain_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ps = ParamSet::new();
        let layer = GruLayer::new(&mut ps, "gru", 4, 3, &mut rng);
        for id in [layer.b_z, layer.b_r, layer.b] {
            *ps.get_mut(id) = glorot(1, 3, &mut rng);
        }
        let x = vec![0.5, -1.0, 0.0, 2.0];
        let h0 = vec![0.1, -0.2, 0.3];
        let expected = gru_cell(&x, &h0, &layer.weights(&ps)).unwrap();
        let mut tape = Tape::new(&ps);
        let xv = tape.input(Mat::row(x));
        let hv = tape.input(Mat::row(h0));
        let h = layer.step(&mut tape, xv, hv);
        for (a, b) in tape.value(h).data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
