//! Recurrent sequence detector.
//!
//! Two cells share one output head:
//!
//! * vanilla: `a = b + W h + U y`, `h' = tanh(a)`
//! * LSTM: `z = b + W h + U y` split into input/forget/candidate/output
//!   blocks, `c' = f * c + i * g`, `h' = o * tanh(c')`
//!
//! followed by `o = c + V h'` and `pmf = softmax(o)`. The pmf at step `k` is
//! read as P(bit_k | inputs up to k). Training minimizes the summed negative
//! log-likelihood of the true bits with plain SGD over whole sequences and
//! gradients from backpropagation through time.

use crate::error::{Error, Result};
use crate::standardize::Standardizer;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Floor applied to the true-label probability inside the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Vanilla,
    Lstm,
}

impl CellKind {
    /// Rows of the stacked recurrent/input weight blocks.
    fn gate_rows(self, state_dim: usize) -> usize {
        match self {
            CellKind::Vanilla => state_dim,
            CellKind::Lstm => 4 * state_dim,
        }
    }
}

/// Trainable parameters, row-major. For the LSTM the `4 * state` rows are
/// stacked in input, forget, candidate, output order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnParams {
    /// Recurrent weights, `gate_rows x state`.
    pub w: Vec<f64>,
    /// Input weights, `gate_rows x input`.
    pub u: Vec<f64>,
    /// Recurrent bias, `gate_rows`.
    pub b: Vec<f64>,
    /// Output weights, `2 x state`.
    pub v: Vec<f64>,
    /// Output bias, `2`.
    pub c: Vec<f64>,
}

impl RnnParams {
    fn zeros(kind: CellKind, input_dim: usize, state_dim: usize) -> Self {
        let rows = kind.gate_rows(state_dim);
        Self {
            w: vec![0.0; rows * state_dim],
            u: vec![0.0; rows * input_dim],
            b: vec![0.0; rows],
            v: vec![0.0; 2 * state_dim],
            c: vec![0.0; 2],
        }
    }

    pub fn blocks(&self) -> [&Vec<f64>; 5] {
        [&self.w, &self.u, &self.b, &self.v, &self.c]
    }

    pub fn blocks_mut(&mut self) -> [&mut Vec<f64>; 5] {
        [&mut self.w, &mut self.u, &mut self.b, &mut self.v, &mut self.c]
    }

    pub fn len(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn norm(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|b| b.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    fn add_assign(&mut self, other: &RnnParams) {
        for (a, b) in self.blocks_mut().into_iter().zip(other.blocks()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    fn scale(&mut self, k: f64) {
        for block in self.blocks_mut() {
            block.iter_mut().for_each(|x| *x *= k);
        }
    }

    /// Flat view in block order (w, u, b, v, c).
    pub fn to_flat(&self) -> Vec<f64> {
        self.blocks().iter().flat_map(|b| b.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.len());
        let mut it = flat.iter();
        for block in self.blocks_mut() {
            block
                .iter_mut()
                .for_each(|x| *x = *it.next().expect("length checked"));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnModel {
    pub cell_kind: CellKind,
    pub input_dim: usize,
    pub state_dim: usize,
    pub params: RnnParams,
    /// Applied to raw inputs before the first layer.
    pub standardizer: Standardizer,
}

/// Hidden state carried between steps; `cell` is empty for the vanilla cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub h: Vec<f64>,
    pub cell: Vec<f64>,
}

impl CellState {
    pub fn zeros(model: &RnnModel) -> Self {
        let cell = match model.cell_kind {
            CellKind::Vanilla => Vec::new(),
            CellKind::Lstm => vec![0.0; model.state_dim],
        };
        Self {
            h: vec![0.0; model.state_dim],
            cell,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable two-way softmax.
pub fn softmax2(o: [f64; 2]) -> [f64; 2] {
    let m = o[0].max(o[1]);
    let e0 = (o[0] - m).exp();
    let e1 = (o[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// `out += M x` for a row-major `rows x cols` matrix.
fn matvec_add(m: &[f64], cols: usize, x: &[f64], out: &mut [f64]) {
    for (row, o) in m.chunks_exact(cols).zip(out.iter_mut()) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += M' x` for a row-major `rows x cols` matrix.
fn matvec_t_add(m: &[f64], cols: usize, x: &[f64], out: &mut [f64]) {
    for (row, xi) in m.chunks_exact(cols).zip(x) {
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * xi;
        }
    }
}

/// `g += x y'` into a row-major `x.len() x y.len()` matrix.
fn outer_add(g: &mut [f64], x: &[f64], y: &[f64]) {
    for (row, xi) in g.chunks_exact_mut(y.len()).zip(x) {
        for (r, yj) in row.iter_mut().zip(y) {
            *r += xi * yj;
        }
    }
}

/// Everything a backward pass needs from one forward step.
#[derive(Debug, Clone)]
struct StepCache {
    y: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Post-activation gate values (vanilla: just `h`).
    gates: Vec<f64>,
    h: Vec<f64>,
    c: Vec<f64>,
    pmf: [f64; 2],
}

impl RnnModel {
    pub fn zeros(cell_kind: CellKind, input_dim: usize, state_dim: usize) -> Self {
        Self {
            cell_kind,
            input_dim,
            state_dim,
            params: RnnParams::zeros(cell_kind, input_dim, state_dim),
            standardizer: Standardizer::identity(input_dim),
        }
    }

    /// Uniform(-r, r) weights with r = 1/sqrt(state), zero biases except the
    /// LSTM forget gate bias, which starts at 1.
    pub fn init(cell_kind: CellKind, input_dim: usize, state_dim: usize, rng: &mut impl Rng) -> Self {
        let mut m = Self::zeros(cell_kind, input_dim, state_dim);
        let r = 1.0 / (state_dim as f64).sqrt();
        for block in [&mut m.params.w, &mut m.params.u, &mut m.params.v] {
            block.iter_mut().for_each(|x| *x = rng.random_range(-r..r));
        }
        if cell_kind == CellKind::Lstm {
            m.params.b[state_dim..2 * state_dim]
                .iter_mut()
                .for_each(|x| *x = 1.0);
        }
        m
    }

    fn check_input(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: y.len(),
            });
        }
        Ok(())
    }

    /// One step on an already-standardized input.
    fn step_cached(&self, state: &CellState, y: &[f64]) -> StepCache {
        let n = self.state_dim;
        let p = &self.params;
        let rows = self.cell_kind.gate_rows(n);
        let mut z = p.b.clone();
        matvec_add(&p.w, n, &state.h, &mut z);
        matvec_add(&p.u, self.input_dim, y, &mut z);
        let (gates, h, c) = match self.cell_kind {
            CellKind::Vanilla => {
                let h: Vec<f64> = z.iter().map(|a| a.tanh()).collect();
                (h.clone(), h, Vec::new())
            }
            CellKind::Lstm => {
                let mut gates = vec![0.0; rows];
                for k in 0..n {
                    gates[k] = sigmoid(z[k]);
                    gates[n + k] = sigmoid(z[n + k]);
                    gates[2 * n + k] = z[2 * n + k].tanh();
                    gates[3 * n + k] = sigmoid(z[3 * n + k]);
                }
                let c: Vec<f64> = (0..n)
                    .map(|k| gates[n + k] * state.cell[k] + gates[k] * gates[2 * n + k])
                    .collect();
                let h: Vec<f64> = (0..n).map(|k| gates[3 * n + k] * c[k].tanh()).collect();
                (gates, h, c)
            }
        };
        let mut o = [p.c[0], p.c[1]];
        matvec_add(&p.v, n, &h, &mut o);
        StepCache {
            y: y.to_vec(),
            h_prev: state.h.clone(),
            c_prev: state.cell.clone(),
            gates,
            h,
            c,
            pmf: softmax2(o),
        }
    }

    /// Advances the cell by one symbol: returns the new state and the
    /// two-way pmf over the current bit.
    pub fn cell_step(&self, state: &CellState, y: &[f64]) -> Result<(CellState, [f64; 2])> {
        self.check_input(y)?;
        if state.h.len() != self.state_dim {
            return Err(Error::DimensionMismatch {
                expected: self.state_dim,
                got: state.h.len(),
            });
        }
        let s = self.step_cached(state, &self.standardizer.apply(y));
        Ok((CellState { h: s.h, cell: s.c }, s.pmf))
    }

    fn forward_cached<R: AsRef<[f64]>>(&self, inputs: &[R]) -> Result<Vec<StepCache>> {
        if inputs.is_empty() {
            return Err(Error::EmptySequence);
        }
        let mut state = CellState::zeros(self);
        let mut out = Vec::with_capacity(inputs.len());
        for y in inputs {
            self.check_input(y.as_ref())?;
            let s = self.step_cached(&state, &self.standardizer.apply(y.as_ref()));
            state = CellState {
                h: s.h.clone(),
                cell: s.c.clone(),
            };
            out.push(s);
        }
        Ok(out)
    }

    /// Pmfs for every step, starting from the zero state.
    pub fn forward_sequence<R: AsRef<[f64]>>(&self, inputs: &[R]) -> Result<Vec<[f64; 2]>> {
        Ok(self.forward_cached(inputs)?.into_iter().map(|s| s.pmf).collect())
    }

    /// Gradient of [`sequence_loss`] with respect to every parameter, plus
    /// the loss itself.
    pub fn backward_sequence<R: AsRef<[f64]>>(
        &self,
        inputs: &[R],
        targets: &[u8],
    ) -> Result<(f64, RnnParams)> {
        if inputs.len() != targets.len() {
            return Err(Error::DimensionMismatch {
                expected: inputs.len(),
                got: targets.len(),
            });
        }
        let steps = self.forward_cached(inputs)?;
        let n = self.state_dim;
        let p = &self.params;
        let mut grad = RnnParams::zeros(self.cell_kind, self.input_dim, n);
        let mut loss = 0.0;
        let mut dh_next = vec![0.0; n];
        let mut dc_next = vec![0.0; n];
        for (s, &label) in steps.iter().zip(targets).rev() {
            let label = usize::from(label != 0);
            let p_true = s.pmf[label];
            // floored probabilities contribute a constant, so no gradient
            let d_o = if p_true > PROB_FLOOR {
                loss -= p_true.ln();
                let mut d = s.pmf;
                d[label] -= 1.0;
                d
            } else {
                loss -= PROB_FLOOR.ln();
                [0.0, 0.0]
            };
            outer_add(&mut grad.v, &d_o, &s.h);
            grad.c[0] += d_o[0];
            grad.c[1] += d_o[1];
            let mut dh = dh_next.clone();
            matvec_t_add(&p.v, n, &d_o, &mut dh);

            let dz: Vec<f64> = match self.cell_kind {
                CellKind::Vanilla => dh.iter().zip(&s.h).map(|(d, h)| d * (1.0 - h * h)).collect(),
                CellKind::Lstm => {
                    let g = &s.gates;
                    let mut dz = vec![0.0; 4 * n];
                    for k in 0..n {
                        let (i, f, cand, o) = (g[k], g[n + k], g[2 * n + k], g[3 * n + k]);
                        let tc = s.c[k].tanh();
                        let dc = dc_next[k] + dh[k] * o * (1.0 - tc * tc);
                        dz[k] = dc * cand * i * (1.0 - i);
                        dz[n + k] = dc * s.c_prev[k] * f * (1.0 - f);
                        dz[2 * n + k] = dc * i * (1.0 - cand * cand);
                        dz[3 * n + k] = dh[k] * tc * o * (1.0 - o);
                        dc_next[k] = dc * f;
                    }
                    dz
                }
            };
            outer_add(&mut grad.w, &dz, &s.h_prev);
            outer_add(&mut grad.u, &dz, &s.y);
            grad.b.iter_mut().zip(&dz).for_each(|(g, d)| *g += d);
            dh_next.iter_mut().for_each(|x| *x = 0.0);
            matvec_t_add(&p.w, n, &dz, &mut dh_next);
        }
        Ok((loss, grad))
    }
}

/// Summed negative log-likelihood `-sum_i ln pmf_i[label_i]`; a zero true
/// probability gives `+inf`.
pub fn sequence_loss(pmfs: &[[f64; 2]], targets: &[u8]) -> Result<f64> {
    if pmfs.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: pmfs.len(),
            got: targets.len(),
        });
    }
    Ok(pmfs
        .iter()
        .zip(targets)
        .map(|(p, &t)| {
            let q = p[usize::from(t != 0)];
            if q > 0.0 {
                -q.ln()
            } else {
                f64::INFINITY
            }
        })
        .sum())
}

/// Argmax per step; an exact tie decodes as 0.
pub fn detect_bits(pmfs: &[[f64; 2]]) -> Vec<u8> {
    pmfs.iter().map(|p| u8::from(p[1] > p[0])).collect()
}

/// Runs the model over a whole record and decodes its bits.
pub fn detect_sequence<R: AsRef<[f64]>>(model: &RnnModel, inputs: &[R]) -> Result<Vec<u8>> {
    Ok(detect_bits(&model.forward_sequence(inputs)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub cell_kind: CellKind,
    pub state_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Nominal sequence length (bits per record).
    pub sequence_length: usize,
    pub clip_norm: f64,
    /// Fraction of sequences held out for model selection.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            cell_kind: CellKind::Lstm,
            state_dim: 16,
            learning_rate: 0.05,
            epochs: 60,
            sequence_length: 120,
            clip_norm: 5.0,
            validation_fraction: 0.2,
            seed: 1,
        }
    }
}

/// One labelled record: per-symbol raw inputs and their bits.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RnnTraining {
    pub model: RnnModel,
    pub log: Vec<EpochLog>,
}

fn dataset_loss(model: &RnnModel, data: &[&Sequence]) -> Result<f64> {
    let mut total = 0.0;
    for s in data {
        let pmfs = model.forward_sequence(&s.inputs)?;
        let floored: Vec<[f64; 2]> = pmfs
            .iter()
            .map(|p| [p[0].max(PROB_FLOOR), p[1].max(PROB_FLOOR)])
            .collect();
        total += sequence_loss(&floored, &s.targets)?;
    }
    Ok(total)
}

/// SGD over whole sequences with gradient-norm clipping.
///
/// Each epoch visits the training sequences in a seeded random order. If
/// the epoch's end-of-epoch training loss is higher than the last accepted
/// one, the epoch is rolled back and the learning rate halved, so the logged
/// training loss never increases. The returned parameters are those with the
/// lowest validation loss seen.
pub fn train_rnn(dataset: &[Sequence], cfg: &TrainConfig) -> Result<RnnTraining> {
    if dataset.is_empty() {
        return Err(Error::EmptySequence);
    }
    let input_dim = dataset[0].inputs.first().ok_or(Error::EmptySequence)?.len();
    for s in dataset {
        if s.inputs.is_empty() {
            return Err(Error::EmptySequence);
        }
        if s.inputs.len() != s.targets.len() {
            return Err(Error::DimensionMismatch {
                expected: s.inputs.len(),
                got: s.targets.len(),
            });
        }
        if let Some(bad) = s.inputs.iter().find(|y| y.len() != input_dim) {
            return Err(Error::DimensionMismatch {
                expected: input_dim,
                got: bad.len(),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    let n_val = if dataset.len() > 1 {
        ((dataset.len() as f64 * cfg.validation_fraction).round() as usize).min(dataset.len() - 1)
    } else {
        0
    };
    let val: Vec<&Sequence> = order[..n_val].iter().map(|&i| &dataset[i]).collect();
    let train: Vec<&Sequence> = order[n_val..].iter().map(|&i| &dataset[i]).collect();
    // with nothing held out, select on the training loss
    let val = if val.is_empty() { train.clone() } else { val };

    let rows: Vec<&Vec<f64>> = train.iter().flat_map(|s| s.inputs.iter()).collect();
    let mut model = RnnModel::init(cfg.cell_kind, input_dim, cfg.state_dim, &mut rng);
    model.standardizer = Standardizer::fit(&rows);

    let mut lr = cfg.learning_rate;
    let mut train_loss = dataset_loss(&model, &train)?;
    let mut best_val = dataset_loss(&model, &val)?;
    let mut best = model.clone();
    let mut log = vec![EpochLog {
        epoch: 0,
        train_loss,
        val_loss: best_val,
        learning_rate: lr,
    }];
    let mut idx: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        idx.shuffle(&mut rng);
        let mut candidate = model.clone();
        for (step, &i) in idx.iter().enumerate() {
            let s = train[i];
            let (loss, mut g) = candidate.backward_sequence(&s.inputs, &s.targets)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            let norm = g.norm();
            if norm > cfg.clip_norm {
                g.scale(cfg.clip_norm / norm);
            }
            g.scale(-lr);
            candidate.params.add_assign(&g);
        }
        let cand_loss = dataset_loss(&candidate, &train)?;
        if !cand_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                step: idx.len(),
            });
        }
        if cand_loss > train_loss {
            lr *= 0.5;
        } else {
            model = candidate;
            train_loss = cand_loss;
        }
        let val_loss = dataset_loss(&model, &val)?;
        if val_loss < best_val {
            best_val = val_loss;
            best = model.clone();
        }
        log.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            learning_rate: lr,
        });
    }
    Ok(RnnTraining { model: best, log })
}

/// Loss curve as `epoch,train_loss,val_loss` CSV.
pub fn write_loss_csv<W: std::io::Write>(mut w: W, log: &[EpochLog]) -> Result<()> {
    writeln!(w, "epoch,train_loss,val_loss")?;
    for e in log {
        writeln!(w, "{},{:.6},{:.6}", e.epoch, e.train_loss, e.val_loss)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_model(kind: CellKind, input: usize, state: usize, seed: u64, scale: f64) -> RnnModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = RnnModel::zeros(kind, input, state);
        for block in m.params.blocks_mut() {
            block
                .iter_mut()
                .for_each(|x| *x = rng.random_range(-scale..scale));
        }
        m
    }

    fn random_inputs(k: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..k)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    /// Straight-line re-implementation of one step used as an oracle.
    #[allow(clippy::needless_range_loop)]
    fn oracle_step(m: &RnnModel, h: &[f64], cell: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>, [f64; 2]) {
        let n = m.state_dim;
        let p = &m.params;
        let pre = |r: usize| {
            let mut s = p.b[r];
            for j in 0..n {
                s += p.w[r * n + j] * h[j];
            }
            for j in 0..m.input_dim {
                s += p.u[r * m.input_dim + j] * y[j];
            }
            s
        };
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let (h2, c2): (Vec<f64>, Vec<f64>) = match m.cell_kind {
            CellKind::Vanilla => ((0..n).map(|r| pre(r).tanh()).collect(), vec![]),
            CellKind::Lstm => {
                let mut hh = vec![0.0; n];
                let mut cc = vec![0.0; n];
                for k in 0..n {
                    let i = sig(pre(k));
                    let f = sig(pre(n + k));
                    let g = pre(2 * n + k).tanh();
                    let o = sig(pre(3 * n + k));
                    cc[k] = f * cell[k] + i * g;
                    hh[k] = o * cc[k].tanh();
                }
                (hh, cc)
            }
        };
        let o0 = p.c[0] + (0..n).map(|j| p.v[j] * h2[j]).sum::<f64>();
        let o1 = p.c[1] + (0..n).map(|j| p.v[n + j] * h2[j]).sum::<f64>();
        let z = o0.exp() + o1.exp();
        (h2, c2, [o0.exp() / z, o1.exp() / z])
    }

    #[test]
    fn zero_model_is_uniform() {
        for kind in [CellKind::Vanilla, CellKind::Lstm] {
            let m = RnnModel::zeros(kind, 15, 16);
            let (_, pmf) = m.cell_step(&CellState::zeros(&m), &[3.0; 15]).unwrap();
            assert_eq!(pmf, [0.5, 0.5]);
            let pmfs = m.forward_sequence(&random_inputs(7, 15, 1)).unwrap();
            assert!(pmfs.iter().all(|p| *p == [0.5, 0.5]));
        }
    }

    #[test]
    fn step_matches_oracle() {
        for kind in [CellKind::Vanilla, CellKind::Lstm] {
            let m = random_model(kind, 15, 6, 3, 0.5);
            let mut state = CellState::zeros(&m);
            state
                .h
                .iter_mut()
                .enumerate()
                .for_each(|(i, x)| *x = 0.1 * i as f64 - 0.2);
            state
                .cell
                .iter_mut()
                .enumerate()
                .for_each(|(i, x)| *x = 0.05 * i as f64);
            let y = random_inputs(1, 15, 4).remove(0);
            let (next, pmf) = m.cell_step(&state, &y).unwrap();
            let (h, c, p) = oracle_step(&m, &state.h, &state.cell, &y);
            for (a, b) in next.h.iter().zip(&h) {
                assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in next.cell.iter().zip(&c) {
                assert!((a - b).abs() < 1e-12);
            }
            assert!((pmf[0] - p[0]).abs() < 1e-12 && (pmf[1] - p[1]).abs() < 1e-12);
            assert!((pmf[0] + pmf[1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn vanilla_without_recurrence_is_memoryless() {
        let mut m = random_model(CellKind::Vanilla, 4, 5, 9, 1.0);
        m.params.w.iter_mut().for_each(|x| *x = 0.0);
        let y = [0.3, -0.2, 0.9, 0.0];
        let s0 = CellState::zeros(&m);
        let s1 = CellState {
            h: vec![0.7; 5],
            cell: vec![],
        };
        assert_eq!(m.cell_step(&s0, &y).unwrap().1, m.cell_step(&s1, &y).unwrap().1);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let m = RnnModel::zeros(CellKind::Lstm, 15, 16);
        assert!(matches!(
            m.cell_step(&CellState::zeros(&m), &[0.0; 14]),
            Err(Error::DimensionMismatch {
                expected: 15,
                got: 14
            })
        ));
        let empty: Vec<Vec<f64>> = vec![];
        assert!(matches!(m.forward_sequence(&empty), Err(Error::EmptySequence)));
    }

    #[test]
    fn sequence_is_causal_and_k1_is_a_step() {
        let m = random_model(CellKind::Lstm, 3, 4, 5, 0.8);
        let mut ys = random_inputs(6, 3, 6);
        let a = m.forward_sequence(&ys).unwrap();
        let (_, first) = m.cell_step(&CellState::zeros(&m), &ys[0]).unwrap();
        assert_eq!(m.forward_sequence(&ys[..1]).unwrap(), vec![first]);
        ys[4] = vec![5.0, -5.0, 2.0];
        let b = m.forward_sequence(&ys).unwrap();
        assert_eq!(a[..4], b[..4]);
        assert_ne!(a[4], b[4]);
    }

    #[test]
    fn loss_values() {
        let uniform = vec![[0.5, 0.5]; 120];
        let targets: Vec<u8> = (0..120).map(|i| (i % 3 == 0) as u8).collect();
        let l = sequence_loss(&uniform, &targets).unwrap();
        assert!((l - 120.0 * 2f64.ln()).abs() < 1e-9);
        assert!((l - 83.178).abs() < 1e-3);
        let perfect: Vec<[f64; 2]> = targets
            .iter()
            .map(|&t| if t == 0 { [1.0, 0.0] } else { [0.0, 1.0] })
            .collect();
        assert_eq!(sequence_loss(&perfect, &targets).unwrap(), 0.0);
        assert_eq!(sequence_loss(&[[1.0, 0.0]], &[1]).unwrap(), f64::INFINITY);
    }

    #[test]
    fn detect_tie_and_order() {
        assert_eq!(detect_bits(&[[0.9, 0.1], [0.5, 0.5], [0.2, 0.8]]), vec![0, 0, 1]);
        // a strictly increasing map of both logits keeps the argmax
        let logits = [[0.3, -1.2], [2.0, 2.5], [-0.1, -0.1]];
        let direct: Vec<[f64; 2]> = logits.iter().map(|&o| softmax2(o)).collect();
        let warped: Vec<[f64; 2]> = logits
            .iter()
            .map(|o| softmax2([o[0].powi(3) + 2.0 * o[0], o[1].powi(3) + 2.0 * o[1]]))
            .collect();
        assert_eq!(detect_bits(&direct), detect_bits(&warped));
    }

    fn finite_difference(m: &RnnModel, ys: &[Vec<f64>], t: &[u8], eps: f64) -> Vec<f64> {
        let base = m.params.to_flat();
        let mut probe = m.clone();
        (0..base.len())
            .map(|i| {
                let mut x = base.clone();
                x[i] = base[i] + eps;
                probe.params.set_flat(&x);
                let lp = sequence_loss(&probe.forward_sequence(ys).unwrap(), t).unwrap();
                x[i] = base[i] - eps;
                probe.params.set_flat(&x);
                let lm = sequence_loss(&probe.forward_sequence(ys).unwrap(), t).unwrap();
                (lp - lm) / (2.0 * eps)
            })
            .collect()
    }

    #[test]
    fn gradients_match_finite_differences() {
        for kind in [CellKind::Vanilla, CellKind::Lstm] {
            let m = random_model(kind, 3, 4, 21, 0.7);
            let ys = random_inputs(5, 3, 22);
            let t = [0u8, 1, 1, 0, 1];
            let (_, g) = m.backward_sequence(&ys, &t).unwrap();
            let fd = finite_difference(&m, &ys, &t, 1e-5);
            for (i, (a, n)) in g.to_flat().iter().zip(&fd).enumerate() {
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
                assert!(rel < 1e-4, "{kind:?} coord {i}: analytic {a}, numeric {n}");
            }
        }
    }

    #[test]
    fn saturated_correct_outputs_have_no_gradient() {
        let mut m = RnnModel::zeros(CellKind::Lstm, 3, 4);
        m.params.c = vec![-40.0, 40.0];
        let ys = random_inputs(5, 3, 1);
        let (loss, g) = m.backward_sequence(&ys, &[1; 5]).unwrap();
        assert!(loss < 1e-12);
        assert!(g.norm() < 1e-6);
    }

    #[test]
    fn gradient_is_additive_over_sequences() {
        let m = random_model(CellKind::Lstm, 3, 4, 2, 0.5);
        let a = random_inputs(5, 3, 3);
        let b = random_inputs(5, 3, 4);
        let (la, ga) = m.backward_sequence(&a, &[0, 1, 0, 1, 1]).unwrap();
        let (lb, gb) = m.backward_sequence(&b, &[1, 1, 0, 0, 0]).unwrap();
        let mut sum = ga.clone();
        sum.add_assign(&gb);
        let sa = sequence_loss(&m.forward_sequence(&a).unwrap(), &[0, 1, 0, 1, 1]).unwrap();
        let sb = sequence_loss(&m.forward_sequence(&b).unwrap(), &[1, 1, 0, 0, 0]).unwrap();
        assert!((la + lb - sa - sb).abs() < 1e-12);
        let flat = sum.to_flat();
        let direct: Vec<f64> = ga
            .to_flat()
            .iter()
            .zip(gb.to_flat())
            .map(|(x, y)| x + y)
            .collect();
        assert_eq!(flat, direct);
    }

    fn toy_sequences(n: usize, seed: u64, label: impl Fn(&[Vec<f64>], usize) -> u8) -> Vec<Sequence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let inputs: Vec<Vec<f64>> = (0..40)
                    .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .collect();
                let targets = (0..inputs.len()).map(|k| label(&inputs, k)).collect();
                Sequence { inputs, targets }
            })
            .collect()
    }

    fn accuracy(m: &RnnModel, data: &[Sequence]) -> f64 {
        let mut ok = 0;
        let mut total = 0;
        for s in data {
            let bits = detect_sequence(m, &s.inputs).unwrap();
            ok += bits.iter().zip(&s.targets).filter(|(a, b)| a == b).count();
            total += bits.len();
        }
        ok as f64 / total as f64
    }

    #[test]
    fn learns_memoryless_sign_task() {
        let label = |x: &[Vec<f64>], k: usize| u8::from(x[k][0] > 0.0);
        let train = toy_sequences(30, 1, label);
        let test = toy_sequences(10, 2, label);
        let cfg = TrainConfig {
            state_dim: 8,
            epochs: 50,
            ..Default::default()
        };
        let out = train_rnn(&train, &cfg).unwrap();
        assert!(accuracy(&out.model, &test) >= 0.99);
    }

    #[test]
    fn vanilla_uses_state_for_previous_input() {
        let label = |x: &[Vec<f64>], k: usize| if k == 0 { 0 } else { u8::from(x[k - 1][1] > 0.0) };
        let train = toy_sequences(40, 3, label);
        let test = toy_sequences(10, 4, label);
        let cfg = TrainConfig {
            cell_kind: CellKind::Vanilla,
            state_dim: 8,
            epochs: 80,
            ..Default::default()
        };
        let out = train_rnn(&train, &cfg).unwrap();
        assert!(accuracy(&out.model, &test) > 0.95);
    }

    #[test]
    fn training_is_deterministic_and_monotone() {
        let label = |x: &[Vec<f64>], k: usize| u8::from(x[k][0] + x[k][2] > 0.0);
        let data = toy_sequences(8, 5, label);
        let cfg = TrainConfig {
            state_dim: 4,
            epochs: 15,
            learning_rate: 0.5,
            ..Default::default()
        };
        let a = train_rnn(&data, &cfg).unwrap();
        let b = train_rnn(&data, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert!(a.log.windows(2).all(|w| w[1].train_loss <= w[0].train_loss));
        let mut buf = Vec::new();
        write_loss_csv(&mut buf, &a.log).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("epoch,train_loss,val_loss\n0,"));
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(matches!(
            train_rnn(&[], &TrainConfig::default()),
            Err(Error::EmptySequence)
        ));
    }
}
