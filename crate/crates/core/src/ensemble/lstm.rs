//! LSTM cells and layers over packed variable-length batches.
//!
//! A batch is sorted by length (longest first), so at step `t` the sequences still
//! running are a prefix of the sorted order. Finished sequences simply stop being
//! stepped, which keeps their final state exactly what it was at their last token.

use crate::error::{Error, Result};
use crate::numerics::{init, Graph, ParamId, ParamStore, Rng, Tensor, Var};

/// Initial value of the input-path forget bias.
pub const FORGET_BIAS: f64 = 1.0;

const WEIGHTS: [&str; 8] = [
    "w_ii", "w_if", "w_ig", "w_io", "w_hi", "w_hf", "w_hg", "w_ho",
];
const BIASES: [&str; 8] = [
    "b_ii", "b_if", "b_ig", "b_io", "b_hi", "b_hf", "b_hg", "b_ho",
];

/// Gate parameters in input, forget, cell, output order.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    input_dim: usize,
    units: usize,
    /// `w_ii, w_if, w_ig, w_io` then `w_hi, w_hf, w_hg, w_ho`.
    weights: [ParamId; 8],
    /// Same order as `weights`.
    biases: [ParamId; 8],
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(units: usize) -> Self {
        LstmState {
            h: vec![0.0; units],
            c: vec![0.0; units],
        }
    }
}

impl LstmCell {
    /// Glorot weights, zero biases except `b_if`.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        units: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if input_dim == 0 || units == 0 {
            return Err(Error::Config(format!(
                "lstm {prefix} needs positive sizes, got {input_dim}x{units}"
            )));
        }
        let mut weights = Vec::with_capacity(8);
        for (k, name) in WEIGHTS.iter().enumerate() {
            let rows = if k < 4 { input_dim } else { units };
            weights.push(store.add(format!("{prefix}{name}"), init::glorot(rows, units, rng))?);
        }
        let mut biases = Vec::with_capacity(8);
        for name in BIASES {
            let fill = if name == "b_if" { FORGET_BIAS } else { 0.0 };
            biases.push(store.add(format!("{prefix}{name}"), init::filled(units, fill))?);
        }
        Ok(LstmCell {
            input_dim,
            units,
            weights: weights.try_into().expect("eight weights"),
            biases: biases.try_into().expect("eight biases"),
        })
    }

    pub fn bind(store: &ParamStore, prefix: &str, input_dim: usize, units: usize) -> Result<Self> {
        let mut weights = Vec::with_capacity(8);
        for (k, name) in WEIGHTS.iter().enumerate() {
            let rows = if k < 4 { input_dim } else { units };
            weights.push(bound(store, &format!("{prefix}{name}"), &[rows, units])?);
        }
        let mut biases = Vec::with_capacity(8);
        for name in BIASES {
            biases.push(bound(store, &format!("{prefix}{name}"), &[units])?);
        }
        Ok(LstmCell {
            input_dim,
            units,
            weights: weights.try_into().expect("eight weights"),
            biases: biases.try_into().expect("eight biases"),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn units(&self) -> usize {
        self.units
    }

    pub fn weight(&self, name: &str) -> Option<ParamId> {
        WEIGHTS
            .iter()
            .position(|&w| w == name)
            .map(|k| self.weights[k])
    }

    pub fn bias(&self, name: &str) -> Option<ParamId> {
        BIASES
            .iter()
            .position(|&b| b == name)
            .map(|k| self.biases[k])
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.weights.iter().chain(&self.biases).copied().collect()
    }
}

fn bound(store: &ParamStore, name: &str, shape: &[usize]) -> Result<ParamId> {
    let id = store.require(name)?;
    if store.get(id).shape() != shape {
        return Err(Error::Integrity(format!(
            "parameter {name} has shape {:?}, expected {shape:?}",
            store.get(id).shape()
        )));
    }
    Ok(id)
}

/// Step schedule for a batch of sequence lengths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackPlan {
    lengths: Vec<usize>,
    /// Batch indices sorted by length, longest first (stable).
    order: Vec<usize>,
    /// `rank[b]` is the position of batch index `b` in `order`.
    rank: Vec<usize>,
    /// Number of running sequences at each step.
    active: Vec<usize>,
}

impl PackPlan {
    pub fn new(lengths: &[usize]) -> Self {
        let mut order: Vec<usize> = (0..lengths.len()).collect();
        order.sort_by(|&a, &b| lengths[b].cmp(&lengths[a]));
        let mut rank = vec![0; lengths.len()];
        for (r, &b) in order.iter().enumerate() {
            rank[b] = r;
        }
        let steps = lengths.iter().copied().max().unwrap_or(0);
        let active = (0..steps)
            .map(|t| lengths.iter().filter(|&&l| l > t).count())
            .collect();
        PackPlan {
            lengths: lengths.to_vec(),
            order,
            rank,
            active,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.lengths.len()
    }

    pub fn steps(&self) -> usize {
        self.active.len()
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn total(&self) -> usize {
        self.lengths.iter().sum()
    }

    /// For inputs stacked sequence by sequence (batch order), the row of each
    /// time-major slot: step 0 of every running sequence, then step 1, and so on.
    pub fn time_major_rows(&self) -> Vec<usize> {
        let mut starts = Vec::with_capacity(self.lengths.len());
        let mut off = 0;
        for &l in &self.lengths {
            starts.push(off);
            off += l;
        }
        let mut rows = Vec::with_capacity(off);
        for (t, &a) in self.active.iter().enumerate() {
            rows.extend(self.order[..a].iter().map(|&b| starts[b] + t));
        }
        rows
    }

    /// Inverse of [`time_major_rows`](Self::time_major_rows): for each batch-order
    /// row, its time-major slot.
    pub fn batch_major_rows(&self) -> Vec<usize> {
        let tm = self.time_major_rows();
        let mut inv = vec![0; tm.len()];
        for (slot, &row) in tm.iter().enumerate() {
            inv[row] = slot;
        }
        inv
    }
}

/// Result of running one layer over a packed batch.
#[derive(Debug, Clone, Copy)]
pub struct PackedOutput {
    /// Hidden states in time-major slot order `[plan.total() x U]`.
    pub hidden: Var,
    /// Final hidden state per sequence, batch order `[B x U]`; zero for empty sequences.
    pub final_h: Var,
    pub final_c: Var,
}

/// Runs `cell` over time-major inputs `[plan.total() x D_in]` from a zero state.
pub fn lstm_packed(
    g: &mut Graph,
    cell: &LstmCell,
    inputs: Var,
    plan: &PackPlan,
) -> Result<PackedOutput> {
    let u = cell.units;
    let b = plan.batch_size();
    if g.dims(inputs) != (plan.total(), cell.input_dim) {
        return Err(Error::Dimension(format!(
            "lstm inputs {:?}, expected {}x{}",
            g.dims(inputs),
            plan.total(),
            cell.input_dim
        )));
    }
    let w: Vec<Var> = cell.weights.iter().map(|&id| g.param(id)).collect();
    let bs: Vec<Var> = cell.biases.iter().map(|&id| g.param(id)).collect();
    let w_in = g.concat_cols(&w[..4])?;
    let w_rec = g.concat_cols(&w[4..])?;
    let b_in = g.concat_cols(&bs[..4])?;
    let b_rec = g.concat_cols(&bs[4..])?;
    let bias = g.add(b_in, b_rec)?;

    let mut steps_h = Vec::with_capacity(plan.steps());
    // Final (h, c) pieces, collected from the highest rank down.
    let mut fin_h = Vec::new();
    let mut fin_c = Vec::new();
    let zero_len = b - plan.active.first().copied().unwrap_or(0);
    if zero_len > 0 {
        fin_h.push(g.zeros(zero_len, u));
        fin_c.push(g.zeros(zero_len, u));
    }

    if plan.total() > 0 {
        let proj = g.matmul(inputs, w_in)?;
        let proj = g.add_row(proj, bias)?;
        let mut prev: Option<(Var, Var)> = None;
        let mut off = 0;
        for (t, &a) in plan.active.iter().enumerate() {
            let mut z = g.slice_rows(proj, off, a)?;
            off += a;
            if let Some((h, c)) = prev {
                let last = plan.active[t - 1];
                if a < last {
                    fin_h.push(g.slice_rows(h, a, last - a)?);
                    fin_c.push(g.slice_rows(c, a, last - a)?);
                }
                let h_run = g.slice_rows(h, 0, a)?;
                let rec = g.matmul(h_run, w_rec)?;
                z = g.add(z, rec)?;
            }
            let zi = g.slice(z, 0, a, 0, u)?;
            let zf = g.slice(z, 0, a, u, u)?;
            let zg = g.slice(z, 0, a, 2 * u, u)?;
            let zo = g.slice(z, 0, a, 3 * u, u)?;
            let i = g.sigmoid(zi);
            let f = g.sigmoid(zf);
            let gg = g.tanh(zg);
            let o = g.sigmoid(zo);
            let mut c = g.mul(i, gg)?;
            if let Some((_, c_prev)) = prev {
                let c_run = g.slice_rows(c_prev, 0, a)?;
                let keep = g.mul(f, c_run)?;
                c = g.add(keep, c)?;
            }
            let tc = g.tanh(c);
            let h = g.mul(o, tc)?;
            steps_h.push(h);
            prev = Some((h, c));
        }
        let (h, c) = prev.expect("at least one step");
        fin_h.push(h);
        fin_c.push(c);
    }

    fin_h.reverse();
    fin_c.reverse();
    let by_rank_h = g.concat_rows(&fin_h)?;
    let by_rank_c = g.concat_rows(&fin_c)?;
    let final_h = g.gather_rows(by_rank_h, &plan.rank)?;
    let final_c = g.gather_rows(by_rank_c, &plan.rank)?;
    let hidden = if steps_h.is_empty() {
        g.zeros(0, u)
    } else {
        g.concat_rows(&steps_h)?
    };
    Ok(PackedOutput {
        hidden,
        final_h,
        final_c,
    })
}

/// One application of the gate equations to a single input vector.
pub fn lstm_cell_step(
    store: &ParamStore,
    cell: &LstmCell,
    x: &[f64],
    state: &LstmState,
) -> Result<LstmState> {
    let u = cell.units;
    if x.len() != cell.input_dim || state.h.len() != u || state.c.len() != u {
        return Err(Error::Dimension(format!(
            "lstm step with input {} and state {}/{} for a {}x{u} cell",
            x.len(),
            state.h.len(),
            state.c.len(),
            cell.input_dim
        )));
    }
    let mut g = Graph::new(store);
    let xv = g.constant_matrix(1, x.len(), x.to_vec())?;
    let hv = g.constant_matrix(1, u, state.h.clone())?;
    let cv = g.constant_matrix(1, u, state.c.clone())?;
    let w: Vec<Var> = cell.weights.iter().map(|&id| g.param(id)).collect();
    let b: Vec<Var> = cell.biases.iter().map(|&id| g.param(id)).collect();
    let mut gates = Vec::with_capacity(4);
    for k in 0..4 {
        let xi = g.matmul(xv, w[k])?;
        let xi = g.add_row(xi, b[k])?;
        let hh = g.matmul(hv, w[k + 4])?;
        let hh = g.add_row(hh, b[k + 4])?;
        gates.push(g.add(xi, hh)?);
    }
    let i = g.sigmoid(gates[0]);
    let f = g.sigmoid(gates[1]);
    let gg = g.tanh(gates[2]);
    let o = g.sigmoid(gates[3]);
    let keep = g.mul(f, cv)?;
    let write = g.mul(i, gg)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c);
    let h = g.mul(o, tc)?;
    Ok(LstmState {
        h: g.value(h).to_vec(),
        c: g.value(c).to_vec(),
    })
}

/// Runs one sequence `[T x D_in]` through the layer. Rows at or past `true_length`
/// of the returned hidden sequence are zero and the final state is the one after
/// step `true_length`.
pub fn lstm_layer_forward(
    store: &ParamStore,
    cell: &LstmCell,
    inputs: &Tensor,
    true_length: usize,
) -> Result<(Tensor, LstmState)> {
    let (t, d) = inputs.matrix_dims();
    if true_length > t {
        return Err(Error::Usage(format!(
            "true length {true_length} exceeds {t} steps"
        )));
    }
    if d != cell.input_dim {
        return Err(Error::Dimension(format!(
            "inputs have width {d}, cell expects {}",
            cell.input_dim
        )));
    }
    let plan = PackPlan::new(&[true_length]);
    let mut g = Graph::new(store);
    let x = g.constant_matrix(true_length, d, inputs.data()[..true_length * d].to_vec())?;
    let out = lstm_packed(&mut g, cell, x, &plan)?;
    let mut hidden = g.value(out.hidden).to_vec();
    hidden.resize(t * cell.units, 0.0);
    let state = LstmState {
        h: g.value(out.final_h).to_vec(),
        c: g.value(out.final_c).to_vec(),
    };
    Ok((Tensor::new(vec![t, cell.units], hidden)?, state))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_cell(value: f64) -> (ParamStore, LstmCell) {
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "l.", 1, 1, &mut Rng::new(0)).unwrap();
        for id in cell.param_ids() {
            store.get_mut(id).data_mut().fill(0.0);
        }
        for id in cell.weights {
            store.get_mut(id).data_mut().fill(value);
        }
        (store, cell)
    }

    #[test]
    fn hand_case() {
        let (store, cell) = unit_cell(0.5);
        let s = lstm_cell_step(&store, &cell, &[1.0], &LstmState::zeros(1)).unwrap();
        let i = 1.0 / (1.0 + (-0.5f64).exp());
        let c = i * 0.5f64.tanh();
        assert!((i - 0.622459).abs() < 5e-7);
        assert_eq!(s.c[0], c);
        assert_eq!(s.h[0], i * c.tanh());
        assert!((s.c[0] - 0.287649).abs() < 5e-7);
        assert!((s.h[0] - 0.174270).abs() < 5e-7);
    }

    #[test]
    fn all_zero_cell() {
        let (store, cell) = unit_cell(0.0);
        let s = lstm_cell_step(&store, &cell, &[0.0], &LstmState::zeros(1)).unwrap();
        assert_eq!(s, LstmState::zeros(1));
    }

    #[test]
    fn forget_bias_init() {
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "l.", 3, 4, &mut Rng::new(0)).unwrap();
        assert!(store
            .get(cell.bias("b_if").unwrap())
            .data()
            .iter()
            .all(|&b| b == 1.0));
        assert!(store
            .get(cell.bias("b_hf").unwrap())
            .data()
            .iter()
            .all(|&b| b == 0.0));
        assert_eq!(store.get(cell.weight("w_hg").unwrap()).shape(), &[4, 4]);
    }

    #[test]
    fn plan_orders() {
        let plan = PackPlan::new(&[2, 0, 3, 1]);
        assert_eq!(plan.active(), &[3, 2, 1]);
        // batch-major rows: seq0 -> 0,1; seq2 -> 2,3,4; seq3 -> 5
        assert_eq!(plan.time_major_rows(), vec![2, 0, 5, 3, 1, 4]);
        let inv = plan.batch_major_rows();
        let tm = plan.time_major_rows();
        for (row, &slot) in inv.iter().enumerate() {
            assert_eq!(tm[slot], row);
        }
    }

    #[test]
    fn padding_does_not_change_final_state() {
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "l.", 2, 3, &mut Rng::new(4)).unwrap();
        let x = Tensor::new(vec![3, 2], vec![0.1, -0.4, 0.7, 0.2, -0.3, 0.9]).unwrap();
        let mut padded = x.data().to_vec();
        padded.extend([5.0, 5.0, -5.0, 5.0]);
        let xp = Tensor::new(vec![5, 2], padded).unwrap();
        let (h, s) = lstm_layer_forward(&store, &cell, &x, 3).unwrap();
        let (hp, sp) = lstm_layer_forward(&store, &cell, &xp, 3).unwrap();
        assert_eq!(s, sp);
        assert_eq!(&hp.data()[..9], h.data());
        assert!(hp.data()[9..].iter().all(|&v| v == 0.0));
        let (_, s0) = lstm_layer_forward(&store, &cell, &x, 0).unwrap();
        assert_eq!(s0, LstmState::zeros(3));
        assert!(matches!(
            lstm_layer_forward(&store, &cell, &x, 4),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn shape_errors() {
        let (store, cell) = unit_cell(0.5);
        assert!(matches!(
            lstm_cell_step(&store, &cell, &[1.0, 2.0], &LstmState::zeros(1)),
            Err(Error::Dimension(_))
        ));
    }
}
