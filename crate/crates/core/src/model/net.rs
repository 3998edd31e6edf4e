//! Fully connected derivative network: parameter layout, batched forward
//! pass, and reverse-mode differentiation.
//!
//! Weights are stored flat, transposed per layer as `[input][output]`, so
//! the forward pass accumulates each input feature's contribution across
//! the whole output row (good vectorization, weights stay cache-resident
//! across batch rows). Every forward evaluation in the crate goes through
//! [`forward_tape`]; per-row arithmetic is independent of the batch size,
//! which makes a state rolled out inside a large candidate batch
//! bit-identical to the same state rolled out alone.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::act;

/// Hidden-layer nonlinearity. Only tanh is shipped; the descriptor exists
/// so checkpoints are self-describing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
}

/// Network shape: input is the concatenated state and control, output is
/// the state derivative. `hidden` may be empty, giving a purely linear map
/// (used to fit known linear systems exactly).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub xdim: usize,
    pub udim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Architecture {
    /// Default shape: two hidden layers of 64 tanh units.
    pub fn mlp(xdim: usize, udim: usize) -> Self {
        Architecture {
            xdim,
            udim,
            hidden: vec![64, 64],
            activation: Activation::Tanh,
        }
    }

    /// Purely linear map from `[x; u]` to the derivative.
    pub fn linear(xdim: usize, udim: usize) -> Self {
        Architecture {
            xdim,
            udim,
            hidden: vec![],
            activation: Activation::Tanh,
        }
    }

    pub fn with_hidden(xdim: usize, udim: usize, hidden: Vec<usize>) -> Self {
        Architecture {
            xdim,
            udim,
            hidden,
            activation: Activation::Tanh,
        }
    }

    /// Layer widths including input and output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.xdim + self.udim);
        w.extend_from_slice(&self.hidden);
        w.push(self.xdim);
        w
    }

    pub fn layer_count(&self) -> usize {
        self.hidden.len() + 1
    }

    pub fn param_count(&self) -> usize {
        let w = self.widths();
        w.windows(2).map(|p| (p[0] + 1) * p[1]).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.xdim == 0 || self.udim == 0 {
            return Err(Error::Config("architecture dims must be positive".into()));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }
}

/// Flat network parameters paired with their architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelParamsRepr")]
pub struct ModelParams {
    arch: Architecture,
    params: Vec<f64>,
}

/// Wire format of [`ModelParams`]; deserialization funnels through
/// [`ModelParams::from_raw`] so malformed checkpoints are rejected.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelParamsRepr {
    arch: Architecture,
    params: Vec<f64>,
}

impl TryFrom<ModelParamsRepr> for ModelParams {
    type Error = Error;

    fn try_from(repr: ModelParamsRepr) -> Result<Self> {
        ModelParams::from_raw(repr.arch, repr.params)
    }
}

impl ModelParams {
    pub fn zeros(arch: Architecture) -> Self {
        let n = arch.param_count();
        ModelParams {
            arch,
            params: vec![0.0; n],
        }
    }

    /// Deterministic initialization: weights gaussian with stddev
    /// 1/sqrt(fan-in), biases zero.
    pub fn seeded_init(arch: Architecture, seed: u64) -> Self {
        let mut rng = crate::rng::RngStream::new(seed);
        let widths = arch.widths();
        let mut params = Vec::with_capacity(arch.param_count());
        for pair in widths.windows(2) {
            let (nin, nout) = (pair[0], pair[1]);
            let scale = 1.0 / (nin as f64).sqrt();
            for _ in 0..nin * nout {
                params.push(scale * rng.next_gaussian());
            }
            params.extend(std::iter::repeat(0.0).take(nout));
        }
        ModelParams { arch, params }
    }

    /// Rebuild from raw parts, validating the parameter count.
    pub fn from_raw(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(Error::ModelShape(format!(
                "expected {} parameters for architecture, got {}",
                arch.param_count(),
                params.len()
            )));
        }
        if !params.iter().all(|p| p.is_finite()) {
            return Err(Error::ModelShape("non-finite parameter".into()));
        }
        Ok(ModelParams { arch, params })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn raw(&self) -> &[f64] {
        &self.params
    }

    pub fn raw_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Offset of layer `l`'s transposed weight block; the bias block of
    /// `nout` entries follows it.
    fn layer_offset(&self, layer: usize) -> usize {
        let w = self.arch.widths();
        w.windows(2).take(layer).map(|p| (p[0] + 1) * p[1]).sum()
    }

    /// For linear architectures: the effective matrix `M` with
    /// `dx/dt = M · [x; u]`, row-major `xdim × (xdim + udim)`. Bias ignored.
    pub fn linear_matrix(&self) -> Option<Vec<f64>> {
        if !self.arch.hidden.is_empty() {
            return None;
        }
        let nin = self.arch.xdim + self.arch.udim;
        let nout = self.arch.xdim;
        let mut m = vec![0.0; nin * nout];
        for k in 0..nin {
            for o in 0..nout {
                m[o * nin + k] = self.params[k * nout + o];
            }
        }
        Some(m)
    }
}

/// Forward-pass record for one batched evaluation: the input rows, each
/// layer's pre-activations, and each hidden layer's activations. Reused
/// across evaluations; buffers grow on demand.
#[derive(Default)]
pub struct EvalTape {
    pub(crate) input: Vec<f64>,
    pub(crate) pre: Vec<Vec<f64>>,
    pub(crate) post: Vec<Vec<f64>>,
    pub(crate) rows: usize,
}

impl EvalTape {
    pub fn new() -> Self {
        EvalTape::default()
    }

    fn ensure(&mut self, arch: &Architecture, rows: usize) {
        let widths = arch.widths();
        let layers = arch.layer_count();
        self.input.resize(rows * widths[0], 0.0);
        self.pre.resize_with(layers, Vec::new);
        self.post.resize_with(layers.saturating_sub(1), Vec::new);
        for l in 0..layers {
            self.pre[l].resize(rows * widths[l + 1], 0.0);
            if l + 1 < layers {
                self.post[l].resize(rows * widths[l + 1], 0.0);
            }
        }
        self.rows = rows;
    }

    /// Network output rows (last layer is linear, so its pre-activation is
    /// the output).
    pub fn output(&self) -> &[f64] {
        self.pre.last().expect("forward_tape not called")
    }
}

/// One dense layer on `rows` packed rows: `out = in · Wt + b`, with `Wt`
/// in `[input][output]` layout.
fn dense_rows(inp: &[f64], rows: usize, nin: usize, nout: usize, wt: &[f64], b: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        let row_in = &inp[r * nin..(r + 1) * nin];
        let row_out = &mut out[r * nout..(r + 1) * nout];
        row_out.copy_from_slice(b);
        for (k, &xv) in row_in.iter().enumerate() {
            let wrow = &wt[k * nout..(k + 1) * nout];
            for (o, &w) in row_out.iter_mut().zip(wrow) {
                *o += xv * w;
            }
        }
    }
}

/// Batched forward pass over `rows` inputs of width `xdim + udim`, packed
/// row-major in `inp`. Records everything reverse mode needs.
pub fn forward_tape(p: &ModelParams, inp: &[f64], rows: usize, tape: &mut EvalTape) {
    let arch = &p.arch;
    let widths = arch.widths();
    debug_assert_eq!(inp.len(), rows * widths[0]);
    tape.ensure(arch, rows);
    tape.input[..rows * widths[0]].copy_from_slice(inp);
    let layers = arch.layer_count();
    for l in 0..layers {
        let (nin, nout) = (widths[l], widths[l + 1]);
        let off = p.layer_offset(l);
        let wt = &p.params[off..off + nin * nout];
        let b = &p.params[off + nin * nout..off + nin * nout + nout];
        // Split borrows: the layer input is either the tape input or the
        // previous hidden activation.
        if l == 0 {
            dense_rows(&tape.input, rows, nin, nout, wt, b, &mut tape.pre[l]);
        } else {
            let (posts, pres) = (&tape.post, &mut tape.pre);
            dense_rows(&posts[l - 1], rows, nin, nout, wt, b, &mut pres[l]);
        }
        if l + 1 < layers {
            let pre = &tape.pre[l];
            let post = &mut tape.post[l];
            for i in 0..rows * nout {
                post[i] = act::tanh(pre[i]);
            }
        }
    }
}

/// Reverse-mode pass for one recorded forward evaluation.
///
/// `dout` is the adjoint of the network output (`rows × xdim`). Parameter
/// gradients are accumulated into `grad` (same layout as the flat
/// parameters); the adjoint of the input rows is written to `dinp`
/// (`rows × (xdim + udim)`).
pub fn backward_tape(
    p: &ModelParams,
    tape: &EvalTape,
    dout: &[f64],
    grad: &mut [f64],
    dinp: &mut [f64],
    scratch: &mut BackwardScratch,
) {
    let arch = &p.arch;
    let widths = arch.widths();
    let rows = tape.rows;
    let layers = arch.layer_count();
    debug_assert_eq!(dout.len(), rows * widths[layers]);
    debug_assert_eq!(grad.len(), p.params.len());
    debug_assert_eq!(dinp.len(), rows * widths[0]);

    scratch.ensure(rows, &widths);
    scratch.dpre.resize(rows * widths[layers], 0.0);
    scratch.dpre.copy_from_slice(dout);

    for l in (0..layers).rev() {
        let (nin, nout) = (widths[l], widths[l + 1]);
        let off = p.layer_offset(l);
        let wt = &p.params[off..off + nin * nout];
        let layer_in: &[f64] = if l == 0 { &tape.input } else { &tape.post[l - 1] };
        let (gw, gb) = grad[off..off + (nin + 1) * nout].split_at_mut(nin * nout);
        let din = if l == 0 {
            &mut dinp[..rows * nin]
        } else {
            scratch.din.resize(rows * nin, 0.0);
            &mut scratch.din[..rows * nin]
        };
        for r in 0..rows {
            let drow = &scratch.dpre[r * nout..(r + 1) * nout];
            let in_row = &layer_in[r * nin..(r + 1) * nin];
            for (o, &d) in drow.iter().enumerate() {
                gb[o] += d;
            }
            let din_row = &mut din[r * nin..(r + 1) * nin];
            for k in 0..nin {
                let wrow = &wt[k * nout..(k + 1) * nout];
                let gwrow = &mut gw[k * nout..(k + 1) * nout];
                let xv = in_row[k];
                let mut acc = 0.0;
                for (o, &d) in drow.iter().enumerate() {
                    gwrow[o] += xv * d;
                    acc += wrow[o] * d;
                }
                din_row[k] = acc;
            }
        }
        if l > 0 {
            // Chain through the hidden activation into the next dpre.
            let pre = &tape.pre[l - 1];
            scratch.dpre.resize(rows * nin, 0.0);
            for i in 0..rows * nin {
                scratch.dpre[i] = scratch.din[i] * act::dtanh(pre[i]);
            }
        }
    }
}

/// Reusable buffers for [`backward_tape`].
#[derive(Default)]
pub struct BackwardScratch {
    dpre: Vec<f64>,
    din: Vec<f64>,
}

impl BackwardScratch {
    pub fn new() -> Self {
        BackwardScratch::default()
    }

    fn ensure(&mut self, rows: usize, widths: &[usize]) {
        let max_w = widths.iter().copied().max().unwrap_or(0);
        self.dpre.reserve(rows * max_w);
        self.din.reserve(rows * max_w);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_count_matches_layout() {
        let arch = Architecture::with_hidden(3, 2, vec![8, 8]);
        // weights 5x8 + 8x8 + 8x3, biases 8 + 8 + 3
        assert_eq!(arch.param_count(), 40 + 8 + 64 + 8 + 24 + 3);
        assert_eq!(ModelParams::zeros(arch).raw().len(), 40 + 8 + 64 + 8 + 24 + 3);
    }

    #[test]
    fn zero_params_give_zero_output() {
        let p = ModelParams::zeros(Architecture::mlp(3, 2));
        let mut tape = EvalTape::new();
        forward_tape(&p, &[0.3, -0.4, 1.0, 0.5, -0.5], 1, &mut tape);
        assert_eq!(tape.output(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn linear_layer_is_matrix_product() {
        let arch = Architecture::linear(2, 1);
        let mut p = ModelParams::zeros(arch);
        // Wt layout [in][out], in = 3, out = 2. Want M = [[1, 2, 3], [4, 5, 6]].
        let wt = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        p.raw_mut()[..6].copy_from_slice(&wt);
        let mut tape = EvalTape::new();
        forward_tape(&p, &[1.0, -1.0, 2.0], 1, &mut tape);
        assert_eq!(tape.output(), &[1.0 - 2.0 + 6.0, 4.0 - 5.0 + 12.0]);
        let m = p.linear_matrix().unwrap();
        assert_eq!(m, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn batched_rows_match_single_rows() {
        let p = ModelParams::seeded_init(Architecture::with_hidden(3, 1, vec![16, 16]), 7);
        let inputs: Vec<Vec<f64>> = (0..5)
            .map(|i| (0..4).map(|j| ((i * 4 + j) as f64 * 0.13).sin()).collect())
            .collect();
        let flat: Vec<f64> = inputs.iter().flatten().copied().collect();
        let mut tape = EvalTape::new();
        forward_tape(&p, &flat, 5, &mut tape);
        let batched = tape.output().to_vec();
        for (i, row) in inputs.iter().enumerate() {
            let mut single = EvalTape::new();
            forward_tape(&p, row, 1, &mut single);
            assert_eq!(&batched[i * 3..(i + 1) * 3], single.output(), "row {i}");
        }
    }

    /// Parameter and input gradients against central finite differences on
    /// a scalar loss (sum of outputs squared).
    #[test]
    fn backward_matches_finite_differences() {
        let arch = Architecture::with_hidden(2, 1, vec![5]);
        let p = ModelParams::seeded_init(arch, 3);
        let inp = [0.4, -0.7, 0.2, -0.1, 0.3, 0.9];
        let rows = 2;

        let loss = |p: &ModelParams, inp: &[f64]| -> f64 {
            let mut tape = EvalTape::new();
            forward_tape(p, inp, rows, &mut tape);
            tape.output().iter().map(|o| o * o).sum()
        };

        let mut tape = EvalTape::new();
        forward_tape(&p, &inp, rows, &mut tape);
        let dout: Vec<f64> = tape.output().iter().map(|o| 2.0 * o).collect();
        let mut grad = vec![0.0; p.raw().len()];
        let mut dinp = vec![0.0; inp.len()];
        backward_tape(&p, &tape, &dout, &mut grad, &mut dinp, &mut BackwardScratch::new());

        let h = 1e-6;
        for idx in [0usize, 3, 7, 11, 15, grad.len() - 1] {
            let mut pp = p.clone();
            pp.raw_mut()[idx] += h;
            let up = loss(&pp, &inp);
            pp.raw_mut()[idx] -= 2.0 * h;
            let dn = loss(&pp, &inp);
            let fd = (up - dn) / (2.0 * h);
            assert!(
                (fd - grad[idx]).abs() <= 1e-6 + 1e-5 * fd.abs(),
                "param {idx}: fd {fd} vs analytic {}",
                grad[idx]
            );
        }
        for idx in 0..inp.len() {
            let mut ip = inp;
            ip[idx] += h;
            let up = loss(&p, &ip);
            ip[idx] -= 2.0 * h;
            let dn = loss(&p, &ip);
            let fd = (up - dn) / (2.0 * h);
            assert!(
                (fd - dinp[idx]).abs() <= 1e-6 + 1e-5 * fd.abs(),
                "input {idx}: fd {fd} vs analytic {}",
                dinp[idx]
            );
        }
    }

    #[test]
    fn from_raw_rejects_wrong_count() {
        let arch = Architecture::linear(2, 1);
        assert!(ModelParams::from_raw(arch.clone(), vec![0.0; 3]).is_err());
        assert!(ModelParams::from_raw(arch, vec![0.0; 8]).is_ok());
    }
}
