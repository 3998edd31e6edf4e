//! Multi-step training of the derivative network.
//!
//! The loss is the mean squared discrepancy between recorded states and
//! the model's RK4 rollout over fixed-length windows sliced from the
//! training trajectories (discretize-then-optimize: gradients flow through
//! the unrolled integrator, so they are exact for the loss actually
//! computed). Optimization is Adam with seeded minibatch shuffling. After
//! every epoch the full training loss is evaluated; an epoch that
//! increases it is rolled back and the step size halved, which makes the
//! logged loss sequence non-increasing by construction.

use crate::error::{Error, Result};
use crate::integrate::{add_scaled, rk4_combine};
use crate::model::net::{backward_tape, forward_tape, Architecture, BackwardScratch, EvalTape, ModelParams};
use crate::model::{rollout_rows, RolloutScratch};
use crate::rng::RngStream;
use crate::types::Trajectory;

/// Recorded trajectories split into a fitting set and a held-out set used
/// only for error-bound calibration.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<Trajectory>,
    pub validation: Vec<Trajectory>,
}

impl Dataset {
    pub fn new(train: Vec<Trajectory>, validation: Vec<Trajectory>) -> Self {
        Dataset { train, validation }
    }

    /// Deterministic split: every `val_every`-th trajectory (the last in
    /// each group) goes to validation. Guarantees a non-empty validation
    /// split whenever at least one trajectory is supplied.
    pub fn split_every(trajectories: Vec<Trajectory>, val_every: usize) -> Self {
        assert!(val_every >= 2, "split period must be at least 2");
        let mut train = Vec::new();
        let mut validation = Vec::new();
        for (i, t) in trajectories.into_iter().enumerate() {
            if (i + 1) % val_every == 0 {
                validation.push(t);
            } else {
                train.push(t);
            }
        }
        if validation.is_empty() {
            if let Some(t) = train.pop() {
                validation.push(t);
            }
        }
        Dataset { train, validation }
    }
}

/// Training hyperparameters.
#[derive(Clone, Debug)]
pub struct TrainHyper {
    pub epochs: usize,
    /// Initial Adam step size; halved whenever an epoch fails to improve.
    pub learn_rate: f64,
    /// Windows per minibatch.
    pub batch_size: usize,
    pub seed: u64,
    /// Rollout length of each training window, in steps.
    pub window: usize,
    /// Offset between consecutive window starts within a trajectory.
    pub stride: usize,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            epochs: 80,
            learn_rate: 0.01,
            batch_size: 64,
            seed: 0,
            window: 10,
            stride: 5,
        }
    }
}

/// One training window: trajectory index and start step.
#[derive(Clone, Copy)]
struct Window {
    traj: usize,
    start: usize,
}

struct Batcher<'d> {
    trajs: &'d [Trajectory],
    xdim: usize,
    udim: usize,
    window: usize,
    x0s: Vec<f64>,
    controls: Vec<f64>,
    targets: Vec<f64>,
}

impl<'d> Batcher<'d> {
    fn new(trajs: &'d [Trajectory], xdim: usize, udim: usize, window: usize) -> Self {
        Batcher {
            trajs,
            xdim,
            udim,
            window,
            x0s: Vec::new(),
            controls: Vec::new(),
            targets: Vec::new(),
        }
    }

    /// Packs the given windows row-major into flat start-state, control,
    /// and target buffers.
    fn gather(&mut self, windows: &[Window]) {
        let (w, xd, ud) = (self.window, self.xdim, self.udim);
        let rows = windows.len();
        self.x0s.resize(rows * xd, 0.0);
        self.controls.resize(rows * w * ud, 0.0);
        self.targets.resize(rows * w * xd, 0.0);
        for (r, win) in windows.iter().enumerate() {
            let t = &self.trajs[win.traj];
            self.x0s[r * xd..(r + 1) * xd].copy_from_slice(t.states()[win.start].as_slice());
            for j in 0..w {
                let u = t.controls()[win.start + j].as_slice();
                self.controls[(r * w + j) * ud..(r * w + j + 1) * ud].copy_from_slice(u);
                let x = t.states()[win.start + j + 1].as_slice();
                self.targets[(r * w + j) * xd..(r * w + j + 1) * xd].copy_from_slice(x);
            }
        }
    }
}

/// Buffers for one batched forward/backward pass through an unrolled
/// window: four evaluation tapes per step plus state history.
struct UnrollScratch {
    tapes: Vec<EvalTape>,
    hist: Vec<f64>,
    inp: Vec<f64>,
    xt: Vec<f64>,
    adj: Vec<f64>,
    adj_next: Vec<f64>,
    ak: [Vec<f64>; 4],
    dinp: Vec<f64>,
    back: BackwardScratch,
}

impl UnrollScratch {
    fn new(window: usize) -> Self {
        UnrollScratch {
            tapes: (0..window * 4).map(|_| EvalTape::new()).collect(),
            hist: Vec::new(),
            inp: Vec::new(),
            xt: Vec::new(),
            adj: Vec::new(),
            adj_next: Vec::new(),
            ak: [Vec::new(), Vec::new(), Vec::new(), Vec::new()],
            dinp: Vec::new(),
            back: BackwardScratch::new(),
        }
    }
}

fn pack_inputs(inp: &mut [f64], xs: &[f64], controls: &[f64], rows: usize, xd: usize, ud: usize, w: usize, step: usize) {
    let indim = xd + ud;
    for r in 0..rows {
        inp[r * indim..r * indim + xd].copy_from_slice(&xs[r * xd..(r + 1) * xd]);
        let u = &controls[(r * w + step) * ud..(r * w + step + 1) * ud];
        inp[r * indim + xd..(r + 1) * indim].copy_from_slice(u);
    }
}

/// Forward pass over one minibatch with full tape recording. Returns the
/// summed squared error (not yet normalized).
fn unroll_forward(
    p: &ModelParams,
    batch: &Batcher,
    rows: usize,
    dt: f64,
    s: &mut UnrollScratch,
) -> f64 {
    let xd = batch.xdim;
    let ud = batch.udim;
    let w = batch.window;
    let indim = xd + ud;
    s.hist.resize((w + 1) * rows * xd, 0.0);
    s.inp.resize(rows * indim, 0.0);
    s.xt.resize(rows * xd, 0.0);
    s.hist[..rows * xd].copy_from_slice(&batch.x0s[..rows * xd]);

    let mut sse = 0.0;
    for j in 0..w {
        let (head, tail) = s.hist.split_at_mut((j + 1) * rows * xd);
        let xs = &head[j * rows * xd..];
        let xnext = &mut tail[..rows * xd];
        let half = dt * 0.5;
        // Stage 1.
        pack_inputs(&mut s.inp, xs, &batch.controls, rows, xd, ud, w, j);
        forward_tape(p, &s.inp, rows, &mut s.tapes[j * 4]);
        // Stage 2 input: x + dt/2 k1.
        for r in 0..rows {
            let k1 = &s.tapes[j * 4].output()[r * xd..(r + 1) * xd];
            add_scaled(&xs[r * xd..(r + 1) * xd], half, k1, &mut s.xt[r * xd..(r + 1) * xd]);
        }
        pack_inputs(&mut s.inp, &s.xt, &batch.controls, rows, xd, ud, w, j);
        forward_tape(p, &s.inp, rows, &mut s.tapes[j * 4 + 1]);
        // Stage 3 input: x + dt/2 k2.
        for r in 0..rows {
            let k2 = &s.tapes[j * 4 + 1].output()[r * xd..(r + 1) * xd];
            add_scaled(&xs[r * xd..(r + 1) * xd], half, k2, &mut s.xt[r * xd..(r + 1) * xd]);
        }
        pack_inputs(&mut s.inp, &s.xt, &batch.controls, rows, xd, ud, w, j);
        forward_tape(p, &s.inp, rows, &mut s.tapes[j * 4 + 2]);
        // Stage 4 input: x + dt k3.
        for r in 0..rows {
            let k3 = &s.tapes[j * 4 + 2].output()[r * xd..(r + 1) * xd];
            add_scaled(&xs[r * xd..(r + 1) * xd], dt, k3, &mut s.xt[r * xd..(r + 1) * xd]);
        }
        pack_inputs(&mut s.inp, &s.xt, &batch.controls, rows, xd, ud, w, j);
        forward_tape(p, &s.inp, rows, &mut s.tapes[j * 4 + 3]);
        // Combine.
        for r in 0..rows {
            let span = r * xd..(r + 1) * xd;
            let k1 = &s.tapes[j * 4].output()[span.clone()];
            let k2 = &s.tapes[j * 4 + 1].output()[span.clone()];
            let k3 = &s.tapes[j * 4 + 2].output()[span.clone()];
            let k4 = &s.tapes[j * 4 + 3].output()[span.clone()];
            rk4_combine(&xs[span.clone()], k1, k2, k3, k4, dt, &mut xnext[span]);
        }
        for r in 0..rows {
            for d in 0..xd {
                let e = xnext[r * xd + d] - batch.targets[(r * w + j) * xd + d];
                sse += e * e;
            }
        }
    }
    sse
}

/// Reverse pass matching [`unroll_forward`]. Accumulates parameter
/// gradients of the normalized loss into `grad`.
fn unroll_backward(
    p: &ModelParams,
    batch: &Batcher,
    rows: usize,
    dt: f64,
    norm: f64,
    s: &mut UnrollScratch,
    grad: &mut [f64],
) {
    let xd = batch.xdim;
    let ud = batch.udim;
    let w = batch.window;
    let indim = xd + ud;
    s.adj.resize(rows * xd, 0.0);
    s.adj.fill(0.0);
    s.adj_next.resize(rows * xd, 0.0);
    for buf in s.ak.iter_mut() {
        buf.resize(rows * xd, 0.0);
    }
    s.dinp.resize(rows * indim, 0.0);

    for j in (0..w).rev() {
        // Direct loss term of state j+1.
        let xnext = &s.hist[(j + 1) * rows * xd..(j + 2) * rows * xd];
        for r in 0..rows {
            for d in 0..xd {
                let e = xnext[r * xd + d] - batch.targets[(r * w + j) * xd + d];
                s.adj[r * xd + d] += 2.0 * e * norm;
            }
        }
        let half = dt * 0.5;
        let sixth = dt / 6.0;
        let third = dt / 3.0;
        // Adjoints of the four stage outputs from the combine step.
        for i in 0..rows * xd {
            s.ak[0][i] = sixth * s.adj[i];
            s.ak[1][i] = third * s.adj[i];
            s.ak[2][i] = third * s.adj[i];
            s.ak[3][i] = sixth * s.adj[i];
        }
        // Carry term: x_{j+1} depends on x_j directly.
        s.adj_next.copy_from_slice(&s.adj);
        // Reverse stage 4 (input x + dt k3).
        backward_tape(p, &s.tapes[j * 4 + 3], &s.ak[3], grad, &mut s.dinp, &mut s.back);
        for r in 0..rows {
            for d in 0..xd {
                let g = s.dinp[r * indim + d];
                s.adj_next[r * xd + d] += g;
                s.ak[2][r * xd + d] += dt * g;
            }
        }
        // Reverse stage 3 (input x + dt/2 k2).
        backward_tape(p, &s.tapes[j * 4 + 2], &s.ak[2], grad, &mut s.dinp, &mut s.back);
        for r in 0..rows {
            for d in 0..xd {
                let g = s.dinp[r * indim + d];
                s.adj_next[r * xd + d] += g;
                s.ak[1][r * xd + d] += half * g;
            }
        }
        // Reverse stage 2 (input x + dt/2 k1).
        backward_tape(p, &s.tapes[j * 4 + 1], &s.ak[1], grad, &mut s.dinp, &mut s.back);
        for r in 0..rows {
            for d in 0..xd {
                let g = s.dinp[r * indim + d];
                s.adj_next[r * xd + d] += g;
                s.ak[0][r * xd + d] += half * g;
            }
        }
        // Reverse stage 1 (input x_j itself).
        backward_tape(p, &s.tapes[j * 4], &s.ak[0], grad, &mut s.dinp, &mut s.back);
        for r in 0..rows {
            for d in 0..xd {
                s.adj_next[r * xd + d] += s.dinp[r * indim + d];
            }
        }
        std::mem::swap(&mut s.adj, &mut s.adj_next);
    }
}

/// Full-dataset loss (mean squared error per window step), evaluated in
/// chunks with the shared rollout kernel.
fn full_loss(
    p: &ModelParams,
    batch: &mut Batcher,
    windows: &[Window],
    dt: f64,
    scratch: &mut RolloutScratch,
) -> f64 {
    let xd = batch.xdim;
    let w = batch.window;
    let mut sse = 0.0;
    let mut states = Vec::new();
    let mut faults = Vec::new();
    for chunk in windows.chunks(256) {
        batch.gather(chunk);
        let rows = chunk.len();
        states.resize(rows * (w + 1) * xd, 0.0);
        faults.resize(rows, 0u8);
        rollout_rows(
            p,
            &batch.x0s,
            &batch.controls,
            rows,
            w,
            dt,
            scratch,
            &mut states,
            None,
            &mut faults,
        );
        if faults.iter().any(|&f| f != 0) {
            return f64::INFINITY;
        }
        for r in 0..rows {
            for j in 0..w {
                for d in 0..xd {
                    let pred = states[r * (w + 1) * xd + (j + 1) * xd + d];
                    let e = pred - batch.targets[(r * w + j) * xd + d];
                    sse += e * e;
                }
            }
        }
    }
    sse / (windows.len() * w) as f64
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t as i32);
        let c2 = 1.0 - B2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grad[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grad[i] * grad[i];
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= lr * mhat / (vhat.sqrt() + EPS);
        }
    }
}

fn slice_windows(trajs: &[Trajectory], window: usize, stride: usize) -> Vec<Window> {
    let mut out = Vec::new();
    for (ti, t) in trajs.iter().enumerate() {
        if t.len() < window {
            continue;
        }
        let mut start = 0;
        while start + window <= t.len() {
            out.push(Window { traj: ti, start });
            start += stride;
        }
    }
    out
}

fn shuffled(windows: &[Window], rng: &mut RngStream) -> Vec<Window> {
    let mut order: Vec<Window> = windows.to_vec();
    for i in (1..order.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        order.swap(i, j);
    }
    order
}

fn validate_dataset(trajs: &[Trajectory], arch: &Architecture) -> Result<f64> {
    let first = trajs
        .first()
        .ok_or_else(|| Error::Config("empty training split".into()))?;
    let dt = first.dt();
    for t in trajs {
        if t.states()[0].dim() != arch.xdim {
            return Err(Error::ModelShape(format!(
                "trajectory state dim {} does not match architecture {}",
                t.states()[0].dim(),
                arch.xdim
            )));
        }
        if !t.controls().is_empty() && t.controls()[0].dim() != arch.udim {
            return Err(Error::ModelShape(format!(
                "trajectory control dim {} does not match architecture {}",
                t.controls()[0].dim(),
                arch.udim
            )));
        }
        if (t.dt() - dt).abs() > 1e-12 {
            return Err(Error::Config("mixed dt across training trajectories".into()));
        }
    }
    Ok(dt)
}

/// Trains the derivative network and returns the per-epoch training loss
/// alongside the parameters. The loss history is non-increasing: epochs
/// that would increase the full training loss are rolled back (optimizer
/// state included) and the step size is halved.
pub fn train_with_history(
    dataset: &Dataset,
    arch: Architecture,
    hyper: &TrainHyper,
) -> Result<(ModelParams, Vec<f64>)> {
    arch.validate()?;
    if hyper.window == 0 || hyper.stride == 0 || hyper.batch_size == 0 {
        return Err(Error::Config("window, stride, batch_size must be positive".into()));
    }
    let dt = validate_dataset(&dataset.train, &arch)?;
    let windows = slice_windows(&dataset.train, hyper.window, hyper.stride);
    if windows.is_empty() {
        return Err(Error::Config(format!(
            "no training windows: trajectories shorter than window {}",
            hyper.window
        )));
    }

    let mut params = ModelParams::seeded_init(arch, hyper.seed);
    let mut batch = Batcher::new(&dataset.train, params.arch().xdim, params.arch().udim, hyper.window);
    let mut unroll = UnrollScratch::new(hyper.window);
    let mut rollout_scratch = RolloutScratch::new();
    let mut adam = Adam::new(params.raw().len());
    let mut grad = vec![0.0; params.raw().len()];
    let mut lr = hyper.learn_rate;
    let rng = RngStream::new(hyper.seed ^ 0x7355_6875_6666_6c65);

    let mut best = full_loss(&params, &mut batch, &windows, dt, &mut rollout_scratch);
    if !best.is_finite() {
        return Err(Error::TrainingDiverged { epoch: 0 });
    }
    let mut snapshot = params.clone();
    let mut history = Vec::with_capacity(hyper.epochs);

    for epoch in 1..=hyper.epochs {
        let order = shuffled(&windows, &mut rng.child(epoch as u64));
        for chunk in order.chunks(hyper.batch_size) {
            batch.gather(chunk);
            let rows = chunk.len();
            let sse = unroll_forward(&params, &batch, rows, dt, &mut unroll);
            if !sse.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            grad.fill(0.0);
            let norm = 1.0 / (rows * hyper.window) as f64;
            unroll_backward(&params, &batch, rows, dt, norm, &mut unroll, &mut grad);
            if !grad.iter().all(|g| g.is_finite()) {
                return Err(Error::TrainingDiverged { epoch });
            }
            adam.step(params.raw_mut(), &grad, lr);
        }
        let loss = full_loss(&params, &mut batch, &windows, dt, &mut rollout_scratch);
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        if loss > best {
            // Roll back the epoch, drop the momentum that caused the
            // overshoot, and try again more carefully. Restarting the
            // moments matters: with them restored, the rejected ascent
            // direction would replay at every step size.
            params = snapshot.clone();
            adam = Adam::new(params.raw().len());
            lr = (lr * 0.5).max(1e-8);
            history.push(best);
        } else {
            best = loss;
            snapshot = params.clone();
            history.push(loss);
        }
        log::debug!("epoch {epoch}: train loss {:.6e} (lr {lr:.2e})", history.last().unwrap());
    }
    Ok((params, history))
}

/// Trains the derivative network; see [`train_with_history`].
pub fn train(dataset: &Dataset, arch: Architecture, hyper: &TrainHyper) -> Result<ModelParams> {
    train_with_history(dataset, arch, hyper).map(|(p, _)| p)
}

/// Mean squared window-prediction error of fixed parameters on the given
/// trajectories — the same quantity [`train_with_history`] minimizes,
/// usable on a held-out split. Returns infinity if a rollout leaves the
/// representable range.
pub fn evaluate_loss(
    params: &ModelParams,
    trajectories: &[Trajectory],
    window: usize,
    stride: usize,
) -> Result<f64> {
    if window == 0 || stride == 0 {
        return Err(Error::Config("window and stride must be positive".into()));
    }
    let dt = validate_dataset(trajectories, &params.arch())?;
    let windows = slice_windows(trajectories, window, stride);
    if windows.is_empty() {
        return Err(Error::Config(format!(
            "no evaluation windows: trajectories shorter than window {window}"
        )));
    }
    let mut batch = Batcher::new(trajectories, params.arch().xdim, params.arch().udim, window);
    let mut scratch = RolloutScratch::new();
    Ok(full_loss(params, &mut batch, &windows, dt, &mut scratch))
}

/// [`evaluate_loss`] plus its exact gradient with respect to every
/// parameter, computed by the same reverse pass training uses. Errors if
/// the loss or gradient is not finite.
pub fn loss_and_gradient(
    params: &ModelParams,
    trajectories: &[Trajectory],
    window: usize,
    stride: usize,
) -> Result<(f64, Vec<f64>)> {
    if window == 0 || stride == 0 {
        return Err(Error::Config("window and stride must be positive".into()));
    }
    let dt = validate_dataset(trajectories, &params.arch())?;
    let windows = slice_windows(trajectories, window, stride);
    if windows.is_empty() {
        return Err(Error::Config(format!(
            "no evaluation windows: trajectories shorter than window {window}"
        )));
    }
    let mut batch = Batcher::new(trajectories, params.arch().xdim, params.arch().udim, window);
    let mut unroll = UnrollScratch::new(window);
    let mut grad = vec![0.0; params.raw().len()];
    let norm = 1.0 / (windows.len() * window) as f64;
    let mut sse = 0.0;
    for chunk in windows.chunks(256) {
        batch.gather(chunk);
        let rows = chunk.len();
        sse += unroll_forward(params, &batch, rows, dt, &mut unroll);
        unroll_backward(params, &batch, rows, dt, norm, &mut unroll, &mut grad);
    }
    let loss = sse * norm;
    if !loss.is_finite() || !grad.iter().all(|g| g.is_finite()) {
        return Err(Error::TrainingDiverged { epoch: 0 });
    }
    Ok((loss, grad))
}
