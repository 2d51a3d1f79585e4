//! Training by backpropagation through time.
//!
//! Loss: mean over batch and time of the cross-entropy between the target code
//! and `softmax(W_out r)`, plus `λ ‖W_rec‖²_F`. Gradients are derived by hand
//! (see [`gradients`]) and applied with Adam after global-norm clipping.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Array3, ArrayView2, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{trajectory_mse, RateMap, RateMapAccumulator, TrajectoryError};
use crate::codec::{PlaceCellEnsemble, DEFAULT_DECODE_TOP_K};
use crate::error::{Error, Result};
use crate::network::{
    check_alpha, forward_batch, save_checkpoint, BatchTrace, CheckpointMeta, LeakyRnnParams,
};
use crate::noise::{corrupt_speeds, noise_stream, rebuild_velocity, NoiseConfig};
use crate::rng::domain;
use crate::scalar::Scalar;
use crate::trajectory::{generate_indexed, ArenaConfig, MotionConfig, CM_PER_M};

/// What the network sees as its velocity input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InputUnits {
    /// Displacement per step in metres.
    #[default]
    MetresPerStep,
    MetresPerSecond,
    CentimetresPerSecond,
}

impl InputUnits {
    /// Factor taking a speed in cm/s to these units.
    pub fn scale(self, dt: f64) -> f64 {
        match self {
            InputUnits::MetresPerStep => dt / CM_PER_M,
            InputUnits::MetresPerSecond => 1.0 / CM_PER_M,
            InputUnits::CentimetresPerSecond => 1.0,
        }
    }
}

/// How place-cell codes become cross-entropy targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// Shift each code by its minimum and renormalise to a distribution.
    #[default]
    Shifted,
    /// The zero-sum code as is.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub seq_len: usize,
    pub lambda_reg: f64,
    pub learning_rate: f64,
    pub n_steps: usize,
    pub seed: u64,
    pub alpha: f64,
    pub grad_clip: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub target_mode: TargetMode,
    pub input_units: InputUnits,
    /// Loss-curve sampling period (steps).
    pub log_every: usize,
    /// Held-out trajectories for the final decoding error.
    pub eval_trajectories: usize,
    /// Loss above which training stops as diverged.
    pub divergence_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 200,
            seq_len: 20,
            lambda_reg: 1e-4,
            learning_rate: 1e-4,
            n_steps: 2000,
            seed: 0,
            alpha: 0.9,
            grad_clip: Some(1.0),
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            target_mode: TargetMode::Shifted,
            input_units: InputUnits::MetresPerStep,
            log_every: 10,
            eval_trajectories: 256,
            divergence_threshold: 1e6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if self.batch_size == 0 || self.seq_len == 0 {
            return Err(Error::config("batch_size and seq_len must be at least 1"));
        }
        if !(self.lambda_reg >= 0.0 && self.lambda_reg.is_finite()) {
            return Err(Error::config("lambda_reg must be >= 0"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be > 0"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::config("grad_clip must be > 0 when set"));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return Err(Error::config("Adam betas must lie in [0, 1) and epsilon be > 0"));
        }
        if self.log_every == 0 {
            return Err(Error::config("log_every must be at least 1"));
        }
        Ok(())
    }
}

/// Everything that defines the supervised task, independent of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub arena: ArenaConfig,
    pub motion: MotionConfig,
    pub ensemble: PlaceCellEnsemble,
    pub noise: NoiseConfig,
    pub input_units: InputUnits,
    pub target_mode: TargetMode,
}

impl Task {
    pub fn validate(&self) -> Result<()> {
        self.arena.validate()?;
        self.motion.validate()?;
        self.noise.validate()?;
        self.ensemble.validate()?;
        self.ensemble.check_inside(&self.arena)
    }
}

/// One batch of supervised sequences.
#[derive(Debug, Clone)]
pub struct Batch<F: Scalar> {
    /// `B × N_p` codes of the start positions.
    pub init_codes: Array2<F>,
    /// `T × B × 2` velocity inputs.
    pub inputs: Array3<F>,
    /// `T` targets of shape `B × N_p` for steps `1..=T`.
    pub targets: Vec<Array2<F>>,
    /// True positions `0..=T` per trajectory (cm).
    pub positions: Vec<Vec<[f64; 2]>>,
    /// Noisy speeds clamped to zero.
    pub clamped: usize,
}

impl<F: Scalar> Batch<F> {
    pub fn len(&self) -> usize {
        self.init_codes.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn seq_len(&self) -> usize {
        self.targets.len()
    }
}

fn target_code<F: Scalar>(ensemble: &PlaceCellEnsemble, p: [f64; 2], mode: TargetMode) -> Vec<F> {
    let code: ndarray::Array1<f64> = ensemble.encode(p);
    match mode {
        TargetMode::Raw => code.iter().map(|v| F::lit(*v)).collect(),
        TargetMode::Shifted => {
            let min = code.iter().copied().fold(f64::INFINITY, f64::min);
            let total: f64 = code.iter().map(|v| v - min).sum();
            code.iter().map(|v| F::lit((v - min) / total)).collect()
        }
    }
}

/// Builds batch `step` of the stream `(seed, stream_tag)`. Trajectory `b`
/// only depends on `(seed, stream_tag, step, b)`.
pub fn make_batch<F: Scalar>(
    task: &Task,
    batch_size: usize,
    seq_len: usize,
    seed: u64,
    stream_tag: u64,
    step: u64,
) -> Result<Batch<F>> {
    let np = task.ensemble.n_cells();
    let scale = task.input_units.scale(task.arena.dt);
    let rows: Vec<_> = (0..batch_size as u64)
        .into_par_iter()
        .map(|b| -> Result<_> {
            let traj = generate_indexed(&task.arena, &task.motion, seq_len, seed, &[stream_tag, step, b])?;
            let clean: Vec<f64> = traj.speeds.iter().map(|s| s * scale).collect();
            let mut rng = noise_stream(&task.noise, &[seed, stream_tag, step, b]);
            let noisy = corrupt_speeds(&clean, &task.noise, task.arena.dt, &mut rng)?;
            let vel: Vec<[f64; 2]> = noisy
                .speeds
                .iter()
                .zip(&traj.headings)
                .map(|(s, h)| rebuild_velocity(*s, *h))
                .collect();
            let init = target_code::<F>(&task.ensemble, traj.positions[0], TargetMode::Raw);
            let targets: Vec<Vec<F>> = traj.positions[1..]
                .iter()
                .map(|p| target_code(&task.ensemble, *p, task.target_mode))
                .collect();
            Ok((init, vel, targets, traj.positions, noisy.clamped))
        })
        .collect::<Result<_>>()?;

    let mut init_codes = Array2::zeros((batch_size, np));
    let mut inputs = Array3::zeros((seq_len, batch_size, 2));
    let mut targets = vec![Array2::zeros((batch_size, np)); seq_len];
    let mut positions = Vec::with_capacity(batch_size);
    let mut clamped = 0;
    for (b, (init, vel, tg, pos, c)) in rows.into_iter().enumerate() {
        init_codes.row_mut(b).iter_mut().zip(init).for_each(|(d, v)| *d = v);
        for t in 0..seq_len {
            inputs[[t, b, 0]] = F::lit(vel[t][0]);
            inputs[[t, b, 1]] = F::lit(vel[t][1]);
            targets[t].row_mut(b).iter_mut().zip(&tg[t]).for_each(|(d, v)| *d = *v);
        }
        positions.push(pos);
        clamped += c;
    }
    Ok(Batch {
        init_codes,
        inputs,
        targets,
        positions,
        clamped,
    })
}

/// Cross-entropy `-Σ_k p_k log softmax(y)_k` of one row, and its gradient
/// `softmax(y) Σp - p` written into `grad`.
pub fn softmax_cross_entropy<F: Scalar>(logits: &[F], target: &[F], grad: Option<&mut [F]>) -> F {
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let mut z = F::zero();
    for y in logits {
        z += (*y - max).exp();
    }
    let lse = max + z.ln();
    let mut ce = F::zero();
    let mut mass = F::zero();
    for (y, p) in logits.iter().zip(target) {
        ce += *p * (lse - *y);
        mass += *p;
    }
    if let Some(g) = grad {
        for ((g, y), p) in g.iter_mut().zip(logits).zip(target) {
            *g = (*y - max).exp() / z * mass - *p;
        }
    }
    ce
}

/// Mean cross-entropy over batch and time plus `λ ‖W_rec‖²_F`.
///
/// `predictions[t]` and `targets[t]` are `B × N_p`. A non-finite term reports
/// the offending trajectory (row) and step.
pub fn loss<F: Scalar>(
    predictions: &[Array2<F>],
    targets: &[Array2<F>],
    w_rec: ArrayView2<'_, F>,
    lambda_reg: f64,
) -> Result<f64> {
    if predictions.len() != targets.len() || predictions.is_empty() {
        return Err(Error::Shape(format!(
            "{} prediction steps vs {} target steps",
            predictions.len(),
            targets.len()
        )));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (t, (y, p)) in predictions.iter().zip(targets).enumerate() {
        if y.dim() != p.dim() {
            return Err(Error::Shape(format!("step {t}: {:?} vs {:?}", y.dim(), p.dim())));
        }
        for (b, (yr, pr)) in y.outer_iter().zip(p.outer_iter()).enumerate() {
            let ce = softmax_cross_entropy(
                yr.as_slice().expect("row-major"),
                pr.as_slice().expect("row-major"),
                None,
            )
            .as_f64();
            if !ce.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("loss of trajectory {b}"),
                    step: t,
                });
            }
            total += ce;
            count += 1;
        }
    }
    let reg: f64 = w_rec.iter().map(|w| w.as_f64() * w.as_f64()).sum();
    Ok(total / count as f64 + lambda_reg * reg)
}

/// Parameter-shaped gradient (or optimiser moment) tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F: Scalar> {
    pub w_init: Array2<F>,
    pub w_rec: Array2<F>,
    pub w_in: Array2<F>,
    pub w_out: Array2<F>,
}

impl<F: Scalar> Gradients<F> {
    pub fn zeros_like(params: &LeakyRnnParams<F>) -> Self {
        Self {
            w_init: Array2::zeros(params.w_init.dim()),
            w_rec: Array2::zeros(params.w_rec.dim()),
            w_in: Array2::zeros(params.w_in.dim()),
            w_out: Array2::zeros(params.w_out.dim()),
        }
    }

    pub fn tensors(&self) -> [(&'static str, &Array2<F>); 4] {
        [
            ("w_init", &self.w_init),
            ("w_rec", &self.w_rec),
            ("w_in", &self.w_in),
            ("w_out", &self.w_out),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Array2<F>; 4] {
        [
            &mut self.w_init,
            &mut self.w_rec,
            &mut self.w_in,
            &mut self.w_out,
        ]
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter())
            .map(|g| g.as_f64() * g.as_f64())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, c: F) {
        for t in self.tensors_mut() {
            t.mapv_inplace(|g| g * c);
        }
    }
}

/// Loss and exact gradients on one batch.
///
/// Backward recursion, with `g_r[t]` the total gradient reaching `r[t]`:
/// `g_r[t] = dY[t] W_out + (1-α) g_r[t+1] + g_u[t+1] W_rec` and
/// `g_u[t] = α g_r[t] ⊙ 1[u[t] > 0]`; at `t = 0` the lift has no leak, so
/// `g_u[0] = g_r[0] ⊙ 1[u[0] > 0]`.
pub fn gradients<F: Scalar>(
    params: &LeakyRnnParams<F>,
    batch: &Batch<F>,
    lambda_reg: f64,
) -> Result<(f64, Gradients<F>, BatchTrace<F>)> {
    if batch.is_empty() {
        return Err(Error::config("empty batch"));
    }
    let trace = forward_batch(params, batch.init_codes.view(), batch.inputs.view())?;
    let l = loss(&trace.predictions, &batch.targets, params.w_rec.view(), lambda_reg)?;
    let grads = backward(params, batch, &trace, lambda_reg);
    for (name, g) in grads.tensors() {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("gradient of {name}"),
                step: 0,
            });
        }
    }
    Ok((l, grads, trace))
}

fn backward<F: Scalar>(
    params: &LeakyRnnParams<F>,
    batch: &Batch<F>,
    trace: &BatchTrace<F>,
    lambda_reg: f64,
) -> Gradients<F> {
    let steps = trace.predictions.len();
    let nb = batch.len();
    let n = params.n_rec();
    let a = params.alpha();
    let keep = F::one() - a;
    let scale = F::one() / F::lit((steps * nb) as f64);
    let one = F::one();
    let mut g = Gradients::zeros_like(params);
    let mut carry = Array2::<F>::zeros((nb, n));
    let mut dy = Array2::<F>::zeros((nb, params.n_place()));

    for t in (1..=steps).rev() {
        let y = &trace.predictions[t - 1];
        let p = &batch.targets[t - 1];
        for ((yr, pr), mut dr) in y.outer_iter().zip(p.outer_iter()).zip(dy.outer_iter_mut()) {
            let d = dr.as_slice_mut().expect("row-major");
            softmax_cross_entropy(yr.as_slice().unwrap(), pr.as_slice().unwrap(), Some(&mut *d));
            d.iter_mut().for_each(|v| *v = *v * scale);
        }
        general_mat_mul(one, &dy.t(), &trace.states[t], one, &mut g.w_out);
        let mut g_r = dy.dot(&params.w_out);
        g_r += &carry;
        let mut g_u = g_r.clone();
        Zip::from(&mut g_u)
            .and(&trace.pre[t])
            .for_each(|gu, &u| *gu = if u > F::zero() { a * *gu } else { F::zero() });
        general_mat_mul(one, &g_u.t(), &trace.states[t - 1], one, &mut g.w_rec);
        general_mat_mul(one, &g_u.t(), &batch.inputs.slice(s![t - 1, .., ..]), one, &mut g.w_in);
        carry = g_u.dot(&params.w_rec);
        Zip::from(&mut carry)
            .and(&g_r)
            .for_each(|c, &gr| *c = keep * gr + *c);
    }
    let mut g_u0 = carry;
    Zip::from(&mut g_u0)
        .and(&trace.pre[0])
        .for_each(|gu, &u| {
            if u <= F::zero() {
                *gu = F::zero();
            }
        });
    general_mat_mul(one, &g_u0.t(), &batch.init_codes, one, &mut g.w_init);
    let two_lambda = F::lit(2.0 * lambda_reg);
    Zip::from(&mut g.w_rec)
        .and(&params.w_rec)
        .for_each(|gw, &w| *gw = *gw + two_lambda * w);
    g
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<F: Scalar> {
    m: Gradients<F>,
    v: Gradients<F>,
    t: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl<F: Scalar> Adam<F> {
    pub fn new(params: &LeakyRnnParams<F>, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            m: Gradients::zeros_like(params),
            v: Gradients::zeros_like(params),
            t: 0,
            lr,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn update(&mut self, params: &mut LeakyRnnParams<F>, grads: &Gradients<F>) {
        self.t += 1;
        let (b1, b2) = (F::lit(self.beta1), F::lit(self.beta2));
        let c1 = F::lit(1.0 - self.beta1.powi(self.t));
        let c2 = F::lit(1.0 - self.beta2.powi(self.t));
        let lr = F::lit(self.lr);
        let eps = F::lit(self.eps);
        let (one, grads_t) = (F::one(), grads.tensors());
        for (((w, m), v), (_, g)) in params
            .tensors_mut()
            .into_iter()
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
            .zip(grads_t)
        {
            Zip::from(w).and(m).and(v).and(g).for_each(|w, m, v, &g| {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let mh = *m / c1;
                let vh = *v / c2;
                *w = *w - lr * mh / (vh.sqrt() + eps);
            });
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub loss: f64,
    /// Decoding error on the same batch (cm).
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub alpha: f64,
    pub seed_record: u64,
    pub loss_curve: Vec<LossPoint>,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Held-out decoding error after training (cm); absent after an abort.
    pub final_mse: Option<f64>,
    /// Checkpoint file, relative to the artifacts directory.
    pub checkpoint_path: Option<PathBuf>,
    pub clamp_events: u64,
    pub steps_completed: usize,
    /// Why training stopped early, if it did.
    pub abort: Option<String>,
}

impl TrainReport {
    pub fn write_loss_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("step,loss,mse\n");
        for p in &self.loss_curve {
            out.push_str(&format!("{},{},{}\n", p.step, p.loss, p.mse));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<F: Scalar> {
    pub params: LeakyRnnParams<F>,
    pub report: TrainReport,
}

/// Where a training run writes its artifacts.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub dir: PathBuf,
    pub stem: String,
    pub meta: CheckpointMeta,
}

/// Decodes predictions (`T` arrays of `B × N_p`) into positions per trajectory.
pub fn decode_predictions<F: Scalar>(
    ensemble: &PlaceCellEnsemble,
    predictions: &[Array2<F>],
) -> Result<Vec<Vec<[f64; 2]>>> {
    let nb = predictions.first().map_or(0, |p| p.nrows());
    (0..nb)
        .map(|b| {
            predictions
                .iter()
                .map(|p| {
                    let row = p.row(b);
                    ensemble.decode(row.as_slice().expect("row-major"), DEFAULT_DECODE_TOP_K)
                })
                .collect()
        })
        .collect()
}

fn batch_mse<F: Scalar>(task: &Task, batch: &Batch<F>, trace: &BatchTrace<F>) -> Result<TrajectoryError> {
    let decoded = decode_predictions(&task.ensemble, &trace.predictions)?;
    let truth: Vec<Vec<[f64; 2]>> = batch.positions.iter().map(|p| p[1..].to_vec()).collect();
    trajectory_mse(&truth, &decoded)
}

/// Trains `params_init` (its α replaced by `config.alpha`) on fresh batches.
///
/// Numeric failures (non-finite loss, divergence) stop training early and are
/// reported in [`TrainReport::abort`] rather than returned as errors.
pub fn train<F: Scalar>(
    config: &TrainConfig,
    task: &Task,
    params_init: &LeakyRnnParams<F>,
    artifacts: Option<&Artifacts>,
) -> Result<TrainOutcome<F>> {
    config.validate()?;
    task.validate()?;
    if params_init.n_place() != task.ensemble.n_cells() {
        return Err(Error::Shape(format!(
            "network has {} outputs, ensemble {} cells",
            params_init.n_place(),
            task.ensemble.n_cells()
        )));
    }
    let mut params = params_init.with_alpha(config.alpha)?;
    let mut adam = Adam::new(
        &params,
        config.learning_rate,
        config.beta1,
        config.beta2,
        config.epsilon,
    );
    let mut curve = Vec::new();
    let mut clamp_events = 0u64;
    let mut abort = None;
    let mut steps_completed = 0;
    let mut initial_loss = f64::NAN;
    let mut final_loss = f64::NAN;

    for step in 0..=config.n_steps {
        let batch = make_batch::<F>(task, config.batch_size, config.seq_len, config.seed, 0, step as u64)?;
        clamp_events += batch.clamped as u64;
        let (l, mut grads, trace) = match gradients(&params, &batch, config.lambda_reg) {
            Ok(r) => r,
            Err(e) if e.is_numeric() => {
                abort = Some(format!("step {step}: {e}"));
                break;
            }
            Err(e) => return Err(e),
        };
        if step == 0 {
            initial_loss = l;
        }
        final_loss = l;
        if l > config.divergence_threshold {
            abort = Some(format!(
                "step {step}: {}",
                Error::Diverged { step, loss: l }
            ));
            break;
        }
        if step % config.log_every == 0 || step == config.n_steps {
            let mse = batch_mse(task, &batch, &trace)?.mse;
            curve.push(LossPoint { step, loss: l, mse });
            log::debug!("alpha {} step {step}: loss {l:.6} mse {mse:.3}", config.alpha);
        }
        if step == config.n_steps {
            break;
        }
        if let Some(c) = config.grad_clip {
            let norm = grads.global_norm();
            if norm > c {
                grads.scale(F::lit(c / norm));
            }
        }
        adam.update(&mut params, &grads);
        steps_completed = step + 1;
    }

    let final_mse = if abort.is_none() {
        let eval = EvalConfig {
            n_trajectories: config.eval_trajectories.max(1),
            seq_len: config.seq_len,
            seed: config.seed,
            batch_size: config.batch_size,
        };
        Some(evaluate_mse(&params, task, &eval)?.mse)
    } else {
        None
    };

    let mut report = TrainReport {
        alpha: config.alpha,
        seed_record: config.seed,
        loss_curve: curve,
        initial_loss,
        final_loss,
        final_mse,
        checkpoint_path: None,
        clamp_events,
        steps_completed,
        abort,
    };
    if let Some(art) = artifacts {
        fs::create_dir_all(&art.dir).map_err(|e| Error::io(&art.dir, e))?;
        let ckpt = art.dir.join(format!("{}.gpnw", art.stem));
        save_checkpoint(&ckpt, &params, &art.meta)?;
        report.checkpoint_path = Some(PathBuf::from(format!("{}.gpnw", art.stem)));
        report.write_loss_csv(&art.dir.join(format!("{}_loss.csv", art.stem)))?;
        let path = art.dir.join(format!("{}_report.json", art.stem));
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(serde_json::to_string_pretty(&report)?.as_bytes())
            .map_err(|e| Error::io(&path, e))?;
    }
    Ok(TrainOutcome { params, report })
}

/// Held-out evaluation stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub n_trajectories: usize,
    pub seq_len: usize,
    pub seed: u64,
    /// Trajectories per forward pass.
    pub batch_size: usize,
}

fn eval_chunks(cfg: &EvalConfig) -> Vec<(u64, usize)> {
    let bs = cfg.batch_size.max(1);
    (0..cfg.n_trajectories.div_ceil(bs))
        .map(|i| (i as u64, bs.min(cfg.n_trajectories - i * bs)))
        .collect()
}

/// Decoding error on held-out trajectories.
pub fn evaluate_mse<F: Scalar>(
    params: &LeakyRnnParams<F>,
    task: &Task,
    cfg: &EvalConfig,
) -> Result<TrajectoryError> {
    if cfg.n_trajectories == 0 || cfg.seq_len == 0 {
        return Err(Error::config("evaluation needs trajectories and steps"));
    }
    let mut truth = Vec::with_capacity(cfg.n_trajectories);
    let mut decoded = Vec::with_capacity(cfg.n_trajectories);
    for (chunk, size) in eval_chunks(cfg) {
        let batch = make_batch::<F>(task, size, cfg.seq_len, cfg.seed, domain::EVAL, chunk)?;
        let trace = forward_batch(params, batch.init_codes.view(), batch.inputs.view())?;
        decoded.extend(decode_predictions(&task.ensemble, &trace.predictions)?);
        truth.extend(batch.positions.iter().map(|p| p[1..].to_vec()));
    }
    trajectory_mse(&truth, &decoded)
}

/// Rate maps of every recurrent unit over held-out trajectories, from the
/// states at steps `1..=T`.
pub fn population_rate_maps<F: Scalar>(
    params: &LeakyRnnParams<F>,
    task: &Task,
    cfg: &EvalConfig,
) -> Result<Vec<RateMap>> {
    if cfg.n_trajectories == 0 || cfg.seq_len == 0 {
        return Err(Error::config("rate maps need trajectories and steps"));
    }
    let mut acc = RateMapAccumulator::new(&task.arena, params.n_rec());
    for (chunk, size) in eval_chunks(cfg) {
        // a separate tag keeps map trajectories apart from the MSE set
        let batch = make_batch::<F>(task, size, cfg.seq_len, cfg.seed, domain::EVAL + 100, chunk)?;
        let trace = forward_batch(params, batch.init_codes.view(), batch.inputs.view())?;
        for (b, pos) in batch.positions.iter().enumerate() {
            for t in 1..=cfg.seq_len {
                acc.add(pos[t], trace.states[t].row(b))?;
            }
        }
    }
    Ok(acc.finish())
}
