//! Leaky ReLU recurrent network.
//!
//! `r[t+1] = (1 - α) r[t] + α relu(W_rec r[t] + W_in v[t])`, read out linearly
//! through `W_out`. The initial state is lifted from the place-cell code of the
//! start position: `r[0] = relu(W_init p(x0))`. With `α = 1` the update is the
//! plain (vanilla) ReLU RNN.
//!
//! Batched arrays are row-major over the batch: states are `B × N_r`.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayView3, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, domain};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RecurrentInit {
    /// `U(-1/sqrt(N_r), 1/sqrt(N_r))`, same as the input weights.
    #[default]
    Uniform,
    /// Orthogonal matrix from the QR factor of a Gaussian draw.
    Orthogonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub n_rec: usize,
    pub alpha: f64,
    pub recurrent_init: RecurrentInit,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            n_rec: 512,
            alpha: 0.9,
            recurrent_init: RecurrentInit::Uniform,
        }
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!("leak rate alpha={alpha} outside (0, 1]")))
    }
}

/// Network weights and leak rate.
#[derive(Debug, Clone, PartialEq)]
pub struct LeakyRnnParams<F: Scalar> {
    /// `N_r × N_p` lift of the initial place-cell code.
    pub w_init: Array2<F>,
    /// `N_r × N_r`.
    pub w_rec: Array2<F>,
    /// `N_r × 2`.
    pub w_in: Array2<F>,
    /// `N_p × N_r`.
    pub w_out: Array2<F>,
    alpha: F,
}

impl<F: Scalar> LeakyRnnParams<F> {
    pub fn new(
        w_init: Array2<F>,
        w_rec: Array2<F>,
        w_in: Array2<F>,
        w_out: Array2<F>,
        alpha: F,
    ) -> Result<Self> {
        check_alpha(alpha.as_f64())?;
        let n_rec = w_rec.nrows();
        let n_place = w_out.nrows();
        let want = [
            ("w_init", w_init.dim(), (n_rec, n_place)),
            ("w_rec", w_rec.dim(), (n_rec, n_rec)),
            ("w_in", w_in.dim(), (n_rec, 2)),
            ("w_out", w_out.dim(), (n_place, n_rec)),
        ];
        for (name, got, expected) in want {
            if got != expected {
                return Err(Error::Shape(format!(
                    "{name} is {got:?}, expected {expected:?}"
                )));
            }
        }
        if n_rec == 0 || n_place == 0 {
            return Err(Error::Shape("empty network".into()));
        }
        Ok(Self {
            w_init,
            w_rec,
            w_in,
            w_out,
            alpha,
        })
    }

    /// Random initialisation from the seeded stream.
    ///
    /// `W_in ~ U(±1/sqrt(N_r))`, `W_out, W_init ~ U(±sqrt(6/(N_r+N_p)))` and
    /// `W_rec` per `init`. Draws are made in f64, so the f32 and f64 networks
    /// from one seed agree up to rounding.
    pub fn init(
        n_rec: usize,
        n_place: usize,
        alpha: f64,
        init: RecurrentInit,
        seed: u64,
    ) -> Result<Self> {
        check_alpha(alpha)?;
        if n_rec == 0 || n_place == 0 {
            return Err(Error::config("network dimensions must be positive"));
        }
        let mut rng = rng::stream(seed, &[domain::INIT]);
        let mut uniform = |rows: usize, cols: usize, bound: f64| {
            Array2::from_shape_simple_fn((rows, cols), || {
                F::lit(rng.random_range(-bound..bound))
            })
        };
        let xavier = (6.0 / (n_rec + n_place) as f64).sqrt();
        let in_bound = 1.0 / (n_rec as f64).sqrt();
        let w_init = uniform(n_rec, n_place, xavier);
        let w_rec = match init {
            RecurrentInit::Uniform => uniform(n_rec, n_rec, in_bound),
            RecurrentInit::Orthogonal => {
                let mut g = rng::stream(seed, &[domain::INIT, 1]);
                let m = DMatrix::<f64>::from_fn(n_rec, n_rec, |_, _| g.sample(StandardNormal));
                let q = m.qr().q();
                Array2::from_shape_fn((n_rec, n_rec), |(i, j)| F::lit(q[(i, j)]))
            }
        };
        let w_in = uniform(n_rec, 2, in_bound);
        let w_out = uniform(n_place, n_rec, xavier);
        Self::new(w_init, w_rec, w_in, w_out, F::lit(alpha))
    }

    pub fn alpha(&self) -> F {
        self.alpha
    }

    /// Same weights, different leak rate.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Self {
            alpha: F::lit(alpha),
            ..self.clone()
        })
    }

    pub fn n_rec(&self) -> usize {
        self.w_rec.nrows()
    }

    pub fn n_place(&self) -> usize {
        self.w_out.nrows()
    }

    /// Converts to another precision.
    pub fn cast<G: Scalar>(&self) -> LeakyRnnParams<G> {
        let c = |a: &Array2<F>| a.mapv(|v| G::lit(v.as_f64()));
        LeakyRnnParams {
            w_init: c(&self.w_init),
            w_rec: c(&self.w_rec),
            w_in: c(&self.w_in),
            w_out: c(&self.w_out),
            alpha: G::lit(self.alpha.as_f64()),
        }
    }

    pub(crate) fn tensors(&self) -> [(&'static str, &Array2<F>); 4] {
        [
            ("w_init", &self.w_init),
            ("w_rec", &self.w_rec),
            ("w_in", &self.w_in),
            ("w_out", &self.w_out),
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Array2<F>; 4] {
        [
            &mut self.w_init,
            &mut self.w_rec,
            &mut self.w_in,
            &mut self.w_out,
        ]
    }
}

/// Hidden firing rates of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnState<F: Scalar> {
    pub rates: Array1<F>,
}

impl<F: Scalar> RnnState<F> {
    pub fn zeros(n_rec: usize) -> Self {
        Self {
            rates: Array1::zeros(n_rec),
        }
    }

    /// `relu(W_init p)`.
    pub fn from_encoding(params: &LeakyRnnParams<F>, code: ArrayView1<'_, F>) -> Result<Self> {
        if code.len() != params.n_place() {
            return Err(Error::Shape(format!(
                "initial code has length {}, expected {}",
                code.len(),
                params.n_place()
            )));
        }
        Ok(Self {
            rates: params.w_init.dot(&code).mapv(relu),
        })
    }
}

#[inline]
pub(crate) fn relu<F: Scalar>(x: F) -> F {
    if x > F::zero() {
        x
    } else {
        F::zero()
    }
}

fn check_finite<F: Scalar>(values: impl IntoIterator<Item = F>, what: &str, step: usize) -> Result<()> {
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            what: what.to_string(),
            step,
        })
    }
}

/// One leaky update of a single network.
pub fn step<F: Scalar>(
    params: &LeakyRnnParams<F>,
    state: &RnnState<F>,
    velocity: [F; 2],
) -> Result<RnnState<F>> {
    if state.rates.len() != params.n_rec() {
        return Err(Error::Shape(format!(
            "state has length {}, expected {}",
            state.rates.len(),
            params.n_rec()
        )));
    }
    check_finite(velocity, "velocity", 0)?;
    check_finite(state.rates.iter().copied(), "state", 0)?;
    let v = ArrayView1::from(&velocity[..]);
    let mut u = params.w_rec.dot(&state.rates);
    u += &params.w_in.dot(&v);
    let a = params.alpha;
    let keep = F::one() - a;
    let mut next = state.rates.clone();
    Zip::from(&mut next)
        .and(&u)
        .for_each(|r, &u| *r = keep * *r + a * relu(u));
    Ok(RnnState { rates: next })
}

/// Linear readout `W_out r`.
pub fn readout<F: Scalar>(params: &LeakyRnnParams<F>, state: &RnnState<F>) -> Array1<F> {
    params.w_out.dot(&state.rates)
}

/// Everything the backward pass needs from a batched forward pass.
#[derive(Debug, Clone)]
pub struct BatchTrace<F: Scalar> {
    /// Pre-activations `u[0..=T]`, each `B × N_r`; `u[0] = p0 W_initᵀ`.
    pub pre: Vec<Array2<F>>,
    /// States `r[0..=T]`, each `B × N_r`.
    pub states: Vec<Array2<F>>,
    /// Readouts of `r[1..=T]`, each `B × N_p`.
    pub predictions: Vec<Array2<F>>,
}

/// Batched forward pass.
///
/// `init_codes` is `B × N_p`; `inputs` is `T × B × 2`.
pub fn forward_batch<F: Scalar>(
    params: &LeakyRnnParams<F>,
    init_codes: ArrayView2<'_, F>,
    inputs: ArrayView3<'_, F>,
) -> Result<BatchTrace<F>> {
    let (steps, batch, two) = inputs.dim();
    if steps == 0 {
        return Err(Error::config("forward needs at least one input step"));
    }
    if two != 2 || init_codes.dim() != (batch, params.n_place()) {
        return Err(Error::Shape(format!(
            "inputs {:?} / initial codes {:?} do not match batch {batch} and N_p {}",
            inputs.dim(),
            init_codes.dim(),
            params.n_place()
        )));
    }
    check_finite(init_codes.iter().copied(), "initial code", 0)?;
    for t in 0..steps {
        check_finite(inputs.slice(s![t, .., ..]).iter().copied(), "velocity", t)?;
    }

    let a = params.alpha;
    let keep = F::one() - a;
    let u0 = init_codes.dot(&params.w_init.t());
    let r0 = u0.mapv(relu);
    let mut pre = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut predictions = Vec::with_capacity(steps);
    pre.push(u0);
    states.push(r0);
    for t in 0..steps {
        let prev = &states[t];
        let mut u = prev.dot(&params.w_rec.t());
        u += &inputs.slice(s![t, .., ..]).dot(&params.w_in.t());
        let mut next = prev.clone();
        Zip::from(&mut next)
            .and(&u)
            .for_each(|r, &u| *r = keep * *r + a * relu(u));
        check_finite(next.iter().copied(), "state", t + 1)?;
        predictions.push(next.dot(&params.w_out.t()));
        pre.push(u);
        states.push(next);
    }
    Ok(BatchTrace {
        pre,
        states,
        predictions,
    })
}

/// Single-trajectory forward pass: states `r[0..=T]` and readouts of `r[1..=T]`.
pub fn forward<F: Scalar>(
    params: &LeakyRnnParams<F>,
    init_code: ArrayView1<'_, F>,
    velocities: &[[F; 2]],
) -> Result<(Vec<Array1<F>>, Vec<Array1<F>>)> {
    let codes = init_code.insert_axis(ndarray::Axis(0));
    let inputs = Array2::from_shape_fn((velocities.len(), 2), |(t, k)| velocities[t][k])
        .into_shape_with_order((velocities.len(), 1, 2))
        .expect("contiguous");
    let trace = forward_batch(params, codes, inputs.view())?;
    let row = |m: Array2<F>| m.row(0).to_owned();
    Ok((
        trace.states.into_iter().map(row).collect(),
        trace.predictions.into_iter().map(row).collect(),
    ))
}

// ---------------------------------------------------------------------------
// checkpoints

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GPNW";
pub const CHECKPOINT_VERSION: u32 = 1;

/// JSON sidecar written next to every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config_hash: String,
    pub seed: u64,
    pub n_rec: usize,
    pub n_place: usize,
    pub alpha: f64,
    pub scalar: String,
    /// Resolved configuration that produced the weights.
    #[serde(default)]
    pub config: serde_json::Value,
}

pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

/// Serialises the weights: magic, version u32, `N_r` u32, `N_p` u32, alpha
/// f64, then row-major f64 `W_init`, `W_rec`, `W_in`, `W_out`, little endian.
pub fn encode_checkpoint<F: Scalar>(params: &LeakyRnnParams<F>) -> Vec<u8> {
    let n = params.n_rec();
    let p = params.n_place();
    let mut out = Vec::with_capacity(24 + 8 * (n * p * 2 + n * n + 2 * n));
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(p as u32).to_le_bytes());
    out.extend_from_slice(&params.alpha.as_f64().to_le_bytes());
    for (_, m) in params.tensors() {
        for v in m.iter() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                message: format!("truncated while reading {what}"),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let at = self.pos as u64;
        let v = f64::from_le_bytes(self.take(8, what)?.try_into().unwrap());
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Format {
                offset: at,
                message: format!("non-finite {what}"),
            })
        }
    }

    fn matrix<F: Scalar>(&mut self, rows: usize, cols: usize, what: &str) -> Result<Array2<F>> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(F::lit(self.f64(what)?));
        }
        Ok(Array2::from_shape_vec((rows, cols), data).expect("sized"))
    }
}

pub fn decode_checkpoint<F: Scalar>(bytes: &[u8]) -> Result<LeakyRnnParams<F>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "bad magic, expected GPNW".into(),
        });
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let n = r.u32("N_r")? as usize;
    let p = r.u32("N_p")? as usize;
    if n == 0 || p == 0 {
        return Err(Error::Format {
            offset: 8,
            message: "zero dimension".into(),
        });
    }
    let alpha_at = r.pos as u64;
    let alpha = r.f64("alpha")?;
    if check_alpha(alpha).is_err() {
        return Err(Error::Format {
            offset: alpha_at,
            message: format!("alpha {alpha} outside (0, 1]"),
        });
    }
    let w_init = r.matrix(n, p, "W_init")?;
    let w_rec = r.matrix(n, n, "W_rec")?;
    let w_in = r.matrix(n, 2, "W_in")?;
    let w_out = r.matrix(p, n, "W_out")?;
    if r.pos != bytes.len() {
        return Err(Error::Format {
            offset: r.pos as u64,
            message: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    LeakyRnnParams::new(w_init, w_rec, w_in, w_out, F::lit(alpha))
}

pub fn save_checkpoint<F: Scalar>(
    path: &Path,
    params: &LeakyRnnParams<F>,
    meta: &CheckpointMeta,
) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(meta)?;
    fs::write(&side, text).map_err(|e| Error::io(&side, e))
}

pub fn load_checkpoint<F: Scalar>(path: &Path) -> Result<(LeakyRnnParams<F>, Option<CheckpointMeta>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let params = decode_checkpoint(&bytes)?;
    let side = sidecar_path(path);
    let meta = match fs::read_to_string(&side) {
        Ok(text) => Some(serde_json::from_str(&text)?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(Error::io(side, e)),
    };
    Ok((params, meta))
}
