//! Feed-forward network with ELU hidden activations and a linear output
//! layer, parameters held in one flat fp64 store.
//!
//! Checkpoint format (little-endian): 4-byte magic `GARM`, 1 version byte,
//! u32 input dim, u32 hidden-layer count, u32 per hidden dim, u32 output
//! dim, u64 init seed, u64 parameter count, then the raw f64 parameters.

use std::io::{Read, Write};
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{backward, Var};
use crate::error::{GarError, Result};
use crate::tensor::Tensor;

const CHECKPOINT_MAGIC: &[u8; 4] = b"GARM";
const CHECKPOINT_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize) -> NetworkSpec {
        NetworkSpec {
            input_dim,
            hidden_dims,
            output_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(GarError::InvalidConfig(
                "network dimensions must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Layer widths including input and output.
    fn dims(&self) -> Vec<usize> {
        let mut d = Vec::with_capacity(self.hidden_dims.len() + 2);
        d.push(self.input_dim);
        d.extend_from_slice(&self.hidden_dims);
        d.push(self.output_dim);
        d
    }

    pub fn n_layers(&self) -> usize {
        self.hidden_dims.len() + 1
    }

    pub fn param_count(&self) -> usize {
        let dims = self.dims();
        dims.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }
}

/// Flat parameter storage: per layer, the [fan_in x fan_out] weight block
/// (row-major) followed by the fan_out bias entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore {
    data: Vec<f64>,
    seed: u64,
}

impl ParameterStore {
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Glorot-uniform weights, zero biases; deterministic in `seed`.
pub fn init(spec: &NetworkSpec, seed: u64) -> Result<ParameterStore> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = spec.dims();
    let mut data = Vec::with_capacity(spec.param_count());
    for w in dims.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit);
        for _ in 0..fan_in * fan_out {
            data.push(dist.sample(&mut rng));
        }
        data.extend(std::iter::repeat(0.0).take(fan_out));
    }
    Ok(ParameterStore { data, seed })
}

/// One forward evaluation: the output node plus the parameter leaves it was
/// built from, in store layout order.
pub struct ForwardPass {
    pub output: Var,
    layer_params: Vec<(Var, Var)>,
}

impl ForwardPass {
    /// Flat gradient in store layout order. Call after `backward` on a loss
    /// derived from `output`. Parameters unreachable from the loss get 0.
    pub fn flat_gradient(&self) -> Vec<f64> {
        let mut g = Vec::new();
        for (w, b) in &self.layer_params {
            match w.grad() {
                Some(t) => g.extend_from_slice(t.data()),
                None => g.extend(std::iter::repeat(0.0).take(w.len())),
            }
            match b.grad() {
                Some(t) => g.extend_from_slice(t.data()),
                None => g.extend(std::iter::repeat(0.0).take(b.len())),
            }
        }
        g
    }
}

/// Build the network graph for a batch of inputs. ELU after every hidden
/// layer, no activation on the output layer.
pub fn forward(params: &ParameterStore, spec: &NetworkSpec, x: &Tensor) -> Result<ForwardPass> {
    let xm = x.as_matrix();
    if xm.shape().len() != 2 || xm.shape()[1] != spec.input_dim {
        return Err(GarError::ShapeMismatch {
            expected: vec![xm.rows(), spec.input_dim],
            got: xm.shape().to_vec(),
        });
    }
    if params.len() != spec.param_count() {
        return Err(GarError::InvalidConfig(format!(
            "parameter store has {} values, spec needs {}",
            params.len(),
            spec.param_count()
        )));
    }
    let dims = spec.dims();
    let mut layer_params = Vec::with_capacity(spec.n_layers());
    let mut h = Var::leaf(xm);
    let mut off = 0;
    for (l, wpair) in dims.windows(2).enumerate() {
        let (fan_in, fan_out) = (wpair[0], wpair[1]);
        let w = Var::leaf(Tensor::matrix(
            fan_in,
            fan_out,
            params.data[off..off + fan_in * fan_out].to_vec(),
        )?);
        off += fan_in * fan_out;
        let b = Var::leaf(Tensor::vector(params.data[off..off + fan_out].to_vec()));
        off += fan_out;
        let z = h.matmul(&w)?.add_bias(&b)?;
        h = if l + 1 < spec.n_layers() { z.elu() } else { z };
        layer_params.push((w, b));
    }
    Ok(ForwardPass {
        output: h,
        layer_params,
    })
}

/// Value-only prediction.
pub fn predict(params: &ParameterStore, spec: &NetworkSpec, x: &Tensor) -> Result<Tensor> {
    Ok(forward(params, spec, x)?.output.value())
}

/// Central finite-difference slope of a scalar-in/scalar-out model at `x0`.
pub fn gradient_alignment_probe(
    params: &ParameterStore,
    spec: &NetworkSpec,
    x0: f64,
    h: f64,
) -> Result<f64> {
    if spec.input_dim != 1 || spec.output_dim != 1 {
        return Err(GarError::InvalidConfig(
            "probe requires a 1 -> 1 network".into(),
        ));
    }
    if !(h > 0.0) {
        return Err(GarError::InvalidConfig(format!("h must be > 0, got {h}")));
    }
    let hi = predict(params, spec, &Tensor::matrix(1, 1, vec![x0 + h])?)?.item();
    let lo = predict(params, spec, &Tensor::matrix(1, 1, vec![x0 - h])?)?.item();
    Ok((hi - lo) / (2.0 * h))
}

/// Scalarize the output with `sum`, run backward, and return the flat
/// parameter gradient. Used by gradient checks.
pub fn sum_output_gradient(
    params: &ParameterStore,
    spec: &NetworkSpec,
    x: &Tensor,
) -> Result<Vec<f64>> {
    let pass = forward(params, spec, x)?;
    let root = pass.output.sum()?;
    backward(&root)?;
    Ok(pass.flat_gradient())
}

pub fn save_checkpoint(params: &ParameterStore, spec: &NetworkSpec, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::with_capacity(32 + params.len() * 8);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.push(CHECKPOINT_VERSION);
    buf.extend_from_slice(&(spec.input_dim as u32).to_le_bytes());
    buf.extend_from_slice(&(spec.hidden_dims.len() as u32).to_le_bytes());
    for &hd in &spec.hidden_dims {
        buf.extend_from_slice(&(hd as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(spec.output_dim as u32).to_le_bytes());
    buf.extend_from_slice(&params.seed.to_le_bytes());
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in &params.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ParameterStore, NetworkSpec)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cur = 0usize;
    fn take<'a>(bytes: &'a [u8], cur: &mut usize, n: usize) -> Result<&'a [u8]> {
        if *cur + n > bytes.len() {
            return Err(GarError::Checkpoint("truncated file".into()));
        }
        let s = &bytes[*cur..*cur + n];
        *cur += n;
        Ok(s)
    }
    fn read_u32(bytes: &[u8], cur: &mut usize) -> Result<u32> {
        Ok(u32::from_le_bytes(take(bytes, cur, 4)?.try_into().unwrap()))
    }
    fn read_u64(bytes: &[u8], cur: &mut usize) -> Result<u64> {
        Ok(u64::from_le_bytes(take(bytes, cur, 8)?.try_into().unwrap()))
    }
    if take(&bytes, &mut cur, 4)? != CHECKPOINT_MAGIC {
        return Err(GarError::Checkpoint("bad magic".into()));
    }
    let version = take(&bytes, &mut cur, 1)?[0];
    if version != CHECKPOINT_VERSION {
        return Err(GarError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let input_dim = read_u32(&bytes, &mut cur)? as usize;
    let n_hidden = read_u32(&bytes, &mut cur)? as usize;
    let mut hidden_dims = Vec::with_capacity(n_hidden);
    for _ in 0..n_hidden {
        hidden_dims.push(read_u32(&bytes, &mut cur)? as usize);
    }
    let output_dim = read_u32(&bytes, &mut cur)? as usize;
    let seed = read_u64(&bytes, &mut cur)?;
    let count = read_u64(&bytes, &mut cur)? as usize;
    let spec = NetworkSpec::new(input_dim, hidden_dims, output_dim);
    spec.validate().map_err(|_| {
        GarError::Checkpoint("invalid dimensions in header".into())
    })?;
    if count != spec.param_count() {
        return Err(GarError::Checkpoint(format!(
            "parameter count {count} does not match spec ({})",
            spec.param_count()
        )));
    }
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        data.push(f64::from_le_bytes(
            take(&bytes, &mut cur, 8)?.try_into().unwrap(),
        ));
    }
    if cur != bytes.len() {
        return Err(GarError::Checkpoint("trailing bytes".into()));
    }
    Ok((ParameterStore { data, seed }, spec))
}
