//! Named parameter registry and the small layers built on it.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use candle_core::{DType, Device, Result, Tensor, Var, D};
use symdiff_core::rng::PortableRng;

/// Trainable parameters and non-trainable buffers, keyed by dotted name.
/// Layers keep clones of the `Var`s they register, which share storage.
#[derive(Clone)]
pub struct ParamStore {
    inner: Rc<RefCell<Inner>>,
    prefix: String,
}

struct Inner {
    params: BTreeMap<String, Var>,
    buffers: BTreeMap<String, Var>,
    rng: PortableRng,
    dtype: DType,
    device: Device,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType, device: Device) -> Self {
        let inner = Inner {
            params: BTreeMap::new(),
            buffers: BTreeMap::new(),
            rng: PortableRng::new(seed, u64::MAX),
            dtype,
            device,
        };
        Self { inner: Rc::new(RefCell::new(inner)), prefix: String::new() }
    }

    pub fn pp(&self, name: &str) -> Self {
        Self { inner: self.inner.clone(), prefix: self.key(name) }
    }

    fn key(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn dtype(&self) -> DType {
        self.inner.borrow().dtype
    }

    pub fn device(&self) -> Device {
        self.inner.borrow().device.clone()
    }

    fn make(&self, shape: &[usize], init: impl FnMut(&mut PortableRng) -> f64) -> Result<Var> {
        let mut inner = self.inner.borrow_mut();
        let n: usize = shape.iter().product();
        let mut init = init;
        let data: Vec<f64> = (0..n).map(|_| init(&mut inner.rng)).collect();
        let t = Tensor::from_vec(data, shape, &inner.device)?.to_dtype(inner.dtype)?;
        Var::from_tensor(&t)
    }

    /// Trainable tensor filled by `init`.
    pub fn param(&self, name: &str, shape: &[usize], init: impl FnMut(&mut PortableRng) -> f64) -> Result<Var> {
        let var = self.make(shape, init)?;
        let key = self.key(name);
        let prev = self.inner.borrow_mut().params.insert(key.clone(), var.clone());
        assert!(prev.is_none(), "parameter {key} registered twice");
        Ok(var)
    }

    /// Fan-in scaled uniform, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn fan_in_uniform(&self, name: &str, shape: &[usize], fan_in: usize) -> Result<Var> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        self.param(name, shape, |r| r.uniform(-bound, bound))
    }

    pub fn constant(&self, name: &str, shape: &[usize], value: f64) -> Result<Var> {
        self.param(name, shape, |_| value)
    }

    /// Non-trainable state saved with the model (batch-norm statistics).
    pub fn buffer(&self, name: &str, shape: &[usize], value: f64) -> Result<Var> {
        let var = self.make(shape, |_| value)?;
        let key = self.key(name);
        let prev = self.inner.borrow_mut().buffers.insert(key.clone(), var.clone());
        assert!(prev.is_none(), "buffer {key} registered twice");
        Ok(var)
    }

    /// Trainable parameters in name order.
    pub fn params(&self) -> Vec<(String, Var)> {
        self.inner.borrow().params.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    pub fn buffers(&self) -> Vec<(String, Var)> {
        self.inner.borrow().buffers.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    /// Parameters and buffers, names prefixed `param:` / `buffer:`.
    pub fn all_tensors(&self) -> Vec<(String, Var)> {
        let mut out: Vec<(String, Var)> = self.params().into_iter().map(|(k, v)| (format!("param:{k}"), v)).collect();
        out.extend(self.buffers().into_iter().map(|(k, v)| (format!("buffer:{k}"), v)));
        out
    }

    pub fn trainable_vars(&self) -> Vec<Var> {
        self.inner.borrow().params.values().cloned().collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.inner.borrow().params.values().map(|v| v.elem_count()).sum()
    }
}

/// Affine map `x W + b` over the last dimension.
#[derive(Clone)]
pub struct Linear {
    pub weight: Var,
    pub bias: Var,
    in_dim: usize,
    out_dim: usize,
}

impl Linear {
    pub fn new(store: &ParamStore, in_dim: usize, out_dim: usize) -> Result<Self> {
        let weight = store.fan_in_uniform("weight", &[in_dim, out_dim], in_dim)?;
        let bias = store.fan_in_uniform("bias", &[out_dim], in_dim)?;
        Ok(Self { weight, bias, in_dim, out_dim })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let rows: usize = dims[..dims.len() - 1].iter().product();
        let flat = x.reshape((rows, self.in_dim))?;
        let y = flat.matmul(self.weight.as_tensor())?.broadcast_add(self.bias.as_tensor())?;
        let mut out_dims = dims;
        *out_dims.last_mut().expect("non-scalar input") = self.out_dim;
        y.reshape(out_dims)
    }
}

/// Layer normalization over the last dimension with learned scale and shift.
#[derive(Clone)]
pub struct LayerNorm {
    pub gamma: Var,
    pub beta: Var,
    eps: f64,
}

impl LayerNorm {
    pub fn new(store: &ParamStore, dim: usize) -> Result<Self> {
        Ok(Self { gamma: store.constant("gamma", &[dim], 1.0)?, beta: store.constant("beta", &[dim], 0.0)?, eps: 1e-5 })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        normed.broadcast_mul(self.gamma.as_tensor())?.broadcast_add(self.beta.as_tensor())
    }
}

/// Inverted dropout with a mask drawn from `rng`; identity when `rng` is
/// `None` or `p == 0`.
pub fn dropout(x: &Tensor, p: f64, rng: Option<&mut PortableRng>) -> Result<Tensor> {
    let Some(rng) = rng else { return Ok(x.clone()) };
    if p <= 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..x.elem_count()).map(|_| if rng.next_f64() < p { 0.0 } else { keep }).collect();
    let mask = Tensor::from_vec(mask, x.shape(), x.device())?.to_dtype(x.dtype())?;
    x.mul(&mask)
}

/// Tanh-form GELU from primitive ops. The fused kernels' backward passes
/// are only accurate to about 1e-7, which breaks 64-bit gradient checks.
pub fn gelu(x: &Tensor) -> Result<Tensor> {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let inner = ((x + (x.sqr()? * x)?.affine(0.044715, 0.0)?)? * c)?;
    (x * 0.5)? * (inner.tanh()? + 1.0)?
}

/// Sinusoidal features of `positions`, shape `(len, dim)`.
pub fn sinusoidal_table(positions: &[f64], dim: usize, device: &Device, dtype: DType) -> Result<Tensor> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(positions.len() * dim);
    for &pos in positions {
        for i in 0..dim {
            let freq = (-(10000f64).ln() * ((i % half.max(1)) as f64) / half.max(1) as f64).exp();
            let v = if i < half { (pos * freq).sin() } else if i < 2 * half { (pos * freq).cos() } else { 0.0 };
            data.push(v);
        }
    }
    Tensor::from_vec(data, (positions.len(), dim), device)?.to_dtype(dtype)
}
