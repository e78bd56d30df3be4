//! The fixed classifier stack, its parameters, and the checkpoint format.
//!
//! Checkpoint layout (all little-endian):
//!
//! | field              | type      |
//! |--------------------|-----------|
//! | magic `"MMWC"`     | 4 bytes   |
//! | format version     | u32       |
//! | input channels, height, width | 3 × u32 |
//! | conv1 kernels, conv2 kernels, kernel size, dense units, classes | 5 × u32 |
//! | dropout keep probability | f32 |
//! | training step      | u64       |
//! | parameters         | f32 blobs in declaration order |
//!
//! Parameter order: conv1 weights, conv1 bias, conv2 weights, conv2 bias,
//! dense weights, dense bias, output weights, output bias.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use super::layers::{
    conv2d_backward_exec, conv2d_forward_exec, dense_backward, dense_forward, dropout, dropout_backward,
    maxpool2x2_backward, maxpool2x2_forward, relu_backward, relu_forward, softmax, softmax_cross_entropy_batch,
    DropoutOutput, Exec, Mode, PoolCache,
};
use super::{CnnError, Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MMWC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Layer sizes of the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub conv1_kernels: usize,
    pub conv2_kernels: usize,
    pub kernel_size: usize,
    pub dense_units: usize,
    pub keep_prob: f64,
    pub classes: usize,
}

impl NetworkConfig {
    /// 16 and 32 3x3 kernels, 1024 dense units, dropout keep 0.5.
    pub fn new(classes: usize) -> Self {
        Self { conv1_kernels: 16, conv2_kernels: 32, kernel_size: 3, dense_units: 1024, keep_prob: 0.5, classes }
    }

    pub fn validate(&self) -> Result<(), CnnError> {
        if self.conv1_kernels == 0 || self.conv2_kernels == 0 || self.dense_units == 0 || self.classes == 0 {
            return Err(CnnError::InvalidConfig("layer sizes must be positive".into()));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(CnnError::InvalidConfig(format!("kernel size {} must be odd", self.kernel_size)));
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(CnnError::InvalidConfig(format!("keep probability {} outside (0, 1]", self.keep_prob)));
        }
        Ok(())
    }

    /// Length of the flattened second pooling output.
    pub fn flat_features(&self, input: InputShape) -> usize {
        let (h, w) = pooled_dims(pooled_dims((input.height, input.width)));
        self.conv2_kernels * h * w
    }

    /// Multiplications in one forward pass over a `2 x height x width` input.
    pub fn multiply_count(&self, height: usize, width: usize) -> u64 {
        self.multiply_count_for(InputShape { channels: 2, height, width })
    }

    pub fn multiply_count_for(&self, input: InputShape) -> u64 {
        let k2 = (self.kernel_size * self.kernel_size) as u64;
        let (h1, w1) = (input.height as u64, input.width as u64);
        let conv1 = self.conv1_kernels as u64 * input.channels as u64 * k2 * h1 * w1;
        let (h2, w2) = pooled_dims((input.height, input.width));
        let conv2 = self.conv2_kernels as u64 * self.conv1_kernels as u64 * k2 * (h2 * w2) as u64;
        let dense = (self.flat_features(input) * self.dense_units) as u64;
        let output = (self.dense_units * self.classes) as u64;
        conv1 + conv2 + dense + output
    }
}

fn pooled_dims((h, w): (usize, usize)) -> (usize, usize) {
    (h.div_ceil(2), w.div_ceil(2))
}

/// Shape of one input sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl InputShape {
    /// Real/imaginary planes of an `n_users x n_tx` channel.
    pub fn channel_planes(n_users: usize, n_tx: usize) -> Self {
        Self { channels: 2, height: n_users, width: n_tx }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// All trainable tensors; also used for their gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub conv1_w: Tensor<T>,
    pub conv1_b: Vec<T>,
    pub conv2_w: Tensor<T>,
    pub conv2_b: Vec<T>,
    pub fc1_w: Tensor<T>,
    pub fc1_b: Vec<T>,
    pub fc2_w: Tensor<T>,
    pub fc2_b: Vec<T>,
}

impl<T: Scalar> Params<T> {
    pub fn zeros(config: &NetworkConfig, input: InputShape) -> Self {
        let k = config.kernel_size;
        Self {
            conv1_w: Tensor::zeros([config.conv1_kernels, input.channels, k, k]),
            conv1_b: vec![T::zero(); config.conv1_kernels],
            conv2_w: Tensor::zeros([config.conv2_kernels, config.conv1_kernels, k, k]),
            conv2_b: vec![T::zero(); config.conv2_kernels],
            fc1_w: Tensor::zeros([config.dense_units, config.flat_features(input), 1, 1]),
            fc1_b: vec![T::zero(); config.dense_units],
            fc2_w: Tensor::zeros([config.classes, config.dense_units, 1, 1]),
            fc2_b: vec![T::zero(); config.classes],
        }
    }

    /// He initialization: weights `N(0, 2 / fan_in)`, zero biases.
    pub fn he_init<R: Rng + ?Sized>(config: &NetworkConfig, input: InputShape, rng: &mut R) -> Self {
        let mut p = Self::zeros(config, input);
        for w in [&mut p.conv1_w, &mut p.conv2_w, &mut p.fc1_w, &mut p.fc2_w] {
            let std = (2.0 / w.item_len() as f64).sqrt();
            for v in w.data_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v = T::from_f64(z * std).expect("finite weight");
            }
        }
        p
    }

    /// Parameter slices in declaration order.
    pub fn slices(&self) -> [&[T]; 8] {
        [
            self.conv1_w.data(),
            &self.conv1_b,
            self.conv2_w.data(),
            &self.conv2_b,
            self.fc1_w.data(),
            &self.fc1_b,
            self.fc2_w.data(),
            &self.fc2_b,
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [T]; 8] {
        [
            self.conv1_w.data_mut(),
            &mut self.conv1_b,
            self.conv2_w.data_mut(),
            &mut self.conv2_b,
            self.fc1_w.data_mut(),
            &mut self.fc1_b,
            self.fc2_w.data_mut(),
            &mut self.fc2_b,
        ]
    }

    pub fn count(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        let vec = |v: &[T]| v.iter().map(|&x| U::from(x).expect("finite cast")).collect();
        Params {
            conv1_w: self.conv1_w.cast(),
            conv1_b: vec(&self.conv1_b),
            conv2_w: self.conv2_w.cast(),
            conv2_b: vec(&self.conv2_b),
            fc1_w: self.fc1_w.cast(),
            fc1_b: vec(&self.fc1_b),
            fc2_w: self.fc2_w.cast(),
            fc2_b: vec(&self.fc2_b),
        }
    }
}

/// Trained (or initial) network: architecture, parameters, step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState<T> {
    pub config: NetworkConfig,
    pub input: InputShape,
    pub params: Params<T>,
    pub step: u64,
}

/// `w ← w − lr·g` for every parameter; no momentum.
pub fn sgd_step<T: Scalar>(state: &mut NetworkState<T>, grads: &Params<T>, lr: T) {
    for (w, g) in state.params.slices_mut().into_iter().zip(grads.slices()) {
        for (wi, &gi) in w.iter_mut().zip(g) {
            *wi -= lr * gi;
        }
    }
    state.step += 1;
}

/// Intermediate activations kept for the backward pass.
pub struct ForwardCache<T> {
    x: Tensor<T>,
    z1: Tensor<T>,
    pool1: PoolCache,
    p1: Tensor<T>,
    z2: Tensor<T>,
    pool2: PoolCache,
    p2: Tensor<T>,
    z3: Tensor<T>,
    drop: DropoutOutput<T>,
}

/// Stateless view of a [`NetworkState`] that runs forward/backward passes.
pub struct Network<'a, T> {
    state: &'a NetworkState<T>,
    exec: Exec,
}

impl<T: Scalar> NetworkState<T> {
    pub fn new<R: Rng + ?Sized>(config: NetworkConfig, input: InputShape, rng: &mut R) -> Result<Self, CnnError> {
        config.validate()?;
        if input.is_empty() {
            return Err(CnnError::InvalidConfig("input shape must be non-empty".into()));
        }
        let params = Params::he_init(&config, input, rng);
        Ok(Self { config, input, params, step: 0 })
    }

    pub fn network(&self) -> Network<'_, T> {
        Network { state: self, exec: Exec::Serial }
    }

    pub fn cast<U: Scalar>(&self) -> NetworkState<U> {
        NetworkState { config: self.config.clone(), input: self.input, params: self.params.cast(), step: self.step }
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<(), CnnError> {
        out.write_all(CHECKPOINT_MAGIC)?;
        let c = &self.config;
        let header = [
            CHECKPOINT_VERSION as usize,
            self.input.channels,
            self.input.height,
            self.input.width,
            c.conv1_kernels,
            c.conv2_kernels,
            c.kernel_size,
            c.dense_units,
            c.classes,
        ]
        .map(|v| v as u32);
        for v in header {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&(c.keep_prob as f32).to_le_bytes())?;
        out.write_all(&self.step.to_le_bytes())?;
        for slice in self.params.slices() {
            for &v in slice {
                out.write_all(&v.to_f32_lossy().to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self, CnnError> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic).map_err(truncated)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(CnnError::BadCheckpoint(format!("bad magic {magic:?}")));
        }
        let mut u32s = [0u32; 9];
        for v in &mut u32s {
            let mut b = [0u8; 4];
            input.read_exact(&mut b).map_err(truncated)?;
            *v = u32::from_le_bytes(b);
        }
        let [version, channels, height, width, conv1, conv2, kernel, dense, classes] = u32s.map(|v| v as usize);
        if version != CHECKPOINT_VERSION as usize {
            return Err(CnnError::BadCheckpoint(format!("unsupported version {version}")));
        }
        let mut b4 = [0u8; 4];
        input.read_exact(&mut b4).map_err(truncated)?;
        let keep_prob = f32::from_le_bytes(b4) as f64;
        let mut b8 = [0u8; 8];
        input.read_exact(&mut b8).map_err(truncated)?;
        let step = u64::from_le_bytes(b8);
        let config = NetworkConfig {
            conv1_kernels: conv1,
            conv2_kernels: conv2,
            kernel_size: kernel,
            dense_units: dense,
            keep_prob,
            classes,
        };
        config.validate().map_err(|e| CnnError::BadCheckpoint(e.to_string()))?;
        let input_shape = InputShape { channels, height, width };
        let mut params = Params::zeros(&config, input_shape);
        for slice in params.slices_mut() {
            for v in slice {
                input.read_exact(&mut b4).map_err(truncated)?;
                *v = T::from_f32_lossy(f32::from_le_bytes(b4));
            }
        }
        Ok(Self { config, input: input_shape, params, step })
    }

    pub fn save(&self, path: &Path) -> Result<(), CnnError> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self, CnnError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn truncated(e: std::io::Error) -> CnnError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        CnnError::BadCheckpoint("truncated checkpoint".into())
    } else {
        CnnError::Io(e)
    }
}

impl<'a, T: Scalar> Network<'a, T> {
    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn state(&self) -> &NetworkState<T> {
        self.state
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(), CnnError> {
        let [_, c, h, w] = x.shape();
        let s = self.state.input;
        if (c, h, w) != (s.channels, s.height, s.width) {
            return Err(CnnError::ShapeMismatch(format!(
                "input items are {c}x{h}x{w}, network expects {}x{}x{}",
                s.channels, s.height, s.width
            )));
        }
        Ok(())
    }

    /// Logits plus the cache needed by [`Network::backward`].
    pub fn forward<R: Rng + ?Sized>(&self, x: &Tensor<T>, mode: Mode, rng: &mut R) -> Result<(Tensor<T>, ForwardCache<T>), CnnError> {
        self.check_input(x)?;
        let p = &self.state.params;
        let z1 = conv2d_forward_exec(x, &p.conv1_w, &p.conv1_b, self.exec)?;
        let (p1, pool1) = maxpool2x2_forward(&relu_forward(&z1));
        let z2 = conv2d_forward_exec(&p1, &p.conv2_w, &p.conv2_b, self.exec)?;
        let (p2, pool2) = maxpool2x2_forward(&relu_forward(&z2));
        let z3 = dense_forward(&p2, &p.fc1_w, &p.fc1_b)?;
        let drop = dropout(&relu_forward(&z3), self.state.config.keep_prob, mode, rng);
        let logits = dense_forward(&drop.output, &p.fc2_w, &p.fc2_b)?;
        let cache = ForwardCache { x: x.clone(), z1, pool1, p1, z2, pool2, p2, z3, drop };
        Ok((logits, cache))
    }

    /// Evaluation-mode logits.
    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>, CnnError> {
        // eval mode never draws from the rng
        let mut unused = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        Ok(self.forward(x, Mode::Eval, &mut unused)?.0)
    }

    pub fn backward(&self, cache: &ForwardCache<T>, grad_logits: &Tensor<T>) -> Result<Params<T>, CnnError> {
        let p = &self.state.params;
        let out = dense_backward(grad_logits, &cache.drop.output, &p.fc2_w, true)?;
        let g = dropout_backward(&out.input.expect("requested"), cache.drop.mask.as_deref());
        let g = relu_backward(&g, &cache.z3)?;
        let fc1 = dense_backward(&g, &cache.p2, &p.fc1_w, true)?;
        let g = maxpool2x2_backward(&fc1.input.expect("requested").reshape(cache.p2.shape())?, &cache.pool2)?;
        let g = relu_backward(&g, &cache.z2)?;
        let conv2 = conv2d_backward_exec(&g, &cache.p1, &p.conv2_w, true, self.exec)?;
        let g = maxpool2x2_backward(&conv2.input.expect("requested"), &cache.pool1)?;
        let g = relu_backward(&g, &cache.z1)?;
        let conv1 = conv2d_backward_exec(&g, &cache.x, &p.conv1_w, false, self.exec)?;
        Ok(Params {
            conv1_w: conv1.weights,
            conv1_b: conv1.bias,
            conv2_w: conv2.weights,
            conv2_b: conv2.bias,
            fc1_w: fc1.weights,
            fc1_b: fc1.bias,
            fc2_w: out.weights,
            fc2_b: out.bias,
        })
    }

    /// Mean cross-entropy over the batch, its parameter gradients, and the
    /// logits of the pass.
    pub fn loss_and_grads<R: Rng + ?Sized>(
        &self,
        x: &Tensor<T>,
        labels: &[usize],
        mode: Mode,
        rng: &mut R,
    ) -> Result<(T, Params<T>, Tensor<T>), CnnError> {
        let (logits, cache) = self.forward(x, mode, rng)?;
        let (loss, grad) = softmax_cross_entropy_batch(&logits, labels)?;
        let grads = self.backward(&cache, &grad)?;
        Ok((loss, grads, logits))
    }

    /// Softmax probabilities per batch item (eval mode).
    pub fn probabilities(&self, x: &Tensor<T>) -> Result<Vec<Vec<T>>, CnnError> {
        let logits = self.logits(x)?;
        Ok((0..logits.batch()).map(|b| softmax(logits.item(b))).collect())
    }
}
