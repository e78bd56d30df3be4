//! Minimal CNN engine for the user-selection classifier.
//!
//! Layers are plain functions over [`Tensor`] with explicit backward passes;
//! [`network::Network`] wires them into the fixed LeNet-style stack
//! `conv-relu-pool-conv-relu-pool-dense-relu-dropout-dense-softmax`.
//! Everything is generic over [`Scalar`] so gradient checks run in `f64`
//! while training runs in `f32`.

pub mod layers;
pub mod network;
pub mod tensor;
pub mod train;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use thiserror::Error;

pub use layers::Mode;
pub use network::{InputShape, Network, NetworkConfig, NetworkState, Params};
pub use tensor::Tensor;
pub use train::{predict, train, EpochMetrics, TrainConfig};

#[derive(Debug, Error)]
pub enum CnnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Floating-point element type with a matching GEMM kernel.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + AddAssign + SubAssign + MulAssign + Sum + 'static
{
    /// Row-major `C = alpha·op(A)·op(B) + beta·C` with `op(A)` of size `m x k`
    /// and `op(B)` of size `k x n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(trans_a: bool, trans_b: bool, m: usize, n: usize, k: usize, alpha: Self, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]);

    fn from_f32_lossy(v: f32) -> Self;
    fn to_f32_lossy(self) -> f32;
}

fn strides(trans: bool, rows: usize, cols: usize) -> (isize, isize) {
    // (row stride, col stride) of op(X) where X is stored row-major
    if trans {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_scalar {
    ($t:ty, $kernel:path) => {
        impl Scalar for $t {
            fn gemm(trans_a: bool, trans_b: bool, m: usize, n: usize, k: usize, alpha: Self, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand too short");
                let (rsa, csa) = strides(trans_a, m, k);
                let (rsb, csb) = strides(trans_b, k, n);
                // SAFETY: operand lengths checked above; strides describe
                // dense row-major storage of the given dimensions.
                unsafe {
                    $kernel(m, k, n, alpha, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
                }
            }

            fn from_f32_lossy(v: f32) -> Self {
                v as $t
            }

            fn to_f32_lossy(self) -> f32 {
                self as f32
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);
