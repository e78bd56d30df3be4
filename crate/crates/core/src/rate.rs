//! SINR and sum-rate evaluation of a user subset, and the analytic
//! operation-count model used to compare selection methods.

use std::fmt;

use crate::channel::ChannelMatrix;
use crate::cnn::NetworkConfig;
use crate::precoding::{hybrid_precoders, PrecoderPair, SelectedChannel};
use crate::selection::{binomial, UserSubset};

/// Outcome of serving one user subset.
#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub sinr: Vec<f64>,
    /// bits/s/Hz
    pub sum_rate: f64,
    pub noise_power: f64,
    pub rank_deficient: bool,
}

/// `γ_k = |b_k F_RF f_k|² / (Σ_{k'≠k} |b_k F_RF f_k'|² + σ²)`.
pub fn sinr_per_user(b: &SelectedChannel, precoders: &PrecoderPair, noise_power: f64) -> Vec<f64> {
    let gains = b.matrix() * precoders.combined();
    let n = gains.nrows();
    (0..n)
        .map(|k| {
            let signal = gains[(k, k)].norm_sqr();
            let interference: f64 = (0..gains.ncols())
                .filter(|&j| j != k)
                .map(|j| gains[(k, j)].norm_sqr())
                .sum();
            signal / (interference + noise_power)
        })
        .collect()
}

/// `Σ_k log2(1 + γ_k)`.
pub fn sum_rate(sinr: &[f64]) -> f64 {
    sinr.iter().map(|g| g.ln_1p()).sum::<f64>() / std::f64::consts::LN_2
}

/// Builds `B` from the subset's rows of `h`, precodes, and scores it.
pub fn evaluate_selection(h: &ChannelMatrix, subset: &UserSubset, noise_power: f64) -> RateReport {
    evaluate_users(h, subset.indices(), noise_power)
}

pub fn evaluate_users(h: &ChannelMatrix, users: &[usize], noise_power: f64) -> RateReport {
    let b = SelectedChannel::from_rows(h, users);
    let precoders = hybrid_precoders(&b);
    let sinr = sinr_per_user(&b, &precoders, noise_power);
    let sum_rate = sum_rate(&sinr);
    RateReport { sinr, sum_rate, noise_power, rank_deficient: precoders.rank_deficient }
}

/// Noise power for a given SNR with unit per-stream transmit power.
pub fn noise_power_from_snr_db(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Exhaustive,
    Bpso,
    Greedy,
    Cnn,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::Exhaustive, Algorithm::Bpso, Algorithm::Greedy, Algorithm::Cnn];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Exhaustive => "ES",
            Algorithm::Bpso => "BPSO",
            Algorithm::Greedy => "Greedy",
            Algorithm::Cnn => "CNN",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Dimensions that drive the online complexity of each method.
#[derive(Debug, Clone, PartialEq)]
pub struct OpCountModel {
    pub n_tx: usize,
    pub n_users: usize,
    pub n_select: usize,
    pub bpso_pop: usize,
    pub bpso_iters: usize,
    pub cnn: NetworkConfig,
}

impl OpCountModel {
    /// Uses the default CNN architecture for the given dimensions.
    pub fn new(n_tx: usize, n_users: usize, n_select: usize, bpso_pop: usize, bpso_iters: usize) -> Self {
        let classes = binomial(n_users, n_select) as usize;
        Self { n_tx, n_users, n_select, bpso_pop, bpso_iters, cnn: NetworkConfig::new(classes) }
    }

    /// Cost of one subset evaluation, `N_T² N_r²` complex operations.
    pub fn per_evaluation(&self) -> u64 {
        let (nt, nr) = (self.n_tx as u64, self.n_select as u64);
        nt * nt * nr * nr
    }
}

pub fn count_ops(model: &OpCountModel, algorithm: Algorithm) -> u64 {
    match algorithm {
        Algorithm::Exhaustive => binomial(model.n_users, model.n_select) * model.per_evaluation(),
        Algorithm::Bpso => (model.bpso_pop * model.bpso_iters) as u64 * model.per_evaluation(),
        Algorithm::Greedy => model.n_users as u64 * model.per_evaluation(),
        Algorithm::Cnn => model.cnn.multiply_count(model.n_users, model.n_tx),
    }
}
