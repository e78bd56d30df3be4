//! Two-stage hybrid precoder: per-user analog phase matching followed by
//! baseband zero-forcing on the `N x N` effective channel.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::channel::ChannelMatrix;

pub type CMatrix = DMatrix<Complex64>;

/// Relative singular-value cutoff for the pseudo-inverse.
pub const PINV_RELATIVE_CUTOFF: f64 = 1e-12;

/// Channel rows of the selected users, `N_r x N_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectedChannel {
    b: CMatrix,
}

impl SelectedChannel {
    pub fn new(b: CMatrix) -> Self {
        Self { b }
    }

    /// Gathers `users` rows of `h` in the given order. Panics on an
    /// out-of-range user index.
    pub fn from_rows(h: &ChannelMatrix, users: &[usize]) -> Self {
        let n_tx = h.n_tx();
        let b = CMatrix::from_fn(users.len(), n_tx, |r, c| h.get(users[r], c));
        Self { b }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.b
    }

    pub fn n_streams(&self) -> usize {
        self.b.nrows()
    }

    pub fn n_tx(&self) -> usize {
        self.b.ncols()
    }
}

/// Analog and baseband precoders for one selected-user set.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderPair {
    /// `N_T x N`, constant modulus `1/sqrt(N_T)`.
    pub f_rf: CMatrix,
    /// `N x N`, columns scaled so `||F_RF f_k|| = 1`.
    pub f_bb: CMatrix,
    /// Effective channel was numerically singular; some streams are lost.
    pub rank_deficient: bool,
}

impl PrecoderPair {
    /// `F_RF F_BB`, the `N_T x N` overall precoder.
    pub fn combined(&self) -> CMatrix {
        &self.f_rf * &self.f_bb
    }
}

/// Column `u` is `exp(j·angle(b_u^H)) / sqrt(N_T)`.
pub fn analog_precoder(b: &SelectedChannel) -> CMatrix {
    let n_tx = b.n_tx();
    let amplitude = 1.0 / (n_tx as f64).sqrt();
    CMatrix::from_fn(n_tx, b.n_streams(), |i, u| {
        let phase = b.b[(u, i)].conj().arg();
        Complex64::from_polar(amplitude, phase)
    })
}

/// Baseband stage plus its singularity flag.
#[derive(Debug, Clone, PartialEq)]
pub struct BasebandZf {
    pub f_bb: CMatrix,
    pub rank_deficient: bool,
}

pub fn baseband_zf(b: &SelectedChannel, f_rf: &CMatrix) -> BasebandZf {
    let h_eff = &b.b * f_rf;
    baseband_zf_effective(&h_eff, f_rf)
}

/// Zero-forcing `F_BB = pinv(H_eff)` with per-stream power normalization.
pub fn baseband_zf_effective(h_eff: &CMatrix, f_rf: &CMatrix) -> BasebandZf {
    let (mut f_bb, rank_deficient) = pseudo_inverse(h_eff);
    let combined = f_rf * &f_bb;
    for k in 0..f_bb.ncols() {
        let power = combined.column(k).norm();
        if power > 0.0 {
            f_bb.column_mut(k).unscale_mut(power);
        }
    }
    BasebandZf { f_bb, rank_deficient }
}

/// SVD pseudo-inverse keeping singular values above
/// `PINV_RELATIVE_CUTOFF * s_max`. The flag reports whether any were cut.
pub fn pseudo_inverse(m: &CMatrix) -> (CMatrix, bool) {
    let (rows, cols) = m.shape();
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^H");
    let s_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = PINV_RELATIVE_CUTOFF * s_max;
    let mut pinv = CMatrix::zeros(cols, rows);
    let mut kept = 0;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s_max == 0.0 || s <= cutoff {
            continue;
        }
        kept += 1;
        // pinv += v_i (1/s) u_i^H
        let v_i = v_t.row(i).adjoint();
        let u_i = u.column(i);
        pinv += (v_i * u_i.adjoint()).unscale(s);
    }
    (pinv, kept < rows.min(cols))
}

pub fn hybrid_precoders(b: &SelectedChannel) -> PrecoderPair {
    let f_rf = analog_precoder(b);
    let BasebandZf { f_bb, rank_deficient } = baseband_zf(b, &f_rf);
    PrecoderPair { f_rf, f_bb, rank_deficient }
}
