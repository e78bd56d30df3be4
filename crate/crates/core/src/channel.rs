//! Geometric Saleh-Valenzuela channels for single-antenna users served by a
//! uniform planar array, plus the imperfect-CSI corruption model.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use thiserror::Error;

use crate::rng::complex_normal;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("array geometry {rows}x{cols} is invalid (both dimensions must be >= 1)")]
    InvalidGeometry { rows: usize, cols: usize },
    #[error("invalid channel config: {0}")]
    InvalidConfig(String),
    #[error("CSI accuracy {0} is outside [0, 1]")]
    CsiAccuracyOutOfRange(f64),
}

/// Uniform planar array with `rows x cols` elements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayGeometry {
    pub rows: usize,
    pub cols: usize,
    /// Element spacing in wavelengths.
    pub spacing: f64,
}

impl ArrayGeometry {
    pub fn new(rows: usize, cols: usize) -> Result<Self, ChannelError> {
        Self::with_spacing(rows, cols, 0.5)
    }

    pub fn with_spacing(rows: usize, cols: usize, spacing: f64) -> Result<Self, ChannelError> {
        if rows == 0 || cols == 0 {
            return Err(ChannelError::InvalidGeometry { rows, cols });
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(ChannelError::InvalidConfig(format!(
                "element spacing {spacing} must be positive"
            )));
        }
        Ok(Self { rows, cols, spacing })
    }

    pub fn n_elements(&self) -> usize {
        self.rows * self.cols
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConfig {
    pub n_tx: usize,
    pub n_users: usize,
    pub n_paths: usize,
    /// Linear path loss, absorbed into the SNR sweep by default.
    pub path_loss: f64,
    pub geometry: ArrayGeometry,
    pub seed: u64,
}

impl ChannelConfig {
    /// Config with default `L = 3` paths and unit path loss.
    pub fn new(geometry: ArrayGeometry, n_users: usize, seed: u64) -> Self {
        Self {
            n_tx: geometry.n_elements(),
            n_users,
            n_paths: 3,
            path_loss: 1.0,
            geometry,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if self.geometry.rows == 0 || self.geometry.cols == 0 {
            return Err(ChannelError::InvalidGeometry {
                rows: self.geometry.rows,
                cols: self.geometry.cols,
            });
        }
        if self.n_tx != self.geometry.n_elements() {
            return Err(ChannelError::InvalidConfig(format!(
                "n_tx = {} does not match {}x{} array",
                self.n_tx, self.geometry.rows, self.geometry.cols
            )));
        }
        if self.n_users == 0 {
            return Err(ChannelError::InvalidConfig("n_users must be >= 1".into()));
        }
        if self.n_paths == 0 {
            return Err(ChannelError::InvalidConfig("n_paths must be >= 1".into()));
        }
        if !(self.path_loss.is_finite() && self.path_loss > 0.0) {
            return Err(ChannelError::InvalidConfig(format!(
                "path loss {} must be positive",
                self.path_loss
            )));
        }
        Ok(())
    }
}

/// One propagation path: complex gain and departure angles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathParams {
    pub gain: Complex64,
    /// Azimuth angle of departure in `[0, 2π)`.
    pub azimuth: f64,
    /// Elevation angle of departure in `[0, π)`.
    pub elevation: f64,
}

impl PathParams {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let gain = complex_normal(rng);
        let azimuth = rng.random::<f64>() * 2.0 * PI;
        let elevation = rng.random::<f64>() * PI;
        Self { gain, azimuth, elevation }
    }
}

/// Complex `n_users x n_tx` channel, row-major; row `n` is user `n`'s channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ChannelMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![Complex64::new(0.0, 0.0); rows * cols] }
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex64>) -> Self {
        assert_eq!(data.len(), rows * cols, "channel data length mismatch");
        Self { rows, cols, data }
    }

    /// Panics on ragged input.
    pub fn from_rows(rows: &[Vec<Complex64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            assert_eq!(row.len(), cols, "ragged channel rows");
            data.extend_from_slice(row);
        }
        Self { rows: rows.len(), cols, data }
    }

    pub fn n_users(&self) -> usize {
        self.rows
    }

    pub fn n_tx(&self) -> usize {
        self.cols
    }

    pub fn row(&self, user: usize) -> &[Complex64] {
        &self.data[user * self.cols..(user + 1) * self.cols]
    }

    pub fn row_mut(&mut self, user: usize) -> &mut [Complex64] {
        &mut self.data[user * self.cols..(user + 1) * self.cols]
    }

    pub fn get(&self, user: usize, antenna: usize) -> Complex64 {
        self.data[user * self.cols + antenna]
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.data
    }

    pub fn entries_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn frobenius_norm_sqr(&self) -> f64 {
        self.data.iter().map(Complex64::norm_sqr).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// UPA response toward `(azimuth, elevation)`, unit Euclidean norm.
///
/// Element `m * cols + n` has phase
/// `2π·d·(m·sin(az)·sin(el) + n·cos(el))`.
pub fn upa_steering(azimuth: f64, elevation: f64, geometry: &ArrayGeometry) -> Vec<Complex64> {
    let n_tx = geometry.n_elements();
    let amplitude = 1.0 / (n_tx as f64).sqrt();
    let k = 2.0 * PI * geometry.spacing;
    let row_phase = azimuth.sin() * elevation.sin();
    let col_phase = elevation.cos();
    let mut out = Vec::with_capacity(n_tx);
    for m in 0..geometry.rows {
        for n in 0..geometry.cols {
            let phase = k * (m as f64 * row_phase + n as f64 * col_phase);
            out.push(Complex64::from_polar(amplitude, phase));
        }
    }
    out
}

/// Builds `h = sqrt(N_T / (ε L)) Σ_l η_l a_T(az_l, el_l)^H` from explicit paths.
pub fn user_channel_from_paths(config: &ChannelConfig, paths: &[PathParams]) -> Vec<Complex64> {
    let scale = (config.n_tx as f64 / (config.path_loss * paths.len() as f64)).sqrt();
    let mut h = vec![Complex64::new(0.0, 0.0); config.n_tx];
    for path in paths {
        let a = upa_steering(path.azimuth, path.elevation, &config.geometry);
        for (hi, ai) in h.iter_mut().zip(&a) {
            *hi += path.gain * ai.conj();
        }
    }
    for hi in &mut h {
        *hi *= scale;
    }
    h
}

/// One user's channel with `config.n_paths` i.i.d. random paths.
pub fn generate_user_channel<R: Rng + ?Sized>(config: &ChannelConfig, rng: &mut R) -> Vec<Complex64> {
    let paths: Vec<PathParams> = (0..config.n_paths).map(|_| PathParams::draw(rng)).collect();
    user_channel_from_paths(config, &paths)
}

pub fn generate_channel_matrix<R: Rng + ?Sized>(config: &ChannelConfig, rng: &mut R) -> ChannelMatrix {
    let mut data = Vec::with_capacity(config.n_users * config.n_tx);
    for _ in 0..config.n_users {
        data.extend(generate_user_channel(config, rng));
    }
    ChannelMatrix::from_vec(config.n_users, config.n_tx, data)
}

/// `Ĥ = ξ H + sqrt(1 - ξ²) E` with `E` i.i.d. CN(0, 1).
pub fn apply_csi_error<R: Rng + ?Sized>(
    h: &ChannelMatrix,
    accuracy: f64,
    rng: &mut R,
) -> Result<ChannelMatrix, ChannelError> {
    if !(0.0..=1.0).contains(&accuracy) {
        return Err(ChannelError::CsiAccuracyOutOfRange(accuracy));
    }
    if accuracy == 1.0 {
        return Ok(h.clone());
    }
    let err_scale = (1.0 - accuracy * accuracy).sqrt();
    let data = h
        .entries()
        .iter()
        .map(|&z| z * accuracy + complex_normal(rng) * err_scale)
        .collect();
    Ok(ChannelMatrix::from_vec(h.n_users(), h.n_tx(), data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use proptest::prelude::*;

    fn config(rows: usize, cols: usize, users: usize) -> ChannelConfig {
        ChannelConfig::new(ArrayGeometry::new(rows, cols).unwrap(), users, 11)
    }

    fn norm(v: &[Complex64]) -> f64 {
        v.iter().map(Complex64::norm_sqr).sum::<f64>().sqrt()
    }

    #[test]
    fn steering_zero_phase() {
        let g = ArrayGeometry::new(2, 2).unwrap();
        let a = upa_steering(0.0, PI / 2.0, &g);
        for z in a {
            assert!((z - Complex64::new(0.5, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn steering_half_wavelength_pi_shift() {
        let g = ArrayGeometry::new(2, 1).unwrap();
        let a = upa_steering(PI / 2.0, PI / 2.0, &g);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((a[0] - Complex64::new(s, 0.0)).norm() < 1e-12);
        assert!((a[1] - Complex64::new(-s, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn steering_unit_norm_12x12() {
        let g = ArrayGeometry::new(12, 12).unwrap();
        let a = upa_steering(1.234, 0.567, &g);
        assert_eq!(a.len(), 144);
        assert!((norm(&a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn geometry_rejects_empty() {
        assert!(ArrayGeometry::new(0, 4).is_err());
        let mut c = config(2, 2, 3);
        c.n_tx = 5;
        assert!(c.validate().is_err());
        assert!(config(2, 2, 3).validate().is_ok());
    }

    #[test]
    fn single_unit_path_has_power_n_tx() {
        let c = ChannelConfig { n_paths: 1, ..config(4, 4, 1) };
        let path = PathParams { gain: Complex64::new(1.0, 0.0), azimuth: 0.3, elevation: 1.1 };
        let h = user_channel_from_paths(&c, &[path]);
        assert!((norm(&h).powi(2) - 16.0).abs() < 1e-10);
    }

    #[test]
    fn path_loss_scales_amplitude() {
        let c1 = config(4, 4, 1);
        let c4 = ChannelConfig { path_loss: 4.0, ..c1.clone() };
        let h1 = generate_user_channel(&c1, &mut substream(5, 0));
        let h4 = generate_user_channel(&c4, &mut substream(5, 0));
        for (a, b) in h1.iter().zip(&h4) {
            assert!((a * 0.5 - b).norm() < 1e-12);
        }
    }

    #[test]
    fn mean_user_power_matches_n_tx() {
        let c = config(4, 4, 1);
        let mut rng = substream(21, 0);
        let trials = 10_000;
        let mean = (0..trials)
            .map(|_| norm(&generate_user_channel(&c, &mut rng)).powi(2))
            .sum::<f64>()
            / trials as f64;
        assert!((mean - 16.0).abs() < 0.05 * 16.0, "mean power {mean}");
    }

    #[test]
    fn matrix_shape_and_determinism() {
        let c = config(12, 12, 10);
        let a = generate_channel_matrix(&c, &mut substream(1, 3));
        let b = generate_channel_matrix(&c, &mut substream(1, 3));
        assert_eq!((a.n_users(), a.n_tx()), (10, 144));
        assert_eq!(a, b);
        assert!(a.is_finite());
    }

    #[test]
    fn user_rows_are_uncorrelated() {
        let c = config(12, 12, 2);
        let mut rng = substream(2, 0);
        let trials = 1000;
        let mut acc = 0.0;
        for _ in 0..trials {
            let h = generate_channel_matrix(&c, &mut rng);
            let (r0, r1) = (h.row(0), h.row(1));
            let inner: Complex64 = r0.iter().zip(r1).map(|(a, b)| a * b.conj()).sum();
            acc += inner.norm() / (norm(r0) * norm(r1));
        }
        // |ρ| of two independent length-144 vectors concentrates near 0.07
        let mean_rho = acc / trials as f64;
        assert!(mean_rho < 0.1, "mean |rho| {mean_rho}");
    }

    #[test]
    fn csi_error_endpoints() {
        let c = config(2, 2, 3);
        let h = generate_channel_matrix(&c, &mut substream(4, 0));
        assert_eq!(apply_csi_error(&h, 1.0, &mut substream(9, 0)).unwrap(), h);
        let e = apply_csi_error(&h, 0.0, &mut substream(9, 0)).unwrap();
        let zero = ChannelMatrix::zeros(3, 4);
        assert_eq!(e, apply_csi_error(&zero, 0.0, &mut substream(9, 0)).unwrap());
        assert_eq!(
            apply_csi_error(&h, 1.5, &mut substream(9, 0)),
            Err(ChannelError::CsiAccuracyOutOfRange(1.5))
        );
        assert!(apply_csi_error(&h, -0.1, &mut substream(9, 0)).is_err());
    }

    #[test]
    fn csi_error_variance() {
        let zero = ChannelMatrix::zeros(100, 100);
        let e = apply_csi_error(&zero, 0.7, &mut substream(8, 0)).unwrap();
        let var = e.frobenius_norm_sqr() / 10_000.0;
        assert!((var - 0.51).abs() < 0.05 * 0.51, "variance {var}");
    }

    #[test]
    fn csi_error_preserves_expected_energy() {
        let c = config(4, 4, 6);
        let h = generate_channel_matrix(&c, &mut substream(12, 0));
        let xi: f64 = 0.8;
        let expected = xi * xi * h.frobenius_norm_sqr() + (1.0 - xi * xi) * 96.0;
        let mut rng = substream(13, 0);
        let trials = 10_000;
        let mean = (0..trials)
            .map(|_| apply_csi_error(&h, xi, &mut rng).unwrap().frobenius_norm_sqr())
            .sum::<f64>()
            / trials as f64;
        assert!((mean - expected).abs() < 0.05 * expected, "{mean} vs {expected}");
    }

    proptest! {
        #[test]
        fn steering_constant_modulus(az in 0.0..(2.0 * PI), el in 0.0..PI, rows in 1usize..8, cols in 1usize..8) {
            let g = ArrayGeometry::new(rows, cols).unwrap();
            let a = upa_steering(az, el, &g);
            let m = 1.0 / ((rows * cols) as f64).sqrt();
            prop_assert!((norm(&a) - 1.0).abs() < 1e-12);
            for z in a {
                prop_assert!((z.norm() - m).abs() < 1e-12);
            }
        }

        #[test]
        fn path_loss_scaling(c in 1.0f64..10.0, seed in any::<u64>()) {
            let base = config(3, 2, 1);
            let scaled = ChannelConfig { path_loss: c * c, ..base.clone() };
            let h1 = generate_user_channel(&base, &mut substream(seed, 0));
            let h2 = generate_user_channel(&scaled, &mut substream(seed, 0));
            for (a, b) in h1.iter().zip(&h2) {
                prop_assert!((a / c - b).norm() < 1e-10 * (1.0 + a.norm()));
            }
        }
    }
}
