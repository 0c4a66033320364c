//! Angle-delay profiles: the DFT transform from CSI and the normalized
//! correlation used to compare profiles.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;

use crate::channel::CsiMatrix;
use crate::error::{Error, Result};

/// The angle-domain (`v_matrix`, N_t × N_t) and delay-domain (`f_matrix`,
/// N_c × N_c) DFT matrices.
///
/// `[V]_{z,q} = exp(-j2π z (q - N_t/2) / N_t) / √N_t` and
/// `[F]_{z,q} = exp(+j2π z q / N_c) / √N_c`. The positive exponent in `F`
/// undoes the `exp(-j2π l n / N_c)` delay phase of the channel model, so a
/// path with sampled delay `n` lands in delay column `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct DftPair {
    pub v_matrix: Array2<Complex64>,
    pub f_matrix: Array2<Complex64>,
    // V^H, cached since every transform needs it.
    v_adjoint: Array2<Complex64>,
}

impl DftPair {
    pub fn new(n_antennas: usize, n_subcarriers: usize) -> Self {
        assert!(n_antennas >= 1 && n_subcarriers >= 1, "DFT dimensions must be positive");
        let nt = n_antennas as f64;
        let nc = n_subcarriers as f64;
        let v_matrix = Array2::from_shape_fn((n_antennas, n_antennas), |(z, q)| {
            let phase = -2.0 * PI * z as f64 * (q as f64 - nt / 2.0) / nt;
            Complex64::from_polar(1.0 / nt.sqrt(), phase)
        });
        let f_matrix = Array2::from_shape_fn((n_subcarriers, n_subcarriers), |(z, q)| {
            let k = (z * q) % n_subcarriers;
            Complex64::from_polar(1.0 / nc.sqrt(), 2.0 * PI * k as f64 / nc)
        });
        let v_adjoint = v_matrix.t().mapv(|c| c.conj());
        Self {
            v_matrix,
            f_matrix,
            v_adjoint,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.v_matrix.nrows(), self.f_matrix.nrows())
    }

    /// The complex profile `V^H H F` before taking magnitudes.
    pub fn transform(&self, csi: &CsiMatrix) -> Result<Array2<Complex64>> {
        if csi.dims() != self.dims() {
            return Err(Error::dims(
                format!("{:?}", self.dims()),
                format!("{:?}", csi.dims()),
            ));
        }
        Ok(self.v_adjoint.dot(&csi.0).dot(&self.f_matrix))
    }
}

/// Nonnegative angle × delay magnitude image.
#[derive(Debug, Clone, PartialEq)]
pub struct Adp {
    pub pixels: Array2<f64>,
}

impl Adp {
    pub fn new(pixels: Array2<f64>) -> Self {
        debug_assert!(pixels.iter().all(|p| *p >= 0.0 && p.is_finite()));
        Self { pixels }
    }

    pub fn zeros(n_antennas: usize, n_subcarriers: usize) -> Self {
        Self::new(Array2::zeros((n_antennas, n_subcarriers)))
    }

    pub fn from_vec(n_antennas: usize, n_subcarriers: usize, data: Vec<f64>) -> Result<Self> {
        let len = data.len();
        let pixels = Array2::from_shape_vec((n_antennas, n_subcarriers), data)
            .map_err(|_| Error::dims(n_antennas * n_subcarriers, len))?;
        if pixels.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Format("ADP pixels must be finite and nonnegative".into()));
        }
        Ok(Self { pixels })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.pixels.dim()
    }

    /// Row-major pixel slice (angle bins are rows).
    pub fn as_slice(&self) -> &[f64] {
        self.pixels
            .as_slice()
            .expect("ADP pixels are stored contiguously in row-major order")
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.as_slice().iter().map(|p| p * p).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.as_slice().iter().all(|p| *p == 0.0)
    }

    pub fn max(&self) -> f64 {
        self.as_slice().iter().copied().fold(0.0, f64::max)
    }

    /// (angle bin, delay bin) of the largest pixel, first in row-major order on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let (_, n_c) = self.dims();
        let mut best = 0;
        for (i, p) in self.as_slice().iter().enumerate() {
            if *p > self.as_slice()[best] {
                best = i;
            }
        }
        (best / n_c, best % n_c)
    }

    /// Rounds every pixel to the nearest `f32`, the precision of stored
    /// profiles, so in-memory and persisted profiles compare bit-exactly.
    pub fn quantized(mut self) -> Self {
        self.pixels.mapv_inplace(|p| p as f32 as f64);
        self
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::new(self.pixels.mapv(|p| p * factor))
    }
}

/// `A = |V^H H F|`.
pub fn adp_from_csi(csi: &CsiMatrix, dft: &DftPair) -> Result<Adp> {
    Ok(Adp::new(dft.transform(csi)?.mapv(|c| c.norm())))
}

/// Normalized correlation `⟨vec a, vec b⟩ / (‖a‖_F ‖b‖_F)`, in `[0, 1]` for
/// nonnegative profiles.
pub fn similarity(a: &Adp, b: &Adp) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::dims(format!("{:?}", a.dims()), format!("{:?}", b.dims())));
    }
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return Err(Error::ZeroAdp);
    }
    Ok((ab / (aa.sqrt() * bb.sqrt())).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn first_row_of_v_is_constant() {
        let dft = DftPair::new(8, 4);
        for c in dft.v_matrix.row(0) {
            assert_relative_eq!(c.re, 1.0 / 8f64.sqrt(), epsilon = 1e-15);
            assert!(c.im.abs() < 1e-15);
        }
    }

    #[test]
    fn dft_matrices_are_unitary() {
        let dft = DftPair::new(16, 12);
        for m in [&dft.v_matrix, &dft.f_matrix] {
            let gram = m.t().mapv(|c| c.conj()).dot(m);
            for ((i, j), c) in gram.indexed_iter() {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((c - Complex64::new(expected, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn f_entry_closed_form() {
        let dft = DftPair::new(2, 4);
        let f11 = dft.f_matrix[(1, 1)];
        assert_relative_eq!(f11.re, 0.0, epsilon = 1e-15);
        assert_relative_eq!(f11.im, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn zero_csi_gives_zero_adp() {
        let dft = DftPair::new(4, 4);
        let adp = adp_from_csi(&CsiMatrix::zeros(4, 4), &dft).unwrap();
        assert!(adp.is_zero());
    }

    #[test]
    fn transform_rejects_mismatched_csi() {
        let dft = DftPair::new(4, 4);
        assert!(matches!(
            adp_from_csi(&CsiMatrix::zeros(4, 5), &dft),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn similarity_basics() {
        let a = Adp::new(array![[1.0, 2.0], [0.0, 3.0]]);
        assert_relative_eq!(similarity(&a, &a).unwrap(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(similarity(&a, &a.scaled(2.0)).unwrap(), 1.0, epsilon = 1e-15);
        let b = Adp::new(array![[1.0, 0.0], [0.0, 0.0]]);
        let c = Adp::new(array![[0.0, 0.0], [0.0, 5.0]]);
        assert_eq!(similarity(&b, &c).unwrap(), 0.0);
    }

    #[test]
    fn similarity_with_zero_profile_is_an_error() {
        let a = Adp::new(array![[1.0, 2.0], [0.0, 3.0]]);
        assert!(matches!(similarity(&a, &Adp::zeros(2, 2)), Err(Error::ZeroAdp)));
    }

    #[test]
    fn argmax_prefers_first_on_ties() {
        let a = Adp::new(array![[0.0, 2.0], [2.0, 1.0]]);
        assert_eq!(a.argmax(), (0, 1));
    }
}
