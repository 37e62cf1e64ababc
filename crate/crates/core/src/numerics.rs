//! Small dense complex algebra, the Gaussian tail function and BPSK helpers.

use std::f64::consts::SQRT_2;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type ComplexMatrix = DMatrix<Complex64>;
pub type ComplexVector = DVector<Complex64>;

/// Largest constellation we are willing to enumerate (2^16 candidates).
pub const MAX_STREAMS: usize = 16;

/// Gaussian tail probability `Q(x) = P(Z > x)` for standard normal `Z`.
pub fn q_function(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Domain(format!(
            "Q-function argument {x} is not finite"
        )));
    }
    Ok(gaussian_tail(x))
}

/// Unchecked Q-function for the inner loops, where the argument is known to
/// be finite. Evaluated through `erfc` so the far tail keeps full relative
/// precision instead of cancelling against 1.
#[inline]
pub fn gaussian_tail(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

/// Standard normal density.
#[inline]
pub fn gaussian_pdf(x: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Bit 1 maps to +1, bit 0 to -1.
pub fn bpsk_map(bits: &[bool]) -> ComplexVector {
    ComplexVector::from_iterator(
        bits.len(),
        bits.iter().map(|&b| Complex64::new(bpsk(b), 0.0)),
    )
}

#[inline]
pub fn bpsk(bit: bool) -> f64 {
    if bit {
        1.0
    } else {
        -1.0
    }
}

/// Hard decision on the real part; zero decides for bit 0.
#[inline]
pub fn bpsk_decide(soft: f64) -> bool {
    soft > 0.0
}

/// Every BPSK symbol vector of a given length, in lexicographic bit order
/// (bit 0 = -1 sorts first, first stream most significant).
#[derive(Clone, Debug, PartialEq)]
pub struct ConstellationTable {
    n_streams: usize,
    candidates: Vec<Vec<f64>>,
}

impl ConstellationTable {
    /// Arbitrary candidate set, e.g. a reordering of the full table.
    pub fn from_candidates(candidates: Vec<Vec<f64>>) -> Result<Self> {
        let n_streams = candidates.first().map_or(0, Vec::len);
        if n_streams == 0 || candidates.iter().any(|c| c.len() != n_streams) {
            return Err(Error::dim(
                "candidates must be non-empty and of equal length",
            ));
        }
        if candidates.iter().flatten().any(|&v| v != 1.0 && v != -1.0) {
            return Err(Error::Domain("candidate entries must be +1 or -1".into()));
        }
        Ok(Self {
            n_streams,
            candidates,
        })
    }

    pub fn n_streams(&self) -> usize {
        self.n_streams
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn candidates(&self) -> &[Vec<f64>] {
        &self.candidates
    }

    pub fn candidate(&self, l: usize) -> &[f64] {
        &self.candidates[l]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.candidates.iter().map(Vec::as_slice)
    }
}

pub fn enumerate_constellation(n_streams: usize) -> Result<ConstellationTable> {
    if !(1..=MAX_STREAMS).contains(&n_streams) {
        return Err(Error::Config(format!(
            "constellation needs 1..={MAX_STREAMS} streams, got {n_streams}"
        )));
    }
    let candidates = (0..1usize << n_streams)
        .map(|l| {
            (0..n_streams)
                .map(|i| bpsk((l >> (n_streams - 1 - i)) & 1 == 1))
                .collect()
        })
        .collect();
    Ok(ConstellationTable {
        n_streams,
        candidates,
    })
}

/// Lift a real vector into a complex one.
pub fn real_to_complex(x: &[f64]) -> ComplexVector {
    ComplexVector::from_iterator(x.len(), x.iter().map(|&v| Complex64::new(v, 0.0)))
}

/// `Re(a^H b)`, the real inner product of the underlying real vectors.
#[inline]
pub fn real_inner(a: &ComplexVector, b: &ComplexVector) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| x.re * y.re + x.im * y.im)
        .sum()
}

pub fn check_finite_matrix(m: &ComplexMatrix) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

pub fn check_finite_vector(v: &ComplexVector) -> bool {
    v.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}
