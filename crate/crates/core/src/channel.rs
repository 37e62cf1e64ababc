//! Rayleigh block fading and additive white Gaussian noise.
//!
//! Every fading coefficient is an independent CN(0, 1) draw. A
//! [`ChannelSet`] is held constant for one packet and redrawn for the next.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numerics::{check_finite_matrix, ComplexMatrix, ComplexVector};

/// Fading matrices of one packet: `h` source to destination, `f[k]` source
/// to relay `k`, `g[k]` relay `k` to destination. All `N x N`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSet {
    pub h: ComplexMatrix,
    pub f: Vec<ComplexMatrix>,
    pub g: Vec<ComplexMatrix>,
}

impl ChannelSet {
    pub fn new(h: ComplexMatrix, f: Vec<ComplexMatrix>, g: Vec<ComplexMatrix>) -> Result<Self> {
        let n = h.nrows();
        if n == 0 || h.ncols() != n {
            return Err(Error::dim(format!(
                "H must be square and non-empty, got {}x{}",
                h.nrows(),
                h.ncols()
            )));
        }
        if f.len() != g.len() {
            return Err(Error::dim(format!(
                "{} source-relay channels but {} relay-destination channels",
                f.len(),
                g.len()
            )));
        }
        for m in f.iter().chain(g.iter()) {
            if m.shape() != (n, n) {
                return Err(Error::dim(format!(
                    "relay channel is {:?}, expected {n}x{n}",
                    m.shape()
                )));
            }
        }
        if !std::iter::once(&h)
            .chain(&f)
            .chain(&g)
            .all(check_finite_matrix)
        {
            return Err(Error::Domain("channel entries must be finite".into()));
        }
        Ok(Self { h, f, g })
    }

    pub fn relays(&self) -> usize {
        self.f.len()
    }

    pub fn antennas(&self) -> usize {
        self.h.nrows()
    }
}

/// Noise variances per complex dimension. The physical model uses one
/// variance everywhere; `relay_sigma2` exists so relay noise can be switched
/// off for destination-noise-only checks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub sigma2: f64,
    pub relay_sigma2: f64,
}

impl NoiseSpec {
    pub fn uniform(sigma2: f64) -> Result<Self> {
        Self::new(sigma2, sigma2)
    }

    pub fn destination_only(sigma2: f64) -> Result<Self> {
        Self::new(sigma2, 0.0)
    }

    pub fn new(sigma2: f64, relay_sigma2: f64) -> Result<Self> {
        for v in [sigma2, relay_sigma2] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!(
                    "noise variance {v} must be finite and >= 0"
                )));
            }
        }
        Ok(Self {
            sigma2,
            relay_sigma2,
        })
    }
}

/// One CN(0, variance) sample.
#[inline]
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let scale = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(scale * re, scale * im)
}

pub fn rayleigh_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> ComplexMatrix {
    // Column-major fill, so the draw order is fixed.
    ComplexMatrix::from_iterator(
        rows,
        cols,
        (0..rows * cols).map(|_| complex_gaussian(rng, 1.0)),
    )
}

/// Draw order: `H`, then `F_k`, `G_k` for each relay in turn.
pub fn draw_channel_set<R: Rng + ?Sized>(
    relays: usize,
    antennas: usize,
    rng: &mut R,
) -> ChannelSet {
    let h = rayleigh_matrix(antennas, antennas, rng);
    let mut f = Vec::with_capacity(relays);
    let mut g = Vec::with_capacity(relays);
    for _ in 0..relays {
        f.push(rayleigh_matrix(antennas, antennas, rng));
        g.push(rayleigh_matrix(antennas, antennas, rng));
    }
    ChannelSet { h, f, g }
}

/// Circularly symmetric complex noise, `sigma2` per entry. The stream is
/// consumed even when `sigma2 == 0` so draws stay aligned across settings.
pub fn awgn<R: Rng + ?Sized>(len: usize, sigma2: f64, rng: &mut R) -> Result<ComplexVector> {
    if !(sigma2 >= 0.0) {
        return Err(Error::Domain(format!(
            "noise variance {sigma2} is negative"
        )));
    }
    Ok(awgn_unchecked(len, sigma2, rng))
}

pub(crate) fn awgn_unchecked<R: Rng + ?Sized>(
    len: usize,
    sigma2: f64,
    rng: &mut R,
) -> ComplexVector {
    ComplexVector::from_iterator(len, (0..len).map(|_| complex_gaussian(rng, sigma2)))
}

pub(crate) fn awgn_matrix<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    sigma2: f64,
    rng: &mut R,
) -> ComplexMatrix {
    ComplexMatrix::from_iterator(
        rows,
        cols,
        (0..rows * cols).map(|_| complex_gaussian(rng, sigma2)),
    )
}

/// Noise variance for a given SNR, with SNR = total transmit power over the
/// per-antenna noise variance.
pub fn snr_to_sigma2(snr_db: f64, total_signal_power: f64) -> f64 {
    total_signal_power / 10f64.powf(snr_db / 10.0)
}
