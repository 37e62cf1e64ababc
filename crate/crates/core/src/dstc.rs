//! Relay-side space-time coding.
//!
//! A relay with two antennas sends the 2x2 code matrix `M(x)` over two time
//! slots: rows are antennas, columns are slots. For Alamouti
//!
//! ```text
//! M(x) = [ x1  -conj(x2) ]
//!        [ x2   conj(x1) ]
//! ```
//!
//! and randomized Alamouti multiplies `M(x)` elementwise by a unit-modulus
//! randomizer `Θ`. The destination stacks the two received columns into one
//! vector and conjugates the second-slot half, which turns `G M(x)` into the
//! strictly linear form `G' x`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{ComplexMatrix, ComplexVector};

/// Antennas per relay.
pub const ANTENNAS: usize = 2;
/// Time slots per code block.
pub const SLOTS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CodeKind {
    Alamouti,
    RAlamouti,
}

impl CodeKind {
    pub const ALL: [CodeKind; 2] = [CodeKind::Alamouti, CodeKind::RAlamouti];

    pub fn as_str(self) -> &'static str {
        match self {
            CodeKind::Alamouti => "alamouti",
            CodeKind::RAlamouti => "r-alamouti",
        }
    }
}

impl fmt::Display for CodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CodeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "alamouti" => Ok(CodeKind::Alamouti),
            "r-alamouti" | "ralamouti" | "randomized-alamouti" => Ok(CodeKind::RAlamouti),
            other => Err(Error::Config(format!(
                "unknown code `{other}`; expected one of: alamouti, r-alamouti"
            ))),
        }
    }
}

/// One relay's code. Randomized Alamouti carries its own randomizer, so each
/// relay gets its own `CodeScheme`.
#[derive(Clone, Debug, PartialEq)]
pub struct CodeScheme {
    kind: CodeKind,
    randomizer: Option<ComplexMatrix>,
}

impl CodeScheme {
    pub fn alamouti() -> Self {
        Self {
            kind: CodeKind::Alamouti,
            randomizer: None,
        }
    }

    /// Randomized Alamouti with an explicit 2x2 unit-modulus randomizer.
    pub fn randomized(randomizer: ComplexMatrix) -> Result<Self> {
        if randomizer.shape() != (ANTENNAS, SLOTS) {
            return Err(Error::dim(format!(
                "randomizer must be {ANTENNAS}x{SLOTS}, got {:?}",
                randomizer.shape()
            )));
        }
        if randomizer.iter().any(|z| (z.norm() - 1.0).abs() > 1e-9) {
            return Err(Error::Domain(
                "randomizer entries must have unit modulus".into(),
            ));
        }
        Ok(Self {
            kind: CodeKind::RAlamouti,
            randomizer: Some(randomizer),
        })
    }

    /// Randomizer with i.i.d. uniform phases.
    pub fn draw_randomized<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let theta = ComplexMatrix::from_iterator(
            ANTENNAS,
            SLOTS,
            (0..ANTENNAS * SLOTS)
                .map(|_| Complex64::from_polar(1.0, rng.random_range(0.0..2.0 * PI))),
        );
        Self {
            kind: CodeKind::RAlamouti,
            randomizer: Some(theta),
        }
    }

    /// The code for one relay; randomized kinds draw a fresh randomizer.
    pub fn for_relay<R: Rng + ?Sized>(kind: CodeKind, rng: &mut R) -> Self {
        match kind {
            CodeKind::Alamouti => Self::alamouti(),
            CodeKind::RAlamouti => Self::draw_randomized(rng),
        }
    }

    pub fn kind(&self) -> CodeKind {
        self.kind
    }

    pub fn randomizer(&self) -> Option<&ComplexMatrix> {
        self.randomizer.as_ref()
    }

    fn theta(&self, antenna: usize, slot: usize) -> Complex64 {
        self.randomizer
            .as_ref()
            .map_or(Complex64::new(1.0, 0.0), |r| r[(antenna, slot)])
    }

    /// Code matrix for a length-2 symbol vector.
    pub fn encode(&self, x: &ComplexVector) -> Result<ComplexMatrix> {
        if x.len() != ANTENNAS {
            return Err(Error::dim(format!(
                "code input has length {}, expected {ANTENNAS}",
                x.len()
            )));
        }
        let (x1, x2) = (x[0], x[1]);
        let m = ComplexMatrix::from_row_slice(2, 2, &[x1, -x2.conj(), x2, x1.conj()]);
        Ok(match &self.randomizer {
            Some(theta) => m.component_mul(theta),
            None => m,
        })
    }

    /// `G'` with `linearize(G M(x)) = G' x` for every complex `x`.
    pub fn equivalent_channel(&self, g: &ComplexMatrix) -> Result<ComplexMatrix> {
        if g.ncols() != ANTENNAS || g.nrows() == 0 {
            return Err(Error::dim(format!(
                "relay channel must have {ANTENNAS} columns, got {:?}",
                g.shape()
            )));
        }
        let rx = g.nrows();
        let g1 = g.column(0);
        let g2 = g.column(1);
        let mut out = ComplexMatrix::zeros(rx * SLOTS, ANTENNAS);
        // Slot 1: g1 θ00 x1 + g2 θ10 x2.
        // Slot 2, conjugated: conj(g2 θ11) x1 - conj(g1 θ01) x2.
        let (t00, t10, t01, t11) = (
            self.theta(0, 0),
            self.theta(1, 0),
            self.theta(0, 1),
            self.theta(1, 1),
        );
        for a in 0..rx {
            out[(a, 0)] = g1[a] * t00;
            out[(a, 1)] = g2[a] * t10;
            out[(rx + a, 0)] = (g2[a] * t11).conj();
            out[(rx + a, 1)] = -(g1[a] * t01).conj();
        }
        Ok(out)
    }
}

/// Stack a receive block column by column (slot after slot) and conjugate
/// every sample after the first slot.
pub fn linearize(received: &ComplexMatrix) -> ComplexVector {
    let rows = received.nrows();
    ComplexVector::from_iterator(
        rows * received.ncols(),
        received.column_iter().enumerate().flat_map(|(slot, col)| {
            col.iter()
                .map(move |z| if slot == 0 { *z } else { z.conj() })
                .collect::<Vec<_>>()
        }),
    )
}
