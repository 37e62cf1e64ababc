//! Comparison schemes: equal power allocation and the linear MMSE receiver.

use num_complex::Complex64;

use crate::coopsys::{effective_map, LinkChannels, PowerAllocation, ReceiveFilterBank};
use crate::error::{Error, Result};
use crate::numerics::{ComplexMatrix, ComplexVector};

/// The noise-free map `Φ` from the transmitted stream vector to `E[r]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectiveSystem {
    phi: ComplexMatrix,
}

impl EffectiveSystem {
    pub fn new(links: &LinkChannels, pa: &PowerAllocation) -> Result<Self> {
        Ok(Self {
            phi: effective_map(links, pa)?,
        })
    }

    pub fn from_matrix(phi: ComplexMatrix) -> Result<Self> {
        if phi.nrows() == 0 || phi.ncols() == 0 {
            return Err(Error::dim("effective system must be non-empty"));
        }
        Ok(Self { phi })
    }

    pub fn phi(&self) -> &ComplexMatrix {
        &self.phi
    }

    /// `E|s_j - w^H r|²` for unit-power streams and white noise of variance
    /// `noise_var` per complex entry.
    pub fn mse(&self, w: &ComplexVector, j: usize, noise_var: f64) -> f64 {
        let response = self.phi.adjoint() * w; // Φ^H w
        let own = response[j];
        let total: f64 = response.iter().map(|z| z.norm_sqr()).sum();
        1.0 - 2.0 * own.re + total + noise_var * w.norm_squared()
    }
}

/// Every link of every stream gets `sqrt(P_T / (2 n_r + 1))`.
pub fn epa_allocation(relays: usize, streams: usize, p_total: f64) -> Result<PowerAllocation> {
    if !(p_total > 0.0 && p_total.is_finite()) {
        return Err(Error::Domain(format!(
            "power budget {p_total} must be positive"
        )));
    }
    let links = (2 * relays + 1) as f64;
    Ok(PowerAllocation::uniform(
        relays,
        streams,
        (p_total / links).sqrt(),
    ))
}

/// Wiener receiver `w_j = (Φ Φ^H + σ² I)^{-1} Φ e_j`, evaluated through the
/// push-through identity as `Φ (Φ^H Φ + σ² I)^{-1} e_j` so only an `N x N`
/// system is factored.
pub fn mmse_filter(sys: &EffectiveSystem, noise_var: f64) -> Result<ReceiveFilterBank> {
    if !(noise_var >= 0.0 && noise_var.is_finite()) {
        return Err(Error::Domain(format!(
            "noise variance {noise_var} must be finite and >= 0"
        )));
    }
    let phi = &sys.phi;
    let n = phi.ncols();
    let gram = phi.adjoint() * phi + ComplexMatrix::identity(n, n) * Complex64::new(noise_var, 0.0);
    let chol = gram
        .clone()
        .cholesky()
        .ok_or(Error::SingularCovariance(noise_var))?;
    // A pivot at rounding level means the Gram matrix is numerically singular.
    let scale = gram.diagonal().iter().map(|z| z.re).fold(0.0, f64::max);
    if chol
        .l_dirty()
        .diagonal()
        .iter()
        .any(|d| d.re * d.re <= 1e-13 * scale)
    {
        return Err(Error::SingularCovariance(noise_var));
    }
    let inv = chol.inverse();
    let w = phi * inv;
    if w.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::SingularCovariance(noise_var));
    }
    ReceiveFilterBank::new(w.column_iter().map(|c| c.into_owned()).collect())
}
