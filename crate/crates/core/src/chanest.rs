//! Least-mean-squares estimation of the direct channel, the equivalent relay
//! channels and the source-relay channels from known pilot symbols.
//!
//! For a pilot vector `s` each link sees `r = M x + n` with `x` the known
//! scaled pilot (`A_SD s`, `A_RkD s` or `A_SRk s`). The per-sample cost
//! `‖r - M̂ x‖²` has gradient `-2 e x^H` (packaged as `∂/∂Re + i ∂/∂Im`),
//! `e = r - M̂ x`, so the descent step is `M̂ ← M̂ + β e x^H`.
//!
//! During the pilot phase every relay forwards the pilot itself rather than
//! its noisy copy, so the destination fits `G'_k` without the relay noise,
//! while each relay fits its own `F_k` and feeds it back.

use num_complex::Complex64;
use rand::Rng;

use crate::channel::{ChannelSet, NoiseSpec};
use crate::coopsys::{broadcast_phase, relay_phase, LinkChannels, PowerAllocation, Topology};
use crate::dstc::{CodeScheme, SLOTS};
use crate::error::{Error, Result};
use crate::numerics::{check_finite_matrix, real_to_complex, ComplexMatrix, ComplexVector};

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelEstimate {
    pub h_hat: ComplexMatrix,
    pub gp_hat: Vec<ComplexMatrix>,
    pub f_hat: Vec<ComplexMatrix>,
}

impl ChannelEstimate {
    pub fn zeros(topology: Topology) -> Self {
        let n = topology.antennas;
        Self {
            h_hat: ComplexMatrix::zeros(n, n),
            gp_hat: vec![ComplexMatrix::zeros(n * SLOTS, n); topology.relays],
            f_hat: vec![ComplexMatrix::zeros(n, n); topology.relays],
        }
    }

    pub fn topology(&self) -> Topology {
        Topology::new(self.gp_hat.len(), self.h_hat.ncols())
    }

    /// The estimate in the shape the detector and the adaptation consume.
    pub fn links(&self) -> LinkChannels {
        LinkChannels {
            h: self.h_hat.clone(),
            f: self.f_hat.clone(),
            gp: self.gp_hat.clone(),
        }
    }

    /// Relative Frobenius errors of `Ĥ`, each `Ĝ'_k` and each `F̂_k`.
    pub fn relative_errors(&self, truth: &LinkChannels) -> Vec<f64> {
        let rel = |a: &ComplexMatrix, b: &ComplexMatrix| (a - b).norm() / b.norm();
        std::iter::once(rel(&self.h_hat, &truth.h))
            .chain(self.gp_hat.iter().zip(&truth.gp).map(|(a, b)| rel(a, b)))
            .chain(self.f_hat.iter().zip(&truth.f).map(|(a, b)| rel(a, b)))
            .collect()
    }
}

/// One pilot vector and everything observed for it: the destination's
/// direct and relay segments, and each relay's own received copy.
#[derive(Clone, Debug, PartialEq)]
pub struct PilotSample {
    pub symbols: Vec<f64>,
    /// Segment 0 is the direct link, segment `k + 1` relay `k`.
    pub segments: Vec<ComplexVector>,
    pub relay_inputs: Vec<ComplexVector>,
}

/// Transmit one pilot vector through the true channels.
pub fn observe_pilot<R: Rng + ?Sized>(
    symbols: &[f64],
    ch: &ChannelSet,
    codes: &[CodeScheme],
    pa: &PowerAllocation,
    noise: &NoiseSpec,
    rng: &mut R,
) -> Result<PilotSample> {
    let s = real_to_complex(symbols);
    let (r_sd, relay_inputs) = broadcast_phase(&s, ch, pa, noise, rng)?;
    let pilots = vec![s; ch.relays()];
    let relayed = relay_phase(&pilots, ch, pa, codes, noise, rng)?;
    let mut segments = Vec::with_capacity(ch.relays() + 1);
    segments.push(r_sd);
    segments.extend(relayed);
    Ok(PilotSample {
        symbols: symbols.to_vec(),
        segments,
        relay_inputs,
    })
}

fn scaled(s: &[f64], alpha: &[f64]) -> ComplexVector {
    ComplexVector::from_iterator(
        s.len(),
        s.iter().zip(alpha).map(|(v, a)| Complex64::new(v * a, 0.0)),
    )
}

fn check_shapes(
    est: &ChannelEstimate,
    segments: &[ComplexVector],
    s: &[f64],
    pa: &PowerAllocation,
) -> Result<()> {
    let topo = est.topology();
    let n = topo.antennas;
    if s.len() != n || pa.streams() != n || pa.relays() != topo.relays {
        return Err(Error::dim(
            "pilot or power allocation does not match the estimate",
        ));
    }
    if segments.len() != topo.relays + 1 {
        return Err(Error::dim(format!(
            "{} segments for {} relays",
            segments.len(),
            topo.relays
        )));
    }
    for (i, seg) in segments.iter().enumerate() {
        if seg.len() != topo.segment_range(i).len() {
            return Err(Error::dim(format!("segment {i} has length {}", seg.len())));
        }
    }
    Ok(())
}

/// `‖r_1 - Ĥ A_SD s‖² + Σ_k ‖r_k - Ĝ'_k A_RkD s‖²`.
pub fn channel_cost(
    est: &ChannelEstimate,
    segments: &[ComplexVector],
    s: &[f64],
    pa: &PowerAllocation,
) -> Result<f64> {
    check_shapes(est, segments, s, pa)?;
    let mut cost = (&segments[0] - &est.h_hat * scaled(s, &pa.sd)).norm_squared();
    for (k, gp) in est.gp_hat.iter().enumerate() {
        cost += (&segments[k + 1] - gp * scaled(s, &pa.rd[k])).norm_squared();
    }
    Ok(cost)
}

/// `Σ_k ‖r_SRk - F̂_k A_SRk s‖²`, the relays' own cost.
pub fn relay_input_cost(
    est: &ChannelEstimate,
    relay_inputs: &[ComplexVector],
    s: &[f64],
    pa: &PowerAllocation,
) -> Result<f64> {
    if relay_inputs.len() != est.f_hat.len() || s.len() != est.h_hat.ncols() {
        return Err(Error::dim("relay inputs do not match the estimate"));
    }
    let mut cost = 0.0;
    for (k, f) in est.f_hat.iter().enumerate() {
        if relay_inputs[k].len() != f.nrows() {
            return Err(Error::dim(format!(
                "relay {k} input has length {}",
                relay_inputs[k].len()
            )));
        }
        cost += (&relay_inputs[k] - f * scaled(s, &pa.sr[k])).norm_squared();
    }
    Ok(cost)
}

/// Gradient of [`channel_cost`] with respect to `Ĥ` and each `Ĝ'_k`, packaged
/// as `∂/∂Re + i ∂/∂Im` per entry.
pub fn channel_cost_gradient(
    est: &ChannelEstimate,
    segments: &[ComplexVector],
    s: &[f64],
    pa: &PowerAllocation,
) -> Result<(ComplexMatrix, Vec<ComplexMatrix>)> {
    check_shapes(est, segments, s, pa)?;
    let grad = |m: &ComplexMatrix, r: &ComplexVector, x: ComplexVector| {
        let e = r - m * &x;
        (e * x.adjoint()) * Complex64::new(-2.0, 0.0)
    };
    let gh = grad(&est.h_hat, &segments[0], scaled(s, &pa.sd));
    let gp = est
        .gp_hat
        .iter()
        .enumerate()
        .map(|(k, m)| grad(m, &segments[k + 1], scaled(s, &pa.rd[k])))
        .collect();
    Ok((gh, gp))
}

fn lms_update(m: &mut ComplexMatrix, r: &ComplexVector, x: &ComplexVector, beta: f64) {
    let e = r - &*m * x;
    m.ger(
        Complex64::new(beta, 0.0),
        &e,
        &x.conjugate(),
        Complex64::new(1.0, 0.0),
    );
}

/// One LMS step on every estimated link from a single pilot sample.
pub fn channel_sg_step(
    est: &ChannelEstimate,
    sample: &PilotSample,
    pa: &PowerAllocation,
    beta: f64,
) -> Result<ChannelEstimate> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Domain(format!("step size {beta} must be positive")));
    }
    let s = &sample.symbols;
    check_shapes(est, &sample.segments, s, pa)?;
    if sample.relay_inputs.len() != est.f_hat.len() {
        return Err(Error::dim("relay inputs do not match the estimate"));
    }
    let mut next = est.clone();
    lms_update(
        &mut next.h_hat,
        &sample.segments[0],
        &scaled(s, &pa.sd),
        beta,
    );
    for k in 0..est.gp_hat.len() {
        lms_update(
            &mut next.gp_hat[k],
            &sample.segments[k + 1],
            &scaled(s, &pa.rd[k]),
            beta,
        );
        if sample.relay_inputs[k].len() != est.f_hat[k].nrows() {
            return Err(Error::dim(format!(
                "relay {k} input has length {}",
                sample.relay_inputs[k].len()
            )));
        }
        lms_update(
            &mut next.f_hat[k],
            &sample.relay_inputs[k],
            &scaled(s, &pa.sr[k]),
            beta,
        );
    }
    let finite = check_finite_matrix(&next.h_hat)
        && next
            .gp_hat
            .iter()
            .chain(&next.f_hat)
            .all(check_finite_matrix);
    if !finite {
        return Err(Error::Divergence(format!(
            "channel estimate is no longer finite (beta = {beta})"
        )));
    }
    Ok(next)
}

/// Training must span every stream direction, otherwise some columns of the
/// channels are never observed.
fn check_excitation(training: &[PilotSample], n: usize) -> Result<()> {
    let mut gram = nalgebra::DMatrix::<f64>::zeros(n, n);
    for sample in training {
        let s = nalgebra::DVector::from_column_slice(&sample.symbols);
        gram += &s * s.transpose();
    }
    let scale = gram.diagonal().max();
    let rank = gram
        .symmetric_eigenvalues()
        .iter()
        .filter(|&&l| l > 1e-9 * scale.max(f64::MIN_POSITIVE))
        .count();
    if scale <= 0.0 || rank < n {
        return Err(Error::IllConditionedTraining(n));
    }
    Ok(())
}

/// Run [`channel_sg_step`] over the training block `epochs` times, starting
/// from a zero estimate.
pub fn estimate_channels(
    training: &[PilotSample],
    pa: &PowerAllocation,
    topology: Topology,
    beta: f64,
    epochs: usize,
) -> Result<ChannelEstimate> {
    if training
        .iter()
        .any(|t| t.symbols.len() != topology.antennas)
    {
        return Err(Error::dim("pilot length does not match the antenna count"));
    }
    check_excitation(training, topology.antennas)?;
    let mut est = ChannelEstimate::zeros(topology);
    for _ in 0..epochs {
        for sample in training {
            est = channel_sg_step(&est, sample, pa, beta)?;
        }
    }
    Ok(est)
}
