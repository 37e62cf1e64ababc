//! Minimum-BER adaptation of the receive filters and the power allocation.
//!
//! For stream `j` with filter `w_j` and the noise-free map `Φ` (see
//! [`crate::coopsys::effective_map`]) the decision statistic for candidate
//! `s̄_l` is `y_l = Re(w_j^H Φ s̄_l)` and the bit error probability is
//!
//! ```text
//! P_j = 1/N_b Σ_l Q(c_l),   c_l = sgn(s̄_l[j]) y_l / (σ_n ‖w_j‖)
//! ```
//!
//! where `σ_n` is the noise standard deviation of the real part of each
//! receive sample (`sqrt(σ²/2)` for complex noise of variance `σ²`). All
//! gradients below are derived from this expression by the chain rule and
//! checked against central finite differences in the tests.
//!
//! The kernel-density variant replaces the candidate average by an average
//! over `K` training samples and `σ_n` by the bandwidth `ρ_n`.

use num_complex::Complex64;

use crate::coopsys::{
    effective_map, LinkChannels, PowerAllocation, ReceiveFilterBank, ReceiveVector, Topology,
};
use crate::error::{Error, Result};
use crate::numerics::{
    check_finite_vector, gaussian_pdf, gaussian_tail, real_inner, real_to_complex, ComplexMatrix,
    ComplexVector, ConstellationTable,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MberConfig {
    /// Filter step size.
    pub mu: f64,
    /// Power step size.
    pub gamma: f64,
    /// Training block length `K` for the kernel-density objective.
    pub train_len: usize,
    /// Multiplier on the minimum kernel bandwidth `(4 / 3K)^{1/5} σ_n`.
    pub bandwidth_floor_factor: f64,
    /// Step multiplier applied after an accepted step in [`adapt`]; a
    /// rejected step halves it.
    pub step_growth: f64,
}

impl Default for MberConfig {
    fn default() -> Self {
        Self {
            mu: 0.01,
            gamma: 0.01,
            train_len: 500,
            bandwidth_floor_factor: 1.0,
            step_growth: 2.0,
        }
    }
}

impl MberConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) || !(self.gamma > 0.0 && self.gamma.is_finite())
        {
            return Err(Error::Config(format!(
                "step sizes must be positive (mu = {}, gamma = {})",
                self.mu, self.gamma
            )));
        }
        if self.train_len == 0 {
            return Err(Error::Config("train_len must be at least 1".into()));
        }
        if !(self.bandwidth_floor_factor >= 1.0 && self.bandwidth_floor_factor.is_finite()) {
            return Err(Error::Config("bandwidth_floor_factor must be >= 1".into()));
        }
        if !(self.step_growth >= 1.0 && self.step_growth.is_finite()) {
            return Err(Error::Config("step_growth must be >= 1".into()));
        }
        Ok(())
    }
}

/// Jointly adapted filters and powers.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptiveState {
    pub filters: ReceiveFilterBank,
    pub powers: PowerAllocation,
    pub iteration: usize,
}

impl AdaptiveState {
    pub fn new(filters: ReceiveFilterBank, powers: PowerAllocation) -> Result<Self> {
        if filters.len() != powers.streams() {
            return Err(Error::dim(format!(
                "{} filters for {} streams",
                filters.len(),
                powers.streams()
            )));
        }
        Ok(Self {
            filters,
            powers,
            iteration: 0,
        })
    }

    /// Matched-filter start at the given powers.
    pub fn matched(links: &LinkChannels, powers: PowerAllocation) -> Result<Self> {
        let filters = crate::coopsys::matched_filter_bank(links, &powers)?;
        Self::new(filters, powers)
    }
}

/// Signed gradient with the shape of a [`PowerAllocation`].
#[derive(Clone, Debug, PartialEq)]
pub struct PowerGradient {
    pub sd: Vec<f64>,
    pub sr: Vec<Vec<f64>>,
    pub rd: Vec<Vec<f64>>,
}

impl PowerGradient {
    pub fn zeros(relays: usize, streams: usize) -> Self {
        Self {
            sd: vec![0.0; streams],
            sr: vec![vec![0.0; streams]; relays],
            rd: vec![vec![0.0; streams]; relays],
        }
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.sd
            .iter()
            .chain(self.sr.iter().flatten())
            .chain(self.rd.iter().flatten())
            .copied()
    }

    fn add_scaled(&mut self, other: &PowerGradient, scale: f64) {
        for (a, b) in self.sd.iter_mut().zip(&other.sd) {
            *a += scale * b;
        }
        for (ra, rb) in self
            .sr
            .iter_mut()
            .zip(&other.sr)
            .chain(self.rd.iter_mut().zip(&other.rd))
        {
            for (a, b) in ra.iter_mut().zip(rb) {
                *a += scale * b;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub filters: Vec<ComplexVector>,
    pub powers: PowerGradient,
}

// ---------------------------------------------------------------------------
// Objective and gradient engine
// ---------------------------------------------------------------------------

/// Quantities that depend on the powers but not on the filter.
struct Model<'a> {
    links: &'a LinkChannels,
    pa: &'a PowerAllocation,
    topo: Topology,
    phi: ComplexMatrix,
    /// `F_k A_SRk`.
    relay_in: Vec<ComplexMatrix>,
}

impl<'a> Model<'a> {
    fn new(links: &'a LinkChannels, pa: &'a PowerAllocation) -> Result<Self> {
        let phi = effective_map(links, pa)?;
        let scale_cols = |m: &ComplexMatrix, alpha: &[f64]| {
            let mut m = m.clone();
            for (j, a) in alpha.iter().enumerate() {
                m.column_mut(j).scale_mut(*a);
            }
            m
        };
        let relay_in = links
            .f
            .iter()
            .zip(&pa.sr)
            .map(|(f, a)| scale_cols(f, a))
            .collect();
        Ok(Self {
            links,
            pa,
            topo: links.topology(),
            phi,
            relay_in,
        })
    }

    fn response(&self, s: &[f64]) -> ComplexVector {
        &self.phi * real_to_complex(s)
    }
}

/// Filter-dependent coefficients of `∂y/∂α`.
struct PowerSensitivity {
    sd: Vec<Complex64>,
    sr: Vec<Vec<Complex64>>,
    rd: Vec<Vec<Complex64>>,
}

impl PowerSensitivity {
    fn new(model: &Model<'_>, w: &ComplexVector) -> Self {
        let n = model.topo.antennas;
        let direct = w.rows(0, n);
        let sd = (0..n)
            .map(|m| direct.dotc(&model.links.h.column(m)))
            .collect();
        let mut sr = Vec::with_capacity(model.topo.relays);
        let mut rd = Vec::with_capacity(model.topo.relays);
        for k in 0..model.topo.relays {
            let range = model.topo.segment_range(k + 1);
            let seg = w.rows(range.start, range.len());
            // w_k^H g'_{k,m}, and w_k^H G'_k A_RD f_{k,m}.
            let rd_k: Vec<Complex64> = (0..n)
                .map(|m| seg.dotc(&model.links.gp[k].column(m)))
                .collect();
            let v: Vec<Complex64> = (0..n).map(|m| rd_k[m] * model.pa.rd[k][m]).collect();
            let f = &model.links.f[k];
            let sr_k = (0..n)
                .map(|m| (0..n).map(|i| v[i] * f[(i, m)]).sum())
                .collect();
            sr.push(sr_k);
            rd.push(rd_k);
        }
        Self { sd, sr, rd }
    }
}

struct StreamEval {
    value: f64,
    grad_w: ComplexVector,
    grad_power: Option<PowerGradient>,
}

/// One stream's Q-average over `(symbols, receive vector)` samples and its
/// gradients. `noise_std` is `σ_n` for the exact objective, `ρ_n` for KDE.
fn evaluate_stream<'s, I>(
    model: &Model<'_>,
    w: &ComplexVector,
    j: usize,
    samples: I,
    noise_std: f64,
    want_power: bool,
) -> Result<StreamEval>
where
    I: IntoIterator<Item = (&'s [f64], ComplexVector)>,
{
    let norm2 = w.norm_squared();
    if norm2 == 0.0 {
        return Err(Error::DegenerateFilter(j));
    }
    if !(noise_std > 0.0) {
        return Err(Error::Domain(format!(
            "noise standard deviation {noise_std} must be positive"
        )));
    }
    let norm = norm2.sqrt();
    let scale = noise_std * norm;
    let n = model.topo.antennas;
    let relays = model.topo.relays;
    let sens = want_power.then(|| PowerSensitivity::new(model, w));

    let mut count = 0usize;
    let mut value = 0.0;
    // grad_w = Σ coef_l u_l - (Σ coef_l y_l) w / ‖w‖², coef_l = -φ(c_l) b_l / (σ ‖w‖).
    let mut acc_u = ComplexVector::zeros(w.len());
    let mut acc_y = 0.0;
    let mut grad_power = PowerGradient::zeros(relays, n);

    for (symbols, u) in samples {
        count += 1;
        let b = symbols[j];
        let y = real_inner(w, &u);
        let c = b * y / scale;
        value += gaussian_tail(c);
        let coef = -gaussian_pdf(c) * b / scale;
        if coef == 0.0 {
            continue;
        }
        acc_u.axpy(Complex64::new(coef, 0.0), &u, Complex64::new(1.0, 0.0));
        acc_y += coef * y;

        if let Some(sens) = &sens {
            for m in 0..n {
                grad_power.sd[m] += coef * sens.sd[m].re * symbols[m];
            }
            let s_c = real_to_complex(symbols);
            for k in 0..relays {
                let z = &model.relay_in[k] * &s_c;
                for m in 0..n {
                    grad_power.sr[k][m] += coef * sens.sr[k][m].re * symbols[m];
                    grad_power.rd[k][m] += coef * (sens.rd[k][m] * z[m]).re;
                }
            }
        }
    }
    if count == 0 {
        return Err(Error::Domain("objective needs at least one sample".into()));
    }
    let inv = 1.0 / count as f64;
    let grad_w = (acc_u - w * Complex64::new(acc_y / norm2, 0.0)) * Complex64::new(inv, 0.0);
    let grad_power = sens.map(|_| {
        let mut g = PowerGradient::zeros(relays, n);
        g.add_scaled(&grad_power, inv);
        g
    });
    Ok(StreamEval {
        value: value * inv,
        grad_w,
        grad_power,
    })
}

fn exact_samples<'t>(
    model: &'t Model<'_>,
    table: &'t ConstellationTable,
) -> impl Iterator<Item = (&'t [f64], ComplexVector)> + 't {
    table.iter().map(move |s| (s, model.response(s)))
}

fn check_table(table: &ConstellationTable, pa: &PowerAllocation) -> Result<()> {
    if table.n_streams() != pa.streams() {
        return Err(Error::dim(format!(
            "constellation has {} streams, system has {}",
            table.n_streams(),
            pa.streams()
        )));
    }
    Ok(())
}

fn check_sigma(sigma_n: f64) -> Result<()> {
    if !(sigma_n > 0.0 && sigma_n.is_finite()) {
        return Err(Error::Domain(format!(
            "sigma_n = {sigma_n} must be positive and finite"
        )));
    }
    Ok(())
}

fn exact_stream(
    state: &AdaptiveState,
    links: &LinkChannels,
    sigma_n: f64,
    table: &ConstellationTable,
    j: usize,
    want_power: bool,
) -> Result<StreamEval> {
    check_sigma(sigma_n)?;
    check_table(table, &state.powers)?;
    let model = Model::new(links, &state.powers)?;
    evaluate_stream(
        &model,
        state.filters.filter(j),
        j,
        exact_samples(&model, table),
        sigma_n,
        want_power,
    )
}

/// Exact bit error probability of stream `j` under the white-noise model.
pub fn exact_ber(
    state: &AdaptiveState,
    links: &LinkChannels,
    sigma_n: f64,
    table: &ConstellationTable,
    j: usize,
) -> Result<f64> {
    Ok(exact_stream(state, links, sigma_n, table, j, false)?.value)
}

/// Average of [`exact_ber`] over all streams; the adaptation objective.
pub fn mean_exact_ber(
    state: &AdaptiveState,
    links: &LinkChannels,
    sigma_n: f64,
    table: &ConstellationTable,
) -> Result<f64> {
    check_sigma(sigma_n)?;
    check_table(table, &state.powers)?;
    let model = Model::new(links, &state.powers)?;
    let n = state.powers.streams();
    let mut total = 0.0;
    for j in 0..n {
        total += evaluate_stream(
            &model,
            state.filters.filter(j),
            j,
            exact_samples(&model, table),
            sigma_n,
            false,
        )?
        .value;
    }
    Ok(total / n as f64)
}

/// `∂P_j/∂w_j`, packaged as `∂/∂Re + i ∂/∂Im`.
pub fn grad_filter(
    state: &AdaptiveState,
    links: &LinkChannels,
    sigma_n: f64,
    table: &ConstellationTable,
    j: usize,
) -> Result<ComplexVector> {
    Ok(exact_stream(state, links, sigma_n, table, j, false)?.grad_w)
}

/// `∂P_j/∂α` for every power parameter of every stream.
pub fn stream_power_gradient(
    state: &AdaptiveState,
    links: &LinkChannels,
    sigma_n: f64,
    table: &ConstellationTable,
    j: usize,
) -> Result<PowerGradient> {
    Ok(exact_stream(state, links, sigma_n, table, j, true)?
        .grad_power
        .expect("power gradient requested"))
}

/// `∂P_j/∂α_{j,SD}`.
pub fn grad_alpha_sd(
    state: &AdaptiveState,
    links: &LinkChannels,
    sigma_n: f64,
    table: &ConstellationTable,
    j: usize,
) -> Result<f64> {
    Ok(stream_power_gradient(state, links, sigma_n, table, j)?.sd[j])
}

/// `∂P_j/∂α_{j,SRk}`.
pub fn grad_alpha_sr(
    state: &AdaptiveState,
    links: &LinkChannels,
    sigma_n: f64,
    table: &ConstellationTable,
    j: usize,
    k: usize,
) -> Result<f64> {
    Ok(stream_power_gradient(state, links, sigma_n, table, j)?.sr[k][j])
}

/// `∂P_j/∂α_{j,RkD}`.
pub fn grad_alpha_rd(
    state: &AdaptiveState,
    links: &LinkChannels,
    sigma_n: f64,
    table: &ConstellationTable,
    j: usize,
    k: usize,
) -> Result<f64> {
    Ok(stream_power_gradient(state, links, sigma_n, table, j)?.rd[k][j])
}

/// Gradients for one joint step: each filter gets `∂P_j/∂w_j`, the powers
/// get the gradient of the stream-averaged BER (interference couples every
/// stream's BER to every stream's powers).
pub fn joint_gradients(
    state: &AdaptiveState,
    links: &LinkChannels,
    sigma_n: f64,
    table: &ConstellationTable,
    adapt_powers: bool,
) -> Result<Gradients> {
    check_sigma(sigma_n)?;
    check_table(table, &state.powers)?;
    let model = Model::new(links, &state.powers)?;
    collect_gradients(&model, state, adapt_powers, |model, w, j, want| {
        evaluate_stream(model, w, j, exact_samples(model, table), sigma_n, want)
    })
}

fn collect_gradients<F>(
    model: &Model<'_>,
    state: &AdaptiveState,
    adapt_powers: bool,
    mut eval: F,
) -> Result<Gradients>
where
    F: FnMut(&Model<'_>, &ComplexVector, usize, bool) -> Result<StreamEval>,
{
    let n = state.powers.streams();
    let mut filters = Vec::with_capacity(n);
    let mut powers = PowerGradient::zeros(state.powers.relays(), n);
    for j in 0..n {
        let ev = eval(model, state.filters.filter(j), j, adapt_powers)?;
        filters.push(ev.grad_w);
        if let Some(g) = ev.grad_power {
            powers.add_scaled(&g, 1.0 / n as f64);
        }
    }
    Ok(Gradients { filters, powers })
}

// ---------------------------------------------------------------------------
// Constraint and updates
// ---------------------------------------------------------------------------

/// Rescale each stream's alphas to Euclidean norm `sqrt(P_T)`.
pub fn project_power(pa: &PowerAllocation, p_total: f64) -> Result<PowerAllocation> {
    if !(p_total > 0.0 && p_total.is_finite()) {
        return Err(Error::Domain(format!(
            "power budget {p_total} must be positive"
        )));
    }
    let mut out = pa.clone();
    for j in 0..pa.streams() {
        let power = pa.stream_power(j);
        if !(power > 0.0) || !power.is_finite() {
            return Err(Error::DegeneratePower(j));
        }
        out.scale_stream(j, (p_total / power).sqrt());
    }
    Ok(out)
}

/// One joint SG update `w ← w - μ∇_w`, `α ← α - γ∇_α`, then negative
/// alphas are clipped and each stream is projected back onto the budget.
/// The powers are left untouched when their gradient is zero.
pub fn sg_step(
    state: &AdaptiveState,
    grads: &Gradients,
    cfg: &MberConfig,
    p_total: f64,
) -> Result<AdaptiveState> {
    if grads.filters.len() != state.filters.len() {
        return Err(Error::dim("gradient count does not match the filter bank"));
    }
    if !grads.filters.iter().all(check_finite_vector)
        || grads.powers.values().any(|g| !g.is_finite())
    {
        return Err(Error::Divergence("non-finite gradient".into()));
    }
    let mu = Complex64::new(cfg.mu, 0.0);
    let mut filters = state.filters.clone();
    for (j, (w, g)) in filters
        .filters_mut()
        .iter_mut()
        .zip(&grads.filters)
        .enumerate()
    {
        w.axpy(-mu, g, Complex64::new(1.0, 0.0));
        if w.norm_squared() == 0.0 {
            return Err(Error::DegenerateFilter(j));
        }
        if !check_finite_vector(w) {
            return Err(Error::Divergence(format!("filter {j} is no longer finite")));
        }
    }

    let moves_power = cfg.gamma != 0.0 && grads.powers.values().any(|g| g != 0.0);
    let powers = if moves_power {
        let step = |a: f64, g: f64| (a - cfg.gamma * g).max(0.0);
        let pa = &state.powers;
        let stepped = PowerAllocation {
            sd: pa
                .sd
                .iter()
                .zip(&grads.powers.sd)
                .map(|(&a, &g)| step(a, g))
                .collect(),
            sr: pa
                .sr
                .iter()
                .zip(&grads.powers.sr)
                .map(|(ra, rg)| ra.iter().zip(rg).map(|(&a, &g)| step(a, g)).collect())
                .collect(),
            rd: pa
                .rd
                .iter()
                .zip(&grads.powers.rd)
                .map(|(ra, rg)| ra.iter().zip(rg).map(|(&a, &g)| step(a, g)).collect())
                .collect(),
        };
        project_power(&stepped, p_total)?
    } else {
        state.powers.clone()
    };
    Ok(AdaptiveState {
        filters,
        powers,
        iteration: state.iteration + 1,
    })
}

// ---------------------------------------------------------------------------
// Kernel density variant
// ---------------------------------------------------------------------------

/// Minimum kernel bandwidth `(4 / 3K)^{1/5} σ_n`.
pub fn kde_bandwidth(sigma_n: f64, k: usize) -> f64 {
    (4.0 / (3.0 * k as f64)).powf(0.2) * sigma_n
}

/// Kernel-density BER from detected soft outputs and their true bits.
pub fn kde_ber(train_outputs: &[(f64, bool)], w_norm2: f64, rho_n: f64) -> Result<f64> {
    if train_outputs.is_empty() {
        return Err(Error::Domain("training block is empty".into()));
    }
    if !(rho_n > 0.0) || !(w_norm2 > 0.0) {
        return Err(Error::Domain(format!(
            "bandwidth {rho_n} and filter energy {w_norm2} must be positive"
        )));
    }
    let scale = rho_n * w_norm2.sqrt();
    let total: f64 = train_outputs
        .iter()
        .map(|&(soft, bit)| gaussian_tail(crate::numerics::bpsk(bit) * soft / scale))
        .sum();
    Ok(total / train_outputs.len() as f64)
}

/// Known training symbols with their received vectors, stored as the
/// residual `r - Φ(α₀) s` so the block can be re-evaluated at other powers.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingBlock {
    symbols: Vec<Vec<f64>>,
    residuals: Vec<ComplexVector>,
}

impl TrainingBlock {
    pub fn from_received(
        symbols: Vec<Vec<f64>>,
        received: &[ReceiveVector],
        links: &LinkChannels,
        pa: &PowerAllocation,
    ) -> Result<Self> {
        if symbols.len() != received.len() {
            return Err(Error::dim(format!(
                "{} symbol vectors for {} received vectors",
                symbols.len(),
                received.len()
            )));
        }
        let phi = effective_map(links, pa)?;
        let residuals = symbols
            .iter()
            .zip(received)
            .map(|(s, r)| {
                if s.len() != phi.ncols() || r.len() != phi.nrows() {
                    return Err(Error::dim("training sample does not match the system"));
                }
                Ok(r.entries() - &phi * real_to_complex(s))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { symbols, residuals })
    }

    /// Noise-free samples (zero residual).
    pub fn noise_free(symbols: Vec<Vec<f64>>, receive_len: usize) -> Self {
        let residuals = vec![ComplexVector::zeros(receive_len); symbols.len()];
        Self { symbols, residuals }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    fn samples<'t>(
        &'t self,
        model: &'t Model<'_>,
    ) -> impl Iterator<Item = (&'t [f64], ComplexVector)> + 't {
        self.symbols
            .iter()
            .zip(&self.residuals)
            .map(move |(s, e)| (s.as_slice(), model.response(s) + e))
    }

    fn check(&self, model: &Model<'_>) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Domain("training block is empty".into()));
        }
        let n = model.topo.antennas;
        if self.symbols.iter().any(|s| s.len() != n)
            || self
                .residuals
                .iter()
                .any(|e| e.len() != model.topo.receive_len())
        {
            return Err(Error::dim("training block does not match the system"));
        }
        Ok(())
    }
}

/// Kernel-density estimate of stream `j`'s BER at the state's powers.
pub fn kde_objective(
    state: &AdaptiveState,
    links: &LinkChannels,
    block: &TrainingBlock,
    rho_n: f64,
    j: usize,
) -> Result<f64> {
    let model = Model::new(links, &state.powers)?;
    block.check(&model)?;
    Ok(evaluate_stream(
        &model,
        state.filters.filter(j),
        j,
        block.samples(&model),
        rho_n,
        false,
    )?
    .value)
}

pub fn mean_kde_objective(
    state: &AdaptiveState,
    links: &LinkChannels,
    block: &TrainingBlock,
    rho_n: f64,
) -> Result<f64> {
    let n = state.powers.streams();
    let mut total = 0.0;
    for j in 0..n {
        total += kde_objective(state, links, block, rho_n, j)?;
    }
    Ok(total / n as f64)
}

/// Gradients of the kernel-density objective, same packaging as
/// [`joint_gradients`].
pub fn kde_gradients(
    state: &AdaptiveState,
    links: &LinkChannels,
    block: &TrainingBlock,
    rho_n: f64,
    adapt_powers: bool,
) -> Result<Gradients> {
    let model = Model::new(links, &state.powers)?;
    block.check(&model)?;
    collect_gradients(&model, state, adapt_powers, |model, w, j, want| {
        evaluate_stream(model, w, j, block.samples(model), rho_n, want)
    })
}

/// One SG step on the kernel-density objective with bandwidth
/// `bandwidth_floor_factor * (4 / 3K)^{1/5} σ_n`, `K` the block length.
pub fn kde_sg_step(
    state: &AdaptiveState,
    block: &TrainingBlock,
    cfg: &MberConfig,
    links: &LinkChannels,
    sigma_n: f64,
    p_total: f64,
) -> Result<AdaptiveState> {
    check_sigma(sigma_n)?;
    let rho = cfg.bandwidth_floor_factor * kde_bandwidth(sigma_n, block.len());
    kde_sg_step_with_bandwidth(state, block, cfg, links, rho, p_total)
}

pub fn kde_sg_step_with_bandwidth(
    state: &AdaptiveState,
    block: &TrainingBlock,
    cfg: &MberConfig,
    links: &LinkChannels,
    rho_n: f64,
    p_total: f64,
) -> Result<AdaptiveState> {
    let grads = kde_gradients(state, links, block, rho_n, true)?;
    sg_step(state, &grads, cfg, p_total)
}

// ---------------------------------------------------------------------------
// Adaptation loop
// ---------------------------------------------------------------------------

/// Which BER estimate drives [`adapt`].
#[derive(Clone, Copy, Debug)]
pub enum Objective<'a> {
    Exact {
        table: &'a ConstellationTable,
        sigma_n: f64,
    },
    Kde {
        block: &'a TrainingBlock,
        rho_n: f64,
    },
}

impl Objective<'_> {
    pub fn value(&self, state: &AdaptiveState, links: &LinkChannels) -> Result<f64> {
        match *self {
            Objective::Exact { table, sigma_n } => mean_exact_ber(state, links, sigma_n, table),
            Objective::Kde { block, rho_n } => mean_kde_objective(state, links, block, rho_n),
        }
    }

    pub fn gradients(
        &self,
        state: &AdaptiveState,
        links: &LinkChannels,
        adapt_powers: bool,
    ) -> Result<Gradients> {
        match *self {
            Objective::Exact { table, sigma_n } => {
                joint_gradients(state, links, sigma_n, table, adapt_powers)
            }
            Objective::Kde { block, rho_n } => {
                kde_gradients(state, links, block, rho_n, adapt_powers)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdaptOutcome {
    pub state: AdaptiveState,
    /// Objective after every accepted step, starting with the initial value.
    pub trace: Vec<f64>,
}

impl AdaptOutcome {
    pub fn final_objective(&self) -> f64 {
        *self
            .trace
            .last()
            .expect("trace starts with the initial objective")
    }
}

/// Step multiplier below which the search is considered converged.
const MIN_STEP_SCALE: f64 = 1e-12;
const MAX_STEP_SCALE: f64 = 1e8;

/// Run up to `iters` joint SG steps from `initial`. A step that would
/// increase the objective (or break a filter or the powers) is retried at
/// half the step; an accepted step grows the step by `cfg.step_growth`.
pub fn adapt(
    initial: AdaptiveState,
    links: &LinkChannels,
    objective: Objective<'_>,
    cfg: &MberConfig,
    p_total: f64,
    iters: usize,
    adapt_powers: bool,
) -> Result<AdaptOutcome> {
    cfg.validate()?;
    let mut state = initial;
    let mut value = objective.value(&state, links)?;
    let mut trace = vec![value];
    let mut scale = 1.0;
    'outer: for _ in 0..iters {
        let grads = objective.gradients(&state, links, adapt_powers)?;
        let idle = grads
            .filters
            .iter()
            .all(|g| g.iter().all(|z| z.norm_sqr() == 0.0))
            && grads.powers.values().all(|g| g == 0.0);
        if idle {
            break;
        }
        loop {
            let step_cfg = MberConfig {
                mu: cfg.mu * scale,
                gamma: cfg.gamma * scale,
                ..*cfg
            };
            let accepted = match sg_step(&state, &grads, &step_cfg, p_total) {
                Ok(candidate) => {
                    let v = objective.value(&candidate, links)?;
                    (v <= value).then_some((candidate, v))
                }
                Err(
                    Error::DegenerateFilter(_) | Error::DegeneratePower(_) | Error::Divergence(_),
                ) => None,
                Err(e) => return Err(e),
            };
            match accepted {
                Some((candidate, v)) => {
                    state = candidate;
                    value = v;
                    trace.push(v);
                    scale = (scale * cfg.step_growth).min(MAX_STEP_SCALE);
                    break;
                }
                None => {
                    scale *= 0.5;
                    if scale < MIN_STEP_SCALE {
                        break 'outer;
                    }
                }
            }
        }
    }
    Ok(AdaptOutcome { state, trace })
}
