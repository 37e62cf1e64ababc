//! The two-hop transmission chain and linear detection.
//!
//! Phase 1: the source broadcasts `A_SD s` to the destination and
//! `A_SR_k s` to every relay. Relays forward what they received unchanged
//! (all relay-side scaling lives in `A_RkD`), each in its own orthogonal
//! phase, coded with its [`CodeScheme`]. The destination stacks the direct
//! samples and the linearized relay blocks into one [`ReceiveVector`]:
//!
//! ```text
//! r = [ H A_SD s ; G'_1 A_R1D s~_1 ; ... ] + n
//! ```
//!
//! With the relay noise ignored this is `r = Φ s + n`, where `Φ` is built by
//! [`effective_map`].

use num_complex::Complex64;
use rand::Rng;

use crate::channel::{awgn_matrix, awgn_unchecked, ChannelSet, NoiseSpec};
use crate::dstc::{self, CodeScheme};
use crate::error::{Error, Result};
use crate::numerics::{bpsk_decide, real_inner, ComplexMatrix, ComplexVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Topology {
    pub relays: usize,
    pub antennas: usize,
}

impl Topology {
    pub const SLOTS: usize = dstc::SLOTS;

    pub fn new(relays: usize, antennas: usize) -> Self {
        Self { relays, antennas }
    }

    /// `(n_r T + 1) N`.
    pub fn receive_len(&self) -> usize {
        (self.relays * Self::SLOTS + 1) * self.antennas
    }

    /// Offset and length of segment `seg` (0 = direct link, `k + 1` = relay `k`).
    pub fn segment_range(&self, seg: usize) -> std::ops::Range<usize> {
        if seg == 0 {
            0..self.antennas
        } else {
            let len = self.antennas * Self::SLOTS;
            let start = self.antennas + (seg - 1) * len;
            start..start + len
        }
    }

    /// Links carrying each stream: direct, `n_r` source-relay, `n_r` relay-destination.
    pub fn links_per_stream(&self) -> usize {
        2 * self.relays + 1
    }
}

/// Per-stream amplitude gains on every link. `sr[k][j]` and `rd[k][j]` are
/// relay `k`, stream `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerAllocation {
    pub sd: Vec<f64>,
    pub sr: Vec<Vec<f64>>,
    pub rd: Vec<Vec<f64>>,
}

impl PowerAllocation {
    pub fn new(sd: Vec<f64>, sr: Vec<Vec<f64>>, rd: Vec<Vec<f64>>) -> Result<Self> {
        let n = sd.len();
        if n == 0 {
            return Err(Error::dim("power allocation needs at least one stream"));
        }
        if sr.len() != rd.len() {
            return Err(Error::dim(format!(
                "{} source-relay rows vs {} relay-destination rows",
                sr.len(),
                rd.len()
            )));
        }
        if sr.iter().chain(&rd).any(|row| row.len() != n) {
            return Err(Error::dim(format!("every relay row must have {n} streams")));
        }
        let pa = Self { sd, sr, rd };
        if pa.values().any(|a| !(a >= 0.0 && a.is_finite())) {
            return Err(Error::Domain(
                "power allocation entries must be finite and >= 0".into(),
            ));
        }
        Ok(pa)
    }

    /// Every entry set to `value`.
    pub fn uniform(relays: usize, streams: usize, value: f64) -> Self {
        Self {
            sd: vec![value; streams],
            sr: vec![vec![value; streams]; relays],
            rd: vec![vec![value; streams]; relays],
        }
    }

    pub fn streams(&self) -> usize {
        self.sd.len()
    }

    pub fn relays(&self) -> usize {
        self.sr.len()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.sd
            .iter()
            .chain(self.sr.iter().flatten())
            .chain(self.rd.iter().flatten())
            .copied()
    }

    /// `α_sd[j]² + Σ_k (α_sr[k][j]² + α_rd[k][j]²)`.
    pub fn stream_power(&self, j: usize) -> f64 {
        self.sd[j] * self.sd[j]
            + self.sr.iter().map(|r| r[j] * r[j]).sum::<f64>()
            + self.rd.iter().map(|r| r[j] * r[j]).sum::<f64>()
    }

    /// Largest per-stream deviation from the budget.
    pub fn constraint_residual(&self, p_total: f64) -> f64 {
        (0..self.streams())
            .map(|j| (self.stream_power(j) - p_total).abs())
            .fold(0.0, f64::max)
    }

    pub fn scale_stream(&mut self, j: usize, factor: f64) {
        self.sd[j] *= factor;
        for row in self.sr.iter_mut().chain(self.rd.iter_mut()) {
            row[j] *= factor;
        }
    }
}

/// The channels the receiver works with, with the relay code already folded
/// into `gp[k] = G'_k`. Built from a [`ChannelSet`] under perfect knowledge
/// or from an estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkChannels {
    pub h: ComplexMatrix,
    pub f: Vec<ComplexMatrix>,
    pub gp: Vec<ComplexMatrix>,
}

impl LinkChannels {
    pub fn from_channels(ch: &ChannelSet, codes: &[CodeScheme]) -> Result<Self> {
        if codes.len() != ch.relays() {
            return Err(Error::dim(format!(
                "{} relay codes for {} relays",
                codes.len(),
                ch.relays()
            )));
        }
        let gp =
            ch.g.iter()
                .zip(codes)
                .map(|(g, code)| code.equivalent_channel(g))
                .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            h: ch.h.clone(),
            f: ch.f.clone(),
            gp,
        })
    }

    pub fn topology(&self) -> Topology {
        Topology::new(self.f.len(), self.h.nrows())
    }

    pub(crate) fn check(&self, pa: &PowerAllocation) -> Result<()> {
        let n = self.h.ncols();
        if pa.streams() != n || pa.relays() != self.f.len() || self.gp.len() != self.f.len() {
            return Err(Error::dim(format!(
                "power allocation is {} streams x {} relays, channels are {} x {}",
                pa.streams(),
                pa.relays(),
                n,
                self.f.len()
            )));
        }
        Ok(())
    }
}

/// `Φ = [H A_SD ; G'_k A_RkD F_k A_SRk ...]`, the noise-free map `s ↦ r`.
pub fn effective_map(links: &LinkChannels, pa: &PowerAllocation) -> Result<ComplexMatrix> {
    links.check(pa)?;
    let topo = links.topology();
    let n = topo.antennas;
    let mut phi = ComplexMatrix::zeros(topo.receive_len(), n);
    for j in 0..n {
        for a in 0..n {
            phi[(a, j)] = links.h[(a, j)] * pa.sd[j];
        }
    }
    for k in 0..topo.relays {
        // G'_k A_RD F_k A_SR, column by column.
        let relay_gain = relay_map(links, pa, k);
        let range = topo.segment_range(k + 1);
        phi.view_mut((range.start, 0), (range.len(), n))
            .copy_from(&relay_gain);
    }
    Ok(phi)
}

/// `G'_k A_RkD F_k A_SRk`, relay `k`'s block of `Φ`.
pub(crate) fn relay_map(links: &LinkChannels, pa: &PowerAllocation, k: usize) -> ComplexMatrix {
    let n = links.h.ncols();
    let mut fa = links.f[k].clone();
    for j in 0..n {
        fa.column_mut(j).scale_mut(pa.sr[k][j]);
    }
    let mut ga = links.gp[k].clone();
    for j in 0..n {
        ga.column_mut(j).scale_mut(pa.rd[k][j]);
    }
    ga * fa
}

/// Received stacked vector, segmented by link.
#[derive(Clone, Debug, PartialEq)]
pub struct ReceiveVector {
    entries: ComplexVector,
    topology: Topology,
}

impl ReceiveVector {
    pub fn new(entries: ComplexVector, topology: Topology) -> Result<Self> {
        if entries.len() != topology.receive_len() {
            return Err(Error::dim(format!(
                "receive vector has length {}, topology needs {}",
                entries.len(),
                topology.receive_len()
            )));
        }
        Ok(Self { entries, topology })
    }

    pub fn entries(&self) -> &ComplexVector {
        &self.entries
    }

    pub fn into_entries(self) -> ComplexVector {
        self.entries
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn segment(&self, seg: usize) -> ComplexVector {
        let range = self.topology.segment_range(seg);
        self.entries.rows(range.start, range.len()).into_owned()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// One receive filter per stream, all of the receive-vector length.
#[derive(Clone, Debug, PartialEq)]
pub struct ReceiveFilterBank {
    filters: Vec<ComplexVector>,
}

impl ReceiveFilterBank {
    pub fn new(filters: Vec<ComplexVector>) -> Result<Self> {
        let Some(first) = filters.first() else {
            return Err(Error::dim("filter bank needs at least one filter"));
        };
        let len = first.len();
        if filters.iter().any(|w| w.len() != len) {
            return Err(Error::dim("all receive filters must share one length"));
        }
        if let Some(j) = filters.iter().position(|w| w.norm_squared() == 0.0) {
            return Err(Error::DegenerateFilter(j));
        }
        Ok(Self { filters })
    }

    pub fn filters(&self) -> &[ComplexVector] {
        &self.filters
    }

    pub fn filter(&self, j: usize) -> &ComplexVector {
        &self.filters[j]
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    pub(crate) fn filters_mut(&mut self) -> &mut [ComplexVector] {
        &mut self.filters
    }
}

/// Matched filter: `w_j` is column `j` of `Φ`, i.e. every segment is the
/// stream's column of that link's (scaled) channel.
pub fn matched_filter_bank(
    links: &LinkChannels,
    pa: &PowerAllocation,
) -> Result<ReceiveFilterBank> {
    let phi = effective_map(links, pa)?;
    ReceiveFilterBank::new(phi.column_iter().map(|c| c.into_owned()).collect())
}

fn check_symbols(s: &ComplexVector, n: usize) -> Result<()> {
    if s.len() != n {
        return Err(Error::dim(format!(
            "symbol vector has length {}, expected {n}",
            s.len()
        )));
    }
    Ok(())
}

/// Phase 1. Draws the direct-link noise first, then each relay's.
pub fn broadcast_phase<R: Rng + ?Sized>(
    s: &ComplexVector,
    ch: &ChannelSet,
    pa: &PowerAllocation,
    noise: &NoiseSpec,
    rng: &mut R,
) -> Result<(ComplexVector, Vec<ComplexVector>)> {
    let n = ch.antennas();
    check_symbols(s, n)?;
    if pa.streams() != n || pa.relays() != ch.relays() {
        return Err(Error::dim(
            "power allocation does not match the channel set",
        ));
    }
    let scaled = |alpha: &[f64]| ComplexVector::from_iterator(n, (0..n).map(|j| s[j] * alpha[j]));
    let r_sd = &ch.h * scaled(&pa.sd) + awgn_unchecked(n, noise.sigma2, rng);
    let r_sr =
        ch.f.iter()
            .zip(&pa.sr)
            .map(|(f, alpha)| f * scaled(alpha) + awgn_unchecked(n, noise.relay_sigma2, rng))
            .collect();
    Ok((r_sd, r_sr))
}

/// Amplify-and-forward with unit gain: the relay forwards what it heard.
pub fn relay_process(r_sr: &ComplexVector) -> ComplexVector {
    r_sr.clone()
}

/// Relay phases: code `A_RkD s~_k`, pass through `G_k`, add noise, stack and
/// conjugate the second slot.
pub fn relay_phase<R: Rng + ?Sized>(
    s_tilde: &[ComplexVector],
    ch: &ChannelSet,
    pa: &PowerAllocation,
    codes: &[CodeScheme],
    noise: &NoiseSpec,
    rng: &mut R,
) -> Result<Vec<ComplexVector>> {
    let n = ch.antennas();
    if s_tilde.len() != ch.relays() || codes.len() != ch.relays() || pa.relays() != ch.relays() {
        return Err(Error::dim(format!(
            "{} relay signals, {} codes, {} relays",
            s_tilde.len(),
            codes.len(),
            ch.relays()
        )));
    }
    s_tilde
        .iter()
        .zip(ch.g.iter().zip(codes))
        .zip(&pa.rd)
        .map(|((st, (g, code)), alpha)| {
            check_symbols(st, n)?;
            let x = ComplexVector::from_iterator(n, (0..n).map(|j| st[j] * alpha[j]));
            let block =
                g * code.encode(&x)? + awgn_matrix(g.nrows(), dstc::SLOTS, noise.sigma2, rng);
            Ok(dstc::linearize(&block))
        })
        .collect()
}

pub fn assemble_receive(r_sd: &ComplexVector, r_rd: &[ComplexVector]) -> Result<ReceiveVector> {
    let n = r_sd.len();
    let topology = Topology::new(r_rd.len(), n);
    if let Some(bad) = r_rd.iter().find(|r| r.len() != n * Topology::SLOTS) {
        return Err(Error::dim(format!(
            "relay segment has length {}, expected {}",
            bad.len(),
            n * Topology::SLOTS
        )));
    }
    let entries = ComplexVector::from_iterator(
        topology.receive_len(),
        r_sd.iter()
            .chain(r_rd.iter().flat_map(|r| r.iter()))
            .copied(),
    );
    ReceiveVector::new(entries, topology)
}

/// Full chain for one symbol vector.
pub fn transmit<R: Rng + ?Sized>(
    s: &ComplexVector,
    ch: &ChannelSet,
    codes: &[CodeScheme],
    pa: &PowerAllocation,
    noise: &NoiseSpec,
    rng: &mut R,
) -> Result<ReceiveVector> {
    let (r_sd, r_sr) = broadcast_phase(s, ch, pa, noise, rng)?;
    let s_tilde: Vec<_> = r_sr.iter().map(relay_process).collect();
    let r_rd = relay_phase(&s_tilde, ch, pa, codes, noise, rng)?;
    assemble_receive(&r_sd, &r_rd)
}

/// Soft output `Re(w^H r)`.
pub fn soft_output(w: &ComplexVector, r: &ReceiveVector) -> Result<f64> {
    if w.len() != r.len() {
        return Err(Error::dim(format!(
            "filter length {} vs receive length {}",
            w.len(),
            r.len()
        )));
    }
    Ok(real_inner(w, r.entries()))
}

/// `sgn(Re(w^H r))` as a bit.
pub fn detect(w: &ComplexVector, r: &ReceiveVector) -> Result<bool> {
    soft_output(w, r).map(bpsk_decide)
}

/// Complex noise-free filter output `w^H Φ s`.
pub fn noise_free_response(
    w: &ComplexVector,
    links: &LinkChannels,
    pa: &PowerAllocation,
    s: &[f64],
) -> Result<Complex64> {
    let phi = effective_map(links, pa)?;
    if w.len() != phi.nrows() || s.len() != phi.ncols() {
        return Err(Error::dim("filter or candidate does not match the system"));
    }
    let x = crate::numerics::real_to_complex(s);
    Ok(w.dotc(&(phi * x)))
}

/// `s̄_j = Re(w_j^H Φ s̄_l)`, the decision statistic with every noise source zeroed.
pub fn noise_free_output(
    w: &ComplexVector,
    links: &LinkChannels,
    pa: &PowerAllocation,
    s: &[f64],
) -> Result<f64> {
    noise_free_response(w, links, pa, s).map(|z| z.re)
}
