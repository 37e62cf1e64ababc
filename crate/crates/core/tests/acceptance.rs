//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line
//! (straight to stdout, so it shows even when output is captured) and then
//! asserts the same condition.

use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use coopmber::chanest::{estimate_channels, observe_pilot};
use coopmber::channel::{draw_channel_set, snr_to_sigma2};
use coopmber::coopsys::{matched_filter_bank, transmit};
use coopmber::dstc::linearize;
use coopmber::harness::{run_point, run_sweep, to_csv_string, ChannelKnowledge};
use coopmber::mber::{
    exact_ber, grad_alpha_rd, grad_alpha_sd, grad_alpha_sr, grad_filter, joint_gradients,
    kde_bandwidth, kde_ber, kde_gradients, kde_objective, mean_kde_objective, project_power,
    sg_step, TrainingBlock,
};
use coopmber::numerics::{bpsk, enumerate_constellation, real_inner, real_to_complex};
use coopmber::{
    epa_allocation, mmse_filter, AdaptiveState, BerRecord, CodeKind, CodeScheme, ComplexVector,
    EffectiveSystem, ExperimentConfig, LinkChannels, MberConfig, NoiseSpec, PowerAllocation,
    ReceiveFilterBank, ReceiveVector, Scheme, Topology,
};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(id: u32, name: &str, pass: bool, detail: &str, started: Instant) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!(
        "criterion {id} [{verdict}] {name}: {detail} ({:.1}s)\n",
        started.elapsed().as_secs_f64()
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

fn random_links(
    relays: usize,
    code: CodeKind,
    rng: &mut ChaCha8Rng,
) -> (coopmber::ChannelSet, Vec<CodeScheme>, LinkChannels) {
    let ch = draw_channel_set(relays, 2, rng);
    let codes: Vec<_> = (0..relays)
        .map(|_| CodeScheme::for_relay(code, rng))
        .collect();
    let links = LinkChannels::from_channels(&ch, &codes).unwrap();
    (ch, codes, links)
}

/// Random feasible powers and a matched-plus-noise filter bank.
fn random_state(links: &LinkChannels, rng: &mut ChaCha8Rng) -> AdaptiveState {
    let relays = links.f.len();
    let mut draw = || {
        (0..2)
            .map(|_| rng.random_range(0.2..1.0))
            .collect::<Vec<f64>>()
    };
    let pa = PowerAllocation::new(
        draw(),
        (0..relays).map(|_| draw()).collect(),
        (0..relays).map(|_| draw()).collect(),
    )
    .unwrap();
    let pa = project_power(&pa, 1.0).unwrap();
    let mf = matched_filter_bank(links, &pa).unwrap();
    let filters = mf
        .filters()
        .iter()
        .map(|m| {
            let noise = ComplexVector::from_iterator(
                m.len(),
                (0..m.len()).map(|_| {
                    Complex64::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3))
                }),
            );
            m * Complex64::new(2.0, 0.0) + noise
        })
        .collect();
    AdaptiveState::new(ReceiveFilterBank::new(filters).unwrap(), pa).unwrap()
}

fn with_filter(state: &AdaptiveState, j: usize, w: ComplexVector) -> AdaptiveState {
    let mut filters = state.filters.filters().to_vec();
    filters[j] = w;
    AdaptiveState::new(
        ReceiveFilterBank::new(filters).unwrap(),
        state.powers.clone(),
    )
    .unwrap()
}

#[derive(Clone, Copy, Debug)]
enum Param {
    Sd(usize),
    Sr(usize, usize),
    Rd(usize, usize),
}

fn bumped(state: &AdaptiveState, p: Param, delta: f64) -> AdaptiveState {
    let mut s = state.clone();
    match p {
        Param::Sd(m) => s.powers.sd[m] += delta,
        Param::Sr(k, m) => s.powers.sr[k][m] += delta,
        Param::Rd(k, m) => s.powers.rd[k][m] += delta,
    }
    s
}

/// Central-difference gradient of `f` over the real and imaginary parts of
/// filter `j`.
fn fd_filter(
    state: &AdaptiveState,
    j: usize,
    h: f64,
    f: impl Fn(&AdaptiveState) -> f64,
) -> ComplexVector {
    let w = state.filters.filter(j);
    ComplexVector::from_iterator(
        w.len(),
        (0..w.len()).map(|idx| {
            let mut part = [0.0; 2];
            for (p, unit) in [Complex64::new(h, 0.0), Complex64::new(0.0, h)]
                .into_iter()
                .enumerate()
            {
                let mut plus = w.clone();
                plus[idx] += unit;
                let mut minus = w.clone();
                minus[idx] -= unit;
                part[p] = (f(&with_filter(state, j, plus)) - f(&with_filter(state, j, minus)))
                    / (2.0 * h);
            }
            Complex64::new(part[0], part[1])
        }),
    )
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm
}

fn complex_parts(v: &ComplexVector) -> Vec<f64> {
    v.iter().flat_map(|z| [z.re, z.im]).collect()
}

fn training_block(
    links: &LinkChannels,
    ch: &coopmber::ChannelSet,
    codes: &[CodeScheme],
    pa: &PowerAllocation,
    k: usize,
    sigma2: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<Vec<f64>>, Vec<ReceiveVector>, TrainingBlock) {
    let noise = NoiseSpec::destination_only(sigma2).unwrap();
    let mut symbols = Vec::with_capacity(k);
    let mut received = Vec::with_capacity(k);
    for _ in 0..k {
        let s: Vec<f64> = (0..2).map(|_| bpsk(rng.random())).collect();
        received.push(transmit(&real_to_complex(&s), ch, codes, pa, &noise, rng).unwrap());
        symbols.push(s);
    }
    let block = TrainingBlock::from_received(symbols.clone(), &received, links, pa).unwrap();
    (symbols, received, block)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

// ---------------------------------------------------------------------------
// 1. Gradients against central finite differences
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_gradient_oracles() {
    let started = Instant::now();
    const INSTANCES: usize = 100;
    const TOL: f64 = 1e-5;
    let h = 1e-6;
    let table = enumerate_constellation(2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC1);
    let mut worst = [0.0f64; 6];
    for i in 0..INSTANCES {
        let relays = 1 + i % 2;
        let (ch, codes, links) = random_links(relays, CodeKind::ALL[i % 2], &mut rng);
        let state = random_state(&links, &mut rng);
        let sigma_n = rng.random_range(0.3..1.2);
        let j = i % 2;

        // Exact objective, filter.
        let g = grad_filter(&state, &links, sigma_n, &table, j).unwrap();
        let fd = fd_filter(&state, j, h, |s| {
            exact_ber(s, &links, sigma_n, &table, j).unwrap()
        });
        worst[0] = worst[0].max(rel_err(&complex_parts(&g), &complex_parts(&fd)));

        // Exact objective, each class of power parameter.
        let fd_power = |p: Param| {
            (exact_ber(&bumped(&state, p, h), &links, sigma_n, &table, j).unwrap()
                - exact_ber(&bumped(&state, p, -h), &links, sigma_n, &table, j).unwrap())
                / (2.0 * h)
        };
        let sd = [grad_alpha_sd(&state, &links, sigma_n, &table, j).unwrap()];
        worst[1] = worst[1].max(rel_err(&sd, &[fd_power(Param::Sd(j))]));
        let sr: Vec<f64> = (0..relays)
            .map(|k| grad_alpha_sr(&state, &links, sigma_n, &table, j, k).unwrap())
            .collect();
        let sr_fd: Vec<f64> = (0..relays).map(|k| fd_power(Param::Sr(k, j))).collect();
        worst[2] = worst[2].max(rel_err(&sr, &sr_fd));
        let rd: Vec<f64> = (0..relays)
            .map(|k| grad_alpha_rd(&state, &links, sigma_n, &table, j, k).unwrap())
            .collect();
        let rd_fd: Vec<f64> = (0..relays).map(|k| fd_power(Param::Rd(k, j))).collect();
        worst[3] = worst[3].max(rel_err(&rd, &rd_fd));

        // Kernel-density objective: filter gradient of stream j and the
        // power gradient of the stream-averaged objective.
        let (_, _, block) = training_block(
            &links,
            &ch,
            &codes,
            &state.powers,
            40,
            2.0 * sigma_n * sigma_n,
            &mut rng,
        );
        let rho = kde_bandwidth(sigma_n, block.len());
        let kg = kde_gradients(&state, &links, &block, rho, true).unwrap();
        let fd = fd_filter(&state, j, h, |s| {
            kde_objective(s, &links, &block, rho, j).unwrap()
        });
        worst[4] = worst[4].max(rel_err(&complex_parts(&kg.filters[j]), &complex_parts(&fd)));
        let mut params = vec![Param::Sd(0), Param::Sd(1)];
        for k in 0..relays {
            for m in 0..2 {
                params.extend([Param::Sr(k, m), Param::Rd(k, m)]);
            }
        }
        let mut ana = Vec::new();
        let mut num = Vec::new();
        for p in params {
            num.push(
                (mean_kde_objective(&bumped(&state, p, h), &links, &block, rho).unwrap()
                    - mean_kde_objective(&bumped(&state, p, -h), &links, &block, rho).unwrap())
                    / (2.0 * h),
            );
            ana.push(match p {
                Param::Sd(m) => kg.powers.sd[m],
                Param::Sr(k, m) => kg.powers.sr[k][m],
                Param::Rd(k, m) => kg.powers.rd[k][m],
            });
        }
        worst[5] = worst[5].max(rel_err(&ana, &num));
    }
    let pass = worst.iter().all(|&w| w < TOL) && started.elapsed().as_secs() < 60;
    report(
        1,
        "gradients vs finite differences",
        pass,
        &format!(
            "{INSTANCES} instances, worst relative error filter {:.1e}, sd {:.1e}, sr {:.1e}, rd {:.1e}, kde filter {:.1e}, kde power {:.1e} (tol {TOL:.0e})",
            worst[0], worst[1], worst[2], worst[3], worst[4], worst[5]
        ),
        started,
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 2. Closed-form BER against Monte Carlo
// ---------------------------------------------------------------------------

#[test]
fn criterion_2_exact_ber_matches_monte_carlo() {
    let started = Instant::now();
    const BITS: usize = 1_000_000;
    let table = enumerate_constellation(2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC2);
    let (ch, codes, links) = random_links(1, CodeKind::Alamouti, &mut rng);
    let pa = epa_allocation(1, 2, 1.0).unwrap();
    let mut details = Vec::new();
    let mut pass = true;
    for snr in [0.0, 5.0, 10.0] {
        let sigma2 = snr_to_sigma2(snr, 1.0);
        let sigma_n = (sigma2 / 2.0).sqrt();
        let filters = mmse_filter(&EffectiveSystem::new(&links, &pa).unwrap(), sigma2).unwrap();
        let state = AdaptiveState::new(filters, pa.clone()).unwrap();
        let exact = (0..2)
            .map(|j| exact_ber(&state, &links, sigma_n, &table, j).unwrap())
            .sum::<f64>()
            / 2.0;

        let noise = NoiseSpec::destination_only(sigma2).unwrap();
        let mut errors = 0usize;
        for _ in 0..BITS / 2 {
            let bits: [bool; 2] = [rng.random(), rng.random()];
            let s = coopmber::numerics::bpsk_map(&bits);
            let r = transmit(&s, &ch, &codes, &pa, &noise, &mut rng).unwrap();
            for (j, &b) in bits.iter().enumerate() {
                if (real_inner(state.filters.filter(j), r.entries()) > 0.0) != b {
                    errors += 1;
                }
            }
        }
        let empirical = errors as f64 / BITS as f64;
        let band = 3.0 * (exact * (1.0 - exact) / BITS as f64).sqrt();
        let ok = (empirical - exact).abs() <= band;
        pass &= ok;
        details.push(format!(
            "{snr} dB: exact {exact:.4e} vs MC {empirical:.4e} (±{band:.1e})"
        ));
    }
    pass &= started.elapsed().as_secs() < 120;
    report(
        2,
        "exact BER vs Monte Carlo",
        pass,
        &details.join("; "),
        started,
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 3. Kernel density BER converges to the exact BER
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_kde_consistency() {
    let started = Instant::now();
    const SEEDS: u64 = 50;
    const SNR_DB: f64 = 5.0;
    let sizes = [10usize, 100, 1_000, 10_000];
    let table = enumerate_constellation(2).unwrap();
    let sigma2 = snr_to_sigma2(SNR_DB, 1.0);
    let sigma_n = (sigma2 / 2.0).sqrt();
    let mut errors: Vec<Vec<f64>> = vec![Vec::new(); sizes.len()];
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(0xC300 + seed);
        let (ch, codes, links) = random_links(1, CodeKind::Alamouti, &mut rng);
        let pa = epa_allocation(1, 2, 1.0).unwrap();
        let filters = mmse_filter(&EffectiveSystem::new(&links, &pa).unwrap(), sigma2).unwrap();
        let state = AdaptiveState::new(filters, pa.clone()).unwrap();
        let w = state.filters.filter(0);
        let exact = exact_ber(&state, &links, sigma_n, &table, 0).unwrap();
        let (symbols, received, _) = training_block(
            &links,
            &ch,
            &codes,
            &pa,
            *sizes.last().unwrap(),
            sigma2,
            &mut rng,
        );
        for (i, &k) in sizes.iter().enumerate() {
            let outputs: Vec<(f64, bool)> = received[..k]
                .iter()
                .zip(&symbols[..k])
                .map(|(r, s)| (real_inner(w, r.entries()), s[0] > 0.0))
                .collect();
            let kde = kde_ber(&outputs, w.norm_squared(), kde_bandwidth(sigma_n, k)).unwrap();
            errors[i].push((kde - exact).abs() / exact);
        }
    }
    let medians: Vec<f64> = errors.into_iter().map(median).collect();
    let monotone = medians.windows(2).all(|w| w[1] < w[0]);
    let pass = monotone && medians[3] < 0.2 && started.elapsed().as_secs() < 120;
    let detail = sizes
        .iter()
        .zip(&medians)
        .map(|(k, m)| format!("K={k}: {m:.3}"))
        .collect::<Vec<_>>()
        .join(", ");
    report(
        3,
        "KDE consistency",
        pass,
        &format!("median relative error {detail}"),
        started,
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 4-6. BER curves
// ---------------------------------------------------------------------------

fn curve_config(relays: usize, code: CodeKind, schemes: Vec<Scheme>) -> ExperimentConfig {
    ExperimentConfig {
        relays,
        code,
        schemes,
        snr_db: (0..=8).map(|i| i as f64 * 2.5).collect(),
        packets: 4000,
        packet_len: 125,
        target_errors: 0,
        seed: 2024,
        ..ExperimentConfig::default()
    }
}

fn one_relay_curves() -> &'static Vec<BerRecord> {
    static CELL: OnceLock<Vec<BerRecord>> = OnceLock::new();
    CELL.get_or_init(|| {
        run_sweep(&curve_config(1, CodeKind::Alamouti, Scheme::ALL.to_vec())).unwrap()
    })
}

fn two_relay_curve(code: CodeKind) -> &'static Vec<BerRecord> {
    static ALAMOUTI: OnceLock<Vec<BerRecord>> = OnceLock::new();
    static RANDOMIZED: OnceLock<Vec<BerRecord>> = OnceLock::new();
    let cell = match code {
        CodeKind::Alamouti => &ALAMOUTI,
        CodeKind::RAlamouti => &RANDOMIZED,
    };
    cell.get_or_init(|| run_sweep(&curve_config(2, code, vec![Scheme::JpaMber])).unwrap())
}

fn curve(records: &[BerRecord], scheme: Scheme) -> Vec<&BerRecord> {
    records
        .iter()
        .filter(|r| r.scheme == scheme.as_str())
        .collect()
}

/// SNR where the curve crosses `target`, by linear interpolation of
/// `log10(BER)` between the bracketing grid points.
fn crossing(curve: &[&BerRecord], target: f64) -> Option<f64> {
    curve.windows(2).find_map(|w| {
        let (a, b) = (w[0], w[1]);
        if a.ber >= target && b.ber < target && b.ber > 0.0 {
            let (la, lb, lt) = (a.ber.log10(), b.ber.log10(), target.log10());
            Some(a.snr_db + (la - lt) / (la - lb) * (b.snr_db - a.snr_db))
        } else {
            None
        }
    })
}

/// Least-squares slope of `log10(BER)` against `SNR_dB / 10` over the points
/// in `[10, 20]` dB with at least ten errors.
fn diversity_slope(curve: &[&BerRecord]) -> Option<(f64, usize)> {
    let pts: Vec<(f64, f64)> = curve
        .iter()
        .filter(|r| (10.0..=20.0).contains(&r.snr_db) && r.errors >= 10)
        .map(|r| (r.snr_db / 10.0, r.ber.log10()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some((-sxy / sxx, pts.len()))
}

fn fmt_curve(curve: &[&BerRecord]) -> String {
    curve
        .iter()
        .map(|r| format!("{}:{:.2e}", r.snr_db, r.ber))
        .collect::<Vec<_>>()
        .join(" ")
}

#[test]
fn criterion_4_scheme_ordering_and_gain() {
    let started = Instant::now();
    let recs = one_relay_curves();
    let mmse = curve(recs, Scheme::EpaMmse);
    let epa = curve(recs, Scheme::EpaMber);
    let jpa = curve(recs, Scheme::JpaMber);
    let enough_bits = recs.iter().all(|r| r.trials >= 1_000_000);
    let mut violations = Vec::new();
    for ((m, e), j) in mmse.iter().zip(&epa).zip(&jpa) {
        let in_range = m.ber.max(e.ber).max(j.ber) < 0.1;
        if in_range && !(j.ber <= e.ber && e.ber <= m.ber) {
            violations.push(format!("{} dB", m.snr_db));
        }
    }
    let gain = crossing(&epa, 1e-3)
        .zip(crossing(&jpa, 1e-3))
        .map(|(e, j)| e - j);
    let gain_ok = gain.is_some_and(|g| (1.0..=4.0).contains(&g));
    let pass = enough_bits && violations.is_empty() && gain_ok && started.elapsed().as_secs() < 900;
    report(
        4,
        "JPA-MBER <= EPA-MBER <= EPA-MMSE, gain at 1e-3",
        pass,
        &format!(
            "ordering violations {:?}; JPA gain over EPA at 1e-3 = {} dB (accept [1, 4]); jpa {}; epa {}; mmse {}",
            violations,
            gain.map_or("n/a".into(), |g| format!("{g:.2}")),
            fmt_curve(&jpa),
            fmt_curve(&epa),
            fmt_curve(&mmse)
        ),
        started,
    );
    assert!(pass);
}

#[test]
fn criterion_5_more_relays_steeper_curve() {
    let started = Instant::now();
    let one = curve(one_relay_curves(), Scheme::JpaMber);
    let two = curve(two_relay_curve(CodeKind::Alamouti), Scheme::JpaMber);
    let s1 = diversity_slope(&one);
    let s2 = diversity_slope(&two);
    let pass = matches!((s1, s2), (Some((a, _)), Some((b, _))) if b > a)
        && started.elapsed().as_secs() < 900;
    let show = |s: Option<(f64, usize)>| {
        s.map_or("n/a".into(), |(v, n)| format!("{v:.2} over {n} points"))
    };
    report(
        5,
        "diversity slope n_r=2 > n_r=1 (10-20 dB)",
        pass,
        &format!(
            "n_r=1 slope {}, n_r=2 slope {}; n_r=2 curve {}",
            show(s1),
            show(s2),
            fmt_curve(&two)
        ),
        started,
    );
    assert!(pass);
}

#[test]
fn criterion_6_randomized_code_gain() {
    let started = Instant::now();
    let plain = curve(two_relay_curve(CodeKind::Alamouti), Scheme::JpaMber);
    let randomized = curve(two_relay_curve(CodeKind::RAlamouti), Scheme::JpaMber);
    let mut violations = Vec::new();
    for (a, r) in plain.iter().zip(&randomized) {
        if a.ber < 1e-2 && r.ber > a.ber {
            violations.push(format!("{} dB ({:.2e} > {:.2e})", a.snr_db, r.ber, a.ber));
        }
    }
    let gain = crossing(&plain, 1e-3)
        .zip(crossing(&randomized, 1e-3))
        .map(|(a, r)| a - r);
    let gain_ok = gain.is_some_and(|g| (0.2..=2.5).contains(&g));
    let pass = violations.is_empty() && gain_ok && started.elapsed().as_secs() < 900;
    report(
        6,
        "R-Alamouti gain over Alamouti (n_r=2, JPA-MBER)",
        pass,
        &format!(
            "violations {:?}; gain at 1e-3 = {} dB (accept [0.2, 2.5]); alamouti {}; r-alamouti {}",
            violations,
            gain.map_or("n/a".into(), |g| format!("{g:.2}")),
            fmt_curve(&plain),
            fmt_curve(&randomized)
        ),
        started,
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 7. Channel estimation
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_channel_estimation() {
    let started = Instant::now();
    let mut details = Vec::new();

    // Noiseless pilots: 5000 LMS steps.
    let mut worst: f64 = 0.0;
    for (seed, relays) in [(1u64, 1usize), (2, 2), (3, 2)] {
        let mut rng = ChaCha8Rng::seed_from_u64(0xC700 + seed);
        let (ch, codes, links) = random_links(relays, CodeKind::RAlamouti, &mut rng);
        let pa = epa_allocation(relays, 2, 1.0).unwrap();
        let noise = NoiseSpec::uniform(0.0).unwrap();
        let pilots: Vec<_> = (0..5000)
            .map(|_| {
                let s: Vec<f64> = (0..2).map(|_| bpsk(rng.random())).collect();
                observe_pilot(&s, &ch, &codes, &pa, &noise, &mut rng).unwrap()
            })
            .collect();
        let est = estimate_channels(&pilots, &pa, Topology::new(relays, 2), 0.05, 1).unwrap();
        // H and every G'_k.
        let errs = est.relative_errors(&links);
        worst = errs[..=relays].iter().fold(worst, |a, &b| a.max(b));
    }
    let noiseless_ok = worst < 1e-4;
    details.push(format!(
        "noiseless worst relative error {worst:.1e} (tol 1e-4)"
    ));

    // Detection with estimated versus perfect channels.
    let base = ExperimentConfig {
        relays: 1,
        packets: 4000,
        packet_len: 125,
        target_errors: 0,
        seed: 77,
        ..ExperimentConfig::default()
    };
    let estimated = ExperimentConfig {
        channel_knowledge: ChannelKnowledge::Estimated,
        ..base.clone()
    };
    let mut degrade_ok = true;
    for snr in [10.0, 20.0] {
        let perfect = run_point(&base, Scheme::JpaMber, snr).unwrap();
        let est = run_point(&estimated, Scheme::JpaMber, snr).unwrap();
        // A zero count is resolved only down to one error.
        let floor = perfect.ber.max(1.0 / perfect.trials as f64);
        let ok = est.ber < 10.0 * floor;
        degrade_ok &= ok;
        details.push(format!(
            "{snr} dB: estimated {:.2e} vs perfect {:.2e}",
            est.ber, perfect.ber
        ));
    }
    let pass = noiseless_ok && degrade_ok && started.elapsed().as_secs() < 180;
    report(7, "channel estimation", pass, &details.join("; "), started);
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 8. Invariants
// ---------------------------------------------------------------------------

#[test]
fn criterion_8_invariants() {
    let started = Instant::now();
    let table = enumerate_constellation(2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC8);
    let mut worst_residual: f64 = 0.0;
    let mut worst_idempotence: f64 = 0.0;
    let mut worst_scale: f64 = 0.0;
    let cfg = MberConfig {
        mu: 0.05,
        gamma: 0.05,
        ..MberConfig::default()
    };
    for i in 0..20 {
        let relays = 1 + i % 2;
        let (_, _, links) = random_links(relays, CodeKind::ALL[i % 2], &mut rng);
        let mut state = random_state(&links, &mut rng);
        let sigma_n = rng.random_range(0.2..1.0);
        for _ in 0..100 {
            let g = joint_gradients(&state, &links, sigma_n, &table, true).unwrap();
            state = sg_step(&state, &g, &cfg, 1.0).unwrap();
            worst_residual = worst_residual.max(state.powers.constraint_residual(1.0));
            let again = project_power(&state.powers, 1.0).unwrap();
            let diff = again
                .values()
                .zip(state.powers.values())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            worst_idempotence = worst_idempotence.max(diff);
        }
        for j in 0..2 {
            let p = exact_ber(&state, &links, sigma_n, &table, j).unwrap();
            for c in [1e-3, 0.5, 7.0, 1e3] {
                let scaled =
                    with_filter(&state, j, state.filters.filter(j) * Complex64::new(c, 0.0));
                worst_scale = worst_scale
                    .max((exact_ber(&scaled, &links, sigma_n, &table, j).unwrap() - p).abs());
            }
        }
    }

    // Linearization of the relay code against the equivalent channel.
    let mut worst_linear: f64 = 0.0;
    for i in 0..200 {
        let g = coopmber::channel::rayleigh_matrix(2, 2, &mut rng);
        let code = CodeScheme::for_relay(CodeKind::ALL[i % 2], &mut rng);
        let x = ComplexVector::from_iterator(
            2,
            (0..2).map(|_| coopmber::channel::complex_gaussian(&mut rng, 1.0)),
        );
        let direct = linearize(&(&g * code.encode(&x).unwrap()));
        let via = code.equivalent_channel(&g).unwrap() * &x;
        worst_linear = worst_linear.max((direct - via).norm());
    }

    // Byte-identical CSV across repeated seeded runs.
    let small = ExperimentConfig {
        snr_db: vec![0.0, 10.0],
        packets: 40,
        packet_len: 50,
        adapt_iters: 20,
        ..ExperimentConfig::default()
    };
    let first = to_csv_string(&run_sweep(&small).unwrap());
    let second = to_csv_string(&run_sweep(&small).unwrap());
    let deterministic = first == second;

    let pass = worst_residual < 1e-9
        && worst_idempotence < 1e-12
        && worst_linear < 1e-12
        && worst_scale < 1e-12
        && deterministic
        && started.elapsed().as_secs() < 60;
    report(
        8,
        "invariants",
        pass,
        &format!(
            "power residual {worst_residual:.1e}, projection idempotence {worst_idempotence:.1e}, linearization {worst_linear:.1e}, scale invariance {worst_scale:.1e}, CSV deterministic {deterministic}"
        ),
        started,
    );
    assert!(pass);
}
