//! Monte Carlo drivers: the threshold sweep of robust vs non-robust power and
//! the sampled eavesdropper-SNR distribution.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::ExperimentSpec;
use super::HarnessError;
use crate::alternating::{
    run_alternating, run_alternating_from, run_alternating_warm, AltConfig, AltStatus,
    LiftedSolution,
};
use crate::linalg::{c, CMat};
use crate::rounding::{randomize_select, CandidateSource, PrecoderSolution, RoundingConfig};
use crate::sysmodel::{
    complex_normal, sample_channels, sample_eve_error, snr_eve_exact, worst_delta, BoundTarget,
    ChannelSet, EveError, LiftedPair, SystemConfig,
};

/// Slack by which rounding must undercut ξ before a refinement round runs.
pub const REFINE_SLACK: f64 = 1e-6;

/// splitmix64 finalizer folded over `parts`.
pub fn derive_seed(root: u64, parts: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    parts.iter().fold(mix(root), |acc, &p| {
        mix(acc ^ mix(p.wrapping_add(0x9e37_79b9_7f4a_7c15)))
    })
}

/// Channel draw of one trial; shared by every sweep point and both schemes.
pub fn trial_channels(spec: &ExperimentSpec, trial: usize) -> (u64, ChannelSet) {
    let seed = derive_seed(spec.root_seed, &[0, trial as u64]);
    (
        seed,
        sample_channels(&spec.base_system(), &mut ChaCha8Rng::seed_from_u64(seed)),
    )
}

#[derive(Debug, Clone)]
pub struct InstanceOutcome {
    /// Lowest-ξ relaxed solution over all runs on the instance.
    pub relaxed: LiftedSolution,
    /// Cheapest rounded design over all runs; feasible designs win.
    pub rounded: Option<PrecoderSolution>,
    /// Warm-started re-solves performed.
    pub refinements: usize,
    /// Alternating iterations over all runs.
    pub total_iterations: usize,
    /// Extra runs warm-started from tighter configurations.
    pub family_starts: usize,
}

impl InstanceOutcome {
    pub fn relaxed_power(&self) -> Option<f64> {
        self.relaxed.is_solved().then(|| self.relaxed.xi())
    }

    /// Power of the rounded pair when it is feasible.
    pub fn rounded_power(&self) -> Option<f64> {
        self.rounded
            .as_ref()
            .filter(|r| r.feasible)
            .map(|r| r.total_power)
    }

    /// Folds in another run on the same instance.
    fn absorb(&mut self, other: InstanceOutcome) {
        self.total_iterations += other.total_iterations;
        self.refinements += other.refinements;
        let cheaper = match (self.rounded_power(), other.rounded_power()) {
            (_, None) => self.rounded.is_none() && other.rounded.is_some(),
            (None, Some(_)) => true,
            (Some(a), Some(b)) => b < a,
        };
        if other.relaxed.is_solved()
            && self
                .relaxed_power()
                .map_or(true, |xi| other.relaxed.xi() < xi)
        {
            self.relaxed = other.relaxed;
        }
        if cheaper {
            self.rounded = other.rounded;
        }
    }
}

/// Alternating minimization, rounding, and warm-started refinement while a
/// feasible rounded pair undercuts the relaxed objective.
pub fn solve_instance(
    ch: &ChannelSet,
    cfg: &SystemConfig,
    ac: &AltConfig,
    rc: &RoundingConfig,
    refine_rounds: usize,
    restarts: usize,
) -> Result<InstanceOutcome, HarnessError> {
    solve_from(ch, cfg, ac, rc, refine_rounds, Start::Cold { restarts })
}

enum Start {
    /// Isotropic `Q^(0)` plus `restarts` random rank-one `Q^(0)` of the same power.
    Cold {
        restarts: usize,
    },
    Warm(LiftedPair),
}

/// Rank-one `Q^(0)` with trace `p_s` along a complex normal direction.
fn random_start(cfg: &SystemConfig, p_s: f64, seed: u64) -> CMat {
    let v = complex_normal(&mut ChaCha8Rng::seed_from_u64(seed), cfg.n_src, 1);
    let scale = p_s / v.norm_squared();
    &v * v.adjoint() * c(scale, 0.0)
}

fn solve_from(
    ch: &ChannelSet,
    cfg: &SystemConfig,
    ac: &AltConfig,
    rc: &RoundingConfig,
    refine_rounds: usize,
    start: Start,
) -> Result<InstanceOutcome, HarnessError> {
    let (mut relaxed, restarts) = match start {
        Start::Warm(s) => (run_alternating_warm(ch, cfg, ac, s)?, 0),
        Start::Cold { restarts } => (run_alternating(ch, cfg, ac)?, restarts),
    };
    let mut total_iterations = relaxed.iterations;
    for r in 0..restarts {
        let run = run_alternating_from(
            ch,
            cfg,
            ac,
            random_start(cfg, ac.p_s, derive_seed(rc.seed, &[3, r as u64])),
        )?;
        total_iterations += run.iterations;
        if run.is_solved()
            && relaxed
                .is_solved()
                .then(|| relaxed.xi())
                .map_or(true, |xi| run.xi() < xi)
        {
            relaxed = run;
        }
    }
    if !relaxed.is_solved() {
        return Ok(InstanceOutcome {
            relaxed,
            rounded: None,
            refinements: 0,
            total_iterations,
            family_starts: 0,
        });
    }
    let mut rounded = randomize_select(&relaxed.q_big, &relaxed.z_big, ch, cfg, rc)?;
    let mut refinements = 0;
    while refinements < refine_rounds
        && rounded.feasible
        && rounded.total_power < relaxed.xi() - REFINE_SLACK
    {
        let next = run_alternating_warm(ch, cfg, ac, rounded.pair.lift())?;
        total_iterations += next.iterations;
        if !next.is_solved() || !(next.xi() < relaxed.xi()) {
            break;
        }
        refinements += 1;
        let seed = rc
            .seed
            .wrapping_add((refinements as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        rounded = randomize_select(
            &next.q_big,
            &next.z_big,
            ch,
            cfg,
            &RoundingConfig { seed, ..rc.clone() },
        )?;
        relaxed = next;
    }
    Ok(InstanceOutcome {
        relaxed,
        rounded: Some(rounded),
        refinements,
        total_iterations,
        family_starts: 0,
    })
}

/// `a` is at least as tight as `b`: higher Bob floor, lower eavesdropper cap,
/// larger error radius, everything else equal.
pub fn dominates(a: &SystemConfig, b: &SystemConfig) -> bool {
    a.r_b >= b.r_b
        && a.r_e <= b.r_e
        && a.eps >= b.eps
        && SystemConfig {
            r_b: b.r_b,
            r_e: b.r_e,
            eps: b.eps,
            ..a.clone()
        } == *b
}

fn at_most(v: Option<f64>, bound: f64) -> bool {
    v.is_some_and(|v| v <= bound + 1e-9 * (1.0 + bound.abs()))
}

/// Solves several threshold/radius variants of one channel draw, tightest
/// first. Whatever is feasible for a tighter variant is feasible for every
/// looser one, so when a looser run ends above the cheapest dominating
/// relaxed pair or rounded design, it is re-run warm-started from that point.
pub fn solve_family(
    ch: &ChannelSet,
    cfgs: &[SystemConfig],
    ac: &AltConfig,
    rcs: &[RoundingConfig],
    refine_rounds: usize,
    restarts: usize,
) -> Result<Vec<InstanceOutcome>, HarnessError> {
    assert_eq!(
        cfgs.len(),
        rcs.len(),
        "one rounding config per system config"
    );
    let mut order: Vec<usize> = (0..cfgs.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (&cfgs[i], &cfgs[j]);
        b.r_b
            .total_cmp(&a.r_b)
            .then(a.r_e.total_cmp(&b.r_e))
            .then(b.eps.total_cmp(&a.eps))
    });
    let mut done: Vec<Option<InstanceOutcome>> = vec![None; cfgs.len()];
    for &i in &order {
        let cfg = &cfgs[i];
        let mut out = solve_from(
            ch,
            cfg,
            ac,
            &rcs[i],
            refine_rounds,
            Start::Cold { restarts },
        )?;
        let doms: Vec<&InstanceOutcome> = done
            .iter()
            .enumerate()
            .filter_map(|(j, o)| o.as_ref().filter(|_| dominates(&cfgs[j], cfg)))
            .collect();
        let best_relaxed = doms
            .iter()
            .filter(|o| o.relaxed.is_solved())
            .min_by(|a, b| a.relaxed.xi().total_cmp(&b.relaxed.xi()))
            .map(|o| {
                (
                    o.relaxed.xi(),
                    LiftedPair {
                        q_big: o.relaxed.q_big.clone(),
                        z_big: o.relaxed.z_big.clone(),
                    },
                )
            });
        let best_design = doms
            .iter()
            .filter_map(|o| o.rounded.as_ref().filter(|r| r.feasible))
            .min_by(|a, b| a.total_power.total_cmp(&b.total_power))
            .map(|r| (r.total_power, r.pair.lift()));
        if let Some((xi, start)) = best_relaxed {
            if !at_most(out.relaxed_power(), xi) {
                out.absorb(solve_from(
                    ch,
                    cfg,
                    ac,
                    &rcs[i],
                    refine_rounds,
                    Start::Warm(start),
                )?);
                out.family_starts += 1;
            }
        }
        if let Some((p, start)) = best_design {
            if !at_most(out.rounded_power(), p) {
                out.absorb(solve_from(
                    ch,
                    cfg,
                    ac,
                    &rcs[i],
                    refine_rounds,
                    Start::Warm(start),
                )?);
                out.family_starts += 1;
            }
        }
        done[i] = Some(out);
    }
    Ok(done
        .into_iter()
        .map(|o| o.expect("every configuration solved"))
        .collect())
}

/// Per-scheme summary of one solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemeResult {
    pub status: AltStatus,
    pub iterations: usize,
    pub refinements: usize,
    pub relaxed_power: Option<f64>,
    pub rounded_power: Option<f64>,
    pub source: Option<CandidateSource>,
}

impl From<&InstanceOutcome> for SchemeResult {
    fn from(o: &InstanceOutcome) -> Self {
        Self {
            status: o.relaxed.status,
            iterations: o.total_iterations,
            refinements: o.refinements,
            relaxed_power: o.relaxed_power(),
            rounded_power: o.rounded_power(),
            source: o.rounded.as_ref().filter(|r| r.feasible).map(|r| r.source),
        }
    }
}

impl SchemeResult {
    pub fn feasible(&self) -> bool {
        self.rounded_power.is_some()
    }
}

/// One trial at one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub trial: usize,
    pub channel_seed: u64,
    pub eps: f64,
    pub r_b_db: f64,
    pub r_e_db: f64,
    pub robust: SchemeResult,
    pub nonrobust: SchemeResult,
    #[serde(skip)]
    pub wall_secs: f64,
}

fn point_rounding(spec: &ExperimentSpec, trial: usize, point: usize) -> RoundingConfig {
    RoundingConfig {
        seed: derive_seed(spec.root_seed, &[1, trial as u64, point as u64]),
        ..spec.rounding.clone()
    }
}

/// Solves of one trial at fixed `r_b`: per `r_e`, the non-robust outcome and
/// one outcome per entry of `eps_values` (ε = 0 entries reuse the non-robust
/// one). All variants go through one [`solve_family`] call.
fn trial_grid(
    spec: &ExperimentSpec,
    ch: &ChannelSet,
    trial: usize,
    r_b_db: f64,
    first_point: usize,
) -> Result<Vec<(InstanceOutcome, Vec<InstanceOutcome>)>, HarnessError> {
    let robust_eps: Vec<f64> = spec
        .eps_values
        .iter()
        .copied()
        .filter(|&e| e > 0.0)
        .collect();
    let (mut cfgs, mut rcs) = (Vec::new(), Vec::new());
    for (k, &r_e_db) in spec.r_e_db_values.iter().enumerate() {
        let rc = point_rounding(spec, trial, first_point + k);
        for eps in std::iter::once(0.0).chain(robust_eps.iter().copied()) {
            cfgs.push(spec.system_at(eps, r_b_db, r_e_db));
            rcs.push(rc.clone());
        }
    }
    let mut solved = solve_family(
        ch,
        &cfgs,
        &spec.alt,
        &rcs,
        spec.refine_rounds,
        spec.restarts,
    )?
    .into_iter();
    let mut out = Vec::new();
    for _ in &spec.r_e_db_values {
        let base = solved.next().expect("grid size");
        let mut robust: Vec<InstanceOutcome> = robust_eps
            .iter()
            .map(|_| solved.next().expect("grid size"))
            .collect();
        let mut per_eps = Vec::with_capacity(spec.eps_values.len());
        for &eps in &spec.eps_values {
            per_eps.push(if eps > 0.0 {
                robust.remove(0)
            } else {
                base.clone()
            });
        }
        out.push((base, per_eps));
    }
    Ok(out)
}

/// Robust (each ε) and non-robust (ε = 0) solves on shared channels at every
/// `(r_b, r_e)` point. Records come back ordered by trial, then r_b, r_e, ε.
pub fn run_power_sweep(
    spec: &ExperimentSpec,
    verbose: bool,
) -> Result<Vec<RunRecord>, HarnessError> {
    spec.validate()?;
    let per_trial: Vec<Vec<RunRecord>> = (0..spec.trials)
        .into_par_iter()
        .map(|trial| {
            let start = Instant::now();
            let (channel_seed, ch) = trial_channels(spec, trial);
            let mut out = Vec::new();
            for (b, &r_b_db) in spec.r_b_db_values.iter().enumerate() {
                let grid = trial_grid(spec, &ch, trial, r_b_db, b * spec.r_e_db_values.len())?;
                for (&r_e_db, (base, per_eps)) in spec.r_e_db_values.iter().zip(&grid) {
                    let nonrobust = SchemeResult::from(base);
                    for (&eps, o) in spec.eps_values.iter().zip(per_eps) {
                        out.push(RunRecord {
                            trial,
                            channel_seed,
                            eps,
                            r_b_db,
                            r_e_db,
                            robust: SchemeResult::from(o),
                            nonrobust: nonrobust.clone(),
                            wall_secs: 0.0,
                        });
                    }
                }
            }
            let secs = start.elapsed().as_secs_f64();
            for r in &mut out {
                r.wall_secs = secs;
            }
            if verbose {
                let ok = out
                    .iter()
                    .filter(|r| r.robust.feasible() && r.nonrobust.feasible())
                    .count();
                eprintln!(
                    "sweep trial {trial}: {ok}/{} points feasible, {secs:.2}s",
                    out.len()
                );
            }
            Ok(out)
        })
        .collect::<Result<_, HarnessError>>()?;
    Ok(per_trial.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Robust,
    NonRobust,
}

impl Scheme {
    pub fn label(self) -> &'static str {
        match self {
            Scheme::Robust => "robust",
            Scheme::NonRobust => "non-robust",
        }
    }
}

/// Exact eavesdropper SNRs of one rounded design under sampled channel errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EveDistRecord {
    pub trial: usize,
    pub scheme: Scheme,
    pub eps: f64,
    pub r_e_db: f64,
    /// Linear SNR_e at each sampled error.
    pub snr_e: Vec<f64>,
    /// Share of samples with SNR_e above r_e.
    pub exceed_fraction: f64,
    /// Largest SNR_e over the analytic worst-case error directions.
    pub worst_case_snr_e: f64,
}

/// Errors drawn once per (trial, point) so both schemes see the same Δ.
fn sampled_errors(
    spec: &ExperimentSpec,
    cfg: &SystemConfig,
    trial: usize,
    point: usize,
) -> Vec<EveError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        spec.root_seed,
        &[2, trial as u64, point as u64],
    ));
    (0..spec.eve_samples)
        .map(|_| sample_eve_error(cfg, &mut rng))
        .collect()
}

fn eve_record(
    trial: usize,
    scheme: Scheme,
    cfg: &SystemConfig,
    ch: &ChannelSet,
    sol: &PrecoderSolution,
    errors: &[EveError],
) -> EveDistRecord {
    let snr_e: Vec<f64> = errors
        .iter()
        .map(|e| snr_eve_exact(&sol.pair, ch, cfg, e))
        .collect();
    let exceed = snr_e.iter().filter(|&&s| s > cfg.r_e).count();
    let worst_case_snr_e = [BoundTarget::Numerator, BoundTarget::Denominator]
        .into_iter()
        .filter_map(|t| worst_delta(&sol.pair, ch, cfg, t).ok())
        .chain(std::iter::once(EveError {
            delta: CMat::zeros(1, cfg.n_relay),
        }))
        .map(|e| snr_eve_exact(&sol.pair, ch, cfg, &e))
        .fold(f64::NEG_INFINITY, f64::max);
    EveDistRecord {
        trial,
        scheme,
        eps: cfg.eps,
        r_e_db: crate::sysmodel::linear_to_db(cfg.r_e),
        exceed_fraction: exceed as f64 / snr_e.len() as f64,
        snr_e,
        worst_case_snr_e,
    }
}

/// Output of the distribution experiment: records for feasible designs and
/// counts of trials whose design was infeasible.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EveDistOutput {
    pub records: Vec<EveDistRecord>,
    /// `(scheme, eps, r_e_db, infeasible trials)`.
    pub infeasible: Vec<(Scheme, f64, f64, usize)>,
}

/// For every ε and r_e (r_b fixed at the first sweep value), designs the
/// robust and non-robust precoders on shared channels and evaluates the exact
/// SNR_e over `eve_samples` errors from the ε-ball.
pub fn run_eve_distribution(
    spec: &ExperimentSpec,
    verbose: bool,
) -> Result<EveDistOutput, HarnessError> {
    spec.validate()?;
    let r_b_db = spec.r_b_db_values[0];
    type Trial = (Vec<EveDistRecord>, Vec<(Scheme, f64, f64)>);
    let per_trial: Vec<Trial> = (0..spec.trials)
        .into_par_iter()
        .map(|trial| {
            let start = Instant::now();
            let (_, ch) = trial_channels(spec, trial);
            let (mut recs, mut missing) = (Vec::new(), Vec::new());
            let grid = trial_grid(spec, &ch, trial, r_b_db, 0)?;
            for (k, (&r_e_db, (base, per_eps))) in spec.r_e_db_values.iter().zip(&grid).enumerate()
            {
                for (e, (&eps, robust)) in spec.eps_values.iter().zip(per_eps).enumerate() {
                    let cfg = spec.system_at(eps, r_b_db, r_e_db);
                    let errors = sampled_errors(spec, &cfg, trial, k * spec.eps_values.len() + e);
                    for (scheme, o) in [(Scheme::Robust, robust), (Scheme::NonRobust, base)] {
                        match o.rounded.as_ref().filter(|r| r.feasible) {
                            Some(sol) => {
                                recs.push(eve_record(trial, scheme, &cfg, &ch, sol, &errors))
                            }
                            None => missing.push((scheme, eps, r_e_db)),
                        }
                    }
                }
            }
            if verbose {
                eprintln!(
                    "eve-dist trial {trial}: {} designs, {:.2}s",
                    recs.len(),
                    start.elapsed().as_secs_f64()
                );
            }
            Ok((recs, missing))
        })
        .collect::<Result<_, HarnessError>>()?;

    let mut records = Vec::new();
    let mut counts: Vec<(Scheme, f64, f64, usize)> = Vec::new();
    for (recs, missing) in per_trial {
        records.extend(recs);
        for (s, eps, r_e) in missing {
            match counts
                .iter_mut()
                .find(|c| c.0 == s && c.1 == eps && c.2 == r_e)
            {
                Some(c) => c.3 += 1,
                None => counts.push((s, eps, r_e, 1)),
            }
        }
    }
    counts.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then(a.1.total_cmp(&b.1))
            .then(a.2.total_cmp(&b.2))
    });
    Ok(EveDistOutput {
        records,
        infeasible: counts,
    })
}

/// One trial of the P_s-sensitivity sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsRecord {
    pub trial: usize,
    pub p_s: f64,
    pub status: AltStatus,
    pub iterations: usize,
    pub relaxed_power: Option<f64>,
    pub rounded_power: Option<f64>,
}

/// Plain isotropic-start runs (no restarts) at the first sweep point and the
/// first ε, once per initialization power, on shared channels.
pub fn run_ps_sensitivity(
    spec: &ExperimentSpec,
    p_s_values: &[f64],
    verbose: bool,
) -> Result<Vec<PsRecord>, HarnessError> {
    spec.validate()?;
    if p_s_values.is_empty() || p_s_values.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
        return Err(HarnessError::Config(
            "P_s values must be positive and finite".into(),
        ));
    }
    let cfg = spec.system_at(
        spec.eps_values[0],
        spec.r_b_db_values[0],
        spec.r_e_db_values[0],
    );
    let per_trial: Vec<Vec<PsRecord>> = (0..spec.trials)
        .into_par_iter()
        .map(|trial| {
            let (_, ch) = trial_channels(spec, trial);
            let rc = point_rounding(spec, trial, 0);
            let out = p_s_values
                .iter()
                .map(|&p_s| {
                    let ac = AltConfig {
                        p_s,
                        ..spec.alt.clone()
                    };
                    let o = solve_instance(&ch, &cfg, &ac, &rc, spec.refine_rounds, 0)?;
                    Ok(PsRecord {
                        trial,
                        p_s,
                        status: o.relaxed.status,
                        iterations: o.total_iterations,
                        relaxed_power: o.relaxed_power(),
                        rounded_power: o.rounded_power(),
                    })
                })
                .collect::<Result<Vec<_>, HarnessError>>()?;
            if verbose {
                eprintln!("ps-sweep trial {trial}: {} runs", out.len());
            }
            Ok(out)
        })
        .collect::<Result<_, HarnessError>>()?;
    Ok(per_trial.into_iter().flatten().collect())
}
