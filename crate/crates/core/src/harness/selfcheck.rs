//! Invariant suites run by the `check` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::experiments::{derive_seed, solve_instance};
use crate::alternating::{run_alternating, AltConfig, AltStatus};
use crate::linalg::{build_tf, c, conj, hermitian_eig, kron, vec, CMat};
use crate::rounding::RoundingConfig;
use crate::sysmodel::{
    constraint_residuals, dropped_quadratic_scale, eve_den_lb, eve_exact_parts, eve_num_ub, eve_u,
    eve_v, relay_power, sample_channels, sample_eve_error, snr_bob, BeamformingPair, ChannelSet,
    EveLinearMap, LiftedPair, SystemConfig,
};

pub type DenLb = fn(&LiftedPair, &ChannelSet, &SystemConfig) -> f64;

/// Functions under test that a fixture may swap out.
#[derive(Clone, Copy)]
pub struct CheckHooks {
    pub den_lb: DenLb,
}

impl Default for CheckHooks {
    fn default() -> Self {
        Self { den_lb: eve_den_lb }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: &'static str,
    pub trials: usize,
    pub failures: usize,
    /// Largest normalized violation seen (≤ 0 means every check had slack).
    pub max_residual: f64,
    pub first_failure: Option<String>,
}

impl SuiteReport {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            trials: 0,
            failures: 0,
            max_residual: f64::NEG_INFINITY,
            first_failure: None,
        }
    }

    /// Records `value ≤ limit`.
    fn check(&mut self, value: f64, limit: f64, what: impl FnOnce() -> String) {
        let excess = if value.is_nan() {
            f64::INFINITY
        } else {
            value - limit
        };
        self.max_residual = self.max_residual.max(value);
        if excess > 0.0 {
            self.failures += 1;
            if self.first_failure.is_none() {
                self.first_failure = Some(format!("{}: {value:e} > {limit:e}", what()));
            }
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.trials > 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelfCheckReport {
    pub seed: u64,
    pub dims: Vec<usize>,
    pub suites: Vec<SuiteReport>,
}

impl SelfCheckReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(SuiteReport::passed)
    }

    pub fn suite(&self, name: &str) -> Option<&SuiteReport> {
        self.suites.iter().find(|s| s.name == name)
    }
}

fn randn(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMat {
    CMat::from_fn(rows, cols, |_, _| {
        c(rng.sample(StandardNormal), rng.sample(StandardNormal))
    })
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn system(d: usize) -> SystemConfig {
    SystemConfig {
        n_src: d,
        n_relay: d,
        ..SystemConfig::default()
    }
}

fn random_pair(rng: &mut ChaCha8Rng, cfg: &SystemConfig) -> BeamformingPair {
    BeamformingPair {
        q: randn(rng, cfg.n_src, 1),
        w_mat: randn(rng, cfg.n_relay, cfg.n_relay),
    }
}

/// Direct vs lifted relay power and SNR_b, and the eavesdropper norm chain.
fn identity_suite(dims: &[usize], trials: usize, rng: &mut ChaCha8Rng) -> SuiteReport {
    let mut s = SuiteReport::new("identity");
    for &d in dims {
        let cfg = system(d);
        for _ in 0..trials {
            s.trials += 1;
            let ch = sample_channels(&cfg, rng);
            let p = random_pair(rng, &cfg);
            let lp = p.lift();
            let (Ok(a), Ok(b)) = (relay_power(&p, &ch, &cfg), relay_power(&lp, &ch, &cfg)) else {
                s.check(f64::NAN, 0.0, || "relay power".into());
                continue;
            };
            s.check(rel(b, a), 1e-10, || format!("relay power d={d}"));
            let (Ok(a), Ok(b)) = (snr_bob(&p, &ch, &cfg), snr_bob(&lp, &ch, &cfg)) else {
                s.check(f64::NAN, 0.0, || "SNR_b".into());
                continue;
            };
            s.check(rel(b, a), 1e-10, || format!("SNR_b d={d}"));
            let map = EveLinearMap::new(&ch.g_e_hat);
            let gh = ch.g_e_hat.adjoint();
            let x = &ch.h * &lp.q_big * ch.h.adjoint();
            let u_direct = &p.w_mat * &x * p.w_mat.adjoint() * &gh;
            let u = eve_u(&map, &lp.q_big, &lp.z_big, &ch);
            s.check(rel(u.norm(), u_direct.norm()), 1e-10, || {
                format!("‖u‖ d={d}")
            });
            s.check(
                rel(map.apply_dense(&x, &lp.z_big).norm(), u_direct.norm()),
                1e-10,
                || format!("dense ‖u‖ d={d}"),
            );
            let v_direct = &p.w_mat * p.w_mat.adjoint() * &gh;
            s.check(
                rel(eve_v(&map, &lp.z_big).norm(), v_direct.norm()),
                1e-10,
                || format!("‖v‖ d={d}"),
            );
        }
    }
    s
}

fn tf_suite(dims: &[usize], trials: usize, rng: &mut ChaCha8Rng) -> SuiteReport {
    let mut s = SuiteReport::new("tf");
    for &p in dims {
        for q in 1..=p {
            let t = build_tf(p, q);
            let dense = t.to_dense();
            let sums_ok = (0..dense.nrows()).all(|i| dense.row(i).sum() == c(1.0, 0.0))
                && (0..dense.ncols()).all(|j| dense.column(j).sum() == c(1.0, 0.0));
            s.trials += 1;
            s.check(if sums_ok { 0.0 } else { 1.0 }, 0.0, || {
                format!("T_f({p},{q}) is not a permutation")
            });
            for _ in 0..trials {
                s.trials += 1;
                let f = randn(rng, p, q);
                let fv = vec(&f);
                let lhs = vec(&kron(&conj(&f), &f));
                let diff = (lhs - t.apply(&vec(&(&fv * fv.adjoint())))).camax();
                s.check(diff, 0.0, || {
                    format!("vec(F*⊗F) = T_f vec(ff^H), p={p} q={q}")
                });
            }
        }
    }
    s
}

/// Worst-case bounds against sampled errors on random rank-one pairs.
fn bounds_suite(
    dims: &[usize],
    trials: usize,
    rng: &mut ChaCha8Rng,
    hooks: &CheckHooks,
) -> SuiteReport {
    let mut s = SuiteReport::new("bounds");
    for &d in dims {
        for eps in [0.01, 0.1] {
            let cfg = system(d).with_eps(eps);
            for _ in 0..trials {
                s.trials += 1;
                let ch = sample_channels(&cfg, rng);
                let p = random_pair(rng, &cfg);
                let lp = p.lift();
                let lb = (hooks.den_lb)(&lp, &ch, &cfg);
                let ub = eve_num_ub(&lp, &ch, &cfg)
                    + eps * eps * dropped_quadratic_scale(&p, &ch)
                    + 1e-9;
                for _ in 0..200 {
                    let err = sample_eve_error(&cfg, rng);
                    let (num, den) = eve_exact_parts(&p, &ch, &cfg, &err);
                    s.check(rel(lb, den).copysign(lb - den), 0.0, || {
                        format!("denominator bound d={d} eps={eps}")
                    });
                    s.check(rel(num, ub).copysign(num - ub), 0.0, || {
                        format!("numerator bound d={d} eps={eps}")
                    });
                }
            }
        }
    }
    s
}

fn small_instances(dims: &[usize], trials: usize, seed: u64) -> Vec<(SystemConfig, ChannelSet)> {
    let mut out = Vec::new();
    for &d in dims.iter().filter(|&&d| (2..=3).contains(&d)) {
        for t in 0..trials.min(4) {
            let cfg = system(d);
            let ch = sample_channels(
                &cfg,
                &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[d as u64, t as u64])),
            );
            out.push((cfg, ch));
        }
    }
    out
}

/// ξ never rises by more than `1e-6·max(1, ξ)` between iterations.
fn monotonicity_suite(dims: &[usize], trials: usize, seed: u64) -> SuiteReport {
    let mut s = SuiteReport::new("monotonicity");
    let ac = AltConfig::default();
    for (cfg, ch) in small_instances(dims, trials, seed) {
        s.trials += 1;
        match run_alternating(&ch, &cfg, &ac) {
            Ok(sol) if sol.is_solved() => {
                for w in sol.xi_trace.windows(2) {
                    s.check((w[1] - w[0]) / w[0].max(1.0), 1e-6, || {
                        format!("ξ rose {} → {}", w[0], w[1])
                    });
                }
                // relative overshoot of the cap, so max_residual stays a ξ-scale quantity
                let over = (sol.iterations as f64 - ac.n_max as f64) / ac.n_max as f64;
                s.check(over, 0.0, || format!("{} iterations", sol.iterations));
            }
            // an infeasible draw is a legitimate outcome, not a broken invariant
            Ok(sol) if sol.status == AltStatus::Infeasible => s.trials -= 1,
            Ok(sol) => s.check(f64::NAN, 0.0, || {
                format!("alternating ended {:?}: {:?}", sol.status, sol.detail)
            }),
            Err(e) => s.check(f64::NAN, 0.0, || e.to_string()),
        }
    }
    s
}

/// Rounded designs satisfy the relaxed constraints and cost no less than ξ.
fn feasibility_suite(dims: &[usize], trials: usize, seed: u64) -> SuiteReport {
    let mut s = SuiteReport::new("feasibility");
    let rc = RoundingConfig {
        k_samples: 30,
        seed,
        ..RoundingConfig::default()
    };
    for (cfg, ch) in small_instances(dims, trials, seed ^ 1) {
        s.trials += 1;
        match solve_instance(&ch, &cfg, &AltConfig::default(), &rc, 20, 0) {
            Ok(o) => match (o.relaxed_power(), o.rounded.as_ref()) {
                (Some(xi), Some(r)) if r.feasible => {
                    let res = constraint_residuals(&r.pair.lift(), &ch, &cfg);
                    s.check(-res.min(), 1e-6, || {
                        "rounded pair violates a constraint".into()
                    });
                    s.check(xi - r.total_power, 1e-6, || {
                        format!("rounded {} below relaxed {xi}", r.total_power)
                    });
                    let (vals, _) =
                        hermitian_eig(&o.relaxed.z_big).unwrap_or((vec![0.0], CMat::zeros(1, 1)));
                    s.check(
                        -vals.last().copied().unwrap_or(0.0),
                        1e-6 * vals[0].abs().max(1.0),
                        || "Z not PSD".into(),
                    );
                }
                _ if o.relaxed.status == AltStatus::Infeasible => s.trials -= 1,
                _ => s.check(f64::NAN, 0.0, || {
                    format!("no feasible design ({:?})", o.relaxed.status)
                }),
            },
            Err(e) => s.check(f64::NAN, 0.0, || e.to_string()),
        }
    }
    s
}

pub fn run_self_check(dims: &[usize], trials: usize, seed: u64) -> SelfCheckReport {
    run_self_check_with(dims, trials, seed, &CheckHooks::default())
}

pub fn run_self_check_with(
    dims: &[usize],
    trials: usize,
    seed: u64,
    hooks: &CheckHooks,
) -> SelfCheckReport {
    let rng = |k: u64| ChaCha8Rng::seed_from_u64(derive_seed(seed, &[100 + k]));
    let suites = vec![
        identity_suite(dims, trials, &mut rng(0)),
        tf_suite(dims, trials, &mut rng(1)),
        bounds_suite(dims, trials, &mut rng(2), hooks),
        monotonicity_suite(dims, trials, seed),
        feasibility_suite(dims, trials, seed),
    ];
    SelfCheckReport {
        seed,
        dims: dims.to_vec(),
        suites,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sysmodel::eve_v;

    /// Penalty sign flipped: the bound then overshoots the true denominator.
    fn flipped_den_lb(lp: &LiftedPair, ch: &ChannelSet, cfg: &SystemConfig) -> f64 {
        let map = EveLinearMap::new(&ch.g_e_hat);
        eve_den_lb(lp, ch, cfg) + 4.0 * cfg.eps * cfg.sigma2_r * eve_v(&map, &lp.z_big).norm()
    }

    #[test]
    fn healthy_build_passes() {
        let r = run_self_check(&[2], 5, 7);
        assert!(r.passed(), "{r:#?}");
        for s in &r.suites {
            assert!(s.trials > 0);
            assert!(s.max_residual.is_finite());
        }
    }

    #[test]
    fn flipped_penalty_is_caught() {
        let hooks = CheckHooks {
            den_lb: flipped_den_lb,
        };
        let r = run_self_check_with(&[2], 5, 7, &hooks);
        assert!(!r.passed());
        let b = r.suite("bounds").unwrap();
        assert!(b.failures > 0 && b.first_failure.as_deref().unwrap().contains("denominator"));
        assert!(r.suite("identity").unwrap().passed());
    }
}
