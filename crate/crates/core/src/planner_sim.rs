//! Monte-Carlo simulation of proposal-and-verify planning with abstention.
//!
//! Plans are abstract: round `j` proposes a valid plan with probability
//! `ρ_j` given that no earlier round accepted, and a noisy verifier accepts
//! valid plans with probability `c = 1 − ε_fn` and invalid ones with
//! probability `ε_fp`, independently on every query.

use std::io::Write;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::Schedule;
use crate::error::{Error, Result};
use crate::metrics::RateEstimate;
use crate::rng::{shard_rng, shard_seed, shards, Rng};

const TRIAL_SHARD: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub budget: u64,
    pub eps_fp: f64,
    pub eps_fn: f64,
    pub schedule: Schedule,
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::config("planner budget q must be at least 1"));
        }
        for (n, v) in [("eps_fp", self.eps_fp), ("eps_fn", self.eps_fn)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("{n} = {v} outside [0, 1]")));
            }
        }
        self.schedule.validate()
    }

    pub fn c(&self) -> f64 {
        1.0 - self.eps_fn
    }

    /// Per-round probabilities of accepting a valid and an invalid plan.
    fn round_table(&self) -> (Vec<(f64, f64)>, bool) {
        let (rhos, clamped) = self.schedule.values(self.budget);
        let c = self.c();
        let table = rhos
            .iter()
            .map(|&r| {
                let valid = r * c;
                (valid, valid + (1.0 - r) * self.eps_fp)
            })
            .collect();
        (table, clamped)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "lowercase")]
pub enum PlannerOutcome {
    Accepted { round: u64, valid: bool },
    Abstained,
}

/// One round draws a single uniform `u`: valid-and-accepted when
/// `u < ρc`, invalid-and-accepted when `u < ρc + (1−ρ)ε_fp`, rejected
/// otherwise. This has the same law as drawing validity and then the
/// verifier's verdict.
fn simulate(table: &[(f64, f64)], rng: &mut Rng) -> PlannerOutcome {
    for (j, &(valid, any)) in table.iter().enumerate() {
        let u: f64 = rng.random();
        if u < valid {
            return PlannerOutcome::Accepted {
                round: j as u64 + 1,
                valid: true,
            };
        }
        if u < any {
            return PlannerOutcome::Accepted {
                round: j as u64 + 1,
                valid: false,
            };
        }
    }
    PlannerOutcome::Abstained
}

pub fn run_planner(config: &PlannerConfig, rng: &mut Rng) -> Result<PlannerOutcome> {
    config.validate()?;
    Ok(simulate(&config.round_table().0, rng))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub config: PlannerConfig,
    pub trials: u64,
    /// Accepted an invalid plan.
    pub hallucination: RateEstimate,
    pub abstention: RateEstimate,
    /// Accepted a valid plan.
    pub success: RateEstimate,
    /// Certified cap `q ε_fp` on the hallucination probability.
    pub h_cap: f64,
    /// Certified cap `Π (1 − cρ_j)` on the abstention probability.
    pub a_cap: f64,
    pub sum_rho: f64,
    /// Acceptances per round, index `j − 1`.
    pub accept_hist: Vec<u64>,
    pub schedule_clamped: bool,
}

impl ReliabilityReport {
    pub fn h_se(&self) -> f64 {
        crate::special::binomial_se(self.hallucination.rate, self.trials)
    }

    pub fn a_se(&self) -> f64 {
        crate::special::binomial_se(self.abstention.rate, self.trials)
    }

    pub fn meets(&self, alpha: f64, beta: f64) -> bool {
        self.hallucination.rate <= alpha && self.abstention.rate <= beta
    }
}

#[derive(Default)]
struct Tally {
    bad: u64,
    abstain: u64,
    good: u64,
    hist: Vec<u64>,
}

/// Runs `trials` independent planners; trial shard `i` uses `shard_rng(seed, i)`.
pub fn estimate_reliability(config: &PlannerConfig, trials: u64, seed: u64) -> Result<ReliabilityReport> {
    config.validate()?;
    if trials == 0 {
        return Err(Error::config("trial count must be at least 1"));
    }
    let (table, clamped) = config.round_table();
    let q = config.budget as usize;
    let layout: Vec<_> = shards(trials as usize, TRIAL_SHARD).collect();
    let parts: Vec<Tally> = layout
        .into_par_iter()
        .map(|(idx, range)| {
            let mut rng = shard_rng(seed, idx as u64);
            let mut t = Tally {
                hist: vec![0; q],
                ..Tally::default()
            };
            for _ in range {
                match simulate(&table, &mut rng) {
                    PlannerOutcome::Accepted { round, valid } => {
                        t.hist[round as usize - 1] += 1;
                        if valid {
                            t.good += 1;
                        } else {
                            t.bad += 1;
                        }
                    }
                    PlannerOutcome::Abstained => t.abstain += 1,
                }
            }
            t
        })
        .collect();
    let mut total = Tally {
        hist: vec![0; q],
        ..Tally::default()
    };
    for p in parts {
        total.bad += p.bad;
        total.abstain += p.abstain;
        total.good += p.good;
        total.hist.iter_mut().zip(p.hist).for_each(|(a, b)| *a += b);
    }
    let (rhos, _) = config.schedule.values(config.budget);
    let c = config.c();
    let a_cap = rhos.iter().map(|r| (-c * r).ln_1p()).sum::<f64>().exp();
    Ok(ReliabilityReport {
        config: *config,
        trials,
        hallucination: RateEstimate::new(total.bad, trials),
        abstention: RateEstimate::new(total.abstain, trials),
        success: RateEstimate::new(total.good, trials),
        h_cap: config.budget as f64 * config.eps_fp,
        a_cap,
        sum_rho: rhos.iter().sum(),
        accept_hist: total.hist,
        schedule_clamped: clamped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareConfig {
    pub gamma: f64,
    pub horizon: u32,
    pub alpha: f64,
    pub beta: f64,
    pub eps_fp: f64,
    pub eps_fn: f64,
    pub schedules: Vec<Schedule>,
    pub q_grid: Vec<u64>,
    pub trials: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub schedule: String,
    pub q: u64,
    pub report: ReliabilityReport,
    pub meets_alpha_beta: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crossover {
    pub schedule: String,
    /// Smallest grid budget meeting both targets; `None` if none does.
    pub q: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
    pub crossovers: Vec<Crossover>,
}

pub fn schedule_label(s: &Schedule) -> String {
    match *s {
        Schedule::Constant { .. } => "constant".into(),
        Schedule::Polynomial { p, .. } => format!("polynomial_p{p}"),
        Schedule::Geometric { r, .. } => format!("geometric_r{r}"),
    }
}

/// Measures every (schedule, q) cell. Cell `i` (schedule-major) is seeded
/// with `shard_seed(seed, i)`.
pub fn compare_schedules(cfg: &CompareConfig, seed: u64) -> Result<ComparisonTable> {
    if !(cfg.gamma > 0.0 && cfg.gamma <= 1.0) {
        return Err(Error::config(format!("γ = {} outside (0, 1]", cfg.gamma)));
    }
    let rho1 = (f64::from(cfg.horizon) * cfg.gamma.ln()).exp();
    for s in &cfg.schedules {
        if (s.rho1() - rho1).abs() > 1e-9 * rho1.max(1e-300) {
            return Err(Error::config(format!(
                "{} schedule has ρ_1 = {}, expected γ^T = {rho1}",
                s.name(),
                s.rho1()
            )));
        }
    }
    let mut rows = Vec::new();
    let mut crossovers = Vec::new();
    let mut cell = 0u64;
    for s in &cfg.schedules {
        let label = schedule_label(s);
        let mut first = None;
        for &q in &cfg.q_grid {
            let pc = PlannerConfig {
                budget: q,
                eps_fp: cfg.eps_fp,
                eps_fn: cfg.eps_fn,
                schedule: *s,
            };
            let report = estimate_reliability(&pc, cfg.trials, shard_seed(seed, cell))?;
            cell += 1;
            let meets = report.meets(cfg.alpha, cfg.beta);
            if meets && first.is_none() {
                first = Some(q);
            }
            rows.push(ComparisonRow {
                schedule: label.clone(),
                q,
                report,
                meets_alpha_beta: meets,
            });
        }
        crossovers.push(Crossover {
            schedule: label,
            q: first,
        });
    }
    Ok(ComparisonTable { rows, crossovers })
}

impl ComparisonTable {
    /// CSV with columns `schedule,q,H_hat,A_hat,S_hat,H_cap,A_cap,meets_alpha_beta`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "schedule",
            "q",
            "H_hat",
            "A_hat",
            "S_hat",
            "H_cap",
            "A_cap",
            "meets_alpha_beta",
        ])?;
        for r in &self.rows {
            let rep = &r.report;
            wr.write_record([
                r.schedule.clone(),
                r.q.to_string(),
                rep.hallucination.rate.to_string(),
                rep.abstention.rate.to_string(),
                rep.success.rate.to_string(),
                rep.h_cap.to_string(),
                rep.a_cap.to_string(),
                r.meets_alpha_beta.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Index-level backend: a library of `library` plans of which `valid` are
/// valid; each round proposes uniformly among plans not yet rejected, and a
/// rejected plan is never proposed again. This is one mechanism whose
/// conditional valid mass grows with the round; it is an illustration, not a
/// schedule derived from the theory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EliminationConfig {
    pub library: u64,
    pub valid: u64,
    pub budget: u64,
    pub eps_fp: f64,
    pub eps_fn: f64,
}

pub fn run_elimination(cfg: &EliminationConfig, rng: &mut Rng) -> Result<PlannerOutcome> {
    if cfg.valid > cfg.library || cfg.library == 0 || cfg.budget == 0 {
        return Err(Error::config(
            "elimination needs 0 < library, valid <= library, budget >= 1",
        ));
    }
    let (mut total, mut good) = (cfg.library, cfg.valid);
    for j in 1..=cfg.budget {
        if total == 0 {
            break;
        }
        let valid = rng.random_range(0..total) < good;
        let p_acc = if valid { 1.0 - cfg.eps_fn } else { cfg.eps_fp };
        if rng.random::<f64>() < p_acc {
            return Ok(PlannerOutcome::Accepted { round: j, valid });
        }
        total -= 1;
        if valid {
            good -= 1;
        }
    }
    Ok(PlannerOutcome::Abstained)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;

    fn cfg(budget: u64, eps_fp: f64, eps_fn: f64, schedule: Schedule) -> PlannerConfig {
        PlannerConfig {
            budget,
            eps_fp,
            eps_fn,
            schedule,
        }
    }

    #[test]
    fn perfect_planner_accepts_first() {
        let c = cfg(5, 0.0, 0.0, Schedule::Constant { rho: 1.0 });
        let mut rng = rng_from_seed(0);
        for _ in 0..100 {
            assert_eq!(
                run_planner(&c, &mut rng).unwrap(),
                PlannerOutcome::Accepted { round: 1, valid: true }
            );
        }
    }

    #[test]
    fn no_false_accepts_means_no_hallucination() {
        let c = cfg(7, 0.0, 0.3, Schedule::Constant { rho: 0.2 });
        let r = estimate_reliability(&c, 50_000, 1).unwrap();
        assert_eq!(r.hallucination.count, 0);
        let c = cfg(7, 0.0, 0.3, Schedule::Constant { rho: 0.0 });
        let r = estimate_reliability(&c, 10_000, 1).unwrap();
        assert_eq!(r.abstention.count, 10_000);
    }

    #[test]
    fn abstention_matches_product() {
        let c = cfg(10, 0.0, 0.0, Schedule::Constant { rho: 0.5 });
        let r = estimate_reliability(&c, 400_000, 2).unwrap();
        let a = 0.5f64.powi(10);
        assert!((r.a_cap - a).abs() < 1e-15);
        assert!((r.abstention.rate - a).abs() < 3.0 * (a * (1.0 - a) / 4e5).sqrt());
    }

    #[test]
    fn hallucination_with_no_valid_mass() {
        let c = cfg(5, 0.01, 0.0, Schedule::Constant { rho: 0.0 });
        let r = estimate_reliability(&c, 200_000, 3).unwrap();
        let h = 1.0 - 0.99f64.powi(5);
        assert!((h - 0.0490).abs() < 1e-4);
        assert!((r.hallucination.rate - h).abs() < 3.0 * (h * (1.0 - h) / 2e5).sqrt());
        assert!((r.h_cap - 0.05).abs() < 1e-15);
        assert!(r.hallucination.rate <= r.h_cap + 3.0 * r.h_se());
    }

    #[test]
    fn histogram_and_accounting() {
        let c = cfg(6, 0.05, 0.2, Schedule::Geometric { rho1: 0.1, r: 2.0 });
        let r = estimate_reliability(&c, 30_000, 4).unwrap();
        assert_eq!(r.accept_hist.len(), 6);
        let acc: u64 = r.accept_hist.iter().sum();
        assert_eq!(acc + r.abstention.count, 30_000);
        assert_eq!(r.hallucination.count + r.abstention.count + r.success.count, 30_000);
        assert!((r.hallucination.rate + r.abstention.rate + r.success.rate - 1.0).abs() < 1e-15);
    }

    #[test]
    fn thread_count_independent() {
        let c = cfg(9, 0.01, 0.1, Schedule::Polynomial { rho1: 0.05, p: 1.0 });
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = pool.install(|| estimate_reliability(&c, 20_000, 9).unwrap());
        assert_eq!(a, estimate_reliability(&c, 20_000, 9).unwrap());
    }

    fn crossover_cfg(schedules: Vec<Schedule>) -> CompareConfig {
        CompareConfig {
            gamma: 0.8,
            horizon: 20,
            alpha: 0.1,
            beta: 0.05,
            eps_fp: 0.001,
            eps_fn: 0.0,
            schedules,
            q_grid: (1..=20).collect(),
            trials: 20_000,
        }
    }

    #[test]
    fn geometric_crossover_near_nine() {
        let rho1 = 0.8f64.powi(20);
        let t = compare_schedules(
            &crossover_cfg(vec![
                Schedule::Geometric { rho1, r: 2.0 },
                Schedule::Polynomial { rho1, p: 1.0 },
            ]),
            11,
        )
        .unwrap();
        let geo = t.crossovers[0].q.unwrap();
        assert!((8..=10).contains(&geo), "{geo}");
        assert_eq!(t.crossovers[1].q, None);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("schedule,q,H_hat,A_hat,S_hat,H_cap,A_cap,meets_alpha_beta\n"));
        assert_eq!(text.lines().count(), 41);
    }

    #[test]
    fn closed_window_constant_schedule() {
        let mut c = crossover_cfg(vec![Schedule::Constant { rho: 0.8f64.powi(40) }]);
        c.horizon = 40;
        c.eps_fp = 0.002;
        c.q_grid = vec![1, 10, 25, 50];
        let t = compare_schedules(&c, 3).unwrap();
        assert_eq!(t.crossovers[0].q, None);
        assert!(t.rows.iter().all(|r| !r.meets_alpha_beta));
    }

    #[test]
    fn unit_rho_crosses_at_one() {
        let mut c = crossover_cfg(vec![
            Schedule::Constant { rho: 1.0 },
            Schedule::Geometric { rho1: 1.0, r: 2.0 },
            Schedule::Polynomial { rho1: 1.0, p: 2.0 },
        ]);
        c.gamma = 1.0;
        c.trials = 2000;
        c.q_grid = vec![1, 2];
        let t = compare_schedules(&c, 0).unwrap();
        assert!(t.crossovers.iter().all(|x| x.q == Some(1)));
    }

    #[test]
    fn rejects_mismatched_rho1() {
        let c = crossover_cfg(vec![Schedule::Constant { rho: 0.5 }]);
        assert!(matches!(compare_schedules(&c, 0), Err(Error::Config(_))));
    }

    #[test]
    fn elimination_raises_success() {
        let e = EliminationConfig {
            library: 20,
            valid: 1,
            budget: 20,
            eps_fp: 0.0,
            eps_fn: 0.0,
        };
        let mut rng = rng_from_seed(5);
        for _ in 0..200 {
            // Exhaustive search with a perfect verifier always finds the plan.
            assert!(matches!(
                run_elimination(&e, &mut rng).unwrap(),
                PlannerOutcome::Accepted { valid: true, .. }
            ));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn lemma_caps_hold(
            q in 1u64..30, eps_fp in 0.0f64..0.05, eps_fn in 0.0f64..0.5,
            rho1 in 0.0f64..0.3, kind in 0u8..3, seed in 0u64..1000,
        ) {
            let schedule = match kind {
                0 => Schedule::Constant { rho: rho1 },
                1 => Schedule::Polynomial { rho1, p: 1.0 },
                _ => Schedule::Geometric { rho1, r: 1.5 },
            };
            let r = estimate_reliability(&cfg(q, eps_fp, eps_fn, schedule), 5000, seed).unwrap();
            prop_assert_eq!(r.hallucination.count + r.abstention.count + r.success.count, 5000);
            prop_assert!(r.hallucination.rate <= r.h_cap + 3.0 * r.h_se().max(1.0 / 5000.0));
            prop_assert!(r.abstention.rate <= r.a_cap + 3.0 * r.a_se().max(1.0 / 5000.0));
        }
    }
}
