use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{ceil_robust, floor_robust, BoundResult};
use crate::error::{Error, Result};

/// Conditional valid-mass schedule `ρ_j`, `j = 1, 2, …`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Schedule {
    Constant {
        rho: f64,
    },
    /// `ρ_1 · j^p`
    Polynomial {
        rho1: f64,
        p: f64,
    },
    /// `ρ_1 · r^{j−1}`
    Geometric {
        rho1: f64,
        r: f64,
    },
}

impl Schedule {
    pub fn name(&self) -> &'static str {
        match self {
            Schedule::Constant { .. } => "constant",
            Schedule::Polynomial { .. } => "polynomial",
            Schedule::Geometric { .. } => "geometric",
        }
    }

    pub fn rho1(&self) -> f64 {
        match *self {
            Schedule::Constant { rho } => rho,
            Schedule::Polynomial { rho1, .. } | Schedule::Geometric { rho1, .. } => rho1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rho1 = self.rho1();
        if !(0.0..=1.0).contains(&rho1) {
            return Err(Error::domain(format!(
                "{} schedule: ρ_1 = {rho1} outside [0, 1]",
                self.name()
            )));
        }
        match *self {
            Schedule::Polynomial { p, .. } if !(p >= 0.0 && p.is_finite()) => Err(Error::domain(format!(
                "polynomial exponent must be finite and >= 0, got {p}"
            ))),
            Schedule::Geometric { r, .. } if !(r > 0.0 && r.is_finite()) => Err(Error::domain(format!(
                "geometric ratio must be finite and positive, got {r}"
            ))),
            _ => Ok(()),
        }
    }

    /// Unclamped formula value at round `j ≥ 1`; powers go through logs.
    pub fn raw(&self, j: u64) -> f64 {
        let j = j.max(1) as f64;
        match *self {
            Schedule::Constant { rho } => rho,
            Schedule::Polynomial { rho1, p } => rho1 * (p * j.ln()).exp(),
            Schedule::Geometric { rho1, r } => {
                if rho1 == 0.0 {
                    0.0
                } else {
                    (rho1.ln() + (j - 1.0) * r.ln()).exp()
                }
            }
        }
    }

    /// `ρ_j` clamped to `[0, 1]`, with a flag set when clamping applied.
    pub fn rho(&self, j: u64) -> (f64, bool) {
        let v = self.raw(j);
        if v > 1.0 {
            (1.0, true)
        } else {
            (v.max(0.0), false)
        }
    }

    /// `ρ_1..ρ_q` after clamping, and whether any value was clamped.
    pub fn values(&self, q: u64) -> (Vec<f64>, bool) {
        let mut clamped = false;
        let v = (1..=q)
            .map(|j| {
                let (r, c) = self.rho(j);
                clamped |= c;
                r
            })
            .collect();
        (v, clamped)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonBound {
    /// `Π γ_t`
    pub success_cap: f64,
    /// Lower bound `1 − Π γ_t` on the rollout hallucination probability.
    pub hallucination: BoundResult,
}

pub fn horizon_success_bound(gammas: &[f64]) -> Result<HorizonBound> {
    let mut log = 0.0;
    for (t, &g) in gammas.iter().enumerate() {
        if !(g > 0.0 && g <= 1.0) {
            return Err(Error::domain(format!("progress cap γ_{} = {g} outside (0, 1]", t + 1)));
        }
        log += g.ln();
    }
    let cap = log.exp();
    Ok(HorizonBound {
        success_cap: cap,
        hallucination: BoundResult::lower(-log.exp_m1(), json!({ "gammas": gammas })),
    })
}

fn check_rate(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::domain(format!("{name} = {v} outside [0, 1]")));
    }
    Ok(())
}

/// Query budgets certified `(α, β)`-reliable for a constant valid mass `ρ`.
/// `None` stands for an unbounded value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReliabilityWindow {
    pub q_min: Option<u64>,
    pub q_max: Option<u64>,
    pub feasible: bool,
}

pub fn reliability_window(alpha: f64, beta: f64, eps_fp: f64, eps_fn: f64, rho: f64) -> Result<ReliabilityWindow> {
    for (n, v) in [
        ("α", alpha),
        ("β", beta),
        ("ε_fp", eps_fp),
        ("ε_fn", eps_fn),
        ("ρ", rho),
    ] {
        check_rate(n, v)?;
    }
    let cr = (1.0 - eps_fn) * rho;
    let q_min = if cr >= 1.0 {
        Some(1)
    } else if beta == 0.0 || cr == 0.0 {
        None
    } else {
        Some(ceil_robust(beta.ln() / (-cr).ln_1p()).max(1))
    };
    let q_max = if eps_fp == 0.0 {
        None
    } else {
        Some(floor_robust(alpha / eps_fp))
    };
    let feasible = match (q_min, q_max) {
        (None, _) => false,
        (Some(_), None) => true,
        (Some(lo), Some(hi)) => lo <= hi,
    };
    Ok(ReliabilityWindow { q_min, q_max, feasible })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstentionBound {
    /// `Π (1 − cρ_j)`
    pub product: f64,
    /// `exp(−c Σ ρ_j)`
    pub exponential: f64,
    pub cumulative_mass: f64,
    /// `(1/c) ln(1/β)`, when a target β was given.
    pub required_mass: Option<f64>,
}

pub fn abstention_bound(rhos: &[f64], c: f64, beta: Option<f64>) -> Result<AbstentionBound> {
    check_rate("c", c)?;
    let mut log_prod = 0.0;
    let mut mass = 0.0;
    for (j, &r) in rhos.iter().enumerate() {
        check_rate(&format!("ρ_{}", j + 1), r)?;
        log_prod += (-c * r).ln_1p();
        mass += r;
    }
    let required_mass = match beta {
        Some(b) => {
            check_rate("β", b)?;
            Some(if c == 0.0 { f64::INFINITY } else { -b.ln() / c })
        }
        None => None,
    };
    Ok(AbstentionBound {
        product: log_prod.exp(),
        exponential: (-c * mass).exp(),
        cumulative_mass: mass,
        required_mass,
    })
}

/// Sufficient conditions for a geometric schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricCheck {
    /// `q ε_fp ≤ α`
    pub precision_ok: bool,
    /// `ρ_1 (r^q − 1)/(r − 1)`
    pub mass: f64,
    pub required_mass: f64,
    pub mass_ok: bool,
    pub sufficient: bool,
    /// Smallest budget meeting the mass condition.
    pub q_star: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplificationReport {
    pub schedule: Schedule,
    pub q: u64,
    /// `Σ_{j ≤ q} ρ_j` after clamping.
    pub sum_rho: f64,
    pub clamped: bool,
    /// `Σ ρ_j ≥ 1 − α − β`
    pub necessary_met: bool,
    /// Real-valued budget below which a polynomial schedule cannot succeed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub polynomial_requirement: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub polynomial_q_min: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub geometric: Option<GeometricCheck>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmplificationInputs {
    pub schedule: Schedule,
    pub gamma: f64,
    pub horizon: u32,
    pub alpha: f64,
    pub beta: f64,
    /// Verifier acceptance rate on valid plans, `1 − ε_fn`.
    pub c: f64,
    pub eps_fp: f64,
    pub q: u64,
}

pub fn amplification_check(inp: &AmplificationInputs) -> Result<AmplificationReport> {
    let s = inp.schedule;
    s.validate()?;
    for (n, v) in [("α", inp.alpha), ("β", inp.beta), ("c", inp.c), ("ε_fp", inp.eps_fp)] {
        check_rate(n, v)?;
    }
    if inp.alpha + inp.beta > 1.0 {
        return Err(Error::domain("targets need α + β <= 1"));
    }
    if !(inp.gamma > 0.0 && inp.gamma <= 1.0) {
        return Err(Error::domain(format!("γ = {} outside (0, 1]", inp.gamma)));
    }
    let (rhos, clamped) = s.values(inp.q);
    let sum_rho: f64 = rhos.iter().sum();
    let slack = 1.0 - inp.alpha - inp.beta;
    let gamma_t = (f64::from(inp.horizon) * inp.gamma.ln()).exp();
    let mut report = AmplificationReport {
        schedule: s,
        q: inp.q,
        sum_rho,
        clamped,
        necessary_met: sum_rho >= slack,
        polynomial_requirement: None,
        polynomial_q_min: None,
        geometric: None,
        warnings: Vec::new(),
    };
    if clamped {
        report.warnings.push("schedule exceeded 1 and was clamped".into());
    }
    match s {
        Schedule::Polynomial { rho1, p } => {
            if rho1 > gamma_t * (1.0 + 1e-12) {
                report.warnings.push(format!(
                    "ρ_1 = {rho1} exceeds γ^T = {gamma_t}; requirement assumes ρ_1 <= γ^T"
                ));
            }
            let req = ((1.0 + (p + 1.0) * slack / gamma_t).ln() / (p + 1.0)).exp() - 1.0;
            report.polynomial_requirement = Some(req);
            report.polynomial_q_min = Some(ceil_robust(req));
        }
        Schedule::Geometric { rho1, r } => {
            if r <= 1.0 {
                return Err(Error::domain(format!(
                    "geometric amplification needs ratio r > 1, got {r}; use a constant or polynomial schedule"
                )));
            }
            let mass_at = |q: u64| rho1 * (q as f64 * r.ln()).exp_m1() / (r - 1.0);
            let required_mass = if inp.c == 0.0 {
                f64::INFINITY
            } else {
                -inp.beta.ln() / inp.c
            };
            let mass = mass_at(inp.q);
            let mass_ok = mass >= required_mass;
            // Smallest q with the mass condition; the mass grows at least
            // linearly in q, so the search terminates whenever ρ_1 > 0.
            let q_star = if rho1 == 0.0 || !required_mass.is_finite() {
                u64::MAX
            } else {
                let mut q = 1;
                while mass_at(q) < required_mass {
                    q += 1;
                }
                q
            };
            let precision_ok = inp.q as f64 * inp.eps_fp <= inp.alpha;
            report.geometric = Some(GeometricCheck {
                precision_ok,
                mass,
                required_mass,
                mass_ok,
                sufficient: precision_ok && mass_ok,
                q_star,
            });
        }
        Schedule::Constant { .. } => {}
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn horizon_examples() {
        let h = horizon_success_bound(&[1.0; 5]).unwrap();
        assert_eq!(h.success_cap, 1.0);
        assert_eq!(h.hallucination.raw, 0.0);
        assert!(h.hallucination.vacuous);
        let h = horizon_success_bound(&[0.9; 10]).unwrap();
        assert!((h.success_cap - 0.9f64.powi(10)).abs() < 1e-15);
        assert!((h.success_cap - 0.348678).abs() < 1e-6);
        assert!((h.hallucination.raw - 0.651322).abs() < 1e-6);
        // T = 200 stays representable.
        let h = horizon_success_bound(&[0.8; 200]).unwrap();
        assert!(h.success_cap > 0.0 && h.success_cap < 1e-19);
        assert!(horizon_success_bound(&[0.5, 0.0]).is_err());
        let mut prev = 1.0;
        for t in 1..50 {
            let c = horizon_success_bound(&vec![0.95; t]).unwrap().success_cap;
            assert!(c <= prev);
            prev = c;
        }
    }

    #[test]
    fn window_examples() {
        let w = reliability_window(0.1, 0.05, 0.002, 0.1, 0.1).unwrap();
        assert_eq!(
            w,
            ReliabilityWindow {
                q_min: Some(32),
                q_max: Some(50),
                feasible: true
            }
        );
        let w = reliability_window(0.1, 0.05, 0.0, 0.1, 0.1).unwrap();
        assert_eq!((w.q_min, w.q_max, w.feasible), (Some(32), None, true));
        let w = reliability_window(0.1, 0.05, 0.002, 0.0, 0.8f64.powi(40)).unwrap();
        assert!(w.q_min.unwrap() > 1000 && !w.feasible);
        assert_eq!(reliability_window(0.1, 0.05, 0.002, 0.0, 1.0).unwrap().q_min, Some(1));
        assert_eq!(reliability_window(0.1, 0.0, 0.002, 0.1, 0.5).unwrap().q_min, None);
        assert!(reliability_window(0.1, 0.0, 0.002, 0.0, 1.0).unwrap().feasible);
    }

    #[test]
    fn abstention_examples() {
        let a = abstention_bound(&[0.0; 4], 0.7, None).unwrap();
        assert_eq!((a.product, a.exponential), (1.0, 1.0));
        let a = abstention_bound(&[0.5], 1.0, Some(0.05)).unwrap();
        assert!((a.product - 0.5).abs() < 1e-15);
        assert!((a.exponential - (-0.5f64).exp()).abs() < 1e-15);
        assert!((a.required_mass.unwrap() - 20f64.ln()).abs() < 1e-15);
    }

    fn geo_inputs(q: u64) -> AmplificationInputs {
        AmplificationInputs {
            schedule: Schedule::Geometric {
                rho1: 0.8f64.powi(20),
                r: 2.0,
            },
            gamma: 0.8,
            horizon: 20,
            alpha: 0.1,
            beta: 0.05,
            c: 1.0,
            eps_fp: 0.001,
            q,
        }
    }

    #[test]
    fn geometric_example() {
        let rep = amplification_check(&geo_inputs(100)).unwrap();
        let g = rep.geometric.unwrap();
        assert_eq!(g.q_star, 9);
        assert!(g.precision_ok && g.sufficient);
        let rho1 = 0.8f64.powi(20);
        assert!(rho1 * 255.0 < 20f64.ln() && rho1 * 511.0 >= 20f64.ln());
        assert!(rep.clamped);
        let at8 = amplification_check(&geo_inputs(8)).unwrap().geometric.unwrap();
        assert!(!at8.mass_ok);
        let at9 = amplification_check(&geo_inputs(9)).unwrap().geometric.unwrap();
        assert!(at9.mass_ok && at9.sufficient);
        let mut bad = geo_inputs(9);
        bad.schedule = Schedule::Geometric { rho1, r: 1.0 };
        assert!(matches!(amplification_check(&bad), Err(Error::Domain(_))));
    }

    #[test]
    fn polynomial_requirement() {
        let mut inp = geo_inputs(20);
        inp.schedule = Schedule::Polynomial {
            rho1: 0.8f64.powi(20),
            p: 1.0,
        };
        let rep = amplification_check(&inp).unwrap();
        let req = rep.polynomial_requirement.unwrap();
        assert!((req - ((1.0 + 2.0 * 0.85 / 0.8f64.powi(20)).sqrt() - 1.0)).abs() < 1e-10);
        assert!((req - 11.18).abs() < 0.01, "{req}");
        assert_eq!(rep.polynomial_q_min, Some(12));
        inp.horizon = 60;
        inp.schedule = Schedule::Polynomial {
            rho1: 0.8f64.powi(60),
            p: 1.0,
        };
        let rep = amplification_check(&inp).unwrap();
        assert_eq!(rep.polynomial_q_min, Some(1053));
        assert!(rep.warnings.is_empty());
    }

    #[test]
    fn constant_schedule_sum() {
        let mut inp = geo_inputs(37);
        inp.schedule = Schedule::Constant { rho: 0.02 };
        let rep = amplification_check(&inp).unwrap();
        assert!((rep.sum_rho - 37.0 * 0.02).abs() < 1e-12);
        assert!(rep.geometric.is_none() && rep.polynomial_requirement.is_none());
    }

    #[test]
    fn schedules_clamp_and_stay_monotone() {
        let s = Schedule::Geometric { rho1: 0.1, r: 3.0 };
        let (v, clamped) = s.values(10);
        assert!(clamped);
        assert!(v.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(*v.last().unwrap(), 1.0);
        let p = Schedule::Polynomial { rho1: 0.01, p: 2.0 };
        assert!((p.raw(3) - 0.09).abs() < 1e-15);
        assert!(Schedule::Constant { rho: 1.5 }.validate().is_err());
    }

    proptest! {
        #[test]
        fn product_below_exponential(rhos in proptest::collection::vec(0.0f64..=1.0, 1..40), c in 0.0f64..=1.0) {
            let a = abstention_bound(&rhos, c, None).unwrap();
            prop_assert!(a.product <= a.exponential + 1e-15);
        }

        #[test]
        fn geometric_branch_agrees_with_abstention(
            rho1 in 1e-4f64..0.05, r in 1.05f64..1.6, q in 1u64..12, c in 0.3f64..=1.0, beta in 0.01f64..0.5,
        ) {
            let inp = AmplificationInputs {
                schedule: Schedule::Geometric { rho1, r },
                gamma: 0.9, horizon: 10, alpha: 0.1, beta, c, eps_fp: 0.0, q,
            };
            let g = amplification_check(&inp).unwrap().geometric.unwrap();
            let raw: Vec<f64> = (1..=q).map(|j| inp.schedule.raw(j)).collect();
            prop_assume!(raw.iter().all(|&v| v <= 1.0));
            let a = abstention_bound(&raw, c, Some(beta)).unwrap();
            let gap = a.exponential - beta;
            // Skip draws within rounding of the boundary.
            prop_assume!(gap.abs() > 1e-12);
            prop_assert_eq!(g.mass_ok, gap <= 0.0);
        }
    }
}
