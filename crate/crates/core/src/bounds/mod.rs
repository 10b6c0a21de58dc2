//! Closed-form evaluation of the hallucination lower bounds and planning
//! certificates. Every function here is a pure function of its inputs.

pub mod planning;
pub mod tube;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::special::{chi_tail, std_normal_cdf, std_normal_pdf, std_normal_quantile};

pub use planning::{
    abstention_bound, amplification_check, horizon_success_bound, reliability_window, AbstentionBound,
    AmplificationInputs, AmplificationReport, GeometricCheck, HorizonBound, ReliabilityWindow, Schedule,
};
pub use tube::{loglog_fit, tube_volume_mc, AxisBox, GraspTubeRegion, Region, TubeFit, TubeVolume};

/// Value of a lower bound on a probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub raw: f64,
    /// `raw` clamped to `[0, 1]`.
    pub clamped: f64,
    /// The bound carries no information (`raw ≤ 0`).
    pub vacuous: bool,
    pub inputs: serde_json::Value,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl BoundResult {
    pub fn lower(raw: f64, inputs: serde_json::Value) -> Self {
        Self {
            raw,
            clamped: raw.clamp(0.0, 1.0),
            vacuous: !(raw > 0.0),
            inputs,
            warnings: Vec::new(),
        }
    }
}

/// Inputs of the isoperimetric bound. `eps = gap_halfwidth / lipschitz`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsoBoundInputs {
    pub masses: Vec<f64>,
    pub gap_halfwidth: f64,
    pub lipschitz: f64,
    pub radius: f64,
    pub latent_dim: usize,
}

impl IsoBoundInputs {
    pub fn eps(&self) -> Result<f64> {
        if !(self.gap_halfwidth >= 0.0 && self.lipschitz > 0.0) {
            return Err(Error::domain(format!(
                "need W >= 0 and L > 0 (got W = {}, L = {})",
                self.gap_halfwidth, self.lipschitz
            )));
        }
        let e = self.gap_halfwidth / self.lipschitz;
        if !e.is_finite() {
            return Err(Error::domain("halo width W/L is not finite"));
        }
        Ok(e)
    }

    pub fn tail(&self) -> Result<f64> {
        if self.latent_dim == 0 {
            return Err(Error::domain("latent dimension must be at least 1"));
        }
        chi_tail(self.radius, self.latent_dim)
    }
}

/// Validates masses; returns the indices of the informative ones (0 < p < 1)
/// and warnings for the endpoint masses, which contribute nothing.
fn check_masses(masses: &[f64]) -> Result<(Vec<usize>, Vec<String>)> {
    let mut keep = Vec::new();
    let mut warnings = Vec::new();
    for (i, &p) in masses.iter().enumerate() {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::domain(format!("mode mass p_{} = {p} is outside [0, 1]", i + 1)));
        }
        if p == 0.0 || p == 1.0 {
            warnings.push(format!("mode mass p_{} = {p} contributes no halo term", i + 1));
        } else {
            keep.push(i);
        }
    }
    let total: f64 = masses.iter().sum();
    if total > 1.0 + 1e-12 {
        return Err(Error::domain(format!("mode masses sum to {total} > 1")));
    }
    Ok((keep, warnings))
}

/// `Σ_i [Φ(Φ⁻¹(p_i) + ε) − p_i] − q` for explicit `ε` and tail mass `q`.
pub fn iso_bound_raw(masses: &[f64], eps: f64, tail: f64) -> Result<BoundResult> {
    let (keep, warnings) = check_masses(masses)?;
    let mut sum = 0.0;
    for i in keep {
        let p = masses[i];
        sum += std_normal_cdf(std_normal_quantile(p)? + eps) - p;
    }
    let mut r = BoundResult::lower(sum - tail, json!({"masses": masses, "eps": eps, "tail": tail}));
    r.warnings = warnings;
    Ok(r)
}

pub fn iso_lower_bound(inputs: &IsoBoundInputs) -> Result<BoundResult> {
    let mut r = iso_bound_raw(&inputs.masses, inputs.eps()?, inputs.tail()?)?;
    r.inputs = serde_json::to_value(inputs)?;
    Ok(r)
}

/// `ε Σ φ(Φ⁻¹(p_i)) − q − ε²/(2√(2πe))`.
///
/// `Φ(x + ε) − Φ(x) ≥ εφ(x)` whenever `x ≤ 0` (φ is increasing there), and
/// the Taylor remainder is at most `ε² sup|φ'|/2 = ε²/(2√(2πe))` otherwise.
/// Masses sum to at most 1, so at most one `p_i` exceeds 1/2 and a single
/// remainder term covers all modes.
pub fn iso_linearized_raw(masses: &[f64], eps: f64, tail: f64) -> Result<BoundResult> {
    let (keep, warnings) = check_masses(masses)?;
    let mut sum = 0.0;
    for i in keep {
        sum += std_normal_pdf(std_normal_quantile(masses[i])?);
    }
    let remainder = eps * eps / (2.0 * (2.0 * std::f64::consts::PI * std::f64::consts::E).sqrt());
    let mut r = BoundResult::lower(
        eps * sum - tail - remainder,
        json!({"masses": masses, "eps": eps, "tail": tail}),
    );
    r.warnings = warnings;
    Ok(r)
}

pub fn iso_bound_linearized(inputs: &IsoBoundInputs) -> Result<BoundResult> {
    let mut r = iso_linearized_raw(&inputs.masses, inputs.eps()?, inputs.tail()?)?;
    r.inputs = serde_json::to_value(inputs)?;
    Ok(r)
}

/// One radius of a Lipschitz profile: `L_R` and the in-ball masses at `R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusEntry {
    pub radius: f64,
    pub lipschitz: f64,
    pub masses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupBound {
    pub best: BoundResult,
    pub radius: f64,
}

/// Best isoperimetric bound over a profile of radii.
pub fn iso_bound_sup_over_r(profile: &[RadiusEntry], gap_halfwidth: f64, latent_dim: usize) -> Result<SupBound> {
    let mut best: Option<SupBound> = None;
    for e in profile {
        let r = iso_lower_bound(&IsoBoundInputs {
            masses: e.masses.clone(),
            gap_halfwidth,
            lipschitz: e.lipschitz,
            radius: e.radius,
            latent_dim,
        })?;
        if best.as_ref().is_none_or(|b| r.raw > b.best.raw) {
            best = Some(SupBound {
                best: r,
                radius: e.radius,
            });
        }
    }
    best.ok_or_else(|| Error::domain("empty Lipschitz profile"))
}

/// Tube-regime inputs shared by the precision bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionInputs {
    pub tube_constant: f64,
    pub delta: f64,
    pub ambient_dim: usize,
    pub manifold_dim: usize,
}

impl PrecisionInputs {
    fn check(&self) -> Result<f64> {
        if self.manifold_dim >= self.ambient_dim {
            return Err(Error::domain(format!(
                "manifold dimension {} must be below ambient dimension {}",
                self.manifold_dim, self.ambient_dim
            )));
        }
        if !(self.tube_constant > 0.0 && self.delta > 0.0) {
            return Err(Error::domain("tube constant and δ must be positive"));
        }
        Ok((self.ambient_dim - self.manifold_dim) as f64)
    }

    /// ln(C_M δ^{d−k}).
    fn log_tube(&self) -> Result<f64> {
        let codim = self.check()?;
        Ok(self.tube_constant.ln() + codim * self.delta.ln())
    }
}

/// `1 − C_M δ^{d−k} · cap`.
pub fn precision_lower_bound(p: &PrecisionInputs, density_cap: f64) -> Result<BoundResult> {
    if !(density_cap > 0.0) {
        return Err(Error::domain("density cap must be positive"));
    }
    let raw = 1.0 - (p.log_tube()? + density_cap.ln()).exp();
    Ok(BoundResult::lower(
        raw,
        json!({"precision": p, "density_cap": density_cap}),
    ))
}

/// Density cap at which the precision bound equals `eta`.
pub fn required_density(p: &PrecisionInputs, eta: f64) -> Result<f64> {
    check_eta(eta)?;
    Ok(((1.0 - eta).ln() - p.log_tube()?).exp())
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::domain(format!("target η must lie in (0, 1), got {eta}")));
    }
    Ok(())
}

/// `1 − C_M δ^{d−k} N_δ ρ_max σ_*^{−d}`.
pub fn trilemma_bound(p: &PrecisionInputs, folds: f64, sigma_star: f64, rho_max: f64) -> Result<BoundResult> {
    if !(sigma_star > 0.0) {
        return Err(Error::domain("conditioning floor σ_* must be positive"));
    }
    if !(folds >= 1.0 && rho_max > 0.0) {
        return Err(Error::domain("need N_δ >= 1 and ρ_max > 0"));
    }
    let d = p.ambient_dim as f64;
    let raw = 1.0 - (p.log_tube()? + folds.ln() + rho_max.ln() - d * sigma_star.ln()).exp();
    Ok(BoundResult::lower(
        raw,
        json!({"precision": p, "folds": folds, "sigma_star": sigma_star, "rho_max": rho_max}),
    ))
}

/// Threshold `(1−η)/(C_M ρ_max) · δ^{−(d−k)}` that `N_δ σ_*^{−d}` must reach
/// for the trilemma bound to drop to `η`.
pub fn fold_collapse_requirement(p: &PrecisionInputs, rho_max: f64, eta: f64) -> Result<f64> {
    check_eta(eta)?;
    if !(rho_max > 0.0) {
        return Err(Error::domain("ρ_max must be positive"));
    }
    Ok(((1.0 - eta).ln() - p.log_tube()? - rho_max.ln()).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepRequirement {
    Steps(u64),
    /// The bracket is negative: no refinement is needed for the target.
    Vacuous,
}

/// Minimum number of refinement steps with per-step contraction floor `λ`:
/// `ceil([(d−k) ln(1/δ) + ln((1−η)/(C_M ρ_max))] / (d ln(1/λ)))`.
pub fn required_refinement_steps(p: &PrecisionInputs, eta: f64, lambda: f64, c_rho: f64) -> Result<StepRequirement> {
    check_eta(eta)?;
    let codim = p.check()?;
    if lambda == 1.0 {
        return Err(Error::domain(
            "λ = 1 gives no contraction; the step bound divides by ln(1/λ) = 0",
        ));
    }
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::domain(format!("λ must lie in (0, 1), got {lambda}")));
    }
    if !(c_rho > 0.0) {
        return Err(Error::domain("C_M·ρ_max must be positive"));
    }
    let bracket = codim * (1.0 / p.delta).ln() + ((1.0 - eta) / c_rho).ln();
    if bracket < 0.0 {
        return Ok(StepRequirement::Vacuous);
    }
    let k = bracket / (p.ambient_dim as f64 * (1.0 / lambda).ln());
    Ok(StepRequirement::Steps(ceil_robust(k)))
}

/// Ceiling that treats values within a relative 1e-12 of an integer as that integer.
pub fn ceil_robust(x: f64) -> u64 {
    let r = x.round();
    if (x - r).abs() <= 1e-12 * r.abs().max(1.0) {
        r.max(0.0) as u64
    } else {
        x.ceil().max(0.0) as u64
    }
}

/// Floor with the same snapping as [`ceil_robust`].
pub fn floor_robust(x: f64) -> u64 {
    let r = x.round();
    if (x - r).abs() <= 1e-12 * r.abs().max(1.0) {
        r.max(0.0) as u64
    } else {
        x.floor().max(0.0) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pin(d: f64) -> PrecisionInputs {
        PrecisionInputs {
            tube_constant: 1.0,
            delta: d,
            ambient_dim: 7,
            manifold_dim: 2,
        }
    }

    #[test]
    fn iso_examples() {
        let r = iso_bound_raw(&[0.4, 0.4], 0.0, 0.01).unwrap();
        assert!((r.raw + 0.01).abs() < 1e-15 && r.vacuous && r.clamped == 0.0);
        let r = iso_bound_raw(&[0.4, 0.4], 0.1, 0.01).unwrap();
        // Φ⁻¹(0.4) = −0.253347103135800, Φ(−0.153347103135800) = 0.439062...
        let x = -0.253_347_103_135_800_f64 + 0.1;
        let phi = 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2);
        assert!((r.raw - (2.0 * (phi - 0.4) - 0.01)).abs() < 1e-12);
        assert!((r.raw - 0.0681).abs() < 1e-3, "{}", r.raw);
        assert!(!r.vacuous);
    }

    #[test]
    fn iso_endpoint_masses_warn() {
        let r = iso_bound_raw(&[0.0, 1.0], 0.5, 0.0).unwrap();
        assert_eq!(r.raw, 0.0);
        assert_eq!(r.warnings.len(), 2);
        match iso_bound_raw(&[0.3, 1.2], 0.5, 0.0) {
            Err(Error::Domain(m)) => assert!(m.contains("p_2")),
            other => panic!("unexpected {other:?}"),
        }
        assert!(iso_bound_raw(&[0.6, 0.6], 0.1, 0.0).is_err());
    }

    #[test]
    fn iso_from_inputs_uses_chi_tail() {
        let inp = IsoBoundInputs {
            masses: vec![0.45, 0.45],
            gap_halfwidth: 0.25,
            lipschitz: 2.0,
            radius: 3.0,
            latent_dim: 2,
        };
        let r = iso_lower_bound(&inp).unwrap();
        let direct = iso_bound_raw(&inp.masses, 0.125, (-4.5f64).exp()).unwrap();
        assert!((r.raw - direct.raw).abs() < 1e-14);
        assert_eq!(r.inputs["lipschitz"], 2.0);
    }

    #[test]
    fn linearized_example() {
        let r = iso_linearized_raw(&[0.5], 0.01, 0.0).unwrap();
        let phi0 = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        let rem = 1e-4 / (2.0 * (2.0 * std::f64::consts::PI * std::f64::consts::E).sqrt());
        assert!((r.raw - (0.01 * phi0 - rem)).abs() < 1e-15);
        assert!((r.raw - 0.0039773).abs() < 1e-6);
        assert_eq!(iso_linearized_raw(&[0.3], 0.0, 0.02).unwrap().raw, -0.02);
    }

    #[test]
    fn sup_over_r() {
        let a = RadiusEntry {
            radius: 2.0,
            lipschitz: 1.0,
            masses: vec![0.4, 0.4],
        };
        let b = RadiusEntry {
            radius: 3.5,
            lipschitz: 1.5,
            masses: vec![0.45, 0.45],
        };
        let single = iso_bound_sup_over_r(std::slice::from_ref(&a), 0.25, 2).unwrap();
        let direct = iso_lower_bound(&IsoBoundInputs {
            masses: a.masses.clone(),
            gap_halfwidth: 0.25,
            lipschitz: 1.0,
            radius: 2.0,
            latent_dim: 2,
        })
        .unwrap();
        assert_eq!(single.best.raw, direct.raw);
        let both = iso_bound_sup_over_r(&[a.clone(), b.clone()], 0.25, 2).unwrap();
        let rb = iso_bound_sup_over_r(std::slice::from_ref(&b), 0.25, 2).unwrap();
        assert_eq!(both.best.raw, direct.raw.max(rb.best.raw));
        // A dominated entry never lowers the result.
        let weak = RadiusEntry {
            radius: 1.0,
            lipschitz: 100.0,
            masses: vec![0.1, 0.1],
        };
        let three = iso_bound_sup_over_r(&[a, b, weak], 0.25, 2).unwrap();
        assert!(three.best.raw >= both.best.raw);
        assert!(iso_bound_sup_over_r(&[], 0.25, 2).is_err());
    }

    #[test]
    fn precision_examples() {
        let p = PrecisionInputs {
            tube_constant: 1.0,
            delta: 0.1,
            ambient_dim: 7,
            manifold_dim: 2,
        };
        let r = precision_lower_bound(&p, 1.0).unwrap();
        assert!((r.raw - (1.0 - 1e-5)).abs() < 1e-15);
        assert!(precision_lower_bound(&p, 1e300).unwrap().vacuous);
        let cap = required_density(&p, 0.3).unwrap();
        assert!((precision_lower_bound(&p, cap).unwrap().raw - 0.3).abs() < 1e-12);
        let t = trilemma_bound(&p, 1.0, 0.5, 1.0).unwrap();
        assert!((t.raw - (1.0 - 1.28e-3)).abs() < 1e-14);
        assert_eq!(trilemma_bound(&p, 1.0, 1.0, 1.0).unwrap().raw, r.raw);
        assert!(trilemma_bound(&p, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn k_min_example() {
        let p = pin(0.01);
        assert_eq!(
            required_refinement_steps(&p, 0.5, 0.9, 1.0).unwrap(),
            StepRequirement::Steps(31)
        );
        let raw = (5.0 * 100f64.ln() + 0.5f64.ln()) / (7.0 * (1.0f64 / 0.9).ln());
        assert!((raw - 30.28).abs() < 0.01);
        let loose = PrecisionInputs { delta: 0.9, ..pin(0.9) };
        assert_eq!(
            required_refinement_steps(&loose, 0.99, 0.9, 1.0).unwrap(),
            StepRequirement::Vacuous
        );
        assert!(required_refinement_steps(&p, 0.5, 1.0, 1.0).is_err());
    }

    #[test]
    fn k_min_grows_logarithmically() {
        // K_min(δ/10) − K_min(δ) settles to (d−k) ln 10 / (d ln(1/λ)) ≈ 7.8 per decade.
        let per_decade = 5.0 * 10f64.ln() / (7.0 * (1.0f64 / 0.9).ln());
        let mut prev: Option<f64> = None;
        for e in 2..=6 {
            let k = match required_refinement_steps(&pin(10f64.powi(-e)), 0.5, 0.9, 1.0).unwrap() {
                StepRequirement::Steps(k) => k as f64,
                StepRequirement::Vacuous => panic!(),
            };
            if let Some(p) = prev {
                assert!((k - p - per_decade).abs() <= 1.0, "{k} {p}");
            }
            prev = Some(k);
        }
    }

    #[test]
    fn halo_term_turns_over_below_one_half() {
        // d/dp [Φ(Φ⁻¹(p) + ε) − p] = exp(−Φ⁻¹(p)ε − ε²/2) − 1 < 0 for Φ⁻¹(p) > −ε/2.
        let e = 1.0;
        let a = iso_bound_raw(&[0.45], e, 0.0).unwrap().raw;
        let b = iso_bound_raw(&[0.5], e, 0.0).unwrap().raw;
        assert!(b < a);
        let turn = std_normal_cdf(-e / 2.0);
        let below = iso_bound_raw(&[turn - 0.01], e, 0.0).unwrap().raw;
        let at = iso_bound_raw(&[turn], e, 0.0).unwrap().raw;
        assert!(at > below);
    }

    #[test]
    fn robust_rounding() {
        assert_eq!(floor_robust(0.1 / 0.002), 50);
        assert_eq!(floor_robust(49.999999999999993), 50);
        assert_eq!(floor_robust(49.9), 49);
        assert_eq!(ceil_robust(31.000000000000004), 31);
        assert_eq!(ceil_robust(30.28), 31);
    }

    proptest! {
        #[test]
        fn iso_monotone_in_eps(p in 0.01f64..0.49, e1 in 0.0f64..2.0, de in 1e-6f64..1.0) {
            let a = iso_bound_raw(&[p, p], e1, 0.01).unwrap().raw;
            let b = iso_bound_raw(&[p, p], e1 + de, 0.01).unwrap().raw;
            prop_assert!(b > a);
        }

        #[test]
        fn iso_monotone_in_mass(u in 0.0f64..1.0, du in 1e-6f64..0.01, other in 0.0f64..0.5, e in 0.0f64..1.0) {
            // The halo term grows in p only while Φ⁻¹(p) <= −ε/2.
            let top = std_normal_cdf(-e / 2.0);
            let p = 0.001 + u * (top - 0.002);
            let p2 = (p + du).min(top);
            let a = iso_bound_raw(&[p, other], e, 0.0).unwrap().raw;
            let b = iso_bound_raw(&[p2, other], e, 0.0).unwrap().raw;
            prop_assert!(b >= a - 1e-15);
        }

        #[test]
        fn linearized_below_exact(ps in proptest::collection::vec(0.001f64..0.999, 1..5), e in 0.0f64..0.05) {
            let total: f64 = ps.iter().sum();
            let ps: Vec<f64> = if total > 1.0 { ps.iter().map(|p| p / (total * 1.0001)).collect() } else { ps };
            let lin = iso_linearized_raw(&ps, e, 0.0).unwrap().raw;
            let exact = iso_bound_raw(&ps, e, 0.0).unwrap().raw;
            prop_assert!(lin <= exact + 1e-12, "{lin} > {exact}");
        }

        #[test]
        fn precision_algebra(
            c in 0.1f64..10.0, d_exp in -3.0f64..-0.5, k in 0usize..4, extra in 1usize..5,
            folds in 1.0f64..50.0, sigma in 0.1f64..2.0, rho in 0.01f64..10.0, eta in 0.01f64..0.99,
        ) {
            let p = PrecisionInputs { tube_constant: c, delta: 10f64.powf(d_exp), ambient_dim: k + extra, manifold_dim: k };
            let t = trilemma_bound(&p, folds, sigma, rho).unwrap().raw;
            let req = fold_collapse_requirement(&p, rho, eta).unwrap();
            let lhs = folds * sigma.powi(-((k + extra) as i32));
            // Equivalence away from the boundary, where rounding could flip it.
            if ((t - eta) / eta).abs() > 1e-9 {
                prop_assert_eq!(t <= eta, lhs >= req);
            }
            let base = trilemma_bound(&p, 1.0, 1.0, 1.0).unwrap().raw;
            prop_assert!((base - precision_lower_bound(&p, 1.0).unwrap().raw).abs() < 1e-15);
            let cap = required_density(&p, eta).unwrap();
            prop_assert!((precision_lower_bound(&p, cap).unwrap().raw - eta).abs() < 1e-9);
        }

        #[test]
        fn lower_bound_invariants(ps in proptest::collection::vec(0.0f64..0.3, 1..4), e in 0.0f64..3.0, q in 0.0f64..1.0) {
            let r = iso_bound_raw(&ps, e, q).unwrap();
            prop_assert!(r.raw <= r.clamped || r.raw > 1.0);
            prop_assert!(r.clamped <= 1.0 && r.clamped >= 0.0);
            prop_assert_eq!(r.vacuous, r.raw <= 0.0);
        }
    }
}
