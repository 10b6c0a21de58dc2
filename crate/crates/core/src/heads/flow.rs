use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{SamplerTrace, StepSampler, TimeField};
use crate::error::{Error, Result};
use crate::nn::MlpParams;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    Euler,
    /// Explicit trapezoid: Euler predictor, averaged-slope corrector.
    Heun,
}

impl std::str::FromStr for Integrator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Integrator::Euler),
            "heun" => Ok(Integrator::Heun),
            other => Err(Error::config(format!("unknown integrator `{other}` (euler|heun)"))),
        }
    }
}

/// Rectified-flow head: velocity network integrated from t = 1 (noise) to t = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct FlowHead<T: Scalar> {
    pub net: MlpParams<T>,
    pub steps: usize,
    pub integrator: Integrator,
}

impl<T: Scalar> FlowHead<T> {
    pub fn new(net: MlpParams<T>, steps: usize, integrator: Integrator) -> Result<Self> {
        if steps == 0 {
            return Err(Error::config("flow sampler needs at least one step"));
        }
        Ok(Self { net, steps, integrator })
    }

    pub fn sampler(&self) -> FlowSampler<'_, MlpParams<T>> {
        FlowSampler {
            field: &self.net,
            steps: self.steps,
            integrator: self.integrator,
        }
    }

    /// Same network, different step count.
    pub fn sampler_with_steps(&self, steps: usize) -> Result<FlowSampler<'_, MlpParams<T>>> {
        FlowSampler::new(&self.net, steps, self.integrator)
    }
}

/// Fixed-step integrator over an arbitrary time field.
#[derive(Debug, Clone, Copy)]
pub struct FlowSampler<'a, F> {
    pub field: &'a F,
    pub steps: usize,
    pub integrator: Integrator,
}

impl<'a, F> FlowSampler<'a, F> {
    pub fn new(field: &'a F, steps: usize, integrator: Integrator) -> Result<Self> {
        if steps == 0 {
            return Err(Error::config("flow sampler needs at least one step"));
        }
        Ok(Self {
            field,
            steps,
            integrator,
        })
    }
}

impl<T: Scalar, F: TimeField<T>> StepSampler<T> for FlowSampler<'_, F> {
    fn dim(&self) -> usize {
        self.field.dim()
    }

    fn num_steps(&self) -> usize {
        self.steps
    }

    fn step(&self, k: usize, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
        let kk = self.steps as f64;
        let dt = T::of(1.0 / kk);
        let t = T::of(1.0 - k as f64 / kk);
        let v1 = self.field.eval(x, t)?;
        let euler = &x - &(&v1 * dt);
        match self.integrator {
            Integrator::Euler => Ok(euler),
            Integrator::Heun => {
                let t_next = T::of(1.0 - (k + 1) as f64 / kk);
                let v2 = self.field.eval(euler.view(), t_next)?;
                let half = T::of(0.5) * dt;
                Ok(&x - &((&v1 + &v2) * half))
            }
        }
    }
}

/// Runs the head's sampler on one latent.
pub fn flow_sample<T: Scalar>(head: &FlowHead<T>, z: &[T]) -> Result<(Vec<T>, SamplerTrace<T>)> {
    let tr = head.sampler().trace(z)?;
    Ok((tr.action.clone(), tr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heads::FnField;
    use crate::nn::MlpConfig;
    use ndarray::array;

    fn linear() -> FnField<impl Fn(ArrayView2<'_, f64>, f64) -> Array2<f64> + Sync> {
        FnField {
            dim: 2,
            f: |x: ArrayView2<'_, f64>, _t: f64| x.to_owned(),
        }
    }

    #[test]
    fn zero_network_is_identity() {
        let c = MlpConfig::new(3, 8, 16, 2).unwrap();
        for k in [1, 5, 17] {
            let head = FlowHead::new(MlpParams::<f64>::zeros(c), k, Integrator::Heun).unwrap();
            let z = [0.3, -1.2, 2.5];
            let (a, tr) = flow_sample(&head, &z).unwrap();
            assert_eq!(a, z.to_vec());
            assert_eq!(tr.states.len(), k + 1);
            assert_eq!(tr.states.last().unwrap(), &a);
        }
    }

    #[test]
    fn euler_linear_field_matches_recursion() {
        let f = linear();
        for k in [1usize, 3, 10, 64] {
            let s = FlowSampler::new(&f, k, Integrator::Euler).unwrap();
            let z = array![[1.5, -0.25]];
            let out = s.sample(z.view()).unwrap();
            let mut x = 1.5f64;
            for _ in 0..k {
                x -= x / k as f64;
            }
            assert!((out[[0, 0]] - x).abs() < 1e-14);
            assert!((out[[0, 0]] - 1.5 * (1.0 - 1.0 / k as f64).powi(k as i32)).abs() < 1e-13);
        }
    }

    #[test]
    fn heun_beats_euler_on_linear_field() {
        let f = linear();
        let z = array![[1.0, -2.0]];
        let exact = (-1.0f64).exp();
        let e = FlowSampler::new(&f, 10, Integrator::Euler)
            .unwrap()
            .sample(z.view())
            .unwrap();
        let h = FlowSampler::new(&f, 10, Integrator::Heun)
            .unwrap()
            .sample(z.view())
            .unwrap();
        let err_e = (e[[0, 0]] - exact).abs();
        let err_h = (h[[0, 0]] - exact).abs();
        assert!(err_h < err_e / 10.0, "heun {err_h} euler {err_e}");
        // Trapezoid on x' = -x: factor (1 - Δ + Δ²/2) per step.
        let per: f64 = 1.0 - 0.1 + 0.005;
        assert!((h[[0, 0]] - per.powi(10)).abs() < 1e-14);
    }

    #[test]
    fn time_grid_runs_from_one_to_zero() {
        // v(x,t) = t integrates to z − 1/2 exactly under the trapezoid rule.
        let ones = FnField {
            dim: 1,
            f: |x: ArrayView2<'_, f64>, t: f64| x.mapv(|_| t),
        };
        let h = FlowSampler::new(&ones, 7, Integrator::Heun).unwrap();
        let out = h.sample(array![[0.0]].view()).unwrap();
        assert!((out[[0, 0]] + 0.5).abs() < 1e-14);
    }

    #[test]
    fn repeated_sampling_is_bitwise_stable() {
        let c = MlpConfig::new(2, 16, 32, 2).unwrap();
        let net = MlpParams::<f64>::init(c, &mut crate::rng::rng_from_seed(9));
        let head = FlowHead::new(net, 20, Integrator::Euler).unwrap();
        let z = [0.1, 0.9];
        assert_eq!(flow_sample(&head, &z).unwrap().0, flow_sample(&head, &z).unwrap().0);
    }

    #[test]
    fn recast_f32_tracks_f64() {
        use crate::heads::Recast;
        let c = MlpConfig::new(2, 16, 32, 2).unwrap();
        let net = MlpParams::<f64>::init(c, &mut crate::rng::rng_from_seed(4));
        let wide = FlowHead::new(net.clone(), 20, Integrator::Euler).unwrap();
        let narrow = FlowHead::new(net.cast::<f32>(), 20, Integrator::Euler).unwrap();
        let z = array![[0.3, -1.2], [2.0, 0.5], [-0.7, 0.0]];
        let s32 = narrow.sampler();
        let r = Recast(&s32);
        assert_eq!(r.num_steps(), 20);
        let a = wide.sampler().sample(z.view()).unwrap();
        let b = r.sample(z.view()).unwrap();
        let err = (&a - &b).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-4, "{err}");
        assert!(err > 0.0);
    }

    #[test]
    fn blowup_reports_step() {
        let f = FnField {
            dim: 1,
            f: |x: ArrayView2<'_, f64>, _t: f64| x.mapv(|v| -v * 1e200),
        };
        let s = FlowSampler::new(&f, 4, Integrator::Euler).unwrap();
        match s.sample(array![[1.0]].view()) {
            Err(Error::Evaluation { step, .. }) => assert_eq!(step, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_steps_rejected() {
        let c = MlpConfig::new(2, 0, 0, 0).unwrap();
        assert!(FlowHead::new(MlpParams::<f64>::zeros(c), 0, Integrator::Euler).is_err());
    }
}
