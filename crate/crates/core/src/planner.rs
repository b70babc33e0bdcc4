//! Closed-form privacy budget planning.
//!
//! The expected squared error of all `k` noisy centroids in one iteration, with
//! cluster sizes approximated by `N/k`, average coordinate mean `rho` and the
//! per-iteration budget split evenly across the `d` sums and the count, is
//!
//! ```text
//! MSE(eps_t) = 2 (1 + rho^2) k^3 d (1 + d)^2 / (N^2 eps_t^2)
//! ```
//!
//! Bounding it by a threshold gives the minimal per-iteration budget `eps_m`,
//! from which the iteration count follows.

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_RHO: f64 = 0.225;
pub const DEFAULT_MSE_THRESHOLD: f64 = 0.01;
pub const DEFAULT_T_CAP: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerInputs {
    pub n_rows: usize,
    pub n_dims: usize,
    pub k: usize,
    pub rho: f64,
    pub epsilon_total: f64,
    pub mse_threshold: f64,
    pub t_cap: usize,
    /// Replaces the computed `eps_m` when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_m_override: Option<f64>,
}

impl PlannerInputs {
    pub fn new(n_rows: usize, n_dims: usize, k: usize, epsilon_total: f64) -> Self {
        Self {
            n_rows,
            n_dims,
            k,
            rho: DEFAULT_RHO,
            epsilon_total,
            mse_threshold: DEFAULT_MSE_THRESHOLD,
            t_cap: DEFAULT_T_CAP,
            epsilon_m_override: None,
        }
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn with_epsilon_m_override(mut self, eps_m: Option<f64>) -> Self {
        self.epsilon_m_override = eps_m;
        self
    }

    pub fn with_epsilon(mut self, epsilon_total: f64) -> Self {
        self.epsilon_total = epsilon_total;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if self.k == 0 || self.n_rows < self.k {
            return bad(format!(
                "need N >= k >= 1 (N={}, k={})",
                self.n_rows, self.k
            ));
        }
        if self.n_dims == 0 {
            return bad("d must be >= 1".into());
        }
        if !(self.epsilon_total > 0.0) || self.epsilon_total.is_nan() {
            return bad(format!("epsilon must be > 0, got {}", self.epsilon_total));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return bad(format!("rho must be in [0, 1], got {}", self.rho));
        }
        if !(self.mse_threshold > 0.0 && self.mse_threshold.is_finite()) {
            return bad(format!(
                "mse threshold must be > 0, got {}",
                self.mse_threshold
            ));
        }
        if self.t_cap < 2 {
            return bad(format!("iteration cap must be >= 2, got {}", self.t_cap));
        }
        if let Some(m) = self.epsilon_m_override {
            if !(m > 0.0 && m.is_finite()) {
                return bad(format!("eps_m override must be > 0, got {m}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetPlan {
    pub epsilon_total: f64,
    /// Value from the closed form.
    pub epsilon_m_computed: f64,
    /// Value actually used to derive `iterations` (override if given).
    pub epsilon_m: f64,
    pub epsilon_m_overridden: bool,
    pub iterations: usize,
    pub epsilon_per_iter: f64,
    pub epsilon_dim: f64,
    pub epsilon_count: f64,
}

/// Published `eps_m` values for the two benchmark shapes, as `(N, d, k, eps_m)` at
/// the default `rho`. Both disagree with the closed form; `plan` reports the gap.
pub const REFERENCE_EPSILON_M: [(usize, usize, usize, f64); 2] =
    [(748, 4, 2, 0.65508), (48_842, 6, 5, 0.06799)];

pub fn reference_epsilon_m(inputs: &PlannerInputs) -> Option<f64> {
    if inputs.rho != DEFAULT_RHO || inputs.mse_threshold != DEFAULT_MSE_THRESHOLD {
        return None;
    }
    REFERENCE_EPSILON_M
        .iter()
        .find(|(n, d, k, _)| (*n, *d, *k) == (inputs.n_rows, inputs.n_dims, inputs.k))
        .map(|r| r.3)
}

/// `2 (1 + rho^2) k^3 d (1+d)^2 / N^2`, the MSE numerator shared by the bound and `eps_m`.
fn mse_coefficient(inputs: &PlannerInputs) -> f64 {
    let k = inputs.k as f64;
    let d = inputs.n_dims as f64;
    let n = inputs.n_rows as f64;
    2.0 * (1.0 + inputs.rho * inputs.rho) * k.powi(3) * d * (1.0 + d).powi(2) / (n * n)
}

/// Approximate total MSE of the `k` noisy centroids at per-iteration budget `eps_t`.
pub fn centroid_mse_bound(inputs: &PlannerInputs, epsilon_per_iter: f64) -> f64 {
    mse_coefficient(inputs) / (epsilon_per_iter * epsilon_per_iter)
}

/// Smallest per-iteration budget keeping [`centroid_mse_bound`] at or below the threshold.
pub fn minimal_iteration_budget(inputs: &PlannerInputs) -> Result<f64> {
    inputs.validate()?;
    Ok((mse_coefficient(inputs) / inputs.mse_threshold).sqrt())
}

/// `2` when `eps <= 2 eps_m`, else `floor(eps / eps_m)` clamped to `[2, t_cap]`.
pub fn iteration_count(epsilon_total: f64, epsilon_m: f64, t_cap: usize) -> usize {
    if epsilon_total <= 2.0 * epsilon_m {
        return 2;
    }
    let ratio = (epsilon_total / epsilon_m).floor();
    if ratio >= t_cap as f64 {
        t_cap.max(2)
    } else {
        (ratio as usize).max(2)
    }
}

pub fn make_plan(inputs: &PlannerInputs) -> Result<BudgetPlan> {
    let computed = minimal_iteration_budget(inputs)?;
    let epsilon_m = match inputs.epsilon_m_override {
        Some(m) => {
            if (m - computed).abs() > 1e-12 * computed.max(1.0) {
                debug!(
                    "eps_m override {m} differs from closed-form value {computed:.6} (ratio {:.4})",
                    m / computed
                );
            }
            m
        }
        None => computed,
    };
    let iterations = iteration_count(inputs.epsilon_total, epsilon_m, inputs.t_cap);
    let epsilon_per_iter = inputs.epsilon_total / iterations as f64;
    let split = epsilon_per_iter / (inputs.n_dims as f64 + 1.0);
    Ok(BudgetPlan {
        epsilon_total: inputs.epsilon_total,
        epsilon_m_computed: computed,
        epsilon_m,
        epsilon_m_overridden: inputs.epsilon_m_override.is_some(),
        iterations,
        epsilon_per_iter,
        epsilon_dim: split,
        epsilon_count: split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blood() -> PlannerInputs {
        PlannerInputs::new(748, 4, 2, 1.0)
    }

    fn adult() -> PlannerInputs {
        PlannerInputs::new(48842, 6, 5, 1.0)
    }

    #[test]
    fn eps_m_small_case() {
        let inputs = PlannerInputs::new(1000, 1, 1, 1.0).with_rho(0.0);
        let got = minimal_iteration_budget(&inputs).unwrap();
        assert!((got - 8e-4f64.sqrt()).abs() < 1e-15);
        assert!((got - 0.028284).abs() < 1e-6);
    }

    #[test]
    fn eps_m_dataset_shapes() {
        let b = minimal_iteration_budget(&blood()).unwrap();
        let a = minimal_iteration_budget(&adult()).unwrap();
        assert!((b - 0.5481).abs() < 1e-4, "blood eps_m {b}");
        assert!((a - 0.0569).abs() < 1e-4, "adult eps_m {a}");
    }

    #[test]
    fn iteration_counts_match_reported_table() {
        let grid = [0.5, 1.0, 1.5, 2.0, 3.0];
        let blood: Vec<usize> = grid
            .iter()
            .map(|&e| iteration_count(e, 0.65508, 7))
            .collect();
        assert_eq!(blood, vec![2, 2, 2, 3, 4]);
        let adult: Vec<usize> = grid
            .iter()
            .map(|&e| iteration_count(e, 0.06799, 7))
            .collect();
        assert_eq!(adult, vec![7; 5]);
    }

    #[test]
    fn small_budget_boundary() {
        assert_eq!(iteration_count(2.0 * 0.3, 0.3, 7), 2);
        assert_eq!(iteration_count(1e300, 1e-300, 7), 7);
        assert_eq!(iteration_count(10.0, 1.0, 3), 3);
    }

    #[test]
    fn split_arithmetic() {
        // eps_t = 0.5, d = 4
        let inputs = PlannerInputs::new(748, 4, 2, 1.0).with_epsilon_m_override(Some(0.5));
        let plan = make_plan(&inputs).unwrap();
        assert_eq!(plan.iterations, 2);
        assert_eq!(plan.epsilon_per_iter, 0.5);
        assert!((plan.epsilon_dim - 0.1).abs() < 1e-15);
        assert_eq!(plan.epsilon_dim, plan.epsilon_count);

        let plan = make_plan(&adult().with_epsilon_m_override(Some(0.06799))).unwrap();
        assert_eq!(plan.iterations, 7);
        assert!((plan.epsilon_per_iter - 1.0 / 7.0).abs() < 1e-15);
        assert!((plan.epsilon_dim - 1.0 / 49.0).abs() < 1e-15);

        let plan = make_plan(
            &blood()
                .with_epsilon(3.0)
                .with_epsilon_m_override(Some(0.65508)),
        )
        .unwrap();
        assert_eq!(plan.iterations, 4);
        assert_eq!(plan.epsilon_per_iter, 0.75);
        assert!((plan.epsilon_dim - 0.15).abs() < 1e-15);
        assert!(plan.epsilon_m_overridden);
    }

    #[test]
    fn mse_round_trip_at_eps_m() {
        for inputs in [
            blood(),
            adult(),
            PlannerInputs::new(100, 3, 4, 2.0).with_rho(0.7),
        ] {
            let m = minimal_iteration_budget(&inputs).unwrap();
            let mse = centroid_mse_bound(&inputs, m);
            assert!((mse - inputs.mse_threshold).abs() < 1e-12);
        }
    }

    #[test]
    fn eps_m_monotone_in_parameters() {
        let base = PlannerInputs::new(1000, 3, 3, 1.0);
        let at = |f: &dyn Fn(&mut PlannerInputs)| {
            let mut p = base.clone();
            f(&mut p);
            minimal_iteration_budget(&p).unwrap()
        };
        let mut prev = 0.0;
        for k in 1..10 {
            let v = at(&|p| p.k = k);
            assert!(v > prev);
            prev = v;
        }
        prev = 0.0;
        for d in 1..10 {
            let v = at(&|p| p.n_dims = d);
            assert!(v > prev);
            prev = v;
        }
        prev = f64::INFINITY;
        for n in [10, 100, 1000, 10_000] {
            let v = at(&|p| p.n_rows = n);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn invalid_inputs_rejected() {
        let mut p = blood();
        p.k = 0;
        assert!(make_plan(&p).is_err());
        let mut p = blood();
        p.n_rows = 1;
        assert!(make_plan(&p).is_err());
        let mut p = blood();
        p.rho = 1.5;
        assert!(make_plan(&p).is_err());
        let mut p = blood();
        p.t_cap = 1;
        assert!(make_plan(&p).is_err());
        assert!(make_plan(&blood().with_epsilon(0.0)).is_err());
        assert!(make_plan(&blood().with_epsilon_m_override(Some(-1.0))).is_err());
    }

    proptest::proptest! {
        #[test]
        fn plan_invariants(
            n in 10usize..100_000,
            d in 1usize..12,
            k in 1usize..10,
            eps in 0.01f64..50.0,
            rho in 0.0f64..1.0,
        ) {
            proptest::prop_assume!(n >= k);
            let plan = make_plan(&PlannerInputs::new(n, d, k, eps).with_rho(rho)).unwrap();
            proptest::prop_assert!((2..=7).contains(&plan.iterations));
            let t = plan.iterations as f64;
            proptest::prop_assert!((plan.epsilon_per_iter * t - eps).abs() <= 1e-12 * eps.max(1.0));
            let recombined = d as f64 * plan.epsilon_dim + plan.epsilon_count;
            proptest::prop_assert!((recombined - plan.epsilon_per_iter).abs() <= 1e-12);
            let charges: crate::model::ExactSum =
                std::iter::repeat_n(plan.epsilon_per_iter, plan.iterations).collect();
            proptest::prop_assert!((charges.value() - eps).abs() <= 1e-12);
        }
    }
}
