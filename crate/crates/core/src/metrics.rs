//! Evaluation metrics over a logged trajectory.

use serde::{Deserialize, Serialize};

use crate::env::Trajectory;
use crate::{Error, Result, STEP_HOURS};

/// Total cost reduction against the idle baseline, €.
pub fn savings(costs: &[f64], baseline: &[f64]) -> Result<f64> {
    if costs.len() != baseline.len() {
        return Err(Error::Data(format!(
            "{} costs against {} baseline entries",
            costs.len(),
            baseline.len()
        )));
    }
    Ok(costs.iter().zip(baseline).map(|(c, b)| b - c).sum())
}

/// `Σ_m |mean − v_m|` over one step's per-string values.
pub fn deviation_sum(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (mean - v).abs()).sum()
}

/// Per-step deviation series and its mean.
pub fn deviation_series<'a, I>(steps: I) -> (Vec<f64>, f64)
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let series: Vec<f64> = steps.into_iter().map(deviation_sum).collect();
    let mean = if series.is_empty() { 0.0 } else { series.iter().sum::<f64>() / series.len() as f64 };
    (series, mean)
}

/// SOC imbalance per step, from the post-step states.
pub fn delta_soc_series(traj: &Trajectory) -> (Vec<f64>, f64) {
    let rows: Vec<Vec<f64>> = traj.steps.iter().map(|s| s.strings.iter().map(|r| r.soc).collect()).collect();
    deviation_series(rows.iter().map(Vec::as_slice))
}

/// Temperature imbalance per step, °C.
pub fn delta_tau_series(traj: &Trajectory) -> (Vec<f64>, f64) {
    let rows: Vec<Vec<f64>> = traj
        .steps
        .iter()
        .map(|s| s.strings.iter().map(|r| r.temperature).collect())
        .collect();
    deviation_series(rows.iter().map(Vec::as_slice))
}

/// `100·(1 − losses / throughput)` in percent; 100 when nothing moved.
pub fn efficiency(throughput_kwh: f64, loss_kwh: f64) -> f64 {
    if throughput_kwh <= 0.0 {
        100.0
    } else {
        100.0 * (1.0 - loss_kwh / throughput_kwh)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub steps: usize,
    /// €, positive when cheaper than the idle baseline.
    pub savings: f64,
    pub total_cost: f64,
    pub baseline_cost: f64,
    pub mean_delta_soc: f64,
    pub mean_delta_tau: f64,
    /// Energy through the battery terminals, kWh.
    pub throughput: f64,
    /// Inverter plus cell losses, kWh.
    pub total_loss: f64,
    /// Percent.
    pub efficiency: f64,
    pub clamped_steps: usize,
    pub cumulative_savings: Vec<f64>,
    pub cumulative_loss: Vec<f64>,
    pub delta_soc: Vec<f64>,
    pub delta_tau: Vec<f64>,
}

impl MetricsSummary {
    pub fn from_trajectory(traj: &Trajectory) -> Result<Self> {
        let costs = traj.costs();
        let baseline = traj.baseline_costs();
        let savings = savings(&costs, &baseline)?;
        let (delta_soc, mean_delta_soc) = delta_soc_series(traj);
        let (delta_tau, mean_delta_tau) = delta_tau_series(traj);

        let mut cumulative_savings = Vec::with_capacity(costs.len());
        let mut acc = 0.0;
        for (c, b) in costs.iter().zip(&baseline) {
            acc += b - c;
            cumulative_savings.push(acc);
        }

        let mut cumulative_loss = Vec::with_capacity(costs.len());
        let mut throughput = 0.0;
        let mut loss = 0.0;
        for s in &traj.steps {
            for r in &s.strings {
                throughput += r.applied.abs() * STEP_HOURS;
                loss += (r.p_inv_loss + r.p_cell_loss) * STEP_HOURS;
            }
            cumulative_loss.push(loss);
        }
        let clamped_steps = traj
            .steps
            .iter()
            .filter(|s| s.strings.iter().any(|r| r.flags.rating || r.flags.soc_limited || r.flags.saturated))
            .count();

        Ok(Self {
            steps: traj.steps.len(),
            savings,
            total_cost: costs.iter().sum(),
            baseline_cost: baseline.iter().sum(),
            mean_delta_soc,
            mean_delta_tau,
            throughput,
            total_loss: loss,
            efficiency: efficiency(throughput, loss),
            clamped_steps,
            cumulative_savings,
            cumulative_loss,
            delta_soc,
            delta_tau,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn savings_examples() {
        assert!((savings(&[1.0, 2.0], &[1.5, 2.5]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(savings(&[], &[]).unwrap(), 0.0);
        assert!(savings(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn deviation_examples() {
        assert!((deviation_sum(&[0.6, 0.4]) - 0.2).abs() < 1e-15);
        assert_eq!(deviation_sum(&[0.5, 0.5]), 0.0);
        assert!((deviation_sum(&[35.0, 25.0]) - 10.0).abs() < 1e-12);
        assert!((deviation_sum(&[20.0, 25.0, 30.0]) - 10.0).abs() < 1e-12);
        let (s, m) = deviation_series([&[0.6, 0.4][..], &[0.5, 0.5][..]]);
        assert_eq!(s.len(), 2);
        assert!((m - 0.1).abs() < 1e-15);
    }

    #[test]
    fn efficiency_examples() {
        assert_eq!(efficiency(0.0, 0.0), 100.0);
        assert!((efficiency(100.0, 5.0) - 95.0).abs() < 1e-12);
        assert!((efficiency(50.0, 4.0) - 92.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn deviation_is_shift_invariant_and_nonnegative(
            v in proptest::collection::vec(-10.0f64..10.0, 1..6), c in -100.0f64..100.0,
        ) {
            let d = deviation_sum(&v);
            prop_assert!(d >= 0.0);
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            prop_assert!((deviation_sum(&shifted) - d).abs() < 1e-9);
        }

        #[test]
        fn deviation_ignores_order(mut v in proptest::collection::vec(-10.0f64..10.0, 1..6), k in 0usize..6) {
            let d = deviation_sum(&v);
            let k = k % v.len();
            v.rotate_left(k);
            prop_assert!((deviation_sum(&v) - d).abs() < 1e-9);
            v.reverse();
            prop_assert!((deviation_sum(&v) - d).abs() < 1e-9);
        }

        #[test]
        fn savings_is_linear_in_costs(
            pairs in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 0..50), c in -1.0f64..1.0,
        ) {
            let (cost, base): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let s0 = savings(&cost, &base).unwrap();
            let shifted: Vec<f64> = cost.iter().map(|x| x + c).collect();
            let s1 = savings(&shifted, &base).unwrap();
            prop_assert!((s0 - s1 - c * cost.len() as f64).abs() < 1e-9);
        }
    }
}
