use serde::{Deserialize, Serialize};

use crate::task::SUCCESS_THRESHOLD_MM;

use super::RunRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub mae_initial_mm: f64,
    pub mae_final_mm: f64,
    /// MAE at the last applied settings, micrometres.
    pub final_beam_difference_um: f64,
    /// Percent; `None` when the initial MAE is zero.
    pub normalized_improvement_pct: Option<f64>,
    /// Percent; `None` when the initial MAE is zero.
    pub normalized_integrated_mae_pct: Option<f64>,
    pub successful_steps: usize,
    pub run_success: bool,
    /// Steps missing after an early stop, filled with the last MAE.
    pub filled_steps: usize,
}

pub fn compute_metrics(run: &RunRecord) -> RunMetrics {
    let maes: Vec<f64> = run.samples.iter().map(|s| s.mae).collect();
    let mae0 = maes.first().copied().unwrap_or(f64::NAN);
    let last = maes.last().copied().unwrap_or(mae0);
    let budget = run.budget.max(1);

    // Summing ratios keeps a constant run at exactly 100 %.
    let mut ratio_sum = 0.0;
    let mut filled = 0;
    for t in 1..=budget {
        let m = maes.get(t).copied().unwrap_or_else(|| {
            filled += 1;
            last
        });
        ratio_sum += m / mae0;
    }

    let defined = mae0 > 0.0 && mae0.is_finite();
    RunMetrics {
        mae_initial_mm: mae0,
        mae_final_mm: last,
        final_beam_difference_um: last * 1e3,
        normalized_improvement_pct: defined.then(|| 100.0 * (last - mae0) / mae0),
        normalized_integrated_mae_pct: defined.then(|| 100.0 * ratio_sum / budget as f64),
        successful_steps: run.successful_steps,
        run_success: mae0 - last >= SUCCESS_THRESHOLD_MM,
        filled_steps: filled,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::Termination;
    use crate::task::{BeamParameters, ClampFlags, MagnetSettings, Sample};

    fn run_with(maes: &[f64], budget: usize) -> RunRecord {
        let samples = maes
            .iter()
            .enumerate()
            .map(|(i, m)| Sample {
                step: i,
                settings: MagnetSettings::default(),
                parameters: BeamParameters::default(),
                objective: 4.0 * m,
                mae: *m,
                clamped: ClampFlags::default(),
            })
            .collect();
        RunRecord {
            trial_id: "t".into(),
            trial_seed: 0,
            run_index: 0,
            run_seed: 0,
            optimizer: "x".into(),
            uses_model: false,
            budget,
            target: BeamParameters::default(),
            samples,
            transcripts: vec![],
            termination: Termination::BudgetExhausted,
            termination_detail: None,
            successful_steps: maes.len() - 1,
            clamp_counts: [0; 5],
            fallbacks: 0,
            step_seconds: vec![],
        }
    }

    #[test]
    fn constant_run_is_neutral() {
        let m = compute_metrics(&run_with(&[0.7; 51], 50));
        assert_eq!(m.normalized_improvement_pct, Some(0.0));
        assert_eq!(m.normalized_integrated_mae_pct, Some(100.0));
        assert!(!m.run_success);
        assert_eq!(m.filled_steps, 0);
    }

    #[test]
    fn halving_is_minus_fifty_percent() {
        let mut maes = vec![0.8; 51];
        maes[50] = 0.4;
        let m = compute_metrics(&run_with(&maes, 50));
        assert_eq!(m.normalized_improvement_pct, Some(-50.0));
        assert!((m.final_beam_difference_um - 400.0).abs() < 1e-9);
        assert!(m.run_success);
    }

    #[test]
    fn early_stop_fills_with_last_value() {
        // mae_0 = 1, steps 1..=10 at 0.5, stop; steps 11..=50 filled with 0.5.
        let mut maes = vec![1.0];
        maes.extend([0.5; 10]);
        let m = compute_metrics(&run_with(&maes, 50));
        assert_eq!(m.filled_steps, 40);
        let by_hand = 100.0 * (10.0 * 0.5 + 40.0 * 0.5) / (50.0 * 1.0);
        assert!((m.normalized_integrated_mae_pct.unwrap() - by_hand).abs() < 1e-12);
        assert!((by_hand - 50.0).abs() < 1e-12);
    }

    #[test]
    fn fill_uses_the_last_observed_value_not_the_mean() {
        let maes = [2.0, 1.0, 3.0];
        let m = compute_metrics(&run_with(&maes, 4));
        let by_hand = 100.0 * (1.0 + 3.0 + 3.0 + 3.0) / (4.0 * 2.0);
        assert!((m.normalized_integrated_mae_pct.unwrap() - by_hand).abs() < 1e-12);
    }

    #[test]
    fn success_threshold_is_forty_micrometres() {
        assert!(compute_metrics(&run_with(&[1.0, 0.95], 1)).run_success);
        assert!(!compute_metrics(&run_with(&[1.0, 0.97], 1)).run_success);
    }

    #[test]
    fn zero_initial_mae_leaves_normalized_metrics_undefined() {
        let m = compute_metrics(&run_with(&[0.0, 0.0], 1));
        assert_eq!(m.normalized_improvement_pct, None);
        assert_eq!(m.normalized_integrated_mae_pct, None);
    }

    #[test]
    fn success_is_monotone_in_final_mae() {
        for i in 0..200 {
            let lower = 1.0 - i as f64 * 0.005;
            let higher = lower + 0.003;
            let hi = compute_metrics(&run_with(&[1.0, higher], 1)).run_success;
            let lo = compute_metrics(&run_with(&[1.0, lower], 1)).run_success;
            assert!(!hi || lo);
        }
    }
}
