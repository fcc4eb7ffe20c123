//! Seeded studies: size transfer of a trained policy, sensitivity to channel
//! noise, and the filter-network stability bound. Trial `i` of a study uses
//! network seed `seed_base + i`; trials run in parallel and are reduced in
//! index order.

mod theorem;

pub use theorem::{
    geometric_graph_laplacian, perturbation_with_norm, run_theorem1_sweep, run_theorem1_trial,
    stability_bound, AlphaRule, EpsilonRule, StabilityReport, Theorem1Sweep, Theorem1Trial,
};

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocators::{
    equal_allocation, random_allocation, sum_rate, wmmse, RateParams, WMMSE_MAX_ITER, WMMSE_TOL,
};
use crate::error::{invalid, Result};
use crate::gnn::{
    evaluate, policy_forward, train, Architecture, GnnModel, HistoryRow, TrainConfig,
};
use crate::netgen::{
    generate_network, perturb_channel, ChannelParams, PowerParams, WirelessNetwork,
};
use crate::rng::{derive_seed, streams};

/// Channel statistics and a budget that scales with network size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyParams {
    pub channel: ChannelParams,
    pub p0: f64,
    pub noise_power: f64,
    /// `Pmax = budget_fraction * m * p0`.
    pub budget_fraction: f64,
}

impl Default for StudyParams {
    fn default() -> Self {
        Self {
            channel: ChannelParams::default(),
            p0: 1.0,
            noise_power: 1.0,
            budget_fraction: 0.25,
        }
    }
}

impl StudyParams {
    pub fn powers(&self, m: usize) -> PowerParams {
        PowerParams {
            p0: self.p0,
            pmax: self.budget_fraction * m as f64 * self.p0,
            noise_power: self.noise_power,
        }
    }

    pub fn network(&self, m: usize, seed: u64) -> Result<WirelessNetwork> {
        generate_network(m, &self.channel, &self.powers(m), seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        if !(self.budget_fraction > 0.0 && self.budget_fraction <= 1.0) {
            return Err(invalid("budget_fraction must be in (0, 1]"));
        }
        self.powers(1).validate()
    }
}

/// Sample mean and standard deviation (`n - 1` denominator, 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Sum-rates of the four allocators on one shared network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialRates {
    pub m: usize,
    pub seed: u64,
    pub network_fingerprint: u64,
    pub gnn: f64,
    pub gnn_power: f64,
    pub wmmse: f64,
    pub equal: f64,
    pub random: f64,
}

pub fn compare_allocators(model: &GnnModel, net: &WirelessNetwork) -> Result<TrialRates> {
    let params = RateParams::for_network(net);
    let (_, fwd) = policy_forward(model, net)?;
    let random = random_allocation(net, derive_seed(net.seed, streams::RANDOM_ALLOCATION, 0))?;
    Ok(TrialRates {
        m: net.m,
        seed: net.seed,
        network_fingerprint: net.fingerprint(),
        gnn: sum_rate(&fwd.allocation, net, &params),
        gnn_power: fwd.allocation.total(),
        wmmse: sum_rate(
            &wmmse(net, &params, WMMSE_MAX_ITER, WMMSE_TOL)?.allocation,
            net,
            &params,
        ),
        equal: sum_rate(&equal_allocation(net), net, &params),
        random: sum_rate(&random, net, &params),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub m_eval: usize,
    pub gnn_mean: f64,
    pub gnn_std: f64,
    pub wmmse_mean: f64,
    pub wmmse_std: f64,
    pub equal_mean: f64,
    pub equal_std: f64,
    pub random_mean: f64,
    pub random_std: f64,
    pub trials: usize,
    pub seed_base: u64,
}

/// Per-trial rates for every size, size-major.
pub fn run_transfer_trials(
    model: &GnnModel,
    sizes: &[usize],
    trials: usize,
    seed_base: u64,
    params: &StudyParams,
) -> Result<Vec<Vec<TrialRates>>> {
    if trials == 0 {
        return Err(invalid("trials must be >= 1"));
    }
    params.validate()?;
    sizes
        .iter()
        .map(|&m| {
            (0..trials)
                .into_par_iter()
                .map(|t| compare_allocators(model, &params.network(m, seed_base + t as u64)?))
                .collect()
        })
        .collect()
}

pub fn summarize_transfer(rates: &[TrialRates], seed_base: u64) -> TransferRow {
    let col = |f: fn(&TrialRates) -> f64| mean_std(&rates.iter().map(f).collect::<Vec<_>>());
    let (gnn_mean, gnn_std) = col(|r| r.gnn);
    let (wmmse_mean, wmmse_std) = col(|r| r.wmmse);
    let (equal_mean, equal_std) = col(|r| r.equal);
    let (random_mean, random_std) = col(|r| r.random);
    TransferRow {
        m_eval: rates.first().map_or(0, |r| r.m),
        gnn_mean,
        gnn_std,
        wmmse_mean,
        wmmse_std,
        equal_mean,
        equal_std,
        random_mean,
        random_std,
        trials: rates.len(),
        seed_base,
    }
}

pub fn run_transfer_study(
    model: &GnnModel,
    sizes: &[usize],
    trials: usize,
    seed_base: u64,
    params: &StudyParams,
) -> Result<Vec<TransferRow>> {
    Ok(
        run_transfer_trials(model, sizes, trials, seed_base, params)?
            .iter()
            .map(|rates| summarize_transfer(rates, seed_base))
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    #[serde(rename = "L")]
    pub layers: usize,
    #[serde(rename = "F")]
    pub width: usize,
    pub ratio_diff_mean: f64,
}

/// `|gnn/wmmse on S - gnn/wmmse on S'|` for one trial, `None` when a WMMSE
/// sum-rate is 0.
pub fn ratio_difference(
    model: &GnnModel,
    net: &WirelessNetwork,
    perturb_sigma: f64,
) -> Result<Option<f64>> {
    let noisy = perturb_channel(
        net,
        perturb_sigma,
        derive_seed(net.seed, streams::PERTURBATION, 0),
    )?;
    let ratio = |n: &WirelessNetwork| -> Result<Option<f64>> {
        let params = RateParams::for_network(n);
        let base = sum_rate(
            &wmmse(n, &params, WMMSE_MAX_ITER, WMMSE_TOL)?.allocation,
            n,
            &params,
        );
        if base == 0.0 {
            return Ok(None);
        }
        let gnn = evaluate(model, std::slice::from_ref(n))?[0].utility;
        Ok(Some(gnn / base))
    };
    Ok(match (ratio(net)?, ratio(&noisy)?) {
        (Some(a), Some(b)) => Some((a - b).abs()),
        _ => None,
    })
}

/// Mean ratio difference of one model; skipped trials are reported on stderr.
pub fn noise_ratio_mean(
    model: &GnnModel,
    m: usize,
    perturb_sigma: f64,
    trials: usize,
    seed_base: u64,
    params: &StudyParams,
) -> Result<f64> {
    if m == 0 || trials == 0 {
        return Err(invalid("m and trials must be >= 1"));
    }
    let diffs: Vec<Option<f64>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            ratio_difference(
                model,
                &params.network(m, seed_base + t as u64)?,
                perturb_sigma,
            )
        })
        .collect::<Result<_>>()?;
    let kept: Vec<f64> = diffs.iter().flatten().copied().collect();
    if kept.len() < diffs.len() {
        eprintln!(
            "noise study: skipped {} trial(s) with zero WMMSE sum-rate",
            diffs.len() - kept.len()
        );
    }
    Ok(mean_std(&kept).0)
}

/// Trains one model per architecture with `template` (architecture
/// replaced) and measures its mean ratio difference.
pub fn run_noise_stability_study(
    family: &[Architecture],
    template: &TrainConfig,
    m: usize,
    perturb_sigma: f64,
    trials: usize,
    seed_base: u64,
    params: &StudyParams,
) -> Result<Vec<NoiseRow>> {
    family
        .iter()
        .map(|arch| {
            let config = TrainConfig {
                arch: *arch,
                ..*template
            };
            let outcome = train(&config, &params.channel, &params.powers(config.m_train))?;
            Ok(NoiseRow {
                layers: arch.layers,
                width: arch.width,
                ratio_diff_mean: noise_ratio_mean(
                    &outcome.model,
                    m,
                    perturb_sigma,
                    trials,
                    seed_base,
                    params,
                )?,
            })
        })
        .collect()
}

/// Row types written as CSV. `HEADER` lists the serialized field names in
/// order so that an empty table still gets its header row.
pub trait CsvRow: Serialize {
    const HEADER: &'static [&'static str];
}

impl CsvRow for TransferRow {
    const HEADER: &'static [&'static str] = &[
        "m_eval",
        "gnn_mean",
        "gnn_std",
        "wmmse_mean",
        "wmmse_std",
        "equal_mean",
        "equal_std",
        "random_mean",
        "random_std",
        "trials",
        "seed_base",
    ];
}

impl CsvRow for NoiseRow {
    const HEADER: &'static [&'static str] = &["L", "F", "ratio_diff_mean"];
}

impl CsvRow for TrialRates {
    const HEADER: &'static [&'static str] = &[
        "m",
        "seed",
        "network_fingerprint",
        "gnn",
        "gnn_power",
        "wmmse",
        "equal",
        "random",
    ];
}

impl CsvRow for StabilityReport {
    const HEADER: &'static [&'static str] = &[
        "n",
        "seed",
        "layers",
        "width",
        "taps",
        "alpha",
        "epsilon",
        "partitions",
        "delta",
        "delta_budget",
        "lipschitz_b",
        "output_diff",
        "bound",
        "feasible",
        "holds",
    ];
}

impl CsvRow for HistoryRow {
    const HEADER: &'static [&'static str] = &["iteration", "utility", "slack", "mu"];
}

/// Header row, then one line per row; `\n` line endings and shortest
/// round-trip float formatting.
pub fn write_csv<T: CsvRow, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(T::HEADER)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_string<T: CsvRow>(rows: &[T]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_model(seed: u64) -> GnnModel {
        let config = TrainConfig {
            seed,
            arch: Architecture {
                layers: 2,
                taps: 3,
                width: 3,
            },
            ..TrainConfig::default()
        };
        config.initial_model().unwrap()
    }

    #[test]
    fn mean_std_matches_hand_values() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn single_trial_row_shares_one_network() {
        let params = StudyParams::default();
        let model = small_model(1);
        let rows = run_transfer_trials(&model, &[50], 1, 9, &params).unwrap();
        let net = params.network(50, 9).unwrap();
        let direct = compare_allocators(&model, &net).unwrap();
        assert_eq!(rows[0][0], direct);
        assert_eq!(direct.network_fingerprint, net.fingerprint());
        let summary = run_transfer_study(&model, &[50], 1, 9, &params).unwrap();
        assert_eq!(summary.len(), 1);
        assert_eq!(summary[0].gnn_mean, direct.gnn);
        assert_eq!(summary[0].equal_std, 0.0);
    }

    #[test]
    fn transfer_is_reproducible() {
        let params = StudyParams::default();
        let model = small_model(2);
        let a = csv_string(&run_transfer_study(&model, &[10, 20], 4, 3, &params).unwrap()).unwrap();
        let b = csv_string(&run_transfer_study(&model, &[10, 20], 4, 3, &params).unwrap()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.lines().count(), 3);
        assert_eq!(
            a.lines().next().unwrap(),
            "m_eval,gnn_mean,gnn_std,wmmse_mean,wmmse_std,equal_mean,equal_std,random_mean,random_std,trials,seed_base"
        );
    }

    #[test]
    fn zero_noise_gives_zero_ratio_difference() {
        let params = StudyParams::default();
        let model = small_model(3);
        assert_eq!(
            noise_ratio_mean(&model, 12, 0.0, 5, 0, &params).unwrap(),
            0.0
        );
    }

    #[test]
    fn ratio_differences_are_finite_and_nonnegative() {
        let params = StudyParams::default();
        let model = small_model(4);
        for seed in 0..5 {
            let net = params.network(15, seed).unwrap();
            let d = ratio_difference(&model, &net, 1.0).unwrap().unwrap();
            assert!(d.is_finite() && d >= 0.0);
        }
    }

    fn serde_header<T: Serialize>(row: &T) -> Vec<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.serialize(row).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        text.lines()
            .next()
            .unwrap()
            .split(',')
            .map(String::from)
            .collect()
    }

    #[test]
    fn declared_headers_match_field_names() {
        let params = StudyParams::default();
        let model = small_model(5);
        let rates = compare_allocators(&model, &params.network(6, 1).unwrap()).unwrap();
        assert_eq!(serde_header(&rates), TrialRates::HEADER);
        let row = summarize_transfer(&[rates], 1);
        assert_eq!(serde_header(&row), TransferRow::HEADER);
        let trial = Theorem1Trial {
            n: 8,
            arch: Architecture {
                layers: 1,
                taps: 2,
                width: 1,
            },
            alpha: AlphaRule::LargestGapFraction(0.9),
            epsilon: EpsilonRule::FractionOfAlpha(0.1),
            seed: 1,
        };
        let report = run_theorem1_trial(&trial).unwrap();
        assert_eq!(serde_header(&report), StabilityReport::HEADER);
        let h = HistoryRow {
            iteration: 0,
            utility: 1.0,
            slack: 0.0,
            mu: 0.0,
        };
        assert_eq!(serde_header(&h), HistoryRow::HEADER);
    }

    #[test]
    fn empty_table_keeps_its_header() {
        assert_eq!(
            csv_string::<HistoryRow>(&[]).unwrap(),
            "iteration,utility,slack,mu\n"
        );
    }

    #[test]
    fn noise_header_uses_short_names() {
        let rows = [NoiseRow {
            layers: 2,
            width: 4,
            ratio_diff_mean: 0.125,
        }];
        assert_eq!(
            csv_string(&rows).unwrap(),
            "L,F,ratio_diff_mean\n2,4,0.125\n"
        );
    }
}
