//! Sum-rate utility and the baseline allocation policies.
//!
//! Rates treat interference as noise. With linear gains `g = exp(S)`,
//! receiver `i` sees `g_ii p_i` from its own transmitter and
//! `sum_{j != i} g_ji p_j` from the others.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::netgen::{linear_gains, WirelessNetwork};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateParams {
    pub noise_power: f64,
    pub bandwidth_scale: f64,
}

impl RateParams {
    pub fn new(noise_power: f64) -> Result<Self> {
        if !(noise_power > 0.0 && noise_power.is_finite()) {
            return Err(invalid("noise_power must be > 0"));
        }
        Ok(Self {
            noise_power,
            bandwidth_scale: 1.0,
        })
    }

    pub fn for_network(net: &WirelessNetwork) -> Self {
        Self {
            noise_power: net.noise_power,
            bandwidth_scale: 1.0,
        }
    }
}

/// Transmit powers in watts, one per pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub p: Vec<f64>,
}

impl Allocation {
    pub fn total(&self) -> f64 {
        self.p.iter().sum()
    }

    /// Whether every entry lies in `[0, p0]`.
    pub fn within_box(&self, p0: f64) -> bool {
        self.p.iter().all(|&v| (0.0..=p0).contains(&v))
    }

    /// Hard-thresholded binary policy: `p0` where `p_i > p0 / 2`, else 0.
    pub fn binarize(&self, p0: f64) -> Allocation {
        Allocation {
            p: self
                .p
                .iter()
                .map(|&v| if v > p0 / 2.0 { p0 } else { 0.0 })
                .collect(),
        }
    }
}

/// Interference-plus-noise at each receiver.
fn interference(gains: &DMatrix<f64>, p: &[f64], noise: f64) -> Vec<f64> {
    let m = p.len();
    (0..m)
        .map(|i| {
            let mut acc = noise;
            for j in 0..m {
                if j != i {
                    acc += gains[(j, i)] * p[j];
                }
            }
            acc
        })
        .collect()
}

pub fn sum_rate_with_gains(p: &[f64], gains: &DMatrix<f64>, params: &RateParams) -> f64 {
    let noise_in = interference(gains, p, params.noise_power);
    let total: f64 = (0..p.len())
        .map(|i| (1.0 + gains[(i, i)] * p[i] / noise_in[i]).log2())
        .sum();
    params.bandwidth_scale * total
}

pub fn sum_rate(p: &Allocation, net: &WirelessNetwork, params: &RateParams) -> f64 {
    sum_rate_with_gains(&p.p, &linear_gains(net), params)
}

/// Gradient of the sum-rate with respect to every transmit power.
pub fn sum_rate_gradient(p: &[f64], gains: &DMatrix<f64>, params: &RateParams) -> Vec<f64> {
    let m = p.len();
    let noise_in = interference(gains, p, params.noise_power);
    let total_in: Vec<f64> = (0..m).map(|i| noise_in[i] + gains[(i, i)] * p[i]).collect();
    let scale = params.bandwidth_scale / std::f64::consts::LN_2;
    (0..m)
        .map(|k| {
            let mut g = gains[(k, k)] / total_in[k];
            for i in 0..m {
                if i != k {
                    g += gains[(k, i)] * (1.0 / total_in[i] - 1.0 / noise_in[i]);
                }
            }
            scale * g
        })
        .collect()
}

/// `Pmax / m` to every transmitter, clamped to `p0`.
pub fn equal_allocation(net: &WirelessNetwork) -> Allocation {
    let share = (net.pmax / net.m as f64).min(net.p0);
    Allocation {
        p: vec![share; net.m],
    }
}

/// Full power `p0` on `floor(Pmax / p0)` transmitters picked uniformly
/// without replacement.
pub fn random_allocation(net: &WirelessNetwork, seed: u64) -> Result<Allocation> {
    let active = (net.pmax / net.p0).floor();
    if active > net.m as f64 {
        return Err(invalid(format!(
            "Pmax / p0 = {} exceeds the number of transmitters {}",
            net.pmax / net.p0,
            net.m
        )));
    }
    let mut rng = SeededRng::new(seed);
    let mut p = vec![0.0; net.m];
    for i in rng.sample_without_replacement(net.m, active as usize) {
        p[i] = net.p0;
    }
    Ok(Allocation { p })
}

pub const WMMSE_MAX_ITER: usize = 100;
pub const WMMSE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct WmmseResult {
    pub allocation: Allocation,
    /// Sum-rate of the initial point followed by every iterate.
    pub trace: Vec<f64>,
    pub converged: bool,
}

/// Scalar-channel WMMSE with a per-transmitter cap `v_i^2 <= p0`, started
/// from full power. Stops after `max_iter` updates or once the sum-rate
/// changes by less than `tol`.
pub fn wmmse(
    net: &WirelessNetwork,
    params: &RateParams,
    max_iter: usize,
    tol: f64,
) -> Result<WmmseResult> {
    wmmse_with_gains(&linear_gains(net), net.p0, params, max_iter, tol)
}

pub fn wmmse_with_gains(
    gains: &DMatrix<f64>,
    p0: f64,
    params: &RateParams,
    max_iter: usize,
    tol: f64,
) -> Result<WmmseResult> {
    if max_iter == 0 {
        return Err(invalid("max_iter must be >= 1"));
    }
    if !(tol > 0.0) {
        return Err(invalid("tol must be > 0"));
    }
    let m = gains.nrows();
    let amp = gains.map(f64::sqrt);
    let v_max = p0.sqrt();
    let mut v = vec![v_max; m];
    let powers = |v: &[f64]| v.iter().map(|x| x * x).collect::<Vec<f64>>();

    let mut trace = vec![sum_rate_with_gains(&powers(&v), gains, params)];
    let mut best = (trace[0], v.clone());
    let mut converged = false;
    let mut u = vec![0.0; m];
    let mut w = vec![0.0; m];

    for _ in 0..max_iter {
        for i in 0..m {
            let received: f64 =
                params.noise_power + (0..m).map(|j| gains[(j, i)] * v[j] * v[j]).sum::<f64>();
            u[i] = amp[(i, i)] * v[i] / received;
            let mse = 1.0 - u[i] * amp[(i, i)] * v[i];
            w[i] = 1.0 / mse.max(f64::MIN_POSITIVE);
        }
        for i in 0..m {
            let denom: f64 = (0..m).map(|j| gains[(i, j)] * u[j] * u[j] * w[j]).sum();
            let target = if denom > 0.0 {
                amp[(i, i)] * u[i] * w[i] / denom
            } else {
                v_max
            };
            v[i] = target.clamp(0.0, v_max);
        }
        let rate = sum_rate_with_gains(&powers(&v), gains, params);
        let change = (rate - trace[trace.len() - 1]).abs();
        trace.push(rate);
        if rate > best.0 {
            best = (rate, v.clone());
        }
        if change < tol {
            converged = true;
            break;
        }
    }

    Ok(WmmseResult {
        allocation: Allocation { p: powers(&best.1) },
        trace,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgen::{generate_network, ChannelParams, PowerParams};

    fn gains(values: &[f64], m: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(m, m, values)
    }

    fn unit_noise() -> RateParams {
        RateParams::new(1.0).unwrap()
    }

    fn network(m: usize, seed: u64) -> WirelessNetwork {
        generate_network(
            m,
            &ChannelParams::default(),
            &PowerParams::for_size(m),
            seed,
        )
        .unwrap()
    }

    #[test]
    fn single_link_rate() {
        assert_eq!(
            sum_rate_with_gains(&[1.0], &gains(&[1.0], 1), &unit_noise()),
            1.0
        );
    }

    #[test]
    fn zero_power_zero_rate() {
        let net = network(10, 1);
        let p = Allocation { p: vec![0.0; 10] };
        assert_eq!(sum_rate(&p, &net, &RateParams::for_network(&net)), 0.0);
    }

    #[test]
    fn decoupled_links_add() {
        let g = gains(&[3.0, 0.0, 0.0, 0.5], 2);
        let r = sum_rate_with_gains(&[1.0, 2.0], &g, &unit_noise());
        assert!((r - (4f64.log2() + 2f64.log2())).abs() < 1e-15);
    }

    #[test]
    fn interference_uses_transmitter_row() {
        // g[(1, 0)] couples transmitter 1 into receiver 0
        let g = gains(&[1.0, 0.0, 1.0, 1.0], 2);
        let r = sum_rate_with_gains(&[1.0, 1.0], &g, &unit_noise());
        assert!((r - (1.5f64.log2() + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let net = network(6, 3);
        let mut net = net;
        net.noise_power = 1e-3;
        let g = linear_gains(&net);
        let params = RateParams::for_network(&net);
        let p: Vec<f64> = (0..6).map(|i| 0.1 + 0.15 * i as f64).collect();
        let grad = sum_rate_gradient(&p, &g, &params);
        for k in 0..6 {
            let h = 1e-6;
            let mut up = p.clone();
            up[k] += h;
            let mut dn = p.clone();
            dn[k] -= h;
            let fd = (sum_rate_with_gains(&up, &g, &params)
                - sum_rate_with_gains(&dn, &g, &params))
                / (2.0 * h);
            assert!(
                (fd - grad[k]).abs() <= 1e-6 * fd.abs().max(1.0),
                "{k}: {fd} vs {}",
                grad[k]
            );
        }
    }

    #[test]
    fn rate_monotone_in_gains() {
        let net = network(5, 9);
        let params = RateParams::for_network(&net);
        let p = Allocation { p: vec![0.7; 5] };
        let base = sum_rate(&p, &net, &params);
        for i in 0..5 {
            for j in 0..5 {
                let mut up = net.clone();
                up.s[(i, j)] += 0.5;
                let r = sum_rate(&p, &up, &params);
                if i == j {
                    assert!(r >= base);
                } else {
                    assert!(r <= base);
                }
            }
        }
    }

    #[test]
    fn equal_allocation_spends_budget() {
        let mut net = network(5, 0);
        net.pmax = 10.0;
        net.p0 = 5.0;
        let a = equal_allocation(&net);
        assert!(a.p.iter().all(|&v| v == 2.0));
        assert_eq!(a.total(), 10.0);

        let mut single = network(1, 0);
        single.pmax = 3.0;
        single.p0 = 1.0;
        assert_eq!(equal_allocation(&single).p, vec![1.0]);
    }

    #[test]
    fn random_allocation_cardinality() {
        let mut net = network(4, 0);
        net.pmax = 2.0;
        net.p0 = 1.0;
        let a = random_allocation(&net, 5).unwrap();
        assert_eq!(a.p.iter().filter(|&&v| v == 1.0).count(), 2);
        assert_eq!(a.p.iter().filter(|&&v| v == 0.0).count(), 2);
        assert_eq!(random_allocation(&net, 5).unwrap(), a);

        net.pmax = 5.0;
        assert!(random_allocation(&net, 5).is_err());
    }

    #[test]
    fn random_allocation_stays_in_budget() {
        for seed in 0..20 {
            let mut net = network(13, seed);
            net.pmax = 4.7;
            let a = random_allocation(&net, seed).unwrap();
            assert_eq!(a.total(), 4.0);
            assert!(a.within_box(net.p0));
        }
    }

    #[test]
    fn wmmse_single_link_full_power() {
        let r = wmmse_with_gains(&gains(&[1.0], 1), 1.0, &unit_noise(), 100, 1e-6).unwrap();
        assert!((r.allocation.p[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wmmse_interference_free_is_full_power() {
        let g = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.5, 2.0, 7.0]));
        let r = wmmse_with_gains(&g, 2.0, &unit_noise(), 100, 1e-9).unwrap();
        assert!(r.allocation.p.iter().all(|&v| (v - 2.0).abs() < 1e-12));
    }

    fn grid_optimum(g: &DMatrix<f64>, p0: f64, params: &RateParams) -> f64 {
        let steps = 200;
        let mut best = 0.0f64;
        for a in 0..=steps {
            for b in 0..=steps {
                let p = [p0 * a as f64 / steps as f64, p0 * b as f64 / steps as f64];
                best = best.max(sum_rate_with_gains(&p, g, params));
            }
        }
        best
    }

    #[test]
    fn wmmse_symmetric_strong_interference_matches_grid() {
        // cross gains exceed direct gains, yet full reuse stays optimal
        let g = gains(&[1.0, 1.2, 1.2, 1.0], 2);
        let r = wmmse_with_gains(&g, 1.0, &unit_noise(), 100, 1e-9).unwrap();
        let rate = sum_rate_with_gains(&r.allocation.p, &g, &unit_noise());
        let oracle = grid_optimum(&g, 1.0, &unit_noise());
        assert!(rate >= 0.98 * oracle, "{rate} vs {oracle}");
    }

    #[test]
    fn wmmse_trace_non_decreasing() {
        for seed in 0..10 {
            let net = network(20, seed);
            let mut net = net;
            net.noise_power = 1e-4;
            let r = wmmse(&net, &RateParams::for_network(&net), 100, 1e-9).unwrap();
            assert!(r.trace.windows(2).all(|w| w[1] >= w[0] - 1e-9));
            assert!(r.allocation.within_box(net.p0));
        }
    }

    #[test]
    fn wmmse_rejects_bad_arguments() {
        let g = gains(&[1.0], 1);
        assert!(wmmse_with_gains(&g, 1.0, &unit_noise(), 0, 1e-6).is_err());
        assert!(wmmse_with_gains(&g, 1.0, &unit_noise(), 10, 0.0).is_err());
    }
}
