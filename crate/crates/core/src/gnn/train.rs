//! Policy evaluation on wireless networks and primal-dual training.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Architecture, Forward, GnnModel, InputSignal};
use crate::allocators::{sum_rate, sum_rate_gradient, Allocation, RateParams};
use crate::error::{invalid, Error, Result};
use crate::netgen::{generate_network, linear_gains, ChannelParams, PowerParams, WirelessNetwork};
use crate::rng::{derive_seed, streams};
use crate::spectral::{power_iteration_magnitude, symmetrize};

/// Power-iteration rounds used to normalize the policy operator.
pub const OPERATOR_POWER_STEPS: usize = 50;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// `(S + S^T) / 2` divided by its dominant eigenvalue magnitude.
pub fn policy_operator(net: &WirelessNetwork) -> DMatrix<f64> {
    let op = symmetrize(&net.s);
    let scale = power_iteration_magnitude(&op, OPERATOR_POWER_STEPS);
    if scale > 0.0 {
        op / scale
    } else {
        op
    }
}

pub fn policy_input(input: InputSignal, net: &WirelessNetwork) -> DVector<f64> {
    match input {
        InputSignal::Ones => DVector::from_element(net.m, 1.0),
        InputSignal::DirectState => {
            let s = DVector::from_vec(net.direct_states());
            let mean = s.mean();
            let centered = s.add_scalar(-mean);
            let std = (centered.norm_squared() / net.m as f64).sqrt();
            if std > 0.0 {
                centered / std
            } else {
                centered
            }
        }
    }
}

/// Runs the policy on a network; returns the operator used with the pass.
pub fn policy_forward(model: &GnnModel, net: &WirelessNetwork) -> Result<(DMatrix<f64>, Forward)> {
    let op = policy_operator(net);
    let x = policy_input(model.input, net);
    let fwd = model.forward(&op, &x, net.p0)?;
    Ok((op, fwd))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagrangianValue {
    pub value: f64,
    pub utility: f64,
    pub constraint_slack: f64,
}

/// `utility + mu * (Pmax - sum p)`.
pub fn lagrangian(
    allocation: &Allocation,
    net: &WirelessNetwork,
    mu: f64,
) -> Result<LagrangianValue> {
    if !(mu >= 0.0) {
        return Err(invalid("dual variable must be >= 0"));
    }
    if allocation.p.len() != net.m {
        return Err(Error::DimensionMismatch {
            expected: net.m,
            actual: allocation.p.len(),
        });
    }
    let utility = sum_rate(allocation, net, &RateParams::for_network(net));
    let constraint_slack = net.pmax - allocation.total();
    Ok(LagrangianValue {
        value: utility + mu * constraint_slack,
        utility,
        constraint_slack,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Adam learning rate for the filter coefficients.
    pub primal_step: f64,
    pub dual_step: f64,
    pub iterations: usize,
    pub batch: usize,
    pub m_train: usize,
    pub seed: u64,
    pub init_scale: f64,
    pub arch: Architecture,
    pub input: InputSignal,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            primal_step: 3e-4,
            dual_step: 1e-4,
            iterations: 2500,
            batch: 16,
            m_train: 50,
            seed: 0,
            init_scale: 0.2,
            arch: Architecture::default(),
            input: InputSignal::DirectState,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.primal_step > 0.0 && self.dual_step > 0.0) {
            return Err(invalid("step sizes must be > 0"));
        }
        if self.batch == 0 {
            return Err(invalid("batch must be >= 1"));
        }
        if self.m_train == 0 {
            return Err(invalid("m_train must be >= 1"));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(invalid("init_scale must be finite and >= 0"));
        }
        self.arch.validate()
    }

    pub fn initial_model(&self) -> Result<GnnModel> {
        let mut model = GnnModel::random(
            &self.arch,
            self.init_scale,
            derive_seed(self.seed, streams::MODEL_INIT, 0),
        )?;
        model.input = self.input;
        Ok(model)
    }
}

/// Batch means for one iteration; `mu` is the multiplier after the update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iteration: usize,
    pub utility: f64,
    pub slack: f64,
    pub mu: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: GnnModel,
    pub history: Vec<HistoryRow>,
    pub mu: f64,
}

struct SampleGradient {
    utility: f64,
    slack: f64,
    grads: Vec<Vec<f64>>,
}

fn sample_gradient(model: &GnnModel, net: &WirelessNetwork, mu: f64) -> Result<SampleGradient> {
    let (op, fwd) = policy_forward(model, net)?;
    let value = lagrangian(&fwd.allocation, net, mu)?;
    let rate_grad = sum_rate_gradient(
        &fwd.allocation.p,
        &linear_gains(net),
        &RateParams::for_network(net),
    );
    let upstream = DVector::from_iterator(net.m, rate_grad.into_iter().map(|g| g - mu));
    let grads = model.backward(&op, &fwd, net.p0, &upstream)?;
    Ok(SampleGradient {
        utility: value.utility,
        slack: value.constraint_slack,
        grads,
    })
}

/// Stochastic primal-dual ascent on the expected Lagrangian.
///
/// Iteration `t` draws `batch` networks of size `m_train` with seeds
/// `derive_seed(seed, TRAIN_NETWORKS, t * batch + b)`, takes an Adam ascent
/// step on the batch-mean Lagrangian gradient and then sets
/// `mu = max(0, mu - dual_step * mean_slack)`. Per-network gradients may be
/// computed in parallel; they are summed in batch order.
pub fn train(
    config: &TrainConfig,
    channel: &ChannelParams,
    powers: &PowerParams,
) -> Result<TrainOutcome> {
    config.validate()?;
    channel.validate()?;
    powers.validate()?;

    let mut model = config.initial_model()?;
    let mut mu = 0.0;
    let mut history = Vec::with_capacity(config.iterations);
    let mut first: Vec<Vec<f64>> = model.coeffs.iter().map(|b| vec![0.0; b.len()]).collect();
    let mut second = first.clone();

    for t in 0..config.iterations {
        let samples: Vec<SampleGradient> = (0..config.batch)
            .into_par_iter()
            .map(|b| {
                let seed = derive_seed(
                    config.seed,
                    streams::TRAIN_NETWORKS,
                    (t * config.batch + b) as u64,
                );
                let net = generate_network(config.m_train, channel, powers, seed)?;
                sample_gradient(&model, &net, mu)
            })
            .collect::<Result<Vec<_>>>()?;

        let scale = 1.0 / config.batch as f64;
        let mut utility = 0.0;
        let mut slack = 0.0;
        let mut grad: Vec<Vec<f64>> = model.coeffs.iter().map(|b| vec![0.0; b.len()]).collect();
        for s in &samples {
            utility += s.utility * scale;
            slack += s.slack * scale;
            for (acc, g) in grad.iter_mut().zip(&s.grads) {
                for (a, v) in acc.iter_mut().zip(g) {
                    *a += v * scale;
                }
            }
        }

        let step = (t + 1) as i32;
        let bias1 = 1.0 - ADAM_BETA1.powi(step);
        let bias2 = 1.0 - ADAM_BETA2.powi(step);
        for l in 0..model.coeffs.len() {
            for i in 0..model.coeffs[l].len() {
                let g = grad[l][i];
                first[l][i] = ADAM_BETA1 * first[l][i] + (1.0 - ADAM_BETA1) * g;
                second[l][i] = ADAM_BETA2 * second[l][i] + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = first[l][i] / bias1;
                let v_hat = second[l][i] / bias2;
                model.coeffs[l][i] += config.primal_step * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        if model.coeffs.iter().flatten().any(|c| !c.is_finite()) || !utility.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite coefficients or utility at iteration {t} (mu = {mu})"
            )));
        }

        mu = (mu - config.dual_step * slack).max(0.0);
        history.push(HistoryRow {
            iteration: t,
            utility,
            slack,
            mu,
        });
    }

    Ok(TrainOutcome { model, history, mu })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub utility: f64,
    pub total_power: f64,
}

/// Sum-rate and total power of the policy on each network. The model has no
/// size-dependent parameters, so any `m` is accepted.
pub fn evaluate(model: &GnnModel, nets: &[WirelessNetwork]) -> Result<Vec<EvalRecord>> {
    nets.par_iter()
        .map(|net| {
            let (_, fwd) = policy_forward(model, net)?;
            Ok(EvalRecord {
                utility: sum_rate(&fwd.allocation, net, &RateParams::for_network(net)),
                total_power: fwd.allocation.total(),
            })
        })
        .collect()
}
