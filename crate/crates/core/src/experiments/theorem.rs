//! Randomized checks of the filter-network stability bound on Laplacians of
//! random geometric graphs.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::gnn::{Activation, Architecture, GnnModel};
use crate::rng::{derive_seed, streams, SeededRng};
use crate::spectral::{
    design_fdt_filter, eig, fdt_check_on_interval, largest_gap, partition_spectrum,
    weight_laplacian, FilterSpec, OperatorKind, SpectralDecomposition, SpectrumPartition,
};

/// `L F^(L-1) (pi N / (alpha - epsilon) + B) epsilon ||f||`.
pub fn stability_bound(
    layers: usize,
    width: usize,
    partitions: usize,
    alpha: f64,
    epsilon: f64,
    lipschitz_b: f64,
    f_norm: f64,
) -> Result<f64> {
    if layers == 0 || width == 0 || partitions == 0 {
        return Err(invalid("layers, width and partition count must be >= 1"));
    }
    if !(epsilon >= 0.0) || !(alpha > epsilon) {
        return Err(invalid(format!(
            "need alpha > epsilon >= 0, got alpha = {alpha}, epsilon = {epsilon}"
        )));
    }
    if !(lipschitz_b >= 0.0 && f_norm >= 0.0) {
        return Err(invalid("B and ||f|| must be >= 0"));
    }
    let depth = layers as f64 * (width as f64).powi(layers as i32 - 1);
    let spectral = std::f64::consts::PI * partitions as f64 / (alpha - epsilon);
    Ok(depth * (spectral + lipschitz_b) * epsilon * f_norm)
}

/// How the separation `alpha` is chosen for a trial graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum AlphaRule {
    Fixed(f64),
    /// This fraction of the largest consecutive eigenvalue gap. Splits are
    /// strict, so a fraction of 1 would leave a single group.
    LargestGapFraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum EpsilonRule {
    Absolute(f64),
    FractionOfAlpha(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Trial {
    pub n: usize,
    pub arch: Architecture,
    pub alpha: AlphaRule,
    pub epsilon: EpsilonRule,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub n: usize,
    pub seed: u64,
    pub layers: usize,
    pub width: usize,
    pub taps: usize,
    pub alpha: f64,
    /// Measured spectral norm of the perturbation.
    pub epsilon: f64,
    pub partitions: usize,
    /// Largest within-group response spread over all filters.
    pub delta: f64,
    pub delta_budget: f64,
    /// Largest `|h'|` over all filters on `[lambda_min - eps, lambda_max + eps]`.
    pub lipschitz_b: f64,
    pub output_diff: f64,
    pub bound: f64,
    /// Every filter met the budget and stayed below 1 in magnitude.
    pub feasible: bool,
    pub holds: bool,
}

impl StabilityReport {
    /// `output_diff / bound`, 0 when both vanish.
    pub fn slack_ratio(&self) -> f64 {
        if self.bound > 0.0 {
            self.output_diff / self.bound
        } else if self.output_diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// Combinatorial Laplacian of `n` uniform points in the unit square with
/// weights `exp(-d^2 / r^2)` for `d <= r`, `r = sqrt(2 ln n / n)`.
pub fn geometric_graph_laplacian(n: usize, seed: u64) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(invalid("graph size must be >= 1"));
    }
    let mut rng = SeededRng::new(seed);
    let pts: Vec<[f64; 2]> = (0..n).map(|_| [rng.uniform(), rng.uniform()]).collect();
    let r = (2.0 * (n.max(2) as f64).ln() / n as f64).sqrt();
    let w = DMatrix::from_fn(n, n, |i, j| {
        let d2 = (pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2);
        if i != j && d2 <= r * r {
            (-d2 / (r * r)).exp()
        } else {
            0.0
        }
    });
    weight_laplacian(&w, OperatorKind::Combinatorial)
}

/// Symmetric Gaussian matrix rescaled to spectral norm `epsilon`.
pub fn perturbation_with_norm(n: usize, epsilon: f64, seed: u64) -> Result<DMatrix<f64>> {
    if epsilon == 0.0 {
        return Ok(DMatrix::zeros(n, n));
    }
    let mut rng = SeededRng::new(seed);
    let g = DMatrix::from_fn(n, n, |_, _| rng.gaussian());
    let a = (&g + g.transpose()) * 0.5;
    let norm = eig(&a)?
        .eigenvalues
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(a * (epsilon / norm))
}

struct DesignedFilter {
    filter: FilterSpec,
    delta: f64,
    lipschitz_b: f64,
    feasible: bool,
}

/// Fits a polynomial to random per-group targets, shrinks the contrast
/// around the mean target until the spread fits `budget`, then scales the
/// whole response below 1 in magnitude on `interval`.
fn design_filter(
    dec: &SpectralDecomposition,
    partition: &SpectrumPartition,
    taps: usize,
    budget: f64,
    interval: (f64, f64),
    rng: &mut SeededRng,
) -> Result<DesignedFilter> {
    let raw: Vec<f64> = (0..partition.len())
        .map(|_| rng.uniform_range(-0.5, 0.5))
        .collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    let check =
        |f: &FilterSpec| fdt_check_on_interval(f, &dec.eigenvalues, partition, budget, interval);

    let mut targets = raw.clone();
    let mut design = design_fdt_filter(dec, partition, &targets, taps)?;
    let spread = check(&design.filter).delta;
    if spread > budget {
        let c = if budget > 0.0 {
            0.999 * budget / spread
        } else {
            0.0
        };
        targets = raw.iter().map(|t| mean + c * (t - mean)).collect();
        design = design_fdt_filter(dec, partition, &targets, taps)?;
    }
    let mut filter = design.filter;
    let peak = check(&filter).max_abs_on_interval;
    if peak >= 1.0 {
        filter = FilterSpec::new(filter.coeffs.iter().map(|c| c * 0.999 / peak).collect())?;
    }
    let report = check(&filter);
    Ok(DesignedFilter {
        feasible: report.is_fdt && report.non_amplifying(),
        delta: report.delta,
        lipschitz_b: report.lipschitz_b,
        filter,
    })
}

pub fn run_theorem1_trial(trial: &Theorem1Trial) -> Result<StabilityReport> {
    trial.arch.validate()?;
    let n = trial.n;
    let lap = geometric_graph_laplacian(n, derive_seed(trial.seed, streams::THEOREM_GRAPH, 0))?;
    let dec = eig(&lap)?;
    let alpha = match trial.alpha {
        AlphaRule::Fixed(a) => a,
        AlphaRule::LargestGapFraction(r) => r * largest_gap(&dec.eigenvalues),
    };
    if !(alpha > 0.0) {
        return Err(invalid(format!("separation must be > 0, got {alpha}")));
    }
    let epsilon = match trial.epsilon {
        EpsilonRule::Absolute(e) => e,
        EpsilonRule::FractionOfAlpha(r) => r * alpha,
    };
    if !(epsilon >= 0.0 && epsilon < alpha) {
        return Err(invalid(format!(
            "need 0 <= epsilon < alpha, got epsilon = {epsilon}, alpha = {alpha}"
        )));
    }
    let partition = partition_spectrum(&dec.eigenvalues, alpha)?;
    let budget = std::f64::consts::PI * epsilon / (2.0 * alpha - 2.0 * epsilon);
    let interval = (
        dec.eigenvalues[0] - epsilon,
        dec.eigenvalues[n - 1] + epsilon,
    );

    let mut model = GnnModel::zeros(&trial.arch)?;
    model.hidden_activation = Activation::Relu;
    model.output_activation = Activation::Identity;
    let mut rng = SeededRng::new(derive_seed(trial.seed, streams::THEOREM_FILTERS, 0));
    let mut delta = 0.0f64;
    let mut lipschitz_b = 0.0f64;
    let mut feasible = true;
    for l in 0..model.layers() {
        for q in 0..model.widths[l] {
            for p in 0..model.widths[l + 1] {
                let d = design_filter(&dec, &partition, model.taps, budget, interval, &mut rng)?;
                delta = delta.max(d.delta);
                lipschitz_b = lipschitz_b.max(d.lipschitz_b);
                feasible &= d.feasible;
                let start = model.index(l, q, p, 0);
                model.coeffs[l][start..start + model.taps].copy_from_slice(&d.filter.coeffs);
            }
        }
    }

    let pert = perturbation_with_norm(
        n,
        epsilon,
        derive_seed(trial.seed, streams::THEOREM_PERTURBATION, 0),
    )?;
    let measured_eps = eig(&pert)?
        .eigenvalues
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let mut srng = SeededRng::new(derive_seed(trial.seed, streams::THEOREM_SIGNAL, 0));
    let f = DVector::from_fn(n, |_, _| srng.gaussian());

    let out = model.forward_features(&lap, &f)?.output;
    let out_pert = model.forward_features(&(&lap + &pert), &f)?.output;
    let output_diff = (out - out_pert).norm();
    // the budget was set from the requested epsilon; the bound uses the
    // larger of requested and measured so rounding cannot flatter it
    let eps_for_bound = epsilon.max(measured_eps);
    let bound = stability_bound(
        trial.arch.layers,
        trial.arch.width,
        partition.len(),
        alpha,
        eps_for_bound,
        lipschitz_b,
        f.norm(),
    )?;
    Ok(StabilityReport {
        n,
        seed: trial.seed,
        layers: trial.arch.layers,
        width: trial.arch.width,
        taps: trial.arch.taps,
        alpha,
        epsilon: measured_eps,
        partitions: partition.len(),
        delta,
        delta_budget: budget,
        lipschitz_b,
        output_diff,
        bound,
        feasible,
        holds: output_diff <= bound,
    })
}

/// Cartesian sweep; trial `i` in row-major order over
/// `(n, layers, width, epsilon_fraction, repeat)` gets seed `seed_base + i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Sweep {
    pub sizes: Vec<usize>,
    pub layers: Vec<usize>,
    pub widths: Vec<usize>,
    pub epsilon_fractions: Vec<f64>,
    pub taps: usize,
    pub alpha_gap_fraction: f64,
    pub repeats: usize,
    pub seed_base: u64,
}

impl Default for Theorem1Sweep {
    fn default() -> Self {
        Self {
            sizes: vec![20, 50, 100],
            layers: vec![1, 2, 3],
            widths: vec![1, 2, 4],
            epsilon_fractions: vec![0.05, 0.1, 0.25],
            taps: 5,
            alpha_gap_fraction: 0.9,
            repeats: 7,
            seed_base: 0,
        }
    }
}

impl Theorem1Sweep {
    pub fn trials(&self) -> Vec<Theorem1Trial> {
        let mut out = Vec::new();
        for &n in &self.sizes {
            for &layers in &self.layers {
                for &width in &self.widths {
                    for &frac in &self.epsilon_fractions {
                        for _ in 0..self.repeats {
                            out.push(Theorem1Trial {
                                n,
                                arch: Architecture {
                                    layers,
                                    taps: self.taps,
                                    width,
                                },
                                alpha: AlphaRule::LargestGapFraction(self.alpha_gap_fraction),
                                epsilon: EpsilonRule::FractionOfAlpha(frac),
                                seed: self.seed_base + out.len() as u64,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

pub fn run_theorem1_sweep(sweep: &Theorem1Sweep) -> Result<Vec<StabilityReport>> {
    sweep.trials().par_iter().map(run_theorem1_trial).collect()
}
