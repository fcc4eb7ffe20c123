//! Random wireless interference networks.
//!
//! Transmitter `i` is dropped uniformly in `[-m, m]^2` and its receiver
//! uniformly in `tx_i + [-m/4, m/4]^2`. Entry `(i, j)` of the link-state
//! matrix is the log gain from transmitter `i` to receiver `j`,
//! `s_ij = ln(d_ij^-a * h_ij)` with pathloss exponent `a` and Rayleigh fading
//! `h_ij`.
//!
//! Draw order from the seeded stream: all transmitter coordinates
//! (`x` then `y` per pair), then all receiver offsets, then fading samples in
//! row-major order.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::SeededRng;

/// Distances below this are clamped before the pathloss is applied.
pub const MIN_DISTANCE: f64 = 1e-6;

pub const NETWORK_SCHEMA: &str = "mnn-alloc/wireless-network/v1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub pathloss_exponent: f64,
    /// Rayleigh scale `sigma`, the mode of the fading amplitude.
    pub fading_scale: f64,
    /// Standard deviation of the additive log-domain perturbation.
    pub perturb_sigma: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            pathloss_exponent: 2.2,
            fading_scale: 2.0,
            perturb_sigma: 0.0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.pathloss_exponent > 0.0 && self.pathloss_exponent.is_finite()) {
            return Err(invalid("pathloss_exponent must be > 0"));
        }
        if !(self.fading_scale > 0.0 && self.fading_scale.is_finite()) {
            return Err(invalid("fading_scale must be > 0"));
        }
        if !(self.perturb_sigma >= 0.0 && self.perturb_sigma.is_finite()) {
            return Err(invalid("perturb_sigma must be >= 0"));
        }
        Ok(())
    }
}

/// Power budget parameters, all in watts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerParams {
    pub p0: f64,
    pub pmax: f64,
    pub noise_power: f64,
}

impl PowerParams {
    /// `p0 = 1`, `Pmax = m/4 * p0`, unit noise power.
    pub fn for_size(m: usize) -> Self {
        Self {
            p0: 1.0,
            pmax: m as f64 / 4.0,
            noise_power: 1.0,
        }
    }

    /// Same `p0` and noise power, with the budget held at the same fraction
    /// of `m * p0` for a network of `m` pairs.
    pub fn rescaled(&self, from_m: usize, to_m: usize) -> Self {
        Self {
            pmax: self.pmax * to_m as f64 / from_m as f64,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("p0", self.p0),
            ("pmax", self.pmax),
            ("noise_power", self.noise_power),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be > 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WirelessNetwork {
    pub m: usize,
    pub tx_pos: Vec<[f64; 2]>,
    pub rx_pos: Vec<[f64; 2]>,
    /// Log-domain link states, `s[(i, j)]` from transmitter `i` to receiver `j`.
    pub s: DMatrix<f64>,
    pub p0: f64,
    pub pmax: f64,
    pub noise_power: f64,
    pub seed: u64,
}

impl WirelessNetwork {
    pub fn powers(&self) -> PowerParams {
        PowerParams {
            p0: self.p0,
            pmax: self.pmax,
            noise_power: self.noise_power,
        }
    }

    /// Direct-link log states `s_ii`.
    pub fn direct_states(&self) -> Vec<f64> {
        (0..self.m).map(|i| self.s[(i, i)]).collect()
    }

    /// 64-bit fingerprint of the link-state matrix and power parameters.
    pub fn fingerprint(&self) -> u64 {
        let mut h = crate::rng::splitmix64(self.m as u64);
        let mut mix = |x: f64| h = crate::rng::splitmix64(h ^ x.to_bits());
        for v in self.s.transpose().iter() {
            mix(*v);
        }
        mix(self.p0);
        mix(self.pmax);
        mix(self.noise_power);
        h
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(invalid("m must be >= 1"));
        }
        if self.tx_pos.len() != self.m || self.rx_pos.len() != self.m {
            return Err(invalid("position lists must have length m"));
        }
        if self.s.nrows() != self.m || self.s.ncols() != self.m {
            return Err(invalid("link-state matrix must be m x m"));
        }
        if self.s.iter().any(|v| !v.is_finite()) {
            return Err(invalid("link-state matrix has non-finite entries"));
        }
        self.powers().validate()
    }

    pub fn to_document(&self) -> NetworkDocument {
        NetworkDocument {
            schema: NETWORK_SCHEMA.to_string(),
            m: self.m,
            seed: self.seed,
            p0: self.p0,
            pmax: self.pmax,
            noise_power: self.noise_power,
            tx_pos: self.tx_pos.clone(),
            rx_pos: self.rx_pos.clone(),
            s: row_major(&self.s),
        }
    }

    pub fn from_document(doc: NetworkDocument) -> Result<Self> {
        if doc.schema != NETWORK_SCHEMA {
            return Err(Error::Document(format!(
                "unsupported schema '{}', expected '{}'",
                doc.schema, NETWORK_SCHEMA
            )));
        }
        if doc.s.len() != doc.m * doc.m {
            return Err(Error::Document(format!(
                "link-state matrix has {} entries, expected {}",
                doc.s.len(),
                doc.m * doc.m
            )));
        }
        let net = Self {
            m: doc.m,
            s: DMatrix::from_row_slice(doc.m, doc.m, &doc.s),
            tx_pos: doc.tx_pos,
            rx_pos: doc.rx_pos,
            p0: doc.p0,
            pmax: doc.pmax,
            noise_power: doc.noise_power,
            seed: doc.seed,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_document(serde_json::from_str(text)?)
    }
}

/// Serialized form of a [`WirelessNetwork`]. `s` is row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDocument {
    pub schema: String,
    pub m: usize,
    pub seed: u64,
    pub p0: f64,
    pub pmax: f64,
    pub noise_power: f64,
    pub tx_pos: Vec<[f64; 2]>,
    pub rx_pos: Vec<[f64; 2]>,
    pub s: Vec<f64>,
}

pub(crate) fn row_major(a: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len());
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            out.push(a[(i, j)]);
        }
    }
    out
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Log gain for one link; distances under [`MIN_DISTANCE`] are clamped.
pub fn link_state(distance: f64, fading: f64, pathloss_exponent: f64) -> f64 {
    let d = distance.max(MIN_DISTANCE);
    (d.powf(-pathloss_exponent) * fading).ln()
}

pub fn generate_network(
    m: usize,
    params: &ChannelParams,
    powers: &PowerParams,
    seed: u64,
) -> Result<WirelessNetwork> {
    if m == 0 {
        return Err(invalid("m must be >= 1"));
    }
    params.validate()?;
    powers.validate()?;

    let mut rng = SeededRng::new(seed);
    let side = m as f64;
    let tx_pos: Vec<[f64; 2]> = (0..m)
        .map(|_| {
            let x = rng.uniform_range(-side, side);
            let y = rng.uniform_range(-side, side);
            [x, y]
        })
        .collect();
    let reach = side / 4.0;
    let rx_pos: Vec<[f64; 2]> = tx_pos
        .iter()
        .map(|t| {
            let dx = rng.uniform_range(-reach, reach);
            let dy = rng.uniform_range(-reach, reach);
            [t[0] + dx, t[1] + dy]
        })
        .collect();

    let mut s = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            let fading = rng.rayleigh(params.fading_scale);
            s[(i, j)] = link_state(
                distance(tx_pos[i], rx_pos[j]),
                fading,
                params.pathloss_exponent,
            );
        }
    }

    Ok(WirelessNetwork {
        m,
        tx_pos,
        rx_pos,
        s,
        p0: powers.p0,
        pmax: powers.pmax,
        noise_power: powers.noise_power,
        seed,
    })
}

/// Adds i.i.d. `N(0, perturb_sigma^2)` noise to every log-domain link state,
/// which multiplies each linear gain by a log-normal factor. Draws are
/// row-major. Geometry and the recorded seed are unchanged.
pub fn perturb_channel(
    net: &WirelessNetwork,
    perturb_sigma: f64,
    seed: u64,
) -> Result<WirelessNetwork> {
    if !(perturb_sigma >= 0.0 && perturb_sigma.is_finite()) {
        return Err(invalid("perturb_sigma must be >= 0"));
    }
    let mut out = net.clone();
    if perturb_sigma == 0.0 {
        return Ok(out);
    }
    let mut rng = SeededRng::new(seed);
    for i in 0..net.m {
        for j in 0..net.m {
            out.s[(i, j)] += perturb_sigma * rng.gaussian();
        }
    }
    Ok(out)
}

/// Linear power gains `exp(s_ij)`.
pub fn linear_gains(net: &WirelessNetwork) -> DMatrix<f64> {
    net.s.map(f64::exp)
}
