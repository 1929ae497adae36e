//! Rician channel and task-arrival generators, the prediction-error model,
//! and JSON fixtures for scenarios.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CVec;
use crate::model::{Scenario, SystemParams};

/// Large-scale geometry of the Rician channel model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelGeometry {
    /// AP-user distances in meters.
    pub distances: Vec<f64>,
    pub pathloss_exponent: f64,
    /// Reference path loss at 1 m, linear scale; written in dB as
    /// `reference_pathloss_db`.
    #[serde(rename = "reference_pathloss_db", with = "decibels")]
    pub reference_pathloss: f64,
    /// Rician K-factor; `f64::INFINITY` gives pure line-of-sight.
    pub rician_factor: f64,
}

impl ChannelGeometry {
    /// All users at the same distance, with Ω₀ given in dB.
    pub fn uniform(num_users: usize, distance: f64, pathloss_exponent: f64, reference_db: f64, rician_factor: f64) -> Self {
        Self {
            distances: vec![distance; num_users],
            pathloss_exponent,
            reference_pathloss: db_to_linear(reference_db),
            rician_factor,
        }
    }

    pub fn validate(&self, p: &SystemParams) -> Result<()> {
        if self.distances.len() != p.num_users {
            return Err(Error::Dimension("one distance per user required".into()));
        }
        if self.distances.iter().any(|&d| !(d > 0.0))
            || !(self.pathloss_exponent > 0.0)
            || !(self.rician_factor >= 0.0)
            || !(self.reference_pathloss > 0.0 && self.reference_pathloss <= 1.0)
        {
            return Err(Error::InvalidParameter("invalid channel geometry".into()));
        }
        Ok(())
    }

    /// Amplitudes of the line-of-sight and scattered components for user `k`.
    pub fn component_weights(&self, k: usize) -> (f64, f64) {
        let gain = self.reference_pathloss * self.distances[k].powf(-self.pathloss_exponent);
        if self.rician_factor.is_infinite() {
            return (gain.sqrt(), 0.0);
        }
        let x = self.rician_factor;
        ((x * gain / (1.0 + x)).sqrt(), (gain / (1.0 + x)).sqrt())
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

mod decibels {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(10.0 * x.log10())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        f64::deserialize(d).map(super::db_to_linear)
    }
}

/// Standard deviations of the relative prediction errors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionErrorModel {
    pub sigma_a: f64,
    pub sigma_h: f64,
    pub sigma_g: f64,
}

impl PredictionErrorModel {
    pub fn uniform(sigma: f64) -> Self {
        Self { sigma_a: sigma, sigma_h: sigma, sigma_g: sigma }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.sigma_a, self.sigma_h, self.sigma_g].iter().all(|&s| s >= 0.0 && s.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidParameter("prediction error deviations must be nonnegative".into()))
        }
    }
}

/// Predicted arrivals and channels for every (user, slot) of a true scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictedScenario {
    pub arrivals: Vec<Vec<f64>>,
    pub wpt_channels: Vec<Vec<CVec>>,
    pub offload_channels: Vec<Vec<CVec>>,
}

impl PredictedScenario {
    /// Perfect prediction.
    pub fn exact(truth: &Scenario) -> Self {
        Self {
            arrivals: truth.arrivals.clone(),
            wpt_channels: truth.wpt_channels.clone(),
            offload_channels: truth.offload_channels.clone(),
        }
    }

    pub fn as_scenario(&self) -> Scenario {
        Scenario {
            arrivals: self.arrivals.clone(),
            wpt_channels: self.wpt_channels.clone(),
            offload_channels: self.offload_channels.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        self.as_scenario().to_json()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(Self::exact(&Scenario::from_json(text)?))
    }
}

/// Random quantities drawn per (user, slot) cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    WptScatter = 1,
    OffloadScatter = 2,
    Arrival = 3,
    ArrivalError = 4,
    WptError = 5,
    OffloadError = 6,
    Trial = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a master seed and a list of labels.
pub fn derive_seed(master: u64, labels: &[u64]) -> u64 {
    labels.iter().fold(splitmix64(master), |h, &l| splitmix64(h ^ splitmix64(l)))
}

/// Independent generator for one (user, slot, quantity) cell.
pub fn substream(master: u64, user: usize, slot: usize, what: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, &[what as u64, user as u64, slot as u64]))
}

fn complex_gaussian(rng: &mut ChaCha8Rng, n: usize, std: f64) -> CVec {
    let s = std / std::f64::consts::SQRT_2;
    CVec::from_iterator(
        n,
        (0..n).map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(s * re, s * im)
        }),
    )
}

fn rician(rng: &mut ChaCha8Rng, n: usize, los: f64, scatter: f64) -> CVec {
    loop {
        let v = CVec::from_element(n, Complex64::new(los, 0.0)) + complex_gaussian(rng, n, 1.0) * Complex64::new(scatter, 0.0);
        if v.norm_squared() > 0.0 {
            return v;
        }
    }
}

/// Wireless-power and offloading channels, `[user][slot]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Channels {
    pub wpt: Vec<Vec<CVec>>,
    pub offload: Vec<Vec<CVec>>,
}

/// Draws Rician-faded channels for every user and slot.
pub fn gen_channels(seed: u64, geom: &ChannelGeometry, p: &SystemParams) -> Result<Channels> {
    geom.validate(p)?;
    let nt = p.num_antennas;
    let mut wpt = Vec::with_capacity(p.num_users);
    let mut offload = Vec::with_capacity(p.num_users);
    for k in 0..p.num_users {
        let (los, scatter) = geom.component_weights(k);
        wpt.push(
            (0..p.num_slots)
                .map(|i| rician(&mut substream(seed, k, i, Stream::WptScatter), nt, los, scatter))
                .collect(),
        );
        offload.push(
            (0..p.num_slots)
                .map(|i| rician(&mut substream(seed, k, i, Stream::OffloadScatter), nt, los, scatter))
                .collect(),
        );
    }
    Ok(Channels { wpt, offload })
}

/// Uniform task arrivals on `[low, high]` bits.
pub fn gen_tasks(seed: u64, low: f64, high: f64, p: &SystemParams) -> Result<Vec<Vec<f64>>> {
    if !(low >= 0.0 && low <= high && high.is_finite()) {
        return Err(Error::InvalidParameter(format!("invalid arrival range [{low}, {high}]")));
    }
    Ok((0..p.num_users)
        .map(|k| {
            (0..p.num_slots)
                .map(|i| {
                    if low == high {
                        low
                    } else {
                        substream(seed, k, i, Stream::Arrival).gen_range(low..=high)
                    }
                })
                .collect()
        })
        .collect())
}

/// Convenience: a full scenario from one seed.
pub fn gen_scenario(seed: u64, geom: &ChannelGeometry, low: f64, high: f64, p: &SystemParams) -> Result<Scenario> {
    let ch = gen_channels(seed, geom, p)?;
    Ok(Scenario { arrivals: gen_tasks(seed, low, high, p)?, wpt_channels: ch.wpt, offload_channels: ch.offload })
}

fn perturb_scatter(h: &CVec, los: f64, sigma: f64, rng: &mut ChaCha8Rng) -> CVec {
    if sigma == 0.0 {
        return h.clone();
    }
    let delta = complex_gaussian(rng, h.len(), sigma);
    let mut out = h.clone();
    for (o, (d, x)) in out.iter_mut().zip(delta.iter().zip(h.iter())) {
        let scatter = x - Complex64::new(los, 0.0);
        *o += d * scatter;
    }
    out
}

/// Noisy predictions of a true scenario.
///
/// Arrivals get a real Gaussian relative error and are clamped at zero.
/// Channels get an elementwise complex Gaussian relative error on their
/// scattered component only.
pub fn gen_predictions(
    truth: &Scenario,
    err: &PredictionErrorModel,
    geom: &ChannelGeometry,
    seed: u64,
) -> Result<PredictedScenario> {
    err.validate()?;
    let mut pred = PredictedScenario::exact(truth);
    for k in 0..truth.num_users() {
        let (los, _) = geom.component_weights(k);
        for i in 0..truth.num_slots() {
            if err.sigma_a > 0.0 {
                let d: f64 = Normal::new(0.0, err.sigma_a)
                    .map_err(|e| Error::InvalidParameter(e.to_string()))?
                    .sample(&mut substream(seed, k, i, Stream::ArrivalError));
                pred.arrivals[k][i] = (truth.arrivals[k][i] * (1.0 + d)).max(0.0);
            }
            pred.wpt_channels[k][i] = perturb_scatter(
                &truth.wpt_channels[k][i],
                los,
                err.sigma_h,
                &mut substream(seed, k, i, Stream::WptError),
            );
            pred.offload_channels[k][i] = perturb_scatter(
                &truth.offload_channels[k][i],
                los,
                err.sigma_g,
                &mut substream(seed, k, i, Stream::OffloadError),
            );
            for v in [&mut pred.wpt_channels[k][i], &mut pred.offload_channels[k][i]] {
                if v.norm_squared() == 0.0 {
                    v[0] = Complex64::new(f64::MIN_POSITIVE.sqrt(), 0.0);
                }
            }
        }
    }
    Ok(pred)
}

#[derive(Serialize, Deserialize)]
struct ScenarioDoc {
    num_users: usize,
    num_slots: usize,
    num_antennas: usize,
    arrivals: Vec<Vec<f64>>,
    wpt_channels: Vec<Vec<Vec<[f64; 2]>>>,
    offload_channels: Vec<Vec<Vec<[f64; 2]>>>,
}

pub(crate) fn vec_to_pairs(v: &CVec) -> Vec<[f64; 2]> {
    v.iter().map(|z| [z.re, z.im]).collect()
}

pub(crate) fn pairs_to_vec(v: &[[f64; 2]]) -> CVec {
    CVec::from_iterator(v.len(), v.iter().map(|p| Complex64::new(p[0], p[1])))
}

impl Scenario {
    pub fn to_json(&self) -> Result<String> {
        let conv = |c: &Vec<Vec<CVec>>| c.iter().map(|row| row.iter().map(vec_to_pairs).collect()).collect();
        let doc = ScenarioDoc {
            num_users: self.num_users(),
            num_slots: self.num_slots(),
            num_antennas: self.wpt_channels.first().and_then(|r| r.first()).map_or(0, |h| h.len()),
            arrivals: self.arrivals.clone(),
            wpt_channels: conv(&self.wpt_channels),
            offload_channels: conv(&self.offload_channels),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ScenarioDoc = serde_json::from_str(text)?;
        let conv = |c: &Vec<Vec<Vec<[f64; 2]>>>| -> Vec<Vec<CVec>> {
            c.iter().map(|row| row.iter().map(|v| pairs_to_vec(v)).collect()).collect()
        };
        let scen = Scenario {
            arrivals: doc.arrivals,
            wpt_channels: conv(&doc.wpt_channels),
            offload_channels: conv(&doc.offload_channels),
        };
        let dims_ok = scen.num_users() == doc.num_users
            && scen.arrivals.iter().all(|r| r.len() == doc.num_slots)
            && [&scen.wpt_channels, &scen.offload_channels].iter().all(|c| {
                c.len() == doc.num_users
                    && c.iter().all(|r| r.len() == doc.num_slots && r.iter().all(|h| h.len() == doc.num_antennas))
            });
        if !dims_ok {
            return Err(Error::Dimension("scenario document dimensions are inconsistent".into()));
        }
        Ok(scen)
    }
}
