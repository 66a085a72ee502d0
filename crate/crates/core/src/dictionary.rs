//! Lifting dictionaries `phi(x) = [phi_1(x), ..., phi_N(x)]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantization::{DitherStream, QuantizerBank};
use crate::seeds::rng_from_seed;

/// Thin-plate spline kernel `r^2 log r` written in terms of `r^2`; the
/// removable singularity at `r = 0` is filled with its limit 0.
#[inline]
pub fn thin_plate(r2: f64) -> f64 {
    if r2 == 0.0 {
        0.0
    } else {
        0.5 * r2 * r2.ln()
    }
}

/// A single scalar observable of a custom dictionary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Observable {
    State { i: usize },
    Square { i: usize },
    Product { i: usize, j: usize },
    ThinPlate { center: Vec<f64> },
    Constant,
}

impl Observable {
    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Observable::State { i } => x[*i],
            Observable::Square { i } => x[*i] * x[*i],
            Observable::Product { i, j } => x[*i] * x[*j],
            Observable::ThinPlate { center } => thin_plate(sq_dist(x, center)),
            Observable::Constant => 1.0,
        }
    }

    fn max_index(&self) -> Option<usize> {
        match self {
            Observable::State { i } | Observable::Square { i } => Some(*i),
            Observable::Product { i, j } => Some((*i).max(*j)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DictionaryKind {
    /// `[x_1..x_n, tps(x - c_1), ..., tps(x - c_K)]`.
    StateTps { centers: Vec<Vec<f64>> },
    /// `[x_i, x_i^2, x_i x_{i+1 mod mesh}, 1]` for a periodic mesh.
    KdvPoly { mesh: usize },
    Custom { observables: Vec<Observable> },
}

/// An ordered, immutable list of lifting functions. Serializes to the
/// descriptor stored in experiment configs and predictor files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dictionary {
    state_dim: usize,
    #[serde(flatten)]
    kind: DictionaryKind,
    /// Seed the RBF centers were drawn with, when they were sampled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    center_seed: Option<u64>,
}

fn sq_dist(x: &[f64], c: &[f64]) -> f64 {
    x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum()
}

impl Dictionary {
    pub fn tps(state_dim: usize, centers: Vec<Vec<f64>>) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::InvalidArgument("TPS dictionary needs at least one center".into()));
        }
        if let Some(c) = centers.iter().find(|c| c.len() != state_dim) {
            return Err(Error::DimensionMismatch {
                context: "TPS center",
                expected: state_dim,
                actual: c.len(),
            });
        }
        Ok(Self {
            state_dim,
            kind: DictionaryKind::StateTps { centers },
            center_seed: None,
        })
    }

    /// TPS dictionary with `count` centers drawn uniformly from `[lo, hi]^n`.
    pub fn tps_sampled(state_dim: usize, count: usize, lo: f64, hi: f64, seed: u64) -> Result<Self> {
        let mut rng = rng_from_seed(seed);
        let centers = (0..count)
            .map(|_| (0..state_dim).map(|_| rng.random_range(lo..hi)).collect())
            .collect();
        let mut d = Self::tps(state_dim, centers)?;
        d.center_seed = Some(seed);
        Ok(d)
    }

    pub fn kdv(mesh: usize) -> Result<Self> {
        if mesh < 2 {
            return Err(Error::InvalidArgument(format!("KdV mesh must be >= 2, got {mesh}")));
        }
        Ok(Self {
            state_dim: mesh,
            kind: DictionaryKind::KdvPoly { mesh },
            center_seed: None,
        })
    }

    /// The state itself, no lifting.
    pub fn identity(state_dim: usize) -> Self {
        Self {
            state_dim,
            kind: DictionaryKind::Custom {
                observables: (0..state_dim).map(|i| Observable::State { i }).collect(),
            },
            center_seed: None,
        }
    }

    pub fn custom(state_dim: usize, observables: Vec<Observable>) -> Result<Self> {
        if observables.is_empty() {
            return Err(Error::InvalidArgument("empty observable list".into()));
        }
        for o in &observables {
            let bad = match o {
                Observable::ThinPlate { center } => (center.len() != state_dim).then_some(center.len()),
                _ => o.max_index().filter(|&i| i >= state_dim).map(|i| i + 1),
            };
            if let Some(actual) = bad {
                return Err(Error::DimensionMismatch {
                    context: "custom observable",
                    expected: state_dim,
                    actual,
                });
            }
        }
        Ok(Self {
            state_dim,
            kind: DictionaryKind::Custom { observables },
            center_seed: None,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn kind(&self) -> &DictionaryKind {
        &self.kind
    }

    pub fn center_seed(&self) -> Option<u64> {
        self.center_seed
    }

    pub fn lifted_dim(&self) -> usize {
        match &self.kind {
            DictionaryKind::StateTps { centers } => self.state_dim + centers.len(),
            DictionaryKind::KdvPoly { mesh } => 3 * mesh + 1,
            DictionaryKind::Custom { observables } => observables.len(),
        }
    }

    /// Whether rows `0..n` of the lift are the state itself.
    pub fn has_state_block(&self) -> bool {
        match &self.kind {
            DictionaryKind::StateTps { .. } | DictionaryKind::KdvPoly { .. } => true,
            DictionaryKind::Custom { observables } => {
                observables.len() >= self.state_dim
                    && observables[..self.state_dim]
                        .iter()
                        .enumerate()
                        .all(|(k, o)| *o == Observable::State { i: k })
            }
        }
    }

    pub fn lift(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.lifted_dim()];
        self.lift_into(x, &mut out)?;
        Ok(out)
    }

    /// Evaluates the dictionary into `out` (length `lifted_dim`).
    pub fn lift_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        if x.len() != self.state_dim {
            return Err(Error::DimensionMismatch {
                context: "lift input",
                expected: self.state_dim,
                actual: x.len(),
            });
        }
        if out.len() != self.lifted_dim() {
            return Err(Error::DimensionMismatch {
                context: "lift output",
                expected: self.lifted_dim(),
                actual: out.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("lift input"));
        }
        match &self.kind {
            DictionaryKind::StateTps { centers } => {
                let n = self.state_dim;
                out[..n].copy_from_slice(x);
                for (o, c) in out[n..].iter_mut().zip(centers) {
                    *o = thin_plate(sq_dist(x, c));
                }
            }
            DictionaryKind::KdvPoly { mesh } => {
                let m = *mesh;
                for i in 0..m {
                    out[i] = x[i];
                    out[m + i] = x[i] * x[i];
                    out[2 * m + i] = x[i] * x[(i + 1) % m];
                }
                out[3 * m] = 1.0;
            }
            DictionaryKind::Custom { observables } => {
                for (o, obs) in out.iter_mut().zip(observables) {
                    *o = obs.eval(x);
                }
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("lift output"));
        }
        Ok(())
    }

    /// Quantizes the observables themselves: `Q(phi_i(x) + w_i) - w_i` with an
    /// independent dither sample per coordinate. Returns the lifted vector and
    /// the number of saturated observables.
    pub fn lift_quantized_observables(
        &self,
        x: &[f64],
        bank: &QuantizerBank,
        stream: &mut DitherStream,
    ) -> Result<(Vec<f64>, usize)> {
        let z = self.lift(x)?;
        crate::quantization::dither_quantize_vector(bank, &z, stream)
    }
}
