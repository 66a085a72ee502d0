//! Snapshot assembly and least-squares identification of lifted linear
//! predictors `z+ = A z + B u`, `x = C z`.
//!
//! Three data paths are supported: raw data, dither-quantized states and
//! inputs (observables evaluated on decoded states), and dither-quantized
//! observables. The ridge fit and the mismatch bound work from second-moment
//! accumulators so they never need the snapshot matrices themselves.

mod lstsq;
pub mod model_file;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::dynamics::TrajectorySet;
use crate::error::{Error, Result};
use crate::quantization::{dither_quantize_vector, DitherStream, QuantizerBank};
use crate::seeds::derive_seed;

pub use lstsq::{singular_values, solve_rows, SolveInfo};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum QuantizationMode {
    #[default]
    None,
    /// States and inputs are dither-quantized; observables see decoded states.
    StateInput,
    /// Observables and inputs are dither-quantized directly.
    Observable,
}

impl std::str::FromStr for QuantizationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "state-input" => Ok(Self::StateInput),
            "observable" => Ok(Self::Observable),
            other => Err(Error::Config(format!("unknown quantization mode '{other}'"))),
        }
    }
}

/// How quantizer ranges are chosen for one signal group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum RangeSpec {
    /// Per-coordinate min/max of the training data widened by 5% per side.
    #[default]
    FromData,
    /// One range shared by every coordinate.
    Shared { lo: f64, hi: f64 },
    PerCoordinate { ranges: Vec<[f64; 2]> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizationConfig {
    pub mode: QuantizationMode,
    pub word_length: u32,
    #[serde(default)]
    pub state_ranges: RangeSpec,
    #[serde(default)]
    pub input_ranges: RangeSpec,
    #[serde(default)]
    pub observable_ranges: RangeSpec,
}

impl QuantizationConfig {
    pub fn none() -> Self {
        Self {
            mode: QuantizationMode::None,
            word_length: 32,
            state_ranges: RangeSpec::FromData,
            input_ranges: RangeSpec::FromData,
            observable_ranges: RangeSpec::FromData,
        }
    }

    pub fn with_mode(mode: QuantizationMode, word_length: u32) -> Self {
        Self {
            mode,
            word_length,
            ..Self::none()
        }
    }
}

/// Quantizers actually used to build a snapshot set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum QuantizationTag {
    None,
    StateInput {
        word_length: u32,
        seed: u64,
        state: QuantizerBank,
        input: QuantizerBank,
    },
    Observable {
        word_length: u32,
        seed: u64,
        observables: QuantizerBank,
        input: QuantizerBank,
    },
}

impl QuantizationTag {
    pub fn mode(&self) -> QuantizationMode {
        match self {
            QuantizationTag::None => QuantizationMode::None,
            QuantizationTag::StateInput { .. } => QuantizationMode::StateInput,
            QuantizationTag::Observable { .. } => QuantizationMode::Observable,
        }
    }

    pub fn word_length(&self) -> Option<u32> {
        match self {
            QuantizationTag::None => None,
            QuantizationTag::StateInput { word_length, .. }
            | QuantizationTag::Observable { word_length, .. } => Some(*word_length),
        }
    }
}

/// Column-aligned snapshot matrices. Column `t` pairs `(phi_t, u_t)` with its
/// successor `phi_plus_t`; pairs never straddle two trajectories.
#[derive(Debug, Clone)]
pub struct SnapshotSet {
    pub phi: DMatrix<f64>,
    pub phi_plus: DMatrix<f64>,
    pub inputs: DMatrix<f64>,
    /// States behind the `phi` columns (decoded when states were quantized).
    pub states: DMatrix<f64>,
    pub tag: QuantizationTag,
    pub saturations: usize,
}

impl SnapshotSet {
    pub fn new(phi: DMatrix<f64>, phi_plus: DMatrix<f64>, inputs: DMatrix<f64>) -> Result<Self> {
        let t = phi.ncols();
        for (what, cols) in [("phi_plus", phi_plus.ncols()), ("inputs", inputs.ncols())] {
            if cols != t {
                return Err(Error::DimensionMismatch {
                    context: what,
                    expected: t,
                    actual: cols,
                });
            }
        }
        if phi_plus.nrows() != phi.nrows() {
            return Err(Error::DimensionMismatch {
                context: "phi_plus rows",
                expected: phi.nrows(),
                actual: phi_plus.nrows(),
            });
        }
        Ok(Self {
            states: DMatrix::zeros(0, t),
            phi,
            phi_plus,
            inputs,
            tag: QuantizationTag::None,
            saturations: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.phi.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.ncols() == 0
    }

    pub fn lifted_dim(&self) -> usize {
        self.phi.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.nrows()
    }

    /// `Psi = [Phi; U]`.
    pub fn psi(&self) -> DMatrix<f64> {
        let (n, m, t) = (self.lifted_dim(), self.input_dim(), self.len());
        let mut psi = DMatrix::zeros(n + m, t);
        psi.rows_mut(0, n).copy_from(&self.phi);
        psi.rows_mut(n, m).copy_from(&self.inputs);
        psi
    }

    /// First `count` columns.
    pub fn truncated(&self, count: usize) -> Self {
        let c = count.min(self.len());
        Self {
            phi: self.phi.columns(0, c).into_owned(),
            phi_plus: self.phi_plus.columns(0, c).into_owned(),
            inputs: self.inputs.columns(0, c).into_owned(),
            states: if self.states.nrows() > 0 {
                self.states.columns(0, c).into_owned()
            } else {
                DMatrix::zeros(0, c)
            },
            tag: self.tag.clone(),
            saturations: self.saturations,
        }
    }
}

fn row_ranges<'a>(rows: usize, cols: impl Iterator<Item = nalgebra::DVectorView<'a, f64>>) -> Vec<(f64, f64)> {
    let mut r = vec![(f64::INFINITY, f64::NEG_INFINITY); rows];
    for c in cols {
        for (i, v) in c.iter().enumerate() {
            r[i].0 = r[i].0.min(*v);
            r[i].1 = r[i].1.max(*v);
        }
    }
    r
}

fn bank_for(spec: &RangeSpec, data: impl FnOnce() -> Vec<(f64, f64)>, dim: usize, b: u32) -> Result<QuantizerBank> {
    use crate::quantization::Quantizer;
    match spec {
        RangeSpec::FromData => QuantizerBank::covering_rows(data(), b),
        RangeSpec::Shared { lo, hi } => Ok(QuantizerBank::Shared(Quantizer::new(*lo, *hi, b)?)),
        RangeSpec::PerCoordinate { ranges } => {
            if ranges.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "quantizer ranges",
                    expected: dim,
                    actual: ranges.len(),
                });
            }
            ranges
                .iter()
                .map(|r| Quantizer::new(r[0], r[1], b))
                .collect::<Result<Vec<_>>>()
                .map(QuantizerBank::PerCoordinate)
        }
    }
}

/// State quantizers for `spec` over the states of `data`.
pub fn state_quantizers(data: &TrajectorySet, spec: &RangeSpec, word_length: u32) -> Result<QuantizerBank> {
    let n = data.state_dim();
    bank_for(
        spec,
        || row_ranges(n, data.trajectories.iter().flat_map(|t| t.states.column_iter())),
        n,
        word_length,
    )
}

/// Resolves the quantizers for `cfg` against `data`.
pub fn resolve_quantizers(data: &TrajectorySet, dict: &Dictionary, cfg: &QuantizationConfig) -> Result<QuantizationTag> {
    let b = cfg.word_length;
    let (n, m) = (data.state_dim(), data.input_dim());
    let input = || {
        bank_for(
            &cfg.input_ranges,
            || row_ranges(m, data.trajectories.iter().flat_map(|t| t.inputs.column_iter())),
            m,
            b,
        )
    };
    Ok(match cfg.mode {
        QuantizationMode::None => QuantizationTag::None,
        QuantizationMode::StateInput => QuantizationTag::StateInput {
            word_length: b,
            seed: 0,
            state: bank_for(
                &cfg.state_ranges,
                || row_ranges(n, data.trajectories.iter().flat_map(|t| t.states.column_iter())),
                n,
                b,
            )?,
            input: input()?,
        },
        QuantizationMode::Observable => {
            let nl = dict.lifted_dim();
            let observables = bank_for(
                &cfg.observable_ranges,
                || {
                    let mut r = vec![(f64::INFINITY, f64::NEG_INFINITY); nl];
                    let mut z = vec![0.0; nl];
                    for tr in &data.trajectories {
                        for c in tr.states.column_iter() {
                            let x: Vec<f64> = c.iter().copied().collect();
                            if dict.lift_into(&x, &mut z).is_ok() {
                                for (ri, v) in r.iter_mut().zip(&z) {
                                    ri.0 = ri.0.min(*v);
                                    ri.1 = ri.1.max(*v);
                                }
                            }
                        }
                    }
                    r
                },
                nl,
                b,
            )?;
            QuantizationTag::Observable {
                word_length: b,
                seed: 0,
                observables,
                input: input()?,
            }
        }
    })
}

struct Block {
    phi: DMatrix<f64>,
    phi_plus: DMatrix<f64>,
    inputs: DMatrix<f64>,
    states: DMatrix<f64>,
    saturations: usize,
}

fn assemble_trajectory(
    tr: &crate::dynamics::Trajectory,
    dict: &Dictionary,
    tag: &QuantizationTag,
    stream: &mut DitherStream,
) -> Result<Block> {
    let n = dict.state_dim();
    let nl = dict.lifted_dim();
    let m = tr.inputs.nrows();
    let len = tr.len();
    if len < 1 {
        return Err(Error::InvalidArgument("trajectory must contain at least two states".into()));
    }
    let mut lifted = DMatrix::zeros(nl, len + 1);
    let mut states = DMatrix::zeros(n, len + 1);
    let mut inputs = DMatrix::zeros(m, len);
    let mut saturations = 0;
    let mut z = vec![0.0; nl];
    for t in 0..=len {
        let x: Vec<f64> = tr.states.column(t).iter().copied().collect();
        let (x_used, z_col) = match tag {
            QuantizationTag::None => {
                dict.lift_into(&x, &mut z)?;
                (x, z.clone())
            }
            QuantizationTag::StateInput { state, .. } => {
                let (xq, s) = dither_quantize_vector(state, &x, stream)?;
                saturations += s;
                dict.lift_into(&xq, &mut z)?;
                (xq, z.clone())
            }
            QuantizationTag::Observable { observables, .. } => {
                let (zq, s) = dict.lift_quantized_observables(&x, observables, stream)?;
                saturations += s;
                (x, zq)
            }
        };
        lifted.set_column(t, &DVector::from_vec(z_col));
        states.set_column(t, &DVector::from_vec(x_used));
        if t < len {
            let u: Vec<f64> = tr.inputs.column(t).iter().copied().collect();
            let u_used = match tag {
                QuantizationTag::None => u,
                QuantizationTag::StateInput { input, .. } | QuantizationTag::Observable { input, .. } => {
                    let (uq, s) = dither_quantize_vector(input, &u, stream)?;
                    saturations += s;
                    uq
                }
            };
            inputs.set_column(t, &DVector::from_vec(u_used));
        }
    }
    Ok(Block {
        phi: lifted.columns(0, len).into_owned(),
        phi_plus: lifted.columns(1, len).into_owned(),
        inputs,
        states: states.columns(0, len).into_owned(),
        saturations,
    })
}

/// Builds `(Phi, Phi+, U)` from every trajectory of `data`.
///
/// Each stored sample is quantized once and reused in both `Phi` and `Phi+`.
/// Trajectory `k` draws its dither from `derive_seed(seed, "dither", [k])`.
pub fn assemble_snapshots(
    data: &TrajectorySet,
    dict: &Dictionary,
    cfg: &QuantizationConfig,
    seed: u64,
) -> Result<SnapshotSet> {
    let tag = resolve_quantizers(data, dict, cfg)?;
    assemble_with_tag(data, dict, tag, seed)
}

/// As [`assemble_snapshots`] with quantizers fixed in advance; the seed
/// stored in `tag` is replaced by `seed`.
pub fn assemble_with_tag(
    data: &TrajectorySet,
    dict: &Dictionary,
    mut tag: QuantizationTag,
    seed: u64,
) -> Result<SnapshotSet> {
    if data.trajectories.is_empty() {
        return Err(Error::InvalidArgument("no trajectories".into()));
    }
    if data.state_dim() != dict.state_dim() {
        return Err(Error::DimensionMismatch {
            context: "dictionary state dimension",
            expected: dict.state_dim(),
            actual: data.state_dim(),
        });
    }
    match &mut tag {
        QuantizationTag::None => {}
        QuantizationTag::StateInput { seed: s, .. } | QuantizationTag::Observable { seed: s, .. } => *s = seed,
    }
    let blocks = data
        .trajectories
        .par_iter()
        .enumerate()
        .map(|(k, tr)| {
            let mut stream = DitherStream::new(derive_seed(seed, "dither", &[k as u64]));
            assemble_trajectory(tr, dict, &tag, &mut stream)
        })
        .collect::<Result<Vec<_>>>()?;
    let total: usize = blocks.iter().map(|b| b.phi.ncols()).sum();
    let (nl, m, n) = (dict.lifted_dim(), data.input_dim(), dict.state_dim());
    let mut phi = DMatrix::zeros(nl, total);
    let mut phi_plus = DMatrix::zeros(nl, total);
    let mut inputs = DMatrix::zeros(m, total);
    let mut states = DMatrix::zeros(n, total);
    let mut offset = 0;
    let mut saturations = 0;
    for b in blocks {
        let c = b.phi.ncols();
        phi.columns_mut(offset, c).copy_from(&b.phi);
        phi_plus.columns_mut(offset, c).copy_from(&b.phi_plus);
        inputs.columns_mut(offset, c).copy_from(&b.inputs);
        states.columns_mut(offset, c).copy_from(&b.states);
        saturations += b.saturations;
        offset += c;
    }
    Ok(SnapshotSet {
        phi,
        phi_plus,
        inputs,
        states,
        tag,
        saturations,
    })
}

/// `[A, B]` of a lifted model, without decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl LiftedModel {
    pub fn from_g(g: &DMatrix<f64>, lifted_dim: usize) -> Self {
        let m = g.ncols() - lifted_dim;
        Self {
            a: g.columns(0, lifted_dim).into_owned(),
            b: g.columns(lifted_dim, m).into_owned(),
        }
    }

    pub fn g(&self) -> DMatrix<f64> {
        let (n, m) = (self.a.nrows(), self.b.ncols());
        let mut g = DMatrix::zeros(n, n + m);
        g.columns_mut(0, n).copy_from(&self.a);
        g.columns_mut(n, m).copy_from(&self.b);
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitReport {
    /// `sqrt(||Phi+ - A Phi - B U||_F^2 / T)`.
    pub residual_rms: f64,
    pub rank_used: usize,
    pub regularizer_lambda: f64,
    pub condition_estimate: f64,
    pub rank_tolerance: f64,
}

fn residual_rms(s: &SnapshotSet, g: &DMatrix<f64>) -> f64 {
    let r = &s.phi_plus - g * s.psi();
    (r.norm_squared() / s.len() as f64).sqrt()
}

/// Least-squares EDMD with control: the minimum-norm minimizer of
/// `(1/T) ||Phi+ - A Phi - B U||^2`.
pub fn edmd_fit(s: &SnapshotSet) -> Result<(LiftedModel, FitReport)> {
    if s.is_empty() {
        return Err(Error::InvalidArgument("empty snapshot set".into()));
    }
    let psi = s.psi();
    let (g, info) = solve_rows(&s.phi_plus, &psi)?;
    let report = FitReport {
        residual_rms: residual_rms(s, &g),
        rank_used: info.rank,
        regularizer_lambda: 0.0,
        condition_estimate: info.condition,
        rank_tolerance: info.tolerance,
    };
    Ok((LiftedModel::from_g(&g, s.lifted_dim()), report))
}

/// Least-squares decoder `C = argmin (1/T) ||X - C Phi||^2`.
pub fn fit_decoder(states: &DMatrix<f64>, phi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    solve_rows(states, phi).map(|(c, _)| c)
}

/// Row selector `[I_n, 0]`.
pub fn state_selector(n: usize, lifted_dim: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, lifted_dim, |i, j| if i == j { 1.0 } else { 0.0 })
}

/// Decoder for `dict`: the exact selector when the dictionary carries the
/// state block, a least-squares fit otherwise.
pub fn decoder_for(dict: &Dictionary, s: &SnapshotSet) -> Result<DMatrix<f64>> {
    if dict.has_state_block() {
        Ok(state_selector(dict.state_dim(), dict.lifted_dim()))
    } else {
        fit_decoder(&s.states, &s.phi)
    }
}

/// Running second moments `Psi Psi^T` and `Phi+ Psi^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramAccumulator {
    pub psi_psi: DMatrix<f64>,
    pub target_psi: DMatrix<f64>,
    pub count: usize,
    lifted_dim: usize,
}

impl GramAccumulator {
    pub fn new(lifted_dim: usize, input_dim: usize) -> Self {
        let p = lifted_dim + input_dim;
        Self {
            psi_psi: DMatrix::zeros(p, p),
            target_psi: DMatrix::zeros(lifted_dim, p),
            count: 0,
            lifted_dim,
        }
    }

    pub fn from_snapshots(s: &SnapshotSet) -> Self {
        let mut acc = Self::new(s.lifted_dim(), s.input_dim());
        acc.add(s);
        acc
    }

    pub fn add(&mut self, s: &SnapshotSet) {
        let psi = s.psi();
        self.psi_psi += &psi * psi.transpose();
        self.target_psi += &s.phi_plus * psi.transpose();
        self.count += s.len();
    }

    /// Adds a single column.
    pub fn push(&mut self, z: &[f64], u: &[f64], z_next: &[f64]) {
        let psi = DVector::from_iterator(z.len() + u.len(), z.iter().chain(u).copied());
        self.psi_psi.ger(1.0, &psi, &psi, 1.0);
        self.target_psi
            .ger(1.0, &DVector::from_column_slice(z_next), &psi, 1.0);
        self.count += 1;
    }

    pub fn merge(&mut self, other: &Self) {
        self.psi_psi += &other.psi_psi;
        self.target_psi += &other.target_psi;
        self.count += other.count;
    }

    /// `G = (Phi+ Psi^T) (Psi Psi^T + T lambda I)^{-1}`.
    pub fn ridge_solve(&self, lambda: f64) -> Result<LiftedModel> {
        if !(lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
        }
        if self.count == 0 {
            return Err(Error::InvalidArgument("no samples accumulated".into()));
        }
        let p = self.psi_psi.nrows();
        let mut m = self.psi_psi.clone();
        let shift = self.count as f64 * lambda;
        for i in 0..p {
            m[(i, i)] += shift;
        }
        let chol = m.cholesky().ok_or(Error::Numerical {
            context: "ridge normal equations",
            condition: f64::INFINITY,
        })?;
        // G M = Phi+ Psi^T  <=>  M G^T = (Phi+ Psi^T)^T
        let g = chol.solve(&self.target_psi.transpose()).transpose();
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical {
                context: "ridge solve",
                condition: f64::INFINITY,
            });
        }
        Ok(LiftedModel::from_g(&g, self.lifted_dim))
    }

    /// `(eps^2/12) || (Psi Psi^T / T + eps^2/12 I)^{-1} ||_2` from the
    /// accumulated Gram matrix. Eigenvalues below `p * eps_mach * lambda_max`
    /// are unresolvable in this form and count as rank loss; prefer
    /// [`mismatch_bound`] when the snapshots are in memory.
    pub fn mismatch_bound(&self, eps: f64) -> Result<f64> {
        if self.count == 0 {
            return Err(Error::InvalidArgument("no samples accumulated".into()));
        }
        let p = self.psi_psi.nrows();
        let second = &self.psi_psi / self.count as f64;
        let eig = second.symmetric_eigenvalues();
        let lmax = eig.max();
        let tol = p as f64 * f64::EPSILON * lmax;
        let rank = eig.iter().filter(|&&l| l > tol).count();
        if rank < p {
            return Err(Error::RankDeficient { rank, required: p });
        }
        let noise = eps * eps / 12.0;
        if noise == 0.0 {
            return Ok(0.0);
        }
        Ok(noise / (eig.min() + noise))
    }
}

/// Ridge-regularized EDMD, minimizer of
/// `(1/T) ||Phi+ - G Psi||^2 + lambda ||G||^2`.
pub fn ridge_fit(s: &SnapshotSet, lambda: f64) -> Result<LiftedModel> {
    GramAccumulator::from_snapshots(s).ridge_solve(lambda)
}

/// Upper bound `(eps^2/12) / (lambda_min(Psi Psi^T / T) + eps^2/12)` on the
/// normalized identification error caused by quantizing observables with
/// resolution `eps`. `lambda_min` comes from the singular values of `Psi`,
/// with the rank tolerance of [`edmd_fit`].
pub fn mismatch_bound(s: &SnapshotSet, eps: f64) -> Result<f64> {
    if s.is_empty() {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    let psi = s.psi();
    let p = psi.nrows();
    let (sigma, tol) = singular_values(&psi);
    let rank = sigma.iter().filter(|&&v| v > tol).count();
    if rank < p {
        return Err(Error::RankDeficient { rank, required: p });
    }
    let noise = eps * eps / 12.0;
    if noise == 0.0 {
        return Ok(0.0);
    }
    let lambda_min = sigma[p - 1].powi(2) / s.len() as f64;
    Ok(noise / (lambda_min + noise))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateGap {
    pub rel_a: f64,
    pub rel_b: f64,
    pub rel_g: f64,
}

/// Frobenius-norm relative differences of `quantized` against `reference`.
pub fn estimate_gap(reference: &LiftedModel, quantized: &LiftedModel) -> Result<EstimateGap> {
    if reference.a.shape() != quantized.a.shape() || reference.b.shape() != quantized.b.shape() {
        return Err(Error::DimensionMismatch {
            context: "estimate gap",
            expected: reference.a.len() + reference.b.len(),
            actual: quantized.a.len() + quantized.b.len(),
        });
    }
    let rel = |r: &DMatrix<f64>, q: &DMatrix<f64>| {
        let d = r.norm();
        if d == 0.0 {
            Err(Error::ZeroDenominator)
        } else {
            Ok((r - q).norm() / d)
        }
    };
    Ok(EstimateGap {
        rel_a: rel(&reference.a, &quantized.a)?,
        rel_b: rel(&reference.b, &quantized.b)?,
        rel_g: rel(&reference.g(), &quantized.g())?,
    })
}

/// Identified predictor with decoder and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPredictor {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub dictionary: Dictionary,
    pub meta: PredictorMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct PredictorMeta {
    #[serde(default)]
    pub plant: Option<String>,
    #[serde(default)]
    pub quantization: Option<QuantizationTag>,
    #[serde(default)]
    pub training_seed: Option<u64>,
    #[serde(default)]
    pub dither_seed: Option<u64>,
}

impl LinearPredictor {
    pub fn new(model: LiftedModel, c: DMatrix<f64>, dictionary: Dictionary) -> Result<Self> {
        let nl = dictionary.lifted_dim();
        if model.a.shape() != (nl, nl) {
            return Err(Error::DimensionMismatch {
                context: "A rows",
                expected: nl,
                actual: model.a.nrows(),
            });
        }
        if model.b.nrows() != nl {
            return Err(Error::DimensionMismatch {
                context: "B rows",
                expected: nl,
                actual: model.b.nrows(),
            });
        }
        if c.shape() != (dictionary.state_dim(), nl) {
            return Err(Error::DimensionMismatch {
                context: "C columns",
                expected: nl,
                actual: c.ncols(),
            });
        }
        if model.a.iter().chain(model.b.iter()).chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("predictor matrices"));
        }
        Ok(Self {
            a: model.a,
            b: model.b,
            c,
            dictionary,
            meta: PredictorMeta::default(),
        })
    }

    pub fn lifted_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn state_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn model(&self) -> LiftedModel {
        LiftedModel {
            a: self.a.clone(),
            b: self.b.clone(),
        }
    }
}

/// Assembles snapshots, fits `[A, B]` and attaches the decoder.
pub fn identify(
    data: &TrajectorySet,
    dict: &Dictionary,
    cfg: &QuantizationConfig,
    dither_seed: u64,
) -> Result<(LinearPredictor, FitReport, SnapshotSet)> {
    let snaps = assemble_snapshots(data, dict, cfg, dither_seed)?;
    let (model, report) = edmd_fit(&snaps)?;
    let c = decoder_for(dict, &snaps)?;
    let mut p = LinearPredictor::new(model, c, dict.clone())?;
    p.meta = PredictorMeta {
        plant: Some(data.plant.clone()),
        quantization: Some(snaps.tag.clone()),
        training_seed: Some(data.seed),
        dither_seed: (cfg.mode != QuantizationMode::None).then_some(dither_seed),
    };
    Ok((p, report, snaps))
}
