//! Factorized reparameterized Gaussian approximations.
//!
//! A latent vector is produced coordinate-wise as `z = T(μ + σ ε)` with
//! `ε ~ N(0, I)`, `σ = exp(ρ)` and `T` a fixed, parameter-free constraining
//! transform (identity, softplus, or a stick-breaking block that maps `K − 1`
//! reals into the interior of the `K`-simplex). The approximation parameters
//! are stored flat as `[μ_0 .. μ_{D−1}, ρ_0 .. ρ_{D−1}]`, and the coordinates
//! are grouped into factors that share one importance weight.

use std::ops::Deref;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `½ ln(2π)`
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Default initial scale `σ = 0.1`.
pub const DEFAULT_INIT_LOG_SCALE: f64 = -2.302_585_092_994_046;

#[inline]
pub fn log_std_normal(u: f64) -> f64 {
    -0.5 * u * u - HALF_LN_2PI
}

#[inline]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

/// Inverse of [`softplus`]; only defined for `z > 0`.
#[inline]
pub fn softplus_inv(z: f64) -> f64 {
    if z > 1.0 {
        z + (-(-z).exp_m1()).ln()
    } else {
        z.exp_m1().ln()
    }
}

#[inline]
fn log_sigmoid(t: f64) -> f64 {
    -softplus(-t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransformKind {
    Identity,
    Softplus,
    /// `K − 1` unconstrained coordinates mapped to the first `K − 1` weights
    /// of a `K`-simplex; the last weight is implied.
    StickBreaking,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransformBlock {
    pub kind: TransformKind,
    pub start: usize,
    pub len: usize,
}

impl TransformBlock {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// Contiguous transform blocks covering every coordinate.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CoordinateLayout {
    blocks: Vec<TransformBlock>,
    dim: usize,
}

impl CoordinateLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn identity(dim: usize) -> Self {
        Self::new().with(TransformKind::Identity, dim)
    }

    /// Appends a block of `len` coordinates. Empty blocks are skipped.
    pub fn with(mut self, kind: TransformKind, len: usize) -> Self {
        if len > 0 {
            self.blocks.push(TransformBlock {
                kind,
                start: self.dim,
                len,
            });
            self.dim += len;
        }
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[TransformBlock] {
        &self.blocks
    }

    pub fn kind_of(&self, index: usize) -> Option<TransformKind> {
        self.blocks
            .iter()
            .find(|b| b.range().contains(&index))
            .map(|b| b.kind)
    }

    /// Maps unconstrained `u` to `T(u)` and returns `log |det J_T(u)|`.
    pub fn constrain(&self, u: &[f64]) -> (Vec<f64>, f64) {
        let mut z = vec![0.0; u.len()];
        let mut log_jac = 0.0;
        for block in &self.blocks {
            let r = block.range();
            match block.kind {
                TransformKind::Identity => z[r.clone()].copy_from_slice(&u[r]),
                TransformKind::Softplus => {
                    for i in r {
                        z[i] = softplus(u[i]);
                        log_jac += log_sigmoid(u[i]);
                    }
                }
                TransformKind::StickBreaking => {
                    log_jac += stick_breaking_forward(&u[r.clone()], &mut z[r]);
                }
            }
        }
        (z, log_jac)
    }

    /// `log |det J_T(u)|` alone.
    pub fn log_jacobian(&self, u: &[f64]) -> f64 {
        self.constrain(u).1
    }

    /// Inverse of [`constrain`](Self::constrain).
    pub fn unconstrain(&self, z: &[f64]) -> Result<Vec<f64>> {
        let (u, valid) = self.unconstrain_masked(z);
        match valid.iter().position(|ok| !ok) {
            Some(index) => Err(Error::OutOfRange {
                index,
                value: z[index],
            }),
            None => Ok(u),
        }
    }

    /// Like [`unconstrain`](Self::unconstrain) but never fails: coordinates
    /// outside the range of their transform are set to 0 and flagged `false`.
    /// An invalid stick-breaking coordinate invalidates its whole block.
    pub fn unconstrain_masked(&self, z: &[f64]) -> (Vec<f64>, Vec<bool>) {
        let mut u = vec![0.0; z.len()];
        let mut valid = vec![true; z.len()];
        for block in &self.blocks {
            let r = block.range();
            match block.kind {
                TransformKind::Identity => {
                    for i in r {
                        if z[i].is_finite() {
                            u[i] = z[i];
                        } else {
                            valid[i] = false;
                        }
                    }
                }
                TransformKind::Softplus => {
                    for i in r {
                        if z[i] > 0.0 && z[i].is_finite() {
                            u[i] = softplus_inv(z[i]);
                        } else {
                            valid[i] = false;
                        }
                    }
                }
                TransformKind::StickBreaking => {
                    if stick_breaking_inverse(&z[r.clone()], &mut u[r.clone()]).is_err() {
                        for i in r {
                            u[i] = 0.0;
                            valid[i] = false;
                        }
                    }
                }
            }
        }
        (u, valid)
    }

    /// Checks that `z` lies in the range of the transform.
    pub fn check_latent(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: z.len(),
            });
        }
        self.unconstrain(z).map(|_| ())
    }

    /// Gradient with respect to `u` of `h(T(u)) + log |det J_T(u)|`, given
    /// `grad_z = ∇_z h` at `z = T(u)`.
    pub fn pull_back(&self, u: &[f64], grad_z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        for block in &self.blocks {
            let r = block.range();
            match block.kind {
                TransformKind::Identity => out[r.clone()].copy_from_slice(&grad_z[r]),
                TransformKind::Softplus => {
                    for i in r {
                        let s = sigmoid(u[i]);
                        out[i] = grad_z[i] * s + (1.0 - s);
                    }
                }
                TransformKind::StickBreaking => {
                    stick_breaking_pull_back(&u[r.clone()], &grad_z[r.clone()], &mut out[r]);
                }
            }
        }
        out
    }
}

/// Logistic stick-breaking with the `ln(K − 1 − k)` shift, so `y = 0` maps to
/// the uniform simplex point. Returns the log-Jacobian of the block.
fn stick_breaking_forward(y: &[f64], x: &mut [f64]) -> f64 {
    let n = y.len();
    let mut remaining = 1.0;
    let mut log_jac = 0.0;
    for k in 0..n {
        let t = y[k] - ((n - k) as f64).ln();
        let frac = sigmoid(t);
        x[k] = remaining * frac;
        log_jac += log_sigmoid(t) + log_sigmoid(-t) + remaining.ln();
        remaining *= 1.0 - frac;
    }
    log_jac
}

fn stick_breaking_inverse(x: &[f64], y: &mut [f64]) -> std::result::Result<(), usize> {
    let n = x.len();
    let mut remaining = 1.0;
    for k in 0..n {
        if !(x[k] > 0.0) || !x[k].is_finite() {
            return Err(k);
        }
        let frac = x[k] / remaining;
        if !(frac < 1.0) {
            return Err(k);
        }
        y[k] = frac.ln() - (-frac).ln_1p() + ((n - k) as f64).ln();
        remaining -= x[k];
    }
    if remaining > 0.0 {
        Ok(())
    } else {
        Err(n - 1)
    }
}

/// Reverse-mode pass through [`stick_breaking_forward`] for
/// `Σ_k g_k x_k + log |det J|`.
fn stick_breaking_pull_back(y: &[f64], g: &[f64], out: &mut [f64]) {
    let n = y.len();
    let mut frac = vec![0.0; n];
    let mut rem = vec![0.0; n];
    let mut remaining = 1.0;
    for k in 0..n {
        frac[k] = sigmoid(y[k] - ((n - k) as f64).ln());
        rem[k] = remaining;
        remaining *= 1.0 - frac[k];
    }
    // adjoint of the stick left after coordinate k
    let mut adj = 0.0;
    for k in (0..n).rev() {
        let (z, r) = (frac[k], rem[k]);
        out[k] = z * (1.0 - z) * (g[k] - adj) * r + (1.0 - z) - z;
        adj = g[k] * z + 1.0 / r + adj * (1.0 - z);
    }
}

/// Disjoint coordinate groups covering `0..dim`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactorPartition {
    groups: Vec<Vec<usize>>,
    owner: Vec<usize>,
}

impl FactorPartition {
    pub fn new(groups: Vec<Vec<usize>>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::EmptyDimension);
        }
        let mut owner = vec![usize::MAX; dim];
        for (s, group) in groups.iter().enumerate() {
            if group.is_empty() {
                return Err(Error::InvalidPartition(format!("factor {s} is empty")));
            }
            for &i in group {
                if i >= dim {
                    return Err(Error::InvalidPartition(format!(
                        "coordinate {i} out of range for dimension {dim}"
                    )));
                }
                if owner[i] != usize::MAX {
                    return Err(Error::InvalidPartition(format!(
                        "coordinate {i} appears in factors {} and {s}",
                        owner[i]
                    )));
                }
                owner[i] = s;
            }
        }
        if let Some(i) = owner.iter().position(|&o| o == usize::MAX) {
            return Err(Error::InvalidPartition(format!(
                "coordinate {i} is not covered"
            )));
        }
        Ok(Self { groups, owner })
    }

    /// One factor per coordinate (mean-field).
    pub fn singletons(dim: usize) -> Result<Self> {
        Self::chunks(dim, 1)
    }

    /// Consecutive groups of `size` coordinates; the last may be shorter.
    pub fn chunks(dim: usize, size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidPartition("factor size must be ≥ 1".into()));
        }
        let groups = (0..dim)
            .collect::<Vec<_>>()
            .chunks(size)
            .map(<[usize]>::to_vec)
            .collect();
        Self::new(groups, dim)
    }

    pub fn num_factors(&self) -> usize {
        self.groups.len()
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn factor_of(&self, coordinate: usize) -> usize {
        self.owner[coordinate]
    }

    pub fn dim(&self) -> usize {
        self.owner.len()
    }
}

macro_rules! vector_newtype {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name(pub Vec<f64>);

        impl Deref for $name {
            type Target = [f64];
            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(v: Vec<f64>) -> Self {
                Self(v)
            }
        }
    };
}

vector_newtype!(
    /// Base draws from the standard normal.
    EpsilonVector
);
vector_newtype!(
    /// A point in model parameter space.
    LatentVector
);

/// Gradient with respect to the flat parameter vector `[μ, ρ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector(pub Vec<f64>);

impl Deref for GradientVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl GradientVector {
    pub fn zeros(latent_dim: usize) -> Self {
        Self(vec![0.0; 2 * latent_dim])
    }

    pub fn latent_dim(&self) -> usize {
        self.0.len() / 2
    }

    pub fn location(&self) -> &[f64] {
        &self.0[..self.latent_dim()]
    }

    pub fn log_scale(&self) -> &[f64] {
        &self.0[self.latent_dim()..]
    }

    pub fn add_assign(&mut self, other: &GradientVector) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.0.iter_mut().for_each(|a| *a *= factor);
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|a| a.is_finite())
    }
}

/// Draws `dim` independent standard-normal values.
pub fn sample_epsilon<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Result<EpsilonVector> {
    if dim == 0 {
        return Err(Error::EmptyDimension);
    }
    Ok(EpsilonVector(
        (0..dim).map(|_| rng.sample(StandardNormal)).collect(),
    ))
}

/// Parameters `λ = {μ, ρ}` of a factorized approximation.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedApproxParams {
    values: Vec<f64>,
    layout: Arc<CoordinateLayout>,
    partition: Arc<FactorPartition>,
}

impl FactorizedApproxParams {
    /// Initializes at `μ = 0`, `σ = 0.1`.
    pub fn new(layout: CoordinateLayout, partition: FactorPartition) -> Result<Self> {
        Self::with_init(layout, partition, 0.0, DEFAULT_INIT_LOG_SCALE)
    }

    pub fn with_init(
        layout: CoordinateLayout,
        partition: FactorPartition,
        location: f64,
        log_scale: f64,
    ) -> Result<Self> {
        let dim = layout.dim();
        if dim == 0 {
            return Err(Error::EmptyDimension);
        }
        if partition.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: partition.dim(),
            });
        }
        let mut values = vec![location; 2 * dim];
        values[dim..].fill(log_scale);
        Ok(Self {
            values,
            layout: Arc::new(layout),
            partition: Arc::new(partition),
        })
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn layout(&self) -> &CoordinateLayout {
        &self.layout
    }

    pub fn partition(&self) -> &FactorPartition {
        &self.partition
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn location(&self) -> &[f64] {
        &self.values[..self.dim()]
    }

    pub fn location_mut(&mut self) -> &mut [f64] {
        let d = self.dim();
        &mut self.values[..d]
    }

    pub fn log_scale(&self) -> &[f64] {
        &self.values[self.dim()..]
    }

    pub fn log_scale_mut(&mut self) -> &mut [f64] {
        let d = self.dim();
        &mut self.values[d..]
    }

    pub fn scale(&self, i: usize) -> f64 {
        self.log_scale()[i].exp()
    }

    /// Same layout and factor partition.
    pub fn same_structure(&self, other: &Self) -> bool {
        (Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout)
            && (Arc::ptr_eq(&self.partition, &other.partition) || self.partition == other.partition)
    }

    /// Whether coordinate `i` has bitwise-identical `(μ_i, ρ_i)` in both.
    pub fn coordinate_unchanged(&self, other: &Self, i: usize) -> bool {
        self.location()[i].to_bits() == other.location()[i].to_bits()
            && self.log_scale()[i].to_bits() == other.log_scale()[i].to_bits()
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: len,
            });
        }
        Ok(())
    }

    /// Unconstrained affine output `u = μ + σ ε`.
    pub fn affine(&self, eps: &EpsilonVector) -> Result<Vec<f64>> {
        self.check_len(eps.len())?;
        Ok((0..self.dim())
            .map(|i| self.location()[i] + self.scale(i) * eps[i])
            .collect())
    }

    pub fn forward(&self, eps: &EpsilonVector) -> Result<LatentVector> {
        let u = self.affine(eps)?;
        Ok(LatentVector(self.layout.constrain(&u).0))
    }

    pub fn inverse(&self, z: &LatentVector) -> Result<EpsilonVector> {
        self.check_len(z.len())?;
        let u = self.layout.unconstrain(z)?;
        Ok(self.standardize(&u))
    }

    /// Inverse that flags, rather than rejects, coordinates outside the range
    /// of the transform. Flagged coordinates get `ε = 0`.
    pub fn inverse_masked(&self, z: &LatentVector) -> Result<(EpsilonVector, Vec<bool>)> {
        self.check_len(z.len())?;
        let (u, valid) = self.layout.unconstrain_masked(z);
        let mut eps = self.standardize(&u);
        for (e, ok) in eps.0.iter_mut().zip(&valid) {
            if !ok {
                *e = 0.0;
            }
        }
        Ok((eps, valid))
    }

    fn standardize(&self, u: &[f64]) -> EpsilonVector {
        EpsilonVector(
            (0..self.dim())
                .map(|i| (u[i] - self.location()[i]) / self.scale(i))
                .collect(),
        )
    }

    /// `Σ_{i∈S} log φ(ε_i)` for every factor `S`.
    pub fn base_log_density_per_factor(&self, eps: &EpsilonVector) -> Result<Vec<f64>> {
        self.check_len(eps.len())?;
        Ok(self
            .partition
            .groups()
            .iter()
            .map(|g| g.iter().map(|&i| log_std_normal(eps[i])).sum())
            .collect())
    }

    /// Single-sample gradient of `log p(x, f(ε, λ)) + log |det J_f(ε, λ)|`
    /// in `λ`, given `grad_z = ∇_z log p(x, z)` at `z = f(ε, λ)`.
    pub fn reparam_pullback(&self, eps: &EpsilonVector, grad_z: &[f64]) -> Result<GradientVector> {
        self.check_len(grad_z.len())?;
        let u = self.affine(eps)?;
        let du = self.layout.pull_back(&u, grad_z);
        let d = self.dim();
        let mut out = GradientVector::zeros(d);
        for i in 0..d {
            out.0[i] = du[i];
            // +1 is d/dρ of log σ
            out.0[d + i] = du[i] * self.scale(i) * eps[i] + 1.0;
        }
        Ok(out)
    }

    /// `log |det J_f(ε, λ)| = Σ ρ + log |det J_T(μ + σε)|`.
    pub fn log_det_jacobian(&self, eps: &EpsilonVector) -> Result<f64> {
        let u = self.affine(eps)?;
        Ok(self.log_scale().iter().sum::<f64>() + self.layout.log_jacobian(&u))
    }

    /// `log q_λ(z)` for `z = f(ε, λ)`, evaluated from the base draw.
    pub fn log_density_at(&self, eps: &EpsilonVector) -> Result<f64> {
        let log_phi: f64 = eps.iter().map(|&e| log_std_normal(e)).sum();
        Ok(log_phi - self.log_det_jacobian(eps)?)
    }

    pub fn log_density(&self, z: &LatentVector) -> Result<f64> {
        let eps = self.inverse(z)?;
        self.log_density_at(&eps)
    }

    /// `∇_λ log q_λ(z)` at fixed `z`, where `ε` is the base draw of `z` under
    /// these parameters. The transform's Jacobian does not depend on `λ` once
    /// `z` is fixed, so only the affine part contributes.
    pub fn score_at(&self, eps: &EpsilonVector) -> Result<GradientVector> {
        self.check_len(eps.len())?;
        let d = self.dim();
        let mut out = GradientVector::zeros(d);
        for i in 0..d {
            out.0[i] = eps[i] / self.scale(i);
            out.0[d + i] = eps[i] * eps[i] - 1.0;
        }
        Ok(out)
    }
}
