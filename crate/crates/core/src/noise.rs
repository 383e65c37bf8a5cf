//! Truncated cylindrical Wiener process and diffusion coefficients.
//!
//! `U` is realized as `ℝ^K`; coordinate `k` is mapped onto the `k`-th discrete
//! sine eigenvector `φ_k` with spectral weight `k^{-γ}`.

use std::io::{Read, Write};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::gelfand::{dot, EllipticOperator, GridFunction, Mesh};

/// RNG for path `index` of a Monte Carlo run with master seed `master`.
pub fn path_rng(master: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng
}

/// Seed of path `index` derived from `master`; distinct indices give independent streams.
pub fn path_seed(master: u64, index: u64) -> u64 {
    path_rng(master, index).next_u64()
}

/// Increments are stored as integer multiples of a dyadic quantum so that
/// sums of increments are exact; the quantum leaves headroom of `2^7 √T`.
fn quantum(t_end: f64) -> f64 {
    let e = t_end.max(1.0).sqrt().log2().ceil() as i32;
    2f64.powi(-46 + e)
}

fn quantize(x: f64, q: f64) -> f64 {
    (x / q).round() * q
}

/// Brownian increments on a uniform grid of `[0, T]`, `steps × k_modes`, row major.
#[derive(Clone, Debug, PartialEq)]
pub struct WienerPath {
    k_modes: usize,
    steps: usize,
    t_end: f64,
    seed: u64,
    increments: Vec<f64>,
}

impl WienerPath {
    pub fn sample(k_modes: usize, steps: usize, t_end: f64, seed: u64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidParameter("a Wiener path needs at least one step".into()));
        }
        if !(t_end > 0.0 && t_end.is_finite()) {
            return Err(Error::InvalidParameter(format!("time horizon must be > 0, got {t_end}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sd = (t_end / steps as f64).sqrt();
        let q = quantum(t_end);
        let increments = (0..steps * k_modes)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                quantize(sd * z, q)
            })
            .collect();
        Ok(Self { k_modes, steps, t_end, seed, increments })
    }

    /// An all-zero path (deterministic runs).
    pub fn zero(k_modes: usize, steps: usize, t_end: f64) -> Result<Self> {
        let mut w = Self::sample(0, steps, t_end, 0)?;
        w.k_modes = k_modes;
        w.increments = vec![0.0; steps * k_modes];
        Ok(w)
    }

    pub fn k_modes(&self) -> usize {
        self.k_modes
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn step_size(&self) -> f64 {
        self.t_end / self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t_end * k as f64 / self.steps as f64
    }

    /// Mode increments over `[t_k, t_{k+1}]`.
    pub fn increment(&self, k: usize) -> &[f64] {
        &self.increments[k * self.k_modes..(k + 1) * self.k_modes]
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// Halves the step by Brownian-bridge midpoint insertion. Each pair of new
    /// increments sums exactly to the increment it replaces.
    pub fn refine(&self) -> Self {
        let h = self.step_size();
        let q = quantum(self.t_end);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        // one stream per resolution so repeated refinement stays reproducible
        rng.set_stream((1 << 63) | self.steps as u64);
        let half_sd = 0.5 * h.sqrt();
        let mut fine = vec![0.0; 2 * self.increments.len()];
        for k in 0..self.steps {
            for m in 0..self.k_modes {
                let dw = self.increments[k * self.k_modes + m];
                let z: f64 = StandardNormal.sample(&mut rng);
                let first = quantize(0.5 * dw + half_sd * z, q);
                fine[2 * k * self.k_modes + m] = first;
                fine[(2 * k + 1) * self.k_modes + m] = dw - first;
            }
        }
        Self { k_modes: self.k_modes, steps: 2 * self.steps, t_end: self.t_end, seed: self.seed, increments: fine }
    }

    /// Sums adjacent pairs of increments (inverse of [`refine`](Self::refine)).
    pub fn coarsen(&self) -> Result<Self> {
        if !self.steps.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!("cannot coarsen {} steps", self.steps)));
        }
        let k = self.k_modes;
        let mut coarse = vec![0.0; self.increments.len() / 2];
        for s in 0..self.steps / 2 {
            for m in 0..k {
                coarse[s * k + m] = self.increments[2 * s * k + m] + self.increments[(2 * s + 1) * k + m];
            }
        }
        Ok(Self { k_modes: k, steps: self.steps / 2, t_end: self.t_end, seed: self.seed, increments: coarse })
    }

    /// Binary layout, all little endian: `k_modes: u64`, `steps: u64`, `T: f64`,
    /// `seed: u64`, then `steps × k_modes` increments as `f64`, row major.
    pub fn write_to(&self, mut out: impl Write) -> std::io::Result<()> {
        out.write_all(&(self.k_modes as u64).to_le_bytes())?;
        out.write_all(&(self.steps as u64).to_le_bytes())?;
        out.write_all(&self.t_end.to_le_bytes())?;
        out.write_all(&self.seed.to_le_bytes())?;
        for v in &self.increments {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut input: impl Read) -> Result<Self> {
        let mut word = [0u8; 8];
        let mut next = |input: &mut dyn Read| -> Result<[u8; 8]> {
            input.read_exact(&mut word).map_err(|e| Error::Parse(format!("truncated wiener file: {e}")))?;
            Ok(word)
        };
        let k_modes = u64::from_le_bytes(next(&mut input)?) as usize;
        let steps = u64::from_le_bytes(next(&mut input)?) as usize;
        let t_end = f64::from_le_bytes(next(&mut input)?);
        let seed = u64::from_le_bytes(next(&mut input)?);
        if steps == 0 || !(t_end > 0.0 && t_end.is_finite()) {
            return Err(Error::Parse(format!("invalid wiener header: steps={steps}, T={t_end}")));
        }
        let len = steps.checked_mul(k_modes).ok_or_else(|| Error::Parse("wiener header overflows".into()))?;
        let mut increments = Vec::with_capacity(len);
        for _ in 0..len {
            increments.push(f64::from_le_bytes(next(&mut input)?));
        }
        let mut rest = Vec::new();
        input.read_to_end(&mut rest).map_err(|e| Error::Parse(e.to_string()))?;
        if !rest.is_empty() {
            return Err(Error::Parse(format!("{} trailing bytes after wiener body", rest.len())));
        }
        Ok(Self { k_modes, steps, t_end, seed, increments })
    }
}

/// `σ_R`: radial projection onto the closed `H`-ball of radius `R`.
pub fn truncate_to_ball(x: &GridFunction, radius: f64) -> GridFunction {
    let norm = x.norm();
    if norm <= radius {
        x.clone()
    } else {
        x.scaled(radius / norm)
    }
}

/// Shape of a diffusion coefficient; see [`DiffusionCoefficient`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DiffusionKind {
    /// `B(x)e_k = σ k^{-γ} φ_k`
    Additive,
    /// `B(x)e_k = σ k^{-γ} (x + c) ⊙ φ_k`, a multiplication operator (B1).
    DiagonalLinear { offset: f64 },
    /// `B(x)e_k = σ k^{-γ} (‖x‖ cos‖x‖ + 1) φ_k`, only locally Lipschitz (B2).
    LocallyLipschitz,
}

/// A Hilbert–Schmidt valued coefficient `B: H → L²(U, H)` on `K` modes.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionCoefficient {
    kind: DiffusionKind,
    scale: f64,
    decay: f64,
    mesh: Mesh,
    k_modes: usize,
    /// `k^{-γ} φ_k`, row `k - 1`
    profiles: Vec<f64>,
    /// `Σ_k k^{-2γ} φ_k(x_i)²`
    pointwise_weight: Vec<f64>,
}

/// Noise evaluation shared by plain and truncated coefficients.
pub trait Diffusion {
    fn mesh(&self) -> Mesh;
    fn k_modes(&self) -> usize;

    /// `B(t, x) dw` written into `out`.
    fn apply_into(&self, t: f64, x: &[f64], dw: &[f64], out: &mut [f64]);

    /// `‖B(t, x)‖²_{L²(U,H)}`
    fn hs_norm_sq_slice(&self, t: f64, x: &[f64]) -> f64;

    fn apply(&self, t: f64, x: &GridFunction, dw: &[f64]) -> Result<GridFunction> {
        self.check(x, Some(dw))?;
        let mut out = vec![0.0; x.values().len()];
        self.apply_into(t, x.values(), dw, &mut out);
        Ok(GridFunction::from_vec_unchecked(x.mesh(), out))
    }

    fn hs_norm_sq(&self, t: f64, x: &GridFunction) -> Result<f64> {
        self.check(x, None)?;
        Ok(self.hs_norm_sq_slice(t, x.values()))
    }

    fn check(&self, x: &GridFunction, dw: Option<&[f64]>) -> Result<()> {
        if x.mesh() != self.mesh() {
            return Err(Error::MeshMismatch { left: self.mesh().len(), right: x.mesh().len() });
        }
        if let Some(dw) = dw {
            if dw.len() != self.k_modes() {
                return Err(Error::DimensionMismatch { expected: self.k_modes(), actual: dw.len() });
            }
        }
        Ok(())
    }
}

impl DiffusionCoefficient {
    pub fn new(kind: DiffusionKind, mesh: Mesh, k_modes: usize, scale: f64, decay: f64) -> Result<Self> {
        if k_modes > mesh.len() {
            return Err(Error::InvalidParameter(format!(
                "{k_modes} noise modes exceed the {} resolvable sine modes",
                mesh.len()
            )));
        }
        if !(scale.is_finite() && decay.is_finite() && decay >= 0.0) {
            return Err(Error::InvalidParameter(format!("bad noise scale/decay ({scale}, {decay})")));
        }
        if matches!(kind, DiffusionKind::DiagonalLinear { .. }) && decay <= 0.5 {
            return Err(Error::InvalidParameter(format!("diagonal-linear noise needs decay > 1/2, got {decay}")));
        }
        if let DiffusionKind::DiagonalLinear { offset } = kind {
            if !offset.is_finite() {
                return Err(Error::InvalidParameter("offset must be finite".into()));
            }
        }
        let n = mesh.len();
        let mut profiles = Vec::with_capacity(k_modes * n);
        let mut pointwise_weight = vec![0.0; n];
        for k in 1..=k_modes {
            let w = (k as f64).powf(-decay);
            let mode = GridFunction::sine_mode(mesh, k);
            for (i, v) in mode.values().iter().enumerate() {
                profiles.push(w * v);
                pointwise_weight[i] += (w * v) * (w * v);
            }
        }
        Ok(Self { kind, scale, decay, mesh, k_modes, profiles, pointwise_weight })
    }

    pub fn additive(mesh: Mesh, k_modes: usize, scale: f64, decay: f64) -> Result<Self> {
        Self::new(DiffusionKind::Additive, mesh, k_modes, scale, decay)
    }

    pub fn diagonal_linear(mesh: Mesh, k_modes: usize, scale: f64, decay: f64, offset: f64) -> Result<Self> {
        Self::new(DiffusionKind::DiagonalLinear { offset }, mesh, k_modes, scale, decay)
    }

    pub fn locally_lipschitz(mesh: Mesh, k_modes: usize, scale: f64, decay: f64) -> Result<Self> {
        Self::new(DiffusionKind::LocallyLipschitz, mesh, k_modes, scale, decay)
    }

    /// `B ≡ 0`.
    pub fn zero(mesh: Mesh, k_modes: usize) -> Self {
        Self::new(DiffusionKind::Additive, mesh, k_modes, 0.0, 1.0).expect("zero noise is always valid")
    }

    pub fn kind(&self) -> DiffusionKind {
        self.kind
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn is_zero(&self) -> bool {
        self.scale == 0.0 || self.k_modes == 0
    }

    /// `Σ_k k^{-2γ} ‖φ_k‖²`
    fn trace(&self) -> f64 {
        self.mesh.spacing() * self.pointwise_weight.iter().sum::<f64>()
    }

    fn max_weight(&self) -> f64 {
        self.pointwise_weight.iter().fold(0.0, |a: f64, &b| a.max(b))
    }

    /// `N` with `‖B(x)‖_HS ≤ N (1 + ‖x‖)`.
    pub fn growth_constant(&self) -> f64 {
        let s = self.scale.abs();
        match self.kind {
            DiffusionKind::Additive | DiffusionKind::LocallyLipschitz => s * self.trace().sqrt(),
            DiffusionKind::DiagonalLinear { offset } => {
                let unit = (self.mesh.len() as f64 * self.mesh.spacing()).sqrt();
                s * self.max_weight().sqrt() * (offset.abs() * unit).max(1.0)
            }
        }
    }

    /// Global Lipschitz constant, if the coefficient satisfies (B1).
    pub fn global_lipschitz(&self) -> Option<f64> {
        let s = self.scale.abs();
        match self.kind {
            DiffusionKind::Additive => Some(0.0),
            DiffusionKind::DiagonalLinear { .. } => Some(s * self.max_weight().sqrt()),
            DiffusionKind::LocallyLipschitz => None,
        }
    }

    /// `N_R`, the Lipschitz constant on the ball of radius `R`.
    pub fn lipschitz_on_ball(&self, radius: f64) -> f64 {
        match self.global_lipschitz() {
            Some(l) => l,
            None => self.scale.abs() * self.trace().sqrt() * (1.0 + radius),
        }
    }

    /// `Σ_k σ k^{-γ} dw_k φ_k`
    fn noise_profile(&self, dw: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let n = self.mesh.len();
        for (k, &d) in dw.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let row = &self.profiles[k * n..(k + 1) * n];
            for (o, p) in out.iter_mut().zip(row) {
                *o += self.scale * d * p;
            }
        }
    }

    fn radial_factor(&self, x: &[f64]) -> f64 {
        let r = (self.mesh.spacing() * dot(x, x)).sqrt();
        r * r.cos() + 1.0
    }

    /// `Σ_k ‖B(x) e_k‖²_V`, for coefficients that map into `V`.
    pub fn hs_norm_sq_in_v(&self, op: &EllipticOperator, x: &GridFunction) -> Result<f64> {
        self.check(x, None)?;
        let mut unit = vec![0.0; self.k_modes];
        let mut total = 0.0;
        for k in 0..self.k_modes {
            unit.iter_mut().for_each(|v| *v = 0.0);
            unit[k] = 1.0;
            let col = self.apply(0.0, x, &unit)?;
            total += op.energy(&col)?;
        }
        Ok(total)
    }
}

impl Diffusion for DiffusionCoefficient {
    fn mesh(&self) -> Mesh {
        self.mesh
    }

    fn k_modes(&self) -> usize {
        self.k_modes
    }

    fn apply_into(&self, _t: f64, x: &[f64], dw: &[f64], out: &mut [f64]) {
        self.noise_profile(dw, out);
        match self.kind {
            DiffusionKind::Additive => {}
            DiffusionKind::DiagonalLinear { offset } => {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o *= xi + offset;
                }
            }
            DiffusionKind::LocallyLipschitz => {
                let f = self.radial_factor(x);
                out.iter_mut().for_each(|o| *o *= f);
            }
        }
    }

    fn hs_norm_sq_slice(&self, _t: f64, x: &[f64]) -> f64 {
        let s2 = self.scale * self.scale;
        match self.kind {
            DiffusionKind::Additive => s2 * self.trace(),
            DiffusionKind::DiagonalLinear { offset } => {
                let sum: f64 = x
                    .iter()
                    .zip(&self.pointwise_weight)
                    .map(|(xi, w)| (xi + offset) * (xi + offset) * w)
                    .sum();
                s2 * self.mesh.spacing() * sum
            }
            DiffusionKind::LocallyLipschitz => {
                let f = self.radial_factor(x);
                s2 * f * f * self.trace()
            }
        }
    }
}

/// `B_R = B ∘ σ_R`, globally Lipschitz with constant `N_R`.
#[derive(Clone, Debug, PartialEq)]
pub struct TruncatedDiffusion {
    base: DiffusionCoefficient,
    radius: f64,
}

impl TruncatedDiffusion {
    pub fn new(base: DiffusionCoefficient, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::InvalidParameter(format!("truncation radius must be > 0, got {radius}")));
        }
        Ok(Self { base, radius })
    }

    pub fn base(&self) -> &DiffusionCoefficient {
        &self.base
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn lipschitz(&self) -> f64 {
        self.base.lipschitz_on_ball(self.radius)
    }

    fn project<'a>(&self, x: &'a [f64], buf: &'a mut Vec<f64>) -> &'a [f64] {
        let norm = (self.base.mesh.spacing() * dot(x, x)).sqrt();
        if norm <= self.radius {
            x
        } else {
            let c = self.radius / norm;
            buf.clear();
            buf.extend(x.iter().map(|v| c * v));
            buf
        }
    }
}

impl Diffusion for TruncatedDiffusion {
    fn mesh(&self) -> Mesh {
        self.base.mesh
    }

    fn k_modes(&self) -> usize {
        self.base.k_modes
    }

    fn apply_into(&self, t: f64, x: &[f64], dw: &[f64], out: &mut [f64]) {
        let mut buf = Vec::new();
        let y = self.project(x, &mut buf);
        self.base.apply_into(t, y, dw, out);
    }

    fn hs_norm_sq_slice(&self, t: f64, x: &[f64]) -> f64 {
        let mut buf = Vec::new();
        let y = self.project(x, &mut buf);
        self.base.hs_norm_sq_slice(t, y)
    }
}
