//! Semi-implicit Euler–Maruyama scheme for `dX + AX dt + β(X) dt ∋ B(t, X) dW`.
//!
//! Each step solves
//!
//! ```text
//! x⁺ + h A x⁺ + h β_λ(x⁺) = x + B(t, σ_R(x)) ΔW
//! ```
//!
//! by damped Newton with a tridiagonal Jacobian. The drift selection reported
//! for the step is `ξ = β_λ(x⁺)`, which lies in `β((I + λβ)⁻¹ x⁺)`.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::gelfand::{dot, EllipticOperator, GridFunction, Mesh};
use crate::graph::MonotoneGraph;
use crate::io::{csv_line, format_f64, CsvField};
use crate::noise::{Diffusion, DiffusionCoefficient, WienerPath};

/// Operator, drift graph and diffusion coefficient of one equation.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub operator: EllipticOperator,
    pub graph: MonotoneGraph,
    pub diffusion: DiffusionCoefficient,
}

impl Model {
    pub fn new(operator: EllipticOperator, graph: MonotoneGraph, diffusion: DiffusionCoefficient) -> Result<Self> {
        if operator.mesh() != diffusion.mesh() {
            return Err(Error::MeshMismatch { left: operator.mesh().len(), right: diffusion.mesh().len() });
        }
        Ok(Self { operator, graph, diffusion })
    }

    pub fn mesh(&self) -> Mesh {
        self.operator.mesh()
    }
}

/// How the Yosida parameter is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Regularization {
    /// `λ = h`
    StepSize,
    Fixed(f64),
}

/// How the diffusion coefficient is localized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TruncationPolicy {
    /// Evaluate `B ∘ σ_R` throughout; `R = ∞` disables truncation.
    Fixed(f64),
    /// Start at level `start`, raise the level by one whenever the state norm
    /// reaches it, fail once the level would exceed `cap`.
    Adaptive { start: u32, cap: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    pub regularization: Regularization,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Step halvings attempted after a Newton failure.
    pub max_retries: u32,
    pub truncation: TruncationPolicy,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            regularization: Regularization::StepSize,
            newton_tol: 1e-10,
            newton_max_iter: 50,
            max_retries: 5,
            truncation: TruncationPolicy::Adaptive { start: 1, cap: 10_000 },
        }
    }
}

impl SolverConfig {
    pub fn with_truncation(mut self, truncation: TruncationPolicy) -> Self {
        self.truncation = truncation;
        self
    }

    pub fn with_regularization(mut self, regularization: Regularization) -> Self {
        self.regularization = regularization;
        self
    }

    pub fn lambda(&self, h: f64) -> f64 {
        match self.regularization {
            Regularization::StepSize => h,
            Regularization::Fixed(l) => l,
        }
    }

    pub fn validate(&self, h: f64) -> Result<()> {
        let lambda = self.lambda(h);
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidParameter(format!("time step must be > 0, got {h}")));
        }
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::InvalidParameter(format!("yosida parameter must lie in (0, 1], got {lambda}")));
        }
        if !(self.newton_tol > 0.0) || self.newton_max_iter == 0 {
            return Err(Error::InvalidParameter("newton tolerance and iteration cap must be positive".into()));
        }
        match self.truncation {
            TruncationPolicy::Fixed(r) if !(r > 0.0) => {
                Err(Error::InvalidParameter(format!("truncation radius must be > 0, got {r}")))
            }
            TruncationPolicy::Adaptive { start, cap } if start == 0 || cap < start => {
                Err(Error::InvalidParameter(format!("adaptive truncation needs 1 <= start <= cap, got {start}..{cap}")))
            }
            _ => Ok(()),
        }
    }
}

/// First grid index at which the running `H`-norm reached integer level `level`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TauRecord {
    pub level: u32,
    pub step: usize,
}

/// Result of one accepted step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub next: GridFunction,
    pub xi: GridFunction,
    pub newton_iterations: usize,
    /// `max |F(x⁺)| / max(1, |rhs|∞)`
    pub residual: f64,
}

/// The discrete pair `(X, ξ)` on the grid `t_k = k h`.
#[derive(Clone, Debug, PartialEq)]
pub struct SolutionPath {
    mesh: Mesh,
    h_time: f64,
    lambda: f64,
    seed: u64,
    config: SolverConfig,
    states: Vec<f64>,
    selections: Vec<f64>,
    radii: Vec<f64>,
    tau_records: Vec<TauRecord>,
    substepped: Vec<(usize, u32)>,
}

impl SolutionPath {
    pub fn mesh(&self) -> Mesh {
        self.mesh
    }

    pub fn steps(&self) -> usize {
        self.radii.len()
    }

    pub fn h_time(&self) -> f64 {
        self.h_time
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.h_time
    }

    /// `X_k`, `k = 0..=steps`.
    pub fn state(&self, k: usize) -> &[f64] {
        let n = self.mesh.len();
        &self.states[k * n..(k + 1) * n]
    }

    pub fn state_function(&self, k: usize) -> GridFunction {
        GridFunction::from_vec_unchecked(self.mesh, self.state(k).to_vec())
    }

    /// `ξ_k = β_λ(X_{k+1})`, `k = 0..steps`.
    pub fn selection(&self, k: usize) -> &[f64] {
        let n = self.mesh.len();
        &self.selections[k * n..(k + 1) * n]
    }

    /// Truncation radius used for the noise of step `k`.
    pub fn radius(&self, k: usize) -> f64 {
        self.radii[k]
    }

    pub fn tau_records(&self) -> &[TauRecord] {
        &self.tau_records
    }

    pub fn tau(&self, level: u32) -> Option<usize> {
        self.tau_records.iter().find(|r| r.level == level).map(|r| r.step)
    }

    /// Steps that needed halving, with the number of halvings.
    pub fn substepped(&self) -> &[(usize, u32)] {
        &self.substepped
    }

    pub fn h_norm(&self, k: usize) -> f64 {
        let x = self.state(k);
        (self.mesh.spacing() * dot(x, x)).sqrt()
    }

    pub fn h_norms(&self) -> Vec<f64> {
        (0..=self.steps()).map(|k| self.h_norm(k)).collect()
    }

    pub fn v_norm(&self, op: &EllipticOperator, k: usize) -> f64 {
        let x = self.state(k);
        let mut ax = vec![0.0; x.len()];
        op.apply_slice(x, &mut ax);
        (self.mesh.spacing() * dot(&ax, x)).max(0.0).sqrt()
    }

    /// Largest sup-norm distance between two paths over steps `0..=upto`.
    pub fn sup_distance(&self, other: &SolutionPath, upto: usize) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..=upto.min(self.steps()).min(other.steps()) {
            for (a, b) in self.state(k).iter().zip(other.state(k)) {
                worst = worst.max((a - b).abs());
            }
        }
        worst
    }

    /// One row per time: `t, X_1..X_n, ‖X‖_H, ‖X‖_V`.
    pub fn to_csv(&self, op: &EllipticOperator) -> String {
        let n = self.mesh.len();
        let mut out = String::new();
        out.push('t');
        for i in 0..n {
            let _ = write!(out, ",x{i}");
        }
        out.push_str(",h_norm,v_norm\n");
        for k in 0..=self.steps() {
            let mut fields: Vec<CsvField> = Vec::with_capacity(n + 3);
            fields.push(self.time(k).into());
            fields.extend(self.state(k).iter().map(|&v| CsvField::from(v)));
            fields.push(self.h_norm(k).into());
            fields.push(self.v_norm(op, k).into());
            out.push_str(&csv_line(fields));
            out.push('\n');
        }
        out
    }

    /// `key=value` sidecar with the solver settings and stopping-time records.
    pub fn metadata(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "seed={}", self.seed);
        let _ = writeln!(out, "steps={}", self.steps());
        let _ = writeln!(out, "h_time={}", format_f64(self.h_time));
        let _ = writeln!(out, "lambda={}", format_f64(self.lambda));
        let _ = writeln!(out, "newton_tol={}", format_f64(self.config.newton_tol));
        let _ = writeln!(out, "newton_max_iter={}", self.config.newton_max_iter);
        let trunc = match self.config.truncation {
            TruncationPolicy::Fixed(r) => format!("fixed:{r}"),
            TruncationPolicy::Adaptive { start, cap } => format!("adaptive:{start},{cap}"),
        };
        let _ = writeln!(out, "truncation={trunc}");
        let taus: Vec<String> = self.tau_records.iter().map(|r| format!("{}:{}", r.level, r.step)).collect();
        let _ = writeln!(out, "tau_records={}", taus.join(";"));
        let subs: Vec<String> = self.substepped.iter().map(|(k, r)| format!("{k}:{r}")).collect();
        let _ = writeln!(out, "substepped={}", subs.join(";"));
        out
    }
}

/// Per-step terms of the discrete energy balance.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EnergyTerms {
    /// `½‖X_{k+1}‖² − ½‖X_k‖²`
    pub energy_change: f64,
    /// `h ⟨A X_{k+1}, X_{k+1}⟩`
    pub dissipation: f64,
    /// `h ⟨ξ_k, X_{k+1}⟩`
    pub drift: f64,
    /// `½ h ‖B(t_k, X_k)‖²_HS`
    pub ito_correction: f64,
    /// `⟨X_k, B(t_k, X_k) ΔW_k⟩`
    pub martingale: f64,
}

impl EnergyTerms {
    /// Contribution of this step to the cumulative identity defect.
    pub fn defect(&self) -> f64 {
        self.energy_change + self.dissipation + self.drift - self.ito_correction - self.martingale
    }
}

/// Tracks the running sup of `‖X_k‖` and the truncation level.
struct LevelTracker {
    policy: TruncationPolicy,
    level: u32,
    running_sup: f64,
    records: Vec<TauRecord>,
}

impl LevelTracker {
    fn new(policy: TruncationPolicy) -> Self {
        let level = match policy {
            TruncationPolicy::Adaptive { start, .. } => start,
            TruncationPolicy::Fixed(_) => 0,
        };
        Self { policy, level, running_sup: 0.0, records: Vec::new() }
    }

    /// Registers `‖X_k‖` and returns the radius for the noise at step `k`.
    fn observe(&mut self, k: usize, norm: f64) -> Result<f64> {
        if norm > self.running_sup {
            let first_new = self.records.last().map_or(1, |r| r.level + 1);
            let reached = norm.floor().min(u32::MAX as f64) as u32;
            for level in first_new..=reached {
                self.records.push(TauRecord { level, step: k });
            }
            self.running_sup = norm;
        }
        match self.policy {
            TruncationPolicy::Fixed(r) => Ok(r),
            TruncationPolicy::Adaptive { cap, .. } => {
                while norm >= self.level as f64 {
                    if self.level >= cap {
                        return Err(Error::TruncationCapReached { cap, step: k, norm });
                    }
                    self.level += 1;
                }
                Ok(self.level as f64)
            }
        }
    }
}

/// Scratch buffers for one Newton solve.
struct Workspace {
    rhs: Vec<f64>,
    residual: Vec<f64>,
    trial: Vec<f64>,
    trial_residual: Vec<f64>,
    slopes: Vec<f64>,
    trial_slopes: Vec<f64>,
    yosida: Vec<f64>,
    trial_yosida: Vec<f64>,
    diag: Vec<f64>,
    off: Vec<f64>,
    delta: Vec<f64>,
    scratch: Vec<f64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        let v = || vec![0.0; n];
        Self {
            rhs: v(),
            residual: v(),
            trial: v(),
            trial_residual: v(),
            slopes: v(),
            trial_slopes: v(),
            yosida: v(),
            trial_yosida: v(),
            diag: v(),
            off: vec![0.0; n.saturating_sub(1)],
            delta: v(),
            scratch: v(),
        }
    }
}

/// One step of the scheme, as reported to [`Solver::integrate`] visitors.
pub struct StepView<'a> {
    pub k: usize,
    pub t: f64,
    pub h: f64,
    pub radius: f64,
    pub dw: &'a [f64],
    pub previous: &'a [f64],
    pub next: &'a [f64],
    pub xi: &'a [f64],
}

pub struct Solver<'a> {
    model: &'a Model,
    config: SolverConfig,
}

impl<'a> Solver<'a> {
    pub fn new(model: &'a Model, config: SolverConfig) -> Self {
        Self { model, config }
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    /// One step from `x` at time `t` with increment `dw`, noise truncated at `radius`.
    pub fn step(&self, x: &GridFunction, t: f64, h: f64, dw: &[f64], radius: f64) -> Result<StepOutcome> {
        self.config.validate(h)?;
        if x.mesh() != self.model.mesh() {
            return Err(Error::MeshMismatch { left: self.model.mesh().len(), right: x.mesh().len() });
        }
        if dw.len() != self.model.diffusion.k_modes() {
            return Err(Error::DimensionMismatch { expected: self.model.diffusion.k_modes(), actual: dw.len() });
        }
        let n = x.values().len();
        let mut ws = Workspace::new(n);
        let mut next = vec![0.0; n];
        let mut xi = vec![0.0; n];
        let (iters, residual) =
            self.newton(x.values(), t, h, self.config.lambda(h), dw, radius, &mut ws, &mut next, &mut xi, 0)?;
        let mesh = x.mesh();
        Ok(StepOutcome {
            next: GridFunction::from_vec_unchecked(mesh, next),
            xi: GridFunction::from_vec_unchecked(mesh, xi),
            newton_iterations: iters,
            residual,
        })
    }

    /// Runs the scheme along a stored Wiener path.
    pub fn solve_path(&self, x0: &GridFunction, w: &WienerPath) -> Result<SolutionPath> {
        if w.k_modes() != self.model.diffusion.k_modes() {
            return Err(Error::DimensionMismatch { expected: self.model.diffusion.k_modes(), actual: w.k_modes() });
        }
        let n = self.model.mesh().len();
        let steps = w.steps();
        let mut states = Vec::with_capacity((steps + 1) * n);
        let mut selections = Vec::with_capacity(steps * n);
        let mut radii = Vec::with_capacity(steps);
        states.extend_from_slice(x0.values());
        let summary = self.integrate(
            x0,
            steps,
            w.step_size(),
            |k, dw| dw.copy_from_slice(w.increment(k)),
            |view| {
                states.extend_from_slice(view.next);
                selections.extend_from_slice(view.xi);
                radii.push(view.radius);
            },
        )?;
        Ok(SolutionPath {
            mesh: self.model.mesh(),
            h_time: w.step_size(),
            lambda: self.config.lambda(w.step_size()),
            seed: w.seed(),
            config: self.config,
            states,
            selections,
            radii,
            tau_records: summary.tau_records,
            substepped: summary.substepped,
        })
    }

    /// Generic driver: `noise(k, dw)` fills the increment of step `k`, `visit`
    /// sees every accepted step. Nothing is stored, so long runs stream.
    pub fn integrate(
        &self,
        x0: &GridFunction,
        steps: usize,
        h: f64,
        mut noise: impl FnMut(usize, &mut [f64]),
        mut visit: impl FnMut(&StepView<'_>),
    ) -> Result<IntegrationSummary> {
        self.config.validate(h)?;
        if x0.mesh() != self.model.mesh() {
            return Err(Error::MeshMismatch { left: self.model.mesh().len(), right: x0.mesh().len() });
        }
        let n = x0.values().len();
        let k_modes = self.model.diffusion.k_modes();
        let spacing = self.model.mesh().spacing();
        let mut tracker = LevelTracker::new(self.config.truncation);
        let mut ws = Workspace::new(n);
        let mut x = x0.values().to_vec();
        let mut next = vec![0.0; n];
        let mut xi = vec![0.0; n];
        let mut dw = vec![0.0; k_modes];
        let mut substepped = Vec::new();
        let lambda = self.config.lambda(h);
        for k in 0..steps {
            let radius = tracker.observe(k, (spacing * dot(&x, &x)).sqrt())?;
            noise(k, &mut dw);
            let t = k as f64 * h;
            match self.newton(&x, t, h, lambda, &dw, radius, &mut ws, &mut next, &mut xi, k) {
                Ok(_) => {}
                Err(Error::NewtonDivergence { .. }) if self.config.max_retries > 0 => {
                    let halvings = self.retry(&x, t, h, &dw, radius, k, &mut ws, &mut next, &mut xi)?;
                    substepped.push((k, halvings));
                }
                Err(e) => return Err(e),
            }
            visit(&StepView { k, t, h, radius, dw: &dw, previous: &x, next: &next, xi: &xi });
            std::mem::swap(&mut x, &mut next);
        }
        tracker.observe(steps, (spacing * dot(&x, &x)).sqrt())?;
        Ok(IntegrationSummary { tau_records: tracker.records, substepped, final_state: x })
    }

    /// Splits a failed step into `2^r` bridged substeps, `r = 1..=max_retries`.
    #[allow(clippy::too_many_arguments)]
    fn retry(
        &self,
        x: &[f64],
        t: f64,
        h: f64,
        dw: &[f64],
        radius: f64,
        k: usize,
        ws: &mut Workspace,
        next: &mut [f64],
        xi: &mut [f64],
    ) -> Result<u32> {
        let mut last = Error::NewtonDivergence { step: k, residual: f64::NAN };
        for r in 1..=self.config.max_retries {
            let pieces = 1usize << r;
            let sub_h = h / pieces as f64;
            let increments = bridge_split(dw, h, r, k as u64);
            let mut state = x.to_vec();
            let mut ok = true;
            let km = dw.len();
            for j in 0..pieces {
                let inc = &increments[j * km..(j + 1) * km];
                let sub_t = t + j as f64 * sub_h;
                match self.newton(&state, sub_t, sub_h, self.config.lambda(sub_h), inc, radius, ws, next, xi, k) {
                    Ok(_) => state.copy_from_slice(next),
                    Err(e @ Error::NewtonDivergence { .. }) => {
                        last = e;
                        ok = false;
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
            if ok {
                return Ok(r);
            }
        }
        Err(last)
    }

    /// Damped Newton for `F(y) = y + hAy + hβ_λ(y) − rhs`.
    #[allow(clippy::too_many_arguments)]
    fn newton(
        &self,
        x: &[f64],
        t: f64,
        h: f64,
        lambda: f64,
        dw: &[f64],
        radius: f64,
        ws: &mut Workspace,
        out: &mut [f64],
        xi: &mut [f64],
        k: usize,
    ) -> Result<(usize, f64)> {
        let graph = self.model.graph;
        let op = &self.model.operator;
        let (d, o) = op.stencil();
        let n = x.len();

        // rhs = x + B(t, σ_R(x)) dw
        noise_term(&self.model.diffusion, t, x, dw, radius, self.model.mesh().spacing(), &mut ws.scratch, &mut ws.rhs);
        for (r, xv) in ws.rhs.iter_mut().zip(x) {
            *r += xv;
        }
        let scale = ws.rhs.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let tol = self.config.newton_tol * scale;

        out.copy_from_slice(&ws.rhs);
        let mut norm = evaluate(graph, op, h, lambda, out, &ws.rhs, &mut ws.residual, &mut ws.yosida, &mut ws.slopes, &mut ws.scratch)?;
        let mut sup = max_abs(&ws.residual);
        for iter in 0..self.config.newton_max_iter {
            if sup <= tol {
                xi.copy_from_slice(&ws.yosida);
                return Ok((iter, sup / scale));
            }
            for i in 0..n {
                ws.diag[i] = 1.0 + h * d + h * ws.slopes[i];
                ws.delta[i] = -ws.residual[i];
            }
            ws.off.iter_mut().for_each(|v| *v = h * o);
            crate::tridiag::solve(&ws.off, &ws.diag, &ws.off, &mut ws.delta);

            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                for ((t, &o), &d) in ws.trial.iter_mut().zip(out.iter()).zip(&ws.delta) {
                    *t = o + step * d;
                }
                let trial_norm = evaluate(
                    graph,
                    op,
                    h,
                    lambda,
                    &ws.trial,
                    &ws.rhs,
                    &mut ws.trial_residual,
                    &mut ws.trial_yosida,
                    &mut ws.trial_slopes,
                    &mut ws.scratch,
                )?;
                if trial_norm <= (1.0 - 1e-4 * step) * norm || max_abs(&ws.trial_residual) <= tol {
                    out.copy_from_slice(&ws.trial);
                    std::mem::swap(&mut ws.residual, &mut ws.trial_residual);
                    std::mem::swap(&mut ws.yosida, &mut ws.trial_yosida);
                    std::mem::swap(&mut ws.slopes, &mut ws.trial_slopes);
                    norm = trial_norm;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            sup = max_abs(&ws.residual);
            if !accepted {
                break;
            }
        }
        if sup <= tol {
            xi.copy_from_slice(&ws.yosida);
            return Ok((self.config.newton_max_iter, sup / scale));
        }
        Err(Error::NewtonDivergence { step: k, residual: sup })
    }

    /// Maximum relative re-substitution residual of the scheme over all
    /// steps that were not substepped.
    pub fn scheme_residual(&self, path: &SolutionPath, w: &WienerPath) -> Result<f64> {
        let op = &self.model.operator;
        let n = path.mesh().len();
        let h = path.h_time();
        let mut ax = vec![0.0; n];
        let mut noise = vec![0.0; n];
        let mut scratch = vec![0.0; n];
        let mut worst: f64 = 0.0;
        for k in 0..path.steps() {
            if path.substepped.iter().any(|(s, _)| *s == k) {
                continue;
            }
            let x = path.state(k);
            let y = path.state(k + 1);
            noise_term(&self.model.diffusion, path.time(k), x, w.increment(k), path.radius(k), path.mesh().spacing(), &mut scratch, &mut noise);
            op.apply_slice(y, &mut ax);
            let mut scale: f64 = 1.0;
            let mut res: f64 = 0.0;
            for i in 0..n {
                let rhs = x[i] + noise[i];
                scale = scale.max(rhs.abs());
                res = res.max((y[i] + h * ax[i] + h * path.selection(k)[i] - rhs).abs());
            }
            worst = worst.max(res / scale);
        }
        Ok(worst)
    }

    /// The five terms of the discrete energy balance for every step.
    pub fn energy_terms(&self, path: &SolutionPath, w: &WienerPath) -> Vec<EnergyTerms> {
        let op = &self.model.operator;
        let spacing = path.mesh().spacing();
        let n = path.mesh().len();
        let h = path.h_time();
        let mut ax = vec![0.0; n];
        let mut noise = vec![0.0; n];
        let mut scratch = vec![0.0; n];
        let mut projected = vec![0.0; n];
        (0..path.steps())
            .map(|k| {
                let x = path.state(k);
                let y = path.state(k + 1);
                noise_term(&self.model.diffusion, path.time(k), x, w.increment(k), path.radius(k), spacing, &mut scratch, &mut noise);
                op.apply_slice(y, &mut ax);
                let g_arg = project(x, path.radius(k), spacing, &mut projected);
                EnergyTerms {
                    energy_change: 0.5 * spacing * (dot(y, y) - dot(x, x)),
                    dissipation: h * spacing * dot(&ax, y),
                    drift: h * spacing * dot(path.selection(k), y),
                    ito_correction: 0.5 * h * self.model.diffusion.hs_norm_sq_slice(path.time(k), g_arg),
                    martingale: spacing * dot(x, &noise),
                }
            })
            .collect()
    }
}

/// What [`Solver::integrate`] returns besides the visited steps.
#[derive(Clone, Debug, PartialEq)]
pub struct IntegrationSummary {
    pub tau_records: Vec<TauRecord>,
    pub substepped: Vec<(usize, u32)>,
    pub final_state: Vec<f64>,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `σ_R(x)`, borrowing `x` when it already lies in the ball.
fn project<'b>(x: &'b [f64], radius: f64, spacing: f64, buf: &'b mut [f64]) -> &'b [f64] {
    let norm = (spacing * dot(x, x)).sqrt();
    if norm <= radius {
        x
    } else {
        let c = radius / norm;
        for (b, v) in buf.iter_mut().zip(x) {
            *b = c * v;
        }
        buf
    }
}

#[allow(clippy::too_many_arguments)]
fn noise_term(
    diffusion: &DiffusionCoefficient,
    t: f64,
    x: &[f64],
    dw: &[f64],
    radius: f64,
    spacing: f64,
    scratch: &mut [f64],
    out: &mut [f64],
) {
    if diffusion.is_zero() {
        out.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let arg = project(x, radius, spacing, scratch);
    diffusion.apply_into(t, arg, dw, out);
}

/// Fills `F(y)`, `β_λ(y)` and `β_λ'(y)`; returns the Euclidean norm of `F`.
#[allow(clippy::too_many_arguments)]
fn evaluate(
    graph: MonotoneGraph,
    op: &EllipticOperator,
    h: f64,
    lambda: f64,
    y: &[f64],
    rhs: &[f64],
    residual: &mut [f64],
    yosida: &mut [f64],
    slopes: &mut [f64],
    ay: &mut [f64],
) -> Result<f64> {
    op.apply_slice(y, ay);
    let mut sq = 0.0;
    for i in 0..y.len() {
        let p = graph.prox(lambda, y[i])?;
        yosida[i] = p.yosida;
        slopes[i] = p.slope;
        let r = y[i] + h * ay[i] + h * p.yosida - rhs[i];
        residual[i] = r;
        sq += r * r;
    }
    Ok(sq.sqrt())
}

/// Splits `dw` over a step of length `h` into `2^levels` bridged pieces
/// (row major, one row per piece), deterministically from `key`.
fn bridge_split(dw: &[f64], h: f64, levels: u32, key: u64) -> Vec<f64> {
    let k = dw.len();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_B41D_6E00_0000 ^ key);
    let mut current = dw.to_vec();
    let mut span = h;
    for _ in 0..levels {
        let pieces = current.len().checked_div(k).unwrap_or(0);
        let mut fine = Vec::with_capacity(current.len() * 2);
        let sd = 0.5 * span.sqrt();
        for p in 0..pieces {
            let row = &current[p * k..(p + 1) * k];
            let first: Vec<f64> = row
                .iter()
                .map(|&d| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    0.5 * d + sd * z
                })
                .collect();
            fine.extend_from_slice(&first);
            fine.extend(row.iter().zip(&first).map(|(d, f)| d - f));
        }
        current = fine;
        span *= 0.5;
    }
    current
}
