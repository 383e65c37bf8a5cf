//! Pathwise audits: discrete energy identity, Fenchel pairing, continuity.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::gelfand::{dot, GridFunction};
use crate::graph::MonotoneGraph;
use crate::io::{csv_line, CsvField};
use crate::noise::WienerPath;
use crate::solver::{EnergyTerms, SolutionPath, Solver};
use crate::stats::tail_order;

/// Orders are fitted on this many finest levels.
pub const FIT_LEVELS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefinementLevel {
    pub level: usize,
    pub h: f64,
    pub value: f64,
}

/// Per-level values of some refinement study plus the fitted order in `h`.
#[derive(Clone, Debug, PartialEq)]
pub struct RefinementReport {
    pub seed: u64,
    pub levels: Vec<RefinementLevel>,
    pub order: f64,
}

/// Max cumulative defect of the energy identity per level.
pub type EnergyResidualReport = RefinementReport;
/// Max one-step increment `max_k ‖X_{k+1} − X_k‖` per level.
pub type ContinuityReport = RefinementReport;

impl RefinementReport {
    fn from_levels(seed: u64, levels: Vec<RefinementLevel>) -> Self {
        let hs: Vec<f64> = levels.iter().map(|l| l.h).collect();
        let vs: Vec<f64> = levels.iter().map(|l| l.value).collect();
        let order = tail_order(&hs, &vs, FIT_LEVELS).unwrap_or(f64::NAN);
        Self { seed, levels, order }
    }

    pub fn values(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.value).collect()
    }

    pub fn strictly_decreasing(&self) -> bool {
        self.levels.windows(2).all(|w| w[1].value < w[0].value)
    }

    /// True when the last `count` levels decrease.
    pub fn tail_decreasing(&self, count: usize) -> bool {
        let start = self.levels.len().saturating_sub(count);
        self.levels[start..].windows(2).all(|w| w[1].value < w[0].value)
    }

    /// Ratio of the coarsest to the finest value.
    pub fn reduction(&self) -> f64 {
        match (self.levels.first(), self.levels.last()) {
            (Some(a), Some(b)) => a.value / b.value,
            _ => f64::NAN,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("seed,level,h,value,order\n");
        for l in &self.levels {
            let _ = writeln!(
                out,
                "{}",
                csv_line([
                    CsvField::Int(self.seed as i64),
                    CsvField::Int(l.level as i64),
                    l.h.into(),
                    l.value.into(),
                    self.order.into(),
                ])
            );
        }
        out
    }
}

/// `R(t_k)` for `k = 0..=steps`, starting at `R(t_0) = 0`.
pub fn cumulative_defect(terms: &[EnergyTerms]) -> Vec<f64> {
    let mut out = Vec::with_capacity(terms.len() + 1);
    let mut acc = 0.0;
    out.push(acc);
    for t in terms {
        acc += t.defect();
        out.push(acc);
    }
    out
}

/// `max_k |R(t_k)|` for a path produced by `solver` along `w`.
pub fn energy_residual(solver: &Solver<'_>, path: &SolutionPath, w: &WienerPath) -> f64 {
    cumulative_defect(&solver.energy_terms(path, w)).into_iter().fold(0.0, |m, r| m.max(r.abs()))
}

/// Solves on `levels` successive bridge refinements of `master` and applies
/// `measure` to each solution.
fn refinement_study(
    solver: &Solver<'_>,
    x0: &GridFunction,
    master: &WienerPath,
    levels: usize,
    mut measure: impl FnMut(&SolutionPath, &WienerPath) -> Result<f64>,
) -> Result<RefinementReport> {
    if levels < 3 {
        return Err(Error::InvalidParameter(format!("a refinement study needs at least 3 levels, got {levels}")));
    }
    let mut w = master.clone();
    let mut rows = Vec::with_capacity(levels);
    for level in 0..levels {
        if level > 0 {
            w = w.refine();
        }
        let path = solver.solve_path(x0, &w)?;
        rows.push(RefinementLevel { level, h: w.step_size(), value: measure(&path, &w)? });
    }
    Ok(RefinementReport::from_levels(master.seed(), rows))
}

/// Energy-identity residual under simultaneous time-step and bridge refinement.
pub fn energy_study(
    solver: &Solver<'_>,
    x0: &GridFunction,
    master: &WienerPath,
    levels: usize,
) -> Result<EnergyResidualReport> {
    let tol = 10.0 * solver.config().newton_tol;
    refinement_study(solver, x0, master, levels, |path, w| {
        let consistency = solver.scheme_residual(path, w)?;
        if consistency > tol {
            return Err(Error::NonConvergence { iterations: 0, residual: consistency });
        }
        Ok(energy_residual(solver, path, w))
    })
}

pub fn max_increment(path: &SolutionPath) -> f64 {
    let spacing = path.mesh().spacing();
    (0..path.steps())
        .map(|k| {
            let d: f64 = path.state(k + 1).iter().zip(path.state(k)).map(|(a, b)| (a - b) * (a - b)).sum();
            (spacing * d).sqrt()
        })
        .fold(0.0, f64::max)
}

/// Max increment per level along one refined Brownian trajectory.
pub fn continuity_study(
    solver: &Solver<'_>,
    x0: &GridFunction,
    master: &WienerPath,
    levels: usize,
) -> Result<ContinuityReport> {
    refinement_study(solver, x0, master, levels, |path, _| Ok(max_increment(path)))
}

/// Fenchel gaps of the reported selections.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FenchelAudit {
    /// `max j(J_λ X_{k+1}) + j*(ξ_k) − J_λ X_{k+1} ξ_k`; zero up to rounding.
    pub displaced: f64,
    /// Same pairing at `X_{k+1}` itself: the regularization defect.
    pub undisplaced: f64,
}

pub fn fenchel_audit(path: &SolutionPath, graph: MonotoneGraph) -> Result<FenchelAudit> {
    let lambda = path.lambda();
    let mut displaced: f64 = 0.0;
    let mut undisplaced: f64 = 0.0;
    for k in 0..path.steps() {
        for (&x, &xi) in path.state(k + 1).iter().zip(path.selection(k)) {
            let u = graph.resolvent(lambda, x)?;
            displaced = displaced.max(graph.fenchel_gap(u, xi));
            undisplaced = undisplaced.max(graph.fenchel_gap(x, xi));
        }
    }
    Ok(FenchelAudit { displaced, undisplaced })
}

/// `min_k h ⟨A_λ X_k, β_λ(X_k)⟩` with `λ` the path's Yosida parameter.
pub fn sign_audit(path: &SolutionPath, op: &crate::gelfand::EllipticOperator, graph: MonotoneGraph) -> Result<f64> {
    let lambda = path.lambda();
    let spacing = path.mesh().spacing();
    let mut worst = f64::INFINITY;
    for k in 0..=path.steps() {
        let x = path.state_function(k);
        let ax = op.yosida(lambda, &x)?;
        let beta: Vec<f64> = x.values().iter().map(|&v| graph.yosida(lambda, v)).collect::<Result<_>>()?;
        worst = worst.min(path.h_time() * spacing * dot(ax.values(), &beta));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gelfand::{EllipticOperator, Mesh};
    use crate::noise::DiffusionCoefficient;
    use crate::solver::{Model, SolverConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn model(n: usize, graph: MonotoneGraph, diffusion: impl FnOnce(Mesh) -> DiffusionCoefficient) -> Model {
        let m = Mesh::new(n).unwrap();
        Model::new(EllipticOperator::dirichlet_laplacian(m), graph, diffusion(m)).unwrap()
    }

    #[test]
    fn heat_flow_residual_is_first_order() {
        let md = model(31, MonotoneGraph::Linear { slope: 0.0 }, |m| DiffusionCoefficient::zero(m, 0));
        let solver = Solver::new(&md, SolverConfig::default());
        let x0 = GridFunction::sine_mode(md.mesh(), 1);
        let report = energy_study(&solver, &x0, &WienerPath::zero(0, 16, 1.0).unwrap(), 6).unwrap();
        assert!((report.order - 1.0).abs() < 0.1, "order {}", report.order);
        assert!(report.strictly_decreasing());
    }

    #[test]
    fn zero_datum_without_noise_has_no_residual() {
        let md = model(15, MonotoneGraph::SoftSign, |m| DiffusionCoefficient::zero(m, 0));
        let solver = Solver::new(&md, SolverConfig::default());
        let w = WienerPath::zero(0, 64, 1.0).unwrap();
        let path = solver.solve_path(&GridFunction::zeros(md.mesh()), &w).unwrap();
        assert_eq!(energy_residual(&solver, &path, &w), 0.0);
    }

    #[test]
    fn single_step_mismatch_has_zero_mean() {
        // A = 0, β = 0: the one-step defect is ½‖B dW‖² − ½h‖B‖²_HS
        let m = Mesh::new(9).unwrap();
        let md = Model::new(
            EllipticOperator::with_diffusivity(m, 0.0).unwrap(),
            MonotoneGraph::Linear { slope: 0.0 },
            DiffusionCoefficient::additive(m, 3, 1.0, 1.0).unwrap(),
        )
        .unwrap();
        let solver = Solver::new(&md, SolverConfig::default());
        let x0 = GridFunction::sine_mode(m, 1);
        let samples = 4000;
        let h = 0.1;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for seed in 0..samples {
            let w = WienerPath::sample(3, 1, h, seed).unwrap();
            let path = solver.solve_path(&x0, &w).unwrap();
            let d = solver.energy_terms(&path, &w)[0].defect();
            let direct = {
                let g = w.increment(0);
                let noise_sq: f64 = (0..3).map(|k| g[k] * g[k] / ((k + 1) as f64).powi(2)).sum();
                let hs: f64 = (0..3).map(|k| 1.0 / ((k + 1) as f64).powi(2)).sum();
                0.5 * noise_sq - 0.5 * h * hs
            };
            assert!((d - direct).abs() < 1e-12, "{d} vs {direct}");
            sum += d;
            sq += d * d;
        }
        let mean = sum / samples as f64;
        let se = ((sq / samples as f64 - mean * mean) / samples as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn fenchel_gap_displaced_vs_undisplaced() {
        let w = WienerPath::sample(4, 128, 1.0, 5).unwrap();
        for graph in [MonotoneGraph::Linear { slope: 2.0 }, MonotoneGraph::SoftSign] {
            let md = model(21, graph, |m| DiffusionCoefficient::diagonal_linear(m, 4, 1.0, 1.0, 0.5).unwrap());
            let solver = Solver::new(&md, SolverConfig::default());
            let path = solver.solve_path(&GridFunction::sine_mode(md.mesh(), 1), &w).unwrap();
            let audit = fenchel_audit(&path, graph).unwrap();
            let tol = if matches!(graph, MonotoneGraph::Linear { .. }) { 1e-10 } else { 1e-8 };
            assert!(audit.displaced <= tol, "{graph}: {}", audit.displaced);
            assert!(audit.undisplaced >= audit.displaced);
        }
    }

    #[test]
    fn undisplaced_gap_is_order_lambda() {
        let md = model(15, MonotoneGraph::SoftSign, |m| DiffusionCoefficient::zero(m, 0));
        let x0 = GridFunction::sine_mode(md.mesh(), 1).scaled(2.0);
        let w = WienerPath::zero(0, 32, 0.5).unwrap();
        let gaps: Vec<f64> = [1e-2, 1e-3, 1e-4]
            .iter()
            .map(|&l| {
                let cfg = SolverConfig::default().with_regularization(crate::solver::Regularization::Fixed(l));
                let path = Solver::new(&md, cfg).solve_path(&x0, &w).unwrap();
                fenchel_audit(&path, md.graph).unwrap().undisplaced
            })
            .collect();
        // the sign graph gives gap = λ/2 exactly at the kink edge, at most
        for (g, l) in gaps.iter().zip([1e-2, 1e-3, 1e-4]) {
            assert!(*g <= l, "{g} > {l}");
        }
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2]);
    }

    #[test]
    fn continuity_without_noise_is_first_order() {
        let md = model(31, MonotoneGraph::Linear { slope: 0.0 }, |m| DiffusionCoefficient::zero(m, 0));
        let solver = Solver::new(&md, SolverConfig::default());
        let x0 = GridFunction::sine_mode(md.mesh(), 1);
        let report = continuity_study(&solver, &x0, &WienerPath::zero(0, 16, 1.0).unwrap(), 7).unwrap();
        assert!((report.order - 1.0).abs() < 0.1, "order {}", report.order);
        assert!(report.strictly_decreasing());
    }

    #[test]
    fn continuity_of_pure_noise_is_half_order() {
        let m = Mesh::new(15).unwrap();
        let md = Model::new(
            EllipticOperator::with_diffusivity(m, 0.0).unwrap(),
            MonotoneGraph::Linear { slope: 0.0 },
            DiffusionCoefficient::additive(m, 4, 1.0, 1.0).unwrap(),
        )
        .unwrap();
        let solver = Solver::new(&md, SolverConfig::default());
        let mut orders = Vec::new();
        for seed in 0..10 {
            let w = WienerPath::sample(4, 32, 1.0, seed).unwrap();
            orders.push(continuity_study(&solver, &GridFunction::zeros(m), &w, 5).unwrap().order);
        }
        let mean = crate::stats::mean(&orders);
        assert!((0.3..=0.6).contains(&mean), "mean order {mean}");
    }

    #[test]
    fn constant_path_has_no_increments() {
        let md = model(9, MonotoneGraph::SoftSign, |m| DiffusionCoefficient::zero(m, 0));
        let path = Solver::new(&md, SolverConfig::default())
            .solve_path(&GridFunction::zeros(md.mesh()), &WienerPath::zero(0, 10, 1.0).unwrap())
            .unwrap();
        assert_eq!(max_increment(&path), 0.0);
    }

    #[test]
    fn sign_audit_is_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for graph in MonotoneGraph::catalog() {
            let md = model(25, graph, |m| DiffusionCoefficient::diagonal_linear(m, 5, 1.0, 1.0, 0.3).unwrap());
            let values: Vec<f64> = (0..25).map(|_| StandardNormal.sample(&mut rng)).collect();
            let x0 = GridFunction::new(md.mesh(), values).unwrap();
            let w = WienerPath::sample(5, 50, 0.5, 11).unwrap();
            let path = Solver::new(&md, SolverConfig::default()).solve_path(&x0, &w).unwrap();
            assert!(sign_audit(&path, &md.operator, graph).unwrap() >= -1e-9, "{graph}");
        }
    }

    #[test]
    fn report_csv_has_one_row_per_level() {
        let levels = (0..4).map(|l| RefinementLevel { level: l, h: 0.5f64.powi(l as i32), value: 1.0 / (l + 1) as f64 }).collect();
        let r = RefinementReport::from_levels(3, levels);
        assert_eq!(r.to_csv().lines().count(), 5);
        assert!(r.strictly_decreasing());
    }
}
