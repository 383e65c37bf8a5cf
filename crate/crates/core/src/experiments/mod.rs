//! Monte Carlo studies: moment bounds, Lipschitz dependence on the datum,
//! regularity lifting and long-run time averages.
//!
//! Path `i` of a run with master seed `s` draws its datum from stream `2i` and
//! its noise from stream `2i + 1` of `s`, so every row is reproducible from
//! `(s, i)` alone and results do not depend on the thread count.

mod ergodic;
mod lipschitz;
mod moments;
mod regularity;

pub use ergodic::{ergodic_run, ErgodicReport, ErgodicSpec, TimeAverage};
pub use lipschitz::{lipschitz_scan, LipschitzReport, LipschitzRow, LipschitzSpec};
pub use moments::{moment_scan, MomentCell, MomentReport, MomentSpec};
pub use regularity::{regularity_study, rows_to_csv as regularity_csv, Datum, RegularityRow, RegularitySpec};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::gelfand::{dot, EllipticOperator, GridFunction, Mesh};
use crate::graph::MonotoneGraph;
use crate::noise::{path_rng, path_seed, WienerPath};
use crate::solver::{SolutionPath, StepView};

/// Datum stream of path `index`.
pub fn datum_rng(master: u64, index: u64) -> rand_chacha::ChaCha8Rng {
    path_rng(master, 2 * index)
}

/// Noise of path `index`.
pub fn path_noise(master: u64, index: u64, k_modes: usize, steps: usize, t_end: f64) -> Result<WienerPath> {
    WienerPath::sample(k_modes, steps, t_end, path_seed(master, 2 * index + 1))
}

/// `Σ_{k ≤ modes} g_k k^{-1} φ_k` with standard normal `g_k`.
pub fn smooth_datum(mesh: Mesh, modes: usize, rng: &mut impl Rng) -> GridFunction {
    let mut values = vec![0.0; mesh.len()];
    for k in 1..=modes.min(mesh.len()) {
        let g: f64 = StandardNormal.sample(rng);
        let mode = GridFunction::sine_mode(mesh, k);
        for (v, m) in values.iter_mut().zip(mode.values()) {
            *v += g / k as f64 * m;
        }
    }
    GridFunction::from_vec_unchecked(mesh, values)
}

/// Independent standard normal nodal values: `‖·‖_H ≈ 1` on every mesh while
/// the discrete `V`-norm grows with `n`.
pub fn rough_datum(mesh: Mesh, rng: &mut impl Rng) -> GridFunction {
    GridFunction::from_vec_unchecked(mesh, (0..mesh.len()).map(|_| StandardNormal.sample(rng)).collect())
}

/// Norms of one path in `E = C([0,T]; H) ∩ L²(0,T; V)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PathNorms {
    pub sup_h: f64,
    /// `(Σ_k h ‖X_{k+1}‖²_V)^{1/2}`
    pub l2_v: f64,
    /// `Σ_k h ∫_D (j(X_{k+1}) + j*(ξ_k))`
    pub potential: f64,
}

impl PathNorms {
    pub fn e_norm(&self) -> f64 {
        self.sup_h + self.l2_v
    }
}

/// Streaming accumulator for [`PathNorms`], fed by solver visits.
pub(crate) struct NormAccumulator<'a> {
    op: &'a EllipticOperator,
    graph: MonotoneGraph,
    spacing: f64,
    sup_sq: f64,
    l2_v_sq: f64,
    potential: f64,
    ax: Vec<f64>,
}

impl<'a> NormAccumulator<'a> {
    pub(crate) fn new(op: &'a EllipticOperator, graph: MonotoneGraph, x0: &GridFunction) -> Self {
        let spacing = x0.mesh().spacing();
        let v = x0.values();
        Self {
            op,
            graph,
            spacing,
            sup_sq: spacing * dot(v, v),
            l2_v_sq: 0.0,
            potential: 0.0,
            ax: vec![0.0; v.len()],
        }
    }

    pub(crate) fn visit(&mut self, view: &StepView<'_>) {
        let y = view.next;
        self.sup_sq = self.sup_sq.max(self.spacing * dot(y, y));
        self.op.apply_slice(y, &mut self.ax);
        self.l2_v_sq += view.h * self.spacing * dot(&self.ax, y);
        let pot: f64 = y.iter().zip(view.xi).map(|(&x, &s)| self.graph.potential(x) + self.graph.conjugate(s)).sum();
        self.potential += view.h * self.spacing * pot;
    }

    pub(crate) fn finish(self) -> PathNorms {
        PathNorms { sup_h: self.sup_sq.sqrt(), l2_v: self.l2_v_sq.max(0.0).sqrt(), potential: self.potential }
    }
}

/// `‖X − Y‖_E` for two stored paths on the same grid.
pub fn difference_norm(a: &SolutionPath, b: &SolutionPath, op: &EllipticOperator) -> f64 {
    let spacing = a.mesh().spacing();
    let n = a.mesh().len();
    let mut d = vec![0.0; n];
    let mut ad = vec![0.0; n];
    let mut sup_sq: f64 = 0.0;
    let mut l2 = 0.0;
    for k in 0..=a.steps().min(b.steps()) {
        for ((di, x), y) in d.iter_mut().zip(a.state(k)).zip(b.state(k)) {
            *di = x - y;
        }
        sup_sq = sup_sq.max(spacing * dot(&d, &d));
        if k > 0 {
            op.apply_slice(&d, &mut ad);
            l2 += a.h_time() * spacing * dot(&ad, &d);
        }
    }
    sup_sq.sqrt() + l2.max(0.0).sqrt()
}

/// Plain-text `key=value` manifest lines.
pub fn manifest(entries: &[(&str, String)]) -> String {
    entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

/// Largest relative deviation of `xs` from their mean.
pub fn relative_spread(xs: &[f64]) -> f64 {
    let m = crate::stats::mean(xs);
    xs.iter().map(|x| ((x - m) / m).abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::DiffusionCoefficient;
    use crate::solver::{Model, Solver, SolverConfig};

    #[test]
    fn data_have_expected_norms() {
        let m = Mesh::new(400).unwrap();
        let mut rng = datum_rng(1, 0);
        let rough = rough_datum(m, &mut rng);
        assert!((rough.norm() - 1.0).abs() < 0.1);
        let smooth = smooth_datum(m, 1, &mut rng);
        let e1 = GridFunction::sine_mode(m, 1);
        let c = crate::gelfand::h_inner(&smooth, &e1).unwrap();
        assert!(smooth.sub(&e1.scaled(c)).unwrap().norm() < 1e-12);
    }

    #[test]
    fn accumulator_matches_stored_path() {
        let m = Mesh::new(15).unwrap();
        let md = Model::new(
            EllipticOperator::dirichlet_laplacian(m),
            MonotoneGraph::PowerLaw { exponent: 3.0 },
            DiffusionCoefficient::diagonal_linear(m, 3, 1.0, 1.0, 0.2).unwrap(),
        )
        .unwrap();
        let solver = Solver::new(&md, SolverConfig::default());
        let x0 = GridFunction::sine_mode(m, 1);
        let w = WienerPath::sample(3, 40, 1.0, 6).unwrap();
        let path = solver.solve_path(&x0, &w).unwrap();
        let mut acc = NormAccumulator::new(&md.operator, md.graph, &x0);
        solver.integrate(&x0, 40, w.step_size(), |k, dw| dw.copy_from_slice(w.increment(k)), |v| acc.visit(v)).unwrap();
        let norms = acc.finish();
        let sup = path.h_norms().into_iter().fold(0.0, f64::max);
        assert!((norms.sup_h - sup).abs() < 1e-14);
        let zero = SolutionPath::clone(&path);
        let mut l2 = 0.0;
        for k in 1..=40 {
            l2 += w.step_size() * path.v_norm(&md.operator, k).powi(2);
        }
        assert!((norms.l2_v - l2.sqrt()).abs() < 1e-12);
        // distance of a path to the zero path is its own E-norm
        let origin = solver.solve_path(&GridFunction::zeros(m), &WienerPath::zero(3, 40, 1.0).unwrap()).unwrap();
        assert!((difference_norm(&zero, &origin, &md.operator) - norms.e_norm()).abs() < 1e-12);
        assert!(norms.potential > 0.0);
    }

    #[test]
    fn spread_of_constants() {
        assert_eq!(relative_spread(&[2.0, 2.0]), 0.0);
        assert!((relative_spread(&[1.0, 3.0]) - 0.5).abs() < 1e-15);
    }
}
