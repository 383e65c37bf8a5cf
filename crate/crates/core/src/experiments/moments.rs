use std::fmt::Write as _;

use rayon::prelude::*;

use super::{datum_rng, path_noise, relative_spread, smooth_datum, NormAccumulator, PathNorms};
use crate::error::{Error, Result};
use crate::io::{csv_line, CsvField};
use crate::noise::Diffusion;
use crate::solver::{Model, Solver, SolverConfig};
use crate::stats::{bootstrap, lp_norm, Interval};

#[derive(Clone, Debug, PartialEq)]
pub struct MomentSpec {
    pub p_list: Vec<f64>,
    pub scales: Vec<f64>,
    pub samples: usize,
    pub steps: usize,
    pub t_end: f64,
    pub seed: u64,
    /// Sine modes in the base datum `ζ`.
    pub datum_modes: usize,
    pub resamples: usize,
}

impl Default for MomentSpec {
    fn default() -> Self {
        Self {
            p_list: vec![0.5, 1.0, 2.0, 4.0],
            scales: vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0],
            samples: 200,
            steps: 200,
            t_end: 1.0,
            seed: 0,
            datum_modes: 4,
            resamples: 400,
        }
    }
}

/// Estimates for one `(p, scale)` pair.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentCell {
    pub p: f64,
    pub scale: f64,
    /// `‖X₀‖_{L^p(Ω;H)}`
    pub input: f64,
    /// `‖X‖_{L^p(Ω;E)}`
    pub output: f64,
    /// `‖sup_t ‖X_t‖_H‖_{L^p(Ω)}`
    pub output_sup: f64,
    /// `output² / (1 + input²)` with a bootstrap interval over paths.
    pub constant: Interval,
    /// `L^{p/2}(Ω)` quasi-norm of `∫∫ j(X) + j*(ξ)`.
    pub potential: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentReport {
    pub spec: MomentSpec,
    pub cells: Vec<MomentCell>,
    /// Scales whose Monte Carlo level aborted, with the solver error.
    pub failures: Vec<(f64, String)>,
}

impl MomentReport {
    /// `(scale, C)` for exponent `p`, in scale order.
    pub fn constants(&self, p: f64) -> Vec<(f64, f64)> {
        self.cells.iter().filter(|c| c.p == p).map(|c| (c.scale, c.constant.estimate)).collect()
    }

    /// Largest relative deviation of `C` from its mean over the `top` largest scales.
    pub fn stability(&self, p: f64, top: usize) -> f64 {
        let cs = self.constants(p);
        let start = cs.len().saturating_sub(top);
        relative_spread(&cs[start..].iter().map(|c| c.1).collect::<Vec<_>>())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("p,scale,samples,input,output,output_sup,constant,constant_lower,constant_upper,potential\n");
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{}",
                csv_line([
                    c.p.into(),
                    c.scale.into(),
                    CsvField::Int(self.spec.samples as i64),
                    c.input.into(),
                    c.output.into(),
                    c.output_sup.into(),
                    c.constant.estimate.into(),
                    c.constant.lower.into(),
                    c.constant.upper.into(),
                    c.potential.into(),
                ])
            );
        }
        out
    }
}

struct Sample {
    input: f64,
    norms: PathNorms,
}

/// Solves `samples` paths from `X₀ = s ζ` for every scale `s`. Datum and noise
/// of path `i` are shared across scales.
pub fn moment_scan(model: &Model, config: SolverConfig, spec: &MomentSpec) -> Result<MomentReport> {
    if spec.samples < 50 {
        return Err(Error::InvalidParameter(format!("moment scan needs at least 50 samples, got {}", spec.samples)));
    }
    let solver = Solver::new(model, config);
    let mesh = model.mesh();
    let k_modes = model.diffusion.k_modes();
    let mut cells = Vec::new();
    let mut failures = Vec::new();
    for &scale in &spec.scales {
        let samples: Result<Vec<Sample>> = (0..spec.samples as u64)
            .into_par_iter()
            .map(|i| {
                let x0 = smooth_datum(mesh, spec.datum_modes, &mut datum_rng(spec.seed, i)).scaled(scale);
                let w = path_noise(spec.seed, i, k_modes, spec.steps, spec.t_end)?;
                let mut acc = NormAccumulator::new(&model.operator, model.graph, &x0);
                solver.integrate(&x0, spec.steps, w.step_size(), |k, dw| dw.copy_from_slice(w.increment(k)), |v| {
                    acc.visit(v)
                })?;
                Ok(Sample { input: x0.norm(), norms: acc.finish() })
            })
            .collect();
        let samples = match samples {
            Ok(s) => s,
            Err(e) => {
                failures.push((scale, e.to_string()));
                continue;
            }
        };
        for &p in &spec.p_list {
            let constant = |rows: &[&Sample]| {
                let ins: Vec<f64> = rows.iter().map(|s| s.input).collect();
                let outs: Vec<f64> = rows.iter().map(|s| s.norms.e_norm()).collect();
                let (i, o) = (lp_norm(&ins, p), lp_norm(&outs, p));
                o * o / (1.0 + i * i)
            };
            let ins: Vec<f64> = samples.iter().map(|s| s.input).collect();
            let outs: Vec<f64> = samples.iter().map(|s| s.norms.e_norm()).collect();
            let sups: Vec<f64> = samples.iter().map(|s| s.norms.sup_h).collect();
            let pots: Vec<f64> = samples.iter().map(|s| s.norms.potential).collect();
            cells.push(MomentCell {
                p,
                scale,
                input: lp_norm(&ins, p),
                output: lp_norm(&outs, p),
                output_sup: lp_norm(&sups, p),
                constant: bootstrap(&samples, constant, spec.resamples, 0.95, spec.seed ^ p.to_bits()),
                potential: lp_norm(&pots, 0.5 * p),
            });
        }
    }
    Ok(MomentReport { spec: spec.clone(), cells, failures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gelfand::{EllipticOperator, Mesh};
    use crate::graph::MonotoneGraph;
    use crate::noise::DiffusionCoefficient;

    fn small_spec(scales: Vec<f64>) -> MomentSpec {
        MomentSpec { scales, samples: 50, steps: 50, resamples: 100, ..MomentSpec::default() }
    }

    #[test]
    fn noise_floor_at_zero_scale() {
        let m = Mesh::new(15).unwrap();
        let md = Model::new(
            EllipticOperator::dirichlet_laplacian(m),
            MonotoneGraph::SoftSign,
            DiffusionCoefficient::additive(m, 4, 1.0, 1.0).unwrap(),
        )
        .unwrap();
        let r = moment_scan(&md, SolverConfig::default(), &small_spec(vec![0.0])).unwrap();
        for c in &r.cells {
            assert_eq!(c.input, 0.0);
            assert!(c.output > 0.0);
        }
    }

    #[test]
    fn deterministic_heat_flow_contracts() {
        let m = Mesh::new(15).unwrap();
        let md = Model::new(
            EllipticOperator::dirichlet_laplacian(m),
            MonotoneGraph::Linear { slope: 0.0 },
            DiffusionCoefficient::zero(m, 2),
        )
        .unwrap();
        let r = moment_scan(&md, SolverConfig::default(), &small_spec(vec![1.0, 3.0])).unwrap();
        for c in &r.cells {
            assert!(c.output_sup <= c.input * (1.0 + 1e-12), "p={} {} > {}", c.p, c.output_sup, c.input);
        }
        assert_eq!(r.to_csv().lines().count(), 1 + 2 * 4);
    }

    #[test]
    fn scan_is_deterministic() {
        let m = Mesh::new(9).unwrap();
        let md = Model::new(
            EllipticOperator::dirichlet_laplacian(m),
            MonotoneGraph::SoftSign,
            DiffusionCoefficient::diagonal_linear(m, 3, 1.0, 1.0, 0.5).unwrap(),
        )
        .unwrap();
        let spec = small_spec(vec![2.0]);
        let a = moment_scan(&md, SolverConfig::default(), &spec).unwrap();
        let b = moment_scan(&md, SolverConfig::default(), &spec).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert!(a.cells.iter().all(|c| c.potential.is_finite()));
    }

    #[test]
    fn too_few_samples_rejected() {
        let m = Mesh::new(5).unwrap();
        let md = Model::new(EllipticOperator::dirichlet_laplacian(m), MonotoneGraph::SoftSign, DiffusionCoefficient::zero(m, 1))
            .unwrap();
        let spec = MomentSpec { samples: 10, ..MomentSpec::default() };
        assert!(moment_scan(&md, SolverConfig::default(), &spec).is_err());
    }
}
