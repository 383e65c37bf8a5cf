use std::fmt::Write as _;

use rayon::prelude::*;

use super::{datum_rng, path_noise, rough_datum};
use crate::error::Result;
use crate::gelfand::{dot, GridFunction, Mesh};
use crate::io::{csv_line, CsvField};
use crate::noise::Diffusion;
use crate::solver::{Model, Solver, SolverConfig};
use crate::stats::{bootstrap, mean, Interval};

/// Initial datum family of a regularity study.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Datum {
    /// `sin(πx) + ½ sin(2πx)`, the same function on every mesh.
    Smooth,
    /// White-noise nodal values, `‖·‖_H ≈ 1`.
    Rough,
}

impl Datum {
    pub fn name(self) -> &'static str {
        match self {
            Datum::Smooth => "smooth",
            Datum::Rough => "rough",
        }
    }

    fn sample(self, mesh: Mesh, seed: u64, index: u64) -> GridFunction {
        match self {
            Datum::Smooth => GridFunction::from_fn(mesh, |x| {
                (std::f64::consts::PI * x).sin() + 0.5 * (2.0 * std::f64::consts::PI * x).sin()
            }),
            Datum::Rough => rough_datum(mesh, &mut datum_rng(seed, index)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegularitySpec {
    pub meshes: Vec<usize>,
    pub samples: usize,
    pub steps: usize,
    pub t_end: f64,
    pub seed: u64,
    pub resamples: usize,
}

impl Default for RegularitySpec {
    fn default() -> Self {
        Self { meshes: vec![50, 100, 200], samples: 50, steps: 200, t_end: 1.0, seed: 0, resamples: 400 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegularityRow {
    pub n: usize,
    pub datum: Datum,
    /// `E ‖X₀‖²_V`
    pub initial_v_sq: f64,
    /// `E sup_t ‖X_t‖²_V`
    pub sup_v_sq: f64,
    /// `E ∫₀ᵀ ‖A X_t‖² dt`
    pub a_energy: Interval,
}

impl RegularityRow {
    pub fn csv_header() -> &'static str {
        "n,datum,initial_v_sq,sup_v_sq,a_energy,a_energy_lower,a_energy_upper"
    }

    pub fn to_csv(&self) -> String {
        csv_line([
            CsvField::Int(self.n as i64),
            CsvField::Text(self.datum.name()),
            self.initial_v_sq.into(),
            self.sup_v_sq.into(),
            self.a_energy.estimate.into(),
            self.a_energy.lower.into(),
            self.a_energy.upper.into(),
        ])
    }
}

pub fn rows_to_csv(rows: &[RegularityRow]) -> String {
    let mut out = format!("{}\n", RegularityRow::csv_header());
    for r in rows {
        let _ = writeln!(out, "{}", r.to_csv());
    }
    out
}

/// Runs both data on every mesh; `build(mesh)` supplies the model on that mesh.
/// The noise of path `i` is the same on every mesh.
pub fn regularity_study(
    build: impl Fn(Mesh) -> Result<Model> + Sync,
    config: SolverConfig,
    spec: &RegularitySpec,
) -> Result<Vec<RegularityRow>> {
    let mut rows = Vec::new();
    for datum in [Datum::Smooth, Datum::Rough] {
        for &n in &spec.meshes {
            let mesh = Mesh::new(n)?;
            let model = build(mesh)?;
            let solver = Solver::new(&model, config);
            let spacing = mesh.spacing();
            let k_modes = model.diffusion.k_modes();
            let per_path: Result<Vec<(f64, f64, f64)>> = (0..spec.samples as u64)
                .into_par_iter()
                .map(|i| {
                    let x0 = datum.sample(mesh, spec.seed, i);
                    let w = path_noise(spec.seed, i, k_modes, spec.steps, spec.t_end)?;
                    let mut ax = vec![0.0; n];
                    model.operator.apply_slice(x0.values(), &mut ax);
                    let initial = spacing * dot(&ax, x0.values());
                    let mut sup = initial;
                    let mut energy = 0.0;
                    solver.integrate(&x0, spec.steps, w.step_size(), |k, dw| dw.copy_from_slice(w.increment(k)), |v| {
                        model.operator.apply_slice(v.next, &mut ax);
                        sup = sup.max(spacing * dot(&ax, v.next));
                        energy += v.h * spacing * dot(&ax, &ax);
                    })?;
                    Ok((initial, sup, energy))
                })
                .collect();
            let per_path = per_path?;
            let energies: Vec<f64> = per_path.iter().map(|p| p.2).collect();
            rows.push(RegularityRow {
                n,
                datum,
                initial_v_sq: mean(&per_path.iter().map(|p| p.0).collect::<Vec<_>>()),
                sup_v_sq: mean(&per_path.iter().map(|p| p.1).collect::<Vec<_>>()),
                a_energy: bootstrap(
                    &energies,
                    |r| r.iter().map(|v| **v).sum::<f64>() / r.len() as f64,
                    spec.resamples,
                    0.95,
                    spec.seed ^ n as u64,
                ),
            });
        }
    }
    Ok(rows)
}
