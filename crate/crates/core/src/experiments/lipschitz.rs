use std::fmt::Write as _;

use rayon::prelude::*;

use super::{datum_rng, difference_norm, path_noise, smooth_datum};
use crate::error::{Error, Result};
use crate::io::{csv_line, CsvField};
use crate::noise::Diffusion;
use crate::solver::{Model, Solver, SolverConfig};
use crate::stats::{lp_norm, mean};

#[derive(Clone, Debug, PartialEq)]
pub struct LipschitzSpec {
    pub p: f64,
    /// Initial separations `‖X₀ − Y₀‖_H`, largest first.
    pub deltas: Vec<f64>,
    pub samples: usize,
    pub steps: usize,
    pub t_end: f64,
    pub seed: u64,
    pub datum_modes: usize,
}

impl Default for LipschitzSpec {
    fn default() -> Self {
        Self {
            p: 2.0,
            deltas: vec![1.0, 1e-1, 1e-2, 1e-3],
            samples: 500,
            steps: 100,
            t_end: 1.0,
            seed: 0,
            datum_modes: 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LipschitzRow {
    pub delta: f64,
    /// `‖X₀ − Y₀‖_{L^p(Ω;H)}`, equal to `δ` by construction.
    pub input: f64,
    /// `‖X − Y‖_{L^p(Ω;E)}`
    pub output: f64,
    pub ratio: f64,
    /// `E(‖X₀ − Y₀‖_H ∧ 1)`
    pub metric_input: f64,
    /// `E(‖X − Y‖_E ∧ 1)`
    pub metric_output: f64,
    pub metric_ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LipschitzReport {
    pub spec: LipschitzSpec,
    pub rows: Vec<LipschitzRow>,
}

impl LipschitzReport {
    /// Ratio at the smallest `δ` over the ratio at the largest `δ`.
    pub fn growth(&self) -> f64 {
        self.endpoint_quotient(|r| r.ratio)
    }

    pub fn metric_growth(&self) -> f64 {
        self.endpoint_quotient(|r| r.metric_ratio)
    }

    fn endpoint_quotient(&self, f: impl Fn(&LipschitzRow) -> f64) -> f64 {
        let by_delta = |a: &&LipschitzRow, b: &&LipschitzRow| a.delta.total_cmp(&b.delta);
        match (self.rows.iter().min_by(by_delta), self.rows.iter().max_by(by_delta)) {
            (Some(small), Some(large)) => f(small) / f(large),
            _ => f64::NAN,
        }
    }

    /// `d(X, Y)` decreases as `δ` decreases.
    pub fn metric_monotone(&self) -> bool {
        let mut rows: Vec<&LipschitzRow> = self.rows.iter().collect();
        rows.sort_by(|a, b| b.delta.total_cmp(&a.delta));
        rows.windows(2).all(|w| w[1].metric_output <= w[0].metric_output)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("p,delta,samples,input,output,ratio,metric_input,metric_output,metric_ratio\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}",
                csv_line([
                    self.spec.p.into(),
                    r.delta.into(),
                    CsvField::Int(self.spec.samples as i64),
                    r.input.into(),
                    r.output.into(),
                    r.ratio.into(),
                    r.metric_input.into(),
                    r.metric_output.into(),
                    r.metric_ratio.into(),
                ])
            );
        }
        out
    }
}

/// Couples `X` and `Y = X` started from `X₀ + δ η` (unit `η`) on common noise.
pub fn lipschitz_scan(model: &Model, config: SolverConfig, spec: &LipschitzSpec) -> Result<LipschitzReport> {
    if model.diffusion.global_lipschitz().is_none() {
        return Err(Error::InvalidParameter("the Lipschitz scan needs a globally Lipschitz diffusion".into()));
    }
    let solver = Solver::new(model, config);
    let mesh = model.mesh();
    let k_modes = model.diffusion.k_modes();
    let mut rows = Vec::with_capacity(spec.deltas.len());
    for &delta in &spec.deltas {
        let pairs: Result<Vec<(f64, f64)>> = (0..spec.samples as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = datum_rng(spec.seed, i);
                let x0 = smooth_datum(mesh, spec.datum_modes, &mut rng);
                let dir = smooth_datum(mesh, spec.datum_modes, &mut rng);
                let dir = dir.scaled(1.0 / dir.norm());
                let y0 = x0.add_scaled(delta, &dir)?;
                let w = path_noise(spec.seed, i, k_modes, spec.steps, spec.t_end)?;
                let x = solver.solve_path(&x0, &w)?;
                let y = solver.solve_path(&y0, &w)?;
                Ok((y0.sub(&x0)?.norm(), difference_norm(&x, &y, &model.operator)))
            })
            .collect();
        let pairs = pairs?;
        let ins: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let outs: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let input = lp_norm(&ins, spec.p);
        let output = lp_norm(&outs, spec.p);
        let metric_input = mean(&ins.iter().map(|v| v.min(1.0)).collect::<Vec<_>>());
        let metric_output = mean(&outs.iter().map(|v| v.min(1.0)).collect::<Vec<_>>());
        rows.push(LipschitzRow {
            delta,
            input,
            output,
            ratio: output / input,
            metric_input,
            metric_output,
            metric_ratio: metric_output / metric_input,
        });
    }
    Ok(LipschitzReport { spec: spec.clone(), rows })
}
