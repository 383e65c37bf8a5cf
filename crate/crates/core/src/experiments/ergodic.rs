use std::fmt::Write as _;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::gelfand::{dot, GridFunction};
use crate::io::{csv_line, CsvField};
use crate::noise::path_rng;
use crate::solver::{Model, Solver, SolverConfig};
use crate::stats::{block_bootstrap_mean, Interval};

#[derive(Clone, Debug, PartialEq)]
pub struct ErgodicSpec {
    pub t_long: f64,
    pub steps: usize,
    /// Fraction of `[0, T]` discarded before averaging.
    pub burn_in: f64,
    pub ladder: Vec<u32>,
    pub seed: u64,
    /// Noise stream of this replica.
    pub replica: u64,
    /// Bootstrap block length in time units.
    pub block_time: f64,
    pub resamples: usize,
}

impl Default for ErgodicSpec {
    fn default() -> Self {
        Self {
            t_long: 100.0,
            steps: 10_000,
            burn_in: 0.2,
            ladder: vec![1, 2, 4, 8, 16],
            seed: 0,
            replica: 0,
            block_time: 2.0,
            resamples: 400,
        }
    }
}

/// Time average of one functional after burn-in.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeAverage {
    pub name: String,
    pub mean: Interval,
    /// `|m(T) − m(T_½)| / |m(T)|` with `m` the running mean and `T_½` the
    /// midpoint of the averaging window.
    pub drift: f64,
    /// `max |m(t) − m(T)| / |m(T)|` over the final half; a stricter diagnostic.
    pub excursion: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErgodicReport {
    pub spec: ErgodicSpec,
    /// `‖u‖²`, `‖u‖²_V`, `∫j(u)`, `∫j*(β⁰(u))`, `‖Au‖²`, in that order.
    pub averages: Vec<TimeAverage>,
    /// `(n, average of F_n)` with `F_n(u) = ‖A_{1/n} u‖² ∧ n²`.
    pub ladder: Vec<(u32, TimeAverage)>,
    pub samples: usize,
}

impl ErgodicReport {
    pub fn average(&self, name: &str) -> Option<&TimeAverage> {
        self.averages.iter().find(|a| a.name == name)
    }

    /// All headline averages have drift below `tol`.
    pub fn stabilized(&self, tol: f64) -> bool {
        self.averages.iter().all(|a| a.drift < tol)
    }

    /// `F_n` averages non-decreasing in `n` and below the `‖Au‖²` average plus its half-width.
    pub fn ladder_monotone_and_bounded(&self) -> bool {
        let Some(au) = self.average("a_norm_sq") else {
            return false;
        };
        let bound = au.mean.estimate + au.mean.half_width();
        self.ladder.windows(2).all(|w| w[1].1.mean.estimate >= w[0].1.mean.estimate)
            && self.ladder.iter().all(|(_, a)| a.mean.estimate <= bound)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("quantity,mean,lower,upper,drift,excursion\n");
        let ladder = self.ladder.iter().map(|(_, a)| a);
        for a in self.averages.iter().chain(ladder) {
            let _ = writeln!(
                out,
                "{}",
                csv_line([
                    CsvField::Text(&a.name),
                    a.mean.estimate.into(),
                    a.mean.lower.into(),
                    a.mean.upper.into(),
                    a.drift.into(),
                    a.excursion.into(),
                ])
            );
        }
        out
    }
}

/// Running-mean diagnostics over the final half of the averaging window:
/// `(|m(T) − m(T_½)|, max_{t ≥ T_½} |m(t) − m(T)|)`, both relative to `|m(T)|`.
fn running_drift(series: &[f64]) -> (f64, f64) {
    if series.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let total: f64 = series.iter().sum();
    let last = total / series.len() as f64;
    let half = series.len().div_ceil(2);
    let mut acc = 0.0;
    let mut at_half = last;
    let mut worst: f64 = 0.0;
    for (j, v) in series.iter().enumerate() {
        acc += v;
        let m = acc / (j + 1) as f64;
        if j + 1 == half {
            at_half = m;
        }
        if j + 1 >= half {
            worst = worst.max((m - last).abs());
        }
    }
    let scale = if last.abs() > f64::MIN_POSITIVE { last.abs() } else { 1.0 };
    ((at_half - last).abs() / scale, worst / scale)
}

/// One long trajectory from `x0`; functionals are sampled at every grid time after burn-in.
pub fn ergodic_run(model: &Model, config: SolverConfig, x0: &GridFunction, spec: &ErgodicSpec) -> Result<ErgodicReport> {
    if !(0.0..1.0).contains(&spec.burn_in) {
        return Err(Error::InvalidParameter(format!("burn-in fraction must lie in [0, 1), got {}", spec.burn_in)));
    }
    let solver = Solver::new(model, config);
    let op = &model.operator;
    let graph = model.graph;
    let mesh = model.mesh();
    let spacing = mesh.spacing();
    let h = spec.t_long / spec.steps as f64;
    let sd = h.sqrt();
    let first = (spec.burn_in * spec.steps as f64).ceil() as usize;

    let names = ["h_norm_sq", "v_norm_sq", "j", "j_conj_min_section", "a_norm_sq"];
    let mut series: Vec<Vec<f64>> = vec![Vec::with_capacity(spec.steps - first.min(spec.steps)); names.len()];
    let mut ladder_series: Vec<Vec<f64>> = vec![Vec::new(); spec.ladder.len()];
    let mut ax = vec![0.0; mesh.len()];
    let mut failure = None;

    let mut rng = path_rng(spec.seed, spec.replica);
    solver.integrate(
        x0,
        spec.steps,
        h,
        |_, dw| {
            for d in dw.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *d = sd * z;
            }
        },
        |v| {
            if v.k < first || failure.is_some() {
                return;
            }
            let u = v.next;
            op.apply_slice(u, &mut ax);
            series[0].push(spacing * dot(u, u));
            series[1].push(spacing * dot(&ax, u));
            series[2].push(spacing * u.iter().map(|&x| graph.potential(x)).sum::<f64>());
            series[3].push(spacing * u.iter().map(|&x| graph.conjugate(graph.minimal_section(x))).sum::<f64>());
            series[4].push(spacing * dot(&ax, &ax));
            let uf = GridFunction::from_vec_unchecked(mesh, u.to_vec());
            for (slot, &n) in ladder_series.iter_mut().zip(&spec.ladder) {
                match op.yosida(1.0 / n as f64, &uf) {
                    Ok(a) => slot.push((a.norm() * a.norm()).min((n as f64).powi(2))),
                    Err(e) => failure = Some(e),
                }
            }
        },
    )?;
    if let Some(e) = failure {
        return Err(e);
    }

    let block = ((spec.block_time / h).round() as usize).max(1);
    let summarize = |name: String, s: &[f64], salt: u64| {
        let (drift, excursion) = running_drift(s);
        TimeAverage {
            name,
            mean: block_bootstrap_mean(s, block, spec.resamples, 0.95, spec.seed ^ spec.replica.rotate_left(17) ^ salt),
            drift,
            excursion,
        }
    };
    let averages = names.iter().zip(&series).enumerate().map(|(i, (n, s))| summarize(n.to_string(), s, i as u64)).collect();
    let ladder = spec
        .ladder
        .iter()
        .zip(&ladder_series)
        .map(|(&n, s)| (n, summarize(format!("f_{n}"), s, 100 + n as u64)))
        .collect();
    Ok(ErgodicReport { spec: spec.clone(), averages, ladder, samples: series[0].len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gelfand::{EllipticOperator, Mesh};
    use crate::graph::MonotoneGraph;
    use crate::noise::DiffusionCoefficient;

    #[test]
    fn drift_of_constant_and_trending_series() {
        assert_eq!(running_drift(&[2.0; 10]), (0.0, 0.0));
        let ramp: Vec<f64> = (0..100).map(|i| i as f64).collect();
        // running mean at the midpoint is 24.5 against a final 49.5
        let (drift, excursion) = running_drift(&ramp);
        assert!((drift - 25.0 / 49.5).abs() < 1e-12);
        assert_eq!(drift, excursion);
        // running mean is 1 at the midpoint and at the end but not in between
        let bump = [1.0, 1.0, 1.0, 1.0, 1.0, 9.0, -7.0, 1.0, 1.0, 1.0];
        let (drift, excursion) = running_drift(&bump);
        assert!(drift < 1e-15);
        assert!((excursion - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn without_noise_averages_vanish() {
        let m = Mesh::new(15).unwrap();
        let md = Model::new(
            EllipticOperator::dirichlet_laplacian(m),
            MonotoneGraph::PowerLaw { exponent: 3.0 },
            DiffusionCoefficient::zero(m, 2),
        )
        .unwrap();
        let spec = ErgodicSpec { t_long: 20.0, steps: 2000, resamples: 50, ..ErgodicSpec::default() };
        let r = ergodic_run(&md, SolverConfig::default(), &GridFunction::sine_mode(m, 1).scaled(3.0), &spec).unwrap();
        for a in &r.averages {
            assert!(a.mean.estimate.abs() < 1e-10, "{} = {}", a.name, a.mean.estimate);
        }
        assert_eq!(r.samples, 1600);
    }

    #[test]
    fn ladder_is_monotone_on_a_short_run() {
        let m = Mesh::new(15).unwrap();
        let md = Model::new(
            EllipticOperator::dirichlet_laplacian(m),
            MonotoneGraph::PowerLaw { exponent: 3.0 },
            DiffusionCoefficient::additive(m, 4, 1.0, 2.0).unwrap(),
        )
        .unwrap();
        let spec = ErgodicSpec { t_long: 5.0, steps: 500, resamples: 50, ..ErgodicSpec::default() };
        let r = ergodic_run(&md, SolverConfig::default(), &GridFunction::zeros(m), &spec).unwrap();
        assert!(r.ladder_monotone_and_bounded());
        assert_eq!(r.to_csv().lines().count(), 1 + 5 + 5);
    }
}
