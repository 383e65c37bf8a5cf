use std::fmt::Write as _;

use monotone_spde::experiments::{
    ergodic_run, lipschitz_scan, moment_scan, path_noise, regularity_study, regularity_csv, Datum, ErgodicSpec,
    LipschitzSpec, MomentSpec, RegularitySpec,
};
use monotone_spde::io::{csv_line, CsvField};
use monotone_spde::ito::{continuity_study, energy_study, fenchel_audit, sign_audit, RefinementReport, FIT_LEVELS};
use monotone_spde::noise::path_rng;
use monotone_spde::stats::{mean, tail_order};
use monotone_spde::*;
use rand::Rng;

use crate::config::RunConfig;

/// One asserted threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    /// `value <= bound` when set, `value >= bound` otherwise.
    pub upper: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self { name: name.into(), value, bound, upper: true }
    }

    pub fn at_least(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self { name: name.into(), value, bound, upper: false }
    }

    pub fn holds(name: impl Into<String>, ok: bool) -> Self {
        Self::at_least(name, if ok { 1.0 } else { 0.0 }, 1.0)
    }

    pub fn pass(&self) -> bool {
        if self.upper {
            self.value <= self.bound
        } else {
            self.value >= self.bound
        }
    }

    fn relation(&self) -> &'static str {
        if self.upper {
            "<="
        } else {
            ">="
        }
    }
}

/// Artifacts and assertions of one subcommand.
#[derive(Debug, Default)]
pub struct Outcome {
    /// `(file name, contents)`
    pub files: Vec<(String, String)>,
    pub checks: Vec<Check>,
}

impl Outcome {
    pub fn checks_csv(&self) -> String {
        let mut out = String::from("check,value,relation,bound,pass\n");
        for c in &self.checks {
            let pass = if c.pass() { "true" } else { "false" };
            let _ = writeln!(
                out,
                "{}",
                csv_line([CsvField::Text(&c.name), c.value.into(), CsvField::Text(c.relation()), c.bound.into(), pass.into()])
            );
        }
        out
    }
}

fn initial_state(cfg: &RunConfig, mesh: Mesh) -> GridFunction {
    GridFunction::sine_mode(mesh, cfg.experiment.x0_mode).scaled(cfg.experiment.x0_amplitude)
}

fn residual_check(solver: &Solver<'_>, path: &SolutionPath, w: &WienerPath) -> Result<Check> {
    let bound = 10.0 * solver.config().newton_tol;
    Ok(Check::at_most("scheme_residual", solver.scheme_residual(path, w)?, bound))
}

pub fn simulate(cfg: &RunConfig) -> Result<Outcome> {
    let model = cfg.model.build(cfg.model.n)?;
    let solver = Solver::new(&model, cfg.solver);
    let w = path_noise(cfg.seed, 0, model.diffusion.k_modes(), cfg.steps, cfg.t_end)?;
    let path = solver.solve_path(&initial_state(cfg, model.mesh()), &w)?;
    Ok(Outcome {
        files: vec![
            ("path.csv".into(), path.to_csv(&model.operator)),
            ("path.meta".into(), format!("path_index=0\n{}", path.metadata())),
        ],
        checks: vec![residual_check(&solver, &path, &w)?],
    })
}

fn refinement_reports(
    cfg: &RunConfig,
    study: impl Fn(&Solver<'_>, &GridFunction, &WienerPath, usize) -> Result<RefinementReport>,
) -> Result<(Vec<RefinementReport>, String)> {
    let model = cfg.model.build(cfg.model.n)?;
    let solver = Solver::new(&model, cfg.solver);
    let x0 = initial_state(cfg, model.mesh());
    let mut reports = Vec::new();
    let mut csv = String::from("path_index,seed,level,h,value,order\n");
    for i in 0..cfg.experiment.seeds {
        let w = path_noise(cfg.seed, i, model.diffusion.k_modes(), cfg.steps, cfg.t_end)?;
        let r = study(&solver, &x0, &w, cfg.experiment.levels)?;
        for line in r.to_csv().lines().skip(1) {
            let _ = writeln!(csv, "{i},{line}");
        }
        reports.push(r);
    }
    Ok((reports, csv))
}

pub fn audit_ito(cfg: &RunConfig) -> Result<Outcome> {
    let (reports, csv) = refinement_reports(cfg, energy_study)?;
    let hs: Vec<f64> = reports[0].levels.iter().map(|l| l.h).collect();
    let means: Vec<f64> =
        (0..hs.len()).map(|j| mean(&reports.iter().map(|r| r.levels[j].value).collect::<Vec<_>>())).collect();
    let order = tail_order(&hs, &means, FIT_LEVELS.min(hs.len()))?;
    Ok(Outcome { files: vec![("energy_residual.csv".into(), csv)], checks: vec![Check::at_least("mean_residual_order", order, 0.4)] })
}

pub fn audit_continuity(cfg: &RunConfig) -> Result<Outcome> {
    let (reports, csv) = refinement_reports(cfg, continuity_study)?;
    let reduction = reports.iter().map(|r| r.reduction()).fold(f64::INFINITY, f64::min);
    let decreasing = reports.iter().all(|r| r.strictly_decreasing());
    Ok(Outcome {
        files: vec![("continuity.csv".into(), csv)],
        checks: vec![Check::at_least("min_reduction", reduction, 4.0), Check::holds("strictly_decreasing", decreasing)],
    })
}

pub fn audit_fenchel(cfg: &RunConfig) -> Result<Outcome> {
    let model = cfg.model.build(cfg.model.n)?;
    let solver = Solver::new(&model, cfg.solver);
    let w = path_noise(cfg.seed, 0, model.diffusion.k_modes(), cfg.steps, cfg.t_end)?;
    let path = solver.solve_path(&initial_state(cfg, model.mesh()), &w)?;
    let audit = fenchel_audit(&path, model.graph)?;
    let sign = sign_audit(&path, &model.operator, model.graph)?;
    let csv = format!(
        "quantity,value\n{}\n{}\n{}\n",
        csv_line(["displaced_gap".into(), audit.displaced.into()]),
        csv_line(["undisplaced_gap".into(), audit.undisplaced.into()]),
        csv_line(["min_sign_pairing".into(), sign.into()]),
    );
    Ok(Outcome {
        files: vec![("fenchel.csv".into(), csv)],
        checks: vec![
            Check::at_most("displaced_gap", audit.displaced, 1e-8),
            Check::at_least("min_sign_pairing", sign, -1e-9),
            residual_check(&solver, &path, &w)?,
        ],
    })
}

pub fn moments(cfg: &RunConfig) -> Result<Outcome> {
    let model = cfg.model.build(cfg.model.n)?;
    let e = &cfg.experiment;
    let spec = MomentSpec {
        p_list: e.p_list.clone(),
        scales: e.scales.clone(),
        samples: e.moment_samples,
        steps: cfg.steps,
        t_end: cfg.t_end,
        seed: cfg.seed,
        datum_modes: e.datum_modes,
        resamples: e.resamples,
    };
    let report = moment_scan(&model, cfg.solver, &spec)?;
    let mut checks = vec![Check::at_most("failed_scales", report.failures.len() as f64, 0.0)];
    for &p in &spec.p_list {
        checks.push(Check::at_most(format!("constant_spread_p{p}"), report.stability(p, spec.scales.len()), 0.3));
    }
    Ok(Outcome { files: vec![("moments.csv".into(), report.to_csv())], checks })
}

pub fn lipschitz(cfg: &RunConfig) -> Result<Outcome> {
    let model = cfg.model.build(cfg.model.n)?;
    let e = &cfg.experiment;
    let spec = LipschitzSpec {
        p: e.lipschitz_p,
        deltas: e.deltas.clone(),
        samples: e.lipschitz_samples,
        steps: cfg.steps,
        t_end: cfg.t_end,
        seed: cfg.seed,
        datum_modes: e.datum_modes,
    };
    let report = lipschitz_scan(&model, cfg.solver, &spec)?;
    Ok(Outcome {
        files: vec![("lipschitz.csv".into(), report.to_csv())],
        checks: vec![
            Check::at_most("ratio_growth", report.growth(), 2.0),
            Check::at_most("metric_ratio_growth", report.metric_growth(), 2.0),
            Check::holds("metric_monotone", report.metric_monotone()),
        ],
    })
}

pub fn regularity(cfg: &RunConfig) -> Result<Outcome> {
    let e = &cfg.experiment;
    let spec = RegularitySpec {
        meshes: e.meshes.clone(),
        samples: e.regularity_samples,
        steps: cfg.steps,
        t_end: cfg.t_end,
        seed: cfg.seed,
        resamples: e.resamples,
    };
    let rows = regularity_study(|m| cfg.model.build(m.len()), cfg.solver, &spec)?;
    let energies = |d: Datum| rows.iter().filter(|r| r.datum == d).map(|r| r.a_energy.estimate).collect::<Vec<_>>();
    let smooth = energies(Datum::Smooth);
    let lo = smooth.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = smooth.iter().copied().fold(0.0, f64::max);
    let growing = energies(Datum::Rough).windows(2).all(|w| w[1] > w[0]);
    Ok(Outcome {
        files: vec![("regularity.csv".into(), regularity_csv(&rows))],
        checks: vec![Check::at_most("smooth_energy_variation", hi / lo - 1.0, 0.5), Check::holds("rough_energy_increasing", growing)],
    })
}

pub fn invariant(cfg: &RunConfig) -> Result<Outcome> {
    let model = cfg.model.build(cfg.model.n)?;
    let e = &cfg.experiment;
    let spec = ErgodicSpec {
        t_long: e.t_long,
        steps: e.long_steps,
        burn_in: e.burn_in,
        ladder: e.ladder.clone(),
        seed: cfg.seed,
        replica: 0,
        block_time: e.block_time,
        resamples: e.resamples,
    };
    let x0 = GridFunction::sine_mode(model.mesh(), 1).scaled(e.invariant_start);
    let report = ergodic_run(&model, cfg.solver, &x0, &spec)?;
    let drift = report.averages.iter().map(|a| a.drift).fold(0.0, f64::max);
    Ok(Outcome {
        files: vec![("invariant.csv".into(), report.to_csv())],
        checks: vec![Check::at_most("max_drift", drift, 0.05), Check::holds("ladder_monotone_bounded", report.ladder_monotone_and_bounded())],
    })
}

/// Randomized property suite over the graph catalog, the configured operator,
/// the noise refinement and the configured solver.
pub fn selftest(cfg: &RunConfig) -> Result<Outcome> {
    let mut rng = path_rng(cfg.seed, 0);
    let mut checks = Vec::new();

    let graphs = MonotoneGraph::catalog();
    let (mut contraction, mut lipschitz, mut gap): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..10_000 {
        let g = graphs[rng.random_range(0..graphs.len())];
        let lambda = 10f64.powf(rng.random_range(-3.0..0.0));
        let (r, s) = (rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
        let (pr, ps) = (g.prox(lambda, r)?, g.prox(lambda, s)?);
        let d: f64 = (r - s).abs();
        contraction = contraction.max((pr.point - ps.point).abs() - d * (1.0 + 1e-12));
        lipschitz = lipschitz.max((pr.yosida - ps.yosida).abs() - d / lambda * (1.0 + 1e-12));
        gap = gap.max(g.fenchel_gap(pr.point, pr.yosida));
    }
    checks.push(Check::at_most("resolvent_contraction_excess", contraction, 1e-12));
    checks.push(Check::at_most("yosida_lipschitz_excess", lipschitz, 1e-9));
    checks.push(Check::at_most("prox_fenchel_gap", gap, 1e-8));

    let model = cfg.model.build(cfg.model.n)?;
    let mesh = model.mesh();
    let op = &model.operator;
    let random = |rng: &mut rand_chacha::ChaCha8Rng, lo: f64, hi: f64| {
        GridFunction::new(mesh, (0..mesh.len()).map(|_| rng.random_range(lo..hi)).collect())
    };
    let (mut markov, mut h_contraction, mut symmetry, mut positivity): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, f64::INFINITY);
    for i in 0..1000 {
        let f = random(&mut rng, 0.0, 1.0)?;
        let u = op.resolvent(10f64.powi(i % 5 - 3), &f)?;
        for &v in u.values() {
            markov = markov.max(-v).max(v - 1.0);
        }
        h_contraction = h_contraction.max(u.norm() - f.norm());
        let (a, b) = (random(&mut rng, -1.0, 1.0)?, random(&mut rng, -1.0, 1.0)?);
        let (aa, ab) = (op.apply(&a)?, op.apply(&b)?);
        symmetry = symmetry.max((h_inner(&aa, &b)? - h_inner(&a, &ab)?).abs() / (aa.norm() * b.norm()));
        let g = graphs[i as usize % graphs.len()];
        let lambda = 10f64.powi(-1 - i % 3);
        let u = random(&mut rng, -3.0, 3.0)?;
        let beta: Vec<f64> = u.values().iter().map(|&x| g.yosida(lambda, x)).collect::<Result<_>>()?;
        positivity = positivity.min(h_inner(&op.yosida(lambda, &u)?, &GridFunction::new(mesh, beta)?)?);
    }
    checks.push(Check::at_most("sub_markov_excess", markov, 1e-12));
    checks.push(Check::at_most("h_contraction_excess", h_contraction, 1e-12));
    checks.push(Check::at_most("relative_asymmetry", symmetry, 1e-12));
    checks.push(Check::at_least("min_yosida_pairing", positivity, -1e-9));
    let lambda1 = op.check_coercivity()?.poincare;
    checks.push(Check::at_most("lambda1_relative_error", (lambda1 / op.eigenvalue(1) - 1.0).abs(), 1e-9));

    let k = model.diffusion.k_modes();
    let w = path_noise(cfg.seed, 0, k, cfg.steps, cfg.t_end)?;
    let fine = w.refine();
    let exact = (0..w.steps()).all(|j| (0..k).all(|m| fine.increment(2 * j)[m] + fine.increment(2 * j + 1)[m] == w.increment(j)[m]));
    checks.push(Check::holds("refinement_sums_exact", exact && fine.coarsen()?.increments() == w.increments()));

    let solver = Solver::new(&model, cfg.solver);
    let x0 = initial_state(cfg, mesh);
    let path = solver.solve_path(&x0, &w)?;
    checks.push(residual_check(&solver, &path, &w)?);
    checks.push(Check::at_most("rerun_distance", path.sup_distance(&solver.solve_path(&x0, &w)?, cfg.steps), 0.0));
    let records = path.tau_records();
    checks.push(Check::holds("tau_records_monotone", records.windows(2).all(|r| r[1].level > r[0].level && r[1].step >= r[0].step)));
    checks.push(Check::at_most("displaced_fenchel_gap", fenchel_audit(&path, model.graph)?.displaced, 1e-8));

    let quiet = Model::new(op.clone(), model.graph, DiffusionCoefficient::zero(mesh, k))?;
    let still = Solver::new(&quiet, cfg.solver).solve_path(&x0, &WienerPath::zero(k, cfg.steps, cfg.t_end)?)?;
    let norms = still.h_norms();
    checks.push(Check::holds("deterministic_dissipation", norms.windows(2).all(|p| p[1] <= p[0] * (1.0 + 1e-12) + 1e-14)));

    Ok(Outcome { files: Vec::new(), checks })
}
