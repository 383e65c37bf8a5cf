//! Discrete Gelfand triple `V ⊂ H ⊂ V'` on a uniform mesh of `(0, 1)`.
//!
//! `H` carries the quadrature inner product `h Σ uᵢvᵢ`, `A` is the
//! second-order finite-difference Dirichlet Laplacian, `‖u‖²_V = ⟨Au, u⟩` and
//! `‖f‖²_{V'} = ⟨A⁻¹f, f⟩`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::io::format_f64;
use crate::tridiag;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Mesh {
    n: usize,
}

impl Mesh {
    /// Uniform mesh with `n ≥ 2` interior nodes.
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParameter(format!("mesh needs at least 2 interior nodes, got {n}")));
        }
        Ok(Self { n })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.n + 1) as f64
    }

    /// Coordinate of interior node `i` (zero based).
    pub fn node(&self, i: usize) -> f64 {
        (i + 1) as f64 * self.spacing()
    }

    fn check(&self, other: &Mesh) -> Result<()> {
        if self != other {
            return Err(Error::MeshMismatch { left: self.n, right: other.n });
        }
        Ok(())
    }
}

/// Nodal values on the interior of a [`Mesh`].
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    mesh: Mesh,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(mesh: Mesh, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.len() {
            return Err(Error::DimensionMismatch { expected: mesh.len(), actual: values.len() });
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("grid function entry {bad} is not finite")));
        }
        Ok(Self { mesh, values })
    }

    pub(crate) fn from_vec_unchecked(mesh: Mesh, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), mesh.len());
        Self { mesh, values }
    }

    pub fn zeros(mesh: Mesh) -> Self {
        Self { mesh, values: vec![0.0; mesh.len()] }
    }

    pub fn constant(mesh: Mesh, c: f64) -> Self {
        Self { mesh, values: vec![c; mesh.len()] }
    }

    pub fn from_fn(mesh: Mesh, f: impl Fn(f64) -> f64) -> Self {
        Self { mesh, values: (0..mesh.len()).map(|i| f(mesh.node(i))).collect() }
    }

    /// `√2 sin(kπx)`, the `k`-th Dirichlet eigenvector, unit in `H`.
    pub fn sine_mode(mesh: Mesh, k: usize) -> Self {
        Self::from_fn(mesh, |x| 2f64.sqrt() * (k as f64 * PI * x).sin())
    }

    pub fn mesh(&self) -> Mesh {
        self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        (self.mesh.spacing() * self.values.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { mesh: self.mesh, values: self.values.iter().map(|v| c * v).collect() }
    }

    /// `self - other`
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.mesh.check(&other.mesh)?;
        Ok(Self {
            mesh: self.mesh,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        })
    }

    /// `self + c · other`
    pub fn add_scaled(&self, c: f64, other: &Self) -> Result<Self> {
        self.mesh.check(&other.mesh)?;
        Ok(Self {
            mesh: self.mesh,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + c * b).collect(),
        })
    }

    /// One CSV row of 17-significant-digit values.
    pub fn to_csv_row(&self) -> String {
        let mut row = String::with_capacity(self.values.len() * 24);
        for (i, v) in self.values.iter().enumerate() {
            if i > 0 {
                row.push(',');
            }
            let _ = write!(row, "{}", format_f64(*v));
        }
        row
    }

    pub fn from_csv_row(mesh: Mesh, row: &str) -> Result<Self> {
        let values = row
            .trim()
            .split(',')
            .map(|f| f.trim().parse::<f64>().map_err(|_| Error::Parse(format!("bad CSV value '{f}'"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(mesh, values)
    }
}

/// Quadrature `H` inner product.
pub fn h_inner(u: &GridFunction, v: &GridFunction) -> Result<f64> {
    u.mesh.check(&v.mesh)?;
    Ok(dot(&u.values, &v.values) * u.mesh.spacing())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `κ · (-Δ_h)` with homogeneous Dirichlet conditions, stored as a constant-coefficient
/// tridiagonal matrix. `κ = 0` gives the zero operator.
#[derive(Clone, Debug, PartialEq)]
pub struct EllipticOperator {
    mesh: Mesh,
    diffusivity: f64,
}

/// Structural constants of the discrete operator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoercivityReport {
    /// `min ⟨Au,u⟩ / ‖u‖²_V` over probe functions.
    pub coercivity: f64,
    /// Smallest eigenvalue `min ⟨Au,u⟩ / ‖u‖²`, by inverse iteration.
    pub poincare: f64,
}

impl EllipticOperator {
    pub fn dirichlet_laplacian(mesh: Mesh) -> Self {
        Self { mesh, diffusivity: 1.0 }
    }

    pub fn with_diffusivity(mesh: Mesh, diffusivity: f64) -> Result<Self> {
        if !(diffusivity.is_finite() && diffusivity >= 0.0) {
            return Err(Error::InvalidParameter(format!("diffusivity must be >= 0, got {diffusivity}")));
        }
        Ok(Self { mesh, diffusivity })
    }

    pub fn mesh(&self) -> Mesh {
        self.mesh
    }

    pub fn diffusivity(&self) -> f64 {
        self.diffusivity
    }

    /// Diagonal and off-diagonal entries of the stiffness matrix.
    pub fn stencil(&self) -> (f64, f64) {
        let h = self.mesh.spacing();
        let s = self.diffusivity / (h * h);
        (2.0 * s, -s)
    }

    /// Closed-form eigenvalue `(4κ/h²) sin²(kπh/2)`.
    pub fn eigenvalue(&self, k: usize) -> f64 {
        let h = self.mesh.spacing();
        let s = (k as f64 * PI * h / 2.0).sin();
        4.0 * self.diffusivity * s * s / (h * h)
    }

    pub(crate) fn apply_slice(&self, x: &[f64], y: &mut [f64]) {
        let (d, o) = self.stencil();
        let n = x.len();
        for i in 0..n {
            let mut acc = d * x[i];
            if i > 0 {
                acc += o * x[i - 1];
            }
            if i + 1 < n {
                acc += o * x[i + 1];
            }
            y[i] = acc;
        }
    }

    pub fn apply(&self, u: &GridFunction) -> Result<GridFunction> {
        self.mesh.check(&u.mesh)?;
        let mut out = vec![0.0; u.values.len()];
        self.apply_slice(&u.values, &mut out);
        Ok(GridFunction::from_vec_unchecked(self.mesh, out))
    }

    /// `⟨Au, u⟩`
    pub fn energy(&self, u: &GridFunction) -> Result<f64> {
        h_inner(&self.apply(u)?, u)
    }

    pub fn v_norm(&self, u: &GridFunction) -> Result<f64> {
        Ok(self.energy(u)?.max(0.0).sqrt())
    }

    pub fn v_dual_norm(&self, f: &GridFunction) -> Result<f64> {
        Ok(h_inner(&self.solve(f)?, f)?.max(0.0).sqrt())
    }

    /// `A⁻¹ f`
    pub fn solve(&self, f: &GridFunction) -> Result<GridFunction> {
        self.mesh.check(&f.mesh)?;
        if self.diffusivity == 0.0 {
            return Err(Error::Singular("zero operator has no inverse"));
        }
        let (d, o) = self.stencil();
        Ok(self.solve_tridiagonal(o, &vec![d; self.mesh.len()], f.values.clone()))
    }

    /// `(I + δA)⁻¹ f`
    pub fn resolvent(&self, delta: f64, f: &GridFunction) -> Result<GridFunction> {
        self.mesh.check(&f.mesh)?;
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidParameter(format!("resolvent parameter must be > 0, got {delta}")));
        }
        let (d, o) = self.stencil();
        Ok(self.solve_tridiagonal(delta * o, &vec![1.0 + delta * d; self.mesh.len()], f.values.clone()))
    }

    /// Yosida approximation `A_λ u = (u - (I + λA)⁻¹u)/λ`, evaluated as `A (I + λA)⁻¹ u`.
    pub fn yosida(&self, lambda: f64, u: &GridFunction) -> Result<GridFunction> {
        self.apply(&self.resolvent(lambda, u)?)
    }

    /// Solves `(I·0 + diag + off·(sub+super)) x = rhs`, i.e. a symmetric
    /// tridiagonal system with constant off-diagonal `off`.
    pub(crate) fn solve_tridiagonal(&self, off: f64, diag: &[f64], mut rhs: Vec<f64>) -> GridFunction {
        let offs = vec![off; diag.len().saturating_sub(1)];
        tridiag::solve(&offs, diag, &offs, &mut rhs);
        GridFunction::from_vec_unchecked(self.mesh, rhs)
    }

    /// Coercivity constant over sine and polynomial probes, and the
    /// Poincaré constant by shifted inverse iteration.
    pub fn check_coercivity(&self) -> Result<CoercivityReport> {
        let mesh = self.mesh;
        let mut probes: Vec<GridFunction> = (1..=mesh.len().min(8)).map(|k| GridFunction::sine_mode(mesh, k)).collect();
        probes.push(GridFunction::from_fn(mesh, |x| x * (1.0 - x)));
        probes.push(GridFunction::from_fn(mesh, |x| x * x * (1.0 - x).powi(3) - 0.01 * x));
        let mut coercivity = f64::INFINITY;
        for p in &probes {
            let e = self.energy(p)?;
            let v = self.v_norm(p)?;
            coercivity = coercivity.min(e / (v * v));
        }

        let mut u = GridFunction::from_fn(mesh, |x| x * (1.0 - x) + 0.1 * x * x);
        let mut rayleigh = f64::NAN;
        for _ in 0..500 {
            let w = self.solve(&u)?;
            let norm = w.norm();
            u = w.scaled(1.0 / norm);
            let next = self.energy(&u)?;
            if (next - rayleigh).abs() <= 1e-15 * next {
                rayleigh = next;
                break;
            }
            rayleigh = next;
        }
        Ok(CoercivityReport { coercivity, poincare: rayleigh })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mesh(n: usize) -> Mesh {
        Mesh::new(n).unwrap()
    }

    fn random(mesh: Mesh, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> GridFunction {
        GridFunction::new(mesh, (0..mesh.len()).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
    }

    #[test]
    fn rejects_tiny_mesh() {
        assert!(Mesh::new(1).is_err());
        assert!(Mesh::new(2).is_ok());
    }

    #[test]
    fn h_inner_examples() {
        let m = mesh(99);
        let one = GridFunction::constant(m, 1.0);
        assert!((h_inner(&one, &one).unwrap() - 0.99).abs() < 1e-14);
        let zero = GridFunction::zeros(m);
        assert_eq!(h_inner(&zero, &one).unwrap(), 0.0);
        let e1 = GridFunction::sine_mode(m, 1);
        let e2 = GridFunction::sine_mode(m, 2);
        let direct: f64 = (0..99)
            .map(|i| {
                let x = (i + 1) as f64 / 100.0;
                2.0 * (PI * x).sin() * (2.0 * PI * x).sin() / 100.0
            })
            .sum();
        assert!(direct.abs() < 1e-12);
        assert!(h_inner(&e1, &e2).unwrap().abs() < 1e-12);
        assert!((h_inner(&e1, &e1).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mesh_mismatch_is_reported() {
        let a = GridFunction::zeros(mesh(5));
        let b = GridFunction::zeros(mesh(6));
        assert_eq!(h_inner(&a, &b), Err(Error::MeshMismatch { left: 5, right: 6 }));
        let op = EllipticOperator::dirichlet_laplacian(mesh(5));
        assert!(op.v_norm(&b).is_err());
    }

    #[test]
    fn rayleigh_quotient_of_first_mode() {
        let m = mesh(99);
        let op = EllipticOperator::dirichlet_laplacian(m);
        let e1 = GridFunction::sine_mode(m, 1);
        let h = m.spacing();
        let closed = 4.0 / (h * h) * (PI * h / 2.0).sin().powi(2);
        let v = op.v_norm(&e1).unwrap();
        assert!((v * v / e1.norm().powi(2) - closed).abs() < 1e-9);
    }

    #[test]
    fn duality_bounds() {
        let m = mesh(40);
        let op = EllipticOperator::dirichlet_laplacian(m);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let f = random(m, &mut rng, -3.0, 3.0);
            let u = random(m, &mut rng, -3.0, 3.0);
            let pairing = h_inner(&f, &u).unwrap();
            assert!(pairing.abs() <= op.v_dual_norm(&f).unwrap() * op.v_norm(&u).unwrap() * (1.0 + 1e-12));
            let au = op.apply(&u).unwrap();
            assert!((op.v_dual_norm(&au).unwrap() - op.v_norm(&u).unwrap()).abs() < 1e-10 * (1.0 + op.v_norm(&u).unwrap()));
        }
    }

    #[test]
    fn resolvent_examples() {
        let m = mesh(99);
        let op = EllipticOperator::dirichlet_laplacian(m);
        let zero = GridFunction::zeros(m);
        assert_eq!(op.resolvent(0.3, &zero).unwrap(), zero);
        let e1 = GridFunction::sine_mode(m, 1);
        for delta in [1e-3, 0.1, 2.0] {
            let out = op.resolvent(delta, &e1).unwrap();
            let expect = e1.scaled(1.0 / (1.0 + delta * op.eigenvalue(1)));
            assert!(out.sub(&expect).unwrap().norm() < 1e-13);
        }
        assert!(op.resolvent(0.0, &e1).is_err());
    }

    #[test]
    fn sub_markov_and_contraction() {
        let m = mesh(31);
        let op = EllipticOperator::dirichlet_laplacian(m);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let f = random(m, &mut rng, 0.0, 1.0);
            for delta in [1e-3, 1e-1, 10.0] {
                let u = op.resolvent(delta, &f).unwrap();
                assert!(u.values().iter().all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v)));
                assert!(u.norm() <= f.norm() + 1e-12);
            }
        }
    }

    #[test]
    fn symmetric_operator() {
        let m = mesh(17);
        let op = EllipticOperator::dirichlet_laplacian(m);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let u = random(m, &mut rng, -1.0, 1.0);
            let v = random(m, &mut rng, -1.0, 1.0);
            let a = h_inner(&op.apply(&u).unwrap(), &v).unwrap();
            let b = h_inner(&u, &op.apply(&v).unwrap()).unwrap();
            assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn coercivity_examples() {
        for n in [2, 10, 99] {
            let report = EllipticOperator::dirichlet_laplacian(mesh(n)).check_coercivity().unwrap();
            assert!((report.coercivity - 1.0).abs() < 1e-12);
        }
        let op = EllipticOperator::dirichlet_laplacian(mesh(99));
        let report = op.check_coercivity().unwrap();
        let h: f64 = 0.01;
        let closed = 4.0 / (h * h) * (PI * h / 2.0).sin().powi(2);
        assert!((closed - 9.8688).abs() < 1e-3);
        assert!((report.poincare - closed).abs() < 1e-8);
        // converges to π² under refinement
        let fine = EllipticOperator::dirichlet_laplacian(mesh(4000)).eigenvalue(1);
        assert!((fine - PI * PI).abs() < 1e-5);
    }

    #[test]
    fn yosida_is_bounded_by_operator() {
        let m = mesh(25);
        let op = EllipticOperator::dirichlet_laplacian(m);
        let u = GridFunction::from_fn(m, |x| (x * 7.0).sin() * x * (1.0 - x));
        let au = op.apply(&u).unwrap().norm();
        for lambda in [1e-4, 1e-2, 1.0] {
            let y = op.yosida(lambda, &u).unwrap();
            assert!(y.norm() <= au * (1.0 + 1e-12));
            // matches the defining formula
            let direct = u.sub(&op.resolvent(lambda, &u).unwrap()).unwrap().scaled(1.0 / lambda);
            assert!(direct.sub(&y).unwrap().norm() < 1e-8 * (1.0 + au));
        }
    }

    #[test]
    fn zero_operator_is_singular() {
        let m = mesh(4);
        let op = EllipticOperator::with_diffusivity(m, 0.0).unwrap();
        assert!(matches!(op.v_dual_norm(&GridFunction::constant(m, 1.0)), Err(Error::Singular(_))));
        assert_eq!(op.resolvent(0.5, &GridFunction::constant(m, 1.0)).unwrap(), GridFunction::constant(m, 1.0));
    }

    #[test]
    fn csv_row_round_trip() {
        let m = mesh(5);
        let u = GridFunction::from_fn(m, |x| (x * 3.1).exp() / 7.0);
        let back = GridFunction::from_csv_row(m, &u.to_csv_row()).unwrap();
        assert_eq!(back, u);
    }
}
