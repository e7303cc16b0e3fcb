//! Objectives: the solver-facing abstractions and the low-rank matrix
//! recovery instances used throughout the crate.
//!
//! The central problem family is regularized low-rank approximation. Given
//! `A`, a regularization weight `λ ≥ 0`, and a target rank `r`, the convex
//! reference problem is
//!
//! ```text
//! min ½‖X − A‖²_F + λ‖X‖_*   subject to rank(X) ≤ r   (X ⪰ 0 when symmetric)
//! ```
//!
//! whose exact solution is spectral: soft-threshold the singular values by λ
//! (after projecting onto the PSD cone in the symmetric case) and keep the
//! top `r`. [`oracle_solution`] computes it; it provides the certified optimal
//! value that solver runs are measured against.
//!
//! The solvers instead attack the factored, nonconvex forms
//!
//! ```text
//! symmetric:      f(U)    = ½‖UUᵀ − A‖²_F + λ‖U‖²_F,           U ∈ ℝ^{n×r}
//! two-block:      f(U, V) = ½‖UVᵀ − A‖²_F + λ/2 (‖U‖²_F + ‖V‖²_F)
//! ```
//!
//! whose global minima coincide with the reference problem because
//! `min {‖U‖²_F : UUᵀ = X} = ‖X‖_*` on the PSD cone (and the analogous
//! two-sided identity for `UVᵀ`); [`bmf_objective_of_oracle`] evaluates the
//! factored objective at a balanced factorization of the oracle solution.
//!
//! Points are flattened column-major; each objective records its factor shape.

use crate::error::{Error, Result};
use crate::numdiff;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

/// A differentiable objective over a flat point. Implementations supply value
/// and gradient; Hessian actions default to finite differences of the
/// gradient, so plug-in objectives need nothing beyond first-order data.
pub trait Objective {
    fn dim(&self) -> usize;

    fn value(&self, x: &DVector<f64>) -> f64;

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;

    /// A finite lower bound on the objective when one is known;
    /// `f64::NEG_INFINITY` otherwise. Both factorization objectives are ≥ 0.
    fn lower_bound(&self) -> f64 {
        f64::NEG_INFINITY
    }

    /// `∇²f(x) · v` by central differences of the gradient.
    fn hessian_vec(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        numdiff::hessian_vec(|p| self.gradient(p), x, v)
    }
}

/// A differentiable objective over two blocks `(x, y)`.
pub trait BiObjective {
    fn dim_x(&self) -> usize;

    fn dim_y(&self) -> usize;

    fn value(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64;

    fn grad_x(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64>;

    fn grad_y(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64>;

    fn lower_bound(&self) -> f64 {
        f64::NEG_INFINITY
    }

    /// Exact minimizer of `x ↦ f(x, y) + c/2 ‖x − x0‖²` when the block
    /// subproblem has a closed form (`None` otherwise). Used by the
    /// alternating proximal solver to replace inner iterations with a solve.
    fn prox_x(&self, _y: &DVector<f64>, _x0: &DVector<f64>, _c: f64) -> Option<DVector<f64>> {
        None
    }

    /// Exact minimizer of `y ↦ f(x, y) + c/2 ‖y − y0‖²` when available.
    fn prox_y(&self, _x: &DVector<f64>, _y0: &DVector<f64>, _c: f64) -> Option<DVector<f64>> {
        None
    }
}

/// Concatenate two blocks into one flat point.
pub fn join_blocks(x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
    let mut z = DVector::zeros(x.len() + y.len());
    z.rows_mut(0, x.len()).copy_from(x);
    z.rows_mut(x.len(), y.len()).copy_from(y);
    z
}

/// Split a flat point back into blocks of sizes `dim_x` and the remainder.
pub fn split_blocks(z: &DVector<f64>, dim_x: usize) -> (DVector<f64>, DVector<f64>) {
    (
        DVector::from(z.rows(0, dim_x)),
        DVector::from(z.rows(dim_x, z.len() - dim_x)),
    )
}

/// View a two-block objective as a single objective over the joint point,
/// for certification and joint-gradient norms.
pub struct JointObjective<'a> {
    inner: &'a dyn BiObjective,
}

impl<'a> JointObjective<'a> {
    pub fn new(inner: &'a dyn BiObjective) -> Self {
        Self { inner }
    }
}

impl Objective for JointObjective<'_> {
    fn dim(&self) -> usize {
        self.inner.dim_x() + self.inner.dim_y()
    }

    fn value(&self, z: &DVector<f64>) -> f64 {
        let (x, y) = split_blocks(z, self.inner.dim_x());
        self.inner.value(&x, &y)
    }

    fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        let (x, y) = split_blocks(z, self.inner.dim_x());
        join_blocks(&self.inner.grad_x(&x, &y), &self.inner.grad_y(&x, &y))
    }

    fn lower_bound(&self) -> f64 {
        self.inner.lower_bound()
    }
}

/// Plug-in objective built from closures.
pub struct FnObjective<V, G>
where
    V: Fn(&DVector<f64>) -> f64,
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    dim: usize,
    value_fn: V,
    grad_fn: G,
    lower: f64,
}

impl<V, G> FnObjective<V, G>
where
    V: Fn(&DVector<f64>) -> f64,
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    pub fn new(dim: usize, value_fn: V, grad_fn: G) -> Self {
        Self { dim, value_fn, grad_fn, lower: f64::NEG_INFINITY }
    }

    pub fn with_lower_bound(mut self, lower: f64) -> Self {
        self.lower = lower;
        self
    }
}

impl<V, G> Objective for FnObjective<V, G>
where
    V: Fn(&DVector<f64>) -> f64,
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        (self.value_fn)(x)
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.grad_fn)(x)
    }

    fn lower_bound(&self) -> f64 {
        self.lower
    }
}

/// `½ xᵀQx + bᵀx + c` with symmetric `Q`.
pub struct Quadratic {
    q: DMatrix<f64>,
    b: DVector<f64>,
    c: f64,
    lower: f64,
}

impl Quadratic {
    pub fn new(q: DMatrix<f64>, b: DVector<f64>, c: f64) -> Result<Self> {
        if q.nrows() != q.ncols() {
            return Err(Error::DimensionMismatch {
                context: "quadratic matrix",
                expected: q.nrows(),
                found: q.ncols(),
            });
        }
        if b.len() != q.nrows() {
            return Err(Error::DimensionMismatch {
                context: "quadratic linear term",
                expected: q.nrows(),
                found: b.len(),
            });
        }
        let asym = (&q - q.transpose()).norm();
        if asym > 1e-10 * (1.0 + q.norm()) {
            return Err(Error::InvalidParameter {
                name: "q",
                value: format!("asymmetry {asym:.3e}"),
                reason: "matrix must be symmetric",
            });
        }
        let q = (&q + q.transpose()) * 0.5;
        // Strictly convex case has a computable minimum; otherwise unbounded
        // below (or flat directions we do not bother distinguishing).
        let min_eig = q
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let lower = if min_eig > 1e-12 {
            match q.clone().lu().solve(&(-&b)) {
                Some(xstar) => 0.5 * (&q * &xstar).dot(&xstar) + b.dot(&xstar) + c,
                None => f64::NEG_INFINITY,
            }
        } else {
            f64::NEG_INFINITY
        };
        Ok(Self { q, b, c, lower })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * (&self.q * x).dot(x) + self.b.dot(x) + self.c
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.q * x + &self.b
    }

    fn lower_bound(&self) -> f64 {
        self.lower
    }
}

/// Serialized sidecar for an instance container.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct InstanceMeta {
    lambda: f64,
    rank: usize,
    symmetric: bool,
    seed: Option<u64>,
}

/// A regularized low-rank approximation instance: the data matrix `A`, the
/// nuclear-norm weight `λ`, the rank budget `r`, and whether the symmetric
/// (PSD-constrained) formulation applies.
#[derive(Debug, Clone)]
pub struct MatrixPcaInstance {
    a: DMatrix<f64>,
    lambda: f64,
    rank: usize,
    symmetric: bool,
    seed: Option<u64>,
}

impl MatrixPcaInstance {
    pub fn new(a: DMatrix<f64>, lambda: f64, rank: usize, symmetric: bool) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "lambda",
                value: lambda.to_string(),
                reason: "must be finite and nonnegative",
            });
        }
        if rank == 0 || rank > a.nrows().min(a.ncols()) {
            return Err(Error::InvalidParameter {
                name: "rank",
                value: rank.to_string(),
                reason: "must satisfy 1 ≤ rank ≤ min(n, m)",
            });
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "instance matrix" });
        }
        if symmetric {
            if a.nrows() != a.ncols() {
                return Err(Error::DimensionMismatch {
                    context: "symmetric instance",
                    expected: a.nrows(),
                    found: a.ncols(),
                });
            }
            let asym = (&a - a.transpose()).norm();
            if asym > 1e-12 * (1.0 + a.norm()) {
                return Err(Error::InvalidParameter {
                    name: "a",
                    value: format!("asymmetry {asym:.3e}"),
                    reason: "symmetric instance requires A = Aᵀ",
                });
            }
        }
        Ok(Self { a, lambda, rank, symmetric, seed: None })
    }

    /// Symmetric Gaussian instance: `A = scaling · (G + Gᵀ)/√2` with
    /// `G_{ij} ~ N(0, 1)` i.i.d., so off-diagonal entries keep unit variance.
    pub fn random_symmetric(
        n: usize,
        rank: usize,
        lambda: f64,
        scaling: f64,
        seed: u64,
    ) -> Result<Self> {
        let g = gaussian_matrix(n, n, seed);
        let a = (&g + g.transpose()) * (scaling / 2f64.sqrt());
        let mut inst = Self::new(a, lambda, rank, true)?;
        inst.seed = Some(seed);
        Ok(inst)
    }

    /// Rectangular Gaussian instance: `A = scaling · G`, `G_{ij} ~ N(0, 1)`.
    pub fn random_nonsymmetric(
        n: usize,
        m: usize,
        rank: usize,
        lambda: f64,
        scaling: f64,
        seed: u64,
    ) -> Result<Self> {
        let a = gaussian_matrix(n, m, seed) * scaling;
        let mut inst = Self::new(a, lambda, rank, false)?;
        inst.seed = Some(seed);
        Ok(inst)
    }

    /// The same data reinterpreted without the symmetry (PSD) constraint,
    /// which is what the two-block factorization actually minimizes over.
    pub fn as_nonsymmetric(&self) -> Self {
        let mut copy = self.clone();
        copy.symmetric = false;
        copy
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn nrows(&self) -> usize {
        self.a.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.a.ncols()
    }

    /// Write `<base>.mat` (dimension header plus row-major entries, one row
    /// per line, round-trip precision) and `<base>.json` (λ, rank, symmetry,
    /// seed).
    pub fn save(&self, base: &Path) -> Result<()> {
        let mat_path = with_extension(base, "mat");
        let mut text = format!("{} {}\n", self.a.nrows(), self.a.ncols());
        for i in 0..self.a.nrows() {
            let row: Vec<String> = (0..self.a.ncols())
                .map(|j| format!("{}", self.a[(i, j)]))
                .collect();
            text.push_str(&row.join(" "));
            text.push('\n');
        }
        fs::write(&mat_path, text).map_err(|e| Error::InstanceIo {
            path: mat_path.display().to_string(),
            reason: e.to_string(),
        })?;

        let meta = InstanceMeta {
            lambda: self.lambda,
            rank: self.rank,
            symmetric: self.symmetric,
            seed: self.seed,
        };
        let json_path = with_extension(base, "json");
        let body = serde_json::to_string_pretty(&meta).expect("meta serializes");
        fs::write(&json_path, body).map_err(|e| Error::InstanceIo {
            path: json_path.display().to_string(),
            reason: e.to_string(),
        })
    }

    /// Read an instance written by [`MatrixPcaInstance::save`].
    pub fn load(base: &Path) -> Result<Self> {
        let mat_path = with_extension(base, "mat");
        let a = read_matrix(&mat_path)?;
        let json_path = with_extension(base, "json");
        let body = fs::read_to_string(&json_path).map_err(|e| Error::InstanceIo {
            path: json_path.display().to_string(),
            reason: e.to_string(),
        })?;
        let meta: InstanceMeta =
            serde_json::from_str(&body).map_err(|e| Error::InstanceIo {
                path: json_path.display().to_string(),
                reason: e.to_string(),
            })?;
        let mut inst = Self::new(a, meta.lambda, meta.rank, meta.symmetric)?;
        inst.seed = meta.seed;
        Ok(inst)
    }
}

fn with_extension(base: &Path, ext: &str) -> PathBuf {
    let mut p = base.to_path_buf();
    if p.extension().map(|e| e == "mat" || e == "json").unwrap_or(false) {
        p.set_extension(ext);
    } else {
        p = PathBuf::from(format!("{}.{ext}", base.display()));
    }
    p
}

/// Read a matrix container: `rows cols` header, then row-major entries.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::InstanceIo {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let io_err = |reason: String| Error::InstanceIo {
        path: path.display().to_string(),
        reason,
    };
    let mut tokens = text.split_whitespace();
    let rows: usize = tokens
        .next()
        .ok_or_else(|| io_err("missing row count".into()))?
        .parse()
        .map_err(|e| io_err(format!("bad row count: {e}")))?;
    let cols: usize = tokens
        .next()
        .ok_or_else(|| io_err("missing column count".into()))?
        .parse()
        .map_err(|e| io_err(format!("bad column count: {e}")))?;
    let mut entries = Vec::with_capacity(rows * cols);
    for tok in tokens {
        entries.push(
            tok.parse::<f64>()
                .map_err(|e| io_err(format!("bad entry `{tok}`: {e}")))?,
        );
    }
    if entries.len() != rows * cols {
        return Err(io_err(format!(
            "expected {} entries, found {}",
            rows * cols,
            entries.len()
        )));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &entries))
}

/// Write a bare matrix in the same container format as instance data.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut text = format!("{} {}\n", m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{}", m[(i, j)])).collect();
        text.push_str(&row.join(" "));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::InstanceIo {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

fn gaussian_matrix(n: usize, m: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries: Vec<f64> = (0..n * m)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    // Column-major fill; any fixed order works, it only has to be stable.
    DMatrix::from_vec(n, m, entries)
}

/// Symmetric factorization objective `f(U) = ½‖UUᵀ − A‖²_F + λ‖U‖²_F` over
/// flattened `U ∈ ℝ^{n×r}`.
pub struct SymmetricBmf {
    a: DMatrix<f64>,
    lambda: f64,
    rank: usize,
}

/// Build the symmetric factorization objective for a symmetric instance.
pub fn bmf_symmetric(inst: &MatrixPcaInstance) -> Result<SymmetricBmf> {
    SymmetricBmf::new(inst)
}

impl SymmetricBmf {
    pub fn new(inst: &MatrixPcaInstance) -> Result<Self> {
        if !inst.is_symmetric() {
            return Err(Error::InvalidParameter {
                name: "instance",
                value: "nonsymmetric".to_string(),
                reason: "symmetric factorization needs a symmetric instance",
            });
        }
        Ok(Self {
            a: inst.matrix().clone(),
            lambda: inst.lambda(),
            rank: inst.rank(),
        })
    }

    pub fn factor_shape(&self) -> (usize, usize) {
        (self.a.nrows(), self.rank)
    }

    pub fn unflatten(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.a.nrows(), self.rank, x.as_slice())
    }

    pub fn flatten(&self, u: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_column_slice(u.as_slice())
    }
}

impl Objective for SymmetricBmf {
    fn dim(&self) -> usize {
        self.a.nrows() * self.rank
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        let u = self.unflatten(x);
        let e = &u * u.transpose() - &self.a;
        0.5 * e.norm_squared() + self.lambda * u.norm_squared()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        // ∇f(U) = 2(UUᵀ − A)U + 2λU.
        let u = self.unflatten(x);
        let e = &u * u.transpose() - &self.a;
        let g = e * &u * 2.0 + &u * (2.0 * self.lambda);
        self.flatten(&g)
    }

    fn lower_bound(&self) -> f64 {
        0.0
    }
}

/// Two-block factorization objective
/// `f(U, V) = ½‖UVᵀ − A‖²_F + λ/2 (‖U‖²_F + ‖V‖²_F)` over flattened
/// `U ∈ ℝ^{n×r}`, `V ∈ ℝ^{m×r}`.
pub struct NonsymmetricBmf {
    a: DMatrix<f64>,
    lambda: f64,
    rank: usize,
}

/// Build the two-block factorization objective (any instance shape).
pub fn bmf_nonsymmetric(inst: &MatrixPcaInstance) -> Result<NonsymmetricBmf> {
    NonsymmetricBmf::new(inst)
}

impl NonsymmetricBmf {
    pub fn new(inst: &MatrixPcaInstance) -> Result<Self> {
        Ok(Self {
            a: inst.matrix().clone(),
            lambda: inst.lambda(),
            rank: inst.rank(),
        })
    }

    pub fn factor_shapes(&self) -> ((usize, usize), (usize, usize)) {
        (
            (self.a.nrows(), self.rank),
            (self.a.ncols(), self.rank),
        )
    }

    pub fn unflatten_u(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.a.nrows(), self.rank, x.as_slice())
    }

    pub fn unflatten_v(&self, y: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.a.ncols(), self.rank, y.as_slice())
    }

    fn flatten(m: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_column_slice(m.as_slice())
    }
}

impl BiObjective for NonsymmetricBmf {
    fn dim_x(&self) -> usize {
        self.a.nrows() * self.rank
    }

    fn dim_y(&self) -> usize {
        self.a.ncols() * self.rank
    }

    fn value(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let u = self.unflatten_u(x);
        let v = self.unflatten_v(y);
        let e = &u * v.transpose() - &self.a;
        0.5 * e.norm_squared() + 0.5 * self.lambda * (u.norm_squared() + v.norm_squared())
    }

    fn grad_x(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        // ∇_U f = (UVᵀ − A)V + λU.
        let u = self.unflatten_u(x);
        let v = self.unflatten_v(y);
        let e = &u * v.transpose() - &self.a;
        Self::flatten(&(e * &v + &u * self.lambda))
    }

    fn grad_y(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        // ∇_V f = (UVᵀ − A)ᵀU + λV.
        let u = self.unflatten_u(x);
        let v = self.unflatten_v(y);
        let e = &u * v.transpose() - &self.a;
        Self::flatten(&(e.transpose() * &u + &v * self.lambda))
    }

    fn lower_bound(&self) -> f64 {
        0.0
    }

    /// Ridge update in `U`: the normal equations of
    /// `½‖UVᵀ − A‖² + λ/2‖U‖² + c/2‖U − U0‖²` give
    /// `U (VᵀV + (λ + c) I) = AV + c U0`, an r×r SPD solve.
    fn prox_x(&self, y: &DVector<f64>, x0: &DVector<f64>, c: f64) -> Option<DVector<f64>> {
        let v = self.unflatten_v(y);
        let u0 = self.unflatten_u(x0);
        let mut m = v.transpose() * &v;
        for i in 0..self.rank {
            m[(i, i)] += self.lambda + c;
        }
        let rhs = &self.a * &v + &u0 * c;
        // Solve U M = rhs via Mᵀ Uᵀ = rhsᵀ (M symmetric positive definite).
        let chol = m.cholesky()?;
        let ut = chol.solve(&rhs.transpose());
        Some(Self::flatten(&ut.transpose()))
    }

    fn prox_y(&self, x: &DVector<f64>, y0: &DVector<f64>, c: f64) -> Option<DVector<f64>> {
        let u = self.unflatten_u(x);
        let v0 = self.unflatten_v(y0);
        let mut m = u.transpose() * &u;
        for i in 0..self.rank {
            m[(i, i)] += self.lambda + c;
        }
        let rhs = self.a.transpose() * &u + &v0 * c;
        let chol = m.cholesky()?;
        let vt = chol.solve(&rhs.transpose());
        Some(Self::flatten(&vt.transpose()))
    }
}

/// Exact solution of the convex reference problem.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    /// The optimal matrix `X*`.
    pub x_star: DMatrix<f64>,
    /// Optimal objective value `½‖X* − A‖²_F + λ‖X*‖_*`.
    pub value: f64,
    /// Retained spectrum of `X*` (thresholded, descending, length ≤ rank).
    pub kept_spectrum: Vec<f64>,
}

/// Eigendecomposition with eigenvalues sorted descending.
fn sorted_symmetric_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let sym = (m + m.transpose()) * 0.5;
    let se = sym.symmetric_eigen();
    let n = se.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| se.eigenvalues[j].partial_cmp(&se.eigenvalues[i]).unwrap());
    let vals: Vec<f64> = order.iter().map(|&i| se.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &se.eigenvectors.column(src));
    }
    (vals, vecs)
}

/// Singular triples `(P, σ, Q)` sorted descending, `X = Σᵢ σᵢ pᵢ qᵢᵀ`, via
/// the Gram route: a symmetric eigendecomposition of `XᵀX` (or `XXᵀ`,
/// whichever is smaller) gives the short-side vectors and σ², and the
/// long-side vectors follow as `Xq/σ`. Unlike an iterative bidiagonal SVD
/// this stays accurate on exactly rank-deficient input. Vectors paired with
/// negligible σ are left zero; callers only consume columns they keep.
fn sorted_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let (n, mm) = (m.nrows(), m.ncols());
    let k = n.min(mm);
    let tall = n >= mm;
    let gram = if tall {
        m.transpose() * m
    } else {
        m * m.transpose()
    };
    let (d, w) = sorted_symmetric_eigen(&gram);
    let svals: Vec<f64> = d.iter().take(k).map(|v| v.max(0.0).sqrt()).collect();
    let tiny = 1e-14 * svals.first().copied().unwrap_or(0.0);
    let mut p = DMatrix::zeros(n, k);
    let mut q = DMatrix::zeros(mm, k);
    for i in 0..k {
        if tall {
            q.set_column(i, &w.column(i));
            if svals[i] > tiny && svals[i] > 0.0 {
                p.set_column(i, &((m * w.column(i)) / svals[i]));
            }
        } else {
            p.set_column(i, &w.column(i));
            if svals[i] > tiny && svals[i] > 0.0 {
                q.set_column(i, &((m.transpose() * w.column(i)) / svals[i]));
            }
        }
    }
    (p, svals, q)
}

/// Solve the convex reference problem exactly.
///
/// Symmetric: project `A` onto the PSD cone, soft-threshold the surviving
/// eigenvalues by λ, keep the top `r`. Nonsymmetric: soft-threshold the
/// singular values by λ and keep the top `r`. The optimal value follows from
/// unitary invariance of the Frobenius norm.
pub fn oracle_solution(inst: &MatrixPcaInstance) -> Result<OracleSolution> {
    let lambda = inst.lambda();
    let r = inst.rank();
    if inst.is_symmetric() {
        let (vals, vecs) = sorted_symmetric_eigen(inst.matrix());
        let n = vals.len();
        let mut kept = Vec::new();
        let mut x_star = DMatrix::zeros(n, n);
        let mut residual_sq = 0.0;
        for (i, &ev) in vals.iter().enumerate() {
            let xi = if i < r { (ev.max(0.0) - lambda).max(0.0) } else { 0.0 };
            if xi > 0.0 {
                let v = vecs.column(i);
                x_star += &v * v.transpose() * xi;
                kept.push(xi);
            }
            residual_sq += (ev - xi) * (ev - xi);
        }
        let value = 0.5 * residual_sq + lambda * kept.iter().sum::<f64>();
        Ok(OracleSolution { x_star, value, kept_spectrum: kept })
    } else {
        let (p, svals, q) = sorted_svd(inst.matrix());
        let mut kept = Vec::new();
        let mut x_star = DMatrix::zeros(inst.nrows(), inst.ncols());
        let mut residual_sq = 0.0;
        for (i, &sv) in svals.iter().enumerate() {
            let xi = if i < r { (sv - lambda).max(0.0) } else { 0.0 };
            if xi > 0.0 {
                x_star += p.column(i) * q.column(i).transpose() * xi;
                kept.push(xi);
            }
            residual_sq += (sv - xi) * (sv - xi);
        }
        let value = 0.5 * residual_sq + lambda * kept.iter().sum::<f64>();
        Ok(OracleSolution { x_star, value, kept_spectrum: kept })
    }
}

/// Evaluate the factored objective at a balanced factorization of the oracle
/// solution: `X* = UVᵀ` with `U = P√Σ`, `V = Q√Σ` (or `U = W√D` in the
/// symmetric case). Balance makes the factor penalty equal the nuclear norm,
/// so this value matches [`OracleSolution::value`] up to roundoff; it is the
/// target the nonconvex solvers are expected to reach.
pub fn bmf_objective_of_oracle(inst: &MatrixPcaInstance, sol: &OracleSolution) -> Result<f64> {
    let r = inst.rank();
    if inst.is_symmetric() {
        let (vals, vecs) = sorted_symmetric_eigen(&sol.x_star);
        let n = sol.x_star.nrows();
        let mut u = DMatrix::zeros(n, r);
        for i in 0..r.min(vals.len()) {
            let scale = vals[i].max(0.0).sqrt();
            u.set_column(i, &(vecs.column(i) * scale));
        }
        let f = SymmetricBmf::new(inst)?;
        Ok(f.value(&DVector::from_column_slice(u.as_slice())))
    } else {
        let (p, svals, q) = sorted_svd(&sol.x_star);
        let (n, m) = (sol.x_star.nrows(), sol.x_star.ncols());
        let mut u = DMatrix::zeros(n, r);
        let mut v = DMatrix::zeros(m, r);
        for i in 0..r.min(svals.len()) {
            let scale = svals[i].max(0.0).sqrt();
            u.set_column(i, &(p.column(i) * scale));
            v.set_column(i, &(q.column(i) * scale));
        }
        let f = NonsymmetricBmf::new(inst)?;
        Ok(f.value(
            &DVector::from_column_slice(u.as_slice()),
            &DVector::from_column_slice(v.as_slice()),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_vec(r: &mut ChaCha8Rng, dim: usize, scale: f64) -> DVector<f64> {
        DVector::from_fn(dim, |_, _| r.sample::<f64, _>(StandardNormal) * scale)
    }

    fn diag_instance() -> MatrixPcaInstance {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![5.0, 3.0, 0.5]));
        MatrixPcaInstance::new(a, 1.0, 2, true).unwrap()
    }

    #[test]
    fn instance_validation() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert!(MatrixPcaInstance::new(a.clone(), 1.0, 1, true).is_err());
        assert!(MatrixPcaInstance::new(a.clone(), -1.0, 1, false).is_err());
        assert!(MatrixPcaInstance::new(a.clone(), 1.0, 0, false).is_err());
        assert!(MatrixPcaInstance::new(a.clone(), 1.0, 3, false).is_err());
        assert!(MatrixPcaInstance::new(a, 1.0, 1, false).is_ok());
    }

    #[test]
    fn symmetric_bmf_known_points() {
        let inst = diag_instance();
        let f = SymmetricBmf::new(&inst).unwrap();
        let zero = DVector::zeros(f.dim());
        // At U = 0 the residual is just A.
        assert_relative_eq!(f.value(&zero), 0.5 * inst.matrix().norm_squared());
        assert_eq!(f.gradient(&zero), zero);

        // Exact fit with λ = 0 has value 0 and zero gradient.
        let u = DMatrix::from_row_slice(2, 1, &[2.0, 1.0]);
        let a = &u * u.transpose();
        let exact = MatrixPcaInstance::new(a, 0.0, 1, true).unwrap();
        let f0 = SymmetricBmf::new(&exact).unwrap();
        let x = f0.flatten(&u);
        assert_relative_eq!(f0.value(&x), 0.0, epsilon = 1e-12);
        assert!(f0.gradient(&x).norm() <= 1e-12);
    }

    #[test]
    fn symmetric_bmf_gradient_matches_fd() {
        let inst = MatrixPcaInstance::random_symmetric(6, 2, 0.7, 1.0, 3).unwrap();
        let f = SymmetricBmf::new(&inst).unwrap();
        let mut r = rng(9);
        for _ in 0..20 {
            let x = random_vec(&mut r, f.dim(), 1.5);
            let analytic = f.gradient(&x);
            let fd = numdiff::fd_gradient(|p| f.value(p), &x);
            assert!(
                (&analytic - &fd).norm() <= 1e-5 * (1.0 + analytic.norm()),
                "gradient mismatch: {:e}",
                (&analytic - &fd).norm()
            );
        }
    }

    #[test]
    fn nonsymmetric_bmf_gradients_match_fd() {
        let inst = MatrixPcaInstance::random_nonsymmetric(5, 4, 2, 0.3, 1.0, 5).unwrap();
        let f = NonsymmetricBmf::new(&inst).unwrap();
        let mut r = rng(13);
        for _ in 0..20 {
            let x = random_vec(&mut r, f.dim_x(), 1.5);
            let y = random_vec(&mut r, f.dim_y(), 1.5);
            let gx = f.grad_x(&x, &y);
            let fd_x = numdiff::fd_gradient(|p| f.value(p, &y), &x);
            assert!((&gx - &fd_x).norm() <= 1e-5 * (1.0 + gx.norm()));
            let gy = f.grad_y(&x, &y);
            let fd_y = numdiff::fd_gradient(|p| f.value(&x, p), &y);
            assert!((&gy - &fd_y).norm() <= 1e-5 * (1.0 + gy.norm()));
        }
    }

    #[test]
    fn oracle_diagonal_example() {
        // A = diag(5, 3, 0.5), λ = 1, r = 2: thresholding keeps (4, 2) and
        // drops the sub-threshold 0.5, so X* = diag(4, 2, 0) with value
        // ½(1 + 1 + 0.25) + 1·6 = 7.125.
        let inst = diag_instance();
        let sol = oracle_solution(&inst).unwrap();
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 2.0, 0.0]));
        assert_relative_eq!(sol.x_star, expected, epsilon = 1e-12);
        assert_relative_eq!(sol.value, 7.125, max_relative = 1e-12);
        assert_eq!(sol.kept_spectrum, vec![4.0, 2.0]);
    }

    #[test]
    fn oracle_beats_brute_force_diagonal_search() {
        // Independent check of the diagonal example: enumerate all diagonal
        // candidates with at most two active entries; per active coordinate
        // the best choice is the soft threshold max(aᵢ − λ, 0).
        let inst = diag_instance();
        let a: [f64; 3] = [5.0, 3.0, 0.5];
        let lambda = 1.0;
        let mut best = f64::INFINITY;
        let mut best_x = [0.0f64; 3];
        for mask in 0..8u32 {
            if mask.count_ones() > 2 {
                continue;
            }
            let mut value = 0.0;
            let mut x = [0.0f64; 3];
            for i in 0..3 {
                if mask & (1 << i) != 0 {
                    x[i] = (a[i] - lambda).max(0.0);
                }
                value += 0.5 * (a[i] - x[i]).powi(2) + lambda * x[i];
            }
            if value < best {
                best = value;
                best_x = x;
            }
        }
        let sol = oracle_solution(&inst).unwrap();
        assert_relative_eq!(sol.value, best, max_relative = 1e-12);
        for i in 0..3 {
            assert_relative_eq!(sol.x_star[(i, i)], best_x[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn oracle_rank_one_example() {
        // A = 4uuᵀ, λ = 1, r = 1: X* = 3uuᵀ; balanced factor U = √3 u gives
        // f(U) = ½‖uuᵀ‖² + 3 = 3.5.
        let u = DVector::from_vec(vec![0.6, 0.8]);
        let a = &u * u.transpose() * 4.0;
        let inst = MatrixPcaInstance::new(a, 1.0, 1, true).unwrap();
        let sol = oracle_solution(&inst).unwrap();
        assert_relative_eq!(sol.value, 3.5, max_relative = 1e-12);
        assert_relative_eq!(sol.x_star, &u * u.transpose() * 3.0, epsilon = 1e-10);
        assert_relative_eq!(
            bmf_objective_of_oracle(&inst, &sol).unwrap(),
            3.5,
            max_relative = 1e-10
        );
    }

    #[test]
    fn oracle_degenerate_cases() {
        // λ = 0, full rank: symmetric keeps the PSD part, nonsymmetric is exact.
        let mut r = rng(21);
        let g = DMatrix::from_fn(4, 4, |_, _| r.sample::<f64, _>(StandardNormal));
        let sym = (&g + g.transpose()) * 0.5;
        let inst = MatrixPcaInstance::new(sym.clone(), 0.0, 4, true).unwrap();
        let sol = oracle_solution(&inst).unwrap();
        let (vals, vecs) = sorted_symmetric_eigen(&sym);
        let mut psd = DMatrix::zeros(4, 4);
        for (i, &v) in vals.iter().enumerate() {
            if v > 0.0 {
                psd += vecs.column(i) * vecs.column(i).transpose() * v;
            }
        }
        assert_relative_eq!(sol.x_star, psd, epsilon = 1e-10);

        let inst2 = MatrixPcaInstance::new(g.clone(), 0.0, 4, false).unwrap();
        let sol2 = oracle_solution(&inst2).unwrap();
        assert_relative_eq!(sol2.x_star, g, epsilon = 1e-10);
        assert!(sol2.value.abs() <= 1e-18 * (1.0 + g.norm_squared()));

        // Zero matrix: oracle is zero with value zero.
        let zero_inst =
            MatrixPcaInstance::new(DMatrix::zeros(3, 3), 1.0, 2, true).unwrap();
        let zero_sol = oracle_solution(&zero_inst).unwrap();
        assert_eq!(zero_sol.value, 0.0);
        assert_eq!(zero_sol.x_star, DMatrix::zeros(3, 3));
    }

    #[test]
    fn oracle_value_matches_factored_value() {
        for seed in 0..5 {
            let inst = MatrixPcaInstance::random_symmetric(8, 2, 1.0, 1.0, seed).unwrap();
            let sol = oracle_solution(&inst).unwrap();
            let via_factors = bmf_objective_of_oracle(&inst, &sol).unwrap();
            assert_relative_eq!(via_factors, sol.value, max_relative = 1e-9);

            let inst2 =
                MatrixPcaInstance::random_nonsymmetric(7, 5, 2, 0.8, 1.0, seed).unwrap();
            let sol2 = oracle_solution(&inst2).unwrap();
            let via2 = bmf_objective_of_oracle(&inst2, &sol2).unwrap();
            assert_relative_eq!(via2, sol2.value, max_relative = 1e-9);
        }
    }

    #[test]
    fn oracle_factored_value_is_locally_minimal() {
        // Random factor perturbations never beat the oracle value.
        let inst = MatrixPcaInstance::random_nonsymmetric(6, 5, 2, 0.6, 1.0, 2).unwrap();
        let sol = oracle_solution(&inst).unwrap();
        let base = bmf_objective_of_oracle(&inst, &sol).unwrap();
        let f = NonsymmetricBmf::new(&inst).unwrap();
        let (p, svals, q) = sorted_svd(&sol.x_star);
        let r = inst.rank();
        let mut u = DMatrix::zeros(6, r);
        let mut v = DMatrix::zeros(5, r);
        for i in 0..r {
            let s = svals[i].max(0.0).sqrt();
            u.set_column(i, &(p.column(i) * s));
            v.set_column(i, &(q.column(i) * s));
        }
        let x0 = DVector::from_column_slice(u.as_slice());
        let y0 = DVector::from_column_slice(v.as_slice());
        let mut rr = rng(33);
        for _ in 0..20 {
            let dx = random_vec(&mut rr, x0.len(), 1e-4);
            let dy = random_vec(&mut rr, y0.len(), 1e-4);
            let perturbed = f.value(&(&x0 + dx), &(&y0 + dy));
            assert!(perturbed >= base - 1e-9 * (1.0 + base.abs()));
        }
    }

    #[test]
    fn prox_blocks_solve_ridge_exactly() {
        let inst = MatrixPcaInstance::random_nonsymmetric(5, 4, 2, 0.4, 1.0, 8).unwrap();
        let f = NonsymmetricBmf::new(&inst).unwrap();
        let mut r = rng(55);
        let x0 = random_vec(&mut r, f.dim_x(), 1.0);
        let y = random_vec(&mut r, f.dim_y(), 1.0);
        let c = 2.5;
        let xp = f.prox_x(&y, &x0, c).unwrap();
        // Stationarity of the ridge subproblem.
        let grad = f.grad_x(&xp, &y) + (&xp - &x0) * c;
        assert!(grad.norm() <= 1e-9 * (1.0 + xp.norm()));
        // And no random candidate does better.
        let obj = |z: &DVector<f64>| f.value(z, &y) + 0.5 * c * (z - &x0).norm_squared();
        let best = obj(&xp);
        for _ in 0..20 {
            let cand = &xp + random_vec(&mut r, xp.len(), 0.3);
            assert!(obj(&cand) >= best - 1e-10);
        }

        let y0 = random_vec(&mut r, f.dim_y(), 1.0);
        let yp = f.prox_y(&x0, &y0, c).unwrap();
        let grad_y = f.grad_y(&x0, &yp) + (&yp - &y0) * c;
        assert!(grad_y.norm() <= 1e-9 * (1.0 + yp.norm()));
    }

    #[test]
    fn instance_round_trip() {
        let dir = std::env::temp_dir().join(format!("bregopt_io_{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let inst = MatrixPcaInstance::random_symmetric(5, 2, 1.25, 2.0, 99).unwrap();
        let base = dir.join("inst");
        inst.save(&base).unwrap();
        let loaded = MatrixPcaInstance::load(&base).unwrap();
        assert_eq!(loaded.matrix(), inst.matrix());
        assert_eq!(loaded.lambda(), inst.lambda());
        assert_eq!(loaded.rank(), inst.rank());
        assert_eq!(loaded.is_symmetric(), inst.is_symmetric());
        assert_eq!(loaded.seed(), Some(99));
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn generation_is_deterministic_and_symmetric() {
        let a = MatrixPcaInstance::random_symmetric(10, 2, 1.0, 1.0, 7).unwrap();
        let b = MatrixPcaInstance::random_symmetric(10, 2, 1.0, 1.0, 7).unwrap();
        assert_eq!(a.matrix(), b.matrix());
        assert_eq!(a.matrix().transpose(), *a.matrix());
        let c = MatrixPcaInstance::random_symmetric(10, 2, 1.0, 1.0, 8).unwrap();
        assert_ne!(a.matrix(), c.matrix());
    }

    #[test]
    fn joint_objective_concatenates_blocks() {
        let inst = MatrixPcaInstance::random_nonsymmetric(4, 3, 1, 0.5, 1.0, 4).unwrap();
        let f = NonsymmetricBmf::new(&inst).unwrap();
        let joint = JointObjective::new(&f);
        let mut r = rng(61);
        let x = random_vec(&mut r, f.dim_x(), 1.0);
        let y = random_vec(&mut r, f.dim_y(), 1.0);
        let z = join_blocks(&x, &y);
        assert_relative_eq!(joint.value(&z), f.value(&x, &y));
        let g = joint.gradient(&z);
        let (gx, gy) = split_blocks(&g, f.dim_x());
        assert_relative_eq!(gx, f.grad_x(&x, &y));
        assert_relative_eq!(gy, f.grad_y(&x, &y));
    }

    #[test]
    fn quadratic_objective_basics() {
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]);
        let b = DVector::from_vec(vec![-2.0, 0.0]);
        let f = Quadratic::new(q, b, 1.0).unwrap();
        // Minimum at x = (1, 0) with value 1 − 1 = 0.
        assert_relative_eq!(f.lower_bound(), 0.0, epsilon = 1e-12);
        let x = DVector::from_vec(vec![1.0, 0.0]);
        assert!(f.gradient(&x).norm() <= 1e-12);

        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 5.0, -5.0, 1.0]);
        assert!(Quadratic::new(bad, DVector::zeros(2), 0.0).is_err());
    }
}
