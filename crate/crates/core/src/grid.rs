//! Masked pixel grids, first-order derivative operators and least-squares
//! integration of gradient fields into depth.

use crate::error::{Error, Result};

/// Object mask over a `height x width` raster together with the bijection
/// between object pixels and matrix columns.
///
/// Columns are assigned in row-major scan order.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelGrid {
    height: usize,
    width: usize,
    mask: Vec<bool>,
    columns: Vec<Option<usize>>,
    pixels: Vec<(usize, usize)>,
}

impl PixelGrid {
    /// `mask` is row-major, `mask[y * width + x]`.
    pub fn new(height: usize, width: usize, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != height * width {
            return Err(Error::Dimension(format!(
                "mask has {} cells, expected {}x{}",
                mask.len(),
                height,
                width
            )));
        }
        let mut columns = vec![None; mask.len()];
        let mut pixels = Vec::new();
        for y in 0..height {
            for x in 0..width {
                let cell = y * width + x;
                if mask[cell] {
                    columns[cell] = Some(pixels.len());
                    pixels.push((x, y));
                }
            }
        }
        if pixels.is_empty() {
            return Err(Error::EmptyMask);
        }
        Ok(Self {
            height,
            width,
            mask,
            columns,
            pixels,
        })
    }

    pub fn full(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![true; height * width])
    }

    /// Builds the mask by evaluating `inside(x, y)` on every cell.
    pub fn from_fn(height: usize, width: usize, inside: impl Fn(usize, usize) -> bool) -> Result<Self> {
        let mut mask = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                mask.push(inside(x, y));
            }
        }
        Self::new(height, width, mask)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of object pixels.
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x < self.width && y < self.height && self.mask[y * self.width + x]
    }

    pub fn column(&self, x: usize, y: usize) -> Option<usize> {
        if x < self.width && y < self.height {
            self.columns[y * self.width + x]
        } else {
            None
        }
    }

    /// `(x, y)` location of a column.
    pub fn pixel(&self, column: usize) -> (usize, usize) {
        self.pixels[column]
    }

    pub fn pixels(&self) -> &[(usize, usize)] {
        &self.pixels
    }

    /// Column of the pixel offset by `(dx, dy)` from `column`, if that pixel
    /// is part of the object.
    pub fn neighbor(&self, column: usize, dx: isize, dy: isize) -> Option<usize> {
        let (x, y) = self.pixels[column];
        let nx = x.checked_add_signed(dx)?;
        let ny = y.checked_add_signed(dy)?;
        self.column(nx, ny)
    }

    /// Spreads per-column values onto the full raster, writing `fill` outside
    /// the mask.
    pub fn scatter(&self, values: &[f64], fill: f64) -> Vec<f64> {
        let mut raster = vec![fill; self.height * self.width];
        for (col, &(x, y)) in self.pixels.iter().enumerate() {
            raster[y * self.width + x] = values[col];
        }
        raster
    }

    /// Inverse of [`scatter`](Self::scatter): reads object pixels from a
    /// row-major raster.
    pub fn gather(&self, raster: &[f64]) -> Vec<f64> {
        self.pixels
            .iter()
            .map(|&(x, y)| raster[y * self.width + x])
            .collect()
    }

    /// Pixel coordinates shifted to zero mean over the object.
    pub fn centered_coordinates(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.len() as f64;
        let mx = self.pixels.iter().map(|p| p.0 as f64).sum::<f64>() / n;
        let my = self.pixels.iter().map(|p| p.1 as f64).sum::<f64>() / n;
        self.pixels
            .iter()
            .map(|&(x, y)| (x as f64 - mx, y as f64 - my))
            .unzip()
    }
}

/// One row of a first-order difference operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stencil {
    Zero,
    /// `z[plus] - z[minus]`
    Diff { plus: usize, minus: usize },
}

/// Sparse `p x p` difference operator with at most two nonzeros per row.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffOperator {
    rows: Vec<Stencil>,
}

impl DiffOperator {
    pub fn rows(&self) -> &[Stencil] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|s| match *s {
                Stencil::Zero => 0.0,
                Stencil::Diff { plus, minus } => z[plus] - z[minus],
            })
            .collect()
    }

    /// Accumulates `D^T (w .* v)` into `out`.
    fn accumulate_transpose(&self, v: &[f64], weights: &[f64], out: &mut [f64]) {
        for (j, s) in self.rows.iter().enumerate() {
            if let Stencil::Diff { plus, minus } = *s {
                let wv = weights[j] * v[j];
                out[plus] += wv;
                out[minus] -= wv;
            }
        }
    }

    pub fn apply_transpose(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows.len()];
        self.accumulate_transpose(v, &vec![1.0; v.len()], &mut out);
        out
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let n = self.rows.len();
        let mut d = nalgebra::DMatrix::zeros(n, n);
        for (j, s) in self.rows.iter().enumerate() {
            if let Stencil::Diff { plus, minus } = *s {
                d[(j, plus)] += 1.0;
                d[(j, minus)] -= 1.0;
            }
        }
        d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeOperators {
    pub dx: DiffOperator,
    pub dy: DiffOperator,
}

/// Forward differences inside the mask, falling back to a backward
/// difference when the forward neighbor is missing and to an empty row when
/// neither neighbor exists.
pub fn build_derivative_operators(grid: &PixelGrid) -> DerivativeOperators {
    let build = |dx: isize, dy: isize| DiffOperator {
        rows: (0..grid.len())
            .map(|j| {
                if let Some(fwd) = grid.neighbor(j, dx, dy) {
                    Stencil::Diff { plus: fwd, minus: j }
                } else if let Some(bwd) = grid.neighbor(j, -dx, -dy) {
                    Stencil::Diff { plus: j, minus: bwd }
                } else {
                    Stencil::Zero
                }
            })
            .collect(),
    };
    DerivativeOperators {
        dx: build(1, 0),
        dy: build(0, 1),
    }
}

/// Depth values at object pixels, in column order.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap(pub Vec<f64>);

impl DepthMap {
    pub fn zeros(p: usize) -> Self {
        DepthMap(vec![0.0; p])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.0.iter().sum::<f64>() / self.0.len().max(1) as f64
    }

    pub fn centered(mut self) -> Self {
        let m = self.mean();
        self.0.iter_mut().for_each(|v| *v -= m);
        self
    }
}

/// Linear systems above this many stored factor entries are solved with
/// preconditioned conjugate gradients instead of an envelope Cholesky.
const ENVELOPE_LIMIT: usize = 20_000_000;
const CG_REL_TOL: f64 = 1e-13;

/// Prefactored solver for `argmin_z |Dx z - p|^2_w + |Dy z - q|^2_w`.
///
/// Each connected component of the difference graph is solved on its own
/// and shifted to zero mean. Factorizations are computed once and reused,
/// which is what the joint solver relies on for its per-iteration depth
/// update.
#[derive(Debug, Clone)]
pub struct Integrator {
    ops: DerivativeOperators,
    weights: Vec<f64>,
    components: Vec<Component>,
}

#[derive(Debug, Clone)]
struct Component {
    /// Global columns, in solve order. The first one is pinned to zero
    /// during the solve.
    columns: Vec<usize>,
    system: Option<ReducedSystem>,
}

#[derive(Debug, Clone)]
enum ReducedSystem {
    Envelope(EnvelopeCholesky),
    Cg(SparseSpd),
}

impl Integrator {
    pub fn new(grid: &PixelGrid, ops: &DerivativeOperators) -> Result<Self> {
        Self::with_weights(grid, ops, vec![1.0; grid.len()])
    }

    /// Same as [`new`](Self::new) but rejects masks whose difference graph
    /// has more than one connected component.
    pub fn new_connected(grid: &PixelGrid, ops: &DerivativeOperators) -> Result<Self> {
        let integrator = Self::new(grid, ops)?;
        if integrator.components.len() > 1 {
            return Err(Error::DisconnectedMask {
                sizes: integrator.component_sizes(),
            });
        }
        Ok(integrator)
    }

    /// Per-pixel non-negative weights applied to both the x and y rows of
    /// that pixel. A zero weight drops the pixel's rows from the data term.
    pub fn with_weights(grid: &PixelGrid, ops: &DerivativeOperators, weights: Vec<f64>) -> Result<Self> {
        let p = grid.len();
        if ops.dx.len() != p || ops.dy.len() != p || weights.len() != p {
            return Err(Error::Dimension(format!(
                "operators/weights do not match grid with {p} pixels"
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument("integration weights must be finite and non-negative".into()));
        }

        // Graph Laplacian of the weighted difference rows.
        let mut diag = vec![0.0; p];
        let mut offdiag: Vec<Vec<(usize, f64)>> = vec![Vec::new(); p];
        let mut uf = UnionFind::new(p);
        for op in [&ops.dx, &ops.dy] {
            for (j, s) in op.rows().iter().enumerate() {
                if let Stencil::Diff { plus, minus } = *s {
                    let w = weights[j];
                    if w == 0.0 {
                        continue;
                    }
                    diag[plus] += w;
                    diag[minus] += w;
                    offdiag[plus].push((minus, -w));
                    offdiag[minus].push((plus, -w));
                    uf.union(plus, minus);
                }
            }
        }

        let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for j in 0..p {
            groups.entry(uf.find(j)).or_default().push(j);
        }

        // Order unknowns along the shorter image axis to keep the envelope
        // narrow.
        let column_major = grid.height() < grid.width();
        let mut components = Vec::with_capacity(groups.len());
        for (_, mut columns) in groups {
            if column_major {
                columns.sort_by_key(|&c| {
                    let (x, y) = grid.pixel(c);
                    (x, y)
                });
            }
            let system = if columns.len() > 1 {
                Some(ReducedSystem::build(&columns, &diag, &offdiag)?)
            } else {
                None
            };
            components.push(Component { columns, system });
        }

        Ok(Self {
            ops: ops.clone(),
            weights,
            components,
        })
    }

    pub fn component_sizes(&self) -> Vec<usize> {
        self.components.iter().map(|c| c.columns.len()).collect()
    }

    pub fn operators(&self) -> &DerivativeOperators {
        &self.ops
    }

    pub fn integrate(&self, p_target: &[f64], q_target: &[f64]) -> Result<DepthMap> {
        let p = self.weights.len();
        if p_target.len() != p || q_target.len() != p {
            return Err(Error::Dimension(format!(
                "gradient targets have lengths {} and {}, expected {p}",
                p_target.len(),
                q_target.len()
            )));
        }
        let mut rhs = vec![0.0; p];
        self.ops.dx.accumulate_transpose(p_target, &self.weights, &mut rhs);
        self.ops.dy.accumulate_transpose(q_target, &self.weights, &mut rhs);

        let mut z = vec![0.0; p];
        for comp in &self.components {
            let Some(system) = &comp.system else { continue };
            let local_rhs: Vec<f64> = comp.columns[1..].iter().map(|&c| rhs[c]).collect();
            let sol = system.solve(&local_rhs);
            let mean = sol.iter().sum::<f64>() / comp.columns.len() as f64;
            z[comp.columns[0]] = -mean;
            for (&c, v) in comp.columns[1..].iter().zip(sol) {
                z[c] = v - mean;
            }
        }
        Ok(DepthMap(z))
    }

    /// Weighted least-squares residual `|Dx z - p|^2 + |Dy z - q|^2`.
    pub fn residual(&self, z: &[f64], p_target: &[f64], q_target: &[f64]) -> f64 {
        let zx = self.ops.dx.apply(z);
        let zy = self.ops.dy.apply(z);
        let mut r = 0.0;
        for j in 0..z.len() {
            let w = self.weights[j];
            r += w * ((zx[j] - p_target[j]).powi(2) + (zy[j] - q_target[j]).powi(2));
        }
        r
    }
}

/// Least-squares depth from a target gradient field, zero mean on each
/// connected component of the mask.
pub fn integrate_gradients(
    grid: &PixelGrid,
    ops: &DerivativeOperators,
    p_target: &[f64],
    q_target: &[f64],
) -> Result<DepthMap> {
    Integrator::new(grid, ops)?.integrate(p_target, q_target)
}

impl ReducedSystem {
    /// Builds the Laplacian restricted to `columns[1..]` (the first column
    /// is pinned).
    fn build(columns: &[usize], diag: &[f64], offdiag: &[Vec<(usize, f64)>]) -> Result<Self> {
        let mut local = std::collections::HashMap::with_capacity(columns.len());
        for (i, &c) in columns.iter().enumerate() {
            local.insert(c, i);
        }
        let n = columns.len() - 1;
        let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
        for &c in &columns[1..] {
            let i = local[&c] - 1;
            let mut row = vec![(i, diag[c])];
            for &(nb, w) in &offdiag[c] {
                let li = local[&nb];
                if li == 0 {
                    continue;
                }
                row.push((li - 1, w));
            }
            rows.push(row);
        }
        let envelope: usize = rows
            .iter()
            .enumerate()
            .map(|(i, r)| i + 1 - r.iter().map(|e| e.0).min().unwrap_or(i).min(i))
            .sum();
        if envelope <= ENVELOPE_LIMIT {
            Ok(ReducedSystem::Envelope(EnvelopeCholesky::factor(&rows)?))
        } else {
            Ok(ReducedSystem::Cg(SparseSpd::new(rows)))
        }
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        match self {
            ReducedSystem::Envelope(f) => f.solve(rhs),
            ReducedSystem::Cg(a) => a.solve_pcg(rhs),
        }
    }
}

/// Cholesky factor stored by rows over each row's envelope
/// `first[i]..=i`; fill-in never leaves the envelope.
#[derive(Debug, Clone)]
struct EnvelopeCholesky {
    first: Vec<usize>,
    start: Vec<usize>,
    data: Vec<f64>,
}

impl EnvelopeCholesky {
    fn factor(rows: &[Vec<(usize, f64)>]) -> Result<Self> {
        let n = rows.len();
        let mut first = Vec::with_capacity(n);
        let mut start = Vec::with_capacity(n + 1);
        let mut total = 0;
        for (i, row) in rows.iter().enumerate() {
            let f = row.iter().map(|e| e.0).filter(|&c| c <= i).min().unwrap_or(i);
            first.push(f);
            start.push(total);
            total += i - f + 1;
        }
        start.push(total);
        let mut data = vec![0.0; total];
        for (i, row) in rows.iter().enumerate() {
            for &(c, v) in row {
                if c <= i {
                    data[start[i] + c - first[i]] += v;
                }
            }
        }

        for i in 0..n {
            let fi = first[i];
            for j in fi..=i {
                let k0 = fi.max(first[j]);
                let dot: f64 = if k0 < j {
                    let a = &data[start[i] + k0 - fi..start[i] + j - fi];
                    let b = &data[start[j] + k0 - first[j]..start[j] + j - first[j]];
                    a.iter().zip(b).map(|(x, y)| x * y).sum()
                } else {
                    0.0
                };
                let idx = start[i] + j - fi;
                let s = data[idx] - dot;
                if j < i {
                    data[idx] = s / data[start[j] + j - first[j]];
                } else {
                    if s <= 0.0 {
                        return Err(Error::InvalidArgument(
                            "integration normal equations are not positive definite".into(),
                        ));
                    }
                    data[idx] = s.sqrt();
                }
            }
        }
        Ok(Self { first, start, data })
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.first.len();
        let mut y = rhs.to_vec();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.data[self.start[i]..self.start[i + 1]];
            let dot: f64 = row[..i - fi].iter().zip(&y[fi..i]).map(|(a, b)| a * b).sum();
            y[i] = (y[i] - dot) / row[i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = &self.data[self.start[i]..self.start[i + 1]];
            y[i] /= row[i - fi];
            let yi = y[i];
            for (k, l) in (fi..i).zip(row) {
                y[k] -= l * yi;
            }
        }
        y
    }
}

#[derive(Debug, Clone)]
struct SparseSpd {
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseSpd {
    fn new(rows: Vec<Vec<(usize, f64)>>) -> Self {
        Self { rows }
    }

    fn mul(&self, x: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(&self.rows) {
            *o = row.iter().map(|&(c, v)| v * x[c]).sum();
        }
    }

    fn solve_pcg(&self, b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let inv_diag: Vec<f64> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let d: f64 = r.iter().filter(|e| e.0 == i).map(|e| e.1).sum();
                1.0 / d
            })
            .collect();
        let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut x = vec![0.0; n];
        if bnorm == 0.0 {
            return x;
        }
        let mut r = b.to_vec();
        let mut zv: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, d)| a * d).collect();
        let mut p = zv.clone();
        let mut rz: f64 = r.iter().zip(&zv).map(|(a, b)| a * b).sum();
        let mut ap = vec![0.0; n];
        for _ in 0..(10 * n).max(1000) {
            self.mul(&p, &mut ap);
            let alpha = rz / p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            if r.iter().map(|v| v * v).sum::<f64>().sqrt() <= CG_REL_TOL * bnorm {
                break;
            }
            for i in 0..n {
                zv[i] = r[i] * inv_diag[i];
            }
            let rz_new: f64 = r.iter().zip(&zv).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = zv[i] + beta * p[i];
            }
        }
        x
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Keep the smaller index as root so component order follows
            // the first column of each component.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}
