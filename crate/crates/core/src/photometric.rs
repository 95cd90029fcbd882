//! Lambertian image formation, Phong-corrupted synthetic rendering, sensor
//! noise and missing-entry detection.

use std::path::PathBuf;

use nalgebra::{DMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{build_derivative_operators, DepthMap, DerivativeOperators, PixelGrid};

/// Default lower / upper normalized-intensity bounds for valid entries.
pub const MISSING_LOW: f64 = 0.02;
pub const MISSING_HIGH: f64 = 0.98;

/// `m x 3` lights, one row per image (direction times intensity).
#[derive(Debug, Clone, PartialEq)]
pub struct Lighting(pub DMatrix<f64>);

impl Lighting {
    pub fn new(l: DMatrix<f64>) -> Result<Self> {
        if l.ncols() != 3 {
            return Err(Error::Dimension(format!("lights must be m x 3, got {}x{}", l.nrows(), l.ncols())));
        }
        if let Some(i) = l.row_iter().position(|r| !(r.norm() > 0.0)) {
            return Err(Error::InvalidArgument(format!("light {i} has zero norm")));
        }
        Ok(Self(l))
    }

    pub fn count(&self) -> usize {
        self.0.nrows()
    }

    pub fn row(&self, i: usize) -> Vector3<f64> {
        Vector3::new(self.0[(i, 0)], self.0[(i, 1)], self.0[(i, 2)])
    }
}

/// Ground-truth surface: depth, geometric normals `(-z_x, -z_y, 1)` and
/// albedo at each object pixel.
#[derive(Debug, Clone)]
pub struct Surface {
    pub grid: PixelGrid,
    pub ops: DerivativeOperators,
    pub depth: DepthMap,
    /// `3 x p`, unnormalized.
    pub normals: DMatrix<f64>,
    pub albedo: Vec<f64>,
}

impl Surface {
    pub fn from_depth(grid: PixelGrid, depth: DepthMap, albedo: Vec<f64>) -> Result<Self> {
        let p = grid.len();
        if depth.len() != p || albedo.len() != p {
            return Err(Error::Dimension(format!(
                "depth ({}) / albedo ({}) length must equal pixel count {p}",
                depth.len(),
                albedo.len()
            )));
        }
        if depth.values().iter().any(|z| !z.is_finite()) {
            return Err(Error::InvalidArgument("depth must be finite".into()));
        }
        if albedo.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::InvalidArgument("albedo must lie in [0, 1]".into()));
        }
        let ops = build_derivative_operators(&grid);
        let zx = ops.dx.apply(depth.values());
        let zy = ops.dy.apply(depth.values());
        let mut normals = DMatrix::zeros(3, p);
        for j in 0..p {
            normals[(0, j)] = -zx[j];
            normals[(1, j)] = -zy[j];
            normals[(2, j)] = 1.0;
        }
        Ok(Self {
            grid,
            ops,
            depth,
            normals,
            albedo,
        })
    }

    pub fn unit_normal(&self, j: usize) -> Vector3<f64> {
        Vector3::new(self.normals[(0, j)], self.normals[(1, j)], self.normals[(2, j)]).normalize()
    }

    /// `3 x p` matrix of scaled normals `rho_j * n_hat_j`.
    pub fn scaled_normals(&self) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(3, self.grid.len());
        for j in 0..self.grid.len() {
            s.set_column(j, &(self.unit_normal(j) * self.albedo[j]));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhongParams {
    pub k_s: f64,
    pub alpha: f64,
    pub view: [f64; 3],
}

impl Default for PhongParams {
    fn default() -> Self {
        Self {
            k_s: 0.2,
            alpha: 10.0,
            view: [0.0, 0.0, 1.0],
        }
    }
}

impl PhongParams {
    fn validate(&self) -> Result<Vector3<f64>> {
        let v = Vector3::from(self.view);
        if self.k_s < 0.0 || self.alpha < 1.0 || (v.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "Phong parameters need k_s >= 0, alpha >= 1 and a unit view vector, got {self:?}"
            )));
        }
        Ok(v)
    }
}

/// Measurement matrix, its observation mask and the pixel geometry.
#[derive(Debug, Clone)]
pub struct ObservationSet {
    /// `m x p` normalized intensities.
    pub m: DMatrix<f64>,
    /// `true` where the entry is observed.
    pub w: DMatrix<bool>,
    pub grid: PixelGrid,
}

impl ObservationSet {
    pub fn new(m: DMatrix<f64>, w: DMatrix<bool>, grid: PixelGrid) -> Result<Self> {
        if m.shape() != w.shape() || m.ncols() != grid.len() {
            return Err(Error::Dimension(format!(
                "M is {}x{}, W is {}x{}, grid has {} pixels",
                m.nrows(),
                m.ncols(),
                w.nrows(),
                w.ncols(),
                grid.len()
            )));
        }
        if m.iter().zip(w.iter()).any(|(v, &o)| o && !v.is_finite()) {
            return Err(Error::InvalidArgument("observed intensities must be finite".into()));
        }
        Ok(Self { m, w, grid })
    }

    /// Every entry observed.
    pub fn fully_observed(m: DMatrix<f64>, grid: PixelGrid) -> Result<Self> {
        let w = DMatrix::from_element(m.nrows(), m.ncols(), true);
        Self::new(m, w, grid)
    }

    pub fn images(&self) -> usize {
        self.m.nrows()
    }

    pub fn pixels(&self) -> usize {
        self.m.ncols()
    }

    pub fn with_full_mask(&self) -> Self {
        Self {
            m: self.m.clone(),
            w: DMatrix::from_element(self.m.nrows(), self.m.ncols(), true),
            grid: self.grid.clone(),
        }
    }

    pub fn missing_fraction(&self) -> f64 {
        self.w.iter().filter(|&&o| !o).count() as f64 / self.w.len().max(1) as f64
    }

    /// Errors on the first pixel column with no observed entry.
    pub fn check_columns(&self) -> Result<()> {
        match self.w.column_iter().position(|c| c.iter().all(|&o| !o)) {
            Some(column) => Err(Error::UnobservedColumn { column }),
            None => Ok(()),
        }
    }
}

/// `M_ij = max(0, rho_j l_i . n_hat_j)`
pub fn render_lambertian(surface: &Surface, lights: &Lighting) -> DMatrix<f64> {
    let p = surface.grid.len();
    let s = surface.scaled_normals();
    let mut m = &lights.0 * s;
    debug_assert_eq!(m.ncols(), p);
    m.apply(|v| *v = v.max(0.0));
    m
}

/// Lambertian shading plus a Phong lobe `k_s max(0, V.R)^alpha`, clipped to
/// `[0, 1]`. The lobe is only applied where the light is in front of the
/// surface.
pub fn render_phong(surface: &Surface, lights: &Lighting, phong: &PhongParams) -> Result<DMatrix<f64>> {
    let view = phong.validate()?;
    let mut m = render_lambertian(surface, lights);
    if phong.k_s > 0.0 {
        for i in 0..lights.count() {
            let l_hat = lights.row(i).normalize();
            for j in 0..surface.grid.len() {
                let n = surface.unit_normal(j);
                let cos = n.dot(&l_hat);
                if cos <= 0.0 {
                    continue;
                }
                let r = n * (2.0 * cos) - l_hat;
                m[(i, j)] += phong.k_s * view.dot(&r).max(0.0).powf(phong.alpha);
            }
        }
    }
    m.apply(|v| *v = v.clamp(0.0, 1.0));
    Ok(m)
}

/// Adds i.i.d. Gaussian noise with standard deviation `sigma_frac * max(M)`
/// and clips to `[0, 1]`. Each image row draws from its own stream derived
/// from `seed`, so output does not depend on evaluation order.
pub fn add_gaussian_noise(m: &DMatrix<f64>, sigma_frac: f64, seed: u64) -> DMatrix<f64> {
    let mut out = m.clone();
    if sigma_frac <= 0.0 || m.is_empty() {
        return out;
    }
    let sigma = sigma_frac * m.max();
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    for i in 0..m.nrows() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
        for j in 0..m.ncols() {
            out[(i, j)] = (out[(i, j)] + normal.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    out
}

/// Entry observed iff `low < M_ij < high`.
pub fn detect_missing(m: &DMatrix<f64>, low: f64, high: f64) -> DMatrix<bool> {
    m.map(|v| v > low && v < high)
}

/// SplitMix64 finalizer over `(seed, stream)`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// Spherical cap over a centered disk.
    SphereCap {
        /// Disk radius as a fraction of the shorter image side.
        radius: f64,
        /// Sphere radius relative to the disk radius (> 1).
        curvature: f64,
    },
    /// Sum of Gaussian bumps and dents over an inset rectangle.
    GaussianBumps { count: usize },
    /// Externally supplied depth (PFM) and mask (PNG), optional albedo (PFM).
    Raster {
        depth: PathBuf,
        mask: PathBuf,
        #[serde(default)]
        albedo: Option<PathBuf>,
    },
}

impl Shape {
    pub fn name(&self) -> String {
        match self {
            Shape::SphereCap { .. } => "sphere".into(),
            Shape::GaussianBumps { .. } => "bumps".into(),
            Shape::Raster { depth, .. } => depth
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "raster".into()),
        }
    }

    pub fn sphere() -> Self {
        Shape::SphereCap {
            radius: 0.45,
            curvature: 1.25,
        }
    }

    pub fn bumps() -> Self {
        Shape::GaussianBumps { count: 4 }
    }
}

impl Default for Shape {
    fn default() -> Self {
        Shape::sphere()
    }
}

/// Description of a synthetic scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub shape: Shape,
    pub width: usize,
    pub height: usize,
    /// Number of images.
    pub m: usize,
    /// Noise standard deviation as a fraction of the maximum intensity.
    pub noise: f64,
    pub phong: bool,
    pub k_s: f64,
    pub alpha: f64,
    /// Mean angle between light directions and the view axis, degrees.
    pub mean_inclination_deg: f64,
    /// Resample lights until no pixel is in attached shadow.
    pub shadow_free: bool,
    /// Mean albedo and amplitude of its smooth spatial variation.
    pub albedo: f64,
    pub albedo_variation: f64,
    /// Seed for shape and albedo texture, independent of the trial seed.
    pub shape_seed: u64,
    pub missing_low: f64,
    pub missing_high: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            shape: Shape::default(),
            width: 64,
            height: 64,
            m: 10,
            noise: 0.0,
            phong: false,
            k_s: 0.2,
            alpha: 10.0,
            mean_inclination_deg: 30.0,
            shadow_free: false,
            albedo: 0.75,
            albedo_variation: 0.15,
            shape_seed: 0,
            missing_low: MISSING_LOW,
            missing_high: MISSING_HIGH,
        }
    }
}

/// A rendered synthetic scene with its ground truth.
#[derive(Debug, Clone)]
pub struct Scene {
    pub surface: Surface,
    pub lights: Lighting,
    pub obs: ObservationSet,
}

pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<Scene> {
    if spec.m < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 images, got {}", spec.m)));
    }
    if !(0.0 <= spec.missing_low && spec.missing_low < spec.missing_high && spec.missing_high <= 1.0) {
        return Err(Error::InvalidArgument("missing thresholds must satisfy 0 <= low < high <= 1".into()));
    }
    if spec.noise < 0.0 {
        return Err(Error::InvalidArgument("noise must be non-negative".into()));
    }
    let surface = build_surface(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x11_6874));
    let lights = if spec.shadow_free {
        sample_unshadowed_lights(&surface, spec.m, spec.mean_inclination_deg, &mut rng)?
    } else {
        sample_lights(spec.m, spec.mean_inclination_deg, &mut rng)
    };
    let clean = if spec.phong {
        let phong = PhongParams {
            k_s: spec.k_s,
            alpha: spec.alpha,
            ..PhongParams::default()
        };
        render_phong(&surface, &lights, &phong)?
    } else {
        render_lambertian(&surface, &lights).map(|v| v.min(1.0))
    };
    let m = add_gaussian_noise(&clean, spec.noise, derive_seed(seed, 0x6e_6f69));
    let w = detect_missing(&m, spec.missing_low, spec.missing_high);
    let obs = ObservationSet::new(m, w, surface.grid.clone())?;
    Ok(Scene { surface, lights, obs })
}

/// Light directions around the view axis: a 2-D Gaussian tilt whose
/// magnitude (Rayleigh distributed) has the requested mean. Unit intensity.
pub fn sample_lights(m: usize, mean_inclination_deg: f64, rng: &mut impl Rng) -> Lighting {
    let scale = mean_inclination_deg.to_radians() / (std::f64::consts::PI / 2.0).sqrt();
    let normal = Normal::new(0.0, scale.max(1e-12)).expect("finite scale");
    let max_tilt = 85f64.to_radians();
    let mut l = DMatrix::zeros(m, 3);
    for i in 0..m {
        let (tx, ty) = loop {
            let tx: f64 = normal.sample(rng);
            let ty: f64 = normal.sample(rng);
            if tx.hypot(ty) < max_tilt {
                break (tx, ty);
            }
        };
        let theta = tx.hypot(ty);
        let phi = ty.atan2(tx);
        l[(i, 0)] = theta.sin() * phi.cos();
        l[(i, 1)] = theta.sin() * phi.sin();
        l[(i, 2)] = theta.cos();
    }
    Lighting(l)
}

fn sample_unshadowed_lights(
    surface: &Surface,
    m: usize,
    mean_inclination_deg: f64,
    rng: &mut impl Rng,
) -> Result<Lighting> {
    let normals: Vec<Vector3<f64>> = (0..surface.grid.len()).map(|j| surface.unit_normal(j)).collect();
    let mut l = DMatrix::zeros(m, 3);
    for i in 0..m {
        let mut found = false;
        for _ in 0..10_000 {
            let cand = sample_lights(1, mean_inclination_deg, rng).row(0);
            if normals.iter().all(|n| n.dot(&cand) > 0.05) {
                l.set_row(i, &cand.transpose());
                found = true;
                break;
            }
        }
        if !found {
            return Err(Error::InvalidArgument(
                "could not sample a light that leaves the whole surface unshadowed".into(),
            ));
        }
    }
    Ok(Lighting(l))
}

fn build_surface(spec: &SceneSpec) -> Result<Surface> {
    let (w, h) = (spec.width, spec.height);
    if w < 4 || h < 4 {
        return Err(Error::InvalidArgument(format!("scene size {w}x{h} too small")));
    }
    let (grid, z, albedo) = match &spec.shape {
        Shape::SphereCap { radius, curvature } => {
            if !(*curvature > 1.0) || !(*radius > 0.0) {
                return Err(Error::InvalidArgument("sphere cap needs radius > 0 and curvature > 1".into()));
            }
            let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
            let r = radius * w.min(h) as f64;
            let big_r = curvature * r;
            let grid = PixelGrid::from_fn(h, w, |x, y| (x as f64 - cx).hypot(y as f64 - cy) <= r)?;
            let z: Vec<f64> = grid
                .pixels()
                .iter()
                .map(|&(x, y)| {
                    let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                    (big_r * big_r - d2).sqrt()
                })
                .collect();
            let albedo = albedo_texture(&grid, spec);
            (grid, z, albedo)
        }
        Shape::GaussianBumps { count } => {
            let inset = 2;
            let grid = PixelGrid::from_fn(h, w, |x, y| {
                x >= inset && y >= inset && x + inset < w && y + inset < h
            })?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.shape_seed, 0xb0_6d70));
            let size = w.min(h) as f64;
            let bumps: Vec<(f64, f64, f64, f64)> = (0..(*count).max(1))
                .map(|k| {
                    let cx = rng.random_range(0.25..0.75) * w as f64;
                    let cy = rng.random_range(0.25..0.75) * h as f64;
                    let s = rng.random_range(0.10..0.18) * size;
                    let sign = if k % 3 == 2 { -1.0 } else { 1.0 };
                    (cx, cy, s, sign * 1.1 * s)
                })
                .collect();
            let z: Vec<f64> = grid
                .pixels()
                .iter()
                .map(|&(x, y)| {
                    bumps
                        .iter()
                        .map(|&(cx, cy, s, a)| {
                            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                            a * (-d2 / (2.0 * s * s)).exp()
                        })
                        .sum()
                })
                .collect();
            let albedo = albedo_texture(&grid, spec);
            (grid, z, albedo)
        }
        Shape::Raster { depth, mask, albedo } => {
            let raster = crate::io::load_raster_scene(depth, mask, albedo.as_deref())?;
            let albedo = match raster.albedo {
                Some(a) => a,
                None => albedo_texture(&raster.grid, spec),
            };
            (raster.grid, raster.depth, albedo)
        }
    };
    Surface::from_depth(grid, DepthMap(z).centered(), albedo)
}

/// Smooth albedo pattern in `albedo +- albedo_variation`, clamped to `[0, 1]`.
fn albedo_texture(grid: &PixelGrid, spec: &SceneSpec) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.shape_seed, 0xa1_bed0));
    let fx: f64 = rng.random_range(1.0..2.5);
    let fy: f64 = rng.random_range(1.0..2.5);
    let ph: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (w, h) = (grid.width() as f64, grid.height() as f64);
    grid.pixels()
        .iter()
        .map(|&(x, y)| {
            let u = std::f64::consts::TAU * (fx * x as f64 / w);
            let v = std::f64::consts::TAU * (fy * y as f64 / h);
            (spec.albedo + spec.albedo_variation * (0.6 * (u + ph).sin() + 0.4 * (v - ph).cos())).clamp(0.0, 1.0)
        })
        .collect()
}
