//! Deterministic CPU tile renderer for 3D Gaussians with an exact backward
//! pass.
//!
//! Pixel `(i, j)` samples the image plane at `(i, j)` in pixel units. A
//! Gaussian touches a pixel only inside its `sigma_extent` Mahalanobis
//! ellipse; tiles list every Gaussian whose ellipse bounding box overlaps
//! them, so tiling never changes the result of the per-pixel blend.

use nalgebra::{Isometry3, Matrix2, Matrix2x3, Matrix3, Translation3, UnitQuaternion, Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian_scene::{covariance_unchecked, sh_basis_with_grad, sh_coeff_count, sh_degree_of, GaussianPrimitive, SH_DC_OFFSET};
use crate::geometry::{quat_matrix, quat_matrix_backward};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub world_to_cam: Isometry3<f64>,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::param("zero-size viewport"));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::param("focal lengths must be positive"));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(Error::param("principal point outside the image"));
        }
        Ok(())
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.world_to_cam.rotation.to_rotation_matrix().into_inner()
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        self.world_to_cam.inverse().translation.vector
    }

    /// Camera at `eye` looking at `target` with `up` roughly upward in the image.
    ///
    /// Camera axes: +x right, +y down, +z forward.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>, focal: f64, width: usize, height: usize) -> Self {
        let z = (target - eye).normalize();
        let x = z.cross(&up).normalize();
        let y = z.cross(&x);
        let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let rot = UnitQuaternion::from_matrix(&r);
        let t = -(rot * eye);
        Camera {
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            world_to_cam: Isometry3::from_parts(Translation3::from(t), rot),
            width,
            height,
        }
    }

    /// Extrinsic as a row-major 4x4 matrix.
    pub fn extrinsic_row_major(&self) -> [f64; 16] {
        let m = self.world_to_cam.to_homogeneous();
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = m[(r, c)];
            }
        }
        out
    }

    pub fn from_extrinsic_row_major(fx: f64, fy: f64, cx: f64, cy: f64, m: &[f64; 16], width: usize, height: usize) -> Result<Self> {
        let r = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        if (r.transpose() * r - Matrix3::identity()).norm() > 1e-6 || (r.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::input("extrinsic rotation block is not a rotation"));
        }
        if m[12].abs() > 1e-12 || m[13].abs() > 1e-12 || m[14].abs() > 1e-12 || (m[15] - 1.0).abs() > 1e-12 {
            return Err(Error::input("extrinsic bottom row must be (0, 0, 0, 1)"));
        }
        let cam = Camera {
            fx,
            fy,
            cx,
            cy,
            world_to_cam: Isometry3::from_parts(
                Translation3::new(m[3], m[7], m[11]),
                UnitQuaternion::from_matrix(&r),
            ),
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }
}

/// Knobs of the forward model. Defaults follow common splatting practice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RasterConfig {
    pub tile_size: usize,
    pub alpha_max: f64,
    pub min_transmittance: f64,
    pub dilation: f64,
    pub near: f64,
    /// Footprint radius in standard deviations.
    pub sigma_extent: f64,
}

impl Default for RasterConfig {
    fn default() -> Self {
        RasterConfig {
            tile_size: 16,
            alpha_max: 0.99,
            min_transmittance: 1.0 / 255.0,
            dilation: 0.3,
            near: 0.01,
            sigma_extent: 3.0,
        }
    }
}

/// Screen-space footprint of one Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct Projected2D {
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    pub depth: f64,
    /// Clamped to [0, 1].
    pub color: [f64; 3],
    pub base_opacity: f64,
    pub conic: Matrix2<f64>,
    /// Channels where the SH color fell below 0 / above 1.
    pub color_clamped: [bool; 3],
    /// Inclusive pixel bounding box `[x0, y0, x1, y1]` of the footprint.
    pub bbox: [i64; 4],
}

/// RGBA image with channels in [0, 1], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
    pub background: [f64; 3],
}

impl Image {
    pub fn new(width: usize, height: usize, background: [f64; 3]) -> Self {
        let mut data = vec![0.0; width * height * 4];
        for px in data.chunks_exact_mut(4) {
            px[..3].copy_from_slice(&background);
        }
        Image { width, height, data, background }
    }

    pub fn zeros_like(&self) -> Self {
        Image {
            width: self.width,
            height: self.height,
            data: vec![0.0; self.data.len()],
            background: self.background,
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 4] {
        let i = (y * self.width + x) * 4;
        [self.data[i], self.data[i + 1], self.data[i + 2], self.data[i + 3]]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Mean of RGB, per pixel.
    pub fn luminance(&self, x: usize, y: usize) -> f64 {
        let p = self.pixel(x, y);
        (p[0] + p[1] + p[2]) / 3.0
    }
}

/// Peak signal-to-noise ratio over RGB, peak 1.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::param("psnr needs equal image shapes"));
    }
    let mut se = 0.0;
    let mut n = 0usize;
    for (pa, pb) in a.data.chunks_exact(4).zip(b.data.chunks_exact(4)) {
        for c in 0..3 {
            se += (pa[c] - pb[c]).powi(2);
            n += 1;
        }
    }
    let mse = se / n as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

fn view_dir(g: &GaussianPrimitive, cam: &Camera) -> (Vector3<f64>, f64) {
    let v = g.mu - cam.center();
    let n = v.norm();
    (v / n, n)
}

fn jacobian(p: &Vector3<f64>, cam: &Camera) -> Matrix2x3<f64> {
    let iz = 1.0 / p.z;
    Matrix2x3::new(
        cam.fx * iz,
        0.0,
        -cam.fx * p.x * iz * iz,
        0.0,
        cam.fy * iz,
        -cam.fy * p.y * iz * iz,
    )
}

/// Project with the default configuration; `None` when culled.
pub fn project(g: &GaussianPrimitive, cam: &Camera) -> Option<Projected2D> {
    project_with(&RasterConfig::default(), g, cam)
}

pub fn project_with(cfg: &RasterConfig, g: &GaussianPrimitive, cam: &Camera) -> Option<Projected2D> {
    let p = cam.world_to_cam * nalgebra::Point3::from(g.mu);
    let p = p.coords;
    if p.z <= cfg.near {
        return None;
    }
    let w = cam.rotation();
    let t = jacobian(&p, cam) * w;
    let sigma = covariance_unchecked(&g.scale, &g.rotation);
    let cov2d = t * sigma * t.transpose() + Matrix2::identity() * cfg.dilation;
    let conic = cov2d.try_inverse()?;
    let mean2d = Vector2::new(cam.fx * p.x / p.z + cam.cx, cam.fy * p.y / p.z + cam.cy);
    let rx = cfg.sigma_extent * cov2d[(0, 0)].sqrt();
    let ry = cfg.sigma_extent * cov2d[(1, 1)].sqrt();
    let bbox = [
        (mean2d.x - rx).ceil() as i64,
        (mean2d.y - ry).ceil() as i64,
        (mean2d.x + rx).floor() as i64,
        (mean2d.y + ry).floor() as i64,
    ];
    let (w_px, h_px) = (cam.width as i64, cam.height as i64);
    if bbox[2] < 0 || bbox[3] < 0 || bbox[0] >= w_px || bbox[1] >= h_px || bbox[0] > bbox[2] || bbox[1] > bbox[3] {
        return None;
    }
    let degree = sh_degree_of(g.sh.len()).ok()?;
    let (dir, _) = view_dir(g, cam);
    let (basis, _) = sh_basis_with_grad(degree, &dir);
    let mut color = [SH_DC_OFFSET; 3];
    for (coef, b) in g.sh.iter().zip(&basis) {
        for c in 0..3 {
            color[c] += coef[c] * b;
        }
    }
    let mut color_clamped = [false; 3];
    for c in 0..3 {
        if !(0.0..=1.0).contains(&color[c]) {
            color_clamped[c] = true;
            color[c] = color[c].clamp(0.0, 1.0);
        }
    }
    Some(Projected2D {
        mean2d,
        cov2d,
        depth: p.z,
        color,
        base_opacity: g.opacity,
        conic,
        color_clamped,
        bbox,
    })
}

/// Projected Gaussians sorted front to back and their per-tile lists.
struct Prepared {
    /// `(scene index, projection)` in depth order.
    sorted: Vec<(usize, Projected2D)>,
    /// Per tile: ranks into `sorted`, increasing.
    tiles: Vec<Vec<u32>>,
    tiles_x: usize,
}

fn prepare(cfg: &RasterConfig, scene: &[GaussianPrimitive], cam: &Camera) -> Prepared {
    let projected = par::map_slice(scene, |g| project_with(cfg, g, cam));
    let mut sorted: Vec<(usize, Projected2D)> = projected
        .into_iter()
        .enumerate()
        .filter_map(|(i, p)| p.map(|p| (i, p)))
        .collect();
    sorted.sort_by(|a, b| a.1.depth.total_cmp(&b.1.depth).then(a.0.cmp(&b.0)));
    let ts = cfg.tile_size;
    let tiles_x = cam.width.div_ceil(ts);
    let tiles_y = cam.height.div_ceil(ts);
    let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
    for (rank, (_, p)) in sorted.iter().enumerate() {
        let x0 = p.bbox[0].max(0) as usize / ts;
        let y0 = p.bbox[1].max(0) as usize / ts;
        let x1 = (p.bbox[2].min(cam.width as i64 - 1)) as usize / ts;
        let y1 = (p.bbox[3].min(cam.height as i64 - 1)) as usize / ts;
        for ty in y0..=y1 {
            for tx in x0..=x1 {
                tiles[ty * tiles_x + tx].push(rank as u32);
            }
        }
    }
    Prepared { sorted, tiles, tiles_x }
}

/// One blended contribution at a pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Contribution {
    /// Index into the tile list.
    slot: usize,
    alpha: f64,
    /// `exp(-d^T Q d / 2)`.
    gauss: f64,
    clamped: bool,
    /// Transmittance before this contribution.
    transmittance: f64,
    offset: Vector2<f64>,
}

/// Front-to-back blend of one pixel; returns contributions and final transmittance.
fn blend_pixel(cfg: &RasterConfig, prep: &Prepared, list: &[u32], px: f64, py: f64, out: &mut Vec<Contribution>) -> f64 {
    out.clear();
    let limit = cfg.sigma_extent * cfg.sigma_extent;
    let mut t = 1.0;
    for (slot, &rank) in list.iter().enumerate() {
        let p = &prep.sorted[rank as usize].1;
        let d = Vector2::new(px - p.mean2d.x, py - p.mean2d.y);
        let m = (p.conic * d).dot(&d);
        if m > limit {
            continue;
        }
        let gauss = (-0.5 * m).exp();
        let raw = p.base_opacity * gauss;
        let clamped = raw > cfg.alpha_max;
        let alpha = if clamped { cfg.alpha_max } else { raw };
        out.push(Contribution { slot, alpha, gauss, clamped, transmittance: t, offset: d });
        t *= 1.0 - alpha;
        if t < cfg.min_transmittance {
            break;
        }
    }
    t
}

fn tile_pixels(cam: &Camera, tiles_x: usize, ts: usize, tile: usize) -> impl Iterator<Item = (usize, usize)> {
    let x0 = (tile % tiles_x) * ts;
    let y0 = (tile / tiles_x) * ts;
    let x1 = (x0 + ts).min(cam.width);
    let y1 = (y0 + ts).min(cam.height);
    (y0..y1).flat_map(move |y| (x0..x1).map(move |x| (x, y)))
}

/// Per-pixel contributor record used to replay a render with a frozen
/// active set (contributors, alpha clamps, color clamps and order).
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSet {
    /// Per pixel: `(scene index, alpha clamped)` in blend order.
    pub pixels: Vec<Vec<(usize, bool)>>,
    /// Per scene Gaussian: color clamp flags (`None` when culled).
    pub color_clamps: Vec<Option<[bool; 3]>>,
}

/// Per-Gaussian gradients of a scalar loss.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianGrad {
    pub mu: Vector3<f64>,
    pub scale: Vector3<f64>,
    /// With respect to the raw `(w, x, y, z)` components.
    pub rotation: Vector4<f64>,
    pub opacity: f64,
    pub sh: Vec<[f64; 3]>,
}

impl GaussianGrad {
    pub fn zeros(n_sh: usize) -> Self {
        GaussianGrad {
            mu: Vector3::zeros(),
            scale: Vector3::zeros(),
            rotation: Vector4::zeros(),
            opacity: 0.0,
            sh: vec![[0.0; 3]; n_sh],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderGradients {
    pub gaussians: Vec<GaussianGrad>,
    /// `|dL/d mean2d|` per Gaussian, pixels.
    pub view_space_grad_norm: Vec<f64>,
}

/// Screen-space gradient accumulators for one Gaussian.
#[derive(Debug, Clone, Copy, Default)]
struct ScreenGrad {
    mean2d: Vector2<f64>,
    conic: Matrix2<f64>,
    color: Vector3<f64>,
    opacity: f64,
}

impl std::ops::AddAssign for ScreenGrad {
    fn add_assign(&mut self, o: Self) {
        self.mean2d += o.mean2d;
        self.conic += o.conic;
        self.color += o.color;
        self.opacity += o.opacity;
    }
}

#[derive(Debug, Clone, Default)]
pub struct Renderer {
    pub config: RasterConfig,
}

impl Renderer {
    pub fn new(config: RasterConfig) -> Self {
        Renderer { config }
    }

    pub fn render(&self, scene: &[GaussianPrimitive], cam: &Camera, background: [f64; 3]) -> Result<Image> {
        cam.validate()?;
        let cfg = &self.config;
        let prep = prepare(cfg, scene, cam);
        let ts = cfg.tile_size;
        let tile_out = par::map_range(prep.tiles.len(), |tile| {
            let list = &prep.tiles[tile];
            let mut contribs = Vec::new();
            tile_pixels(cam, prep.tiles_x, ts, tile)
                .map(|(x, y)| {
                    let t = blend_pixel(cfg, &prep, list, x as f64, y as f64, &mut contribs);
                    let mut rgb = [0.0; 3];
                    for c in &contribs {
                        let p = &prep.sorted[list[c.slot] as usize].1;
                        let w = c.alpha * c.transmittance;
                        for ch in 0..3 {
                            rgb[ch] += p.color[ch] * w;
                        }
                    }
                    (x, y, [rgb[0] + t * background[0], rgb[1] + t * background[1], rgb[2] + t * background[2], 1.0 - t])
                })
                .collect::<Vec<_>>()
        });
        let mut img = Image::new(cam.width, cam.height, background);
        for (x, y, px) in tile_out.into_iter().flatten() {
            let i = (y * cam.width + x) * 4;
            img.data[i..i + 4].copy_from_slice(&px);
        }
        Ok(img)
    }

    /// Contributor lists of a forward render.
    pub fn active_set(&self, scene: &[GaussianPrimitive], cam: &Camera) -> Result<ActiveSet> {
        cam.validate()?;
        let cfg = &self.config;
        let prep = prepare(cfg, scene, cam);
        let mut pixels = vec![Vec::new(); cam.width * cam.height];
        let mut contribs = Vec::new();
        for tile in 0..prep.tiles.len() {
            let list = &prep.tiles[tile];
            for (x, y) in tile_pixels(cam, prep.tiles_x, cfg.tile_size, tile) {
                blend_pixel(cfg, &prep, list, x as f64, y as f64, &mut contribs);
                pixels[y * cam.width + x] = contribs
                    .iter()
                    .map(|c| (prep.sorted[list[c.slot] as usize].0, c.clamped))
                    .collect();
            }
        }
        let mut color_clamps = vec![None; scene.len()];
        for (i, p) in &prep.sorted {
            color_clamps[*i] = Some(p.color_clamped);
        }
        Ok(ActiveSet { pixels, color_clamps })
    }

    /// Forward render that reuses a frozen [`ActiveSet`]: same contributors in
    /// the same order, clamped alphas fixed at `alpha_max`, clamped color
    /// channels fixed at their bound. Smooth in every Gaussian parameter.
    pub fn render_active_set(&self, scene: &[GaussianPrimitive], cam: &Camera, background: [f64; 3], active: &ActiveSet) -> Result<Image> {
        cam.validate()?;
        if active.pixels.len() != cam.width * cam.height || active.color_clamps.len() != scene.len() {
            return Err(Error::param("active set does not match scene / camera"));
        }
        let cfg = &self.config;
        let w = cam.rotation();
        let pre: Vec<Option<(Vector2<f64>, Matrix2<f64>, [f64; 3])>> = scene
            .iter()
            .zip(&active.color_clamps)
            .map(|(g, clamps)| {
                let clamps = (*clamps)?;
                let p = (cam.world_to_cam * nalgebra::Point3::from(g.mu)).coords;
                let t = jacobian(&p, cam) * w;
                let cov = t * covariance_unchecked(&g.scale, &g.rotation) * t.transpose() + Matrix2::identity() * cfg.dilation;
                let mean = Vector2::new(cam.fx * p.x / p.z + cam.cx, cam.fy * p.y / p.z + cam.cy);
                let degree = sh_degree_of(g.sh.len()).ok()?;
                let (dir, _) = view_dir(g, cam);
                let (basis, _) = sh_basis_with_grad(degree, &dir);
                let mut color = [SH_DC_OFFSET; 3];
                for (coef, b) in g.sh.iter().zip(&basis) {
                    for c in 0..3 {
                        color[c] += coef[c] * b;
                    }
                }
                for c in 0..3 {
                    if clamps[c] {
                        color[c] = color[c].clamp(0.0, 1.0);
                    }
                }
                Some((mean, cov.try_inverse()?, color))
            })
            .collect();
        let mut img = Image::new(cam.width, cam.height, background);
        for (pix, list) in active.pixels.iter().enumerate() {
            let (x, y) = ((pix % cam.width) as f64, (pix / cam.width) as f64);
            let mut t = 1.0;
            let mut rgb = [0.0; 3];
            for &(gi, clamped) in list {
                let (mean, conic, color) = pre[gi].ok_or_else(|| Error::param("active set references a culled gaussian"))?;
                let d = Vector2::new(x - mean.x, y - mean.y);
                let alpha = if clamped {
                    cfg.alpha_max
                } else {
                    scene[gi].opacity * (-0.5 * (conic * d).dot(&d)).exp()
                };
                for ch in 0..3 {
                    rgb[ch] += color[ch] * alpha * t;
                }
                t *= 1.0 - alpha;
            }
            let i = pix * 4;
            img.data[i..i + 4].copy_from_slice(&[
                rgb[0] + t * background[0],
                rgb[1] + t * background[1],
                rgb[2] + t * background[2],
                1.0 - t,
            ]);
        }
        Ok(img)
    }

    /// Exact gradients of `sum(d_image * render(scene))` for the active set
    /// of the forward render.
    pub fn render_backward(&self, scene: &[GaussianPrimitive], cam: &Camera, background: [f64; 3], d_image: &Image) -> Result<RenderGradients> {
        cam.validate()?;
        if d_image.width != cam.width || d_image.height != cam.height || d_image.data.len() != cam.width * cam.height * 4 {
            return Err(Error::param("gradient image shape does not match the render"));
        }
        let cfg = &self.config;
        let prep = prepare(cfg, scene, cam);
        let ts = cfg.tile_size;
        let tile_grads = par::map_range(prep.tiles.len(), |tile| {
            let list = &prep.tiles[tile];
            let mut acc = vec![ScreenGrad::default(); list.len()];
            let mut contribs = Vec::new();
            for (x, y) in tile_pixels(cam, prep.tiles_x, ts, tile) {
                let t_final = blend_pixel(cfg, &prep, list, x as f64, y as f64, &mut contribs);
                let i = (y * cam.width + x) * 4;
                let dc = Vector3::new(d_image.data[i], d_image.data[i + 1], d_image.data[i + 2]);
                let da = d_image.data[i + 3];
                // suffix sum of color after the current contribution, seeded with the background term
                let mut suffix = Vector3::from(background) * t_final;
                for c in contribs.iter().rev() {
                    let p = &prep.sorted[list[c.slot] as usize].1;
                    let color = Vector3::from(p.color);
                    let one_minus = 1.0 - c.alpha;
                    let d_alpha = dc.dot(&(color * c.transmittance - suffix / one_minus)) + da * t_final / one_minus;
                    let g = &mut acc[c.slot];
                    g.color += dc * (c.alpha * c.transmittance);
                    if !c.clamped {
                        g.opacity += d_alpha * c.gauss;
                        let d_gauss = d_alpha * p.base_opacity * c.gauss;
                        g.mean2d += p.conic * c.offset * d_gauss;
                        g.conic += c.offset * c.offset.transpose() * (-0.5 * d_gauss);
                    }
                    suffix += color * (c.alpha * c.transmittance);
                }
            }
            acc
        });
        let mut screen = vec![ScreenGrad::default(); prep.sorted.len()];
        for (tile, acc) in tile_grads.into_iter().enumerate() {
            for (slot, g) in acc.into_iter().enumerate() {
                screen[prep.tiles[tile][slot] as usize] += g;
            }
        }
        let chained = par::map_range(prep.sorted.len(), |rank| {
            let (gi, proj) = &prep.sorted[rank];
            chain_gaussian(&scene[*gi], proj, &screen[rank], cam)
        });
        let mut gaussians: Vec<GaussianGrad> = scene.iter().map(|g| GaussianGrad::zeros(g.sh.len())).collect();
        let mut norms = vec![0.0; scene.len()];
        for (rank, (grad, norm)) in chained.into_iter().enumerate() {
            let gi = prep.sorted[rank].0;
            gaussians[gi] = grad;
            norms[gi] = norm;
        }
        Ok(RenderGradients { gaussians, view_space_grad_norm: norms })
    }
}

/// Pull screen-space gradients back to the Gaussian's 3D parameters.
fn chain_gaussian(g: &GaussianPrimitive, proj: &Projected2D, sg: &ScreenGrad, cam: &Camera) -> (GaussianGrad, f64) {
    let w = cam.rotation();
    let p = (cam.world_to_cam * nalgebra::Point3::from(g.mu)).coords;
    let j = jacobian(&p, cam);
    let t = j * w;
    let r = quat_matrix(&g.rotation);
    let m = r * Matrix3::from_diagonal(&g.scale);
    let sigma = m * m.transpose();

    // conic = cov^-1
    let q = proj.conic;
    let d_cov = -(q * sg.conic * q);
    let d_cov = (d_cov + d_cov.transpose()) * 0.5;
    let d_sigma = t.transpose() * d_cov * t;
    let d_t = d_cov * t * sigma * 2.0;
    let d_j = d_t * w.transpose();

    let iz = 1.0 / p.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let (fx, fy) = (cam.fx, cam.fy);
    let mut d_p = Vector3::new(
        d_j[(0, 2)] * (-fx * iz2),
        d_j[(1, 2)] * (-fy * iz2),
        d_j[(0, 0)] * (-fx * iz2) + d_j[(0, 2)] * (2.0 * fx * p.x * iz3) + d_j[(1, 1)] * (-fy * iz2) + d_j[(1, 2)] * (2.0 * fy * p.y * iz3),
    );
    let dm = sg.mean2d;
    d_p += Vector3::new(dm.x * fx * iz, dm.y * fy * iz, -dm.x * fx * p.x * iz2 - dm.y * fy * p.y * iz2);
    let mut d_mu = w.transpose() * d_p;

    let d_m = d_sigma * m * 2.0;
    let d_scale = Vector3::from_fn(|k, _| (0..3).map(|i| d_m[(i, k)] * r[(i, k)]).sum());
    let d_r = Matrix3::from_fn(|i, k| d_m[(i, k)] * g.scale[k]);
    let d_rot = quat_matrix_backward(&g.rotation, &d_r);

    let n_sh = sh_coeff_count(sh_degree_of(g.sh.len()).unwrap_or(0));
    let degree = sh_degree_of(n_sh).unwrap_or(0);
    let (dir, dist) = view_dir(g, cam);
    let (basis, basis_grad) = sh_basis_with_grad(degree, &dir);
    let mut d_raw = sg.color;
    for c in 0..3 {
        if proj.color_clamped[c] {
            d_raw[c] = 0.0;
        }
    }
    let mut d_sh = vec![[0.0; 3]; g.sh.len()];
    let mut d_dir = Vector3::zeros();
    for k in 0..g.sh.len() {
        for c in 0..3 {
            d_sh[k][c] = d_raw[c] * basis[k];
            d_dir += basis_grad[k] * (d_raw[c] * g.sh[k][c]);
        }
    }
    d_mu += (d_dir - dir * dir.dot(&d_dir)) / dist;

    (
        GaussianGrad {
            mu: d_mu,
            scale: d_scale,
            rotation: d_rot,
            opacity: sg.opacity,
            sh: d_sh,
        },
        sg.mean2d.norm(),
    )
}

pub fn render(scene: &[GaussianPrimitive], cam: &Camera, background: [f64; 3]) -> Result<Image> {
    Renderer::default().render(scene, cam, background)
}

pub fn render_backward(scene: &[GaussianPrimitive], cam: &Camera, background: [f64; 3], d_image: &Image) -> Result<RenderGradients> {
    Renderer::default().render_backward(scene, cam, background, d_image)
}
