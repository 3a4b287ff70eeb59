//! Synthetic datasets with exactly known structure.
//!
//! Two families:
//!
//! * an isotropic Gaussian mixture in `d` dimensions whose component
//!   densities are known in closed form (so "semantic alignment" of an edit
//!   can be scored as an exact negative log-density), and
//! * 8×8 binary shape images in `{-1, +1}` with small integer jitter, for
//!   image-style metrics.

use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Isotropic Gaussian mixture: `K` components with shared scale `sigma`.
#[derive(Debug, Clone)]
pub struct MixtureSpec {
    means: Vec<Vec<f64>>,
    sigma: f64,
}

impl MixtureSpec {
    /// Validates: at least two components, consistent dimensions,
    /// `sigma > 0`, and pairwise mean separation greater than `4 * sigma`
    /// (components must not overlap, or NLL-based alignment scores would be
    /// ambiguous).
    pub fn new(means: Vec<Vec<f64>>, sigma: f64) -> Result<Self> {
        if means.len() < 2 {
            return Err(Error::Invalid("mixture: need at least 2 components".into()));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Invalid(format!(
                "mixture: sigma must be > 0, got {sigma}"
            )));
        }
        let d = means[0].len();
        if d == 0 || means.iter().any(|m| m.len() != d) {
            return Err(Error::Invalid(
                "mixture: means must share one nonzero dimension".into(),
            ));
        }
        for i in 0..means.len() {
            for j in (i + 1)..means.len() {
                let dist = crate::numerics::l2_dist(&means[i], &means[j]);
                if dist <= 4.0 * sigma {
                    return Err(Error::Invalid(format!(
                        "mixture: components {i} and {j} are {dist:.4} apart; need > 4*sigma = {:.4}",
                        4.0 * sigma
                    )));
                }
            }
        }
        Ok(MixtureSpec { means, sigma })
    }

    /// `K` components evenly spaced on the unit circle (first two
    /// coordinates; any extra dimensions are zero), shared scale `sigma`.
    pub fn on_unit_circle(k: usize, d: usize, sigma: f64) -> Result<Self> {
        if d < 2 {
            return Err(Error::Invalid("mixture: circle layout needs d >= 2".into()));
        }
        let means = (0..k)
            .map(|i| {
                let angle = 2.0 * std::f64::consts::PI * i as f64 / k as f64;
                let mut m = vec![0.0; d];
                m[0] = angle.cos();
                m[1] = angle.sin();
                m
            })
            .collect();
        MixtureSpec::new(means, sigma)
    }

    pub fn n_classes(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        &self.means[k]
    }
}

/// Defaults: 4 components at angles 0°, 90°, 180°, 270° on the unit circle
/// in the plane, sigma = 0.15.
pub fn default_mixture() -> MixtureSpec {
    MixtureSpec::on_unit_circle(4, 2, 0.15).expect("default mixture is valid")
}

/// Draw `n` labelled samples. Per sample the draw order is: class index
/// (uniform), then the `d` Gaussian coordinates.
pub fn sample_mixture(spec: &MixtureSpec, n: usize, rng: &mut Rng) -> Vec<(Vec<f64>, usize)> {
    (0..n)
        .map(|_| {
            let k = rng.uniform_usize(spec.n_classes());
            (sample_component(spec, k, rng), k)
        })
        .collect()
}

/// Draw `n` samples from one fixed component.
pub fn sample_component_n(spec: &MixtureSpec, k: usize, n: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    (0..n).map(|_| sample_component(spec, k, rng)).collect()
}

fn sample_component(spec: &MixtureSpec, k: usize, rng: &mut Rng) -> Vec<f64> {
    let noise = rng.gaussian(spec.dim());
    spec.mean(k)
        .iter()
        .zip(noise)
        .map(|(m, e)| m + spec.sigma * e)
        .collect()
}

/// Exact negative log-density of `x` under component `k`:
/// `0.5 * d * ln(2 pi sigma^2) + ||x - mean_k||^2 / (2 sigma^2)`.
pub fn component_nll(spec: &MixtureSpec, x: &[f64], k: usize) -> Result<f64> {
    if k >= spec.n_classes() {
        return Err(Error::Invalid(format!(
            "component_nll: class {k} out of range (K = {})",
            spec.n_classes()
        )));
    }
    if x.len() != spec.dim() {
        return Err(Error::Invalid(format!(
            "component_nll: x has dim {}, spec has dim {}",
            x.len(),
            spec.dim()
        )));
    }
    let s2 = spec.sigma * spec.sigma;
    let d = spec.dim() as f64;
    let quad = crate::numerics::sq_dist(x, spec.mean(k)) / (2.0 * s2);
    Ok(0.5 * d * (2.0 * std::f64::consts::PI * s2).ln() + quad)
}

/// 8×8 binary shapes.
///
/// Four canonical 8×8 masks (drawn below with `#` for `+1` pixels and `.`
/// for `-1`), each confined to the central 4×4 box so that any jitter in
/// `-2..=2` keeps the shape fully inside the grid:
///
/// ```text
/// square     circle     cross      triangle
/// ........   ........   ........   ........
/// ........   ........   ........   ........
/// ..####..   ...##...   ..#..#..   ..#.....
/// ..####..   ..####..   ...##...   ..##....
/// ..####..   ..####..   ...##...   ..###...
/// ..####..   ...##...   ..#..#..   ..####..
/// ........   ........   ........   ........
/// ........   ........   ........   ........
/// ```
#[derive(Debug, Clone)]
pub struct ShapeSpec {
    jitter: i64,
}

pub const SHAPE_GRID: usize = 8;
pub const SHAPE_DIM: usize = SHAPE_GRID * SHAPE_GRID;
pub const SHAPE_CLASSES: [&str; 4] = ["square", "circle", "cross", "triangle"];

const SHAPE_MASKS: [[&str; 8]; 4] = [
    [
        "........", "........", "..####..", "..####..", "..####..", "..####..", "........",
        "........",
    ],
    [
        "........", "........", "...##...", "..####..", "..####..", "...##...", "........",
        "........",
    ],
    [
        "........", "........", "..#..#..", "...##...", "...##...", "..#..#..", "........",
        "........",
    ],
    [
        "........", "........", "..#.....", "..##....", "..###...", "..####..", "........",
        "........",
    ],
];

impl ShapeSpec {
    /// Max jitter of 2 keeps every canonical mask inside the 8×8 grid.
    pub fn new(jitter: i64) -> Result<Self> {
        if !(0..=2).contains(&jitter) {
            return Err(Error::Invalid(format!(
                "shapes: jitter must be in 0..=2 so shapes stay in the grid, got {jitter}"
            )));
        }
        Ok(ShapeSpec { jitter })
    }

    pub fn jitter(&self) -> i64 {
        self.jitter
    }

    pub fn n_classes(&self) -> usize {
        SHAPE_MASKS.len()
    }

    pub fn dim(&self) -> usize {
        SHAPE_DIM
    }
}

pub fn default_shapes() -> ShapeSpec {
    ShapeSpec::new(2).expect("default shape spec is valid")
}

/// Render one shape as a flattened 8×8 vector in `{-1, +1}` (row-major).
/// Draw order: column offset, then row offset, each uniform in
/// `-jitter..=jitter`.
pub fn render_shape(spec: &ShapeSpec, class: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    if class >= spec.n_classes() {
        return Err(Error::Invalid(format!(
            "render_shape: class {class} out of range (K = {})",
            spec.n_classes()
        )));
    }
    let dx = rng.uniform_range(-spec.jitter, spec.jitter);
    let dy = rng.uniform_range(-spec.jitter, spec.jitter);
    Ok(render_shape_at(class, dx, dy))
}

/// Deterministic rendering at a fixed offset (exposed for tests).
pub fn render_shape_at(class: usize, dx: i64, dy: i64) -> Vec<f64> {
    let mask = &SHAPE_MASKS[class];
    let mut out = vec![-1.0; SHAPE_DIM];
    for (r, row) in mask.iter().enumerate() {
        for (c, ch) in row.bytes().enumerate() {
            if ch == b'#' {
                let rr = r as i64 + dy;
                let cc = c as i64 + dx;
                assert!(
                    (0..SHAPE_GRID as i64).contains(&rr) && (0..SHAPE_GRID as i64).contains(&cc),
                    "shape pixel jittered out of the grid"
                );
                out[rr as usize * SHAPE_GRID + cc as usize] = 1.0;
            }
        }
    }
    out
}

/// Draw `n` labelled shape samples (class uniform, then the jitter offsets).
pub fn sample_shapes(spec: &ShapeSpec, n: usize, rng: &mut Rng) -> Result<Vec<(Vec<f64>, usize)>> {
    (0..n)
        .map(|_| {
            let k = rng.uniform_usize(spec.n_classes());
            Ok((render_shape(spec, k, rng)?, k))
        })
        .collect()
}

/// CSV header + rows for a labelled dataset: columns `x0..x{d-1}, label`.
pub fn dataset_to_csv(data: &[(Vec<f64>, usize)]) -> String {
    let d = data.first().map_or(0, |(x, _)| x.len());
    let mut out = String::new();
    let header: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
    out.push_str(&header.join(","));
    out.push_str(",label\n");
    for (x, label) in data {
        for v in x {
            out.push_str(&format!("{v},"));
        }
        out.push_str(&format!("{label}\n"));
    }
    out
}
