//! Synthetic difference-imaging postage stamps.
//!
//! A noise-free scene (sky plus Gaussian point sources at the template PSF) is
//! observed twice: once as a deep, low-noise template and once, blurred by the
//! PSF-matching kernel, as a noisier search image. The difference stamp is the
//! search image minus the kernel-degraded template. Real sets add a transient
//! at the stamp centre; bogus sets add one of several subtraction artifacts.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::dataset::{DiaSet, Label, Provenance};
use crate::error::{Error, Result};
use crate::preprocess::{PostageStamp, Role, STAMP_SIZE};
use crate::rng::{self, Purpose, StreamRng};
use crate::tensor::Tensor;

/// Observing conditions for generated stamps. Fluxes are in counts, sizes in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub sky_level: f64,
    pub read_noise_sigma: f64,
    pub psf_sigma_tmpl: f64,
    pub psf_sigma_srch: f64,
    /// Noise reduction of the coadded template relative to a single search exposure.
    pub template_depth: f64,
    pub n_background_sources: usize,
    pub background_flux: (f64, f64),
    pub transient_flux: (f64, f64),
    pub saturation: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            sky_level: 100.0,
            read_noise_sigma: 5.0,
            psf_sigma_tmpl: 1.2,
            psf_sigma_srch: 1.8,
            template_depth: 4.0,
            n_background_sources: 4,
            background_flux: (300.0, 30_000.0),
            transient_flux: (4_000.0, 40_000.0),
            saturation: 65_535.0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("scene config: {m}")));
        if !(self.psf_sigma_tmpl > 0.0) {
            return bad("template PSF sigma must be positive");
        }
        if self.psf_sigma_srch < self.psf_sigma_tmpl {
            return bad("search PSF must be at least as wide as the template PSF");
        }
        if !(self.sky_level >= 0.0) || !(self.read_noise_sigma >= 0.0) {
            return bad("sky level and read noise must be non-negative");
        }
        if !(self.template_depth >= 1.0) {
            return bad("template depth must be >= 1");
        }
        for (lo, hi) in [self.background_flux, self.transient_flux] {
            if !(lo > 0.0 && hi >= lo) {
                return bad("flux ranges must be positive and ordered");
            }
        }
        Ok(())
    }

    pub fn srch_noise_sigma(&self) -> f64 {
        (self.read_noise_sigma.powi(2) + self.sky_level).sqrt()
    }

    pub fn tmpl_noise_sigma(&self) -> f64 {
        self.srch_noise_sigma() / self.template_depth
    }
}

/// Bogus detection mechanisms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArtifactKind {
    /// Misregistered subtraction: positive and negative lobes side by side.
    Dipole,
    /// A full column of saturated or dead pixels in the search image.
    BadColumn,
    /// Nothing but noise.
    NoiseSpike,
    /// A bright star whose PSF was not matched, leaving a core/ring residual.
    GhostSubtraction,
}

impl ArtifactKind {
    pub const ALL: [ArtifactKind; 4] = [
        ArtifactKind::Dipole,
        ArtifactKind::BadColumn,
        ArtifactKind::NoiseSpike,
        ArtifactKind::GhostSubtraction,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SetKind {
    Real,
    Bogus(ArtifactKind),
}

impl SetKind {
    pub fn label(self) -> Label {
        match self {
            SetKind::Real => Label::Real,
            SetKind::Bogus(_) => Label::Bogus,
        }
    }
}

/// Adds `flux` counts of a circular Gaussian centred at `(cx, cy)` (column,
/// row; pixel centres at integer coordinates), each pixel taking the profile
/// value at its midpoint.
pub fn render_gaussian_source(canvas: &mut Tensor, cx: f64, cy: f64, flux: f64, sigma: f64) -> Result<()> {
    if !(sigma > 0.0) {
        return Err(Error::Parameter(format!("source sigma {sigma} must be positive")));
    }
    let &[h, w] = canvas.shape() else {
        return Err(Error::dim("render", format!("canvas must be 2-D, got {:?}", canvas.shape())));
    };
    if flux == 0.0 {
        return Ok(());
    }
    let norm = flux / (2.0 * std::f64::consts::PI * sigma * sigma);
    let inv = 1.0 / (2.0 * sigma * sigma);
    let px = canvas.data_mut();
    for y in 0..h {
        let dy = y as f64 - cy;
        for x in 0..w {
            let dx = x as f64 - cx;
            px[y * w + x] += norm * (-(dx * dx + dy * dy) * inv).exp();
        }
    }
    Ok(())
}

/// Width of the kernel that degrades the template PSF to the search PSF:
/// `sqrt(sigma_srch^2 - sigma_tmpl^2)`.
pub fn matching_sigma(psf_sigma_tmpl: f64, psf_sigma_srch: f64) -> Result<f64> {
    let var = psf_sigma_srch * psf_sigma_srch - psf_sigma_tmpl * psf_sigma_tmpl;
    if var < 0.0 {
        return Err(Error::Config(format!(
            "search PSF ({psf_sigma_srch}) narrower than template PSF ({psf_sigma_tmpl})"
        )));
    }
    Ok(var.sqrt())
}

/// Normalized, sampled 1-D Gaussian with radius `ceil(4 sigma)`; `[1.0]` for sigma 0.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![1.0];
    }
    let radius = (4.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Symmetric (edge-repeating) reflection of an index into `0..n`.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 { -i - 1 } else if i >= n { 2 * n - i - 1 } else { i };
    r as usize
}

/// Convolves a template with the Gaussian matching kernel, reflecting at the
/// borders so no flux leaks out of the stamp.
pub fn degrade_template(tmpl: &Tensor, sigma_match: f64) -> Result<Tensor> {
    if !(sigma_match >= 0.0) || !sigma_match.is_finite() {
        return Err(Error::Config(format!("matching kernel sigma {sigma_match} is invalid")));
    }
    let &[h, w] = tmpl.shape() else {
        return Err(Error::dim("degrade_template", format!("template must be 2-D, got {:?}", tmpl.shape())));
    };
    let kernel = gaussian_kernel(sigma_match);
    let radius = (kernel.len() / 2) as isize;
    if radius as usize > h.min(w) {
        return Err(Error::Config(format!("matching kernel radius {radius} exceeds the stamp")));
    }
    let src = tmpl.data();
    let mut rows = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            rows[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * src[y * w + reflect(x as isize + k as isize - radius, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * rows[reflect(y as isize + k as isize - radius, h) * w + x])
                .sum();
        }
    }
    Tensor::new(vec![h, w], out)
}

fn log_uniform(rng: &mut StreamRng, (lo, hi): (f64, f64)) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

fn add_noise(img: &mut Tensor, sigma: f64, rng: &mut StreamRng) {
    for v in img.data_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v += sigma * z;
    }
}

fn centre() -> f64 {
    (STAMP_SIZE / 2) as f64
}

/// Builds one labeled DIA set.
pub fn make_dia_set(config: &SceneConfig, kind: SetKind, rng: &mut StreamRng, id: &str) -> Result<DiaSet> {
    config.validate()?;
    let sigma_match = matching_sigma(config.psf_sigma_tmpl, config.psf_sigma_srch)?;
    let c = centre();
    let shape = [STAMP_SIZE, STAMP_SIZE];

    let mut scene = Tensor::filled(&shape, config.sky_level);
    for _ in 0..config.n_background_sources {
        // keep field sources off the central detection
        let (x, y) = loop {
            let x = rng.random::<f64>() * STAMP_SIZE as f64 - 0.5;
            let y = rng.random::<f64>() * STAMP_SIZE as f64 - 0.5;
            if (x - c).hypot(y - c) >= 6.0 {
                break (x, y);
            }
        };
        let flux = log_uniform(rng, config.background_flux);
        render_gaussian_source(&mut scene, x, y, flux, config.psf_sigma_tmpl)?;
    }

    let mut tmpl = scene.clone();
    add_noise(&mut tmpl, config.tmpl_noise_sigma(), rng);
    let mut srch = degrade_template(&scene, sigma_match)?;
    add_noise(&mut srch, config.srch_noise_sigma(), rng);

    let jitter = |rng: &mut StreamRng| rng.random::<f64>() - 0.5;
    match kind {
        SetKind::Real => {
            let (dx, dy) = (jitter(rng), jitter(rng));
            let flux = log_uniform(rng, config.transient_flux);
            render_gaussian_source(&mut srch, c + dx, c + dy, flux, config.psf_sigma_srch)?;
        }
        SetKind::Bogus(ArtifactKind::Dipole) => {
            let (dx, dy) = (jitter(rng), jitter(rng));
            let flux = log_uniform(rng, config.transient_flux);
            let angle = rng.random::<f64>() * std::f64::consts::TAU;
            let offset = 1.0 + rng.random::<f64>();
            render_gaussian_source(&mut srch, c + dx, c + dy, flux, config.psf_sigma_srch)?;
            render_gaussian_source(
                &mut tmpl,
                c + dx + offset * angle.cos(),
                c + dy + offset * angle.sin(),
                flux,
                config.psf_sigma_tmpl,
            )?;
        }
        SetKind::Bogus(ArtifactKind::BadColumn) => {
            let col = loop {
                let col = rng.random_range(0..STAMP_SIZE);
                if col.abs_diff(STAMP_SIZE / 2) > 2 {
                    break col;
                }
            };
            let value = if rng.random::<bool>() { config.saturation } else { 0.0 };
            let px = srch.data_mut();
            for y in 0..STAMP_SIZE {
                px[y * STAMP_SIZE + col] = value;
            }
        }
        SetKind::Bogus(ArtifactKind::NoiseSpike) => {}
        SetKind::Bogus(ArtifactKind::GhostSubtraction) => {
            let (dx, dy) = (jitter(rng), jitter(rng));
            let flux = log_uniform(rng, config.transient_flux);
            let broadening = 1.15 + 0.25 * rng.random::<f64>();
            render_gaussian_source(&mut tmpl, c + dx, c + dy, flux, config.psf_sigma_tmpl)?;
            render_gaussian_source(&mut srch, c + dx, c + dy, flux, config.psf_sigma_srch * broadening)?;
        }
    }

    let degraded = degrade_template(&tmpl, sigma_match)?;
    let mut diff = srch.clone();
    diff.add_scaled(-1.0, &degraded)?;

    DiaSet::new(
        id,
        PostageStamp::from_grid(id, Role::Tmpl, tmpl)?,
        PostageStamp::from_grid(id, Role::Srch, srch)?,
        Some(PostageStamp::from_grid(id, Role::Diff, diff)?),
        kind.label(),
        Provenance::Synthetic,
    )
}

/// Median-absolute-deviation estimate of a Gaussian sigma.
pub fn robust_sigma(values: &[f64]) -> f64 {
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
    };
    let mut v = values.to_vec();
    let m = median(&mut v);
    let mut dev: Vec<f64> = values.iter().map(|x| (x - m).abs()).collect();
    1.4826 * median(&mut dev)
}

/// Sum of the central 3x3 pixels of a difference stamp.
pub fn centre_sum(diff: &Tensor) -> f64 {
    let c = STAMP_SIZE / 2;
    (c - 1..=c + 1)
        .flat_map(|y| (c - 1..=c + 1).map(move |x| (y, x)))
        .map(|(y, x)| diff.at2(y, x))
        .sum()
}

/// Signal-to-noise of the central 3x3 aperture, using the stamp's robust
/// per-pixel sigma (a nine-pixel sum has three times the per-pixel noise).
pub fn centre_significance(diff: &Tensor) -> f64 {
    centre_sum(diff) / (3.0 * robust_sigma(diff.data()))
}

/// Detection threshold on [`centre_significance`].
pub const DETECTION_THRESHOLD: f64 = 5.0;

/// A generated set together with the mechanism that produced it.
#[derive(Debug, Clone)]
pub struct SyntheticSet {
    pub kind: SetKind,
    pub set: DiaSet,
}

/// Generates `n` sets, `round(n * real_fraction)` of them real, the rest split
/// uniformly at random over the artifact kinds. Set `i` draws only from its own
/// stream, so output does not depend on thread count.
pub fn generate(n: usize, real_fraction: f64, config: &SceneConfig, seed: u64) -> Result<Vec<SyntheticSet>> {
    if n == 0 {
        return Err(Error::Parameter("dataset size must be positive".into()));
    }
    if !(real_fraction > 0.0 && real_fraction < 1.0) {
        return Err(Error::Parameter(format!("real fraction {real_fraction} outside (0, 1)")));
    }
    config.validate()?;
    let n_real = (n as f64 * real_fraction).round() as usize;
    let mut labels: Vec<Label> = (0..n).map(|i| if i < n_real { Label::Real } else { Label::Bogus }).collect();
    rng::shuffle(&mut labels, &mut rng::stream(seed, Purpose::Labels, 0));

    labels
        .par_iter()
        .enumerate()
        .map(|(i, &label)| {
            let mut rng = rng::stream(seed, Purpose::Synthesis, i as u64);
            let kind = match label {
                Label::Real => SetKind::Real,
                Label::Bogus => SetKind::Bogus(ArtifactKind::ALL[rng.random_range(0..ArtifactKind::ALL.len())]),
            };
            let set = make_dia_set(config, kind, &mut rng, &format!("syn{i:06}"))?;
            Ok(SyntheticSet { kind, set })
        })
        .collect()
}

pub fn generate_dataset(n: usize, real_fraction: f64, config: &SceneConfig, seed: u64) -> Result<Vec<DiaSet>> {
    Ok(generate(n, real_fraction, config, seed)?.into_iter().map(|s| s.set).collect())
}
