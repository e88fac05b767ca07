use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::telemetry::GrayImage;

pub const DEFAULT_SCALE_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsimParams {
    pub window_size: usize,
    pub window_sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
    pub scale_weights: Vec<f64>,
    /// `None` resolves the count from the image size.
    pub num_scales: Option<usize>,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window_size: 11,
            window_sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
            scale_weights: DEFAULT_SCALE_WEIGHTS.to_vec(),
            num_scales: None,
        }
    }
}

impl SsimParams {
    pub fn validate(&self) -> Result<()> {
        if self.window_size < 3 || self.window_size % 2 == 0 {
            return Err(Error::Config(format!(
                "window_size must be odd and >= 3, got {}",
                self.window_size
            )));
        }
        if !(self.window_sigma > 0.0 && self.window_sigma.is_finite()) {
            return Err(Error::Config("window_sigma must be > 0".into()));
        }
        if !(self.dynamic_range > 0.0) || self.k1 < 0.0 || self.k2 < 0.0 {
            return Err(Error::Config("k1, k2 must be >= 0 and dynamic_range > 0".into()));
        }
        if self.scale_weights.is_empty() || self.scale_weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::Config("scale_weights must be non-empty and positive".into()));
        }
        match self.num_scales {
            Some(0) => Err(Error::Config("num_scales must be >= 1".into())),
            Some(s) if s > self.scale_weights.len() => Err(Error::Config(format!(
                "num_scales {s} exceeds the {} scale weights",
                self.scale_weights.len()
            ))),
            _ => Ok(()),
        }
    }

    /// Scale count for an image whose shorter side is `min_side`.
    pub fn resolve_scales(&self, min_side: usize) -> Result<usize> {
        if min_side < self.window_size {
            return Err(Error::InvalidInput(format!(
                "image side {min_side} is smaller than the {}-pixel SSIM window",
                self.window_size
            )));
        }
        let fits = ((min_side / self.window_size) as f64).log2().floor() as usize + 1;
        match self.num_scales {
            None => Ok(fits.min(5).min(self.scale_weights.len())),
            Some(s) if s <= fits => Ok(s),
            Some(s) => Err(Error::InvalidInput(format!(
                "image side {min_side} supports at most {fits} scales, {s} requested"
            ))),
        }
    }

    /// First `scales` weights rescaled to sum to one.
    pub fn weights_for(&self, scales: usize) -> Vec<f64> {
        let head = &self.scale_weights[..scales];
        let total: f64 = head.iter().sum();
        head.iter().map(|w| w / total).collect()
    }

    fn c1_c2(&self) -> (f64, f64) {
        let l = self.dynamic_range;
        ((self.k1 * l).powi(2), (self.k2 * l).powi(2))
    }
}

/// Normalized 1-D Gaussian taps.
fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Row-major `size × size` Gaussian kernel summing to one.
pub fn gaussian_window(size: usize, sigma: f64) -> Result<Vec<f64>> {
    if size < 3 || size % 2 == 0 {
        return Err(Error::InvalidInput(format!("window size must be odd and >= 3, got {size}")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidInput(format!("window sigma must be > 0, got {sigma}")));
    }
    let taps = gaussian_taps(size, sigma);
    let mut k: Vec<f64> = taps
        .iter()
        .flat_map(|a| taps.iter().map(move |b| a * b))
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    Ok(k)
}

/// A grayscale raster without the range checks of [`GrayImage`]; used for
/// pyramid levels and intermediate products.
#[derive(Debug, Clone)]
pub(crate) struct Plane {
    pub w: usize,
    pub h: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn from_image(img: &GrayImage) -> Self {
        Plane {
            w: img.width(),
            h: img.height(),
            data: img.pixels().to_vec(),
        }
    }

    fn zip(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane {
            w: self.w,
            h: self.h,
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect(),
        }
    }

    /// 'valid' separable convolution.
    fn filter(&self, taps: &[f64]) -> Plane {
        let k = taps.len();
        let ow = self.w - k + 1;
        let oh = self.h - k + 1;
        let mut horiz = vec![0.0; self.h * ow];
        for y in 0..self.h {
            let row = &self.data[y * self.w..(y + 1) * self.w];
            for x in 0..ow {
                horiz[y * ow + x] = taps.iter().zip(&row[x..x + k]).map(|(t, v)| t * v).sum();
            }
        }
        let mut out = vec![0.0; oh * ow];
        for y in 0..oh {
            for (t_i, t) in taps.iter().enumerate() {
                let src = &horiz[(y + t_i) * ow..(y + t_i + 1) * ow];
                for (o, s) in out[y * ow..(y + 1) * ow].iter_mut().zip(src) {
                    *o += t * s;
                }
            }
        }
        Plane { w: ow, h: oh, data: out }
    }

    /// 2×2 mean pooling; odd trailing rows and columns are dropped.
    pub fn downsample(&self) -> Plane {
        let (w, h) = (self.w / 2, self.h / 2);
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let i = 2 * y * self.w + 2 * x;
                data.push(
                    (self.data[i] + self.data[i + 1] + self.data[i + self.w] + self.data[i + self.w + 1])
                        / 4.0,
                );
            }
        }
        Plane { w, h, data }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimScore {
    pub mean_ssim: f64,
    /// Spatial mean of the contrast-structure term.
    pub mean_cs: f64,
}

pub(crate) fn ssim_planes(a: &Plane, b: &Plane, p: &SsimParams, taps: &[f64]) -> SsimScore {
    let (c1, c2) = p.c1_c2();
    let mu_a = a.filter(taps);
    let mu_b = b.filter(taps);
    let e_aa = a.zip(a, |x, y| x * y).filter(taps);
    let e_bb = b.zip(b, |x, y| x * y).filter(taps);
    let e_ab = a.zip(b, |x, y| x * y).filter(taps);
    let n = mu_a.data.len();
    let (mut ssim_sum, mut cs_sum) = (0.0, 0.0);
    for i in 0..n {
        let (ma, mb) = (mu_a.data[i], mu_b.data[i]);
        let va = e_aa.data[i] - ma * ma;
        let vb = e_bb.data[i] - mb * mb;
        let cov = e_ab.data[i] - ma * mb;
        let cs = (2.0 * cov + c2) / (va + vb + c2);
        let l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        ssim_sum += l * cs;
        cs_sum += cs;
    }
    SsimScore {
        mean_ssim: ssim_sum / n as f64,
        mean_cs: cs_sum / n as f64,
    }
}

fn check_pair(a: &GrayImage, b: &GrayImage, p: &SsimParams) -> Result<()> {
    p.validate()?;
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    if a.width().min(a.height()) < p.window_size {
        return Err(Error::InvalidInput(format!(
            "image {}x{} is smaller than the {}-pixel SSIM window",
            a.width(),
            a.height(),
            p.window_size
        )));
    }
    Ok(())
}

/// Single-scale SSIM with Gaussian-weighted local statistics.
pub fn ssim(a: &GrayImage, b: &GrayImage, p: &SsimParams) -> Result<SsimScore> {
    check_pair(a, b, p)?;
    let taps = gaussian_taps(p.window_size, p.window_sigma);
    Ok(ssim_planes(&Plane::from_image(a), &Plane::from_image(b), p, &taps))
}

/// Multi-scale SSIM. Negative per-scale factors are clamped to zero.
pub fn ms_ssim(a: &GrayImage, b: &GrayImage, p: &SsimParams) -> Result<f64> {
    check_pair(a, b, p)?;
    let scales = p.resolve_scales(a.width().min(a.height()))?;
    let weights = p.weights_for(scales);
    let taps = gaussian_taps(p.window_size, p.window_sigma);
    let (mut pa, mut pb) = (Plane::from_image(a), Plane::from_image(b));
    let mut product = 1.0;
    for (s, w) in weights.iter().enumerate() {
        let score = ssim_planes(&pa, &pb, p, &taps);
        let factor = if s + 1 == scales { score.mean_ssim } else { score.mean_cs };
        product *= factor.max(0.0).powf(*w);
        if s + 1 < scales {
            pa = pa.downsample();
            pb = pb.downsample();
        }
    }
    Ok(product)
}
