//! PSNR/SSIM metrics and the three-way evaluation report
//! (deblurring / interpolation / joint).

use ndarray::{Array2, Array3};

use crate::attention::AttentionMode;
use crate::blur_synth::TrainingSample;
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::network::{forward, ModelParams, NetworkConfig};
use crate::scalar::Scalar;

/// PSNR value reported when the two frames are identical (MSE = 0).
pub const PSNR_CAP_DB: f64 = 100.0;

/// Mean squared error over all channels and pixels, computed in `f64`.
pub fn mse(a: &Frame, b: &Frame) -> Result<f64> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::shape(format!(
            "mse over {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// Peak signal-to-noise ratio in dB with MAX = 1.0, capped at
/// [`PSNR_CAP_DB`] for identical frames.
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * (1.0 / m).log10())
}

/// Parameters of the structural-similarity computation. Defaults are the
/// standard published constants for a dynamic range of 1.0.
#[derive(Debug, Clone)]
pub struct SsimSpec {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimSpec {
    fn default() -> Self {
        SsimSpec { window: 11, sigma: 1.5, k1: 0.01, k2: 0.03, dynamic_range: 1.0 }
    }
}

impl SsimSpec {
    pub fn validate(&self) -> Result<()> {
        if self.window % 2 == 0 || self.window == 0 {
            return Err(Error::config(format!("ssim window {} must be odd", self.window)));
        }
        if self.sigma <= 0.0 || self.k1 <= 0.0 || self.k2 <= 0.0 || self.dynamic_range <= 0.0 {
            return Err(Error::config("ssim constants must be positive"));
        }
        Ok(())
    }

    fn kernel(&self) -> Vec<f64> {
        let half = (self.window / 2) as i64;
        let mut k: Vec<f64> = (-half..=half)
            .map(|i| (-((i * i) as f64) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let s: f64 = k.iter().sum();
        for v in &mut k {
            *v /= s;
        }
        k
    }
}

/// Valid-window separable Gaussian filter: rows then columns.
fn gaussian_valid(img: &Array2<f64>, kernel: &[f64]) -> Array2<f64> {
    let (h, w) = img.dim();
    let k = kernel.len();
    let mut rows = Array2::<f64>::zeros((h, w - k + 1));
    for y in 0..h {
        for x in 0..w - k + 1 {
            let mut s = 0.0;
            for (j, &kv) in kernel.iter().enumerate() {
                s += kv * img[[y, x + j]];
            }
            rows[[y, x]] = s;
        }
    }
    let mut out = Array2::<f64>::zeros((h - k + 1, w - k + 1));
    for y in 0..h - k + 1 {
        for x in 0..w - k + 1 {
            let mut s = 0.0;
            for (j, &kv) in kernel.iter().enumerate() {
                s += kv * rows[[y + j, x]];
            }
            out[[y, x]] = s;
        }
    }
    out
}

/// Structural similarity, averaged over the valid window positions of each
/// RGB channel and then over channels.
pub fn ssim(a: &Frame, b: &Frame, spec: &SsimSpec) -> Result<f64> {
    spec.validate()?;
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::shape("ssim over differently sized frames".into()));
    }
    if a.height() < spec.window || a.width() < spec.window {
        return Err(Error::shape(format!(
            "frame {}x{} smaller than ssim window {}",
            a.height(),
            a.width(),
            spec.window
        )));
    }
    let kernel = spec.kernel();
    let c1 = (spec.k1 * spec.dynamic_range).powi(2);
    let c2 = (spec.k2 * spec.dynamic_range).powi(2);
    let mut total = 0.0;
    for c in 0..3 {
        let x = a.data().index_axis(ndarray::Axis(0), c).mapv(f64::from);
        let y = b.data().index_axis(ndarray::Axis(0), c).mapv(f64::from);
        let mu_x = gaussian_valid(&x, &kernel);
        let mu_y = gaussian_valid(&y, &kernel);
        let xx = gaussian_valid(&(&x * &x), &kernel);
        let yy = gaussian_valid(&(&y * &y), &kernel);
        let xy = gaussian_valid(&(&x * &y), &kernel);
        let mut acc = 0.0;
        let n = mu_x.len();
        for ((((&mx, &my), &sxx), &syy), &sxy) in
            mu_x.iter().zip(mu_y.iter()).zip(xx.iter()).zip(yy.iter()).zip(xy.iter())
        {
            let var_x = sxx - mx * mx;
            let var_y = syy - my * my;
            let cov = sxy - mx * my;
            acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (var_x + var_y + c2));
        }
        total += acc / n as f64;
    }
    Ok(total / 3.0)
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// Per-task aggregate with the per-frame scores it was pooled from.
#[derive(Debug, Clone, Default)]
pub struct TaskScores {
    pub psnr_frames: Vec<f64>,
    pub ssim_frames: Vec<f64>,
}

impl TaskScores {
    pub fn push(&mut self, psnr_db: f64, ssim_val: f64) {
        self.psnr_frames.push(psnr_db);
        self.ssim_frames.push(ssim_val);
    }

    pub fn frames(&self) -> usize {
        self.psnr_frames.len()
    }

    pub fn mean_psnr(&self) -> f64 {
        mean(&self.psnr_frames)
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(&self.ssim_frames)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// PSNR/SSIM per task. The joint row pools the per-frame scores of both
/// tasks, so it is always recomputable from the stored vectors.
#[derive(Debug, Clone, Default)]
pub struct MetricReport {
    pub deblur: TaskScores,
    pub interp: TaskScores,
    pub fingerprint: String,
}

impl MetricReport {
    pub fn joint(&self) -> TaskScores {
        let mut j = TaskScores::default();
        j.psnr_frames.extend_from_slice(&self.deblur.psnr_frames);
        j.psnr_frames.extend_from_slice(&self.interp.psnr_frames);
        j.ssim_frames.extend_from_slice(&self.deblur.ssim_frames);
        j.ssim_frames.extend_from_slice(&self.interp.ssim_frames);
        j
    }

    /// Human-readable table.
    pub fn table(&self) -> String {
        let joint = self.joint();
        let mut s = String::new();
        s.push_str(&format!("{:<10} {:>10} {:>10} {:>8}\n", "task", "psnr_db", "ssim", "frames"));
        for (name, row) in
            [("deblur", &self.deblur), ("interp", &self.interp), ("joint", &joint)]
        {
            s.push_str(&format!(
                "{:<10} {:>10.4} {:>10.6} {:>8}\n",
                name,
                row.mean_psnr(),
                row.mean_ssim(),
                row.frames()
            ));
        }
        if !self.fingerprint.is_empty() {
            s.push_str(&format!("fingerprint: {}\n", self.fingerprint));
        }
        s
    }

    /// Machine-readable CSV.
    pub fn to_csv(&self) -> String {
        let joint = self.joint();
        let mut s = String::from("task,psnr_db,ssim,frames,fingerprint\n");
        for (name, row) in
            [("deblur", &self.deblur), ("interp", &self.interp), ("joint", &joint)]
        {
            s.push_str(&format!(
                "{},{:.6},{:.8},{},{}\n",
                name,
                row.mean_psnr(),
                row.mean_ssim(),
                row.frames(),
                self.fingerprint
            ));
        }
        s
    }
}

// ---------------------------------------------------------------------------
// Dataset evaluation
// ---------------------------------------------------------------------------

/// Run the model over every sample and score deblurred outputs against the
/// deblur targets and interpolated outputs against the interpolation
/// targets. Output index `2i` is the deblurred input `i`; `2i + 1`
/// interpolates between inputs `i` and `i + 1`.
pub fn evaluate<T: Scalar>(
    params: &ModelParams<T>,
    config: &NetworkConfig,
    dataset: &[TrainingSample],
    window: usize,
    mode: AttentionMode,
) -> Result<MetricReport> {
    if dataset.is_empty() {
        return Err(Error::config("cannot evaluate an empty dataset"));
    }
    let ssim_spec = SsimSpec::default();
    let mut report = MetricReport::default();
    for sample in dataset {
        sample.validate()?;
        let outputs = forward(&sample.input_window, params, config, window, mode)?;
        for (k, frame) in outputs.frames().iter().enumerate() {
            let (target, row) = if k % 2 == 0 {
                (&sample.deblur_gt[k / 2], &mut report.deblur)
            } else {
                (&sample.interp_gt[k / 2], &mut report.interp)
            };
            row.push(psnr(frame, target)?, ssim(frame, target, &ssim_spec)?);
        }
    }
    Ok(report)
}

/// The no-model baseline: score the (possibly blurry) inputs directly
/// against the deblur targets. Interpolation has no baseline output, so only
/// the deblur row is populated.
pub fn evaluate_blurry_inputs(dataset: &[TrainingSample]) -> Result<MetricReport> {
    if dataset.is_empty() {
        return Err(Error::config("cannot evaluate an empty dataset"));
    }
    let ssim_spec = SsimSpec::default();
    let mut report = MetricReport::default();
    for sample in dataset {
        sample.validate()?;
        for (input, target) in sample.input_window.frames().iter().zip(&sample.deblur_gt) {
            report.deblur.push(psnr(input, target)?, ssim(input, target, &ssim_spec)?);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    /// Naive full-window SSIM for one channel pair; the independent
    /// reference the fast separable path is checked against.
    fn ssim_reference(a: &Frame, b: &Frame, spec: &SsimSpec) -> f64 {
        let k = spec.kernel();
        let w = spec.window;
        let c1 = (spec.k1 * spec.dynamic_range).powi(2);
        let c2 = (spec.k2 * spec.dynamic_range).powi(2);
        let (h, wid) = (a.height(), a.width());
        let mut total = 0.0;
        for c in 0..3 {
            let mut acc = 0.0;
            let mut count = 0usize;
            for y0 in 0..=h - w {
                for x0 in 0..=wid - w {
                    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for dy in 0..w {
                        for dx in 0..w {
                            let wt = k[dy] * k[dx];
                            let xv = f64::from(a.data()[[c, y0 + dy, x0 + dx]]);
                            let yv = f64::from(b.data()[[c, y0 + dy, x0 + dx]]);
                            mx += wt * xv;
                            my += wt * yv;
                            sxx += wt * xv * xv;
                            syy += wt * yv * yv;
                            sxy += wt * xv * yv;
                        }
                    }
                    let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                    acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                        / ((mx * mx + my * my + c1) * (vx + vy + c2));
                    count += 1;
                }
            }
            total += acc / count as f64;
        }
        total / 3.0
    }

    fn random_frame(h: usize, w: usize, seed: u64) -> Frame {
        use rand::Rng;
        let mut rng = crate::seed::stream_rng(seed, 40);
        Frame::new(Array3::from_shape_fn((3, h, w), |_| rng.random_range(0.0..1.0f32))).unwrap()
    }

    #[test]
    fn psnr_identical_hits_cap() {
        let f = random_frame(16, 16, 1);
        assert_eq!(psnr(&f, &f).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn psnr_closed_form_offset() {
        let a = Frame::constant(16, 16, 0.0).unwrap();
        let b = Frame::constant(16, 16, 16.0 / 255.0).unwrap();
        let got = psnr(&a, &b).unwrap();
        let want = 20.0 * (255.0f64 / 16.0).log10();
        assert!((got - want).abs() < 1e-9, "got {got}, want {want}");
        assert!((got - 24.05).abs() < 0.01);
    }

    #[test]
    fn psnr_unit_error_is_zero_db() {
        let a = Frame::constant(8, 8, 0.0).unwrap();
        let b = Frame::constant(8, 8, 1.0).unwrap();
        assert!((psnr(&a, &b).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn mse_matches_scalar_loop() {
        let a = random_frame(9, 7, 2);
        let b = random_frame(9, 7, 3);
        let mut acc = 0.0f64;
        for c in 0..3 {
            for y in 0..9 {
                for x in 0..7 {
                    let d = f64::from(a.data()[[c, y, x]]) - f64::from(b.data()[[c, y, x]]);
                    acc += d * d;
                }
            }
        }
        let want = acc / (3.0 * 9.0 * 7.0);
        assert!((mse(&a, &b).unwrap() - want).abs() < 1e-7);
    }

    #[test]
    fn ssim_identical_is_one() {
        let f = random_frame(16, 16, 4);
        let s = ssim(&f, &f, &SsimSpec::default()).unwrap();
        assert!((s - 1.0).abs() < 1e-9, "got {s}");
    }

    #[test]
    fn ssim_constant_inversion_matches_closed_form() {
        // a = 0.8, b = 0.2 everywhere: variances vanish, so
        // ssim = (2*0.16 + c1) / (0.64 + 0.04 + c1).
        let a = Frame::constant(16, 16, 0.8).unwrap();
        let b = Frame::constant(16, 16, 0.2).unwrap();
        let got = ssim(&a, &b, &SsimSpec::default()).unwrap();
        assert!((got - 0.3201 / 0.6801).abs() < 1e-6, "got {got}");
        let reference = ssim_reference(&a, &b, &SsimSpec::default());
        assert!((got - reference).abs() < 1e-6);
    }

    #[test]
    fn ssim_matches_reference_on_random_pairs() {
        let spec = SsimSpec::default();
        for seed in 0..5u64 {
            let a = random_frame(14, 13, 100 + seed);
            let b = random_frame(14, 13, 200 + seed);
            let got = ssim(&a, &b, &spec).unwrap();
            let want = ssim_reference(&a, &b, &spec);
            assert!((got - want).abs() < 1e-6, "seed {seed}: {got} vs {want}");
            assert!(got <= 1.0);
        }
    }

    #[test]
    fn ssim_is_symmetric() {
        let a = random_frame(15, 15, 30);
        let b = random_frame(15, 15, 31);
        let ab = ssim(&a, &b, &SsimSpec::default()).unwrap();
        let ba = ssim(&b, &a, &SsimSpec::default()).unwrap();
        assert!((ab - ba).abs() < 1e-9);
    }

    #[test]
    fn ssim_rejects_small_frames() {
        let a = Frame::constant(8, 8, 0.5).unwrap();
        assert!(matches!(ssim(&a, &a, &SsimSpec::default()), Err(Error::Shape(_))));
    }

    #[test]
    fn psnr_rejects_shape_mismatch() {
        let a = Frame::constant(8, 8, 0.5).unwrap();
        let b = Frame::constant(8, 9, 0.5).unwrap();
        assert!(matches!(psnr(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn joint_row_pools_both_tasks() {
        let mut report = MetricReport::default();
        report.deblur.push(30.0, 0.9);
        report.deblur.push(34.0, 0.95);
        report.interp.push(20.0, 0.8);
        let joint = report.joint();
        assert_eq!(joint.frames(), 3);
        assert!((joint.mean_psnr() - 28.0).abs() < 1e-12);
    }
}
