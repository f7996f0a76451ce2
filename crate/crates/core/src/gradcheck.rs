//! Central finite-difference verification of the model's analytic gradients.

use std::fmt;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::features::Bandwidth;
use crate::model::{build_model, Example, Model, ModelConfig, Variant};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub tol: f64,
    /// Absolute bound on the numeric gradient where the analytic gradient is
    /// exactly zero.
    pub zero_tol: f64,
    /// Absolute agreement accepted when the relative error exceeds `tol`.
    /// Central differences carry a round-off error of roughly
    /// `ulp(loss) / eps` (about 1e-10 here), so relative error is noise for
    /// gradients of that order.
    pub abs_floor: f64,
    /// Elements checked per tensor; smaller tensors are checked in full.
    pub max_elements: usize,
    /// Scales the analytic gradient of the named tensor before comparison.
    /// Negative control for the checker itself.
    pub corrupt_tensor: Option<String>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-5,
            tol: 1e-5,
            zero_tol: 1e-7,
            abs_floor: 1e-9,
            max_elements: 64,
            corrupt_tensor: None,
        }
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub len: usize,
    pub checked: usize,
    /// Sampled elements skipped because the perturbation crossed a kink of
    /// the loss (SELU at zero or a change of pooling argmax).
    pub kinks: usize,
    /// Checked elements that exceeded `tol` but agreed within `abs_floor`.
    pub floored: usize,
    pub max_rel_error: f64,
    /// Largest relative error among elements not accepted by the floor.
    pub max_rel_error_unfloored: f64,
    pub max_abs_error: f64,
    /// Element with the largest relative error: (index, analytic, numeric).
    pub worst: Option<(usize, f64, f64)>,
    /// Whether the whole analytic gradient is exactly zero (tensor unused by
    /// the batch).
    pub analytic_zero: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub variant: Variant,
    pub seed: u64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &TensorCheck> {
        self.tensors.iter().filter(|t| !t.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.tensors
            .iter()
            .filter(|t| !t.analytic_zero)
            .map(|t| t.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn max_rel_error_unfloored(&self) -> f64 {
        self.tensors
            .iter()
            .filter(|t| !t.analytic_zero)
            .map(|t| t.max_rel_error_unfloored)
            .fold(0.0, f64::max)
    }

    /// Elements accepted by the absolute floor, over all tensors.
    pub fn floored(&self) -> usize {
        self.tensors.iter().map(|t| t.floored).sum()
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "variant {} seed {}", self.variant, self.seed)?;
        for t in &self.tensors {
            let status = match (t.passed, t.worst) {
                (true, _) | (false, None) => "ok".to_string(),
                (false, Some((i, a, n))) => format!("FAIL at [{i}]: analytic {a:.6e}, numeric {n:.6e}"),
            };
            if t.analytic_zero {
                writeln!(
                    f,
                    "  {:<24} {:>7} elems  checked {:>4}  zero gradient, max |numeric| {:.3e}  {status}",
                    t.name, t.len, t.checked, t.max_abs_error
                )?;
            } else {
                writeln!(
                    f,
                    "  {:<24} {:>7} elems  checked {:>4}  max rel err {:.3e}  kinks {}  floored {}  {status}",
                    t.name, t.len, t.checked, t.max_rel_error, t.kinks, t.floored
                )?;
            }
        }
        Ok(())
    }
}

/// Compares the analytic gradient of the summed batch loss with central
/// differences, tensor by tensor.
pub fn grad_check(
    model: &Model,
    batch: &[Example<'_>],
    config: &GradCheckConfig,
    rng: &mut impl Rng,
) -> Result<GradCheckReport> {
    if batch.is_empty() {
        return Err(Error::Data("gradient check needs a non-empty batch".into()));
    }
    let (loss, grads) = model.batch_gradient(batch)?;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {loss}")));
    }
    let cfg = model.config().clone();
    let mut probe = model.clone();
    let (_, base_signature) = model.loss_and_kink_signature(batch)?;
    let analytic: Vec<(String, Vec<f64>)> = grads
        .named(&cfg)
        .into_iter()
        .map(|(n, t)| {
            let mut g = t.data().to_vec();
            if config.corrupt_tensor.as_deref() == Some(n.as_str()) {
                g.iter_mut().for_each(|v| *v = *v * 1.01 + 1e-3);
            }
            (n, g)
        })
        .collect();
    let mut tensors = Vec::with_capacity(analytic.len());
    for (ti, (name, g)) in analytic.iter().enumerate() {
        let len = g.len();
        let picks: Vec<usize> = if len <= config.max_elements {
            (0..len).collect()
        } else {
            let mut v = index::sample(rng, len, config.max_elements).into_vec();
            v.sort_unstable();
            v
        };
        let analytic_zero = g.iter().all(|&v| v == 0.0);
        let (mut max_rel, mut max_rel_unfloored, mut max_abs) = (0.0f64, 0.0f64, 0.0f64);
        let mut worst = None;
        let (mut checked, mut kinks, mut floored, mut bad) = (0, 0, 0, 0);
        for &idx in &picks {
            let original = probe.params.named(&cfg)[ti].1.data()[idx];
            let mut eval = |value: f64| -> Result<(f64, u64)> {
                probe.params.named_mut(&cfg)[ti].1.data_mut()[idx] = value;
                probe.loss_and_kink_signature(batch)
            };
            let (plus, sig_plus) = eval(original + config.eps)?;
            let (minus, sig_minus) = eval(original - config.eps)?;
            eval(original)?;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss perturbing {name}[{idx}]")));
            }
            if sig_plus != sig_minus || sig_plus != base_signature {
                kinks += 1;
                continue;
            }
            checked += 1;
            let numeric = (plus - minus) / (2.0 * config.eps);
            let rel = relative_error(g[idx], numeric);
            let abs = (g[idx] - numeric).abs();
            if worst.is_none() || rel > max_rel {
                worst = Some((idx, g[idx], numeric));
            }
            max_rel = max_rel.max(rel);
            max_abs = max_abs.max(abs);
            if rel > config.tol && abs <= config.abs_floor {
                floored += 1;
                continue;
            }
            max_rel_unfloored = max_rel_unfloored.max(rel);
            if rel > config.tol {
                bad += 1;
            }
        }
        let passed = if analytic_zero { max_abs <= config.zero_tol } else { bad == 0 };
        tensors.push(TensorCheck {
            name: name.clone(),
            len,
            checked,
            kinks,
            floored,
            max_rel_error: max_rel,
            max_rel_error_unfloored: max_rel_unfloored,
            max_abs_error: max_abs,
            worst,
            analytic_zero,
            passed,
        });
    }
    Ok(GradCheckReport { variant: cfg.variant, seed: 0, tensors })
}

/// Random patches with alternating bandwidth flags and random targets.
pub struct RandomBatch {
    pub patches: Vec<Vec<f64>>,
    pub bandwidths: Vec<Bandwidth>,
    pub targets: Vec<usize>,
}

impl RandomBatch {
    pub fn new(config: &ModelConfig, size: usize, rng: &mut impl Rng) -> Self {
        let patches = (0..size)
            .map(|_| (0..config.input_len()).map(|_| rng.random_range(-1.5..1.5)).collect())
            .collect();
        let bandwidths = (0..size).map(|i| Bandwidth::ALL[i % 2]).collect();
        let targets = (0..size).map(|_| rng.random_range(0..config.n_classes)).collect();
        RandomBatch { patches, bandwidths, targets }
    }

    pub fn examples(&self) -> Vec<Example<'_>> {
        self.patches
            .iter()
            .zip(&self.bandwidths)
            .zip(&self.targets)
            .map(|((p, &bandwidth), &target)| Example { patch: p, bandwidth, target })
            .collect()
    }
}

/// Builds a model of `config` from `seed`, draws a mixed-bandwidth batch of
/// `batch_size` and checks it.
pub fn check_variant(
    config: &ModelConfig,
    seed: u64,
    batch_size: usize,
    check: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let model = build_model(config, seed)?;
    let mut r = rng::stream(seed, &[rng::label::GRADCHECK]);
    let batch = RandomBatch::new(config, batch_size, &mut r);
    let mut report = grad_check(&model, &batch.examples(), check, &mut r)?;
    report.seed = seed;
    Ok(report)
}
