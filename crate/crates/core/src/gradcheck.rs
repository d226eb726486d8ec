//! Central finite-difference gradient checking.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// Lower bound of the relative-error denominator.
    pub floor: f64,
    /// At most this many coordinates per input are probed (all when `None`).
    pub max_probes: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            floor: 1e-3,
            max_probes: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: String,
    /// `|analytic − numeric| / max(|analytic|, |numeric|, floor)`, worst case.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub probes: usize,
    /// (input index, flat element index) of the worst coordinate.
    pub worst: Option<(usize, usize)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Compares analytic gradients of a scalar function with central differences.
///
/// `f` receives one tensor per entry of `inputs`; for the analytic pass they
/// are gradient-tracking leaves, for the probes they are plain constants.
pub fn check_gradients<F>(
    name: &str,
    inputs: &[Tensor<f64>],
    mut f: F,
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let leaves: Vec<Tensor<f64>> = inputs.iter().map(|t| t.to_leaf(true)).collect();
    let out = f(&leaves)?;
    if out.numel() != 1 {
        return Err(Error::Contract(format!(
            "gradient check of `{name}` needs a scalar function"
        )));
    }
    out.backward()?;
    let mut report = GradCheckReport {
        name: name.to_string(),
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        probes: 0,
        worst: None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e37);
    for (ii, leaf) in leaves.iter().enumerate() {
        let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]);
        let n = leaf.numel();
        let coords: Vec<usize> = match opts.max_probes {
            Some(k) if k < n => rand::seq::index::sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for idx in coords {
            let mut eval = |delta: f64| -> Result<f64> {
                let mut data = leaf.to_vec();
                data[idx] += delta;
                let probe: Vec<Tensor<f64>> = leaves
                    .iter()
                    .enumerate()
                    .map(|(j, t)| {
                        if j == ii {
                            Tensor::new(data.clone(), t.shape()).expect("same shape")
                        } else {
                            t.detach()
                        }
                    })
                    .collect();
                f(&probe)?.item()
            };
            let numeric = (eval(opts.step)? - eval(-opts.step)?) / (2.0 * opts.step);
            let a = analytic[idx];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(opts.floor);
            report.probes += 1;
            report.max_abs_err = report.max_abs_err.max(abs);
            if rel > report.max_rel_err || report.worst.is_none() {
                if rel >= report.max_rel_err {
                    report.worst = Some((ii, idx));
                }
                report.max_rel_err = report.max_rel_err.max(rel);
            }
        }
    }
    Ok(report)
}

/// Scalar projection `Σ out ⊙ r` with a fixed random `r`, so that symmetric
/// errors in the output gradient cannot cancel.
pub fn random_projection(out: &Tensor<f64>, seed: u64) -> Result<Tensor<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = Tensor::<f64>::randn(out.shape(), 1.0, &mut rng);
    Ok(out.mul(&r)?.sum())
}
