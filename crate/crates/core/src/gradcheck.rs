//! Finite-difference verification of every parameter gradient.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{DFast, ModelConfig};
use crate::tensor::Tensor;

pub const GRADCHECK_STEP: f64 = 1e-4;
pub const GRADCHECK_TOLERANCE: f64 = 1e-3;
/// Denominator floor for the relative error, so gradients that are zero up
/// to rounding compare in absolute terms.
pub const GRADCHECK_FLOOR: f64 = 1e-4;
const BATCH: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl ParamCheck {
    /// Leading name component: `mva`, `dca`, `ltsa`, `adapter`,
    /// `aggregate` or `classifier`.
    pub fn module(&self) -> &str {
        self.name.split('.').next().unwrap_or(&self.name)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub params: Vec<ParamCheck>,
    pub step: f64,
    pub tolerance: f64,
    pub loss: f64,
}

impl GradcheckReport {
    /// Worst error per module, in parameter order.
    pub fn modules(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = Vec::new();
        for p in &self.params {
            match out.iter_mut().find(|(m, _)| m == p.module()) {
                Some(e) => e.1 = e.1.max(p.max_rel_err),
                None => out.push((p.module().to_string(), p.max_rel_err)),
            }
        }
        out
    }

    pub fn failures(&self) -> Vec<&ParamCheck> {
        self.params
            .iter()
            .filter(|p| p.max_rel_err.is_nan() || p.max_rel_err >= self.tolerance)
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }

    pub fn max_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let den = analytic.abs().max(numeric.abs()).max(GRADCHECK_FLOOR);
    (analytic - numeric).abs() / den
}

/// Compares backprop against central differences for every scalar of every
/// parameter of a 64-bit model built from `cfg` and `seed`, using a random
/// batch of two trials and the training-mode cross-entropy loss.
pub fn gradcheck(cfg: &ModelConfig, seed: u64) -> Result<GradcheckReport> {
    let mut model = DFast::<f64>::new(cfg.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6772_6164);
    let x = Tensor::<f64>::randn(&[BATCH, 1, cfg.channels, cfg.timepoints], &mut rng);
    let labels: Vec<usize> = (0..BATCH).map(|i| i % cfg.classes).collect();

    let loss_of = |m: &DFast<f64>| -> Result<f64> {
        let mut s = m.session(true, seed);
        let xv = s.input(x.clone());
        let trace = m.forward(&mut s, xv)?;
        let loss = s.tape.cross_entropy(trace.logits, &labels)?;
        Ok(s.tape.value(loss).data()[0])
    };

    let (loss, analytic) = {
        let mut s = model.session(true, seed);
        let xv = s.input(x.clone());
        let trace = model.forward(&mut s, xv)?;
        let loss = s.tape.cross_entropy(trace.logits, &labels)?;
        let value = s.tape.value(loss).data()[0];
        let mut g = s.tape.backward(loss)?;
        (value, s.param_grads(&mut g))
    };

    let h = GRADCHECK_STEP;
    let mut params = Vec::with_capacity(analytic.len());
    for (p, grad) in analytic.iter().enumerate() {
        let name = model.store().params()[p].name.clone();
        let mut check = ParamCheck {
            name,
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in 0..grad.len() {
            let orig = model.store().params()[p].value.data()[i];
            model.store_mut().params_mut()[p].value.data_mut()[i] = orig + h;
            let up = loss_of(&model)?;
            model.store_mut().params_mut()[p].value.data_mut()[i] = orig - h;
            let down = loss_of(&model)?;
            model.store_mut().params_mut()[p].value.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = grad.data()[i];
            let err = relative_error(a, numeric);
            if err > check.max_rel_err || err.is_nan() {
                check.max_rel_err = err;
                check.worst_index = i;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        params.push(check);
    }
    Ok(GradcheckReport {
        params,
        step: h,
        tolerance: GRADCHECK_TOLERANCE,
        loss,
    })
}
