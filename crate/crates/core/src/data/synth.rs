//! Synthetic multichannel recordings with three independently switchable
//! class cues layered over pink-ish background noise.
//!
//! Channels are dealt into three interleaved groups by index modulo 3:
//! `F` (carries the oscillatory cue), `G1` and `G2` (coupled by the spatial
//! cue). With fewer than three channels every channel is in `F`, `G1` is
//! channel 0 and `G2` the last channel.
//!
//! * frequency cue: a sinusoid at `base_freq + c * freq_step` Hz on `F`,
//!   with random phase and amplitude jitter.
//! * spatial cue: a shared slow latent source added to `G1` and, scaled by
//!   a class-specific coefficient running from `+1` to `-1`, to `G2`.
//! * temporal cue: the oscillation is only present inside window
//!   `(c * 4 / C) mod 4` of four equal windows. Without the frequency cue
//!   the burst uses the common `burst_freq`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Trial};
use crate::error::DataError;
use crate::par;
use crate::tensor::Tensor;

pub const CUE_WINDOWS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cues {
    pub frequency: bool,
    pub spatial: bool,
    pub temporal: bool,
}

impl Cues {
    pub const ALL: Cues = Cues {
        frequency: true,
        spatial: true,
        temporal: true,
    };

    /// Parses a subset of `abc` (`a` frequency, `b` spatial, `c` temporal).
    /// `none` or an empty string turns every cue off.
    pub fn parse(s: &str) -> Result<Cues, DataError> {
        let mut cues = Cues {
            frequency: false,
            spatial: false,
            temporal: false,
        };
        if s.eq_ignore_ascii_case("none") {
            return Ok(cues);
        }
        for ch in s.chars() {
            match ch.to_ascii_lowercase() {
                'a' => cues.frequency = true,
                'b' => cues.spatial = true,
                'c' => cues.temporal = true,
                _ => return Err(DataError::Invalid(format!("unknown cue {ch:?}; use letters from \"abc\""))),
            }
        }
        Ok(cues)
    }

    pub fn label(&self) -> String {
        let mut s = String::new();
        for (on, c) in [(self.frequency, 'a'), (self.spatial, 'b'), (self.temporal, 'c')] {
            if on {
                s.push(c);
            }
        }
        if s.is_empty() {
            s.push_str("none");
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: usize,
    pub subjects: usize,
    pub trials_per_class: usize,
    pub channels: usize,
    pub timepoints: usize,
    pub rate: f64,
    pub cues: Cues,
    /// Share of all trials given to class 0; `None` keeps classes balanced.
    pub imbalance: Option<f64>,
    /// Cue amplitude relative to the unit-variance background.
    pub amplitude: f64,
    pub base_freq: f64,
    pub freq_step: f64,
    pub burst_freq: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            classes: 2,
            subjects: 2,
            trials_per_class: 200,
            channels: 30,
            timepoints: 440,
            rate: 128.0,
            cues: Cues::ALL,
            imbalance: None,
            amplitude: 1.0,
            base_freq: 10.0,
            freq_step: 3.0,
            burst_freq: 16.0,
            seed: 7,
        }
    }
}

const FREQ_JITTER: f64 = 0.3;
const AMP_JITTER: f64 = 0.5;
const POLES: [f64; 4] = [0.0, 0.7, 0.93, 0.99];
const POLE_WEIGHTS: [f64; 4] = [0.1, 0.2, 0.3, 0.4];
const LATENT_POLE: f64 = 0.9;

impl SynthSpec {
    pub fn class_freq(&self, c: usize) -> f64 {
        self.base_freq + c as f64 * self.freq_step
    }

    /// Window index carrying class `c`'s temporal cue.
    pub fn cue_window(&self, c: usize) -> usize {
        (c * CUE_WINDOWS / self.classes) % CUE_WINDOWS
    }

    /// Coefficient linking `G2` to the latent source for class `c`.
    pub fn coupling(&self, c: usize) -> f64 {
        if self.classes < 2 {
            1.0
        } else {
            1.0 - 2.0 * c as f64 / (self.classes - 1) as f64
        }
    }

    /// Trials per class after applying the imbalance share.
    pub fn class_sizes(&self) -> Result<Vec<usize>, DataError> {
        let c = self.classes;
        let total = c * self.trials_per_class;
        let Some(r) = self.imbalance else {
            return Ok(vec![self.trials_per_class; c]);
        };
        if !(r > 0.0 && r < 1.0) || c < 2 {
            return Err(DataError::Invalid(format!(
                "imbalance {r} must lie in (0, 1) and needs at least 2 classes"
            )));
        }
        let first = ((r * total as f64).round() as usize).clamp(1, total - (c - 1));
        let rest = total - first;
        if rest < c - 1 {
            return Err(DataError::Invalid("imbalance leaves a class without trials".into()));
        }
        let mut sizes = vec![first];
        for i in 0..c - 1 {
            sizes.push(rest / (c - 1) + usize::from(i < rest % (c - 1)));
        }
        Ok(sizes)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::Invalid(m));
        if self.classes == 0 || self.subjects == 0 || self.trials_per_class == 0 {
            return bad("classes, subjects and trials per class must be at least 1".into());
        }
        if self.channels == 0 || self.timepoints == 0 {
            return bad("channels and timepoints must be at least 1".into());
        }
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return bad(format!("sampling rate {} must be positive", self.rate));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return bad(format!("amplitude {} must be non-negative", self.amplitude));
        }
        if self.cues.temporal && self.timepoints < CUE_WINDOWS {
            return bad(format!(
                "the temporal cue needs at least {CUE_WINDOWS} timepoints, got {}",
                self.timepoints
            ));
        }
        let top = if self.cues.frequency {
            Some(self.class_freq(self.classes - 1) + FREQ_JITTER)
        } else if self.cues.temporal {
            Some(self.burst_freq)
        } else {
            None
        };
        if self.cues.frequency && self.base_freq - FREQ_JITTER <= 0.0 {
            return bad(format!("base frequency {} Hz is too low", self.base_freq));
        }
        if let Some(top) = top {
            let nyquist = self.rate / 2.0;
            if top >= nyquist {
                return bad(format!(
                    "cue frequency {top} Hz violates the Nyquist limit {nyquist} Hz at rate {}",
                    self.rate
                ));
            }
        }
        self.class_sizes()?;
        Ok(())
    }
}

struct Groups {
    f: Vec<usize>,
    g1: Vec<usize>,
    g2: Vec<usize>,
}

fn groups(n: usize) -> Groups {
    if n < 3 {
        return Groups {
            f: (0..n).collect(),
            g1: vec![0],
            g2: vec![n - 1],
        };
    }
    let pick = |r: usize| (0..n).filter(|i| i % 3 == r).collect();
    Groups {
        f: pick(0),
        g1: pick(1),
        g2: pick(2),
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Stationary AR(1) with the given pole and marginal variance.
fn ar1(rng: &mut ChaCha8Rng, pole: f64, var: f64, out: &mut [f64]) {
    let innov = (var * (1.0 - pole * pole)).sqrt();
    let mut x = var.sqrt() * normal(rng);
    for o in out.iter_mut() {
        *o += x;
        x = pole * x + innov * normal(rng);
    }
}

/// Hann-tapered indicator of `[start, start + len)`.
fn window_envelope(t: usize, start: usize, len: usize) -> Vec<f64> {
    let mut env = vec![0.0; t];
    for (i, e) in env.iter_mut().enumerate().skip(start).take(len) {
        let u = (i - start) as f64 + 0.5;
        *e = (PI * u / len as f64).sin().powi(2);
    }
    env
}

/// Deterministic in `spec.seed`; trials come out grouped by class.
pub fn synth_generate(spec: &SynthSpec) -> Result<Dataset, DataError> {
    spec.validate()?;
    let (n, t) = (spec.channels, spec.timepoints);
    let g = groups(n);
    let mut meta = ChaCha8Rng::seed_from_u64(spec.seed);
    meta.set_stream(u64::MAX);
    let gains: Vec<f64> = (0..spec.subjects).map(|_| meta.gen_range(0.75..1.25)).collect();
    let loadings: Vec<f64> = (0..n).map(|_| meta.gen_range(0.6..1.0)).collect();
    let sizes = spec.class_sizes()?;
    let mut plan = Vec::new();
    for (c, &m) in sizes.iter().enumerate() {
        for j in 0..m {
            plan.push((c, (j % spec.subjects) as u32));
        }
    }
    let trials = par::map_collect(plan.len(), |idx| {
        let (c, subject) = plan[idx];
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(idx as u64);
        let mut x = vec![0.0f64; n * t];
        for row in x.chunks_mut(t) {
            let tilt: Vec<f64> = POLE_WEIGHTS.iter().map(|w| w * rng.gen_range(0.5..1.5)).collect();
            let norm: f64 = tilt.iter().sum();
            for (&p, w) in POLES.iter().zip(&tilt) {
                ar1(&mut rng, p, w / norm, row);
            }
        }
        let amp = spec.amplitude;
        let window = (spec.cues.temporal).then(|| {
            let len = t / CUE_WINDOWS;
            window_envelope(t, spec.cue_window(c) * len, len)
        });
        if spec.cues.frequency || spec.cues.temporal {
            let freq = if spec.cues.frequency {
                spec.class_freq(c) + rng.gen_range(-FREQ_JITTER..FREQ_JITTER)
            } else {
                spec.burst_freq
            };
            let phase = rng.gen_range(0.0..2.0 * PI);
            let a = amp * rng.gen_range(1.0 - AMP_JITTER..1.0 + AMP_JITTER);
            let w = 2.0 * PI * freq / spec.rate;
            let wave: Vec<f64> = (0..t)
                .map(|i| {
                    let env = window.as_ref().map_or(1.0, |e| e[i]);
                    a * env * (w * i as f64 + phase).sin()
                })
                .collect();
            for &ch in &g.f {
                for (v, s) in x[ch * t..(ch + 1) * t].iter_mut().zip(&wave) {
                    *v += loadings[ch] * s;
                }
            }
        }
        if spec.cues.spatial {
            let mut latent = vec![0.0; t];
            ar1(&mut rng, LATENT_POLE, 1.0, &mut latent);
            let rho = spec.coupling(c);
            for (list, coef) in [(&g.g1, 1.0), (&g.g2, rho)] {
                for &ch in list.iter() {
                    for (v, s) in x[ch * t..(ch + 1) * t].iter_mut().zip(&latent) {
                        *v += amp * coef * loadings[ch] * s;
                    }
                }
            }
        }
        let gain = gains[subject as usize];
        let data = x.into_iter().map(|v| (gain * v) as f32).collect();
        Trial {
            x: Tensor::new(&[n, t], data).expect("sizes match"),
            label: c,
            subject,
        }
    });
    Dataset::new("synth", n, t, spec.classes, spec.rate, trials)
}
