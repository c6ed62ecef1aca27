//! Attention dumps: frequency view weights, per-window connectograms of the
//! most attended view, and per-window channel energy of the input.
//!
//! Text layout (version 1), one item per line, values space-separated:
//!
//! ```text
//! dfast-attention 1
//! source <free text>
//! label <class or ->
//! k <k>
//! channels <N>
//! windows <h>
//! tau_view <tau>
//! view_channel <index>
//! probabilities <C values>
//! freq_attention <k values, or ->
//! window <i>
//! connectogram <rows> <cols>      (absent without a spatial branch)
//! <rows lines of cols values>
//! energy <N values>
//! ```

use std::fmt::Write as _;

use crate::error::{DataError, Result};
use crate::model::DFast;
use crate::ops::softmax_rows;
use crate::tensor::{keep_count, topk_mask, Tensor};

pub const EXPORT_VERSION: u32 = 1;
const HEADER: &str = "dfast-attention";

#[derive(Clone, Debug, PartialEq)]
pub struct WindowDump {
    /// `(rows, cols, row-major values)`.
    pub connectogram: Option<(usize, usize, Vec<f32>)>,
    /// Mean square of each input channel inside the window.
    pub energy: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionDump {
    pub source: String,
    pub label: Option<usize>,
    pub k: usize,
    pub channels: usize,
    pub tau_view: f64,
    pub view_channel: usize,
    pub probabilities: Vec<f32>,
    pub freq_attention: Option<Vec<f32>>,
    pub windows: Vec<WindowDump>,
}

/// Keeps the `ceil(tau * cols)` largest entries of each row (lower index on
/// ties), zeroes the rest and rescales each row to sum to 1. `tau = 1`
/// returns the input unchanged.
pub fn rethreshold(values: &[f32], cols: usize, tau: f64) -> Vec<f32> {
    if keep_count(tau, cols) == cols {
        return values.to_vec();
    }
    let rows = values.len() / cols;
    let t = Tensor::new(&[rows, cols], values.to_vec()).expect("whole rows");
    let mask = topk_mask(&t, tau);
    let mut out: Vec<f32> = values
        .iter()
        .zip(mask.data())
        .map(|(&v, &m)| if m == 0.0 { v } else { 0.0 })
        .collect();
    for row in out.chunks_mut(cols) {
        let s: f32 = row.iter().sum();
        if s > 0.0 {
            row.iter_mut().for_each(|v| *v /= s);
        }
    }
    out
}

/// Mean square per channel in each of `h` equal windows of `x` (`[N, T]`),
/// over the first `h * floor(T / h)` samples.
pub fn window_energy(x: &Tensor<f32>, h: usize) -> Vec<Vec<f32>> {
    let (n, t) = (x.shape()[0], x.shape()[1]);
    let w = t / h.max(1);
    (0..h)
        .map(|win| {
            (0..n)
                .map(|c| {
                    let s = &x.data()[c * t + win * w..c * t + (win + 1) * w];
                    (s.iter().map(|&v| v as f64 * v as f64).sum::<f64>() / w.max(1) as f64) as f32
                })
                .collect()
        })
        .collect()
}

/// Eval-mode forward on one `[N, T]` signal and extraction of its
/// attention maps.
pub fn export_attention(
    model: &DFast<f32>,
    x: &Tensor<f32>,
    tau_view: f64,
    source: impl Into<String>,
    label: Option<usize>,
) -> Result<AttentionDump> {
    let cfg = model.config();
    if !(tau_view > 0.0 && tau_view <= 1.0) {
        return Err(DataError::Invalid(format!("tau-view {tau_view} must lie in (0, 1]")).into());
    }
    if x.shape() != [cfg.channels, cfg.timepoints] {
        return Err(DataError::Invalid(format!(
            "signal has shape {:?}, the model expects [{}, {}]",
            x.shape(),
            cfg.channels,
            cfg.timepoints
        ))
        .into());
    }
    let input = x.reshape(&[1, 1, cfg.channels, cfg.timepoints])?;
    let mut s = model.session(false, 0);
    let xv = s.input(input);
    let trace = model.forward(&mut s, xv)?;
    let probabilities = softmax_rows(s.tape.value(trace.logits)).into_data();
    let freq_attention = trace.freq_attention.map(|a| s.tape.value(a).data().to_vec());
    let view_channel = freq_attention.as_ref().map_or(0, |a| {
        let mut best = 0;
        for (i, &v) in a.iter().enumerate() {
            if v > a[best] {
                best = i;
            }
        }
        best
    });
    let plan_t = model.plan().timepoints;
    let trimmed = Tensor::new(
        &[cfg.channels, plan_t],
        x.data()
            .chunks(cfg.timepoints)
            .flat_map(|row| row[..plan_t].iter().copied())
            .collect(),
    )?;
    let energy = window_energy(&trimmed, cfg.windows);
    let windows = energy
        .into_iter()
        .enumerate()
        .map(|(w, energy)| {
            let connectogram = trace.connectogram.get(w).map(|&a| {
                let v = s.tape.value(a);
                let (rows, cols) = (v.shape()[2], v.shape()[3]);
                let start = view_channel * rows * cols;
                let raw = &v.data()[start..start + rows * cols];
                (rows, cols, rethreshold(raw, cols, tau_view))
            });
            WindowDump { connectogram, energy }
        })
        .collect();
    Ok(AttentionDump {
        source: source.into(),
        label,
        k: cfg.k,
        channels: cfg.channels,
        tau_view,
        view_channel,
        probabilities,
        freq_attention,
        windows,
    })
}

fn join(v: &[f32]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

impl AttentionDump {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{HEADER} {EXPORT_VERSION}");
        let _ = writeln!(s, "source {}", self.source.replace('\n', " "));
        let _ = writeln!(s, "label {}", self.label.map_or("-".into(), |l| l.to_string()));
        let _ = writeln!(s, "k {}", self.k);
        let _ = writeln!(s, "channels {}", self.channels);
        let _ = writeln!(s, "windows {}", self.windows.len());
        let _ = writeln!(s, "tau_view {}", self.tau_view);
        let _ = writeln!(s, "view_channel {}", self.view_channel);
        let _ = writeln!(s, "probabilities {}", join(&self.probabilities));
        match &self.freq_attention {
            Some(a) => {
                let _ = writeln!(s, "freq_attention {}", join(a));
            }
            None => {
                let _ = writeln!(s, "freq_attention -");
            }
        }
        for (i, w) in self.windows.iter().enumerate() {
            let _ = writeln!(s, "window {i}");
            if let Some((rows, cols, m)) = &w.connectogram {
                let _ = writeln!(s, "connectogram {rows} {cols}");
                for row in m.chunks(*cols) {
                    let _ = writeln!(s, "{}", join(row));
                }
            }
            let _ = writeln!(s, "energy {}", join(&w.energy));
        }
        s
    }

    /// Inverse of [`AttentionDump::to_text`].
    pub fn parse(text: &str) -> Result<AttentionDump, DataError> {
        let bad = |m: String| DataError::Invalid(format!("attention dump: {m}"));
        let mut lines = text.lines();
        let mut next = |what: &str| -> Result<(String, String), DataError> {
            let line = lines.next().ok_or_else(|| bad(format!("missing {what}")))?;
            let (k, v) = line.split_once(' ').unwrap_or((line, ""));
            Ok((k.to_string(), v.to_string()))
        };
        let floats = |v: &str| -> Result<Vec<f32>, DataError> {
            v.split_whitespace()
                .map(|x| x.parse::<f32>().map_err(|_| bad(format!("{x:?} is not a number"))))
                .collect()
        };
        let count = |v: &str| -> Result<usize, DataError> { v.trim().parse().map_err(|_| bad(format!("{v:?} is not a count"))) };
        let (tag, version) = next("header")?;
        if tag != HEADER {
            return Err(bad("missing header".into()));
        }
        if version.trim() != EXPORT_VERSION.to_string() {
            return Err(bad(format!("unsupported version {version}")));
        }
        let source = next("source")?.1;
        let label = next("label")?.1;
        let label = if label == "-" { None } else { Some(count(&label)?) };
        let k = count(&next("k")?.1)?;
        let channels = count(&next("channels")?.1)?;
        let h = count(&next("windows")?.1)?;
        let tau_view: f64 = next("tau_view")?.1.parse().map_err(|_| bad("tau_view".into()))?;
        let view_channel = count(&next("view_channel")?.1)?;
        let probabilities = floats(&next("probabilities")?.1)?;
        let fa = next("freq_attention")?.1;
        let freq_attention = if fa == "-" { None } else { Some(floats(&fa)?) };
        let mut windows = Vec::with_capacity(h);
        for _ in 0..h {
            next("window")?;
            let (tag, v) = next("connectogram or energy")?;
            let (connectogram, energy_line) = if tag == "connectogram" {
                let dims: Vec<usize> = v.split_whitespace().map(count).collect::<Result<_, _>>()?;
                let (rows, cols) = match dims.as_slice() {
                    [r, c] => (*r, *c),
                    _ => return Err(bad("connectogram needs two extents".into())),
                };
                let mut m = Vec::with_capacity(rows * cols);
                for _ in 0..rows {
                    let (first, rest) = next("connectogram row")?;
                    m.extend(floats(&format!("{first} {rest}"))?);
                }
                if m.len() != rows * cols {
                    return Err(bad("ragged connectogram".into()));
                }
                (Some((rows, cols, m)), next("energy")?)
            } else {
                (None, (tag, v))
            };
            if energy_line.0 != "energy" {
                return Err(bad("missing energy".into()));
            }
            windows.push(WindowDump {
                connectogram,
                energy: floats(&energy_line.1)?,
            });
        }
        Ok(AttentionDump {
            source,
            label,
            k,
            channels,
            tau_view,
            view_channel,
            probabilities,
            freq_attention,
            windows,
        })
    }
}
