//! Per-epoch training monitors and their CSV form.

use std::fmt::Write as _;
use std::path::Path;

use crate::autodiff::Real;
use crate::data::{sequential, Example};
use crate::error::Result;
use crate::fsutil;
use crate::nn::Model;

pub const MONITOR_HEADER: &str = "epoch,train_loss,val_top1_mode0,val_top1_mode1,\
mean_h_branch0,mean_h_branch1,assign_acc_mode0,assign_acc_mode1";

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_top1: f64,
    /// Indexed by mode; `None` when the mode is absent from val.
    pub val_top1_per_mode: Vec<Option<f64>>,
    /// Mean policy weight per branch (AMF).
    pub mean_h: Option<Vec<f64>>,
    /// Assignment accuracy per mode (AMF with one branch per mode).
    pub assign_per_mode: Option<Vec<f64>>,
    pub assign_overall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MonitorTrace {
    pub records: Vec<MonitorRecord>,
    /// `(epoch, message)` pairs, e.g. dead-policy detections.
    pub warnings: Vec<(usize, String)>,
}

impl MonitorTrace {
    pub fn best_val_top1(&self) -> Option<(usize, f64)> {
        self.records
            .iter()
            .fold(None, |best: Option<(usize, f64)>, r| match best {
                Some((_, b)) if b >= r.val_top1 => best,
                _ => Some((r.epoch, r.val_top1)),
            })
    }

    pub fn to_csv(&self) -> String {
        let extra_branches = self
            .records
            .iter()
            .filter_map(|r| r.mean_h.as_ref().map(Vec::len))
            .max()
            .unwrap_or(0)
            .saturating_sub(2);
        let mut out = String::from(MONITOR_HEADER);
        for i in 0..extra_branches {
            let _ = write!(out, ",mean_h_branch{}", i + 2);
        }
        out.push('\n');
        for r in &self.records {
            let opt = |v: Option<f64>| v.map(fmt_g6).unwrap_or_default();
            let mode = |i: usize| opt(r.val_top1_per_mode.get(i).copied().flatten());
            let h = |i: usize| opt(r.mean_h.as_ref().and_then(|h| h.get(i).copied()));
            let a = |i: usize| opt(r.assign_per_mode.as_ref().and_then(|a| a.get(i).copied()));
            let _ = write!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.epoch,
                fmt_g6(r.train_loss),
                mode(0),
                mode(1),
                h(0),
                h(1),
                a(0),
                a(1)
            );
            for i in 0..extra_branches {
                let _ = write!(out, ",{}", h(i + 2));
            }
            out.push('\n');
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, self.to_csv().as_bytes())
    }
}

/// Six significant digits, `%g` style: fixed notation for exponents in
/// `[-4, 6)`, scientific otherwise, trailing zeros trimmed.
pub fn fmt_g6(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: String| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    };
    if (-4..6).contains(&exp) {
        trim(format!("{v:.*}", (5 - exp) as usize))
    } else {
        let m = trim(mantissa.to_string());
        format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

/// CSV of classifier inputs (`n·d` columns) followed by label and mode.
pub fn latents_csv<T: Real>(model: &Model<T>, examples: &[Example]) -> Result<String> {
    let width = model.config().branch_count() * model.config().latent;
    let mut out = String::new();
    for j in 0..width {
        let _ = write!(out, "f{j},");
    }
    out.push_str("label,mode\n");
    for batch in sequential(examples, 128)? {
        let pred = model.predict(&batch.images.cast())?;
        for s in 0..batch.len() {
            for v in pred.fused.row(s) {
                out.push_str(&fmt_g6(v.to_f64()));
                out.push(',');
            }
            let _ = writeln!(out, "{},{}", batch.labels[s], batch.modes[s]);
        }
    }
    Ok(out)
}

pub fn export_latents<T: Real>(model: &Model<T>, examples: &[Example], path: &Path) -> Result<()> {
    fsutil::write_atomic(path, latents_csv(model, examples)?.as_bytes())
}
