//! EMA teacher: Δ ← τΔ + (1−τ)θ with a linearly warmed momentum.

use std::collections::BTreeMap;

use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::FilsError;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmaSchedule {
    pub tau0: f64,
    pub tau_e: f64,
    /// Updates over which τ ramps from `tau0` to `tau_e`.
    pub tau_n: u64,
}

impl EmaSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.tau0 && self.tau0 <= self.tau_e && self.tau_e <= 1.0) {
            return Err(FilsError::Config(format!(
                "[ema] need 0 <= tau0 <= tau_e <= 1, got tau0={} tau_e={}",
                self.tau0, self.tau_e
            )));
        }
        if self.tau_n == 0 {
            return Err(FilsError::Config("[ema] tau_n must be >= 1".into()));
        }
        Ok(())
    }
}

pub fn tau_at(step: u64, s: &EmaSchedule) -> f64 {
    if step < s.tau_n {
        s.tau0 + (s.tau_e - s.tau0) * step as f64 / s.tau_n as f64
    } else {
        s.tau_e
    }
}

fn mix(delta: &Tensor, theta: &Tensor, tau: f64) -> Result<Tensor> {
    Ok((delta.affine(tau, 0.0)? + theta.affine(1.0 - tau, 0.0)?)?)
}

/// In-place EMA over two parameter tables whose names agree after the given
/// prefixes are swapped (`teacher_prefix.x` ↔ `student_prefix.x`).
pub fn ema_update_prefixed(
    teacher: &BTreeMap<String, Var>,
    teacher_prefix: &str,
    student: &BTreeMap<String, Var>,
    student_prefix: &str,
    tau: f64,
) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(FilsError::InvalidArgument(format!("tau must be in [0, 1], got {tau}")));
    }
    let student_count = student.keys().filter(|k| k.starts_with(student_prefix)).count();
    if student_count != teacher.len() {
        return Err(FilsError::Shape(format!(
            "teacher has {} tensors, student has {student_count}",
            teacher.len()
        )));
    }
    let mut pairs = Vec::with_capacity(teacher.len());
    for (name, delta) in teacher {
        let rest = name
            .strip_prefix(teacher_prefix)
            .ok_or_else(|| FilsError::Shape(format!("teacher tensor {name} lacks prefix {teacher_prefix:?}")))?;
        let sname = format!("{student_prefix}{rest}");
        let theta = student
            .get(&sname)
            .ok_or_else(|| FilsError::Shape(format!("student has no tensor {sname}")))?;
        if delta.shape() != theta.shape() {
            return Err(FilsError::Shape(format!(
                "{name} {:?} vs {sname} {:?}",
                delta.shape(),
                theta.shape()
            )));
        }
        pairs.push((delta, theta));
    }
    for (delta, theta) in pairs {
        let next = mix(delta.as_tensor(), theta.as_tensor(), tau)?;
        delta.set(&next)?;
    }
    Ok(())
}

/// EMA over two identically keyed tables.
pub fn ema_update(teacher: &BTreeMap<String, Var>, student: &BTreeMap<String, Var>, tau: f64) -> Result<()> {
    ema_update_prefixed(teacher, "", student, "", tau)
}
