//! `pool.cfg`: one `[model.<id>]` section per pool member.
//!
//! ```text
//! [model.3]
//! kind = perturbed_oracle
//! jitter = 1.5
//! sensitivity = 0.8
//! label_noise = 0
//! run = 0
//! checkpoint = 3
//! validation_dice = 0.91
//!
//! [model.9]
//! kind = external
//! command = python3 backend.py --prototypes p.csv
//! timeout_s = 30
//! ```
//!
//! `kind` is one of oracle, perturbed_oracle, curve_matching, uniform and
//! external; `validation_dice` is optional. Curve-matching members take `prototypes` (a 3-row CSV, default: the
//! phantom class curves), `temperature` and `reference` (`none` or a level).

use std::path::Path;
use std::time::Duration;

use daugs_core::segmenters::{CurveMatchParams, ExternalParams, PerturbParams, SegmenterKind, SegmenterSpec};
use daugs_core::synth::PhantomSpec;
use ini::Properties;

use crate::CliError;

fn usage(msg: String) -> CliError {
    CliError::Usage(msg)
}

fn num<T: std::str::FromStr>(p: &Properties, id: u32, key: &str) -> Result<Option<T>, CliError> {
    p.get(key)
        .map(|v| v.trim().parse().map_err(|_| usage(format!("pool model {id}: {key} = {v:?} is not a number"))))
        .transpose()
}

fn check_keys(p: &Properties, id: u32, allowed: &[&str]) -> Result<(), CliError> {
    for (k, _) in p.iter() {
        if !allowed.contains(&k) && !["kind", "run", "checkpoint", "validation_dice"].contains(&k) {
            return Err(usage(format!("pool model {id}: unknown key {k:?}")));
        }
    }
    Ok(())
}

pub fn external(model_id: u32, command: &str, timeout_s: f64) -> Result<SegmenterSpec, CliError> {
    let argv = shlex::split(command)
        .filter(|a| !a.is_empty())
        .ok_or_else(|| usage(format!("backend command {command:?} is empty or has unbalanced quotes")))?;
    Ok(SegmenterSpec::new(
        model_id,
        SegmenterKind::External(ExternalParams { command: argv, timeout: Duration::from_secs_f64(timeout_s) }),
    ))
}

/// Members in ascending model id. Relative prototype paths resolve against
/// the config file's directory.
pub fn read_pool(path: &Path, default_timeout_s: f64) -> Result<Vec<SegmenterSpec>, CliError> {
    let ini = crate::load_ini(path).map_err(|e| usage(format!("cannot read pool config {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (section, p) in ini.iter() {
        let Some(section) = section else {
            if p.iter().next().is_some() {
                return Err(usage("pool config keys must sit inside [model.<id>] sections".into()));
            }
            continue;
        };
        let id: u32 = section
            .strip_prefix("model.")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| usage(format!("pool config section [{section}] is not [model.<id>]")))?;
        let kind = p.get("kind").ok_or_else(|| usage(format!("pool model {id}: missing kind")))?;
        let kind = match kind.trim() {
            "oracle" => {
                check_keys(p, id, &[])?;
                SegmenterKind::Oracle
            }
            "uniform" => {
                check_keys(p, id, &[])?;
                SegmenterKind::Uniform
            }
            "perturbed_oracle" => {
                check_keys(p, id, &["jitter", "sensitivity", "label_noise"])?;
                SegmenterKind::PerturbedOracle(PerturbParams {
                    boundary_jitter_px: num(p, id, "jitter")?.unwrap_or(0.0),
                    label_noise_rate: num(p, id, "label_noise")?.unwrap_or(0.0),
                    shift_sensitivity: num(p, id, "sensitivity")?.unwrap_or(0.0),
                })
            }
            "curve_matching" => {
                check_keys(p, id, &["prototypes", "temperature", "reference"])?;
                let prototypes = match p.get("prototypes") {
                    Some(f) => CurveMatchParams::read_prototypes(&base.join(f.trim()))?,
                    None => PhantomSpec::default().class_curves(),
                };
                let reference_level = match p.get("reference").map(str::trim) {
                    None | Some("none") => None,
                    Some(v) => Some(v.parse().map_err(|_| usage(format!("pool model {id}: reference = {v:?}")))?),
                };
                SegmenterKind::CurveMatching(CurveMatchParams {
                    prototypes,
                    temperature: num(p, id, "temperature")?.unwrap_or(0.05),
                    reference_level,
                })
            }
            "external" => {
                check_keys(p, id, &["command", "timeout_s"])?;
                let cmd = p.get("command").ok_or_else(|| usage(format!("pool model {id}: missing command")))?;
                external(id, cmd, num(p, id, "timeout_s")?.unwrap_or(default_timeout_s))?.kind
            }
            other => return Err(usage(format!("pool model {id}: unknown kind {other:?}"))),
        };
        let spec = SegmenterSpec {
            model_id: id,
            kind,
            run_id: num(p, id, "run")?,
            checkpoint_id: num(p, id, "checkpoint")?,
            validation_dice: num(p, id, "validation_dice")?,
        };
        spec.validate().map_err(|e| usage(format!("pool model {id}: {e}")))?;
        out.push(spec);
    }
    out.sort_by_key(|s| s.model_id);
    if let Some(w) = out.windows(2).find(|w| w[0].model_id == w[1].model_id) {
        return Err(usage(format!("pool config repeats model {}", w[0].model_id)));
    }
    if out.is_empty() {
        return Err(usage(format!("pool config {} has no models", path.display())));
    }
    Ok(out)
}

/// Writes `specs` in the format [`read_pool`] reads. External commands are
/// joined with shell quoting; curve-matching prototypes are not written.
pub fn write_pool(specs: &[SegmenterSpec]) -> String {
    let mut s = String::new();
    for spec in specs {
        s.push_str(&format!("[model.{}]\nkind = {}\n", spec.model_id, spec.kind.name()));
        match &spec.kind {
            SegmenterKind::PerturbedOracle(p) => s.push_str(&format!(
                "jitter = {}\nsensitivity = {}\nlabel_noise = {}\n",
                p.boundary_jitter_px, p.shift_sensitivity, p.label_noise_rate
            )),
            SegmenterKind::CurveMatching(c) => {
                s.push_str(&format!("temperature = {}\n", c.temperature));
                if let Some(r) = c.reference_level {
                    s.push_str(&format!("reference = {r}\n"));
                }
            }
            SegmenterKind::External(e) => {
                let cmd = shlex::try_join(e.command.iter().map(String::as_str)).unwrap_or_else(|_| e.command.join(" "));
                s.push_str(&format!("command = {cmd}\ntimeout_s = {}\n", e.timeout.as_secs_f64()));
            }
            SegmenterKind::Oracle | SegmenterKind::Uniform => {}
        }
        if let Some(r) = spec.run_id {
            s.push_str(&format!("run = {r}\n"));
        }
        if let Some(c) = spec.checkpoint_id {
            s.push_str(&format!("checkpoint = {c}\n"));
        }
        if let Some(d) = spec.validation_dice {
            s.push_str(&format!("validation_dice = {d}\n"));
        }
        s.push('\n');
    }
    s
}
