//! Command-line dispatch. Exit codes: 0 success, 1 usage error (bad flags,
//! missing input files), 2 runtime failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::action_area::action_area_for_clip;
use crate::config::FilsConfig;
use crate::eval::{probe_dataset, save_heatmap_png, save_mask_png, similarity_heatmap, FilsModel, ProbeMode};
use crate::synthgen::{find_clip, generate_dataset};
use crate::train::pretrain;
use crate::Result;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

/// Pixels per patch side in written PNGs.
const PNG_SCALE: u32 = 16;

#[derive(Debug, Parser)]
#[command(
    name = "fils",
    version,
    about = "Video feature prediction in a language-aligned space"
)]
pub struct Cli {
    /// Override the seed everywhere (config seed, probe seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic dataset described by `[data]`.
    GenerateData {
        #[arg(long)]
        config: PathBuf,
        /// Overwrite an existing dataset.
        #[arg(long)]
        force: bool,
    },
    /// Pretrain per the config; writes a checkpoint and metrics under `[train] out_dir`.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        /// Continue from `out_dir/checkpoint.safetensors`.
        #[arg(long)]
        resume: bool,
    },
    /// Linear-probe or finetune a checkpoint on a dataset's train/val splits.
    Probe {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        mode: ProbeMode,
        /// Report path; defaults to `probe-<mode>-seed<seed>.json` next to the checkpoint.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Text-to-patch similarity heatmap for one clip.
    Heatmap {
        #[arg(long)]
        ckpt: PathBuf,
        /// Manifest id, e.g. `val/000003`.
        #[arg(long)]
        clip: String,
        #[arg(long)]
        text: String,
        #[arg(long)]
        out: PathBuf,
        /// Dataset directory; defaults to the checkpoint config's `[data] dir`.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Detected action area of one clip.
    Actarea {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        clip: String,
        /// Optional mask PNG.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fast invariant suite.
    Selftest,
}

enum Failure {
    Usage(String),
    Runtime(crate::FilsError),
}

impl From<crate::FilsError> for Failure {
    fn from(e: crate::FilsError) -> Self {
        Failure::Runtime(e)
    }
}

fn require(path: &Path, what: &str) -> std::result::Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{what} not found: {}", path.display())))
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> std::result::Result<FilsConfig, Failure> {
    require(path, "config file")?;
    let mut cfg = FilsConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn json_pretty<T: serde::Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)?)
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| crate::FilsError::io(dir, e))?;
    }
    std::fs::write(path, body).map_err(|e| crate::FilsError::io(path, e))
}

fn run(cli: Cli) -> std::result::Result<(), Failure> {
    match cli.command {
        Command::GenerateData { config, force } => {
            let cfg = load_config(&config, cli.seed)?;
            for m in generate_dataset(&cfg.data, cfg.seed, &cfg.data.dir, force)? {
                println!(
                    "{}: {} clips, config hash {}",
                    m.split.name(),
                    m.clip_count,
                    m.config_hash
                );
            }
        }
        Command::Pretrain { config, resume } => {
            let cfg = load_config(&config, cli.seed)?;
            let ckpt = pretrain(&cfg, resume)?;
            println!("checkpoint {}", ckpt.display());
        }
        Command::Probe {
            ckpt,
            data,
            mode,
            report,
        } => {
            require(&ckpt, "checkpoint")?;
            require(&data, "dataset directory")?;
            let model = FilsModel::load(&ckpt)?;
            let seed = cli.seed.unwrap_or(model.cfg.seed);
            let result = probe_dataset(&model, &data, mode, seed)?;
            let report = report.unwrap_or_else(|| {
                let name = format!("probe-{}-seed{seed}.json", json_mode(mode));
                ckpt.parent().unwrap_or(Path::new(".")).join(name)
            });
            write_file(&report, &json_pretty(&result)?)?;
            print!("{}", result.table());
            println!("report {}", report.display());
        }
        Command::Heatmap {
            ckpt,
            clip,
            text,
            out,
            data,
        } => {
            require(&ckpt, "checkpoint")?;
            let model = FilsModel::load(&ckpt)?;
            let dir = data.unwrap_or_else(|| model.cfg.data.dir.clone());
            let c = find_clip(&dir, &clip)?;
            let h = similarity_heatmap(&model, &c, &clip, &text, model.cfg.heatmap.smooth_sigma)?;
            save_heatmap_png(&h, &out, PNG_SCALE)?;
            write_file(&out.with_extension("json"), &json_pretty(&h)?)?;
            for row in h.values.rows() {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:.2}")).collect();
                println!("{}", cells.join(" "));
            }
            println!("heatmap {}", out.display());
        }
        Command::Actarea { config, clip, out } => {
            let cfg = load_config(&config, cli.seed)?;
            let c = find_clip(&cfg.data.dir, &clip)?;
            let area = action_area_for_clip(&c, cfg.patch, &cfg.action_area)?;
            for row in area.mask().rows() {
                let cells: String = row.iter().map(|&b| if b { '#' } else { '.' }).collect();
                println!("{cells}");
            }
            println!(
                "{} of {} patches{}",
                area.len(),
                area.scores.len(),
                if area.fallback {
                    " (no motion, fell back to all)"
                } else {
                    ""
                }
            );
            if let Some(p) = out {
                save_mask_png(&area.mask(), &p, PNG_SCALE)?;
            }
        }
        Command::Selftest => {
            let checks = crate::selftest::run();
            for c in &checks {
                println!("[{}] {}: {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            if failed > 0 {
                return Err(Failure::Runtime(crate::FilsError::InvalidArgument(format!(
                    "{failed} selftest check(s) failed"
                ))));
            }
            println!("selftest passed ({} checks)", checks.len());
        }
    }
    Ok(())
}

fn json_mode(m: ProbeMode) -> &'static str {
    match m {
        ProbeMode::LinearProbe => "linear-probe",
        ProbeMode::Finetune => "finetune",
    }
}

/// Parse and run; returns the process exit code.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_subcommand_is_a_usage_error() {
        assert_eq!(dispatch(["fils", "frobnicate"]), EXIT_USAGE);
        assert_eq!(
            dispatch(["fils", "pretrain", "--config", "x.toml", "--bogus"]),
            EXIT_USAGE
        );
    }

    #[test]
    fn missing_config_is_a_usage_error() {
        assert_eq!(
            dispatch(["fils", "pretrain", "--config", "/nonexistent/fils.toml"]),
            EXIT_USAGE
        );
    }

    #[test]
    fn help_exits_cleanly() {
        assert_eq!(dispatch(["fils", "--help"]), EXIT_OK);
    }
}
