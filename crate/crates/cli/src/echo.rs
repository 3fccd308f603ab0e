//! Config echo files: every run records its effective settings as `key=value`
//! lines, and `saformer --config <file>` replays them.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use crate::Failure;

/// Effective settings of one run, in flag order. Keys are long flag names.
#[derive(Debug, Default)]
pub struct Echo {
    command: String,
    pairs: Vec<(String, String)>,
}

impl Echo {
    pub fn new(command: &str) -> Self {
        Echo {
            command: command.to_string(),
            pairs: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.pairs.push((key.to_string(), value.to_string()));
        self
    }

    pub fn path(&mut self, key: &str, value: &Path) -> &mut Self {
        self.set(key, value.display())
    }

    pub fn render(&self) -> String {
        let mut s = format!("command={}\n", self.command);
        for (k, v) in &self.pairs {
            s.push_str(&format!("{k}={v}\n"));
        }
        s
    }

    /// Writes the echo next to the run's primary output.
    pub fn write_beside(&self, output: &Path) -> Result<PathBuf, Failure> {
        let path = PathBuf::from(format!("{}.config", output.display()));
        fs::write(&path, self.render())
            .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}

/// Turns an echo file back into command-line arguments.
pub fn replay_args(path: &Path) -> Result<Vec<String>, Failure> {
    let text =
        fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    let mut command = None;
    let mut rest = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Failure::usage(format!(
                "{}:{}: expected key=value",
                path.display(),
                i + 1
            )));
        };
        if k == "command" {
            command = Some(v.to_string());
        } else {
            rest.push(format!("--{k}"));
            rest.push(v.to_string());
        }
    }
    let command =
        command.ok_or_else(|| Failure::usage(format!("{}: no `command=` line", path.display())))?;
    let mut args = vec!["saformer".to_string(), command];
    args.extend(rest);
    Ok(args)
}

/// Resolves an output path against `SAFORMER_OUT_DIR` when it is set and the
/// path is relative. The result is absolute in that case, so echoes replay to
/// the same location.
pub fn output_path(p: &Path) -> Result<PathBuf, Failure> {
    let Some(dir) = std::env::var_os("SAFORMER_OUT_DIR").filter(|d| !d.is_empty()) else {
        return Ok(p.to_path_buf());
    };
    if p.is_absolute() {
        return Ok(p.to_path_buf());
    }
    let dir = std::path::absolute(PathBuf::from(dir))
        .map_err(|e| Failure::usage(format!("SAFORMER_OUT_DIR: {e}")))?;
    fs::create_dir_all(&dir).map_err(|e| Failure::usage(format!("{}: {e}", dir.display())))?;
    Ok(dir.join(p))
}
