use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::UsageError;

/// Reads a TOML config, or the defaults when no file is given.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = std::fs::read_to_string(path)
        .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| UsageError(format!("invalid config {}: {e}", path.display())).into())
}

/// Output directory that records what was written into it.
pub struct OutDir {
    root: PathBuf,
    command: &'static str,
    files: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path, command: &'static str) -> Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self { root: root.to_path_buf(), command, files: Vec::new() })
    }

    /// Path for `name`, registered in the manifest.
    pub fn file(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.file(name);
        std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, &(serde_json::to_string_pretty(value)? + "\n"))
    }

    pub fn write_config<T: Serialize>(&mut self, config: &T) -> Result<()> {
        self.write("config.toml", &toml::to_string(config).context("serializing config")?)
    }

    pub fn finish(mut self) -> Result<()> {
        self.files.push("manifest.json".into());
        let manifest = serde_json::json!({ "command": self.command, "files": self.files });
        let path = self.root.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }
}
