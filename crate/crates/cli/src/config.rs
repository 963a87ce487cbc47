//! Run configuration: defaults, then an optional `key = value` file, then flags.

use std::fs;
use std::path::Path;

use vrja_core::surrogate::{CodecError, PictureShape, DEFAULT_SUITE_SEED};

use crate::CliError;

/// Picture seed, latent shape and model-suite seed shared by every command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunConfig {
    pub seed: u64,
    pub suite_seed: u64,
    pub c_y: u8,
    pub c_uv: u8,
    pub latent_height: usize,
    pub latent_width: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            suite_seed: DEFAULT_SUITE_SEED,
            c_y: 64,
            c_uv: 32,
            latent_height: 16,
            latent_width: 16,
        }
    }
}

/// Values given on the command line; `None` keeps the file or default value.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub suite_seed: Option<u64>,
    pub c_y: Option<u8>,
    pub c_uv: Option<u8>,
    pub latent_height: Option<usize>,
    pub latent_width: Option<usize>,
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    parse_int_like(value)
        .parse()
        .map_err(|e| CliError::Usage(format!("config line {line}: bad value for `{key}`: {e}")))
}

/// Accepts `0x` prefixed hexadecimal for integer keys.
fn parse_int_like(value: &str) -> String {
    match value
        .strip_prefix("0x")
        .or_else(|| value.strip_prefix("0X"))
    {
        Some(hex) => u64::from_str_radix(&hex.replace('_', ""), 16)
            .map(|v| v.to_string())
            .unwrap_or_else(|_| value.to_string()),
        None => value.to_string(),
    }
}

impl RunConfig {
    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| {
                    CliError::Usage(format!("config line {}: expected key = value", n + 1))
                })?;
            match key {
                "seed" => self.seed = parse_value(key, value, n + 1)?,
                "suite_seed" => self.suite_seed = parse_value(key, value, n + 1)?,
                "c_y" => self.c_y = parse_value(key, value, n + 1)?,
                "c_uv" => self.c_uv = parse_value(key, value, n + 1)?,
                "latent_height" => self.latent_height = parse_value(key, value, n + 1)?,
                "latent_width" => self.latent_width = parse_value(key, value, n + 1)?,
                _ => {
                    return Err(CliError::Usage(format!(
                        "config line {}: unknown key `{key}`",
                        n + 1
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn apply_overrides(&mut self, o: &Overrides) {
        self.seed = o.seed.unwrap_or(self.seed);
        self.suite_seed = o.suite_seed.unwrap_or(self.suite_seed);
        self.c_y = o.c_y.unwrap_or(self.c_y);
        self.c_uv = o.c_uv.unwrap_or(self.c_uv);
        self.latent_height = o.latent_height.unwrap_or(self.latent_height);
        self.latent_width = o.latent_width.unwrap_or(self.latent_width);
    }

    pub fn load(file: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| {
                CliError::Usage(format!("cannot read config {}: {e}", path.display()))
            })?;
            cfg.apply_text(&text)?;
        }
        cfg.apply_overrides(overrides);
        Ok(cfg)
    }

    pub fn shape(&self) -> Result<PictureShape, CliError> {
        PictureShape::from_latent(self.c_y, self.c_uv, self.latent_height, self.latent_width)
            .map_err(|e: CodecError| CliError::Usage(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_flags() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("# sweep\nseed = 9\nc_y=8 # inline\n\nlatent_width = 0x10\n")
            .unwrap();
        assert_eq!((cfg.seed, cfg.c_y, cfg.latent_width), (9, 8, 16));
        cfg.apply_overrides(&Overrides {
            seed: Some(4),
            ..Overrides::default()
        });
        assert_eq!((cfg.seed, cfg.c_y), (4, 8));
    }

    #[test]
    fn rejects_bad_lines() {
        let mut cfg = RunConfig::default();
        assert!(cfg.apply_text("seed 3").is_err());
        assert!(cfg.apply_text("colour = 3").is_err());
        assert!(cfg.apply_text("c_y = 300").is_err());
    }
}
