//! Service configuration: a TOML file, then environment overrides.
//!
//! ```toml
//! host = "127.0.0.1"
//! port = 8080
//! data_dir = "data"
//! library_dir = "samples"   # omit to use the built-in synthetic kit
//! static_dir = "webui/dist" # optional client bundle
//! seed = 42                 # omit for a random seed per session
//! training_mode = "incremental"
//!
//! [sampler]
//! burn_in_steps = 200
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use drumcritic::audio::synth::synth_library;
use drumcritic::session::SessionConfig;
use drumcritic::{load_library, SampleLibrary};
use serde::{Deserialize, Serialize};

use crate::error::{ServiceError, ServiceResult};

pub const ENV_PORT: &str = "DRUMCRITIC_PORT";
pub const ENV_DATA_DIR: &str = "DRUMCRITIC_DATA_DIR";

/// Parameters of the generated kit used when no `library_dir` is given.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthKit {
    pub seed: u64,
    pub per_kind: usize,
    pub harsh: usize,
}

impl Default for SynthKit {
    fn default() -> Self {
        Self {
            seed: 7,
            per_kind: 4,
            harsh: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    pub data_dir: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub library_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub static_dir: Option<PathBuf>,
    /// Fixed seed for every new session; random per session when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub synth: SynthKit,
    #[serde(flatten)]
    pub session: SessionConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            data_dir: PathBuf::from("data"),
            library_dir: None,
            static_dir: None,
            seed: None,
            synth: SynthKit::default(),
            session: SessionConfig::default(),
        }
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> ServiceResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn from_file(path: &Path) -> ServiceResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ServiceError::io(path, e))?;
        let cfg: Self =
            toml::from_str(&text).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()
            .map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    /// Read `path` (defaults when `None`), then apply environment overrides.
    pub fn load(path: Option<&Path>) -> ServiceResult<Self> {
        let mut cfg = match path {
            Some(p) => {
                let mut cfg = Self::from_file(p)?;
                cfg.resolve_relative_to(p.parent().unwrap_or(Path::new(".")));
                cfg
            }
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Relative paths in a config file are taken relative to the file.
    fn resolve_relative_to(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data_dir);
        for p in [&mut self.library_dir, &mut self.static_dir].into_iter().flatten() {
            fix(p);
        }
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> ServiceResult<()> {
        if let Some(port) = get(ENV_PORT) {
            self.port = port
                .parse()
                .map_err(|_| ServiceError::Config(format!("{ENV_PORT}={port} is not a port number")))?;
        }
        if let Some(dir) = get(ENV_DATA_DIR) {
            self.data_dir = PathBuf::from(dir);
        }
        Ok(())
    }

    pub fn validate(&self) -> ServiceResult<()> {
        if self.synth.per_kind == 0 {
            return Err(ServiceError::Config("synth.per_kind must be positive".into()));
        }
        self.session.validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn library(&self) -> ServiceResult<Arc<SampleLibrary>> {
        let lib = match &self.library_dir {
            Some(dir) => load_library(dir)?,
            None => synth_library(self.synth.seed, self.synth.per_kind, self.synth.harsh)?,
        };
        Ok(Arc::new(lib))
    }
}
