//! Layered settings: command-line flags, then environment, then the config
//! file, then built-in defaults.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use emoevent_core::clock::Clock;
use emoevent_core::gateway::{CompletionParams, Gateway, HttpProvider, MockConfig, MockProvider, ProviderConfig, RetryPolicy};

use crate::GlobalArgs;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub provider: Option<ProviderConfig>,
    #[serde(default)]
    pub mock: MockSection,
    #[serde(default)]
    pub filter: FilterSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockSection {
    pub unique: Option<usize>,
    pub duplicates: Option<usize>,
    pub garbage: Option<usize>,
    pub blanks: Option<usize>,
    pub neutral_rate: Option<f64>,
    pub answer_book: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    pub samples_per_indicator: Option<usize>,
    pub recall_floor: Option<f64>,
}

pub struct Settings {
    pub seed: u64,
    pub dry_run: bool,
    pub clock: Clock,
    pub mock: bool,
    mock_answers: Option<PathBuf>,
    pub file: FileConfig,
    /// Directory relative paths in the config file are resolved against.
    file_dir: PathBuf,
}

impl Settings {
    pub fn resolve(global: &GlobalArgs) -> Result<Self> {
        let (file, file_dir) = match &global.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config file {}", path.display()))?;
                let file: FileConfig =
                    toml::from_str(&text).with_context(|| format!("parsing config file {}", path.display()))?;
                let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
                (file, dir)
            }
            None => (FileConfig::default(), PathBuf::new()),
        };
        Ok(Settings {
            seed: global.seed.or(file.seed).unwrap_or(0),
            dry_run: global.dry_run,
            clock: match &global.frozen_time {
                Some(ts) => Clock::Frozen(ts.clone()),
                None => Clock::System,
            },
            mock: global.mock,
            mock_answers: global.mock_answers.clone(),
            file,
            file_dir,
        })
    }

    fn mock_config(&self) -> MockConfig {
        let d = MockConfig::default();
        let m = &self.file.mock;
        MockConfig {
            unique: m.unique.unwrap_or(d.unique),
            duplicates: m.duplicates.unwrap_or(d.duplicates),
            garbage: m.garbage.unwrap_or(d.garbage),
            blanks: m.blanks.unwrap_or(d.blanks),
            neutral_rate: m.neutral_rate.unwrap_or(d.neutral_rate),
        }
    }

    fn answer_book(&self) -> Option<PathBuf> {
        self.mock_answers
            .clone()
            .or_else(|| self.file.mock.answer_book.as_ref().map(|p| self.file_dir.join(p)))
    }

    pub fn params(&self) -> CompletionParams {
        match (&self.file.provider, self.mock) {
            (Some(p), false) => p.params(),
            _ => CompletionParams::default(),
        }
    }

    /// Short name of the provider that [`Settings::gateway`] would build.
    pub fn provider_label(&self) -> Result<String> {
        if self.mock {
            return Ok(format!("mock (seed {})", self.seed));
        }
        match &self.file.provider {
            Some(p) => Ok(p.endpoint.clone()),
            None => bail!("no provider configured: pass --mock or add a [provider] table to the config file"),
        }
    }

    /// The provider gateway, or `None` under `--dry-run` when it would reach
    /// the network.
    pub fn gateway(&self) -> Result<Option<Gateway>> {
        if self.mock {
            let mut provider = MockProvider::with_config(self.seed, self.mock_config());
            if let Some(path) = self.answer_book() {
                let text = std::fs::read_to_string(&path)
                    .with_context(|| format!("reading answer book {}", path.display()))?;
                provider = provider.with_answer_book(&text)?;
            }
            let gateway = Gateway::new(Arc::new(provider)).with_retry(RetryPolicy::none()).with_workers(4);
            return Ok(Some(gateway));
        }
        let Some(config) = &self.file.provider else {
            bail!("no provider configured: pass --mock or add a [provider] table to the config file");
        };
        if self.dry_run {
            return Ok(None);
        }
        let provider = HttpProvider::from_config(config)?;
        let mut gateway = Gateway::new(Arc::new(provider))
            .with_retry(config.retry())
            .with_workers(config.workers);
        if let Some(rpm) = config.requests_per_minute {
            gateway = gateway.with_rate_limit(rpm);
        }
        Ok(Some(gateway))
    }

    pub fn write(&self, path: &Path, contents: &str) -> Result<()> {
        if self.dry_run {
            tracing::info!("dry run: not writing {} bytes to {}", contents.len(), path.display());
            return Ok(());
        }
        std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
    }

    pub fn write_json<T: Serialize + ?Sized>(&self, path: &Path, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(path, &text)
    }
}
