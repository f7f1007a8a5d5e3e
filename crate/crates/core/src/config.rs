//! Pipeline configuration and its flat `key = value` file format.
//!
//! Grammar: one `key = value` pair per line; blank lines and lines starting
//! with `#` are ignored; values may be wrapped in double quotes. Unknown keys
//! are rejected. Precedence when resolving: command-line flag, then config
//! file, then built-in default.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decomposer::{ChatEndpointConfig, ContentMode, DEFAULT_TEMPERATURE};
use crate::error::{Error, Result};
use crate::frame_select::uniform_count;
use crate::token_compress::{check_open_unit, CompressionParams, DEFAULT_BETA, DEFAULT_TAU};

pub const DEFAULT_ALPHA: f64 = 0.85;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndpointSettings {
    pub base_url: String,
    pub model: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    /// Decomposition temperature.
    pub temperature: f64,
    /// Frames to select. No default; must be given.
    pub n_frames: Option<usize>,
    pub max_subquestions: Option<usize>,
    pub content_mode: ContentMode,
    /// Built-in template name or path to a template file.
    pub template: String,
    pub max_patch_distance: Option<usize>,
    /// Concurrent sub-question calls.
    pub concurrency: usize,
    pub chat: EndpointSettings,
    pub qa: EndpointSettings,
    /// Sampling temperature of the video-QA endpoint.
    pub qa_temperature: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            tau: DEFAULT_TAU,
            temperature: DEFAULT_TEMPERATURE,
            n_frames: None,
            max_subquestions: None,
            content_mode: ContentMode::SubAnswers,
            template: "default".into(),
            max_patch_distance: None,
            concurrency: 4,
            chat: EndpointSettings {
                base_url: "https://api.openai.com/v1".into(),
                model: "gpt-3.5-turbo-0125".into(),
                timeout_secs: 60.0,
                max_retries: 2,
            },
            qa: EndpointSettings {
                base_url: "http://127.0.0.1:8000/v1".into(),
                model: "llava-next-7b".into(),
                timeout_secs: 120.0,
                max_retries: 2,
            },
            qa_temperature: 0.0,
        }
    }
}

/// A partial configuration; every `Some` field overrides the layer below it.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigOverrides {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub tau: Option<f64>,
    pub temperature: Option<f64>,
    pub n_frames: Option<usize>,
    pub max_subquestions: Option<usize>,
    pub content_mode: Option<ContentMode>,
    pub template: Option<String>,
    pub max_patch_distance: Option<usize>,
    pub concurrency: Option<usize>,
    pub chat_base_url: Option<String>,
    pub chat_model: Option<String>,
    pub chat_timeout_secs: Option<f64>,
    pub chat_max_retries: Option<u32>,
    pub qa_base_url: Option<String>,
    pub qa_model: Option<String>,
    pub qa_timeout_secs: Option<f64>,
    pub qa_max_retries: Option<u32>,
    pub qa_temperature: Option<f64>,
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| Error::config(key, format!("cannot parse `{value}`: {e}")))
}

impl ConfigOverrides {
    /// Parses the flat key-value grammar.
    pub fn parse(text: &str) -> Result<Self> {
        let mut o = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}", lineno + 1), format!("expected `key = value`, got `{line}`"))
            })?;
            let key = key.trim();
            let value = value.trim();
            let value = value
                .strip_prefix('"')
                .and_then(|v| v.strip_suffix('"'))
                .unwrap_or(value);
            o.set(key, value)?;
        }
        Ok(o)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "alpha" => self.alpha = Some(parse_value(key, value)?),
            "beta" => self.beta = Some(parse_value(key, value)?),
            "tau" => self.tau = Some(parse_value(key, value)?),
            "temperature" => self.temperature = Some(parse_value(key, value)?),
            "n_frames" => self.n_frames = Some(parse_value(key, value)?),
            "max_subquestions" => self.max_subquestions = Some(parse_value(key, value)?),
            "content_mode" => self.content_mode = Some(parse_value(key, value)?),
            "template" => self.template = Some(value.to_string()),
            "max_patch_distance" => self.max_patch_distance = Some(parse_value(key, value)?),
            "concurrency" => self.concurrency = Some(parse_value(key, value)?),
            "chat_base_url" => self.chat_base_url = Some(value.to_string()),
            "chat_model" => self.chat_model = Some(value.to_string()),
            "chat_timeout_secs" => self.chat_timeout_secs = Some(parse_value(key, value)?),
            "chat_max_retries" => self.chat_max_retries = Some(parse_value(key, value)?),
            "qa_base_url" => self.qa_base_url = Some(value.to_string()),
            "qa_model" => self.qa_model = Some(value.to_string()),
            "qa_timeout_secs" => self.qa_timeout_secs = Some(parse_value(key, value)?),
            "qa_max_retries" => self.qa_max_retries = Some(parse_value(key, value)?),
            "qa_temperature" => self.qa_temperature = Some(parse_value(key, value)?),
            other => return Err(Error::config(other, "unknown configuration key")),
        }
        Ok(())
    }

    pub fn apply_to(&self, c: &mut PipelineConfig) {
        macro_rules! take {
            ($($src:ident => $($dst:ident).+),* $(,)?) => {
                $( if let Some(v) = &self.$src { c.$($dst).+ = v.clone().into(); } )*
            };
        }
        take!(
            alpha => alpha,
            beta => beta,
            tau => tau,
            temperature => temperature,
            n_frames => n_frames,
            max_subquestions => max_subquestions,
            content_mode => content_mode,
            template => template,
            max_patch_distance => max_patch_distance,
            concurrency => concurrency,
            chat_base_url => chat.base_url,
            chat_model => chat.model,
            chat_timeout_secs => chat.timeout_secs,
            chat_max_retries => chat.max_retries,
            qa_base_url => qa.base_url,
            qa_model => qa.model,
            qa_timeout_secs => qa.timeout_secs,
            qa_max_retries => qa.max_retries,
            qa_temperature => qa_temperature,
        );
    }
}

impl PipelineConfig {
    /// Defaults, overlaid by the file layer, overlaid by the flag layer, then validated.
    pub fn resolve(file: Option<&ConfigOverrides>, flags: &ConfigOverrides) -> Result<Self> {
        let mut c = Self::default();
        if let Some(f) = file {
            f.apply_to(&mut c);
        }
        flags.apply_to(&mut c);
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        check_open_unit("alpha", self.alpha)?;
        check_open_unit("beta", self.beta)?;
        check_open_unit("tau", self.tau)?;
        for (name, t) in [("temperature", self.temperature), ("qa_temperature", self.qa_temperature)] {
            if !(0.0..=2.0).contains(&t) {
                return Err(Error::config(name, format!("must lie in [0, 2], got {t}")));
            }
        }
        if self.n_frames == Some(0) {
            return Err(Error::config("n_frames", "must be >= 1"));
        }
        if self.concurrency == 0 {
            return Err(Error::config("concurrency", "must be >= 1"));
        }
        for (name, s) in [("chat_timeout_secs", &self.chat), ("qa_timeout_secs", &self.qa)] {
            if !(s.timeout_secs > 0.0 && s.timeout_secs.is_finite()) {
                return Err(Error::config(name, "must be positive"));
            }
        }
        Ok(())
    }

    /// `n_frames`, or a configuration error when it was never given.
    pub fn require_n_frames(&self) -> Result<usize> {
        self.n_frames
            .ok_or_else(|| Error::config("n_frames", "required: pass --n-frames or set n_frames in the config file"))
    }

    /// `floor(alpha * N)` for the configured `N`.
    pub fn uniform_frames(&self) -> Result<usize> {
        Ok(uniform_count(self.require_n_frames()?, self.alpha))
    }

    pub fn compression(&self) -> CompressionParams {
        CompressionParams {
            beta: self.beta,
            tau: self.tau,
            max_patch_distance: self.max_patch_distance,
        }
    }

    fn endpoint(s: &EndpointSettings, temperature: f64) -> ChatEndpointConfig {
        ChatEndpointConfig {
            timeout_secs: s.timeout_secs,
            max_retries: s.max_retries,
            temperature,
            ..ChatEndpointConfig::new(&s.base_url, &s.model)
        }
        .with_env_key()
    }

    pub fn chat_endpoint(&self) -> ChatEndpointConfig {
        Self::endpoint(&self.chat, self.temperature)
    }

    pub fn qa_endpoint(&self) -> ChatEndpointConfig {
        Self::endpoint(&self.qa, self.qa_temperature)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = PipelineConfig::default();
        assert_eq!((c.alpha, c.beta, c.tau, c.temperature), (0.85, 0.625, 0.9, 0.5));
        assert_eq!(c.n_frames, None);
        assert!(c.require_n_frames().is_err());
    }

    #[test]
    fn parse_grammar() {
        let o = ConfigOverrides::parse(
            "# comment\n\nalpha = 0.8\n  tau=0.95  \ntemplate = \"rephrased\"\ncontent_mode = none\nn_frames = 15\n",
        )
        .unwrap();
        assert_eq!(o.alpha, Some(0.8));
        assert_eq!(o.tau, Some(0.95));
        assert_eq!(o.template.as_deref(), Some("rephrased"));
        assert_eq!(o.content_mode, Some(ContentMode::None));
        assert_eq!(o.n_frames, Some(15));
    }

    #[test]
    fn parse_errors_name_the_key() {
        match ConfigOverrides::parse("gamma = 1") {
            Err(Error::Config { parameter, .. }) => assert_eq!(parameter, "gamma"),
            other => panic!("{other:?}"),
        }
        match ConfigOverrides::parse("beta = lots") {
            Err(Error::Config { parameter, .. }) => assert_eq!(parameter, "beta"),
            other => panic!("{other:?}"),
        }
        assert!(ConfigOverrides::parse("just words").is_err());
    }

    #[test]
    fn precedence_matrix() {
        // For each combination of (file sets it, flag sets it) the winner must be
        // flag > file > default.
        let file = ConfigOverrides {
            alpha: Some(0.8),
            ..Default::default()
        };
        let flag = ConfigOverrides {
            alpha: Some(0.95),
            ..Default::default()
        };
        let none = ConfigOverrides::default();
        let cases = [
            (None, &none, 0.85),
            (Some(&file), &none, 0.8),
            (None, &flag, 0.95),
            (Some(&file), &flag, 0.95),
        ];
        for (f, fl, expected) in cases {
            assert_eq!(PipelineConfig::resolve(f, fl).unwrap().alpha, expected);
        }
    }

    #[test]
    fn ranges_enforced() {
        for (k, v) in [("alpha", "1.0"), ("beta", "0"), ("tau", "-0.1"), ("temperature", "2.5"), ("n_frames", "0")] {
            let o = ConfigOverrides::parse(&format!("{k} = {v}")).unwrap();
            match PipelineConfig::resolve(Some(&o), &ConfigOverrides::default()) {
                Err(Error::Config { parameter, .. }) => assert_eq!(parameter, k),
                other => panic!("{k}: {other:?}"),
            }
        }
    }

    #[test]
    fn uniform_split_for_fifteen() {
        let c = PipelineConfig {
            n_frames: Some(15),
            ..Default::default()
        };
        assert_eq!(c.uniform_frames().unwrap(), 12);
    }
}
