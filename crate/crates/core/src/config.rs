//! TOML configuration. Every command-line flag has a field here; values given
//! on the command line are overlaid on the file before resolution.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{Engine, RunConfig};
use crate::metrics::Granularity;
use crate::models::remote::{RemoteLanguageModel, RemoteTranslator};
use crate::models::{
    fit_ngram_lm, load_lexicon, LanguageModel, LexiconTranslator, LookaheadTranslator, Models,
    Translator,
};
use crate::policies::{PolicyConfig, PolicyKind};
use crate::stream::tokenize;
use crate::taf::TafConfig;

pub const SEED_ENV: &str = "SIMULSTREAM_SEED";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsSection {
    /// `lexicon`, `lookahead`, `copy` or `remote`.
    pub translator: Option<String>,
    pub lexicon: Option<PathBuf>,
    pub delta: Option<usize>,
    pub epsilon: Option<f64>,
    /// `ngram`, `remote` or `none`.
    pub lm: Option<String>,
    pub lm_corpus: Option<PathBuf>,
    pub lm_order: Option<usize>,
    pub lm_alpha: Option<f64>,
    pub bridge_url: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    /// `waitk`, `la`, `hold`, `ralcp`, `taf`, or a base name with `+taf`.
    pub name: Option<String>,
    #[serde(rename = "K")]
    pub k: Option<usize>,
    #[serde(rename = "N")]
    pub n: Option<usize>,
    pub gamma: Option<f64>,
    pub beam_width: Option<usize>,
    pub segment_size: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TafSection {
    pub n: Option<usize>,
    pub l: Option<usize>,
    pub k: Option<usize>,
    pub tau: Option<f64>,
    pub beam_per_continuation: Option<usize>,
    pub seed: Option<u64>,
    pub document_context: Option<bool>,
    pub temperature: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub source: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub docids: Option<PathBuf>,
    pub trajectories: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub granularity: Option<Granularity>,
    pub max_target_factor: Option<f64>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub tau: Option<Vec<f64>>,
    #[serde(rename = "K")]
    pub k_wait: Option<Vec<usize>>,
    #[serde(rename = "N")]
    pub n_stride: Option<Vec<usize>>,
    pub gamma: Option<Vec<f64>>,
    pub n: Option<Vec<usize>>,
    pub l: Option<Vec<usize>>,
    pub k: Option<Vec<usize>>,
    pub segment_size: Option<Vec<usize>>,
    pub max_points: Option<usize>,
    /// Where the Pareto summary goes; defaults next to the metrics file.
    pub pareto: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub models: ModelsSection,
    pub policy: PolicySection,
    pub taf: TafSection,
    pub run: RunSection,
    pub sweep: SweepSection,
}

macro_rules! overlay {
    ($base:expr, $top:expr; $($field:ident),* $(,)?) => {
        $( if $top.$field.is_some() { $base.$field = $top.$field.clone(); } )*
    };
}

impl FileConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("bad configuration: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Values set in `top` replace those in `self`.
    pub fn overlay(mut self, top: &FileConfig) -> Self {
        overlay!(self.models, top.models; translator, lexicon, delta, epsilon, lm, lm_corpus, lm_order, lm_alpha, bridge_url);
        overlay!(self.policy, top.policy; name, k, n, gamma, beam_width, segment_size);
        overlay!(self.taf, top.taf; n, l, k, tau, beam_per_continuation, seed, document_context, temperature);
        overlay!(self.run, top.run; source, reference, docids, trajectories, metrics, granularity, max_target_factor, seed, jobs);
        overlay!(self.sweep, top.sweep; tau, k_wait, n_stride, gamma, n, l, k, segment_size, max_points, pareto);
        self
    }

    /// Global seed: config/flag value, else `SIMULSTREAM_SEED`, else 0.
    pub fn seed(&self) -> Result<u64> {
        if let Some(s) = self.run.seed {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
            Err(_) => Ok(0),
        }
    }

    /// Resolves the policy, anticipation and run settings.
    pub fn run_config(&self) -> Result<RunConfig> {
        let name = self.policy.name.as_deref().unwrap_or("waitk");
        let (kind, anticipate) = parse_policy_name(name)?;
        let defaults = PolicyConfig::default();
        let mut policy = PolicyConfig {
            kind,
            k: self.policy.k.unwrap_or(defaults.k),
            n: self.policy.n.unwrap_or(defaults.n),
            gamma: self.policy.gamma.unwrap_or(defaults.gamma),
            beam_width: self.policy.beam_width.unwrap_or(defaults.beam_width),
            segment_size: self.policy.segment_size.unwrap_or(defaults.segment_size),
        };
        let taf = anticipate.then(|| self.taf_config());
        if let Some(t) = &taf {
            if kind == PolicyKind::Ralcp && self.policy.beam_width.is_none() {
                policy.beam_width = t.pool_size();
            }
        }
        let run = RunConfig {
            policy,
            taf,
            granularity: self.run.granularity.unwrap_or_default(),
            max_target_factor: self.run.max_target_factor.unwrap_or(1.5),
            global_seed: self.seed()?,
        };
        run.validate()?;
        Ok(run)
    }

    fn taf_config(&self) -> TafConfig {
        let d = TafConfig::default();
        let t = &self.taf;
        TafConfig {
            n: t.n.unwrap_or(d.n),
            l: t.l.unwrap_or(d.l),
            k: t.k.unwrap_or(d.k),
            tau: t.tau.unwrap_or(d.tau),
            beam_per_continuation: t.beam_per_continuation.unwrap_or(d.beam_per_continuation),
            seed: t.seed.unwrap_or(d.seed),
            use_document_context: t.document_context.unwrap_or(d.use_document_context),
            temperature: t.temperature.unwrap_or(d.temperature),
        }
    }

    /// Engine for the resolved configuration.
    pub fn engine(&self) -> Result<Engine> {
        let run = self.run_config()?;
        Engine::new(self.build_models(run.needs_lm())?, run)
    }

    /// Loads or connects to the configured models. The LM is only built
    /// when `need_lm` is set.
    pub fn build_models(&self, need_lm: bool) -> Result<Models> {
        let m = &self.models;
        let lexicon = match &m.lexicon {
            Some(p) => load_lexicon(p)?,
            None => BTreeMap::new(),
        };
        let epsilon = m.epsilon.unwrap_or(crate::models::DEFAULT_EPSILON);
        let bridge = || {
            m.bridge_url
                .clone()
                .ok_or_else(|| Error::Config("remote models need models.bridge_url".into()))
        };
        let kind = m.translator.as_deref().unwrap_or(if m.delta.is_some() {
            "lookahead"
        } else {
            "lexicon"
        });
        let mt: Arc<dyn Translator> = match kind {
            "lexicon" => Arc::new(LexiconTranslator::new(lexicon).with_epsilon(epsilon)),
            "copy" => Arc::new(LexiconTranslator::copy().with_epsilon(epsilon)),
            "lookahead" => Arc::new(
                LookaheadTranslator::new(lexicon, m.delta.unwrap_or(0)).with_epsilon(epsilon),
            ),
            "remote" => Arc::new(RemoteTranslator::new(&bridge()?)),
            other => return Err(Error::Config(format!("unknown translator {other:?}"))),
        };
        let mut models = Models::new(mt);
        if !need_lm {
            return Ok(models);
        }
        let lm_kind = m.lm.as_deref().unwrap_or(if m.lm_corpus.is_some() {
            "ngram"
        } else {
            "none"
        });
        let lm: Arc<dyn LanguageModel> = match lm_kind {
            "ngram" => {
                let path = m
                    .lm_corpus
                    .as_ref()
                    .ok_or_else(|| Error::Config("the n-gram LM needs models.lm_corpus".into()))?;
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let corpus: Vec<_> = text.lines().map(tokenize).collect();
                Arc::new(fit_ngram_lm(
                    &corpus,
                    m.lm_order.unwrap_or(3),
                    m.lm_alpha.unwrap_or(0.01),
                )?)
            }
            "remote" => Arc::new(RemoteLanguageModel::new(&bridge()?)),
            "none" => {
                return Err(Error::Config(
                    "anticipation needs a language model (models.lm)".into(),
                ))
            }
            other => return Err(Error::Config(format!("unknown language model {other:?}"))),
        };
        models = models.with_lm(lm);
        Ok(models)
    }
}

/// Splits `ralcp+taf` style names into the base policy and whether
/// anticipation is on.
pub fn parse_policy_name(name: &str) -> Result<(PolicyKind, bool)> {
    let (base, anticipate) = match name.strip_suffix("+taf") {
        Some(b) => (b, true),
        None => (name, false),
    };
    let kind = match base {
        "waitk" | "wait-k" => PolicyKind::WaitKStrideN,
        "la" => PolicyKind::LocalAgreement,
        "hold" => PolicyKind::HoldN,
        "ralcp" => PolicyKind::Ralcp,
        "taf" if !anticipate => return Ok((PolicyKind::Taf, true)),
        _ => return Err(Error::Config(format!("unknown policy {name:?}"))),
    };
    if anticipate && kind == PolicyKind::HoldN {
        return Err(Error::Config(
            "hold cannot be combined with anticipation".into(),
        ));
    }
    Ok((kind, anticipate))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_names() {
        assert_eq!(
            parse_policy_name("ralcp+taf").unwrap(),
            (PolicyKind::Ralcp, true)
        );
        assert_eq!(
            parse_policy_name("waitk").unwrap(),
            (PolicyKind::WaitKStrideN, false)
        );
        assert_eq!(parse_policy_name("taf").unwrap(), (PolicyKind::Taf, true));
        assert!(parse_policy_name("hold+taf").is_err());
        assert!(parse_policy_name("bogus").is_err());
    }

    #[test]
    fn toml_sections_and_overlay() {
        let file = FileConfig::from_toml_str(
            r#"
            [policy]
            name = "ralcp+taf"
            gamma = 0.6
            [taf]
            n = 10
            tau = 0.6
            [run]
            seed = 4
            granularity = "character"
            "#,
        )
        .unwrap();
        let run = file.run_config().unwrap();
        assert_eq!(run.policy.beam_width, 10);
        assert_eq!(run.taf.as_ref().unwrap().n, 10);
        assert_eq!(run.granularity, Granularity::Character);
        assert_eq!(run.global_seed, 4);

        let flags = FileConfig {
            taf: TafSection {
                tau: Some(0.9),
                ..Default::default()
            },
            run: RunSection {
                seed: Some(7),
                ..Default::default()
            },
            ..Default::default()
        };
        let run = file.overlay(&flags).run_config().unwrap();
        assert_eq!(run.taf.unwrap().tau, 0.9);
        assert_eq!(run.global_seed, 7);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            FileConfig::from_toml_str("[policy]\nbogus = 1\n"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn ralcp_taf_beam_mismatch_is_config_error() {
        let file = FileConfig::from_toml_str(
            "[policy]\nname = \"ralcp+taf\"\nbeam_width = 3\n[taf]\nn = 4\n",
        )
        .unwrap();
        assert!(matches!(file.run_config(), Err(Error::Config(_))));
    }

    #[test]
    fn anticipation_without_lm_is_config_error() {
        let file = FileConfig::default();
        assert!(matches!(file.build_models(true), Err(Error::Config(_))));
        assert!(file.build_models(false).is_ok());
    }
}
