//! Keyword-seeded program generation against the local model.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusError, CorpusStore, Language, Origin, TestProgram};
use crate::llm::{extract_code, LanguageModel};

const DEFAULT_KEYWORDS: &str = include_str!("keywords.txt");

/// Keyword list from text with one keyword per line; `#` starts a comment
/// line and duplicates are dropped.
pub fn parse_keywords(text: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !out.iter().any(|k| k == line) {
            out.push(line.to_string());
        }
    }
    out
}

pub fn default_keywords() -> Vec<String> {
    parse_keywords(DEFAULT_KEYWORDS)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenSpec {
    pub keyword_pool: Vec<String>,
    pub keywords_per_prompt: usize,
    pub count: usize,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            keyword_pool: default_keywords(),
            keywords_per_prompt: 3,
            count: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GenSpecError {
    #[error("keyword pool is empty")]
    EmptyPool,
    #[error("keywords per prompt must be between 1 and the pool size ({pool})")]
    BadSampleSize { pool: usize },
}

impl GenSpec {
    pub fn validate(&self) -> Result<(), GenSpecError> {
        if self.keyword_pool.is_empty() {
            return Err(GenSpecError::EmptyPool);
        }
        if self.keywords_per_prompt == 0 || self.keywords_per_prompt > self.keyword_pool.len() {
            return Err(GenSpecError::BadSampleSize {
                pool: self.keyword_pool.len(),
            });
        }
        Ok(())
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

/// Distinct keywords drawn from the pool, in draw order.
pub fn sample_keywords<'a>(spec: &'a GenSpec, rng: &mut ChaCha8Rng) -> Vec<&'a str> {
    let k = spec.keywords_per_prompt.min(spec.keyword_pool.len());
    index::sample(rng, spec.keyword_pool.len(), k)
        .into_iter()
        .map(|i| spec.keyword_pool[i].as_str())
        .collect()
}

pub fn render_prompt(keywords: &[&str]) -> String {
    format!(
        "Write a complete, self-contained C program that exercises the following concepts: {}. \
         The program must define main, use only the C standard library, read no input, and \
         print a deterministic result. Reply with the whole program in a single ```c code block.",
        keywords.join(", ")
    )
}

pub fn gen_prompt(spec: &GenSpec, rng: &mut ChaCha8Rng) -> String {
    render_prompt(&sample_keywords(spec, rng))
}

#[derive(Debug, Default)]
pub struct GenerationReport {
    pub programs: Vec<TestProgram>,
    pub extraction_failures: usize,
    pub transport_errors: usize,
}

/// Asks the model for `spec.count` programs and ingests every one that
/// yields code. Model failures are counted and skipped.
pub fn generate(
    spec: &GenSpec,
    model: &dyn LanguageModel,
    store: &CorpusStore,
) -> Result<GenerationReport, CorpusError> {
    let mut rng = spec.rng();
    let mut report = GenerationReport::default();
    for _ in 0..spec.count {
        let prompt = gen_prompt(spec, &mut rng);
        let reply = match model.complete(&prompt) {
            Ok(reply) => reply,
            Err(_) => {
                report.transport_errors += 1;
                continue;
            }
        };
        match extract_code(&reply.text) {
            Some(code) if !code.trim().is_empty() => {
                report.programs.push(store.ingest_bytes(
                    code.as_bytes(),
                    Language::C,
                    Origin::Blackbox,
                )?);
            }
            _ => report.extraction_failures += 1,
        }
    }
    Ok(report)
}
