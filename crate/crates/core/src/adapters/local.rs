//! In-process deterministic backends with the same contracts as the remote
//! roles.

use std::io::Write;
use std::path::PathBuf;

use base64::Engine;
use sha2::{Digest, Sha256};

use super::wire::EncodeResponse;
use super::{AdapterError, AudioPayload, SpeechSynth, Transcriber};
use crate::error::Result as CrateResult;
use crate::kb::mix_seed;
use crate::linking::noise_inject;
use crate::synth::dataset::TEXT_PROXY_PREFIX;
use crate::text::{TextEncoder, Vector};

/// FNV-1a, used to derive per-text seeds.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Speech recognizer stand-in: `text-proxy:` references yield their
/// embedded sentence, optionally corrupted by character noise. Inline
/// payloads are echoed back as UTF-8.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TextProxyAsr {
    pub noise_rate: f64,
    pub seed: u64,
}

impl TextProxyAsr {
    pub fn new(noise_rate: f64, seed: u64) -> Self {
        TextProxyAsr { noise_rate, seed }
    }

    pub fn clean() -> Self {
        TextProxyAsr::default()
    }

    fn noised(&self, text: &str) -> Result<String, AdapterError> {
        if self.noise_rate == 0.0 {
            return Ok(text.to_string());
        }
        let seed = mix_seed(self.seed, fnv1a(text.as_bytes()));
        noise_inject(text, self.noise_rate, seed)
            .map_err(|e| AdapterError::InvalidRequest(e.to_string()))
    }
}

impl Transcriber for TextProxyAsr {
    fn transcribe(&self, audio: &AudioPayload) -> Result<String, AdapterError> {
        match audio {
            AudioPayload::Ref(r) => match r.strip_prefix(TEXT_PROXY_PREFIX) {
                Some(text) => self.noised(text),
                None => Err(AdapterError::TranscriptionFailed {
                    reference: r.clone(),
                    reason: "text-proxy recognizer only reads text-proxy references".into(),
                }),
            },
            AudioPayload::Inline(bytes) => {
                let text = String::from_utf8(bytes.clone()).map_err(|_| {
                    AdapterError::InvalidRequest("inline payload is not UTF-8 text".into())
                })?;
                self.noised(&text)
            }
        }
    }
}

pub const SENTINEL_PREFIX: &str = "tts-sentinel:";

pub fn content_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Speech synthesizer stand-in. References are derived from a content hash;
/// with an output directory a short silent 16 kHz mono 16-bit WAV is
/// written per distinct text and its path returned.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SentinelTts {
    pub out_dir: Option<PathBuf>,
}

pub const SAMPLE_RATE: u32 = 16_000;

/// Minimal PCM WAV container: mono, 16-bit.
pub fn wav_bytes(samples: &[i16]) -> Vec<u8> {
    let data_len = (samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&SAMPLE_RATE.to_le_bytes());
    out.extend_from_slice(&(SAMPLE_RATE * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for s in samples {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

impl SpeechSynth for SentinelTts {
    fn synthesize(&self, text: &str) -> Result<String, AdapterError> {
        if text.trim().is_empty() {
            return Err(AdapterError::Protocol {
                status: 400,
                body: "text must be non-empty".into(),
            });
        }
        let hash = content_hash(text);
        let Some(dir) = &self.out_dir else {
            return Ok(format!("{SENTINEL_PREFIX}{hash}"));
        };
        let path = dir.join(format!("{hash}.wav"));
        if !path.exists() {
            // 50 ms of silence per character.
            let samples = vec![0i16; text.chars().count() * SAMPLE_RATE as usize / 20];
            std::fs::create_dir_all(dir)
                .and_then(|_| std::fs::File::create(&path))
                .and_then(|mut f| f.write_all(&wav_bytes(&samples)))
                .map_err(|e| AdapterError::Unavailable(format!("{}: {e}", path.display())))?;
        }
        Ok(path.to_string_lossy().into_owned())
    }
}

/// Character-count encoder over `a-z0-9` (36 dimensions).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BagOfCharsEncoder;

impl BagOfCharsEncoder {
    pub const DIM: usize = 36;

    pub fn dense(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; Self::DIM];
        for c in text.chars().flat_map(char::to_lowercase) {
            match c {
                'a'..='z' => v[c as usize - 'a' as usize] += 1.0,
                '0'..='9' => v[26 + c as usize - '0' as usize] += 1.0,
                _ => {}
            }
        }
        v
    }

    pub fn respond(&self, texts: &[String]) -> EncodeResponse {
        EncodeResponse {
            vectors: texts.iter().map(|t| self.dense(t)).collect(),
            dim: Self::DIM,
        }
    }
}

impl TextEncoder for BagOfCharsEncoder {
    fn encode_texts(&self, texts: &[&str]) -> CrateResult<Vec<Vector>> {
        Ok(texts
            .iter()
            .map(|t| Vector::from_dense(&self.dense(t)))
            .collect())
    }
}

/// Decodes an `audio_b64` field.
pub fn decode_inline(b64: &str) -> Result<Vec<u8>, AdapterError> {
    base64::engine::general_purpose::STANDARD
        .decode(b64)
        .map_err(|e| AdapterError::InvalidRequest(format!("audio_b64: {e}")))
}
