use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{text_proxy_ref, Sample};
use crate::adapters::{AdapterError, SpeechSynth};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AudioFailure {
    pub sample_id: String,
    pub input_index: usize,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AudioReport {
    pub synthesized: usize,
    pub failures: Vec<AudioFailure>,
}

/// Where input sentences get their audio from.
#[derive(Clone, Copy)]
pub enum AudioSource<'a> {
    /// `text-proxy:<sentence>` references, no synthesis.
    TextProxy,
    Speech(&'a dyn SpeechSynth),
}

/// Fills every input's `audio_ref`. Per-item synthesis failures are
/// recorded in the report and leave that item's reference empty.
pub fn synth_audio(samples: &mut [Sample], source: Option<AudioSource<'_>>) -> Result<AudioReport> {
    let source = source.ok_or_else(|| {
        AdapterError::Unavailable("no speech synthesizer and text-proxy mode is off".into())
    })?;
    let jobs: Vec<(usize, usize, &str)> = samples
        .iter()
        .enumerate()
        .flat_map(|(s, sample)| {
            sample
                .inputs
                .iter()
                .enumerate()
                .map(move |(i, input)| (s, i, input.sentence.as_str()))
        })
        .collect();
    let results: Vec<std::result::Result<String, AdapterError>> = match source {
        AudioSource::TextProxy => jobs
            .iter()
            .map(|&(_, _, text)| Ok(text_proxy_ref(text)))
            .collect(),
        AudioSource::Speech(tts) => jobs
            .par_iter()
            .map(|&(_, _, text)| tts.synthesize(text))
            .collect(),
    };
    let positions: Vec<(usize, usize)> = jobs.iter().map(|&(s, i, _)| (s, i)).collect();

    let mut report = AudioReport::default();
    for ((s, i), result) in positions.into_iter().zip(results) {
        let sample = &mut samples[s];
        match result {
            Ok(r) => {
                sample.inputs[i].audio_ref = Some(r);
                report.synthesized += 1;
            }
            Err(e) => {
                sample.inputs[i].audio_ref = None;
                report.failures.push(AudioFailure {
                    sample_id: sample.id.clone(),
                    input_index: i,
                    error: e.to_string(),
                });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::SentinelTts;
    use crate::synth::dataset::{SampleInput, SampleMeta};
    use crate::Task;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn samples(n: usize) -> Vec<Sample> {
        (0..n)
            .map(|k| Sample {
                id: format!("s-{k}"),
                task: Task::SAqa,
                question: "q?".into(),
                answer: "a".into(),
                inputs: vec![SampleInput {
                    sentence: format!("Entity{k} serves dish{k}."),
                    audio_ref: None,
                    gold_entity_name: format!("Entity{k}"),
                    relevant: None,
                }],
                meta: SampleMeta::default(),
            })
            .collect()
    }

    #[test]
    fn text_proxy_refs() {
        let mut s = samples(2);
        let report = synth_audio(&mut s, Some(AudioSource::TextProxy)).unwrap();
        assert_eq!(report.synthesized, 2);
        assert_eq!(
            s[1].inputs[0].audio_ref.as_deref(),
            Some("text-proxy:Entity1 serves dish1.")
        );
    }

    #[test]
    fn neither_backend_is_unavailable() {
        let mut s = samples(1);
        assert!(matches!(
            synth_audio(&mut s, None),
            Err(crate::Error::Adapter(AdapterError::Unavailable(_)))
        ));
    }

    struct FlakyTts {
        fail_on: String,
        calls: AtomicUsize,
    }

    impl SpeechSynth for FlakyTts {
        fn synthesize(&self, text: &str) -> std::result::Result<String, AdapterError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if text == self.fail_on {
                return Err(AdapterError::Timeout {
                    url: "http://tts".into(),
                    timeout_ms: 10,
                });
            }
            SentinelTts::default().synthesize(text)
        }
    }

    #[test]
    fn one_failure_does_not_sink_the_batch() {
        let mut s = samples(10);
        let tts = FlakyTts {
            fail_on: "Entity7 serves dish7.".into(),
            calls: AtomicUsize::new(0),
        };
        let report = synth_audio(&mut s, Some(AudioSource::Speech(&tts))).unwrap();
        assert_eq!(report.synthesized, 9);
        assert_eq!(report.failures.len(), 1);
        assert_eq!(report.failures[0].sample_id, "s-7");
        assert!(s[7].inputs[0].audio_ref.is_none());
        assert!(s[6].inputs[0]
            .audio_ref
            .as_deref()
            .unwrap()
            .starts_with("tts-sentinel:"));
        assert_eq!(tts.calls.load(Ordering::SeqCst), 10);
    }
}
