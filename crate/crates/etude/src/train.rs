//! Training loop: corpus preparation (tokenize, extract melodies,
//! truncate), the per-step perturbation pipeline for the conditioning
//! performance, batched gradient accumulation, and evaluation.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::augment::perturb;
use crate::codec::encode_performance;
use crate::melody::{encode_melody, extract_melody, MelodyHmm};
use crate::model::{Autoencoder, Conditioning, ConditioningInputs};
use crate::notes::NoteSequence;
use crate::tensor::optim::Adam;
use crate::tensor::Tape;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("example {index} produced no tokens")]
    EmptyExample { index: usize },
}

/// Training hyperparameters around the model config.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub base_lr: f64,
    pub warmup: usize,
    /// Record the batch NLL every this many steps (and at the last step).
    pub log_every: usize,
    /// Perturb the conditioning performance each step (the denoising
    /// pipeline; melody & performance mode only).
    pub perturb_inputs: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_size: 8,
            seed: 0,
            base_lr: 0.2,
            warmup: 400,
            log_every: 50,
            perturb_inputs: true,
        }
    }
}

/// One corpus item, tokenized once up front. The source sequence stays
/// around so the perturbation pipeline can re-encode a shifted/stretched
/// conditioning variant per step.
#[derive(Debug, Clone)]
pub struct PreparedExample {
    pub source: NoteSequence,
    /// Clean performance tokens, truncated, EOS-terminated: the decoder
    /// target. Never perturbed.
    pub target: Vec<usize>,
    /// Clean performance tokens without EOS: the encoder's default input.
    pub clean_perf: Vec<usize>,
    /// Clean melody tokens (melody & performance mode).
    pub melody: Option<Vec<usize>>,
}

/// Tokenizes a corpus for the model's conditioning mode: encodes
/// performances, extracts + encodes melodies when needed, truncates to the
/// model length budget and appends EOS to targets.
pub fn prepare_corpus(
    model: &Autoencoder,
    corpus: &[NoteSequence],
) -> Result<Vec<PreparedExample>, TrainError> {
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let hmm = MelodyHmm::default();
    let max_len = model.config.max_seq_len;
    corpus
        .iter()
        .enumerate()
        .map(|(index, seq)| {
            let tokens = encode_performance(seq);
            if tokens.is_empty() {
                return Err(TrainError::EmptyExample { index });
            }
            let keep = tokens.len().min(max_len - 1);
            let clean_perf: Vec<usize> = tokens[..keep].to_vec();
            let mut target = clean_perf.clone();
            target.push(model.config.eos_id());
            let melody = match model.config.conditioning {
                Conditioning::MelodyPerformance => {
                    let mono = extract_melody(seq, &hmm);
                    let (mel, _) = encode_melody(&mono);
                    let mut ids = mel.tokens;
                    ids.truncate(max_len);
                    if ids.is_empty() {
                        ids.push(crate::melody::NO_EVENT);
                    }
                    Some(ids)
                }
                _ => None,
            };
            Ok(PreparedExample { source: seq.clone(), target, clean_perf, melody })
        })
        .collect()
}

/// Loss curve: (step, batch NLL in nats per token).
#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub losses: Vec<(usize, f64)>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,nll\n");
        for (step, nll) in &self.losses {
            out.push_str(&format!("{step},{nll}\n"));
        }
        out
    }

    pub fn final_nll(&self) -> Option<f64> {
        self.losses.last().map(|&(_, n)| n)
    }
}

/// Encoder input for one example on one step: the clean tokens, or a fresh
/// perturbation of the source performance when the denoising pipeline is
/// on (melody & performance mode).
fn encoder_tokens(
    example: &PreparedExample,
    model: &Autoencoder,
    perturb_inputs: bool,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    if !perturb_inputs || model.config.conditioning != Conditioning::MelodyPerformance {
        return example.clean_perf.clone();
    }
    let (noisy, _) = perturb(&example.source, rng);
    let tokens = encode_performance(&noisy);
    let mut ids: Vec<usize> = tokens.as_slice().to_vec();
    ids.truncate(model.config.max_seq_len);
    if ids.is_empty() {
        ids = example.clean_perf.clone();
    }
    ids
}

/// Trains in place with a fresh optimizer. Deterministic given `cfg.seed`:
/// batches, dropout masks and perturbation draws all derive from it, and
/// gradient reduction is ordered.
pub fn train(
    model: &mut Autoencoder,
    examples: &[PreparedExample],
    cfg: &TrainConfig,
) -> Result<TrainLog, TrainError> {
    let mut adam = Adam::new(&model.params, cfg.base_lr, cfg.warmup);
    train_with(model, &mut adam, examples, cfg, 0)
}

/// Training with caller-owned optimizer state (checkpoint resume).
pub fn train_with(
    model: &mut Autoencoder,
    adam: &mut Adam,
    examples: &[PreparedExample],
    cfg: &TrainConfig,
    start_step: usize,
) -> Result<TrainLog, TrainError> {
    if examples.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let mut log = TrainLog::default();
    for step in start_step..start_step + cfg.steps {
        let mut step_rng =
            ChaCha8Rng::seed_from_u64(cfg.seed ^ (step as u64).wrapping_mul(0x9e3779b97f4a7c15));
        // Per-slot example choices and seeds, drawn before any parallelism.
        let slots: Vec<(usize, u64)> = (0..cfg.batch_size)
            .map(|_| (step_rng.gen_range(0..examples.len()), step_rng.gen::<u64>()))
            .collect();

        let results: Vec<(f64, Vec<ndarray::ArrayD<f64>>)> = slots
            .par_iter()
            .map(|&(ex_idx, slot_seed)| {
                let example = &examples[ex_idx];
                let mut slot_rng = ChaCha8Rng::seed_from_u64(slot_seed);
                let enc = encoder_tokens(example, model, cfg.perturb_inputs, &mut slot_rng);
                // The denoising pipeline never touches the decoder target.
                debug_assert_eq!(
                    &example.target[..example.target.len() - 1],
                    &example.clean_perf[..]
                );
                let mut tape = Tape::new(slot_seed);
                let bound = model.bind(&mut tape);
                let inputs = ConditioningInputs {
                    enc_perf: match model.config.conditioning {
                        Conditioning::None => None,
                        _ => Some(&enc),
                    },
                    melody: example.melody.as_deref(),
                };
                let loss = model.example_loss_t(
                    &mut tape,
                    &bound,
                    &inputs,
                    &example.target,
                    model.config.dropout,
                );
                let grads = tape.backward(loss).expect("training loss is attached");
                (tape.scalar(loss), bound.pull(&model.params, &grads))
            })
            .collect();

        // Ordered reduction keeps runs bitwise reproducible.
        model.params.zero_grads();
        let mut batch_nll = 0.0;
        for (nll, grads) in &results {
            batch_nll += nll;
            for (i, g) in grads.iter().enumerate() {
                model.params.get_mut(i).grad.scaled_add(1.0 / cfg.batch_size as f64, g);
            }
        }
        batch_nll /= cfg.batch_size as f64;
        adam.step(&mut model.params);

        let global = step + 1;
        if global % cfg.log_every == 0 || global == start_step + cfg.steps {
            log.losses.push((global, batch_nll));
        }
    }
    Ok(log)
}

/// Mean per-token NLL over a corpus with dropout off. `memory_of` supplies
/// each example's decoder memory, letting callers wire matched, shuffled or
/// zeroed conditioning.
pub fn eval_nll(
    model: &Autoencoder,
    examples: &[PreparedExample],
    memory_of: impl Fn(usize, &PreparedExample) -> Option<ndarray::Array2<f64>> + Sync,
) -> f64 {
    let total: f64 = examples
        .par_iter()
        .enumerate()
        .map(|(i, ex)| model.nll_value(memory_of(i, ex).as_ref(), &ex.target))
        .sum();
    total / examples.len() as f64
}

/// Matched conditioning: the example's own clean inputs.
pub fn matched_memory(
    model: &Autoencoder,
    example: &PreparedExample,
) -> Option<ndarray::Array2<f64>> {
    model.memory_for(&ConditioningInputs {
        enc_perf: match model.config.conditioning {
            Conditioning::None => None,
            _ => Some(&example.clean_perf),
        },
        melody: example.melody.as_deref(),
    })
}

/// Shuffled-memory control: example `i` is scored under the conditioning of
/// a different example (a fixed rotation of the corpus).
pub fn shuffled_memory(
    model: &Autoencoder,
    examples: &[PreparedExample],
    i: usize,
) -> Option<ndarray::Array2<f64>> {
    let j = (i + (examples.len() / 2).max(1)) % examples.len();
    matched_memory(model, &examples[j])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Combiner, ModelConfig};
    use crate::notes::Note;

    fn tiny_corpus() -> Vec<NoteSequence> {
        (0..4)
            .map(|k| {
                let notes: Vec<Note> = (0..6)
                    .map(|i| {
                        let t = i as f64 * 0.2;
                        Note::new(50 + 4 * k + i as u8, 70 + 2 * k, t, t + 0.15).unwrap()
                    })
                    .collect();
                NoteSequence::from_notes(notes).unwrap()
            })
            .collect()
    }

    fn tiny_model(conditioning: Conditioning) -> Autoencoder {
        let cfg = ModelConfig {
            n_layers: 1,
            d_model: 16,
            d_ff: 32,
            n_heads: 2,
            max_seq_len: 32,
            max_relative_distance: 16,
            dropout: 0.1,
            perf_vocab: crate::codec::VOCAB_SIZE,
            melody_vocab: crate::melody::MELODY_VOCAB,
            combiner: Combiner::Sum,
            conditioning,
        };
        Autoencoder::new(cfg, 7).unwrap()
    }

    #[test]
    fn same_seed_gives_identical_loss_curves_and_parameters() {
        let corpus = tiny_corpus();
        let run = || {
            let mut model = tiny_model(Conditioning::Performance);
            let examples = prepare_corpus(&model, &corpus).unwrap();
            let cfg = TrainConfig { steps: 12, batch_size: 3, log_every: 3, ..Default::default() };
            let log = train(&mut model, &examples, &cfg).unwrap();
            (log.losses, model.params)
        };
        let (la, pa) = run();
        let (lb, pb) = run();
        assert_eq!(la, lb);
        for i in 0..pa.len() {
            assert_eq!(pa.get(i).value, pb.get(i).value, "parameter {i} diverged");
        }
    }

    #[test]
    fn loss_at_step_zero_is_near_log_vocab() {
        let corpus = tiny_corpus();
        let mut model = tiny_model(Conditioning::None);
        let examples = prepare_corpus(&model, &corpus).unwrap();
        let cfg = TrainConfig { steps: 1, batch_size: 4, log_every: 1, ..Default::default() };
        let log = train(&mut model, &examples, &cfg).unwrap();
        let first = log.losses[0].1;
        assert!((first - 391f64.ln()).abs() < 0.3, "step-1 NLL {first}");
    }

    #[test]
    fn perturbation_leaves_targets_untouched() {
        let corpus = tiny_corpus();
        let mut model = tiny_model(Conditioning::MelodyPerformance);
        let examples = prepare_corpus(&model, &corpus).unwrap();
        let before: Vec<Vec<usize>> = examples.iter().map(|e| e.target.clone()).collect();
        let cfg = TrainConfig { steps: 6, batch_size: 2, log_every: 2, ..Default::default() };
        train(&mut model, &examples, &cfg).unwrap();
        let after: Vec<Vec<usize>> = examples.iter().map(|e| e.target.clone()).collect();
        assert_eq!(before, after);
        for e in &examples {
            assert_eq!(&e.target[..e.target.len() - 1], &e.clean_perf[..]);
            assert_eq!(*e.target.last().unwrap(), model.config.eos_id());
        }
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let mut model = tiny_model(Conditioning::None);
        assert!(matches!(prepare_corpus(&model, &[]), Err(TrainError::EmptyCorpus)));
        let cfg = TrainConfig::default();
        assert!(matches!(train(&mut model, &[], &cfg), Err(TrainError::EmptyCorpus)));
    }

    #[test]
    fn eval_with_shuffled_memory_uses_other_examples() {
        let corpus = tiny_corpus();
        let model = tiny_model(Conditioning::Performance);
        let examples = prepare_corpus(&model, &corpus).unwrap();
        for i in 0..examples.len() {
            let matched = matched_memory(&model, &examples[i]).unwrap();
            let shuffled = shuffled_memory(&model, &examples, i).unwrap();
            assert_ne!(matched, shuffled, "rotation must pick a different example");
        }
    }
}
