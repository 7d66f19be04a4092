//! The transformer autoencoder: relative-attention encoder stacks, the
//! mean-aggregation style bottleneck, the sum/concat/tile conditioning
//! combiners, and a causal decoder with cross-attention over the combined
//! memory.

pub mod attention;
pub mod checkpoint;

use ndarray::{Array1, Array2, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::VOCAB_SIZE;
use crate::melody::MELODY_VOCAB;
use crate::tensor::optim::{Bound, ParamSet};
use crate::tensor::{NodeId, Tape};
use attention::{attention, causal_mask, pad_mask, AttnIdx, RelMode};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// How the decoder is conditioned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    /// Decoder-only language model, no encoder and no cross-attention.
    None,
    /// Mean-aggregated performance latent as a single-row memory.
    Performance,
    /// Degenerate baseline without the bottleneck: the full encoder output
    /// sequence is the memory, so the decoder can copy its target outright.
    PerformanceNoBottleneck,
    /// Melody encoding fused with the performance latent.
    MelodyPerformance,
}

/// How the melody encoding and performance latent fuse into decoder memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combiner {
    /// Latent broadcast-added to every melody step: (L_mel, d).
    Sum,
    /// Melody rows, then the STOP token's embedding row, then the latent:
    /// (L_mel + 2, d).
    Concat,
    /// Latent appended feature-wise to every step, then a learned 2d -> d
    /// projection: (L_mel, d).
    Tile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
    /// Longest attention distance with its own embedding; farther pairs
    /// clip. Defaults to half the sequence length.
    pub max_relative_distance: usize,
    pub dropout: f64,
    pub perf_vocab: usize,
    pub melody_vocab: usize,
    pub combiner: Combiner,
    pub conditioning: Conditioning,
}

impl ModelConfig {
    /// Desk-scale configuration: same shape rules as the reference configs,
    /// scaled down to train on a CPU in minutes.
    pub fn desk(conditioning: Conditioning) -> Self {
        ModelConfig {
            n_layers: 2,
            d_model: 64,
            d_ff: 256,
            n_heads: 4,
            max_seq_len: 128,
            max_relative_distance: 64,
            dropout: 0.1,
            perf_vocab: VOCAB_SIZE,
            melody_vocab: MELODY_VOCAB,
            combiner: Combiner::Sum,
            conditioning,
        }
    }

    /// Full-scale reference configuration A (6 layers, dropout 0.1).
    pub fn reference_a() -> Self {
        ModelConfig {
            n_layers: 6,
            d_model: 384,
            d_ff: 1024,
            n_heads: 8,
            max_seq_len: 2048,
            max_relative_distance: 1024,
            dropout: 0.1,
            perf_vocab: VOCAB_SIZE,
            melody_vocab: MELODY_VOCAB,
            combiner: Combiner::Sum,
            conditioning: Conditioning::Performance,
        }
    }

    /// Full-scale reference configuration B (8 layers, dropout 0.15).
    pub fn reference_b() -> Self {
        ModelConfig { n_layers: 8, dropout: 0.15, ..Self::reference_a() }
    }

    /// Query/key width per head: half the per-head hidden size.
    pub fn d_qk_head(&self) -> usize {
        self.d_model / (2 * self.n_heads)
    }

    pub fn d_v_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Specials occupy the last three ids: PAD, EOS, STOP. At the real
    /// vocabulary size (391) these are the codec constants 388..=390.
    pub fn pad_id(&self) -> usize {
        self.perf_vocab - 3
    }

    /// Start-of-sequence for the decoder; the EOS id reused.
    pub fn eos_id(&self) -> usize {
        self.perf_vocab - 2
    }

    pub fn stop_id(&self) -> usize {
        self.perf_vocab - 1
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_layers == 0 {
            return Err(ModelError::InvalidConfig("n_layers must be positive".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_model % (2 * self.n_heads) != 0 {
            return Err(ModelError::InvalidConfig(
                "query/key size d_model / (2 * n_heads) must be integral".into(),
            ));
        }
        if self.max_relative_distance == 0 || self.max_relative_distance > self.max_seq_len {
            return Err(ModelError::InvalidConfig(
                "max_relative_distance must be in 1..=max_seq_len".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::InvalidConfig("dropout must be in [0, 1)".into()));
        }
        if self.perf_vocab < 4 || self.melody_vocab == 0 {
            return Err(ModelError::InvalidConfig("vocabulary too small".into()));
        }
        if self.max_seq_len < 2 {
            return Err(ModelError::InvalidConfig("max_seq_len must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct LnIdx {
    gamma: usize,
    beta: usize,
}

#[derive(Debug, Clone)]
struct FfnIdx {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone)]
struct LayerIdx {
    ln1: LnIdx,
    self_attn: AttnIdx,
    cross: Option<(LnIdx, AttnIdx)>,
    ln2: LnIdx,
    ffn: FfnIdx,
}

#[derive(Debug, Clone)]
struct StackIdx {
    layers: Vec<LayerIdx>,
    final_ln: LnIdx,
}

#[derive(Debug, Clone)]
struct ModelIdx {
    perf_embed: usize,
    mel_embed: Option<usize>,
    perf_encoder: Option<StackIdx>,
    mel_encoder: Option<StackIdx>,
    decoder: StackIdx,
    out_w: usize,
    out_b: usize,
    tile_proj: Option<usize>,
}

/// The transformer autoencoder with all trainable parameters.
#[derive(Debug, Clone)]
pub struct Autoencoder {
    pub config: ModelConfig,
    pub params: ParamSet,
    idx: ModelIdx,
}

impl Autoencoder {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut params = ParamSet::new();
        let mut b = ParamBuilder { params: &mut params, rng: ChaCha8Rng::seed_from_u64(seed), cfg: &config };

        let perf_embed = b.matrix("perf_embed".into(), config.perf_vocab, config.d_model);
        let perf_encoder = if config.conditioning == Conditioning::None {
            None
        } else {
            Some(b.stack("enc", true, false))
        };
        let (mel_embed, mel_encoder) = if config.conditioning == Conditioning::MelodyPerformance {
            let e = b.matrix("mel_embed".into(), config.melody_vocab, config.d_model);
            (Some(e), Some(b.stack("mel", true, false)))
        } else {
            (None, None)
        };
        let decoder = b.stack("dec", false, config.conditioning != Conditioning::None);
        let out_w = b.matrix("out.w".into(), config.d_model, config.perf_vocab);
        let out_b = b.zeros("out.b".into(), config.perf_vocab);
        let tile_proj = if config.conditioning == Conditioning::MelodyPerformance
            && config.combiner == Combiner::Tile
        {
            Some(b.matrix("tile.proj".into(), 2 * config.d_model, config.d_model))
        } else {
            None
        };

        let idx = ModelIdx {
            perf_embed,
            mel_embed,
            perf_encoder,
            mel_encoder,
            decoder,
            out_w,
            out_b,
            tile_proj,
        };
        Ok(Autoencoder { config, params, idx })
    }

    pub fn bind(&self, tape: &mut Tape) -> Bound {
        self.params.bind(tape)
    }

    /// Linear scan by checkpoint name, for tests and tooling.
    pub fn param_index(&self, name: &str) -> Option<usize> {
        (0..self.params.len()).find(|&i| self.params.get(i).name == name)
    }
}

struct ParamBuilder<'a> {
    params: &'a mut ParamSet,
    rng: ChaCha8Rng,
    cfg: &'a ModelConfig,
}

impl ParamBuilder<'_> {
    fn matrix(&mut self, name: String, rows: usize, cols: usize) -> usize {
        let bound = 1.0 / (rows as f64).sqrt();
        let rng = &mut self.rng;
        let value = ArrayD::from_shape_fn(IxDyn(&[rows, cols]), |_| rng.gen_range(-bound..bound));
        self.params.add(name, value)
    }

    fn zeros(&mut self, name: String, n: usize) -> usize {
        self.params.add(name, ArrayD::zeros(IxDyn(&[n])))
    }

    fn ones(&mut self, name: String, n: usize) -> usize {
        self.params.add(name, ArrayD::from_elem(IxDyn(&[n]), 1.0))
    }

    fn layer_norm(&mut self, prefix: String) -> LnIdx {
        let d = self.cfg.d_model;
        LnIdx { gamma: self.ones(format!("{prefix}.gamma"), d), beta: self.zeros(format!("{prefix}.beta"), d) }
    }

    fn attn(&mut self, prefix: String, rel_rows: Option<usize>) -> AttnIdx {
        let d = self.cfg.d_model;
        let d_qk = self.cfg.d_qk_head();
        AttnIdx {
            wq: self.matrix(format!("{prefix}.wq"), d, d / 2),
            bq: self.zeros(format!("{prefix}.bq"), d / 2),
            wk: self.matrix(format!("{prefix}.wk"), d, d / 2),
            bk: self.zeros(format!("{prefix}.bk"), d / 2),
            wv: self.matrix(format!("{prefix}.wv"), d, d),
            bv: self.zeros(format!("{prefix}.bv"), d),
            wo: self.matrix(format!("{prefix}.wo"), d, d),
            bo: self.zeros(format!("{prefix}.bo"), d),
            rel: rel_rows.map(|rows| self.matrix(format!("{prefix}.rel"), rows, d_qk)),
        }
    }

    /// One encoder or decoder stack. Encoders use bidirectional relative
    /// tables; the decoder a causal one, plus optional cross-attention.
    fn stack(&mut self, name: &str, bidirectional: bool, cross: bool) -> StackIdx {
        let max_rel = self.cfg.max_relative_distance;
        let rel_rows = if bidirectional { 2 * max_rel + 1 } else { max_rel + 1 };
        let layers = (0..self.cfg.n_layers)
            .map(|i| {
                let p = format!("{name}.{i}");
                LayerIdx {
                    ln1: self.layer_norm(format!("{p}.ln1")),
                    self_attn: self.attn(format!("{p}.attn"), Some(rel_rows)),
                    cross: cross.then(|| {
                        (self.layer_norm(format!("{p}.lnx")), self.attn(format!("{p}.cross"), None))
                    }),
                    ln2: self.layer_norm(format!("{p}.ln2")),
                    ffn: FfnIdx {
                        w1: self.matrix(format!("{p}.ffn.w1"), self.cfg.d_model, self.cfg.d_ff),
                        b1: self.zeros(format!("{p}.ffn.b1"), self.cfg.d_ff),
                        w2: self.matrix(format!("{p}.ffn.w2"), self.cfg.d_ff, self.cfg.d_model),
                        b2: self.zeros(format!("{p}.ffn.b2"), self.cfg.d_model),
                    },
                }
            })
            .collect();
        StackIdx { layers, final_ln: self.layer_norm(format!("{name}.final_ln")) }
    }
}

impl Autoencoder {
    fn layer_forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: NodeId,
        layer: &LayerIdx,
        rel: RelMode,
        self_mask: Option<NodeId>,
        memory: Option<NodeId>,
        dropout: f64,
    ) -> NodeId {
        // Pre-norm residual blocks: x + Dropout(Sublayer(LN(x))).
        let h = tape.layer_norm(x, bound.id(layer.ln1.gamma), bound.id(layer.ln1.beta));
        let attn_out = attention(tape, bound, h, h, &layer.self_attn, self.config.n_heads, rel, self_mask);
        let attn_out = tape.dropout(attn_out, dropout);
        let mut x = tape.add(x, attn_out);

        if let (Some((lnx, cross_idx)), Some(mem)) = (&layer.cross, memory) {
            let h = tape.layer_norm(x, bound.id(lnx.gamma), bound.id(lnx.beta));
            let cross_out =
                attention(tape, bound, h, mem, cross_idx, self.config.n_heads, RelMode::None, None);
            let cross_out = tape.dropout(cross_out, dropout);
            x = tape.add(x, cross_out);
        }

        let h = tape.layer_norm(x, bound.id(layer.ln2.gamma), bound.id(layer.ln2.beta));
        let a1 = tape.matmul(h, bound.id(layer.ffn.w1));
        let a1 = {
            let b = bound.id(layer.ffn.b1);
            tape.add(a1, b)
        };
        let a1 = tape.relu(a1);
        let a2 = tape.matmul(a1, bound.id(layer.ffn.w2));
        let a2 = {
            let b = bound.id(layer.ffn.b2);
            tape.add(a2, b)
        };
        let ffn_out = tape.dropout(a2, dropout);
        tape.add(x, ffn_out)
    }

    fn encoder_forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        stack: &StackIdx,
        embed: usize,
        ids: &[usize],
        valid: usize,
        dropout: f64,
    ) -> NodeId {
        assert!(!ids.is_empty(), "encoder input must be non-empty");
        assert!(ids.len() <= self.config.max_seq_len, "encoder input exceeds max_seq_len");
        assert!(valid >= 1 && valid <= ids.len());
        let mut x = tape.embed(bound.id(embed), ids);
        let mask = (valid < ids.len())
            .then(|| tape.constant(pad_mask(ids.len(), ids.len(), valid)));
        let rel = RelMode::Bidirectional { max_rel: self.config.max_relative_distance };
        for layer in &stack.layers {
            x = self.layer_forward(tape, bound, x, layer, rel, mask, None, dropout);
        }
        tape.layer_norm(x, bound.id(stack.final_ln.gamma), bound.id(stack.final_ln.beta))
    }

    /// Runs the performance encoder and mean-aggregates over the valid time
    /// steps: the style bottleneck. Returns a `(d,)` node.
    pub fn encode_performance_latent_t(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        ids: &[usize],
        valid: usize,
        dropout: f64,
    ) -> NodeId {
        let stack = self.idx.perf_encoder.as_ref().expect("model has no performance encoder");
        let h = self.encoder_forward(tape, bound, stack, self.idx.perf_embed, ids, valid, dropout);
        if valid == ids.len() {
            tape.mean_rows(h)
        } else {
            // Mean over the valid rows only: h^T (L,1-weights).
            let mut w = ArrayD::zeros(IxDyn(&[ids.len(), 1]));
            for i in 0..valid {
                w[[i, 0]] = 1.0 / valid as f64;
            }
            let w = tape.constant(w);
            let ht = tape.transpose(h);
            let z = tape.matmul(ht, w);
            tape.reshape(z, &[self.config.d_model])
        }
    }

    /// Length-preserving melody encoding, `(L_mel, d)`.
    pub fn encode_melody_t(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        ids: &[usize],
        dropout: f64,
    ) -> NodeId {
        let stack = self.idx.mel_encoder.as_ref().expect("model has no melody encoder");
        let embed = self.idx.mel_embed.expect("model has no melody embedding");
        self.encoder_forward(tape, bound, stack, embed, ids, ids.len(), dropout)
    }

    /// Fuses the melody encoding with the performance latent into decoder
    /// memory, per the configured combiner.
    pub fn combine_t(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        melody_enc: NodeId,
        latent: NodeId,
    ) -> NodeId {
        let d = self.config.d_model;
        let z_row = tape.reshape(latent, &[1, d]);
        match self.config.combiner {
            Combiner::Sum => tape.add(melody_enc, z_row),
            Combiner::Concat => {
                let stop_row = tape.embed(bound.id(self.idx.perf_embed), &[self.config.stop_id()]);
                tape.concat(&[melody_enc, stop_row, z_row], 0)
            }
            Combiner::Tile => {
                let len = tape.value(melody_enc).shape()[0];
                let ones = tape.constant(ArrayD::from_elem(IxDyn(&[len, 1]), 1.0));
                let tiled = tape.matmul(ones, z_row);
                let cat = tape.concat(&[melody_enc, tiled], 1);
                let proj = bound.id(self.idx.tile_proj.expect("tile combiner needs projection"));
                tape.matmul(cat, proj)
            }
        }
    }

    /// Teacher-forced decoder logits: `inputs` are the shifted target ids
    /// (EOS-started); row i predicts the token after `inputs[..=i]`.
    pub fn decode_logits_t(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        memory: Option<NodeId>,
        inputs: &[usize],
        dropout: f64,
    ) -> NodeId {
        assert!(!inputs.is_empty());
        assert!(inputs.len() <= self.config.max_seq_len, "decoder input exceeds max_seq_len");
        assert!(
            memory.is_some() == (self.config.conditioning != Conditioning::None),
            "memory must match the conditioning mode"
        );
        let mut x = tape.embed(bound.id(self.idx.perf_embed), inputs);
        let mask = tape.constant(causal_mask(inputs.len()));
        let rel = RelMode::Causal { max_rel: self.config.max_relative_distance };
        for layer in &self.idx.decoder.layers {
            x = self.layer_forward(tape, bound, x, layer, rel, Some(mask), memory, dropout);
        }
        let x = tape.layer_norm(
            x,
            bound.id(self.idx.decoder.final_ln.gamma),
            bound.id(self.idx.decoder.final_ln.beta),
        );
        let logits = tape.matmul(x, bound.id(self.idx.out_w));
        let b = bound.id(self.idx.out_b);
        tape.add(logits, b)
    }

    /// Mean negative log-likelihood of `target` under the decoder, in nats
    /// per token. The decoder input is the EOS-started shift of the target.
    pub fn nll_t(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        memory: Option<NodeId>,
        target: &[usize],
        dropout: f64,
    ) -> NodeId {
        let inputs = self.shift_right(target);
        let logits = self.decode_logits_t(tape, bound, memory, &inputs, dropout);
        tape.cross_entropy(logits, target, &vec![1.0; target.len()])
    }

    /// EOS-started decoder input for a target sequence.
    pub fn shift_right(&self, target: &[usize]) -> Vec<usize> {
        let mut inputs = Vec::with_capacity(target.len());
        inputs.push(self.config.eos_id());
        inputs.extend_from_slice(&target[..target.len() - 1]);
        inputs
    }
}

/// A training example: what the decoder must produce and what the encoders
/// see. `enc_perf` may be a perturbed variant of the clean target.
#[derive(Debug, Clone)]
pub struct ConditioningInputs<'a> {
    pub enc_perf: Option<&'a [usize]>,
    pub melody: Option<&'a [usize]>,
}

impl Autoencoder {
    /// Builds the full training graph for one example and returns the loss
    /// node: encoders (when conditioned), combiner, decoder, cross-entropy.
    pub fn example_loss_t(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        inputs: &ConditioningInputs,
        target: &[usize],
        dropout: f64,
    ) -> NodeId {
        let memory = self.memory_t(tape, bound, inputs, dropout);
        self.nll_t(tape, bound, memory, target, dropout)
    }

    fn memory_t(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        inputs: &ConditioningInputs,
        dropout: f64,
    ) -> Option<NodeId> {
        match self.config.conditioning {
            Conditioning::None => None,
            Conditioning::Performance => {
                let perf = inputs.enc_perf.expect("performance conditioning needs encoder input");
                let z = self.encode_performance_latent_t(tape, bound, perf, perf.len(), dropout);
                Some(tape.reshape(z, &[1, self.config.d_model]))
            }
            Conditioning::PerformanceNoBottleneck => {
                let perf = inputs.enc_perf.expect("performance conditioning needs encoder input");
                let stack = self.idx.perf_encoder.as_ref().expect("model has no performance encoder");
                Some(self.encoder_forward(tape, bound, stack, self.idx.perf_embed, perf, perf.len(), dropout))
            }
            Conditioning::MelodyPerformance => {
                let perf = inputs.enc_perf.expect("conditioning needs encoder input");
                let melody = inputs.melody.expect("conditioning needs a melody");
                let z = self.encode_performance_latent_t(tape, bound, perf, perf.len(), dropout);
                let mel = self.encode_melody_t(tape, bound, melody, dropout);
                Some(self.combine_t(tape, bound, mel, z))
            }
        }
    }

    // ---- value-level (inference) helpers; dropout off, no gradients ----

    /// Style latent of a token sequence.
    pub fn latent(&self, tokens: &[usize]) -> Array1<f64> {
        let mut tape = Tape::new(0);
        let bound = self.bind(&mut tape);
        let z = self.encode_performance_latent_t(&mut tape, &bound, tokens, tokens.len(), 0.0);
        to_array1(tape.value(z))
    }

    /// Decoder memory for explicit conditioning inputs; `None` for the
    /// unconditional model.
    pub fn memory_for(&self, inputs: &ConditioningInputs) -> Option<Array2<f64>> {
        let mut tape = Tape::new(0);
        let bound = self.bind(&mut tape);
        let mem = self.memory_t(&mut tape, &bound, inputs, 0.0)?;
        Some(to_array2(tape.value(mem)))
    }

    /// Decoder memory built from an externally supplied latent (for
    /// interpolation), optionally recombined with a fixed melody.
    pub fn memory_from_latent(&self, z: &Array1<f64>, melody: Option<&[usize]>) -> Array2<f64> {
        let mut tape = Tape::new(0);
        let bound = self.bind(&mut tape);
        let z_node = tape.constant(z.clone().into_dyn());
        let mem = match (self.config.conditioning, melody) {
            (Conditioning::MelodyPerformance, Some(m)) => {
                let mel = self.encode_melody_t(&mut tape, &bound, m, 0.0);
                self.combine_t(&mut tape, &bound, mel, z_node)
            }
            _ => tape.reshape(z_node, &[1, self.config.d_model]),
        };
        to_array2(tape.value(mem))
    }

    /// Logits for the next token after `prefix`, given a fixed memory.
    pub fn next_token_logits(&self, memory: Option<&Array2<f64>>, prefix: &[usize]) -> Array1<f64> {
        let mut tape = Tape::new(0);
        let bound = self.bind(&mut tape);
        let mem = memory.map(|m| tape.constant(m.clone().into_dyn()));
        let mut inputs = Vec::with_capacity(prefix.len() + 1);
        inputs.push(self.config.eos_id());
        inputs.extend_from_slice(prefix);
        let logits = self.decode_logits_t(&mut tape, &bound, mem, &inputs, 0.0);
        let last = tape.value(logits).shape()[0] - 1;
        let row = tape.slice(logits, 0, last, 1);
        to_array1(&tape.value(row).to_shape(IxDyn(&[self.config.perf_vocab])).unwrap().to_owned())
    }

    /// Evaluation NLL of a target given a fixed memory, dropout off.
    pub fn nll_value(&self, memory: Option<&Array2<f64>>, target: &[usize]) -> f64 {
        let mut tape = Tape::new(0);
        let bound = self.bind(&mut tape);
        let mem = memory.map(|m| tape.constant(m.clone().into_dyn()));
        let loss = self.nll_t(&mut tape, &bound, mem, target, 0.0);
        tape.scalar(loss)
    }
}

fn to_array1(v: &ArrayD<f64>) -> Array1<f64> {
    v.view().into_dimensionality::<ndarray::Ix1>().unwrap().to_owned()
}

fn to_array2(v: &ArrayD<f64>) -> Array2<f64> {
    v.view().into_dimensionality::<ndarray::Ix2>().unwrap().to_owned()
}
