// Scratch calibration: timing and convergence of the desk trainings.
use etude::model::{Autoencoder, Conditioning, ModelConfig};
use etude::synth::style_corpus;
use etude::train::{matched_memory, prepare_corpus, train, eval_nll, shuffled_memory, TrainConfig};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let mode = args.get(2).map(|s| s.as_str()).unwrap_or("memorize");

    match mode {
        "memorize" => {
            // Criterion 4 shape: 8 sequences of ~64 tokens.
            let corpus: Vec<_> = style_corpus(2, 5, 64).into_iter().map(|(_, s)| s).collect();
            for conditioning in [Conditioning::PerformanceNoBottleneck, Conditioning::Performance] {
                let mut cfg = ModelConfig::desk(conditioning);
                cfg.dropout = 0.0;
                let mut model = Autoencoder::new(cfg, 1).unwrap();
                let examples = prepare_corpus(&model, &corpus).unwrap();
                let tc = TrainConfig { steps, batch_size: 8, seed: 9, base_lr: 0.15, warmup: 200, log_every: 50, perturb_inputs: false };
                let t0 = Instant::now();
                let log = train(&mut model, &examples, &tc).unwrap();
                let dt = t0.elapsed().as_secs_f64();
                let train_nll = eval_nll(&model, &examples, |_, ex| matched_memory(&model, ex));
                println!("{conditioning:?}: {steps} steps in {dt:.1}s ({:.3} s/step), final batch NLL {:.4}, eval NLL {train_nll:.4}",
                    dt / steps as f64, log.final_nll().unwrap());
                for (s, l) in &log.losses { println!("  step {s}: {l:.4}"); }
            }
        }
        "conditioning" => {
            // Criterion 5 shape: 4 styles x 8 train + 4 held out per style.
            let all = style_corpus(10, 5, 64);
            let train_set: Vec<_> = all.iter().filter(|(_, _)| true).enumerate().filter(|(i, _)| i % 10 < 8).map(|(_, (_, s))| s.clone()).collect();
            let held: Vec<_> = all.iter().enumerate().filter(|(i, _)| i % 10 >= 8).map(|(_, (_, s))| s.clone()).collect();
            println!("train {} held {}", train_set.len(), held.len());
            for conditioning in [Conditioning::Performance, Conditioning::None] {
                let cfg = ModelConfig::desk(conditioning);
                let mut model = Autoencoder::new(cfg, 2).unwrap();
                let examples = prepare_corpus(&model, &train_set).unwrap();
                let tc = TrainConfig { steps, batch_size: 8, seed: 10, base_lr: 0.15, warmup: 200, log_every: 100, perturb_inputs: false };
                let t0 = Instant::now();
                let log = train(&mut model, &examples, &tc).unwrap();
                let dt = t0.elapsed().as_secs_f64();
                let heldex = prepare_corpus(&model, &held).unwrap();
                let matched = eval_nll(&model, &heldex, |_, ex| matched_memory(&model, ex));
                let shuffled = eval_nll(&model, &heldex, |i, _| shuffled_memory(&model, &heldex, i));
                println!("{conditioning:?}: {steps} steps in {dt:.1}s, final {:.4}, held matched {matched:.4} shuffled {shuffled:.4}",
                    log.final_nll().unwrap());
            }
        }
        _ => eprintln!("unknown mode"),
    }
}
