//! Trains two entity+coreference models on a corpus where every cluster's
//! second mention is the pronoun `it`, one with coreference propagation and
//! one without, and compares entity F1 on the pronouns of a held-out split.
//!
//! ```text
//! cargo run --release --example coref_ablation -- [epochs] [train_docs]
//! ```

use std::time::Instant;

use spangraph::corpus::{generate_synthetic, SyntheticConfig};
use spangraph::engine::{TrainConfig, Trainer};
use spangraph::heads::TaskWeights;
use spangraph::model::{ModelConfig, PropagationConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(80);
    let n_docs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(50);

    let train = generate_synthetic(&SyntheticConfig {
        n_docs,
        ambiguity_rate: 1.0,
        seed: 11,
        ..SyntheticConfig::default()
    })?;
    let dev = generate_synthetic(&SyntheticConfig {
        n_docs: 50,
        ambiguity_rate: 1.0,
        seed: 12,
        ..SyntheticConfig::default()
    })?;

    for (name, propagation) in [
        (
            "coref propagation",
            PropagationConfig {
                relation: false,
                event: false,
                ..PropagationConfig::default()
            },
        ),
        ("no propagation", PropagationConfig::none()),
    ] {
        let model = ModelConfig {
            propagation,
            task_weights: TaskWeights {
                relation: 0.0,
                trigger: 0.0,
                argument: 0.0,
                ..TaskWeights::default()
            },
            ..ModelConfig::default()
        };
        let config = TrainConfig {
            max_epochs: epochs,
            early_stopping_patience: 0,
            ..TrainConfig::default()
        };
        let docs = &train.corpus.documents;
        let mut trainer = Trainer::new(model, config, train.corpus.schema.clone(), docs, &[], None)?;
        let start = Instant::now();
        while !trainer.finished() {
            let r = trainer.run_epoch()?;
            if (r.epoch + 1) % 5 == 0 || trainer.finished() {
                let score =
                    |c: &spangraph::corpus::SyntheticCorpus| -> Result<f64, Box<dyn std::error::Error>> {
                        let preds: Vec<_> = trainer
                            .predict(&c.corpus.documents)?
                            .into_iter()
                            .map(|p| p.document)
                            .collect();
                        Ok(c.ambiguous_counts(&preds).score().f1)
                    };
                println!(
                    "{name:>18}  epoch {:3}  loss {:.4}  pronoun F1 train {:.3}  dev {:.3}  {:.0}s",
                    r.epoch,
                    r.train_loss,
                    score(&train)?,
                    score(&dev)?,
                    start.elapsed().as_secs_f64()
                );
            }
        }
    }
    Ok(())
}
