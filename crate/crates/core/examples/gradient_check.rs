//! Central-difference check of the complete training loss: recurrent
//! encoder with cross-sentence context, span representations, all three
//! propagation mechanisms, every head and the pruner losses, on a random
//! two-document batch.
//!
//! Beams are made large enough to keep every candidate, so the discrete
//! selection cannot change between the perturbed evaluations.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spangraph::corpus::{generate_synthetic, SyntheticConfig};
use spangraph::encoder::{EncoderConfig, Vocab};
use spangraph::model::{Model, ModelConfig, ModelError, SpanConfig};
use spangraph::tensor::finite_difference_check;
use spangraph::tensor::ParamStore;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let synth = generate_synthetic(&SyntheticConfig {
        n_docs: 2,
        vocab_size: 20,
        seed: 5,
        ..SyntheticConfig::default()
    })?;
    let docs = synth.corpus.documents;
    let config = ModelConfig {
        encoder: EncoderConfig {
            embed_dim: 3,
            window: 1,
            recurrent_contextualizer: true,
            recurrent_hidden: 2,
            ..EncoderConfig::default()
        },
        spans: SpanConfig {
            max_width: 3,
            width_dim: 2,
            dim: 4,
            mention_ratio: 100.0,
            trigger_ratio: 100.0,
            max_antecedents: 4,
        },
        hidden: 3,
        event_hidden: 3,
        ..ModelConfig::default()
    };
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let model = Model::new(
        config,
        synth.corpus.schema,
        Vocab::build(&docs),
        &mut store,
        &mut rng,
    )?;
    let batch: Vec<_> = docs.iter().collect();
    println!(
        "{} parameters, {} sentences",
        store.num_scalars(),
        docs.iter().map(|d| d.sentences.len()).sum::<usize>()
    );

    let start = Instant::now();
    let report = finite_difference_check(
        |g| -> Result<_, ModelError> { model.batch_loss(g, &batch, None) },
        &mut store,
        1e-5,
    )?;
    println!(
        "checked {} coordinates in {:.1}s",
        report.coordinates,
        start.elapsed().as_secs_f64()
    );
    println!(
        "max relative error {:.3e} at {}[{}] (analytic {:.6e}, numeric {:.6e})",
        report.max_rel_error,
        report.worst_param.as_deref().unwrap_or("-"),
        report.worst_index,
        report.analytic,
        report.numeric
    );
    println!("whole-gradient relative error {:.3e}", report.vector_rel_error);
    Ok(())
}
