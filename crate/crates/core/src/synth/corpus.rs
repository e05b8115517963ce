use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::descriptor::DescriptorTriple;
use crate::merger::TrainSample;
use crate::synth::PrototypeEmbedder;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorpusTarget {
    /// The class prototype, i.e. the text embedding of the true class.
    Prototype,
    /// The sample's own masked-crop descriptor.
    Masked,
}

/// Crop triples drawn without rendering. Each sample picks a class; with
/// probability `context_probability` its bbox crop also sees 1 to
/// `max_context` other classes, and the whole frame shows up to
/// `max_context` further classes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusPlan {
    pub samples: usize,
    pub context_probability: f64,
    pub max_context: usize,
    pub target: CorpusTarget,
    pub seed: u64,
}

impl Default for CorpusPlan {
    fn default() -> Self {
        Self { samples: 1000, context_probability: 0.5, max_context: 2, target: CorpusTarget::Prototype, seed: 0 }
    }
}

pub fn fusion_corpus(embedder: &PrototypeEmbedder, plan: &CorpusPlan) -> Vec<TrainSample> {
    let classes = embedder.prototypes().len();
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    (0..plan.samples)
        .map(|_| {
            let class = rng.random_range(0..classes) as u32;
            let others: Vec<u32> = (0..classes as u32).filter(|&c| c != class).collect();
            let pick = |rng: &mut ChaCha8Rng, n: usize| -> Vec<u32> {
                let n = n.min(others.len());
                sample(rng, others.len(), n).into_iter().map(|i| others[i]).collect()
            };
            let context: Vec<(u32, f64)> = if plan.max_context > 0 && rng.random_bool(plan.context_probability) {
                let n = rng.random_range(1..=plan.max_context);
                pick(&mut rng, n).into_iter().map(|c| (c, rng.random_range(0.5..1.5))).collect()
            } else {
                Vec::new()
            };
            let mut visible: Vec<u32> = std::iter::once(class).chain(context.iter().map(|c| c.0)).collect();
            let extra = rng.random_range(0..=plan.max_context);
            visible.extend(pick(&mut rng, extra));
            visible.sort_unstable();
            visible.dedup();

            let global = embedder.global(&visible, &mut rng);
            let masked = embedder.masked(class, &mut rng);
            let bbox = embedder.bbox(class, &context, &mut rng);
            let target = match plan.target {
                CorpusTarget::Prototype => embedder.prototype(class).clone(),
                CorpusTarget::Masked => masked.clone(),
            };
            TrainSample { triple: DescriptorTriple::new(global, masked, bbox).expect("shared dimension"), target }
        })
        .collect()
}
