use dlvgrasp::classifier::{
    train, Architecture, ClassifierModel, GraspClassifier, LabelSource, LabeledExample, Prediction,
    TrainConfig,
};
use dlvgrasp::features::{FeatureTensor, CHANNELS};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn tensor(size: usize, seed: u64, mean: f64) -> FeatureTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(mean, 1.0).unwrap();
    let data = (0..CHANNELS * size * size)
        .map(|_| noise.sample(&mut rng))
        .collect();
    FeatureTensor::new(size, data).unwrap()
}

fn separable(n: usize, size: usize) -> Vec<LabeledExample> {
    (0..n)
        .map(|i| {
            let label = i % 3 == 0;
            LabeledExample {
                // Class means 5 standard deviations apart.
                tensor: tensor(size, i as u64, if label { 2.5 } else { -2.5 }),
                label,
                source: LabelSource::External,
            }
        })
        .collect()
}

proptest! {
    #[test]
    fn confidence_is_a_normalized_softmax(z0 in -50.0f64..50.0, z1 in -50.0f64..50.0) {
        let p = Prediction::from_logits([z0, z1]);
        let q = Prediction::from_logits([z1, z0]);
        prop_assert!((0.0..=1.0).contains(&p.confidence));
        prop_assert!((p.confidence + q.confidence - 1.0).abs() <= 1e-6);
        prop_assert_eq!(p.graspable, z1 > z0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn inference_is_pure_and_examples_do_not_interact(
        seed in any::<u64>(),
        lenet in any::<bool>(),
    ) {
        let arch = if lenet {
            Architecture::LeNet { input_size: 16 }
        } else {
            Architecture::Logistic { input_size: 16 }
        };
        let model = ClassifierModel::init(arch, seed).unwrap();
        let a = tensor(16, seed, 0.0);
        let b = tensor(16, seed ^ 1, 0.5);
        let alone = model.classify(&a).unwrap();
        prop_assert_eq!(model.classify(&a).unwrap(), alone);
        let batch = model
            .classify_batch(&[a.clone(), b.clone(), a.clone(), b])
            .unwrap();
        prop_assert_eq!(batch[0], alone);
        prop_assert_eq!(batch[2], alone);
        prop_assert_eq!(batch[1], batch[3]);
    }
}

/// Optimizer jitter once the loss has converged to this level.
const LOSS_FLOOR: f64 = 1e-4;

#[test]
fn loss_does_not_increase_on_separable_data() {
    let data = separable(60, 16);
    for arch in [
        Architecture::LeNet { input_size: 16 },
        Architecture::Logistic { input_size: 16 },
    ] {
        let cfg = TrainConfig {
            epochs: 8,
            ..TrainConfig::default()
        };
        let (model, log) = train(arch, &data, &cfg).unwrap();
        assert_eq!(log.len(), 8);
        for w in log.windows(2) {
            assert!(
                w[1].loss <= w[0].loss + LOSS_FLOOR,
                "{arch:?}: loss rose from {} to {} at epoch {}",
                w[0].loss,
                w[1].loss,
                w[1].epoch
            );
        }
        assert!(model.meta.final_accuracy >= 0.99);
    }
}
