use sslv::data::{generate_clip_dataset, SyntheticClipSpec};
use sslv::models::{train_supervised, ClipModelSpec, Example, TrainConfig};

#[test]
fn toy_model_separates_generated_classes() {
    let spec = SyntheticClipSpec {
        clips_per_class: 24,
        noise_sigma: 0.1,
        ..SyntheticClipSpec::default()
    };
    let (clips, labels) = generate_clip_dataset(&spec).unwrap();
    let (train, test) = clips.split_at(64);
    let examples: Vec<Example> = train
        .iter()
        .zip(&labels)
        .map(|(clip, &label)| Example { clip, label })
        .collect();
    let model_spec = ClipModelSpec::default();
    let outcome = train_supervised(&model_spec, &examples, &TrainConfig::default(), 1).unwrap();
    let correct = test
        .iter()
        .zip(&labels[64..])
        .filter(|(clip, &label)| outcome.model.predict(clip).unwrap().predicted_class == label)
        .count();
    let acc = correct as f64 / test.len() as f64;
    eprintln!("held-out accuracy {acc}");
    assert!(acc > 0.9, "held-out accuracy {acc}");
}
