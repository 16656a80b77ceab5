use expnet_model::ModelConfig;
use expnet_train::{synth, SyntheticSpec, TrainConfig, trainer};

fn main() {
    expnet_core::par::set_threads(2);
    let spec = SyntheticSpec { classes: 4, per_class: 60, noise: 0.01, ..Default::default() };
    let data = synth::generate(&spec).unwrap();
    let model = ModelConfig::default();
    let cfg = TrainConfig {
        epochs: 20,
        weight_decay: 1e-3,
        eval_fraction: 0.2,
        early_stop_acc: 1.0,
        ..Default::default()
    };
    let out = trainer::train(&model, &cfg, &data, None).unwrap();
    for log in &out.logs { println!("{}", log.line()); }
}
