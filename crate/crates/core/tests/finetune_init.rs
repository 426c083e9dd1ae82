//! Starting fine-tuning from a pre-training checkpoint versus random weights on the camouflage preset.

use bothp::eval::{median, ExperimentConfig};
use bothp::finetune::{finetune, TrainedModel};
use bothp::pretext::pretrain;
use bothp::synth::{generate, preset};

fn selected_val_f1(model: &TrainedModel) -> f64 {
    let epoch = model.trace.selected_epoch;
    model.trace.epochs[epoch - 1].val_f1.expect("preset has a validation split")
}

#[test]
fn checkpoint_init_matches_or_beats_random_init() {
    let graph = generate(&preset("camouflage").unwrap()).unwrap().0.graph;
    let exp = ExperimentConfig::default();
    let encoder = exp.encoder_for(&graph);
    let mut from_ckpt = Vec::new();
    let mut from_random = Vec::new();
    for seed in 0..5 {
        let pre = bothp::pretext::PretrainConfig { seed, ..exp.pretrain.clone() };
        let ft = bothp::finetune::FinetuneConfig { seed, ..exp.finetune.clone() };
        let ckpt = pretrain(&graph, &pre, &encoder).unwrap();
        from_ckpt.push(selected_val_f1(&finetune(&graph, Some(&ckpt), &ft, &encoder).unwrap()));
        from_random.push(selected_val_f1(&finetune(&graph, None, &ft, &encoder).unwrap()));
    }
    let (a, b) = (median(&from_ckpt), median(&from_random));
    assert!(a >= b, "median val F1 {a} (checkpoint) < {b} (random): {from_ckpt:?} vs {from_random:?}");
}
