//! Save a trained model, load it back and check the predictions agree.

use promobench::checkpoint::{load, save, CheckpointInfo};
use promobench::harness::{evaluate, split, train, SplitSpec, TrainSpec};
use promobench::modelzoo::{build, ModelSpec};
use promobench::synthgen::{generate_in_memory, GenSpec};

fn main() -> promobench::Result<()> {
    let gen = GenSpec::with_sizes(10_000, 20, 5, 1);
    let (_, ds) = generate_in_memory(&gen)?;
    let splits = split(ds.len(), &SplitSpec::random(2))?;
    let spec = ModelSpec::deep(3, 20, 5).with_hidden(&[32, 16]);
    let mut model = build(&spec, 3)?;
    train(&mut model, &ds, &splits, &TrainSpec { max_epochs: 40, seed: 4, ..TrainSpec::default() })?;

    let path = std::env::temp_dir().join("promobench-example.ckpt");
    let info = CheckpointInfo { init_seed: 3, train_seed: 4, ..CheckpointInfo::default() };
    save(&model, &info, &path)?;
    let (back, back_info) = load(&path)?;
    println!("{} bytes, {} parameters", std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0), back.param_count());
    assert_eq!(back_info, info);
    // weights come back exactly; optimizer moments are not part of a checkpoint
    for (a, b) in model.params().iter().zip(back.params().iter()) {
        assert_eq!((&a.name, &a.value), (&b.name, &b.value));
    }

    let a = evaluate(&model, &ds, &splits.test)?;
    let b = evaluate(&back, &ds, &splits.test)?;
    println!("test accuracy before {:.4}, after {:.4}", a.accuracy, b.accuracy);
    Ok(())
}
