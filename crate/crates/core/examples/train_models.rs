//! Train the wide, deep and wide & deep models on one small dataset and
//! compare them on the same random split.

use promobench::harness::{evaluate, evaluate_splits, split, train, RandomPolicy, SplitSpec, TrainSpec};
use promobench::modelzoo::{build, ModelSpec};
use promobench::synthgen::{generate_in_memory, GenSpec};

fn main() -> promobench::Result<()> {
    let gen = GenSpec::with_sizes(40_000, 40, 8, 3);
    let (_, ds) = generate_in_memory(&gen)?;
    let splits = split(ds.len(), &SplitSpec::random(1))?;
    let train_spec = TrainSpec {
        max_epochs: 30,
        seed: 2,
        ..TrainSpec::default()
    };

    let random = RandomPolicy { n_offers: ds.n_offers, seed: 9 };
    println!("{:<10} test {:.3}", "random", evaluate(&random, &ds, &splits.test)?.accuracy);

    let (c, k) = (gen.n_customers, gen.n_campaigns);
    let mut specs = vec![ModelSpec::wide(c, k)];
    specs.extend((1..=4).map(|v| ModelSpec::deep(v, c, k).with_hidden(&[64, 32])));
    specs.push(ModelSpec::wide_deep(c, k).with_hidden(&[64, 32]));

    for spec in specs {
        let mut model = build(&spec, 4)?;
        let log = train(&mut model, &ds, &splits, &train_spec)?;
        let r = evaluate_splits(&model, &ds, &splits)?;
        println!(
            "{:<10} epochs {:>3} (best {:>3})  train {:.3}  valid {:.3}  test {:.3}  within-one {:.3}",
            spec.label(),
            log.epochs_trained(),
            log.best_epoch,
            r.train.accuracy,
            r.valid.accuracy,
            r.test.accuracy,
            r.test.within_one_fraction
        );
    }
    Ok(())
}
