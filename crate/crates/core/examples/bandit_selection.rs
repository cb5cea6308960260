//! Greedy, Thompson sampling and UCB offer selection on a trained wide & deep
//! model whose multi-head dropout layer supplies the posterior samples.

use promobench::banditsel::{evaluate_policy, ts_select, ucb_select, Algorithm, BanditConfig};
use promobench::harness::{split, train, SplitSpec, TrainSpec};
use promobench::modelzoo::{build, ModelInput, ModelSpec};
use promobench::rng::Stream;
use promobench::synthgen::{generate_in_memory, GenSpec};

fn main() -> promobench::Result<()> {
    let gen = GenSpec::with_sizes(30_000, 30, 6, 5);
    let (_, ds) = generate_in_memory(&gen)?;
    let splits = split(ds.len(), &SplitSpec::random(1))?;
    let spec = ModelSpec::wide_deep(gen.n_customers, gen.n_campaigns).with_hidden(&[64, 32]);
    let mut model = build(&spec, 4)?;
    train(&mut model, &ds, &splits, &TrainSpec { max_epochs: 20, seed: 2, ..TrainSpec::default() })?;

    let row = &ds.rows[splits.test[0]];
    let input = ModelInput::from(row);
    let mut rng = Stream::new(17);
    let draws: Vec<usize> = (0..10).map(|_| ts_select(&model, &input, 0.3, &mut rng)).collect::<Result<_, _>>()?;
    println!("true offer {}, greedy {}", row.offer, model.predict_offer(&input)?);
    println!("ten Thompson draws: {draws:?}");
    let ucb = ucb_select(&model, &input, &BanditConfig::new(Algorithm::Ucb, 0), &mut rng)?;
    println!("UCB (5th largest of 100): {ucb}");

    for alg in [Algorithm::None, Algorithm::Ts, Algorithm::Ucb] {
        let cfg = BanditConfig::new(alg, 21);
        let r = evaluate_policy(&model, &ds, &splits.test, &cfg)?;
        println!("{:<5} test accuracy {:.4}", alg.name(), r.eval.accuracy);
    }
    Ok(())
}
