//! Compare backprop gradients of every architecture with central differences.

use promobench::modelzoo::{build, Model, ModelInput, ModelSpec};
use promobench::ndnum::{DropoutMode, ParamId};
use promobench::rng::Stream;

const H: f64 = 1e-5;

fn inputs(n: usize, rng: &mut Stream) -> (Vec<ModelInput>, Vec<usize>) {
    let xs = (0..n)
        .map(|_| ModelInput {
            user_id: rng.below(4),
            campaign_id: rng.below(3),
            known_features: [0.0; 4].map(|_| rng.uniform_in(-0.5, 0.5)),
            hidden_features: [0.0; 2].map(|_| rng.uniform_in(-0.2, 0.2)),
        })
        .collect();
    let labels = (0..n).map(|_| rng.below(5)).collect();
    (xs, labels)
}

fn loss(model: &Model, xs: &[ModelInput], labels: &[usize]) -> f64 {
    let (g, l) = model
        .loss_graph(xs, labels, DropoutMode::Off, &mut Stream::new(0))
        .unwrap();
    g.value(l).data()[0]
}

fn worst_rel_err(model: &mut Model, xs: &[ModelInput], labels: &[usize]) -> f64 {
    model.params_mut().zero_grad();
    let (g, l) = model
        .loss_graph(xs, labels, DropoutMode::Off, &mut Stream::new(0))
        .unwrap();
    g.backward(l, model.params_mut()).unwrap();
    let mut worst = 0.0_f64;
    for p in 0..model.params().len() {
        let id = ParamId(p);
        let analytic = model.params().get(id).grad.data().to_vec();
        for (i, a) in analytic.iter().enumerate() {
            let orig = model.params().get(id).value.data()[i];
            model.params_mut().get_mut(id).value.data_mut()[i] = orig + H;
            let up = loss(model, xs, labels);
            model.params_mut().get_mut(id).value.data_mut()[i] = orig - H;
            let down = loss(model, xs, labels);
            model.params_mut().get_mut(id).value.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * H);
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
        }
    }
    worst
}

fn main() {
    let small = |s: ModelSpec| ModelSpec {
        n_offers: 5,
        user_embed_dim: 3,
        campaign_embed_dim: 2,
        multihead_width: 6,
        ..s.with_hidden(&[8, 6])
    };
    let mut rng = Stream::new(11);
    let (xs, labels) = inputs(6, &mut rng);
    let mut specs = vec![small(ModelSpec::wide(4, 3))];
    specs.extend((1..=4).map(|v| small(ModelSpec::deep(v, 4, 3))));
    specs.push(small(ModelSpec::wide_deep(4, 3)));
    for spec in specs {
        let mut model = build(&spec, 5).unwrap();
        let err = worst_rel_err(&mut model, &xs, &labels);
        println!("{:<10} {:>5} params  max rel err {err:.2e}", spec.label(), model.param_count());
    }
}
