mod common;

use chebcnn::nn::{ArchConfig, ChebConv, ChebConvSpec, Model, NetworkSpec, Squash};
use chebcnn::train::PROB_FLOOR;
use common::*;

#[test]
fn tanh_softmax_and_concat() {
    let mut r = rng(10);
    let a = random_tensor(&[2, 1, 3, 3], &mut r);
    let b = random_tensor(&[2, 2, 3, 3], &mut r);
    let err = gradcheck(&[a, b], |t, v| {
        let y = t.concat(&[v[0], v[1]], 1).unwrap();
        let y = t.tanh(y).unwrap();
        project(t, y, 1)
    });
    assert!(err < GRAD_TOL, "{err}");

    let logits = random_tensor(&[4, 3], &mut r);
    let err = gradcheck(&[logits], |t, v| {
        let p = t.softmax_rows(v[0]).unwrap();
        project(t, p, 2)
    });
    assert!(err < GRAD_TOL, "{err}");
}

#[test]
fn losses() {
    let mut r = rng(11);
    let logits = random_tensor(&[5, 3], &mut r);
    let labels = [0, 2, 1, 1, 0];
    let weights = [0.7, 1.3, 2.0];
    let err = gradcheck(std::slice::from_ref(&logits), |t, v| {
        let p = t.softmax_rows(v[0]).unwrap();
        t.weighted_nll(p, &labels, &weights, PROB_FLOOR).unwrap()
    });
    assert!(err < GRAD_TOL, "{err}");
    let err = gradcheck(&[logits], |t, v| t.weighted_softmax_ce(v[0], &labels, &weights, PROB_FLOOR).unwrap());
    assert!(err < GRAD_TOL, "{err}");

    let w = random_tensor(&[3, 4], &mut r);
    let err = gradcheck(&[w], |t, v| {
        let s = t.sum_squares(v[0]).unwrap();
        t.scale(s, 0.5).unwrap()
    });
    assert!(err < GRAD_TOL, "{err}");
}

#[test]
fn cheb_conv_every_order() {
    let mut r = rng(12);
    for order in 0..=5 {
        for squash in [Squash::Tanh, Squash::Identity] {
            let mut layer = ChebConv::<f64>::zeros(ChebConvSpec {
                in_channels: 1,
                out_channels: 2,
                order,
            });
            layer.squash = squash;
            // Identity squash needs inputs inside [-1, 1] to stay well conditioned.
            let mut ins = vec![random_tensor(&[2, 1, 4, 4], &mut r).map(|x| 0.9 * x)];
            ins.extend((0..=order).map(|_| random_tensor(&[2, 1, 3, 3], &mut r)));
            ins.push(random_tensor(&[2], &mut r));
            let err = gradcheck(&ins, |t, v| {
                let y = layer.forward(t, v[0], &v[1..=order + 1], v[order + 2]).unwrap();
                project(t, y, 3)
            });
            assert!(err < GRAD_TOL, "order {order} {squash:?}: {err}");
        }
    }
}

#[test]
fn standard_conv_network_with_l2() {
    let arch = ArchConfig {
        conv1_filters: 2,
        conv1_order: 1,
        conv2_filters: 2,
        conv2_order: 1,
        dense_width: 4,
        dropout: 0.3,
    };
    let spec = NetworkSpec::cheb_cnn(8, 3, &arch).standard_conv();
    let model = Model::<f64>::build(&spec, 5).unwrap();
    let input = random_tensor(&[4, 1, 8, 8], &mut rng(13));
    let err = model_gradcheck(&model, &input, &[0, 1, 2, 1], 0.05);
    assert!(err < GRAD_TOL, "{err}");
}

#[test]
fn f32_model_tracks_f64_shadow() {
    let arch = ArchConfig {
        conv1_filters: 2,
        conv1_order: 3,
        conv2_filters: 2,
        conv2_order: 2,
        dense_width: 6,
        dropout: 0.0,
    };
    let shadow = Model::<f64>::build(&NetworkSpec::cheb_cnn(8, 3, &arch), 21).unwrap();
    let single: Model<f32> = shadow.cast();
    let x = random_tensor(&[3, 1, 8, 8], &mut rng(14));
    let p64 = shadow.predict(&x).unwrap();
    let p32 = single.predict(&x.cast::<f32>()).unwrap();
    let diff = p64
        .data()
        .iter()
        .zip(p32.data())
        .map(|(a, b)| (a - *b as f64).abs())
        .fold(0.0, f64::max);
    assert!(diff < 1e-5, "{diff}");
}
