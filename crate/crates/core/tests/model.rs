mod common;

use pcnprobe_core::model::checkpoint::Checkpoint;
use pcnprobe_core::model::{Encoder, GenerativeChain, Module, PcnModel};
use pcnprobe_core::numerics::ops::BnMode;
use pcnprobe_core::numerics::{RngStream, Tensor};

#[test]
fn encoder_shapes() {
    let m = PcnModel::<f32>::init(42);
    let x = Tensor::zeros(&[2, 3, 32, 32]);
    let ff = m.encoder.forward(&x, BnMode::Eval).unwrap();
    let shapes: Vec<&[usize]> = ff.z.iter().map(|t| t.shape()).collect();
    assert_eq!(shapes, [&[2, 32, 16, 16][..], &[2, 64, 8, 8], &[2, 256], &[2, 10]]);
    assert!(m.encoder.forward(&Tensor::zeros(&[2, 3, 16, 16]), BnMode::Eval).is_err());
}

#[test]
fn zero_input_gives_zero_first_latent() {
    let m = PcnModel::<f32>::init(7);
    let ff = m.encoder.forward(&Tensor::zeros(&[1, 3, 32, 32]), BnMode::Eval).unwrap();
    assert!(ff.z[0].data().iter().all(|&v| v == 0.0));
}

#[test]
fn seeded_logits_match_direct_recomputation() {
    let mut m = PcnModel::<f32>::init(42);
    // non-trivial running statistics so the eval-mode path is exercised
    let mut rng = RngStream::new(1);
    for b in m.encoder.buffers_mut() {
        let shape = b.shape().to_vec();
        *b = rng.uniform_tensor(&shape, 0.5, 1.5);
    }
    let x: Tensor<f32> = rng.normal_tensor(&[2, 3, 32, 32], 1.0);
    let ff = m.encoder.forward(&x, BnMode::Eval).unwrap();
    let want = common::encoder(&m, &common::to_f64(&x), 2);
    for l in 0..4 {
        let err = ff.z[l].data().iter().zip(&want[l]).map(|(a, b)| (*a as f64 - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-4, "z{} differs by {err}", l + 1);
    }
}

#[test]
fn encoder_eval_is_deterministic() {
    let m = PcnModel::<f32>::init(3);
    let x: Tensor<f32> = RngStream::new(2).normal_tensor(&[3, 3, 32, 32], 1.0);
    assert_eq!(m.encoder.forward(&x, BnMode::Eval).unwrap(), m.encoder.forward(&x, BnMode::Eval).unwrap());
}

#[test]
fn g3_zero_weights_predicts_bias() {
    let mut c = GenerativeChain::<f32>::init(&RngStream::new(0));
    c.g3.weight.fill(0.0);
    c.g3.bias = Tensor::from_fn(&[256], |i| i as f32 * 0.01);
    let z4: Tensor<f32> = RngStream::new(5).normal_tensor(&[3, 10], 1.0);
    let p = c.predict(3, &z4).unwrap();
    for i in 0..3 {
        assert_eq!(p.item(i), c.g3.bias.data());
    }
}

#[test]
fn one_hot_selects_a_column() {
    let c = GenerativeChain::<f64>::init(&RngStream::new(9));
    let mut e = Tensor::zeros(&[1, 10]);
    e.data_mut()[4] = 1.0;
    let p = c.predict(3, &e).unwrap();
    for j in 0..256 {
        let want = c.g3.weight.data()[j * 10 + 4] + c.g3.bias.data()[j];
        assert!((p.data()[j] - want).abs() < 1e-15);
    }
}

#[test]
fn predictions_match_dense_algebra() {
    let mut rng = RngStream::new(11);
    let c = GenerativeChain::<f64>::init(&rng);
    let n = 2;
    let z: [Tensor<f64>; 4] = [
        rng.normal_tensor(&[n, 32, 16, 16], 1.0),
        rng.normal_tensor(&[n, 64, 8, 8], 1.0),
        rng.normal_tensor(&[n, 256], 1.0),
        rng.normal_tensor(&[n, 10], 1.0),
    ];
    let flat = z.clone().map(|t| t.data().to_vec());
    let want = common::predictions(&c, &flat, n);
    for level in 1..=3 {
        let got = c.predict(level, &z[level]).unwrap();
        assert_eq!(got.shape(), z[level - 1].shape());
        let err = got.data().iter().zip(&want[level - 1]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-5, "level {level}: {err}");
    }
    assert!(c.predict(0, &z[0]).is_err());
    assert!(c.predict(4, &z[3]).is_err());
}

#[test]
fn parameter_accounting() {
    let m = PcnModel::<f32>::init(0);
    let enc: &Encoder<f32> = &m.encoder;
    assert_eq!(Module::param_count(enc), 1_070_986);
    assert_eq!(Module::param_count(&m.chain), 1_073_952);
    assert_eq!(m.param_count(), 2_144_938);
    assert_eq!(Module::param_count(enc) + Module::param_count(&m.chain), m.param_count());
}

#[test]
fn checkpoints_are_reproducible_and_round_trip() {
    let bytes = |seed| {
        let mut ck = Checkpoint::<f32>::new();
        ck.add_module("model.", &PcnModel::<f32>::init(seed));
        ck.to_bytes()
    };
    assert_eq!(bytes(42), bytes(42));
    assert_ne!(bytes(42), bytes(43));
    assert_eq!(&bytes(42)[..9], b"PCNPROBE1");

    let src = PcnModel::<f32>::init(5);
    let mut ck = Checkpoint::new();
    ck.add_module("model.", &src);
    let back = Checkpoint::<f32>::from_bytes(&ck.to_bytes()).unwrap();
    let mut dst = PcnModel::<f32>::init(6);
    back.load_module("model.", &mut dst).unwrap();
    assert_eq!(dst.named_params(), src.named_params());
    assert_eq!(dst.named_buffers(), src.named_buffers());
}
