use pel_core::gradcheck::{self, Tolerance};
use pel_core::net::{Adam, Checkpoint, NetworkConfig, PelNetwork, StreamKind, Trainer, LOG_HEADER};
use pel_core::synth::{self, ForgerySample};
use pel_core::{Dims, Error, Graph, ParamStore, RgbImage, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config() -> NetworkConfig {
    NetworkConfig {
        widths: vec![4, 8, 8, 8],
        input_size: 16,
        batch_size: 4,
        epochs: 2,
        train_size: 8,
        val_size: 4,
        test_size: 4,
        ..NetworkConfig::default()
    }
}

fn random_image(size: usize, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RgbImage::from_fn(size, size, |_, _| [rng.gen(), rng.gen(), rng.gen()]).unwrap()
}

/// Replaces every parameter with small random values so that no path is
/// gated off by zero initialization.
fn randomize(store: &mut ParamStore, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in store.iter_mut() {
        let fan_in = p.tensor.len() / p.tensor.dims().n;
        let bound = (3.0 / fan_in as f64).sqrt().min(0.5);
        for v in p.tensor.data_mut() {
            *v = rng.gen_range(-bound..bound);
        }
    }
}

#[test]
fn config_text_round_trip_and_errors() {
    let cfg = NetworkConfig {
        kernels: vec![3, 5],
        use_mutual: false,
        lr: 3.5e-4,
        seed: 17,
        ..NetworkConfig::default()
    };
    assert_eq!(NetworkConfig::parse(&cfg.to_text()).unwrap(), cfg);
    let parsed = NetworkConfig::parse("# comment\n\nuse_freq = false  # trailing\nwidths = 8, 8, 16, 16\n").unwrap();
    assert!(!parsed.use_freq);
    assert_eq!(parsed.widths, vec![8, 8, 16, 16]);
    for bad in [
        "colour = red",
        "lr = fast",
        "use_rgb = false\nuse_freq = false",
        "num_blocks = 2\nwidths = 4,4\nstrides = 2,2",
        "widths = 4,4,4",
        "strides = 3,2,2,2",
        "kernels = 4",
        "seed = 1\nseed = 2",
        "train_size = 7",
        "no equals sign",
    ] {
        assert!(matches!(NetworkConfig::parse(bad), Err(Error::Config(_))), "{bad}");
    }
}

#[test]
fn zero_head_gives_half_probability() {
    for (rgb, freq, self_e, mutual) in [(true, true, true, true), (true, false, true, true), (false, true, false, false)] {
        let cfg = NetworkConfig {
            use_rgb: rgb,
            use_freq: freq,
            use_self: self_e,
            use_mutual: mutual,
            ..small_config()
        };
        let net = PelNetwork::new(cfg).unwrap();
        let imgs = [random_image(16, 1), random_image(16, 2)];
        let logits = net.logits(&[&imgs[0], &imgs[1]]).unwrap();
        assert_eq!(logits, vec![0.0, 0.0]);
        assert_eq!(net.predict(&[&imgs[0]]).unwrap(), vec![0.5]);
    }
}

#[test]
fn wrong_input_size_is_input_error() {
    let net = PelNetwork::new(small_config()).unwrap();
    assert!(matches!(net.logits(&[&random_image(32, 0)]), Err(Error::Input(_))));
}

#[test]
fn disabling_a_stream_removes_exactly_its_parameters() {
    let base = NetworkConfig {
        use_mutual: false,
        ..small_config()
    };
    let full = PelNetwork::new(base.clone()).unwrap();
    for (off, kind) in [(StreamKind::Freq, "freq."), (StreamKind::Rgb, "rgb.")] {
        let cfg = NetworkConfig {
            use_rgb: off != StreamKind::Rgb,
            use_freq: off != StreamKind::Freq,
            ..base.clone()
        };
        let single = PelNetwork::new(cfg).unwrap();
        let expected: Vec<&str> = full.store.names().into_iter().filter(|n| !n.starts_with(kind)).collect();
        assert_eq!(single.store.names(), expected);
        assert!(single.stream_param_names(off).is_empty());
        assert!(!full.stream_param_names(off).is_empty());
    }
    // Mutual modules only exist with both streams.
    let with_mutual = PelNetwork::new(small_config()).unwrap();
    assert!(with_mutual.store.names().iter().any(|n| n.starts_with("mutual")));
    let single = PelNetwork::new(NetworkConfig {
        use_freq: false,
        ..small_config()
    })
    .unwrap();
    assert!(!single.store.names().iter().any(|n| n.starts_with("mutual")));
    assert!(single.store.names().iter().any(|n| n.contains(".sa.")));
}

#[test]
fn rgb_only_network_never_touches_frequency_inputs() {
    let mut net = PelNetwork::new(NetworkConfig {
        use_freq: false,
        ..small_config()
    })
    .unwrap();
    randomize(&mut net.store, 4);
    let img = random_image(16, 3);
    let batch = net.prepare(&[&img]).unwrap();
    assert!(batch.freq.is_none());
    let mut g = Graph::new();
    let fwd = net.forward(&mut g, &batch).unwrap();
    assert!(fwd.freq_stages.is_empty());
    let loss = g.bce_with_logits(fwd.logits, &[1.0]).unwrap();
    let grads = g.backward(loss).unwrap();
    grads.accumulate_into(&mut net.store);
    assert!(net.store.iter().all(|p| p.grad.is_some()));
}

#[test]
fn no_gradient_reaches_a_disconnected_stream() {
    // Two streams without mutual enhancement and the frequency half of the
    // head zeroed: the frequency stream cannot influence the loss.
    let mut net = PelNetwork::new(NetworkConfig {
        use_mutual: false,
        ..small_config()
    })
    .unwrap();
    randomize(&mut net.store, 9);
    let c = net.config.widths[3];
    let head = net.store.get_mut(net.head_weight);
    for v in &mut head.tensor.data_mut()[c..] {
        *v = 0.0;
    }
    let imgs = [random_image(16, 5), random_image(16, 6)];
    let batch = net.prepare(&[&imgs[0], &imgs[1]]).unwrap();
    let mut g = Graph::new();
    let fwd = net.forward(&mut g, &batch).unwrap();
    let loss = g.bce_with_logits(fwd.logits, &[0.0, 1.0]).unwrap();
    g.backward(loss).unwrap().accumulate_into(&mut net.store);
    for name in net.stream_param_names(StreamKind::Freq) {
        let p = net.store.by_name(&name).unwrap();
        assert!(p.grad.as_ref().unwrap().data().iter().all(|&x| x == 0.0), "{name}");
    }
    let rgb_grad: f64 = net
        .stream_param_names(StreamKind::Rgb)
        .iter()
        .map(|n| net.store.by_name(n).unwrap().grad.as_ref().unwrap().data().iter().map(|x| x.abs()).sum::<f64>())
        .sum();
    assert!(rgb_grad > 0.0);
}

#[test]
fn logits_are_bit_reproducible() {
    let build = || {
        let mut net = PelNetwork::new(small_config()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let head = net.store.get_mut(net.head_weight);
        for v in head.tensor.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        net
    };
    let imgs = [random_image(16, 10), random_image(16, 11)];
    let a = build().logits(&[&imgs[0], &imgs[1]]).unwrap();
    let b = build().logits(&[&imgs[0], &imgs[1]]).unwrap();
    assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    assert_ne!(a[0], 0.0);
    let other = PelNetwork::new(NetworkConfig {
        seed: 1,
        ..small_config()
    })
    .unwrap();
    assert_ne!(build().store.get(build().store.ids().next().unwrap()).tensor, other.store.iter().next().unwrap().tensor);
}

fn bce_oracle(z: f64, y: f64) -> f64 {
    let p = 1.0 / (1.0 + (-z).exp());
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

#[test]
fn bce_examples() {
    let eval = |z: &[f64], y: &[f64]| {
        let mut g = Graph::new();
        let l = g.constant(Tensor::from_vec(Dims::new(z.len(), 1, 1, 1), z.to_vec()).unwrap());
        let loss = g.bce_with_logits(l, y).unwrap();
        g.value(loss).item().unwrap()
    };
    assert!((eval(&[0.0], &[1.0]) - std::f64::consts::LN_2).abs() < 1e-15);
    assert!((eval(&[0.0], &[0.0]) - std::f64::consts::LN_2).abs() < 1e-6);
    let sat = eval(&[100.0], &[1.0]);
    assert!(sat.is_finite() && sat < 1e-40);
    assert!(eval(&[-800.0], &[1.0]).is_finite());
    let expect = (bce_oracle(0.3, 1.0) + bce_oracle(-1.2, 0.0)) / 2.0;
    assert!((eval(&[0.3, -1.2], &[1.0, 0.0]) - expect).abs() < 1e-12);
    let mut g = Graph::new();
    let empty = g.constant(Tensor::zeros(Dims::new(0, 1, 1, 1)));
    assert!(matches!(g.bce_with_logits(empty, &[]), Err(Error::Usage(_))));
}

#[test]
fn adam_matches_hand_computation() {
    let mut store = ParamStore::new();
    let id = store.add("w", Tensor::scalar(1.0)).unwrap();
    let (lr, wd) = (0.1, 0.01);
    let mut opt = Adam::new(&store, lr, wd);
    let mut x = 1.0f64;
    let (mut m, mut v) = (0.0f64, 0.0f64);
    for (t, g) in [(1, 0.5f64), (2, -0.25)] {
        store.get_mut(id).grad = Some(Tensor::scalar(g));
        opt.step(&mut store).unwrap();
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        let mh = m / (1.0 - 0.9f64.powi(t));
        let vh = v / (1.0 - 0.999f64.powi(t));
        x -= lr * (mh / (vh.sqrt() + 1e-8) + wd * x);
        assert!((store.get(id).tensor.item().unwrap() - x).abs() < 1e-12);
    }
    // First step moves by lr * (1 + wd) in the gradient's sign direction.
    let mut s2 = ParamStore::new();
    let id2 = s2.add("w", Tensor::scalar(1.0)).unwrap();
    let mut opt2 = Adam::new(&s2, 0.1, 0.01);
    s2.get_mut(id2).grad = Some(Tensor::scalar(0.5));
    opt2.step(&mut s2).unwrap();
    let expect = 1.0 - 0.1 * (0.5 / (0.5 + 1e-8) + 0.01);
    assert!((s2.get(id2).tensor.item().unwrap() - expect).abs() < 1e-12);
}

fn tiny_splits(size: usize) -> (Vec<ForgerySample>, Vec<ForgerySample>) {
    let s = synth::build_dataset(8, 4, 2, 3, size).unwrap();
    (s.train, s.val)
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let cfg = NetworkConfig {
        lr: 0.0,
        ..small_config()
    };
    let net = PelNetwork::new(cfg).unwrap();
    let before = net.store.clone();
    let (train, val) = tiny_splits(16);
    let mut tr = Trainer::new(net);
    tr.fit_freq_norm(&train).unwrap();
    tr.run_epoch(&train, &val).unwrap();
    for (a, b) in before.iter().zip(tr.net.store.iter()) {
        assert_eq!(a.tensor, b.tensor, "{}", a.name);
    }
    assert!(tr.opt.t > 0);
}

#[test]
fn overfits_four_samples() {
    let cfg = NetworkConfig {
        input_size: 32,
        lr: 1e-3,
        ..NetworkConfig::default()
    };
    let data = synth::build_dataset(4, 2, 2, 21, 32).unwrap().train;
    let images: Vec<&RgbImage> = data.iter().map(|s| &s.image).collect();
    let labels: Vec<f64> = data.iter().map(|s| s.label.as_f64()).collect();
    let mut tr = Trainer::new(PelNetwork::new(cfg).unwrap());
    tr.fit_freq_norm(&data).unwrap();
    let mut last = f64::NAN;
    for _ in 0..200 {
        last = tr.step(&images, &labels).unwrap().0;
    }
    let mut g = Graph::new();
    let batch = tr.net.prepare(&images).unwrap();
    let fwd = tr.net.forward(&mut g, &batch).unwrap();
    let loss = g.bce_with_logits(fwd.logits, &labels).unwrap();
    let final_loss = g.value(loss).item().unwrap();
    assert!(final_loss < 0.05, "final loss {final_loss} (last step {last})");
}

#[test]
fn divergence_is_reported() {
    let mut net = PelNetwork::new(small_config()).unwrap();
    let id = net.head_bias;
    net.store.set(id, Tensor::full(Dims::new(1, 1, 1, 1), f64::NAN)).unwrap();
    let mut tr = Trainer::new(net);
    let img = random_image(16, 0);
    assert!(matches!(tr.step(&[&img], &[1.0]), Err(Error::Divergence(_))));
}

#[test]
fn full_network_gradient_check() {
    let cfg = NetworkConfig {
        kernels: vec![3, 5],
        filter: pel_core::FilterKind::Mean,
        ..small_config()
    };
    for cfg in [cfg, small_config()] {
        let mut net = PelNetwork::new(cfg).unwrap();
        randomize(&mut net.store, 13);
        let imgs = [random_image(16, 20), random_image(16, 21)];
        let batch = net.prepare(&[&imgs[0], &imgs[1]]).unwrap();
        let labels = [1.0, 0.0];
        let mut g = Graph::new();
        let fwd = net.forward(&mut g, &batch).unwrap();
        let loss = g.bce_with_logits(fwd.logits, &labels).unwrap();
        g.backward(loss).unwrap().accumulate_into(&mut net.store);
        let loss_of = |store: &ParamStore| -> pel_core::Result<f64> {
            let mut g = Graph::new();
            let fwd = net.forward_with(&mut g, store, &batch)?;
            let loss = g.bce_with_logits(fwd.logits, &labels)?;
            g.value(loss).item()
        };
        let report = gradcheck::check_params(&net.store, loss_of, Tolerance::default(), 250, 7).unwrap();
        assert_eq!(report.checked, 250);
        assert!(report.passed(), "{:?}", report.mismatches);
    }
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut net = PelNetwork::new(small_config()).unwrap();
    randomize(&mut net.store, 2);
    net.freq_norm.mean[5] = 1.25;
    let a = dir.path().join("a.ckpt");
    let b = dir.path().join("b.ckpt");
    pel_core::net::save_checkpoint(&net, &a).unwrap();
    let loaded = pel_core::net::load_checkpoint(&a).unwrap();
    pel_core::net::save_checkpoint(&loaded, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    for (x, y) in net.store.iter().zip(loaded.store.iter()) {
        assert_eq!(x.name, y.name);
        assert!(x.tensor.data().iter().zip(y.tensor.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
    assert_eq!(loaded.freq_norm, net.freq_norm);
    assert_eq!(loaded.config, net.config);
}

#[test]
fn checkpoint_rejects_corruption() {
    let net = PelNetwork::new(small_config()).unwrap();
    let bytes = Checkpoint::from_network(&net, None).to_bytes();
    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    match Checkpoint::from_bytes(&bad) {
        Err(Error::Checkpoint(msg)) => assert!(msg.contains("magic"), "{msg}"),
        other => panic!("expected magic error, got {other:?}"),
    }
    let mut bad = bytes.clone();
    bad[8] = 9;
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Checkpoint(m)) if m.contains("version")));
    assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Checkpoint(m)) if m.contains("truncated")));
    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(Checkpoint::from_bytes(&long), Err(Error::Checkpoint(_))));
}

#[test]
fn checkpoint_into_mismatched_network_names_the_parameter() {
    let net = PelNetwork::new(small_config()).unwrap();
    let ckpt = Checkpoint::from_network(&net, None);
    let mut other = PelNetwork::new(NetworkConfig {
        widths: vec![4, 8, 8, 16],
        ..small_config()
    })
    .unwrap();
    match ckpt.apply_to(&mut other) {
        Err(Error::Checkpoint(msg)) => {
            assert!(msg.contains("shape mismatch") && msg.contains("rgb.block4.conv_a.weight"), "{msg}")
        }
        other => panic!("expected mismatch, got {other:?}"),
    }
    let mut renamed = ckpt.clone();
    renamed.params[0].0 = "rgb.block9.conv_a.weight".into();
    let mut same = PelNetwork::new(small_config()).unwrap();
    assert!(matches!(renamed.apply_to(&mut same), Err(Error::Checkpoint(m)) if m.contains("unknown parameter 'rgb.block9")));
}

#[test]
fn training_resumes_deterministically() {
    let (train, val) = tiny_splits(16);
    let cfg = NetworkConfig {
        epochs: 3,
        ..small_config()
    };
    let run_all = || {
        let mut tr = Trainer::new(PelNetwork::new(cfg.clone()).unwrap());
        tr.fit_freq_norm(&train).unwrap();
        tr.fit(&train, &val, |_, _| Ok(())).unwrap()
    };
    let full = run_all();
    assert_eq!(full, run_all());
    assert_eq!(full.len(), 3);

    let mut tr = Trainer::new(PelNetwork::new(cfg.clone()).unwrap());
    tr.fit_freq_norm(&train).unwrap();
    tr.run_epoch(&train, &val).unwrap();
    let bytes = tr.checkpoint().to_bytes();
    let mut resumed = Trainer::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(resumed.epoch, 1);
    let rest = resumed.fit(&train, &val, |_, _| Ok(())).unwrap();
    assert_eq!(rest, full[1..].to_vec());
    let line = full[0].to_string();
    assert_eq!(line.split(',').count(), LOG_HEADER.split(',').count());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn streams_align_at_every_block(
        blocks in 3usize..6,
        stride_bits in any::<u8>(),
        width in 2usize..6,
        size_mult in 2usize..5,
        flags in 0u8..16,
    ) {
        let use_rgb = flags & 1 == 0 || flags & 2 == 0;
        let cfg = NetworkConfig {
            num_blocks: blocks,
            widths: (0..blocks).map(|i| width + i).collect(),
            strides: (0..blocks).map(|i| 1 + usize::from(stride_bits >> i & 1)).collect(),
            input_size: 8 * size_mult,
            use_rgb,
            use_freq: flags & 2 == 0 || !use_rgb,
            use_self: flags & 4 == 0,
            use_mutual: flags & 8 == 0,
            ..small_config()
        };
        let net = PelNetwork::new(cfg.clone()).unwrap();
        let img = random_image(cfg.input_size, u64::from(flags));
        let batch = net.prepare(&[&img]).unwrap();
        let mut g = Graph::new();
        let fwd = net.forward(&mut g, &batch).unwrap();
        let sides = cfg.block_sides();
        for (stages, on) in [(&fwd.rgb_stages, cfg.use_rgb), (&fwd.freq_stages, cfg.use_freq)] {
            prop_assert_eq!(stages.len(), if on { blocks } else { 0 });
            for (b, &v) in stages.iter().enumerate() {
                let d = g.dims(v);
                prop_assert_eq!((d.h, d.w), (sides[b], sides[b]));
            }
        }
        if cfg.two_stream() {
            for (r, f) in fwd.rgb_stages.iter().zip(&fwd.freq_stages) {
                prop_assert_eq!(g.dims(*r).spatial(), g.dims(*f).spatial());
            }
        }
    }
}
