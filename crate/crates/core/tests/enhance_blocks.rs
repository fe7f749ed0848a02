use pel_core::enhance::{self, ChannelAttention, MutualEnhance, NoiseBlock, NoiseConfig, SpatialAttention};
use pel_core::gradcheck::{self, Tolerance};
use pel_core::{Dims, Error, FilterKind, Graph, ParamId, ParamStore, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(dims: Dims, seed: u64, lo: f64, hi: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(dims, |_, _, _, _| rng.gen_range(lo..hi))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn set(store: &mut ParamStore, id: ParamId, value: Tensor) {
    store.set(id, value).unwrap();
}

fn fill(store: &mut ParamStore, id: ParamId, v: f64) {
    let d = store.get(id).tensor.dims();
    set(store, id, Tensor::full(d, v));
}

fn randomize(store: &mut ParamStore, seed: u64) {
    let ids: Vec<ParamId> = store.ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        let d = store.get(id).tensor.dims();
        set(store, id, random(d, seed + k as u64, -0.8, 0.8));
    }
}

#[test]
fn noise_block_on_constant_input() {
    let mut store = ParamStore::new();
    let block = NoiseBlock::new(&mut store, "nb", 2, NoiseConfig::default()).unwrap();
    let x = Tensor::full(Dims::new(1, 2, 4, 4), 3.0);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let y = block.forward(&mut g, &store, xv).unwrap();
    assert_eq!(g.value(y), &x);

    set(&mut store, block.scale, Tensor::from_vec(Dims::new(1, 2, 1, 1), vec![2.0, -1.0]).unwrap());
    set(&mut store, block.bias, Tensor::from_vec(Dims::new(1, 2, 1, 1), vec![0.5, 0.25]).unwrap());
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let y = block.forward(&mut g, &store, xv).unwrap();
    let expect = Tensor::from_fn(x.dims(), |_, c, _, _| 3.0 + [0.5 * 2.0 + 0.5, -0.5 + 0.25][c]);
    assert_eq!(g.value(y), &expect);
}

#[test]
fn noise_block_spike_example() {
    let mut store = ParamStore::new();
    let block = NoiseBlock::new(&mut store, "nb", 1, NoiseConfig::default()).unwrap();
    fill(&mut store, block.scale, 1.0);
    let x = Tensor::from_vec(Dims::new(1, 1, 3, 3), vec![1., 1., 1., 1., 9., 1., 1., 1., 1.]).unwrap();
    let mut g = Graph::new();
    let xv = g.constant(x);
    let noise = block.noise(&mut g, &store, xv).unwrap();
    assert_eq!(g.value(noise).at(0, 0, 1, 1), 8.0);
    let y = block.forward(&mut g, &store, xv).unwrap();
    let out = g.value(y);
    assert!((out.at(0, 0, 1, 1) - (9.0 + sigmoid(8.0))).abs() < 1e-12);
    assert!((out.at(0, 0, 1, 1) - 9.99966).abs() < 1e-5);
    for (i, j) in [(0, 0), (0, 1), (2, 2), (1, 0)] {
        assert_eq!(out.at(0, 0, i, j), 1.5);
    }
}

#[test]
fn noise_block_mean_and_multi_kernel() {
    let x = random(Dims::new(1, 2, 6, 6), 1, -1.0, 1.0);
    let mut store = ParamStore::new();
    let cfg = NoiseConfig {
        filter: FilterKind::Mean,
        kernels: vec![3, 5],
    };
    let block = NoiseBlock::new(&mut store, "nb", 2, cfg).unwrap();
    assert_eq!(store.len(), 5);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let y = block.forward(&mut g, &store, xv).unwrap();
    assert_eq!(g.value(y), &x);

    // With unit combine weights on kernel 3 only, the noise equals the
    // single-kernel mean residual.
    let (weights, _) = block.combine.clone().unwrap();
    fill(&mut store, weights[0], 1.0);
    fill(&mut store, weights[1], 0.0);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let multi = block.noise(&mut g, &store, xv).unwrap();
    let smooth = g.mean_filter(xv, 3).unwrap();
    let single = g.sub(xv, smooth).unwrap();
    assert!(g.value(multi).max_abs_diff(g.value(single)) < 1e-15);
}

#[test]
fn mlp2_examples() {
    let mut g = Graph::new();
    let x = g.constant(random(Dims::new(2, 8, 1, 1), 2, 0.1, 1.0));
    let zero1 = g.constant(Tensor::zeros(Dims::new(4, 8, 1, 1)));
    let zero2 = g.constant(Tensor::zeros(Dims::new(8, 4, 1, 1)));
    let y = enhance::mlp2(&mut g, x, zero1, zero2).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));

    let eye = Tensor::from_fn(Dims::new(8, 8, 1, 1), |o, i, _, _| if o == i { 1.0 } else { 0.0 });
    let e1 = g.constant(eye.clone());
    let e2 = g.constant(eye);
    let y = enhance::mlp2(&mut g, x, e1, e2).unwrap();
    assert_eq!(g.value(y), g.value(x));

    let xv = random(Dims::new(2, 6, 1, 1), 3, -1.0, 1.0);
    let w1 = random(Dims::new(4, 6, 1, 1), 4, -1.0, 1.0);
    let w2 = random(Dims::new(6, 4, 1, 1), 5, -1.0, 1.0);
    let x = g.constant(xv.clone());
    let a = g.constant(w1.clone());
    let b = g.constant(w2.clone());
    let y = enhance::mlp2(&mut g, x, a, b).unwrap();
    for n in 0..2 {
        let hidden: Vec<f64> = (0..4)
            .map(|h| (0..6).map(|c| w1.at(h, c, 0, 0) * xv.at(n, c, 0, 0)).sum::<f64>().max(0.0))
            .collect();
        for c in 0..6 {
            let expect: f64 = (0..4).map(|h| w2.at(c, h, 0, 0) * hidden[h]).sum();
            assert!((g.value(y).at(n, c, 0, 0) - expect).abs() < 1e-12);
        }
    }

    let spatial = g.constant(Tensor::zeros(Dims::new(1, 6, 2, 2)));
    assert!(matches!(enhance::mlp2(&mut g, spatial, a, b), Err(Error::Shape(_))));
}

#[test]
fn channel_attention_with_zero_mlp_scales_by_one_and_a_half() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ca = ChannelAttention::new(&mut store, "ca", 16, 16, &mut rng).unwrap();
    assert_eq!(ca.hidden, 4);
    fill(&mut store, ca.w1, 0.0);
    fill(&mut store, ca.w2, 0.0);
    let x = random(Dims::new(2, 16, 3, 3), 7, -2.0, 2.0);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let y = ca.forward(&mut g, &store, xv).unwrap();
    assert_eq!(g.value(y), &x.map(|v| v + v * 0.5));
}

#[test]
fn self_enhance_composes_noise_then_attention() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let nb = NoiseBlock::new(&mut store, "nb", 4, NoiseConfig::default()).unwrap();
    let ca = ChannelAttention::new(&mut store, "ca", 4, 16, &mut rng).unwrap();
    let x = random(Dims::new(1, 4, 5, 5), 9, -1.0, 1.0);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let only_noise = enhance::self_enhance(&mut g, &store, xv, Some(&nb), None).unwrap();
    assert_eq!(g.value(only_noise), &x);
    let both = enhance::self_enhance(&mut g, &store, xv, Some(&nb), Some(&ca)).unwrap();
    let direct = ca.forward(&mut g, &store, xv).unwrap();
    assert_eq!(g.value(both), g.value(direct));
    let none = enhance::self_enhance(&mut g, &store, xv, None, None).unwrap();
    assert_eq!(none, xv);

    let wrong = g.constant(Tensor::zeros(Dims::new(1, 3, 5, 5)));
    assert!(matches!(nb.forward(&mut g, &store, wrong), Err(Error::Shape(_))));
}

#[test]
fn mutual_identity_and_half_attention() {
    let mut store = ParamStore::new();
    let m = MutualEnhance::new(&mut store, "me", 3, 5).unwrap();
    let fr = random(Dims::new(2, 3, 4, 4), 10, -1.0, 1.0);
    let ff = random(Dims::new(2, 5, 4, 4), 11, -1.0, 1.0);
    let mut g = Graph::new();
    let (r, f) = (g.constant(fr.clone()), g.constant(ff.clone()));
    let out = m.forward(&mut g, &store, r, f).unwrap();
    assert_eq!(g.value(out.rgb), &fr);
    assert_eq!(g.value(out.freq), &ff);
    assert!(g.value(out.attention).data().iter().all(|&a| a == 0.5));

    fill(&mut store, m.scale_rgb, 1.0);
    fill(&mut store, m.scale_freq, 1.0);
    let mut g = Graph::new();
    let (r, f) = (g.constant(fr.clone()), g.constant(ff.clone()));
    let out = m.forward(&mut g, &store, r, f).unwrap();
    assert_eq!(g.value(out.rgb), &fr.map(|v| v + v * 0.5));
    assert_eq!(g.value(out.freq), &ff.map(|v| v + v * 0.5));
}

#[test]
fn mutual_matches_step_by_step_oracle() {
    let mut store = ParamStore::new();
    let m = MutualEnhance::new(&mut store, "me", 2, 2).unwrap();
    randomize(&mut store, 20);
    let fr = random(Dims::new(1, 2, 3, 4), 12, -1.0, 1.0);
    let ff = random(Dims::new(1, 2, 3, 4), 13, -1.0, 1.0);
    let mut g = Graph::new();
    let (r, f) = (g.constant(fr.clone()), g.constant(ff.clone()));
    let out = m.forward(&mut g, &store, r, f).unwrap();

    let p = |id: ParamId| store.get(id).tensor.clone();
    let (w, b) = (p(m.attn_weight), p(m.attn_bias));
    let streams = [
        (&fr, p(m.scale_rgb), p(m.bias_rgb), out.rgb),
        (&ff, p(m.scale_freq), p(m.bias_freq), out.freq),
    ];
    for i in 0..3 {
        for j in 0..4 {
            let cat: Vec<f64> = (0..2).map(|c| fr.at(0, c, i, j)).chain((0..2).map(|c| ff.at(0, c, i, j))).collect();
            let a: Vec<f64> = (0..2)
                .map(|o| sigmoid(b.at(0, o, 0, 0) + (0..4).map(|k| w.at(o, k, 0, 0) * cat[k]).sum::<f64>()))
                .collect();
            for (s, (f, scale, bias, var)) in streams.iter().enumerate() {
                for c in 0..2 {
                    let x = f.at(0, c, i, j);
                    let expect = x + scale.at(0, c, 0, 0) * (x * a[s]) + bias.at(0, c, 0, 0);
                    assert!((g.value(*var).at(0, c, i, j) - expect).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn mutual_rejects_misaligned_streams() {
    let mut store = ParamStore::new();
    let m = MutualEnhance::new(&mut store, "me", 2, 2).unwrap();
    let mut g = Graph::new();
    let r = g.constant(Tensor::zeros(Dims::new(1, 2, 4, 4)));
    let f = g.constant(Tensor::zeros(Dims::new(1, 2, 8, 8)));
    assert!(matches!(m.forward(&mut g, &store, r, f), Err(Error::Shape(_))));
}

#[test]
fn mutual_sends_gradient_to_both_streams() {
    let mut store = ParamStore::new();
    let m = MutualEnhance::new(&mut store, "me", 2, 3).unwrap();
    randomize(&mut store, 30);
    let fr = random(Dims::new(1, 2, 3, 3), 14, -1.0, 1.0);
    let ff = random(Dims::new(1, 3, 3, 3), 15, -1.0, 1.0);
    // Loss only reads the RGB output; the frequency input still matters via
    // the shared attention map.
    let report = gradcheck::check(
        &[fr.clone(), ff.clone()],
        |g, v| {
            let out = m.forward(g, &store, v[0], v[1])?;
            gradcheck::project(g, out.rgb, 3)
        },
        Tolerance::default(),
        None,
        0,
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");

    let mut g = Graph::new();
    let (r, f) = (g.variable(fr), g.variable(ff));
    let out = m.forward(&mut g, &store, r, f).unwrap();
    let l = gradcheck::project(&mut g, out.rgb, 3).unwrap();
    let grads = g.backward(l).unwrap();
    assert!(grads.get(f).unwrap().data().iter().any(|&v| v.abs() > 1e-8));
}

#[test]
fn self_enhance_gradients_match_finite_differences() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let nb = NoiseBlock::new(&mut store, "nb", 3, NoiseConfig::default()).unwrap();
    let ca = ChannelAttention::new(&mut store, "ca", 3, 16, &mut rng).unwrap();
    randomize(&mut store, 41);
    let x = random(Dims::new(2, 3, 5, 5), 16, -1.0, 1.0);
    let report = gradcheck::check(
        &[x],
        |g, v| {
            let y = enhance::self_enhance(g, &store, v[0], Some(&nb), Some(&ca))?;
            gradcheck::project(g, y, 4)
        },
        Tolerance::default(),
        None,
        0,
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn spatial_attention_identity_at_init() {
    let mut store = ParamStore::new();
    let sa = SpatialAttention::new(&mut store, "sa", 4).unwrap();
    let x = random(Dims::new(2, 4, 3, 3), 17, -1.0, 1.0);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let y = sa.forward(&mut g, &store, xv).unwrap();
    assert_eq!(g.value(y), &x);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn modules_preserve_shape_and_bound_attention(
        n in 1usize..3, c in 1usize..6, c2 in 1usize..6, h in 1usize..6, w in 1usize..6, seed in 0u64..500
    ) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nb = NoiseBlock::new(&mut store, "nb", c, NoiseConfig::default()).unwrap();
        let ca = ChannelAttention::new(&mut store, "ca", c, 16, &mut rng).unwrap();
        let me = MutualEnhance::new(&mut store, "me", c, c2).unwrap();
        randomize(&mut store, seed);
        let x = random(Dims::new(n, c, h, w), seed, 0.0, 3.0);
        let y = random(Dims::new(n, c2, h, w), seed + 1, -3.0, 3.0);
        let mut g = Graph::new();
        let (xv, yv) = (g.constant(x.clone()), g.constant(y));
        let f_ne = nb.forward(&mut g, &store, xv).unwrap();
        prop_assert_eq!(g.dims(f_ne), x.dims());
        let gate = ca.gate(&mut g, &store, f_ne).unwrap();
        prop_assert!(g.value(gate).data().iter().all(|&a| a > 0.0 && a < 1.0));
        let f_out = ca.forward(&mut g, &store, f_ne).unwrap();
        prop_assert_eq!(g.dims(f_out), x.dims());
        // Non-negative features are never shrunk by channel attention.
        if g.value(f_ne).data().iter().all(|&v| v >= 0.0) {
            for (o, i) in g.value(f_out).data().iter().zip(g.value(f_ne).data()) {
                prop_assert!(*o >= *i && *o <= 2.0 * *i);
            }
        }
        let out = me.forward(&mut g, &store, f_out, yv).unwrap();
        prop_assert_eq!(g.dims(out.rgb), x.dims());
        prop_assert_eq!(g.dims(out.freq), Dims::new(n, c2, h, w));
        prop_assert!(g.value(out.attention).data().iter().all(|&a| a > 0.0 && a < 1.0));
    }
}
