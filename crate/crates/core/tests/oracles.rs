//! Blocks against straightforward loop implementations written from the
//! definitions, on random small shapes.

mod common;

use common::naive::*;
use ninformer::nn::*;
use ninformer::params::ParamStore;
use ninformer::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TRIALS: usize = 100;
const TOL: f64 = 1e-5;

fn trials(seed: u64, mut f: impl FnMut(&mut ChaCha8Rng, &Shape) -> f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..TRIALS {
        let sh = random_shape(&mut rng);
        let e = f(&mut rng, &sh);
        assert!(
            e < TOL,
            "b={} n={} d={} heads={}: relative error {e:e}",
            sh.b,
            sh.n,
            sh.d,
            sh.heads
        );
        worst = worst.max(e);
    }
    eprintln!("worst relative error over {TRIALS} trials: {worst:e}");
}

#[test]
fn attention_matches_loops() {
    trials(1, |rng, sh| {
        let s = random_store(rng, |i| AttentionParams::init(i, "a", sh.d).unwrap());
        let x = randn(&[sh.b, sh.n, sh.d], 1.0, rng);
        let g = Graph::inference();
        let p = AttentionParams::bind(&s.bind(&g), "a", sh.heads).unwrap();
        let got = attention(g.constant(x.clone()), &p).unwrap().value();
        let want: Vec<Mat> = to_mats(&x)
            .iter()
            .map(|m| naive_attention(m, &s, "a", sh.heads))
            .collect();
        rel_error(&got, &want)
    });
}

#[test]
fn mixer_block_matches_loops() {
    trials(2, |rng, sh| {
        let s = random_store(rng, |i| {
            MixerSubunitParams::init(i, "m", sh.n, sh.d, sh.hidden, sh.hidden + 1).unwrap()
        });
        let x = randn(&[sh.b, sh.n, sh.d], 1.0, rng);
        let g = Graph::inference();
        let p = MixerSubunitParams::bind(&s.bind(&g), "m").unwrap();
        let got = mixer_block(g.constant(x.clone()), &p).unwrap().value();
        let want: Vec<Mat> = to_mats(&x)
            .iter()
            .map(|m| naive_mixer(m, &s, "m"))
            .collect();
        rel_error(&got, &want)
    });
}

#[test]
fn nin_gating_matches_loops() {
    trials(3, |rng, sh| {
        let s = random_store(rng, |i| {
            GatingParams::init(i, "g", sh.n, sh.d, sh.hidden, 3).unwrap()
        });
        let x = randn(&[sh.b, sh.n, sh.d], 1.0, rng);
        let g = Graph::inference();
        let p = GatingParams::bind(&s.bind(&g), "g", false).unwrap();
        let got = nin_gating(g.constant(x.clone()), &p).unwrap().value();
        let want: Vec<Mat> = to_mats(&x)
            .iter()
            .map(|m| naive_gating(m, &s, "g"))
            .collect();
        rel_error(&got, &want)
    });
}

#[test]
fn conv_ffn_matches_loops() {
    trials(4, |rng, sh| {
        let grid = [(1, sh.n), (sh.n, 1), (2, 2)][rng.gen_range(0..if sh.n == 4 { 3 } else { 2 })];
        let s = random_store(rng, |i| {
            ConvFfnParams::init(i, "c", sh.d, sh.hidden).unwrap()
        });
        let x = randn(&[sh.b, sh.n, sh.d], 1.0, rng);
        let g = Graph::inference();
        let p = ConvFfnParams::bind(&s.bind(&g), "c").unwrap();
        let got = conv_ffn(g.constant(x.clone()), grid, &p).unwrap().value();
        let want: Vec<Mat> = to_mats(&x)
            .iter()
            .map(|m| naive_conv_ffn(m, grid, &s, "c"))
            .collect();
        rel_error(&got, &want)
    });
}

#[test]
fn full_blocks_match_loop_compositions() {
    trials(5, |rng, sh| {
        let dims = BlockDims {
            n_tokens: sh.n,
            d_model: sh.d,
            n_heads: sh.heads,
            d_mlp: sh.hidden,
            d_token_mix: 3,
            d_channel_mix: 2,
            grid: (1, sh.n),
        };
        let s = random_store(rng, |i| {
            VitBlockParams::init(i, "v", &dims).unwrap();
            NinBlockParams::init(i, "n", &dims).unwrap();
        });
        let x = randn(&[sh.b, sh.n, sh.d], 1.0, rng);
        let g = Graph::inference();
        let bound = s.bind(&g);
        let vit = vit_block(
            g.constant(x.clone()),
            &VitBlockParams::bind(&bound, "v", &dims).unwrap(),
        )
        .unwrap();
        let nin = nin_block(
            g.constant(x.clone()),
            &NinBlockParams::bind(&bound, "n", false).unwrap(),
        )
        .unwrap();
        let residual = |x: &Mat, f: &dyn Fn(&Mat) -> Mat| -> Mat {
            let y = f(x);
            x.iter()
                .zip(y)
                .map(|(a, b)| a.iter().zip(b).map(|(p, q)| p + q).collect())
                .collect()
        };
        let per_token =
            |m: &Mat, f: &dyn Fn(&[f64]) -> Vec<f64>| -> Mat { m.iter().map(|r| f(r)).collect() };
        let mut worst = 0.0f64;
        for (prefix, out) in [("v", vit), ("n", nin)] {
            let want: Vec<Mat> = to_mats(&x)
                .iter()
                .map(|m| {
                    let y = residual(m, &|m| {
                        let normed = per_token(m, &|r| norm(r, &s, &format!("{prefix}.norm1")));
                        if prefix == "v" {
                            naive_attention(&normed, &s, "v.attn", sh.heads)
                        } else {
                            naive_gating(&normed, &s, "n.gating")
                        }
                    });
                    residual(&y, &|m| {
                        per_token(m, &|r| {
                            mlp(
                                &norm(r, &s, &format!("{prefix}.norm2")),
                                &s,
                                &format!("{prefix}.mlp"),
                            )
                        })
                    })
                })
                .collect();
            worst = worst.max(rel_error(&out.value(), &want));
        }
        worst
    });
}

/// Hand evaluation with weights chosen so each stage can be checked by hand.
///
/// Token and channel MLPs have zero weights, so each emits only its second
/// bias: token biases `[0.1, -0.2]` are added per token, channel biases
/// `[1, -1]` per channel. The gate is therefore
/// `x + [[0.1], [-0.2]] + [1, -1] = [[2.1, 2.1], [2.8, -1.2]]`.
/// The projection `x·[[1, 2], [0, 1]] + [0.5, -1]` is `[[1.5, 4], [2.5, 3]]`,
/// and the elementwise product is `[[3.15, 8.4], [7.0, -3.6]]`.
#[test]
fn nin_gating_one_by_two_by_two_by_hand() {
    let mut s = ParamStore::<f64>::new();
    let mut r = ChaCha8Rng::seed_from_u64(0);
    GatingParams::init(
        &mut Initializer {
            store: &mut s,
            rng: &mut r,
        },
        "g",
        2,
        2,
        3,
        3,
    )
    .unwrap();
    for (name, t) in s.iter_mut() {
        if name.ends_with("weight") {
            *t = Tensor::zeros(t.shape().to_vec());
        }
    }
    let set = |s: &mut ParamStore<f64>, name: &str, shape: &[usize], v: &[f64]| {
        *s.get_mut(name).unwrap() = Tensor::new(shape.to_vec(), v.to_vec()).unwrap();
    };
    set(&mut s, "g.mixer.token_mlp.fc2.bias", &[2], &[0.1, -0.2]);
    set(&mut s, "g.mixer.channel_mlp.fc2.bias", &[2], &[1.0, -1.0]);
    set(&mut s, "g.linear.weight", &[2, 2], &[1.0, 2.0, 0.0, 1.0]);
    set(&mut s, "g.linear.bias", &[2], &[0.5, -1.0]);
    let g = Graph::inference();
    let p = GatingParams::bind(&s.bind(&g), "g", false).unwrap();
    let x = g.constant(Tensor::new(vec![1, 2, 2], vec![1.0, 3.0, 2.0, 0.0]).unwrap());
    let out = nin_gating(x, &p).unwrap().value();
    let want = [3.15, 8.4, 7.0, -3.6];
    for (a, b) in out.data().iter().zip(want) {
        assert!((a - b).abs() < 1e-12, "{:?}", out.data());
    }
}

#[test]
fn mixer_keeps_the_mnist_token_shape() {
    let mut s = ParamStore::<f32>::new();
    let mut r = ChaCha8Rng::seed_from_u64(0);
    MixerSubunitParams::init(
        &mut Initializer {
            store: &mut s,
            rng: &mut r,
        },
        "m",
        49,
        256,
        512,
        512,
    )
    .unwrap();
    let g = Graph::inference();
    let p = MixerSubunitParams::bind(&s.bind(&g), "m").unwrap();
    let x = g.constant(Tensor::<f32>::zeros([1, 49, 256]));
    assert_eq!(mixer_block(x, &p).unwrap().shape(), vec![1, 49, 256]);
    let wrong = g.constant(Tensor::<f32>::zeros([1, 48, 256]));
    assert!(mixer_block(wrong, &p).is_err());
}
