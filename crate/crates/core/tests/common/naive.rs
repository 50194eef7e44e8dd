//! Loop implementations of the blocks, written directly from their
//! definitions with no shared code.

use ninformer::nn::Initializer;
use ninformer::params::ParamStore;
use ninformer::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Mat = Vec<Vec<f64>>;

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub fn layer_norm(row: &[f64], gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let inv = 1.0 / (var + 1e-5).sqrt();
    (0..row.len())
        .map(|i| (row[i] - mean) * inv * gamma[i] + beta[i])
        .collect()
}

pub fn affine(v: &[f64], w: &Mat, b: &[f64]) -> Vec<f64> {
    (0..w[0].len())
        .map(|j| b[j] + (0..v.len()).map(|i| v[i] * w[i][j]).sum::<f64>())
        .collect()
}

pub fn mat(store: &ParamStore<f64>, name: &str) -> Mat {
    let t = store.get(name).unwrap_or_else(|| panic!("{name}"));
    let cols = t.shape()[1];
    t.data().chunks(cols).map(<[f64]>::to_vec).collect()
}

pub fn vector(store: &ParamStore<f64>, name: &str) -> Vec<f64> {
    store.get(name).unwrap().data().to_vec()
}

pub fn mlp(v: &[f64], s: &ParamStore<f64>, p: &str) -> Vec<f64> {
    let h: Vec<f64> = affine(
        v,
        &mat(s, &format!("{p}.fc1.weight")),
        &vector(s, &format!("{p}.fc1.bias")),
    )
    .into_iter()
    .map(gelu)
    .collect();
    affine(
        &h,
        &mat(s, &format!("{p}.fc2.weight")),
        &vector(s, &format!("{p}.fc2.bias")),
    )
}

pub fn norm(v: &[f64], s: &ParamStore<f64>, p: &str) -> Vec<f64> {
    layer_norm(
        v,
        &vector(s, &format!("{p}.gamma")),
        &vector(s, &format!("{p}.beta")),
    )
}

pub fn naive_attention(x: &Mat, s: &ParamStore<f64>, p: &str, heads: usize) -> Mat {
    let (n, d) = (x.len(), x[0].len());
    let dk = d / heads;
    let proj = |w: &str| -> Mat {
        let w = mat(s, &format!("{p}.{w}"));
        x.iter().map(|r| affine(r, &w, &vec![0.0; d])).collect()
    };
    let (q, k, v) = (proj("w_q"), proj("w_k"), proj("w_v"));
    let mut ctx = vec![vec![0.0; d]; n];
    for h in 0..heads {
        let o = h * dk;
        for i in 0..n {
            let scores: Vec<f64> = (0..n)
                .map(|j| {
                    (0..dk).map(|t| q[i][o + t] * k[j][o + t]).sum::<f64>() / (dk as f64).sqrt()
                })
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for j in 0..n {
                for t in 0..dk {
                    ctx[i][o + t] += e[j] / z * v[j][o + t];
                }
            }
        }
    }
    let wo = mat(s, &format!("{p}.w_o"));
    ctx.iter().map(|r| affine(r, &wo, &vec![0.0; d])).collect()
}

pub fn naive_mixer(x: &Mat, s: &ParamStore<f64>, p: &str) -> Mat {
    let (n, d) = (x.len(), x[0].len());
    let ln: Mat = x
        .iter()
        .map(|r| norm(r, s, &format!("{p}.token_norm")))
        .collect();
    let mut y = x.clone();
    for c in 0..d {
        let column: Vec<f64> = (0..n).map(|j| ln[j][c]).collect();
        let mixed = mlp(&column, s, &format!("{p}.token_mlp"));
        for j in 0..n {
            y[j][c] += mixed[j];
        }
    }
    y.iter()
        .map(|r| {
            let m = mlp(
                &norm(r, s, &format!("{p}.channel_norm")),
                s,
                &format!("{p}.channel_mlp"),
            );
            r.iter().zip(m).map(|(a, b)| a + b).collect()
        })
        .collect()
}

pub fn naive_gating(x: &Mat, s: &ParamStore<f64>, p: &str) -> Mat {
    let gate = naive_mixer(x, s, &format!("{p}.mixer"));
    let w = mat(s, &format!("{p}.linear.weight"));
    let b = vector(s, &format!("{p}.linear.bias"));
    x.iter()
        .zip(gate)
        .map(|(r, g)| {
            affine(r, &w, &b)
                .into_iter()
                .zip(g)
                .map(|(l, g)| l * g)
                .collect()
        })
        .collect()
}

pub fn naive_conv_ffn(x: &Mat, grid: (usize, usize), s: &ParamStore<f64>, p: &str) -> Mat {
    let (gh, gw) = grid;
    let hidden: Mat = x
        .iter()
        .map(|r| {
            affine(
                r,
                &mat(s, &format!("{p}.expand.weight")),
                &vector(s, &format!("{p}.expand.bias")),
            )
            .into_iter()
            .map(gelu)
            .collect()
        })
        .collect();
    let dh = hidden[0].len();
    let k = vector(s, &format!("{p}.depthwise.weight"));
    let kb = vector(s, &format!("{p}.depthwise.bias"));
    let mut conv = vec![vec![0.0; dh]; gh * gw];
    for r in 0..gh {
        for c in 0..gw {
            for ch in 0..dh {
                let mut acc = kb[ch];
                for dr in 0..3 {
                    for dc in 0..3 {
                        let (rr, cc) = (r as isize + dr as isize - 1, c as isize + dc as isize - 1);
                        if rr >= 0 && cc >= 0 && (rr as usize) < gh && (cc as usize) < gw {
                            acc += k[(dr * 3 + dc) * dh + ch]
                                * hidden[rr as usize * gw + cc as usize][ch];
                        }
                    }
                }
                conv[r * gw + c][ch] = gelu(acc);
            }
        }
    }
    conv.iter()
        .map(|r| {
            affine(
                r,
                &mat(s, &format!("{p}.project.weight")),
                &vector(s, &format!("{p}.project.bias")),
            )
        })
        .collect()
}

pub fn randn(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            std * z
        })
        .collect();
    Tensor::new(shape.to_vec(), v).unwrap()
}

/// Registers tensors through `init`, then replaces every value with a
/// random draw so norms and biases are not trivial.
pub fn random_store(
    rng: &mut ChaCha8Rng,
    init: impl Fn(&mut Initializer<'_, f64, ChaCha8Rng>),
) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    let mut r = ChaCha8Rng::seed_from_u64(rng.gen());
    init(&mut Initializer {
        store: &mut s,
        rng: &mut r,
    });
    for (_, t) in s.iter_mut() {
        *t = randn(t.shape(), 0.7, rng);
    }
    s
}

pub fn to_mats(t: &Tensor<f64>) -> Vec<Mat> {
    let (n, d) = (t.shape()[1], t.shape()[2]);
    t.data()
        .chunks(n * d)
        .map(|b| b.chunks(d).map(<[f64]>::to_vec).collect())
        .collect()
}

pub fn rel_error(got: &Tensor<f64>, want: &[Mat]) -> f64 {
    let flat: Vec<f64> = want.iter().flatten().flatten().copied().collect();
    let scale = flat.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    got.data()
        .iter()
        .zip(&flat)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        / scale
}

pub struct Shape {
    pub b: usize,
    pub n: usize,
    pub d: usize,
    pub heads: usize,
    pub hidden: usize,
}

pub fn random_shape(rng: &mut ChaCha8Rng) -> Shape {
    let d = rng.gen_range(1..=4);
    let divisors: Vec<usize> = (1..=d).filter(|h| d % h == 0).collect();
    Shape {
        b: rng.gen_range(1..=2),
        n: rng.gen_range(1..=4),
        d,
        heads: divisors[rng.gen_range(0..divisors.len())],
        hidden: rng.gen_range(1..=5),
    }
}
