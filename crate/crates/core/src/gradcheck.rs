//! Finite-difference verification of every differentiable component.
//!
//! Each check draws random parameters and inputs, reduces the component's
//! output to a scalar through a fixed random linear functional (models use
//! their cross-entropy loss instead), and compares every analytic partial
//! derivative against the central difference `(L(θ+h) − L(θ−h)) / 2h` with
//! `h = 1e-5`, all in 64-bit.
//!
//! The error per entry is `|a − n| / max(|a|, |n|, 1e-2)`: relative for
//! gradients of ordinary size, absolute below the floor where the central
//! difference itself is only accurate to roughly `1e-11 / h`.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::models::{build_model, ImageSize, Model, ModelConfig, Variant};
use crate::nn::{
    attention, conv_ffn, localvit_block, mixer_block, nin_block, nin_gating, vit_block,
    AttentionParams, BlockDims, ConvFfnParams, GatingParams, Initializer, LocalVitBlockParams,
    MixerSubunitParams, NinBlockParams, VitBlockParams,
};
use crate::params::{BoundParams, ParamStore};
use crate::tensor::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-6;
pub const ERROR_FLOOR: f64 = 1e-2;
pub const DEFAULT_SEEDS: u64 = 10;

type LossFn = Box<dyn for<'g> Fn(&'g Graph<f64>, &BoundParams<'g, f64>) -> Result<Var<'g, f64>>>;

/// A scalar function of named 64-bit tensors.
pub struct Problem {
    pub params: ParamStore<f64>,
    pub loss: LossFn,
}

/// Outcome for one component over all seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentResult {
    pub component: String,
    pub seeds: u64,
    pub entries_checked: usize,
    pub max_rel_error: f64,
    /// Parameter and flat index of the worst entry.
    pub worst: String,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub step: f64,
    pub components: Vec<ComponentResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.components.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.components
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.component.as_str())
            .collect()
    }
}

fn rel_error(a: f64, n: f64) -> f64 {
    let e = (a - n).abs() / a.abs().max(n.abs()).max(ERROR_FLOOR);
    if e.is_nan() {
        f64::INFINITY
    } else {
        e
    }
}

fn loss_value(p: &Problem, store: &ParamStore<f64>) -> Result<f64> {
    let g = Graph::inference();
    let b = store.bind(&g);
    Ok((p.loss)(&g, &b)?.value().data()[0])
}

/// Largest entry error of `p`, with its location, and the entry count.
pub fn check_problem(p: &Problem) -> Result<(f64, String, usize)> {
    let g = Graph::new();
    let b = p.params.bind(&g);
    let loss = (p.loss)(&g, &b)?;
    let analytic = b.gradients(&g.backward(loss)?);
    drop(b);

    let mut store = p.params.clone();
    let names: Vec<String> = store.names().map(str::to_string).collect();
    let (mut worst, mut at, mut count) = (0.0f64, String::new(), 0);
    for name in &names {
        let len = store.get(name).expect("listed").numel();
        for i in 0..len {
            let orig = store.get(name).expect("listed").data()[i];
            store.get_mut(name).expect("listed").data_mut()[i] = orig + STEP;
            let up = loss_value(p, &store)?;
            store.get_mut(name).expect("listed").data_mut()[i] = orig - STEP;
            let down = loss_value(p, &store)?;
            store.get_mut(name).expect("listed").data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let e = rel_error(analytic[name].data()[i], numeric);
            count += 1;
            if e > worst || at.is_empty() {
                worst = e;
                at = format!("{name}[{i}]");
            }
        }
    }
    Ok((worst, at, count))
}

/// Runs `make(seed)` for each seed and folds the results.
pub fn check_component(
    name: &str,
    seeds: u64,
    make: impl Fn(u64) -> Result<Problem>,
) -> Result<ComponentResult> {
    let mut r = ComponentResult {
        component: name.to_string(),
        seeds,
        entries_checked: 0,
        max_rel_error: 0.0,
        worst: String::new(),
        passed: true,
    };
    for seed in 0..seeds {
        let (e, at, n) = check_problem(&make(seed)?)?;
        r.entries_checked += n;
        if e > r.max_rel_error || r.worst.is_empty() {
            r.max_rel_error = e;
            r.worst = format!("{at} (seed {seed})");
        }
    }
    r.passed = r.max_rel_error < TOLERANCE;
    Ok(r)
}

fn randn(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            std * z
        })
        .collect();
    Tensor::new(shape.to_vec(), v).expect("length matches")
}

/// `sum(out ⊙ r)` for a fixed random `r`.
fn functional<'g>(out: Var<'g, f64>, seed: u64) -> Result<Var<'g, f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf00d);
    let r = out.graph().constant(randn(&out.shape(), 1.0, &mut rng));
    Ok(out.mul(r)?.sum())
}

/// Store with every listed tensor drawn from N(0, std²).
fn random_store(
    entries: &[(&str, &[usize])],
    std: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ParamStore<f64>> {
    let mut s = ParamStore::new();
    for (name, shape) in entries {
        s.insert(*name, randn(shape, std, rng))?;
    }
    Ok(s)
}

/// Initializes a block's tensors by name, then overwrites them with random
/// values so no norm gain is trivially one.
fn block_store(
    seed: u64,
    init: impl Fn(&mut Initializer<'_, f64, ChaCha8Rng>) -> Result<()>,
) -> Result<ParamStore<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    init(&mut Initializer {
        store: &mut s,
        rng: &mut rng,
    })?;
    for (_, t) in s.iter_mut() {
        *t = randn(t.shape(), 0.5, &mut rng);
    }
    s.insert(
        "x",
        randn(&[1, BLOCK_DIMS.n_tokens, BLOCK_DIMS.d_model], 1.0, &mut rng),
    )?;
    Ok(s)
}

/// Block-level check size `(1, 4, 8)` on a 2×2 grid.
pub const BLOCK_DIMS: BlockDims = BlockDims {
    n_tokens: 4,
    d_model: 8,
    n_heads: 2,
    d_mlp: 12,
    d_token_mix: 6,
    d_channel_mix: 10,
    grid: (2, 2),
};

/// The toy classifier shape used for end-to-end checks.
pub fn toy_model_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        variant,
        image_size: ImageSize::new(8, 8, 1),
        patch_size: 4,
        d_model: 8,
        n_blocks: 1,
        n_heads: 2,
        d_mlp: 12,
        d_token_mix: 6,
        d_channel_mix: 10,
        n_classes: 3,
        use_positional_embedding: variant.uses_attention(),
        sigmoid_gate: false,
    }
}

/// Builds the problem for one seed.
type ProblemMaker = Box<dyn Fn(u64) -> Result<Problem>>;

fn primitive_problems() -> Vec<(&'static str, ProblemMaker)> {
    fn problem(
        seed: u64,
        entries: &[(&str, &[usize])],
        loss: impl for<'g> Fn(&'g Graph<f64>, &BoundParams<'g, f64>) -> Result<Var<'g, f64>> + 'static,
    ) -> Result<Problem> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Problem {
            params: random_store(entries, 1.0, &mut rng)?,
            loss: Box::new(move |g, b| functional(loss(g, b)?, seed)),
        })
    }
    vec![
        (
            "matmul",
            Box::new(|s| {
                problem(s, &[("a", &[2, 3, 4]), ("b", &[4, 5])], |_, p| {
                    Ok(p.get("a")?.matmul(p.get("b")?)?)
                })
            }),
        ),
        (
            "softmax",
            Box::new(|s| {
                problem(s, &[("x", &[2, 5, 3])], |_, p| {
                    Ok(p.get("x")?.softmax(1)?)
                })
            }),
        ),
        (
            "layer_norm",
            Box::new(|s| {
                problem(
                    s,
                    &[("x", &[3, 6]), ("gamma", &[6]), ("beta", &[6])],
                    |_, p| {
                        Ok(p.get("x")?
                            .layer_norm(p.get("gamma")?, p.get("beta")?, 1e-5)?)
                    },
                )
            }),
        ),
        (
            "elementwise",
            Box::new(|s| {
                problem(s, &[("x", &[3, 4]), ("y", &[3, 4]), ("b", &[4])], |_, p| {
                    let (x, y) = (p.get("x")?, p.get("y")?);
                    Ok(x.gelu()
                        .mul(y)?
                        .add(x.sigmoid())?
                        .add_broadcast(p.get("b")?)?
                        .scale(0.7))
                })
            }),
        ),
        (
            "shape_ops",
            Box::new(|s| {
                problem(s, &[("x", &[2, 3, 4])], |_, p| {
                    let x = p.get("x")?;
                    let y = x.permute(&[2, 0, 1])?.reshape(&[4, 6])?.transpose_last2()?;
                    Ok(y.mul(y)?.mean_axis(0)?)
                })
            }),
        ),
        (
            "depthwise_conv",
            Box::new(|s| {
                problem(
                    s,
                    &[("x", &[2, 3, 3, 4]), ("k", &[3, 3, 4]), ("b", &[4])],
                    |_, p| Ok(p.get("x")?.depthwise_conv2d(p.get("k")?, p.get("b")?)?),
                )
            }),
        ),
        (
            "cross_entropy",
            Box::new(|s| {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                Ok(Problem {
                    params: random_store(&[("logits", &[2, 3])], 2.0, &mut rng)?,
                    loss: Box::new(move |_, p| {
                        let labels = [(s % 3) as usize, ((s / 3) % 3) as usize];
                        Ok(p.get("logits")?.cross_entropy(&labels)?)
                    }),
                })
            }),
        ),
    ]
}

fn block_problems() -> Vec<(&'static str, ProblemMaker)> {
    let d = BLOCK_DIMS;
    vec![
        (
            "attention",
            Box::new(move |s| {
                Ok(Problem {
                    params: block_store(s, |i| AttentionParams::init(i, "attn", d.d_model))?,
                    loss: Box::new(move |_, p| {
                        let ap = AttentionParams::bind(p, "attn", d.n_heads)?;
                        functional(attention(p.get("x")?, &ap)?, s)
                    }),
                })
            }),
        ),
        (
            "mixer_block",
            Box::new(move |s| {
                Ok(Problem {
                    params: block_store(s, |i| {
                        MixerSubunitParams::init(
                            i,
                            "mix",
                            d.n_tokens,
                            d.d_model,
                            d.d_token_mix,
                            d.d_channel_mix,
                        )
                    })?,
                    loss: Box::new(move |_, p| {
                        let mp = MixerSubunitParams::bind(p, "mix")?;
                        functional(mixer_block(p.get("x")?, &mp)?, s)
                    }),
                })
            }),
        ),
        (
            "conv_ffn",
            Box::new(move |s| {
                Ok(Problem {
                    params: block_store(s, |i| ConvFfnParams::init(i, "conv", d.d_model, d.d_mlp))?,
                    loss: Box::new(move |_, p| {
                        let cp = ConvFfnParams::bind(p, "conv")?;
                        functional(conv_ffn(p.get("x")?, d.grid, &cp)?, s)
                    }),
                })
            }),
        ),
        (
            "nin_gating",
            Box::new(move |s| {
                Ok(Problem {
                    params: block_store(s, |i| {
                        GatingParams::init(
                            i,
                            "gating",
                            d.n_tokens,
                            d.d_model,
                            d.d_token_mix,
                            d.d_channel_mix,
                        )
                    })?,
                    loss: Box::new(move |_, p| {
                        let gp = GatingParams::bind(p, "gating", false)?;
                        functional(nin_gating(p.get("x")?, &gp)?, s)
                    }),
                })
            }),
        ),
        (
            "vit_block",
            Box::new(move |s| {
                Ok(Problem {
                    params: block_store(s, |i| VitBlockParams::init(i, "blk", &d))?,
                    loss: Box::new(move |_, p| {
                        let bp = VitBlockParams::bind(p, "blk", &d)?;
                        functional(vit_block(p.get("x")?, &bp)?, s)
                    }),
                })
            }),
        ),
        (
            "localvit_block",
            Box::new(move |s| {
                Ok(Problem {
                    params: block_store(s, |i| LocalVitBlockParams::init(i, "blk", &d))?,
                    loss: Box::new(move |_, p| {
                        let bp = LocalVitBlockParams::bind(p, "blk", &d)?;
                        functional(localvit_block(p.get("x")?, d.grid, &bp)?, s)
                    }),
                })
            }),
        ),
        (
            "nin_block",
            Box::new(move |s| {
                Ok(Problem {
                    params: block_store(s, |i| NinBlockParams::init(i, "blk", &d))?,
                    loss: Box::new(move |_, p| {
                        let bp = NinBlockParams::bind(p, "blk", false)?;
                        functional(nin_block(p.get("x")?, &bp)?, s)
                    }),
                })
            }),
        ),
    ]
}

/// End-to-end cross-entropy of a toy classifier on two random images.
pub fn model_problem(variant: Variant, seed: u64) -> Result<Problem> {
    let cfg = toy_model_config(variant);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model: Model<f64> = build_model(&cfg, seed)?;
    for (_, t) in model.params.iter_mut() {
        *t = randn(t.shape(), 0.5, &mut rng);
    }
    let images = randn(&[2, 8, 8, 1], 1.0, &mut rng);
    let labels = vec![rng.gen_range(0..3), rng.gen_range(0..3)];
    Ok(Problem {
        params: model.params.clone(),
        loss: Box::new(move |g, b| {
            let mp = model.resolve(b.clone())?;
            let logits = model.forward_classify(&mp, g.constant(images.clone()))?;
            Ok(logits.cross_entropy(&labels)?)
        }),
    })
}

/// GELU whose backward is deliberately scaled by 1.1.
fn faulty_gelu<'g>(x: Var<'g, f64>) -> Var<'g, f64> {
    let g = x.graph();
    let exact = x.gelu().value();
    g.custom(&[x], exact, |inputs, _out, grad| {
        let x = &inputs[0];
        let d: Vec<f64> = x
            .data()
            .iter()
            .zip(grad.data())
            .map(|(&v, &go)| {
                let cdf = 0.5 * (1.0 + libm::erf(v / std::f64::consts::SQRT_2));
                let pdf = (-0.5 * v * v).exp() / (2.0 * std::f64::consts::PI).sqrt();
                1.1 * (cdf + v * pdf) * go
            })
            .collect();
        vec![Tensor::new(x.shape().to_vec(), d).expect("same shape")]
    })
}

/// A component with a known-wrong backward. The checker must flag it.
pub fn faulty_problem(seed: u64) -> Result<Problem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(Problem {
        params: random_store(&[("x", &[3, 4])], 1.0, &mut rng)?,
        loss: Box::new(move |_, p| functional(faulty_gelu(p.get("x")?), seed)),
    })
}

pub const FAULTY_COMPONENT: &str = "faulty_gelu";

/// Every component name in suite order.
pub fn component_names() -> Vec<String> {
    let mut v: Vec<String> = primitive_problems()
        .into_iter()
        .map(|(n, _)| n.to_string())
        .collect();
    v.extend(block_problems().into_iter().map(|(n, _)| n.to_string()));
    v.extend(
        Variant::ALL
            .iter()
            .map(|v| format!("model_{}", v.short_name())),
    );
    v
}

/// Checks the whole suite with `seeds` seeds per component, appending the
/// faulty control when asked.
pub fn run_suite(
    seeds: u64,
    include_faulty: bool,
    mut on_component: impl FnMut(&ComponentResult),
) -> Result<GradcheckReport> {
    let mut components = Vec::new();
    let mut push = |r: ComponentResult| {
        on_component(&r);
        components.push(r);
    };
    for (name, make) in primitive_problems().into_iter().chain(block_problems()) {
        push(check_component(name, seeds, make)?);
    }
    for v in Variant::ALL {
        push(check_component(
            &format!("model_{}", v.short_name()),
            seeds,
            |s| model_problem(v, s),
        )?);
    }
    if include_faulty {
        push(check_component(FAULTY_COMPONENT, seeds, faulty_problem)?);
    }
    Ok(GradcheckReport {
        tolerance: TOLERANCE,
        step: STEP,
        components,
    })
}
