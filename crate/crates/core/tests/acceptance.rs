//! Acceptance suite. Runs every criterion in sequence (timings must not
//! compete for cores) and prints one PASS/FAIL line each.
//!
//! `cargo test -p curve-core --test acceptance [-- FILTER...]`

mod common;

use std::time::{Duration, Instant};

use curve_core::bench::{plan_spread, run_bench, BenchOptions, Resolution};
use curve_core::enhance::{compose, enhance, naive, naive_float, EnhanceOptions};
use curve_core::imaging::{quantize, to_float, FloatImage, QuantizedImage};
use curve_core::neural::{
    adaptive_avg_pool, adaptive_avg_pool_backward, concat, concat_backward, relu, relu_backward,
    squash, Conv2d, Linear, ParamSet, PolicyNetwork, QNetwork, Tensor,
};
use curve_core::reward::{clip_loss_from_similarities, proxy_loss, LossProvider, RewardError};
use curve_core::sac::{
    policy_loss, q_loss, run_episode, ActionSource, LogEvent, SacConfig, Trainer, TrainingImage,
};
use curve_core::synthetic::{dark_scene, random_image};
use curve_core::tone_curve::{sample_curve, ActionVector, ControlPoints};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{central, luma, mean, rel_err, ExactCurve};

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [Criterion; 7] = [
        ("curve_correctness", curve_correctness),
        ("lut_equivalence", lut_equivalence),
        ("identity_chain", identity_chain),
        ("gradient_suite", gradient_suite),
        ("reward_math", reward_math),
        ("desk_scale_learning", desk_scale_learning),
        ("resolution_independence", resolution_independence),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (name, run) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let t = Instant::now();
        let out = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            check(false, format!("panicked: {msg}"))
        });
        if !out.pass {
            failed += 1;
        }
        println!(
            "acceptance {name}: {} ({:.1}s) {}",
            if out.pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            out.detail
        );
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

/// Piecewise application against the exact parametric curve.
fn curve_correctness() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut err32, mut err256) = (0.0f64, 0.0f64);
    let (mut over32, mut over256) = (0, 0);
    for _ in 0..1000 {
        let p = ControlPoints {
            p1_in: rng.random(),
            p1_out: rng.random(),
            p2_in: rng.random(),
            p2_out: rng.random(),
        };
        let exact = ExactCurve::new(p);
        let t32 = sample_curve(&p, 32).unwrap();
        let t256 = sample_curve(&p, 256).unwrap();
        let (mut d32, mut d256) = (0.0f64, 0.0f64);
        for _ in 0..1000 {
            let x: f64 = rng.random();
            let y = exact.eval(x);
            d32 = d32.max((t32.eval(x) - y).abs());
            d256 = d256.max((t256.eval(x) - y).abs());
        }
        over32 += usize::from(d32 > 5e-3);
        over256 += usize::from(d256 > 1e-4);
        err32 = err32.max(d32);
        err256 = err256.max(d256);
    }
    let el = t.elapsed();
    check(
        err32 <= 5e-3 && err256 <= 1e-4 && within(el, 10.0),
        format!(
            "max error L=32 {err32:.3e} (<= 5e-3, {over32}/1000 draws over), \
             L=256 {err256:.3e} (<= 1e-4, {over256}/1000 draws over), {:.2}s (< 10s)",
            el.as_secs_f64()
        ),
    )
}

fn random_action(rng: &mut impl Rng) -> ActionVector {
    ActionVector::from_array(std::array::from_fn(|_| rng.random_range(-2.0..=2.0))).unwrap()
}

/// Composite-LUT output against sequential full-resolution application.
fn lut_equivalence() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut mismatched = 0;
    let mut max_delta = 0.0f64;
    for _ in 0..200 {
        let img = random_image(3, 64, 64, 8, &mut rng);
        let actions: Vec<ActionVector> = (0..5).map(|_| random_action(&mut rng)).collect();
        let (lut, tables) = compose(&actions, 64, 8).unwrap();
        let fast = curve_core::tone_curve::map_image(&img, &lut).unwrap();
        if fast != naive(&img, &tables) {
            mismatched += 1;
        }
        let reference = naive_float(&img, &tables);
        for (&level, &v) in img.data().iter().zip(reference.data()) {
            let d = (f64::from(lut.values()[level as usize]) - f64::from(v)).abs();
            max_delta = max_delta.max(d);
        }
    }
    let el = t.elapsed();
    check(
        mismatched == 0 && max_delta <= 1e-5 && within(el, 30.0),
        format!(
            "{mismatched}/200 quantized mismatches, pre-quantization max |d| {max_delta:.2e} (<= 1e-5), {:.2}s (< 30s)",
            el.as_secs_f64()
        ),
    )
}

/// Zero actions through both paths.
fn identity_chain() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let zeros = vec![ActionVector::identity(); 5];
    let mut bad = 0;
    let mut n = 0;
    for &(h, w) in &[(64, 64), (37, 101), (224, 224)] {
        for _ in 0..5 {
            let img = random_image(3, h, w, 8, &mut rng);
            let (lut, tables) = compose(&zeros, 64, 8).unwrap();
            let fast = curve_core::tone_curve::map_image(&img, &lut).unwrap();
            let slow = naive(&img, &tables);
            n += 1;
            if fast != img || slow != img {
                bad += 1;
            }
        }
    }
    // A policy whose mean head is zero drives the full pipeline.
    let mut policy = PolicyNetwork::<f32>::new(&mut rng);
    let (wi, bi) = policy.mean_head_indices();
    policy.params_mut().get_mut(wi).fill(0.0);
    policy.params_mut().get_mut(bi).fill(0.0);
    let img = random_image(3, 90, 160, 8, &mut rng);
    let (out, trace) = enhance(&img, &policy, &EnhanceOptions::default()).unwrap();
    let pipeline_ok = out == img && trace.actions.iter().all(|a| a == &[0.0; 4]);
    check(
        bad == 0 && pipeline_ok,
        format!("{bad}/{n} images altered by the zero chain; zero-mean policy pipeline identity: {pipeline_ok}"),
    )
}

const GRAD_INSTANCES: usize = 20;
const H: f64 = 1e-5;

/// Fills `t` with uniform values in `[-scale, scale]`.
fn rand_tensor(shape: &[usize], scale: f64, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::uniform(shape, scale, rng)
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Central difference at `H` that refuses to answer across a kink: the
/// estimate at `H / 2` must agree, otherwise a rectifier, clamp or min
/// switched inside the interval and the derivative is undefined there.
fn smooth_derivative(f: impl Fn(f64) -> f64, x: f64) -> Option<f64> {
    let d1 = central(&f, x, H);
    let d2 = central(&f, x, H / 2.0);
    ((d1 - d2).abs() <= 1e-9 + 1e-6 * d1.abs()).then_some(d1)
}

/// Worst relative error and the number of coordinates that sat on a kink.
#[derive(Default, Clone, Copy)]
struct GradStat {
    worst: f64,
    checked: usize,
    kinks: usize,
}

impl GradStat {
    fn record(&mut self, analytic: f64, numeric: Option<f64>) {
        match numeric {
            Some(n) => {
                self.checked += 1;
                self.worst = self.worst.max(rel_err(analytic, n));
            }
            None => self.kinks += 1,
        }
    }

    fn merge(&mut self, o: GradStat) {
        self.worst = self.worst.max(o.worst);
        self.checked += o.checked;
        self.kinks += o.kinks;
    }
}

/// Compares `analytic` with numeric derivatives of `f` in every coordinate.
fn check_all(x: &Tensor<f64>, analytic: &Tensor<f64>, f: impl Fn(&Tensor<f64>) -> f64) -> GradStat {
    let mut stat = GradStat::default();
    for i in 0..x.len() {
        let num = smooth_derivative(
            |v| {
                let mut y = x.clone();
                y.data_mut()[i] = v;
                f(&y)
            },
            x.data()[i],
        );
        stat.record(analytic.data()[i], num);
    }
    stat
}

/// Same as [`check_all`] for parameter tensors inside a `ParamSet`; with
/// `coords = Some(k)`, `k` random coordinates per tensor.
fn check_params(
    params: &ParamSet<f64>,
    grads: &[Tensor<f64>],
    coords: Option<usize>,
    rng: &mut impl Rng,
    f: impl Fn(&ParamSet<f64>) -> f64,
) -> GradStat {
    let mut stat = GradStat::default();
    for (ti, g) in grads.iter().enumerate() {
        let numeric = |i: usize| {
            smooth_derivative(
                |v| {
                    let mut p = params.clone();
                    p.get_mut(ti).data_mut()[i] = v;
                    f(&p)
                },
                params.get(ti).data()[i],
            )
        };
        match coords {
            None => (0..g.len()).for_each(|i| stat.record(g.data()[i], numeric(i))),
            // A coordinate on a kink is redrawn, up to a fixed budget.
            Some(k) => {
                let mut found = 0;
                for _ in 0..k * 10 {
                    let i = rng.random_range(0..g.len());
                    let num = numeric(i);
                    found += usize::from(num.is_some());
                    stat.record(g.data()[i], num);
                    if found == k {
                        break;
                    }
                }
            }
        }
    }
    stat
}

fn grad_conv(rng: &mut ChaCha8Rng) -> GradStat {
    let mut stat = GradStat::default();
    for inst in 0..GRAD_INSTANCES {
        let (ci, co, k, s) = [(2, 3, 3, 1), (3, 2, 3, 2), (2, 4, 2, 1), (1, 2, 4, 3)][inst % 4];
        let mut params = ParamSet::<f64>::default();
        let conv = Conv2d::register(&mut params, "c", (ci, co, k, s), rng);
        for t in params.tensors_mut() {
            *t = rand_tensor(t.shape(), 1.0, rng);
        }
        let x = rand_tensor(&[2, ci, 7, 8], 1.0, rng);
        let (y, cache) = conv.forward(&params, &x).unwrap();
        let r = rand_tensor(y.shape(), 1.0, rng);
        let mut grads = params.zeros_like();
        let dx = conv.backward(&params, &cache, &r, Some(&mut grads), true).unwrap();
        let obj_x = |x: &Tensor<f64>| dot(&conv.forward(&params, x).unwrap().0, &r);
        stat.merge(check_all(&x, &dx, obj_x));
        let obj_p = |p: &ParamSet<f64>| dot(&conv.forward(p, &x).unwrap().0, &r);
        stat.merge(check_params(&params, grads.tensors(), None, rng, obj_p));
    }
    stat
}

fn grad_linear(rng: &mut ChaCha8Rng) -> GradStat {
    let mut stat = GradStat::default();
    for inst in 0..GRAD_INSTANCES {
        let (fi, fo) = (3 + inst % 5, 2 + inst % 4);
        let mut params = ParamSet::<f64>::default();
        let lin = Linear::register(&mut params, "l", fi, fo, rng);
        for t in params.tensors_mut() {
            *t = rand_tensor(t.shape(), 1.0, rng);
        }
        let x = rand_tensor(&[3, fi], 1.0, rng);
        let y = lin.forward(&params, &x).unwrap();
        let r = rand_tensor(y.shape(), 1.0, rng);
        let mut grads = params.zeros_like();
        let dx = lin.backward(&params, &x, &r, Some(&mut grads), true).unwrap();
        stat.merge(check_all(&x, &dx, |x| dot(&lin.forward(&params, x).unwrap(), &r)));
        stat.merge(check_params(&params, grads.tensors(), None, rng, |p| {
            dot(&lin.forward(p, &x).unwrap(), &r)
        }));
    }
    stat
}

fn grad_relu(rng: &mut ChaCha8Rng) -> GradStat {
    let mut stat = GradStat::default();
    for _ in 0..GRAD_INSTANCES {
        // Keep inputs away from the kink so differences do not straddle it.
        let mut x = rand_tensor(&[2, 3, 4, 4], 1.0, rng);
        x.data_mut().iter_mut().for_each(|v| {
            if v.abs() < 1e-3 {
                *v += 2e-3
            }
        });
        let y = relu(&x);
        let r = rand_tensor(y.shape(), 1.0, rng);
        let dx = relu_backward(&y, &r);
        stat.merge(check_all(&x, &dx, |x| dot(&relu(x), &r)));
    }
    stat
}

fn grad_pool(rng: &mut ChaCha8Rng) -> GradStat {
    let mut stat = GradStat::default();
    for inst in 0..GRAD_INSTANCES {
        let shape = [2, 3, 1 + inst % 4, 2 + inst % 3];
        let x = rand_tensor(&shape, 1.0, rng);
        let y = adaptive_avg_pool(&x).unwrap();
        let r = rand_tensor(y.shape(), 1.0, rng);
        let dx = adaptive_avg_pool_backward(&shape, &r);
        stat.merge(check_all(&x, &dx, |x| dot(&adaptive_avg_pool(x).unwrap(), &r)));
    }
    stat
}

fn grad_concat(rng: &mut ChaCha8Rng) -> GradStat {
    let mut stat = GradStat::default();
    for inst in 0..GRAD_INSTANCES {
        let (fa, fb) = (1 + inst % 4, 2 + inst % 3);
        let a = rand_tensor(&[3, fa], 1.0, rng);
        let b = rand_tensor(&[3, fb], 1.0, rng);
        let y = concat(&a, &b).unwrap();
        let r = rand_tensor(y.shape(), 1.0, rng);
        let (da, db) = concat_backward(fa, &r);
        stat.merge(check_all(&a, &da, |a| dot(&concat(a, &b).unwrap(), &r)));
        stat.merge(check_all(&b, &db, |b| dot(&concat(&a, b).unwrap(), &r)));
    }
    stat
}

/// Reparameterized squashed-Gaussian sample: derivatives of the log-density
/// and of the action in `mu` and `log_sigma`.
fn grad_squash(rng: &mut ChaCha8Rng) -> GradStat {
    let mut stat = GradStat::default();
    for _ in 0..GRAD_INSTANCES {
        let mu: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.5..1.5));
        let ls: [f64; 4] = std::array::from_fn(|_| rng.random_range(-2.0..0.5));
        let eps: [f64; 4] = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
        let s = squash(&mu, &ls, &eps);
        for k in 0..4 {
            let at_mu = |v: f64| {
                let mut m = mu;
                m[k] = v;
                squash(&m, &ls, &eps)
            };
            let at_ls = |v: f64| {
                let mut l = ls;
                l[k] = v;
                squash(&mu, &l, &eps)
            };
            stat.record(s.dlogp_dmu[k], smooth_derivative(|v| at_mu(v).log_prob, mu[k]));
            stat.record(s.dlogp_dlog_std[k], smooth_derivative(|v| at_ls(v).log_prob, ls[k]));
            stat.record(s.da_du[k], smooth_derivative(|v| at_mu(v).action[k], mu[k]));
            stat.record(
                s.da_du[k] * s.du_dlog_std[k],
                smooth_derivative(|v| at_ls(v).action[k], ls[k]),
            );
        }
    }
    stat
}

fn random_states(n: usize, rng: &mut impl Rng) -> Tensor<f64> {
    // Plausible states: images in [0, 1] and differences in [-0.3, 0.3].
    let mut t = Tensor::<f64>::zeros(&[n, 6, 56, 56]);
    let plane = 56 * 56;
    for (i, v) in t.data_mut().iter_mut().enumerate() {
        let ch = (i / plane) % 6;
        *v = if ch < 3 {
            rng.random_range(0.0..1.0)
        } else {
            rng.random_range(-0.3..0.3)
        };
    }
    t
}

/// Soft Bellman residual: gradient over critic parameters, a sample of
/// coordinates from every parameter tensor.
fn grad_q_loss(rng: &mut ChaCha8Rng) -> GradStat {
    let mut stat = GradStat::default();
    for _ in 0..GRAD_INSTANCES {
        let q = QNetwork::<f32>::new(rng).cast::<f64>();
        let states = random_states(2, rng);
        let actions = rand_tensor(&[2, 4], 2.0, rng);
        let targets: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
        let enc = q.encode(&states).unwrap();
        let g = q_loss(&q, &enc, &actions, &targets).unwrap().grads;
        stat.merge(check_params(q.params(), g.tensors(), Some(2), rng, |p| {
            let mut q2 = q.clone();
            *q2.params_mut() = p.clone();
            let enc = q2.encode(&states).unwrap();
            q_loss(&q2, &enc, &actions, &targets).unwrap().loss
        }));
    }
    stat
}

/// Policy objective through the reparameterized action and the min of twin
/// critics: gradient over policy parameters.
fn grad_policy_loss(rng: &mut ChaCha8Rng) -> GradStat {
    let mut stat = GradStat::default();
    for _ in 0..GRAD_INSTANCES {
        let policy = PolicyNetwork::<f32>::new(rng).cast::<f64>();
        let q1 = QNetwork::<f32>::new(rng).cast::<f64>();
        let q2 = QNetwork::<f32>::new(rng).cast::<f64>();
        let states = random_states(2, rng);
        let noise: Vec<[f64; 4]> = (0..2)
            .map(|_| std::array::from_fn(|_| rng.random_range(-2.0..2.0)))
            .collect();
        let alpha = rng.random_range(0.05..1.0);
        let (e1, e2) = (q1.encode(&states).unwrap(), q2.encode(&states).unwrap());
        let critics = [(&q1, &e1), (&q2, &e2)];
        let g = policy_loss(&policy, &critics, &states, alpha, &noise).unwrap().grads;
        stat.merge(check_params(policy.params(), g.tensors(), Some(2), rng, |p| {
            let mut pol = policy.clone();
            *pol.params_mut() = p.clone();
            policy_loss(&pol, &critics, &states, alpha, &noise).unwrap().loss
        }));
    }
    stat
}

fn gradient_suite() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let checks: [(&str, fn(&mut ChaCha8Rng) -> GradStat); 8] = [
        ("conv2d", grad_conv),
        ("linear", grad_linear),
        ("relu", grad_relu),
        ("pool", grad_pool),
        ("concat", grad_concat),
        ("squash", grad_squash),
        ("q_loss", grad_q_loss),
        ("policy_loss", grad_policy_loss),
    ];
    let mut total = GradStat::default();
    let mut parts = Vec::new();
    for (name, f) in checks {
        let st = f(&mut rng);
        total.merge(st);
        parts.push(format!("{name} {:.1e}", st.worst));
    }
    let el = t.elapsed();
    let covered = total.kinks * 10 <= total.checked;
    check(
        total.worst <= 1e-4 && covered && within(el, 120.0),
        format!(
            "max rel err {:.2e} (<= 1e-4) over {GRAD_INSTANCES} instances each [{}], \
             {} coordinates checked, {} skipped on kinks, {:.1}s (< 120s)",
            total.worst,
            parts.join(", "),
            total.checked,
            total.kinks,
            el.as_secs_f64()
        ),
    )
}

/// Proxy loss rounded to a multiple of 2^-20, so reward arithmetic is exact.
struct DyadicProxy;

impl LossProvider for DyadicProxy {
    fn loss(&self, image: &FloatImage, _classes: &[String]) -> Result<f64, RewardError> {
        Ok((proxy_loss(image) * 1_048_576.0).round() / 1_048_576.0)
    }
}

fn reward_math() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let n = rng.random_range(1..=8);
        let pos: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let neg: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let closed = pos
            .iter()
            .zip(&neg)
            .map(|(p, m)| (1.0 + (-(p - m)).exp()).ln())
            .sum::<f64>()
            / n as f64;
        let got = clip_loss_from_similarities(&pos, &neg).unwrap();
        worst = worst.max((got - closed).abs());
    }

    let config = SacConfig::default();
    let beta = config.reward_scale;
    let mut broken = 0;
    let mut episodes = 0;
    let policy = PolicyNetwork::<f32>::new(&mut rng);
    for i in 0..60 {
        let start = dark_scene(224, 224, &mut rng);
        let source = if i % 2 == 0 {
            ActionSource::Uniform
        } else {
            ActionSource::Policy(&policy)
        };
        let ep = run_episode(&start, &["scene".into()], &source, &DyadicProxy, &config, &mut rng).unwrap();
        let total: f64 = ep.rewards().sum();
        let expected = beta * (ep.losses[0] - ep.losses[config.episode_steps]);
        episodes += 1;
        if total != expected {
            broken += 1;
        }
    }
    check(
        worst <= 1e-9 && broken == 0,
        format!(
            "max |loss - softplus form| {worst:.2e} (<= 1e-9) over 1e4 draws; telescoping exact in {}/{episodes} episodes",
            episodes - broken
        ),
    )
}

pub const DESK_BATCH: usize = 4;

fn desk_scale_learning() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let train_imgs: Vec<FloatImage> = (0..16).map(|_| dark_scene(224, 224, &mut rng)).collect();
    let held: Vec<FloatImage> = (0..8).map(|_| dark_scene(224, 224, &mut rng)).collect();
    let all_dark = train_imgs.iter().chain(&held).all(|i| mean(&luma(i)) < 0.2);
    let data: Vec<TrainingImage> = train_imgs
        .iter()
        .map(|i| TrainingImage::new(i, vec!["scene".into()], 224).unwrap())
        .collect();
    let config = SacConfig {
        iterations: 20_000,
        batch_size: DESK_BATCH,
        checkpoint_interval: 0,
        ..Default::default()
    };
    let t = Instant::now();
    let mut trainer = Trainer::new(config, 42).unwrap();
    let report = trainer
        .run(&data, &curve_core::reward::ProxyLoss, None, &mut |_: &LogEvent| {})
        .unwrap();
    let el = t.elapsed();
    let r = &report.episode_returns;
    let first = mean(&r[..100]);
    let last = mean(&r[r.len() - 100..]);

    let (mut before, mut after) = (0.0, 0.0);
    for h in &held {
        let q: QuantizedImage = quantize(h, 8);
        let (out, _) = enhance(&q, &trainer.agent().policy, &EnhanceOptions::default()).unwrap();
        before += (mean(&luma(&to_float(&q))) - 0.5).abs();
        after += (mean(&luma(&to_float(&out))) - 0.5).abs();
    }
    let (before, after) = (before / 8.0, after / 8.0);
    let reduction = 1.0 - after / before;
    check(
        all_dark && last > first && reduction >= 0.5 && el.as_secs_f64() <= 900.0,
        format!(
            "inputs dark: {all_dark}; return first-100 {first:.3} -> last-100 {last:.3}; held-out |lum - 0.5| {before:.3} -> {after:.3} ({:.0}% reduction, >= 50%); {:.0}s (<= 900s)",
            100.0 * reduction,
            el.as_secs_f64()
        ),
    )
}

fn resolution_independence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let policy = PolicyNetwork::<f32>::new(&mut rng);
    // Plan-stage spread: all three resolutions interleaved.
    let rows = run_bench(
        &policy,
        &Resolution::standard(),
        &BenchOptions {
            naive: false,
            ..Default::default()
        },
        &mut rng,
    )
    .unwrap();
    let spread = plan_spread(&rows);
    // End-to-end ratio at UHD.
    let uhd = run_bench(&policy, &["UHD".parse().unwrap()], &BenchOptions::default(), &mut rng).unwrap();
    let u = &uhd[0];
    let speedup = u.speedup().unwrap();
    let plans: Vec<String> = rows
        .iter()
        .map(|r| format!("{} {:.2}ms", r.resolution.label, r.plan_ms))
        .collect();
    check(
        spread <= 0.10 && speedup >= 3.0 && u.outputs_match == Some(true),
        format!(
            "plan stage [{}] spread {:.1}% (<= 10%); UHD LUT {:.1}ms vs naive {:.1}ms = {speedup:.1}x (>= 3x); outputs identical: {}",
            plans.join(", "),
            100.0 * spread,
            u.lut_total_ms,
            u.naive_ms.unwrap(),
            u.outputs_match == Some(true)
        ),
    )
}
