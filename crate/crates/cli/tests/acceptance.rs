//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. The long end-to-end comparison runs only
//! with `--include-ignored` (or `--ignored`).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use candle_core::{DType, Device, Tensor};
use symdiff_core::constfit::{fit_constants, FitConfig, FitProblem};
use symdiff_core::dataset::{check_record, generate_record, DatasetConfig, DatasetSplit, Split};
use symdiff_core::metrics::{acc_tau, compare_models, paired_t_test, r2_score, Comparison, EvalReport, TAUS};
use symdiff_core::rng::PortableRng;
use symdiff_core::{validate_rpn, Vocabulary, MAX_SEQ_LEN};
use symdiff_nn::argen::ar_loss;
use symdiff_nn::backbone::{Architecture, BackboneConfig, Mode, SymbolicModel, MODE_SPECIFIC_FIELDS};
use symdiff_nn::checkpoint::load_checkpoint;
use symdiff_nn::d3pm::{d3pm_loss_from_logits, sample, softmax, Denoiser, DiffusionConfig, NoiseSchedule, TransitionModel};
use symdiff_nn::generator::{ModelGenerator, SamplingConfig};
use symdiff_nn::params::ParamStore;
use symdiff_nn::pointenc::PointEncoder;
use symdiff_nn::trainer::{train, Objective, TrainConfig};
use symdiff_nn::NnError;

type Matrix = Vec<Vec<f64>>;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

/// Collects sub-check results; the criterion passes when all of them do.
#[derive(Default)]
struct Checks {
    failed: Vec<String>,
    notes: Vec<String>,
}

impl Checks {
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        let what = what.into();
        if !ok {
            self.failed.push(what.clone());
        }
        self.notes.push(what);
    }

    fn outcome(self) -> Outcome {
        if self.failed.is_empty() {
            Outcome::new(true, self.notes.join("; "))
        } else {
            Outcome::new(false, format!("failed: {}", self.failed.join("; ")))
        }
    }
}

fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let n = b[0].len();
    a.iter().map(|row| (0..n).map(|j| row.iter().zip(b).map(|(x, r)| x * r[j]).sum()).collect()).collect()
}

fn identity(k: usize) -> Matrix {
    (0..k).map(|i| (0..k).map(|j| f64::from(u8::from(i == j))).collect()).collect()
}

fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn row_error(m: &Matrix) -> f64 {
    m.iter().map(|r| (r.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max)
}

/// Literal products `Q_1 ... Q_t`, index 0 being the identity.
fn literal_cumulative(tm: &TransitionModel) -> Vec<Matrix> {
    let mut out = vec![identity(tm.k())];
    for t in 1..=tm.timesteps() {
        let next = matmul(out.last().unwrap(), &tm.one_step_matrix(t));
        out.push(next);
    }
    out
}

fn criterion_1() -> Outcome {
    let (k, s, big_t) = (4usize, 3usize, 5usize);
    let tm = TransitionModel::new(k, NoiseSchedule::constant(big_t, 0.1)).unwrap();
    let lit = literal_cumulative(&tm);
    let mut c = Checks::default();

    let closed = (1..=big_t).map(|t| max_abs_diff(&tm.cumulative_matrix(t), &lit[t])).fold(0.0, f64::max);
    c.check(closed <= 1e-10, format!("(a) closed form vs product {closed:.1e}"));

    let mut bayes = 0.0f64;
    for t in 2..=big_t {
        let q = tm.one_step_matrix(t);
        for x0 in 0..k {
            for xt in 0..k {
                let joint: Vec<f64> = (0..k).map(|j| lit[t - 1][x0][j] * q[j][xt]).collect();
                let z = lit[t][x0][xt];
                let mut onehot = vec![0.0; k];
                onehot[x0] = 1.0;
                let model = tm.posterior(&[xt as u32], &onehot, &[t]).unwrap();
                let exact = tm.true_posterior(xt as u32, x0 as u32, t);
                for j in 0..k {
                    let want = joint[j] / z;
                    bayes = bayes.max((model[j] - want).abs()).max((exact[j] - want).abs());
                }
            }
        }
    }
    c.check(bayes <= 1e-10, format!("(b) posterior vs Bayes {bayes:.1e}"));

    let mut rows = 0.0f64;
    for t in 1..=big_t {
        rows = rows.max(row_error(&tm.one_step_matrix(t))).max(row_error(&tm.cumulative_matrix(t)));
        for s in 0..t {
            rows = rows.max(row_error(&tm.skip_matrix(s, t)));
        }
    }
    c.check(rows <= 1e-12, format!("(c) row sums {rows:.1e}"));

    let loss = loss_gap(&tm, s, &lit);
    c.check(loss <= 1e-8, format!("(d) loss vs enumeration {loss:.1e}"));
    c.outcome()
}

/// Largest gap between the tensor loss and a per-position scalar
/// enumeration over a batch that covers every timestep.
fn loss_gap(tm: &TransitionModel, s: usize, lit: &[Matrix]) -> f64 {
    let k = tm.k();
    let mut rng = PortableRng::new(101, 0);
    let ts: Vec<usize> = (1..=tm.timesteps()).collect();
    let b = ts.len();
    let x0: Vec<u32> = (0..b * s).map(|_| rng.below(k as u64) as u32).collect();
    let xt: Vec<u32> = (0..b * s).map(|_| rng.below(k as u64) as u32).collect();
    let logits: Vec<f64> = (0..b * s * k).map(|_| rng.uniform(-3.0, 3.0)).collect();
    let tensor = Tensor::from_vec(logits.clone(), (b, s, k), &Device::Cpu).unwrap();
    let mut worst = 0.0f64;
    for lambda in [0.0, 0.01, 0.7] {
        let got = d3pm_loss_from_logits(&tensor, &x0, &xt, &ts, tm, lambda).unwrap().total.to_scalar::<f64>().unwrap();
        let (mut vb, mut ce) = (0.0, 0.0);
        for pos in 0..b * s {
            let t = ts[pos / s];
            let p = softmax(&logits[pos * k..(pos + 1) * k]);
            let (a, c) = (x0[pos] as usize, xt[pos] as usize);
            ce -= p[a].ln();
            if t == 1 {
                vb -= p[a].ln();
                continue;
            }
            let q = tm.one_step_matrix(t);
            let truth: Vec<f64> = (0..k).map(|j| lit[t - 1][a][j] * q[j][c] / lit[t][a][c]).collect();
            let model: Vec<f64> = (0..k).map(|j| (0..k).map(|y| p[y] * lit[t - 1][y][j] * q[j][c]).sum::<f64>()).collect();
            let z: f64 = model.iter().sum();
            vb += (0..k).filter(|&j| truth[j] > 0.0).map(|j| truth[j] * (truth[j] / (model[j] / z)).ln()).sum::<f64>();
        }
        let n = (b * s) as f64;
        let want = vb / n + lambda * ce / n;
        worst = worst.max((got - want).abs());
    }
    worst
}

/// Denoiser that knows x0 and says so with overwhelming confidence.
struct Oracle {
    x0: Vec<u32>,
    k: usize,
}

impl Denoiser for Oracle {
    fn x0_logits(&self, xt: &[u32], _t: &[usize], _batch: usize) -> Result<Vec<f64>, NnError> {
        assert_eq!(xt.len(), self.x0.len());
        Ok(self.x0.iter().flat_map(|&x| (0..self.k).map(move |j| if j == x as usize { 0.0 } else { -1e4 })).collect())
    }
}

fn criterion_2() -> Outcome {
    let (k, s) = (13usize, 32usize);
    let tm = DiffusionConfig { timesteps: 100, ..Default::default() }.transition_model(k).unwrap();
    let mut recovered = 0;
    for run in 0..100u64 {
        let mut r = PortableRng::new(run, 0);
        let x0: Vec<u32> = (0..s).map(|_| r.below(k as u64) as u32).collect();
        let out = sample(&Oracle { x0: x0.clone(), k }, 1, s, &tm, &mut PortableRng::new(run, 1), 100).unwrap();
        recovered += usize::from(out[0] == x0);
    }
    Outcome::new(recovered == 100, format!("{recovered}/100 seeded runs recovered x0"))
}

fn criterion_3() -> Outcome {
    let k = 15usize;
    let tm = DiffusionConfig::default().transition_model(k).unwrap();
    let n = 100_000usize;
    let mut c = Checks::default();
    for (i, t) in [1usize, 10, 250, 500, 1000].into_iter().enumerate() {
        let mut r = PortableRng::new(7, i as u64);
        let x0: Vec<u32> = (0..n).map(|_| r.below(k as u64) as u32).collect();
        let xt = tm.sample_xt(&x0, &vec![t; n], &mut PortableRng::new(8, i as u64)).unwrap();
        let changed = x0.iter().zip(&xt).filter(|(a, b)| a != b).count() as f64 / n as f64;
        let p = (1.0 - tm.gamma_bar(t)) * (k - 1) as f64 / k as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        let z = if se > 0.0 { (changed - p).abs() / se } else { (changed - p).abs() * f64::INFINITY };
        c.check(z <= 3.0 || changed == p, format!("t={t}: {changed:.5} vs {p:.5} ({z:.2} SE)"));
    }
    c.outcome()
}

const GRAD_STEP: f64 = 1e-4;
const GRAD_FLOOR: f64 = 1e-6;

/// Worst relative error of analytic gradients against a fourth-order
/// central difference, over every parameter entry.
fn worst_gradient_error(store: &ParamStore, loss: impl Fn() -> Tensor) -> (usize, f64) {
    let grads = loss().backward().unwrap();
    let (mut count, mut worst) = (0usize, 0.0f64);
    for (_, var) in store.params() {
        let analytic: Vec<f64> = grads.get(var.as_tensor()).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let original = var.as_tensor().copy().unwrap();
        let base: Vec<f64> = original.flatten_all().unwrap().to_vec1().unwrap();
        for (i, &a) in analytic.iter().enumerate() {
            let f = |d: f64| {
                let mut v = base.clone();
                v[i] += d;
                var.set(&Tensor::from_vec(v, original.shape(), &Device::Cpu).unwrap()).unwrap();
                loss().to_scalar::<f64>().unwrap()
            };
            let h = GRAD_STEP * base[i].abs().max(1.0);
            let numeric = (8.0 * (f(h) - f(-h)) - (f(2.0 * h) - f(-2.0 * h))) / (12.0 * h);
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR));
            count += 1;
        }
        var.set(&original).unwrap();
    }
    (count, worst)
}

fn uniform_tensor(seed: u64, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let mut r = PortableRng::new(seed, 3);
    let n = shape.iter().product();
    Tensor::from_vec((0..n).map(|_| r.uniform(lo, hi)).collect::<Vec<f64>>(), shape, &Device::Cpu).unwrap()
}

fn criterion_4() -> Outcome {
    let mut c = Checks::default();
    let e = 16;
    {
        let store = ParamStore::new(1, DType::F64, Device::Cpu);
        let enc = PointEncoder::new(&store, 3, e).unwrap();
        let pts = uniform_tensor(2, &[1, 2, 3], -2.0, 2.0);
        let w = uniform_tensor(3, &[1, e], -1.0, 1.0);
        let (n, worst) = worst_gradient_error(&store, || (enc.forward_eval(&pts).unwrap() * &w).unwrap().sum_all().unwrap());
        c.check(worst <= 1e-4, format!("encoder eval {n} grads {worst:.1e}"));
    }
    {
        let store = ParamStore::new(4, DType::F64, Device::Cpu);
        let enc = PointEncoder::new(&store, 3, e).unwrap();
        let pts = uniform_tensor(5, &[3, 4, 3], -2.0, 2.0);
        let w = uniform_tensor(6, &[3, e], -1.0, 1.0);
        let (n, worst) = worst_gradient_error(&store, || {
            (enc.forward(&pts, Some(&mut PortableRng::new(0, 0))).unwrap() * &w).unwrap().sum_all().unwrap()
        });
        c.check(worst <= 1e-4, format!("encoder batch-stat {n} grads {worst:.1e}"));
    }
    let arch = Architecture { embed_dim: e, heads: 2, layers: 2, ff_dim: 32, dropout: 0.15 };
    let s = 8;
    let mut r = PortableRng::new(9, 0);
    let x0: Vec<u32> = (0..2 * s).map(|_| r.below(15) as u32).collect();
    let pts = uniform_tensor(10, &[2, 3, 3], -2.0, 2.0);
    {
        let model = SymbolicModel::new(BackboneConfig::new(&arch, s, 15, Mode::Diffusion, 20), 11, DType::F64, &Device::Cpu).unwrap();
        let tm = TransitionModel::new(15, NoiseSchedule::cosine(20, 1e-2, 0.2)).unwrap();
        let t = [1usize, 13];
        let xt = tm.sample_xt(&x0, &t, &mut PortableRng::new(12, 0)).unwrap();
        let (n, worst) = worst_gradient_error(model.store(), || {
            let logits = model.forward(&xt, 2, &pts, Some(&t), Some(&mut PortableRng::new(13, 0))).unwrap();
            d3pm_loss_from_logits(&logits, &x0, &xt, &t, &tm, 0.01).unwrap().total
        });
        c.check(worst <= 1e-4, format!("diffusion backbone {n} grads {worst:.1e}"));
    }
    {
        let model = SymbolicModel::new(BackboneConfig::new(&arch, s, 15, Mode::Autoregressive, 20), 14, DType::F64, &Device::Cpu).unwrap();
        let (n, worst) = worst_gradient_error(model.store(), || ar_loss(&model, &x0, 2, &pts, Some(&mut PortableRng::new(15, 0))).unwrap());
        c.check(worst <= 1e-4, format!("autoregressive backbone {n} grads {worst:.1e}"));
    }
    c.outcome()
}

fn criterion_5() -> Outcome {
    let mut c = Checks::default();
    let arch = Architecture::default();
    let diffusion = BackboneConfig::new(&arch, MAX_SEQ_LEN, 15, Mode::Diffusion, 1000);
    let ar = BackboneConfig::new(&arch, MAX_SEQ_LEN, 15, Mode::Autoregressive, 1000);
    let diff = diffusion.diff(&ar);
    c.check(diff.iter().all(|f| MODE_SPECIFIC_FIELDS.contains(&f.as_str())), format!("config fields differing: {diff:?}"));

    let small = Architecture { embed_dim: 16, heads: 2, layers: 2, ff_dim: 32, dropout: 0.1 };
    let shapes = |mode| -> BTreeMap<String, Vec<usize>> {
        SymbolicModel::new(BackboneConfig::new(&small, 8, 15, mode, 50), 0, DType::F32, &Device::Cpu).unwrap().parameter_shapes().into_iter().collect()
    };
    let (d, a) = (shapes(Mode::Diffusion), shapes(Mode::Autoregressive));
    let only_d: Vec<&String> = d.keys().filter(|n| !a.contains_key(*n)).collect();
    let only_a: Vec<&String> = a.keys().filter(|n| !d.contains_key(*n)).collect();
    c.check(only_a.is_empty() && !only_d.is_empty() && only_d.iter().all(|n| n.starts_with("time_mlp.")), format!("diffusion-only parameters {only_d:?}"));
    let mut reshaped = Vec::new();
    for (name, ds) in &d {
        if let Some(as_) = a.get(name) {
            if ds != as_ {
                // The one extra row or column holds BOS.
                let bos_only = ds.len() == as_.len() && ds.iter().zip(as_).filter(|(x, y)| x != y).all(|(x, y)| *y == x + 1 && *x == 15);
                c.check(bos_only, format!("{name}: {ds:?} vs {as_:?}"));
                reshaped.push(name.clone());
            }
        }
    }
    c.check(!reshaped.is_empty(), format!("BOS-sized tensors {reshaped:?}"));
    let encoder_same = d.iter().filter(|(n, _)| n.starts_with("encoder.")).all(|(n, s)| a.get(n) == Some(s));
    c.check(encoder_same, "encoder identical");
    c.outcome()
}

/// Desk-scale overfit settings for criterion 6.
const OVERFIT_SAMPLES: usize = 100;
const OVERFIT_POINTS: usize = 50;
const OVERFIT_DIFFUSION_EPOCHS: usize = 1500;
const OVERFIT_AR_EPOCHS: usize = 1000;

fn overfit_run(mode: Mode, split: &DatasetSplit, dir: &Path) -> (f64, f64, usize, usize) {
    let vocab = Vocabulary::standard();
    let arch = Architecture { embed_dim: 64, heads: 4, layers: 2, ff_dim: 256, dropout: 0.0 };
    let diffusion = DiffusionConfig { lambda: 1.0, ..Default::default() };
    let epochs = if mode == Mode::Diffusion { OVERFIT_DIFFUSION_EPOCHS } else { OVERFIT_AR_EPOCHS };
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        batch_size: OVERFIT_SAMPLES,
        max_epochs: epochs,
        plateau_patience: usize::MAX,
        early_stop_patience: usize::MAX,
        ..Default::default()
    };
    let model = SymbolicModel::new(BackboneConfig::new(&arch, MAX_SEQ_LEN, vocab.size(), mode, diffusion.timesteps), 1, DType::F32, &Device::Cpu).unwrap();
    let objective = Objective::for_model(&model, &diffusion).unwrap();
    let outcome = train(&model, &objective, split, split, &vocab, &cfg, 1, dir, |_| {}).unwrap();
    let first = outcome.epochs.first().unwrap().train_loss;
    let last = outcome.epochs.last().unwrap().train_loss;
    let loaded = load_checkpoint(&outcome.checkpoint, &Device::Cpu).unwrap();
    let generator = ModelGenerator::new(loaded, SamplingConfig::default(), mode.as_str()).unwrap();
    let flat: Vec<f32> = split.records.iter().flat_map(|r| r.points.iter().flat_map(|p| p.map(|v| v as f32))).collect();
    let points = generator.checkpoint.model.points_tensor(&flat, split.len(), OVERFIT_POINTS).unwrap();
    let generated = generator.generate_ids(&points, 0).unwrap();
    let exact = generated.iter().zip(&split.records).filter(|(g, r)| g.as_slice() == r.tokens.ids()).count();
    let valid = generated.into_iter().filter(|g| validate_rpn(&symdiff_core::TokenSequence::new(g.clone()), &vocab).valid).count();
    (first, last, exact, valid)
}

fn criterion_6() -> Outcome {
    let vocab = Vocabulary::standard();
    let config = DatasetConfig { n_points: OVERFIT_POINTS, seed: 5, ..Default::default() };
    let records = (0..OVERFIT_SAMPLES as u64).map(|i| generate_record(i, &config, &vocab).unwrap()).collect();
    let split = DatasetSplit::from_records(records, OVERFIT_POINTS, MAX_SEQ_LEN);
    let dir = tempfile::tempdir().unwrap();
    let mut c = Checks::default();
    let (first, last, exact, valid) = overfit_run(Mode::Autoregressive, &split, &dir.path().join("ar"));
    c.check(last <= 0.5 * first, format!("ar loss {first:.4} -> {last:.4}"));
    c.check(exact >= 80, format!("ar greedy exact {exact}/100"));
    let (first, last, exact, valid_d) = overfit_run(Mode::Diffusion, &split, &dir.path().join("diffusion"));
    c.check(last <= 0.5 * first, format!("diffusion loss {first:.4} -> {last:.4}"));
    c.check(exact >= 60, format!("diffusion exact {exact}/100"));
    c.check(valid_d >= 90, format!("diffusion valid {valid_d}/100 (ar valid {valid}/100)"));
    c.outcome()
}

/// Each skeleton with the sign pattern of its constants' magnitudes drawn
/// from [0.5, 2].
const FIT_TEMPLATES: [&str; 10] = [
    "C x1 *",
    "C x1 * x2 +",
    "C x1 * exp",
    "x1 C * sin x2 +",
    "C x1 x1 * * C x2 * +",
    "C x1 * C + x2 *",
    "C x1 * exp C *",
    "C x1 / C x2 * +",
    "C x1 * C x2 * + C +",
    "x1 x2 * C * C x1 * C + exp +",
];

fn criterion_7() -> Outcome {
    let vocab = Vocabulary::standard();
    let fit = FitConfig::default();
    let mut recovered = 0;
    let mut misses = Vec::new();
    for case in 0..50usize {
        let text = FIT_TEMPLATES[case % FIT_TEMPLATES.len()];
        let seq = vocab.tokenize(text, MAX_SEQ_LEN).unwrap();
        let program = symdiff_core::Program::compile(&seq, &vocab).unwrap();
        let mut r = PortableRng::new(70, case as u64);
        let truth: Vec<f64> = (0..program.n_constants()).map(|_| r.uniform(0.5, 2.0) * if r.next_f64() < 0.5 { -1.0 } else { 1.0 }).collect();
        let points: Vec<[f64; 3]> = (0..200)
            .map(|_| {
                let x = [r.uniform(-3.0, 3.0), r.uniform(-3.0, 3.0)];
                [x[0], x[1], program.eval(&x, &truth).unwrap()]
            })
            .collect();
        let problem = FitProblem::new(&seq, &vocab, &points, fit.bounds).unwrap();
        let got = fit_constants(&problem, &fit, &mut PortableRng::new(71, case as u64));
        let ok = got.constants.iter().zip(&truth).all(|(g, t)| ((g - t) / t).abs() <= 1e-3);
        if ok {
            recovered += 1;
        } else {
            misses.push(format!("{text} {truth:?} -> {:?}", got.constants));
        }
    }
    Outcome::new(recovered >= 48, format!("{recovered}/50 recovered within 1e-3{}", if misses.is_empty() { String::new() } else { format!("; misses: {}", misses.join(" | ")) }))
}

/// Adaptive Simpson quadrature.
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 50)
}

/// Two-sided Student-t tail by integrating the density over `[0, |t|]`.
fn quadrature_p(t: f64, df: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    let norm = (ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0)).exp() / (df * std::f64::consts::PI).sqrt();
    let density = move |x: f64| norm * (1.0 + x * x / df).powf(-(df + 1.0) / 2.0);
    (1.0 - 2.0 * simpson(&density, 0.0, t.abs(), 1e-13)).max(0.0)
}

fn criterion_8(bin: &Path) -> Outcome {
    let mut c = Checks::default();
    let y = [1.0, 2.0, 3.0, 4.0];
    let worse = [4.0, 3.0, 2.0, 1.0];
    let mean = [2.5; 4];
    c.check(r2_score(&y, &y) == 1.0 && r2_score(&y, &mean) == 0.0 && r2_score(&y, &worse) == 0.0, "R2 clamping");

    let mut r = PortableRng::new(80, 0);
    let mut monotone = true;
    for _ in 0..1000 {
        let n = 1 + r.below(20) as usize;
        let yv: Vec<f64> = (0..n).map(|_| r.uniform(-5.0, 5.0)).collect();
        let scale = 10f64.powf(r.uniform(-5.0, 0.0));
        let yh: Vec<f64> = yv.iter().map(|v| v + r.uniform(-scale, scale)).collect();
        let [a1, a2, a3] = TAUS.map(|tau| acc_tau(&yv, &yh, tau));
        monotone &= (!a3 || a2) && (!a2 || a1);
    }
    c.check(monotone, "Acc monotone on 1000 vectors");

    let mut worst = 0.0f64;
    let example = paired_t_test(&[1.0, 1.0, 1.0, -1.0], &[0.0; 4]).unwrap();
    worst = worst.max((example.p - quadrature_p(1.0, 3.0)).abs());
    for case in 0..100u64 {
        let mut r = PortableRng::new(81, case);
        let n = 2 + r.below(60) as usize;
        let shift = r.uniform(-1.0, 1.0);
        let a: Vec<f64> = (0..n).map(|_| r.uniform(-2.0, 2.0)).collect();
        let b: Vec<f64> = a.iter().map(|v| v + shift + r.uniform(-1.5, 1.5)).collect();
        let tt = paired_t_test(&a, &b).unwrap();
        worst = worst.max((tt.p - quadrature_p(tt.t, tt.df as f64)).abs());
    }
    c.check(worst <= 1e-6 && (example.p - 0.391).abs() < 1e-3, format!("t-test vs quadrature {worst:.1e} over 101 cases (p = {:.4} for the 4-pair example)", example.p));

    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ok = run_cli(bin, &["gen-data", "--out", &s(&d.join("data")), "--n", "60", "--n-points", "40", "--split", "0.5,0.25,0.25", "--seed", "8"])
        && run_cli(bin, &["eval", "--oracle", "--data", &s(&d.join("data")), "--out", &s(&d.join("eval")), "--split", "validate"])
        && run_cli(bin, &["compare", "--report-a", &s(&d.join("eval")), "--report-b", &s(&d.join("eval")), "--out", &s(&d.join("cmp"))]);
    c.check(ok, "CLI gen-data/eval/compare exit 0");
    if ok {
        let report = EvalReport::read(&d.join("eval/report.json")).unwrap();
        c.check((report.aggregates.mean_r2 - 1.0).abs() < 1e-9, format!("oracle eval mean R2 {}", report.aggregates.mean_r2));
        let cmp: Comparison = serde_json::from_str(&fs::read_to_string(d.join("cmp/comparison.json")).unwrap()).unwrap();
        let zero = cmp.rows.iter().all(|r| r.delta == 0.0) && cmp.r2_t_test.p == 1.0;
        c.check(zero && compare_models(&report, &report).unwrap() == cmp, "self-comparison deltas 0, p = 1");
    }
    c.outcome()
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

fn run_cli(bin: &Path, args: &[&str]) -> bool {
    let out = Command::new(bin).args(args).output().expect("binary runs");
    if !out.status.success() {
        eprintln!("symdiff {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr));
    }
    out.status.success()
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir).unwrap().map(|e| e.unwrap()).map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())).collect()
}

fn criterion_9(bin: &Path) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut c = Checks::default();
    let args = |out: &Path| vec!["gen-data".to_string(), "--out".into(), s(out), "--n".into(), "1000".into(), "--seed".into(), "7".into()];
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let argv = args(out);
        c.check(run_cli(bin, &argv.iter().map(String::as_str).collect::<Vec<_>>()), format!("gen-data into {}", out.file_name().unwrap().to_string_lossy()));
    }
    let (fa, fb) = (dir_bytes(&a), dir_bytes(&b));
    c.check(fa == fb && fa.len() == 6, format!("{} files byte-identical", fa.len()));
    let vocab = Vocabulary::standard();
    let mut total = 0;
    let mut bad = Vec::new();
    for split in Split::all() {
        let data = DatasetSplit::open(&a, split, &vocab).unwrap();
        for (i, r) in data.records.iter().enumerate() {
            total += 1;
            let finite = r.points.iter().flatten().all(|v| v.is_finite());
            if !validate_rpn(&r.tokens, &vocab).valid || check_record(r, &vocab).is_err() || !finite {
                bad.push(format!("{split:?}:{i}"));
            }
        }
    }
    c.check(total == 1000 && bad.is_empty(), format!("{total} records re-checked, {} bad {bad:?}", bad.len()));
    c.outcome()
}

fn criterion_10(bin: &Path) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = s(&d.join("data"));
    let model = ["--embed-dim", "64", "--heads", "4", "--layers", "2", "--ff-dim", "256", "--lr", "1e-3", "--epochs", "15"];
    let mut ok = run_cli(bin, &["gen-data", "--out", &data, "--n", "21000", "--split", &format!("{},0,{}", 20.0 / 21.0, 1.0 / 21.0), "--seed", "10"]);
    for mode in ["diffusion", "ar"] {
        let mut argv = vec!["train", "--mode", mode, "--data", &data];
        let out = s(&d.join(mode));
        argv.extend(["--out", &out]);
        argv.extend(model);
        ok = ok && run_cli(bin, &argv);
        let ckpt = s(&d.join(mode).join("best.ckpt"));
        let eval_out = s(&d.join(format!("eval-{mode}")));
        ok = ok && run_cli(bin, &["eval", "--checkpoint", &ckpt, "--data", &data, "--split", "validate", "--limit", "1000", "--out", &eval_out]);
    }
    let cmp = s(&d.join("cmp"));
    ok = ok && run_cli(bin, &["compare", "--report-a", &s(&d.join("eval-diffusion")), "--report-b", &s(&d.join("eval-ar")), "--out", &cmp]);
    if !ok {
        return Outcome::new(false, "pipeline failed");
    }
    let a = EvalReport::read(&d.join("eval-diffusion/report.json")).unwrap().aggregates;
    let b = EvalReport::read(&d.join("eval-ar/report.json")).unwrap().aggregates;
    println!("{}", fs::read_to_string(d.join("cmp/comparison.txt")).unwrap());
    let pass = a.mean_r2 > 0.3 && b.mean_r2 > 0.3 && a.valid_rpn_rate >= 0.8;
    Outcome::new(pass, format!("diffusion R2 {:.3} valid {:.3}; ar R2 {:.3} valid {:.3}", a.mean_r2, a.valid_rpn_rate, b.mean_r2, b.valid_rpn_rate))
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    // `cargo test --list` style probes get an empty listing.
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let long = args.iter().any(|a| a == "--include-ignored" || a == "--ignored");
    let filters: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();
    let bin = Path::new(env!("CARGO_BIN_EXE_symdiff"));

    let criteria: Vec<(u32, &str, Box<dyn Fn() -> Outcome>)> = vec![
        (1, "d3pm exactness", Box::new(criterion_1)),
        (2, "oracle sampler", Box::new(criterion_2)),
        (3, "forward-noising monte carlo", Box::new(criterion_3)),
        (4, "gradient checks", Box::new(criterion_4)),
        (5, "architecture parity", Box::new(criterion_5)),
        (6, "overfit convergence", Box::new(criterion_6)),
        (7, "constant-fitting recovery", Box::new(criterion_7)),
        (8, "metrics conformance", Box::new(move || criterion_8(bin))),
        (9, "dataset determinism", Box::new(move || criterion_9(bin))),
        (10, "small-scale end-to-end comparison", Box::new(move || criterion_10(bin))),
    ];
    let mut failures = 0;
    for (id, name, run) in criteria {
        let label = format!("criterion_{id:02}_{}", name.replace([' ', '-'], "_"));
        if !filters.is_empty() && !filters.iter().any(|f| label.contains(f.as_str())) {
            continue;
        }
        if id == 10 && !long {
            println!("criterion {id:>2} {name}: SKIPPED (long test, pass --include-ignored to run)");
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default();
            Outcome::new(false, format!("panicked: {msg}"))
        });
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} {name}: {verdict} ({:.1?}) {}", start.elapsed(), outcome.detail);
        failures += usize::from(!outcome.pass);
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
