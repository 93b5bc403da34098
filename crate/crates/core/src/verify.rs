//! Finite-difference verification of every differentiable operation, run on
//! random double-precision instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ctc::ctc_loss_and_grad;
use crate::model::{Model, ModelConfig, PathStructure};
use crate::nn::{
    conv1d, conv1d_backward, grad_check, grad_check_piecewise, linear, linear_backward, log_softmax, log_softmax_backward,
    maxpool1d, maxpool1d_backward, BatchNorm, BiLstm, GradCheckReport, Mode,
};
use crate::sinc::{SincConv, SincLayerConfig, SincParams, WindowMode};
use crate::tensor::Tensor;

/// Tolerance for individual operations.
pub const OP_TOLERANCE: f64 = 1e-4;
/// Tolerance for the whole micro model.
pub const MODEL_TOLERANCE: f64 = 1e-3;

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, v).expect("shape matches data")
}

fn dot(a: &Tensor<f64>, b: &[f64]) -> f64 {
    a.data().iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Folds per-seed reports into one line per operation.
fn merge(name: &str, tolerance: f64, reports: Vec<GradCheckReport>) -> GradCheckReport {
    let mut out = GradCheckReport {
        name: name.to_string(),
        checked: 0,
        refined: 0,
        skipped: 0,
        max_rel_error: 0.0,
        worst_index: 0,
        tolerance,
        passed: true,
    };
    for r in reports {
        out.checked += r.checked;
        out.refined += r.refined;
        out.skipped += r.skipped;
        out.passed &= r.passed;
        if !(r.max_rel_error <= out.max_rel_error) {
            out.max_rel_error = r.max_rel_error;
            out.worst_index = r.worst_index;
        }
    }
    out
}

fn sinc_cutoffs(seed: u64) -> Vec<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let filters = rng.random_range(1..=4);
    let kernel = [5, 9, 17, 33][rng.random_range(0..4)];
    let b = rng.random_range(1..=2);
    let n = rng.random_range(kernel..=160);
    let window_mode = if rng.random_bool(0.5) { WindowMode::StandardHamming } else { WindowMode::PaperLiteral };
    let cfg = SincLayerConfig {
        num_filters: filters,
        kernel_length: kernel,
        sample_rate: 8000.0,
        window_mode,
    };
    let mut layer = SincConv::<f64>::new(cfg, seed).expect("valid sinc config");
    let cut: Vec<(f64, f64)> = (0..filters)
        .map(|_| {
            let f1 = rng.random_range(50.0..2500.0);
            (f1, f1 + rng.random_range(100.0..1200.0))
        })
        .collect();
    layer.params = SincParams::from_cutoffs(&cut);
    let x = t(&[b, 1, n], &uniform(&mut rng, b * n));
    let lout = n - kernel + 1;
    let r = uniform(&mut rng, b * filters * lout);
    let (_, cache) = layer.forward(&x).expect("forward");
    let gx = layer.backward(&cache, &t(&[b, filters, lout], &r)).expect("backward");
    let base = layer.clone();
    let obj = |m: &SincConv<f64>, x: &Tensor<f64>| dot(&m.forward(x).expect("forward").0, &r);
    let mut out = vec![grad_check("sinc input", x.data(), gx.data(), |v| obj(&base, &t(&[b, 1, n], v)), OP_TOLERANCE)];
    out.push(grad_check("sinc low_hz", &base.params.low_hz.value.to_f64_vec(), layer.params.low_hz.grad.data(), |v| {
        let mut m = base.clone();
        m.params.low_hz.value = t(&[filters], v);
        obj(&m, &x)
    }, OP_TOLERANCE));
    out.push(grad_check("sinc band_hz", &base.params.band_hz.value.to_f64_vec(), layer.params.band_hz.grad.data(), |v| {
        let mut m = base.clone();
        m.params.band_hz.value = t(&[filters], v);
        obj(&m, &x)
    }, OP_TOLERANCE));
    out
}

fn conv(seed: u64) -> Vec<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, c, cout) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
    let k = rng.random_range(1..6);
    let lin = k + rng.random_range(0..10);
    let x = uniform(&mut rng, b * c * lin);
    let w = uniform(&mut rng, cout * c * k);
    let lout = lin - k + 1;
    let r = uniform(&mut rng, b * cout * lout);
    let loss = |xv: &[f64], wv: &[f64]| dot(&conv1d(&t(&[b, c, lin], xv), &t(&[cout, c, k], wv), 1).expect("conv"), &r);
    let (gx, gw) = conv1d_backward(&t(&[b, c, lin], &x), &t(&[cout, c, k], &w), 1, &t(&[b, cout, lout], &r)).expect("conv backward");
    vec![
        grad_check("conv input", &x, gx.data(), |v| loss(v, &w), OP_TOLERANCE),
        grad_check("conv kernel", &w, gw.data(), |v| loss(&x, v), OP_TOLERANCE),
    ]
}

fn pool(seed: u64) -> Vec<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, c, l) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(3..20));
    // distinct values spaced well beyond the finite-difference step
    let mut x: Vec<f64> = (0..b * c * l).map(|i| i as f64 * 0.01).collect();
    for i in (1..x.len()).rev() {
        x.swap(i, rng.random_range(0..=i));
    }
    let lout = l / 3;
    let r = uniform(&mut rng, b * c * lout);
    let (_, idx) = maxpool1d(&t(&[b, c, l], &x), 3).expect("pool");
    let g = maxpool1d_backward(&[b, c, l], &idx, &t(&[b, c, lout], &r)).expect("pool backward");
    vec![grad_check("max-pool routing", &x, g.data(), |v| dot(&maxpool1d(&t(&[b, c, l], v), 3).expect("pool").0, &r), OP_TOLERANCE)]
}

fn batchnorm(seed: u64, mode: Mode) -> Vec<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, c, l) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(3..7));
    let lengths: Vec<usize> = (0..b).map(|_| rng.random_range(2..=l)).collect();
    let x = uniform(&mut rng, b * c * l);
    let mut bn = BatchNorm::<f64>::new(c);
    for v in bn.gamma.value.data_mut() {
        *v = rng.random_range(0.5..1.5);
    }
    for v in bn.beta.value.data_mut() {
        *v = rng.random_range(-0.5..0.5);
    }
    for v in bn.running_var.data_mut() {
        *v = rng.random_range(0.5..1.5);
    }
    let r = uniform(&mut rng, b * c * l);
    let xt = t(&[b, c, l], &x);
    let (_, cache, _) = bn.forward(&xt, &lengths, mode).expect("bn");
    let gx = bn.backward(&cache, &t(&[b, c, l], &r)).expect("bn backward");
    let base = bn.clone();
    let obj = |m: &BatchNorm<f64>, x: &Tensor<f64>| dot(&m.forward(x, &lengths, mode).expect("bn").0, &r);
    vec![
        grad_check("batchnorm input", &x, gx.data(), |v| obj(&base, &t(&[b, c, l], v)), OP_TOLERANCE),
        grad_check("batchnorm gamma", &base.gamma.value.to_f64_vec(), bn.gamma.grad.data(), |v| {
            let mut m = base.clone();
            m.gamma.value = t(&[c], v);
            obj(&m, &xt)
        }, OP_TOLERANCE),
        grad_check("batchnorm beta", &base.beta.value.to_f64_vec(), bn.beta.grad.data(), |v| {
            let mut m = base.clone();
            m.beta.value = t(&[c], v);
            obj(&m, &xt)
        }, OP_TOLERANCE),
    ]
}

fn lstm(seed: u64) -> Vec<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, steps, f, h) = (rng.random_range(1..3), rng.random_range(1..5), rng.random_range(1..4), rng.random_range(1..4));
    let lengths: Vec<usize> = (0..b).map(|_| rng.random_range(1..=steps)).collect();
    let mut layer = BiLstm::<f64>::new(f, h, &mut rng);
    let x = uniform(&mut rng, b * steps * f);
    let r = uniform(&mut rng, b * steps * 2 * h);
    let xt = t(&[b, steps, f], &x);
    let (_, cache) = layer.run(&xt, &lengths).expect("lstm");
    let gx = layer.backprop(&cache, &t(&[b, steps, 2 * h], &r)).expect("lstm backward");
    let base = layer.clone();
    let obj = |m: &BiLstm<f64>, x: &Tensor<f64>| dot(&m.run(x, &lengths).expect("lstm").0, &r);
    let mut out = vec![grad_check("lstm input", &x, gx.data(), |v| obj(&base, &t(&[b, steps, f], v)), OP_TOLERANCE)];
    for (i, (name, p)) in layer.params().iter().enumerate() {
        let shape = p.value.shape().to_vec();
        out.push(grad_check(&format!("lstm {name}"), &base.params()[i].1.value.to_f64_vec(), p.grad.data(), |v| {
            let mut m = base.clone();
            m.params_mut()[i].1.value = t(&shape, v);
            obj(&m, &xt)
        }, OP_TOLERANCE));
    }
    out
}

fn linear_layer(seed: u64) -> Vec<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, steps, f, o) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..5), rng.random_range(1..5));
    let x = uniform(&mut rng, b * steps * f);
    let w = uniform(&mut rng, o * f);
    let bias = uniform(&mut rng, o);
    let r = uniform(&mut rng, b * steps * o);
    let loss = |xv: &[f64], wv: &[f64], bv: &[f64]| {
        dot(&linear(&t(&[b, steps, f], xv), &t(&[o, f], wv), &t(&[o], bv)).expect("linear"), &r)
    };
    let (gx, gw, gb) =
        linear_backward(&t(&[b, steps, f], &x), &t(&[o, f], &w), &t(&[b, steps, o], &r)).expect("linear backward");
    vec![
        grad_check("linear input", &x, gx.data(), |v| loss(v, &w, &bias), OP_TOLERANCE),
        grad_check("linear weight", &w, gw.data(), |v| loss(&x, v, &bias), OP_TOLERANCE),
        grad_check("linear bias", &bias, gb.data(), |v| loss(&x, &w, v), OP_TOLERANCE),
    ]
}

fn softmax(seed: u64) -> Vec<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rows, k) = (rng.random_range(1..5), rng.random_range(2..6));
    let x: Vec<f64> = (0..rows * k).map(|_| rng.random_range(-3.0..3.0)).collect();
    let r = uniform(&mut rng, rows * k);
    let y = log_softmax(&t(&[rows, k], &x)).expect("log_softmax");
    let g = log_softmax_backward(&y, &t(&[rows, k], &r)).expect("log_softmax backward");
    vec![grad_check("log-softmax", &x, g.data(), |v| dot(&log_softmax(&t(&[rows, k], v)).expect("log_softmax"), &r), OP_TOLERANCE)]
}

fn ctc(seed: u64) -> Vec<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = rng.random_range(1..3);
    let k = rng.random_range(2..5);
    let steps = rng.random_range(3..7);
    let mut labels = Vec::new();
    let frames: Vec<usize> = (0..b).map(|_| rng.random_range(2..=steps)).collect();
    for &n in &frames {
        loop {
            let len = rng.random_range(1..=2.min(n));
            let l: Vec<usize> = (0..len).map(|_| rng.random_range(1..k)).collect();
            if crate::ctc::min_frames(&l) <= n {
                labels.push(l);
                break;
            }
        }
    }
    let logits: Vec<f64> = (0..b * steps * k).map(|_| rng.random_range(-2.0..2.0)).collect();
    let lp = log_softmax(&t(&[b, steps, k], &logits)).expect("log_softmax");
    let (_, g) = ctc_loss_and_grad(&lp, &labels, &frames).expect("ctc");
    vec![grad_check("ctc", lp.data(), g.data(), |v| {
        ctc_loss_and_grad(&t(&[b, steps, k], v), &labels, &frames).expect("ctc").0
    }, OP_TOLERANCE)]
}

/// Micro configuration used for the whole-model check: two filters and
/// channels, hidden width 2, one LSTM layer, three output classes.
pub fn micro_model_config() -> ModelConfig {
    ModelConfig {
        preset: "micro".into(),
        structure: PathStructure::SincCnn,
        kernel_size: 129,
        channels: 2,
        conv_kernel: 3,
        pool: 3,
        lstm_layers: 1,
        lstm_hidden: 2,
        dropout: 0.1,
        vocab_size: 3,
        sample_rate: 8000.0,
        window_mode: WindowMode::StandardHamming,
    }
}

/// Checks every parameter group of the micro model on one 700-sample
/// utterance (a single output frame).
pub fn end_to_end(seed: u64) -> Vec<GradCheckReport> {
    end_to_end_with(micro_model_config(), seed, 700)
}

/// Probes that would cross a ReLU or max-pool boundary use a smaller step.
pub fn end_to_end_with(config: ModelConfig, seed: u64, samples: usize) -> Vec<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model: Model<f64> = Model::build(config, seed).expect("valid micro config");
    let x = t(&[1, 1, samples], &(0..samples).map(|_| rng.random_range(-0.5..0.5)).collect::<Vec<_>>());
    let lengths = [samples];
    let frames = model.config.frames_for(samples).expect("long enough");
    let classes = model.config.vocab_size;
    let label: Vec<usize> = (0..frames.min(2)).map(|_| rng.random_range(1..classes)).collect();
    let label = if crate::ctc::min_frames(&label) > frames { label[..1].to_vec() } else { label };
    let mode = Mode::Train { seed: seed ^ 0x5eed };
    let loss_of = |m: &Model<f64>| {
        let pass = m.forward(&x, &lengths, mode).expect("forward");
        let loss = ctc_loss_and_grad(&pass.log_probs, std::slice::from_ref(&label), &pass.frame_lengths).expect("ctc").0;
        (loss, pass.activation_pattern())
    };
    let pass = model.forward(&x, &lengths, mode).expect("forward");
    let (_, g) = ctc_loss_and_grad(&pass.log_probs, std::slice::from_ref(&label), &pass.frame_lengths).expect("ctc");
    model.zero_grad();
    model.backward(&pass, &g).expect("backward");
    let base = model.clone();
    model
        .params()
        .iter()
        .enumerate()
        .map(|(i, (name, p))| {
            let shape = p.value.shape().to_vec();
            grad_check_piecewise(name, &base.params()[i].1.value.to_f64_vec(), p.grad.data(), |v| {
                let mut m = base.clone();
                m.params_mut()[i].1.value = t(&shape, v);
                loss_of(&m)
            }, MODEL_TOLERANCE)
        })
        .collect()
}

/// One merged report per operation, each over `seeds` random instances.
pub fn gradient_suite(seeds: u64) -> Vec<GradCheckReport> {
    type Check = fn(u64) -> Vec<GradCheckReport>;
    let ops: [(&str, f64, Check); 10] = [
        ("sinc cutoffs", OP_TOLERANCE, sinc_cutoffs),
        ("conv1d", OP_TOLERANCE, conv),
        ("max-pool routing", OP_TOLERANCE, pool),
        ("batchnorm (train)", OP_TOLERANCE, |s| batchnorm(s, Mode::Train { seed: s })),
        ("batchnorm (eval)", OP_TOLERANCE, |s| batchnorm(s, Mode::Eval)),
        ("bilstm", OP_TOLERANCE, lstm),
        ("linear", OP_TOLERANCE, linear_layer),
        ("log-softmax", OP_TOLERANCE, softmax),
        ("ctc", OP_TOLERANCE, ctc),
        ("end-to-end micro model", MODEL_TOLERANCE, end_to_end),
    ];
    ops.iter()
        .map(|(name, tol, check)| merge(name, *tol, (0..seeds).flat_map(check).collect()))
        .collect()
}
