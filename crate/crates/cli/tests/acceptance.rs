//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints one PASS/FAIL line; exits non-zero if any fails.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use nero_core::analysis::{
    angle_between, ball_cap_lower_bound, cap_measure, check_stability, chord_angle,
    layer_relative_size, monte_carlo_cap_measure, neuron_relative_sizes, pac_bayes_bound,
    BoundInputs, LayeredLoss, TapeLoss,
};
use nero_core::autodiff::{AutodiffError, Graph, NodeId};
use nero_core::harness::{
    check_planted_bug, check_random_mlps, train, DatasetConfig, GradCheckSpec, IdxFile, RunRecord,
    SyntheticBlobs, TrainConfig, IMAGES_MAGIC, LABELS_MAGIC, MNIST_FILES, RECORD_FILE,
};
use nero_core::network::{build_mlp, normalise_reparam, Init, MlpConfig, ParamGroup, ParamKind};
use nero_core::optim::{
    project_balanced, AdamConfig, Constraints, NeroConfig, Optimizer, OptimizerConfig, Schedule,
    SgdConfig, UpdateRule,
};
use nero_core::tensor::{dot, norm};
use nero_core::{Rng, Tensor};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn config(name: &str) -> TrainConfig {
    TrainConfig::load(&repo().join("configs").join(name)).unwrap()
}

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(limit_secs: u64, started: Instant) -> Result<Duration, String> {
    let t = started.elapsed();
    if t <= Duration::from_secs(limit_secs) {
        Ok(t)
    } else {
        Err(format!("took {t:.1?}, limit {limit_secs} s"))
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v);
    v.into_iter().map(|x| x / n).collect()
}

fn constraint_invariants() -> Outcome {
    let started = Instant::now();
    let cfg = TrainConfig {
        schema_version: 1,
        seed: 0,
        batch_size: 16,
        epochs: 100,
        output_dir: None,
        model: MlpConfig::new(4, 8, 64, 4),
        optimizer: OptimizerConfig::nero(NeroConfig::default()),
        schedule: Schedule::Constant,
        dataset: DatasetConfig::Blobs(SyntheticBlobs {
            classes: 4,
            dim: 8,
            count: 200,
            sigma: 1.0,
            data_seed: 0,
        }),
    };
    let record = train(&cfg, &repo()).map_err(|e| e.to_string())?.record;
    let t = within(30, started)?;
    let worst = record
        .steps
        .iter()
        .map(|s| s.mean_residual.unwrap().max(s.norm_residual.unwrap()))
        .fold(0.0, f64::max);
    ensure(
        record.steps.len() == 1000 && worst <= 1e-9,
        format!(
            "{} steps, worst residual {worst:.2e}, {t:.1?}",
            record.steps.len()
        ),
    )
}

fn exact_relative_step() -> Outcome {
    let mut rng = Rng::new(2);
    let mut mcfg = MlpConfig::new(3, 12, 20, 5).with_init(Init::Gaussian { sigma: 0.7 });
    mcfg.use_gain = true;
    let mut model = build_mlp(&mcfg, &mut rng).unwrap();
    for g in &mut model.groups {
        let n = g.grad.len();
        g.grad.data_mut().copy_from_slice(&rng.gaussian_vec(n, 3.0));
    }
    let before: Vec<ParamGroup> = model.groups.clone();
    let eta = 0.01;
    // with both constraints off the projection is the identity, so the
    // applied step is the pre-projection step
    let nero = NeroConfig {
        eta,
        beta: 0.0,
        constrain_mean: false,
        constrain_norm: false,
        ..Default::default()
    };
    let mut opt = Optimizer::new(&OptimizerConfig::nero(nero.clone()), &model.groups).unwrap();
    opt.step(&mut model.groups, 1.0).unwrap();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (b, a) in before.iter().zip(&model.groups) {
        match b.kind {
            ParamKind::NeuronMatrix { fan_in, .. } => {
                for (wb, wa) in b
                    .values
                    .data()
                    .chunks(fan_in)
                    .zip(a.values.data().chunks(fan_in))
                {
                    let step: Vec<f64> = wa.iter().zip(wb).map(|(x, y)| x - y).collect();
                    worst = worst.max(rel(norm(&step), eta * norm(wb)));
                    checked += 1;
                }
            }
            ParamKind::ScalarLike { sigma_b } => {
                let zero_init = b.values.data().iter().all(|&v| v == 0.0);
                let sb = if zero_init {
                    nero.sigma_b_default
                } else {
                    sigma_b
                };
                for (x, y) in a.values.data().iter().zip(b.values.data()) {
                    worst = worst.max(rel((x - y).abs(), eta * sb));
                    checked += 1;
                }
            }
        }
    }
    ensure(
        worst <= 1e-12,
        format!("{checked} neurons and scalars, worst relative deviation {worst:.2e}"),
    )
}

fn layer_step_bound() -> Outcome {
    let root = Rng::new(3);
    let mut violations = 0;
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let mut rng = root.stream(i);
        let rows = 1 + rng.below(64);
        let cols = 2 + rng.below(64);
        let eta = 10f64.powf(-4.0 * rng.uniform());
        let mut w = Vec::new();
        let mut dw = Vec::new();
        for _ in 0..rows {
            let scale = 10f64.powf(8.0 * rng.uniform() - 4.0);
            let row = rng.gaussian_vec(cols, scale);
            let budget = if rng.uniform() < 0.3 {
                1.0
            } else {
                rng.uniform()
            } * eta
                * norm(&row);
            dw.extend(
                unit(rng.gaussian_vec(cols, 1.0))
                    .into_iter()
                    .map(|v| v * budget),
            );
            w.extend(row);
        }
        let w = Tensor::new(vec![rows, cols], w).unwrap();
        let dw = Tensor::new(vec![rows, cols], dw).unwrap();
        let per_row = neuron_relative_sizes(&dw, &w).unwrap();
        let layer = layer_relative_size(&dw, &w).unwrap();
        worst = worst.max(layer / eta);
        if per_row.iter().all(|&r| r <= eta * (1.0 + 1e-12)) && layer > eta + 1e-12 {
            violations += 1;
        }
    }
    ensure(
        violations == 0,
        format!("1000 layers, {violations} violations, max layer/eta {worst:.15}"),
    )
}

fn rotation_geometry() -> Outcome {
    let mut rng = Rng::new(4);
    let etas: [f64; 5] = [1e-4, 1e-3, 1e-2, 1e-1, 1.0];
    let mut chord_err: f64 = 0.0;
    for &eta in &etas {
        for _ in 0..20 {
            let d = 2 + rng.below(100);
            let a = unit(rng.gaussian_vec(d, 1.0));
            let r = rng.gaussian_vec(d, 1.0);
            let along = dot(&r, &a);
            let u = unit(r.iter().zip(&a).map(|(x, y)| x - along * y).collect());
            let theta = 2.0 * (eta / 2.0).asin();
            let b: Vec<f64> = a
                .iter()
                .zip(&u)
                .map(|(x, y)| theta.cos() * x + theta.sin() * y)
                .collect();
            let chord: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            chord_err = chord_err.max((angle_between(&a, &b) - chord_angle(norm(&chord))).abs());
            chord_err = chord_err.max((chord_angle(eta) - theta).abs());
        }
    }

    let mut rot_err: f64 = 0.0;
    for &eta in &etas {
        let (n, d) = (8, 16);
        let mut w = Vec::new();
        let mut g = Vec::new();
        for _ in 0..n {
            let row = unit(rng.gaussian_vec(d, 1.0));
            let r = rng.gaussian_vec(d, 1.0);
            let along = dot(&r, &row);
            g.extend(r.iter().zip(&row).map(|(x, y)| x - along * y));
            w.extend(row);
        }
        let mut group =
            ParamGroup::neuron_matrix("w", Tensor::new(vec![n, d], w.clone()).unwrap(), true)
                .unwrap();
        group.grad = Tensor::new(vec![n, d], g).unwrap();
        let cfg = OptimizerConfig::nero(NeroConfig {
            eta,
            beta: 0.0,
            constrain_mean: false,
            constrain_norm: true,
            ..Default::default()
        });
        let mut groups = vec![group];
        Optimizer::new(&cfg, &groups)
            .unwrap()
            .step(&mut groups, 1.0)
            .unwrap();
        for (before, after) in w.chunks(d).zip(groups[0].values.data().chunks(d)) {
            rot_err = rot_err.max((angle_between(before, after) - eta.atan()).abs());
        }
    }
    ensure(
        chord_err <= 1e-12 && rot_err <= 1e-9,
        format!(
            "chord-angle error {chord_err:.2e}, Nero rotation error vs arctan(eta) {rot_err:.2e}"
        ),
    )
}

fn gradient_exactness() -> Outcome {
    let spec = GradCheckSpec {
        instances: 100,
        ..Default::default()
    };
    let plain = check_random_mlps(&spec).map_err(|e| e.to_string())?;
    let reparam = check_random_mlps(&GradCheckSpec {
        reparameterised: true,
        ..spec.clone()
    })
    .map_err(|e| e.to_string())?;
    let bug = check_planted_bug(&spec).map_err(|e| e.to_string())?;
    ensure(
        plain.max_rel_error <= 1e-6 && reparam.max_rel_error <= 1e-6 && bug.max_rel_error >= 0.1,
        format!(
            "100 MLPs max error {:.2e} ({} coords), reparameterised {:.2e}, planted bug {:.3}",
            plain.max_rel_error, plain.coordinates, reparam.max_rel_error, bug.max_rel_error
        ),
    )
}

fn standardisation() -> Outcome {
    let started = Instant::now();
    let d = 256;
    let n = 100_000;
    let mut rng = Rng::new(6);
    let w = project_balanced(&rng.gaussian_vec(d, 1.0), Constraints::BOTH).unwrap();
    let mut x = vec![0.0; d];
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n {
        for v in x.iter_mut() {
            *v = 5.0 + rng.gaussian();
        }
        let y = dot(&w, &x);
        sum += y;
        sum_sq += y * y;
    }
    let mean = sum / n as f64;
    let var = (sum_sq - n as f64 * mean * mean) / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    let t = within(5, started)?;
    ensure(
        mean.abs() <= 5.0 * se && (0.95..=1.05).contains(&var),
        format!(
            "mean {mean:.2e} (5 SE = {:.2e}), variance {var:.4}, {t:.1?}",
            5.0 * se
        ),
    )
}

fn jacobian_norm(w: &Tensor, h: f64) -> f64 {
    let mut total = 0.0;
    let mut probe = w.clone();
    for i in 0..w.len() {
        let x0 = w.data()[i];
        probe.data_mut()[i] = x0 + h;
        let up = normalise_reparam(&probe).unwrap();
        probe.data_mut()[i] = x0 - h;
        let down = normalise_reparam(&probe).unwrap();
        probe.data_mut()[i] = x0;
        total += up
            .data()
            .iter()
            .zip(down.data())
            .map(|(a, b)| ((a - b) / (2.0 * h)).powi(2))
            .sum::<f64>();
    }
    total.sqrt()
}

fn with_sigma(cfg: &TrainConfig, sigma: f64, seed: u64) -> TrainConfig {
    let mut c = cfg.clone();
    c.model.init = Init::Gaussian { sigma };
    c.seed = seed;
    c
}

fn reparameterisation() -> Outcome {
    let started = Instant::now();
    let mut rng = Rng::new(7);
    let w = Tensor::new(vec![6, 10], rng.gaussian_vec(60, 1.0)).unwrap();
    let base = normalise_reparam(&w).unwrap();
    let j1 = jacobian_norm(&w, 1e-6);
    let mut inv_err: f64 = 0.0;
    let mut jac_err: f64 = 0.0;
    for c in [1e-3, 0.5, 2.0, 10.0, 100.0, 1e4] {
        let scaled = w.scaled(c);
        inv_err = inv_err.max(normalise_reparam(&scaled).unwrap().max_abs_diff(&base));
        // the difference step is relative to the weight scale
        jac_err = jac_err.max(rel(c * jacobian_norm(&scaled, 1e-6 * c), j1));
    }

    let cfg = config("mnist-reparam-adam.toml");
    let mut lines = Vec::new();
    let mut ordered = 0;
    for seed in 0..3 {
        let small = train(&with_sigma(&cfg, 1.0, seed), &repo())
            .map_err(|e| e.to_string())?
            .record;
        let large = train(&with_sigma(&cfg, 100.0, seed), &repo())
            .map_err(|e| e.to_string())?
            .record;
        let (a, b) = (
            small.summary.final_train_error,
            large.summary.final_train_error,
        );
        if b > a {
            ordered += 1;
        }
        lines.push(format!(
            "seed {seed}: train acc {:.1}% vs {:.1}%",
            100.0 * (1.0 - a),
            100.0 * (1.0 - b)
        ));
    }
    let t = within(600, started)?;
    ensure(
        inv_err <= 1e-12 && jac_err <= 1e-6 && ordered == 3,
        format!(
            "scale invariance {inv_err:.2e}, Jacobian 1/c error {jac_err:.2e}, Adam sigma=1 beats sigma=100 on {ordered}/3 ({}), {t:.1?}",
            lines.join("; ")
        ),
    )
}

fn deep_trainability() -> Outcome {
    let started = Instant::now();
    let cfg = config("mnist-deep-nero.toml");
    let splits = cfg.dataset.load(&repo()).map_err(|e| e.to_string())?;
    let mut accs = Vec::new();
    for seed in 0..3 {
        let mut c = cfg.clone();
        c.seed = seed;
        let r = nero_core::harness::train_with_data(&c, &splits)
            .map_err(|e| e.to_string())?
            .record;
        accs.push(1.0 - r.summary.best_train_error);
    }
    let nero_time = within(900, started)?;

    let lrs = [1e-4, 1e-3, 1e-2, 1e-1, 1.0];
    let mut reported = Vec::new();
    for (name, rule) in [
        (
            "sgd",
            UpdateRule::Sgd(SgdConfig {
                lr: 0.01,
                momentum: 0.0,
            }),
        ),
        (
            "adam",
            UpdateRule::Adam(AdamConfig {
                lr: 0.01,
                beta1: 0.0,
                beta2: 0.999,
                eps: 1e-8,
            }),
        ),
    ] {
        let mut base = cfg.clone();
        base.optimizer = OptimizerConfig {
            rule,
            constraints: None,
        };
        let mut best: f64 = 0.0;
        for seed in 0..3 {
            base.seed = seed;
            let grid =
                nero_core::harness::run_grid(&base, &splits, &lrs).map_err(|e| e.to_string())?;
            for cell in &grid.cells {
                best = best.max(1.0 - cell.record.summary.best_train_error);
            }
        }
        reported.push(format!("{name} best over grid {:.1}%", 100.0 * best));
    }
    let accs_text: Vec<String> = accs.iter().map(|a| format!("{:.1}%", 100.0 * a)).collect();
    ensure(
        accs.iter().all(|&a| a >= 0.9),
        format!(
            "Nero train acc {} in {nero_time:.1?}; logged only: {}",
            accs_text.join("/"),
            reported.join(", ")
        ),
    )
}

fn cap_measure_oracle() -> Outcome {
    let dims = [1, 2, 4, 8, 16];
    let alphas = [0.7, 1.2, 1.9, 2.6];
    let mut worst_z: f64 = 0.0;
    let mut dominated = true;
    for (i, &k) in dims.iter().enumerate() {
        for (j, &a) in alphas.iter().enumerate() {
            let exact = cap_measure(k, a);
            let (p, _) = monte_carlo_cap_measure(k, a, 1_000_000, (i * alphas.len() + j) as u64);
            let se = (exact * (1.0 - exact) / 1e6).sqrt();
            worst_z = worst_z.max((p - exact).abs() / se);
            dominated &= exact >= ball_cap_lower_bound(k, a);
        }
    }
    ensure(
        worst_z <= 3.0 && dominated,
        format!("20 grid points, worst |MC - exact| = {worst_z:.2} SE, dominates Ball bound: {dominated}"),
    )
}

fn bound_inputs(k: f64) -> BoundInputs {
    BoundInputs {
        m: 10,
        d: 100,
        n: 10_000,
        delta: 0.01,
        k,
        alpha: PI / 2.0,
    }
}

fn pac_bayes() -> Outcome {
    // mpmath at 50 digits
    let reference = 0.03611183598544823;
    let b1 = pac_bayes_bound(&bound_inputs(1.0))
        .map_err(|e| e.to_string())?
        .bound;
    let mut shift_err: f64 = 0.0;
    for k in [2.0, 10.0, 1e6] {
        let bk = pac_bayes_bound(&bound_inputs(k))
            .map_err(|e| e.to_string())?
            .bound;
        shift_err = shift_err.max(((b1 - bk) - f64::ln(k) / 9999.0).abs());
    }
    let e = rel(b1, reference);
    ensure(
        e <= 1e-9 && shift_err <= 1e-15,
        format!("bound {b1:.16} (relative error {e:.1e}), ln K shift error {shift_err:.1e}"),
    )
}

fn quadratic(
    h: Tensor,
    b: Tensor,
) -> impl Fn(&mut Graph, &[NodeId]) -> Result<NodeId, AutodiffError> {
    move |g, p| {
        let hc = g.constant(h.clone())?;
        let bc = g.constant(b.clone())?;
        let hw = g.matmul_t(p[0], hc)?;
        let whw = g.mul(p[0], hw)?;
        let quad = g.sum(whw)?;
        let half = g.scale(quad, 0.5)?;
        let bw = g.mul(p[0], bc)?;
        let lin = g.sum(bw)?;
        let neg = g.scale(lin, -1.0)?;
        g.add(half, neg)
    }
}

fn stability_probe() -> Outcome {
    let root = Rng::new(11);
    let mut stable = 0;
    let mut decreased = 0;
    for i in 0..100 {
        let mut rng = root.stream(i);
        let n = 2 + rng.below(8);
        let a = rng.gaussian_vec(n * n, 1.0);
        let mut h = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                h[r * n + c] = (0..n).map(|k| a[k * n + r] * a[k * n + c]).sum();
            }
        }
        let loss = TapeLoss(quadratic(
            Tensor::new(vec![n, n], h).unwrap(),
            Tensor::new(vec![1, n], rng.gaussian_vec(n, 1.0)).unwrap(),
        ));
        let w = Tensor::new(vec![1, n], rng.gaussian_vec(n, 1.0)).unwrap();
        let (_, g) = loss.value_and_grad(std::slice::from_ref(&w)).unwrap();
        let lr = 10f64.powf(-3.0 * rng.uniform());
        let report = check_stability(&loss, &[w], &[g[0].scaled(-lr)]).unwrap();
        if report.stable {
            stable += 1;
            if report.loss_after < report.loss_before {
                decreased += 1;
            }
        }
    }
    // steep direction with a step that overshoots it
    let loss = TapeLoss(quadratic(
        Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 100.0]).unwrap(),
        Tensor::zeros(&[1, 2]),
    ));
    let w = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
    let (_, g) = loss.value_and_grad(std::slice::from_ref(&w)).unwrap();
    let bad = check_stability(&loss, &[w], &[g[0].scaled(-0.05)]).unwrap();
    ensure(
        stable > 0 && decreased == stable && !bad.stable && bad.loss_after > bad.loss_before,
        format!(
            "{stable}/100 judged stable, {decreased} of them decreased the loss; overshooting step flagged unstable: {}",
            !bad.stable
        ),
    )
}

fn nero_command(cwd: &Path) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_nero"));
    c.current_dir(cwd).env_remove("NERO_OUTPUT_DIR");
    c
}

fn idx_parser() -> Outcome {
    let fixtures = [
        IdxFile {
            magic: IMAGES_MAGIC,
            dims: vec![2, 2, 2],
            payload: vec![0, 255, 17, 3, 9, 128, 64, 1],
        },
        IdxFile {
            magic: LABELS_MAGIC,
            dims: vec![2],
            payload: vec![7, 3],
        },
    ];
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut round_trips = 0;
    for (i, f) in fixtures.iter().enumerate() {
        let bytes = f.to_bytes();
        let back = IdxFile::parse(&bytes).map_err(|e| e.to_string())?;
        let gz = tmp.path().join(format!("f{i}.gz"));
        f.write(&gz).map_err(|e| e.to_string())?;
        if back.to_bytes() == bytes
            && &back == f
            && IdxFile::read(&gz).map_err(|e| e.to_string())? == *f
        {
            round_trips += 1;
        }
    }

    let images = |n: u32| IdxFile {
        magic: IMAGES_MAGIC,
        dims: vec![n, 28, 28],
        payload: vec![1; n as usize * 784],
    };
    let labels = |n: u32| IdxFile {
        magic: LABELS_MAGIC,
        dims: vec![n],
        payload: (0..n).map(|i| (i % 10) as u8).collect(),
    };
    let write_all = || -> Result<(), String> {
        for (name, f) in MNIST_FILES
            .iter()
            .zip([images(10), labels(10), images(5), labels(5)])
        {
            f.write(&tmp.path().join(name)).map_err(|e| e.to_string())?;
        }
        Ok(())
    };
    let cfg = std::fs::read_to_string(repo().join("configs/mnist-deep-nero.toml"))
        .unwrap()
        .replace("data/mnist-5k", &tmp.path().display().to_string())
        .replace("train_count = 4000", "train_count = 10")
        .replace("test_count = 1000", "test_count = 5")
        .replace("depth = 16", "depth = 2")
        .replace("epochs = 20", "epochs = 1");
    std::fs::write(tmp.path().join("run.toml"), cfg).unwrap();
    let run = || {
        nero_command(tmp.path())
            .args(["train", "--config", "run.toml", "--output-dir", "out"])
            .output()
            .map(|o| o.status.code())
            .map_err(|e| e.to_string())
    };

    write_all()?;
    let clean = run()?;
    let mut wrong = images(10);
    wrong.magic = 0x0000_0802;
    wrong
        .write(&tmp.path().join(MNIST_FILES[0]))
        .map_err(|e| e.to_string())?;
    let wrong_magic = run()?;
    write_all()?;
    let path = tmp.path().join(MNIST_FILES[2]);
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 100]).unwrap();
    let truncated = run()?;
    ensure(
        round_trips == 2 && clean == Some(0) && wrong_magic == Some(4) && truncated == Some(4),
        format!(
            "{round_trips}/2 fixtures byte-exact; exit codes: valid {clean:?}, wrong magic {wrong_magic:?}, truncated {truncated:?}"
        ),
    )
}

fn reproducibility() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut records: Vec<(String, RunRecord)> = Vec::new();
    for name in ["blobs-nero.toml", "blobs-ablation.toml"] {
        for run in ["a", "b"] {
            let out = tmp.path().join(format!("{name}-{run}"));
            let status = nero_command(&repo())
                .args(["train", "--config"])
                .arg(repo().join("configs").join(name))
                .arg("--output-dir")
                .arg(&out)
                .output()
                .map_err(|e| e.to_string())?;
            if !status.status.success() {
                return Err(format!(
                    "{name}: {}",
                    String::from_utf8_lossy(&status.stderr)
                ));
            }
            let text = std::fs::read_to_string(out.join(RECORD_FILE)).map_err(|e| e.to_string())?;
            records.push((
                name.to_string(),
                serde_json::from_str(&text).map_err(|e| e.to_string())?,
            ));
        }
    }
    let identical = records.chunks(2).filter(|p| p[0].1 == p[1].1).count();
    ensure(
        identical == 2,
        format!("{identical}/2 configs gave identical run records across two invocations"),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 13] = [
        ("constraint invariants", constraint_invariants),
        ("exact per-neuron relative step", exact_relative_step),
        ("layer step bounded by neuron steps", layer_step_bound),
        ("rotation geometry", rotation_geometry),
        ("gradient exactness", gradient_exactness),
        ("standardisation", standardisation),
        ("reparameterisation coupling", reparameterisation),
        ("deep plain-MLP trainability", deep_trainability),
        ("cap measure", cap_measure_oracle),
        ("PAC-Bayes bound", pac_bayes),
        ("stability probe", stability_probe),
        ("IDX parser", idx_parser),
        ("reproducibility", reproducibility),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "criterion {:>2} {tag} {name}: {detail} [{:.1?}]",
            i + 1,
            started.elapsed()
        );
    }
    println!("acceptance: {}/13 passed", 13 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
