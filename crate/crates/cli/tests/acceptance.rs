//! Release gate for the toolkit: eleven numbered criteria covering
//! gradient correctness, posterior oracles, determinism, metric and
//! perturbation oracles, search sanity, and desk-scale end-to-end runs.
//! Each criterion is one test that prints a single PASS line; a failed
//! assertion is the corresponding FAIL line.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;

use uqbench_cli::config::{preset, DatasetSpec, ExperimentConfig, ModelKind, PRESET_NAMES};
use uqbench_cli::data::DatasetName;
use uqbench_cli::runner::{self, SHIFT_RUNS};
use uqbench_core::adam::{Adam, AdamConfig};
use uqbench_core::deepgp::DeepGp;
use uqbench_core::dspp::Dspp;
use uqbench_core::ensemble::{aggregate_regression, MlpMember};
use uqbench_core::gp::ExactGp;
use uqbench_core::gradcheck::{fd_gradient, max_rel_err, DEFAULT_H};
use uqbench_core::hpo::{
    expected_improvement, incumbent_trace, tune, Domain, SearchSpace, TuneOptions,
};
use uqbench_core::likelihood::TaskKind;
use uqbench_core::metrics;
use uqbench_core::param::{ParamId, ParamStore, Transform};
use uqbench_core::seeding;
use uqbench_core::shift::{perturb, severity_schedule, PerturbationKind, PerturbationSpec};
use uqbench_core::stats;
use uqbench_core::svgp::{svgp_elbo_gaussian, SvgpLayer};
use uqbench_core::tape::Tape;
use uqbench_core::Tensor;

/// Small 1-D regression instance: x uniform on [-2, 2], y a noisy sine.
fn toy_1d(n: usize, seed: u64) -> (Tensor, Tensor) {
    let mut rng = seeding::substream(seed, "acceptance-toy", 0);
    let xs: Vec<f64> = (0..n).map(|_| 4.0 * rng.random::<f64>() - 2.0).collect();
    let ys: Vec<f64> =
        xs.iter().map(|&v| (1.3 * v).sin() + 0.05 * (rng.random::<f64>() - 0.5)).collect();
    (Tensor::col(&xs), Tensor::col(&ys))
}

/// Nudge every trainable raw parameter off its init so finite
/// differences are probed at a generic point.
fn jiggle(store: &mut ParamStore, seed: u64, scale: f64) {
    let mut rng = seeding::substream(seed, "acceptance-jiggle", 0);
    for id in store.trainable_ids() {
        let mut raw = store.raw(id).clone();
        for v in raw.data_mut() {
            *v += scale * (rng.random::<f64>() - 0.5);
        }
        store.set_raw(id, raw);
    }
}

fn logsumexp(terms: &[f64]) -> f64 {
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

fn std_pop(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

#[test]
fn criterion_01_gradient_suite() {
    let t0 = Instant::now();

    let (x, y) = toy_1d(6, 21);
    let mut gp = ExactGp::new(x.clone(), y.clone(), 1.1, &[0.7], 0.25).unwrap();
    let mut tape = Tape::new();
    let lml = gp.lml_on_tape(&mut tape).unwrap();
    let grads = tape.grad(lml).unwrap();
    let gp_ref = gp.clone();
    let fd = fd_gradient(
        &mut gp.store,
        |s| {
            let mut probe = gp_ref.clone();
            probe.store = s.clone();
            probe.log_marginal_likelihood().unwrap()
        },
        DEFAULT_H,
    );
    let report = max_rel_err(&gp.store, grads.by_param(), &fd);
    assert!(report.passes(1e-4), "exact GP marginal likelihood: {:?}", report.worst);

    let (x, y) = toy_1d(5, 11);
    let z = Tensor::col(&[-1.4, -0.2, 0.8]);
    let mut store = ParamStore::new();
    let layer = SvgpLayer::new(&mut store, "l0", 1, 1, &z, 1.2, &[0.7], None).unwrap();
    let noise = store.add("noise_var", Tensor::scalar(0.3), Transform::Exp, true);
    let c = store.add("mean_c", Tensor::scalar(0.1), Transform::Identity, true);
    jiggle(&mut store, 13, 0.4);
    let mut tape = Tape::new();
    let elbo = svgp_elbo_gaussian(&mut tape, &store, &layer, &x, &y, noise, Some(c), 5, 1.0).unwrap();
    let grads = tape.grad(elbo).unwrap();
    let layer_ref = layer.clone();
    let (xr, yr) = (x.clone(), y.clone());
    let fd = fd_gradient(
        &mut store,
        |s| {
            let mut t = Tape::new();
            let e = svgp_elbo_gaussian(&mut t, s, &layer_ref, &xr, &yr, noise, Some(c), 5, 1.0)
                .unwrap();
            t.value(e).scalar_value()
        },
        DEFAULT_H,
    );
    let report = max_rel_err(&store, grads.by_param(), &fd);
    assert!(report.passes(1e-4), "single-layer ELBO: {:?}", report.worst);

    let (x, y) = toy_1d(4, 7);
    let mut model = DeepGp::new_regression(&x, &y, &[1], 3, 29).unwrap();
    jiggle(&mut model.store, 17, 0.3);
    let mc_seed = 31;
    let mut tape = Tape::new();
    let elbo = model.elbo(&mut tape, &x, &y, 4, mc_seed).unwrap();
    let grads = tape.grad(elbo).unwrap();
    let model_ref = model.clone();
    let (xr, yr) = (x.clone(), y.clone());
    let fd = fd_gradient(
        &mut model.store,
        |s| {
            let mut probe = model_ref.clone();
            probe.store = s.clone();
            let mut t = Tape::new();
            let e = probe.elbo(&mut t, &xr, &yr, 4, mc_seed).unwrap();
            t.value(e).scalar_value()
        },
        DEFAULT_H,
    );
    let report = max_rel_err(&model.store, grads.by_param(), &fd);
    assert!(report.passes(1e-4), "deep GP ELBO at fixed sample seed: {:?}", report.worst);

    let (x, y) = toy_1d(4, 9);
    let mut model = Dspp::new_regression(&x, &y, &[1], 3, 3, 31).unwrap();
    jiggle(&mut model.store, 19, 0.3);
    let mut tape = Tape::new();
    let obj = model.objective(&mut tape, &x, &y, 4).unwrap();
    let grads = tape.grad(obj).unwrap();
    let model_ref = model.clone();
    let (xr, yr) = (x.clone(), y.clone());
    let fd = fd_gradient(
        &mut model.store,
        |s| {
            let mut probe = model_ref.clone();
            probe.store = s.clone();
            let mut t = Tape::new();
            let o = probe.objective(&mut t, &xr, &yr, 4).unwrap();
            t.value(o).scalar_value()
        },
        DEFAULT_H,
    );
    let report = max_rel_err(&model.store, grads.by_param(), &fd);
    assert!(report.passes(1e-4), "sigma-point objective: {:?}", report.worst);

    let (x, y) = toy_1d(6, 15);
    let mut member = MlpMember::new(1, &[4], TaskKind::Regression, 5).unwrap();
    jiggle(&mut member.store, 23, 0.2);
    let mut tape = Tape::new();
    let loss = member.loss(&mut tape, &x, &y).unwrap();
    let grads = tape.grad(loss).unwrap();
    let member_ref = member.clone();
    let (xr, yr) = (x.clone(), y.clone());
    let fd = fd_gradient(
        &mut member.store,
        |s| {
            let mut probe = member_ref.clone();
            probe.store = s.clone();
            let mut t = Tape::new();
            let l = probe.loss(&mut t, &xr, &yr).unwrap();
            t.value(l).scalar_value()
        },
        DEFAULT_H,
    );
    let report = max_rel_err(&member.store, grads.by_param(), &fd);
    assert!(report.passes(1e-4), "ensemble member loss: {:?}", report.worst);

    let elapsed = t0.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "gradient suite took {elapsed:.1}s, limit 30s");
    println!("criterion 01 gradient suite: PASS ({elapsed:.1}s)");
}

#[test]
fn criterion_02_svgp_matches_exact_posterior() {
    let t0 = Instant::now();
    let n = 40;
    let (x, y) = toy_1d(n, 42);
    let (sf, ell, s2) = (1.0, 0.6, 0.05);

    let mut exact = ExactGp::new(x.clone(), y.clone(), sf, &[ell], s2).unwrap();
    exact.store.set_raw(exact.mean_c, Tensor::scalar(0.0));

    let mut store = ParamStore::new();
    let layer = SvgpLayer::new(&mut store, "l0", 1, 1, &x, sf, &[ell], None).unwrap();
    let noise = store.add("noise_var", Tensor::scalar(s2), Transform::Exp, false);
    let variational: HashSet<ParamId> =
        layer.units.iter().flat_map(|u| [u.m_v, u.l_raw]).collect();
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        store.set_trainable(id, variational.contains(&id));
    }

    let mut opt = Adam::new(AdamConfig::default());
    for _ in 0..2000 {
        let mut tape = Tape::new();
        let elbo =
            svgp_elbo_gaussian(&mut tape, &store, &layer, &x, &y, noise, None, n, 1.0).unwrap();
        let obj = tape.scale(elbo, -1.0);
        let grads = tape.grad(obj).unwrap();
        opt.step(&mut store, &grads, 0.02).unwrap();
    }

    let grid = Tensor::col(&(0..60).map(|i| -1.9 + 3.8 * i as f64 / 59.0).collect::<Vec<_>>());
    let post = exact.posterior(&grid, false).unwrap();
    let (mean, var) = layer.marginals_plain(&store, &grid).unwrap();
    let mean_tol = 0.05 * std_pop(y.data());
    for i in 0..grid.rows() {
        let dm = (mean.data()[i] - post.means[i]).abs();
        assert!(dm <= mean_tol, "mean deviates by {dm:.2e} at grid point {i}, limit {mean_tol:.2e}");
        let dv = (var.data()[i] - post.vars[i]).abs() / post.vars[i];
        assert!(dv <= 0.10, "variance deviates by {:.1}% at grid point {i}", 100.0 * dv);
    }

    let elapsed = t0.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "posterior oracle took {elapsed:.1}s, limit 60s");
    println!("criterion 02 sparse posterior matches exact posterior: PASS ({elapsed:.1}s)");
}

#[test]
fn criterion_03_elbo_never_exceeds_marginal_likelihood() {
    for trial in 0..20u64 {
        let (x, y) = toy_1d(6, 300 + trial);
        let mut rng = seeding::substream(trial, "acceptance-bound", 0);
        let sf = 0.5 + rng.random::<f64>();
        let ell = 0.4 + rng.random::<f64>();
        let s2 = 0.05 + 0.3 * rng.random::<f64>();

        let mut exact = ExactGp::new(x.clone(), y.clone(), sf, &[ell], s2).unwrap();
        exact.store.set_raw(exact.mean_c, Tensor::scalar(0.0));
        let lml = exact.log_marginal_likelihood().unwrap();

        let m = 4;
        let z = Tensor::col(&(0..m).map(|_| 4.0 * rng.random::<f64>() - 2.0).collect::<Vec<_>>());
        let mut store = ParamStore::new();
        let layer = SvgpLayer::new(&mut store, "l0", 1, 1, &z, sf, &[ell], None).unwrap();
        let noise = store.add("noise_var", Tensor::scalar(s2), Transform::Exp, true);
        jiggle(&mut store, 700 + trial, 0.5);
        store.set_raw(noise, Tensor::scalar(s2));

        let mut tape = Tape::new();
        let elbo =
            svgp_elbo_gaussian(&mut tape, &store, &layer, &x, &y, noise, None, 6, 1.0).unwrap();
        let e = tape.value(elbo).scalar_value();
        assert!(lml - e >= -1e-8, "trial {trial}: ELBO {e} exceeds marginal likelihood {lml}");
    }
    println!("criterion 03 evidence bound holds on 20 random instances: PASS");
}

#[test]
fn criterion_04_quadrature_mixture_determinism_and_density() {
    let (x, y) = toy_1d(24, 4);
    let mut model = Dspp::new_regression(&x, &y, &[1], 6, 8, 17).unwrap();

    let eval = |m: &Dspp| {
        let mut tape = Tape::new();
        let o = m.objective(&mut tape, &x, &y, 24).unwrap();
        tape.value(o).scalar_value()
    };
    let first = eval(&model);
    let second = eval(&model);
    assert_eq!(
        first.to_bits(),
        second.to_bits(),
        "objective not bit-identical: {first} vs {second}"
    );

    let mut opt = Adam::new(AdamConfig::default());
    for _ in 0..500 {
        let mut tape = Tape::new();
        let obj = model.objective(&mut tape, &x, &y, 24).unwrap();
        let neg = tape.scale(obj, -1.0);
        let grads = tape.grad(neg).unwrap();
        opt.step(&mut model.store, &grads, 0.02).unwrap();
    }
    let w = model.weights();
    let delta = (w.iter().sum::<f64>() - 1.0).abs();
    assert!(delta <= 1e-12, "weights off the simplex by {delta:.2e} after 500 steps");

    let pred = model.predict(&x).unwrap();
    let nll = metrics::nll_regression(&pred, y.data()).unwrap();
    let comps = model.components_plain(&x).unwrap();
    let c = model.mean_c.map_or(0.0, |id| model.store.value(id).scalar_value());
    let s2 = model.noise_var.map_or(0.0, |id| model.store.value(id).scalar_value());
    let ln_2pi = (2.0 * PI).ln();
    let mut direct = 0.0;
    for i in 0..x.rows() {
        let terms: Vec<f64> = comps
            .iter()
            .zip(&w)
            .map(|((mu, var), &wj)| {
                let v = var.data()[i] + s2;
                let d = y.data()[i] - (mu.data()[i] + c);
                wj.ln() - 0.5 * (v.ln() + d * d / v + ln_2pi)
            })
            .collect();
        direct -= logsumexp(&terms);
    }
    direct /= x.rows() as f64;
    let gap = (nll - direct).abs();
    assert!(gap <= 1e-10, "mixture NLL {nll} vs direct density {direct}, gap {gap:.2e}");

    println!("criterion 04 quadrature mixture deterministic, on-simplex, density-exact: PASS");
}

#[test]
fn criterion_05_ensemble_aggregation_matches_sampling() {
    let mut rng = seeding::substream(55, "acceptance-ensemble", 0);
    for &k in &[2usize, 5, 7, 10] {
        let mus: Vec<f64> = (0..k).map(|_| 1.0 + rng.random::<f64>()).collect();
        let vars: Vec<f64> = (0..k).map(|_| 0.5 + rng.random::<f64>()).collect();
        let (mu, var) = aggregate_regression(&mus, &vars).unwrap();

        let draws = 1_000_000usize;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..draws {
            let j = rng.random_range(0..k);
            let z: f64 = rng.sample(StandardNormal);
            let s = mus[j] + vars[j].sqrt() * z;
            sum += s;
            sumsq += s * s;
        }
        let mc_mean = sum / draws as f64;
        let mc_var = sumsq / draws as f64 - mc_mean * mc_mean;

        let dm = (mu - mc_mean).abs() / mc_mean.abs();
        let dv = (var - mc_var).abs() / mc_var;
        assert!(dm <= 0.01, "K={k}: mean {mu} vs sampled {mc_mean}, off by {:.2}%", 100.0 * dm);
        assert!(dv <= 0.01, "K={k}: var {var} vs sampled {mc_var}, off by {:.2}%", 100.0 * dv);
    }
    println!("criterion 05 ensemble moments match million-draw sampling within 1%: PASS");
}

#[test]
fn criterion_06_calibration_metric_oracles() {
    let n = 100_000;
    let mut rng = seeding::substream(66, "acceptance-calibration", 0);

    let mut probs = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let p = 0.5 + 0.5 * rng.random::<f64>();
        probs.push(p);
        probs.push(1.0 - p);
        labels.push(if rng.random::<f64>() < p { 0 } else { 1 });
    }
    let probs = Tensor::new(vec![n, 2], probs);
    let (ece, _) = metrics::ece_classification(&probs, &labels, 10).unwrap();
    assert!(ece <= 0.01, "calibrated classifier scored ECE {ece:.4}, limit 0.01");

    let overconfident = Tensor::new(vec![n, 2], [1.0, 0.0].repeat(n));
    let half_wrong: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let (ece, _) = metrics::ece_classification(&overconfident, &half_wrong, 10).unwrap();
    assert!(
        (ece - 0.5).abs() <= 0.01,
        "confidence 1.0 at accuracy 0.5 scored ECE {ece:.4}, expected 0.5"
    );

    let mut means = Vec::with_capacity(n);
    let mut stds = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let m = 2.0 * rng.random::<f64>() - 1.0;
        let s = 0.5 + rng.random::<f64>();
        let z: f64 = rng.sample(StandardNormal);
        means.push(m);
        stds.push(s);
        y.push(m + s * z);
    }
    let (ce, _) = metrics::regression_calibration(&means, &stds, &y, 10).unwrap();
    assert!(ce <= 0.02, "calibrated regressor scored CE {ce:.4}, limit 0.02");

    let z = stats::central_interval_z(0.95);
    assert!((z - 1.95996).abs() <= 1e-4, "z(0.95) = {z}, expected 1.95996");

    println!("criterion 06 calibration metrics hit their oracles: PASS");
}

#[test]
fn criterion_07_perturbation_suite() {
    let mut rng = seeding::substream(77, "acceptance-shift", 0);
    let x = Tensor::new(vec![20, 4], (0..80).map(|_| rng.random::<f64>() - 0.5).collect());
    let stds = vec![0.7, 1.0, 1.3, 0.4];

    for kind in PerturbationKind::ALL {
        let spec = PerturbationSpec::new(kind, 0.0, 123, stds.clone()).unwrap();
        let xp = perturb(&x, &spec).unwrap();
        for (a, b) in x.data().iter().zip(xp.data()) {
            assert_eq!(a.to_bits(), b.to_bits(), "{} not an identity at severity 0", kind.name());
        }
    }

    let spec = PerturbationSpec::new(PerturbationKind::FeatureMasking, 1.0, 123, stds.clone())
        .unwrap();
    let xp = perturb(&x, &spec).unwrap();
    assert!(xp.data().iter().all(|&v| v == 0.0), "full masking left nonzero cells");

    let spec = PerturbationSpec::new(PerturbationKind::FeaturePermutation, 0.5, 123, stds.clone())
        .unwrap();
    let xp = perturb(&x, &spec).unwrap();
    for j in 0..4 {
        let mut before: Vec<f64> = (0..20).map(|i| x.at(i, j)).collect();
        let mut after: Vec<f64> = (0..20).map(|i| xp.at(i, j)).collect();
        before.sort_by(|a, b| a.partial_cmp(b).unwrap());
        after.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (a, b) in before.iter().zip(&after) {
            assert_eq!(a.to_bits(), b.to_bits(), "column {j} multiset changed under permutation");
        }
    }

    let rows = 100_000;
    let cols = 10;
    let sigma: Vec<f64> = (0..cols).map(|j| 0.3 + 0.2 * j as f64).collect();
    let s = 0.8;
    let base = Tensor::zeros(rows, cols);
    let spec = PerturbationSpec::new(PerturbationKind::GaussianNoise, s, 321, sigma.clone())
        .unwrap();
    let noisy = perturb(&base, &spec).unwrap();
    for j in 0..cols {
        let col: Vec<f64> = (0..rows).map(|i| noisy.at(i, j)).collect();
        let measured = std_pop(&col);
        let expected = sigma[j] * s;
        let rel = (measured - expected).abs() / expected;
        assert!(
            rel <= 0.01,
            "column {j}: noise std {measured:.4} vs {expected:.4}, off by {:.2}%",
            100.0 * rel
        );
    }

    assert_eq!(severity_schedule(), [0.0, 0.1, 0.2, 0.4, 0.6, 0.8]);

    println!("criterion 07 perturbation identities, multisets, and noise scale: PASS");
}

#[test]
fn criterion_08_search_finds_quadratic_minimum() {
    let t0 = Instant::now();
    let space = SearchSpace::new(vec![(
        "x".to_string(),
        Domain::Continuous { lo: -5.0, hi: 5.0, log_scale: false },
    )])
    .unwrap();
    let opts = TuneOptions { trials: 20, init: 5, ..TuneOptions::default() };

    let mut hits = 0;
    for seed in 0..20u64 {
        let outcome = tune(
            |cfg, _| {
                let x = cfg.get("x").unwrap().as_f64()?;
                Ok((x - 2.0) * (x - 2.0))
            },
            &space,
            &opts,
            seed,
        )
        .unwrap();
        let best_x = outcome.best.config.get("x").unwrap().as_f64().unwrap();
        if (best_x - 2.0).abs() <= 0.3 {
            hits += 1;
        }
        let trace = incumbent_trace(&outcome.history);
        for w in trace.windows(2) {
            assert!(w[1] <= w[0], "incumbent rose from {} to {}", w[0], w[1]);
        }
    }
    assert!(hits >= 18, "only {hits}/20 seeds landed within 0.3 of the minimum");
    assert_eq!(expected_improvement(1.23, 0.0, 1.23), 0.0);

    let elapsed = t0.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "search sanity took {elapsed:.1}s, limit 60s");
    println!("criterion 08 quadratic minimum found on {hits}/20 seeds: PASS ({elapsed:.1}s)");
}

#[test]
fn criterion_09_desk_scale_end_to_end() {
    let t0 = Instant::now();
    let cases = [
        (ModelKind::Dgp, DatasetName::SyntheticRegression, vec![3]),
        (ModelKind::Dgp, DatasetName::SyntheticClassification, vec![2]),
        (ModelKind::Dspp, DatasetName::SyntheticRegression, vec![]),
        (ModelKind::Dspp, DatasetName::SyntheticClassification, vec![2]),
        (ModelKind::Ensemble, DatasetName::SyntheticRegression, vec![32, 16]),
        (ModelKind::Ensemble, DatasetName::SyntheticClassification, vec![32, 16]),
    ];
    for (model, dataset, arch) in cases {
        let mut config = ExperimentConfig::new(model, DatasetSpec::named(dataset));
        config.architecture = arch;
        config.num_inducing = 32;
        config.epochs = Some(20);
        config.num_members = 3;
        config.seed = 9;
        config.validate().unwrap();

        let data = runner::load_from_spec(&config).unwrap();
        let (trained, curve) = runner::train_model(&config, &data).unwrap();
        let label = format!("{} on {}", config.model, dataset);

        assert!(!curve.is_empty(), "{label}: empty loss curve");
        let drop = curve.first().unwrap().train_loss - curve.last().unwrap().train_loss;
        assert!(drop > 0.0, "{label}: loss went from {} to {}, no decrease",
            curve.first().unwrap().train_loss, curve.last().unwrap().train_loss);

        let (xt, yt) = data.test_xy();
        let eval_seed = seeding::derive(config.seed, "eval", 0);
        let report =
            runner::evaluate_split(&trained, &config, &data, &xt, &yt, eval_seed, None).unwrap();
        assert!(report.nll.is_finite(), "{label}: non-finite NLL");
        match dataset {
            DatasetName::SyntheticRegression => {
                let ce = report.ce_reg.expect("regression reports interval calibration");
                let mae = report.mae.expect("regression reports MAE");
                assert!(ce.is_finite() && mae.is_finite(), "{label}: non-finite metrics");
                assert!(report.ece.is_none() && report.accuracy.is_none());
            }
            _ => {
                let ece = report.ece.expect("classification reports ECE");
                let acc = report.accuracy.expect("classification reports accuracy");
                assert!(ece.is_finite() && acc.is_finite(), "{label}: non-finite metrics");
                assert!(report.ce_reg.is_none() && report.mae.is_none());
            }
        }
    }

    let elapsed = t0.elapsed().as_secs_f64();
    assert!(elapsed < 300.0, "desk-scale runs took {elapsed:.1}s, limit 300s");
    println!("criterion 09 all three models train and score on both tasks: PASS ({elapsed:.1}s)");
}

#[test]
fn criterion_10_shift_protocol_structure() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = ExperimentConfig::new(
        ModelKind::Ensemble,
        DatasetSpec::named(DatasetName::SyntheticRegression),
    );
    config.dataset.size = Some(200);
    config.architecture = vec![8];
    config.num_members = 2;
    config.epochs = Some(3);
    config.seed = 11;
    config.shift = true;
    config.out_dir = tmp.path().to_string_lossy().into_owned();

    let (table, _) = runner::run_shift_experiment(&config).unwrap();
    assert!(table.failures.is_empty(), "shift runs failed: {:?}", table.failures);

    for &severity in severity_schedule().iter() {
        for metric in ["nll", "ce_reg", "mae"] {
            let count = table
                .rows
                .iter()
                .filter(|r| r.severity == severity && r.metric == metric)
                .count();
            assert_eq!(
                count, 25,
                "severity {severity} metric {metric}: {count} rows, expected 5 runs x 5 kinds"
            );
        }
    }

    let data = runner::load_from_spec(&config).unwrap();
    let (xt, yt) = data.test_xy();
    for run in 0..SHIFT_RUNS {
        let run_seed = seeding::derive(config.seed, "shift-run", run as u64);
        let mut run_config = config.clone();
        run_config.seed = run_seed;
        let (model, _) = runner::train_model(&run_config, &data).unwrap();
        let eval_seed = seeding::derive(run_seed, "shift-eval", 0);
        let clean = runner::evaluate_split(&model, &run_config, &data, &xt, &yt, eval_seed, None)
            .unwrap();
        let expectations = [
            ("nll", clean.nll),
            ("ce_reg", clean.ce_reg.unwrap()),
            ("mae", clean.mae.unwrap()),
        ];
        for kind in PerturbationKind::ALL {
            for (metric, expected) in expectations {
                let row = table
                    .rows
                    .iter()
                    .find(|r| {
                        r.seed == run_seed
                            && r.severity == 0.0
                            && r.kind == kind.name()
                            && r.metric == metric
                    })
                    .unwrap_or_else(|| panic!("missing severity-0 row for run {run}, {metric}"));
                assert_eq!(
                    row.value.to_bits(),
                    expected.to_bits(),
                    "run {run} {} {metric}: severity-0 value {} differs from clean {expected}",
                    kind.name(),
                    row.value
                );
            }
        }
    }

    println!("criterion 10 shift protocol emits 25 rows per cell, severity 0 bit-exact: PASS");
}

#[test]
fn criterion_11_full_scale_documentation_target() {
    for name in PRESET_NAMES {
        let config = preset(name).unwrap();
        config.validate().unwrap();
    }
    println!(
        "criterion 11 full-scale replication (non-binding): PASS, tuned presets validate; \
         full runs expect the real CSVs at data/casp.csv and data/esr.csv"
    );
}
