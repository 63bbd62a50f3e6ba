// temporary calibration probe; removed before release
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trip_core::data::{self};
use trip_core::model::{ModelConfig, TaskKind, TripModel};
use trip_core::stiefel;
use trip_core::tensor::Matrix;
use trip_core::train::{train, TrainConfig};

fn reinit(model: &mut TripModel, rng: &mut ChaCha8Rng, g_shrink: f64, z_std: f64) {
    for g in model.low_rank_mut().factors_mut() {
        let fan = g.rows() as f64;
        *g = Matrix::from_fn(g.rows(), g.cols(), |_, _| {
            rng.gen_range(-1.0..1.0) / fan.sqrt() * g_shrink
        });
    }
    for layer in model.head_mut().layers_mut() {
        let fan = layer.w.cols() as f64;
        layer.w = Matrix::from_fn(layer.w.rows(), layer.w.cols(), |_, _| {
            rng.gen_range(-1.0..1.0) / fan.sqrt()
        });
        for b in &mut layer.b {
            *b = rng.gen_range(-1.0..1.0) / fan.sqrt();
        }
    }
    let dims: Vec<(usize, usize)> = model
        .factors()
        .iter()
        .map(|f| (f.z().rows(), f.z().cols()))
        .collect();
    for (k, (rows, cols)) in dims.into_iter().enumerate() {
        let z = stiefel::gaussian_matrix(rows, cols, z_std, rng);
        model.factors_mut()[k] = stiefel::orthonormalize(z).unwrap();
    }
}

fn main() {
    let (train_raw, test_raw) = data::gen_spiral(42).unwrap();
    let rot = data::spiral_rotation(42);
    let c_true = Matrix::from_fn(100, 2, |i, j| rot.get(j, i));
    let tr = data::normalize(&train_raw).unwrap();
    let stats = tr.norm_stats().unwrap().clone();
    let te = data::apply_norm_stats(&test_raw, &stats).unwrap();
    let pca = data::pca_baseline(&tr, 2).unwrap();

    for (mode, g_shrink) in [(0usize, 0.05), (1, 0.05), (2, 0.2), (2, 0.05)] {
        // PCANN with the same init treatment
        let mut pcann = Vec::new();
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(5000 + seed);
            let mc = ModelConfig {
                input_dims: vec![100],
                subspace_dims: vec![2],
                task: TaskKind::Classification,
                outputs: 2,
                hidden_layers: 3,
                hidden_width: 10,
                rank: None,
                lambda: 0.0,
            };
            let mut model = TripModel::init(&mc, &mut rng).unwrap();
            reinit(&mut model, &mut rng, g_shrink, 1.0);
            let factors = vec![stiefel::orthonormalize(pca.clone()).unwrap()];
            let model = TripModel::from_parts(
                factors,
                model.low_rank().clone(),
                model.head().clone(),
                TaskKind::Classification,
                0.0,
            )
            .unwrap();
            let tc = TrainConfig {
                epochs: 2000,
                batch_size: 20,
                seed: 5000 + seed,
                freeze_projection: true,
                ..TrainConfig::default()
            };
            let res = train(model, tr.samples(), &tr.targets(), &tc).unwrap();
            pcann.push(data::evaluate_model(&res.model, &te).unwrap().accuracy.unwrap());
        }
        let mut p = pcann.clone();
        p.sort_by(|a, b| a.partial_cmp(b).unwrap());
        println!(
            "mode={mode} g={g_shrink} PCANN: med {:.3} tests {:?}",
            p[5],
            pcann.iter().map(|t| format!("{t:.2}")).collect::<Vec<_>>()
        );

        for lambda in [0.01f64] {
            let mut fits = Vec::new();
            let mut tests = Vec::new();
            let mut angs = Vec::new();
            for seed in 0..10u64 {
                let mc = ModelConfig {
                    input_dims: vec![100],
                    subspace_dims: vec![2],
                    task: TaskKind::Classification,
                    outputs: 2,
                    hidden_layers: 3,
                    hidden_width: 10,
                    rank: None,
                    lambda,
                };
                let mut rng = ChaCha8Rng::seed_from_u64(5000 + seed);
                let mut model = TripModel::init(&mc, &mut rng).unwrap();
                reinit(&mut model, &mut rng, g_shrink, 1.0);
                if mode == 2 {
                    let mut z0 = pca.clone();
                    let noise = stiefel::gaussian_matrix(100, 2, 0.01, &mut rng);
                    z0.add_scaled(&noise, 1.0);
                    model.factors_mut()[0] = stiefel::orthonormalize(z0).unwrap();
                }
                let tc = TrainConfig {
                    epochs: 2000,
                    batch_size: 20,
                    seed: 5000 + seed,
                    ortho_per_batch: mode != 0,
                    ..TrainConfig::default()
                };
                let res = train(model, tr.samples(), &tr.targets(), &tc).unwrap();
                fits.push(res.log.last().unwrap().fit_metric);
                tests.push(data::evaluate_model(&res.model, &te).unwrap().accuracy.unwrap());
                let vs = if lambda >= 1.0 { &pca } else { &c_true };
                angs.push(
                    stiefel::principal_angles(res.model.factors()[0].c(), vs).unwrap()[1]
                        .to_degrees(),
                );
            }
            let mut s = tests.clone();
            s.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut gaps: Vec<f64> = fits.iter().zip(&tests).map(|(f, t)| f - t).collect();
            gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
            println!(
                "mode={mode} g={g_shrink} lambda={lambda}: med_test {:.3} med_gap {:.3} tests {:?} angles {:?}",
                s[5],
                gaps[5],
                tests.iter().map(|t| format!("{t:.2}")).collect::<Vec<_>>(),
                angs.iter().map(|a| format!("{a:.0}")).collect::<Vec<_>>()
            );
        }
    }
}
