use std::f64::consts::PI;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sketchdial_core::generator::{
    kl_divergence, kl_graph, reconstruction_loss, sample_prior, GeneratorCondition,
    GeneratorConfig, ObjectGenerator, PreparedSketch, StrokeBatch,
};
use sketchdial_core::raster::Bitmap;
use sketchdial_core::stroke::{Pen, SketchDrawing, Stroke5};
use sketchdial_nn::checkpoint::round_to_f32;
use sketchdial_nn::{check_gradients, Graph, Tensor};

fn tiny() -> GeneratorConfig {
    GeneratorConfig {
        category: "tree".into(),
        encoder_hidden: 12,
        decoder_hidden: 16,
        mixtures: 3,
        batch_size: 4,
        steps: 30,
        eval_every: 10,
        max_decode_steps: 40,
        seed: 3,
        sigma: 2.0,
        ..GeneratorConfig::default()
    }
}

fn square(k: f64) -> SketchDrawing {
    SketchDrawing::from_raw(
        &[vec![
            [0.0, 0.0],
            [k, 0.0],
            [k, 2.0 * k],
            [0.0, 2.0 * k],
            [0.0, 0.0],
        ]],
        "tree",
    )
    .unwrap()
    .anchored()
}

fn zigzag(n: usize) -> SketchDrawing {
    let line: Vec<[f64; 2]> = (0..n)
        .map(|i| [i as f64, if i % 2 == 0 { 0.0 } else { 1.5 }])
        .collect();
    SketchDrawing::from_raw(&[line], "tree").unwrap().anchored()
}

fn corpus() -> Vec<SketchDrawing> {
    vec![square(1.0), square(0.5), zigzag(5), zigzag(8)]
}

#[test]
fn encoder_mean_has_latent_width_and_is_deterministic() {
    let m = ObjectGenerator::new(tiny()).unwrap();
    let d = square(1.0);
    let a = m.encode(&d, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let b = m.encode(&d, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let c = m.encode(&d, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(a.mu.len(), 128);
    assert_eq!(a.logvar.len(), 128);
    assert_eq!(a.mu, b.mu);
    assert_ne!(a.z, b.z);
    assert_eq!(a, c);
}

#[test]
fn encoding_an_empty_drawing_fails() {
    let m = ObjectGenerator::new(tiny()).unwrap();
    let empty = SketchDrawing {
        strokes: vec![Stroke5::INITIAL],
        category: "tree".into(),
    };
    assert!(m.encode(&empty, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}

#[test]
fn kl_vanishes_at_the_prior() {
    assert_eq!(kl_divergence(&[0.0; 128], &[0.0; 128]), 0.0);
    let mut g = Graph::detached();
    let mu = g.constant(Tensor::zeros(&[2, 128]));
    let lv = g.constant(Tensor::zeros(&[2, 128]));
    let k = kl_graph(&mut g, mu, lv);
    assert_eq!(g.value(k).item(), 0.0);
}

#[test]
fn kl_graph_matches_closed_form() {
    let mu = [0.3, -1.2, 0.0, 2.0];
    let lv = [0.1, -0.5, 1.5, 0.0];
    let mut g = Graph::detached();
    let m = g.constant(Tensor::new(&[1, 4], mu.to_vec()).unwrap());
    let l = g.constant(Tensor::new(&[1, 4], lv.to_vec()).unwrap());
    let k = kl_graph(&mut g, m, l);
    let oracle: f64 = mu
        .iter()
        .zip(&lv)
        .map(|(m, l): (&f64, &f64)| 0.5 * (l.exp() + m * m - 1.0 - l))
        .sum::<f64>()
        / 4.0;
    assert!((g.value(k).item() - oracle).abs() < 1e-12);
}

proptest! {
    #[test]
    fn kl_is_nonnegative(v in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..32)) {
        let (mu, lv): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
        prop_assert!(kl_divergence(&mu, &lv) >= -1e-12);
    }
}

fn bivariate_log_density(x: f64, y: f64, mx: f64, my: f64, sx: f64, sy: f64, rho: f64) -> f64 {
    let q = ((x - mx) / sx).powi(2) + ((y - my) / sy).powi(2)
        - 2.0 * rho * (x - mx) * (y - my) / (sx * sy);
    let norm = 2.0 * PI * sx * sy * (1.0 - rho * rho).sqrt();
    -q / (2.0 * (1.0 - rho * rho)) - norm.ln()
}

#[test]
fn reconstruction_loss_of_one_step_matches_density_oracle() {
    let d = SketchDrawing {
        strokes: vec![Stroke5::INITIAL, Stroke5::new(0.3, -0.2, Pen::End)],
        category: "tree".into(),
    };
    let item = PreparedSketch {
        drawing: d,
        condition: GeneratorCondition::new(Bitmap::new(4, 4).unwrap(), 1.0).unwrap(),
    };
    let b = StrokeBatch::new(&[&item], 1, 10.0).unwrap();
    let (sx, sy, rho): (f64, f64, f64) = (0.5, 0.8, 0.3);
    let pen = [0.2, -0.1, 0.4];
    let raw = vec![
        0.0,
        0.1,
        -0.1,
        sx.ln(),
        sy.ln(),
        f64::atanh(rho),
        pen[0],
        pen[1],
        pen[2],
    ];
    let mut g = Graph::detached();
    let out = g.constant(Tensor::new(&[1, 9], raw).unwrap());
    let l = reconstruction_loss(&mut g, out, &b, 1).unwrap();
    let lse = pen.iter().map(|p: &f64| p.exp()).sum::<f64>().ln();
    let oracle = -bivariate_log_density(0.3, -0.2, 0.1, -0.1, sx, sy, rho) - (pen[2] - lse);
    assert!(
        (g.value(l).item() - oracle).abs() < 1e-12,
        "{} vs {oracle}",
        g.value(l).item()
    );
}

#[test]
fn reconstruction_loss_scores_padding_pen_only() {
    let short = PreparedSketch {
        drawing: SketchDrawing {
            strokes: vec![Stroke5::INITIAL, Stroke5::new(1.0, 0.0, Pen::End)],
            category: "tree".into(),
        },
        condition: GeneratorCondition::new(Bitmap::new(4, 4).unwrap(), 1.0).unwrap(),
    };
    let b = StrokeBatch::new(&[&short], 3, 10.0).unwrap();
    assert_eq!(b.offset_rows, vec![0]);
    assert_eq!(b.target_pen, vec![2, 2, 2]);
    let mut g = Graph::detached();
    let out = g.constant(Tensor::zeros(&[3, 9]));
    let l = reconstruction_loss(&mut g, out, &b, 1).unwrap();
    let pen = 3.0f64.ln();
    let offset = -bivariate_log_density(1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0);
    assert!((g.value(l).item() - (3.0 * pen + offset) / 3.0).abs() < 1e-12);
    let wrong = g.constant(Tensor::zeros(&[2, 9]));
    assert!(reconstruction_loss(&mut g, wrong, &b, 1).is_err());
}

#[test]
fn prior_draws_are_standard_normal() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 100_000;
    let dim = 128;
    let mut sum = vec![0.0; dim];
    let mut sq = vec![0.0; dim];
    for _ in 0..n {
        let z = sample_prior(dim, &mut rng);
        assert_eq!(z.len(), dim);
        for (i, v) in z.iter().enumerate() {
            sum[i] += v;
            sq[i] += v * v;
        }
    }
    for i in 0..dim {
        let mean = sum[i] / n as f64;
        assert!(mean.abs() < 0.02, "dim {i} mean {mean}");
        let var = sq[i] / n as f64 - mean * mean;
        assert!((var - 1.0).abs() < 0.03, "dim {i} var {var}");
    }
    let a = sample_prior(dim, &mut ChaCha8Rng::seed_from_u64(5));
    let b = sample_prior(dim, &mut ChaCha8Rng::seed_from_u64(5));
    assert_eq!(a, b);
}

#[test]
fn decoding_is_seed_deterministic_and_valid() {
    let m = ObjectGenerator::new(tiny()).unwrap();
    let cond = m.condition_for(&square(1.0)).unwrap();
    for seed in 0..6 {
        let z = m.sample_prior(&mut ChaCha8Rng::seed_from_u64(seed));
        for t in [0.0, 0.1, 0.4, 1.0] {
            let a = m
                .decode(&z, &cond, t, 40, &mut ChaCha8Rng::seed_from_u64(seed))
                .unwrap();
            let b = m
                .decode(&z, &cond, t, 40, &mut ChaCha8Rng::seed_from_u64(seed))
                .unwrap();
            assert_eq!(a, b);
            a.drawing.validate().unwrap();
            assert_eq!(a.drawing.strokes.last().unwrap().pen, Pen::End);
            assert!(a.drawing.len() <= 40);
        }
    }
    let z = m.sample_prior(&mut ChaCha8Rng::seed_from_u64(0));
    let greedy_a = m
        .decode(&z, &cond, 0.0, 40, &mut ChaCha8Rng::seed_from_u64(1))
        .unwrap();
    let greedy_b = m
        .decode(&z, &cond, 0.0, 40, &mut ChaCha8Rng::seed_from_u64(2))
        .unwrap();
    assert_eq!(greedy_a, greedy_b);
}

#[test]
fn step_limit_forces_a_flagged_end() {
    let mut m = ObjectGenerator::new(tiny()).unwrap();
    let bias = m.store.id_of("output.bias").unwrap();
    let k = 6 * m.config.mixtures + 2;
    m.store.get_mut(bias).data_mut()[k] = -1e3;
    let cond = m.condition_for(&square(1.0)).unwrap();
    let z = vec![0.0; 128];
    let r = m
        .decode(&z, &cond, 0.4, 7, &mut ChaCha8Rng::seed_from_u64(0))
        .unwrap();
    assert!(r.forced_end);
    assert_eq!(r.drawing.len(), 7);
    r.drawing.validate().unwrap();
    m.store.get_mut(bias).data_mut()[k] = 1e3;
    let r = m
        .decode(&z, &cond, 0.4, 7, &mut ChaCha8Rng::seed_from_u64(0))
        .unwrap();
    assert!(!r.forced_end);
    assert_eq!(r.drawing.len(), 1);
}

#[test]
fn decode_rejects_bad_inputs() {
    let m = ObjectGenerator::new(tiny()).unwrap();
    let cond = m.condition_for(&square(1.0)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(m.decode(&[0.0; 5], &cond, 0.4, 10, &mut rng).is_err());
    let small = GeneratorCondition::new(Bitmap::new(8, 8).unwrap(), 1.0).unwrap();
    assert!(m.decode(&[0.0; 128], &small, 0.4, 10, &mut rng).is_err());
    assert!(GeneratorCondition::new(Bitmap::new(8, 4).unwrap(), 1.0).is_err());
    assert!(GeneratorCondition::new(Bitmap::new(8, 8).unwrap(), -1.0).is_err());
}

#[test]
fn ratio_is_recorded_and_steers_decoding() {
    let m = ObjectGenerator::new(tiny()).unwrap();
    let base = m.condition_for(&square(1.0)).unwrap();
    assert_eq!(base.ratio, 2.0);
    let z = m.sample_prior(&mut ChaCha8Rng::seed_from_u64(4));
    let mut tall = base.clone();
    tall.ratio = 7.25;
    let a = m
        .regenerate_with_pose(&z, &base, 0.0, &mut ChaCha8Rng::seed_from_u64(0))
        .unwrap();
    let b = m
        .regenerate_with_pose(&z, &tall, 0.0, &mut ChaCha8Rng::seed_from_u64(0))
        .unwrap();
    assert_eq!(a.ratio, 2.0);
    assert_eq!(b.ratio, 7.25);
    assert_eq!(b.z, z);
    assert_ne!(a.drawing.strokes[1], b.drawing.strokes[1]);
}

#[test]
fn zero_width_drawing_takes_ratio_max() {
    let line = SketchDrawing::from_raw(&[vec![[0.0, 0.0], [0.0, 3.0]]], "tree").unwrap();
    let c = GeneratorCondition::from_drawing(&line, 64, 10.0).unwrap();
    assert_eq!(c.ratio, 10.0);
}

#[test]
fn flipped_condition_mirrors_the_mask() {
    let m = ObjectGenerator::new(tiny()).unwrap();
    let d = zigzag(6);
    let c = m.condition_for(&d).unwrap();
    let f = c.flipped();
    assert_eq!(f.ratio, c.ratio);
    assert_eq!(f.mask, c.mask.flipped_horizontal());
    let from_mirror = m.condition_for(&d.flipped_horizontal()).unwrap();
    assert_eq!(from_mirror.ratio, c.ratio);
}

#[test]
fn reparameterization_gradients_match_finite_differences() {
    let eps = Tensor::new(&[1, 4], vec![0.7, -1.1, 0.2, 1.9]).unwrap();
    let weights = Tensor::new(&[1, 4], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
    let f = |g: &mut Graph, v: &[sketchdial_nn::Var]| {
        let e = g.constant(eps.clone());
        let z = ObjectGenerator::reparameterize(g, v[0], v[1], e);
        let w = g.constant(weights.clone());
        let zw = g.mul(z, w);
        let zz = g.square(z);
        let s = g.add(zw, zz);
        let s = g.sum(s);
        let k = kl_graph(g, v[0], v[1]);
        g.add(s, k)
    };
    let mu = Tensor::new(&[1, 4], vec![0.3, -0.4, 1.2, 0.0]).unwrap();
    let lv = Tensor::new(&[1, 4], vec![-0.2, 0.5, 0.1, -1.0]).unwrap();
    let check = check_gradients(&f, &[mu.clone(), lv.clone()], 1e-4).unwrap();
    assert!(check.passes(1e-6), "{:?}", check.errors);
    // dz/dmu = 1: gradient wrt mu of the linear part alone is the weight vector
    let mut g = Graph::detached();
    let m = g.input(mu);
    let l = g.input(lv);
    let e = g.constant(eps.clone());
    let z = ObjectGenerator::reparameterize(&mut g, m, l, e);
    let w = g.constant(weights.clone());
    let zw = g.mul(z, w);
    let s = g.sum(zw);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.wrt(m).unwrap().data(), weights.data());
}

#[test]
fn generator_loss_reports_schedule_weight_and_rejects_bad_masks() {
    let m = ObjectGenerator::new(tiny()).unwrap();
    let d = square(1.0);
    let c = m.condition_for(&d).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let l0 = m.loss_s(&d, &c, 0, &mut rng).unwrap();
    assert_eq!(l0.kl_weight, 0.01);
    assert!(l0.l_kl >= 0.0);
    assert!((l0.total - (l0.l_r + 0.01 * l0.l_kl)).abs() < 1e-9);
    let late = m.loss_s(&d, &c, 1_000_000, &mut rng).unwrap();
    assert!((late.kl_weight - 0.5).abs() < 1e-9);
    let small = GeneratorCondition::new(Bitmap::new(8, 8).unwrap(), 1.0).unwrap();
    assert!(m.loss_s(&d, &small, 0, &mut rng).is_err());
}

#[test]
fn training_lowers_reconstruction_loss_and_logs_steps() {
    let mut m = ObjectGenerator::new(tiny()).unwrap();
    let mut log = Vec::new();
    let report = m
        .train(&corpus(), &corpus()[..2], Some(&mut log), None)
        .unwrap();
    let lines: Vec<serde_json::Value> = String::from_utf8(log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.iter().filter(|v| v["split"] == "train").count(), 30);
    assert_eq!(lines.iter().filter(|v| v["split"] == "val").count(), 3);
    for key in ["step", "lr", "L_R", "L_KL", "kl_weight", "total"] {
        assert!(lines[0].get(key).is_some(), "missing {key}");
    }
    assert_eq!(lines[0]["lr"], 1e-3);
    assert_eq!(lines[0]["kl_weight"], 0.01);
    let train: Vec<f64> = report.train_losses().map(|l| l.l_r).collect();
    assert!(train[train.len() - 1] < train[0], "{train:?}");
    assert_eq!(m.config.max_seq_len, 8);
}

#[test]
fn checkpoint_round_trip_reproduces_outputs() {
    let mut m = ObjectGenerator::new(tiny()).unwrap();
    round_to_f32(&mut m.store);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tree.ckpt");
    m.save(&path).unwrap();
    let back = ObjectGenerator::load(&path).unwrap();
    assert_eq!(back.config, m.config);
    let cond = m.condition_for(&square(1.0)).unwrap();
    let z = m.sample_prior(&mut ChaCha8Rng::seed_from_u64(9));
    let a = m
        .decode(&z, &cond, 0.4, 40, &mut ChaCha8Rng::seed_from_u64(9))
        .unwrap();
    let b = back
        .decode(&z, &cond, 0.4, 40, &mut ChaCha8Rng::seed_from_u64(9))
        .unwrap();
    assert_eq!(a, b);
    assert_eq!(a.drawing.category, "tree");
}

#[test]
fn decoded_offsets_are_denormalized() {
    let m = ObjectGenerator::new(tiny()).unwrap();
    let mut unit = m.clone();
    unit.config.sigma = 1.0;
    let cond = m.condition_for(&square(1.0)).unwrap();
    let z = m.sample_prior(&mut ChaCha8Rng::seed_from_u64(2));
    let a = m
        .decode(&z, &cond, 0.0, 20, &mut ChaCha8Rng::seed_from_u64(0))
        .unwrap();
    let b = unit
        .decode(&z, &cond, 0.0, 20, &mut ChaCha8Rng::seed_from_u64(0))
        .unwrap();
    assert_eq!(a.drawing.len(), b.drawing.len());
    for (x, y) in a.drawing.strokes.iter().zip(&b.drawing.strokes) {
        assert!((x.dx - 2.0 * y.dx).abs() < 1e-12 && (x.dy - 2.0 * y.dy).abs() < 1e-12);
    }
}

#[test]
fn checkpoint_of_another_model_is_rejected() {
    let m = ObjectGenerator::new(tiny()).unwrap();
    let mut ck = m.checkpoint().unwrap();
    ck.metadata = serde_json::json!({"model": "composition_proposer"}).to_string();
    assert!(ObjectGenerator::from_checkpoint(&ck).is_err());
}
