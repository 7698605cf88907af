use catsplit::alignment::{train_alignment, AlignParams, TrainingPairs};
use catsplit::dataset::Role;
use catsplit::optim::{AdamW, Prng};
use catsplit::softmax::{train_rows, LinearParams, TrainConfig};
use catsplit::synth::random_instance;
use catsplit::taxonomy::SplitSpec;
use catsplit::tensor::Tensor;
use catsplit::{finetune_split, AlignConfig, Composition, EditMethod, FeatureDataset, FinetuneConfig, Scope, SplitDeps};

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn gaussians(rng: &mut Prng, n: usize, std: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gaussian(0.0, std)).collect()
}

#[test]
fn cross_entropy_gradient_matches_finite_differences() {
    for seed in 0..20 {
        let mut rng = Prng::new(seed);
        let rows = 2 + rng.below(5);
        let dim = 1 + rng.below(6);
        let mut p = LinearParams {
            rows,
            dim,
            weights: gaussians(&mut rng, rows * dim, 1.0),
            bias: Some(gaussians(&mut rng, rows, 1.0)),
        };
        let xs: Vec<Vec<f32>> = (0..4)
            .map(|_| gaussians(&mut rng, dim, 1.0).into_iter().map(|v| v as f32).collect())
            .collect();
        let batch: Vec<(&[f32], usize)> = xs.iter().map(|x| (x.as_slice(), rng.below(rows))).collect();
        let all: Vec<usize> = (0..rows).collect();
        let (_, grad) = p.loss_and_grad(&batch, &all).unwrap();
        let h = 1e-4;
        for r in 0..rows {
            for c in 0..=dim {
                let orig = *param(&mut p, r, c);
                *param(&mut p, r, c) = orig + h;
                let lp = p.mean_loss(&batch).unwrap();
                *param(&mut p, r, c) = orig - h;
                let lm = p.mean_loss(&batch).unwrap();
                *param(&mut p, r, c) = orig;
                let numeric = (lp - lm) / (2.0 * h);
                let analytic = grad[r * (dim + 1) + c];
                assert!(rel_err(analytic, numeric) < 1e-3, "seed {seed} row {r} col {c}: {analytic} vs {numeric}");
            }
        }
    }
}

/// Weight `c` of row `r`, or its bias when `c == dim`.
fn param(p: &mut LinearParams, r: usize, c: usize) -> &mut f64 {
    if c < p.dim {
        &mut p.weights[r * p.dim + c]
    } else {
        &mut p.bias.as_mut().unwrap()[r]
    }
}

/// Smallest |pre-activation| over the batch. Central differences are only
/// valid when no ReLU kink lies within the step.
fn kink_margin(p: &AlignParams, xs: &[Vec<f32>]) -> f64 {
    let (w1, b1) = p.flat.split_at(p.hidden * p.input);
    xs.iter()
        .flat_map(|x| {
            w1.chunks_exact(p.input)
                .zip(b1)
                .map(move |(row, b)| (b + row.iter().zip(x).map(|(w, &v)| w * v as f64).sum::<f64>()).abs())
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn alignment_gradient_matches_finite_differences() {
    for seed in 0..20 {
        let mut rng = Prng::new(seed);
        let (n, hdim, m) = (1 + rng.below(5), 2 + rng.below(6), 1 + rng.below(5));
        let mut p = AlignParams::init(n, hdim, m, &mut rng);
        for b in p.flat.iter_mut() {
            *b += rng.gaussian(0.0, 0.1);
        }
        let xs = loop {
            let xs: Vec<Vec<f32>> = (0..3).map(|_| gaussians(&mut rng, n, 1.0).into_iter().map(|v| v as f32).collect()).collect();
            if kink_margin(&p, &xs) > 1e-2 {
                break xs;
            }
        };
        let ts: Vec<Vec<f32>> = (0..3).map(|_| gaussians(&mut rng, m, 1.0).into_iter().map(|v| v as f32).collect()).collect();
        let batch: Vec<(&[f32], &[f32])> = xs.iter().zip(&ts).map(|(x, t)| (x.as_slice(), t.as_slice())).collect();
        let (_, grad) = p.loss_and_grad(&batch);
        let h = 1e-4;
        for k in 0..p.flat.len() {
            let orig = p.flat[k];
            p.flat[k] = orig + h;
            let lp = p.mean_loss(&batch);
            p.flat[k] = orig - h;
            let lm = p.mean_loss(&batch);
            p.flat[k] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            assert!(rel_err(grad[k], numeric) < 1e-3, "seed {seed} param {k}: {} vs {numeric}", grad[k]);
        }
    }
}

#[test]
fn adamw_trajectories_are_deterministic() {
    let run = || {
        let mut rng = Prng::new(3);
        let mut theta = gaussians(&mut rng, 8, 1.0);
        let mut opt = AdamW::new(8, 1e-2, 1e-3);
        for _ in 0..50 {
            let g: Vec<f64> = theta.iter().map(|t| 2.0 * t + rng.gaussian(0.0, 0.1)).collect();
            opt.step(&mut theta, &g).unwrap();
        }
        theta.iter().map(|t| t.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

fn toy_samples(seed: u64) -> (Vec<Vec<f32>>, Vec<usize>) {
    let mut rng = Prng::new(seed);
    let xs = (0..40).map(|_| gaussians(&mut rng, 5, 1.0).into_iter().map(|v| v as f32).collect()).collect();
    let ys = (0..40).map(|i| i % 3).collect();
    (xs, ys)
}

#[test]
fn softmax_training_is_deterministic_with_monotone_best() {
    let (xs, ys) = toy_samples(11);
    let samples: Vec<(&[f32], usize)> = xs.iter().zip(&ys).map(|(x, &y)| (x.as_slice(), y)).collect();
    let cfg = TrainConfig { lr: 1e-2, weight_decay: 1e-3, batch_size: 8, max_epochs: 60, seed: 5 };
    let fresh = || LinearParams { rows: 3, dim: 5, weights: vec![0.0; 15], bias: Some(vec![0.0; 3]) };
    let (mut a, mut b) = (fresh(), fresh());
    let log = train_rows(&mut a, &[0, 1, 2], &samples, None, &cfg).unwrap();
    train_rows(&mut b, &[0, 1, 2], &samples, None, &cfg).unwrap();
    assert_eq!(a.weights, b.weights);
    assert_eq!(a.bias, b.bias);
    for w in log.epochs.windows(2) {
        assert!(w[1].best <= w[0].best);
    }
    assert!(log.epochs.last().unwrap().metric < log.epochs[0].metric);
}

fn linear_pairs(seed: u64) -> TrainingPairs {
    let mut rng = Prng::new(seed);
    let (n, m) = (8, 6);
    let a = gaussians(&mut rng, n * m, 1.0);
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for _ in 0..40 {
        let x = gaussians(&mut rng, n, 1.0);
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let x: Vec<f64> = x.iter().map(|v| v / norm).collect();
        targets.push((0..m).map(|o| (0..n).map(|i| a[o * n + i] * x[i]).sum::<f64>() as f32).collect());
        inputs.push(x.into_iter().map(|v| v as f32).collect());
    }
    TrainingPairs { inputs, targets, composition: Composition::ModCat }
}

#[test]
fn alignment_fits_linear_pairs() {
    for seed in 0..3 {
        let pairs = linear_pairs(seed);
        let cfg = AlignConfig { seed, max_epochs: 300, ..AlignConfig::default() };
        let (model, log) = train_alignment(&pairs, &cfg).unwrap();
        let p = AlignParams::from_model(&model);
        let batch: Vec<(&[f32], &[f32])> = pairs.inputs.iter().zip(&pairs.targets).map(|(x, t)| (x.as_slice(), t.as_slice())).collect();
        let cos = p.mean_cosine(&batch);
        assert!(cos >= 0.99, "seed {seed}: mean cosine {cos} after {} epochs", log.epochs.len());
        for w in log.epochs.windows(2) {
            assert!(w[1].best >= w[0].best);
        }
        let (again, _) = train_alignment(&pairs, &cfg).unwrap();
        assert_eq!(again, model);
    }
}

#[test]
fn new_only_finetuning_freezes_retained_logits() {
    for seed in 0..10 {
        let r = random_instance(seed).unwrap();
        let split: &SplitSpec = &r.taxonomy.splits[0];
        let mut rng = Prng::new(seed);
        let dim = r.head.dim();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for sub in &split.subcategories {
            for _ in 0..2 {
                rows.push(gaussians(&mut rng, dim, 1.0).into_iter().map(|v| v as f32).collect::<Vec<f32>>());
                labels.push(sub.id.clone());
            }
        }
        let train = FeatureDataset::new(Tensor::from_rows(&rows).unwrap(), labels, Role::Train).unwrap();
        let cfg = FinetuneConfig { shots: 2, init: EditMethod::Random, scope: Scope::NewOnly, lr: 1e-2, seed, ..FinetuneConfig::default() };
        let (edited, _) = finetune_split(&r.head, split, &train, None, &cfg, &SplitDeps::default()).unwrap();
        let (again, _) = finetune_split(&r.head, split, &train, None, &cfg, &SplitDeps::default()).unwrap();
        assert_eq!(edited, again);
        for _ in 0..100 {
            let x: Vec<f32> = gaussians(&mut rng, dim, 2.0).into_iter().map(|v| v as f32).collect();
            let before = r.head.logits(&x).unwrap();
            let after = edited.head.logits(&x).unwrap();
            for (i, label) in edited.labels()[..edited.retained()].iter().enumerate() {
                assert_eq!(before[r.head.index_of(label).unwrap()].to_bits(), after[i].to_bits());
            }
        }
    }
}
