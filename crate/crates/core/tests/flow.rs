mod common;

use common::{check_random_stack, normal, numerical_logdet, random_stack, random_tensor};
use prer_core::flow::{
    level_widths, FlowConfig, FlowLayer, FlowStack, InvertibleBatchNorm, Permutation,
};
use prer_core::math;
use prer_core::nn::{Adam, Parameters};
use prer_core::rng::{from_seed, Rng};
use prer_core::tensor::one_hot;
use prer_core::{Error, Tensor};
use proptest::prelude::*;

/// Fresh stack with unit batch-norm statistics: every block is the identity.
fn identity_stack(dim: usize, levels: usize, blocks: usize) -> FlowStack {
    let mut flow = FlowStack::new(&FlowConfig::new(dim, levels, blocks), &mut from_seed(0)).unwrap();
    for l in 0..levels {
        for layer in flow.layers_mut(l) {
            if let FlowLayer::BatchNorm(b) = layer {
                let w = b.width();
                let eps = b.eps;
                b.set_statistics(&vec![0.0; w], &vec![1.0 - eps; w]).unwrap();
            }
        }
    }
    flow
}

fn fit(flow: &mut FlowStack, data: &Tensor, labels: Option<&[usize]>, epochs: usize, rng: &mut Rng) -> Vec<f64> {
    use rand::seq::SliceRandom;
    let mut adam = Adam::new(1e-3);
    let mut idx: Vec<usize> = (0..data.rows()).collect();
    let mut curve = Vec::new();
    for _ in 0..epochs {
        idx.shuffle(rng);
        let mut total = 0.0;
        let mut count = 0;
        for chunk in idx.chunks(64).filter(|c| c.len() > 1) {
            let cond = labels.map(|l| {
                let picked: Vec<usize> = chunk.iter().map(|&i| l[i]).collect();
                one_hot(&picked, flow.condition_width())
            });
            flow.zero_grad();
            total += flow.nll_backward(&data.select_rows(chunk), cond.as_ref()).unwrap();
            adam.step_modules(&mut [flow]).unwrap();
            count += 1;
        }
        curve.push(total / count as f64);
    }
    curve
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_stacks_are_bijective_with_exact_logdet(
        seed in any::<u64>(),
        dim in prop::sample::select(vec![4usize, 6]),
        levels in 1usize..=3,
        blocks in 1usize..=5,
        conditioned in any::<bool>(),
    ) {
        // Levels narrower than two columns are rejected, so d = 4 stops at 2 levels.
        prop_assume!(level_widths(dim, levels).iter().all(|w| *w >= 2));
        let check = check_random_stack(seed, dim, levels, blocks, conditioned);
        prop_assert!(check.round_trip < 1e-6, "{check:?}");
        prop_assert!(check.logdet < 1e-5, "{check:?}");
        prop_assert!(check.skipped <= 2, "{check:?}");
    }
}

#[test]
fn two_block_logdet_matches_fine_jacobian() {
    let mut rng = from_seed(31);
    for _ in 0..20 {
        let flow = random_stack(4, 1, 2, 0, &mut rng);
        let z = random_tensor(&[1, 4], &mut rng);
        let (_, logdet) = flow.normalize(&z, None).unwrap();
        let num = numerical_logdet(&flow, z.row(0), None, 1e-6);
        assert!((num - logdet[0]).abs() < 1e-5, "{num} vs {}", logdet[0]);
    }
}

#[test]
fn emitted_dimensions_cover_the_input() {
    for dim in 2..20 {
        for levels in 1..=3 {
            let widths = level_widths(dim, levels);
            if widths.iter().any(|w| *w < 2) {
                assert!(FlowStack::new(&FlowConfig::new(dim, levels, 1), &mut from_seed(0)).is_err());
                continue;
            }
            let flow = FlowStack::new(&FlowConfig::new(dim, levels, 2), &mut from_seed(0)).unwrap();
            let emitted: usize = flow.levels().iter().map(|l| l.emitted()).sum();
            assert_eq!(emitted, dim);
        }
    }
    assert_eq!(level_widths(6, 3), vec![6, 3, 2]);
}

#[test]
fn permutation_only_stack_at_origin() {
    let layers = vec![
        FlowLayer::Permutation(Permutation::from_indices(vec![1, 0]).unwrap()),
        FlowLayer::Permutation(Permutation::identity(2)),
    ];
    let flow = FlowStack::from_levels(2, 0, vec![layers]).unwrap();
    let lp = flow.log_prob(&Tensor::row_vector(&[0.0, 0.0]), None).unwrap();
    assert!((lp[0] + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
    assert!((lp[0] + 1.83788).abs() < 1e-5);
}

#[test]
fn identity_stack_gives_standard_normal_density() {
    let flow = identity_stack(5, 2, 3);
    let mut rng = from_seed(4);
    let z = random_tensor(&[20, 5], &mut rng);
    let lp = flow.log_prob(&z, None).unwrap();
    for i in 0..20 {
        assert!((lp[i] - math::std_normal_log_density(z.row(i))).abs() < 1e-9);
    }
}

#[test]
fn identity_stack_samples_are_standard_normal() {
    let flow = identity_stack(3, 1, 2);
    let n = 100_000;
    let s = flow.sample(n, None, &mut from_seed(8)).unwrap();
    for j in 0..3 {
        let col: Vec<f64> = (0..n).map(|i| s.row(i)[j]).collect();
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }
    assert!(flow.log_prob(&s.select_rows(&(0..1000).collect::<Vec<_>>()), None)
        .unwrap()
        .iter()
        .all(|v| v.is_finite()));
}

#[test]
fn nll_of_standard_normal_data_is_its_entropy() {
    let flow = identity_stack(2, 1, 2);
    let z = random_tensor(&[200_000, 2], &mut from_seed(21));
    let nll = flow.nll(&z, None).unwrap();
    let entropy = (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
    assert!((entropy - 2.8379).abs() < 1e-4);
    assert!((nll - entropy).abs() < 0.05, "{nll}");
}

#[test]
fn appending_a_permutation_keeps_the_nll() {
    let flow = identity_stack(4, 1, 2);
    let z = random_tensor(&[50, 4], &mut from_seed(2));
    let base = flow.nll(&z, None).unwrap();
    let mut layers = flow.levels()[0].layers().to_vec();
    layers.push(FlowLayer::Permutation(Permutation::random(4, &mut from_seed(9))));
    let longer = FlowStack::from_levels(4, 0, vec![layers]).unwrap();
    assert!((longer.nll(&z, None).unwrap() - base).abs() < 1e-12);
}

#[test]
fn sampling_before_training_is_a_state_error() {
    let flow = FlowStack::new(&FlowConfig::new(4, 1, 2), &mut from_seed(0)).unwrap();
    assert!(!flow.is_initialized());
    assert!(matches!(flow.sample(3, None, &mut from_seed(1)), Err(Error::State(_))));
}

#[test]
fn only_the_first_coupling_is_conditioned() {
    let flow = FlowStack::new(&FlowConfig::new(6, 2, 3).conditioned(10), &mut from_seed(0)).unwrap();
    let flags: Vec<bool> = flow
        .levels()
        .iter()
        .flat_map(|l| l.layers())
        .filter_map(|x| match x {
            FlowLayer::Coupling(c) => Some(c.is_conditioned()),
            _ => None,
        })
        .collect();
    assert_eq!(flags, vec![true, false, false, false, false, false]);
    assert!(flow.normalize(&Tensor::zeros(&[1, 6]), None).is_err());
}

#[test]
fn mnist_scale_flow_has_about_250k_parameters() {
    let flow = FlowStack::new(&FlowConfig::new(100, 1, 6), &mut from_seed(0)).unwrap();
    let n = flow.num_params();
    assert!((200_000..300_000).contains(&n), "{n}");
}

#[test]
fn batch_norm_momentum_rule() {
    let mut bn = InvertibleBatchNorm::new(2, 0.1, 1e-5).unwrap();
    let mut rng = from_seed(1);
    let b1 = random_tensor(&[8, 2], &mut rng);
    bn.forward_train(&b1).unwrap();
    let (m0, s0) = (bn.mean().to_vec(), bn.std().to_vec());
    let b2 = random_tensor(&[8, 2], &mut rng);
    bn.forward_train(&b2).unwrap();
    for j in 0..2 {
        let col: Vec<f64> = (0..8).map(|i| b2.row(i)[j]).collect();
        let mean = col.iter().sum::<f64>() / 8.0;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0).sqrt();
        assert!((bn.mean()[j] - (0.9 * m0[j] + 0.1 * mean)).abs() < 1e-12);
        assert!((bn.std()[j] - (0.9 * s0[j] + 0.1 * sd)).abs() < 1e-12);
    }
}

fn two_gaussians(n: usize, rng: &mut Rng) -> (Tensor, Vec<usize>) {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let (c, m) = if i % 2 == 0 { (1, -3.0) } else { (3, 3.0) };
        rows.push([m + normal(rng), m + normal(rng)]);
        labels.push(c);
    }
    (Tensor::from_rows(&rows, 2).unwrap(), labels)
}

fn auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut wins = 0.0;
    for p in pos {
        for q in neg {
            wins += if p > q { 1.0 } else if p == q { 0.5 } else { 0.0 };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

#[test]
fn conditioned_samples_follow_their_class() {
    let mut rng = from_seed(13);
    let (data, labels) = two_gaussians(2000, &mut rng);
    let mut flow = FlowStack::new(&FlowConfig::new(2, 1, 4).conditioned(4), &mut rng).unwrap();
    // Only one coupling sees the class, so it takes a while to pick it up.
    fit(&mut flow, &data, Some(&labels), 200, &mut rng);

    let draw = |c: usize, rng: &mut Rng| flow.sample(400, Some(&one_hot(&vec![c; 400], 4)), rng).unwrap();
    let (a, b) = (draw(1, &mut rng), draw(3, &mut rng));
    // Linear probe: direction between the class means of the first halves,
    // scored on the second halves.
    let half: Vec<usize> = (0..200).collect();
    let rest: Vec<usize> = (200..400).collect();
    let mean = |t: &Tensor| -> [f64; 2] {
        let n = t.rows() as f64;
        let mut m = [0.0; 2];
        for i in 0..t.rows() {
            m[0] += t.row(i)[0] / n;
            m[1] += t.row(i)[1] / n;
        }
        m
    };
    let (ma, mb) = (mean(&a.select_rows(&half)), mean(&b.select_rows(&half)));
    let w = [mb[0] - ma[0], mb[1] - ma[1]];
    let score = |t: &Tensor| -> Vec<f64> {
        (0..t.rows()).map(|i| t.row(i)[0] * w[0] + t.row(i)[1] * w[1]).collect()
    };
    let auc = auc(&score(&b.select_rows(&rest)), &score(&a.select_rows(&rest)));
    assert!(auc > 0.9, "AUC {auc}");
}

#[test]
fn training_curve_decreases_then_plateaus() {
    let mut rng = from_seed(17);
    let mut rows = Vec::new();
    for i in 0..2000 {
        let m = if i % 3 == 0 { [-2.0, 1.0] } else { [2.0, -1.0] };
        rows.push([m[0] + 0.5 * normal(&mut rng), m[1] + 0.5 * normal(&mut rng)]);
    }
    let data = Tensor::from_rows(&rows, 2).unwrap();
    let mut flow = FlowStack::new(&FlowConfig::new(2, 1, 5), &mut rng).unwrap();
    let curve = fit(&mut flow, &data, None, 60, &mut rng);
    let smooth: Vec<f64> = curve.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
    assert!(smooth[0] - smooth[smooth.len() - 1] > 0.5, "{curve:?}");
    for w in smooth.windows(2) {
        assert!(w[1] <= w[0] + 0.02, "{smooth:?}");
    }
    let tail = &curve[curve.len() - 10..];
    let spread = tail.iter().cloned().fold(f64::MIN, f64::max) - tail.iter().cloned().fold(f64::MAX, f64::min);
    assert!(spread < 0.2, "{tail:?}");
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let flow = random_stack(6, 2, 3, 4, &mut from_seed(3));
    let text = serde_json::to_string(&flow).unwrap();
    let back: FlowStack = serde_json::from_str(&text).unwrap();
    assert_eq!(back, flow);
    let z = random_tensor(&[4, 6], &mut from_seed(4));
    let cond = one_hot(&[0, 1, 2, 3], 4);
    let a = flow.log_prob(&z, Some(&cond)).unwrap();
    let b = back.log_prob(&z, Some(&cond)).unwrap();
    assert_eq!(
        a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}
