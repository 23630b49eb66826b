use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use traj2user_core::baselines::cosine_similarity;
use traj2user_core::neural::{train, Traj2UserModel};
use traj2user_core::{Matrix, MovementDescriptor, TrainConfig, UserCorpus};

fn random_descriptor(rng: &mut ChaCha8Rng, dim: usize) -> MovementDescriptor {
    let active: Vec<usize> = (0..dim).filter(|_| rng.random_bool(0.4)).collect();
    MovementDescriptor::from_active(active, dim).unwrap()
}

fn random_model(rng: &mut ChaCha8Rng, users: usize, k: usize, dim: usize) -> Traj2UserModel<f64> {
    let w = Matrix::from_fn(users, k, |_, _| rng.random_range(-1.0..1.0));
    let w_out = Matrix::from_fn(k, dim, |_, _| rng.random_range(-1.0..1.0));
    let names = (0..users).map(|i| format!("u{i}")).collect();
    Traj2UserModel::from_parts(names, w, w_out, TrainConfig::default()).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Central difference of the loss with respect to one weight, selected by `at`.
fn numeric(
    model: &Traj2UserModel<f64>,
    user: usize,
    target: &MovementDescriptor,
    at: impl Fn(&mut Traj2UserModel<f64>) -> &mut f64,
) -> f64 {
    const H: f64 = 1e-6;
    let mut plus = model.clone();
    *at(&mut plus) += H;
    let mut minus = model.clone();
    *at(&mut minus) -= H;
    (plus.loss(user, target).unwrap() - minus.loss(user, target).unwrap()) / (2.0 * H)
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    let mut instances = 0;
    for _ in 0..40 {
        let users = rng.random_range(1..=3);
        let k = rng.random_range(1..=4);
        let dim = rng.random_range(1..=6);
        let model = random_model(&mut rng, users, k, dim);
        let user = rng.random_range(0..users);
        let target = random_descriptor(&mut rng, dim);
        let (grad_e, grad_out) = model.gradients(user, &target).unwrap();

        for u in 0..users {
            for (r, &g) in grad_e.iter().enumerate() {
                let n = numeric(&model, user, &target, |m| {
                    &mut m.embedding_table_mut().as_mut_slice()[u * k + r]
                });
                let a = if u == user { g } else { 0.0 };
                if u != user {
                    assert_eq!(n, 0.0);
                }
                worst = worst.max(rel_err(a, n));
            }
        }
        for r in 0..k {
            for j in 0..dim {
                let n = numeric(&model, user, &target, |m| {
                    &mut m.output_layer_mut().as_mut_slice()[r * dim + j]
                });
                worst = worst.max(rel_err(grad_out.get(r, j), n));
            }
        }
        instances += 1;
    }
    println!("{instances} instances, worst relative error {worst:.3e}");
    assert!(instances >= 20);
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn small_sgd_step_decreases_loss_and_touches_one_row() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let mut model = random_model(&mut rng, 3, 3, 6);
        let user = rng.random_range(0..3);
        let target = random_descriptor(&mut rng, 6);
        let before = model.clone();
        let l0 = model.loss(user, &target).unwrap();
        assert!(model.sgd_step(user, &target, 1e-4).unwrap());
        let l1 = model.loss(user, &target).unwrap();
        assert!(l1 < l0, "{l1} >= {l0}");
        for u in 0..3 {
            let same = model.embedding_table().row(u) == before.embedding_table().row(u);
            assert_eq!(same, u != user);
        }
    }
}

fn corpus(entries: Vec<(&str, Vec<Vec<usize>>)>, dim: usize) -> UserCorpus {
    let entries = entries
        .into_iter()
        .map(|(u, ds)| {
            let ds = ds
                .into_iter()
                .map(|a| MovementDescriptor::from_active(a, dim).unwrap())
                .collect();
            (u.to_string(), ds)
        })
        .collect();
    UserCorpus::new(entries, dim).unwrap()
}

#[test]
fn training_is_bitwise_deterministic() {
    let c = corpus(
        vec![
            ("a", vec![vec![0, 3], vec![1, 3]]),
            ("b", vec![vec![2, 4]]),
            ("c", vec![vec![0, 5], vec![1, 4]]),
        ],
        6,
    );
    let config = TrainConfig {
        epochs: 50,
        seed: 42,
        ..TrainConfig::default()
    };
    let a: Traj2UserModel<f64> = train(&c, &config).unwrap();
    let b: Traj2UserModel<f64> = train(&c, &config).unwrap();
    let bits = |m: &Traj2UserModel<f64>| -> Vec<u64> {
        m.embedding_table()
            .as_slice()
            .iter()
            .chain(m.output_layer().as_slice())
            .map(|x| x.to_bits())
            .collect()
    };
    assert_eq!(bits(&a), bits(&b));
    let other: Traj2UserModel<f64> = train(&c, &TrainConfig { seed: 43, ..config }).unwrap();
    assert_ne!(bits(&a), bits(&other));
}

#[test]
fn memorizes_a_single_pattern() {
    let c = corpus(vec![("a", vec![vec![1, 4]])], 6);
    let config = TrainConfig {
        epochs: 3000,
        learning_rate: 1.0,
        ..TrainConfig::default()
    };
    let model: Traj2UserModel<f64> = train(&c, &config).unwrap();
    let p = model.forward(0);
    for (j, &pj) in p.iter().enumerate() {
        if j == 1 || j == 4 {
            assert!(pj > 0.9, "p[{j}] = {pj}");
        } else {
            assert!(pj < 0.1, "p[{j}] = {pj}");
        }
    }
}

#[test]
fn identical_users_embed_closer_than_disjoint_ones() {
    let same = vec![vec![0, 3], vec![1, 3], vec![0, 4]];
    let c = corpus(
        vec![
            ("a", same.clone()),
            ("b", same),
            ("c", vec![vec![2, 5], vec![2, 5], vec![2, 5]]),
        ],
        6,
    );
    let config = TrainConfig {
        epochs: 2000,
        learning_rate: 0.5,
        ..TrainConfig::default()
    };
    let model: Traj2UserModel<f64> = train(&c, &config).unwrap();
    let e = model.embedding_table();
    let ab = cosine_similarity(e.row(0), e.row(1)).unwrap();
    let ac = cosine_similarity(e.row(0), e.row(2)).unwrap();
    assert!(ab > ac, "cos(a,b) = {ab}, cos(a,c) = {ac}");
}

proptest! {
    #[test]
    fn training_keeps_outputs_in_open_unit_interval(seed in 0u64..1000, epochs in 1usize..20) {
        let c = corpus(vec![("a", vec![vec![0, 2]]), ("b", vec![vec![1, 3], vec![0, 3]])], 4);
        let config = TrainConfig { epochs, seed, learning_rate: 0.5, ..TrainConfig::default() };
        let model: Traj2UserModel<f64> = train(&c, &config).unwrap();
        for u in 0..2 {
            for p in model.forward(u) {
                prop_assert!(p > 0.0 && p < 1.0);
            }
        }
    }
}

#[test]
fn checkpoint_file_round_trip() {
    let c = corpus(vec![("a", vec![vec![0, 2]]), ("b", vec![vec![1, 3]])], 4);
    let config = TrainConfig {
        epochs: 5,
        factor: "2".parse().unwrap(),
        ..TrainConfig::default()
    };
    let model: Traj2UserModel<f64> = train(&c, &config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    model.save(&path).unwrap();
    let back = Traj2UserModel::<f64>::load(&path).unwrap();
    assert_eq!(back, model);
    assert!(Traj2UserModel::<f32>::load(&path).is_err());
    assert!(Traj2UserModel::<f64>::load(dir.path().join("missing.json")).is_err());
}
