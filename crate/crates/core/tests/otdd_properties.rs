mod support;

use langdist::embedstore::LabeledDataset;
use langdist::otdd::{
    dataset_distance, euclidean_cost, ground_cost, label_distance_matrix, sinkhorn, uniform,
    CostMatrix, LabelMode, OtddConfig, SinkhornConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use support::lp::exact_ot;

fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize, shift: f64) -> Vec<Vec<f64>> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    (0..n).map(|_| (0..dim).map(|_| normal.sample(rng) + shift).collect()).collect()
}

fn to_rows(c: &CostMatrix) -> Vec<Vec<f64>> {
    (0..c.rows()).map(|i| c.row(i).to_vec()).collect()
}

fn relative_gap(got: f64, exact: f64) -> f64 {
    (got - exact).abs() / exact.abs().max(1e-12)
}

#[test]
fn sinkhorn_matches_brute_force_lp() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..30 {
        let n = rng.random_range(2..=6);
        let m = if rng.random_bool(0.5) { n } else { rng.random_range(2..=4) };
        let xa = random_points(&mut rng, n, 3, 0.0);
        let xb = random_points(&mut rng, m, 3, 0.5);
        let c = euclidean_cost(&xa, &xb, true).unwrap();
        let cfg = SinkhornConfig { eps: 1e-2 * c.median(), ..Default::default() };
        let got = sinkhorn(&c, &uniform(n), &uniform(m), &cfg).unwrap();
        let exact = exact_ot(&to_rows(&c), &uniform(n), &uniform(m));
        assert!(relative_gap(got.stats.cost, exact) <= 0.01, "{n}x{m}: {} vs {exact}", got.stats.cost);
    }
}

#[test]
fn coupling_marginals_and_mass() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let xa = random_points(&mut rng, 7, 4, 0.0);
    let xb = random_points(&mut rng, 5, 4, 1.0);
    let c = euclidean_cost(&xa, &xb, true).unwrap();
    let s = sinkhorn(&c, &uniform(7), &uniform(5), &SinkhornConfig::default()).unwrap();
    assert!(s.stats.converged);
    assert!(s.coupling.values.iter().all(|&v| v >= 0.0));
    for (r, a) in s.coupling.row_sums().iter().zip(&s.coupling.row_marginal) {
        assert!((r - a).abs() <= 1e-6);
    }
    for (r, b) in s.coupling.col_sums().iter().zip(&s.coupling.col_marginal) {
        assert!((r - b).abs() <= 1e-9);
    }
    let total: f64 = s.coupling.values.iter().sum();
    assert!((total - 1.0).abs() < 1e-6);
}

#[test]
fn entropic_smoothing_is_monotone_in_eps() {
    // As eps grows the plan spreads: <pi, C> can only go up while the
    // regularized objective <pi, C> - eps H(pi) can only go down.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let xa = random_points(&mut rng, 10, 2, 0.0);
        let xb = random_points(&mut rng, 10, 2, 0.3);
        let c = euclidean_cost(&xa, &xb, true).unwrap();
        let mut prev: Option<(f64, f64)> = None;
        for eps in [0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0] {
            let cfg = SinkhornConfig { eps, marginal_tol: 1e-10, ..Default::default() };
            let s = sinkhorn(&c, &uniform(10), &uniform(10), &cfg).unwrap().stats;
            if let Some((lin, reg)) = prev {
                assert!(s.cost >= lin - 1e-7, "linear cost decreased at eps {eps}");
                assert!(s.regularized_cost <= reg + 1e-7, "objective increased at eps {eps}");
            }
            prev = Some((s.cost, s.regularized_cost));
        }
    }
}

fn synthetic(rng: &mut ChaCha8Rng, lang: &str, n: usize, means: &[Vec<f64>], sd: f64) -> LabeledDataset {
    let normal = Normal::new(0.0, sd).unwrap();
    let items = (0..n)
        .map(|i| {
            let k = i % means.len();
            let x = means[k].iter().map(|m| m + normal.sample(rng)).collect();
            (x, format!("l{k}"))
        })
        .collect();
    LabeledDataset::from_items(lang, "m", 7, items).unwrap()
}

fn label_means(rng: &mut ChaCha8Rng, k: usize, dim: usize, spread: f64) -> Vec<Vec<f64>> {
    (0..k).map(|_| (0..dim).map(|_| rng.random_range(-spread..spread)).collect()).collect()
}

#[test]
fn dataset_distance_matches_lp_on_three_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..10 {
        let a = LabeledDataset::from_items(
            "a",
            "m",
            0,
            random_points(&mut rng, 3, 2, 0.0).into_iter().map(|x| (x, "x".to_string())).collect(),
        )
        .unwrap();
        let b = LabeledDataset::from_items(
            "b",
            "m",
            0,
            random_points(&mut rng, 3, 2, 1.0).into_iter().map(|x| (x, "x".to_string())).collect(),
        )
        .unwrap();
        let base = OtddConfig::default();
        let labels = label_distance_matrix(&a, &b, &base).unwrap();
        let c = ground_cost(&a, &b, &labels, &base).unwrap();
        let cfg = OtddConfig { eps: 1e-2 * c.median(), marginal_tol: 1e-9, ..base };
        // the label term uses the same eps as the outer problem; rebuild the ground cost with it
        let labels = label_distance_matrix(&a, &b, &cfg).unwrap();
        let c = ground_cost(&a, &b, &labels, &cfg).unwrap();
        let exact = exact_ot(&to_rows(&c), &uniform(3), &uniform(3)).sqrt();
        let got = dataset_distance(&a, &b, &cfg).unwrap().distance;
        assert!(relative_gap(got, exact) <= 0.01, "{got} vs {exact}");
    }
}

#[test]
fn symmetry_relabeling_and_rotation() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let means = label_means(&mut rng, 3, 4, 3.0);
    let a = synthetic(&mut rng, "a", 40, &means, 0.5);
    let b = synthetic(&mut rng, "b", 50, &means, 0.7);
    let cfg = OtddConfig { marginal_tol: 1e-9, ..Default::default() };
    let ab = dataset_distance(&a, &b, &cfg).unwrap().distance;
    let ba = dataset_distance(&b, &a, &cfg).unwrap().distance;
    assert!((ab - ba).abs() <= 1e-9 * ab);

    let rename = |l: &str| format!("renamed-{}", 9 - l[1..].parse::<u32>().unwrap());
    let ab2 = dataset_distance(&a.relabeled(rename), &b.relabeled(rename), &cfg).unwrap().distance;
    assert_eq!(ab, ab2);

    // rotate the (x0, x1) plane by 0.7 rad and the (x2, x3) plane by -1.3 rad
    let rotate = |ds: &LabeledDataset| {
        let mut out = ds.clone();
        for it in &mut out.items {
            let f = it.features.clone();
            let (c1, s1) = (0.7f64.cos(), 0.7f64.sin());
            let (c2, s2) = ((-1.3f64).cos(), (-1.3f64).sin());
            it.features = vec![
                c1 * f[0] - s1 * f[1],
                s1 * f[0] + c1 * f[1],
                c2 * f[2] - s2 * f[3],
                s2 * f[2] + c2 * f[3],
            ];
        }
        out
    };
    let rot = dataset_distance(&rotate(&a), &rotate(&b), &cfg).unwrap().distance;
    assert!((rot - ab).abs() <= 1e-6 * ab, "{rot} vs {ab}");
}

#[test]
fn same_generators_give_smallest_diagonal() {
    let mut hits = 0;
    let seeds = 40;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let means = label_means(&mut rng, 4, 5, 2.0);
        let a = synthetic(&mut rng, "a", 80, &means, 0.5);
        let b = synthetic(&mut rng, "b", 80, &means, 0.5);
        let m = label_distance_matrix(&a, &b, &OtddConfig::default()).unwrap();
        let ok = (0..m.labels_a.len()).all(|i| {
            let off = (0..m.labels_b.len()).filter(|&j| j != i).map(|j| m.values[i][j]).fold(f64::INFINITY, f64::min);
            m.values[i][i] < off
        });
        hits += ok as u32;
    }
    assert!(hits as f64 >= 0.95 * seeds as f64, "{hits}/{seeds}");
}

#[test]
fn bures_and_empirical_agree_roughly_on_gaussians() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = synthetic(&mut rng, "a", 400, &[vec![0.0, 0.0]], 1.0);
    let b = synthetic(&mut rng, "b", 400, &[vec![3.0, 0.0]], 1.0);
    let emp = label_distance_matrix(&a, &b, &OtddConfig::default()).unwrap().values[0][0];
    let cfg = OtddConfig { label_mode: LabelMode::GaussianBures, ..Default::default() };
    let bures = label_distance_matrix(&a, &b, &cfg).unwrap().values[0][0];
    assert!((emp - bures).abs() < 0.25, "{emp} vs {bures}");
}
