use std::collections::HashMap;

use langdist::analysis::{
    agglomerative_cluster, ndcg_at_k, spearman, ClusterTree, DistanceMatrix, Linkage, MatrixMeta,
};
use proptest::prelude::*;

/// Rank of each value: count of smaller values plus half the ties (itself included).
fn oracle_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let below = x.iter().filter(|&&w| w < v).count() as f64;
            let equal = x.iter().filter(|&&w| w == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

fn oracle_spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (oracle_ranks(x), oracle_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[test]
fn spearman_with_ties_matches_oracle() {
    let (x, y) = ([1.0, 2.0, 2.0, 4.0], [1.0, 3.0, 2.0, 4.0]);
    let got = spearman(&x, &y).unwrap().rho;
    assert!((got - oracle_spearman(&x, &y)).abs() <= 1e-12);
}

proptest! {
    #[test]
    fn spearman_agrees_with_oracle_and_is_rank_invariant(
        pairs in prop::collection::vec((0u8..6, -50i32..50), 4..25)
    ) {
        let x: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
        let oracle = oracle_spearman(&x, &y);
        prop_assume!(oracle.is_finite());
        let got = spearman(&x, &y).unwrap().rho;
        prop_assert!((got - oracle).abs() <= 1e-12);
        let cubed: Vec<f64> = y.iter().map(|v| v.powi(3) + 7.0).collect();
        prop_assert!((spearman(&x, &cubed).unwrap().rho - got).abs() <= 1e-12);
    }

    #[test]
    fn ndcg_ignores_scale_and_names(rel in prop::collection::vec(0u32..20, 2..8), scale in 1u32..1000, k in 1usize..5) {
        let names: Vec<String> = (0..rel.len()).map(|i| format!("c{i}")).collect();
        let base: HashMap<String, f64> = names.iter().cloned().zip(rel.iter().map(|&r| r as f64)).collect();
        let scaled: HashMap<String, f64> = base.iter().map(|(k, v)| (k.clone(), v * scale as f64)).collect();
        let order: Vec<String> = names.iter().rev().cloned().collect();
        let a = ndcg_at_k(&order, &base, k).unwrap();
        prop_assert!((a - ndcg_at_k(&order, &scaled, k).unwrap()).abs() <= 1e-12);
        let renamed: Vec<String> = order.iter().map(|n| format!("x{n}")).collect();
        let rel_renamed: HashMap<String, f64> = base.iter().map(|(k, v)| (format!("x{k}"), *v)).collect();
        prop_assert_eq!(a, ndcg_at_k(&renamed, &rel_renamed, k).unwrap());
        prop_assert!((0.0..=1.0).contains(&a));
    }
}

#[test]
fn ndcg_scaling_is_exact_for_powers_of_two() {
    let rel: HashMap<String, f64> = [("a", 3.0), ("b", 2.0), ("c", 1.0)].into_iter().map(|(k, v)| (k.into(), v)).collect();
    let order: Vec<String> = ["c", "b", "a"].iter().map(|s| s.to_string()).collect();
    let scaled: HashMap<String, f64> = rel.iter().map(|(k, v)| (k.clone(), v * 8.0)).collect();
    assert_eq!(ndcg_at_k(&order, &rel, 3).unwrap(), ndcg_at_k(&order, &scaled, 3).unwrap());
}

/// Naive agglomeration: recompute every linkage from scratch, merge the closest pair.
fn oracle_merges(d: &[Vec<f64>], linkage: Linkage) -> Vec<(Vec<usize>, f64)> {
    let mut clusters: Vec<Vec<usize>> = (0..d.len()).map(|i| vec![i]).collect();
    let mut out = Vec::new();
    while clusters.len() > 1 {
        let mut best = (0, 1, f64::INFINITY);
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let vals: Vec<f64> = clusters[a].iter().flat_map(|&i| clusters[b].iter().map(move |&j| d[i][j])).collect();
                let v = match linkage {
                    Linkage::Single => vals.iter().copied().fold(f64::INFINITY, f64::min),
                    Linkage::Complete => vals.iter().copied().fold(0.0, f64::max),
                    Linkage::Average => vals.iter().sum::<f64>() / vals.len() as f64,
                };
                if v < best.2 {
                    best = (a, b, v);
                }
            }
        }
        let merged_b = clusters.remove(best.1);
        clusters[best.0].extend(merged_b);
        clusters[best.0].sort();
        out.push((clusters[best.0].clone(), best.2));
    }
    out
}

fn merged_sets(t: &ClusterTree, d: &DistanceMatrix) -> Vec<(Vec<usize>, f64)> {
    let n = t.leaves.len();
    (0..t.merges.len())
        .map(|m| {
            let mut idx: Vec<usize> = t.members(n + m).iter().map(|l| d.index(l).unwrap()).collect();
            idx.sort();
            (idx, t.merges[m].height)
        })
        .collect()
}

fn line_matrix(xs: &[f64]) -> DistanceMatrix {
    let langs = (0..xs.len()).map(|i| ((b'A' + i as u8) as char).to_string()).collect();
    DistanceMatrix::from_pairs(langs, MatrixMeta::default(), 0.0, |i, j| (xs[i] - xs[j]).abs()).unwrap()
}

#[test]
fn chain_separates_single_from_complete() {
    let d = line_matrix(&[0.0, 1.0, 2.1, 3.3]);
    let single = agglomerative_cluster(&d, Linkage::Single).unwrap();
    let complete = agglomerative_cluster(&d, Linkage::Complete).unwrap();
    assert_eq!(merged_sets(&single, &d), oracle_merges(&d.values, Linkage::Single));
    assert_eq!(merged_sets(&complete, &d), oracle_merges(&d.values, Linkage::Complete));
    assert_eq!(single.members(5), ["A", "B", "C"]);
    assert_eq!(complete.members(5), ["C", "D"]);
    let heights = |t: &ClusterTree| t.merges.iter().map(|m| m.height).collect::<Vec<_>>();
    assert_eq!(heights(&single), [1.0, 2.1 - 1.0, 3.3 - 2.1]);
    assert_eq!(heights(&complete), [1.0, 3.3 - 2.1, 3.3]);
}

proptest! {
    #[test]
    fn clustering_matches_oracle_and_ignores_input_order(
        pts in prop::collection::vec((-100i32..100, -100i32..100), 2..9),
        rot in 0usize..9,
        which in 0usize..3,
    ) {
        let linkage = [Linkage::Single, Linkage::Complete, Linkage::Average][which];
        let coords: Vec<(f64, f64)> = pts.iter().map(|&(a, b)| (a as f64 + 0.001 * b as f64, b as f64 * 1.37)).collect();
        let langs: Vec<String> = (0..coords.len()).map(|i| format!("l{i}")).collect();
        let dist = |p: (f64, f64), q: (f64, f64)| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt();
        let d = DistanceMatrix::from_pairs(langs.clone(), MatrixMeta::default(), 0.0, |i, j| dist(coords[i], coords[j])).unwrap();
        // distinct linkage values keep the oracle's choice unambiguous
        let mut all: Vec<f64> = d.pairs().map(|(i, j)| d.values[i][j]).collect();
        all.sort_by(f64::total_cmp);
        prop_assume!(all.windows(2).all(|w| w[1] - w[0] > 1e-6) && all[0] > 0.0);

        let t = agglomerative_cluster(&d, linkage).unwrap();
        let got = merged_sets(&t, &d);
        let want = oracle_merges(&d.values, linkage);
        prop_assert_eq!(got.len(), want.len());
        for ((gs, gh), (ws, wh)) in got.iter().zip(&want) {
            prop_assert_eq!(gs, ws);
            prop_assert!((gh - wh).abs() <= 1e-9);
        }
        prop_assert!(t.merges.windows(2).all(|w| w[0].height <= w[1].height + 1e-12));

        let n = langs.len();
        let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
        let shuffled = DistanceMatrix::from_pairs(
            perm.iter().map(|&i| langs[i].clone()).collect(),
            MatrixMeta::default(),
            0.0,
            |i, j| d.values[perm[i]][perm[j]],
        ).unwrap();
        let t2 = agglomerative_cluster(&shuffled, linkage).unwrap();
        for m in 0..t.merges.len() {
            prop_assert_eq!(t.members(n + m), t2.members(n + m));
        }
        prop_assert_eq!(t.newick(), t2.newick());
    }
}
