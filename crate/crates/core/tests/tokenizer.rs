use std::collections::{BTreeMap, BTreeSet};

use genrec::rng;
use genrec::tokenizer::*;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(r: &mut impl Rng) -> f64 {
    StandardNormal.sample(r)
}

fn random_embeddings(n: usize, dim: usize, seed: u64) -> Vec<ItemEmbedding> {
    let mut r = rng::stream(seed, &["test-embeddings"]);
    (0..n)
        .map(|i| ItemEmbedding {
            item_id: i as ItemId,
            vector: (0..dim).map(|_| gaussian(&mut r)).collect(),
        })
        .collect()
}

/// Adjusted Rand index from the contingency table.
fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    let choose2 = |n: usize| (n * n.saturating_sub(1)) as f64 / 2.0;
    let mut table: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut rows: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cols: BTreeMap<usize, usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&n| choose2(n)).sum();
    let sum_rows: f64 = rows.values().map(|&n| choose2(n)).sum();
    let sum_cols: f64 = cols.values().map(|&n| choose2(n)).sum();
    let expected = sum_rows * sum_cols / choose2(a.len());
    let max = 0.5 * (sum_rows + sum_cols);
    (index - expected) / (max - expected)
}

#[test]
fn ari_oracle_sanity() {
    assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[5, 5, 2, 2]), 1.0);
    assert!(adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]) < 0.0);
}

#[test]
fn four_separated_blobs_are_recovered_at_level_one() {
    let centers = [[10.0, 10.0], [-10.0, 10.0], [10.0, -10.0], [-10.0, -10.0]];
    let mut r = rng::stream(3, &["blobs"]);
    let mut embeddings = Vec::new();
    let mut labels = Vec::new();
    for i in 0..200 {
        let blob = i % 4;
        let vector = centers[blob].iter().map(|c| c + 0.3 * gaussian(&mut r)).collect();
        embeddings.push(ItemEmbedding {
            item_id: i as ItemId,
            vector,
        });
        labels.push(blob);
    }
    for seed in 0..5 {
        let cb = fit_rq_kmeans(
            &embeddings,
            &RqKmeansConfig {
                level_sizes: vec![4, 2, 2],
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        let level1: Vec<usize> = embeddings.iter().map(|e| cb.encode(e).unwrap().codes()[0] as usize).collect();
        assert_eq!(adjusted_rand_index(&level1, &labels), 1.0, "seed {seed}");
    }
}

#[test]
fn refits_are_byte_identical() {
    let e = random_embeddings(300, 6, 1);
    let cfg = RqKmeansConfig {
        level_sizes: vec![8, 4, 4],
        seed: 17,
        ..Default::default()
    };
    let bytes = |cb: &Codebook| {
        let mut buf = Vec::new();
        write_codebook(cb, &mut buf).unwrap();
        buf
    };
    let a = fit_rq_kmeans(&e, &cfg).unwrap();
    let b = fit_rq_kmeans(&e, &cfg).unwrap();
    assert_eq!(bytes(&a), bytes(&b));
    let c = fit_rq_kmeans(&e, &RqKmeansConfig { seed: 18, ..cfg }).unwrap();
    assert_ne!(bytes(&a), bytes(&c));
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[test]
fn reconstruction_error_never_grows_with_levels() {
    let e = random_embeddings(400, 8, 2);
    let cb = fit_rq_kmeans(
        &e,
        &RqKmeansConfig {
            level_sizes: vec![16, 8, 8],
            seed: 4,
            ..Default::default()
        },
    )
    .unwrap();
    let mut means = [0.0; 3];
    for item in &e {
        let sid = cb.encode(item).unwrap();
        let errs: Vec<f64> = (1..=3)
            .map(|l| sq_dist(&item.vector, &cb.reconstruct_levels(&sid, l).unwrap()))
            .collect();
        for w in errs.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "item {}: {errs:?}", item.item_id);
        }
        for (m, err) in means.iter_mut().zip(&errs) {
            *m += err;
        }
    }
    assert!(means[0] > means[1] && means[1] > means[2]);
}

#[test]
fn residuals_telescope() {
    let e = random_embeddings(200, 5, 3);
    let cb = fit_rq_kmeans(
        &e,
        &RqKmeansConfig {
            level_sizes: vec![6, 6, 6],
            seed: 0,
            ..Default::default()
        },
    )
    .unwrap();
    for item in &e {
        let (sid, residual) = cb.encode_with_residual(&item.vector).unwrap();
        let recon = cb.reconstruct(&sid).unwrap();
        for ((x, r), c) in item.vector.iter().zip(&residual).zip(&recon) {
            assert!((x - (c + r)).abs() <= 1e-9 * x.abs().max(1.0));
        }
    }
}

fn random_catalog(n: usize, sizes: [u32; 3], seed: u64) -> Vec<(ItemId, SemanticId)> {
    let mut r = rng::stream(seed, &["catalog"]);
    (0..n)
        .map(|i| {
            let sid = SemanticId::new(sizes.map(|k| r.random_range(0..k)));
            (i as ItemId, sid)
        })
        .collect()
}

fn codebook_with_sizes(sizes: &[usize]) -> Codebook {
    let centroids = sizes.iter().map(|&k| vec![0.0f32; k]).collect();
    Codebook::from_centroids(
        1,
        centroids,
        FitMeta {
            seed: 0,
            iterations: vec![0; sizes.len()],
            inertia: vec![0.0; sizes.len()],
            config_hash: None,
        },
    )
    .unwrap()
}

#[test]
fn trie_membership_matches_linear_scan() {
    let pairs = random_catalog(1000, [64, 64, 64], 5);
    let cb = codebook_with_sizes(&[64, 64, 64]);
    let trie = build_trie(&cb, &pairs).unwrap();
    for (_, sid) in &pairs {
        assert!(trie.contains(sid));
    }
    let mut r = rng::stream(5, &["probes"]);
    let mut rejected = 0;
    while rejected < 100 {
        let probe = SemanticId::new([r.random_range(0..64u32), r.random_range(0..64), r.random_range(0..64)]);
        let scan: BTreeSet<ItemId> = pairs.iter().filter(|(_, s)| *s == probe).map(|(i, _)| *i).collect();
        if scan.is_empty() {
            assert!(!trie.contains(&probe));
            assert!(trie.items(&probe).is_none());
            rejected += 1;
        } else {
            assert_eq!(trie.items(&probe).unwrap().iter().copied().collect::<BTreeSet<_>>(), scan);
        }
    }
    let leaves: usize = trie.entries().iter().map(|(_, items)| items.len()).sum();
    assert_eq!(leaves, pairs.len());
}

#[test]
fn trie_accepts_exactly_catalog_prefixes_by_enumeration() {
    let sizes = [8u32, 8, 8];
    let pairs = random_catalog(60, sizes, 9);
    let trie = build_trie(&codebook_with_sizes(&[8, 8, 8]), &pairs).unwrap();
    let sids: BTreeSet<Vec<u32>> = pairs.iter().map(|(_, s)| s.codes().to_vec()).collect();
    let is_prefix = |p: &[u32]| sids.iter().any(|s| s.starts_with(p));
    for a in 0..sizes[0] {
        assert_eq!(trie.accepts(&[a]), is_prefix(&[a]));
        for b in 0..sizes[1] {
            assert_eq!(trie.accepts(&[a, b]), is_prefix(&[a, b]));
            let expected: Vec<u32> = (0..sizes[2]).filter(|&c| sids.contains(&vec![a, b, c])).collect();
            assert_eq!(trie.next_codes(&[a, b]), expected);
            for c in 0..sizes[2] {
                assert_eq!(trie.contains(&SemanticId::new([a, b, c])), sids.contains(&vec![a, b, c]));
            }
        }
    }
    assert_eq!(trie.len(), sids.len());
}

#[test]
fn trie_rejects_out_of_range_codes() {
    let cb = codebook_with_sizes(&[2, 2, 2]);
    let bad = vec![(0, SemanticId::new([0, 2, 0]))];
    assert!(matches!(build_trie(&cb, &bad), Err(genrec::GenRecError::InvalidCode { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn encoded_codes_are_in_range_and_nearest(seed in 0u64..1000, n in 8usize..40) {
        let e = random_embeddings(n, 3, seed);
        let cb = fit_rq_kmeans(&e, &RqKmeansConfig { level_sizes: vec![4, 3, 2], seed, ..Default::default() }).unwrap();
        for item in &e {
            let sid = cb.encode(item).unwrap();
            prop_assert!(cb.is_valid(&sid));
            // level-1 code is the nearest level-1 centroid, lowest index on ties
            let d: Vec<f64> = (0..4)
                .map(|k| sq_dist(&item.vector, &cb.centroid(0, k).iter().map(|&c| c as f64).collect::<Vec<_>>()))
                .collect();
            let best = (0..4).fold(0, |b, k| if d[k] < d[b] { k } else { b });
            prop_assert_eq!(sid.codes()[0] as usize, best);
        }
    }

    #[test]
    fn every_catalog_prefix_is_accepted(seed in 0u64..1000, n in 1usize..50) {
        let pairs = random_catalog(n, [5, 5, 5], seed);
        let trie = build_trie(&codebook_with_sizes(&[5, 5, 5]), &pairs).unwrap();
        for (item, sid) in &pairs {
            for l in 0..=3 {
                prop_assert!(trie.accepts(&sid.codes()[..l]));
            }
            prop_assert!(trie.items(sid).unwrap().contains(item));
        }
    }
}
