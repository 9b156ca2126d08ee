//! Acceptance gate: one test per release criterion, each verified against an
//! oracle implemented from the definitions alone (no shared code with the
//! library paths under test). `cargo test --test acceptance` prints one
//! pass/fail line per criterion; `-- --nocapture` adds a `PASS` summary line
//! with the measured numbers.
//!
//! The oracles here are deliberately naive — double loops, explicit pair
//! counting, finite differences, compensated summation — so that agreement
//! with the optimized library code is evidence, not tautology.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::Command;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use fedclust::autok::{coefficient_of_variation, AutoKConfig};
use fedclust::clustering::{agglomerate, silhouette_score, Linkage, Merge, StopRule};
use fedclust::dataset::{EmbeddingDataset, LowOverlapSpec, SyntheticSpec};
use fedclust::distance::{build_distance_matrix, pair_distance, DistanceMatrix, DistanceParams};
use fedclust::flcore::{aggregate, run_federation, ModelKind, Strategy, TrainConfig};
use fedclust::harness::{
    adjusted_rand_index, cluster_clients, generate_data, partition_data, run_experiment,
    ClusteringMode, DataSource, ExperimentConfig, SignatureMode,
};
use fedclust::metrics::evaluate;
use fedclust::model::{ModelParams, ModelShape};
use fedclust::partition::{ClientShard, PartitionSpec};
use fedclust::signature::{ClientSignature, SignatureEntry};

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

/// Symmetric zero-diagonal matrix with entries drawn from `draw`.
fn random_matrix(n: usize, rng: &mut ChaCha12Rng, mut draw: impl FnMut(&mut ChaCha12Rng) -> f64) -> DistanceMatrix {
    let mut rows = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = draw(rng);
            rows[i][j] = v;
            rows[j][i] = v;
        }
    }
    DistanceMatrix::from_rows(rows).expect("valid random matrix")
}

/// Random cluster labeling of `n` elements into exactly `k` non-empty
/// clusters with ids `0..k` (positions shuffled).
fn random_labels(n: usize, k: usize, rng: &mut ChaCha12Rng) -> Vec<usize> {
    assert!(k >= 1 && k <= n);
    let mut labels: Vec<usize> = (0..n)
        .map(|i| if i < k { i } else { rng.random_range(0..k) })
        .collect();
    labels.shuffle(rng);
    labels
}

/// Deterministic client shards with evenly spread labels and uniform noise
/// features — enough structure for training to move, no more.
fn make_shards(
    n_clients: usize,
    dim: usize,
    classes: usize,
    train_per_client: usize,
    val_per_client: usize,
    seed: u64,
) -> Vec<ClientShard> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    (0..n_clients)
        .map(|id| {
            let mut fill = |count: usize| {
                let mut data = EmbeddingDataset::new(dim, classes).expect("dims");
                for s in 0..count {
                    let label = (s + id) % classes;
                    let mut x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                    x[label % dim] += 2.0; // make classes learnable
                    data.push(&x, label).expect("sample");
                }
                data
            };
            let train = fill(train_per_client);
            let validation = fill(val_per_client);
            ClientShard {
                client_id: id,
                train_indices: (0..train.len()).collect(),
                validation_indices: (0..validation.len()).collect(),
                train,
                validation,
            }
        })
        .collect()
}

// ===========================================================================
// Criterion 1 — pairwise distances match a scalar re-implementation
// ===========================================================================

/// Textbook re-implementation of the pair distance: plain loops, no shared
/// helpers with the library.
fn oracle_pair(a: &ClientSignature, b: &ClientSignature, p: &DistanceParams) -> Option<f64> {
    let mut overlap = 0.0;
    let mut weighted_gap = 0.0;
    let mut shared = false;
    for (class, ea) in &a.entries {
        let Some(eb) = b.entries.get(class) else { continue };
        shared = true;
        let mut dot = 0.0;
        let mut sq_a = 0.0;
        let mut sq_b = 0.0;
        for k in 0..ea.mu.len() {
            dot += ea.mu[k] * eb.mu[k];
            sq_a += ea.mu[k] * ea.mu[k];
            sq_b += eb.mu[k] * eb.mu[k];
        }
        let gap = 1.0 - dot / (sq_a.sqrt() * sq_b.sqrt() + p.epsilon);
        let w = if ea.weight < eb.weight { ea.weight } else { eb.weight };
        overlap += w;
        weighted_gap += w * gap;
    }
    if !shared {
        return None;
    }
    let base = weighted_gap / (overlap + p.epsilon);
    if p.overlap_scaling {
        let floor = if overlap > p.epsilon { overlap } else { p.epsilon };
        let mult = floor.powf(-p.alpha).min(p.beta);
        Some(base * mult)
    } else {
        Some(base)
    }
}

/// Linear-interpolation (inclusive) percentile over an ascending slice.
fn oracle_percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
}

/// Full matrix oracle: pairwise distances, then the no-overlap placeholder
/// from the finite off-diagonal multiset (each unordered pair counted twice,
/// matching "both triangles").
fn oracle_matrix(sigs: &[ClientSignature], p: &DistanceParams) -> (Vec<Vec<f64>>, f64) {
    let n = sigs.len();
    let mut rows = vec![vec![None; n]; n];
    let mut finite = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let d = oracle_pair(&sigs[i], &sigs[j], p);
            rows[i][j] = d;
            rows[j][i] = d;
            if let Some(v) = d {
                finite.push(v);
                finite.push(v);
            }
        }
    }
    let d_big = if finite.is_empty() {
        2.0 * p.beta
    } else {
        finite.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let p95 = oracle_percentile(&finite, 95.0);
        let p99 = oracle_percentile(&finite, 99.0);
        (2.0 * p95).min(p99)
    };
    let dense = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i == j { 0.0 } else { rows[i][j].unwrap_or(d_big) })
                .collect()
        })
        .collect();
    (dense, d_big)
}

/// Random signature set: each client gets a random non-empty class subset,
/// normalized positive weights, and uniform prototypes (occasionally a zero
/// vector, to exercise the regularized cosine).
fn random_signatures(n: usize, classes: usize, dim: usize, rng: &mut ChaCha12Rng) -> Vec<ClientSignature> {
    (0..n)
        .map(|id| {
            let mut support: Vec<usize> = (0..classes).filter(|_| rng.random_bool(0.6)).collect();
            if support.is_empty() {
                support.push(rng.random_range(0..classes));
            }
            let raw: Vec<f64> = support.iter().map(|_| rng.random_range(0.05..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let mut entries = BTreeMap::new();
            for (&class, &w) in support.iter().zip(&raw) {
                let mu: Vec<f64> = if rng.random_bool(0.05) {
                    vec![0.0; dim]
                } else {
                    (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()
                };
                entries.insert(class, SignatureEntry { weight: w / total, mu });
            }
            ClientSignature {
                client_id: id,
                dim,
                total_samples: rng.random_range(1..200),
                entries,
            }
        })
        .collect()
}

fn one_class_signature(id: usize, class: usize, weight: f64, mu: Vec<f64>) -> ClientSignature {
    let dim = mu.len();
    let mut entries = BTreeMap::new();
    entries.insert(class, SignatureEntry { weight, mu });
    ClientSignature { client_id: id, dim, total_samples: 10, entries }
}

#[test]
fn c1_distance_matrix_matches_scalar_reference() {
    let mut rng = ChaCha12Rng::seed_from_u64(0xD157);
    let param_grid = [
        DistanceParams::default(),
        DistanceParams { alpha: 2.0, beta: 50.0, epsilon: 1e-3, overlap_scaling: true },
        DistanceParams { alpha: 0.5, beta: 2.0, epsilon: 1e-2, overlap_scaling: true },
        DistanceParams { alpha: 1.0, beta: 100.0, epsilon: 1e-3, overlap_scaling: false },
        DistanceParams { alpha: 1.0, beta: 100.0, epsilon: 1e-6, overlap_scaling: true },
    ];
    let mut checked = 0usize;
    let mut saw_placeholder = false;
    for round in 0..120 {
        let n = 2 + round % 11; // 2..=12
        let classes = 2 + round % 4; // 2..=5
        let dim = 1 + round % 4; // 1..=4
        let params = &param_grid[round % param_grid.len()];
        let sigs = random_signatures(n, classes, dim, &mut rng);

        let (matrix, audit) = build_distance_matrix(&sigs, params).expect("matrix builds");
        let (want, want_d_big) = oracle_matrix(&sigs, params);
        assert!(
            (audit.d_big - want_d_big).abs() <= 1e-12,
            "set {round}: d_big {} vs oracle {}",
            audit.d_big,
            want_d_big
        );
        saw_placeholder |= audit.no_overlap_pairs > 0;
        for i in 0..n {
            for j in 0..n {
                let got = matrix.get(i, j);
                assert!(
                    (got - want[i][j]).abs() <= 1e-12,
                    "set {round}: entry ({i},{j}) {} vs oracle {}",
                    got,
                    want[i][j]
                );
                assert_eq!(got, matrix.get(j, i), "symmetry at ({i},{j})");
            }
            assert_eq!(matrix.get(i, i), 0.0, "diagonal at {i}");
        }
        checked += 1;
    }
    assert!(checked >= 100, "need at least 100 random sets, ran {checked}");
    assert!(saw_placeholder, "random sets never exercised the no-overlap placeholder");

    // Fully disjoint class sets: every pair takes the placeholder, which
    // falls back to 2·beta with nothing to take percentiles of.
    for params in &param_grid {
        let sigs: Vec<ClientSignature> = (0..4)
            .map(|i| one_class_signature(i, i, 1.0, vec![1.0, f64::from(i as u32)]))
            .collect();
        let (matrix, audit) = build_distance_matrix(&sigs, params).expect("disjoint set builds");
        assert_eq!(audit.d_big, 2.0 * params.beta);
        assert_eq!(audit.no_overlap_pairs, 6);
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert_eq!(matrix.get(i, j), 2.0 * params.beta);
                }
            }
        }
    }

    // Hand example: full overlap, orthogonal prototypes in both classes.
    // Every shared-class gap is exactly 1, the overlap is 1, so the distance
    // is 1/(1 + ε) = 0.9990 (4 d.p.) and the multiplier is 1.
    let defaults = DistanceParams::default();
    let mut entries_a = BTreeMap::new();
    entries_a.insert(0, SignatureEntry { weight: 0.5, mu: vec![1.0, 0.0] });
    entries_a.insert(1, SignatureEntry { weight: 0.5, mu: vec![0.0, 1.0] });
    let mut entries_b = BTreeMap::new();
    entries_b.insert(0, SignatureEntry { weight: 0.5, mu: vec![0.0, 1.0] });
    entries_b.insert(1, SignatureEntry { weight: 0.5, mu: vec![1.0, 0.0] });
    let full_a = ClientSignature { client_id: 0, dim: 2, total_samples: 10, entries: entries_a };
    let full_b = ClientSignature { client_id: 1, dim: 2, total_samples: 10, entries: entries_b };
    let d = pair_distance(&full_a, &full_b, &defaults).expect("shares classes");
    assert!((d - 1.0 / 1.001).abs() <= 1e-12, "full-overlap distance {d}");
    assert!((d - 0.9990).abs() < 1e-4, "full-overlap distance rounds to 0.9990, got {d}");

    // Hand example: a single shared class carrying weight 0.1 on each side,
    // orthogonal prototypes. Base = 0.1/0.101, multiplier = 1/0.1 = 10,
    // distance ≈ 9.901.
    let mut entries_a = BTreeMap::new();
    entries_a.insert(0, SignatureEntry { weight: 0.1, mu: vec![1.0, 0.0] });
    entries_a.insert(1, SignatureEntry { weight: 0.9, mu: vec![1.0, 1.0] });
    let mut entries_b = BTreeMap::new();
    entries_b.insert(0, SignatureEntry { weight: 0.1, mu: vec![0.0, 1.0] });
    entries_b.insert(2, SignatureEntry { weight: 0.9, mu: vec![-1.0, 1.0] });
    let low_a = ClientSignature { client_id: 0, dim: 2, total_samples: 10, entries: entries_a };
    let low_b = ClientSignature { client_id: 1, dim: 2, total_samples: 10, entries: entries_b };
    let d = pair_distance(&low_a, &low_b, &defaults).expect("shares class 0");
    assert!((d - (0.1 / 0.101) * 10.0).abs() <= 1e-12, "low-overlap distance {d}");
    assert!((d - 9.901).abs() < 1e-3, "low-overlap distance rounds to 9.901, got {d}");

    eprintln!("criterion 1 (distance fidelity, {checked} random sets + hand examples): PASS");
}

// ===========================================================================
// Criterion 2 — agglomeration matches an exhaustive-search reference
// ===========================================================================

/// Definitional linkage over the original matrix (members ascending).
fn ref_linkage(d: &DistanceMatrix, a: &[usize], b: &[usize], linkage: Linkage) -> f64 {
    match linkage {
        Linkage::Single => {
            let mut best = f64::INFINITY;
            for &i in a {
                for &j in b {
                    if d.get(i, j) < best {
                        best = d.get(i, j);
                    }
                }
            }
            best
        }
        Linkage::Complete => {
            let mut worst = 0.0f64;
            for &i in a {
                for &j in b {
                    if d.get(i, j) > worst {
                        worst = d.get(i, j);
                    }
                }
            }
            worst
        }
        Linkage::Average => {
            let mut sum = 0.0;
            for &i in a {
                for &j in b {
                    sum += d.get(i, j);
                }
            }
            sum / (a.len() * b.len()) as f64
        }
    }
}

/// Exhaustive reference: scan *all* cluster pairs each step, merge the
/// minimum under the ordering (distance, smaller least-member, larger
/// least-member). Returns the merge log and the partition after each number
/// of merges (index 0 = all singletons).
fn reference_agglomerate(d: &DistanceMatrix, linkage: Linkage) -> (Vec<Merge>, Vec<Vec<Vec<usize>>>) {
    let n = d.n();
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut log = Vec::new();
    let mut snapshots = vec![clusters.clone()];
    while clusters.len() > 1 {
        let mut best: Option<(f64, usize, usize, usize, usize)> = None;
        for p in 0..clusters.len() {
            for q in (p + 1)..clusters.len() {
                let dist = ref_linkage(d, &clusters[p], &clusters[q], linkage);
                let lo = clusters[p][0].min(clusters[q][0]);
                let hi = clusters[p][0].max(clusters[q][0]);
                let better = match &best {
                    None => true,
                    Some(cur) => (dist, lo, hi) < (cur.0, cur.1, cur.2),
                };
                if better {
                    best = Some((dist, lo, hi, p, q));
                }
            }
        }
        let (dist, lo, hi, p, q) = best.expect("pair exists");
        log.push(Merge { a: lo, b: hi, distance: dist });
        let absorbed = clusters.remove(q);
        clusters[p].extend(absorbed);
        clusters[p].sort_unstable();
        snapshots.push(clusters.clone());
    }
    (log, snapshots)
}

/// Canonical labels of a partition snapshot: clusters ordered by their
/// smallest member.
fn snapshot_labels(snapshot: &[Vec<usize>], n: usize) -> Vec<usize> {
    let mut ordered: Vec<&Vec<usize>> = snapshot.iter().collect();
    ordered.sort_by_key(|c| c[0]);
    let mut labels = vec![0usize; n];
    for (id, members) in ordered.iter().enumerate() {
        for &i in members.iter() {
            labels[i] = id;
        }
    }
    labels
}

fn partition_of(labels: &[usize]) -> BTreeSet<BTreeSet<usize>> {
    let mut by_cluster: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for (i, &c) in labels.iter().enumerate() {
        by_cluster.entry(c).or_default().insert(i);
    }
    by_cluster.into_values().collect()
}

#[test]
fn c2_agglomeration_matches_exhaustive_reference() {
    let mut rng = ChaCha12Rng::seed_from_u64(0xC105);
    let linkages = [Linkage::Single, Linkage::Complete, Linkage::Average];
    let grid = [0.25, 0.5, 0.75, 1.0];

    let mut matrices_checked = 0usize;
    for round in 0..60 {
        let n = 2 + round % 7; // 2..=8
        // Alternate tie-heavy discrete matrices with continuous ones so the
        // deterministic tie-break is genuinely exercised.
        let d = if round % 2 == 0 {
            random_matrix(n, &mut rng, |r| grid[r.random_range(0..grid.len())])
        } else {
            random_matrix(n, &mut rng, |r| r.random_range(0.05..2.0))
        };
        for linkage in linkages {
            let (ref_log, snapshots) = reference_agglomerate(&d, linkage);
            for k in 1..=n {
                let got = agglomerate(&d, linkage, StopRule::NumClusters(k)).expect("clusters");
                assert_eq!(got.num_clusters, k);
                let want_labels = snapshot_labels(&snapshots[n - k], n);
                assert_eq!(got.labels, want_labels, "labels at k={k}, n={n}, {linkage:?}");
                assert_eq!(
                    got.merge_log,
                    ref_log[..n - k].to_vec(),
                    "merge log at k={k}, n={n}, {linkage:?}"
                );
            }
        }
        matrices_checked += 1;
    }
    assert!(matrices_checked >= 60);

    // Threshold/fixed-K consistency: for every K reachable by a threshold
    // (a strict gap in the merge heights), a threshold placed in the gap
    // reproduces the fixed-K partition exactly.
    let mut consistency_checked = 0usize;
    for round in 0..40 {
        let n = 4 + round % 5; // 4..=8
        let d = random_matrix(n, &mut rng, |r| r.random_range(0.05..2.0));
        for linkage in linkages {
            let full = agglomerate(&d, linkage, StopRule::NumClusters(1)).expect("full merge");
            let heights: Vec<f64> = full.merge_log.iter().map(|m| m.distance).collect();
            for k in 1..=n {
                let taken = n - k;
                // Reachable iff every taken merge is at or below θ and the
                // next merge (if any) is strictly above θ.
                let ceiling = heights[..taken].iter().cloned().fold(0.0f64, f64::max);
                let theta = if taken == n - 1 {
                    ceiling + 1.0
                } else if heights[taken] > ceiling {
                    (ceiling + heights[taken]) / 2.0
                } else {
                    continue; // K not reachable by any threshold
                };
                if taken < n - 1 && theta >= heights[taken] {
                    continue; // gap too narrow for a representable midpoint
                }
                let by_theta = agglomerate(&d, linkage, StopRule::Threshold(theta)).expect("theta");
                let by_k = agglomerate(&d, linkage, StopRule::NumClusters(k)).expect("fixed k");
                assert_eq!(by_theta.num_clusters, k, "θ={theta} should leave {k} clusters");
                assert_eq!(by_theta.labels, by_k.labels);
                consistency_checked += 1;
            }
        }
    }
    assert!(
        consistency_checked >= 100,
        "need at least 100 threshold/fixed-K instances, ran {consistency_checked}"
    );

    // Permutation equivariance on tie-free matrices: conjugating the matrix
    // by a permutation permutes the partition the same way.
    for round in 0..20 {
        let n = 3 + round % 6; // 3..=8
        let d = random_matrix(n, &mut rng, |r| r.random_range(0.05..2.0));
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let mut rows = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                rows[perm[i]][perm[j]] = d.get(i, j);
            }
        }
        let conjugated = DistanceMatrix::from_rows(rows).expect("conjugated matrix");
        for linkage in linkages {
            for k in 1..=n {
                let base = agglomerate(&d, linkage, StopRule::NumClusters(k)).expect("base");
                let perm_run =
                    agglomerate(&conjugated, linkage, StopRule::NumClusters(k)).expect("perm");
                // Map the permuted labels back through the permutation and
                // compare as unlabeled partitions.
                let mut mapped = vec![0usize; n];
                for i in 0..n {
                    mapped[i] = perm_run.labels[perm[i]];
                }
                assert_eq!(
                    partition_of(&base.labels),
                    partition_of(&mapped),
                    "equivariance at k={k}, n={n}, {linkage:?}"
                );
            }
        }
    }

    eprintln!(
        "criterion 2 (clustering fidelity, {matrices_checked} matrices × 3 linkages, \
         {consistency_checked} threshold instances): PASS"
    );
}

// ===========================================================================
// Criterion 3 — silhouette score and CV match double-loop oracles
// ===========================================================================

fn oracle_silhouette(d: &DistanceMatrix, labels: &[usize]) -> f64 {
    let n = labels.len();
    let k = labels.iter().max().unwrap() + 1;
    let mut total = 0.0;
    for i in 0..n {
        let own = labels[i];
        let own_size = labels.iter().filter(|&&c| c == own).count();
        if own_size == 1 {
            continue; // singleton contributes 0
        }
        let mut a = 0.0;
        for j in 0..n {
            if j != i && labels[j] == own {
                a += d.get(i, j);
            }
        }
        a /= (own_size - 1) as f64;
        let mut b = f64::INFINITY;
        for other in 0..k {
            if other == own {
                continue;
            }
            let mut sum = 0.0;
            let mut count = 0usize;
            for j in 0..n {
                if labels[j] == other {
                    sum += d.get(i, j);
                    count += 1;
                }
            }
            let mean = sum / count as f64;
            if mean < b {
                b = mean;
            }
        }
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    total / n as f64
}

fn oracle_cv(d: &DistanceMatrix) -> f64 {
    let n = d.n();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += d.get(i, j);
            }
        }
    }
    let count = (n * (n - 1)) as f64;
    let mean = sum / count;
    if mean == 0.0 {
        return 0.0;
    }
    let mut sq = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let dev = d.get(i, j) - mean;
                sq += dev * dev;
            }
        }
    }
    (sq / count).sqrt() / mean
}

#[test]
fn c3_silhouette_and_cv_match_double_loop_oracles() {
    let mut rng = ChaCha12Rng::seed_from_u64(0x5170);
    let mut pairs_checked = 0usize;
    for round in 0..100 {
        let n = 3 + round % 8; // 3..=10
        let d = random_matrix(n, &mut rng, |r| r.random_range(0.1..2.0));
        let k = 2 + round % (n - 1); // 2..=n
        let labels = random_labels(n, k, &mut rng);

        let got = silhouette_score(&d, &labels).expect("silhouette");
        let want = oracle_silhouette(&d, &labels);
        assert!(
            (got - want).abs() <= 1e-12,
            "silhouette round {round}: {got} vs oracle {want}"
        );

        let got_cv = coefficient_of_variation(&d).expect("cv");
        let want_cv = oracle_cv(&d);
        assert!(
            (got_cv - want_cv).abs() <= 1e-12,
            "cv round {round}: {got_cv} vs oracle {want_cv}"
        );
        pairs_checked += 1;
    }
    assert_eq!(pairs_checked, 100);

    // Constructed case: two 3-element clusters, every within-cluster
    // distance 0.1, every cross-cluster distance 1.0. Each element has
    // a = 0.1, b = 1.0, s = 0.9 — and so does the mean.
    let mut rows = vec![vec![0.0; 6]; 6];
    for i in 0..6 {
        for j in 0..6 {
            if i != j {
                rows[i][j] = if (i < 3) == (j < 3) { 0.1 } else { 1.0 };
            }
        }
    }
    let d = DistanceMatrix::from_rows(rows).expect("block matrix");
    let labels = [0, 0, 0, 1, 1, 1];
    let score = silhouette_score(&d, &labels).expect("silhouette");
    assert_eq!(score, (1.0 - 0.1) / 1.0, "constructed silhouette must be exact");
    assert!((score - 0.9).abs() < 1e-15);

    // Constructed case: off-diagonal multiset {1,1,1,1,4,4} → mean 2,
    // population variance 2, CV = √2/2 ≈ 0.7071.
    let rows = vec![vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 4.0], vec![1.0, 4.0, 0.0]];
    let d = DistanceMatrix::from_rows(rows).expect("cv matrix");
    let cv = coefficient_of_variation(&d).expect("cv");
    assert_eq!(cv, 2f64.sqrt() / 2.0, "constructed CV must be exact");
    assert!((cv - 0.7071).abs() < 1e-4);

    eprintln!("criterion 3 (silhouette & CV oracles, {pairs_checked} random pairs): PASS");
}

// ===========================================================================
// Criterion 4 — automatic K recovery on well-separated synthetic data
// ===========================================================================

#[test]
fn c4_auto_k_recovers_planted_cluster_count() {
    // Class count matters here: the signature distance can only see two
    // clients as similar through classes they *both* hold, and Dirichlet
    // α = 0.1 starves each client down to a small class subset. With many
    // classes every same-group pair still shares a few, so the planted
    // structure stays visible through the skew.
    let config = ExperimentConfig {
        label: None,
        source: DataSource::Synthetic {
            spec: SyntheticSpec {
                num_latent_clusters: 3,
                num_classes: 36,
                dim: 108,
                samples_per_class_per_cluster: 100,
                class_mean_separation: 100.0,
                within_class_stddev: 1.0,
                seed: 0,
            },
            conflicting_labels: false,
        },
        partition: Some(PartitionSpec {
            num_clients: 20,
            dirichlet_alpha: 0.1,
            min_samples_per_client: 1,
            train_fraction: 0.8,
            seed: 0,
        }),
        distance: DistanceParams::default(),
        linkage: Linkage::Average,
        clustering: ClusteringMode::AutoK { params: AutoKConfig::default() },
        signature: SignatureMode::ClassAware,
        strategy: Strategy::FedAvg,
        train: TrainConfig::default(),
        seeds: vec![0, 1, 2, 3, 4],
        out_dir: None,
    };

    let mut recovered = 0usize;
    for seed in 0..5u64 {
        let data = generate_data(&config, seed, None).expect("generate");
        let (shards, truth) = partition_data(&config, seed, &data, None).expect("partition");
        let truth = truth.expect("synthetic source has ground truth");
        let clustered = cluster_clients(&config, &shards, seed, None).expect("cluster");
        let report = clustered.autok.expect("auto-K mode ran");
        if report.selected_k == 3 {
            recovered += 1;
            let ari = adjusted_rand_index(&clustered.report.assignment.labels, &truth)
                .expect("ari");
            assert_eq!(
                ari, 1.0,
                "seed {seed}: K=3 selected but assignment disagrees with ground truth"
            );
        }
    }
    assert!(recovered >= 4, "auto-K found K=3 in only {recovered}/5 seeds");

    // Window boundaries: a CV of exactly 0.35 falls in the middle window,
    // exactly 0.70 in the high window.
    let windows = AutoKConfig::default();
    assert_eq!(windows.window_for_cv(0.35), &[2, 3, 4, 5, 6]);
    assert_eq!(windows.window_for_cv(0.70), &[3, 4, 5, 6, 7, 8, 9, 10]);
    assert_eq!(windows.window_for_cv(0.3499), &[1, 2, 3]);

    eprintln!("criterion 4 (auto-K recovery, {recovered}/5 seeds at K=3, ARI 1.0): PASS");
}

// ===========================================================================
// Criterion 5 — federated-engine identities
// ===========================================================================

/// Neumaier-compensated sum: the oracle for aggregation round-off.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[test]
fn c5_federation_identities_hold() {
    // (a) FedProx with μ = 0 is FedAvg, bit for bit, over 100 rounds —
    // under partial participation and for both model shapes.
    for (model, participation) in [
        (ModelKind::SoftmaxLinear, 0.7),
        (ModelKind::OneHidden { hidden: 6 }, 1.0),
    ] {
        let shards = make_shards(4, 5, 3, 24, 8, 0xFEED);
        let labels = vec![0usize; 4];
        let config = TrainConfig {
            rounds: 100,
            local_epochs: 1,
            batch_size: 8,
            learning_rate: 0.2,
            participation_fraction: participation,
            prox_mu: 0.0,
            model,
            seed: 11,
        };
        let avg = run_federation(&shards, &labels, &config, Strategy::FedAvg).expect("fedavg");
        let prox = run_federation(&shards, &labels, &config, Strategy::FedProx).expect("fedprox");
        assert_eq!(avg, prox, "μ=0 FedProx diverged from FedAvg for {model:?}");
    }

    // (b) A K=1 clustered experiment and a no-clustering global experiment
    // are the same run, bit for bit.
    let base = ExperimentConfig {
        label: None,
        source: DataSource::Synthetic {
            spec: SyntheticSpec {
                num_latent_clusters: 2,
                num_classes: 3,
                dim: 6,
                samples_per_class_per_cluster: 20,
                class_mean_separation: 5.0,
                within_class_stddev: 1.0,
                seed: 0,
            },
            conflicting_labels: false,
        },
        partition: Some(PartitionSpec {
            num_clients: 5,
            dirichlet_alpha: 1.0,
            min_samples_per_client: 3,
            train_fraction: 0.8,
            seed: 0,
        }),
        distance: DistanceParams::default(),
        linkage: Linkage::Average,
        clustering: ClusteringMode::FixedK { k: 1 },
        signature: SignatureMode::ClassAware,
        strategy: Strategy::FedAvg,
        train: TrainConfig { rounds: 10, batch_size: 8, ..TrainConfig::default() },
        seeds: vec![0, 1],
        out_dir: None,
    };
    let mut global = base.clone();
    global.clustering = ClusteringMode::Global;
    let k1_summary = run_experiment(&base).expect("k=1 run");
    let global_summary = run_experiment(&global).expect("global run");
    assert_eq!(k1_summary.best, global_summary.best);
    assert_eq!(k1_summary.per_round, global_summary.per_round);
    for (a, b) in k1_summary.seeds.iter().zip(&global_summary.seeds) {
        assert_eq!(a.rounds, b.rounds, "seed {}: K=1 and global rounds differ", a.seed);
        assert_eq!(a.assignment.assignment.labels, b.assignment.assignment.labels);
    }

    // (c) K = N: every cluster is one client, and each cluster's model is
    // bit-identical to a federation containing only that client — no
    // parameter flow crosses client boundaries.
    let shards = make_shards(5, 4, 3, 18, 6, 0xBEEF);
    let labels: Vec<usize> = (0..5).collect();
    let config = TrainConfig {
        rounds: 12,
        batch_size: 6,
        prox_mu: 0.0,
        ..TrainConfig::default()
    };
    let joint = run_federation(&shards, &labels, &config, Strategy::FedAvg).expect("k=n run");
    for k in 0..5 {
        let solo_shards = vec![shards[k].clone()];
        let solo =
            run_federation(&solo_shards, &[0], &config, Strategy::FedAvg).expect("solo run");
        assert_eq!(
            joint.cluster_models[k], solo.cluster_models[0],
            "client {k}: joint K=N model differs from isolated training"
        );
        for (jr, sr) in joint.rounds.iter().zip(&solo.rounds) {
            let joint_eval = jr.clients.iter().find(|e| e.client_id == k).expect("eval");
            let solo_eval = &sr.clients[0];
            assert_eq!(joint_eval.metrics, solo_eval.metrics, "client {k} round {}", jr.round);
        }
    }

    // (d) Aggregation matches a compensated-summation oracle.
    let mut rng = ChaCha12Rng::seed_from_u64(0xA66);
    let shape = ModelShape::SoftmaxLinear { dim: 10, num_classes: 4 };
    for round in 0..100 {
        let m = 1 + round % 8;
        let models: Vec<ModelParams> = (0..m)
            .map(|_| ModelParams {
                shape,
                values: (0..shape.num_params()).map(|_| rng.random_range(-3.0..3.0)).collect(),
            })
            .collect();
        let weights: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..4.0)).collect();
        let got = aggregate(&models, &weights).expect("aggregate");
        let total = compensated_sum(weights.iter().copied());
        for coord in 0..shape.num_params() {
            let want = compensated_sum(
                models.iter().zip(&weights).map(|(model, &w)| w * model.values[coord]),
            ) / total;
            assert!(
                (got.values[coord] - want).abs() <= 1e-12,
                "round {round}: coordinate {coord} {} vs compensated {}",
                got.values[coord],
                want
            );
        }
    }

    // (e) Analytic gradients match central finite differences on 50 random
    // draws across both model shapes.
    let mut draws = 0usize;
    for round in 0..50 {
        let shape = if round % 2 == 0 {
            ModelShape::SoftmaxLinear { dim: 5, num_classes: 3 }
        } else {
            ModelShape::OneHidden { dim: 4, hidden: 3, num_classes: 3 }
        };
        let mut params = ModelParams {
            shape,
            values: (0..shape.num_params()).map(|_| rng.random_range(-0.5..0.5)).collect(),
        };
        let mut data = EmbeddingDataset::new(shape.dim(), shape.num_classes()).expect("data");
        for s in 0..6 {
            let x: Vec<f64> = (0..shape.dim()).map(|_| rng.random_range(-1.5..1.5)).collect();
            data.push(&x, s % shape.num_classes()).expect("sample");
        }
        let batch: Vec<usize> = (0..6).collect();
        let (_, grad) = params.batch_loss_grad(&data, &batch);
        let h = 1e-5;
        for coord in 0..shape.num_params() {
            let orig = params.values[coord];
            params.values[coord] = orig + h;
            let (up, _) = params.batch_loss_grad(&data, &batch);
            params.values[coord] = orig - h;
            let (down, _) = params.batch_loss_grad(&data, &batch);
            params.values[coord] = orig;
            let fd = (up - down) / (2.0 * h);
            let denom = grad[coord].abs().max(fd.abs()).max(1e-8);
            assert!(
                ((grad[coord] - fd) / denom).abs() <= 1e-6,
                "draw {round}: coordinate {coord} analytic {} vs finite difference {fd}",
                grad[coord]
            );
        }
        draws += 1;
    }
    assert_eq!(draws, 50);

    eprintln!("criterion 5 (federation identities, all five): PASS");
}

// ===========================================================================
// Criterion 6 — end-to-end ordering on constructed tasks
// ===========================================================================

#[test]
fn c6_clustered_training_beats_global_on_conflicted_task() {
    // Task: three latent groups draw from the same class locations but
    // permute the labels, so one global model cannot fit two groups at once
    // while per-group training is trivially separable.
    let full = ExperimentConfig {
        label: Some("clustered".into()),
        source: DataSource::Synthetic {
            spec: SyntheticSpec {
                num_latent_clusters: 3,
                num_classes: 3,
                dim: 6,
                samples_per_class_per_cluster: 40,
                class_mean_separation: 8.0,
                within_class_stddev: 1.0,
                seed: 0,
            },
            conflicting_labels: true,
        },
        partition: Some(PartitionSpec {
            num_clients: 12,
            dirichlet_alpha: 2.0,
            min_samples_per_client: 6,
            train_fraction: 0.8,
            seed: 0,
        }),
        distance: DistanceParams::default(),
        linkage: Linkage::Average,
        clustering: ClusteringMode::AutoK { params: AutoKConfig::default() },
        signature: SignatureMode::ClassAware,
        strategy: Strategy::FedAvg,
        train: TrainConfig {
            rounds: 30,
            batch_size: 16,
            prox_mu: 0.0,
            ..TrainConfig::default()
        },
        seeds: vec![0, 1, 2, 3, 4],
        out_dir: None,
    };
    let mut no_overlap = full.clone();
    no_overlap.label = Some("no-overlap-term".into());
    no_overlap.distance.overlap_scaling = false;
    let mut global = full.clone();
    global.label = Some("global".into());
    global.clustering = ClusteringMode::Global;

    let full_acc = run_experiment(&full).expect("clustered run").best.accuracy.mean;
    let ablated_acc = run_experiment(&no_overlap).expect("ablated run").best.accuracy.mean;
    let global_acc = run_experiment(&global).expect("global run").best.accuracy.mean;

    assert!(full_acc >= 0.90, "clustered accuracy {full_acc} below 0.90");
    assert!(global_acc <= 0.60, "global accuracy {global_acc} above 0.60");
    assert!(
        full_acc >= global_acc + 0.25,
        "clustered {full_acc} not 0.25 above global {global_acc}"
    );
    assert!(
        full_acc >= ablated_acc - 1e-12,
        "clustered {full_acc} below overlap-ablated {ablated_acc}"
    );

    // Low-overlap variant: groups share one common class; each group's
    // second class sits at the *same* location but under a different label.
    // Without the overlap multiplier the cross-group distances collapse into
    // the within-group range, clustering degrades, and the conflicting
    // labels poison training — the ablation must lose ground here.
    let low = ExperimentConfig {
        label: Some("clustered".into()),
        source: DataSource::LowOverlap {
            spec: LowOverlapSpec {
                num_latent_clusters: 3,
                clients_per_cluster: 3,
                dim: 6,
                common_samples_per_client: 30,
                specific_samples_per_client: 30,
                class_mean_separation: 6.0,
                within_class_stddev: 0.8,
                common_scale: 1.0,
                seed: 0,
            },
        },
        partition: None,
        distance: DistanceParams::default(),
        linkage: Linkage::Average,
        clustering: ClusteringMode::AutoK { params: AutoKConfig::default() },
        signature: SignatureMode::ClassAware,
        strategy: Strategy::FedAvg,
        train: TrainConfig {
            rounds: 30,
            batch_size: 16,
            prox_mu: 0.0,
            ..TrainConfig::default()
        },
        seeds: vec![0, 1, 2, 3, 4],
        out_dir: None,
    };
    let mut low_ablated = low.clone();
    low_ablated.label = Some("no-overlap-term".into());
    low_ablated.distance.overlap_scaling = false;

    let low_acc = run_experiment(&low).expect("low-overlap run").best.accuracy.mean;
    let low_ablated_acc =
        run_experiment(&low_ablated).expect("low-overlap ablated run").best.accuracy.mean;
    assert!(
        low_acc > low_ablated_acc,
        "removing the overlap term should degrade the low-overlap task: \
         full {low_acc} vs ablated {low_ablated_acc}"
    );

    eprintln!(
        "criterion 6 (end-to-end ordering: clustered {full_acc:.4} vs ablated {ablated_acc:.4} \
         vs global {global_acc:.4}; low-overlap {low_acc:.4} vs ablated {low_ablated_acc:.4}): PASS"
    );
}

// ===========================================================================
// Criterion 7 — CLI re-runs are byte-identical, serial and parallel
// ===========================================================================

fn snapshot_tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).expect("readable dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                walk(&path, root, out);
            } else {
                let rel = path.strip_prefix(root).expect("under root").to_path_buf();
                out.insert(rel, std::fs::read(&path).expect("readable file"));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn assert_trees_equal(before: &BTreeMap<PathBuf, Vec<u8>>, after: &BTreeMap<PathBuf, Vec<u8>>, what: &str) {
    let missing: Vec<_> = before.keys().filter(|k| !after.contains_key(*k)).collect();
    let added: Vec<_> = after.keys().filter(|k| !before.contains_key(*k)).collect();
    assert!(
        missing.is_empty() && added.is_empty(),
        "{what}: file sets differ (missing {missing:?}, added {added:?})"
    );
    for (path, bytes) in before {
        assert_eq!(bytes, &after[path], "{what}: {} changed between runs", path.display());
    }
}

fn run_cli(args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_fedclust"))
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        status.status.success(),
        "fedclust {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&status.stderr)
    );
}

#[test]
fn c7_cli_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().expect("temp dir");
    let config = ExperimentConfig {
        label: None,
        source: DataSource::Synthetic {
            spec: SyntheticSpec {
                num_latent_clusters: 2,
                num_classes: 3,
                dim: 6,
                samples_per_class_per_cluster: 20,
                class_mean_separation: 6.0,
                within_class_stddev: 1.0,
                seed: 0,
            },
            conflicting_labels: false,
        },
        partition: Some(PartitionSpec {
            num_clients: 6,
            dirichlet_alpha: 1.0,
            min_samples_per_client: 2,
            train_fraction: 0.8,
            seed: 0,
        }),
        distance: DistanceParams::default(),
        linkage: Linkage::Average,
        clustering: ClusteringMode::AutoK { params: AutoKConfig::default() },
        signature: SignatureMode::ClassAware,
        strategy: Strategy::FedAvg,
        train: TrainConfig {
            rounds: 3,
            batch_size: 8,
            participation_fraction: 0.67,
            prox_mu: 0.0,
            ..TrainConfig::default()
        },
        seeds: vec![0, 1],
        out_dir: None,
    };
    let config_path = dir.path().join("experiment.json");
    std::fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap())
        .expect("config written");
    let cfg = config_path.to_str().unwrap();

    // Stage subcommands: run the pipeline once (parallel), snapshot, then
    // re-run every stage twice more — once parallel, once serial — and
    // demand the artifact tree never changes by a byte.
    let stage_root = dir.path().join("stages");
    let stages = ["generate", "partition", "signatures", "distances", "autok", "cluster", "train"];
    let root_arg = stage_root.to_str().unwrap().to_owned();
    for stage in stages {
        run_cli(&[stage, "--config", cfg, "--out", &root_arg]);
    }
    let first = snapshot_tree(&stage_root);
    for stage in stages {
        run_cli(&[stage, "--config", cfg, "--out", &root_arg]);
    }
    assert_trees_equal(&first, &snapshot_tree(&stage_root), "parallel stage re-run");
    for stage in stages {
        run_cli(&["--serial", stage, "--config", cfg, "--out", &root_arg]);
    }
    assert_trees_equal(&first, &snapshot_tree(&stage_root), "serial stage re-run");

    // Full `run`: same protocol over the whole multi-seed experiment.
    let run_root = dir.path().join("run");
    let run_arg = run_root.to_str().unwrap().to_owned();
    run_cli(&["run", "--config", cfg, "--out", &run_arg]);
    let first_run = snapshot_tree(&run_root);
    run_cli(&["run", "--config", cfg, "--out", &run_arg]);
    assert_trees_equal(&first_run, &snapshot_tree(&run_root), "parallel run re-run");
    run_cli(&["--serial", "run", "--config", cfg, "--out", &run_arg]);
    assert_trees_equal(&first_run, &snapshot_tree(&run_root), "serial run re-run");

    // `compare`: two configs over the same source, re-run both ways.
    let cmp_root = dir.path().join("cmp");
    std::fs::create_dir_all(&cmp_root).expect("cmp dir");
    let mut left = config.clone();
    left.label = Some("auto-k".into());
    left.out_dir = Some(cmp_root.join("auto-k"));
    let mut right = config.clone();
    right.label = Some("fixed-2".into());
    right.clustering = ClusteringMode::FixedK { k: 2 };
    right.out_dir = Some(cmp_root.join("fixed-2"));
    let left_path = dir.path().join("left.json");
    let right_path = dir.path().join("right.json");
    std::fs::write(&left_path, serde_json::to_string_pretty(&left).unwrap()).unwrap();
    std::fs::write(&right_path, serde_json::to_string_pretty(&right).unwrap()).unwrap();
    let cmp_arg = cmp_root.to_str().unwrap().to_owned();
    let compare_args = [
        "compare",
        "--config",
        left_path.to_str().unwrap(),
        "--config",
        right_path.to_str().unwrap(),
        "--out",
        &cmp_arg,
    ];
    run_cli(&compare_args);
    let first_cmp = snapshot_tree(&cmp_root);
    run_cli(&compare_args);
    assert_trees_equal(&first_cmp, &snapshot_tree(&cmp_root), "parallel compare re-run");
    let mut serial_args = vec!["--serial"];
    serial_args.extend_from_slice(&compare_args);
    run_cli(&serial_args);
    assert_trees_equal(&first_cmp, &snapshot_tree(&cmp_root), "serial compare re-run");

    eprintln!("criterion 7 (CLI determinism across re-runs, serial and parallel): PASS");
}

// ===========================================================================
// Criterion 8 — classification metrics match counting oracles
// ===========================================================================

/// First index of the row maximum (strict `>` scan = lowest-index tie rule).
fn oracle_argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for k in 1..row.len() {
        if row[k] > row[best] {
            best = k;
        }
    }
    best
}

/// Macro-F1 from an explicit confusion matrix, averaged over classes with
/// support, ascending.
fn oracle_macro_f1(scores: &[Vec<f64>], labels: &[usize]) -> f64 {
    let classes = scores[0].len();
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (row, &label) in scores.iter().zip(labels) {
        confusion[label][oracle_argmax(row)] += 1;
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for c in 0..classes {
        let support: usize = confusion[c].iter().sum();
        if support == 0 {
            continue;
        }
        let tp = confusion[c][c];
        let fp: usize = (0..classes).filter(|&r| r != c).map(|r| confusion[r][c]).sum();
        let fn_ = support - tp;
        sum += 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64;
        count += 1;
    }
    sum / count as f64
}

/// Macro one-vs-rest AUC by explicit win/tie pair counting.
fn oracle_macro_auc(scores: &[Vec<f64>], labels: &[usize]) -> Option<f64> {
    let classes = scores[0].len();
    let mut sum = 0.0;
    let mut count = 0usize;
    for c in 0..classes {
        let pos: Vec<f64> = scores
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == c)
            .map(|(row, _)| row[c])
            .collect();
        let neg: Vec<f64> = scores
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l != c)
            .map(|(row, _)| row[c])
            .collect();
        if pos.is_empty() || neg.is_empty() {
            continue;
        }
        let mut wins = 0.0;
        for &p in &pos {
            for &q in &neg {
                if p > q {
                    wins += 1.0;
                } else if p == q {
                    wins += 0.5;
                }
            }
        }
        sum += wins / (pos.len() * neg.len()) as f64;
        count += 1;
    }
    (count > 0).then(|| sum / count as f64)
}

#[test]
fn c8_metrics_match_counting_oracles() {
    let mut rng = ChaCha12Rng::seed_from_u64(0x3E7);
    let mut instances = 0usize;
    let mut undefined_auc_seen = false;
    for round in 0..200 {
        let n = 1 + round % 40;
        let classes = 2 + round % 4;
        // Quantized scores make exact ties common, exercising both the
        // argmax tie rule and the AUC tie term.
        let quantize = round % 3 == 0;
        let scores: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..classes)
                    .map(|_| {
                        let v: f64 = rng.random_range(0.05..1.0);
                        if quantize { (v * 4.0).ceil() / 4.0 } else { v }
                    })
                    .collect();
                let total: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / total).collect()
            })
            .collect();
        // Occasionally single-class labels so macro AUC must be undefined.
        let labels: Vec<usize> = if round % 17 == 0 {
            vec![rng.random_range(0..classes); n]
        } else {
            (0..n).map(|_| rng.random_range(0..classes)).collect()
        };

        let report = evaluate(&scores, &labels).expect("metrics evaluate");

        let correct = scores
            .iter()
            .zip(&labels)
            .filter(|(row, &l)| oracle_argmax(row) == l)
            .count();
        assert_eq!(report.accuracy, correct as f64 / n as f64, "round {round}: accuracy");

        assert_eq!(
            report.macro_f1,
            oracle_macro_f1(&scores, &labels),
            "round {round}: macro-F1 vs confusion-matrix oracle"
        );

        match (report.macro_auc, oracle_macro_auc(&scores, &labels)) {
            (None, None) => undefined_auc_seen = true,
            (Some(got), Some(want)) => assert!(
                (got - want).abs() <= 1e-12,
                "round {round}: macro AUC {got} vs pair-counting oracle {want}"
            ),
            (got, want) => panic!("round {round}: AUC definedness mismatch {got:?} vs {want:?}"),
        }
        instances += 1;
    }
    assert_eq!(instances, 200);
    assert!(undefined_auc_seen, "no instance exercised the undefined-AUC convention");

    // A uniform predictor's log-loss is exactly ln(C), up to rounding.
    for classes in [2usize, 3, 4, 8] {
        let scores = vec![vec![1.0 / classes as f64; classes]; 9];
        let labels: Vec<usize> = (0..9).map(|i| i % classes).collect();
        let report = evaluate(&scores, &labels).expect("uniform evaluate");
        assert!(
            (report.loss - (classes as f64).ln()).abs() <= 1e-9,
            "uniform predictor over {classes} classes: loss {} vs ln C {}",
            report.loss,
            (classes as f64).ln()
        );
    }

    eprintln!("criterion 8 (metric oracles, {instances} random instances): PASS");
}
