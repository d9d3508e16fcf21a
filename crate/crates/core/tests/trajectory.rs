use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use txdrift::embed::EmbeddingSnapshot;
use txdrift::shift::{shift_series, Metric};
use txdrift::trajectory::{smooth_embeddings, SmoothOptions};

fn jitter_snapshots(nodes: usize, dim: usize, len: usize, sigma: f64, seed: u64) -> Vec<EmbeddingSnapshot> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..nodes)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let noise = Normal::new(0.0, sigma).unwrap();
    (0..len)
        .map(|t| {
            EmbeddingSnapshot::from_rows(
                t,
                dim,
                centers.iter().enumerate().map(|(i, c)| {
                    (
                        format!("n{i:03}"),
                        c.iter().map(|x| x + noise.sample(&mut rng)).collect::<Vec<f64>>(),
                    )
                }),
            )
            .unwrap()
        })
        .collect()
}

fn variance(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

fn cosine_shifts(snaps: &[EmbeddingSnapshot]) -> Vec<f64> {
    shift_series(snaps, Metric::Cosine, 1)
        .unwrap()
        .values()
        .flat_map(|s| s.defined().map(|(_, v)| v).collect::<Vec<_>>())
        .collect()
}

#[test]
fn jitter_around_fixed_point_is_damped() {
    let snaps = jitter_snapshots(40, 8, 20, 0.1, 1);
    let smoothed = smooth_embeddings(&snaps, &SmoothOptions::default()).unwrap();
    let raw = cosine_shifts(&snaps);
    let sm = cosine_shifts(&smoothed.snapshots);
    assert!(variance(&sm) < variance(&raw), "{} vs {}", variance(&sm), variance(&raw));
}

fn permute(snaps: &[EmbeddingSnapshot], perm: &[usize]) -> Vec<EmbeddingSnapshot> {
    snaps
        .iter()
        .map(|s| {
            EmbeddingSnapshot::from_rows(
                s.timestamp_index,
                s.dim(),
                s.ids()
                    .iter()
                    .enumerate()
                    .map(|(i, id)| (id.clone(), perm.iter().map(|&j| s.row(i)[j]).collect::<Vec<f64>>())),
            )
            .unwrap()
        })
        .collect()
}

fn check_permutation(normalize: bool, tol: f64) {
    let snaps = jitter_snapshots(6, 5, 8, 0.2, 2);
    let mut perm: Vec<usize> = (0..5).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(3));
    let opts = SmoothOptions {
        normalize,
        ..Default::default()
    };
    let direct = smooth_embeddings(&snaps, &opts).unwrap();
    let via = smooth_embeddings(&permute(&snaps, &perm), &opts).unwrap();
    for (a, b) in direct.snapshots.iter().zip(&via.snapshots) {
        for id in a.ids() {
            let (va, vb) = (a.vector(id).unwrap(), b.vector(id).unwrap());
            for (k, &j) in perm.iter().enumerate() {
                assert!((va[j] - vb[k]).abs() <= tol, "{} vs {}", va[j], vb[k]);
            }
        }
    }
}

#[test]
fn dimension_permutation_commutes_unnormalized() {
    check_permutation(false, 0.0);
}

#[test]
fn dimension_permutation_commutes_normalized() {
    // Step scales sum over components, so the order of addition changes.
    check_permutation(true, 1e-12);
}
