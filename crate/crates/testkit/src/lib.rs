//! Seeded synthetic data and reference oracles for the test suites.
//!
//! The oracles here are deliberately naive: f64 accumulation, full scans,
//! no shared code with the engine.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` rows of `dim` floats uniform in [0, 1).
pub fn uniform_rows(n: usize, dim: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = rng(seed);
    (0..n).map(|_| (0..dim).map(|_| rng.gen::<f32>()).collect()).collect()
}

pub fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum()
}

/// Σ_m w_m · ‖q_m − o_m‖²
pub fn weighted_sq<V: AsRef<[f32]>>(q: &[V], o: &[V], w: &[f64]) -> f64 {
    q.iter()
        .zip(o)
        .zip(w)
        .map(|((a, b), w)| w * sq_dist(a.as_ref(), b.as_ref()))
        .sum()
}

/// Indices of the `k` smallest `dist(i)` for `i < n`, ties by index.
pub fn exact_topk(n: usize, k: usize, dist: impl Fn(usize) -> f64) -> Vec<u32> {
    let mut all: Vec<(f64, usize)> = (0..n).map(|i| (dist(i), i)).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|(_, i)| i as u32).collect()
}

pub fn recall(truth: &[u32], got: &[u32]) -> f64 {
    if truth.is_empty() {
        return 1.0;
    }
    truth.iter().filter(|t| got.contains(t)).count() as f64 / truth.len() as f64
}

pub fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Hashed token + character-trigram features, accumulated and normalized.
pub fn hash_ngram_reference(text: &str, d: usize) -> Vec<f64> {
    let lower = text.to_lowercase();
    let mut out = vec![0.0f64; d];
    let tokens = lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty());
    for token in tokens {
        let chars: Vec<char> = token.chars().collect();
        let mut features = vec![token.to_string()];
        if chars.len() >= 3 {
            for w in chars.windows(3) {
                features.push(w.iter().collect());
            }
        }
        for f in features {
            let h = fnv1a64(f.as_bytes());
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            out[(h % d as u64) as usize] += sign;
        }
    }
    let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        out.iter_mut().for_each(|x| *x /= norm);
    }
    out
}

/// Per-modality vectors of one triplet: `[query, positive, negative]`.
pub type RawTriplet = [Vec<Vec<f32>>; 3];

/// Modality 0 puts the positive close to the query and the negative far;
/// modality 1 does the opposite.
pub fn adversarial_triplets(n: usize, dim: usize, seed: u64) -> Vec<RawTriplet> {
    let mut rng = rng(seed);
    let near_far = |base: &[f32], scale: f32, rng: &mut ChaCha8Rng| -> Vec<f32> {
        base.iter().map(|x| x + scale * (rng.gen::<f32>() - 0.5)).collect()
    };
    (0..n)
        .map(|_| {
            let q0: Vec<f32> = (0..dim).map(|_| rng.gen()).collect();
            let q1: Vec<f32> = (0..dim).map(|_| rng.gen()).collect();
            let p0 = near_far(&q0, 0.2, &mut rng);
            let n0 = near_far(&q0, 1.0, &mut rng);
            let p1 = near_far(&q1, 1.0, &mut rng);
            let n1 = near_far(&q1, 0.2, &mut rng);
            [vec![q0, q1], vec![p0, p1], vec![n0, n1]]
        })
        .collect()
}

/// Two-modality data where the ground-truth metric weights modality 0 at 0.8,
/// and modality 1 carries the negated modality-0 cluster code so that the
/// joint mean cancels it.
///
/// Object `i` belongs to group `(a, b) = (i % groups, (i / groups) % groups)`:
///
/// ```text
/// m0 = P[a] + noise
/// m1 = Q[b] − P[a] + noise
/// (m0 + m1) / 2 ≈ Q[b] / 2
/// ```
pub struct SkewDataset {
    pub dim: usize,
    pub weights: [f64; 2],
    pub objects: Vec<[Vec<f32>; 2]>,
    pub queries: Vec<[Vec<f32>; 2]>,
}

impl SkewDataset {
    pub fn generate(n: usize, queries: usize, seed: u64) -> Self {
        const DIM: usize = 32;
        const GROUPS: usize = 10;
        const NOISE: f32 = 0.05;
        let mut rng = rng(seed);
        let centers = |rng: &mut ChaCha8Rng| -> Vec<Vec<f32>> {
            (0..GROUPS).map(|_| (0..DIM).map(|_| rng.gen::<f32>()).collect()).collect()
        };
        let p = centers(&mut rng);
        let q = centers(&mut rng);
        let sample = |a: usize, b: usize, rng: &mut ChaCha8Rng| -> [Vec<f32>; 2] {
            let m0 = (0..DIM).map(|j| p[a][j] + NOISE * (rng.gen::<f32>() - 0.5)).collect();
            let m1 = (0..DIM)
                .map(|j| q[b][j] - p[a][j] + NOISE * (rng.gen::<f32>() - 0.5))
                .collect();
            [m0, m1]
        };
        let objects = (0..n).map(|i| sample(i % GROUPS, (i / GROUPS) % GROUPS, &mut rng)).collect();
        let queries = (0..queries)
            .map(|_| {
                let (a, b) = (rng.gen_range(0..GROUPS), rng.gen_range(0..GROUPS));
                sample(a, b, &mut rng)
            })
            .collect();
        Self {
            dim: DIM,
            weights: [0.8, 0.2],
            objects,
            queries,
        }
    }

    /// Exact top-k under the ground-truth weights.
    pub fn truth(&self, query: &[Vec<f32>; 2], k: usize) -> Vec<u32> {
        exact_topk(self.objects.len(), k, |i| weighted_sq(query, &self.objects[i], &self.weights))
    }

    /// Exact top-k in the joint-mean space.
    pub fn joint_truth(&self, query: &[Vec<f32>; 2], k: usize) -> Vec<u32> {
        let mean = |v: &[Vec<f32>; 2]| -> Vec<f32> { v[0].iter().zip(&v[1]).map(|(a, b)| (a + b) / 2.0).collect() };
        let jq = mean(query);
        exact_topk(self.objects.len(), k, |i| sq_dist(&jq, &mean(&self.objects[i])))
    }

    /// Checks the construction does what it claims: even an exact search in
    /// the joint space misses most of the weighted top-k.
    pub fn check(&self, k: usize) -> Result<f64, String> {
        let r = mean(self.queries.iter().map(|q| recall(&self.truth(q, k), &self.joint_truth(q, k))));
        if r > 0.5 {
            return Err(format!("joint-space exact recall {r:.3} leaves no room for the JE gap"));
        }
        Ok(r)
    }

    /// Rows concatenating both modalities.
    pub fn rows(&self) -> Vec<Vec<f32>> {
        self.objects.iter().map(|o| [o[0].as_slice(), o[1].as_slice()].concat()).collect()
    }
}

/// Writes a JSON-lines manifest of inline-vector objects with ids `obj-00000`, ...
pub fn write_vector_manifest(
    dir: &Path,
    modalities: &[&str],
    objects: &[Vec<Vec<f32>>],
) -> PathBuf {
    let path = dir.join("manifest.jsonl");
    let mut f = fs::File::create(&path).expect("create manifest");
    for (i, obj) in objects.iter().enumerate() {
        let mods: serde_json::Map<String, serde_json::Value> = modalities
            .iter()
            .zip(obj)
            .map(|(name, v)| (name.to_string(), serde_json::json!({ "vector": v })))
            .collect();
        let record = serde_json::json!({ "id": object_id(i), "modalities": mods });
        writeln!(f, "{record}").expect("write manifest");
    }
    path
}

pub fn object_id(i: usize) -> String {
    format!("obj-{i:05}")
}
