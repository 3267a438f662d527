//! Vocabulary-tree retrieval: hierarchical k-means over descriptors,
//! TF-IDF-weighted node-visit vectors, inverted files, L1 scoring.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::geo::GeoTag;
use crate::util::mix_seed;

pub const DESC_DIM: usize = 128;

/// One node of the hierarchy. Leaves have no children. The inverted file
/// maps database image index to term count; internal nodes hold the
/// aggregate of their subtree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub centroid: Vec<f32>,
    pub children: Vec<u32>,
    /// ln(N / N_i); 0 until the index is populated.
    pub idf: f64,
    pub inverted: BTreeMap<u32, u32>,
}

/// Hierarchical quantizer with per-node IDF weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabTree {
    pub branch_factor: usize,
    pub depth: usize,
    pub nodes: Vec<TreeNode>,
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = (*x - *y) as f64;
        acc += d * d;
    }
    acc
}

/// Seeded k-means++ initialization followed by Lloyd iterations.
/// Returns (centroids, assignment). Deterministic for a fixed seed.
fn kmeans(data: &[&[f32]], k: usize, seed: u64) -> (Vec<Vec<f32>>, Vec<usize>) {
    let n = data.len();
    debug_assert!(k >= 1 && n >= k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // k-means++ seeding
    let mut centroids: Vec<Vec<f32>> = Vec::with_capacity(k);
    let first = rng.gen_range(0..n);
    centroids.push(data[first].to_vec());
    let mut d2: Vec<f64> = data.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total <= 0.0 {
            rng.gen_range(0..n)
        } else {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        };
        centroids.push(data[idx].to_vec());
        let c = centroids.last().unwrap();
        for (i, p) in data.iter().enumerate() {
            let d = sq_dist(p, c);
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for _ in 0..50 {
        let mut changed = false;
        for (i, p) in data.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::MAX;
            for (c, cent) in centroids.iter().enumerate() {
                let d = sq_dist(p, cent);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        // recompute centroids in f64
        let mut sums = vec![[0.0f64; DESC_DIM]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in data.iter().enumerate() {
            let c = assignment[i];
            counts[c] += 1;
            for (j, v) in p.iter().enumerate() {
                sums[c][j] += *v as f64;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c]
                    .iter()
                    .map(|s| (*s / counts[c] as f64) as f32)
                    .collect();
            }
            // empty clusters keep their previous centroid
        }
    }
    (centroids, assignment)
}

impl VocabTree {
    /// Build by hierarchical k-means. Nodes with fewer than `k` descriptors
    /// become leaves, so depth truncates where clusters run dry.
    pub fn build(
        descriptor_sets: &[FeatureSet],
        k: usize,
        depth: usize,
        seed: u64,
    ) -> Result<VocabTree> {
        if k < 2 {
            return Err(Error::InvalidParameter("branch factor must be >= 2".into()));
        }
        let descriptors: Vec<&[f32]> = descriptor_sets
            .iter()
            .flat_map(|fs| fs.features.iter().map(|f| f.descriptor.as_slice()))
            .collect();
        if descriptors.is_empty() {
            return Err(Error::EmptyInput("no descriptors to cluster".into()));
        }
        let root_centroid = {
            let mut sums = [0.0f64; DESC_DIM];
            for d in &descriptors {
                for (j, v) in d.iter().enumerate() {
                    sums[j] += *v as f64;
                }
            }
            sums.iter()
                .map(|s| (*s / descriptors.len() as f64) as f32)
                .collect::<Vec<f32>>()
        };
        let mut nodes = vec![TreeNode {
            centroid: root_centroid,
            children: Vec::new(),
            idf: 0.0,
            inverted: BTreeMap::new(),
        }];
        // breadth-first split
        let mut frontier: Vec<(u32, Vec<usize>, usize)> =
            vec![(0, (0..descriptors.len()).collect(), 0)];
        while let Some((node_id, members, level)) = frontier.pop() {
            if level >= depth || members.len() < k {
                continue;
            }
            let subset: Vec<&[f32]> = members.iter().map(|i| descriptors[*i]).collect();
            let (centroids, assignment) =
                kmeans(&subset, k, mix_seed(seed, node_id as u64));
            let mut child_members: Vec<Vec<usize>> = vec![Vec::new(); k];
            for (local, global) in members.iter().enumerate() {
                child_members[assignment[local]].push(*global);
            }
            for (c, centroid) in centroids.into_iter().enumerate() {
                if child_members[c].is_empty() {
                    continue;
                }
                let child_id = nodes.len() as u32;
                nodes.push(TreeNode {
                    centroid,
                    children: Vec::new(),
                    idf: 0.0,
                    inverted: BTreeMap::new(),
                });
                nodes[node_id as usize].children.push(child_id);
                frontier.push((child_id, core::mem::take(&mut child_members[c]), level + 1));
            }
        }
        Ok(VocabTree {
            branch_factor: k,
            depth,
            nodes,
        })
    }

    /// Greedy root-to-leaf descent; returns the visited node ids including
    /// the root. Ties break to the lowest child index.
    pub fn quantize(&self, descriptor: &[f32]) -> Vec<u32> {
        let mut path = vec![0u32];
        let mut node = 0usize;
        loop {
            let children = &self.nodes[node].children;
            if children.is_empty() {
                break;
            }
            let mut best = children[0];
            let mut best_d = f64::MAX;
            for c in children {
                let d = sq_dist(descriptor, &self.nodes[*c as usize].centroid);
                if d < best_d {
                    best_d = d;
                    best = *c;
                }
            }
            path.push(best);
            node = best as usize;
        }
        path
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.children.is_empty()).count()
    }
}

/// A database image: identifier, geotag and its L1-normalized TF-IDF vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub image_id: String,
    pub geotag: GeoTag,
    pub vector: BTreeMap<u32, f64>,
}

/// Vocabulary tree plus indexed images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatabaseIndex {
    pub tree: VocabTree,
    pub entries: Vec<IndexEntry>,
}

/// Raw node-visit counts of one feature set.
pub fn term_counts(tree: &VocabTree, fs: &FeatureSet) -> BTreeMap<u32, u32> {
    let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
    for f in &fs.features {
        for node in tree.quantize(&f.descriptor) {
            *counts.entry(node).or_insert(0) += 1;
        }
    }
    counts
}

fn weighted_vector(tree: &VocabTree, counts: &BTreeMap<u32, u32>) -> BTreeMap<u32, f64> {
    let mut v: BTreeMap<u32, f64> = BTreeMap::new();
    for (node, count) in counts {
        let w = *count as f64 * tree.nodes[*node as usize].idf;
        if w > 0.0 {
            v.insert(*node, w);
        }
    }
    let total: f64 = v.values().sum();
    if total > 0.0 {
        for w in v.values_mut() {
            *w /= total;
        }
    }
    v
}

impl DatabaseIndex {
    /// Build an index over the given feature sets and geotags. IDF weights
    /// are computed from the indexed set; inverted files are populated at
    /// every visited node.
    pub fn build(tree: VocabTree, sets: &[(FeatureSet, GeoTag)]) -> Result<DatabaseIndex> {
        if sets.is_empty() {
            return Err(Error::EmptyInput("no images to index".into()));
        }
        let mut tree = tree;
        for node in &mut tree.nodes {
            node.inverted.clear();
            node.idf = 0.0;
        }
        let mut per_image_counts: Vec<BTreeMap<u32, u32>> = Vec::with_capacity(sets.len());
        for (img_idx, (fs, tag)) in sets.iter().enumerate() {
            tag.validate()?;
            let counts = term_counts(&tree, fs);
            for (node, count) in &counts {
                tree.nodes[*node as usize]
                    .inverted
                    .insert(img_idx as u32, *count);
            }
            per_image_counts.push(counts);
        }
        let n_images = sets.len() as f64;
        for node in &mut tree.nodes {
            let ni = node.inverted.len();
            node.idf = if ni > 0 {
                libm::log(n_images / ni as f64)
            } else {
                0.0
            };
        }
        let entries = sets
            .iter()
            .zip(&per_image_counts)
            .map(|((fs, tag), counts)| IndexEntry {
                image_id: fs.image_id.clone(),
                geotag: tag.clone(),
                vector: weighted_vector(&tree, counts),
            })
            .collect();
        Ok(DatabaseIndex { tree, entries })
    }

    /// Query TF-IDF vector, L1-normalized with the index's IDF weights.
    pub fn query_vector(&self, query: &FeatureSet) -> BTreeMap<u32, f64> {
        weighted_vector(&self.tree, &term_counts(&self.tree, query))
    }

    /// Rank all indexed images against the query. Results are ordered by
    /// ascending L1 distance; the reported score is `2 - distance`.
    pub fn score_query(&self, query: &FeatureSet) -> Result<Vec<(String, f64, GeoTag)>> {
        if self.entries.is_empty() {
            return Err(Error::EmptyInput("empty index".into()));
        }
        if query.features.is_empty() {
            return Err(Error::EmptyInput("query has no features".into()));
        }
        let q = self.query_vector(query);
        let mut scored: Vec<(usize, f64)> = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (i, sparse_l1_distance(&q, &e.vector)))
            .collect();
        scored.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        Ok(scored
            .into_iter()
            .map(|(i, d)| {
                let e = &self.entries[i];
                (e.image_id.clone(), 2.0 - d, e.geotag.clone())
            })
            .collect())
    }
}

/// L1 distance of two L1-normalized sparse vectors via the shared-support
/// simplification: `‖q−d‖₁ = 2 + Σ_{shared}(|qᵢ−dᵢ| − qᵢ − dᵢ)`.
pub fn sparse_l1_distance(q: &BTreeMap<u32, f64>, d: &BTreeMap<u32, f64>) -> f64 {
    let mut dist = 2.0;
    for (node, qv) in q {
        if let Some(dv) = d.get(node) {
            dist += (qv - dv).abs() - qv - dv;
        }
    }
    dist
}

/// Brute-force L1 distance over the dense union of supports (test oracle).
pub fn dense_l1_distance(q: &BTreeMap<u32, f64>, d: &BTreeMap<u32, f64>) -> f64 {
    let keys: alloc::collections::BTreeSet<u32> =
        q.keys().chain(d.keys()).copied().collect();
    keys.iter()
        .map(|k| (q.get(k).copied().unwrap_or(0.0) - d.get(k).copied().unwrap_or(0.0)).abs())
        .sum()
}
