//! Stochastic-block-model generators for the synthetic node-classification
//! benchmarks (pattern recognition and semi-supervised clustering).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::csr::{build_csr, CsrGraph};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SbmMode {
    /// Labels are community ids; features uniform over the vocabulary.
    Plain,
    /// Binary labels marking membership in a planted sub-block.
    Pattern,
    /// One labeled seed per community carries feature `c + 1`; all other
    /// nodes carry feature 0. Labels are community ids.
    Cluster,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbmSpec {
    pub num_communities: usize,
    pub size_range: (usize, usize),
    pub p_intra: f64,
    pub p_extra: f64,
    pub feature_vocab: usize,
    pub seed: u64,
    pub mode: SbmMode,
    /// Size of the planted block in pattern mode.
    pub pattern_size: usize,
}

impl SbmSpec {
    /// Pattern benchmark: 5 communities of 5–35 nodes, p = 0.5 / 0.35, vocabulary 3.
    pub fn pattern(seed: u64) -> Self {
        SbmSpec {
            num_communities: 5,
            size_range: (5, 35),
            p_intra: 0.5,
            p_extra: 0.35,
            feature_vocab: 3,
            seed,
            mode: SbmMode::Pattern,
            pattern_size: 20,
        }
    }

    /// Cluster benchmark: 6 communities of 5–35 nodes, p = 0.55 / 0.25, features 0..=6.
    pub fn cluster(seed: u64) -> Self {
        SbmSpec {
            num_communities: 6,
            size_range: (5, 35),
            p_intra: 0.55,
            p_extra: 0.25,
            feature_vocab: 7,
            seed,
            mode: SbmMode::Cluster,
            pattern_size: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("sbm: {m}")));
        if self.num_communities == 0 {
            return bad("num_communities must be positive");
        }
        if self.size_range.0 < 1 || self.size_range.0 > self.size_range.1 {
            return bad("size_range must satisfy 1 <= min <= max");
        }
        if !(0.0 <= self.p_extra && self.p_extra < self.p_intra && self.p_intra <= 1.0) {
            return bad("probabilities must satisfy 0 <= p_extra < p_intra <= 1");
        }
        if self.feature_vocab == 0 {
            return bad("feature_vocab must be positive");
        }
        if self.mode == SbmMode::Cluster && self.feature_vocab < self.num_communities + 1 {
            return bad("cluster mode needs feature_vocab >= num_communities + 1");
        }
        if self.mode == SbmMode::Pattern && self.pattern_size == 0 {
            return bad("pattern mode needs pattern_size >= 1");
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        match self.mode {
            SbmMode::Pattern => 2,
            _ => self.num_communities,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SbmGraph {
    pub graph: CsrGraph,
    /// One-hot node features `[N x feature_vocab]`.
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub communities: Vec<usize>,
}

pub fn sbm_generate(spec: &SbmSpec) -> Result<SbmGraph> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (lo, hi) = spec.size_range;

    let mut communities = Vec::new();
    for c in 0..spec.num_communities {
        let size = rng.gen_range(lo..=hi);
        communities.extend(std::iter::repeat(c).take(size));
    }
    let base = communities.len();
    if spec.mode == SbmMode::Pattern {
        communities.extend(std::iter::repeat(spec.num_communities).take(spec.pattern_size));
    }
    let n = communities.len();

    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if communities[u] == communities[v] {
                spec.p_intra
            } else {
                spec.p_extra
            };
            if rng.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let graph = build_csr(&edges, n, true)?;

    let mut feature_ids = vec![0usize; n];
    let labels: Vec<usize> = match spec.mode {
        SbmMode::Plain => {
            for f in feature_ids.iter_mut() {
                *f = rng.gen_range(0..spec.feature_vocab);
            }
            communities.clone()
        }
        SbmMode::Pattern => {
            for f in feature_ids.iter_mut() {
                *f = rng.gen_range(0..spec.feature_vocab);
            }
            (0..n).map(|v| usize::from(v >= base)).collect()
        }
        SbmMode::Cluster => {
            let mut start = 0;
            for c in 0..spec.num_communities {
                let size = communities[start..].iter().take_while(|&&k| k == c).count();
                let seed_node = start + rng.gen_range(0..size);
                feature_ids[seed_node] = c + 1;
                start += size;
            }
            communities.clone()
        }
    };

    let mut features = Tensor::zeros(&[n, spec.feature_vocab]);
    for (v, &f) in feature_ids.iter().enumerate() {
        features.set(&[v, f], 1.0);
    }
    Ok(SbmGraph {
        graph,
        features,
        labels,
        communities,
    })
}

/// Generates `count` graphs with seeds `spec.seed, spec.seed + 1, ...`.
pub fn sbm_dataset(spec: &SbmSpec, count: usize) -> Result<Vec<SbmGraph>> {
    (0..count as u64)
        .map(|i| {
            let mut s = spec.clone();
            s.seed = spec.seed.wrapping_add(i);
            sbm_generate(&s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_probabilities_give_disjoint_cliques() {
        let spec = SbmSpec {
            num_communities: 2,
            size_range: (2, 2),
            p_intra: 1.0,
            p_extra: 0.0,
            feature_vocab: 2,
            seed: 3,
            mode: SbmMode::Plain,
            pattern_size: 0,
        };
        let g = sbm_generate(&spec).unwrap();
        assert_eq!(g.graph.num_nodes(), 4);
        assert_eq!(g.graph.undirected_edges(), vec![(0, 1), (2, 3)]);
        assert_eq!(g.labels, vec![0, 0, 1, 1]);
    }

    #[test]
    fn pattern_parameters() {
        let spec = SbmSpec::pattern(1);
        assert_eq!((spec.num_communities, spec.size_range), (5, (5, 35)));
        assert_eq!((spec.p_intra, spec.p_extra, spec.feature_vocab), (0.5, 0.35, 3));
        let g = sbm_generate(&spec).unwrap();
        let n = g.graph.num_nodes();
        assert!(n >= 5 * 5 + 20 && n <= 5 * 35 + 20);
        assert_eq!(g.labels.iter().filter(|&&l| l == 1).count(), 20);
        assert_eq!(g.features.shape(), &[n, 3]);
        assert!(g.graph.is_symmetric());
    }

    #[test]
    fn cluster_has_one_seed_per_community() {
        let spec = SbmSpec::cluster(9);
        assert_eq!((spec.p_intra, spec.p_extra, spec.feature_vocab), (0.55, 0.25, 7));
        let g = sbm_generate(&spec).unwrap();
        let n = g.graph.num_nodes();
        let mut seeds = 0;
        for v in 0..n {
            let f = crate::tensor::argmax(g.features.row(v));
            if f != 0 {
                seeds += 1;
                assert_eq!(f, g.labels[v] + 1);
            }
        }
        assert_eq!(seeds, 6);
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let a = sbm_generate(&SbmSpec::cluster(42)).unwrap();
        let b = sbm_generate(&SbmSpec::cluster(42)).unwrap();
        assert_eq!(a, b);
        let c = sbm_generate(&SbmSpec::cluster(43)).unwrap();
        assert_ne!(a.graph, c.graph);
    }

    #[test]
    fn rejects_bad_spec() {
        let mut s = SbmSpec::cluster(0);
        s.p_extra = 0.9;
        assert!(sbm_generate(&s).is_err());
        let mut s = SbmSpec::cluster(0);
        s.size_range = (0, 3);
        assert!(sbm_generate(&s).is_err());
    }
}
