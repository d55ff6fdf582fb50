//! Benchmark configuration: dataset shape, filter selectivities, and the
//! measurement matrix (algorithms x batch sizes x update rate).

use linr_core::{Algo, ClauseSpec, IndexConfig, Polarity};
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

/// One filter clause of the synthetic schema. Items draw between
/// `min_attrs` and `max_attrs` distinct attributes (uniformly) out of
/// `universe`; queries draw however many attributes it takes to make the
/// expected fraction of items passing this clause hit `selectivity`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClauseProfile {
    pub name: String,
    pub polarity: Polarity,
    pub universe: u64,
    pub min_attrs: usize,
    pub max_attrs: usize,
    pub selectivity: f64,
}

/// An algorithm under measurement. `keep_fraction` only matters for v3.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgoSpec {
    pub algo: Algo,
    #[serde(default = "default_keep")]
    pub keep_fraction: f32,
}

fn default_keep() -> f32 {
    1.0
}

impl std::fmt::Display for AlgoSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.algo == Algo::V3 && self.keep_fraction < 1.0 {
            write!(f, "{}@{:.4}", self.algo, self.keep_fraction)
        } else {
            write!(f, "{}", self.algo)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub n_items: usize,
    pub dim: usize,
    #[serde(default = "default_quant_bits")]
    pub quant_bits: usize,
    /// Gaussian mixture components for item/query embeddings.
    #[serde(default = "default_clusters")]
    pub n_clusters: usize,
    /// Expected norm of the Gaussian perturbation around a unit cluster
    /// center, before renormalization. The per-coordinate std is
    /// cluster_std / sqrt(dim), so cluster tightness (and with it how
    /// informative quantized ranking is) does not drift with dimension.
    #[serde(default = "default_cluster_std")]
    pub cluster_std: f32,
    pub clauses: Vec<ClauseProfile>,
    pub n_queries: usize,
    pub k: usize,
    #[serde(default = "default_algos")]
    pub algos: Vec<AlgoSpec>,
    #[serde(default = "default_batches")]
    pub batch_sizes: Vec<usize>,
    /// Concurrent identical-content upserts per second during measurement;
    /// 0 disables the writer thread.
    #[serde(default)]
    pub update_rate: u64,
    #[serde(default)]
    pub seed: u64,
}

fn default_quant_bits() -> usize {
    512
}

fn default_clusters() -> usize {
    50
}

fn default_cluster_std() -> f32 {
    0.35
}

fn default_algos() -> Vec<AlgoSpec> {
    vec![
        AlgoSpec { algo: Algo::V1, keep_fraction: 1.0 },
        AlgoSpec { algo: Algo::V2, keep_fraction: 1.0 },
        AlgoSpec { algo: Algo::V3, keep_fraction: 0.01 },
    ]
}

fn default_batches() -> Vec<usize> {
    vec![1]
}

impl BenchConfig {
    /// Desk-scale defaults: 100k items at D=128, 1000 queries, top-200,
    /// one positive and one negative clause at roughly 11% combined pass
    /// rate's positive side.
    pub fn desk_default() -> BenchConfig {
        BenchConfig {
            n_items: 100_000,
            dim: 128,
            quant_bits: 512,
            n_clusters: 50,
            cluster_std: 0.35,
            clauses: vec![
                ClauseProfile {
                    name: "topic".into(),
                    polarity: Polarity::Match,
                    universe: 1000,
                    min_attrs: 1,
                    max_attrs: 3,
                    selectivity: 0.11,
                },
                ClauseProfile {
                    name: "blocked".into(),
                    polarity: Polarity::ReverseMatch,
                    universe: 500,
                    min_attrs: 0,
                    max_attrs: 2,
                    selectivity: 0.95,
                },
            ],
            n_queries: 1000,
            k: 200,
            algos: default_algos(),
            batch_sizes: default_batches(),
            update_rate: 0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(BenchError::InvalidConfig(m));
        if self.n_items == 0 || self.dim == 0 || self.n_queries == 0 || self.k == 0 {
            return bad("n_items, dim, n_queries, k must all be >= 1".into());
        }
        if self.n_clusters == 0 {
            return bad("n_clusters must be >= 1".into());
        }
        if !(self.cluster_std.is_finite() && self.cluster_std >= 0.0) {
            return bad(format!("cluster_std {} must be finite and >= 0", self.cluster_std));
        }
        if self.algos.is_empty() || self.batch_sizes.is_empty() {
            return bad("algos and batch_sizes must be non-empty".into());
        }
        if let Some(b) = self.batch_sizes.iter().find(|&&b| b == 0) {
            return bad(format!("batch size {b} must be >= 1"));
        }
        for spec in &self.algos {
            if !(spec.keep_fraction > 0.0 && spec.keep_fraction <= 1.0) {
                return bad(format!("keep_fraction {} outside (0, 1]", spec.keep_fraction));
            }
        }
        let mut names: Vec<&str> = self.clauses.iter().map(|c| c.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.clauses.len() {
            return bad("clause names must be unique".into());
        }
        for c in &self.clauses {
            if c.name.is_empty() {
                return bad("clause names must be non-empty".into());
            }
            if !(c.selectivity > 0.0 && c.selectivity <= 1.0) {
                return bad(format!("clause {:?}: selectivity {} outside (0, 1]", c.name, c.selectivity));
            }
            if c.min_attrs > c.max_attrs {
                return bad(format!("clause {:?}: min_attrs > max_attrs", c.name));
            }
            if c.max_attrs == 0 {
                return bad(format!("clause {:?}: max_attrs must be >= 1", c.name));
            }
            if (c.max_attrs as u64) > c.universe {
                return bad(format!("clause {:?}: max_attrs exceeds universe", c.name));
            }
        }
        Ok(())
    }

    /// The index schema these fixtures need.
    pub fn index_config(&self) -> IndexConfig {
        IndexConfig {
            capacity: self.n_items,
            dim: self.dim,
            clauses: self
                .clauses
                .iter()
                .map(|c| ClauseSpec {
                    name: c.name.clone(),
                    polarity: c.polarity,
                    max_attrs: c.max_attrs,
                })
                .collect(),
            quant_bits: self.quant_bits,
            seed: self.seed,
            memory_budget_bytes: None,
        }
    }

    /// Per clause, how many attributes a query should draw so that the
    /// expected pass rate matches the clause's selectivity target, treating
    /// draws as independent with the mean item attribute count.
    ///
    /// For a Match clause the pass probability at q query attributes is
    /// about 1 - (1 - a/U)^q, monotone up in q; for ReverseMatch it is
    /// (1 - a/U)^q, monotone down. The integer q nearest the target is
    /// checked back against the model: if the best q misses by more than
    /// 20% relative, the target is unsatisfiable for this universe shape
    /// (e.g. a match selectivity below a/U, which even q = 1 overshoots).
    pub fn query_attr_counts(&self) -> Result<Vec<usize>> {
        self.clauses.iter().map(solve_clause).collect()
    }
}

fn solve_clause(c: &ClauseProfile) -> Result<usize> {
    let fail = |detail: String| {
        Err(BenchError::Unsatisfiable { clause: c.name.clone(), target: c.selectivity, detail })
    };
    if c.selectivity >= 1.0 {
        // An empty query list passes everything, for either polarity.
        return Ok(0);
    }
    let mean_attrs = (c.min_attrs + c.max_attrs) as f64 / 2.0;
    let miss = 1.0 - mean_attrs / c.universe as f64; // P(one query attr misses one item attr set)
    let s = c.selectivity;
    if miss <= 0.0 {
        return fail("items hold the whole universe; only selectivity 1 is reachable".into());
    }
    if mean_attrs == 0.0 {
        return fail("items have no attributes; only selectivity 1 is reachable".into());
    }
    let q_real = match c.polarity {
        Polarity::Match => (1.0 - s).ln() / miss.ln(),
        Polarity::ReverseMatch => s.ln() / miss.ln(),
    };
    let q = (q_real.round() as u64).clamp(1, c.universe) as usize;
    let predicted = match c.polarity {
        Polarity::Match => 1.0 - miss.powf(q as f64),
        Polarity::ReverseMatch => miss.powf(q as f64),
    };
    if (predicted - s).abs() > 0.2 * s {
        return fail(format!(
            "best integer query size {q} gives expected pass rate {predicted:.4}; \
             universe {} with ~{mean_attrs:.1} attrs/item cannot reach {s} within 20%",
            c.universe
        ));
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_default_validates_and_solves() {
        let cfg = BenchConfig::desk_default();
        cfg.validate().unwrap();
        let counts = cfg.query_attr_counts().unwrap();
        assert_eq!(counts.len(), 2);
        // topic: 1-(1-0.002)^q = 0.11 -> q ~ 58
        assert!((50..=66).contains(&counts[0]), "{counts:?}");
        // blocked: (1-0.002)^q = 0.95 -> q ~ 26
        assert!((20..=32).contains(&counts[1]), "{counts:?}");
        let icfg = cfg.index_config();
        icfg.validate().unwrap();
        assert_eq!(icfg.capacity, 100_000);
        assert_eq!(icfg.clauses[1].polarity, Polarity::ReverseMatch);
    }

    #[test]
    fn solver_model_hits_target_exactly_at_integer_roots() {
        // universe 100, exactly 1 attr per item: pass(q) = q/100 for Match.
        let c = ClauseProfile {
            name: "t".into(),
            polarity: Polarity::Match,
            universe: 100,
            min_attrs: 1,
            max_attrs: 1,
            selectivity: 0.11,
        };
        let q = solve_clause(&c).unwrap();
        // 1-(1-0.01)^q = 0.11 -> q = ln(0.89)/ln(0.99) = 11.6 -> 12
        assert_eq!(q, 12);
    }

    #[test]
    fn selectivity_one_means_empty_query_list() {
        let mut cfg = BenchConfig::desk_default();
        cfg.clauses[0].selectivity = 1.0;
        cfg.clauses[1].selectivity = 1.0;
        assert_eq!(cfg.query_attr_counts().unwrap(), vec![0, 0]);
    }

    #[test]
    fn too_small_universe_is_unsatisfiable() {
        // a/U = 0.5: the smallest nonempty Match pass rate is ~0.5, far
        // above the 0.01 target.
        let c = ClauseProfile {
            name: "t".into(),
            polarity: Polarity::Match,
            universe: 4,
            min_attrs: 2,
            max_attrs: 2,
            selectivity: 0.01,
        };
        let err = solve_clause(&c).unwrap_err();
        assert!(matches!(err, BenchError::Unsatisfiable { .. }), "{err}");
        assert!(err.to_string().contains("t"));
    }

    #[test]
    fn zero_attr_items_cannot_match() {
        let c = ClauseProfile {
            name: "t".into(),
            polarity: Polarity::Match,
            universe: 10,
            min_attrs: 0,
            max_attrs: 0,
            selectivity: 0.5,
        };
        assert!(solve_clause(&c).is_err());
    }

    #[test]
    fn validation_rejects_bad_shapes() {
        let mut cfg = BenchConfig::desk_default();
        cfg.k = 0;
        assert!(cfg.validate().is_err());

        let mut cfg = BenchConfig::desk_default();
        cfg.clauses[1].name = "topic".into();
        assert!(cfg.validate().is_err());

        let mut cfg = BenchConfig::desk_default();
        cfg.clauses[0].selectivity = 0.0;
        assert!(cfg.validate().is_err());

        let mut cfg = BenchConfig::desk_default();
        cfg.algos[2].keep_fraction = 0.0;
        assert!(cfg.validate().is_err());

        let mut cfg = BenchConfig::desk_default();
        cfg.clauses[0].max_attrs = 2000; // > universe
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_round_trips_as_json_with_defaults() {
        let json = r#"{
            "n_items": 1000, "dim": 16,
            "clauses": [
                {"name":"topic","polarity":"match","universe":50,"min_attrs":1,"max_attrs":2,"selectivity":0.3}
            ],
            "n_queries": 10, "k": 5
        }"#;
        let cfg: BenchConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.quant_bits, 512);
        assert_eq!(cfg.batch_sizes, vec![1]);
        assert_eq!(cfg.algos.len(), 3);
        assert_eq!(cfg.algos[2].keep_fraction, 0.01);
        assert_eq!(cfg.update_rate, 0);
        cfg.validate().unwrap();

        let back: BenchConfig =
            serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn algo_spec_display_is_compact() {
        assert_eq!(AlgoSpec { algo: Algo::V1, keep_fraction: 1.0 }.to_string(), "v1");
        assert_eq!(AlgoSpec { algo: Algo::V3, keep_fraction: 1.0 }.to_string(), "v3");
        assert_eq!(AlgoSpec { algo: Algo::V3, keep_fraction: 0.01 }.to_string(), "v3@0.0100");
    }
}
