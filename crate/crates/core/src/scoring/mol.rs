//! Mixture-of-logits scorer.
//!
//! The score is `sum_k softmax(gate(q, x))_k * delta_k(q, x)` where each
//! component k projects a query-side and an item-side embedding through small
//! MLPs and compares them with cosine (default) or dot. The gate consumes the
//! concatenation of all raw component embeddings, query block first, then the
//! item block, both in component order.
//!
//! Component embeddings resolve by name:
//! - `"two_tower"`: the retrieval embedding on both sides;
//! - `"cluster_id"`: look up the nearest cluster via [`assign_cluster`] and
//!   substitute that cluster's learned embedding, on both sides;
//! - any other name: taken from the query's feature bundle; the item side is
//!   always the stored item embedding.

use super::mlp::Mlp;
use super::{cosine, dot, Matrix, PreparedScorer, QueryVector, Scorer};
use crate::error::{Error, Result};

/// Numerically safe softmax, in place. Empty input is left untouched.
pub fn softmax_in_place(x: &mut [f32]) {
    if x.is_empty() {
        return;
    }
    let max = x.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let mut total = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in x.iter_mut() {
        *v /= total;
    }
}

/// Index of the cluster center with the highest cosine to `emb`; ties take
/// the lowest index.
pub fn assign_cluster(centers: &Matrix, emb: &[f32]) -> Result<usize> {
    if centers.rows() == 0 {
        return Err(Error::NoClusters);
    }
    if centers.cols() != emb.len() {
        return Err(Error::DimMismatch { expected: centers.cols(), got: emb.len() });
    }
    let mut best = 0;
    let mut best_sim = f32::NEG_INFINITY;
    for r in 0..centers.rows() {
        let sim = cosine(centers.row(r), emb);
        if sim > best_sim {
            best_sim = sim;
            best = r;
        }
    }
    Ok(best)
}

/// Learned per-cluster table: `centers` locate clusters in embedding space,
/// `embeddings` are the vectors substituted for `cluster_id` components.
#[derive(Clone, Debug)]
pub struct ClusterTable {
    pub centers: Matrix,
    pub embeddings: Matrix,
}

#[derive(Clone, Debug)]
pub struct MolComponent {
    pub name: String,
    pub query_mlp: Mlp,
    pub item_mlp: Mlp,
}

#[derive(Clone, Debug)]
pub struct MolModel {
    pub components: Vec<MolComponent>,
    pub gate: Mlp,
    pub clusters: Option<ClusterTable>,
    /// Component similarity: cosine when true, dot otherwise.
    pub cosine: bool,
}

impl MolModel {
    pub fn from_weights(
        tensors: &super::weights::TensorMap,
        components: &[String],
        cosine: bool,
    ) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::BadWeights {
                name: "<mol>".into(),
                reason: "at least one component required".into(),
            });
        }
        let comps = components
            .iter()
            .map(|name| {
                Ok(MolComponent {
                    name: name.clone(),
                    query_mlp: super::weights::mlp_from_weights(tensors, &format!("comp.{name}.q"))?,
                    item_mlp: super::weights::mlp_from_weights(tensors, &format!("comp.{name}.i"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let gate = super::weights::mlp_from_weights(tensors, "gate")?;
        let clusters = match (tensors.get("clusters.centers"), tensors.get("clusters.embeddings")) {
            (Some(c), Some(e)) => Some(ClusterTable {
                centers: super::weights::tensor_to_matrix(c, "clusters.centers")?,
                embeddings: super::weights::tensor_to_matrix(e, "clusters.embeddings")?,
            }),
            (None, None) => None,
            _ => {
                return Err(Error::MissingWeights("clusters.centers / clusters.embeddings".into()))
            }
        };
        let model = MolModel { components: comps, gate, clusters, cosine };
        model.validate_static()?;
        Ok(model)
    }

    fn validate_static(&self) -> Result<()> {
        if let Some(t) = &self.clusters {
            if t.centers.rows() != t.embeddings.rows() {
                return Err(Error::BadWeights {
                    name: "clusters".into(),
                    reason: format!(
                        "{} centers vs {} cluster embeddings",
                        t.centers.rows(),
                        t.embeddings.rows()
                    ),
                });
            }
        }
        if self.components.iter().any(|c| c.name == "cluster_id") && self.clusters.is_none() {
            return Err(Error::MissingWeights("clusters.centers".into()));
        }
        Ok(())
    }

    fn resolve_query_side<'q>(
        &self,
        comp: &MolComponent,
        q: &QueryVector<'q>,
    ) -> Result<Vec<f32>> {
        if let Some(f) = q.features.get(&comp.name) {
            return Ok(f.clone());
        }
        match comp.name.as_str() {
            "two_tower" => Ok(q.embedding.to_vec()),
            "cluster_id" => {
                let t = self.clusters.as_ref().ok_or(Error::NoClusters)?;
                let c = assign_cluster(&t.centers, q.embedding)?;
                Ok(t.embeddings.row(c).to_vec())
            }
            _ => Err(Error::MissingFeature(comp.name.clone())),
        }
    }

    fn resolve_item_side(&self, comp: &MolComponent, item: &[f32]) -> Result<Vec<f32>> {
        match comp.name.as_str() {
            "cluster_id" => {
                let t = self.clusters.as_ref().ok_or(Error::NoClusters)?;
                let c = assign_cluster(&t.centers, item)?;
                Ok(t.embeddings.row(c).to_vec())
            }
            _ => Ok(item.to_vec()),
        }
    }

    /// One query against one item; the scorer trait caches the query half of
    /// this computation across items.
    pub fn score_one(&self, q: &QueryVector<'_>, item: &[f32]) -> Result<f32> {
        let scorer = MolScorer::new(self.clone());
        let prepared = Scorer::prepare(&scorer, q)?;
        Ok(prepared.score(item))
    }
}

pub struct MolScorer {
    model: MolModel,
}

impl MolScorer {
    pub fn new(model: MolModel) -> Self {
        MolScorer { model }
    }
}

struct PreparedMol<'a> {
    model: &'a MolModel,
    /// Raw query-side embeddings, one per component; the gate input prefix.
    query_sides: Vec<Vec<f32>>,
    /// Projected query-side vectors f_k(q_k).
    projected: Vec<Vec<f32>>,
    gate_prefix_len: usize,
}

impl PreparedMol<'_> {
    fn score_checked(&self, item: &[f32]) -> Result<f32> {
        let m = self.model;
        let k = m.components.len();
        let mut item_sides = Vec::with_capacity(k);
        for comp in &m.components {
            item_sides.push(m.resolve_item_side(comp, item)?);
        }
        let mut gate_in =
            Vec::with_capacity(self.gate_prefix_len + item_sides.iter().map(Vec::len).sum::<usize>());
        for qs in &self.query_sides {
            gate_in.extend_from_slice(qs);
        }
        for is in &item_sides {
            gate_in.extend_from_slice(is);
        }
        let mut logits = m.gate.forward(&gate_in);
        if logits.len() != k {
            return Err(Error::BadWeights {
                name: "gate".into(),
                reason: format!("produced {} logits for {k} components", logits.len()),
            });
        }
        softmax_in_place(&mut logits);
        let mut score = 0.0;
        for ((comp, f), (pi, is)) in
            m.components.iter().zip(&self.projected).zip(logits.iter().zip(&item_sides))
        {
            let g = comp.item_mlp.forward(is);
            let delta = if m.cosine { cosine(f, &g) } else { dot(f, &g) };
            score += pi * delta;
        }
        Ok(score)
    }
}

impl PreparedScorer for PreparedMol<'_> {
    fn score(&self, item: &[f32]) -> f32 {
        // Shape errors are caught against the first item at prepare time;
        // later items share the index's fixed dimension.
        self.score_checked(item).unwrap_or(f32::NEG_INFINITY)
    }
}

impl Scorer for MolScorer {
    fn name(&self) -> &'static str {
        "mol"
    }

    fn prepare<'a>(&'a self, q: &QueryVector<'_>) -> Result<Box<dyn PreparedScorer + 'a>> {
        let m = &self.model;
        let mut query_sides = Vec::with_capacity(m.components.len());
        let mut projected = Vec::with_capacity(m.components.len());
        for comp in &m.components {
            let qs = m.resolve_query_side(comp, q)?;
            comp.query_mlp.check_input(qs.len(), &comp.name)?;
            projected.push(comp.query_mlp.forward(&qs));
            query_sides.push(qs);
        }
        let gate_prefix_len = query_sides.iter().map(Vec::len).sum();
        // Dry-run the item path against the query embedding so shape errors
        // surface here instead of silently poisoning scores.
        let prepared = PreparedMol { model: m, query_sides, projected, gate_prefix_len };
        prepared.score_checked(q.embedding)?;
        Ok(Box::new(prepared))
    }
}
