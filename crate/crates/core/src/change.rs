//! Change records: the unit of mutation for the index and the change log.

/// A sequenced mutation. `seq` totally orders records; the index applies a
/// record only if its seq is strictly above the last applied one, which makes
/// replay idempotent.
#[derive(Clone, Debug, PartialEq)]
pub struct ChangeRecord {
    pub seq: u64,
    pub op: ChangeOp,
}

/// Attribute lists are positional, one per clause in schema order. Name-keyed
/// representations exist only at serialization boundaries.
#[derive(Clone, Debug, PartialEq)]
pub enum ChangeOp {
    Upsert { id: u64, embedding: Vec<f32>, attrs: Vec<Vec<u64>> },
    Delete { id: u64 },
}

impl ChangeRecord {
    pub fn upsert(seq: u64, id: u64, embedding: Vec<f32>, attrs: Vec<Vec<u64>>) -> Self {
        ChangeRecord { seq, op: ChangeOp::Upsert { id, embedding, attrs } }
    }

    pub fn delete(seq: u64, id: u64) -> Self {
        ChangeRecord { seq, op: ChangeOp::Delete { id } }
    }

    pub fn id(&self) -> u64 {
        match &self.op {
            ChangeOp::Upsert { id, .. } | ChangeOp::Delete { id } => *id,
        }
    }
}
