use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{Box3, Observation, RegionEntry, SemanticError, SemanticStore};
use crate::geometry::Pose;

pub const SEMANTIC_SNAPSHOT_VERSION: u32 = 1;

/// Little-endian f32 bytes, base64 (standard alphabet, padded).
pub fn encode_vector(v: &[f32]) -> String {
    let mut bytes = Vec::with_capacity(v.len() * 4);
    for x in v {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

pub fn decode_vector(s: &str) -> Result<Vec<f32>, String> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(s)
        .map_err(|e| e.to_string())?;
    if bytes.len() % 4 != 0 {
        return Err(format!("{} bytes is not a whole number of f32s", bytes.len()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionRecord {
    pub embedding: String,
    pub box3d: Box3,
    #[serde(default)]
    pub label: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub id: String,
    pub episode_id: String,
    pub timestep: u64,
    pub pose: Pose,
    pub global_embedding: String,
    pub regions: Vec<RegionRecord>,
    pub image_ref: String,
}

/// Versioned text form of a [`SemanticStore`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemanticSnapshot {
    pub version: u32,
    #[serde(rename = "D")]
    pub dim: usize,
    pub count: usize,
    pub observations: Vec<ObservationRecord>,
}

impl SemanticSnapshot {
    pub fn from_store(store: &SemanticStore) -> Self {
        Self {
            version: SEMANTIC_SNAPSHOT_VERSION,
            dim: store.dim(),
            count: store.len(),
            observations: store
                .observations()
                .iter()
                .map(|o| ObservationRecord {
                    id: o.id.clone(),
                    episode_id: o.episode_id.clone(),
                    timestep: o.timestep,
                    pose: o.pose,
                    global_embedding: encode_vector(&o.global_embedding),
                    regions: o
                        .regions
                        .iter()
                        .map(|r| RegionRecord {
                            embedding: encode_vector(&r.embedding),
                            box3d: r.box3d,
                            label: r.label.clone(),
                        })
                        .collect(),
                    image_ref: o.image_ref.clone(),
                })
                .collect(),
        }
    }

    pub fn into_store(self) -> Result<SemanticStore, SemanticError> {
        if self.version != SEMANTIC_SNAPSHOT_VERSION {
            return Err(SemanticError::Snapshot(format!(
                "unsupported semantic snapshot version {}",
                self.version
            )));
        }
        if self.count != self.observations.len() {
            return Err(SemanticError::Snapshot(format!(
                "header count {} but {} records",
                self.count,
                self.observations.len()
            )));
        }
        let mut store = SemanticStore::new(self.dim);
        for rec in self.observations {
            let dec = |s: &str| decode_vector(s).map_err(SemanticError::Snapshot);
            let obs = Observation {
                global_embedding: dec(&rec.global_embedding)?,
                regions: rec
                    .regions
                    .iter()
                    .map(|r| {
                        Ok(RegionEntry {
                            embedding: dec(&r.embedding)?,
                            box3d: r.box3d,
                            label: r.label.clone(),
                        })
                    })
                    .collect::<Result<_, SemanticError>>()?,
                id: rec.id,
                episode_id: rec.episode_id,
                timestep: rec.timestep,
                pose: rec.pose,
                image_ref: rec.image_ref,
            };
            store.insert_observation(obs)?;
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn vectors_round_trip_bit_exact(v in proptest::collection::vec(any::<f32>(), 0..64)) {
            let back = decode_vector(&encode_vector(&v)).unwrap();
            prop_assert_eq!(back.len(), v.len());
            for (a, b) in back.iter().zip(&v) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn header_mismatch_is_rejected() {
        let mut snap = SemanticSnapshot::from_store(&SemanticStore::new(4));
        snap.count = 3;
        assert!(snap.clone().into_store().is_err());
        snap.count = 0;
        snap.version = 9;
        assert!(snap.into_store().is_err());
        assert!(decode_vector("AAA").is_err());
    }
}
