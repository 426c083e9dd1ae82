//! On-disk dataset directory:
//!
//! ```text
//! meta.json          {name, num_nodes, feature_dim, relations, has_ground_truth, provenance, seed}
//! features.f32       row-major little-endian f32, N×d, no header
//! edges.csv          src,dst,relation
//! labels.csv         node,label        (label ∈ {0, 1, -1})
//! splits.json        {train, val, test}
//! ground_truth.json  optional, synthetic datasets only
//! ```

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{SocialGraph, Splits, UNLABELED};
use crate::error::{Error, Result};
use crate::synth::GroundTruth;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Synthetic,
    Loaded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub name: String,
    pub provenance: Provenance,
    /// Generator seed; present only for synthetic datasets.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub graph: SocialGraph,
    pub metadata: DatasetMetadata,
    pub ground_truth: Option<GroundTruth>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MetaFile {
    name: String,
    num_nodes: usize,
    feature_dim: usize,
    relations: Vec<String>,
    has_ground_truth: bool,
    #[serde(default = "default_provenance")]
    provenance: Provenance,
    #[serde(default)]
    seed: Option<u64>,
}

fn default_provenance() -> Provenance {
    Provenance::Loaded
}

#[derive(Debug, Serialize, Deserialize)]
struct EdgeRecord {
    src: usize,
    dst: usize,
    relation: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRecord {
    node: usize,
    label: i8,
}

pub fn save_dataset(bundle: &DatasetBundle, dir: &Path) -> Result<()> {
    bundle.graph.ensure_valid()?;
    if (bundle.metadata.provenance == Provenance::Synthetic) != bundle.ground_truth.is_some() {
        return Err(Error::InvalidArgument(
            "synthetic datasets carry ground truth and loaded ones do not".into(),
        ));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let g = &bundle.graph;

    let meta = MetaFile {
        name: bundle.metadata.name.clone(),
        num_nodes: g.num_nodes,
        feature_dim: g.feature_dim(),
        relations: g.relations.clone(),
        has_ground_truth: bundle.ground_truth.is_some(),
        provenance: bundle.metadata.provenance,
        seed: bundle.metadata.seed,
    };
    write_json(&dir.join("meta.json"), &meta)?;

    let mut bytes = Vec::with_capacity(g.features.len() * 4);
    for v in g.features.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let path = dir.join("features.f32");
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;

    let path = dir.join("edges.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_io(&path, e))?;
    for (src, dst, relation) in g.edge_triples() {
        w.serialize(EdgeRecord { src, dst, relation })?;
    }
    if g.num_edges() == 0 {
        w.write_record(["src", "dst", "relation"])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("labels.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_io(&path, e))?;
    for (node, &label) in g.labels.iter().enumerate() {
        w.serialize(LabelRecord { node, label })?;
    }
    if g.num_nodes == 0 {
        w.write_record(["node", "label"])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    write_json(&dir.join("splits.json"), &g.splits)?;
    if let Some(gt) = &bundle.ground_truth {
        write_json(&dir.join("ground_truth.json"), gt)?;
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<DatasetBundle> {
    let meta: MetaFile = read_json(&dir.join("meta.json"))?;
    let n = meta.num_nodes;
    let d = meta.feature_dim;

    let path = dir.join("features.f32");
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() != n * d * 4 {
        return Err(Error::malformed(
            &path,
            format!("expected {} bytes for {n}×{d} f32 values, found {}", n * d * 4, bytes.len()),
        ));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let features = Array2::from_shape_vec((n, d), values).expect("length checked");

    let path = dir.join("edges.csv");
    let mut edges = vec![Vec::new(); meta.relations.len()];
    let mut r = csv::Reader::from_path(&path).map_err(|e| csv_io(&path, e))?;
    for (k, rec) in r.deserialize::<EdgeRecord>().enumerate() {
        let rec = rec.map_err(|e| Error::malformed(&path, format!("record {}: {e}", k + 1)))?;
        let slot = edges.get_mut(rec.relation).ok_or_else(|| {
            Error::malformed(&path, format!("record {}: unknown relation {}", k + 1, rec.relation))
        })?;
        slot.push((rec.src, rec.dst));
    }

    let path = dir.join("labels.csv");
    let mut labels = vec![UNLABELED; n];
    let mut r = csv::Reader::from_path(&path).map_err(|e| csv_io(&path, e))?;
    for (k, rec) in r.deserialize::<LabelRecord>().enumerate() {
        let rec = rec.map_err(|e| Error::malformed(&path, format!("record {}: {e}", k + 1)))?;
        if rec.node >= n || !(-1..=1).contains(&rec.label) {
            return Err(Error::malformed(
                &path,
                format!("record {}: node {} label {}", k + 1, rec.node, rec.label),
            ));
        }
        labels[rec.node] = rec.label;
    }

    let splits: Splits = read_json(&dir.join("splits.json"))?;
    let ground_truth = if meta.has_ground_truth {
        Some(read_json::<GroundTruth>(&dir.join("ground_truth.json"))?)
    } else {
        None
    };

    let graph = SocialGraph {
        num_nodes: n,
        features,
        relations: meta.relations,
        edges,
        labels,
        splits,
    };
    graph.ensure_valid()?;
    Ok(DatasetBundle {
        graph,
        metadata: DatasetMetadata {
            name: meta.name,
            provenance: meta.provenance,
            seed: meta.seed,
        },
        ground_truth,
    })
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::malformed(path, e.to_string())
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::malformed(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::toy_graph;
    use ndarray::array;

    fn bundle() -> DatasetBundle {
        let mut g = toy_graph(3, &[(0, 1), (1, 2), (2, 0)], &[0, 1, -1]);
        g.features = array![[0.1, -2.5], [f32::MIN_POSITIVE, 3.0], [1e-30, 7.25]];
        g.splits.train = vec![0];
        g.splits.test = vec![1];
        DatasetBundle {
            graph: g,
            metadata: DatasetMetadata {
                name: "toy".into(),
                provenance: Provenance::Loaded,
                seed: None,
            },
            ground_truth: None,
        }
    }

    #[test]
    fn round_trip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let b = bundle();
        save_dataset(&b, dir.path()).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), b);
    }

    #[test]
    fn truncated_features_name_the_file() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&bundle(), dir.path()).unwrap();
        let p = dir.path().join("features.f32");
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("features.f32"), "{err}");
    }

    #[test]
    fn out_of_range_edge_fails_validation_on_load() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&bundle(), dir.path()).unwrap();
        fs::write(dir.path().join("edges.csv"), "src,dst,relation\n0,3,0\n").unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn malformed_edge_record_names_file_and_record() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&bundle(), dir.path()).unwrap();
        fs::write(dir.path().join("edges.csv"), "src,dst,relation\n0,1,0\nx,2,0\n").unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("edges.csv") && err.contains("record 2"), "{err}");
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]
        #[test]
        fn random_bundles_round_trip(
            n in 1usize..10,
            d in 1usize..4,
            raw in proptest::collection::vec((0usize..10, 0usize..10, 0usize..2), 0..25),
            labels in proptest::collection::vec(-1i8..=1, 10),
            feats in proptest::collection::vec(proptest::num::f32::NORMAL | proptest::num::f32::ZERO, 40),
            seed in proptest::option::of(proptest::prelude::any::<u64>()),
        ) {
            let mut g = toy_graph(n, &[], &labels[..n]);
            g.relations = vec!["follow".into(), "reply".into()];
            g.edges = vec![Vec::new(), Vec::new()];
            for (s, t, r) in raw {
                if s < n && t < n && s != t {
                    g.edges[r].push((s, t));
                }
            }
            g.features = ndarray::Array2::from_shape_fn((n, d), |(i, j)| feats[i * 4 + j]);
            let b = DatasetBundle {
                graph: g,
                metadata: DatasetMetadata { name: "prop".into(), provenance: Provenance::Loaded, seed },
                ground_truth: None,
            };
            let dir = tempfile::tempdir().unwrap();
            save_dataset(&b, dir.path()).unwrap();
            proptest::prop_assert_eq!(load_dataset(dir.path()).unwrap(), b);
        }
    }
}
