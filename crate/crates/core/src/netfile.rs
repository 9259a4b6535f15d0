//! Versioned JSON container for networks and cached datasets.
//!
//! ```json
//! {"format_version":1,"input_dim":2,
//!  "layers":[{"rows":3,"cols":2,"relu":true,"weights":[...],"bias":[...]}]}
//! ```
//!
//! Floats are written in the shortest form that parses back to the same
//! `f64`, so a save/load cycle is bit-exact. On read, the strings `"NaN"`,
//! `"inf"` and `"-inf"` are accepted as numbers so that a non-finite
//! parameter surfaces as a validation error instead of a syntax error.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Category, LabeledSet};
use crate::error::{Error, Result};
use crate::model::{Layer, Matrix, Network};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum FileFloat {
    Num(f64),
    Text(String),
}

impl FileFloat {
    fn value(&self, field: &str) -> Result<f64> {
        match self {
            FileFloat::Num(v) => Ok(*v),
            FileFloat::Text(s) => {
                s.parse().map_err(|_| Error::parse(field.to_string(), 0, format!("not a number: {s:?}")))
            }
        }
    }
}

fn values(xs: &[FileFloat], field: &str) -> Result<Vec<f64>> {
    xs.iter().map(|v| v.value(field)).collect()
}

fn to_file(xs: &[f64]) -> Vec<FileFloat> {
    xs.iter().map(|&v| FileFloat::Num(v)).collect()
}

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    rows: usize,
    cols: usize,
    relu: bool,
    weights: Vec<FileFloat>,
    bias: Vec<FileFloat>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDoc {
    format_version: u32,
    input_dim: usize,
    layers: Vec<LayerDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetDoc {
    format_version: u32,
    category: Category,
    dim: usize,
    count: usize,
    points: Vec<FileFloat>,
    labels: Option<Vec<u8>>,
}

/// Converts a serde_json error (line/column) into a byte offset.
fn json_error(text: &str, context: &str, e: serde_json::Error) -> Error {
    let offset = if e.line() == 0 {
        0
    } else {
        text.split_inclusive('\n').take(e.line() - 1).map(str::len).sum::<usize>() + e.column().saturating_sub(1)
    };
    Error::parse(context, offset, e.to_string())
}

fn check_version(v: u32, context: &str) -> Result<()> {
    if v != FORMAT_VERSION {
        return Err(Error::parse(
            context,
            0,
            format!("format_version {v} is not supported (expected {FORMAT_VERSION})"),
        ));
    }
    Ok(())
}

pub fn network_to_string(net: &Network) -> String {
    let doc = NetworkDoc {
        format_version: FORMAT_VERSION,
        input_dim: net.input_dim(),
        layers: net
            .layers()
            .iter()
            .map(|l| LayerDoc {
                rows: l.out_width(),
                cols: l.in_width(),
                relu: l.relu(),
                weights: to_file(l.weights().as_slice()),
                bias: to_file(l.bias()),
            })
            .collect(),
    };
    serde_json::to_string(&doc).expect("network serialization cannot fail") + "\n"
}

pub fn network_from_str(text: &str) -> Result<Network> {
    let doc: NetworkDoc = serde_json::from_str(text).map_err(|e| json_error(text, "network", e))?;
    check_version(doc.format_version, "network")?;
    let layers = doc
        .layers
        .iter()
        .enumerate()
        .map(|(k, l)| {
            let field = format!("layers[{k}]");
            let weights = Matrix::from_row_major(l.rows, l.cols, values(&l.weights, &field)?)
                .map_err(|e| Error::InvalidNetwork(format!("{field}: {e}")))?;
            Layer::new(weights, values(&l.bias, &field)?, l.relu)
                .map_err(|e| Error::InvalidNetwork(format!("{field}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Network::new(doc.input_dim, layers)
}

pub fn save_network(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, network_to_string(net)).map_err(|e| Error::io(path, e))
}

pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    network_from_str(&text)
}

pub fn dataset_to_string(set: &LabeledSet) -> String {
    let doc = DatasetDoc {
        format_version: FORMAT_VERSION,
        category: set.category,
        dim: set.dim(),
        count: set.len(),
        points: set.points.iter().flatten().map(|&v| FileFloat::Num(v)).collect(),
        labels: set.labels.clone(),
    };
    serde_json::to_string(&doc).expect("dataset serialization cannot fail") + "\n"
}

pub fn dataset_from_str(text: &str) -> Result<LabeledSet> {
    let doc: DatasetDoc = serde_json::from_str(text).map_err(|e| json_error(text, "dataset", e))?;
    check_version(doc.format_version, "dataset")?;
    let flat = values(&doc.points, "points")?;
    if flat.len() != doc.dim * doc.count || (doc.count > 0 && doc.dim == 0) {
        return Err(Error::InvalidArgument(format!(
            "dataset declares {}x{} points but holds {} values",
            doc.count,
            doc.dim,
            flat.len()
        )));
    }
    let points = if doc.dim == 0 { Vec::new() } else { flat.chunks(doc.dim).map(<[f64]>::to_vec).collect() };
    LabeledSet::new(points, doc.labels, doc.category)
}

pub fn save_dataset(set: &LabeledSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, dataset_to_string(set)).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<LabeledSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    dataset_from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::random_network;
    use proptest::prelude::*;

    #[test]
    fn round_trip_file() {
        let net = random_network(&[2, 3, 1], 7, 1.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("n.net");
        save_network(&net, &path).unwrap();
        assert_eq!(load_network(&path).unwrap(), net);
    }

    #[test]
    fn mismatched_bias_is_validation_error() {
        let text = r#"{"format_version":1,"input_dim":1,"layers":[{"rows":1,"cols":1,"relu":true,"weights":[1.0],"bias":[0.0,1.0]}]}"#;
        assert!(matches!(network_from_str(text), Err(Error::InvalidNetwork(_))));
    }

    #[test]
    fn non_finite_weight_is_validation_error() {
        for bad in [r#""NaN""#, r#""inf""#, r#""-inf""#] {
            let text = format!(
                r#"{{"format_version":1,"input_dim":1,"layers":[{{"rows":1,"cols":1,"relu":true,"weights":[{bad}],"bias":[0.0]}}]}}"#
            );
            assert!(matches!(network_from_str(&text), Err(Error::InvalidNetwork(_))), "{bad}");
        }
    }

    #[test]
    fn malformed_reports_offset() {
        let text = "{\"format_version\":1,\n\"input_dim\": x}";
        match network_from_str(text) {
            Err(Error::Parse { offset, .. }) => assert_eq!(&text[offset..offset + 1], "x"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            network_from_str(r#"{"format_version":2,"input_dim":1,"layers":[]}"#),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn dataset_round_trip() {
        let set =
            LabeledSet::new(vec![vec![0.1, 0.2], vec![1.0 / 3.0, 0.0]], Some(vec![0, 1]), Category::Train).unwrap();
        let back = dataset_from_str(&dataset_to_string(&set)).unwrap();
        assert_eq!(back.points, set.points);
        assert_eq!(back.labels, set.labels);
        assert_eq!(back.category, Category::Train);
    }

    proptest! {
        #[test]
        fn bit_exact_round_trip(seed in any::<u64>(), scale in 1e-300f64..1e200) {
            let net = random_network(&[3, 4, 2], seed, scale).unwrap();
            let back = network_from_str(&network_to_string(&net)).unwrap();
            for (a, b) in net.layers().iter().zip(back.layers()) {
                for (x, y) in a.weights().as_slice().iter().zip(b.weights().as_slice()) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
                for (x, y) in a.bias().iter().zip(b.bias()) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }
}
