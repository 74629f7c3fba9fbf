//! Forest model files.
//!
//! Little-endian layout, version 1:
//!
//! ```text
//! magic "SRFM" | u8 version
//! u32 trees | u32 max_leaves | f64 var_threshold | u32 split_candidates
//! u32 thresholds_per_candidate | u32 pairs_per_tree | u32 min_child | u64 seed
//! u32 patch_size | u32 label_dims
//! per tree:
//!   u64 seed | u32 sample_count | u32 node_count
//!   nodes in pre-order, each tag-prefixed:
//!     tag 0 (split): u8 type | u16 index_a | u16 index_b | f64 threshold
//!     tag 1 (leaf):  patch_size^2 * label_dims f32 values
//! ```
//!
//! Leaf values are stored as f32; training rounds leaf means to f32 when the
//! leaf is created, so a round trip through a model file leaves every
//! prediction bit-identical. Loading rebuilds node ids in pre-order (the
//! file's canonical order), which may differ from the in-memory creation
//! order of a freshly trained forest.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::features::MotionPatch;

use super::{
    ForestConfig, ForestError, SplitRecord, SplitType, StructuredForest, Tree, TreeNode,
    TreeProvenance,
};

const MAGIC: [u8; 4] = *b"SRFM";
const VERSION: u8 = 1;
const TAG_SPLIT: u8 = 0;
const TAG_LEAF: u8 = 1;

fn as_u32(value: usize, what: &str) -> Result<u32, ForestError> {
    u32::try_from(value).map_err(|_| ForestError::BadConfig(format!("{what} exceeds u32 range")))
}

/// Serializes a forest to any writer.
pub fn write_model<W: Write>(forest: &StructuredForest, writer: &mut W) -> Result<(), ForestError> {
    let cfg = &forest.config;
    cfg.validate()?;
    if forest.trees.len() != cfg.trees {
        return Err(ForestError::Corrupt(
            "tree count does not match configuration".into(),
        ));
    }
    writer.write_all(&MAGIC)?;
    writer.write_u8(VERSION)?;
    writer.write_u32::<LittleEndian>(as_u32(cfg.trees, "trees")?)?;
    writer.write_u32::<LittleEndian>(as_u32(cfg.max_leaves, "max_leaves")?)?;
    writer.write_f64::<LittleEndian>(cfg.var_threshold)?;
    writer.write_u32::<LittleEndian>(as_u32(cfg.split_candidates, "split_candidates")?)?;
    writer.write_u32::<LittleEndian>(as_u32(
        cfg.thresholds_per_candidate,
        "thresholds_per_candidate",
    )?)?;
    writer.write_u32::<LittleEndian>(as_u32(cfg.pairs_per_tree, "pairs_per_tree")?)?;
    writer.write_u32::<LittleEndian>(as_u32(cfg.min_child, "min_child")?)?;
    writer.write_u64::<LittleEndian>(cfg.seed)?;
    writer.write_u32::<LittleEndian>(as_u32(forest.patch_size, "patch_size")?)?;
    writer.write_u32::<LittleEndian>(as_u32(forest.label_dims, "label_dims")?)?;
    for tree in &forest.trees {
        writer.write_u64::<LittleEndian>(tree.provenance.seed)?;
        writer.write_u32::<LittleEndian>(tree.provenance.sample_count)?;
        writer.write_u32::<LittleEndian>(as_u32(tree.nodes.len(), "node count")?)?;
        let mut visited = vec![false; tree.nodes.len()];
        write_node(tree, 0, writer, &mut visited)?;
        if visited.iter().any(|v| !v) {
            return Err(ForestError::Corrupt(
                "tree has nodes unreachable from the root".into(),
            ));
        }
    }
    Ok(())
}

fn write_node<W: Write>(
    tree: &Tree,
    index: usize,
    writer: &mut W,
    visited: &mut [bool],
) -> Result<(), ForestError> {
    let Some(node) = tree.nodes.get(index) else {
        return Err(ForestError::Corrupt("child index out of range".into()));
    };
    if std::mem::replace(&mut visited[index], true) {
        return Err(ForestError::Corrupt("node referenced twice".into()));
    }
    match node {
        TreeNode::Split {
            record,
            left,
            right,
        } => {
            writer.write_u8(TAG_SPLIT)?;
            writer.write_u8(record.split_type.code())?;
            writer.write_u16::<LittleEndian>(record.index_a)?;
            writer.write_u16::<LittleEndian>(record.index_b)?;
            writer.write_f64::<LittleEndian>(record.threshold)?;
            write_node(tree, *left as usize, writer, visited)?;
            write_node(tree, *right as usize, writer, visited)?;
        }
        TreeNode::Leaf { mean } => {
            writer.write_u8(TAG_LEAF)?;
            for &v in mean.values() {
                writer.write_f32::<LittleEndian>(v as f32)?;
            }
        }
    }
    Ok(())
}

/// Saves a forest to a file.
pub fn save_model<P: AsRef<Path>>(forest: &StructuredForest, path: P) -> Result<(), ForestError> {
    let path = path.as_ref();
    let with_path = |e: ForestError| match e {
        ForestError::Stream(source) => ForestError::Io {
            path: path.display().to_string(),
            source,
        },
        other => other,
    };
    let file = File::create(path).map_err(|source| ForestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut writer = BufWriter::new(file);
    write_model(forest, &mut writer).map_err(with_path)?;
    writer.flush().map_err(|source| ForestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}

fn corrupt(msg: &str) -> ForestError {
    ForestError::Corrupt(msg.into())
}

/// Deserializes a forest from any reader, validating structure and values.
pub fn read_model<R: Read>(reader: &mut R) -> Result<StructuredForest, ForestError> {
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(ForestError::BadMagic);
    }
    let version = reader.read_u8()?;
    if version != VERSION {
        return Err(ForestError::BadVersion(version));
    }
    let config = ForestConfig {
        trees: reader.read_u32::<LittleEndian>()? as usize,
        max_leaves: reader.read_u32::<LittleEndian>()? as usize,
        var_threshold: reader.read_f64::<LittleEndian>()?,
        split_candidates: reader.read_u32::<LittleEndian>()? as usize,
        thresholds_per_candidate: reader.read_u32::<LittleEndian>()? as usize,
        pairs_per_tree: reader.read_u32::<LittleEndian>()? as usize,
        min_child: reader.read_u32::<LittleEndian>()? as usize,
        seed: reader.read_u64::<LittleEndian>()?,
    };
    config
        .validate()
        .map_err(|e| ForestError::Corrupt(format!("bad stored configuration: {e}")))?;
    let patch_size = reader.read_u32::<LittleEndian>()? as usize;
    let label_dims = reader.read_u32::<LittleEndian>()? as usize;
    if patch_size < 3 || patch_size % 2 == 0 || patch_size > 9999 {
        return Err(corrupt("patch size must be odd, in 3..=9999"));
    }
    if label_dims != 2 && label_dims != 4 {
        return Err(corrupt("label dims must be 2 or 4"));
    }
    let leaf_len = patch_size * patch_size * label_dims;
    let mut trees = Vec::with_capacity(config.trees);
    for _ in 0..config.trees {
        let seed = reader.read_u64::<LittleEndian>()?;
        let sample_count = reader.read_u32::<LittleEndian>()?;
        let node_count = reader.read_u32::<LittleEndian>()?;
        if node_count == 0 || node_count % 2 == 0 {
            // A binary tree always has an odd node count.
            return Err(corrupt("node count must be odd and positive"));
        }
        let mut nodes = Vec::with_capacity(node_count as usize);
        let mut remaining = node_count;
        read_node(
            reader,
            &mut nodes,
            &mut remaining,
            patch_size * patch_size,
            label_dims,
            leaf_len,
        )?;
        if remaining != 0 {
            return Err(corrupt("fewer nodes than declared"));
        }
        trees.push(Tree {
            nodes,
            provenance: TreeProvenance { seed, sample_count },
        });
    }
    let mut probe = [0u8; 1];
    if reader.read(&mut probe)? != 0 {
        return Err(corrupt("trailing bytes after last tree"));
    }
    Ok(StructuredForest {
        config,
        patch_size,
        label_dims,
        trees,
    })
}

fn read_node<R: Read>(
    reader: &mut R,
    nodes: &mut Vec<TreeNode>,
    remaining: &mut u32,
    pixels: usize,
    dims: usize,
    leaf_len: usize,
) -> Result<u32, ForestError> {
    if *remaining == 0 {
        return Err(corrupt("more nodes than declared"));
    }
    *remaining -= 1;
    let tag = reader.read_u8()?;
    match tag {
        TAG_SPLIT => {
            let code = reader.read_u8()?;
            let split_type =
                SplitType::from_code(code).ok_or_else(|| corrupt("unknown split type code"))?;
            let record = SplitRecord {
                split_type,
                index_a: reader.read_u16::<LittleEndian>()?,
                index_b: reader.read_u16::<LittleEndian>()?,
                threshold: reader.read_f64::<LittleEndian>()?,
            };
            record.validate()?;
            let index = nodes.len() as u32;
            nodes.push(TreeNode::Leaf {
                mean: MotionPatch::new(1, 1, vec![0.0]).expect("placeholder"),
            });
            let left = read_node(reader, nodes, remaining, pixels, dims, leaf_len)?;
            let right = read_node(reader, nodes, remaining, pixels, dims, leaf_len)?;
            nodes[index as usize] = TreeNode::Split {
                record,
                left,
                right,
            };
            Ok(index)
        }
        TAG_LEAF => {
            let mut values = Vec::with_capacity(leaf_len);
            for _ in 0..leaf_len {
                values.push(f64::from(reader.read_f32::<LittleEndian>()?));
            }
            let mean = MotionPatch::new(pixels, dims, values)
                .map_err(|_| corrupt("leaf holds non-finite values"))?;
            let index = nodes.len() as u32;
            nodes.push(TreeNode::Leaf { mean });
            Ok(index)
        }
        _ => Err(corrupt("bad node tag")),
    }
}

/// Loads a forest from a file.
pub fn load_model<P: AsRef<Path>>(path: P) -> Result<StructuredForest, ForestError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| ForestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = BufReader::new(file);
    read_model(&mut reader).map_err(|e| match e {
        ForestError::Stream(source) => ForestError::Io {
            path: path.display().to_string(),
            source,
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{
        build_training_set, AppearanceDescriptor, SamplingConfig, DESCRIPTOR_LEN,
    };
    use crate::flowio::FlowField;
    use crate::imagecore::{CannyParams, ImageBuffer};
    use crate::srf::train_forest;

    fn test_canny() -> CannyParams {
        CannyParams {
            sigma: 1.4,
            low: 0.04,
            high: 0.1,
        }
    }

    fn trained_forest() -> StructuredForest {
        let frame = ImageBuffer::from_fn(24, 24, 3, |x, y, c| {
            if (x / 6 + y / 6) % 2 == 0 {
                [1.0, 0.9, 0.3][c]
            } else {
                [0.0, 0.1, 0.6][c]
            }
        })
        .unwrap();
        let flow = FlowField::new(
            24,
            24,
            (0..576).map(|i| ((i % 24) / 8) as f64 - 1.0).collect(),
            vec![0.25; 576],
        )
        .unwrap();
        let corpus = build_training_set(
            &[(frame, flow)],
            &SamplingConfig {
                patch_size: Some(5),
                max_per_frame: 60,
                canny: test_canny(),
                ..SamplingConfig::default()
            },
        )
        .unwrap();
        train_forest(
            &corpus,
            &ForestConfig {
                trees: 3,
                max_leaves: 6,
                seed: 9,
                ..ForestConfig::default()
            },
        )
        .unwrap()
    }

    fn model_bytes(forest: &StructuredForest) -> Vec<u8> {
        let mut buf = Vec::new();
        write_model(forest, &mut buf).unwrap();
        buf
    }

    #[test]
    fn round_trip_is_byte_idempotent_and_structure_preserving() {
        // Loading renumbers nodes into pre-order, so compare the canonical
        // byte stream and the structural invariants rather than node ids.
        let forest = trained_forest();
        let bytes = model_bytes(&forest);
        let loaded = read_model(&mut bytes.as_slice()).unwrap();
        assert_eq!(bytes, model_bytes(&loaded));
        assert_eq!(forest.config, loaded.config);
        assert_eq!(forest.patch_size, loaded.patch_size);
        assert_eq!(forest.label_dims, loaded.label_dims);
        assert_eq!(forest.trees.len(), loaded.trees.len());
        for (a, b) in forest.trees.iter().zip(&loaded.trees) {
            assert_eq!(a.provenance, b.provenance);
            assert_eq!(a.nodes.len(), b.nodes.len());
            assert_eq!(a.leaf_count(), b.leaf_count());
        }
    }

    #[test]
    fn round_trip_through_a_file_keeps_predictions_bit_identical() {
        let forest = trained_forest();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.srf");
        save_model(&forest, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        for k in 0..20 {
            let d = AppearanceDescriptor::new(
                (0..DESCRIPTOR_LEN)
                    .map(|i| ((i * 31 + k * 7) % 100) as f64 / 100.0)
                    .collect(),
            )
            .unwrap();
            for (a, b) in forest.trees.iter().zip(&loaded.trees) {
                let pa = a.predict(&d);
                let pb = b.predict(&d);
                assert_eq!(pa.values(), pb.values());
            }
        }
    }

    #[test]
    fn header_is_magic_then_version() {
        let bytes = model_bytes(&trained_forest());
        assert_eq!(&bytes[..4], b"SRFM");
        assert_eq!(bytes[4], 1);
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let mut bytes = model_bytes(&trained_forest());
        bytes[0] = b'X';
        assert!(matches!(
            read_model(&mut bytes.as_slice()),
            Err(ForestError::BadMagic)
        ));
        let mut bytes = model_bytes(&trained_forest());
        bytes[4] = 9;
        assert!(matches!(
            read_model(&mut bytes.as_slice()),
            Err(ForestError::BadVersion(9))
        ));
    }

    #[test]
    fn rejects_truncation_and_trailing_bytes() {
        let bytes = model_bytes(&trained_forest());
        let cut = &bytes[..bytes.len() - 3];
        assert!(read_model(&mut &cut[..]).is_err());
        let mut padded = bytes.clone();
        padded.push(0);
        assert!(matches!(
            read_model(&mut padded.as_slice()),
            Err(ForestError::Corrupt(msg)) if msg.contains("trailing")
        ));
    }

    #[test]
    fn rejects_bad_node_tag() {
        let mut bytes = model_bytes(&trained_forest());
        // First node tag sits right after the fixed header (5), the config
        // block (40), the patch block (8) and one tree header (16).
        let off = 5 + 40 + 8 + 16;
        assert!(bytes[off] == TAG_SPLIT || bytes[off] == TAG_LEAF);
        bytes[off] = 7;
        assert!(matches!(
            read_model(&mut bytes.as_slice()),
            Err(ForestError::Corrupt(msg)) if msg.contains("tag")
        ));
    }

    fn hand_forest(threshold: f64) -> StructuredForest {
        let leaf = || TreeNode::Leaf {
            mean: MotionPatch::new(9, 2, vec![0.5; 18]).unwrap(),
        };
        StructuredForest {
            config: ForestConfig {
                trees: 1,
                ..ForestConfig::default()
            },
            patch_size: 3,
            label_dims: 2,
            trees: vec![Tree {
                nodes: vec![
                    TreeNode::Split {
                        record: SplitRecord {
                            split_type: SplitType::Diff,
                            index_a: 3,
                            index_b: 100,
                            threshold,
                        },
                        left: 1,
                        right: 2,
                    },
                    leaf(),
                    leaf(),
                ],
                provenance: TreeProvenance {
                    seed: 1,
                    sample_count: 10,
                },
            }],
        }
    }

    #[test]
    fn rejects_non_finite_thresholds_on_read() {
        let bytes = model_bytes(&hand_forest(f64::NAN));
        assert!(matches!(
            read_model(&mut bytes.as_slice()),
            Err(ForestError::Corrupt(msg)) if msg.contains("threshold")
        ));
        let bytes = model_bytes(&hand_forest(0.25));
        assert!(read_model(&mut bytes.as_slice()).is_ok());
    }

    #[test]
    fn write_rejects_malformed_tree_structure() {
        let mut forest = hand_forest(0.1);
        // Point both children at the same node.
        forest.trees[0].nodes[0] = TreeNode::Split {
            record: SplitRecord {
                split_type: SplitType::Single,
                index_a: 0,
                index_b: 0,
                threshold: 0.5,
            },
            left: 1,
            right: 1,
        };
        let mut buf = Vec::new();
        assert!(matches!(
            write_model(&forest, &mut buf),
            Err(ForestError::Corrupt(_))
        ));
    }
}
