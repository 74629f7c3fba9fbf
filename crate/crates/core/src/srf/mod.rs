//! Structured regression forest: an ensemble of binary trees mapping a
//! 108-value appearance descriptor to a motion patch.
//!
//! Internal nodes test a pairwise function of descriptor entries against a
//! threshold; a true response routes to the left child. Leaves store the
//! per-pixel mean of the training patches that reached them, rounded to f32
//! so a saved and reloaded model predicts bit-identical values.

mod model_io;
mod predict;
mod train;

pub use model_io::{load_model, read_model, save_model, write_model};
pub use predict::{predict_dense, predict_image, DensePrediction, MotionOutput};
pub use train::{
    best_split, check_worst_first, grow_tree, node_variance, train_forest,
    train_forest_with_traces, BestSplit, GrownTree, GrowthEvent, GrowthTrace, LeafReason,
};

use thiserror::Error;

use crate::features::{AppearanceDescriptor, FeatureError, MotionPatch, DESCRIPTOR_LEN};
use crate::flowio::FlowError;
use crate::imagecore::ImageError;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("bad forest configuration: {0}")]
    BadConfig(String),
    #[error("tree has no training samples")]
    NoSamples,
    #[error("training samples disagree on patch shape")]
    MixedShapes,
    #[error("sample index out of range")]
    BadSampleIndex,
    #[error("image is {width}x{height} but the patch needs at least {patch}x{patch}")]
    PatchTooLarge {
        patch: usize,
        width: usize,
        height: usize,
    },
    #[error("model io on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("model io: {0}")]
    Stream(#[from] std::io::Error),
    #[error("not a forest model file")]
    BadMagic,
    #[error("unsupported model version {0}")]
    BadVersion(u8),
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// The four node test families over descriptor entries a and b.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitType {
    /// F = d[a]
    Single,
    /// F = d[a] + d[b]
    Sum,
    /// F = d[a] - d[b]
    Diff,
    /// F = |d[a] - d[b]|
    AbsDiff,
}

impl SplitType {
    pub fn code(&self) -> u8 {
        match self {
            SplitType::Single => 0,
            SplitType::Sum => 1,
            SplitType::Diff => 2,
            SplitType::AbsDiff => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<SplitType> {
        match code {
            0 => Some(SplitType::Single),
            1 => Some(SplitType::Sum),
            2 => Some(SplitType::Diff),
            3 => Some(SplitType::AbsDiff),
            _ => None,
        }
    }
}

/// One learned node test. `index_b` is ignored for `Single`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRecord {
    pub split_type: SplitType,
    pub index_a: u16,
    pub index_b: u16,
    pub threshold: f64,
}

impl SplitRecord {
    /// Raw test value for a descriptor.
    #[inline]
    pub fn response(&self, d: &AppearanceDescriptor) -> f64 {
        let a = d.get(self.index_a as usize);
        match self.split_type {
            SplitType::Single => a,
            SplitType::Sum => a + d.get(self.index_b as usize),
            SplitType::Diff => a - d.get(self.index_b as usize),
            SplitType::AbsDiff => (a - d.get(self.index_b as usize)).abs(),
        }
    }

    /// True routes to the left child.
    #[inline]
    pub fn respond(&self, d: &AppearanceDescriptor) -> bool {
        self.response(d) >= self.threshold
    }

    pub fn validate(&self) -> Result<(), ForestError> {
        if (self.index_a as usize) >= DESCRIPTOR_LEN || (self.index_b as usize) >= DESCRIPTOR_LEN {
            return Err(ForestError::Corrupt(
                "split index out of descriptor range".into(),
            ));
        }
        if !self.threshold.is_finite() {
            return Err(ForestError::Corrupt("split threshold not finite".into()));
        }
        Ok(())
    }
}

/// Tree node; children are indices into the owning tree's node vector.
#[derive(Clone, Debug, PartialEq)]
pub enum TreeNode {
    Split {
        record: SplitRecord,
        left: u32,
        right: u32,
    },
    Leaf {
        mean: MotionPatch,
    },
}

/// Where a tree's training data came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TreeProvenance {
    pub seed: u64,
    pub sample_count: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
    pub provenance: TreeProvenance,
}

impl Tree {
    /// Walks from the root to a leaf and returns its stored mean patch.
    pub fn predict(&self, descriptor: &AppearanceDescriptor) -> &MotionPatch {
        let mut cur = 0usize;
        loop {
            match &self.nodes[cur] {
                TreeNode::Split {
                    record,
                    left,
                    right,
                } => {
                    cur = if record.respond(descriptor) {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
                TreeNode::Leaf { mean } => return mean,
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf { .. }))
            .count()
    }
}

/// Training hyper-parameters. Defaults match the reference setup.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForestConfig {
    pub trees: usize,
    /// Growth stops once a tree holds this many terminal nodes.
    pub max_leaves: usize,
    /// Nodes whose variance falls below this become leaves.
    pub var_threshold: f64,
    /// Random node tests drawn per split search.
    pub split_candidates: usize,
    /// Random thresholds drawn per candidate test.
    pub thresholds_per_candidate: usize,
    /// Frame pairs drawn (without replacement) for each tree.
    pub pairs_per_tree: usize,
    /// Smallest allowed child during a split search.
    pub min_child: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            trees: 11,
            max_leaves: 1000,
            var_threshold: 0.1,
            split_candidates: 50,
            thresholds_per_candidate: 10,
            pairs_per_tree: 20,
            min_child: 5,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<(), ForestError> {
        let bad = |msg: &str| Err(ForestError::BadConfig(msg.into()));
        if self.trees == 0 {
            return bad("trees must be at least 1");
        }
        if self.max_leaves == 0 {
            return bad("max_leaves must be at least 1");
        }
        if !(self.var_threshold.is_finite() && self.var_threshold >= 0.0) {
            return bad("var_threshold must be finite and non-negative");
        }
        if self.split_candidates == 0 {
            return bad("split_candidates must be at least 1");
        }
        if self.thresholds_per_candidate == 0 {
            return bad("thresholds_per_candidate must be at least 1");
        }
        if self.pairs_per_tree == 0 {
            return bad("pairs_per_tree must be at least 1");
        }
        if self.min_child == 0 {
            return bad("min_child must be at least 1");
        }
        Ok(())
    }
}

/// A trained ensemble plus the patch shape it was trained on.
#[derive(Clone, Debug, PartialEq)]
pub struct StructuredForest {
    pub config: ForestConfig,
    pub patch_size: usize,
    pub label_dims: usize,
    pub trees: Vec<Tree>,
}

impl StructuredForest {
    /// Per-tree leaf patches for one descriptor.
    pub fn predict_patches(&self, descriptor: &AppearanceDescriptor) -> Vec<&MotionPatch> {
        self.trees.iter().map(|t| t.predict(descriptor)).collect()
    }
}
