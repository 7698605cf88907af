//! Zero-shot and low-shot splitting of coarse categories in a trained
//! classifier head.
//!
//! A coarse row `w_c` is replaced by one row per subcategory, built from
//! modifier vectors mined from fine categories that already share a base
//! concept. All other rows are kept bit for bit.

pub mod alignment;
pub mod dataset;
pub mod dictionary;
pub mod doc;
pub mod editor;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod head;
pub mod lowshot;
pub mod optim;
pub mod softmax;
pub mod synth;
pub mod taxonomy;
pub mod tensor;

pub use alignment::{AlignConfig, AlignmentModel, Composition};
pub use dataset::{FeatureDataset, Role};
pub use dictionary::{build_dictionary, ModifierDictionary};
pub use editor::{split_head, SplitDeps};
pub use embedding::TextEmbeddingTable;
pub use error::{Error, Result};
pub use eval::{aggregate, EvalReport, SplitMetrics};
pub use head::{ClassifierHead, EditMethod, EditedHead};
pub use lowshot::{finetune_split, FinetuneConfig, Scope};
pub use synth::{generate, SynthBundle, SynthConfig};
pub use taxonomy::{SplitSpec, Taxonomy};
pub use tensor::Tensor;
