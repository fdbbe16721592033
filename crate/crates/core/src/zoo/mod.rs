//! The module zoo: stem, the seven reasoning modules and the answer classifier.
//!
//! Feature-reading modules take the stem encoding (`d x R x C`) plus an
//! attention mask (`1 x R x C`). Attention, Relate and Same emit a new mask;
//! Query and Compare emit an encoding that the classifier turns into logits.

mod bank;
mod modules;

pub use bank::{
    BankId, BankRegistry, GradAccumulator, ModelConfig, ParamBank, CLASSIFIER_TOKEN, STEM_TOKEN,
};
pub use modules::{
    mask_argmax, run_and, run_attention, run_classifier, run_compare, run_or, run_query,
    run_relate, run_same, run_stem, ModuleCtx, RELATE_DILATIONS,
};

use serde::{Deserialize, Serialize};

/// What a value flowing between modules represents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ValueKind {
    Image,
    Stem,
    Attention,
    Encoding,
    Logits,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModuleKind {
    Attention,
    Relate,
    Same,
    Query,
    Compare,
    And,
    Or,
    Stem,
    Classifier,
}

/// Input and output kinds of one module type.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModuleSignature {
    pub kind: ModuleKind,
    pub inputs: Vec<ValueKind>,
    pub output: ValueKind,
}

impl ModuleKind {
    pub fn signature(self) -> ModuleSignature {
        use ValueKind::*;
        let (inputs, output) = match self {
            ModuleKind::Attention | ModuleKind::Relate | ModuleKind::Same => {
                (vec![Attention, Stem], Attention)
            }
            ModuleKind::Query => (vec![Attention, Stem], Encoding),
            ModuleKind::Compare => (vec![Encoding, Encoding], Encoding),
            ModuleKind::And | ModuleKind::Or => (vec![Attention, Attention], Attention),
            ModuleKind::Stem => (vec![Image], Stem),
            ModuleKind::Classifier => (vec![Encoding], Logits),
        };
        ModuleSignature {
            kind: self,
            inputs,
            output,
        }
    }

    pub fn has_parameters(self) -> bool {
        !matches!(self, ModuleKind::And | ModuleKind::Or)
    }

    /// Modules whose mask outputs are subject to the attention penalty.
    pub fn emits_learned_mask(self) -> bool {
        matches!(self, ModuleKind::Attention | ModuleKind::Relate | ModuleKind::Same)
    }
}
