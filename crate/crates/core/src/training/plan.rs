use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Step, StepSet};
use crate::model::ParamGroup;

/// Which granularity modules are trained, and in which step; mirrors the rows
/// of the ablation table.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Gc,
    GcRga,
    GcBfm,
    GcRgaBfm,
    #[default]
    Mia,
    Fine,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [
        Ablation::Gc,
        Ablation::GcRga,
        Ablation::GcBfm,
        Ablation::GcRgaBfm,
        Ablation::Mia,
        Ablation::Fine,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Gc => "gc",
            Ablation::GcRga => "gc_rga",
            Ablation::GcBfm => "gc_bfm",
            Ablation::GcRgaBfm => "gc_rga_bfm",
            Ablation::Mia => "mia",
            Ablation::Fine => "fine",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown ablation {s:?} (expected one of gc, gc_rga, gc_bfm, gc_rga_bfm, mia, fine)"))
    }
}

/// Loss terms active in one training step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepTerms {
    /// Identity classification of I and T.
    pub identity: bool,
    /// Matching on s_G.
    pub global: bool,
    /// Matching on s_I and s_T.
    pub rga: bool,
    /// Matching on s_P and s_N.
    pub bfm: bool,
}

impl StepTerms {
    /// Whether the loss built from these terms depends on `group`.
    pub fn touches(&self, group: ParamGroup) -> bool {
        use ParamGroup::*;
        let global_path = matches!(group, Backbone | GlobalVisualFc | Embedding | Gru | SentenceFc);
        let phrase_path = matches!(group, Backbone | Embedding | Gru | PhraseFc | PartConv);
        (self.identity && (global_path || group == Classifier))
            || (self.global && global_path)
            || (self.rga && (global_path || phrase_path || matches!(group, RgaMlpV | RgaMlpT)))
            || (self.bfm && (phrase_path || matches!(group, BfmMlpV | BfmMlpT)))
    }
}

/// Granularities that receive any training under a plan.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Trained {
    pub global: bool,
    pub rga: bool,
    pub bfm: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepPlan {
    pub ablation: Ablation,
    /// Keep the backbone fixed during step 1.
    pub freeze_backbone_step1: bool,
}

impl StepPlan {
    pub fn new(ablation: Ablation, freeze_backbone_step1: bool) -> Self {
        Self { ablation, freeze_backbone_step1 }
    }

    pub fn steps(&self) -> &'static [Step] {
        match self.ablation {
            Ablation::Mia => &[1, 2, 3],
            Ablation::Fine => &[1],
            _ => &[1, 2],
        }
    }

    pub fn terms(&self, step: Step) -> Option<StepTerms> {
        let (rga2, bfm2) = match self.ablation {
            Ablation::Gc => (false, false),
            Ablation::GcRga | Ablation::Mia => (true, false),
            Ablation::GcBfm => (false, true),
            Ablation::GcRgaBfm => (true, true),
            Ablation::Fine => {
                return (step == 1).then_some(StepTerms { bfm: true, ..StepTerms::default() });
            }
        };
        match step {
            1 => Some(StepTerms { identity: true, ..StepTerms::default() }),
            2 => Some(StepTerms { identity: true, global: true, rga: rga2, bfm: bfm2 }),
            3 if self.ablation == Ablation::Mia => Some(StepTerms { bfm: true, ..StepTerms::default() }),
            _ => None,
        }
    }

    /// Whether `step` trains only the two fine-grained adapters.
    fn is_adapter_step(&self, step: Step) -> bool {
        self.ablation == Ablation::Mia && step == 3
    }

    pub fn trainable(&self, group: ParamGroup) -> StepSet {
        use ParamGroup::*;
        let mut set = StepSet::EMPTY;
        for &step in self.steps() {
            let terms = self.terms(step).unwrap_or_default();
            let used = if self.is_adapter_step(step) {
                matches!(group, BfmMlpV | BfmMlpT)
            } else {
                terms.touches(group)
            };
            if used && !(step == 1 && group == Backbone && self.freeze_backbone_step1) {
                set.insert(step);
            }
        }
        set
    }

    pub fn trained(&self) -> Trained {
        let mut t = Trained { global: false, rga: false, bfm: false };
        for &step in self.steps() {
            let terms = self.terms(step).unwrap_or_default();
            t.global |= terms.global || terms.identity;
            t.rga |= terms.rga;
            t.bfm |= terms.bfm;
        }
        t
    }
}
