//! Ablation variants and generation-request assembly.

use alloc::string::String;
use core::fmt;
use core::str::FromStr;

use crate::adapter::{merge_adapters, AdapterWeightMap};
use crate::error::{Error, Result};
use crate::identity::{merge_identities, IdentityMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    Default,
    A,
    B,
    C,
    D,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Default, Variant::A, Variant::B, Variant::C, Variant::D];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Default => "default",
            Variant::A => "A",
            Variant::B => "B",
            Variant::C => "C",
            Variant::D => "D",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" | "Default" => Ok(Variant::Default),
            "A" | "a" => Ok(Variant::A),
            "B" | "b" => Ok(Variant::B),
            "C" | "c" => Ok(Variant::C),
            "D" | "d" => Ok(Variant::D),
            _ => Err(Error::InvalidRequest("unknown ablation variant")),
        }
    }
}

/// Which conditioning channels a variant uses and how many identity images
/// feed the identity matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationConfig {
    pub variant: Variant,
    /// Identity images per subject; 0 when identity is off.
    pub identity_images_n: usize,
    pub use_adapters: bool,
    pub use_identity: bool,
}

impl AblationConfig {
    pub fn for_variant(variant: Variant) -> Self {
        let (n, use_adapters, use_identity) = match variant {
            Variant::Default => (10, true, true),
            Variant::A => (3, true, true),
            Variant::B => (5, true, true),
            Variant::C => (10, false, true),
            Variant::D => (0, true, false),
        };
        Self {
            variant,
            identity_images_n: n,
            use_adapters,
            use_identity,
        }
    }
}

impl From<Variant> for AblationConfig {
    fn from(v: Variant) -> Self {
        Self::for_variant(v)
    }
}

/// Text and sampler settings shared by every request of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestParams {
    pub prompt: String,
    pub negative_prompt: String,
    pub seed: u64,
    pub steps: u32,
    pub outputs: u32,
    /// Identity interpolation weight (SLERP λ).
    pub identity_lambda: f64,
    /// Adapter merge weight on the first subject.
    pub adapter_alpha: f64,
}

impl Default for RequestParams {
    fn default() -> Self {
        Self {
            prompt: String::from(DEFAULT_PROMPT),
            negative_prompt: String::new(),
            seed: 0,
            steps: 50,
            outputs: 1,
            identity_lambda: 0.5,
            adapter_alpha: 0.5,
        }
    }
}

/// Placeholder generic prompt used when a run does not set one.
pub const DEFAULT_PROMPT: &str =
    "a passport-style frontal photo of a person, neutral expression, plain background";

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub pair_id: String,
    pub merged_adapters: Option<AdapterWeightMap>,
    pub merged_identity: Option<IdentityMatrix>,
    pub prompt: String,
    pub negative_prompt: String,
    pub seed: u64,
    pub steps: u32,
    pub outputs: u32,
}

impl GenerationRequest {
    /// Merges whichever conditioning inputs the variant enables.
    ///
    /// `adapters` and `identities` hold the (subject a, subject b) inputs;
    /// each must be present when the variant uses that channel. Identity
    /// matrices longer than the variant's `n` are truncated to their first
    /// `n` rows.
    pub fn assemble(
        pair_id: &str,
        ablation: &AblationConfig,
        params: &RequestParams,
        adapters: Option<(&AdapterWeightMap, &AdapterWeightMap)>,
        identities: Option<(&IdentityMatrix, &IdentityMatrix)>,
    ) -> Result<Self> {
        if !ablation.use_adapters && !ablation.use_identity {
            return Err(Error::InvalidRequest("no conditioning channel enabled"));
        }
        if params.steps == 0 {
            return Err(Error::InvalidRequest("steps must be positive"));
        }
        if params.outputs == 0 {
            return Err(Error::InvalidRequest("outputs must be at least 1"));
        }

        let merged_adapters = if ablation.use_adapters {
            let (a, b) = adapters.ok_or(Error::InvalidRequest("adapters required by variant"))?;
            Some(merge_adapters(a, b, params.adapter_alpha, pair_id)?)
        } else {
            None
        };
        let merged_identity = if ablation.use_identity {
            let (a, b) = identities.ok_or(Error::InvalidRequest("identities required by variant"))?;
            let n = ablation.identity_images_n;
            let (a, b) = (a.truncated(n)?, b.truncated(n)?);
            Some(merge_identities(&a, &b, params.identity_lambda, pair_id)?)
        } else {
            None
        };

        Ok(Self {
            pair_id: pair_id.into(),
            merged_adapters,
            merged_identity,
            prompt: params.prompt.clone(),
            negative_prompt: params.negative_prompt.clone(),
            seed: params.seed,
            steps: params.steps,
            outputs: params.outputs,
        })
    }

    /// Seed for output `index`: `seed + index`.
    pub fn output_seed(&self, index: u32) -> u64 {
        self.seed.wrapping_add(u64::from(index))
    }
}
