//! The fully enumerated part space, its rule-derived ground truth and the
//! token-level view the sequence model consumes.

mod dataset;
mod rules;
mod split;
pub mod vocab;

use std::fmt;

use serde::{Deserialize, Serialize};

pub(crate) use dataset::write_atomic as dataset_write_atomic;
pub use dataset::{build_dataset, Dataset, Provenance, Record, RULE_VERSION};
pub use rules::plan_feasible_chains;
pub use split::{split_dataset, Split, SplitManifest, VAL_FRACTION};
pub use vocab::{detokenize, tokenize, Token, Vocabulary, BOS, EOS, PAD, SEP};

/// Number of distinct part encodings: 4·4·2·4·4·4.
pub const N_PARTS: usize = 2048;
pub const MIN_CHAIN_LEN: usize = 2;
pub const MAX_CHAIN_LEN: usize = 8;
pub const N_ATTRIBUTES: usize = 6;

macro_rules! attribute_enum {
    ($(#[$meta:meta])* $name:ident, $key:literal { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];
            pub const KEY: &'static str = $key;

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }

            pub fn index(self) -> usize {
                self as usize
            }

            pub fn from_index(i: usize) -> Option<Self> {
                Self::ALL.get(i).copied()
            }

            pub fn parse(text: &str) -> Option<Self> {
                Self::ALL.iter().copied().find(|v| v.as_str() == text)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

attribute_enum!(Geometry, "geometry" {
    Prismatic => "prismatic",
    Rotational => "rotational",
    Freeform => "freeform",
    ThinWalled => "thin_walled",
});

attribute_enum!(Holes, "holes" {
    None => "none",
    Small => "small",
    LargePlain => "large_plain",
    LargeFunctional => "large_functional",
});

attribute_enum!(Threads, "external_threads" {
    Yes => "yes",
    No => "no",
});

attribute_enum!(SurfaceFinish, "surface_finish" {
    Coarse => "coarse",
    Medium => "medium",
    Good => "good",
    Fine => "fine",
});

attribute_enum!(Tolerance, "tolerance" {
    Coarse => "coarse",
    Standard => "standard",
    Medium => "medium",
    Tight => "tight",
});

attribute_enum!(BatchSize, "batch_size" {
    Single => "single",
    Small => "small",
    Medium => "medium",
    Large => "large",
});

attribute_enum!(
    /// Manufacturing operations, in vocabulary order.
    Operation, "operation" {
    SandCasting => "sand_casting",
    InvestmentCasting => "investment_casting",
    Turning => "turning",
    Milling => "milling",
    FiveAxisMilling => "five_axis_milling",
    Drilling => "drilling",
    Boring => "boring",
    Tapping => "tapping",
    ThreadMilling => "thread_milling",
    Grinding => "grinding",
    Polishing => "polishing",
    Deburring => "deburring",
});

/// Cardinalities of the six attributes, in encoding order.
pub const ATTRIBUTE_CARDINALITIES: [usize; N_ATTRIBUTES] = [4, 4, 2, 4, 4, 4];

/// Categorical description of a part. Field order is the lexicographic
/// order used by [`enumerate_parts`] and by the token layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PartEncoding {
    pub geometry: Geometry,
    pub holes: Holes,
    pub external_threads: Threads,
    pub surface_finish: SurfaceFinish,
    pub tolerance: Tolerance,
    pub batch_size: BatchSize,
}

impl PartEncoding {
    /// Per-attribute value indices, in field order.
    pub fn digits(&self) -> [usize; N_ATTRIBUTES] {
        [
            self.geometry.index(),
            self.holes.index(),
            self.external_threads.index(),
            self.surface_finish.index(),
            self.tolerance.index(),
            self.batch_size.index(),
        ]
    }

    pub fn from_digits(d: [usize; N_ATTRIBUTES]) -> Option<Self> {
        Some(PartEncoding {
            geometry: Geometry::from_index(d[0])?,
            holes: Holes::from_index(d[1])?,
            external_threads: Threads::from_index(d[2])?,
            surface_finish: SurfaceFinish::from_index(d[3])?,
            tolerance: Tolerance::from_index(d[4])?,
            batch_size: BatchSize::from_index(d[5])?,
        })
    }

    /// Mixed-radix position in the lexicographic enumeration.
    pub fn index(&self) -> usize {
        self.digits()
            .iter()
            .zip(ATTRIBUTE_CARDINALITIES)
            .fold(0, |acc, (&d, card)| acc * card + d)
    }

    pub fn from_index(mut index: usize) -> Option<Self> {
        if index >= N_PARTS {
            return None;
        }
        let mut d = [0; N_ATTRIBUTES];
        for (slot, card) in d.iter_mut().zip(ATTRIBUTE_CARDINALITIES).rev() {
            *slot = index % card;
            index /= card;
        }
        Self::from_digits(d)
    }
}

impl fmt::Display for PartEncoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}, {}, {}, {})",
            self.geometry,
            self.holes,
            self.external_threads,
            self.surface_finish,
            self.tolerance,
            self.batch_size
        )
    }
}

/// All 2048 encodings in lexicographic attribute order.
pub fn enumerate_parts() -> Vec<PartEncoding> {
    (0..N_PARTS)
        .map(|i| PartEncoding::from_index(i).expect("index below N_PARTS"))
        .collect()
}

/// An ordered list of operations, 2 to 8 long, with no special tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<Operation>", into = "Vec<Operation>")]
pub struct ProcessChain(Vec<Operation>);

impl ProcessChain {
    pub fn new(ops: Vec<Operation>) -> crate::Result<Self> {
        if !(MIN_CHAIN_LEN..=MAX_CHAIN_LEN).contains(&ops.len()) {
            return Err(crate::Error::invalid(format!(
                "process chain length {} outside [{MIN_CHAIN_LEN}, {MAX_CHAIN_LEN}]",
                ops.len()
            )));
        }
        Ok(ProcessChain(ops))
    }

    pub fn ops(&self) -> &[Operation] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, op: Operation) -> bool {
        self.0.contains(&op)
    }
}

impl TryFrom<Vec<Operation>> for ProcessChain {
    type Error = crate::Error;

    fn try_from(ops: Vec<Operation>) -> crate::Result<Self> {
        ProcessChain::new(ops)
    }
}

impl From<ProcessChain> for Vec<Operation> {
    fn from(c: ProcessChain) -> Self {
        c.0
    }
}

impl fmt::Display for ProcessChain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, op) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" -> ")?;
            }
            f.write_str(op.as_str())?;
        }
        Ok(())
    }
}
