use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An input collection that must be non-empty was empty.
    Empty(&'static str),
    /// Vector or matrix dimensions disagree.
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    /// A value was NaN or infinite where a finite value is required.
    NonFinite(&'static str),
    /// A vector with zero norm where a direction is required.
    ZeroNorm(&'static str),
    /// The two interpolation endpoints point in opposite directions.
    Antipodal,
    /// A parameter is outside its valid range.
    InvalidParameter { name: &'static str, value: f64 },
    /// Row-level failure inside a matrix operation.
    Row { index: usize, source: alloc::boxed::Box<Error> },
    /// Two adapter maps do not share a key set; carries the symmetric difference.
    KeyMismatch(Vec<String>),
    /// Two adapter arrays under the same key disagree in shape.
    ShapeMismatch { key: String },
    /// An array's element count does not match its recorded shape.
    BadShape { key: String, elements: usize, shape: Vec<usize> },
    MissingEmbedding(String),
    DuplicateId(String),
    /// A comparison score is missing for (morph, role, frs, attempt).
    MissingAttempt {
        morph_id: String,
        role: char,
        frs_id: String,
        attempt: u32,
    },
    DuplicateAttempt {
        morph_id: String,
        role: char,
        frs_id: String,
        attempt: u32,
    },
    MissingThreshold(String),
    /// No attempt count for a (morph, frs) cell.
    MissingCount { morph_id: String, frs_id: String },
    NotSymmetric { what: &'static str },
    InvalidRequest(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Empty(what) => write!(f, "{what} is empty"),
            Error::DimensionMismatch {
                what,
                expected,
                found,
            } => write!(f, "{what}: expected dimension {expected}, found {found}"),
            Error::NonFinite(what) => write!(f, "{what} contains non-finite values"),
            Error::ZeroNorm(what) => write!(f, "{what} has zero norm"),
            Error::Antipodal => f.write_str("interpolation endpoints are antipodal; the geodesic is not unique"),
            Error::InvalidParameter { name, value } => write!(f, "invalid {name}: {value}"),
            Error::Row { index, source } => write!(f, "row {index}: {source}"),
            Error::KeyMismatch(keys) => {
                f.write_str("adapter key sets differ: {")?;
                for (i, k) in keys.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    f.write_str(k)?;
                }
                f.write_str("}")
            }
            Error::ShapeMismatch { key } => write!(f, "shape mismatch for key {key:?}"),
            Error::BadShape {
                key,
                elements,
                shape,
            } => write!(f, "array {key:?} holds {elements} elements but shape is {shape:?}"),
            Error::MissingEmbedding(id) => write!(f, "missing embedding for subject {id}"),
            Error::DuplicateId(id) => write!(f, "duplicate id {id}"),
            Error::MissingAttempt {
                morph_id,
                role,
                frs_id,
                attempt,
            } => write!(
                f,
                "missing score for morph {morph_id}, role {role}, frs {frs_id}, attempt {attempt}"
            ),
            Error::DuplicateAttempt {
                morph_id,
                role,
                frs_id,
                attempt,
            } => write!(
                f,
                "duplicate score for morph {morph_id}, role {role}, frs {frs_id}, attempt {attempt}"
            ),
            Error::MissingCount { morph_id, frs_id } => {
                write!(f, "no attempt count for morph {morph_id}, frs {frs_id}")
            }
            Error::MissingThreshold(frs) => write!(f, "no threshold for frs {frs}"),
            Error::NotSymmetric { what } => write!(f, "{what} is not symmetric"),
            Error::InvalidRequest(why) => write!(f, "invalid generation request: {why}"),
        }
    }
}

impl core::error::Error for Error {}
