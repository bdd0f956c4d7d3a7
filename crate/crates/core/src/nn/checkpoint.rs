use std::fmt::Write as _;
use std::path::Path;

use super::{NnError, Parameters};

pub const CHECKPOINT_MAGIC: &str = "modellight-params";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Versioned text list of named arrays.
///
/// ```text
/// modellight-params 1
/// array <name> <rank> <dim>...
/// <values separated by spaces>
/// ```
///
/// Values use the shortest representation that parses back to the same
/// `f64`, so a write/read cycle is bit exact.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub arrays: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends every array of `params`, names prefixed with `prefix.`.
    pub fn push_params<P: Parameters + ?Sized>(&mut self, prefix: &str, params: &P) {
        params.visit(&mut |name, shape, data| {
            self.arrays.push(NamedArray {
                name: join(prefix, name),
                shape: shape.to_vec(),
                data: data.to_vec(),
            })
        });
    }

    pub fn from_params<P: Parameters + ?Sized>(prefix: &str, params: &P) -> Self {
        let mut c = Checkpoint::new();
        c.push_params(prefix, params);
        c
    }

    /// Copies the arrays named `prefix.*` into `params`; names and shapes
    /// must match exactly.
    pub fn load_params<P: Parameters + ?Sized>(&self, prefix: &str, params: &mut P) -> Result<(), NnError> {
        let mut expected = Vec::new();
        params.visit(&mut |name, shape, _| expected.push((join(prefix, name), shape.to_vec())));
        let mut sources = Vec::with_capacity(expected.len());
        for (name, shape) in &expected {
            let array = self
                .arrays
                .iter()
                .find(|a| &a.name == name)
                .ok_or_else(|| NnError::Checkpoint(format!("missing array `{name}`")))?;
            if &array.shape != shape {
                return Err(NnError::Checkpoint(format!(
                    "array `{name}` has shape {:?}, expected {shape:?}",
                    array.shape
                )));
            }
            sources.push(array.data.clone());
        }
        let mut k = 0;
        params.visit_mut(&mut |_, data| {
            data.copy_from_slice(&sources[k]);
            k += 1;
        });
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n");
        for a in &self.arrays {
            let _ = write!(out, "array {} {}", a.name, a.shape.len());
            for d in &a.shape {
                let _ = write!(out, " {d}");
            }
            out.push('\n');
            let values: Vec<String> = a.data.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&values.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, NnError> {
        let err = |line: usize, msg: String| NnError::Checkpoint(format!("line {line}: {msg}"));
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(CHECKPOINT_MAGIC) {
            return Err(err(1, format!("expected `{CHECKPOINT_MAGIC}` header")));
        }
        let version: u32 = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| err(1, "missing format version".into()))?;
        if version != CHECKPOINT_VERSION {
            return Err(err(1, format!("unsupported format version {version}")));
        }
        let mut arrays = Vec::new();
        while let Some((n, line)) = lines.next() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            if parts.next() != Some("array") {
                return Err(err(n, "expected `array` record".into()));
            }
            let name = parts.next().ok_or_else(|| err(n, "missing array name".into()))?.to_string();
            let rank: usize = parts
                .next()
                .and_then(|r| r.parse().ok())
                .ok_or_else(|| err(n, "missing rank".into()))?;
            let shape: Vec<usize> = parts
                .map(|d| d.parse().map_err(|_| err(n, format!("bad dimension `{d}`"))))
                .collect::<Result<_, _>>()?;
            if shape.len() != rank {
                return Err(err(n, format!("rank {rank} but {} dimensions", shape.len())));
            }
            let (vn, values) = lines.next().unwrap_or((n + 1, ""));
            let data: Vec<f64> = values
                .split_whitespace()
                .map(|v| v.parse().map_err(|_| err(vn, format!("bad value `{v}`"))))
                .collect::<Result<_, _>>()?;
            let expected: usize = shape.iter().product();
            if data.len() != expected {
                return Err(err(vn, format!("array `{name}` needs {expected} values, found {}", data.len())));
            }
            arrays.push(NamedArray { name, shape, data });
        }
        Ok(Checkpoint { arrays })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NnError> {
        std::fs::write(path.as_ref(), self.to_text())
            .map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.as_ref().display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NnError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.as_ref().display())))?;
        Checkpoint::from_text(&text)
    }
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
