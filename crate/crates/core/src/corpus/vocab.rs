use std::collections::BTreeMap;
use std::path::Path;

use super::{
    BatchSize, Geometry, Holes, Operation, PartEncoding, ProcessChain, SurfaceFinish, Threads,
    Tolerance, ATTRIBUTE_CARDINALITIES, MAX_CHAIN_LEN, N_ATTRIBUTES,
};
use crate::{Error, Result};

pub type Token = u32;

pub const PAD: Token = 0;
pub const BOS: Token = 1;
pub const SEP: Token = 2;
pub const EOS: Token = 3;

const N_SPECIAL: usize = 4;
const OP_BASE: usize = N_SPECIAL;
const N_OPS: usize = 12;
const ATTR_BASE: usize = OP_BASE + N_OPS;
const ATTR_OFFSETS: [usize; N_ATTRIBUTES] = [0, 4, 8, 10, 14, 18];

/// Position of the separator in a tokenized sequence.
pub const SEP_POSITION: usize = 1 + N_ATTRIBUTES;
/// Length of the prompt `[BOS, attr x6, SEP]`.
pub const PROMPT_LEN: usize = SEP_POSITION + 1;
/// Longest full sequence: prompt, eight operations and EOS.
pub const MAX_SEQUENCE_LEN: usize = PROMPT_LEN + MAX_CHAIN_LEN + 1;

/// Token table: four specials, twelve operations, 22 attribute values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    names: Vec<String>,
}

fn attribute_names(attr: usize) -> Vec<&'static str> {
    match attr {
        0 => Geometry::ALL.iter().map(|v| v.as_str()).collect(),
        1 => Holes::ALL.iter().map(|v| v.as_str()).collect(),
        2 => Threads::ALL.iter().map(|v| v.as_str()).collect(),
        3 => SurfaceFinish::ALL.iter().map(|v| v.as_str()).collect(),
        4 => Tolerance::ALL.iter().map(|v| v.as_str()).collect(),
        5 => BatchSize::ALL.iter().map(|v| v.as_str()).collect(),
        _ => unreachable!("six attributes"),
    }
}

const ATTRIBUTE_KEYS: [&str; N_ATTRIBUTES] = [
    Geometry::KEY,
    Holes::KEY,
    Threads::KEY,
    SurfaceFinish::KEY,
    Tolerance::KEY,
    BatchSize::KEY,
];

impl Vocabulary {
    pub fn standard() -> Self {
        let mut names: Vec<String> = ["<pad>", "<bos>", "<sep>", "<eos>"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        names.extend(Operation::ALL.iter().map(|op| op.as_str().to_string()));
        for (attr, key) in ATTRIBUTE_KEYS.iter().enumerate() {
            names.extend(attribute_names(attr).iter().map(|v| format!("{key}:{v}")));
        }
        Vocabulary { names }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, token: Token) -> Option<&str> {
        self.names.get(token as usize).map(String::as_str)
    }

    pub fn id(&self, name: &str) -> Option<Token> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| i as Token)
    }

    pub fn to_map(&self) -> BTreeMap<String, Token> {
        self.names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i as Token))
            .collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_map()).expect("string map serializes");
        s.push('\n');
        s
    }

    /// Loads a vocabulary file; it must agree with the built-in table.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let map: BTreeMap<String, Token> =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        let standard = Self::standard();
        if map != standard.to_map() {
            return Err(Error::format(
                path,
                "vocabulary differs from the built-in token table",
            ));
        }
        Ok(standard)
    }

    pub fn op_token(op: Operation) -> Token {
        (OP_BASE + op.index()) as Token
    }

    pub fn token_op(token: Token) -> Option<Operation> {
        let t = token as usize;
        (OP_BASE..ATTR_BASE)
            .contains(&t)
            .then(|| Operation::from_index(t - OP_BASE))
            .flatten()
    }

    pub fn attribute_token(attr: usize, value: usize) -> Token {
        debug_assert!(value < ATTRIBUTE_CARDINALITIES[attr]);
        (ATTR_BASE + ATTR_OFFSETS[attr] + value) as Token
    }

    /// Value index of `token` if it encodes a value of attribute `attr`.
    pub fn token_attribute_value(attr: usize, token: Token) -> Option<usize> {
        let base = ATTR_BASE + ATTR_OFFSETS[attr];
        let t = token as usize;
        (base..base + ATTRIBUTE_CARDINALITIES[attr])
            .contains(&t)
            .then(|| t - base)
    }

    pub fn is_special(token: Token) -> bool {
        (token as usize) < N_SPECIAL
    }
}

/// `[BOS, attr1..attr6, SEP]`, followed by `op1..opk, EOS` when a chain is given.
pub fn tokenize(part: &PartEncoding, chain: Option<&ProcessChain>) -> Vec<Token> {
    let mut out = Vec::with_capacity(MAX_SEQUENCE_LEN);
    out.push(BOS);
    for (attr, value) in part.digits().into_iter().enumerate() {
        out.push(Vocabulary::attribute_token(attr, value));
    }
    out.push(SEP);
    if let Some(chain) = chain {
        out.extend(chain.ops().iter().map(|&op| Vocabulary::op_token(op)));
        out.push(EOS);
    }
    out
}

fn parse_err(position: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        position,
        message: message.into(),
    }
}

/// Inverse of [`tokenize`]. Returns no chain when the sequence has no
/// EOS-terminated suffix; trailing PAD after EOS is accepted.
pub fn detokenize(tokens: &[Token]) -> Result<(PartEncoding, Option<ProcessChain>)> {
    match tokens.first() {
        Some(&BOS) => {}
        Some(&t) => return Err(parse_err(0, format!("expected BOS, found token {t}"))),
        None => return Err(parse_err(0, "empty sequence")),
    }
    let mut digits = [0usize; N_ATTRIBUTES];
    for (attr, slot) in digits.iter_mut().enumerate() {
        let pos = 1 + attr;
        let tok = *tokens
            .get(pos)
            .ok_or_else(|| parse_err(pos, format!("missing {} token", ATTRIBUTE_KEYS[attr])))?;
        *slot = Vocabulary::token_attribute_value(attr, tok).ok_or_else(|| {
            parse_err(
                pos,
                format!("token {tok} is not a {} value", ATTRIBUTE_KEYS[attr]),
            )
        })?;
    }
    let part = PartEncoding::from_digits(digits).expect("digits validated per attribute");
    match tokens.get(SEP_POSITION) {
        Some(&SEP) => {}
        Some(&t) => {
            return Err(parse_err(
                SEP_POSITION,
                format!("expected SEP, found token {t}"),
            ))
        }
        None => return Err(parse_err(SEP_POSITION, "missing SEP")),
    }
    let body = &tokens[PROMPT_LEN..];
    let Some(eos_at) = body.iter().position(|&t| t == EOS) else {
        return Ok((part, None));
    };
    let mut ops = Vec::with_capacity(eos_at);
    for (i, &tok) in body[..eos_at].iter().enumerate() {
        let op = Vocabulary::token_op(tok)
            .ok_or_else(|| parse_err(PROMPT_LEN + i, format!("token {tok} is not an operation")))?;
        ops.push(op);
    }
    if let Some(i) = body[eos_at + 1..].iter().position(|&t| t != PAD) {
        return Err(parse_err(PROMPT_LEN + eos_at + 1 + i, "token after EOS"));
    }
    let chain =
        ProcessChain::new(ops).map_err(|e| parse_err(PROMPT_LEN + eos_at, e.to_string()))?;
    Ok((part, Some(chain)))
}
