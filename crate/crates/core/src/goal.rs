//! The negotiable-maintenance-goal sentence language.
//!
//! Users state quality preferences as short sentences, one of four forms:
//!
//! ```text
//! <params> is high priority
//! <params> is less than <quantity>
//! <params> is greater than <quantity>
//! If <params> upgrades by <pct> then <params> degrades by <pct>
//! ```
//!
//! `<params>` is a comma-separated list of parameter names, which may span
//! several words ("maximum time to recovery"). Sentences are separated by
//! `.`; a dot between two digits is part of a decimal literal. Keywords are
//! matched case-insensitively. An unrecognized sentence is an error, never
//! skipped: goals drive runtime selection, so a partial parse is unsafe.
//!
//! Parsing keeps raw names and unit tokens; [`resolve`] binds them to the
//! parameter catalog and converts quantities into canonical units, so all
//! conversion and polarity errors are raised in one place.

use std::fmt;

use thiserror::Error;

use crate::model::{Catalog, ParameterId, Polarity, QoSParameter};
use crate::model::normalize_name;

/// A numeric literal with its raw unit token (empty when dimensionless).
#[derive(Debug, Clone, PartialEq)]
pub struct Quantity {
    pub magnitude: f64,
    pub unit: String,
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.unit.is_empty() {
            write!(f, "{}", self.magnitude)
        } else {
            write!(f, "{} {}", self.magnitude, self.unit)
        }
    }
}

/// One parsed goal sentence.
#[derive(Debug, Clone, PartialEq)]
pub enum GoalStatement {
    HighPriority {
        params: Vec<String>,
    },
    LessThan {
        params: Vec<String>,
        value: Quantity,
    },
    GreaterThan {
        params: Vec<String>,
        value: Quantity,
    },
    Conditional {
        first_params: Vec<String>,
        /// Percentage by which the first list may upgrade (stored as 20, not 0.20).
        first_value: f64,
        second_params: Vec<String>,
        /// Percentage by which the second list may degrade.
        second_value: f64,
    },
}

fn join_names(names: &[String]) -> String {
    names.join(", ")
}

impl fmt::Display for GoalStatement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GoalStatement::HighPriority { params } => {
                write!(f, "{} is high priority", join_names(params))
            }
            GoalStatement::LessThan { params, value } => {
                write!(f, "{} is less than {}", join_names(params), value)
            }
            GoalStatement::GreaterThan { params, value } => {
                write!(f, "{} is greater than {}", join_names(params), value)
            }
            GoalStatement::Conditional { first_params, first_value, second_params, second_value } => {
                write!(
                    f,
                    "If {} upgrades by {}% then {} degrades by {}%",
                    join_names(first_params),
                    first_value,
                    join_names(second_params),
                    second_value
                )
            }
        }
    }
}

/// Renders statements back into goal text. `parse_goals` of the result
/// yields the identical statement list.
pub fn pretty_print(goals: &[GoalStatement]) -> String {
    goals.iter().map(|g| format!("{g}.")).collect::<Vec<_>>().join(" ")
}

/// A goal statement bound to the catalog: names replaced by parameter ids,
/// quantities converted to each parameter's canonical unit.
#[derive(Debug, Clone, PartialEq)]
pub enum ResolvedGoal {
    HighPriority {
        params: Vec<ParameterId>,
    },
    LessThan {
        params: Vec<ParameterId>,
        value: Quantity,
    },
    GreaterThan {
        params: Vec<ParameterId>,
        value: Quantity,
    },
    Conditional {
        first_params: Vec<ParameterId>,
        first_value: f64,
        second_params: Vec<ParameterId>,
        second_value: f64,
    },
}

#[derive(Debug, Error, PartialEq)]
pub enum GoalError {
    #[error("sentence {sentence}: expected {expected}, found {token:?}")]
    Syntax { sentence: usize, token: String, expected: &'static str },
    #[error("sentence {sentence}: empty parameter list")]
    EmptyList { sentence: usize },
}

#[derive(Debug, Error, PartialEq)]
pub enum ResolveError {
    #[error("unknown parameter {name:?}")]
    UnknownParameter { name: String },
    #[error("unit {unit:?} is not convertible to the canonical unit of {parameter}")]
    UnitMismatch { parameter: ParameterId, unit: String },
    #[error("{comparator:?} cannot apply to {parameter} ({polarity:?} polarity)")]
    PolarityMismatch { parameter: ParameterId, comparator: &'static str, polarity: Polarity },
}

/// Splits goal text into sentences on `.`, treating a dot between two
/// digits as part of a decimal literal. Blank sentences are dropped.
fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut sentences = Vec::new();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if c == '.' {
            let between_digits = i > 0
                && chars[i - 1].is_ascii_digit()
                && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit());
            if between_digits {
                current.push(c);
            } else {
                sentences.push(std::mem::take(&mut current));
            }
        } else {
            current.push(c);
        }
    }
    sentences.push(current);
    sentences.into_iter().filter(|s| !s.trim().is_empty()).collect()
}

/// Whitespace tokenization with commas lifted out as their own tokens.
fn tokenize(sentence: &str) -> Vec<String> {
    sentence
        .replace(',', " , ")
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

/// Parses goal text into statements, in sentence order.
pub fn parse_goals(text: &str) -> Result<Vec<GoalStatement>, GoalError> {
    split_sentences(text)
        .iter()
        .enumerate()
        .map(|(i, sentence)| parse_sentence(i + 1, sentence))
        .collect()
}

fn parse_sentence(index: usize, sentence: &str) -> Result<GoalStatement, GoalError> {
    let tokens = tokenize(sentence);
    let lower: Vec<String> = tokens.iter().map(|t| t.to_lowercase()).collect();
    let n = tokens.len();

    if lower.first().map(String::as_str) == Some("if") {
        return parse_conditional(index, &tokens, &lower);
    }

    if n >= 3 && lower[n - 3..] == ["is", "high", "priority"] {
        let params = parse_name_list(index, &tokens[..n - 3])?;
        return Ok(GoalStatement::HighPriority { params });
    }

    // Scan for the rightmost comparator so parameter names may contain
    // ordinary words without colliding with the keywords.
    for k in (0..n.saturating_sub(2)).rev() {
        if lower[k] != "is" || lower[k + 2] != "than" {
            continue;
        }
        let less = match lower[k + 1].as_str() {
            "less" => true,
            "greater" => false,
            _ => continue,
        };
        let params = parse_name_list(index, &tokens[..k])?;
        let value = parse_quantity(index, &tokens[k + 3..])?;
        return Ok(if less {
            GoalStatement::LessThan { params, value }
        } else {
            GoalStatement::GreaterThan { params, value }
        });
    }

    Err(GoalError::Syntax {
        sentence: index,
        token: tokens.first().cloned().unwrap_or_default(),
        expected: "a goal form (high priority, less than, greater than, or if/then)",
    })
}

fn parse_conditional(
    index: usize,
    tokens: &[String],
    lower: &[String],
) -> Result<GoalStatement, GoalError> {
    let n = tokens.len();
    let upgrades = (1..n)
        .find(|&i| lower[i] == "upgrades")
        .ok_or(GoalError::Syntax { sentence: index, token: tokens[0].clone(), expected: "\"upgrades by\"" })?;
    expect_keyword(index, tokens, lower, upgrades + 1, "by")?;
    let first_value = parse_percentage(index, tokens.get(upgrades + 2))?;
    expect_keyword(index, tokens, lower, upgrades + 3, "then")?;
    let degrades = (upgrades + 4..n)
        .find(|&i| lower[i] == "degrades")
        .ok_or(GoalError::Syntax {
            sentence: index,
            token: tokens[upgrades + 3].clone(),
            expected: "\"degrades by\"",
        })?;
    expect_keyword(index, tokens, lower, degrades + 1, "by")?;
    let second_value = parse_percentage(index, tokens.get(degrades + 2))?;
    if degrades + 3 != n {
        return Err(GoalError::Syntax {
            sentence: index,
            token: tokens[degrades + 3].clone(),
            expected: "end of sentence",
        });
    }
    let first_params = parse_name_list(index, &tokens[1..upgrades])?;
    let second_params = parse_name_list(index, &tokens[upgrades + 4..degrades])?;
    for name in &second_params {
        let norm = normalize_name(name);
        if first_params.iter().any(|f| normalize_name(f) == norm) {
            return Err(GoalError::Syntax {
                sentence: index,
                token: name.clone(),
                expected: "disjoint parameter lists",
            });
        }
    }
    Ok(GoalStatement::Conditional { first_params, first_value, second_params, second_value })
}

fn expect_keyword(
    index: usize,
    tokens: &[String],
    lower: &[String],
    pos: usize,
    keyword: &'static str,
) -> Result<(), GoalError> {
    if lower.get(pos).map(String::as_str) == Some(keyword) {
        Ok(())
    } else {
        Err(GoalError::Syntax {
            sentence: index,
            token: tokens.get(pos).cloned().unwrap_or_default(),
            expected: match keyword {
                "by" => "\"by\"",
                "then" => "\"then\"",
                _ => "a keyword",
            },
        })
    }
}

/// Parses a comma-separated list of (possibly multi-word) names. Lists must
/// be non-empty and duplicate-free.
fn parse_name_list(index: usize, tokens: &[String]) -> Result<Vec<String>, GoalError> {
    let mut names = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for token in tokens {
        if token == "," {
            if current.is_empty() {
                return Err(GoalError::EmptyList { sentence: index });
            }
            names.push(current.join(" "));
            current.clear();
        } else {
            current.push(token);
        }
    }
    if current.is_empty() {
        return Err(GoalError::EmptyList { sentence: index });
    }
    names.push(current.join(" "));

    for (i, name) in names.iter().enumerate() {
        let norm = normalize_name(name);
        if names[..i].iter().any(|prev| normalize_name(prev) == norm) {
            return Err(GoalError::Syntax {
                sentence: index,
                token: name.clone(),
                expected: "distinct parameter names",
            });
        }
    }
    Ok(names)
}

/// Splits a token like `"4s"` into its numeric prefix and trailing unit.
fn split_number(token: &str) -> Option<(f64, Option<&str>)> {
    if let Ok(value) = token.parse::<f64>() {
        return Some((value, None));
    }
    let cut = token.find(|c: char| !(c.is_ascii_digit() || matches!(c, '.' | '-' | '+')))?;
    if cut == 0 {
        return None;
    }
    let (number, unit) = token.split_at(cut);
    number.parse::<f64>().ok().map(|v| (v, Some(unit)))
}

fn parse_quantity(index: usize, tokens: &[String]) -> Result<Quantity, GoalError> {
    let first = tokens.first().ok_or(GoalError::Syntax {
        sentence: index,
        token: String::new(),
        expected: "a quantity",
    })?;
    let (magnitude, attached) = split_number(first).ok_or_else(|| GoalError::Syntax {
        sentence: index,
        token: first.clone(),
        expected: "a number",
    })?;
    if !magnitude.is_finite() {
        return Err(GoalError::Syntax { sentence: index, token: first.clone(), expected: "a finite number" });
    }
    let unit = match (attached, &tokens[1..]) {
        (Some(unit), []) => unit.to_owned(),
        (None, []) => String::new(),
        (None, [unit]) => unit.clone(),
        (_, rest) => {
            return Err(GoalError::Syntax {
                sentence: index,
                token: rest[0].clone(),
                expected: "a single unit token",
            })
        }
    };
    Ok(Quantity { magnitude, unit })
}

fn parse_percentage(index: usize, token: Option<&String>) -> Result<f64, GoalError> {
    let token = token.ok_or(GoalError::Syntax {
        sentence: index,
        token: String::new(),
        expected: "a percentage",
    })?;
    let raw = token.strip_suffix('%').unwrap_or(token);
    let value: f64 = raw.parse().map_err(|_| GoalError::Syntax {
        sentence: index,
        token: token.clone(),
        expected: "a percentage",
    })?;
    if !value.is_finite() || value <= 0.0 {
        return Err(GoalError::Syntax {
            sentence: index,
            token: token.clone(),
            expected: "a positive percentage",
        });
    }
    Ok(value)
}

/// Binds parsed statements to the catalog. Statement count and order are
/// preserved; only names and units are rewritten. Distinct raw names that
/// alias the same parameter collapse to one id.
pub fn resolve(goals: &[GoalStatement], catalog: &Catalog) -> Result<Vec<ResolvedGoal>, ResolveError> {
    goals.iter().map(|goal| resolve_statement(goal, catalog)).collect()
}

fn resolve_statement(goal: &GoalStatement, catalog: &Catalog) -> Result<ResolvedGoal, ResolveError> {
    match goal {
        GoalStatement::HighPriority { params } => Ok(ResolvedGoal::HighPriority {
            params: resolve_params(params, catalog)?,
        }),
        GoalStatement::LessThan { params, value } => {
            let ids = resolve_params(params, catalog)?;
            let value = convert_for(&ids, value, catalog, "less than", Polarity::Negative)?;
            Ok(ResolvedGoal::LessThan { params: ids, value })
        }
        GoalStatement::GreaterThan { params, value } => {
            let ids = resolve_params(params, catalog)?;
            let value = convert_for(&ids, value, catalog, "greater than", Polarity::Positive)?;
            Ok(ResolvedGoal::GreaterThan { params: ids, value })
        }
        GoalStatement::Conditional { first_params, first_value, second_params, second_value } => {
            Ok(ResolvedGoal::Conditional {
                first_params: resolve_params(first_params, catalog)?,
                first_value: *first_value,
                second_params: resolve_params(second_params, catalog)?,
                second_value: *second_value,
            })
        }
    }
}

fn resolve_params(names: &[String], catalog: &Catalog) -> Result<Vec<ParameterId>, ResolveError> {
    let mut ids = Vec::with_capacity(names.len());
    for name in names {
        let param = catalog
            .resolve_name(name)
            .ok_or_else(|| ResolveError::UnknownParameter { name: name.clone() })?;
        if !ids.contains(&param.id) {
            ids.push(param.id.clone());
        }
    }
    Ok(ids)
}

/// Converts a threshold quantity into the canonical unit of every listed
/// parameter, enforcing that the comparator matches the polarity. All
/// parameters in one statement receive the same converted value, so a list
/// whose parameters convert differently is a unit mismatch.
fn convert_for(
    ids: &[ParameterId],
    value: &Quantity,
    catalog: &Catalog,
    comparator: &'static str,
    required: Polarity,
) -> Result<Quantity, ResolveError> {
    let mut converted: Option<Quantity> = None;
    for id in ids {
        let param = catalog.get(&id.0).expect("resolved id exists");
        if param.polarity != required {
            return Err(ResolveError::PolarityMismatch {
                parameter: id.clone(),
                comparator,
                polarity: param.polarity,
            });
        }
        let candidate = Quantity {
            magnitude: value.magnitude * conversion_factor(param, &value.unit, id)?,
            unit: param.unit.clone(),
        };
        match &converted {
            None => converted = Some(candidate),
            Some(prev) if *prev == candidate => {}
            Some(_) => {
                return Err(ResolveError::UnitMismatch {
                    parameter: id.clone(),
                    unit: value.unit.clone(),
                })
            }
        }
    }
    Ok(converted.expect("parameter lists are non-empty"))
}

fn conversion_factor(
    param: &QoSParameter,
    unit: &str,
    id: &ParameterId,
) -> Result<f64, ResolveError> {
    if unit.is_empty() {
        return Ok(1.0);
    }
    param
        .conversions
        .get(&unit.to_lowercase())
        .copied()
        .ok_or_else(|| ResolveError::UnitMismatch { parameter: id.clone(), unit: unit.to_owned() })
}
