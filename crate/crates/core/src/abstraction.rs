//! Subtask phrases to skill signatures, and signatures to a granularity
//! controlled set of atomic skill definitions.
//!
//! The default canonicalizer is a lexicon-driven pattern matcher for phrases
//! of the form `[MODIFIER and]* VERB [the] OBJECT [PREPOSITION [the] TARGET]`.
//! Verbs are folded through a synonym table; unknown verbs are rejected
//! instead of guessed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::{BackendConfig, HttpError, JsonClient};

pub const LEXICON_SCHEMA_VERSION: u32 = 1;

const BUILTIN_LEXICON: &str = include_str!("../../../lexicon/verbs.json");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AbstractionError {
    #[error("unparsable subtask phrase `{phrase}`: {reason}")]
    UnparsablePhrase { phrase: String, reason: String },
    #[error("invalid skill signature: {0}")]
    InvalidSignature(String),
    #[error("lexicon error: {0}")]
    Lexicon(String),
    #[error(transparent)]
    Backend(#[from] HttpError),
}

fn unparsable(phrase: &str, reason: impl Into<String>) -> AbstractionError {
    AbstractionError::UnparsablePhrase { phrase: phrase.to_string(), reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    /// Verb plus object and target categories; attribute words are dropped.
    Coarse,
    /// Verb, object and target; modifiers and instance qualifiers are dropped.
    #[default]
    Medium,
    /// The full signature including modifiers.
    Fine,
}

impl Granularity {
    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::Coarse => "coarse",
            Granularity::Medium => "medium",
            Granularity::Fine => "fine",
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Granularity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "coarse" => Ok(Granularity::Coarse),
            "medium" => Ok(Granularity::Medium),
            "fine" => Ok(Granularity::Fine),
            other => Err(format!("unknown granularity `{other}` (expected coarse, medium or fine)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkillSignature {
    pub verb: String,
    pub object_slot: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_slot: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub modifiers: Vec<String>,
}

fn is_token(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase() || c.is_ascii_digit())
        && s.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-')
        && !s.ends_with('-')
}

impl SkillSignature {
    pub fn new(verb: &str, object: &str) -> Self {
        Self { verb: verb.into(), object_slot: object.into(), target_slot: None, modifiers: Vec::new() }
    }

    pub fn with_target(mut self, target: &str) -> Self {
        self.target_slot = Some(target.into());
        self
    }

    pub fn with_modifiers<I: IntoIterator<Item = S>, S: Into<String>>(mut self, modifiers: I) -> Self {
        let set: BTreeSet<String> = modifiers.into_iter().map(Into::into).collect();
        self.modifiers = set.into_iter().collect();
        self
    }

    /// Structural checks that hold for every signature regardless of lexicon.
    pub fn validate(&self) -> Result<(), AbstractionError> {
        let bad = |m: String| Err(AbstractionError::InvalidSignature(m));
        if !is_token(&self.verb) {
            return bad(format!("verb `{}` is not a lowercase token", self.verb));
        }
        if !is_token(&self.object_slot) {
            return bad(format!("object slot `{}` is empty or malformed", self.object_slot));
        }
        if let Some(t) = &self.target_slot {
            if !is_token(t) {
                return bad(format!("target slot `{t}` is empty or malformed"));
            }
        }
        if self.modifiers.iter().any(|m| !is_token(m)) {
            return bad("modifier is not a lowercase token".into());
        }
        if self.modifiers.windows(2).any(|w| w[0] >= w[1]) {
            return bad("modifiers must be sorted and unique".into());
        }
        Ok(())
    }
}

impl fmt::Display for SkillSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({}", self.verb, self.object_slot)?;
        if let Some(t) = &self.target_slot {
            write!(f, " -> {t}")?;
        }
        if !self.modifiers.is_empty() {
            write!(f, " [{}]", self.modifiers.join(", "))?;
        }
        f.write_str(")")
    }
}

/// Head category of a hyphenated noun phrase: `red-block` -> `block`,
/// `cup-of-water` -> `cup`.
fn head_noun(phrase: &str) -> String {
    let core = phrase.split("-of-").next().unwrap_or(phrase);
    core.rsplit('-').next().unwrap_or(core).to_string()
}

pub fn project(sig: &SkillSignature, g: Granularity) -> SkillSignature {
    match g {
        Granularity::Fine => sig.clone(),
        Granularity::Medium => SkillSignature { modifiers: Vec::new(), ..sig.clone() },
        Granularity::Coarse => SkillSignature {
            verb: sig.verb.clone(),
            object_slot: head_noun(&sig.object_slot),
            target_slot: sig.target_slot.as_deref().map(head_noun),
            modifiers: Vec::new(),
        },
    }
}

/// `<granularity>/<verb>.<object>[.<target>][+modifier...]`
pub fn skill_id(sig: &SkillSignature, g: Granularity) -> String {
    let p = project(sig, g);
    let mut id = format!("{}/{}.{}", g, p.verb, p.object_slot);
    if let Some(t) = &p.target_slot {
        id.push('.');
        id.push_str(t);
    }
    for m in &p.modifiers {
        id.push('+');
        id.push_str(m);
    }
    id
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomicSkillDefinition {
    pub skill_id: String,
    pub signature: SkillSignature,
    pub granularity: Granularity,
    pub text_template: String,
    pub created_from: Vec<String>,
}

impl AtomicSkillDefinition {
    pub fn from_signature(sig: &SkillSignature, g: Granularity, lexicon: &Lexicon) -> Self {
        let signature = project(sig, g);
        Self {
            skill_id: skill_id(&signature, g),
            text_template: lexicon.text_template(&signature),
            signature,
            granularity: g,
            created_from: Vec::new(),
        }
    }

    /// Fills the template placeholders with the signature's slot values.
    pub fn render(&self) -> String {
        let words = |s: &str| s.replace('-', " ");
        let mut out = self.text_template.replace("{object}", &words(&self.signature.object_slot));
        if let Some(t) = &self.signature.target_slot {
            out = out.replace("{target}", &words(t));
        }
        out
    }

    /// Placeholders in the template, in order of appearance.
    pub fn placeholders(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut rest = self.text_template.as_str();
        while let Some(start) = rest.find('{') {
            let Some(len) = rest[start..].find('}') else { break };
            out.push(rest[start + 1..start + len].to_string());
            rest = &rest[start + len + 1..];
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LexiconFile {
    schema_version: u32,
    verbs: BTreeMap<String, String>,
    #[serde(default)]
    modifiers: Vec<String>,
    #[serde(default)]
    qualifiers: Vec<String>,
    #[serde(default)]
    determiners: Vec<String>,
    #[serde(default)]
    pronouns: Vec<String>,
    #[serde(default)]
    prepositions: Vec<String>,
    #[serde(default)]
    target_prepositions: BTreeMap<String, String>,
}

/// Verb synonym table plus the closed word classes the phrase grammar uses.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    /// Synonym phrase split into tokens, longest first.
    verbs: Vec<(Vec<String>, String)>,
    canonical: BTreeSet<String>,
    modifiers: BTreeSet<String>,
    qualifiers: BTreeSet<String>,
    determiners: BTreeSet<String>,
    pronouns: BTreeSet<String>,
    prepositions: BTreeSet<String>,
    target_prepositions: BTreeMap<String, String>,
}

impl Lexicon {
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_LEXICON).expect("builtin lexicon is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AbstractionError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| AbstractionError::Lexicon(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, AbstractionError> {
        let file: LexiconFile = serde_json::from_str(text).map_err(|e| AbstractionError::Lexicon(e.to_string()))?;
        if file.schema_version != LEXICON_SCHEMA_VERSION {
            return Err(AbstractionError::Lexicon(format!("unsupported lexicon schema {}", file.schema_version)));
        }
        let mut verbs: Vec<(Vec<String>, String)> = Vec::new();
        for (synonym, canonical) in &file.verbs {
            if !is_token(canonical) {
                return Err(AbstractionError::Lexicon(format!("canonical verb `{canonical}` is malformed")));
            }
            let tokens: Vec<String> = synonym.split_whitespace().map(str::to_lowercase).collect();
            if tokens.is_empty() {
                return Err(AbstractionError::Lexicon("empty verb synonym".into()));
            }
            verbs.push((tokens, canonical.clone()));
        }
        verbs.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        let set = |v: Vec<String>| v.into_iter().map(|s| s.to_lowercase()).collect::<BTreeSet<_>>();
        Ok(Self {
            canonical: file.verbs.values().cloned().collect(),
            verbs,
            modifiers: set(file.modifiers),
            qualifiers: set(file.qualifiers),
            determiners: set(file.determiners),
            pronouns: set(file.pronouns),
            prepositions: set(file.prepositions),
            target_prepositions: file.target_prepositions,
        })
    }

    pub fn canonical_verbs(&self) -> impl Iterator<Item = &str> {
        self.canonical.iter().map(String::as_str)
    }

    pub fn is_canonical_verb(&self, verb: &str) -> bool {
        self.canonical.contains(verb)
    }

    pub fn modifiers(&self) -> impl Iterator<Item = &str> {
        self.modifiers.iter().map(String::as_str)
    }

    pub fn qualifiers(&self) -> impl Iterator<Item = &str> {
        self.qualifiers.iter().map(String::as_str)
    }

    pub fn is_stopword(&self, word: &str) -> bool {
        self.determiners.contains(word) || self.prepositions.contains(word) || self.pronouns.contains(word) || word == "and"
    }

    pub fn target_preposition(&self, verb: &str) -> &str {
        self.target_prepositions.get(verb).map(String::as_str).unwrap_or("to")
    }

    /// Human-readable instruction template: `{object}` always, `{target}`
    /// exactly when the signature has a target.
    pub fn text_template(&self, sig: &SkillSignature) -> String {
        let mut out = String::new();
        let mut qualifiers = Vec::new();
        for m in &sig.modifiers {
            if self.modifiers.contains(m) || self.canonical.contains(m) {
                out.push_str(&m.replace('-', " "));
                out.push_str(" and ");
            } else {
                qualifiers.push(m.as_str());
            }
        }
        out.push_str(&sig.verb.replace('-', " "));
        out.push_str(" the ");
        for q in qualifiers {
            out.push_str(q);
            out.push(' ');
        }
        out.push_str("{object}");
        if sig.target_slot.is_some() {
            out.push(' ');
            out.push_str(self.target_preposition(&sig.verb));
            out.push_str(" the {target}");
        }
        out
    }

    /// Checks a signature against the lexicon's closed verb set.
    pub fn validate_signature(&self, sig: &SkillSignature) -> Result<(), AbstractionError> {
        sig.validate()?;
        if !self.is_canonical_verb(&sig.verb) {
            return Err(AbstractionError::InvalidSignature(format!("verb `{}` is not in the lexicon", sig.verb)));
        }
        Ok(())
    }

    fn match_verb(&self, tokens: &[String]) -> Option<(usize, &str)> {
        self.verbs
            .iter()
            .find(|(syn, _)| tokens.len() >= syn.len() && tokens[..syn.len()] == syn[..])
            .map(|(syn, canonical)| (syn.len(), canonical.as_str()))
    }
}

/// Lowercases, drops punctuation other than hyphens, splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.chars()
        .map(|c| if c.is_alphanumeric() || c == '-' { c.to_ascii_lowercase() } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Backend that turns a subtask phrase into a validated signature.
pub trait Canonicalizer: Send + Sync {
    fn canonicalize(&self, phrase: &str) -> Result<SkillSignature, AbstractionError>;
    fn lexicon(&self) -> &Lexicon;
}

/// Deterministic lexicon-and-pattern canonicalizer.
#[derive(Debug, Clone)]
pub struct LexiconCanonicalizer {
    lexicon: Arc<Lexicon>,
}

impl LexiconCanonicalizer {
    pub fn new(lexicon: Arc<Lexicon>) -> Self {
        Self { lexicon }
    }

    /// Returns the signature and the raw object phrase as written (minus
    /// determiners), used for pronoun resolution by the fallback planner.
    pub fn parse(&self, phrase: &str) -> Result<(SkillSignature, String), AbstractionError> {
        let lx = &self.lexicon;
        let tokens = tokenize(phrase);
        if tokens.is_empty() {
            return Err(unparsable(phrase, "empty phrase"));
        }
        let mut modifiers: BTreeSet<String> = BTreeSet::new();
        let mut pos = 0;
        let verb = loop {
            if pos >= tokens.len() {
                return Err(unparsable(phrase, "no verb"));
            }
            let rest = &tokens[pos..];
            let (consumed, word) = if let Some((n, canonical)) = lx.match_verb(rest) {
                (n, canonical.to_string())
            } else if lx.modifiers.contains(&rest[0]) {
                (1, rest[0].clone())
            } else {
                return Err(unparsable(phrase, format!("unknown verb `{}`", rest[0])));
            };
            pos += consumed;
            let chained = tokens.get(pos).is_some_and(|t| t == "and")
                && tokens.get(pos + 1).is_some_and(|next| lx.modifiers.contains(next) || lx.match_verb(&tokens[pos + 1..]).is_some());
            if chained {
                modifiers.insert(word);
                pos += 1;
                continue;
            }
            if !lx.canonical.contains(&word) {
                // a bare adverb such as "carefully" before the verb
                if lx.modifiers.contains(&word) && pos < tokens.len() {
                    modifiers.insert(word);
                    continue;
                }
                return Err(unparsable(phrase, format!("`{word}` is not an action verb")));
            }
            break word;
        };

        let (object, raw_object, next) = self.noun_phrase(phrase, &tokens, pos, &mut modifiers)?;
        let object = object.ok_or_else(|| unparsable(phrase, "missing object"))?;
        let mut target = None;
        if let Some(prep_pos) = next {
            let (t, _, _) = self.noun_phrase(phrase, &tokens, prep_pos + 1, &mut modifiers)?;
            target = Some(t.ok_or_else(|| unparsable(phrase, "missing target after preposition"))?);
        }
        let sig = SkillSignature {
            verb,
            object_slot: object,
            target_slot: target,
            modifiers: modifiers.into_iter().collect(),
        };
        lx.validate_signature(&sig)?;
        Ok((sig, raw_object))
    }

    /// Reads determiners, qualifiers and nouns from `start` up to the next
    /// preposition. Returns the hyphen-joined noun, the raw phrase, and the
    /// preposition position if one was hit.
    fn noun_phrase(
        &self,
        phrase: &str,
        tokens: &[String],
        start: usize,
        modifiers: &mut BTreeSet<String>,
    ) -> Result<(Option<String>, String, Option<usize>), AbstractionError> {
        let lx = &self.lexicon;
        let mut nouns: Vec<&str> = Vec::new();
        let mut raw: Vec<&str> = Vec::new();
        let mut i = start;
        while i < tokens.len() {
            let t = tokens[i].as_str();
            if lx.prepositions.contains(t) {
                break;
            }
            if lx.pronouns.contains(t) {
                return Err(unparsable(phrase, format!("unresolved pronoun `{t}`")));
            }
            if lx.modifiers.contains(t) {
                modifiers.insert(t.to_string());
            } else if lx.qualifiers.contains(t) {
                modifiers.insert(t.to_string());
                raw.push(t);
            } else if !lx.determiners.contains(t) && t != "and" {
                nouns.push(t);
                raw.push(t);
            }
            i += 1;
        }
        let next = (i < tokens.len()).then_some(i);
        let noun = (!nouns.is_empty()).then(|| nouns.join("-"));
        Ok((noun, raw.join(" "), next))
    }
}

impl Canonicalizer for LexiconCanonicalizer {
    fn canonicalize(&self, phrase: &str) -> Result<SkillSignature, AbstractionError> {
        self.parse(phrase).map(|(sig, _)| sig)
    }

    fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }
}

/// Canonicalizer that asks a chat-completion endpoint for a JSON signature
/// and validates the answer against the lexicon.
pub struct LlmCanonicalizer {
    client: JsonClient,
    lexicon: Arc<Lexicon>,
}

impl LlmCanonicalizer {
    pub fn new(config: BackendConfig, lexicon: Arc<Lexicon>) -> Result<Self, AbstractionError> {
        Ok(Self { client: JsonClient::new(config)?, lexicon })
    }

    fn prompt(&self, phrase: &str) -> String {
        let verbs: Vec<&str> = self.lexicon.canonical_verbs().collect();
        format!(
            "Convert the robot subtask into a skill signature.\n\
             Allowed verbs: {}.\n\
             Reply with one JSON object: {{\"verb\": ..., \"object_slot\": ..., \"target_slot\": null or ..., \"modifiers\": [...]}}.\n\
             Use lowercase hyphenated nouns.\n\
             Subtask: {phrase}",
            verbs.join(", ")
        )
    }
}

impl Canonicalizer for LlmCanonicalizer {
    fn canonicalize(&self, phrase: &str) -> Result<SkillSignature, AbstractionError> {
        let reply = self.client.chat(&self.prompt(phrase))?;
        let json = reply
            .find('{')
            .zip(reply.rfind('}'))
            .map(|(a, b)| &reply[a..=b])
            .ok_or_else(|| unparsable(phrase, "backend reply has no JSON object"))?;
        let mut sig: SkillSignature =
            serde_json::from_str(json).map_err(|e| unparsable(phrase, format!("backend reply: {e}")))?;
        sig.modifiers.sort();
        sig.modifiers.dedup();
        self.lexicon.validate_signature(&sig).map_err(|e| unparsable(phrase, e.to_string()))?;
        Ok(sig)
    }

    fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AbstractionOutcome {
    /// Existing definitions plus any newly created ones, keyed by skill id.
    pub definitions: BTreeMap<String, AtomicSkillDefinition>,
    /// Skill ids created by this call, sorted.
    pub new_skill_ids: Vec<String>,
    /// Subtask text to skill id.
    pub mapping: BTreeMap<String, String>,
}

/// Maps already-canonical `(text, signature)` pairs onto definitions at
/// granularity `g`, creating a definition only when no existing one has the
/// same projected signature. Existing definitions are never changed.
pub fn abstract_signatures<'a, I>(
    items: I,
    g: Granularity,
    existing: &BTreeMap<String, AtomicSkillDefinition>,
    lexicon: &Lexicon,
) -> AbstractionOutcome
where
    I: IntoIterator<Item = (&'a str, &'a SkillSignature)>,
{
    let mut definitions = existing.clone();
    let mut fresh: BTreeMap<String, AtomicSkillDefinition> = BTreeMap::new();
    let mut mapping = BTreeMap::new();
    for (text, sig) in items {
        let projected = project(sig, g);
        let id = skill_id(&projected, g);
        let known = existing
            .values()
            .filter(|d| d.granularity == g && d.signature == projected)
            .map(|d| d.skill_id.clone())
            .min();
        let id = match known {
            Some(existing_id) => existing_id,
            None => {
                let def = fresh
                    .entry(id.clone())
                    .or_insert_with(|| AtomicSkillDefinition::from_signature(&projected, g, lexicon));
                def.created_from.push(text.to_string());
                id
            }
        };
        mapping.insert(text.to_string(), id);
    }
    let new_skill_ids: Vec<String> = fresh.keys().cloned().collect();
    for (id, mut def) in fresh {
        def.created_from.sort();
        def.created_from.dedup();
        definitions.insert(id, def);
    }
    AbstractionOutcome { definitions, new_skill_ids, mapping }
}

/// Canonicalizes every subtask text, then abstracts. Fails atomically on the
/// first unparsable phrase.
pub fn abstract_subtasks<S: AsRef<str>>(
    canonicalizer: &dyn Canonicalizer,
    subtasks: &[S],
    g: Granularity,
    existing: &BTreeMap<String, AtomicSkillDefinition>,
) -> Result<AbstractionOutcome, AbstractionError> {
    let sigs = subtasks
        .iter()
        .map(|s| canonicalizer.canonicalize(s.as_ref()).map(|sig| (s.as_ref(), sig)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(abstract_signatures(sigs.iter().map(|(t, s)| (*t, s)), g, existing, canonicalizer.lexicon()))
}

/// Subtask texts a definition set induces: each definition's rendered template.
pub fn induced_subtask_texts(definitions: &BTreeMap<String, AtomicSkillDefinition>) -> Vec<String> {
    definitions.values().map(AtomicSkillDefinition::render).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn canon() -> LexiconCanonicalizer {
        LexiconCanonicalizer::new(Arc::new(Lexicon::builtin()))
    }

    #[test]
    fn lexicon_direct_hit() {
        assert_eq!(canon().canonicalize("pick up the banana").unwrap(), SkillSignature::new("pick-up", "banana"));
    }

    #[test]
    fn object_and_target() {
        assert_eq!(
            canon().canonicalize("place the banana onto the plate").unwrap(),
            SkillSignature::new("place", "banana").with_target("plate")
        );
    }

    #[test]
    fn leading_modifier_verb() {
        assert_eq!(
            canon().canonicalize("Align and tilt the bottle towards the cup").unwrap(),
            SkillSignature::new("tilt", "bottle").with_target("cup").with_modifiers(["align"])
        );
    }

    #[test]
    fn synonyms_fold() {
        let c = canon();
        assert_eq!(c.canonicalize("take the pen").unwrap().verb, "pick-up");
        assert_eq!(c.canonicalize("grab the bottle").unwrap().verb, "grasp");
        assert_eq!(c.canonicalize("Grasp the bottle.").unwrap().verb, "grasp");
        assert_eq!(c.canonicalize("lift up the bottle").unwrap(), SkillSignature::new("lift", "bottle"));
    }

    #[test]
    fn multiword_nouns_and_qualifiers() {
        let c = canon();
        assert_eq!(
            c.canonicalize("place the pen into the pen holder").unwrap(),
            SkillSignature::new("place", "pen").with_target("pen-holder")
        );
        assert_eq!(c.canonicalize("move the red block").unwrap(), SkillSignature::new("move", "red-block"));
        assert_eq!(
            c.canonicalize("carefully pick up the left banana").unwrap(),
            SkillSignature::new("pick-up", "banana").with_modifiers(["carefully", "left"])
        );
    }

    #[test]
    fn rejects_unknown_verbs_and_pronouns() {
        let c = canon();
        assert!(matches!(c.canonicalize("juggle the banana"), Err(AbstractionError::UnparsablePhrase { .. })));
        assert!(matches!(c.canonicalize("place it onto the plate"), Err(AbstractionError::UnparsablePhrase { .. })));
        assert!(matches!(c.canonicalize("pick up"), Err(AbstractionError::UnparsablePhrase { .. })));
        assert!(matches!(c.canonicalize("place the banana onto"), Err(AbstractionError::UnparsablePhrase { .. })));
        assert!(matches!(c.canonicalize(""), Err(AbstractionError::UnparsablePhrase { .. })));
        assert!(matches!(c.canonicalize("align the bottle"), Err(AbstractionError::UnparsablePhrase { .. })));
    }

    #[test]
    fn projection_levels() {
        let s = SkillSignature::new("tilt", "bottle").with_target("cup").with_modifiers(["align"]);
        assert_eq!(project(&s, Granularity::Fine), s);
        assert_eq!(project(&s, Granularity::Medium), SkillSignature::new("tilt", "bottle").with_target("cup"));
        let b = SkillSignature::new("move", "red-block");
        assert_eq!(project(&b, Granularity::Coarse).object_slot, "block");
        assert_eq!(project(&SkillSignature::new("deliver", "cup-of-water"), Granularity::Coarse).object_slot, "cup");
        for g in [Granularity::Coarse, Granularity::Medium, Granularity::Fine] {
            assert_eq!(project(&project(&s, g), g), project(&s, g));
        }
    }

    #[test]
    fn skill_id_scheme() {
        let s = SkillSignature::new("tilt", "bottle").with_target("cup").with_modifiers(["align"]);
        assert_eq!(skill_id(&s, Granularity::Medium), "medium/tilt.bottle.cup");
        assert_eq!(skill_id(&s, Granularity::Fine), "fine/tilt.bottle.cup+align");
        assert_eq!(skill_id(&SkillSignature::new("pick-up", "banana"), Granularity::Coarse), "coarse/pick-up.banana");
    }

    #[test]
    fn templates_match_slots() {
        let lx = Lexicon::builtin();
        let d = AtomicSkillDefinition::from_signature(
            &SkillSignature::new("tilt", "bottle").with_target("cup").with_modifiers(["align"]),
            Granularity::Fine,
            &lx,
        );
        assert_eq!(d.text_template, "align and tilt the {object} towards the {target}");
        assert_eq!(d.placeholders(), vec!["object", "target"]);
        assert_eq!(d.render(), "align and tilt the bottle towards the cup");
        let d = AtomicSkillDefinition::from_signature(&SkillSignature::new("pick-up", "banana"), Granularity::Medium, &lx);
        assert_eq!(d.placeholders(), vec!["object"]);
        assert_eq!(d.render(), "pick up the banana");
    }

    #[test]
    fn table_one_stage_splits_give_four_definitions() {
        let texts = ["grasp the bottle", "pour the bottle into the mug", "pick up the banana", "place the banana onto the plate"];
        let out = abstract_subtasks(&canon(), &texts, Granularity::Medium, &BTreeMap::new()).unwrap();
        let ids: Vec<&str> = out.definitions.keys().map(String::as_str).collect();
        assert_eq!(
            ids,
            vec!["medium/grasp.bottle", "medium/pick-up.banana", "medium/place.banana.plate", "medium/pour.bottle.mug"]
        );
        assert_eq!(out.new_skill_ids.len(), 4);
        assert_eq!(out.mapping.len(), 4);
    }

    #[test]
    fn fixpoint_on_induced_texts() {
        let c = canon();
        let texts = ["align and tilt the bottle towards the cup", "pick up the left banana", "move the red block"];
        for g in [Granularity::Coarse, Granularity::Medium, Granularity::Fine] {
            let first = abstract_subtasks(&c, &texts, g, &BTreeMap::new()).unwrap();
            let again = abstract_subtasks(&c, &induced_subtask_texts(&first.definitions), g, &first.definitions).unwrap();
            assert!(again.new_skill_ids.is_empty(), "{g}: {:?}", again.new_skill_ids);
            assert_eq!(again.definitions, first.definitions);
        }
    }

    #[test]
    fn new_task_adds_only_the_missing_skill() {
        let c = canon();
        let base = abstract_subtasks(
            &c,
            &["lift up the bottle", "align and tilt the bottle towards the cup"],
            Granularity::Medium,
            &BTreeMap::new(),
        )
        .unwrap();
        let next = abstract_subtasks(
            &c,
            &["lift up the bottle", "align and tilt the bottle towards the cup", "deliver the cup"],
            Granularity::Medium,
            &base.definitions,
        )
        .unwrap();
        assert_eq!(next.new_skill_ids, vec!["medium/deliver.cup"]);
        for (id, def) in &base.definitions {
            assert_eq!(&next.definitions[id], def);
        }
    }

    #[test]
    fn unparsable_phrase_is_atomic() {
        let err = abstract_subtasks(&canon(), &["pick up the pen", "juggle the pen"], Granularity::Medium, &BTreeMap::new());
        assert!(err.is_err());
    }
}
