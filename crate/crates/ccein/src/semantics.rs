//! Semantic messaging: attribute descriptors, compression, consistency.
//!
//! Devices do not ship raw sensor frames; they exchange *descriptors* — small
//! sets of `key = value` attributes about a target. Five keys exist, in fixed
//! priority order:
//!
//! `Category > Position > Severity > Accessibility > Confidence`
//!
//! Compression works by dropping low-priority attributes: level 0 keeps all
//! five, each further level drops one more (level 3 keeps only `Category` and
//! `Position`) while shrinking the payload by the byte ratios 1/2/4/8. Each
//! kept attribute travels as its own fragment, so partial loss degrades a
//! descriptor attribute by attribute — except `Category`, whose loss makes
//! the whole message undecodable.
//!
//! The *semantic consistency score* compares everything a receiver has
//! learned against the ground-truth knowledge base: per target, the fraction
//! of reference attributes reproduced exactly; averaged over all reference
//! targets (undetected targets count 0).

use std::collections::BTreeMap;
use std::fmt;

use crate::scenario::{Coord, DeviceId, Target, TargetCategory, TargetId, World};
use crate::Tick;

// -------------------------------------------------------------- attributes

/// Attribute keys in canonical (= priority) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AttrKey {
    Category,
    Position,
    Severity,
    Accessibility,
    Confidence,
}

pub const ATTR_KEYS: [AttrKey; 5] = [
    AttrKey::Category,
    AttrKey::Position,
    AttrKey::Severity,
    AttrKey::Accessibility,
    AttrKey::Confidence,
];

/// Number of attributes in a full reference descriptor.
pub const REFERENCE_ATTR_COUNT: usize = ATTR_KEYS.len();

impl AttrKey {
    pub fn as_str(self) -> &'static str {
        match self {
            AttrKey::Category => "Category",
            AttrKey::Position => "Position",
            AttrKey::Severity => "Severity",
            AttrKey::Accessibility => "Accessibility",
            AttrKey::Confidence => "Confidence",
        }
    }
}

/// One attribute: the variant is the key, the payload the value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Attribute {
    Category(TargetCategory),
    Position(Coord),
    Severity(u8),
    Accessibility(u8),
    Confidence(u8),
}

impl Attribute {
    pub fn key(self) -> AttrKey {
        match self {
            Attribute::Category(_) => AttrKey::Category,
            Attribute::Position(_) => AttrKey::Position,
            Attribute::Severity(_) => AttrKey::Severity,
            Attribute::Accessibility(_) => AttrKey::Accessibility,
            Attribute::Confidence(_) => AttrKey::Confidence,
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Attribute::Category(c) => write!(f, "Category={}", c.as_str()),
            Attribute::Position(p) => write!(f, "Position={},{}", p.x, p.y),
            Attribute::Severity(v) => write!(f, "Severity={v}"),
            Attribute::Accessibility(v) => write!(f, "Accessibility={v}"),
            Attribute::Confidence(v) => write!(f, "Confidence={v}"),
        }
    }
}

impl Attribute {
    /// Parses the `key=value` form produced by `Display`.
    pub fn parse(s: &str) -> Result<Attribute, SemanticsError> {
        let bad = || SemanticsError::Format(format!("bad attribute {s:?}"));
        let (key, value) = s.split_once('=').ok_or_else(bad)?;
        Ok(match key {
            "Category" => Attribute::Category(TargetCategory::from_str(value).ok_or_else(bad)?),
            "Position" => {
                let (x, y) = value.split_once(',').ok_or_else(bad)?;
                Attribute::Position(Coord::new(
                    x.parse().map_err(|_| bad())?,
                    y.parse().map_err(|_| bad())?,
                ))
            }
            "Severity" => Attribute::Severity(value.parse().map_err(|_| bad())?),
            "Accessibility" => Attribute::Accessibility(value.parse().map_err(|_| bad())?),
            "Confidence" => Attribute::Confidence(value.parse().map_err(|_| bad())?),
            _ => return Err(bad()),
        })
    }
}

// ------------------------------------------------------------- descriptors

/// A well-formed descriptor as produced by a sensing device: attributes in
/// canonical key order, unique keys, `Category` always present.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticDescriptor {
    target_id: TargetId,
    attributes: Vec<Attribute>,
}

impl SemanticDescriptor {
    pub fn new(target_id: TargetId, mut attributes: Vec<Attribute>) -> Result<Self, SemanticsError> {
        attributes.sort_by_key(|a| a.key());
        for pair in attributes.windows(2) {
            if pair[0].key() == pair[1].key() {
                return Err(SemanticsError::DuplicateKey(pair[0].key().as_str()));
            }
        }
        if !attributes.iter().any(|a| a.key() == AttrKey::Category) {
            return Err(SemanticsError::MissingCategory);
        }
        Ok(SemanticDescriptor { target_id, attributes })
    }

    /// The full five-attribute ground-truth view of a target.
    pub fn reference(target: &Target) -> Self {
        SemanticDescriptor {
            target_id: target.id,
            attributes: vec![
                Attribute::Category(target.category),
                Attribute::Position(target.cell),
                Attribute::Severity(target.severity),
                Attribute::Accessibility(target.accessibility),
                Attribute::Confidence(target.confidence),
            ],
        }
    }

    pub fn target_id(&self) -> TargetId {
        self.target_id
    }

    /// Attributes in canonical key order.
    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn get(&self, key: AttrKey) -> Option<Attribute> {
        self.attributes.iter().copied().find(|a| a.key() == key)
    }
}

/// What a receiver holds about one target: any subset of attributes,
/// possibly empty. Grows monotonically as fragments arrive.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReceivedDescriptor {
    attributes: BTreeMap<AttrKey, Attribute>,
}

impl ReceivedDescriptor {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn get(&self, key: AttrKey) -> Option<Attribute> {
        self.attributes.get(&key).copied()
    }

    pub fn attributes(&self) -> impl Iterator<Item = Attribute> + '_ {
        self.attributes.values().copied()
    }

    /// Merges newly arrived attributes; later arrivals overwrite on key
    /// collision (in practice values for a target are stable ground truth).
    pub fn merge(&mut self, attrs: impl IntoIterator<Item = Attribute>) {
        for a in attrs {
            self.attributes.insert(a.key(), a);
        }
    }
}

// ---------------------------------------------------------------- messages

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MsgId(pub u64);

impl fmt::Display for MsgId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{}", self.0)
    }
}

/// Message urgency class. Drives the reward multiplier, the default payload
/// size and the delivery deadline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Urgency {
    Critical,
    Normal,
    Deferred,
}

impl Urgency {
    pub fn as_str(self) -> &'static str {
        match self {
            Urgency::Critical => "Critical",
            Urgency::Normal => "Normal",
            Urgency::Deferred => "Deferred",
        }
    }

    pub fn from_str(s: &str) -> Option<Self> {
        Some(match s {
            "Critical" => Urgency::Critical,
            "Normal" => Urgency::Normal,
            "Deferred" => Urgency::Deferred,
            _ => return None,
        })
    }

    /// Reward multiplier: urgent deliveries are worth more.
    pub fn multiplier(self) -> f64 {
        match self {
            Urgency::Critical => 2.0,
            Urgency::Normal => 1.0,
            Urgency::Deferred => 0.5,
        }
    }

    /// Raw (pre-compression) payload in bytes: 50 KB / 200 KB / 1 MB.
    pub fn default_payload_bytes(self) -> u64 {
        match self {
            Urgency::Critical => 50 * 1024,
            Urgency::Normal => 200 * 1024,
            Urgency::Deferred => 1024 * 1024,
        }
    }

    /// Delivery deadline, in ticks after creation, for messages of this
    /// urgency.
    pub fn deadline_window_ticks(self) -> Tick {
        match self {
            Urgency::Critical => 30,
            Urgency::Normal => 60,
            Urgency::Deferred => 120,
        }
    }

    /// Precedence for contention decisions; higher wins.
    pub fn priority_rank(self) -> u8 {
        match self {
            Urgency::Critical => 2,
            Urgency::Normal => 1,
            Urgency::Deferred => 0,
        }
    }
}

/// Number of valid compression levels (size of the controller's
/// compression head).
pub const COMPRESSION_LEVEL_COUNT: usize = 4;

/// Byte compression ratio of a level; levels 0..=3 are valid.
pub fn compression_ratio(level: u8) -> Option<u64> {
    match level {
        0 => Some(1),
        1 => Some(2),
        2 => Some(4),
        3 => Some(8),
        _ => None,
    }
}

/// Attribute count kept at a compression level (level 0 keeps all five).
pub fn attrs_kept(level: u8) -> Option<usize> {
    (level <= 3).then(|| REFERENCE_ATTR_COUNT - level as usize)
}

/// One transmission-ready unit: a (possibly compressed) descriptor plus the
/// bookkeeping the channel and the reward need.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMessage {
    pub id: MsgId,
    pub source: DeviceId,
    pub descriptor: SemanticDescriptor,
    pub urgency: Urgency,
    pub compression_level: u8,
    pub payload_bytes_raw: u64,
    pub payload_bytes_compressed: u64,
    pub created_tick: Tick,
    pub deadline_tick: Tick,
}

impl SemanticMessage {
    /// Number of channel fragments: one per kept attribute.
    pub fn fragment_count(&self) -> usize {
        self.descriptor.attributes().len()
    }

    /// Ticks left before the deadline window closes.
    pub fn deadline_window(&self) -> Tick {
        self.deadline_tick.saturating_sub(self.created_tick)
    }
}

/// Non-descriptor context for [`encode`].
#[derive(Debug, Clone, Copy)]
pub struct MessageMeta {
    pub id: MsgId,
    pub source: DeviceId,
    pub created_tick: Tick,
    pub deadline_tick: Tick,
    pub payload_bytes_raw: u64,
}

/// Encodes an observation into a transmissible message at the requested
/// compression level. Level `L` keeps the `5 - L` highest-priority
/// attributes and divides the payload bytes by 1/2/4/8 (rounding up).
pub fn encode(
    observation: &SemanticDescriptor,
    urgency: Urgency,
    compression_level: u8,
    meta: MessageMeta,
) -> Result<SemanticMessage, SemanticsError> {
    let ratio =
        compression_ratio(compression_level).ok_or(SemanticsError::BadLevel(compression_level))?;
    let keep = attrs_kept(compression_level).expect("level validated above");
    let kept: Vec<Attribute> = ATTR_KEYS
        .iter()
        .take(keep)
        .filter_map(|&k| observation.get(k))
        .collect();
    let descriptor = SemanticDescriptor::new(observation.target_id(), kept)?;
    Ok(SemanticMessage {
        id: meta.id,
        source: meta.source,
        descriptor,
        urgency,
        compression_level,
        payload_bytes_raw: meta.payload_bytes_raw,
        payload_bytes_compressed: meta.payload_bytes_raw.div_ceil(ratio),
        created_tick: meta.created_tick,
        deadline_tick: meta.deadline_tick,
    })
}

/// Applies a per-fragment delivery outcome to a message. `delivered[i]`
/// refers to the i-th attribute in canonical order. Losing the `Category`
/// fragment makes the message undecodable: the result is empty.
pub fn corrupt(msg: &SemanticMessage, delivered: &[bool]) -> Result<ReceivedDescriptor, SemanticsError> {
    let attrs = msg.descriptor.attributes();
    if delivered.len() != attrs.len() {
        return Err(SemanticsError::FragmentCountMismatch {
            expected: attrs.len(),
            got: delivered.len(),
        });
    }
    let mut received = ReceivedDescriptor::empty();
    for (attr, &ok) in attrs.iter().zip(delivered) {
        if attr.key() == AttrKey::Category && !ok {
            return Ok(ReceivedDescriptor::empty());
        }
        if ok {
            received.merge([*attr]);
        }
    }
    Ok(received)
}

// ----------------------------------------------------------- knowledge base

/// Ground-truth reference: exactly one full descriptor per target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeBase {
    references: BTreeMap<TargetId, SemanticDescriptor>,
}

impl KnowledgeBase {
    pub fn from_targets(targets: &[Target]) -> Self {
        KnowledgeBase {
            references: targets
                .iter()
                .map(|t| (t.id, SemanticDescriptor::reference(t)))
                .collect(),
        }
    }

    pub fn from_world(world: &World) -> Self {
        Self::from_targets(&world.targets)
    }

    pub fn len(&self) -> usize {
        self.references.len()
    }

    pub fn is_empty(&self) -> bool {
        self.references.is_empty()
    }

    pub fn reference(&self, id: TargetId) -> Option<&SemanticDescriptor> {
        self.references.get(&id)
    }

    pub fn targets(&self) -> impl Iterator<Item = TargetId> + '_ {
        self.references.keys().copied()
    }

    /// Versioned text serialization, one reference per line.
    pub fn to_text(&self) -> String {
        let mut out = String::from(KB_FORMAT_VERSION);
        out.push('\n');
        for (id, d) in &self.references {
            out.push_str(&format!("ref {}", id.0));
            for a in d.attributes() {
                out.push_str(&format!(" {a}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, SemanticsError> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h == KB_FORMAT_VERSION => {}
            other => {
                return Err(SemanticsError::Format(format!(
                    "unsupported knowledge-base header {other:?}"
                )))
            }
        }
        let mut references = BTreeMap::new();
        for line in lines {
            let mut fields = line.split_whitespace();
            if fields.next() != Some("ref") {
                return Err(SemanticsError::Format(format!("bad reference line {line:?}")));
            }
            let id: u32 = fields
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| SemanticsError::Format(format!("bad target id in {line:?}")))?;
            let attrs = fields.map(Attribute::parse).collect::<Result<Vec<_>, _>>()?;
            references.insert(TargetId(id), SemanticDescriptor::new(TargetId(id), attrs)?);
        }
        Ok(KnowledgeBase { references })
    }
}

pub const KB_FORMAT_VERSION: &str = "ccein-kb v1";

/// Semantic consistency of everything received against the reference
/// knowledge base: per target, exactly-matching attribute pairs divided by
/// the reference attribute count; averaged over *all* reference targets
/// (targets nobody reported score 0). Errors on an empty knowledge base.
pub fn consistency_score(
    received: &BTreeMap<TargetId, ReceivedDescriptor>,
    kb: &KnowledgeBase,
) -> Result<f64, SemanticsError> {
    if kb.is_empty() {
        return Err(SemanticsError::EmptyKnowledgeBase);
    }
    let mut total = 0.0;
    for (id, reference) in &kb.references {
        let Some(got) = received.get(id) else {
            continue;
        };
        let matching = reference
            .attributes()
            .iter()
            .filter(|a| got.get(a.key()) == Some(**a))
            .count();
        total += matching as f64 / reference.attributes().len() as f64;
    }
    Ok(total / kb.len() as f64)
}

// ------------------------------------------------------------------ errors

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SemanticsError {
    #[error("descriptor is missing the mandatory Category attribute")]
    MissingCategory,
    #[error("descriptor has duplicate attribute key {0}")]
    DuplicateKey(&'static str),
    #[error("invalid compression level {0}, valid levels are 0..=3")]
    BadLevel(u8),
    #[error("fragment outcome length {got} does not match fragment count {expected}")]
    FragmentCountMismatch { expected: usize, got: usize },
    #[error("consistency score is undefined for an empty knowledge base")]
    EmptyKnowledgeBase,
    #[error("semantics format: {0}")]
    Format(String),
}

// -------------------------------------------------------------------- tests

#[cfg(test)]
mod tests {
    use super::*;

    fn target() -> Target {
        Target {
            id: TargetId(3),
            category: TargetCategory::Victim,
            cell: Coord::new(4, 9),
            severity: 2,
            accessibility: 1,
            confidence: 8,
        }
    }

    fn meta() -> MessageMeta {
        MessageMeta {
            id: MsgId(1),
            source: DeviceId(0),
            created_tick: 10,
            deadline_tick: 40,
            payload_bytes_raw: 1000,
        }
    }

    #[test]
    fn level_zero_keeps_all_five_attributes() {
        let obs = SemanticDescriptor::reference(&target());
        let msg = encode(&obs, Urgency::Critical, 0, meta()).unwrap();
        assert_eq!(msg.fragment_count(), 5);
        assert_eq!(msg.payload_bytes_compressed, 1000);
    }

    #[test]
    fn level_three_keeps_category_and_position_only() {
        let obs = SemanticDescriptor::reference(&target());
        let msg = encode(&obs, Urgency::Deferred, 3, meta()).unwrap();
        let keys: Vec<AttrKey> = msg.descriptor.attributes().iter().map(|a| a.key()).collect();
        assert_eq!(keys, vec![AttrKey::Category, AttrKey::Position]);
        assert_eq!(msg.payload_bytes_compressed, 125);
    }

    #[test]
    fn thousand_bytes_at_level_two_compress_to_250() {
        let obs = SemanticDescriptor::reference(&target());
        let msg = encode(&obs, Urgency::Normal, 2, meta()).unwrap();
        assert_eq!(msg.payload_bytes_compressed, 250);
        assert_eq!(msg.fragment_count(), 3);
    }

    #[test]
    fn compressed_size_rounds_up() {
        let obs = SemanticDescriptor::reference(&target());
        let m = MessageMeta { payload_bytes_raw: 1001, ..meta() };
        let msg = encode(&obs, Urgency::Normal, 3, m).unwrap();
        assert_eq!(msg.payload_bytes_compressed, 126, "ceil(1001/8)");
    }

    #[test]
    fn invalid_level_is_rejected() {
        let obs = SemanticDescriptor::reference(&target());
        assert_eq!(
            encode(&obs, Urgency::Normal, 4, meta()).unwrap_err(),
            SemanticsError::BadLevel(4)
        );
    }

    #[test]
    fn corrupt_with_full_delivery_returns_the_descriptor_unchanged() {
        let obs = SemanticDescriptor::reference(&target());
        let msg = encode(&obs, Urgency::Normal, 0, meta()).unwrap();
        let got = corrupt(&msg, &[true; 5]).unwrap();
        assert_eq!(got.len(), 5);
        for a in msg.descriptor.attributes() {
            assert_eq!(got.get(a.key()), Some(*a));
        }
    }

    #[test]
    fn category_loss_yields_an_empty_descriptor() {
        let obs = SemanticDescriptor::reference(&target());
        let msg = encode(&obs, Urgency::Normal, 0, meta()).unwrap();
        // Category is the first fragment in canonical order.
        let got = corrupt(&msg, &[false, true, true, true, true]).unwrap();
        assert!(got.is_empty(), "losing Category must void the message");
    }

    #[test]
    fn severity_loss_decodes_to_four_attributes() {
        let obs = SemanticDescriptor::reference(&target());
        let msg = encode(&obs, Urgency::Normal, 0, meta()).unwrap();
        let got = corrupt(&msg, &[true, true, false, true, true]).unwrap();
        assert_eq!(got.len(), 4);
        assert_eq!(got.get(AttrKey::Severity), None);
        assert_eq!(got.get(AttrKey::Position), Some(Attribute::Position(Coord::new(4, 9))));
    }

    #[test]
    fn fragment_count_mismatch_is_an_error() {
        let obs = SemanticDescriptor::reference(&target());
        let msg = encode(&obs, Urgency::Normal, 0, meta()).unwrap();
        assert!(matches!(
            corrupt(&msg, &[true, true]).unwrap_err(),
            SemanticsError::FragmentCountMismatch { expected: 5, got: 2 }
        ));
    }

    fn single_target_kb() -> KnowledgeBase {
        KnowledgeBase::from_targets(&[target()])
    }

    #[test]
    fn consistency_is_one_for_identical_descriptors() {
        let kb = single_target_kb();
        let mut received = BTreeMap::new();
        let mut r = ReceivedDescriptor::empty();
        r.merge(SemanticDescriptor::reference(&target()).attributes().iter().copied());
        received.insert(TargetId(3), r);
        assert_eq!(consistency_score(&received, &kb).unwrap(), 1.0);
    }

    #[test]
    fn consistency_is_zero_when_nothing_was_received() {
        let kb = single_target_kb();
        assert_eq!(consistency_score(&BTreeMap::new(), &kb).unwrap(), 0.0);
    }

    #[test]
    fn three_of_five_matching_attributes_score_point_six() {
        let kb = single_target_kb();
        let mut r = ReceivedDescriptor::empty();
        // Category, Position, Severity match; Accessibility and Confidence
        // are absent. 3 matching pairs / 5 reference attributes = 0.6.
        r.merge([
            Attribute::Category(TargetCategory::Victim),
            Attribute::Position(Coord::new(4, 9)),
            Attribute::Severity(2),
        ]);
        let received = BTreeMap::from([(TargetId(3), r)]);
        assert_eq!(consistency_score(&received, &kb).unwrap(), 0.6);
    }

    #[test]
    fn wrong_values_do_not_count_as_matches() {
        let kb = single_target_kb();
        let mut r = ReceivedDescriptor::empty();
        r.merge([
            Attribute::Category(TargetCategory::Victim),
            Attribute::Position(Coord::new(0, 0)), // wrong cell
            Attribute::Severity(3),                // wrong severity
        ]);
        let received = BTreeMap::from([(TargetId(3), r)]);
        assert_eq!(consistency_score(&received, &kb).unwrap(), 0.2);
    }

    #[test]
    fn empty_knowledge_base_is_an_error() {
        let kb = KnowledgeBase::from_targets(&[]);
        assert_eq!(
            consistency_score(&BTreeMap::new(), &kb).unwrap_err(),
            SemanticsError::EmptyKnowledgeBase
        );
    }

    #[test]
    fn knowledge_base_text_round_trips() {
        let kb = KnowledgeBase::from_targets(&[
            target(),
            Target {
                id: TargetId(7),
                category: TargetCategory::Supply,
                cell: Coord::new(1, 2),
                severity: 0,
                accessibility: 2,
                confidence: 10,
            },
        ]);
        let text = kb.to_text();
        assert!(text.starts_with(KB_FORMAT_VERSION));
        let parsed = KnowledgeBase::from_text(&text).unwrap();
        assert_eq!(parsed, kb);
    }
}
