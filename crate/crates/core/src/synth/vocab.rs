use serde::{Deserialize, Serialize};

/// Fixed words used to build query templates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TemplateWord {
    /// Placeholder occupying the premise slot of a clean query.
    Null,
    The,
    At,
    Thing,
    AskObject,
    AskAttribute,
    AskRelation,
}

impl TemplateWord {
    pub const ALL: [TemplateWord; 7] = [
        TemplateWord::Null,
        TemplateWord::The,
        TemplateWord::At,
        TemplateWord::Thing,
        TemplateWord::AskObject,
        TemplateWord::AskAttribute,
        TemplateWord::AskRelation,
    ];

    fn index(self) -> u32 {
        Self::ALL.iter().position(|&w| w == self).expect("listed") as u32
    }
}

/// Spatial relation between two scene slots.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    LeftOf,
    RightOf,
}

impl Relation {
    pub const ALL: [Relation; 2] = [Relation::LeftOf, Relation::RightOf];

    pub fn index(self) -> u32 {
        match self {
            Relation::LeftOf => 0,
            Relation::RightOf => 1,
        }
    }

    pub fn from_index(i: u32) -> Option<Self> {
        Self::ALL.get(i as usize).copied()
    }

    pub fn opposite(self) -> Self {
        match self {
            Relation::LeftOf => Relation::RightOf,
            Relation::RightOf => Relation::LeftOf,
        }
    }
}

/// What a token id denotes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenKind {
    Visual { object: u32, attribute: u32 },
    ObjectWord(u32),
    AttributeWord(u32),
    RelationWord(Relation),
    Template(TemplateWord),
    Slot(u32),
    AnswerObject(u32),
    AnswerAttribute(u32),
    AnswerRelation(Relation),
}

/// Closed vocabulary with disjoint id ranges, in this order: visual patches,
/// object words, attribute words, relation words, template words, slot
/// words, object answers, attribute answers, relation answers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Vocab {
    pub n_objects: u32,
    pub n_attributes: u32,
    /// Visual slots per scene.
    pub n_slots: u32,
}

impl Default for Vocab {
    fn default() -> Self {
        Self { n_objects: 8, n_attributes: 4, n_slots: 4 }
    }
}

const N_REL: u32 = 2;
const N_TEMPLATE: u32 = TemplateWord::ALL.len() as u32;

impl Vocab {
    fn visual_base(&self) -> u32 {
        0
    }
    fn object_base(&self) -> u32 {
        self.n_objects * self.n_attributes
    }
    fn attribute_base(&self) -> u32 {
        self.object_base() + self.n_objects
    }
    fn relation_base(&self) -> u32 {
        self.attribute_base() + self.n_attributes
    }
    fn template_base(&self) -> u32 {
        self.relation_base() + N_REL
    }
    fn slot_base(&self) -> u32 {
        self.template_base() + N_TEMPLATE
    }
    fn answer_object_base(&self) -> u32 {
        self.slot_base() + self.n_slots
    }
    fn answer_attribute_base(&self) -> u32 {
        self.answer_object_base() + self.n_objects
    }
    fn answer_relation_base(&self) -> u32 {
        self.answer_attribute_base() + self.n_attributes
    }

    pub fn size(&self) -> usize {
        (self.answer_relation_base() + N_REL) as usize
    }

    pub fn visual(&self, object: u32, attribute: u32) -> u32 {
        self.visual_base() + object * self.n_attributes + attribute
    }
    pub fn object_word(&self, o: u32) -> u32 {
        self.object_base() + o
    }
    pub fn attribute_word(&self, a: u32) -> u32 {
        self.attribute_base() + a
    }
    pub fn relation_word(&self, r: Relation) -> u32 {
        self.relation_base() + r.index()
    }
    pub fn template(&self, w: TemplateWord) -> u32 {
        self.template_base() + w.index()
    }
    pub fn slot(&self, k: u32) -> u32 {
        self.slot_base() + k
    }
    pub fn answer_object(&self, o: u32) -> u32 {
        self.answer_object_base() + o
    }
    pub fn answer_attribute(&self, a: u32) -> u32 {
        self.answer_attribute_base() + a
    }
    pub fn answer_relation(&self, r: Relation) -> u32 {
        self.answer_relation_base() + r.index()
    }

    pub fn is_answer(&self, t: u32) -> bool {
        t >= self.answer_object_base() && (t as usize) < self.size()
    }

    pub fn decode(&self, t: u32) -> Option<TokenKind> {
        let kind = if t < self.object_base() {
            TokenKind::Visual { object: t / self.n_attributes, attribute: t % self.n_attributes }
        } else if t < self.attribute_base() {
            TokenKind::ObjectWord(t - self.object_base())
        } else if t < self.relation_base() {
            TokenKind::AttributeWord(t - self.attribute_base())
        } else if t < self.template_base() {
            TokenKind::RelationWord(Relation::from_index(t - self.relation_base())?)
        } else if t < self.slot_base() {
            TokenKind::Template(TemplateWord::ALL[(t - self.template_base()) as usize])
        } else if t < self.answer_object_base() {
            TokenKind::Slot(t - self.slot_base())
        } else if t < self.answer_attribute_base() {
            TokenKind::AnswerObject(t - self.answer_object_base())
        } else if t < self.answer_relation_base() {
            TokenKind::AnswerAttribute(t - self.answer_attribute_base())
        } else if (t as usize) < self.size() {
            TokenKind::AnswerRelation(Relation::from_index(t - self.answer_relation_base())?)
        } else {
            return None;
        };
        Some(kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_id_decodes_and_round_trips() {
        let v = Vocab::default();
        for t in 0..v.size() as u32 {
            let back = match v.decode(t).unwrap() {
                TokenKind::Visual { object, attribute } => v.visual(object, attribute),
                TokenKind::ObjectWord(o) => v.object_word(o),
                TokenKind::AttributeWord(a) => v.attribute_word(a),
                TokenKind::RelationWord(r) => v.relation_word(r),
                TokenKind::Template(w) => v.template(w),
                TokenKind::Slot(k) => v.slot(k),
                TokenKind::AnswerObject(o) => v.answer_object(o),
                TokenKind::AnswerAttribute(a) => v.answer_attribute(a),
                TokenKind::AnswerRelation(r) => v.answer_relation(r),
            };
            assert_eq!(back, t);
        }
        assert!(v.decode(v.size() as u32).is_none());
    }
}
