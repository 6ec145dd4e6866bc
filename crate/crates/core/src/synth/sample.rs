use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{Relation, TemplateWord, TokenKind, Vocab};
use crate::error::{Error, Result};

/// Ground-truth visual evidence: one object per slot, each with an attribute.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Scene {
    /// Object id per slot, all distinct.
    pub objects: Vec<u32>,
    /// Attribute id of the object in the same slot.
    pub attributes: Vec<u32>,
    /// `(subject, relation, object)` for every ordered pair of distinct slots.
    pub relations: Vec<(u32, Relation, u32)>,
}

impl Scene {
    pub fn visual_tokens(&self, vocab: &Vocab) -> Vec<u32> {
        self.objects.iter().zip(&self.attributes).map(|(&o, &a)| vocab.visual(o, a)).collect()
    }

    pub fn slot_of(&self, object: u32) -> Option<usize> {
        self.objects.iter().position(|&o| o == object)
    }

    pub fn relation(&self, subject: u32, object: u32) -> Option<Relation> {
        self.relations.iter().find(|(s, _, o)| *s == subject && *o == object).map(|&(_, r, _)| r)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = self.objects.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.objects.len() {
            return Err(Error::Input("scene objects are not distinct".into()));
        }
        if self.attributes.len() != self.objects.len() {
            return Err(Error::Input("every scene object needs exactly one attribute".into()));
        }
        for (s, _, o) in &self.relations {
            if self.slot_of(*s).is_none() || self.slot_of(*o).is_none() {
                return Err(Error::Input("relation endpoint missing from scene objects".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConflictType {
    Object,
    Attribute,
    Relation,
}

impl ConflictType {
    pub const ALL: [ConflictType; 3] = [ConflictType::Object, ConflictType::Attribute, ConflictType::Relation];
}

/// Proportions over `(object, attribute, relation)` conflicts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeMix(pub [f64; 3]);

impl TypeMix {
    pub const OBJECT_ONLY: TypeMix = TypeMix([1.0, 0.0, 0.0]);

    pub fn validate(&self) -> Result<()> {
        if self.0.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Input(format!("type mix {:?} has negative or non-finite entries", self.0)));
        }
        let total: f64 = self.0.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Input(format!("type mix {:?} sums to {total}, expected 1", self.0)));
        }
        Ok(())
    }

    fn pick(&self, u: f64) -> ConflictType {
        let mut acc = 0.0;
        for (p, t) in self.0.iter().zip(ConflictType::ALL) {
            acc += p;
            if u < acc {
                return t;
            }
        }
        // u landed in rounding slack; take the last type with positive mass
        ConflictType::ALL[self.0.iter().rposition(|&p| p > 0.0).unwrap_or(0)]
    }
}

impl std::str::FromStr for TypeMix {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| Error::Input(format!("bad type mix `{s}`: {e}"))))
            .collect::<Result<_>>()?;
        let arr: [f64; 3] = parts
            .try_into()
            .map_err(|_| Error::Input(format!("type mix `{s}` needs exactly three comma-separated values")))?;
        let mix = TypeMix(arr);
        mix.validate()?;
        Ok(mix)
    }
}

/// A paired clean/conflict query over one scene, with single-token answers.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConflictSample {
    pub id: u64,
    pub scene: Scene,
    pub conflict_type: ConflictType,
    pub clean_query: Vec<u32>,
    pub conflict_query: Vec<u32>,
    /// Premise word embedded in the conflict query.
    pub premise: u32,
    /// Factual (visually grounded) answer.
    pub y_f: u32,
    /// Answer implied by the erroneous premise.
    pub y_h: u32,
}

impl ConflictSample {
    pub fn check(&self, vocab: &Vocab) -> Result<()> {
        self.scene.validate()?;
        if self.y_f == self.y_h {
            return Err(Error::Input(format!("sample {}: factual and hallucinated answers coincide", self.id)));
        }
        if self.clean_query.len() != self.conflict_query.len() {
            return Err(Error::Input(format!("sample {}: clean and conflict queries differ in length", self.id)));
        }
        let contradicts = match (self.conflict_type, vocab.decode(self.premise)) {
            (ConflictType::Object, Some(TokenKind::ObjectWord(o))) => self.scene.slot_of(o).is_none(),
            (ConflictType::Attribute, Some(TokenKind::AttributeWord(a))) => {
                interpret(vocab, &self.scene, &self.clean_query) != Some(vocab.answer_attribute(a))
            }
            (ConflictType::Relation, Some(TokenKind::RelationWord(r))) => {
                interpret(vocab, &self.scene, &self.clean_query) != Some(vocab.answer_relation(r))
            }
            _ => false,
        };
        if !contradicts {
            return Err(Error::Input(format!("sample {}: premise does not contradict the scene", self.id)));
        }
        Ok(())
    }
}

/// Query layouts (all five tokens long; position 4 is the answer position):
///
/// - object:    `THE <obj|NULL> AT <slot> ASK_OBJ`
/// - attribute: `<attr|NULL> THING AT <slot> ASK_ATTR`
/// - relation:  `<obj_a> <rel|NULL> <obj_b> THE ASK_REL`
pub const QUERY_LEN: usize = 5;

pub(crate) fn premise_position(t: ConflictType) -> usize {
    match t {
        ConflictType::Object => 1,
        ConflictType::Attribute => 0,
        ConflictType::Relation => 1,
    }
}

/// Derives the per-sample RNG seed (splitmix64 finalizer over seed and index).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn check_vocab(vocab: &Vocab, mix: &TypeMix) -> Result<()> {
    if vocab.n_slots < 2 {
        return Err(Error::Generation("scenes need at least two slots".into()));
    }
    if mix.0[0] > 0.0 && vocab.n_objects <= vocab.n_slots {
        return Err(Error::Generation(format!(
            "object conflicts need an object absent from the scene: {} objects for {} slots",
            vocab.n_objects, vocab.n_slots
        )));
    }
    if vocab.n_objects < vocab.n_slots {
        return Err(Error::Generation("fewer objects than scene slots".into()));
    }
    if mix.0[1] > 0.0 && vocab.n_attributes < 2 {
        return Err(Error::Generation("attribute conflicts need at least two attributes".into()));
    }
    Ok(())
}

/// Generates `n` samples. Sample `i` depends only on `(seed, i)`.
pub fn generate(vocab: &Vocab, seed: u64, n: usize, mix: TypeMix) -> Result<Vec<ConflictSample>> {
    if n == 0 {
        return Err(Error::Input("n must be at least 1".into()));
    }
    mix.validate()?;
    check_vocab(vocab, &mix)?;
    (0..n as u64).map(|i| generate_one(vocab, seed, i, &mix)).collect()
}

fn generate_one(vocab: &Vocab, seed: u64, id: u64, mix: &TypeMix) -> Result<ConflictSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, id));
    let kind = mix.pick(rng.random::<f64>());

    let all_objects: Vec<u32> = (0..vocab.n_objects).collect();
    let objects: Vec<u32> = all_objects.choose_multiple(&mut rng, vocab.n_slots as usize).copied().collect();
    let attributes: Vec<u32> = (0..vocab.n_slots).map(|_| rng.random_range(0..vocab.n_attributes)).collect();
    let mut relations = Vec::new();
    for (i, &a) in objects.iter().enumerate() {
        for (j, &b) in objects.iter().enumerate() {
            if i != j {
                relations.push((a, if i < j { Relation::LeftOf } else { Relation::RightOf }, b));
            }
        }
    }
    let scene = Scene { objects, attributes, relations };
    let null = vocab.template(TemplateWord::Null);

    let (query, premise, y_f, y_h) = match kind {
        ConflictType::Object => {
            let k = rng.random_range(0..vocab.n_slots);
            let absent: Vec<u32> = all_objects.iter().copied().filter(|o| scene.slot_of(*o).is_none()).collect();
            let x = *absent.choose(&mut rng).expect("vocab check guarantees an absent object");
            let q = vec![
                vocab.template(TemplateWord::The),
                null,
                vocab.template(TemplateWord::At),
                vocab.slot(k),
                vocab.template(TemplateWord::AskObject),
            ];
            (q, vocab.object_word(x), vocab.answer_object(scene.objects[k as usize]), vocab.answer_object(x))
        }
        ConflictType::Attribute => {
            let k = rng.random_range(0..vocab.n_slots);
            let truth = scene.attributes[k as usize];
            let others: Vec<u32> = (0..vocab.n_attributes).filter(|&a| a != truth).collect();
            let a = *others.choose(&mut rng).expect("at least two attributes");
            let q = vec![
                null,
                vocab.template(TemplateWord::Thing),
                vocab.template(TemplateWord::At),
                vocab.slot(k),
                vocab.template(TemplateWord::AskAttribute),
            ];
            (q, vocab.attribute_word(a), vocab.answer_attribute(truth), vocab.answer_attribute(a))
        }
        ConflictType::Relation => {
            let pair: Vec<u32> = scene.objects.choose_multiple(&mut rng, 2).copied().collect();
            let truth = scene.relation(pair[0], pair[1]).expect("pair drawn from scene");
            let wrong = truth.opposite();
            let q = vec![
                vocab.object_word(pair[0]),
                null,
                vocab.object_word(pair[1]),
                vocab.template(TemplateWord::The),
                vocab.template(TemplateWord::AskRelation),
            ];
            (q, vocab.relation_word(wrong), vocab.answer_relation(truth), vocab.answer_relation(wrong))
        }
    };
    let mut conflict_query = query.clone();
    conflict_query[premise_position(kind)] = premise;
    Ok(ConflictSample { id, scene, conflict_type: kind, clean_query: query, conflict_query, premise, y_f, y_h })
}

/// Rule interpreter: answers a clean query from the scene alone, or `None`
/// if the tokens do not form a recognised clean template.
pub fn interpret(vocab: &Vocab, scene: &Scene, query: &[u32]) -> Option<u32> {
    use TemplateWord as W;
    if query.len() != QUERY_LEN {
        return None;
    }
    let kinds: Vec<TokenKind> = query.iter().map(|&t| vocab.decode(t)).collect::<Option<_>>()?;
    let slot_at = |k: u32| (k < scene.objects.len() as u32).then_some(k as usize);
    match kinds.as_slice() {
        [TokenKind::Template(W::The), TokenKind::Template(W::Null), TokenKind::Template(W::At), TokenKind::Slot(k), TokenKind::Template(W::AskObject)] => {
            slot_at(*k).map(|s| vocab.answer_object(scene.objects[s]))
        }
        [TokenKind::Template(W::Null), TokenKind::Template(W::Thing), TokenKind::Template(W::At), TokenKind::Slot(k), TokenKind::Template(W::AskAttribute)] => {
            slot_at(*k).map(|s| vocab.answer_attribute(scene.attributes[s]))
        }
        [TokenKind::ObjectWord(a), TokenKind::Template(W::Null), TokenKind::ObjectWord(b), TokenKind::Template(W::The), TokenKind::Template(W::AskRelation)] =>
        {
            let (sa, sb) = (scene.slot_of(*a)?, scene.slot_of(*b)?);
            if sa == sb {
                return None;
            }
            Some(vocab.answer_relation(if sa < sb { Relation::LeftOf } else { Relation::RightOf }))
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_bytes() {
        let v = Vocab::default();
        let mix = TypeMix([0.4, 0.3, 0.3]);
        let a = serde_json::to_vec(&generate(&v, 42, 300, mix).unwrap()).unwrap();
        let b = serde_json::to_vec(&generate(&v, 42, 300, mix).unwrap()).unwrap();
        assert_eq!(a, b);
        let c = serde_json::to_vec(&generate(&v, 43, 300, mix).unwrap()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn object_premise_is_absent_from_scene() {
        let v = Vocab::default();
        let samples = generate(&v, 1, 500, TypeMix([0.5, 0.25, 0.25])).unwrap();
        for s in samples.iter().filter(|s| s.conflict_type == ConflictType::Object) {
            let TokenKind::ObjectWord(o) = v.decode(s.premise).unwrap() else { panic!("premise kind") };
            assert!(!s.scene.objects.contains(&o));
        }
    }

    #[test]
    fn object_only_mix() {
        let samples = generate(&Vocab::default(), 9, 100, TypeMix::OBJECT_ONLY).unwrap();
        assert_eq!(samples.len(), 100);
        assert!(samples.iter().all(|s| s.conflict_type == ConflictType::Object));
    }

    #[test]
    fn every_sample_is_well_posed() {
        let v = Vocab::default();
        for s in generate(&v, 3, 2000, TypeMix([0.34, 0.33, 0.33])).unwrap() {
            s.check(&v).unwrap();
            assert_eq!(interpret(&v, &s.scene, &s.clean_query), Some(s.y_f), "sample {}", s.id);
            assert_eq!(s.clean_query.len(), s.conflict_query.len());
            let diff = s.clean_query.iter().zip(&s.conflict_query).filter(|(a, b)| a != b).count();
            assert_eq!(diff, 1);
            // conflict queries are not clean templates
            assert_eq!(interpret(&v, &s.scene, &s.conflict_query), None);
        }
    }

    #[test]
    fn too_small_vocab_is_generation_error() {
        let v = Vocab { n_objects: 4, n_attributes: 3, n_slots: 4 };
        assert!(matches!(generate(&v, 0, 10, TypeMix::OBJECT_ONLY), Err(Error::Generation(_))));
        // attribute/relation conflicts do not need spare objects
        assert!(generate(&v, 0, 10, TypeMix([0.0, 0.5, 0.5])).is_ok());
    }

    #[test]
    fn bad_mix_rejected() {
        assert!("0.5,0.5".parse::<TypeMix>().is_err());
        assert!("0.5,0.6,0.1".parse::<TypeMix>().is_err());
        assert_eq!("1,0,0".parse::<TypeMix>().unwrap(), TypeMix::OBJECT_ONLY);
        assert!(generate(&Vocab::default(), 0, 0, TypeMix::OBJECT_ONLY).is_err());
    }
}

impl ConflictSample {
    pub fn clean_input(
        &self,
        vocab: &Vocab,
        config: &crate::model::ModelConfig,
    ) -> Result<crate::model::TokenSequence> {
        crate::model::embed_multimodal(config, &self.scene.visual_tokens(vocab), &self.clean_query)
    }

    pub fn conflict_input(
        &self,
        vocab: &Vocab,
        config: &crate::model::ModelConfig,
    ) -> Result<crate::model::TokenSequence> {
        crate::model::embed_multimodal(config, &self.scene.visual_tokens(vocab), &self.conflict_query)
    }
}
