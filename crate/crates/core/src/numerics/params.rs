use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use rand::Rng;

use super::Array;
use crate::error::{Error, Result};

/// Index of a parameter inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Array,
    pub trainable: bool,
}

/// Named collection of model parameters.
///
/// Insertion order is preserved and is the order used for checkpoints and
/// hashing, so two sets built by the same code compare and hash identically.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<Param>,
    index: BTreeMap<String, ParamId>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter `{name}`")));
        }
        let id = ParamId(self.entries.len());
        self.index.insert(name.clone(), id);
        self.entries.push(Param {
            name,
            value,
            trainable: true,
        });
        Ok(id)
    }

    /// Inserts a parameter drawn uniformly from `[-scale, scale]`.
    pub fn insert_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        scale: f64,
        rng: &mut R,
    ) -> Result<ParamId> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-scale..=scale)).collect();
        self.insert(name, Array::from_parts(shape.to_vec(), data))
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Array {
        &self.entries[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|id| &self.entries[id.0])
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.entries.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sets the trainable flag of every entry to `pred(name)`.
    pub fn set_trainable_where(&mut self, pred: impl Fn(&str) -> bool) {
        for p in &mut self.entries {
            p.trainable = pred(&p.name);
        }
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.iter()
            .filter(|(_, p)| p.trainable)
            .map(|(id, _)| id)
            .collect()
    }

    /// Copies values from `src` into `dst` (same shape required).
    pub fn copy_value(&mut self, src: &str, dst: &str) -> Result<()> {
        let v = self.value(self.id(src)?).clone();
        let did = self.id(dst)?;
        if self.value(did).shape() != v.shape() {
            return Err(Error::shape(
                "copy_value",
                format!("{src} {:?} -> {dst} {:?}", v.shape(), self.value(did).shape()),
            ));
        }
        self.get_mut(did).value = v;
        Ok(())
    }

    /// Order-sensitive hash over names, shapes and exact bit patterns of the
    /// entries selected by `pred`.
    pub fn hash_where(&self, pred: impl Fn(&str) -> bool) -> u64 {
        let mut h = DefaultHasher::new();
        for p in self.entries.iter().filter(|p| pred(&p.name)) {
            p.name.hash(&mut h);
            p.value.shape().hash(&mut h);
            for v in p.value.data() {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut ps = ParamSet::new();
        ps.insert("a", Array::scalar(1.0)).unwrap();
        assert!(ps.insert("a", Array::scalar(2.0)).is_err());
    }

    #[test]
    fn hash_sees_single_bit_changes() {
        let mut ps = ParamSet::new();
        let id = ps.insert("a", Array::row(vec![1.0, 2.0])).unwrap();
        ps.insert("b", Array::scalar(0.0)).unwrap();
        let before = ps.hash_where(|n| n == "a");
        let other = ps.hash_where(|n| n == "b");
        ps.get_mut(id).value.data_mut()[1] = f64::from_bits(2.0f64.to_bits() + 1);
        assert_ne!(before, ps.hash_where(|n| n == "a"));
        assert_eq!(other, ps.hash_where(|n| n == "b"));
    }
}
