use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// One category as it appears in COCO-panoptic `categories` arrays.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    /// External (dataset) id, written to annotation files.
    pub id: u32,
    pub name: String,
    #[serde(with = "int_bool")]
    pub isthing: bool,
}

mod int_bool {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Flag {
            Int(u8),
            Bool(bool),
        }
        Ok(match Flag::deserialize(d)? {
            Flag::Int(v) => v != 0,
            Flag::Bool(b) => b,
        })
    }
}

/// Ordered categories with stuff classes first.
///
/// Every channel computation indexes categories by their position in this
/// set: stuff categories occupy `0..n_stuff` and thing categories
/// `n_stuff..len`, matching the channel layout of semantic logits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategorySet {
    categories: Vec<Category>,
    n_stuff: usize,
}

impl CategorySet {
    /// Builds a set, stably moving stuff categories ahead of thing categories.
    pub fn new(categories: Vec<Category>) -> Result<Self> {
        if categories.is_empty() {
            return Err(invalid("category set is empty"));
        }
        let mut ids: Vec<u32> = categories.iter().map(|c| c.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("duplicate category id"));
        }
        let (stuff, things): (Vec<_>, Vec<_>) = categories.into_iter().partition(|c| !c.isthing);
        let n_stuff = stuff.len();
        let mut categories = stuff;
        categories.extend(things);
        Ok(Self {
            categories,
            n_stuff,
        })
    }

    /// Synthetic set named `stuff{k}` / `thing{k}` with external ids `index + 1`.
    pub fn synthetic(n_stuff: usize, n_thing: usize) -> Result<Self> {
        let cats = (0..n_stuff + n_thing)
            .map(|i| Category {
                id: i as u32 + 1,
                name: if i < n_stuff {
                    format!("stuff{i}")
                } else {
                    format!("thing{}", i - n_stuff)
                },
                isthing: i >= n_stuff,
            })
            .collect();
        Self::new(cats)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Doc {
            List(Vec<Category>),
            Wrapped { categories: Vec<Category> },
        }
        let cats = match serde_json::from_str::<Doc>(text)? {
            Doc::List(c) | Doc::Wrapped { categories: c } => c,
        };
        Self::new(cats)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.categories).expect("categories serialize")
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.categories.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    #[inline]
    pub fn n_stuff(&self) -> usize {
        self.n_stuff
    }

    #[inline]
    pub fn n_thing(&self) -> usize {
        self.categories.len() - self.n_stuff
    }

    #[inline]
    pub fn is_thing(&self, index: usize) -> bool {
        index >= self.n_stuff && index < self.categories.len()
    }

    #[inline]
    pub fn is_stuff(&self, index: usize) -> bool {
        index < self.n_stuff
    }

    pub fn get(&self, index: usize) -> Option<&Category> {
        self.categories.get(index)
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn index_of_id(&self, id: u32) -> Option<usize> {
        self.categories.iter().position(|c| c.id == id)
    }

    /// Thing channel within `X_thing` for a global thing category index.
    pub fn thing_channel(&self, index: usize) -> Result<usize> {
        if self.is_thing(index) {
            Ok(index - self.n_stuff)
        } else {
            Err(invalid(format!(
                "category {index} is not a thing category (things are {}..{})",
                self.n_stuff,
                self.len()
            )))
        }
    }
}
