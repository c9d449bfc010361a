//! Attribute schema: the ordered set of demographic attributes and their
//! categories, plus the bijection between flat cell indices and category
//! tuples.
//!
//! Cell indices are row-major over the attribute order: the first attribute
//! varies slowest, the last varies fastest. For the default schema the cell
//! index of (age a, gender g, race r, ethnicity e) is
//! `((a * 2 + g) * 5 + r) * 2 + e`, giving 80 cells in a fixed order that is
//! stable across runs and serialized files.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// One demographic attribute with its ordered category labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub categories: Vec<String>,
}

/// Ordered list of attributes defining the joint cell space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSchema {
    attributes: Vec<Attribute>,
}

impl AttributeSchema {
    /// Builds a schema from `(name, categories)` pairs. Every attribute needs
    /// at least one category and the product of category counts must be
    /// nonzero.
    pub fn new(attributes: Vec<(String, Vec<String>)>) -> Result<Self> {
        if attributes.is_empty() {
            return Err(CoreError::EmptyInput("schema has no attributes".into()));
        }
        for (name, cats) in &attributes {
            if cats.is_empty() {
                return Err(CoreError::InvalidParameter(format!(
                    "attribute {name} has no categories"
                )));
            }
        }
        Ok(Self {
            attributes: attributes
                .into_iter()
                .map(|(name, categories)| Attribute { name, categories })
                .collect(),
        })
    }

    /// The default schema: age (4), gender (2), race (5), ethnicity (2);
    /// 80 cells total.
    pub fn star_default() -> Self {
        let attrs = [
            ("age", vec!["0-17", "18-44", "45-64", "65+"]),
            ("gender", vec!["Female", "Male"]),
            ("race", vec!["AI/AN", "Asian", "Black", "NH/PI", "White"]),
            ("ethnicity", vec!["H/L", "NH/L"]),
        ];
        Self {
            attributes: attrs
                .into_iter()
                .map(|(name, categories)| Attribute {
                    name: name.to_string(),
                    categories: categories.into_iter().map(str::to_string).collect(),
                })
                .collect(),
        }
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn attribute_count(&self) -> usize {
        self.attributes.len()
    }

    /// Number of categories of attribute `attr`.
    pub fn category_count(&self, attr: usize) -> usize {
        self.attributes[attr].categories.len()
    }

    /// Total number of joint cells (product of category counts).
    pub fn cell_count(&self) -> usize {
        self.attributes
            .iter()
            .map(|a| a.categories.len())
            .product()
    }

    /// Row-major stride of attribute `attr`: the flat-index distance between
    /// consecutive categories of that attribute.
    fn stride(&self, attr: usize) -> usize {
        self.attributes[attr + 1..]
            .iter()
            .map(|a| a.categories.len())
            .product()
    }

    /// Flat cell index of a full category tuple.
    pub fn cell_index(&self, categories: &[usize]) -> Result<usize> {
        if categories.len() != self.attributes.len() {
            return Err(CoreError::DimensionMismatch {
                expected: self.attributes.len(),
                got: categories.len(),
                context: "category tuple".into(),
            });
        }
        let mut idx = 0;
        for (attr, &cat) in categories.iter().enumerate() {
            let n = self.category_count(attr);
            if cat >= n {
                return Err(CoreError::InvalidParameter(format!(
                    "category index {cat} out of range for attribute {}",
                    self.attributes[attr].name
                )));
            }
            idx = idx * n + cat;
        }
        Ok(idx)
    }

    /// Category index of attribute `attr` within flat cell `cell`.
    /// Inverse of `cell_index`, one coordinate at a time.
    #[inline]
    pub fn category_of_cell(&self, attr: usize, cell: usize) -> usize {
        (cell / self.stride(attr)) % self.category_count(attr)
    }

    /// Full category tuple of a flat cell index.
    pub fn cell_categories(&self, cell: usize) -> Vec<usize> {
        (0..self.attributes.len())
            .map(|a| self.category_of_cell(a, cell))
            .collect()
    }

    /// Position of the attribute named `name`, if present.
    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schema_has_80_cells() {
        let s = AttributeSchema::star_default();
        assert_eq!(s.attribute_count(), 4);
        assert_eq!(s.cell_count(), 80);
        assert_eq!(s.category_count(0), 4);
        assert_eq!(s.category_count(2), 5);
    }

    #[test]
    fn cell_index_roundtrip_is_bijective() {
        let s = AttributeSchema::star_default();
        let mut seen = vec![false; s.cell_count()];
        for a in 0..4 {
            for g in 0..2 {
                for r in 0..5 {
                    for e in 0..2 {
                        let idx = s.cell_index(&[a, g, r, e]).unwrap();
                        assert!(!seen[idx]);
                        seen[idx] = true;
                        assert_eq!(s.cell_categories(idx), vec![a, g, r, e]);
                    }
                }
            }
        }
        assert!(seen.iter().all(|&v| v));
    }

    #[test]
    fn row_major_order_last_attribute_fastest() {
        let s = AttributeSchema::star_default();
        assert_eq!(s.cell_index(&[0, 0, 0, 0]).unwrap(), 0);
        assert_eq!(s.cell_index(&[0, 0, 0, 1]).unwrap(), 1);
        assert_eq!(s.cell_index(&[0, 0, 1, 0]).unwrap(), 2);
        assert_eq!(s.cell_index(&[0, 1, 0, 0]).unwrap(), 10);
        assert_eq!(s.cell_index(&[1, 0, 0, 0]).unwrap(), 20);
        assert_eq!(s.cell_index(&[3, 1, 4, 1]).unwrap(), 79);
    }

    #[test]
    fn rejects_bad_tuples() {
        let s = AttributeSchema::star_default();
        assert!(s.cell_index(&[0, 0, 0]).is_err());
        assert!(s.cell_index(&[4, 0, 0, 0]).is_err());
    }
}
