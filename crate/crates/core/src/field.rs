//! Schema fields, their values, and the composite `(value, id)` sort key.
//!
//! Every ordering in the crate is by `(field value, id)`, which makes sorts
//! total and lets keyset seeks walk through runs of duplicate values. Text
//! compares by ASCII ordinal, timestamps numerically, and `false < true`.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::row::Row;

/// One of the five columns of the test table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Field {
    Id,
    Text,
    Int,
    Bool,
    Date,
}

impl Field {
    pub const ALL: [Field; 5] = [Field::Id, Field::Text, Field::Int, Field::Bool, Field::Date];

    pub fn name(self) -> &'static str {
        match self {
            Field::Id => "ID",
            Field::Text => "TextField",
            Field::Int => "IntField",
            Field::Bool => "BoolField",
            Field::Date => "DateField",
        }
    }

    /// Stable one-byte code used on the wire.
    pub fn code(self) -> u8 {
        match self {
            Field::Id => 0,
            Field::Text => 1,
            Field::Int => 2,
            Field::Bool => 3,
            Field::Date => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Field> {
        Field::ALL.get(code as usize).copied()
    }

    /// Upper bound on the encoded size of a value of this field.
    pub fn max_value_width(self) -> usize {
        match self {
            Field::Id | Field::Int => 4,
            Field::Text => 2 + crate::row::MAX_TEXT_LEN,
            Field::Bool => 1,
            Field::Date => 8,
        }
    }

    pub fn value(self, row: &Row) -> FieldValue {
        match self {
            Field::Id => FieldValue::Int(row.id),
            Field::Text => FieldValue::Text(row.text_field.clone()),
            Field::Int => FieldValue::Int(row.int_field),
            Field::Bool => FieldValue::Bool(row.bool_field),
            Field::Date => FieldValue::Date(row.date_field),
        }
    }

    pub fn key(self, row: &Row) -> SortKey {
        SortKey {
            value: self.value(row),
            id: row.id,
        }
    }

    /// Compares two rows by `(self, id)` without materializing keys.
    pub fn compare(self, a: &Row, b: &Row) -> Ordering {
        let by_value = match self {
            Field::Id => return a.id.cmp(&b.id),
            Field::Text => a.text_field.as_bytes().cmp(b.text_field.as_bytes()),
            Field::Int => a.int_field.cmp(&b.int_field),
            Field::Bool => a.bool_field.cmp(&b.bool_field),
            Field::Date => a.date_field.cmp(&b.date_field),
        };
        by_value.then(a.id.cmp(&b.id))
    }

    /// Compares a row's `(self, id)` key with `key`.
    pub fn compare_to_key(self, row: &Row, key: &SortKey) -> Ordering {
        let by_value = match (self, &key.value) {
            (Field::Id, FieldValue::Int(v)) => row.id.cmp(v),
            (Field::Text, FieldValue::Text(v)) => row.text_field.as_bytes().cmp(v.as_bytes()),
            (Field::Int, FieldValue::Int(v)) => row.int_field.cmp(v),
            (Field::Bool, FieldValue::Bool(v)) => row.bool_field.cmp(v),
            (Field::Date, FieldValue::Date(v)) => row.date_field.cmp(v),
            // Keys are always produced by the same field they are compared against.
            _ => return self.key(row).cmp(key),
        };
        by_value.then(row.id.cmp(&key.id))
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Field {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        let field = match lower.as_str() {
            "id" => Field::Id,
            "textfield" | "text" | "text_field" => Field::Text,
            "intfield" | "int" | "int_field" => Field::Int,
            "boolfield" | "bool" | "bool_field" => Field::Bool,
            "datefield" | "date" | "date_field" => Field::Date,
            _ => return Err(Error::UnknownField(s.to_string())),
        };
        Ok(field)
    }
}

impl TryFrom<String> for Field {
    type Error = Error;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Field> for String {
    fn from(f: Field) -> String {
        f.name().to_string()
    }
}

/// The value of one field. A given field always yields the same variant.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FieldValue {
    Int(i32),
    Text(String),
    Bool(bool),
    Date(i64),
}

/// Composite ordering key `(value, id)`; unique per row.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SortKey {
    pub value: FieldValue,
    pub id: i32,
}

/// Lower bound of a keyset seek: either before every key or strictly after one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SeekBound {
    Start,
    After(SortKey),
}

impl SeekBound {
    /// True if `row` lies strictly after the bound in `field` order.
    pub fn admits(&self, field: Field, row: &Row) -> bool {
        match self {
            SeekBound::Start => true,
            SeekBound::After(key) => field.compare_to_key(row, key) == Ordering::Greater,
        }
    }

    pub fn admits_key(&self, key: &SortKey) -> bool {
        match self {
            SeekBound::Start => true,
            SeekBound::After(bound) => key > bound,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: i32, text: &str, int: i32) -> Row {
        Row {
            id,
            text_field: text.to_string(),
            int_field: int,
            bool_field: id % 2 == 0,
            date_field: 1_000_000_000 + id as i64,
        }
    }

    #[test]
    fn parses_schema_names_and_aliases() {
        assert_eq!("ID".parse::<Field>().unwrap(), Field::Id);
        assert_eq!("IntField".parse::<Field>().unwrap(), Field::Int);
        assert_eq!("textfield".parse::<Field>().unwrap(), Field::Text);
        assert_eq!("date".parse::<Field>().unwrap(), Field::Date);
        assert!(matches!(
            "Color".parse::<Field>(),
            Err(Error::UnknownField(_))
        ));
    }

    #[test]
    fn codes_round_trip() {
        for f in Field::ALL {
            assert_eq!(Field::from_code(f.code()), Some(f));
        }
        assert_eq!(Field::from_code(5), None);
    }

    #[test]
    fn ties_break_on_id() {
        let a = row(1, "b", 7);
        let b = row(2, "a", 7);
        assert_eq!(Field::Int.compare(&a, &b), Ordering::Less);
        assert_eq!(Field::Text.compare(&a, &b), Ordering::Greater);
        assert_eq!(Field::Bool.compare(&a, &b), Ordering::Less); // false < true
    }

    #[test]
    fn text_orders_by_ascii_ordinal() {
        // 'Z' (0x5a) sorts before 'a' (0x61).
        let a = row(1, "Zebra", 0);
        let b = row(2, "apple", 0);
        assert_eq!(Field::Text.compare(&a, &b), Ordering::Less);
    }

    #[test]
    fn row_key_comparison_matches_materialized_keys() {
        let rows = [row(3, "x", 5), row(4, "x", 5), row(1, "A9", -1)];
        for f in Field::ALL {
            for a in &rows {
                for b in &rows {
                    assert_eq!(f.compare(a, b), f.key(a).cmp(&f.key(b)));
                    assert_eq!(f.compare_to_key(a, &f.key(b)), f.key(a).cmp(&f.key(b)));
                }
            }
        }
    }

    #[test]
    fn start_bound_admits_everything() {
        let r = row(1, "a", i32::MIN);
        assert!(SeekBound::Start.admits(Field::Int, &r));
        assert!(!SeekBound::After(Field::Int.key(&r)).admits(Field::Int, &r));
    }
}
