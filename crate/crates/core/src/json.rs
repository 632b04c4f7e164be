//! JSON helpers that report the offending field on schema errors.

use serde::de::DeserializeOwned;

use crate::error::{Error, Result};

pub fn from_str<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        Error::Schema {
            field,
            message: e.into_inner().to_string(),
        }
    })
}
