//! Column lookup and coercion over Arrow record batches.

use std::path::Path;

use arrow_array::cast::AsArray;
use arrow_array::types::{Float64Type, Int64Type};
use arrow_array::{Array, ArrayRef, RecordBatch};
use arrow_cast::cast::{cast_with_options, CastOptions};
use arrow_schema::{DataType, TimeUnit as ArrowUnit};

use super::IngestError;
use crate::time::{parse_instant_micros, TimeUnit};

/// Finds the first column whose name matches one of `aliases`, ignoring ASCII case.
pub(super) fn find<'a>(batch: &'a RecordBatch, aliases: &[&str]) -> Option<(&'a str, &'a ArrayRef)> {
    let schema = batch.schema_ref();
    for alias in aliases {
        for (i, field) in schema.fields().iter().enumerate() {
            if field.name().eq_ignore_ascii_case(alias) {
                return Some((field.name().as_str(), batch.column(i)));
            }
        }
    }
    None
}

pub(super) fn require<'a>(
    path: &Path,
    batch: &'a RecordBatch,
    aliases: &[&str],
) -> Result<(&'a str, &'a ArrayRef), IngestError> {
    find(batch, aliases).ok_or_else(|| IngestError::SchemaMismatch {
        path: path.to_path_buf(),
        column: aliases[0].to_string(),
    })
}

fn strict() -> CastOptions<'static> {
    CastOptions {
        safe: false,
        ..Default::default()
    }
}

fn type_error(path: &Path, column: &str, detail: impl ToString) -> IngestError {
    IngestError::TypeMismatch {
        path: path.to_path_buf(),
        column: column.to_string(),
        detail: detail.to_string(),
    }
}

pub(super) fn strings(path: &Path, column: &str, array: &ArrayRef) -> Result<Vec<Option<String>>, IngestError> {
    if matches!(
        array.data_type(),
        DataType::Binary | DataType::LargeBinary | DataType::List(_) | DataType::Struct(_)
    ) {
        return Err(type_error(
            path,
            column,
            format!("expected text, found {}", array.data_type()),
        ));
    }
    let cast = cast_with_options(array, &DataType::Utf8, &strict()).map_err(|e| type_error(path, column, e))?;
    let text = cast.as_string::<i32>();
    Ok((0..text.len())
        .map(|i| text.is_valid(i).then(|| text.value(i).to_string()))
        .collect())
}

pub(super) fn integers(path: &Path, column: &str, array: &ArrayRef) -> Result<Vec<Option<i64>>, IngestError> {
    if matches!(
        array.data_type(),
        DataType::Utf8 | DataType::LargeUtf8 | DataType::Utf8View | DataType::Boolean
    ) {
        return Err(type_error(
            path,
            column,
            format!("expected an integer, found {}", array.data_type()),
        ));
    }
    let cast = cast_with_options(array, &DataType::Int64, &strict()).map_err(|e| type_error(path, column, e))?;
    let ints = cast.as_primitive::<Int64Type>();
    Ok((0..ints.len())
        .map(|i| ints.is_valid(i).then(|| ints.value(i)))
        .collect())
}

pub(super) fn floats(path: &Path, column: &str, array: &ArrayRef) -> Result<Vec<Option<f64>>, IngestError> {
    if !array.data_type().is_numeric() {
        return Err(type_error(
            path,
            column,
            format!("expected a number, found {}", array.data_type()),
        ));
    }
    let cast = cast_with_options(array, &DataType::Float64, &strict()).map_err(|e| type_error(path, column, e))?;
    let vals = cast.as_primitive::<Float64Type>();
    Ok((0..vals.len())
        .map(|i| vals.is_valid(i).then(|| vals.value(i)))
        .collect())
}

/// Timestamp values plus the unit, when the column type or text format fixes it.
pub(super) struct Timestamps {
    pub values: Vec<Option<i64>>,
    pub unit: Option<TimeUnit>,
}

pub(super) fn timestamps(path: &Path, column: &str, array: &ArrayRef) -> Result<Timestamps, IngestError> {
    match array.data_type() {
        DataType::Timestamp(unit, _) => {
            let (scale_down, unit) = match unit {
                ArrowUnit::Second => (1, TimeUnit::Seconds),
                ArrowUnit::Millisecond => (1, TimeUnit::Milliseconds),
                ArrowUnit::Microsecond => (1, TimeUnit::Microseconds),
                ArrowUnit::Nanosecond => (1_000, TimeUnit::Microseconds),
            };
            let cast =
                cast_with_options(array, &DataType::Int64, &strict()).map_err(|e| type_error(path, column, e))?;
            let ints = cast.as_primitive::<Int64Type>();
            let values = (0..ints.len())
                .map(|i| ints.is_valid(i).then(|| ints.value(i).div_euclid(scale_down)))
                .collect();
            Ok(Timestamps {
                values,
                unit: Some(unit),
            })
        }
        DataType::Utf8 | DataType::LargeUtf8 | DataType::Utf8View => {
            let text = strings(path, column, array)?;
            let all_integers = text.iter().flatten().all(|t| t.trim().parse::<i64>().is_ok());
            if all_integers {
                let values = text
                    .iter()
                    .map(|t| t.as_ref().and_then(|t| t.trim().parse().ok()))
                    .collect();
                return Ok(Timestamps { values, unit: None });
            }
            let values = text
                .iter()
                .map(|t| match t {
                    None => Ok(None),
                    Some(t) => parse_instant_micros(t)
                        .map(Some)
                        .map_err(|e| type_error(path, column, e)),
                })
                .collect::<Result<_, _>>()?;
            Ok(Timestamps {
                values,
                unit: Some(TimeUnit::Microseconds),
            })
        }
        _ => Ok(Timestamps {
            values: integers(path, column, array)?,
            unit: None,
        }),
    }
}
