//! Shared CSV conventions.
//!
//! All CSV output uses '.' as decimal separator, LF line endings, UTF-8,
//! and a deterministic 17-significant-digit decimal float format so that
//! identical runs produce bit-identical files.

/// Marker written for undefined estimates (empty conditioning events).
pub const NA: &str = "NA";

/// Deterministic 17-significant-digit formatting; round-trips any `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Formats an optional value, mapping `None` to [`NA`].
pub fn fmt_opt(x: Option<f64>) -> String {
    match x {
        Some(v) => fmt_f64(v),
        None => NA.to_string(),
    }
}
